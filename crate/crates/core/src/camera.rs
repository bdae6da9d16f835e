//! The discrete viewing sphere.
//!
//! Views sit on a sphere of radius `ρ` at 3 elevations (20°, 40°, 60°) and
//! 18 azimuths (0°, 20°, ..., 340°), all looking at the origin. An agent
//! moves between king-move neighbours of the (elevation, azimuth) lattice;
//! azimuth wraps, elevation does not.
//!
//! Camera coordinates follow the pinhole convention: x right, y down,
//! z along the optical axis.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

pub const NUM_ELEVATIONS: u8 = 3;
pub const NUM_AZIMUTHS: u8 = 18;
pub const NUM_ACTIONS: usize = 8;
pub const ELEVATION_STEP_DEG: f64 = 20.0;
pub const AZIMUTH_STEP_DEG: f64 = 20.0;

/// `(Δelevation, Δazimuth)` for each action, ordered counter-clockwise
/// starting at "azimuth +1".
pub const ACTION_DELTAS: [(i8, i8); NUM_ACTIONS] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewIndex {
    pub elev: u8,
    pub azim: u8,
}

impl ViewIndex {
    pub fn new(elev: u8, azim: u8) -> Result<Self> {
        if elev >= NUM_ELEVATIONS || azim >= NUM_AZIMUTHS {
            return Err(invalid(format!("view ({elev},{azim}) is not on the rig")));
        }
        Ok(Self { elev, azim })
    }

    pub fn elevation_deg(self) -> f64 {
        ELEVATION_STEP_DEG * (self.elev as f64 + 1.0)
    }

    pub fn azimuth_deg(self) -> f64 {
        AZIMUTH_STEP_DEG * self.azim as f64
    }

    /// Every view on the rig, elevation-major.
    pub fn all() -> impl Iterator<Item = ViewIndex> {
        (0..NUM_ELEVATIONS).flat_map(|e| (0..NUM_AZIMUTHS).map(move |a| ViewIndex { elev: e, azim: a }))
    }

    pub fn apply(self, action: usize) -> Option<ViewIndex> {
        let (de, da) = *ACTION_DELTAS.get(action)?;
        let elev = self.elev as i16 + de as i16;
        if !(0..NUM_ELEVATIONS as i16).contains(&elev) {
            return None;
        }
        let azim = (self.azim as i16 + da as i16).rem_euclid(NUM_AZIMUTHS as i16);
        Some(ViewIndex {
            elev: elev as u8,
            azim: azim as u8,
        })
    }

    /// Action that moves from `self` to `other`, if they are adjacent.
    pub fn action_to(self, other: ViewIndex) -> Option<usize> {
        (0..NUM_ACTIONS).find(|&a| self.apply(a) == Some(other))
    }

    pub fn is_adjacent(self, other: ViewIndex) -> bool {
        self.action_to(other).is_some()
    }
}

impl std::fmt::Display for ViewIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.elev, self.azim)
    }
}

impl std::str::FromStr for ViewIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (e, a) = s
            .split_once(',')
            .ok_or_else(|| invalid(format!("view must be `elev,azim`, got `{s}`")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u8>()
                .map_err(|_| invalid(format!("bad view component `{v}`")))
        };
        ViewIndex::new(parse(e)?, parse(a)?)
    }
}

/// The valid neighbours of `view` as `(action, neighbour)` pairs.
pub fn neighbors(view: ViewIndex) -> Vec<(usize, ViewIndex)> {
    (0..NUM_ACTIONS)
        .filter_map(|a| view.apply(a).map(|v| (a, v)))
        .collect()
}

pub fn action_mask(view: ViewIndex) -> [bool; NUM_ACTIONS] {
    let mut mask = [false; NUM_ACTIONS];
    for (a, m) in mask.iter_mut().enumerate() {
        *m = view.apply(a).is_some();
    }
    mask
}

/// Rigid transform `p_cam = rotation * p_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center in world coordinates (for world→camera poses).
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_rigid(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.orthonormality_error() <= 1e-9
            && (self.rotation.determinant() - 1.0).abs() <= 1e-9
    }

    /// Camera at `eye` looking at the origin with the projection of world
    /// +z as "up".
    pub fn look_at_origin(eye: Vector3<f64>) -> Result<Pose> {
        let forward = (-eye)
            .try_normalize(1e-12)
            .ok_or_else(|| invalid("camera placed at the origin"))?;
        let right = forward
            .cross(&Vector3::z())
            .try_normalize(1e-9)
            .ok_or_else(|| invalid("optical axis parallel to world z"))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Ok(Pose {
            rotation,
            translation: -(rotation * eye),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    /// Distance from the origin to every camera on the rig.
    pub radius: f64,
    /// Vertical field of view, degrees.
    pub fov_deg: f64,
    /// Square image side in pixels.
    pub image_size: usize,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            radius: 1.4,
            fov_deg: 60.0,
            image_size: 64,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > crate::scene::CONTENT_RADIUS) {
            return Err(invalid("camera radius must exceed the content radius"));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 170.0) {
            return Err(invalid("fov_deg must be in (0, 170)"));
        }
        if self.image_size < 4 {
            return Err(invalid("image_size must be at least 4"));
        }
        let half = (self.fov_deg / 2.0).to_radians();
        let needed = (crate::scene::CONTENT_RADIUS / (self.radius - crate::scene::CONTENT_RADIUS)).atan();
        if half <= needed {
            return Err(invalid(format!(
                "half field of view {:.2}° does not cover the content sphere (needs > {:.2}°)",
                half.to_degrees(),
                needed.to_degrees()
            )));
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        self.image_size as f64 / 2.0 / (self.fov_deg.to_radians() / 2.0).tan()
    }

    pub fn principal_point(&self) -> f64 {
        self.image_size as f64 / 2.0
    }

    /// Continuous pixel coordinates of a camera-frame point; pixel `(u, v)`
    /// covers `[u, u+1) × [v, v+1)`. `None` for points at or behind the
    /// near plane.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 1e-6 {
            return None;
        }
        let f = self.focal();
        let c = self.principal_point();
        Some((f * p.x / p.z + c, f * p.y / p.z + c))
    }

    /// Camera-frame direction through the center of pixel `(u, v)` scaled
    /// to unit z, so the ray parameter equals camera depth.
    #[inline]
    pub fn pixel_ray(&self, u: usize, v: usize) -> Vector3<f64> {
        let f = self.focal();
        let c = self.principal_point();
        Vector3::new((u as f64 + 0.5 - c) / f, (v as f64 + 0.5 - c) / f, 1.0)
    }

    /// Pose for arbitrary elevation/azimuth angles (degrees) on the sphere.
    pub fn pose_at_angles(&self, elev_deg: f64, azim_deg: f64) -> Pose {
        let (e, a) = (elev_deg.to_radians(), azim_deg.to_radians());
        let eye = self.radius * Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin());
        Pose::look_at_origin(eye).expect("rig elevations are never at a pole")
    }
}

pub fn pose_of(view: ViewIndex, cam: &CameraModel) -> Pose {
    cam.pose_at_angles(view.elevation_deg(), view.azimuth_deg())
}

/// Rigid transform taking camera coordinates of `to` into camera
/// coordinates of `from`.
pub fn relative_egomotion(from: &Pose, to: &Pose) -> Pose {
    from.compose(&to.inverse())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    Off,
    Independent,
    Accumulating,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(NoiseMode::Off),
            "independent" => Ok(NoiseMode::Independent),
            "accumulating" => Ok(NoiseMode::Accumulating),
            other => Err(invalid(format!(
                "unknown noise mode `{other}` (expected off, independent or accumulating)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgomotionNoise {
    pub sigma_deg: f64,
    pub mode: NoiseMode,
}

impl Default for EgomotionNoise {
    fn default() -> Self {
        Self {
            sigma_deg: 5.0,
            mode: NoiseMode::Off,
        }
    }
}

impl EgomotionNoise {
    pub fn off() -> Self {
        Self {
            sigma_deg: 0.0,
            mode: NoiseMode::Off,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_deg.is_finite() && self.sigma_deg >= 0.0) {
            return Err(invalid("noise sigma must be finite and non-negative"));
        }
        Ok(())
    }

    /// True when the noise can never perturb a pose.
    pub fn is_inert(&self) -> bool {
        self.mode == NoiseMode::Off || self.sigma_deg == 0.0
    }
}

/// Per-episode egomotion source. The first view defines the reference
/// frame and is never perturbed; later views get Normal(0, σ²) errors on
/// elevation and azimuth, either fresh per view or summed over the episode.
#[derive(Debug, Clone)]
pub struct EgomotionTracker {
    noise: EgomotionNoise,
    reference: Option<Pose>,
    accumulated: (f64, f64),
}

impl EgomotionTracker {
    pub fn new(noise: EgomotionNoise) -> Self {
        Self {
            noise,
            reference: None,
            accumulated: (0.0, 0.0),
        }
    }

    /// Draw the (elevation, azimuth) perturbation for the next non-reference
    /// view, in degrees.
    pub fn draw_perturbation(&mut self, rng: &mut Rng) -> (f64, f64) {
        if self.noise.is_inert() {
            return (0.0, 0.0);
        }
        let normal = Normal::new(0.0, self.noise.sigma_deg).expect("validated sigma");
        let d = (normal.sample(rng), normal.sample(rng));
        match self.noise.mode {
            NoiseMode::Off => (0.0, 0.0),
            NoiseMode::Independent => d,
            NoiseMode::Accumulating => {
                self.accumulated.0 += d.0;
                self.accumulated.1 += d.1;
                self.accumulated
            }
        }
    }

    /// Egomotion from `view` into the reference (first) view as the agent
    /// believes it to be. The first call fixes the reference.
    pub fn egomotion_to_reference(&mut self, view: ViewIndex, cam: &CameraModel, rng: &mut Rng) -> Pose {
        match self.reference {
            None => {
                self.reference = Some(pose_of(view, cam));
                Pose::identity()
            }
            Some(reference) => {
                let (de, da) = self.draw_perturbation(rng);
                let believed = cam.pose_at_angles(view.elevation_deg() + de, view.azimuth_deg() + da);
                relative_egomotion(&reference, &believed)
            }
        }
    }
}

/// Rotation about world z by `deg` degrees, as a matrix.
pub fn rotation_z_deg(deg: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), deg.to_radians()).matrix()
}
