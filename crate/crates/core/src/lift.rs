//! Lifting rendered views into 3D feature volumes.
//!
//! A feature volume is a cube of side 1 (world units) discretised at `N^3`
//! and attached to a camera pose: its axes are the camera axes and its
//! center lies on the optical axis at the rig radius. For rig poses the
//! center is the world origin, so volumes of different views differ only
//! by a rotation.
//!
//! Channel layout of unprojected volumes:
//! `R, G, B, depth, mask, surface, grid-depth`.

use nalgebra::Vector3;

use crate::camera::{CameraModel, Pose};
use crate::error::{Error, Result};
use crate::render::RenderedView;

pub const NUM_FEATURE_CHANNELS: usize = 7;
pub const CH_RGB: usize = 0;
pub const CH_DEPTH: usize = 3;
pub const CH_MASK: usize = 4;
pub const CH_SURFACE: usize = 5;
pub const CH_GRID_DEPTH: usize = 6;
pub const CHANNEL_NAMES: [&str; NUM_FEATURE_CHANNELS] =
    ["r", "g", "b", "depth", "mask", "surface", "grid_depth"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// Attached to the camera that produced the view.
    Camera,
    /// Attached to the reference (first) view of an episode.
    Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub channels: usize,
    pub n: usize,
    /// Channel-major, x fastest.
    pub data: Vec<f64>,
    pub frame: Frame,
}

impl FeatureVolume {
    pub fn zeros(channels: usize, n: usize, frame: Frame) -> Self {
        Self {
            channels,
            n,
            data: vec![0.0; channels * n * n * n],
            frame,
        }
    }

    #[inline]
    pub fn voxels(&self) -> usize {
        self.n * self.n * self.n
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize, k: usize) -> usize {
        c * self.voxels() + i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(c, i, j, k)]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let v = self.voxels();
        &self.data[c * v..(c + 1) * v]
    }

    /// Average-pool by 2 along each axis.
    pub fn avg_pool2(&self) -> Result<FeatureVolume> {
        if self.n % 2 != 0 {
            return Err(Error::ShapeMismatch(format!("cannot pool odd resolution {}", self.n)));
        }
        let m = self.n / 2;
        let mut out = FeatureVolume::zeros(self.channels, m, self.frame);
        for c in 0..self.channels {
            for k in 0..m {
                for j in 0..m {
                    for i in 0..m {
                        let mut acc = 0.0;
                        for dk in 0..2 {
                            for dj in 0..2 {
                                for di in 0..2 {
                                    acc += self.get(c, 2 * i + di, 2 * j + dj, 2 * k + dk);
                                }
                            }
                        }
                        let idx = out.index(c, i, j, k);
                        out.data[idx] = acc / 8.0;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Grid coordinate (cube frame) of voxel index `i`.
#[inline]
fn grid_coord(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64 - 0.5
}

/// Camera-frame offset of the volume center for a grid attached to a pose.
#[inline]
fn grid_offset(cam: &CameraModel) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, cam.radius)
}

/// Map metric camera depth to the normalised depth channels; the attached
/// cube spans [0, 1].
#[inline]
pub fn normalize_depth(z: f64, cam: &CameraModel) -> f64 {
    z - cam.radius + 0.5
}

/// Where a voxel of a grid attached to `target` lands in `pose`'s image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSite {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Bilinear sample of the view at continuous pixel position `(x, y)`.
/// Pixels outside the image contribute zero.
#[derive(Debug, Clone, Copy, Default)]
struct PixelSample {
    rgb: [f64; 3],
    /// Σ w·m·normalised_depth
    depth_channel: f64,
    /// Σ w·m·metric_depth
    depth_weighted: f64,
    mask: f64,
    any_support: bool,
}

fn bilinear(view: &RenderedView, x: f64, y: f64, cam: &CameraModel) -> PixelSample {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let u0 = fx.floor();
    let v0 = fy.floor();
    let (ax, ay) = (fx - u0, fy - v0);
    let size = view.size as i64;
    let mut s = PixelSample::default();
    for (du, wu) in [(0i64, 1.0 - ax), (1, ax)] {
        for (dv, wv) in [(0i64, 1.0 - ay), (1, ay)] {
            let (u, v) = (u0 as i64 + du, v0 as i64 + dv);
            if u < 0 || v < 0 || u >= size || v >= size {
                continue;
            }
            s.any_support = true;
            let w = wu * wv;
            if w == 0.0 {
                continue;
            }
            let p = view.pixel(u as usize, v as usize);
            if view.mask[p] {
                let c = view.rgb[p];
                for ch in 0..3 {
                    s.rgb[ch] += w * c[ch] as f64;
                }
                s.mask += w;
                s.depth_channel += w * normalize_depth(view.depth[p], cam);
                s.depth_weighted += w * view.depth[p];
            }
        }
    }
    s
}

/// Projection of voxel `(i, j, k)` of an `n^3` grid attached to `target`
/// into the camera `pose`. `None` if the center is behind the camera.
pub fn sample_site(i: usize, j: usize, k: usize, n: usize, pose: &Pose, cam: &CameraModel, target: &Pose) -> Option<SampleSite> {
    let q = Vector3::new(grid_coord(i, n), grid_coord(j, n), grid_coord(k, n));
    let world = target.inverse().transform_point(&(q + grid_offset(cam)));
    let p = pose.transform_point(&world);
    let (x, y) = cam.project(&p)?;
    Some(SampleSite { x, y, z: p.z })
}

/// Shell tolerance: one voxel edge.
pub fn shell_tolerance(n: usize) -> f64 {
    1.0 / n as f64
}

/// Surface test shared by unprojection and its oracles: the voxel at
/// camera depth `z` is on the visible shell when the foreground-weighted
/// depth `d` is within `tau` and the sampled mask is at least 0.5.
#[inline]
pub fn on_surface(z: f64, d: f64, mask: f64, tau: f64) -> bool {
    mask >= 0.5 && (z - d).abs() <= tau
}

/// Lift `view` (taken from `pose`) into an `n^3` volume attached to
/// `target_frame`.
pub fn unproject(view: &RenderedView, pose: &Pose, cam: &CameraModel, n: usize, target_frame: &Pose) -> FeatureVolume {
    let frame = if target_frame == pose {
        Frame::Camera
    } else {
        Frame::Reference
    };
    let mut vol = FeatureVolume::zeros(NUM_FEATURE_CHANNELS, n, frame);
    let tau = shell_tolerance(n);
    let target_inv = target_frame.inverse();
    let offset = grid_offset(cam);
    let to_camera = pose.compose(&target_inv);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let q = Vector3::new(grid_coord(i, n), grid_coord(j, n), grid_coord(k, n));
                let p = to_camera.transform_point(&(q + offset));
                let Some((x, y)) = cam.project(&p) else {
                    continue;
                };
                let s = bilinear(view, x, y, cam);
                if !s.any_support {
                    continue;
                }
                let mut put = |c: usize, v: f64| {
                    let idx = vol.index(c, i, j, k);
                    vol.data[idx] = v;
                };
                for ch in 0..3 {
                    put(CH_RGB + ch, s.rgb[ch]);
                }
                put(CH_DEPTH, s.depth_channel);
                put(CH_MASK, s.mask);
                put(CH_GRID_DEPTH, normalize_depth(p.z, cam));
                if s.mask > 0.0 {
                    let d = s.depth_weighted / s.mask;
                    if on_surface(p.z, d, s.mask, tau) {
                        put(CH_SURFACE, 1.0);
                    }
                }
            }
        }
    }
    vol
}

/// Direct lift into the reference frame with no intermediate resampling.
pub fn unproject_into_reference(view: &RenderedView, pose: &Pose, cam: &CameraModel, n: usize, reference: &Pose) -> FeatureVolume {
    let mut vol = unproject(view, pose, cam, n, reference);
    vol.frame = Frame::Reference;
    vol
}

/// Continuous source-grid index that [`warp_to_reference`] samples for
/// target voxel `(i, j, k)`.
pub fn warp_source(ego: &Pose, cam: &CameraModel, n: usize, i: usize, j: usize, k: usize) -> Vector3<f64> {
    let nf = n as f64;
    let center = (nf - 1.0) / 2.0;
    let rt = ego.rotation.transpose();
    let e = grid_offset(cam);
    let shift = (rt * (e - ego.translation) - e) * nf;
    let d = Vector3::new(i as f64 - center, j as f64 - center, k as f64 - center);
    rt * d + shift + Vector3::repeat(center)
}

/// Resample a camera-frame volume into the reference frame.
///
/// `ego` maps camera coordinates of the volume's view into camera
/// coordinates of the reference view. Every target voxel center is pulled
/// back through `ego⁻¹` and trilinearly interpolated; samples outside the
/// source grid read as zero.
pub fn warp_to_reference(vol: &FeatureVolume, ego: &Pose, cam: &CameraModel) -> Result<FeatureVolume> {
    if !ego.is_rigid() {
        return Err(Error::NonRigid);
    }
    let n = vol.n;
    let nf = n as f64;
    let center = (nf - 1.0) / 2.0;
    // In index space: src = Rᵀ (dst − c) + N·(Rᵀ(e − t) − e) + c
    let rt = ego.rotation.transpose();
    let e = grid_offset(cam);
    let shift = (rt * (e - ego.translation) - e) * nf;
    let mut out = FeatureVolume::zeros(vol.channels, n, Frame::Reference);
    let voxels = vol.voxels();
    let inside = |v: i64| v >= 0 && v < n as i64;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let d = Vector3::new(i as f64 - center, j as f64 - center, k as f64 - center);
                let s = rt * d + shift + Vector3::repeat(center);
                let base = [s.x.floor(), s.y.floor(), s.z.floor()];
                let frac = [s.x - base[0], s.y - base[1], s.z - base[2]];
                let b = base.map(|v| v as i64);
                if b.iter().any(|&v| v < -1 || v >= n as i64) {
                    continue;
                }
                let dst = i + n * (j + n * k);
                for dz in 0..2i64 {
                    let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
                    let z = b[2] + dz;
                    if wz == 0.0 || !inside(z) {
                        continue;
                    }
                    for dy in 0..2i64 {
                        let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
                        let y = b[1] + dy;
                        if wy == 0.0 || !inside(y) {
                            continue;
                        }
                        for dx in 0..2i64 {
                            let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                            let x = b[0] + dx;
                            if wx == 0.0 || !inside(x) {
                                continue;
                            }
                            let w = wx * wy * wz;
                            let src = x as usize + n * (y as usize + n * z as usize);
                            for c in 0..vol.channels {
                                out.data[c * voxels + dst] += w * vol.data[c * voxels + src];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
