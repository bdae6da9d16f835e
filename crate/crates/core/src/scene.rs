//! Procedural ground-truth scenes.
//!
//! A scene is a cube `[-0.5, 0.5]^3` voxelised at `N^3` with one or two
//! analytic primitives. Two-object scenes place the objects on opposite
//! sides of the origin at independently drawn radii, then rotate the whole
//! configuration about the vertical axis.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{rng_from_seed, Rng};

/// Radius of the sphere that must contain every occupied voxel.
pub const CONTENT_RADIUS: f64 = 0.45;
pub const MIN_RESOLUTION: usize = 16;
pub const MAX_RESOLUTION: usize = 64;
pub const SCALE_RANGE: (f64, f64) = (0.08, 0.14);
pub const RADIUS_RANGE: (f64, f64) = (0.25, 0.35);
pub const ROTATION_RANGE_DEG: (f64, f64) = (-90.0, 90.0);
const MAX_PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Box,
    Sphere,
    Cylinder,
    Ell,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Box,
        Category::Sphere,
        Category::Cylinder,
        Category::Ell,
    ];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub category: Category,
    /// Half-extent of the primitive in world units.
    pub scale: f64,
    pub color: [f64; 3],
}

// Cylinder radius relative to its half-height.
const CYLINDER_RADIUS_FRACTION: f64 = 0.6;
// The ell is the cube [-s, s]^3 with the (+x, +z) quarter removed; this is
// the centroid of that solid divided by s.
const ELL_CENTROID: [f64; 3] = [-1.0 / 6.0, 0.0, -1.0 / 6.0];

impl ShapeSpec {
    /// Inside test for a point in the shape's local frame (origin at the
    /// centroid, axes aligned with the shape).
    pub fn contains_local(&self, p: [f64; 3]) -> bool {
        let s = self.scale;
        match self.category {
            Category::Box => p.iter().all(|c| c.abs() <= s),
            Category::Sphere => p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= s * s,
            Category::Cylinder => {
                let r = CYLINDER_RADIUS_FRACTION * s;
                p[0] * p[0] + p[1] * p[1] <= r * r && p[2].abs() <= s
            }
            Category::Ell => {
                let q = [
                    p[0] + ELL_CENTROID[0] * s,
                    p[1] + ELL_CENTROID[1] * s,
                    p[2] + ELL_CENTROID[2] * s,
                ];
                q.iter().all(|c| c.abs() <= s) && !(q[0] > 0.0 && q[2] > 0.0)
            }
        }
    }

    /// Largest distance from the origin reached by the shape when its
    /// centroid sits at `center` with yaw `yaw`.
    pub fn max_distance_from_origin(&self, center: [f64; 3], yaw: f64) -> f64 {
        let s = self.scale;
        let extreme = |pts: &[[f64; 3]]| {
            pts.iter()
                .map(|&q| norm(add(center, rotate_z(q, yaw))))
                .fold(0.0, f64::max)
        };
        match self.category {
            Category::Sphere => norm(center) + s,
            Category::Cylinder => {
                let r = CYLINDER_RADIUS_FRACTION * s;
                let horiz = (center[0] * center[0] + center[1] * center[1]).sqrt() + r;
                let vert = center[2].abs() + s;
                (horiz * horiz + vert * vert).sqrt()
            }
            Category::Box => {
                let mut corners = Vec::with_capacity(8);
                for &x in &[-s, s] {
                    for &y in &[-s, s] {
                        for &z in &[-s, s] {
                            corners.push([x, y, z]);
                        }
                    }
                }
                extreme(&corners)
            }
            Category::Ell => {
                let profile = [
                    (-s, -s),
                    (s, -s),
                    (s, 0.0),
                    (0.0, 0.0),
                    (0.0, s),
                    (-s, s),
                ];
                let mut verts = Vec::with_capacity(12);
                for &(x, z) in &profile {
                    for &y in &[-s, s] {
                        verts.push([x - ELL_CENTROID[0] * s, y, z - ELL_CENTROID[2] * s]);
                    }
                }
                extreme(&verts)
            }
        }
    }
}

/// A primitive placed in the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedShape {
    pub spec: ShapeSpec,
    pub center: [f64; 3],
    /// Rotation about world +z, radians.
    pub yaw: f64,
}

impl PlacedShape {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        self.spec.contains_local(rotate_z(d, -self.yaw))
    }

    pub fn max_distance_from_origin(&self) -> f64 {
        self.spec.max_distance_from_origin(self.center, self.yaw)
    }
}

/// Placement record written next to each scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub resolution: usize,
    pub rotation_deg: f64,
    pub radii: Vec<f64>,
    pub objects: Vec<PlacedShape>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelScene {
    n: usize,
    /// Instance id per voxel, x fastest. 0 is empty space.
    instance: Vec<u8>,
    categories: Vec<Category>,
    colors: Vec<[f32; 3]>,
}

impl VoxelScene {
    /// Assemble a scene from raw parts, checking the id invariants.
    pub fn from_parts(
        n: usize,
        instance: Vec<u8>,
        categories: Vec<Category>,
        colors: Vec<[f32; 3]>,
    ) -> Result<Self> {
        if instance.len() != n * n * n {
            return Err(Error::ShapeMismatch(format!(
                "{} instance ids for resolution {n}",
                instance.len()
            )));
        }
        if categories.len() != colors.len() {
            return Err(invalid("categories and colors differ in length"));
        }
        let k = categories.len();
        let mut seen = vec![false; k];
        for &id in &instance {
            if id as usize > k {
                return Err(invalid(format!("instance id {id} exceeds object count {k}")));
            }
            if id > 0 {
                seen[id as usize - 1] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(invalid(format!("instance {} has no voxels", missing + 1)));
        }
        Ok(Self {
            n,
            instance,
            categories,
            colors,
        })
    }

    /// Rasterize placed shapes by testing every voxel center. Later shapes
    /// win where they overlap.
    pub fn rasterize(n: usize, objects: &[PlacedShape]) -> Result<Self> {
        let mut instance = vec![0u8; n * n * n];
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let p = voxel_center(i, j, k, n)?;
                    for (idx, obj) in objects.iter().enumerate() {
                        if obj.contains(p) {
                            instance[i + n * (j + n * k)] = idx as u8 + 1;
                        }
                    }
                }
            }
        }
        Self::from_parts(
            n,
            instance,
            objects.iter().map(|o| o.spec.category).collect(),
            objects
                .iter()
                .map(|o| o.spec.color.map(|c| c as f32))
                .collect(),
        )
    }

    /// A scene with no objects.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            instance: vec![0; n * n * n],
            categories: Vec::new(),
            colors: Vec::new(),
        }
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn num_objects(&self) -> usize {
        self.categories.len()
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn colors(&self) -> &[[f32; 3]] {
        &self.colors
    }

    pub fn instance_ids(&self) -> &[u8] {
        &self.instance
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn instance_at(&self, i: usize, j: usize, k: usize) -> u8 {
        self.instance[self.index(i, j, k)]
    }

    #[inline]
    pub fn occupied(&self, i: usize, j: usize, k: usize) -> bool {
        self.instance_at(i, j, k) > 0
    }

    pub fn occupancy(&self) -> Vec<bool> {
        self.instance.iter().map(|&id| id > 0).collect()
    }

    pub fn voxel_count(&self, id: u8) -> usize {
        self.instance.iter().filter(|&&v| v == id).count()
    }

    /// Copy of the scene keeping only instance `id` (renumbered to 1).
    pub fn isolate(&self, id: u8) -> Result<Self> {
        if id == 0 || id as usize > self.num_objects() {
            return Err(invalid(format!("no instance {id}")));
        }
        let instance = self
            .instance
            .iter()
            .map(|&v| if v == id { 1 } else { 0 })
            .collect();
        Self::from_parts(
            self.n,
            instance,
            vec![self.categories[id as usize - 1]],
            vec![self.colors[id as usize - 1]],
        )
    }

    /// Voxel centroid of instance `id` in world coordinates.
    pub fn centroid(&self, id: u8) -> Option<[f64; 3]> {
        let n = self.n;
        let mut acc = [0.0; 3];
        let mut count = 0usize;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    if self.instance_at(i, j, k) == id {
                        let c = voxel_center(i, j, k, n).ok()?;
                        acc = add(acc, c);
                        count += 1;
                    }
                }
            }
        }
        (count > 0).then(|| acc.map(|v| v / count as f64))
    }

    /// Write the binary `VXG1` representation.
    pub fn write_vxg<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"VXG1")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.num_objects() as u32).to_le_bytes())?;
        w.write_all(&self.instance)?;
        for (cat, color) in self.categories.iter().zip(&self.colors) {
            w.write_all(&[cat.index() as u8])?;
            for c in color {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_vxg<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[0..4] != b"VXG1" {
            return Err(Error::Format("bad VXG1 magic".into()));
        }
        let word = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        if word(4) != 1 {
            return Err(Error::Format(format!("unsupported VXG1 version {}", word(4))));
        }
        let n = word(8) as usize;
        let k = word(12) as usize;
        if n == 0 || n > 1024 || k > 255 {
            return Err(Error::Format(format!("implausible VXG1 header n={n} k={k}")));
        }
        let mut instance = vec![0u8; n * n * n];
        r.read_exact(&mut instance)?;
        let mut categories = Vec::with_capacity(k);
        let mut colors = Vec::with_capacity(k);
        for _ in 0..k {
            let mut rec = [0u8; 13];
            r.read_exact(&mut rec)?;
            categories.push(
                Category::from_index(rec[0] as usize)
                    .ok_or_else(|| Error::Format(format!("unknown category {}", rec[0])))?,
            );
            let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
            colors.push([f(1), f(5), f(9)]);
        }
        Self::from_parts(n, instance, categories, colors).map_err(|e| Error::Format(e.to_string()))
    }
}

/// World-space center of voxel `(i, j, k)` in an `n^3` grid over the unit cube.
pub fn voxel_center(i: usize, j: usize, k: usize, n: usize) -> Result<[f64; 3]> {
    if i >= n || j >= n || k >= n {
        return Err(invalid(format!("voxel ({i},{j},{k}) outside {n}^3 grid")));
    }
    let c = |x: usize| (x as f64 + 0.5) / n as f64 - 0.5;
    Ok([c(i), c(j), c(k)])
}

fn voxel_half_diagonal(n: usize) -> f64 {
    0.5 * 3f64.sqrt() / n as f64
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Draw `num_objects` shapes and place them. Categories are drawn once so
/// that rejection sampling cannot bias the category mix; only radius and
/// scale are redrawn when an object would leave the content sphere.
fn sample_layout(rng: &mut Rng, num_objects: usize, n: usize) -> Result<(f64, Vec<f64>, Vec<PlacedShape>)> {
    let rotation_deg = rng.random_range(ROTATION_RANGE_DEG.0..=ROTATION_RANGE_DEG.1);
    let yaw = rotation_deg.to_radians();
    let base_hue: f64 = rng.random();
    let limit = CONTENT_RADIUS - voxel_half_diagonal(n);

    let mut objects = Vec::with_capacity(num_objects);
    let mut radii = Vec::with_capacity(num_objects);
    for slot in 0..num_objects {
        let category = Category::ALL[rng.random_range(0..Category::COUNT)];
        let hue = if slot == 0 {
            base_hue
        } else {
            base_hue + rng.random_range(0.33..0.67)
        };
        let color = hsv_to_rgb(hue, 0.75, 0.9);
        // Slot 0 sits on the +x side of the unrotated layout, slot 1 on -x.
        let side = if slot == 0 { 1.0 } else { -1.0 };
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let scale = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
            let radius = if num_objects == 1 {
                0.0
            } else {
                rng.random_range(RADIUS_RANGE.0..=RADIUS_RANGE.1)
            };
            let center = rotate_z([side * radius, 0.0, 0.0], yaw);
            let shape = PlacedShape {
                spec: ShapeSpec {
                    category,
                    scale,
                    color,
                },
                center,
                yaw,
            };
            if shape.max_distance_from_origin() <= limit {
                placed = Some((radius, shape));
                break;
            }
        }
        let (radius, shape) = placed.ok_or(Error::PlacementFailed {
            attempts: MAX_PLACEMENT_ATTEMPTS,
        })?;
        radii.push(radius);
        objects.push(shape);
    }
    Ok((rotation_deg, radii, objects))
}

/// Generate a deterministic scene with one or two objects at resolution `n`.
pub fn generate_scene(seed: u64, num_objects: usize, n: usize) -> Result<(VoxelScene, SceneMeta)> {
    if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&n) {
        return Err(invalid(format!(
            "resolution {n} outside [{MIN_RESOLUTION}, {MAX_RESOLUTION}]"
        )));
    }
    if !(1..=2).contains(&num_objects) {
        return Err(invalid(format!("num_objects must be 1 or 2, got {num_objects}")));
    }
    let mut rng = rng_from_seed(seed);
    let (rotation_deg, radii, objects) = sample_layout(&mut rng, num_objects, n)?;
    let scene = VoxelScene::rasterize(n, &objects)?;
    Ok((
        scene,
        SceneMeta {
            seed,
            resolution: n,
            rotation_deg,
            radii,
            objects,
        },
    ))
}

#[inline]
pub(crate) fn rotate_z(p: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

#[inline]
fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Angle in degrees between two vectors.
pub fn angle_between_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    (dot / (norm(a) * norm(b))).clamp(-1.0, 1.0).acos() * 180.0 / PI
}
