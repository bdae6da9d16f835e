//! Grid-traversal raycaster.
//!
//! Each pixel's primary ray is clipped to the scene cube and walked voxel
//! by voxel (Amanatides & Woo). The first occupied voxel determines the
//! pixel's depth, instance and flat albedo.

use std::io::Write;

use nalgebra::Vector3;

use crate::camera::{CameraModel, Pose, ViewIndex};
use crate::error::{invalid, Result};
use crate::scene::VoxelScene;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub size: usize,
    /// Row-major `size × size` RGB in [0, 1].
    pub rgb: Vec<[f32; 3]>,
    /// Camera-frame z of the hit point; `+∞` where `mask` is false.
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
    pub instance: Vec<u8>,
    pub view: Option<ViewIndex>,
}

impl RenderedView {
    fn blank(size: usize, view: Option<ViewIndex>) -> Self {
        Self {
            size,
            rgb: vec![[0.0; 3]; size * size],
            depth: vec![f64::INFINITY; size * size],
            mask: vec![false; size * size],
            instance: vec![0; size * size],
            view,
        }
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> usize {
        v * self.size + u
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn instance_pixel_count(&self, id: u8) -> usize {
        self.instance.iter().filter(|&&v| v == id).count()
    }

    /// Binary PPM (P6) of the RGB channels.
    pub fn write_rgb_ppm<W: Write>(&self, mut w: W, comment: &str) -> Result<()> {
        write!(w, "P6\n# {comment}\n{} {}\n255\n", self.size, self.size)?;
        let bytes: Vec<u8> = self
            .rgb
            .iter()
            .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    /// Grayscale PPM of depth (near = bright, background = black).
    pub fn write_depth_ppm<W: Write>(&self, mut w: W, comment: &str, near: f64, far: f64) -> Result<()> {
        write!(w, "P6\n# {comment}\n{} {}\n255\n", self.size, self.size)?;
        let bytes: Vec<u8> = self
            .depth
            .iter()
            .zip(&self.mask)
            .flat_map(|(&d, &m)| {
                let g = if m {
                    (255.0 * (1.0 - ((d - near) / (far - near)).clamp(0.0, 1.0))).round() as u8
                } else {
                    0
                };
                [g, g, g]
            })
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

/// Result of marching one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Ray parameter of the entry point into the hit voxel.
    pub t: f64,
    pub voxel: [usize; 3],
    pub instance: u8,
}

/// Slab intersection of a ray with the axis-aligned box `[lo, hi]`.
/// Returns the parametric interval clipped to `t >= 0`.
pub fn ray_box_interval(origin: &Vector3<f64>, dir: &Vector3<f64>, lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut near, mut far) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Walk the voxels pierced by `origin + t·dir` in increasing `t` and
/// return the first occupied one.
pub fn march(scene: &VoxelScene, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<RayHit> {
    let n = scene.resolution();
    let (t_enter, t_exit) = ray_box_interval(origin, dir, [-0.5; 3], [0.5; 3])?;
    let nf = n as f64;
    let entry = origin + dir * t_enter;

    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let g = ((entry[a] + 0.5) * nf).floor() as i64;
        cell[a] = g.clamp(0, n as i64 - 1);
        if dir[a] > 0.0 {
            step[a] = 1;
            let boundary = (cell[a] + 1) as f64 / nf - 0.5;
            t_max[a] = (boundary - origin[a]) / dir[a];
            t_delta[a] = 1.0 / (nf * dir[a]);
        } else if dir[a] < 0.0 {
            step[a] = -1;
            let boundary = cell[a] as f64 / nf - 0.5;
            t_max[a] = (boundary - origin[a]) / dir[a];
            t_delta[a] = -1.0 / (nf * dir[a]);
        }
    }

    let mut t_cur = t_enter;
    loop {
        let (i, j, k) = (cell[0] as usize, cell[1] as usize, cell[2] as usize);
        let id = scene.instance_at(i, j, k);
        if id > 0 {
            return Some(RayHit {
                t: t_cur,
                voxel: [i, j, k],
                instance: id,
            });
        }
        // advance along the axis whose boundary is nearest
        let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        t_cur = t_max[a];
        if t_cur > t_exit {
            return None;
        }
        cell[a] += step[a];
        if cell[a] < 0 || cell[a] >= n as i64 {
            return None;
        }
        t_max[a] += t_delta[a];
    }
}

pub fn render(scene: &VoxelScene, pose: &Pose, cam: &CameraModel) -> RenderedView {
    render_with_view(scene, pose, cam, None)
}

pub fn render_with_view(scene: &VoxelScene, pose: &Pose, cam: &CameraModel, view: Option<ViewIndex>) -> RenderedView {
    let size = cam.image_size;
    let mut out = RenderedView::blank(size, view);
    if scene.num_objects() == 0 {
        return out;
    }
    let origin = pose.center();
    let cam_to_world = pose.rotation.transpose();
    for v in 0..size {
        for u in 0..size {
            // unit camera z means the ray parameter is camera depth
            let dir = cam_to_world * cam.pixel_ray(u, v);
            if let Some(hit) = march(scene, &origin, &dir) {
                let p = out.pixel(u, v);
                out.depth[p] = hit.t;
                out.mask[p] = true;
                out.instance[p] = hit.instance;
                out.rgb[p] = scene.colors()[hit.instance as usize - 1];
            }
        }
    }
    out
}

/// Fraction of the more-hidden object's unoccluded silhouette that is
/// hidden in the full render.
pub fn occlusion_rate(scene: &VoxelScene, pose: &Pose, cam: &CameraModel) -> Result<f64> {
    if scene.num_objects() != 2 {
        return Err(invalid(format!(
            "occlusion rate needs a 2-object scene, got {} objects",
            scene.num_objects()
        )));
    }
    let full = render(scene, pose, cam);
    let mut worst = 0.0f64;
    for id in 1..=2u8 {
        let alone = render(&scene.isolate(id)?, pose, cam).instance_pixel_count(1);
        if alone == 0 {
            continue;
        }
        let visible = full.instance_pixel_count(id);
        worst = worst.max(1.0 - visible as f64 / alone as f64);
    }
    Ok(worst)
}
