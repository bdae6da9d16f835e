use geomem::lift::*;
use geomem::camera::{CameraModel, Pose};
use geomem::Error;
use geomem::camera::{pose_of, relative_egomotion, ViewIndex};
use geomem::render::render;
use geomem::scene::generate_scene;

fn cam() -> CameraModel {
    CameraModel::default()
}

#[test]
fn identity_warp_is_bit_exact() {
    let (scene, _) = generate_scene(4, 2, 32).unwrap();
    let c = cam();
    let pose = pose_of(ViewIndex::new(1, 4).unwrap(), &c);
    let vol = unproject(&render(&scene, &pose, &c), &pose, &c, 32, &pose);
    let warped = warp_to_reference(&vol, &Pose::identity(), &c).unwrap();
    assert_eq!(vol.data, warped.data);
}

#[test]
fn non_rigid_ego_rejected() {
    let vol = FeatureVolume::zeros(1, 4, Frame::Camera);
    let mut ego = Pose::identity();
    ego.rotation[(0, 0)] = 2.0;
    assert!(matches!(warp_to_reference(&vol, &ego, &cam()), Err(Error::NonRigid)));
}

#[test]
fn background_view_only_has_grid_depth() {
    let scene = geomem::scene::VoxelScene::empty(16);
    let c = cam();
    let pose = pose_of(ViewIndex::new(0, 2).unwrap(), &c);
    let r = render(&scene, &pose, &c);
    let reference = pose_of(ViewIndex::new(0, 3).unwrap(), &c);
    let vol = unproject_into_reference(&r, &pose, &c, 16, &reference);
    for ch in 0..NUM_FEATURE_CHANNELS {
        let nonzero = vol.channel(ch).iter().any(|&v| v != 0.0);
        assert_eq!(nonzero, ch == CH_GRID_DEPTH, "channel {ch}");
    }
}

#[test]
fn same_frame_direct_equals_unproject() {
    let (scene, _) = generate_scene(8, 2, 16).unwrap();
    let c = cam();
    let pose = pose_of(ViewIndex::new(2, 1).unwrap(), &c);
    let r = render(&scene, &pose, &c);
    let a = unproject(&r, &pose, &c, 16, &pose);
    let b = unproject_into_reference(&r, &pose, &c, 16, &pose);
    assert_eq!(a.data, b.data);
}

#[test]
fn own_frame_grid_depth_is_slice_index() {
    let scene = geomem::scene::VoxelScene::empty(16);
    let c = cam();
    let pose = pose_of(ViewIndex::new(1, 0).unwrap(), &c);
    let vol = unproject(&render(&scene, &pose, &c), &pose, &c, 16, &pose);
    let (i, j) = (8, 8);
    for k in 0..16 {
        let v = vol.get(CH_GRID_DEPTH, i, j, k);
        assert!((v - (k as f64 + 0.5) / 16.0).abs() < 1e-12);
    }
}

#[test]
fn pooling_averages() {
    let mut v = FeatureVolume::zeros(1, 2, Frame::Camera);
    v.data = (0..8).map(|x| x as f64).collect();
    let p = v.avg_pool2().unwrap();
    assert_eq!(p.n, 1);
    assert_eq!(p.data, vec![3.5]);
}

#[test]
fn ego_relative_rotation_is_used() {
    let c = cam();
    let a = pose_of(ViewIndex::new(1, 0).unwrap(), &c);
    let b = pose_of(ViewIndex::new(1, 1).unwrap(), &c);
    let ego = relative_egomotion(&a, &b);
    assert!(ego.is_rigid());
}

use geomem::camera::rotation_z_deg;
use nalgebra::Vector3;

/// Bilinear re-sampling of the hit mask, depth and colour at a continuous
/// pixel position, written independently of the library.
fn resample(r: &geomem::render::RenderedView, x: f64, y: f64) -> (f64, f64, [f64; 3]) {
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (u0, v0) = (fx.floor() as i64, fy.floor() as i64);
    let (ax, ay) = (fx - fx.floor(), fy - fy.floor());
    let (mut mask, mut depth, mut rgb) = (0.0, 0.0, [0.0; 3]);
    for (u, wu) in [(u0, 1.0 - ax), (u0 + 1, ax)] {
        for (v, wv) in [(v0, 1.0 - ay), (v0 + 1, ay)] {
            if u < 0 || v < 0 || u >= r.size as i64 || v >= r.size as i64 {
                continue;
            }
            let p = v as usize * r.size + u as usize;
            if r.mask[p] {
                let w = wu * wv;
                mask += w;
                depth += w * r.depth[p];
                for c in 0..3 {
                    rgb[c] += w * f64::from(r.rgb[p][c]);
                }
            }
        }
    }
    (mask, if mask > 0.0 { depth / mask } else { f64::INFINITY }, rgb)
}

#[test]
fn surface_count_matches_brute_force_over_the_depth_image() {
    let (scene, _) = generate_scene(3, 1, 32).unwrap();
    let c = cam();
    let n = 32;
    let pose = pose_of(ViewIndex::new(1, 7).unwrap(), &c);
    let r = render(&scene, &pose, &c);
    let vol = unproject(&r, &pose, &c, n, &pose);
    let tau = 1.0 / n as f64;
    let (mut expected, mut behind) = (0usize, 0usize);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let s = sample_site(i, j, k, n, &pose, &c, &pose).unwrap();
                let (mask, d, rgb) = resample(&r, s.x, s.y);
                let surface = mask >= 0.5 && (s.z - d).abs() <= tau;
                expected += surface as usize;
                assert_eq!(vol.get(CH_SURFACE, i, j, k), if surface { 1.0 } else { 0.0 });
                assert!((vol.get(CH_MASK, i, j, k) - mask).abs() < 1e-12);
                for ch in 0..3 {
                    assert!((vol.get(CH_RGB + ch, i, j, k) - rgb[ch]).abs() < 1e-6);
                }
                // Voxels behind the visible shell carry the same image
                // samples but no surface occupancy.
                if mask >= 0.5 && s.z > d + tau {
                    behind += 1;
                    assert_eq!(vol.get(CH_SURFACE, i, j, k), 0.0);
                    assert!(vol.get(CH_MASK, i, j, k) >= 0.5);
                }
            }
        }
    }
    let total: f64 = vol.channel(CH_SURFACE).iter().sum();
    assert_eq!(total as usize, expected);
    assert!(expected > 0 && behind > 0);
}

#[test]
fn voxel_on_its_own_hit_pixel_is_surface() {
    let (scene, _) = generate_scene(3, 1, 32).unwrap();
    let c = cam();
    let n = 32;
    let pose = pose_of(ViewIndex::new(0, 2).unwrap(), &c);
    let r = render(&scene, &pose, &c);
    let vol = unproject(&r, &pose, &c, n, &pose);
    // Any voxel whose center sits exactly at the depth seen through a fully
    // covered sample point must be flagged.
    let mut checked = 0;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let s = sample_site(i, j, k, n, &pose, &c, &pose).unwrap();
                let (mask, d, _) = resample(&r, s.x, s.y);
                if mask == 1.0 && (s.z - d).abs() <= 0.25 / n as f64 {
                    assert_eq!(vol.get(CH_SURFACE, i, j, k), 1.0);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn rotating_there_and_back_preserves_smooth_fields() {
    let err = geomem::selftest::warp_roundtrip_error(&cam(), 32).unwrap();
    assert!(err <= geomem::selftest::WARP_ROUNDTRIP_TOLERANCE, "round trip error {err}");
}

#[test]
fn quarter_turn_moves_a_blob_to_the_rotated_location() {
    let n = 16;
    let c = (n as f64 - 1.0) / 2.0;
    let src_center = Vector3::new(c + 4.0, c + 1.0, c - 2.0);
    let mut vol = FeatureVolume::zeros(1, n, Frame::Camera);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let d = Vector3::new(i as f64, j as f64, k as f64) - src_center;
                let idx = vol.index(0, i, j, k);
                vol.data[idx] = (-d.norm_squared() / (2.0 * 0.7 * 0.7)).exp();
            }
        }
    }
    // A rotation about the camera z axis spins the attached grid about its
    // own center, so no translation is needed.
    let mut ego = Pose::identity();
    ego.rotation = rotation_z_deg(90.0);
    let out = warp_to_reference(&vol, &ego, &cam()).unwrap();
    let (mut mass, mut m) = (0.0, Vector3::zeros());
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let w = out.get(0, i, j, k);
                mass += w;
                m += w * Vector3::new(i as f64, j as f64, k as f64);
            }
        }
    }
    let centroid = m / mass;
    let rel = src_center - Vector3::repeat(c);
    let expect = ego.rotation * rel + Vector3::repeat(c);
    assert!((centroid - expect).norm() <= 0.6, "centroid {centroid:?} vs {expect:?}");
}

#[test]
fn warp_path_agrees_with_direct_lifting() {
    let means = geomem::selftest::warp_vs_direct(&cam(), 32, 4, 11).unwrap();
    for (ch, m) in means.iter().enumerate() {
        assert!(*m <= geomem::selftest::WARP_DIRECT_TOLERANCE, "channel {ch}: {m}");
    }
}
