use geomem::render::*;
use geomem::camera::{CameraModel, Pose, ViewIndex};
use geomem::scene::VoxelScene;
use nalgebra::Vector3;
use geomem::camera::pose_of;
use geomem::scene::{Category, PlacedShape, ShapeSpec};

fn cam() -> CameraModel {
    CameraModel::default()
}

#[test]
fn empty_scene_is_background() {
    let scene = VoxelScene::empty(16);
    let view = ViewIndex::new(1, 3).unwrap();
    let r = render(&scene, &pose_of(view, &cam()), &cam());
    assert!(r.mask.iter().all(|m| !m));
    assert!(r.depth.iter().all(|d| d.is_infinite()));
}

#[test]
fn centered_cube_center_pixel_depth() {
    let n = 32;
    let half = 0.125;
    let cube = PlacedShape {
        spec: ShapeSpec {
            category: Category::Box,
            scale: half,
            color: [1.0, 0.0, 0.0],
        },
        center: [0.0; 3],
        yaw: 0.0,
    };
    let scene = VoxelScene::rasterize(n, &[cube]).unwrap();
    let c = cam();
    // look straight down the x axis from a synthetic pose
    let pose = Pose::look_at_origin(Vector3::new(1.4, 0.0, 0.0)).unwrap();
    let r = render(&scene, &pose, &c);
    let centre = r.pixel(c.image_size / 2, c.image_size / 2);
    assert!(r.mask[centre]);
    assert!((r.depth[centre] - (1.4 - half)).abs() <= 1.0 / n as f64);
}

#[test]
fn invariants_hold_on_generated_scene() {
    let (scene, _) = geomem::scene::generate_scene(5, 2, 32).unwrap();
    let c = cam();
    for view in [ViewIndex::new(0, 0).unwrap(), ViewIndex::new(2, 11).unwrap()] {
        let r = render(&scene, &pose_of(view, &c), &c);
        for p in 0..r.mask.len() {
            assert_eq!(r.mask[p], r.depth[p].is_finite());
            assert_eq!(r.mask[p], r.instance[p] > 0);
            if r.mask[p] {
                assert!(r.depth[p] > 1.4 - 0.45 && r.depth[p] < 1.4 + 0.45);
            }
        }
    }
}

#[test]
fn occlusion_rate_requires_two_objects() {
    let (scene, _) = geomem::scene::generate_scene(2, 1, 16).unwrap();
    let pose = pose_of(ViewIndex::new(0, 0).unwrap(), &cam());
    assert!(occlusion_rate(&scene, &pose, &cam()).is_err());
}

fn cube(center: [f64; 3], half: f64) -> PlacedShape {
    PlacedShape {
        spec: ShapeSpec {
            category: Category::Box,
            scale: half,
            color: [0.2, 0.8, 0.4],
        },
        center,
        yaw: 0.0,
    }
}

fn pair_scene() -> VoxelScene {
    VoxelScene::rasterize(32, &[cube([0.3, 0.0, 0.0], 0.1), cube([-0.3, 0.0, 0.0], 0.1)]).unwrap()
}

#[test]
fn antipodal_objects_along_the_view_line_fully_occlude() {
    let scene = pair_scene();
    let pose = Pose::look_at_origin(Vector3::new(1.4, 0.0, 0.0)).unwrap();
    let r = render(&scene, &pose, &cam());
    let mut ids: Vec<u8> = r.instance.iter().copied().filter(|&i| i > 0).collect();
    ids.dedup();
    assert_eq!(ids, vec![1]);
    assert_eq!(occlusion_rate(&scene, &pose, &cam()).unwrap(), 1.0);
}

#[test]
fn side_view_of_separated_objects_has_no_occlusion() {
    let scene = pair_scene();
    let pose = Pose::look_at_origin(Vector3::new(0.0, 1.4, 0.0)).unwrap();
    assert_eq!(occlusion_rate(&scene, &pose, &cam()).unwrap(), 0.0);
}

#[test]
fn partial_occlusion_matches_isolation_pixel_counts() {
    let scene = pair_scene();
    let eye = Vector3::new(1.4 * 0.99f64.sqrt(), 1.4 * 0.1, 0.0);
    let pose = Pose::look_at_origin(eye).unwrap();
    let full = render(&scene, &pose, &cam());
    let mut oracle = 0.0f64;
    for id in 1..=2u8 {
        let alone = render(&scene.isolate(id).unwrap(), &pose, &cam());
        let silhouette = alone.mask.iter().filter(|&&m| m).count();
        let visible = full.instance.iter().filter(|&&i| i == id).count();
        oracle = oracle.max(1.0 - visible as f64 / silhouette as f64);
    }
    let rate = occlusion_rate(&scene, &pose, &cam()).unwrap();
    assert_eq!(rate, oracle);
    assert!(rate > 0.0 && rate < 1.0, "rate {rate}");
}

#[test]
fn traversal_matches_analytic_ray_box_on_ten_thousand_rays() {
    let (err, disagreements) = geomem::selftest::renderer_oracle(10_000, 3).unwrap();
    assert_eq!(disagreements, 0);
    assert!(err <= geomem::selftest::RENDER_TOLERANCE, "max error {err}");
}

#[test]
fn ray_box_interval_examples() {
    let o = Vector3::new(-2.0, 0.0, 0.0);
    let d = Vector3::new(1.0, 0.0, 0.0);
    let (t0, t1) = ray_box_interval(&o, &d, [-0.5; 3], [0.5; 3]).unwrap();
    assert_eq!((t0, t1), (1.5, 2.5));
    let miss = Vector3::new(0.0, 1.0, 0.0);
    assert!(ray_box_interval(&o, &miss, [-0.5; 3], [0.5; 3]).is_none());
}
