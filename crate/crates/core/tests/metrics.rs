use geomem::metrics::*;
use proptest::prelude::*;

#[test]
fn iou_edge_cases() {
    assert_eq!(voxel_iou(&[0.0, 0.1], &[false, false], 0.5).unwrap(), 1.0);
    assert_eq!(voxel_iou(&[0.9, 0.9], &[true, false], 0.5).unwrap(), 0.5);
    assert!(voxel_iou(&[0.9], &[true, false], 0.5).is_err());
    assert_eq!(mask_iou(&[true, true], &[true, false]).unwrap(), 0.5);
}

#[test]
fn percent_increase_formula() {
    assert_eq!(percent_increase(0.5, 0.6).map(|p| (p * 1e9).round() / 1e9), Some(20.0));
    assert_eq!(percent_increase(0.0, 0.6), None);
}

#[test]
fn eight_voxel_sets_sharing_four() {
    let mut gt = vec![false; 16];
    let mut pred = vec![0.0f32; 16];
    gt[..8].iter_mut().for_each(|g| *g = true);
    pred[4..12].iter_mut().for_each(|p| *p = 0.9);
    assert!((voxel_iou(&pred, &gt, 0.5).unwrap() - 4.0 / 12.0).abs() < 1e-15);
}

#[test]
fn identical_and_disjoint_sets() {
    let gt: Vec<bool> = (0..27).map(|v| v % 3 == 0).collect();
    let hard: Vec<f32> = gt.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
    assert_eq!(voxel_iou(&hard, &gt, 0.5).unwrap(), 1.0);
    let other: Vec<f32> = gt.iter().map(|&g| if g { 0.0 } else { 1.0 }).collect();
    assert_eq!(voxel_iou(&other, &gt, 0.5).unwrap(), 0.0);
    assert!(voxel_iou(&hard[..5], &gt, 0.5).is_err());
}

proptest! {
    #[test]
    fn hard_iou_is_symmetric(a in proptest::collection::vec(any::<bool>(), 64), b in proptest::collection::vec(any::<bool>(), 64)) {
        prop_assert_eq!(mask_iou(&a, &b).unwrap(), mask_iou(&b, &a).unwrap());
        let fa: Vec<f32> = a.iter().map(|&x| x as u8 as f32).collect();
        let fb: Vec<f32> = b.iter().map(|&x| x as u8 as f32).collect();
        prop_assert_eq!(voxel_iou(&fa, &b, 0.5).unwrap(), voxel_iou(&fb, &a, 0.5).unwrap());
        let v = mask_iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn percent_increase_curve_starts_at_zero(ious in proptest::collection::vec(0.01f64..1.0, 1..6)) {
        let curve = percent_increase_curve(&ious);
        prop_assert_eq!(curve[0], Some(0.0));
        for (v, p) in curve.iter().enumerate() {
            let expect = 100.0 * (ious[v] - ious[0]) / ious[0];
            prop_assert!((p.unwrap() - expect).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_first_view_iou_is_reported_as_missing() {
    assert_eq!(percent_increase_curve(&[0.0, 0.3]), vec![None, None]);
}
