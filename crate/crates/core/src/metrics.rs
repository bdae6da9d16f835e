//! Evaluation metrics: occupancy IoU, matched segmentation IoU,
//! classification accuracy, percent increase, and their per-view means.

use serde::{Deserialize, Serialize};

use crate::cluster::{
    active_voxels, classify_clusters, kmeans, match_to_groundtruth, merge_clusters, Clustering, OCCUPANCY_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::memory::{DecodeOutput, Targets};

/// IoU of thresholded predictions against a boolean grid. Both empty → 1.
pub fn voxel_iou(pred: &[f32], gt: &[bool], threshold: f32) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} voxels", pred.len(), gt.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let p = p >= threshold;
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// IoU of two boolean grids. Both empty → 1.
pub fn mask_iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} voxels", a.len(), b.len())));
    }
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `100·(IoU_v − IoU_1)/IoU_1`; undefined when `IoU_1 = 0`.
pub fn percent_increase(iou_first: f64, iou_view: f64) -> Option<f64> {
    (iou_first > 0.0).then(|| 100.0 * (iou_view - iou_first) / iou_first)
}

/// Scores of one decoded view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub occupancy_iou: f64,
    /// Mean matched IoU over objects, k-means with the true object count.
    pub segmentation_iou: f64,
    /// Correctly labelled matched clusters over `max(K_pred, K_gt)`.
    pub classification_accuracy: f64,
    /// Clusters left by oversegment-and-merge.
    pub merged_clusters: usize,
    /// Largest adjacency ratio when merging stopped.
    pub merge_final_ratio: f64,
}

/// Clustering of the active voxels with at most `k` clusters.
fn cluster_active(decode: &DecodeOutput, k: usize, seed: u64) -> Result<Option<Clustering>> {
    let active = active_voxels(&decode.occupancy);
    if active.is_empty() {
        return Ok(None);
    }
    Ok(Some(kmeans(&decode.embeddings, &active, k.min(active.len()), seed)?))
}

/// Occupancy, segmentation, classification and merge results of a view.
pub fn score_view(decode: &DecodeOutput, targets: &Targets, overseg_k: usize, seed: u64) -> Result<ViewScore> {
    let occupancy_iou = voxel_iou(&decode.occupancy, &targets.occupancy, OCCUPANCY_THRESHOLD)?;
    let k_gt = targets.num_objects();
    let (mut segmentation_iou, mut classification_accuracy) = (0.0, 0.0);
    if let Some(c) = cluster_active(decode, k_gt, seed)? {
        let m = match_to_groundtruth(&c, &targets.instance, k_gt)?;
        segmentation_iou = m.mean_iou;
        let classes = classify_clusters(&c, &decode.logits);
        let correct = m
            .object_for_cluster(c.k)
            .iter()
            .zip(&classes)
            .filter(|(o, &cls)| o.is_some_and(|o| targets.categories[o - 1].index() == cls))
            .count();
        classification_accuracy = correct as f64 / c.k.max(k_gt).max(1) as f64;
    }
    let (merged_clusters, merge_final_ratio) = match cluster_active(decode, overseg_k, seed)? {
        Some(c) => {
            let out = merge_clusters(&c);
            (out.clustering.k, out.final_max_ratio)
        }
        None => (0, 0.0),
    };
    Ok(ViewScore {
        occupancy_iou,
        segmentation_iou,
        classification_accuracy,
        merged_clusters,
        merge_final_ratio,
    })
}

/// Mean over rows of a per-view quantity; rows must share their length.
pub fn mean_per_view(rows: &[Vec<ViewScore>], f: impl Fn(&ViewScore) -> f64) -> Vec<f64> {
    let Some(views) = rows.first().map(Vec::len) else {
        return Vec::new();
    };
    (0..views)
        .map(|v| rows.iter().map(|r| f(&r[v])).sum::<f64>() / rows.len() as f64)
        .collect()
}

/// Percent increase of each view's mean IoU over view 1's mean IoU.
pub fn percent_increase_curve(mean_iou: &[f64]) -> Vec<Option<f64>> {
    mean_iou
        .iter()
        .map(|&v| mean_iou.first().and_then(|&first| percent_increase(first, v)))
        .collect()
}
