//! Instance segmentation from embeddings.
//!
//! Voxels whose predicted occupancy is at least 0.5 are clustered in
//! embedding space with k-means. In the unknown-count mode the volume is
//! oversegmented (k = 8) and clusters are merged greedily by the ratio of
//! shared face adjacencies to the volume of the larger cluster.

use nalgebra::Vector3;
use rand::Rng as _;

use crate::camera::{CameraModel, Pose};
use crate::error::{invalid, Result};
use crate::nn::Tensor;
use crate::rng::{derive_seed, rng_from_seed};

/// Voxels with predicted occupancy below this are discarded.
pub const OCCUPANCY_THRESHOLD: f32 = 0.5;
/// Merging stops once the best adjacency ratio falls below this.
pub const MERGE_THRESHOLD: f64 = 1.5;
/// Lloyd iterations stop when the relative inertia change drops below this.
pub const KMEANS_TOLERANCE: f64 = 1e-6;
pub const KMEANS_MAX_ITERATIONS: usize = 100;
/// k-means++ initialisations tried per call; the lowest inertia wins.
pub const KMEANS_RESTARTS: usize = 8;
/// Largest cluster or object count the exhaustive matcher accepts.
pub const MAX_MATCH: usize = 6;

/// Hard assignment of the voxels of an `n³` grid to clusters `1..=k`;
/// 0 marks discarded voxels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub n: usize,
    pub assignment: Vec<u16>,
    pub k: usize,
}

impl Clustering {
    /// Voxel lists per cluster, index `c - 1` for cluster `c`.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (v, &c) in self.assignment.iter().enumerate() {
            if c > 0 {
                out[c as usize - 1].push(v);
            }
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.k];
        for &c in &self.assignment {
            if c > 0 {
                out[c as usize - 1] += 1;
            }
        }
        out
    }

    /// Build from a ground-truth style id grid (0 = empty, ids `1..=k`).
    pub fn from_ids(n: usize, ids: &[u8], k: usize) -> Self {
        Self {
            n,
            assignment: ids.iter().map(|&v| v as u16).collect(),
            k,
        }
    }
}

/// Result of clustering a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, lowest index on ties.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, q) in centroids.iter().enumerate() {
        let d = dist2(p, q);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centroids.push(points[pick].clone());
        let last = centroids.last().expect("just pushed");
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, last));
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids.
pub fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeans {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels = vec![0usize; points.len()];
    let mut prev = f64::INFINITY;
    let mut inertia;
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERATIONS {
        iterations += 1;
        inertia = 0.0;
        for (l, p) in labels.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids);
            *l = c;
            inertia += d;
        }
        // repair empty clusters by re-seeding at the farthest point
        loop {
            let mut counts = vec![0usize; k];
            for &l in &labels {
                counts[l] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let far = (0..points.len())
                .filter(|&i| counts[labels[i]] > 1)
                .map(|i| (i, dist2(&points[i], &centroids[labels[i]])))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            let Some((i, _)) = far else {
                break;
            };
            centroids[empty] = points[i].clone();
            labels[i] = empty;
            inertia = labels.iter().zip(points).map(|(&l, p)| dist2(p, &centroids[l])).sum();
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let converged = prev.is_finite() && (prev - inertia).abs() <= KMEANS_TOLERANCE * prev.max(f64::MIN_POSITIVE);
        prev = inertia;
        if converged {
            break;
        }
    }
    // final assignment against the final centroids
    inertia = 0.0;
    for (l, p) in labels.iter_mut().zip(points) {
        let (c, d) = nearest(p, &centroids);
        *l = c;
        inertia += d;
    }
    KMeans {
        labels,
        centroids,
        inertia,
        iterations,
    }
}

/// k-means++ seeded Lloyd clustering, best of [`KMEANS_RESTARTS`] runs.
pub fn kmeans_points(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(invalid("k-means needs k >= 1"));
    }
    if points.len() < k {
        return Err(invalid(format!("{} points cannot form {k} clusters", points.len())));
    }
    let mut best: Option<KMeans> = None;
    for restart in 0..KMEANS_RESTARTS {
        let init = plus_plus_init(points, k, derive_seed(seed, &[restart as u64]));
        let run = lloyd(points, init);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Indices of voxels whose occupancy reaches [`OCCUPANCY_THRESHOLD`].
pub fn active_voxels(occupancy: &[f32]) -> Vec<usize> {
    occupancy
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= OCCUPANCY_THRESHOLD)
        .map(|(i, _)| i)
        .collect()
}

/// Cluster the `active` voxels of an `(E, n, n, n)` embedding volume.
pub fn kmeans(embeddings: &Tensor<f32>, active: &[usize], k: usize, seed: u64) -> Result<Clustering> {
    let plane = embeddings.plane();
    let n = embeddings.shape.get(1).copied().unwrap_or(1);
    let dims = embeddings.channels();
    let points: Vec<Vec<f64>> = active
        .iter()
        .map(|&v| (0..dims).map(|c| embeddings.data[c * plane + v] as f64).collect())
        .collect();
    let km = kmeans_points(&points, k, seed)?;
    let mut assignment = vec![0u16; plane];
    for (&v, &l) in active.iter().zip(&km.labels) {
        assignment[v] = l as u16 + 1;
    }
    Ok(Clustering { n, assignment, k })
}

/// Count of 6-connected voxel pairs between clusters, as a `k × k`
/// symmetric table.
pub fn adjacency_counts(c: &Clustering) -> Vec<Vec<usize>> {
    let n = c.n;
    let mut adj = vec![vec![0usize; c.k]; c.k];
    let at = |i: usize, j: usize, k: usize| c.assignment[i + n * (j + n * k)];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let a = at(i, j, k);
                if a == 0 {
                    continue;
                }
                let mut visit = |b: u16| {
                    if b != 0 && b != a {
                        adj[a as usize - 1][b as usize - 1] += 1;
                        adj[b as usize - 1][a as usize - 1] += 1;
                    }
                };
                if i + 1 < n {
                    visit(at(i + 1, j, k));
                }
                if j + 1 < n {
                    visit(at(i, j + 1, k));
                }
                if k + 1 < n {
                    visit(at(i, j, k + 1));
                }
            }
        }
    }
    adj
}

/// One merge performed by [`merge_clusters`], in original cluster ids.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeStep {
    pub kept: usize,
    pub absorbed: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub clustering: Clustering,
    pub merges: Vec<MergeStep>,
    /// Largest adjacency ratio among the clusters that remained; 0 for a
    /// single cluster.
    pub final_max_ratio: f64,
    /// Largest ratio seen before any merge.
    pub initial_max_ratio: f64,
}

/// Adjacency ratio `R = adjacencies / volume of the larger cluster`.
#[inline]
pub fn merge_ratio(adjacent: usize, size_a: usize, size_b: usize) -> f64 {
    let larger = size_a.max(size_b);
    if larger == 0 {
        0.0
    } else {
        adjacent as f64 / larger as f64
    }
}

/// Greedily merge the pair with the largest ratio until it drops below
/// [`MERGE_THRESHOLD`]. Ties go to the smallest `(a, b)` id pair. Surviving
/// clusters are renumbered `1..` in order of their smallest original id.
pub fn merge_clusters(c: &Clustering) -> MergeOutcome {
    let mut adj = adjacency_counts(c);
    let mut sizes = c.sizes();
    let mut alive: Vec<bool> = sizes.iter().map(|&s| s > 0).collect();
    let mut parent: Vec<usize> = (0..c.k).collect();
    let mut merges = Vec::new();

    let best_pair = |adj: &Vec<Vec<usize>>, sizes: &Vec<usize>, alive: &Vec<bool>| {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..c.k {
            for b in a + 1..c.k {
                if !alive[a] || !alive[b] {
                    continue;
                }
                let r = merge_ratio(adj[a][b], sizes[a], sizes[b]);
                if best.is_none_or(|(_, _, br)| r > br) {
                    best = Some((a, b, r));
                }
            }
        }
        best
    };

    let initial_max_ratio = best_pair(&adj, &sizes, &alive).map_or(0.0, |p| p.2);
    let final_max_ratio = loop {
        let Some((a, b, r)) = best_pair(&adj, &sizes, &alive) else {
            break 0.0;
        };
        if r < MERGE_THRESHOLD {
            break r;
        }
        // fold b into a
        for x in 0..c.k {
            if x != a && x != b {
                adj[a][x] += adj[b][x];
                adj[x][a] = adj[a][x];
            }
            adj[b][x] = 0;
            adj[x][b] = 0;
        }
        adj[a][b] = 0;
        adj[b][a] = 0;
        sizes[a] += sizes[b];
        sizes[b] = 0;
        alive[b] = false;
        for p in parent.iter_mut() {
            if *p == b {
                *p = a;
            }
        }
        merges.push(MergeStep {
            kept: a + 1,
            absorbed: b + 1,
            ratio: r,
        });
    };

    let mut relabel = vec![0u16; c.k];
    let mut next = 0u16;
    for old in 0..c.k {
        if alive[old] {
            next += 1;
            relabel[old] = next;
        }
    }
    let assignment = c
        .assignment
        .iter()
        .map(|&v| if v == 0 { 0 } else { relabel[parent[v as usize - 1]] })
        .collect();
    MergeOutcome {
        clustering: Clustering {
            n: c.n,
            assignment,
            k: next as usize,
        },
        merges,
        final_max_ratio,
        initial_max_ratio,
    }
}

/// Mean logit vector per cluster, accumulated in f64.
pub fn cluster_mean_logits(c: &Clustering, logits: &Tensor<f32>) -> Vec<Vec<f64>> {
    let plane = logits.plane();
    let classes = logits.channels();
    c.members()
        .iter()
        .map(|m| {
            (0..classes)
                .map(|cl| {
                    if m.is_empty() {
                        0.0
                    } else {
                        m.iter().map(|&v| logits.data[cl * plane + v] as f64).sum::<f64>() / m.len() as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Category per cluster from the mean of its members' logits.
pub fn classify_clusters(c: &Clustering, logits: &Tensor<f32>) -> Vec<usize> {
    cluster_mean_logits(c, logits).iter().map(|m| argmax(m)).collect()
}

/// IoU between two voxel-id grids restricted to one id each.
pub fn set_iou(a: &[u16], a_id: u16, b: &[u8], b_id: u8) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (p, q) = (x == a_id, y == b_id);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pairwise IoU table `[cluster][object]`.
pub fn iou_table(c: &Clustering, gt: &[u8], num_objects: usize) -> Vec<Vec<f64>> {
    (1..=c.k)
        .map(|ci| {
            (1..=num_objects)
                .map(|g| set_iou(&c.assignment, ci as u16, gt, g as u8))
                .collect()
        })
        .collect()
}

/// One-to-one assignment of clusters to ground-truth objects.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Matched cluster (1-based) per ground-truth object, if any.
    pub cluster_for_object: Vec<Option<usize>>,
    /// IoU of each ground-truth object with its matched cluster (0 if none).
    pub object_iou: Vec<f64>,
    pub mean_iou: f64,
}

impl Matching {
    /// Matched object (1-based) per cluster, if any.
    pub fn object_for_cluster(&self, k: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; k];
        for (g, c) in self.cluster_for_object.iter().enumerate() {
            if let Some(c) = c {
                out[c - 1] = Some(g + 1);
            }
        }
        out
    }
}

/// Exhaustive search over injective assignments maximising the summed
/// IoU from a precomputed `[cluster][object]` table. The first maximiser
/// in lexicographic order of choices wins.
pub fn best_matching(table: &[Vec<f64>], num_objects: usize) -> Result<Matching> {
    let k = table.len();
    if k > MAX_MATCH || num_objects > MAX_MATCH {
        return Err(invalid(format!(
            "matching supports at most {MAX_MATCH} clusters and objects, got {k} and {num_objects}"
        )));
    }
    fn search(
        g: usize,
        table: &[Vec<f64>],
        used: &mut Vec<bool>,
        current: &mut Vec<Option<usize>>,
        score: f64,
        best: &mut (f64, Vec<Option<usize>>),
    ) {
        let objects = current.len();
        if g == objects {
            if score > best.0 {
                *best = (score, current.clone());
            }
            return;
        }
        for c in 0..table.len() {
            if used[c] {
                continue;
            }
            used[c] = true;
            current[g] = Some(c + 1);
            search(g + 1, table, used, current, score + table[c][g], best);
            used[c] = false;
        }
        current[g] = None;
        search(g + 1, table, used, current, score, best);
    }
    let mut best = (-1.0, vec![None; num_objects]);
    search(0, table, &mut vec![false; k], &mut vec![None; num_objects], 0.0, &mut best);
    let assignment = best.1;
    let object_iou: Vec<f64> = assignment
        .iter()
        .enumerate()
        .map(|(g, c)| c.map_or(0.0, |c| table[c - 1][g]))
        .collect();
    let mean_iou = if num_objects == 0 {
        0.0
    } else {
        object_iou.iter().sum::<f64>() / num_objects as f64
    };
    Ok(Matching {
        cluster_for_object: assignment,
        object_iou,
        mean_iou,
    })
}

pub fn match_to_groundtruth(c: &Clustering, gt: &[u8], num_objects: usize) -> Result<Matching> {
    if gt.len() != c.assignment.len() {
        return Err(crate::Error::ShapeMismatch(format!(
            "{} cluster voxels vs {} ground-truth voxels",
            c.assignment.len(),
            gt.len()
        )));
    }
    best_matching(&iou_table(c, gt, num_objects), num_objects)
}

/// Pixel bounding box `[u_min, v_min, u_max, v_max]` of a cluster's voxel
/// centers projected into a view. Voxels are indexed in the grid attached
/// to `reference` (see [`crate::lift`]).
pub fn amodal_box(members: &[usize], n: usize, reference: &Pose, view_pose: &Pose, cam: &CameraModel) -> Option<[f64; 4]> {
    let to_view = view_pose.compose(&reference.inverse());
    let coord = |i: usize| (i as f64 + 0.5) / n as f64 - 0.5;
    let mut bbox: Option<[f64; 4]> = None;
    for &v in members {
        let (i, j, k) = (v % n, (v / n) % n, v / (n * n));
        let q = Vector3::new(coord(i), coord(j), coord(k) + cam.radius);
        let Some((x, y)) = cam.project(&to_view.transform_point(&q)) else {
            continue;
        };
        bbox = Some(match bbox {
            None => [x, y, x, y],
            Some(b) => [b[0].min(x), b[1].min(y), b[2].max(x), b[3].max(y)],
        });
    }
    bbox
}
