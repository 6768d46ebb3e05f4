//! Seeded Lloyd k-means with k-means++ initialization, and the
//! semi-supervised variant in which anchor rows are pinned to fixed clusters.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{DtcError, Result};
use crate::rng;

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub centers: Array2<f64>,
    /// Cluster index (0-based) per row.
    pub assignment: Vec<usize>,
    /// Sum of squared distances of rows to their final centers.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step, measured against the centers used
    /// for that step.
    pub inertia_history: Vec<f64>,
}

/// Rows pinned to clusters `0..n_anchor_clusters`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnchorConstraints {
    anchor_rows: Vec<usize>,
    anchor_cluster: Vec<usize>,
    n_anchor_clusters: usize,
}

impl AnchorConstraints {
    pub fn none() -> Self {
        Self::default()
    }

    /// `anchor_cluster[i]` is the fixed cluster of row `anchor_rows[i]`.
    pub fn new(
        anchor_rows: Vec<usize>,
        anchor_cluster: Vec<usize>,
        n_anchor_clusters: usize,
    ) -> Result<Self> {
        if anchor_rows.len() != anchor_cluster.len() {
            return Err(DtcError::Constraint(
                "anchor rows and anchor clusters differ in length".into(),
            ));
        }
        if let Some(&c) = anchor_cluster.iter().find(|&&c| c >= n_anchor_clusters) {
            return Err(DtcError::Constraint(format!(
                "anchor cluster {c} is outside 0..{n_anchor_clusters}"
            )));
        }
        let mut seen = vec![false; n_anchor_clusters];
        anchor_cluster.iter().for_each(|&c| seen[c] = true);
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(DtcError::Constraint(format!(
                "anchor cluster {empty} has no anchor rows"
            )));
        }
        let mut sorted = anchor_rows.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(DtcError::Constraint("an anchor row is listed twice".into()));
        }
        Ok(AnchorConstraints {
            anchor_rows,
            anchor_cluster,
            n_anchor_clusters,
        })
    }

    pub fn anchor_rows(&self) -> &[usize] {
        &self.anchor_rows
    }

    pub fn anchor_cluster(&self) -> &[usize] {
        &self.anchor_cluster
    }

    pub fn n_anchor_clusters(&self) -> usize {
        self.n_anchor_clusters
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_rows.is_empty()
    }
}

pub fn kmeans(
    data: ArrayView2<f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KmeansResult> {
    constrained_kmeans(data, k, &AnchorConstraints::none(), seed, max_iter, tol)
}

pub fn constrained_kmeans(
    data: ArrayView2<f64>,
    k: usize,
    constraints: &AnchorConstraints,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KmeansResult> {
    constrained_kmeans_observed(data, k, constraints, seed, max_iter, tol, |_, _| {})
}

/// As [`constrained_kmeans`], calling `on_iteration(iter, assignment)` after
/// every assignment step.
pub fn constrained_kmeans_observed(
    data: ArrayView2<f64>,
    k: usize,
    constraints: &AnchorConstraints,
    seed: u64,
    max_iter: usize,
    tol: f64,
    mut on_iteration: impl FnMut(usize, &[usize]),
) -> Result<KmeansResult> {
    let (n, dim) = data.dim();
    if k == 0 || k > n {
        return Err(DtcError::param(format!("k must satisfy 1 <= k <= N (k={k}, N={n})")));
    }
    if constraints.n_anchor_clusters > k {
        return Err(DtcError::param(format!(
            "k={k} is smaller than the {} anchor clusters",
            constraints.n_anchor_clusters
        )));
    }
    if let Some(&r) = constraints.anchor_rows.iter().find(|&&r| r >= n) {
        return Err(DtcError::Constraint(format!("anchor row {r} is out of range")));
    }
    if max_iter == 0 {
        return Err(DtcError::param("max_iter must be >= 1"));
    }
    let points = data.as_standard_layout();
    let points = points.as_slice().expect("standard layout");
    let row = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut fixed: Vec<Option<usize>> = vec![None; n];
    for (&r, &c) in constraints.anchor_rows.iter().zip(&constraints.anchor_cluster) {
        fixed[r] = Some(c);
    }
    let free_rows: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let n_anchor = constraints.n_anchor_clusters;
    if k > n_anchor && free_rows.is_empty() {
        return Err(DtcError::param(
            "free clusters requested but every row is anchored",
        ));
    }

    // Anchor clusters start at the mean of their anchor rows.
    let mut centers = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (&r, &c) in constraints.anchor_rows.iter().zip(&constraints.anchor_cluster) {
        counts[c] += 1;
        for (acc, v) in centers[c * dim..(c + 1) * dim].iter_mut().zip(row(r)) {
            *acc += v;
        }
    }
    for c in 0..n_anchor {
        let inv = 1.0 / counts[c] as f64;
        centers[c * dim..(c + 1) * dim].iter_mut().for_each(|v| *v *= inv);
    }

    // k-means++ over the free rows for the remaining clusters.
    let mut rng = rng::stream(seed, 0x4b4d_4541);
    let mut nearest: Vec<f64> = vec![f64::INFINITY; free_rows.len()];
    let refresh = |nearest: &mut [f64], center: &[f64]| {
        for (d, &r) in nearest.iter_mut().zip(&free_rows) {
            *d = d.min(sq_dist(row(r), center));
        }
    };
    for c in 0..n_anchor {
        refresh(&mut nearest, &centers[c * dim..(c + 1) * dim]);
    }
    for c in n_anchor..k {
        let total: f64 = if c == 0 { 0.0 } else { nearest.iter().sum() };
        let pick = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = free_rows.len() - 1;
            for (j, d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = j;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..free_rows.len())
        };
        let src = free_rows[pick];
        centers[c * dim..(c + 1) * dim].copy_from_slice(row(src));
        refresh(&mut nearest, row(src));
    }

    let mut labels: Vec<usize> = fixed.iter().map(|f| f.unwrap_or(0)).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    for iter in 1..=max_iter {
        iterations = iter;
        let mut inertia = 0.0;
        for i in 0..n {
            let x = row(i);
            let c = match fixed[i] {
                Some(c) => c,
                None => nearest_center(x, &centers, dim).0,
            };
            labels[i] = c;
            inertia += sq_dist(x, &centers[c * dim..(c + 1) * dim]);
        }
        history.push(inertia);
        on_iteration(iter, &labels);

        let previous = centers.clone();
        update_centers(points, dim, k, &mut labels, &fixed, &mut centers);
        let shift = (0..k)
            .map(|c| sq_dist(&previous[c * dim..(c + 1) * dim], &centers[c * dim..(c + 1) * dim]))
            .fold(0.0f64, f64::max)
            .sqrt();
        if shift < tol {
            break;
        }
    }

    let inertia = (0..n)
        .map(|i| sq_dist(row(i), &centers[labels[i] * dim..(labels[i] + 1) * dim]))
        .sum();
    Ok(KmeansResult {
        centers: Array2::from_shape_vec((k, dim), centers).expect("shape"),
        assignment: labels,
        inertia,
        iterations,
        inertia_history: history,
    })
}

/// Recomputes means; empty clusters are reseeded at the free row farthest
/// from its own center, which is moved into the empty cluster.
fn update_centers(
    points: &[f64],
    dim: usize,
    k: usize,
    labels: &mut [usize],
    fixed: &[Option<usize>],
    centers: &mut [f64],
) {
    let n = labels.len();
    let means = |labels: &[usize], centers: &mut [f64]| -> Vec<usize> {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = labels[i];
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(&points[i * dim..(i + 1) * dim]) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = s * inv;
                }
            }
        }
        counts
    };
    let mut counts = means(labels, centers);
    if counts.iter().all(|&c| c > 0) {
        return;
    }
    let mut moved = vec![false; n];
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if fixed[i].is_some() || moved[i] || counts[labels[i]] < 2 {
                continue;
            }
            let c = labels[i];
            let d = sq_dist(&points[i * dim..(i + 1) * dim], &centers[c * dim..(c + 1) * dim]);
            if d > 0.0 && best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            counts[labels[i]] -= 1;
            labels[i] = empty;
            counts[empty] = 1;
            moved[i] = true;
        }
    }
    means(labels, centers);
}

/// Best of `n_init` seeded runs by final inertia (earliest run on ties).
/// Run 0 uses `seed` itself, so `n_init = 1` equals a single run.
pub fn constrained_kmeans_restarts(
    data: ArrayView2<f64>,
    k: usize,
    constraints: &AnchorConstraints,
    seed: u64,
    n_init: usize,
    max_iter: usize,
    tol: f64,
) -> Result<KmeansResult> {
    let mut best: Option<KmeansResult> = None;
    for run in 0..n_init.max(1) {
        let run_seed = if run == 0 { seed } else { rng::derive_seed(seed, run as u64) };
        let res = constrained_kmeans(data, k, constraints, run_seed, max_iter, tol)?;
        if best.as_ref().is_none_or(|b| res.inertia < b.inertia) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one run"))
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center index (lowest on ties) and its squared distance.
fn nearest_center(x: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}
