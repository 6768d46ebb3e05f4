//! Clustering evaluation: accuracy under optimal cluster-to-class matching,
//! normalized mutual information, the Silhouette index and count error.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{DtcError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub acc: f64,
    pub nmi: f64,
    pub n_points: usize,
    /// Cluster id -> class id used by `acc`.
    pub matching: BTreeMap<usize, usize>,
}

pub fn evaluate(truth: &[usize], predicted: &[usize]) -> Result<EvalReport> {
    let (acc, matching) = clustering_accuracy(truth, predicted)?;
    Ok(EvalReport {
        acc,
        nmi: nmi(truth, predicted)?,
        n_points: truth.len(),
        matching,
    })
}

fn check_lengths(truth: &[usize], predicted: &[usize]) -> Result<()> {
    if truth.len() != predicted.len() {
        return Err(DtcError::param(format!(
            "label lengths differ: {} vs {}",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(DtcError::param("label arrays are empty"));
    }
    Ok(())
}

/// Dense contingency table, rows = predicted clusters, columns = classes,
/// with the sorted distinct ids of each side.
struct Contingency {
    clusters: Vec<usize>,
    classes: Vec<usize>,
    counts: Vec<Vec<u64>>,
}

impl Contingency {
    fn new(truth: &[usize], predicted: &[usize]) -> Self {
        let mut clusters: Vec<usize> = predicted.to_vec();
        clusters.sort_unstable();
        clusters.dedup();
        let mut classes: Vec<usize> = truth.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let mut counts = vec![vec![0u64; classes.len()]; clusters.len()];
        for (t, p) in truth.iter().zip(predicted) {
            let r = clusters.binary_search(p).expect("present");
            let c = classes.binary_search(t).expect("present");
            counts[r][c] += 1;
        }
        Contingency {
            clusters,
            classes,
            counts,
        }
    }
}

/// Fraction of rows whose cluster is matched to their class, maximized over
/// one-to-one matchings. Clusters and classes may differ in number; rows of
/// unmatched clusters count as errors.
pub fn clustering_accuracy(
    truth: &[usize],
    predicted: &[usize],
) -> Result<(f64, BTreeMap<usize, usize>)> {
    check_lengths(truth, predicted)?;
    let table = Contingency::new(truth, predicted);
    let pairs = max_weight_matching(&table.counts);
    let mut correct = 0u64;
    let mut matching = BTreeMap::new();
    for (r, c) in pairs {
        correct += table.counts[r][c];
        matching.insert(table.clusters[r], table.classes[c]);
    }
    Ok((correct as f64 / truth.len() as f64, matching))
}

/// Maximum-weight perfect matching of the smaller side of `weights`
/// (Hungarian algorithm with potentials). Returns (row, col) pairs.
pub fn max_weight_matching(weights: &[Vec<u64>]) -> Vec<(usize, usize)> {
    let n_rows = weights.len();
    let n_cols = weights.first().map_or(0, Vec::len);
    if n_rows == 0 || n_cols == 0 {
        return Vec::new();
    }
    let transpose = n_rows > n_cols;
    let (n, m) = if transpose { (n_cols, n_rows) } else { (n_rows, n_cols) };
    let max_w = weights.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| -> i64 {
        let w = if transpose { weights[j][i] } else { weights[i][j] };
        max_w - w as i64
    };
    let matched = hungarian_min(n, m, cost);
    matched
        .into_iter()
        .enumerate()
        .map(|(i, j)| if transpose { (j, i) } else { (i, j) })
        .collect()
}

/// Minimum-cost assignment of every row to a distinct column (n <= m).
/// Returns the column of each row.
fn hungarian_min(n: usize, m: usize, cost: impl Fn(usize, usize) -> i64) -> Vec<usize> {
    const INF: i64 = i64::MAX / 4;
    // 1-based arrays; column 0 is a sentinel.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            result[owner[j] - 1] = j - 1;
        }
    }
    result
}

/// I(truth; predicted) / sqrt(H(truth) H(predicted)), natural logs.
pub fn nmi(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    check_lengths(truth, predicted)?;
    let table = Contingency::new(truth, predicted);
    let n = truth.len() as f64;
    let row_tot: Vec<f64> = table.counts.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_tot: Vec<f64> = (0..table.classes.len())
        .map(|c| table.counts.iter().map(|r| r[c]).sum::<u64>() as f64)
        .collect();
    let entropy = |tot: &[f64]| -> f64 {
        tot.iter()
            .filter(|&&t| t > 0.0)
            .map(|&t| -(t / n) * (t / n).ln())
            .sum()
    };
    let h_pred = entropy(&row_tot);
    let h_true = entropy(&col_tot);
    let mut mi = 0.0;
    for (r, row) in table.counts.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            if count > 0 {
                let joint = count as f64 / n;
                mi += joint * (joint * n * n / (row_tot[r] * col_tot[c])).ln();
            }
        }
    }
    let single_pred = table.clusters.len() == 1;
    let single_true = table.classes.len() == 1;
    Ok(match (single_true, single_pred) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (mi / (h_true * h_pred).sqrt()).clamp(0.0, 1.0),
    })
}

/// Per-point Silhouette scores with Euclidean distance; points in singleton
/// clusters score 0.
pub fn silhouette_samples(data: ArrayView2<f64>, predicted: &[usize]) -> Result<Vec<f64>> {
    let n = data.nrows();
    if predicted.len() != n {
        return Err(DtcError::param("label count does not match row count"));
    }
    if n < 2 {
        return Err(DtcError::UndefinedIndex("silhouette needs at least 2 points".into()));
    }
    let mut clusters: Vec<usize> = predicted.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    if clusters.len() < 2 {
        return Err(DtcError::UndefinedIndex(
            "silhouette needs at least 2 non-empty clusters".into(),
        ));
    }
    let dense: Vec<usize> = predicted
        .iter()
        .map(|p| clusters.binary_search(p).expect("present"))
        .collect();
    let n_clusters = clusters.len();
    let mut sizes = vec![0usize; n_clusters];
    dense.iter().for_each(|&c| sizes[c] += 1);

    let owned = data.as_standard_layout();
    let points = owned.as_slice().expect("standard layout");
    let dim = data.ncols();
    let scores = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &points[i * dim..(i + 1) * dim];
            let mut sums = vec![0.0; n_clusters];
            for (j, xj) in points.chunks_exact(dim).enumerate() {
                if j != i {
                    sums[dense[j]] += crate::kmeans::sq_dist(xi, xj).sqrt();
                }
            }
            let own = dense[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..n_clusters)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores)
}

/// Mean Silhouette score.
pub fn silhouette(data: ArrayView2<f64>, predicted: &[usize]) -> Result<f64> {
    let scores = silhouette_samples(data, predicted)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn count_error(k_true: usize, k_est: usize) -> usize {
    k_true.abs_diff(k_est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn accuracy_relabeling_is_perfect() {
        let truth = [0, 0, 1, 1, 2, 2, 2];
        let pred = [5, 5, 3, 3, 9, 9, 9];
        let (acc, matching) = clustering_accuracy(&truth, &pred).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(matching, BTreeMap::from([(3, 1), (5, 0), (9, 2)]));
    }

    #[test]
    fn accuracy_hand_example() {
        let (acc, _) = clustering_accuracy(&[0, 0, 1, 1, 2, 2], &[1, 1, 0, 0, 0, 2]).unwrap();
        assert!((acc - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn accuracy_rectangular() {
        let truth: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let pred: Vec<usize> = truth.iter().map(|t| t * 3 + 1).collect();
        let (acc, matching) = clustering_accuracy(&truth, &pred).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(matching.len(), 3);
        // More clusters than classes, one class split: the smaller part is an error.
        let (acc, _) = clustering_accuracy(&[0, 0, 0, 0, 1, 1], &[0, 0, 0, 7, 1, 1]).unwrap();
        assert!((acc - 5.0 / 6.0).abs() < 1e-15);
        // More classes than clusters.
        let (acc, _) = clustering_accuracy(&[0, 1, 2, 2], &[0, 0, 0, 0]).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn accuracy_length_mismatch() {
        assert!(clustering_accuracy(&[0, 1], &[0]).is_err());
        assert!(nmi(&[], &[]).is_err());
    }

    #[test]
    fn nmi_cases() {
        assert!((nmi(&[0, 0, 1, 1, 2], &[4, 4, 2, 2, 0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0);
        assert_eq!(nmi(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 0], &[1, 2, 1]).unwrap(), 0.0);
    }

    #[test]
    fn nmi_independent_is_small() {
        let mut r = rng::seeded(4);
        let truth: Vec<usize> = (0..10_000).map(|_| r.random_range(0..2)).collect();
        let pred: Vec<usize> = (0..10_000).map(|_| r.random_range(0..2)).collect();
        assert!(nmi(&truth, &pred).unwrap() <= 0.05);
    }

    #[test]
    fn nmi_symmetric() {
        let a = [0, 0, 1, 1, 2, 2, 0, 1];
        let b = [1, 0, 1, 2, 2, 2, 0, 0];
        assert!((nmi(&a, &b).unwrap() - nmi(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn silhouette_separated_clusters() {
        let mut x = Array2::zeros((20, 2));
        for i in 0..20 {
            x[[i, 0]] = if i < 10 { 0.0 } else { 100.0 };
            x[[i, 1]] = (i % 10) as f64 * 0.01;
        }
        let labels: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        assert!(silhouette(x.view(), &labels).unwrap() >= 0.9);
    }

    #[test]
    fn silhouette_requires_two_clusters() {
        let x = Array2::zeros((4, 2));
        assert!(matches!(
            silhouette(x.view(), &[1, 1, 1, 1]),
            Err(DtcError::UndefinedIndex(_))
        ));
        assert!(silhouette(Array2::zeros((1, 2)).view(), &[0]).is_err());
    }

    #[test]
    fn silhouette_singletons_score_zero() {
        let x = ndarray::array![[0.0], [1.0], [1.1], [5.0]];
        let s = silhouette_samples(x.view(), &[0, 1, 1, 2]).unwrap();
        assert_eq!(s[0], 0.0);
        assert_eq!(s[3], 0.0);
        assert!(s.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn count_error_cases() {
        assert_eq!(count_error(30, 34), 4);
        assert_eq!(count_error(10, 11), 1);
        assert_eq!(count_error(7, 7), 0);
        assert_eq!(count_error(5, 2), 3);
    }

    #[test]
    fn hungarian_square_small() {
        let w = vec![vec![1, 9, 2], vec![8, 1, 1], vec![2, 2, 7]];
        let mut m = max_weight_matching(&w);
        m.sort_unstable();
        assert_eq!(m, vec![(0, 1), (1, 0), (2, 2)]);
    }
}
