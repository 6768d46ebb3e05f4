//! Estimation of the number of novel classes from labelled probe classes.
//!
//! Probe rows and unlabelled rows are clustered together with constrained
//! k-means for every candidate count `K` in `0..=k_max`, using `L_r + K`
//! clusters with anchor-class rows pinned to their own clusters. Each
//! candidate is scored by clustering accuracy on the validation probe rows
//! and by the mean Silhouette of the unlabelled rows (distances measured
//! against the full clusters, probe rows included, so a novel class absorbed
//! by an anchor cluster is penalized); the two optima are averaged, k-means is rerun at that count, and non-anchor clusters holding
//! too little unlabelled mass are discarded.

use std::collections::BTreeMap;

use ndarray::{concatenate, ArrayView2, Axis};
use rayon::prelude::*;

use crate::dataset::ProbeSplit;
use crate::error::{DtcError, Result};
use crate::kmeans::{constrained_kmeans_restarts, AnchorConstraints, KmeansResult, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::metrics::{clustering_accuracy, silhouette_samples};
use crate::rng::derive_seed;

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_K_MAX: usize = 100;
pub const DEFAULT_N_INIT: usize = 10;
/// Recorded as the CVI when the clustering has fewer than 2 clusters.
pub const UNDEFINED_CVI: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub k_candidate: usize,
    pub probe_acc: f64,
    pub cvi: f64,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport {
    pub sweep: Vec<SweepPoint>,
    pub k_star_acc: usize,
    pub k_star_cvi: usize,
    pub k_hat: usize,
    /// Non-anchor clusters left after outlier removal.
    pub k_final: usize,
    /// Non-anchor clusters in the final run before outlier removal.
    pub k_raw: usize,
    /// (cluster id, unlabelled mass) of removed clusters.
    pub dropped_clusters: Vec<(usize, usize)>,
}

/// Probe rows (features and original class ids) handed to the estimator,
/// already passed through the encoder.
#[derive(Debug, Clone, Copy)]
pub struct ProbeData<'a> {
    pub features: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub k_max: usize,
    pub tau: f64,
    /// Seeded k-means restarts per candidate; the lowest-inertia run is kept.
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            k_max: DEFAULT_K_MAX,
            tau: DEFAULT_TAU,
            n_init: DEFAULT_N_INIT,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

struct Problem {
    data: ndarray::Array2<f64>,
    n_probe: usize,
    constraints: AnchorConstraints,
    validation_rows: Vec<usize>,
    validation_truth: Vec<usize>,
    n_probe_classes: usize,
}

impl Problem {
    fn run(&self, k: usize, seed: u64, cfg: &EstimatorConfig) -> Result<KmeansResult> {
        constrained_kmeans_restarts(
            self.data.view(),
            self.n_probe_classes + k,
            &self.constraints,
            derive_seed(seed, k as u64),
            cfg.n_init,
            cfg.max_iter,
            cfg.tol,
        )
    }

    fn score(&self, k: usize, res: &KmeansResult) -> Result<SweepPoint> {
        let predicted: Vec<usize> = self
            .validation_rows
            .iter()
            .map(|&r| res.assignment[r])
            .collect();
        let (probe_acc, _) = clustering_accuracy(&self.validation_truth, &predicted)?;
        let cvi = match silhouette_samples(self.data.view(), &res.assignment) {
            Ok(scores) => {
                let unl = &scores[self.n_probe..];
                unl.iter().sum::<f64>() / unl.len() as f64
            }
            Err(DtcError::UndefinedIndex(_)) => UNDEFINED_CVI,
            Err(e) => return Err(e),
        };
        Ok(SweepPoint {
            k_candidate: k,
            probe_acc,
            cvi,
            inertia: res.inertia,
        })
    }
}

pub fn estimate_class_count(
    probe: ProbeData<'_>,
    unlabeled: ArrayView2<'_, f64>,
    split: &ProbeSplit,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<EstimationReport> {
    if !(config.tau > 0.0 && config.tau < 1.0) {
        return Err(DtcError::param(format!("tau must lie in (0, 1), got {}", config.tau)));
    }
    if probe.features.nrows() != probe.labels.len() {
        return Err(DtcError::param("probe label count does not match probe rows"));
    }
    if probe.features.ncols() != unlabeled.ncols() {
        return Err(DtcError::param("probe and unlabelled feature dimensions differ"));
    }
    if unlabeled.nrows() == 0 {
        return Err(DtcError::param("no unlabelled rows"));
    }
    let anchor_ids: Vec<usize> = split.anchor_classes.iter().copied().collect();
    let mut anchor_rows = Vec::new();
    let mut anchor_cluster = Vec::new();
    let mut validation_rows = Vec::new();
    let mut validation_truth = Vec::new();
    for (row, &label) in probe.labels.iter().enumerate() {
        if let Ok(idx) = anchor_ids.binary_search(&label) {
            anchor_rows.push(row);
            anchor_cluster.push(idx);
        } else if split.validation_classes.contains(&label) {
            validation_rows.push(row);
            validation_truth.push(label);
        } else {
            return Err(DtcError::param(format!(
                "probe row {row} has class {label}, which is not a probe class"
            )));
        }
    }
    if validation_rows.is_empty() {
        return Err(DtcError::param("validation probe set is empty"));
    }
    let constraints = AnchorConstraints::new(anchor_rows, anchor_cluster, anchor_ids.len())?;
    let problem = Problem {
        data: concatenate(Axis(0), &[probe.features, unlabeled]).expect("same width"),
        n_probe: probe.features.nrows(),
        constraints,
        validation_rows,
        validation_truth,
        n_probe_classes: split.n_probe(),
    };
    if problem.n_probe_classes + config.k_max > problem.data.nrows() {
        return Err(DtcError::param(format!(
            "k_max={} needs {} clusters but only {} rows are available",
            config.k_max,
            problem.n_probe_classes + config.k_max,
            problem.data.nrows()
        )));
    }

    let sweep: Vec<SweepPoint> = (0..=config.k_max)
        .into_par_iter()
        .map(|k| {
            let res = problem.run(k, seed, config)?;
            problem.score(k, &res)
        })
        .collect::<Result<_>>()?;

    let k_star_cvi = argmax_first(sweep.iter().map(|p| p.cvi));
    let k_star_acc = argmax_nearest(sweep.iter().map(|p| p.probe_acc), k_star_cvi);
    let k_hat = (k_star_acc + k_star_cvi).div_ceil(2);

    let final_run = problem.run(k_hat, seed, config)?;
    let n_anchor = problem.constraints.n_anchor_clusters();
    let total = problem.n_probe_classes + k_hat;
    let mut mass: BTreeMap<usize, usize> = (n_anchor..total).map(|c| (c, 0)).collect();
    for &c in &final_run.assignment[problem.n_probe..] {
        if let Some(m) = mass.get_mut(&c) {
            *m += 1;
        }
    }
    let largest = mass.values().copied().max().unwrap_or(0) as f64;
    let threshold = config.tau * largest;
    let dropped_clusters: Vec<(usize, usize)> = mass
        .iter()
        .filter(|(_, &m)| (m as f64) < threshold || m == 0)
        .map(|(&c, &m)| (c, m))
        .collect();
    Ok(EstimationReport {
        k_final: mass.len() - dropped_clusters.len(),
        k_raw: mass.len(),
        sweep,
        k_star_acc,
        k_star_cvi,
        k_hat,
        dropped_clusters,
    })
}

/// Index of the first maximum.
fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Maximizer closest to `anchor`; the smaller index wins equal distances.
/// Probe ACC is flat over every candidate that keeps the validation classes
/// intact, so its ties are resolved toward the CVI optimum.
fn argmax_nearest(values: impl Iterator<Item = f64>, anchor: usize) -> usize {
    let values: Vec<f64> = values.collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == best)
        .map(|(i, _)| i)
        .min_by_key(|&i| (i.abs_diff(anchor), i))
        .unwrap_or(0)
}

pub fn sweep_report_to_csv(report: &EstimationReport) -> String {
    let mut out = String::from("K,probe_acc,cvi,inertia\n");
    for p in &report.sweep {
        out.push_str(&format!("{},{},{},{}\n", p.k_candidate, p.probe_acc, p.cvi, p.inertia));
    }
    out
}

pub fn sweep_from_csv(text: &str) -> Result<Vec<SweepPoint>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "K,probe_acc,cvi,inertia")) => {}
        _ => {
            return Err(DtcError::Parse {
                location: "line 1".into(),
                message: "expected header K,probe_acc,cvi,inertia".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: &str| DtcError::Parse {
            location: format!("line {}", idx + 1),
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(err("expected 4 fields"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| err("invalid number"));
        out.push(SweepPoint {
            k_candidate: f[0].trim().parse().map_err(|_| err("invalid K"))?,
            probe_acc: num(f[1])?,
            cvi: num(f[2])?,
            inertia: num(f[3])?,
        });
    }
    Ok(out)
}
