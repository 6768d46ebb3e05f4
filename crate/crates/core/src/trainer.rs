//! The clustering loop: bottleneck initialization from PCA and k-means,
//! then joint fine-tuning of encoder and prototypes against a periodically
//! refreshed target distribution, in four variants.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::assignment::{
    assignment_backward, consistency_loss, kl_loss, kl_loss_gradients, soft_assign,
    target_distribution, AssignmentMatrix, Prototypes, DEFAULT_ALPHA,
};
use crate::dataset::FeatureMatrix;
use crate::encoder::{argmax, fit_pca, EncoderParams};
use crate::error::{DtcError, Result};
use crate::kmeans::{self, AnchorConstraints, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::optim::{Optimizer, OptimizerKind};
use crate::regularizers::{
    ema_corrected, ema_update, perturb, ramp_weight, EnsembleState, RampSchedule,
    DEFAULT_MOMENTUM, DEFAULT_PERTURB_SIGMA,
};
use crate::rng;

const STREAM_KMEANS: u64 = 0x494e_4954;
const STREAM_SHUFFLE: u64 = 0x5348_4646;
const STREAM_PERTURB: u64 = 0x5049_5649;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    /// Consistency between clean and noise-perturbed predictions.
    Pi,
    /// Consistency between predictions and their temporal ensemble.
    Te,
    /// Targets built from the temporal ensemble instead of the predictions.
    Tep,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Pi, Variant::Te, Variant::Tep];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Pi => "pi",
            Variant::Te => "te",
            Variant::Tep => "tep",
        }
    }

    fn uses_ensemble(self) -> bool {
        matches!(self, Variant::Te | Variant::Tep)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = DtcError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| DtcError::param(format!("unknown variant '{s}' (baseline, pi, te, tep)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub k: usize,
    pub warmup_epochs: usize,
    pub main_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub ema_momentum: f64,
    /// `None` ramps over `warmup_epochs + main_epochs / 2` epochs.
    pub ramp: Option<RampSchedule>,
    pub perturb_sigma: f64,
    pub seed: u64,
    pub bottleneck_dim: usize,
    /// Number of seeded k-means runs at initialization; the lowest inertia wins.
    pub kmeans_restarts: usize,
    pub freeze_trunk: bool,
    pub alpha: f64,
}

impl TrainConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        TrainConfig {
            variant: Variant::Baseline,
            k,
            warmup_epochs: 10,
            main_epochs: 90,
            batch_size: 64,
            learning_rate: 0.05,
            optimizer: OptimizerKind::SGD_MOMENTUM,
            ema_momentum: DEFAULT_MOMENTUM,
            ramp: None,
            perturb_sigma: DEFAULT_PERTURB_SIGMA,
            seed,
            bottleneck_dim: k,
            kmeans_restarts: 10,
            freeze_trunk: false,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.warmup_epochs + self.main_epochs
    }

    pub fn ramp_schedule(&self) -> RampSchedule {
        self.ramp.unwrap_or_else(|| {
            let len = (self.warmup_epochs + self.main_epochs / 2).max(1);
            RampSchedule::new(len as u32).expect("positive ramp length")
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(DtcError::param(format!("k must be at least 2, got {}", self.k)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(DtcError::param("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(DtcError::param("batch size must be positive"));
        }
        if self.bottleneck_dim == 0 {
            return Err(DtcError::param("bottleneck dimension must be positive"));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(DtcError::param("ensemble momentum must lie in [0, 1)"));
        }
        if !(self.perturb_sigma >= 0.0) || !self.perturb_sigma.is_finite() {
            return Err(DtcError::param("perturbation sigma must be finite and non-negative"));
        }
        if !(self.alpha > 0.0) {
            return Err(DtcError::param("alpha must be positive"));
        }
        Ok(())
    }
}

/// State after bottleneck installation and k-means seeding of the prototypes.
#[derive(Debug, Clone)]
pub struct Initialized {
    pub encoder: EncoderParams,
    pub prototypes: Prototypes,
    pub p: AssignmentMatrix,
    pub q: AssignmentMatrix,
    /// Hard k-means labels on the bottlenecked embeddings.
    pub kmeans_assignment: Vec<usize>,
}

pub fn initialize(
    encoder: &EncoderParams,
    unlabeled: &FeatureMatrix,
    config: &TrainConfig,
) -> Result<Initialized> {
    config.validate()?;
    if unlabeled.rows() < config.k {
        return Err(DtcError::param(format!(
            "{} unlabelled rows cannot form {} clusters",
            unlabeled.rows(),
            config.k
        )));
    }
    let trunk = encoder.trunk_forward(unlabeled.values())?;
    let pca = fit_pca(trunk.view(), config.bottleneck_dim)?;
    let encoder = encoder.install_bottleneck(&pca)?;
    let z = encoder.forward_values(unlabeled.values())?;
    let km = kmeans::constrained_kmeans_restarts(
        z.view(),
        config.k,
        &AnchorConstraints::none(),
        rng::derive_seed(config.seed, STREAM_KMEANS),
        config.kmeans_restarts,
        DEFAULT_MAX_ITER,
        DEFAULT_TOL,
    )?;
    let prototypes = Prototypes::new(km.centers, config.alpha)?;
    let p = soft_assign(z.view(), &prototypes)?;
    let q = target_distribution(&p)?;
    Ok(Initialized {
        encoder,
        prototypes,
        p,
        q,
        kmeans_assignment: km.assignment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Main,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Main => "main",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// KL(q || p) over the full set, after the epoch, against the epoch's targets.
    pub kl_loss: f64,
    /// Unweighted consistency loss averaged over the epoch's minibatches.
    pub consistency_loss: f64,
    pub omega: f64,
    /// Hard-assignment counts per cluster after the epoch.
    pub cluster_sizes: Vec<usize>,
    /// Fingerprint of the targets used throughout the epoch.
    pub target_hash: u64,
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub assignments: Vec<usize>,
    pub probabilities: AssignmentMatrix,
    pub prototypes: Prototypes,
    pub encoder: EncoderParams,
    pub warnings: Vec<String>,
}

/// Emitted whenever the targets are (re)built.
#[derive(Debug)]
pub struct TargetRefresh<'a> {
    pub epoch: usize,
    pub predictions: &'a AssignmentMatrix,
    pub ensemble: Option<&'a EnsembleState>,
    pub targets: &'a AssignmentMatrix,
}

pub fn train(
    init: &Initialized,
    unlabeled: &FeatureMatrix,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    train_observed(init, unlabeled, config, |_| {})
}

pub fn train_observed(
    init: &Initialized,
    unlabeled: &FeatureMatrix,
    config: &TrainConfig,
    mut on_refresh: impl FnMut(&TargetRefresh<'_>),
) -> Result<TrainTrace> {
    config.validate()?;
    let x = unlabeled.values();
    let n = x.nrows();
    let k = init.prototypes.k();
    if init.p.rows() != n || init.q.rows() != n || k != config.k {
        return Err(DtcError::param("initialized state does not match the data or config"));
    }
    let mut encoder = init.encoder.clone();
    let mut protos = init.prototypes.clone();
    let n_enc = encoder.n_params();
    let n_trunk = encoder.n_trunk_params();
    let mut flat = encoder.to_flat();
    flat.extend(protos.centers().iter());
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, flat.len());

    let ramp = config.ramp_schedule();
    let mut shuffle_rng = rng::stream(config.seed, STREAM_SHUFFLE);
    let perturb_seed = rng::derive_seed(config.seed, STREAM_PERTURB);
    let mut ensemble = EnsembleState::new(n, k, config.ema_momentum)?;
    let mut q = init.q.clone();
    let mut warnings = Vec::new();
    let mut records = Vec::with_capacity(config.total_epochs());
    let mut order: Vec<usize> = (0..n).collect();
    let mut step: u64 = 0;

    for epoch in 0..config.total_epochs() {
        let phase = if epoch < config.warmup_epochs { Phase::Warmup } else { Phase::Main };
        if phase == Phase::Main {
            let z = encoder.forward_values(x)?;
            let p = soft_assign(z.view(), &protos)?;
            let source = match (config.variant, ensemble.step()) {
                (Variant::Tep, s) if s > 0 => Some(ema_corrected(&ensemble)?),
                _ => None,
            };
            q = refresh_targets(z.view(), &mut protos, p, source, epoch, &mut warnings)?;
            let centers_at = n_enc;
            flat[centers_at..]
                .iter_mut()
                .zip(protos.centers().iter())
                .for_each(|(f, &c)| *f = c);
            let p_now = soft_assign(z.view(), &protos)?;
            on_refresh(&TargetRefresh {
                epoch,
                predictions: &p_now,
                ensemble: (config.variant.uses_ensemble() && ensemble.step() > 0)
                    .then_some(&ensemble),
                targets: &q,
            });
        }
        let omega = ramp_weight(&ramp, epoch as u32);
        let ensemble_targets = match config.variant {
            Variant::Te if ensemble.step() > 0 => Some(ema_corrected(&ensemble)?),
            _ => None,
        };

        order.shuffle(&mut shuffle_rng);
        let mut consistency_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let cache = encoder.forward_cached(xb.view())?;
            let zb = &cache.output;
            let qb = q.select_rows(chunk);
            let (mut gz, mut gmu) = kl_loss_gradients(zb.view(), &protos, &qb)?;

            let reference = match config.variant {
                Variant::Pi => {
                    let xp = perturb(&xb, config.perturb_sigma, perturb_seed, step);
                    let zp = encoder.forward_values(xp.view())?;
                    Some(soft_assign(zp.view(), &protos)?)
                }
                Variant::Te => ensemble_targets.as_ref().map(|e| e.select_rows(chunk)),
                _ => None,
            };
            if let Some(reference) = reference {
                let pb = soft_assign(zb.view(), &protos)?;
                let (loss, grad_p) = consistency_loss(&pb, &reference)?;
                consistency_sum += loss;
                let (cz, cmu) =
                    assignment_backward(zb.view(), &protos, &pb, (grad_p * omega).view())?;
                gz += &cz;
                gmu += &cmu;
            }
            n_batches += 1;

            let (grads, _) = encoder.backward_cached(&cache, gz.view())?;
            let mut g = grads.to_flat();
            if config.freeze_trunk {
                g[..n_trunk].iter_mut().for_each(|v| *v = 0.0);
            }
            g.extend(gmu.iter());
            opt.step(&mut flat, &g);
            encoder.set_flat(&flat[..n_enc]);
            protos
                .centers_mut()
                .iter_mut()
                .zip(&flat[n_enc..])
                .for_each(|(c, &v)| *c = v);
            step += 1;
        }

        let z = encoder.forward_values(x)?;
        let p = soft_assign(z.view(), &protos)?;
        let kl = kl_loss(&q, &p)?;
        if !kl.is_finite() || flat.iter().any(|v| !v.is_finite()) {
            return Err(DtcError::Training {
                epoch,
                message: "non-finite parameters or loss".into(),
            });
        }
        let mut cluster_sizes = vec![0usize; k];
        for label in p.hard_labels() {
            cluster_sizes[label] += 1;
        }
        records.push(EpochRecord {
            epoch,
            phase,
            kl_loss: kl,
            consistency_loss: consistency_sum / n_batches.max(1) as f64,
            omega,
            cluster_sizes,
            target_hash: matrix_hash(q.probs()),
        });
        if config.variant.uses_ensemble() {
            ensemble = ema_update(&ensemble, &p)?;
        }
    }

    let (assignments, probabilities) = predict(&encoder, &protos, unlabeled)?;
    Ok(TrainTrace {
        epochs: records,
        assignments,
        probabilities,
        prototypes: protos,
        encoder,
        warnings,
    })
}

/// Builds q from `source` (or `p` when absent). A cluster with no mass has
/// its prototype moved onto the embedding farthest from its nearest
/// prototype, after which the targets are rebuilt from fresh predictions.
fn refresh_targets(
    z: ArrayView2<f64>,
    protos: &mut Prototypes,
    p: AssignmentMatrix,
    source: Option<AssignmentMatrix>,
    epoch: usize,
    warnings: &mut Vec<String>,
) -> Result<AssignmentMatrix> {
    let mut basis = source.unwrap_or(p);
    for _ in 0..=protos.k() {
        match target_distribution(&basis) {
            Ok(q) => return Ok(q),
            Err(DtcError::DegenerateCluster(c)) => {
                let far = farthest_from_prototypes(z, protos);
                protos.centers_mut().row_mut(c).assign(&z.row(far));
                warnings.push(format!(
                    "epoch {epoch}: cluster {c} lost all mass; prototype reseeded at row {far}"
                ));
                basis = soft_assign(z, protos)?;
            }
            Err(e) => return Err(e),
        }
    }
    Err(DtcError::Training {
        epoch,
        message: "could not recover from degenerate clusters".into(),
    })
}

fn farthest_from_prototypes(z: ArrayView2<f64>, protos: &Prototypes) -> usize {
    let centers = protos.centers();
    let nearest = z.rows().into_iter().map(|row| {
        centers
            .rows()
            .into_iter()
            .map(|mu| row.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    });
    argmax(nearest)
}

/// FNV-1a over the bit patterns of the entries.
fn matrix_hash(m: ArrayView2<f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in m.iter() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Row-wise argmax of the soft assignments (lowest index on ties).
pub fn predict(
    encoder: &EncoderParams,
    protos: &Prototypes,
    batch: &FeatureMatrix,
) -> Result<(Vec<usize>, AssignmentMatrix)> {
    let z = encoder.forward_values(batch.values())?;
    if z.ncols() != protos.dim() {
        return Err(DtcError::param(format!(
            "embedding dimension {} does not match prototypes {}",
            z.ncols(),
            protos.dim()
        )));
    }
    let p = soft_assign(z.view(), protos)?;
    Ok((p.hard_labels(), p))
}

pub fn trace_to_csv(trace: &TrainTrace) -> String {
    let mut out = String::from("epoch,phase,kl_loss,consistency_loss,omega\n");
    for r in &trace.epochs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            r.phase.as_str(),
            r.kl_loss,
            r.consistency_loss,
            r.omega
        ));
    }
    out
}

pub fn assignments_to_csv(ids: &[String], clusters: &[usize]) -> String {
    let mut out = String::from("id,cluster\n");
    for (id, c) in ids.iter().zip(clusters) {
        out.push_str(&format!("{id},{c}\n"));
    }
    out
}

/// Full-batch objective used by gradient checks: mean KL against fixed `q`
/// plus `omega` times consistency against a fixed reference.
pub fn objective(
    encoder: &EncoderParams,
    protos: &Prototypes,
    x: ArrayView2<f64>,
    q: &AssignmentMatrix,
    reference: Option<&AssignmentMatrix>,
    omega: f64,
) -> Result<f64> {
    let z = encoder.forward_values(x)?;
    let p = soft_assign(z.view(), protos)?;
    let mut loss = kl_loss(q, &p)?;
    if let Some(r) = reference {
        loss += omega * consistency_loss(&p, r)?.0;
    }
    Ok(loss)
}

/// Analytic gradient of [`objective`], flattened as encoder parameters then
/// prototype centers.
pub fn objective_gradient(
    encoder: &EncoderParams,
    protos: &Prototypes,
    x: ArrayView2<f64>,
    q: &AssignmentMatrix,
    reference: Option<&AssignmentMatrix>,
    omega: f64,
) -> Result<Vec<f64>> {
    let cache = encoder.forward_cached(x)?;
    let z = &cache.output;
    let (mut gz, mut gmu) = kl_loss_gradients(z.view(), protos, q)?;
    if let Some(r) = reference {
        let p = soft_assign(z.view(), protos)?;
        let (_, grad_p) = consistency_loss(&p, r)?;
        let (cz, cmu) = assignment_backward(z.view(), protos, &p, (grad_p * omega).view())?;
        gz += &cz;
        gmu += &cmu;
    }
    let (grads, _) = encoder.backward_cached(&cache, gz.view())?;
    let mut g = grads.to_flat();
    g.extend(gmu.iter());
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_mixture;
    use crate::encoder::{pretrain_encoder, PretrainConfig};
    use crate::metrics::clustering_accuracy;
    use ndarray::array;

    struct Setup {
        encoder: EncoderParams,
        unlabeled: FeatureMatrix,
        truth: Vec<usize>,
    }

    fn setup(sep: f64, seed: u64) -> Setup {
        let data = synth_mixture(5, 5, 60, 20, sep, seed).unwrap();
        let pre = pretrain_encoder(
            &data.labeled,
            &PretrainConfig {
                epochs: 10,
                ..PretrainConfig::default()
            },
            seed,
        )
        .unwrap();
        Setup {
            encoder: pre.encoder,
            unlabeled: data.unlabeled,
            truth: data.unlabeled_truth,
        }
    }

    fn short_config(variant: Variant, seed: u64) -> TrainConfig {
        TrainConfig {
            variant,
            warmup_epochs: 3,
            main_epochs: 7,
            ..TrainConfig::new(5, seed)
        }
    }

    #[test]
    fn variant_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("dec".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::new(1, 0).validate().is_err());
        let mut c = TrainConfig::new(3, 0);
        assert_eq!(c.bottleneck_dim, 3);
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let c = TrainConfig::new(3, 0);
        assert_eq!(c.ramp_schedule().total_ramp_steps(), 55);
    }

    #[test]
    fn initialize_installs_k_dim_bottleneck() {
        let s = setup(6.0, 1);
        let cfg = TrainConfig::new(5, 1);
        let init = initialize(&s.encoder, &s.unlabeled, &cfg).unwrap();
        assert_eq!(init.encoder.output_dim(), 5);
        assert_eq!(init.prototypes.k(), 5);
        assert_eq!(init.prototypes.dim(), 5);
        let acc = clustering_accuracy(&s.truth, &init.kmeans_assignment).unwrap().0;
        assert!(acc >= 0.9, "initial k-means ACC {acc}");
        assert!(initialize(&init.encoder, &s.unlabeled, &cfg).is_err());
    }

    #[test]
    fn identity_trunk_matches_raw_kmeans() {
        let data = synth_mixture(2, 4, 40, 6, 6.0, 9).unwrap();
        let x = data.unlabeled;
        let cfg = TrainConfig {
            bottleneck_dim: 6,
            ..TrainConfig::new(4, 9)
        };
        let init = initialize(&EncoderParams::identity(6), &x, &cfg).unwrap();
        let raw = kmeans::constrained_kmeans_restarts(
            x.values(),
            4,
            &AnchorConstraints::none(),
            rng::derive_seed(9, STREAM_KMEANS),
            cfg.kmeans_restarts,
            DEFAULT_MAX_ITER,
            DEFAULT_TOL,
        )
        .unwrap();
        let agreement = clustering_accuracy(&raw.assignment, &init.kmeans_assignment).unwrap().0;
        assert_eq!(agreement, 1.0);
    }

    #[test]
    fn no_training_returns_initial_argmax() {
        let s = setup(6.0, 2);
        let cfg = TrainConfig {
            warmup_epochs: 0,
            main_epochs: 0,
            ..TrainConfig::new(5, 2)
        };
        let init = initialize(&s.encoder, &s.unlabeled, &cfg).unwrap();
        let trace = train(&init, &s.unlabeled, &cfg).unwrap();
        assert!(trace.epochs.is_empty());
        assert_eq!(trace.assignments, init.p.hard_labels());
    }

    #[test]
    fn trace_shape_and_warmup_freezes_targets() {
        let s = setup(6.0, 3);
        let cfg = short_config(Variant::Baseline, 3);
        let init = initialize(&s.encoder, &s.unlabeled, &cfg).unwrap();
        let trace = train(&init, &s.unlabeled, &cfg).unwrap();
        assert_eq!(trace.epochs.len(), 10);
        let init_hash = matrix_hash(init.q.probs());
        for r in &trace.epochs[..3] {
            assert_eq!(r.phase, Phase::Warmup);
            assert_eq!(r.target_hash, init_hash);
        }
        assert_eq!(trace.epochs[3].phase, Phase::Main);
        assert_ne!(trace.epochs[3].target_hash, init_hash);
        assert!(trace.assignments.iter().all(|&c| c < 5));
        assert_eq!(trace.assignments.len(), s.unlabeled.rows());
        for r in &trace.epochs {
            assert_eq!(r.cluster_sizes.iter().sum::<usize>(), s.unlabeled.rows());
            assert_eq!(r.consistency_loss, 0.0);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let s = setup(3.0, 4);
        for variant in Variant::ALL {
            let cfg = short_config(variant, 4);
            let init = initialize(&s.encoder, &s.unlabeled, &cfg).unwrap();
            let a = train(&init, &s.unlabeled, &cfg).unwrap();
            let b = train(&init, &s.unlabeled, &cfg).unwrap();
            assert_eq!(a.epochs, b.epochs, "{variant}");
            assert_eq!(a.assignments, b.assignments);
            assert_eq!(a.encoder, b.encoder);
            assert_eq!(a.prototypes, b.prototypes);
        }
    }

    #[test]
    fn pi_without_noise_equals_baseline() {
        let s = setup(3.0, 5);
        let base = short_config(Variant::Baseline, 5);
        let pi = TrainConfig {
            perturb_sigma: 0.0,
            ..short_config(Variant::Pi, 5)
        };
        let init = initialize(&s.encoder, &s.unlabeled, &base).unwrap();
        let a = train(&init, &s.unlabeled, &base).unwrap();
        let b = train(&init, &s.unlabeled, &pi).unwrap();
        assert_eq!(a.epochs, b.epochs);
        assert!(b.epochs.iter().all(|r| r.consistency_loss == 0.0));
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn consistency_variants_report_a_penalty() {
        let s = setup(3.0, 6);
        for variant in [Variant::Pi, Variant::Te] {
            let cfg = short_config(variant, 6);
            let init = initialize(&s.encoder, &s.unlabeled, &cfg).unwrap();
            let trace = train(&init, &s.unlabeled, &cfg).unwrap();
            let first = if variant == Variant::Te { 1 } else { 0 };
            assert_eq!(trace.epochs[0].consistency_loss == 0.0, variant == Variant::Te);
            assert!(trace.epochs[first..].iter().all(|r| r.consistency_loss > 0.0));
        }
    }

    #[test]
    fn tep_targets_come_from_the_ensemble() {
        let s = setup(3.0, 7);
        let cfg = short_config(Variant::Tep, 7);
        let init = initialize(&s.encoder, &s.unlabeled, &cfg).unwrap();
        let mut checked = 0;
        train_observed(&init, &s.unlabeled, &cfg, |ev| {
            let state = ev.ensemble.expect("ensemble has steps after warm-up");
            assert_eq!(state.step() as usize, ev.epoch);
            let expected = target_distribution(&ema_corrected(state).unwrap()).unwrap();
            assert_eq!(ev.targets, &expected);
            let from_p = target_distribution(ev.predictions).unwrap();
            assert_ne!(ev.targets, &from_p);
            checked += 1;
        })
        .unwrap();
        assert_eq!(checked, 7);
    }

    #[test]
    fn baseline_targets_come_from_predictions() {
        let s = setup(3.0, 8);
        let cfg = short_config(Variant::Baseline, 8);
        let init = initialize(&s.encoder, &s.unlabeled, &cfg).unwrap();
        train_observed(&init, &s.unlabeled, &cfg, |ev| {
            assert!(ev.ensemble.is_none());
            assert_eq!(ev.targets, &target_distribution(ev.predictions).unwrap());
        })
        .unwrap();
    }

    #[test]
    fn frozen_trunk_only_moves_the_bottleneck() {
        let s = setup(3.0, 10);
        let cfg = TrainConfig {
            freeze_trunk: true,
            ..short_config(Variant::Baseline, 10)
        };
        let init = initialize(&s.encoder, &s.unlabeled, &cfg).unwrap();
        let trace = train(&init, &s.unlabeled, &cfg).unwrap();
        assert_eq!(trace.encoder.layers(), init.encoder.layers());
        assert_ne!(trace.encoder.bottleneck(), init.encoder.bottleneck());
    }

    #[test]
    fn predict_rules() {
        let protos = Prototypes::new(array![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 1.0).unwrap();
        let enc = EncoderParams::identity(2);
        let batch = FeatureMatrix::from_values(array![[10.0, 0.1], [5.0, 5.0], [0.0, 0.0]]).unwrap();
        let (labels, p) = predict(&enc, &protos, &batch).unwrap();
        assert_eq!(labels, vec![1, 0, 0]);
        assert_eq!(p.rows(), 3);
        let wrong = FeatureMatrix::from_values(array![[1.0, 2.0, 3.0]]).unwrap();
        assert!(predict(&enc, &protos, &wrong).is_err());
    }

    #[test]
    fn predict_matches_trace_assignments() {
        let s = setup(6.0, 11);
        let cfg = short_config(Variant::Te, 11);
        let init = initialize(&s.encoder, &s.unlabeled, &cfg).unwrap();
        let trace = train(&init, &s.unlabeled, &cfg).unwrap();
        let (labels, _) = predict(&trace.encoder, &trace.prototypes, &s.unlabeled).unwrap();
        assert_eq!(labels, trace.assignments);
    }

    #[test]
    fn degenerate_cluster_is_reseeded() {
        let z = array![[0.0], [0.1], [5.0], [9.0]];
        let mut protos = Prototypes::new(array![[0.0], [1e300]], 1.0).unwrap();
        let p = soft_assign(z.view(), &protos).unwrap();
        let mut warnings = Vec::new();
        let q = refresh_targets(z.view(), &mut protos, p, None, 4, &mut warnings).unwrap();
        assert_eq!(protos.centers()[[1, 0]], 9.0);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("cluster 1"));
        assert_eq!(q.rows(), 4);
    }

    #[test]
    fn trace_csv_layout() {
        let s = setup(6.0, 12);
        let cfg = TrainConfig {
            warmup_epochs: 1,
            main_epochs: 1,
            ..TrainConfig::new(5, 12)
        };
        let init = initialize(&s.encoder, &s.unlabeled, &cfg).unwrap();
        let trace = train(&init, &s.unlabeled, &cfg).unwrap();
        let csv = trace_to_csv(&trace);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,phase,kl_loss,consistency_loss,omega");
        assert!(lines[1].starts_with("0,warmup,"));
        assert!(lines[2].starts_with("1,main,"));
        let a = assignments_to_csv(s.unlabeled.ids(), &trace.assignments);
        assert_eq!(a.lines().count(), s.unlabeled.rows() + 1);
    }
}
