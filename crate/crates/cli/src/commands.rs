use std::fs;
use std::path::{Path, PathBuf};

use dtc_core::dataset::{load_features, read_feature_file, save_features, split_probes, synth_mixture};
use dtc_core::encoder::{pretrain_encoder, PretrainConfig};
use dtc_core::estimator::{
    estimate_class_count, sweep_report_to_csv, EstimationReport, EstimatorConfig, ProbeData,
};
use dtc_core::metrics::{count_error, evaluate, EvalReport};
use dtc_core::optim::OptimizerKind;
use dtc_core::trainer::{initialize, train, trace_to_csv, TrainConfig, Variant};
use dtc_core::{EncoderParams, FeatureFormat, FeatureMatrix, LabeledSet};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::manifest::{sha256_file, FileDigest, RunManifest};
use crate::tables::{join, read_id_table, write_id_table};

/// Files touched by one command, used to fill its manifest.
struct Run {
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    out_dir: PathBuf,
}

pub fn run(command: Command) -> CliResult<()> {
    let (name, config) = match command {
        Command::Synth(a) => ("synth", to_table(&a)?),
        Command::Pretrain(mut a) => {
            a.split_seed = Some(a.split_seed.unwrap_or(a.seed));
            ("pretrain", to_table(&a)?)
        }
        Command::Cluster(mut a) => {
            a.estimate.split_seed = Some(a.estimate.split_seed.unwrap_or(a.train.seed));
            ("cluster", to_table(&a)?)
        }
        Command::EstimateK(mut a) => {
            a.estimate.split_seed = Some(a.estimate.split_seed.unwrap_or(a.seed));
            ("estimate-k", to_table(&a)?)
        }
        Command::Eval(a) => ("eval", to_table(&a)?),
        Command::Sweep(a) => ("sweep", to_table(&a)?),
        Command::Replay(a) => return replay(&a),
    };
    execute(name, config).map(|_| ())
}

fn to_table<T: Serialize>(args: &T) -> CliResult<toml::Table> {
    toml::Table::try_from(args).map_err(|e| CliError::Data(format!("cannot encode config: {e}")))
}

fn from_table<T: DeserializeOwned>(config: &toml::Table) -> CliResult<T> {
    config
        .clone()
        .try_into()
        .map_err(|e| CliError::Data(format!("invalid recorded config: {e}")))
}

fn execute(name: &str, config: toml::Table) -> CliResult<RunManifest> {
    let run = match name {
        "synth" => synth(&from_table(&config)?)?,
        "pretrain" => pretrain(&from_table(&config)?)?,
        "cluster" => cluster(&from_table(&config)?)?,
        "estimate-k" => estimate(&from_table(&config)?)?,
        "eval" => eval(&from_table(&config)?)?,
        "sweep" => sweep(&from_table(&config)?)?,
        other => return Err(CliError::Data(format!("unknown command '{other}' in manifest"))),
    };
    let digests = |paths: &[PathBuf]| paths.iter().map(|p| FileDigest::of(p)).collect::<CliResult<Vec<_>>>();
    let manifest = RunManifest {
        command: name.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: run.seed,
        inputs: digests(&run.inputs)?,
        outputs: digests(&run.outputs)?,
        config,
    };
    manifest.write(&run.out_dir)?;
    Ok(manifest)
}

fn replay(args: &ReplayArgs) -> CliResult<()> {
    let recorded = RunManifest::read(&args.manifest)?;
    for input in &recorded.inputs {
        let now = sha256_file(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(CliError::Data(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let mut config = recorded.config.clone();
    if let Some(out) = &args.out {
        config.insert("out".into(), toml::Value::String(out.display().to_string()));
    }
    let rerun = execute(&recorded.command, config)?;
    let mut differing = Vec::new();
    for old in &recorded.outputs {
        let name = old.file_name();
        match rerun.outputs.iter().find(|o| o.file_name() == name) {
            Some(new) if new.sha256 == old.sha256 => {}
            _ => differing.push(name),
        }
    }
    if !differing.is_empty() {
        return Err(CliError::Data(format!(
            "replay of {} produced different outputs: {}",
            recorded.command,
            differing.join(", ")
        )));
    }
    println!(
        "replay of {}: {} output(s) identical",
        recorded.command,
        recorded.outputs.len()
    );
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = toml::to_string(value).map_err(|e| CliError::Data(format!("cannot encode report: {e}")))?;
    write_text(path, &text)
}

fn load_encoder(path: &Path) -> CliResult<EncoderParams> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(EncoderParams::from_checkpoint(&bytes)?)
}

fn load_unlabeled(path: &Path) -> CliResult<FeatureMatrix> {
    Ok(load_features(path, FeatureFormat::from_path(path))?)
}

fn load_labeled(path: &Path) -> CliResult<LabeledSet> {
    Ok(read_feature_file(path, FeatureFormat::from_path(path))?.into_labeled()?)
}

fn optimizer(arg: OptimizerArg) -> OptimizerKind {
    match arg {
        OptimizerArg::Sgd => OptimizerKind::SGD_MOMENTUM,
        OptimizerArg::Adam => OptimizerKind::ADAM,
    }
}

fn variant(arg: VariantArg) -> Variant {
    match arg {
        VariantArg::Baseline => Variant::Baseline,
        VariantArg::Pi => Variant::Pi,
        VariantArg::Te => Variant::Te,
        VariantArg::Tep => Variant::Tep,
    }
}

fn train_config(opts: &TrainOpts, k: usize, bottleneck: Option<usize>) -> TrainConfig {
    TrainConfig {
        variant: variant(opts.variant),
        warmup_epochs: opts.warmup,
        main_epochs: opts.epochs,
        batch_size: opts.batch_size,
        learning_rate: opts.lr,
        optimizer: optimizer(opts.optimizer),
        ema_momentum: opts.ema_momentum,
        perturb_sigma: opts.sigma,
        bottleneck_dim: bottleneck.or(opts.bottleneck).unwrap_or(k),
        kmeans_restarts: opts.kmeans_restarts,
        freeze_trunk: opts.freeze_trunk,
        ..TrainConfig::new(k, opts.seed)
    }
}

fn synth(a: &SynthArgs) -> CliResult<Run> {
    create_dir(&a.out)?;
    let data = synth_mixture(a.labeled_classes, a.unlabeled_classes, a.per_class, a.dim, a.sep, a.seed)?;
    let (format, ext) = match a.format {
        FormatArg::Csv => (FeatureFormat::Csv, "csv"),
        FormatArg::Binary => (FeatureFormat::Binary, "bin"),
    };
    let labeled = a.out.join(format!("labeled.{ext}"));
    let unlabeled = a.out.join(format!("unlabeled.{ext}"));
    let truth = a.out.join("truth.csv");
    save_features(&labeled, format, data.labeled.features(), Some(data.labeled.labels()))?;
    save_features(&unlabeled, format, &data.unlabeled, None)?;
    write_id_table(&truth, "label", data.unlabeled.ids(), &data.unlabeled_truth)?;
    println!(
        "wrote {} labelled and {} unlabelled rows to {}",
        data.labeled.features().rows(),
        data.unlabeled.rows(),
        a.out.display()
    );
    Ok(Run {
        seed: Some(a.seed),
        inputs: vec![],
        outputs: vec![labeled, unlabeled, truth],
        out_dir: a.out.clone(),
    })
}

fn pretrain(a: &PretrainArgs) -> CliResult<Run> {
    create_dir(&a.out)?;
    let set = load_labeled(&a.labeled)?;
    let train_set = if a.n_probe > 0 {
        let split = split_probes(&set, a.n_probe, a.anchor_ratio, a.split_seed.unwrap_or(a.seed))?;
        set.restrict(&split.training_classes)?
    } else {
        set
    };
    let config = PretrainConfig {
        hidden: a.hidden.clone(),
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        optimizer: optimizer(a.optimizer),
    };
    let pre = pretrain_encoder(&train_set, &config, a.seed)?;
    let encoder = a.out.join("encoder.dtce");
    let losses = a.out.join("pretrain_loss.csv");
    fs::write(&encoder, pre.encoder.to_checkpoint()).map_err(|e| CliError::io(&encoder, e))?;
    let mut text = String::from("epoch,loss\n");
    for (epoch, loss) in pre.epoch_losses.iter().enumerate() {
        text.push_str(&format!("{epoch},{loss}\n"));
    }
    write_text(&losses, &text)?;
    let acc = pre.head_accuracy(train_set.features().values(), train_set.labels())?;
    println!(
        "pretrained on {} classes ({} rows): final loss {:.4}, training accuracy {:.4}",
        train_set.n_classes(),
        train_set.features().rows(),
        pre.epoch_losses.last().copied().unwrap_or(f64::NAN),
        acc
    );
    Ok(Run {
        seed: Some(a.seed),
        inputs: vec![a.labeled.clone()],
        outputs: vec![encoder, losses],
        out_dir: a.out.clone(),
    })
}

fn run_estimator(
    encoder: &EncoderParams,
    set: &LabeledSet,
    unlabeled: &FeatureMatrix,
    opts: &EstimateOpts,
    seed: u64,
) -> CliResult<EstimationReport> {
    let split = split_probes(set, opts.n_probe, opts.anchor_ratio, opts.split_seed.unwrap_or(seed))?;
    let rows = set.rows_of(&split.probe_classes());
    let probe_features = encoder.trunk_forward(set.features().select(&rows).values())?;
    let probe_labels: Vec<usize> = rows.iter().map(|&r| set.labels()[r]).collect();
    let unlabeled_features = encoder.trunk_forward(unlabeled.values())?;
    let config = EstimatorConfig {
        k_max: opts.k_max,
        tau: opts.tau,
        n_init: opts.n_init,
        ..EstimatorConfig::default()
    };
    Ok(estimate_class_count(
        ProbeData {
            features: probe_features.view(),
            labels: &probe_labels,
        },
        unlabeled_features.view(),
        &split,
        &config,
        seed,
    )?)
}

#[derive(Serialize, Deserialize)]
struct EstimateSummary {
    k_star_acc: usize,
    k_star_cvi: usize,
    k_hat: usize,
    k_final: usize,
    k_raw: usize,
    /// (cluster, unlabelled rows) pairs removed as outliers.
    dropped: Vec<[usize; 2]>,
}

impl From<&EstimationReport> for EstimateSummary {
    fn from(r: &EstimationReport) -> Self {
        EstimateSummary {
            k_star_acc: r.k_star_acc,
            k_star_cvi: r.k_star_cvi,
            k_hat: r.k_hat,
            k_final: r.k_final,
            k_raw: r.k_raw,
            dropped: r.dropped_clusters.iter().map(|&(c, m)| [c, m]).collect(),
        }
    }
}

fn estimate(a: &EstimateArgs) -> CliResult<Run> {
    create_dir(&a.out)?;
    let encoder = load_encoder(&a.encoder)?;
    let set = load_labeled(&a.labeled)?;
    let unlabeled = load_unlabeled(&a.unlabeled)?;
    let report = run_estimator(&encoder, &set, &unlabeled, &a.estimate, a.seed)?;
    let sweep = a.out.join("sweep.csv");
    let summary = a.out.join("estimate.toml");
    write_text(&sweep, &sweep_report_to_csv(&report))?;
    write_toml(&summary, &EstimateSummary::from(&report))?;
    println!(
        "K*_acc = {}, K*_cvi = {}, k_hat = {}, k_final = {}",
        report.k_star_acc, report.k_star_cvi, report.k_hat, report.k_final
    );
    Ok(Run {
        seed: Some(a.seed),
        inputs: vec![a.encoder.clone(), a.labeled.clone(), a.unlabeled.clone()],
        outputs: vec![sweep, summary],
        out_dir: a.out.clone(),
    })
}

#[derive(Serialize, Deserialize)]
struct ClusterSummary {
    variant: String,
    k: usize,
    bottleneck_dim: usize,
    final_kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<EstimateSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kmeans_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nmi: Option<f64>,
    warnings: Vec<String>,
}

fn truth_for(ids: &[String], path: &Path) -> CliResult<Vec<usize>> {
    join(ids, &read_id_table(path)?, "truth")
}

fn cluster(a: &ClusterArgs) -> CliResult<Run> {
    create_dir(&a.out)?;
    let encoder = load_encoder(&a.encoder)?;
    let unlabeled = load_unlabeled(&a.unlabeled)?;
    let truth = a.truth.as_deref().map(|p| truth_for(unlabeled.ids(), p)).transpose()?;
    let mut inputs = vec![a.encoder.clone(), a.unlabeled.clone()];
    let mut outputs = Vec::new();

    let (k, estimate) = match (a.k, a.auto_k, &a.labeled) {
        (Some(k), false, _) => (k, None),
        (None, true, Some(labeled)) => {
            inputs.push(labeled.clone());
            let set = load_labeled(labeled)?;
            let report = run_estimator(&encoder, &set, &unlabeled, &a.estimate, a.train.seed)?;
            let sweep = a.out.join("estimate_sweep.csv");
            write_text(&sweep, &sweep_report_to_csv(&report))?;
            outputs.push(sweep);
            println!("estimated k_hat = {}, k_final = {}", report.k_hat, report.k_final);
            if report.k_final < 2 {
                return Err(CliError::Data(format!(
                    "estimated cluster count {} is below 2",
                    report.k_final
                )));
            }
            (report.k_final, Some(EstimateSummary::from(&report)))
        }
        _ => return Err(CliError::Usage("give either --k or --auto-k with --labeled".into())),
    };
    if let Some(t) = &a.truth {
        inputs.push(t.clone());
    }

    let config = train_config(&a.train, k, None);
    let init = initialize(&encoder, &unlabeled, &config)?;
    let trace = train(&init, &unlabeled, &config)?;
    for w in &trace.warnings {
        eprintln!("warning: {w}");
    }
    let scores = truth
        .as_ref()
        .map(|t| -> CliResult<(EvalReport, EvalReport)> {
            Ok((evaluate(t, &trace.assignments)?, evaluate(t, &init.kmeans_assignment)?))
        })
        .transpose()?;

    let assignments = a.out.join("assignments.csv");
    let trace_path = a.out.join("trace.csv");
    let summary_path = a.out.join("report.toml");
    write_id_table(&assignments, "cluster", unlabeled.ids(), &trace.assignments)?;
    write_text(&trace_path, &trace_to_csv(&trace))?;
    let summary = ClusterSummary {
        variant: config.variant.to_string(),
        k,
        bottleneck_dim: config.bottleneck_dim,
        final_kl: trace.epochs.last().map(|r| r.kl_loss),
        estimate,
        kmeans_acc: scores.as_ref().map(|(_, km)| km.acc),
        acc: scores.as_ref().map(|(r, _)| r.acc),
        nmi: scores.as_ref().map(|(r, _)| r.nmi),
        warnings: trace.warnings.clone(),
    };
    write_toml(&summary_path, &summary)?;
    outputs.extend([assignments, trace_path, summary_path]);

    match &scores {
        Some((r, km)) => println!(
            "{} k={k}: ACC {:.4}, NMI {:.4} (k-means initialization ACC {:.4})",
            config.variant, r.acc, r.nmi, km.acc
        ),
        None => println!("{} k={k}: clustered {} rows", config.variant, unlabeled.rows()),
    }
    Ok(Run {
        seed: Some(a.train.seed),
        inputs,
        outputs,
        out_dir: a.out.clone(),
    })
}

fn eval(a: &EvalArgs) -> CliResult<Run> {
    create_dir(&a.out)?;
    let assigned = read_id_table(&a.assignments)?;
    let ids: Vec<String> = assigned.iter().map(|(id, _)| id.clone()).collect();
    let predicted: Vec<usize> = assigned.iter().map(|&(_, c)| c).collect();
    let truth = truth_for(&ids, &a.truth)?;
    let report = evaluate(&truth, &predicted)?;
    let distinct = |v: &[usize]| v.iter().collect::<std::collections::BTreeSet<_>>().len();
    let err = count_error(distinct(&truth), distinct(&predicted));
    let (name, text) = match a.format {
        ReportFormat::Csv => (
            "eval.csv",
            format!(
                "acc,nmi,count_error,n_points\n{},{},{},{}\n",
                report.acc, report.nmi, err, report.n_points
            ),
        ),
        ReportFormat::Text => (
            "eval.txt",
            format!(
                "ACC {:.6}\nNMI {:.6}\ncount error {}\npoints {}\n",
                report.acc, report.nmi, err, report.n_points
            ),
        ),
    };
    print!("{text}");
    let path = a.out.join(name);
    write_text(&path, &text)?;
    Ok(Run {
        seed: None,
        inputs: vec![a.assignments.clone(), a.truth.clone()],
        outputs: vec![path],
        out_dir: a.out.clone(),
    })
}

fn sweep(a: &SweepArgs) -> CliResult<Run> {
    if a.values.is_empty() {
        return Err(CliError::Usage("--values needs at least one value".into()));
    }
    let points: Vec<(usize, TrainConfig)> = match a.sweep {
        SweepKind::Bottleneck => {
            let k = a
                .k
                .ok_or_else(|| CliError::Usage("--k is required for a bottleneck sweep".into()))?;
            a.values.iter().map(|&c| (c, train_config(&a.train, k, Some(c)))).collect()
        }
        SweepKind::K => a.values.iter().map(|&k| (k, train_config(&a.train, k, None))).collect(),
    };
    create_dir(&a.out)?;
    let encoder = load_encoder(&a.encoder)?;
    let unlabeled = load_unlabeled(&a.unlabeled)?;
    let truth = truth_for(unlabeled.ids(), &a.truth)?;
    let results: Vec<(usize, EvalReport)> = points
        .par_iter()
        .map(|(value, config)| -> CliResult<(usize, EvalReport)> {
            let init = initialize(&encoder, &unlabeled, config)?;
            let trace = train(&init, &unlabeled, config)?;
            Ok((*value, evaluate(&truth, &trace.assignments)?))
        })
        .collect::<CliResult<_>>()?;
    let column = match a.sweep {
        SweepKind::Bottleneck => "bottleneck",
        SweepKind::K => "k",
    };
    let mut text = format!("{column},acc,nmi\n");
    for (value, r) in &results {
        text.push_str(&format!("{value},{},{}\n", r.acc, r.nmi));
        println!("{column}={value}: ACC {:.4}, NMI {:.4}", r.acc, r.nmi);
    }
    let path = a.out.join("sweep.csv");
    write_text(&path, &text)?;
    Ok(Run {
        seed: Some(a.train.seed),
        inputs: vec![a.encoder.clone(), a.unlabeled.clone(), a.truth.clone()],
        outputs: vec![path],
        out_dir: a.out.clone(),
    })
}
