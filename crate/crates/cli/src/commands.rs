use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anomalyzer_core::anomalyzer::{
    default_theta_grid, fit, tune_thresholds, validate_settings, AnomalyzerModel,
    DEFAULT_GRID_SIZE, DEFAULT_MIN_CORRUPT_CELLS, DEFAULT_THETA,
};
use anomalyzer_core::baselines::{
    features, grid_search, write_grid_report, BaselineDetector, BaselineKind, ParamGrid,
    SmoOptions, DEFAULT_FEATURE_GRID,
};
use anomalyzer_core::dataset::{
    decode_image, load_images, load_manifest, stratified_split_labels, write_manifest, Label,
    LabeledImage, ManifestRecord, DEFAULT_CANONICAL_SIZE,
};
use anomalyzer_core::eval::{
    evaluate, imbalance_sweep, write_evaluation_csv, write_metrics_csv, write_summary,
    write_verdicts_csv, Detector,
};
use anomalyzer_core::render::{curve_points, emit_curves, write_overlay, OverlaySidecar};
use anomalyzer_core::synth::{generate_set, write_set, SynthPlan, SynthSpec};
use anomalyzer_core::{DatasetSplit, FitOptions};
use anyhow::{bail, ensure, Context, Result};

use crate::config::{parse_ratios, Config};
use crate::{
    BaselineCommand, BaselineEvaluateArgs, BaselineTrainArgs, Command, EvaluateArgs, ScoreArgs,
    SweepArgs, SynthArgs, TrainArgs,
};

const DEFAULT_SPLIT: (f64, f64, f64) = (0.7, 0.1, 0.2);

pub fn run(config: Option<&Path>, jobs: Option<usize>, command: Command) -> Result<ExitCode> {
    let cfg = Config::load(config)?;
    if let Some(jobs) = jobs.or(cfg.jobs) {
        ensure!(jobs > 0, "--jobs must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match command {
        Command::Synth(a) => synth(&cfg, a),
        Command::Train(a) => train(&cfg, a),
        Command::Score(a) => return score(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep(&cfg, a),
        Command::Baseline(BaselineCommand::Train(a)) => baseline_train(&cfg, a),
        Command::Baseline(BaselineCommand::Evaluate(a)) => baseline_evaluate(&cfg, a),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn synth(cfg: &Config, a: SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = a.seed.or(cfg.seed) {
        spec.seed = seed;
    }
    if let Some(size) = a.size {
        spec.size = size;
    }
    spec.validate()?;
    let plan = SynthPlan {
        count: a.count,
        anomaly_fraction: a.anomaly_fraction,
        start_index: a.start_index,
        ..SynthPlan::default()
    };
    let samples = generate_set(&spec, &plan)?;
    write_set(&a.out, &spec, &samples)?;
    let anomalous = samples.iter().filter(|s| s.label.is_anomalous()).count();
    println!(
        "wrote {} images ({anomalous} anomalous) and manifest.csv to {}",
        samples.len(),
        a.out.display()
    );
    Ok(())
}

fn subset(records: &[ManifestRecord], idx: &[usize]) -> Vec<ManifestRecord> {
    DatasetSplit::cloned(idx, records)
}

fn write_split(dir: &Path, records: &[ManifestRecord], split: &DatasetSplit) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let ids: Vec<String> = records.iter().map(ManifestRecord::id).collect();
    let json = serde_json::to_string_pretty(&split.to_record(&ids))?;
    let path = dir.join("split.json");
    std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    for (name, idx) in [
        ("train.csv", &split.train),
        ("validation.csv", &split.validation),
        ("test.csv", &split.test),
    ] {
        write_manifest(&dir.join(name), &subset(records, idx))?;
    }
    Ok(())
}

fn train(cfg: &Config, a: TrainArgs) -> Result<()> {
    let grid = a.grid.or(cfg.grid).unwrap_or(DEFAULT_GRID_SIZE);
    let theta = a.theta.or(cfg.theta).unwrap_or(DEFAULT_THETA);
    let min_cells = a.min_cells.or(cfg.min_cells).unwrap_or(DEFAULT_MIN_CORRUPT_CELLS);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let canonical = a.canonical_size.or(cfg.canonical_size).unwrap_or(DEFAULT_CANONICAL_SIZE);
    let ratios = cfg.split.unwrap_or(DEFAULT_SPLIT);
    validate_settings(grid, canonical, theta, min_cells)?;

    let records = load_manifest(&a.manifest)?;
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let split = if a.train_all {
        None
    } else {
        Some(stratified_split_labels(&labels, ratios, seed)?)
    };
    if let (Some(dir), Some(split)) = (&a.split_dir, &split) {
        write_split(dir, &records, split)?;
    }
    let train_records = match &split {
        Some(s) => subset(&records, &s.train),
        None => records.clone(),
    };
    let train = load_images(&train_records, canonical)?;
    let outcome = fit(
        &train,
        &FitOptions {
            grid_size: grid,
            ..FitOptions::default()
        },
    )?;
    let fallback = outcome.cells.iter().filter(|c| c.percentiles.is_none()).count();
    if fallback > 0 {
        eprintln!("note: {fallback} cell(s) had constant normal means; used a one-level band");
    }
    let model = if a.tune {
        let split = split.as_ref().expect("tune conflicts with train-all");
        let validation = load_images(&subset(&records, &split.validation), canonical)?;
        let min_cells: Vec<usize> = (1..=grid * grid).collect();
        let choice = tune_thresholds(&outcome.model, &validation, &default_theta_grid(), &min_cells)?;
        println!(
            "tuned on {} validation images: theta={} min_cells={} f1={}",
            validation.len(),
            choice.theta,
            choice.min_corrupt_cells,
            anomalyzer_core::eval::fmt_metric(choice.f1)
        );
        outcome.model.with_thresholds(choice.theta, choice.min_corrupt_cells)?
    } else {
        outcome.model.with_thresholds(theta, min_cells)?
    };
    model.save(&a.out)?;
    println!(
        "trained on {} images: grid={} theta={} min_cells={} -> {}",
        train.len(),
        model.n(),
        model.theta(),
        model.min_corrupt_cells(),
        a.out.display()
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<ExitCode> {
    let model = AnomalyzerModel::load(&a.model)?;
    let pixels = decode_image(&a.image, model.canonical_size())?;
    let map = model.score(&pixels)?;
    let id = a
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    println!("{}", OverlaySidecar::from_map(id.clone(), &map).to_json()?);
    if let Some(path) = &a.overlay {
        write_overlay(path, &id, &pixels, &map)?;
    }
    Ok(if map.verdict.is_anomalous() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn write_report(dir: &Path, detector: &dyn Detector, images: &[LabeledImage]) -> Result<()> {
    let ev = evaluate(detector, images)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = detector.name();
    write_evaluation_csv(&dir.join("metrics.csv"), &name, &ev.counts)?;
    write_verdicts_csv(&dir.join("verdicts.csv"), &ev.verdicts)?;
    write_summary(std::io::stdout().lock(), &name, &ev.counts)?;
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let model = AnomalyzerModel::load(&a.model)?;
    let images = load_images(&load_manifest(&a.manifest)?, model.canonical_size())?;
    write_report(&a.report, &model, &images)
}

fn sweep(cfg: &Config, a: SweepArgs) -> Result<()> {
    let ratios = match (&a.ratios, &cfg.ratios) {
        (Some(text), _) => parse_ratios(text)?,
        (None, Some(r)) => r.clone(),
        (None, None) => (1..=5).collect(),
    };
    ensure!(!ratios.is_empty() && !ratios.contains(&0), "ratios must be positive");
    let model = AnomalyzerModel::load(&a.model)?;
    let baselines: Vec<BaselineDetector> = a
        .baselines
        .iter()
        .map(|p| BaselineDetector::load(p))
        .collect::<anomalyzer_core::Result<_>>()?;
    let size = model.canonical_size();
    let base = load_images(&load_manifest(&a.manifest)?, size)?;
    let extra = match &a.extra_normals {
        Some(p) => load_images(&load_manifest(p)?, size)?,
        None => Vec::new(),
    };
    let mut detectors: Vec<&dyn Detector> = vec![&model];
    detectors.extend(baselines.iter().map(|b| b as &dyn Detector));
    let rows = imbalance_sweep(&detectors, &base, &extra, &ratios)?;
    emit_curves(&a.out, &rows)?;
    if let Some(p) = &a.metrics {
        write_metrics_csv(p, &rows)?;
    }
    let mut out = std::io::stdout().lock();
    for p in curve_points(&rows) {
        writeln!(
            out,
            "{} 1:{} balanced_accuracy={}",
            p.detector,
            p.ratio,
            anomalyzer_core::eval::fmt_metric(p.balanced_accuracy)
        )?;
    }
    Ok(())
}

fn load_grid(path: Option<&PathBuf>, kind: BaselineKind) -> Result<ParamGrid> {
    Ok(match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => match kind {
            BaselineKind::Svm => ParamGrid::default_svm(),
            BaselineKind::Ocsvm => ParamGrid::default_ocsvm(),
        },
    })
}

fn baseline_train(cfg: &Config, a: BaselineTrainArgs) -> Result<()> {
    let kind: BaselineKind = a.kind.into();
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let m = a.feature_grid.or(cfg.feature_grid).unwrap_or(DEFAULT_FEATURE_GRID);
    let canonical = a.canonical_size.or(cfg.canonical_size).unwrap_or(DEFAULT_CANONICAL_SIZE);
    let tol = a.tol.or(cfg.tol).unwrap_or(SmoOptions::default().tol);
    let ratios = cfg.split.unwrap_or(DEFAULT_SPLIT);
    ensure!(m > 0 && canonical.is_multiple_of(m), "canonical size {canonical} not divisible by feature grid {m}");
    ensure!(tol > 0.0, "tolerance must be positive");
    let grid = load_grid(a.grid_search.as_ref(), kind)?;
    if grid.points(kind).is_empty() {
        bail!("the hyperparameter grid has no points for {kind:?}");
    }

    let records = load_manifest(&a.manifest)?;
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let split = stratified_split_labels(&labels, ratios, seed)?;
    let load = |idx: &[usize]| -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
        let images = load_images(&subset(&records, idx), canonical)?;
        let y = images.iter().map(|i| i.label.is_anomalous()).collect();
        Ok((features(&images, m)?, y))
    };
    let (tx, ty) = load(&split.train)?;
    let (vx, vy) = load(&split.validation)?;
    let smo = SmoOptions {
        tol,
        ..SmoOptions::default()
    };
    let result = grid_search(kind, (&tx, &ty), (&vx, &vy), &grid, m, &smo)?;
    if let Some(p) = &a.report {
        write_grid_report(p, &result)?;
    }
    let best = result.best();
    if !best.converged {
        eprintln!("warning: the selected configuration hit the iteration limit");
    }
    let (detector, _) = best.params.train(&tx, &ty, m, &smo)?;
    detector.save(&a.out)?;
    println!(
        "{} configurations searched; best {} with validation f1={} -> {}",
        result.rows.len(),
        serde_json::to_string(&best.params)?,
        anomalyzer_core::eval::fmt_metric(best.f1),
        a.out.display()
    );
    Ok(())
}

fn baseline_evaluate(cfg: &Config, a: BaselineEvaluateArgs) -> Result<()> {
    let canonical = a.canonical_size.or(cfg.canonical_size).unwrap_or(DEFAULT_CANONICAL_SIZE);
    let detector = BaselineDetector::load(&a.model)?;
    ensure!(
        canonical.is_multiple_of(detector.feature_grid),
        "canonical size {canonical} not divisible by feature grid {}",
        detector.feature_grid
    );
    let images = load_images(&load_manifest(&a.manifest)?, canonical)?;
    write_report(&a.report, &detector, &images)
}
