//! Subcommand implementations.
//!
//! Each command validates every input (paths, configs, artifact
//! consistency) before any computation starts; errors found there exit
//! with code 1. Failures during computation or while writing outputs exit
//! with code 2.

use crate::output::{write_atomic, write_plot_csv};
use crate::{CliError, CliResult};
use seisnet::data::{
    generate_synthetic, read_intervals_csv, read_trace_path, write_intervals_csv,
    write_trace, IntervalRecord, Interval, LabelSet, NegativePolicy, PickedNegative, SynthConfig,
    Trace,
};
use seisnet::detect::{
    dedup, evaluate as evaluate_detections, read_detections_csv, scan, window_count,
    write_detections_csv, write_metrics_csv, Detection, EvalReport,
};
use seisnet::model::{
    build_model, check_model_gradients, load_weights_file, save_weights, ArchSpec, InitRule,
    ModelParams,
};
use seisnet::tensor::gradcheck::{check_all_layers, GradCheckReport};
use seisnet::train::{load_checkpoint_file, write_history_csv, Checkpoint, TrainConfig};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn read_to_string(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> CliResult {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", path.display())))
}

/// Groups interval rows by trace id, preserving row order.
fn group_records(records: Vec<IntervalRecord>) -> CliResult<BTreeMap<String, Vec<Interval>>> {
    let mut map: BTreeMap<String, Vec<Interval>> = BTreeMap::new();
    for rec in records {
        let interval = rec.interval().map_err(CliError::validation)?;
        map.entry(rec.trace_id).or_default().push(interval);
    }
    Ok(map)
}

pub fn generate(config: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> CliResult {
    let mut cfg = match &config {
        Some(path) => SynthConfig::from_toml(&read_to_string(path)?).map_err(CliError::validation)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(CliError::validation)?;
    eprintln!("generate: effective config\n{}", cfg.to_toml());

    ensure_dir(&out)?;
    let days = generate_synthetic(&cfg).map_err(CliError::runtime)?;

    let mut label_rows = Vec::new();
    let mut confounder_rows = Vec::new();
    for day in &days {
        let path = out.join(format!("{}.snt", day.trace.station));
        write_atomic(&path, |w| write_trace(&day.trace, w))?;
        for e in day.labels.events() {
            label_rows.push(IntervalRecord {
                trace_id: day.trace.station.clone(),
                start_index: e.start,
                end_index: e.end,
            });
        }
        for c in &day.confounders {
            confounder_rows.push(IntervalRecord {
                trace_id: day.trace.station.clone(),
                start_index: c.start,
                end_index: c.end,
            });
        }
    }
    write_atomic(&out.join("labels.csv"), |w| {
        write_intervals_csv(&label_rows, w)
    })?;
    write_atomic(&out.join("confounders.csv"), |w| {
        write_intervals_csv(&confounder_rows, w)
    })?;

    println!(
        "wrote {} traces, {} events, {} confounders to {}",
        days.len(),
        label_rows.len(),
        confounder_rows.len(),
        out.display()
    );
    Ok(())
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub arch: Option<PathBuf>,
    pub data: PathBuf,
    pub labels: PathBuf,
    pub picked: Option<PathBuf>,
    pub random_negatives: usize,
    pub resume: Option<PathBuf>,
    pub out: PathBuf,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
}

fn load_traces_dir(dir: &Path) -> CliResult<Vec<Trace>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("snt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Validation(format!(
            "no .snt traces found in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| read_trace_path(p).map_err(CliError::validation))
        .collect()
}

/// Pairs traces with their labels, validating ids and bounds.
fn assemble_days(
    traces: Vec<Trace>,
    label_rows: Vec<IntervalRecord>,
) -> CliResult<Vec<(Trace, LabelSet)>> {
    let mut by_id = group_records(label_rows)?;
    let known: Vec<&str> = traces.iter().map(|t| t.station.as_str()).collect();
    for id in by_id.keys() {
        if !known.contains(&id.as_str()) {
            return Err(CliError::Validation(format!(
                "labels reference unknown trace id {id:?} (known: {known:?})"
            )));
        }
    }
    traces
        .into_iter()
        .map(|trace| {
            let events = by_id.remove(&trace.station).unwrap_or_default();
            let labels = LabelSet::new(events, trace.len()).map_err(CliError::validation)?;
            Ok((trace, labels))
        })
        .collect()
}

pub fn train(args: TrainArgs) -> CliResult {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_toml(&read_to_string(path)?).map_err(CliError::validation)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(CliError::validation)?;

    let arch = match &args.arch {
        Some(path) => ArchSpec::from_toml(&read_to_string(path)?).map_err(CliError::validation)?,
        None => ArchSpec::seismic_net(),
    };
    eprintln!(
        "train: effective config\n[arch]\n{}\n[train]\n{}",
        arch.to_toml(),
        cfg.to_toml()
    );

    let traces = load_traces_dir(&args.data)?;
    let label_rows = read_intervals_csv(
        std::fs::File::open(&args.labels)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", args.labels.display())))?,
    )
    .map_err(CliError::validation)?;
    let days = assemble_days(traces, label_rows)?;

    let picked = match &args.picked {
        Some(path) => read_intervals_csv(
            std::fs::File::open(path)
                .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?,
        )
        .map_err(CliError::validation)?
        .into_iter()
        .map(|rec| {
            Ok(PickedNegative {
                trace_id: rec.trace_id.clone(),
                interval: rec.interval().map_err(CliError::validation)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?,
        None => Vec::new(),
    };

    let start = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint_file(path).map_err(CliError::validation)?;
            if ckpt.params.spec() != &arch && args.arch.is_some() {
                return Err(CliError::Validation(format!(
                    "checkpoint architecture ({} params) does not match --arch",
                    ckpt.params.count_parameters()
                )));
            }
            ckpt
        }
        None => {
            let model = build_model::<f32>(&arch, InitRule::HeNormal, cfg.seed)
                .map_err(CliError::validation)?;
            Checkpoint::fresh(model, &cfg)
        }
    };

    let policy = NegativePolicy {
        picked,
        random_count: args.random_negatives,
        seed: cfg.seed,
    };
    let window_len = start.params.spec().input_length;
    let dataset = seisnet::data::make_training_set(&days, window_len, &policy)
        .map_err(CliError::validation)?;
    eprintln!(
        "train: {} windows ({} positive)",
        dataset.len(),
        dataset
            .iter()
            .filter(|w| w.label == seisnet::train::Label::Positive)
            .count()
    );

    ensure_dir(&args.out)?;
    let started = Instant::now();
    let outcome = seisnet::train::train(start, &dataset, &cfg, Some(&args.out))
        .map_err(CliError::runtime)?;
    for h in &outcome.history {
        eprintln!(
            "epoch {:>3}: loss {:.6} accuracy {:.3}",
            h.epoch, h.mean_loss, h.train_accuracy
        );
    }
    eprintln!("train: {:.1}s", started.elapsed().as_secs_f64());

    write_atomic(&args.out.join("model.snw"), |w| {
        save_weights(&outcome.checkpoint.params, w)
    })?;
    write_atomic(&args.out.join("history.csv"), |w| {
        write_history_csv(&outcome.history, w)
    })?;
    println!(
        "trained {} epochs; model.snw and history.csv in {}",
        outcome.history.len(),
        args.out.display()
    );
    Ok(())
}

pub fn detect(
    weights: PathBuf,
    trace_path: PathBuf,
    labels: Option<PathBuf>,
    offset: usize,
    threshold: f32,
    no_plot: bool,
    out: PathBuf,
) -> CliResult {
    if offset == 0 {
        return Err(CliError::Validation("offset must be >= 1".into()));
    }
    // Trace first: an unreadable trace fails before the model loads.
    let trace = read_trace_path(&trace_path).map_err(CliError::validation)?;
    let params: ModelParams<f32> = load_weights_file(&weights).map_err(CliError::validation)?;
    let window_len = params.spec().input_length;
    if trace.len() < window_len {
        return Err(CliError::Validation(format!(
            "trace {} has {} samples, shorter than the model window ({window_len})",
            trace.station,
            trace.len()
        )));
    }
    let label_set = match &labels {
        Some(path) => {
            let rows = read_intervals_csv(
                std::fs::File::open(path).map_err(|e| {
                    CliError::validation(format!("cannot read {}: {e}", path.display()))
                })?,
            )
            .map_err(CliError::validation)?;
            let mut grouped = group_records(rows)?;
            let events = grouped.remove(&trace.station).unwrap_or_default();
            Some(LabelSet::new(events, trace.len()).map_err(CliError::validation)?)
        }
        None => None,
    };
    eprintln!(
        "detect: trace {} ({} samples), window {window_len}, offset {offset}, threshold {threshold}",
        trace.station,
        trace.len()
    );

    ensure_dir(&out)?;
    let started = Instant::now();
    let raw = scan(&trace, &params, window_len, offset, threshold).map_err(CliError::runtime)?;
    let detections = dedup(raw);
    let elapsed = started.elapsed();
    let windows = window_count(trace.len(), window_len, offset);
    eprintln!(
        "detect: {} windows in {:.2}s ({:.0} windows/s), {} detections after dedup",
        windows,
        elapsed.as_secs_f64(),
        windows as f64 / elapsed.as_secs_f64().max(1e-9),
        detections.len()
    );

    write_atomic(&out.join("detections.csv"), |w| {
        write_detections_csv(&detections, w)
    })?;
    if let Some(label_set) = &label_set {
        let report = evaluate_detections(&detections, label_set, window_len);
        write_atomic(&out.join("metrics.csv"), |w| write_metrics_csv(&report, w))?;
        println!("{report}");
    } else {
        println!("{} detections (no labels given)", detections.len());
    }
    if !no_plot {
        write_atomic(&out.join("plot.csv"), |w| {
            write_plot_csv(&trace, &detections, w)
        })?;
    }
    Ok(())
}

pub fn evaluate(
    detections_path: PathBuf,
    labels_path: PathBuf,
    window_len: Option<usize>,
    out: Option<PathBuf>,
) -> CliResult {
    let detections = read_detections_csv(
        std::fs::File::open(&detections_path).map_err(|e| {
            CliError::validation(format!("cannot read {}: {e}", detections_path.display()))
        })?,
    )
    .map_err(CliError::validation)?;
    let label_rows = read_intervals_csv(
        std::fs::File::open(&labels_path).map_err(|e| {
            CliError::validation(format!("cannot read {}: {e}", labels_path.display()))
        })?,
    )
    .map_err(CliError::validation)?;
    let labels_by_id = group_records(label_rows)?;
    let window_len = window_len
        .or_else(|| detections.first().map(|d| d.end - d.start))
        .unwrap_or(1);

    let mut dets_by_id: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        dets_by_id.entry(d.trace_id.clone()).or_default().push(d);
    }
    let ids: Vec<String> = labels_by_id
        .keys()
        .chain(dets_by_id.keys())
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut reports = Vec::new();
    for id in ids {
        let dets = dets_by_id.remove(&id).unwrap_or_default();
        let events = labels_by_id.get(&id).cloned().unwrap_or_default();
        let span = events
            .iter()
            .map(|e| e.end)
            .chain(dets.iter().map(|d| d.end))
            .max()
            .unwrap_or(1);
        let label_set = LabelSet::new(events, span).map_err(CliError::validation)?;
        reports.push(evaluate_detections(&dets, &label_set, window_len));
    }
    let combined = EvalReport::combine(&reports);
    match out {
        Some(path) => write_atomic(&path, |w| write_metrics_csv(&combined, w))?,
        None => write_metrics_csv(&combined, std::io::stdout()).map_err(CliError::runtime)?,
    }
    eprintln!("{combined}");
    Ok(())
}

pub fn inspect(weights: PathBuf) -> CliResult {
    let params = load_weights_file(&weights).map_err(CliError::validation)?;
    let spec = params.spec();
    println!("# architecture");
    print!("{}", spec.to_toml());
    println!("# parameters");
    println!("count = {}", params.count_parameters());
    println!("train_steps = {}", params.train_steps);
    println!("bn_stats_ready = {}", params.bn_ready());
    println!("# shape ladder");
    for stage in spec.shape_ladder() {
        println!("{:<12} {:>9} x {}", stage.stage, stage.len, stage.channels);
    }
    Ok(())
}

pub fn gradcheck(trials: usize, tolerance: f64, seed: u64) -> CliResult {
    let layer_report = check_all_layers(trials, tolerance, seed);
    let mini = make_gradcheck_spec();
    let mut reports: Vec<GradCheckReport> = vec![layer_report];
    for s in 0..3 {
        reports.push(
            check_model_gradients(&mini, tolerance.max(1e-3), seed + s)
                .map_err(CliError::runtime)?,
        );
    }
    let mut all_ok = true;
    for report in &reports {
        for entry in &report.entries {
            let status = if entry.passed() { "PASS" } else { "FAIL" };
            println!(
                "{status} {:<24} max rel err {:>12.3e}  (tolerance {:.0e})",
                entry.label, entry.max_rel_err, entry.tolerance
            );
            all_ok &= entry.passed();
        }
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::Validation("gradient checks failed".into()))
    }
}

fn make_gradcheck_spec() -> ArchSpec {
    ArchSpec {
        input_length: 64,
        input_channels: 1,
        stem_kernel: 5,
        stem_filters: 6,
        stem_stride: 2,
        block_count: 2,
        layers_per_block: 2,
        growth_rate: 4,
        block_kernel: 3,
        pool_window: 2,
        pool_stride: 2,
        head_dim: 1,
    }
}
