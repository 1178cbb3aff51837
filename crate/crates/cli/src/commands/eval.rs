//! Detector grading: ROC curves against ground truth, and the host
//! identification confusion matrix. Output tables are index-labeled so a
//! rerun from the manifest is byte-identical regardless of where the
//! input files live.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use ctids_core::eval::{confusion_matrix, roc_auc, Polarity};
use ctids_core::nids::{score_windows, RbpfConfig, TrafficModel, TrafficTrace};
use ctids_core::rng::fold_seed;
use ctids_core::synth::{parse_labels, Label};

use crate::formats::{parse_truth, Table};
use crate::runfile::Run;
use crate::{CliError, Common};

#[derive(Debug, Args)]
pub struct EvalRocArgs {
    #[command(flatten)]
    common: Common,
    /// Score table produced by score-nids, score-hids, or baseline.
    #[arg(long, value_name = "FILE")]
    scores: PathBuf,
    /// Anomaly intervals for window scores (from inject).
    #[arg(long, value_name = "FILE", conflicts_with = "labels")]
    truth: Option<PathBuf>,
    /// Per-process labels for process scores (from gen-syscalls).
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Score column to grade; defaults to log_likelihood.
    #[arg(long, value_name = "NAME")]
    column: Option<String>,
    /// Which extreme marks an anomaly: low (likelihoods) or high (counts).
    #[arg(long, value_name = "low|high", default_value = "low")]
    polarity: String,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

pub fn roc(args: EvalRocArgs) -> Result<(), CliError> {
    let cfg = args.common.load()?;
    cfg.validate()?;
    let polarity = match args.polarity.as_str() {
        "low" => Polarity::LowIsAnomalous,
        "high" => Polarity::HighIsAnomalous,
        other => {
            return Err(CliError::Input(format!(
                "unknown polarity {other:?}; expected low or high"
            )))
        }
    };

    let mut run = Run::new("eval-roc", &cfg);
    let table = Table::parse(
        &run.read_input(&args.scores)?,
        &args.scores.display().to_string(),
    )?;
    let column = args.column.as_deref().unwrap_or("log_likelihood");
    let score_col = table.column(column)?;

    let (scores, labels) = match (&args.truth, &args.labels) {
        (Some(truth_path), None) => {
            let truth = parse_truth(
                &run.read_input(truth_path)?,
                &truth_path.display().to_string(),
            )?;
            let start_col = table.column("window_start_seconds")?;
            let end_col = table.column("window_end_seconds")?;
            let events_col = table.column("event_count").ok();
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for row in 0..table.rows.len() {
                if let Some(c) = events_col {
                    // Event-free windows carry no evidence either way; the
                    // detector is graded only where it saw something.
                    if table.f64_at(row, c)? == 0.0 {
                        continue;
                    }
                }
                let start = table.f64_at(row, start_col)?;
                let end = table.f64_at(row, end_col)?;
                scores.push(table.f64_at(row, score_col)?);
                labels.push(truth.overlaps(start, end));
            }
            (scores, labels)
        }
        (None, Some(labels_path)) => {
            let text = run.read_input(labels_path)?;
            let by_id: BTreeMap<String, Label> =
                parse_labels(&text, &labels_path.display().to_string())?
                    .into_iter()
                    .collect();
            let id_col = table.column("process_id")?;
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for row in 0..table.rows.len() {
                let id = &table.rows[row][id_col];
                let label = by_id.get(id).ok_or_else(|| {
                    CliError::Input(format!("no label for process {id:?}"))
                })?;
                match label {
                    Label::Attack => labels.push(true),
                    Label::Normal => labels.push(false),
                    Label::Unknown => continue,
                }
                scores.push(table.f64_at(row, score_col)?);
            }
            (scores, labels)
        }
        _ => {
            return Err(CliError::Input(
                "need exactly one of --truth (window scores) or --labels (process scores)".into(),
            ))
        }
    };

    let roc = roc_auc(&scores, &labels, polarity)?;
    let mut body = format!("# auc={:?}\n", roc.auc);
    body.push_str("false_positive_rate,true_positive_rate\n");
    for (fpr, tpr) in &roc.points {
        let _ = write!(body, "{fpr:?},{tpr:?}\n");
    }
    run.write_output(&args.out, &body)?;
    println!(
        "auc {:.4} over {} scored cases ({} anomalous)",
        roc.auc,
        labels.len(),
        labels.iter().filter(|&&l| l).count()
    );
    run.finish()
}

#[derive(Debug, Args)]
pub struct HostIdArgs {
    #[command(flatten)]
    common: Common,
    /// Candidate model for each host, in host order; repeat per host.
    #[arg(long = "model", value_name = "FILE", required = true)]
    models: Vec<PathBuf>,
    /// Held-out trace for each host, in the same order as --model.
    #[arg(long = "trace", value_name = "FILE", required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, value_name = "SEC")]
    segment_seconds: Option<f64>,
    #[arg(long, value_name = "N")]
    particles: Option<usize>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

pub fn host_id(args: HostIdArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    if let Some(v) = args.segment_seconds {
        cfg.segment_seconds = v;
    }
    if let Some(v) = args.particles {
        cfg.particles = v;
    }
    cfg.validate()?;
    if args.models.len() != args.traces.len() || args.models.len() < 2 {
        return Err(CliError::Input(format!(
            "need one --model per --trace and at least two hosts (got {} models, {} traces)",
            args.models.len(),
            args.traces.len()
        )));
    }

    let mut run = Run::new("host-id", &cfg);
    let mut models = Vec::new();
    for p in &args.models {
        let text = run.read_input(p)?;
        models.push(TrafficModel::from_text(&text, &p.display().to_string())?);
    }
    let mut traces = Vec::new();
    for p in &args.traces {
        let text = run.read_input(p)?;
        traces.push(TrafficTrace::from_csv(&text, &p.display().to_string())?);
    }

    let n_models = models.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut owner: Vec<usize> = Vec::new();
    for (i, trace) in traces.iter().enumerate() {
        let mut per_model: Vec<Vec<(f64, bool)>> = Vec::with_capacity(n_models);
        for (j, model) in models.iter().enumerate() {
            let rbpf = RbpfConfig {
                particles: cfg.particles,
                resample_every: cfg.resample_every,
                seed: fold_seed(cfg.seed, "cli.host-id", (i * n_models + j) as u64),
            };
            let scores = score_windows(model, trace, cfg.segment_seconds, &rbpf)?;
            per_model.push(scores.iter().map(|w| (w.loglik, w.skipped)).collect());
        }
        // The window partition depends only on the trace, so skipped flags
        // agree across models and each kept row is complete.
        let n_windows = per_model[0].len();
        for w in 0..n_windows {
            if per_model[0][w].1 {
                continue;
            }
            rows.push(per_model.iter().map(|m| m[w].0).collect());
            owner.push(i);
        }
    }

    let confusion = confusion_matrix(&rows, &owner, n_models)?;
    let mut body = String::from("true_host");
    for j in 0..n_models {
        let _ = write!(body, ",model_{j}");
    }
    body.push('\n');
    for i in 0..n_models {
        let _ = write!(body, "trace_{i}");
        for j in 0..n_models {
            let _ = write!(body, ",{:?}", confusion[(i, j)]);
        }
        body.push('\n');
    }
    run.write_output(&args.out, &body)?;
    let diagonal: Vec<String> = (0..n_models)
        .map(|i| format!("{:.3}", confusion[(i, i)]))
        .collect();
    println!("confusion diagonal: {}", diagonal.join(", "));
    run.finish()
}
