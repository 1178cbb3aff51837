//! Reference detectors: connection counts per window for traffic, and
//! call-window novelty for system call logs. Both score in the opposite
//! polarity of a log-likelihood: high means suspicious.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use ctids_core::hids::{stide_score, stide_train};
use ctids_core::nids::{connection_count_baseline, TrafficTrace};

use crate::formats::{write_window_scores, BASELINE_SCORE_COLUMN, STIDE_SCORE_COLUMN};
use crate::runfile::Run;
use crate::{CliError, Common};

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    common: Common,
    /// Which detector: connections (traffic windows) or stide (call logs).
    #[arg(long, value_name = "NAME", default_value = "connections")]
    detector: String,
    /// Traffic trace to score (connections detector).
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    #[arg(long, value_name = "SEC")]
    window_seconds: Option<f64>,
    /// Normal logs to build the call-window database from (stide detector).
    #[arg(long = "train", value_name = "FILE")]
    train: Vec<PathBuf>,
    /// Logs to score (stide detector); repeat for multiple files.
    #[arg(long = "traces", value_name = "FILE")]
    traces: Vec<PathBuf>,
    /// Call-window length (stide detector).
    #[arg(long, value_name = "N")]
    k: Option<usize>,
    /// Locality frame in windows (stide detector).
    #[arg(long, value_name = "N")]
    frame: Option<usize>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

pub fn run(args: BaselineArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    if let Some(v) = args.window_seconds {
        cfg.window_seconds = v;
    }
    if let Some(v) = args.k {
        cfg.stide_k = v;
    }
    if let Some(v) = args.frame {
        cfg.stide_frame = v;
    }
    cfg.validate()?;

    match args.detector.as_str() {
        "connections" => {
            let trace_path = args.trace.as_ref().ok_or_else(|| {
                CliError::Input("the connections detector needs --trace".into())
            })?;
            if !args.train.is_empty() || !args.traces.is_empty() {
                return Err(CliError::Input(
                    "--train/--traces belong to the stide detector".into(),
                ));
            }
            let mut run = Run::new("baseline", &cfg);
            let trace = TrafficTrace::from_csv(
                &run.read_input(trace_path)?,
                &trace_path.display().to_string(),
            )?;
            let scores = connection_count_baseline(&trace, cfg.window_seconds)?;
            run.write_output(&args.out, &write_window_scores(&scores, BASELINE_SCORE_COLUMN))?;
            println!("counted openings in {} windows", scores.len());
            run.finish()
        }
        "stide" => {
            if args.train.is_empty() || args.traces.is_empty() {
                return Err(CliError::Input(
                    "the stide detector needs --train and --traces".into(),
                ));
            }
            if args.trace.is_some() {
                return Err(CliError::Input(
                    "--trace belongs to the connections detector".into(),
                ));
            }
            let mut run = Run::new("baseline", &cfg);
            let train = super::hids::read_logs(&mut run, &args.train)?;
            let score = super::hids::read_logs(&mut run, &args.traces)?;
            let db = stide_train(&train, cfg.stide_k)?;
            let mut body = format!("process_id,n_calls,{STIDE_SCORE_COLUMN}\n");
            for t in &score {
                let mismatches = stide_score(&db, t, cfg.stide_frame)?;
                let _ = write!(body, "{},{},{}\n", t.id(), t.n_calls(), mismatches);
            }
            run.write_output(&args.out, &body)?;
            println!(
                "database of {} call windows; scored {} processes",
                db.len(),
                score.len()
            );
            run.finish()
        }
        other => Err(CliError::Input(format!(
            "unknown detector {other:?}; expected connections or stide"
        ))),
    }
}
