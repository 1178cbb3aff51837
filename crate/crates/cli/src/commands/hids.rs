//! System call model training and per-process scoring.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use ctids_core::hids::{
    build_syscall_model, hids_em, parse_syscall_traces, process_loglik, HidsEmConfig,
    ProcessTrace, SyscallModel, OTHER_CALL,
};
use ctids_core::rng::fold_seed;

use crate::config::RunConfig;
use crate::formats::HIDS_SCORE_COLUMN;
use crate::runfile::Run;
use crate::{CliError, Common};

pub(crate) fn read_logs(run: &mut Run, paths: &[PathBuf]) -> Result<Vec<ProcessTrace>, CliError> {
    let mut traces = Vec::new();
    for path in paths {
        let text = run.read_input(path)?;
        traces.extend(parse_syscall_traces(&text, &path.display().to_string())?);
    }
    if traces.is_empty() {
        return Err(CliError::Input("the logs hold no processes".into()));
    }
    Ok(traces)
}

#[derive(Debug, Args)]
pub struct TrainHidsArgs {
    #[command(flatten)]
    common: Common,
    /// Training logs, assumed normal; repeat for multiple files.
    #[arg(long = "traces", value_name = "FILE", required = true)]
    traces: Vec<PathBuf>,
    /// Trained model file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Hidden state count.
    #[arg(long, value_name = "N")]
    m: Option<usize>,
    #[arg(long, value_name = "N")]
    iterations: Option<usize>,
    #[arg(long, value_name = "TOL")]
    rel_tol: Option<f64>,
}

pub fn train(args: TrainHidsArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    if let Some(v) = args.m {
        cfg.m = v;
    }
    if let Some(v) = args.iterations {
        cfg.hids_iterations = v;
    }
    if let Some(v) = args.rel_tol {
        cfg.hids_rel_tol = v;
    }
    cfg.validate()?;
    let mut run = Run::new("train-hids", &cfg);

    let traces = read_logs(&mut run, &args.traces)?;
    let mut vocab: BTreeSet<String> = traces
        .iter()
        .flat_map(|t| t.flat_calls().into_iter().map(str::to_string))
        .collect();
    vocab.insert(OTHER_CALL.to_string());
    let init = build_syscall_model(
        vocab.into_iter().collect(),
        cfg.m,
        fold_seed(cfg.seed, "cli.train-hids.init", 0),
    )?;
    let em = HidsEmConfig {
        max_iters: cfg.hids_iterations,
        rel_tol: cfg.hids_rel_tol,
    };
    let outcome = hids_em(&init, &traces, &em)?;
    for (i, ll) in outcome.loglik.iter().enumerate() {
        eprintln!("iteration {i}: log-likelihood {ll:.3}");
    }
    run.write_output(&args.out, &outcome.model.to_text())?;
    println!(
        "trained on {} processes; EM {} after {} iterations",
        traces.len(),
        if outcome.converged { "converged" } else { "stopped" },
        outcome.loglik.len()
    );
    run.finish()
}

#[derive(Debug, Args)]
pub struct ScoreHidsArgs {
    #[command(flatten)]
    common: Common,
    /// Trained model file.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Logs to score; repeat for multiple files.
    #[arg(long = "traces", value_name = "FILE", required = true)]
    traces: Vec<PathBuf>,
    /// Per-process score table.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

pub fn score(args: ScoreHidsArgs) -> Result<(), CliError> {
    let cfg: RunConfig = args.common.load()?;
    cfg.validate()?;
    let mut run = Run::new("score-hids", &cfg);

    let model = SyscallModel::from_text(
        &run.read_input(&args.model)?,
        &args.model.display().to_string(),
    )?;
    let traces = read_logs(&mut run, &args.traces)?;
    let mut seen = BTreeSet::new();
    for t in &traces {
        if !seen.insert(t.id().to_string()) {
            return Err(CliError::Input(format!(
                "process id {:?} appears twice; scores are keyed by id",
                t.id()
            )));
        }
    }
    let mut body = format!("process_id,n_calls,{HIDS_SCORE_COLUMN},per_event_log_likelihood\n");
    for t in &traces {
        let ll = process_loglik(&model, t)?;
        let per_event = ll / t.n_calls().max(1) as f64;
        let _ = write!(body, "{},{},{:?},{:?}\n", t.id(), t.n_calls(), ll, per_event);
    }
    run.write_output(&args.out, &body)?;
    println!("scored {} processes", traces.len());
    run.finish()
}
