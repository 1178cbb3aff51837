//! Traffic model training and window scoring.

use std::path::PathBuf;

use clap::Args;

use ctids_core::nids::{
    build_traffic_model, rbpf_em, score_windows, select_ports, NidsEmConfig, RbpfConfig,
    TrafficModel, TrafficTrace,
};
use ctids_core::rng::fold_seed;

use crate::formats::write_window_scores;
use crate::runfile::Run;
use crate::{CliError, Common};

#[derive(Debug, Args)]
pub struct TrainNidsArgs {
    #[command(flatten)]
    common: Common,
    /// Training trace, assumed anomaly-free.
    #[arg(long, value_name = "FILE")]
    trace: PathBuf,
    /// Trained model file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "N")]
    particles: Option<usize>,
    /// Stochastic EM sweeps.
    #[arg(long, value_name = "N")]
    iterations: Option<usize>,
    #[arg(long, value_name = "N")]
    n_g: Option<usize>,
    #[arg(long, value_name = "N")]
    n_h: Option<usize>,
    /// How many of the busiest ports get their own submodel.
    #[arg(long, value_name = "N")]
    ports: Option<usize>,
    #[arg(long, value_name = "SEC")]
    resample_every: Option<f64>,
}

pub fn train(args: TrainNidsArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    if let Some(v) = args.particles {
        cfg.particles = v;
    }
    if let Some(v) = args.iterations {
        cfg.nids_iterations = v;
    }
    if let Some(v) = args.n_g {
        cfg.n_g = v;
    }
    if let Some(v) = args.n_h {
        cfg.n_h = v;
    }
    if let Some(v) = args.ports {
        cfg.ports = v;
    }
    if let Some(v) = args.resample_every {
        cfg.resample_every = v;
    }
    cfg.validate()?;
    let mut run = Run::new("train-nids", &cfg);

    let trace = TrafficTrace::from_csv(
        &run.read_input(&args.trace)?,
        &args.trace.display().to_string(),
    )?;
    if trace.is_empty() {
        return Err(CliError::Input(
            "the training trace has no events to learn from".into(),
        ));
    }
    let ports = select_ports(&trace, cfg.ports, true);
    let init = build_traffic_model(
        &ports,
        cfg.n_g,
        cfg.n_h,
        fold_seed(cfg.seed, "cli.train-nids.init", 0),
    )?;
    let em = NidsEmConfig {
        iterations: cfg.nids_iterations,
        particles: cfg.particles,
        resample_every: cfg.resample_every,
        seed: fold_seed(cfg.seed, "cli.train-nids.em", 0),
    };
    let outcome = rbpf_em(&init, &trace, &em)?;
    for (i, ll) in outcome.loglik_estimates.iter().enumerate() {
        eprintln!("sweep {i}: estimated log-likelihood {ll:.3}");
    }
    run.write_output(&args.out, &outcome.model.to_text())?;
    println!(
        "trained on {} events across {} modeled ports",
        trace.len(),
        ports.len()
    );
    run.finish()
}

#[derive(Debug, Args)]
pub struct ScoreNidsArgs {
    #[command(flatten)]
    common: Common,
    /// Trained model file.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Trace to score.
    #[arg(long, value_name = "FILE")]
    trace: PathBuf,
    /// Window score table.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "SEC")]
    window_seconds: Option<f64>,
    #[arg(long, value_name = "N")]
    particles: Option<usize>,
    #[arg(long, value_name = "SEC")]
    resample_every: Option<f64>,
}

pub fn score(args: ScoreNidsArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    if let Some(v) = args.window_seconds {
        cfg.window_seconds = v;
    }
    if let Some(v) = args.particles {
        cfg.particles = v;
    }
    if let Some(v) = args.resample_every {
        cfg.resample_every = v;
    }
    cfg.validate()?;
    let mut run = Run::new("score-nids", &cfg);

    let model = TrafficModel::from_text(
        &run.read_input(&args.model)?,
        &args.model.display().to_string(),
    )?;
    let trace = TrafficTrace::from_csv(
        &run.read_input(&args.trace)?,
        &args.trace.display().to_string(),
    )?;
    let rc = RbpfConfig {
        particles: cfg.particles,
        resample_every: cfg.resample_every,
        seed: fold_seed(cfg.seed, "cli.score-nids", 0),
    };
    let scores = score_windows(&model, &trace, cfg.window_seconds, &rc)?;
    let skipped = scores.iter().filter(|w| w.skipped).count();
    run.write_output(&args.out, &write_window_scores(&scores, "log_likelihood"))?;
    println!("scored {} windows ({skipped} without events)", scores.len());
    run.finish()
}
