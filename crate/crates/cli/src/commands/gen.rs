//! Generation commands: sample traffic, sample system call logs, and plant
//! anomalies with recorded ground truth.

use std::path::PathBuf;

use clap::Args;
use nalgebra::DMatrix;

use ctids_core::hids::{
    build_syscall_model, default_vocabulary, write_labels, write_syscall_traces, Label,
    SyscallModel,
};
use ctids_core::nids::{build_traffic_model, PortKey, TrafficModel, TrafficTrace};
use ctids_core::rng::fold_seed;
use ctids_core::synth::{
    gen_syscalls, gen_traffic, inject_anomaly, mix_hosts, split_trace, AnomalyTemplate,
    InjectionSpec,
};

use crate::config::RunConfig;
use crate::formats::write_truth;
use crate::runfile::Run;
use crate::{CliError, Common};

/// Ports given their own submodel when no model file fixes the set.
const WELL_KNOWN_PORTS: [u16; 16] = [
    21, 22, 23, 25, 53, 80, 110, 123, 143, 443, 445, 587, 993, 995, 3306, 8080,
];

fn origin(path: &PathBuf) -> String {
    path.display().to_string()
}

#[derive(Debug, Args)]
pub struct GenTrafficArgs {
    #[command(flatten)]
    common: Common,
    /// Generator model file; a fresh random model is built when absent.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Where to save the generator (required when it was built fresh).
    #[arg(long, value_name = "FILE")]
    save_model: Option<PathBuf>,
    /// Trace length in seconds.
    #[arg(long, value_name = "SEC")]
    horizon: Option<f64>,
    /// Cut the trace here: [0, SEC) goes to --out, the rest to --out-rest.
    #[arg(long, value_name = "SEC", requires = "out_rest")]
    split: Option<f64>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Output for the rebased remainder after the --split cut.
    #[arg(long, value_name = "FILE", requires = "split")]
    out_rest: Option<PathBuf>,
    /// Global state count for a freshly built generator.
    #[arg(long, value_name = "N")]
    n_g: Option<usize>,
    /// Per-port hidden state count for a freshly built generator.
    #[arg(long, value_name = "N")]
    n_h: Option<usize>,
    /// Modeled port count for a freshly built generator.
    #[arg(long, value_name = "N")]
    ports: Option<usize>,
}

pub fn traffic(args: GenTrafficArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    if let Some(v) = args.horizon {
        cfg.horizon_seconds = v;
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
    cfg.validate()?;
    let mut run = Run::new("gen-traffic", &cfg);

    let model = match &args.model {
        Some(path) => TrafficModel::from_text(&run.read_input(path)?, &origin(path))?,
        None => {
            if args.save_model.is_none() {
                return Err(CliError::Input(
                    "no --model given; pass --save-model so the fresh generator is kept".into(),
                ));
            }
            let ports = default_ports(cfg.ports)?;
            build_traffic_model(
                &ports,
                cfg.n_g,
                cfg.n_h,
                fold_seed(cfg.seed, "cli.gen-traffic.model", 0),
            )?
        }
    };
    let trace = gen_traffic(
        &model,
        cfg.horizon_seconds,
        fold_seed(cfg.seed, "cli.gen-traffic.sample", 0),
    )?;
    match args.split {
        Some(at) => {
            let (head, tail) = split_trace(&trace, at)?;
            run.write_output(&args.out, &head.to_csv())?;
            let rest = args.out_rest.as_ref().expect("clap ties --split to --out-rest");
            run.write_output(rest, &tail.to_csv())?;
            println!(
                "wrote {} + {} events, cut at {at} s of {} s",
                head.len(),
                tail.len(),
                trace.horizon()
            );
        }
        None => {
            run.write_output(&args.out, &trace.to_csv())?;
            println!("wrote {} events over {} s", trace.len(), trace.horizon());
        }
    }
    if let Some(path) = &args.save_model {
        run.write_output(path, &model.to_text())?;
    }
    run.finish()
}

fn default_ports(k: usize) -> Result<Vec<PortKey>, CliError> {
    if k == 0 || k > WELL_KNOWN_PORTS.len() {
        return Err(CliError::Input(format!(
            "modeled port count must be in 1..={}, got {k}",
            WELL_KNOWN_PORTS.len()
        )));
    }
    let mut ports: Vec<PortKey> = WELL_KNOWN_PORTS[..k]
        .iter()
        .map(|&p| PortKey::Port(p))
        .collect();
    ports.push(PortKey::Other);
    Ok(ports)
}

#[derive(Debug, Args)]
pub struct GenSyscallsArgs {
    #[command(flatten)]
    common: Common,
    /// Generator model file; a fresh random model is built when absent.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Where to save the generator (required when it was built fresh).
    #[arg(long, value_name = "FILE")]
    save_model: Option<PathBuf>,
    /// Cyclically reassign the per-call rate rows before sampling, turning
    /// the generator into an anomalous variant of itself.
    #[arg(long)]
    permute_rates: bool,
    #[arg(long, value_name = "N")]
    processes: Option<usize>,
    /// Mean process length in seconds; each process jitters around it.
    #[arg(long, value_name = "SEC")]
    mean_horizon: Option<f64>,
    /// Clock resolution in seconds.
    #[arg(long, value_name = "SEC")]
    resolution: Option<f64>,
    /// Hidden state count for a freshly built generator.
    #[arg(long, value_name = "N")]
    m: Option<usize>,
    /// Process id prefix; ids are PREFIX0, PREFIX1, ...
    #[arg(long, value_name = "STR", default_value = "proc-")]
    id_prefix: String,
    /// Label recorded for every generated process: normal, attack, unknown.
    #[arg(long, value_name = "LABEL", default_value = "normal")]
    label: String,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Label sidecar of process_id,label lines.
    #[arg(long, value_name = "FILE")]
    labels_out: Option<PathBuf>,
}

pub fn syscalls(args: GenSyscallsArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    if let Some(v) = args.processes {
        cfg.processes = v;
    }
    if let Some(v) = args.mean_horizon {
        cfg.mean_horizon_seconds = v;
    }
    if let Some(v) = args.resolution {
        cfg.resolution_seconds = v;
    }
    if let Some(v) = args.m {
        cfg.m = v;
    }
    cfg.validate()?;
    let label = Label::parse(&args.label)?;
    let mut run = Run::new("gen-syscalls", &cfg);

    let mut model = match &args.model {
        Some(path) => SyscallModel::from_text(&run.read_input(path)?, &origin(path))?,
        None => {
            if args.save_model.is_none() {
                return Err(CliError::Input(
                    "no --model given; pass --save-model so the fresh generator is kept".into(),
                ));
            }
            build_syscall_model(
                default_vocabulary(),
                cfg.m,
                fold_seed(cfg.seed, "cli.gen-syscalls.model", 0),
            )?
        }
    };
    if args.permute_rates {
        model = permute_rates(&model)?;
    }
    let mut traces = gen_syscalls(
        &model,
        cfg.processes,
        cfg.mean_horizon_seconds,
        cfg.resolution_seconds,
        fold_seed(cfg.seed, "cli.gen-syscalls.sample", 0),
        &args.id_prefix,
    )?;
    for t in &mut traces {
        t.label = label;
    }
    run.write_output(&args.out, &write_syscall_traces(&traces)?)?;
    if let Some(path) = &args.labels_out {
        run.write_output(path, &write_labels(&traces))?;
    }
    if let Some(path) = &args.save_model {
        run.write_output(path, &model.to_text())?;
    }
    let calls: usize = traces.iter().map(|t| t.n_calls()).sum();
    println!("wrote {} processes, {calls} calls, label {label}", traces.len());
    run.finish()
}

/// Rotate the rate rows one step through the vocabulary: every call fires at
/// the rates of its successor. A fixed derangement, so every call changes.
fn permute_rates(model: &SyscallModel) -> Result<SyscallModel, CliError> {
    let rates = model.rates();
    let n = rates.nrows();
    let rotated = DMatrix::from_fn(n, rates.ncols(), |s, h| rates[((s + 1) % n, h)]);
    SyscallModel::new(model.vocab().to_vec(), model.q_h().clone(), rotated).map_err(CliError::from)
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[command(flatten)]
    common: Common,
    /// Trace to plant the anomaly in.
    #[arg(long, value_name = "FILE")]
    trace: PathBuf,
    /// Template to inject: flood, scan, probe.
    #[arg(long, value_name = "NAME", conflicts_with = "mix_from")]
    template: Option<String>,
    /// Lift a window from this other host's trace instead of a template.
    #[arg(long, value_name = "FILE")]
    mix_from: Option<PathBuf>,
    /// Fraction of the trace the anomaly window occupies.
    #[arg(long, value_name = "FRAC")]
    alpha: Option<f64>,
    /// Anomaly speed scale; gaps stretch by 1/beta.
    #[arg(long, value_name = "FRAC")]
    beta: Option<f64>,
    /// Template port (flood and probe) or first port (scan).
    #[arg(long, value_name = "PORT")]
    attack_port: Option<u16>,
    /// Template event rate at full speed, per second.
    #[arg(long, value_name = "RATE")]
    attack_rate: Option<f64>,
    /// Template size: events for flood/scan, open-close pairs for probe.
    #[arg(long, value_name = "N")]
    attack_count: Option<usize>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Ground truth interval file.
    #[arg(long, value_name = "FILE")]
    truth_out: PathBuf,
}

pub fn inject(args: InjectArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    cfg.validate()?;
    let mut run = Run::new("inject", &cfg);

    let trace = TrafficTrace::from_csv(&run.read_input(&args.trace)?, &origin(&args.trace))?;
    let spec = |template| InjectionSpec {
        alpha: cfg.alpha,
        beta: cfg.beta,
        seed: fold_seed(cfg.seed, "cli.inject", 0),
        template,
    };
    let (mixed, truth, report) = match (&args.template, &args.mix_from) {
        (Some(name), None) => {
            let template = template_by_name(name, &args)?;
            inject_anomaly(&trace, &spec(template))?
        }
        (None, Some(path)) => {
            let other = TrafficTrace::from_csv(&run.read_input(path)?, &origin(path))?;
            mix_hosts(&trace, &other, &spec(AnomalyTemplate::Burst(Vec::new())))?
        }
        _ => {
            return Err(CliError::Input(
                "pass exactly one of --template or --mix-from".into(),
            ))
        }
    };
    if report.dropped > 0 {
        eprintln!(
            "warning: the anomaly window cut off {} of {} anomalous events",
            report.dropped,
            report.dropped + report.injected.len()
        );
    }
    if report.single_event() {
        eprintln!(
            "warning: only a single anomalous event survived; at this speed the anomaly may be undetectable"
        );
    }
    run.write_output(&args.out, &mixed.to_csv())?;
    run.write_output(&args.truth_out, &write_truth(&truth, mixed.horizon()))?;
    println!(
        "injected {} events into {} intervals",
        report.injected.len(),
        truth.intervals().len()
    );
    run.finish()
}

fn template_by_name(name: &str, args: &InjectArgs) -> Result<AnomalyTemplate, CliError> {
    let template = match name {
        "flood" => AnomalyTemplate::Flood {
            port: args.attack_port.unwrap_or(80),
            rate: args.attack_rate.unwrap_or(20.0),
            count: args.attack_count.unwrap_or(2000),
        },
        "scan" => AnomalyTemplate::Scan {
            first_port: args.attack_port.unwrap_or(1024),
            ports: 256,
            rate: args.attack_rate.unwrap_or(10.0),
            count: args.attack_count.unwrap_or(2000),
        },
        "probe" => AnomalyTemplate::Probe {
            port: args.attack_port.unwrap_or(443),
            rate: args.attack_rate.unwrap_or(5.0),
            pairs: args.attack_count.unwrap_or(1000),
        },
        other => {
            return Err(CliError::Input(format!(
                "unknown template {other:?}; expected flood, scan, or probe"
            )))
        }
    };
    Ok(template)
}
