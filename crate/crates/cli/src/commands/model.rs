//! Model file round-trip: parse, rewrite in canonical form, and confirm the
//! canonical form is a fixed point of parse-then-write.

use std::path::PathBuf;

use clap::Args;

use ctids_core::ctbn::{parse_model, write_model};
use ctids_core::hids::SyscallModel;
use ctids_core::nids::TrafficModel;

use crate::runfile::Run;
use crate::{CliError, Common};

#[derive(Debug, Args)]
pub struct ModelRoundtripArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

pub fn roundtrip(args: ModelRoundtripArgs) -> Result<(), CliError> {
    let cfg = args.common.load()?;
    cfg.validate()?;

    let mut run = Run::new("model-roundtrip", &cfg);
    let text = run.read_input(&args.model)?;
    let parsed = parse_model(&text, &args.model.display().to_string())?;
    let once = write_model(&parsed);
    let twice = write_model(&parse_model(&once, "roundtrip")?);
    if once != twice {
        return Err(CliError::Numerical(
            "canonical form is not a fixed point of parse-then-write".into(),
        ));
    }

    let kind = if TrafficModel::from_ctbn(&parsed).is_ok() {
        "traffic"
    } else if SyscallModel::from_ctbn(&parsed).is_ok() {
        "syscall"
    } else {
        "generic"
    };

    run.write_output(&args.out, &once)?;
    println!(
        "{kind} model with {} variables; canonical form is stable",
        parsed.n_variables()
    );
    run.finish()
}
