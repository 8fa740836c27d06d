use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ipsk_core::config::{ExperimentConfig, Scale, Target};
use ipsk_core::Error;

mod run;

#[derive(Parser)]
#[command(name = "ipsk", version, about = "Simulate interacting particle systems and learn their interaction kernels")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the configuration and IPSK_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration and IPSK_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and write them in the binary format.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of trajectories (default: M from the configuration).
        #[arg(long)]
        count: Option<usize>,
        /// Also write each trajectory as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Learn the interaction kernel from trajectory files.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Error against the number of trajectories.
    Convergence {
        #[command(flatten)]
        common: Common,
    },
    /// Error against the observation gap.
    GapStudy {
        #[command(flatten)]
        common: Common,
    },
    /// Error against M T for long trajectories.
    LongT {
        #[command(flatten)]
        common: Common,
    },
    /// Print a preset configuration as JSON.
    Preset {
        target: TargetArg,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
    },
    /// Run the preset experiments end to end.
    Reproduce {
        target: TargetArg,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        /// Configuration replacing the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Opinion,
    LennardJones,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Opinion => Target::Opinion,
            TargetArg::LennardJones => Target::LennardJones,
        }
    }
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Full => Scale::Full,
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Input(_) | Error::DegenerateMatching(_) | Error::Json(_) => 2,
        Error::Io(_) | Error::Format(_) => 3,
        Error::DataConsistency(_) => 4,
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate { common, count, csv } => run::simulate(&run::load(&common.config, common.seed, common.out)?, count, csv),
        Command::Estimate { common, files } => run::estimate(&run::load(&common.config, common.seed, common.out)?, &files),
        Command::Convergence { common } => run::convergence(&run::load(&common.config, common.seed, common.out)?),
        Command::GapStudy { common } => run::gap_study(&run::load(&common.config, common.seed, common.out)?),
        Command::LongT { common } => run::long_t(&run::load(&common.config, common.seed, common.out)?),
        Command::Preset { target, scale } => {
            let text = ExperimentConfig::preset(target.into(), scale.into()).to_json();
            writeln!(std::io::stdout().lock(), "{text}")?;
            Ok(())
        }
        Command::Reproduce { target, scale, config, seed, out } => {
            let (target, scale) = (target.into(), scale.into());
            let cfg = match config {
                Some(path) => run::load(&path, seed, out)?,
                None => run::preset(target, scale, seed, out)?,
            };
            run::reproduce(&cfg, target, scale)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
