use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use minimax_interval_cli::{load_config, run, CliError, ExperimentKind, RunOptions};

#[derive(Parser)]
#[command(name = "mvi", version, about = "Minimax value intervals for tabular off-policy evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single evaluation; also runs avg-reward and behavior-aware configs.
    Eval(RunArgs),
    /// Bounds over a range of class sizes.
    Sweep(RunArgs),
    /// Repeated-trial coverage of raw and adjusted intervals.
    Coverage(RunArgs),
    /// Pessimistic or optimistic policy selection.
    PolicyOpt(RunArgs),
    /// Rmax / Rmin equivalence on a partially known MDP.
    RmaxCheck(RunArgs),
    /// Parse and validate a config without solving anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    emit_certificates: bool,
}

fn accepts(command: &Command, kind: ExperimentKind) -> bool {
    use ExperimentKind as K;
    match command {
        Command::Eval(_) => matches!(kind, K::Eval | K::AvgReward | K::BehaviorAware),
        Command::Sweep(_) => kind == K::Sweep,
        Command::Coverage(_) => kind == K::Coverage,
        Command::PolicyOpt(_) => kind == K::PolicyOpt,
        Command::RmaxCheck(_) => kind == K::RmaxCheck,
        Command::Validate { .. } => true,
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    let args = match &command {
        Command::Validate { config } => {
            load_config(config)?;
            println!("{}: ok", config.display());
            return Ok(());
        }
        Command::Eval(a) | Command::Sweep(a) | Command::Coverage(a) | Command::PolicyOpt(a) | Command::RmaxCheck(a) => a,
    };
    let (cfg, text) = load_config(&args.config)?;
    if !accepts(&command, cfg.kind) {
        return Err(CliError::Validation {
            config: Some(args.config.clone()),
            diagnostics: vec![minimax_interval_cli::Diagnostic {
                field: "kind".into(),
                message: format!("kind {} does not match this subcommand", cfg.kind.name()),
            }],
        });
    }
    let opts = RunOptions {
        out_dir: args.out.clone(),
        jobs: args.jobs,
        seed: args.seed,
        emit_certificates: args.emit_certificates,
        config_path: Some(args.config.clone()),
    };
    let out = run(&cfg, &text, &opts)?;
    if out.written.is_empty() {
        println!("{}", serde_json::to_string_pretty(&out.document).expect("serializable document"));
    } else {
        for p in &out.written {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MVI_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
