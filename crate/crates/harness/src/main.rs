use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedbayes_core::privacy::{AdapedAccounting, ClipMode, ClipSpec};
use fedbayes_harness::config::{accountant_config, preset_config, preset_summaries, Experiment};
use fedbayes_harness::report::{emit_report, render};
use fedbayes_harness::run::{check_kind, run_experiment};
use fedbayes_harness::{ExperimentConfig, Format, HarnessError, Result};

#[derive(Parser)]
#[command(name = "fedbayes", version, about = "Personalized estimation and learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run any config, whatever its kind.
    Run(RunArgs),
    /// Gaussian mean estimation, optionally through compression or privacy channels.
    Gauss(RunArgs),
    /// Bernoulli estimation with moment-estimated weights.
    Bern(RunArgs),
    /// Discrete-mixture estimation by alternating minimization.
    Mixture(RunArgs),
    /// Linear regression with learned population parameters.
    Linreg(RunArgs),
    /// Logistic regression with a learned Gaussian prior.
    Logreg(RunArgs),
    /// Regression with a learned Gaussian-mixture prior.
    GmmLearn(RunArgs),
    /// AdaPeD against local training and FedAvg.
    Adaped(RunArgs),
    /// AdaPeD with clipped, noised updates and its privacy guarantee.
    DpAdaped(RunArgs),
    /// Leave-one-round-out evaluation on a binary panel.
    PanelCv(RunArgs),
    /// Privacy guarantee of DP-AdaPeD from a config or from flags.
    Accountant(AccountantArgs),
    /// List the named presets or print one as a config.
    Presets {
        /// Print the config of this preset as JSON.
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Args)]
struct OutputArgs {
    /// Write the report here instead of stdout (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format (overrides the config).
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seeds; repeat for several.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliClipMode {
    Separate,
    Joint,
}

impl From<CliClipMode> for ClipMode {
    fn from(m: CliClipMode) -> Self {
        match m {
            CliClipMode::Separate => ClipMode::Separate,
            CliClipMode::Joint => ClipMode::Joint,
        }
    }
}

#[derive(Args)]
struct AccountantArgs {
    /// Accountant config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Clients sampled per round.
    #[arg(long)]
    sampled: Option<usize>,
    /// Population size.
    #[arg(long)]
    clients: Option<usize>,
    /// Local iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Iterations between synchronizations.
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    /// Noise scale on the model update.
    #[arg(long)]
    sigma1: Option<f64>,
    /// Noise scale on the psi update.
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, value_enum)]
    clip_mode: Option<CliClipMode>,
    #[arg(long)]
    delta: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    ExperimentConfig::from_json(&text)
}

fn missing(flag: &str) -> HarnessError {
    HarnessError::Config(format!("--{flag} is required without --config"))
}

fn accountant_from(args: &AccountantArgs) -> Result<ExperimentConfig> {
    let base = match &args.config {
        Some(path) => {
            let config = read_config(path)?;
            check_kind(&config, "accountant")?;
            match config.experiment {
                Experiment::Accountant(p) => Some(p),
                _ => unreachable!("kind checked"),
            }
        }
        None => None,
    };
    let from_base = |f: fn(&AdapedAccounting) -> usize| base.as_ref().map(|b| f(&b.accounting));
    let accounting = AdapedAccounting {
        sampled: args.sampled.or(from_base(|a| a.sampled)).ok_or_else(|| missing("sampled"))?,
        clients: args.clients.or(from_base(|a| a.clients)).ok_or_else(|| missing("clients"))?,
        iterations: args.iterations.or(from_base(|a| a.iterations)).ok_or_else(|| missing("iterations"))?,
        sync_gap: args.tau.or(from_base(|a| a.sync_gap)).unwrap_or(1),
        clip: ClipSpec {
            c1: args.c1.or(base.as_ref().map(|b| b.accounting.clip.c1)).unwrap_or(1.0),
            c2: args.c2.or(base.as_ref().map(|b| b.accounting.clip.c2)).unwrap_or(1.0),
            mode: args.clip_mode.map(ClipMode::from).or(base.as_ref().map(|b| b.accounting.clip.mode)).unwrap_or_default(),
        },
        sigma_q1: args.sigma1.or(base.as_ref().map(|b| b.accounting.sigma_q1)).ok_or_else(|| missing("sigma1"))?,
        sigma_q2: args.sigma2.or(base.as_ref().map(|b| b.accounting.sigma_q2)).ok_or_else(|| missing("sigma2"))?,
    };
    let delta = args.delta.or(base.as_ref().map(|b| b.delta)).unwrap_or(1e-5);
    let config = accountant_config(accounting, delta);
    config.validate()?;
    Ok(config)
}

fn execute(config: &ExperimentConfig, output: &OutputArgs) -> Result<()> {
    let report = run_experiment(config)?;
    let spec = config.output.as_ref();
    let format = output.format.or(spec.map(|s| s.format)).unwrap_or_default();
    match output.out.as_deref().or(spec.map(|s| s.path.as_path())) {
        Some(path) => emit_report(&report, format, path),
        None => {
            print!("{}", render(&report, format));
            Ok(())
        }
    }
}

/// JSON output is the privacy budget alone; CSV is the usual metric table.
fn accountant(args: &AccountantArgs) -> Result<()> {
    let config = accountant_from(args)?;
    let report = run_experiment(&config)?;
    let text = match args.output.format.unwrap_or_default() {
        Format::Json => serde_json::to_string_pretty(&report.privacy).expect("budget serializes") + "\n",
        Format::Csv => render(&report, Format::Csv),
    };
    match &args.output.out {
        Some(path) => std::fs::write(path, text).map_err(|source| HarnessError::Io { path: path.clone(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_command(args: &RunArgs, kind: Option<&str>) -> Result<()> {
    let mut config = read_config(&args.config)?;
    if let Some(kind) = kind {
        check_kind(&config, kind)?;
    }
    if !args.seeds.is_empty() {
        config.seeds = args.seeds.clone();
    }
    execute(&config, &args.output)
}

fn presets(show: Option<&str>) -> Result<()> {
    match show {
        Some(name) => {
            let config = preset_config(name)?;
            println!("{}", serde_json::to_string_pretty(&config).expect("config serializes"));
        }
        None => {
            for (name, description) in preset_summaries() {
                println!("{name:<20} {description}");
            }
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("FEDBAYES_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| HarnessError::Config(format!("FEDBAYES_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
}

fn dispatch(command: Command) -> Result<()> {
    configure_threads()?;
    match command {
        Command::Run(a) => run_command(&a, None),
        Command::Gauss(a) => run_command(&a, Some("gauss")),
        Command::Bern(a) => run_command(&a, Some("bern")),
        Command::Mixture(a) => run_command(&a, Some("mixture")),
        Command::Linreg(a) => run_command(&a, Some("linreg")),
        Command::Logreg(a) => run_command(&a, Some("logreg")),
        Command::GmmLearn(a) => run_command(&a, Some("gmm-learn")),
        Command::Adaped(a) => run_command(&a, Some("adaped")),
        Command::DpAdaped(a) => run_command(&a, Some("dp-adaped")),
        Command::PanelCv(a) => run_command(&a, Some("panel-cv")),
        Command::Accountant(a) => accountant(&a),
        Command::Presets { show } => presets(show.as_deref()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
