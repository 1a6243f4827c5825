use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dlds::io::{self, config, experiment, ExperimentConfig, Preprocess};
use dlds::{Error, Trajectory};

/// Dynamical-dictionary learning of switching linear dynamics.
#[derive(Debug, Parser)]
#[command(name = "dlds", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override: training seed for `train`, generator seed for `generate`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress and report output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the configured system and write it as CSV.
    Generate {
        /// Built-in preset to take the system from instead of --config.
        preset: Option<String>,
    },
    /// Train the configured model and write the archive, report and tables.
    Train {
        /// Built-in preset to run instead of --config.
        preset: Option<String>,
    },
    /// Infer the state and coefficient path of a CSV with a trained model.
    Infer(ApplyArgs),
    /// Score one-step predictions of a trained model on a CSV.
    Eval(ApplyArgs),
    /// List built-in experiment configs.
    Presets {
        /// Print the full config of this preset.
        name: Option<String>,
    },
}

#[derive(Debug, Args)]
struct ApplyArgs {
    /// Model archive written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// CSV with one row per time point.
    #[arg(long)]
    data: PathBuf,
    /// The CSV has a header row.
    #[arg(long)]
    header: bool,
    /// Sampling interval; defaults to the one the model was trained with.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Run(e) => match e.root() {
                Error::Numerical(_) | Error::Divergence { .. } => 3,
                _ => 2,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(msg) => eprintln!("error: {msg}\n\nFor more information, try '--help'."),
                Failure::Run(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Presets { name } => presets(name.as_deref()),
        Command::Generate { preset } => generate(cli, preset.as_deref()),
        Command::Train { preset } => train(cli, preset.as_deref()),
        Command::Infer(args) => infer(cli, args),
        Command::Eval(args) => eval(cli, args),
    }
}

fn presets(name: Option<&str>) -> Result<(), Failure> {
    match name {
        None => {
            for p in io::PRESETS {
                let note = if p.data_bundled { "" } else { " [data not bundled]" };
                emit(&format!("{:<22} {}{note}", p.name, p.summary));
            }
        }
        Some(name) => emit(find_preset(name)?.to_toml()?.trim_end()),
    }
    Ok(())
}

fn find_preset(name: &str) -> Result<ExperimentConfig, Failure> {
    io::preset(name).ok_or_else(|| Failure::Usage(format!("unknown preset '{name}' (see `dlds presets`)")))
}

fn experiment_config(cli: &Cli, preset: Option<&str>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match (preset, &cli.config) {
        (Some(_), Some(_)) => return Err(Failure::Usage("give either a preset or --config, not both".into())),
        (None, None) => return Err(Failure::Usage("a preset or --config is required".into())),
        (Some(name), None) => find_preset(name)?,
        (None, Some(path)) => ExperimentConfig::from_file(path)?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn generate(cli: &Cli, preset: Option<&str>) -> Result<(), Failure> {
    let system = match (preset, &cli.config) {
        (Some(_), Some(_)) => return Err(Failure::Usage("give either a preset or --config, not both".into())),
        (None, None) => return Err(Failure::Usage("a preset or --config is required".into())),
        (Some(name), None) => find_preset(name)?
            .data
            .system
            .ok_or_else(|| Failure::Usage(format!("preset '{name}' reads external data")))?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            config::system_from_toml(&text).map_err(|e| e.context(format!("reading config {}", path.display())))?
        }
    };
    let system = match cli.seed {
        Some(seed) => system.with_seed(seed),
        None => system,
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    create_dir(&out)?;
    let generated = system.generate()?;
    let trajs = &generated.trajectories;
    for (e, traj) in trajs.iter().enumerate() {
        let path = if trajs.len() == 1 {
            out.join("data.csv")
        } else {
            out.join(format!("data_{e:03}.csv"))
        };
        io::save_trajectory(&path, traj, true)?;
        if !cli.quiet {
            eprintln!("wrote {} ({} samples x {} channels)", path.display(), traj.len(), traj.dim());
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| {
        Failure::Run(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn train(cli: &Cli, preset: Option<&str>) -> Result<(), Failure> {
    let cfg = experiment_config(cli, preset)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    if !cli.quiet {
        eprintln!("training {} ({}) into {}", cfg.name, cfg.variant.name(), out.display());
    }
    let outcome = experiment::run_experiment(&cfg, &out)?;
    if !cli.quiet {
        for path in &outcome.artifacts {
            eprintln!("wrote {}", path.display());
        }
        emit(&to_json(&outcome.report)?);
    }
    Ok(())
}

fn load_applied(args: &ApplyArgs) -> Result<experiment::Applied, Failure> {
    let archive = io::load_model(&args.model)?;
    let cfg = experiment::archive_config(&archive)?;
    let dt = args.dt.unwrap_or_else(|| cfg.dt());
    let traj: Trajectory = io::load_trajectory(&args.data, args.header, dt, Preprocess::None)?;
    let traj = cfg.preprocess.apply(traj);
    Ok(experiment::apply_archive(&archive, std::slice::from_ref(&traj))?)
}

fn infer(cli: &Cli, args: &ApplyArgs) -> Result<(), Failure> {
    let applied = load_applied(args)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    create_dir(&out)?;
    let path = out.join(experiment::COEFFICIENTS_FILE);
    experiment::write_coefficients(&path, &applied.model)?;
    if !cli.quiet {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn eval(cli: &Cli, args: &ApplyArgs) -> Result<(), Failure> {
    let applied = load_applied(args)?;
    let json = to_json(&applied.metrics)?;
    if let Some(out) = &cli.out {
        create_dir(out)?;
        let path = out.join("eval.json");
        std::fs::write(&path, format!("{json}\n")).map_err(|e| Error::Io { path, source: e })?;
    }
    if !cli.quiet {
        emit(&json);
    }
    Ok(())
}

/// Prints a line to stdout, ignoring a closed pipe.
fn emit(line: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{line}");
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::Run(Error::Numerical(format!("report is not serializable: {e}"))))
}
