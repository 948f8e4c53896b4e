//! `hagxai` command-line front end.

mod commands;
mod config;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hagxai::{Method, Task};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "hagxai", version, about = "Saliency explanations, HAG training and evaluation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build attention maps from a fixation CSV.
    Attention(commands::attention::AttentionArgs),
    /// Compute saliency maps for exported bundles.
    Explain(commands::explain::ExplainArgs),
    /// Fit HAG parameters with k-fold cross-validation.
    Train(commands::train::TrainArgs),
    /// Score saliency maps for plausibility and faithfulness.
    Eval(commands::eval::EvalArgs),
    /// Bundle archive utilities.
    Bundle {
        #[command(subcommand)]
        command: commands::bundle::BundleCommand,
    },
}

/// How a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Remote(anyhow::Error),
}

impl Failure {
    pub fn data(e: impl Into<anyhow::Error>) -> Self {
        Failure::Data(e.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Remote(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(e) => write!(f, "data error: {e}"),
            Failure::Remote(e) => write!(f, "scorer error: {e}"),
        }
    }
}

pub fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

pub fn parse_task(s: &str) -> Result<Task, String> {
    s.parse()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Failure::Data(anyhow::anyhow!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes)
        .map_err(|e| Failure::Data(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("serialisable output") + "\n";
    write_file(path, text.as_bytes())
}

/// Global settings after merging flags over the config file.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Context {
    fn new(global: &GlobalArgs) -> Result<Self, Failure> {
        let mut config = match &global.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(w) = global.workers {
            config.workers = Some(w as usize);
        }
        if let Some(s) = global.seed {
            config.seed = Some(s);
        }
        if let Some(o) = &global.out {
            config.out = Some(o.clone());
        }
        let out = config.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        let seed = config.seed.unwrap_or(0);
        config.seed = Some(seed);
        config.out = Some(out.clone());
        if let Some(workers) = config.workers {
            if workers == 0 {
                return Err(Failure::Usage("workers must be at least 1".into()));
            }
            // a second initialisation only happens in tests; ignore it
            let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
        }
        Ok(Self { config, out, seed })
    }

    pub fn task(&self, flag: Option<Task>) -> Task {
        flag.or(self.config.task).unwrap_or(Task::Detection)
    }

    pub fn finish(&self) -> Result<(), Failure> {
        self.config.write_resolved(&self.out)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut ctx = Context::new(&cli.global)?;
    match cli.command {
        Command::Attention(args) => commands::attention::run(&mut ctx, args),
        Command::Explain(args) => commands::explain::run(&mut ctx, args),
        Command::Train(args) => commands::train::run(&mut ctx, args),
        Command::Eval(args) => commands::eval::run(&mut ctx, args),
        Command::Bundle { command } => commands::bundle::run(&mut ctx, command),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("hagxai: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
