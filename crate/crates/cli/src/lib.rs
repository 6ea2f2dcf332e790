//! The `banditlab` command line.

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use commands::{data, estimate, plot, sim};
use error::{runtime, usage, CliError, Result};

#[derive(Parser, Debug)]
#[command(name = "banditlab", version, about = "Bandit experiments, choice-model fitting and model comparison")]
pub struct Cli {
    /// Command config file (.toml or .json)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. --set mcmc.chains=2 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for parallel work (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    /// Print a short key/value table instead of the JSON report
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate restless reward groups or stationary games
    GenEnv(sim::GenEnvArgs),
    /// Run an agent on a task and write the dataset
    Run(sim::RunArgs),
    /// Run an eps-greedy or UCB parameter sweep and fit each dataset
    Sweep(sim::SweepArgs),
    /// Fit a hierarchical choice model
    Fit(estimate::FitArgs),
    /// Compare models by PSIS-LOO
    Loo(estimate::LooArgs),
    /// Simulate from known parameters and check they are recovered
    Recover(estimate::RecoverArgs),
    /// Estimate the QCARE exploration weight
    Qcare(estimate::QcareArgs),
    /// Exploitation rates and regret curves
    Metrics(data::MetricsArgs),
    /// Rank check of the model's design matrix
    Ident(estimate::IdentArgs),
    /// Convert human choice data from CSV
    Import(data::ImportArgs),
    /// Serve live play sessions over HTTP
    Serve(ServeArgs),
    /// Render a CSV table from `metrics` as SVG
    Plot(plot::PlotArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenEnv(_) => "gen-env",
            Command::Run(_) => "run",
            Command::Sweep(_) => "sweep",
            Command::Fit(_) => "fit",
            Command::Loo(_) => "loo",
            Command::Recover(_) => "recover",
            Command::Qcare(_) => "qcare",
            Command::Metrics(_) => "metrics",
            Command::Ident(_) => "ident",
            Command::Import(_) => "import",
            Command::Serve(_) => "serve",
            Command::Plot(_) => "plot",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    pub data_dir: PathBuf,
    /// Environment variable holding a bearer token to require.
    pub token_env: Option<String>,
    /// Directory of the built web UI.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { addr: "127.0.0.1:8080".into(), data_dir: "sessions".into(), token_env: None, ui_dir: None }
    }
}

#[derive(Args, Debug, Default, Serialize)]
pub struct ServeArgs {
    /// Listen address
    #[arg(long)]
    pub addr: Option<String>,
    /// Directory of session event logs
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Environment variable holding a bearer token to require
    #[arg(long)]
    pub token_env: Option<String>,
    /// Directory of the built web UI
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

fn serve(cfg: &ServeConfig) -> Result<Value> {
    let token = match &cfg.token_env {
        Some(var) => Some(std::env::var(var).map_err(|_| usage(format!("environment variable {var} is not set")))?),
        None => None,
    };
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(banditlab_session::serve(banditlab_session::ServeConfig {
        addr: cfg.addr.clone(),
        data_dir: cfg.data_dir.clone(),
        token,
        ui_dir: cfg.ui_dir.clone(),
    }))
    .map_err(runtime)?;
    Ok(serde_json::json!({ "stopped": true }))
}

/// Report of one command.
#[derive(Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub config: Value,
    pub result: Value,
    /// Set when the command ran but its check failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(runtime)
}

/// Resolve the config of `cli.command` and run it.
pub fn execute(cli: &Cli) -> Result<Report> {
    let file = cli.config.as_deref();
    let out: &Path = &cli.out;
    let sets = &cli.set;
    let mut failure = None;
    let (config, result) = match &cli.command {
        Command::GenEnv(a) => {
            let (c, v) = config::resolve::<sim::GenEnvConfig, _>(file, sets, a)?;
            (v, to_value(&sim::gen_env(&c, out)?)?)
        }
        Command::Run(a) => {
            let (c, v) = config::resolve::<sim::RunConfig, _>(file, sets, a)?;
            (v, to_value(&sim::run(&c, out)?)?)
        }
        Command::Sweep(a) => {
            let (c, v) = config::resolve::<sim::SweepConfig, _>(file, sets, a)?;
            (v, to_value(&sim::sweep(&c, out)?)?)
        }
        Command::Fit(a) => {
            let (c, v) = config::resolve::<estimate::FitConfig, _>(file, sets, a)?;
            (v, to_value(&estimate::fit(&c, out)?)?)
        }
        Command::Loo(a) => {
            let (c, v) = config::resolve::<estimate::LooCmdConfig, _>(file, sets, a)?;
            (v, to_value(&estimate::loo(&c, out)?)?)
        }
        Command::Recover(a) => {
            let (c, v) = config::resolve::<estimate::RecoverConfig, _>(file, sets, a)?;
            let r = estimate::recover(&c, out)?;
            if !r.pass {
                let missed: Vec<&str> = r.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
                failure = Some(format!("recovery failed for {}", missed.join(", ")));
            }
            (v, to_value(&r)?)
        }
        Command::Qcare(a) => {
            let (c, v) = config::resolve::<estimate::QcareConfig, _>(file, sets, a)?;
            (v, to_value(&estimate::qcare(&c, out)?)?)
        }
        Command::Metrics(a) => {
            let (c, v) = config::resolve::<data::MetricsConfig, _>(file, sets, a)?;
            (v, to_value(&data::metrics(&c, out)?)?)
        }
        Command::Ident(a) => {
            let (c, v) = config::resolve::<estimate::IdentConfig, _>(file, sets, a)?;
            (v, to_value(&estimate::ident(&c, out)?)?)
        }
        Command::Import(a) => {
            let (c, v) = config::resolve::<data::ImportConfig, _>(file, sets, a)?;
            (v, to_value(&data::import(&c, out)?)?)
        }
        Command::Serve(a) => {
            let (c, v) = config::resolve::<ServeConfig, _>(file, sets, a)?;
            (v, serve(&c)?)
        }
        Command::Plot(a) => {
            let (c, v) = config::resolve::<plot::PlotConfig, _>(file, sets, a)?;
            (v, to_value(&plot::plot(&c, out)?)?)
        }
    };
    Ok(Report { command: cli.command.name().into(), config, result, failure })
}

/// `key: value` lines for scalar fields, nested keys joined by dots.
pub fn table(v: &Value) -> String {
    fn walk(prefix: &str, v: &Value, depth: usize, out: &mut Vec<String>) {
        match v {
            Value::Object(m) if depth < 3 => {
                for (k, x) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, x, depth + 1, out);
                }
            }
            Value::Array(a) if depth < 3 && a.len() <= 12 => {
                for (i, x) in a.iter().enumerate() {
                    walk(&format!("{prefix}[{i}]"), x, depth + 1, out);
                }
            }
            Value::Object(_) | Value::Array(_) => out.push(format!("{prefix}: …")),
            Value::Number(n) => match n.as_f64() {
                Some(f) if n.is_f64() => out.push(format!("{prefix}: {f:.4}")),
                _ => out.push(format!("{prefix}: {n}")),
            },
            other => out.push(format!("{prefix}: {other}")),
        }
    }
    let mut lines = Vec::new();
    walk("", v, 0, &mut lines);
    lines.join("\n")
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Parse, run and print. Returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("{}", CliError::Usage("--jobs must be positive".into()).to_line());
            return 2;
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match execute(&cli) {
        Ok(report) => {
            if cli.quiet {
                println!("{}", table(&report.result));
            } else {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
            }
            if cli.command.name() != "serve" {
                let _ = commands::write_json(&cli.out, &format!("report-{}.json", report.command), &report);
            }
            match report.failure {
                Some(f) => {
                    eprintln!("{}", CliError::Runtime(f).to_line());
                    1
                }
                None => 0,
            }
        }
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.exit_code()
        }
    }
}
