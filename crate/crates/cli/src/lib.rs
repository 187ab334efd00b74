//! Command-line runners for `dirichlet-core`: every run is determined by its effective
//! config, which is echoed into its output.

pub mod commands;
pub mod config;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::io::Write;
use std::path::PathBuf;

/// Failure classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Budget(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Budget(_) => 3,
        }
    }
}

impl From<dirichlet_core::Error> for CliError {
    fn from(e: dirichlet_core::Error) -> Self {
        use dirichlet_core::Error as E;
        match e {
            E::Budget { .. } | E::SearchExhausted(_) | E::Bracketing(_) => CliError::Budget(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dirichlet", version, about = "Dirichlet-type approximation quantities and constructions")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Decimal digits of the named presets (golden, sqrt2, e).
    #[arg(long, global = true, default_value_t = 40)]
    pub precision: u32,
    /// Output file (a directory for `construct`); stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON object whose keys override the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

/// Keeps the raw text of a flag as a JSON string; config files may give an object instead.
fn text_value(s: &str) -> Result<Value, String> {
    Ok(Value::String(s.to_string()))
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct Shape {
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// Norm on the error coordinates: sup, euclidean, p:<p> or weightedSup:<w1,...>.
    #[arg(long, value_parser = text_value, default_value = "sup")]
    pub norm: Value,
    /// Norm on q; the same kind as `--norm` when absent.
    #[arg(long, value_parser = text_value)]
    pub qnorm: Option<Value>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct Target {
    /// A preset name or m*n comma-separated rationals, row-major.
    #[arg(long)]
    pub theta: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub shape: Shape,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub target: Target,
    /// Evaluate λ_ψ for this ψ (the default mode, with ψ = t^-1).
    #[arg(long)]
    pub psi: Option<String>,
    /// Evaluate χ_γ instead.
    #[arg(long)]
    pub gamma: Option<String>,
    /// Evaluate the height along g_t with these weights instead: a1,...,am;b1,...,bn.
    #[arg(long)]
    pub weights: Option<String>,
    /// Comma-separated times.
    #[arg(long)]
    pub t: Option<String>,
    /// Evaluate at the first K exact peaks instead of given times.
    #[arg(long)]
    pub peaks: Option<usize>,
    /// Search horizon for `--peaks`.
    #[arg(long, default_value_t = 1e8)]
    pub tmax: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ParetoArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub target: Target,
    #[arg(long, default_value_t = 1e6)]
    pub qmax: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RealizeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub target: Target,
    #[arg(long, default_value = "t^-1")]
    pub psi: String,
    #[arg(long, default_value_t = 1e6)]
    pub tmax: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct LimsupArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub target: Target,
    #[arg(long, default_value = "t^-1")]
    pub psi: String,
    #[arg(long, default_value_t = 1e6)]
    pub tmax: f64,
    /// First peak index of the tail; half the peaks when absent.
    #[arg(long)]
    pub k_tail: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DirArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub target: Target,
    #[arg(long)]
    pub weights: Option<String>,
    /// Window start; √tmax when absent.
    #[arg(long)]
    pub tmin: Option<f64>,
    #[arg(long, default_value_t = 1e6)]
    pub tmax: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ConstructArgs {
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, value_parser = text_value, default_value = "sup")]
    pub norm: Value,
    #[arg(long, value_parser = text_value)]
    pub qnorm: Option<Value>,
    /// exhaustion or psi.
    #[arg(long, default_value = "exhaustion")]
    pub mode: String,
    /// ψ for the psi mode.
    #[arg(long, default_value = "t^-1")]
    pub psi: String,
    /// Target value.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub rounds: usize,
    /// Centre of the starting box (m*n rationals); every entry 1/2 when absent.
    #[arg(long)]
    pub center: Option<String>,
    #[arg(long, default_value = "1/4")]
    pub radius: String,
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub excursion_budget: usize,
    #[arg(long, default_value_t = 10)]
    pub box_samples: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SampleAeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub shape: Shape,
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e4)]
    pub horizon: f64,
    /// Window start; √horizon when absent.
    #[arg(long)]
    pub tmin: Option<f64>,
    /// Random entries are multiples of 2^-den_bits.
    #[arg(long, default_value_t = 40)]
    pub den_bits: u32,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct Gap2Args {
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, value_parser = text_value, default_value = "sup")]
    pub norm: Value,
    #[arg(long, default_value_t = 10.0)]
    pub tmin: f64,
    #[arg(long, default_value_t = 1e4)]
    pub tmax: f64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// χ_γ, λ_ψ or the height at given times or at exact peaks (CSV).
    Eval(EvalArgs),
    /// Best-approximation records (CSV).
    Pareto(ParetoArgs),
    /// Realizing sequence with switch times and peaks (CSV).
    Realize(RealizeArgs),
    /// Finite-horizon limsup of λ_ψ (JSON).
    Limsup(LimsupArgs),
    /// Escape threshold of Λ_Θ along g_t (JSON).
    Dir(DirArgs),
    /// Nested-box construction with a replayed certificate (JSON).
    Construct(ConstructArgs),
    /// Escape thresholds of seeded random matrices (JSON).
    SampleAe(SampleAeArgs),
    /// Escape thresholds of seeded random 2-lattices (JSON).
    Gap2(Gap2Args),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Eval(_) => "eval",
            Command::Pareto(_) => "pareto",
            Command::Realize(_) => "realize",
            Command::Limsup(_) => "limsup",
            Command::Dir(_) => "dir",
            Command::Construct(_) => "construct",
            Command::SampleAe(_) => "sample-ae",
            Command::Gap2(_) => "gap2",
        }
    }

    fn args_map(&self) -> Map<String, Value> {
        match self {
            Command::Eval(a) => config::to_map(a),
            Command::Pareto(a) => config::to_map(a),
            Command::Realize(a) => config::to_map(a),
            Command::Limsup(a) => config::to_map(a),
            Command::Dir(a) => config::to_map(a),
            Command::Construct(a) => config::to_map(a),
            Command::SampleAe(a) => config::to_map(a),
            Command::Gap2(a) => config::to_map(a),
        }
    }
}

/// The settings every command shares, after the config overlay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Common {
    pub seed: u64,
    pub precision: u32,
}

/// What a command produced.
pub enum Output {
    Csv { header: Vec<&'static str>, rows: Vec<Vec<String>> },
    Json(Value),
    /// Named JSON documents; written into the `--out` directory, or combined on stdout.
    Files(Vec<(&'static str, Value)>),
}

/// Runs one invocation, writing results to `--out` or `stdout` and diagnostics to `stderr`.
/// Returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

/// Output is written before a failed verdict is reported.
fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut effective = cli.command.args_map();
    effective.insert("seed".into(), Value::from(cli.global.seed));
    effective.insert("precision".into(), Value::from(cli.global.precision));
    if let Some(path) = &cli.global.config {
        config::overlay(&mut effective, path)?;
    }
    let common: Common = config::from_map(&effective)?;
    let mut echo = effective.clone();
    echo.insert("command".into(), Value::from(cli.command.name()));
    let echo = Value::Object(echo);
    let (output, verdict) = commands::dispatch(&cli.command, &effective, &common)?;
    write_output(output, &echo, cli.global.out.as_deref(), stdout)?;
    verdict
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Config(format!("cannot write output: {e}"))
}

fn with_config(echo: &Value, body: Value) -> Value {
    let mut obj = Map::new();
    obj.insert("config".into(), echo.clone());
    match body {
        Value::Object(b) => obj.extend(b),
        other => {
            obj.insert("result".into(), other);
        }
    }
    Value::Object(obj)
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

fn write_output(output: Output, echo: &Value, out: Option<&std::path::Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let text = match output {
        Output::Csv { header, rows } => {
            let mut s = format!("# config: {}\n{}\n", serde_json::to_string(echo).expect("values serialize"), header.join(","));
            for r in rows {
                s.push_str(&r.join(","));
                s.push('\n');
            }
            s
        }
        Output::Json(v) => json_text(&with_config(echo, v)),
        Output::Files(docs) => {
            if let Some(dir) = out {
                std::fs::create_dir_all(dir).map_err(io_err)?;
                for (name, v) in docs {
                    let doc = with_config(echo, json!({ name: v }));
                    std::fs::write(dir.join(format!("{name}.json")), json_text(&doc)).map_err(io_err)?;
                }
                return Ok(());
            }
            let mut obj = Map::new();
            for (name, v) in docs {
                obj.insert(name.into(), v);
            }
            json_text(&with_config(echo, Value::Object(obj)))
        }
    };
    match out {
        Some(path) => std::fs::write(path, text).map_err(io_err),
        None => stdout.write_all(text.as_bytes()).map_err(io_err),
    }
}
