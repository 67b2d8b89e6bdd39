//! Command-line front end.
//!
//! Each subcommand resolves its options as flag > config file > default, runs,
//! and writes `run.json` into its output directory with the resolved options.

mod commands;

use crate::error::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

pub use commands::{
    AnalyzeOpts, BenchOpts, EvalOpts, ExplainOpts, SearchOpts, SplitOpts, SynthOpts, TrainOpts,
};

#[derive(Debug, Parser)]
#[command(name = "acnet", version, about = "Attention-condenser networks for ultrasound frame classification")]
pub struct Cli {
    /// TOML or JSON options file (a previous run.json also works).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with evidence masks.
    Synth(SynthArgs),
    /// Assign videos to train/val/test without leakage.
    Split(SplitArgs),
    /// Train a graph on the train split.
    Train(TrainArgs),
    /// AUC, sensitivity and PPV on one split.
    Eval(EvalArgs),
    /// Complexity table for a graph file or built-in model.
    Analyze(AnalyzeArgs),
    /// Single-image latency benchmark.
    Bench(BenchArgs),
    /// Constrained architecture search.
    Search(SearchArgs),
    /// Occlusion critical-factor maps and overlays.
    Explain(ExplainArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Analyze(_) => "analyze",
            Command::Bench(_) => "bench",
            Command::Search(_) => "search",
            Command::Explain(_) => "explain",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub videos_per_class: Option<usize>,
    #[arg(long)]
    pub frames_per_video: Option<usize>,
    #[arg(long)]
    pub white_lung_prob: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// train,val,test fractions, e.g. 0.7,0.15,0.15
    #[arg(long, value_parser = parse_fractions)]
    pub fractions: Option<[f64; 3]>,
    /// Keep linear-probe videos.
    #[arg(long, action = clap::ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "is_false")]
    pub keep_linear: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Graph file; defaults to the seed prototype.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Built-in model: prototype or resnet50.
    #[arg(long)]
    pub model: Option<String>,
    /// NxCxHxW
    #[arg(long)]
    pub input: Option<String>,
    /// AUC used for the NetScore column.
    #[arg(long)]
    pub auc: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Built-in models to benchmark, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SearchArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_params: Option<u64>,
    #[arg(long)]
    pub max_flops: Option<u64>,
    #[arg(long)]
    pub min_auc: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<String>,
    /// Number of positive frames to explain.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long = "class")]
    #[serde(rename = "target_class", skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
}

fn parse_fractions(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected 3 fractions, got {}", v.len()))
}

fn parse_split(s: &str) -> std::result::Result<String, String> {
    s.parse::<crate::data::Split>().map(|x| x.to_string())
}

/// Parses `NxCxHxW`.
pub fn parse_shape(s: &str) -> Result<crate::tensor::Shape> {
    let dims: Vec<usize> = s
        .split(['x', 'X', ','])
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("shape `{s}`: {e}")))?;
    dims.try_into()
        .map_err(|_| Error::Config(format!("shape `{s}` must have four extents NxCxHxW")))
}

fn strip_nulls(v: Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.into_iter()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| (k, strip_nulls(v)))
                .collect(),
        ),
        other => other,
    }
}

fn merge(base: &mut Map<String, Value>, over: Map<String, Value>) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Object(b)), Value::Object(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn read_config_file(path: &Path, command: &str) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let value: Value = if is_toml {
        let t: toml::Value = toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
    };
    let Value::Object(mut root) = value else {
        return Err(Error::Parse(format!("{}: options must be a table/object", path.display())));
    };
    // run.json layout: {"command": ..., "options": {...}}
    if let Some(Value::Object(opts)) = root.remove("options") {
        return Ok(opts);
    }
    // Shared file with one table per subcommand; top-level scalars apply to all.
    let section = match root.remove(command) {
        Some(Value::Object(s)) => s,
        _ => Map::new(),
    };
    let mut shared: Map<String, Value> = root.into_iter().filter(|(_, v)| !v.is_object()).collect();
    merge(&mut shared, section);
    Ok(shared)
}

/// Resolves options as flag > file > default.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(
    command: &str,
    file: Option<&Path>,
    globals: Map<String, Value>,
    flags: &impl Serialize,
) -> Result<T> {
    let Value::Object(mut merged) = serde_json::to_value(T::default()).expect("defaults serialize") else {
        unreachable!("option structs serialize to objects")
    };
    if let Some(path) = file {
        merge(&mut merged, read_config_file(path, command)?);
    }
    merge(&mut merged, globals);
    if let Value::Object(f) = strip_nulls(serde_json::to_value(flags).expect("flags serialize")) {
        merge(&mut merged, f);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(format!("{command} options: {e}")))
}

fn globals(cli: &Cli) -> Map<String, Value> {
    let mut m = Map::new();
    if let Some(s) = cli.seed {
        m.insert("seed".into(), s.into());
    }
    if let Some(o) = &cli.out {
        m.insert("out".into(), Value::String(o.display().to_string()));
    }
    m
}

/// Writes `run.json` with the resolved options.
pub fn write_run_json(out_dir: &Path, command: &str, options: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let record = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "graph_format_version": crate::graph::GRAPH_FORMAT_VERSION,
        "options": options,
    });
    let path = out_dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&record).expect("run record serializes"))
        .map_err(|e| Error::io(&path, e))
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = cli.config.clone();
    let g = globals(&cli);
    let name = cli.command.name();
    let file = file.as_deref();
    match &cli.command {
        Command::Synth(a) => commands::synth(resolve(name, file, g, a)?),
        Command::Split(a) => commands::split(resolve(name, file, g, a)?),
        Command::Train(a) => commands::train(resolve(name, file, g, a)?),
        Command::Eval(a) => commands::eval(resolve(name, file, g, a)?),
        Command::Analyze(a) => commands::analyze(resolve(name, file, g, a)?),
        Command::Bench(a) => commands::bench(resolve(name, file, g, a)?),
        Command::Search(a) => commands::search(resolve(name, file, g, a)?),
        Command::Explain(a) => commands::explain(resolve(name, file, g, a)?),
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
