use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use vidscale::fitting::{Aggregation, Loss};
use vidscale::{CostMode, Factor, FormTag, Target};

#[derive(Debug, Parser, Serialize)]
#[command(name = "vidscale", version, about = "Fit inference compute-optimal scaling laws for video VLMs")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct Global {
    /// Output directory.
    #[arg(long, global = true, env = "VIDSCALE_OUT", default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Write JSON instead of CSV.
    #[arg(long, global = true)]
    pub json: bool,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON object of flag defaults, e.g. {"restarts": 100, "form": "add"}.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// File name of the main output inside --out.
    #[arg(long, global = true)]
    pub output: Option<String>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Fit a parametric model to sweep records.
    Fit(FitCmd),
    /// Evaluate a fitted model at given points.
    Predict(PredictCmd),
    /// Cross-validation, extrapolation or a comparison of forms.
    Evaluate(EvaluateCmd),
    /// Compute-optimal factors for each budget.
    Frontier(FrontierCmd),
    /// Sensitivity of the optimal factors to data size.
    Elasticity(ElasticityCmd),
    /// Write a star or isoFLOP design.
    PlanSweep(PlanCmd),
    /// Generate synthetic records from a known model.
    Simulate(SimulateCmd),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Frontier(_) => "frontier",
            Command::Elasticity(_) => "elasticity",
            Command::PlanSweep(_) => "plan-sweep",
            Command::Simulate(_) => "simulate",
        }
    }
}

pub const SUBCOMMANDS: [&str; 7] = ["fit", "predict", "evaluate", "frontier", "elasticity", "plan-sweep", "simulate"];

#[derive(Debug, Args, Serialize)]
pub struct FitOpts {
    #[arg(long, default_value = "add-interact")]
    pub form: FormTag,
    #[arg(long, default_value = "error")]
    pub target: Target,
    #[arg(long, default_value = vidscale::sweep_data::DEFAULT_METRIC)]
    pub metric: String,
    #[arg(long, default_value_t = 500)]
    pub restarts: usize,
    #[arg(long, default_value = "mse")]
    pub loss: Loss,
    #[arg(long, default_value_t = 1.0)]
    pub huber_delta: f64,
    /// Constrain exponents to be non-negative.
    #[arg(long)]
    pub bound_exponents: bool,
    #[arg(long, default_value_t = 1000)]
    pub max_iterations: usize,
    /// Bootstrap resamples; 0 fits a single model.
    #[arg(long, default_value_t = 0)]
    pub bag_resamples: usize,
    #[arg(long, default_value = "median")]
    pub bag_agg: Aggregation,
    #[arg(long, default_value_t = 50)]
    pub bag_restarts: usize,
    /// Factors the model depends on, e.g. "N,T,V" or "T".
    #[arg(long, default_value = "N,T,V", value_delimiter = ',')]
    pub factors: Vec<Factor>,
}

#[derive(Debug, Args, Serialize)]
pub struct CostOpts {
    #[arg(long, default_value = "0.43B", value_parser = parse_quantity)]
    pub vision_params: f64,
    #[arg(long, default_value = "768", value_parser = parse_quantity)]
    pub vision_features: f64,
    #[arg(long, default_value = "lm+vision")]
    pub cost_mode: CostMode,
    /// JSON file with set_N, set_T and set_V.
    #[arg(long)]
    pub domain_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DomainPreset::Default)]
    pub domain: DomainPreset,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainPreset {
    /// Three LM sizes (10,752 candidates).
    Default,
    /// Five LM sizes (17,920 candidates).
    Extended,
}

#[derive(Debug, Args, Serialize)]
pub struct FitCmd {
    #[arg(long)]
    pub records: PathBuf,
    #[command(flatten)]
    pub fit: FitOpts,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictCmd {
    #[arg(long)]
    pub model: PathBuf,
    /// Raw factor values "x_N,x_T,x_V"; repeatable.
    #[arg(long = "x", required = true, value_parser = parse_triple)]
    pub points: Vec<[u64; 3]>,
    #[arg(long, required = true, value_delimiter = ',', value_parser = parse_quantity)]
    pub n: Vec<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolArg {
    Cv,
    Extrapolation,
    Compare,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateCmd {
    #[arg(long)]
    pub records: PathBuf,
    /// Held-out records; defaults to the isoflop-tagged runs of --records,
    /// training on the rest.
    #[arg(long)]
    pub test_records: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Compare)]
    pub protocol: ProtocolArg,
    #[arg(long, value_delimiter = ',', default_value = "mult,add,add-interact-s,add-interact")]
    pub forms: Vec<FormTag>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub fit: FitOpts,
}

#[derive(Debug, Args, Serialize)]
pub struct FrontierCmd {
    #[arg(long)]
    pub model: PathBuf,
    /// FLOP budgets: values, "30T" shorthand, or "lo:hi:count" ranges.
    #[arg(long, required = true, value_parser = parse_list)]
    pub budgets: Vec<Quantities>,
    #[arg(long, required = true, value_delimiter = ',', value_parser = parse_quantity)]
    pub n: Vec<f64>,
    /// Also extract the empirical frontier from these records.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Relative cost tolerance for empirical bins.
    #[arg(long, default_value_t = 0.03)]
    pub epsilon: f64,
    #[arg(long, default_value = vidscale::sweep_data::DEFAULT_METRIC)]
    pub metric: String,
    #[command(flatten)]
    pub cost: CostOpts,
}

#[derive(Debug, Args, Serialize)]
pub struct ElasticityCmd {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "1T:100T:300", value_parser = parse_list)]
    pub budgets: Vec<Quantities>,
    #[arg(long, default_value = "1M:10M:100", value_parser = parse_list)]
    pub data_sizes: Vec<Quantities>,
    #[arg(long, default_value = "5M", value_parser = parse_quantity)]
    pub delta_n: f64,
    #[command(flatten)]
    pub cost: CostOpts,
}

#[derive(Debug, Args, Serialize)]
#[command(group = clap::ArgGroup::new("kind").required(true).args(["star", "isoflop"]))]
pub struct PlanCmd {
    #[arg(long)]
    pub star: bool,
    #[arg(long)]
    pub isoflop: bool,
    /// Star design as JSON (center, grids, data_sizes); defaults to the reference plan.
    #[arg(long)]
    pub star_plan: Option<PathBuf>,
    #[arg(long, default_value = "2T,5T,15T,30T", value_parser = parse_list)]
    pub targets: Vec<Quantities>,
    #[arg(long, default_value_t = 0.03)]
    pub epsilon: f64,
    #[arg(long, default_value = "2M", value_parser = parse_quantity)]
    pub n: f64,
    /// Keep this many well-spaced configurations per target.
    #[arg(long)]
    pub subset: Option<usize>,
    #[command(flatten)]
    pub cost: CostOpts,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignPreset {
    /// Reference star sweep.
    Star,
    /// Reference isoFLOP runs.
    Isoflop,
    /// Both.
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateCmd {
    /// Ground-truth model JSON: a fitted model, or {theta, coordinates}.
    #[arg(long)]
    pub truth: PathBuf,
    /// Design CSV from plan-sweep.
    #[arg(long, conflicts_with = "design")]
    pub design_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DesignPreset::Both)]
    pub design: DesignPreset,
    /// Standard deviation of the log-normal noise on error.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value = vidscale::sweep_data::DEFAULT_METRIC)]
    pub metric: String,
}

/// Number with an optional magnitude suffix: k, M, B or G, T, P.
pub fn parse_quantity(s: &str) -> Result<f64> {
    let s = s.trim();
    let (num, scale) = match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() && !s.ends_with("inf") => {
            let scale = match c {
                'k' | 'K' => 1e3,
                'M' => 1e6,
                'B' | 'G' => 1e9,
                'T' => 1e12,
                'P' => 1e15,
                _ => bail!("unknown suffix {c:?} in {s:?}"),
            };
            (&s[..i], scale)
        }
        _ => (s, 1.0),
    };
    let v: f64 = num.parse().with_context(|| format!("not a number: {s:?}"))?;
    let v = v * scale;
    if !v.is_finite() {
        bail!("{s:?} is not finite");
    }
    Ok(v)
}

/// Comma-separated quantities; an item "lo:hi:count" expands to `count`
/// evenly spaced values from lo to hi inclusive.
pub fn parse_list(s: &str) -> Result<Quantities> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        match parts.as_slice() {
            [v] => out.push(parse_quantity(v)?),
            [lo, hi, count] => {
                let count: usize = count.parse().with_context(|| format!("bad count in range {item:?}"))?;
                if count == 0 {
                    bail!("range {item:?} has zero points");
                }
                out.extend(vidscale::elasticity::linspace(parse_quantity(lo)?, parse_quantity(hi)?, count));
            }
            _ => bail!("expected a value or lo:hi:count, got {item:?}"),
        }
    }
    if out.is_empty() {
        bail!("empty list");
    }
    Ok(Quantities(out))
}

/// Values of one list flag.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Quantities(pub Vec<f64>);

/// All occurrences of a repeatable list flag, concatenated.
pub fn concat(lists: &[Quantities]) -> Vec<f64> {
    lists.iter().flat_map(|q| q.0.iter().copied()).collect()
}

pub fn parse_triple(s: &str) -> Result<[u64; 3]> {
    let parts: Vec<&str> = s.split(',').collect();
    let [a, b, c] = parts.as_slice() else { bail!("expected x_N,x_T,x_V, got {s:?}") };
    let mut out = [0u64; 3];
    for (slot, p) in out.iter_mut().zip([a, b, c]) {
        let v = parse_quantity(p)?;
        if !(v >= 1.0 && v.fract() == 0.0) {
            bail!("factor values must be positive integers, got {p:?}");
        }
        *slot = v as u64;
    }
    Ok(out)
}
