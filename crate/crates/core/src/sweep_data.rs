//! Sweep records: loading and saving them, planning star and isoFLOP
//! designs, and generating synthetic records from a known surface.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cost_model::{inference_flops, CostMode, ScalingFactors, VisionConfig};
use crate::error::{invalid, Error, Result};
use crate::frontier::FactorDomain;
use crate::model::{Predictor, ScalingModel};

pub const DEFAULT_METRIC: &str = "Metrics/Avg";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepTag {
    Star,
    Isoflop,
    #[default]
    Other,
}

impl SweepTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepTag::Star => "star",
            SweepTag::Isoflop => "isoflop",
            SweepTag::Other => "other",
        }
    }
}

impl fmt::Display for SweepTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "star" => Ok(SweepTag::Star),
            "isoflop" => Ok(SweepTag::Isoflop),
            "other" | "" => Ok(SweepTag::Other),
            _ => Err(invalid(format!("unknown sweep tag {s:?}"))),
        }
    }
}

/// One finetuning run and the scores it achieved, each on a (0, 100] scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub run_id: String,
    pub x: ScalingFactors,
    pub n: f64,
    pub sweep: SweepTag,
    pub metrics: BTreeMap<String, f64>,
}

impl SweepRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn validate(&self) -> Result<()> {
        self.x.validate()?;
        if !(self.n >= 1.0 && self.n.is_finite()) {
            return Err(invalid(format!("run {}: data size {} must be at least 1", self.run_id, self.n)));
        }
        for (m, v) in &self.metrics {
            check_metric_value(*v).map_err(|e| invalid(format!("run {} metric {m}: {e}", self.run_id)))?;
        }
        Ok(())
    }
}

fn check_metric_value(v: f64) -> std::result::Result<(), String> {
    if v > 0.0 && v <= 100.0 {
        Ok(())
    } else {
        Err(format!("value {v} outside (0, 100]"))
    }
}

/// A planned run: where to train and on how much data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub x: ScalingFactors,
    pub n: f64,
    pub sweep: SweepTag,
}

/// One row of the long-format table: a single metric of a single run.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Row {
    run_id: String,
    #[serde(rename = "x_N")]
    lm_params: f64,
    #[serde(rename = "x_T")]
    frames: f64,
    #[serde(rename = "x_V")]
    tokens_per_frame: f64,
    n: f64,
    sweep: String,
    metric: String,
    value: f64,
}

fn positive_integer(v: f64, what: &str) -> std::result::Result<u64, String> {
    if v >= 1.0 && v.fract() == 0.0 && v < u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(format!("{what} must be a positive integer, got {v}"))
    }
}

/// Folds long-format rows into records, preserving first-seen run order.
struct Assembler {
    records: Vec<SweepRecord>,
    index: HashMap<String, usize>,
}

impl Assembler {
    fn new() -> Self {
        Self { records: Vec::new(), index: HashMap::new() }
    }

    fn push(&mut self, line: usize, row: Row) -> Result<()> {
        let schema = |msg: String| Error::Schema { row: line, msg };
        let x = ScalingFactors {
            lm_params: positive_integer(row.lm_params, "x_N").map_err(schema)?,
            frames: positive_integer(row.frames, "x_T").map_err(schema)?,
            tokens_per_frame: positive_integer(row.tokens_per_frame, "x_V").map_err(schema)?,
        };
        if !(row.n >= 1.0 && row.n.is_finite()) {
            return Err(schema(format!("n must be at least 1, got {}", row.n)));
        }
        let sweep: SweepTag = row.sweep.parse().map_err(|e: Error| schema(e.to_string()))?;
        check_metric_value(row.value).map_err(schema)?;
        if row.run_id.is_empty() || row.metric.is_empty() {
            return Err(schema("run_id and metric must be non-empty".into()));
        }
        match self.index.get(&row.run_id) {
            Some(&i) => {
                let r = &mut self.records[i];
                if r.x != x || r.n != row.n || r.sweep != sweep {
                    return Err(schema(format!("run {} appears with conflicting factors", row.run_id)));
                }
                if r.metrics.contains_key(&row.metric) {
                    return Err(Error::Duplicate { run_id: row.run_id, metric: row.metric });
                }
                r.metrics.insert(row.metric, row.value);
            }
            None => {
                self.index.insert(row.run_id.clone(), self.records.len());
                self.records.push(SweepRecord {
                    run_id: row.run_id,
                    x,
                    n: row.n,
                    sweep,
                    metrics: BTreeMap::from([(row.metric, row.value)]),
                });
            }
        }
        Ok(())
    }
}

/// Reads the long-format CSV table (header required).
pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut asm = Assembler::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        // line 1 is the header
        let line = i + 2;
        let row = row.map_err(|e| Error::Schema { row: line, msg: e.to_string() })?;
        asm.push(line, row)?;
    }
    Ok(asm.records)
}

/// Reads the JSON-lines variant: one row object per line, blank lines skipped.
pub fn read_records_jsonl<R: BufRead>(input: R) -> Result<Vec<SweepRecord>> {
    let mut asm = Assembler::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| Error::Schema { row: i + 1, msg: e.to_string() })?;
        asm.push(i + 1, row)?;
    }
    Ok(asm.records)
}

fn is_jsonl(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "ndjson"))
}

/// Loads records from a `.csv` or `.jsonl` file.
pub fn load_records(path: &Path) -> Result<Vec<SweepRecord>> {
    let file = std::fs::File::open(path)?;
    if is_jsonl(path) {
        read_records_jsonl(std::io::BufReader::new(file))
    } else {
        read_records_csv(file)
    }
}

fn rows(records: &[SweepRecord]) -> impl Iterator<Item = Row> + '_ {
    records.iter().flat_map(|r| {
        r.metrics.iter().map(move |(m, v)| Row {
            run_id: r.run_id.clone(),
            lm_params: r.x.lm_params as f64,
            frames: r.x.frames as f64,
            tokens_per_frame: r.x.tokens_per_frame as f64,
            n: r.n,
            sweep: r.sweep.to_string(),
            metric: m.clone(),
            value: *v,
        })
    })
}

pub fn write_records_csv<W: Write>(out: W, records: &[SweepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_id", "x_N", "x_T", "x_V", "n", "sweep", "metric", "value"])?;
    for r in records {
        for (m, v) in &r.metrics {
            w.write_record([
                r.run_id.clone(),
                r.x.lm_params.to_string(),
                r.x.frames.to_string(),
                r.x.tokens_per_frame.to_string(),
                r.n.to_string(),
                r.sweep.to_string(),
                m.clone(),
                v.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_jsonl<W: Write>(mut out: W, records: &[SweepRecord]) -> Result<()> {
    for row in rows(records) {
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_records(path: &Path, records: &[SweepRecord]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if is_jsonl(path) {
        write_records_jsonl(file, records)
    } else {
        write_records_csv(file, records)
    }
}

/// Star design: vary one factor at a time away from `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarPlan {
    pub center: ScalingFactors,
    /// Values tried for each factor, in (N, T, V) order.
    pub grids: [Vec<u64>; 3],
    pub data_sizes: Vec<f64>,
}

impl StarPlan {
    /// Center (7.5B, 32, 196) at 0.25M, 0.5M and 1M examples.
    pub fn paper() -> Self {
        Self {
            center: ScalingFactors { lm_params: 7_500_000_000, frames: 32, tokens_per_frame: 196 },
            grids: [
                vec![1_000_000_000, 2_800_000_000, 7_500_000_000],
                vec![4, 8, 12, 16, 32],
                vec![4, 16, 25, 36, 49, 100, 196],
            ],
            data_sizes: vec![250_000.0, 500_000.0, 1_000_000.0],
        }
    }
}

/// Every (center with one factor replaced, n) pair, deduplicated in
/// first-seen order. Grid values may equal the center but not exceed it.
pub fn plan_star_sweep(plan: &StarPlan) -> Result<Vec<DesignPoint>> {
    plan.center.validate()?;
    if plan.data_sizes.is_empty() {
        return Err(invalid("star sweep needs at least one data size"));
    }
    if plan.data_sizes.iter().any(|&n| !(n >= 1.0 && n.is_finite())) {
        return Err(invalid("data sizes must be at least 1"));
    }
    if plan.grids.iter().all(Vec::is_empty) {
        return Err(invalid("star sweep needs at least one grid value"));
    }
    for (k, grid) in plan.grids.iter().enumerate() {
        for &v in grid {
            if v == 0 || v > plan.center.get(k) {
                return Err(invalid(format!(
                    "grid value {v} for factor {k} must lie in [1, {}]",
                    plan.center.get(k)
                )));
            }
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (k, grid) in plan.grids.iter().enumerate() {
        for &v in grid {
            for &n in &plan.data_sizes {
                let x = plan.center.with(k, v);
                if seen.insert((x, n.to_bits())) {
                    out.push(DesignPoint { x, n, sweep: SweepTag::Star });
                }
            }
        }
    }
    Ok(out)
}

/// IsoFLOP design: every domain point within relative `epsilon` of each target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoflopPlan {
    pub targets: Vec<f64>,
    pub epsilon: f64,
    pub domain: FactorDomain,
    pub n: f64,
    /// Keep only this many well-spaced points per target.
    pub subset: Option<usize>,
}

impl IsoflopPlan {
    pub fn new(targets: Vec<f64>, domain: FactorDomain, n: f64) -> Self {
        Self { targets, epsilon: 0.03, domain, n, subset: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon must be non-negative"));
        }
        if self.targets.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(invalid("isoFLOP targets must be positive"));
        }
        if !(self.n >= 1.0) {
            return Err(invalid("data size must be at least 1"));
        }
        self.domain.validate()
    }
}

/// Candidates per target, each list sorted lexicographically.
pub fn plan_isoflop_sweep(
    plan: &IsoflopPlan,
    vision: &VisionConfig<f64>,
    mode: CostMode,
) -> Result<Vec<(f64, Vec<ScalingFactors>)>> {
    plan.validate()?;
    let out = plan
        .targets
        .iter()
        .map(|&c| {
            let all: Vec<ScalingFactors> = plan
                .domain
                .iter()
                .filter(|x| (inference_flops(x, vision, mode) / c - 1.0).abs() <= plan.epsilon)
                .collect();
            let picked = match plan.subset {
                Some(m) => well_spaced_subset(&all, m),
                None => all,
            };
            (c, picked)
        })
        .collect();
    Ok(out)
}

/// Flattens an isoFLOP plan into design points at the plan's data size.
pub fn isoflop_design(planned: &[(f64, Vec<ScalingFactors>)], n: f64) -> Vec<DesignPoint> {
    planned
        .iter()
        .flat_map(|(_, xs)| xs.iter().map(move |&x| DesignPoint { x, n, sweep: SweepTag::Isoflop }))
        .collect()
}

fn log_distance(a: &ScalingFactors, b: &ScalingFactors) -> f64 {
    (0..3)
        .map(|k| ((a.get(k) as f64).ln() - (b.get(k) as f64).ln()).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Greedy max-min selection in log-factor space, seeded with the first
/// point; ties go to the earlier candidate. Returned in lexicographic order.
pub fn well_spaced_subset(points: &[ScalingFactors], m: usize) -> Vec<ScalingFactors> {
    if m >= points.len() {
        return points.to_vec();
    }
    if m == 0 {
        return Vec::new();
    }
    let mut chosen = vec![0usize];
    let mut nearest: Vec<f64> = points.iter().map(|p| log_distance(p, &points[0])).collect();
    while chosen.len() < m {
        let (next, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bd), (i, &d)| if d > bd { (i, d) } else { (bi, bd) });
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(log_distance(p, &points[next]));
        }
    }
    let mut out: Vec<ScalingFactors> = chosen.into_iter().map(|i| points[i]).collect();
    out.sort();
    out
}

/// The isoFLOP runs listed for the 2, 5, 15 and 30 TFLOP targets at 2M examples.
pub fn paper_isoflop_design() -> Vec<DesignPoint> {
    const B: u64 = 1_000_000_000;
    let groups: [(u64, &[(u64, u64)]); 12] = [
        (B, &[(2, 196), (3, 9), (3, 16)]),
        (2_800_000_000, &[(2, 64), (3, 4)]),
        (7_500_000_000, &[(2, 25), (3, 1)]),
        (B, &[(4, 289), (5, 169), (6, 81), (7, 25)]),
        (2_800_000_000, &[(3, 169), (4, 100), (5, 64), (6, 25), (7, 9)]),
        (7_500_000_000, &[(2, 121), (3, 64), (6, 9), (7, 4)]),
        (B, &[(8, 625), (11, 361), (16, 144), (20, 49), (22, 16)]),
        (2_800_000_000, &[(6, 324), (11, 121), (16, 49), (19, 25), (20, 16)]),
        (7_500_000_000, &[(7, 100), (8, 81), (15, 25), (19, 9), (21, 4)]),
        (B, &[(16, 625), (26, 256), (32, 144), (37, 81), (40, 49)]),
        (2_800_000_000, &[(9, 484), (17, 196), (22, 121), (27, 81), (35, 36)]),
        (7_500_000_000, &[(16, 81), (25, 36), (29, 25), (38, 9)]),
    ];
    groups
        .iter()
        .flat_map(|(lm, tv)| {
            tv.iter().map(move |&(t, v)| DesignPoint {
                x: ScalingFactors { lm_params: *lm, frames: t, tokens_per_frame: v },
                n: 2_000_000.0,
                sweep: SweepTag::Isoflop,
            })
        })
        .collect()
}

/// Result of [`synthesize`]: the records plus the design points whose
/// generated error reached 100 and were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub records: Vec<SweepRecord>,
    pub excluded: Vec<DesignPoint>,
}

/// Draws records from `model` at each design point with multiplicative
/// log-normal noise: `error = f(x, n) exp(sigma z)`, stored as
/// `performance = 100 - error` under `metric`.
pub fn synthesize(
    model: &ScalingModel,
    design: &[DesignPoint],
    noise_sigma: f64,
    seed: u64,
    metric: &str,
) -> Result<Synthetic> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(invalid("noise sigma must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(design.len());
    let mut excluded = Vec::new();
    for (i, p) in design.iter().enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        let clean = model.predict_raw(&p.x, p.n)?;
        let error = clean * (noise_sigma * z).exp();
        let performance = 100.0 - error;
        if !(error > 0.0 && performance > 0.0 && performance <= 100.0) {
            warn!("design point {i} ({:?}, n={}) generated error {error}; excluded", p.x, p.n);
            excluded.push(*p);
            continue;
        }
        records.push(SweepRecord {
            run_id: format!("{}-{i:04}", p.sweep),
            x: p.x,
            n: p.n,
            sweep: p.sweep,
            metrics: BTreeMap::from([(metric.to_string(), performance)]),
        });
    }
    Ok(Synthetic { records, excluded })
}
