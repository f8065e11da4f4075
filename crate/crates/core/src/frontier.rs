//! Compute-optimal scaling factors under an inference FLOP budget, found by
//! exhaustive search over a discrete domain.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_model::{inference_flops, CostMode, ScalingFactors, VisionConfig};
use crate::error::{invalid, Error, Result};
use crate::model::{Predictor, Target};
use crate::sweep_data::SweepRecord;

/// Admissible values of each scaling factor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorDomain {
    #[serde(rename = "set_N")]
    pub lm_params: Vec<u64>,
    #[serde(rename = "set_T")]
    pub frames: Vec<u64>,
    #[serde(rename = "set_V")]
    pub tokens_per_frame: Vec<u64>,
}

fn is_perfect_square(v: u64) -> bool {
    let r = (v as f64).sqrt().round() as u64;
    (r.saturating_sub(1)..=r + 1).any(|c| c.checked_mul(c) == Some(v))
}

impl FactorDomain {
    /// Sorts and deduplicates each set, then validates.
    pub fn new(mut lm_params: Vec<u64>, mut frames: Vec<u64>, mut tokens_per_frame: Vec<u64>) -> Result<Self> {
        for set in [&mut lm_params, &mut frames, &mut tokens_per_frame] {
            set.sort_unstable();
            set.dedup();
        }
        let d = Self { lm_params, frames, tokens_per_frame };
        d.validate()?;
        Ok(d)
    }

    /// LM sizes {1, 2.8, 7.5}B, 1..=128 frames, k² tokens for k in 1..=28.
    pub fn paper_default() -> Self {
        Self::with_lm_sizes(vec![1_000_000_000, 2_800_000_000, 7_500_000_000])
    }

    /// Five LM sizes on the default frame and token grids (17,920 candidates).
    pub fn extended() -> Self {
        Self::with_lm_sizes(vec![500_000_000, 1_000_000_000, 2_800_000_000, 7_500_000_000, 14_000_000_000])
    }

    fn with_lm_sizes(lm_params: Vec<u64>) -> Self {
        Self {
            lm_params,
            frames: (1..=128).collect(),
            tokens_per_frame: (1..=28u64).map(|k| k * k).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, set) in [("set_N", &self.lm_params), ("set_T", &self.frames), ("set_V", &self.tokens_per_frame)] {
            if set.is_empty() {
                return Err(invalid(format!("{name} is empty")));
            }
            if set.contains(&0) {
                return Err(invalid(format!("{name} contains zero")));
            }
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!("{name} must be strictly increasing")));
            }
        }
        if let Some(v) = self.tokens_per_frame.iter().find(|&&v| !is_perfect_square(v)) {
            return Err(invalid(format!("tokens per frame {v} is not a perfect square")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lm_params.len() * self.frames.len() * self.tokens_per_frame.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `i`-th candidate in lexicographic (N, T, V) order.
    pub fn candidate(&self, i: usize) -> ScalingFactors {
        let nv = self.tokens_per_frame.len();
        let nt = self.frames.len();
        ScalingFactors {
            lm_params: self.lm_params[i / (nt * nv)],
            frames: self.frames[(i / nv) % nt],
            tokens_per_frame: self.tokens_per_frame[i % nv],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ScalingFactors> + '_ {
        (0..self.len()).map(move |i| self.candidate(i))
    }

    pub fn contains(&self, x: &ScalingFactors) -> bool {
        self.lm_params.binary_search(&x.lm_params).is_ok()
            && self.frames.binary_search(&x.frames).is_ok()
            && self.tokens_per_frame.binary_search(&x.tokens_per_frame).is_ok()
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let d: FactorDomain = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        FactorDomain::new(d.lm_params, d.frames, d.tokens_per_frame)
    }
}

impl Default for FactorDomain {
    fn default() -> Self {
        Self::paper_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub budget_c: f64,
    pub n: f64,
    pub x_star: ScalingFactors,
    pub achieved_flops: f64,
    pub predicted_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    x: ScalingFactors,
    cost: f64,
    error: f64,
}

/// Lower error wins, then lower cost, then lexicographically smaller factors.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    a.error
        .total_cmp(&b.error)
        .then(a.cost.total_cmp(&b.cost))
        .then(a.x.cmp(&b.x))
}

fn check_model<M: Predictor + ?Sized>(model: &M) -> Result<()> {
    if !model.coordinates().is_full() {
        return Err(invalid("frontier search needs a model over (N, T, V) in that order"));
    }
    Ok(())
}

fn check_budget(budget_c: f64) -> Result<()> {
    if !(budget_c > 0.0 && budget_c.is_finite()) {
        return Err(invalid(format!("budget must be positive and finite, got {budget_c}")));
    }
    Ok(())
}

fn min_cost(domain: &FactorDomain, vision: &VisionConfig<f64>, mode: CostMode) -> f64 {
    domain.iter().map(|x| inference_flops(&x, vision, mode)).fold(f64::INFINITY, f64::min)
}

fn predicted<M: Predictor + ?Sized>(model: &M, x: &ScalingFactors, n: f64) -> Result<f64> {
    let e = model.predict_raw(x, n)?;
    if e.is_nan() {
        return Err(invalid(format!("model prediction is NaN at {x:?}, n={n}")));
    }
    Ok(e)
}

/// The lowest-error configuration whose inference cost fits in `budget_c`.
pub fn solve<M: Predictor + ?Sized>(
    model: &M,
    domain: &FactorDomain,
    budget_c: f64,
    n: f64,
    vision: &VisionConfig<f64>,
    mode: CostMode,
) -> Result<FrontierPoint> {
    check_model(model)?;
    check_budget(budget_c)?;
    let best = (0..domain.len())
        .into_par_iter()
        .map(|i| -> Result<Option<Candidate>> {
            let x = domain.candidate(i);
            let cost = inference_flops(&x, vision, mode);
            if cost > budget_c {
                return Ok(None);
            }
            Ok(Some(Candidate { x, cost, error: predicted(model, &x, n)? }))
        })
        .try_reduce(
            || None,
            |a, b| {
                Ok::<_, Error>(match (a, b) {
                    (Some(a), Some(b)) => Some(if rank(&a, &b) == Ordering::Greater { b } else { a }),
                    (a, b) => a.or(b),
                })
            },
        )?;
    match best {
        Some(c) => Ok(FrontierPoint { budget_c, n, x_star: c.x, achieved_flops: c.cost, predicted_error: c.error }),
        None => Err(Error::Infeasible { budget: budget_c, min_cost: min_cost(domain, vision, mode) }),
    }
}

/// Every candidate's cost and prediction at one data size, sorted by cost,
/// with the running best. Answers any budget by binary search.
#[derive(Debug, Clone)]
pub struct FrontierTable {
    n: f64,
    by_cost: Vec<Candidate>,
    prefix_best: Vec<usize>,
}

impl FrontierTable {
    pub fn build<M: Predictor + ?Sized>(
        model: &M,
        domain: &FactorDomain,
        n: f64,
        vision: &VisionConfig<f64>,
        mode: CostMode,
    ) -> Result<Self> {
        check_model(model)?;
        let mut by_cost = (0..domain.len())
            .into_par_iter()
            .map(|i| {
                let x = domain.candidate(i);
                Ok(Candidate { x, cost: inference_flops(&x, vision, mode), error: predicted(model, &x, n)? })
            })
            .collect::<Result<Vec<_>>>()?;
        by_cost.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.x.cmp(&b.x)));
        let mut prefix_best = Vec::with_capacity(by_cost.len());
        let mut best = 0;
        for (i, c) in by_cost.iter().enumerate() {
            if rank(c, &by_cost[best]) == Ordering::Less {
                best = i;
            }
            prefix_best.push(best);
        }
        Ok(Self { n, by_cost, prefix_best })
    }

    pub fn min_cost(&self) -> f64 {
        self.by_cost.first().map_or(f64::INFINITY, |c| c.cost)
    }

    pub fn solve(&self, budget_c: f64) -> Result<FrontierPoint> {
        check_budget(budget_c)?;
        let feasible = self.by_cost.partition_point(|c| c.cost <= budget_c);
        if feasible == 0 {
            return Err(Error::Infeasible { budget: budget_c, min_cost: self.min_cost() });
        }
        let c = &self.by_cost[self.prefix_best[feasible - 1]];
        Ok(FrontierPoint { budget_c, n: self.n, x_star: c.x, achieved_flops: c.cost, predicted_error: c.error })
    }
}

/// One budget on a frontier curve: either a solved point or an explicit gap.
#[derive(Debug, Clone, PartialEq)]
pub enum CurveEntry {
    Point(FrontierPoint),
    Gap { budget_c: f64, n: f64, min_cost: f64 },
}

impl CurveEntry {
    pub fn point(&self) -> Option<&FrontierPoint> {
        match self {
            CurveEntry::Point(p) => Some(p),
            CurveEntry::Gap { .. } => None,
        }
    }
}

/// Solve at each budget in ascending `budgets`.
pub fn frontier_curve<M: Predictor + ?Sized>(
    model: &M,
    domain: &FactorDomain,
    budgets: &[f64],
    n: f64,
    vision: &VisionConfig<f64>,
    mode: CostMode,
) -> Result<Vec<CurveEntry>> {
    if budgets.is_empty() {
        return Err(invalid("no budgets given"));
    }
    if budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("budgets must be in ascending order"));
    }
    let table = FrontierTable::build(model, domain, n, vision, mode)?;
    budgets
        .iter()
        .map(|&c| match table.solve(c) {
            Ok(p) => Ok(CurveEntry::Point(p)),
            Err(Error::Infeasible { min_cost, .. }) => Ok(CurveEntry::Gap { budget_c: c, n, min_cost }),
            Err(e) => Err(e),
        })
        .collect()
}

/// Best observed run near one FLOP target.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalBin {
    pub budget_c: f64,
    pub members: usize,
    pub best: Option<SweepRecord>,
}

/// Groups runs whose cost is within relative `tolerance` of each bin target
/// and keeps the lowest-error run per bin.
pub fn empirical_frontier(
    records: &[SweepRecord],
    metric: &str,
    budget_bins: &[f64],
    tolerance: f64,
    vision: &VisionConfig<f64>,
    mode: CostMode,
) -> Result<Vec<EmpiricalBin>> {
    if budget_bins.is_empty() {
        return Err(invalid("no budget bins given"));
    }
    if !(tolerance >= 0.0) {
        return Err(invalid("tolerance must be non-negative"));
    }
    for &b in budget_bins {
        check_budget(b)?;
    }
    let bins = budget_bins
        .iter()
        .map(|&c| {
            let mut members = 0;
            let mut best: Option<(&SweepRecord, f64)> = None;
            for r in records {
                let Some(value) = r.metrics.get(metric) else { continue };
                let cost = inference_flops(&r.x, vision, mode);
                if (cost / c - 1.0).abs() > tolerance {
                    continue;
                }
                members += 1;
                let err = Target::Error.from_metric(*value);
                if best.is_none_or(|(_, e)| err < e) {
                    best = Some((r, err));
                }
            }
            EmpiricalBin { budget_c: c, members, best: best.map(|(r, _)| r.clone()) }
        })
        .collect();
    Ok(bins)
}

/// Frontier rows as CSV; gaps leave the factor columns empty.
pub fn write_curve_csv<W: Write>(out: W, entries: &[CurveEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["budget_c", "n", "x_N", "x_T", "x_V", "achieved_flops", "predicted_error"])?;
    for e in entries {
        match e {
            CurveEntry::Point(p) => w.write_record([
                p.budget_c.to_string(),
                p.n.to_string(),
                p.x_star.lm_params.to_string(),
                p.x_star.frames.to_string(),
                p.x_star.tokens_per_frame.to_string(),
                p.achieved_flops.to_string(),
                p.predicted_error.to_string(),
            ])?,
            CurveEntry::Gap { budget_c, n, .. } => {
                w.write_record([budget_c.to_string(), n.to_string(), String::new(), String::new(), String::new(), String::new(), String::new()])?
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveJson {
    budget_c: f64,
    n: f64,
    #[serde(rename = "x_N")]
    lm_params: Option<u64>,
    #[serde(rename = "x_T")]
    frames: Option<u64>,
    #[serde(rename = "x_V")]
    tokens_per_frame: Option<u64>,
    achieved_flops: Option<f64>,
    predicted_error: Option<f64>,
}

pub fn write_curve_json<W: Write>(out: W, entries: &[CurveEntry]) -> Result<()> {
    let rows: Vec<CurveJson> = entries
        .iter()
        .map(|e| match e {
            CurveEntry::Point(p) => CurveJson {
                budget_c: p.budget_c,
                n: p.n,
                lm_params: Some(p.x_star.lm_params),
                frames: Some(p.x_star.frames),
                tokens_per_frame: Some(p.x_star.tokens_per_frame),
                achieved_flops: Some(p.achieved_flops),
                predicted_error: Some(p.predicted_error),
            },
            CurveEntry::Gap { budget_c, n, .. } => CurveJson {
                budget_c: *budget_c,
                n: *n,
                lm_params: None,
                frames: None,
                tokens_per_frame: None,
                achieved_flops: None,
                predicted_error: None,
            },
        })
        .collect();
    serde_json::to_writer_pretty(out, &rows)?;
    Ok(())
}
