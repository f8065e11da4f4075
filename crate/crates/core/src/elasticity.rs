//! Sensitivity of the compute-optimal factors to finetuning data size.
//!
//! `e_k(c, n) = [(x*_k(c; n + dn) - x*_k(c; n)) / dn] * n / x*_k(c; n)`, then
//! averaged over budgets for each `n`, and over both budgets and sizes.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_model::{CostMode, ScalingFactors, VisionConfig};
use crate::error::{invalid, Error, Result};
use crate::frontier::{solve, FactorDomain, FrontierTable};
use crate::model::{Factor, Predictor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityConfig {
    /// Inference budgets in FLOPs.
    pub budgets: Vec<f64>,
    /// Finetuning data sizes in examples.
    pub data_sizes: Vec<f64>,
    pub delta_n: f64,
}

/// `count` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

impl Default for ElasticityConfig {
    /// 300 budgets over 1..100 TFLOPs, 100 sizes over 1M..10M, step 5M.
    fn default() -> Self {
        Self { budgets: linspace(1e12, 1e14, 300), data_sizes: linspace(1e6, 1e7, 100), delta_n: 5e6 }
    }
}

impl ElasticityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() || self.data_sizes.is_empty() {
            return Err(invalid("elasticity needs at least one budget and one data size"));
        }
        if !(self.delta_n > 0.0 && self.delta_n.is_finite()) {
            return Err(invalid("delta_n must be positive"));
        }
        if self.budgets.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(invalid("budgets must be positive"));
        }
        if self.data_sizes.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
            return Err(invalid("data sizes must be positive"));
        }
        Ok(())
    }
}

fn forward_difference(x0: &ScalingFactors, x1: &ScalingFactors, n: f64, delta_n: f64) -> [f64; 3] {
    let mut e = [0.0; 3];
    for (k, slot) in e.iter_mut().enumerate() {
        let (a, b) = (x0.get(k) as f64, x1.get(k) as f64);
        *slot = (b - a) / delta_n * n / a;
    }
    e
}

/// Elasticities `(e_N, e_T, e_V)` at one budget and data size.
pub fn elasticity_point<M: Predictor + ?Sized>(
    model: &M,
    domain: &FactorDomain,
    budget_c: f64,
    n: f64,
    delta_n: f64,
    vision: &VisionConfig<f64>,
    mode: CostMode,
) -> Result<[f64; 3]> {
    if !(delta_n > 0.0) {
        return Err(invalid("delta_n must be positive"));
    }
    let x0 = solve(model, domain, budget_c, n, vision, mode)?.x_star;
    let x1 = solve(model, domain, budget_c, n + delta_n, vision, mode)?.x_star;
    Ok(forward_difference(&x0, &x1, n, delta_n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseEntry {
    pub budget_c: f64,
    pub n: f64,
    pub x_star: ScalingFactors,
    pub x_star_next: ScalingFactors,
    /// Indexed like [`Factor::ALL`].
    pub e: [f64; 3],
}

/// Average over the included budgets; `e` is `None` when every budget was excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerNEntry {
    pub n: f64,
    pub e: Option<[f64; 3]>,
    pub included: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub e: Option<[f64; 3]>,
    pub included: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityReport {
    pub config: ElasticityConfig,
    pub pointwise: Vec<PointwiseEntry>,
    pub per_n: Vec<PerNEntry>,
    pub aggregate: Aggregate,
}

impl ElasticityReport {
    pub fn aggregate_for(&self, f: Factor) -> Option<f64> {
        self.aggregate.e.map(|e| e[f.index()])
    }
}

fn mean(entries: &[&PointwiseEntry]) -> Option<[f64; 3]> {
    if entries.is_empty() {
        return None;
    }
    let mut s = [0.0; 3];
    for p in entries {
        for k in 0..3 {
            s[k] += p.e[k];
        }
    }
    Some(s.map(|v| v / entries.len() as f64))
}

/// Pointwise, per-size and aggregate elasticities over the configured grid.
/// Budgets infeasible at either `n` or `n + delta_n` are left out of the
/// averages and counted as excluded.
pub fn elasticity_report<M: Predictor + ?Sized>(
    model: &M,
    domain: &FactorDomain,
    cfg: &ElasticityConfig,
    vision: &VisionConfig<f64>,
    mode: CostMode,
) -> Result<ElasticityReport> {
    cfg.validate()?;
    let mut sizes: Vec<f64> = cfg.data_sizes.iter().flat_map(|&n| [n, n + cfg.delta_n]).collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    let tables: BTreeMap<u64, FrontierTable> = sizes
        .par_iter()
        .map(|&n| Ok((n.to_bits(), FrontierTable::build(model, domain, n, vision, mode)?)))
        .collect::<Result<_>>()?;

    let mut pointwise = Vec::new();
    let mut per_n = Vec::with_capacity(cfg.data_sizes.len());
    for &n in &cfg.data_sizes {
        let (t0, t1) = (&tables[&n.to_bits()], &tables[&(n + cfg.delta_n).to_bits()]);
        let start = pointwise.len();
        let mut excluded = 0;
        for &c in &cfg.budgets {
            match (t0.solve(c), t1.solve(c)) {
                (Ok(p0), Ok(p1)) => pointwise.push(PointwiseEntry {
                    budget_c: c,
                    n,
                    x_star: p0.x_star,
                    x_star_next: p1.x_star,
                    e: forward_difference(&p0.x_star, &p1.x_star, n, cfg.delta_n),
                }),
                (Err(Error::Infeasible { .. }), _) | (_, Err(Error::Infeasible { .. })) => excluded += 1,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
        let included: Vec<&PointwiseEntry> = pointwise[start..].iter().collect();
        per_n.push(PerNEntry { n, e: mean(&included), included: included.len(), excluded });
    }
    let all: Vec<&PointwiseEntry> = pointwise.iter().collect();
    let aggregate = Aggregate {
        e: mean(&all),
        included: all.len(),
        excluded: per_n.iter().map(|p| p.excluded).sum(),
    };
    Ok(ElasticityReport { config: cfg.clone(), pointwise, per_n, aggregate })
}

/// `e_k(n)`: budget-averaged elasticities for each configured data size.
pub fn elasticity_vs_n<M: Predictor + ?Sized>(
    model: &M,
    domain: &FactorDomain,
    cfg: &ElasticityConfig,
    vision: &VisionConfig<f64>,
    mode: CostMode,
) -> Result<Vec<PerNEntry>> {
    Ok(elasticity_report(model, domain, cfg, vision, mode)?.per_n)
}

/// `e_k`: elasticities averaged over every included (budget, size) pair.
pub fn elasticity_aggregate<M: Predictor + ?Sized>(
    model: &M,
    domain: &FactorDomain,
    cfg: &ElasticityConfig,
    vision: &VisionConfig<f64>,
    mode: CostMode,
) -> Result<Aggregate> {
    Ok(elasticity_report(model, domain, cfg, vision, mode)?.aggregate)
}

/// Long format: one row per (level, factor), blank fields where a level has no value.
pub fn write_report_csv<W: Write>(out: W, report: &ElasticityReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "factor", "budget_c", "n", "e", "included", "excluded"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for p in &report.pointwise {
        for f in Factor::ALL {
            w.write_record(["pointwise", f.symbol(), &p.budget_c.to_string(), &p.n.to_string(), &p.e[f.index()].to_string(), "", ""])?;
        }
    }
    for p in &report.per_n {
        for f in Factor::ALL {
            let e = opt(p.e.map(|e| e[f.index()]));
            w.write_record(["per_n", f.symbol(), "", &p.n.to_string(), &e, &p.included.to_string(), &p.excluded.to_string()])?;
        }
    }
    let a = &report.aggregate;
    for f in Factor::ALL {
        let e = opt(a.e.map(|e| e[f.index()]));
        w.write_record(["aggregate", f.symbol(), "", "", &e, &a.included.to_string(), &a.excluded.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json<W: Write>(mut out: W, report: &ElasticityReport) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n")?;
    Ok(())
}
