//! Goodness of fit, cross-validation, extrapolation checks and comparison of
//! parametric forms.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fitting::{fit, fit_bagged, BagConfig, FitConfig, Model};
use crate::model::{Predictor, Target};
use crate::scaling_forms::FormTag;
use crate::sweep_data::SweepRecord;

/// Quantity on which metrics were computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Error,
    Performance,
    Log,
}

impl From<Target> for Scale {
    fn from(t: Target) -> Self {
        match t {
            Target::Error => Scale::Error,
            Target::Performance => Scale::Performance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    /// Mean of `|predicted - actual| / actual`, in percent.
    pub e_pct: f64,
    /// `None` when the actual values have no variance.
    pub r2: Option<f64>,
    pub n_points: usize,
    pub scale: Scale,
}

pub fn metrics(predicted: &[f64], actual: &[f64], scale: Scale) -> Result<EvalReport> {
    if predicted.len() != actual.len() {
        return Err(invalid(format!("{} predictions for {} actual values", predicted.len(), actual.len())));
    }
    if actual.is_empty() {
        return Err(invalid("no points to evaluate"));
    }
    if actual.contains(&0.0) {
        return Err(invalid("relative error is undefined for a zero actual value"));
    }
    let m = actual.len() as f64;
    let ss_res: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    let rel: f64 = predicted.iter().zip(actual).map(|(p, a)| ((p - a) / a).abs()).sum();
    let mean = actual.iter().sum::<f64>() / m;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    Ok(EvalReport {
        mse: ss_res / m,
        e_pct: 100.0 * rel / m,
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        n_points: actual.len(),
        scale,
    })
}

/// Shuffled positions `0..len` cut into `k` folds whose sizes differ by at most one.
pub fn cv_folds(len: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(invalid("cross-validation needs at least 2 folds"));
    }
    if len < k {
        return Err(invalid(format!("{len} records cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..k).map(|j| order[j * len / k..(j + 1) * len / k].to_vec()).collect())
}

/// Single fit, or bagged fit when `bag` is given.
pub fn fit_model(records: &[SweepRecord], form: FormTag, cfg: &FitConfig, bag: Option<&BagConfig>) -> Result<Model> {
    Ok(match bag {
        Some(b) => Model::Bagged(fit_bagged(records, form, cfg, b)?),
        None => Model::Single(fit(records, form, cfg)?),
    })
}

/// Predicted and actual target values of `model` on `records`.
pub fn predictions<M: Predictor + ?Sized>(model: &M, records: &[SweepRecord], cfg: &FitConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pred = Vec::with_capacity(records.len());
    let mut actual = Vec::with_capacity(records.len());
    for r in records {
        let v = r
            .metric(&cfg.metric)
            .ok_or_else(|| invalid(format!("record {} has no metric {:?}", r.run_id, cfg.metric)))?;
        pred.push(model.predict_raw(&r.x, r.n)?);
        actual.push(cfg.target.from_metric(v));
    }
    Ok((pred, actual))
}

/// Pooled metrics over every held-out prediction of a `k`-fold split.
pub fn cross_validate(
    records: &[SweepRecord],
    form: FormTag,
    cfg: &FitConfig,
    bag: Option<&BagConfig>,
    k: usize,
    seed: u64,
) -> Result<EvalReport> {
    let folds = cv_folds(records.len(), k, seed)?;
    let per_fold = folds
        .par_iter()
        .map(|held| {
            let mut is_held = vec![false; records.len()];
            held.iter().for_each(|&i| is_held[i] = true);
            let train: Vec<SweepRecord> = records.iter().zip(&is_held).filter(|(_, h)| !**h).map(|(r, _)| r.clone()).collect();
            let test: Vec<SweepRecord> = held.iter().map(|&i| records[i].clone()).collect();
            let model = fit_model(&train, form, cfg, bag)?;
            predictions(&model, &test, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut pred, mut actual) = (Vec::new(), Vec::new());
    for (p, a) in per_fold {
        pred.extend(p);
        actual.extend(a);
    }
    metrics(&pred, &actual, cfg.target.into())
}

/// Fit on `train`, score on `test`.
pub fn extrapolation_eval(
    train: &[SweepRecord],
    test: &[SweepRecord],
    form: FormTag,
    cfg: &FitConfig,
    bag: Option<&BagConfig>,
) -> Result<EvalReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyData);
    }
    let model = fit_model(train, form, cfg, bag)?;
    let (p, a) = predictions(&model, test, cfg)?;
    metrics(&p, &a, cfg.target.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// k-fold cross-validation on train and test together.
    Cv,
    /// Fit on train, evaluate on test.
    Extrapolation,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Cv => "cv",
            Protocol::Extrapolation => "extrapolation",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cv" => Ok(Protocol::Cv),
            "extrapolation" | "extrap" => Ok(Protocol::Extrapolation),
            _ => Err(invalid(format!("unknown protocol {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub form: FormTag,
    pub protocol: Protocol,
    #[serde(flatten)]
    pub report: EvalReport,
    /// 1 for the lowest mse within the protocol.
    pub rank: usize,
}

/// Both protocols for every form. Rows are grouped by protocol, forms in
/// the given order.
pub fn compare_forms(
    train: &[SweepRecord],
    test: &[SweepRecord],
    forms: &[FormTag],
    cfg: &FitConfig,
    bag: Option<&BagConfig>,
    k: usize,
    seed: u64,
) -> Result<Vec<ComparisonRow>> {
    if forms.is_empty() {
        return Err(invalid("no forms to compare"));
    }
    let pooled: Vec<SweepRecord> = train.iter().chain(test).cloned().collect();
    let jobs: Vec<(Protocol, FormTag)> = [Protocol::Cv, Protocol::Extrapolation]
        .into_iter()
        .flat_map(|p| forms.iter().map(move |&f| (p, f)))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(protocol, form)| {
            let report = match protocol {
                Protocol::Cv => cross_validate(&pooled, form, cfg, bag, k, seed)?,
                Protocol::Extrapolation => extrapolation_eval(train, test, form, cfg, bag)?,
            };
            Ok(ComparisonRow { form, protocol, report, rank: 0 })
        })
        .collect::<Result<Vec<_>>>()?;
    for protocol in [Protocol::Cv, Protocol::Extrapolation] {
        let mut idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].protocol == protocol).collect();
        idx.sort_by(|&a, &b| rows[a].report.mse.total_cmp(&rows[b].report.mse).then(a.cmp(&b)));
        for (r, i) in idx.into_iter().enumerate() {
            rows[i].rank = r + 1;
        }
    }
    Ok(rows)
}

pub fn write_comparison_csv<W: Write>(out: W, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["form", "protocol", "mse", "e_pct", "r2", "n_points", "scale", "rank"])?;
    for r in rows {
        w.write_record([
            r.form.as_str().to_string(),
            r.protocol.to_string(),
            r.report.mse.to_string(),
            r.report.e_pct.to_string(),
            r.report.r2.map(|v| v.to_string()).unwrap_or_default(),
            r.report.n_points.to_string(),
            serde_json::to_value(r.report.scale)?.as_str().unwrap_or_default().to_string(),
            r.rank.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison_json<W: Write>(mut out: W, rows: &[ComparisonRow]) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    out.write_all(b"\n")?;
    Ok(())
}
