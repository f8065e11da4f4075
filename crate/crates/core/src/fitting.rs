//! Estimating parameter vectors from sweep records.
//!
//! The objective is the mean log-space loss `loss(log f(x_i, n_i) - log y_i)`,
//! minimized from many random starts with box-constrained L-BFGS. Bagging
//! repeats the fit on bootstrap resamples and aggregates predictions.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost_model::ScalingFactors;
use crate::error::{invalid, Error, Result};
use crate::model::{Coordinates, Predictor, ScalingModel, Target};
use crate::optim::{minimize, Bounds, LbfgsConfig, Termination};
use crate::scaling_forms::{EvalPoint, FormTag, Layout, ParametricForm, Params};
use crate::sweep_data::{SweepRecord, DEFAULT_METRIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    MseLog,
    HuberLog,
}

impl Loss {
    pub fn as_str(self) -> &'static str {
        match self {
            Loss::MseLog => "mse_log",
            Loss::HuberLog => "huber_log",
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" | "mse_log" => Ok(Loss::MseLog),
            "huber" | "huber_log" => Ok(Loss::HuberLog),
            _ => Err(invalid(format!("unknown loss {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub loss: Loss,
    /// Huber threshold on log residuals.
    pub huber_delta: f64,
    pub restarts: usize,
    pub coeff_init_range: (f64, f64),
    pub exp_init_range: (f64, f64),
    /// Constrain every exponent to be non-negative.
    pub bound_exponents: bool,
    pub max_iterations: usize,
    pub grad_tolerance: f64,
    pub seed: u64,
    pub target: Target,
    pub metric: String,
    pub coordinates: Coordinates,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            loss: Loss::MseLog,
            huber_delta: 1.0,
            restarts: 500,
            coeff_init_range: (0.0, 30.0),
            exp_init_range: (-1.0, 1.0),
            bound_exponents: false,
            max_iterations: 1000,
            grad_tolerance: 1e-8,
            seed: 0,
            target: Target::Error,
            metric: DEFAULT_METRIC.to_string(),
            coordinates: Coordinates::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(invalid("restarts must be at least 1"));
        }
        for (name, (lo, hi)) in [("coefficient", self.coeff_init_range), ("exponent", self.exp_init_range)] {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(invalid(format!("{name} init range ({lo}, {hi}) is degenerate")));
            }
        }
        if self.coeff_init_range.1 <= 0.0 {
            return Err(invalid("coefficient init range must reach above zero"));
        }
        if self.bound_exponents && self.exp_init_range.1 <= 0.0 {
            return Err(invalid("exponent init range must reach above zero when exponents are bounded"));
        }
        if !(self.huber_delta > 0.0) {
            return Err(invalid("huber delta must be positive"));
        }
        if !(self.grad_tolerance > 0.0) {
            return Err(invalid("gradient tolerance must be positive"));
        }
        self.coordinates.validate()
    }

    fn form(&self, tag: FormTag) -> Result<ParametricForm> {
        ParametricForm::new(tag, self.coordinates.k())
    }
}

/// Training points in model coordinates with log targets, in a canonical
/// order so that the input order of records cannot affect the fit.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    points: Vec<EvalPoint<f64>>,
    log_targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(records: &[SweepRecord], cfg: &FitConfig) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut rows = Vec::with_capacity(records.len());
        for r in records {
            let v = r
                .metric(&cfg.metric)
                .ok_or_else(|| invalid(format!("record {} has no metric {:?}", r.run_id, cfg.metric)))?;
            let y = cfg.target.from_metric(v);
            if !(y > 0.0 && y.is_finite()) {
                return Err(Error::NonPositiveTarget { run_id: r.run_id.clone(), value: y });
            }
            rows.push((r.x, r.n, y));
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
        Ok(Self {
            points: rows.iter().map(|(x, n, _)| cfg.coordinates.point(x, *n)).collect(),
            log_targets: rows.iter().map(|(_, _, y)| y.ln()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
            log_targets: idx.iter().map(|&i| self.log_targets[i]).collect(),
        }
    }
}

/// Mean loss over the training set at `theta`, writing the gradient into
/// `grad` when given. Returns `+inf` where the prediction is undefined.
pub fn objective(
    form: ParametricForm,
    flat: &[f64],
    data: &TrainingSet,
    loss: Loss,
    huber_delta: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let Ok(theta) = Params::from_flat(form, flat) else {
        return f64::INFINITY;
    };
    let dim = flat.len();
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let mut point_grad = vec![0.0; dim];
    let mut total = 0.0;
    for (p, &ly) in data.points.iter().zip(&data.log_targets) {
        let want_grad = grad.is_some();
        let lf = match theta.eval_log(&p.factors, p.n, want_grad.then_some(&mut point_grad[..])) {
            Ok(v) if v.is_finite() => v,
            _ => return f64::INFINITY,
        };
        let r = lf - ly;
        let (value, slope) = match loss {
            Loss::HuberLog if r.abs() > huber_delta => (2.0 * huber_delta * r.abs() - huber_delta * huber_delta, 2.0 * huber_delta * r.signum()),
            _ => (r * r, 2.0 * r),
        };
        total += value;
        if let Some(g) = grad.as_deref_mut() {
            for (gi, pg) in g.iter_mut().zip(&point_grad) {
                *gi += slope * pg;
            }
        }
    }
    let scale = 1.0 / data.len() as f64;
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    total * scale
}

/// Objective value of `theta` on `records` under `cfg`.
pub fn fit_objective(records: &[SweepRecord], theta: &Params<f64>, cfg: &FitConfig) -> Result<f64> {
    let data = TrainingSet::new(records, cfg)?;
    Ok(objective(theta.form(), &theta.to_flat(), &data, cfg.loss, cfg.huber_delta, None))
}

/// Outcome of one random start.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub index: usize,
    pub theta: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub termination: Termination,
}

fn bounds(layout: &Layout, bound_exponents: bool) -> Bounds<f64> {
    if bound_exponents {
        Bounds::nonnegative(&vec![true; layout.len])
    } else {
        Bounds::nonnegative(&layout.coefficient_mask())
    }
}

/// RNG for restart `index`: the seed's ChaCha stream number `index`.
fn restart_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn initial_point(layout: &Layout, cfg: &FitConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (clo, chi) = cfg.coeff_init_range;
    let (mut elo, ehi) = cfg.exp_init_range;
    if cfg.bound_exponents {
        elo = elo.max(0.0);
    }
    let clo = clo.max(0.0);
    layout
        .coefficient_mask()
        .into_iter()
        .map(|coef| if coef { rng.random_range(clo..chi) } else { rng.random_range(elo..ehi) })
        .collect()
}

fn run_restarts_on(form: ParametricForm, data: &TrainingSet, cfg: &FitConfig) -> Vec<RestartOutcome> {
    let layout = form.layout();
    let b = bounds(&layout, cfg.bound_exponents);
    let lbfgs = LbfgsConfig { max_iterations: cfg.max_iterations, grad_tolerance: cfg.grad_tolerance, ..LbfgsConfig::default() };
    (0..cfg.restarts)
        .into_par_iter()
        .map(|index| {
            let x0 = initial_point(&layout, cfg, &mut restart_rng(cfg.seed, index));
            let f = |x: &[f64], g: &mut [f64]| objective(form, x, data, cfg.loss, cfg.huber_delta, Some(g));
            let m = minimize(f, &x0, &b, &lbfgs);
            RestartOutcome { index, theta: m.x, initial_loss: m.initial_value, final_loss: m.value, termination: m.termination }
        })
        .collect()
}

/// Every restart of a fit, in index order.
pub fn run_restarts(records: &[SweepRecord], form: FormTag, cfg: &FitConfig) -> Result<Vec<RestartOutcome>> {
    cfg.validate()?;
    let data = TrainingSet::new(records, cfg)?;
    Ok(run_restarts_on(cfg.form(form)?, &data, cfg))
}

/// Lowest final loss, ties to the lowest index; non-finite losses rank last.
fn best_restart(outcomes: Vec<RestartOutcome>) -> RestartOutcome {
    let key = |o: &RestartOutcome| if o.final_loss.is_nan() { f64::INFINITY } else { o.final_loss };
    outcomes
        .into_iter()
        .reduce(|best, o| if key(&o) < key(&best) { o } else { best })
        .expect("at least one restart")
}

/// Order-independent SHA-256 over the rows that enter a fit.
pub fn train_fingerprint(records: &[SweepRecord], metric: &str) -> String {
    let mut rows: Vec<[u8; 32]> = records
        .iter()
        .map(|r| {
            let mut h = Sha256::new();
            h.update(r.run_id.as_bytes());
            h.update([0]);
            for v in [r.x.lm_params, r.x.frames, r.x.tokens_per_frame] {
                h.update(v.to_le_bytes());
            }
            h.update(r.n.to_le_bytes());
            h.update(r.metric(metric).unwrap_or(f64::NAN).to_le_bytes());
            h.finalize().into()
        })
        .collect();
    rows.sort_unstable();
    let mut h = Sha256::new();
    h.update(metric.as_bytes());
    for r in &rows {
        h.update(r);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub model: ScalingModel,
    pub final_loss: f64,
    pub restart_index: usize,
    pub converged: bool,
    pub train_fingerprint: String,
    pub config: FitConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FittedModel {
    pub fn theta(&self) -> &Params<f64> {
        &self.model.theta
    }
}

fn fit_on(form: ParametricForm, data: &TrainingSet, cfg: &FitConfig, fingerprint: String) -> Result<FittedModel> {
    let mut warnings = Vec::new();
    if data.len() < form.num_params() {
        warnings.push(format!(
            "{} records for {} parameters: the fit is under-determined",
            data.len(),
            form.num_params()
        ));
    }
    let outcomes = run_restarts_on(form, data, cfg);
    let converged_any = outcomes.iter().any(|o| o.termination.converged());
    let best = best_restart(outcomes);
    if !best.final_loss.is_finite() {
        return Err(invalid("no restart reached a finite objective"));
    }
    if !converged_any {
        warnings.push(format!("none of {} restarts converged", cfg.restarts));
    }
    let theta = Params::from_flat(form, &best.theta)?;
    Ok(FittedModel {
        model: ScalingModel::new(theta, cfg.coordinates.clone())?,
        final_loss: best.final_loss,
        restart_index: best.index,
        converged: best.termination.converged(),
        train_fingerprint: fingerprint,
        config: cfg.clone(),
        warnings,
    })
}

/// Best of `cfg.restarts` local fits of `form` to the records.
pub fn fit(records: &[SweepRecord], form: FormTag, cfg: &FitConfig) -> Result<FittedModel> {
    cfg.validate()?;
    let data = TrainingSet::new(records, cfg)?;
    let fitted = fit_on(cfg.form(form)?, &data, cfg, train_fingerprint(records, &cfg.metric))?;
    for w in &fitted.warnings {
        warn!("{w}");
    }
    Ok(fitted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Median => "median",
            Aggregation::Mean => "mean",
        }
    }

    /// Reorders `values`.
    pub fn apply(self, values: &mut [f64]) -> f64 {
        assert!(!values.is_empty());
        match self {
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregation::Median => {
                values.sort_by(f64::total_cmp);
                let m = values.len() / 2;
                if values.len() % 2 == 1 {
                    values[m]
                } else {
                    0.5 * (values[m - 1] + values[m])
                }
            }
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Aggregation::Median),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(invalid(format!("unknown aggregation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagConfig {
    pub resamples: usize,
    pub aggregation: Aggregation,
    pub restarts_per_resample: usize,
    pub seed: u64,
}

impl Default for BagConfig {
    fn default() -> Self {
        Self { resamples: 100, aggregation: Aggregation::Median, restarts_per_resample: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggedModel {
    pub base_models: Vec<FittedModel>,
    pub aggregation: Aggregation,
    pub bag: BagConfig,
    pub train_fingerprint: String,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fits `bag.resamples` models, each on a bootstrap resample of the records.
pub fn fit_bagged(records: &[SweepRecord], form: FormTag, cfg: &FitConfig, bag: &BagConfig) -> Result<BaggedModel> {
    cfg.validate()?;
    if bag.resamples == 0 || bag.restarts_per_resample == 0 {
        return Err(invalid("bagging needs at least one resample and one restart"));
    }
    let data = TrainingSet::new(records, cfg)?;
    let form = cfg.form(form)?;
    let fingerprint = train_fingerprint(records, &cfg.metric);
    let len = data.len();
    let base_models = (0..bag.resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(bag.seed);
            rng.set_stream(r as u64);
            let idx: Vec<usize> = (0..len).map(|_| rng.random_range(0..len)).collect();
            let sub = data.subset(&idx);
            let base_cfg = FitConfig { restarts: bag.restarts_per_resample, seed: splitmix64(bag.seed ^ splitmix64(r as u64)), ..cfg.clone() };
            fit_on(form, &sub, &base_cfg, fingerprint.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let unconverged = base_models.iter().filter(|m| !m.converged).count();
    if unconverged > 0 {
        warn!("{unconverged} of {} bootstrap fits did not converge", bag.resamples);
    }
    Ok(BaggedModel { base_models, aggregation: bag.aggregation, bag: bag.clone(), train_fingerprint: fingerprint })
}

impl Predictor for FittedModel {
    fn coordinates(&self) -> &Coordinates {
        &self.model.coordinates
    }

    fn form(&self) -> ParametricForm {
        self.model.form()
    }

    fn predict_point(&self, p: &EvalPoint<f64>) -> Result<f64> {
        self.model.predict_point(p)
    }

    fn predict_raw(&self, x: &ScalingFactors, n: f64) -> Result<f64> {
        self.model.predict_raw(x, n)
    }
}

impl BaggedModel {
    fn aggregate(&self, each: impl Fn(&FittedModel) -> Result<f64>) -> Result<f64> {
        let mut v = self.base_models.iter().map(each).collect::<Result<Vec<_>>>()?;
        Ok(self.aggregation.apply(&mut v))
    }
}

impl Predictor for BaggedModel {
    fn coordinates(&self) -> &Coordinates {
        self.base_models[0].coordinates()
    }

    fn form(&self) -> ParametricForm {
        self.base_models[0].form()
    }

    fn predict_point(&self, p: &EvalPoint<f64>) -> Result<f64> {
        self.aggregate(|m| m.predict_point(p))
    }

    fn predict_raw(&self, x: &ScalingFactors, n: f64) -> Result<f64> {
        self.aggregate(|m| m.predict_raw(x, n))
    }
}

/// Either kind of fitted model, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Single(FittedModel),
    Bagged(BaggedModel),
}

impl Model {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Model = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        std::io::Write::write_all(&mut w, b"\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Single(m) => ScalingModel::new(m.model.theta.clone(), m.model.coordinates.clone()).map(|_| ()),
            Model::Bagged(b) => {
                let first = b.base_models.first().ok_or_else(|| invalid("bagged model has no base models"))?;
                for m in &b.base_models {
                    ScalingModel::new(m.model.theta.clone(), m.model.coordinates.clone())?;
                    if m.form() != first.form() || m.coordinates() != first.coordinates() {
                        return Err(Error::Layout("base models disagree on form or coordinates".into()));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn fit_config(&self) -> &FitConfig {
        match self {
            Model::Single(m) => &m.config,
            Model::Bagged(b) => &b.base_models[0].config,
        }
    }
}

impl Predictor for Model {
    fn coordinates(&self) -> &Coordinates {
        match self {
            Model::Single(m) => m.coordinates(),
            Model::Bagged(m) => m.coordinates(),
        }
    }

    fn form(&self) -> ParametricForm {
        match self {
            Model::Single(m) => m.form(),
            Model::Bagged(m) => m.form(),
        }
    }

    fn predict_point(&self, p: &EvalPoint<f64>) -> Result<f64> {
        match self {
            Model::Single(m) => m.predict_point(p),
            Model::Bagged(m) => m.predict_point(p),
        }
    }

    fn predict_raw(&self, x: &ScalingFactors, n: f64) -> Result<f64> {
        match self {
            Model::Single(m) => m.predict_raw(x, n),
            Model::Bagged(m) => m.predict_raw(x, n),
        }
    }
}

/// Prediction from either model kind at a model-space point.
pub fn predict(model: &Model, p: &EvalPoint<f64>) -> Result<f64> {
    if p.factors.len() != model.form().k {
        return Err(Error::Layout(format!("model has K={}, point has {} factors", model.form().k, p.factors.len())));
    }
    model.predict_point(p)
}
