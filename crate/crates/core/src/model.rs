//! Mapping raw sweep coordinates into the space a parameter vector is
//! expressed in, and the prediction interface shared by all model kinds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost_model::ScalingFactors;
use crate::error::{invalid, Error, Result};
use crate::scaling_forms::{EvalPoint, ParametricForm, Params};

/// One of the three scaling factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Factor {
    #[serde(rename = "N")]
    LmParams,
    #[serde(rename = "T")]
    Frames,
    #[serde(rename = "V")]
    TokensPerFrame,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::LmParams, Factor::Frames, Factor::TokensPerFrame];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Factor::LmParams => "N",
            Factor::Frames => "T",
            Factor::TokensPerFrame => "V",
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N" | "x_N" | "n_params" => Ok(Factor::LmParams),
            "T" | "x_T" | "frames" => Ok(Factor::Frames),
            "V" | "x_V" | "tokens" => Ok(Factor::TokensPerFrame),
            _ => Err(invalid(format!("unknown factor {s:?}"))),
        }
    }
}

/// Divisors applied to raw values before they reach a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub lm_params: f64,
    pub frames: f64,
    pub tokens_per_frame: f64,
    pub data: f64,
}

impl Units {
    /// Raw counts everywhere.
    pub const IDENTITY: Units = Units { lm_params: 1.0, frames: 1.0, tokens_per_frame: 1.0, data: 1.0 };

    /// Billions of LM parameters and millions of finetuning examples. With
    /// these units the sweep ranges are O(1)..O(100), matching the
    /// initialization ranges of the fitter.
    pub const BILLIONS_MILLIONS: Units = Units { lm_params: 1e9, frames: 1.0, tokens_per_frame: 1.0, data: 1e6 };

    fn of(&self, f: Factor) -> f64 {
        match f {
            Factor::LmParams => self.lm_params,
            Factor::Frames => self.frames,
            Factor::TokensPerFrame => self.tokens_per_frame,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lm_params, self.frames, self.tokens_per_frame, self.data];
        if all.iter().all(|u| *u > 0.0 && u.is_finite()) {
            Ok(())
        } else {
            Err(invalid("units must be positive and finite"))
        }
    }
}

impl Default for Units {
    fn default() -> Self {
        Units::BILLIONS_MILLIONS
    }
}

/// Which factors a model uses, in order, and in what units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coordinates {
    pub factors: Vec<Factor>,
    pub units: Units,
}

impl Coordinates {
    pub fn all(units: Units) -> Self {
        Self { factors: Factor::ALL.to_vec(), units }
    }

    pub fn single(factor: Factor, units: Units) -> Self {
        Self { factors: vec![factor], units }
    }

    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn is_full(&self) -> bool {
        self.factors == Factor::ALL
    }

    /// Model-space factor values written into `out[..k]`, and the scaled data size.
    #[inline]
    pub fn map_into(&self, x: &ScalingFactors, n: f64, out: &mut [f64; 3]) -> f64 {
        for (slot, f) in out.iter_mut().zip(&self.factors) {
            *slot = x.get(f.index()) as f64 / self.units.of(*f);
        }
        n / self.units.data
    }

    pub fn point(&self, x: &ScalingFactors, n: f64) -> EvalPoint<f64> {
        let mut buf = [0.0; 3];
        let n = self.map_into(x, n, &mut buf);
        EvalPoint { factors: buf[..self.k()].to_vec(), n }
    }

    pub fn validate(&self) -> Result<()> {
        self.units.validate()?;
        if self.factors.is_empty() || self.factors.len() > 3 {
            return Err(invalid("a model uses between one and three factors"));
        }
        let mut seen = self.factors.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.factors.len() {
            return Err(invalid("factors must be distinct"));
        }
        Ok(())
    }
}

impl Default for Coordinates {
    fn default() -> Self {
        Coordinates::all(Units::default())
    }
}

/// What quantity a model predicts from the (0, 100] metric values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `100 - performance`; lower is better.
    #[default]
    Error,
    Performance,
}

impl Target {
    pub fn from_metric(self, value: f64) -> f64 {
        match self {
            Target::Error => 100.0 - value,
            Target::Performance => value,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Error => "error",
            Target::Performance => "performance",
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(Target::Error),
            "performance" => Ok(Target::Performance),
            _ => Err(invalid(format!("unknown target {s:?}"))),
        }
    }
}

/// Anything that predicts error from raw scaling factors and data size.
pub trait Predictor: Sync {
    fn coordinates(&self) -> &Coordinates;

    fn form(&self) -> ParametricForm;

    /// Prediction at a point already expressed in model coordinates.
    fn predict_point(&self, p: &EvalPoint<f64>) -> Result<f64>;

    /// Prediction at raw factor values and raw data size.
    fn predict_raw(&self, x: &ScalingFactors, n: f64) -> Result<f64>;
}

/// A parameter vector together with the coordinates it was expressed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingModel {
    pub theta: Params<f64>,
    pub coordinates: Coordinates,
}

impl ScalingModel {
    pub fn new(theta: Params<f64>, coordinates: Coordinates) -> Result<Self> {
        theta.validate()?;
        coordinates.validate()?;
        if theta.k != coordinates.k() {
            return Err(Error::Layout(format!("parameters have K={} but coordinates name {} factors", theta.k, coordinates.k())));
        }
        Ok(Self { theta, coordinates })
    }
}

impl Predictor for ScalingModel {
    fn coordinates(&self) -> &Coordinates {
        &self.coordinates
    }

    fn form(&self) -> ParametricForm {
        self.theta.form()
    }

    fn predict_point(&self, p: &EvalPoint<f64>) -> Result<f64> {
        self.theta.eval(&p.factors, p.n)
    }

    #[inline]
    fn predict_raw(&self, x: &ScalingFactors, n: f64) -> Result<f64> {
        let mut buf = [0.0; 3];
        let n = self.coordinates.map_into(x, n, &mut buf);
        self.theta.eval(&buf[..self.coordinates.k()], n)
    }
}
