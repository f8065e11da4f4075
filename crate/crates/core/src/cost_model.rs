//! Per-example inference FLOPs for a video VLM made of a vision tower and a
//! language model, plus the two derived cost ratios.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Parameter count of the reference vision tower (SoViT-400m/14).
pub const REFERENCE_VISION_PARAMS: f64 = 0.43e9;
/// Visual features the reference vision tower emits per frame.
pub const REFERENCE_VISION_FEATURES: f64 = 768.0;

/// The three design choices that drive both cost and quality: LM size,
/// frame count and visual tokens per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScalingFactors {
    #[serde(rename = "x_N")]
    pub lm_params: u64,
    #[serde(rename = "x_T")]
    pub frames: u64,
    #[serde(rename = "x_V")]
    pub tokens_per_frame: u64,
}

impl ScalingFactors {
    pub fn new(lm_params: u64, frames: u64, tokens_per_frame: u64) -> Result<Self> {
        let x = Self { lm_params, frames, tokens_per_frame };
        x.validate()?;
        Ok(x)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lm_params == 0 || self.frames == 0 || self.tokens_per_frame == 0 {
            return Err(invalid(format!("scaling factors must be positive, got {self:?}")));
        }
        Ok(())
    }

    /// Factor values in the fixed (N, T, V) order.
    pub fn as_array<T: Scalar>(&self) -> [T; 3] {
        [
            T::lit(self.lm_params as f64),
            T::lit(self.frames as f64),
            T::lit(self.tokens_per_frame as f64),
        ]
    }

    pub fn get(&self, k: usize) -> u64 {
        match k {
            0 => self.lm_params,
            1 => self.frames,
            2 => self.tokens_per_frame,
            _ => panic!("factor index {k} out of range"),
        }
    }

    pub fn with(&self, k: usize, v: u64) -> Self {
        let mut out = *self;
        match k {
            0 => out.lm_params = v,
            1 => out.frames = v,
            2 => out.tokens_per_frame = v,
            _ => panic!("factor index {k} out of range"),
        }
        out
    }
}

/// Size of the vision tower feeding the LM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisionConfig<T = f64> {
    #[serde(rename = "x_M")]
    pub params: T,
    #[serde(rename = "x_W")]
    pub features_per_frame: T,
}

impl<T: Scalar> VisionConfig<T> {
    pub fn new(params: T, features_per_frame: T) -> Result<Self> {
        let v = Self { params, features_per_frame };
        v.validate()?;
        Ok(v)
    }

    /// SoViT-400m/14: 0.43B parameters, 768 features per frame.
    pub fn reference() -> Self {
        Self {
            params: T::lit(REFERENCE_VISION_PARAMS),
            features_per_frame: T::lit(REFERENCE_VISION_FEATURES),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.params > T::zero() && self.features_per_frame > T::zero()) {
            return Err(invalid("vision params and features per frame must be positive"));
        }
        Ok(())
    }

    fn per_frame_cost(&self) -> T {
        self.params * self.features_per_frame
    }
}

impl<T: Scalar> Default for VisionConfig<T> {
    fn default() -> Self {
        Self::reference()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    LmOnly,
    #[default]
    LmPlusVision,
}

impl std::str::FromStr for CostMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lm" | "lm_only" | "lm-only" => Ok(CostMode::LmOnly),
            "lm+vision" | "lm_plus_vision" | "lm-plus-vision" => Ok(CostMode::LmPlusVision),
            other => Err(invalid(format!("unknown cost mode {other:?}"))),
        }
    }
}

/// FLOPs to prefill one example: `2 x_T (x_M x_W + x_N x_V)`, or
/// `2 x_N x_T x_V` when the vision tower is ignored.
pub fn inference_flops<T: Scalar>(x: &ScalingFactors, vision: &VisionConfig<T>, mode: CostMode) -> T {
    let [n, t, v] = x.as_array::<T>();
    let two = T::lit(2.0);
    match mode {
        CostMode::LmOnly => two * n * t * v,
        CostMode::LmPlusVision => two * t * (vision.per_frame_cost() + n * v),
    }
}

/// Total-to-LM-only cost ratio, `1 + x_M x_W / (x_N x_V)`. Frame count cancels.
pub fn vision_overhead_ratio<T: Scalar>(lm_params: T, tokens_per_frame: T, vision: &VisionConfig<T>) -> Result<T> {
    let lm = lm_params * tokens_per_frame;
    if !(lm > T::zero()) {
        return Err(invalid("x_N * x_V must be positive"));
    }
    Ok(T::one() + vision.per_frame_cost() / lm)
}

/// How many times the inference bill exceeds the finetuning bill: `n_inf / (3 n)`.
pub fn inference_to_finetune_cost_ratio<T: Scalar>(finetune_examples: T, inference_examples: T) -> Result<T> {
    if !(finetune_examples > T::zero()) {
        return Err(invalid("finetuning example count must be positive"));
    }
    if inference_examples < T::zero() {
        return Err(invalid("inference example count must be non-negative"));
    }
    Ok(inference_examples / (T::lit(3.0) * finetune_examples))
}
