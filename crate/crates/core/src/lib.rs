//! Scaling-law toolkit for video VLMs: fit parametric error models to
//! finetuning sweeps, then pick the inference compute-optimal LM size, frame
//! count and tokens per frame under a FLOP budget.

pub mod cost_model;
pub mod elasticity;
pub mod error;
pub mod evaluation;
pub mod fitting;
pub mod frontier;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod scaling_forms;
pub mod sweep_data;

pub use cost_model::{inference_flops, CostMode, ScalingFactors, VisionConfig};
pub use elasticity::{ElasticityConfig, ElasticityReport};
pub use error::{Error, Result};
pub use evaluation::{EvalReport, Protocol, Scale};
pub use fitting::{BagConfig, BaggedModel, FitConfig, FittedModel, Model};
pub use frontier::{FactorDomain, FrontierPoint, FrontierTable};
pub use model::{Coordinates, Factor, Predictor, ScalingModel, Target, Units};
pub use scalar::Scalar;
pub use scaling_forms::{EvalPoint, FormTag, ParametricForm, Params};
pub use sweep_data::{DesignPoint, SweepRecord, SweepTag};

/// Parameter vector in double precision, the default for fitting.
pub type ParamVector = Params<f64>;
/// Single-precision parameter vector for cheap bulk evaluation.
pub type ParamVectorF32 = Params<f32>;
pub type Point = EvalPoint<f64>;
pub type PointF32 = EvalPoint<f32>;
pub type Vision = VisionConfig<f64>;
