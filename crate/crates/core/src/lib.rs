//! Daily mortality and air-quality time-series analysis: panel ingestion,
//! moving-median deviations, spline bases, quasipoisson GLMs, distributed-lag
//! terms, random-effects pooling and leave-one-year-out model comparison.

pub mod basis;
pub mod dataset;
pub mod design;
pub mod dlm;
pub mod error;
pub mod glm;
pub mod linalg;
pub mod meta;
pub mod movmed;
pub mod predgrid;
pub mod synth;
pub mod tsreg;

pub use basis::{BasisKind, BasisMatrix, BasisSpec};
pub use dataset::{BasinId, BasinSeries, DailyRecord, Field, Outcome, OzoneMetric, Panel, Pollutant};
pub use dlm::{CrossBasis, CurvePoint, LagSet};
pub use error::{Error, Result};
pub use glm::{DesignMatrix, FitOptions, FitResult};
pub use meta::{EffectEstimate, PooledEffect};
pub use movmed::{DeviationSeries, WindowSpec};
pub use predgrid::{CvResult, GridModel, GridSpec};
pub use tsreg::ModelSpec;
