//! Per-clip tuning of the encoder Lagrange multiplier.
//!
//! A clip is encoded over a QP ladder with `λ = k·λ₀`; the scale factor `k`
//! that minimizes BD-Rate against the unscaled encode is found with a
//! bracketed Brent search over `ln k`.

pub mod bridge;
pub mod curve;
pub mod lambda;
pub mod opt;
pub mod pchip;
pub mod plot;
pub mod report;
pub mod sweep;

pub use curve::{bd_quality, bd_rate, RDCurve, RDPoint};
pub use lambda::{CodecId, FrameTypeGroup, LambdaScope, ScaleFactor};
pub use opt::OptimizerConfig;
pub use sweep::{OptimizationResult, Orchestrator, SweepConfig};
