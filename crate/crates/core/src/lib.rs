//! Iterative discrete least squares (IDLS) detection for overloaded MIMO and
//! NOMA systems, with auto-tuned regularization, robust variants, baselines,
//! an exhaustive ML oracle and a Monte-Carlo harness.

pub mod channel;
pub mod constellation;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod l0;
pub mod linalg;
pub mod ml;
pub mod normal;
pub mod regparam;
pub mod soav;
pub mod validate;

pub use channel::{ChannelModel, ChannelSpec, EffectiveNoise, ImpairmentParams};
pub use detectors::{DetectionResult, DetectorConfig, LambdaMode};
pub use constellation::{make_qpsk, stack_real, Constellation, Decision, RealLinearModel};
pub use error::{Error, Result};
pub use harness::{DetectorKind, ExperimentSpec, RunOptions, SweepRow, TrialRecord};
pub use l0::{QtState, DEFAULT_ALPHA};
pub use normal::{Variant, WeightedLs};
pub use regparam::{LambdaSolution, PencilPair};
