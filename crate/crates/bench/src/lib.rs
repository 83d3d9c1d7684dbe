//! Shared fixtures for the kernel benchmarks.

use idls::channel::ChannelSpec;
use idls::harness::{PointContext, TrialInputs, DOMAIN_TRIAL};
use idls::{DetectorKind, ExperimentSpec};

/// Context and one drawn trial of an i.i.d. `nt x nr` system.
pub fn fixture(nt: usize, nr: usize, ebn0_db: f64) -> (PointContext, TrialInputs) {
    let spec = ExperimentSpec::new(ChannelSpec::iid(nt, nr), vec![DetectorKind::Idls], vec![ebn0_db]);
    let ctx = PointContext::new(&spec, ebn0_db).expect("valid fixture");
    let input = ctx.draw(DOMAIN_TRIAL, 0).expect("draw");
    (ctx, input)
}
