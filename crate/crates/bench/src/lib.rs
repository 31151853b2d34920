//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use svrg_core::data::synth_binary;
use svrg_core::{LossKind, LossModel, Method, RunConfig, StepSizeSchedule};

pub fn model(n: usize, d: usize, kind: LossKind) -> LossModel {
    LossModel::new(Arc::new(synth_binary(n, d, 7, 0.9)), 1e-3, kind).expect("valid fixture")
}

/// Two-epoch config so history-dependent methods run their steady-state path.
pub fn two_epochs(method: Method, n: usize) -> RunConfig {
    let schedule = match method {
        Method::SvrgBb => StepSizeSchedule::EpochBb { eta0: 0.1 },
        Method::Svrg2Bbs(p) => svrg_core::stepsize::preset(p, n, 0.1, 1e-3, 1.0),
        _ => StepSizeSchedule::Constant { eta: 0.1 },
    };
    let mut cfg = RunConfig::new(method, schedule, 2, n);
    cfg.variance = svrg_core::VarianceProbe::Off;
    cfg
}
