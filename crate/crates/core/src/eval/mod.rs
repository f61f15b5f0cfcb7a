//! Verification metrics, threshold calibration and the experiment protocol.

mod metrics;
mod protocol;
mod report;
mod sweep;
mod synth;

pub use metrics::{
    auc, calibrate_threshold, candidate_thresholds, eer, far, frr, roc_curve, Condition, EerPoint,
    ScoreSet,
};
pub use protocol::{
    run_protocol, system_preset, AttackSpec, DefenseSpec, Protocol, ProtocolConfig, ScoredAttack,
    SYSTEMS,
};
pub use report::{AttackMetrics, EvalReport};
pub use sweep::{grid_defense, run_sweep, sweep_csv, SweepPoint};
pub use synth::{IdentityGenerator, Subject};
