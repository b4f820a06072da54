//! Model generation, serialization and the measurement suite.

mod arch;
pub mod io;
mod probe;
mod report;
mod stats;
mod verify;

pub use arch::{
    build_model, random_input, Activation, ArchSpec, ConvStage, PROFILE_GAIN, TEMPLATES,
};
pub use probe::{
    probe_spec, security_probe, FieldCorrelation, PairCorrelation, ProbeReport, ZeroRound,
    MIN_CORRELATION_ENTRIES,
};
pub use report::{
    count_and_size_report, count_report, size_report, storage_growth, CountAndSize, CountReport,
    CountRow, GrowthStep, KindBytes, SizeReport, StorageGrowth,
};
pub use stats::{
    ks_statistic, pearson, weight_stats, Histogram, Moments, StatsReport, WeightComparison,
    HISTOGRAM_BINS,
};
pub use verify::{
    error_profile, norm_reductions, prepare_model, run_protocol, trace_deviations, trial_seed,
    verify_equivalence, verify_model, EquivReport, LayerDeviation, ProfileRow, ProtocolRun,
    TrialRecord, VerifyOptions,
};
