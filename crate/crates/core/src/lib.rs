//! Blind modulation classification for multi-sensor receivers with unknown
//! per-sensor gain, phase and symbol-timing offsets.
//!
//! Each hypothesized constellation is scored by its maximized log-likelihood,
//! with the nuisance channel parameters estimated by a generalized EM loop
//! and optionally seeded by simulated annealing.

pub mod baselines;
pub mod constellation;
pub mod error;
pub mod frontend;
pub mod gem;
pub mod harness;
pub mod init;
pub mod likelihood;
pub mod math;
pub mod signal;

pub use baselines::{clairvoyant_classify, clairvoyant_em_classify, zero_offset_em_classify};
pub use constellation::{build_constellation, build_hypothesis_set, ConstellationSet, FormatId, HypothesisSet};
pub use error::{AmcError, Result};
pub use frontend::MatchedFilterBank;
pub use gem::{classify_hml, map_decode, run_gem, GemConfig, GemResult, GemVariant, HmlDecision, PosteriorTable};
pub use harness::{
    pcc, run_experiment, run_trial, CellResult, ClassifierKind, ClassifierSpec, ConfusionMatrix,
    ExperimentConfig, ExperimentResult, GemSettings, InitSpec,
};
pub use init::{perturbed_truth_init, sa_init, InitDeltas, InitScheme, SaConfig, SaOutcome};
pub use likelihood::{log_likelihood, ObservationSet, ParamVector};
pub use signal::{
    rrc_pulse, synthesize_received, PulseSpec, ScenarioConfig, SensorParams, SymbolSequence, Waveform,
};
