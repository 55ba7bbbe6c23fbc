//! Reference classifiers: genie-aided Clairvoyant, EM with known timing,
//! and EM that assumes zero timing offset.

use rand::Rng;

use crate::constellation::HypothesisSet;
use crate::error::Result;
use crate::gem::{argmax_first, classify_with, GemConfig, GemVariant, HmlDecision};
use crate::init::InitScheme;
use crate::likelihood::{log_likelihood, ObservationSet, ParamVector};

/// Decides with the true parameters plugged into every hypothesis' likelihood.
pub fn clairvoyant_classify(obs: &ObservationSet, truth: &ParamVector, hypotheses: &HypothesisSet) -> Result<usize> {
    let lls = hypotheses
        .iter()
        .map(|c| log_likelihood(obs, truth, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax_first(lls))
}

/// EM with every sensor's timing offset pinned to its true value; only
/// amplitude and phase are estimated.
pub fn clairvoyant_em_classify<R: Rng + ?Sized>(
    obs: &ObservationSet,
    true_timings: &[f64],
    hypotheses: &HypothesisSet,
    init: &InitScheme,
    config: &GemConfig,
    rng: &mut R,
) -> Result<HmlDecision> {
    let config = config.with_variant(GemVariant::KnownEpsilon);
    classify_with(obs, hypotheses, init, &config, Some(true_timings), rng)
}

/// EM that ignores timing offsets altogether (pins them to zero).
pub fn zero_offset_em_classify<R: Rng + ?Sized>(
    obs: &ObservationSet,
    hypotheses: &HypothesisSet,
    init: &InitScheme,
    config: &GemConfig,
    rng: &mut R,
) -> Result<HmlDecision> {
    let config = config.with_variant(GemVariant::KnownEpsilon);
    let zeros = vec![0.0; obs.sensor_count()];
    classify_with(obs, hypotheses, init, &config, Some(&zeros), rng)
}
