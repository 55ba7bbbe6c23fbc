//! Symbol-marginalized log-likelihood of the multi-sensor observation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constellation::ConstellationSet;
use crate::error::{AmcError, Result};
use crate::frontend::MatchedFilterBank;
use crate::math::{log_sum_exp, softmax_in_place};
use crate::signal::SensorParams;

/// Deterministic unknowns for all sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub per_sensor: Vec<SensorParams>,
}

impl ParamVector {
    pub fn new(per_sensor: Vec<SensorParams>) -> Self {
        ParamVector { per_sensor }
    }

    pub fn len(&self) -> usize {
        self.per_sensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_sensor.is_empty()
    }

    pub fn timings(&self) -> Vec<f64> {
        self.per_sensor.iter().map(|p| p.timing).collect()
    }
}

/// Matched-filter banks for every sensor plus the shared noise level.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    banks: Vec<MatchedFilterBank>,
    noise_psd: f64,
}

impl ObservationSet {
    pub fn new(banks: Vec<MatchedFilterBank>, noise_psd: f64) -> Result<Self> {
        let first = banks
            .first()
            .ok_or_else(|| AmcError::Config("observation set needs at least one sensor".into()))?;
        let n = first.symbol_count();
        if banks.iter().any(|b| b.symbol_count() != n || b.pulse() != first.pulse()) {
            return Err(AmcError::Config("sensors disagree on symbol count or pulse".into()));
        }
        if !(noise_psd > 0.0) {
            return Err(AmcError::Config(format!("noise PSD {noise_psd} must be positive")));
        }
        Ok(ObservationSet { banks, noise_psd })
    }

    pub fn banks(&self) -> &[MatchedFilterBank] {
        &self.banks
    }

    pub fn bank(&self, sensor: usize) -> &MatchedFilterBank {
        &self.banks[sensor]
    }

    pub fn sensor_count(&self) -> usize {
        self.banks.len()
    }

    pub fn symbol_count(&self) -> usize {
        self.banks[0].symbol_count()
    }

    pub fn noise_psd(&self) -> f64 {
        self.noise_psd
    }

    pub fn pulse_energy(&self) -> f64 {
        self.banks[0].pulse().energy()
    }

    /// Single-sensor view, used by per-sensor initialization.
    pub fn sensor_subset(&self, sensor: usize) -> ObservationSet {
        ObservationSet { banks: vec![self.banks[sensor].clone()], noise_psd: self.noise_psd }
    }
}

/// Per-symbol, per-hypothesis exponents of the conditional likelihood,
/// stored row-major as `N × M`:
/// `(2/N0) Re{I_k* Σ_l a_l e^{-jθ_l} y_{n,l}} - (E_g/N0) |I_k|² Σ_l a_l²`.
pub(crate) fn symbol_exponents(
    obs: &ObservationSet,
    u: &ParamVector,
    constellation: &ConstellationSet,
) -> Vec<f64> {
    assert_eq!(u.len(), obs.sensor_count(), "parameter vector does not match sensor count");
    let n_sym = obs.symbol_count();
    let n0 = obs.noise_psd();
    let mut combined = vec![Complex64::new(0.0, 0.0); n_sym];
    let mut gain_energy = 0.0;
    for (bank, p) in obs.banks().iter().zip(&u.per_sensor) {
        let w = Complex64::from_polar(p.amplitude, -p.phase);
        let y = bank.mf_samples(p.timing);
        for (z, s) in combined.iter_mut().zip(y.iter()) {
            *z += w * s;
        }
        gain_energy += p.amplitude * p.amplitude;
    }
    let energy_term = obs.pulse_energy() * gain_energy / n0;
    let m = constellation.cardinality();
    let mut out = Vec::with_capacity(n_sym * m);
    for z in &combined {
        for (s, e) in constellation.symbols().iter().zip(constellation.energies()) {
            out.push(2.0 / n0 * (s.conj() * z).re - e * energy_term);
        }
    }
    out
}

fn check_finite(value: f64, u: &ParamVector) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(AmcError::Numerical(format!("log-likelihood is {value} at {u:?}")))
    }
}

/// `Λ(u) = Σ_n ln Σ_k exp(e_{n,k}) - N ln M`.
pub fn log_likelihood(obs: &ObservationSet, u: &ParamVector, constellation: &ConstellationSet) -> Result<f64> {
    let m = constellation.cardinality();
    let ex = symbol_exponents(obs, u, constellation);
    let total: f64 = ex.chunks_exact(m).map(log_sum_exp).sum();
    check_finite(total - obs.symbol_count() as f64 * (m as f64).ln(), u)
}

/// Log-likelihood together with the symbol posteriors at the same point.
/// Returns `(Λ, probs)` with `probs` row-major `N × M`.
pub(crate) fn log_likelihood_and_posterior(
    obs: &ObservationSet,
    u: &ParamVector,
    constellation: &ConstellationSet,
) -> Result<(f64, Vec<f64>)> {
    let m = constellation.cardinality();
    let mut ex = symbol_exponents(obs, u, constellation);
    let total: f64 = ex.chunks_exact_mut(m).map(softmax_in_place).sum();
    let ll = check_finite(total - obs.symbol_count() as f64 * (m as f64).ln(), u)?;
    Ok((ll, ex))
}
