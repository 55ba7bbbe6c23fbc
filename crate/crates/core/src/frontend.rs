//! Matched filtering at arbitrary fractional timing offsets.
//!
//! `y_n(ε) = Δt Σ_k y[k] g(t_k - n - ε)` is the only way a classifier
//! looks at a waveform. Offsets are quantized to [`TIMING_QUANTUM`] before
//! anything is computed, so a bank behaves as a pure function of
//! `(waveform, pulse, ε)` regardless of what its cache holds.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;

use crate::error::{AmcError, Result};
use crate::signal::{PulseSpec, ShiftedTaps, Waveform};

pub const TIMING_QUANTUM: f64 = 1e-6;

const CACHE_LIMIT: usize = 4096;

fn timing_key(eps: f64) -> i64 {
    let steps = (1.0 / TIMING_QUANTUM).round() as i64;
    ((eps / TIMING_QUANTUM).round() as i64).min(steps - 1)
}

/// Rounds a timing offset in `[0, 1)` onto the cache grid.
pub fn quantize_timing(eps: f64) -> f64 {
    timing_key(eps) as f64 * TIMING_QUANTUM
}

#[derive(Debug)]
pub struct MatchedFilterBank {
    waveform: Waveform,
    pulse: Arc<PulseSpec>,
    cache: Mutex<HashMap<i64, Arc<[Complex64]>>>,
}

impl Clone for MatchedFilterBank {
    fn clone(&self) -> Self {
        MatchedFilterBank::new(self.waveform.clone(), self.pulse.clone())
            .expect("cloned bank was already validated")
    }
}

impl MatchedFilterBank {
    pub fn new(waveform: Waveform, pulse: Arc<PulseSpec>) -> Result<Self> {
        if waveform.samples_per_symbol != pulse.samples_per_symbol()
            || waveform.span_symbols != pulse.span_symbols()
        {
            return Err(AmcError::Config(format!(
                "waveform sampled at Q={} span={} but pulse has Q={} span={}",
                waveform.samples_per_symbol,
                waveform.span_symbols,
                pulse.samples_per_symbol(),
                pulse.span_symbols()
            )));
        }
        let expected = (waveform.symbol_count + waveform.span_symbols) * waveform.samples_per_symbol + 1;
        if waveform.len() != expected {
            return Err(AmcError::Config(format!(
                "waveform has {} samples, expected {expected}",
                waveform.len()
            )));
        }
        Ok(MatchedFilterBank { waveform, pulse, cache: Mutex::new(HashMap::new()) })
    }

    pub fn waveform(&self) -> &Waveform {
        &self.waveform
    }

    pub fn pulse(&self) -> &PulseSpec {
        &self.pulse
    }

    pub fn symbol_count(&self) -> usize {
        self.waveform.symbol_count
    }

    /// Matched-filter outputs for all `N` symbols at timing offset `eps`.
    ///
    /// Panics if `eps` is outside `[0, 1)`.
    pub fn mf_samples(&self, eps: f64) -> Arc<[Complex64]> {
        assert!((0.0..1.0).contains(&eps), "timing offset {eps} outside [0, 1)");
        let key = timing_key(eps);
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return v.clone();
        }
        let out: Arc<[Complex64]> = self.compute(key as f64 * TIMING_QUANTUM).into();
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, out.clone());
        out
    }

    fn compute(&self, eps: f64) -> Vec<Complex64> {
        let q = self.waveform.samples_per_symbol;
        let dt = self.pulse.sample_interval();
        let taps = self.pulse.shifted_taps(eps);
        let y = &self.waveform.samples;
        (0..self.waveform.symbol_count)
            .map(|n| {
                let base = n * q + taps.first;
                let acc = y[base..base + taps.values.len()]
                    .iter()
                    .zip(&taps.values)
                    .fold(Complex64::new(0.0, 0.0), |acc, (s, g)| acc + s * g);
                acc * dt
            })
            .collect()
    }

    /// Precomputes `c[s] = Σ_n w_n y[nQ + s]` so that `Σ_n w_n y_n(ε)` costs
    /// one pulse-length dot product per `ε` instead of `N` of them.
    pub fn correlator(&self, weights: &[Complex64]) -> WeightedCorrelation<'_> {
        assert_eq!(weights.len(), self.waveform.symbol_count);
        let q = self.waveform.samples_per_symbol;
        let width = (self.waveform.span_symbols + 1) * q;
        let y = &self.waveform.samples;
        let mut c = vec![Complex64::new(0.0, 0.0); width];
        for (n, w) in weights.iter().enumerate() {
            if *w == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (acc, s) in c.iter_mut().zip(&y[n * q..n * q + width]) {
                *acc += w * s;
            }
        }
        WeightedCorrelation { bank: self, corr: c }
    }
}

/// `ε ↦ Σ_n w_n y_n(ε)` for a fixed weight vector.
pub struct WeightedCorrelation<'a> {
    bank: &'a MatchedFilterBank,
    corr: Vec<Complex64>,
}

impl WeightedCorrelation<'_> {
    pub fn eval(&self, eps: f64) -> Complex64 {
        assert!((0.0..1.0).contains(&eps), "timing offset {eps} outside [0, 1)");
        self.eval_taps(&self.bank.pulse.shifted_taps(quantize_timing(eps)))
    }

    /// Evaluates at whatever offset `taps` were generated for.
    pub fn eval_taps(&self, taps: &ShiftedTaps) -> Complex64 {
        let acc = self.corr[taps.first..taps.first + taps.values.len()]
            .iter()
            .zip(&taps.values)
            .fold(Complex64::new(0.0, 0.0), |acc, (c, g)| acc + c * g);
        acc * self.bank.pulse.sample_interval()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{build_constellation, FormatId};
    use crate::signal::{add_noise, rrc_pulse, synthesize_clean, SensorParams, SymbolSequence};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pulse() -> Arc<PulseSpec> {
        Arc::new(rrc_pulse(0.3, 8, 16).unwrap())
    }

    #[test]
    fn zero_waveform_gives_zero() {
        let p = pulse();
        let bank = MatchedFilterBank::new(Waveform::zeros(10, &p), p).unwrap();
        assert!(bank.mf_samples(0.4).iter().all(|z| z.norm() == 0.0));
    }

    /// Worst-case ISI per unit gain: `max|I| Σ_{m≠0} |r(m)|` with `r` the
    /// sampled pulse autocorrelation at symbol lags.
    fn isi_bound(p: &PulseSpec, c: &crate::constellation::ConstellationSet) -> f64 {
        let taps = p.taps();
        let q = p.samples_per_symbol();
        let dt = p.sample_interval();
        let r = |m: usize| dt * taps.iter().zip(&taps[m * q..]).map(|(a, b)| a * b).sum::<f64>();
        let peak = c.symbols().iter().map(|s| s.norm()).fold(0.0, f64::max);
        peak * 2.0 * (1..=p.span_symbols()).map(|m| r(m).abs()).sum::<f64>()
    }

    #[test]
    fn noiseless_identity_channel_recovers_symbols() {
        let p = pulse();
        let c = build_constellation(FormatId::Qam16);
        let bound = isi_bound(&p, &c);
        let sym = SymbolSequence::random(60, 16, &mut ChaCha8Rng::seed_from_u64(1));
        for (a, th, eps, rot) in [
            (1.0, 0.0, 0.0, Complex64::new(1.0, 0.0)),
            (1.0, std::f64::consts::FRAC_PI_2, 0.0, Complex64::new(0.0, 1.0)),
            (1.7, 0.4, 0.37, Complex64::from_polar(1.7, 0.4)),
        ] {
            let wf = synthesize_clean(&sym, &c, &SensorParams::new(a, th, eps), &p);
            let bank = MatchedFilterBank::new(wf, p.clone()).unwrap();
            let y = bank.mf_samples(eps);
            let errs: Vec<f64> =
                sym.indices.iter().enumerate().map(|(n, &i)| (y[n] - rot * c.symbol(i)).norm() / a).collect();
            let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
            assert!(rms < 1e-2, "rms {rms}");
            assert!(errs.iter().all(|&e| e <= bound + 1e-4), "max {:?} bound {bound}", errs.iter().cloned().fold(0.0, f64::max));
        }
    }

    #[test]
    fn timing_mismatch_spreads_energy() {
        let p = pulse();
        let c = build_constellation(FormatId::Qam16);
        let sym = SymbolSequence::random(40, 16, &mut ChaCha8Rng::seed_from_u64(2));
        let wf = synthesize_clean(&sym, &c, &SensorParams::new(1.7, 0.4, 0.37), &p);
        let bank = MatchedFilterBank::new(wf, p).unwrap();
        let y = bank.mf_samples(0.87);
        let g = Complex64::from_polar(1.7, 0.4);
        let worst = sym.indices.iter().enumerate().map(|(n, &i)| (y[n] - g * c.symbol(i)).norm()).fold(0.0, f64::max);
        assert!(worst > 0.1);
    }

    #[test]
    fn single_symbol_peak_at_true_timing() {
        let p = pulse();
        let c = build_constellation(FormatId::Bpsk);
        let sym = SymbolSequence { indices: vec![0] };
        let truth = 0.62;
        let wf = synthesize_clean(&sym, &c, &SensorParams::new(1.0, 0.0, truth), &p);
        let bank = MatchedFilterBank::new(wf, p).unwrap();
        let best = (0..100)
            .map(|i| i as f64 / 100.0)
            .max_by(|a, b| bank.mf_samples(*a)[0].norm().total_cmp(&bank.mf_samples(*b)[0].norm()))
            .unwrap();
        assert!((best - truth).abs() <= 0.01 + 1e-12);
    }

    #[test]
    fn cache_is_transparent() {
        let p = pulse();
        let c = build_constellation(FormatId::Psk8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sym = SymbolSequence::random(30, 8, &mut rng);
        let mut wf = synthesize_clean(&sym, &c, &SensorParams::new(1.0, 0.2, 0.3), &p);
        add_noise(&mut wf, 1.0, &mut rng);
        let bank = MatchedFilterBank::new(wf.clone(), p.clone()).unwrap();
        let first = bank.mf_samples(0.123456789);
        let again = bank.mf_samples(0.123456789);
        let fresh = MatchedFilterBank::new(wf, p).unwrap().mf_samples(0.1234568);
        assert_eq!(&*first, &*again);
        assert_eq!(&*first, &*fresh);
    }

    #[test]
    fn correlator_matches_direct_sum() {
        let p = pulse();
        let c = build_constellation(FormatId::Qam8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sym = SymbolSequence::random(25, 8, &mut rng);
        let mut wf = synthesize_clean(&sym, &c, &SensorParams::new(1.3, -1.0, 0.71), &p);
        add_noise(&mut wf, 1.0, &mut rng);
        let bank = MatchedFilterBank::new(wf, p).unwrap();
        let w: Vec<Complex64> = (0..25).map(|n| Complex64::from_polar(1.0, n as f64)).collect();
        let corr = bank.correlator(&w);
        for eps in [0.0, 0.25, 0.71, 0.999] {
            let y = bank.mf_samples(eps);
            let direct: Complex64 = w.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            assert!((corr.eval(eps) - direct).norm() < 1e-10);
        }
    }

    #[test]
    #[should_panic]
    fn out_of_range_timing_panics() {
        let p = pulse();
        let bank = MatchedFilterBank::new(Waveform::zeros(4, &p), p).unwrap();
        bank.mf_samples(1.0);
    }

    #[test]
    fn mismatched_pulse_rejected() {
        let p = pulse();
        let wf = Waveform::zeros(4, &p);
        assert!(MatchedFilterBank::new(wf, Arc::new(rrc_pulse(0.3, 8, 8).unwrap())).is_err());
    }
}
