//! Oversampled baseband synthesis: RRC pulse shaping, per-sensor block
//! fading with phase and timing offsets, and complex AWGN.
//!
//! Time is measured in symbol periods (T = 1). Sample `k` of a waveform sits
//! at `t_k = k/Q - span/2`, so the buffer holds `span/2` symbols of pulse
//! spill on both sides of the `N` observed symbols.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constellation::ConstellationSet;
use crate::error::{AmcError, Result};
use crate::frontend::quantize_timing;

/// Textbook root-raised-cosine impulse response for `T = 1`, with the
/// removable singularities replaced by their limits.
pub fn rrc_unnormalized(t: f64, rolloff: f64) -> f64 {
    let a = rolloff;
    if t.abs() < 1e-10 {
        return 1.0 - a + 4.0 * a / PI;
    }
    let x = 4.0 * a * t;
    if (1.0 - x * x).abs() < 1e-8 {
        let arg = PI / (4.0 * a);
        return a / 2f64.sqrt()
            * ((1.0 + 2.0 / PI) * arg.sin() + (1.0 - 2.0 / PI) * arg.cos());
    }
    ((PI * t * (1.0 - a)).sin() + x * (PI * t * (1.0 + a)).cos()) / (PI * t * (1.0 - x * x))
}

/// Pulse values `g(s/Q - span/2 - ε)` for consecutive sample offsets
/// `s = first, first + 1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedTaps {
    pub first: usize,
    pub values: Vec<f64>,
}

/// Memoized [`PulseSpec::grid_taps`] tables, keyed by grid size. Carries no
/// identity: clones start empty and all caches compare equal.
#[derive(Debug, Default)]
struct GridTapCache(Mutex<HashMap<usize, Arc<[ShiftedTaps]>>>);

impl Clone for GridTapCache {
    fn clone(&self) -> Self {
        GridTapCache::default()
    }
}

impl PartialEq for GridTapCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

/// Symmetrically truncated RRC pulse, normalized to unit discrete energy.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSpec {
    rolloff: f64,
    span_symbols: usize,
    samples_per_symbol: usize,
    scale: f64,
    taps: Vec<f64>,
    energy: f64,
    grid_cache: GridTapCache,
}

pub fn rrc_pulse(rolloff: f64, span_symbols: usize, samples_per_symbol: usize) -> Result<PulseSpec> {
    if !(rolloff > 0.0 && rolloff <= 1.0) {
        return Err(AmcError::Config(format!("rolloff {rolloff} outside (0, 1]")));
    }
    if span_symbols == 0 || span_symbols % 2 != 0 {
        return Err(AmcError::Config(format!("pulse span {span_symbols} must be even and positive")));
    }
    if samples_per_symbol < 4 {
        return Err(AmcError::Config(format!(
            "samples_per_symbol {samples_per_symbol} must be at least 4"
        )));
    }
    let mut pulse = PulseSpec {
        rolloff,
        span_symbols,
        samples_per_symbol,
        scale: 1.0,
        taps: Vec::new(),
        energy: 0.0,
        grid_cache: GridTapCache::default(),
    };
    let raw = pulse.shifted_taps(0.0).values;
    let dt = pulse.sample_interval();
    let raw_energy = dt * raw.iter().map(|g| g * g).sum::<f64>();
    pulse.scale = raw_energy.sqrt().recip();
    pulse.taps = pulse.shifted_taps(0.0).values;
    pulse.energy = dt * pulse.taps.iter().map(|g| g * g).sum::<f64>();
    Ok(pulse)
}

impl PulseSpec {
    pub fn rolloff(&self) -> f64 {
        self.rolloff
    }

    pub fn span_symbols(&self) -> usize {
        self.span_symbols
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.samples_per_symbol
    }

    /// Sampled pulse on the grid `t = -span/2, ..., span/2`.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Discrete pulse energy `Δt Σ g²`; 1 up to rounding.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Factor applied to [`rrc_unnormalized`] to reach unit energy.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sample_interval(&self) -> f64 {
        1.0 / self.samples_per_symbol as f64
    }

    pub fn half_span(&self) -> f64 {
        self.span_symbols as f64 / 2.0
    }

    /// Analytic pulse value at an arbitrary time; zero outside the truncation window.
    pub fn eval(&self, t: f64) -> f64 {
        if t.abs() > self.half_span() + 1e-9 {
            0.0
        } else {
            self.scale * rrc_unnormalized(t, self.rolloff)
        }
    }

    /// Equivalent to calling [`PulseSpec::eval`] per tap, but the two
    /// trigonometric terms advance by phasor rotation between taps.
    pub fn shifted_taps(&self, eps: f64) -> ShiftedTaps {
        let q = self.samples_per_symbol as f64;
        let span = self.span_symbols as f64;
        let first = (eps * q - 1e-9).ceil().max(0.0) as usize;
        let last = ((span + eps) * q + 1e-9).floor() as usize;
        let half = self.half_span();
        let a = self.rolloff;
        let t_first = first as f64 / q - half - eps;
        let lo_freq = PI * (1.0 - a);
        let hi_freq = PI * (1.0 + a);
        let lo_step = Complex64::from_polar(1.0, lo_freq / q);
        let hi_step = Complex64::from_polar(1.0, hi_freq / q);
        let mut lo = Complex64::from_polar(1.0, lo_freq * t_first);
        let mut hi = Complex64::from_polar(1.0, hi_freq * t_first);
        let values = (first..=last)
            .map(|s| {
                let t = s as f64 / q - half - eps;
                let x = 4.0 * a * t;
                let v = if t.abs() > half + 1e-9 {
                    0.0
                } else if t.abs() < 1e-2 || (1.0 - x * x).abs() < 1e-2 {
                    // the recurrence's rounding is amplified near the removable singularities
                    self.scale * rrc_unnormalized(t, a)
                } else {
                    self.scale * (lo.im + x * hi.re) / (PI * t * (1.0 - x * x))
                };
                lo *= lo_step;
                hi *= hi_step;
                v
            })
            .collect();
        ShiftedTaps { first, values }
    }
}

impl PulseSpec {
    /// Taps at the timing grid `ε_g = quantize_timing(g / grid)`, `g = 0..grid`.
    pub fn grid_taps(&self, grid: usize) -> Arc<[ShiftedTaps]> {
        let mut cache = self.grid_cache.0.lock().unwrap();
        cache
            .entry(grid)
            .or_insert_with(|| {
                (0..grid)
                    .map(|g| self.shifted_taps(quantize_timing(g as f64 / grid as f64)))
                    .collect()
            })
            .clone()
    }
}

/// Per-sensor channel: gain `a > 0`, phase in `[-π, π)`, timing offset in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    pub amplitude: f64,
    pub phase: f64,
    pub timing: f64,
}

impl SensorParams {
    pub fn new(amplitude: f64, phase: f64, timing: f64) -> Self {
        SensorParams { amplitude, phase, timing }
    }

    pub fn gain(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Wraps a timing offset into `[0, 1)`.
pub fn wrap_timing(eps: f64) -> f64 {
    let w = eps.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub sensor_count: usize,
    pub symbol_count: usize,
    pub noise_psd: f64,
    pub rayleigh_scale: f64,
}

impl ScenarioConfig {
    /// Channel SNR is `E{a²|I|²}/N0 = 2σ²/N0` for Rayleigh gains of scale σ.
    pub fn from_snr_db(snr_db: f64, sensor_count: usize, symbol_count: usize) -> Self {
        let noise_psd = 1.0;
        ScenarioConfig {
            sensor_count,
            symbol_count,
            noise_psd,
            rayleigh_scale: rayleigh_scale_for_snr(snr_db, noise_psd),
        }
    }

    pub fn snr_linear(&self) -> f64 {
        2.0 * self.rayleigh_scale * self.rayleigh_scale / self.noise_psd
    }
}

pub fn rayleigh_scale_for_snr(snr_db: f64, noise_psd: f64) -> f64 {
    (10f64.powf(snr_db / 10.0) * noise_psd / 2.0).sqrt()
}

/// Transmitted symbol indices into a [`ConstellationSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolSequence {
    pub indices: Vec<usize>,
}

impl SymbolSequence {
    pub fn random<R: Rng + ?Sized>(len: usize, cardinality: usize, rng: &mut R) -> Self {
        SymbolSequence {
            indices: (0..len).map(|_| rng.random_range(0..cardinality)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// One sensor's oversampled record covering `[-span/2, N + span/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<Complex64>,
    pub samples_per_symbol: usize,
    pub symbol_count: usize,
    pub span_symbols: usize,
}

impl Waveform {
    pub fn zeros(symbol_count: usize, pulse: &PulseSpec) -> Self {
        let q = pulse.samples_per_symbol();
        let span = pulse.span_symbols();
        Waveform {
            samples: vec![Complex64::new(0.0, 0.0); (symbol_count + span) * q + 1],
            samples_per_symbol: q,
            symbol_count,
            span_symbols: span,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Rayleigh(σ) gain, uniform phase and uniform timing offset.
pub fn draw_sensor_params<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> SensorParams {
    let u: f64 = rng.random();
    let amplitude = sigma * (-2.0 * (1.0 - u).ln()).sqrt();
    let phase = wrap_phase(rng.random_range(-PI..PI));
    let timing = rng.random_range(0.0..1.0);
    SensorParams { amplitude, phase, timing }
}

/// Noise-free `a e^{jθ} Σ_n I_n g(t_k - n - ε)`.
pub fn synthesize_clean(
    symbols: &SymbolSequence,
    constellation: &ConstellationSet,
    params: &SensorParams,
    pulse: &PulseSpec,
) -> Waveform {
    let mut wf = Waveform::zeros(symbols.len(), pulse);
    let q = pulse.samples_per_symbol();
    let taps = pulse.shifted_taps(params.timing);
    let gain = params.gain();
    for (n, &idx) in symbols.indices.iter().enumerate() {
        let s = gain * constellation.symbol(idx);
        let base = n * q + taps.first;
        for (out, &g) in wf.samples[base..base + taps.values.len()].iter_mut().zip(&taps.values) {
            *out += s * g;
        }
    }
    wf
}

/// Adds circular white noise of per-sample variance `N0/Δt`, the discrete
/// stand-in for PSD-`N0` continuous noise under a Riemann-sum matched filter.
pub fn add_noise<R: Rng + ?Sized>(wf: &mut Waveform, noise_psd: f64, rng: &mut R) {
    let dt = 1.0 / wf.samples_per_symbol as f64;
    let sd = (noise_psd / (2.0 * dt)).sqrt();
    for s in wf.samples.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *s += Complex64::new(sd * re, sd * im);
    }
}

pub fn synthesize_received<R: Rng + ?Sized>(
    symbols: &SymbolSequence,
    constellation: &ConstellationSet,
    params: &SensorParams,
    pulse: &PulseSpec,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Waveform {
    let mut wf = synthesize_clean(symbols, constellation, params, pulse);
    add_noise(&mut wf, config.noise_psd, rng);
    wf
}
