//! Generalized EM estimation of per-sensor amplitude, phase and timing,
//! the hybrid maximum likelihood decision, and MAP symbol decoding.
//!
//! One loop body is: E-step at the current estimate, then for every sensor
//! a timing line search, a closed-form phase update and a closed-form
//! amplitude update, then a likelihood check against the stopping threshold.
//! Each coordinate step never decreases that sensor's term of the expected
//! complete-data log-likelihood, so the marginal likelihood never decreases.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constellation::{ConstellationSet, HypothesisSet};
use crate::error::{AmcError, Result};
use crate::frontend::{quantize_timing, MatchedFilterBank, TIMING_QUANTUM};
use crate::init::InitScheme;
use crate::likelihood::{log_likelihood_and_posterior, ObservationSet, ParamVector};
use crate::math::softmax_in_place;
use crate::signal::{wrap_phase, SymbolSequence};

/// A-posteriori symbol probabilities, `N × M` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    probs: Vec<f64>,
    symbols: usize,
    cardinality: usize,
}

impl PosteriorTable {
    pub fn from_rows(symbols: usize, cardinality: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != symbols * cardinality || cardinality == 0 {
            return Err(AmcError::Config(format!(
                "posterior table of {} entries does not match {symbols}×{cardinality}",
                probs.len()
            )));
        }
        Ok(PosteriorTable { probs, symbols, cardinality })
    }

    pub fn symbol_count(&self) -> usize {
        self.symbols
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.probs[n * self.cardinality..(n + 1) * self.cardinality]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.cardinality)
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.probs[n * self.cardinality + m]
    }
}

/// Posterior symbol means `Î_n` and expected total symbol energy `Ê_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStats {
    pub symbol_means: Vec<Complex64>,
    pub mean_energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GemVariant {
    /// Line search over timing, then closed-form phase and amplitude.
    Gem,
    /// Exact M-step for (phase, timing) by exhaustive grid search.
    EmJoint { theta_grid: usize, epsilon_grid: usize },
    /// Timing offsets are pinned to the initial estimate.
    KnownEpsilon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GemConfig {
    pub stop_delta: f64,
    pub max_iterations: usize,
    pub epsilon_grid: usize,
    pub refine_tolerance: f64,
    pub variant: GemVariant,
    pub amplitude_floor: f64,
}

impl Default for GemConfig {
    fn default() -> Self {
        GemConfig {
            stop_delta: 1e-3,
            max_iterations: 200,
            epsilon_grid: 50,
            refine_tolerance: 1e-4,
            variant: GemVariant::Gem,
            amplitude_floor: 1e-6,
        }
    }
}

impl GemConfig {
    pub fn with_variant(mut self, variant: GemVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(AmcError::Config(format!("GEM {what} must be positive")));
        if !(self.stop_delta > 0.0) {
            return bad("stop_delta");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations");
        }
        if self.epsilon_grid == 0 {
            return bad("epsilon_grid");
        }
        if !(self.refine_tolerance > 0.0) {
            return bad("refine_tolerance");
        }
        if !(self.amplitude_floor > 0.0) {
            return bad("amplitude_floor");
        }
        if let GemVariant::EmJoint { theta_grid, epsilon_grid } = self.variant {
            if theta_grid == 0 || epsilon_grid == 0 {
                return bad("joint grid size");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GemResult {
    pub estimate: ParamVector,
    pub log_likelihood: f64,
    pub posterior: PosteriorTable,
    pub iterations: usize,
    pub likelihood_trace: Vec<f64>,
}

impl GemResult {
    /// Number of iterations whose likelihood dropped by more than `slack`.
    pub fn ascent_violations(&self, slack: f64) -> usize {
        self.likelihood_trace.windows(2).filter(|w| w[1] < w[0] - slack).count()
    }
}

/// Posterior of every symbol given all sensors' matched-filter outputs at
/// the current estimate, with equal symbol priors.
pub fn e_step(obs: &ObservationSet, u: &ParamVector, constellation: &ConstellationSet) -> PosteriorTable {
    assert_eq!(u.len(), obs.sensor_count());
    let n0 = obs.noise_psd();
    let m = constellation.cardinality();
    let samples: Vec<_> = obs
        .banks()
        .iter()
        .zip(&u.per_sensor)
        .map(|(b, p)| (b.mf_samples(p.timing), p.gain()))
        .collect();
    let mut probs = vec![0.0; obs.symbol_count() * m];
    for (n, row) in probs.chunks_exact_mut(m).enumerate() {
        for (slot, sym) in row.iter_mut().zip(constellation.symbols()) {
            *slot = -samples.iter().map(|(y, g)| (y[n] - g * sym).norm_sqr()).sum::<f64>() / n0;
        }
        softmax_in_place(row);
    }
    PosteriorTable { probs, symbols: obs.symbol_count(), cardinality: m }
}

pub fn posterior_stats(table: &PosteriorTable, constellation: &ConstellationSet) -> PosteriorStats {
    assert_eq!(table.cardinality(), constellation.cardinality());
    let mut mean_energy = 0.0;
    let symbol_means = table
        .rows()
        .map(|row| {
            let mut mean = Complex64::new(0.0, 0.0);
            for ((p, s), e) in row.iter().zip(constellation.symbols()).zip(constellation.energies()) {
                mean += s * *p;
                mean_energy += p * e;
            }
            mean
        })
        .collect();
    PosteriorStats { symbol_means, mean_energy }
}

/// `Σ_n Î_n* y_n`.
fn correlate(y: &[Complex64], stats: &PosteriorStats) -> Complex64 {
    stats.symbol_means.iter().zip(y).map(|(i, y)| i.conj() * y).sum()
}

fn conj_means(stats: &PosteriorStats) -> Vec<Complex64> {
    stats.symbol_means.iter().map(|i| i.conj()).collect()
}

/// Maximizes `f` on `[lo, hi]` by golden-section search down to width `tol`.
fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Timing update: maximizes `Σ_n Re{Î_n* e^{-jθ} y_n(ε)}` over `[0, 1)` with
/// a `grid`-point scan, then golden-section refinement and the
/// sample-aligned offsets within one grid step of the best grid point.
/// `eps_prev` is always a candidate and wins ties, so the objective never
/// falls below its value at the previous iterate.
pub fn update_epsilon(
    bank: &MatchedFilterBank,
    stats: &PosteriorStats,
    theta: f64,
    eps_prev: f64,
    grid: usize,
    tolerance: f64,
) -> f64 {
    let corr = bank.correlator(&conj_means(stats));
    let rot = Complex64::from_polar(1.0, -theta);
    let objective = |eps: f64| (rot * corr.eval(eps)).re;

    let mut best = quantize_timing(eps_prev);
    let mut best_val = objective(best);
    let consider = |eps: f64, val: f64, best: &mut f64, best_val: &mut f64| {
        if val > *best_val {
            *best = eps;
            *best_val = val;
        }
    };

    let step = 1.0 / grid as f64;
    let mut grid_best = (0.0, f64::NEG_INFINITY);
    for (g, taps) in bank.pulse().grid_taps(grid).iter().enumerate() {
        let eps = quantize_timing(g as f64 * step);
        let val = (rot * corr.eval_taps(taps)).re;
        if val > grid_best.1 {
            grid_best = (eps, val);
        }
    }
    consider(grid_best.0, grid_best.1, &mut best, &mut best_val);

    let lo = (grid_best.0 - step).max(0.0);
    let hi = (grid_best.0 + step).min(1.0 - TIMING_QUANTUM);
    let (eps, _) = golden_section_max(&objective, lo, hi, tolerance);
    let eps = quantize_timing(eps);
    consider(eps, objective(eps), &mut best, &mut best_val);

    // Sample-aligned offsets pick up both truncation-edge taps, so the
    // objective is discontinuous there and bracketing cannot see them.
    let q = bank.pulse().samples_per_symbol() as f64;
    for k in (lo * q).ceil() as usize..=(hi * q).floor() as usize {
        let eps = quantize_timing(k as f64 / q);
        if eps < 1.0 {
            consider(eps, objective(eps), &mut best, &mut best_val);
        }
    }
    best
}

/// Phase update: the maximizer of `Re{e^{-jθ} Î^H y}` is the four-quadrant
/// angle of `Î^H y`. Returns `prev` when the correlation vanishes.
pub fn update_theta(y: &[Complex64], stats: &PosteriorStats, prev: f64) -> f64 {
    let z = correlate(y, stats);
    if z.norm() == 0.0 {
        prev
    } else {
        wrap_phase(z.arg())
    }
}

/// Amplitude update: the unconstrained maximizer of the quadratic
/// `2a·c - E_g a² Ê_I`, clamped to `floor`.
pub fn update_amplitude(
    y: &[Complex64],
    stats: &PosteriorStats,
    theta: f64,
    pulse_energy: f64,
    floor: f64,
) -> Result<f64> {
    if !(stats.mean_energy > 0.0) {
        return Err(AmcError::DegeneratePosterior(format!(
            "expected symbol energy is {}",
            stats.mean_energy
        )));
    }
    let c = (Complex64::from_polar(1.0, -theta) * correlate(y, stats)).re;
    Ok((c / (pulse_energy * stats.mean_energy)).max(floor))
}

/// Exact (phase, timing) M-step over a `theta_grid × epsilon_grid` grid.
/// Phases are `-π + 2πk/theta_grid`, timings `k/epsilon_grid`. When `prev`
/// is given it is kept unless some grid point strictly beats it.
pub fn em_update_joint(
    bank: &MatchedFilterBank,
    stats: &PosteriorStats,
    theta_grid: usize,
    epsilon_grid: usize,
    prev: Option<(f64, f64)>,
) -> (f64, f64) {
    let corr = bank.correlator(&conj_means(stats));
    let rotations: Vec<(f64, Complex64)> = (0..theta_grid)
        .map(|k| {
            let th = -PI + 2.0 * PI * k as f64 / theta_grid as f64;
            (th, Complex64::from_polar(1.0, -th))
        })
        .collect();
    let mut best = (0.0, 0.0);
    let mut best_val = f64::NEG_INFINITY;
    for (g, taps) in bank.pulse().grid_taps(epsilon_grid).iter().enumerate() {
        let eps = quantize_timing(g as f64 / epsilon_grid as f64);
        let z = corr.eval_taps(taps);
        for &(th, rot) in &rotations {
            let val = (rot * z).re;
            if val > best_val {
                best = (th, eps);
                best_val = val;
            }
        }
    }
    if let Some((th, eps)) = prev {
        let eps = quantize_timing(eps);
        let val = (Complex64::from_polar(1.0, -th) * corr.eval(eps)).re;
        if val >= best_val {
            return (th, eps);
        }
    }
    best
}

fn check_start(obs: &ObservationSet, u0: &ParamVector, config: &GemConfig) -> Result<ParamVector> {
    if u0.len() != obs.sensor_count() {
        return Err(AmcError::Config(format!(
            "initial estimate has {} sensors, observation has {}",
            u0.len(),
            obs.sensor_count()
        )));
    }
    let mut u = u0.clone();
    for p in u.per_sensor.iter_mut() {
        if !(p.amplitude.is_finite() && p.phase.is_finite() && (0.0..1.0).contains(&p.timing)) {
            return Err(AmcError::Config(format!("invalid initial sensor parameters {p:?}")));
        }
        p.amplitude = p.amplitude.max(config.amplitude_floor);
        p.phase = wrap_phase(p.phase);
        p.timing = quantize_timing(p.timing);
    }
    Ok(u)
}

/// Runs GEM (or one of its variants) from `u0` until the likelihood gain of
/// one iteration is at most `stop_delta`.
pub fn run_gem(
    obs: &ObservationSet,
    constellation: &ConstellationSet,
    u0: &ParamVector,
    config: &GemConfig,
) -> Result<GemResult> {
    config.validate()?;
    let mut u = check_start(obs, u0, config)?;
    let m = constellation.cardinality();
    let n = obs.symbol_count();
    let pulse_energy = obs.pulse_energy();

    let (mut ll, mut probs) = log_likelihood_and_posterior(obs, &u, constellation)?;
    let mut trace = vec![ll];
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let table = PosteriorTable { probs, symbols: n, cardinality: m };
        let stats = posterior_stats(&table, constellation);
        let mut next = u.clone();
        for (bank, p) in obs.banks().iter().zip(next.per_sensor.iter_mut()) {
            match config.variant {
                GemVariant::Gem => {
                    p.timing = update_epsilon(
                        bank,
                        &stats,
                        p.phase,
                        p.timing,
                        config.epsilon_grid,
                        config.refine_tolerance,
                    );
                    p.phase = update_theta(&bank.mf_samples(p.timing), &stats, p.phase);
                }
                GemVariant::KnownEpsilon => {
                    p.phase = update_theta(&bank.mf_samples(p.timing), &stats, p.phase);
                }
                GemVariant::EmJoint { theta_grid, epsilon_grid } => {
                    let (th, eps) =
                        em_update_joint(bank, &stats, theta_grid, epsilon_grid, Some((p.phase, p.timing)));
                    p.phase = th;
                    p.timing = eps;
                }
            }
            let y = bank.mf_samples(p.timing);
            p.amplitude = update_amplitude(&y, &stats, p.phase, pulse_energy, config.amplitude_floor)?;
        }
        let (next_ll, next_probs) = log_likelihood_and_posterior(obs, &next, constellation)?;
        iterations += 1;
        trace.push(next_ll);
        let gain = next_ll - ll;
        u = next;
        ll = next_ll;
        probs = next_probs;
        if gain <= config.stop_delta {
            break;
        }
    }
    Ok(GemResult {
        estimate: u,
        log_likelihood: ll,
        posterior: PosteriorTable { probs, symbols: n, cardinality: m },
        iterations,
        likelihood_trace: trace,
    })
}

/// Outcome of a hybrid ML classification.
#[derive(Debug, Clone, PartialEq)]
pub struct HmlDecision {
    pub decision: usize,
    pub per_hypothesis: Vec<GemResult>,
}

impl HmlDecision {
    pub fn winner(&self) -> &GemResult {
        &self.per_hypothesis[self.decision]
    }
}

/// Index of the largest value, ties to the lowest index.
pub(crate) fn argmax_first(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Shared driver for the EM-family classifiers. When `pinned_timing` is
/// given, the initial timing of every hypothesis is overwritten by it.
pub(crate) fn classify_with<R: Rng + ?Sized>(
    obs: &ObservationSet,
    hypotheses: &HypothesisSet,
    init: &InitScheme,
    config: &GemConfig,
    pinned_timing: Option<&[f64]>,
    rng: &mut R,
) -> Result<HmlDecision> {
    let mut per_hypothesis = Vec::with_capacity(hypotheses.count());
    for constellation in hypotheses.iter() {
        // independent stream per hypothesis
        let mut hyp_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut u0 = init.initialize(obs, constellation, &mut hyp_rng)?;
        if let Some(t) = pinned_timing {
            if t.len() != u0.len() {
                return Err(AmcError::Config("pinned timing has the wrong sensor count".into()));
            }
            for (p, &eps) in u0.per_sensor.iter_mut().zip(t) {
                p.timing = eps;
            }
        }
        per_hypothesis.push(run_gem(obs, constellation, &u0, config)?);
    }
    let decision = argmax_first(per_hypothesis.iter().map(|r| r.log_likelihood));
    Ok(HmlDecision { decision, per_hypothesis })
}

/// Hybrid ML classifier: initialize and run GEM under every hypothesis, then
/// pick the hypothesis with the largest maximized likelihood.
pub fn classify_hml<R: Rng + ?Sized>(
    obs: &ObservationSet,
    hypotheses: &HypothesisSet,
    init: &InitScheme,
    config: &GemConfig,
    rng: &mut R,
) -> Result<HmlDecision> {
    classify_with(obs, hypotheses, init, config, None, rng)
}

/// Per-symbol MAP decisions from the final posteriors.
pub fn map_decode(result: &GemResult) -> SymbolSequence {
    SymbolSequence {
        indices: result.posterior.rows().map(|row| argmax_first(row.iter().copied())).collect(),
    }
}
