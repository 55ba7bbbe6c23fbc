//! Starting points for GEM: perturbed truth, simulated annealing over a
//! coarse grid, or a caller-supplied vector.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constellation::ConstellationSet;
use crate::error::{AmcError, Result};
use crate::likelihood::{log_likelihood, ObservationSet, ParamVector};
use crate::signal::{wrap_phase, wrap_timing, SensorParams};

/// Maximum initialization errors for amplitude, phase and timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitDeltas {
    pub amplitude: f64,
    pub phase: f64,
    pub timing: f64,
}

impl InitDeltas {
    pub const SMALL: InitDeltas = InitDeltas { amplitude: 1.0, phase: PI / 20.0, timing: 0.05 };
    pub const MODERATE: InitDeltas = InitDeltas { amplitude: 5.0, phase: PI / 10.0, timing: 0.1 };
    pub const LARGE: InitDeltas = InitDeltas { amplitude: 10.0, phase: PI / 5.0, timing: 0.1 };

    pub fn validate(&self) -> Result<()> {
        if [self.amplitude, self.phase, self.timing].iter().all(|d| *d >= 0.0 && d.is_finite()) {
            Ok(())
        } else {
            Err(AmcError::Config(format!("initialization errors must be non-negative: {self:?}")))
        }
    }
}

/// Whether annealing walks the joint grid of all sensors or each sensor's
/// grid separately against its own single-sensor likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaSearch {
    Joint,
    PerSensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaConfig {
    pub iterations: usize,
    pub temperature: f64,
    pub grid_points_amplitude: usize,
    pub grid_points_phase: usize,
    pub grid_points_timing: usize,
    pub amplitude_upper_quantile: f64,
    pub search: SaSearch,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig {
            iterations: 200,
            temperature: 1.6,
            grid_points_amplitude: 10,
            grid_points_phase: 10,
            grid_points_timing: 10,
            amplitude_upper_quantile: 0.99,
            search: SaSearch::Joint,
        }
    }
}

impl SaConfig {
    /// Same grid size as the default but phase-heavy: 5 × 20 × 10.
    pub fn nonuniform() -> Self {
        SaConfig { grid_points_amplitude: 5, grid_points_phase: 20, ..SaConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 2 {
            return Err(AmcError::Config("SA needs at least 2 iterations".into()));
        }
        if self.grid_points_amplitude < 2 || self.grid_points_phase < 2 || self.grid_points_timing < 2 {
            return Err(AmcError::Config("SA grids need at least 2 points per axis".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(AmcError::Config("SA temperature parameter must be positive".into()));
        }
        if !(self.amplitude_upper_quantile > 0.0 && self.amplitude_upper_quantile < 1.0) {
            return Err(AmcError::Config("SA amplitude quantile must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitScheme {
    PerturbedTruth { truth: ParamVector, deltas: InitDeltas, amplitude_floor: f64 },
    SimulatedAnnealing { config: SaConfig, rayleigh_scale: f64 },
    Fixed(ParamVector),
}

impl InitScheme {
    pub fn initialize<R: Rng + ?Sized>(
        &self,
        obs: &ObservationSet,
        constellation: &ConstellationSet,
        rng: &mut R,
    ) -> Result<ParamVector> {
        match self {
            InitScheme::PerturbedTruth { truth, deltas, amplitude_floor } => {
                deltas.validate()?;
                Ok(perturbed_truth_init(truth, deltas, *amplitude_floor, rng))
            }
            InitScheme::SimulatedAnnealing { config, rayleigh_scale } => {
                Ok(sa_init(obs, constellation, config, *rayleigh_scale, rng)?.estimate)
            }
            InitScheme::Fixed(u) => Ok(u.clone()),
        }
    }
}

/// Draws `a ~ U[0, a + δa]`, `θ ~ U[θ ± δθ]`, `ε ~ U[ε ± δε]` per sensor,
/// wrapping phase and timing into range and flooring the amplitude.
pub fn perturbed_truth_init<R: Rng + ?Sized>(
    truth: &ParamVector,
    deltas: &InitDeltas,
    amplitude_floor: f64,
    rng: &mut R,
) -> ParamVector {
    let per_sensor = truth
        .per_sensor
        .iter()
        .map(|t| {
            let [ua, up, ut]: [f64; 3] = std::array::from_fn(|_| rng.random());
            let amplitude = ((t.amplitude + deltas.amplitude) * ua).max(amplitude_floor);
            let phase = wrap_phase(t.phase + deltas.phase * (2.0 * up - 1.0));
            let timing = wrap_timing(t.timing + deltas.timing * (2.0 * ut - 1.0));
            SensorParams { amplitude, phase, timing }
        })
        .collect();
    ParamVector { per_sensor }
}

/// Rayleigh inverse CDF, `σ sqrt(-2 ln(1 - p))`.
pub fn rayleigh_quantile(p: f64, sigma: f64) -> f64 {
    sigma * (-2.0 * (1.0 - p).ln()).sqrt()
}

/// Per-sensor coarse grid `A × Θ × ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaGrid {
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
    pub timings: Vec<f64>,
}

impl SaGrid {
    pub fn size(&self) -> usize {
        self.amplitudes.len() * self.phases.len() * self.timings.len()
    }

    fn axis_len(&self, axis: usize) -> usize {
        [self.amplitudes.len(), self.phases.len(), self.timings.len()][axis]
    }

    fn point(&self, idx: [usize; 3]) -> SensorParams {
        SensorParams::new(self.amplitudes[idx[0]], self.phases[idx[1]], self.timings[idx[2]])
    }
}

pub fn build_grid(config: &SaConfig, sigma: f64) -> Result<SaGrid> {
    config.validate()?;
    if !(sigma > 0.0) {
        return Err(AmcError::Config(format!("Rayleigh scale {sigma} must be positive")));
    }
    let upper = rayleigh_quantile(config.amplitude_upper_quantile, sigma);
    let ga = config.grid_points_amplitude;
    let gp = config.grid_points_phase;
    let gt = config.grid_points_timing;
    Ok(SaGrid {
        amplitudes: (1..=ga).map(|k| upper * k as f64 / ga as f64).collect(),
        phases: (0..gp).map(|k| -PI + 2.0 * PI * k as f64 / gp as f64).collect(),
        timings: (0..gt).map(|k| k as f64 / gt as f64).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaOutcome {
    pub estimate: ParamVector,
    pub log_likelihood: f64,
    /// Likelihood evaluations spent by the annealing walk(s).
    pub evaluations: usize,
    /// Likelihood at the random starting point (joint search only).
    pub start_log_likelihood: f64,
}

fn to_params(grid: &SaGrid, state: &[[usize; 3]]) -> ParamVector {
    ParamVector { per_sensor: state.iter().map(|&idx| grid.point(idx)).collect() }
}

/// One annealing walk over the product grid of `obs`'s sensors.
/// Returns `(best state, best Λ, Λ at start, evaluations)`.
fn anneal<R: Rng + ?Sized>(
    obs: &ObservationSet,
    constellation: &ConstellationSet,
    grid: &SaGrid,
    config: &SaConfig,
    rng: &mut R,
) -> Result<(Vec<[usize; 3]>, f64, f64, usize)> {
    let sensors = obs.sensor_count();
    let mut current: Vec<[usize; 3]> = (0..sensors)
        .map(|_| std::array::from_fn(|axis| rng.random_range(0..grid.axis_len(axis))))
        .collect();
    let mut current_ll = log_likelihood(obs, &to_params(grid, &current), constellation)?;
    let mut evaluations = 1;
    let start_ll = current_ll;
    let mut best = current.clone();
    let mut best_ll = current_ll;

    for k in 2..=config.iterations {
        let temperature = config.temperature / (k as f64).ln();

        let mut proposal = current.clone();
        let sensor = rng.random_range(0..sensors);
        let axis = rng.random_range(0..3);
        let step: isize = if rng.random::<bool>() { 1 } else { -1 };
        let len = grid.axis_len(axis) as isize;
        let idx = proposal[sensor][axis] as isize;
        let moved = if axis == 1 {
            (idx + step).rem_euclid(len)
        } else if (0..len).contains(&(idx + step)) {
            idx + step
        } else {
            idx - step
        };
        proposal[sensor][axis] = moved as usize;

        let proposal_ll = log_likelihood(obs, &to_params(grid, &proposal), constellation)?;
        evaluations += 1;
        let accept = if current_ll <= proposal_ll {
            true
        } else if current_ll == 0.0 {
            true
        } else {
            let p = ((proposal_ll - current_ll) / (temperature * current_ll.abs())).exp();
            rng.random::<f64>() < p
        };
        if accept {
            current = proposal;
            current_ll = proposal_ll;
        }
        if best_ll <= current_ll {
            best = current.clone();
            best_ll = current_ll;
        }
    }
    Ok((best, best_ll, start_ll, evaluations))
}

/// Simulated annealing on the coarse grid with temperature `d / ln k`,
/// one-hop single-coordinate moves (reflecting for amplitude and timing,
/// wrapping for phase) and best-so-far tracking.
pub fn sa_init<R: Rng + ?Sized>(
    obs: &ObservationSet,
    constellation: &ConstellationSet,
    config: &SaConfig,
    rayleigh_scale: f64,
    rng: &mut R,
) -> Result<SaOutcome> {
    let grid = build_grid(config, rayleigh_scale)?;
    match config.search {
        SaSearch::Joint => {
            let (best, ll, start, evaluations) = anneal(obs, constellation, &grid, config, rng)?;
            Ok(SaOutcome {
                estimate: to_params(&grid, &best),
                log_likelihood: ll,
                evaluations,
                start_log_likelihood: start,
            })
        }
        SaSearch::PerSensor => {
            let mut state = Vec::with_capacity(obs.sensor_count());
            let mut evaluations = 0;
            for l in 0..obs.sensor_count() {
                let (best, _, _, evals) = anneal(&obs.sensor_subset(l), constellation, &grid, config, rng)?;
                state.push(best[0]);
                evaluations += evals;
            }
            let estimate = to_params(&grid, &state);
            let ll = log_likelihood(obs, &estimate, constellation)?;
            Ok(SaOutcome { estimate, log_likelihood: ll, evaluations, start_log_likelihood: f64::NAN })
        }
    }
}
