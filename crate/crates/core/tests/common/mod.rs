//! Independent reference computations shared by the integration and
//! acceptance test targets.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use amc_core::constellation::{build_constellation, ConstellationSet, FormatId};
use amc_core::frontend::{quantize_timing, MatchedFilterBank};
use amc_core::gem::{e_step, update_amplitude, update_epsilon, update_theta, PosteriorStats};
use amc_core::harness::{pcc, run_experiment, ClassifierKind, ClassifierSpec, ConfusionMatrix, ExperimentConfig, InitSpec};
use amc_core::likelihood::{log_likelihood, ObservationSet, ParamVector};
use amc_core::signal::{
    add_noise, draw_sensor_params, rrc_pulse, synthesize_clean, PulseSpec, SensorParams, SymbolSequence, Waveform,
};
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn standard_pulse() -> Arc<PulseSpec> {
    Arc::new(rrc_pulse(0.3, 8, 16).unwrap())
}

/// Matched filter by direct summation over the whole record, with the
/// pulse evaluated analytically at every sample.
pub fn direct_mf(wf: &Waveform, pulse: &PulseSpec, eps: f64) -> Vec<Complex64> {
    let q = wf.samples_per_symbol as f64;
    let half = pulse.half_span();
    (0..wf.symbol_count)
        .map(|n| {
            let acc: Complex64 = wf
                .samples
                .iter()
                .enumerate()
                .map(|(k, y)| y * pulse.eval(k as f64 / q - half - n as f64 - eps))
                .sum();
            acc * pulse.sample_interval()
        })
        .collect()
}

/// Log-likelihood by enumerating all `M^N` symbol sequences, each with
/// prior `M^{-N}`.
pub fn brute_force_log_likelihood(
    waveforms: &[Waveform],
    pulse: &PulseSpec,
    u: &ParamVector,
    c: &ConstellationSet,
    n0: f64,
) -> f64 {
    let ys: Vec<Vec<Complex64>> =
        waveforms.iter().zip(&u.per_sensor).map(|(w, p)| direct_mf(w, pulse, p.timing)).collect();
    let n = ys[0].len();
    let m = c.cardinality();
    let eg = pulse.energy();
    let a2: f64 = u.per_sensor.iter().map(|p| p.amplitude * p.amplitude).sum();
    let total = m.pow(n as u32);
    let exponents: Vec<f64> = (0..total)
        .map(|mut code| {
            let mut e = 0.0;
            for t in 0..n {
                let sym = c.symbol(code % m);
                code /= m;
                for (y, p) in ys.iter().zip(&u.per_sensor) {
                    e += 2.0 / n0 * p.amplitude * (sym.conj() * Complex64::from_polar(1.0, -p.phase) * y[t]).re;
                }
                e -= eg / n0 * sym.norm_sqr() * a2;
            }
            e
        })
        .collect();
    let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + exponents.iter().map(|e| (e - max).exp()).sum::<f64>().ln() - n as f64 * (m as f64).ln()
}

/// A constellation with `m` random distinct points.
pub fn random_constellation(m: usize, rng: &mut ChaCha8Rng) -> ConstellationSet {
    loop {
        let pts: Vec<Complex64> =
            (0..m).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        if let Ok(c) = ConstellationSet::from_points(FormatId::Qam16, &pts) {
            return c;
        }
    }
}

fn on_timing_grid(rng: &mut ChaCha8Rng) -> f64 {
    quantize_timing(rng.random_range(0.0..1.0))
}

pub struct LikelihoodCheck {
    pub instances: usize,
    pub worst_relative: f64,
}

/// Compares [`log_likelihood`] with enumeration on random small instances
/// (`N ≤ 3`, `L ≤ 2`, `M ≤ 4`). Relative error uses `max(|Λ|, 1)` as scale.
pub fn likelihood_oracle_check(instances: usize, seed: u64) -> LikelihoodCheck {
    let pulse = standard_pulse();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let n = rng.random_range(1..=3);
        let l = rng.random_range(1..=2);
        let c = match i % 4 {
            0 => build_constellation(FormatId::Bpsk),
            1 => build_constellation(FormatId::Qpsk),
            _ => {
                let m = rng.random_range(2..=4);
                random_constellation(m, &mut rng)
            }
        };
        let n0 = rng.random_range(0.2..2.0);
        let sym = SymbolSequence::random(n, c.cardinality(), &mut rng);
        let truth: Vec<SensorParams> = (0..l).map(|_| draw_sensor_params(1.0, &mut rng)).collect();
        let wfs: Vec<Waveform> = truth
            .iter()
            .map(|p| {
                let mut w = synthesize_clean(&sym, &c, p, &pulse);
                add_noise(&mut w, n0, &mut rng);
                w
            })
            .collect();
        let u = ParamVector::new(
            (0..l)
                .map(|_| SensorParams::new(rng.random_range(0.05..2.5), rng.random_range(-PI..PI), on_timing_grid(&mut rng)))
                .collect(),
        );
        let banks = wfs.iter().map(|w| MatchedFilterBank::new(w.clone(), pulse.clone()).unwrap()).collect();
        let obs = ObservationSet::new(banks, n0).unwrap();
        let got = log_likelihood(&obs, &u, &c).unwrap();
        let want = brute_force_log_likelihood(&wfs, &pulse, &u, &c, n0);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    LikelihoodCheck { instances, worst_relative: worst }
}

/// Expected complete-data log-likelihood of one sensor as a function of
/// its amplitude and phase, with `y` the matched-filter outputs at its timing.
pub fn q_objective(y: &[Complex64], stats: &PosteriorStats, a: f64, theta: f64, eg: f64, n0: f64) -> f64 {
    let z: Complex64 = stats.symbol_means.iter().zip(y).map(|(i, y)| i.conj() * y).sum();
    2.0 / n0 * a * (Complex64::from_polar(1.0, -theta) * z).re - eg / n0 * a * a * stats.mean_energy
}

/// Random posterior statistics derived from a random posterior table, so
/// that `Ê_I ≥ Σ|Î_n|²` holds as it does for real posteriors.
pub fn random_stats(n: usize, c: &ConstellationSet, rng: &mut ChaCha8Rng) -> PosteriorStats {
    let m = c.cardinality();
    let mut means = Vec::with_capacity(n);
    let mut energy = 0.0;
    for _ in 0..n {
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0f64).powi(4)).collect();
        let s: f64 = w.iter().sum();
        let mut mean = Complex64::new(0.0, 0.0);
        for (k, wk) in w.iter().enumerate() {
            mean += c.symbol(k) * (wk / s);
            energy += wk / s * c.energies()[k];
        }
        means.push(mean);
    }
    PosteriorStats { symbol_means: means, mean_energy: energy }
}

pub struct MstepCheck {
    pub theta_worst_gap: f64,
    pub amplitude_worst_gap: f64,
    pub epsilon_worst_error: f64,
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Worst objective gaps of the closed-form phase and amplitude updates
/// against dense grids, and worst timing error of the line search against a
/// `10^4`-point grid on noiseless data.
pub fn mstep_oracle_check(instances: usize, epsilon_instances: usize, seed: u64) -> MstepCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta_gap = 0.0f64;
    let mut amp_gap = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(5..60);
        let c = build_constellation(FormatId::ALL[rng.random_range(0..FormatId::ALL.len())]);
        let stats = random_stats(n, &c, &mut rng);
        let y: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
            .collect();
        let n0 = rng.random_range(0.2..2.0);
        let eg = 1.0;
        let a = rng.random_range(0.1..3.0);

        let th = update_theta(&y, &stats, 0.0);
        let grid_best = (0..100_000)
            .map(|k| q_objective(&y, &stats, a, -PI + 2.0 * PI * k as f64 / 1e5, eg, n0))
            .fold(f64::NEG_INFINITY, f64::max);
        theta_gap = theta_gap.max((q_objective(&y, &stats, a, th, eg, n0) - grid_best).abs());

        let amp = update_amplitude(&y, &stats, th, eg, 1e-6).unwrap();
        let hi = 3.0 * amp + 1.0;
        let grid_best = (0..=10_000)
            .map(|k| q_objective(&y, &stats, hi * k as f64 / 1e4, th, eg, n0))
            .fold(f64::NEG_INFINITY, f64::max);
        amp_gap = amp_gap.max((q_objective(&y, &stats, amp, th, eg, n0) - grid_best).abs());
    }

    let pulse = standard_pulse();
    let mut eps_err = 0.0f64;
    for _ in 0..epsilon_instances {
        let n = 30;
        let c = build_constellation(FormatId::QUATERNARY[rng.random_range(0..4)]);
        let sym = SymbolSequence::random(n, c.cardinality(), &mut rng);
        let truth = SensorParams::new(rng.random_range(0.5..2.0), rng.random_range(-PI..PI), rng.random_range(0.0..1.0));
        let bank = MatchedFilterBank::new(synthesize_clean(&sym, &c, &truth, &pulse), pulse.clone()).unwrap();
        let stats = PosteriorStats {
            symbol_means: sym.indices.iter().map(|&i| c.symbol(i)).collect(),
            mean_energy: sym.indices.iter().map(|&i| c.energies()[i]).sum(),
        };
        let rot = Complex64::from_polar(1.0, -truth.phase);
        let objective = |eps: f64| -> f64 {
            let y = bank.mf_samples(eps);
            stats.symbol_means.iter().zip(y.iter()).map(|(i, y)| (rot * i.conj() * y).re).sum()
        };
        let oracle = (0..10_000)
            .map(|k| k as f64 / 1e4)
            .max_by(|a, b| objective(*a).total_cmp(&objective(*b)))
            .unwrap();
        let start = rng.random_range(0.0..1.0);
        let got = update_epsilon(&bank, &stats, truth.phase, quantize_timing(start), 50, 1e-4);
        eps_err = eps_err.max(circular_distance(got, oracle));
    }
    MstepCheck { theta_worst_gap: theta_gap, amplitude_worst_gap: amp_gap, epsilon_worst_error: eps_err }
}

/// Sample variance of the matched-filter output on noise-only records,
/// one output per record at a random timing offset.
pub fn noise_output_variance(trials: usize, n0: f64, seed: u64) -> f64 {
    let pulse = standard_pulse();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..trials {
        let mut w = Waveform::zeros(3, &pulse);
        add_noise(&mut w, n0, &mut rng);
        let bank = MatchedFilterBank::new(w, pulse.clone()).unwrap();
        let eps = rng.random_range(0.0..1.0);
        acc += bank.mf_samples(eps)[1].norm_sqr();
    }
    acc / trials as f64
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn outcome<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

pub fn prop_posterior_rows_normalized() -> Result<(), String> {
    let pulse = standard_pulse();
    let strategy = (any::<u64>(), 0..FormatId::ALL.len(), 1usize..4, 0.05f64..5.0);
    outcome(runner(64).run(&strategy, |(seed, f, l, n0)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = build_constellation(FormatId::ALL[f]);
        let sym = SymbolSequence::random(12, c.cardinality(), &mut rng);
        let mut banks = Vec::new();
        let mut u = Vec::new();
        for _ in 0..l {
            let p = draw_sensor_params(2.0, &mut rng);
            let mut w = synthesize_clean(&sym, &c, &p, &pulse);
            add_noise(&mut w, n0, &mut rng);
            banks.push(MatchedFilterBank::new(w, pulse.clone()).unwrap());
            u.push(draw_sensor_params(2.0, &mut rng));
        }
        let obs = ObservationSet::new(banks, n0).unwrap();
        let table = e_step(&obs, &ParamVector::new(u), &c);
        for row in table.rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        Ok(())
    }))
}

pub fn prop_constellation_unit_power() -> Result<(), String> {
    for f in FormatId::ALL {
        let c = build_constellation(f);
        let p = c.symbols().iter().map(|s| s.norm_sqr()).sum::<f64>() / c.cardinality() as f64;
        if (p - 1.0).abs() > 1e-12 {
            return Err(format!("{f} has mean power {p}"));
        }
    }
    let strategy = proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20);
    outcome(runner(256).run(&strategy, |pts| {
        let pts: Vec<Complex64> = pts.into_iter().map(|(re, im)| Complex64::new(re, im)).collect();
        if let Ok(c) = ConstellationSet::from_points(FormatId::Qam16, &pts) {
            let p = c.symbols().iter().map(|s| s.norm_sqr()).sum::<f64>() / c.cardinality() as f64;
            prop_assert!((p - 1.0).abs() <= 1e-12);
        }
        Ok(())
    }))
}

pub fn prop_rrc_symmetric() -> Result<(), String> {
    let strategy = (0.01f64..=1.0, 1usize..7, 4usize..40);
    outcome(runner(128).run(&strategy, |(rolloff, half_span, q)| {
        let p = rrc_pulse(rolloff, 2 * half_span, q).unwrap();
        let t = p.taps();
        prop_assert_eq!(t.len(), 2 * half_span * q + 1);
        for i in 0..t.len() {
            prop_assert!((t[i] - t[t.len() - 1 - i]).abs() <= 1e-12);
        }
        prop_assert!((p.energy() - 1.0).abs() <= 1e-9);
        Ok(())
    }))
}

fn tiny_experiment(seed: u64, snr_db: f64) -> ExperimentConfig {
    ExperimentConfig {
        snr_db: vec![snr_db],
        sensors: vec![2],
        symbols: 24,
        trials: 2,
        seed,
        classifiers: vec![
            ClassifierSpec::new(ClassifierKind::Clairvoyant, InitSpec::default()),
            ClassifierSpec::new(ClassifierKind::Gem, InitSpec::default()),
            ClassifierSpec::new(ClassifierKind::Gem, InitSpec::SaUniform),
        ],
        ..ExperimentConfig::default()
    }
}

/// Two runs of the same experiment agree on everything except wall-clock timing.
pub fn prop_deterministic_reruns() -> Result<(), String> {
    outcome(runner(6).run(&(any::<u64>(), 0.0f64..15.0), |(seed, snr)| {
        let cfg = tiny_experiment(seed, snr);
        let mut a = run_experiment(&cfg).unwrap();
        let mut b = run_experiment(&cfg).unwrap();
        for c in a.cells.iter_mut().chain(b.cells.iter_mut()) {
            c.mean_ms = 0.0;
        }
        let bits = |r: &amc_core::harness::ExperimentResult| {
            r.cells
                .iter()
                .flat_map(|c| {
                    let mut v = vec![c.pcc.to_bits(), c.worst_ascent_drop.to_bits()];
                    v.extend(c.per_format.iter().map(|p| p.to_bits()));
                    v
                })
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(bits(&a), bits(&b));
        prop_assert_eq!(a, b);
        Ok(())
    }))
}

/// `pcc` against exact rational arithmetic on the counts.
pub fn prop_pcc_exact() -> Result<(), String> {
    let strategy = (1usize..7).prop_flat_map(|s| proptest::collection::vec(proptest::collection::vec(0u64..1000, s), s));
    outcome(runner(512).run(&strategy, |mut counts| {
        for (i, row) in counts.iter_mut().enumerate() {
            if row.iter().sum::<u64>() == 0 {
                row[i] = 1;
            }
        }
        let s = counts.len() as u128;
        let rows: Vec<u128> = counts.iter().map(|r| r.iter().map(|&c| c as u128).sum()).collect();
        let denom: u128 = rows.iter().product::<u128>() * s;
        let numer: u128 = (0..counts.len())
            .map(|i| counts[i][i] as u128 * rows.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r).product::<u128>())
            .sum();
        let exact = numer as f64 / denom as f64;
        let got = pcc(&ConfusionMatrix { counts: counts.clone() });
        prop_assert!((got - exact).abs() <= 4.0 * f64::EPSILON * exact.max(f64::MIN_POSITIVE));
        let m = ConfusionMatrix { counts: counts.clone() };
        for i in 0..counts.len() {
            prop_assert_eq!(m.row_sum(i), rows[i] as u64);
        }
        Ok(())
    }))
}

pub fn property_suite() -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("posterior rows sum to 1", prop_posterior_rows_normalized()),
        ("constellation unit power", prop_constellation_unit_power()),
        ("RRC symmetry", prop_rrc_symmetric()),
        ("deterministic reruns", prop_deterministic_reruns()),
        ("P_cc exact from counts", prop_pcc_exact()),
    ]
}
