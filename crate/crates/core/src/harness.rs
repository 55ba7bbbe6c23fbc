//! Monte Carlo experiment engine.
//!
//! Every trial draws its symbols, channels and noise from a stream seeded by
//! a hash of `(master seed, SNR index, sensor-count index, trial, true
//! format)`, so results do not depend on execution order or thread count.
//! All classifiers in a trial see the same observation, and their random
//! initializations share one derived stream.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{clairvoyant_classify, clairvoyant_em_classify, zero_offset_em_classify};
use crate::constellation::{build_hypothesis_set, FormatId, HypothesisSet};
use crate::error::{AmcError, Result};
use crate::frontend::MatchedFilterBank;
use crate::gem::{classify_hml, map_decode, GemConfig, GemVariant, HmlDecision};
use crate::init::{InitDeltas, InitScheme, SaConfig};
use crate::likelihood::{ObservationSet, ParamVector};
use crate::signal::{draw_sensor_params, rrc_pulse, synthesize_received, PulseSpec, ScenarioConfig, SymbolSequence};

/// Which decision rule a classifier uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ClassifierKind {
    Clairvoyant,
    ClairvoyantEm,
    ZeroOffsetEm,
    Gem,
    EmJoint { theta_grid: usize, epsilon_grid: usize },
}

impl ClassifierKind {
    pub fn uses_estimation(&self) -> bool {
        !matches!(self, ClassifierKind::Clairvoyant)
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierKind::Clairvoyant => f.write_str("clairvoyant"),
            ClassifierKind::ClairvoyantEm => f.write_str("clairvoyant-em"),
            ClassifierKind::ZeroOffsetEm => f.write_str("zero-offset-em"),
            ClassifierKind::Gem => f.write_str("gem"),
            ClassifierKind::EmJoint { theta_grid, epsilon_grid } => {
                write!(f, "em-joint:{theta_grid}:{epsilon_grid}")
            }
        }
    }
}

impl FromStr for ClassifierKind {
    type Err = AmcError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || AmcError::Config(format!("unknown classifier {s:?}"));
        Ok(match s {
            "clairvoyant" => ClassifierKind::Clairvoyant,
            "clairvoyant-em" => ClassifierKind::ClairvoyantEm,
            "zero-offset-em" => ClassifierKind::ZeroOffsetEm,
            "gem" => ClassifierKind::Gem,
            _ => {
                let rest = s.strip_prefix("em-joint").ok_or_else(bad)?;
                let parts: Vec<&str> = rest.split(':').skip(1).collect();
                let parse = |p: &str| p.parse::<usize>().map_err(|_| bad());
                let (theta_grid, epsilon_grid) = match (rest.is_empty(), parts.as_slice()) {
                    (true, _) => (60, 50),
                    (false, [t]) => (parse(t)?, 50),
                    (false, [t, e]) => (parse(t)?, parse(e)?),
                    _ => return Err(bad()),
                };
                if theta_grid == 0 || epsilon_grid == 0 {
                    return Err(bad());
                }
                ClassifierKind::EmJoint { theta_grid, epsilon_grid }
            }
        })
    }
}

impl TryFrom<String> for ClassifierKind {
    type Error = AmcError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ClassifierKind> for String {
    fn from(k: ClassifierKind) -> String {
        k.to_string()
    }
}

/// How GEM is started in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InitSpec {
    /// True parameters plus bounded uniform errors.
    Perturbed(InitDeltas),
    SaUniform,
    /// Phase-heavy 5 × 20 × 10 annealing grid.
    SaNonuniform,
    /// Start exactly at the true parameters.
    Fixed,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Perturbed(InitDeltas::MODERATE)
    }
}

impl InitSpec {
    fn tag(&self) -> &'static str {
        match self {
            InitSpec::Perturbed(_) => "perturbed",
            InitSpec::SaUniform => "sa-uniform",
            InitSpec::SaNonuniform => "sa-nonuniform",
            InitSpec::Fixed => "fixed",
        }
    }
}

impl fmt::Display for InitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitSpec::Perturbed(d) => write!(f, "perturbed:{},{},{}", d.amplitude, d.phase, d.timing),
            InitSpec::SaUniform => f.write_str("sa:uniform"),
            InitSpec::SaNonuniform => f.write_str("sa:nonuniform"),
            InitSpec::Fixed => f.write_str("fixed"),
        }
    }
}

impl FromStr for InitSpec {
    type Err = AmcError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || AmcError::Config(format!("unknown init scheme {s:?}"));
        match s {
            "sa:uniform" => Ok(InitSpec::SaUniform),
            "sa:nonuniform" => Ok(InitSpec::SaNonuniform),
            "fixed" => Ok(InitSpec::Fixed),
            "perturbed" => Ok(InitSpec::Perturbed(InitDeltas::MODERATE)),
            _ => {
                let rest = s.strip_prefix("perturbed:").ok_or_else(bad)?;
                let vals = rest
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                let [amplitude, phase, timing] = vals[..] else {
                    return Err(bad());
                };
                let d = InitDeltas { amplitude, phase, timing };
                d.validate()?;
                Ok(InitSpec::Perturbed(d))
            }
        }
    }
}

impl TryFrom<String> for InitSpec {
    type Error = AmcError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InitSpec> for String {
    fn from(i: InitSpec) -> String {
        i.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl ClassifierSpec {
    pub fn new(kind: ClassifierKind, init: InitSpec) -> Self {
        ClassifierSpec { kind, init, name: None }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    /// Label used in result files: the explicit name, else the kind, with
    /// the init scheme appended when it is not the default.
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        if !self.kind.uses_estimation() || self.init == InitSpec::default() {
            self.kind.to_string()
        } else {
            format!("{}_{}", self.kind, self.init.tag())
        }
    }
}

/// GEM tuning shared by every estimating classifier in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GemSettings {
    pub stop_delta: f64,
    pub max_iterations: usize,
    pub epsilon_grid: usize,
    pub refine_tolerance: f64,
    pub amplitude_floor: f64,
}

impl Default for GemSettings {
    fn default() -> Self {
        let d = GemConfig::default();
        GemSettings {
            stop_delta: d.stop_delta,
            max_iterations: d.max_iterations,
            epsilon_grid: d.epsilon_grid,
            refine_tolerance: d.refine_tolerance,
            amplitude_floor: d.amplitude_floor,
        }
    }
}

impl GemSettings {
    pub fn to_config(&self, variant: GemVariant) -> GemConfig {
        GemConfig {
            stop_delta: self.stop_delta,
            max_iterations: self.max_iterations,
            epsilon_grid: self.epsilon_grid,
            refine_tolerance: self.refine_tolerance,
            variant,
            amplitude_floor: self.amplitude_floor,
        }
    }
}

mod seed_format {
    //! Seeds above `i64::MAX` do not fit a TOML integer; those are written as strings.
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        if *seed <= i64::MAX as u64 {
            s.serialize_i64(*seed as i64)
        } else {
            s.serialize_str(&seed.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(u64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(v),
            Raw::Str(s) => s.parse().map_err(de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub snr_db: Vec<f64>,
    pub sensors: Vec<usize>,
    pub symbols: usize,
    pub formats: Vec<FormatId>,
    pub trials: usize,
    #[serde(with = "seed_format")]
    pub seed: u64,
    pub samples_per_symbol: usize,
    pub rolloff: f64,
    pub pulse_span: usize,
    pub classifiers: Vec<ClassifierSpec>,
    pub gem: GemSettings,
    pub sa: SaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            snr_db: vec![0.0, 5.0, 10.0, 15.0],
            sensors: vec![1, 5],
            symbols: 100,
            formats: FormatId::QUATERNARY.to_vec(),
            trials: 500,
            seed: 1,
            samples_per_symbol: 16,
            rolloff: 0.3,
            pulse_span: 8,
            classifiers: vec![
                ClassifierSpec::new(ClassifierKind::Clairvoyant, InitSpec::default()),
                ClassifierSpec::new(ClassifierKind::Gem, InitSpec::default()),
            ],
            gem: GemSettings::default(),
            sa: SaConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, why: &str| Err(AmcError::Config(format!("{key}: {why}")));
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return fail("snr_db", "must be a nonempty list of finite values");
        }
        if self.sensors.is_empty() || self.sensors.contains(&0) {
            return fail("sensors", "must be a nonempty list of positive counts");
        }
        if self.symbols == 0 {
            return fail("symbols", "must be at least 1");
        }
        if self.trials == 0 {
            return fail("trials", "must be at least 1");
        }
        if self.classifiers.is_empty() {
            return fail("classifiers", "must name at least one classifier");
        }
        build_hypothesis_set(&self.formats).map_err(|e| AmcError::Config(format!("formats: {e}")))?;
        let section = |key: &'static str| move |e: AmcError| AmcError::Config(format!("{key}: {e}"));
        rrc_pulse(self.rolloff, self.pulse_span, self.samples_per_symbol)
            .map_err(section("rolloff/pulse_span/samples_per_symbol"))?;
        self.gem.to_config(GemVariant::Gem).validate().map_err(section("gem"))?;
        self.sa.validate().map_err(section("sa"))?;
        let labels = self.labels();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return fail("classifiers", &format!("duplicate label {l:?}; set distinct names"));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.classifiers.iter().map(ClassifierSpec::label).collect()
    }
}

/// Counts with row = true hypothesis, column = decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(size: usize) -> Self {
        ConfusionMatrix { counts: vec![vec![0; size]; size] }
    }

    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, decision: usize) {
        self.counts[truth][decision] += 1;
    }

    pub fn row_sum(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    /// `P(H_i | H_i)` for every hypothesis. Panics on an empty row.
    pub fn per_class(&self) -> Vec<f64> {
        (0..self.size())
            .map(|i| {
                let total = self.row_sum(i);
                assert!(total > 0, "confusion row {i} is empty");
                self.counts[i][i] as f64 / total as f64
            })
            .collect()
    }

    pub fn total(&self) -> u64 {
        (0..self.size()).map(|i| self.row_sum(i)).sum()
    }
}

/// Average probability of correct classification, `(1/S) Σ_i P(H_i|H_i)`.
pub fn pcc(matrix: &ConfusionMatrix) -> f64 {
    let per = matrix.per_class();
    per.iter().sum::<f64>() / per.len() as f64
}

/// One classifier's result on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOutcome {
    pub decision: Option<usize>,
    pub elapsed_ms: f64,
    pub error: Option<String>,
    pub gem_runs: usize,
    pub gem_iterations: usize,
    pub ascent_violations: usize,
    /// Largest single-iteration likelihood drop over all GEM runs (0 if none).
    pub worst_ascent_drop: f64,
    /// MAP symbol errors under the true hypothesis, for estimating classifiers.
    pub symbol_errors: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub true_format: usize,
    pub per_classifier: Vec<ClassifierOutcome>,
}

/// Slack allowed on per-iteration likelihood decreases.
pub const ASCENT_SLACK: f64 = 1e-6;

const OBSERVATION_STREAM: u64 = 0x6f62_7365_7276_6521;
const INIT_STREAM: u64 = 0x696e_6974_6961_6c21;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one trial's random stream.
pub fn trial_seed(master: u64, snr_index: usize, sensor_index: usize, trial: usize, format_index: usize) -> u64 {
    [snr_index, sensor_index, trial, format_index]
        .iter()
        .fold(splitmix(master ^ OBSERVATION_STREAM), |h, &v| splitmix(h ^ v as u64))
}

/// Everything a trial needs that does not depend on the trial.
struct Prepared {
    hypotheses: HypothesisSet,
    pulse: Arc<PulseSpec>,
}

impl Prepared {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        Ok(Prepared {
            hypotheses: build_hypothesis_set(&config.formats)?,
            pulse: Arc::new(rrc_pulse(config.rolloff, config.pulse_span, config.samples_per_symbol)?),
        })
    }
}

/// A synthesized multi-sensor observation with its ground truth.
pub struct TrialData {
    pub observation: ObservationSet,
    pub truth: ParamVector,
    pub symbols: SymbolSequence,
    pub scenario: ScenarioConfig,
}

/// Draws symbols, channels and noise for one trial from `seed`.
pub fn synthesize_trial(
    hypotheses: &HypothesisSet,
    pulse: &Arc<PulseSpec>,
    true_format: usize,
    scenario: ScenarioConfig,
    seed: u64,
) -> Result<TrialData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let constellation = hypotheses.get(true_format);
    let symbols = SymbolSequence::random(scenario.symbol_count, constellation.cardinality(), &mut rng);
    let truth = ParamVector::new(
        (0..scenario.sensor_count)
            .map(|_| draw_sensor_params(scenario.rayleigh_scale, &mut rng))
            .collect(),
    );
    let banks = truth
        .per_sensor
        .iter()
        .map(|p| {
            let wf = synthesize_received(&symbols, constellation, p, pulse, &scenario, &mut rng);
            MatchedFilterBank::new(wf, pulse.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialData {
        observation: ObservationSet::new(banks, scenario.noise_psd)?,
        truth,
        symbols,
        scenario,
    })
}

fn init_scheme(spec: &ClassifierSpec, config: &ExperimentConfig, data: &TrialData) -> InitScheme {
    match spec.init {
        InitSpec::Perturbed(deltas) => InitScheme::PerturbedTruth {
            truth: data.truth.clone(),
            deltas,
            amplitude_floor: config.gem.amplitude_floor,
        },
        InitSpec::SaUniform => {
            InitScheme::SimulatedAnnealing { config: config.sa, rayleigh_scale: data.scenario.rayleigh_scale }
        }
        InitSpec::SaNonuniform => InitScheme::SimulatedAnnealing {
            config: SaConfig {
                grid_points_amplitude: 5,
                grid_points_phase: 20,
                grid_points_timing: 10,
                ..config.sa
            },
            rayleigh_scale: data.scenario.rayleigh_scale,
        },
        InitSpec::Fixed => InitScheme::Fixed(data.truth.clone()),
    }
}

fn summarize(decision: Result<HmlDecision>, data: &TrialData, true_format: usize) -> ClassifierOutcome {
    let mut out = ClassifierOutcome {
        decision: None,
        elapsed_ms: 0.0,
        error: None,
        gem_runs: 0,
        gem_iterations: 0,
        ascent_violations: 0,
        worst_ascent_drop: 0.0,
        symbol_errors: None,
    };
    match decision {
        Ok(d) => {
            out.decision = Some(d.decision);
            for r in &d.per_hypothesis {
                out.gem_runs += 1;
                out.gem_iterations += r.iterations;
                out.ascent_violations += r.ascent_violations(ASCENT_SLACK);
                for w in r.likelihood_trace.windows(2) {
                    out.worst_ascent_drop = out.worst_ascent_drop.max(w[0] - w[1]);
                }
            }
            let decoded = map_decode(&d.per_hypothesis[true_format]);
            out.symbol_errors =
                Some(decoded.indices.iter().zip(&data.symbols.indices).filter(|(a, b)| a != b).count());
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

fn run_classifier(
    spec: &ClassifierSpec,
    config: &ExperimentConfig,
    prepared: &Prepared,
    data: &TrialData,
    true_format: usize,
    init_seed: u64,
) -> ClassifierOutcome {
    let obs = &data.observation;
    let hyps = &prepared.hypotheses;
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let init = init_scheme(spec, config, data);
    let start = Instant::now();
    let mut out = match spec.kind {
        ClassifierKind::Clairvoyant => {
            let decision = clairvoyant_classify(obs, &data.truth, hyps);
            summarize_plain(decision)
        }
        ClassifierKind::Gem => {
            let cfg = config.gem.to_config(GemVariant::Gem);
            summarize(classify_hml(obs, hyps, &init, &cfg, &mut rng), data, true_format)
        }
        ClassifierKind::EmJoint { theta_grid, epsilon_grid } => {
            let cfg = config.gem.to_config(GemVariant::EmJoint { theta_grid, epsilon_grid });
            summarize(classify_hml(obs, hyps, &init, &cfg, &mut rng), data, true_format)
        }
        ClassifierKind::ClairvoyantEm => {
            let cfg = config.gem.to_config(GemVariant::KnownEpsilon);
            let timings = data.truth.timings();
            summarize(clairvoyant_em_classify(obs, &timings, hyps, &init, &cfg, &mut rng), data, true_format)
        }
        ClassifierKind::ZeroOffsetEm => {
            let cfg = config.gem.to_config(GemVariant::KnownEpsilon);
            summarize(zero_offset_em_classify(obs, hyps, &init, &cfg, &mut rng), data, true_format)
        }
    };
    out.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    out
}

fn summarize_plain(decision: Result<usize>) -> ClassifierOutcome {
    ClassifierOutcome {
        decision: decision.as_ref().ok().copied(),
        elapsed_ms: 0.0,
        error: decision.err().map(|e| e.to_string()),
        gem_runs: 0,
        gem_iterations: 0,
        ascent_violations: 0,
        worst_ascent_drop: 0.0,
        symbol_errors: None,
    }
}

fn run_prepared_trial(
    config: &ExperimentConfig,
    prepared: &Prepared,
    snr_index: usize,
    sensor_index: usize,
    trial: usize,
    true_format: usize,
) -> Result<TrialOutcome> {
    let scenario = ScenarioConfig::from_snr_db(config.snr_db[snr_index], config.sensors[sensor_index], config.symbols);
    let seed = trial_seed(config.seed, snr_index, sensor_index, trial, true_format);
    let data = synthesize_trial(&prepared.hypotheses, &prepared.pulse, true_format, scenario, seed)?;
    let init_seed = splitmix(seed ^ INIT_STREAM);
    let per_classifier = config
        .classifiers
        .iter()
        .map(|spec| run_classifier(spec, config, prepared, &data, true_format, init_seed))
        .collect();
    Ok(TrialOutcome { true_format, per_classifier })
}

/// Runs every configured classifier on one synthesized trial.
/// `snr_index` and `sensor_index` index into the config's lists.
pub fn run_trial(
    config: &ExperimentConfig,
    snr_index: usize,
    sensor_index: usize,
    trial: usize,
    true_format: usize,
) -> Result<TrialOutcome> {
    config.validate()?;
    let prepared = Prepared::new(config)?;
    run_prepared_trial(config, &prepared, snr_index, sensor_index, trial, true_format)
}

/// Aggregated results for one (classifier, SNR, sensor count) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub classifier: String,
    pub snr_db: f64,
    pub sensors: usize,
    pub confusion: ConfusionMatrix,
    pub per_format: Vec<f64>,
    pub pcc: f64,
    pub mean_ms: f64,
    pub errors: usize,
    pub gem_runs: usize,
    pub gem_iterations: usize,
    pub ascent_violations: usize,
    pub worst_ascent_drop: f64,
    pub symbol_errors: usize,
    pub symbols_decoded: usize,
}

impl CellResult {
    pub fn symbol_error_rate(&self) -> Option<f64> {
        (self.symbols_decoded > 0).then(|| self.symbol_errors as f64 / self.symbols_decoded as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub formats: Vec<FormatId>,
    pub classifiers: Vec<String>,
    pub cells: Vec<CellResult>,
    pub error_log: Vec<String>,
}

impl ExperimentResult {
    pub fn cell(&self, classifier: &str, snr_db: f64, sensors: usize) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.classifier == classifier && c.snr_db == snr_db && c.sensors == sensors)
    }
}

/// Runs all cells × trials × true formats, in parallel across trials.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with_progress(config, |_, _| {})
}

/// As [`run_experiment`], calling `progress(done_cells, total_cells)` after each cell.
pub fn run_experiment_with_progress(
    config: &ExperimentConfig,
    mut progress: impl FnMut(usize, usize),
) -> Result<ExperimentResult> {
    config.validate()?;
    let prepared = Prepared::new(config)?;
    let s = config.formats.len();
    let labels = config.labels();
    let total_cells = config.snr_db.len() * config.sensors.len();
    let mut cells = Vec::new();
    let mut error_log = Vec::new();
    for (si, &snr) in config.snr_db.iter().enumerate() {
        for (li, &sensors) in config.sensors.iter().enumerate() {
            let work: Vec<(usize, usize)> =
                (0..config.trials).flat_map(|t| (0..s).map(move |f| (t, f))).collect();
            let outcomes = work
                .par_iter()
                .map(|&(t, f)| run_prepared_trial(config, &prepared, si, li, t, f))
                .collect::<Result<Vec<_>>>()?;
            for (ci, label) in labels.iter().enumerate() {
                let mut confusion = ConfusionMatrix::new(s);
                let mut cell = CellResult {
                    classifier: label.clone(),
                    snr_db: snr,
                    sensors,
                    confusion: ConfusionMatrix::new(s),
                    per_format: Vec::new(),
                    pcc: 0.0,
                    mean_ms: 0.0,
                    errors: 0,
                    gem_runs: 0,
                    gem_iterations: 0,
                    ascent_violations: 0,
                    worst_ascent_drop: 0.0,
                    symbol_errors: 0,
                    symbols_decoded: 0,
                };
                let mut elapsed = 0.0;
                for (o, &(t, _)) in outcomes.iter().zip(&work) {
                    let c = &o.per_classifier[ci];
                    elapsed += c.elapsed_ms;
                    match c.decision {
                        Some(d) => confusion.record(o.true_format, d),
                        None => {
                            cell.errors += 1;
                            error_log.push(format!(
                                "{label} snr={snr} L={sensors} trial={t} format={}: {}",
                                config.formats[o.true_format],
                                c.error.as_deref().unwrap_or("unknown error")
                            ));
                        }
                    }
                    cell.gem_runs += c.gem_runs;
                    cell.gem_iterations += c.gem_iterations;
                    cell.ascent_violations += c.ascent_violations;
                    cell.worst_ascent_drop = cell.worst_ascent_drop.max(c.worst_ascent_drop);
                    if let Some(e) = c.symbol_errors {
                        cell.symbol_errors += e;
                        cell.symbols_decoded += config.symbols;
                    }
                }
                if (0..s).all(|i| confusion.row_sum(i) > 0) {
                    cell.per_format = confusion.per_class();
                    cell.pcc = pcc(&confusion);
                } else {
                    cell.per_format = vec![f64::NAN; s];
                    cell.pcc = f64::NAN;
                }
                cell.confusion = confusion;
                cell.mean_ms = elapsed / outcomes.len() as f64;
                cells.push(cell);
            }
            progress(cells.len() / labels.len(), total_cells);
        }
    }
    Ok(ExperimentResult { formats: config.formats.clone(), classifiers: labels, cells, error_log })
}
