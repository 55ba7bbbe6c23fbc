//! Candidate symbol alphabets and the hypothesis set.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{AmcError, Result};

/// Supported linear modulation formats.
///
/// The string forms (`"8PSK"`, `"16QAM"`, ...) are used verbatim in
/// configuration files and result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FormatId {
    Bpsk,
    Qpsk,
    Psk8,
    Qam8,
    Psk16,
    Qam16,
}

impl FormatId {
    pub const ALL: [FormatId; 6] = [
        FormatId::Bpsk,
        FormatId::Qpsk,
        FormatId::Psk8,
        FormatId::Qam8,
        FormatId::Psk16,
        FormatId::Qam16,
    ];

    /// The four formats of the standard quaternary experiment.
    pub const QUATERNARY: [FormatId; 4] =
        [FormatId::Psk8, FormatId::Qam8, FormatId::Psk16, FormatId::Qam16];

    pub fn as_str(&self) -> &'static str {
        match self {
            FormatId::Bpsk => "BPSK",
            FormatId::Qpsk => "QPSK",
            FormatId::Psk8 => "8PSK",
            FormatId::Qam8 => "8QAM",
            FormatId::Psk16 => "16PSK",
            FormatId::Qam16 => "16QAM",
        }
    }
}

impl fmt::Display for FormatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FormatId {
    type Err = AmcError;

    fn from_str(s: &str) -> Result<Self> {
        FormatId::ALL
            .iter()
            .copied()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| AmcError::Config(format!("unsupported modulation format {s:?}")))
    }
}

impl TryFrom<String> for FormatId {
    type Error = AmcError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FormatId> for String {
    fn from(f: FormatId) -> String {
        f.as_str().to_string()
    }
}

/// A unit-mean-power symbol alphabet for one hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationSet {
    format: FormatId,
    symbols: Vec<Complex64>,
    energies: Vec<f64>,
}

impl ConstellationSet {
    /// Builds an alphabet from arbitrary points, rescaled to unit mean power.
    ///
    /// This is how an alternative geometry (for example another 8-QAM layout)
    /// can be swapped in under an existing format id.
    pub fn from_points(format: FormatId, points: &[Complex64]) -> Result<Self> {
        if points.is_empty() {
            return Err(AmcError::Config(format!("{format}: empty alphabet")));
        }
        let power = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64;
        if !(power.is_finite() && power > 0.0) {
            return Err(AmcError::Config(format!("{format}: alphabet has zero power")));
        }
        let scale = power.sqrt().recip();
        let symbols: Vec<Complex64> = points.iter().map(|p| p * scale).collect();
        for (i, a) in symbols.iter().enumerate() {
            for b in &symbols[i + 1..] {
                if (a - b).norm() < 1e-9 {
                    return Err(AmcError::Config(format!("{format}: repeated symbol {a}")));
                }
            }
        }
        let energies = symbols.iter().map(|s| s.norm_sqr()).collect();
        Ok(ConstellationSet { format, symbols, energies })
    }

    pub fn format(&self) -> FormatId {
        self.format
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    /// `|I^m|^2` for every symbol, in alphabet order.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn cardinality(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbol(&self, index: usize) -> Complex64 {
        self.symbols[index]
    }

    /// True when every symbol has the same magnitude (PSK-like).
    pub fn is_constant_modulus(&self) -> bool {
        let e0 = self.energies[0];
        self.energies.iter().all(|e| (e - e0).abs() < 1e-12)
    }
}

fn psk_points(m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64))
        .collect()
}

/// Cross 8-QAM: inner square at (±1, ±1), outer points on the axes at
/// radius 1 + √3, so every nearest-neighbour distance is 2.
fn qam8_points() -> Vec<Complex64> {
    let r = 1.0 + 3f64.sqrt();
    vec![
        Complex64::new(1.0, 1.0),
        Complex64::new(-1.0, 1.0),
        Complex64::new(-1.0, -1.0),
        Complex64::new(1.0, -1.0),
        Complex64::new(r, 0.0),
        Complex64::new(0.0, r),
        Complex64::new(-r, 0.0),
        Complex64::new(0.0, -r),
    ]
}

fn qam16_points() -> Vec<Complex64> {
    let levels = [-3.0, -1.0, 1.0, 3.0];
    levels
        .iter()
        .flat_map(|&i| levels.iter().map(move |&q| Complex64::new(i, q)))
        .collect()
}

pub fn build_constellation(format: FormatId) -> ConstellationSet {
    let points = match format {
        FormatId::Bpsk => psk_points(2),
        FormatId::Qpsk => psk_points(4),
        FormatId::Psk8 => psk_points(8),
        FormatId::Psk16 => psk_points(16),
        FormatId::Qam8 => qam8_points(),
        FormatId::Qam16 => qam16_points(),
    };
    ConstellationSet::from_points(format, &points).expect("built-in alphabets are valid")
}

/// Ordered set of candidate alphabets. Hypothesis index `i` everywhere
/// downstream refers to position `i` in this list.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    constellations: Vec<ConstellationSet>,
}

impl HypothesisSet {
    pub fn new(constellations: Vec<ConstellationSet>) -> Result<Self> {
        if constellations.is_empty() {
            return Err(AmcError::Config("hypothesis set is empty".into()));
        }
        for (i, c) in constellations.iter().enumerate() {
            if constellations[..i].iter().any(|o| o.format() == c.format()) {
                return Err(AmcError::Config(format!("duplicate format {}", c.format())));
            }
        }
        Ok(HypothesisSet { constellations })
    }

    pub fn count(&self) -> usize {
        self.constellations.len()
    }

    pub fn get(&self, index: usize) -> &ConstellationSet {
        &self.constellations[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConstellationSet> {
        self.constellations.iter()
    }

    pub fn formats(&self) -> Vec<FormatId> {
        self.constellations.iter().map(|c| c.format()).collect()
    }

    pub fn index_of(&self, format: FormatId) -> Option<usize> {
        self.constellations.iter().position(|c| c.format() == format)
    }
}

pub fn build_hypothesis_set(formats: &[FormatId]) -> Result<HypothesisSet> {
    HypothesisSet::new(formats.iter().map(|&f| build_constellation(f)).collect())
}
