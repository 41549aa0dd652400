//! Per-pixel uncertainty scorers. Every scorer maps a prediction to an
//! [`UncMap`] where larger means more uncertain.
//!
//! Entropies are in nats. Probabilities are clamped to `[EPS, 1 - EPS]`
//! before taking logs so exact 0/1 never produce NaN.

use std::fmt;
use std::str::FromStr;

use crate::domain::{MCProbStack, ProbMap};
use crate::error::{Error, Result};

/// Clamp applied to probabilities before logarithms.
pub const PROB_EPS: f64 = 1e-12;

/// Negative BALD values of at most this magnitude are floating-point noise
/// and clamped to zero; anything more negative is a bug.
pub const BALD_NOISE_FLOOR: f64 = 1e-12;

/// Non-negative per-pixel uncertainty scores for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct UncMap {
    height: usize,
    width: usize,
    scores: Vec<f64>,
}

impl UncMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || scores.len() != height * width {
            return Err(Error::InvalidUncMap(format!(
                "{} scores for {height}x{width}",
                scores.len()
            )));
        }
        for (i, &v) in scores.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidUncMap(format!(
                    "score at pixel {i} is {v}, expected a finite non-negative value"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            scores,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn len(&self) -> usize {
        self.scores.len()
    }
    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }
}

/// The five uncertainty scorers compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScorerKind {
    Entropy,
    LeastConfidence,
    Margin,
    McDropoutEntropy,
    Bald,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 5] = [
        ScorerKind::Entropy,
        ScorerKind::LeastConfidence,
        ScorerKind::Margin,
        ScorerKind::McDropoutEntropy,
        ScorerKind::Bald,
    ];

    /// MC scorers consume an [`MCProbStack`]; the rest consume one [`ProbMap`].
    pub fn needs_mc(self) -> bool {
        matches!(self, ScorerKind::McDropoutEntropy | ScorerKind::Bald)
    }

    /// Scores `pred`, or `None` when the prediction kind does not match.
    pub fn score(self, pred: &Prediction) -> Option<UncMap> {
        match (self, pred) {
            (ScorerKind::Entropy, Prediction::Single(m)) => Some(entropy_map(m)),
            (ScorerKind::LeastConfidence, Prediction::Single(m)) => Some(least_confidence_map(m)),
            (ScorerKind::Margin, Prediction::Single(m)) => Some(margin_map(m)),
            (ScorerKind::McDropoutEntropy, Prediction::Stack(s)) => Some(mc_entropy_map(s)),
            (ScorerKind::Bald, Prediction::Stack(s)) => Some(bald_map(s)),
            _ => None,
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScorerKind::Entropy => "entropy",
            ScorerKind::LeastConfidence => "least-confidence",
            ScorerKind::Margin => "margin",
            ScorerKind::McDropoutEntropy => "mc-dropout",
            ScorerKind::Bald => "bald",
        };
        f.write_str(s)
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(ScorerKind::Entropy),
            "least-confidence" => Ok(ScorerKind::LeastConfidence),
            "margin" => Ok(ScorerKind::Margin),
            "mc-dropout" => Ok(ScorerKind::McDropoutEntropy),
            "bald" => Ok(ScorerKind::Bald),
            _ => Err(Error::UnknownStrategy {
                name: s.to_string(),
                valid: "entropy, least-confidence, margin, mc-dropout, bald".to_string(),
            }),
        }
    }
}

/// A model's prediction for one sample, in the form a scorer needs.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Single(ProbMap),
    Stack(MCProbStack),
}

impl Prediction {
    /// The probability map the selection filters read: the raw map for a
    /// single pass, the MC mean for a stack.
    pub fn filter_map(&self) -> ProbMap {
        match self {
            Prediction::Single(m) => m.clone(),
            Prediction::Stack(s) => mc_mean(s),
        }
    }
}

/// Binary entropy in nats with the 0 ln 0 = 0 convention.
#[inline]
pub fn binary_entropy(p: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let q = 1.0 - p;
    -(p * p.ln() + q * q.ln())
}

fn map_probs(m: &ProbMap, f: impl Fn(f64) -> f64) -> UncMap {
    let scores = m.as_slice().iter().map(|&p| f(p)).collect();
    UncMap::new(m.height(), m.width(), scores).expect("scorer produced invalid scores")
}

/// H(p) per pixel.
pub fn entropy_map(m: &ProbMap) -> UncMap {
    map_probs(m, binary_entropy)
}

/// 1 - max(p, 1-p) per pixel; range [0, 0.5].
pub fn least_confidence_map(m: &ProbMap) -> UncMap {
    map_probs(m, |p| 1.0 - p.max(1.0 - p))
}

/// One minus the margin between the two class probabilities, so larger
/// means more uncertain; range [0, 1].
pub fn margin_map(m: &ProbMap) -> UncMap {
    map_probs(m, |p| 1.0 - (2.0 * p - 1.0).abs())
}

/// Pixelwise mean over the stack's passes.
pub fn mc_mean(s: &MCProbStack) -> ProbMap {
    let n = s.passes().len() as f64;
    let len = s.passes()[0].len();
    let mut acc = vec![0.0f64; len];
    for pass in s.passes() {
        for (a, &p) in acc.iter_mut().zip(pass.as_slice()) {
            *a += p;
        }
    }
    for a in acc.iter_mut() {
        *a = (*a / n).clamp(0.0, 1.0);
    }
    ProbMap::new(s.height(), s.width(), acc).expect("mean of valid maps is valid")
}

/// Predictive entropy of the MC mean, H(p-bar), per pixel.
pub fn mc_entropy_map(s: &MCProbStack) -> UncMap {
    entropy_map(&mc_mean(s))
}

/// Mutual information per pixel: H(p-bar) minus the mean per-pass entropy.
pub fn bald_map(s: &MCProbStack) -> UncMap {
    let n = s.passes().len() as f64;
    let mean = mc_mean(s);
    let len = mean.len();
    let mut expected_h = vec![0.0f64; len];
    for pass in s.passes() {
        for (a, &p) in expected_h.iter_mut().zip(pass.as_slice()) {
            *a += binary_entropy(p);
        }
    }
    let scores: Vec<f64> = mean
        .as_slice()
        .iter()
        .zip(&expected_h)
        .map(|(&p, &eh)| {
            let i = binary_entropy(p) - eh / n;
            assert!(
                i >= -BALD_NOISE_FLOOR,
                "BALD mutual information {i} below noise floor at a pixel"
            );
            i.max(0.0)
        })
        .collect();
    UncMap::new(mean.height(), mean.width(), scores).expect("scorer produced invalid scores")
}
