//! Perception-uncertainty entropy.
//!
//! Turns a fused object's per-category mean scores into a scalar entropy in
//! nats, applies a multiplicative penalty for detectors that missed the
//! object, and discretizes the result into three alert levels.
//!
//! All logarithms are natural: the shipped level thresholds (1.2 / 1.6 nats)
//! sit between a one-category-ambiguous score pattern (~0.69) and a
//! two-category-ambiguous one (~1.38 plus penalty) only in that base.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusedObject;

/// Scores exactly 0 or 1 are pulled this far inside (0, 1) before taking
/// logs; the entropy contributed at the clamp is below 3e-11 per category.
const SCORE_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("probability {value} at index {index} outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probability vector sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("expected {expected} categories, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("member count {d} exceeds ensemble size {t}")]
    TooManyMembers { d: usize, t: usize },
    #[error("entropy must be non-negative, got {0}")]
    NegativeEntropy(f64),
    #[error("invalid entropy config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyConfig {
    /// Ensemble size T.
    pub ensemble_size: usize,
    /// Category count C.
    pub categories: usize,
    /// Penalty factor f_p applied per missing detector.
    pub penalty_factor: f64,
    /// Level threshold between low and medium (nats).
    pub theta_low_medium: f64,
    /// Level threshold between medium and high (nats).
    pub theta_medium_high: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 5,
            categories: 11,
            penalty_factor: 0.1,
            theta_low_medium: 1.2,
            theta_medium_high: 1.6,
        }
    }
}

impl EntropyConfig {
    pub fn validate(&self) -> Result<(), EntropyError> {
        if self.ensemble_size < 1 {
            return Err(EntropyError::InvalidConfig("ensemble size must be >= 1".into()));
        }
        if self.categories < 1 {
            return Err(EntropyError::InvalidConfig("category count must be >= 1".into()));
        }
        if !(self.penalty_factor >= 0.0) {
            return Err(EntropyError::InvalidConfig("penalty factor must be >= 0".into()));
        }
        if !(0.0 < self.theta_low_medium && self.theta_low_medium < self.theta_medium_high) {
            return Err(EntropyError::InvalidConfig(
                "level thresholds must satisfy 0 < theta_lm < theta_mh".into(),
            ));
        }
        Ok(())
    }
}

/// Three-band uncertainty level derived from penalized entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntropyLevel {
    /// Normal operation.
    Low,
    /// Caution.
    Medium,
    /// Warning.
    High,
}

impl EntropyLevel {
    pub fn as_index(self) -> u8 {
        match self {
            EntropyLevel::Low => 0,
            EntropyLevel::Medium => 1,
            EntropyLevel::High => 2,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(EntropyLevel::Low),
            1 => Some(EntropyLevel::Medium),
            2 => Some(EntropyLevel::High),
            _ => None,
        }
    }
}

/// Shannon entropy of a categorical distribution, in nats, with the
/// continuity convention 0·ln 0 = 0.
pub fn shannon_entropy(p: &[f64]) -> Result<f64, EntropyError> {
    let mut sum = 0.0;
    for (index, &value) in p.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) || value.is_nan() {
            return Err(EntropyError::InvalidProbability { index, value });
        }
        sum += value;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(EntropyError::NotNormalized(sum));
    }
    Ok(p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum())
}

/// Sum of per-category binary entropies of independent logistic scores,
/// in nats. Ranges over [0, C·ln 2].
pub fn multi_label_entropy(mean_scores: &[f64], categories: usize) -> Result<f64, EntropyError> {
    if mean_scores.len() != categories {
        return Err(EntropyError::WrongLength {
            expected: categories,
            got: mean_scores.len(),
        });
    }
    let mut total = 0.0;
    for (index, &value) in mean_scores.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) || value.is_nan() {
            return Err(EntropyError::InvalidProbability { index, value });
        }
        let p = value.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
        total -= p * p.ln() + (1.0 - p) * (1.0 - p).ln();
    }
    Ok(total)
}

/// Multiplicative penalty for the `T - d` detectors that missed the object.
pub fn penalized_entropy(e_pe: f64, d: usize, cfg: &EntropyConfig) -> Result<f64, EntropyError> {
    if d > cfg.ensemble_size {
        return Err(EntropyError::TooManyMembers {
            d,
            t: cfg.ensemble_size,
        });
    }
    if e_pe < 0.0 {
        return Err(EntropyError::NegativeEntropy(e_pe));
    }
    let missing = (cfg.ensemble_size - d) as f64;
    Ok(e_pe * (1.0 + cfg.penalty_factor * missing))
}

/// Discretize penalized entropy into the three alert bands; both
/// thresholds are inclusive on their upper side.
pub fn entropy_level(e_pe_star: f64, cfg: &EntropyConfig) -> EntropyLevel {
    if e_pe_star < cfg.theta_low_medium {
        EntropyLevel::Low
    } else if e_pe_star < cfg.theta_medium_high {
        EntropyLevel::Medium
    } else {
        EntropyLevel::High
    }
}

/// Full uncertainty assessment of one fused object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub e_pe: f64,
    pub e_pe_star: f64,
    pub level: EntropyLevel,
    pub winning_label: usize,
    pub confidence: f64,
    pub d: usize,
}

/// Compute entropy, penalty, and level for a fused object.
pub fn assess(obj: &FusedObject, cfg: &EntropyConfig) -> Result<EntropyReport, EntropyError> {
    let e_pe = multi_label_entropy(&obj.mean_scores, cfg.categories)?;
    let e_pe_star = penalized_entropy(e_pe, obj.d, cfg)?;
    Ok(EntropyReport {
        e_pe,
        e_pe_star,
        level: entropy_level(e_pe_star, cfg),
        winning_label: obj.winning_label,
        confidence: obj.confidence,
        d: obj.d,
    })
}
