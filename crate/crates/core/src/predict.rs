//! Decision layers turning head outputs into ages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabelSet;
use crate::methods::Posterior;

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("posterior is not normalized (sum {0})")]
    Unnormalized(f64),
    #[error("threshold probability outside [0, 1]")]
    InvalidProbability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub age: f64,
    pub label_index: Option<usize>,
}

impl Prediction {
    fn at(labels: &LabelSet, index: usize) -> Self {
        Self {
            age: labels.values()[index] as f64,
            label_index: Some(index),
        }
    }
}

/// Relative slack used by both the cumulative rule and the brute force
/// search when deciding ties.
const TIE_TOLERANCE: f64 = 1e-12;

fn check_posterior(p: &[f64], labels: &LabelSet) -> Result<f64, PredictError> {
    if p.len() != labels.len() {
        return Err(PredictError::LengthMismatch { expected: labels.len(), found: p.len() });
    }
    let total: f64 = p.iter().sum();
    if !total.is_finite() || (total - 1.0).abs() > 1e-9 || p.iter().any(|v| *v < 0.0) {
        return Err(PredictError::Unnormalized(total));
    }
    Ok(total)
}

/// MAE-optimal plug-in rule: the lower weighted median of the posterior,
/// i.e. the smallest label whose cumulative mass reaches one half.
pub fn bayes_mae_predict(p: &Posterior, labels: &LabelSet) -> Result<Prediction, PredictError> {
    let probs = p.probs();
    let total = check_posterior(probs, labels)?;
    let half = 0.5 * total;
    let mut cum = 0.0;
    for (k, &pk) in probs.iter().enumerate() {
        cum += pk;
        if cum >= half - TIE_TOLERANCE * total {
            return Ok(Prediction::at(labels, k));
        }
    }
    Ok(Prediction::at(labels, labels.len() - 1))
}

/// Evaluates the expected absolute error of every label and returns the
/// smallest minimizer. Quadratic in K; used as the reference for
/// [`bayes_mae_predict`].
pub fn brute_force_bayes(p: &Posterior, labels: &LabelSet) -> Result<Prediction, PredictError> {
    let probs = p.probs();
    check_posterior(probs, labels)?;
    let y = labels.as_f64();
    let risk: Vec<f64> = y
        .iter()
        .map(|&c| probs.iter().zip(&y).map(|(pk, yk)| pk * (c - yk).abs()).sum())
        .collect();
    let best = risk.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = TIE_TOLERANCE * (1.0 + best.abs());
    let index = risk.iter().position(|&r| r <= best + slack).expect("non-empty label set");
    Ok(Prediction::at(labels, index))
}

/// Posterior mean. A diagnostic only; the benchmark decodes with the median.
pub fn expected_age(p: &Posterior, labels: &LabelSet) -> Result<f64, PredictError> {
    check_posterior(p.probs(), labels)?;
    Ok(p.probs().iter().zip(labels.values()).map(|(pk, &y)| pk * y as f64).sum())
}

/// Counts thresholds with probability above one half and returns that label.
pub fn ebc_decode(threshold_probs: &[f64], labels: &LabelSet) -> Result<Prediction, PredictError> {
    if threshold_probs.len() + 1 != labels.len() {
        return Err(PredictError::LengthMismatch {
            expected: labels.len().saturating_sub(1),
            found: threshold_probs.len(),
        });
    }
    if threshold_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(PredictError::InvalidProbability);
    }
    let index = threshold_probs.iter().filter(|&&p| p > 0.5).count();
    Ok(Prediction::at(labels, index))
}

/// Maps a normalized regression output back to years, clamped to the label range.
pub fn regression_decode(raw: f64, labels: &LabelSet) -> Prediction {
    let (lo, hi) = (labels.min() as f64, labels.max() as f64);
    let span = (hi - lo).max(1.0);
    let age = if raw.is_nan() { lo } else { (lo + raw * span).clamp(lo, hi) };
    Prediction { age, label_index: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(v: &[f64]) -> Posterior {
        Posterior::new(v.to_vec()).unwrap()
    }

    #[test]
    fn bayes_examples() {
        let l = LabelSet::range(0, 2).unwrap();
        let p = post(&[0.2, 0.5, 0.3]);
        assert_eq!(bayes_mae_predict(&p, &l).unwrap().age, 1.0);
        assert_eq!(brute_force_bayes(&p, &l).unwrap().age, 1.0);
        assert_eq!(bayes_mae_predict(&post(&[0.0, 0.0, 1.0]), &l).unwrap().label_index, Some(2));

        let l2 = LabelSet::new(vec![10, 20]).unwrap();
        assert_eq!(bayes_mae_predict(&post(&[0.5, 0.5]), &l2).unwrap().age, 10.0);
        assert_eq!(brute_force_bayes(&post(&[0.5, 0.5]), &l2).unwrap().age, 10.0);

        let l5 = LabelSet::range(0, 4).unwrap();
        assert_eq!(brute_force_bayes(&post(&[0.2; 5]), &l5).unwrap().age, 2.0);
        assert_eq!(brute_force_bayes(&post(&[1.0, 0.0, 0.0, 0.0, 0.0]), &l5).unwrap().age, 0.0);
    }

    #[test]
    fn bayes_rejects_wrong_length() {
        let l = LabelSet::range(0, 3).unwrap();
        assert!(bayes_mae_predict(&post(&[0.5, 0.5]), &l).is_err());
    }

    #[test]
    fn ebc_decode_rules() {
        let l = LabelSet::range(0, 3).unwrap();
        assert_eq!(ebc_decode(&[0.9, 0.8, 0.3], &l).unwrap().age, 2.0);
        assert_eq!(ebc_decode(&[0.0; 3], &l).unwrap().age, 0.0);
        assert_eq!(ebc_decode(&[1.0; 3], &l).unwrap().age, 3.0);
        // exactly one half does not count
        assert_eq!(ebc_decode(&[0.5, 0.5, 0.5], &l).unwrap().age, 0.0);
        assert!(ebc_decode(&[0.2], &l).is_err());
    }

    #[test]
    fn regression_decode_clamps() {
        let l = LabelSet::range(0, 100).unwrap();
        assert_eq!(regression_decode(0.5, &l).age, 50.0);
        assert_eq!(regression_decode(-0.2, &l).age, 0.0);
        let l = LabelSet::range(20, 60).unwrap();
        assert_eq!(regression_decode(1.3, &l).age, 60.0);
        assert_eq!(regression_decode(1.3, &l).label_index, None);
    }

    #[test]
    fn expected_age_is_mean() {
        let l = LabelSet::new(vec![0, 2]).unwrap();
        assert_eq!(expected_age(&post(&[0.5, 0.5]), &l).unwrap(), 1.0);
    }
}
