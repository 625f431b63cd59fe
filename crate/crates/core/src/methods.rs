//! Loss families compared by the benchmark.
//!
//! Every loss returns its value together with the analytic gradient with
//! respect to the raw head outputs, so the trainer never differentiates
//! numerically. Distribution families take K logits, the extended binary
//! families take K-1 threshold logits, regression takes one scalar.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabelSet;
use crate::predict::{self, Prediction};

#[derive(Debug, Error, PartialEq)]
pub enum MethodError {
    #[error("non-finite input")]
    NonFinite,
    #[error("label index {index} out of range for {k} labels")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown method family {0:?}")]
    UnknownFamily(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    CrossEntropy,
    Regression,
    OrCnn,
    Coral,
    Dldl,
    DldlV2,
    Sord,
    MeanVariance,
    Unimodal,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::CrossEntropy,
        Family::Regression,
        Family::OrCnn,
        Family::Coral,
        Family::Dldl,
        Family::DldlV2,
        Family::Sord,
        Family::MeanVariance,
        Family::Unimodal,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Family::CrossEntropy => "cross-entropy",
            Family::Regression => "regression",
            Family::OrCnn => "or-cnn",
            Family::Coral => "coral",
            Family::Dldl => "dldl",
            Family::DldlV2 => "dldl-v2",
            Family::Sord => "sord",
            Family::MeanVariance => "mean-variance",
            Family::Unimodal => "unimodal",
        }
    }

    /// Number of head outputs for `k` labels.
    pub fn head_size(self, k: usize) -> usize {
        match self {
            Family::Regression => 1,
            Family::OrCnn | Family::Coral => k.saturating_sub(1),
            _ => k,
        }
    }

    /// Whether the head models a posterior over labels.
    pub fn is_distribution(self) -> bool {
        !matches!(self, Family::Regression | Family::OrCnn | Family::Coral)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Family {
    type Err = MethodError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.token() == s)
            .ok_or_else(|| MethodError::UnknownFamily(s.to_string()))
    }
}

/// Which loss family to train with, plus its hyperparameters.
///
/// The defaults below are this toolkit's choices; the compared methods are
/// meant to be run in their stock configurations, which are not restated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub family: Family,
    /// Display name in reports; defaults to the family token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub lambda_expect: f64,
    #[serde(default = "default_lambda_mean")]
    pub lambda_mean: f64,
    #[serde(default = "default_lambda_var")]
    pub lambda_var: f64,
    #[serde(default = "one")]
    pub lambda_uni: f64,
}

fn one() -> f64 {
    1.0
}
fn default_lambda_mean() -> f64 {
    0.2
}
fn default_lambda_var() -> f64 {
    0.05
}

impl MethodConfig {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            name: None,
            sigma: 1.0,
            alpha: 1.0,
            lambda_expect: 1.0,
            lambda_mean: 0.2,
            lambda_var: 0.05,
            lambda_uni: 1.0,
        }
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.family.token().to_string())
    }

    pub fn validate(&self) -> Result<(), MethodError> {
        let positive = [("sigma", self.sigma), ("alpha", self.alpha)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MethodError::InvalidParameter(format!("{name} must be > 0")));
            }
        }
        let nonneg = [
            ("lambda_expect", self.lambda_expect),
            ("lambda_mean", self.lambda_mean),
            ("lambda_var", self.lambda_var),
            ("lambda_uni", self.lambda_uni),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(MethodError::InvalidParameter(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Probability vector aligned with a label set.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior(Vec<f64>);

impl Posterior {
    /// Wraps `probs`, checking nonnegativity and normalization within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self, MethodError> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(MethodError::InvalidParameter("probabilities must be finite and >= 0".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MethodError::InvalidParameter(format!("probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetOrigin {
    OneHot,
    Normal { sigma: f64 },
    DoubleExponential { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    pub probs: Vec<f64>,
    pub origin: TargetOrigin,
}

impl TargetDistribution {
    pub fn one_hot(index: usize, k: usize) -> Result<Self, MethodError> {
        check_index(index, k)?;
        let mut probs = vec![0.0; k];
        probs[index] = 1.0;
        Ok(Self { probs, origin: TargetOrigin::OneHot })
    }
}

/// Loss value and gradient with respect to the head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_index(index: usize, k: usize) -> Result<(), MethodError> {
    if index >= k {
        Err(MethodError::IndexOutOfRange { index, k })
    } else {
        Ok(())
    }
}

fn check_len(expected: usize, found: usize) -> Result<(), MethodError> {
    if expected != found {
        Err(MethodError::LengthMismatch { expected, found })
    } else {
        Ok(())
    }
}

fn check_finite(v: &[f64]) -> Result<(), MethodError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MethodError::NonFinite)
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Posterior, MethodError> {
    if logits.is_empty() {
        return Err(MethodError::InvalidParameter("empty logits".into()));
    }
    check_finite(logits)?;
    Ok(Posterior(softmax_raw(logits)))
}

fn softmax_raw(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Chain rule through softmax: `p_j (g_j - sum_k p_k g_k)`.
fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pj, gj)| pj * (gj - dot)).collect()
}

pub fn ce_loss(logits: &[f64], true_index: usize) -> Result<LossEval, MethodError> {
    check_index(true_index, logits.len())?;
    check_finite(logits)?;
    let value = log_sum_exp(logits) - logits[true_index];
    let mut grad = softmax_raw(logits);
    grad[true_index] -= 1.0;
    Ok(LossEval { value: value.max(0.0), grad })
}

/// Absolute error; the caller chooses the scale (the trainer uses ages
/// normalized to `[0, 1]`).
pub fn l1_regression_loss(output: f64, age: f64) -> Result<LossEval, MethodError> {
    check_finite(&[output, age])?;
    let d = output - age;
    let g = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    Ok(LossEval { value: d.abs(), grad: vec![g] })
}

/// Binary targets `t_k = [true_index > k]` for the K-1 thresholds.
pub fn ebc_encode(true_index: usize, k: usize) -> Result<Vec<f64>, MethodError> {
    if k < 2 {
        return Err(MethodError::InvalidParameter("need at least 2 labels".into()));
    }
    check_index(true_index, k)?;
    Ok((0..k - 1).map(|j| if true_index > j { 1.0 } else { 0.0 }).collect())
}

/// Sum of per-threshold binary cross-entropies on logits.
pub fn ebc_loss(head_logits: &[f64], targets: &[f64]) -> Result<LossEval, MethodError> {
    check_len(head_logits.len(), targets.len())?;
    check_finite(head_logits)?;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(head_logits.len());
    for (&z, &t) in head_logits.iter().zip(targets) {
        value += softplus(z) - t * z;
        grad.push(logistic(z) - t);
    }
    Ok(LossEval { value, grad })
}

/// Rank-consistent threshold probabilities `sigmoid(shared + b_k)`.
pub fn coral_scores(shared_score: f64, biases: &[f64]) -> Vec<f64> {
    biases.iter().map(|b| logistic(shared_score + b)).collect()
}

/// Gradient of the consistent-threshold loss with respect to the shared score
/// and the K-1 biases; `grad[0]` is the shared score.
pub fn coral_loss(shared_score: f64, biases: &[f64], targets: &[f64]) -> Result<LossEval, MethodError> {
    let z: Vec<f64> = biases.iter().map(|b| shared_score + b).collect();
    let inner = ebc_loss(&z, targets)?;
    let mut grad = Vec::with_capacity(biases.len() + 1);
    grad.push(inner.grad.iter().sum());
    grad.extend(inner.grad);
    Ok(LossEval { value: inner.value, grad })
}

fn normalize_weights(w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Discretized normal centered at the true label.
pub fn dldl_target(true_index: usize, labels: &LabelSet, sigma: f64) -> Result<TargetDistribution, MethodError> {
    check_index(true_index, labels.len())?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(MethodError::InvalidParameter("sigma must be > 0".into()));
    }
    let y = labels.values()[true_index] as f64;
    let w = labels
        .values()
        .iter()
        .map(|&v| {
            let d = v as f64 - y;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    Ok(TargetDistribution {
        probs: normalize_weights(w),
        origin: TargetOrigin::Normal { sigma },
    })
}

/// Discretized double exponential centered at the true label.
pub fn sord_target(true_index: usize, labels: &LabelSet, alpha: f64) -> Result<TargetDistribution, MethodError> {
    check_index(true_index, labels.len())?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(MethodError::InvalidParameter("alpha must be > 0".into()));
    }
    let y = labels.values()[true_index] as f64;
    let w = labels
        .values()
        .iter()
        .map(|&v| (-alpha * (v as f64 - y).abs()).exp())
        .collect();
    Ok(TargetDistribution {
        probs: normalize_weights(w),
        origin: TargetOrigin::DoubleExponential { alpha },
    })
}

/// Cross-entropy against a soft target.
pub fn soft_ce_loss(logits: &[f64], target: &TargetDistribution) -> Result<LossEval, MethodError> {
    check_len(logits.len(), target.probs.len())?;
    check_finite(logits)?;
    let lse = log_sum_exp(logits);
    let value: f64 = target
        .probs
        .iter()
        .zip(logits)
        .filter(|(q, _)| **q > 0.0)
        .map(|(q, z)| q * (lse - z))
        .sum();
    let p = softmax_raw(logits);
    let grad = p.iter().zip(&target.probs).map(|(p, q)| p - q).collect();
    Ok(LossEval { value: value.max(0.0), grad })
}

fn moments(p: &[f64], y: &[f64]) -> (f64, f64) {
    let e: f64 = p.iter().zip(y).map(|(p, y)| p * y).sum();
    let v: f64 = p.iter().zip(y).map(|(p, y)| p * (y - e) * (y - e)).sum();
    (e, v)
}

pub fn expectation(p: &Posterior, labels: &LabelSet) -> Result<f64, MethodError> {
    check_len(labels.len(), p.len())?;
    Ok(moments(p.probs(), &labels.as_f64()).0)
}

pub fn variance(p: &Posterior, labels: &LabelSet) -> Result<f64, MethodError> {
    check_len(labels.len(), p.len())?;
    Ok(moments(p.probs(), &labels.as_f64()).1)
}

/// Soft-target cross-entropy plus `lambda * |E_p[y] - true_age|`.
pub fn dldlv2_loss(
    logits: &[f64],
    target: &TargetDistribution,
    labels: &LabelSet,
    true_age: f64,
    lambda_expect: f64,
) -> Result<LossEval, MethodError> {
    check_len(labels.len(), logits.len())?;
    let mut eval = soft_ce_loss(logits, target)?;
    if lambda_expect == 0.0 {
        return Ok(eval);
    }
    let y = labels.as_f64();
    let p = softmax_raw(logits);
    let (e, _) = moments(&p, &y);
    let gap = e - true_age;
    eval.value += lambda_expect * gap.abs();
    let s = if gap > 0.0 {
        lambda_expect
    } else if gap < 0.0 {
        -lambda_expect
    } else {
        0.0
    };
    for ((g, pk), yk) in eval.grad.iter_mut().zip(&p).zip(&y) {
        *g += s * pk * (yk - e);
    }
    Ok(eval)
}

/// Cross-entropy plus `lambda_mean / 2 * (E - y)^2 + lambda_var * Var`.
pub fn meanvar_loss(
    logits: &[f64],
    true_index: usize,
    labels: &LabelSet,
    lambda_mean: f64,
    lambda_var: f64,
) -> Result<LossEval, MethodError> {
    check_len(labels.len(), logits.len())?;
    let mut eval = ce_loss(logits, true_index)?;
    let y = labels.as_f64();
    let p = softmax_raw(logits);
    let (e, var) = moments(&p, &y);
    let gap = e - y[true_index];
    eval.value += 0.5 * lambda_mean * gap * gap + lambda_var * var;
    for ((g, pk), yk) in eval.grad.iter_mut().zip(&p).zip(&y) {
        let d = yk - e;
        // dE/dz_j = p_j (y_j - E);  dVar/dz_j = p_j ((y_j - E)^2 - Var)
        *g += lambda_mean * gap * pk * d + lambda_var * pk * (d * d - var);
    }
    Ok(eval)
}

/// Hinge penalty on violations of unimodality around the true index.
fn unimodal_penalty(p: &[f64], t: usize) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut dp = vec![0.0; p.len()];
    for k in 0..p.len().saturating_sub(1) {
        // rising before the mode, falling from it on
        let (hi, lo) = if k < t { (k, k + 1) } else { (k + 1, k) };
        let v = p[hi] - p[lo];
        if v > 0.0 {
            value += v;
            dp[hi] += 1.0;
            dp[lo] -= 1.0;
        }
    }
    (value, dp)
}

/// Cross-entropy plus `lambda_uni` times the unimodality hinge penalty.
pub fn unimodal_loss(logits: &[f64], true_index: usize, lambda_uni: f64) -> Result<LossEval, MethodError> {
    let mut eval = ce_loss(logits, true_index)?;
    if lambda_uni == 0.0 {
        return Ok(eval);
    }
    let p = softmax_raw(logits);
    let (pen, dp) = unimodal_penalty(&p, true_index);
    eval.value += lambda_uni * pen;
    for (g, d) in eval.grad.iter_mut().zip(softmax_backward(&p, &dp)) {
        *g += lambda_uni * d;
    }
    Ok(eval)
}

/// A method configuration bound to a label set: the unit the trainer uses.
#[derive(Debug, Clone)]
pub struct Method {
    config: MethodConfig,
    labels: LabelSet,
    label_values: Vec<f64>,
}

impl Method {
    pub fn new(config: MethodConfig, labels: LabelSet) -> Result<Self, MethodError> {
        config.validate()?;
        if matches!(config.family, Family::OrCnn | Family::Coral) && labels.len() < 2 {
            return Err(MethodError::InvalidParameter(
                "threshold methods need at least 2 labels".into(),
            ));
        }
        let label_values = labels.as_f64();
        Ok(Self { config, labels, label_values })
    }

    pub fn config(&self) -> &MethodConfig {
        &self.config
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn head_size(&self) -> usize {
        self.config.family.head_size(self.labels.len())
    }

    /// Maps an age in years onto the regression scale `[0, 1]`.
    pub fn normalize_age(&self, age: f64) -> f64 {
        let span = (self.labels.max() - self.labels.min()).max(1) as f64;
        (age - self.labels.min() as f64) / span
    }

    /// Loss at head outputs `head` for the sample with label index `label_index`.
    /// CORAL heads arrive as the K-1 combined logits `shared + b_k`.
    pub fn loss(&self, head: &[f64], label_index: usize) -> Result<LossEval, MethodError> {
        check_len(self.head_size(), head.len())?;
        check_index(label_index, self.labels.len())?;
        let c = &self.config;
        match c.family {
            Family::CrossEntropy => ce_loss(head, label_index),
            Family::Regression => {
                let target = self.normalize_age(self.label_values[label_index]);
                l1_regression_loss(head[0], target)
            }
            Family::OrCnn | Family::Coral => ebc_loss(head, &ebc_encode(label_index, self.labels.len())?),
            Family::Dldl => soft_ce_loss(head, &dldl_target(label_index, &self.labels, c.sigma)?),
            Family::Sord => soft_ce_loss(head, &sord_target(label_index, &self.labels, c.alpha)?),
            Family::DldlV2 => dldlv2_loss(
                head,
                &dldl_target(label_index, &self.labels, c.sigma)?,
                &self.labels,
                self.label_values[label_index],
                c.lambda_expect,
            ),
            Family::MeanVariance => meanvar_loss(head, label_index, &self.labels, c.lambda_mean, c.lambda_var),
            Family::Unimodal => unimodal_loss(head, label_index, c.lambda_uni),
        }
    }

    /// Distance from `head` to the nearest point where the loss is not
    /// differentiable; infinite for smooth families.
    pub fn kink_distance(&self, head: &[f64], label_index: usize) -> f64 {
        match self.config.family {
            Family::Regression => {
                let target = self.normalize_age(self.label_values[label_index]);
                (head[0] - target).abs()
            }
            Family::DldlV2 if self.config.lambda_expect > 0.0 => {
                let (e, _) = moments(&softmax_raw(head), &self.label_values);
                (e - self.label_values[label_index]).abs()
            }
            Family::Unimodal if self.config.lambda_uni > 0.0 => softmax_raw(head)
                .windows(2)
                .map(|w| (w[0] - w[1]).abs())
                .fold(f64::INFINITY, f64::min),
            _ => f64::INFINITY,
        }
    }

    /// Turns head outputs into an age prediction with the family's decoder.
    pub fn decode(&self, head: &[f64]) -> Prediction {
        match self.config.family {
            Family::Regression => predict::regression_decode(head[0], &self.labels),
            Family::OrCnn | Family::Coral => {
                let probs: Vec<f64> = head.iter().map(|&z| logistic(z)).collect();
                predict::ebc_decode(&probs, &self.labels).expect("head size matches label set")
            }
            _ => {
                let p = Posterior(softmax_raw(head));
                predict::bayes_mae_predict(&p, &self.labels).expect("softmax output is normalized")
            }
        }
    }
}
