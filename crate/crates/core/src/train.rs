//! Desk-scale trainer: a ReLU MLP with a method-specific head, mini-batch
//! Adam, and per-epoch model selection on validation MAE.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DatasetTable;
use crate::methods::{Family, Method, MethodError};
use crate::par::Parallelism;
use crate::split::TrainValFolds;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} fold is empty")]
    EmptyFold(&'static str),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("dimension mismatch: model expects {expected} inputs, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sample age {0} is not in the method's label set")]
    UnknownLabel(i64),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error(transparent)]
    Method(#[from] MethodError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Fully connected layer, weights stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.random_range(-bound..=bound)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
            ..*self
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
        }));
    }

    /// Accumulates parameter gradients into `grad` and writes the input
    /// gradient to `dx` when requested.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut Vec<f64>>) {
        for (o, &d) in dy.iter().enumerate() {
            grad.bias[o] += d;
            let row = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += d * xi;
            }
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(self.inputs, 0.0);
            for (row, &d) in self.weights.chunks_exact(self.inputs).zip(dy) {
                for (acc, w) in dx.iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
        }
    }
}

/// Output layer. The consistent-threshold head shares one projection across
/// all thresholds and adds a bias per threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Head {
    Linear(Dense),
    Coral { inputs: usize, weights: Vec<f64>, biases: Vec<f64> },
}

/// Shape of a head to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSpec {
    Linear(usize),
    Coral(usize),
}

impl HeadSpec {
    pub fn for_method(method: &Method) -> Self {
        match method.family() {
            Family::Coral => HeadSpec::Coral(method.head_size()),
            _ => HeadSpec::Linear(method.head_size()),
        }
    }

    pub fn outputs(self) -> usize {
        match self {
            HeadSpec::Linear(n) | HeadSpec::Coral(n) => n,
        }
    }
}

impl From<usize> for HeadSpec {
    fn from(n: usize) -> Self {
        HeadSpec::Linear(n)
    }
}

impl Head {
    fn init(inputs: usize, spec: HeadSpec, rng: &mut ChaCha8Rng) -> Self {
        match spec {
            HeadSpec::Linear(n) => Head::Linear(Dense::init(inputs, n, rng)),
            HeadSpec::Coral(n) => {
                let bound = 1.0 / (inputs as f64).sqrt();
                Head::Coral {
                    inputs,
                    weights: (0..inputs).map(|_| rng.random_range(-bound..=bound)).collect(),
                    biases: vec![0.0; n],
                }
            }
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            Head::Linear(d) => Head::Linear(d.zeros_like()),
            Head::Coral { inputs, weights, biases } => Head::Coral {
                inputs: *inputs,
                weights: vec![0.0; weights.len()],
                biases: vec![0.0; biases.len()],
            },
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            Head::Linear(d) => d.inputs,
            Head::Coral { inputs, .. } => *inputs,
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            Head::Linear(d) => d.outputs,
            Head::Coral { biases, .. } => biases.len(),
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        match self {
            Head::Linear(d) => d.apply(x, out),
            Head::Coral { weights, biases, .. } => {
                let s: f64 = weights.iter().zip(x).map(|(w, xi)| w * xi).sum();
                out.clear();
                out.extend(biases.iter().map(|b| s + b));
            }
        }
    }

    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Head, dx: &mut Vec<f64>) {
        match (self, grad) {
            (Head::Linear(d), Head::Linear(g)) => d.backward(x, dy, g, Some(dx)),
            (Head::Coral { weights, .. }, Head::Coral { weights: gw, biases: gb, .. }) => {
                let ds: f64 = dy.iter().sum();
                for (g, d) in gb.iter_mut().zip(dy) {
                    *g += d;
                }
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g += ds * xi;
                }
                dx.clear();
                dx.extend(weights.iter().map(|w| ds * w));
            }
            _ => unreachable!("gradient buffer shaped like the model"),
        }
    }

    fn slices(&self) -> [&[f64]; 2] {
        match self {
            Head::Linear(d) => [&d.weights, &d.bias],
            Head::Coral { weights, biases, .. } => [weights, biases],
        }
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        match self {
            Head::Linear(d) => [&mut d.weights, &mut d.bias],
            Head::Coral { weights, biases, .. } => [weights, biases],
        }
    }
}

/// Affine -> ReLU chain followed by a head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden: Vec<Dense>,
    pub head: Head,
}

/// Per-sample activations kept for the backward pass.
struct Tape {
    /// Input followed by each hidden layer's post-ReLU output.
    acts: Vec<Vec<f64>>,
    out: Vec<f64>,
}

/// Scaled-uniform weights (bound `1/sqrt(fan_in)`) and zero biases.
pub fn init_model(dimension: usize, hidden_dims: &[usize], head: impl Into<HeadSpec>, seed: u64) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hidden = Vec::with_capacity(hidden_dims.len());
    let mut prev = dimension;
    for &h in hidden_dims {
        hidden.push(Dense::init(prev, h, &mut rng));
        prev = h;
    }
    MlpModel {
        input_dim: dimension,
        hidden,
        head: Head::init(prev, head.into(), &mut rng),
    }
}

/// Replaces the output layer, keeping the hidden layers untouched.
pub fn reset_head(model: &MlpModel, head: impl Into<HeadSpec>, seed: u64) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MlpModel {
        input_dim: model.input_dim,
        hidden: model.hidden.clone(),
        head: Head::init(model.head.inputs(), head.into(), &mut rng),
    }
}

impl MlpModel {
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(self.hidden.iter().map(|d| d.outputs));
        dims.push(self.head.outputs());
        dims
    }

    pub fn head_size(&self) -> usize {
        self.head.outputs()
    }

    /// Parameter count per layer, head last.
    pub fn parameter_counts(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.hidden.iter().map(|d| d.weights.len() + d.bias.len()).collect();
        c.push(self.head.slices().iter().map(|s| s.len()).sum());
        c
    }

    fn zeros_like(&self) -> Self {
        Self {
            input_dim: self.input_dim,
            hidden: self.hidden.iter().map(Dense::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }

    /// All parameter blocks in a fixed order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for d in &self.hidden {
            v.push(&d.weights);
            v.push(&d.bias);
        }
        v.extend(self.head.slices());
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for d in &mut self.hidden {
            v.push(&mut d.weights);
            v.push(&mut d.bias);
        }
        v.extend(self.head.slices_mut());
        v
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let mut prev = self.input_dim;
        if prev == 0 {
            return Err(TrainError::InvalidCheckpoint("input dimension is zero".into()));
        }
        for (i, d) in self.hidden.iter().enumerate() {
            if d.inputs != prev || d.weights.len() != d.inputs * d.outputs || d.bias.len() != d.outputs || d.outputs == 0 {
                return Err(TrainError::InvalidCheckpoint(format!("hidden layer {i} has inconsistent shape")));
            }
            prev = d.outputs;
        }
        let head_ok = match &self.head {
            Head::Linear(d) => d.inputs == prev && d.weights.len() == d.inputs * d.outputs && d.bias.len() == d.outputs,
            Head::Coral { inputs, weights, .. } => *inputs == prev && weights.len() == prev,
        };
        if !head_ok {
            return Err(TrainError::InvalidCheckpoint("head has inconsistent shape".into()));
        }
        if self.param_slices().iter().flat_map(|s| s.iter()).any(|v| !v.is_finite()) {
            return Err(TrainError::InvalidCheckpoint("non-finite parameter".into()));
        }
        Ok(())
    }

    fn run(&self, features: &[f64]) -> Tape {
        let mut acts = Vec::with_capacity(self.hidden.len() + 1);
        acts.push(features.to_vec());
        for d in &self.hidden {
            let mut h = Vec::with_capacity(d.outputs);
            d.apply(acts.last().expect("input present"), &mut h);
            for v in &mut h {
                *v = v.max(0.0);
            }
            acts.push(h);
        }
        let mut out = Vec::with_capacity(self.head.outputs());
        self.head.apply(acts.last().expect("input present"), &mut out);
        Tape { acts, out }
    }

    /// Raw head outputs (logits or the regression scalar).
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>, TrainError> {
        if features.len() != self.input_dim {
            return Err(TrainError::DimensionMismatch { expected: self.input_dim, found: features.len() });
        }
        Ok(self.run(features).out)
    }

    /// Backpropagates `d_out` (gradient w.r.t. head outputs) and accumulates
    /// parameter gradients into `grad`.
    fn backward(&self, tape: &Tape, d_out: &[f64], grad: &mut MlpModel) {
        let n_hidden = self.hidden.len();
        let mut delta = Vec::new();
        self.head.backward(&tape.acts[n_hidden], d_out, &mut grad.head, &mut delta);
        let mut next = Vec::new();
        for l in (0..n_hidden).rev() {
            // ReLU gate: post-activation zero means the unit was inactive
            for (d, a) in delta.iter_mut().zip(&tape.acts[l + 1]) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            let dx = if l > 0 { Some(&mut next) } else { None };
            self.hidden[l].backward(&tape.acts[l], &delta, &mut grad.hidden[l], dx);
            std::mem::swap(&mut delta, &mut next);
        }
    }

    /// Loss and gradient of `method`'s loss at one sample, w.r.t. every parameter.
    pub fn loss_and_grad(&self, method: &Method, features: &[f64], label_index: usize) -> Result<(f64, MlpModel), TrainError> {
        if features.len() != self.input_dim {
            return Err(TrainError::DimensionMismatch { expected: self.input_dim, found: features.len() });
        }
        let tape = self.run(features);
        let eval = method.loss(&tape.out, label_index)?;
        let mut grad = self.zeros_like();
        self.backward(&tape, &eval.grad, &mut grad);
        Ok((eval.value, grad))
    }

    /// Smallest absolute hidden pre-activation at `features`; how close the
    /// input sits to a ReLU kink.
    pub fn relu_margin(&self, features: &[f64]) -> f64 {
        let mut x = features.to_vec();
        let mut margin = f64::INFINITY;
        let mut h = Vec::new();
        for d in &self.hidden {
            d.apply(&x, &mut h);
            margin = h.iter().fold(margin, |m, v| m.min(v.abs()));
            x = h.iter().map(|v| v.max(0.0)).collect();
        }
        margin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            hidden_dims: vec![64, 64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("betas must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1");
        }
        if self.hidden_dims.contains(&0) {
            return bad("hidden dims must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRun {
    pub best_model: MlpModel,
    pub history: Vec<EpochStats>,
    /// 1-based epoch whose snapshot is `best_model`.
    pub selected_epoch: usize,
}

impl TrainedRun {
    pub fn best_val_mae(&self) -> f64 {
        self.history[self.selected_epoch - 1].val_mae
    }
}

struct Adam {
    m: MlpModel,
    v: MlpModel,
    step: i32,
}

impl Adam {
    fn new(model: &MlpModel) -> Self {
        Self { m: model.zeros_like(), v: model.zeros_like(), step: 0 }
    }

    fn update(&mut self, model: &mut MlpModel, grad: &MlpModel, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let params = model.param_slices_mut();
        let ms = self.m.param_slices_mut();
        let vs = self.v.param_slices_mut();
        for (((p, m), v), g) in params.into_iter().zip(ms).zip(vs).zip(grad.param_slices()) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

fn add_scaled(acc: &mut MlpModel, g: &MlpModel, scale: f64) {
    for (a, b) in acc.param_slices_mut().into_iter().zip(g.param_slices()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += scale * y;
        }
    }
}

/// Trains on `folds.train`, selecting the epoch with the lowest validation
/// MAE (first on ties). The trainer only sees train and validation rows.
pub fn train(table: &DatasetTable, folds: &TrainValFolds, method: &Method, cfg: &TrainConfig) -> Result<TrainedRun, TrainError> {
    cfg.validate()?;
    if folds.train.is_empty() {
        return Err(TrainError::EmptyFold("train"));
    }
    if folds.val.is_empty() {
        return Err(TrainError::EmptyFold("val"));
    }
    let labels = method.labels();
    let samples = table.samples();
    let targets: Vec<usize> = folds
        .train
        .iter()
        .map(|&r| labels.index_of(samples[r].age).ok_or(TrainError::UnknownLabel(samples[r].age)))
        .collect::<Result<_, _>>()?;

    let mut model = init_model(table.dimension(), &cfg.hidden_dims, HeadSpec::for_method(method), cfg.seed);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..folds.train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, MlpModel)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = model.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (loss, g) = match model.loss_and_grad(method, &samples[folds.train[i]].features, targets[i]) {
                    Err(TrainError::Method(MethodError::NonFinite)) => return Err(TrainError::Diverged { epoch }),
                    other => other?,
                };
                if !loss.is_finite() {
                    return Err(TrainError::Diverged { epoch });
                }
                loss_sum += loss;
                add_scaled(&mut grad, &g, scale);
            }
            adam.update(&mut model, &grad, cfg);
        }
        let train_loss = loss_sum / folds.train.len() as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        let val_mae = evaluate_mae(&model, table, &folds.val, method, Parallelism::Sequential)?;
        if !val_mae.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        history.push(EpochStats { epoch, train_loss, val_mae });
        if best.as_ref().is_none_or(|(b, _, _)| val_mae < *b) {
            best = Some((val_mae, epoch, model.clone()));
        }
    }
    let (_, selected_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainedRun { best_model, history, selected_epoch })
}

/// Mean absolute error in years over `rows` using the method's decoder.
pub fn evaluate_mae(model: &MlpModel, table: &DatasetTable, rows: &[usize], method: &Method, par: Parallelism) -> Result<f64, TrainError> {
    if rows.is_empty() {
        return Err(TrainError::EmptyFold("evaluation"));
    }
    let errors = par.map_slice(rows, |&r| -> Result<f64, TrainError> {
        let s = &table.samples()[r];
        let head = model.forward(&s.features)?;
        Ok((method.decode(&head).age - s.age as f64).abs())
    });
    let mut total = 0.0;
    for e in errors {
        total += e?;
    }
    Ok(total / rows.len() as f64)
}

const CHECKPOINT_FORMAT: &str = "ordibench-mlp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    model: MlpModel,
}

/// Writes a JSON checkpoint: `{format, version, layer_dims, model}`.
pub fn save_checkpoint(model: &MlpModel, path: impl AsRef<Path>) -> Result<(), TrainError> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        layer_dims: model.layer_dims(),
        model: model.clone(),
    };
    fs::write(path, serde_json::to_string(&ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpModel, TrainError> {
    let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(TrainError::InvalidCheckpoint(format!("unsupported format {} v{}", ck.format, ck.version)));
    }
    ck.model.validate()?;
    if ck.model.layer_dims() != ck.layer_dims {
        return Err(TrainError::InvalidCheckpoint("layer_dims disagree with parameters".into()));
    }
    Ok(ck.model)
}
