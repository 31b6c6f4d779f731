//! Model representation, forward pass, analytic gradients, and local SGD.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FlError, DIVERGENCE_LOSS_CAP};
use crate::scalar::Scalar;

/// Model architecture. The parameter vector is flat; layouts:
///
/// * `Linear { d }`: `[w_0..w_{d-1}, b]`, length `d + 1`.
/// * `Mlp { d, h }`: `[W1 (h rows of d), b1 (h), w2 (h), b2]`, tanh hidden
///   activation, length `(d + 1) * h + (h + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Linear { d: usize },
    Mlp { d: usize, h: usize },
}

impl Arch {
    pub fn input_dim(&self) -> usize {
        match *self {
            Arch::Linear { d } | Arch::Mlp { d, .. } => d,
        }
    }

    pub fn param_len(&self) -> usize {
        match *self {
            Arch::Linear { d } => d + 1,
            Arch::Mlp { d, h } => (d + 1) * h + (h + 1),
        }
    }

    fn describe(&self) -> String {
        match *self {
            Arch::Linear { d } => format!("linear(d={d})"),
            Arch::Mlp { d, h } => format!("mlp(d={d},h={h})"),
        }
    }
}

/// Flat parameter vector plus its architecture descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelState<T: Scalar> {
    pub arch: Arch,
    pub params: Vec<T>,
}

impl<T: Scalar> ModelState<T> {
    pub fn new(arch: Arch, params: Vec<T>) -> Result<Self, FlError> {
        if params.len() != arch.param_len() {
            return Err(FlError::DimensionMismatch {
                want: arch.param_len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(FlError::BadDataset("non-finite model parameter".into()));
        }
        Ok(ModelState { arch, params })
    }

    pub fn zeros(arch: Arch) -> Self {
        ModelState {
            arch,
            params: vec![T::zero(); arch.param_len()],
        }
    }

    /// Seeded init: each layer draws uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init(arch: Arch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.param_len());
        let fill = |n: usize, fan_in: usize, rng: &mut ChaCha8Rng| -> Vec<T> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n)
                .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect()
        };
        match arch {
            Arch::Linear { d } => {
                params.extend(fill(d + 1, d, &mut rng));
            }
            Arch::Mlp { d, h } => {
                params.extend(fill((d + 1) * h, d, &mut rng));
                params.extend(fill(h + 1, h, &mut rng));
            }
        }
        ModelState { arch, params }
    }

    pub fn check_same_arch(&self, other: &ModelState<T>) -> Result<(), FlError> {
        if self.arch != other.arch {
            return Err(FlError::ArchMismatch(
                self.arch.describe(),
                other.arch.describe(),
            ));
        }
        Ok(())
    }
}

/// One node's local regression data. Targets are effectiveness scores
/// in [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LocalDataset<T: Scalar> {
    pub inputs: Vec<Vec<T>>,
    pub targets: Vec<T>,
}

impl<T: Scalar> LocalDataset<T> {
    pub fn new(inputs: Vec<Vec<T>>, targets: Vec<T>) -> Result<Self, FlError> {
        let ds = LocalDataset { inputs, targets };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), FlError> {
        if self.inputs.is_empty() {
            return Err(FlError::BadDataset("dataset is empty".into()));
        }
        if self.inputs.len() != self.targets.len() {
            return Err(FlError::BadDataset(format!(
                "{} input rows but {} targets",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        let d = self.inputs[0].len();
        for row in &self.inputs {
            if row.len() != d {
                return Err(FlError::BadDataset("ragged input rows".into()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(FlError::BadDataset("non-finite input value".into()));
            }
        }
        if self.targets.iter().any(|v| !v.is_finite()) {
            return Err(FlError::BadDataset("non-finite target value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }
}

/// Local SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default = "TrainingConfig::default")]
pub struct TrainingConfig<T: Scalar> {
    /// Step size.
    pub eta: T,
    /// Local epochs per round.
    pub local_epochs: usize,
    /// Mini-batch size; clamped to the dataset size at use.
    pub batch: usize,
    /// Shuffling seed.
    pub seed: u64,
}

impl<T: Scalar> Default for TrainingConfig<T> {
    fn default() -> Self {
        TrainingConfig {
            eta: T::from_f64_lossy(0.01),
            local_epochs: 5,
            batch: 32,
            seed: 0,
        }
    }
}

impl<T: Scalar> TrainingConfig<T> {
    pub fn validate(&self) -> Result<(), FlError> {
        if !(self.eta > T::zero()) && self.eta != T::zero() {
            return Err(FlError::BadWeights(format!(
                "training.eta must be non-negative and finite, got {}",
                self.eta
            )));
        }
        if self.local_epochs == 0 {
            return Err(FlError::BadWeights("training.local_epochs must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(FlError::BadWeights("training.batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Forward pass for one input row.
pub fn predict<T: Scalar>(m: &ModelState<T>, x: &[T]) -> Result<T, FlError> {
    let d = m.arch.input_dim();
    if x.len() != d {
        return Err(FlError::DimensionMismatch {
            want: d,
            got: x.len(),
        });
    }
    Ok(forward(m, x))
}

fn forward<T: Scalar>(m: &ModelState<T>, x: &[T]) -> T {
    match m.arch {
        Arch::Linear { d } => {
            let mut acc = m.params[d]; // bias
            for j in 0..d {
                acc = acc + m.params[j] * x[j];
            }
            acc
        }
        Arch::Mlp { d, h } => {
            let (w1, rest) = m.params.split_at(d * h);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(h);
            let mut out = b2[0];
            for k in 0..h {
                let mut z = b1[k];
                let row = &w1[k * d..(k + 1) * d];
                for j in 0..d {
                    z = z + row[j] * x[j];
                }
                out = out + w2[k] * z.tanh();
            }
            out
        }
    }
}

/// Mean squared error of the model over a dataset.
pub fn local_loss<T: Scalar>(m: &ModelState<T>, d: &LocalDataset<T>) -> T {
    let mut acc = T::zero();
    for (x, &y) in d.inputs.iter().zip(&d.targets) {
        let e = forward(m, x) - y;
        acc = acc + e * e;
    }
    acc / T::from_usize(d.len()).unwrap()
}

/// Dataset-size-weighted mean of local losses; equals the pooled MSE over
/// the union of the datasets.
pub fn global_loss<T: Scalar>(m: &ModelState<T>, datasets: &[LocalDataset<T>]) -> T {
    assert!(!datasets.is_empty(), "global loss needs at least one dataset");
    let total: usize = datasets.iter().map(LocalDataset::len).sum();
    let mut acc = T::zero();
    for d in datasets {
        acc = acc + T::from_usize(d.len()).unwrap() * local_loss(m, d);
    }
    acc / T::from_usize(total).unwrap()
}

/// Mean gradient of the squared error over the given sample indices.
pub fn mse_gradient<T: Scalar>(
    m: &ModelState<T>,
    data: &LocalDataset<T>,
    batch: &[usize],
) -> Vec<T> {
    let mut grad = vec![T::zero(); m.params.len()];
    let scale = T::from_usize(batch.len()).unwrap();
    match m.arch {
        Arch::Linear { d } => {
            for &idx in batch {
                let x = &data.inputs[idx];
                let e = forward(m, x) - data.targets[idx];
                let c = (T::one() + T::one()) * e / scale;
                for j in 0..d {
                    grad[j] = grad[j] + c * x[j];
                }
                grad[d] = grad[d] + c;
            }
        }
        Arch::Mlp { d, h } => {
            let (w1, rest) = m.params.split_at(d * h);
            let (b1, rest) = rest.split_at(h);
            let (w2, _b2) = rest.split_at(h);
            let mut hidden = vec![T::zero(); h];
            for &idx in batch {
                let x = &data.inputs[idx];
                let mut out = m.params[d * h + h + h]; // b2
                for k in 0..h {
                    let mut z = b1[k];
                    let row = &w1[k * d..(k + 1) * d];
                    for j in 0..d {
                        z = z + row[j] * x[j];
                    }
                    hidden[k] = z.tanh();
                    out = out + w2[k] * hidden[k];
                }
                let e = out - data.targets[idx];
                let c = (T::one() + T::one()) * e / scale;
                for k in 0..h {
                    let a = hidden[k];
                    let dz = c * w2[k] * (T::one() - a * a);
                    let row = k * d;
                    for j in 0..d {
                        grad[row + j] = grad[row + j] + dz * x[j];
                    }
                    grad[d * h + k] = grad[d * h + k] + dz; // b1
                    grad[d * h + h + k] = grad[d * h + h + k] + c * a; // w2
                }
                let b2_idx = d * h + h + h;
                grad[b2_idx] = grad[b2_idx] + c;
            }
        }
    }
    grad
}

/// Mini-batch SGD on MSE with seeded shuffling. The input model is not
/// mutated; identical seeds give bitwise-identical results.
pub fn local_train<T: Scalar>(
    m: &ModelState<T>,
    d: &LocalDataset<T>,
    cfg: &TrainingConfig<T>,
) -> Result<ModelState<T>, FlError> {
    cfg.validate()?;
    d.validate()?;
    let n = d.len();
    let batch = cfg.batch.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = m.clone();
    let mut order: Vec<usize> = (0..n).collect();
    for _epoch in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let grad = mse_gradient(&model, d, chunk);
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p = *p - cfg.eta * *g;
            }
        }
        let loss = local_loss(&model, d).to_f64_lossy();
        if !loss.is_finite() || loss > DIVERGENCE_LOSS_CAP {
            return Err(FlError::NonFiniteLoss(loss));
        }
    }
    Ok(model)
}

/// Write a model as JSON `{arch, params}`.
pub fn save_checkpoint<T: Scalar, W: Write>(m: &ModelState<T>, w: W) -> Result<(), FlError> {
    serde_json::to_writer(w, m).map_err(|e| FlError::Checkpoint(e.to_string()))
}

/// Read a model from JSON `{arch, params}` and validate its shape.
pub fn load_checkpoint<T: Scalar, R: Read>(r: R) -> Result<ModelState<T>, FlError> {
    let m: ModelState<T> =
        serde_json::from_reader(r).map_err(|e| FlError::Checkpoint(e.to_string()))?;
    ModelState::new(m.arch, m.params)
}
