//! Model, loss, and dataset primitives.
//!
//! A small configurable MLP with softmax cross-entropy stands in for the
//! full-scale CNNs: it keeps the loss non-convex while staying cheap enough
//! to simulate hundreds of federated rounds on one machine. The parameter
//! count reported by [`Architecture::param_count`] is the single source of
//! truth for the model dimension `d` used everywhere downstream.

mod data;
mod mlp;

pub use data::{generate_federated, load_csv, DataSpec, FederatedDataset, Sample};
pub use mlp::{accuracy, gradient, loss, loss_and_gradient};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("empty sample set")]
    EmptySampleSet,
    #[error("label {label} out of range (label_count {label_count})")]
    LabelOutOfRange { label: usize, label_count: usize },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    FeatureDimMismatch { expected: usize, got: usize },
    #[error("parameter vector length {got} does not match architecture d={expected}")]
    ParamLengthMismatch { expected: usize, got: usize },
    #[error("invalid dataset config: {0}")]
    InvalidDataConfig(String),
    #[error("batch size {batch} exceeds dataset size {available}")]
    BatchTooLarge { batch: usize, available: usize },
    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Flat vector of model parameters, the `w` the whole pipeline passes around.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        ParamVector(vec![0.0; d])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Element-wise `self - other`.
    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.len(), other.len());
        ParamVector(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// Element-wise `self + other`.
    pub fn add(&self, other: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.len(), other.len());
        ParamVector(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    /// `self += scale * other`, in place.
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += scale * b;
        }
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Little-endian byte image, used for hashing model snapshots.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.0.len() * 8);
        for v in &self.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Dense feed-forward architecture: input -> hidden layers -> class logits.
///
/// `hidden_widths` may be empty, which degenerates to softmax regression
/// (convex loss); that case is used by tests that need a known optimum.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, num_classes: usize) -> Self {
        Architecture {
            input_dim,
            hidden_widths,
            num_classes,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<(), LearningError> {
        if self.input_dim == 0 {
            return Err(LearningError::InvalidArchitecture(
                "input_dim must be positive".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(LearningError::InvalidArchitecture(
                "num_classes must be at least 2".into(),
            ));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(LearningError::InvalidArchitecture(
                "hidden layer width must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer, in forward order.
    pub(crate) fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden_widths {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.num_classes));
        dims
    }

    /// Total parameter count `d`: per layer `fan_in * fan_out` weights plus
    /// `fan_out` biases.
    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(fi, fo)| fi * fo + fo)
            .sum()
    }
}

/// Randomly initialize model parameters for `arch`.
///
/// Weights are uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero,
/// so the initial logits are near zero and the initial loss sits near
/// `ln(num_classes)`. Deterministic for a given seed.
pub fn init_model(arch: &Architecture, seed: u64) -> Result<ParamVector, LearningError> {
    use rand::RngExt;
    arch.validate()?;
    let mut rng = crate::rngstream::derive_rng(seed, "learning/init");
    let mut values = Vec::with_capacity(arch.param_count());
    for (fan_in, fan_out) in arch.layer_dims() {
        let scale = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            let u: f64 = rng.random();
            values.push((2.0 * u - 1.0) * scale);
        }
        values.extend(std::iter::repeat(0.0).take(fan_out));
    }
    Ok(ParamVector(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_hand_arithmetic() {
        // input 4, hidden [3], classes 2: 4*3+3 + 3*2+2 = 23
        let arch = Architecture::new(4, vec![3], 2);
        assert_eq!(arch.param_count(), 23);
        let softmax_reg = Architecture::new(5, vec![], 3);
        assert_eq!(softmax_reg.param_count(), 5 * 3 + 3);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let arch = Architecture::new(4, vec![3], 2);
        let a = init_model(&arch, 7).unwrap();
        let b = init_model(&arch, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), arch.param_count());
    }

    #[test]
    fn different_seeds_differ() {
        let arch = Architecture::new(6, vec![5], 3);
        let a = init_model(&arch, 1).unwrap();
        let b = init_model(&arch, 2).unwrap();
        assert!(a.as_slice().iter().zip(b.as_slice()).any(|(x, y)| x != y));
    }

    #[test]
    fn zero_width_layer_is_rejected() {
        let arch = Architecture::new(4, vec![0], 2);
        assert!(matches!(
            init_model(&arch, 3),
            Err(LearningError::InvalidArchitecture(_))
        ));
        let arch = Architecture::new(4, vec![3], 1);
        assert!(init_model(&arch, 3).is_err());
    }

    #[test]
    fn init_scale_follows_fan_in() {
        let arch = Architecture::new(100, vec![], 4);
        let w = init_model(&arch, 5).unwrap();
        let bound = 1.0 / (100f64).sqrt();
        for i in 0..400 {
            assert!(w[i].abs() <= bound);
        }
        // biases are zero
        for i in 400..404 {
            assert_eq!(w[i], 0.0);
        }
    }
}
