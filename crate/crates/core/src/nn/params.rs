use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat view of every trainable parameter of a network. Aggregation,
/// scaling, clipping and noising all operate on this representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f32>);

impl ParamVector {
    pub fn new(data: Vec<f32>) -> Self {
        ParamVector(data)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    fn check_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::dim(format!(
                "parameter vectors differ in length ({} vs {})",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, c: f32) -> ParamVector {
        ParamVector(self.0.iter().map(|a| a * c).collect())
    }

    /// `self + c * other`
    pub fn add_scaled(&self, other: &ParamVector, c: f32) -> Result<ParamVector> {
        self.check_len(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + c * b).collect(),
        ))
    }

    /// Euclidean norm, accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f32> {
        self.check_len(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f32>> for ParamVector {
    fn from(v: Vec<f32>) -> Self {
        ParamVector(v)
    }
}

/// `params - lr * grad`, elementwise.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f32) -> Result<ParamVector> {
    if lr < 0.0 || !lr.is_finite() {
        return Err(Error::Parameter(format!("learning rate must be >= 0, got {lr}")));
    }
    params.add_scaled(grad, -lr)
}

/// In-place variant used by the training loops.
pub(crate) fn sgd_step_in_place(params: &mut ParamVector, grad: &ParamVector, lr: f32) -> Result<()> {
    params.check_len(grad)?;
    for (p, g) in params.0.iter_mut().zip(&grad.0) {
        *p -= lr * g;
    }
    Ok(())
}
