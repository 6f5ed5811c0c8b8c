//! Server-side transforms applied to each submitted model before averaging.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseMode {
    #[default]
    None,
    Clip,
    Dp,
    ClipThenDp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseConfig {
    pub mode: DefenseMode,
    /// Norm bound `S` on `update - global`.
    pub clip_bound: f32,
    /// Standard deviation of the per-coordinate Gaussian noise.
    pub noise_sigma: f32,
    /// Overrides the noise stream seed derived from the master seed.
    pub noise_seed: Option<u64>,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig {
            mode: DefenseMode::None,
            clip_bound: 5.0,
            noise_sigma: 0.001,
            noise_seed: None,
        }
    }
}

impl DefenseConfig {
    pub fn clips(&self) -> bool {
        matches!(self.mode, DefenseMode::Clip | DefenseMode::ClipThenDp)
    }

    pub fn adds_noise(&self) -> bool {
        matches!(self.mode, DefenseMode::Dp | DefenseMode::ClipThenDp)
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.clips() && !(self.clip_bound > 0.0 && self.clip_bound.is_finite()) {
            out.push(format!("defense.clip_bound must be > 0, got {}", self.clip_bound));
        }
        if self.adds_noise() && !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            out.push(format!("defense.noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        out
    }

    /// Short comma-free tag for the round CSV.
    pub fn label(&self) -> String {
        match self.mode {
            DefenseMode::None => "none".into(),
            DefenseMode::Clip => format!("clip:S={}", self.clip_bound),
            DefenseMode::Dp => format!("dp:sigma={}", self.noise_sigma),
            DefenseMode::ClipThenDp => format!("clip_then_dp:S={};sigma={}", self.clip_bound, self.noise_sigma),
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, update: ParamVector, global: &ParamVector, rng: &mut R) -> Result<ParamVector> {
        let mut out = update;
        if self.clips() {
            out = clip_update(&out, global, self.clip_bound)?;
        }
        if self.adds_noise() {
            out = add_dp_noise(&out, self.noise_sigma, rng)?;
        }
        Ok(out)
    }
}

/// `global + delta * min(1, S / ||delta||)` with `delta = update - global`.
/// A zero delta passes through untouched.
pub fn clip_update(update: &ParamVector, global: &ParamVector, bound: f32) -> Result<ParamVector> {
    if bound.is_nan() || bound <= 0.0 {
        return Err(Error::Parameter(format!("clip bound must be > 0, got {bound}")));
    }
    let delta = update.sub(global)?;
    let norm = delta.l2_norm();
    if norm <= bound as f64 {
        return Ok(update.clone());
    }
    let factor = (bound as f64 / norm) as f32;
    global.add_scaled(&delta, factor)
}

/// Adds an independent `N(0, sigma^2)` draw to every coordinate.
pub fn add_dp_noise<R: Rng + ?Sized>(update: &ParamVector, sigma: f32, rng: &mut R) -> Result<ParamVector> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(update.clone());
    }
    let normal = Normal::new(0.0f64, sigma as f64).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(ParamVector::new(
        update
            .as_slice()
            .iter()
            .map(|&v| v + normal.sample(rng) as f32)
            .collect(),
    ))
}
