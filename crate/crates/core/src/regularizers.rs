//! Move-norm and EWC penalties, the squared-gradient Fisher estimate, and
//! per-group freeze masks.
//!
//! With `Δ = Θ − Θ_prev` and per-coordinate weights `w`:
//!
//! * `Squared` form: `λ · Σ wᵢ Δᵢ²`, gradient `2λ w∘Δ`, with `w = 1` (move
//!   norm) or `w = F` (EWC).
//! * `Norm` form: `λ · (√(Σ wᵢ Δᵢ² + ε) − √ε)`, with `w = 1` or `w = F²`, so
//!   that `λ‖w^½∘Δ‖₂` is recovered up to the ε guard and the value is exactly
//!   zero at `Δ = 0`.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegError {
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("EWC penalty requires a Fisher estimate")]
    MissingFisher,
    #[error("unknown parameter group `{0}`")]
    UnknownGroup(String),
    #[error("invalid regularizer config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Named contiguous groups partitioning a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    groups: Vec<ParamGroup>,
}

impl Layout {
    /// Builds a layout from `(name, len)` pairs laid out back to back.
    pub fn new<S: AsRef<str>>(groups: &[(S, usize)]) -> Self {
        let mut offset = 0;
        let groups = groups
            .iter()
            .map(|(name, len)| {
                let g = ParamGroup {
                    name: name.as_ref().to_string(),
                    offset,
                    len: *len,
                };
                offset += len;
                g
            })
            .collect();
        Layout { groups }
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn total_len(&self) -> usize {
        self.groups.last().map_or(0, |g| g.offset + g.len)
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        ParamVector {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self, RegError> {
        if values.len() != layout.total_len() {
            return Err(RegError::LayoutMismatch);
        }
        Ok(ParamVector { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group_slice(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .group(name)
            .map(|g| &self.values[g.offset..g.offset + g.len])
    }

    pub fn same_layout(&self, other: &ParamVector) -> Result<(), RegError> {
        if self.layout != other.layout || self.values.len() != other.values.len() {
            return Err(RegError::LayoutMismatch);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    #[default]
    None,
    MoveNorm,
    Ewc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyForm {
    #[default]
    Squared,
    Norm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub kind: RegKind,
    pub lambda: f64,
    #[serde(default)]
    pub form: PenaltyForm,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1e-12
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            kind: RegKind::None,
            lambda: 0.0,
            form: PenaltyForm::Squared,
            epsilon: default_epsilon(),
        }
    }
}

impl RegConfig {
    pub fn none() -> Self {
        RegConfig::default()
    }

    pub fn move_norm(lambda: f64) -> Self {
        RegConfig {
            kind: RegKind::MoveNorm,
            lambda,
            ..RegConfig::default()
        }
    }

    pub fn ewc(lambda: f64) -> Self {
        RegConfig {
            kind: RegKind::Ewc,
            lambda,
            ..RegConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), RegError> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(RegError::InvalidConfig("lambda must be a finite value >= 0".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(RegError::InvalidConfig("epsilon must be > 0".into()));
        }
        Ok(())
    }

    /// Per-coordinate weight `w` in `Σ wᵢΔᵢ²` (`None` means all ones).
    pub fn weights<'a>(&self, fisher: Option<&'a [f64]>) -> Result<Option<Weights<'a>>, RegError> {
        match self.kind {
            RegKind::None | RegKind::MoveNorm => Ok(None),
            RegKind::Ewc => {
                let f = fisher.ok_or(RegError::MissingFisher)?;
                Ok(Some(match self.form {
                    PenaltyForm::Squared => Weights::Linear(f),
                    PenaltyForm::Norm => Weights::Squared(f),
                }))
            }
        }
    }
}

/// EWC weights: `F` itself or `F²`.
#[derive(Debug, Clone, Copy)]
pub enum Weights<'a> {
    Linear(&'a [f64]),
    Squared(&'a [f64]),
}

impl Weights<'_> {
    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        match self {
            Weights::Linear(f) => f[i],
            Weights::Squared(f) => f[i] * f[i],
        }
    }
}

#[inline]
fn weight(w: &Option<Weights<'_>>, i: usize) -> f64 {
    w.as_ref().map_or(1.0, |w| w.at(i))
}

/// Penalty value and its gradient with respect to `theta`.
pub fn penalty(
    theta: &ParamVector,
    theta_prev: &ParamVector,
    fisher: Option<&ParamVector>,
    config: &RegConfig,
) -> Result<(f64, ParamVector), RegError> {
    theta.same_layout(theta_prev)?;
    if let Some(f) = fisher {
        theta.same_layout(f)?;
    }
    let mut grad = ParamVector::zeros(theta.layout.clone());
    let value = penalty_into(
        &theta.values,
        &theta_prev.values,
        fisher.map(|f| f.values.as_slice()),
        config,
        &mut grad.values,
    )?;
    Ok((value, grad))
}

/// Slice form of [`penalty`]: adds the penalty gradient into `grad` and
/// returns the value.
pub fn penalty_into(
    theta: &[f64],
    theta_prev: &[f64],
    fisher: Option<&[f64]>,
    config: &RegConfig,
    grad: &mut [f64],
) -> Result<f64, RegError> {
    if theta.len() != theta_prev.len()
        || grad.len() != theta.len()
        || fisher.is_some_and(|f| f.len() != theta.len())
    {
        return Err(RegError::LayoutMismatch);
    }
    if config.kind == RegKind::None {
        return Ok(0.0);
    }
    let w = config.weights(fisher)?;
    let lambda = config.lambda;
    match config.form {
        PenaltyForm::Squared => {
            let mut sum = 0.0;
            for i in 0..theta.len() {
                let d = theta[i] - theta_prev[i];
                let wi = weight(&w, i);
                sum += wi * d * d;
                grad[i] += 2.0 * lambda * wi * d;
            }
            Ok(lambda * sum)
        }
        PenaltyForm::Norm => {
            let mut sum = 0.0;
            for i in 0..theta.len() {
                let d = theta[i] - theta_prev[i];
                sum += weight(&w, i) * d * d;
            }
            let root = libm::sqrt(sum + config.epsilon);
            for i in 0..theta.len() {
                let d = theta[i] - theta_prev[i];
                grad[i] += lambda * weight(&w, i) * d / root;
            }
            Ok(lambda * (root - libm::sqrt(config.epsilon)))
        }
    }
}

/// Running sum of squared task-loss gradients; the Fisher estimate is their
/// mean over recorded steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherAccumulator {
    pub sum_sq: Vec<f64>,
    pub steps: u64,
}

impl FisherAccumulator {
    pub fn new(len: usize) -> Self {
        FisherAccumulator {
            sum_sq: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn update(&mut self, grad: &[f64]) -> Result<(), RegError> {
        if grad.len() != self.sum_sq.len() {
            return Err(RegError::LayoutMismatch);
        }
        for (s, g) in self.sum_sq.iter_mut().zip(grad) {
            *s += g * g;
        }
        self.steps += 1;
        Ok(())
    }

    /// Mean of squared gradients; zeros before the first step.
    pub fn fisher(&self) -> Vec<f64> {
        if self.steps == 0 {
            return vec![0.0; self.sum_sq.len()];
        }
        let n = self.steps as f64;
        self.sum_sq.iter().map(|s| s / n).collect()
    }

    pub fn fisher_vector(&self, layout: &Layout) -> Result<ParamVector, RegError> {
        ParamVector::from_values(layout.clone(), self.fisher())
    }
}

/// Returns the accumulator after folding in one more gradient.
pub fn fisher_update(
    mut acc: FisherAccumulator,
    grad: &ParamVector,
) -> Result<FisherAccumulator, RegError> {
    acc.update(&grad.values)?;
    Ok(acc)
}

/// Names of the parameter groups whose gradients are zeroed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FreezeMask {
    pub frozen: BTreeSet<String>,
}

impl FreezeMask {
    pub fn none() -> Self {
        FreezeMask::default()
    }

    pub fn groups<S: AsRef<str>>(names: &[S]) -> Self {
        FreezeMask {
            frozen: names.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    pub fn all(layout: &Layout) -> Self {
        FreezeMask {
            frozen: layout.groups().iter().map(|g| g.name.clone()).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.frozen.is_empty()
    }

    pub fn is_frozen(&self, group: &str) -> bool {
        self.frozen.contains(group)
    }

    pub fn check(&self, layout: &Layout) -> Result<(), RegError> {
        match self.frozen.iter().find(|n| layout.group(n).is_none()) {
            Some(n) => Err(RegError::UnknownGroup(n.clone())),
            None => Ok(()),
        }
    }

    /// Per-coordinate "frozen" flags for `layout`.
    pub fn coordinate_mask(&self, layout: &Layout) -> Vec<bool> {
        let mut mask = vec![false; layout.total_len()];
        for g in layout.groups() {
            if self.is_frozen(&g.name) {
                mask[g.offset..g.offset + g.len].fill(true);
            }
        }
        mask
    }
}

/// Zeroes the gradient entries of frozen groups.
pub fn apply_freeze(grad: &ParamVector, mask: &FreezeMask) -> Result<ParamVector, RegError> {
    mask.check(&grad.layout)?;
    let mut out = grad.clone();
    for g in grad.layout.groups() {
        if mask.is_frozen(&g.name) {
            out.values[g.offset..g.offset + g.len].fill(0.0);
        }
    }
    Ok(out)
}
