use serde::{Deserialize, Serialize};

use crate::dynamics::{Component, HorizonParams};
use crate::error::{Error, Result};

/// Per-component tracking gains used to build the diagonal `G_c` and `G_f`.
///
/// `discount` scales the feedforward gains geometrically over the horizon:
/// step `i` (0-based) is multiplied by `discount^i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainProfile {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub discount: f64,
}

impl Default for GainProfile {
    fn default() -> Self {
        Self { position: 1.0, velocity: 0.0, acceleration: 0.0, discount: 1.0 }
    }
}

impl GainProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("position", self.position),
            ("velocity", self.velocity),
            ("acceleration", self.acceleration),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} gain must be finite and nonnegative")));
            }
        }
        if !(self.discount.is_finite() && self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::invalid("gain discount must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn diagonal(&self, params: HorizonParams, discounted: bool) -> Vec<f64> {
        let mut diag = vec![0.0; params.state_len()];
        let mut factor = 1.0;
        for step in 0..params.n_steps() {
            for dof in 0..params.n_dof() {
                diag[params.state_index(step, dof, Component::Position)] = self.position * factor;
                diag[params.state_index(step, dof, Component::Velocity)] = self.velocity * factor;
                diag[params.state_index(step, dof, Component::Acceleration)] = self.acceleration * factor;
            }
            if discounted {
                factor *= self.discount;
            }
        }
        diag
    }
}

/// Weights of the homotopy objective
/// `(1−α)‖G_c(x̃_c − x̃)‖² + α‖G_f(x̃_f − x̃)‖² + β‖ũ‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
    pub g_c: Vec<f64>,
    pub g_f: Vec<f64>,
}

pub const DEFAULT_BETA: f64 = 1e-6;

impl ObjectiveWeights {
    pub fn new(alpha: f64, beta: f64, g_c: Vec<f64>, g_f: Vec<f64>) -> Result<Self> {
        let w = Self { alpha, beta, g_c, g_f };
        w.validate()?;
        Ok(w)
    }

    /// `G_c` from `gains` as is, `G_f` from `gains` with the horizon discount.
    pub fn tracking(params: HorizonParams, alpha: f64, beta: f64, gains: &GainProfile) -> Result<Self> {
        gains.validate()?;
        Self::new(alpha, beta, gains.diagonal(params, false), gains.diagonal(params, true))
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { alpha, ..self.clone() })
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if self.g_c.len() != self.g_f.len() {
            return Err(Error::invalid("G_c and G_f have different lengths"));
        }
        if self.g_c.iter().chain(&self.g_f).any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::invalid("gains must be finite and nonnegative"));
        }
        Ok(())
    }

    pub(crate) fn check_params(&self, params: HorizonParams) -> Result<()> {
        if self.g_c.len() != params.state_len() {
            return Err(Error::invalid(format!(
                "gain diagonals have length {}, horizon needs {}",
                self.g_c.len(),
                params.state_len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}
