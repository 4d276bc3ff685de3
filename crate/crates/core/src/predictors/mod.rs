//! One-step velocity predictors and their N-step rollouts.
//!
//! Every model consumes velocity samples (corpus units per step) and
//! predicts the next one. Multi-step forecasts feed each prediction back as
//! the next input on a copy of the recurrent state; the live state only ever
//! advances on real observations.

mod dybm;
mod esn;
mod file;
mod lstm;
mod simple;

pub use dybm::{Dybm, DybmConfig, DybmOptimizer};
pub use esn::{esn_update, spectral_radius, EsnConfig, Reservoir};
pub use file::{load_model, save_model, ModelBody, ModelFile, Tensor, MODEL_FORMAT, MODEL_VERSION};
pub use lstm::{sequence_loss, sequence_loss_grad, Lstm, LstmCell, LstmParams, PaddedSequence, SequenceGrad, DEFAULT_HIDDEN};
pub use simple::{ConstantVelocity, ZeroMotion};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::NormalizedSequence;
use crate::dynamics::{Component, HorizonParams, StackedState};
use crate::error::{ensure_finite, Error, Result};

/// Longest rollout a predictor will produce.
pub const MAX_HORIZON: usize = 1000;

/// Observations required before a predictor reports itself ready.
pub const DEFAULT_WARMUP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    ZeroMotion,
    ConstantVelocity,
    Dybm,
    DybmEsn,
    Lstm,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 5] = [
        PredictorKind::ZeroMotion,
        PredictorKind::ConstantVelocity,
        PredictorKind::Dybm,
        PredictorKind::DybmEsn,
        PredictorKind::Lstm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PredictorKind::ZeroMotion => "zero-motion",
            PredictorKind::ConstantVelocity => "constant-velocity",
            PredictorKind::Dybm => "dybm",
            PredictorKind::DybmEsn => "dybm-esn",
            PredictorKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(PredictorKind::ConstantVelocity),
            _ => Self::ALL
                .into_iter()
                .find(|k| k.as_str() == s)
                .ok_or_else(|| Error::invalid(format!("unknown predictor kind {s:?}"))),
        }
    }
}

pub trait Predictor: Send + Sync + fmt::Debug {
    fn kind(&self) -> PredictorKind;

    fn n_dof(&self) -> usize;

    /// Consumes one real velocity sample; online learners also take their
    /// learning step here.
    fn observe(&mut self, velocity: &[f64]) -> Result<()>;

    /// Next-step velocity from the current state, without mutating it.
    fn predict_one(&self) -> Result<Vec<f64>>;

    /// `n` predicted velocities, each fed back as the next input.
    fn rollout(&self, n: usize) -> Result<Vec<Vec<f64>>>;

    /// Clears recurrent state; learned parameters are kept.
    fn reset(&mut self);

    fn set_learning(&mut self, _enabled: bool) {}

    fn is_learning(&self) -> bool {
        false
    }

    fn to_model_file(&self) -> ModelFile;

    fn clone_box(&self) -> Box<dyn Predictor>;

    /// Hash of the learnable parameters only.
    fn parameter_checksum(&self) -> String {
        self.to_model_file().parameter_checksum()
    }
}

impl Clone for Box<dyn Predictor> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub(crate) fn check_input(v: &[f64], n_dof: usize) -> Result<()> {
    if v.len() != n_dof {
        return Err(Error::invalid(format!("expected a {n_dof}-D sample, got {}", v.len())));
    }
    ensure_finite(v, "sample")
}

pub(crate) fn check_horizon(n: usize) -> Result<()> {
    if n == 0 || n > MAX_HORIZON {
        return Err(Error::invalid(format!("horizon {n} outside 1..={MAX_HORIZON}")));
    }
    Ok(())
}

pub(crate) fn checksum<'a>(chunks: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for chunk in chunks {
        for v in chunk {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..16])
}

pub fn build_predictor(kind: PredictorKind, n_dof: usize, seed: u64) -> Result<Box<dyn Predictor>> {
    Ok(match kind {
        PredictorKind::ZeroMotion => Box::new(ZeroMotion::new(n_dof)),
        PredictorKind::ConstantVelocity => Box::new(ConstantVelocity::new(n_dof)),
        PredictorKind::Dybm => Box::new(Dybm::new(DybmConfig { n_dof, ..Default::default() })?),
        PredictorKind::DybmEsn => Box::new(Dybm::new(DybmConfig {
            n_dof,
            esn: Some(EsnConfig { seed, ..Default::default() }),
            ..Default::default()
        })?),
        PredictorKind::Lstm => Box::new(Lstm::new(LstmParams::random(n_dof, DEFAULT_HIDDEN, n_dof, seed))?),
    })
}

/// Velocities observed so far and the last observed position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    samples: Vec<Vec<f64>>,
    last_position: Option<Vec<f64>>,
}

impl History {
    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn last_position(&self) -> Option<&[f64]> {
        self.last_position.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Forecast positions `p_{t+1} … p_{t+n}` and velocities, in corpus units.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTarget {
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

impl PredictionTarget {
    /// Integrates `velocities` forward from `start`.
    pub fn integrate(start: &[f64], velocities: Vec<Vec<f64>>) -> Self {
        let mut p = start.to_vec();
        let positions = velocities
            .iter()
            .map(|v| {
                for (pi, vi) in p.iter_mut().zip(v) {
                    *pi += vi;
                }
                p.clone()
            })
            .collect();
        Self { positions, velocities }
    }

    /// No motion: `n` copies of `position`.
    pub fn hold(position: &[f64], n: usize) -> Self {
        Self {
            positions: vec![position.to_vec(); n],
            velocities: vec![vec![0.0; position.len()]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Converts to a stacked MPC target. Positions scale by
    /// `meters_per_unit`; per-step velocities become m/s; accelerations are zero.
    pub fn to_stacked(&self, params: HorizonParams, meters_per_unit: f64) -> Result<StackedState> {
        if self.len() != params.n_steps() {
            return Err(Error::invalid(format!(
                "target has {} steps, horizon has {}",
                self.len(),
                params.n_steps()
            )));
        }
        let mut s = StackedState::zeros(params);
        for (step, (p, v)) in self.positions.iter().zip(&self.velocities).enumerate() {
            if p.len() != params.n_dof() || v.len() != params.n_dof() {
                return Err(Error::invalid("target has the wrong number of DOFs"));
            }
            for dof in 0..params.n_dof() {
                s.set(step, dof, Component::Position, p[dof] * meters_per_unit);
                s.set(step, dof, Component::Velocity, v[dof] * meters_per_unit / params.dt());
            }
        }
        Ok(s)
    }
}

/// A predictor together with its observation history and readiness gate.
#[derive(Debug, Clone)]
pub struct MotionPredictor {
    model: Box<dyn Predictor>,
    history: History,
    warmup: usize,
}

impl MotionPredictor {
    pub fn new(model: Box<dyn Predictor>, warmup: usize) -> Self {
        Self { model, history: History::default(), warmup }
    }

    pub fn model(&self) -> &dyn Predictor {
        self.model.as_ref()
    }

    pub fn model_mut(&mut self) -> &mut dyn Predictor {
        self.model.as_mut()
    }

    pub fn into_model(self) -> Box<dyn Predictor> {
        self.model
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    /// True once enough velocities have been seen to trust the forecast.
    pub fn is_ready(&self) -> bool {
        self.history.len() >= self.warmup
    }

    /// Records a position; from the second position on, the difference is
    /// fed to the model as a velocity.
    pub fn observe_position(&mut self, position: &[f64]) -> Result<()> {
        check_input(position, self.model.n_dof())?;
        if let Some(last) = &self.history.last_position {
            let v: Vec<f64> = position.iter().zip(last).map(|(p, q)| p - q).collect();
            self.model.observe(&v)?;
            self.history.samples.push(v);
        }
        self.history.last_position = Some(position.to_vec());
        Ok(())
    }

    /// Feeds a velocity directly, advancing the last position by it when one is known.
    pub fn observe_velocity(&mut self, velocity: &[f64]) -> Result<()> {
        self.model.observe(velocity)?;
        if let Some(p) = &mut self.history.last_position {
            for (pi, vi) in p.iter_mut().zip(velocity) {
                *pi += vi;
            }
        }
        self.history.samples.push(velocity.to_vec());
        Ok(())
    }

    pub fn predict_one(&self) -> Result<Vec<f64>> {
        self.model.predict_one()
    }

    /// `n`-step forecast integrated from the last observed position.
    pub fn predict_horizon(&self, n: usize) -> Result<PredictionTarget> {
        check_horizon(n)?;
        let last = self
            .history
            .last_position
            .as_deref()
            .ok_or_else(|| Error::invalid("no position observed yet"))?;
        Ok(PredictionTarget::integrate(last, self.model.rollout(n)?))
    }

    pub fn reset(&mut self) {
        self.model.reset();
        self.history = History::default();
    }
}

/// The true future of `reference` after position index `t`. Past the end
/// the final position repeats with zero velocity.
pub fn perfect_predict(reference: &NormalizedSequence, t: usize, n: usize) -> PredictionTarget {
    let positions = reference.positions();
    let last = positions.len() - 1;
    let at = |i: usize| positions[i.min(last)].to_vec();
    PredictionTarget {
        positions: (1..=n).map(|i| at(t + i)).collect(),
        velocities: (1..=n)
            .map(|i| {
                let k = t + i - 1;
                if k < reference.velocities.len() {
                    reference.velocities[k].to_vec()
                } else {
                    vec![0.0; 2]
                }
            })
            .collect(),
    }
}
