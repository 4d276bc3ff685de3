//! Linear dynamic Boltzmann machine with optional reservoir features.
//!
//! The one-step prediction is affine in a feature vector built from
//!
//! * the last `delay − 1` inputs, held in a FIFO (explicit delay weights),
//! * one eligibility trace per decay rate, `e_k ← λ_k·e_k + x_out`, where
//!   `x_out` is the input leaving the FIFO,
//! * optionally the state of a fixed echo-state reservoir.
//!
//! Learning is online: after each real sample the readout takes one
//! gradient step on the squared one-step error, then the FIFO, traces and
//! reservoir advance.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::esn::{EsnConfig, Reservoir};
use super::{check_horizon, check_input, ModelBody, ModelFile, Predictor, PredictorKind, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum DybmOptimizer {
    Sgd,
    /// Per-parameter step `η·g / (√Σg² + ε)`.
    AdaGrad { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DybmConfig {
    pub n_dof: usize,
    /// `d_max`: explicit delay weights cover lags `1 … delay−1`.
    pub delay: usize,
    pub decay_rates: Vec<f64>,
    pub learning_rate: f64,
    pub optimizer: DybmOptimizer,
    pub esn: Option<EsnConfig>,
    /// Whether `observe` also learns.
    pub online: bool,
}

impl Default for DybmConfig {
    fn default() -> Self {
        Self {
            n_dof: 2,
            delay: 3,
            decay_rates: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            learning_rate: 0.01,
            optimizer: DybmOptimizer::AdaGrad { epsilon: 1e-8 },
            esn: None,
            online: true,
        }
    }
}

impl DybmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_dof == 0 {
            return Err(Error::invalid("DyBM needs at least one DOF"));
        }
        if self.delay == 0 {
            return Err(Error::invalid("DyBM delay must be at least 1"));
        }
        if let Some(l) = self.decay_rates.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(Error::invalid(format!("decay rate {l} outside (0, 1)")));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if let DybmOptimizer::AdaGrad { epsilon } = self.optimizer {
            if !(epsilon.is_finite() && epsilon > 0.0) {
                return Err(Error::invalid("AdaGrad epsilon must be positive"));
            }
        }
        if let Some(esn) = &self.esn {
            esn.validate()?;
        }
        Ok(())
    }

    fn n_features(&self) -> usize {
        self.n_dof * (self.delay - 1 + self.decay_rates.len()) + self.esn.as_ref().map_or(0, |e| e.size)
    }
}

/// FIFO, traces and reservoir: everything a rollout must not disturb.
#[derive(Debug, Clone, PartialEq)]
pub struct DybmState {
    /// Most recent input first; always `delay − 1` long.
    fifo: VecDeque<DVector<f64>>,
    traces: Vec<DVector<f64>>,
    reservoir: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dybm {
    config: DybmConfig,
    /// Readout over the feature vector, `D × F`.
    weights: DMatrix<f64>,
    bias: DVector<f64>,
    sq_weights: DMatrix<f64>,
    sq_bias: DVector<f64>,
    reservoir: Option<Reservoir>,
    state: DybmState,
    learning: bool,
}

impl Dybm {
    /// Zero-initialized readout.
    pub fn new(config: DybmConfig) -> Result<Self> {
        config.validate()?;
        let reservoir = config.esn.clone().map(|e| Reservoir::generate(e, config.n_dof)).transpose()?;
        let d = config.n_dof;
        let f = config.n_features();
        Ok(Self {
            weights: DMatrix::zeros(d, f),
            bias: DVector::zeros(d),
            sq_weights: DMatrix::zeros(d, f),
            sq_bias: DVector::zeros(d),
            state: Self::fresh_state(&config),
            learning: config.online,
            reservoir,
            config,
        })
    }

    /// Replaces the reservoir, e.g. with hand-built weights.
    pub fn with_reservoir(mut self, reservoir: Reservoir) -> Result<Self> {
        if reservoir.n_in() != self.config.n_dof {
            return Err(Error::invalid("reservoir input width does not match the DOFs"));
        }
        self.config.esn = Some(reservoir.config().clone());
        let f = self.config.n_features();
        self.weights = DMatrix::zeros(self.config.n_dof, f);
        self.sq_weights = DMatrix::zeros(self.config.n_dof, f);
        self.reservoir = Some(reservoir);
        self.state = Self::fresh_state(&self.config);
        Ok(self)
    }

    fn fresh_state(config: &DybmConfig) -> DybmState {
        let zero = DVector::zeros(config.n_dof);
        DybmState {
            fifo: std::iter::repeat_n(zero.clone(), config.delay - 1).collect(),
            traces: vec![zero; config.decay_rates.len()],
            reservoir: DVector::zeros(config.esn.as_ref().map_or(0, |e| e.size)),
        }
    }

    pub fn config(&self) -> &DybmConfig {
        &self.config
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut DVector<f64> {
        &mut self.bias
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Weight block for lag `d` (1-based).
    pub fn delay_weight(&self, d: usize) -> DMatrix<f64> {
        let n = self.config.n_dof;
        self.weights.columns((d - 1) * n, n).into_owned()
    }

    /// Weight block for the `k`-th eligibility trace.
    pub fn trace_weight(&self, k: usize) -> DMatrix<f64> {
        let n = self.config.n_dof;
        self.weights.columns((self.config.delay - 1 + k) * n, n).into_owned()
    }

    pub fn traces(&self) -> &[DVector<f64>] {
        &self.state.traces
    }

    pub fn fifo(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.state.fifo.iter()
    }

    pub fn reservoir_state(&self) -> &DVector<f64> {
        &self.state.reservoir
    }

    pub fn reservoir(&self) -> Option<&Reservoir> {
        self.reservoir.as_ref()
    }

    pub fn state(&self) -> &DybmState {
        &self.state
    }

    #[cfg(test)]
    pub(crate) fn set_traces(&mut self, traces: Vec<DVector<f64>>) {
        self.state.traces = traces;
    }

    fn features(&self, state: &DybmState) -> DVector<f64> {
        let parts = state.fifo.iter().chain(&state.traces).chain(std::iter::once(&state.reservoir));
        DVector::from_iterator(self.weights.ncols(), parts.flat_map(|v| v.iter().copied()))
    }

    fn predict_from(&self, state: &DybmState) -> DVector<f64> {
        &self.weights * self.features(state) + &self.bias
    }

    fn advance(&self, state: &mut DybmState, v: &DVector<f64>) {
        state.fifo.push_front(v.clone());
        let leaving = state.fifo.pop_back().expect("fifo holds at least the new input");
        for (e, &lambda) in state.traces.iter_mut().zip(&self.config.decay_rates) {
            *e *= lambda;
            *e += &leaving;
        }
        if let Some(r) = &self.reservoir {
            r.update(&mut state.reservoir, v.as_slice());
        }
    }

    /// One gradient step on `½‖v̂ − v_true‖²`, then advances the FIFO,
    /// traces and reservoir with `v_true`. Parameters are untouched if the
    /// gradient is not finite.
    pub fn learn_step(&mut self, v_true: &[f64]) -> Result<()> {
        check_input(v_true, self.config.n_dof)?;
        let target = DVector::from_column_slice(v_true);
        let features = self.features(&self.state);
        let err = &self.weights * &features + &self.bias - &target;
        let grad_w = &err * features.transpose();
        if err.iter().chain(grad_w.iter()).any(|g| !g.is_finite()) {
            return Err(Error::LearningDiverged("non-finite DyBM gradient".into()));
        }
        let eta = self.config.learning_rate;
        match self.config.optimizer {
            DybmOptimizer::Sgd => {
                self.weights -= grad_w * eta;
                self.bias -= &err * eta;
            }
            DybmOptimizer::AdaGrad { epsilon } => {
                adagrad(self.weights.as_mut_slice(), self.sq_weights.as_mut_slice(), grad_w.as_slice(), eta, epsilon);
                adagrad(self.bias.as_mut_slice(), self.sq_bias.as_mut_slice(), err.as_slice(), eta, epsilon);
            }
        }
        let mut state = std::mem::replace(&mut self.state, Self::fresh_state(&self.config));
        self.advance(&mut state, &target);
        self.state = state;
        Ok(())
    }

    pub(crate) fn from_parts(
        config: DybmConfig,
        weights: DMatrix<f64>,
        bias: DVector<f64>,
        accumulators: Option<(DMatrix<f64>, DVector<f64>)>,
    ) -> Result<Self> {
        let mut m = Self::new(config)?;
        if weights.shape() != m.weights.shape() || bias.len() != m.bias.len() {
            return Err(Error::ModelCorrupt(format!(
                "DyBM readout is {:?}, expected {:?}",
                weights.shape(),
                m.weights.shape()
            )));
        }
        if let Some((sw, sb)) = accumulators {
            if sw.shape() != m.sq_weights.shape() || sb.len() != m.sq_bias.len() {
                return Err(Error::ModelCorrupt("DyBM optimizer state has the wrong shape".into()));
            }
            m.sq_weights = sw;
            m.sq_bias = sb;
        }
        m.weights = weights;
        m.bias = bias;
        Ok(m)
    }
}

fn adagrad(params: &mut [f64], acc: &mut [f64], grad: &[f64], eta: f64, eps: f64) {
    for ((p, a), g) in params.iter_mut().zip(acc.iter_mut()).zip(grad) {
        *a += g * g;
        *p -= eta * g / (a.sqrt() + eps);
    }
}

impl Predictor for Dybm {
    fn kind(&self) -> PredictorKind {
        if self.reservoir.is_some() {
            PredictorKind::DybmEsn
        } else {
            PredictorKind::Dybm
        }
    }

    fn n_dof(&self) -> usize {
        self.config.n_dof
    }

    fn observe(&mut self, velocity: &[f64]) -> Result<()> {
        if self.learning {
            return self.learn_step(velocity);
        }
        check_input(velocity, self.config.n_dof)?;
        let mut state = std::mem::replace(&mut self.state, Self::fresh_state(&self.config));
        self.advance(&mut state, &DVector::from_column_slice(velocity));
        self.state = state;
        Ok(())
    }

    fn predict_one(&self) -> Result<Vec<f64>> {
        let v = self.predict_from(&self.state);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::ModelCorrupt("DyBM prediction is not finite".into()));
        }
        Ok(v.as_slice().to_vec())
    }

    fn rollout(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        check_horizon(n)?;
        let mut state = self.state.clone();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let v = self.predict_from(&state);
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::ModelCorrupt("DyBM rollout is not finite".into()));
            }
            self.advance(&mut state, &v);
            out.push(v.as_slice().to_vec());
        }
        Ok(out)
    }

    fn reset(&mut self) {
        self.state = Self::fresh_state(&self.config);
    }

    fn set_learning(&mut self, enabled: bool) {
        self.learning = enabled;
    }

    fn is_learning(&self) -> bool {
        self.learning
    }

    fn to_model_file(&self) -> ModelFile {
        let mut config = self.config.clone();
        config.online = self.learning;
        let body = super::file::DybmBody {
            config,
            weights: Tensor::from_matrix(&self.weights),
            bias: Tensor::from_vector(&self.bias),
            sq_weights: Tensor::from_matrix(&self.sq_weights),
            sq_bias: Tensor::from_vector(&self.sq_bias),
            reservoir_checksum: self.reservoir.as_ref().map(|r| r.checksum()),
        };
        let body = if self.reservoir.is_some() { ModelBody::DybmEsn(body) } else { ModelBody::Dybm(body) };
        ModelFile::new(self.config.n_dof, body)
    }

    fn clone_box(&self) -> Box<dyn Predictor> {
        Box::new(self.clone())
    }
}
