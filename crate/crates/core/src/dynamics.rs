//! State types and the single-step triple-integrator model.
//!
//! Each degree of freedom is an independent triple integrator whose state is
//! `[position, velocity, acceleration]` and whose input is the jerk. Stacked
//! horizon vectors are laid out timestep-major, then DOF, then component:
//! index `(step * n_dof + dof) * 3 + component`.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Component slot inside one DOF block of a stacked vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Position = 0,
    Velocity = 1,
    Acceleration = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DofState {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl DofState {
    pub fn new(position: f64, velocity: f64, acceleration: f64) -> Self {
        Self { position, velocity, acceleration }
    }

    pub fn at_rest(position: f64) -> Self {
        Self::new(position, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite() && self.acceleration.is_finite()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.position, self.velocity, self.acceleration]
    }
}

/// State transition `A` and input `B` for one DOF and timestep `dt`.
pub fn transition_matrices(dt: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let a = Matrix3::new(
        1.0, dt, dt * dt / 2.0, //
        0.0, 1.0, dt, //
        0.0, 0.0, 1.0,
    );
    let b = Vector3::new(dt * dt * dt / 6.0, dt * dt / 2.0, dt);
    (a, b)
}

/// Advances one DOF by `dt` under constant jerk `jerk`.
pub fn step_dynamics(x: DofState, jerk: f64, dt: f64) -> Result<DofState> {
    if !x.is_finite() || !jerk.is_finite() || !dt.is_finite() {
        return Err(Error::invalid("step_dynamics inputs must be finite"));
    }
    if dt <= 0.0 {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let dt2 = dt * dt;
    let next = DofState {
        position: x.position + x.velocity * dt + x.acceleration * dt2 / 2.0 + jerk * dt2 * dt / 6.0,
        velocity: x.velocity + x.acceleration * dt + jerk * dt2 / 2.0,
        acceleration: x.acceleration + jerk * dt,
    };
    if !next.is_finite() {
        return Err(Error::invalid("step_dynamics overflowed"));
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiDofState {
    dofs: Vec<DofState>,
}

impl MultiDofState {
    pub fn new(dofs: Vec<DofState>) -> Result<Self> {
        if dofs.is_empty() {
            return Err(Error::invalid("a state needs at least one DOF"));
        }
        if dofs.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("state entries must be finite"));
        }
        Ok(Self { dofs })
    }

    pub fn at_rest(positions: &[f64]) -> Result<Self> {
        Self::new(positions.iter().map(|&p| DofState::at_rest(p)).collect())
    }

    pub fn n_dof(&self) -> usize {
        self.dofs.len()
    }

    pub fn dofs(&self) -> &[DofState] {
        &self.dofs
    }

    pub fn positions(&self) -> Vec<f64> {
        self.dofs.iter().map(|d| d.position).collect()
    }

    pub fn velocities(&self) -> Vec<f64> {
        self.dofs.iter().map(|d| d.velocity).collect()
    }

    /// `[c, ċ, c̈]` per DOF, concatenated.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(3 * self.dofs.len(), self.dofs.iter().flat_map(|d| d.as_array()))
    }

    /// Applies one jerk per DOF.
    pub fn step(&self, control: &ControlVector, dt: f64) -> Result<Self> {
        if control.len() != self.n_dof() {
            return Err(Error::invalid(format!(
                "control has {} entries, state has {} DOFs",
                control.len(),
                self.n_dof()
            )));
        }
        let dofs = self
            .dofs
            .iter()
            .zip(control.jerks())
            .map(|(&x, &u)| step_dynamics(x, u, dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dofs })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    jerks: Vec<f64>,
}

impl ControlVector {
    pub fn new(jerks: Vec<f64>) -> Result<Self> {
        ensure_finite(&jerks, "jerk")?;
        Ok(Self { jerks })
    }

    pub fn zeros(n_dof: usize) -> Self {
        Self { jerks: vec![0.0; n_dof] }
    }

    pub fn jerks(&self) -> &[f64] {
        &self.jerks
    }

    pub fn len(&self) -> usize {
        self.jerks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jerks.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.jerks.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonParams {
    n_steps: usize,
    dt: f64,
    n_dof: usize,
}

impl HorizonParams {
    pub fn new(n_steps: usize, dt: f64, n_dof: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::invalid("horizon must have at least one step"));
        }
        if n_dof == 0 {
            return Err(Error::invalid("horizon must have at least one DOF"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive and finite, got {dt}")));
        }
        Ok(Self { n_steps, dt, n_dof })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    /// Length of a stacked state, `3·D·N`.
    pub fn state_len(&self) -> usize {
        3 * self.n_dof * self.n_steps
    }

    /// Length of a stacked control, `D·N`.
    pub fn control_len(&self) -> usize {
        self.n_dof * self.n_steps
    }

    pub fn state_index(&self, step: usize, dof: usize, component: Component) -> usize {
        (step * self.n_dof + dof) * 3 + component as usize
    }

    pub fn control_index(&self, step: usize, dof: usize) -> usize {
        step * self.n_dof + dof
    }
}

/// States `x_1 … x_N` over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedState {
    params: HorizonParams,
    values: DVector<f64>,
}

impl StackedState {
    pub fn zeros(params: HorizonParams) -> Self {
        Self { params, values: DVector::zeros(params.state_len()) }
    }

    pub fn from_vector(params: HorizonParams, values: DVector<f64>) -> Result<Self> {
        if values.len() != params.state_len() {
            return Err(Error::invalid(format!(
                "stacked state has length {}, expected {}",
                values.len(),
                params.state_len()
            )));
        }
        Ok(Self { params, values })
    }

    /// Holds `positions` with zero velocity and acceleration at every step.
    pub fn hold(params: HorizonParams, positions: &[f64]) -> Result<Self> {
        if positions.len() != params.n_dof() {
            return Err(Error::invalid("hold position has the wrong number of DOFs"));
        }
        let mut s = Self::zeros(params);
        for step in 0..params.n_steps() {
            for (dof, &p) in positions.iter().enumerate() {
                s.set(step, dof, Component::Position, p);
            }
        }
        Ok(s)
    }

    pub fn params(&self) -> HorizonParams {
        self.params
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn get(&self, step: usize, dof: usize, component: Component) -> f64 {
        self.values[self.params.state_index(step, dof, component)]
    }

    pub fn set(&mut self, step: usize, dof: usize, component: Component, value: f64) {
        let i = self.params.state_index(step, dof, component);
        self.values[i] = value;
    }

    /// Positions of every DOF at `step`.
    pub fn positions_at(&self, step: usize) -> Vec<f64> {
        (0..self.params.n_dof()).map(|d| self.get(step, d, Component::Position)).collect()
    }
}

/// Jerks `u_0 … u_{N-1}` over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedControl {
    params: HorizonParams,
    values: DVector<f64>,
}

impl StackedControl {
    pub fn zeros(params: HorizonParams) -> Self {
        Self { params, values: DVector::zeros(params.control_len()) }
    }

    pub fn from_vector(params: HorizonParams, values: DVector<f64>) -> Result<Self> {
        if values.len() != params.control_len() {
            return Err(Error::invalid(format!(
                "stacked control has length {}, expected {}",
                values.len(),
                params.control_len()
            )));
        }
        Ok(Self { params, values })
    }

    pub fn params(&self) -> HorizonParams {
        self.params
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn get(&self, step: usize, dof: usize) -> f64 {
        self.values[self.params.control_index(step, dof)]
    }

    /// Jerks of the first timestep, the part a receding-horizon controller applies.
    pub fn first(&self) -> ControlVector {
        ControlVector { jerks: (0..self.params.n_dof()).map(|d| self.get(0, d)).collect() }
    }
}
