use nalgebra::{DMatrix, DVector, Matrix3};

use crate::dynamics::{transition_matrices, HorizonParams, MultiDofState, StackedControl, StackedState};
use crate::error::{Error, Result};

/// Default bound on the memory taken by `Ã` and `B̃` together.
pub const DEFAULT_MEMORY_CAP: usize = 256 * 1024 * 1024;

/// Horizon matrices with `x̃ = Ã x₀ + B̃ ũ`.
///
/// `x₀` is laid out per DOF as `[c, ċ, c̈]`; `x̃` holds `x_1 … x_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedModel {
    a_tilde: DMatrix<f64>,
    b_tilde: DMatrix<f64>,
    params: HorizonParams,
}

pub fn build_condensed(params: HorizonParams) -> Result<CondensedModel> {
    CondensedModel::build(params)
}

impl CondensedModel {
    pub fn build(params: HorizonParams) -> Result<Self> {
        Self::build_with_cap(params, DEFAULT_MEMORY_CAP)
    }

    pub fn build_with_cap(params: HorizonParams, cap: usize) -> Result<Self> {
        let n = params.n_steps();
        let d = params.n_dof();
        let rows = params.state_len();
        let required = rows
            .checked_mul(3 * d + params.control_len())
            .and_then(|cells| cells.checked_mul(std::mem::size_of::<f64>()))
            .unwrap_or(usize::MAX);
        if required > cap {
            return Err(Error::Capacity { required, cap });
        }

        let (a, b) = transition_matrices(params.dt());
        // powers[k] = A^k
        let mut powers: Vec<Matrix3<f64>> = Vec::with_capacity(n + 1);
        powers.push(Matrix3::identity());
        for k in 1..=n {
            powers.push(a * powers[k - 1]);
        }
        let impulse: Vec<_> = powers.iter().map(|p| p * b).collect();

        let mut a_tilde = DMatrix::zeros(rows, 3 * d);
        let mut b_tilde = DMatrix::zeros(rows, params.control_len());
        for step in 0..n {
            for dof in 0..d {
                let r0 = 3 * (step * d + dof);
                a_tilde.fixed_view_mut::<3, 3>(r0, 3 * dof).copy_from(&powers[step + 1]);
                for j in 0..=step {
                    b_tilde
                        .fixed_view_mut::<3, 1>(r0, params.control_index(j, dof))
                        .copy_from(&impulse[step - j]);
                }
            }
        }
        Ok(Self { a_tilde, b_tilde, params })
    }

    pub fn params(&self) -> HorizonParams {
        self.params
    }

    pub fn a_tilde(&self) -> &DMatrix<f64> {
        &self.a_tilde
    }

    pub fn b_tilde(&self) -> &DMatrix<f64> {
        &self.b_tilde
    }

    /// `Ã x₀`, the trajectory under zero jerk.
    pub fn free_response(&self, x0: &MultiDofState) -> Result<DVector<f64>> {
        self.check_state(x0)?;
        Ok(&self.a_tilde * x0.to_vector())
    }

    pub fn predict(&self, x0: &MultiDofState, u: &StackedControl) -> Result<StackedState> {
        if u.params().n_steps() != self.params.n_steps() || u.params().n_dof() != self.params.n_dof() {
            return Err(Error::invalid("control sequence does not match the horizon"));
        }
        let x = self.free_response(x0)? + &self.b_tilde * u.values();
        StackedState::from_vector(self.params, x)
    }

    pub(crate) fn check_state(&self, x0: &MultiDofState) -> Result<()> {
        if x0.n_dof() != self.params.n_dof() {
            return Err(Error::invalid(format!(
                "initial state has {} DOFs, model has {}",
                x0.n_dof(),
                self.params.n_dof()
            )));
        }
        Ok(())
    }
}
