//! Condensed linear MPC over jerk-controlled triple integrators.
//!
//! The objective blends a conservative (hold-position) target and a
//! predicted target with a homotopy weight `α`, plus a small jerk penalty
//! `β`. After condensing, the problem has no constraints left, so each solve
//! is one SPD linear system.

mod condense;
mod objective;
mod qp;

pub use condense::{build_condensed, CondensedModel, DEFAULT_MEMORY_CAP};
pub use objective::{GainProfile, ObjectiveWeights, DEFAULT_BETA};
pub use qp::{gradient_residual, solve_qp, Cholesky};

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{ControlVector, MultiDofState, StackedControl, StackedState};
use crate::error::{Error, Result};

/// Quadratic form `uᵀ H u − 2 gᵀ u + const` of the objective in `ũ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub u_tilde: StackedControl,
    pub x_tilde: StackedState,
    pub objective_value: f64,
}

/// A condensed model with the gain-dependent parts of `H` and `g`
/// precomputed, so that a step only pays for the `α` blend and one solve.
#[derive(Debug, Clone)]
pub struct MpcController {
    model: CondensedModel,
    beta: f64,
    g_c: DVector<f64>,
    g_f: DVector<f64>,
    // B̃ᵀ G² B̃
    hess_c: DMatrix<f64>,
    hess_f: DMatrix<f64>,
    // B̃ᵀ G²
    proj_c: DMatrix<f64>,
    proj_f: DMatrix<f64>,
}

impl MpcController {
    /// Builds a controller from the gains and `β` of `weights`; `α` is
    /// supplied per step.
    pub fn new(model: CondensedModel, weights: &ObjectiveWeights) -> Result<Self> {
        weights.validate()?;
        weights.check_params(model.params())?;
        let g_c = DVector::from_column_slice(&weights.g_c);
        let g_f = DVector::from_column_slice(&weights.g_f);
        let (proj_c, hess_c) = projections(model.b_tilde(), &g_c);
        let (proj_f, hess_f) = projections(model.b_tilde(), &g_f);
        Ok(Self { model, beta: weights.beta, g_c, g_f, hess_c, hess_f, proj_c, proj_f })
    }

    pub fn model(&self) -> &CondensedModel {
        &self.model
    }

    /// Assembles `H` and `g`. A term whose weight is exactly zero is
    /// skipped, so its target cannot influence the result at all.
    pub fn assemble(
        &self,
        x0: &MultiDofState,
        conservative: &StackedState,
        predicted: &StackedState,
        alpha: f64,
    ) -> Result<QuadraticForm> {
        objective::check_alpha(alpha)?;
        self.check_target(conservative, "conservative")?;
        self.check_target(predicted, "predicted")?;
        let free = self.model.free_response(x0)?;
        let n = self.model.params().control_len();

        let mut h = DMatrix::<f64>::identity(n, n) * self.beta;
        let mut g = DVector::<f64>::zeros(n);
        if alpha < 1.0 {
            h += &self.hess_c * (1.0 - alpha);
            g += (&self.proj_c * (conservative.values() - &free)) * (1.0 - alpha);
        }
        if alpha > 0.0 {
            h += &self.hess_f * alpha;
            g += (&self.proj_f * (predicted.values() - &free)) * alpha;
        }
        Ok(QuadraticForm { h, g })
    }

    pub fn objective_value(
        &self,
        x_tilde: &StackedState,
        u_tilde: &StackedControl,
        conservative: &StackedState,
        predicted: &StackedState,
        alpha: f64,
    ) -> f64 {
        let x = x_tilde.values();
        let mut j = self.beta * u_tilde.values().norm_squared();
        if alpha < 1.0 {
            j += (1.0 - alpha) * (conservative.values() - x).component_mul(&self.g_c).norm_squared();
        }
        if alpha > 0.0 {
            j += alpha * (predicted.values() - x).component_mul(&self.g_f).norm_squared();
        }
        j
    }

    /// Solves the horizon problem and returns the first jerks with the full
    /// solution.
    pub fn step(
        &self,
        x0: &MultiDofState,
        conservative: &StackedState,
        predicted: &StackedState,
        alpha: f64,
    ) -> Result<(ControlVector, MpcSolution)> {
        let form = self.assemble(x0, conservative, predicted, alpha)?;
        let params = self.model.params();
        let u_tilde = StackedControl::from_vector(params, solve_qp(&form.h, &form.g)?)?;
        let x_tilde = self.model.predict(x0, &u_tilde)?;
        let objective_value = self.objective_value(&x_tilde, &u_tilde, conservative, predicted, alpha);
        let first = u_tilde.first();
        Ok((first, MpcSolution { u_tilde, x_tilde, objective_value }))
    }

    fn check_target(&self, target: &StackedState, name: &str) -> Result<()> {
        let p = self.model.params();
        if target.params().n_steps() != p.n_steps() || target.params().n_dof() != p.n_dof() {
            return Err(Error::invalid(format!("{name} target does not match the horizon")));
        }
        if target.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{name} target is not finite")));
        }
        Ok(())
    }
}

fn projections(b_tilde: &DMatrix<f64>, gain: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let squared = gain.component_mul(gain);
    // G² B̃, then transposed to B̃ᵀ G²
    let mut weighted = b_tilde.clone();
    for (mut row, w) in weighted.row_iter_mut().zip(squared.iter()) {
        row *= *w;
    }
    let proj = weighted.transpose();
    let hess = &proj * b_tilde;
    (proj, hess)
}

/// Mean diagonal of `B̃ᵀ G² B̃`: the curvature one unit of jerk adds to the
/// tracking term. Jerk in physical units makes this tiny (of order `dt⁶`),
/// so a fixed `β` means very different things at different `dt`;
/// multiplying a relative `β` by this scale keeps the trade-off fixed.
/// Falls back to 1 when every gain is zero.
pub fn beta_scale(model: &CondensedModel, gain: &[f64]) -> Result<f64> {
    if gain.len() != model.params().state_len() {
        return Err(Error::invalid("gain diagonal does not match the horizon"));
    }
    let b = model.b_tilde();
    let n = b.ncols();
    let trace: f64 = (0..n)
        .map(|j| b.column(j).iter().zip(gain).map(|(x, g)| (g * x).powi(2)).sum::<f64>())
        .sum();
    let scale = trace / n as f64;
    Ok(if scale > 0.0 { scale } else { 1.0 })
}

/// `H` and `g` of the objective for one set of targets.
pub fn assemble_targets(
    conservative: &StackedState,
    predicted: &StackedState,
    x0: &MultiDofState,
    model: &CondensedModel,
    weights: &ObjectiveWeights,
) -> Result<QuadraticForm> {
    MpcController::new(model.clone(), weights)?.assemble(x0, conservative, predicted, weights.alpha)
}

/// One receding-horizon step: assemble, solve, and return the first jerks.
pub fn mpc_step(
    x0: &MultiDofState,
    conservative: &StackedState,
    predicted: &StackedState,
    model: &CondensedModel,
    weights: &ObjectiveWeights,
) -> Result<(ControlVector, MpcSolution)> {
    MpcController::new(model.clone(), weights)?.step(x0, conservative, predicted, weights.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Component, DofState, HorizonParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(params: HorizonParams, rng: &mut ChaCha8Rng) -> StackedState {
        let v = DVector::from_fn(params.state_len(), |_, _| rng.random_range(-1.0..1.0));
        StackedState::from_vector(params, v).unwrap()
    }

    fn random_x0(d: usize, rng: &mut ChaCha8Rng) -> MultiDofState {
        MultiDofState::new(
            (0..d)
                .map(|_| DofState::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    fn setup(n: usize, d: usize, alpha: f64) -> (CondensedModel, ObjectiveWeights) {
        let p = HorizonParams::new(n, 0.05, d).unwrap();
        let w = ObjectiveWeights::tracking(p, alpha, 1e-3, &GainProfile::default()).unwrap();
        (build_condensed(p).unwrap(), w)
    }

    #[test]
    fn alpha_zero_ignores_predicted_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, w) = setup(6, 2, 0.0);
        let x0 = random_x0(2, &mut rng);
        let c = random_state(m.params(), &mut rng);
        let a = assemble_targets(&c, &random_state(m.params(), &mut rng), &x0, &m, &w).unwrap();
        let b = assemble_targets(&c, &random_state(m.params(), &mut rng), &x0, &m, &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn alpha_one_ignores_conservative_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (m, w) = setup(6, 2, 1.0);
        let x0 = random_x0(2, &mut rng);
        let f = random_state(m.params(), &mut rng);
        let a = assemble_targets(&random_state(m.params(), &mut rng), &f, &x0, &m, &w).unwrap();
        let b = assemble_targets(&random_state(m.params(), &mut rng), &f, &x0, &m, &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_gains_with_equal_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = HorizonParams::new(4, 0.1, 2).unwrap();
        let m = build_condensed(p).unwrap();
        let ones = vec![1.0; p.state_len()];
        let w = ObjectiveWeights::new(0.5, 1e-4, ones.clone(), ones).unwrap();
        let x0 = random_x0(2, &mut rng);
        let t = random_state(p, &mut rng);
        let form = assemble_targets(&t, &t, &x0, &m, &w).unwrap();
        let b = m.b_tilde();
        let want_h = b.transpose() * b + DMatrix::identity(8, 8) * 1e-4;
        let want_g = b.transpose() * (t.values() - m.a_tilde() * x0.to_vector());
        assert!((&form.h - want_h).amax() < 1e-12);
        assert!((&form.g - want_g).amax() < 1e-12);
    }

    /// Recovers H and g from objective evaluations alone: with
    /// J(u) = uᵀHu − 2gᵀu + c, polarization gives both exactly.
    #[test]
    fn assembled_form_matches_objective_polarization() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = HorizonParams::new(3, 0.1, 2).unwrap();
        let m = build_condensed(p).unwrap();
        let g_c: Vec<f64> = (0..p.state_len()).map(|_| rng.random_range(0.0..2.0)).collect();
        let g_f: Vec<f64> = (0..p.state_len()).map(|_| rng.random_range(0.0..2.0)).collect();
        let w = ObjectiveWeights::new(0.3, 1e-2, g_c, g_f).unwrap();
        let ctl = MpcController::new(m.clone(), &w).unwrap();
        let x0 = random_x0(2, &mut rng);
        let c = random_state(p, &mut rng);
        let f = random_state(p, &mut rng);
        let j = |u: &DVector<f64>| {
            let u = StackedControl::from_vector(p, u.clone()).unwrap();
            let x = m.predict(&x0, &u).unwrap();
            ctl.objective_value(&x, &u, &c, &f, 0.3)
        };
        let n = p.control_len();
        let e = |i: usize| DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
        let j0 = j(&DVector::zeros(n));
        let form = ctl.assemble(&x0, &c, &f, 0.3).unwrap();
        for i in 0..n {
            let g_i = -(j(&e(i)) - j(&(-e(i)))) / 4.0;
            assert!((g_i - form.g[i]).abs() < 1e-9 * (1.0 + g_i.abs()), "g[{i}]");
            for k in 0..n {
                let h_ik = (j(&(e(i) + e(k))) - j(&(e(i) - e(k))) - j(&(e(k) - e(i))) + j(&(-e(i) - e(k)))) / 8.0;
                assert!((h_ik - form.h[(i, k)]).abs() < 1e-9 * (1.0 + h_ik.abs()), "h[{i},{k}]");
            }
        }
        assert!(j0.is_finite());
    }

    #[test]
    fn at_rest_on_target_needs_no_jerk() {
        let (m, w) = setup(10, 2, 0.5);
        let x0 = MultiDofState::at_rest(&[0.3, -0.2]).unwrap();
        let t = StackedState::hold(m.params(), &[0.3, -0.2]).unwrap();
        let (u, sol) = mpc_step(&x0, &t, &t, &m, &w).unwrap();
        assert!(u.max_abs() < 1e-8);
        assert!(sol.objective_value < 1e-12);
    }

    #[test]
    fn feedback_pushes_toward_target() {
        let p = HorizonParams::new(10, 0.01, 1).unwrap();
        let m = build_condensed(p).unwrap();
        let w = ObjectiveWeights::tracking(p, 0.0, DEFAULT_BETA, &GainProfile::default()).unwrap();
        let x0 = MultiDofState::at_rest(&[0.0]).unwrap();
        let c = StackedState::hold(p, &[0.05]).unwrap();
        let (u, sol) = mpc_step(&x0, &c, &c, &m, &w).unwrap();
        assert!(u.jerks()[0] > 0.0);
        let form = assemble_targets(&c, &c, &x0, &m, &w).unwrap();
        assert_eq!(sol.u_tilde.values(), &solve_qp(&form.h, &form.g).unwrap());
        let x_check = m.a_tilde() * x0.to_vector() + m.b_tilde() * sol.u_tilde.values();
        assert!((x_check - sol.x_tilde.values()).amax() < 1e-9);
        // the plan ends near the target
        assert!(sol.x_tilde.get(9, 0, Component::Position) > 0.0);
    }

    #[test]
    fn dofs_decouple() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m2, w2) = setup(5, 2, 0.4);
        let (m1, w1) = setup(5, 1, 0.4);
        let x0 = random_x0(2, &mut rng);
        let c = random_state(m2.params(), &mut rng);
        let f = random_state(m2.params(), &mut rng);
        let (_, joint) = mpc_step(&x0, &c, &f, &m2, &w2).unwrap();
        for dof in 0..2 {
            let slice = |s: &StackedState| {
                let mut out = StackedState::zeros(m1.params());
                for step in 0..5 {
                    for comp in [Component::Position, Component::Velocity, Component::Acceleration] {
                        out.set(step, 0, comp, s.get(step, dof, comp));
                    }
                }
                out
            };
            let x1 = MultiDofState::new(vec![x0.dofs()[dof]]).unwrap();
            let (_, single) = mpc_step(&x1, &slice(&c), &slice(&f), &m1, &w1).unwrap();
            for step in 0..5 {
                assert!((single.u_tilde.get(step, 0) - joint.u_tilde.get(step, dof)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn solution_is_continuous_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (m, w) = setup(10, 2, 0.0);
        let ctl = MpcController::new(m.clone(), &w).unwrap();
        let x0 = random_x0(2, &mut rng);
        let c = random_state(m.params(), &mut rng);
        let f = random_state(m.params(), &mut rng);
        let solve = |a: f64| ctl.step(&x0, &c, &f, a).unwrap().1.u_tilde.values().clone();
        let steps = 200;
        let mut lipschitz = 0.0f64;
        let mut prev = solve(0.0);
        for k in 1..=steps {
            let a = k as f64 / steps as f64;
            let cur = solve(a);
            lipschitz = lipschitz.max((&cur - &prev).norm() * steps as f64);
            prev = cur;
        }
        // no jump at the endpoints relative to the interior
        let near0 = (solve(1e-9) - solve(0.0)).norm() / 1e-9;
        let near1 = (solve(1.0) - solve(1.0 - 1e-9)).norm() / 1e-9;
        assert!(lipschitz.is_finite());
        assert!(near0 <= 2.0 * lipschitz && near1 <= 2.0 * lipschitz);
    }

    #[test]
    fn rejects_mismatched_targets() {
        let (m, w) = setup(4, 2, 0.5);
        let x0 = MultiDofState::at_rest(&[0.0, 0.0]).unwrap();
        let good = StackedState::zeros(m.params());
        let bad = StackedState::zeros(HorizonParams::new(3, 0.05, 2).unwrap());
        assert!(mpc_step(&x0, &bad, &good, &m, &w).is_err());
        assert!(mpc_step(&x0, &good, &bad, &m, &w).is_err());
        assert!(MpcController::new(m.clone(), &w).unwrap().step(&x0, &good, &good, 1.1).is_err());
    }
}
