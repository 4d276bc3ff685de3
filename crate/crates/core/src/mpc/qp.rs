use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower-triangular factor `L` with `H = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factors a symmetric positive-definite matrix. Only the lower triangle
    /// of `h` is read. A pivot that is not safely positive aborts with its index.
    pub fn factor(h: &DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        if n != h.ncols() {
            return Err(Error::invalid(format!("matrix is {}x{}, not square", n, h.ncols())));
        }
        let max_diag = (0..n).fold(0.0f64, |m, i| m.max(h[(i, i)].abs()));
        let floor = f64::EPSILON * n as f64 * max_diag;

        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = h[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            // negated so that a NaN pivot fails too
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(d > floor) {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = h[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.l.nrows();
        if b.len() != n {
            return Err(Error::invalid(format!("right-hand side has length {}, expected {n}", b.len())));
        }
        // L y = b
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        Ok(y)
    }
}

/// Minimizes `½ uᵀ H u − gᵀ u`, i.e. solves `H u = g` for SPD `H`.
pub fn solve_qp(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    if g.iter().any(|v| !v.is_finite()) || h.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("QP data must be finite"));
    }
    let n = h.nrows();
    let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..n.min(h.ncols()) {
        for j in 0..i {
            if (h[(i, j)] - h[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::invalid(format!("Hessian is not symmetric at ({i}, {j})")));
            }
        }
    }
    Cholesky::factor(h)?.solve(g)
}

/// `‖H u − g‖∞`, the gradient norm at `u`.
pub fn gradient_residual(h: &DMatrix<f64>, g: &DVector<f64>, u: &DVector<f64>) -> f64 {
    (h * u - g).amax()
}
