//! Fixed random leaky-integrator reservoir.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsnConfig {
    pub size: usize,
    /// Leak rate ρ in `h ← (1−ρ)h + ρ·tanh(W_rec h + W_in v)`.
    pub leak: f64,
    pub spectral_radius: f64,
    /// Input weights are uniform in `[−input_scale, input_scale]`.
    pub input_scale: f64,
    pub seed: u64,
}

impl Default for EsnConfig {
    fn default() -> Self {
        Self { size: 50, leak: 0.7, spectral_radius: 0.95, input_scale: 0.1, seed: 0x5eed }
    }
}

impl EsnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::invalid("reservoir size must be positive"));
        }
        if !(self.leak > 0.0 && self.leak <= 1.0) {
            return Err(Error::invalid("reservoir leak must lie in (0, 1]"));
        }
        if !(self.spectral_radius.is_finite() && self.spectral_radius >= 0.0) {
            return Err(Error::invalid("spectral radius must be finite and nonnegative"));
        }
        if !(self.input_scale.is_finite() && self.input_scale >= 0.0) {
            return Err(Error::invalid("input scale must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    config: EsnConfig,
    w_in: DMatrix<f64>,
    w_rec: DMatrix<f64>,
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl Reservoir {
    /// Draws the weights from `config.seed`. The same config and input
    /// width always produce bit-identical matrices.
    pub fn generate(config: EsnConfig, n_in: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.size;
        let w_in = DMatrix::from_fn(n, n_in, |_, _| rng.random_range(-1.0..=1.0) * config.input_scale);
        let mut w_rec = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let radius = spectral_radius(&w_rec);
        if radius > 0.0 {
            w_rec *= config.spectral_radius / radius;
        }
        Ok(Self { config, w_in, w_rec })
    }

    pub fn from_weights(config: EsnConfig, w_in: DMatrix<f64>, w_rec: DMatrix<f64>) -> Result<Self> {
        config.validate()?;
        if w_rec.shape() != (config.size, config.size) || w_in.nrows() != config.size {
            return Err(Error::invalid("reservoir weight shapes do not match its size"));
        }
        Ok(Self { config, w_in, w_rec })
    }

    pub fn config(&self) -> &EsnConfig {
        &self.config
    }

    pub fn size(&self) -> usize {
        self.config.size
    }

    pub fn n_in(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn w_rec(&self) -> &DMatrix<f64> {
        &self.w_rec
    }

    pub fn w_in(&self) -> &DMatrix<f64> {
        &self.w_in
    }

    pub fn update(&self, h: &mut DVector<f64>, v: &[f64]) {
        let drive = &self.w_rec * &*h + &self.w_in * DVector::from_column_slice(v);
        let rho = self.config.leak;
        h.zip_apply(&drive, |hi, di| *hi = (1.0 - rho) * *hi + rho * di.tanh());
    }

    pub fn checksum(&self) -> String {
        super::checksum([self.w_in.as_slice(), self.w_rec.as_slice()])
    }
}

/// One leaky reservoir update of `h` driven by `v`.
pub fn esn_update(reservoir: &Reservoir, h: &mut DVector<f64>, v: &[f64]) {
    reservoir.update(h, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_decay_by_one_minus_leak() {
        let cfg = EsnConfig { size: 4, ..Default::default() };
        let r = Reservoir::from_weights(cfg, DMatrix::zeros(4, 2), DMatrix::zeros(4, 4)).unwrap();
        let mut h = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0]);
        esn_update(&r, &mut h, &[3.0, 3.0]);
        for (got, want) in h.iter().zip([0.3, -0.6, 0.15, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn generated_reservoir_has_requested_radius() {
        let r = Reservoir::generate(EsnConfig::default(), 2).unwrap();
        assert!((spectral_radius(r.w_rec()) - 0.95).abs() < 1e-9);
        assert!(r.w_in().iter().all(|w| w.abs() <= 0.1));
        assert_eq!(r, Reservoir::generate(EsnConfig::default(), 2).unwrap());
        let other = Reservoir::generate(EsnConfig { seed: 1, ..Default::default() }, 2).unwrap();
        assert_ne!(r.checksum(), other.checksum());
    }

    #[test]
    fn state_stays_in_unit_box() {
        let r = Reservoir::generate(EsnConfig { input_scale: 5.0, ..Default::default() }, 2).unwrap();
        let mut h = DVector::zeros(50);
        for k in 0..500 {
            let x = (k as f64 * 0.37).sin() * 50.0;
            r.update(&mut h, &[x, -x]);
            assert!(h.amax() <= 1.0);
        }
    }

    /// Growth-rate estimate ‖Wᵏx‖^(1/k), independent of the eigen-solver
    /// used for scaling.
    fn power_radius(w: &DMatrix<f64>, k: usize) -> f64 {
        let mut x = DVector::from_element(w.nrows(), 1.0);
        let mut log_growth = 0.0;
        for _ in 0..k {
            x = w * x;
            let n = x.norm();
            log_growth += n.ln();
            x /= n;
        }
        (log_growth / k as f64).exp()
    }

    #[test]
    fn impulse_response_decays() {
        let r = Reservoir::generate(EsnConfig::default(), 2).unwrap();
        let est = power_radius(r.w_rec(), 2000);
        assert!(est < 1.0, "power estimate {est}");
        let mut h = DVector::zeros(50);
        r.update(&mut h, &[1.0, 1.0]);
        let start = h.norm();
        for _ in 0..200 {
            r.update(&mut h, &[0.0, 0.0]);
        }
        assert!(h.norm() < 1e-2 * start, "{} vs {}", h.norm(), start);
    }
}
