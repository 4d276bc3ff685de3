//! Single-layer LSTM with a linear readout, plus backpropagation through
//! time for training.
//!
//! Gate pre-activations are stacked as `[input; forget; candidate; output]`:
//!
//! ```text
//! a = W_x x + W_h h + b
//! i = σ(a_i)  f = σ(a_f)  g = tanh(a_g)  o = σ(a_o)
//! c' = f ⊙ c + i ⊙ g      h' = o ⊙ tanh(c')
//! ŷ = W_y h' + b_y
//! ```
//!
//! Trained one step ahead: after consuming `x_t` the readout predicts `x_{t+1}`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_horizon, check_input, ModelBody, ModelFile, Predictor, PredictorKind};
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_x: DMatrix<f64>,
    pub w_h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub w_y: DMatrix<f64>,
    pub b_y: DVector<f64>,
}

impl LstmParams {
    pub fn zeros(n_in: usize, hidden: usize, n_out: usize) -> Self {
        Self {
            w_x: DMatrix::zeros(4 * hidden, n_in),
            w_h: DMatrix::zeros(4 * hidden, hidden),
            b: DVector::zeros(4 * hidden),
            w_y: DMatrix::zeros(n_out, hidden),
            b_y: DVector::zeros(n_out),
        }
    }

    /// Uniform in `±1/√hidden`, forget-gate bias 1.
    pub fn random(n_in: usize, hidden: usize, n_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (hidden as f64).sqrt();
        let mut p = Self::zeros(n_in, hidden, n_out);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.random_range(-k..k);
            }
        }
        p.b.rows_mut(hidden, hidden).fill(1.0);
        p
    }

    pub fn n_in(&self) -> usize {
        self.w_x.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w_h.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.w_y.nrows()
    }

    pub fn tensors(&self) -> [&[f64]; 5] {
        [self.w_x.as_slice(), self.w_h.as_slice(), self.b.as_slice(), self.w_y.as_slice(), self.b_y.as_slice()]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w_x.as_mut_slice(),
            self.w_h.as_mut_slice(),
            self.b.as_mut_slice(),
            self.w_y.as_mut_slice(),
            self.b_y.as_mut_slice(),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::invalid("flat parameter vector has the wrong length"));
        }
        let mut rest = flat;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        let ok = self.w_x.nrows() == 4 * h
            && self.w_h.nrows() == 4 * h
            && self.b.len() == 4 * h
            && self.w_y.ncols() == h
            && self.b_y.len() == self.w_y.nrows()
            && h > 0;
        if !ok {
            return Err(Error::ModelCorrupt("LSTM parameter shapes are inconsistent".into()));
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::ModelCorrupt("LSTM parameters are not finite".into()));
        }
        Ok(())
    }

    pub fn readout(&self, h: &DVector<f64>) -> DVector<f64> {
        &self.w_y * h + &self.b_y
    }

    fn step(&self, cell: &LstmCell, x: &DVector<f64>) -> (LstmCell, StepCache) {
        let n = self.hidden();
        let a = &self.w_x * x + &self.w_h * &cell.h + &self.b;
        let i = a.rows(0, n).map(sigmoid);
        let f = a.rows(n, n).map(sigmoid);
        let g = a.rows(2 * n, n).map(f64::tanh);
        let o = a.rows(3 * n, n).map(sigmoid);
        let c = f.component_mul(&cell.c) + i.component_mul(&g);
        let tanh_c = c.map(f64::tanh);
        let h = o.component_mul(&tanh_c);
        let cache = StepCache { x: x.clone(), h_prev: cell.h.clone(), c_prev: cell.c.clone(), i, f, g, o, tanh_c };
        (LstmCell { h, c }, cache)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub h: DVector<f64>,
    pub c: DVector<f64>,
}

impl LstmCell {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: DVector::zeros(hidden), c: DVector::zeros(hidden) }
    }
}

struct StepCache {
    x: DVector<f64>,
    h_prev: DVector<f64>,
    c_prev: DVector<f64>,
    i: DVector<f64>,
    f: DVector<f64>,
    g: DVector<f64>,
    o: DVector<f64>,
    tanh_c: DVector<f64>,
}

/// A sequence zero-padded to a batch length. Only steps whose target lies
/// inside the real sequence contribute to the loss.
#[derive(Debug, Clone)]
pub struct PaddedSequence {
    inputs: Vec<DVector<f64>>,
    valid: usize,
}

impl PaddedSequence {
    pub fn new(samples: &[Vec<f64>], pad_to: usize) -> Result<Self> {
        let width = samples.first().map_or(0, |s| s.len());
        if samples.iter().any(|s| s.len() != width) {
            return Err(Error::invalid("samples in a sequence differ in width"));
        }
        let len = pad_to.max(samples.len());
        let mut inputs: Vec<_> = samples.iter().map(|s| DVector::from_column_slice(s)).collect();
        inputs.resize(len, DVector::zeros(width));
        Ok(Self { inputs, valid: samples.len() })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.valid
    }

    /// Whether the prediction made after input `t` is scored.
    pub fn mask(&self, t: usize) -> bool {
        t + 1 < self.valid
    }
}

/// Unnormalized squared-error sum, the number of scored scalars, and the
/// gradient of the sum.
#[derive(Debug, Clone)]
pub struct SequenceGrad {
    pub loss_sum: f64,
    pub count: usize,
    pub grad: LstmParams,
}

/// Forward pass only: `(Σ squared error, number of scored scalars)`.
pub fn sequence_loss(params: &LstmParams, seq: &PaddedSequence) -> (f64, usize) {
    let mut cell = LstmCell::zeros(params.hidden());
    let mut loss = 0.0;
    let mut count = 0;
    for t in 0..seq.len() {
        cell = params.step(&cell, &seq.inputs[t]).0;
        if seq.mask(t) {
            let err = params.readout(&cell.h) - &seq.inputs[t + 1];
            loss += err.norm_squared();
            count += err.len();
        }
    }
    (loss, count)
}

/// Forward and backward pass over one sequence, starting from a zero state.
pub fn sequence_loss_grad(params: &LstmParams, seq: &PaddedSequence) -> SequenceGrad {
    let n = params.hidden();
    let mut cell = LstmCell::zeros(n);
    let mut caches = Vec::with_capacity(seq.len());
    let mut outputs = Vec::with_capacity(seq.len());
    for x in &seq.inputs {
        let (next, cache) = params.step(&cell, x);
        outputs.push((params.readout(&next.h), next.h.clone()));
        caches.push(cache);
        cell = next;
    }

    let mut grad = LstmParams::zeros(params.n_in(), n, params.n_out());
    let mut loss_sum = 0.0;
    let mut count = 0;
    let mut dh_next = DVector::<f64>::zeros(n);
    let mut dc_next = DVector::<f64>::zeros(n);
    let last_scored = (0..seq.len()).rev().find(|&t| seq.mask(t));
    let Some(last_scored) = last_scored else {
        return SequenceGrad { loss_sum, count, grad };
    };
    // steps after the last scored prediction cannot affect the loss
    for t in (0..=last_scored).rev() {
        let cache = &caches[t];
        let (y_hat, h) = &outputs[t];
        let mut dh = dh_next.clone();
        if seq.mask(t) {
            let err = y_hat - &seq.inputs[t + 1];
            loss_sum += err.norm_squared();
            count += err.len();
            let dy = err * 2.0;
            grad.w_y += &dy * h.transpose();
            grad.b_y += &dy;
            dh += params.w_y.transpose() * &dy;
        }
        let d_o = dh.component_mul(&cache.tanh_c);
        let dc = dh.component_mul(&cache.o).component_mul(&cache.tanh_c.map(|t| 1.0 - t * t)) + &dc_next;
        let d_f = dc.component_mul(&cache.c_prev);
        let d_i = dc.component_mul(&cache.g);
        let d_g = dc.component_mul(&cache.i);
        dc_next = dc.component_mul(&cache.f);

        let mut da = DVector::<f64>::zeros(4 * n);
        da.rows_mut(0, n).copy_from(&d_i.zip_map(&cache.i, |d, s| d * s * (1.0 - s)));
        da.rows_mut(n, n).copy_from(&d_f.zip_map(&cache.f, |d, s| d * s * (1.0 - s)));
        da.rows_mut(2 * n, n).copy_from(&d_g.zip_map(&cache.g, |d, s| d * (1.0 - s * s)));
        da.rows_mut(3 * n, n).copy_from(&d_o.zip_map(&cache.o, |d, s| d * s * (1.0 - s)));

        grad.w_x += &da * cache.x.transpose();
        grad.w_h += &da * cache.h_prev.transpose();
        grad.b += &da;
        dh_next = params.w_h.transpose() * &da;
    }
    SequenceGrad { loss_sum, count, grad }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    params: LstmParams,
    cell: LstmCell,
}

impl Lstm {
    pub fn new(params: LstmParams) -> Result<Self> {
        params.validate()?;
        let cell = LstmCell::zeros(params.hidden());
        Ok(Self { params, cell })
    }

    pub fn params(&self) -> &LstmParams {
        &self.params
    }

    pub fn cell(&self) -> &LstmCell {
        &self.cell
    }

    /// Consumes `v` and returns the prediction for the next sample.
    pub fn forward(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        check_input(v, self.params.n_in())?;
        self.cell = self.params.step(&self.cell, &DVector::from_column_slice(v)).0;
        self.predict_one()
    }
}

impl Predictor for Lstm {
    fn kind(&self) -> PredictorKind {
        PredictorKind::Lstm
    }

    fn n_dof(&self) -> usize {
        self.params.n_in()
    }

    fn observe(&mut self, velocity: &[f64]) -> Result<()> {
        self.forward(velocity).map(|_| ())
    }

    fn predict_one(&self) -> Result<Vec<f64>> {
        let y = self.params.readout(&self.cell.h);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelCorrupt("LSTM output is not finite".into()));
        }
        Ok(y.as_slice().to_vec())
    }

    fn rollout(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        check_horizon(n)?;
        if self.params.n_in() != self.params.n_out() {
            return Err(Error::ModelCorrupt("LSTM output cannot be fed back as input".into()));
        }
        let mut cell = self.cell.clone();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let y = self.params.readout(&cell.h);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::ModelCorrupt("LSTM rollout is not finite".into()));
            }
            cell = self.params.step(&cell, &y).0;
            out.push(y.as_slice().to_vec());
        }
        Ok(out)
    }

    fn reset(&mut self) {
        self.cell = LstmCell::zeros(self.params.hidden());
    }

    fn to_model_file(&self) -> ModelFile {
        ModelFile::new(self.params.n_in(), ModelBody::Lstm(super::file::LstmBody::from_params(&self.params)))
    }

    fn clone_box(&self) -> Box<dyn Predictor> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_seq(len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
    }

    #[test]
    fn zero_parameters_output_readout_bias() {
        let mut p = LstmParams::zeros(2, 10, 2);
        p.b_y.copy_from_slice(&[0.25, -0.5]);
        let mut m = Lstm::new(p).unwrap();
        assert_eq!(m.forward(&[1.0, 2.0]).unwrap(), vec![0.25, -0.5]);
        assert!(m.cell().c.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let p = LstmParams::random(2, 10, 2, 3);
        let mut a = Lstm::new(p.clone()).unwrap();
        let mut b = Lstm::new(p).unwrap();
        for v in random_seq(5, 1) {
            assert_eq!(a.forward(&v).unwrap(), b.forward(&v).unwrap());
        }
    }

    #[test]
    fn gates_stay_in_open_interval() {
        let p = LstmParams::random(2, 10, 2, 8);
        let mut cell = LstmCell::zeros(10);
        for v in random_seq(20, 2) {
            let (next, cache) = p.step(&cell, &DVector::from_vec(v));
            for gate in [&cache.i, &cache.f, &cache.o] {
                assert!(gate.iter().all(|&s| s > 0.0 && s < 1.0));
            }
            cell = next;
        }
    }

    #[test]
    fn rollout_then_observe_matches_plain_observe() {
        let p = LstmParams::random(2, 10, 2, 5);
        let mut with = Lstm::new(p.clone()).unwrap();
        let mut without = Lstm::new(p).unwrap();
        for v in random_seq(12, 4) {
            with.rollout(10).unwrap();
            with.observe(&v).unwrap();
            without.observe(&v).unwrap();
            assert_eq!(with, without);
        }
    }

    #[test]
    fn loss_and_grad_forward_agree() {
        let p = LstmParams::random(2, 10, 2, 6);
        let seq = PaddedSequence::new(&random_seq(7, 3), 0).unwrap();
        let g = sequence_loss_grad(&p, &seq);
        let (l, c) = sequence_loss(&p, &seq);
        assert_eq!(g.count, 12);
        assert_eq!(c, 12);
        assert!((g.loss_sum - l).abs() < 1e-12);
    }

    #[test]
    fn padding_changes_neither_loss_nor_gradient() {
        let p = LstmParams::random(2, 10, 2, 6);
        let raw = random_seq(9, 3);
        let a = sequence_loss_grad(&p, &PaddedSequence::new(&raw, 9).unwrap());
        let b = sequence_loss_grad(&p, &PaddedSequence::new(&raw, 25).unwrap());
        assert_eq!(a.loss_sum, b.loss_sum);
        assert_eq!(a.count, b.count);
        assert_eq!(a.grad, b.grad);
        assert_eq!(sequence_loss(&p, &PaddedSequence::new(&raw, 40).unwrap()).0, a.loss_sum);
    }

    #[test]
    fn flat_round_trip() {
        let p = LstmParams::random(2, 4, 2, 1);
        let mut q = LstmParams::zeros(2, 4, 2);
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.n_params(), 4 * 4 * 2 + 4 * 4 * 4 + 16 + 8 + 2);
        assert!(q.set_flat(&[0.0]).is_err());
    }

    #[test]
    fn corrupt_parameters_rejected() {
        let mut p = LstmParams::random(2, 4, 2, 1);
        p.w_h[(0, 0)] = f64::NAN;
        assert!(matches!(Lstm::new(p), Err(Error::ModelCorrupt(_))));
        let mut p = LstmParams::random(2, 4, 2, 1);
        p.b = DVector::zeros(3);
        assert!(Lstm::new(p).is_err());
    }
}
