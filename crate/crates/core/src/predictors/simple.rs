use super::{check_horizon, check_input, ModelBody, ModelFile, Predictor, PredictorKind};
use crate::error::Result;

/// Predicts no motion at all.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroMotion {
    n_dof: usize,
}

impl ZeroMotion {
    pub fn new(n_dof: usize) -> Self {
        Self { n_dof }
    }
}

impl Predictor for ZeroMotion {
    fn kind(&self) -> PredictorKind {
        PredictorKind::ZeroMotion
    }

    fn n_dof(&self) -> usize {
        self.n_dof
    }

    fn observe(&mut self, velocity: &[f64]) -> Result<()> {
        check_input(velocity, self.n_dof)
    }

    fn predict_one(&self) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.n_dof])
    }

    fn rollout(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        check_horizon(n)?;
        Ok(vec![vec![0.0; self.n_dof]; n])
    }

    fn reset(&mut self) {}

    fn to_model_file(&self) -> ModelFile {
        ModelFile::new(self.n_dof, ModelBody::ZeroMotion)
    }

    fn clone_box(&self) -> Box<dyn Predictor> {
        Box::new(self.clone())
    }
}

/// Repeats the last observed velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantVelocity {
    n_dof: usize,
    last: Option<Vec<f64>>,
}

impl ConstantVelocity {
    pub fn new(n_dof: usize) -> Self {
        Self { n_dof, last: None }
    }
}

impl Predictor for ConstantVelocity {
    fn kind(&self) -> PredictorKind {
        PredictorKind::ConstantVelocity
    }

    fn n_dof(&self) -> usize {
        self.n_dof
    }

    fn observe(&mut self, velocity: &[f64]) -> Result<()> {
        check_input(velocity, self.n_dof)?;
        self.last = Some(velocity.to_vec());
        Ok(())
    }

    fn predict_one(&self) -> Result<Vec<f64>> {
        Ok(self.last.clone().unwrap_or_else(|| vec![0.0; self.n_dof]))
    }

    fn rollout(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        check_horizon(n)?;
        Ok(vec![self.predict_one()?; n])
    }

    fn reset(&mut self) {
        self.last = None;
    }

    fn to_model_file(&self) -> ModelFile {
        ModelFile::new(self.n_dof, ModelBody::ConstantVelocity)
    }

    fn clone_box(&self) -> Box<dyn Predictor> {
        Box::new(self.clone())
    }
}
