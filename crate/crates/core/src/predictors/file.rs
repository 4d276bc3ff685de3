//! JSON model files. Floats round-trip bit-exactly; ESN reservoirs are not
//! stored but regenerated from their config and checked against a checksum.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{checksum, ConstantVelocity, Dybm, DybmConfig, Lstm, LstmParams, Predictor, PredictorKind, ZeroMotion};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "jerktrack-model";
pub const MODEL_VERSION: u32 = 1;

/// A dense array; matrices are stored column-major with shape `[rows, cols]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self { shape: vec![m.nrows(), m.ncols()], data: m.as_slice().to_vec() }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self { shape: vec![v.len()], data: v.as_slice().to_vec() }
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ModelCorrupt(format!("{what}: shape {:?} does not match {} values", self.shape, self.data.len())));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelCorrupt(format!("{what}: non-finite value")));
        }
        Ok(())
    }

    pub fn to_matrix(&self, what: &str) -> Result<DMatrix<f64>> {
        self.check(what)?;
        match self.shape[..] {
            [r, c] => Ok(DMatrix::from_column_slice(r, c, &self.data)),
            _ => Err(Error::ModelCorrupt(format!("{what}: expected a matrix, shape {:?}", self.shape))),
        }
    }

    pub fn to_vector(&self, what: &str) -> Result<DVector<f64>> {
        self.check(what)?;
        match self.shape[..] {
            [n] => Ok(DVector::from_column_slice(&self.data[..n])),
            _ => Err(Error::ModelCorrupt(format!("{what}: expected a vector, shape {:?}", self.shape))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DybmBody {
    pub config: DybmConfig,
    pub weights: Tensor,
    pub bias: Tensor,
    /// AdaGrad accumulators, so online learning resumes where it stopped.
    pub sq_weights: Tensor,
    pub sq_bias: Tensor,
    pub reservoir_checksum: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmBody {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
    pub w_y: Tensor,
    pub b_y: Tensor,
}

impl LstmBody {
    pub fn from_params(p: &LstmParams) -> Self {
        Self {
            w_x: Tensor::from_matrix(&p.w_x),
            w_h: Tensor::from_matrix(&p.w_h),
            b: Tensor::from_vector(&p.b),
            w_y: Tensor::from_matrix(&p.w_y),
            b_y: Tensor::from_vector(&p.b_y),
        }
    }

    pub fn to_params(&self) -> Result<LstmParams> {
        let p = LstmParams {
            w_x: self.w_x.to_matrix("w_x")?,
            w_h: self.w_h.to_matrix("w_h")?,
            b: self.b.to_vector("b")?,
            w_y: self.w_y.to_matrix("w_y")?,
            b_y: self.b_y.to_vector("b_y")?,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelBody {
    ZeroMotion,
    ConstantVelocity,
    Dybm(DybmBody),
    DybmEsn(DybmBody),
    Lstm(LstmBody),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub n_dof: usize,
    pub model: ModelBody,
}

impl ModelFile {
    pub fn new(n_dof: usize, model: ModelBody) -> Self {
        Self { format: MODEL_FORMAT.to_string(), version: MODEL_VERSION, n_dof, model }
    }

    pub fn kind(&self) -> PredictorKind {
        match self.model {
            ModelBody::ZeroMotion => PredictorKind::ZeroMotion,
            ModelBody::ConstantVelocity => PredictorKind::ConstantVelocity,
            ModelBody::Dybm(_) => PredictorKind::Dybm,
            ModelBody::DybmEsn(_) => PredictorKind::DybmEsn,
            ModelBody::Lstm(_) => PredictorKind::Lstm,
        }
    }

    /// Hash of the learned parameters; optimizer state and config are excluded.
    pub fn parameter_checksum(&self) -> String {
        match &self.model {
            ModelBody::ZeroMotion | ModelBody::ConstantVelocity => checksum([]),
            ModelBody::Dybm(b) | ModelBody::DybmEsn(b) => checksum([&b.weights.data[..], &b.bias.data[..]]),
            ModelBody::Lstm(b) => {
                checksum([&b.w_x.data[..], &b.w_h.data[..], &b.b.data[..], &b.w_y.data[..], &b.b_y.data[..]])
            }
        }
    }

    pub fn into_predictor(self) -> Result<Box<dyn Predictor>> {
        if self.format != MODEL_FORMAT {
            return Err(Error::ModelCorrupt(format!("unknown model format {:?}", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::ModelCorrupt(format!("unsupported model version {}", self.version)));
        }
        let n_dof = self.n_dof;
        if n_dof == 0 {
            return Err(Error::ModelCorrupt("model has zero DOFs".into()));
        }
        let model: Box<dyn Predictor> = match self.model {
            ModelBody::ZeroMotion => Box::new(ZeroMotion::new(n_dof)),
            ModelBody::ConstantVelocity => Box::new(ConstantVelocity::new(n_dof)),
            ModelBody::Dybm(b) | ModelBody::DybmEsn(b) => Box::new(dybm_from_body(b, n_dof)?),
            ModelBody::Lstm(b) => {
                let m = Lstm::new(b.to_params()?)?;
                if m.n_dof() != n_dof || m.params().n_out() != n_dof {
                    return Err(Error::ModelCorrupt("LSTM width does not match the declared DOFs".into()));
                }
                Box::new(m)
            }
        };
        Ok(model)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn dybm_from_body(b: DybmBody, n_dof: usize) -> Result<Dybm> {
    if b.config.n_dof != n_dof {
        return Err(Error::ModelCorrupt("DyBM config does not match the declared DOFs".into()));
    }
    let online = b.config.online;
    let m = Dybm::from_parts(
        b.config,
        b.weights.to_matrix("weights")?,
        b.bias.to_vector("bias")?,
        Some((b.sq_weights.to_matrix("sq_weights")?, b.sq_bias.to_vector("sq_bias")?)),
    )?;
    let regenerated = m.reservoir().map(|r| r.checksum());
    if regenerated != b.reservoir_checksum {
        return Err(Error::ModelCorrupt(format!(
            "reservoir checksum mismatch: stored {:?}, regenerated {:?}",
            b.reservoir_checksum, regenerated
        )));
    }
    let mut m = m;
    m.set_learning(online);
    Ok(m)
}

pub fn save_model(model: &dyn Predictor, path: &Path) -> Result<()> {
    model.to_model_file().write(path)
}

pub fn load_model(path: &Path) -> Result<Box<dyn Predictor>> {
    ModelFile::read(path)?.into_predictor()
}
