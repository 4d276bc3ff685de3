//! Run configuration file (TOML). Every field is optional; command-line
//! flags override file values. Relative paths are resolved against the
//! directory holding the file, and every input path must exist at load.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use jerktrack::mpc::GainProfile;
use jerktrack::predictors::DybmConfig;
use jerktrack::sim::SwitchSchedule;
use jerktrack::training::TrainConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub train: Option<TrainConfig>,
    pub dybm: Option<DybmConfig>,
    pub mpc: MpcSection,
    pub sim: SimSection,
    pub eval: EvalSection,
    pub serve: ServeSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: Option<String>,
    /// Trained model file used by `simulate` and `serve`.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSection {
    pub horizon: Option<usize>,
    pub dt: Option<f64>,
    /// Relative jerk penalty.
    pub beta: Option<f64>,
    pub gains: Option<GainProfile>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub modes: Option<Vec<String>>,
    pub sequence: Option<PathBuf>,
    pub id: Option<String>,
    pub letter: Option<char>,
    pub meters_per_unit: Option<f64>,
    pub warmup: Option<usize>,
    pub tail_steps: Option<usize>,
    pub switch: Option<SwitchSchedule>,
    /// `predictor` or `perfect`.
    pub switch_source: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Row label to model file, or `builtin:<kind>`.
    pub models: BTreeMap<String, String>,
    /// Labels evaluated with online learning on.
    pub online: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub addr: Option<String>,
    pub retain_online: Option<bool>,
    pub ramp_ticks: Option<usize>,
    pub warmup: Option<usize>,
    pub queue_capacity: Option<usize>,
}

pub const BUILTIN_PREFIX: &str = "builtin:";

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.check_inputs()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.out_dir,
            &mut self.corpus.train,
            &mut self.corpus.test,
            &mut self.model.path,
            &mut self.sim.sequence,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for v in self.eval.models.values_mut() {
            if !v.starts_with(BUILTIN_PREFIX) && Path::new(v).is_relative() {
                *v = base.join(&*v).to_string_lossy().into_owned();
            }
        }
    }

    fn check_inputs(&self) -> Result<(), CliError> {
        let mut inputs: Vec<&Path> = [&self.corpus.train, &self.corpus.test, &self.model.path, &self.sim.sequence]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .collect();
        inputs.extend(self.eval.models.values().filter(|v| !v.starts_with(BUILTIN_PREFIX)).map(Path::new));
        match inputs.into_iter().find(|p| !p.exists()) {
            Some(p) => Err(CliError::Usage(format!("config refers to a missing file: {}", p.display()))),
            None => Ok(()),
        }
    }
}
