//! Closed-loop tracking of a recorded stroke by a jerk-controlled 2-D plant.
//!
//! Each step reveals the next reference sample to the predictor, builds the
//! conservative (hold) target and the mode's feedforward target, solves one
//! MPC problem and applies the first jerk to the plant. Positions are
//! converted to meters with `meters_per_unit`.
//!
//! `alpha` in traces is the feedforward weight of the objective: 0 tracks
//! the conservative target only, 1 the predicted target only. Switching
//! schedules are written in terms of the feedback weight `w = 1 − alpha`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::NormalizedSequence;
use crate::dynamics::{HorizonParams, MultiDofState, StackedState};
use crate::error::{Error, Result};
use crate::mpc::{beta_scale, CondensedModel, GainProfile, MpcController, ObjectiveWeights, DEFAULT_BETA};
use crate::predictors::{perfect_predict, MotionPredictor, Predictor, PredictionTarget, DEFAULT_WARMUP};

/// Linear ramp of the feedback weight between two steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwitchSchedule {
    pub start_step: usize,
    pub end_step: usize,
    pub from_weight: f64,
    pub to_weight: f64,
}

impl Default for SwitchSchedule {
    fn default() -> Self {
        Self { start_step: 30, end_step: 40, from_weight: 1.0, to_weight: 0.0 }
    }
}

impl SwitchSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.start_step >= self.end_step {
            return Err(Error::invalid("switch schedule must start before it ends"));
        }
        for w in [self.from_weight, self.to_weight] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(format!("switch weight {w} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Feedback weight at step `k`.
    pub fn alpha_at(&self, k: usize) -> f64 {
        if k <= self.start_step {
            self.from_weight
        } else if k >= self.end_step {
            self.to_weight
        } else {
            let s = (k - self.start_step) as f64 / (self.end_step - self.start_step) as f64;
            self.from_weight + s * (self.to_weight - self.from_weight)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedforwardSource {
    Predictor,
    Perfect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SimMode {
    FeedbackOnly,
    WithPrediction,
    PerfectPrediction,
    Switching { schedule: SwitchSchedule, source: FeedforwardSource },
}

impl SimMode {
    pub fn name(&self) -> &'static str {
        match self {
            SimMode::FeedbackOnly => "feedback-only",
            SimMode::WithPrediction => "with-prediction",
            SimMode::PerfectPrediction => "perfect-prediction",
            SimMode::Switching { .. } => "switching",
        }
    }

    /// Parses a mode name; `switching` uses the default schedule with
    /// predictor feedforward.
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "feedback-only" => SimMode::FeedbackOnly,
            "with-prediction" => SimMode::WithPrediction,
            "perfect-prediction" => SimMode::PerfectPrediction,
            "switching" => SimMode::Switching { schedule: SwitchSchedule::default(), source: FeedforwardSource::Predictor },
            _ => return Err(Error::invalid(format!("unknown simulation mode {name:?}"))),
        })
    }

    fn needs_predictor(&self) -> bool {
        matches!(
            self,
            SimMode::WithPrediction | SimMode::Switching { source: FeedforwardSource::Predictor, .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub mode: SimMode,
    pub horizon: usize,
    pub dt: f64,
    /// Jerk penalty relative to the tracking curvature, see [`beta_scale`].
    pub beta: f64,
    pub gains: GainProfile,
    pub meters_per_unit: f64,
    /// Observed velocities required before predicted targets are used.
    pub warmup: usize,
    /// Extra steps simulated after the reference ends, holding its last position.
    pub tail_steps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: SimMode::FeedbackOnly,
            horizon: 10,
            dt: 0.01,
            beta: DEFAULT_BETA,
            gains: GainProfile::default(),
            meters_per_unit: 0.1,
            warmup: DEFAULT_WARMUP,
            tail_steps: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        HorizonParams::new(self.horizon, self.dt, 2)?;
        self.gains.validate()?;
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        if !(self.meters_per_unit.is_finite() && self.meters_per_unit > 0.0) {
            return Err(Error::invalid("meters_per_unit must be positive"));
        }
        if let SimMode::Switching { schedule, .. } = &self.mode {
            schedule.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub time: f64,
    pub reference: [f64; 2],
    pub plant: [f64; 2],
    pub plant_velocity: [f64; 2],
    /// `plant − reference`, meters.
    pub error: [f64; 2],
    pub error_norm: f64,
    /// Feedforward weight used for this step's solve.
    pub alpha: f64,
    pub jerk: [f64; 2],
}

/// Controller with position-tracking gains and `beta` taken relative to
/// the tracking curvature of the horizon.
pub fn tracking_controller(params: HorizonParams, beta: f64, gains: &GainProfile) -> Result<MpcController> {
    let model = CondensedModel::build(params)?;
    let g_c = gains.diagonal(params, false);
    let weights = ObjectiveWeights::tracking(params, 0.0, beta * beta_scale(&model, &g_c)?, gains)?;
    MpcController::new(model, &weights)
}

/// Runs one closed-loop simulation over `reference`. Record `k` holds the
/// plant state after applying the step-`k` control and the reference
/// sample it should match at that time.
pub fn run_closed_loop(
    cfg: &SimConfig,
    reference: &NormalizedSequence,
    predictor: Option<Box<dyn Predictor>>,
) -> Result<Vec<TraceRecord>> {
    cfg.validate()?;
    if reference.is_empty() {
        return Err(Error::invalid("reference sequence is empty"));
    }
    if cfg.mode.needs_predictor() && predictor.is_none() {
        return Err(Error::invalid(format!("mode {} needs a predictor", cfg.mode.name())));
    }
    let params = HorizonParams::new(cfg.horizon, cfg.dt, 2)?;
    let controller = tracking_controller(params, cfg.beta, &cfg.gains)?;
    let mut predictor = predictor.map(|p| {
        let mut p = MotionPredictor::new(p, cfg.warmup);
        p.reset();
        p
    });

    let positions = reference.positions();
    let last = positions.len() - 1;
    let at = |i: usize| positions[i.min(last)];
    let scale = cfg.meters_per_unit;
    let steps = reference.len() + cfg.tail_steps;
    let mut plant = MultiDofState::at_rest(&[at(0)[0] * scale, at(0)[1] * scale])?;
    let mut trace = Vec::with_capacity(steps);

    for k in 0..steps {
        let tag = |e: Error| Error::Step { step: k, source: Box::new(e) };
        let current = at(k);
        if let Some(p) = predictor.as_mut() {
            p.observe_position(&current).map_err(tag)?;
        }
        let ready = predictor.as_ref().is_some_and(|p| p.is_ready());
        let hold = PredictionTarget::hold(&current, cfg.horizon);
        let perfect = || perfect_predict(reference, k, cfg.horizon);
        let learned = |p: &MotionPredictor| p.predict_horizon(cfg.horizon);

        let (alpha, target) = match cfg.mode {
            SimMode::FeedbackOnly => (0.0, hold.clone()),
            SimMode::PerfectPrediction => (1.0, perfect()),
            SimMode::WithPrediction => match predictor.as_ref() {
                Some(p) if ready => (1.0, learned(p).map_err(tag)?),
                _ => (0.0, hold.clone()),
            },
            SimMode::Switching { schedule, source } => {
                let alpha = 1.0 - schedule.alpha_at(k);
                match (source, predictor.as_ref()) {
                    (FeedforwardSource::Perfect, _) => (alpha, perfect()),
                    (FeedforwardSource::Predictor, Some(p)) if ready => (alpha, learned(p).map_err(tag)?),
                    // not enough history yet: stay conservative
                    _ => (0.0, hold.clone()),
                }
            }
        };

        let conservative = hold.to_stacked(params, scale).map_err(tag)?;
        let predicted: StackedState = target.to_stacked(params, scale).map_err(tag)?;
        let (jerk, _) = controller.step(&plant, &conservative, &predicted, alpha).map_err(tag)?;
        plant = plant.step(&jerk, cfg.dt).map_err(tag)?;

        let r = at(k + 1);
        let reference = [r[0] * scale, r[1] * scale];
        let pos = plant.positions();
        let vel = plant.velocities();
        let error = [pos[0] - reference[0], pos[1] - reference[1]];
        trace.push(TraceRecord {
            step: k,
            time: (k + 1) as f64 * cfg.dt,
            reference,
            plant: [pos[0], pos[1]],
            plant_velocity: [vel[0], vel[1]],
            error,
            error_norm: error[0].hypot(error[1]),
            alpha,
            jerk: [jerk.jerks()[0], jerk.jerks()[1]],
        });
    }
    Ok(trace)
}

/// Mean squared Euclidean tracking error, m².
pub fn tracking_mse(trace: &[TraceRecord]) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::invalid("trace is empty"));
    }
    Ok(trace.iter().map(|r| r.error_norm * r.error_norm).sum::<f64>() / trace.len() as f64)
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "time", "ref_x", "ref_y", "plant_x", "plant_y", "err", "alpha", "jerk_x", "jerk_y"])?;
    for r in trace {
        let mut row = vec![r.step.to_string()];
        row.extend(
            [r.time, r.reference[0], r.reference[1], r.plant[0], r.plant[1], r.error_norm, r.alpha, r.jerk[0], r.jerk[1]]
                .map(|v| v.to_string()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: String,
    pub steps: usize,
    pub mse: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub sequence_id: String,
    pub alpha_convention: &'static str,
    pub modes: Vec<ModeSummary>,
}

impl SimSummary {
    pub fn new(sequence_id: &str) -> Self {
        Self { sequence_id: sequence_id.to_string(), alpha_convention: "feedforward weight", modes: Vec::new() }
    }

    pub fn push(&mut self, mode: &str, trace: &[TraceRecord]) -> Result<()> {
        self.modes.push(ModeSummary {
            mode: mode.to_string(),
            steps: trace.len(),
            mse: tracking_mse(trace)?,
            max_error: trace.iter().map(|r| r.error_norm).fold(0.0, f64::max),
        });
        Ok(())
    }
}
