//! Live tracking sessions: one predictor, one controller and one plant fed
//! by a stream of pen samples, one tick per sample.
//!
//! Positions are used in the units the client sends. Pen-up samples move
//! the conservative target but are not shown to the predictor, so the next
//! pen-down sample arrives as one large velocity, the same way pen jumps
//! appear in a normalized corpus.

use serde::{Deserialize, Serialize};

use crate::dynamics::{HorizonParams, MultiDofState};
use crate::error::{Error, Result};
use crate::mpc::{GainProfile, MpcController, DEFAULT_BETA};
use crate::predictors::{MotionPredictor, Predictor, PredictionTarget, DEFAULT_WARMUP};
use crate::sim::tracking_controller;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Relative jerk penalty, as in the simulator.
    pub beta: f64,
    pub gains: GainProfile,
    pub warmup: usize,
    /// Ticks over which `alpha` rises from 0 to `feedforward_alpha` once the
    /// predictor is ready.
    pub ramp_ticks: usize,
    pub feedforward_alpha: f64,
    /// Keep online-learned parameters across resets.
    pub retain_online: bool,
    /// Plant position at session start and after a reset.
    pub home: [f64; 2],
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.01,
            beta: DEFAULT_BETA,
            gains: GainProfile::default(),
            warmup: DEFAULT_WARMUP,
            ramp_ticks: 10,
            feedforward_alpha: 1.0,
            retain_online: false,
            home: [0.0, 0.0],
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        HorizonParams::new(self.horizon, self.dt, 2)?;
        if !(0.0..=1.0).contains(&self.feedforward_alpha) {
            return Err(Error::invalid("feedforward alpha must lie in [0, 1]"));
        }
        if self.home.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("home position must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: i64,
    pub x: f64,
    pub y: f64,
    #[serde(default = "pen_down")]
    pub pen: bool,
}

fn pen_down() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Sample(Sample),
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateReply {
    pub t: i64,
    pub rx: f64,
    pub ry: f64,
    pub alpha: f64,
    pub pred: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    State(StateReply),
    Ack,
    Error { message: String },
}

impl ServerMessage {
    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error { message: message.into() }
    }
}

pub struct Session {
    cfg: SessionConfig,
    template: Box<dyn Predictor>,
    predictor: MotionPredictor,
    controller: MpcController,
    params: HorizonParams,
    plant: MultiDofState,
    ramp: usize,
    last_t: Option<i64>,
}

impl Session {
    pub fn new(cfg: SessionConfig, model: Box<dyn Predictor>) -> Result<Self> {
        cfg.validate()?;
        if model.n_dof() != 2 {
            return Err(Error::invalid("sessions need a 2-D predictor"));
        }
        let params = HorizonParams::new(cfg.horizon, cfg.dt, 2)?;
        let controller = tracking_controller(params, cfg.beta, &cfg.gains)?;
        let mut model = model;
        model.reset();
        Ok(Self {
            plant: MultiDofState::at_rest(&cfg.home)?,
            predictor: MotionPredictor::new(model.clone(), cfg.warmup),
            template: model,
            controller,
            params,
            ramp: 0,
            last_t: None,
            cfg,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn predictor(&self) -> &MotionPredictor {
        &self.predictor
    }

    pub fn plant(&self) -> &MultiDofState {
        &self.plant
    }

    fn alpha(&self) -> f64 {
        if self.cfg.ramp_ticks == 0 {
            return if self.ramp > 0 { self.cfg.feedforward_alpha } else { 0.0 };
        }
        self.cfg.feedforward_alpha * self.ramp.min(self.cfg.ramp_ticks) as f64 / self.cfg.ramp_ticks as f64
    }

    /// Processes one sample. Out-of-order or non-finite samples are rejected
    /// without touching the session.
    pub fn tick(&mut self, sample: &Sample) -> Result<StateReply> {
        if !(sample.x.is_finite() && sample.y.is_finite()) {
            return Err(Error::invalid("sample position is not finite"));
        }
        if let Some(last) = self.last_t {
            if sample.t <= last {
                return Err(Error::invalid(format!("sample t={} does not follow t={last}", sample.t)));
            }
        }
        let pos = [sample.x, sample.y];
        let mut predictor = self.predictor.clone();
        if sample.pen {
            predictor.observe_position(&pos)?;
        }
        let ready = sample.pen && predictor.is_ready();
        let ramp = if ready { self.ramp + 1 } else { 0 };
        let hold = PredictionTarget::hold(&pos, self.cfg.horizon);
        let forecast = match predictor.predict_horizon(self.cfg.horizon) {
            Ok(f) if sample.pen => f,
            _ => hold.clone(),
        };

        let prev_ramp = std::mem::replace(&mut self.ramp, ramp);
        let alpha = self.alpha();
        let step = (|| {
            let conservative = hold.to_stacked(self.params, 1.0)?;
            let predicted = forecast.to_stacked(self.params, 1.0)?;
            let (jerk, _) = self.controller.step(&self.plant, &conservative, &predicted, alpha)?;
            self.plant.step(&jerk, self.cfg.dt)
        })();
        let plant = match step {
            Ok(p) => p,
            Err(e) => {
                self.ramp = prev_ramp;
                return Err(e);
            }
        };

        self.plant = plant;
        self.predictor = predictor;
        self.last_t = Some(sample.t);
        let p = self.plant.positions();
        Ok(StateReply {
            t: sample.t,
            rx: p[0],
            ry: p[1],
            alpha,
            pred: forecast.positions.iter().map(|q| [q[0], q[1]]).collect(),
        })
    }

    /// Clears recurrent state, history, plant and the alpha ramp. Learned
    /// parameters survive only with `retain_online`.
    pub fn reset(&mut self) {
        if self.cfg.retain_online {
            self.predictor.reset();
        } else {
            self.predictor = MotionPredictor::new(self.template.clone(), self.cfg.warmup);
        }
        self.plant = MultiDofState::at_rest(&self.cfg.home).expect("home validated at construction");
        self.ramp = 0;
        self.last_t = None;
    }

    pub fn handle(&mut self, msg: &ClientMessage) -> ServerMessage {
        match msg {
            ClientMessage::Sample(s) => match self.tick(s) {
                Ok(reply) => ServerMessage::State(reply),
                Err(e) => ServerMessage::error(e.to_string()),
            },
            ClientMessage::Reset => {
                self.reset();
                ServerMessage::Ack
            }
        }
    }

    /// Parses one JSON text frame and returns the JSON reply.
    pub fn handle_text(&mut self, text: &str) -> String {
        let reply = match serde_json::from_str::<ClientMessage>(text) {
            Ok(msg) => self.handle(&msg),
            Err(e) => ServerMessage::error(format!("bad message: {e}")),
        };
        serde_json::to_string(&reply).expect("server messages always serialize")
    }
}

pub fn session_tick(session: &mut Session, sample: &Sample) -> Result<StateReply> {
    session.tick(sample)
}

pub fn session_reset(session: &mut Session) -> ServerMessage {
    session.reset();
    ServerMessage::Ack
}
