use jerktrack::dataset::synth::{letter, synth_generate, StrokeKind};
use jerktrack::dataset::{normalize, NormalizedSequence};
use jerktrack::predictors::{ConstantVelocity, Predictor};
use jerktrack::sim::{
    run_closed_loop, tracking_mse, FeedforwardSource, SimConfig, SimMode, SwitchSchedule, TraceRecord,
};

fn letter_k() -> NormalizedSequence {
    normalize(&letter('K', 0.0, 7).unwrap()).unwrap()
}

fn run(mode: SimMode, seq: &NormalizedSequence, predictor: Option<Box<dyn Predictor>>) -> Vec<TraceRecord> {
    run_closed_loop(&SimConfig { mode, ..Default::default() }, seq, predictor).unwrap()
}

fn max_jump(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
}

fn max_error_increase(trace: &[TraceRecord], steps: std::ops::Range<usize>) -> f64 {
    trace[steps].windows(2).map(|w| w[1].error_norm - w[0].error_norm).fold(0.0, f64::max)
}

#[test]
fn synthetic_k_is_fast_enough() {
    let k = letter_k();
    let peak = k.peak_speed() * SimConfig::default().meters_per_unit / SimConfig::default().dt;
    assert!(peak >= 0.1, "peak speed {peak} m/s");
}

#[test]
fn perfect_prediction_beats_feedback_tenfold() {
    let k = letter_k();
    let feedback = tracking_mse(&run(SimMode::FeedbackOnly, &k, None)).unwrap();
    let perfect = tracking_mse(&run(SimMode::PerfectPrediction, &k, None)).unwrap();
    assert!(feedback > 0.0);
    assert!(feedback >= 10.0 * perfect, "feedback {feedback:e} vs perfect {perfect:e}");
}

#[test]
fn constant_velocity_prediction_sits_between_on_smooth_strokes() {
    // no pen jumps: a constant-velocity forecast is close to the truth
    let k = normalize(&synth_generate(StrokeKind::Arc, 0.0, 3)).unwrap();
    let feedback = tracking_mse(&run(SimMode::FeedbackOnly, &k, None)).unwrap();
    let predicted = tracking_mse(&run(SimMode::WithPrediction, &k, Some(Box::new(ConstantVelocity::new(2))))).unwrap();
    let perfect = tracking_mse(&run(SimMode::PerfectPrediction, &k, None)).unwrap();
    assert!(perfect < predicted && predicted < feedback, "{perfect:e} {predicted:e} {feedback:e}");
}

#[test]
fn switching_is_smooth() {
    let k = letter_k();
    let schedule = SwitchSchedule::default();
    let switching = run(SimMode::Switching { schedule, source: FeedforwardSource::Perfect }, &k, None);
    let feedback = run(SimMode::FeedbackOnly, &k, None);
    let perfect = run(SimMode::PerfectPrediction, &k, None);

    let alphas: Vec<f64> = switching.iter().map(|r| r.alpha).collect();
    assert!(alphas[..=30].iter().all(|&a| a == 0.0));
    assert!((alphas[35] - 0.5).abs() < 1e-12);
    assert!(alphas[40..].iter().all(|&a| a == 1.0));

    let rise = max_error_increase(&switching, 30..41);
    let bound = max_error_increase(&feedback, 0..feedback.len());
    assert!(rise <= bound, "error rose by {rise:e} while switching, feedback-only bound {bound:e}");

    for d in 0..2 {
        let jump = max_jump(switching.iter().map(|r| r.jerk[d]));
        let pure = max_jump(feedback.iter().map(|r| r.jerk[d])).max(max_jump(perfect.iter().map(|r| r.jerk[d])));
        assert!(jump <= 3.0 * pure, "dof {d}: jerk jump {jump:e} vs pure-mode {pure:e}");
    }
}

#[test]
fn positions_integrate_recorded_velocities() {
    let k = letter_k();
    let dt = SimConfig::default().dt;
    let trace = run(SimMode::PerfectPrediction, &k, None);
    for w in trace.windows(2) {
        for d in 0..2 {
            let dp = w[1].plant[d] - w[0].plant[d];
            let trapezoid = 0.5 * dt * (w[0].plant_velocity[d] + w[1].plant_velocity[d]);
            // exact for constant jerk: Δp − trapezoid = −j·dt³/12
            let want = -w[1].jerk[d] * dt.powi(3) / 12.0;
            assert!((dp - trapezoid - want).abs() < 1e-12, "{} vs {want}", dp - trapezoid);
        }
    }
}

#[test]
fn identical_config_identical_trace() {
    let k = letter_k();
    let mode = SimMode::Switching { schedule: SwitchSchedule::default(), source: FeedforwardSource::Predictor };
    let a = run(mode, &k, Some(Box::new(ConstantVelocity::new(2))));
    let b = run(mode, &k, Some(Box::new(ConstantVelocity::new(2))));
    assert_eq!(a, b);
}

#[test]
fn reference_holds_after_its_end() {
    let k = letter_k();
    let cfg = SimConfig { mode: SimMode::PerfectPrediction, tail_steps: 40, ..Default::default() };
    let trace = run_closed_loop(&cfg, &k, None).unwrap();
    assert_eq!(trace.len(), k.len() + 40);
    let end = trace.last().unwrap();
    assert_eq!(end.reference, trace[k.len() - 1].reference);
    assert!(end.error_norm < 1e-6, "final error {}", end.error_norm);
}
