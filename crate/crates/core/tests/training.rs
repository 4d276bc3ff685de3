use jerktrack::dataset::NormalizedSequence;
use jerktrack::predictors::{
    sequence_loss, sequence_loss_grad, DybmConfig, DybmOptimizer, LstmParams, PaddedSequence, Predictor,
};
use jerktrack::training::{gradient_check, gradient_errors, train_dybm_offline, train_lstm, TrainConfig};
use jerktrack::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_samples(len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
}

fn ramps(count: usize, len: usize, seed: u64) -> Vec<NormalizedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| NormalizedSequence {
            id: format!("ramp-{i}"),
            symbol: "-".into(),
            start_position: [0.0, 0.0],
            velocities: vec![[rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]; len],
        })
        .collect()
}

fn corpus_mse(params: &LstmParams, corpus: &[NormalizedSequence]) -> f64 {
    let (mut l, mut c) = (0.0, 0);
    for s in corpus {
        let (ls, cs) = sequence_loss(params, &PaddedSequence::new(&s.velocity_vecs(), 0).unwrap());
        l += ls;
        c += cs;
    }
    l / c as f64
}

/// Best achievable MSE with the recurrent weights held fixed: ordinary
/// least squares of the targets on `[h_t, 1]`.
fn least_squares_readout_mse(params: &LstmParams, corpus: &[NormalizedSequence]) -> f64 {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for s in corpus {
        let mut m = jerktrack::predictors::Lstm::new(params.clone()).unwrap();
        let v = s.velocity_vecs();
        for t in 0..v.len() - 1 {
            m.observe(&v[t]).unwrap();
            let mut row: Vec<f64> = m.cell().h.iter().copied().collect();
            row.push(1.0);
            rows.push(row);
            targets.push(v[t + 1].clone());
        }
    }
    let f = rows[0].len();
    let x = DMatrix::from_fn(rows.len(), f, |i, j| rows[i][j]);
    let mut sse = 0.0;
    for d in 0..2 {
        let y = DVector::from_fn(targets.len(), |i, _| targets[i][d]);
        let w = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
        sse += (&x * w - y).norm_squared();
    }
    sse / (2 * targets.len()) as f64
}

#[test]
fn bptt_matches_finite_differences() {
    for seed in 0..3 {
        let p = LstmParams::random(2, 10, 2, seed);
        let err = gradient_check(&p, &random_samples(6, seed + 100), 1e-5).unwrap();
        assert!(err < 1e-4, "seed {seed}: max relative error {err}");
    }
}

#[test]
fn finite_difference_error_is_second_order() {
    let p = LstmParams::random(2, 10, 2, 4);
    let s = random_samples(6, 8);
    let a = gradient_errors(&p, &s, 1e-2).unwrap().max_absolute;
    let b = gradient_errors(&p, &s, 2e-2).unwrap().max_absolute;
    let ratio = b / a;
    assert!((3.0..5.5).contains(&ratio), "doubling epsilon scaled the error by {ratio}");
}

#[test]
fn lstm_learns_constant_ramps() {
    let corpus = ramps(32, 30, 1);
    let cfg = TrainConfig { epochs: 40, batch_size: 16, learning_rate: 1e-2, seed: 3, ..Default::default() };
    let (model, report) = train_lstm(&corpus, &cfg).unwrap();
    let mse = corpus_mse(model.params(), &corpus);
    let oracle = least_squares_readout_mse(model.params(), &corpus);
    assert!(mse < 0.01, "trained one-step MSE {mse}");
    assert!(oracle <= mse + 1e-12, "least-squares readout {oracle} must not lose to training {mse}");
    assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
    assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
}

#[test]
fn loss_is_essentially_monotone_on_linear_dynamics() {
    // noiseless rotation: v_{t+1} = R v_t
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (c, s) = (0.2f64.cos(), 0.2f64.sin());
    let corpus: Vec<_> = (0..24)
        .map(|i| {
            let mut v = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
            let velocities = (0..25)
                .map(|_| {
                    let out = v;
                    v = [c * v[0] - s * v[1], s * v[0] + c * v[1]];
                    out
                })
                .collect();
            NormalizedSequence { id: format!("rot-{i}"), symbol: "o".into(), start_position: [0.0, 0.0], velocities }
        })
        .collect();
    let cfg = TrainConfig { epochs: 30, batch_size: 8, learning_rate: 5e-3, seed: 9, ..Default::default() };
    let (_, report) = train_lstm(&corpus, &cfg).unwrap();
    for w in report.epoch_losses.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "loss rose from {} to {}", w[0], w[1]);
    }
    assert!(report.epoch_losses.last().unwrap() < &(0.5 * report.epoch_losses[0]));
}

#[test]
fn training_is_deterministic() {
    let corpus = ramps(10, 12, 5);
    let cfg = TrainConfig { epochs: 3, batch_size: 4, seed: 21, ..Default::default() };
    let (a, ra) = train_lstm(&corpus, &cfg).unwrap();
    let (b, rb) = train_lstm(&corpus, &cfg).unwrap();
    assert_eq!(ra.epoch_losses, rb.epoch_losses);
    assert_eq!(ra.checksum, rb.checksum);
    assert_eq!(a.params(), b.params());
}

#[test]
fn training_divergence_reports_epoch() {
    let mut corpus = ramps(2, 5, 0);
    corpus[0].velocities[2] = [f64::MAX, f64::MAX];
    let cfg = TrainConfig { epochs: 2, clip_norm: 0.0, ..Default::default() };
    match train_lstm(&corpus, &cfg) {
        Err(Error::TrainingDiverged { epoch, losses }) => {
            assert_eq!(epoch, 0);
            assert!(losses.is_empty());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn offline_dybm_bias_learns_a_constant() {
    let seq = NormalizedSequence {
        id: "c".into(),
        symbol: "-".into(),
        start_position: [0.0, 0.0],
        velocities: vec![[0.3, -0.2]; 200],
    };
    let dybm = DybmConfig { optimizer: DybmOptimizer::Sgd, learning_rate: 0.05, ..Default::default() };
    let cfg = TrainConfig { epochs: 5, ..Default::default() };
    let (mut model, report) = train_dybm_offline(std::slice::from_ref(&seq), &dybm, &cfg).unwrap();
    assert!(!model.is_learning());
    // LMS oracle: at the fixed point the prediction equals the constant
    let checksum = model.parameter_checksum();
    let mut worst: f64 = 0.0;
    for (t, v) in seq.velocity_vecs().iter().enumerate() {
        model.observe(v).unwrap();
        let p = model.predict_one().unwrap();
        // once the slowest trace has settled
        if t >= 100 {
            worst = worst.max((p[0] - 0.3).abs()).max((p[1] + 0.2).abs());
        }
    }
    assert!(worst < 1e-3, "prediction error {worst}");
    assert_eq!(model.parameter_checksum(), checksum, "frozen model must not learn");
    assert_eq!(report.checksum, checksum);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn extra_padding_is_invisible(len in 2usize..12, extra in 1usize..20, seed in 0u64..1000) {
        let p = LstmParams::random(2, 5, 2, seed);
        let s = random_samples(len, seed);
        let a = sequence_loss_grad(&p, &PaddedSequence::new(&s, len).unwrap());
        let b = sequence_loss_grad(&p, &PaddedSequence::new(&s, len + extra).unwrap());
        prop_assert_eq!(a.loss_sum, b.loss_sum);
        prop_assert_eq!(a.count, b.count);
        prop_assert_eq!(a.grad, b.grad);
    }
}
