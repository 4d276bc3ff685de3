use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use jerktrack::bench::{eval_model, report_table, ModelScores, BASELINE, DYBM_ESN, DYBM_ONLINE};
use jerktrack::dataset::synth::{letter, synth_corpus};
use jerktrack::dataset::{load_corpus, normalize, read_strokes, write_jsonl, NormalizedSequence};
use jerktrack::predictors::{
    build_predictor, load_model, save_model, ConstantVelocity, EsnConfig, Predictor, PredictorKind,
};
use jerktrack::session::SessionConfig;
use jerktrack::sim::{
    run_closed_loop, write_trace_csv, FeedforwardSource, SimConfig, SimMode, SimSummary, SwitchSchedule,
};
use jerktrack::training::{train_dybm_offline, train_lstm, TrainReport};
use jerktrack::Error;
use jerktrack_service::ServeConfig;

use crate::config::{RunConfig, BUILTIN_PREFIX};
use crate::{CliError, EvalArgs, IngestArgs, ServeArgs, SimulateArgs, SynthArgs, TrainArgs};

const MODES_ALL: [&str; 3] = ["feedback-only", "with-prediction", "perfect-prediction"];

fn at(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| CliError::At(path.to_path_buf(), e)
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::At(path.to_path_buf(), e.into())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_at(path))?))
}

fn required<T>(value: Option<T>, what: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

/// Usage errors for bad settings, exit-code classification for the rest.
fn usage_if_invalid(e: Error) -> CliError {
    match e {
        Error::InvalidInput(m) => CliError::Usage(m),
        e => CliError::Core(e),
    }
}

pub fn ingest(a: &IngestArgs) -> Result<(), CliError> {
    let file = File::open(&a.input).map_err(io_at(&a.input))?;
    let strokes = read_strokes(BufReader::new(file)).map_err(|e| CliError::At(a.input.clone(), e))?;
    if let Some(expected) = jerktrack::dataset::expected_count(&a.input) {
        if expected != strokes.len() {
            log::warn!("{}: expected {expected} sequences, found {}", a.input.display(), strokes.len());
        }
    }
    let normalized = strokes
        .iter()
        .map(normalize)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::At(a.input.clone(), e))?;
    write_jsonl(&normalized, create(&a.output)?).map_err(at(&a.output))?;
    println!("{}", normalized.len());
    Ok(())
}

pub fn synth(a: &SynthArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    if !(a.noise.is_finite() && a.noise >= 0.0) {
        return Err(CliError::Usage("noise must be finite and nonnegative".into()));
    }
    let strokes = match a.letter {
        Some(c) => vec![letter(c, a.noise, seed).ok_or_else(|| CliError::Usage(format!("no synthetic letter {c:?}")))?],
        None => synth_corpus(a.count, a.noise, seed),
    };
    write_jsonl(&strokes, create(&a.output)?).map_err(at(&a.output))?;
    println!("{}", strokes.len());
    Ok(())
}

fn write_partial_report(path: &Path, losses: &[f64]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "epoch,loss,seconds")?;
        for (i, l) in losses.iter().enumerate() {
            writeln!(w, "{i},{l},")?;
        }
        w.flush()
    };
    write().map_err(io_at(path))
}

pub fn train(a: &TrainArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let kind = required(a.kind.clone().or(cfg.model.kind.clone()), "--kind")?;
    let kind = match kind.as_str() {
        "lstm" => PredictorKind::Lstm,
        "dybm" => PredictorKind::Dybm,
        "dybm-esn" => PredictorKind::DybmEsn,
        other => {
            return Err(CliError::Usage(format!("unknown model kind {other:?}; expected lstm, dybm or dybm-esn")));
        }
    };
    let corpus_path = required(a.corpus.clone().or(cfg.corpus.train.clone()), "--corpus")?;
    let out_dir = required(a.out_dir.clone().or(cfg.out_dir.clone()), "--out-dir")?;

    let mut tc = cfg.train.clone().unwrap_or_default();
    if let Some(seed) = a.seed.or(cfg.seed) {
        tc.seed = seed;
    }
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.learning_rate = a.learning_rate.unwrap_or(tc.learning_rate);
    tc.hidden = a.hidden.unwrap_or(tc.hidden);
    tc.validate().map_err(usage_if_invalid)?;

    let corpus = load_corpus(&corpus_path).map_err(at(&corpus_path))?;
    if corpus.is_empty() {
        return Err(CliError::At(corpus_path, Error::InvalidInput("corpus is empty".into())));
    }
    let result: jerktrack::Result<(Box<dyn Predictor>, TrainReport)> = match kind {
        PredictorKind::Lstm => train_lstm(&corpus, &tc).map(|(m, r)| (Box::new(m) as Box<dyn Predictor>, r)),
        _ => {
            let mut dc = cfg.dybm.clone().unwrap_or_default();
            dc.esn = match kind {
                PredictorKind::DybmEsn => Some(dc.esn.unwrap_or(EsnConfig { seed: tc.seed, ..Default::default() })),
                _ => None,
            };
            dc.validate().map_err(usage_if_invalid)?;
            train_dybm_offline(&corpus, &dc, &tc).map(|(m, r)| (Box::new(m) as Box<dyn Predictor>, r))
        }
    };

    let report_path = out_dir.join("train_report.csv");
    let model_path = out_dir.join("model.json");
    match result {
        Ok((model, report)) => {
            report.write_csv(create(&report_path)?).map_err(at(&report_path))?;
            save_model(model.as_ref(), &model_path).map_err(at(&model_path))?;
            println!("model: {}", model_path.display());
            println!("report: {}", report_path.display());
            if let Some(loss) = report.epoch_losses.last() {
                println!("final loss: {loss:e}");
            }
            println!("checksum: {}", report.checksum);
            Ok(())
        }
        Err(Error::TrainingDiverged { epoch, losses }) => {
            write_partial_report(&report_path, &losses)?;
            eprintln!("partial report: {}", report_path.display());
            Err(CliError::Core(Error::TrainingDiverged { epoch, losses }))
        }
        Err(e) => Err(usage_if_invalid(e)),
    }
}

fn builtin(spec: &str, seed: u64) -> Option<Result<Box<dyn Predictor>, CliError>> {
    let kind = spec.strip_prefix(BUILTIN_PREFIX)?;
    Some(
        kind.parse::<PredictorKind>()
            .and_then(|k| build_predictor(k, 2, seed))
            .map_err(|e| CliError::Usage(format!("{spec}: {e}"))),
    )
}

fn load_predictor(spec: &str, seed: u64) -> Result<Box<dyn Predictor>, CliError> {
    match builtin(spec, seed) {
        Some(m) => m,
        None => {
            let path = PathBuf::from(spec);
            load_model(&path).map_err(at(&path))
        }
    }
}

pub fn eval(a: &EvalArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let corpus_path = required(a.corpus.clone().or(cfg.corpus.test.clone()), "--corpus")?;
    let seed = cfg.seed.unwrap_or(0);

    let mut specs: Vec<(String, String)> = cfg.eval.models.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    for m in &a.models {
        let (label, source) = m
            .split_once('=')
            .filter(|(l, s)| !l.is_empty() && !s.is_empty())
            .ok_or_else(|| CliError::Usage(format!("--model expects LABEL=SOURCE, got {m:?}")))?;
        specs.retain(|(l, _)| l != label);
        specs.push((label.to_string(), source.to_string()));
    }
    if !a.no_baseline && !specs.iter().any(|(l, _)| l == BASELINE) {
        specs.insert(0, (BASELINE.to_string(), format!("{BUILTIN_PREFIX}constant-velocity")));
    }
    if specs.is_empty() {
        return Err(CliError::Usage("no models to evaluate".into()));
    }
    let online: Vec<String> = if !a.online.is_empty() {
        a.online.clone()
    } else {
        cfg.eval.online.clone().unwrap_or_else(|| vec![DYBM_ONLINE.into(), DYBM_ESN.into()])
    };

    // load every model before the (possibly long) scoring runs
    let mut models = Vec::with_capacity(specs.len());
    for (label, source) in &specs {
        models.push((label.clone(), load_predictor(source, seed)?));
    }
    let corpus = load_corpus(&corpus_path).map_err(at(&corpus_path))?;
    if corpus.is_empty() {
        return Err(CliError::At(corpus_path, Error::InvalidInput("corpus is empty".into())));
    }
    let mut results = Vec::with_capacity(models.len());
    for (label, mut model) in models {
        let learn = online.contains(&label);
        log::info!("scoring {label} ({}, online: {learn})", model.kind());
        let scores = eval_model(model.as_mut(), &corpus, learn).map_err(usage_if_invalid)?;
        results.push(ModelScores { name: label, scores });
    }
    let report = report_table(&results).map_err(usage_if_invalid)?;
    print!("{}", report.render());

    if let Some(dir) = a.out_dir.clone().or(cfg.out_dir.clone()) {
        let summary = dir.join("summary.csv");
        report.write_summary_csv(create(&summary)?).map_err(at(&summary))?;
        let per_sequence = dir.join("per_sequence.csv");
        report.write_per_sequence_csv(create(&per_sequence)?).map_err(at(&per_sequence))?;
        let by_symbol = dir.join("by_symbol.csv");
        report.write_by_symbol_csv(create(&by_symbol)?).map_err(at(&by_symbol))?;
    }
    Ok(())
}

fn reference(a: &SimulateArgs, cfg: &RunConfig) -> Result<NormalizedSequence, CliError> {
    if let Some(path) = a.sequence.clone().or(cfg.sim.sequence.clone()) {
        let corpus = load_corpus(&path).map_err(at(&path))?;
        let id = a.id.clone().or(cfg.sim.id.clone());
        let found = match &id {
            Some(id) => corpus.into_iter().find(|s| &s.id == id),
            None => corpus.into_iter().next(),
        };
        return found.ok_or_else(|| match id {
            Some(id) => CliError::Usage(format!("{}: no sequence with id {id:?}", path.display())),
            None => CliError::At(path.clone(), Error::InvalidInput("corpus is empty".into())),
        });
    }
    let c = a.letter.or(cfg.sim.letter).unwrap_or('K');
    let stroke = letter(c, 0.0, cfg.seed.unwrap_or(7)).ok_or_else(|| CliError::Usage(format!("no synthetic letter {c:?}")))?;
    Ok(normalize(&stroke)?)
}

fn parse_mode(name: &str, schedule: SwitchSchedule, source: FeedforwardSource) -> Result<SimMode, CliError> {
    let mode = SimMode::parse(name).map_err(usage_if_invalid)?;
    Ok(match mode {
        SimMode::Switching { .. } => SimMode::Switching { schedule, source },
        m => m,
    })
}

pub fn simulate(a: &SimulateArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let mut names: Vec<String> = if a.modes.is_empty() {
        cfg.sim.modes.clone().unwrap_or_else(|| vec!["all".into()])
    } else {
        a.modes.clone()
    };
    if names.iter().any(|n| n == "all") {
        names.retain(|n| n != "all");
        for m in MODES_ALL.iter().rev() {
            if !names.iter().any(|n| n == m) {
                names.insert(0, m.to_string());
            }
        }
    }
    let source = match a.switch_source.clone().or(cfg.sim.switch_source.clone()).as_deref() {
        None | Some("predictor") => FeedforwardSource::Predictor,
        Some("perfect") => FeedforwardSource::Perfect,
        Some(other) => return Err(CliError::Usage(format!("unknown switch source {other:?}; expected predictor or perfect"))),
    };
    let schedule = cfg.sim.switch.unwrap_or_default();
    let modes = names.iter().map(|n| parse_mode(n, schedule, source)).collect::<Result<Vec<_>, _>>()?;

    let base = SimConfig::default();
    let sim_cfg = SimConfig {
        mode: base.mode,
        horizon: a.horizon.or(cfg.mpc.horizon).unwrap_or(base.horizon),
        dt: a.dt.or(cfg.mpc.dt).unwrap_or(base.dt),
        beta: a.beta.or(cfg.mpc.beta).unwrap_or(base.beta),
        gains: cfg.mpc.gains.unwrap_or(base.gains),
        meters_per_unit: cfg.sim.meters_per_unit.unwrap_or(base.meters_per_unit),
        warmup: cfg.sim.warmup.unwrap_or(base.warmup),
        tail_steps: a.tail_steps.or(cfg.sim.tail_steps).unwrap_or(base.tail_steps),
    };
    sim_cfg.validate().map_err(usage_if_invalid)?;

    let model: Box<dyn Predictor> = match a.model.clone().or(cfg.model.path.clone()) {
        Some(path) => load_model(&path).map_err(at(&path))?,
        None => Box::new(ConstantVelocity::new(2)),
    };
    let seq = reference(a, cfg)?;
    let out_dir = a.out_dir.clone().or(cfg.out_dir.clone());

    let mut summary = SimSummary::new(&seq.id);
    println!("sequence {} ({} steps), predictor {}", seq.id, seq.len(), model.kind());
    for mode in modes {
        let needs = matches!(mode, SimMode::WithPrediction | SimMode::Switching { source: FeedforwardSource::Predictor, .. });
        let run_cfg = SimConfig { mode, ..sim_cfg.clone() };
        let trace = run_closed_loop(&run_cfg, &seq, needs.then(|| model.clone())).map_err(|e| match e {
            Error::InvalidInput(m) => CliError::Usage(m),
            e => CliError::Core(e),
        })?;
        summary.push(mode.name(), &trace)?;
        if let Some(dir) = &out_dir {
            let path = dir.join(format!("trace_{}.csv", mode.name()));
            write_trace_csv(&trace, create(&path)?).map_err(at(&path))?;
        }
    }
    for m in &summary.modes {
        println!("{:<20} mse {:.4e} m^2  max error {:.4e} m", m.mode, m.mse, m.max_error);
    }
    if let Some(dir) = &out_dir {
        let path = dir.join("summary.json");
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| CliError::At(path.clone(), e.into()))?;
        w.flush().map_err(io_at(&path))?;
    }
    Ok(())
}

pub fn serve(a: &ServeArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let base = SessionConfig::default();
    let session = SessionConfig {
        horizon: a.horizon.or(cfg.mpc.horizon).unwrap_or(base.horizon),
        dt: a.dt.or(cfg.mpc.dt).unwrap_or(base.dt),
        beta: cfg.mpc.beta.unwrap_or(base.beta),
        gains: cfg.mpc.gains.unwrap_or(base.gains),
        warmup: cfg.serve.warmup.unwrap_or(base.warmup),
        ramp_ticks: cfg.serve.ramp_ticks.unwrap_or(base.ramp_ticks),
        retain_online: a.retain_online || cfg.serve.retain_online.unwrap_or(false),
        ..base
    };
    let serve_cfg = ServeConfig {
        session,
        queue_capacity: a
            .queue_capacity
            .or(cfg.serve.queue_capacity)
            .unwrap_or(jerktrack_service::DEFAULT_QUEUE_CAPACITY),
    };
    let model: Box<dyn Predictor> = match a.model.clone().or(cfg.model.path.clone()) {
        Some(path) => load_model(&path).map_err(at(&path))?,
        None => Box::new(ConstantVelocity::new(2)),
    };
    // settings are checked before binding so that bad ones are usage errors
    let _ = jerktrack_service::router(serve_cfg.clone(), model.clone()).map_err(usage_if_invalid)?;
    let addr = a.addr.clone().or(cfg.serve.addr.clone()).unwrap_or_else(|| "127.0.0.1:8080".into());

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start the runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Usage(e.to_string()))?;
        println!("listening on ws://{local}/ws (predictor {})", model.kind());
        jerktrack_service::serve(listener, serve_cfg, model)
            .await
            .map_err(|e| CliError::Usage(format!("server stopped: {e}")))
    })
}
