//! One-step prediction quality: per-sequence MSE, pairwise comparisons and
//! the summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::NormalizedSequence;
use crate::error::{Error, Result};
use crate::predictors::Predictor;

/// Canonical row labels, in table order.
pub const BASELINE: &str = "baseline";
pub const LSTM: &str = "lstm";
pub const DYBM_OFFLINE: &str = "dybm-offline";
pub const DYBM_ONLINE: &str = "dybm-online";
pub const DYBM_ESN: &str = "dybm-esn";
pub const TABLE_ORDER: [&str; 5] = [BASELINE, LSTM, DYBM_OFFLINE, DYBM_ONLINE, DYBM_ESN];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceScore {
    pub id: String,
    pub symbol: String,
    /// Mean squared Euclidean velocity error; infinite if the model diverged.
    pub mse: f64,
    /// Number of scored steps.
    pub steps: usize,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::LearningDiverged(_) | Error::ModelCorrupt(_) | Error::NotPositiveDefinite { .. })
}

fn score_sequence(model: &mut dyn Predictor, seq: &NormalizedSequence) -> Result<SequenceScore> {
    model.reset();
    let mut sum = 0.0;
    let mut steps = 0;
    let mut run = || -> Result<()> {
        for (t, v) in seq.velocities.iter().enumerate() {
            // the prediction before any observation is not scored
            if t > 0 {
                let p = model.predict_one()?;
                sum += (p[0] - v[0]).powi(2) + (p[1] - v[1]).powi(2);
                steps += 1;
            }
            model.observe(v)?;
        }
        Ok(())
    };
    let mse = match run() {
        Ok(()) if steps > 0 => sum / steps as f64,
        Ok(()) => 0.0,
        Err(e) if is_divergence(&e) => {
            log::warn!("model diverged on sequence {}: {e}", seq.id);
            f64::INFINITY
        }
        Err(e) => return Err(e),
    };
    let scored = seq.len().saturating_sub(1);
    Ok(SequenceScore { id: seq.id.clone(), symbol: seq.symbol.clone(), mse, steps: scored })
}

/// Scores every sequence, resetting recurrent state before each. With
/// `online` the model learns while it streams and carries its parameters
/// from one sequence to the next in corpus order; without it, learning is
/// switched off for the duration and parameters are left untouched.
pub fn eval_model(model: &mut dyn Predictor, corpus: &[NormalizedSequence], online: bool) -> Result<Vec<SequenceScore>> {
    if corpus.is_empty() {
        return Err(Error::invalid("evaluation corpus is empty"));
    }
    if model.n_dof() != 2 {
        return Err(Error::invalid("evaluation needs a 2-D predictor"));
    }
    let was_learning = model.is_learning();
    model.set_learning(online);
    let out = if online {
        corpus.iter().map(|s| score_sequence(model, s)).collect()
    } else {
        let template = model.clone_box();
        corpus
            .par_iter()
            .map(|s| {
                let mut m = template.clone_box();
                score_sequence(m.as_mut(), s)
            })
            .collect()
    };
    model.set_learning(was_learning);
    model.reset();
    out
}

/// Step-weighted mean over all scored steps of all sequences.
pub fn pooled_mse(scores: &[SequenceScore]) -> f64 {
    let steps: usize = scores.iter().map(|s| s.steps).sum();
    if steps == 0 {
        return 0.0;
    }
    scores.iter().filter(|s| s.steps > 0).map(|s| s.mse * s.steps as f64).sum::<f64>() / steps as f64
}

/// Plain mean of per-sequence MSEs.
pub fn sequence_mean_mse(scores: &[SequenceScore]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().map(|s| s.mse).sum::<f64>() / scores.len() as f64
}

/// Percentage of positions where `a` is strictly smaller than `b`.
pub fn percent_better(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("cannot compare {} scores with {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("nothing to compare"));
    }
    let wins = a.iter().zip(b).filter(|(x, y)| x < y).count();
    Ok(100.0 * wins as f64 / a.len() as f64)
}

/// Percentage of sequences on which `a` has strictly lower MSE than `b`.
/// Both lists must cover the same sequences in the same order.
pub fn compare_per_sequence(a: &[SequenceScore], b: &[SequenceScore]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("cannot compare {} sequences with {}", a.len(), b.len())));
    }
    if let Some((x, y)) = a.iter().zip(b).find(|(x, y)| x.id != y.id) {
        return Err(Error::invalid(format!("sequence ids misaligned: {:?} vs {:?}", x.id, y.id)));
    }
    let ma: Vec<f64> = a.iter().map(|s| s.mse).collect();
    let mb: Vec<f64> = b.iter().map(|s| s.mse).collect();
    percent_better(&ma, &mb)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelScores {
    pub name: String,
    pub scores: Vec<SequenceScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub model: String,
    pub mse: f64,
    pub mse_sequence_mean: f64,
    pub ps_baseline: Option<f64>,
    pub ps_lstm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<TableRow>,
    pub models: Vec<ModelScores>,
}

fn table_rank(name: &str) -> usize {
    TABLE_ORDER.iter().position(|n| *n == name).unwrap_or(TABLE_ORDER.len())
}

/// Builds the summary rows. Rows follow [`TABLE_ORDER`], any other models
/// come after in their given order. PS-B is filled when a `baseline` model
/// is present, PS-LSTM when an `lstm` model is.
pub fn report_table(results: &[ModelScores]) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::invalid("no models to report"));
    }
    if let Some(m) = results.iter().find(|m| m.scores.is_empty()) {
        return Err(Error::invalid(format!("model {} has no scored sequences", m.name)));
    }
    let mut models = results.to_vec();
    models.sort_by_key(|m| table_rank(&m.name));
    let find = |name: &str| models.iter().find(|m| m.name == name);
    let baseline = find(BASELINE);
    let lstm = find(LSTM);
    let mut rows = Vec::with_capacity(models.len());
    for m in &models {
        let ps_baseline = match baseline {
            Some(b) if m.name != BASELINE => Some(compare_per_sequence(&m.scores, &b.scores)?),
            _ => None,
        };
        let ps_lstm = match lstm {
            Some(l) if m.name != LSTM && m.name != BASELINE => Some(compare_per_sequence(&m.scores, &l.scores)?),
            _ => None,
        };
        rows.push(TableRow {
            model: m.name.clone(),
            mse: pooled_mse(&m.scores),
            mse_sequence_mean: sequence_mean_mse(&m.scores),
            ps_baseline,
            ps_lstm,
        });
    }
    Ok(EvalReport { rows, models })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "---".to_string(), |p| format!("{p:.0}%"))
}

impl EvalReport {
    /// Fixed-width text table.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>12}  {:>12}  {:>6}  {:>7}", "Model", "MSE", "MSE(seq)", "PS-B", "PS-LSTM");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>12.4e}  {:>12.4e}  {:>6}  {:>7}",
                r.model,
                r.mse,
                r.mse_sequence_mean,
                cell(r.ps_baseline),
                cell(r.ps_lstm)
            );
        }
        s
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["model", "mse", "mse_sequence_mean", "ps_b", "ps_lstm"])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |p| p.to_string());
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.mse.to_string(),
                r.mse_sequence_mean.to_string(),
                opt(r.ps_baseline),
                opt(r.ps_lstm),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_per_sequence_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["model", "sequence_id", "mse"])?;
        for m in &self.models {
            for s in &m.scores {
                w.write_record([m.name.as_str(), s.id.as_str(), &s.mse.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Pooled MSE per model and symbol label.
    pub fn write_by_symbol_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["model", "symbol", "sequences", "mse"])?;
        for m in &self.models {
            let mut groups: BTreeMap<&str, Vec<SequenceScore>> = BTreeMap::new();
            for s in &m.scores {
                groups.entry(s.symbol.as_str()).or_default().push(s.clone());
            }
            for (symbol, scores) in groups {
                w.write_record([
                    m.name.clone(),
                    symbol.to_string(),
                    scores.len().to_string(),
                    pooled_mse(&scores).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::{build_predictor, ConstantVelocity, PredictorKind, ZeroMotion};

    fn scores(mses: &[f64]) -> Vec<SequenceScore> {
        mses.iter()
            .enumerate()
            .map(|(i, &mse)| SequenceScore { id: format!("s{i}"), symbol: "a".into(), mse, steps: 1 })
            .collect()
    }

    fn ramp(id: &str, v: [f64; 2], len: usize) -> NormalizedSequence {
        NormalizedSequence { id: id.into(), symbol: "-".into(), start_position: [0.0, 0.0], velocities: vec![v; len] }
    }

    #[test]
    fn strict_comparison() {
        assert_eq!(compare_per_sequence(&scores(&[1.0, 2.0]), &scores(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(compare_per_sequence(&scores(&[0.5, 1.0]), &scores(&[1.0, 2.0])).unwrap(), 100.0);
        assert_eq!(compare_per_sequence(&scores(&[1.0, 3.0]), &scores(&[2.0, 2.0])).unwrap(), 50.0);
    }

    #[test]
    fn misaligned_ids_rejected() {
        let mut b = scores(&[1.0, 2.0]);
        b.swap(0, 1);
        assert!(compare_per_sequence(&scores(&[1.0, 2.0]), &b).is_err());
        assert!(compare_per_sequence(&scores(&[1.0]), &scores(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn baselines_on_ramps() {
        let corpus = vec![ramp("a", [0.3, 0.4], 10), ramp("b", [1.0, 0.0], 4)];
        let cv = eval_model(&mut ConstantVelocity::new(2), &corpus, false).unwrap();
        assert!(cv.iter().all(|s| s.mse == 0.0));
        let zm = eval_model(&mut ZeroMotion::new(2), &corpus, false).unwrap();
        assert!((zm[0].mse - 0.25).abs() < 1e-15);
        assert_eq!(zm[1].mse, 1.0);
        assert_eq!(zm[0].steps, 9);
        assert!((pooled_mse(&zm) - (9.0 * 0.25 + 3.0) / 12.0).abs() < 1e-15);
        assert!((sequence_mean_mse(&zm) - 0.625).abs() < 1e-15);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(eval_model(&mut ZeroMotion::new(2), &[], false).is_err());
        assert!(report_table(&[]).is_err());
        assert!(report_table(&[ModelScores { name: BASELINE.into(), scores: vec![] }]).is_err());
    }

    #[test]
    fn offline_eval_freezes_parameters() {
        let corpus: Vec<_> = (0..5).map(|i| ramp(&format!("r{i}"), [0.1 * i as f64, 0.2], 12)).collect();
        let mut m = build_predictor(PredictorKind::Dybm, 2, 0).unwrap();
        let before = m.parameter_checksum();
        eval_model(m.as_mut(), &corpus, false).unwrap();
        assert_eq!(m.parameter_checksum(), before);
        assert!(m.is_learning());
        eval_model(m.as_mut(), &corpus, true).unwrap();
        assert_ne!(m.parameter_checksum(), before);
    }

    #[test]
    fn table_rows_follow_canonical_order() {
        let results = vec![
            ModelScores { name: DYBM_ONLINE.into(), scores: scores(&[1.0, 1.0, 5.0]) },
            ModelScores { name: BASELINE.into(), scores: scores(&[2.0, 2.0, 2.0]) },
            ModelScores { name: LSTM.into(), scores: scores(&[3.0, 0.5, 2.0]) },
        ];
        let report = report_table(&results).unwrap();
        let names: Vec<_> = report.rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(names, [BASELINE, LSTM, DYBM_ONLINE]);
        assert_eq!(report.rows[0].ps_baseline, None);
        assert_eq!(report.rows[1].ps_lstm, None);
        let online = &report.rows[2];
        assert!((online.ps_baseline.unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert!((online.ps_lstm.unwrap() - 100.0 / 3.0).abs() < 1e-12);
        let text = report.render();
        assert!(text.contains("---"));
        assert!(text.lines().nth(3).unwrap().starts_with(DYBM_ONLINE));
    }
}
