//! Stroke corpora: JSON-lines ingestion, velocity normalization, and a
//! synthetic generator for desk-scale experiments.
//!
//! Raw records look like
//! `{"id":"a1","symbol":"K","points":[[x,y],...],"pen_events":[[i,"up"],...]}`.
//! Normalized records look like
//! `{"id":"a1","symbol":"K","start":[x,y],"velocities":[[vx,vy],...]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of zero velocities appended after every stroke.
pub const STOP_PADDING: usize = 5;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenEvent {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeSequence {
    pub id: String,
    pub symbol: String,
    pub points: Vec<Point>,
    #[serde(default)]
    pub pen_events: Vec<(usize, PenEvent)>,
}

impl StrokeSequence {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::invalid(format!("sequence {:?} has fewer than 2 points", self.id)));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sequence {:?} has non-finite points", self.id)));
        }
        if self.pen_events.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::invalid(format!("sequence {:?} has unordered pen events", self.id)));
        }
        if let Some((i, _)) = self.pen_events.iter().find(|(i, _)| *i >= self.points.len()) {
            return Err(Error::invalid(format!("sequence {:?} has a pen event past the end at {i}", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSequence {
    pub id: String,
    pub symbol: String,
    #[serde(rename = "start")]
    pub start_position: Point,
    pub velocities: Vec<Point>,
}

impl NormalizedSequence {
    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    /// Positions `p_0 … p_L` from the start position and cumulative velocities.
    pub fn positions(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.velocities.len() + 1);
        let mut p = self.start_position;
        out.push(p);
        for v in &self.velocities {
            p = [p[0] + v[0], p[1] + v[1]];
            out.push(p);
        }
        out
    }

    /// Velocities as owned vectors, the form predictors consume.
    pub fn velocity_vecs(&self) -> Vec<Vec<f64>> {
        self.velocities.iter().map(|v| v.to_vec()).collect()
    }

    pub fn peak_speed(&self) -> f64 {
        self.velocities.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max)
    }
}

/// Finite differences plus the stop padding. Pen-up gaps stay in as single
/// large velocities.
pub fn normalize(s: &StrokeSequence) -> Result<NormalizedSequence> {
    s.validate()?;
    let mut velocities: Vec<Point> = s.points.windows(2).map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]]).collect();
    velocities.extend(std::iter::repeat_n([0.0, 0.0], STOP_PADDING));
    Ok(NormalizedSequence {
        id: s.id.clone(),
        symbol: s.symbol.clone(),
        start_position: s.points[0],
        velocities,
    })
}

fn parse_lines<T, R>(reader: R) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        out.push(record);
    }
    Ok(out)
}

/// Sequence counts of the two published corpus splits, keyed by file stem.
pub fn expected_count(path: &Path) -> Option<usize> {
    match path.file_stem()?.to_str()? {
        "training1" => Some(6590),
        "testing" => Some(8136),
        _ => None,
    }
}

pub fn read_strokes<R: BufRead>(reader: R) -> Result<Vec<StrokeSequence>> {
    let strokes: Vec<StrokeSequence> = parse_lines(reader)?;
    for s in &strokes {
        s.validate()?;
    }
    Ok(strokes)
}

/// Reads a raw stroke corpus. A count that disagrees with the known split
/// size is logged, not rejected.
pub fn ingest(path: &Path) -> Result<Vec<StrokeSequence>> {
    let strokes = read_strokes(BufReader::new(File::open(path)?))?;
    if let Some(expected) = expected_count(path) {
        if expected != strokes.len() {
            log::warn!("{}: expected {expected} sequences, found {}", path.display(), strokes.len());
        }
    }
    Ok(strokes)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnyRecord {
    Normalized(NormalizedSequence),
    Raw(StrokeSequence),
}

/// Loads either raw or normalized JSON-lines, normalizing raw records.
pub fn load_corpus(path: &Path) -> Result<Vec<NormalizedSequence>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let record: AnyRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        out.push(match record {
            AnyRecord::Normalized(n) => n,
            AnyRecord::Raw(s) => normalize(&s).map_err(|e| parse_err(e.to_string()))?,
        });
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], mut writer: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub mod synth {
    //! Deterministic synthetic strokes in the unit box.

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use serde::{Deserialize, Serialize};

    use super::{PenEvent, Point, StrokeSequence};

    #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
    #[serde(rename_all = "kebab-case")]
    pub enum StrokeKind {
        Line,
        Arc,
        Lissajous,
        /// A polyline letter; the letter is picked from the seed unless
        /// generated through [`letter`].
        PolylineLetter,
    }

    /// Letters as polylines; every inner list is drawn with the pen down.
    fn letter_strokes(symbol: char) -> Option<Vec<Vec<Point>>> {
        let s = match symbol {
            'K' => vec![
                vec![[0.25, 0.9], [0.25, 0.1]],
                vec![[0.75, 0.9], [0.3, 0.5], [0.75, 0.1]],
            ],
            'L' => vec![vec![[0.25, 0.9], [0.25, 0.1], [0.75, 0.1]]],
            'V' => vec![vec![[0.15, 0.9], [0.5, 0.1], [0.85, 0.9]]],
            'Z' => vec![vec![[0.2, 0.9], [0.8, 0.9], [0.2, 0.1], [0.8, 0.1]]],
            'N' => vec![vec![[0.2, 0.1], [0.2, 0.9], [0.8, 0.1], [0.8, 0.9]]],
            'M' => vec![vec![[0.1, 0.1], [0.2, 0.9], [0.5, 0.4], [0.8, 0.9], [0.9, 0.1]]],
            'T' => vec![vec![[0.15, 0.9], [0.85, 0.9]], vec![[0.5, 0.9], [0.5, 0.1]]],
            'X' => vec![vec![[0.2, 0.9], [0.8, 0.1]], vec![[0.8, 0.9], [0.2, 0.1]]],
            _ => return None,
        };
        Some(s)
    }

    pub const LETTERS: [char; 8] = ['K', 'L', 'V', 'Z', 'N', 'M', 'T', 'X'];

    /// Nominal distance between consecutive samples, in unit-box units.
    pub const STEP_LENGTH: f64 = 0.015;

    /// Samples a polyline at constant arc-length spacing `step`.
    fn resample(poly: &[Point], step: f64) -> Vec<Point> {
        let mut out = vec![poly[0]];
        let mut carry = 0.0;
        for seg in poly.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            let mut s = step - carry;
            while s <= len {
                let t = s / len;
                out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
                s += step;
            }
            carry = len - (s - step);
        }
        out
    }

    fn build(id: String, symbol: String, strokes: Vec<Vec<Point>>) -> StrokeSequence {
        let mut points = Vec::new();
        let mut pen_events = Vec::new();
        for (k, stroke) in strokes.into_iter().enumerate() {
            if k > 0 {
                pen_events.push((points.len() - 1, PenEvent::Up));
                pen_events.push((points.len(), PenEvent::Down));
            }
            points.extend(stroke);
        }
        StrokeSequence { id, symbol, points, pen_events }
    }

    fn add_noise(seq: &mut StrokeSequence, noise: f64, rng: &mut ChaCha8Rng) {
        if noise > 0.0 {
            let normal = Normal::new(0.0, noise).expect("noise is finite");
            for p in &mut seq.points {
                p[0] += normal.sample(rng);
                p[1] += normal.sample(rng);
            }
        }
    }

    /// A stroke of `kind` with position noise of standard deviation `noise`.
    /// Identical arguments give identical strokes.
    pub fn synth_generate(kind: StrokeKind, noise: f64, seed: u64) -> StrokeSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let speed = STEP_LENGTH * rng.random_range(0.7..1.3);
        let id = format!("synth-{}-{seed}", kind_name(kind));
        let mut seq = match kind {
            StrokeKind::Line => {
                let a = [rng.random_range(0.1..0.4), rng.random_range(0.1..0.9)];
                let b = [rng.random_range(0.6..0.9), rng.random_range(0.1..0.9)];
                build(id, "-".into(), vec![resample(&[a, b], speed)])
            }
            StrokeKind::Arc => {
                let r: f64 = rng.random_range(0.2..0.4);
                let start = rng.random_range(0.0..std::f64::consts::TAU);
                let sweep: f64 = rng.random_range(2.0..5.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let n = ((r * sweep.abs()) / speed).ceil() as usize;
                let pts = (0..=n)
                    .map(|i| {
                        let t = start + sweep * i as f64 / n as f64;
                        [0.5 + r * t.cos(), 0.5 + r * t.sin()]
                    })
                    .collect();
                build(id, "c".into(), vec![pts])
            }
            StrokeKind::Lissajous => {
                let fx = rng.random_range(1..=3) as f64;
                let fy = fx + 1.0;
                let phase = rng.random_range(0.0..std::f64::consts::PI);
                let n = (2.2 / speed).ceil() as usize;
                let pts = (0..=n)
                    .map(|i| {
                        let t = std::f64::consts::PI * i as f64 / n as f64;
                        [0.5 + 0.35 * (fx * t + phase).sin(), 0.5 + 0.35 * (fy * t).sin()]
                    })
                    .collect();
                build(id, "8".into(), vec![pts])
            }
            StrokeKind::PolylineLetter => {
                let symbol = LETTERS[rng.random_range(0..LETTERS.len())];
                return letter_with(symbol, noise, speed, seed, &mut rng);
            }
        };
        add_noise(&mut seq, noise, &mut rng);
        seq
    }

    /// A specific polyline letter at the nominal speed.
    pub fn letter(symbol: char, noise: f64, seed: u64) -> Option<StrokeSequence> {
        letter_strokes(symbol)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Some(letter_with(symbol, noise, STEP_LENGTH, seed, &mut rng))
    }

    fn letter_with(symbol: char, noise: f64, speed: f64, seed: u64, rng: &mut ChaCha8Rng) -> StrokeSequence {
        let strokes = letter_strokes(symbol).expect("known letter");
        let sampled = strokes.iter().map(|s| resample(s, speed)).collect();
        let mut seq = build(format!("synth-letter-{symbol}-{seed}"), symbol.to_string(), sampled);
        add_noise(&mut seq, noise, rng);
        seq
    }

    pub fn kind_name(kind: StrokeKind) -> &'static str {
        match kind {
            StrokeKind::Line => "line",
            StrokeKind::Arc => "arc",
            StrokeKind::Lissajous => "lissajous",
            StrokeKind::PolylineLetter => "letter",
        }
    }

    /// Default noise level of [`synth_corpus`], in unit-box units.
    pub const CORPUS_NOISE: f64 = 0.002;

    /// `count` strokes cycling through the four kinds, seeded from `seed`.
    pub fn synth_corpus(count: usize, noise: f64, seed: u64) -> Vec<StrokeSequence> {
        const KINDS: [StrokeKind; 4] =
            [StrokeKind::Line, StrokeKind::Arc, StrokeKind::Lissajous, StrokeKind::PolylineLetter];
        (0..count)
            .map(|i| {
                let sub = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                let mut s = synth_generate(KINDS[i % KINDS.len()], noise, sub);
                s.id = format!("{}-{i}", s.id);
                s
            })
            .collect()
    }
}
