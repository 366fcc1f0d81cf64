//! Learning-curve logs: one JSON object per line, each carrying the run's
//! identity so files can be concatenated and re-split.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::BufRead;
use std::path::Path;

/// Identity of one training run, repeated on every line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub arch: String,
    #[serde(rename = "N")]
    pub n_params: u64,
    pub width: usize,
    pub depth: usize,
    pub sym_loss_active: bool,
    #[serde(rename = "M")]
    pub m: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub version: String,
    pub config_hash: String,
}

/// One validation checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    /// Atoms consumed so far (D).
    pub tokens: u64,
    /// Training FLOPs so far (C).
    pub flops: u64,
    pub wall_seconds: f64,
    /// Task-only loss on the held-out split.
    pub val_loss: f64,
}

impl CurvePoint {
    pub fn wall_hours(&self) -> f64 {
        self.wall_seconds / 3600.0
    }
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub failure: String,
    pub step: u64,
    /// Offending loss, absent when it was not finite.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub meta: Option<RunMeta>,
    pub points: Vec<CurvePoint>,
    pub failure: Option<Failure>,
}

#[derive(Serialize, Deserialize)]
struct PointLine {
    #[serde(flatten)]
    meta: RunMeta,
    #[serde(flatten)]
    point: CurvePoint,
}

#[derive(Serialize, Deserialize)]
struct FailureLine {
    #[serde(flatten)]
    meta: RunMeta,
    #[serde(flatten)]
    failure: Failure,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Line {
    Failure(FailureLine),
    Point(PointLine),
}

impl RunLog {
    pub fn new(meta: RunMeta) -> Self {
        Self { meta: Some(meta), points: Vec::new(), failure: None }
    }

    pub fn meta(&self) -> &RunMeta {
        self.meta.as_ref().expect("run log without identity")
    }

    pub fn diverged(&self) -> bool {
        self.failure.is_some()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.points.last().map(|p| p.val_loss)
    }

    /// Points after dropping the leading `fraction` of checkpoints.
    pub fn fit_window(&self, fraction: f64) -> &[CurvePoint] {
        let skip = ((self.points.len() as f64) * fraction.clamp(0.0, 1.0)).ceil() as usize;
        &self.points[skip.min(self.points.len())..]
    }

    /// Checks that D and C strictly increase, time never decreases, and losses are finite.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !p.val_loss.is_finite() {
                return Err(Error::Parse { line: i + 1, message: "non-finite validation loss".into() });
            }
            if i > 0 {
                let q = &self.points[i - 1];
                if p.tokens <= q.tokens || p.flops <= q.flops || p.wall_seconds < q.wall_seconds {
                    return Err(Error::Parse { line: i + 1, message: "checkpoints are not increasing".into() });
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let meta = self.meta();
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&serde_json::to_string(&PointLine { meta: meta.clone(), point: *p })?);
            out.push('\n');
        }
        if let Some(f) = &self.failure {
            out.push_str(&serde_json::to_string(&FailureLine { meta: meta.clone(), failure: f.clone() })?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Splits a stream of lines into runs; a new run starts whenever the identity changes.
pub fn parse_runlogs<R: BufRead>(reader: R) -> Result<Vec<RunLog>> {
    let mut runs: Vec<RunLog> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        let (meta, point, failure) = match parsed {
            Line::Point(p) => (p.meta, Some(p.point), None),
            Line::Failure(f) => (f.meta, None, Some(f.failure)),
        };
        let same = runs.last().is_some_and(|r| r.meta.as_ref() == Some(&meta) && r.failure.is_none());
        if !same {
            runs.push(RunLog::new(meta));
        }
        let run = runs.last_mut().expect("just pushed");
        if let Some(p) = point {
            run.points.push(p);
        }
        if failure.is_some() {
            run.failure = failure;
        }
    }
    for r in &runs {
        r.validate()?;
    }
    Ok(runs)
}

/// Reads every run from a file, or from each `*.jsonl` file of a directory in name order.
pub fn read_runlogs(path: &Path) -> Result<Vec<RunLog>> {
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in std::fs::read_dir(path)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "jsonl") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    let mut runs = Vec::new();
    for f in files {
        let file = std::fs::File::open(&f)?;
        runs.extend(parse_runlogs(std::io::BufReader::new(file))?);
    }
    Ok(runs)
}

/// Short stable digest of any serializable value.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&json);
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}
