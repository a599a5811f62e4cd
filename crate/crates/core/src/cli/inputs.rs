//! Loading sequences, ground truth and result files for the CLI.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{usage, CliError, InputArgs};
use crate::error::Error;
use crate::mask::BinaryMask;
use crate::membank::BankConfig;
use crate::policy::PolicyConfig;
use crate::tracker::realtime::{rt_replay, Budget};
use crate::tracker::sim::{self, BlobPredictor, BlobScenario};
use crate::tracker::trace::{ReplayPredictor, Trace};
use crate::tracker::{run_sequence, FrameRow, Predictor, TrackingResult};

pub(crate) fn open(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::from(e).in_file(path.display().to_string()))
}

pub(crate) fn load_trace(path: &Path) -> Result<Trace, Error> {
    Trace::read(open(path)?).map_err(|e| e.in_file(path.display().to_string()))
}

pub(crate) fn load_scenario(spec: &str) -> Result<BlobScenario, Error> {
    if spec == "crossing" {
        return Ok(sim::canonical_crossing_scenario());
    }
    let sc: BlobScenario = serde_json::from_reader(open(Path::new(spec))?).map_err(|e| Error::from(e).in_file(spec))?;
    sc.validate().map_err(|e| e.in_file(spec))?;
    Ok(sc)
}

fn parse_rle(text: &str) -> Result<Vec<u64>, CliError> {
    text.split(',')
        .map(|t| t.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .or_else(|_| usage(format!("--init-rle expects comma-separated counts, got `{text}`")))
}

/// One trackable sequence.
pub(crate) enum Sequence {
    Scenario(BlobScenario),
    Trace {
        name: String,
        trace: Trace,
        init_frame: u64,
        init_mask: BinaryMask,
    },
}

impl Sequence {
    pub(crate) fn name(&self) -> &str {
        match self {
            Sequence::Scenario(s) => &s.name,
            Sequence::Trace { name, .. } => name,
        }
    }

    fn init(&self) -> (u64, BinaryMask) {
        match self {
            Sequence::Scenario(s) => (0, s.init_mask()),
            Sequence::Trace {
                init_frame, init_mask, ..
            } => (*init_frame, init_mask.clone()),
        }
    }

    pub(crate) fn frames(&self) -> Vec<u64> {
        match self {
            Sequence::Scenario(s) => (1..s.num_frames() as u64).collect(),
            Sequence::Trace { trace, .. } => trace.frame_indices(),
        }
    }

    fn predictor(&self) -> Result<Box<dyn Predictor + '_>, Error> {
        Ok(match self {
            Sequence::Scenario(s) => Box::new(BlobPredictor::new(s)),
            Sequence::Trace { trace, .. } => Box::new(ReplayPredictor::new(trace)?),
        })
    }

    pub(crate) fn run(&self, policy: PolicyConfig, bank: BankConfig) -> Result<TrackingResult, Error> {
        let (f0, init) = self.init();
        run_sequence(&mut self.predictor()?, f0, init, self.frames(), policy, bank)
    }

    pub(crate) fn run_with(
        &self,
        predictor: &mut dyn Predictor,
        policy: PolicyConfig,
        bank: BankConfig,
    ) -> Result<TrackingResult, Error> {
        let (f0, init) = self.init();
        run_sequence(predictor, f0, init, self.frames(), policy, bank)
    }

    pub(crate) fn run_rt(
        &self,
        latencies: &[f64],
        budget: Budget,
        policy: PolicyConfig,
        bank: BankConfig,
    ) -> Result<TrackingResult, Error> {
        let (f0, init) = self.init();
        rt_replay(&mut self.predictor()?, f0, init, &self.frames(), latencies, budget, policy, bank)
    }

    pub(crate) fn init_mask(&self) -> BinaryMask {
        self.init().1
    }

    /// Ground truth for the tracked frames (initialization excluded).
    pub(crate) fn gt(&self) -> Result<Vec<BinaryMask>, Error> {
        match self {
            Sequence::Scenario(s) => Ok(sim::scenario_gt(s)[1..].to_vec()),
            Sequence::Trace { name, trace, .. } => trace
                .frames
                .iter()
                .map(|f| {
                    f.gt()?.ok_or_else(|| {
                        Error::Invalid(format!("{name}: frame {} has no ground truth", f.frame_index))
                    })
                })
                .collect(),
        }
    }
}

fn trace_sequence(path: &Path, init_rle: Option<&str>) -> Result<Sequence, CliError> {
    let trace = load_trace(path)?;
    let name = path.display().to_string();
    let (init_frame, init_mask) = match (&trace.header, init_rle) {
        (_, Some(text)) => {
            let Some(first) = trace.frames.first() else {
                return Err(Error::EmptyInput("trace has no frames").in_file(name).into());
            };
            let m = BinaryMask::from_rle(first.width, first.height, &parse_rle(text)?)
                .map_err(|e| Error::from(e).in_file(&name))?;
            (first.frame_index.saturating_sub(1), m)
        }
        (Some(h), None) => (h.init_frame, h.init_mask().map_err(|e| e.in_file(&name))?),
        (None, None) => {
            return usage(format!("{name} has no header line; pass --init-rle"));
        }
    };
    Ok(Sequence::Trace {
        name,
        trace,
        init_frame,
        init_mask,
    })
}

pub(crate) fn load_sequences(a: &InputArgs) -> Result<Vec<Sequence>, CliError> {
    let mut out = Vec::new();
    for p in &a.trace {
        out.push(trace_sequence(p, a.init_rle.as_deref())?);
    }
    for spec in &a.scenario {
        if spec == "suite" {
            out.extend(
                sim::crossing_suite(a.suite_seed, a.suite_size)
                    .into_iter()
                    .map(Sequence::Scenario),
            );
        } else {
            out.push(Sequence::Scenario(load_scenario(spec)?));
        }
    }
    if out.is_empty() {
        return usage("no input: pass --trace or --scenario");
    }
    Ok(out)
}

/// The `sequence` record that precedes a result's frame rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct SequenceRecord {
    #[serde(rename = "type")]
    pub kind: String,
    pub name: String,
    pub width: usize,
    pub height: usize,
}

/// The `summary` record that follows a result's frame rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct SummaryRecord {
    #[serde(rename = "type")]
    pub kind: String,
    pub name: String,
    pub frames: usize,
    pub skipped: usize,
    pub bank_writes: usize,
    pub drm_updates: Vec<u64>,
    pub digest: String,
}

pub(crate) fn write_result(out: &mut super::Output, name: &str, r: &TrackingResult) {
    out.record(&SequenceRecord {
        kind: "sequence".into(),
        name: name.into(),
        width: r.width,
        height: r.height,
    });
    for row in &r.rows {
        out.record(row);
    }
    out.record(&SummaryRecord {
        kind: "summary".into(),
        name: name.into(),
        frames: r.rows.len(),
        skipped: r.rows.iter().filter(|r| r.skipped).count(),
        bank_writes: r.bank_writes(),
        drm_updates: r.drm_updates(),
        digest: r.digest(),
    });
}

/// A parsed result file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultFile {
    pub name: String,
    pub result: TrackingResult,
}

/// Reads a result file written by `track` or `rt`.
pub fn read_result(reader: impl BufRead) -> Result<ResultFile, Error> {
    let mut seq: Option<SequenceRecord> = None;
    let mut rows: Vec<FrameRow> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |e: Error| Error::Invalid(format!("line {}: {e}", i + 1));
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| at(e.into()))?;
        match v.get("type").and_then(|t| t.as_str()) {
            Some("sequence") => {
                if seq.is_some() {
                    return Err(at(Error::Invalid("more than one sequence in a result file".into())));
                }
                seq = Some(serde_json::from_value(v).map_err(|e| at(e.into()))?);
            }
            Some(_) => {}
            None => rows.push(serde_json::from_value(v).map_err(|e| at(e.into()))?),
        }
    }
    let seq = seq.ok_or(Error::EmptyInput("result file has no sequence record"))?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("result file has no frames"));
    }
    Ok(ResultFile {
        name: seq.name,
        result: TrackingResult {
            width: seq.width,
            height: seq.height,
            rows,
        },
    })
}

pub(crate) fn load_result(path: &Path) -> Result<ResultFile, Error> {
    read_result(open(path)?).map_err(|e| e.in_file(path.display().to_string()))
}

/// Ground truth for `eval`, keyed by frame index.
pub(crate) fn load_gt(spec: &str) -> Result<Vec<(u64, BinaryMask)>, Error> {
    if let Some(sc) = spec.strip_prefix("scenario:") {
        let sc = load_scenario(sc)?;
        return Ok((1..sc.num_frames() as u64).map(|f| (f, sc.gt_mask(f))).collect());
    }
    let path = Path::new(spec);
    // A result file starts with a header record; a trace does not.
    let mut first = String::new();
    open(path)?.read_line(&mut first)?;
    let is_result = serde_json::from_str::<serde_json::Value>(&first)
        .ok()
        .and_then(|v| v.get("type").map(|t| t == "header"))
        .unwrap_or(false);
    if is_result {
        let r = load_result(path)?;
        let masks = r.result.masks()?;
        return Ok(r.result.rows.iter().map(|r| r.frame_index).zip(masks).skip(1).collect());
    }
    let trace = load_trace(path)?;
    trace
        .frames
        .iter()
        .map(|f| {
            let g = f.gt()?.ok_or_else(|| {
                Error::Invalid(format!("frame {} has no ground truth", f.frame_index)).in_file(spec)
            })?;
            Ok((f.frame_index, g))
        })
        .collect()
}
