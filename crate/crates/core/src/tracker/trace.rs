//! Offline replay traces: line-delimited JSON, an optional header line
//! followed by one [`FrameRecord`] per tracked frame.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{CandidateSet, Predictor};
use crate::error::Error;
use crate::mask::{BBox, BinaryMask};
use crate::membank::MemoryView;

pub const TRACE_HEADER_KIND: &str = "trace_header";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireCandidate {
    pub rle: Vec<u64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub width: usize,
    pub height: usize,
    pub candidates: Vec<WireCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_box: Option<BBox>,
}

impl FrameRecord {
    pub fn from_candidates(frame_index: u64, c: &CandidateSet) -> Self {
        let (width, height) = c.dims();
        Self {
            frame_index,
            width,
            height,
            candidates: c
                .masks()
                .iter()
                .zip(c.scores())
                .map(|(m, &score)| WireCandidate {
                    rle: m.to_rle(),
                    score,
                })
                .collect(),
            gt_mask: None,
            gt_box: None,
        }
    }

    pub fn candidate_set(&self) -> Result<CandidateSet, Error> {
        decode_candidates(self.width, self.height, &self.candidates)
    }

    pub fn gt(&self) -> Result<Option<BinaryMask>, Error> {
        match (&self.gt_mask, &self.gt_box) {
            (Some(rle), _) => Ok(Some(BinaryMask::from_rle(self.width, self.height, rle)?)),
            (None, Some(b)) => Ok(Some(BinaryMask::rectangle(self.width, self.height, *b))),
            (None, None) => Ok(None),
        }
    }
}

pub fn decode_candidates(
    width: usize,
    height: usize,
    candidates: &[WireCandidate],
) -> Result<CandidateSet, Error> {
    let [a, b, c] = candidates else {
        return Err(Error::Invalid(format!(
            "expected 3 candidates, got {}",
            candidates.len()
        )));
    };
    let masks = [
        BinaryMask::from_rle(width, height, &a.rle)?,
        BinaryMask::from_rle(width, height, &b.rle)?,
        BinaryMask::from_rle(width, height, &c.rle)?,
    ];
    CandidateSet::new(masks, [a.score, b.score, c.score])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub kind: String,
    pub version: String,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub init_frame: u64,
    pub init_rle: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl TraceHeader {
    pub fn new(init_frame: u64, init: &BinaryMask, source: Option<String>) -> Self {
        Self {
            kind: TRACE_HEADER_KIND.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            width: init.width(),
            height: init.height(),
            init_frame,
            init_rle: init.to_rle(),
            source,
        }
    }

    pub fn init_mask(&self) -> Result<BinaryMask, Error> {
        Ok(BinaryMask::from_rle(self.width, self.height, &self.init_rle)?)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub header: Option<TraceHeader>,
    pub frames: Vec<FrameRecord>,
}

fn is_header(v: &serde_json::Value) -> bool {
    v.get("kind").and_then(|k| k.as_str()) == Some(TRACE_HEADER_KIND)
}

impl Trace {
    /// Parses and validates a trace: increasing frame indices, decodable
    /// candidate sets, consistent sizes.
    pub fn read(reader: impl BufRead) -> Result<Self, Error> {
        let mut trace = Trace::default();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let at = |e: Error| Error::Invalid(format!("line {}: {e}", lineno + 1));
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| at(e.into()))?;
            if is_header(&value) {
                if lineno != 0 || trace.header.is_some() {
                    return Err(at(Error::Invalid("header must be the first line".into())));
                }
                trace.header = Some(serde_json::from_value(value).map_err(|e| at(e.into()))?);
                continue;
            }
            let rec: FrameRecord = serde_json::from_value(value).map_err(|e| at(e.into()))?;
            if let Some(prev) = trace.frames.last() {
                if rec.frame_index <= prev.frame_index {
                    return Err(at(Error::Invalid(format!(
                        "frame index {} not after {}",
                        rec.frame_index, prev.frame_index
                    ))));
                }
            }
            rec.candidate_set().map_err(at)?;
            rec.gt().map_err(at)?;
            trace.frames.push(rec);
        }
        Ok(trace)
    }

    pub fn write(&self, mut w: impl Write) -> Result<(), Error> {
        if let Some(h) = &self.header {
            serde_json::to_writer(&mut w, h)?;
            w.write_all(b"\n")?;
        }
        for f in &self.frames {
            serde_json::to_writer(&mut w, f)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn frame_indices(&self) -> Vec<u64> {
        self.frames.iter().map(|f| f.frame_index).collect()
    }
}

/// Returns recorded candidate sets and ignores the memory view.
#[derive(Debug, Clone)]
pub struct ReplayPredictor {
    frames: BTreeMap<u64, CandidateSet>,
}

impl ReplayPredictor {
    pub fn new(trace: &Trace) -> Result<Self, Error> {
        let frames = trace
            .frames
            .iter()
            .map(|f| Ok((f.frame_index, f.candidate_set()?)))
            .collect::<Result<_, Error>>()?;
        Ok(Self { frames })
    }

    pub fn get(&self, frame_index: u64) -> Option<&CandidateSet> {
        self.frames.get(&frame_index)
    }
}

impl Predictor for ReplayPredictor {
    fn predict(&mut self, frame_index: u64, _view: &MemoryView<'_>) -> Result<CandidateSet, Error> {
        self.frames
            .get(&frame_index)
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("frame {frame_index} is not in the trace")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::membank::{BankConfig, MemoryBank};

    fn rec(frame: u64, score: f64) -> FrameRecord {
        let m = BinaryMask::rectangle(4, 3, BBox::new(0, 0, 1, 1).unwrap());
        let e = BinaryMask::new(4, 3);
        let c = CandidateSet::new([m, e.clone(), e], [score, 0.0, 0.0]).unwrap();
        FrameRecord::from_candidates(frame, &c)
    }

    fn trace_text(recs: &[FrameRecord]) -> String {
        let t = Trace {
            header: None,
            frames: recs.to_vec(),
        };
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn replay_in_order() {
        let recs = vec![rec(1, 0.1), rec(2, 0.2), rec(3, 0.3)];
        let t = Trace::read(trace_text(&recs).as_bytes()).unwrap();
        let mut p = ReplayPredictor::new(&t).unwrap();
        let bank = MemoryBank::new(BankConfig::default(), 0, BinaryMask::full(4, 3)).unwrap();
        for r in &recs {
            let c = p.predict(r.frame_index, &bank.view()).unwrap();
            assert_eq!(c, r.candidate_set().unwrap());
        }
        assert!(p.predict(5, &bank.view()).is_err());
    }

    #[test]
    fn scores_keep_full_precision() {
        let s = 0.1 + 0.2;
        let t = Trace::read(trace_text(&[rec(1, s)]).as_bytes()).unwrap();
        assert_eq!(t.frames[0].candidates[0].score, s);
    }

    #[test]
    fn rejects_bad_traces() {
        let text = trace_text(&[rec(2, 0.5), rec(1, 0.5)]);
        assert!(Trace::read(text.as_bytes()).is_err());

        let mut bad = rec(1, 0.5);
        bad.candidates[0].rle = vec![1, 2];
        assert!(Trace::read(trace_text(&[bad]).as_bytes()).is_err());

        let mut two = rec(1, 0.5);
        two.candidates.pop();
        assert!(Trace::read(trace_text(&[two]).as_bytes()).is_err());

        let neg = r#"{"frame_index":1,"width":1,"height":1,"candidates":[{"rle":[-1,2],"score":0.1},{"rle":[1],"score":0},{"rle":[1],"score":0}]}"#;
        assert!(Trace::read(neg.as_bytes()).is_err());

        let extra = r#"{"frame_index":1,"width":1,"height":1,"bogus":1,"candidates":[]}"#;
        assert!(Trace::read(extra.as_bytes()).is_err());
    }

    #[test]
    fn header_round_trip() {
        let init = BinaryMask::full(4, 3);
        let t = Trace {
            header: Some(TraceHeader::new(0, &init, Some("unit".into()))),
            frames: vec![rec(1, 0.9)],
        };
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = Trace::read(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.header.unwrap().init_mask().unwrap(), init);
    }
}
