//! Per-sequence tracking loop and the predictors that feed it.
//!
//! For every frame after initialization the session hands the current memory
//! view to a [`Predictor`], picks the candidate with the highest predicted
//! IoU, asks the policy what to write back, and applies that to the bank.

pub mod protocol;
pub mod realtime;
pub mod sim;
pub mod trace;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::mask::BinaryMask;
use crate::membank::{BankConfig, MemoryBank, MemoryView, ViewSlot};
use crate::policy::{self, PolicyConfig, PolicyState, UpdateDecision};

/// Three mask hypotheses with their predicted IoU scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    masks: [BinaryMask; 3],
    scores: [f64; 3],
}

impl CandidateSet {
    pub fn new(masks: [BinaryMask; 3], scores: [f64; 3]) -> Result<Self, Error> {
        let dims = masks[0].dims();
        if masks.iter().any(|m| m.dims() != dims) {
            return Err(Error::Invalid("candidate masks differ in size".into()));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Invalid(format!("candidate score {s} outside [0, 1]")));
        }
        Ok(Self { masks, scores })
    }

    /// All three candidates empty with score zero.
    pub fn empty(width: usize, height: usize) -> Self {
        let e = BinaryMask::new(width, height);
        Self {
            masks: [e.clone(), e.clone(), e],
            scores: [0.0; 3],
        }
    }

    pub fn masks(&self) -> &[BinaryMask; 3] {
        &self.masks
    }

    pub fn scores(&self) -> &[f64; 3] {
        &self.scores
    }

    pub fn dims(&self) -> (usize, usize) {
        self.masks[0].dims()
    }
}

/// Index of the highest score; the lowest index wins ties.
pub fn select_output(c: &CandidateSet) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if c.scores[i] > c.scores[best] {
            best = i;
        }
    }
    best
}

pub trait Predictor {
    fn predict(&mut self, frame_index: u64, view: &MemoryView<'_>) -> Result<CandidateSet, Error>;
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict(&mut self, frame_index: u64, view: &MemoryView<'_>) -> Result<CandidateSet, Error> {
        (**self).predict(frame_index, view)
    }
}

/// One line of a result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRow {
    pub frame_index: u64,
    /// Run lengths of the reported mask.
    pub mask: Vec<u64>,
    /// Selected candidate; absent for the initialization frame and for frames
    /// skipped under real-time replay.
    pub chosen: Option<usize>,
    pub score: Option<f64>,
    pub decision: Option<UpdateDecision>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
    /// Bank contents after the frame was processed.
    pub view: Vec<ViewSlot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingResult {
    pub width: usize,
    pub height: usize,
    pub rows: Vec<FrameRow>,
}

impl TrackingResult {
    pub fn masks(&self) -> Result<Vec<BinaryMask>, Error> {
        self.rows
            .iter()
            .map(|r| Ok(BinaryMask::from_rle(self.width, self.height, &r.mask)?))
            .collect()
    }

    /// Number of FIFO writes (RAM and DRM) made across the run.
    pub fn bank_writes(&self) -> usize {
        self.rows
            .iter()
            .filter_map(|r| r.decision.as_ref())
            .map(|d| d.update_ram as usize + d.update_drm as usize)
            .sum()
    }

    pub fn drm_updates(&self) -> Vec<u64> {
        self.rows
            .iter()
            .filter(|r| r.decision.as_ref().is_some_and(|d| d.update_drm))
            .map(|r| r.frame_index)
            .collect()
    }

    /// SHA-256 over the serialized rows.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{}x{}\n", self.width, self.height));
        for r in &self.rows {
            h.update(serde_json::to_vec(r).expect("rows serialize"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// A single sequence's tracking state: bank, policy counters and the last
/// reported mask.
#[derive(Debug, Clone)]
pub struct TrackingSession {
    policy: PolicyConfig,
    bank: MemoryBank,
    state: PolicyState,
    last_output: BinaryMask,
}

impl TrackingSession {
    pub fn new(
        policy: PolicyConfig,
        bank: BankConfig,
        init_frame: u64,
        init_mask: BinaryMask,
    ) -> Result<Self, Error> {
        policy.validate()?;
        let bank = MemoryBank::new(policy.variant.bank_config(bank), init_frame, init_mask.clone())?;
        Ok(Self {
            state: PolicyState::new(&policy),
            policy,
            bank,
            last_output: init_mask,
        })
    }

    pub fn policy(&self) -> &PolicyConfig {
        &self.policy
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn state(&self) -> &PolicyState {
        &self.state
    }

    pub fn dims(&self) -> (usize, usize) {
        self.last_output.dims()
    }

    pub fn view(&self) -> MemoryView<'_> {
        self.bank.view()
    }

    pub fn last_output(&self) -> &BinaryMask {
        &self.last_output
    }

    pub fn init_row(&self) -> FrameRow {
        let init = self.bank.init_entry();
        FrameRow {
            frame_index: init.frame_index,
            mask: init.mask.to_rle(),
            chosen: None,
            score: None,
            decision: None,
            skipped: false,
            view: self.bank.snapshot(),
        }
    }

    /// Processes externally produced candidates for `frame_index`.
    pub fn step(&mut self, frame_index: u64, candidates: CandidateSet) -> Result<FrameRow, Error> {
        let (w, h) = self.dims();
        let (cw, ch) = candidates.dims();
        if (cw, ch) != (w, h) {
            return Err(Error::DimensionDrift {
                frame: frame_index,
                expected_w: w,
                expected_h: h,
                got_w: cw,
                got_h: ch,
            });
        }
        let selected = select_output(&candidates);
        let bank_cfg = *self.bank.config();
        let decision = policy::decide(
            frame_index,
            &candidates,
            selected,
            &self.state,
            &self.policy,
            &bank_cfg,
        )
        .map_err(|e| Error::AtFrame {
            frame: frame_index,
            source: Box::new(e),
        })?;

        let output = candidates.masks()[selected].clone();
        if decision.update_drm {
            self.bank.insert_drm(frame_index, output.clone());
        }
        if decision.update_ram {
            self.bank.insert_ram(frame_index, output.clone());
        }
        if decision.set_latest {
            self.bank.set_latest(frame_index, output.clone());
        } else if output.is_empty() {
            self.bank.clear_latest();
        }
        self.state.apply(frame_index, &decision, output.area());

        let row = FrameRow {
            frame_index,
            mask: output.to_rle(),
            chosen: Some(selected),
            score: Some(candidates.scores()[selected]),
            decision: Some(decision),
            skipped: false,
            view: self.bank.snapshot(),
        };
        self.last_output = output;
        Ok(row)
    }

    /// Queries the predictor with the current view, then steps.
    pub fn track<P: Predictor + ?Sized>(
        &mut self,
        frame_index: u64,
        predictor: &mut P,
    ) -> Result<FrameRow, Error> {
        let candidates = predictor
            .predict(frame_index, &self.bank.view())
            .map_err(|e| Error::AtFrame {
                frame: frame_index,
                source: Box::new(e),
            })?;
        self.step(frame_index, candidates)
    }

    /// Row for a frame the tracker never saw: repeats the last output.
    pub fn skip_row(&self, frame_index: u64) -> FrameRow {
        FrameRow {
            frame_index,
            mask: self.last_output.to_rle(),
            chosen: None,
            score: None,
            decision: None,
            skipped: true,
            view: self.bank.snapshot(),
        }
    }
}

/// Runs a whole sequence. Frame `init_frame` is the initialization frame and
/// contributes the first row; `frames` are tracked in order after it.
pub fn run_sequence<P: Predictor + ?Sized>(
    predictor: &mut P,
    init_frame: u64,
    init_mask: BinaryMask,
    frames: impl IntoIterator<Item = u64>,
    policy: PolicyConfig,
    bank: BankConfig,
) -> Result<TrackingResult, Error> {
    let (width, height) = init_mask.dims();
    let mut session = TrackingSession::new(policy, bank, init_frame, init_mask)?;
    let mut rows = vec![session.init_row()];
    for f in frames {
        rows.push(session.track(f, predictor)?);
    }
    Ok(TrackingResult { width, height, rows })
}

/// Wraps a predictor and records every candidate set it returns.
pub struct Recorder<P> {
    pub inner: P,
    pub log: Vec<(u64, CandidateSet)>,
}

impl<P> Recorder<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            log: Vec::new(),
        }
    }
}

impl<P: Predictor> Predictor for Recorder<P> {
    fn predict(&mut self, frame_index: u64, view: &MemoryView<'_>) -> Result<CandidateSet, Error> {
        let c = self.inner.predict(frame_index, view)?;
        self.log.push((frame_index, c.clone()));
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BBox;
    use crate::policy::{Reason, Variant};

    fn scores(s: [f64; 3]) -> CandidateSet {
        let m = BinaryMask::new(2, 2);
        CandidateSet::new([m.clone(), m.clone(), m], s).unwrap()
    }

    #[test]
    fn select_examples() {
        assert_eq!(select_output(&scores([0.9, 0.2, 0.1])), 0);
        assert_eq!(select_output(&scores([0.5, 0.5, 0.1])), 0);
        assert_eq!(select_output(&scores([0.1, 0.2, 0.9])), 2);
        assert_eq!(select_output(&scores([0.1, 0.7, 0.7])), 1);
    }

    #[test]
    fn candidate_validation() {
        let m = BinaryMask::new(2, 2);
        assert!(CandidateSet::new([m.clone(), m.clone(), BinaryMask::new(3, 2)], [0.0; 3]).is_err());
        assert!(CandidateSet::new([m.clone(), m.clone(), m.clone()], [0.0, 1.5, 0.0]).is_err());
        assert!(CandidateSet::new([m.clone(), m.clone(), m], [f64::NAN, 0.0, 0.0]).is_err());
    }

    struct Fixed(Vec<CandidateSet>);

    impl Predictor for Fixed {
        fn predict(&mut self, f: u64, _: &MemoryView<'_>) -> Result<CandidateSet, Error> {
            self.0
                .get(f as usize - 1)
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("no frame {f}")))
        }
    }

    fn init() -> BinaryMask {
        BinaryMask::rectangle(16, 16, BBox::new(2, 2, 5, 5).unwrap())
    }

    fn policy(v: Variant) -> PolicyConfig {
        PolicyConfig {
            variant: v,
            ..Default::default()
        }
    }

    #[test]
    fn one_frame_sequence() {
        let mut p = Fixed(vec![]);
        let r = run_sequence(&mut p, 0, init(), [], policy(Variant::DamFull), BankConfig::default()).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].view.len(), 1);
        assert_eq!(r.rows[0].mask, init().to_rle());
    }

    #[test]
    fn all_absent_frames_freeze_the_bank() {
        let mut p = Fixed(vec![CandidateSet::empty(16, 16); 10]);
        let r = run_sequence(&mut p, 0, init(), 1..=10, policy(Variant::DamFull), BankConfig::default()).unwrap();
        assert_eq!(r.bank_writes(), 0);
        for row in &r.rows[1..] {
            assert_eq!(row.decision.as_ref().unwrap().reasons, vec![Reason::Absent]);
        }
    }

    #[test]
    fn dimension_drift_is_an_error() {
        let mut p = Fixed(vec![CandidateSet::empty(8, 8)]);
        let err = run_sequence(&mut p, 0, init(), [1], policy(Variant::DamFull), BankConfig::default());
        assert!(matches!(err, Err(Error::DimensionDrift { frame: 1, .. })));
    }

    #[test]
    fn predictor_error_carries_frame() {
        let mut p = Fixed(vec![]);
        let err = run_sequence(&mut p, 0, init(), [1], policy(Variant::DamFull), BankConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::AtFrame { frame: 1, .. }));
        assert!(err.to_string().contains("frame 1"));
    }

    #[test]
    fn latest_cleared_on_absence() {
        let full = CandidateSet::new(
            [init(), BinaryMask::new(16, 16), BinaryMask::new(16, 16)],
            [0.9, 0.0, 0.0],
        )
        .unwrap();
        let mut p = Fixed(vec![full, CandidateSet::empty(16, 16)]);
        let r = run_sequence(&mut p, 0, init(), [1, 2], policy(Variant::DamFull), BankConfig::default()).unwrap();
        assert!(r.rows[1].view.iter().any(|s| s.kind == crate::membank::EntryKind::RamLatest));
        assert!(r.rows[2].view.iter().all(|s| s.kind != crate::membank::EntryKind::RamLatest));
    }
}
