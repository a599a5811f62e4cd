//! C ABI over `dam-core`.
//!
//! Objects are opaque handles created and destroyed through this API. Every
//! fallible call returns a [`DamStatus`]; on failure the message is available
//! from [`dam_last_error_message`] on the same thread. Panics never cross the
//! boundary.
//!
//! Buffers follow one convention: the caller passes a pointer and a capacity,
//! the callee always stores the required length, and returns
//! `DAM_STATUS_BUFFER_TOO_SMALL` when the capacity is insufficient.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dam_core::mask::{BBox, BinaryMask};
use dam_core::membank::{BankConfig, EntryKind};
use dam_core::policy::{PolicyConfig, Reason, Variant};
use dam_core::tracker::{CandidateSet, TrackingSession};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DamStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    BufferTooSmall = 4,
    InternalError = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DamVariant {
    Sam21Baseline = 0,
    Pres = 1,
    DeltaOnly = 2,
    Drm1 = 3,
    Drm2 = 4,
    DamFull = 5,
    DrmTenc = 6,
    RamNoLast = 7,
}

impl From<DamVariant> for Variant {
    fn from(v: DamVariant) -> Self {
        match v {
            DamVariant::Sam21Baseline => Variant::Sam21Baseline,
            DamVariant::Pres => Variant::Pres,
            DamVariant::DeltaOnly => Variant::DeltaOnly,
            DamVariant::Drm1 => Variant::Drm1,
            DamVariant::Drm2 => Variant::Drm2,
            DamVariant::DamFull => Variant::DamFull,
            DamVariant::DrmTenc => Variant::DrmTenc,
            DamVariant::RamNoLast => Variant::RamNoLast,
        }
    }
}

impl From<Variant> for DamVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Sam21Baseline => DamVariant::Sam21Baseline,
            Variant::Pres => DamVariant::Pres,
            Variant::DeltaOnly => DamVariant::DeltaOnly,
            Variant::Drm1 => DamVariant::Drm1,
            Variant::Drm2 => DamVariant::Drm2,
            Variant::DamFull => DamVariant::DamFull,
            Variant::DrmTenc => DamVariant::DrmTenc,
            Variant::RamNoLast => DamVariant::RamNoLast,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DamEntryKind {
    Init = 0,
    Ram = 1,
    RamLatest = 2,
    Drm = 3,
}

impl From<EntryKind> for DamEntryKind {
    fn from(k: EntryKind) -> Self {
        match k {
            EntryKind::Init => DamEntryKind::Init,
            EntryKind::Ram => DamEntryKind::Ram,
            EntryKind::RamLatest => DamEntryKind::RamLatest,
            EntryKind::Drm => DamEntryKind::Drm,
        }
    }
}

/// Policy and bank parameters. Fill with [`dam_config_default`] first.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DamConfig {
    /// One of the `DamVariant` values.
    pub variant: u32,
    pub delta: u64,
    pub theta_anc: f64,
    pub theta_iou: f64,
    pub theta_area: f64,
    pub theta_m: usize,
    pub n_dam: usize,
    pub temporal_encoding_on_drm: bool,
    pub include_latest_in_ram: bool,
}

impl DamVariant {
    fn from_raw(v: u32) -> Result<Self, Failure> {
        Ok(match v {
            0 => DamVariant::Sam21Baseline,
            1 => DamVariant::Pres,
            2 => DamVariant::DeltaOnly,
            3 => DamVariant::Drm1,
            4 => DamVariant::Drm2,
            5 => DamVariant::DamFull,
            6 => DamVariant::DrmTenc,
            7 => DamVariant::RamNoLast,
            _ => return Err(Failure::new(DamStatus::InvalidArgument, format!("unknown variant {v}"))),
        })
    }
}

impl DamConfig {
    fn split(&self) -> Result<(PolicyConfig, BankConfig), Failure> {
        let variant = DamVariant::from_raw(self.variant)?;
        Ok((
            PolicyConfig {
                delta: self.delta,
                theta_anc: self.theta_anc,
                theta_iou: self.theta_iou,
                theta_area: self.theta_area,
                theta_m: self.theta_m,
                variant: variant.into(),
            },
            BankConfig {
                n_dam: self.n_dam,
                temporal_encoding_on_drm: self.temporal_encoding_on_drm,
                include_latest_in_ram: self.include_latest_in_ram,
            },
        ))
    }
}

/// Inclusive pixel bounds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DamBBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl From<BBox> for DamBBox {
    fn from(b: BBox) -> Self {
        DamBBox {
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
        }
    }
}

pub const DAM_REASON_ABSENT: u32 = 1;
pub const DAM_REASON_INTERVAL: u32 = 1 << 1;
pub const DAM_REASON_ANCHOR: u32 = 1 << 2;
pub const DAM_REASON_UNSTABLE_IOU: u32 = 1 << 3;
pub const DAM_REASON_UNSTABLE_AREA: u32 = 1 << 4;

/// Outcome of one tracking step.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DamDecision {
    /// Index of the selected candidate.
    pub chosen: u32,
    pub score: f64,
    pub update_ram: bool,
    pub update_drm: bool,
    pub set_latest: bool,
    pub has_anchor_ratio: bool,
    pub anchor_ratio: f64,
    /// Bitwise OR of `DAM_REASON_*`.
    pub reasons: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DamViewSlot {
    pub frame_index: u64,
    pub kind: DamEntryKind,
    /// -1 when the entry carries no temporal rank.
    pub temporal_rank: i64,
}

/// Opaque binary mask.
pub struct DamMask {
    inner: BinaryMask,
}

/// Opaque tracking session.
pub struct DamSession {
    inner: TrackingSession,
}

struct Failure {
    status: DamStatus,
    message: String,
}

impl Failure {
    fn new(status: DamStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }

    fn null(what: &str) -> Self {
        Failure::new(DamStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<dam_core::Error> for Failure {
    fn from(e: dam_core::Error) -> Self {
        let status = match &e {
            dam_core::Error::Config(_) => DamStatus::InvalidArgument,
            e if e.is_data_error() => DamStatus::DataError,
            _ => DamStatus::InternalError,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<dam_core::MaskError> for Failure {
    fn from(e: dam_core::MaskError) -> Self {
        Failure::new(DamStatus::DataError, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DamStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(_) => {
            set_last_error("internal panic");
            DamStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

/// Copies `items` into a caller buffer; always stores the full length.
unsafe fn fill<T: Copy>(items: &[T], buf: *mut T, cap: usize, len: *mut usize) -> Result<(), Failure> {
    *deref_mut(len, "len")? = items.len();
    if items.len() > cap || (buf.is_null() && !items.is_empty()) {
        return Err(Failure::new(
            DamStatus::BufferTooSmall,
            format!("need {} elements, capacity {cap}", items.len()),
        ));
    }
    if !items.is_empty() {
        ptr::copy_nonoverlapping(items.as_ptr(), buf, items.len());
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dam_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated) and returns its full length in bytes, or 0 when the last
/// call succeeded.
#[no_mangle]
pub unsafe extern "C" fn dam_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && cap > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

#[no_mangle]
pub unsafe extern "C" fn dam_config_default(out: *mut DamConfig) -> DamStatus {
    guard(|| {
        let p = PolicyConfig::default();
        let b = BankConfig::default();
        *deref_mut(out, "out")? = DamConfig {
            variant: DamVariant::from(p.variant) as u32,
            delta: p.delta,
            theta_anc: p.theta_anc,
            theta_iou: p.theta_iou,
            theta_area: p.theta_area,
            theta_m: p.theta_m,
            n_dam: b.n_dam,
            temporal_encoding_on_drm: b.temporal_encoding_on_drm,
            include_latest_in_ram: b.include_latest_in_ram,
        };
        Ok(())
    })
}

/// Creates an all-zero mask.
#[no_mangle]
pub unsafe extern "C" fn dam_mask_new(width: usize, height: usize, out: *mut *mut DamMask) -> DamStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = Box::into_raw(Box::new(DamMask {
            inner: BinaryMask::new(width, height),
        }));
        Ok(())
    })
}

/// Decodes row-major run lengths, starting with a run of zeros.
#[no_mangle]
pub unsafe extern "C" fn dam_mask_from_rle(
    width: usize,
    height: usize,
    runs: *const u64,
    n_runs: usize,
    out: *mut *mut DamMask,
) -> DamStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let runs = if n_runs == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(deref(runs, "runs")?, n_runs)
        };
        let inner = BinaryMask::from_rle(width, height, runs)?;
        *out = Box::into_raw(Box::new(DamMask { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dam_mask_free(mask: *mut DamMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

#[no_mangle]
pub unsafe extern "C" fn dam_mask_set(mask: *mut DamMask, x: usize, y: usize, value: bool) -> DamStatus {
    guard(|| {
        deref_mut(mask, "mask")?.inner.set(x, y, value)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dam_mask_get(mask: *const DamMask, x: usize, y: usize, out: *mut bool) -> DamStatus {
    guard(|| {
        let m = &deref(mask, "mask")?.inner;
        if x >= m.width() || y >= m.height() {
            return Err(Failure::new(DamStatus::InvalidArgument, format!("({x}, {y}) outside the mask")));
        }
        *deref_mut(out, "out")? = m.get(x, y);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dam_mask_area(mask: *const DamMask, out: *mut usize) -> DamStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(mask, "mask")?.inner.area();
        Ok(())
    })
}

/// Intersection over union; two empty masks give 1.
#[no_mangle]
pub unsafe extern "C" fn dam_mask_iou(a: *const DamMask, b: *const DamMask, out: *mut f64) -> DamStatus {
    guard(|| {
        let v = deref(a, "a")?.inner.iou(&deref(b, "b")?.inner)?;
        *deref_mut(out, "out")? = v;
        Ok(())
    })
}

/// Tight bounding box; `*present` is false for an empty mask.
#[no_mangle]
pub unsafe extern "C" fn dam_mask_bbox(mask: *const DamMask, out: *mut DamBBox, present: *mut bool) -> DamStatus {
    guard(|| {
        let b = deref(mask, "mask")?.inner.bbox();
        let out = deref_mut(out, "out")?;
        *deref_mut(present, "present")? = b.is_some();
        *out = b.map(DamBBox::from).unwrap_or_default();
        Ok(())
    })
}

/// Number of 8-connected components.
#[no_mangle]
pub unsafe extern "C" fn dam_mask_component_count(mask: *const DamMask, out: *mut usize) -> DamStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(mask, "mask")?.inner.connected_components().len();
        Ok(())
    })
}

/// Canonical run lengths of the mask.
#[no_mangle]
pub unsafe extern "C" fn dam_mask_to_rle(mask: *const DamMask, buf: *mut u64, cap: usize, len: *mut usize) -> DamStatus {
    guard(|| fill(&deref(mask, "mask")?.inner.to_rle(), buf, cap, len))
}

/// Starts a session from a non-empty initialization mask.
#[no_mangle]
pub unsafe extern "C" fn dam_session_new(
    config: *const DamConfig,
    init_frame: u64,
    init_mask: *const DamMask,
    out: *mut *mut DamSession,
) -> DamStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let (policy, bank) = deref(config, "config")?.split()?;
        bank.validate()?;
        let init = deref(init_mask, "init_mask")?.inner.clone();
        let inner = TrackingSession::new(policy, bank, init_frame, init)?;
        *out = Box::into_raw(Box::new(DamSession { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dam_session_free(session: *mut DamSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

fn reason_bits(reasons: &[Reason]) -> u32 {
    reasons
        .iter()
        .map(|r| match r {
            Reason::Absent => DAM_REASON_ABSENT,
            Reason::Interval => DAM_REASON_INTERVAL,
            Reason::Anchor => DAM_REASON_ANCHOR,
            Reason::UnstableIou => DAM_REASON_UNSTABLE_IOU,
            Reason::UnstableArea => DAM_REASON_UNSTABLE_AREA,
        })
        .fold(0, |a, b| a | b)
}

/// Feeds the three candidate masks and their predicted IoUs for
/// `frame_index`; selects the output and updates memory.
#[no_mangle]
pub unsafe extern "C" fn dam_session_step(
    session: *mut DamSession,
    frame_index: u64,
    masks: *const *const DamMask,
    scores: *const f64,
    out: *mut DamDecision,
) -> DamStatus {
    guard(|| {
        let s = deref_mut(session, "session")?;
        let out = deref_mut(out, "out")?;
        deref(masks, "masks")?;
        deref(scores, "scores")?;
        let ptrs = std::slice::from_raw_parts(masks, 3);
        let scores = std::slice::from_raw_parts(scores, 3);
        let m = [
            deref(ptrs[0], "masks[0]")?.inner.clone(),
            deref(ptrs[1], "masks[1]")?.inner.clone(),
            deref(ptrs[2], "masks[2]")?.inner.clone(),
        ];
        let c = CandidateSet::new(m, [scores[0], scores[1], scores[2]])?;
        let row = s.inner.step(frame_index, c)?;
        let d = row.decision.expect("tracked rows carry a decision");
        *out = DamDecision {
            chosen: row.chosen.expect("tracked rows carry a choice") as u32,
            score: row.score.unwrap_or(0.0),
            update_ram: d.update_ram,
            update_drm: d.update_drm,
            set_latest: d.set_latest,
            has_anchor_ratio: d.anchor_ratio.is_some(),
            anchor_ratio: d.anchor_ratio.unwrap_or(0.0),
            reasons: reason_bits(&d.reasons),
        };
        Ok(())
    })
}

/// Memory entries the next prediction should condition on, in order.
#[no_mangle]
pub unsafe extern "C" fn dam_session_view(
    session: *const DamSession,
    buf: *mut DamViewSlot,
    cap: usize,
    len: *mut usize,
) -> DamStatus {
    guard(|| {
        let slots: Vec<DamViewSlot> = deref(session, "session")?
            .inner
            .bank()
            .snapshot()
            .into_iter()
            .map(|s| DamViewSlot {
                frame_index: s.frame_index,
                kind: s.kind.into(),
                temporal_rank: s.temporal_rank.map_or(-1, i64::from),
            })
            .collect();
        fill(&slots, buf, cap, len)
    })
}

/// Copy of the most recent output mask; free with [`dam_mask_free`].
#[no_mangle]
pub unsafe extern "C" fn dam_session_last_output(session: *const DamSession, out: *mut *mut DamMask) -> DamStatus {
    guard(|| {
        let inner = deref(session, "session")?.inner.last_output().clone();
        *deref_mut(out, "out")? = Box::into_raw(Box::new(DamMask { inner }));
        Ok(())
    })
}
