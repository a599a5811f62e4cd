//! Memory update decisions.
//!
//! Each frame is reduced to five gates (target present, RAM interval elapsed,
//! DRM interval elapsed, anchor detected, tracking stable) and the variant's
//! rule maps the gates to bank operations. Computing a decision never mutates
//! state; [`PolicyState::apply`] does that afterwards so decisions can be
//! logged and replayed.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::mask::BinaryMask;
use crate::membank::BankConfig;
use crate::tracker::CandidateSet;

/// Tracker variants. `DrmTenc` and `RamNoLast` use the full rule with a
/// modified bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sam21Baseline,
    Pres,
    DeltaOnly,
    Drm1,
    Drm2,
    DamFull,
    DrmTenc,
    RamNoLast,
}

/// The six distinct update rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpdateRule {
    Sam21Baseline,
    Pres,
    DeltaOnly,
    Drm1,
    Drm2,
    DamFull,
}

impl UpdateRule {
    pub const ALL: [UpdateRule; 6] = [
        UpdateRule::Sam21Baseline,
        UpdateRule::Pres,
        UpdateRule::DeltaOnly,
        UpdateRule::Drm1,
        UpdateRule::Drm2,
        UpdateRule::DamFull,
    ];

    fn uses_interval(self) -> bool {
        !matches!(self, UpdateRule::Sam21Baseline | UpdateRule::Pres)
    }

    fn uses_drm(self) -> bool {
        matches!(self, UpdateRule::Drm1 | UpdateRule::Drm2 | UpdateRule::DamFull)
    }

    fn needs_anchor(self) -> bool {
        matches!(self, UpdateRule::Drm2 | UpdateRule::DamFull)
    }

    fn needs_stability(self) -> bool {
        matches!(self, UpdateRule::Drm1 | UpdateRule::DamFull)
    }
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Sam21Baseline,
        Variant::Pres,
        Variant::DeltaOnly,
        Variant::Drm1,
        Variant::Drm2,
        Variant::DamFull,
        Variant::DrmTenc,
        Variant::RamNoLast,
    ];

    pub fn rule(self) -> UpdateRule {
        match self {
            Variant::Sam21Baseline => UpdateRule::Sam21Baseline,
            Variant::Pres => UpdateRule::Pres,
            Variant::DeltaOnly => UpdateRule::DeltaOnly,
            Variant::Drm1 => UpdateRule::Drm1,
            Variant::Drm2 => UpdateRule::Drm2,
            Variant::DamFull | Variant::DrmTenc | Variant::RamNoLast => UpdateRule::DamFull,
        }
    }

    /// Bank configuration this variant runs with, derived from `base`.
    pub fn bank_config(self, base: BankConfig) -> BankConfig {
        match self {
            Variant::DrmTenc => BankConfig {
                temporal_encoding_on_drm: true,
                ..base
            },
            Variant::RamNoLast => BankConfig {
                include_latest_in_ram: false,
                ..base
            },
            _ => base,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sam21Baseline => "sam21_baseline",
            Variant::Pres => "pres",
            Variant::DeltaOnly => "delta_only",
            Variant::Drm1 => "drm1",
            Variant::Drm2 => "drm2",
            Variant::DamFull => "dam_full",
            Variant::DrmTenc => "drm_tenc",
            Variant::RamNoLast => "ram_no_last",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Minimum frame gap between FIFO updates of the same buffer.
    pub delta: u64,
    pub theta_anc: f64,
    pub theta_iou: f64,
    pub theta_area: f64,
    /// Length of the area-median window.
    pub theta_m: usize,
    pub variant: Variant,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            delta: 5,
            theta_anc: 0.7,
            theta_iou: 0.8,
            theta_area: 0.2,
            theta_m: 10,
            variant: Variant::DamFull,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.delta < 1 {
            return bad("delta must be >= 1");
        }
        if !(self.theta_anc > 0.0 && self.theta_anc <= 1.0) {
            return bad("theta_anc must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.theta_iou) {
            return bad("theta_iou must be in [0, 1]");
        }
        if !(self.theta_area > 0.0 && self.theta_area.is_finite()) {
            return bad("theta_area must be > 0");
        }
        if self.theta_m < 1 {
            return bad("theta_m must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Absent,
    Interval,
    Anchor,
    UnstableIou,
    UnstableArea,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateDecision {
    pub update_ram: bool,
    pub update_drm: bool,
    pub set_latest: bool,
    pub anchor_ratio: Option<f64>,
    pub reasons: Vec<Reason>,
}

/// Boolean inputs of the update rule for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Gates {
    pub present: bool,
    pub ram_interval: bool,
    pub drm_interval: bool,
    pub anchor: bool,
    pub stable: bool,
}

/// `(update_ram, update_drm, set_latest)` for a rule and gate combination.
pub fn rule_table(rule: UpdateRule, g: Gates, include_latest: bool) -> (bool, bool, bool) {
    let p = g.present;
    let latest = rule.uses_interval() && p && include_latest;
    match rule {
        UpdateRule::Sam21Baseline => (true, false, false),
        UpdateRule::Pres => (p, false, false),
        UpdateRule::DeltaOnly => (p && g.ram_interval, false, latest),
        UpdateRule::Drm1 => (p && g.ram_interval, p && g.drm_interval && g.stable, latest),
        UpdateRule::Drm2 => (p && g.ram_interval, p && g.drm_interval && g.anchor, latest),
        UpdateRule::DamFull => (
            p && g.ram_interval,
            p && g.drm_interval && g.anchor && g.stable,
            latest,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicyState {
    pub last_ram_update: Option<u64>,
    pub last_drm_update: Option<u64>,
    area_history: VecDeque<usize>,
    window: usize,
}

impl PolicyState {
    pub fn new(cfg: &PolicyConfig) -> Self {
        Self {
            last_ram_update: None,
            last_drm_update: None,
            area_history: VecDeque::with_capacity(cfg.theta_m),
            window: cfg.theta_m,
        }
    }

    /// Areas of the most recent non-empty outputs, oldest first.
    pub fn area_history(&self) -> impl Iterator<Item = usize> + '_ {
        self.area_history.iter().copied()
    }

    pub fn history_full(&self) -> bool {
        self.area_history.len() >= self.window
    }

    pub fn push_area(&mut self, area: usize) {
        if area == 0 {
            return;
        }
        if self.area_history.len() == self.window {
            self.area_history.pop_front();
        }
        self.area_history.push_back(area);
    }

    /// Median of the window; mean of the two middle values for even lengths.
    pub fn median_area(&self) -> Option<f64> {
        if self.area_history.is_empty() {
            return None;
        }
        let mut v: Vec<usize> = self.area_history.iter().copied().collect();
        v.sort_unstable();
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2] as f64
        } else {
            (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
        })
    }

    /// Records the effect of a decision taken at `frame_index`.
    pub fn apply(&mut self, frame_index: u64, decision: &UpdateDecision, output_area: usize) {
        if decision.update_ram {
            self.last_ram_update = Some(frame_index);
        }
        if decision.update_drm {
            self.last_drm_update = Some(frame_index);
        }
        self.push_area(output_area);
    }
}

pub fn target_present(output: &BinaryMask) -> bool {
    !output.is_empty()
}

/// Box-area ratio between the output and the output extended by each
/// alternative's largest component; the minimum over alternatives.
pub fn anchor_ratio(output: &BinaryMask, alternatives: &[BinaryMask]) -> Result<f64, Error> {
    let out_box = output.bbox().ok_or(Error::EmptyOutput)?;
    let out_area = out_box.area() as f64;
    let mut ratio = 1.0f64;
    for alt in alternatives {
        if alt.dims() != output.dims() {
            // reuse the mask error for a uniform message
            output.union(alt)?;
        }
        let Some(comp_box) = alt.largest_component().and_then(|c| c.bbox()) else {
            continue;
        };
        let r = out_area / out_box.hull(&comp_box).area() as f64;
        ratio = ratio.min(r);
    }
    Ok(ratio)
}

/// `(is_anchor, ratio)`; an anchor needs the ratio strictly below `theta_anc`.
pub fn detect_anchor(
    output: &BinaryMask,
    alternatives: &[BinaryMask],
    cfg: &PolicyConfig,
) -> Result<(bool, f64), Error> {
    let ratio = anchor_ratio(output, alternatives)?;
    Ok((ratio < cfg.theta_anc, ratio))
}

fn area_in_band(output_area: usize, state: &PolicyState, cfg: &PolicyConfig) -> bool {
    if !state.history_full() {
        return false;
    }
    let Some(median) = state.median_area() else {
        return false;
    };
    (output_area as f64 - median).abs() <= cfg.theta_area * median
}

pub fn stable(predicted_iou: f64, output_area: usize, state: &PolicyState, cfg: &PolicyConfig) -> bool {
    predicted_iou > cfg.theta_iou && area_in_band(output_area, state, cfg)
}

fn elapsed(last: Option<u64>, frame_index: u64, delta: u64) -> bool {
    last.is_none_or(|l| frame_index.saturating_sub(l) >= delta)
}

/// Computes the update decision for the candidate at `selected`.
pub fn decide(
    frame_index: u64,
    candidates: &CandidateSet,
    selected: usize,
    state: &PolicyState,
    cfg: &PolicyConfig,
    bank: &BankConfig,
) -> Result<UpdateDecision, Error> {
    let rule = cfg.variant.rule();
    let output = &candidates.masks()[selected];
    let present = target_present(output);
    let mut reasons = Vec::new();

    if !present {
        reasons.push(Reason::Absent);
        let (update_ram, update_drm, set_latest) =
            rule_table(rule, Gates { present, ram_interval: false, drm_interval: false, anchor: false, stable: false }, bank.include_latest_in_ram);
        return Ok(UpdateDecision {
            update_ram,
            update_drm,
            set_latest,
            anchor_ratio: None,
            reasons,
        });
    }

    let ram_interval = elapsed(state.last_ram_update, frame_index, cfg.delta);
    let drm_interval = elapsed(state.last_drm_update, frame_index, cfg.delta);
    if rule.uses_interval() && (!ram_interval || (rule.uses_drm() && !drm_interval)) {
        reasons.push(Reason::Interval);
    }

    let (mut anchor, mut anchor_ratio_value) = (false, None);
    if rule.uses_drm() {
        let alternatives: Vec<BinaryMask> = candidates
            .masks()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != selected)
            .map(|(_, m)| m.clone())
            .collect();
        let (is_anchor, ratio) = detect_anchor(output, &alternatives, cfg)?;
        anchor = is_anchor;
        anchor_ratio_value = Some(ratio);
        if anchor {
            reasons.push(Reason::Anchor);
        }
    }

    let score = candidates.scores()[selected];
    let area = output.area();
    let iou_ok = score > cfg.theta_iou;
    let area_ok = area_in_band(area, state, cfg);
    let is_stable = iou_ok && area_ok;
    if rule.needs_stability() {
        if !iou_ok {
            reasons.push(Reason::UnstableIou);
        } else if !area_ok {
            reasons.push(Reason::UnstableArea);
        }
    }
    debug_assert!(!rule.needs_anchor() || rule.uses_drm());

    let gates = Gates {
        present,
        ram_interval,
        drm_interval,
        anchor,
        stable: is_stable,
    };
    let (update_ram, update_drm, set_latest) = rule_table(rule, gates, bank.include_latest_in_ram);
    Ok(UpdateDecision {
        update_ram,
        update_drm,
        set_latest,
        anchor_ratio: anchor_ratio_value,
        reasons,
    })
}
