//! Closed-loop blob world.
//!
//! Rectangular blobs with fixed appearance vectors move over a small arena.
//! [`BlobPredictor`] scores each visible blob against the memory it is shown:
//! an entry attracts blobs that look like its foreground blob and repels blobs
//! that look like the blobs it recorded as background. The top three eligible
//! blobs become the candidate masks.
//!
//! This is enough to reproduce the distractor failure mode: a memory that
//! loses every frame showing the distractor as background will eventually
//! follow the distractor.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trace::{FrameRecord, Trace, TraceHeader};
use super::{run_sequence, CandidateSet, Predictor, Recorder, TrackingResult};
use crate::error::Error;
use crate::mask::{BBox, BinaryMask};
use crate::membank::{BankConfig, MemoryView};
use crate::policy::PolicyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobFrame {
    pub rect: BBox,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobScript {
    pub id: u32,
    /// Unit-norm appearance vector.
    pub appearance: Vec<f64>,
    pub frames: Vec<BlobFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobScenario {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub target: u32,
    pub blobs: Vec<BlobScript>,
}

const NORM_TOL: f64 = 1e-9;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

impl BlobScenario {
    pub fn num_frames(&self) -> usize {
        self.blobs.first().map_or(0, |b| b.frames.len())
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Invalid(format!("scenario `{}`: {m}", self.name)));
        if self.blobs.is_empty() {
            return bad("no blobs".into());
        }
        let n = self.num_frames();
        if n == 0 {
            return bad("no frames".into());
        }
        let dim = self.blobs[0].appearance.len();
        let mut ids: Vec<u32> = self.blobs.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.blobs.len() {
            return bad("duplicate blob ids".into());
        }
        for b in &self.blobs {
            if b.frames.len() != n {
                return bad(format!("blob {} has {} frames, expected {n}", b.id, b.frames.len()));
            }
            if b.appearance.len() != dim {
                return bad(format!("blob {} appearance has the wrong length", b.id));
            }
            let norm = b.appearance.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOL {
                return bad(format!("blob {} appearance is not unit-norm ({norm})", b.id));
            }
            if let Some(f) = b
                .frames
                .iter()
                .position(|f| f.rect.x_max >= self.width || f.rect.y_max >= self.height)
            {
                return bad(format!("blob {} leaves the arena at frame {f}", b.id));
            }
        }
        let Some(t) = self.blob(self.target) else {
            return bad(format!("target {} is not a blob", self.target));
        };
        if !t.frames[0].visible {
            return bad("target is not visible in the first frame".into());
        }
        Ok(())
    }

    pub fn blob(&self, id: u32) -> Option<&BlobScript> {
        self.blobs.iter().find(|b| b.id == id)
    }

    fn target_script(&self) -> &BlobScript {
        self.blob(self.target).expect("validated scenario")
    }

    pub fn rect_mask(&self, rect: BBox) -> BinaryMask {
        BinaryMask::rectangle(self.width, self.height, rect)
    }

    /// Blobs visible at `frame`, in ascending id order.
    pub fn visible(&self, frame: u64) -> Vec<(&BlobScript, BBox)> {
        let mut v: Vec<_> = self
            .blobs
            .iter()
            .filter_map(|b| {
                let f = b.frames.get(frame as usize)?;
                f.visible.then_some((b, f.rect))
            })
            .collect();
        v.sort_by_key(|(b, _)| b.id);
        v
    }

    pub fn init_mask(&self) -> BinaryMask {
        self.rect_mask(self.target_script().frames[0].rect)
    }

    /// Target rectangle when visible, else an empty mask.
    pub fn gt_mask(&self, frame: u64) -> BinaryMask {
        let f = self.target_script().frames[frame as usize];
        if f.visible {
            self.rect_mask(f.rect)
        } else {
            BinaryMask::new(self.width, self.height)
        }
    }

    pub fn gt_box(&self, frame: u64) -> Option<BBox> {
        let f = self.target_script().frames[frame as usize];
        f.visible.then_some(f.rect)
    }

    /// Visible blob with the largest overlap with `mask`. Ties go to the
    /// target, then to the lowest id: a mask covering the target and a
    /// distractor equally still counts as the target.
    pub fn identity(&self, frame: u64, mask: &BinaryMask) -> Option<u32> {
        let mut best: Option<(usize, bool, u32)> = None;
        for (b, rect) in self.visible(frame) {
            let overlap = mask.count_in_rect(&rect);
            let is_target = b.id == self.target;
            let better = best.is_none_or(|(o, t, _)| overlap > o || (overlap == o && is_target && !t));
            if overlap > 0 && better {
                best = Some((overlap, is_target, b.id));
            }
        }
        best.map(|(_, _, id)| id)
    }

    /// Number of times the reported mask moves onto a non-target blob.
    pub fn identity_switches(&self, result: &TrackingResult) -> Result<usize, Error> {
        let mut last = Some(self.target);
        let mut switches = 0;
        for (row, mask) in result.rows.iter().zip(result.masks()?) {
            let Some(id) = self.identity(row.frame_index, &mask) else {
                continue;
            };
            if id != self.target && last != Some(id) {
                switches += 1;
            }
            last = Some(id);
        }
        Ok(switches)
    }
}

/// Per-entry roles: the foreground blob's appearance and the background
/// blobs' appearances.
struct EntryRoles<'s> {
    fg: Option<&'s [f64]>,
    bg: Vec<&'s [f64]>,
}

/// Memory-conditioned predictor over a [`BlobScenario`].
#[derive(Debug, Clone)]
pub struct BlobPredictor<'s> {
    scenario: &'s BlobScenario,
}

impl<'s> BlobPredictor<'s> {
    pub fn new(scenario: &'s BlobScenario) -> Self {
        Self { scenario }
    }

    // An empty stored mask carries no reference to the target, so it assigns
    // neither a foreground nor a background role.
    fn roles(&self, frame: u64, mask: &BinaryMask) -> EntryRoles<'s> {
        let mut roles = EntryRoles { fg: None, bg: Vec::new() };
        if mask.is_empty() {
            return roles;
        }
        let mut best = 0;
        for (b, rect) in self.scenario.visible(frame) {
            let overlap = mask.count_in_rect(&rect);
            if overlap == 0 {
                roles.bg.push(&b.appearance);
            } else if overlap > best {
                best = overlap;
                roles.fg = Some(&b.appearance);
            }
        }
        roles
    }

    /// Raw score in [-1, 1] of every blob visible at `frame`, ascending id.
    pub fn raw_scores(&self, frame: u64, view: &MemoryView<'_>) -> Vec<(u32, f64)> {
        let roles: Vec<EntryRoles<'_>> = view
            .iter()
            .map(|it| self.roles(it.entry.frame_index, &it.entry.mask))
            .collect();
        self.scenario
            .visible(frame)
            .into_iter()
            .map(|(b, _)| {
                let a = &b.appearance;
                let attract = roles
                    .iter()
                    .filter_map(|r| r.fg)
                    .map(|fg| cosine(a, fg))
                    .fold(0.0, f64::max);
                let repel = roles
                    .iter()
                    .flat_map(|r| r.bg.iter())
                    .map(|d| cosine(a, d))
                    .fold(0.0, f64::max);
                (b.id, attract - repel)
            })
            .collect()
    }
}

impl Predictor for BlobPredictor<'_> {
    fn predict(&mut self, frame_index: u64, view: &MemoryView<'_>) -> Result<CandidateSet, Error> {
        let sc = self.scenario;
        if frame_index as usize >= sc.num_frames() {
            return Err(Error::Invalid(format!(
                "frame {frame_index} beyond scenario `{}`",
                sc.name
            )));
        }
        // Only blobs with positive raw score are proposed.
        let mut eligible: Vec<(u32, f64)> = self
            .raw_scores(frame_index, view)
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .collect();
        eligible.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut c = CandidateSet::empty(sc.width, sc.height);
        for (slot, (id, s)) in eligible.into_iter().take(3).enumerate() {
            let rect = sc.blob(id).expect("visible blob").frames[frame_index as usize].rect;
            c.masks[slot] = sc.rect_mask(rect);
            c.scores[slot] = ((s + 1.0) / 2.0).clamp(0.0, 1.0);
        }
        Ok(c)
    }
}

/// Knobs of the crossing family. Target moves right one pixel per frame; the
/// distractor appears far to the right, closes in, covers the target, and
/// leaves to the left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingParams {
    pub width: usize,
    pub height: usize,
    pub size: usize,
    /// Cosine similarity between target and distractor appearance.
    pub similarity: f64,
    pub target_x0: usize,
    pub target_y: usize,
    /// Vertical offset of the distractor relative to the target.
    pub distractor_dy: isize,
    /// First frame the distractor is visible.
    pub appear_at: usize,
    /// Frames (including `appear_at`) with the distractor visible and apart.
    pub apart_frames: usize,
    /// Frames with the distractor overlapping the still-visible target.
    pub converge_frames: usize,
    pub occlusion_frames: usize,
    pub tail_frames: usize,
    pub seed: u64,
}

impl Default for CrossingParams {
    fn default() -> Self {
        Self {
            width: 96,
            height: 64,
            size: 8,
            similarity: 0.8,
            target_x0: 14,
            target_y: 28,
            distractor_dy: 0,
            appear_at: 12,
            apart_frames: 3,
            converge_frames: 4,
            occlusion_frames: 3,
            tail_frames: 14,
            seed: 0,
        }
    }
}

pub const CROSSING_TARGET: u32 = 1;
pub const CROSSING_DISTRACTOR: u32 = 0;

fn square(x: usize, y: usize, size: usize) -> BBox {
    BBox::new(x, y, x + size - 1, y + size - 1).expect("size > 0")
}

/// Builds one member of the crossing family.
pub fn crossing_scenario(name: &str, p: CrossingParams) -> Result<BlobScenario, Error> {
    let n = p.appear_at + p.apart_frames + p.converge_frames + p.occlusion_frames + p.tail_frames;
    let s = p.size as isize;
    let dy_y = (p.target_y as isize + p.distractor_dy).max(0) as usize;
    let converge_start = p.appear_at + p.apart_frames;
    let occl_start = converge_start + p.converge_frames;
    let tail_start = occl_start + p.occlusion_frames;
    let max_x = (p.width - p.size) as isize;

    let mut target = Vec::with_capacity(n);
    let mut distractor = Vec::with_capacity(n);
    for f in 0..n {
        let tx = p.target_x0 + f;
        let visible_t = !(occl_start..tail_start).contains(&f);
        target.push(BlobFrame {
            rect: square(tx, p.target_y, p.size),
            visible: visible_t,
        });

        // Offset of the distractor's left edge from the target's.
        let offset: isize = if f < converge_start {
            // apart: shrink from far away down to just clear of the target
            let k = f.saturating_sub(p.appear_at) as isize;
            let last = (p.apart_frames.max(1) - 1) as isize;
            let far = max_x - tx as isize;
            let near = s + 3;
            if last == 0 {
                far.max(near)
            } else {
                let v = far - (far - near) * k / last;
                v.max(near)
            }
        } else if f < occl_start {
            let k = (f - converge_start) as isize;
            (p.converge_frames as isize - 1 - k).min(3)
        } else if f < tail_start {
            0
        } else {
            -3 * ((f - tail_start) as isize + 1)
        };
        let dx = (tx as isize + offset).clamp(0, max_x) as usize;
        distractor.push(BlobFrame {
            rect: square(dx, dy_y, p.size),
            visible: f >= p.appear_at,
        });
    }

    let c = p.similarity;
    let sc = BlobScenario {
        name: name.to_string(),
        width: p.width,
        height: p.height,
        seed: p.seed,
        target: CROSSING_TARGET,
        blobs: vec![
            BlobScript {
                id: CROSSING_DISTRACTOR,
                appearance: vec![c, (1.0 - c * c).sqrt(), 0.0],
                frames: distractor,
            },
            BlobScript {
                id: CROSSING_TARGET,
                appearance: vec![1.0, 0.0, 0.0],
                frames: target,
            },
        ],
    };
    sc.validate()?;
    Ok(sc)
}

/// The fixed crossing scenario. The distractor first shows up at frame 12,
/// which is where a distractor-aware tracker should store its anchor frame.
pub fn canonical_crossing_scenario() -> BlobScenario {
    crossing_scenario("crossing", CrossingParams::default()).expect("canonical scenario is valid")
}

pub const CANONICAL_DIVERGENCE_FRAME: u64 = 12;

/// `count` seeded perturbations of the crossing family.
pub fn crossing_suite(seed: u64, count: usize) -> Vec<BlobScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let size = rng.random_range(6..=10usize);
            let p = CrossingParams {
                width: rng.random_range(96..=128),
                height: rng.random_range(48..=80),
                size,
                similarity: rng.random_range(0.6..0.9),
                target_x0: rng.random_range(4..=20),
                target_y: rng.random_range(4..=30),
                distractor_dy: rng.random_range(-(size as i64 / 2 - 1)..=(size as i64 / 2 - 1)) as isize,
                appear_at: rng.random_range(12..=16),
                apart_frames: rng.random_range(2..=4),
                converge_frames: rng.random_range(3..=5),
                occlusion_frames: rng.random_range(2..=4),
                tail_frames: rng.random_range(10..=20),
                seed: seed.wrapping_add(i as u64),
            };
            crossing_scenario(&format!("crossing-{seed}-{i:02}"), p).expect("suite parameters stay in range")
        })
        .collect()
}

/// Runs a scenario closed-loop.
pub fn run_scenario(
    scenario: &BlobScenario,
    policy: PolicyConfig,
    bank: BankConfig,
) -> Result<TrackingResult, Error> {
    let mut p = BlobPredictor::new(scenario);
    run_sequence(
        &mut p,
        0,
        scenario.init_mask(),
        1..scenario.num_frames() as u64,
        policy,
        bank,
    )
}

/// Runs a scenario and captures every candidate set as a replay trace with
/// ground truth attached.
pub fn record_scenario(
    scenario: &BlobScenario,
    policy: PolicyConfig,
    bank: BankConfig,
) -> Result<(TrackingResult, Trace), Error> {
    let mut rec = Recorder::new(BlobPredictor::new(scenario));
    let result = run_sequence(
        &mut rec,
        0,
        scenario.init_mask(),
        1..scenario.num_frames() as u64,
        policy,
        bank,
    )?;
    let frames = rec
        .log
        .iter()
        .map(|(f, c)| {
            let mut r = FrameRecord::from_candidates(*f, c);
            r.gt_mask = Some(scenario.gt_mask(*f).to_rle());
            r.gt_box = scenario.gt_box(*f);
            r
        })
        .collect();
    let trace = Trace {
        header: Some(TraceHeader::new(
            0,
            &scenario.init_mask(),
            Some(format!("scenario:{}", scenario.name)),
        )),
        frames,
    };
    Ok((result, trace))
}

/// Ground-truth masks for frames `0..n`.
pub fn scenario_gt(scenario: &BlobScenario) -> Vec<BinaryMask> {
    (0..scenario.num_frames() as u64).map(|f| scenario.gt_mask(f)).collect()
}
