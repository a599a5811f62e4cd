//! Real-time replay: frames arrive on a fixed clock and a tracker that is
//! still busy when a frame arrives never sees it; the previous output stands
//! in for that frame.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FrameRow, Predictor, TrackingResult, TrackingSession};
use crate::error::Error;
use crate::mask::BinaryMask;
use crate::membank::BankConfig;
use crate::policy::PolicyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Every frame is processed.
    Unlimited,
    /// Frames arrive every `1000 / fps` milliseconds.
    Fps(f64),
}

impl Budget {
    pub fn period_ms(&self) -> Option<f64> {
        match self {
            Budget::Unlimited => None,
            Budget::Fps(fps) => Some(1000.0 / fps),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        match self {
            Budget::Fps(fps) if !(fps.is_finite() && *fps > 0.0) => {
                Err(Error::Config(format!("fps must be positive and finite, got {fps}")))
            }
            _ => Ok(()),
        }
    }
}

/// Per-frame processing time in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencyModel {
    Constant { ms: f64 },
    PerFrame { ms: Vec<f64> },
    /// Normal(mean, std) clamped at zero, drawn from a seeded stream.
    Normal { mean: f64, std: f64, seed: u64 },
}

impl LatencyModel {
    pub fn latencies(&self, n: usize) -> Result<Vec<f64>, Error> {
        let v = match self {
            LatencyModel::Constant { ms } => vec![*ms; n],
            LatencyModel::PerFrame { ms } => {
                if ms.len() != n {
                    return Err(Error::LengthMismatch {
                        left: ms.len(),
                        right: n,
                    });
                }
                ms.clone()
            }
            LatencyModel::Normal { mean, std, seed } => {
                let dist = Normal::new(*mean, *std)
                    .map_err(|e| Error::Config(format!("latency distribution: {e}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..n).map(|_| dist.sample(&mut rng).max(0.0)).collect()
            }
        };
        if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::Config(format!("latency {bad} is not a finite non-negative value")));
        }
        Ok(v)
    }
}

/// Which frames the tracker gets to process. Frame `k` arrives at
/// `k * period`; it is processed if the tracker is idle by then, after which
/// the tracker is busy for `latencies[k]` milliseconds.
pub fn schedule(latencies: &[f64], budget: Budget) -> Result<Vec<bool>, Error> {
    budget.validate()?;
    let Some(period) = budget.period_ms() else {
        return Ok(vec![true; latencies.len()]);
    };
    let mut busy_until = f64::NEG_INFINITY;
    Ok(latencies
        .iter()
        .enumerate()
        .map(|(k, lat)| {
            let arrival = k as f64 * period;
            if arrival >= busy_until {
                busy_until = arrival + lat;
                true
            } else {
                false
            }
        })
        .collect())
}

/// Tracks `frames` under a real-time budget. Skipped frames are logged as
/// copies of the last output and never reach the predictor or the bank.
#[allow(clippy::too_many_arguments)]
pub fn rt_replay<P: Predictor + ?Sized>(
    predictor: &mut P,
    init_frame: u64,
    init_mask: BinaryMask,
    frames: &[u64],
    latencies: &[f64],
    budget: Budget,
    policy: PolicyConfig,
    bank: BankConfig,
) -> Result<TrackingResult, Error> {
    if latencies.len() != frames.len() {
        return Err(Error::LengthMismatch {
            left: latencies.len(),
            right: frames.len(),
        });
    }
    let plan = schedule(latencies, budget)?;
    let (width, height) = init_mask.dims();
    let mut session = TrackingSession::new(policy, bank, init_frame, init_mask)?;
    let mut rows: Vec<FrameRow> = vec![session.init_row()];
    for (&f, &go) in frames.iter().zip(&plan) {
        rows.push(if go {
            session.track(f, predictor)?
        } else {
            session.skip_row(f)
        });
    }
    Ok(TrackingResult { width, height, rows })
}
