//! Distractor-aware memory for memory-based video object trackers.
//!
//! The crate splits a tracker's memory into a recent-appearance part that is
//! refreshed every few frames and a distractor-resolving part that keeps
//! anchor frames where a similar object competed with the target. Around that
//! it provides mask utilities, evaluation metrics, a closed-loop simulator,
//! trace replay and the `dam` command-line tool.

pub mod cli;
pub mod config;
pub mod distill;
pub mod error;
pub mod mask;
pub mod membank;
pub mod metrics;
pub mod policy;
pub mod tracker;

pub use error::{Error, Result};
pub use mask::{BBox, BinaryMask, MaskError};
pub use membank::{BankConfig, EntryKind, MemoryBank, MemoryEntry, MemoryView, ViewSlot};
pub use policy::{PolicyConfig, Reason, UpdateDecision, UpdateRule, Variant};
pub use tracker::{run_sequence, select_output, CandidateSet, Predictor, TrackingResult, TrackingSession};
