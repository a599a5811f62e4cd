//! Distractor-aware memory storage.
//!
//! A bank holds one permanent initialization entry, a FIFO of recent
//! appearances (RAM), a FIFO of anchor frames (DRM) and an optional volatile
//! "latest" slot. RAM may use all `n_dam` slots until DRM entries arrive; each
//! DRM entry then takes one slot from RAM until the two halves are equal.
//!
//! The baseline bank is the same structure with DRM never written and the
//! latest slot never set: init plus an `n_dam`-slot FIFO.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::mask::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Init,
    Ram,
    RamLatest,
    Drm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub frame_index: u64,
    pub mask: BinaryMask,
    pub kind: EntryKind,
    /// Frame at which the entry was written into the bank.
    pub inserted_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BankConfig {
    pub n_dam: usize,
    pub temporal_encoding_on_drm: bool,
    pub include_latest_in_ram: bool,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            n_dam: 6,
            temporal_encoding_on_drm: false,
            include_latest_in_ram: true,
        }
    }
}

impl BankConfig {
    pub fn drm_capacity(&self) -> usize {
        self.n_dam / 2
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.n_dam < 2 || !self.n_dam.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "n_dam must be even and >= 2, got {}",
                self.n_dam
            )));
        }
        Ok(())
    }
}

/// Serializable description of one view slot; also the wire format of a
/// memory-view item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViewSlot {
    pub frame_index: u64,
    pub kind: EntryKind,
    pub temporal_rank: Option<u32>,
}

#[derive(Debug, Clone, Copy)]
pub struct ViewItem<'a> {
    pub entry: &'a MemoryEntry,
    pub temporal_rank: Option<u32>,
}

/// Ordered snapshot of a bank: init, DRM (oldest first), RAM (oldest first),
/// then the latest slot.
#[derive(Debug, Clone)]
pub struct MemoryView<'a> {
    pub items: Vec<ViewItem<'a>>,
}

impl<'a> MemoryView<'a> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ViewItem<'a>> {
        self.items.iter()
    }

    pub fn slots(&self) -> Vec<ViewSlot> {
        self.items
            .iter()
            .map(|it| ViewSlot {
                frame_index: it.entry.frame_index,
                kind: it.entry.kind,
                temporal_rank: it.temporal_rank,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct MemoryBank {
    config: BankConfig,
    init: MemoryEntry,
    ram: VecDeque<MemoryEntry>,
    drm: VecDeque<MemoryEntry>,
    latest: Option<MemoryEntry>,
}

impl MemoryBank {
    pub fn new(config: BankConfig, frame_index: u64, init_mask: BinaryMask) -> Result<Self, Error> {
        config.validate()?;
        if init_mask.is_empty() {
            return Err(Error::EmptyInitMask);
        }
        Ok(Self {
            config,
            init: MemoryEntry {
                frame_index,
                mask: init_mask,
                kind: EntryKind::Init,
                inserted_at: frame_index,
            },
            ram: VecDeque::with_capacity(config.n_dam + 1),
            drm: VecDeque::with_capacity(config.drm_capacity() + 1),
            latest: None,
        })
    }

    pub fn config(&self) -> &BankConfig {
        &self.config
    }

    pub fn init_entry(&self) -> &MemoryEntry {
        &self.init
    }

    pub fn ram(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.ram.iter()
    }

    pub fn drm(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.drm.iter()
    }

    pub fn latest(&self) -> Option<&MemoryEntry> {
        self.latest.as_ref()
    }

    pub fn ram_len(&self) -> usize {
        self.ram.len()
    }

    pub fn drm_len(&self) -> usize {
        self.drm.len()
    }

    /// RAM shrinks one slot per DRM entry, down to half of `n_dam`.
    pub fn ram_capacity(&self) -> usize {
        self.config.n_dam - self.drm.len().min(self.config.drm_capacity())
    }

    fn trim_ram(&mut self) {
        while self.ram.len() > self.ram_capacity() {
            self.ram.pop_front();
        }
    }

    /// Appends to RAM, evicting the oldest entries beyond capacity.
    pub fn insert_ram(&mut self, frame_index: u64, mask: BinaryMask) {
        self.ram.push_back(MemoryEntry {
            frame_index,
            mask,
            kind: EntryKind::Ram,
            inserted_at: frame_index,
        });
        self.trim_ram();
    }

    /// Appends an anchor frame. RAM is trimmed immediately if the shared
    /// capacity shrank.
    pub fn insert_drm(&mut self, frame_index: u64, mask: BinaryMask) {
        self.drm.push_back(MemoryEntry {
            frame_index,
            mask,
            kind: EntryKind::Drm,
            inserted_at: frame_index,
        });
        while self.drm.len() > self.config.drm_capacity() {
            self.drm.pop_front();
        }
        self.trim_ram();
    }

    /// Replaces the volatile latest slot. No-op when the latest frame is
    /// excluded from RAM.
    pub fn set_latest(&mut self, frame_index: u64, mask: BinaryMask) {
        if !self.config.include_latest_in_ram {
            return;
        }
        self.latest = Some(MemoryEntry {
            frame_index,
            mask,
            kind: EntryKind::RamLatest,
            inserted_at: frame_index,
        });
    }

    pub fn clear_latest(&mut self) {
        self.latest = None;
    }

    pub fn view(&self) -> MemoryView<'_> {
        let mut items = Vec::with_capacity(2 + self.ram.len() + self.drm.len());
        items.push(ViewItem {
            entry: &self.init,
            temporal_rank: None,
        });
        let tenc = self.config.temporal_encoding_on_drm;
        for (i, e) in self.drm.iter().enumerate() {
            items.push(ViewItem {
                entry: e,
                temporal_rank: tenc.then_some(i as u32 + 1),
            });
        }
        for (i, e) in self.ram.iter().enumerate() {
            items.push(ViewItem {
                entry: e,
                temporal_rank: Some(i as u32 + 1),
            });
        }
        if let Some(e) = &self.latest {
            items.push(ViewItem {
                entry: e,
                temporal_rank: Some(self.ram.len() as u32 + 1),
            });
        }
        MemoryView { items }
    }

    /// Entry kinds, frame indices and ranks of the current view.
    pub fn snapshot(&self) -> Vec<ViewSlot> {
        self.view().slots()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot() -> BinaryMask {
        BinaryMask::from_points(4, 4, &[(1, 1)]).unwrap()
    }

    fn bank(cfg: BankConfig) -> MemoryBank {
        MemoryBank::new(cfg, 0, dot()).unwrap()
    }

    fn ram_frames(b: &MemoryBank) -> Vec<u64> {
        b.ram().map(|e| e.frame_index).collect()
    }

    #[test]
    fn init_examples() {
        let b = bank(BankConfig::default());
        assert_eq!(b.ram_capacity(), 6);
        assert_eq!(b.drm_len(), 0);
        assert_eq!(b.view().len(), 1);

        let cfg = BankConfig {
            n_dam: 2,
            ..Default::default()
        };
        let b = bank(cfg);
        assert_eq!(b.ram_capacity(), 2);
        assert_eq!(cfg.drm_capacity(), 1);

        let err = MemoryBank::new(BankConfig::default(), 0, BinaryMask::new(4, 4));
        assert!(matches!(err, Err(Error::EmptyInitMask)));
    }

    #[test]
    fn rejects_odd_capacity() {
        for n in [0, 1, 3, 7] {
            let cfg = BankConfig {
                n_dam: n,
                ..Default::default()
            };
            assert!(MemoryBank::new(cfg, 0, dot()).is_err());
        }
    }

    #[test]
    fn ram_fifo() {
        let mut b = bank(BankConfig::default());
        b.insert_ram(1, dot());
        assert_eq!(b.ram_len(), 1);
        for f in 2..=7 {
            b.insert_ram(f, dot());
        }
        assert_eq!(ram_frames(&b), vec![2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn capacity_sharing() {
        let mut b = bank(BankConfig::default());
        for f in 1..=6 {
            b.insert_ram(f, dot());
        }
        b.insert_drm(7, dot());
        // 1 init + 5 RAM + 1 DRM
        assert_eq!(b.ram_capacity(), 5);
        assert_eq!(ram_frames(&b), vec![2, 3, 4, 5, 6]);
        assert_eq!(b.view().len(), 7);
        b.insert_ram(8, dot());
        // frames 1 and 2 are gone in total
        assert_eq!(ram_frames(&b), vec![3, 4, 5, 6, 8]);
    }

    #[test]
    fn drm_fifo() {
        let mut b = bank(BankConfig::default());
        for f in 1..=4 {
            b.insert_drm(f, dot());
        }
        let drm: Vec<_> = b.drm().map(|e| e.frame_index).collect();
        assert_eq!(drm, vec![2, 3, 4]);
        assert_eq!(b.init_entry().frame_index, 0);
        assert_eq!(b.ram_capacity(), 3);

        let mut fresh = bank(BankConfig::default());
        fresh.insert_drm(1, dot());
        assert_eq!(fresh.drm_len(), 1);
    }

    #[test]
    fn latest_slot() {
        let mut b = bank(BankConfig::default());
        b.set_latest(3, dot());
        b.set_latest(4, dot());
        let v = b.snapshot();
        assert_eq!(v.len(), 2);
        assert_eq!(v[1].frame_index, 4);
        assert_eq!(v[1].kind, EntryKind::RamLatest);
        b.clear_latest();
        assert_eq!(b.snapshot().len(), 1);

        let mut off = bank(BankConfig {
            include_latest_in_ram: false,
            ..Default::default()
        });
        off.set_latest(1, dot());
        assert!(off.snapshot().iter().all(|s| s.kind != EntryKind::RamLatest));
    }

    #[test]
    fn latest_may_duplicate_ram_frame() {
        let mut b = bank(BankConfig::default());
        b.insert_ram(5, dot());
        b.set_latest(5, dot());
        let frames: Vec<_> = b.snapshot().iter().map(|s| s.frame_index).collect();
        assert_eq!(frames, vec![0, 5, 5]);
    }

    #[test]
    fn view_ranks() {
        let mut b = bank(BankConfig::default());
        assert_eq!(b.snapshot()[0].temporal_rank, None);
        for f in [10, 20, 30] {
            b.insert_ram(f, dot());
        }
        b.insert_drm(25, dot());
        b.set_latest(31, dot());
        let v = b.snapshot();
        let got: Vec<_> = v.iter().map(|s| (s.kind, s.frame_index, s.temporal_rank)).collect();
        assert_eq!(
            got,
            vec![
                (EntryKind::Init, 0, None),
                (EntryKind::Drm, 25, None),
                (EntryKind::Ram, 10, Some(1)),
                (EntryKind::Ram, 20, Some(2)),
                (EntryKind::Ram, 30, Some(3)),
                (EntryKind::RamLatest, 31, Some(4)),
            ]
        );
    }

    #[test]
    fn drm_temporal_encoding_flag() {
        let mut b = bank(BankConfig {
            temporal_encoding_on_drm: true,
            ..Default::default()
        });
        b.insert_drm(5, dot());
        b.insert_drm(10, dot());
        let v = b.snapshot();
        assert_eq!(v[0].temporal_rank, None);
        assert_eq!(v[1].temporal_rank, Some(1));
        assert_eq!(v[2].temporal_rank, Some(2));
    }
}
