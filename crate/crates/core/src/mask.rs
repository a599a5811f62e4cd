//! Binary mask geometry: area, boxes, set operations, IoU, 8-connected
//! components and a canonical run-length codec.
//!
//! Masks are stored as packed 64-bit words in row-major order. Pixel `(x, y)`
//! lives at flat index `y * width + x`; bits past `width * height` in the last
//! word are always zero, so word-level popcounts never need masking.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const WORD: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("mask dimensions differ: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
    #[error("run lengths sum to {got}, expected {expected} ({width}x{height})")]
    RunSum {
        width: usize,
        height: usize,
        expected: u64,
        got: u64,
    },
    #[error("negative run length {value} at position {index}")]
    NegativeRun { index: usize, value: i64 },
    #[error("expected {expected} bits, got {got}")]
    BitCount { expected: usize, got: usize },
    #[error("pixel ({x}, {y}) outside {width}x{height} mask")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
}

/// Axis-aligned box in pixel indices, both corners inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 4]", from = "[usize; 4]")]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    /// Returns `None` unless `x_min <= x_max` and `y_min <= y_max`.
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Option<Self> {
        (x_min <= x_max && y_min <= y_max).then_some(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        BBox::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        )
    }

    /// Pixel-count IoU of two inclusive boxes.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other).map_or(0, |b| b.area());
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }
}

impl From<BBox> for [usize; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl From<[usize; 4]> for BBox {
    fn from(v: [usize; 4]) -> Self {
        // Deserialized boxes are normalized so the invariant always holds.
        BBox {
            x_min: v[0].min(v[2]),
            y_min: v[1].min(v[3]),
            x_max: v[0].max(v[2]),
            y_max: v[1].max(v[3]),
        }
    }
}

/// Row-major boolean grid.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .field("bbox", &self.bbox())
            .finish()
    }
}

impl BinaryMask {
    /// All-zero mask.
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            words: vec![0; n.div_ceil(WORD)],
        }
    }

    /// All-one mask.
    pub fn full(width: usize, height: usize) -> Self {
        let mut m = Self::new(width, height);
        m.fill_range(0, width * height);
        m
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set_index(y * width + x);
                }
            }
        }
        m
    }

    /// Builds a mask from a row-major bit slice of length `width * height`.
    pub fn from_bits(width: usize, height: usize, bits: &[bool]) -> Result<Self, MaskError> {
        if bits.len() != width * height {
            return Err(MaskError::BitCount {
                expected: width * height,
                got: bits.len(),
            });
        }
        let mut m = Self::new(width, height);
        for (i, &b) in bits.iter().enumerate() {
            if b {
                m.set_index(i);
            }
        }
        Ok(m)
    }

    /// Mask with exactly the given pixels set. Out-of-range points are an error.
    pub fn from_points(
        width: usize,
        height: usize,
        points: &[(usize, usize)],
    ) -> Result<Self, MaskError> {
        let mut m = Self::new(width, height);
        for &(x, y) in points {
            m.set(x, y, true)?;
        }
        Ok(m)
    }

    /// Filled rectangle clipped to the mask extent.
    pub fn rectangle(width: usize, height: usize, rect: BBox) -> Self {
        let mut m = Self::new(width, height);
        if width == 0 || height == 0 || rect.x_min >= width || rect.y_min >= height {
            return m;
        }
        let x_max = rect.x_max.min(width - 1);
        let y_max = rect.y_max.min(height - 1);
        for y in rect.y_min..=y_max {
            let row = y * width;
            m.fill_range(row + rect.x_min, row + x_max + 1);
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    /// True when no bit is set (regardless of dimensions).
    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.get_index(y * self.width + x)
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) -> Result<(), MaskError> {
        if x >= self.width || y >= self.height {
            return Err(MaskError::OutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        let i = y * self.width + x;
        if value {
            self.set_index(i);
        } else {
            self.words[i / WORD] &= !(1u64 << (i % WORD));
        }
        Ok(())
    }

    #[inline]
    fn get_index(&self, i: usize) -> bool {
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    #[inline]
    fn set_index(&mut self, i: usize) {
        self.words[i / WORD] |= 1u64 << (i % WORD);
    }

    /// Sets flat indices `start..end`.
    fn fill_range(&mut self, start: usize, end: usize) {
        if start >= end {
            return;
        }
        let (first, last) = (start / WORD, (end - 1) / WORD);
        let lo = !0u64 << (start % WORD);
        let hi = !0u64 >> (WORD - 1 - (end - 1) % WORD);
        if first == last {
            self.words[first] |= lo & hi;
            return;
        }
        self.words[first] |= lo;
        for w in &mut self.words[first + 1..last] {
            *w = !0;
        }
        self.words[last] |= hi;
    }

    /// Iterates flat indices of set bits in ascending order.
    pub fn iter_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * WORD + tz)
            })
        })
    }

    /// Iterates `(x, y)` of set bits in row-major order.
    pub fn iter_points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.iter_indices().map(move |i| (i % w, i / w))
    }

    pub fn to_bits(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.get_index(i)).collect()
    }

    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Tightest box around the set bits; `None` for an empty mask.
    pub fn bbox(&self) -> Option<BBox> {
        let mut it = self.iter_points();
        let (x0, y0) = it.next()?;
        let mut b = BBox {
            x_min: x0,
            y_min: y0,
            x_max: x0,
            y_max: y0,
        };
        for (x, y) in it {
            b.x_min = b.x_min.min(x);
            b.x_max = b.x_max.max(x);
            // row-major order: y is non-decreasing
            b.y_max = y;
        }
        Some(b)
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.check_dims(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a | b)
                .collect(),
        })
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.check_dims(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & b)
                .collect(),
        })
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<usize, MaskError> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    /// `|a ∩ b| / |a ∪ b|`, with two empty masks scoring 1.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64, MaskError> {
        self.check_dims(other)?;
        let (mut inter, mut union) = (0u64, 0u64);
        for (a, b) in self.words.iter().zip(&other.words) {
            inter += (a & b).count_ones() as u64;
            union += (a | b).count_ones() as u64;
        }
        if union == 0 {
            return Ok(1.0);
        }
        Ok(inter as f64 / union as f64)
    }

    /// Number of set pixels inside `rect`.
    pub fn count_in_rect(&self, rect: &BBox) -> usize {
        if self.width == 0 || self.height == 0 {
            return 0;
        }
        let x_max = rect.x_max.min(self.width - 1);
        let y_max = rect.y_max.min(self.height - 1);
        if rect.x_min > x_max || rect.y_min > y_max {
            return 0;
        }
        let mut n = 0;
        for y in rect.y_min..=y_max {
            for x in rect.x_min..=x_max {
                n += self.get_index(y * self.width + x) as usize;
            }
        }
        n
    }

    /// 8-connected components, largest first; equal areas keep the order of
    /// each component's first set bit in row-major scan.
    pub fn connected_components(&self) -> Vec<BinaryMask> {
        let (w, h) = self.dims();
        let mut labels = vec![u32::MAX; w * h];
        let mut comps: Vec<(usize, BinaryMask)> = Vec::new();
        let mut stack = Vec::new();

        for start in self.iter_indices() {
            if labels[start] != u32::MAX {
                continue;
            }
            let label = comps.len() as u32;
            let mut comp = BinaryMask::new(w, h);
            let mut area = 0;
            labels[start] = label;
            stack.push(start);
            while let Some(i) = stack.pop() {
                comp.set_index(i);
                area += 1;
                let (x, y) = (i % w, i / w);
                let y_lo = y.saturating_sub(1);
                let y_hi = (y + 1).min(h - 1);
                let x_lo = x.saturating_sub(1);
                let x_hi = (x + 1).min(w - 1);
                for ny in y_lo..=y_hi {
                    for nx in x_lo..=x_hi {
                        let j = ny * w + nx;
                        if labels[j] == u32::MAX && self.get_index(j) {
                            labels[j] = label;
                            stack.push(j);
                        }
                    }
                }
            }
            comps.push((area, comp));
        }

        // stable: ties keep discovery order
        comps.sort_by_key(|c| std::cmp::Reverse(c.0));
        comps.into_iter().map(|(_, m)| m).collect()
    }

    pub fn largest_component(&self) -> Option<BinaryMask> {
        self.connected_components().into_iter().next()
    }

    /// First flat index at or after `from` whose bit differs from `value`,
    /// or `len()` when there is none.
    fn next_change(&self, from: usize, value: bool) -> usize {
        let n = self.len();
        let flip = if value { !0u64 } else { 0 };
        let mut wi = from / WORD;
        if wi >= self.words.len() {
            return n;
        }
        let mut word = (self.words[wi] ^ flip) & (!0u64 << (from % WORD));
        loop {
            if word != 0 {
                return (wi * WORD + word.trailing_zeros() as usize).min(n);
            }
            wi += 1;
            if wi >= self.words.len() {
                return n;
            }
            word = self.words[wi] ^ flip;
        }
    }

    /// Canonical row-major run lengths, alternating from a (possibly zero)
    /// leading run of zeros. No interior run is zero-length.
    pub fn to_rle(&self) -> Vec<u64> {
        let n = self.len();
        let mut runs = Vec::new();
        let mut pos = 0;
        let mut value = false;
        loop {
            let next = self.next_change(pos, value);
            runs.push((next - pos) as u64);
            if next >= n {
                break;
            }
            pos = next;
            value = !value;
        }
        runs
    }

    /// Decodes run lengths (alternating, zeros first). Runs must sum to
    /// `width * height`; zero-length interior runs are accepted.
    pub fn from_rle(width: usize, height: usize, runs: &[u64]) -> Result<Self, MaskError> {
        let expected = (width * height) as u64;
        let got = runs
            .iter()
            .try_fold(0u64, |acc, &r| acc.checked_add(r))
            .unwrap_or(u64::MAX);
        if got != expected {
            return Err(MaskError::RunSum {
                width,
                height,
                expected,
                got,
            });
        }
        let mut m = Self::new(width, height);
        let mut pos = 0usize;
        for (i, &r) in runs.iter().enumerate() {
            let end = pos + r as usize;
            if i % 2 == 1 {
                m.fill_range(pos, end);
            }
            pos = end;
        }
        Ok(m)
    }
}

/// Canonical run-length encoding of `m`.
pub fn rle_encode(m: &BinaryMask) -> Vec<u64> {
    m.to_rle()
}

/// Decodes runs received from an untrusted signed source.
pub fn rle_decode(width: usize, height: usize, runs: &[i64]) -> Result<BinaryMask, MaskError> {
    let mut unsigned = Vec::with_capacity(runs.len());
    for (index, &value) in runs.iter().enumerate() {
        if value < 0 {
            return Err(MaskError::NegativeRun { index, value });
        }
        unsigned.push(value as u64);
    }
    BinaryMask::from_rle(width, height, &unsigned)
}
