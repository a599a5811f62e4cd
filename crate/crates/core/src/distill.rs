//! Distractor-presence criterion over dense feature maps.
//!
//! Each grid cell gets a score: its mean cosine similarity to the features
//! inside the ground-truth region. A frame contains a distractor when the
//! number of outside cells beating the inside mean score is large relative to
//! the number of inside cells beating it. A sequence is kept when enough of
//! its frames contain a distractor.

use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::mask::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Cell score is the mean cosine similarity to the target cells.
    #[default]
    Similarity,
    /// Cell score is the mean cosine distance (1 - similarity). Flags cells
    /// that look unlike the target; kept for comparison.
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub ratio_threshold: f64,
    pub frame_fraction: f64,
    pub mode: ScoreMode,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            ratio_threshold: 0.5,
            frame_fraction: 1.0 / 3.0,
            mode: ScoreMode::Similarity,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), Error> {
        for (name, v) in [
            ("ratio_threshold", self.ratio_threshold),
            ("frame_fraction", self.frame_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Row-major grid of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, dim: usize, values: Vec<f64>) -> Result<Self, Error> {
        let n = width
            .checked_mul(height)
            .and_then(|c| c.checked_mul(dim))
            .ok_or_else(|| Error::Invalid("feature map too large".into()))?;
        if values.len() != n {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: n,
            });
        }
        if dim == 0 {
            return Err(Error::Invalid("feature dimension is zero".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("feature map has non-finite values".into()));
        }
        Ok(Self {
            width,
            height,
            dim,
            values,
        })
    }

    pub fn from_fn(width: usize, height: usize, dim: usize, mut f: impl FnMut(usize, usize) -> Vec<f64>) -> Result<Self, Error> {
        let mut values = Vec::with_capacity(width * height * dim);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                if v.len() != dim {
                    return Err(Error::LengthMismatch { left: v.len(), right: dim });
                }
                values.extend(v);
            }
        }
        Self::new(width, height, dim, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Binary container: `width`, `height`, `dim` as little-endian u32, then
    /// `width * height * dim` little-endian f32 values, row-major.
    pub fn read_binary(mut r: impl Read) -> Result<Self, Error> {
        let mut header = [0u8; 12];
        r.read_exact(&mut header)?;
        let field = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
        let (w, h, d) = (field(0), field(1), field(2));
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() % 4 != 0 {
            return Err(Error::Invalid("trailing bytes in feature file".into()));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(w, h, d, values)
    }

    pub fn write_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.values.len() * 4);
        for v in [self.width, self.height, self.dim] {
            out.extend((v as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend((*v as f32).to_le_bytes());
        }
        out
    }

    /// Text form: a `width height dim` line, then one whitespace-separated
    /// vector per cell, row-major. Blank lines and `#` comments are ignored.
    pub fn read_text(r: impl BufRead) -> Result<Self, Error> {
        let mut header: Option<(usize, usize, usize)> = None;
        let mut values = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Invalid(format!("line {}: {what}", lineno + 1));
            if header.is_none() {
                let dims: Vec<usize> = line
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| bad("bad header")))
                    .collect::<Result<_, _>>()?;
                let [w, h, d] = dims[..] else {
                    return Err(bad("header must be `width height dim`"));
                };
                header = Some((w, h, d));
                continue;
            }
            let before = values.len();
            for t in line.split_whitespace() {
                values.push(t.parse::<f64>().map_err(|_| bad("bad number"))?);
            }
            if values.len() - before != header.unwrap().2 {
                return Err(bad("vector length differs from dim"));
            }
        }
        let (w, h, d) = header.ok_or(Error::EmptyInput("feature text has no header"))?;
        Self::new(w, h, d, values)
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

fn check_grid(f: &FeatureMap, gt: &BinaryMask) -> Result<(), Error> {
    if gt.dims() != (f.width, f.height) {
        return Err(Error::Invalid(format!(
            "target mask is {}x{}, feature grid is {}x{}",
            gt.width(),
            gt.height(),
            f.width,
            f.height
        )));
    }
    if gt.is_empty() {
        return Err(Error::EmptyInput("target region is empty"));
    }
    Ok(())
}

/// Per-cell score against the target region, row-major.
///
/// The mean cosine similarity over target cells equals the dot product with
/// the mean of the normalized target features, which keeps this linear in
/// the grid size.
pub fn pixel_scores(f: &FeatureMap, gt: &BinaryMask, mode: ScoreMode) -> Result<Vec<f64>, Error> {
    check_grid(f, gt)?;
    let mut centroid = vec![0.0; f.dim];
    let mut n = 0usize;
    for i in gt.iter_indices() {
        for (c, v) in centroid.iter_mut().zip(normalized(f.cell(i))) {
            *c += v;
        }
        n += 1;
    }
    centroid.iter_mut().for_each(|c| *c /= n as f64);
    Ok(f.cells()
        .map(|cell| {
            let sim: f64 = normalized(cell).iter().zip(&centroid).map(|(a, b)| a * b).sum();
            match mode {
                ScoreMode::Similarity => sim,
                ScoreMode::Distance => 1.0 - sim,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameVerdict {
    pub has_distractor: bool,
    /// Mean score inside the target region.
    pub theta: f64,
    pub n_in: usize,
    pub n_out: usize,
    /// `n_out / n_in`, absent when no inside cell beats the mean.
    pub ratio: Option<f64>,
}

pub fn frame_has_distractor(scores: &[f64], gt: &BinaryMask, cfg: &DistillConfig) -> Result<FrameVerdict, Error> {
    if scores.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: gt.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::EmptyInput("target region is empty"));
    }
    let inside = gt.to_bits();
    let (sum, count) = scores
        .iter()
        .zip(&inside)
        .filter(|(_, &b)| b)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    let theta = sum / count as f64;
    let (mut n_in, mut n_out) = (0, 0);
    for (&s, &b) in scores.iter().zip(&inside) {
        if s > theta {
            if b {
                n_in += 1;
            } else {
                n_out += 1;
            }
        }
    }
    let (has_distractor, ratio) = if n_in == 0 {
        (n_out > 0, None)
    } else {
        let r = n_out as f64 / n_in as f64;
        (r > cfg.ratio_threshold, Some(r))
    };
    Ok(FrameVerdict {
        has_distractor,
        theta,
        n_in,
        n_out,
        ratio,
    })
}

/// Scores a frame and applies the criterion in one go.
pub fn classify_frame(f: &FeatureMap, gt: &BinaryMask, cfg: &DistillConfig) -> Result<FrameVerdict, Error> {
    let scores = pixel_scores(f, gt, cfg.mode)?;
    frame_has_distractor(&scores, gt, cfg)
}

pub fn sequence_selected(flags: &[bool], cfg: &DistillConfig) -> Result<bool, Error> {
    if flags.is_empty() {
        return Err(Error::EmptyInput("sequence has no frames"));
    }
    let hits = flags.iter().filter(|f| **f).count();
    Ok(hits as f64 / flags.len() as f64 >= cfg.frame_fraction)
}

/// Rasterizes an image-space box `[x_min, y_min, x_max, y_max]` onto a
/// feature grid: a cell belongs to the box when its centre does.
pub fn rasterize_box(
    image_box: [f64; 4],
    image_size: (f64, f64),
    grid_width: usize,
    grid_height: usize,
) -> BinaryMask {
    let [x0, y0, x1, y1] = image_box;
    let sx = image_size.0 / grid_width as f64;
    let sy = image_size.1 / grid_height as f64;
    BinaryMask::from_fn(grid_width, grid_height, |x, y| {
        let cx = (x as f64 + 0.5) * sx;
        let cy = (y as f64 + 0.5) * sy;
        (x0..=x1).contains(&cx) && (y0..=y1).contains(&cy)
    })
}
