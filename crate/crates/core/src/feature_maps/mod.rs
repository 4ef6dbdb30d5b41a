//! Spatial feature maps and their decomposition into block sets.
//!
//! A map is stored row-major with the channel index fastest:
//! `data[(row * width + col) * channels + c]`.

mod fmap;

pub use fmap::{decode_fmap, encode_fmap, read_fmap, write_fmap, FMAP_MAGIC, FMAP_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{DsrError, Result};
use crate::scalar::{squared_norm, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
    pub source_id: String,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(DsrError::InvalidMap(format!(
                "dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(DsrError::mismatch(
                "feature map data length",
                expected,
                data.len(),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(DsrError::InvalidMap(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            source_id: String::new(),
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![T::zero(); width * height * channels],
        )
    }

    /// Builds a map by evaluating `f(col, row, channel)` at every entry.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for row in 0..height {
            for col in 0..width {
                for c in 0..channels {
                    data.push(f(col, row, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, col: usize, row: usize) -> usize {
        (row * self.width + col) * self.channels
    }

    /// Channel fiber at a spatial cell.
    pub fn fiber(&self, col: usize, row: usize) -> &[T] {
        let o = self.offset(col, row);
        &self.data[o..o + self.channels]
    }

    pub fn get(&self, col: usize, row: usize, channel: usize) -> T {
        self.data[self.offset(col, row) + channel]
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            data: self.data.iter().map(|&v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Spatial sub-window `[col, col + width) x [row, row + height)`.
    pub fn crop(&self, col: usize, row: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || col + width > self.width || row + height > self.height {
            return Err(DsrError::OutOfRange(format!(
                "crop {width}x{height} at ({col},{row}) exceeds {}x{} map",
                self.width, self.height
            )));
        }
        let mut out = Self::from_fn(width, height, self.channels, |c, r, k| {
            self.get(col + c, row + r, k)
        })?;
        out.source_id = self.source_id.clone();
        Ok(out)
    }

    /// Average-pools non-overlapping `factor x factor` cells (floor semantics).
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || factor > self.width || factor > self.height {
            return Err(DsrError::OutOfRange(format!(
                "downsample factor {factor} for {}x{} map",
                self.width, self.height
            )));
        }
        let w = self.width / factor;
        let h = self.height / factor;
        let mut out = Self::from_fn(w, h, self.channels, |c, r, k| {
            let mut s = T::zero();
            for dr in 0..factor {
                for dc in 0..factor {
                    s += self.get(c * factor + dc, r * factor + dr, k);
                }
            }
            s / T::of((factor * factor) as f64)
        })?;
        out.source_id = self.source_id.clone();
        Ok(out)
    }

    /// Converts the element type, e.g. `f32` maps read from disk into `f64`.
    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            source_id: self.source_id.clone(),
        }
    }

    /// Rebuilds a map from a scale-1 block set laid out by [`divide_into_blocks`].
    pub fn from_blocks(width: usize, height: usize, blocks: &BlockSet<T>) -> Result<Self> {
        if blocks.len() != width * height {
            return Err(DsrError::mismatch(
                "block count",
                width * height,
                blocks.len(),
            ));
        }
        let mut data = vec![T::zero(); width * height * blocks.channels()];
        for block in blocks.iter() {
            let (col, row) = block.position;
            if block.scale != 1 || col >= width || row >= height {
                return Err(DsrError::InvalidMap(format!(
                    "block at ({col},{row}) scale {} does not tile a {width}x{height} map",
                    block.scale
                )));
            }
            let o = (row * width + col) * blocks.channels();
            data[o..o + blocks.channels()].copy_from_slice(&block.vector);
        }
        Self::new(width, height, blocks.channels(), data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub vector: Vec<T>,
    pub scale: usize,
    /// `(col, row)` of the window's top-left cell.
    pub position: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    UnitL2,
}

impl std::str::FromStr for Normalization {
    type Err = DsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "unit_l2" | "l2" => Ok(Normalization::UnitL2),
            other => Err(DsrError::Config(format!("unknown normalization {other:?}"))),
        }
    }
}

/// Ordered blocks sharing one channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSet<T> {
    channels: usize,
    blocks: Vec<Block<T>>,
    normalization: Normalization,
    /// Indices of zero blocks left unscaled by [`normalize`].
    zero_blocks: Vec<usize>,
}

impl<T: Scalar> BlockSet<T> {
    pub fn new(channels: usize, blocks: Vec<Block<T>>) -> Result<Self> {
        if channels == 0 {
            return Err(DsrError::InvalidMap(
                "block channel count must be positive".into(),
            ));
        }
        for b in &blocks {
            if b.vector.len() != channels {
                return Err(DsrError::mismatch("block length", channels, b.vector.len()));
            }
            if b.vector.iter().any(|v| !v.is_finite()) {
                return Err(DsrError::InvalidMap("non-finite block entry".into()));
            }
        }
        Ok(Self {
            channels,
            blocks,
            normalization: Normalization::None,
            zero_blocks: Vec::new(),
        })
    }

    /// Scale-1 blocks from bare vectors, positioned along a single row.
    pub fn from_vectors(channels: usize, vectors: Vec<Vec<T>>) -> Result<Self> {
        let blocks = vectors
            .into_iter()
            .enumerate()
            .map(|(i, vector)| Block {
                vector,
                scale: 1,
                position: (i, 0),
            })
            .collect();
        Self::new(channels, blocks)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Block<T>> {
        self.blocks.iter()
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn zero_blocks(&self) -> &[usize] {
        &self.zero_blocks
    }

    pub fn vector(&self, i: usize) -> &[T] {
        &self.blocks[i].vector
    }

    /// Number of blocks carrying each scale tag, ascending by scale.
    pub fn scale_counts(&self) -> Vec<(usize, usize)> {
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for b in &self.blocks {
            match counts.iter_mut().find(|(s, _)| *s == b.scale) {
                Some(entry) => entry.1 += 1,
                None => counts.push((b.scale, 1)),
            }
        }
        counts.sort_unstable();
        counts
    }

    /// Appends the blocks of `other`; channel counts must agree.
    pub fn union(&self, other: &BlockSet<T>) -> Result<Self> {
        if other.channels != self.channels {
            return Err(DsrError::mismatch(
                "channel count",
                self.channels,
                other.channels,
            ));
        }
        let mut blocks = self.blocks.clone();
        blocks.extend(other.blocks.iter().cloned());
        let mut zero_blocks = self.zero_blocks.clone();
        zero_blocks.extend(other.zero_blocks.iter().map(|i| i + self.len()));
        Ok(Self {
            channels: self.channels,
            blocks,
            normalization: if self.normalization == other.normalization {
                self.normalization
            } else {
                Normalization::None
            },
            zero_blocks,
        })
    }

    /// Same blocks in a new order: `order[k]` is the source index of block `k`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            channels: self.channels,
            blocks: order.iter().map(|&i| self.blocks[i].clone()).collect(),
            normalization: self.normalization,
            zero_blocks: Vec::new(),
        }
    }
}

fn check_map<T: Scalar>(fm: &FeatureMap<T>) -> Result<()> {
    // FeatureMap fields are private, so only a hand-built map could break this.
    if fm.data.len() != fm.width * fm.height * fm.channels || fm.data.is_empty() {
        return Err(DsrError::InvalidMap("inconsistent feature map".into()));
    }
    Ok(())
}

/// Splits a map into its `width * height` channel fibers, row-major.
pub fn divide_into_blocks<T: Scalar>(fm: &FeatureMap<T>) -> Result<BlockSet<T>> {
    check_map(fm)?;
    let mut blocks = Vec::with_capacity(fm.width * fm.height);
    for row in 0..fm.height {
        for col in 0..fm.width {
            blocks.push(Block {
                vector: fm.fiber(col, row).to_vec(),
                scale: 1,
                position: (col, row),
            });
        }
    }
    BlockSet::new(fm.channels, blocks)
}

/// Channel-wise mean over the `scale x scale` window whose top-left cell is `(col, row)`.
pub fn pool_block<T: Scalar>(
    fm: &FeatureMap<T>,
    col: usize,
    row: usize,
    scale: usize,
) -> Result<Block<T>> {
    if scale == 0 || col + scale > fm.width || row + scale > fm.height {
        return Err(DsrError::OutOfRange(format!(
            "{scale}x{scale} window at ({col},{row}) outside {}x{} map",
            fm.width, fm.height
        )));
    }
    let mut vector = vec![T::zero(); fm.channels];
    for r in row..row + scale {
        for c in col..col + scale {
            for (acc, &v) in vector.iter_mut().zip(fm.fiber(c, r)) {
                *acc += v;
            }
        }
    }
    if scale > 1 {
        let n = T::of((scale * scale) as f64);
        for v in &mut vector {
            *v /= n;
        }
    }
    Ok(Block {
        vector,
        scale,
        position: (col, row),
    })
}

fn canonical_scales(scales: &[usize]) -> Result<Vec<usize>> {
    if scales.is_empty() {
        return Err(DsrError::Config("scale set is empty".into()));
    }
    let mut s = scales.to_vec();
    s.sort_unstable();
    s.dedup();
    Ok(s)
}

/// Stride-1 sliding windows at every requested scale, each average-pooled to one block.
///
/// Blocks are ordered by ascending scale, then row-major by window position.
pub fn multiscale_blocks<T: Scalar>(fm: &FeatureMap<T>, scales: &[usize]) -> Result<BlockSet<T>> {
    check_map(fm)?;
    let scales = canonical_scales(scales)?;
    let limit = fm.width.min(fm.height);
    if let Some(&bad) = scales.iter().find(|&&s| s == 0 || s > limit) {
        return Err(DsrError::OutOfRange(format!(
            "scale {bad} not in 1..={limit} for {}x{} map",
            fm.width, fm.height
        )));
    }
    let total: usize = scales
        .iter()
        .map(|&s| (fm.width - s + 1) * (fm.height - s + 1))
        .sum();
    let mut blocks = Vec::with_capacity(total);
    for &s in &scales {
        for row in 0..=fm.height - s {
            for col in 0..=fm.width - s {
                blocks.push(pool_block(fm, col, row, s)?);
            }
        }
    }
    BlockSet::new(fm.channels, blocks)
}

/// Applies a block normalization; zero blocks are kept and recorded in `zero_blocks`.
pub fn normalize<T: Scalar>(bs: &BlockSet<T>, mode: Normalization) -> BlockSet<T> {
    match mode {
        Normalization::None => bs.clone(),
        Normalization::UnitL2 => {
            let mut zero_blocks = Vec::new();
            let blocks = bs
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let norm = squared_norm(&b.vector).sqrt();
                    let vector = if norm > T::zero() {
                        b.vector.iter().map(|&v| v / norm).collect()
                    } else {
                        zero_blocks.push(i);
                        b.vector.clone()
                    };
                    Block {
                        vector,
                        scale: b.scale,
                        position: b.position,
                    }
                })
                .collect();
            BlockSet {
                channels: bs.channels,
                blocks,
                normalization: Normalization::UnitL2,
                zero_blocks,
            }
        }
    }
}

/// The requested scales whose windows fit inside `fm`; falls back to the
/// smallest requested scale so the result is never empty.
pub fn fitting_scales<T>(fm: &FeatureMap<T>, scales: &[usize]) -> Vec<usize> {
    let limit = fm.width.min(fm.height);
    let mut fit: Vec<usize> = scales
        .iter()
        .copied()
        .filter(|&s| s >= 1 && s <= limit)
        .collect();
    if fit.is_empty() {
        fit.extend(scales.iter().copied().min());
    }
    fit
}

/// Multi-scale decomposition followed by normalization.
pub fn block_set<T: Scalar>(
    fm: &FeatureMap<T>,
    scales: &[usize],
    mode: Normalization,
) -> Result<BlockSet<T>> {
    Ok(normalize(&multiscale_blocks(fm, scales)?, mode))
}

/// Adjoint of block extraction: scatters per-block gradients back onto map cells.
///
/// `grads[k]` is the gradient with respect to block `k`'s vector. A pooled
/// block spreads its gradient evenly over the `scale x scale` window.
/// Only valid for un-normalized block sets.
pub fn scatter_block_gradients<T: Scalar>(
    width: usize,
    height: usize,
    blocks: &BlockSet<T>,
    grads: &[Vec<T>],
) -> Result<FeatureMap<T>> {
    if grads.len() != blocks.len() {
        return Err(DsrError::mismatch(
            "gradient count",
            blocks.len(),
            grads.len(),
        ));
    }
    let d = blocks.channels();
    let mut data = vec![T::zero(); width * height * d];
    for (block, g) in blocks.iter().zip(grads) {
        if g.len() != d {
            return Err(DsrError::mismatch("gradient length", d, g.len()));
        }
        let (col, row) = block.position;
        let s = block.scale;
        if col + s > width || row + s > height {
            return Err(DsrError::OutOfRange("block outside map".into()));
        }
        let share = T::one() / T::of((s * s) as f64);
        for r in row..row + s {
            for c in col..col + s {
                let o = (r * width + c) * d;
                for k in 0..d {
                    data[o + k] += g[k] * share;
                }
            }
        }
    }
    FeatureMap::new(width, height, d, data)
}
