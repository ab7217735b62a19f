//! Domain types: video frames, text queries, and fused feature maps.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Maximum number of tokens in a text query.
pub const MAX_QUERY_TOKENS: usize = 8;

/// Number of color channels per frame.
pub const FRAME_CHANNELS: usize = 3;

/// One decoded RGB video frame with values in `[0, 1]`.
///
/// Pixels are stored channel-major: index `(c, y, x)` maps to
/// `c * height * width + y * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != FRAME_CHANNELS * height * width {
            return Err(Error::FrameShape { height, width, len: pixels.len() });
        }
        for &v in &pixels {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::PixelOutOfRange(v));
            }
        }
        Ok(Frame { height, width, pixels })
    }

    /// Frame filled with a single value in all channels.
    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; FRAME_CHANNELS * height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    /// Mean value per channel over all pixels.
    pub fn channel_means(&self) -> [f64; FRAME_CHANNELS] {
        let area = (self.height * self.width) as f64;
        let mut means = [0.0; FRAME_CHANNELS];
        for (c, mean) in means.iter_mut().enumerate() {
            let start = c * self.height * self.width;
            let end = start + self.height * self.width;
            *mean = self.pixels[start..end].iter().sum::<f64>() / area;
        }
        means
    }
}

/// A text query: at most [`MAX_QUERY_TOKENS`] lowercase word tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    tokens: Vec<String>,
}

impl Query {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() > MAX_QUERY_TOKENS {
            return Err(Error::QueryTooLong { len: tokens.len(), max: MAX_QUERY_TOKENS });
        }
        for t in &tokens {
            if t.is_empty() || t.chars().any(|c| c.is_uppercase() || c.is_whitespace()) {
                return Err(Error::BadToken(t.clone()));
            }
        }
        Ok(Query { tokens })
    }

    /// Whitespace-split and lowercase free text into a query.
    pub fn parse(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.split_whitespace().map(|t| t.to_lowercase()).collect();
        Self::new(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Frames of one pair: decoded pixel grids, or precomputed per-frame
/// feature vectors when the corpus was featurized upstream.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameData {
    Pixels(Vec<Frame>),
    Features(Vec<Vec<f64>>),
}

impl FrameData {
    pub fn len(&self) -> usize {
        match self {
            FrameData::Pixels(f) => f.len(),
            FrameData::Features(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The fused multi-modal feature map: a `(channels, frames, dim)` array.
///
/// Values are stored row-major in that order, so the buffer doubles as a
/// `channels x (frames * dim)` matrix with positions `p = f * dim + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    frames: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, frames: usize, dim: usize) -> Self {
        FeatureMap { channels, frames, dim, values: vec![0.0; channels * frames * dim] }
    }

    pub fn from_values(channels: usize, frames: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * frames * dim {
            return Err(Error::DimMismatch {
                what: "feature map buffer",
                expected: channels * frames * dim,
                got: values.len(),
            });
        }
        Ok(FeatureMap { channels, frames, dim, values })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of attention positions, `frames * dim`.
    pub fn positions(&self) -> usize {
        self.frames * self.dim
    }

    #[inline]
    pub fn idx(&self, c: usize, f: usize, d: usize) -> usize {
        (c * self.frames + f) * self.dim + d
    }

    pub fn get(&self, c: usize, f: usize, d: usize) -> f64 {
        self.values[self.idx(c, f, d)]
    }

    pub fn set(&mut self, c: usize, f: usize, d: usize, v: f64) {
        let i = self.idx(c, f, d);
        self.values[i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Gather the per-frame slice of width `channels * dim` for frame `f`.
    pub fn frame_slice(&self, f: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.channels * self.dim);
        for c in 0..self.channels {
            let base = (c * self.frames + f) * self.dim;
            out.extend_from_slice(&self.values[base..base + self.dim]);
        }
        out
    }

    /// Scatter-add a per-frame slice gradient back into map coordinates.
    pub fn add_frame_slice(&mut self, f: usize, slice: &[f64]) {
        debug_assert_eq!(slice.len(), self.channels * self.dim);
        for c in 0..self.channels {
            let base = (c * self.frames + f) * self.dim;
            for d in 0..self.dim {
                self.values[base + d] += slice[c * self.dim + d];
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
