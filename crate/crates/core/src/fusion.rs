//! Fusion of per-frame visual features with the query vector into the
//! `(channels, frames, dim)` feature map.
//!
//! The query vector is broadcast-concatenated to every frame row, passed
//! through one affine layer with an ELU nonlinearity, viewed as
//! `(channels, dim / upsample)`, and expanded along the last axis by
//! nearest-neighbor repetition.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{self, LayoutBuilder, Linear};
use crate::types::FeatureMap;

#[derive(Debug, Clone, Copy)]
pub struct Fusion {
    pub lin: Linear,
    pub channels: usize,
    pub dim: usize,
    /// Columns produced by the affine layer before upsampling.
    pub base_dim: usize,
    pub upsample: usize,
    pub visual_dim: usize,
    pub query_dim: usize,
}

/// Per-frame activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct FusionCache {
    pub inputs: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
}

impl Fusion {
    pub fn define(
        lb: &mut LayoutBuilder,
        channels: usize,
        dim: usize,
        upsample: usize,
        visual_dim: usize,
        query_dim: usize,
    ) -> Result<Self> {
        if upsample == 0 || dim % upsample != 0 {
            return Err(Error::BadConfig(alloc::format!(
                "feature dim {dim} not divisible by upsample factor {upsample}"
            )));
        }
        let base_dim = dim / upsample;
        let lin = Linear::define(lb, "fusion", visual_dim + query_dim, channels * base_dim);
        Ok(Fusion { lin, channels, dim, base_dim, upsample, visual_dim, query_dim })
    }

    pub fn forward(
        &self,
        params: &[f64],
        frame_feats: &[Vec<f64>],
        query_vec: &[f64],
    ) -> Result<(FeatureMap, FusionCache)> {
        if query_vec.len() != self.query_dim {
            return Err(Error::DimMismatch {
                what: "query vector",
                expected: self.query_dim,
                got: query_vec.len(),
            });
        }
        let frames = frame_feats.len();
        let mut map = FeatureMap::zeros(self.channels, frames, self.dim);
        let mut cache =
            FusionCache { inputs: Vec::with_capacity(frames), hidden: Vec::with_capacity(frames) };
        for (f, feat) in frame_feats.iter().enumerate() {
            if feat.len() != self.visual_dim {
                return Err(Error::DimMismatch {
                    what: "frame feature",
                    expected: self.visual_dim,
                    got: feat.len(),
                });
            }
            let mut input = Vec::with_capacity(self.visual_dim + self.query_dim);
            input.extend_from_slice(feat);
            input.extend_from_slice(query_vec);
            let mut hidden = alloc::vec![0.0; self.channels * self.base_dim];
            self.lin.forward(params, &input, &mut hidden);
            for h in hidden.iter_mut() {
                *h = nn::elu(*h);
            }
            for c in 0..self.channels {
                for d in 0..self.dim {
                    map.set(c, f, d, hidden[c * self.base_dim + d / self.upsample]);
                }
            }
            cache.inputs.push(input);
            cache.hidden.push(hidden);
        }
        Ok((map, cache))
    }

    /// Accumulate parameter gradients from a map-shaped upstream gradient.
    /// Repeated columns sum back into their source column.
    pub fn backward(&self, params: &[f64], cache: &FusionCache, dmap: &FeatureMap, grad: &mut [f64]) {
        let frames = cache.inputs.len();
        let mut sink = alloc::vec![0.0; self.lin.in_dim];
        for f in 0..frames {
            let mut dhidden = alloc::vec![0.0; self.channels * self.base_dim];
            for c in 0..self.channels {
                for d in 0..self.dim {
                    dhidden[c * self.base_dim + d / self.upsample] += dmap.get(c, f, d);
                }
            }
            for (dh, &h) in dhidden.iter_mut().zip(&cache.hidden[f]) {
                *dh *= nn::elu_grad_from_output(h);
            }
            sink.iter_mut().for_each(|v| *v = 0.0);
            self.lin.backward(params, &cache.inputs[f], &dhidden, grad, &mut sink);
        }
    }
}
