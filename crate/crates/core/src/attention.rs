//! Spatial (position) and channel-wise self-attention over the feature map.
//!
//! The map is viewed as a `channels x positions` matrix with `positions =
//! frames * dim`. Position attention projects the features to query/key/value
//! spaces and mixes positions with a row-stochastic affinity; channel
//! attention mixes whole channel maps using affinities of the raw channel
//! features, with no projections. Each output is `gamma * mixed + input`
//! with a learnable scalar `gamma` initialized to zero, so an untrained
//! model starts at the residual identity.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // required by the no_std build; std test builds shadow it
use num_traits::Float;

use crate::error::{Error, Result};
use crate::nn::{Block, LayoutBuilder};
use crate::types::FeatureMap;

/// Row softmax over an `n x n` affinity buffer, with max subtraction.
fn softmax_rows(e: &mut [f64], n: usize) {
    for row in e.chunks_mut(n) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Backward through a row softmax: turns `d_affinity` into `d_energy` in
/// place using the cached affinity rows.
fn softmax_rows_backward(da: &mut [f64], a: &[f64], n: usize) {
    for (da_row, a_row) in da.chunks_mut(n).zip(a.chunks(n)) {
        let dot: f64 = da_row.iter().zip(a_row).map(|(d, p)| d * p).sum();
        for (d, p) in da_row.iter_mut().zip(a_row) {
            *d = p * (*d - dot);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SpatialAttention {
    pub channels: usize,
    /// Width of the query/key projection space.
    pub proj: usize,
    pub wq: Block,
    pub wk: Block,
    pub wv: Block,
    pub gamma: Block,
}

#[derive(Debug, Clone)]
pub struct SpatialCache {
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Row-stochastic `positions x positions` affinity.
    pub affinity: Vec<f64>,
    /// The mixed values `V A^T`, before blending.
    pub attn: Vec<f64>,
    pub positions: usize,
}

impl SpatialAttention {
    pub fn define(lb: &mut LayoutBuilder, name: &str, channels: usize, proj: usize) -> Self {
        SpatialAttention {
            channels,
            proj,
            wq: lb.matrix(&alloc::format!("{name}.wq"), proj, channels),
            wk: lb.matrix(&alloc::format!("{name}.wk"), proj, channels),
            wv: lb.matrix(&alloc::format!("{name}.wv"), channels, channels),
            gamma: lb.scalar(&alloc::format!("{name}.gamma")),
        }
    }

    /// Project `x` (`channels x n`) with a `rows x channels` weight block.
    fn project(&self, params: &[f64], w: Block, x: &[f64], n: usize) -> Vec<f64> {
        let wm = w.slice(params);
        let mut out = vec![0.0; w.rows * n];
        for r in 0..w.rows {
            let row = &wm[r * self.channels..(r + 1) * self.channels];
            let dst = &mut out[r * n..(r + 1) * n];
            for (c, &wc) in row.iter().enumerate() {
                if wc == 0.0 {
                    continue;
                }
                let src = &x[c * n..(c + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wc * s;
                }
            }
        }
        out
    }

    pub fn forward(&self, params: &[f64], x: &FeatureMap) -> Result<(FeatureMap, SpatialCache)> {
        if !x.is_finite() {
            return Err(Error::NonFinite("spatial attention input"));
        }
        let n = x.positions();
        let c = self.channels;
        let xv = x.values();
        let q = self.project(params, self.wq, xv, n);
        let k = self.project(params, self.wk, xv, n);
        let v = self.project(params, self.wv, xv, n);

        // affinity = softmax_rows(Q^T K)
        let mut affinity = vec![0.0; n * n];
        for cp in 0..self.proj {
            let qrow = &q[cp * n..(cp + 1) * n];
            let krow = &k[cp * n..(cp + 1) * n];
            for p in 0..n {
                let qv = qrow[p];
                if qv == 0.0 {
                    continue;
                }
                let dst = &mut affinity[p * n..(p + 1) * n];
                for (d, kv) in dst.iter_mut().zip(krow) {
                    *d += qv * kv;
                }
            }
        }
        softmax_rows(&mut affinity, n);

        // attn = V A^T; out = gamma * attn + x
        let gamma = params[self.gamma.offset];
        let mut attn = vec![0.0; c * n];
        let mut out = x.clone();
        for ch in 0..c {
            let vrow = &v[ch * n..(ch + 1) * n];
            for p in 0..n {
                let arow = &affinity[p * n..(p + 1) * n];
                let s: f64 = vrow.iter().zip(arow).map(|(a, b)| a * b).sum();
                attn[ch * n + p] = s;
                out.values_mut()[ch * n + p] += gamma * s;
            }
        }
        Ok((out, SpatialCache { x: xv.to_vec(), q, k, v, affinity, attn, positions: n }))
    }

    pub fn backward(
        &self,
        params: &[f64],
        cache: &SpatialCache,
        dout: &[f64],
        grad: &mut [f64],
        dx: &mut [f64],
    ) {
        let n = cache.positions;
        let c = self.channels;
        let gamma = params[self.gamma.offset];

        // Residual branch plus the blend coefficient.
        let mut dgamma = 0.0;
        for (i, &g) in dout.iter().enumerate() {
            dx[i] += g;
            dgamma += g * cache.attn[i];
        }
        grad[self.gamma.offset] += dgamma;

        // dV = gamma * dOut * A ; dA[p][q] = gamma * sum_c dOut[c][p] V[c][q]
        let mut dv = vec![0.0; c * n];
        let mut da = vec![0.0; n * n];
        for ch in 0..c {
            let dorow = &dout[ch * n..(ch + 1) * n];
            let vrow = &cache.v[ch * n..(ch + 1) * n];
            let dvrow = &mut dv[ch * n..(ch + 1) * n];
            for p in 0..n {
                let g = gamma * dorow[p];
                if g == 0.0 {
                    continue;
                }
                let arow = &cache.affinity[p * n..(p + 1) * n];
                let darow = &mut da[p * n..(p + 1) * n];
                for qi in 0..n {
                    dvrow[qi] += g * arow[qi];
                    darow[qi] += g * vrow[qi];
                }
            }
        }
        softmax_rows_backward(&mut da, &cache.affinity, n);
        let de = da; // renamed: now holds energy gradients

        // dQ = K dE^T, dK = Q dE
        let mut dq = vec![0.0; self.proj * n];
        let mut dk = vec![0.0; self.proj * n];
        for cp in 0..self.proj {
            let krow = &cache.k[cp * n..(cp + 1) * n];
            let qrow = &cache.q[cp * n..(cp + 1) * n];
            let dqrow = &mut dq[cp * n..(cp + 1) * n];
            let dkrow = &mut dk[cp * n..(cp + 1) * n];
            for p in 0..n {
                let derow = &de[p * n..(p + 1) * n];
                let mut acc = 0.0;
                let qv = qrow[p];
                for qi in 0..n {
                    let d = derow[qi];
                    acc += d * krow[qi];
                    dkrow[qi] += d * qv;
                }
                dqrow[p] += acc;
            }
        }

        // Projection weight gradients and their input contributions.
        for (w, dproj) in [(self.wq, &dq), (self.wk, &dk), (self.wv, &dv)] {
            let wm = w.slice(params);
            for r in 0..w.rows {
                let drow = &dproj[r * n..(r + 1) * n];
                for ch in 0..c {
                    let xrow = &cache.x[ch * n..(ch + 1) * n];
                    let mut acc = 0.0;
                    for (d, xv) in drow.iter().zip(xrow) {
                        acc += d * xv;
                    }
                    grad[w.offset + r * c + ch] += acc;
                    let wc = wm[r * c + ch];
                    if wc != 0.0 {
                        let dst = &mut dx[ch * n..(ch + 1) * n];
                        for (d, s) in dst.iter_mut().zip(drow) {
                            *d += wc * s;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ChannelAttention {
    pub channels: usize,
    pub gamma: Block,
}

#[derive(Debug, Clone)]
pub struct ChannelCache {
    pub x: Vec<f64>,
    /// Row-stochastic `channels x channels` affinity.
    pub affinity: Vec<f64>,
    /// The mixed channels `A X`, before blending.
    pub attn: Vec<f64>,
    pub positions: usize,
}

impl ChannelAttention {
    pub fn define(lb: &mut LayoutBuilder, name: &str, channels: usize) -> Self {
        ChannelAttention { channels, gamma: lb.scalar(&alloc::format!("{name}.gamma")) }
    }

    pub fn forward(&self, params: &[f64], x: &FeatureMap) -> Result<(FeatureMap, ChannelCache)> {
        if !x.is_finite() {
            return Err(Error::NonFinite("channel attention input"));
        }
        let n = x.positions();
        let c = self.channels;
        let xv = x.values();

        let mut affinity = vec![0.0; c * c];
        for i in 0..c {
            let xi = &xv[i * n..(i + 1) * n];
            for j in 0..c {
                let xj = &xv[j * n..(j + 1) * n];
                affinity[i * c + j] = xi.iter().zip(xj).map(|(a, b)| a * b).sum();
            }
        }
        softmax_rows(&mut affinity, c);

        let gamma = params[self.gamma.offset];
        let mut attn = vec![0.0; c * n];
        let mut out = x.clone();
        for i in 0..c {
            let arow = &affinity[i * c..(i + 1) * c];
            let dst = &mut attn[i * n..(i + 1) * n];
            for (j, &a) in arow.iter().enumerate() {
                let src = &xv[j * n..(j + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
            let orow = &mut out.values_mut()[i * n..(i + 1) * n];
            for (o, a) in orow.iter_mut().zip(dst.iter()) {
                *o += gamma * a;
            }
        }
        Ok((out, ChannelCache { x: xv.to_vec(), affinity, attn, positions: n }))
    }

    pub fn backward(
        &self,
        params: &[f64],
        cache: &ChannelCache,
        dout: &[f64],
        grad: &mut [f64],
        dx: &mut [f64],
    ) {
        let n = cache.positions;
        let c = self.channels;
        let gamma = params[self.gamma.offset];

        let mut dgamma = 0.0;
        for (i, &g) in dout.iter().enumerate() {
            dx[i] += g;
            dgamma += g * cache.attn[i];
        }
        grad[self.gamma.offset] += dgamma;

        // Through attn = A X: both the mixing path and the affinity path.
        let mut da = vec![0.0; c * c];
        for i in 0..c {
            let dorow = &dout[i * n..(i + 1) * n];
            for j in 0..c {
                let xj = &cache.x[j * n..(j + 1) * n];
                // dA[i][j] = gamma * <dOut_i, X_j>
                da[i * c + j] = gamma * dorow.iter().zip(xj).map(|(a, b)| a * b).sum::<f64>();
                // dX_j += gamma * A[i][j] * dOut_i
                let a = gamma * cache.affinity[i * c + j];
                if a != 0.0 {
                    let dst = &mut dx[j * n..(j + 1) * n];
                    for (d, s) in dst.iter_mut().zip(dorow) {
                        *d += a * s;
                    }
                }
            }
        }
        softmax_rows_backward(&mut da, &cache.affinity, c);
        let de = da;

        // E = X X^T: dX_i += sum_j (dE[i][j] + dE[j][i]) X_j
        for i in 0..c {
            for j in 0..c {
                let w = de[i * c + j] + de[j * c + i];
                if w == 0.0 {
                    continue;
                }
                let src = &cache.x[j * n..(j + 1) * n];
                let dst = &mut dx[i * n..(i + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{random_params, LayoutBuilder, ParamLayout};

    fn spatial(channels: usize, proj: usize) -> (SpatialAttention, ParamLayout) {
        let mut lb = LayoutBuilder::new();
        let attn = SpatialAttention::define(&mut lb, "sp", channels, proj);
        (attn, lb.finish())
    }

    fn channel(channels: usize) -> (ChannelAttention, ParamLayout) {
        let mut lb = LayoutBuilder::new();
        let attn = ChannelAttention::define(&mut lb, "ch", channels);
        (attn, lb.finish())
    }

    fn random_map(channels: usize, frames: usize, dim: usize, seed: u64) -> FeatureMap {
        let params_len = channels * frames * dim;
        let mut lb = LayoutBuilder::new();
        lb.vector("x", params_len);
        let values = random_params(&lb.finish(), seed, 1.0);
        FeatureMap::from_values(channels, frames, dim, values).unwrap()
    }

    #[test]
    fn gamma_zero_is_the_identity() {
        let (sp, layout) = spatial(3, 2);
        let mut params = random_params(&layout, 1, 0.5);
        params[sp.gamma.offset] = 0.0;
        let x = random_map(3, 4, 2, 7);
        let (out, _) = sp.forward(&params, &x).unwrap();
        assert_eq!(out.values(), x.values());

        let (ch, layout) = channel(3);
        let params = alloc::vec![0.0; layout.total];
        let (out, _) = ch.forward(&params, &x).unwrap();
        assert_eq!(out.values(), x.values());
    }

    #[test]
    fn affinity_rows_are_stochastic() {
        let (sp, layout) = spatial(2, 2);
        let params = random_params(&layout, 3, 0.8);
        let x = random_map(2, 3, 2, 11);
        let (_, cache) = sp.forward(&params, &x).unwrap();
        let n = cache.positions;
        for row in cache.affinity.chunks(n) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        let (chn, layout) = channel(2);
        let params = random_params(&layout, 3, 0.8);
        let (_, cache) = chn.forward(&params, &x).unwrap();
        for row in cache.affinity.chunks(2) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_position_attends_to_itself() {
        let (sp, layout) = spatial(2, 2);
        let mut params = random_params(&layout, 5, 0.6);
        params[sp.gamma.offset] = 0.7;
        let x = FeatureMap::from_values(2, 1, 1, alloc::vec![0.4, -0.3]).unwrap();
        let (out, cache) = sp.forward(&params, &x).unwrap();
        assert_eq!(cache.affinity, alloc::vec![1.0]);
        // out = gamma * v + x with A = [[1]]
        for c in 0..2 {
            assert!((out.values()[c] - (0.7 * cache.v[c] + x.values()[c])).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_input_with_identity_projections_is_uniform() {
        let (sp, layout) = spatial(2, 2);
        let mut params = alloc::vec![0.0; layout.total];
        // Identity Wq and Wk.
        params[sp.wq.offset] = 1.0;
        params[sp.wq.offset + 3] = 1.0;
        params[sp.wk.offset] = 1.0;
        params[sp.wk.offset + 3] = 1.0;
        let x = FeatureMap::from_values(2, 2, 3, alloc::vec![0.5; 12]).unwrap();
        let (_, cache) = sp.forward(&params, &x).unwrap();
        let n = 6;
        for &a in &cache.affinity {
            assert!((a - 1.0 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_channels_share_affinity_rows() {
        let (chn, layout) = channel(3);
        let params = random_params(&layout, 2, 0.4);
        let mut values = random_params(
            &{
                let mut lb = LayoutBuilder::new();
                lb.vector("x", 6);
                lb.finish()
            },
            9,
            1.0,
        );
        values.extend_from_slice(&values.clone()[..6]); // channel 1 = channel 0
        values.extend(alloc::vec![0.25; 6]);
        let x = FeatureMap::from_values(3, 2, 3, values).unwrap();
        let (_, cache) = chn.forward(&params, &x).unwrap();
        let row0 = &cache.affinity[0..3];
        let row1 = &cache.affinity[3..6];
        for (a, b) in row0.iter().zip(row1) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_channel_attention_scales_by_one_plus_gamma() {
        let (chn, layout) = channel(1);
        let mut params = alloc::vec![0.0; layout.total];
        params[chn.gamma.offset] = 0.3;
        let x = FeatureMap::from_values(1, 2, 2, alloc::vec![0.1, -0.4, 0.2, 0.9]).unwrap();
        let (out, cache) = chn.forward(&params, &x).unwrap();
        assert_eq!(cache.affinity, alloc::vec![1.0]);
        for (o, v) in out.values().iter().zip(x.values()) {
            assert!((o - 1.3 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let (sp, layout) = spatial(1, 1);
        let params = random_params(&layout, 0, 0.1);
        let x = FeatureMap::from_values(1, 1, 2, alloc::vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(sp.forward(&params, &x), Err(Error::NonFinite(_))));
        let (chn, layout) = channel(1);
        let params = random_params(&layout, 0, 0.1);
        assert!(matches!(chn.forward(&params, &x), Err(Error::NonFinite(_))));
    }

    // Gradient checks: scalar loss = sum of squares of the output map.
    fn sq_loss_grad(out: &FeatureMap) -> Vec<f64> {
        out.values().iter().map(|&v| 2.0 * v).collect()
    }

    #[test]
    fn spatial_gradients_match_finite_differences() {
        let (sp, layout) = spatial(2, 2);
        let params = random_params(&layout, 13, 0.6);
        let x = random_map(2, 2, 3, 17);
        let loss = |p: &[f64], xm: &FeatureMap| -> f64 {
            let (out, _) = sp.forward(p, xm).unwrap();
            out.values().iter().map(|v| v * v).sum()
        };
        let (out, cache) = sp.forward(&params, &x).unwrap();
        let dout = sq_loss_grad(&out);
        let mut grad = alloc::vec![0.0; layout.total];
        let mut dx = alloc::vec![0.0; x.values().len()];
        sp.backward(&params, &cache, &dout, &mut grad, &mut dx);
        for i in 0..layout.total {
            let h = 1e-6;
            let mut p = params.clone();
            p[i] += h;
            let up = loss(&p, &x);
            p[i] = params[i] - h;
            let down = loss(&p, &x);
            let fd = (up - down) / (2.0 * h);
            assert!((grad[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-2), "param {i}");
        }
        for i in 0..x.values().len() {
            let h = 1e-6;
            let mut xv = x.values().to_vec();
            xv[i] += h;
            let up = loss(&params, &FeatureMap::from_values(2, 2, 3, xv.clone()).unwrap());
            xv[i] = x.values()[i] - h;
            let down = loss(&params, &FeatureMap::from_values(2, 2, 3, xv).unwrap());
            let fd = (up - down) / (2.0 * h);
            assert!((dx[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-2), "input {i}");
        }
    }

    #[test]
    fn channel_gradients_match_finite_differences() {
        let (chn, layout) = channel(3);
        let mut params = random_params(&layout, 23, 0.5);
        params[chn.gamma.offset] = 0.4;
        let x = random_map(3, 2, 2, 29);
        let loss = |p: &[f64], xm: &FeatureMap| -> f64 {
            let (out, _) = chn.forward(p, xm).unwrap();
            out.values().iter().map(|v| v * v).sum()
        };
        let (out, cache) = chn.forward(&params, &x).unwrap();
        let dout = sq_loss_grad(&out);
        let mut grad = alloc::vec![0.0; layout.total];
        let mut dx = alloc::vec![0.0; x.values().len()];
        chn.backward(&params, &cache, &dout, &mut grad, &mut dx);
        for i in 0..layout.total {
            let h = 1e-6;
            let mut p = params.clone();
            p[i] += h;
            let up = loss(&p, &x);
            p[i] = params[i] - h;
            let down = loss(&p, &x);
            let fd = (up - down) / (2.0 * h);
            assert!((grad[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-2), "param {i}");
        }
        // Input gradient includes the affinity's quadratic dependence on x.
        for i in 0..x.values().len() {
            let h = 1e-6;
            let mut xv = x.values().to_vec();
            xv[i] += h;
            let up = loss(&params, &FeatureMap::from_values(3, 2, 2, xv.clone()).unwrap());
            xv[i] = x.values()[i] - h;
            let down = loss(&params, &FeatureMap::from_values(3, 2, 2, xv).unwrap());
            let fd = (up - down) / (2.0 * h);
            assert!((dx[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-2), "input {i}: {} vs {fd}", dx[i]);
        }
    }
}
