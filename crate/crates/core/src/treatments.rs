//! Seeded visual and textual perturbations used to build the
//! treatment-labeled corpus. All three functions are pure: the same inputs
//! and seed produce bit-identical outputs.

use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{Frame, Query, FRAME_CHANNELS};

/// Default blur kernel width.
pub const DEFAULT_BLUR_KERNEL: usize = 5;

/// Default number of words removed by the textual perturbation.
pub const DEFAULT_DROP_WORDS: usize = 2;

/// Salt-and-pepper noise: each pixel location is independently corrupted
/// with probability `density`; a corrupted location is set to 0 or 1 with
/// equal probability, jointly across all channels.
pub fn salt_pepper(frame: &Frame, density: f64, seed: u64) -> Result<Frame> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::DensityOutOfRange(density));
    }
    let (h, w) = (frame.height(), frame.width());
    let mut pixels = frame.pixels().to_vec();
    let mut rng = rng::seeded(seed);
    for y in 0..h {
        for x in 0..w {
            if rng.gen::<f64>() < density {
                let v = if rng.gen::<bool>() { 1.0 } else { 0.0 };
                for c in 0..FRAME_CHANNELS {
                    pixels[(c * h + y) * w + x] = v;
                }
            }
        }
    }
    Frame::new(h, w, pixels)
}

/// Per-channel box-mean blur with edge replication. `kernel_size` must be
/// odd; 1 is the identity.
pub fn blur(frame: &Frame, kernel_size: usize) -> Result<Frame> {
    if kernel_size == 0 || kernel_size % 2 == 0 {
        return Err(Error::KernelNotOdd(kernel_size));
    }
    let (h, w) = (frame.height(), frame.width());
    let r = (kernel_size / 2) as isize;
    let norm = (kernel_size * kernel_size) as f64;
    let mut pixels = Vec::with_capacity(FRAME_CHANNELS * h * w);
    for c in 0..FRAME_CHANNELS {
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        sum += frame.get(c, yy, xx);
                    }
                }
                // Rounding can push the mean a hair outside [0, 1].
                pixels.push((sum / norm).clamp(0.0, 1.0));
            }
        }
    }
    Frame::new(h, w, pixels)
}

/// Remove exactly `k` words at uniformly-random positions, preserving the
/// relative order of the survivors.
pub fn drop_words(query: &Query, k: usize, seed: u64) -> Result<Query> {
    if k > query.len() {
        return Err(Error::DropTooMany { requested: k, len: query.len() });
    }
    let mut rng = rng::seeded(seed);
    let dropped = rng::sample_indices(&mut rng, query.len(), k);
    let tokens: Vec<String> = query
        .tokens()
        .iter()
        .enumerate()
        .filter(|(i, _)| dropped.binary_search(i).is_err())
        .map(|(_, t)| t.clone())
        .collect();
    Query::new(tokens)
}
