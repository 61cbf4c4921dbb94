//! Frame-audio correspondence field.
//!
//! Frames are mean-pooled into one vector each and compared with every audio
//! token by cosine similarity. A binary neighbourhood mask keeps only pairs
//! whose native buckets are adjacent, and the masked field plus 2D prefix sums
//! of the field and the mask are kept for O(1) block queries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::HyperParams;
use crate::stream::{check_pair, AudioStream, VideoStream};
use crate::tensor::mean_pool;

/// Norms at or below this are treated as zero vectors.
pub const COSINE_EPS: f64 = 1e-12;

/// Cosine similarity, 0 when either vector is (near) zero, clamped to [-1, 1].
///
/// Panics on length mismatch; see [`try_cosine`].
pub fn cosine<T, U>(u: &[T], v: &[U]) -> f64
where
    T: Copy + Into<f64>,
    U: Copy + Into<f64>,
{
    assert_eq!(u.len(), v.len(), "cosine of vectors with different lengths");
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b): (f64, f64) = (a.into(), b.into());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    if nu <= COSINE_EPS || nv <= COSINE_EPS {
        return 0.0;
    }
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

pub fn try_cosine<T, U>(u: &[T], v: &[U]) -> Result<f64>
where
    T: Copy + Into<f64>,
    U: Copy + Into<f64>,
{
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    Ok(cosine(u, v))
}

/// Mean patch vector of every frame.
pub fn frame_embeddings(video: &VideoStream) -> Vec<Vec<f64>> {
    (0..video.num_frames())
        .into_par_iter()
        .map(|f| mean_pool(video.dim(), video.frame_tokens(f)))
        .collect()
}

/// Row-major `F x N` cosine matrix between frame embeddings and audio tokens.
pub fn similarity_matrix(frames: &[Vec<f64>], audio: &AudioStream) -> Result<Vec<f64>> {
    if let Some(f) = frames.iter().find(|f| f.len() != audio.dim()) {
        return Err(Error::DimensionMismatch {
            expected: audio.dim(),
            found: f.len(),
        });
    }
    let n = audio.num_tokens();
    let rows: Vec<Vec<f64>> = frames
        .par_iter()
        .map(|frame| (0..n).map(|t| cosine(frame, audio.token(t))).collect())
        .collect();
    Ok(rows.concat())
}

/// Audio buckets visible from video bucket `k` out of `num_buckets`.
///
/// Interior buckets see themselves and both neighbours. At the two ends only
/// the bucket itself is kept, or, with `one_sided`, the bucket and its single
/// inner neighbour.
pub fn neighborhood(
    k: usize,
    num_buckets: usize,
    one_sided: bool,
) -> std::ops::RangeInclusive<usize> {
    let last = num_buckets.saturating_sub(1);
    if k == 0 || k == last {
        if !one_sided || num_buckets == 1 {
            return k..=k;
        }
        return if k == 0 { 0..=1 } else { last - 1..=last };
    }
    k - 1..=k + 1
}

/// Row-major `F x N` binary mask.
pub fn neighborhood_mask(
    video: &VideoStream,
    audio: &AudioStream,
    one_sided: bool,
) -> Result<Vec<bool>> {
    let k = video.num_buckets();
    if k != audio.num_buckets() {
        return Err(Error::BucketCountMismatch {
            video: k,
            audio: audio.num_buckets(),
        });
    }
    let mut mask = Vec::with_capacity(video.num_frames() * audio.num_tokens());
    for &fb in video.frame_bucket() {
        let nb = neighborhood(fb, k, one_sided);
        mask.extend(audio.token_bucket().iter().map(|ab| nb.contains(ab)));
    }
    Ok(mask)
}

const FIXED_ONE: f64 = (1u64 << 52) as f64;

#[inline]
fn to_fixed(x: f64) -> i128 {
    (x * FIXED_ONE).round() as i128
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceField {
    frames: usize,
    tokens: usize,
    sim: Vec<f64>,
    mask: Vec<bool>,
    masked: Vec<f64>,
    /// `(F+1) x (N+1)` inclusive-exclusive prefix sums of the masked field in
    /// fixed point (`FIXED_ONE` per unit), so block sums are exact and ties
    /// between equal blocks stay ties.
    prefix_masked: Vec<i128>,
    /// Same for the mask, in exact integer arithmetic.
    prefix_mask: Vec<u64>,
}

impl CorrespondenceField {
    /// Assembles a field from a similarity matrix and mask of shape `frames x tokens`.
    pub fn from_parts(
        frames: usize,
        tokens: usize,
        sim: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if sim.len() != frames * tokens || mask.len() != frames * tokens {
            return Err(Error::input(
                "field",
                format!(
                    "expected {} entries, got sim {} / mask {}",
                    frames * tokens,
                    sim.len(),
                    mask.len()
                ),
            ));
        }
        if let Some(s) = sim.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(Error::input("sim", format!("value {s} outside [-1, 1]")));
        }
        let masked: Vec<f64> = sim
            .iter()
            .zip(&mask)
            .map(|(&s, &m)| if m { s } else { 0.0 })
            .collect();
        let w = tokens + 1;
        let mut prefix_masked = vec![0i128; (frames + 1) * w];
        let mut prefix_mask = vec![0u64; (frames + 1) * w];
        for f in 0..frames {
            let mut row_s = 0i128;
            let mut row_m = 0u64;
            for t in 0..tokens {
                row_s += to_fixed(masked[f * tokens + t]);
                row_m += u64::from(mask[f * tokens + t]);
                prefix_masked[(f + 1) * w + t + 1] = prefix_masked[f * w + t + 1] + row_s;
                prefix_mask[(f + 1) * w + t + 1] = prefix_mask[f * w + t + 1] + row_m;
            }
        }
        Ok(Self {
            frames,
            tokens,
            sim,
            mask,
            masked,
            prefix_masked,
            prefix_mask,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn sim(&self, f: usize, t: usize) -> f64 {
        self.sim[f * self.tokens + t]
    }

    pub fn mask(&self, f: usize, t: usize) -> bool {
        self.mask[f * self.tokens + t]
    }

    pub fn masked(&self, f: usize, t: usize) -> f64 {
        self.masked[f * self.tokens + t]
    }

    pub fn sim_matrix(&self) -> &[f64] {
        &self.sim
    }

    pub fn mask_matrix(&self) -> &[bool] {
        &self.mask
    }

    pub fn masked_matrix(&self) -> &[f64] {
        &self.masked
    }

    fn check_block(&self, i: usize, u: usize, j: usize, q: usize) -> Result<()> {
        if i > u || u > self.frames || j > q || q > self.tokens {
            return Err(Error::IndexOutOfRange(format!(
                "block frames [{i}, {u}) tokens [{j}, {q}) in a {}x{} field",
                self.frames, self.tokens
            )));
        }
        Ok(())
    }

    /// Sum of the masked field over frames `[i, u)` and tokens `[j, q)`.
    pub fn block_sum(&self, i: usize, u: usize, j: usize, q: usize) -> Result<f64> {
        self.check_block(i, u, j, q)?;
        Ok(self.block_sum_unchecked(i, u, j, q))
    }

    /// Number of valid pairs over frames `[i, u)` and tokens `[j, q)`.
    pub fn block_count(&self, i: usize, u: usize, j: usize, q: usize) -> Result<u64> {
        self.check_block(i, u, j, q)?;
        Ok(self.block_count_unchecked(i, u, j, q))
    }

    #[inline]
    pub(crate) fn block_sum_unchecked(&self, i: usize, u: usize, j: usize, q: usize) -> f64 {
        let w = self.tokens + 1;
        let p = &self.prefix_masked;
        (p[u * w + q] - p[i * w + q] - p[u * w + j] + p[i * w + j]) as f64 / FIXED_ONE
    }

    #[inline]
    pub(crate) fn block_count_unchecked(&self, i: usize, u: usize, j: usize, q: usize) -> u64 {
        let w = self.tokens + 1;
        let p = &self.prefix_mask;
        p[u * w + q] + p[i * w + j] - p[i * w + q] - p[u * w + j]
    }

    /// Writes `sim`, `mask` or `masked` as CSV: one row per frame, one column
    /// per audio token, six decimals.
    pub fn write_csv(&self, which: FieldMatrix, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv(which))?;
        Ok(())
    }

    pub fn to_csv(&self, which: FieldMatrix) -> String {
        let mut out = String::new();
        for f in 0..self.frames {
            for t in 0..self.tokens {
                if t > 0 {
                    out.push(',');
                }
                let v = match which {
                    FieldMatrix::Sim => self.sim(f, t),
                    FieldMatrix::Mask => f64::from(u8::from(self.mask(f, t))),
                    FieldMatrix::Masked => self.masked(f, t),
                };
                let _ = write!(out, "{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldMatrix {
    Sim,
    Mask,
    Masked,
}

pub fn build_field(
    video: &VideoStream,
    audio: &AudioStream,
    params: &HyperParams,
) -> Result<CorrespondenceField> {
    check_pair(video, audio)?;
    let frames = frame_embeddings(video);
    let sim = similarity_matrix(&frames, audio)?;
    let mask = neighborhood_mask(video, audio, params.one_sided_boundary)?;
    CorrespondenceField::from_parts(video.num_frames(), audio.num_tokens(), sim, mask)
}
