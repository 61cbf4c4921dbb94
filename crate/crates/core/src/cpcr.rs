//! Correspondence-preserving chunk refinement.
//!
//! A refined chunk pairs a contiguous frame interval with a contiguous audio
//! interval. Its score is the mean masked similarity over the valid pairs of
//! the block. The joint segmentation maximises the sum of chunk scores minus a
//! constant penalty per chunk, subject to monotone, gap-free coverage of both
//! axes and per-chunk length bounds. The banded solver additionally discards
//! DP states that stray too far from the diagonal `q = u * N / F`.
//!
//! Ties between equal objectives go to the segmentation with fewer chunks,
//! then to the lexicographically smallest sequence of chunk end points
//! `(frame_end, token_end)`.

use std::cmp::Ordering;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correspondence::CorrespondenceField;
use crate::error::{Error, Result};
use crate::params::HyperParams;
use crate::stream::{AudioStream, VideoStream};

pub const BRUTE_FORCE_MAX_FRAMES: usize = 12;
pub const BRUTE_FORCE_MAX_TOKENS: usize = 40;

/// One refined chunk. Intervals are 1-based and inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub f_lo: usize,
    pub f_hi: usize,
    pub t_lo: usize,
    pub t_hi: usize,
}

impl Chunk {
    /// Builds a chunk from 0-based half-open prefix boundaries.
    pub fn from_bounds(i: usize, u: usize, j: usize, q: usize) -> Self {
        Self {
            f_lo: i + 1,
            f_hi: u,
            t_lo: j + 1,
            t_hi: q,
        }
    }

    /// 0-based frame range.
    pub fn frames(&self) -> Range<usize> {
        self.f_lo - 1..self.f_hi
    }

    /// 0-based audio token range.
    pub fn tokens(&self) -> Range<usize> {
        self.t_lo - 1..self.t_hi
    }

    pub fn num_frames(&self) -> usize {
        self.f_hi + 1 - self.f_lo
    }

    pub fn num_tokens(&self) -> usize {
        self.t_hi + 1 - self.t_lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedChunking {
    pub chunks: Vec<Chunk>,
    pub score: f64,
}

impl RefinedChunking {
    /// Chunk end points `(frame_end, token_end)`, in order.
    pub fn boundaries(&self) -> Vec<(usize, usize)> {
        self.chunks.iter().map(|c| (c.f_hi, c.t_hi)).collect()
    }
}

/// Diagonal corridor `|q - u * N / F| <= half_width` of admissible DP states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    slope: f64,
    pub half_width: f64,
}

impl Band {
    pub fn new(frames: usize, tokens: usize, half_width: f64) -> Self {
        let slope = if frames == 0 {
            0.0
        } else {
            tokens as f64 / frames as f64
        };
        Self { slope, half_width }
    }

    /// Half-width `max(W, B * (N / F) * sv_max)`.
    pub fn from_params(frames: usize, tokens: usize, params: &HyperParams) -> Self {
        let slope = if frames == 0 {
            0.0
        } else {
            tokens as f64 / frames as f64
        };
        let half_width =
            (params.dp_min_window as f64).max(params.dp_band_ratio * slope * params.sv_max as f64);
        Self { slope, half_width }
    }

    pub fn admits(&self, u: usize, q: usize) -> bool {
        (q as f64 - u as f64 * self.slope).abs() <= self.half_width
    }

    /// True when every chunk end point of the chunking is admissible.
    pub fn contains(&self, chunking: &RefinedChunking) -> bool {
        chunking
            .boundaries()
            .iter()
            .all(|&(u, q)| self.admits(u, q))
    }
}

/// Mean masked similarity of frames `[i, u)` against tokens `[j, q)`;
/// `-inf` when the block holds no valid pair.
pub fn block_score(
    field: &CorrespondenceField,
    i: usize,
    u: usize,
    j: usize,
    q: usize,
) -> Result<f64> {
    if !(i < u && u <= field.frames() && j < q && q <= field.tokens()) {
        return Err(Error::IndexOutOfRange(format!(
            "block frames ({i}, {u}] tokens ({j}, {q}] in a {}x{} field",
            field.frames(),
            field.tokens()
        )));
    }
    Ok(block_score_unchecked(field, i, u, j, q))
}

#[inline]
fn block_score_unchecked(
    field: &CorrespondenceField,
    i: usize,
    u: usize,
    j: usize,
    q: usize,
) -> f64 {
    let count = field.block_count_unchecked(i, u, j, q);
    if count == 0 {
        return f64::NEG_INFINITY;
    }
    field.block_sum_unchecked(i, u, j, q) / count as f64
}

/// Adds one chunk to a running objective. Every scorer goes through this so
/// that equal segmentations produce bit-identical totals.
#[inline]
fn extend(total: f64, phi: f64, lambda_c: f64) -> f64 {
    total + phi - lambda_c
}

/// Whether some chunk count `m` fits both axes inside the length bounds.
pub fn is_feasible(frames: usize, tokens: usize, params: &HyperParams) -> bool {
    let (sv_min, sv_max, sa_min, sa_max) =
        (params.sv_min, params.sv_max, params.sa_min, params.sa_max);
    if frames == 0 || tokens == 0 {
        return false;
    }
    let lo = frames.div_ceil(sv_max).max(tokens.div_ceil(sa_max)).max(1);
    let hi = (frames / sv_min).min(tokens / sa_min);
    lo <= hi
}

fn infeasible(field: &CorrespondenceField, params: &HyperParams) -> Error {
    Error::ChunkingInfeasible {
        frames: field.frames(),
        tokens: field.tokens(),
        frame_bounds: (params.sv_min, params.sv_max),
        audio_bounds: (params.sa_min, params.sa_max),
    }
}

/// Filled DP table: best objective, chunk count and predecessor per state.
#[derive(Debug, Clone)]
pub struct DpTable {
    frames: usize,
    tokens: usize,
    best: Vec<f64>,
    count: Vec<u32>,
    back: Vec<Option<(u32, u32)>>,
    band: Option<Band>,
}

impl DpTable {
    fn idx(&self, u: usize, q: usize) -> usize {
        u * (self.tokens + 1) + q
    }

    /// Best objective for the first `u` frames and `q` tokens, `-inf` when unreachable.
    pub fn best(&self, u: usize, q: usize) -> f64 {
        self.best[self.idx(u, q)]
    }

    pub fn predecessor(&self, u: usize, q: usize) -> Option<(usize, usize)> {
        self.back[self.idx(u, q)].map(|(i, j)| (i as usize, j as usize))
    }

    pub fn is_reachable(&self, u: usize, q: usize) -> bool {
        self.best(u, q) > f64::NEG_INFINITY
    }

    pub fn band(&self) -> Option<Band> {
        self.band
    }

    /// Lexicographic order of the paths ending at `a` and `b`, which must hold
    /// the same number of chunks. Walks both back to their common ancestor;
    /// the end points just after it decide.
    fn path_cmp(&self, mut a: (usize, usize), mut b: (usize, usize)) -> Ordering {
        let mut order = Ordering::Equal;
        while a != b {
            order = a.cmp(&b);
            a = self
                .predecessor(a.0, a.1)
                .expect("reachable state has a predecessor");
            b = self
                .predecessor(b.0, b.1)
                .expect("reachable state has a predecessor");
        }
        order
    }

    /// End points from the first chunk up to and including `(u, q)`.
    fn path(&self, mut u: usize, mut q: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        while (u, q) != (0, 0) {
            out.push((u, q));
            let (i, j) = self
                .predecessor(u, q)
                .expect("reachable state has a predecessor");
            u = i;
            q = j;
        }
        out.reverse();
        out
    }
}

/// Fills the DP table. States outside `band` are never assigned.
pub fn fill_table(
    field: &CorrespondenceField,
    params: &HyperParams,
    band: Option<Band>,
) -> DpTable {
    let (frames, tokens) = (field.frames(), field.tokens());
    let size = (frames + 1) * (tokens + 1);
    let mut table = DpTable {
        frames,
        tokens,
        best: vec![f64::NEG_INFINITY; size],
        count: vec![0; size],
        back: vec![None; size],
        band,
    };
    table.best[0] = 0.0;
    let (sv_min, sv_max, sa_min, sa_max) =
        (params.sv_min, params.sv_max, params.sa_min, params.sa_max);
    let lambda = params.lambda_c;

    for u in sv_min..=frames {
        let i_lo = u.saturating_sub(sv_max);
        let i_hi = u - sv_min;
        for q in sa_min..=tokens {
            if let Some(b) = band {
                if !b.admits(u, q) {
                    continue;
                }
            }
            let j_lo = q.saturating_sub(sa_max);
            let j_hi = q - sa_min;
            let here = table.idx(u, q);
            let mut best = f64::NEG_INFINITY;
            let mut best_count = 0u32;
            let mut best_prev: Option<(u32, u32)> = None;
            for i in i_lo..=i_hi {
                for j in j_lo..=j_hi {
                    let prev = table.idx(i, j);
                    let base = table.best[prev];
                    if base == f64::NEG_INFINITY {
                        continue;
                    }
                    let phi = block_score_unchecked(field, i, u, j, q);
                    if phi == f64::NEG_INFINITY {
                        continue;
                    }
                    let cand = extend(base, phi, lambda);
                    let cand_count = table.count[prev] + 1;
                    let better = match best_prev {
                        None => true,
                        Some((pi, pj)) => match cand.partial_cmp(&best) {
                            Some(Ordering::Greater) => true,
                            Some(Ordering::Less) | None => false,
                            Some(Ordering::Equal) => match cand_count.cmp(&best_count) {
                                Ordering::Less => true,
                                Ordering::Greater => false,
                                Ordering::Equal => {
                                    table.path_cmp((i, j), (pi as usize, pj as usize))
                                        == Ordering::Less
                                }
                            },
                        },
                    };
                    if better {
                        best = cand;
                        best_count = cand_count;
                        best_prev = Some((i as u32, j as u32));
                    }
                }
            }
            table.best[here] = best;
            table.count[here] = best_count;
            table.back[here] = best_prev;
        }
    }
    table
}

fn backtrack(table: &DpTable) -> RefinedChunking {
    let ends = table.path(table.frames, table.tokens);
    let mut chunks = Vec::with_capacity(ends.len());
    let (mut i, mut j) = (0, 0);
    for (u, q) in ends {
        chunks.push(Chunk::from_bounds(i, u, j, q));
        i = u;
        j = q;
    }
    RefinedChunking {
        chunks,
        score: table.best(table.frames, table.tokens),
    }
}

/// Optimal joint segmentation; `banded` applies the diagonal corridor derived
/// from the band ratio and minimum window.
pub fn refine_chunks_dp(
    field: &CorrespondenceField,
    params: &HyperParams,
    banded: bool,
) -> Result<RefinedChunking> {
    let band = banded.then(|| Band::from_params(field.frames(), field.tokens(), params));
    refine_chunks_dp_with_band(field, params, band)
}

/// As [`refine_chunks_dp`] with an explicit corridor (`None` = unbanded).
pub fn refine_chunks_dp_with_band(
    field: &CorrespondenceField,
    params: &HyperParams,
    band: Option<Band>,
) -> Result<RefinedChunking> {
    if !is_feasible(field.frames(), field.tokens(), params) {
        return Err(infeasible(field, params));
    }
    let table = fill_table(field, params, band);
    if table.is_reachable(field.frames(), field.tokens()) {
        return Ok(backtrack(&table));
    }
    match band {
        Some(b) => {
            let open = fill_table(field, params, None);
            if open.is_reachable(field.frames(), field.tokens()) {
                Err(Error::BandInfeasible {
                    band_width: b.half_width,
                })
            } else {
                Err(Error::NoEvidence)
            }
        }
        None => Err(Error::NoEvidence),
    }
}

/// Callback over the chunk end points of one segmentation.
type Visit<'a> = dyn FnMut(&[(usize, usize)]) + 'a;

/// Visits every joint segmentation satisfying the length bounds, in
/// lexicographic order of chunk end points. The callback receives the end
/// points of each complete segmentation.
fn enumerate(
    frames: usize,
    tokens: usize,
    params: &HyperParams,
    band: Option<Band>,
    visit: &mut Visit<'_>,
) {
    fn go(
        at: (usize, usize),
        target: (usize, usize),
        params: &HyperParams,
        band: Option<Band>,
        stack: &mut Vec<(usize, usize)>,
        visit: &mut Visit<'_>,
    ) {
        if at == target {
            visit(stack);
            return;
        }
        let (i, j) = at;
        for u in i + params.sv_min..=(i + params.sv_max).min(target.0) {
            for q in j + params.sa_min..=(j + params.sa_max).min(target.1) {
                if band.is_some_and(|b| !b.admits(u, q)) {
                    continue;
                }
                stack.push((u, q));
                go((u, q), target, params, band, stack, visit);
                stack.pop();
            }
        }
    }
    if frames == 0 || tokens == 0 {
        return;
    }
    go(
        (0, 0),
        (frames, tokens),
        params,
        band,
        &mut Vec::new(),
        visit,
    );
}

/// Number of joint segmentations of `frames x tokens` within the length bounds.
pub fn count_segmentations(frames: usize, tokens: usize, params: &HyperParams) -> usize {
    let mut n = 0;
    enumerate(frames, tokens, params, None, &mut |_| n += 1);
    n
}

fn chunks_from_ends(ends: &[(usize, usize)]) -> Vec<Chunk> {
    let mut out = Vec::with_capacity(ends.len());
    let (mut i, mut j) = (0, 0);
    for &(u, q) in ends {
        out.push(Chunk::from_bounds(i, u, j, q));
        i = u;
        j = q;
    }
    out
}

fn bruteforce(
    field: &CorrespondenceField,
    params: &HyperParams,
    band: Option<Band>,
) -> Result<RefinedChunking> {
    let (frames, tokens) = (field.frames(), field.tokens());
    if frames > BRUTE_FORCE_MAX_FRAMES || tokens > BRUTE_FORCE_MAX_TOKENS {
        return Err(Error::SizeGuard {
            frames,
            tokens,
            max_frames: BRUTE_FORCE_MAX_FRAMES,
            max_tokens: BRUTE_FORCE_MAX_TOKENS,
        });
    }
    if !is_feasible(frames, tokens, params) {
        return Err(infeasible(field, params));
    }
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    enumerate(frames, tokens, params, band, &mut |ends| {
        let mut total = 0.0;
        let (mut i, mut j) = (0, 0);
        for &(u, q) in ends {
            let phi = block_score_unchecked(field, i, u, j, q);
            if phi == f64::NEG_INFINITY {
                return;
            }
            total = extend(total, phi, params.lambda_c);
            i = u;
            j = q;
        }
        // Enumeration runs in lexicographic order, so among equal objectives
        // and chunk counts the first one seen is kept.
        let improves = match &best {
            None => true,
            Some((s, e)) => total > *s || (total == *s && ends.len() < e.len()),
        };
        if improves {
            best = Some((total, ends.to_vec()));
        }
    });
    match best {
        Some((score, ends)) => Ok(RefinedChunking {
            chunks: chunks_from_ends(&ends),
            score,
        }),
        None if band.is_some() => Err(Error::BandInfeasible {
            band_width: band.map_or(0.0, |b| b.half_width),
        }),
        None => Err(Error::NoEvidence),
    }
}

/// Exhaustive oracle for the segmentation objective.
pub fn refine_chunks_bruteforce(
    field: &CorrespondenceField,
    params: &HyperParams,
) -> Result<RefinedChunking> {
    bruteforce(field, params, None)
}

/// Exhaustive oracle restricted to segmentations whose end points all lie
/// inside `band`.
pub fn refine_chunks_bruteforce_in_band(
    field: &CorrespondenceField,
    params: &HyperParams,
    band: Band,
) -> Result<RefinedChunking> {
    bruteforce(field, params, Some(band))
}

/// Checks monotone, gap-free coverage of `[1, frames] x [1, tokens]`.
pub fn check_partition(chunking: &RefinedChunking, frames: usize, tokens: usize) -> Result<()> {
    if chunking.chunks.is_empty() {
        return Err(Error::Structural("no chunks".into()));
    }
    let (mut f_next, mut t_next) = (1, 1);
    for (g, c) in chunking.chunks.iter().enumerate() {
        if c.f_lo != f_next {
            return Err(Error::Structural(format!(
                "chunk {g} starts at frame {} but frame coverage continues at {f_next}",
                c.f_lo
            )));
        }
        if c.t_lo != t_next {
            return Err(Error::Structural(format!(
                "chunk {g} starts at audio token {} but audio coverage continues at {t_next}",
                c.t_lo
            )));
        }
        if c.f_hi < c.f_lo || c.t_hi < c.t_lo {
            return Err(Error::Structural(format!(
                "chunk {g} is empty in one modality"
            )));
        }
        f_next = c.f_hi + 1;
        t_next = c.t_hi + 1;
    }
    if f_next != frames + 1 || t_next != tokens + 1 {
        return Err(Error::Structural(format!(
            "coverage ends at frame {} / token {}, expected {frames} / {tokens}",
            f_next - 1,
            t_next - 1
        )));
    }
    Ok(())
}

/// Partition check plus the per-chunk length bounds.
pub fn check_chunking(
    chunking: &RefinedChunking,
    frames: usize,
    tokens: usize,
    params: &HyperParams,
) -> Result<()> {
    check_partition(chunking, frames, tokens)?;
    for (g, c) in chunking.chunks.iter().enumerate() {
        if !(params.sv_min..=params.sv_max).contains(&c.num_frames()) {
            return Err(Error::Structural(format!(
                "chunk {g} spans {} frames, outside [{}, {}]",
                c.num_frames(),
                params.sv_min,
                params.sv_max
            )));
        }
        if !(params.sa_min..=params.sa_max).contains(&c.num_tokens()) {
            return Err(Error::Structural(format!(
                "chunk {g} spans {} audio tokens, outside [{}, {}]",
                c.num_tokens(),
                params.sa_min,
                params.sa_max
            )));
        }
    }
    Ok(())
}

/// Objective of an arbitrary partition: sum of block scores minus
/// `lambda_c` per chunk, `-inf` if any chunk lacks valid pairs.
pub fn segmentation_score(
    chunking: &RefinedChunking,
    field: &CorrespondenceField,
    lambda_c: f64,
) -> Result<f64> {
    check_partition(chunking, field.frames(), field.tokens())?;
    let mut total = 0.0;
    for c in &chunking.chunks {
        let phi = block_score_unchecked(field, c.f_lo - 1, c.f_hi, c.t_lo - 1, c.t_hi);
        if phi == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        total = extend(total, phi, lambda_c);
    }
    Ok(total)
}

/// The native bucketing viewed as a chunking (bucket `k` of both modalities
/// forms chunk `k`), scored under `lambda_c`.
pub fn native_chunking(
    video: &VideoStream,
    audio: &AudioStream,
    field: &CorrespondenceField,
    lambda_c: f64,
) -> Result<RefinedChunking> {
    let spans = |buckets: &[usize]| {
        let mut ends = Vec::new();
        for (pos, w) in buckets.windows(2).enumerate() {
            if w[0] != w[1] {
                ends.push(pos + 1);
            }
        }
        ends.push(buckets.len());
        ends
    };
    let fe = spans(video.frame_bucket());
    let te = spans(audio.token_bucket());
    if fe.len() != te.len() || video.num_frames() == 0 || audio.num_tokens() == 0 {
        return Err(Error::BucketCountMismatch {
            video: video.num_buckets(),
            audio: audio.num_buckets(),
        });
    }
    let ends: Vec<(usize, usize)> = fe.into_iter().zip(te).collect();
    let mut chunking = RefinedChunking {
        chunks: chunks_from_ends(&ends),
        score: 0.0,
    };
    chunking.score = segmentation_score(&chunking, field, lambda_c)?;
    Ok(chunking)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkExport {
    pub f_lo: usize,
    pub f_hi: usize,
    pub t_lo: usize,
    pub t_hi: usize,
    pub phi: f64,
}

/// JSON view of a chunking with per-chunk block scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkingExport {
    pub chunks: Vec<ChunkExport>,
    pub score: f64,
    pub lambda_c: f64,
    pub banded: bool,
    pub band_width: Option<f64>,
}

impl ChunkingExport {
    pub fn new(
        chunking: &RefinedChunking,
        field: &CorrespondenceField,
        lambda_c: f64,
        band: Option<Band>,
    ) -> Self {
        let chunks = chunking
            .chunks
            .iter()
            .map(|c| ChunkExport {
                f_lo: c.f_lo,
                f_hi: c.f_hi,
                t_lo: c.t_lo,
                t_hi: c.t_hi,
                phi: block_score_unchecked(field, c.f_lo - 1, c.f_hi, c.t_lo - 1, c.t_hi),
            })
            .collect();
        Self {
            chunks,
            score: chunking.score,
            lambda_c,
            banded: band.is_some(),
            band_width: band.map(|b| b.half_width),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}
