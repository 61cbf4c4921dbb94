//! Anchor-based audio compression of one refined chunk.
//!
//! Audio tokens are cut into semantic intervals wherever adjacent tokens
//! stop resembling each other. A budget derived from the chunk's video
//! retention fixes how many tokens survive: the highest scoring ones plus a
//! few contextual anchors. Every other token is either folded into the
//! retained anchor it best matches, chosen by its similarity to the kept
//! video tokens, or dropped.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::correspondence::cosine;
use crate::error::{Error, Result};
use crate::params::HyperParams;
use crate::tensor::{to_f32, to_f64, EmbeddingMatrix};
use crate::tsst::VideoCompressionResult;

const ROUND_EPS: f64 = 1e-9;

pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5 + ROUND_EPS).floor().max(0.0) as usize
}

pub(crate) fn ceil_count(x: f64) -> usize {
    (x - ROUND_EPS).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Norm,
    External,
}

/// Per-token importance of one chunk's audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScores {
    values: Vec<f64>,
    source: ScoreSource,
}

impl ImportanceScores {
    pub fn new(values: Vec<f64>, source: ScoreSource) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::input(
                "scores",
                format!("score {i} is {} (need finite >= 0)", values[i]),
            ));
        }
        Ok(Self { values, source })
    }

    /// Default scorer: the l2 norm of each token.
    pub fn l2_norm(tokens: &EmbeddingMatrix) -> Self {
        let values = tokens
            .iter_rows()
            .map(|r| r.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt())
            .collect();
        Self {
            values,
            source: ScoreSource::Norm,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> ScoreSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AudioBudget {
    /// Merging ratio before clamping.
    pub raw: f64,
    pub m_a: f64,
    pub r_a: f64,
}

/// Audio merging ratio from the chunk's video retention `r_v`:
/// `rho_a - beta * (r_v - (1 - rho_v))`, clamped to `[a_min, a_max]`.
pub fn audio_budget(params: &HyperParams, r_v: f64) -> AudioBudget {
    let raw = params.rho_a - params.beta * (r_v - (1.0 - params.rho_v));
    let m_a = params.a_max.min(params.a_min.max(raw));
    AudioBudget {
        raw,
        m_a,
        r_a: 1.0 - m_a,
    }
}

/// Token 0 plus every token whose cosine to its predecessor is below `theta`.
pub fn detect_anchors(tokens: &EmbeddingMatrix, theta: f64) -> Vec<usize> {
    if tokens.rows() == 0 {
        return Vec::new();
    }
    let mut out = vec![0];
    for t in 1..tokens.rows() {
        if cosine(tokens.row(t - 1), tokens.row(t)) < theta {
            out.push(t);
        }
    }
    out
}

/// Half-open intervals opened by each anchor.
pub fn anchor_intervals(anchors: &[usize], len: usize) -> Vec<(usize, usize)> {
    anchors
        .iter()
        .enumerate()
        .map(|(i, &a)| (a, anchors.get(i + 1).copied().unwrap_or(len)))
        .collect()
}

/// Interval index of every token.
fn interval_of(anchors: &[usize], len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for (i, (lo, hi)) in anchor_intervals(anchors, len).into_iter().enumerate() {
        out[lo..hi].fill(i);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub dominant: Vec<usize>,
    pub contextual: Vec<usize>,
    pub residual: Vec<usize>,
}

impl Selection {
    /// Dominant and contextual tokens, ascending.
    pub fn retained(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self
            .dominant
            .iter()
            .chain(&self.contextual)
            .copied()
            .collect();
        r.sort_unstable();
        r
    }
}

/// Splits a chunk into dominant, contextual-anchor and residual tokens.
///
/// `round((1 - m_a) * n)` tokens survive (at least one); `round(ratio * n)`
/// of them are anchors taken from intervals the dominant set misses first.
/// When too few anchors are left the remainder goes to the dominant set.
pub fn select_retained(
    scores: &[f64],
    anchors: &[usize],
    m_a: f64,
    contextual_ratio: f64,
) -> Selection {
    let n = scores.len();
    if n == 0 {
        return Selection {
            dominant: Vec::new(),
            contextual: Vec::new(),
            residual: Vec::new(),
        };
    }
    let target = round_half_up((1.0 - m_a) * n as f64).clamp(1, n);
    let c0 = round_half_up(contextual_ratio * n as f64).min(target);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut dominant: BTreeSet<usize> = order[..target - c0].iter().copied().collect();

    let intervals = interval_of(anchors, n);
    let covered: BTreeSet<usize> = dominant.iter().map(|&t| intervals[t]).collect();
    let mut candidates: Vec<usize> = anchors
        .iter()
        .copied()
        .filter(|a| !dominant.contains(a))
        .collect();
    candidates.sort_by_key(|&a| (covered.contains(&intervals[a]), a));
    let contextual: BTreeSet<usize> = candidates.into_iter().take(c0).collect();
    let shortfall = c0 - contextual.len();
    dominant.extend(
        order[target - c0..]
            .iter()
            .copied()
            .filter(|t| !contextual.contains(t))
            .take(shortfall),
    );
    let residual = (0..n)
        .filter(|t| !dominant.contains(t) && !contextual.contains(t))
        .collect();
    Selection {
        dominant: dominant.into_iter().collect(),
        contextual: contextual.into_iter().collect(),
        residual,
    }
}

/// Maps each residual to a member of `targets` (the retained anchors).
///
/// A residual goes to the most similar target in its own semantic interval;
/// cosine ties go to the temporally nearest, then the earlier one. A residual
/// whose interval holds no target goes to the nearest target in time.
pub fn assign_to_anchors(
    tokens: &EmbeddingMatrix,
    residuals: &[usize],
    targets: &[usize],
    anchors: &[usize],
) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    if targets.is_empty() {
        return out;
    }
    let intervals = interval_of(anchors, tokens.rows());
    for &t in residuals {
        let dist = |h: usize| h.abs_diff(t);
        let local: Vec<usize> = targets
            .iter()
            .copied()
            .filter(|&h| intervals[h] == intervals[t])
            .collect();
        let chosen = if local.is_empty() {
            *targets
                .iter()
                .min_by_key(|&&h| (dist(h), h))
                .expect("targets nonempty")
        } else {
            let mut best = local[0];
            let mut best_cos = cosine(tokens.row(t), tokens.row(best));
            for &h in &local[1..] {
                let c = cosine(tokens.row(t), tokens.row(h));
                if c > best_cos || (c == best_cos && (dist(h), h) < (dist(best), best)) {
                    best = h;
                    best_cos = c;
                }
            }
            best
        };
        out.insert(t, chosen);
    }
    out
}

/// Max cosine of every token to the retained video representatives, 0 when
/// there are none.
pub fn crossmodal_scores(tokens: &EmbeddingMatrix, video_reps: &EmbeddingMatrix) -> Vec<f64> {
    tokens
        .iter_rows()
        .map(|a| {
            video_reps
                .iter_rows()
                .map(|r| cosine(a, r))
                .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.max(c))))
                .unwrap_or(0.0)
        })
        .collect()
}

/// Merge quota of a group: `ceil(m_a * size)`.
pub fn merge_quota(m_a: f64, group_size: usize) -> usize {
    ceil_count(m_a * group_size as f64).min(group_size)
}

/// Chooses merge sets per target. Each target's residuals, in temporal order,
/// are cut into blocks of `g`; blocks are visited round-robin, each giving up
/// its best remaining scorer (ties to the earlier token), until the quota is
/// met. Returns the merge sets and the dropped residuals.
pub fn crossmodal_merge_candidates(
    assignment: &BTreeMap<usize, usize>,
    scores: &[f64],
    m_a: f64,
    g: usize,
) -> (BTreeMap<usize, Vec<usize>>, Vec<usize>) {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&t, &h) in assignment {
        groups.entry(h).or_default().push(t);
    }
    let g = g.max(1);
    let mut sets = BTreeMap::new();
    let mut dropped = Vec::new();
    for (h, members) in groups {
        let quota = merge_quota(m_a, members.len());
        let mut blocks: Vec<Vec<usize>> = members
            .chunks(g)
            .map(|b| {
                let mut b = b.to_vec();
                b.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
                b.reverse();
                b
            })
            .collect();
        let mut chosen = Vec::with_capacity(quota);
        while chosen.len() < quota {
            for b in blocks.iter_mut() {
                if chosen.len() == quota {
                    break;
                }
                if let Some(t) = b.pop() {
                    chosen.push(t);
                }
            }
        }
        dropped.extend(blocks.into_iter().flatten());
        chosen.sort_unstable();
        if !chosen.is_empty() {
            sets.insert(h, chosen);
        }
    }
    dropped.sort_unstable();
    (sets, dropped)
}

/// Normalized relevance weights of one merge set; uniform when every
/// relevance (negative scores count as 0) is zero.
pub fn merge_weights(members: &[usize], scores: &[f64]) -> Vec<f64> {
    let rel: Vec<f64> = members.iter().map(|&t| scores[t].max(0.0)).collect();
    let total: f64 = rel.iter().sum();
    if total > 0.0 {
        rel.iter().map(|r| r / total).collect()
    } else {
        vec![1.0 / members.len() as f64; members.len()]
    }
}

/// `(a_h + sum w_t a_t) / (1 + sum w_t)`.
pub fn merge_into_anchor(anchor: &[f32], members: &[&[f32]], weights: &[f64]) -> Vec<f64> {
    let mut acc = to_f64(anchor);
    let mut denom = 1.0;
    for (m, &w) in members.iter().zip(weights) {
        acc.iter_mut()
            .zip(m.iter())
            .for_each(|(a, &x)| *a += w * f64::from(x));
        denom += w;
    }
    acc.iter_mut().for_each(|a| *a /= denom);
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioCompressionResult {
    pub budget: AudioBudget,
    pub m_a: f64,
    /// Budget retention `1 - m_a`.
    pub r_a: f64,
    /// Retained tokens over chunk tokens.
    pub achieved_ratio: f64,
    /// Every semantic anchor of the chunk.
    pub semantic_anchors: Vec<usize>,
    pub intervals: Vec<(usize, usize)>,
    /// Retained anchors that residuals are assigned to.
    pub anchors: Vec<usize>,
    pub dominant: Vec<usize>,
    pub contextual: Vec<usize>,
    pub assignment: BTreeMap<usize, usize>,
    pub merge_sets: BTreeMap<usize, Vec<usize>>,
    pub merge_weights: BTreeMap<usize, f64>,
    pub dropped: Vec<usize>,
    pub crossmodal: Vec<f64>,
    /// Retained tokens ascending; row `i` of `merged_reps` belongs to `retained[i]`.
    pub retained: Vec<usize>,
    pub retained_mask: Vec<bool>,
    pub merged_reps: EmbeddingMatrix,
    pub notes: Vec<String>,
}

impl AudioCompressionResult {
    pub fn num_tokens(&self) -> usize {
        self.retained_mask.len()
    }

    /// Row of `merged_reps` each token lives on, `None` for dropped tokens.
    pub fn representative(&self) -> Vec<Option<usize>> {
        let row: BTreeMap<usize, usize> = self
            .retained
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, i))
            .collect();
        (0..self.num_tokens())
            .map(|t| {
                row.get(&t)
                    .or_else(|| {
                        self.merge_sets
                            .iter()
                            .find(|(_, m)| m.contains(&t))
                            .and_then(|(h, _)| row.get(h))
                    })
                    .copied()
            })
            .collect()
    }

    pub fn trace(&self) -> AudioTrace {
        AudioTrace {
            anchors: self.anchors.clone(),
            semantic_anchors: self.semantic_anchors.clone(),
            intervals: self.intervals.clone(),
            assignment: self.assignment.clone(),
            merge_sets: self.merge_sets.clone(),
            merge_weights: self.merge_weights.clone(),
            dropped: self.dropped.clone(),
            m_a: self.m_a,
            r_a: self.r_a,
            achieved_ratio: self.achieved_ratio,
        }
    }
}

/// JSON trace of one chunk's audio compression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioTrace {
    pub anchors: Vec<usize>,
    pub semantic_anchors: Vec<usize>,
    pub intervals: Vec<(usize, usize)>,
    pub assignment: BTreeMap<usize, usize>,
    pub merge_sets: BTreeMap<usize, Vec<usize>>,
    pub merge_weights: BTreeMap<usize, f64>,
    pub dropped: Vec<usize>,
    pub m_a: f64,
    pub r_a: f64,
    pub achieved_ratio: f64,
}

/// Full audio pass of one chunk, driven by the chunk's video result.
pub fn compress_audio_chunk(
    tokens: &EmbeddingMatrix,
    scores: &ImportanceScores,
    video: &VideoCompressionResult,
    params: &HyperParams,
) -> Result<AudioCompressionResult> {
    let n = tokens.rows();
    if n == 0 {
        return Err(Error::input("audio", "audio chunk has no tokens"));
    }
    if scores.len() != n {
        return Err(Error::input(
            "scores",
            format!("{} scores for {n} tokens", scores.len()),
        ));
    }
    if video.merged_reps.rows() > 0 && video.merged_reps.dim() != tokens.dim() {
        return Err(Error::DimensionMismatch {
            expected: video.merged_reps.dim(),
            found: tokens.dim(),
        });
    }
    let budget = audio_budget(params, video.r_v);
    let semantic_anchors = detect_anchors(tokens, params.theta_anchor);
    let intervals = anchor_intervals(&semantic_anchors, n);
    let sel = select_retained(
        scores.values(),
        &semantic_anchors,
        budget.m_a,
        params.contextual_ratio,
    );
    let retained = sel.retained();
    let mut notes = Vec::new();
    let anchor_set: BTreeSet<usize> = semantic_anchors.iter().copied().collect();
    let mut anchors: Vec<usize> = retained
        .iter()
        .copied()
        .filter(|t| anchor_set.contains(t))
        .collect();
    if anchors.is_empty() {
        anchors = retained.clone();
        notes.push("no semantic anchor retained; residuals assigned to retained tokens".into());
    }
    let assignment = assign_to_anchors(tokens, &sel.residual, &anchors, &semantic_anchors);
    let crossmodal = crossmodal_scores(tokens, &video.merged_reps);
    let (merge_sets, dropped) =
        crossmodal_merge_candidates(&assignment, &crossmodal, budget.m_a, params.group_size);

    let mut weights = BTreeMap::new();
    let mut reps: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (&h, members) in &merge_sets {
        let w = merge_weights(members, &crossmodal);
        let rows: Vec<&[f32]> = members.iter().map(|&t| tokens.row(t)).collect();
        reps.insert(h, merge_into_anchor(tokens.row(h), &rows, &w));
        weights.extend(members.iter().copied().zip(w));
    }
    let mut values = Vec::with_capacity(retained.len() * tokens.dim());
    for &t in &retained {
        match reps.get(&t) {
            Some(r) => values.extend(to_f32(r)),
            None => values.extend_from_slice(tokens.row(t)),
        }
    }
    let mut retained_mask = vec![false; n];
    retained.iter().for_each(|&t| retained_mask[t] = true);
    log::debug!(
        "audio chunk: {n} tokens, m_a {:.4}, {} retained, {} merged, {} dropped",
        budget.m_a,
        retained.len(),
        weights.len(),
        dropped.len()
    );
    Ok(AudioCompressionResult {
        budget,
        m_a: budget.m_a,
        r_a: budget.r_a,
        achieved_ratio: retained.len() as f64 / n as f64,
        semantic_anchors,
        intervals,
        anchors,
        dominant: sel.dominant,
        contextual: sel.contextual,
        assignment,
        merge_sets,
        merge_weights: weights,
        dropped,
        crossmodal,
        merged_reps: EmbeddingMatrix::new(retained.len(), tokens.dim(), values)?,
        retained,
        retained_mask,
        notes,
    })
}
