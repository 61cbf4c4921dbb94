//! Tree-structured spatio-temporal compression of the video tokens of one
//! refined chunk.
//!
//! Every frame becomes a quadtree over its patch grid. A node is kept whole
//! when all of its children stay within `tau_s` cosine of it, otherwise the
//! search descends. A kept node of frame `t` is then folded into the survivor
//! of an overlapping kept node of frame `t - 1` within `tau_t`. Finally
//! the survivor count is pushed back inside `[v_min, v_max]` of the chunk's
//! token count when it falls outside.
//!
//! A survivor's representative is always the weighted mean of its own region
//! mean and the region means of the nodes folded into it, so it equals the
//! plain mean of every patch token it stands for.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::correspondence::cosine;
use crate::error::{Error, Result};
use crate::params::HyperParams;
use crate::stream::VideoStream;
use crate::tensor::{to_f32, EmbeddingMatrix};

/// Inclusive patch rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub row_lo: usize,
    pub row_hi: usize,
    pub col_lo: usize,
    pub col_hi: usize,
}

impl Rect {
    pub fn height(&self) -> usize {
        self.row_hi + 1 - self.row_lo
    }

    pub fn width(&self) -> usize {
        self.col_hi + 1 - self.col_lo
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn intersection_area(&self, other: &Rect) -> usize {
        let r0 = self.row_lo.max(other.row_lo);
        let r1 = self.row_hi.min(other.row_hi);
        let c0 = self.col_lo.max(other.col_lo);
        let c1 = self.col_hi.min(other.col_hi);
        if r0 > r1 || c0 > c1 {
            0
        } else {
            (r1 + 1 - r0) * (c1 + 1 - c0)
        }
    }

    /// Raster ordering key.
    fn raster(&self) -> (usize, usize) {
        (self.row_lo, self.col_lo)
    }

    fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_lo..=self.row_hi).contains(&row) && (self.col_lo..=self.col_hi).contains(&col)
    }

    /// Halves each extent (ceil for the first half); an extent of 1 stays whole.
    fn split(&self) -> Vec<Rect> {
        let halves = |lo: usize, hi: usize| {
            let n = hi + 1 - lo;
            if n == 1 {
                vec![(lo, hi)]
            } else {
                let first = n.div_ceil(2);
                vec![(lo, lo + first - 1), (lo + first, hi)]
            }
        };
        let mut out = Vec::with_capacity(4);
        for (r0, r1) in halves(self.row_lo, self.row_hi) {
            for &(c0, c1) in &halves(self.col_lo, self.col_hi) {
                out.push(Rect {
                    row_lo: r0,
                    row_hi: r1,
                    col_lo: c0,
                    col_hi: c1,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadNode {
    pub frame: usize,
    pub rect: Rect,
    /// Depth below the frame root.
    pub level: usize,
    /// Mean of the patch tokens inside `rect`.
    pub rep: Vec<f64>,
    /// Number of patch tokens inside `rect`.
    pub weight: usize,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
    /// Smallest parent/child cosine over the children, 1 for leaves.
    pub min_child_cos: f64,
}

impl QuadNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Quadtree of one frame; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadTree {
    pub nodes: Vec<QuadNode>,
}

impl QuadTree {
    pub fn root(&self) -> &QuadNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &QuadNode {
        &self.nodes[id]
    }
}

/// Builds the quadtree of frame `frame` from its `grid_h x grid_w` raster of
/// `dim`-vectors.
pub fn build_hierarchy(
    frame: usize,
    grid_h: usize,
    grid_w: usize,
    dim: usize,
    tokens: &[f32],
) -> Result<QuadTree> {
    if grid_h == 0 || grid_w == 0 {
        return Err(Error::input(
            "grid",
            "cannot build a hierarchy over an empty grid",
        ));
    }
    if tokens.len() != grid_h * grid_w * dim {
        return Err(Error::input(
            "tokens",
            format!(
                "expected {} values, got {}",
                grid_h * grid_w * dim,
                tokens.len()
            ),
        ));
    }
    let mut nodes = Vec::new();
    let root = Rect {
        row_lo: 0,
        row_hi: grid_h - 1,
        col_lo: 0,
        col_hi: grid_w - 1,
    };
    build_node(&mut nodes, frame, root, 0, None, grid_w, dim, tokens);
    Ok(QuadTree { nodes })
}

#[allow(clippy::too_many_arguments)]
fn build_node(
    nodes: &mut Vec<QuadNode>,
    frame: usize,
    rect: Rect,
    level: usize,
    parent: Option<usize>,
    grid_w: usize,
    dim: usize,
    tokens: &[f32],
) -> usize {
    let id = nodes.len();
    nodes.push(QuadNode {
        frame,
        rect,
        level,
        rep: Vec::new(),
        weight: 0,
        children: Vec::new(),
        parent,
        min_child_cos: 1.0,
    });
    if rect.area() == 1 {
        let at = (rect.row_lo * grid_w + rect.col_lo) * dim;
        nodes[id].rep = tokens[at..at + dim].iter().map(|&x| f64::from(x)).collect();
        nodes[id].weight = 1;
        return id;
    }
    let children: Vec<usize> = rect
        .split()
        .into_iter()
        .map(|r| build_node(nodes, frame, r, level + 1, Some(id), grid_w, dim, tokens))
        .collect();
    let weight: usize = children.iter().map(|&c| nodes[c].weight).sum();
    let mut rep = vec![0.0; dim];
    for &c in &children {
        let w = nodes[c].weight as f64;
        rep.iter_mut()
            .zip(&nodes[c].rep)
            .for_each(|(a, x)| *a += w * x);
    }
    rep.iter_mut().for_each(|a| *a /= weight as f64);
    let min_child_cos = children
        .iter()
        .map(|&c| cosine(&rep, &nodes[c].rep))
        .fold(f64::INFINITY, f64::min);
    let node = &mut nodes[id];
    node.rep = rep;
    node.weight = weight;
    node.children = children;
    node.min_child_cos = min_child_cos;
    id
}

/// Top-down selection: keep a node when every child is within `tau_s` of it,
/// otherwise recurse. Returns node ids in raster order; they tile the frame.
pub fn spatial_select(tree: &QuadTree, tau_s: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![0usize];
    while let Some(id) = stack.pop() {
        let n = tree.node(id);
        if n.is_leaf()
            || n.children
                .iter()
                .all(|&c| cosine(&n.rep, &tree.node(c).rep) >= tau_s)
        {
            out.push(id);
        } else {
            stack.extend(n.children.iter().rev());
        }
    }
    out.sort_by_key(|&id| tree.node(id).rect.raster());
    out
}

/// Node address within a chunk: `(frame, node id)`.
pub type NodeRef = (usize, usize);

/// One temporal fold: `absorbed` now contributes to `into`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeEdge {
    pub absorbed: NodeRef,
    pub into: NodeRef,
    pub weight: usize,
}

/// Kept nodes per frame plus the fold relation between them.
#[derive(Debug, Clone)]
struct ChunkState<'a> {
    trees: &'a [QuadTree],
    selection: Vec<Vec<usize>>,
    into: BTreeMap<NodeRef, NodeRef>,
    members: BTreeMap<NodeRef, BTreeSet<NodeRef>>,
}

impl<'a> ChunkState<'a> {
    fn new(trees: &'a [QuadTree], selection: Vec<Vec<usize>>) -> Self {
        Self {
            trees,
            selection,
            into: BTreeMap::new(),
            members: BTreeMap::new(),
        }
    }

    fn node(&self, r: NodeRef) -> &'a QuadNode {
        &self.trees[r.0].nodes[r.1]
    }

    fn is_survivor(&self, r: NodeRef) -> bool {
        !self.into.contains_key(&r)
    }

    fn survivor_count(&self) -> usize {
        self.selection.iter().map(Vec::len).sum::<usize>() - self.into.len()
    }

    fn survivors(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.selection
            .iter()
            .enumerate()
            .flat_map(|(f, sel)| sel.iter().map(move |&n| (f, n)))
            .filter(|r| self.is_survivor(*r))
    }

    /// Weighted mean over a survivor and everything folded into it.
    fn rep(&self, s: NodeRef) -> (Vec<f64>, usize) {
        let own = self.node(s);
        let mut acc: Vec<f64> = own.rep.iter().map(|x| x * own.weight as f64).collect();
        let mut weight = own.weight;
        if let Some(ms) = self.members.get(&s) {
            for &m in ms {
                let n = self.node(m);
                acc.iter_mut()
                    .zip(&n.rep)
                    .for_each(|(a, x)| *a += x * n.weight as f64);
                weight += n.weight;
            }
        }
        acc.iter_mut().for_each(|a| *a /= weight as f64);
        (acc, weight)
    }

    /// Folds survivor `a` (and its members) into survivor `s`.
    fn fold(&mut self, a: NodeRef, s: NodeRef) {
        let moved = self.members.remove(&a).unwrap_or_default();
        for &m in &moved {
            self.into.insert(m, s);
        }
        self.into.insert(a, s);
        let set = self.members.entry(s).or_default();
        set.extend(moved);
        set.insert(a);
    }

    fn unfold(&mut self, a: NodeRef) {
        if let Some(s) = self.into.remove(&a) {
            if let Some(set) = self.members.get_mut(&s) {
                set.remove(&a);
                if set.is_empty() {
                    self.members.remove(&s);
                }
            }
        }
    }

    fn insert_sorted(&mut self, frame: usize, ids: &[usize]) {
        let tree = &self.trees[frame];
        let sel = &mut self.selection[frame];
        sel.extend_from_slice(ids);
        sel.sort_by_key(|&id| tree.node(id).rect.raster());
    }

    /// Frame `t - 1` nodes seen from frame `t`, each paired with whichever
    /// survivor currently represents it.
    fn previous_entries(&self, t: usize) -> Vec<(&'a QuadNode, NodeRef)> {
        self.selection[t - 1]
            .iter()
            .map(|&n| {
                let r = (t - 1, n);
                (self.node(r), *self.into.get(&r).unwrap_or(&r))
            })
            .collect()
    }

    fn edges(&self) -> Vec<MergeEdge> {
        self.into
            .iter()
            .map(|(&absorbed, &into)| MergeEdge {
                absorbed,
                into,
                weight: self.node(absorbed).weight,
            })
            .collect()
    }
}

/// Sweeps frames in order. Each kept node of frame `t` is compared with the
/// overlapping kept nodes of frame `t - 1`; when one is within `tau_t`, the
/// node folds into that neighbour's survivor. Comparing node means rather
/// than accumulated survivors keeps the decisions independent of earlier
/// folds, so the fold count can only shrink as `tau_t` rises.
fn temporal_pass(state: &mut ChunkState<'_>, tau_t: f64) {
    for t in 1..state.selection.len() {
        let entries = state.previous_entries(t);
        let mut decisions = Vec::new();
        for &n in &state.selection[t] {
            let node = state.node((t, n));
            let mut best: Option<(usize, f64, (usize, usize), NodeRef)> = None;
            for &(prev, s) in &entries {
                let area = prev.rect.intersection_area(&node.rect);
                if area == 0 {
                    continue;
                }
                let c = cosine(&prev.rep, &node.rep);
                if c < tau_t {
                    continue;
                }
                let raster = prev.rect.raster();
                let better = match best {
                    None => true,
                    Some((ba, bc, br, _)) => {
                        area > ba || (area == ba && (c > bc || (c == bc && raster < br)))
                    }
                };
                if better {
                    best = Some((area, c, raster, s));
                }
            }
            if let Some((_, _, _, s)) = best {
                decisions.push(((t, n), s));
            }
        }
        for (a, s) in decisions {
            state.fold(a, s);
        }
    }
}

/// Per-frame kept node sets after temporal folding.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMerge {
    /// Surviving nodes, frame-major, raster order within a frame.
    pub survivors: Vec<NodeRef>,
    pub edges: Vec<MergeEdge>,
}

/// Temporal folding over per-frame node selections of consecutive frames.
pub fn temporal_merge(trees: &[QuadTree], selection: &[Vec<usize>], tau_t: f64) -> TemporalMerge {
    let mut state = ChunkState::new(trees, selection.to_vec());
    temporal_pass(&mut state, tau_t);
    TemporalMerge {
        survivors: state.survivors().collect(),
        edges: state.edges(),
    }
}

/// Mean parent/child dissimilarity `(1 - cos) / 2` over every edge of every
/// tree, in [0, 1]; 0 when no tree has children.
pub fn heterogeneity(trees: &[QuadTree]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for tree in trees {
        for node in &tree.nodes {
            for &c in &node.children {
                total += (1.0 - cosine(&node.rep, &tree.node(c).rep)) / 2.0;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Retention window the clamp steers into once a hard bound is crossed.
/// With modulation on, the `[v_min, v_max]` window shrinks by a fraction
/// `alpha` of its width, the removed slack split by heterogeneity `h`:
/// homogeneous chunks land lower, heterogeneous ones higher.
pub fn clamp_window(params: &HyperParams, h: f64) -> (f64, f64) {
    if !params.alpha_modulation {
        return (params.v_min, params.v_max);
    }
    let width = params.v_max - params.v_min;
    let slack = params.alpha.min(1.0) * width;
    let h = h.clamp(0.0, 1.0);
    (params.v_min + slack * h, params.v_max - slack * (1.0 - h))
}

const COUNT_EPS: f64 = 1e-9;

/// Clamp candidate: cosine, frame, raster key, subject, survivor.
type Ranked<T> = (f64, usize, (usize, usize), T, NodeRef);

/// Coarsening step: a sibling group whose members all survive intact is
/// replaced by its parent, least-lossy parent first. Falls back to forcing
/// the most similar overlapping pair of consecutive-frame survivors together.
fn coarsen_once(state: &mut ChunkState<'_>) -> bool {
    let mut best: Option<Ranked<usize>> = None;
    for (f, sel) in state.selection.iter().enumerate() {
        let selected: BTreeSet<usize> = sel.iter().copied().collect();
        let mut seen = BTreeSet::new();
        for &n in sel {
            let Some(p) = state.node((f, n)).parent else {
                continue;
            };
            if !seen.insert(p) {
                continue;
            }
            let parent = state.node((f, p));
            let intact = parent
                .children
                .iter()
                .all(|&c| selected.contains(&c) && state.is_survivor((f, c)));
            if !intact {
                continue;
            }
            let key = (parent.min_child_cos, f, parent.rect.raster(), parent.level);
            let better = match best {
                None => true,
                Some((bc, bf, br, bl, _)) => {
                    key.0 > bc || (key.0 == bc && (key.1, key.2, key.3) < (bf, br, bl))
                }
            };
            if better {
                best = Some((key.0, key.1, key.2, key.3, (f, p)));
            }
        }
    }
    if let Some((.., (f, p))) = best {
        let children = state.node((f, p)).children.clone();
        for &c in &children {
            if let Some(ms) = state.members.remove(&(f, c)) {
                for &m in &ms {
                    state.into.insert(m, (f, p));
                }
                state.members.entry((f, p)).or_default().extend(ms);
            }
        }
        state.selection[f].retain(|n| !children.contains(n));
        state.insert_sorted(f, &[p]);
        return true;
    }

    let mut forced: Option<Ranked<NodeRef>> = None;
    for t in 1..state.selection.len() {
        let entries = state.previous_entries(t);
        for &n in &state.selection[t] {
            let a = (t, n);
            if !state.is_survivor(a) {
                continue;
            }
            let rep_a = state.rep(a).0;
            let rect = state.node(a).rect;
            for &(er, s) in &entries {
                if er.rect.intersection_area(&rect) == 0 {
                    continue;
                }
                let c = cosine(&state.rep(s).0, &rep_a);
                let better = match forced {
                    None => true,
                    Some((bc, bt, br, _, _)) => {
                        c > bc || (c == bc && (t, rect.raster()) < (bt, br))
                    }
                };
                if better {
                    forced = Some((c, t, rect.raster(), a, s));
                }
            }
        }
    }
    if let Some((.., a, s)) = forced {
        state.fold(a, s);
        return true;
    }
    false
}

/// Refinement step: split the most heterogeneous splittable survivor into
/// its children; folded nodes follow the child they overlap most. Falls back
/// to releasing the least similar folded node.
fn refine_once(state: &mut ChunkState<'_>) -> bool {
    let mut best: Option<Ranked<usize>> = None;
    for s in state.survivors() {
        let n = state.node(s);
        if n.is_leaf() {
            continue;
        }
        let key = (n.min_child_cos, s.0, n.rect.raster(), n.level);
        let better = match best {
            None => true,
            Some((bc, bf, br, bl, _)) => {
                key.0 < bc || (key.0 == bc && (key.1, key.2, key.3) < (bf, br, bl))
            }
        };
        if better {
            best = Some((key.0, key.1, key.2, key.3, s));
        }
    }
    if let Some((.., s)) = best {
        let (f, id) = s;
        let children = state.node(s).children.clone();
        state.selection[f].retain(|&n| n != id);
        state.insert_sorted(f, &children);
        if let Some(ms) = state.members.remove(&s) {
            for m in ms {
                let mn = state.node(m);
                let target = children
                    .iter()
                    .map(|&c| {
                        let cn = state.node((f, c));
                        (
                            cn.rect.intersection_area(&mn.rect),
                            cosine(&cn.rep, &mn.rep),
                            c,
                        )
                    })
                    .fold(None::<(usize, f64, usize)>, |acc, cand| match acc {
                        None => Some(cand),
                        Some(b) => {
                            if cand.0 > b.0 || (cand.0 == b.0 && cand.1 > b.1) {
                                Some(cand)
                            } else {
                                Some(b)
                            }
                        }
                    })
                    .map(|(_, _, c)| c)
                    .expect("split node has children");
                state.into.insert(m, (f, target));
                state.members.entry((f, target)).or_default().insert(m);
            }
        }
        return true;
    }

    let mut release: Option<(f64, NodeRef)> = None;
    for (&a, &s) in &state.into {
        let c = cosine(&state.node(a).rep, &state.rep(s).0);
        if release.is_none_or(|(bc, _)| c < bc) {
            release = Some((c, a));
        }
    }
    if let Some((_, a)) = release {
        state.unfold(a);
        return true;
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedNode {
    pub frame: usize,
    pub rect: Rect,
    pub level: usize,
    /// Patch tokens covered by the node's own rect.
    pub own_weight: usize,
    /// Own weight plus everything folded into it.
    pub weight: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoCompressionResult {
    /// Survivors per frame of the chunk, raster order.
    pub retained_nodes: Vec<Vec<RetainedNode>>,
    /// Per patch, frame-major: the position lies inside a surviving rect.
    pub token_mask: Vec<bool>,
    /// Per patch: row of `merged_reps` the patch contributes to.
    pub patch_owner: Vec<usize>,
    /// One row per survivor, frame-major then raster.
    pub merged_reps: EmbeddingMatrix,
    pub merges: Vec<MergeEdge>,
    pub r_v: f64,
    pub r_v_pre_clamp: f64,
    pub spatial_counts: Vec<usize>,
    pub heterogeneity: f64,
    pub clamp_window: (f64, f64),
    pub notes: Vec<String>,
}

impl VideoCompressionResult {
    pub fn survivor_count(&self) -> usize {
        self.merged_reps.rows()
    }

    pub fn original_count(&self) -> usize {
        self.token_mask.len()
    }

    pub fn trace(&self) -> VideoTrace {
        VideoTrace {
            retained: self
                .retained_nodes
                .iter()
                .map(|f| f.iter().map(|n| n.rect).collect())
                .collect(),
            merges: self.merges.clone(),
            r_v_pre_clamp: self.r_v_pre_clamp,
            r_v: self.r_v,
            clamp_window: self.clamp_window,
            heterogeneity: self.heterogeneity,
        }
    }
}

/// JSON trace of one chunk's video compression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTrace {
    pub retained: Vec<Vec<Rect>>,
    pub merges: Vec<MergeEdge>,
    pub r_v_pre_clamp: f64,
    pub r_v: f64,
    pub clamp_window: (f64, f64),
    pub heterogeneity: f64,
}

/// Builds every frame's quadtree.
pub fn build_trees(chunk: &VideoStream) -> Result<Vec<QuadTree>> {
    let p = chunk.patches_per_frame();
    let d = chunk.dim();
    (0..chunk.num_frames())
        .map(|f| {
            let vals = &chunk.tokens().values()[f * p * d..(f + 1) * p * d];
            build_hierarchy(f, chunk.grid_h(), chunk.grid_w(), d, vals)
        })
        .collect()
}

/// Spatial selection, temporal folding and retention clamping for the video
/// tokens of one chunk.
pub fn compress_video_chunk(
    chunk: &VideoStream,
    params: &HyperParams,
) -> Result<VideoCompressionResult> {
    let trees = build_trees(chunk)?;
    let selection: Vec<Vec<usize>> = trees
        .iter()
        .map(|t| spatial_select(t, params.tau_s))
        .collect();
    let spatial_counts = selection.iter().map(Vec::len).collect();
    let mut state = ChunkState::new(&trees, selection);
    temporal_pass(&mut state, params.tau_t);

    let total = chunk.num_frames() * chunk.patches_per_frame();
    let mut notes = Vec::new();
    if total == 0 {
        return Err(Error::input("chunk", "video chunk has no tokens"));
    }
    let pre = state.survivor_count();
    let h = heterogeneity(&trees);
    let window = clamp_window(params, h);
    let tf = total as f64;
    let hard_hi = (params.v_max * tf + COUNT_EPS).floor() as usize;
    let hard_lo = (params.v_min * tf - COUNT_EPS).ceil() as usize;
    if pre > hard_hi {
        let target = ((window.1 * tf + COUNT_EPS).floor() as usize).max(1);
        while state.survivor_count() > target && coarsen_once(&mut state) {}
    } else if pre < hard_lo {
        let target = ((window.0 * tf - COUNT_EPS).ceil() as usize).min(total);
        while state.survivor_count() < target && refine_once(&mut state) {}
    }
    let count = state.survivor_count();
    if count > hard_hi || count < hard_lo {
        notes.push(format!(
            "retention {count}/{total} cannot be brought inside [{}, {}]",
            params.v_min, params.v_max
        ));
    }
    log::debug!(
        "video chunk: {total} tokens, heterogeneity {h:.4}, window [{:.4}, {:.4}], survivors {pre} -> {count}",
        window.0,
        window.1
    );

    let grid_w = chunk.grid_w();
    let p = chunk.patches_per_frame();
    let survivors: Vec<NodeRef> = state.survivors().collect();
    let row_of: BTreeMap<NodeRef, usize> =
        survivors.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut retained_nodes = vec![Vec::new(); chunk.num_frames()];
    let mut reps = Vec::with_capacity(survivors.len() * chunk.dim());
    for &s in &survivors {
        let n = state.node(s);
        let (rep, weight) = state.rep(s);
        reps.extend(to_f32(&rep));
        retained_nodes[s.0].push(RetainedNode {
            frame: s.0,
            rect: n.rect,
            level: n.level,
            own_weight: n.weight,
            weight,
        });
    }
    let mut token_mask = vec![false; total];
    let mut patch_owner = vec![usize::MAX; total];
    for (f, sel) in state.selection.iter().enumerate() {
        for &id in sel {
            let r = (f, id);
            let owner = *state.into.get(&r).unwrap_or(&r);
            let rect = state.node(r).rect;
            for row in rect.row_lo..=rect.row_hi {
                for col in rect.col_lo..=rect.col_hi {
                    debug_assert!(rect.contains(row, col));
                    let at = f * p + row * grid_w + col;
                    token_mask[at] = state.is_survivor(r);
                    patch_owner[at] = row_of[&owner];
                }
            }
        }
    }
    if patch_owner.contains(&usize::MAX) {
        return Err(Error::Internal("kept nodes do not tile every frame".into()));
    }
    if total == 1 {
        notes.push("single-token chunk: retention bounds not expressible".into());
    }
    Ok(VideoCompressionResult {
        retained_nodes,
        token_mask,
        patch_owner,
        merged_reps: EmbeddingMatrix::new(survivors.len(), chunk.dim(), reps)?,
        merges: state.edges(),
        r_v: count as f64 / tf,
        r_v_pre_clamp: pre as f64 / tf,
        spatial_counts,
        heterogeneity: h,
        clamp_window: window,
        notes,
    })
}
