//! Parameter sweeps over one input, optionally holding the overall retained
//! ratio fixed by tuning `rho_v`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::params::HyperParams;
use crate::pipeline::{run_pipeline_with, PipelineOptions, PipelineRun};
use crate::stream::{AudioStream, VideoStream};

pub const THREADS_ENV: &str = "ORF_THREADS";
pub const BUDGET_TOLERANCE: f64 = 0.01;
pub const BUDGET_ITERATIONS: usize = 40;

/// Thread cap from `ORF_THREADS`, if set to a positive integer.
pub fn thread_limit() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

/// Sizes the global rayon pool from `ORF_THREADS`; a no-op when unset. Call
/// once, before any parallel work.
pub fn init_global_pool() -> Result<()> {
    match thread_limit() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Internal(format!("thread pool: {e}"))),
        None => Ok(()),
    }
}

/// `{"param": [values...]}`; expanded as a cartesian product in key order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamGrid(pub BTreeMap<String, Vec<Value>>);

impl ParamGrid {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Every grid point; a grid with no keys has exactly one empty point.
    pub fn points(&self) -> Vec<BTreeMap<String, Value>> {
        let mut out = vec![BTreeMap::new()];
        for (key, values) in &self.0 {
            out = out
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut p = p.clone();
                        p.insert(key.clone(), v.clone());
                        p
                    })
                })
                .collect();
        }
        out
    }
}

/// `base` with the point's fields overridden.
pub fn apply_point(base: &HyperParams, point: &BTreeMap<String, Value>) -> Result<HyperParams> {
    let mut obj = serde_json::to_value(base)?;
    let map = obj.as_object_mut().expect("params serialize to an object");
    for (k, v) in point {
        map.insert(k.clone(), v.clone());
    }
    let p: HyperParams = serde_json::from_value(obj)?;
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: BTreeMap<String, Value>,
    pub config_digest: String,
    pub rho_v: f64,
    pub num_chunks: usize,
    pub overall_retained_ratio: f64,
    pub flops_proxy_ratio: f64,
    pub chunking_score: f64,
    pub mean_r_v: f64,
    pub mean_m_a: f64,
    pub mean_r_a: f64,
}

impl SweepRow {
    fn new(point: BTreeMap<String, Value>, params: &HyperParams, run: &PipelineRun) -> Self {
        let r = &run.report;
        let n = r.per_chunk.len().max(1) as f64;
        let mean = |f: &dyn Fn(&crate::pipeline::ChunkReport) -> f64| {
            r.per_chunk.iter().map(f).sum::<f64>() / n
        };
        Self {
            point,
            config_digest: r.config_digest.clone(),
            rho_v: params.rho_v,
            num_chunks: r.per_chunk.len(),
            overall_retained_ratio: r.overall_retained_ratio,
            flops_proxy_ratio: r.flops_proxy_ratio,
            chunking_score: r.chunking_score,
            mean_r_v: mean(&|c| c.r_v),
            mean_m_a: mean(&|c| c.m_a),
            mean_r_a: mean(&|c| c.r_a),
        }
    }
}

/// Bisects `rho_v` in [0, 1] until the overall retained ratio is within
/// 0.01 of `target`. Returns the tuned parameters and their run.
pub fn tune_rho_v(
    video: &VideoStream,
    audio: &AudioStream,
    params: &HyperParams,
    target: f64,
    options: &PipelineOptions,
) -> Result<(HyperParams, PipelineRun)> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::param("target", format!("{target} outside [0, 1]")));
    }
    let eval = |rho_v: f64| -> Result<(HyperParams, PipelineRun)> {
        let p = HyperParams {
            rho_v,
            ..params.clone()
        };
        let run = run_pipeline_with(video, audio, &p, options)?;
        Ok((p, run))
    };
    // Raising rho_v lowers the audio merging ratio, so retention is
    // non-decreasing in rho_v.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut achieved = Vec::new();
    for _ in 0..BUDGET_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let (p, run) = eval(mid)?;
        let got = run.report.overall_retained_ratio;
        achieved.push(got);
        if (got - target).abs() <= BUDGET_TOLERANCE {
            return Ok((p, run));
        }
        if got < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::BudgetSearch {
        target,
        iterations: BUDGET_ITERATIONS,
        achieved,
    })
}

/// One row per grid point, in grid order. With `constant_budget`, each
/// point's `rho_v` is first tuned to that overall retained ratio.
pub fn sweep(
    video: &VideoStream,
    audio: &AudioStream,
    base: &HyperParams,
    grid: &ParamGrid,
    constant_budget: Option<f64>,
    options: &PipelineOptions,
) -> Result<Vec<SweepRow>> {
    let points = grid.points();
    let params: Vec<HyperParams> = points
        .iter()
        .map(|p| apply_point(base, p))
        .collect::<Result<_>>()?;
    let job = || {
        points
            .par_iter()
            .zip(&params)
            .map(|(point, p)| {
                let (p, run) = match constant_budget {
                    Some(target) => tune_rho_v(video, audio, p, target, options)?,
                    None => (p.clone(), run_pipeline_with(video, audio, p, options)?),
                };
                Ok(SweepRow::new(point.clone(), &p, &run))
            })
            .collect::<Result<Vec<_>>>()
    };
    match thread_limit() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?
            .install(job),
        None => job(),
    }
}
