//! End-to-end run: correspondence field, chunk refinement, then per-chunk
//! video and audio compression, reassembled into compressed streams and a
//! report.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::correspondence::{build_field, CorrespondenceField};
use crate::cpcr::{block_score, refine_chunks_dp_with_band, Band, Chunk, RefinedChunking};
use crate::error::{Error, Result};
use crate::metrics::{flops_proxy, CostModel};
use crate::params::HyperParams;
use crate::saac::{
    compress_audio_chunk, AudioCompressionResult, AudioTrace, ImportanceScores, ScoreSource,
};
use crate::stream::{check_pair, AudioStream, VideoStream};
use crate::tensor::EmbeddingMatrix;
use crate::tsst::{compress_video_chunk, VideoCompressionResult, VideoTrace};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    /// Restrict the chunk DP to its diagonal corridor.
    pub banded: bool,
    pub cost_model: CostModel,
    /// Importance of every audio token of the input; l2 norms when absent.
    pub audio_scores: Option<Vec<f64>>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            banded: true,
            cost_model: CostModel::default(),
            audio_scores: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkReport {
    pub chunk_id: usize,
    pub chunk: Chunk,
    pub phi: f64,
    pub r_v: f64,
    pub r_v_pre_clamp: f64,
    pub m_a: f64,
    /// Budget retention `1 - m_a`.
    pub r_a: f64,
    /// Audio tokens kept over audio tokens in the chunk.
    pub audio_retained_ratio: f64,
    pub video_tokens_before: usize,
    pub video_tokens_after: usize,
    pub audio_tokens_before: usize,
    pub audio_tokens_after: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub report_version: u32,
    pub per_chunk: Vec<ChunkReport>,
    pub tokens_before: usize,
    pub tokens_after: usize,
    pub overall_retained_ratio: f64,
    pub flops_proxy_ratio: f64,
    pub chunking_score: f64,
    pub banded: bool,
    pub config_digest: String,
    pub cost_model: CostModel,
    pub notes: Vec<String>,
}

impl CompressionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.report_version != REPORT_VERSION {
            return Err(Error::input(
                "report_version",
                format!("unsupported report version {}", r.report_version),
            ));
        }
        Ok(r)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkOutcome {
    pub chunk: Chunk,
    pub video: VideoCompressionResult,
    pub audio: AudioCompressionResult,
}

/// JSON trace of one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkTrace {
    pub chunk_id: usize,
    pub chunk: Chunk,
    pub video: VideoTrace,
    pub audio: AudioTrace,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub field: CorrespondenceField,
    pub chunking: RefinedChunking,
    pub band: Option<Band>,
    pub chunks: Vec<ChunkOutcome>,
    pub report: CompressionReport,
    /// One 1x1 "frame" per video survivor, bucketed by chunk.
    pub compressed_video: VideoStream,
    /// Retained audio tokens (merged where applicable), bucketed by chunk.
    pub compressed_audio: AudioStream,
    pub grid: (usize, usize),
}

impl PipelineRun {
    pub fn traces(&self) -> Vec<ChunkTrace> {
        self.chunks
            .iter()
            .enumerate()
            .map(|(i, c)| ChunkTrace {
                chunk_id: i,
                chunk: c.chunk,
                video: c.video.trace(),
                audio: c.audio.trace(),
            })
            .collect()
    }

    /// Compressed tokens in prefill order: chunk by chunk, video before audio.
    pub fn interleaved(&self) -> Result<EmbeddingMatrix> {
        let dim = self.compressed_video.dim();
        let mut values = Vec::new();
        let mut rows = 0;
        for c in &self.chunks {
            for m in [&c.video.merged_reps, &c.audio.merged_reps] {
                values.extend_from_slice(m.values());
                rows += m.rows();
            }
        }
        EmbeddingMatrix::new(rows, dim, values)
    }

    /// Compressed streams as an ORTC container.
    pub fn encode_compressed(&self, params: &HyperParams) -> Result<Vec<u8>> {
        container::encode(
            &self.compressed_video,
            &self.compressed_audio,
            Some(params),
            None,
        )
    }
}

pub fn run_pipeline(
    video: &VideoStream,
    audio: &AudioStream,
    params: &HyperParams,
) -> Result<PipelineRun> {
    run_pipeline_with(video, audio, params, &PipelineOptions::default())
}

pub fn run_pipeline_with(
    video: &VideoStream,
    audio: &AudioStream,
    params: &HyperParams,
    options: &PipelineOptions,
) -> Result<PipelineRun> {
    params.validate()?;
    options.cost_model.validate()?;
    check_pair(video, audio)?;
    if let Some(s) = &options.audio_scores {
        if s.len() != audio.num_tokens() {
            return Err(Error::input(
                "audio_scores",
                format!("{} scores for {} tokens", s.len(), audio.num_tokens()),
            ));
        }
    }
    let field = build_field(video, audio, params)?;
    let band = options
        .banded
        .then(|| Band::from_params(field.frames(), field.tokens(), params));
    let chunking = refine_chunks_dp_with_band(&field, params, band)?;

    let chunks: Vec<ChunkOutcome> = chunking
        .chunks
        .par_iter()
        .map(|&chunk| compress_chunk(video, audio, chunk, params, options.audio_scores.as_deref()))
        .collect::<Result<_>>()?;

    let p = video.patches_per_frame();
    let mut per_chunk = Vec::with_capacity(chunks.len());
    let mut vid_vals = Vec::new();
    let mut vid_buckets = Vec::new();
    let mut aud_vals = Vec::new();
    let mut aud_buckets = Vec::new();
    for (i, c) in chunks.iter().enumerate() {
        let mut notes = c.video.notes.clone();
        notes.extend(c.audio.notes.iter().cloned());
        per_chunk.push(ChunkReport {
            chunk_id: i,
            chunk: c.chunk,
            phi: block_score(
                &field,
                c.chunk.f_lo - 1,
                c.chunk.f_hi,
                c.chunk.t_lo - 1,
                c.chunk.t_hi,
            )?,
            r_v: c.video.r_v,
            r_v_pre_clamp: c.video.r_v_pre_clamp,
            m_a: c.audio.m_a,
            r_a: c.audio.r_a,
            audio_retained_ratio: c.audio.achieved_ratio,
            video_tokens_before: c.chunk.num_frames() * p,
            video_tokens_after: c.video.survivor_count(),
            audio_tokens_before: c.chunk.num_tokens(),
            audio_tokens_after: c.audio.retained.len(),
            notes,
        });
        vid_vals.extend_from_slice(c.video.merged_reps.values());
        vid_buckets.extend(std::iter::repeat_n(i, c.video.survivor_count()));
        aud_vals.extend_from_slice(c.audio.merged_reps.values());
        aud_buckets.extend(std::iter::repeat_n(i, c.audio.retained.len()));
    }
    let tokens_before: usize = per_chunk
        .iter()
        .map(|c| c.video_tokens_before + c.audio_tokens_before)
        .sum();
    let tokens_after: usize = per_chunk
        .iter()
        .map(|c| c.video_tokens_after + c.audio_tokens_after)
        .sum();
    let dim = video.dim();
    let compressed_video = VideoStream::new(
        vid_buckets.len(),
        1,
        1,
        EmbeddingMatrix::new(vid_buckets.len(), dim, vid_vals)?,
        vid_buckets,
    )?;
    let compressed_audio = AudioStream::new(
        EmbeddingMatrix::new(aud_buckets.len(), dim, aud_vals)?,
        aud_buckets,
    )?;

    let mut notes = Vec::new();
    if params.alpha_modulation {
        notes.push(format!(
            "video clamp targets tilted by alpha = {}",
            params.alpha
        ));
    }
    notes.push(format!(
        "audio merge quota per anchor group = ceil(m_a * group size), blocks of {}",
        params.group_size
    ));
    let report = CompressionReport {
        report_version: REPORT_VERSION,
        per_chunk,
        tokens_before,
        tokens_after,
        overall_retained_ratio: tokens_after as f64 / tokens_before as f64,
        flops_proxy_ratio: flops_proxy(tokens_before, tokens_after, &options.cost_model)?,
        chunking_score: chunking.score,
        banded: band.is_some(),
        config_digest: params.digest(),
        cost_model: options.cost_model,
        notes,
    };
    Ok(PipelineRun {
        field,
        chunking,
        band,
        chunks,
        report,
        compressed_video,
        compressed_audio,
        grid: (video.grid_h(), video.grid_w()),
    })
}

fn compress_chunk(
    video: &VideoStream,
    audio: &AudioStream,
    chunk: Chunk,
    params: &HyperParams,
    scores: Option<&[f64]>,
) -> Result<ChunkOutcome> {
    let frames = chunk.frames();
    let tokens = chunk.tokens();
    let v = video.slice_frames(frames.start, frames.end);
    let a = audio.tokens().slice_rows(tokens.start, tokens.end);
    let scores = match scores {
        Some(s) => ImportanceScores::new(s[tokens].to_vec(), ScoreSource::External)?,
        None => ImportanceScores::l2_norm(&a),
    };
    let vr = compress_video_chunk(&v, params)?;
    let ar = compress_audio_chunk(&a, &scores, &vr, params)?;
    Ok(ChunkOutcome {
        chunk,
        video: vr,
        audio: ar,
    })
}
