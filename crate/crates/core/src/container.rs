//! The `ORTC` container.
//!
//! Layout, with no padding between sections:
//!
//! ```text
//! "ORTC"  4 bytes magic
//! "0001"  4 bytes version
//! u32 LE  header length in bytes
//! JSON    UTF-8 header
//! f32 LE  video payload, num_frames * grid_h * grid_w * dim values
//! f32 LE  audio payload, num_audio_tokens * dim values
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::HyperParams;
use crate::scenario::GroundTruth;
use crate::stream::{AudioStream, VideoStream};
use crate::tensor::EmbeddingMatrix;

pub const MAGIC: &[u8; 4] = b"ORTC";
pub const VERSION: &[u8; 4] = b"0001";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dim: usize,
    num_frames: usize,
    grid_h: usize,
    grid_w: usize,
    num_audio_tokens: usize,
    frame_bucket: Vec<usize>,
    token_bucket: Vec<usize>,
    hyperparams: Option<HyperParams>,
    ground_truth_boundaries: Option<GroundTruth>,
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub video: VideoStream,
    pub audio: AudioStream,
    pub params: Option<HyperParams>,
    pub ground_truth: Option<GroundTruth>,
}

pub fn encode(
    video: &VideoStream,
    audio: &AudioStream,
    params: Option<&HyperParams>,
    ground_truth: Option<&GroundTruth>,
) -> Result<Vec<u8>> {
    if video.dim() != audio.dim() {
        return Err(Error::DimensionMismatch {
            expected: video.dim(),
            found: audio.dim(),
        });
    }
    let header = Header {
        dim: video.dim(),
        num_frames: video.num_frames(),
        grid_h: video.grid_h(),
        grid_w: video.grid_w(),
        num_audio_tokens: audio.num_tokens(),
        frame_bucket: video.frame_bucket().to_vec(),
        token_bucket: audio.token_bucket().to_vec(),
        hyperparams: params.cloned(),
        ground_truth_boundaries: ground_truth.cloned(),
    };
    let json = serde_json::to_vec(&header)?;
    let header_len =
        u32::try_from(json.len()).map_err(|_| Error::input("header", "header exceeds 4 GiB"))?;
    let payload = (video.tokens().values().len() + audio.tokens().values().len()) * 4;
    let mut out = Vec::with_capacity(12 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(VERSION);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for v in video
        .tokens()
        .values()
        .iter()
        .chain(audio.tokens().values())
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(buf: &'a [u8], at: &mut usize, n: u64, section: &'static str) -> Result<&'a [u8]> {
    let available = (buf.len() - *at) as u64;
    if n > available {
        return Err(Error::Truncated {
            section,
            expected: n,
            found: available,
        });
    }
    let n = n as usize;
    let out = &buf[*at..*at + n];
    *at += n;
    Ok(out)
}

fn floats(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Maps stream construction errors onto container invariant violations.
fn violation(e: Error) -> Error {
    match e {
        Error::InvalidInput { field, reason } => Error::InvariantViolation { field, reason },
        other => other,
    }
}

pub fn decode(buf: &[u8]) -> Result<Container> {
    let mut at = 0;
    let magic = take(buf, &mut at, 4, "magic").map_err(|_| Error::BadMagic {
        found: buf.to_vec(),
    })?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            found: magic.to_vec(),
        });
    }
    let version = take(buf, &mut at, 4, "version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: String::from_utf8_lossy(version).into_owned(),
        });
    }
    let len_bytes = take(buf, &mut at, 4, "header length")?;
    let header_len = u32::from_le_bytes([len_bytes[0], len_bytes[1], len_bytes[2], len_bytes[3]]);
    let json = take(buf, &mut at, u64::from(header_len), "header")?;
    let header: Header = serde_json::from_slice(json).map_err(Error::Header)?;

    if header.dim == 0 {
        return Err(Error::InvariantViolation {
            field: "dim",
            reason: "must be >= 1".into(),
        });
    }
    let patches = (header.grid_h as u64) * (header.grid_w as u64);
    let video_rows = (header.num_frames as u64)
        .checked_mul(patches)
        .ok_or_else(|| Error::InvariantViolation {
            field: "num_frames",
            reason: "token count overflows".into(),
        })?;
    let video_bytes = video_rows
        .checked_mul(header.dim as u64 * 4)
        .ok_or_else(|| Error::InvariantViolation {
            field: "dim",
            reason: "payload size overflows".into(),
        })?;
    let audio_bytes = (header.num_audio_tokens as u64)
        .checked_mul(header.dim as u64 * 4)
        .ok_or_else(|| Error::InvariantViolation {
            field: "num_audio_tokens",
            reason: "payload size overflows".into(),
        })?;
    let video_payload = take(buf, &mut at, video_bytes, "video payload")?;
    let audio_payload = take(buf, &mut at, audio_bytes, "audio payload")?;
    if at != buf.len() {
        return Err(Error::TrailingBytes {
            found: (buf.len() - at) as u64,
        });
    }

    let video_tokens = EmbeddingMatrix::new(video_rows as usize, header.dim, floats(video_payload))
        .map_err(|e| match e {
            Error::InvalidInput { reason, .. } => Error::InvariantViolation {
                field: "video payload",
                reason,
            },
            other => other,
        })?;
    let audio_tokens =
        EmbeddingMatrix::new(header.num_audio_tokens, header.dim, floats(audio_payload)).map_err(
            |e| match e {
                Error::InvalidInput { reason, .. } => Error::InvariantViolation {
                    field: "audio payload",
                    reason,
                },
                other => other,
            },
        )?;
    let video = VideoStream::new(
        header.num_frames,
        header.grid_h,
        header.grid_w,
        video_tokens,
        header.frame_bucket,
    )
    .map_err(violation)?;
    let audio = AudioStream::new(audio_tokens, header.token_bucket).map_err(violation)?;
    if let Some(p) = &header.hyperparams {
        p.validate().map_err(|e| Error::InvariantViolation {
            field: "hyperparams",
            reason: e.to_string(),
        })?;
    }
    Ok(Container {
        video,
        audio,
        params: header.hyperparams,
        ground_truth: header.ground_truth_boundaries,
    })
}

pub fn save_container(
    path: impl AsRef<Path>,
    video: &VideoStream,
    audio: &AudioStream,
    params: Option<&HyperParams>,
    ground_truth: Option<&GroundTruth>,
) -> Result<()> {
    let bytes = encode(video, audio, params, ground_truth)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_container(path: impl AsRef<Path>) -> Result<Container> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}
