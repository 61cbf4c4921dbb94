//! Video and audio token streams with their native bucket assignments.

use crate::error::{Error, Result};
use crate::tensor::EmbeddingMatrix;

/// Frames of `grid_h x grid_w` patch tokens, stored frame-major and row-major
/// within a frame, each frame tagged with its native bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoStream {
    num_frames: usize,
    grid_h: usize,
    grid_w: usize,
    tokens: EmbeddingMatrix,
    frame_bucket: Vec<usize>,
}

/// Flat audio token timeline tagged with native buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioStream {
    tokens: EmbeddingMatrix,
    token_bucket: Vec<usize>,
}

/// Checks that bucket ids start at 0, never decrease and never skip an id.
/// Returns the bucket count.
pub(crate) fn check_buckets(field: &'static str, buckets: &[usize]) -> Result<usize> {
    let Some(&first) = buckets.first() else {
        return Ok(0);
    };
    if first != 0 {
        return Err(Error::input(
            field,
            format!("first bucket is {first}, expected 0"),
        ));
    }
    for (i, w) in buckets.windows(2).enumerate() {
        if w[1] < w[0] {
            return Err(Error::input(
                field,
                format!(
                    "not monotone: position {} has bucket {} after {}",
                    i + 1,
                    w[1],
                    w[0]
                ),
            ));
        }
        if w[1] > w[0] + 1 {
            return Err(Error::input(
                field,
                format!(
                    "bucket ids skip from {} to {} at position {}",
                    w[0],
                    w[1],
                    i + 1
                ),
            ));
        }
    }
    Ok(buckets[buckets.len() - 1] + 1)
}

impl VideoStream {
    pub fn new(
        num_frames: usize,
        grid_h: usize,
        grid_w: usize,
        tokens: EmbeddingMatrix,
        frame_bucket: Vec<usize>,
    ) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::input("grid", "grid_h and grid_w must be >= 1"));
        }
        if tokens.rows() != num_frames * grid_h * grid_w {
            return Err(Error::input(
                "tokens",
                format!(
                    "expected {} rows for {num_frames} frames of {grid_h}x{grid_w}, got {}",
                    num_frames * grid_h * grid_w,
                    tokens.rows()
                ),
            ));
        }
        if frame_bucket.len() != num_frames {
            return Err(Error::input(
                "frame_bucket",
                format!(
                    "length {} differs from frame count {num_frames}",
                    frame_bucket.len()
                ),
            ));
        }
        check_buckets("frame_bucket", &frame_bucket)?;
        Ok(Self {
            num_frames,
            grid_h,
            grid_w,
            tokens,
            frame_bucket,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    /// Patch tokens per frame.
    pub fn patches_per_frame(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn dim(&self) -> usize {
        self.tokens.dim()
    }

    pub fn tokens(&self) -> &EmbeddingMatrix {
        &self.tokens
    }

    pub fn frame_bucket(&self) -> &[usize] {
        &self.frame_bucket
    }

    pub fn num_buckets(&self) -> usize {
        self.frame_bucket.last().map_or(0, |b| b + 1)
    }

    /// Token rows of frame `f`, in raster order.
    pub fn frame_tokens(&self, f: usize) -> impl Iterator<Item = &[f32]> + '_ {
        let p = self.patches_per_frame();
        (f * p..(f + 1) * p).map(move |i| self.tokens.row(i))
    }

    pub fn patch(&self, f: usize, row: usize, col: usize) -> &[f32] {
        self.tokens
            .row(f * self.patches_per_frame() + row * self.grid_w + col)
    }

    /// Frames `[start, end)` as a standalone stream with a single bucket.
    pub fn slice_frames(&self, start: usize, end: usize) -> VideoStream {
        let p = self.patches_per_frame();
        VideoStream {
            num_frames: end - start,
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            tokens: self.tokens.slice_rows(start * p, end * p),
            frame_bucket: vec![0; end - start],
        }
    }
}

impl AudioStream {
    pub fn new(tokens: EmbeddingMatrix, token_bucket: Vec<usize>) -> Result<Self> {
        if token_bucket.len() != tokens.rows() {
            return Err(Error::input(
                "token_bucket",
                format!(
                    "length {} differs from token count {}",
                    token_bucket.len(),
                    tokens.rows()
                ),
            ));
        }
        check_buckets("token_bucket", &token_bucket)?;
        Ok(Self {
            tokens,
            token_bucket,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.rows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.dim()
    }

    pub fn tokens(&self) -> &EmbeddingMatrix {
        &self.tokens
    }

    pub fn token(&self, t: usize) -> &[f32] {
        self.tokens.row(t)
    }

    pub fn token_bucket(&self) -> &[usize] {
        &self.token_bucket
    }

    pub fn num_buckets(&self) -> usize {
        self.token_bucket.last().map_or(0, |b| b + 1)
    }
}

/// Verifies that two streams can be processed together.
pub fn check_pair(video: &VideoStream, audio: &AudioStream) -> Result<()> {
    if video.dim() != audio.dim() {
        return Err(Error::DimensionMismatch {
            expected: video.dim(),
            found: audio.dim(),
        });
    }
    if video.num_buckets() != audio.num_buckets() {
        return Err(Error::BucketCountMismatch {
            video: video.num_buckets(),
            audio: audio.num_buckets(),
        });
    }
    Ok(())
}

/// Uniform fixed-duration bucketing: position `i` of `len` lands in bucket
/// `floor(i * k / len)`.
pub fn uniform_buckets(len: usize, k: usize) -> Vec<usize> {
    (0..len).map(|i| i * k / len).collect()
}

/// Sizes of each bucket in a monotone assignment.
pub fn bucket_sizes(buckets: &[usize]) -> Vec<usize> {
    let k = buckets.last().map_or(0, |b| b + 1);
    let mut sizes = vec![0; k];
    for &b in buckets {
        sizes[b] += 1;
    }
    sizes
}
