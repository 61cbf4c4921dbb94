//! Synthetic paired streams with planted cross-modal events.
//!
//! Each event owns a unit latent vector. Audio tokens of an event are the
//! latent plus noise; every video patch is the latent scaled by a positive
//! spatial gain (a checkerboard of 1.5 / 0.5) plus noise, so noiseless tokens
//! of one event are collinear in both modalities while their magnitudes still
//! vary across the grid. Event boundaries sit on randomly chosen native bucket
//! boundaries, displaced by up to `boundary_jitter` positions independently in
//! each modality.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{bucket_sizes, uniform_buckets, AudioStream, VideoStream};
use crate::tensor::EmbeddingMatrix;

const JITTER_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub num_frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub num_audio_tokens: usize,
    pub dim: usize,
    pub num_events: usize,
    pub boundary_jitter: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Allowed native bucket sizes in frames.
    pub frame_bucket_range: (usize, usize),
    /// Allowed native bucket sizes in audio tokens.
    pub audio_bucket_range: (usize, usize),
    /// Forces a bucket count instead of the smallest feasible one.
    pub num_buckets: Option<usize>,
    /// Gram-Schmidt the event latents (requires `num_events <= dim`).
    pub orthogonal_latents: bool,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            num_frames: 32,
            grid_h: 4,
            grid_w: 4,
            num_audio_tokens: 800,
            dim: 32,
            num_events: 3,
            boundary_jitter: 2,
            noise_sigma: 0.05,
            seed: 0,
            frame_bucket_range: (3, 5),
            audio_bucket_range: (90, 140),
            num_buckets: None,
            orthogonal_latents: true,
        }
    }
}

/// Interior event boundaries, as the index of the first position of each
/// event after the first, per modality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video: Vec<usize>,
    pub audio: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub video: VideoStream,
    pub audio: AudioStream,
    pub ground_truth: GroundTruth,
    /// Unit latent of each event, in event order.
    pub latents: Vec<Vec<f64>>,
}

fn sizes_fit(len: usize, k: usize, range: (usize, usize)) -> bool {
    if len == 0 {
        return false;
    }
    let sizes = bucket_sizes(&uniform_buckets(len, k));
    sizes.len() == k && sizes.iter().all(|&s| s >= range.0 && s <= range.1)
}

/// Smallest bucket count whose uniform bucketing keeps every bucket inside
/// both size ranges.
pub fn choose_bucket_count(
    frames: usize,
    tokens: usize,
    frame_range: (usize, usize),
    audio_range: (usize, usize),
) -> Result<usize> {
    let infeasible = || Error::BucketingInfeasible {
        frames,
        tokens,
        frame_range,
        audio_range,
    };
    if frame_range.0 == 0
        || frame_range.0 > frame_range.1
        || audio_range.0 == 0
        || audio_range.0 > audio_range.1
    {
        return Err(infeasible());
    }
    (1..=frames.min(tokens))
        .find(|&k| sizes_fit(frames, k, frame_range) && sizes_fit(tokens, k, audio_range))
        .ok_or_else(infeasible)
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_events < 1 {
            return Err(Error::param("num_events", "must be >= 1"));
        }
        if self.dim < 1 {
            return Err(Error::param("dim", "must be >= 1"));
        }
        if self.grid_h < 1 || self.grid_w < 1 {
            return Err(Error::param("grid", "grid_h and grid_w must be >= 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise_sigma", "must be finite and >= 0"));
        }
        if self.orthogonal_latents && self.num_events > self.dim {
            return Err(Error::param(
                "num_events",
                format!(
                    "{} orthogonal latents need dim >= {}",
                    self.num_events, self.num_events
                ),
            ));
        }
        Ok(())
    }

    fn bucket_count(&self) -> Result<usize> {
        match self.num_buckets {
            Some(k) => {
                if sizes_fit(self.num_frames, k, self.frame_bucket_range)
                    && sizes_fit(self.num_audio_tokens, k, self.audio_bucket_range)
                {
                    Ok(k)
                } else {
                    Err(Error::BucketingInfeasible {
                        frames: self.num_frames,
                        tokens: self.num_audio_tokens,
                        frame_range: self.frame_bucket_range,
                        audio_range: self.audio_bucket_range,
                    })
                }
            }
            None => choose_bucket_count(
                self.num_frames,
                self.num_audio_tokens,
                self.frame_bucket_range,
                self.audio_bucket_range,
            ),
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn latents(rng: &mut ChaCha8Rng, n: usize, dim: usize, orthogonal: bool) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = random_unit(rng, dim);
        if orthogonal {
            for u in &out {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-3 {
                continue;
            }
            v.iter_mut().for_each(|a| *a /= norm);
        }
        out.push(v);
    }
    out
}

/// Native boundary positions (first index of buckets 1..k).
fn native_boundaries(buckets: &[usize]) -> Vec<usize> {
    buckets
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] != w[0])
        .map(|(i, _)| i + 1)
        .collect()
}

fn jittered(rng: &mut ChaCha8Rng, native: &[usize], len: usize, jitter: usize) -> Vec<usize> {
    let j = jitter as i64;
    for _ in 0..JITTER_ATTEMPTS {
        let out: Vec<i64> = native
            .iter()
            .map(|&b| b as i64 + rng.random_range(-j..=j))
            .collect();
        let ordered = out.windows(2).all(|w| w[0] < w[1]);
        let inside = out.iter().all(|&b| b >= 1 && b < len as i64);
        if ordered && inside {
            return out.into_iter().map(|b| b as usize).collect();
        }
    }
    native.to_vec()
}

pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let k = spec.bucket_count()?;
    if spec.num_events > k {
        return Err(Error::param(
            "num_events",
            format!(
                "{} events need at least as many native buckets, have {k}",
                spec.num_events
            ),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let latents = latents(&mut rng, spec.num_events, spec.dim, spec.orthogonal_latents);

    let frame_bucket = uniform_buckets(spec.num_frames, k);
    let token_bucket = uniform_buckets(spec.num_audio_tokens, k);
    let frame_native = native_boundaries(&frame_bucket);
    let token_native = native_boundaries(&token_bucket);

    let mut chosen: Vec<usize> = sample(&mut rng, k - 1, spec.num_events - 1).into_vec();
    chosen.sort_unstable();
    let pick = |nat: &[usize]| chosen.iter().map(|&i| nat[i]).collect::<Vec<_>>();
    let video_gt = jittered(
        &mut rng,
        &pick(&frame_native),
        spec.num_frames,
        spec.boundary_jitter,
    );
    let audio_gt = jittered(
        &mut rng,
        &pick(&token_native),
        spec.num_audio_tokens,
        spec.boundary_jitter,
    );

    let event_of = |pos: usize, bounds: &[usize]| bounds.partition_point(|&b| b <= pos);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::param("noise_sigma", e.to_string()))?;
    let draw = |rng: &mut ChaCha8Rng| {
        if spec.noise_sigma == 0.0 {
            0.0
        } else {
            noise.sample(rng)
        }
    };

    let p = spec.grid_h * spec.grid_w;
    let mut video_vals = Vec::with_capacity(spec.num_frames * p * spec.dim);
    for f in 0..spec.num_frames {
        let latent = &latents[event_of(f, &video_gt)];
        for r in 0..spec.grid_h {
            for c in 0..spec.grid_w {
                let gain = if (r + c) % 2 == 0 { 1.5 } else { 0.5 };
                for &l in latent {
                    video_vals.push((gain * l + draw(&mut rng)) as f32);
                }
            }
        }
    }
    let mut audio_vals = Vec::with_capacity(spec.num_audio_tokens * spec.dim);
    for t in 0..spec.num_audio_tokens {
        let latent = &latents[event_of(t, &audio_gt)];
        for &l in latent {
            audio_vals.push((l + draw(&mut rng)) as f32);
        }
    }

    let video = VideoStream::new(
        spec.num_frames,
        spec.grid_h,
        spec.grid_w,
        EmbeddingMatrix::new(spec.num_frames * p, spec.dim, video_vals)?,
        frame_bucket,
    )?;
    let audio = AudioStream::new(
        EmbeddingMatrix::new(spec.num_audio_tokens, spec.dim, audio_vals)?,
        token_bucket,
    )?;
    Ok(Scenario {
        video,
        audio,
        ground_truth: GroundTruth {
            video: video_gt,
            audio: audio_gt,
        },
        latents,
    })
}
