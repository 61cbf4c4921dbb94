//! Hyperparameters for chunk refinement and cooperative compression.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Every tunable of the two-stage compressor.
///
/// `Default` yields the reference configuration: base merging ratios 0.3 / 0.6,
/// thresholds 0.82 / 0.58, cross-modal coefficient 0.5, chunk penalty 0.02,
/// video retention in [0.18, 0.55], audio merging ratio in [0.1, 0.9],
/// chunks of 3-5 frames and 90-140 audio tokens, DP band ratio 2.0 with a
/// 48-token minimum window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Base audio merging ratio.
    pub rho_a: f64,
    /// Base video merging ratio; `1 - rho_v` is the reference video retention.
    pub rho_v: f64,
    /// Spatial (parent/child) cosine threshold; above 1 never keeps a parent.
    pub tau_s: f64,
    /// Temporal (consecutive-frame) cosine threshold; above 1 never merges.
    pub tau_t: f64,
    /// Cross-modal audio budget coefficient.
    pub beta: f64,
    /// Per-chunk penalty of the segmentation objective.
    pub lambda_c: f64,
    /// Adjacent-token cosine below which an audio token opens a new interval.
    pub theta_anchor: f64,
    /// Fraction of a chunk's audio tokens kept as contextual anchors.
    pub contextual_ratio: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Bounds on the audio merging ratio.
    pub a_min: f64,
    pub a_max: f64,
    /// Tilt applied to the video clamp targets by chunk heterogeneity.
    pub alpha: f64,
    /// Block size for audio merge-candidate selection.
    pub group_size: usize,
    pub sa_min: usize,
    pub sa_max: usize,
    pub sv_min: usize,
    pub sv_max: usize,
    /// DP band ratio.
    pub dp_band_ratio: f64,
    /// Minimum DP band half-width, in audio tokens.
    pub dp_min_window: usize,
    /// Boundary buckets see their single inner neighbour instead of only themselves.
    pub one_sided_boundary: bool,
    /// Enables the `alpha` tilt of the video clamp targets.
    pub alpha_modulation: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            rho_a: 0.3,
            rho_v: 0.6,
            tau_s: 0.82,
            tau_t: 0.58,
            beta: 0.5,
            lambda_c: 0.02,
            theta_anchor: 0.4,
            contextual_ratio: 0.05,
            v_min: 0.18,
            v_max: 0.55,
            a_min: 0.1,
            a_max: 0.9,
            alpha: 0.15,
            group_size: 3,
            sa_min: 90,
            sa_max: 140,
            sv_min: 3,
            sv_max: 5,
            dp_band_ratio: 2.0,
            dp_min_window: 48,
            one_sided_boundary: false,
            alpha_modulation: true,
        }
    }
}

impl HyperParams {
    /// Settings under which neither modality is compressed: every spatial split
    /// is taken, no temporal merge fires, video retention may reach 1 and the
    /// audio merging ratio is pinned to 0.
    pub fn identity() -> Self {
        Self {
            rho_a: 0.0,
            tau_s: 2.0,
            tau_t: 2.0,
            beta: 0.0,
            v_min: 0.0,
            v_max: 1.0,
            a_min: 0.0,
            a_max: 0.0,
            contextual_ratio: 0.0,
            alpha_modulation: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("rho_a", self.rho_a),
            ("rho_v", self.rho_v),
            ("beta", self.beta),
            ("theta_anchor", self.theta_anchor),
            ("contextual_ratio", self.contextual_ratio),
            ("v_min", self.v_min),
            ("v_max", self.v_max),
            ("a_min", self.a_min),
            ("a_max", self.a_max),
        ];
        for (field, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(field, format!("{v} outside [0, 1]")));
            }
        }
        for (field, v) in [("tau_s", self.tau_s), ("tau_t", self.tau_t)] {
            if !(-1.0..=2.0).contains(&v) {
                return Err(Error::param(field, format!("{v} outside [-1, 2]")));
            }
        }
        if !(self.lambda_c >= 0.0 && self.lambda_c.is_finite()) {
            return Err(Error::param("lambda_c", "must be finite and >= 0"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha", "must be finite and >= 0"));
        }
        if !(self.dp_band_ratio >= 1.0 && self.dp_band_ratio.is_finite()) {
            return Err(Error::param("dp_band_ratio", "must be finite and >= 1"));
        }
        if self.dp_min_window < 1 {
            return Err(Error::param("dp_min_window", "must be >= 1"));
        }
        if self.group_size < 1 {
            return Err(Error::param("group_size", "must be >= 1"));
        }
        if self.v_min > self.v_max {
            return Err(Error::param("v_min", "v_min exceeds v_max"));
        }
        if self.a_min > self.a_max {
            return Err(Error::param("a_min", "a_min exceeds a_max"));
        }
        if self.sa_min < 1 || self.sa_min > self.sa_max {
            return Err(Error::param("sa_min", "need 1 <= sa_min <= sa_max"));
        }
        if self.sv_min < 1 || self.sv_min > self.sv_max {
            return Err(Error::param("sv_min", "need 1 <= sv_min <= sv_max"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("params serialize");
        hex::encode(Sha256::digest(&json))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: HyperParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}
