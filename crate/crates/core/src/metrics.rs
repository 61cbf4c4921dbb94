//! Cost proxies: prefill cost of a token count and per-turn cost when a
//! compressed context is reused across turns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prefill cost `c_lin * n + c_quad * n^2` plus fixed per-run and per-turn
/// costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub c_quad: f64,
    pub c_lin: f64,
    pub preprocess_cost: f64,
    pub decode_cost_per_turn: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            c_quad: 1.0,
            c_lin: 4096.0,
            preprocess_cost: 1.0e7,
            decode_cost_per_turn: 1.0e6,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("c_quad", self.c_quad),
            ("c_lin", self.c_lin),
            ("preprocess_cost", self.preprocess_cost),
            ("decode_cost_per_turn", self.decode_cost_per_turn),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(field, "must be finite and >= 0"));
            }
        }
        if self.c_quad + self.c_lin <= 0.0 {
            return Err(Error::param("c_quad", "c_quad + c_lin must be positive"));
        }
        Ok(())
    }

    pub fn prefill(&self, n: usize) -> f64 {
        let n = n as f64;
        self.c_lin * n + self.c_quad * n * n
    }
}

/// Prefill cost of `n_after` tokens relative to `n_before`.
pub fn flops_proxy(n_before: usize, n_after: usize, model: &CostModel) -> Result<f64> {
    model.validate()?;
    if n_after == 0 || n_after > n_before {
        return Err(Error::input(
            "n_after",
            format!("need 0 < n_after <= n_before, got {n_after} and {n_before}"),
        ));
    }
    Ok(model.prefill(n_after) / model.prefill(n_before))
}

/// Per-turn cost over `k` turns when the compressed context is built once.
pub fn kv_reuse_amortized(k: u64, model: &CostModel, n_after: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::input("k", "turn count must be >= 1"));
    }
    let k = k as f64;
    Ok((model.preprocess_cost + model.prefill(n_after) + k * model.decode_cost_per_turn) / k)
}

/// Per-turn cost when the context is rebuilt every turn; independent of `k`.
pub fn no_reuse_per_turn(model: &CostModel, n_after: usize) -> f64 {
    model.preprocess_cost + model.prefill(n_after) + model.decode_cost_per_turn
}

/// `(k, amortized, no_reuse)` rows for each turn count.
pub fn amortization_series(
    ks: &[u64],
    model: &CostModel,
    n_after: usize,
) -> Result<Vec<(u64, f64, f64)>> {
    ks.iter()
        .map(|&k| {
            Ok((
                k,
                kv_reuse_amortized(k, model, n_after)?,
                no_reuse_per_turn(model, n_after),
            ))
        })
        .collect()
}
