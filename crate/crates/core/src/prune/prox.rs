//! Factorized projections onto the L0 budget set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sg::dynamic_range_of;

/// How primitives compete for the `kappa_o` opacity slots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpacityOperator {
    /// Keep the largest `|o + lambda_o|`.
    #[default]
    Magnitude,
    /// Keep the largest accumulated blending weight.
    Importance,
}

/// How lobes compete for the `kappa_s` sharpness slots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SharpnessOperator {
    /// Keep the largest `|s + lambda_s|`.
    #[default]
    Sharpness,
    /// Keep the largest dynamic range `|a| (1 - exp(-2 s))`.
    Range,
}

/// Budgets and selection rules for one projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxConfig {
    pub kappa_o: usize,
    pub kappa_s: usize,
    pub opacity: OpacityOperator,
    pub sharpness: SharpnessOperator,
}

/// Side information some operators need.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProxScores<'a> {
    /// Per-primitive importance, required by [`OpacityOperator::Importance`].
    pub importance: Option<&'a [f64]>,
    /// Per-slot amplitude norms, required by [`SharpnessOperator::Range`].
    pub amplitude_norms: Option<&'a [f64]>,
}

/// Mask of the `k` entries with the largest `keys`; ties go to the lower index.
pub fn top_k_mask(keys: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    let mut mask = vec![false; keys.len()];
    for &i in order.iter().take(k) {
        mask[i] = true;
    }
    mask
}

/// Euclidean projection of `x` onto vectors with at most `k` nonzeros.
pub fn project_top_k(x: &[f64], k: usize) -> Vec<f64> {
    let keys: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    apply_mask(x, &top_k_mask(&keys, k))
}

fn apply_mask(x: &[f64], mask: &[bool]) -> Vec<f64> {
    x.iter().zip(mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect()
}

/// Projects `(o_in, s_in)` so that at most `kappa_o` opacities and `kappa_s`
/// sharpness slots stay nonzero. Kept entries are copied unchanged.
pub fn prox_project(
    o_in: &[f64],
    s_in: &[f64],
    cfg: &ProxConfig,
    scores: &ProxScores<'_>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if cfg.kappa_o > o_in.len() {
        return Err(Error::Config(format!(
            "opacity budget {} exceeds {} primitives",
            cfg.kappa_o,
            o_in.len()
        )));
    }
    if cfg.kappa_s > s_in.len() {
        return Err(Error::Config(format!(
            "sharpness budget {} exceeds {} lobe slots",
            cfg.kappa_s,
            s_in.len()
        )));
    }
    let o_keys: Vec<f64> = match cfg.opacity {
        OpacityOperator::Magnitude => o_in.iter().map(|v| v.abs()).collect(),
        OpacityOperator::Importance => {
            let imp = scores
                .importance
                .ok_or_else(|| Error::Config("importance operator needs importance scores".into()))?;
            check_len("importance", imp.len(), o_in.len())?;
            imp.to_vec()
        }
    };
    let s_keys: Vec<f64> = match cfg.sharpness {
        SharpnessOperator::Sharpness => s_in.iter().map(|v| v.abs()).collect(),
        SharpnessOperator::Range => {
            let amps = scores
                .amplitude_norms
                .ok_or_else(|| Error::Config("range operator needs amplitude norms".into()))?;
            check_len("amplitude norms", amps.len(), s_in.len())?;
            s_in.iter().zip(amps).map(|(&s, &a)| dynamic_range_of(a, s)).collect()
        }
    };
    Ok((
        apply_mask(o_in, &top_k_mask(&o_keys, cfg.kappa_o)),
        apply_mask(s_in, &top_k_mask(&s_keys, cfg.kappa_s)),
    ))
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Shape(format!("{got} {what} for {want} entries")))
    }
}
