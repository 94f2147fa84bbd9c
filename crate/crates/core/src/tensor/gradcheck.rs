use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ParamId, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates sampled across all trainable parameters.
    pub coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            coords: 256,
            seed: 0,
        }
    }
}

/// Worst coordinate of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the gradients already accumulated in `params` against central
/// differences of `loss_fn`.
///
/// Only trainable parameters are sampled; a parameter with no gradient
/// buffer is treated as having a zero analytic gradient. Every perturbed
/// value is restored bit-for-bit before returning.
pub fn finite_diff_check<F>(params: &mut ParamStore, mut loss_fn: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let coords: Vec<(ParamId, usize)> = params
        .ids()
        .filter(|&id| !params.is_frozen(id))
        .flat_map(|id| (0..params.get(id).numel()).map(move |i| (id, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picked: Vec<usize> = if coords.len() <= cfg.coords {
        (0..coords.len()).collect()
    } else {
        sample(&mut rng, coords.len(), cfg.coords).into_vec()
    };
    picked.sort_unstable();

    let mut per_param: Vec<ParamCheck> = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    for &c in &picked {
        let (id, i) = coords[c];
        let analytic = params.get(id).grad().map_or(0.0, |g| g[i]);
        let original = params.get(id).data()[i];
        params.get_mut(id).data_mut()[i] = original + cfg.eps;
        let plus = loss_fn(params);
        params.get_mut(id).data_mut()[i] = original - cfg.eps;
        let minus = loss_fn(params);
        params.get_mut(id).data_mut()[i] = original;
        let numeric = (plus? - minus?) / (2.0 * cfg.eps);
        let err = relative_error(analytic, numeric);
        max_rel_error = max_rel_error.max(err);
        let name = params.name(id);
        match per_param.last_mut() {
            Some(last) if last.name == name => {
                last.checked += 1;
                last.max_rel_error = last.max_rel_error.max(err);
            }
            _ => per_param.push(ParamCheck {
                name: name.to_owned(),
                checked: 1,
                max_rel_error: err,
            }),
        }
    }
    Ok(GradCheckReport {
        params: per_param,
        max_rel_error,
        checked: picked.len(),
    })
}
