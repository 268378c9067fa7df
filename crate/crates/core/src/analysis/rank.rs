use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{deadzone_mask, BlockQuantConfig};
use crate::tensor::{block_ranges, Tensor};
use crate::tensorstore::{synth_tensor, Distribution};

fn as_matrix(t: &Tensor) -> Result<DMatrix<f64>> {
    if t.shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "expected a 2-D matrix, got shape {:?}",
            t.shape
        )));
    }
    t.check_finite()?;
    Ok(DMatrix::from_row_slice(t.shape[0], t.shape[1], &t.data))
}

/// `r_eff = (Σ σ_i)² / Σ σ_i²`.
pub fn effective_rank(t: &Tensor) -> Result<f64> {
    let m = as_matrix(t)?;
    let sv = m.singular_values();
    let nuclear: f64 = sv.iter().sum();
    let frob2: f64 = sv.iter().map(|s| s * s).sum();
    if frob2 == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(nuclear * nuclear / frob2)
}

/// Zeroes the ideal-scale deadzone of every block, leaving other elements as is.
pub fn deadzone_truncate(t: &Tensor, cfg: &BlockQuantConfig) -> Result<Tensor> {
    cfg.validate()?;
    let mut out = t.data.clone();
    for (a, b) in block_ranges(t.numel(), t.cols(), cfg.block_size) {
        for (i, dead) in deadzone_mask(&t.data[a..b], cfg)?.into_iter().enumerate() {
            if dead {
                out[a + i] = 0.0;
            }
        }
    }
    Ok(t.with_data(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTrials {
    pub trials: usize,
    pub reduced: usize,
    pub mean_r_eff: f64,
    pub mean_r_eff_truncated: f64,
}

/// Seeded `n × n` Gaussian trials comparing `r_eff` before and after deadzone
/// truncation; trial `i` uses `seed + i`.
pub fn deadzone_rank_trials(
    n: usize,
    trials: usize,
    seed: u64,
    cfg: &BlockQuantConfig,
) -> Result<RankTrials> {
    let pairs = (0..trials)
        .into_par_iter()
        .map(|i| {
            let w = synth_tensor(Distribution::Gaussian, &[n, n], seed.wrapping_add(i as u64))?;
            let before = effective_rank(&w)?;
            let after = effective_rank(&deadzone_truncate(&w, cfg)?)?;
            Ok((before, after))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = trials.max(1) as f64;
    Ok(RankTrials {
        trials,
        reduced: pairs.iter().filter(|(b, a)| a < b).count(),
        mean_r_eff: pairs.iter().map(|p| p.0).sum::<f64>() / k,
        mean_r_eff_truncated: pairs.iter().map(|p| p.1).sum::<f64>() / k,
    })
}
