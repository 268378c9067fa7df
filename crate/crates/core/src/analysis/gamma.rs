use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mxformat::split_pow2;
use crate::quantizer::{block_max, BlockQuantConfig};
use crate::tensor::{block_ranges, Tensor};
use crate::tensorstore::{tensor_rng, Distribution};

pub const GAMMA_BINS: usize = 100;
pub const MIN_GAMMA_BLOCKS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaStats {
    /// δ per non-degenerate block, in block order. Not serialized.
    #[serde(skip)]
    pub delta_samples: Vec<f64>,
    pub blocks: usize,
    /// All-zero blocks, excluded from every statistic.
    pub skipped: usize,
    pub mean_delta: f64,
    pub mean_gamma: f64,
    pub rmse_gamma_minus_1: f64,
    /// `sqrt(mean δ²)`; `1/sqrt(3)` for uniform δ.
    pub rmse_delta: f64,
    /// Counts over `[0, 1)` in `GAMMA_BINS` equal bins.
    pub histogram: Vec<u64>,
}

/// `δ = ⌈log2 s*⌉ − log2 s*` for a positive ideal scale, exact 0 on powers of two.
pub fn block_delta(s_star: f64) -> f64 {
    let (_, f) = split_pow2(s_star);
    if f == 1.0 {
        0.0
    } else {
        1.0 - f.log2()
    }
}

/// Builds the summary from per-block ideal scales (0 marks a degenerate block).
fn from_scales(scales: &[f64]) -> Result<GammaStats> {
    if scales.len() < MIN_GAMMA_BLOCKS {
        return Err(Error::InvalidConfig(format!(
            "gamma statistics need at least {MIN_GAMMA_BLOCKS} blocks, got {}",
            scales.len()
        )));
    }
    let delta_samples: Vec<f64> = scales
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| block_delta(s))
        .collect();
    let n = delta_samples.len();
    let skipped = scales.len() - n;
    let mut histogram = vec![0u64; GAMMA_BINS];
    let (mut sd, mut sg, mut sg2, mut sd2) = (0.0, 0.0, 0.0, 0.0);
    for &d in &delta_samples {
        let g = d.exp2();
        sd += d;
        sd2 += d * d;
        sg += g;
        sg2 += (g - 1.0) * (g - 1.0);
        histogram[((d * GAMMA_BINS as f64) as usize).min(GAMMA_BINS - 1)] += 1;
    }
    let mean = |v: f64| if n == 0 { 0.0 } else { v / n as f64 };
    Ok(GammaStats {
        blocks: n,
        skipped,
        mean_delta: mean(sd),
        mean_gamma: mean(sg),
        rmse_gamma_minus_1: mean(sg2).sqrt(),
        rmse_delta: mean(sd2).sqrt(),
        histogram,
        delta_samples,
    })
}

/// Statistics over explicit blocks.
pub fn gamma_stats_blocks<'a, I>(blocks: I, cfg: &BlockQuantConfig) -> Result<GammaStats>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let q = cfg.grid.q_max();
    let scales = blocks
        .into_iter()
        .map(|b| Ok(block_max(b)? / q))
        .collect::<Result<Vec<_>>>()?;
    from_scales(&scales)
}

/// Statistics over every block of every tensor.
pub fn gamma_stats_tensors<'a, I>(tensors: I, cfg: &BlockQuantConfig) -> Result<GammaStats>
where
    I: IntoIterator<Item = &'a Tensor>,
{
    cfg.validate()?;
    let mut scales = Vec::new();
    for t in tensors {
        for (a, b) in block_ranges(t.numel(), t.cols(), cfg.block_size) {
            scales.push(block_max(&t.data[a..b])? / cfg.grid.q_max());
        }
    }
    from_scales(&scales)
}

/// Statistics over `blocks` synthetic blocks of `cfg.block_size` elements; block
/// `i` is drawn from stream `i` of `seed`.
pub fn gamma_stats_synthetic(
    distribution: Distribution,
    blocks: usize,
    cfg: &BlockQuantConfig,
    seed: u64,
) -> Result<GammaStats> {
    cfg.validate()?;
    distribution.validate()?;
    let b = cfg.block_size;
    let q = cfg.grid.q_max();
    let scales = (0..blocks)
        .into_par_iter()
        .map_init(
            || vec![0.0; b],
            |buf, i| {
                let mut rng = tensor_rng(seed, i as u64);
                distribution.fill(&mut rng, buf)?;
                Ok(block_max(buf)? / q)
            },
        )
        .collect::<Result<Vec<_>>>()?;
    from_scales(&scales)
}
