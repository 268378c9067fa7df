use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gamma::block_delta;
use crate::decomposition::MeanStd;
use crate::error::{Error, Result};
use crate::quantizer::{block_max, BlockQuantConfig};
use crate::tensorstore::{tensor_rng, Distribution};

/// How each layer's δ is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DeltaSampler {
    /// δ ~ Uniform[0, 1).
    Uniform,
    /// δ of a single synthetic block per layer.
    OnePerLayer {
        distribution: Distribution,
        block_size: usize,
    },
    /// Mean δ over `blocks` synthetic blocks per layer.
    MeanOverBlocks {
        distribution: Distribution,
        block_size: usize,
        blocks: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltConfig {
    pub layers: usize,
    pub trials: usize,
    pub seed: u64,
    pub sampler: DeltaSampler,
}

impl CltConfig {
    pub fn uniform(layers: usize, trials: usize, seed: u64) -> Self {
        Self {
            layers,
            trials,
            seed,
            sampler: DeltaSampler::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub layers: usize,
    pub trials: usize,
    /// Mean of `Σ_l δ_l` (uncentered).
    pub mean_sum: f64,
    /// Sample std of `Σ_l δ_l`, i.e. of the centered sum.
    pub std_sum: f64,
    /// `sqrt(L / 12)`, the uniform-δ limit.
    pub theory_std: f64,
    /// `[2^-std, 2^std]`: one-σ band of the centered multiplicative factor.
    pub band_pow2: [f64; 2],
    /// `[e^-std, e^std]`.
    pub band_exp: [f64; 2],
    /// `2^mean_sum`: the uncentered systematic factor.
    pub mean_factor_pow2: f64,
    /// `[2^(mean-std), 2^(mean+std)]`.
    pub band_uncentered_pow2: [f64; 2],
}

/// Monte-Carlo distribution of the cumulative log2 scale bias over `L` layers.
/// Trial `t` draws from stream `t` of `seed`.
pub fn cumulative_scale_bias(cfg: &CltConfig) -> Result<CltReport> {
    if cfg.layers == 0 {
        return Err(Error::InvalidConfig(
            "layer count must be at least 1".into(),
        ));
    }
    if cfg.trials < 1000 {
        return Err(Error::InvalidConfig(format!(
            "cumulative bias needs at least 1000 trials, got {}",
            cfg.trials
        )));
    }
    match cfg.sampler {
        DeltaSampler::Uniform => {}
        DeltaSampler::OnePerLayer {
            distribution,
            block_size,
        }
        | DeltaSampler::MeanOverBlocks {
            distribution,
            block_size,
            ..
        } => {
            distribution.validate()?;
            BlockQuantConfig::new(block_size, 0)?;
        }
    }
    if let DeltaSampler::MeanOverBlocks { blocks: 0, .. } = cfg.sampler {
        return Err(Error::InvalidConfig(
            "blocks per layer must be at least 1".into(),
        ));
    }
    let q_max = BlockQuantConfig::default().grid.q_max();
    let sums = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = tensor_rng(cfg.seed, t as u64);
            let mut sum = 0.0;
            match cfg.sampler {
                DeltaSampler::Uniform => {
                    for _ in 0..cfg.layers {
                        sum += rng.random::<f64>();
                    }
                }
                DeltaSampler::OnePerLayer {
                    distribution,
                    block_size,
                } => {
                    let mut buf = vec![0.0; block_size];
                    for _ in 0..cfg.layers {
                        sum += synthetic_delta(&distribution, &mut rng, &mut buf, q_max)?;
                    }
                }
                DeltaSampler::MeanOverBlocks {
                    distribution,
                    block_size,
                    blocks,
                } => {
                    let mut buf = vec![0.0; block_size];
                    for _ in 0..cfg.layers {
                        let mut layer = 0.0;
                        for _ in 0..blocks {
                            layer += synthetic_delta(&distribution, &mut rng, &mut buf, q_max)?;
                        }
                        sum += layer / blocks as f64;
                    }
                }
            }
            Ok(sum)
        })
        .collect::<Result<Vec<f64>>>()?;
    let ms = MeanStd::of(&sums);
    let sd = ms.std;
    Ok(CltReport {
        layers: cfg.layers,
        trials: cfg.trials,
        mean_sum: ms.mean,
        std_sum: sd,
        theory_std: (cfg.layers as f64 / 12.0).sqrt(),
        band_pow2: [(-sd).exp2(), sd.exp2()],
        band_exp: [(-sd).exp(), sd.exp()],
        mean_factor_pow2: ms.mean.exp2(),
        band_uncentered_pow2: [(ms.mean - sd).exp2(), (ms.mean + sd).exp2()],
    })
}

fn synthetic_delta<R: Rng>(
    d: &Distribution,
    rng: &mut R,
    buf: &mut [f64],
    q_max: f64,
) -> Result<f64> {
    // Redraw the (probability-zero) all-zero block rather than bias the sum.
    loop {
        d.fill(rng, buf)?;
        let m = block_max(buf)?;
        if m > 0.0 {
            return Ok(block_delta(m / q_max));
        }
    }
}
