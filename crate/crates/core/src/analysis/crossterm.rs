use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::decompose_block_into;
use crate::error::{Error, Result};
use crate::quantizer::{block_max, BlockQuantConfig};
use crate::tensorstore::{tensor_rng, Distribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTermPoint {
    pub block_size: usize,
    pub blocks: usize,
    /// Pooled `cos(e_scale, e_grid)`.
    pub cos_scale_grid: f64,
    /// `2⟨e_scale, e_grid⟩ / ‖e‖²`.
    pub normalized_cross: f64,
    /// Least-squares slope of `a_b` on `γ_b − 1` (through the origin), where
    /// `a_b = mean_i(e_scale,i · (e_dz,i + e_grid,i)) / s*²`.
    pub gamma_slope: f64,
    /// RMS of `a_b` about that fit: the per-block cross term left once its
    /// systematic dependence on `γ_b` is removed.
    pub centered_cross: f64,
}

#[derive(Default, Clone, Copy)]
struct BlockContrib {
    ss: f64,
    gg: f64,
    tt: f64,
    sg: f64,
    a: f64,
    gm1: f64,
    valid: bool,
}

fn contrib(x: &[f64], cfg: &BlockQuantConfig, bufs: &mut [Vec<f64>; 4]) -> Result<BlockContrib> {
    let n = x.len();
    let [s, d, g, t] = bufs;
    decompose_block_into(x, cfg, &mut s[..n], &mut d[..n], &mut g[..n], &mut t[..n])?;
    let m = block_max(x)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let mut c = BlockContrib {
        ss: dot(&s[..n], &s[..n]),
        gg: dot(&g[..n], &g[..n]),
        tt: dot(&t[..n], &t[..n]),
        sg: dot(&s[..n], &g[..n]),
        ..Default::default()
    };
    if m > 0.0 {
        let s_star = m / cfg.grid.q_max();
        let elem: f64 = (0..n).map(|i| s[i] * (d[i] + g[i])).sum();
        c.a = elem / n as f64 / (s_star * s_star);
        c.gm1 = cfg.coded_scale(m)?.decode() / s_star - 1.0;
        c.valid = true;
    }
    Ok(c)
}

fn summarize(block_size: usize, parts: &[BlockContrib]) -> CrossTermPoint {
    let (mut ss, mut gg, mut tt, mut sg, mut ag, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for c in parts {
        ss += c.ss;
        gg += c.gg;
        tt += c.tt;
        sg += c.sg;
        if c.valid {
            ag += c.a * c.gm1;
            g2 += c.gm1 * c.gm1;
        }
    }
    let slope = if g2 > 0.0 { ag / g2 } else { 0.0 };
    let valid: Vec<&BlockContrib> = parts.iter().filter(|c| c.valid).collect();
    let resid = valid
        .iter()
        .map(|c| (c.a - slope * c.gm1).powi(2))
        .sum::<f64>();
    let denom = (ss * gg).sqrt();
    CrossTermPoint {
        block_size,
        blocks: parts.len(),
        cos_scale_grid: if denom > 0.0 { sg / denom } else { 0.0 },
        normalized_cross: if tt > 0.0 { 2.0 * sg / tt } else { 0.0 },
        gamma_slope: slope,
        centered_cross: if valid.is_empty() {
            0.0
        } else {
            (resid / valid.len() as f64).sqrt()
        },
    }
}

/// Cross-term statistics for contiguous blocks of `block_size` in `data`.
pub fn cross_term_for_blocks(data: &[f64], block_size: usize) -> Result<CrossTermPoint> {
    let cfg = BlockQuantConfig::new(block_size, 0)?;
    let mut bufs = [
        vec![0.0; block_size],
        vec![0.0; block_size],
        vec![0.0; block_size],
        vec![0.0; block_size],
    ];
    let parts = data
        .chunks(block_size)
        .map(|b| contrib(b, &cfg, &mut bufs))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(block_size, &parts))
}

/// One point per block size; block `i` of the `j`-th size uses stream
/// `(j << 32) | i` of `seed`.
pub fn cross_term_vs_blocksize(
    distribution: Distribution,
    block_sizes: &[usize],
    blocks_per_size: usize,
    seed: u64,
) -> Result<Vec<CrossTermPoint>> {
    distribution.validate()?;
    if let Some(&b) = block_sizes.iter().find(|&&b| b < 2) {
        return Err(Error::InvalidConfig(format!(
            "block sizes must be at least 2, got {b}"
        )));
    }
    block_sizes
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let cfg = BlockQuantConfig::new(b, 0)?;
            let parts = (0..blocks_per_size)
                .into_par_iter()
                .map_init(
                    || {
                        (
                            vec![0.0; b],
                            [vec![0.0; b], vec![0.0; b], vec![0.0; b], vec![0.0; b]],
                        )
                    },
                    |(x, bufs), i| {
                        let mut rng = tensor_rng(seed, ((j as u64) << 32) | i as u64);
                        distribution.fill(&mut rng, x)?;
                        contrib(x, &cfg, bufs)
                    },
                )
                .collect::<Result<Vec<_>>>()?;
            Ok(summarize(b, &parts))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorstore::synth_tensor;

    #[test]
    fn sign_flip_is_symmetric() {
        let t = synth_tensor(Distribution::Gaussian, &[4096], 9).unwrap();
        let neg: Vec<f64> = t.data.iter().map(|v| -v).collect();
        let a = cross_term_for_blocks(&t.data, 32).unwrap();
        let b = cross_term_for_blocks(&neg, 32).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_b32_is_anticorrelated() {
        let p = cross_term_vs_blocksize(Distribution::Gaussian, &[32], 20_000, 0).unwrap();
        assert!(
            p[0].cos_scale_grid < -0.5 && p[0].cos_scale_grid > -0.8,
            "{:?}",
            p[0]
        );
        assert!(p[0].normalized_cross < 0.0);
    }

    #[test]
    fn rejects_tiny_blocks() {
        assert!(cross_term_vs_blocksize(Distribution::Gaussian, &[1], 10, 0).is_err());
    }
}
