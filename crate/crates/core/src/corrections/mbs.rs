use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{block_max, qdq_block_into, BlockQuantConfig};
use crate::tensor::Tensor;

/// Number of E0M8 mantissa levels per macro block.
pub const MBS_LEVELS: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MbsSelection {
    /// Minimise the macro block's reconstruction error over all 256 codes.
    #[default]
    Exhaustive,
    /// `k = ⌊(2^δ − 1) · 256⌋` from the macro-block maximum, which puts the
    /// prescaled ideal scale of the max-holding block within one mantissa step
    /// below a power of two.
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MbsConfig {
    pub macro_block: usize,
    pub selection: MbsSelection,
}

impl Default for MbsConfig {
    fn default() -> Self {
        Self {
            macro_block: 128,
            selection: MbsSelection::Exhaustive,
        }
    }
}

impl MbsConfig {
    pub fn validate(&self, qcfg: &BlockQuantConfig) -> Result<()> {
        qcfg.validate()?;
        if self.macro_block == 0 || !self.macro_block.is_multiple_of(qcfg.block_size) {
            return Err(Error::InvalidConfig(format!(
                "macro block {} must be a positive multiple of the block size {}",
                self.macro_block, qcfg.block_size
            )));
        }
        Ok(())
    }
}

/// Prescale, quantize, postscale of one macro block with mantissa code `k`:
/// `x̂ = Q((1 + k/256)·x) / (1 + k/256)`, with `Q` applied per sub-block.
pub fn mbs_qdq_with_code(x: &[f64], k: u8, qcfg: &BlockQuantConfig, out: &mut [f64]) -> Result<()> {
    let f = 1.0 + f64::from(k) / f64::from(MBS_LEVELS);
    let mut scaled = [0.0f64; 64];
    for (xs, os) in x
        .chunks(qcfg.block_size)
        .zip(out.chunks_mut(qcfg.block_size))
    {
        if xs.len() <= scaled.len() {
            let y = &mut scaled[..xs.len()];
            y.iter_mut().zip(xs).for_each(|(y, &v)| *y = f * v);
            qdq_block_into(y, qcfg, os)?;
        } else {
            let y: Vec<f64> = xs.iter().map(|&v| f * v).collect();
            qdq_block_into(&y, qcfg, os)?;
        }
        os.iter_mut().for_each(|o| *o /= f);
    }
    Ok(())
}

fn sq_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mantissa code for one macro block. All-zero blocks get `k = 0`; exhaustive ties
/// resolve to the smallest `k`.
pub fn mbs_select_mantissa(x: &[f64], cfg: &MbsConfig, qcfg: &BlockQuantConfig) -> Result<u8> {
    let m = block_max(x)?;
    if m == 0.0 {
        return Ok(0);
    }
    match cfg.selection {
        MbsSelection::Exhaustive => {
            let mut buf = vec![0.0; x.len()];
            let mut best = (f64::INFINITY, 0u8);
            for k in 0..=255u8 {
                mbs_qdq_with_code(x, k, qcfg, &mut buf)?;
                let e = sq_err(&buf, x);
                if e < best.0 {
                    best = (e, k);
                }
            }
            Ok(best.1)
        }
        MbsSelection::ClosedForm => {
            let s_star = m / qcfg.grid.q_max();
            let gamma = qcfg.with_mantissa_bits(0).coded_scale(m)?.decode() / s_star;
            let k = ((gamma - 1.0) * f64::from(MBS_LEVELS)).floor();
            Ok(k.clamp(0.0, 255.0) as u8)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbsOutput {
    pub tensor: Tensor,
    /// One mantissa byte per macro block, in storage order.
    pub codes: Vec<u8>,
}

/// MBS quantize-dequantize of a whole tensor. Macro blocks tile each innermost row.
pub fn mbs_qdq(tensor: &Tensor, cfg: &MbsConfig, qcfg: &BlockQuantConfig) -> Result<MbsOutput> {
    cfg.validate(qcfg)?;
    let cols = tensor.cols().max(1);
    let mut out = vec![0.0; tensor.numel()];
    let codes: Vec<Vec<u8>> = out
        .par_chunks_mut(cols)
        .zip(tensor.data.par_chunks(cols))
        .map(|(orow, irow)| {
            orow.chunks_mut(cfg.macro_block)
                .zip(irow.chunks(cfg.macro_block))
                .map(|(o, x)| {
                    let k = mbs_select_mantissa(x, cfg, qcfg)?;
                    mbs_qdq_with_code(x, k, qcfg, o)?;
                    Ok(k)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(MbsOutput {
        tensor: tensor.with_data(out),
        codes: codes.into_iter().flatten().collect(),
    })
}
