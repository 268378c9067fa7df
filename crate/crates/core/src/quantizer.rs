//! Block quantizer `Q`, ideal-scale quantizer `Q*`, deadzone classification and
//! tensor-level quantize-dequantize (QDQ) emulation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mxformat::{
    encode_scale_ceiling, pow2, ElementGrid, GridCode, ScaleCode, MAX_MANTISSA_BITS,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockQuantConfig {
    pub block_size: usize,
    pub scale_mantissa_bits: u8,
    #[serde(skip, default)]
    pub grid: ElementGrid,
}

impl Default for BlockQuantConfig {
    fn default() -> Self {
        Self {
            block_size: 32,
            scale_mantissa_bits: 0,
            grid: ElementGrid::E2M1,
        }
    }
}

impl BlockQuantConfig {
    pub fn new(block_size: usize, scale_mantissa_bits: u8) -> Result<Self> {
        let cfg = Self {
            block_size,
            scale_mantissa_bits,
            grid: ElementGrid::E2M1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_mantissa_bits(self, bits: u8) -> Self {
        Self {
            scale_mantissa_bits: bits,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::InvalidConfig("block size must be at least 1".into()));
        }
        if self.scale_mantissa_bits > MAX_MANTISSA_BITS {
            return Err(Error::InvalidMantissaBits(self.scale_mantissa_bits));
        }
        Ok(())
    }

    /// Decoded block scale for block maximum `m` (unit sentinel for `m == 0`).
    pub(crate) fn coded_scale(&self, m: f64) -> Result<ScaleCode> {
        if m == 0.0 {
            return Ok(ScaleCode::UNIT);
        }
        // m / q_max loses bits below the normal range; divide a rescaled copy.
        const LIFT: i32 = 128;
        if m >= pow2(-1022 + LIFT) {
            return encode_scale_ceiling(m / self.grid.q_max(), self.scale_mantissa_bits);
        }
        let mut code =
            encode_scale_ceiling(m * pow2(LIFT) / self.grid.q_max(), self.scale_mantissa_bits)?;
        code.exponent -= LIFT;
        if code.decode() == 0.0 {
            return Err(Error::ScaleUnderflow(m));
        }
        Ok(code)
    }
}

/// How a block's elements were scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BlockScale {
    /// E8Mk code; dequantized value is `decode(scale) · g`.
    Coded(ScaleCode),
    /// Unquantized `s* = m_b / q_max`; dequantized value is `g · m_b / q_max`.
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockQuant {
    pub codes: Vec<GridCode>,
    pub scale: BlockScale,
    pub ideal_scale: f64,
    pub block_max: f64,
}

impl BlockQuant {
    pub fn dequantize(&self, grid: &ElementGrid) -> Vec<f64> {
        match self.scale {
            BlockScale::Coded(code) => {
                let s = code.decode();
                self.codes.iter().map(|&c| grid.decode(c) * s).collect()
            }
            BlockScale::Ideal => self
                .codes
                .iter()
                .map(|&c| grid.decode(c) * self.block_max / grid.q_max())
                .collect(),
        }
    }

    /// `decoded scale / s*`, or 1 for an all-zero block.
    /// The scale actually applied: the decoded code, or `s*` for the ideal quantizer.
    pub fn scale_value(&self) -> f64 {
        match self.scale {
            BlockScale::Coded(code) => code.decode(),
            BlockScale::Ideal => self.ideal_scale,
        }
    }

    pub fn gamma(&self) -> f64 {
        match self.scale {
            BlockScale::Coded(code) if self.ideal_scale > 0.0 => code.decode() / self.ideal_scale,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub blocks: Vec<BlockQuant>,
    pub config: BlockQuantConfig,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Tensor {
        let data = self
            .blocks
            .iter()
            .flat_map(|b| b.dequantize(&self.config.grid))
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }
}

/// `max_i |x_i|`, rejecting non-finite elements.
pub fn block_max(block: &[f64]) -> Result<f64> {
    let mut m = 0.0f64;
    for &x in block {
        if !x.is_finite() {
            return Err(Error::NonFinite(x));
        }
        m = m.max(x.abs());
    }
    Ok(m)
}

/// `s* = max|x| / q_max` (0 for an all-zero block).
pub fn ideal_scale(block: &[f64]) -> Result<f64> {
    Ok(block_max(block)? / ElementGrid::E2M1.q_max())
}

/// Element position on the ideal grid, `u = q_max · x / m_b`.
///
/// Written as a product-then-quotient so that grid points and midpoints of the
/// ideal problem are hit exactly when the inputs allow it.
#[inline]
pub(crate) fn ideal_coordinate(x: f64, m: f64, grid: &ElementGrid) -> f64 {
    x * grid.q_max() / m
}

pub fn quantize_block(block: &[f64], cfg: &BlockQuantConfig) -> Result<BlockQuant> {
    let m = block_max(block)?;
    let code = cfg.coded_scale(m)?;
    let s = code.decode();
    let codes = if m == 0.0 {
        vec![GridCode::ZERO; block.len()]
    } else {
        block
            .iter()
            .map(|&x| cfg.grid.nearest_code(x / s))
            .collect::<Result<_>>()?
    };
    Ok(BlockQuant {
        codes,
        scale: BlockScale::Coded(code),
        ideal_scale: m / cfg.grid.q_max(),
        block_max: m,
    })
}

pub fn quantize_block_ideal(block: &[f64], cfg: &BlockQuantConfig) -> Result<BlockQuant> {
    let m = block_max(block)?;
    let codes = if m == 0.0 {
        vec![GridCode::ZERO; block.len()]
    } else {
        block
            .iter()
            .map(|&x| cfg.grid.nearest_code(ideal_coordinate(x, m, &cfg.grid)))
            .collect::<Result<_>>()?
    };
    Ok(BlockQuant {
        codes,
        scale: BlockScale::Ideal,
        ideal_scale: m / cfg.grid.q_max(),
        block_max: m,
    })
}

/// Ideal deadzone indicator: `|x_i| < m_b / 24`, evaluated as
/// `|q_max · x_i / m_b| < q_min / 2` on the same coordinate `Q*` rounds.
/// An all-zero block has an empty deadzone.
pub fn deadzone_mask(block: &[f64], cfg: &BlockQuantConfig) -> Result<Vec<bool>> {
    let m = block_max(block)?;
    if m == 0.0 {
        return Ok(vec![false; block.len()]);
    }
    let half = 0.5 * cfg.grid.q_min();
    Ok(block
        .iter()
        .map(|&x| ideal_coordinate(x, m, &cfg.grid).abs() < half)
        .collect())
}

/// Rounds `u` on the grid and returns the signed magnitude.
#[inline]
pub(crate) fn round_on_grid(grid: &ElementGrid, u: f64) -> f64 {
    // Inputs are pre-validated as finite.
    grid.decode(grid.nearest_code(u).unwrap_or(GridCode::ZERO))
}

/// Quantize-dequantize one block into `out`, returning the block max.
pub(crate) fn qdq_block_into(
    block: &[f64],
    cfg: &BlockQuantConfig,
    out: &mut [f64],
) -> Result<f64> {
    let m = block_max(block)?;
    if m == 0.0 {
        out.fill(0.0);
        return Ok(0.0);
    }
    let s = cfg.coded_scale(m)?.decode();
    for (o, &x) in out.iter_mut().zip(block) {
        *o = round_on_grid(&cfg.grid, x / s) * s;
    }
    Ok(m)
}

/// Applies `kernel` to every block of `tensor` (row-parallel), writing into a new
/// tensor of the same shape.
pub(crate) fn map_blocks<F>(tensor: &Tensor, block_size: usize, kernel: F) -> Result<Tensor>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
{
    let cols = tensor.cols().max(1);
    let mut out = vec![0.0; tensor.numel()];
    out.par_chunks_mut(cols)
        .zip(tensor.data.par_chunks(cols))
        .try_for_each(|(orow, irow)| {
            orow.chunks_mut(block_size)
                .zip(irow.chunks(block_size))
                .try_for_each(|(o, i)| kernel(i, o))
        })?;
    Ok(tensor.with_data(out))
}

pub fn quantize_tensor(tensor: &Tensor, cfg: &BlockQuantConfig) -> Result<QuantizedTensor> {
    cfg.validate()?;
    let cols = tensor.cols().max(1);
    let rows: Vec<Vec<BlockQuant>> = tensor
        .data
        .par_chunks(cols)
        .map(|row| {
            row.chunks(cfg.block_size)
                .map(|b| quantize_block(b, cfg))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(QuantizedTensor {
        shape: tensor.shape.clone(),
        blocks: rows.into_iter().flatten().collect(),
        config: *cfg,
    })
}

/// Blockwise quantize then dequantize.
pub fn qdq_tensor(tensor: &Tensor, cfg: &BlockQuantConfig) -> Result<Tensor> {
    cfg.validate()?;
    map_blocks(tensor, cfg.block_size, |i, o| {
        qdq_block_into(i, cfg, o).map(|_| ())
    })
}
