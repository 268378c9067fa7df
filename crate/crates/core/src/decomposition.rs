//! Exact three-way split of the quantization error,
//!
//! ```text
//! Q(x) - x = [Q(x) - Q*(x)] + [Q*(x) - x]·1_DZ + [Q*(x) - x]·1_DZᶜ
//!          =    e_scale     +      e_dz        +       e_grid
//! ```
//!
//! with the MSE identity `‖e‖² = ‖e_scale‖² + ‖e_dz‖² + ‖e_grid‖² + 2⟨e_scale, e_grid⟩`
//! and per-tensor aggregation into [`DecompReport`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{block_max, ideal_coordinate, round_on_grid, BlockQuantConfig};
use crate::tensor::{block_ranges, Tensor};
use crate::tensorstore::TensorSet;

/// Cosine similarity that stays finite: a zero vector gives `value = 0`,
/// `defined = false`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cosine {
    pub value: f64,
    pub defined: bool,
}

impl Cosine {
    pub fn from_parts(inner: f64, norm_sq_a: f64, norm_sq_b: f64) -> Self {
        if norm_sq_a > 0.0 && norm_sq_b > 0.0 {
            Self {
                value: (inner / (norm_sq_a.sqrt() * norm_sq_b.sqrt())).clamp(-1.0, 1.0),
                defined: true,
            }
        } else {
            Self {
                value: 0.0,
                defined: false,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentNorms {
    pub scale: f64,
    pub dz: f64,
    pub grid: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InnerProducts {
    pub scale_grid: f64,
    pub scale_dz: f64,
    pub dz_grid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDecomposition {
    pub shape: Vec<usize>,
    pub e_scale: Vec<f64>,
    pub e_dz: Vec<f64>,
    pub e_grid: Vec<f64>,
    /// `Q(x) - x`, computed directly.
    pub e_total: Vec<f64>,
    /// Squared L2 norms.
    pub norms: ComponentNorms,
    pub inner: InnerProducts,
    pub cos_scale_grid: Cosine,
    pub cos_scale_dz: Cosine,
    pub cos_dz_grid: Cosine,
    pub dz_count: usize,
    pub dz_fraction: f64,
}

impl ErrorDecomposition {
    pub fn numel(&self) -> usize {
        self.e_total.len()
    }

    pub fn mse_total(&self) -> f64 {
        per_element(self.norms.total, self.numel())
    }

    /// Derives norms, inner products and cosines from the component vectors.
    fn from_components(
        shape: Vec<usize>,
        e_scale: Vec<f64>,
        e_dz: Vec<f64>,
        e_grid: Vec<f64>,
        e_total: Vec<f64>,
        dz_count: usize,
    ) -> Self {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let norms = ComponentNorms {
            scale: dot(&e_scale, &e_scale),
            dz: dot(&e_dz, &e_dz),
            grid: dot(&e_grid, &e_grid),
            total: dot(&e_total, &e_total),
        };
        let inner = InnerProducts {
            scale_grid: dot(&e_scale, &e_grid),
            scale_dz: dot(&e_scale, &e_dz),
            dz_grid: dot(&e_dz, &e_grid),
        };
        let n = e_total.len();
        Self {
            shape,
            cos_scale_grid: Cosine::from_parts(inner.scale_grid, norms.scale, norms.grid),
            cos_scale_dz: Cosine::from_parts(inner.scale_dz, norms.scale, norms.dz),
            cos_dz_grid: Cosine::from_parts(inner.dz_grid, norms.dz, norms.grid),
            e_scale,
            e_dz,
            e_grid,
            e_total,
            norms,
            inner,
            dz_count,
            dz_fraction: if n == 0 {
                0.0
            } else {
                dz_count as f64 / n as f64
            },
        }
    }
}

fn per_element(v: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        v / n as f64
    }
}

struct BlockOut<'a> {
    scale: &'a mut [f64],
    dz: &'a mut [f64],
    grid: &'a mut [f64],
    total: &'a mut [f64],
}

/// Decomposes one block into caller-provided buffers, returning the number of
/// deadzone elements.
pub(crate) fn decompose_block_into(
    x: &[f64],
    cfg: &BlockQuantConfig,
    scale: &mut [f64],
    dz: &mut [f64],
    grid: &mut [f64],
    total: &mut [f64],
) -> Result<usize> {
    decompose_block(
        x,
        cfg,
        BlockOut {
            scale,
            dz,
            grid,
            total,
        },
    )
}

/// Decomposes one block, returning the number of deadzone elements.
fn decompose_block(x: &[f64], cfg: &BlockQuantConfig, out: BlockOut<'_>) -> Result<usize> {
    let m = block_max(x)?;
    if m == 0.0 {
        for v in [out.scale, out.dz, out.grid, out.total] {
            v.fill(0.0);
        }
        return Ok(0);
    }
    let grid = &cfg.grid;
    let s = cfg.coded_scale(m)?.decode();
    let half = 0.5 * grid.q_min();
    let mut dead = 0;
    for (i, &xi) in x.iter().enumerate() {
        let q = round_on_grid(grid, xi / s) * s;
        let u = ideal_coordinate(xi, m, grid);
        let q_ideal = round_on_grid(grid, u) * m / grid.q_max();
        let residual = q_ideal - xi;
        out.scale[i] = q - q_ideal;
        out.total[i] = q - xi;
        if u.abs() < half {
            dead += 1;
            out.dz[i] = residual;
            out.grid[i] = 0.0;
        } else {
            out.dz[i] = 0.0;
            out.grid[i] = residual;
        }
    }
    Ok(dead)
}

/// Full per-element decomposition of `tensor` under `cfg`.
pub fn decompose_tensor(tensor: &Tensor, cfg: &BlockQuantConfig) -> Result<ErrorDecomposition> {
    cfg.validate()?;
    let n = tensor.numel();
    let cols = tensor.cols().max(1);
    let (mut es, mut ed, mut eg, mut et) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let dz_count: usize = es
        .par_chunks_mut(cols)
        .zip(ed.par_chunks_mut(cols))
        .zip(eg.par_chunks_mut(cols))
        .zip(et.par_chunks_mut(cols))
        .zip(tensor.data.par_chunks(cols))
        .map(|((((s, d), g), t), x)| {
            let b = cfg.block_size;
            let mut dead = 0;
            for ((((s, d), g), t), x) in s
                .chunks_mut(b)
                .zip(d.chunks_mut(b))
                .zip(g.chunks_mut(b))
                .zip(t.chunks_mut(b))
                .zip(x.chunks(b))
            {
                dead += decompose_block(
                    x,
                    cfg,
                    BlockOut {
                        scale: s,
                        dz: d,
                        grid: g,
                        total: t,
                    },
                )?;
            }
            Ok(dead)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(ErrorDecomposition::from_components(
        tensor.shape.clone(),
        es,
        ed,
        eg,
        et,
        dz_count,
    ))
}

/// Decomposition of an already-reconstructed tensor against the ideal quantizer of
/// the original: `e_scale = x_hat - Q*(x)`, with `e_dz` / `e_grid` as usual.
///
/// Used to measure corrections (MBS, OF) whose output is not a plain `Q(x)`.
pub fn decompose_reconstruction(
    original: &Tensor,
    reconstruction: &Tensor,
    cfg: &BlockQuantConfig,
) -> Result<ErrorDecomposition> {
    if original.shape != reconstruction.shape {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            original.shape, reconstruction.shape
        )));
    }
    cfg.validate()?;
    let n = original.numel();
    let grid = &cfg.grid;
    let half = 0.5 * grid.q_min();
    let (mut es, mut ed, mut eg, mut et) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut dz_count = 0;
    for (a, b) in block_ranges(n, original.cols(), cfg.block_size) {
        let x = &original.data[a..b];
        let m = block_max(x)?;
        for i in a..b {
            let xi = original.data[i];
            let xh = reconstruction.data[i];
            et[i] = xh - xi;
            if m == 0.0 {
                es[i] = xh;
                continue;
            }
            let u = ideal_coordinate(xi, m, grid);
            let q_ideal = round_on_grid(grid, u) * m / grid.q_max();
            es[i] = xh - q_ideal;
            if u.abs() < half {
                dz_count += 1;
                ed[i] = q_ideal - xi;
            } else {
                eg[i] = q_ideal - xi;
            }
        }
    }
    Ok(ErrorDecomposition::from_components(
        original.shape.clone(),
        es,
        ed,
        eg,
        et,
        dz_count,
    ))
}

/// Relative residual of the MSE identity,
/// `|‖e‖² - (‖e_s‖² + ‖e_dz‖² + ‖e_g‖² + 2⟨e_s, e_g⟩ + 2⟨e_s, e_dz⟩)| / max(‖e‖², ε)`.
///
/// `⟨e_s, e_dz⟩` is exactly 0 for plain QDQ; it is kept for corrected
/// reconstructions, which may move deadzone elements off zero.
pub fn verify_identity(d: &ErrorDecomposition) -> f64 {
    let n = &d.norms;
    let rhs = n.scale + n.dz + n.grid + 2.0 * d.inner.scale_grid + 2.0 * d.inner.scale_dz;
    (n.total - rhs).abs() / n.total.max(f64::MIN_POSITIVE)
}

/// `(⟨e_scale, e_dz⟩, ⟨e_dz, e_grid⟩)`; both are structurally zero.
pub fn orthogonality_check(d: &ErrorDecomposition) -> (f64, f64) {
    (d.inner.scale_dz, d.inner.dz_grid)
}

/// Statistics of one tensor, the unit row of [`DecompReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub share_scale: f64,
    pub share_dz: f64,
    pub share_grid: f64,
    pub cross_share: f64,
    pub cos_scale_grid: f64,
    pub cos_scale_dz: f64,
    pub cos_dz_grid: f64,
    pub cos_scale_grid_defined: bool,
    pub cos_scale_dz_defined: bool,
    pub cos_dz_grid_defined: bool,
    pub dz_fraction: f64,
    pub mse_total: f64,
    pub identity_residual: f64,
    /// `mse_total == 0`: shares are reported as 0 and excluded from aggregates.
    pub degenerate: bool,
}

impl TensorRecord {
    pub fn from_decomposition(name: &str, d: &ErrorDecomposition) -> Self {
        let total = d.norms.total;
        let degenerate = total == 0.0;
        let share = |v: f64| if degenerate { 0.0 } else { v / total };
        Self {
            name: name.to_string(),
            shape: d.shape.clone(),
            share_scale: share(d.norms.scale),
            share_dz: share(d.norms.dz),
            share_grid: share(d.norms.grid),
            cross_share: share(2.0 * d.inner.scale_grid),
            cos_scale_grid: d.cos_scale_grid.value,
            cos_scale_dz: d.cos_scale_dz.value,
            cos_dz_grid: d.cos_dz_grid.value,
            cos_scale_grid_defined: d.cos_scale_grid.defined,
            cos_scale_dz_defined: d.cos_scale_dz.defined,
            cos_dz_grid_defined: d.cos_dz_grid.defined,
            dz_fraction: d.dz_fraction,
            mse_total: d.mse_total(),
            identity_residual: verify_identity(d),
            degenerate,
        }
    }

    pub fn share_sum(&self) -> f64 {
        self.share_scale + self.share_dz + self.share_grid + self.cross_share
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Non-degenerate tensors contributing to the statistics.
    pub count: usize,
    pub share_scale: MeanStd,
    pub share_dz: MeanStd,
    pub share_grid: MeanStd,
    pub cross_share: MeanStd,
    pub cos_scale_grid: MeanStd,
    pub cos_scale_dz: MeanStd,
    pub cos_dz_grid: MeanStd,
    pub dz_fraction: MeanStd,
    pub mse_total: MeanStd,
}

impl Aggregate {
    fn of<'a>(records: impl IntoIterator<Item = &'a TensorRecord>) -> Self {
        let rs: Vec<&TensorRecord> = records.into_iter().filter(|r| !r.degenerate).collect();
        let col =
            |f: fn(&TensorRecord) -> f64| MeanStd::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
        Self {
            count: rs.len(),
            share_scale: col(|r| r.share_scale),
            share_dz: col(|r| r.share_dz),
            share_grid: col(|r| r.share_grid),
            cross_share: col(|r| r.cross_share),
            cos_scale_grid: col(|r| r.cos_scale_grid),
            cos_scale_dz: col(|r| r.cos_scale_dz),
            cos_dz_grid: col(|r| r.cos_dz_grid),
            dz_fraction: col(|r| r.dz_fraction),
            mse_total: col(|r| r.mse_total),
        }
    }
}

pub const COSINE_BINS: usize = 201;

/// Counts of defined cosines in 201 equal bins over [-1, 1]; 0 lands in bin 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineHistogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl CosineHistogram {
    pub fn new() -> Self {
        Self {
            lo: -1.0,
            hi: 1.0,
            counts: vec![0; COSINE_BINS],
        }
    }

    pub fn bin_of(c: f64) -> usize {
        (((c + 1.0) / 2.0 * COSINE_BINS as f64).floor() as usize).min(COSINE_BINS - 1)
    }

    pub fn add(&mut self, c: f64) {
        self.counts[Self::bin_of(c)] += 1;
    }
}

impl Default for CosineHistogram {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineHistograms {
    pub scale_grid: CosineHistogram,
    pub scale_dz: CosineHistogram,
    pub dz_grid: CosineHistogram,
}

/// Aggregate over tensors that share a layer-type suffix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompReport {
    pub config: BlockQuantConfig,
    pub tensors: Vec<TensorRecord>,
    pub aggregate: Aggregate,
    pub histograms: CosineHistograms,
    pub groups: Vec<GroupSummary>,
}

/// Layer-type key of a tensor name: everything after the last all-digit
/// dot-separated component (`model.layers.7.mlp.up_proj.weight` → `mlp.up_proj.weight`).
pub fn layer_group(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts
        .iter()
        .rposition(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
    {
        Some(i) if i + 1 < parts.len() => parts[i + 1..].join("."),
        _ => name.to_string(),
    }
}

/// Per-tensor decomposition statistics for a whole set. Records come out in name order.
pub fn tensor_stats(set: &TensorSet, cfg: &BlockQuantConfig) -> Result<DecompReport> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let tensors: Vec<TensorRecord> = set
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(name, entry)| {
            decompose_tensor(&entry.tensor, cfg).map(|d| TensorRecord::from_decomposition(name, &d))
        })
        .collect::<Result<_>>()?;

    let mut histograms = CosineHistograms {
        scale_grid: CosineHistogram::new(),
        scale_dz: CosineHistogram::new(),
        dz_grid: CosineHistogram::new(),
    };
    for r in &tensors {
        if r.cos_scale_grid_defined {
            histograms.scale_grid.add(r.cos_scale_grid);
        }
        if r.cos_scale_dz_defined {
            histograms.scale_dz.add(r.cos_scale_dz);
        }
        if r.cos_dz_grid_defined {
            histograms.dz_grid.add(r.cos_dz_grid);
        }
    }

    let mut by_group: BTreeMap<String, Vec<&TensorRecord>> = BTreeMap::new();
    for r in &tensors {
        by_group.entry(layer_group(&r.name)).or_default().push(r);
    }
    let groups = by_group
        .into_iter()
        .map(|(group, rs)| GroupSummary {
            group,
            aggregate: Aggregate::of(rs),
        })
        .collect();

    Ok(DecompReport {
        config: *cfg,
        aggregate: Aggregate::of(&tensors),
        tensors,
        histograms,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub mantissa_bits: u8,
    pub mse_total: f64,
    pub mse_scale: f64,
    pub mse_grid: f64,
    pub mse_dz: f64,
    /// `2⟨e_scale, e_grid⟩ / n`.
    pub cross: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// `e_grid` and `e_dz` bitwise identical at every mantissa width.
    pub grid_invariant: bool,
    /// `mse_total` non-increasing in the mantissa width.
    pub monotone: bool,
    /// `mse_grid + mse_dz`.
    pub floor_mse: f64,
    /// `mse_total` at the widest mantissa divided by the floor.
    pub floor_ratio: f64,
}

/// Decomposes `tensor` once per scale mantissa width in `bits`.
pub fn scale_precision_sweep(
    tensor: &Tensor,
    cfg: &BlockQuantConfig,
    bits: &[u8],
) -> Result<SweepReport> {
    if bits.is_empty() {
        return Err(Error::InvalidConfig("empty mantissa-bit list".into()));
    }
    let n = tensor.numel();
    let mut points = Vec::with_capacity(bits.len());
    let mut reference: Option<(Vec<u64>, Vec<u64>)> = None;
    let mut grid_invariant = true;
    for &m in bits {
        let d = decompose_tensor(tensor, &cfg.with_mantissa_bits(m))?;
        let g: Vec<u64> = d.e_grid.iter().map(|v| v.to_bits()).collect();
        let z: Vec<u64> = d.e_dz.iter().map(|v| v.to_bits()).collect();
        match &reference {
            Some((g0, z0)) => grid_invariant &= *g0 == g && *z0 == z,
            None => reference = Some((g, z)),
        }
        points.push(SweepPoint {
            mantissa_bits: m,
            mse_total: per_element(d.norms.total, n),
            mse_scale: per_element(d.norms.scale, n),
            mse_grid: per_element(d.norms.grid, n),
            mse_dz: per_element(d.norms.dz, n),
            cross: per_element(2.0 * d.inner.scale_grid, n),
        });
    }
    let monotone = points.windows(2).all(|w| w[1].mse_total <= w[0].mse_total);
    let last = points.last().expect("non-empty");
    let floor_mse = last.mse_grid + last.mse_dz;
    let floor_ratio = if floor_mse > 0.0 {
        last.mse_total / floor_mse
    } else if last.mse_total == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    Ok(SweepReport {
        grid_invariant,
        monotone,
        floor_mse,
        floor_ratio,
        points,
    })
}
