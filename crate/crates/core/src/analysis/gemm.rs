use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrections::{mbs_qdq, MbsConfig};
use crate::decomposition::{decompose_reconstruction, decompose_tensor, MeanStd};
use crate::error::{Error, Result};
use crate::quantizer::BlockQuantConfig;
use crate::tensor::Tensor;
use crate::tensorstore::tensor_rng;

const SAMPLE_CHUNK: usize = 256;

/// Second moment `E[x xᵀ]` of the layer input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputCovariance {
    /// `σ² I`.
    Isotropic { variance: f64 },
    /// `diag(d)`.
    Diagonal { variances: Vec<f64> },
    /// `XᵀX / n` for the rows of `X` (`n × cols`); Monte Carlo resamples rows.
    SampleSet { samples: Tensor },
}

impl InputCovariance {
    pub fn label(&self) -> &'static str {
        match self {
            InputCovariance::Isotropic { .. } => "isotropic",
            InputCovariance::Diagonal { .. } => "diagonal",
            InputCovariance::SampleSet { .. } => "sample_set",
        }
    }

    fn validate(&self, cols: usize) -> Result<()> {
        match self {
            InputCovariance::Isotropic { variance }
                if !(*variance > 0.0 && variance.is_finite()) =>
            {
                Err(Error::InvalidConfig(format!(
                    "isotropic variance must be positive, got {variance}"
                )))
            }
            InputCovariance::Diagonal { variances } if variances.len() != cols => {
                Err(Error::ShapeMismatch(format!(
                    "diagonal covariance has {} entries, weight has {cols} columns",
                    variances.len()
                )))
            }
            InputCovariance::Diagonal { variances }
                if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) =>
            {
                Err(Error::InvalidConfig(
                    "diagonal variances must be positive and finite".into(),
                ))
            }
            InputCovariance::SampleSet { samples }
                if samples.shape.len() != 2
                    || samples.shape[1] != cols
                    || samples.shape[0] == 0 =>
            {
                Err(Error::ShapeMismatch(format!(
                    "sample set must be n × {cols} with n >= 1, got {:?}",
                    samples.shape
                )))
            }
            InputCovariance::SampleSet { samples } => samples.check_finite(),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemmPropagation {
    pub rows: usize,
    pub cols: usize,
    pub covariance: String,
    /// `tr(E_sᵀ E_s Σ)`.
    pub var_scale: f64,
    pub var_dz: f64,
    pub var_grid: f64,
    /// `2 tr(E_sᵀ E_g Σ)`, the term dropped by the three-component approximation.
    pub cross_scale_grid: f64,
    /// `2 tr(E_sᵀ E_dz Σ)`.
    pub cross_scale_dz: f64,
    /// `2 tr(E_dzᵀ E_g Σ)`.
    pub cross_dz_grid: f64,
    /// `tr(Eᵀ E Σ)`.
    pub total: f64,
    /// `var_scale + var_dz + var_grid`.
    pub approx: f64,
    /// `|cross_scale_grid| / total`.
    pub dropped_cross_fraction: f64,
    /// Relative gap between `total` and the sum of all six terms.
    pub identity_residual: f64,
    pub mc_samples: usize,
    /// Monte-Carlo `E‖E x‖²`.
    pub mc_mean: f64,
    pub mc_stderr: f64,
    /// `|mc_mean − total| / total`.
    pub mc_rel_error: f64,
}

/// Propagates the weight-error decomposition of `w` (`rows × cols`) through
/// `y = W x`. With `mbs`, the error is that of the MBS reconstruction.
pub fn gemm_error_propagation(
    w: &Tensor,
    qcfg: &BlockQuantConfig,
    cov: &InputCovariance,
    mbs: Option<&MbsConfig>,
    samples: usize,
    seed: u64,
) -> Result<GemmPropagation> {
    if w.shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "weight must be 2-D, got {:?}",
            w.shape
        )));
    }
    let (rows, cols) = (w.shape[0], w.shape[1]);
    cov.validate(cols)?;
    let d = match mbs {
        None => decompose_tensor(w, qcfg)?,
        Some(m) => decompose_reconstruction(w, &mbs_qdq(w, m, qcfg)?.tensor, qcfg)?,
    };
    let mat = |v: &[f64]| DMatrix::from_row_slice(rows, cols, v);
    let (es, edz, eg, et) = (
        mat(&d.e_scale),
        mat(&d.e_dz),
        mat(&d.e_grid),
        mat(&d.e_total),
    );

    let sigma_full = match cov {
        InputCovariance::SampleSet { samples } => {
            let x = DMatrix::from_row_slice(samples.shape[0], cols, &samples.data);
            Some(x.transpose() * &x / samples.shape[0] as f64)
        }
        _ => None,
    };
    // tr(Aᵀ B Σ) = Σ_ij A_ij (B Σ)_ij.
    let tr = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> f64 {
        match cov {
            InputCovariance::Isotropic { variance } => variance * a.dot(b),
            InputCovariance::Diagonal { variances } => a
                .row_iter()
                .zip(b.row_iter())
                .map(|(ra, rb)| {
                    ra.iter()
                        .zip(rb.iter())
                        .zip(variances)
                        .map(|((x, y), v)| x * y * v)
                        .sum::<f64>()
                })
                .sum(),
            InputCovariance::SampleSet { .. } => a.dot(&(b * sigma_full.as_ref().unwrap())),
        }
    };
    let var_scale = tr(&es, &es);
    let var_dz = tr(&edz, &edz);
    let var_grid = tr(&eg, &eg);
    let cross_scale_grid = 2.0 * tr(&es, &eg);
    let cross_scale_dz = 2.0 * tr(&es, &edz);
    let cross_dz_grid = 2.0 * tr(&edz, &eg);
    let total = tr(&et, &et);
    if mbs.is_none()
        && matches!(cov, InputCovariance::Isotropic { .. })
        && (cross_scale_dz != 0.0 || cross_dz_grid != 0.0)
    {
        return Err(Error::Invariant(format!(
            "deadzone cross traces must vanish for isotropic input, got {cross_scale_dz} and {cross_dz_grid}"
        )));
    }
    let approx = var_scale + var_dz + var_grid;
    let full = approx + cross_scale_grid + cross_scale_dz + cross_dz_grid;
    let denom = total.max(f64::MIN_POSITIVE);

    let chunks = samples.div_ceil(SAMPLE_CHUNK);
    let norms: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = tensor_rng(seed, c as u64);
            let count = SAMPLE_CHUNK.min(samples - c * SAMPLE_CHUNK);
            let mut out = Vec::with_capacity(count);
            let mut x = DVector::<f64>::zeros(cols);
            for _ in 0..count {
                match cov {
                    InputCovariance::Isotropic { variance } => {
                        let sd = variance.sqrt();
                        for v in x.iter_mut() {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            *v = sd * z;
                        }
                    }
                    InputCovariance::Diagonal { variances } => {
                        for (v, var) in x.iter_mut().zip(variances) {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            *v = var.sqrt() * z;
                        }
                    }
                    InputCovariance::SampleSet { samples } => {
                        let r = rng.random_range(0..samples.shape[0]);
                        x.copy_from_slice(&samples.data[r * cols..(r + 1) * cols]);
                    }
                }
                out.push((&et * &x).norm_squared());
            }
            out
        })
        .collect();
    let ms = MeanStd::of(&norms);
    let mc_stderr = if samples > 0 {
        ms.std / (samples as f64).sqrt()
    } else {
        0.0
    };
    Ok(GemmPropagation {
        rows,
        cols,
        covariance: cov.label().to_string(),
        var_scale,
        var_dz,
        var_grid,
        cross_scale_grid,
        cross_scale_dz,
        cross_dz_grid,
        total,
        approx,
        dropped_cross_fraction: cross_scale_grid.abs() / denom,
        identity_residual: (total - full).abs() / denom,
        mc_samples: samples,
        mc_mean: ms.mean,
        mc_stderr,
        mc_rel_error: if samples > 0 {
            (ms.mean - total).abs() / denom
        } else {
            0.0
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorstore::{synth_tensor, Distribution};

    #[test]
    fn isotropic_unit_matches_frobenius_and_norms() {
        let w = synth_tensor(Distribution::Gaussian, &[32, 64], 3).unwrap();
        let q = BlockQuantConfig::default();
        let g = gemm_error_propagation(
            &w,
            &q,
            &InputCovariance::Isotropic { variance: 1.0 },
            None,
            0,
            0,
        )
        .unwrap();
        let d = decompose_tensor(&w, &q).unwrap();
        assert!((g.total - d.norms.total).abs() <= 1e-12 * d.norms.total);
        for (a, b) in [
            (g.var_scale, d.norms.scale),
            (g.var_grid, d.norms.grid),
            (g.var_dz, d.norms.dz),
        ] {
            assert!((a - b).abs() <= 1e-12 * b);
        }
        assert_eq!((g.cross_scale_dz, g.cross_dz_grid), (0.0, 0.0));
        assert!(g.identity_residual < 1e-10);
    }

    #[test]
    fn diagonal_and_sample_set_identity() {
        let w = synth_tensor(Distribution::Gaussian, &[16, 32], 4).unwrap();
        let q = BlockQuantConfig::default();
        let diag = InputCovariance::Diagonal {
            variances: (0..32).map(|i| 0.5 + i as f64 / 16.0).collect(),
        };
        let g = gemm_error_propagation(&w, &q, &diag, None, 20_000, 1).unwrap();
        assert!(g.identity_residual < 1e-10);
        assert!(g.mc_rel_error < 6.0 * g.mc_stderr / g.total + 1e-3);

        let xs = synth_tensor(Distribution::Laplace, &[50, 32], 5).unwrap();
        let g = gemm_error_propagation(
            &w,
            &q,
            &InputCovariance::SampleSet { samples: xs },
            None,
            20_000,
            2,
        )
        .unwrap();
        assert!(g.identity_residual < 1e-10);
        assert!(g.mc_rel_error < 6.0 * g.mc_stderr / g.total + 1e-3);
    }

    #[test]
    fn shape_errors() {
        let q = BlockQuantConfig::default();
        let w = synth_tensor(Distribution::Gaussian, &[4, 32], 0).unwrap();
        let bad = InputCovariance::Diagonal {
            variances: vec![1.0; 3],
        };
        assert!(matches!(
            gemm_error_propagation(&w, &q, &bad, None, 10, 0),
            Err(Error::ShapeMismatch(_))
        ));
        let v = Tensor::from_vec(vec![1.0; 32]);
        let iso = InputCovariance::Isotropic { variance: 1.0 };
        assert!(gemm_error_propagation(&v, &q, &iso, None, 10, 0).is_err());
    }
}
