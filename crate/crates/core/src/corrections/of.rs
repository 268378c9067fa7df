use serde::{Deserialize, Serialize};

use super::mbs::{mbs_qdq, MbsConfig};
use crate::error::{Error, Result};
use crate::quantizer::{deadzone_mask, qdq_tensor, BlockQuantConfig};
use crate::tensor::{block_ranges, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfConfig {
    pub alpha: f64,
}

impl Default for OfConfig {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

impl OfConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!(
                "OF alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfOutput {
    /// `pass1 + alpha · pass2`.
    pub x_hat: Tensor,
    /// `Q(x)`.
    pub pass1: Tensor,
    /// `Q(x − pass1)`.
    pub pass2: Tensor,
}

/// Two-pass residual QDQ. With `mbs`, both passes use the MBS quantizer.
pub fn of_qdq(
    tensor: &Tensor,
    of: &OfConfig,
    qcfg: &BlockQuantConfig,
    mbs: Option<&MbsConfig>,
) -> Result<OfOutput> {
    OfConfig::new(of.alpha)?;
    let quantize = |t: &Tensor| -> Result<Tensor> {
        match mbs {
            Some(cfg) => Ok(mbs_qdq(t, cfg, qcfg)?.tensor),
            None => qdq_tensor(t, qcfg),
        }
    };
    let pass1 = quantize(tensor)?;
    let residual = tensor.with_data(
        tensor
            .data
            .iter()
            .zip(&pass1.data)
            .map(|(x, q)| x - q)
            .collect(),
    );
    let pass2 = quantize(&residual)?;
    let x_hat = pass1.with_data(
        pass1
            .data
            .iter()
            .zip(&pass2.data)
            .map(|(a, b)| a + of.alpha * b)
            .collect(),
    );
    Ok(OfOutput {
        x_hat,
        pass1,
        pass2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DzRecovery {
    /// Fraction of all elements inside the ideal deadzone.
    pub dz_rate_before: f64,
    /// Fraction of all elements inside the ideal deadzone whose OF reconstruction
    /// is still exactly zero.
    pub dz_rate_after: f64,
}

pub fn dz_recovery_rate(
    tensor: &Tensor,
    output: &OfOutput,
    qcfg: &BlockQuantConfig,
) -> Result<DzRecovery> {
    if output.x_hat.shape != tensor.shape {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            tensor.shape, output.x_hat.shape
        )));
    }
    let n = tensor.numel();
    let (mut before, mut after) = (0usize, 0usize);
    for (a, b) in block_ranges(n, tensor.cols(), qcfg.block_size) {
        for (i, dead) in deadzone_mask(&tensor.data[a..b], qcfg)?
            .into_iter()
            .enumerate()
        {
            if dead {
                before += 1;
                if output.x_hat.data[a + i] == 0.0 {
                    after += 1;
                }
            }
        }
    }
    let rate = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok(DzRecovery {
        dz_rate_before: rate(before),
        dz_rate_after: rate(after),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorstore::{synth_tensor, Distribution};

    #[test]
    fn exact_tensor_has_zero_residual() {
        let t = Tensor::from_vec(vec![6.0, -3.0, 1.5, 0.5, 0.0, 2.0]);
        let q = BlockQuantConfig::default();
        for alpha in [0.0, 0.5, 1.0] {
            let out = of_qdq(&t, &OfConfig::new(alpha).unwrap(), &q, None).unwrap();
            assert!(out.pass2.data.iter().all(|&v| v == 0.0));
            assert_eq!(out.x_hat, t);
        }
    }

    #[test]
    fn alpha_zero_is_plain_qdq() {
        let q = BlockQuantConfig::default();
        let t = synth_tensor(Distribution::Gaussian, &[16, 64], 2).unwrap();
        let out = of_qdq(&t, &OfConfig::new(0.0).unwrap(), &q, None).unwrap();
        let plain = qdq_tensor(&t, &q).unwrap();
        let bits = |t: &Tensor| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&out.x_hat), bits(&plain));
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        assert!(OfConfig::new(1.5).is_err());
        assert!(OfConfig::new(-0.1).is_err());
        assert!(OfConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn empty_deadzone_gives_zero_rates() {
        let t = Tensor::from_vec(vec![1.0, -1.0, 2.0, 1.5]);
        let q = BlockQuantConfig::default();
        let out = of_qdq(&t, &OfConfig::default(), &q, None).unwrap();
        let r = dz_recovery_rate(&t, &out, &q).unwrap();
        assert_eq!((r.dz_rate_before, r.dz_rate_after), (0.0, 0.0));
    }

    #[test]
    fn second_pass_stays_small() {
        // The residual is bounded by half the largest grid gap at the pass-1 scale.
        let q = BlockQuantConfig::default();
        let t = synth_tensor(Distribution::Gaussian, &[32, 128], 8).unwrap();
        let out = of_qdq(&t, &OfConfig::default(), &q, None).unwrap();
        for (a, b) in block_ranges(t.numel(), t.cols(), 32) {
            let m = crate::quantizer::block_max(&t.data[a..b]).unwrap();
            let s = q.coded_scale(m).unwrap().decode();
            let r_max = t.data[a..b]
                .iter()
                .zip(&out.pass1.data[a..b])
                .map(|(x, p)| (x - p).abs())
                .fold(0.0, f64::max);
            assert!(r_max <= s * 1.0);
        }
    }
}
