use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Exponentially decaying relative noise magnitudes plus per-name multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AqnSchedule {
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub num_stages: usize,
    /// `(substring, multiplier)`; the first pattern contained in a tensor name wins.
    pub multipliers: Vec<(String, f64)>,
}

impl Default for AqnSchedule {
    fn default() -> Self {
        Self {
            sigma_start: 0.01,
            sigma_end: 0.001,
            num_stages: 10,
            multipliers: vec![("post_attention_layernorm".to_string(), 1.414)],
        }
    }
}

impl AqnSchedule {
    pub fn stages(&self) -> Result<Vec<f64>> {
        aqn_schedule(self.sigma_start, self.sigma_end, self.num_stages)
    }

    pub fn stage(&self, k: usize) -> Result<f64> {
        self.stages()?.get(k).copied().ok_or_else(|| {
            Error::InvalidConfig(format!("stage {k} out of range 0..{}", self.num_stages))
        })
    }

    pub fn multiplier_for(&self, name: &str) -> f64 {
        self.multipliers
            .iter()
            .find(|(p, _)| name.contains(p.as_str()))
            .map_or(1.0, |(_, m)| *m)
    }
}

/// `σ_k = σ_start · (σ_end / σ_start)^(k / (K − 1))` for `k = 0..K`.
pub fn aqn_schedule(sigma_start: f64, sigma_end: f64, num_stages: usize) -> Result<Vec<f64>> {
    if !(sigma_end > 0.0 && sigma_start >= sigma_end && sigma_start.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "AQN schedule needs sigma_start >= sigma_end > 0, got {sigma_start} -> {sigma_end}"
        )));
    }
    if num_stages == 0 {
        return Err(Error::InvalidConfig(
            "AQN schedule needs at least one stage".into(),
        ));
    }
    if num_stages == 1 {
        return Ok(vec![sigma_start]);
    }
    let ratio = sigma_end / sigma_start;
    let last = (num_stages - 1) as f64;
    let mut out: Vec<f64> = (0..num_stages)
        .map(|k| sigma_start * ratio.powf(k as f64 / last))
        .collect();
    out[num_stages - 1] = sigma_end;
    Ok(out)
}

const CHUNK: usize = 4096;

fn noise_key(seed: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

/// Adds `N(0, (sigma · multiplier · rms(x))²)` noise elementwise.
///
/// Noise for element `i` depends only on `(seed, name, i)`: each 4096-element chunk
/// draws from its own ChaCha stream, so the result is independent of scheduling.
pub fn aqn_apply(
    tensor: &Tensor,
    sigma: f64,
    seed: u64,
    multiplier: f64,
    name: &str,
) -> Result<Tensor> {
    if !(sigma >= 0.0 && sigma.is_finite() && multiplier.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "AQN sigma must be finite and >= 0 (got {sigma}, multiplier {multiplier})"
        )));
    }
    let std = sigma * multiplier * tensor.rms();
    if std == 0.0 {
        return Ok(tensor.clone());
    }
    let key = noise_key(seed, name);
    let mut out = tensor.data.clone();
    out.par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            let mut rng = ChaCha8Rng::from_seed(key);
            rng.set_stream(c as u64);
            for v in chunk {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += std * z;
            }
        });
    Ok(tensor.with_data(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorstore::{synth_tensor, Distribution as D};

    #[test]
    fn paper_schedule_endpoints_and_ratio() {
        let s = aqn_schedule(0.01, 0.001, 10).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s[0], 0.01);
        assert_eq!(s[9], 0.001);
        assert!((s[1] / s[0] - 10f64.powf(-1.0 / 9.0)).abs() < 1e-12);
        let prod: f64 = s.windows(2).map(|w| w[1] / w[0]).product();
        assert!((prod - 0.1).abs() < 1e-12);
        assert!(s.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn flat_and_single_stage() {
        assert_eq!(aqn_schedule(0.01, 0.01, 5).unwrap(), vec![0.01; 5]);
        assert_eq!(aqn_schedule(0.02, 0.001, 1).unwrap(), vec![0.02]);
        assert!(aqn_schedule(0.001, 0.01, 3).is_err());
        assert!(aqn_schedule(0.01, 0.0, 3).is_err());
        assert!(aqn_schedule(0.01, 0.001, 0).is_err());
    }

    #[test]
    fn multipliers_by_substring() {
        let s = AqnSchedule::default();
        assert_eq!(
            s.multiplier_for("model.layers.0.post_attention_layernorm.weight"),
            1.414
        );
        assert_eq!(
            s.multiplier_for("model.layers.0.input_layernorm.weight"),
            1.0
        );
        assert!(s.stage(10).is_err());
    }

    #[test]
    fn zero_sigma_is_identity() {
        let t = synth_tensor(D::Gaussian, &[100], 0).unwrap();
        assert_eq!(aqn_apply(&t, 0.0, 1, 1.0, "w").unwrap(), t);
    }

    #[test]
    fn deterministic_and_name_keyed() {
        let t = synth_tensor(D::Gaussian, &[10_000], 0).unwrap();
        let a = aqn_apply(&t, 0.01, 5, 1.0, "w").unwrap();
        let b = aqn_apply(&t, 0.01, 5, 1.0, "w").unwrap();
        let c = aqn_apply(&t, 0.01, 5, 1.0, "v").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_std_matches_sigma() {
        let n = 1_000_000;
        let t = Tensor::from_vec(vec![1.0; n]);
        let out = aqn_apply(&t, 0.01, 3, 1.0, "w").unwrap();
        let d: Vec<f64> = out.data.iter().zip(&t.data).map(|(a, b)| a - b).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((0.0099..=0.0101).contains(&std), "{std}");

        let out2 = aqn_apply(&t, 0.01, 3, 1.414, "w").unwrap();
        let d2: Vec<f64> = out2.data.iter().zip(&t.data).map(|(a, b)| a - b).collect();
        let mean2 = d2.iter().sum::<f64>() / n as f64;
        let std2 = (d2.iter().map(|v| (v - mean2).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((std2 / std / 1.414 - 1.0).abs() < 0.01);
    }
}
