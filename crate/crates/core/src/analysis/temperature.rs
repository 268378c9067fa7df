use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrections::AqnSchedule;
use crate::error::{Error, Result};
use crate::tensorstore::tensor_rng;

pub const MIN_TEMP_DRAWS: usize = 10_000;
const DRAW_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempPrediction {
    pub sigma_eta2: f64,
    pub var_delta_ell: f64,
    pub t_eff: f64,
}

/// `T_eff = sqrt(1 + 2 σ_η² / Var(Δℓ))`.
pub fn effective_temperature_predict(
    sigma_eta2: f64,
    var_delta_ell: f64,
) -> Result<TempPrediction> {
    if !(sigma_eta2 >= 0.0
        && sigma_eta2.is_finite()
        && var_delta_ell >= 0.0
        && var_delta_ell.is_finite())
    {
        return Err(Error::InvalidConfig(format!(
            "variances must be finite and non-negative, got {sigma_eta2} and {var_delta_ell}"
        )));
    }
    if var_delta_ell == 0.0 {
        return Err(Error::DegeneratePolicy);
    }
    Ok(TempPrediction {
        sigma_eta2,
        var_delta_ell,
        t_eff: (1.0 + 2.0 * sigma_eta2 / var_delta_ell).sqrt(),
    })
}

/// Mean of `(ℓ_a − ℓ_b)²` over all unordered pairs `a < b`.
///
/// Uses `Σ_{a<b} (ℓ_a − ℓ_b)² = n Σ (ℓ_i − ℓ̄)²`, so every pair is counted
/// exactly in O(n); the result equals twice the sample variance.
pub fn var_delta_ell(logits: &[f64]) -> Result<f64> {
    let n = logits.len();
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 logits, got {n}"
        )));
    }
    if let Some(&v) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(v));
    }
    let mean = logits.iter().sum::<f64>() / n as f64;
    let ss: f64 = logits.iter().map(|l| (l - mean).powi(2)).sum();
    Ok(2.0 * ss / (n - 1) as f64)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TempFit {
    pub sigma_eta: f64,
    pub draws: usize,
    pub t_hat: f64,
    /// `KL(p̄ ‖ softmax(ℓ / t_hat))` at the optimum.
    pub kl_at_fit: f64,
    pub entropy_clean: f64,
    pub entropy_noisy: f64,
}

/// Noise-averaged softmax over `draws` perturbations `ℓ + σ_η z`, then the `T`
/// minimizing `KL(p̄ ‖ softmax(ℓ / T))` by golden section on `log T ∈ [log 0.5, log 10]`.
pub fn effective_temperature_fit(
    logits: &[f64],
    sigma_eta: f64,
    draws: usize,
    seed: u64,
) -> Result<TempFit> {
    let n = logits.len();
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "vocabulary must have at least 2 entries, got {n}"
        )));
    }
    if draws < MIN_TEMP_DRAWS {
        return Err(Error::InvalidConfig(format!(
            "temperature fit needs at least {MIN_TEMP_DRAWS} draws, got {draws}"
        )));
    }
    if !(sigma_eta >= 0.0 && sigma_eta.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sigma_eta must be finite and >= 0, got {sigma_eta}"
        )));
    }
    if let Some(&v) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(v));
    }
    let clean = softmax(logits);
    let p_bar = if sigma_eta == 0.0 {
        clean.clone()
    } else {
        let chunks = draws.div_ceil(DRAW_CHUNK);
        let partial: Vec<Vec<f64>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = tensor_rng(seed, c as u64);
                let mut acc = vec![0.0; n];
                let mut buf = vec![0.0; n];
                let count = DRAW_CHUNK.min(draws - c * DRAW_CHUNK);
                for _ in 0..count {
                    for (b, l) in buf.iter_mut().zip(logits) {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *b = l + sigma_eta * z;
                    }
                    for (a, p) in acc.iter_mut().zip(softmax(&buf)) {
                        *a += p;
                    }
                }
                acc
            })
            .collect();
        // Fixed-order reduction keeps the result independent of thread count.
        let mut acc = vec![0.0; n];
        for part in &partial {
            for (a, p) in acc.iter_mut().zip(part) {
                *a += p;
            }
        }
        acc.iter().map(|v| v / draws as f64).collect()
    };
    let objective = |log_t: f64| {
        let t = log_t.exp();
        let scaled: Vec<f64> = logits.iter().map(|l| l / t).collect();
        kl(&p_bar, &softmax(&scaled))
    };
    let log_t = golden_section(objective, 0.5f64.ln(), 10f64.ln(), 1e-10);
    let t_hat = log_t.exp();
    Ok(TempFit {
        sigma_eta,
        draws,
        t_hat,
        kl_at_fit: objective(log_t),
        entropy_clean: entropy(&clean),
        entropy_noisy: entropy(&p_bar),
    })
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `sqrt(σ_grid² + σ_aqn²)`.
pub fn total_noise(sigma_grid: f64, sigma_aqn: f64) -> f64 {
    sigma_grid.hypot(sigma_aqn)
}

/// Total noise at one schedule stage.
pub fn aqn_total_noise(sigma_grid: f64, schedule: &AqnSchedule, stage: usize) -> Result<f64> {
    Ok(total_noise(sigma_grid, schedule.stage(stage)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_algebra() {
        assert_eq!(effective_temperature_predict(0.0, 3.0).unwrap().t_eff, 1.0);
        let t = effective_temperature_predict(1.5, 3.0).unwrap().t_eff;
        assert!((t - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(effective_temperature_predict(12.0, 3.0).unwrap().t_eff, 3.0);
        assert!(matches!(
            effective_temperature_predict(1.0, 0.0),
            Err(Error::DegeneratePolicy)
        ));
        assert!(effective_temperature_predict(-1.0, 1.0).is_err());
    }

    #[test]
    fn pair_variance_matches_brute_force() {
        let l = [0.3, -1.2, 2.5, 0.0, 0.7, -0.4];
        let mut s = 0.0;
        let mut c = 0;
        for a in 0..l.len() {
            for b in a + 1..l.len() {
                s += (l[a] - l[b]) * (l[a] - l[b]);
                c += 1;
            }
        }
        assert!((var_delta_ell(&l).unwrap() - s / c as f64).abs() < 1e-12);
        assert_eq!(var_delta_ell(&[1.0, 1.0]).unwrap(), 0.0);
        assert!(var_delta_ell(&[1.0]).is_err());
    }

    #[test]
    fn zero_noise_fits_unit_temperature() {
        let l: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin() * 2.0).collect();
        let f = effective_temperature_fit(&l, 0.0, MIN_TEMP_DRAWS, 0).unwrap();
        assert!((f.t_hat - 1.0).abs() < 1e-6, "{}", f.t_hat);
        assert_eq!(f.entropy_clean, f.entropy_noisy);
    }

    #[test]
    fn noise_raises_entropy() {
        let l: Vec<f64> = (0..30).map(|i| (i as f64 * 1.3).cos() * 3.0).collect();
        let f = effective_temperature_fit(&l, 1.0, MIN_TEMP_DRAWS, 1).unwrap();
        assert!(f.entropy_noisy > f.entropy_clean);
        assert!(f.t_hat > 1.0);
    }

    #[test]
    fn golden_section_finds_quadratic_min() {
        let x = golden_section(|x| (x - 0.3).powi(2), -1.0, 2.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-9);
    }

    #[test]
    fn total_noise_closed_form() {
        assert_eq!(total_noise(3.0, 4.0), 5.0);
        assert_eq!(total_noise(2.5, 0.0), 2.5);
        let s = AqnSchedule::default();
        let v: Vec<f64> = (0..10)
            .map(|k| aqn_total_noise(0.002, &s, k).unwrap())
            .collect();
        assert!(v.windows(2).all(|w| w[1] <= w[0]));
        assert!(aqn_total_noise(0.0, &s, 10).is_err());
    }
}
