#![no_main]

use libfuzzer_sys::fuzz_target;
use mxdecomp::decomposition::{decompose_tensor, verify_identity};
use mxdecomp::quantizer::{quantize_block, BlockQuantConfig};
use mxdecomp::{Error, Tensor};

fuzz_target!(|data: &[u8]| {
    let Some((&m, rest)) = data.split_first() else {
        return;
    };
    let x: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .take(64)
        .collect();
    if x.is_empty() {
        return;
    }
    let cfg = BlockQuantConfig::new(32, m % 9).unwrap();
    let b = match quantize_block(&x[..x.len().min(32)], &cfg) {
        Ok(b) => b,
        Err(Error::ScaleUnderflow(m)) => {
            assert!(m > 0.0 && m < 6.0 * f64::MIN_POSITIVE);
            return;
        }
        Err(_) => {
            assert!(x.iter().take(32).any(|v| !v.is_finite()));
            return;
        }
    };
    // Decoded scales are exact once s* is a normal f64.
    let s = b.scale_value();
    if b.block_max >= 6.0 * f64::MIN_POSITIVE {
        for v in x.iter().take(32) {
            assert!((v / s).abs() <= 6.0);
        }
    }
    // Keep magnitudes where squared errors stay finite.
    if x.iter()
        .all(|v| v.is_finite() && v.abs() < 1e150 && (v.abs() > 1e-150 || *v == 0.0))
    {
        let d = decompose_tensor(&Tensor::from_vec(x), &cfg).unwrap();
        assert_eq!(d.inner.scale_dz, 0.0);
        assert_eq!(d.inner.dz_grid, 0.0);
        assert!(verify_identity(&d) <= 1e-9);
    }
});
