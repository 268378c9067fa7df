use mxdecomp::corrections::{mbs_qdq, of_qdq, MbsConfig, OfConfig};
use mxdecomp::decomposition::{decompose_reconstruction, decompose_tensor, verify_identity};
use mxdecomp::quantizer::{qdq_tensor, quantize_block, BlockQuantConfig};
use mxdecomp::tensorstore::{parse_container, serialize_container, DType, TensorSet};
use mxdecomp::Tensor;
use proptest::prelude::*;

fn block(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![
            4 => -1e3f64..1e3,
            1 => -1e-3f64..1e-3,
            1 => Just(0.0),
        ],
        1..=len,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn identity_and_orthogonality(x in block(64), m in 0u8..=8) {
        let cfg = BlockQuantConfig::new(32, m).unwrap();
        let t = Tensor::from_vec(x);
        let d = decompose_tensor(&t, &cfg).unwrap();
        prop_assert!(verify_identity(&d) <= 1e-9);
        prop_assert_eq!(d.inner.scale_dz, 0.0);
        prop_assert_eq!(d.inner.dz_grid, 0.0);
        for i in 0..t.numel() {
            prop_assert!(d.e_dz[i] == 0.0 || d.e_grid[i] == 0.0);
        }
    }

    #[test]
    fn elements_never_overflow(x in block(32), m in 0u8..=8) {
        let cfg = BlockQuantConfig::new(32, m).unwrap();
        let b = quantize_block(&x, &cfg).unwrap();
        let s = b.scale_value();
        for v in &x {
            prop_assert!((v / s).abs() <= 6.0);
        }
        prop_assert!(b.gamma() >= 1.0);
    }

    #[test]
    fn corrected_reconstructions_satisfy_identity(x in prop::collection::vec(-10f64..10.0, 128), alpha in 0f64..=1.0) {
        let q = BlockQuantConfig::default();
        let t = Tensor::new(vec![1, 128], x).unwrap();
        let m = mbs_qdq(&t, &MbsConfig::default(), &q).unwrap();
        let d = decompose_reconstruction(&t, &m.tensor, &q).unwrap();
        prop_assert!(verify_identity(&d) <= 1e-9);
        let plain = qdq_tensor(&t, &q).unwrap();
        let se = |a: &Tensor| a.data.iter().zip(&t.data).map(|(p, x)| (p - x) * (p - x)).sum::<f64>();
        prop_assert!(se(&m.tensor) <= se(&plain));
        let o = of_qdq(&t, &OfConfig::new(alpha).unwrap(), &q, None).unwrap();
        let d = decompose_reconstruction(&t, &o.x_hat, &q).unwrap();
        prop_assert!(verify_identity(&d) <= 1e-9);
    }

    #[test]
    fn container_round_trip(vals in prop::collection::vec(-1e30f64..1e30, 0..40), rows in 1usize..4) {
        let n = vals.len() / rows * rows;
        let mut set = TensorSet::new();
        set.insert("x", DType::F64, Tensor::new(vec![rows, n / rows], vals[..n].to_vec()).unwrap()).unwrap();
        let f32s: Vec<f64> = vals.iter().map(|v| f64::from(*v as f32)).collect();
        set.insert("y", DType::F32, Tensor::from_vec(f32s)).unwrap();
        let back = parse_container(&serialize_container(&set).unwrap()).unwrap();
        for (name, e) in set.iter() {
            let b = back.get(name).unwrap();
            prop_assert_eq!(&b.tensor.shape, &e.tensor.shape);
            let same = b.tensor.data.iter().zip(&e.tensor.data).all(|(a, c)| a.to_bits() == c.to_bits());
            prop_assert!(same);
        }
    }

    #[test]
    fn parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = parse_container(&bytes);
    }
}
