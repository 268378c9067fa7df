#![no_main]

use libfuzzer_sys::fuzz_target;
use mxdecomp::mxformat::{decode_grid, encode_scale_ceiling, nearest_grid_code};

fuzz_target!(|data: &[u8]| {
    for &b in data {
        match decode_grid(b) {
            Ok(v) => {
                assert!(b <= 0x0f);
                let back = nearest_grid_code(v).unwrap();
                assert_eq!(decode_grid(back.bits()).unwrap(), v);
            }
            Err(_) => assert!(b > 0x0f),
        }
    }
    if data.len() >= 9 {
        let u = f64::from_le_bytes(data[..8].try_into().unwrap());
        let m = data[8] % 9;
        if u.is_finite() {
            let v = decode_grid(nearest_grid_code(u).unwrap().bits()).unwrap();
            assert!(v.abs() <= 6.0);
            if u > 0.0 {
                let s = encode_scale_ceiling(u, m).unwrap().decode();
                assert!(s >= u);
            }
        } else {
            assert!(nearest_grid_code(u).is_err());
        }
    }
});
