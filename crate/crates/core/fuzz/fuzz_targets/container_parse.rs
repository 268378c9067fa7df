#![no_main]

use libfuzzer_sys::fuzz_target;
use mxdecomp::tensorstore::{parse_container, serialize_container};

fuzz_target!(|data: &[u8]| {
    // Anything that parses must survive a re-encode with identical values.
    if let Ok(set) = parse_container(data) {
        let bytes = serialize_container(&set).expect("re-encode");
        let back = parse_container(&bytes).expect("re-parse");
        assert_eq!(back.len(), set.len());
        for (name, e) in set.iter() {
            let b = back.get(name).expect("name kept");
            assert_eq!(b.tensor.shape, e.tensor.shape);
            assert!(b
                .tensor
                .data
                .iter()
                .zip(&e.tensor.data)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
});
