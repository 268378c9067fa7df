#![no_main]

use libfuzzer_sys::fuzz_target;
use mxdecomp::tensorstore::{Distribution, SynthSpec};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = s.parse::<Distribution>();
        if let Ok(spec) = SynthSpec::parse(s, 0) {
            // Only generate small requests; the parser itself is the target.
            let n: usize = spec
                .shape
                .iter()
                .product::<usize>()
                .saturating_mul(spec.count);
            if n <= 4096 {
                let _ = mxdecomp::tensorstore::synth(&spec);
            }
        }
    }
});
