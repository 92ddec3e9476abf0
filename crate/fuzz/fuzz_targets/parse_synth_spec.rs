#![no_main]

use libfuzzer_sys::fuzz_target;
use prodfuse::{synth, SynthSpec};

const MAX_ROWS: usize = 64;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(mut spec) = SynthSpec::from_json_str(text) else {
        return;
    };
    spec.n = spec.n.min(MAX_ROWS);
    if spec.dims().iter().sum::<usize>() > 64 {
        return;
    }
    if let Ok(d) = synth(&spec) {
        assert_eq!(d.len(), spec.n);
    }
});
