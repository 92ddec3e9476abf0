#![no_main]

use libfuzzer_sys::fuzz_target;
use prodfuse::read_csv;

fuzz_target!(|data: &[u8]| {
    // First byte picks an optional block layout so both code paths run.
    let (layout, body) = match data.split_first() {
        Some((b, rest)) => (*b, rest),
        None => return,
    };
    let dims: Vec<usize> = (0..layout % 4).map(|i| 1 + ((layout >> (2 + i)) & 1) as usize).collect();
    let dims = (!dims.is_empty()).then_some(dims.as_slice());
    if let Ok(d) = read_csv(body, dims, "fuzz") {
        assert_eq!(d.labels().len(), d.len());
        assert!(d.rows().flatten().all(|v| v.is_finite()));
    }
});
