#![no_main]

use libfuzzer_sys::fuzz_target;
use prodfuse::{FusionModel, Rule, Scoring};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(model) = FusionModel::from_json_str(text) else {
        return;
    };
    let back = FusionModel::from_json_str(&model.to_json_string().unwrap()).unwrap();
    assert_eq!(back, model);
    let origin = vec![0.0; model.dim()];
    for rule in Rule::ALL {
        let _ = model.decide(*rule, &origin, Scoring::Density);
    }
});
