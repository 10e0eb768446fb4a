#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    metric_chain_fuzz::model_artifact(data);
});
