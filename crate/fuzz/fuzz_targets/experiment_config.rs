#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| nmt_probe::fuzzing::experiment_config(data));
