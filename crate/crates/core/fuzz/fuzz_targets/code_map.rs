#![no_main]

use libfuzzer_sys::fuzz_target;
use sdoh_ncc::codes::CodeMapSet;

fuzz_target!(|s: &str| {
    let _ = CodeMapSet::compile_str(s, "fuzz");
});
