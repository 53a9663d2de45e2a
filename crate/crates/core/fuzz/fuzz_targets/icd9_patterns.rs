#![no_main]

use libfuzzer_sys::fuzz_target;
use sdoh_ncc::codes::{expand_pattern, Icd9Code, MAX_EXPANSION};

fuzz_target!(|s: &str| {
    if let Ok(code) = Icd9Code::parse(s) {
        assert_eq!(Icd9Code::parse(code.as_str()).unwrap(), code);
    }
    if let Ok(codes) = expand_pattern(s) {
        assert!(codes.len() as u64 <= MAX_EXPANSION);
    }
});
