#![no_main]

use libfuzzer_sys::fuzz_target;
use sdoh_ncc::nlp::read_mentions;

fuzz_target!(|data: &[u8]| {
    let _ = read_mentions(data);
});
