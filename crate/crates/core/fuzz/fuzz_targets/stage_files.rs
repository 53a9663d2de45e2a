#![no_main]

use libfuzzer_sys::fuzz_target;
use sdoh_ncc::cohort::{read_cohort, read_exclusions};
use sdoh_ncc::dates::parse_date;
use sdoh_ncc::features::{read_features, read_flags};
use sdoh_ncc::matching::read_matched_sets;

fuzz_target!(|data: &[u8]| {
    let Some((&which, body)) = data.split_first() else { return };
    match which % 6 {
        0 => drop(read_cohort(body)),
        1 => drop(read_exclusions(body)),
        2 => drop(read_matched_sets(body)),
        3 => drop(read_flags(body)),
        4 => drop(read_features(body)),
        _ => drop(std::str::from_utf8(body).ok().and_then(parse_date)),
    }
});
