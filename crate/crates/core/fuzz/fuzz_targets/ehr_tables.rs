#![no_main]

use libfuzzer_sys::fuzz_target;
use sdoh_ncc::ehr::{parse_deaths, parse_diagnoses, parse_encounters, parse_notes, parse_patients};

// First byte picks the table; the rest is the file body.
fuzz_target!(|data: &[u8]| {
    let Some((&which, body)) = data.split_first() else { return };
    match which % 5 {
        0 => drop(parse_patients(body)),
        1 => drop(parse_encounters(body)),
        2 => drop(parse_diagnoses(body)),
        3 => drop(parse_deaths(body)),
        _ => drop(parse_notes(body)),
    }
});
