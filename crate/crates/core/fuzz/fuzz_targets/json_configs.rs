#![no_main]

use libfuzzer_sys::fuzz_target;
use sdoh_ncc::ehr::synth::SynthSpec;
use sdoh_ncc::nlp::Lexicon;
use sdoh_ncc::study::StudyConfig;

fuzz_target!(|s: &str| {
    let _ = StudyConfig::from_json(s);
    let _ = SynthSpec::from_json(s);
    let _ = Lexicon::from_json(s);
});
