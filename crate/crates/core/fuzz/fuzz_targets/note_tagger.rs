#![no_main]

use libfuzzer_sys::fuzz_target;
use sdoh_ncc::ehr::NoteId;
use sdoh_ncc::nlp::{default_lexicon, prescreen, validate_mentions, LexiconTagger, Tagger};

fuzz_target!(|text: &str| {
    let lexicon = default_lexicon();
    let id = NoteId("n".into());
    for p in prescreen(&id, text, &lexicon) {
        assert!(p.start <= p.end && p.hit < p.sentences.len());
    }
    let tagger = LexiconTagger::new(lexicon);
    let mentions = tagger.tag(&id, text).unwrap();
    validate_mentions(&id, text, &mentions).unwrap();
});
