//! ICD-9 code grammar, code-list patterns and factor code maps.
//!
//! The default maps ship under `data/maps/` and are compiled into the
//! binary; every one of them can be replaced by a file of the same shape.

mod icd9;
mod map;
mod pattern;

pub use icd9::{Icd9Code, Icd9ParseError};
pub use map::{CodeMap, CodeMapError, CodeMapSet, MatchMode, StructuredFlags};
pub use pattern::{expand_pattern, PatternError, MAX_EXPANSION};

pub const DEFAULT_STRUCTURED_SDOH: &str = include_str!("../../data/maps/structured_sdoh.json");
pub const DEFAULT_MENTAL_HEALTH: &str = include_str!("../../data/maps/mental_health.json");
pub const DEFAULT_CHARLSON: &str = include_str!("../../data/maps/charlson.json");
pub const DEFAULT_SUICIDE_ATTEMPT: &str = include_str!("../../data/maps/suicide_attempt.json");

pub fn default_structured_sdoh() -> CodeMapSet {
    CodeMapSet::compile_str(DEFAULT_STRUCTURED_SDOH, "structured_sdoh.json").expect("bundled map compiles")
}

pub fn default_mental_health() -> CodeMapSet {
    CodeMapSet::compile_str(DEFAULT_MENTAL_HEALTH, "mental_health.json").expect("bundled map compiles")
}

pub fn default_charlson() -> CodeMapSet {
    CodeMapSet::compile_str(DEFAULT_CHARLSON, "charlson.json").expect("bundled map compiles")
}

pub fn default_suicide_attempt() -> CodeMapSet {
    CodeMapSet::compile_str(DEFAULT_SUICIDE_ATTEMPT, "suicide_attempt.json").expect("bundled map compiles")
}
