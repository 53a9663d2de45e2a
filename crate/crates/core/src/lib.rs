//! Nested case-control study engine.
//!
//! Pipeline: EHR tables ([`ehr`]) feed cohort construction ([`cohort`]),
//! risk-set matching ([`matching`]), structured and note-derived factor
//! extraction ([`codes`], [`nlp`]), feature assembly ([`features`]) and
//! conditional logistic regression ([`clogit`]). [`study`] runs the whole
//! model battery and renders reports.

#[macro_use]
mod macros;

pub mod codes;
pub mod dates;
pub mod clogit;
pub mod cohort;
pub mod ehr;
pub mod features;
pub mod study;
pub mod matching;
pub mod nlp;

/// A string did not name any variant of a closed enum.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} value {value:?}")]
pub struct UnknownVariant {
    pub kind: &'static str,
    pub value: String,
}
