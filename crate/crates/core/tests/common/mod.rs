#![allow(dead_code)]

use sdoh_ncc::nlp::eval::Counts;
use sdoh_ncc::nlp::{read_mentions, FactorLabel, FactorMention};
use std::path::PathBuf;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn load_mentions(name: &str) -> Vec<FactorMention> {
    let f = std::fs::File::open(fixture(name)).expect("fixture exists");
    read_mentions(std::io::BufReader::new(f)).expect("fixture parses")
}

/// Hand-counted expectations for the ten-document evaluation fixture.
pub struct EvalExpectation {
    pub per_label: Vec<(FactorLabel, u64, Counts)>,
    pub micro: Counts,
    /// (precision, recall, f1) means over the five supported labels.
    pub macro_: (f64, f64, f64),
    pub presence: Counts,
    pub period: Counts,
}

fn c(tp: u64, fp: u64, fn_: u64) -> Counts {
    Counts { tp, fp, fn_ }
}

const H: FactorLabel = FactorLabel::HousingInstability;
const L: FactorLabel = FactorLabel::LegalProblems;
const V: FactorLabel = FactorLabel::Violence;
const P: FactorLabel = FactorLabel::Pain;
const S: FactorLabel = FactorLabel::SubstanceAbuse;

pub fn exact_expectation() -> EvalExpectation {
    let third = 100.0 / 3.0;
    EvalExpectation {
        per_label: vec![(H, 3, c(2, 1, 1)), (L, 3, c(2, 0, 1)), (V, 2, c(1, 3, 1)), (P, 2, c(1, 0, 1)), (S, 2, c(0, 2, 2))],
        micro: c(6, 6, 6),
        macro_: (
            (2.0 * third + 100.0 + 25.0 + 100.0 + 0.0) / 5.0,
            (2.0 * third + 2.0 * third + 50.0 + 50.0 + 0.0) / 5.0,
            (2.0 * third + 80.0 + third + 2.0 * third + 0.0) / 5.0,
        ),
        presence: c(5, 7, 7),
        period: c(4, 7, 7),
    }
}

pub fn relaxed_expectation() -> EvalExpectation {
    let third = 100.0 / 3.0;
    EvalExpectation {
        per_label: vec![(H, 3, c(3, 0, 0)), (L, 3, c(2, 0, 1)), (V, 2, c(2, 2, 0)), (P, 2, c(1, 0, 1)), (S, 2, c(1, 1, 1))],
        micro: c(9, 3, 3),
        macro_: (
            (100.0 + 100.0 + 50.0 + 100.0 + 50.0) / 5.0,
            (100.0 + 2.0 * third + 100.0 + 50.0 + 50.0) / 5.0,
            (100.0 + 80.0 + 2.0 * third + 2.0 * third + 50.0) / 5.0,
        ),
        presence: c(8, 4, 4),
        period: c(6, 5, 5),
    }
}

/// Precision, recall and F in percent straight from counts.
pub fn prf(k: Counts) -> (f64, f64, f64) {
    let p = if k.tp + k.fp == 0 { 0.0 } else { 100.0 * k.tp as f64 / (k.tp + k.fp) as f64 };
    let r = if k.tp + k.fn_ == 0 { 0.0 } else { 100.0 * k.tp as f64 / (k.tp + k.fn_) as f64 };
    let f = if k.tp == 0 { 0.0 } else { 200.0 * k.tp as f64 / (2 * k.tp + k.fp + k.fn_) as f64 };
    (p, r, f)
}

/// Compares a mode report with the hand counts; returns mismatches.
pub fn check_eval(report: &sdoh_ncc::nlp::eval::ModeReport, want: &EvalExpectation) -> Vec<String> {
    let mut bad = Vec::new();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    for r in &report.per_label {
        let expected = want.per_label.iter().find(|(l, _, _)| *l == r.label);
        let (support, counts) = expected.map(|(_, s, k)| (*s, *k)).unwrap_or((0, c(0, 0, 0)));
        if r.support != support || r.counts != counts {
            bad.push(format!("{}: got {:?} support {}, want {:?} support {}", r.label, r.counts, r.support, counts, support));
        }
        let (p, rc, f) = prf(counts);
        if !(close(r.scores.precision, p) && close(r.scores.recall, rc) && close(r.scores.f1, f)) {
            bad.push(format!("{} scores {:?}", r.label, r.scores));
        }
    }
    if report.micro_counts != want.micro {
        bad.push(format!("micro counts {:?}", report.micro_counts));
    }
    let (p, r, f) = prf(want.micro);
    if !(close(report.micro.precision, p) && close(report.micro.recall, r) && close(report.micro.f1, f)) {
        bad.push(format!("micro scores {:?}", report.micro));
    }
    let (p, r, f) = want.macro_;
    if !(close(report.macro_.precision, p) && close(report.macro_.recall, r) && close(report.macro_.f1, f)) {
        bad.push(format!("macro scores {:?}, want ({p}, {r}, {f})", report.macro_));
    }
    for (name, got, want_counts, scores) in [
        ("presence", report.presence_counts, want.presence, report.presence),
        ("period", report.period_counts, want.period, report.period),
    ] {
        if got != want_counts {
            bad.push(format!("{name} counts {got:?}, want {want_counts:?}"));
        }
        let (p, r, f) = prf(want_counts);
        if !(close(scores.precision, p) && close(scores.recall, r) && close(scores.f1, f)) {
            bad.push(format!("{name} scores {scores:?}"));
        }
    }
    bad
}
