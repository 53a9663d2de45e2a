//! Span-level precision, recall and F-score for tagger output.
//!
//! Alignment is one-to-one and greedy within each (note, label): gold
//! mentions are visited left to right and each takes the leftmost free
//! prediction that qualifies. Relaxed alignment keeps every exact pair
//! first, then pairs the remaining mentions by overlap. Attribute scores
//! count a pair as correct when both attribute values are known and equal;
//! pairs or unmatched mentions with a missing value are left out.

use super::{FactorLabel, FactorMention, Period, Presence};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

string_enum! {
    pub enum MatchKind {
        Exact => "exact",
        Relaxed => "relaxed",
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("gold mentions [{}, {}) and [{}, {}) in note {note_id} overlap with the same label {label}", .first.0, .first.1, .second.0, .second.1)]
    OverlappingGold {
        note_id: String,
        label: FactorLabel,
        first: (usize, usize),
        second: (usize, usize),
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn scores(self) -> Scores {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        Scores {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Percentages in [0, 100].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelReport {
    pub label: FactorLabel,
    /// Gold mentions with this label.
    pub support: u64,
    pub counts: Counts,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeReport {
    pub mode: MatchKind,
    pub per_label: Vec<LabelReport>,
    pub micro_counts: Counts,
    pub micro: Scores,
    /// Unweighted mean over labels with nonzero support.
    pub macro_: Scores,
    pub macro_labels: usize,
    pub presence_counts: Counts,
    pub presence: Scores,
    pub period_counts: Counts,
    pub period: Scores,
}

impl ModeReport {
    pub fn label(&self, label: FactorLabel) -> &LabelReport {
        self.per_label.iter().find(|r| r.label == label).expect("every label is reported")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub exact: ModeReport,
    pub relaxed: ModeReport,
}

type GroupKey<'a> = (&'a str, FactorLabel);

fn group<'a>(ms: &'a [FactorMention]) -> BTreeMap<GroupKey<'a>, Vec<usize>> {
    let mut g: BTreeMap<GroupKey<'a>, Vec<usize>> = BTreeMap::new();
    for (i, m) in ms.iter().enumerate() {
        g.entry((m.note_id.0.as_str(), m.label)).or_default().push(i);
    }
    for v in g.values_mut() {
        v.sort_by_key(|&i| (ms[i].start, ms[i].end, i));
    }
    g
}

/// Rejects gold sets with same-label overlaps in one note.
pub fn check_gold(gold: &[FactorMention]) -> Result<(), EvalError> {
    for ((note, label), idx) in group(gold) {
        for w in idx.windows(2) {
            let (a, b) = (&gold[w[0]], &gold[w[1]]);
            if a.overlaps(b) {
                return Err(EvalError::OverlappingGold {
                    note_id: note.to_string(),
                    label,
                    first: (a.start, a.end),
                    second: (b.start, b.end),
                });
            }
        }
    }
    Ok(())
}

/// Matched (gold index, predicted index) pairs.
pub fn align(gold: &[FactorMention], pred: &[FactorMention], mode: MatchKind) -> Vec<(usize, usize)> {
    let pg = group(pred);
    let mut pairs = Vec::new();
    for (key, gi) in group(gold) {
        let Some(pi) = pg.get(&key) else { continue };
        let mut used = vec![false; pi.len()];
        let mut gold_used = vec![false; gi.len()];
        for (a, &g) in gi.iter().enumerate() {
            if let Some(b) = (0..pi.len()).find(|&b| !used[b] && pred[pi[b]].start == gold[g].start && pred[pi[b]].end == gold[g].end) {
                used[b] = true;
                gold_used[a] = true;
                pairs.push((g, pi[b]));
            }
        }
        if mode == MatchKind::Relaxed {
            for (a, &g) in gi.iter().enumerate() {
                if gold_used[a] {
                    continue;
                }
                if let Some(b) = (0..pi.len()).find(|&b| !used[b] && pred[pi[b]].overlaps(&gold[g])) {
                    used[b] = true;
                    pairs.push((g, pi[b]));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

fn attribute_counts<T: PartialEq + Copy>(
    gold: &[FactorMention],
    pred: &[FactorMention],
    pairs: &[(usize, usize)],
    get: impl Fn(&FactorMention) -> T,
    missing: T,
) -> Counts {
    let mut c = Counts::default();
    let mut gold_paired = vec![false; gold.len()];
    let mut pred_paired = vec![false; pred.len()];
    for &(g, p) in pairs {
        gold_paired[g] = true;
        pred_paired[p] = true;
        let (a, b) = (get(&gold[g]), get(&pred[p]));
        if a == missing || b == missing {
            continue;
        }
        if a == b {
            c.tp += 1;
        } else {
            c.fp += 1;
            c.fn_ += 1;
        }
    }
    c.fn_ += gold.iter().zip(&gold_paired).filter(|(m, &u)| !u && get(m) != missing).count() as u64;
    c.fp += pred.iter().zip(&pred_paired).filter(|(m, &u)| !u && get(m) != missing).count() as u64;
    c
}

pub fn evaluate(gold: &[FactorMention], pred: &[FactorMention], mode: MatchKind) -> Result<ModeReport, EvalError> {
    check_gold(gold)?;
    let pairs = align(gold, pred, mode);
    let mut per: BTreeMap<FactorLabel, (u64, Counts)> = FactorLabel::ALL.iter().map(|&l| (l, (0, Counts::default()))).collect();
    for m in gold {
        let e = per.get_mut(&m.label).expect("all labels");
        e.0 += 1;
        e.1.fn_ += 1;
    }
    for m in pred {
        per.get_mut(&m.label).expect("all labels").1.fp += 1;
    }
    for &(g, _) in &pairs {
        let c = &mut per.get_mut(&gold[g].label).expect("all labels").1;
        c.tp += 1;
        c.fp -= 1;
        c.fn_ -= 1;
    }

    let per_label: Vec<LabelReport> = per
        .into_iter()
        .map(|(label, (support, counts))| LabelReport {
            label,
            support,
            counts,
            scores: counts.scores(),
        })
        .collect();
    let mut micro_counts = Counts::default();
    for r in &per_label {
        micro_counts += r.counts;
    }
    let supported: Vec<&LabelReport> = per_label.iter().filter(|r| r.support > 0).collect();
    let mean = |f: fn(&Scores) -> f64| {
        if supported.is_empty() {
            0.0
        } else {
            supported.iter().map(|r| f(&r.scores)).sum::<f64>() / supported.len() as f64
        }
    };
    let macro_ = Scores {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
    };
    let presence_counts = attribute_counts(gold, pred, &pairs, |m| m.presence, Presence::Missing);
    let period_counts = attribute_counts(gold, pred, &pairs, |m| m.period, Period::Missing);
    Ok(ModeReport {
        mode,
        micro: micro_counts.scores(),
        micro_counts,
        macro_,
        macro_labels: supported.len(),
        per_label,
        presence: presence_counts.scores(),
        presence_counts,
        period: period_counts.scores(),
        period_counts,
    })
}

pub fn evaluate_all(gold: &[FactorMention], pred: &[FactorMention]) -> Result<EvalReport, EvalError> {
    Ok(EvalReport {
        exact: evaluate(gold, pred, MatchKind::Exact)?,
        relaxed: evaluate(gold, pred, MatchKind::Relaxed)?,
    })
}
