use super::{FactorLabel, FactorMention, Period, Presence};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedFactor {
    pub presence: Presence,
    pub period: Period,
}

impl Default for MergedFactor {
    fn default() -> Self {
        Self {
            presence: Presence::Missing,
            period: Period::Missing,
        }
    }
}

/// Per-label merged attributes for one subject and window.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NlpFlags {
    pub merged: [MergedFactor; FactorLabel::COUNT],
}

impl NlpFlags {
    pub fn get(&self, label: FactorLabel) -> MergedFactor {
        self.merged[label.index()]
    }

    pub fn bit(&self, label: FactorLabel) -> bool {
        let m = self.get(label);
        dichotomize(m.presence, m.period)
    }
}

fn presence_rank(p: Presence) -> u8 {
    match p {
        Presence::Yes => 2,
        Presence::NotYes => 1,
        Presence::Missing => 0,
    }
}

fn period_rank(p: Period) -> u8 {
    match p {
        Period::Current => 2,
        Period::NotCurrent => 1,
        Period::Missing => 0,
    }
}

/// Presence takes the strongest value over all mentions of a label
/// (yes > not_yes > missing); period is resolved among the mentions
/// carrying that presence (current > not_current > missing).
pub fn merge_window<'a>(mentions: impl IntoIterator<Item = &'a FactorMention>) -> NlpFlags {
    let mut best: [Option<(u8, u8)>; FactorLabel::COUNT] = [None; FactorLabel::COUNT];
    for m in mentions {
        let key = (presence_rank(m.presence), period_rank(m.period));
        let slot = &mut best[m.label.index()];
        if slot.map_or(true, |b| key > b) {
            *slot = Some(key);
        }
    }
    let mut out = NlpFlags::default();
    for (slot, b) in out.merged.iter_mut().zip(best) {
        if let Some((pr, pe)) = b {
            slot.presence = [Presence::Missing, Presence::NotYes, Presence::Yes][pr as usize];
            slot.period = [Period::Missing, Period::NotCurrent, Period::Current][pe as usize];
        }
    }
    out
}

/// 1 only for a present, current factor.
pub fn dichotomize(presence: Presence, period: Period) -> bool {
    presence == Presence::Yes && period == Period::Current
}
