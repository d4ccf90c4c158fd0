use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static NAMED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[Rr]esponse\s*(\d+)").expect("static regex"));
static LEADING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(\d+)").expect("static regex"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    /// Response number (1-based, as shown to the model) → votes.
    pub counts: BTreeMap<usize, usize>,
    /// 0-based draft index.
    pub winner: usize,
    /// No vote parsed; draft 0 was chosen by default.
    pub fallback: bool,
}

impl VoteTally {
    pub fn winner_response(&self) -> usize {
        self.winner + 1
    }
}

/// The response number one vote text names, if any.
pub fn parse_vote(text: &str, n_drafts: usize) -> Option<usize> {
    let mut hits: Vec<(usize, &str)> = NAMED
        .captures_iter(text)
        .chain(LEADING.captures_iter(text))
        .filter_map(|c| c.get(1))
        .map(|m| (m.start(), m.as_str()))
        .collect();
    hits.sort_by_key(|(pos, _)| *pos);
    hits.into_iter()
        .filter_map(|(_, digits)| digits.parse::<usize>().ok())
        .find(|k| (1..=n_drafts).contains(k))
}

/// One vote per text. Ties go to the lowest draft; no votes means draft 0.
pub fn parse_votes<S: AsRef<str>>(vote_texts: &[S], n_drafts: usize) -> VoteTally {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for text in vote_texts {
        if let Some(k) = parse_vote(text.as_ref(), n_drafts) {
            *counts.entry(k).or_default() += 1;
        }
    }
    // BTreeMap iterates ascending, so strict `>` keeps the lowest index on ties.
    let best = counts
        .iter()
        .fold(None, |best: Option<(usize, usize)>, (&k, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((k, c)),
        });
    match best {
        Some((k, _)) => VoteTally {
            counts,
            winner: k - 1,
            fallback: false,
        },
        None => VoteTally {
            counts,
            winner: 0,
            fallback: true,
        },
    }
}
