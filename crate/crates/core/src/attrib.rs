//! Person mentions and their demographic attributes, looked up in a
//! name lexicon.
//!
//! Matching runs over token sequences. A token is a maximal run of
//! alphanumeric characters (plus combining marks), so whitespace and
//! punctuation are boundaries. Comparison is case-insensitive but keeps
//! diacritics: "Beyoncé" and "Beyonce" are different names. A multi-token
//! name only matches when the gaps between its tokens hold nothing but
//! whitespace and name-internal punctuation (`.` `-` `'`), so list
//! separators such as commas and semicolons split names.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const UNKNOWN: &str = "unknown";

const LABELS_DIRECTIVE: &str = "#@ ethnicity_labels";

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("alias {alias:?} is claimed by both {first:?} and {second:?}")]
    AmbiguousAlias {
        alias: String,
        first: String,
        second: String,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Gender,
    Ethnicity,
}

impl Attribute {
    pub const ALL: [Attribute; 2] = [Attribute::Gender, Attribute::Ethnicity];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::Ethnicity => "ethnicity",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gender" => Ok(Attribute::Gender),
            "ethnicity" => Ok(Attribute::Ethnicity),
            other => Err(format!("unknown attribute {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
    Other,
    Unknown,
}

impl Gender {
    pub const KNOWN: [&'static str; 3] = ["female", "male", "other"];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Other => "other",
            Gender::Unknown => UNKNOWN,
        }
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            "other" => Ok(Gender::Other),
            "unknown" | "" => Ok(Gender::Unknown),
            other => Err(format!("invalid gender {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub canonical: String,
    pub aliases: Vec<String>,
    pub gender: Gender,
    /// `None` is unknown.
    pub ethnicity: Option<String>,
}

impl LexiconEntry {
    pub fn value(&self, attribute: Attribute) -> Option<&str> {
        match attribute {
            Attribute::Gender => match self.gender {
                Gender::Unknown => None,
                g => Some(g.as_str()),
            },
            Attribute::Ethnicity => self.ethnicity.as_deref(),
        }
    }
}

/// Immutable after construction; share it freely between threads.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    ethnicity_labels: Vec<String>,
    index: HashMap<Vec<String>, usize>,
    max_tokens: usize,
}

pub(crate) fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || ('\u{0300}'..='\u{036f}').contains(&c)
}

/// Token spans as byte ranges into `text`.
pub fn tokenize(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (is_token_char(c), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

fn joinable_gap(gap: &str) -> bool {
    gap.chars()
        .all(|c| c.is_whitespace() || matches!(c, '.' | '-' | '\'' | '\u{2019}' | '\u{2010}' | '\u{2011}'))
}

fn normalized_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .map(|(s, e)| text[s..e].to_lowercase())
        .collect()
}

impl Lexicon {
    /// `ethnicity_labels` of `None` derives the label set from the entries.
    pub fn new(entries: Vec<LexiconEntry>, ethnicity_labels: Option<Vec<String>>) -> Result<Self, LexiconError> {
        let labels = match ethnicity_labels {
            Some(labels) => {
                for e in &entries {
                    if let Some(eth) = &e.ethnicity {
                        if !labels.contains(eth) {
                            return Err(LexiconError::Malformed {
                                line: 0,
                                reason: format!("{}: ethnicity {eth:?} is not a declared label", e.canonical),
                            });
                        }
                    }
                }
                labels
            }
            None => entries
                .iter()
                .filter_map(|e| e.ethnicity.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        let mut index: HashMap<Vec<String>, usize> = HashMap::new();
        let mut max_tokens = 0;
        for (i, entry) in entries.iter().enumerate() {
            for name in std::iter::once(&entry.canonical).chain(&entry.aliases) {
                let key = normalized_tokens(name);
                if key.is_empty() {
                    continue;
                }
                if let Some(&prev) = index.get(&key) {
                    if prev != i {
                        return Err(LexiconError::AmbiguousAlias {
                            alias: name.clone(),
                            first: entries[prev].canonical.clone(),
                            second: entry.canonical.clone(),
                        });
                    }
                    continue;
                }
                max_tokens = max_tokens.max(key.len());
                index.insert(key, i);
            }
        }
        Ok(Self {
            entries,
            ethnicity_labels: labels,
            index,
            max_tokens,
        })
    }

    /// Parses the TSV format: `canonical<TAB>aliases<TAB>gender<TAB>ethnicity`.
    ///
    /// Aliases are pipe-separated and may be empty. `#` starts a comment line.
    /// A `#@ ethnicity_labels = a|b|c` line declares the ethnicity value set;
    /// without it the set is whatever the entries use.
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut entries = Vec::new();
        let mut labels = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if let Some(rest) = line.strip_prefix(LABELS_DIRECTIVE) {
                let rest = rest.trim_start().trim_start_matches('=').trim();
                labels = Some(
                    rest.split('|')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect::<Vec<_>>(),
                );
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(LexiconError::Malformed {
                    line: line_no,
                    reason: format!("expected 4 tab-separated columns, found {}", cols.len()),
                });
            }
            let canonical = cols[0].trim();
            if canonical.is_empty() {
                return Err(LexiconError::Malformed {
                    line: line_no,
                    reason: "empty canonical name".into(),
                });
            }
            let gender = cols[2]
                .parse::<Gender>()
                .map_err(|reason| LexiconError::Malformed { line: line_no, reason })?;
            let eth = cols[3].trim();
            let ethnicity = if eth.is_empty() || eth.eq_ignore_ascii_case(UNKNOWN) {
                None
            } else if eth.contains(char::is_whitespace) {
                return Err(LexiconError::Malformed {
                    line: line_no,
                    reason: format!("invalid ethnicity label {eth:?}"),
                });
            } else {
                Some(eth.to_string())
            };
            entries.push(LexiconEntry {
                canonical: canonical.to_string(),
                aliases: cols[1]
                    .split('|')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect(),
                gender,
                ethnicity,
            });
        }
        Self::new(entries, labels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn get(&self, canonical: &str) -> Option<&LexiconEntry> {
        self.entries.iter().find(|e| e.canonical == canonical)
    }

    /// The attribute's value set A (never includes `unknown`).
    pub fn value_set(&self, attribute: Attribute) -> Vec<String> {
        match attribute {
            Attribute::Gender => Gender::KNOWN.iter().map(|s| s.to_string()).collect(),
            Attribute::Ethnicity => self.ethnicity_labels.clone(),
        }
    }

    /// Greedy longest-match extraction.
    ///
    /// All candidate matches are collected, then accepted longest-first and
    /// leftmost among equals, skipping any that overlap an accepted one.
    /// Repeated mentions of one entity keep only the first span.
    pub fn extract_people(&self, text: &str) -> Vec<EntityMention> {
        let spans = tokenize(text);
        let tokens: Vec<String> = spans.iter().map(|&(s, e)| text[s..e].to_lowercase()).collect();
        let joins: Vec<bool> = spans
            .windows(2)
            .map(|w| joinable_gap(&text[w[0].1..w[1].0]))
            .collect();
        let mut candidates = Vec::new();
        for start in 0..tokens.len() {
            let longest = self.max_tokens.min(tokens.len() - start);
            for len in 1..=longest {
                if len > 1 && !joins[start + len - 2] {
                    break;
                }
                if let Some(&entry) = self.index.get(&tokens[start..start + len]) {
                    candidates.push((len, start, entry));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut taken = vec![false; tokens.len()];
        let mut accepted = Vec::new();
        for (len, start, entry) in candidates {
            if taken[start..start + len].iter().any(|&t| t) {
                continue;
            }
            taken[start..start + len].iter_mut().for_each(|t| *t = true);
            accepted.push((start, len, entry));
        }
        accepted.sort_by_key(|&(start, _, _)| start);
        let mut seen = BTreeSet::new();
        accepted
            .into_iter()
            .filter(|&(_, _, entry)| seen.insert(entry))
            .map(|(start, len, entry)| {
                let e = &self.entries[entry];
                EntityMention {
                    canonical: e.canonical.clone(),
                    span: (spans[start].0, spans[start + len - 1].1),
                    gender: e.gender,
                    ethnicity: e.ethnicity.clone(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub canonical: String,
    /// Byte offsets into the source text.
    pub span: (usize, usize),
    pub gender: Gender,
    pub ethnicity: Option<String>,
}

impl EntityMention {
    pub fn value(&self, attribute: Attribute) -> Option<&str> {
        match attribute {
            Attribute::Gender => match self.gender {
                Gender::Unknown => None,
                g => Some(g.as_str()),
            },
            Attribute::Ethnicity => self.ethnicity.as_deref(),
        }
    }
}

pub fn extract_people(text: &str, lexicon: &Lexicon) -> Vec<EntityMention> {
    lexicon.extract_people(text)
}

/// p_a(y) for one response and one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDistribution {
    pub attribute: Attribute,
    pub probs: BTreeMap<String, f64>,
    pub known_count: usize,
    pub total_mentions: usize,
}

impl AttributeDistribution {
    pub fn coverage(&self) -> f64 {
        self.known_count as f64 / self.total_mentions.max(1) as f64
    }
}

/// Relative frequencies over mentions with a known value. Unknowns only
/// count toward `total_mentions`.
pub fn attribute_distribution(mentions: &[EntityMention], attribute: Attribute) -> AttributeDistribution {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for m in mentions {
        if let Some(v) = m.value(attribute) {
            *counts.entry(v.to_string()).or_default() += 1;
        }
    }
    let known: usize = counts.values().sum();
    AttributeDistribution {
        attribute,
        probs: counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / known as f64))
            .collect(),
        known_count: known,
        total_mentions: mentions.len(),
    }
}
