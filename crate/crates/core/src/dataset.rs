//! Evaluation suites built by expanding hand-written templates with term lists.
//!
//! Expansion is a pure function of its inputs: the same templates and terms
//! always produce the same prompts in the same order with the same ids.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const ADJECTIVE: &str = "adjective";
const NOUN: &str = "noun";

pub const PEOPLE_TEMPLATES: &str = include_str!("../data/people_templates.txt");
pub const PEOPLE_TERMS: &str = include_str!("../data/people_terms.txt");
pub const CULTURE_TEMPLATES: &str = include_str!("../data/culture_templates.txt");
pub const CULTURE_TERMS: &str = include_str!("../data/culture_terms.txt");

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("template {id}: {reason}")]
    InvalidTemplate { id: String, reason: String },
    #[error("template {id} uses {{{placeholder}}} but no {placeholder} terms were supplied")]
    MissingTerms { id: String, placeholder: String },
    #[error("duplicate term {term:?} in [{section}]")]
    DuplicateTerm { section: String, term: String },
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("line {line}: term outside of any section")]
    TermOutsideSection { line: usize },
    #[error("no terms")]
    NoTerms,
    #[error("no nouns")]
    NoNouns,
    #[error("constraint surface form must not be empty")]
    EmptySurfaceForm,
    #[error("malformed template line {line}: expected <id><TAB><pattern>")]
    MalformedTemplateLine { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    People,
    Culture,
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::People => "people",
            Suite::Culture => "culture",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub pattern: String,
    pub suite: Suite,
}

impl Template {
    pub fn new(id: impl Into<String>, pattern: impl Into<String>, suite: Suite) -> Self {
        Self {
            id: id.into(),
            pattern: pattern.into(),
            suite,
        }
    }

    /// Placeholder names in order of appearance. Rejects unknown or unbalanced ones.
    pub fn placeholders(&self) -> Result<Vec<&str>, DatasetError> {
        let invalid = |reason: String| DatasetError::InvalidTemplate {
            id: self.id.clone(),
            reason,
        };
        let mut names = Vec::new();
        let mut rest = self.pattern.as_str();
        while let Some(open) = rest.find(['{', '}']) {
            if rest.as_bytes()[open] == b'}' {
                return Err(invalid("unmatched '}'".into()));
            }
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or_else(|| invalid("unterminated placeholder".into()))?;
            let name = &after[..close];
            if name != ADJECTIVE && name != NOUN {
                return Err(invalid(format!("unknown placeholder {{{name}}}")));
            }
            names.push(name);
            rest = &after[close + 1..];
        }
        if names.is_empty() {
            return Err(invalid("pattern has no placeholder".into()));
        }
        Ok(names)
    }

    fn uses_adjective(&self) -> Result<bool, DatasetError> {
        Ok(self.placeholders()?.contains(&ADJECTIVE))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermLists {
    /// May contain the empty string, which drops the adjective slot.
    pub adjectives: Vec<String>,
    pub nouns: Vec<String>,
    pub constraint_markers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Constraint {
    pub attribute: String,
    pub value: String,
}

/// A group constraint plus the words that express it in a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSpec {
    pub attribute: String,
    pub value: String,
    pub surface_form: String,
}

impl ConstraintSpec {
    /// Parses `attribute=value:surface form`, e.g. `gender=female:female`.
    /// Without `:surface` the value doubles as the surface form.
    pub fn parse(s: &str) -> Option<Self> {
        let (attribute, rest) = s.split_once('=')?;
        let (value, surface) = match rest.split_once(':') {
            Some((v, sf)) => (v, sf.trim_matches('"')),
            None => (rest, rest),
        };
        if attribute.is_empty() || value.is_empty() {
            return None;
        }
        Some(Self {
            attribute: attribute.trim().to_string(),
            value: value.trim().to_string(),
            surface_form: surface.trim().to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
    pub suite: Suite,
    pub template_id: String,
    pub noun: String,
    pub adjective: Option<String>,
    pub constraint: Option<Constraint>,
}

impl TermLists {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.nouns.is_empty() {
            return Err(DatasetError::NoNouns);
        }
        for (section, list) in [
            ("adjectives", &self.adjectives),
            ("nouns", &self.nouns),
            ("constraint_markers", &self.constraint_markers),
        ] {
            check_unique(section, list)?;
        }
        Ok(())
    }

    /// Parses the line-oriented term-list format.
    ///
    /// Sections are introduced by `[adjectives]`, `[nouns]` or
    /// `[constraint_markers]`. Lines starting with `#` are comments. Inside
    /// `[adjectives]` a blank line is the empty adjective; elsewhere blank
    /// lines are ignored.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut terms = TermLists::default();
        let mut section: Option<&mut Vec<String>> = None;
        let mut in_adjectives = false;
        let mut saw_any = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                let name = &line[1..line.len() - 1];
                in_adjectives = name == "adjectives";
                section = Some(match name {
                    "adjectives" => &mut terms.adjectives,
                    "nouns" => &mut terms.nouns,
                    "constraint_markers" => &mut terms.constraint_markers,
                    other => return Err(DatasetError::UnknownSection(other.to_string())),
                });
                continue;
            }
            if line.is_empty() && !in_adjectives {
                continue;
            }
            let list = section
                .as_deref_mut()
                .ok_or(DatasetError::TermOutsideSection { line: idx + 1 })?;
            list.push(line.to_string());
            saw_any = true;
        }
        if !saw_any {
            return Err(DatasetError::NoTerms);
        }
        terms.validate()?;
        Ok(terms)
    }
}

fn check_unique(section: &str, list: &[String]) -> Result<(), DatasetError> {
    let mut seen = std::collections::HashSet::new();
    for term in list {
        if !seen.insert(term.as_str()) {
            return Err(DatasetError::DuplicateTerm {
                section: section.to_string(),
                term: term.clone(),
            });
        }
    }
    Ok(())
}

pub fn load_term_lists(path: impl AsRef<Path>) -> Result<TermLists, DatasetError> {
    TermLists::parse(&fs::read_to_string(path)?)
}

/// Parses `<id>\t<pattern>` lines; `#` comments and blank lines are skipped.
pub fn parse_templates(text: &str, suite: Suite) -> Result<Vec<Template>, DatasetError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, pattern) = line
            .split_once('\t')
            .ok_or(DatasetError::MalformedTemplateLine { line: idx + 1 })?;
        let template = Template::new(id.trim(), pattern.trim(), suite);
        template.placeholders()?;
        out.push(template);
    }
    Ok(out)
}

pub fn load_templates(path: impl AsRef<Path>, suite: Suite) -> Result<Vec<Template>, DatasetError> {
    parse_templates(&fs::read_to_string(path)?, suite)
}

pub fn people_templates() -> Vec<Template> {
    parse_templates(PEOPLE_TEMPLATES, Suite::People).expect("bundled people templates")
}

pub fn culture_templates() -> Vec<Template> {
    parse_templates(CULTURE_TEMPLATES, Suite::Culture).expect("bundled culture templates")
}

pub fn people_terms() -> TermLists {
    TermLists::parse(PEOPLE_TERMS).expect("bundled people terms")
}

pub fn culture_terms() -> TermLists {
    TermLists::parse(CULTURE_TERMS).expect("bundled culture terms")
}

/// Collapses runs of whitespace to a single space and trims the ends.
fn normalize_spaces(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn fill(pattern: &str, adjective: &str, noun: &str) -> String {
    let filled = pattern
        .replace("{adjective}", adjective)
        .replace("{noun}", noun);
    normalize_spaces(&filled)
}

fn constraint_tag(c: Option<&Constraint>) -> String {
    match c {
        Some(c) => format!("{}={}", c.attribute, c.value),
        None => "-".to_string(),
    }
}

fn expand_inner(
    templates: &[Template],
    terms: &TermLists,
    noun_prefix: Option<&str>,
    constraint: Option<&Constraint>,
) -> Result<Vec<Prompt>, DatasetError> {
    terms.validate()?;
    let mut out = Vec::new();
    for template in templates {
        let uses_adjective = template.uses_adjective()?;
        if uses_adjective && terms.adjectives.is_empty() {
            return Err(DatasetError::MissingTerms {
                id: template.id.clone(),
                placeholder: ADJECTIVE.into(),
            });
        }
        let adjectives: Vec<Option<(usize, &str)>> = if uses_adjective {
            terms
                .adjectives
                .iter()
                .enumerate()
                .map(|(i, a)| Some((i, a.as_str())))
                .collect()
        } else {
            vec![None]
        };
        for adjective in &adjectives {
            for (noun_idx, noun) in terms.nouns.iter().enumerate() {
                let noun_phrase = match noun_prefix {
                    Some(prefix) => format!("{prefix} {noun}"),
                    None => noun.clone(),
                };
                let adj_text = adjective.map(|(_, a)| a).unwrap_or("");
                let adj_tag = adjective
                    .map(|(i, _)| format!("a{i}"))
                    .unwrap_or_else(|| "-".into());
                out.push(Prompt {
                    id: format!(
                        "{}/{}/{}/n{:03}/{}",
                        template.suite,
                        template.id,
                        adj_tag,
                        noun_idx,
                        constraint_tag(constraint)
                    ),
                    text: fill(&template.pattern, adj_text, &noun_phrase),
                    suite: template.suite,
                    template_id: template.id.clone(),
                    noun: noun.clone(),
                    adjective: adjective.map(|(_, a)| a.to_string()),
                    constraint: constraint.cloned(),
                });
            }
        }
    }
    Ok(out)
}

/// Cartesian expansion: templates-major, then adjectives, then nouns.
pub fn expand_templates(templates: &[Template], terms: &TermLists) -> Result<Vec<Prompt>, DatasetError> {
    expand_inner(templates, terms, None, None)
}

/// Expands with every noun prefixed by the constraint's surface form
/// ("famous female musicians"). `None` is plain expansion.
pub fn make_constrained_suite(
    templates: &[Template],
    base_terms: &TermLists,
    constraint: Option<&ConstraintSpec>,
) -> Result<Vec<Prompt>, DatasetError> {
    let Some(spec) = constraint else {
        return expand_templates(templates, base_terms);
    };
    let surface = normalize_spaces(&spec.surface_form);
    if surface.is_empty() {
        return Err(DatasetError::EmptySurfaceForm);
    }
    let c = Constraint {
        attribute: spec.attribute.clone(),
        value: spec.value.clone(),
    };
    expand_inner(templates, base_terms, Some(&surface), Some(&c))
}

/// Closed-form suite size: one prompt per noun for noun-only templates, one
/// per (adjective, noun) pair otherwise.
pub fn expected_suite_size(templates: &[Template], terms: &TermLists) -> Result<usize, DatasetError> {
    let mut total = 0;
    for t in templates {
        total += if t.uses_adjective()? {
            terms.adjectives.len() * terms.nouns.len()
        } else {
            terms.nouns.len()
        };
    }
    Ok(total)
}

pub fn write_prompts_jsonl<W: Write>(mut out: W, prompts: &[Prompt]) -> Result<(), DatasetError> {
    for p in prompts {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_prompts_jsonl(text: &str) -> Result<Vec<Prompt>, DatasetError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(DatasetError::from))
        .collect()
}

pub fn load_prompts(path: impl AsRef<Path>) -> Result<Vec<Prompt>, DatasetError> {
    read_prompts_jsonl(&fs::read_to_string(path)?)
}
