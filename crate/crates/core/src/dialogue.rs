//! Generation requests: a preamble plus role-tagged turns, rendered either as a
//! single text prompt or as chat messages.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ANSWER_CUE: &str = "AI model:";
pub const CRITIQUE_CUE: &str = "Critique:";
pub const REVISION_CUE: &str = "Revision:";
pub const VOTE_CUE: &str = "Vote:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    AiModel,
    /// Rendered as a bare line with no speaker label.
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into() }
    }

    pub fn ai_model(text: impl Into<String>) -> Self {
        Self { role: Role::AiModel, text: text.into() }
    }

    pub fn instruction(text: impl Into<String>) -> Self {
        Self { role: Role::Instruction, text: text.into() }
    }

    pub fn render(&self) -> String {
        let label = match self.role {
            Role::User => "User:",
            Role::AiModel => "AI model:",
            Role::Instruction => return self.text.clone(),
        };
        if self.text.is_empty() {
            label.to_string()
        } else {
            format!("{label} {}", self.text)
        }
    }
}

/// Which pipeline step a request belongs to, recovered from its trailing cue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Initial,
    Critique,
    Revise,
    Vote,
}

impl StepKind {
    pub fn cue(self) -> &'static str {
        match self {
            StepKind::Initial => ANSWER_CUE,
            StepKind::Critique => CRITIQUE_CUE,
            StepKind::Revise => REVISION_CUE,
            StepKind::Vote => VOTE_CUE,
        }
    }

    pub fn from_cue(cue: &str) -> Option<Self> {
        [StepKind::Initial, StepKind::Critique, StepKind::Revise, StepKind::Vote]
            .into_iter()
            .find(|k| k.cue() == cue.trim())
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::Initial => "initial",
            StepKind::Critique => "critique",
            StepKind::Revise => "revise",
            StepKind::Vote => "vote",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub preamble: String,
    pub dialogue: Vec<Turn>,
    pub n_samples: usize,
    pub temperature: f64,
    /// `None` leaves the endpoint default in place.
    pub top_k: Option<u32>,
    pub max_tokens: u32,
    /// Only deterministic backends look at this.
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct FingerprintView<'a> {
    preamble: &'a str,
    dialogue: Vec<(Role, &'a str)>,
    n_samples: usize,
}

impl GenerationRequest {
    /// The single text prompt: preamble, then one rendered turn per line.
    pub fn render(&self) -> String {
        let mut lines = Vec::with_capacity(self.dialogue.len() + 1);
        if !self.preamble.is_empty() {
            lines.push(self.preamble.clone());
        }
        lines.extend(self.dialogue.iter().map(Turn::render));
        lines.join("\n")
    }

    /// Stable hash of preamble, dialogue and sample count.
    ///
    /// Hashes a fixed-field-order JSON encoding so the value does not depend
    /// on platform or decoding parameters.
    pub fn fingerprint(&self) -> String {
        let view = FingerprintView {
            preamble: &self.preamble,
            dialogue: self.dialogue.iter().map(|t| (t.role, t.text.as_str())).collect(),
            n_samples: self.n_samples,
        };
        let canonical = serde_json::to_vec(&view).expect("fingerprint view serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn step_kind(&self) -> Option<StepKind> {
        let last = self.dialogue.last()?;
        if last.role != Role::Instruction {
            return None;
        }
        StepKind::from_cue(&last.text)
    }

    /// Text of the first user turn.
    pub fn question(&self) -> Option<&str> {
        self.dialogue
            .iter()
            .find(|t| t.role == Role::User)
            .map(|t| t.text.as_str())
    }

    /// Text of the last model turn, i.e. the response under critique.
    pub fn current_response(&self) -> Option<&str> {
        self.dialogue
            .iter()
            .rev()
            .find(|t| t.role == Role::AiModel)
            .map(|t| t.text.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(dialogue: Vec<Turn>) -> GenerationRequest {
        GenerationRequest {
            preamble: "P".into(),
            dialogue,
            n_samples: 1,
            temperature: 0.7,
            top_k: None,
            max_tokens: 1024,
            seed: None,
        }
    }

    #[test]
    fn render_lines() {
        let r = req(vec![
            Turn::user("Name a few ceos."),
            Turn::ai_model(""),
            Turn::instruction(ANSWER_CUE),
        ]);
        assert_eq!(r.render(), "P\nUser: Name a few ceos.\nAI model:\nAI model:");
        assert_eq!(r.step_kind(), Some(StepKind::Initial));
    }

    #[test]
    fn fingerprint_ignores_decoding_params() {
        let a = req(vec![Turn::user("q"), Turn::instruction(VOTE_CUE)]);
        let mut b = a.clone();
        b.temperature = 0.0;
        b.seed = Some(9);
        b.max_tokens = 3;
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.n_samples = 2;
        assert_ne!(a.fingerprint(), b.fingerprint());
        let mut c = a.clone();
        c.dialogue[0].role = Role::Instruction;
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn fingerprint_is_pinned() {
        // Guards against accidental changes to the canonical encoding.
        let r = req(vec![Turn::user("q"), Turn::instruction(ANSWER_CUE)]);
        let expected = hex::encode(Sha256::digest(
            br#"{"preamble":"P","dialogue":[["user","q"],["instruction","AI model:"]],"n_samples":1}"#,
        ));
        assert_eq!(r.fingerprint(), expected);
    }
}
