use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::MethodError;

pub const ZERO_SHOT: &str = "zero_shot";
pub const STANDARD_5SHOT: &str = "standard_5shot";
pub const COT_5SHOT: &str = "cot_5shot";
pub const CAI_5SHOT: &str = "cai_5shot";

const BUILTIN: [(&str, &str); 4] = [
    (ZERO_SHOT, include_str!("../../packs/zero_shot.pack")),
    (STANDARD_5SHOT, include_str!("../../packs/standard_5shot.pack")),
    (COT_5SHOT, include_str!("../../packs/cot_5shot.pack")),
    (CAI_5SHOT, include_str!("../../packs/cai_5shot.pack")),
];

const SECTIONS: [&str; 8] = [
    "preamble",
    "instruction",
    "cot_suffix",
    "few_shot_exemplars",
    "revision_exemplars",
    "critique_request",
    "revision_request",
    "vote_request",
];

/// Verbatim prompt text for one family of methods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPack {
    pub pack_id: String,
    pub preamble: String,
    pub instruction: Option<String>,
    pub cot_suffix: Option<String>,
    pub few_shot_exemplars: Option<String>,
    pub revision_exemplars: Option<String>,
    pub critique_request: Option<String>,
    pub revision_request: Option<String>,
    pub vote_request: Option<String>,
    /// sha256 of the source bytes.
    pub digest: String,
}

impl PromptPack {
    /// Parses `--- name ---` delimited sections. Trailing blank lines of a
    /// section are dropped; everything else is kept byte for byte.
    pub fn parse(pack_id: &str, text: &str) -> Result<Self, MethodError> {
        let mut sections: Vec<(String, Vec<&str>)> = Vec::new();
        for line in text.split('\n') {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if let Some(name) = line.strip_prefix("--- ").and_then(|l| l.strip_suffix(" ---")) {
                let name = name.trim().to_string();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(MethodError::Pack(format!("{pack_id}: unknown section {name:?}")));
                }
                if sections.iter().any(|(n, _)| *n == name) {
                    return Err(MethodError::Pack(format!("{pack_id}: section {name:?} repeated")));
                }
                sections.push((name, Vec::new()));
                continue;
            }
            match sections.last_mut() {
                Some((_, lines)) => lines.push(line),
                None if line.trim().is_empty() => {}
                None => return Err(MethodError::Pack(format!("{pack_id}: text before the first section"))),
            }
        }
        let mut get = |name: &str| -> Option<String> {
            let idx = sections.iter().position(|(n, _)| n == name)?;
            let (_, mut lines) = sections.remove(idx);
            while lines.last().is_some_and(|l| l.trim().is_empty()) {
                lines.pop();
            }
            Some(lines.join("\n")).filter(|s| !s.is_empty())
        };
        let preamble = get("preamble").ok_or_else(|| MethodError::MissingPackField {
            pack: pack_id.to_string(),
            field: "preamble",
        })?;
        Ok(Self {
            pack_id: pack_id.to_string(),
            preamble,
            instruction: get("instruction"),
            cot_suffix: get("cot_suffix"),
            few_shot_exemplars: get("few_shot_exemplars"),
            revision_exemplars: get("revision_exemplars"),
            critique_request: get("critique_request"),
            revision_request: get("revision_request"),
            vote_request: get("vote_request"),
            digest: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }

    pub fn builtin(pack_id: &str) -> Option<Self> {
        BUILTIN
            .iter()
            .find(|(id, _)| *id == pack_id)
            .map(|(id, text)| Self::parse(id, text).expect("bundled packs parse"))
    }

    /// `<dir>/<pack_id>.pack`.
    pub fn load(dir: impl AsRef<Path>, pack_id: &str) -> Result<Self, MethodError> {
        let path = dir.as_ref().join(format!("{pack_id}.pack"));
        let text = std::fs::read_to_string(&path).map_err(|e| MethodError::Pack(format!("{}: {e}", path.display())))?;
        Self::parse(pack_id, &text)
    }

    /// From `dir` when given, else the bundled copy.
    pub fn resolve(dir: Option<&Path>, pack_id: &str) -> Result<Self, MethodError> {
        match dir {
            Some(d) => Self::load(d, pack_id),
            None => Self::builtin(pack_id).ok_or_else(|| MethodError::Pack(format!("no bundled pack {pack_id:?}"))),
        }
    }

    pub fn require<'a>(&self, field: &'static str, value: &'a Option<String>) -> Result<&'a str, MethodError> {
        value.as_deref().ok_or_else(|| MethodError::MissingPackField {
            pack: self.pack_id.clone(),
            field,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PREAMBLE: &str = "You are an AI model. Please respond to the user's questions fluently and comprehensively.";

    #[test]
    fn builtins_parse() {
        for (id, _) in BUILTIN {
            let p = PromptPack::builtin(id).unwrap();
            assert_eq!(p.preamble, PREAMBLE);
        }
        let z = PromptPack::builtin(ZERO_SHOT).unwrap();
        assert_eq!(
            z.instruction.as_deref(),
            Some("Instruction: Write AI model's response to the user question such that it has diversity")
        );
        assert_eq!(z.cot_suffix.as_deref(), Some("Let's think step by step"));
        assert!(z.critique_request.unwrap().contains("identify ways in which it lacks diversity"));
    }

    #[test]
    fn cai_pack_has_five_exemplars_each() {
        let p = PromptPack::builtin(CAI_5SHOT).unwrap();
        let few = p.few_shot_exemplars.as_deref().unwrap();
        assert_eq!(few.split("\n\n").count(), 5);
        assert_eq!(few.matches("Critique: ").count(), 5);
        let rev = p.revision_exemplars.as_deref().unwrap();
        assert_eq!(rev.matches("\nRevision: ").count(), 5);
        assert!(p.revision_request.unwrap().starts_with("Revision Request:  Please rewrite"));
    }

    #[test]
    fn five_shot_packs_have_five_users() {
        for id in [STANDARD_5SHOT, COT_5SHOT] {
            let p = PromptPack::builtin(id).unwrap();
            assert_eq!(p.few_shot_exemplars.unwrap().matches("User: ").count(), 5, "{id}");
        }
    }

    #[test]
    fn unknown_section_rejected() {
        let err = PromptPack::parse("x", "--- preamble ---\nP\n--- bogus ---\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        assert!(PromptPack::parse("x", "--- instruction ---\nI\n").is_err());
    }
}
