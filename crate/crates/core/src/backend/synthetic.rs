use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError};
use crate::attrib::{attribute_distribution, Attribute, Gender, Lexicon, LexiconEntry};
use crate::dialogue::{GenerationRequest, Role, StepKind};
use crate::metrics::entropy;

/// Marker the simulator puts in each critique; revision gain scales with
/// how many of them reach the revision prompt.
pub const CRITIQUE_MARKER: &str = "(critique #";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub name: String,
    pub gender: Gender,
    pub ethnicity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    #[serde(default = "default_pool")]
    pub entity_pool: Vec<PoolEntry>,
    pub base_diversity: f64,
    pub diversity_spread: f64,
    pub voter_accuracy: f64,
    /// Diversity added to a revision per distinct critique it sees.
    #[serde(default = "default_gain")]
    pub critique_gain: f64,
    /// Attribute the simulated voter judges diversity on.
    #[serde(default = "default_vote_attribute")]
    pub vote_attribute: Attribute,
    #[serde(default = "default_list_len")]
    pub list_len: usize,
}

fn default_gain() -> f64 {
    0.1
}

fn default_vote_attribute() -> Attribute {
    Attribute::Ethnicity
}

fn default_list_len() -> usize {
    6
}

const ETHNICITIES: [&str; 6] = ["black", "east_asian", "hispanic", "middle_eastern", "south_asian", "white"];

const GIVEN: [&str; 36] = [
    "Aldric", "Borin", "Calder", "Dovan", "Eskel", "Ferro", "Galen", "Halvar", "Ivor", "Joren", "Kestrel",
    "Lorcan", "Mireth", "Nerys", "Orla", "Perrin", "Quilla", "Rhosyn", "Sable", "Tamsin", "Undine", "Vesna",
    "Wren", "Xanthe", "Yarrow", "Zephyr", "Ashby", "Brannoc", "Corvin", "Dace", "Ember", "Fennick", "Glyn",
    "Hollis", "Isolde", "Jasper",
];

const FAMILY: [&str; 36] = [
    "Quorvane", "Telminor", "Vashenko", "Brisquel", "Ondrakai", "Feyhollow", "Marrowind", "Stellaquin",
    "Duvessar", "Kelthorne", "Arbuzet", "Nimvarra", "Prosquell", "Rathgeddon", "Solvanique", "Trellisar",
    "Umbervane", "Vorquist", "Wexlomere", "Yondralis", "Zelmirov", "Aquilonde", "Brevantis", "Corrimaunt",
    "Delvarro", "Esquivane", "Fallowmere", "Grisolde", "Hestrovan", "Illvanté", "Jorvessik", "Kallowey",
    "Lunquist", "Morvathe", "Novarrine", "Ostrevane",
];

/// 108 invented names: six per (ethnicity, gender) cell.
pub fn default_pool() -> Vec<PoolEntry> {
    let genders = [Gender::Female, Gender::Male, Gender::Other];
    (0..108)
        .map(|i| PoolEntry {
            name: format!("{} {}", GIVEN[i % 36], FAMILY[(i + 5 * (i / 36)) % 36]),
            gender: genders[(i / 6) % 3],
            ethnicity: ETHNICITIES[i / 18].to_string(),
        })
        .collect()
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            entity_pool: default_pool(),
            base_diversity: 0.2,
            diversity_spread: 0.15,
            voter_accuracy: 0.9,
            critique_gain: default_gain(),
            vote_attribute: default_vote_attribute(),
            list_len: default_list_len(),
        }
    }
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::InvalidRequest(format!("synthetic profile: {m}")));
        if self.entity_pool.is_empty() {
            return bad("entity pool is empty");
        }
        if !(0.0..=1.0).contains(&self.base_diversity) {
            return bad("base_diversity outside [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.voter_accuracy) {
            return bad("voter_accuracy outside [0, 1]");
        }
        if !(self.diversity_spread.is_finite() && self.diversity_spread >= 0.0)
            || !(self.critique_gain.is_finite() && self.critique_gain >= 0.0)
        {
            return bad("spread and gain must be non-negative");
        }
        if self.list_len == 0 {
            return bad("list_len must be positive");
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let profile: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        profile.validate()?;
        Ok(profile)
    }

    /// Lexicon covering exactly the pool, for scoring simulated runs.
    pub fn lexicon(&self) -> Lexicon {
        let entries = self
            .entity_pool
            .iter()
            .map(|e| LexiconEntry {
                canonical: e.name.clone(),
                aliases: Vec::new(),
                gender: e.gender,
                ethnicity: Some(e.ethnicity.clone()),
            })
            .collect();
        Lexicon::new(entries, None).expect("pool names are distinct")
    }
}

/// Seeded simulator of the answer, critique, revision and vote steps.
pub struct SyntheticBackend {
    profile: SyntheticProfile,
    lexicon: Lexicon,
    seed: u64,
    ethnicities: Vec<String>,
    genders: Vec<Gender>,
    response_re: Regex,
}

impl SyntheticBackend {
    pub fn new(profile: SyntheticProfile, seed: u64) -> Result<Self, BackendError> {
        profile.validate()?;
        let ethnicities: Vec<String> = profile
            .entity_pool
            .iter()
            .map(|e| e.ethnicity.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let genders: Vec<Gender> = profile
            .entity_pool
            .iter()
            .map(|e| e.gender)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self {
            lexicon: profile.lexicon(),
            profile,
            seed,
            ethnicities,
            genders,
            response_re: Regex::new(r"(?s)^Response (\d+): (.*)$").expect("static regex"),
        })
    }

    pub fn profile(&self) -> &SyntheticProfile {
        &self.profile
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    fn rng(&self, seed: u64, question: &str, kind: StepKind, index: usize, current: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        for part in [question, &kind.to_string(), current] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.update((index as u64).to_le_bytes());
        let digest: [u8; 32] = h.finalize().into();
        ChaCha8Rng::from_seed(digest)
    }

    fn noise(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.profile.diversity_spread * (2.0 * rng.random::<f64>() - 1.0)
    }

    /// Diversity level a response sits at: distinct vote-attribute values,
    /// rescaled to [0, 1].
    fn level_of(&self, text: &str) -> f64 {
        let mentions = self.lexicon.extract_people(text);
        let values: BTreeSet<&str> = mentions
            .iter()
            .filter_map(|m| m.value(self.profile.vote_attribute))
            .collect();
        let span = match self.profile.vote_attribute {
            Attribute::Ethnicity => self.ethnicities.len(),
            Attribute::Gender => self.genders.len(),
        };
        if values.is_empty() || span <= 1 {
            return 0.0;
        }
        (values.len() - 1) as f64 / (span - 1) as f64
    }

    fn draft(&self, level: f64, rng: &mut ChaCha8Rng) -> String {
        let level = level.clamp(0.0, 1.0);
        let pick = |n: usize| 1 + (level * (n - 1) as f64).floor() as usize;
        let mut eths = self.ethnicities.clone();
        eths.shuffle(rng);
        eths.truncate(pick(eths.len()));
        let mut gens = self.genders.clone();
        gens.shuffle(rng);
        gens.truncate(pick(gens.len()));

        let pool = &self.profile.entity_pool;
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(rng);
        let mut used = vec![false; pool.len()];
        let mut names = Vec::new();
        for slot in 0..self.profile.list_len {
            let eth = &eths[slot % eths.len()];
            let gen = gens[slot % gens.len()];
            let choice = order
                .iter()
                .copied()
                .find(|&i| !used[i] && pool[i].ethnicity == *eth && pool[i].gender == gen)
                .or_else(|| order.iter().copied().find(|&i| !used[i] && pool[i].ethnicity == *eth))
                .or_else(|| order.iter().copied().find(|&i| !used[i]));
            let Some(i) = choice else { break };
            used[i] = true;
            names.push(pool[i].name.as_str());
        }
        match names.split_last() {
            None => "I am not sure.".to_string(),
            Some((only, [])) => format!("One name that comes to mind is {only}."),
            Some((last, rest)) => format!("Some names that come to mind: {} and {last}.", rest.join(", ")),
        }
    }

    fn drafts_in(&self, request: &GenerationRequest) -> Vec<String> {
        request
            .dialogue
            .iter()
            .filter(|t| t.role == Role::Instruction)
            .filter_map(|t| self.response_re.captures(&t.text))
            .map(|c| c[2].to_string())
            .collect()
    }

    fn draft_entropy(&self, text: &str) -> f64 {
        let mentions = self.lexicon.extract_people(text);
        entropy(&attribute_distribution(&mentions, self.profile.vote_attribute))
    }
}

impl Backend for SyntheticBackend {
    fn sample(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        let kind = request.step_kind().ok_or(BackendError::UnknownStep)?;
        let seed = request.seed.unwrap_or(self.seed);
        let question = request.question().unwrap_or("");
        let current = request.current_response().unwrap_or("");
        let n = request.n_samples;
        let out = match kind {
            StepKind::Initial => (0..n)
                .map(|i| {
                    let mut rng = self.rng(seed, question, kind, i, "");
                    let level = self.profile.base_diversity + self.noise(&mut rng);
                    self.draft(level, &mut rng)
                })
                .collect(),
            StepKind::Critique => {
                let mentions = self.lexicon.extract_people(current).len();
                let level = self.level_of(current);
                (0..n)
                    .map(|i| {
                        format!(
                            "{CRITIQUE_MARKER}{}) The response names {mentions} people at diversity level {level:.2}. \
                             Include people of more ethnicities and genders.",
                            i + 1
                        )
                    })
                    .collect()
            }
            StepKind::Revise => {
                let prompt = request.render();
                let critiques = prompt.matches(CRITIQUE_MARKER).count();
                let prev = self.level_of(current);
                (0..n)
                    .map(|i| {
                        let mut rng = self.rng(seed, question, kind, i, current);
                        let level = prev + self.profile.critique_gain * critiques as f64 + self.noise(&mut rng);
                        self.draft(level, &mut rng)
                    })
                    .collect()
            }
            StepKind::Vote => {
                let drafts = self.drafts_in(request);
                if drafts.is_empty() {
                    return Err(BackendError::UnknownStep);
                }
                let scores: Vec<f64> = drafts.iter().map(|d| self.draft_entropy(d)).collect();
                let best = scores
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &s)| if s > scores[best] { i } else { best });
                (0..n)
                    .map(|i| {
                        let mut rng = self.rng(seed, question, kind, i, "");
                        let k = if rng.random::<f64>() < self.profile.voter_accuracy {
                            best
                        } else {
                            rng.random_range(0..drafts.len())
                        };
                        format!("Response {}", k + 1)
                    })
                    .collect()
            }
        };
        Ok(out)
    }
}
