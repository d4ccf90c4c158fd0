//! The method matrix: single-call prompting baselines, greedy critique and
//! revision, and collective critique with self-voting.

mod pack;
mod vote;

pub use pack::{PromptPack, CAI_5SHOT, COT_5SHOT, STANDARD_5SHOT, ZERO_SHOT};
pub use vote::{parse_vote, parse_votes, VoteTally};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, Decode, Script};
use crate::dataset::Prompt;
use crate::dialogue::{GenerationRequest, StepKind, Turn, ANSWER_CUE};

#[derive(Debug, Error)]
pub enum MethodError {
    #[error("pack {pack:?} lacks required field {field}")]
    MissingPackField { pack: String, field: &'static str },
    #[error("prompt pack: {0}")]
    Pack(String),
    #[error("invalid method {0:?}")]
    InvalidMethod(String),
    #[error("{step} step failed: {source}")]
    Backend {
        step: StepKind,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Baseline,
    If0shot,
    Cot0shot,
    Standard5shot,
    Cot5shot,
    Cai5shot,
    Ccsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shots {
    Zero,
    Five,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcsvVariant {
    GreedyCritique,
    CollectiveOnly,
    CollectivePlusVoting,
}

impl CcsvVariant {
    pub const ALL: [CcsvVariant; 3] = [
        CcsvVariant::GreedyCritique,
        CcsvVariant::CollectiveOnly,
        CcsvVariant::CollectivePlusVoting,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CcsvVariant::GreedyCritique => "greedy_critique",
            CcsvVariant::CollectiveOnly => "collective_only",
            CcsvVariant::CollectivePlusVoting => "collective_plus_voting",
        }
    }
}

impl FromStr for CcsvVariant {
    type Err = MethodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| MethodError::InvalidMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_k: None,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: MethodKind,
    pub shots: Shots,
    pub ccsv_variant: CcsvVariant,
    pub iterations: usize,
    pub fanout: usize,
    pub decoding: Decoding,
}

impl MethodConfig {
    pub fn new(method: MethodKind) -> Self {
        let shots = match method {
            MethodKind::Standard5shot | MethodKind::Cot5shot | MethodKind::Cai5shot => Shots::Five,
            _ => Shots::Zero,
        };
        Self {
            method,
            shots,
            ccsv_variant: CcsvVariant::CollectivePlusVoting,
            iterations: 1,
            fanout: 5,
            decoding: Decoding::default(),
        }
    }

    pub fn ccsv(shots: Shots, variant: CcsvVariant) -> Self {
        Self {
            shots,
            ccsv_variant: variant,
            ..Self::new(MethodKind::Ccsv)
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_fanout(mut self, fanout: usize) -> Self {
        self.fanout = fanout;
        self
    }

    pub fn is_iterative(&self) -> bool {
        matches!(self.method, MethodKind::Cai5shot | MethodKind::Ccsv)
    }

    pub fn pack_id(&self) -> &'static str {
        match (self.method, self.shots) {
            (MethodKind::Standard5shot, _) => STANDARD_5SHOT,
            (MethodKind::Cot5shot, _) => COT_5SHOT,
            (MethodKind::Cai5shot, _) | (MethodKind::Ccsv, Shots::Five) => CAI_5SHOT,
            _ => ZERO_SHOT,
        }
    }

    fn base_label(&self) -> &'static str {
        match (self.method, self.shots) {
            (MethodKind::Baseline, _) => "baseline",
            (MethodKind::If0shot, _) => "if_0shot",
            (MethodKind::Cot0shot, _) => "cot_0shot",
            (MethodKind::Standard5shot, _) => "standard_5shot",
            (MethodKind::Cot5shot, _) => "cot_5shot",
            (MethodKind::Cai5shot, _) => "cai_5shot",
            (MethodKind::Ccsv, Shots::Zero) => "ccsv_0shot",
            (MethodKind::Ccsv, Shots::Five) => "ccsv_5shot",
        }
    }

    /// `name[:variant][@iterations]`, defaults omitted.
    pub fn label(&self) -> String {
        let mut s = self.base_label().to_string();
        if self.method == MethodKind::Ccsv && self.ccsv_variant != CcsvVariant::CollectivePlusVoting {
            s.push(':');
            s.push_str(self.ccsv_variant.as_str());
        }
        if self.is_iterative() && self.iterations != 1 {
            s.push_str(&format!("@{}", self.iterations));
        }
        s
    }

    pub fn validate(&self) -> Result<(), MethodError> {
        if self.fanout == 0 {
            return Err(MethodError::InvalidMethod(format!("{}: fanout must be at least 1", self.label())));
        }
        Ok(())
    }

    fn request(&self, preamble: &str, dialogue: Vec<Turn>, n_samples: usize) -> GenerationRequest {
        GenerationRequest {
            preamble: preamble.to_string(),
            dialogue,
            n_samples,
            temperature: self.decoding.temperature,
            top_k: self.decoding.top_k,
            max_tokens: self.decoding.max_tokens,
            seed: None,
        }
    }
}

impl fmt::Display for MethodConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for MethodConfig {
    type Err = MethodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MethodError::InvalidMethod(s.to_string());
        let (rest, iterations) = match s.trim().split_once('@') {
            Some((head, n)) => (head, Some(n.parse::<usize>().map_err(|_| bad())?)),
            None => (s.trim(), None),
        };
        let (name, variant) = match rest.split_once(':') {
            Some((name, v)) => (name, Some(v.parse::<CcsvVariant>().map_err(|_| bad())?)),
            None => (rest, None),
        };
        let mut config = match name {
            "baseline" => MethodConfig::new(MethodKind::Baseline),
            "if_0shot" => MethodConfig::new(MethodKind::If0shot),
            "cot_0shot" => MethodConfig::new(MethodKind::Cot0shot),
            "standard_5shot" => MethodConfig::new(MethodKind::Standard5shot),
            "cot_5shot" => MethodConfig::new(MethodKind::Cot5shot),
            "cai_5shot" => MethodConfig::new(MethodKind::Cai5shot),
            "ccsv_0shot" | "ccsv" => MethodConfig::ccsv(Shots::Zero, CcsvVariant::CollectivePlusVoting),
            "ccsv_5shot" => MethodConfig::ccsv(Shots::Five, CcsvVariant::CollectivePlusVoting),
            _ => return Err(bad()),
        };
        if let Some(v) = variant {
            if config.method != MethodKind::Ccsv {
                return Err(bad());
            }
            config.ccsv_variant = v;
        }
        if let Some(n) = iterations {
            if !config.is_iterative() {
                return Err(bad());
            }
            config.iterations = n;
        }
        Ok(config)
    }
}

fn few_shot_block(exemplars: &str) -> Turn {
    // The trailing newline leaves a blank line between exemplars and the query.
    Turn::instruction(format!("{exemplars}\n"))
}

/// Single-call answer prompt for the non-iterative methods.
pub fn build_prompt(pack: &PromptPack, method: &MethodConfig, history: &[Turn]) -> Result<GenerationRequest, MethodError> {
    let mut dialogue = Vec::new();
    match method.method {
        MethodKind::If0shot => dialogue.push(Turn::instruction(pack.require("instruction", &pack.instruction)?)),
        MethodKind::Standard5shot | MethodKind::Cot5shot => {
            dialogue.push(few_shot_block(pack.require("few_shot_exemplars", &pack.few_shot_exemplars)?))
        }
        _ => {}
    }
    dialogue.extend_from_slice(history);
    if method.method == MethodKind::Cot0shot {
        dialogue.push(Turn::instruction(pack.require("cot_suffix", &pack.cot_suffix)?));
    }
    dialogue.push(Turn::instruction(ANSWER_CUE));
    Ok(method.request(&pack.preamble, dialogue, 1))
}

/// Initial response for the critique-based methods: the plain baseline layout.
pub fn build_initial(pack: &PromptPack, method: &MethodConfig, question: &str) -> GenerationRequest {
    method.request(
        &pack.preamble,
        vec![Turn::user(question), Turn::instruction(ANSWER_CUE)],
        1,
    )
}

pub fn build_critique(
    pack: &PromptPack,
    method: &MethodConfig,
    question: &str,
    response: &str,
    n_samples: usize,
) -> Result<GenerationRequest, MethodError> {
    let mut dialogue = Vec::new();
    if method.shots == Shots::Five {
        dialogue.push(few_shot_block(pack.require("few_shot_exemplars", &pack.few_shot_exemplars)?));
    }
    dialogue.push(Turn::user(question));
    dialogue.push(Turn::ai_model(response));
    dialogue.push(Turn::instruction(pack.require("critique_request", &pack.critique_request)?));
    dialogue.push(Turn::instruction(StepKind::Critique.cue()));
    Ok(method.request(&pack.preamble, dialogue, n_samples))
}

/// Distinct critique texts in first-seen order as a "- " bullet list.
pub fn critique_bullets<S: AsRef<str>>(critiques: &[S]) -> String {
    let mut seen = BTreeSet::new();
    critiques
        .iter()
        .map(AsRef::as_ref)
        .filter(|c| seen.insert(*c))
        .map(|c| format!("- {c}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_revision<S: AsRef<str>>(
    pack: &PromptPack,
    method: &MethodConfig,
    question: &str,
    response: &str,
    critiques: &[S],
    n_samples: usize,
) -> Result<GenerationRequest, MethodError> {
    let mut dialogue = Vec::new();
    if method.shots == Shots::Five {
        dialogue.push(few_shot_block(pack.require("revision_exemplars", &pack.revision_exemplars)?));
    }
    dialogue.push(Turn::user(question));
    dialogue.push(Turn::ai_model(response));
    dialogue.push(Turn::instruction(pack.require("critique_request", &pack.critique_request)?));
    let critique_turn = match (method.method, critiques) {
        (MethodKind::Cai5shot, [only]) => format!("{} {}", StepKind::Critique.cue(), only.as_ref()),
        _ => format!("Critiques:\n{}", critique_bullets(critiques)),
    };
    dialogue.push(Turn::instruction(critique_turn));
    dialogue.push(Turn::instruction(pack.require("revision_request", &pack.revision_request)?));
    dialogue.push(Turn::instruction(StepKind::Revise.cue()));
    Ok(method.request(&pack.preamble, dialogue, n_samples))
}

pub fn build_vote<S: AsRef<str>>(
    pack: &PromptPack,
    method: &MethodConfig,
    question: &str,
    drafts: &[S],
    n_samples: usize,
) -> Result<GenerationRequest, MethodError> {
    let mut dialogue = vec![Turn::user(question)];
    for (i, d) in drafts.iter().enumerate() {
        dialogue.push(Turn::instruction(format!("Response {}: {}", i + 1, d.as_ref())));
    }
    dialogue.push(Turn::instruction(pack.require("vote_request", &pack.vote_request)?));
    dialogue.push(Turn::instruction(StepKind::Vote.cue()));
    Ok(method.request(&pack.preamble, dialogue, n_samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub step_kind: StepKind,
    /// 0 for the initial response, then 1-based critique iterations.
    pub iteration: usize,
    pub assembled_prompt: String,
    pub fingerprint: String,
    pub n_samples: usize,
    pub decodes: Vec<Decode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tally: Option<BTreeMap<usize, usize>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub vote_fallback: bool,
}

impl Step {
    pub fn selected_text(&self) -> Option<&str> {
        self.selected
            .and_then(|i| self.decodes.get(i))
            .map(|d| d.text.as_str())
    }

    pub fn texts(&self) -> Vec<&str> {
        self.decodes.iter().map(|d| d.text.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub prompt_id: String,
    pub method: String,
    pub method_config: MethodConfig,
    pub steps: Vec<Step>,
    pub final_response: String,
    pub iterations_executed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl Transcript {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Fingerprint → decodes for every step, for replay.
    pub fn to_script(&self) -> Script {
        self.steps
            .iter()
            .map(|s| (s.fingerprint.clone(), s.texts().into_iter().map(String::from).collect()))
            .collect()
    }

    /// The response in force after `iteration` (0 = initial). `None` if the
    /// run did not get that far.
    pub fn response_after(&self, iteration: usize) -> Option<&str> {
        if iteration > self.iterations_executed {
            return None;
        }
        let mut current = None;
        for step in &self.steps {
            if step.iteration > iteration {
                break;
            }
            match step.step_kind {
                StepKind::Initial => current = step.selected_text(),
                StepKind::Revise | StepKind::Vote => {
                    if let Some(t) = self.selected_revision(step.iteration) {
                        current = Some(t);
                    }
                }
                StepKind::Critique => {}
            }
        }
        current
    }

    fn selected_revision(&self, iteration: usize) -> Option<&str> {
        let revise = self
            .steps
            .iter()
            .find(|s| s.iteration == iteration && s.step_kind == StepKind::Revise)?;
        let vote = self
            .steps
            .iter()
            .find(|s| s.iteration == iteration && s.step_kind == StepKind::Vote);
        let idx = vote.and_then(|v| v.selected).or(revise.selected)?;
        revise.decodes.get(idx).map(|d| d.text.as_str())
    }

    pub fn step_kinds(&self) -> Vec<StepKind> {
        self.steps.iter().map(|s| s.step_kind).collect()
    }
}

/// Mutable state while a transcript is being built by one worker.
struct Session<'a, B: Backend + ?Sized> {
    backend: &'a B,
    steps: Vec<Step>,
}

impl<B: Backend + ?Sized> Session<'_, B> {
    fn call(&mut self, iteration: usize, request: GenerationRequest) -> Result<&mut Step, MethodError> {
        let kind = request.step_kind().unwrap_or(StepKind::Initial);
        let decodes = self
            .backend
            .generate(&request)
            .map_err(|source| MethodError::Backend { step: kind, source })?;
        self.steps.push(Step {
            step_kind: kind,
            iteration,
            assembled_prompt: request.render(),
            fingerprint: request.fingerprint(),
            n_samples: request.n_samples,
            decodes,
            selected: None,
            tally: None,
            vote_fallback: false,
        });
        Ok(self.steps.last_mut().expect("just pushed"))
    }
}

/// Critique decodes for the current response.
pub fn ccsv_step_critique<B: Backend + ?Sized>(
    backend: &B,
    pack: &PromptPack,
    method: &MethodConfig,
    question: &str,
    response: &str,
    fanout: usize,
) -> Result<Vec<Decode>, MethodError> {
    let req = build_critique(pack, method, question, response, fanout)?;
    backend
        .generate(&req)
        .map_err(|source| MethodError::Backend { step: StepKind::Critique, source })
}

/// Revision drafts conditioned on all critiques.
pub fn ccsv_step_revise<B: Backend + ?Sized>(
    backend: &B,
    pack: &PromptPack,
    method: &MethodConfig,
    question: &str,
    response: &str,
    critiques: &[Decode],
    fanout: usize,
) -> Result<Vec<Decode>, MethodError> {
    let texts: Vec<&str> = critiques.iter().map(|d| d.text.as_str()).collect();
    let req = build_revision(pack, method, question, response, &texts, fanout)?;
    backend
        .generate(&req)
        .map_err(|source| MethodError::Backend { step: StepKind::Revise, source })
}

/// Selected draft index plus the tally. A single draft is selected without
/// a backend call.
pub fn ccsv_step_vote<B: Backend + ?Sized>(
    backend: &B,
    pack: &PromptPack,
    method: &MethodConfig,
    question: &str,
    drafts: &[Decode],
    fanout: usize,
) -> Result<VoteTally, MethodError> {
    if drafts.len() <= 1 {
        return Ok(VoteTally {
            counts: BTreeMap::new(),
            winner: 0,
            fallback: false,
        });
    }
    let texts: Vec<&str> = drafts.iter().map(|d| d.text.as_str()).collect();
    let req = build_vote(pack, method, question, &texts, fanout)?;
    let votes = backend
        .generate(&req)
        .map_err(|source| MethodError::Backend { step: StepKind::Vote, source })?;
    let vote_texts: Vec<&str> = votes.iter().map(|d| d.text.as_str()).collect();
    Ok(parse_votes(&vote_texts, drafts.len()))
}

fn run_steps<B: Backend + ?Sized>(
    session: &mut Session<'_, B>,
    config: &MethodConfig,
    prompt: &Prompt,
    pack: &PromptPack,
    iterations_done: &mut usize,
) -> Result<String, MethodError> {
    let question = prompt.text.as_str();
    if !config.is_iterative() {
        let req = build_prompt(pack, config, &[Turn::user(question)])?;
        let step = session.call(0, req)?;
        step.selected = Some(0);
        return Ok(step.decodes[0].text.clone());
    }

    let step = session.call(0, build_initial(pack, config, question))?;
    step.selected = Some(0);
    let mut current = step.decodes[0].text.clone();

    let (critique_n, revise_n, voting) = match (config.method, config.ccsv_variant) {
        (MethodKind::Cai5shot, _) | (_, CcsvVariant::GreedyCritique) => (1, 1, false),
        (_, CcsvVariant::CollectiveOnly) => (config.fanout, config.fanout, false),
        (_, CcsvVariant::CollectivePlusVoting) => (config.fanout, config.fanout, true),
    };

    for iteration in 1..=config.iterations {
        let req = build_critique(pack, config, question, &current, critique_n)?;
        let step = session.call(iteration, req)?;
        // The greedy arm keeps only the top (first) critique.
        step.selected = (critique_n == 1).then_some(0);
        let critiques: Vec<String> = step.texts().into_iter().map(String::from).collect();

        let req = build_revision(pack, config, question, &current, &critiques, revise_n)?;
        let step = session.call(iteration, req)?;
        let drafts: Vec<String> = step.texts().into_iter().map(String::from).collect();
        let chosen = if voting && drafts.len() > 1 {
            step.selected = None;
            let req = build_vote(pack, config, question, &drafts, config.fanout)?;
            let vote_step = session.call(iteration, req)?;
            let tally = parse_votes(&vote_step.texts(), drafts.len());
            vote_step.selected = Some(tally.winner);
            vote_step.tally = Some(tally.counts);
            vote_step.vote_fallback = tally.fallback;
            tally.winner
        } else {
            step.selected = Some(0);
            0
        };
        current = drafts[chosen].clone();
        *iterations_done = iteration;
    }
    Ok(current)
}

/// Runs one method on one prompt. Backend failures end the transcript early
/// with `failure` set and an empty final response.
pub fn run_method<B: Backend + ?Sized>(
    config: &MethodConfig,
    prompt: &Prompt,
    pack: &PromptPack,
    backend: &B,
) -> Transcript {
    let mut session = Session {
        backend,
        steps: Vec::new(),
    };
    let mut iterations_done = 0;
    let outcome = config
        .validate()
        .and_then(|_| run_steps(&mut session, config, prompt, pack, &mut iterations_done));
    let (final_response, failure) = match outcome {
        Ok(text) => (text, None),
        Err(e) => {
            log::warn!("{} / {}: {e}", prompt.id, config.label());
            (String::new(), Some(e.to_string()))
        }
    };
    Transcript {
        prompt_id: prompt.id.clone(),
        method: config.label(),
        method_config: config.clone(),
        steps: session.steps,
        final_response,
        iterations_executed: iterations_done,
        failure,
    }
}
