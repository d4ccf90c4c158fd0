//! Suite × method execution with a bounded worker pool, per-record durable
//! JSONL output and resume.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{Backend, BackendError, Limited, LiveBackend, ReplayBackend, SyntheticBackend, SyntheticProfile};
use crate::dataset::{load_prompts, DatasetError, Prompt};
use crate::methods::{run_method, Decoding, MethodConfig, MethodError, PromptPack, Transcript};

pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("config hash mismatch: existing records use {existing}, this config is {current}")]
    ConfigMismatch { existing: String, current: String },
    #[error("{0} already holds records; set resume = true or pick another run id")]
    OutputExists(PathBuf),
    #[error("{path}:{line}: {reason}")]
    CorruptRecord { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Method(#[from] MethodError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Replay,
    Synthetic,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub profile: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingSection {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub top_k: Option<u32>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_fanout")]
    pub fanout: usize,
}

fn default_temperature() -> f64 {
    0.7
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_fanout() -> usize {
    5
}

impl Default for DecodingSection {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            top_k: None,
            max_tokens: default_max_tokens(),
            fanout: default_fanout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodsSection {
    pub run: Vec<String>,
    /// Directory of `.pack` files; bundled packs when absent.
    #[serde(default)]
    pub packs_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub resume: bool,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub suite: SuiteSection,
    pub backend: BackendSection,
    #[serde(default)]
    pub decoding: DecodingSection,
    pub methods: MethodsSection,
    pub output: OutputSection,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    /// Loads a config file; relative paths are taken from the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let mut config = Self::parse(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.suite.path = resolve(base, &config.suite.path);
        config.output.dir = resolve(base, &config.output.dir);
        for p in [&mut config.backend.script, &mut config.backend.profile, &mut config.methods.packs_dir]
            .into_iter()
            .flatten()
        {
            *p = resolve(base, p);
        }
        Ok(config)
    }

    pub fn method_configs(&self) -> Result<Vec<MethodConfig>, RunError> {
        if self.methods.run.is_empty() {
            return Err(RunError::Config("methods.run is empty".into()));
        }
        let decoding = Decoding {
            temperature: self.decoding.temperature,
            top_k: self.decoding.top_k,
            max_tokens: self.decoding.max_tokens,
        };
        let mut seen = HashSet::new();
        self.methods
            .run
            .iter()
            .map(|s| {
                let mut m: MethodConfig = s.parse()?;
                m.fanout = self.decoding.fanout;
                m.decoding = decoding.clone();
                m.validate()?;
                if !seen.insert(m.label()) {
                    return Err(RunError::Config(format!("method {} listed twice", m.label())));
                }
                Ok(m)
            })
            .collect()
    }

    pub fn build_backend(&self) -> Result<Arc<dyn Backend>, RunError> {
        let b = &self.backend;
        let need = |what: &str| RunError::Config(format!("backend.{what} is required for {:?}", b.kind));
        let inner: Box<dyn Backend> = match b.kind {
            BackendKind::Replay => Box::new(ReplayBackend::load(b.script.as_ref().ok_or_else(|| need("script"))?)?),
            BackendKind::Synthetic => {
                let profile = match &b.profile {
                    Some(p) => SyntheticProfile::load(p)?,
                    None => SyntheticProfile::default(),
                };
                Box::new(SyntheticBackend::new(profile, self.output.seed)?)
            }
            BackendKind::Live => Box::new(LiveBackend::new(
                b.endpoint.clone().ok_or_else(|| need("endpoint"))?,
                b.model.clone().ok_or_else(|| need("model"))?,
            )),
        };
        Ok(Arc::new(Limited::new(inner, b.max_in_flight)))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String, RunError> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Everything a run's outputs depend on, resolved and digested.
pub struct Plan {
    pub prompts: Vec<Prompt>,
    pub methods: Vec<MethodConfig>,
    pub packs: BTreeMap<String, PromptPack>,
    pub config_hash: String,
    pub run_id: String,
    pub suite_digest: String,
}

#[derive(Serialize)]
struct HashView<'a> {
    suite: &'a str,
    packs: BTreeMap<&'a str, &'a str>,
    methods: Vec<String>,
    decoding: &'a DecodingSection,
    seed: u64,
    backend_kind: BackendKind,
    backend_source: String,
}

impl Plan {
    pub fn new(config: &RunConfig) -> Result<Self, RunError> {
        let suite_bytes = fs::read(&config.suite.path)?;
        let prompts = load_prompts(&config.suite.path)?;
        let methods = config.method_configs()?;
        let mut packs = BTreeMap::new();
        for m in &methods {
            let id = m.pack_id();
            if !packs.contains_key(id) {
                packs.insert(id.to_string(), PromptPack::resolve(config.methods.packs_dir.as_deref(), id)?);
            }
        }
        let backend_source = match config.backend.kind {
            BackendKind::Replay => file_digest(config.backend.script.as_deref().unwrap_or(Path::new("")))?,
            BackendKind::Synthetic => match &config.backend.profile {
                Some(p) => file_digest(p)?,
                None => "default-profile".into(),
            },
            BackendKind::Live => format!(
                "{}|{}",
                config.backend.endpoint.as_deref().unwrap_or(""),
                config.backend.model.as_deref().unwrap_or("")
            ),
        };
        let suite_digest = sha256_hex(&suite_bytes);
        let view = HashView {
            suite: &suite_digest,
            packs: packs.iter().map(|(k, p)| (k.as_str(), p.digest.as_str())).collect(),
            methods: methods.iter().map(|m| m.label()).collect(),
            decoding: &config.decoding,
            seed: config.output.seed,
            backend_kind: config.backend.kind,
            backend_source,
        };
        let config_hash = sha256_hex(&serde_json::to_vec(&view)?);
        let run_id = config
            .output
            .run_id
            .clone()
            .unwrap_or_else(|| config_hash[..12].to_string());
        Ok(Self {
            prompts,
            methods,
            packs,
            config_hash,
            run_id,
            suite_digest,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_hash: String,
    pub prompt: Prompt,
    pub method: String,
    pub status: RecordStatus,
    pub backend_calls: usize,
    pub transcript: Transcript,
}

impl RunRecord {
    pub fn key(&self) -> (String, String) {
        (self.prompt.id.clone(), self.method.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub config_hash: String,
    pub suite_digest: String,
    pub pack_digests: BTreeMap<String, String>,
    pub methods: Vec<String>,
    pub backend: BackendKind,
    pub deterministic: bool,
    pub started_at: String,
    pub finished_at: String,
    pub elapsed_ms: u128,
    pub expected_records: usize,
    pub completed: usize,
    pub failed: usize,
    pub retries: u64,
    pub interrupted: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop accepting records after this many new ones; simulates a crash.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub manifest: Manifest,
    pub written: usize,
    pub skipped: usize,
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, RunError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RunError::CorruptRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads existing records, truncating a torn final line left by a crash.
fn recover(path: &Path) -> Result<Vec<RunRecord>, RunError> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut good_len = 0;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        let last = i + 1 == lines.len();
        match serde_json::from_str::<RunRecord>(line.trim_end()) {
            Ok(r) if line.ends_with('\n') => {
                records.push(r);
                good_len += line.len();
            }
            _ if line.trim().is_empty() => good_len += line.len(),
            _ if last => {
                log::warn!("{}: dropping torn trailing record", path.display());
            }
            Err(e) => {
                return Err(RunError::CorruptRecord {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
            Ok(_) => unreachable!("a parsed line without newline is always last"),
        }
    }
    if good_len < text.len() {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(good_len as u64)?;
        f.sync_all()?;
    }
    Ok(records)
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Rewrites the record file sorted by (prompt, method) suite order.
fn compact(path: &Path, plan: &Plan) -> Result<(), RunError> {
    let prompt_pos: BTreeMap<&str, usize> = plan.prompts.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    let method_pos: BTreeMap<String, usize> = plan.methods.iter().enumerate().map(|(i, m)| (m.label(), i)).collect();
    let mut records = read_records(path)?;
    records.sort_by_key(|r| {
        (
            prompt_pos.get(r.prompt.id.as_str()).copied().unwrap_or(usize::MAX),
            method_pos.get(&r.method).copied().unwrap_or(usize::MAX),
        )
    });
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = File::create(&tmp)?;
        for r in &records {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn run_experiment(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let backend = config.build_backend()?;
    run_with_backend(config, backend, &RunOptions::default())
}

/// Runs every (prompt, method) pair not already on disk.
pub fn run_with_backend(config: &RunConfig, backend: Arc<dyn Backend>, options: &RunOptions) -> Result<RunOutcome, RunError> {
    let started = Instant::now();
    let started_at = now_rfc3339();
    let plan = Plan::new(config)?;
    let run_dir = config.output.dir.join(&plan.run_id);
    fs::create_dir_all(&run_dir)?;
    let records_path = run_dir.join(TRANSCRIPTS_FILE);

    let existing = if records_path.exists() && fs::metadata(&records_path)?.len() > 0 {
        if !config.output.resume {
            return Err(RunError::OutputExists(records_path));
        }
        let records = recover(&records_path)?;
        if let Some(r) = records.iter().find(|r| r.config_hash != plan.config_hash) {
            return Err(RunError::ConfigMismatch {
                existing: r.config_hash.clone(),
                current: plan.config_hash.clone(),
            });
        }
        records
    } else {
        Vec::new()
    };
    let done: HashSet<(String, String)> = existing.iter().map(RunRecord::key).collect();

    let file = OpenOptions::new().create(true).append(true).open(&records_path)?;
    let written = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let next_prompt = AtomicUsize::new(0);
    let workers = config.output.workers.max(1).min(plan.prompts.len().max(1));
    let (tx, rx) = mpsc::channel::<(RunRecord, mpsc::SyncSender<()>)>();

    std::thread::scope(|scope| -> Result<(), RunError> {
        let writer = scope.spawn({
            let written = &written;
            let stop = &stop;
            let limit = options.stop_after;
            move || -> Result<(), RunError> {
                let mut file = file;
                for (record, ack) in rx {
                    if limit.is_some_and(|l| written.load(Ordering::SeqCst) >= l) {
                        stop.store(true, Ordering::SeqCst);
                        continue;
                    }
                    let mut line = serde_json::to_vec(&record)?;
                    line.push(b'\n');
                    file.write_all(&line)?;
                    file.flush()?;
                    file.sync_data()?;
                    written.fetch_add(1, Ordering::SeqCst);
                    let _ = ack.send(());
                }
                Ok(())
            }
        });

        for _ in 0..workers {
            let tx = tx.clone();
            let (plan, backend, done, stop, next_prompt) = (&plan, &backend, &done, &stop, &next_prompt);
            scope.spawn(move || loop {
                let i = next_prompt.fetch_add(1, Ordering::SeqCst);
                let Some(prompt) = plan.prompts.get(i) else { break };
                for method in &plan.methods {
                    if stop.load(Ordering::SeqCst) {
                        return;
                    }
                    let label = method.label();
                    if done.contains(&(prompt.id.clone(), label.clone())) {
                        continue;
                    }
                    let pack = &plan.packs[method.pack_id()];
                    let transcript = run_method(method, prompt, pack, backend.as_ref());
                    let record = RunRecord {
                        run_id: plan.run_id.clone(),
                        config_hash: plan.config_hash.clone(),
                        prompt: prompt.clone(),
                        method: label,
                        status: if transcript.failed() {
                            RecordStatus::Failed
                        } else {
                            RecordStatus::Completed
                        },
                        backend_calls: transcript.steps.len() + usize::from(transcript.failed()),
                        transcript,
                    };
                    let (ack_tx, ack_rx) = mpsc::sync_channel(1);
                    if tx.send((record, ack_tx)).is_err() || ack_rx.recv().is_err() {
                        // Writer stopped or dropped the record.
                        return;
                    }
                }
            });
        }
        drop(tx);
        writer.join().expect("writer thread panicked")
    })?;

    let interrupted = stop.load(Ordering::SeqCst);
    if !interrupted {
        compact(&records_path, &plan)?;
    }
    let all = read_records(&records_path)?;
    let failed = all.iter().filter(|r| r.status == RecordStatus::Failed).count();
    let manifest = Manifest {
        run_id: plan.run_id.clone(),
        config_hash: plan.config_hash.clone(),
        suite_digest: plan.suite_digest.clone(),
        pack_digests: plan.packs.iter().map(|(k, p)| (k.clone(), p.digest.clone())).collect(),
        methods: plan.methods.iter().map(|m| m.label()).collect(),
        backend: config.backend.kind,
        deterministic: backend.deterministic(),
        started_at,
        finished_at: now_rfc3339(),
        elapsed_ms: started.elapsed().as_millis(),
        expected_records: plan.prompts.len() * plan.methods.len(),
        completed: all.len() - failed,
        failed,
        retries: backend.retry_count(),
        interrupted,
    };
    fs::write(run_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutcome {
        run_dir,
        manifest,
        written: written.load(Ordering::SeqCst),
        skipped: done.len(),
    })
}
