//! Side-by-side human rating: task building, the rating queue with its
//! append-only log, and score aggregation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::RunRecord;
use crate::stats::{bootstrap_interval, t_interval, StatsError};

pub const DIVERSITY_QUESTION: &str =
    "In your perception, which response has greater diversity of the people and cultures represented?";
pub const HELPFULNESS_QUESTION: &str = "Which response is more helpful?";
pub const DEFAULT_REQUIRED_RATINGS: usize = 3;

#[derive(Debug, Error)]
pub enum SxsError {
    #[error("option {0} is outside 0..=6")]
    OptionOutOfRange(i64),
    #[error("prompt ids differ between runs: only in baseline {only_baseline:?}, only in candidate {only_candidate:?}")]
    PromptMismatch {
        only_baseline: Vec<String>,
        only_candidate: Vec<String>,
    },
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown rater {0}")]
    UnknownRater(String),
    #[error("task {task_id} was not served to rater {rater_id}")]
    NotServed { task_id: String, rater_id: String },
    #[error("task {0} already has all its ratings")]
    TaskFull(String),
    #[error("no ratings to aggregate")]
    NoRatings,
    #[error("{0}")]
    Malformed(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Option index 0..=6 to a score in [-1.5, 1.5]. Negative favours response 1.
pub fn likert_value(option_index: i64) -> Result<f64, SxsError> {
    if !(0..=6).contains(&option_index) {
        return Err(SxsError::OptionOutOfRange(option_index));
    }
    Ok(-1.5 + 0.5 * option_index as f64)
}

/// The seven labels for one question, response 1 side first.
pub fn option_labels(adjective: &str) -> [String; 7] {
    [
        format!("Response 1 is much more {adjective}"),
        format!("Response 1 is more {adjective}"),
        format!("Response 1 is slightly more {adjective}"),
        "About the same".to_string(),
        format!("Response 2 is slightly more {adjective}"),
        format!("Response 2 is more {adjective}"),
        format!("Response 2 is much more {adjective}"),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SxSTask {
    pub task_id: String,
    pub prompt_id: String,
    pub prompt: String,
    pub response_1: String,
    pub response_2: String,
    pub method_1: String,
    pub method_2: String,
    pub required_ratings: usize,
    /// Sides were swapped: the baseline is response 2. Scores are negated
    /// back when aggregating.
    #[serde(default)]
    pub swapped: bool,
}

/// What a rater sees: no method labels, no prompt id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub prompt: String,
    pub response_1: String,
    pub response_2: String,
    pub diversity_question: String,
    pub helpfulness_question: String,
    pub diversity_options: Vec<String>,
    pub helpfulness_options: Vec<String>,
}

impl From<&SxSTask> for TaskView {
    fn from(t: &SxSTask) -> Self {
        Self {
            task_id: t.task_id.clone(),
            prompt: t.prompt.clone(),
            response_1: t.response_1.clone(),
            response_2: t.response_2.clone(),
            diversity_question: DIVERSITY_QUESTION.into(),
            helpfulness_question: HELPFULNESS_QUESTION.into(),
            diversity_options: option_labels("diverse").into(),
            helpfulness_options: option_labels("helpful").into(),
        }
    }
}

/// One side of a pairing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideResponse {
    pub prompt_id: String,
    pub prompt: String,
    pub method: String,
    pub response: String,
}

impl From<&RunRecord> for SideResponse {
    fn from(r: &RunRecord) -> Self {
        Self {
            prompt_id: r.prompt.id.clone(),
            prompt: r.prompt.text.clone(),
            method: r.method.clone(),
            response: r.transcript.final_response.clone(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub required_ratings: Option<usize>,
    /// Randomize sides per task with this seed; baseline stays on side 1 otherwise.
    pub randomize_sides: Option<u64>,
}

/// One task per prompt, in baseline order.
pub fn build_tasks(baseline: &[SideResponse], candidate: &[SideResponse], options: &BuildOptions) -> Result<Vec<SxSTask>, SxsError> {
    let base_ids: BTreeSet<&str> = baseline.iter().map(|s| s.prompt_id.as_str()).collect();
    let cand: HashMap<&str, &SideResponse> = candidate.iter().map(|s| (s.prompt_id.as_str(), s)).collect();
    let cand_ids: BTreeSet<&str> = cand.keys().copied().collect();
    if base_ids != cand_ids {
        return Err(SxsError::PromptMismatch {
            only_baseline: base_ids.difference(&cand_ids).map(|s| s.to_string()).collect(),
            only_candidate: cand_ids.difference(&base_ids).map(|s| s.to_string()).collect(),
        });
    }
    let mut rng = options.randomize_sides.map(ChaCha8Rng::seed_from_u64);
    let width = baseline.len().to_string().len().max(4);
    Ok(baseline
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let c = cand[b.prompt_id.as_str()];
            let swapped = rng.as_mut().is_some_and(|r| r.random::<bool>());
            let (r1, r2) = if swapped { (c, b) } else { (b, c) };
            SxSTask {
                task_id: format!("t{i:0width$}"),
                prompt_id: b.prompt_id.clone(),
                prompt: b.prompt.clone(),
                response_1: r1.response.clone(),
                response_2: r2.response.clone(),
                method_1: b.method.clone(),
                method_2: c.method.clone(),
                required_ratings: options.required_ratings.unwrap_or(DEFAULT_REQUIRED_RATINGS),
                swapped,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingInput {
    pub task_id: String,
    pub rater_id: String,
    pub diversity_option: i64,
    pub helpfulness_option: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SxSRating {
    pub task_id: String,
    pub rater_id: String,
    pub diversity_option: u8,
    pub helpfulness_option: u8,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub task_id: String,
    pub rater_id: String,
    /// Ratings the task had once this one was stored.
    pub ratings_for_task: usize,
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    #[default]
    TInterval,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSummary {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_degenerate: bool,
    pub pct_negative: f64,
    pub pct_neutral: f64,
    pub pct_positive: f64,
    pub n_ratings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SxSSummary {
    pub diversity: QuestionSummary,
    pub helpfulness: QuestionSummary,
    pub n_tasks_rated: usize,
}

fn summarize(scores: &[f64], ci: CiMethod) -> Result<QuestionSummary, SxsError> {
    let interval = match ci {
        CiMethod::TInterval => t_interval(scores, 0.95)?,
        CiMethod::Bootstrap => bootstrap_interval(scores, 0.95, 10_000, 0)?,
    };
    let n = scores.len() as f64;
    let pct = |f: fn(f64) -> bool| 100.0 * scores.iter().filter(|&&s| f(s)).count() as f64 / n;
    Ok(QuestionSummary {
        mean: interval.mean,
        ci_low: interval.low,
        ci_high: interval.high,
        ci_degenerate: interval.degenerate,
        pct_negative: pct(|s| s < 0.0),
        pct_neutral: pct(|s| s == 0.0),
        pct_positive: pct(|s| s > 0.0),
        n_ratings: scores.len(),
    })
}

/// Candidate-oriented scores of one rating: positive favours method 2.
pub fn oriented_scores(rating: &SxSRating, task: &SxSTask) -> Result<(f64, f64), SxsError> {
    let sign = if task.swapped { -1.0 } else { 1.0 };
    Ok((
        sign * likert_value(rating.diversity_option as i64)?,
        sign * likert_value(rating.helpfulness_option as i64)?,
    ))
}

pub fn aggregate_sxs(ratings: &[SxSRating], tasks: &[SxSTask], ci: CiMethod) -> Result<SxSSummary, SxsError> {
    if ratings.is_empty() {
        return Err(SxsError::NoRatings);
    }
    let by_id: HashMap<&str, &SxSTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut div = Vec::with_capacity(ratings.len());
    let mut help = Vec::with_capacity(ratings.len());
    for r in ratings {
        let task = by_id
            .get(r.task_id.as_str())
            .ok_or_else(|| SxsError::UnknownTask(r.task_id.clone()))?;
        let (d, h) = oriented_scores(r, task)?;
        div.push(d);
        help.push(h);
    }
    Ok(SxSSummary {
        diversity: summarize(&div, ci)?,
        helpfulness: summarize(&help, ci)?,
        n_tasks_rated: ratings.iter().map(|r| r.task_id.as_str()).collect::<HashSet<_>>().len(),
    })
}

/// Mean oriented diversity score per prompt id.
pub fn human_scores_by_prompt(ratings: &[SxSRating], tasks: &[SxSTask]) -> Result<BTreeMap<String, f64>, SxsError> {
    let by_id: HashMap<&str, &SxSTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in ratings {
        let task = by_id
            .get(r.task_id.as_str())
            .ok_or_else(|| SxsError::UnknownTask(r.task_id.clone()))?;
        let (d, _) = oriented_scores(r, task)?;
        let e = sums.entry(task.prompt_id.clone()).or_default();
        e.0 += d;
        e.1 += 1;
    }
    Ok(sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub task_id: String,
    pub prompt_id: String,
    pub rater_id: String,
    pub method_1: String,
    pub method_2: String,
    pub swapped: bool,
    pub diversity_option: u8,
    pub helpfulness_option: u8,
    /// Oriented so that positive favours method_2.
    pub diversity_score: f64,
    pub helpfulness_score: f64,
    pub timestamp: String,
}

pub fn export_csv(ratings: &[SxSRating], tasks: &[SxSTask]) -> Result<String, SxsError> {
    let by_id: HashMap<&str, &SxSTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in ratings {
        let task = by_id
            .get(r.task_id.as_str())
            .ok_or_else(|| SxsError::UnknownTask(r.task_id.clone()))?;
        let (d, h) = oriented_scores(r, task)?;
        w.serialize(ExportRow {
            task_id: r.task_id.clone(),
            prompt_id: task.prompt_id.clone(),
            rater_id: r.rater_id.clone(),
            method_1: task.method_1.clone(),
            method_2: task.method_2.clone(),
            swapped: task.swapped,
            diversity_option: r.diversity_option,
            helpfulness_option: r.helpfulness_option,
            diversity_score: d,
            helpfulness_score: h,
            timestamp: r.timestamp.clone(),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_export(text: &str) -> Result<Vec<ExportRow>, SxsError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

/// Ratings back out of an export.
pub fn ratings_from_export(rows: &[ExportRow]) -> Vec<SxSRating> {
    rows.iter()
        .map(|r| SxSRating {
            task_id: r.task_id.clone(),
            rater_id: r.rater_id.clone(),
            diversity_option: r.diversity_option,
            helpfulness_option: r.helpfulness_option,
            timestamp: r.timestamp.clone(),
        })
        .collect()
}

/// Mean diversity score per prompt straight from an export.
pub fn human_scores_from_export(rows: &[ExportRow]) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = sums.entry(r.prompt_id.clone()).or_default();
        e.0 += r.diversity_score;
        e.1 += 1;
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

pub fn write_tasks_jsonl(path: impl AsRef<Path>, tasks: &[SxSTask]) -> Result<(), SxsError> {
    let mut f = File::create(path)?;
    for t in tasks {
        serde_json::to_writer(&mut f, t)?;
        f.write_all(b"\n")?;
    }
    f.sync_all()?;
    Ok(())
}

pub fn read_tasks_jsonl(path: impl AsRef<Path>) -> Result<Vec<SxSTask>, SxsError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Default)]
struct State {
    ratings: Vec<SxSRating>,
    acks: HashMap<(String, String), Ack>,
    counts: HashMap<String, usize>,
    served: HashSet<(String, String)>,
}

/// The rating queue. Appends go through one mutex-guarded log writer.
pub struct SxsStore {
    tasks: Vec<SxSTask>,
    index: HashMap<String, usize>,
    raters: Option<HashSet<String>>,
    log_path: Option<PathBuf>,
    state: Mutex<State>,
}

impl SxsStore {
    /// `raters` of `None` accepts any rater id. With a log path, existing
    /// ratings are replayed from it.
    pub fn open(tasks: Vec<SxSTask>, log_path: Option<PathBuf>, raters: Option<HashSet<String>>) -> Result<Self, SxsError> {
        let index = tasks.iter().enumerate().map(|(i, t)| (t.task_id.clone(), i)).collect();
        let store = Self {
            tasks,
            index,
            raters,
            log_path,
            state: Mutex::new(State::default()),
        };
        if let Some(path) = &store.log_path {
            if path.exists() {
                let text = std::fs::read_to_string(path)?;
                let mut state = store.lock();
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rating: SxSRating = match serde_json::from_str(line) {
                        Ok(r) => r,
                        Err(e) if i + 1 == text.lines().count() => {
                            log::warn!("{}: ignoring torn trailing line: {e}", path.display());
                            continue;
                        }
                        Err(e) => return Err(SxsError::Malformed(format!("{}:{}: {e}", path.display(), i + 1))),
                    };
                    if !store.index.contains_key(&rating.task_id) {
                        return Err(SxsError::UnknownTask(rating.task_id));
                    }
                    Self::apply(&mut state, rating);
                }
            }
        }
        Ok(store)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn apply(state: &mut State, rating: SxSRating) -> Ack {
        let count = state.counts.entry(rating.task_id.clone()).or_default();
        *count += 1;
        let ack = Ack {
            task_id: rating.task_id.clone(),
            rater_id: rating.rater_id.clone(),
            ratings_for_task: *count,
            timestamp: rating.timestamp.clone(),
        };
        state
            .acks
            .insert((rating.task_id.clone(), rating.rater_id.clone()), ack.clone());
        state.ratings.push(rating);
        ack
    }

    pub fn tasks(&self) -> &[SxSTask] {
        &self.tasks
    }

    pub fn ratings(&self) -> Vec<SxSRating> {
        self.lock().ratings.clone()
    }

    fn check_rater(&self, rater_id: &str) -> Result<(), SxsError> {
        let known = !rater_id.trim().is_empty() && self.raters.as_ref().is_none_or(|r| r.contains(rater_id));
        if known {
            Ok(())
        } else {
            Err(SxsError::UnknownRater(rater_id.to_string()))
        }
    }

    /// Fewest-rated open task this rater has not rated, lowest id on ties.
    pub fn next_task(&self, rater_id: &str) -> Result<Option<SxSTask>, SxsError> {
        self.check_rater(rater_id)?;
        let mut state = self.lock();
        let pick = self
            .tasks
            .iter()
            .filter(|t| {
                let n = state.counts.get(&t.task_id).copied().unwrap_or(0);
                n < t.required_ratings && !state.acks.contains_key(&(t.task_id.clone(), rater_id.to_string()))
            })
            .min_by(|a, b| {
                let na = state.counts.get(&a.task_id).copied().unwrap_or(0);
                let nb = state.counts.get(&b.task_id).copied().unwrap_or(0);
                na.cmp(&nb).then_with(|| a.task_id.cmp(&b.task_id))
            })
            .cloned();
        if let Some(t) = &pick {
            state.served.insert((t.task_id.clone(), rater_id.to_string()));
        }
        Ok(pick)
    }

    pub fn submit(&self, input: &RatingInput) -> Result<Ack, SxsError> {
        let key = (input.task_id.clone(), input.rater_id.clone());
        let mut state = self.lock();
        if let Some(ack) = state.acks.get(&key) {
            return Ok(ack.clone());
        }
        self.check_rater(&input.rater_id)?;
        likert_value(input.diversity_option)?;
        likert_value(input.helpfulness_option)?;
        let task = self
            .index
            .get(&input.task_id)
            .map(|&i| &self.tasks[i])
            .ok_or_else(|| SxsError::UnknownTask(input.task_id.clone()))?;
        if !state.served.contains(&key) {
            return Err(SxsError::NotServed {
                task_id: input.task_id.clone(),
                rater_id: input.rater_id.clone(),
            });
        }
        if state.counts.get(&task.task_id).copied().unwrap_or(0) >= task.required_ratings {
            return Err(SxsError::TaskFull(task.task_id.clone()));
        }
        let rating = SxSRating {
            task_id: input.task_id.clone(),
            rater_id: input.rater_id.clone(),
            diversity_option: input.diversity_option as u8,
            helpfulness_option: input.helpfulness_option as u8,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        };
        if let Some(path) = &self.log_path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_vec(&rating)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        Ok(Self::apply(&mut state, rating))
    }

    pub fn summary(&self, ci: CiMethod) -> Result<SxSSummary, SxsError> {
        aggregate_sxs(&self.lock().ratings, &self.tasks, ci)
    }

    pub fn export_csv(&self) -> Result<String, SxsError> {
        export_csv(&self.lock().ratings, &self.tasks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn side(id: &str, method: &str, resp: &str) -> SideResponse {
        SideResponse {
            prompt_id: id.into(),
            prompt: "Name some painters.".into(),
            method: method.into(),
            response: resp.into(),
        }
    }

    fn tasks(n: usize) -> Vec<SxSTask> {
        let base: Vec<_> = (0..n).map(|i| side(&format!("p{i}"), "baseline", "b")).collect();
        let cand: Vec<_> = (0..n).map(|i| side(&format!("p{i}"), "ccsv", "c")).collect();
        build_tasks(&base, &cand, &BuildOptions::default()).unwrap()
    }

    fn input(task: &str, rater: &str, d: i64, h: i64) -> RatingInput {
        RatingInput {
            task_id: task.into(),
            rater_id: rater.into(),
            diversity_option: d,
            helpfulness_option: h,
        }
    }

    #[test]
    fn likert_scale() {
        let values: Vec<f64> = (0..7).map(|i| likert_value(i).unwrap()).collect();
        assert_eq!(values, [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5]);
        assert!(likert_value(7).is_err());
        assert!(likert_value(-1).is_err());
    }

    #[test]
    fn build_guards_mismatch() {
        let base = vec![side("a", "m1", "x"), side("b", "m1", "y")];
        let cand = vec![side("a", "m2", "x")];
        let err = build_tasks(&base, &cand, &BuildOptions::default()).unwrap_err();
        assert!(err.to_string().contains("\"b\""), "{err}");
        let same = build_tasks(&base, &base, &BuildOptions::default()).unwrap();
        assert!(same.iter().all(|t| t.response_1 == t.response_2));
        assert_eq!(same[0].task_id, "t0000");
    }

    #[test]
    fn view_hides_methods() {
        let t = &tasks(1)[0];
        let json = serde_json::to_string(&TaskView::from(t)).unwrap();
        assert!(!json.contains("baseline") && !json.contains("ccsv") && !json.contains("p0"));
        assert!(json.contains(DIVERSITY_QUESTION));
    }

    #[test]
    fn queue_order_and_completion() {
        let store = SxsStore::open(tasks(2), None, None).unwrap();
        assert_eq!(store.next_task("r1").unwrap().unwrap().task_id, "t0000");
        store.submit(&input("t0000", "r1", 6, 5)).unwrap();
        assert_eq!(store.next_task("r1").unwrap().unwrap().task_id, "t0001");
        store.submit(&input("t0001", "r1", 3, 3)).unwrap();
        assert!(store.next_task("r1").unwrap().is_none());
        for r in ["r2", "r3"] {
            for _ in 0..2 {
                let t = store.next_task(r).unwrap().unwrap();
                store.submit(&input(&t.task_id, r, 4, 4)).unwrap();
            }
        }
        assert!(store.next_task("r4").unwrap().is_none());
    }

    #[test]
    fn submit_rules() {
        let store = SxsStore::open(tasks(1), None, Some(HashSet::from(["r1".to_string()]))).unwrap();
        assert!(matches!(store.next_task("stranger"), Err(SxsError::UnknownRater(_))));
        assert!(matches!(store.submit(&input("t0000", "r1", 3, 3)), Err(SxsError::NotServed { .. })));
        store.next_task("r1").unwrap();
        assert!(matches!(store.submit(&input("t0000", "r1", 7, 3)), Err(SxsError::OptionOutOfRange(7))));
        assert!(matches!(store.submit(&input("nope", "r1", 3, 3)), Err(SxsError::UnknownTask(_))));
        let ack = store.submit(&input("t0000", "r1", 5, 4)).unwrap();
        assert_eq!(ack.ratings_for_task, 1);
        assert_eq!(store.submit(&input("t0000", "r1", 5, 4)).unwrap(), ack);
        assert_eq!(store.ratings().len(), 1);
    }

    #[test]
    fn log_replay() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("ratings.jsonl");
        {
            let store = SxsStore::open(tasks(1), Some(log.clone()), None).unwrap();
            store.next_task("r1").unwrap();
            store.submit(&input("t0000", "r1", 5, 4)).unwrap();
        }
        let store = SxsStore::open(tasks(1), Some(log), None).unwrap();
        assert_eq!(store.ratings().len(), 1);
        assert_eq!(store.next_task("r2").unwrap().unwrap().task_id, "t0000");
        assert!(store.next_task("r1").unwrap().is_none());
    }

    fn rating(task: &str, d: u8, h: u8) -> SxSRating {
        SxSRating {
            task_id: task.into(),
            rater_id: "r".into(),
            diversity_option: d,
            helpfulness_option: h,
            timestamp: "2024-01-01T00:00:00.000Z".into(),
        }
    }

    #[test]
    fn aggregation_fixtures() {
        let ts = tasks(1);
        // Scores 1.5, 1.5, 1.0 -> mean 4/3.
        let s = aggregate_sxs(&[rating("t0000", 6, 2), rating("t0000", 6, 3), rating("t0000", 5, 4)], &ts, CiMethod::TInterval).unwrap();
        assert!((s.diversity.mean - 4.0 / 3.0).abs() < 1e-12);
        // Scores -0.5, 0, 1.0 -> one third each.
        assert!((s.helpfulness.pct_negative - 100.0 / 3.0).abs() < 1e-9);
        assert!((s.helpfulness.pct_neutral - 100.0 / 3.0).abs() < 1e-9);
        assert!((s.helpfulness.pct_positive - 100.0 / 3.0).abs() < 1e-9);
        let single = aggregate_sxs(&[rating("t0000", 3, 3)], &ts, CiMethod::TInterval).unwrap();
        assert_eq!(single.diversity.mean, 0.0);
        assert!(single.diversity.ci_degenerate);
        assert!(matches!(aggregate_sxs(&[], &ts, CiMethod::TInterval), Err(SxsError::NoRatings)));
    }

    #[test]
    fn swapped_tasks_are_reoriented() {
        let mut ts = tasks(1);
        ts[0].swapped = true;
        let s = aggregate_sxs(&[rating("t0000", 0, 6)], &ts, CiMethod::TInterval).unwrap();
        assert_eq!((s.diversity.mean, s.helpfulness.mean), (1.5, -1.5));
    }

    #[test]
    fn export_round_trip() {
        let ts = tasks(2);
        let ratings = vec![rating("t0000", 6, 2), rating("t0001", 1, 3)];
        let text = export_csv(&ratings, &ts).unwrap();
        let rows = read_export(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].diversity_score, -1.0);
        let back = ratings_from_export(&rows);
        assert_eq!(back, ratings);
        assert_eq!(export_csv(&back, &ts).unwrap(), text);
        assert_eq!(
            aggregate_sxs(&back, &ts, CiMethod::TInterval).unwrap(),
            aggregate_sxs(&ratings, &ts, CiMethod::TInterval).unwrap()
        );
    }
}
