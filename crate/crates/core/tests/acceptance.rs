//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to see them.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use divbench_core::attrib::{Attribute, AttributeDistribution, Lexicon};
use divbench_core::backend::{Backend, Limited, ReplayBackend, Script, SyntheticBackend, SyntheticProfile};
use divbench_core::dataset::{self, Prompt, Suite};
use divbench_core::dialogue::StepKind;
use divbench_core::methods::{parse_votes, run_method, CcsvVariant, MethodConfig, PromptPack, Shots, ZERO_SHOT};
use divbench_core::metrics::{entropy, max_gap, score_text};
use divbench_core::report::{correlate_auto_human, CorrelationMethod, PairedScore};
use divbench_core::runner::{read_records, run_with_backend, RunConfig, RunOptions, TRANSCRIPTS_FILE};
use divbench_core::stats::pearson;
use divbench_core::sxs::{aggregate_sxs, likert_value, CiMethod, SxSRating, SxSTask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// Brute-force references, written without the library's helpers.
fn ref_entropy(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * (p.ln() / std::f64::consts::LN_2);
        }
    }
    h
}

fn ref_gap(probs: &[f64], support: usize) -> f64 {
    let mut full = probs.to_vec();
    full.resize(support, 0.0);
    let mut best = 0.0f64;
    for a in &full {
        for b in &full {
            best = best.max(a - b);
        }
    }
    best
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20240501);
    let labels: Vec<String> = (0..6).map(|i| format!("v{i}")).collect();
    let n = 2000;
    for case in 0..n {
        let support = rng.random_range(1..=6usize);
        let used = rng.random_range(1..=support);
        let counts: Vec<u32> = (0..used).map(|_| rng.random_range(0..10u32)).collect();
        let total: u32 = counts.iter().sum();
        if total == 0 {
            continue;
        }
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let dist = AttributeDistribution {
            attribute: Attribute::Ethnicity,
            probs: labels.iter().zip(&probs).map(|(l, &p)| (l.clone(), p)).collect(),
            known_count: total as usize,
            total_mentions: total as usize,
        };
        let h = entropy(&dist);
        let g = max_gap(&dist, &labels[..support]);
        check(close(h, ref_entropy(&probs), 1e-9), format!("case {case}: entropy {h} vs {}", ref_entropy(&probs)))?;
        check(close(g, ref_gap(&probs, support), 1e-9), format!("case {case}: gap {g} vs {}", ref_gap(&probs, support)))?;
        check(h >= 0.0 && h <= (support as f64).log2() + 1e-12, format!("case {case}: entropy {h} out of bounds"))?;
        check((0.0..=1.0).contains(&g), format!("case {case}: gap {g} out of bounds"))?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!("{n} distributions within 1e-9 in {elapsed:.2?}"))
}

fn default_rule() -> Outcome {
    let lexicon = Lexicon::parse("Ada Lovelace\t\tfemale\twhite\nAlan Turing\t\tmale\twhite\n").map_err(|e| e.to_string())?;
    for text in ["", "Nobody comes to mind.", "I could not name anyone, sorry."] {
        let r = score_text("p", "m", text, None, &lexicon, &Attribute::ALL).map_err(|e| e.to_string())?;
        check(r.is_helpful == 0, format!("{text:?} is_helpful {}", r.is_helpful))?;
        for a in Attribute::ALL {
            check(
                r.entropy(a) == Some(0.0) && r.max_gap(a) == Some(1.0),
                format!("{text:?} {a}: entropy {:?} gap {:?}", r.entropy(a), r.max_gap(a)),
            )?;
        }
    }
    Ok("zero mentions give entropy 0, max_gap 1, is_helpful 0".into())
}

const PEOPLE_DIGEST: &str = "b63fc846d76e975f25da5ccb0ba52fca854e79e9f1e21c9101ef1bac59810c4d";
const CULTURE_DIGEST: &str = "3de83241662ee1cc4ec0d30c95f7d70117a3a6d709aefbe0736a3328f1938917";

fn suite_digest(prompts: &[Prompt]) -> Result<String, String> {
    let mut buf = Vec::new();
    dataset::write_prompts_jsonl(&mut buf, prompts).map_err(|e| e.to_string())?;
    Ok(hex::encode(Sha256::digest(&buf)))
}

fn dataset_goldens() -> Outcome {
    let start = Instant::now();
    let terms = dataset::people_terms();
    let n = terms.nouns.len();
    let people = dataset::expand_templates(&dataset::people_templates(), &terms).map_err(|e| e.to_string())?;
    check(people.len() == 5 * n + 35 * n, format!("people {} != 40*{n}", people.len()))?;
    check(n == 105 && people.len() == 4200, format!("people nouns {n}, prompts {}", people.len()))?;
    let cterms = dataset::culture_terms();
    let culture = dataset::expand_templates(&dataset::culture_templates(), &cterms).map_err(|e| e.to_string())?;
    check(culture.len() == 5 * cterms.nouns.len() && culture.len() == 125, format!("culture {}", culture.len()))?;
    check(suite_digest(&people)? == PEOPLE_DIGEST, "people digest changed")?;
    check(suite_digest(&culture)? == CULTURE_DIGEST, "culture digest changed")?;
    let again = dataset::expand_templates(&dataset::people_templates(), &dataset::people_terms()).map_err(|e| e.to_string())?;
    check(suite_digest(&again)? == PEOPLE_DIGEST, "regeneration differs")?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!("4200 / 125 prompts, digests stable, {elapsed:.2?}"))
}

fn prompt(id: &str, text: &str) -> Prompt {
    Prompt {
        id: id.into(),
        text: text.into(),
        suite: Suite::People,
        template_id: "p03".into(),
        noun: "ceos".into(),
        adjective: None,
        constraint: None,
    }
}

fn fig5_golden() -> Outcome {
    let script: Script = serde_json::from_str(&std::fs::read_to_string(fixture("fig5_script.json")).unwrap()).unwrap();
    let critiques = script.values().find(|v| v[0].starts_with("There are thousands")).ok_or("no critiques")?.clone();
    let drafts = script.values().find(|v| v[0].starts_with("Mark Zuckerberg, Bill Gates, and Indra")).ok_or("no drafts")?.clone();
    let expected_revision = std::fs::read_to_string(fixture("fig5_revision_prompt.txt")).unwrap();

    let backend = ReplayBackend::new(script);
    let pack = PromptPack::builtin(ZERO_SHOT).ok_or("no zero-shot pack")?;
    let config = MethodConfig::ccsv(Shots::Zero, CcsvVariant::CollectivePlusVoting)
        .with_fanout(5)
        .with_iterations(1);
    let t = run_method(&config, &prompt("fig5", "Name some ceos that inspire you."), &pack, &backend);
    check(!t.failed(), format!("transcript failed: {:?}", t.failure))?;
    check(backend.misses().is_empty(), format!("{} replay misses", backend.misses().len()))?;
    check(
        t.step_kinds() == [StepKind::Initial, StepKind::Critique, StepKind::Revise, StepKind::Vote],
        format!("steps {:?}", t.step_kinds()),
    )?;
    check(t.steps[1].texts() == critiques, "critiques differ")?;
    check(t.steps[2].assembled_prompt == expected_revision, "revision prompt differs")?;
    check(t.steps[2].texts() == drafts, "drafts differ")?;
    check(t.steps[3].selected == Some(3), format!("vote selected {:?}", t.steps[3].selected))?;
    check(t.final_response == drafts[3], "final response differs")?;
    Ok("critiques, revision prompt, 5 drafts and final response reproduced".into())
}

fn ethnicity_entropy(lexicon: &Lexicon, text: &str) -> f64 {
    score_text("p", "m", text, None, lexicon, &[Attribute::Ethnicity])
        .unwrap()
        .entropy(Attribute::Ethnicity)
        .unwrap()
}

fn selection_dominance() -> Outcome {
    let start = Instant::now();
    let prompts: Vec<Prompt> = dataset::expand_templates(&dataset::people_templates(), &dataset::people_terms())
        .unwrap()
        .into_iter()
        .step_by(21)
        .take(200)
        .collect();
    check(prompts.len() == 200, "need 200 prompts")?;
    let pack = PromptPack::builtin(ZERO_SHOT).unwrap();
    let config = |v| MethodConfig::ccsv(Shots::Zero, v).with_fanout(5).with_iterations(1);

    let exact = SyntheticProfile {
        voter_accuracy: 1.0,
        ..SyntheticProfile::default()
    };
    let lexicon = exact.lexicon();
    for (i, p) in prompts.iter().enumerate() {
        let backend = SyntheticBackend::new(exact.clone(), 1000 + i as u64).map_err(|e| e.to_string())?;
        let cpv = run_method(&config(CcsvVariant::CollectivePlusVoting), p, &pack, &backend);
        let greedy = run_method(&config(CcsvVariant::GreedyCritique), p, &pack, &backend);
        let revise = cpv.steps.iter().find(|s| s.step_kind == StepKind::Revise).ok_or("no revise step")?;
        let best = revise.texts().iter().map(|d| ethnicity_entropy(&lexicon, d)).fold(f64::MIN, f64::max);
        let final_h = ethnicity_entropy(&lexicon, &cpv.final_response);
        let greedy_h = ethnicity_entropy(&lexicon, &greedy.final_response);
        check(close(final_h, best, 1e-12), format!("{}: final {final_h} != max draft {best}", p.id))?;
        check(final_h >= greedy_h - 1e-12, format!("{}: voting {final_h} < greedy {greedy_h}", p.id))?;
    }

    let noisy = SyntheticProfile::default();
    check(noisy.voter_accuracy == 0.9, "default voter accuracy is not 0.9")?;
    let mut means = BTreeMap::new();
    for v in CcsvVariant::ALL {
        let mut total = 0.0;
        for (i, p) in prompts.iter().enumerate() {
            let backend = SyntheticBackend::new(noisy.clone(), 5000 + i as u64).map_err(|e| e.to_string())?;
            total += ethnicity_entropy(&lexicon, &run_method(&config(v), p, &pack, &backend).final_response);
        }
        means.insert(v, total / prompts.len() as f64);
    }
    let (g, co, cpv) = (
        means[&CcsvVariant::GreedyCritique],
        means[&CcsvVariant::CollectiveOnly],
        means[&CcsvVariant::CollectivePlusVoting],
    );
    check(cpv >= co && co >= g, format!("means cpv {cpv:.4} co {co:.4} greedy {g:.4}"))?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!(
        "accuracy 1.0 exact over 200 prompts; accuracy 0.9 means {cpv:.3} >= {co:.3} >= {g:.3}; {elapsed:.2?}"
    ))
}

/// (votes, drafts, expected 0-based winner, expected fallback)
fn vote_fixtures() -> Vec<(Vec<&'static str>, usize, usize, bool)> {
    vec![
        (vec!["Response 1", "Response 1", "Response 2", "Response 3", "Response 1"], 5, 0, false),
        (vec!["Response 3", "Response 3", "Response 1", "Response 2", "Response 3"], 5, 2, false),
        (vec!["response 2", "Response2", "2", " 2. It is the most diverse", "Response 5"], 5, 1, false),
        (
            vec!["I prefer Response 4 because it lists more people.", "Response 4 is best", "4", "Response 1", "Response 2"],
            5,
            3,
            false,
        ),
        (vec!["Response 2", "Response 4", "Response 2", "Response 4", "Response 5"], 5, 1, false),
        (vec!["Response 5", "Response 4", "Response 3", "Response 2", "Response 1"], 5, 0, false),
        (vec!["I cannot decide.", "Both are good.", "None", "", "The second one"], 5, 0, true),
        (vec!["Response 9", "Response 0", "Response 6", "7", "Response 3"], 5, 2, false),
        (
            vec!["Response 2 is better than Response 5", "Response 5 beats Response 2", "Response 5", "Response 9 or Response 5", "1"],
            5,
            4,
            false,
        ),
        (vec!["3", "3)", "3: it names more cultures", "4", "Response 4"], 5, 2, false),
        (vec![], 5, 0, true),
        (vec!["Response 6", "Response 10"], 5, 0, true),
        (vec!["RESPONSE 2", "Response 3"], 5, 2, false),
        (vec!["Vote: Response 5", "The answer is Response 5.", "Response 1", "Response 1", "response 5"], 5, 4, false),
        (vec!["Response 12", "Response 12", "Response 3"], 5, 2, false),
        (vec!["2 - Response 4", "4", "Response 2 and Response 4"], 5, 1, false),
        (vec!["Response 2", "Response 1"], 2, 0, false),
        (vec!["Response 2"], 1, 0, true),
        (vec!["Response   3", "Response\t3", "response\n3", "Response 4", "Response 4"], 5, 2, false),
        (vec!["Response 5", "Response 3", "nothing", "Response 5", "Response 3"], 5, 2, false),
    ]
}

fn vote_parsing() -> Outcome {
    let fixtures = vote_fixtures();
    for (i, (votes, n, winner, fallback)) in fixtures.iter().enumerate() {
        let t = parse_votes(votes, *n);
        check(
            t.winner == *winner && t.fallback == *fallback,
            format!("fixture {}: got winner {} fallback {}, want {winner} {fallback}", i + 1, t.winner, t.fallback),
        )?;
    }
    Ok(format!("{} fixtures", fixtures.len()))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(name: &str) -> Vec<T> {
    std::fs::read_to_string(fixture(name))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn likert_aggregation() -> Outcome {
    let scale: Vec<f64> = (0..7).map(|i| likert_value(i).unwrap()).collect();
    check(scale == [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5], format!("scale {scale:?}"))?;
    check(likert_value(7).is_err() && likert_value(-1).is_err(), "out-of-range option accepted")?;

    let tasks: Vec<SxSTask> = read_jsonl("sxs_tasks.jsonl");
    let ratings: Vec<SxSRating> = read_jsonl("sxs_ratings.jsonl");
    let s = aggregate_sxs(&ratings, &tasks, CiMethod::TInterval).map_err(|e| e.to_string())?;
    // scipy.stats.t.interval(0.95, 5, loc=mean, scale=sem) on the oriented scores.
    let r4 = |x: f64| (x * 1e4).round() / 1e4;
    let got = [
        r4(s.diversity.mean),
        r4(s.diversity.ci_low),
        r4(s.diversity.ci_high),
        r4(s.diversity.pct_negative),
        r4(s.diversity.pct_neutral),
        r4(s.diversity.pct_positive),
        r4(s.helpfulness.mean),
        r4(s.helpfulness.ci_low),
        r4(s.helpfulness.ci_high),
        r4(s.helpfulness.pct_negative),
        r4(s.helpfulness.pct_neutral),
        r4(s.helpfulness.pct_positive),
    ];
    let want = [0.9167, 0.3032, 1.5301, 0.0, 16.6667, 83.3333, -0.3333, -0.7618, 0.0951, 50.0, 50.0, 0.0];
    check(got == want, format!("got {got:?}"))?;

    let mirrored: Vec<SxSRating> = ratings
        .iter()
        .map(|r| SxSRating {
            diversity_option: 6 - r.diversity_option,
            helpfulness_option: 6 - r.helpfulness_option,
            ..r.clone()
        })
        .collect();
    let m = aggregate_sxs(&mirrored, &tasks, CiMethod::TInterval).map_err(|e| e.to_string())?;
    check(
        close(m.diversity.mean, -s.diversity.mean, 1e-12) && close(m.helpfulness.mean, -s.helpfulness.mean, 1e-12),
        "mirroring did not negate means",
    )?;
    Ok("scale, means, t-intervals, breakdowns to 4 decimals; mirror negates".into())
}

fn naive_pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (sx, sy): (f64, f64) = (xs.iter().sum(), ys.iter().sum());
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn pearson_criterion() -> Outcome {
    let xs: Vec<f64> = (0..10).map(f64::from).collect();
    let line: Vec<f64> = xs.iter().map(|x| 3.0 * x - 2.0).collect();
    let anti: Vec<f64> = xs.iter().map(|x| -0.5 * x + 7.0).collect();
    check(pearson(&xs, &line).unwrap().0 == 1.0, "linear r != 1")?;
    check(pearson(&xs, &anti).unwrap().0 == -1.0, "anti-linear r != -1")?;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..500 {
        let n = rng.random_range(3..40);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| 0.3 * x + rng.random_range(-2.0..2.0)).collect();
        let (r, _) = pearson(&a, &b).map_err(|e| e.to_string())?;
        check(close(r, naive_pearson(&a, &b), 1e-9), format!("case {case}: {r} vs {}", naive_pearson(&a, &b)))?;
    }

    let pairs: Vec<PairedScore> = (0..10)
        .map(|i| PairedScore {
            prompt_id: format!("p{i}"),
            entropy_diff: 0.1 * i as f64,
            max_gap_diff: -0.05 * i as f64,
            human_sxs: -1.5 + i as f64 / 3.0,
        })
        .collect();
    let reports = correlate_auto_human(&pairs, CorrelationMethod::Pearson).map_err(|e| e.to_string())?;
    for r in &reports {
        check(r.p < 0.05 && r.n == 10, format!("{}: p {}", r.metric, r.p))?;
    }
    Ok("±1 on lines, 500 random fixtures within 1e-9, aligned n=10 gives p < 0.05".into())
}

fn runner_contracts() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let prompts: Vec<Prompt> = dataset::expand_templates(&dataset::culture_templates(), &dataset::culture_terms())
        .unwrap()
        .into_iter()
        .take(12)
        .collect();
    let mut buf = Vec::new();
    dataset::write_prompts_jsonl(&mut buf, &prompts).unwrap();
    std::fs::write(d.join("suite.jsonl"), buf).unwrap();
    let methods = ["baseline", "if_0shot", "ccsv_0shot:collective_plus_voting"];

    // Record a synthetic run once, then replay it.
    let synth_cfg = format!(
        "[suite]\npath = 'suite.jsonl'\n[backend]\nkind = 'synthetic'\n[methods]\nrun = {methods:?}\n[output]\ndir = 'synth'\nrun_id = 's'\n"
    );
    std::fs::write(d.join("synth.toml"), synth_cfg).unwrap();
    let cfg = RunConfig::load(d.join("synth.toml")).map_err(|e| e.to_string())?;
    let outcome = run_with_backend(&cfg, cfg.build_backend().unwrap(), &RunOptions::default()).map_err(|e| e.to_string())?;
    let mut script = Script::new();
    for r in read_records(outcome.run_dir.join(TRANSCRIPTS_FILE)).unwrap() {
        script.extend(r.transcript.to_script());
    }
    std::fs::write(d.join("script.json"), serde_json::to_string(&script).unwrap()).unwrap();

    let cap = 2;
    let replay_cfg = format!(
        "[suite]\npath = 'suite.jsonl'\n[backend]\nkind = 'replay'\nscript = 'script.json'\nmax_in_flight = {cap}\n\
         [methods]\nrun = {methods:?}\n[output]\ndir = 'out'\nrun_id = 'r'\nresume = true\nworkers = 6\n"
    );
    std::fs::write(d.join("replay.toml"), replay_cfg).unwrap();
    let cfg = RunConfig::load(d.join("replay.toml")).map_err(|e| e.to_string())?;
    let replay = Arc::new(ReplayBackend::new(script).with_latency(Duration::from_millis(2)));
    let limited: Arc<dyn Backend> = Arc::new(Limited::new(replay.clone(), cap));

    let first = run_with_backend(&cfg, limited.clone(), &RunOptions { stop_after: Some(7) }).map_err(|e| e.to_string())?;
    check(first.manifest.interrupted && first.written == 7, format!("crash run wrote {}", first.written))?;
    // A torn half-record, as a crash mid-write would leave.
    let path = first.run_dir.join(TRANSCRIPTS_FILE);
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"run_id\":\"r\",\"config_ha");
    std::fs::write(&path, text).unwrap();

    let second = run_with_backend(&cfg, limited, &RunOptions::default()).map_err(|e| e.to_string())?;
    let records = read_records(&path).map_err(|e| e.to_string())?;
    let expected = prompts.len() * methods.len();
    let keys: HashSet<_> = records.iter().map(|r| r.key()).collect();
    check(records.len() == expected, format!("{} records, want {expected}", records.len()))?;
    check(keys.len() == expected, "duplicate records")?;
    check(second.skipped == 7 && second.written == expected - 7, format!("skipped {} written {}", second.skipped, second.written))?;
    check(records.iter().all(|r| !r.transcript.failed()), "replay misses produced failures")?;
    let peak = replay.call_log().iter().map(|e| e.concurrent).max().unwrap_or(0);
    check(peak <= cap && replay.max_in_flight() <= cap, format!("peak in flight {peak} > {cap}"))?;
    check(peak == cap, format!("cap never reached (peak {peak}); the check is vacuous"))?;
    Ok(format!("{expected} records after crash + resume, no duplicates, peak in flight {peak} <= {cap}"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric oracle equivalence", metric_oracle),
        ("default rule", default_rule),
        ("dataset goldens", dataset_goldens),
        ("worked CEO example golden transcript", fig5_golden),
        ("selection dominance on synthetic backend", selection_dominance),
        ("vote parsing fixtures", vote_parsing),
        ("Likert and aggregation", likert_aggregation),
        ("Pearson", pearson_criterion),
        ("runner contracts", runner_contracts),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        match std::panic::catch_unwind(f) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                println!("FAIL  {name}: {why}");
                failed.push(name);
            }
            Err(_) => {
                println!("FAIL  {name}: panicked");
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
