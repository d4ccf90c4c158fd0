use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use divbench_core::attrib::{Attribute, Lexicon};
use divbench_core::backend::SyntheticProfile;
use divbench_core::dataset::{self, ConstraintSpec};
use divbench_core::metrics::{summarize_by_method, MetricsRecord};
use divbench_core::report::{
    ablation_csv, ablation_curve, auto_diff, correlate_auto_human, join_auto_human, pareto_csv, pareto_points,
    read_jsonl, score_records, summary_table, write_jsonl, CorrelationMethod, DiffRow, TableFormat,
};
use divbench_core::runner::{read_records, run_with_backend, RunConfig, RunOptions, RunRecord, TRANSCRIPTS_FILE};
use divbench_core::sxs::{
    build_tasks, export_csv, human_scores_from_export, read_export, read_tasks_jsonl, write_tasks_jsonl, BuildOptions,
    CiMethod, SideResponse, SxsStore,
};
use divbench_sxs_server::{serve, AppState};

#[derive(Parser)]
#[command(name = "divbench", version, about = "Diversity-of-representation benchmark toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand a prompt suite to JSONL.
    Gen(GenArgs),
    /// Run methods over a suite as described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Stop after this many new records (for crash testing).
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Score a run's final responses.
    Score {
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        lex: LexiconArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summary table, one row per method.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
        #[command(flatten)]
        lex: LexiconArgs,
    },
    /// Constraint satisfaction against free-attribute entropy, one point per method.
    Pareto {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "ethnicity")]
        free_attr: Attribute,
        #[command(flatten)]
        lex: LexiconArgs,
    },
    /// Metric curve over CCSV iterations per variant.
    AblateReport {
        /// `label=path` pairs.
        #[arg(long = "run", num_args = 1.., required = true)]
        runs: Vec<String>,
        #[arg(long, default_value_t = 1)]
        from: usize,
        #[arg(long, default_value_t = 5)]
        to: usize,
        #[arg(long, default_value = "ethnicity")]
        attribute: Attribute,
        #[command(flatten)]
        lex: LexiconArgs,
    },
    /// Per-prompt metric differences, second run minus first.
    Diff {
        #[arg(long)]
        run1: PathBuf,
        #[arg(long)]
        run2: PathBuf,
        #[arg(long, default_value = "ethnicity")]
        attribute: Attribute,
        #[command(flatten)]
        lex: LexiconArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlate automated diffs with human side-by-side scores.
    Correlate {
        #[arg(long)]
        auto: PathBuf,
        #[arg(long)]
        human: PathBuf,
        #[arg(long)]
        spearman: bool,
    },
    /// Human side-by-side rating.
    #[command(subcommand)]
    Sxs(SxsCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Md,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    People,
    Culture,
    PeopleConstrained,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    suite: SuiteArg,
    /// `attribute=value[:surface form]`, e.g. `gender=female:female`.
    #[arg(long)]
    constraint: Option<String>,
    /// Override the bundled templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Override the bundled term lists.
    #[arg(long)]
    terms: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LexiconArgs {
    /// Lexicon TSV, or `synthetic` for the synthetic backend's name pool.
    /// Only needed when inputs are transcripts rather than scored records.
    #[arg(long)]
    lexicon: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "gender,ethnicity")]
    attributes: Vec<Attribute>,
}

#[derive(Subcommand)]
enum SxsCommand {
    /// Pair a baseline run with a candidate run, one task per prompt.
    Build {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        /// Keep only this method's records from the baseline run.
        #[arg(long)]
        baseline_method: Option<String>,
        #[arg(long)]
        candidate_method: Option<String>,
        #[arg(long, default_value_t = 3)]
        required_ratings: usize,
        /// Randomize sides with this seed.
        #[arg(long)]
        shuffle_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    Serve {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Rater UI assets served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// File with one allowed rater id per line; any id is accepted without it.
        #[arg(long)]
        raters: Option<PathBuf>,
        #[arg(long)]
        bootstrap: bool,
    },
    Export {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean scores with intervals and percentage breakdowns, as JSON.
    Summary {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        bootstrap: bool,
    },
}

fn transcripts_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(TRANSCRIPTS_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_lexicon(lex: &LexiconArgs) -> Result<Option<Lexicon>> {
    Ok(match lex.lexicon.as_deref() {
        None => None,
        Some("synthetic") => Some(SyntheticProfile::default().lexicon()),
        Some(path) => Some(Lexicon::load(path).with_context(|| format!("loading lexicon {path}"))?),
    })
}

fn looks_like_transcripts(path: &Path) -> Result<bool> {
    if path.is_dir() {
        return Ok(true);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("{}");
    let v: serde_json::Value = serde_json::from_str(first).with_context(|| format!("parsing {}", path.display()))?;
    Ok(v.get("transcript").is_some())
}

/// Scored records from either a scored file or a run (directory or transcripts file).
fn load_metrics(path: &Path, lex: &LexiconArgs, lexicon: Option<&Lexicon>) -> Result<Vec<MetricsRecord>> {
    if !looks_like_transcripts(path)? {
        return Ok(read_jsonl(path)?);
    }
    let Some(lexicon) = lexicon else {
        bail!("{} holds transcripts; pass --lexicon to score them", path.display());
    };
    let records = read_records(transcripts_path(path))?;
    Ok(score_records(&records, lexicon, &lex.attributes)?)
}

fn sides(path: &Path, method: Option<&str>) -> Result<Vec<SideResponse>> {
    let records = read_records(transcripts_path(path))?;
    let picked: Vec<SideResponse> = records
        .iter()
        .filter(|r| method.is_none_or(|m| r.method == m))
        .map(SideResponse::from)
        .collect();
    let mut seen = HashSet::new();
    if let Some(dup) = picked.iter().find(|s| !seen.insert(&s.prompt_id)) {
        bail!(
            "{} has several records for prompt {}; pick one method with --baseline-method/--candidate-method",
            path.display(),
            dup.prompt_id
        );
    }
    Ok(picked)
}

/// Records of one iterative method from a run. Without `method` the run
/// must hold exactly one iterative method.
fn iterative_records(path: &Path, method: Option<&str>) -> Result<Vec<RunRecord>> {
    let records = read_records(transcripts_path(path))?;
    let wanted = match method {
        Some(m) => m.to_string(),
        None => {
            let found: std::collections::BTreeSet<&str> = records
                .iter()
                .filter(|r| r.transcript.method_config.is_iterative())
                .map(|r| r.method.as_str())
                .collect();
            match found.len() {
                1 => found.into_iter().next().unwrap().to_string(),
                0 => bail!("{} has no iterative method records", path.display()),
                _ => bail!("{} holds several iterative methods {found:?}; use label=path@method", path.display()),
            }
        }
    };
    Ok(records.into_iter().filter(|r| r.method == wanted).collect())
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen(args: &GenArgs) -> Result<()> {
    let people = !matches!(args.suite, SuiteArg::Culture);
    let templates = match &args.templates {
        Some(p) => dataset::load_templates(
            p,
            if people { dataset::Suite::People } else { dataset::Suite::Culture },
        )?,
        None if people => dataset::people_templates(),
        None => dataset::culture_templates(),
    };
    let terms = match &args.terms {
        Some(p) => dataset::load_term_lists(p)?,
        None if people => dataset::people_terms(),
        None => dataset::culture_terms(),
    };
    let prompts = match args.suite {
        SuiteArg::PeopleConstrained => {
            let raw = args.constraint.as_deref().unwrap_or("gender=female:female");
            let spec = ConstraintSpec::parse(raw).with_context(|| format!("bad constraint {raw:?}"))?;
            dataset::make_constrained_suite(&templates, &terms, Some(&spec))?
        }
        _ => {
            if args.constraint.is_some() {
                bail!("--constraint only applies to --suite people-constrained");
            }
            dataset::expand_templates(&templates, &terms)?
        }
    };
    let mut buf = Vec::new();
    dataset::write_prompts_jsonl(&mut buf, &prompts)?;
    fs::write(&args.out, buf).with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} prompts to {}", prompts.len(), args.out.display());
    Ok(())
}

fn sxs(cmd: SxsCommand) -> Result<()> {
    match cmd {
        SxsCommand::Build {
            baseline,
            candidate,
            baseline_method,
            candidate_method,
            required_ratings,
            shuffle_seed,
            out,
        } => {
            let options = BuildOptions {
                required_ratings: Some(required_ratings),
                randomize_sides: shuffle_seed,
            };
            let tasks = build_tasks(
                &sides(&baseline, baseline_method.as_deref())?,
                &sides(&candidate, candidate_method.as_deref())?,
                &options,
            )?;
            write_tasks_jsonl(&out, &tasks)?;
            println!("wrote {} tasks to {}", tasks.len(), out.display());
        }
        SxsCommand::Serve {
            tasks,
            ratings,
            port,
            host,
            static_dir,
            raters,
            bootstrap,
        } => {
            let allow = match raters {
                Some(p) => Some(
                    fs::read_to_string(&p)?
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(String::from)
                        .collect::<HashSet<_>>(),
                ),
                None => None,
            };
            let store = SxsStore::open(read_tasks_jsonl(&tasks)?, Some(ratings), allow)?;
            let state = AppState {
                store: Arc::new(store),
                ci: if bootstrap { CiMethod::Bootstrap } else { CiMethod::TInterval },
            };
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad host/port")?;
            tokio::runtime::Runtime::new()?.block_on(serve(addr, state, static_dir))?;
        }
        SxsCommand::Export { tasks, ratings, out } => {
            let store = SxsStore::open(read_tasks_jsonl(&tasks)?, Some(ratings), None)?;
            write_out(&out, &export_csv(&store.ratings(), store.tasks())?)?;
        }
        SxsCommand::Summary {
            tasks,
            ratings,
            bootstrap,
        } => {
            let store = SxsStore::open(read_tasks_jsonl(&tasks)?, Some(ratings), None)?;
            let ci = if bootstrap { CiMethod::Bootstrap } else { CiMethod::TInterval };
            println!("{}", serde_json::to_string_pretty(&store.summary(ci)?)?);
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Gen(args) => gen(&args)?,
        Command::Run { config, stop_after } => {
            let cfg = RunConfig::load(&config)?;
            let backend = cfg.build_backend()?;
            let outcome = run_with_backend(&cfg, backend, &RunOptions { stop_after })?;
            let m = &outcome.manifest;
            writeln!(
                stdout,
                "{}: {} written, {} skipped, {} completed, {} failed of {}",
                outcome.run_dir.display(),
                outcome.written,
                outcome.skipped,
                m.completed,
                m.failed,
                m.expected_records
            )?;
        }
        Command::Score { run, lex, out } => {
            let lexicon = load_lexicon(&lex)?.context("--lexicon is required")?;
            let records: Vec<RunRecord> = read_records(transcripts_path(&run))?;
            let scored = score_records(&records, &lexicon, &lex.attributes)?;
            write_jsonl(&out, &scored)?;
            writeln!(stdout, "scored {} responses into {}", scored.len(), out.display())?;
        }
        Command::Report { runs, format, lex } => {
            let lexicon = load_lexicon(&lex)?;
            let mut all = Vec::new();
            for r in &runs {
                all.extend(load_metrics(r, &lex, lexicon.as_ref())?);
            }
            let format = match format {
                Format::Md => TableFormat::Markdown,
                Format::Csv => TableFormat::Csv,
            };
            write!(stdout, "{}", summary_table(&summarize_by_method(&all)?, format)?)?;
        }
        Command::Pareto { runs, free_attr, lex } => {
            let lexicon = load_lexicon(&lex)?;
            let mut all = Vec::new();
            for r in &runs {
                all.extend(load_metrics(r, &lex, lexicon.as_ref())?);
            }
            write!(stdout, "{}", pareto_csv(&pareto_points(&all, free_attr)?)?)?;
        }
        Command::AblateReport {
            runs,
            from,
            to,
            attribute,
            lex,
        } => {
            let lexicon = load_lexicon(&lex)?.context("--lexicon is required")?;
            let mut labelled = Vec::new();
            for spec in &runs {
                let (label, rest) = spec.split_once('=').context("expected --run label=path[@method]")?;
                let (path, method) = match rest.rsplit_once('@') {
                    Some((p, m)) => (p, Some(m)),
                    None => (rest, None),
                };
                labelled.push((label.to_string(), iterative_records(Path::new(path), method)?));
            }
            let curve = ablation_curve(&labelled, from..=to, &lexicon, attribute)?;
            for w in &curve.warnings {
                log::warn!("{w}");
            }
            write!(stdout, "{}", ablation_csv(&curve.rows)?)?;
        }
        Command::Diff {
            run1,
            run2,
            attribute,
            lex,
            out,
        } => {
            let lexicon = load_lexicon(&lex)?;
            let a = load_metrics(&run1, &lex, lexicon.as_ref())?;
            let b = load_metrics(&run2, &lex, lexicon.as_ref())?;
            let diffs = auto_diff(&a, &b, attribute);
            write_jsonl(&out, &diffs)?;
            writeln!(stdout, "{} paired prompts written to {}", diffs.len(), out.display())?;
        }
        Command::Correlate { auto, human, spearman } => {
            let diffs: Vec<DiffRow> = read_jsonl(&auto)?;
            let rows = read_export(&fs::read_to_string(&human).with_context(|| format!("reading {}", human.display()))?)?;
            let pairs = join_auto_human(&diffs, &human_scores_from_export(&rows));
            let method = if spearman { CorrelationMethod::Spearman } else { CorrelationMethod::Pearson };
            for r in correlate_auto_human(&pairs, method)? {
                writeln!(stdout, "{}", serde_json::to_string(&r)?)?;
            }
        }
        Command::Sxs(cmd) => sxs(cmd)?,
    }
    Ok(())
}
