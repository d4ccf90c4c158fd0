//! Summary tables, Pareto points, ablation curves and the automated-vs-human
//! correlation.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attrib::{Attribute, Lexicon};
use crate::metrics::{score_response, score_text, MetricsError, MetricsRecord, SummaryRow};
use crate::runner::RunRecord;
use crate::stats::{pearson, spearman, StatsError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no rows to report")]
    Empty,
    #[error("record {prompt_id} ({method}) has no constraint; pareto points need a constrained suite")]
    Unconstrained { prompt_id: String, method: String },
    #[error("joined only {0} pairs; need at least 3")]
    TooFewPairs(usize),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, ReportError> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Scores every record's final response. Failed transcripts keep their
/// empty response, so they land as unhelpful, and are flagged.
pub fn score_records(records: &[RunRecord], lexicon: &Lexicon, attributes: &[Attribute]) -> Result<Vec<MetricsRecord>, ReportError> {
    records
        .iter()
        .map(|r| {
            let mut m = score_response(&r.prompt, &r.method, &r.transcript.final_response, lexicon, attributes)?;
            m.failed = r.transcript.failed();
            Ok(m)
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<(), ReportError> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(|source| ReportError::Json {
            path: path.display().to_string(),
            line: 0,
            source,
        })?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, ReportError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| ReportError::Json {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

struct Column {
    header: &'static str,
    higher_is_better: bool,
    value: fn(&SummaryRow) -> f64,
}

fn attr(map: &BTreeMap<Attribute, f64>, a: Attribute) -> f64 {
    map.get(&a).copied().unwrap_or(f64::NAN)
}

const COLUMNS: [Column; 5] = [
    Column {
        header: "Entropy (ethnicity)",
        higher_is_better: true,
        value: |r| attr(&r.entropy, Attribute::Ethnicity),
    },
    Column {
        header: "Entropy (gender)",
        higher_is_better: true,
        value: |r| attr(&r.entropy, Attribute::Gender),
    },
    Column {
        header: "Gap (ethnicity)",
        higher_is_better: false,
        value: |r| attr(&r.max_gap, Attribute::Ethnicity),
    },
    Column {
        header: "Gap (gender)",
        higher_is_better: false,
        value: |r| attr(&r.max_gap, Attribute::Gender),
    },
    Column {
        header: "Is helpful",
        higher_is_better: true,
        value: |r| r.is_helpful,
    },
];

/// Cells to bold: those with fewer than two strictly better rows.
fn best_two(values: &[f64], higher_is_better: bool) -> Vec<bool> {
    values
        .iter()
        .map(|&v| {
            if v.is_nan() {
                return false;
            }
            let better = values
                .iter()
                .filter(|&&o| if higher_is_better { o > v } else { o < v })
                .count();
            better < 2
        })
        .collect()
}

pub fn summary_table(rows: &[SummaryRow], format: TableFormat) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["Method"];
            header.extend(COLUMNS.iter().map(|c| c.header));
            header.push("N");
            w.write_record(&header)?;
            for r in rows {
                let mut rec = vec![r.method.clone()];
                rec.extend(COLUMNS.iter().map(|c| (c.value)(r).to_string()));
                rec.push(r.n_prompts.to_string());
                w.write_record(&rec)?;
            }
            finish(w)
        }
        TableFormat::Markdown => {
            let bold: Vec<Vec<bool>> = COLUMNS
                .iter()
                .map(|c| best_two(&rows.iter().map(c.value).collect::<Vec<_>>(), c.higher_is_better))
                .collect();
            let mut out = String::from("| Method |");
            for c in &COLUMNS {
                out.push_str(&format!(" {} |", c.header));
            }
            out.push_str("\n|---|");
            out.push_str(&"---:|".repeat(COLUMNS.len()));
            out.push('\n');
            for (i, r) in rows.iter().enumerate() {
                out.push_str(&format!("| {} |", r.method));
                for (j, c) in COLUMNS.iter().enumerate() {
                    let cell = format!("{:.2}", (c.value)(r));
                    if bold[j][i] {
                        out.push_str(&format!(" **{cell}** |"));
                    } else {
                        out.push_str(&format!(" {cell} |"));
                    }
                }
                out.push('\n');
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub method: String,
    pub x: f64,
    pub y: f64,
}

/// One point per method (first-seen order): mean constraint satisfaction
/// against mean entropy of the free attribute.
pub fn pareto_points(records: &[MetricsRecord], free_attr: Attribute) -> Result<Vec<ParetoPoint>, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut order = Vec::new();
    let mut sums: HashMap<&str, (f64, f64, usize)> = HashMap::new();
    for r in records {
        let x = r.constraint_satisfaction.ok_or_else(|| ReportError::Unconstrained {
            prompt_id: r.prompt_id.clone(),
            method: r.method.clone(),
        })?;
        let y = r.entropy(free_attr).unwrap_or(0.0);
        let e = sums.entry(&r.method).or_insert_with(|| {
            order.push(r.method.as_str());
            (0.0, 0.0, 0)
        });
        e.0 += x;
        e.1 += y;
        e.2 += 1;
    }
    Ok(order
        .into_iter()
        .map(|m| {
            let (x, y, n) = sums[m];
            ParetoPoint {
                method: m.to_string(),
                x: x / n as f64,
                y: y / n as f64,
            }
        })
        .collect())
}

pub fn pareto_csv(points: &[ParetoPoint]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p)?;
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub iteration: usize,
    pub mean_entropy: f64,
    pub mean_gap: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationCurve {
    pub rows: Vec<AblationRow>,
    pub warnings: Vec<String>,
}

/// Long-format iteration curve per variant. The response after iteration
/// `i` is read back from each transcript, so one run at the largest
/// iteration count covers every smaller one.
pub fn ablation_curve(
    runs: &[(String, Vec<RunRecord>)],
    iterations: std::ops::RangeInclusive<usize>,
    lexicon: &Lexicon,
    attribute: Attribute,
) -> Result<AblationCurve, ReportError> {
    let mut curve = AblationCurve::default();
    for (variant, records) in runs {
        for i in iterations.clone() {
            let mut scored = Vec::with_capacity(records.len());
            let mut missing = 0;
            for r in records {
                match r.transcript.response_after(i) {
                    Some(text) => {
                        scored.push(score_text(&r.prompt.id, variant, text, None, lexicon, &[attribute])?)
                    }
                    _ => missing += 1,
                }
            }
            if missing > 0 || scored.is_empty() {
                curve
                    .warnings
                    .push(format!("{variant}: iteration {i} missing for {missing} of {} prompts", records.len()));
                continue;
            }
            let n = scored.len();
            curve.rows.push(AblationRow {
                variant: variant.clone(),
                iteration: i,
                mean_entropy: scored.iter().filter_map(|s| s.entropy(attribute)).sum::<f64>() / n as f64,
                mean_gap: scored.iter().filter_map(|s| s.max_gap(attribute)).sum::<f64>() / n as f64,
                n,
            });
        }
    }
    Ok(curve)
}

pub fn ablation_csv(rows: &[AblationRow]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub prompt_id: String,
    pub method_1: String,
    pub method_2: String,
    /// method_2 minus method_1.
    pub entropy_diff: f64,
    pub max_gap_diff: f64,
}

/// Per-prompt metric differences on the prompts both runs scored.
pub fn auto_diff(run_1: &[MetricsRecord], run_2: &[MetricsRecord], attribute: Attribute) -> Vec<DiffRow> {
    let by_id: HashMap<&str, &MetricsRecord> = run_1.iter().map(|r| (r.prompt_id.as_str(), r)).collect();
    run_2
        .iter()
        .filter_map(|b| {
            let a = by_id.get(b.prompt_id.as_str())?;
            Some(DiffRow {
                prompt_id: b.prompt_id.clone(),
                method_1: a.method.clone(),
                method_2: b.method.clone(),
                entropy_diff: b.entropy(attribute)? - a.entropy(attribute)?,
                max_gap_diff: b.max_gap(attribute)? - a.max_gap(attribute)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric: String,
    pub method: CorrelationMethod,
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedScore {
    pub prompt_id: String,
    pub entropy_diff: f64,
    pub max_gap_diff: f64,
    pub human_sxs: f64,
}

/// Joins automated diffs with per-prompt human scores.
pub fn join_auto_human(diffs: &[DiffRow], human: &BTreeMap<String, f64>) -> Vec<PairedScore> {
    diffs
        .iter()
        .filter_map(|d| {
            human.get(&d.prompt_id).map(|&h| PairedScore {
                prompt_id: d.prompt_id.clone(),
                entropy_diff: d.entropy_diff,
                max_gap_diff: d.max_gap_diff,
                human_sxs: h,
            })
        })
        .collect()
}

pub fn correlate_auto_human(pairs: &[PairedScore], method: CorrelationMethod) -> Result<Vec<CorrelationReport>, ReportError> {
    if pairs.len() < 3 {
        return Err(ReportError::TooFewPairs(pairs.len()));
    }
    let human: Vec<f64> = pairs.iter().map(|p| p.human_sxs).collect();
    let f = match method {
        CorrelationMethod::Pearson => pearson,
        CorrelationMethod::Spearman => spearman,
    };
    [
        ("entropy_diff", pairs.iter().map(|p| p.entropy_diff).collect::<Vec<_>>()),
        ("max_gap_diff", pairs.iter().map(|p| p.max_gap_diff).collect()),
    ]
    .into_iter()
    .map(|(metric, auto)| {
        let (r, p) = f(&auto, &human)?;
        Ok(CorrelationReport {
            metric: metric.into(),
            method,
            r,
            p,
            n: pairs.len(),
        })
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::AttributeScore;

    fn row(method: &str, values: [f64; 5]) -> SummaryRow {
        SummaryRow {
            method: method.into(),
            entropy: BTreeMap::from([(Attribute::Ethnicity, values[0]), (Attribute::Gender, values[1])]),
            max_gap: BTreeMap::from([(Attribute::Ethnicity, values[2]), (Attribute::Gender, values[3])]),
            is_helpful: values[4],
            n_prompts: 10,
            n_failed: 0,
        }
    }

    #[test]
    fn two_rows_both_bold() {
        let md = summary_table(&[row("a", [0.1, 0.2, 0.9, 0.8, 0.5]), row("b", [0.3, 0.1, 0.7, 0.9, 0.6])], TableFormat::Markdown)
            .unwrap();
        for line in md.lines().skip(2) {
            assert_eq!(line.matches("**").count(), 10, "{line}");
        }
    }

    #[test]
    fn five_rows_hand_ranked() {
        let rows = [
            row("baseline", [0.04, 0.02, 0.99, 0.98, 0.30]),
            row("if", [0.20, 0.10, 0.90, 0.93, 0.50]),
            row("cai", [0.80, 0.40, 0.60, 0.70, 0.95]),
            row("ccsv0", [1.08, 0.49, 0.50, 0.60, 0.98]),
            row("ccsv5", [0.95, 0.49, 0.55, 0.65, 0.97]),
        ];
        let md = summary_table(&rows, TableFormat::Markdown).unwrap();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[0], "| Method | Entropy (ethnicity) | Entropy (gender) | Gap (ethnicity) | Gap (gender) | Is helpful |");
        // Entropy(eth) best two: ccsv0, ccsv5. Entropy(gender): tie 0.49, 0.49. Gaps: ccsv0, ccsv5.
        // Helpful: ccsv0, ccsv5.
        assert_eq!(lines[2], "| baseline | 0.04 | 0.02 | 0.99 | 0.98 | 0.30 |");
        assert_eq!(lines[4], "| cai | 0.80 | 0.40 | 0.60 | 0.70 | 0.95 |");
        assert_eq!(lines[5], "| ccsv0 | **1.08** | **0.49** | **0.50** | **0.60** | **0.98** |");
        assert_eq!(lines[6], "| ccsv5 | **0.95** | **0.49** | **0.55** | **0.65** | **0.97** |");
    }

    #[test]
    fn csv_round_trips() {
        let rows = [row("a,b", [0.123456789, 0.2, 0.9, 0.8, 0.5])];
        let text = summary_table(&rows, TableFormat::Csv).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let rec = rdr.records().next().unwrap().unwrap();
        assert_eq!(&rec[0], "a,b");
        assert_eq!(rec[1].parse::<f64>().unwrap(), 0.123456789);
        assert_eq!(rdr.headers().unwrap().len(), 7);
    }

    fn mrec(method: &str, sat: Option<f64>, eth: f64) -> MetricsRecord {
        MetricsRecord {
            prompt_id: "p".into(),
            method: method.into(),
            attributes: BTreeMap::from([(
                Attribute::Ethnicity,
                AttributeScore {
                    entropy: eth,
                    max_gap: 0.0,
                    coverage: 1.0,
                },
            )]),
            is_helpful: 1,
            n_mentions: 4,
            constraint_satisfaction: sat,
            failed: false,
        }
    }

    #[test]
    fn pareto_guards_unconstrained() {
        assert!(matches!(
            pareto_points(&[mrec("m", None, 1.0)], Attribute::Ethnicity),
            Err(ReportError::Unconstrained { .. })
        ));
        let pts = pareto_points(&[mrec("m", Some(1.0), 2.0), mrec("m", Some(0.5), 1.0)], Attribute::Ethnicity).unwrap();
        assert_eq!(pts, [ParetoPoint { method: "m".into(), x: 0.75, y: 1.5 }]);
    }

    #[test]
    fn diff_sign_and_correlation() {
        let base: Vec<MetricsRecord> = (0..6)
            .map(|i| MetricsRecord {
                prompt_id: format!("p{i}"),
                ..mrec("baseline", None, 0.0)
            })
            .collect();
        let cand: Vec<MetricsRecord> = (0..6)
            .map(|i| MetricsRecord {
                prompt_id: format!("p{i}"),
                ..mrec("ccsv", None, i as f64 * 0.25)
            })
            .collect();
        let diffs = auto_diff(&base, &cand, Attribute::Ethnicity);
        assert_eq!(diffs[2].entropy_diff, 0.5);
        let human: BTreeMap<String, f64> = (0..6).map(|i| (format!("p{i}"), 0.1 + i as f64 * 0.2)).collect();
        let pairs = join_auto_human(&diffs, &human);
        let gaps_constant = correlate_auto_human(&pairs, CorrelationMethod::Pearson);
        assert!(matches!(gaps_constant, Err(ReportError::Stats(StatsError::Degenerate))));
        let (r, _) = pearson(&pairs.iter().map(|p| p.entropy_diff).collect::<Vec<_>>(), &pairs.iter().map(|p| p.human_sxs).collect::<Vec<_>>()).unwrap();
        assert!(r > 0.999);
        assert!(matches!(correlate_auto_human(&pairs[..2], CorrelationMethod::Pearson), Err(ReportError::TooFewPairs(2))));
    }
}
