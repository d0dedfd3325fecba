//! Report serialization: evaluation and statistics results as both
//! machine-readable tab-separated records and human-readable summaries,
//! plus the aggregate-table format the ranking command consumes.
//!
//! Field orders are fixed. `eval_cases.tsv`: case_id, structure, dsc,
//! truth_voxels, pred_voxels, intersection (dsc is `NA` for cases excluded
//! by the empty-empty policy). `stat_pairs.tsv`: model_a, model_b,
//! p_value, statistic, n_effective, method (`NA`/`degenerate` for
//! indistinguishable pairs). Rank tables: rank, name, one column per
//! structure, mean (half-up, 5 decimals), mean_full.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::PipelineError;
use crate::metrics::{format_5dp, EvalReport, LeaderboardEntry, RankedRow};
use crate::stats::{PairOutcome, StatReport};

pub const EVAL_CASES_FILE: &str = "eval_cases.tsv";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.txt";
pub const STAT_PAIRS_FILE: &str = "stat_pairs.tsv";
pub const STAT_MATRIX_FILE: &str = "stat_matrix.txt";

pub fn render_eval_cases(report: &EvalReport) -> String {
    let mut s = String::from("case_id\tstructure\tdsc\ttruth_voxels\tpred_voxels\tintersection\n");
    for c in &report.per_case {
        let dsc = c.dsc.map_or("NA".to_string(), |d| format!("{d}"));
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            c.case_id, c.structure, dsc, c.truth_voxels, c.pred_voxels, c.intersection
        )
        .unwrap();
    }
    s
}

pub fn render_eval_summary(report: &EvalReport) -> String {
    let mut s = String::new();
    writeln!(s, "n_cases = {}", report.n_cases).unwrap();
    writeln!(s, "empty_empty = {}", report.empty_policy.as_str()).unwrap();
    for (structure, agg) in &report.dsc_agg_per_structure {
        writeln!(s, "dsc_agg.{structure} = {agg}").unwrap();
        if let Some(mean_case) = report.mean_case_dsc(*structure) {
            writeln!(s, "mean_case_dsc.{structure} = {mean_case}").unwrap();
        }
    }
    writeln!(s, "mean_dsc_agg = {}", report.mean_dsc_agg).unwrap();
    writeln!(s, "mean_dsc_agg_display = {}", format_5dp(report.mean_dsc_agg)).unwrap();
    s
}

pub fn write_eval_report(report: &EvalReport, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(EVAL_CASES_FILE), render_eval_cases(report))?;
    fs::write(dir.join(EVAL_SUMMARY_FILE), render_eval_summary(report))?;
    Ok(())
}

pub fn render_stat_pairs(report: &StatReport) -> String {
    let mut s = String::from("model_a\tmodel_b\tp_value\tstatistic\tn_effective\tmethod\n");
    for pair in &report.pairs {
        match &pair.outcome {
            PairOutcome::Tested {
                p_value,
                statistic,
                n_effective,
                method,
            } => writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                pair.model_a, pair.model_b, p_value, statistic, n_effective, method
            )
            .unwrap(),
            PairOutcome::Degenerate => writeln!(
                s,
                "{}\t{}\tNA\tNA\t0\tdegenerate",
                pair.model_a, pair.model_b
            )
            .unwrap(),
        }
    }
    s
}

pub fn render_stat_header(report: &StatReport) -> String {
    format!(
        "protocol = {}\nalpha = {}\nn_bootstrap = {}\nseed = {}\n",
        report.protocol, report.alpha, report.n_bootstrap, report.seed
    )
}

pub fn write_stat_report(report: &StatReport, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(STAT_PAIRS_FILE), render_stat_pairs(report))?;
    let matrix = format!("{}\n{}", render_stat_header(report), report.render_matrix());
    fs::write(dir.join(STAT_MATRIX_FILE), matrix)?;
    Ok(())
}

/// Read a leaderboard input table: `name` (or `team`) column followed by
/// one column per structure, tab-separated.
pub fn read_aggregate_table(path: &Path) -> Result<Vec<LeaderboardEntry>, PipelineError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| PipelineError::ManifestParse(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| PipelineError::ManifestParse(e.to_string()))?
        .clone();
    if headers.len() < 2 {
        return Err(PipelineError::ManifestParse(
            "aggregate table needs a name column and at least one structure column".into(),
        ));
    }
    let structures: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| PipelineError::ManifestParse(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(PipelineError::ManifestParse(format!(
                "row {:?} has {} fields, expected {}",
                record.get(0).unwrap_or(""),
                record.len(),
                headers.len()
            )));
        }
        let mut aggregates = Vec::new();
        for (i, structure) in structures.iter().enumerate() {
            let raw = &record[i + 1];
            let value: f64 = raw.parse().map_err(|_| {
                PipelineError::ManifestParse(format!("bad aggregate value {raw:?}"))
            })?;
            aggregates.push((structure.clone(), value));
        }
        entries.push(LeaderboardEntry {
            name: record[0].to_string(),
            aggregates,
        });
    }
    Ok(entries)
}

pub fn render_rank_table(rows: &[RankedRow]) -> String {
    let mut s = String::from("rank\tname");
    if let Some(first) = rows.first() {
        for (structure, _) in &first.aggregates {
            write!(s, "\t{structure}").unwrap();
        }
    }
    s.push_str("\tmean\tmean_full\n");
    for row in rows {
        write!(s, "{}\t{}", row.rank, row.name).unwrap();
        for &(_, v) in &row.aggregates {
            write!(s, "\t{}", format_5dp(v)).unwrap();
        }
        writeln!(s, "\t{}\t{}", row.display_mean, row.mean).unwrap();
    }
    s
}

pub fn write_rank_table(rows: &[RankedRow], path: &Path) -> Result<(), PipelineError> {
    fs::write(path, render_rank_table(rows))?;
    Ok(())
}
