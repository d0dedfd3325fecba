//! Significance testing for paired segmentation scores: the Wilcoxon
//! signed-rank test (exact or normal-approximated) and paired bootstrap
//! resampling of the aggregated Dice, which turns that global metric into
//! a per-sample distribution the test can consume.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::metrics::{dsc_agg_from_counts, EvalPair, MaskCounts, Structure};
use crate::rng::derive_rng;

/// Auto mode switches from exact enumeration to the normal approximation
/// above this many effective pairs.
pub const EXACT_AUTO_MAX_N: usize = 25;
/// Hard ceiling for requested exact enumeration (count vector stays in
/// u128 territory far below this; the ceiling keeps runtime bounded).
pub const EXACT_HARD_MAX_N: usize = 100;
/// Display threshold below which p-values print as "~0". Raw values are
/// always retained in records.
pub const APPROX_ZERO_BELOW: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("bad stat config: {0}")]
    BadConfig(String),
    #[error("paired score lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("too few pairs after zero-difference handling: {0}")]
    TooFewPairs(usize),
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("exact enumeration infeasible for n = {0}")]
    ExactInfeasible(usize),
    #[error("models disagree on the evaluated case set")]
    CaseSetMismatch,
    #[error("need at least two models, got {0}")]
    TooFewModels(usize),
    #[error("no cases to resample")]
    NoCases,
}

/// What to do with zero paired differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroDiffPolicy {
    /// Drop zero differences before ranking (classic treatment). Default.
    #[default]
    WilcoxDrop,
    /// Rank zeros with everything else, then drop them from the rank sums.
    Pratt,
}

impl ZeroDiffPolicy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wilcox-drop" => Some(ZeroDiffPolicy::WilcoxDrop),
            "pratt" => Some(ZeroDiffPolicy::Pratt),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ZeroDiffPolicy::WilcoxDrop => "wilcox-drop",
            ZeroDiffPolicy::Pratt => "pratt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PValueMode {
    Exact,
    NormalApprox,
    /// Exact up to [`EXACT_AUTO_MAX_N`] effective pairs, normal above.
    #[default]
    Auto,
}

impl PValueMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact" => Some(PValueMode::Exact),
            "normal-approx" => Some(PValueMode::NormalApprox),
            "auto" => Some(PValueMode::Auto),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PValueMode::Exact => "exact",
            PValueMode::NormalApprox => "normal-approx",
            PValueMode::Auto => "auto",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatConfig {
    pub alpha: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub zero_diff_policy: ZeroDiffPolicy,
    pub mode: PValueMode,
}

impl Default for StatConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            n_bootstrap: 1000,
            seed: 0,
            zero_diff_policy: ZeroDiffPolicy::WilcoxDrop,
            mode: PValueMode::Auto,
        }
    }
}

impl StatConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(StatsError::BadConfig(format!(
                "alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        if self.n_bootstrap < 100 {
            return Err(StatsError::BadConfig(format!(
                "n_bootstrap {} below the minimum of 100",
                self.n_bootstrap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    NormalApprox,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Exact => "exact",
            Method::NormalApprox => "normal-approx",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonOutcome {
    /// W = min(W+, W-).
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub n_effective: usize,
    pub method: Method,
}

/// Midranks (1-based, ties averaged) of the given values.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite scores"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average of ranks i+1..=j+1
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact null distribution of 2*W+ over all sign assignments of the given
/// doubled ranks: `counts[k]` is the number of assignments with 2*W+ = k.
fn exact_counts(doubled_ranks: &[u64]) -> Vec<u128> {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0u128; total as usize + 1];
    counts[0] = 1;
    for &r in doubled_ranks {
        let r = r as usize;
        for k in (r..counts.len()).rev() {
            counts[k] += counts[k - r];
        }
    }
    counts
}

struct RankedDiffs {
    /// Midranks of the nonzero differences (over the policy's ranking set).
    ranks: Vec<f64>,
    /// Signs of the nonzero differences, aligned with `ranks`.
    positive: Vec<bool>,
    /// Tie-group sizes used in the variance correction.
    tie_groups: Vec<usize>,
    n_zero: usize,
    n_total: usize,
}

fn rank_differences(diffs: &[f64], policy: ZeroDiffPolicy) -> Result<RankedDiffs, StatsError> {
    let n_total = diffs.len();
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(StatsError::AllZeroDifferences);
    }
    let n_zero = n_total - nonzero.len();

    let (ranks, positive, tie_basis): (Vec<f64>, Vec<bool>, Vec<f64>) = match policy {
        ZeroDiffPolicy::WilcoxDrop => {
            let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
            let ranks = midranks(&abs);
            let positive = nonzero.iter().map(|&d| d > 0.0).collect();
            (ranks, positive, abs)
        }
        ZeroDiffPolicy::Pratt => {
            let abs_all: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
            let all_ranks = midranks(&abs_all);
            let mut ranks = Vec::with_capacity(nonzero.len());
            let mut positive = Vec::with_capacity(nonzero.len());
            let mut tie_basis = Vec::with_capacity(nonzero.len());
            for (&d, &r) in diffs.iter().zip(&all_ranks) {
                if d != 0.0 {
                    ranks.push(r);
                    positive.push(d > 0.0);
                    tie_basis.push(d.abs());
                }
            }
            (ranks, positive, tie_basis)
        }
    };

    let mut sorted = tie_basis;
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let mut tie_groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        tie_groups.push(j - i + 1);
        i = j + 1;
    }

    Ok(RankedDiffs {
        ranks,
        positive,
        tie_groups,
        n_zero,
        n_total,
    })
}

/// Two-sided Wilcoxon signed-rank test on paired scores.
///
/// Differences `x[i] - y[i]` are ranked by magnitude with midrank ties;
/// zero differences follow the configured policy. Exact p-values come from
/// the full sign-assignment distribution; the normal approximation uses
/// the tie-corrected variance and a continuity correction of 0.5.
pub fn wilcoxon_signed_rank(
    x: &[f64],
    y: &[f64],
    cfg: &StatConfig,
) -> Result<WilcoxonOutcome, StatsError> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let ranked = rank_differences(&diffs, cfg.zero_diff_policy)?;
    let n_eff = ranked.ranks.len();
    if n_eff < 2 {
        return Err(StatsError::TooFewPairs(n_eff));
    }

    let w_plus: f64 = ranked
        .ranks
        .iter()
        .zip(&ranked.positive)
        .filter(|&(_, &pos)| pos)
        .map(|(&r, _)| r)
        .sum();
    let rank_sum: f64 = ranked.ranks.iter().sum();
    let w_minus = rank_sum - w_plus;
    let statistic = w_plus.min(w_minus);

    let method = match cfg.mode {
        PValueMode::Exact => Method::Exact,
        PValueMode::NormalApprox => Method::NormalApprox,
        PValueMode::Auto => {
            if n_eff <= EXACT_AUTO_MAX_N {
                Method::Exact
            } else {
                Method::NormalApprox
            }
        }
    };

    let p_value = match method {
        Method::Exact => {
            if n_eff > EXACT_HARD_MAX_N {
                return Err(StatsError::ExactInfeasible(n_eff));
            }
            // doubled midranks are exact integers
            let doubled: Vec<u64> = ranked.ranks.iter().map(|&r| (2.0 * r) as u64).collect();
            let counts = exact_counts(&doubled);
            let w2 = (2.0 * w_plus).round() as usize;
            let le: u128 = counts[..=w2].iter().sum();
            let ge: u128 = counts[w2..].iter().sum();
            let total = 2f64.powi(n_eff as i32);
            (2.0 * (le.min(ge) as f64) / total).min(1.0)
        }
        Method::NormalApprox => {
            let tie_term: f64 = ranked
                .tie_groups
                .iter()
                .map(|&t| {
                    let t = t as f64;
                    t * t * t - t
                })
                .sum();
            let (mean, mut var) = match cfg.zero_diff_policy {
                ZeroDiffPolicy::WilcoxDrop => {
                    let n = n_eff as f64;
                    (
                        n * (n + 1.0) / 4.0,
                        n * (n + 1.0) * (2.0 * n + 1.0) / 24.0,
                    )
                }
                ZeroDiffPolicy::Pratt => {
                    let n = ranked.n_total as f64;
                    let z = ranked.n_zero as f64;
                    (
                        (n * (n + 1.0) - z * (z + 1.0)) / 4.0,
                        (n * (n + 1.0) * (2.0 * n + 1.0) - z * (z + 1.0) * (2.0 * z + 1.0))
                            / 24.0,
                    )
                }
            };
            var -= tie_term / 48.0;
            if var <= 0.0 {
                1.0
            } else {
                let centered = w_plus - mean;
                let correction = 0.5 * centered.signum();
                let z = (centered - correction) / var.sqrt();
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0)
            }
        }
    };

    Ok(WilcoxonOutcome {
        statistic,
        p_value,
        n_effective: n_eff,
        method,
    })
}

/// Per-case, per-structure counts for one model, keyed for resampling.
struct CaseTable {
    /// case id -> structure -> counts
    by_case: BTreeMap<String, BTreeMap<Structure, MaskCounts>>,
}

impl CaseTable {
    fn build(pairs: &[EvalPair]) -> Self {
        let mut by_case: BTreeMap<String, BTreeMap<Structure, MaskCounts>> = BTreeMap::new();
        for p in pairs {
            by_case
                .entry(p.case_id.clone())
                .or_default()
                .insert(p.structure, p.counts);
        }
        Self { by_case }
    }

    fn case_ids(&self) -> Vec<&String> {
        self.by_case.keys().collect()
    }
}

/// Aggregated-Dice score of one drawn case multiset: per-structure pooled
/// Dice, averaged over the structures present.
fn score_multiset(
    table: &CaseTable,
    ids: &[&String],
    draw: &[usize],
    structures: &[Structure],
) -> f64 {
    let mut acc = 0.0;
    for &s in structures {
        let counts = draw.iter().filter_map(|&i| table.by_case[ids[i]].get(&s));
        acc += dsc_agg_from_counts(counts);
    }
    acc / structures.len() as f64
}

/// Paired bootstrap of the aggregated Dice for two models over one case
/// set: each iteration draws `n_cases` case ids with replacement (one
/// shared draw applied to both models) and scores each model on the drawn
/// multiset. Deterministic under `cfg.seed`.
pub fn bootstrap_dscagg(
    pairs_a: &[EvalPair],
    pairs_b: &[EvalPair],
    cfg: &StatConfig,
) -> Result<(Vec<f64>, Vec<f64>), StatsError> {
    cfg.validate()?;
    let ta = CaseTable::build(pairs_a);
    let tb = CaseTable::build(pairs_b);
    let ids = ta.case_ids();
    if ids.is_empty() {
        return Err(StatsError::NoCases);
    }
    if ids != tb.case_ids() {
        return Err(StatsError::CaseSetMismatch);
    }
    let mut structures: Vec<Structure> = pairs_a.iter().map(|p| p.structure).collect();
    structures.sort();
    structures.dedup();

    let n = ids.len();
    let mut dist_a = Vec::with_capacity(cfg.n_bootstrap);
    let mut dist_b = Vec::with_capacity(cfg.n_bootstrap);
    let mut draw = vec![0usize; n];
    for it in 0..cfg.n_bootstrap {
        let mut rng = derive_rng(cfg.seed, "bootstrap", it as u64);
        for slot in &mut draw {
            *slot = rng.random_range(0..n);
        }
        dist_a.push(score_multiset(&ta, &ids, &draw, &structures));
        dist_b.push(score_multiset(&tb, &ids, &draw, &structures));
    }
    Ok((dist_a, dist_b))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairOutcome {
    Tested {
        p_value: f64,
        statistic: f64,
        n_effective: usize,
        method: Method,
    },
    /// Every paired difference was zero (indistinguishable models); a
    /// sentinel rather than a fabricated p-value.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTest {
    pub model_a: String,
    pub model_b: String,
    pub outcome: PairOutcome,
}

/// Symmetric matrix of pairwise tests with the protocol metadata needed to
/// reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct StatReport {
    pub model_names: Vec<String>,
    pub pairs: Vec<PairTest>,
    pub alpha: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub protocol: String,
}

impl StatReport {
    pub fn outcome(&self, a: &str, b: &str) -> Option<&PairOutcome> {
        self.pairs
            .iter()
            .find(|p| {
                (p.model_a == a && p.model_b == b) || (p.model_a == b && p.model_b == a)
            })
            .map(|p| &p.outcome)
    }

    /// Text matrix with "~0" substituted below the display threshold and
    /// "-" on the diagonal; degenerate pairs print as "n/a".
    pub fn render_matrix(&self) -> String {
        let width = self
            .model_names
            .iter()
            .map(|n| n.len())
            .max()
            .unwrap_or(0)
            .max(8);
        let mut out = String::new();
        out.push_str(&format!("{:>width$}", ""));
        for name in &self.model_names {
            out.push_str(&format!(" {name:>width$}"));
        }
        out.push('\n');
        for a in &self.model_names {
            out.push_str(&format!("{a:>width$}"));
            for b in &self.model_names {
                let cell = if a == b {
                    "-".to_string()
                } else {
                    match self.outcome(a, b) {
                        Some(PairOutcome::Tested { p_value, .. }) => format_p(*p_value),
                        Some(PairOutcome::Degenerate) => "n/a".to_string(),
                        None => "?".to_string(),
                    }
                };
                out.push_str(&format!(" {cell:>width$}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Display form of a p-value: "~0" below the approximation threshold.
pub fn format_p(p: f64) -> String {
    if p < APPROX_ZERO_BELOW {
        "~0".to_string()
    } else {
        format!("{p:.5}")
    }
}

/// Pairwise Wilcoxon over aligned per-case score vectors (one score per
/// case per model).
pub fn pvalue_matrix_percase(
    models: &[(String, Vec<f64>)],
    cfg: &StatConfig,
) -> Result<StatReport, StatsError> {
    cfg.validate()?;
    if models.len() < 2 {
        return Err(StatsError::TooFewModels(models.len()));
    }
    let len = models[0].1.len();
    for (_, scores) in models {
        if scores.len() != len {
            return Err(StatsError::LengthMismatch(len, scores.len()));
        }
    }
    let mut pairs = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            let outcome = match wilcoxon_signed_rank(&models[i].1, &models[j].1, cfg) {
                Ok(w) => PairOutcome::Tested {
                    p_value: w.p_value,
                    statistic: w.statistic,
                    n_effective: w.n_effective,
                    method: w.method,
                },
                Err(StatsError::AllZeroDifferences) => PairOutcome::Degenerate,
                Err(e) => return Err(e),
            };
            pairs.push(PairTest {
                model_a: models[i].0.clone(),
                model_b: models[j].0.clone(),
                outcome,
            });
        }
    }
    Ok(StatReport {
        model_names: models.iter().map(|(n, _)| n.clone()).collect(),
        pairs,
        alpha: cfg.alpha,
        n_bootstrap: 0,
        seed: cfg.seed,
        protocol: "wilcoxon-per-case".to_string(),
    })
}

/// Full bootstrap protocol: for every unordered model pair, resample the
/// case set with shared draws, score both models' aggregated Dice per
/// draw, and run the Wilcoxon test on the paired bootstrap sequences.
pub fn pvalue_matrix(
    models: &[(String, Vec<EvalPair>)],
    cfg: &StatConfig,
) -> Result<StatReport, StatsError> {
    cfg.validate()?;
    if models.len() < 2 {
        return Err(StatsError::TooFewModels(models.len()));
    }
    let mut pairs = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            let (da, db) = bootstrap_dscagg(&models[i].1, &models[j].1, cfg)?;
            let outcome = match wilcoxon_signed_rank(&da, &db, cfg) {
                Ok(w) => PairOutcome::Tested {
                    p_value: w.p_value,
                    statistic: w.statistic,
                    n_effective: w.n_effective,
                    method: w.method,
                },
                Err(StatsError::AllZeroDifferences) => PairOutcome::Degenerate,
                Err(e) => return Err(e),
            };
            pairs.push(PairTest {
                model_a: models[i].0.clone(),
                model_b: models[j].0.clone(),
                outcome,
            });
        }
    }
    Ok(StatReport {
        model_names: models.iter().map(|(n, _)| n.clone()).collect(),
        pairs,
        alpha: cfg.alpha,
        n_bootstrap: cfg.n_bootstrap,
        seed: cfg.seed,
        protocol: "bootstrap-dscagg".to_string(),
    })
}
