//! Segmentation evaluation: per-case Dice overlap, the pooled-voxel
//! aggregated Dice over a test set, and leaderboard ranking by the mean of
//! the per-structure aggregates.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::volume::Volume3D;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mask shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("mask is not binary: value {value} at linear index {index}")]
    NonBinaryMask { index: usize, value: f64 },
    #[error("empty evaluation list")]
    EmptyList,
    #[error("pair list mixes structures {0} and {1}")]
    MixedStructures(Structure, Structure),
    #[error("duplicate evaluation pair for case {case_id:?} structure {structure}")]
    DuplicatePair { case_id: String, structure: Structure },
    #[error("leaderboard entries disagree on structure sets: {0:?} vs {1:?}")]
    StructureSetMismatch(Vec<String>, Vec<String>),
    #[error("unknown structure name {0:?}")]
    UnknownStructure(String),
}

/// Annotated structure an evaluation pair belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Structure {
    Gtvp,
    Gtvn,
    Tumor,
}

impl Structure {
    pub fn parse(s: &str) -> Result<Self, MetricsError> {
        match s {
            "GTVp" => Ok(Structure::Gtvp),
            "GTVn" => Ok(Structure::Gtvn),
            "TUMOR" => Ok(Structure::Tumor),
            other => Err(MetricsError::UnknownStructure(other.to_string())),
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Structure::Gtvp => "GTVp",
            Structure::Gtvn => "GTVn",
            Structure::Tumor => "TUMOR",
        })
    }
}

/// How a case whose truth and prediction are both empty is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmptyPolicy {
    /// Score 1.0: a correct "no tumor" call is a perfect prediction.
    #[default]
    One,
    /// Score 0.0.
    Zero,
    /// Leave the case out of per-case scoring.
    Exclude,
}

impl EmptyPolicy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "one" => Some(EmptyPolicy::One),
            "zero" => Some(EmptyPolicy::Zero),
            "exclude" => Some(EmptyPolicy::Exclude),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmptyPolicy::One => "one",
            EmptyPolicy::Zero => "zero",
            EmptyPolicy::Exclude => "exclude",
        }
    }
}

/// Voxel counts of one (truth, prediction) mask pair; everything the Dice
/// formulas need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskCounts {
    pub truth: u64,
    pub pred: u64,
    pub intersection: u64,
}

impl MaskCounts {
    pub fn of(truth: &Volume3D, pred: &Volume3D) -> Result<Self, MetricsError> {
        if truth.shape() != pred.shape() {
            return Err(MetricsError::ShapeMismatch(truth.shape(), pred.shape()));
        }
        let check = |v: f64, i: usize| {
            if v == 0.0 || v == 1.0 {
                Ok(v == 1.0)
            } else {
                Err(MetricsError::NonBinaryMask { index: i, value: v })
            }
        };
        let mut counts = MaskCounts {
            truth: 0,
            pred: 0,
            intersection: 0,
        };
        for (i, (&t, &p)) in truth.data().iter().zip(pred.data()).enumerate() {
            let t = check(t, i)?;
            let p = check(p, i)?;
            counts.truth += u64::from(t);
            counts.pred += u64::from(p);
            counts.intersection += u64::from(t && p);
        }
        Ok(counts)
    }
}

/// One case's truth/prediction pair for one structure, reduced to counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub case_id: String,
    pub structure: Structure,
    pub counts: MaskCounts,
}

impl EvalPair {
    pub fn new(
        case_id: impl Into<String>,
        structure: Structure,
        truth: &Volume3D,
        pred: &Volume3D,
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            case_id: case_id.into(),
            structure,
            counts: MaskCounts::of(truth, pred)?,
        })
    }
}

/// Dice overlap from counts. `None` only under [`EmptyPolicy::Exclude`]
/// when both masks are empty.
pub fn dsc_from_counts(c: MaskCounts, policy: EmptyPolicy) -> Option<f64> {
    let denom = c.truth + c.pred;
    if denom == 0 {
        return match policy {
            EmptyPolicy::One => Some(1.0),
            EmptyPolicy::Zero => Some(0.0),
            EmptyPolicy::Exclude => None,
        };
    }
    Some(2.0 * c.intersection as f64 / denom as f64)
}

/// Dice similarity coefficient of two binary masks: `2|A n B| / (|A|+|B|)`,
/// scoring 1.0 when both masks are empty.
pub fn dsc(a: &Volume3D, b: &Volume3D) -> Result<f64, MetricsError> {
    Ok(dsc_from_counts(MaskCounts::of(a, b)?, EmptyPolicy::One)
        .expect("policy One always scores"))
}

/// Aggregated Dice over a case set: voxel counts are pooled across cases
/// before the ratio is taken. Returns 1.0 when every truth and prediction
/// is empty.
pub fn dsc_agg_from_counts<'a>(counts: impl IntoIterator<Item = &'a MaskCounts>) -> f64 {
    let (mut inter, mut denom) = (0u64, 0u64);
    for c in counts {
        inter += c.intersection;
        denom += c.truth + c.pred;
    }
    if denom == 0 {
        1.0
    } else {
        2.0 * inter as f64 / denom as f64
    }
}

/// Aggregated Dice of a non-empty single-structure pair list.
pub fn dsc_agg(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    let first = pairs.first().ok_or(MetricsError::EmptyList)?;
    if let Some(other) = pairs.iter().find(|p| p.structure != first.structure) {
        return Err(MetricsError::MixedStructures(
            first.structure,
            other.structure,
        ));
    }
    Ok(dsc_agg_from_counts(pairs.iter().map(|p| &p.counts)))
}

/// Per-case line of an [`EvalReport`]. `dsc` is `None` for cases excluded
/// by the empty-empty policy.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseScore {
    pub case_id: String,
    pub structure: Structure,
    pub dsc: Option<f64>,
    pub truth_voxels: u64,
    pub pred_voxels: u64,
    pub intersection: u64,
}

/// Evaluation of a case set: per-case Dice plus per-structure aggregated
/// Dice and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_case: Vec<CaseScore>,
    pub dsc_agg_per_structure: Vec<(Structure, f64)>,
    pub mean_dsc_agg: f64,
    pub n_cases: usize,
    pub empty_policy: EmptyPolicy,
}

impl EvalReport {
    /// Mean of the scored per-case Dice values for one structure.
    pub fn mean_case_dsc(&self, structure: Structure) -> Option<f64> {
        let scores: Vec<f64> = self
            .per_case
            .iter()
            .filter(|c| c.structure == structure)
            .filter_map(|c| c.dsc)
            .collect();
        if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }

    pub fn dsc_agg_for(&self, structure: Structure) -> Option<f64> {
        self.dsc_agg_per_structure
            .iter()
            .find(|(s, _)| *s == structure)
            .map(|&(_, v)| v)
    }
}

/// Score a full pair set: per-case Dice, per-structure aggregates, and the
/// mean aggregate over the structures present.
pub fn evaluate_set(pairs: &[EvalPair], policy: EmptyPolicy) -> Result<EvalReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let mut seen = HashSet::new();
    for p in pairs {
        if !seen.insert((p.case_id.clone(), p.structure)) {
            return Err(MetricsError::DuplicatePair {
                case_id: p.case_id.clone(),
                structure: p.structure,
            });
        }
    }

    let per_case: Vec<CaseScore> = pairs
        .iter()
        .map(|p| CaseScore {
            case_id: p.case_id.clone(),
            structure: p.structure,
            dsc: dsc_from_counts(p.counts, policy),
            truth_voxels: p.counts.truth,
            pred_voxels: p.counts.pred,
            intersection: p.counts.intersection,
        })
        .collect();

    let mut structures: Vec<Structure> = pairs.iter().map(|p| p.structure).collect();
    structures.sort();
    structures.dedup();
    let dsc_agg_per_structure: Vec<(Structure, f64)> = structures
        .iter()
        .map(|&s| {
            let agg = dsc_agg_from_counts(
                pairs.iter().filter(|p| p.structure == s).map(|p| &p.counts),
            );
            (s, agg)
        })
        .collect();
    let mean_dsc_agg = dsc_agg_per_structure.iter().map(|&(_, v)| v).sum::<f64>()
        / dsc_agg_per_structure.len() as f64;

    let case_ids: HashSet<&str> = pairs.iter().map(|p| p.case_id.as_str()).collect();
    Ok(EvalReport {
        per_case,
        dsc_agg_per_structure,
        mean_dsc_agg,
        n_cases: case_ids.len(),
        empty_policy: policy,
    })
}

/// One leaderboard input row: per-structure aggregated Dice keyed by
/// structure name.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderboardEntry {
    pub name: String,
    pub aggregates: Vec<(String, f64)>,
}

/// One ranked output row. `mean` is full precision and is what the sort
/// uses; `display_mean` is rounded half-up to five decimals.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRow {
    pub rank: usize,
    pub name: String,
    pub aggregates: Vec<(String, f64)>,
    pub mean: f64,
    pub display_mean: String,
}

/// Round half-up at five decimals, for display only. A small epsilon
/// absorbs representation noise so values that are an exact half in
/// decimal round up reliably.
pub fn round_half_up_5(x: f64) -> f64 {
    (x * 1e5 + 0.5 + 1e-9).floor() / 1e5
}

pub fn format_5dp(x: f64) -> String {
    format!("{:.5}", round_half_up_5(x))
}

/// Rank entries by descending mean aggregate (full precision), breaking
/// ties lexicographically by name.
pub fn rank_leaderboard(entries: &[LeaderboardEntry]) -> Result<Vec<RankedRow>, MetricsError> {
    if entries.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let key = |e: &LeaderboardEntry| {
        let mut names: Vec<String> = e.aggregates.iter().map(|(n, _)| n.clone()).collect();
        names.sort();
        names
    };
    let reference = key(&entries[0]);
    for e in &entries[1..] {
        let k = key(e);
        if k != reference {
            return Err(MetricsError::StructureSetMismatch(reference, k));
        }
    }

    let mut rows: Vec<RankedRow> = entries
        .iter()
        .map(|e| {
            let mean =
                e.aggregates.iter().map(|&(_, v)| v).sum::<f64>() / e.aggregates.len() as f64;
            RankedRow {
                rank: 0,
                name: e.name.clone(),
                aggregates: e.aggregates.clone(),
                mean,
                display_mean: format_5dp(mean),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.mean
            .partial_cmp(&a.mean)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    Ok(rows)
}
