//! Case manifests, run configuration, dataset preparation, phantom
//! generation, evaluation orchestration, and report writing: the layer the
//! CLI drives.

pub mod config;
pub mod evaluate;
pub mod manifest;
pub mod patches;
pub mod phantom;
pub mod prep;
pub mod report;
pub mod split;
pub mod verify;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::metrics::MetricsError;
use crate::nifti::NiftiError;
use crate::sampler::SamplerError;
use crate::stats::StatsError;
use crate::volume::VolumeError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    ManifestParse(String),
    #[error("duplicate case id {0:?}")]
    DuplicateCase(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("prep metadata error: {0}")]
    Meta(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("case {0:?} has no prior prediction")]
    MissingPrior(String),
    #[error("no prediction found for case {0:?}")]
    MissingPrediction(String),
    #[error("{0}")]
    WrongDataset(String),
    #[error("case {case_id:?}: spacing {got:?} disagrees with declared common spacing {expected:?}")]
    SpacingDisagreement {
        case_id: String,
        got: (f64, f64, f64),
        expected: (f64, f64, f64),
    },
    #[error("grid mismatch: got shape {got_shape:?} spacing {got_spacing:?}, want shape {want_shape:?} spacing {want_spacing:?}")]
    GridMismatch {
        got_shape: (usize, usize, usize),
        got_spacing: (f64, f64, f64),
        want_shape: (usize, usize, usize),
        want_spacing: (f64, f64, f64),
    },
    #[error("no cases left to prepare after filtering")]
    EmptyAfterFilter,
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Resolve a manifest-relative path against the manifest's directory.
pub fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Resolve every relative path in a manifest against `base` (typically the
/// directory the manifest file was read from).
pub fn resolve_manifest_paths(manifest: &mut manifest::Manifest, base: &Path) {
    for case in &mut manifest.cases {
        case.ct_path = resolve_path(base, &case.ct_path);
        case.pet_path = resolve_path(base, &case.pet_path);
        for p in [
            &mut case.mask_path,
            &mut case.prediction_path,
            &mut case.prior_path,
        ]
        .into_iter()
        .flatten()
        {
            *p = resolve_path(base, p);
        }
    }
}
