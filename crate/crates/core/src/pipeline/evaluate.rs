//! Evaluation orchestration: resolve each case's truth and prediction
//! files, reinsert predictions into the original grid when prep metadata
//! is available, and reduce everything to evaluation pairs.

use std::path::{Path, PathBuf};

use super::manifest::{CaseRecord, DatasetKind, Manifest};
use super::prep::{reinsert_to_original, PrepMeta, META_FILE};
use super::config::RunConfig;
use super::PipelineError;
use crate::metrics::{evaluate_set, EvalPair, EvalReport, Structure};
use crate::nifti::read_nifti;
use crate::volume::{binarize, split_mask, Volume3D};

fn find_prediction(rec: &CaseRecord, pred_dir: Option<&Path>) -> Result<PathBuf, PipelineError> {
    if let Some(p) = &rec.prediction_path {
        return Ok(p.clone());
    }
    if let Some(dir) = pred_dir {
        for candidate in [
            dir.join(format!("{}.nii.gz", rec.case_id)),
            dir.join(format!("{}.nii", rec.case_id)),
            dir.join(&rec.case_id).join("pred.nii.gz"),
        ] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    Err(PipelineError::MissingPrediction(rec.case_id.clone()))
}

fn find_meta(case_id: &str, meta_dir: Option<&Path>) -> Result<Option<PrepMeta>, PipelineError> {
    if let Some(dir) = meta_dir {
        for candidate in [
            dir.join(case_id).join(META_FILE),
            dir.join(format!("{case_id}.meta")),
        ] {
            if candidate.is_file() {
                return Ok(Some(PrepMeta::read(&candidate)?));
            }
        }
    }
    Ok(None)
}

/// Build the evaluation pairs of one case. Predictions found in prepared
/// (cropped) space are reinserted into the original grid first when the
/// prep metadata is available. Head-and-neck label maps are split into the
/// two structures; whole-body predictions are binarized at the configured
/// threshold.
pub fn case_pairs(
    rec: &CaseRecord,
    kind: DatasetKind,
    cfg: &RunConfig,
    pred_dir: Option<&Path>,
    meta_dir: Option<&Path>,
) -> Result<Vec<EvalPair>, PipelineError> {
    let mask_path = rec
        .mask_path
        .as_ref()
        .ok_or_else(|| PipelineError::MissingInput(format!("{}: no mask path", rec.case_id)))?;
    let truth = read_nifti(mask_path)?;
    let pred_path = find_prediction(rec, pred_dir)?;
    let mut pred = read_nifti(&pred_path)?;
    if let Some(meta) = find_meta(&rec.case_id, meta_dir)? {
        pred = reinsert_to_original(&pred, &meta, 0.0)?;
    }
    if pred.shape() != truth.shape() {
        return Err(PipelineError::GridMismatch {
            got_shape: pred.shape(),
            got_spacing: pred.spacing(),
            want_shape: truth.shape(),
            want_spacing: truth.spacing(),
        });
    }

    match kind {
        DatasetKind::Hecktor => {
            let truth_pair = split_mask(&truth, cfg.prep.label_gtvp, cfg.prep.label_gtvn)?;
            let pred_pair = split_mask(&pred, cfg.prep.label_gtvp, cfg.prep.label_gtvn)?;
            Ok(vec![
                EvalPair::new(&rec.case_id, Structure::Gtvp, &truth_pair.gtvp, &pred_pair.gtvp)?,
                EvalPair::new(&rec.case_id, Structure::Gtvn, &truth_pair.gtvn, &pred_pair.gtvn)?,
            ])
        }
        DatasetKind::Autopet => {
            let truth = truth.mark_binary()?;
            let pred: Volume3D = binarize(&pred, cfg.prep.binarize_threshold);
            Ok(vec![EvalPair::new(
                &rec.case_id,
                Structure::Tumor,
                &truth,
                &pred,
            )?])
        }
    }
}

/// All evaluation pairs of a manifest for one model's predictions.
pub fn model_pairs(
    manifest: &Manifest,
    cfg: &RunConfig,
    pred_dir: Option<&Path>,
    meta_dir: Option<&Path>,
) -> Result<Vec<EvalPair>, PipelineError> {
    let mut pairs = Vec::new();
    for rec in &manifest.cases {
        pairs.extend(case_pairs(rec, manifest.dataset_kind, cfg, pred_dir, meta_dir)?);
    }
    Ok(pairs)
}

/// Score a manifest against one prediction set.
pub fn evaluate_manifest(
    manifest: &Manifest,
    cfg: &RunConfig,
    pred_dir: Option<&Path>,
    meta_dir: Option<&Path>,
) -> Result<EvalReport, PipelineError> {
    let pairs = model_pairs(manifest, cfg, pred_dir, meta_dir)?;
    Ok(evaluate_set(&pairs, cfg.empty_policy)?)
}
