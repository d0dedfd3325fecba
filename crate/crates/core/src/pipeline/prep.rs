//! Dataset preparation: the head-and-neck path (resample, crop, intensity
//! normalize, mask split) and the whole-body path (intensity normalize,
//! optional crop, optional tumor-only filter), plus the two-step channel
//! assembly that reinserts a first-stage prediction as an extra input
//! channel. Every prepared case carries a metadata record sufficient to
//! reinsert predictions into the original grid exactly.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{PetRescale, RunConfig};
use super::manifest::{DatasetKind, Manifest};
use super::PipelineError;
use crate::geometry::{
    crop, resample, resample_onto, uncrop, CropSpec, Interp, ZAnchor, ZPolicy,
};
use crate::nifti::{read_nifti, write_nifti, Datatype};
use crate::volume::{
    binarize, clip_rescale_ct, rescale_fixed_window, rescale_pet, split_mask, stack_channels,
    Volume3D,
};

pub const PREP_META_VERSION: u32 = 1;
pub const CT_FILE: &str = "ct.nii.gz";
pub const PET_FILE: &str = "pet.nii.gz";
pub const MASK_FILE: &str = "mask.nii.gz";
pub const GTVP_FILE: &str = "gtvp.nii.gz";
pub const GTVN_FILE: &str = "gtvn.nii.gz";
pub const PRIOR_FILE: &str = "prior.nii.gz";
pub const META_FILE: &str = "prep.meta";
pub const RECORD_FILE: &str = "prep_record.tsv";
pub const PREPARED_MANIFEST_FILE: &str = "prepared_manifest.tsv";

/// CT pad value in raw Hounsfield units; maps to -1.0 after rescaling.
const CT_PAD_HU: f64 = -1024.0;

/// The minimal sufficient record for exact reinsertion: original grid,
/// resampled grid, and the applied crop window.
#[derive(Debug, Clone, PartialEq)]
pub struct PrepMeta {
    pub version: u32,
    pub case_id: String,
    pub original_shape: (usize, usize, usize),
    pub original_spacing: (f64, f64, f64),
    pub resampled_shape: (usize, usize, usize),
    pub resampled_spacing: (f64, f64, f64),
    pub crop_target: (usize, usize, usize),
    pub crop_offsets: (i64, i64, i64),
    pub z_policy: ZPolicy,
    pub z_anchor: ZAnchor,
}

impl PrepMeta {
    pub fn crop_spec(&self) -> CropSpec {
        CropSpec {
            target_shape: self.crop_target,
            policy_z: self.z_policy,
            z_anchor: self.z_anchor,
            recorded_offsets: Some(self.crop_offsets),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        let t3u = |t: (usize, usize, usize)| format!("{},{},{}", t.0, t.1, t.2);
        let t3f = |t: (f64, f64, f64)| format!("{},{},{}", t.0, t.1, t.2);
        let t3i = |t: (i64, i64, i64)| format!("{},{},{}", t.0, t.1, t.2);
        let text = format!(
            "prep_meta_version = {}\ncase_id = {}\noriginal_shape = {}\noriginal_spacing = {}\n\
             resampled_shape = {}\nresampled_spacing = {}\ncrop_target = {}\ncrop_offsets = {}\n\
             z_policy = {}\nz_anchor = {}\n",
            self.version,
            self.case_id,
            t3u(self.original_shape),
            t3f(self.original_spacing),
            t3u(self.resampled_shape),
            t3f(self.resampled_spacing),
            t3u(self.crop_target),
            t3i(self.crop_offsets),
            match self.z_policy {
                ZPolicy::Top => "top",
                ZPolicy::Center => "center",
            },
            self.z_anchor.as_str(),
        );
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)?;
        let mut fields = std::collections::HashMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                fields.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| PipelineError::Meta(format!("{}: missing {k}", path.display())))
        };
        let p3 = |s: String| -> Result<Vec<String>, PipelineError> {
            let v: Vec<String> = s.split(',').map(|x| x.trim().to_string()).collect();
            if v.len() != 3 {
                return Err(PipelineError::Meta(format!("bad triple {s:?}")));
            }
            Ok(v)
        };
        let t3u = |s: String| -> Result<(usize, usize, usize), PipelineError> {
            let v = p3(s)?;
            let f = |s: &String| {
                s.parse::<usize>()
                    .map_err(|_| PipelineError::Meta(format!("bad integer {s:?}")))
            };
            Ok((f(&v[0])?, f(&v[1])?, f(&v[2])?))
        };
        let t3f = |s: String| -> Result<(f64, f64, f64), PipelineError> {
            let v = p3(s)?;
            let f = |s: &String| {
                s.parse::<f64>()
                    .map_err(|_| PipelineError::Meta(format!("bad number {s:?}")))
            };
            Ok((f(&v[0])?, f(&v[1])?, f(&v[2])?))
        };
        let t3i = |s: String| -> Result<(i64, i64, i64), PipelineError> {
            let v = p3(s)?;
            let f = |s: &String| {
                s.parse::<i64>()
                    .map_err(|_| PipelineError::Meta(format!("bad integer {s:?}")))
            };
            Ok((f(&v[0])?, f(&v[1])?, f(&v[2])?))
        };
        let version = get("prep_meta_version")?
            .parse::<u32>()
            .map_err(|_| PipelineError::Meta("bad version".into()))?;
        if version != PREP_META_VERSION {
            return Err(PipelineError::Meta(format!(
                "unsupported prep meta version {version}"
            )));
        }
        Ok(Self {
            version,
            case_id: get("case_id")?,
            original_shape: t3u(get("original_shape")?)?,
            original_spacing: t3f(get("original_spacing")?)?,
            resampled_shape: t3u(get("resampled_shape")?)?,
            resampled_spacing: t3f(get("resampled_spacing")?)?,
            crop_target: t3u(get("crop_target")?)?,
            crop_offsets: t3i(get("crop_offsets")?)?,
            z_policy: match get("z_policy")?.as_str() {
                "top" => ZPolicy::Top,
                "center" => ZPolicy::Center,
                other => return Err(PipelineError::Meta(format!("bad z_policy {other:?}"))),
            },
            z_anchor: ZAnchor::parse(&get("z_anchor")?)
                .ok_or_else(|| PipelineError::Meta("bad z_anchor".into()))?,
        })
    }
}

/// Undo crop and resampling: place a prepared-space prediction back into
/// the case's original grid (nearest-neighbor when grids differ).
pub fn reinsert_to_original(
    pred: &Volume3D,
    meta: &PrepMeta,
    fill_value: f64,
) -> Result<Volume3D, PipelineError> {
    let full = uncrop(pred, &meta.crop_spec(), meta.resampled_shape, fill_value)?;
    if meta.resampled_shape == meta.original_shape
        && meta.resampled_spacing == meta.original_spacing
    {
        return Ok(full);
    }
    Ok(resample_onto(
        &full,
        meta.original_spacing,
        meta.original_shape,
        Interp::Nearest,
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseFailure {
    pub case_id: String,
    pub message: String,
}

/// Accounting of one prep run: every input case lands in exactly one list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrepOutcome {
    pub prepared: Vec<String>,
    pub excluded: Vec<String>,
    pub failed: Vec<CaseFailure>,
}

impl PrepOutcome {
    pub fn total(&self) -> usize {
        self.prepared.len() + self.excluded.len() + self.failed.len()
    }
}

enum CaseStatus {
    Prepared,
    Excluded(String),
    Failed(String),
}

fn write_record(out_dir: &Path, statuses: &[(String, CaseStatus)]) -> Result<(), PipelineError> {
    let mut text = String::from("case_id\tstatus\tdetail\n");
    for (id, status) in statuses {
        let (s, detail) = match status {
            CaseStatus::Prepared => ("prepared", String::new()),
            CaseStatus::Excluded(why) => ("excluded", why.clone()),
            CaseStatus::Failed(why) => ("failed", why.clone()),
        };
        text.push_str(&format!("{id}\t{s}\t{detail}\n"));
    }
    fs::write(out_dir.join(RECORD_FILE), text)?;
    Ok(())
}

fn outcome_from(
    statuses: Vec<(String, CaseStatus)>,
    manifest: &Manifest,
    out_dir: &Path,
) -> Result<PrepOutcome, PipelineError> {
    write_record(out_dir, &statuses)?;
    let mut outcome = PrepOutcome::default();
    for (id, status) in statuses {
        match status {
            CaseStatus::Prepared => outcome.prepared.push(id),
            CaseStatus::Excluded(_) => outcome.excluded.push(id),
            CaseStatus::Failed(why) => outcome.failed.push(CaseFailure {
                case_id: id,
                message: why,
            }),
        }
    }
    // manifest of the surviving cases, for downstream eval/stats runs
    let survivors: Vec<_> = manifest
        .cases
        .iter()
        .filter(|c| outcome.prepared.contains(&c.case_id))
        .cloned()
        .collect();
    if !survivors.is_empty() {
        let filtered = Manifest::new(manifest.dataset_kind, survivors)?;
        super::manifest::write_manifest(&filtered, &out_dir.join(PREPARED_MANIFEST_FILE))?;
    }
    Ok(outcome)
}

fn rescale_pet_cfg(pet: &Volume3D, cfg: &RunConfig) -> Result<Volume3D, PipelineError> {
    Ok(match cfg.prep.pet_rescale {
        PetRescale::MinMax => rescale_pet(pet)?,
        PetRescale::Fixed { lo, hi } => rescale_fixed_window(pet, lo, hi)?,
    })
}

fn pet_min(pet: &Volume3D) -> f64 {
    pet.data().iter().cloned().fold(f64::INFINITY, f64::min)
}

struct PreparedImages {
    ct: Volume3D,
    pet: Volume3D,
    mask: Volume3D,
    meta: PrepMeta,
}

/// Shared tail of both prep paths: crop (with per-modality pad values),
/// intensity-normalize, and record the window.
#[allow(clippy::too_many_arguments)]
fn crop_and_normalize(
    case_id: &str,
    ct: Volume3D,
    pet: Volume3D,
    mask: Volume3D,
    original_shape: (usize, usize, usize),
    original_spacing: (f64, f64, f64),
    target: Option<(usize, usize, usize)>,
    cfg: &RunConfig,
) -> Result<PreparedImages, PipelineError> {
    ct.same_grid(&pet)?;
    ct.same_grid(&mask)?;
    let resampled_shape = ct.shape();
    let resampled_spacing = ct.spacing();

    let spec_base = CropSpec {
        target_shape: target.unwrap_or(resampled_shape),
        policy_z: cfg.prep.z_policy,
        z_anchor: cfg.prep.z_anchor,
        recorded_offsets: None,
    };
    let (ct_c, spec) = crop(&ct, &spec_base, CT_PAD_HU);
    let (pet_c, _) = crop(&pet, &spec_base, pet_min(&pet));
    let (mask_c, _) = crop(&mask, &spec_base, 0.0);

    let ct_n = clip_rescale_ct(&ct_c)?;
    let pet_n = rescale_pet_cfg(&pet_c, cfg)?;

    let meta = PrepMeta {
        version: PREP_META_VERSION,
        case_id: case_id.to_string(),
        original_shape,
        original_spacing,
        resampled_shape,
        resampled_spacing,
        crop_target: spec.target_shape,
        crop_offsets: spec.recorded_offsets.expect("crop records offsets"),
        z_policy: cfg.prep.z_policy,
        z_anchor: cfg.prep.z_anchor,
    };
    Ok(PreparedImages {
        ct: ct_n,
        pet: pet_n,
        mask: mask_c,
        meta,
    })
}

fn write_case(
    case_dir: &Path,
    prepared: &PreparedImages,
    kind: DatasetKind,
    cfg: &RunConfig,
) -> Result<(), PipelineError> {
    fs::create_dir_all(case_dir)?;
    write_nifti(&prepared.ct, &case_dir.join(CT_FILE), Datatype::Float32)?;
    write_nifti(&prepared.pet, &case_dir.join(PET_FILE), Datatype::Float32)?;
    match kind {
        DatasetKind::Hecktor => {
            let pair = split_mask(&prepared.mask, cfg.prep.label_gtvp, cfg.prep.label_gtvn)?;
            write_nifti(&pair.gtvp, &case_dir.join(GTVP_FILE), Datatype::Uint8)?;
            write_nifti(&pair.gtvn, &case_dir.join(GTVN_FILE), Datatype::Uint8)?;
        }
        DatasetKind::Autopet => {
            let mask = prepared.mask.clone().mark_binary()?;
            write_nifti(&mask, &case_dir.join(MASK_FILE), Datatype::Uint8)?;
        }
    }
    prepared.meta.write(&case_dir.join(META_FILE))?;
    Ok(())
}

fn load_case_inputs(
    rec: &super::manifest::CaseRecord,
) -> Result<(Volume3D, Volume3D, Volume3D), PipelineError> {
    let mask_path = rec
        .mask_path
        .as_ref()
        .ok_or_else(|| PipelineError::MissingInput(format!("{}: no mask path", rec.case_id)))?;
    Ok((
        read_nifti(&rec.ct_path)?,
        read_nifti(&rec.pet_path)?,
        read_nifti(mask_path)?,
    ))
}

/// Head-and-neck preparation: resample CT/PET (trilinear) and mask
/// (nearest) to the configured common spacing, crop to the configured
/// window (centered x/y, policy-anchored z), normalize intensities, split
/// the label map into the two structure masks, and write everything with
/// the reinsertion metadata. Per-case failures are collected; the run
/// continues.
pub fn prep_hecktor(
    manifest: &Manifest,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<PrepOutcome, PipelineError> {
    if manifest.dataset_kind != DatasetKind::Hecktor {
        return Err(PipelineError::WrongDataset("prep-hecktor needs a hecktor manifest".into()));
    }
    fs::create_dir_all(out_dir)?;
    let statuses: Vec<(String, CaseStatus)> = manifest
        .cases
        .par_iter()
        .map(|rec| {
            let run = || -> Result<(), PipelineError> {
                let (ct, pet, mask) = load_case_inputs(rec)?;
                let original_shape = ct.shape();
                let original_spacing = ct.spacing();
                let sp = cfg.prep.common_spacing;
                let ct_r = resample(&ct, sp, Interp::Trilinear)?;
                let pet_r = resample(&pet, sp, Interp::Trilinear)?;
                let mask_r = resample(&mask, sp, Interp::Nearest)?;
                let prepared = crop_and_normalize(
                    &rec.case_id,
                    ct_r,
                    pet_r,
                    mask_r,
                    original_shape,
                    original_spacing,
                    Some(cfg.prep.hecktor_crop),
                    cfg,
                )?;
                write_case(&out_dir.join(&rec.case_id), &prepared, DatasetKind::Hecktor, cfg)
            };
            let status = match run() {
                Ok(()) => CaseStatus::Prepared,
                Err(e) => CaseStatus::Failed(e.to_string()),
            };
            (rec.case_id.clone(), status)
        })
        .collect();
    outcome_from(statuses, manifest, out_dir)
}

/// Whole-body preparation: the data arrives already resampled, so only the
/// intensity pipeline and the optional crop run. With `tumor_only`, cases
/// whose ground-truth mask is empty are excluded and listed in the run
/// record.
pub fn prep_autopet(
    manifest: &Manifest,
    cfg: &RunConfig,
    out_dir: &Path,
    tumor_only: bool,
) -> Result<PrepOutcome, PipelineError> {
    if manifest.dataset_kind != DatasetKind::Autopet {
        return Err(PipelineError::WrongDataset("prep-autopet needs an autopet manifest".into()));
    }
    fs::create_dir_all(out_dir)?;
    let statuses: Vec<(String, CaseStatus)> = manifest
        .cases
        .par_iter()
        .map(|rec| {
            let run = || -> Result<CaseStatus, PipelineError> {
                let (ct, pet, mask) = load_case_inputs(rec)?;
                if let Some(expected) = cfg.prep.autopet_expected_spacing {
                    let got = ct.spacing();
                    let close = |a: f64, b: f64| (a - b).abs() <= 1e-3 * b.abs().max(1.0);
                    if !(close(got.0, expected.0) && close(got.1, expected.1) && close(got.2, expected.2)) {
                        return Err(PipelineError::SpacingDisagreement {
                            case_id: rec.case_id.clone(),
                            got,
                            expected,
                        });
                    }
                }
                if tumor_only && mask.foreground_count() == 0 {
                    return Ok(CaseStatus::Excluded("empty ground-truth mask".into()));
                }
                let original_shape = ct.shape();
                let original_spacing = ct.spacing();
                let prepared = crop_and_normalize(
                    &rec.case_id,
                    ct,
                    pet,
                    mask,
                    original_shape,
                    original_spacing,
                    cfg.prep.autopet_crop,
                    cfg,
                )?;
                write_case(&out_dir.join(&rec.case_id), &prepared, DatasetKind::Autopet, cfg)?;
                Ok(CaseStatus::Prepared)
            };
            let status = match run() {
                Ok(s) => s,
                Err(e) => CaseStatus::Failed(e.to_string()),
            };
            (rec.case_id.clone(), status)
        })
        .collect();
    let outcome = outcome_from(statuses, manifest, out_dir)?;
    if outcome.prepared.is_empty() {
        return Err(PipelineError::EmptyAfterFilter);
    }
    Ok(outcome)
}

/// Extent compatibility guard for prior reinsertion: the physical spans
/// must agree to within one coarse voxel per axis.
fn extents_compatible(a: &Volume3D, b: &Volume3D) -> bool {
    let span = |n: usize, s: f64| n as f64 * s;
    let close = |x: f64, y: f64, tol: f64| (x - y).abs() <= tol;
    let (an, asp) = (a.shape(), a.spacing());
    let (bn, bsp) = (b.shape(), b.spacing());
    close(span(an.0, asp.0), span(bn.0, bsp.0), asp.0.max(bsp.0))
        && close(span(an.1, asp.1), span(bn.1, bsp.1), asp.1.max(bsp.1))
        && close(span(an.2, asp.2), span(bn.2, bsp.2), asp.2.max(bsp.2))
}

/// Bring a first-stage prediction onto a prepared case grid: undo its crop
/// when metadata is available, then nearest-resample onto the target grid
/// and binarize.
pub fn prior_to_grid(
    prior: &Volume3D,
    prior_meta: Option<&PrepMeta>,
    target: &Volume3D,
    threshold: f64,
) -> Result<Volume3D, PipelineError> {
    let full = match prior_meta {
        Some(meta) => reinsert_to_original(prior, meta, 0.0)?,
        None => prior.clone(),
    };
    let on_grid = if full.shape() == target.shape() && full.spacing() == target.spacing() {
        full
    } else {
        if !extents_compatible(&full, target) {
            return Err(PipelineError::GridMismatch {
                got_shape: full.shape(),
                got_spacing: full.spacing(),
                want_shape: target.shape(),
                want_spacing: target.spacing(),
            });
        }
        resample_onto(&full, target.spacing(), target.shape(), Interp::Nearest)?
    };
    Ok(binarize(&on_grid, threshold))
}

/// Build the three-channel directory for the second training step: each
/// case's prior prediction is reinserted onto its prepared grid and
/// written as a third channel beside copies of the prepared inputs.
pub fn assemble_two_step(
    manifest: &Manifest,
    cfg: &RunConfig,
    prep_dir: &Path,
    out_dir: &Path,
) -> Result<PrepOutcome, PipelineError> {
    fs::create_dir_all(out_dir)?;
    let statuses: Vec<(String, CaseStatus)> = manifest
        .cases
        .par_iter()
        .map(|rec| {
            let run = || -> Result<CaseStatus, PipelineError> {
                let case_prep = prep_dir.join(&rec.case_id);
                if !case_prep.is_dir() {
                    return Ok(CaseStatus::Excluded("not present in prep directory".into()));
                }
                let prior_path = rec.prior_path.as_ref().ok_or_else(|| {
                    PipelineError::MissingPrior(rec.case_id.clone())
                })?;
                let ct = read_nifti(&case_prep.join(CT_FILE))?;
                let pet = read_nifti(&case_prep.join(PET_FILE))?;
                let prior = read_nifti(prior_path)?;
                let meta_path = PathBuf::from(format!("{}.meta", prior_path.display()));
                let prior_meta = if meta_path.is_file() {
                    Some(PrepMeta::read(&meta_path)?)
                } else {
                    None
                };
                let prior_on_grid = prior_to_grid(
                    &prior,
                    prior_meta.as_ref(),
                    &ct,
                    cfg.prep.binarize_threshold,
                )?;
                // three-channel contract check before anything is written
                stack_channels(
                    vec![ct.clone(), pet.clone(), prior_on_grid.clone()],
                    vec!["CT".into(), "PET".into(), "PRIOR".into()],
                )?;

                let case_out = out_dir.join(&rec.case_id);
                fs::create_dir_all(&case_out)?;
                write_nifti(&ct, &case_out.join(CT_FILE), Datatype::Float32)?;
                write_nifti(&pet, &case_out.join(PET_FILE), Datatype::Float32)?;
                write_nifti(&prior_on_grid, &case_out.join(PRIOR_FILE), Datatype::Uint8)?;
                for mask_file in [MASK_FILE, GTVP_FILE, GTVN_FILE] {
                    let src = case_prep.join(mask_file);
                    if src.is_file() {
                        fs::copy(&src, case_out.join(mask_file))?;
                    }
                }
                let meta_src = case_prep.join(META_FILE);
                if meta_src.is_file() {
                    fs::copy(&meta_src, case_out.join(META_FILE))?;
                }
                Ok(CaseStatus::Prepared)
            };
            let status = match run() {
                Ok(s) => s,
                Err(e) => CaseStatus::Failed(e.to_string()),
            };
            (rec.case_id.clone(), status)
        })
        .collect();
    outcome_from(statuses, manifest, out_dir)
}
