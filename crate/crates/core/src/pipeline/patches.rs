//! Patch export: draw training windows from prepared cases and write each
//! as one NIfTI file per channel plus a label file, indexed by a manifest
//! recording the window origin and source case.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::RunConfig;
use super::manifest::DatasetKind;
use super::prep::{CT_FILE, GTVN_FILE, GTVP_FILE, MASK_FILE, PET_FILE, PRIOR_FILE};
use super::PipelineError;
use crate::nifti::{read_nifti, write_nifti, Datatype};
use crate::sampler::sample_patches;
use crate::volume::{stack_channels, Volume3D};

pub const PATCH_INDEX_FILE: &str = "patches_index.tsv";

/// Composite label volume of a prepared case: the whole-body mask as-is,
/// or the two structure masks recombined into one label map (1 = primary,
/// 2 = nodal) so patch labels keep structure identity.
fn case_label(case_dir: &Path, kind: DatasetKind) -> Result<Volume3D, PipelineError> {
    match kind {
        DatasetKind::Autopet => Ok(read_nifti(&case_dir.join(MASK_FILE))?),
        DatasetKind::Hecktor => {
            let gtvp = read_nifti(&case_dir.join(GTVP_FILE))?;
            let gtvn = read_nifti(&case_dir.join(GTVN_FILE))?;
            gtvp.same_grid(&gtvn)?;
            let mut label = gtvp.clone();
            for (l, &n) in label.data_mut().iter_mut().zip(gtvn.data()) {
                if n == 1.0 {
                    *l = 2.0;
                }
            }
            Ok(label)
        }
    }
}

/// Sample and write patches for every case directory under `prep_dir`.
/// Foreground-centering draws use any nonzero label voxel; the written
/// label patch keeps the full label map. Returns the number of patches.
pub fn export_patches(
    prep_dir: &Path,
    kind: DatasetKind,
    cfg: &RunConfig,
    epoch: u32,
    out_dir: &Path,
) -> Result<usize, PipelineError> {
    fs::create_dir_all(out_dir)?;
    let mut case_dirs: Vec<_> = fs::read_dir(prep_dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    case_dirs.sort();

    let mut index = String::from("case_id\tpatch\torigin_x\torigin_y\torigin_z\tchannels\tlabel_file\n");
    let mut total = 0usize;
    for case_dir in &case_dirs {
        let case_id = case_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let ct = read_nifti(&case_dir.join(CT_FILE))?;
        let pet = read_nifti(&case_dir.join(PET_FILE))?;
        let mut channels = vec![ct, pet];
        let mut names = vec!["CT".to_string(), "PET".to_string()];
        let prior_path = case_dir.join(PRIOR_FILE);
        if prior_path.is_file() {
            channels.push(read_nifti(&prior_path)?);
            names.push("PRIOR".to_string());
        }
        let mcv = stack_channels(channels, names)?;
        let label = case_label(case_dir, kind)?;

        let patches = sample_patches(&mcv, &label, &cfg.sampler, &case_id, epoch)?;
        for (k, patch) in patches.iter().enumerate() {
            let mut files = Vec::new();
            for (channel, name) in patch.data.channels().iter().zip(patch.data.names()) {
                let file = format!("{case_id}_p{k:03}_{}.nii.gz", name.to_lowercase());
                write_nifti(channel, &out_dir.join(&file), Datatype::Float32)?;
                files.push(file);
            }
            let label_file = format!("{case_id}_p{k:03}_label.nii.gz");
            write_nifti(&patch.label, &out_dir.join(&label_file), Datatype::Uint8)?;
            writeln!(
                index,
                "{case_id}\t{k}\t{}\t{}\t{}\t{}\t{label_file}",
                patch.origin.0,
                patch.origin.1,
                patch.origin.2,
                files.join(","),
            )
            .unwrap();
            total += 1;
        }
    }
    fs::write(out_dir.join(PATCH_INDEX_FILE), index)?;
    Ok(total)
}
