//! Re-open prepared outputs and check every module contract: grid
//! agreement, normalized intensity bounds, mask binarity and disjointness,
//! metadata consistency, and the run-record accounting.

use std::fs;
use std::path::Path;

use super::prep::{
    PrepMeta, CT_FILE, GTVN_FILE, GTVP_FILE, MASK_FILE, META_FILE, PET_FILE, PRIOR_FILE,
    RECORD_FILE,
};
use super::PipelineError;
use crate::nifti::read_nifti;
use crate::volume::Volume3D;

/// f32 storage cannot push a value in [-1, 1] outside it, but keep a hair
/// of slack for any future float path.
const INTENSITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub cases_checked: usize,
    pub violations: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_intensity(report: &mut VerifyReport, case: &str, name: &str, vol: &Volume3D) {
    let bad = vol
        .data()
        .iter()
        .filter(|v| !(-1.0 - INTENSITY_TOL..=1.0 + INTENSITY_TOL).contains(*v))
        .count();
    if bad > 0 {
        report
            .violations
            .push(format!("{case}/{name}: {bad} voxels outside [-1, 1]"));
    }
}

fn check_binary(report: &mut VerifyReport, case: &str, name: &str, vol: &Volume3D) {
    let bad = vol.data().iter().filter(|&&v| v != 0.0 && v != 1.0).count();
    if bad > 0 {
        report
            .violations
            .push(format!("{case}/{name}: {bad} non-binary voxels"));
    }
}

/// Check every case directory under `dir`. Returns the violation list
/// rather than failing fast so a whole run can be audited in one pass.
pub fn verify_prep_dir(dir: &Path) -> Result<VerifyReport, PipelineError> {
    let mut report = VerifyReport::default();
    let mut case_dirs: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    case_dirs.sort();

    for case_dir in &case_dirs {
        let case = case_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let ct_path = case_dir.join(CT_FILE);
        if !ct_path.is_file() {
            report
                .violations
                .push(format!("{case}: missing {CT_FILE}"));
            continue;
        }
        report.cases_checked += 1;
        let ct = match read_nifti(&ct_path) {
            Ok(v) => v,
            Err(e) => {
                report.violations.push(format!("{case}/{CT_FILE}: {e}"));
                continue;
            }
        };
        check_intensity(&mut report, &case, CT_FILE, &ct);

        fn load_on_grid(
            report: &mut VerifyReport,
            ct: &Volume3D,
            case_dir: &Path,
            case: &str,
            name: &str,
        ) -> Option<Volume3D> {
            let path = case_dir.join(name);
            if !path.is_file() {
                return None;
            }
            match read_nifti(&path) {
                Ok(v) => {
                    if let Err(e) = ct.same_grid(&v) {
                        report.violations.push(format!("{case}/{name}: {e}"));
                    }
                    Some(v)
                }
                Err(e) => {
                    report.violations.push(format!("{case}/{name}: {e}"));
                    None
                }
            }
        }

        match load_on_grid(&mut report, &ct, case_dir, &case, PET_FILE) {
            Some(pet) => check_intensity(&mut report, &case, PET_FILE, &pet),
            None => report
                .violations
                .push(format!("{case}: missing {PET_FILE}")),
        }
        let gtvp = load_on_grid(&mut report, &ct, case_dir, &case, GTVP_FILE);
        let gtvn = load_on_grid(&mut report, &ct, case_dir, &case, GTVN_FILE);
        let mask = load_on_grid(&mut report, &ct, case_dir, &case, MASK_FILE);
        let prior = load_on_grid(&mut report, &ct, case_dir, &case, PRIOR_FILE);
        for (name, vol) in [
            (GTVP_FILE, &gtvp),
            (GTVN_FILE, &gtvn),
            (MASK_FILE, &mask),
            (PRIOR_FILE, &prior),
        ] {
            if let Some(v) = vol {
                check_binary(&mut report, &case, name, v);
            }
        }
        if gtvp.is_none() && gtvn.is_none() && mask.is_none() {
            report
                .violations
                .push(format!("{case}: no mask file present"));
        }
        if let (Some(p), Some(n)) = (&gtvp, &gtvn) {
            let overlap = p
                .data()
                .iter()
                .zip(n.data())
                .filter(|(a, b)| **a == 1.0 && **b == 1.0)
                .count();
            if overlap > 0 {
                report.violations.push(format!(
                    "{case}: structure masks overlap on {overlap} voxels"
                ));
            }
        }
        let meta_path = case_dir.join(META_FILE);
        if meta_path.is_file() {
            match PrepMeta::read(&meta_path) {
                Ok(meta) => {
                    if meta.crop_target != ct.shape() {
                        report.violations.push(format!(
                            "{case}: metadata window {:?} disagrees with volume shape {:?}",
                            meta.crop_target,
                            ct.shape()
                        ));
                    }
                }
                Err(e) => report.violations.push(format!("{case}/{META_FILE}: {e}")),
            }
        }
    }

    // run-record accounting: prepared rows must match the directories seen
    let record_path = dir.join(RECORD_FILE);
    if record_path.is_file() {
        let text = fs::read_to_string(&record_path)?;
        let prepared_rows = text
            .lines()
            .skip(1)
            .filter(|l| l.split('\t').nth(1) == Some("prepared"))
            .count();
        if prepared_rows != report.cases_checked {
            report.violations.push(format!(
                "run record lists {prepared_rows} prepared cases but {} case directories were checked",
                report.cases_checked
            ));
        }
    }
    Ok(report)
}
