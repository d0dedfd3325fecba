//! Deterministic synthetic phantoms: CT-like volumes with an ellipsoidal
//! body at plausible Hounsfield values, PET-like volumes with bright
//! ellipsoidal lesions, and ground-truth label maps matching the lesions.
//! Fixtures for tests and pipeline dry-runs, not anatomy.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::manifest::{CaseRecord, DatasetKind, Manifest};
use super::PipelineError;
use crate::nifti::{write_nifti, Datatype};
use crate::rng::derive_rng;
use crate::volume::Volume3D;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub shape: (usize, usize, usize),
    pub spacing: (f64, f64, f64),
    /// Fraction of whole-body cases generated without any lesion.
    pub negative_fraction: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            shape: (48, 48, 64),
            spacing: (2.0, 2.0, 2.0),
            negative_fraction: 0.0,
        }
    }
}

/// Axis-aligned ellipsoid in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: (f64, f64, f64),
    pub radii: (f64, f64, f64),
    pub label: u32,
}

impl Ellipsoid {
    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let dx = (x as f64 - self.center.0) / self.radii.0;
        let dy = (y as f64 - self.center.1) / self.radii.1;
        let dz = (z as f64 - self.center.2) / self.radii.2;
        dx * dx + dy * dy + dz * dz <= 1.0
    }

    /// Voxel count by direct membership scan.
    pub fn voxel_count(&self, shape: (usize, usize, usize)) -> usize {
        let mut n = 0;
        for z in 0..shape.2 {
            for y in 0..shape.1 {
                for x in 0..shape.0 {
                    if self.contains(x, y, z) {
                        n += 1;
                    }
                }
            }
        }
        n
    }
}

/// Generation record of one phantom case, returned so tests can check the
/// written masks against the analytic geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub case_id: String,
    pub lesions: Vec<Ellipsoid>,
    pub has_tumor: bool,
}

fn body_ellipsoid(shape: (usize, usize, usize)) -> Ellipsoid {
    Ellipsoid {
        center: (
            (shape.0 - 1) as f64 / 2.0,
            (shape.1 - 1) as f64 / 2.0,
            (shape.2 - 1) as f64 / 2.0,
        ),
        radii: (
            shape.0 as f64 * 0.42,
            shape.1 as f64 * 0.42,
            shape.2 as f64 * 0.47,
        ),
        label: 0,
    }
}

fn draw_lesion(
    rng: &mut rand_chacha::ChaCha8Rng,
    shape: (usize, usize, usize),
    label: u32,
) -> Ellipsoid {
    let body = body_ellipsoid(shape);
    // keep the lesion center well inside the body so it never clips
    let span = |c: f64, r: f64| (c - 0.5 * r, c + 0.5 * r);
    let (x0, x1) = span(body.center.0, body.radii.0);
    let (y0, y1) = span(body.center.1, body.radii.1);
    let (z0, z1) = span(body.center.2, body.radii.2);
    let min_dim = shape.0.min(shape.1).min(shape.2) as f64;
    let r_lo = (min_dim * 0.06).max(2.0);
    let r_hi = (min_dim * 0.12).max(3.0);
    Ellipsoid {
        center: (
            rng.random_range(x0..x1),
            rng.random_range(y0..y1),
            rng.random_range(z0..z1),
        ),
        radii: (
            rng.random_range(r_lo..r_hi),
            rng.random_range(r_lo..r_hi),
            rng.random_range(r_lo..r_hi),
        ),
        label,
    }
}

fn build_volumes(
    shape: (usize, usize, usize),
    spacing: (f64, f64, f64),
    lesions: &[Ellipsoid],
) -> (Volume3D, Volume3D, Volume3D) {
    let body = body_ellipsoid(shape);
    let mut ct = Volume3D::filled(shape, spacing, -1000.0);
    let mut pet = Volume3D::filled(shape, spacing, 0.1);
    let mut mask = Volume3D::zeros(shape, spacing);
    let denom = (shape.0 + shape.1 + shape.2) as f64;
    for z in 0..shape.2 {
        for y in 0..shape.1 {
            for x in 0..shape.0 {
                if body.contains(x, y, z) {
                    ct.set(x, y, z, 40.0);
                    // smooth uptake gradient keeps the volume non-constant
                    pet.set(x, y, z, 1.0 + 0.4 * (x + y + z) as f64 / denom);
                }
                for lesion in lesions {
                    if lesion.contains(x, y, z) {
                        ct.set(x, y, z, 55.0);
                        pet.set(x, y, z, 8.0);
                        mask.set(x, y, z, f64::from(lesion.label));
                    }
                }
            }
        }
    }
    (ct, pet, mask)
}

/// Generate `n_cases` phantom cases under `out_dir` (one directory per
/// case holding ct/pet/mask), write `manifest.tsv` and a lesion-geometry
/// record, and return the manifest plus the analytic case descriptions.
/// Byte-identical across runs with the same arguments.
pub fn synth_phantom(
    out_dir: &Path,
    kind: DatasetKind,
    n_cases: usize,
    cfg: &PhantomConfig,
    seed: u64,
) -> Result<(Manifest, Vec<PhantomCase>), PipelineError> {
    if n_cases == 0 {
        return Err(PipelineError::Config("n_cases must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.negative_fraction) {
        return Err(PipelineError::Config(
            "negative_fraction outside [0, 1]".into(),
        ));
    }
    fs::create_dir_all(out_dir)?;

    // exact negative count via a seeded index shuffle
    let n_negative = if kind == DatasetKind::Autopet {
        (n_cases as f64 * cfg.negative_fraction).round() as usize
    } else {
        0
    };
    let mut order: Vec<usize> = (0..n_cases).collect();
    let mut rng = derive_rng(seed, "phantom-negatives", 0);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let negatives: std::collections::HashSet<usize> =
        order.into_iter().take(n_negative).collect();

    let mut cases = Vec::with_capacity(n_cases);
    let mut records = Vec::with_capacity(n_cases);
    let mut relative_records = Vec::with_capacity(n_cases);
    let mut geometry_log = String::from("case_id\tlabel\tcx\tcy\tcz\trx\try\trz\n");

    for idx in 0..n_cases {
        let case_id = format!("phantom-{idx:03}");
        let mut rng = derive_rng(seed, "phantom", idx as u64);
        let negative = negatives.contains(&idx);
        let lesions: Vec<Ellipsoid> = if negative {
            Vec::new()
        } else {
            match kind {
                DatasetKind::Autopet => vec![draw_lesion(&mut rng, cfg.shape, 1)],
                DatasetKind::Hecktor => {
                    let mut v = vec![draw_lesion(&mut rng, cfg.shape, 1)];
                    // every third case has no nodal structure (blank mask)
                    if idx % 3 != 1 {
                        v.push(draw_lesion(&mut rng, cfg.shape, 2));
                    }
                    v
                }
            }
        };

        let (ct, pet, mask) = build_volumes(cfg.shape, cfg.spacing, &lesions);
        let case_dir = out_dir.join(&case_id);
        fs::create_dir_all(&case_dir)?;
        let ct_path = case_dir.join("ct.nii.gz");
        let pet_path = case_dir.join("pet.nii.gz");
        let mask_path = case_dir.join("mask.nii.gz");
        write_nifti(&ct, &ct_path, Datatype::Float32)?;
        write_nifti(&pet, &pet_path, Datatype::Float32)?;
        write_nifti(&mask, &mask_path, Datatype::Uint8)?;

        for lesion in &lesions {
            geometry_log.push_str(&format!(
                "{case_id}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                lesion.label,
                lesion.center.0,
                lesion.center.1,
                lesion.center.2,
                lesion.radii.0,
                lesion.radii.1,
                lesion.radii.2,
            ));
        }

        records.push(CaseRecord {
            case_id: case_id.clone(),
            ct_path,
            pet_path,
            mask_path: Some(mask_path),
            prediction_path: None,
            prior_path: None,
            center_id: None,
            has_tumor: Some(!negative),
        });
        // the on-disk manifest stays relative so the tree is relocatable
        // and byte-identical across runs
        relative_records.push(CaseRecord {
            case_id: case_id.clone(),
            ct_path: PathBuf::from(&case_id).join("ct.nii.gz"),
            pet_path: PathBuf::from(&case_id).join("pet.nii.gz"),
            mask_path: Some(PathBuf::from(&case_id).join("mask.nii.gz")),
            prediction_path: None,
            prior_path: None,
            center_id: None,
            has_tumor: Some(!negative),
        });
        cases.push(PhantomCase {
            case_id,
            lesions,
            has_tumor: !negative,
        });
    }

    let manifest = Manifest::new(kind, records)?;
    let relative = Manifest::new(kind, relative_records)?;
    super::manifest::write_manifest(&relative, &out_dir.join("manifest.tsv"))?;
    let mut log = fs::File::create(out_dir.join("phantom_geometry.tsv"))?;
    log.write_all(geometry_log.as_bytes())?;
    Ok((manifest, cases))
}
