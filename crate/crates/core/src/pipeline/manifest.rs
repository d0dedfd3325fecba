//! Case manifests: tab-separated tables with a header row, one case per
//! line. Paths are stored as written; relative paths resolve against the
//! process working directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::PipelineError;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
const COLUMNS: [&str; 9] = [
    "dataset",
    "case_id",
    "ct",
    "pet",
    "mask",
    "prediction",
    "prior",
    "center",
    "has_tumor",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Hecktor,
    Autopet,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hecktor" => Some(DatasetKind::Hecktor),
            "autopet" => Some(DatasetKind::Autopet),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Hecktor => "hecktor",
            DatasetKind::Autopet => "autopet",
        }
    }
}

/// One patient case: image paths plus optional annotation and bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    pub ct_path: PathBuf,
    pub pet_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    pub prediction_path: Option<PathBuf>,
    pub prior_path: Option<PathBuf>,
    pub center_id: Option<String>,
    pub has_tumor: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dataset_kind: DatasetKind,
    pub cases: Vec<CaseRecord>,
    pub schema_version: u32,
}

impl Manifest {
    pub fn new(dataset_kind: DatasetKind, cases: Vec<CaseRecord>) -> Result<Self, PipelineError> {
        let mut seen = HashSet::new();
        for c in &cases {
            if !seen.insert(c.case_id.clone()) {
                return Err(PipelineError::DuplicateCase(c.case_id.clone()));
            }
        }
        Ok(Self {
            dataset_kind,
            cases,
            schema_version: MANIFEST_SCHEMA_VERSION,
        })
    }

    pub fn case(&self, id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.case_id == id)
    }
}

fn opt(field: &str) -> Option<String> {
    if field.is_empty() {
        None
    } else {
        Some(field.to_string())
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest, PipelineError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| PipelineError::ManifestParse(format!("{}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| PipelineError::ManifestParse(e.to_string()))?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != COLUMNS {
        return Err(PipelineError::ManifestParse(format!(
            "unexpected manifest columns {got:?}, expected {COLUMNS:?}"
        )));
    }

    let mut kind: Option<DatasetKind> = None;
    let mut cases = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| PipelineError::ManifestParse(e.to_string()))?;
        if record.len() != COLUMNS.len() {
            return Err(PipelineError::ManifestParse(format!(
                "row {} has {} fields, expected {}",
                line + 2,
                record.len(),
                COLUMNS.len()
            )));
        }
        let row_kind = DatasetKind::parse(&record[0]).ok_or_else(|| {
            PipelineError::ManifestParse(format!("unknown dataset kind {:?}", &record[0]))
        })?;
        match kind {
            None => kind = Some(row_kind),
            Some(k) if k == row_kind => {}
            Some(k) => {
                return Err(PipelineError::ManifestParse(format!(
                    "mixed dataset kinds: {} and {}",
                    k.as_str(),
                    row_kind.as_str()
                )))
            }
        }
        let has_tumor = match &record[8] {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => {
                return Err(PipelineError::ManifestParse(format!(
                    "has_tumor must be empty, 0 or 1; got {other:?}"
                )))
            }
        };
        if record[1].is_empty() || record[2].is_empty() || record[3].is_empty() {
            return Err(PipelineError::ManifestParse(format!(
                "row {}: case_id, ct and pet are required",
                line + 2
            )));
        }
        cases.push(CaseRecord {
            case_id: record[1].to_string(),
            ct_path: PathBuf::from(&record[2]),
            pet_path: PathBuf::from(&record[3]),
            mask_path: opt(&record[4]).map(PathBuf::from),
            prediction_path: opt(&record[5]).map(PathBuf::from),
            prior_path: opt(&record[6]).map(PathBuf::from),
            center_id: opt(&record[7]),
            has_tumor,
        });
    }
    let kind = kind.ok_or_else(|| PipelineError::ManifestParse("manifest has no cases".into()))?;
    Manifest::new(kind, cases)
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), PipelineError> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| PipelineError::ManifestParse(e.to_string()))?;
    writer
        .write_record(COLUMNS)
        .map_err(|e| PipelineError::ManifestParse(e.to_string()))?;
    let s = |p: &Option<PathBuf>| {
        p.as_ref()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    for c in &manifest.cases {
        writer
            .write_record([
                manifest.dataset_kind.as_str().to_string(),
                c.case_id.clone(),
                c.ct_path.to_string_lossy().into_owned(),
                c.pet_path.to_string_lossy().into_owned(),
                s(&c.mask_path),
                s(&c.prediction_path),
                s(&c.prior_path),
                c.center_id.clone().unwrap_or_default(),
                match c.has_tumor {
                    None => String::new(),
                    Some(false) => "0".into(),
                    Some(true) => "1".into(),
                },
            ])
            .map_err(|e| PipelineError::ManifestParse(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| PipelineError::ManifestParse(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn sample() -> Manifest {
        Manifest::new(
            DatasetKind::Autopet,
            vec![
                CaseRecord {
                    case_id: "c001".into(),
                    ct_path: "data/c001/ct.nii.gz".into(),
                    pet_path: "data/c001/pet.nii.gz".into(),
                    mask_path: Some("data/c001/mask.nii.gz".into()),
                    prediction_path: None,
                    prior_path: None,
                    center_id: Some("A".into()),
                    has_tumor: Some(true),
                },
                CaseRecord {
                    case_id: "c002".into(),
                    ct_path: "data/c002/ct.nii.gz".into(),
                    pet_path: "data/c002/pet.nii.gz".into(),
                    mask_path: None,
                    prediction_path: Some("preds/c002.nii.gz".into()),
                    prior_path: None,
                    center_id: None,
                    has_tumor: Some(false),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn manifest_round_trips_through_tsv() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("manifest.tsv");
        let m = sample();
        write_manifest(&m, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn duplicate_case_ids_rejected() {
        let c = CaseRecord {
            case_id: "same".into(),
            ct_path: "a".into(),
            pet_path: "b".into(),
            mask_path: None,
            prediction_path: None,
            prior_path: None,
            center_id: None,
            has_tumor: None,
        };
        assert!(matches!(
            Manifest::new(DatasetKind::Hecktor, vec![c.clone(), c]),
            Err(PipelineError::DuplicateCase(_))
        ));
    }

    #[test]
    fn bad_headers_and_kinds_rejected() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "name\tct\nx\ty\n").unwrap();
        assert!(matches!(
            read_manifest(&path),
            Err(PipelineError::ManifestParse(_))
        ));
        std::fs::write(
            &path,
            "dataset\tcase_id\tct\tpet\tmask\tprediction\tprior\tcenter\thas_tumor\n\
             mars\tc1\ta\tb\t\t\t\t\t\n",
        )
        .unwrap();
        assert!(matches!(
            read_manifest(&path),
            Err(PipelineError::ManifestParse(_))
        ));
    }

    #[test]
    fn comments_are_skipped() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.tsv");
        std::fs::write(
            &path,
            "dataset\tcase_id\tct\tpet\tmask\tprediction\tprior\tcenter\thas_tumor\n\
             # a comment line\n\
             hecktor\tc1\tct.nii\tpet.nii\tmask.nii\t\t\tCHUM\t1\n",
        )
        .unwrap();
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.dataset_kind, DatasetKind::Hecktor);
        assert_eq!(m.cases.len(), 1);
        assert_eq!(m.cases[0].center_id.as_deref(), Some("CHUM"));
    }
}
