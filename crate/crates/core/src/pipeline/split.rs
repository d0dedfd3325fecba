//! Seeded train/test manifest splitting, optionally stratified by
//! acquisition center.

use std::collections::BTreeMap;

use rand::Rng;

use super::manifest::{CaseRecord, Manifest};
use super::PipelineError;
use crate::rng::derive_rng;

fn shuffled(mut cases: Vec<CaseRecord>, seed: u64, salt: u64) -> Vec<CaseRecord> {
    let mut rng = derive_rng(seed, "split", salt);
    for i in (1..cases.len()).rev() {
        cases.swap(i, rng.random_range(0..=i));
    }
    cases
}

/// Split into (train, test) with `train_fraction` of cases in the train
/// half (rounded). With `by_center`, each center's cases are shuffled and
/// split separately so both halves see every center.
pub fn split_manifest(
    manifest: &Manifest,
    train_fraction: f64,
    seed: u64,
    by_center: bool,
) -> Result<(Manifest, Manifest), PipelineError> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(PipelineError::Config(format!(
            "train fraction {train_fraction} outside [0, 1]"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();

    if by_center {
        let mut groups: BTreeMap<String, Vec<CaseRecord>> = BTreeMap::new();
        for case in &manifest.cases {
            groups
                .entry(case.center_id.clone().unwrap_or_default())
                .or_default()
                .push(case.clone());
        }
        for (salt, (_, group)) in groups.into_iter().enumerate() {
            let group = shuffled(group, seed, salt as u64);
            let n_train = (group.len() as f64 * train_fraction).round() as usize;
            for (i, case) in group.into_iter().enumerate() {
                if i < n_train {
                    train.push(case);
                } else {
                    test.push(case);
                }
            }
        }
    } else {
        let cases = shuffled(manifest.cases.clone(), seed, 0);
        let n_train = (cases.len() as f64 * train_fraction).round() as usize;
        for (i, case) in cases.into_iter().enumerate() {
            if i < n_train {
                train.push(case);
            } else {
                test.push(case);
            }
        }
    }
    // stable output order regardless of shuffle internals
    train.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    test.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok((
        Manifest::new(manifest.dataset_kind, train)?,
        Manifest::new(manifest.dataset_kind, test)?,
    ))
}
