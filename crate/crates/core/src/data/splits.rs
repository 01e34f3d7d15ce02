//! Leave-one-subject-out split construction, single- and cross-dataset.

use super::WindowedDataset;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One train/val/test partition of a windowed dataset (window indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub test_subjects: Vec<usize>,
    pub val_subjects: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Identity of one fold in a sweep: which subject is held out and which of
/// the two validation variants is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub test_subject: usize,
    pub variant: usize,
}

/// The two LOSO splits for one held-out subject: validation is all data of
/// the first, respectively the second, non-test subject in ascending order;
/// train is everything else.
pub fn loso_splits(ds: &WindowedDataset, test_subject: usize) -> Result<Vec<Split>> {
    let k = ds.n_subjects();
    if k < 3 {
        return Err(Error::TooFewSubjects(k));
    }
    if test_subject >= k {
        return Err(Error::InvalidConfig(format!(
            "test subject {test_subject} out of range 0..{k}"
        )));
    }
    let non_test: Vec<usize> = (0..k).filter(|&s| s != test_subject).collect();
    let mut out = Vec::with_capacity(2);
    for variant in 0..2 {
        let val_subject = non_test[variant];
        let mut split = Split {
            test_subjects: vec![test_subject],
            val_subjects: vec![val_subject],
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for (i, &s) in ds.subject_labels.iter().enumerate() {
            if s == test_subject {
                split.test.push(i);
            } else if s == val_subject {
                split.val.push(i);
            } else {
                split.train.push(i);
            }
        }
        out.push(split);
    }
    Ok(out)
}

/// The full sweep: two folds per subject, ordered by subject then variant.
pub fn loso_fold_specs(ds: &WindowedDataset) -> Result<Vec<FoldSpec>> {
    let k = ds.n_subjects();
    if k < 3 {
        return Err(Error::TooFewSubjects(k));
    }
    let mut out = Vec::with_capacity(2 * k);
    for test_subject in 0..k {
        for variant in 0..2 {
            out.push(FoldSpec {
                test_subject,
                variant,
            });
        }
    }
    Ok(out)
}

/// Materialize one fold of the sweep.
pub fn split_for(ds: &WindowedDataset, fold: FoldSpec) -> Result<Split> {
    let mut splits = loso_splits(ds, fold.test_subject)?;
    Ok(splits.swap_remove(fold.variant))
}

/// Cross-dataset folds: one held-out subject per constituent dataset
/// simultaneously, with the same two validation-subject variants per fold.
/// Fold `i` holds out the `i`-th subject (mod the dataset's size) of each
/// dataset; the sweep length is the largest per-dataset subject count.
///
/// For a single-origin dataset this reduces exactly to the LOSO sweep.
pub fn cross_dataset_fold_specs(ds: &WindowedDataset) -> Result<Vec<FoldSpec>> {
    let groups = subjects_by_origin(ds)?;
    let max_k = groups.values().map(|v| v.len()).max().unwrap_or(0);
    if groups.values().any(|v| v.len() < 3) {
        return Err(Error::TooFewSubjects(
            groups.values().map(|v| v.len()).min().unwrap_or(0),
        ));
    }
    let mut out = Vec::with_capacity(2 * max_k);
    for i in 0..max_k {
        for variant in 0..2 {
            out.push(FoldSpec {
                test_subject: i,
                variant,
            });
        }
    }
    Ok(out)
}

/// Materialize one cross-dataset fold: `fold.test_subject` indexes into each
/// dataset's subject list.
pub fn cross_dataset_split(ds: &WindowedDataset, fold: FoldSpec) -> Result<Split> {
    let groups = subjects_by_origin(ds)?;
    let mut test_subjects = Vec::new();
    let mut val_subjects = Vec::new();
    for subjects in groups.values() {
        let test = subjects[fold.test_subject % subjects.len()];
        let non_test: Vec<usize> = subjects.iter().copied().filter(|&s| s != test).collect();
        if non_test.len() < 2 {
            return Err(Error::TooFewSubjects(subjects.len()));
        }
        test_subjects.push(test);
        val_subjects.push(non_test[fold.variant]);
    }
    let mut split = Split {
        test_subjects: test_subjects.clone(),
        val_subjects: val_subjects.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, &s) in ds.subject_labels.iter().enumerate() {
        if test_subjects.contains(&s) {
            split.test.push(i);
        } else if val_subjects.contains(&s) {
            split.val.push(i);
        } else {
            split.train.push(i);
        }
    }
    Ok(split)
}

/// Subjects grouped by origin dataset, in first-appearance dataset order;
/// datasets without origin metadata form a single group.
fn subjects_by_origin(ds: &WindowedDataset) -> Result<BTreeMap<String, Vec<usize>>> {
    let k = ds.n_subjects();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    match &ds.subject_origin {
        Some(origins) => {
            if origins.len() != k {
                return Err(Error::Dataset("subject origin table size mismatch".into()));
            }
            for (sid, (name, _)) in origins.iter().enumerate() {
                groups.entry(name.clone()).or_default().push(sid);
            }
        }
        None => {
            groups.insert("default".into(), (0..k).collect());
        }
    }
    for v in groups.values_mut() {
        v.sort_unstable();
    }
    Ok(groups)
}
