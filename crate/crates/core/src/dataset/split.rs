use std::path::PathBuf;

use rand::seq::SliceRandom;

use super::{DatasetError, DatasetManifest, Record, Result, Split};
use crate::rng::{self, tag};

/// Train/val/test proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Fractions {
    fn default() -> Self {
        Self {
            train: 0.64,
            val: 0.16,
            test: 0.20,
        }
    }
}

impl Fractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = Self { train, val, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(DatasetError::Fractions(format!("{all:?}: every fraction must be positive")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Fractions(format!("{all:?} does not sum to 1")));
        }
        Ok(())
    }

    /// Per-class counts: val and test rounded, the remainder to train.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let val = (n as f64 * self.val).round() as usize;
        let test = (n as f64 * self.test).round() as usize;
        let (val, test) = (val.min(n), test.min(n - val.min(n)));
        (n - val - test, val, test)
    }
}

impl std::str::FromStr for Fractions {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| DatasetError::Fractions(format!("`{s}`: {e}")))?;
        match parts[..] {
            [a, b, c] => Fractions::new(a, b, c),
            _ => Err(DatasetError::Fractions(format!("`{s}`: expected three values"))),
        }
    }
}

/// Stratified split. Within a class, records are ordered by id, shuffled
/// with a per-class stream, and cut into train, val, test.
pub fn split_manifest(
    records: &[Record],
    class_names: &[String],
    fractions: Fractions,
    seed: u64,
    root: PathBuf,
) -> Result<DatasetManifest> {
    fractions.validate()?;
    let mut assigned: Vec<Record> = records.to_vec();
    for (ci, class) in class_names.iter().enumerate() {
        let mut members: Vec<usize> = (0..assigned.len())
            .filter(|&i| &assigned[i].class_name == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            return Err(DatasetError::ClassTooSmall {
                class: class.clone(),
                count: members.len(),
                needed: 3,
            });
        }
        members.sort_by(|&a, &b| assigned[a].id.cmp(&assigned[b].id));
        members.shuffle(&mut rng::stream(seed, &[tag::SPLIT, ci as u64]));
        let (train, val, _) = fractions.counts(members.len());
        for (pos, &i) in members.iter().enumerate() {
            assigned[i].split = Some(if pos < train {
                Split::Train
            } else if pos < train + val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    DatasetManifest::new(assigned, class_names.to_vec(), root, true)
}
