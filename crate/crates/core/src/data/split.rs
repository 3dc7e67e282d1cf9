//! Per-class train / validation / test partition: `fJ` training images,
//! `fJ/2` validation images, and every remaining image for testing.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::layers::{stable_hash, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Training fraction `f`, in `(0, 2/3)`.
    pub f: f64,
    /// Nominal images per class `J`.
    pub j: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(f: f64, j: usize, seed: u64) -> Self {
        Self { f, j, seed }
    }

    /// `(fJ, fJ/2)`, both required to be whole numbers.
    pub fn counts(&self) -> Result<(usize, usize)> {
        if !(self.f > 0.0 && self.f < 2.0 / 3.0) {
            return Err(invalid(format!("training fraction {} outside (0, 2/3)", self.f)));
        }
        let train = self.f * self.j as f64;
        let val = train / 2.0;
        let whole = |x: f64| (x - x.round()).abs() < 1e-9;
        if !whole(train) || !whole(val) {
            return Err(invalid(format!(
                "f={} with J={} gives fractional counts ({train}, {val})",
                self.f, self.j
            )));
        }
        let (train, val) = (train.round() as usize, val.round() as usize);
        if val == 0 {
            return Err(invalid("split leaves no validation images"));
        }
        Ok((train, val))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub class: String,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub classes: Vec<ClassSplit>,
}

impl Split {
    pub fn train_ids(&self) -> Vec<usize> {
        self.classes.iter().flat_map(|c| c.train.iter().copied()).collect()
    }

    pub fn val_ids(&self) -> Vec<usize> {
        self.classes.iter().flat_map(|c| c.val.iter().copied()).collect()
    }

    pub fn test_ids(&self) -> Vec<usize> {
        self.classes.iter().flat_map(|c| c.test.iter().copied()).collect()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.class.clone()).collect()
    }
}

/// Splits each class's ids independently. The shuffle of a class depends
/// only on the seed and the class name.
pub fn make_splits(spec: &SplitSpec, classes: &[(String, Vec<usize>)]) -> Result<Split> {
    let (n_train, n_val) = spec.counts()?;
    let classes = classes
        .iter()
        .map(|(name, ids)| {
            if ids.len() < n_train + n_val {
                return Err(invalid(format!(
                    "class {name} has {} images, split needs at least {}",
                    ids.len(),
                    n_train + n_val
                )));
            }
            let mut ids = ids.clone();
            let mut rng = Rng::new(spec.seed ^ stable_hash(name.as_bytes()));
            ids.shuffle(&mut rng);
            let test = ids.split_off(n_train + n_val);
            let val = ids.split_off(n_train);
            Ok(ClassSplit {
                class: name.clone(),
                train: ids,
                val,
                test,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Split { classes })
}
