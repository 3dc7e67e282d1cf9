//! Which classes take part in an experiment: a single species (A-type) or
//! a fixed number of classes from every species (B-type).

use std::fmt;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::features::Manifest;
use crate::error::{Error, Result};
use crate::layers::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExperimentKind {
    /// The first `n` classes of one species, `n ∈ {3, 4, 5}`.
    AType { species: String, n: usize },
    /// `per_species` seeded classes from every species (3 for the 12-class mix).
    BType {
        #[serde(default = "default_per_species")]
        per_species: usize,
    },
}

fn default_per_species() -> usize {
    3
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AType { species, .. } => f.write_str(species),
            Self::BType { .. } => f.write_str("Mixed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentClasses {
    pub kind: ExperimentKind,
    pub classes: Vec<String>,
}

pub fn compose_experiment(kind: &ExperimentKind, manifest: &Manifest, seed: u64) -> Result<ExperimentClasses> {
    let classes = match kind {
        ExperimentKind::AType { species, n } => {
            if !(3..=5).contains(n) {
                return Err(Error::Config(format!("A-type class count must be 3, 4 or 5, got {n}")));
            }
            let sp = manifest
                .species(species)
                .ok_or_else(|| Error::Config(format!("unknown species {species:?}")))?;
            if sp.classes.len() < *n {
                return Err(Error::Config(format!(
                    "species {} has only {} classes",
                    sp.name,
                    sp.classes.len()
                )));
            }
            sp.classes[..*n].iter().map(|c| c.name.clone()).collect()
        }
        ExperimentKind::BType { per_species } => {
            if *per_species == 0 {
                return Err(Error::Config("B-type needs at least one class per species".into()));
            }
            let mut rng = Rng::new(seed);
            let mut out = Vec::new();
            for sp in &manifest.species {
                if sp.classes.len() < *per_species {
                    return Err(Error::Config(format!(
                        "species {} has only {} classes, need {per_species}",
                        sp.name,
                        sp.classes.len()
                    )));
                }
                let mut picked = sample(&mut rng, sp.classes.len(), *per_species).into_vec();
                picked.sort_unstable();
                out.extend(picked.into_iter().map(|i| sp.classes[i].name.clone()));
            }
            out
        }
    };
    Ok(ExperimentClasses {
        kind: kind.clone(),
        classes,
    })
}
