use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::{names, Container, RawTensor};
use crate::error::{invalid, Error, Result};
use crate::layers::{AffineParams, DenseMatrix};

/// Per-image feature vectors `[n_images × n_variants × dim]` with class labels.
///
/// Variant 0 is the evaluation view; further variants are augmented
/// training views.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub name: String,
    pub n_images: usize,
    pub n_variants: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl FeatureSet {
    pub fn new(
        name: impl Into<String>,
        n_images: usize,
        n_variants: usize,
        dim: usize,
        data: Vec<f32>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let fs = Self {
            name: name.into(),
            n_images,
            n_variants,
            dim,
            data,
            labels,
            class_names,
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_variants == 0 {
            return Err(invalid(format!("{}: at least one variant required", self.name)));
        }
        if self.data.len() != self.n_images * self.n_variants * self.dim {
            return Err(invalid(format!(
                "{}: {} values for {}x{}x{}",
                self.name,
                self.data.len(),
                self.n_images,
                self.n_variants,
                self.dim
            )));
        }
        if self.labels.len() != self.n_images {
            return Err(invalid(format!(
                "{}: {} labels for {} images",
                self.name,
                self.labels.len(),
                self.n_images
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.class_names.len()) {
            return Err(invalid(format!(
                "{}: label {l} but only {} classes",
                self.name,
                self.class_names.len()
            )));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    #[inline]
    pub fn sample(&self, image: usize, variant: usize) -> &[f32] {
        let start = (image * self.n_variants + variant) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Image indices of each class, in image order.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// The images `ids` (in that order), keeping all variants and classes.
    pub fn subset(&self, ids: &[usize]) -> Result<FeatureSet> {
        self.select(ids, None)
    }

    /// The images `ids`, relabelled onto `classes` (every selected image must
    /// belong to one of them). Keeps only variant 0 when `eval_view` is set.
    pub fn select_classes(&self, ids: &[usize], classes: &[String], eval_view: bool) -> Result<FeatureSet> {
        let mut remap = vec![usize::MAX; self.n_classes()];
        for (new, c) in classes.iter().enumerate() {
            let old = self
                .class_index(c)
                .ok_or_else(|| Error::MissingClasses(vec![c.clone()]))?;
            remap[old] = new;
        }
        let mut out = self.select(ids, if eval_view { Some(0) } else { None })?;
        for l in &mut out.labels {
            let m = remap[*l];
            if m == usize::MAX {
                return Err(invalid(format!("image of class {} not in selection", self.class_names[*l])));
            }
            *l = m;
        }
        out.class_names = classes.to_vec();
        Ok(out)
    }

    fn select(&self, ids: &[usize], only_variant: Option<usize>) -> Result<FeatureSet> {
        let v_out = if only_variant.is_some() { 1 } else { self.n_variants };
        let mut data = Vec::with_capacity(ids.len() * v_out * self.dim);
        let mut labels = Vec::with_capacity(ids.len());
        for &i in ids {
            if i >= self.n_images {
                return Err(invalid(format!("image index {i} out of range ({})", self.n_images)));
            }
            match only_variant {
                Some(v) => data.extend_from_slice(self.sample(i, v)),
                None => {
                    let row = self.n_variants * self.dim;
                    data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
                }
            }
            labels.push(self.labels[i]);
        }
        Ok(FeatureSet {
            name: self.name.clone(),
            n_images: ids.len(),
            n_variants: v_out,
            dim: self.dim,
            data,
            labels,
            class_names: self.class_names.clone(),
        })
    }

    /// Variant `variant` of images `ids` as a `[len × dim]` batch.
    pub(crate) fn gather_into(&self, ids: &[usize], variant: usize, out: &mut DenseMatrix) {
        out.resize(ids.len(), self.dim);
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.sample(i, variant));
        }
    }

    /// Variant `variant` of every image as an `[n_images × dim]` matrix.
    pub fn gather(&self, variant: usize) -> DenseMatrix {
        let ids: Vec<usize> = (0..self.n_images).collect();
        let mut out = DenseMatrix::zeros(0, self.dim);
        self.gather_into(&ids, variant, &mut out);
        out
    }

    pub fn to_raw(&self) -> Result<RawTensor> {
        let labels = self
            .labels
            .iter()
            .map(|&l| u16::try_from(l).map_err(|_| invalid(format!("label {l} exceeds u16"))))
            .collect::<Result<Vec<_>>>()?;
        let dim = |x: usize| u32::try_from(x).map_err(|_| invalid("dimension exceeds u32"));
        Ok(RawTensor {
            name: self.name.clone(),
            n: dim(self.n_images)?,
            v: dim(self.n_variants)?,
            d: dim(self.dim)?,
            labels: Some(labels),
            data: self.data.clone(),
        })
    }

    pub fn from_raw(t: &RawTensor, class_names: Vec<String>) -> Result<Self> {
        let labels = t
            .labels
            .as_ref()
            .ok_or_else(|| invalid(format!("tensor {} carries no labels", t.name)))?
            .iter()
            .map(|&l| l as usize)
            .collect();
        Self::new(
            t.name.clone(),
            t.n as usize,
            t.v as usize,
            t.d as usize,
            t.data.clone(),
            labels,
            class_names,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeciesEntry {
    pub name: String,
    pub classes: Vec<ClassEntry>,
}

/// JSON sidecar describing a feature container. Labels index the classes in
/// species order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub backbone: String,
    pub species: Vec<SpeciesEntry>,
    /// Image identifiers in payload order.
    #[serde(default)]
    pub image_ids: Vec<String>,
    /// Anything else the exporter recorded (normalization constants etc.).
    #[serde(default, flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn class_names(&self) -> Vec<String> {
        self.species
            .iter()
            .flat_map(|s| s.classes.iter().map(|c| c.name.clone()))
            .collect()
    }

    pub fn species(&self, name: &str) -> Option<&SpeciesEntry> {
        self.species.iter().find(|s| s.name.eq_ignore_ascii_case(name))
    }

    pub fn species_of(&self, class: &str) -> Option<&str> {
        self.species
            .iter()
            .find(|s| s.classes.iter().any(|c| c.name == class))
            .map(|s| s.name.as_str())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Sidecar manifest path of a container: `x.ftb` → `x.json`.
pub fn manifest_path(container: &Path) -> PathBuf {
    container.with_extension("json")
}

/// A container with its manifest: labelled feature tensors plus any
/// pretrained layer weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub container: Container,
    pub manifest: Manifest,
}

impl FeatureStore {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let container = Container::read(path)?;
        let manifest = Manifest::read(manifest_path(path))?;
        Ok(Self { container, manifest })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.container.write(path)?;
        self.manifest.write(manifest_path(path))
    }

    pub fn feature_set(&self, name: &str) -> Result<FeatureSet> {
        let t = self
            .container
            .get(name)
            .ok_or_else(|| invalid(format!("container has no tensor {name:?}")))?;
        FeatureSet::from_raw(t, self.manifest.class_names())
    }

    pub fn insert(&mut self, fs: &FeatureSet) -> Result<()> {
        self.container.push(fs.to_raw()?);
        Ok(())
    }

    pub fn pretrained_classifier(&self) -> Result<Option<AffineParams>> {
        self.container.affine(names::FC_CLS)
    }

    pub fn pretrained_penultimate(&self) -> Result<Option<AffineParams>> {
        self.container.affine(names::FC_PEN)
    }
}

/// Writes feature sets (and optional pretrained layers) to `path` plus its
/// manifest sidecar.
pub fn write_features(
    path: impl AsRef<Path>,
    sets: &[&FeatureSet],
    layers: &[(&str, &AffineParams)],
    manifest: &Manifest,
) -> Result<()> {
    let mut container = Container::default();
    for fs in sets {
        container.push(fs.to_raw()?);
    }
    for (prefix, p) in layers {
        for t in RawTensor::from_affine(prefix, p) {
            container.push(t);
        }
    }
    FeatureStore {
        container,
        manifest: manifest.clone(),
    }
    .save(path)
}
