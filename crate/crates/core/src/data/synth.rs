//! Synthetic features standing in for exported CNN activations.

use serde::{Deserialize, Serialize};

use super::container::names;
use super::features::{ClassEntry, FeatureSet, FeatureStore, Manifest, SpeciesEntry};
use crate::error::{invalid, Result};
use crate::layers::{affine_forward, init_uniform, relu_forward, AffineParams, DenseMatrix, Rng};

/// `n_classes` isotropic unit-variance Gaussian clusters centred at
/// `separation · u_c`, with `u_c` seeded orthonormal directions.
/// Images are laid out class by class; one variant.
pub fn synth_features(n_classes: usize, per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<FeatureSet> {
    if n_classes == 0 || per_class == 0 || dim == 0 {
        return Err(invalid("synth_features: all counts must be at least 1"));
    }
    if dim < n_classes {
        return Err(invalid(format!(
            "synth_features: {n_classes} orthonormal centres need dim >= {n_classes}, got {dim}"
        )));
    }
    let rng = Rng::new(seed);
    let centres = orthonormal(n_classes, dim, &mut rng.derive(1));
    let mut noise = rng.derive(2);
    let mut data = Vec::with_capacity(n_classes * per_class * dim);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for (c, u) in centres.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(u.iter().map(|&x| (separation * x + noise.normal()) as f32));
            labels.push(c);
        }
    }
    FeatureSet::new(
        "synthetic",
        n_classes * per_class,
        1,
        dim,
        data,
        labels,
        (0..n_classes).map(|c| format!("class_{c}")).collect(),
    )
}

/// Gram–Schmidt on Gaussian draws.
fn orthonormal(k: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Vgg19,
    Resnet18,
}

impl Backbone {
    /// Width of the baseline input (fc6 output / pooled features).
    pub fn baseline_dim(self) -> usize {
        match self {
            Self::Vgg19 => 4096,
            Self::Resnet18 => 512,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Vgg19 => "VGG19",
            Self::Resnet18 => "ResNet18",
        }
    }
}

impl std::str::FromStr for Backbone {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vgg19" => Ok(Self::Vgg19),
            "resnet18" => Ok(Self::Resnet18),
            other => Err(crate::error::Error::Config(format!("unknown backbone {other:?}"))),
        }
    }
}

pub const PRETRAINED_CLASSES: usize = 1000;

/// Layout of a synthetic dataset shaped like an exporter's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub backbone: Backbone,
    pub species: Vec<String>,
    pub classes_per_species: usize,
    pub per_class: usize,
    /// Overrides the backbone's natural feature width.
    pub dim: Option<usize>,
    pub separation: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn paper_layout(backbone: Backbone, per_class: usize, separation: f64, seed: u64) -> Self {
        Self {
            backbone,
            species: ["Bird", "Fruit", "Flower", "Pepper"].map(String::from).to_vec(),
            classes_per_species: 5,
            per_class,
            dim: None,
            separation,
            seed,
        }
    }
}

/// Emulates an exporter run over a random "pretrained" network:
/// `baseline_in` are Gaussian clusters, `cls_in = relu(fc_pen(baseline_in))`
/// for VGG19 (identical to `baseline_in` for ResNet18), and
/// `logits = fc_cls(cls_in)`.
/// A fixed "pretrained" layer with weights `U(±gain·√(3/fan_in))`, i.e.
/// variance `gain²/fan_in`. Gain √2 before a ReLU and 1 otherwise keep
/// activations at the scale of the input features, as in a trained network;
/// the fresh-layer initialisation would shrink them threefold per layer.
fn stand_in_layer(fan_in: usize, fan_out: usize, gain: f64, rng: &mut Rng) -> Result<AffineParams> {
    let mut p = init_uniform(fan_in, fan_out, rng)?;
    let scale = (gain * 3f64.sqrt()) as f32;
    p.weights.as_mut_slice().iter_mut().for_each(|w| *w *= scale);
    p.bias.iter_mut().for_each(|b| *b *= scale);
    Ok(p)
}

pub fn synth_store(spec: &SynthSpec) -> Result<FeatureStore> {
    let n_classes = spec.species.len() * spec.classes_per_species;
    let dim = spec.dim.unwrap_or(spec.backbone.baseline_dim());
    let mut base = synth_features(n_classes, spec.per_class, dim, spec.separation, spec.seed)?;
    base.name = names::BASELINE_IN.into();
    let species: Vec<SpeciesEntry> = spec
        .species
        .iter()
        .map(|s| SpeciesEntry {
            name: s.clone(),
            classes: (0..spec.classes_per_species)
                .map(|i| ClassEntry {
                    name: format!("{}_{i}", s.to_lowercase()),
                    synset: None,
                })
                .collect(),
        })
        .collect();
    let manifest = Manifest {
        backbone: spec.backbone.name().to_lowercase(),
        image_ids: (0..base.n_images).map(|i| format!("synth_{i:06}")).collect(),
        species,
        extra: [("synthetic".to_string(), serde_json::json!(spec))].into_iter().collect(),
    };
    base.class_names = manifest.class_names();

    let root = Rng::new(spec.seed);
    let x = DenseMatrix::new(base.n_images, dim, base.data.clone())?;
    let mut layers: Vec<(&str, AffineParams)> = Vec::new();
    let cls_x = match spec.backbone {
        Backbone::Vgg19 => {
            let fc_pen = stand_in_layer(dim, dim, 2f64.sqrt(), &mut root.derive(10))?;
            let (h, _) = relu_forward(&affine_forward(&x, &fc_pen)?);
            layers.push((names::FC_PEN, fc_pen));
            h
        }
        Backbone::Resnet18 => x,
    };
    let fc_cls = stand_in_layer(cls_x.cols(), PRETRAINED_CLASSES, 1.0, &mut root.derive(11))?;
    let logits = affine_forward(&cls_x, &fc_cls)?;
    layers.push((names::FC_CLS, fc_cls));

    let labelled = |name: &str, m: DenseMatrix| FeatureSet {
        name: name.into(),
        n_images: base.n_images,
        n_variants: 1,
        dim: m.cols(),
        data: m.into_vec(),
        labels: base.labels.clone(),
        class_names: base.class_names.clone(),
    };
    let mut store = FeatureStore {
        container: Default::default(),
        manifest,
    };
    store.insert(&base)?;
    store.insert(&labelled(names::CLS_IN, cls_x))?;
    store.insert(&labelled(names::LOGITS, logits))?;
    for (prefix, p) in &layers {
        for t in super::container::RawTensor::from_affine(prefix, p) {
            store.container.push(t);
        }
    }
    Ok(store)
}
