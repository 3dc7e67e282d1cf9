//! The two classifier heads and their training loop.
//!
//! * **Proposed**: the pretrained 1000-way classification layer is kept and
//!   a new ReLU-activated layer with one unit per target class is appended;
//!   both are fine-tuned.
//! * **Baseline**: the classification layer is replaced by a fresh layer
//!   with one unit per target class, fine-tuned together with the wide
//!   pretrained FC layer in front of it when the backbone has one.

mod train;

pub use train::{evaluate, train_head, TrainConfig, TrainResult};

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{names, Container, RawTensor, PRETRAINED_CLASSES};
use crate::error::{invalid, Error, Result};
use crate::layers::{
    affine_backward_params, affine_forward_into, gemm_nt, init_uniform, relu_backward_in_place,
    relu_in_place, softmax_cross_entropy_into, AffineParams, DenseMatrix, ReluMask, Rng,
};
use crate::optim::fused_sgd_step;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Proposed,
    Baseline,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Proposed => "proposed",
            Self::Baseline => "baseline",
        })
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" | "p" => Ok(Self::Proposed),
            "baseline" | "b" => Ok(Self::Baseline),
            other => Err(Error::Config(format!("unknown head kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum LayerInit {
    /// Loaded from `{tensor}.weight` / `{tensor}.bias` of a feature container.
    Pretrained { tensor: String },
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub init: LayerInit,
    pub relu_after: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub layers: Vec<LayerSpec>,
}

impl HeadSpec {
    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.fan_in)
    }

    pub fn validate(&self) -> Result<()> {
        let last = self.layers.last().ok_or_else(|| invalid("head has no layers"))?;
        for pair in self.layers.windows(2) {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(invalid(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].fan_out, pair[1].fan_in
                )));
            }
        }
        if last.fan_out == 0 {
            return Err(invalid("head needs at least one output class"));
        }
        match self.kind {
            HeadKind::Proposed => {
                let n = self.layers.len();
                if n < 2
                    || last.fan_in != PRETRAINED_CLASSES
                    || !last.relu_after
                    || !matches!(self.layers[n - 2].init, LayerInit::Pretrained { .. })
                {
                    return Err(invalid(
                        "proposed head must append a ReLU layer to a pretrained 1000-way classifier",
                    ));
                }
            }
            HeadKind::Baseline => {
                if last.init != LayerInit::Uniform || last.relu_after {
                    return Err(invalid("baseline head must end in a fresh linear layer"));
                }
            }
        }
        Ok(())
    }
}

/// A head: layer specification plus live parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    spec: HeadSpec,
    layers: Vec<AffineParams>,
}

/// Pretrained classification layer `[D × 1000]` → new `[1000 × C]` layer → ReLU.
pub fn build_proposed_head(pretrained_classifier: AffineParams, n_classes: usize, rng: &mut Rng) -> Result<Head> {
    if pretrained_classifier.fan_out() != PRETRAINED_CLASSES {
        return Err(invalid(format!(
            "pretrained classifier must have {PRETRAINED_CLASSES} outputs, has {}",
            pretrained_classifier.fan_out()
        )));
    }
    if n_classes == 0 {
        return Err(invalid("n_classes must be at least 1"));
    }
    let appended = init_uniform(PRETRAINED_CLASSES, n_classes, rng)?;
    let spec = HeadSpec {
        kind: HeadKind::Proposed,
        layers: vec![
            LayerSpec {
                fan_in: pretrained_classifier.fan_in(),
                fan_out: PRETRAINED_CLASSES,
                init: LayerInit::Pretrained {
                    tensor: names::FC_CLS.into(),
                },
                relu_after: false,
            },
            LayerSpec {
                fan_in: PRETRAINED_CLASSES,
                fan_out: n_classes,
                init: LayerInit::Uniform,
                relu_after: true,
            },
        ],
    };
    Head::new(spec, vec![pretrained_classifier, appended])
}

/// Wide pretrained FC (if the backbone has one) → ReLU → fresh `[· × C]` layer.
pub fn build_baseline_head(
    pretrained_penultimate: Option<AffineParams>,
    feature_dim: usize,
    n_classes: usize,
    rng: &mut Rng,
) -> Result<Head> {
    if n_classes == 0 {
        return Err(invalid("n_classes must be at least 1"));
    }
    let mut specs = Vec::new();
    let mut layers = Vec::new();
    let classifier_in = match pretrained_penultimate {
        Some(pen) => {
            if pen.fan_in() != feature_dim {
                return Err(invalid(format!(
                    "pretrained penultimate layer expects {} inputs, features have {feature_dim}",
                    pen.fan_in()
                )));
            }
            let width = pen.fan_out();
            specs.push(LayerSpec {
                fan_in: feature_dim,
                fan_out: width,
                init: LayerInit::Pretrained {
                    tensor: names::FC_PEN.into(),
                },
                relu_after: true,
            });
            layers.push(pen);
            width
        }
        None => {
            log::info!(
                "baseline head without a wide pretrained FC layer: only the replaced {feature_dim}->{n_classes} classifier is trained"
            );
            feature_dim
        }
    };
    specs.push(LayerSpec {
        fan_in: classifier_in,
        fan_out: n_classes,
        init: LayerInit::Uniform,
        relu_after: false,
    });
    layers.push(init_uniform(classifier_in, n_classes, rng)?);
    Head::new(
        HeadSpec {
            kind: HeadKind::Baseline,
            layers: specs,
        },
        layers,
    )
}

/// Scratch buffers for one forward/backward pass.
#[derive(Debug)]
pub(crate) struct Workspace {
    /// `acts[l]` is the input of layer `l`; the last entry holds the outputs.
    acts: Vec<DenseMatrix>,
    masks: Vec<Option<ReluMask>>,
    grad: DenseMatrix,
    grad_next: DenseMatrix,
}

impl Workspace {
    pub(crate) fn new() -> Self {
        Self {
            acts: Vec::new(),
            masks: Vec::new(),
            grad: DenseMatrix::zeros(0, 0),
            grad_next: DenseMatrix::zeros(0, 0),
        }
    }

    pub(crate) fn outputs(&self) -> &DenseMatrix {
        self.acts.last().expect("forward not run")
    }

    pub(crate) fn input_mut(&mut self) -> &mut DenseMatrix {
        if self.acts.is_empty() {
            self.acts.push(DenseMatrix::zeros(0, 0));
        }
        &mut self.acts[0]
    }
}

impl Head {
    pub fn new(spec: HeadSpec, layers: Vec<AffineParams>) -> Result<Self> {
        spec.validate()?;
        if spec.layers.len() != layers.len() {
            return Err(invalid("layer spec and parameter counts differ"));
        }
        for (s, p) in spec.layers.iter().zip(&layers) {
            if (s.fan_in, s.fan_out) != (p.fan_in(), p.fan_out()) {
                return Err(Error::Shape {
                    op: "head",
                    lhs: (s.fan_in, s.fan_out),
                    rhs: p.weights.shape(),
                });
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &HeadSpec {
        &self.spec
    }

    pub fn kind(&self) -> HeadKind {
        self.spec.kind
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn layers(&self) -> &[AffineParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [AffineParams] {
        &mut self.layers
    }

    /// Sum of weight and bias element counts over all trainable layers.
    pub fn count_params(&self) -> usize {
        self.layers.iter().map(AffineParams::param_count).sum()
    }

    /// Class scores for a batch: post-ReLU outputs for the proposed head,
    /// logits for the baseline.
    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut ws = Workspace::new();
        *ws.input_mut() = x.clone();
        self.forward_ws(&mut ws, 1)?;
        Ok(ws.acts.pop().unwrap())
    }

    pub(crate) fn forward_ws(&self, ws: &mut Workspace, threads: usize) -> Result<()> {
        let n = self.layers.len();
        ws.acts.resize_with(n + 1, || DenseMatrix::zeros(0, 0));
        ws.masks.resize_with(n, || None);
        for (l, (p, s)) in self.layers.iter().zip(&self.spec.layers).enumerate() {
            let (inputs, rest) = ws.acts.split_at_mut(l + 1);
            let out = &mut rest[0];
            affine_forward_into(&inputs[l], p, out, threads)?;
            ws.masks[l] = s.relu_after.then(|| relu_in_place(out));
        }
        Ok(())
    }

    /// Forward, softmax cross-entropy against `labels`, and backward; leaves
    /// parameter gradients in every layer. Returns the mean batch loss.
    pub(crate) fn loss_and_grad_ws(&mut self, ws: &mut Workspace, labels: &[usize], threads: usize) -> Result<f32> {
        self.forward_ws(ws, threads)?;
        let loss = softmax_cross_entropy_into(ws.acts.last().unwrap(), labels, &mut ws.grad)?;
        for l in (0..self.layers.len()).rev() {
            if let Some(mask) = &ws.masks[l] {
                relu_backward_in_place(&mut ws.grad, mask)?;
            }
            affine_backward_params(&ws.acts[l], &mut self.layers[l], &ws.grad, threads)?;
            if l > 0 {
                gemm_nt(&ws.grad, &self.layers[l].weights, &mut ws.grad_next, threads);
                std::mem::swap(&mut ws.grad, &mut ws.grad_next);
            }
        }
        Ok(loss)
    }

    /// One SGD step on a batch: forward, loss, and a backward pass that
    /// updates each layer as soon as the gradient flowing into it is known.
    /// Numerically identical to [`Self::loss_and_grad_ws`] followed by
    /// `sgd_step` on every layer.
    pub(crate) fn train_step_ws(
        &mut self,
        ws: &mut Workspace,
        labels: &[usize],
        lr: f64,
        momentum: f64,
        threads: usize,
    ) -> Result<f32> {
        self.forward_ws(ws, threads)?;
        let loss = softmax_cross_entropy_into(ws.acts.last().unwrap(), labels, &mut ws.grad)?;
        for l in (0..self.layers.len()).rev() {
            if let Some(mask) = &ws.masks[l] {
                relu_backward_in_place(&mut ws.grad, mask)?;
            }
            if l > 0 {
                gemm_nt(&ws.grad, &self.layers[l].weights, &mut ws.grad_next, threads);
            }
            fused_sgd_step(&ws.acts[l], &ws.grad, &mut self.layers[l], lr, momentum, threads)?;
            if l > 0 {
                std::mem::swap(&mut ws.grad, &mut ws.grad_next);
            }
        }
        Ok(loss)
    }

    /// Mean softmax cross-entropy of the head's scores on `x`, with
    /// gradients written into every layer.
    pub fn loss_and_grad(&mut self, x: &DenseMatrix, labels: &[usize]) -> Result<f32> {
        let mut ws = Workspace::new();
        *ws.input_mut() = x.clone();
        self.loss_and_grad_ws(&mut ws, labels, 1)
    }

    /// Fraction of output units that are zero for every row of the last
    /// forward pass (only meaningful when the last layer has a ReLU).
    pub(crate) fn dead_output_fraction(&self, ws: &Workspace) -> Option<f64> {
        ws.masks.last()?.as_ref().map(ReluMask::dead_column_fraction)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        for (l, p) in self.layers.iter().enumerate() {
            for t in RawTensor::from_affine(&format!("layer{l}"), p) {
                c.push(t);
            }
        }
        c
    }

    /// Writes parameters as an FTB1 container at `path` and the layer spec
    /// as JSON next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_container().write(path)?;
        std::fs::write(path.with_extension("json"), serde_json::to_vec_pretty(&self.spec)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let spec: HeadSpec = serde_json::from_slice(&std::fs::read(path.with_extension("json"))?)?;
        let c = Container::read(path)?;
        let layers = (0..spec.layers.len())
            .map(|l| {
                c.affine(&format!("layer{l}"))?
                    .ok_or_else(|| invalid(format!("head file lacks layer{l}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec, layers)
    }
}
