//! Independent 64-bit reference implementations used as oracles by the
//! integration and acceptance tests.

#![allow(dead_code)]

use tlhead_core::heads::HeadKind;
use tlhead_core::layers::{
    affine_backward, init_uniform, relu_backward, relu_forward, softmax_cross_entropy,
};
use tlhead_core::{build_baseline_head, build_proposed_head, AffineParams, DenseMatrix, Head, Rng};

pub const H: f64 = 1e-3;

/// Pre-activations closer than this to zero are resampled so a central
/// difference never straddles a ReLU kink.
const KINK_MARGIN: f64 = 1e-2;

#[derive(Clone)]
pub struct Layer64 {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub relu: bool,
}

impl Layer64 {
    pub fn from_params(p: &AffineParams, relu: bool) -> Self {
        Self {
            w: p.weights.as_slice().iter().map(|&v| v as f64).collect(),
            b: p.bias.iter().map(|&v| v as f64).collect(),
            fan_in: p.fan_in(),
            fan_out: p.fan_out(),
            relu,
        }
    }

    /// Pre-activations for `x: [rows × fan_in]`.
    pub fn pre(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * self.fan_out];
        for i in 0..rows {
            for j in 0..self.fan_out {
                let mut s = self.b[j];
                for k in 0..self.fan_in {
                    s += x[i * self.fan_in + k] * self.w[k * self.fan_out + j];
                }
                out[i * self.fan_out + j] = s;
            }
        }
        out
    }
}

pub fn to64(m: &DenseMatrix) -> Vec<f64> {
    m.as_slice().iter().map(|&v| v as f64).collect()
}

/// Mean softmax cross-entropy, log-sum-exp stabilised.
pub fn ce64(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

/// Loss of a stack of layers on `x`, plus the smallest |pre-activation| seen
/// at any ReLU.
pub fn stack_loss(layers: &[Layer64], x: &[f64], rows: usize, labels: &[usize]) -> (f64, f64) {
    let mut h = x.to_vec();
    let mut margin = f64::INFINITY;
    for l in layers {
        h = l.pre(&h, rows);
        if l.relu {
            for v in &mut h {
                margin = margin.min(v.abs());
                *v = v.max(0.0);
            }
        }
    }
    (ce64(&h, layers.last().unwrap().fan_out, labels), margin)
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn central<F: FnMut(f64) -> f64>(x0: f64, mut f: F) -> f64 {
    (f(x0 + H) - f(x0 - H)) / (2.0 * H)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
    DenseMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal() as f32).collect()).unwrap()
}

fn random_labels(rows: usize, classes: usize, rng: &mut Rng) -> Vec<usize> {
    (0..rows).map(|_| (rng.unit() * classes as f64) as usize % classes).collect()
}

fn dims(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + (rng.unit() * (hi - lo + 1) as f64) as usize % (hi - lo + 1)
}

/// Affine layer under the linear probe `L = Σ out ⊙ R`, so `dOut = R`.
/// Returns the worst relative error over dW, db and dX.
pub fn check_affine(rng: &mut Rng) -> f64 {
    let (rows, fan_in, fan_out) = (dims(rng, 1, 6), dims(rng, 1, 9), dims(rng, 1, 7));
    let x = random_matrix(rows, fan_in, rng);
    let r = random_matrix(rows, fan_out, rng);
    let mut p = init_uniform(fan_in, fan_out, rng).unwrap();
    let dx = affine_backward(&x, &mut p, &r).unwrap();

    let base = Layer64::from_params(&p, false);
    let (x64, r64) = (to64(&x), to64(&r));
    let probe = |l: &Layer64, x: &[f64]| l.pre(x, rows).iter().zip(&r64).map(|(o, r)| o * r).sum::<f64>();

    let mut num_w = Vec::new();
    for k in 0..base.w.len() {
        num_w.push(central(base.w[k], |v| {
            let mut l = base.clone();
            l.w[k] = v;
            probe(&l, &x64)
        }));
    }
    let mut num_b = Vec::new();
    for j in 0..base.b.len() {
        num_b.push(central(base.b[j], |v| {
            let mut l = base.clone();
            l.b[j] = v;
            probe(&l, &x64)
        }));
    }
    let mut num_x = Vec::new();
    for k in 0..x64.len() {
        num_x.push(central(x64[k], |v| {
            let mut xs = x64.clone();
            xs[k] = v;
            probe(&base, &xs)
        }));
    }
    let gw: Vec<f64> = p.grad_weights.as_slice().iter().map(|&v| v as f64).collect();
    let gb: Vec<f64> = p.grad_bias.iter().map(|&v| v as f64).collect();
    rel_err(&gw, &num_w).max(rel_err(&gb, &num_b)).max(rel_err(&to64(&dx), &num_x))
}

/// ReLU under a linear probe, away from the kink.
pub fn check_relu(rng: &mut Rng) -> f64 {
    let (rows, cols) = (dims(rng, 1, 6), dims(rng, 1, 9));
    let x = loop {
        let m = random_matrix(rows, cols, rng);
        if m.as_slice().iter().all(|v| (*v as f64).abs() > KINK_MARGIN) {
            break m;
        }
    };
    let r = random_matrix(rows, cols, rng);
    let (_, mask) = relu_forward(&x);
    let dx = relu_backward(&r, &mask).unwrap();
    let (x64, r64) = (to64(&x), to64(&r));
    let probe = |xs: &[f64]| xs.iter().zip(&r64).map(|(v, r)| v.max(0.0) * r).sum::<f64>();
    let num: Vec<f64> = (0..x64.len())
        .map(|k| {
            central(x64[k], |v| {
                let mut xs = x64.clone();
                xs[k] = v;
                probe(&xs)
            })
        })
        .collect();
    rel_err(&to64(&dx), &num)
}

pub fn check_softmax_ce(rng: &mut Rng) -> f64 {
    let (rows, classes) = (dims(rng, 1, 6), dims(rng, 2, 12));
    let z = random_matrix(rows, classes, rng);
    let labels = random_labels(rows, classes, rng);
    let (_, g) = softmax_cross_entropy(&z, &labels).unwrap();
    let z64 = to64(&z);
    let num: Vec<f64> = (0..z64.len())
        .map(|k| {
            central(z64[k], |v| {
                let mut zs = z64.clone();
                zs[k] = v;
                ce64(&zs, classes, &labels)
            })
        })
        .collect();
    rel_err(&to64(&g), &num)
}

/// Builds a small head of the given kind whose ReLU pre-activations keep a
/// margin from zero on a fresh batch.
fn head_instance(kind: HeadKind, rng: &mut Rng) -> (Head, DenseMatrix, Vec<usize>) {
    loop {
        let (rows, dim, classes) = (dims(rng, 2, 5), dims(rng, 2, 6), dims(rng, 2, 5));
        let head = match kind {
            HeadKind::Proposed => {
                let cls = init_uniform(dim, 1000, rng).unwrap();
                build_proposed_head(cls, classes, rng).unwrap()
            }
            HeadKind::Baseline => {
                let hidden = dims(rng, 2, 8);
                let pen = init_uniform(dim, hidden, rng).unwrap();
                build_baseline_head(Some(pen), dim, classes, rng).unwrap()
            }
        };
        let x = random_matrix(rows, dim, rng);
        let labels = random_labels(rows, classes, rng);
        let layers = layers64(&head);
        let (_, margin) = stack_loss(&layers, &to64(&x), rows, &labels);
        if margin > KINK_MARGIN {
            return (head, x, labels);
        }
    }
}

pub fn layers64(head: &Head) -> Vec<Layer64> {
    head.layers()
        .iter()
        .zip(&head.spec().layers)
        .map(|(p, s)| Layer64::from_params(p, s.relu_after))
        .collect()
}

/// End-to-end check of the 32-bit head backward pass. Large weight matrices
/// are probed on a random subset of coordinates.
pub fn check_head(kind: HeadKind, rng: &mut Rng) -> f64 {
    const PROBES: usize = 64;
    let (mut head, x, labels) = head_instance(kind, rng);
    head.loss_and_grad(&x, &labels).unwrap();
    let layers = layers64(&head);
    let x64 = to64(&x);
    let rows = x.rows();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (li, p) in head.layers().iter().enumerate() {
        let n_w = layers[li].w.len();
        let coords: Vec<usize> = if n_w <= PROBES {
            (0..n_w).collect()
        } else {
            (0..PROBES).map(|_| (rng.unit() * n_w as f64) as usize % n_w).collect()
        };
        for k in coords {
            analytic.push(p.grad_weights.as_slice()[k] as f64);
            numeric.push(central(layers[li].w[k], |v| {
                let mut ls = layers.clone();
                ls[li].w[k] = v;
                stack_loss(&ls, &x64, rows, &labels).0
            }));
        }
        let n_b = layers[li].b.len();
        let coords: Vec<usize> = if n_b <= PROBES {
            (0..n_b).collect()
        } else {
            (0..PROBES).map(|_| (rng.unit() * n_b as f64) as usize % n_b).collect()
        };
        for j in coords {
            analytic.push(p.grad_bias[j] as f64);
            numeric.push(central(layers[li].b[j], |v| {
                let mut ls = layers.clone();
                ls[li].b[j] = v;
                stack_loss(&ls, &x64, rows, &labels).0
            }));
        }
    }
    rel_err(&analytic, &numeric)
}

pub struct GradientSummary {
    pub instances: usize,
    pub worst_layer: f64,
    pub worst_head: f64,
}

/// Runs `per_kind` instances of each layer check and of each head kind.
pub fn gradient_suite(per_kind: usize, seed: u64) -> GradientSummary {
    let mut rng = Rng::new(seed);
    let mut worst_layer = 0.0f64;
    let mut worst_head = 0.0f64;
    for _ in 0..per_kind {
        worst_layer = worst_layer
            .max(check_affine(&mut rng))
            .max(check_relu(&mut rng))
            .max(check_softmax_ce(&mut rng));
        worst_head = worst_head
            .max(check_head(HeadKind::Proposed, &mut rng))
            .max(check_head(HeadKind::Baseline, &mut rng));
    }
    GradientSummary {
        instances: 5 * per_kind,
        worst_layer,
        worst_head,
    }
}
