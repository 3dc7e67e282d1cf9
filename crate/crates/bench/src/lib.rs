//! Fixtures shared by the criterion benches in `benches/`.
//!
//! Run them with `cargo bench -p tlhead-bench`.

use tlhead_core::layers::init_uniform;
use tlhead_core::{AffineParams, DenseMatrix, Rng};

/// Standard-normal matrix from a fixed seed.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = Rng::new(seed);
    DenseMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal() as f32).collect())
        .expect("rows * cols values")
}

pub fn layer(fan_in: usize, fan_out: usize, seed: u64) -> AffineParams {
    init_uniform(fan_in, fan_out, &mut Rng::new(seed)).expect("non-empty layer")
}

/// The layer shapes the heads train: VGG19's fc7 and classifier and the
/// 1000-way pretrained classifier.
pub const SHAPES: &[(&str, usize, usize)] = &[
    ("fc7_4096x4096", 4096, 4096),
    ("cls_4096x1000", 4096, 1000),
    ("cls_512x1000", 512, 1000),
    ("out_1000x5", 1000, 5),
];
