//! Row-major `f32` matrices and the three matrix-product kernels the
//! training engine needs.
//!
//! Every kernel computes each output row independently with a fixed
//! summation order, so splitting rows across worker threads yields
//! bitwise-identical results to the single-threaded path.

use crate::error::{Error, Result};

/// Output rows held in registers by the forward micro-kernel.
const MR: usize = 4;
/// Output columns held in registers by the micro-kernels.
const NR: usize = 32;
/// Reduction depth per pass over a column panel.
const KC: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Validation(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Validation("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    pub fn fill(&mut self, v: f32) {
        self.data.fill(v);
    }

    /// Reshapes in place, reusing the allocation. Contents are unspecified
    /// afterwards.
    pub(crate) fn resize(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.resize(rows * cols, 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight fixed lanes keep the reduction order independent of the target.
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (pa, pb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] = pa[l].mul_add(pb[l], acc[l]);
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail = a[i].mul_add(b[i], tail);
    }
    let s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    s + tail
}

/// Runs `f(first_row, rows)` over contiguous row chunks of `out`,
/// optionally on scoped worker threads.
fn for_row_chunks<F>(out: &mut [f32], row_len: usize, threads: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync,
{
    let n_rows = if row_len == 0 { 0 } else { out.len() / row_len };
    let threads = threads.max(1).min(n_rows.max(1));
    if threads == 1 {
        f(0, out);
        return;
    }
    let per = n_rows.div_ceil(threads);
    std::thread::scope(|s| {
        for (t, chunk) in out.chunks_mut(per * row_len).enumerate() {
            let f = &f;
            s.spawn(move || f(t * per, chunk));
        }
    });
}

/// Copies `w[ks, nb..nb+width]` into `buf` as consecutive `[k][NR]` strips,
/// zero-padding the last strip.
fn pack_panel(ws: &[f32], n_dim: usize, ks: std::ops::Range<usize>, nb: usize, width: usize, buf: &mut Vec<f32>) {
    let depth = ks.len();
    let strips = width.div_ceil(NR);
    buf.clear();
    buf.resize(strips * depth * NR, 0.0);
    for (kk, k) in ks.enumerate() {
        let src = &ws[k * n_dim + nb..k * n_dim + nb + width];
        for (s, part) in src.chunks(NR).enumerate() {
            let o = (s * depth + kk) * NR;
            buf[o..o + part.len()].copy_from_slice(part);
        }
    }
}

/// Accumulates `x[r][k] · strip[k]` over a packed strip into a `[R × NR]`
/// register tile. Every element sees its products in ascending `k`.
#[inline(always)]
fn micro<const R: usize>(mut acc: [[f32; NR]; R], xrows: [&[f32]; R], strip: &[f32]) -> [[f32; NR]; R] {
    for (kk, wr) in strip.chunks_exact(NR).enumerate() {
        let wr: &[f32; NR] = wr.try_into().unwrap();
        for r in 0..R {
            let a = xrows[r][kk];
            for l in 0..NR {
                acc[r][l] = a.mul_add(wr[l], acc[r][l]);
            }
        }
    }
    acc
}

#[inline(always)]
fn strip_pass<const R: usize>(chunk: &mut [f32], xrows: [&[f32]; R], local: usize, n_dim: usize, col: usize, width: usize, strip: &[f32]) {
    let mut acc = [[0.0f32; NR]; R];
    for r in 0..R {
        let o = (local + r) * n_dim + col;
        acc[r][..width].copy_from_slice(&chunk[o..o + width]);
    }
    let acc = micro(acc, xrows, strip);
    for r in 0..R {
        let o = (local + r) * n_dim + col;
        chunk[o..o + width].copy_from_slice(&acc[r][..width]);
    }
}

/// Columns packed per pass in the forward kernel.
const NC: usize = 512;

/// `out = x · w + bias` for `x: [B×K]`, `w: [K×N]`.
pub(crate) fn gemm_bias(
    x: &DenseMatrix,
    w: &DenseMatrix,
    bias: &[f32],
    out: &mut DenseMatrix,
    threads: usize,
) {
    let (k_dim, n_dim) = w.shape();
    debug_assert_eq!(x.cols, k_dim);
    debug_assert_eq!(bias.len(), n_dim);
    out.resize(x.rows, n_dim);
    let xs = &x.data;
    let ws = &w.data;
    for_row_chunks(&mut out.data, n_dim, threads, |row0, chunk| {
        let rows = chunk.len() / n_dim.max(1);
        for i in 0..rows {
            chunk[i * n_dim..(i + 1) * n_dim].copy_from_slice(bias);
        }
        let mut buf = Vec::new();
        for nb in (0..n_dim).step_by(NC) {
            let width = NC.min(n_dim - nb);
            for kb in (0..k_dim).step_by(KC) {
                let ks = kb..(kb + KC).min(k_dim);
                let depth = ks.len();
                pack_panel(ws, n_dim, ks.clone(), nb, width, &mut buf);
                let xrow = |i: usize| &xs[(row0 + i) * k_dim + kb..(row0 + i) * k_dim + kb + depth];
                for (s, strip) in buf.chunks_exact(depth * NR).enumerate() {
                    let col = nb + s * NR;
                    let sw = NR.min(nb + width - col);
                    let mut i = 0;
                    while i + MR <= rows {
                        let xr = [xrow(i), xrow(i + 1), xrow(i + 2), xrow(i + 3)];
                        strip_pass::<MR>(chunk, xr, i, n_dim, col, sw, strip);
                        i += MR;
                    }
                    while i < rows {
                        strip_pass::<1>(chunk, [xrow(i)], i, n_dim, col, sw, strip);
                        i += 1;
                    }
                }
            }
        }
    });
}

/// Rows `k..k+R` of `xᵀ · d`: `g[r][j] = Σ_i x[i][k+r] · d[i][j]`, summed in
/// ascending `i`.
#[inline(always)]
fn tn_rows<const R: usize>(xs: &[f32], k_dim: usize, k: usize, ds: &[f32], n_dim: usize, b_dim: usize, g: &mut [f32]) {
    let mut nb = 0;
    while nb + NR <= n_dim {
        let mut acc = [[0.0f32; NR]; R];
        for i in 0..b_dim {
            let dr: &[f32; NR] = ds[i * n_dim + nb..i * n_dim + nb + NR].try_into().unwrap();
            for r in 0..R {
                let a = xs[i * k_dim + k + r];
                for l in 0..NR {
                    acc[r][l] = a.mul_add(dr[l], acc[r][l]);
                }
            }
        }
        for r in 0..R {
            g[r * n_dim + nb..r * n_dim + nb + NR].copy_from_slice(&acc[r]);
        }
        nb += NR;
    }
    for j in nb..n_dim {
        for r in 0..R {
            let mut acc = 0.0f32;
            for i in 0..b_dim {
                acc = xs[i * k_dim + k + r].mul_add(ds[i * n_dim + j], acc);
            }
            g[r * n_dim + j] = acc;
        }
    }
}

/// Rows of `xᵀ · d` starting at `k0`, filling `g` (a whole number of rows).
fn tn_block(xs: &[f32], k_dim: usize, k0: usize, ds: &[f32], n_dim: usize, b_dim: usize, g: &mut [f32]) {
    let rows = g.len() / n_dim;
    let mut r = 0;
    while r + KR <= rows {
        tn_rows::<KR>(xs, k_dim, k0 + r, ds, n_dim, b_dim, &mut g[r * n_dim..(r + KR) * n_dim]);
        r += KR;
    }
    while r < rows {
        tn_rows::<1>(xs, k_dim, k0 + r, ds, n_dim, b_dim, &mut g[r * n_dim..(r + 1) * n_dim]);
        r += 1;
    }
}

/// Gradient rows computed together by the transposed kernel.
const KR: usize = 4;

/// `grad = xᵀ · d` for `x: [B×K]`, `d: [B×N]`; overwrites `grad: [K×N]`.
pub(crate) fn gemm_tn(x: &DenseMatrix, d: &DenseMatrix, grad: &mut DenseMatrix, threads: usize) {
    let (b_dim, k_dim) = x.shape();
    let n_dim = d.cols;
    debug_assert_eq!(d.rows, b_dim);
    grad.resize(k_dim, n_dim);
    let xs = &x.data;
    let ds = &d.data;
    if n_dim == 0 {
        return;
    }
    for_row_chunks(&mut grad.data, n_dim, threads, |row0, chunk| {
        for (c, g) in chunk.chunks_mut(KR * n_dim).enumerate() {
            tn_block(xs, k_dim, row0 + c * KR, ds, n_dim, b_dim, g);
        }
    });
}

/// Computes a few rows of `xᵀ · d` at a time into scratch and immediately
/// hands them to `update(grad_rows, weight_rows, velocity_rows)`, so the full
/// gradient is never materialised. Row results equal those of [`gemm_tn`] bit for bit.
pub(crate) fn gemm_tn_apply<F>(
    x: &DenseMatrix,
    d: &DenseMatrix,
    weights: &mut DenseMatrix,
    velocity: &mut DenseMatrix,
    threads: usize,
    update: F,
) where
    F: Fn(&[f32], &mut [f32], &mut [f32]) + Sync,
{
    let (b_dim, k_dim) = x.shape();
    let n_dim = d.cols;
    debug_assert_eq!(d.rows, b_dim);
    debug_assert_eq!(weights.shape(), (k_dim, n_dim));
    debug_assert_eq!(velocity.shape(), (k_dim, n_dim));
    if n_dim == 0 || k_dim == 0 {
        return;
    }
    let xs = &x.data;
    let ds = &d.data;
    let run = |row0: usize, wc: &mut [f32], vc: &mut [f32]| {
        let mut g = vec![0.0f32; KR * n_dim];
        let pairs = wc.chunks_mut(KR * n_dim).zip(vc.chunks_mut(KR * n_dim));
        for (c, (wb, vb)) in pairs.enumerate() {
            let g = &mut g[..wb.len()];
            tn_block(xs, k_dim, row0 + c * KR, ds, n_dim, b_dim, g);
            update(g, wb, vb);
        }
    };
    let threads = threads.max(1).min(k_dim);
    if threads == 1 {
        run(0, &mut weights.data, &mut velocity.data);
        return;
    }
    let per = k_dim.div_ceil(threads) * n_dim;
    std::thread::scope(|s| {
        let pairs = weights.data.chunks_mut(per).zip(velocity.data.chunks_mut(per));
        for (t, (wc, vc)) in pairs.enumerate() {
            let run = &run;
            s.spawn(move || run(t * per / n_dim, wc, vc));
        }
    });
}

/// `dx = d · wᵀ` for `d: [B×N]`, `w: [K×N]`; overwrites `dx: [B×K]`.
pub(crate) fn gemm_nt(d: &DenseMatrix, w: &DenseMatrix, dx: &mut DenseMatrix, threads: usize) {
    let (k_dim, n_dim) = w.shape();
    debug_assert_eq!(d.cols, n_dim);
    dx.resize(d.rows, k_dim);
    let ds = &d.data;
    let ws = &w.data;
    for_row_chunks(&mut dx.data, k_dim, threads, |row0, chunk| {
        for (r, out) in chunk.chunks_mut(k_dim.max(1)).enumerate() {
            let dr = &ds[(row0 + r) * n_dim..(row0 + r + 1) * n_dim];
            for (k, o) in out.iter_mut().enumerate() {
                *o = dot(dr, &ws[k * n_dim..(k + 1) * n_dim]);
            }
        }
    });
}

/// Column sums of `d` into `out`.
pub(crate) fn column_sums(d: &DenseMatrix, out: &mut [f32]) {
    out.fill(0.0);
    for i in 0..d.rows {
        for (o, &v) in out.iter_mut().zip(d.row(i)) {
            *o += v;
        }
    }
}
