//! Matrix product tuned for the thin operands of per-window training, where
//! one side usually has a single row and packing for a blocked GEMM costs
//! more than the arithmetic.

use ndarray::ArrayView2;

use super::Matrix;

const BLOCKED_MIN: usize = 64;

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, xr) = x.split_at(x.len() / 4 * 4);
    let (yc, yr) = y.split_at(xc.len());
    for (a, b) in xc.chunks_exact(4).zip(yc.chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += a[l] * b[l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (a, b) in xr.iter().zip(yr) {
        s += a * b;
    }
    s
}

/// `a . b` for arbitrary (possibly transposed) views.
pub(crate) fn gemm(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Matrix {
    let (m, k) = a.dim();
    let n = b.ncols();
    debug_assert_eq!(k, b.nrows());
    if m >= BLOCKED_MIN && n >= BLOCKED_MIN && k >= BLOCKED_MIN {
        return a.dot(&b);
    }
    if k == 0 {
        return Matrix::zeros((m, n));
    }
    if b.is_standard_layout() {
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let start = data.len();
            let s0 = a[[i, 0]];
            data.extend(b.row(0).iter().map(|&v| s0 * v));
            let out = &mut data[start..];
            for p in 1..k {
                let s = a[[i, p]];
                let brow = b.row(p);
                for (o, &v) in out.iter_mut().zip(brow.as_slice().unwrap()) {
                    *o += s * v;
                }
            }
        }
        return Matrix::from_shape_vec((m, n), data).unwrap();
    }
    let bt = b.t();
    if bt.is_standard_layout() && a.is_standard_layout() {
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let arow = a.row(i);
            let x = arow.as_slice().unwrap();
            data.extend(bt.rows().into_iter().map(|r| dot(x, r.as_slice().unwrap())));
        }
        return Matrix::from_shape_vec((m, n), data).unwrap();
    }
    a.dot(&b)
}
