//! Dense kernels shared by forward and backward passes.

/// Strided view of a row-major matrix inside a flat buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub offset: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl View {
    pub fn rows(offset: usize, stride: usize) -> Self {
        View {
            offset,
            row_stride: stride as isize,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major block with the given row stride.
    pub fn transposed(offset: usize, stride: usize) -> Self {
        View {
            offset,
            row_stride: 1,
            col_stride: stride as isize,
        }
    }
}

/// `c = beta * c + a · b` where `a` is `[m, k]` and `b` is `[k, n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    av: View,
    b: &[f64],
    bv: View,
    beta: f64,
    c: &mut [f64],
    cv: View,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            for i in 0..m {
                for j in 0..n {
                    let idx = cv.offset as isize + i as isize * cv.row_stride + j as isize * cv.col_stride;
                    c[idx as usize] = 0.0;
                }
            }
        }
        return;
    }
    let extent = |v: View, r: usize, cc: usize| -> usize {
        v.offset + (r as isize - 1).max(0) as usize * v.row_stride as usize
            + (cc as isize - 1).max(0) as usize * v.col_stride as usize
    };
    assert!(extent(av, m, k) < a.len(), "gemm: a out of bounds");
    assert!(extent(bv, k, n) < b.len(), "gemm: b out of bounds");
    assert!(extent(cv, m, n) < c.len(), "gemm: c out of bounds");
    // SAFETY: all three views were bounds-checked above against their
    // buffers, and `c` is a unique borrow distinct from `a` and `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(av.offset),
            av.row_stride,
            av.col_stride,
            b.as_ptr().add(bv.offset),
            bv.row_stride,
            bv.col_stride,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.row_stride,
            cv.col_stride,
        );
    }
}

pub(crate) fn softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `dx = y * (dy - <dy, y>)` for one softmax row.
pub(crate) fn softmax_row_backward(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &yy), &g) in dx.iter_mut().zip(y).zip(dy) {
        *d += yy * (g - dot);
    }
}

pub(crate) fn log_softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}
