//! Tape-free numeric kernels shared by the recorded ops and the inference
//! paths, so both compute bit-identical values.

use crate::scalar::Scalar;

use super::tensor::Tensor;

/// Strided GEMM on slices with bounds checks: `c = alpha·a·b + beta·c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_off: usize,
    rsa: usize,
    csa: usize,
    b: &[T],
    b_off: usize,
    rsb: usize,
    csb: usize,
    beta: T,
    c: &mut [T],
    c_off: usize,
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let last = |off: usize, rows: usize, cols: usize, rs: usize, cs: usize| off + (rows - 1) * rs + (cols - 1) * cs;
    assert!(last(a_off, m, k, rsa, csa) < a.len(), "gemm a out of bounds");
    assert!(last(b_off, k, n, rsb, csb) < b.len(), "gemm b out of bounds");
    assert!(last(c_off, m, n, rsc, csc) < c.len(), "gemm c out of bounds");
    // SAFETY: every addressed element was bounds-checked above and `c` is a
    // unique borrow, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr().add(a_off),
            rsa as isize,
            csa as isize,
            b.as_ptr().add(b_off),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr().add(c_off),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Kernel-width-2 dilated causal convolution.
///
/// `x` is `[in × T]`, `w` is `[out × in × 2]` with tap 0 applied to
/// `x[:, t - dilation]` and tap 1 to `x[:, t]`. Samples before the start
/// are treated as zeros, so the output is `[out × T]`.
pub fn causal_conv<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dilation: usize) -> Tensor<T> {
    let (cin, t) = (x.rows(), x.cols());
    let cout = w.shape()[0];
    let mut y = Tensor::zeros(&[cout, t]);
    let wd = w.data();
    let xd = x.data();
    let yd = y.data_mut();
    // current tap
    gemm_strided(cout, cin, t, wd, 1, 2 * cin, 2, xd, 0, t, 1, T::zero(), yd, 0, t, 1);
    if dilation < t {
        let n = t - dilation;
        gemm_strided(
            cout,
            cin,
            n,
            wd,
            0,
            2 * cin,
            2,
            xd,
            0,
            t,
            1,
            T::one(),
            yd,
            dilation,
            t,
            1,
        );
    }
    y
}

/// Input and weight gradients of [`causal_conv`], accumulated into
/// `dx` / `dw` when present.
pub(crate) fn causal_conv_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dilation: usize,
    dy: &Tensor<T>,
    dx: Option<&mut Tensor<T>>,
    dw: Option<&mut Tensor<T>>,
) {
    let (cin, t) = (x.rows(), x.cols());
    let cout = w.shape()[0];
    let shifted = t.saturating_sub(dilation);
    if let Some(dx) = dx {
        let dxd = dx.data_mut();
        gemm_strided(
            cin,
            cout,
            t,
            w.data(),
            1,
            2,
            2 * cin,
            dy.data(),
            0,
            t,
            1,
            T::one(),
            dxd,
            0,
            t,
            1,
        );
        if shifted > 0 {
            gemm_strided(
                cin,
                cout,
                shifted,
                w.data(),
                0,
                2,
                2 * cin,
                dy.data(),
                dilation,
                t,
                1,
                T::one(),
                dxd,
                0,
                t,
                1,
            );
        }
    }
    if let Some(dw) = dw {
        let dwd = dw.data_mut();
        gemm_strided(
            cout,
            t,
            cin,
            dy.data(),
            0,
            t,
            1,
            x.data(),
            0,
            1,
            t,
            T::one(),
            dwd,
            1,
            2 * cin,
            2,
        );
        if shifted > 0 {
            gemm_strided(
                cout,
                shifted,
                cin,
                dy.data(),
                dilation,
                t,
                1,
                x.data(),
                0,
                1,
                t,
                T::one(),
                dwd,
                0,
                2 * cin,
                2,
            );
        }
    }
}

/// Adds a per-row bias `b` (length = rows) to every column of `x`.
pub fn add_row_bias<T: Scalar>(x: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    add_row_bias_in_place(&mut y, b);
    y
}

pub(crate) fn add_row_bias_in_place<T: Scalar>(x: &mut Tensor<T>, b: &Tensor<T>) {
    let cols = x.cols();
    let bd = b.data();
    for (r, row) in x.data_mut().chunks_mut(cols).enumerate() {
        let bias = bd[r];
        for v in row {
            *v += bias;
        }
    }
}

/// `w · x + b` for `w: [out × in]`, `x: [in × T]`, `b: [out]`.
pub fn linear<T: Scalar>(w: &Tensor<T>, x: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut y = super::tensor::matmul(w, x);
    add_row_bias_in_place(&mut y, b);
    y
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `tanh(x[..R]) ⊙ sigmoid(x[R..])` for `x: [2R × T]`.
pub fn gated_tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (rows, t) = (x.rows() / 2, x.cols());
    let (a, b) = x.data().split_at(rows * t);
    Tensor::matrix(rows, t, a.iter().zip(b).map(|(&u, &v)| u.tanh() * sigmoid(v)).collect())
}

/// Column-wise log-softmax of a `[K × T]` tensor, written into `out`.
pub fn log_softmax_columns<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let (k, t) = (logits.rows(), logits.cols());
    let mut out = logits.clone();
    let d = out.data_mut();
    let mut max = vec![T::neg_infinity(); t];
    for r in 0..k {
        for (c, m) in max.iter_mut().enumerate() {
            let v = d[r * t + c];
            if v > *m {
                *m = v;
            }
        }
    }
    let mut sum = vec![T::zero(); t];
    for r in 0..k {
        for c in 0..t {
            sum[c] += (d[r * t + c] - max[c]).exp();
        }
    }
    let lse: Vec<T> = max.iter().zip(&sum).map(|(&m, &s)| m + s.ln()).collect();
    for r in 0..k {
        for c in 0..t {
            d[r * t + c] -= lse[c];
        }
    }
    out
}

/// Mean categorical cross-entropy (nats) of column-wise logits against
/// integer targets.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> T {
    let lsm = log_softmax_columns(logits);
    let t = logits.cols();
    let total: T = targets.iter().enumerate().map(|(c, &k)| -lsm.data()[k * t + c]).sum();
    total / T::of(t as f64)
}
