//! Row-major dense kernels over `f32`/`f64` buffers.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul};

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};

pub trait Float:
    Copy + Debug + Default + Send + Sync + PartialOrd + Add<Output = Self> + AddAssign + Mul<Output = Self> + 'static
{
    const ZERO: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;

    /// `C (m×n) ← A (m×k) · B (k×n)`, or `C += A·B` when `accumulate`, with arbitrary strides.
    ///
    /// # Safety
    /// The strided views must lie inside the allocations of `a`, `b` and `c`, and `c` must not alias them.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        a_strides: (isize, isize),
        b: *const Self,
        b_strides: (isize, isize),
        c: *mut Self,
        c_strides: (isize, isize),
        accumulate: bool,
    );
}

macro_rules! impl_float {
    ($t:ty) => {
        impl Float for $t {
            const ZERO: Self = 0.0;
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            unsafe fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: *const Self,
                a_strides: (isize, isize),
                b: *const Self,
                b_strides: (isize, isize),
                c: *mut Self,
                c_strides: (isize, isize),
                accumulate: bool,
            ) {
                let a = MatRef::from_raw_parts(a, m, k, a_strides.0, a_strides.1);
                let b = MatRef::from_raw_parts(b, k, n, b_strides.0, b_strides.1);
                let c = MatMut::from_raw_parts_mut(c, m, n, c_strides.0, c_strides.1);
                let accum = if accumulate { Accum::Add } else { Accum::Replace };
                matmul(c, accum, a, b, 1.0, Par::Seq);
            }
        }
    };
}

impl_float!(f64);
impl_float!(f32);

/// `C (rows×out) = A (rows×inner) · Wᵀ` where `W` is `out×inner`; adds into `C` when `accumulate`.
pub fn linear<T: Float>(a: &[T], rows: usize, inner: usize, w: &[T], out: usize, c: &mut [T], accumulate: bool) {
    assert_eq!(a.len(), rows * inner);
    assert_eq!(w.len(), out * inner);
    assert_eq!(c.len(), rows * out);
    if rows == 0 || out == 0 {
        return;
    }
    // SAFETY: lengths checked above; all views are dense row-major, Wᵀ through swapped strides.
    unsafe {
        T::gemm(
            rows,
            inner,
            out,
            a.as_ptr(),
            (inner as isize, 1),
            w.as_ptr(),
            (1, inner as isize),
            c.as_mut_ptr(),
            (out as isize, 1),
            accumulate,
        )
    }
}

/// `dW (out×inner) += dZᵀ (out×rows) · A (rows×inner)`.
pub fn weight_grad(dz: &[f64], rows: usize, out: usize, a: &[f64], inner: usize, dw: &mut [f64]) {
    assert_eq!(dz.len(), rows * out);
    assert_eq!(a.len(), rows * inner);
    assert_eq!(dw.len(), out * inner);
    if rows == 0 {
        return;
    }
    // SAFETY: lengths checked above; dZᵀ is read through swapped strides.
    unsafe {
        f64::gemm(
            out,
            rows,
            inner,
            dz.as_ptr(),
            (1, out as isize),
            a.as_ptr(),
            (inner as isize, 1),
            dw.as_mut_ptr(),
            (inner as isize, 1),
            true,
        )
    }
}

/// `dA (rows×inner) (+)= dZ (rows×out) · W (out×inner)`.
pub fn input_grad(dz: &[f64], rows: usize, out: usize, w: &[f64], inner: usize, da: &mut [f64], accumulate: bool) {
    assert_eq!(dz.len(), rows * out);
    assert_eq!(w.len(), out * inner);
    assert_eq!(da.len(), rows * inner);
    if rows == 0 {
        return;
    }
    // SAFETY: lengths checked above.
    unsafe {
        f64::gemm(
            rows,
            out,
            inner,
            dz.as_ptr(),
            (out as isize, 1),
            w.as_ptr(),
            (inner as isize, 1),
            da.as_mut_ptr(),
            (inner as isize, 1),
            accumulate,
        )
    }
}

pub fn add_bias<T: Float>(c: &mut [T], bias: &[T]) {
    for row in c.chunks_exact_mut(bias.len()) {
        for (x, b) in row.iter_mut().zip(bias) {
            *x += *b;
        }
    }
}

pub fn bias_grad(dz: &[f64], db: &mut [f64]) {
    for row in dz.chunks_exact(db.len()) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
}

pub fn relu_in_place<T: Float>(x: &mut [T]) {
    for v in x {
        if !(*v > T::ZERO) {
            *v = T::ZERO;
        }
    }
}

/// ReLU that also reports whether every input was finite.
pub fn relu_checked<T: Float>(x: &mut [T]) -> bool {
    let mut finite = true;
    for v in x {
        finite &= v.is_finite();
        *v = if *v > T::ZERO { *v } else { T::ZERO };
    }
    finite
}

/// Zeroes gradient entries whose forward activation was clipped.
pub fn relu_backward(grad: &mut [f64], activation: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if !(*a > 0.0) {
            *g = 0.0;
        }
    }
}
