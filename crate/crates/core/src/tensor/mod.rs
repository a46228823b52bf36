//! Dense rank-3 tensors (batch × channels × time) with a define-by-run
//! gradient tape and the ADAM optimizer.
//!
//! Everything in the networks is expressed through [`Tape`] operations, so
//! the same model code runs in 32-bit for training and in 64-bit for
//! finite-difference gradient checks.

mod adam;
mod conv;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected} but got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: Shape,
        got: Shape,
    },
    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("conv1d: input has {input} channels but kernel expects {kernel}")]
    ChannelMismatch { input: usize, kernel: usize },
    #[error("conv1d: kernel width {0} is not odd")]
    EvenKernel(usize),
    #[error("log of non-positive value {0}")]
    NonPositiveLog(f64),
    #[error("{0}: produced a non-finite value")]
    NonFinite(&'static str),
    #[error("backward: loss must be a scalar, got shape {0}")]
    NotScalar(Shape),
    #[error("backward: loss does not depend on any trainable value")]
    Detached,
    #[error("variable belongs to a different tape")]
    ForeignVar,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Floating-point element type usable in tensors.
///
/// Implemented for `f32` (training) and `f64` (gradient checks).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// `c = alpha * a · b + beta * c` for an `m × k` by `k × n` product with
    /// explicit row/column strides.
    ///
    /// # Safety
    /// The strided views must stay inside the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// A strided matrix view over a slice: `(rows, cols, row_stride, col_stride)`.
#[derive(Clone, Copy)]
pub(crate) struct MatView {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl MatView {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        MatView {
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        MatView {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `c = a · b` (or `c += a · b` when `accumulate`), bounds-checked.
pub(crate) fn gemm<T: Real>(
    a: &[T],
    av: MatView,
    b: &[T],
    bv: MatView,
    c: &mut [T],
    cv: MatView,
    accumulate: bool,
) {
    assert_eq!(av.cols, bv.rows, "gemm inner dimension");
    assert_eq!(av.rows, cv.rows, "gemm output rows");
    assert_eq!(bv.cols, cv.cols, "gemm output cols");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    if av.cols == 0 {
        if !accumulate {
            for i in 0..cv.rows {
                for j in 0..cv.cols {
                    c[i * cv.rs + j * cv.cs] = T::zero();
                }
            }
        }
        return;
    }
    assert!(av.last_index() < a.len() && bv.last_index() < b.len() && cv.last_index() < c.len());
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: all three views were checked against their slice lengths above.
    unsafe {
        T::gemm_raw(
            av.rows,
            av.cols,
            bv.cols,
            T::one(),
            a.as_ptr(),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr(),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr(),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

/// Batch × channels × time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub time: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, time: usize) -> Self {
        Shape {
            batch,
            channels,
            time,
        }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.batch * self.channels * self.time
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.batch, self.channels, self.time)
    }
}

/// A plain rank-3 array, stored batch-major then channel-major.
///
/// Convolution kernels use the same layout as `(out_ch, in_ch, width)`;
/// bias vectors are `(1, n, 1)` and dense weights `(1, out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    /// Builds a tensor from `f(batch, channel, time)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for t in 0..shape.time {
                    data.push(f(b, c, t));
                }
            }
        }
        Tensor { shape, data }
    }

    /// One-channel batch from equally long signals.
    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let time = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * time);
        for r in rows {
            if r.len() != time {
                return Err(TensorError::Invalid(format!(
                    "rows of unequal length {} and {}",
                    time,
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(Shape::new(rows.len(), 1, time), data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, t: usize) -> usize {
        (b * self.shape.channels + c) * self.shape.time + t
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, t: usize) -> T {
        self.data[self.index(b, c, t)]
    }

    /// The `(channels, time)` slab of one batch item.
    pub fn item(&self, b: usize) -> &[T] {
        let n = self.shape.channels * self.shape.time;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Moves time samples into channels: output channel `c·r + j` at time
    /// `t` holds input channel `c` at time `t·r + j`.
    pub fn superpixel(&self, r: usize) -> Result<Self> {
        let Shape {
            batch,
            channels,
            time,
        } = self.shape;
        if r == 0 || time % r != 0 {
            return Err(TensorError::Invalid(format!(
                "superpixel: time {time} not divisible by {r}"
            )));
        }
        let out_t = time / r;
        let out = Shape::new(batch, channels * r, out_t);
        let mut data = vec![T::zero(); out.len()];
        for b in 0..batch {
            for c in 0..channels {
                let src = &self.data[(b * channels + c) * time..][..time];
                for j in 0..r {
                    let dst = &mut data[(b * channels * r + c * r + j) * out_t..][..out_t];
                    for (t, d) in dst.iter_mut().enumerate() {
                        *d = src[t * r + j];
                    }
                }
            }
        }
        Ok(Tensor { shape: out, data })
    }

    /// Exact inverse of [`Tensor::superpixel`].
    pub fn subpixel(&self, r: usize) -> Result<Self> {
        let Shape {
            batch,
            channels,
            time,
        } = self.shape;
        if r == 0 || channels % r != 0 {
            return Err(TensorError::Invalid(format!(
                "subpixel: channels {channels} not divisible by {r}"
            )));
        }
        let out_c = channels / r;
        let out_t = time * r;
        let out = Shape::new(batch, out_c, out_t);
        let mut data = vec![T::zero(); out.len()];
        for b in 0..batch {
            for c in 0..out_c {
                let dst = &mut data[(b * out_c + c) * out_t..][..out_t];
                for j in 0..r {
                    let src = &self.data[(b * channels + c * r + j) * time..][..time];
                    for (t, &s) in src.iter().enumerate() {
                        dst[t * r + j] = s;
                    }
                }
            }
        }
        Ok(Tensor { shape: out, data })
    }
}
