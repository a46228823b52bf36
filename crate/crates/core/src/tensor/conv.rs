//! Same-padded 1-D cross-correlation via im2col + GEMM.
//!
//! Layout: input `(B, Cin, L)`, kernel `(Cout, Cin, K)`, bias `(1, Cout, 1)`,
//! output `(B, Cout, ceil(L / stride))`. Output sample `t` is centred on
//! input sample `t·stride`, with `K / 2` zeros of padding on either side.

use super::{gemm, MatView, Real, Result, Shape, Tensor, TensorError};

pub(crate) fn check(x: Shape, w: Shape, b: Shape, stride: usize) -> Result<Shape> {
    if w.time.is_multiple_of(2) {
        return Err(TensorError::EvenKernel(w.time));
    }
    if x.channels != w.channels {
        return Err(TensorError::ChannelMismatch {
            input: x.channels,
            kernel: w.channels,
        });
    }
    let want_bias = Shape::new(1, w.batch, 1);
    if b != want_bias {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d bias",
            expected: want_bias,
            got: b,
        });
    }
    if stride == 0 {
        return Err(TensorError::Invalid(
            "conv1d: stride must be positive".into(),
        ));
    }
    Ok(Shape::new(x.batch, w.batch, x.time.div_ceil(stride)))
}

/// Output positions `t` whose tap `j` reads inside the input, as the range
/// `lo..hi` together with the input index of `t = lo`.
fn valid_range(len: usize, j: usize, pad: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(j).min(out_len);
    let hi = (len + pad).saturating_sub(j).clamp(lo, out_len);
    (lo, hi)
}

/// Fills `cols` (`Cin·K × Lout`, row-major) for one batch item.
fn im2col<T: Real>(
    item: &[T],
    cin: usize,
    len: usize,
    k: usize,
    stride: usize,
    out_len: usize,
    cols: &mut [T],
) {
    let pad = k / 2;
    for c in 0..cin {
        let src = &item[c * len..(c + 1) * len];
        for j in 0..k {
            let row = &mut cols[(c * k + j) * out_len..][..out_len];
            if stride == 1 {
                let (lo, hi) = valid_range(len, j, pad, out_len);
                row.fill(T::zero());
                if lo < hi {
                    row[lo..hi].copy_from_slice(&src[lo + j - pad..hi + j - pad]);
                }
                continue;
            }
            for (t, v) in row.iter_mut().enumerate() {
                let pos = (t * stride + j) as isize - pad as isize;
                *v = if pos >= 0 && (pos as usize) < len {
                    src[pos as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

/// Transposed layout of [`im2col`]: `Lout × Cin·K`, row-major. Each row
/// copies contiguous input runs, which keeps the kernel-gradient GEMM on
/// row-major operands.
fn im2col_t<T: Real>(
    item: &[T],
    cin: usize,
    len: usize,
    k: usize,
    stride: usize,
    out_len: usize,
    cols_t: &mut [T],
) {
    let pad = k / 2;
    for t in 0..out_len {
        let row = &mut cols_t[t * cin * k..][..cin * k];
        // Taps j read input index t·stride + j − pad.
        let start = (t * stride) as isize - pad as isize;
        let j_lo = (-start).max(0) as usize;
        let j_hi = ((len as isize - start).max(0) as usize).min(k);
        for c in 0..cin {
            let dst = &mut row[c * k..(c + 1) * k];
            dst.fill(T::zero());
            if j_lo < j_hi {
                let src = &item[c * len..(c + 1) * len];
                let from = (start + j_lo as isize) as usize;
                dst[j_lo..j_hi].copy_from_slice(&src[from..from + (j_hi - j_lo)]);
            }
        }
    }
}

/// Scatter-adds `cols` back onto one batch item's input gradient.
fn col2im<T: Real>(
    cols: &[T],
    cin: usize,
    len: usize,
    k: usize,
    stride: usize,
    out_len: usize,
    item: &mut [T],
) {
    let pad = k / 2;
    for c in 0..cin {
        let dst = &mut item[c * len..(c + 1) * len];
        for j in 0..k {
            let row = &cols[(c * k + j) * out_len..][..out_len];
            if stride == 1 {
                let (lo, hi) = valid_range(len, j, pad, out_len);
                if lo == hi {
                    continue;
                }
                for (d, &g) in dst[lo + j - pad..hi + j - pad].iter_mut().zip(&row[lo..hi]) {
                    *d += g;
                }
                continue;
            }
            for (t, &g) in row.iter().enumerate() {
                let pos = (t * stride + j) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    dst[pos as usize] += g;
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let out_shape = check(x.shape(), w.shape(), b.shape(), stride)?;
    let Shape {
        batch,
        channels: cin,
        time: len,
    } = x.shape();
    let (cout, k) = (w.shape().batch, w.shape().time);
    let out_len = out_shape.time;
    let mut out = Tensor::zeros(out_shape);
    let mut cols = vec![T::zero(); cin * k * out_len];
    let wv = MatView::row_major(cout, cin * k);
    for bi in 0..batch {
        im2col(x.item(bi), cin, len, k, stride, out_len, &mut cols);
        let dst = &mut out.data_mut()[bi * cout * out_len..(bi + 1) * cout * out_len];
        gemm(
            w.data(),
            wv,
            &cols,
            MatView::row_major(cin * k, out_len),
            dst,
            MatView::row_major(cout, out_len),
            false,
        );
        for (o, row) in dst.chunks_mut(out_len).enumerate() {
            let bias = b.data()[o];
            for v in row {
                *v += bias;
            }
        }
    }
    Ok(out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub(crate) fn backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    need: [bool; 3],
) -> ConvGrads<T> {
    let Shape {
        batch,
        channels: cin,
        time: len,
    } = x.shape();
    let (cout, k) = (w.shape().batch, w.shape().time);
    let out_len = grad_out.shape().time;
    let cols_v = MatView::row_major(cin * k, out_len);
    let g_v = MatView::row_major(cout, out_len);
    let w_v = MatView::row_major(cout, cin * k);

    let mut gx = need[0].then(|| Tensor::zeros(x.shape()));
    let mut gw = need[1].then(|| Tensor::zeros(w.shape()));
    let mut gb = need[2].then(|| Tensor::zeros(Shape::new(1, cout, 1)));
    let mut cols = vec![T::zero(); cin * k * out_len];

    for bi in 0..batch {
        let g = grad_out.item(bi);
        if let Some(gw) = gw.as_mut() {
            im2col_t(x.item(bi), cin, len, k, stride, out_len, &mut cols);
            gemm(
                g,
                g_v,
                &cols,
                MatView::row_major(out_len, cin * k),
                gw.data_mut(),
                w_v,
                true,
            );
        }
        if let (Some(gx), 2..) = (gx.as_mut(), stride) {
            gemm(w.data(), w_v.t(), g, g_v, &mut cols, cols_v, false);
            let n = cin * len;
            col2im(
                &cols,
                cin,
                len,
                k,
                stride,
                out_len,
                &mut gx.data_mut()[bi * n..(bi + 1) * n],
            );
        }
        if let Some(gb) = gb.as_mut() {
            for (o, row) in g.chunks(out_len).enumerate() {
                gb.data_mut()[o] += row.iter().copied().sum::<T>();
            }
        }
    }
    if let (Some(gx), 1) = (gx.as_mut(), stride) {
        // With unit stride the input gradient is a same-padded correlation
        // of `grad_out` with the flipped, transposed kernel.
        let flipped = Tensor::from_fn(Shape::new(cin, cout, k), |c, o, j| w.at(o, c, k - 1 - j));
        let zero_bias = Tensor::zeros(Shape::new(1, cin, 1));
        *gx = forward(grad_out, &flipped, &zero_bias, 1)
            .expect("flipped kernel shapes are consistent");
    }
    ConvGrads {
        input: gx,
        kernel: gw,
        bias: gb,
    }
}
