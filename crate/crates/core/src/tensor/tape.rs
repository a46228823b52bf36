//! Define-by-run gradient tape.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the nodes once in reverse insertion order, which is a valid
//! reverse topological order because inputs always precede their users.

use std::sync::atomic::{AtomicU64, Ordering};

use super::{conv, gemm, MatView, Real, Result, Shape, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv1d {
        input: usize,
        kernel: usize,
        bias: usize,
        stride: usize,
    },
    LeakyRelu {
        input: usize,
        alpha: T,
    },
    Concat {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    MulScalar {
        input: usize,
        c: T,
    },
    AddScalar {
        input: usize,
    },
    Square {
        input: usize,
    },
    Log {
        input: usize,
    },
    Sigmoid {
        input: usize,
    },
    ClampMin {
        input: usize,
        floor: T,
    },
    MeanAll {
        input: usize,
    },
    Dense {
        input: usize,
        weight: usize,
        bias: usize,
    },
    Superpixel {
        input: usize,
        r: usize,
    },
    Subpixel {
        input: usize,
        r: usize,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    /// A tape that records operations for a later [`Tape::backward`].
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that only evaluates; nothing is differentiable.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input (a parameter or a probed input).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let requires_grad = self.recording;
        self.push_node(value, Op::Leaf, requires_grad)
    }

    /// A value that gradients never flow into.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    /// Copies `v`'s value into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v)?.clone();
        Ok(self.constant(value))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.nodes[self.idx(v)?].requires_grad)
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.index)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: &[usize],
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        let requires_grad = self.recording && inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_node(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                expected: sa,
                got: sb,
            });
        }
        Ok(())
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(T) -> T,
        op: impl FnOnce(usize) -> Op<T>,
    ) -> Result<Var> {
        let i = self.idx(x)?;
        let value = self.nodes[i].value.map(f);
        self.push(name, value, op(i), &[i])
    }

    /// Same-padded cross-correlation, stride 1.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        self.conv1d_strided(x, kernel, bias, 1)
    }

    /// Same-padded cross-correlation evaluated every `stride` samples.
    pub fn conv1d_strided(&mut self, x: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let (i, k, b) = (self.idx(x)?, self.idx(kernel)?, self.idx(bias)?);
        let value = conv::forward(
            &self.nodes[i].value,
            &self.nodes[k].value,
            &self.nodes[b].value,
            stride,
        )?;
        self.push(
            "conv1d",
            value,
            Op::Conv1d {
                input: i,
                kernel: k,
                bias: b,
                stride,
            },
            &[i, k, b],
        )
    }

    /// `x` where `x ≥ 0`, `alpha·x` elsewhere; `alpha = 0` is ReLU.
    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(TensorError::Invalid(format!(
                "leaky_relu: alpha {alpha} outside [0, 1)"
            )));
        }
        let a = T::from_f64_lossy(alpha);
        self.unary(
            "leaky_relu",
            x,
            |v| if v >= T::zero() { v } else { a * v },
            |input| Op::LeakyRelu { input, alpha: a },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, 0.0)
    }

    /// Stacks `b`'s channels after `a`'s.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        if sa.batch != sb.batch || sa.time != sb.time {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                expected: Shape::new(sa.batch, sb.channels, sa.time),
                got: sb,
            });
        }
        let out = Shape::new(sa.batch, sa.channels + sb.channels, sa.time);
        let mut data = Vec::with_capacity(out.len());
        for bi in 0..sa.batch {
            data.extend_from_slice(self.nodes[ia].value.item(bi));
            data.extend_from_slice(self.nodes[ib].value.item(bi));
        }
        self.push(
            "concat_channels",
            Tensor::new(out, data)?,
            Op::Concat { a: ia, b: ib },
            &[ia, ib],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("add", ia, ib)?;
        let data = self.nodes[ia]
            .value
            .data()
            .iter()
            .zip(self.nodes[ib].value.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.nodes[ia].value.shape(), data)?;
        self.push("add", value, Op::Add { a: ia, b: ib }, &[ia, ib])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("sub", ia, ib)?;
        let data = self.nodes[ia]
            .value
            .data()
            .iter()
            .zip(self.nodes[ib].value.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::new(self.nodes[ia].value.shape(), data)?;
        self.push("sub", value, Op::Sub { a: ia, b: ib }, &[ia, ib])
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::from_f64_lossy(c);
        self.unary(
            "mul_scalar",
            x,
            |v| v * c,
            |input| Op::MulScalar { input, c },
        )
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::from_f64_lossy(c);
        self.unary("add_scalar", x, |v| v + c, |input| Op::AddScalar { input })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, |input| Op::Square { input })
    }

    /// Natural logarithm; every element must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        if let Some(&bad) = self.nodes[i]
            .value
            .data()
            .iter()
            .find(|&&v| !(v > T::zero()))
        {
            return Err(TensorError::NonPositiveLog(bad.as_f64()));
        }
        self.unary("log", x, |v| v.ln(), |input| Op::Log { input })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "sigmoid",
            x,
            |v| {
                // Branch on sign so exp never overflows.
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            |input| Op::Sigmoid { input },
        )
    }

    /// `max(x, floor)`; the gradient is cut where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var> {
        let f = T::from_f64_lossy(floor);
        self.unary(
            "clamp_min",
            x,
            |v| if v < f { f } else { v },
            |input| Op::ClampMin { input, floor: f },
        )
    }

    /// Mean over every element, as a `(1, 1, 1)` scalar.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let v = &self.nodes[i].value;
        if v.is_empty() {
            return Err(TensorError::Invalid("mean_all of an empty tensor".into()));
        }
        let mean = v.sum() / T::from_usize(v.len()).unwrap();
        self.push(
            "mean_all",
            Tensor::scalar(mean),
            Op::MeanAll { input: i },
            &[i],
        )
    }

    /// Fully connected layer over each batch item's flattened `(C, T)` slab.
    ///
    /// `weight` is `(1, out, C·T)`, `bias` is `(1, out, 1)`; the result is
    /// `(B, out, 1)`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (i, w, b) = (self.idx(x)?, self.idx(weight)?, self.idx(bias)?);
        let xs = self.nodes[i].value.shape();
        let ws = self.nodes[w].value.shape();
        let features = xs.channels * xs.time;
        let want_w = Shape::new(1, ws.channels, features);
        if ws != want_w {
            return Err(TensorError::ShapeMismatch {
                op: "dense weight",
                expected: want_w,
                got: ws,
            });
        }
        let want_b = Shape::new(1, ws.channels, 1);
        if self.nodes[b].value.shape() != want_b {
            return Err(TensorError::ShapeMismatch {
                op: "dense bias",
                expected: want_b,
                got: self.nodes[b].value.shape(),
            });
        }
        let out_n = ws.channels;
        let mut out = Tensor::zeros(Shape::new(xs.batch, out_n, 1));
        gemm(
            self.nodes[i].value.data(),
            MatView::row_major(xs.batch, features),
            self.nodes[w].value.data(),
            MatView::row_major(out_n, features).t(),
            out.data_mut(),
            MatView::row_major(xs.batch, out_n),
            false,
        );
        let bias_v = self.nodes[b].value.data().to_vec();
        for row in out.data_mut().chunks_mut(out_n) {
            for (v, &bb) in row.iter_mut().zip(&bias_v) {
                *v += bb;
            }
        }
        self.push(
            "dense",
            out,
            Op::Dense {
                input: i,
                weight: w,
                bias: b,
            },
            &[i, w, b],
        )
    }

    pub fn superpixel(&mut self, x: Var, r: usize) -> Result<Var> {
        let i = self.idx(x)?;
        let value = self.nodes[i].value.superpixel(r)?;
        self.push("superpixel", value, Op::Superpixel { input: i, r }, &[i])
    }

    pub fn subpixel(&mut self, x: Var, r: usize) -> Result<Var> {
        let i = self.idx(x)?;
        let value = self.nodes[i].value.subpixel(r)?;
        self.push("subpixel", value, Op::Subpixel { input: i, r }, &[i])
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.idx(loss)?;
        let shape = self.nodes[root].value.shape();
        if shape.len() != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        if !self.nodes[root].requires_grad {
            return Err(TensorError::Detached);
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root] = Some(Tensor::full(shape, T::one()));

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let rg = |i: usize| self.nodes[i].requires_grad;
            let val = |i: usize| &self.nodes[i].value;
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv1d {
                    input,
                    kernel,
                    bias,
                    stride,
                } => {
                    let cg = conv::backward(
                        val(input),
                        val(kernel),
                        &g,
                        stride,
                        [rg(input), rg(kernel), rg(bias)],
                    );
                    accumulate(&mut grads, input, cg.input);
                    accumulate(&mut grads, kernel, cg.kernel);
                    accumulate(&mut grads, bias, cg.bias);
                }
                Op::LeakyRelu { input, alpha } => {
                    let gx = zip_map(
                        &g,
                        val(input),
                        |g, x| if x > T::zero() { g } else { alpha * g },
                    );
                    accumulate(&mut grads, input, Some(gx));
                }
                Op::Concat { a, b } => {
                    let (sa, sb) = (val(a).shape(), val(b).shape());
                    let na = sa.channels * sa.time;
                    let nb = sb.channels * sb.time;
                    let mut ga = Vec::with_capacity(sa.len());
                    let mut gb = Vec::with_capacity(sb.len());
                    for item in g.data().chunks(na + nb) {
                        ga.extend_from_slice(&item[..na]);
                        gb.extend_from_slice(&item[na..]);
                    }
                    if rg(a) {
                        accumulate(&mut grads, a, Some(Tensor::new(sa, ga)?));
                    }
                    if rg(b) {
                        accumulate(&mut grads, b, Some(Tensor::new(sb, gb)?));
                    }
                }
                Op::Add { a, b } => {
                    if rg(a) {
                        accumulate(&mut grads, a, Some(g.clone()));
                    }
                    if rg(b) {
                        accumulate(&mut grads, b, Some(g));
                    }
                }
                Op::Sub { a, b } => {
                    if rg(b) {
                        accumulate(&mut grads, b, Some(g.map(|v| -v)));
                    }
                    if rg(a) {
                        accumulate(&mut grads, a, Some(g));
                    }
                }
                Op::MulScalar { input, c } => accumulate(&mut grads, input, Some(g.map(|v| v * c))),
                Op::AddScalar { input } => accumulate(&mut grads, input, Some(g)),
                Op::Square { input } => {
                    let two = T::one() + T::one();
                    let gx = zip_map(&g, val(input), |g, x| two * x * g);
                    accumulate(&mut grads, input, Some(gx));
                }
                Op::Log { input } => {
                    let gx = zip_map(&g, val(input), |g, x| g / x);
                    accumulate(&mut grads, input, Some(gx));
                }
                Op::Sigmoid { input } => {
                    let gx = zip_map(&g, &node.value, |g, y| g * y * (T::one() - y));
                    accumulate(&mut grads, input, Some(gx));
                }
                Op::ClampMin { input, floor } => {
                    let gx = zip_map(&g, val(input), |g, x| if x < floor { T::zero() } else { g });
                    accumulate(&mut grads, input, Some(gx));
                }
                Op::MeanAll { input } => {
                    let x = val(input);
                    let each = g.data()[0] / T::from_usize(x.len()).unwrap();
                    accumulate(&mut grads, input, Some(Tensor::full(x.shape(), each)));
                }
                Op::Dense {
                    input,
                    weight,
                    bias,
                } => {
                    let xs = val(input).shape();
                    let features = xs.channels * xs.time;
                    let out_n = val(weight).shape().channels;
                    let g_v = MatView::row_major(xs.batch, out_n);
                    let x_v = MatView::row_major(xs.batch, features);
                    let w_v = MatView::row_major(out_n, features);
                    if rg(weight) {
                        let mut gw = Tensor::zeros(val(weight).shape());
                        gemm(
                            g.data(),
                            g_v.t(),
                            val(input).data(),
                            x_v,
                            gw.data_mut(),
                            w_v,
                            false,
                        );
                        accumulate(&mut grads, weight, Some(gw));
                    }
                    if rg(input) {
                        let mut gx = Tensor::zeros(xs);
                        gemm(
                            g.data(),
                            g_v,
                            val(weight).data(),
                            w_v,
                            gx.data_mut(),
                            x_v,
                            false,
                        );
                        accumulate(&mut grads, input, Some(gx));
                    }
                    if rg(bias) {
                        let mut gb = Tensor::zeros(val(bias).shape());
                        for row in g.data().chunks(out_n) {
                            for (acc, &v) in gb.data_mut().iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        accumulate(&mut grads, bias, Some(gb));
                    }
                }
                Op::Superpixel { input, r } => accumulate(&mut grads, input, Some(g.subpixel(r)?)),
                Op::Subpixel { input, r } => accumulate(&mut grads, input, Some(g.superpixel(r)?)),
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

fn zip_map<T: Real>(g: &Tensor<T>, x: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = g
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &x)| f(g, x))
        .collect();
    Tensor::new(g.shape(), data).expect("gradient shape matches value shape")
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], idx: usize, g: Option<Tensor<T>>) {
    let Some(g) = g else { return };
    match &mut grads[idx] {
        Some(acc) => {
            for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of one loss with respect to the differentiable leaves of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when `v` is not on the tape or the loss does not reach it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }
}
