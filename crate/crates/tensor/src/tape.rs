//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and the rule for
//! its backward pass. Node ids are assigned in creation order, so inputs
//! always precede outputs and a single reverse sweep visits each node once.
//! A tape supports exactly one [`Tape::backward`]; a second call errors.

use std::cell::{Cell, Ref, RefCell};

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::par::{self, Exec};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    BiasAdd {
        x: usize,
        bias: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: usize,
        w: usize,
        geom: ConvGeom,
    },
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    LeakyRelu {
        x: usize,
        alpha: T,
    },
    Sigmoid(usize),
    Tanh(usize),
    Log(usize),
    Clamp {
        x: usize,
        lo: T,
        hi: T,
    },
    Concat {
        inputs: Vec<usize>,
        widths: Vec<usize>,
    },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance over the batch.
    pub var: Vec<T>,
    /// Number of elements averaged per channel.
    pub count: usize,
}

/// Recording of one forward computation.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of the loss with respect to every leaf on the tape.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `var`; zero when `var` is not on a path to the loss.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.id]))
    }

    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(var.id).and_then(|g| g.as_ref())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        if self.consumed.replace(true) {
            return Err(TensorError::BackwardTwice);
        }
        let n = nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        let mut leaves: Vec<Option<Tensor<T>>> = vec![None; n];
        if loss_node.requires_grad {
            grads[loss.id] = Some(vec![T::one()]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Op::Leaf = node.op {
                leaves[id] = Some(Tensor::new(node.value.shape(), g)?);
                continue;
            }
            backward_node(&nodes, id, g, &mut grads);
        }
        Ok(Gradients {
            leaves,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], id: usize, delta: Vec<T>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a = *a + d),
        slot @ None => *slot = Some(delta),
    }
}

fn backward_node<T: Real>(nodes: &[Node<T>], id: usize, g: Vec<T>, grads: &mut [Option<Vec<T>>]) {
    let node = &nodes[id];
    let val = |i: usize| nodes[i].value.data();
    let req = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if req(*b) {
                accumulate(grads, nodes, *b, g.clone());
            }
            accumulate(grads, nodes, *a, g);
        }
        Op::Sub(a, b) => {
            if req(*b) {
                accumulate(grads, nodes, *b, g.iter().map(|&v| -v).collect());
            }
            accumulate(grads, nodes, *a, g);
        }
        Op::Mul(a, b) => {
            if req(*a) {
                let d = g.iter().zip(val(*b)).map(|(&gv, &bv)| gv * bv).collect();
                accumulate(grads, nodes, *a, d);
            }
            if req(*b) {
                let d = g.iter().zip(val(*a)).map(|(&gv, &av)| gv * av).collect();
                accumulate(grads, nodes, *b, d);
            }
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, g.iter().map(|&v| v * *c).collect()),
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g),
        Op::BiasAdd { x, bias } => {
            if req(*bias) {
                let shape = nodes[*x].value.shape();
                let c = shape[1];
                let inner: usize = shape[2..].iter().product();
                let mut db = vec![T::zero(); c];
                for (i, chunk) in g.chunks(inner).enumerate() {
                    db[i % c] = db[i % c] + chunk.iter().copied().sum::<T>();
                }
                accumulate(grads, nodes, *bias, db);
            }
            accumulate(grads, nodes, *x, g);
        }
        Op::Conv2d { x, w, geom } => {
            let (dw, dx) = conv_like_backward(
                val(*x),
                val(*w),
                &g,
                geom,
                req(*w),
                req(*x),
                kernels::conv_backward_image,
                geom.in_len(),
                geom.out_len(),
            );
            if let Some(dw) = dw {
                accumulate(grads, nodes, *w, dw);
            }
            if let Some(dx) = dx {
                accumulate(grads, nodes, *x, dx);
            }
        }
        Op::ConvTranspose2d { x, w, geom } => {
            // Input and output roles are swapped relative to `geom`.
            let (dw, dx) = conv_like_backward(
                val(*x),
                val(*w),
                &g,
                geom,
                req(*w),
                req(*x),
                kernels::tconv_backward_image,
                geom.out_len(),
                geom.in_len(),
            );
            if let Some(dw) = dw {
                accumulate(grads, nodes, *w, dw);
            }
            if let Some(dx) = dx {
                accumulate(grads, nodes, *x, dx);
            }
        }
        Op::MatMul { a, b, m, k, n } => {
            if req(*a) {
                let mut da = vec![T::zero(); m * k];
                gemm(false, true, *m, *k, *n, T::one(), &g, val(*b), T::zero(), &mut da);
                accumulate(grads, nodes, *a, da);
            }
            if req(*b) {
                let mut db = vec![T::zero(); k * n];
                gemm(true, false, *k, *n, *m, T::one(), val(*a), &g, T::zero(), &mut db);
                accumulate(grads, nodes, *b, db);
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => {
            let shape = nodes[*x].value.shape();
            let c = shape[1];
            let inner: usize = shape[2..].iter().product();
            let count = T::from_usize(shape[0] * inner).unwrap();
            let gam = val(*gamma);
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for (i, (gc, xc)) in g.chunks(inner).zip(xhat.chunks(inner)).enumerate() {
                let ch = i % c;
                for (&gv, &xv) in gc.iter().zip(xc) {
                    sum_g[ch] = sum_g[ch] + gv;
                    sum_gx[ch] = sum_gx[ch] + gv * xv;
                }
            }
            if req(*gamma) {
                accumulate(grads, nodes, *gamma, sum_gx.clone());
            }
            if req(*beta) {
                accumulate(grads, nodes, *beta, sum_g.clone());
            }
            if req(*x) {
                let mut dx = vec![T::zero(); g.len()];
                for (i, ((dc, gc), xc)) in dx
                    .chunks_mut(inner)
                    .zip(g.chunks(inner))
                    .zip(xhat.chunks(inner))
                    .enumerate()
                {
                    let ch = i % c;
                    let scale = gam[ch] * inv_std[ch];
                    if *batch_stats {
                        let mg = sum_g[ch] / count;
                        let mgx = sum_gx[ch] / count;
                        for ((d, &gv), &xv) in dc.iter_mut().zip(gc).zip(xc) {
                            *d = scale * (gv - mg - xv * mgx);
                        }
                    } else {
                        for (d, &gv) in dc.iter_mut().zip(gc) {
                            *d = scale * gv;
                        }
                    }
                }
                accumulate(grads, nodes, *x, dx);
            }
        }
        Op::LeakyRelu { x, alpha } => {
            let d = g
                .iter()
                .zip(val(*x))
                .map(|(&gv, &xv)| if xv > T::zero() { gv } else { gv * *alpha })
                .collect();
            accumulate(grads, nodes, *x, d);
        }
        Op::Sigmoid(x) => {
            let d = g
                .iter()
                .zip(node.value.data())
                .map(|(&gv, &y)| gv * y * (T::one() - y))
                .collect();
            accumulate(grads, nodes, *x, d);
        }
        Op::Tanh(x) => {
            let d = g
                .iter()
                .zip(node.value.data())
                .map(|(&gv, &y)| gv * (T::one() - y * y))
                .collect();
            accumulate(grads, nodes, *x, d);
        }
        Op::Log(x) => {
            let d = g.iter().zip(val(*x)).map(|(&gv, &xv)| gv / xv).collect();
            accumulate(grads, nodes, *x, d);
        }
        Op::Clamp { x, lo, hi } => {
            let d = g
                .iter()
                .zip(val(*x))
                .map(|(&gv, &xv)| if xv >= *lo && xv <= *hi { gv } else { T::zero() })
                .collect();
            accumulate(grads, nodes, *x, d);
        }
        Op::Concat { inputs, widths } => {
            let total: usize = widths.iter().sum();
            let batch = g.len() / total;
            for (j, (&input, &width)) in inputs.iter().zip(widths).enumerate() {
                if !req(input) {
                    continue;
                }
                let offset: usize = widths[..j].iter().sum();
                let mut d = Vec::with_capacity(batch * width);
                for b in 0..batch {
                    let start = b * total + offset;
                    d.extend_from_slice(&g[start..start + width]);
                }
                accumulate(grads, nodes, input, d);
            }
        }
        Op::Reshape(x) => accumulate(grads, nodes, *x, g),
        Op::Sum(x) => {
            let n = nodes[*x].value.len();
            accumulate(grads, nodes, *x, vec![g[0]; n]);
        }
        Op::Mean(x) => {
            let n = nodes[*x].value.len();
            let v = g[0] / T::from_usize(n).unwrap();
            accumulate(grads, nodes, *x, vec![v; n]);
        }
    }
}

type ImageBackward<T> =
    fn(&[T], &[T], &[T], &ConvGeom, bool, bool) -> (Option<Vec<T>>, Option<Vec<T>>);

/// Batched backward for conv-like ops: per-image work may run in parallel,
/// weight gradients are then summed in image order.
#[allow(clippy::too_many_arguments)]
fn conv_like_backward<T: Real>(
    x: &[T],
    w: &[T],
    g: &[T],
    geom: &ConvGeom,
    want_w: bool,
    want_x: bool,
    image_backward: ImageBackward<T>,
    x_len: usize,
    out_len: usize,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let batch = x.len() / x_len;
    let per_image = par::map(Exec::default(), batch, |n| {
        image_backward(
            &x[n * x_len..(n + 1) * x_len],
            w,
            &g[n * out_len..(n + 1) * out_len],
            geom,
            want_w,
            want_x,
        )
    });
    let mut dw: Option<Vec<T>> = None;
    let mut dx = want_x.then(|| Vec::with_capacity(x.len()));
    for (pw, px) in per_image {
        if let Some(pw) = pw {
            match &mut dw {
                Some(acc) => acc.iter_mut().zip(pw).for_each(|(a, v)| *a = *a + v),
                None => dw = Some(pw),
            }
        }
        if let (Some(acc), Some(px)) = (&mut dx, px) {
            acc.extend(px);
        }
    }
    (dw, dx)
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    /// Copy of the recorded value.
    pub fn value(&self) -> Tensor<T> {
        self.tape.value(self.id).clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.value(self.id))
    }

    /// Value of a single-element var.
    pub fn item(&self) -> T {
        self.tape.value(self.id).data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    fn same_tape(&self, other: &Var<'t, T>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes cannot be combined"
        );
    }

    fn binary(
        self,
        other: Var<'t, T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        node: Op<T>,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&other);
        let out = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            if a.shape() != b.shape() {
                return Err(shape_err(op, a.shape(), b.shape()));
            }
            a.zip_map(&b, f)?
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, node, rg))
    }

    fn unary(self, f: impl Fn(T) -> T, node: Op<T>) -> Var<'t, T> {
        let out = self.tape.value(self.id).map(f);
        let rg = self.requires_grad();
        self.tape.push(out, node, rg)
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        self.unary(|v| v * c, Op::Scale(self.id, c))
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        self.unary(|v| v + c, Op::AddScalar(self.id))
    }

    pub fn square(self) -> Var<'t, T> {
        self.mul(self).expect("a var always matches its own shape")
    }

    /// Adds a per-channel bias `[C]` to `x` of shape `[N, C, ...]`.
    pub fn bias_add(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&bias);
        let out = {
            let x = self.tape.value(self.id);
            let b = self.tape.value(bias.id);
            let shape = x.shape();
            if shape.len() < 2 || b.shape() != [shape[1]] {
                return Err(shape_err("bias_add", shape, b.shape()));
            }
            let c = shape[1];
            let inner: usize = shape[2..].iter().product();
            let mut data = x.data().to_vec();
            for (i, chunk) in data.chunks_mut(inner).enumerate() {
                let bv = b.data()[i % c];
                chunk.iter_mut().for_each(|v| *v = *v + bv);
            }
            Tensor::new(shape, data)?
        };
        let rg = self.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(out, Op::BiasAdd { x: self.id, bias: bias.id }, rg))
    }

    /// 2-D cross-correlation of `[N, C, H, W]` with a `[F, C, kh, kw]` kernel.
    pub fn conv2d(self, kernel: Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        self.same_tape(&kernel);
        let (out, geom) = {
            let x = self.tape.value(self.id);
            let w = self.tape.value(kernel.id);
            let (xs, ws) = (x.shape(), w.shape());
            if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
                return Err(shape_err("conv2d", xs, ws));
            }
            let geom = ConvGeom::conv(xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, pad)?;
            let batch = xs[0];
            let mut data = vec![T::zero(); batch * geom.out_len()];
            let (xd, wd) = (x.data(), w.data());
            par::for_each_chunk(Exec::default(), &mut data, geom.out_len(), |n, out| {
                kernels::conv_forward_image(&xd[n * geom.in_len()..(n + 1) * geom.in_len()], wd, &geom, out)
            });
            (Tensor::new(&[batch, geom.c_out, geom.ho, geom.wo], data)?, geom)
        };
        let rg = self.requires_grad() || kernel.requires_grad();
        Ok(self.tape.push(
            out,
            Op::Conv2d {
                x: self.id,
                w: kernel.id,
                geom,
            },
            rg,
        ))
    }

    /// Transposed convolution of `[N, Cin, H, W]` with a `[Cin, Cout, kh, kw]`
    /// kernel; output extent `(H - 1) * stride - 2 * pad + kh`.
    pub fn conv_transpose2d(self, kernel: Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        self.same_tape(&kernel);
        let (out, geom) = {
            let x = self.tape.value(self.id);
            let w = self.tape.value(kernel.id);
            let (xs, ws) = (x.shape(), w.shape());
            if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] {
                return Err(shape_err("conv_transpose2d", xs, ws));
            }
            let geom = ConvGeom::transposed(xs[1], xs[2], xs[3], ws[1], ws[2], ws[3], stride, pad)?;
            let batch = xs[0];
            let mut data = vec![T::zero(); batch * geom.in_len()];
            let (xd, wd) = (x.data(), w.data());
            let xl = geom.out_len();
            par::for_each_chunk(Exec::default(), &mut data, geom.in_len(), |n, out| {
                kernels::tconv_forward_image(&xd[n * xl..(n + 1) * xl], wd, &geom, out)
            });
            (Tensor::new(&[batch, geom.c_in, geom.h, geom.w], data)?, geom)
        };
        let rg = self.requires_grad() || kernel.requires_grad();
        Ok(self.tape.push(
            out,
            Op::ConvTranspose2d {
                x: self.id,
                w: kernel.id,
                geom,
            },
            rg,
        ))
    }

    /// `[M, K] x [K, N]` matrix product.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other);
        let (out, m, k, n) = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            let (as_, bs) = (a.shape(), b.shape());
            if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
                return Err(shape_err("matmul", as_, bs));
            }
            let (m, k, n) = (as_[0], as_[1], bs[1]);
            let mut data = vec![T::zero(); m * n];
            gemm(false, false, m, n, k, T::one(), a.data(), b.data(), T::zero(), &mut data);
            (Tensor::new(&[m, n], data)?, m, k, n)
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(
            out,
            Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    /// Batch normalization over `[N, C, ...]` using the batch's own statistics.
    /// Returns the output and the observed per-channel statistics.
    pub fn batch_norm_train(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        eps: T,
    ) -> Result<(Var<'t, T>, ChannelStats<T>)> {
        let (out, xhat, inv_std, stats) = {
            let x = self.tape.value(self.id);
            let shape = x.shape();
            check_bn_shapes(shape, &self.tape.value(gamma.id), &self.tape.value(beta.id))?;
            let c = shape[1];
            let inner: usize = shape[2..].iter().product();
            let count = shape[0] * inner;
            if count == 0 {
                return Err(TensorError::InvalidArgument {
                    op: "batch_norm",
                    detail: "empty batch".into(),
                });
            }
            let cnt = T::from_usize(count).unwrap();
            let mut mean = vec![T::zero(); c];
            for (i, chunk) in x.data().chunks(inner).enumerate() {
                mean[i % c] = mean[i % c] + chunk.iter().copied().sum::<T>();
            }
            mean.iter_mut().for_each(|m| *m = *m / cnt);
            let mut var = vec![T::zero(); c];
            for (i, chunk) in x.data().chunks(inner).enumerate() {
                let m = mean[i % c];
                var[i % c] = var[i % c] + chunk.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
            }
            var.iter_mut().for_each(|v| *v = *v / cnt);
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let (xhat, out) = normalize_affine(&x, &mean, &inv_std, &self.tape.value(gamma.id), &self.tape.value(beta.id));
            (
                Tensor::new(shape, out)?,
                xhat,
                inv_std,
                ChannelStats { mean, var, count },
            )
        };
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let v = self.tape.push(
            out,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                batch_stats: true,
            },
            rg,
        );
        Ok((v, stats))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var<'t, T>> {
        let (out, xhat, inv_std) = {
            let x = self.tape.value(self.id);
            let shape = x.shape();
            check_bn_shapes(shape, &self.tape.value(gamma.id), &self.tape.value(beta.id))?;
            if mean.len() != shape[1] || var.len() != shape[1] {
                return Err(shape_err("batch_norm", shape, &[mean.len(), var.len()]));
            }
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let (xhat, out) = normalize_affine(&x, mean, &inv_std, &self.tape.value(gamma.id), &self.tape.value(beta.id));
            (Tensor::new(shape, out)?, xhat, inv_std)
        };
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Ok(self.tape.push(
            out,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                batch_stats: false,
            },
            rg,
        ))
    }

    pub fn leaky_relu(self, alpha: T) -> Var<'t, T> {
        self.unary(
            |v| if v > T::zero() { v } else { v * alpha },
            Op::LeakyRelu { x: self.id, alpha },
        )
    }

    pub fn relu(self) -> Var<'t, T> {
        self.leaky_relu(T::zero())
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(sigmoid, Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(|v| v.tanh(), Op::Tanh(self.id))
    }

    pub fn ln(self) -> Var<'t, T> {
        self.unary(|v| v.ln(), Op::Log(self.id))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(self, lo: T, hi: T) -> Var<'t, T> {
        self.unary(|v| v.max(lo).min(hi), Op::Clamp { x: self.id, lo, hi })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.tape.value(self.id).clone().reshape(shape)?;
        let rg = self.requires_grad();
        Ok(self.tape.push(out, Op::Reshape(self.id), rg))
    }

    /// Flattens `[N, ...]` to `[N, rest]`.
    pub fn flatten(self) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let n = shape.first().copied().unwrap_or(1);
        let rest: usize = shape.iter().skip(1).product();
        self.reshape(&[n, rest])
    }

    pub fn sum(self) -> Var<'t, T> {
        let s = self.tape.value(self.id).sum();
        let rg = self.requires_grad();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id), rg)
    }

    pub fn mean(self) -> Var<'t, T> {
        let (s, n) = {
            let v = self.tape.value(self.id);
            (v.sum(), v.len())
        };
        let m = s / T::from_usize(n.max(1)).unwrap();
        let rg = self.requires_grad();
        self.tape.push(Tensor::scalar(m), Op::Mean(self.id), rg)
    }

    /// Concatenates `[N, Ci, ...]` tensors along the channel axis.
    pub fn concat_channels(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            detail: "nothing to concatenate".into(),
        })?;
        let tape = first.tape;
        let (out, widths) = {
            let vals: Vec<_> = parts
                .iter()
                .map(|p| {
                    first.same_tape(p);
                    tape.value(p.id)
                })
                .collect();
            let s0 = vals[0].shape().to_vec();
            if s0.len() < 2 {
                return Err(shape_err("concat", &s0, &[]));
            }
            let mut channels = 0;
            for v in &vals {
                let s = v.shape();
                if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
                    return Err(shape_err("concat", &s0, s));
                }
                channels += s[1];
            }
            let batch = s0[0];
            let widths: Vec<usize> = vals.iter().map(|v| v.len() / batch.max(1)).collect();
            let mut data = Vec::with_capacity(widths.iter().sum::<usize>() * batch);
            for b in 0..batch {
                for (v, &w) in vals.iter().zip(&widths) {
                    data.extend_from_slice(&v.data()[b * w..(b + 1) * w]);
                }
            }
            let mut shape = s0.clone();
            shape[1] = channels;
            (Tensor::new(&shape, data)?, widths)
        };
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(tape.push(
            out,
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                widths,
            },
            rg,
        ))
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn check_bn_shapes<T: Real>(shape: &[usize], gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if shape.len() < 2 {
        return Err(shape_err("batch_norm", shape, gamma.shape()));
    }
    let c = shape[1];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err("batch_norm", shape, gamma.shape()));
    }
    Ok(())
}

fn normalize_affine<T: Real>(
    x: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> (Vec<T>, Vec<T>) {
    let shape = x.shape();
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for (i, ((src, xh), o)) in x
        .data()
        .chunks(inner)
        .zip(xhat.chunks_mut(inner))
        .zip(out.chunks_mut(inner))
        .enumerate()
    {
        let ch = i % c;
        let (m, is, gm, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
        for ((&v, h), y) in src.iter().zip(xh.iter_mut()).zip(o.iter_mut()) {
            *h = (v - m) * is;
            *y = gm * *h + bt;
        }
    }
    (xhat, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn square_gradient_is_twice_the_value() {
        let tape = Tape::new();
        let w = tape.param(t(&[1], &[3.0]));
        let loss = w.mul(w).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[6.0]);
    }

    #[test]
    fn disconnected_param_gets_zero_gradient() {
        let tape = Tape::new();
        let w = tape.param(t(&[1], &[3.0]));
        let p = tape.param(t(&[2], &[1.0, 2.0]));
        let loss = w.square().sum();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(p).is_none());
        assert_eq!(g.wrt(p).data(), &[0.0, 0.0]);
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let tape = Tape::new();
        let w = tape.param(t(&[1], &[-1.0]));
        let loss = w.leaky_relu(0.2).sum();
        let g = tape.backward(loss).unwrap();
        assert!((g.wrt(w).data()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        assert_eq!(
            tape.backward(w.scale(2.0)).unwrap_err(),
            TensorError::NonScalarLoss(vec![2])
        );
    }

    #[test]
    fn second_backward_errors() {
        let tape = Tape::new();
        let w = tape.param(t(&[1], &[2.0]));
        let loss = w.square().sum();
        tape.backward(loss).unwrap();
        assert_eq!(tape.backward(loss).unwrap_err(), TensorError::BackwardTwice);
    }

    #[test]
    fn conv_worked_examples() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let k = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        assert_eq!(x.conv2d(k, 1, 0).unwrap().value().data(), &[10.0]);

        let x = tape.constant(Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 - 4.0));
        let k = tape.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
        let y = x.conv2d(k, 1, 0).unwrap().value();
        let want: Vec<f64> = (0..9).map(|i| 2.0 * (i as f64 - 4.0)).collect();
        assert_eq!(y.data(), &want[..]);

        let z = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        let k = tape.constant(Tensor::from_fn(&[1, 1, 2, 2], |i| i as f64 + 0.5));
        assert!(z.conv2d(k, 1, 0).unwrap().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[1, 2, 4, 4]));
        let k = tape.constant(Tensor::<f64>::zeros(&[1, 3, 3, 3]));
        match x.conv2d(k, 1, 1).unwrap_err() {
            TensorError::ShapeMismatch { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![1, 2, 4, 4]);
                assert_eq!(rhs, vec![1, 3, 3, 3]);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn concat_then_split_gradients() {
        let tape = Tape::new();
        let a = tape.param(Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64));
        let b = tape.param(Tensor::from_fn(&[2, 2, 2, 2], |i| 100.0 + i as f64));
        let c = Var::concat_channels(&[a, b]).unwrap();
        assert_eq!(c.shape(), vec![2, 3, 2, 2]);
        let cv = c.value();
        assert_eq!(&cv.data()[0..4], &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(&cv.data()[4..6], &[100.0, 101.0]);
        assert_eq!(&cv.data()[12..16], &[4.0, 5.0, 6.0, 7.0]);
        let w = tape.constant(Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64));
        let loss = c.mul(w).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(a).data(), &[0.0, 1.0, 2.0, 3.0, 12.0, 13.0, 14.0, 15.0]);
        assert_eq!(&g.wrt(b).data()[..4], &[4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn batch_norm_train_normalizes_each_channel() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[3, 2, 2, 2], |i| (i * i) as f64 * 0.1));
        let gamma = tape.constant(Tensor::full(&[2], 1.0));
        let beta = tape.constant(Tensor::zeros(&[2]));
        let (y, stats) = x.batch_norm_train(gamma, beta, 1e-12).unwrap();
        assert_eq!(stats.count, 12);
        let y = y.value();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|n| y.data()[(n * 2 + ch) * 4..(n * 2 + ch + 1) * 4].to_vec())
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / 12.0;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }
}
