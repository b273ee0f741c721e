use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, ConvGeom, PadMode, Padding};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Backward rule for [`Var::custom_unary`]: `(input, upstream) -> input gradient`.
pub type CustomBackward = Rc<dyn Fn(&Tensor, &[f64]) -> Vec<f64>>;

enum Op {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        geom: ConvGeom,
        /// One im2col matrix per batch item; empty when nothing upstream
        /// needs a gradient.
        cols: Vec<Vec<f64>>,
    },
    MaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
    Upsample {
        input: usize,
        planes: usize,
        h: usize,
        w: usize,
    },
    Relu(usize),
    Concat {
        a: usize,
        b: usize,
        ca: usize,
        cb: usize,
    },
    Crop {
        input: usize,
        top: usize,
        left: usize,
    },
    Reshape(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Square(usize),
    SqrtEps(usize),
    Scale(usize, f64),
    MeanAll(usize),
    SumAll(usize),
    Custom {
        input: usize,
        backward: CustomBackward,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of differentiable operations.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it. [`Var::backward`] walks the list once in reverse and then clears it;
/// any [`Var`] created before that point becomes stale.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    generation: Cell<u64>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("generation", &self.generation.get())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records `t` as an input. Gradients are reported for it only when
    /// `t.requires_grad` is set.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.clone(), Op::Leaf, t.requires_grad)
    }

    /// Records a non-differentiable input.
    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push(t.clone(), Op::Leaf, false)
    }

    fn push(&self, mut value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        value.grad = None;
        value.requires_grad = requires_grad;
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
            generation: self.generation.get(),
        }
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    generation: u64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

/// Gradients of one backward pass, keyed by the leaves that asked for them.
#[derive(Debug, Default)]
pub struct Gradients {
    by_leaf: HashMap<usize, Vec<f64>>,
    generation: u64,
}

impl Gradients {
    /// Gradient of `leaf`, or `None` if it did not require grad, was not
    /// reachable from the loss, or belongs to another pass.
    pub fn get(&self, leaf: Var<'_>) -> Option<&[f64]> {
        if leaf.generation != self.generation {
            return None;
        }
        self.by_leaf.get(&leaf.id).map(Vec::as_slice)
    }

    /// Adds the gradient of `leaf` into `target.grad` (`+=`).
    pub fn accumulate_into(&self, leaf: Var<'_>, target: &mut Tensor) -> Result<()> {
        match self.get(leaf) {
            Some(g) => target.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn check(&self) -> Result<()> {
        if self.generation != self.tape.generation.get() {
            return Err(Error::Contract(
                "use of a Var after its tape was consumed".into(),
            ));
        }
        Ok(())
    }

    fn check_pair(&self, other: &Var<'t>) -> Result<()> {
        self.check()?;
        other.check()?;
        if !std::ptr::eq(self.tape, other.tape) {
            return Err(Error::Contract(
                "operands recorded on different tapes".into(),
            ));
        }
        Ok(())
    }

    /// Panics on a stale `Var`: value accessors have no error channel.
    fn with<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        assert!(
            self.check().is_ok(),
            "use of a Var after its tape was consumed"
        );
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// A copy of the recorded value.
    pub fn value(&self) -> Tensor {
        self.with(|t| {
            let mut t = t.clone();
            t.requires_grad = false;
            t
        })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with(|t| t.shape().to_vec())
    }

    pub fn item(&self) -> Result<f64> {
        self.with(Tensor::item)
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, self.needs_grad())
    }

    /// Cross-correlation with symmetric padding.
    ///
    /// `weight` is `Cout×Cin×kh×kw`; output extents are
    /// `(H + 2·padding − kh)/stride + 1` (floor), likewise for width.
    pub fn conv2d(
        &self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        padding: usize,
        pad_mode: PadMode,
    ) -> Result<Var<'t>> {
        self.conv2d_padded(weight, bias, stride, Padding::uniform(padding), pad_mode)
    }

    /// [`conv2d`](Self::conv2d) with independent padding per side.
    pub fn conv2d_padded(
        &self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        pad: Padding,
        pad_mode: PadMode,
    ) -> Result<Var<'t>> {
        const OP: &str = "conv2d";
        self.check_pair(&weight)?;
        if let Some(b) = &bias {
            self.check_pair(b)?;
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d: stride must be positive".into()));
        }
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id].value;
        let wt = &nodes[weight.id].value;
        let (n, cin, h, w) = x.dims4(OP)?;
        let (cout, wcin, kh, kw) = match wt.shape()[..] {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(Error::dim(OP, "weight rank", 4, wt.shape().len())),
        };
        if wcin != cin {
            return Err(Error::dim(OP, "input channels", wcin, cin));
        }
        let (ph, pw) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
        if kh == 0 || kh > ph {
            return Err(Error::dim(OP, "kernel height", format!("1..={ph}"), kh));
        }
        if kw == 0 || kw > pw {
            return Err(Error::dim(OP, "kernel width", format!("1..={pw}"), kw));
        }
        if let Some(b) = &bias {
            let bs = nodes[b.id].value.shape();
            if bs != [cout] {
                return Err(Error::dim(OP, "bias", cout, format!("{bs:?}")));
            }
        }
        let geom = ConvGeom {
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            mode: pad_mode,
            oh: (ph - kh) / stride + 1,
            ow: (pw - kw) / stride + 1,
        };
        let needs = nodes[self.id].requires_grad
            || nodes[weight.id].requires_grad
            || bias.is_some_and(|b| nodes[b.id].requires_grad);
        let (k, p) = (geom.patch_len(), geom.out_plane());
        let mut out = vec![0.0; n * cout * p];
        let mut saved = Vec::with_capacity(n);
        for b in 0..n {
            let mut cols = vec![0.0; k * p];
            im2col_item(x, b, &geom, &mut cols);
            let o = &mut out[b * cout * p..(b + 1) * cout * p];
            kernels::matmul(wt.data(), &cols, cout, k, p, o);
            if let Some(bv) = &bias {
                let bd = nodes[bv.id].value.data();
                for (co, row) in o.chunks_mut(p).enumerate() {
                    row.iter_mut().for_each(|v| *v += bd[co]);
                }
            }
            if needs {
                saved.push(cols);
            }
        }
        drop(nodes);
        let value = Tensor::new(&[n, cout, geom.oh, geom.ow], out)?;
        let op = Op::Conv2d {
            input: self.id,
            weight: weight.id,
            bias: bias.map(|b| b.id),
            geom,
            cols: saved,
        };
        Ok(self.tape.push(value, op, needs))
    }

    /// 2×2 max pooling with stride 2; H and W must be even.
    pub fn maxpool2x2(&self) -> Result<Var<'t>> {
        self.check()?;
        let (value, argmax) = self.with(|x| -> Result<_> {
            let (n, c, h, w) = x.dims4("maxpool2x2")?;
            if h % 2 != 0 {
                return Err(Error::dim("maxpool2x2", "height", "even", h));
            }
            if w % 2 != 0 {
                return Err(Error::dim("maxpool2x2", "width", "even", w));
            }
            let (v, arg) = kernels::maxpool2x2(x.data(), n * c, h, w);
            Ok((Tensor::new(&[n, c, h / 2, w / 2], v)?, arg))
        })?;
        Ok(self.unary(
            value,
            Op::MaxPool {
                input: self.id,
                argmax,
            },
        ))
    }

    pub fn upsample_nearest2x(&self) -> Result<Var<'t>> {
        self.check()?;
        let (value, planes, h, w) = self.with(|x| -> Result<_> {
            let (n, c, h, w) = x.dims4("upsample_nearest2x")?;
            let v = kernels::upsample_nearest2x(x.data(), n * c, h, w);
            Ok((Tensor::new(&[n, c, 2 * h, 2 * w], v)?, n * c, h, w))
        })?;
        Ok(self.unary(
            value,
            Op::Upsample {
                input: self.id,
                planes,
                h,
                w,
            },
        ))
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.check()?;
        let value = self.with(|x| x.map(|v| if v > 0.0 { v } else { 0.0 }));
        Ok(self.unary(value, Op::Relu(self.id)))
    }

    /// Channel-axis concatenation `[self, other]`.
    pub fn concat_channels(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_pair(&other)?;
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        let b = &nodes[other.id].value;
        let (n, ca, h, w) = a.dims4("concat_channels")?;
        let (nb, cb, hb, wb) = b.dims4("concat_channels")?;
        if n != nb {
            return Err(Error::dim("concat_channels", "batch", n, nb));
        }
        if h != hb {
            return Err(Error::dim("concat_channels", "height", h, hb));
        }
        if w != wb {
            return Err(Error::dim("concat_channels", "width", w, wb));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for i in 0..n {
            out.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
            out.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
        }
        let needs = nodes[self.id].requires_grad || nodes[other.id].requires_grad;
        drop(nodes);
        let value = Tensor::new(&[n, ca + cb, h, w], out)?;
        Ok(self.tape.push(
            value,
            Op::Concat {
                a: self.id,
                b: other.id,
                ca,
                cb,
            },
            needs,
        ))
    }

    /// Spatial window `[top, top+height) × [left, left+width)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Var<'t>> {
        self.check()?;
        let value = self.with(|x| -> Result<_> {
            let (n, c, h, w) = x.dims4("crop")?;
            if top + height > h {
                return Err(Error::dim("crop", "height", h, top + height));
            }
            if left + width > w {
                return Err(Error::dim("crop", "width", w, left + width));
            }
            let mut out = Vec::with_capacity(n * c * height * width);
            for p in 0..n * c {
                for y in top..top + height {
                    let r = p * h * w + y * w;
                    out.extend_from_slice(&x.data()[r + left..r + left + width]);
                }
            }
            Tensor::new(&[n, c, height, width], out)
        })?;
        Ok(self.unary(
            value,
            Op::Crop {
                input: self.id,
                top,
                left,
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        self.check()?;
        let value = self.value().reshape(shape)?;
        Ok(self.unary(value, Op::Reshape(self.id)))
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        self.check_pair(&other)?;
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        let b = &nodes[other.id].value;
        if a.shape() != b.shape() {
            return Err(Error::dim(
                name,
                "shape",
                format!("{:?}", a.shape()),
                format!("{:?}", b.shape()),
            ));
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(a.shape(), data)?;
        let needs = nodes[self.id].requires_grad || nodes[other.id].requires_grad;
        drop(nodes);
        Ok(self.tape.push(value, op, needs))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.check()?;
        let value = self.with(|x| x.map(|v| v * v));
        Ok(self.unary(value, Op::Square(self.id)))
    }

    /// `sqrt(x + eps)`, whose derivative stays finite at `x = 0` for `eps > 0`.
    pub fn sqrt_eps(&self, eps: f64) -> Result<Var<'t>> {
        self.check()?;
        let value = self.with(|x| x.map(|v| (v + eps).sqrt()));
        Ok(self.unary(value, Op::SqrtEps(self.id)))
    }

    pub fn scalar_mul(&self, s: f64) -> Result<Var<'t>> {
        self.check()?;
        let value = self.with(|x| x.map(|v| v * s));
        Ok(self.unary(value, Op::Scale(self.id, s)))
    }

    /// Mean of every element, as a scalar.
    pub fn mean_all(&self) -> Result<Var<'t>> {
        self.check()?;
        let value = self.with(|x| -> Result<_> {
            if x.is_empty() {
                return Err(Error::Contract("mean_all of an empty tensor".into()));
            }
            Ok(Tensor::scalar(
                x.data().iter().sum::<f64>() / x.len() as f64,
            ))
        })?;
        Ok(self.unary(value, Op::MeanAll(self.id)))
    }

    pub fn sum_all(&self) -> Result<Var<'t>> {
        self.check()?;
        let value = self.with(|x| Tensor::scalar(x.data().iter().sum()));
        Ok(self.unary(value, Op::SumAll(self.id)))
    }

    /// Elementwise op with a caller-supplied backward rule. Intended for
    /// verification fixtures; the forward `f` must preserve the shape.
    pub fn custom_unary(
        &self,
        f: impl Fn(&Tensor) -> Tensor,
        backward: CustomBackward,
    ) -> Result<Var<'t>> {
        self.check()?;
        let value = self.with(|x| {
            let y = f(x);
            (y.shape() == x.shape()).then_some(y)
        });
        let value =
            value.ok_or_else(|| Error::Contract("custom_unary changed the shape".into()))?;
        Ok(self.unary(
            value,
            Op::Custom {
                input: self.id,
                backward,
            },
        ))
    }

    /// Reverse-mode sweep from this scalar. Consumes the tape's contents:
    /// afterwards the tape is empty and every earlier `Var` is stale.
    pub fn backward(&self) -> Result<Gradients> {
        self.check()?;
        if self.with(Tensor::len) != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        let nodes = std::mem::take(&mut *self.tape.nodes.borrow_mut());
        let generation = self.tape.generation.get();
        self.tape.generation.set(generation + 1);

        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.id + 1);
        grads.resize_with(self.id + 1, || None);
        grads[self.id] = Some(vec![1.0]);
        let mut by_leaf = HashMap::new();

        for id in (0..=self.id).rev() {
            let node = &nodes[id];
            let Some(g) = grads[id].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            propagate(&nodes, node, &g, &mut grads)?;
            if let Op::Leaf = node.op {
                by_leaf.insert(id, g);
            }
        }
        Ok(Gradients {
            by_leaf,
            generation,
        })
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Result<Var<'t>>;
    fn add(self, rhs: Self) -> Self::Output {
        Var::add(&self, rhs)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Result<Var<'t>>;
    fn sub(self, rhs: Self) -> Self::Output {
        Var::sub(&self, rhs)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Result<Var<'t>>;
    fn mul(self, rhs: Self) -> Self::Output {
        Var::mul(&self, rhs)
    }
}

fn im2col_item(x: &Tensor, b: usize, g: &ConvGeom, cols: &mut [f64]) {
    let item = g.cin * g.h * g.w;
    kernels::im2col(&x.data()[b * item..(b + 1) * item], g, cols);
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, g: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
    let val = |id: usize| &nodes[id].value;
    let wants = |id: usize| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
            cols,
        } => {
            let w = val(*weight);
            let cout = w.shape()[0];
            let (k, p) = (geom.patch_len(), geom.out_plane());
            let n = node.value.shape()[0];
            if let Some(b) = bias.filter(|&b| wants(b)) {
                let mut db = vec![0.0; cout];
                for item in g.chunks(cout * p) {
                    for (co, row) in item.chunks(p).enumerate() {
                        db[co] += row.iter().sum::<f64>();
                    }
                }
                accumulate(grads, nodes, b, db);
            }
            if wants(*weight) {
                let mut dw = vec![0.0; cout * k];
                for (b, c) in cols.iter().enumerate() {
                    let gb = &g[b * cout * p..(b + 1) * cout * p];
                    kernels::matmul_a_bt_acc(gb, c, cout, p, k, &mut dw);
                }
                accumulate(grads, nodes, *weight, dw);
            }
            if wants(*input) {
                let item = geom.cin * geom.h * geom.w;
                let mut dx = vec![0.0; n * item];
                let mut dcols = vec![0.0; k * p];
                for b in 0..n {
                    let gb = &g[b * cout * p..(b + 1) * cout * p];
                    kernels::matmul_at_b(w.data(), gb, cout, k, p, &mut dcols);
                    kernels::col2im(&dcols, geom, &mut dx[b * item..(b + 1) * item]);
                }
                accumulate(grads, nodes, *input, dx);
            }
        }
        Op::MaxPool { input, argmax } => {
            let mut dx = vec![0.0; val(*input).len()];
            for (&i, &gv) in argmax.iter().zip(g) {
                dx[i] += gv;
            }
            accumulate(grads, nodes, *input, dx);
        }
        Op::Upsample {
            input,
            planes,
            h,
            w,
        } => {
            let dx = kernels::upsample_nearest2x_backward(g, *planes, *h, *w);
            accumulate(grads, nodes, *input, dx);
        }
        Op::Relu(x) => {
            let dx = val(*x)
                .data()
                .iter()
                .zip(g)
                .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *x, dx);
        }
        Op::Concat { a, b, ca, cb } => {
            let s = node.value.shape();
            let (n, plane) = (s[0], s[2] * s[3]);
            let (mut ga, mut gb) = (
                Vec::with_capacity(n * ca * plane),
                Vec::with_capacity(n * cb * plane),
            );
            for item in g.chunks((ca + cb) * plane) {
                ga.extend_from_slice(&item[..ca * plane]);
                gb.extend_from_slice(&item[ca * plane..]);
            }
            accumulate(grads, nodes, *a, ga);
            accumulate(grads, nodes, *b, gb);
        }
        Op::Crop { input, top, left } => {
            let (n, c, h, w) = val(*input).dims4("crop")?;
            let (ch, cw) = (node.value.shape()[2], node.value.shape()[3]);
            let mut dx = vec![0.0; n * c * h * w];
            for p in 0..n * c {
                for y in 0..ch {
                    let src = &g[p * ch * cw + y * cw..p * ch * cw + (y + 1) * cw];
                    let r = p * h * w + (y + top) * w + left;
                    dx[r..r + cw].copy_from_slice(src);
                }
            }
            accumulate(grads, nodes, *input, dx);
        }
        Op::Reshape(x) => accumulate(grads, nodes, *x, g.to_vec()),
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                let da = g.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                accumulate(grads, nodes, *a, da);
            }
            if wants(*b) {
                let db = g.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                accumulate(grads, nodes, *b, db);
            }
        }
        Op::Square(x) => {
            let dx = g
                .iter()
                .zip(val(*x).data())
                .map(|(gv, v)| 2.0 * v * gv)
                .collect();
            accumulate(grads, nodes, *x, dx);
        }
        Op::SqrtEps(x) => {
            let dx = g
                .iter()
                .zip(node.value.data())
                .map(|(gv, y)| gv * 0.5 / y)
                .collect();
            accumulate(grads, nodes, *x, dx);
        }
        Op::Scale(x, s) => accumulate(grads, nodes, *x, g.iter().map(|v| v * s).collect()),
        Op::MeanAll(x) => {
            let n = val(*x).len();
            accumulate(grads, nodes, *x, vec![g[0] / n as f64; n]);
        }
        Op::SumAll(x) => {
            let n = val(*x).len();
            accumulate(grads, nodes, *x, vec![g[0]; n]);
        }
        Op::Custom { input, backward } => {
            let dx = backward(val(*input), g);
            if dx.len() != val(*input).len() {
                return Err(Error::Contract(
                    "custom backward returned wrong length".into(),
                ));
            }
            accumulate(grads, nodes, *input, dx);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_sum_of_ones() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = tape.constant(&Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = tape.constant(&Tensor::zeros(&[1]));
        let y = x.conv2d(w, Some(b), 1, 0, PadMode::Zero).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 1, 1]);
        assert_eq!(y.item().unwrap(), 9.0);
    }

    #[test]
    fn conv_identity_kernel() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[1, 1, 1, 1], &[-3.25]));
        let w = tape.constant(&t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.constant(&Tensor::zeros(&[1]));
        let y = x.conv2d(w, Some(b), 1, 0, PadMode::Zero).unwrap();
        assert_eq!(y.item().unwrap(), -3.25);
    }

    #[test]
    fn conv_output_extent_floors() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[1, 1, 6, 7]));
        let w = tape.constant(&Tensor::zeros(&[2, 1, 3, 3]));
        let y = x.conv2d(w, None, 2, 1, PadMode::Zero).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn conv_errors_name_the_axis() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.constant(&Tensor::zeros(&[1, 3, 3, 3]));
        match x.conv2d(w, None, 1, 1, PadMode::Zero) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "input channels"),
            other => panic!("unexpected {other:?}"),
        }
        let big = tape.constant(&Tensor::zeros(&[1, 2, 7, 7]));
        match x.conv2d(big, None, 1, 1, PadMode::Zero) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "kernel height"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn maxpool_single_window_and_odd_error() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(x.maxpool2x2().unwrap().item().unwrap(), 4.0);
        let odd = tape.constant(&Tensor::zeros(&[1, 1, 3, 4]));
        assert!(matches!(
            odd.maxpool2x2(),
            Err(Error::Dimension { axis: "height", .. })
        ));
    }

    #[test]
    fn upsample_replicates() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[1, 1, 1, 1], &[7.0]));
        let y = x.upsample_nearest2x().unwrap().value();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn relu_values() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[2], &[-1.0, 3.5]));
        assert_eq!(x.relu().unwrap().value().data(), &[0.0, 3.5]);
    }

    #[test]
    fn concat_shapes_and_empty() {
        let tape = Tape::new();
        let a = tape.constant(&Tensor::full(&[1, 2, 4, 4], 1.0));
        let b = tape.constant(&Tensor::full(&[1, 3, 4, 4], 2.0));
        assert_eq!(a.concat_channels(b).unwrap().shape(), vec![1, 5, 4, 4]);
        let e = tape.constant(&Tensor::zeros(&[1, 0, 4, 4]));
        assert_eq!(a.concat_channels(e).unwrap().value(), a.value());
        let c = tape.constant(&Tensor::zeros(&[1, 1, 4, 5]));
        assert!(matches!(
            a.concat_channels(c),
            Err(Error::Dimension { axis: "width", .. })
        ));
    }

    #[test]
    fn elementwise_trivia() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(x.mean_all().unwrap().item().unwrap(), 2.5);
        let z = tape.constant(&Tensor::scalar(0.0));
        assert!((z.sqrt_eps(1e-12).unwrap().item().unwrap() - 1e-6).abs() < 1e-18);
        let y = tape.constant(&Tensor::zeros(&[3]));
        assert!(matches!(x.add(y), Err(Error::Dimension { .. })));
    }

    #[test]
    fn backward_mean_of_squares() {
        let tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let loss = x.square().unwrap().mean_all().unwrap();
        let g = loss.backward().unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 2.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(&[2]).with_requires_grad(true));
        assert!(matches!(x.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(&t(&[1], &[3.0]).with_requires_grad(true));
        // x + x*x -> 1 + 2x
        let y = (x + (x * x).unwrap()).unwrap();
        let g = y.sum_all().unwrap().backward().unwrap();
        assert_eq!(g.get(x).unwrap(), &[7.0]);
    }

    #[test]
    fn stale_vars_are_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(1.0).with_requires_grad(true));
        let g = x.square().unwrap().backward().unwrap();
        assert!(g.get(x).is_some());
        assert!(x.relu().is_err());
        let x2 = tape.leaf(&Tensor::scalar(1.0).with_requires_grad(true));
        assert!(g.get(x2).is_none());
    }

    #[test]
    fn independent_tapes_do_not_interfere() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.leaf(&t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let b = t2.leaf(&t(&[2], &[5.0, -1.0]).with_requires_grad(true));
        let la = a.square().unwrap().sum_all().unwrap();
        let lb = b.scalar_mul(3.0).unwrap().sum_all().unwrap();
        let gb = lb.backward().unwrap();
        let ga = la.backward().unwrap();
        assert_eq!(ga.get(a).unwrap(), &[2.0, 4.0]);
        assert_eq!(gb.get(b).unwrap(), &[3.0, 3.0]);
        assert!(a.add(b).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(2.0).with_requires_grad(true));
        let c = tape.constant(&Tensor::scalar(5.0));
        let g = (x * c).unwrap().backward().unwrap();
        assert_eq!(g.get(x).unwrap(), &[5.0]);
        assert!(g.get(c).is_none());
    }
}
