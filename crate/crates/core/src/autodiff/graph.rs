use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use super::error::AutodiffError;
use super::kernels::{self, ConvGeometry, LstmCache};
use super::params::{ParamId, ParamStore};
use super::scalar::Scalar;
use super::tensor::{numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise single-input primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Log1p,
    Abs,
    Sqrt,
    Sin,
    Cos,
    Sinh,
    Cosh,
    /// `max(x, 0) + log(1 + exp(-|x|))`
    Softplus,
}

impl Unary {
    pub const ALL: [Unary; 13] = [
        Unary::Relu,
        Unary::Sigmoid,
        Unary::Tanh,
        Unary::Exp,
        Unary::Log,
        Unary::Log1p,
        Unary::Abs,
        Unary::Sqrt,
        Unary::Sin,
        Unary::Cos,
        Unary::Sinh,
        Unary::Cosh,
        Unary::Softplus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Log1p => "log1p",
            Unary::Abs => "abs",
            Unary::Sqrt => "sqrt",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Sinh => "sinh",
            Unary::Cosh => "cosh",
            Unary::Softplus => "softplus",
        }
    }

    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Unary::Relu => x.max(T::zero()),
            Unary::Sigmoid => kernels::sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Log1p => x.ln_1p(),
            Unary::Abs => x.abs(),
            Unary::Sqrt => x.sqrt(),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Sinh => x.sinh(),
            Unary::Cosh => x.cosh(),
            Unary::Softplus => x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
        }
    }

    /// d(output)/d(input) given input `x` and output `y`.
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        let one = T::one();
        match self {
            // subgradient 0 at the kink
            Unary::Relu => {
                if x > T::zero() {
                    one
                } else {
                    T::zero()
                }
            }
            Unary::Sigmoid => y * (one - y),
            Unary::Tanh => one - y * y,
            Unary::Exp => y,
            Unary::Log => one / x,
            Unary::Log1p => one / (one + x),
            Unary::Abs => {
                if x > T::zero() {
                    one
                } else if x < T::zero() {
                    -one
                } else {
                    T::zero()
                }
            }
            Unary::Sqrt => one / (y + y),
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Sinh => x.cosh(),
            Unary::Cosh => x.sinh(),
            Unary::Softplus => kernels::sigmoid(x),
        }
    }
}

/// User-supplied primitive with an explicit backward rule.
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, String>;
    /// One gradient per input, shaped like that input.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>>;
}

enum Op<T: Scalar> {
    Input { requires_grad: bool },
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: T },
    MaxScalar { x: Var, floor: T },
    ScaleBy { x: Var, s: Var },
    AddRow { x: Var, b: Var },
    MatMul { a: Var, b: Var },
    Conv2d { x: Var, k: Var, b: Var, geo: ConvGeometry, cols: Vec<T> },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Unary { x: Var, f: Unary },
    Softmax { x: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    LstmCell { inputs: [Var; 6], cache: LstmCache<T> },
    Custom { inputs: Vec<Var>, op: Arc<dyn CustomOp<T>> },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::MaxScalar { .. } => "max_scalar",
            Op::ScaleBy { .. } => "scale_by",
            Op::AddRow { .. } => "add_row",
            Op::MatMul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "maxpool2x2",
            Op::Unary { f, .. } => f.name(),
            Op::Softmax { .. } => "softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::LstmCell { .. } => "lstm_cell",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::gradients`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    params: HashMap<ParamId, Tensor<T>>,
    leaves: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `id`; `None` when the parameter is not on the graph.
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Gradient for `id`, zero-filled when the loss does not reach it.
    pub fn get_or_zero(&self, id: ParamId, store: &ParamStore<T>) -> Tensor<T> {
        self.params
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape().to_vec()))
    }

    /// Gradient of a leaf created with [`Graph::variable`].
    pub fn wrt(&self, leaf: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&leaf)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }

    #[cfg(test)]
    pub(crate) fn insert(&mut self, id: ParamId, grad: Tensor<T>) {
        self.params.insert(id, grad);
    }
}

/// Define-by-run computation graph. Every primitive call evaluates
/// immediately and appends a node, so nodes are topologically ordered by
/// construction.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    param_nodes: RefCell<HashMap<ParamId, Var>>,
    frozen: RefCell<HashSet<ParamId>>,
    freeze_all: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

type Res = Result<Var, AutodiffError>;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            param_nodes: RefCell::new(HashMap::new()),
            frozen: RefCell::new(HashSet::new()),
            freeze_all: false,
        }
    }

    /// Graph in which every parameter enters as a constant, for evaluation.
    pub fn inference() -> Self {
        Self {
            freeze_all: true,
            ..Self::new()
        }
    }

    /// Parameters in `ids` enter this graph as constants: no gradient flows
    /// into them or into anything computed only from them. Must be called
    /// before the parameters are first used.
    pub fn freeze(&self, ids: impl IntoIterator<Item = ParamId>) {
        self.frozen.borrow_mut().extend(ids);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.data()[0]
    }

    fn next_index(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn mismatch(&self, op: &'static str, detail: String) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            node: self.next_index(),
            op,
            detail,
        }
    }

    fn push(&self, op: Op<T>, value: Tensor<T>) -> Res {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { node: index, op: op.name() });
        }
        let requires_grad = match &op {
            Op::Input { requires_grad } => *requires_grad,
            Op::Param(_) => true,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => nodes[a.0].requires_grad || nodes[b.0].requires_grad,
            Op::Affine { x, .. }
            | Op::MaxScalar { x, .. }
            | Op::MaxPool2 { x, .. }
            | Op::Unary { x, .. }
            | Op::Softmax { x, .. }
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Slice { x, .. }
            | Op::Reshape(x) => nodes[x.0].requires_grad,
            Op::ScaleBy { x, s } => nodes[x.0].requires_grad || nodes[s.0].requires_grad,
            Op::AddRow { x, b } => nodes[x.0].requires_grad || nodes[b.0].requires_grad,
            Op::MatMul { a, b } => nodes[a.0].requires_grad || nodes[b.0].requires_grad,
            Op::Conv2d { x, k, b, .. } => [x, k, b].iter().any(|v| nodes[v.0].requires_grad),
            Op::Concat { xs, .. } => xs.iter().any(|v| nodes[v.0].requires_grad),
            Op::LstmCell { inputs, .. } => inputs.iter().any(|v| nodes[v.0].requires_grad),
            Op::Custom { inputs, .. } => inputs.iter().any(|v| nodes[v.0].requires_grad),
        };
        nodes.push(Node { op, value, requires_grad });
        Ok(Var(index))
    }

    /// Constant leaf (no gradient).
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(Op::Input { requires_grad: false }, value)
            .expect("constant leaf must be finite")
    }

    /// Checked constant leaf; fails on non-finite data.
    pub fn input(&self, value: Tensor<T>) -> Res {
        self.push(Op::Input { requires_grad: false }, value)
    }

    /// Non-parameter leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&self, value: Tensor<T>) -> Res {
        self.push(Op::Input { requires_grad: true }, value)
    }

    /// Leaf for a registered parameter. Repeated calls with the same id
    /// return the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.borrow().get(&id) {
            return v;
        }
        let op = if self.freeze_all || self.frozen.borrow().contains(&id) {
            Op::Input { requires_grad: false }
        } else {
            Op::Param(id)
        };
        let v = self
            .push(op, store.get(id).clone())
            .unwrap_or_else(|e| panic!("parameter `{}`: {e}", store.name(id)));
        self.param_nodes.borrow_mut().insert(id, v);
        v
    }

    fn binary_same_shape(&self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, AutodiffError> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        if ta.shape() != tb.shape() {
            let detail = format!("{:?} vs {:?}", ta.shape(), tb.shape());
            drop(nodes);
            return Err(self.mismatch(op, detail));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::new(ta.shape().to_vec(), data).expect("same shape"))
    }

    pub fn add(&self, a: Var, b: Var) -> Res {
        let v = self.binary_same_shape(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&self, a: Var, b: Var) -> Res {
        let v = self.binary_same_shape(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&self, a: Var, b: Var) -> Res {
        let v = self.binary_same_shape(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), v)
    }

    pub fn square(&self, a: Var) -> Res {
        self.mul(a, a)
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&self, x: Var, scale: T, shift: T) -> Res {
        let v = self.value(x).map(|e| scale * e + shift);
        self.push(Op::Affine { x, scale }, v)
    }

    pub fn scale(&self, x: Var, scale: T) -> Res {
        self.affine(x, scale, T::zero())
    }

    pub fn neg(&self, x: Var) -> Res {
        self.affine(x, -T::one(), T::zero())
    }

    /// `max(x, floor)`; ties route the gradient to the constant (zero).
    pub fn max_scalar(&self, x: Var, floor: T) -> Res {
        let v = self.value(x).map(|e| e.max(floor));
        self.push(Op::MaxScalar { x, floor }, v)
    }

    /// Multiply every element of `x` by the one-element node `s`.
    pub fn scale_by(&self, x: Var, s: Var) -> Res {
        let factor = {
            let nodes = self.nodes.borrow();
            nodes[s.0].value.item()
        };
        let Some(factor) = factor else {
            let detail = format!("scale operand has shape {:?}", self.shape(s));
            return Err(self.mismatch("scale_by", detail));
        };
        let v = self.value(x).map(|e| e * factor);
        self.push(Op::ScaleBy { x, s }, v)
    }

    /// Add the vector `b` to every row of `x` (last axis broadcast).
    pub fn add_row(&self, x: Var, b: Var) -> Res {
        let v = {
            let nodes = self.nodes.borrow();
            let (tx, tb) = (&nodes[x.0].value, &nodes[b.0].value);
            let n = *tx.shape().last().unwrap_or(&1);
            if tb.rank() != 1 || tb.len() != n || tx.rank() == 0 {
                let detail = format!("{:?} + row {:?}", tx.shape(), tb.shape());
                drop(nodes);
                return Err(self.mismatch("add_row", detail));
            }
            let mut out = tx.clone();
            for row in out.data_mut().chunks_mut(n) {
                for (o, &bv) in row.iter_mut().zip(tb.data()) {
                    *o += bv;
                }
            }
            out
        };
        self.push(Op::AddRow { x, b }, v)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Res {
        let v = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
                let detail = format!("{:?} x {:?}", ta.shape(), tb.shape());
                drop(nodes);
                return Err(self.mismatch("matmul", detail));
            }
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            Tensor::new(vec![m, n], kernels::matmul(m, k, n, ta.data(), tb.data())).expect("matmul shape")
        };
        self.push(Op::MatMul { a, b }, v)
    }

    /// Channels-last convolution, stride 1, zero "same" padding.
    /// `x: [B,H,W,C]`, `k: [KH,KW,C,O]` (odd KH/KW), `b: [O]`.
    pub fn conv2d(&self, x: Var, k: Var, b: Var) -> Res {
        let (value, geo, cols) = {
            let nodes = self.nodes.borrow();
            let (tx, tk, tb) = (&nodes[x.0].value, &nodes[k.0].value, &nodes[b.0].value);
            let ok = tx.rank() == 4
                && tk.rank() == 4
                && tk.shape()[2] == tx.shape()[3]
                && tk.shape()[0] % 2 == 1
                && tk.shape()[1] % 2 == 1
                && tb.shape() == [tk.shape()[3]];
            if !ok {
                let detail = format!("x {:?}, kernel {:?}, bias {:?}", tx.shape(), tk.shape(), tb.shape());
                drop(nodes);
                return Err(self.mismatch("conv2d", detail));
            }
            let s = tx.shape();
            let geo = ConvGeometry {
                batch: s[0],
                height: s[1],
                width: s[2],
                in_channels: s[3],
                kernel_h: tk.shape()[0],
                kernel_w: tk.shape()[1],
                out_channels: tk.shape()[3],
            };
            let cols = kernels::im2col(&geo, tx.data());
            let mut out = kernels::matmul(geo.positions(), geo.patch_len(), geo.out_channels, &cols, tk.data());
            for row in out.chunks_mut(geo.out_channels) {
                for (o, &bv) in row.iter_mut().zip(tb.data()) {
                    *o += bv;
                }
            }
            let t = Tensor::new(vec![geo.batch, geo.height, geo.width, geo.out_channels], out).expect("conv shape");
            (t, geo, cols)
        };
        self.push(Op::Conv2d { x, k, b, geo, cols }, value)
    }

    /// 2×2 stride-2 max pooling over `[B,H,W,C]` with even H and W.
    pub fn maxpool2x2(&self, x: Var) -> Res {
        let (value, argmax) = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            let s = tx.shape();
            if tx.rank() != 4 || s[1] % 2 != 0 || s[2] % 2 != 0 {
                let detail = format!("input {:?}", s);
                drop(nodes);
                return Err(self.mismatch("maxpool2x2", detail));
            }
            let (out, idx) = kernels::maxpool2([s[0], s[1], s[2], s[3]], tx.data());
            (Tensor::new(vec![s[0], s[1] / 2, s[2] / 2, s[3]], out).expect("pool shape"), idx)
        };
        self.push(Op::MaxPool2 { x, argmax }, value)
    }

    pub fn unary(&self, x: Var, f: Unary) -> Res {
        let v = self.value(x).map(|e| f.apply(e));
        self.push(Op::Unary { x, f }, v)
    }

    pub fn relu(&self, x: Var) -> Res {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&self, x: Var) -> Res {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&self, x: Var) -> Res {
        self.unary(x, Unary::Tanh)
    }

    pub fn exp(&self, x: Var) -> Res {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&self, x: Var) -> Res {
        self.unary(x, Unary::Log)
    }

    pub fn log1p(&self, x: Var) -> Res {
        self.unary(x, Unary::Log1p)
    }

    pub fn abs(&self, x: Var) -> Res {
        self.unary(x, Unary::Abs)
    }

    pub fn sqrt(&self, x: Var) -> Res {
        self.unary(x, Unary::Sqrt)
    }

    pub fn sin(&self, x: Var) -> Res {
        self.unary(x, Unary::Sin)
    }

    pub fn cos(&self, x: Var) -> Res {
        self.unary(x, Unary::Cos)
    }

    pub fn sinh(&self, x: Var) -> Res {
        self.unary(x, Unary::Sinh)
    }

    pub fn cosh(&self, x: Var) -> Res {
        self.unary(x, Unary::Cosh)
    }

    pub fn softplus(&self, x: Var) -> Res {
        self.unary(x, Unary::Softplus)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, x: Var, axis: usize) -> Res {
        let v = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            if axis >= tx.rank() {
                let detail = format!("axis {axis} of {:?}", tx.shape());
                drop(nodes);
                return Err(self.mismatch("softmax", detail));
            }
            let (outer, n, inner) = split_axis(tx.shape(), axis);
            let src = tx.data();
            let mut out = vec![T::zero(); src.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * n + j) * inner + i;
                    let m = (0..n).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for j in 0..n {
                        let e = (src[at(j)] - m).exp();
                        out[at(j)] = e;
                        total += e;
                    }
                    for j in 0..n {
                        out[at(j)] /= total;
                    }
                }
            }
            Tensor::new(tx.shape().to_vec(), out).expect("softmax shape")
        };
        self.push(Op::Softmax { x, axis }, v)
    }

    /// Sum of all elements, rank-0 result.
    pub fn sum(&self, x: Var) -> Res {
        let total: T = self.value(x).data().iter().copied().sum();
        self.push(Op::Sum(x), Tensor::scalar(total))
    }

    /// Mean of all elements, rank-0 result.
    pub fn mean(&self, x: Var) -> Res {
        let v = {
            let t = self.value(x);
            let n = T::from_f64(t.len().max(1) as f64);
            t.data().iter().copied().sum::<T>() / n
        };
        self.push(Op::Mean(x), Tensor::scalar(v))
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Res {
        let v = {
            let nodes = self.nodes.borrow();
            let Some(first) = xs.first() else {
                drop(nodes);
                return Err(self.mismatch("concat", "no inputs".into()));
            };
            let base = nodes[first.0].value.shape().to_vec();
            if axis >= base.len() {
                let detail = format!("axis {axis} of {:?}", base);
                drop(nodes);
                return Err(self.mismatch("concat", detail));
            }
            let mut total = 0;
            for x in xs {
                let s = nodes[x.0].value.shape();
                let compatible = s.len() == base.len()
                    && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
                if !compatible {
                    let detail = format!("{:?} vs {:?} along axis {axis}", s, base);
                    drop(nodes);
                    return Err(self.mismatch("concat", detail));
                }
                total += s[axis];
            }
            let mut shape = base.clone();
            shape[axis] = total;
            let (outer, _, inner) = split_axis(&shape, axis);
            let mut out = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for x in xs {
                    let t = &nodes[x.0].value;
                    let block = t.shape()[axis] * inner;
                    out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
                }
            }
            Tensor::new(shape, out).expect("concat shape")
        };
        self.push(Op::Concat { xs: xs.to_vec(), axis }, v)
    }

    /// Elements `start..start+len` along `axis`.
    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Res {
        let v = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            if axis >= tx.rank() || start + len > tx.shape()[axis] {
                let detail = format!("[{start}..{}] on axis {axis} of {:?}", start + len, tx.shape());
                drop(nodes);
                return Err(self.mismatch("slice", detail));
            }
            let (outer, n, inner) = split_axis(tx.shape(), axis);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let from = (o * n + start) * inner;
                out.extend_from_slice(&tx.data()[from..from + len * inner]);
            }
            let mut shape = tx.shape().to_vec();
            shape[axis] = len;
            Tensor::new(shape, out).expect("slice shape")
        };
        self.push(Op::Slice { x, axis, start }, v)
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Res {
        let t = self.value(x).clone();
        let from = t.shape().to_vec();
        match t.reshaped(shape.to_vec()) {
            Ok(v) => self.push(Op::Reshape(x), v),
            Err(_) => Err(self.mismatch("reshape", format!("{:?} -> {:?}", from, shape))),
        }
    }

    /// One LSTM step; returns `[h' | c']` with shape `[B, 2H]`.
    /// `x: [B,I]`, `h, c: [B,H]`, `w_ih: [I,4H]`, `w_hh: [H,4H]`, `b: [4H]`.
    pub fn lstm_cell(&self, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, b: Var) -> Res {
        let (value, cache) = {
            let nodes = self.nodes.borrow();
            let t = |v: Var| &nodes[v.0].value;
            let (tx, th, tc) = (t(x), t(h), t(c));
            let ok = tx.rank() == 2 && th.rank() == 2 && tc.shape() == th.shape() && th.shape()[0] == tx.shape()[0];
            let (batch, input, hidden) = if ok {
                (tx.shape()[0], tx.shape()[1], th.shape()[1])
            } else {
                (0, 0, 0)
            };
            let ok = ok
                && t(w_ih).shape() == [input, 4 * hidden]
                && t(w_hh).shape() == [hidden, 4 * hidden]
                && t(b).shape() == [4 * hidden];
            if !ok {
                let detail = format!(
                    "x {:?}, h {:?}, c {:?}, w_ih {:?}, w_hh {:?}, b {:?}",
                    tx.shape(),
                    th.shape(),
                    tc.shape(),
                    t(w_ih).shape(),
                    t(w_hh).shape(),
                    t(b).shape()
                );
                drop(nodes);
                return Err(self.mismatch("lstm_cell", detail));
            }
            let (out, cache) = kernels::lstm_forward(
                batch,
                input,
                hidden,
                tx.data(),
                th.data(),
                tc.data(),
                t(w_ih).data(),
                t(w_hh).data(),
                t(b).data(),
            );
            (Tensor::new(vec![batch, 2 * hidden], out).expect("lstm shape"), cache)
        };
        self.push(Op::LstmCell { inputs: [x, h, c, w_ih, w_hh, b], cache }, value)
    }

    pub fn custom(&self, inputs: &[Var], op: Arc<dyn CustomOp<T>>) -> Res {
        let result = {
            let nodes = self.nodes.borrow();
            let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| &nodes[v.0].value).collect();
            op.forward(&ins)
        };
        match result {
            Ok(v) => self.push(Op::Custom { inputs: inputs.to_vec(), op }, v),
            Err(detail) => Err(self.mismatch(op.name(), detail)),
        }
    }

    /// Reverse sweep from a one-element `loss` node. Parameters that the
    /// loss does not reach get no entry (see [`Gradients::get_or_zero`]).
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                node: loss.0,
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), T::one()));
        let mut out = Gradients {
            params: HashMap::new(),
            leaves: HashMap::new(),
        };

        for index in (0..=loss.0).rev() {
            let Some(g) = grads[index].take() else { continue };
            let node = &nodes[index];
            if !node.requires_grad {
                continue;
            }
            let val = |v: Var| &nodes[v.0].value;
            let needs = |v: Var| nodes[v.0].requires_grad;
            let mut acc = |v: Var, t: Tensor<T>| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Input { .. } => {
                    out.leaves.insert(Var(index), g);
                }
                Op::Param(id) => {
                    out.params.insert(*id, g);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.map(|e| -e));
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        acc(*a, zip_map(&g, val(*b), |gv, bv| gv * bv));
                    }
                    if needs(*b) {
                        acc(*b, zip_map(&g, val(*a), |gv, av| gv * av));
                    }
                }
                Op::Affine { x, scale } => {
                    let s = *scale;
                    acc(*x, g.map(|e| e * s));
                }
                Op::MaxScalar { x, floor } => {
                    let f = *floor;
                    acc(*x, zip_map(&g, val(*x), |gv, xv| if xv > f { gv } else { T::zero() }));
                }
                Op::ScaleBy { x, s } => {
                    let factor = val(*s).data()[0];
                    if needs(*x) {
                        acc(*x, g.map(|e| e * factor));
                    }
                    if needs(*s) {
                        let ds: T = g.data().iter().zip(val(*x).data()).map(|(&a, &b)| a * b).sum();
                        acc(*s, Tensor::new(val(*s).shape().to_vec(), vec![ds]).expect("scalar"));
                    }
                }
                Op::AddRow { x, b } => {
                    if needs(*b) {
                        let n = val(*b).len();
                        let rows = g.len() / n;
                        let sums = kernels::column_sums(rows, n, g.data());
                        acc(*b, Tensor::new(vec![n], sums).expect("row"));
                    }
                    acc(*x, g);
                }
                Op::MatMul { a, b } => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if needs(*a) {
                        let da = kernels::matmul_bt(m, n, k, g.data(), tb.data());
                        acc(*a, Tensor::new(vec![m, k], da).expect("da"));
                    }
                    if needs(*b) {
                        let db = kernels::matmul_at(k, m, n, ta.data(), g.data());
                        acc(*b, Tensor::new(vec![k, n], db).expect("db"));
                    }
                }
                Op::Conv2d { x, k, b, geo, cols } => {
                    let (p, kk, o) = (geo.positions(), geo.patch_len(), geo.out_channels);
                    if needs(*k) {
                        let dk = kernels::matmul_at(kk, p, o, cols, g.data());
                        acc(*k, Tensor::new(val(*k).shape().to_vec(), dk).expect("dk"));
                    }
                    if needs(*b) {
                        acc(*b, Tensor::new(vec![o], kernels::column_sums(p, o, g.data())).expect("db"));
                    }
                    if needs(*x) {
                        let dcols = kernels::matmul_bt(p, o, kk, g.data(), val(*k).data());
                        let dx = kernels::col2im(geo, &dcols);
                        acc(*x, Tensor::new(val(*x).shape().to_vec(), dx).expect("dx"));
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut dx = Tensor::zeros(val(*x).shape().to_vec());
                    let d = dx.data_mut();
                    for (&i, &gv) in argmax.iter().zip(g.data()) {
                        d[i] += gv;
                    }
                    acc(*x, dx);
                }
                Op::Unary { x, f } => {
                    let tx = val(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(tx.data())
                        .zip(node.value.data())
                        .map(|((&gv, &xv), &yv)| gv * f.derivative(xv, yv))
                        .collect();
                    acc(*x, Tensor::new(tx.shape().to_vec(), data).expect("unary"));
                }
                Op::Softmax { x, axis } => {
                    let y = &node.value;
                    let (outer, n, inner) = split_axis(y.shape(), *axis);
                    let mut dx = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let dot: T = (0..n).map(|j| g.data()[at(j)] * y.data()[at(j)]).sum();
                            for j in 0..n {
                                dx[at(j)] = y.data()[at(j)] * (g.data()[at(j)] - dot);
                            }
                        }
                    }
                    acc(*x, Tensor::new(y.shape().to_vec(), dx).expect("softmax"));
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    acc(*x, Tensor::full(val(*x).shape().to_vec(), gv));
                }
                Op::Mean(x) => {
                    let tx = val(*x);
                    let gv = g.data()[0] / T::from_f64(tx.len().max(1) as f64);
                    acc(*x, Tensor::full(tx.shape().to_vec(), gv));
                }
                Op::Concat { xs, axis } => {
                    let (outer, total, inner) = split_axis(g.shape(), *axis);
                    let mut offset = 0;
                    for x in xs {
                        let tx = val(*x);
                        let n = tx.shape()[*axis];
                        if needs(*x) {
                            let mut d = Vec::with_capacity(tx.len());
                            for o in 0..outer {
                                let from = (o * total + offset) * inner;
                                d.extend_from_slice(&g.data()[from..from + n * inner]);
                            }
                            acc(*x, Tensor::new(tx.shape().to_vec(), d).expect("concat grad"));
                        }
                        offset += n;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let tx = val(*x);
                    let (outer, n, inner) = split_axis(tx.shape(), *axis);
                    let len = g.shape()[*axis];
                    let mut dx = Tensor::zeros(tx.shape().to_vec());
                    let d = dx.data_mut();
                    for o in 0..outer {
                        let to = (o * n + start) * inner;
                        let from = o * len * inner;
                        d[to..to + len * inner].copy_from_slice(&g.data()[from..from + len * inner]);
                    }
                    acc(*x, dx);
                }
                Op::Reshape(x) => {
                    let shape = val(*x).shape().to_vec();
                    acc(*x, g.reshaped(shape).expect("reshape grad"));
                }
                Op::LstmCell { inputs, cache } => {
                    let [x, h, c, w_ih, w_hh, b] = *inputs;
                    let (batch, input, hidden) = (val(x).shape()[0], val(x).shape()[1], val(h).shape()[1]);
                    let g4 = 4 * hidden;
                    let mut dc = vec![T::zero(); batch * hidden];
                    let dg = kernels::lstm_gate_grads(batch, hidden, val(c).data(), cache, g.data(), &mut dc);
                    if needs(x) {
                        let dx = kernels::matmul_bt(batch, g4, input, &dg, val(w_ih).data());
                        acc(x, Tensor::new(vec![batch, input], dx).expect("dx"));
                    }
                    if needs(h) {
                        let dh = kernels::matmul_bt(batch, g4, hidden, &dg, val(w_hh).data());
                        acc(h, Tensor::new(vec![batch, hidden], dh).expect("dh"));
                    }
                    if needs(c) {
                        acc(c, Tensor::new(vec![batch, hidden], dc).expect("dc"));
                    }
                    if needs(w_ih) {
                        let dw = kernels::matmul_at(input, batch, g4, val(x).data(), &dg);
                        acc(w_ih, Tensor::new(vec![input, g4], dw).expect("dw_ih"));
                    }
                    if needs(w_hh) {
                        let dw = kernels::matmul_at(hidden, batch, g4, val(h).data(), &dg);
                        acc(w_hh, Tensor::new(vec![hidden, g4], dw).expect("dw_hh"));
                    }
                    if needs(b) {
                        acc(b, Tensor::new(vec![g4], kernels::column_sums(batch, g4, &dg)).expect("db"));
                    }
                }
                Op::Custom { inputs, op } => {
                    let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| val(*v)).collect();
                    let gs = op.backward(&ins, &node.value, &g);
                    for (v, gi) in inputs.iter().zip(gs) {
                        acc(*v, gi);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map shape")
}
