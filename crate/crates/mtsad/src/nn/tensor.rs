//! A small eager reverse-mode autodiff engine over `f64` tensors.
//!
//! Operations append nodes to a [`Tape`] and evaluate immediately. Backward
//! passes are themselves expressed as tape operations, so the result of
//! [`Tape::grad`] is an ordinary differentiable [`Var`]. That closure under
//! differentiation is what the gradient-penalty term needs: the norm of an
//! input gradient can be penalised and differentiated again with respect to
//! the critic parameters.
//!
//! The engine is deliberately minimal: single-sample tensors (no batch axis;
//! batches are averaged by summing per-sample scalars), square kernels, and
//! exactly the operations the model uses.

use ndarray::{ArrayD, IxDyn};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

/// Geometry of one convolution, shared by the forward op and its two
/// gradient ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvAttrs {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvAttrs {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.in_channels, self.in_h, self.in_w]
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.out_channels, self.out_h(), self.out_w()]
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Exp(Var),
    Sqrt(Var),
    Square(Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    /// Elementwise derivative of leaky-relu, treated as locally constant.
    LeakyMask(Var, f64),
    Scale(Var, f64),
    AddScalar(Var, f64),
    SumAll(Var),
    /// Fill a tensor of the recorded shape with a scalar.
    BroadcastAll(Var, Vec<usize>),
    Reshape(Var),
    Detach(Var),
    /// Tensor times a scalar variable.
    MulScalar(Var, Var),
    Concat(Var, Var, usize),
    Narrow(Var, usize, usize, usize),
    /// Embed a slice back into zeros along an axis (adjoint of `Narrow`).
    PadAxis(Var, usize, usize, usize),
    /// `[C,H,W] + [C]` with the bias broadcast over space.
    AddBias(Var, Var),
    SumSpatial(Var),
    BroadcastSpatial(Var, usize, usize),
    Conv(Var, Var, ConvAttrs),
    /// Gradient of `Conv` with respect to its input; also the transposed
    /// convolution used by the decoder.
    ConvInputGrad(Var, Var, ConvAttrs),
    ConvWeightGrad(Var, Var, ConvAttrs),
    /// `[m,k] . [k] -> [m]`
    MatVec(Var, Var),
    /// `[m,k]^T . [m] -> [k]`
    MatVecT(Var, Var),
    /// `[m] outer [k] -> [m,k]`
    Outer(Var, Var),
}

struct Node {
    op: Op,
    value: ArrayD<f64>,
    requires_grad: bool,
}

/// Gradient tape: an arena of eagerly evaluated nodes.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn im2col(x: &ArrayD<f64>, a: &ConvAttrs) -> ndarray::Array2<f64> {
    let (oh, ow) = (a.out_h(), a.out_w());
    let mut cols = ndarray::Array2::zeros((a.in_channels * a.kernel * a.kernel, oh * ow));
    for c in 0..a.in_channels {
        for ky in 0..a.kernel {
            for kx in 0..a.kernel {
                let row = (c * a.kernel + ky) * a.kernel + kx;
                for oy in 0..oh {
                    let y = (oy * a.stride + ky) as isize - a.pad as isize;
                    if y < 0 || y as usize >= a.in_h {
                        continue;
                    }
                    for ox in 0..ow {
                        let xx = (ox * a.stride + kx) as isize - a.pad as isize;
                        if xx < 0 || xx as usize >= a.in_w {
                            continue;
                        }
                        cols[[row, oy * ow + ox]] = x[[c, y as usize, xx as usize]];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &ndarray::Array2<f64>, a: &ConvAttrs) -> ArrayD<f64> {
    let (oh, ow) = (a.out_h(), a.out_w());
    let mut x = ArrayD::zeros(IxDyn(&[a.in_channels, a.in_h, a.in_w]));
    for c in 0..a.in_channels {
        for ky in 0..a.kernel {
            for kx in 0..a.kernel {
                let row = (c * a.kernel + ky) * a.kernel + kx;
                for oy in 0..oh {
                    let y = (oy * a.stride + ky) as isize - a.pad as isize;
                    if y < 0 || y as usize >= a.in_h {
                        continue;
                    }
                    for ox in 0..ow {
                        let xx = (ox * a.stride + kx) as isize - a.pad as isize;
                        if xx < 0 || xx as usize >= a.in_w {
                            continue;
                        }
                        x[[c, y as usize, xx as usize]] += cols[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    x
}

fn conv_forward(x: &ArrayD<f64>, w: &ArrayD<f64>, a: &ConvAttrs) -> ArrayD<f64> {
    let cols = im2col(x, a);
    let w_mat = w
        .view()
        .into_shape_with_order((a.out_channels, a.in_channels * a.kernel * a.kernel))
        .unwrap()
        .to_owned();
    let out = w_mat.dot(&cols);
    out.into_shape_with_order(IxDyn(&[a.out_channels, a.out_h(), a.out_w()]))
        .unwrap()
}

fn conv_input_grad_forward(g: &ArrayD<f64>, w: &ArrayD<f64>, a: &ConvAttrs) -> ArrayD<f64> {
    let g_mat = g
        .view()
        .into_shape_with_order((a.out_channels, a.out_h() * a.out_w()))
        .unwrap()
        .to_owned();
    let w_mat = w
        .view()
        .into_shape_with_order((a.out_channels, a.in_channels * a.kernel * a.kernel))
        .unwrap()
        .to_owned();
    let cols = w_mat.t().dot(&g_mat);
    col2im(&cols, a)
}

fn conv_weight_grad_forward(x: &ArrayD<f64>, g: &ArrayD<f64>, a: &ConvAttrs) -> ArrayD<f64> {
    let cols = im2col(x, a);
    let g_mat = g
        .view()
        .into_shape_with_order((a.out_channels, a.out_h() * a.out_w()))
        .unwrap()
        .to_owned();
    let w_mat = g_mat.dot(&cols.t());
    w_mat
        .into_shape_with_order(IxDyn(&[
            a.out_channels,
            a.in_channels,
            a.kernel,
            a.kernel,
        ]))
        .unwrap()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: ArrayD<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var {
            id: self.nodes.len() - 1,
        }
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    /// Inserts a differentiable leaf (parameter or tracked input).
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Inserts a non-differentiable constant.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.id].value
    }

    /// Extracts a scalar from a zero-dimensional or single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1, "scalar() on node with {} elements", val.len());
        *val.iter().next().unwrap()
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, value: ArrayD<f64>) -> Var {
        let rg = self.requires(a) || self.requires(b);
        self.push(op, value, rg)
    }

    fn unary(&mut self, a: Var, op: Op, value: ArrayD<f64>) -> Var {
        let rg = self.requires(a);
        self.push(op, value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = self.value(a) + self.value(b);
        self.binary(a, b, Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = self.value(a) - self.value(b);
        self.binary(a, b, Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = self.value(a) * self.value(b);
        self.binary(a, b, Op::Mul(a, b), value)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = self.value(a) / self.value(b);
        self.binary(a, b, Op::Div(a, b), value)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| -v);
        self.unary(a, Op::Neg(a), value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.unary(a, Op::Exp(a), value)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sqrt);
        self.unary(a, Op::Sqrt(a), value)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v * v);
        self.unary(a, Op::Square(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.unary(a, Op::Tanh(a), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.unary(a, Op::Sigmoid(a), value)
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Var {
        let value = self.value(a).mapv(|v| if v > 0.0 { v } else { alpha * v });
        self.unary(a, Op::LeakyRelu(a, alpha), value)
    }

    fn leaky_mask(&mut self, a: Var, alpha: f64) -> Var {
        let value = self.value(a).mapv(|v| if v > 0.0 { 1.0 } else { alpha });
        // Locally constant: no gradient flows into `a`.
        self.push(Op::LeakyMask(a, alpha), value, false)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|v| v * c);
        self.unary(a, Op::Scale(a, c), value)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|v| v + c);
        self.unary(a, Op::AddScalar(a, c), value)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = ArrayD::from_elem(IxDyn(&[]), self.value(a).sum());
        self.unary(a, Op::SumAll(a), value)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let len = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / len as f64)
    }

    fn broadcast_all(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let value = ArrayD::from_elem(IxDyn(&shape), self.scalar(a));
        self.unary(a, Op::BroadcastAll(a, shape), value)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self
            .value(a)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape with incompatible element count");
        self.unary(a, Op::Reshape(a), value)
    }

    pub fn flatten(&mut self, a: Var) -> Var {
        let len = self.value(a).len();
        self.reshape(a, &[len])
    }

    /// Identity with the gradient path severed.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(Op::Detach(a), value, false)
    }

    /// Tensor `a` times scalar variable `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let value = self.value(a).mapv(|v| v * sv);
        self.binary(a, s, Op::MulScalar(a, s), value)
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Var {
        let value = ndarray::concatenate(
            ndarray::Axis(axis),
            &[self.value(a).view(), self.value(b).view()],
        )
        .expect("concat shape mismatch");
        self.binary(a, b, Op::Concat(a, b, axis), value)
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let value = self
            .value(a)
            .slice_axis(ndarray::Axis(axis), ndarray::Slice::from(start..start + len))
            .to_owned();
        self.unary(a, Op::Narrow(a, axis, start, len), value)
    }

    fn pad_axis(&mut self, a: Var, axis: usize, start: usize, total: usize) -> Var {
        let mut shape = self.value(a).shape().to_vec();
        let len = shape[axis];
        shape[axis] = total;
        let mut value = ArrayD::zeros(IxDyn(&shape));
        value
            .slice_axis_mut(ndarray::Axis(axis), ndarray::Slice::from(start..start + len))
            .assign(self.value(a));
        self.unary(a, Op::PadAxis(a, axis, start, total), value)
    }

    /// `[C,H,W] + [C]`, bias broadcast over the spatial axes.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias).clone();
        let mut value = self.value(a).clone();
        for (c, mut plane) in value.outer_iter_mut().enumerate() {
            plane.mapv_inplace(|v| v + b[[c]]);
        }
        self.binary(a, bias, Op::AddBias(a, bias), value)
    }

    /// `[C,H,W] -> [C]`.
    pub fn sum_spatial(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .outer_iter()
            .map(|plane| plane.sum())
            .collect::<Vec<_>>();
        let value = ArrayD::from_shape_vec(IxDyn(&[value.len()]), value).unwrap();
        self.unary(a, Op::SumSpatial(a), value)
    }

    /// `[C] -> [C,H,W]`.
    pub fn broadcast_spatial(&mut self, a: Var, h: usize, w: usize) -> Var {
        let src = self.value(a).clone();
        let c = src.len();
        let mut value = ArrayD::zeros(IxDyn(&[c, h, w]));
        for (ch, mut plane) in value.outer_iter_mut().enumerate() {
            plane.fill(src[[ch]]);
        }
        self.unary(a, Op::BroadcastSpatial(a, h, w), value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, attrs: ConvAttrs) -> Var {
        debug_assert_eq!(self.value(x).shape(), attrs.input_shape());
        debug_assert_eq!(self.value(w).shape(), attrs.weight_shape());
        let value = conv_forward(self.value(x), self.value(w), &attrs);
        self.binary(x, w, Op::Conv(x, w, attrs), value)
    }

    /// Transposed convolution: maps an output-shaped tensor back to the
    /// input shape of `attrs`. This is both the gradient of [`Tape::conv2d`]
    /// and the decoder's upsampling layer.
    pub fn conv2d_transpose(&mut self, g: Var, w: Var, attrs: ConvAttrs) -> Var {
        debug_assert_eq!(self.value(g).shape(), attrs.output_shape());
        debug_assert_eq!(self.value(w).shape(), attrs.weight_shape());
        let value = conv_input_grad_forward(self.value(g), self.value(w), &attrs);
        self.binary(g, w, Op::ConvInputGrad(g, w, attrs), value)
    }

    fn conv2d_weight_grad(&mut self, x: Var, g: Var, attrs: ConvAttrs) -> Var {
        let value = conv_weight_grad_forward(self.value(x), self.value(g), &attrs);
        self.binary(x, g, Op::ConvWeightGrad(x, g, attrs), value)
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Var {
        let mv = self.value(m);
        let vv = self.value(v);
        let m2 = mv
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("matvec lhs must be 2-d");
        let v1 = vv
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("matvec rhs must be 1-d");
        let value = m2.dot(&v1).into_dyn();
        self.binary(m, v, Op::MatVec(m, v), value)
    }

    fn matvec_t(&mut self, m: Var, v: Var) -> Var {
        let m2 = self
            .value(m)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .t()
            .to_owned();
        let v1 = self
            .value(v)
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
            .to_owned();
        let value = m2.dot(&v1).into_dyn();
        self.binary(m, v, Op::MatVecT(m, v), value)
    }

    fn outer(&mut self, a: Var, b: Var) -> Var {
        let av = self
            .value(a)
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
            .to_owned();
        let bv = self
            .value(b)
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
            .to_owned();
        let mut value = ndarray::Array2::zeros((av.len(), bv.len()));
        for i in 0..av.len() {
            for j in 0..bv.len() {
                value[[i, j]] = av[i] * bv[j];
            }
        }
        self.binary(a, b, Op::Outer(a, b), value.into_dyn())
    }

    /// Dot product of two equally shaped tensors as a scalar node.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum_all(p)
    }

    /// `sqrt(sum(a^2) + eps)`: the Euclidean norm with a floor that keeps the
    /// derivative finite at zero.
    pub fn l2_norm(&mut self, a: Var, eps: f64) -> Var {
        let sq = self.square(a);
        let s = self.sum_all(sq);
        let s = self.add_scalar(s, eps);
        self.sqrt(s)
    }

    /// Reverse pass from scalar `y` to each of `wrt`, returning one gradient
    /// node per target (`None` when no path carries gradient). The returned
    /// nodes are ordinary tape values and can be differentiated again.
    pub fn grad(&mut self, y: Var, wrt: &[Var]) -> Vec<Option<Var>> {
        assert_eq!(
            self.value(y).len(),
            1,
            "grad target must be scalar, got shape {:?}",
            self.value(y).shape()
        );
        let mut adj: Vec<Option<Var>> = vec![None; y.id + 1];
        let seed_shape = self.value(y).shape().to_vec();
        adj[y.id] = Some(self.constant(ArrayD::from_elem(IxDyn(&seed_shape), 1.0)));

        for id in (0..=y.id).rev() {
            let Some(a) = adj[id] else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            let mut accumulate = |tape: &mut Tape, adj: &mut Vec<Option<Var>>, t: Var, c: Var| {
                if !tape.requires(t) {
                    return;
                }
                adj[t.id] = Some(match adj[t.id] {
                    None => c,
                    Some(prev) => tape.add(prev, c),
                });
            };
            match op {
                Op::Leaf | Op::Detach(_) | Op::LeakyMask(..) => {}
                Op::Add(x, yv) => {
                    accumulate(self, &mut adj, x, a);
                    accumulate(self, &mut adj, yv, a);
                }
                Op::Sub(x, yv) => {
                    accumulate(self, &mut adj, x, a);
                    let c = self.neg(a);
                    accumulate(self, &mut adj, yv, c);
                }
                Op::Mul(x, yv) => {
                    if self.requires(x) {
                        let c = self.mul(a, yv);
                        accumulate(self, &mut adj, x, c);
                    }
                    if self.requires(yv) {
                        let c = self.mul(a, x);
                        accumulate(self, &mut adj, yv, c);
                    }
                }
                Op::Div(x, yv) => {
                    if self.requires(x) {
                        let c = self.div(a, yv);
                        accumulate(self, &mut adj, x, c);
                    }
                    if self.requires(yv) {
                        let q = self.div(Var { id }, yv); // x/y^2 = (x/y)/y
                        let qq = self.mul(a, q);
                        let c = self.neg(qq);
                        accumulate(self, &mut adj, yv, c);
                    }
                }
                Op::Neg(x) => {
                    let c = self.neg(a);
                    accumulate(self, &mut adj, x, c);
                }
                Op::Exp(x) => {
                    let c = self.mul(a, Var { id });
                    accumulate(self, &mut adj, x, c);
                }
                Op::Sqrt(x) => {
                    // d sqrt(x) = a / (2 sqrt(x))
                    let half = self.scale(a, 0.5);
                    let c = self.div(half, Var { id });
                    accumulate(self, &mut adj, x, c);
                }
                Op::Square(x) => {
                    let two_x = self.scale(x, 2.0);
                    let c = self.mul(a, two_x);
                    accumulate(self, &mut adj, x, c);
                }
                Op::Tanh(x) => {
                    // a * (1 - tanh^2)
                    let sq = self.square(Var { id });
                    let neg = self.neg(sq);
                    let one_minus = self.add_scalar(neg, 1.0);
                    let c = self.mul(a, one_minus);
                    accumulate(self, &mut adj, x, c);
                }
                Op::Sigmoid(x) => {
                    // a * s * (1 - s)
                    let s = Var { id };
                    let neg = self.neg(s);
                    let one_minus = self.add_scalar(neg, 1.0);
                    let prod = self.mul(s, one_minus);
                    let c = self.mul(a, prod);
                    accumulate(self, &mut adj, x, c);
                }
                Op::LeakyRelu(x, alpha) => {
                    let mask = self.leaky_mask(x, alpha);
                    let c = self.mul(a, mask);
                    accumulate(self, &mut adj, x, c);
                }
                Op::Scale(x, k) => {
                    let c = self.scale(a, k);
                    accumulate(self, &mut adj, x, c);
                }
                Op::AddScalar(x, _) => {
                    accumulate(self, &mut adj, x, a);
                }
                Op::SumAll(x) => {
                    let shape = self.value(x).shape().to_vec();
                    let c = self.broadcast_all(a, shape);
                    accumulate(self, &mut adj, x, c);
                }
                Op::BroadcastAll(x, _) => {
                    let c = self.sum_all(a);
                    accumulate(self, &mut adj, x, c);
                }
                Op::Reshape(x) => {
                    let shape = self.value(x).shape().to_vec();
                    let c = self.reshape(a, &shape);
                    accumulate(self, &mut adj, x, c);
                }
                Op::MulScalar(x, s) => {
                    if self.requires(x) {
                        let c = self.mul_scalar(a, s);
                        accumulate(self, &mut adj, x, c);
                    }
                    if self.requires(s) {
                        let prod = self.mul(a, x);
                        let c = self.sum_all(prod);
                        accumulate(self, &mut adj, s, c);
                    }
                }
                Op::Concat(x, yv, axis) => {
                    let x_len = self.value(x).shape()[axis];
                    let y_len = self.value(yv).shape()[axis];
                    if self.requires(x) {
                        let c = self.narrow(a, axis, 0, x_len);
                        accumulate(self, &mut adj, x, c);
                    }
                    if self.requires(yv) {
                        let c = self.narrow(a, axis, x_len, y_len);
                        accumulate(self, &mut adj, yv, c);
                    }
                }
                Op::Narrow(x, axis, start, _len) => {
                    let total = self.value(x).shape()[axis];
                    let c = self.pad_axis(a, axis, start, total);
                    accumulate(self, &mut adj, x, c);
                }
                Op::PadAxis(x, axis, start, _total) => {
                    let len = self.value(x).shape()[axis];
                    let c = self.narrow(a, axis, start, len);
                    accumulate(self, &mut adj, x, c);
                }
                Op::AddBias(x, b) => {
                    accumulate(self, &mut adj, x, a);
                    if self.requires(b) {
                        let c = self.sum_spatial(a);
                        accumulate(self, &mut adj, b, c);
                    }
                }
                Op::SumSpatial(x) => {
                    let shape = self.value(x).shape().to_vec();
                    let c = self.broadcast_spatial(a, shape[1], shape[2]);
                    accumulate(self, &mut adj, x, c);
                }
                Op::BroadcastSpatial(x, _, _) => {
                    let c = self.sum_spatial(a);
                    accumulate(self, &mut adj, x, c);
                }
                Op::Conv(x, w, attrs) => {
                    if self.requires(x) {
                        let c = self.conv2d_transpose(a, w, attrs);
                        accumulate(self, &mut adj, x, c);
                    }
                    if self.requires(w) {
                        let c = self.conv2d_weight_grad(x, a, attrs);
                        accumulate(self, &mut adj, w, c);
                    }
                }
                Op::ConvInputGrad(g, w, attrs) => {
                    if self.requires(g) {
                        let c = self.conv2d(a, w, attrs);
                        accumulate(self, &mut adj, g, c);
                    }
                    if self.requires(w) {
                        let c = self.conv2d_weight_grad(a, g, attrs);
                        accumulate(self, &mut adj, w, c);
                    }
                }
                Op::ConvWeightGrad(x, g, attrs) => {
                    if self.requires(x) {
                        let c = self.conv2d_transpose(g, a, attrs);
                        accumulate(self, &mut adj, x, c);
                    }
                    if self.requires(g) {
                        let c = self.conv2d(x, a, attrs);
                        accumulate(self, &mut adj, g, c);
                    }
                }
                Op::MatVec(m, v) => {
                    if self.requires(m) {
                        let c = self.outer(a, v);
                        accumulate(self, &mut adj, m, c);
                    }
                    if self.requires(v) {
                        let c = self.matvec_t(m, a);
                        accumulate(self, &mut adj, v, c);
                    }
                }
                Op::MatVecT(m, v) => {
                    if self.requires(m) {
                        let c = self.outer(v, a);
                        accumulate(self, &mut adj, m, c);
                    }
                    if self.requires(v) {
                        let c = self.matvec(m, a);
                        accumulate(self, &mut adj, v, c);
                    }
                }
                Op::Outer(x, yv) => {
                    if self.requires(x) {
                        let c = self.matvec(a, yv);
                        accumulate(self, &mut adj, x, c);
                    }
                    if self.requires(yv) {
                        let c = self.matvec_t(a, x);
                        accumulate(self, &mut adj, yv, c);
                    }
                }
            }
        }

        wrt.iter()
            .map(|v| if v.id <= y.id { adj[v.id] } else { None })
            .collect()
    }

    /// Like [`Tape::grad`] but materialises zero gradients.
    pub fn grad_full(&mut self, y: Var, wrt: &[Var]) -> Vec<Var> {
        let grads = self.grad(y, wrt);
        grads
            .into_iter()
            .zip(wrt)
            .map(|(g, &v)| match g {
                Some(g) => g,
                None => {
                    let shape = self.value(v).shape().to_vec();
                    self.constant(ArrayD::zeros(IxDyn(&shape)))
                }
            })
            .collect()
    }
}
