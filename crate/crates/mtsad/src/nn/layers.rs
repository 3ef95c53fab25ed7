//! Network building blocks: parameter registry, convolution layers, the
//! convolutional-recurrent cell, and similarity attention over stacked steps.

use ndarray::{ArrayD, IxDyn};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{ConvAttrs, Tape, Var};

/// Index of a parameter tensor in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Owns every learnable tensor of a model, outside any tape. Each training
/// step binds the set onto a fresh tape and updates the arrays from the
/// resulting gradients.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names.iter().map(|s| s.as_str()).zip(self.values.iter())
    }

    /// Inserts every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.leaf(v.clone())).collect(),
        }
    }

    /// Inserts every parameter as a constant (inference mode).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .values
                .iter()
                .map(|v| tape.constant(v.clone()))
                .collect(),
        }
    }
}

/// Tape bindings of a [`ParamSet`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Glorot-uniform initialisation.
pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-bound..bound))
}

/// Convolution plus per-channel bias.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub attrs: ConvAttrs,
}

impl ConvLayer {
    pub fn new(params: &mut ParamSet, name: &str, attrs: ConvAttrs, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = attrs.in_channels * attrs.kernel * attrs.kernel;
        let fan_out = attrs.out_channels * attrs.kernel * attrs.kernel;
        let w = params.add(
            format!("{name}.w"),
            glorot(&attrs.weight_shape(), fan_in, fan_out, rng),
        );
        let b = params.add(
            format!("{name}.b"),
            ArrayD::zeros(IxDyn(&[attrs.out_channels])),
        );
        Self { w, b, attrs }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        let y = tape.conv2d(x, bound.var(self.w), self.attrs);
        tape.add_bias(y, bound.var(self.b))
    }
}

/// Transposed convolution plus per-channel bias; maps the output shape of
/// `attrs` back to its input shape.
#[derive(Debug, Clone)]
pub struct DeconvLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub attrs: ConvAttrs,
}

impl DeconvLayer {
    /// Upsamples `in_channels x from_h x from_w` to `out_channels x to_h x to_w`,
    /// where the spatial map is the transpose of a `stride`-strided `kernel`
    /// convolution from the target shape down to the source shape.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        to_h: usize,
        to_w: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let attrs = ConvAttrs {
            in_channels: out_channels,
            in_h: to_h,
            in_w: to_w,
            out_channels: in_channels,
            kernel,
            stride,
            pad: kernel / 2,
        };
        let fan_in = in_channels * kernel * kernel;
        let fan_out = out_channels * kernel * kernel;
        let w = params.add(
            format!("{name}.w"),
            glorot(&attrs.weight_shape(), fan_in, fan_out, rng),
        );
        let b = params.add(format!("{name}.b"), ArrayD::zeros(IxDyn(&[out_channels])));
        Self { w, b, attrs }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        let y = tape.conv2d_transpose(x, bound.var(self.w), self.attrs);
        tape.add_bias(y, bound.var(self.b))
    }
}

/// Convolutional LSTM cell over one spatial grid.
///
/// Gates are computed by two fused convolutions (input-to-state and
/// state-to-state) producing `4 * channels` maps in i, f, g, o order. The
/// forget-gate bias starts at one.
#[derive(Debug, Clone)]
pub struct ConvLstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    x_attrs: ConvAttrs,
    h_attrs: ConvAttrs,
    channels: usize,
    h: usize,
    w: usize,
}

impl ConvLstm {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        channels: usize,
        h: usize,
        w: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let x_attrs = ConvAttrs {
            in_channels,
            in_h: h,
            in_w: w,
            out_channels: 4 * channels,
            kernel,
            stride: 1,
            pad: kernel / 2,
        };
        let h_attrs = ConvAttrs {
            in_channels: channels,
            ..x_attrs
        };
        let fan = |c_in: usize| c_in * kernel * kernel;
        let wx = params.add(
            format!("{name}.wx"),
            glorot(&x_attrs.weight_shape(), fan(in_channels), fan(4 * channels), rng),
        );
        let wh = params.add(
            format!("{name}.wh"),
            glorot(&h_attrs.weight_shape(), fan(channels), fan(4 * channels), rng),
        );
        let mut bias = ArrayD::zeros(IxDyn(&[4 * channels]));
        for i in channels..2 * channels {
            bias[[i]] = 1.0; // forget gate
        }
        let b = params.add(format!("{name}.b"), bias);
        Self {
            wx,
            wh,
            b,
            x_attrs,
            h_attrs,
            channels,
            h,
            w,
        }
    }

    pub fn state_channels(&self) -> usize {
        self.channels
    }

    pub fn zero_state(&self, tape: &mut Tape) -> (Var, Var) {
        let z = ArrayD::zeros(IxDyn(&[self.channels, self.h, self.w]));
        (tape.constant(z.clone()), tape.constant(z))
    }

    /// One recurrent step; returns the new `(hidden, cell)` state.
    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        state: (Var, Var),
    ) -> (Var, Var) {
        let (h_prev, c_prev) = state;
        let gx = tape.conv2d(x, bound.var(self.wx), self.x_attrs);
        let gh = tape.conv2d(h_prev, bound.var(self.wh), self.h_attrs);
        let g_sum = tape.add(gx, gh);
        let gates = tape.add_bias(g_sum, bound.var(self.b));
        let c = self.channels;
        let i_raw = tape.narrow(gates, 0, 0, c);
        let f_raw = tape.narrow(gates, 0, c, c);
        let g_raw = tape.narrow(gates, 0, 2 * c, c);
        let o_raw = tape.narrow(gates, 0, 3 * c, c);
        let i = tape.sigmoid(i_raw);
        let f = tape.sigmoid(f_raw);
        let g = tape.tanh(g_raw);
        let o = tape.sigmoid(o_raw);
        let keep = tape.mul(f, c_prev);
        let write = tape.mul(i, g);
        let c_new = tape.add(keep, write);
        let c_act = tape.tanh(c_new);
        let h_new = tape.mul(o, c_act);
        (h_new, c_new)
    }
}

/// Fuses a sequence of hidden states by similarity attention against the
/// final (current) step.
///
/// Weights are a softmax over `vec(H_last) . vec(H_i) / rescale`, multiplied
/// by the per-step keep bit and renormalised over the surviving steps. When
/// every bit is dropped the current step alone carries weight one. Returns
/// the fused state and the final weights.
pub fn attention_fuse(
    tape: &mut Tape,
    hidden: &[Var],
    bits: &[bool],
    rescale: f64,
) -> (Var, Vec<Var>) {
    assert!(!hidden.is_empty(), "attention over an empty sequence");
    assert_eq!(hidden.len(), bits.len(), "one bit per stacked step");
    let n = hidden.len();
    let current = hidden[n - 1];

    if bits.iter().all(|&b| !b) {
        // Degenerate mask: fall back to the current step only.
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            weights.push(tape.constant_scalar(if i == n - 1 { 1.0 } else { 0.0 }));
        }
        return (current, weights);
    }

    let cur_flat = tape.flatten(current);
    let mut scores = Vec::with_capacity(n);
    for &h in hidden {
        let h_flat = tape.flatten(h);
        let d = tape.dot(cur_flat, h_flat);
        scores.push(tape.scale(d, 1.0 / rescale));
    }
    // Softmax with a detached max shift for stability; the shift cancels.
    let max_score = scores
        .iter()
        .map(|&s| tape.scalar(s))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut exps = Vec::with_capacity(n);
    for (&s, &bit) in scores.iter().zip(bits) {
        if bit {
            let shifted = tape.add_scalar(s, -max_score);
            exps.push(Some(tape.exp(shifted)));
        } else {
            exps.push(None);
        }
    }
    let mut total: Option<Var> = None;
    for e in exps.iter().flatten() {
        total = Some(match total {
            None => *e,
            Some(t) => tape.add(t, *e),
        });
    }
    let total = total.unwrap();

    let mut fused: Option<Var> = None;
    let mut weights = Vec::with_capacity(n);
    for (i, e) in exps.iter().enumerate() {
        let alpha = match e {
            Some(e) => tape.div(*e, total),
            None => tape.constant_scalar(0.0),
        };
        weights.push(alpha);
        if e.is_some() {
            let term = tape.mul_scalar(hidden[i], alpha);
            fused = Some(match fused {
                None => term,
                Some(f) => tape.add(f, term),
            });
        }
    }
    (fused.unwrap(), weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_tensor(tape: &mut Tape, shape: &[usize], vals: &[f64]) -> Var {
        tape.leaf(ArrayD::from_shape_vec(IxDyn(shape), vals.to_vec()).unwrap())
    }

    #[test]
    fn identical_states_get_uniform_weights() {
        let mut tape = Tape::new();
        let hidden: Vec<Var> = (0..4)
            .map(|_| const_tensor(&mut tape, &[2, 2], &[0.3, -0.1, 0.4, 0.2]))
            .collect();
        let (fused, weights) = attention_fuse(&mut tape, &hidden, &[true; 4], 5.0);
        for &w in &weights {
            assert!((tape.scalar(w) - 0.25).abs() < 1e-12);
        }
        for (a, b) in tape.value(fused).iter().zip(tape.value(hidden[0]).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_step_has_zero_weight_and_rest_renormalise() {
        let mut tape = Tape::new();
        let hidden: Vec<Var> = (0..3)
            .map(|i| const_tensor(&mut tape, &[2], &[i as f64 * 0.1, 0.5]))
            .collect();
        let (_, weights) = attention_fuse(&mut tape, &hidden, &[true, false, true], 5.0);
        assert_eq!(tape.scalar(weights[1]), 0.0);
        let total: f64 = weights.iter().map(|&w| tape.scalar(w)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_bits_zero_falls_back_to_current() {
        let mut tape = Tape::new();
        let hidden: Vec<Var> = (0..3)
            .map(|i| const_tensor(&mut tape, &[2], &[i as f64, 1.0]))
            .collect();
        let (fused, weights) = attention_fuse(&mut tape, &hidden, &[false; 3], 5.0);
        assert_eq!(tape.scalar(weights[2]), 1.0);
        assert_eq!(tape.value(fused), tape.value(hidden[2]));
    }

    #[test]
    fn weights_match_hand_computed_softmax() {
        // Three 1x2 states; current is the last. Scores are dots / chi.
        let mut tape = Tape::new();
        let h0 = const_tensor(&mut tape, &[2], &[1.0, 0.0]);
        let h1 = const_tensor(&mut tape, &[2], &[0.0, 2.0]);
        let h2 = const_tensor(&mut tape, &[2], &[1.0, 1.0]);
        let chi = 5.0;
        let (fused, weights) = attention_fuse(&mut tape, &[h0, h1, h2], &[true; 3], chi);
        // Hand computation: dots with current (1,1) are 1, 2, 2.
        let e = [(1.0 / chi) as f64, 2.0 / chi, 2.0 / chi].map(f64::exp);
        let z: f64 = e.iter().sum();
        for (i, &w) in weights.iter().enumerate() {
            assert!(
                (tape.scalar(w) - e[i] / z).abs() < 1e-8,
                "weight {i}: {} vs {}",
                tape.scalar(w),
                e[i] / z
            );
        }
        let expect0 = e[0] / z * 1.0 + e[2] / z * 1.0;
        let expect1 = e[1] / z * 2.0 + e[2] / z * 1.0;
        assert!((tape.value(fused)[[0]] - expect0).abs() < 1e-8);
        assert!((tape.value(fused)[[1]] - expect1).abs() < 1e-8);
    }

    #[test]
    fn attention_weights_are_differentiable() {
        // Gradient of the fused state w.r.t. an input state must flow both
        // through the value term and the softmax weights.
        let mut tape = Tape::new();
        let h0 = const_tensor(&mut tape, &[2], &[0.5, -0.2]);
        let h1 = const_tensor(&mut tape, &[2], &[0.1, 0.9]);
        let (fused, _) = attention_fuse(&mut tape, &[h0, h1], &[true, true], 5.0);
        let sq = tape.square(fused);
        let y = tape.sum_all(sq);
        let g = tape.grad(y, &[h0])[0];
        assert!(g.is_some());

        // Finite-difference check on one coordinate.
        let eval = |v00: f64| -> f64 {
            let mut t = Tape::new();
            let a = const_tensor(&mut t, &[2], &[v00, -0.2]);
            let b = const_tensor(&mut t, &[2], &[0.1, 0.9]);
            let (f, _) = attention_fuse(&mut t, &[a, b], &[true, true], 5.0);
            let sq = t.square(f);
            let y = t.sum_all(sq);
            t.scalar(y)
        };
        let h = 1e-6;
        let fd = (eval(0.5 + h) - eval(0.5 - h)) / (2.0 * h);
        let an = tape.value(g.unwrap())[[0]];
        assert!((an - fd).abs() / fd.abs().max(1e-9) < 1e-5, "{an} vs {fd}");
    }

    #[test]
    fn convlstm_step_shapes_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        let cell = ConvLstm::new(&mut params, "cell", 3, 4, 5, 5, 3, &mut rng);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(ArrayD::from_elem(IxDyn(&[3, 5, 5]), 0.7));
        let s0 = cell.zero_state(&mut tape);
        let (h1, c1) = cell.step(&mut tape, &bound, x, s0);
        assert_eq!(tape.value(h1).shape(), &[4, 5, 5]);
        assert_eq!(tape.value(c1).shape(), &[4, 5, 5]);
        let s1 = (h1, c1);
        let (h2, _) = cell.step(&mut tape, &bound, x, s1);
        assert_eq!(tape.value(h2).shape(), &[4, 5, 5]);

        // Rebuilding the same graph yields identical values.
        let mut tape2 = Tape::new();
        let bound2 = params.bind(&mut tape2);
        let x2 = tape2.constant(ArrayD::from_elem(IxDyn(&[3, 5, 5]), 0.7));
        let s02 = cell.zero_state(&mut tape2);
        let (h12, _) = cell.step(&mut tape2, &bound2, x2, s02);
        assert_eq!(tape.value(h1), tape2.value(h12));
    }

    #[test]
    fn conv_layer_output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        let attrs = ConvAttrs {
            in_channels: 3,
            in_h: 10,
            in_w: 10,
            out_channels: 8,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let layer = ConvLayer::new(&mut params, "c1", attrs, &mut rng);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(ArrayD::zeros(IxDyn(&[3, 10, 10])));
        let y = layer.forward(&mut tape, &bound, x);
        assert_eq!(tape.value(y).shape(), &[8, 5, 5]);
    }

    #[test]
    fn deconv_inverts_conv_spatial_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = ParamSet::new();
        let layer = DeconvLayer::new(&mut params, "d1", 8, 3, 10, 10, 3, 2, &mut rng);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(ArrayD::zeros(IxDyn(&[8, 5, 5])));
        let y = layer.forward(&mut tape, &bound, x);
        assert_eq!(tape.value(y).shape(), &[3, 10, 10]);
    }
}
