use ndarray::{Array1, Array2};
use rand::Rng;

use crate::nn::{uniform_init, Graph, Linear, Parameterized, Var};

/// One masked autoregressive affine transform.
///
/// The conditioner maps `(v, context)` to `(s, t)` with output `j` seeing only
/// coordinates of degree `< degree(j)`; the transform is
/// `v_j = u_j * exp(s_j) + t_j`, `s = clamp * tanh(raw / clamp)`. Density
/// evaluation (`v -> u`) is a single pass; sampling (`u -> v`) takes
/// `input_dim` passes.
#[derive(Clone, Debug)]
pub struct MadeBlock {
    pub input_dim: usize,
    pub context_dim: usize,
    pub hidden: Vec<usize>,
    /// Input degrees, `1..=input_dim` in coordinate order.
    pub degrees: Vec<usize>,
    /// Degrees of every hidden layer's units.
    pub hidden_degrees: Vec<Vec<usize>>,
    /// Latent-to-hidden, hidden-to-hidden and hidden-to-output layers.
    pub layers: Vec<Linear>,
    /// Binary masks matching each layer's weight.
    pub masks: Vec<Array2<f64>>,
    /// Unmasked context-to-first-hidden weight (`context_dim x hidden[0]`).
    pub context_weight: Option<Array2<f64>>,
    pub scale_clamp: f64,
}

/// Graph handles for a block's `(s, t)`.
pub struct Conditioner {
    pub s: Var,
    pub t: Var,
}

fn build_masks(d: usize, hidden: &[usize]) -> (Vec<usize>, Vec<Vec<usize>>, Vec<Array2<f64>>) {
    let degrees: Vec<usize> = (1..=d).collect();
    let hidden_degrees: Vec<Vec<usize>> = hidden.iter().map(|&h| (0..h).map(|k| k % d).collect()).collect();
    let mut masks = Vec::with_capacity(hidden.len() + 1);
    let mut prev = degrees.clone();
    for hd in &hidden_degrees {
        masks.push(Array2::from_shape_fn((prev.len(), hd.len()), |(a, b)| {
            (hd[b] >= prev[a]) as u8 as f64
        }));
        prev = hd.clone();
    }
    // outputs: s_0..s_{d-1}, t_0..t_{d-1}
    masks.push(Array2::from_shape_fn((prev.len(), 2 * d), |(a, o)| {
        (degrees[o % d] > prev[a]) as u8 as f64
    }));
    (degrees, hidden_degrees, masks)
}

impl MadeBlock {
    /// `identity_init` zeroes the output layer so the block starts as the
    /// identity map.
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        input_dim: usize,
        context_dim: usize,
        hidden: &[usize],
        scale_clamp: f64,
        identity_init: bool,
    ) -> Self {
        assert!(input_dim >= 1 && !hidden.is_empty(), "MADE needs d >= 1 and a hidden layer");
        let (degrees, hidden_degrees, masks) = build_masks(input_dim, hidden);
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * input_dim);
        let fan_in0 = input_dim + context_dim;
        let mut layers: Vec<Linear> = Vec::with_capacity(widths.len() - 1);
        for (i, w) in widths.windows(2).enumerate() {
            let fan_in = if i == 0 { fan_in0 } else { w[0] };
            layers.push(Linear {
                weight: uniform_init(rng, fan_in, (w[0], w[1])),
                bias: uniform_init(rng, fan_in, (1, w[1])),
            });
        }
        if identity_init {
            let last = layers.last_mut().unwrap();
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
        let context_weight = (context_dim > 0).then(|| uniform_init(rng, fan_in0, (context_dim, hidden[0])));
        Self {
            input_dim,
            context_dim,
            hidden: hidden.to_vec(),
            degrees,
            hidden_degrees,
            layers,
            masks,
            context_weight,
            scale_clamp,
        }
    }

    /// `(s, t)` for conditioner input `v` (`N x d`) and optional context.
    pub fn conditioner(&self, g: &mut Graph, p: &[Var], v: Var, ctx: Option<Var>) -> Conditioner {
        let n_layers = self.layers.len();
        let mut h = v;
        for (i, mask) in self.masks.iter().enumerate() {
            let m = g.constant(mask.clone());
            let w = g.mul(p[2 * i], m);
            let mut a = g.matmul(h, w);
            if i == 0 {
                if let (Some(c), true) = (ctx, self.context_dim > 0) {
                    let cw = g.matmul(c, p[2 * n_layers]);
                    a = g.add(a, cw);
                }
            }
            a = g.add(a, p[2 * i + 1]);
            h = if i + 1 < n_layers { g.relu(a) } else { a };
        }
        let d = self.input_dim;
        let raw_s = g.slice_cols(h, 0, d);
        let t = g.slice_cols(h, d, 2 * d);
        let c = self.scale_clamp;
        let scaled = g.scale(raw_s, 1.0 / c);
        let th = g.tanh(scaled);
        let s = g.scale(th, c);
        Conditioner { s, t }
    }

    /// Graph inverse `v -> u`; returns `(u, log_det)` with `log_det` (`N x 1`)
    /// the forward log-determinant.
    pub fn inverse_graph(&self, g: &mut Graph, p: &[Var], v: Var, ctx: Option<Var>) -> (Var, Var) {
        let Conditioner { s, t } = self.conditioner(g, p, v, ctx);
        let diff = g.sub(v, t);
        let ns = g.neg(s);
        let scale = g.exp(ns);
        let u = g.mul(diff, scale);
        let ld = g.sum_rows(s);
        (u, ld)
    }

    fn eval_conditioner(&self, v: &Array2<f64>, ctx: Option<&Array2<f64>>) -> (Array2<f64>, Array2<f64>) {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let vv = g.constant(v.clone());
        let cv = ctx.map(|c| g.constant(c.clone()));
        let c = self.conditioner(&mut g, &p, vv, cv);
        (g.value(c.s).clone(), g.value(c.t).clone())
    }

    /// Raw conditioner outputs, exposed for mask probes.
    pub fn shift_and_log_scale(&self, v: &Array2<f64>, ctx: Option<&Array2<f64>>) -> (Array2<f64>, Array2<f64>) {
        self.eval_conditioner(v, ctx)
    }

    /// Sampling direction `u -> v`, one pass per coordinate.
    pub fn forward(&self, u: &Array2<f64>, ctx: Option<&Array2<f64>>) -> (Array2<f64>, Array1<f64>) {
        let mut v = Array2::zeros(u.dim());
        let mut s = Array2::zeros(u.dim());
        for _ in 0..self.input_dim {
            let (ss, t) = self.eval_conditioner(&v, ctx);
            v = u * &ss.mapv(f64::exp) + &t;
            s = ss;
        }
        let ld = s.sum_axis(ndarray::Axis(1));
        (v, ld)
    }

    /// Density direction `v -> u` in one pass.
    pub fn inverse(&self, v: &Array2<f64>, ctx: Option<&Array2<f64>>) -> (Array2<f64>, Array1<f64>) {
        let (s, t) = self.eval_conditioner(v, ctx);
        let u = (v - &t) * &s.mapv(|x| (-x).exp());
        (u, s.sum_axis(ndarray::Axis(1)))
    }
}

impl Parameterized for MadeBlock {
    fn parameters(&self) -> Vec<&Array2<f64>> {
        let mut v: Vec<&Array2<f64>> = self.layers.iter().flat_map(|l| l.parameters()).collect();
        if let Some(c) = &self.context_weight {
            v.push(c);
        }
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v: Vec<&mut Array2<f64>> = self
            .layers
            .iter_mut()
            .flat_map(|l| l.parameters_mut())
            .collect();
        if let Some(c) = &mut self.context_weight {
            v.push(c);
        }
        v
    }
}
