use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::graph::{Graph, Var};

/// Anything that owns trainable matrices. The order of `parameters` and
/// `parameters_mut` must agree; forward passes index bound variables in the
/// same order.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&Array2<f64>>;
    fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Pushes every parameter as a leaf. `trainable = false` freezes the
    /// component for this graph.
    fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|p| {
                if trainable {
                    g.variable(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Tanh => g.tanh(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            _ => return None,
        })
    }
}

/// Uniform fan-in initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, shape: (usize, usize)) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn(shape, || dist.sample(rng))
}

#[derive(Clone, Debug)]
pub struct Linear {
    /// `in x out`
    pub weight: Array2<f64>,
    /// `1 x out`
    pub bias: Array2<f64>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> Self {
        Self {
            weight: uniform_init(rng, input, (input, output)),
            bias: uniform_init(rng, input, (1, output)),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array2::zeros((1, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let h = g.matmul(x, p[0]);
        g.add(h, p[1])
    }
}

impl Parameterized for Linear {
    fn parameters(&self) -> Vec<&Array2<f64>> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Fully connected stack. `hidden` is applied after every layer but the last,
/// `output` after the last one.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    /// `widths = [input, h1, ..., output]`.
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| Linear::new(rng, w[0], w[1]))
            .collect();
        Self {
            layers,
            hidden,
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(Linear::output_dim));
        w
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, &p[2 * i..2 * i + 2], h);
            let act = if i == last { self.output } else { self.hidden };
            h = act.apply(g, h);
        }
        h
    }

    /// Forward pass on plain arrays with frozen parameters.
    pub fn eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xv);
        g.value(y).clone()
    }
}

impl Parameterized for Mlp {
    fn parameters(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.parameters_mut())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_shapes_and_binding_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&mut rng, &[5, 7, 3], Activation::Relu, Activation::Identity);
        assert_eq!(mlp.widths(), vec![5, 7, 3]);
        assert_eq!(mlp.parameter_count(), 5 * 7 + 7 + 7 * 3 + 3);
        let y = mlp.eval(&Array2::ones((4, 5)));
        assert_eq!(y.dim(), (4, 3));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = uniform_init(&mut rng, 16, (16, 8));
        assert!(w.iter().all(|x| x.abs() <= 0.25));
    }
}
