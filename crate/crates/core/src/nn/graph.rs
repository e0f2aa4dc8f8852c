//! A small reverse-mode tape over row-major `f64` matrices.
//!
//! Every value is an `Array2<f64>` with samples along rows. Nodes are pushed in
//! evaluation order, so the tape itself is a topological order and the
//! backward sweep is a single reverse pass. Binary element-wise ops broadcast
//! singleton rows/columns the way ndarray does, and the backward pass sums the
//! gradient back down to the operand shape.
//!
//! Leaves created with [`Graph::constant`] never receive gradients and nothing
//! upstream of them is differentiated, which is how frozen components are
//! expressed.

use ndarray::{concatenate, s, Array2, Axis, Zip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Select(Var, Vec<usize>),
    LogSoftmax(Var),
    Surrogate(Vec<(Var, Array2<f64>)>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn reduce_to(mut g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    if g.nrows() != shape.0 {
        debug_assert_eq!(shape.0, 1);
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if g.ncols() != shape.1 {
        debug_assert_eq!(shape.1, 1);
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        let rg = self.rg(a);
        self.push(value, Op::Offset(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(value, Op::Clamp(a, lo, hi), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over columns: `N x k -> N x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Sum over rows: `N x k -> 1 x k`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let rg = self.rg(a);
        self.push(value, Op::SumCols(a), rg)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat: row counts differ");
        let rg = parts.iter().any(|v| self.rg(*v));
        self.push(value, Op::Concat(parts.to_vec()), rg)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Slice(a, start), rg)
    }

    /// Gathers columns by index; `out[:, k] = a[:, idx[k]]`.
    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).select(Axis(1), idx);
        let rg = self.rg(a);
        self.push(value, Op::Select(a, idx.to_vec()), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    /// A scalar node whose value and local gradients are supplied by the
    /// caller. Used where the gradient has a closed form that is cheaper or
    /// more stable than differentiating through the computation.
    pub fn surrogate(&mut self, value: f64, local_grads: Vec<(Var, Array2<f64>)>) -> Var {
        for (v, g) in &local_grads {
            assert_eq!(self.shape(*v), g.dim(), "surrogate gradient shape");
        }
        let rg = local_grads.iter().any(|(v, _)| self.rg(*v));
        self.push(
            Array2::from_elem((1, 1), value),
            Op::Surrogate(local_grads),
            rg,
        )
    }

    /// Reverse sweep from a 1x1 root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let rg = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(gy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if rg(a) {
                        let ga = gy.dot(&self.value(*b).t());
                        accumulate(&mut grads[a.0], ga);
                    }
                    if rg(b) {
                        let gb = self.value(*a).t().dot(&gy);
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if rg(a) {
                        accumulate(&mut grads[a.0], reduce_to(gy.clone(), self.shape(*a)));
                    }
                    if rg(b) {
                        let gb = reduce_to(gy.clone(), self.shape(*b));
                        accumulate(&mut grads[b.0], gb * sign);
                    }
                }
                Op::Mul(a, b) => {
                    if rg(a) {
                        let ga = &gy * self.value(*b);
                        accumulate(&mut grads[a.0], reduce_to(ga, self.shape(*a)));
                    }
                    if rg(b) {
                        let gb = &gy * self.value(*a);
                        accumulate(&mut grads[b.0], reduce_to(gb, self.shape(*b)));
                    }
                }
                Op::Scale(a, k) => accumulate(&mut grads[a.0], gy * *k),
                Op::Offset(a) => accumulate(&mut grads[a.0], gy),
                Op::Exp(a) => accumulate(&mut grads[a.0], gy * &node.value),
                Op::Log(a) => {
                    let mut g = gy;
                    Zip::from(&mut g)
                        .and(self.value(*a))
                        .for_each(|g, &x| *g /= x);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Relu(a) => {
                    let mut g = gy;
                    Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0
                        }
                    });
                    accumulate(&mut grads[a.0], g);
                }
                Op::Sigmoid(a) => {
                    let mut g = gy;
                    Zip::from(&mut g)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= y * (1.0 - y));
                    accumulate(&mut grads[a.0], g);
                }
                Op::Tanh(a) => {
                    let mut g = gy;
                    Zip::from(&mut g)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= 1.0 - y * y);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Square(a) => {
                    let mut g = gy;
                    Zip::from(&mut g)
                        .and(self.value(*a))
                        .for_each(|g, &x| *g *= 2.0 * x);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut g = gy;
                    Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        if x < *lo || x > *hi {
                            *g = 0.0
                        }
                    });
                    accumulate(&mut grads[a.0], g);
                }
                Op::SumAll(a) => {
                    let k = gy[[0, 0]];
                    accumulate(&mut grads[a.0], Array2::from_elem(self.shape(*a), k));
                }
                Op::SumRows(a) | Op::SumCols(a) => {
                    let g = gy.broadcast(self.shape(*a)).unwrap().to_owned();
                    accumulate(&mut grads[a.0], g);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if rg(p) {
                            let g = gy.slice(s![.., start..start + w]).to_owned();
                            accumulate(&mut grads[p.0], g);
                        }
                        start += w;
                    }
                }
                Op::Slice(a, start) => {
                    let mut g = Array2::zeros(self.shape(*a));
                    let w = gy.ncols();
                    g.slice_mut(s![.., *start..*start + w]).assign(&gy);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Select(a, idx) => {
                    let mut g = Array2::zeros(self.shape(*a));
                    for (k, &j) in idx.iter().enumerate() {
                        let mut col = g.column_mut(j);
                        col += &gy.column(k);
                    }
                    accumulate(&mut grads[a.0], g);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut g = gy.clone();
                    for (mut grow, (gyrow, yrow)) in g
                        .rows_mut()
                        .into_iter()
                        .zip(gy.rows().into_iter().zip(y.rows()))
                    {
                        let total: f64 = gyrow.sum();
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|g, &yv| *g -= yv.exp() * total);
                    }
                    accumulate(&mut grads[a.0], g);
                }
                Op::Surrogate(locals) => {
                    let k = gy[[0, 0]];
                    for (v, local) in locals {
                        if rg(v) {
                            accumulate(&mut grads[v.0], local * k);
                        }
                    }
                }
            }
        }
        Gradients { grads }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of d(sum(f(x)))/dx for a graph-building closure.
    fn check_grad(x0: Array2<f64>, f: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let x = g.variable(x0.clone());
        let y = f(&mut g, x);
        let root = g.sum_all(y);
        let grads = g.backward(root);
        let analytic = grads.get_or_zeros(x, x0.dim());

        let h = 1e-6;
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp[[r, c]] += delta;
                let mut g = Graph::new();
                let x = g.constant(xp);
                let y = f(&mut g, x);
                g.value(y).sum()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic[[r, c]];
            assert!(
                (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                "grad mismatch at ({r},{c}): analytic {a}, numeric {numeric}"
            );
        }
    }

    #[test]
    fn elementwise_gradients() {
        let x = array![[0.3, -1.2, 2.0], [0.7, 0.1, -0.4]];
        check_grad(x.clone(), |g, x| g.exp(x));
        check_grad(x.clone(), |g, x| g.sigmoid(x));
        check_grad(x.clone(), |g, x| g.tanh(x));
        check_grad(x.clone(), |g, x| g.square(x));
        check_grad(x.clone(), |g, x| {
            let e = g.exp(x);
            g.log(e)
        });
        check_grad(x.clone(), |g, x| g.clamp(x, -1.0, 1.0));
        check_grad(x, |g, x| g.relu(x));
    }

    #[test]
    fn broadcast_and_matmul_gradients() {
        let x = array![[0.3, -1.2], [0.7, 0.1], [1.5, -0.3]];
        let w = array![[0.5, -0.2, 0.1], [0.4, 0.3, -0.7]];
        let bias = array![[0.1, 0.2, 0.3]];
        check_grad(x.clone(), |g, x| {
            let w = g.constant(w.clone());
            let b = g.constant(bias.clone());
            let h = g.matmul(x, w);
            let h = g.add(h, b);
            g.tanh(h)
        });
        check_grad(w.clone(), |g, w| {
            let x = g.constant(x.clone());
            let h = g.matmul(x, w);
            g.square(h)
        });
        check_grad(bias, |g, b| {
            let x = g.constant(array![[1.0, 2.0, 3.0], [0.5, 0.1, -1.0]]);
            let y = g.mul(x, b);
            let s = g.sub(y, b);
            g.square(s)
        });
        // column broadcast
        check_grad(array![[0.5], [1.5], [-2.0]], |g, c| {
            let x = g.constant(x.clone());
            let y = g.mul(x, c);
            g.square(y)
        });
    }

    #[test]
    fn structural_gradients() {
        let x = array![[0.3, -1.2, 2.0, 0.1], [0.7, 0.1, -0.4, 0.9]];
        check_grad(x.clone(), |g, x| {
            let a = g.slice_cols(x, 1, 3);
            let b = g.select_cols(x, &[3, 0, 0]);
            let c = g.concat(&[a, b]);
            g.square(c)
        });
        check_grad(x.clone(), |g, x| {
            let r = g.sum_rows(x);
            let c = g.sum_cols(x);
            let r2 = g.square(r);
            let c2 = g.square(c);
            let a = g.sum_all(r2);
            let b = g.sum_all(c2);
            g.add(a, b)
        });
        check_grad(x, |g, x| {
            let l = g.log_softmax(x);
            let w = g.constant(array![[1.0, 0.0, 2.0, -1.0]]);
            g.mul(l, w)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(array![[1.0, 2.0]]);
        let b = g.variable(array![[3.0, 4.0]]);
        let c = g.mul(a, b);
        let root = g.sum_all(c);
        let grads = g.backward(root);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap(), &array![[1.0, 2.0]]);
    }

    #[test]
    fn surrogate_passes_local_gradients() {
        let mut g = Graph::new();
        let a = g.variable(array![[1.0, 2.0]]);
        let s = g.surrogate(5.0, vec![(a, array![[0.5, -1.0]])]);
        let root = g.scale(s, 2.0);
        let grads = g.backward(root);
        assert_eq!(g.scalar(s), 5.0);
        assert_eq!(grads.get(a).unwrap(), &array![[1.0, -2.0]]);
    }
}
