//! A small reverse-mode automatic differentiation tape over dense `f64` matrices.
//!
//! Every differentiable model in the crate builds its forward pass on a [`Graph`].
//! Values are row-major `Array2<f64>`; by convention rows index a batch and
//! columns index features, so an image is a `1 x (H*W*C)` row.
//!
//! Nodes are appended in evaluation order, which is already a topological order,
//! so the backward sweep is a single reverse pass over the tape.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fixed sparse linear map applied independently to every row.
///
/// Used for pooling, resampling, convolution with fixed kernels and gathers.
#[derive(Debug, Clone)]
pub struct SparseMap {
    in_len: usize,
    out_len: usize,
    // (out index, in index, weight)
    entries: Vec<(u32, u32, f64)>,
}

impl SparseMap {
    pub fn new(in_len: usize, out_len: usize, mut entries: Vec<(u32, u32, f64)>) -> Self {
        entries.sort_by_key(|e| (e.0, e.1));
        debug_assert!(entries
            .iter()
            .all(|&(o, i, _)| (o as usize) < out_len && (i as usize) < in_len));
        Self {
            in_len,
            out_len,
            entries,
        }
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    /// Applies the map to a single vector.
    pub fn apply_slice(&self, input: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(o, i, w) in &self.entries {
            out[o as usize] += w * input[i as usize];
        }
    }

    pub fn apply_transpose_slice(&self, grad: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(o, i, w) in &self.entries {
            out[i as usize] += w * grad[o as usize];
        }
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        assert_eq!(x.ncols(), self.in_len, "sparse map input width");
        let mut out = Mat::zeros((x.nrows(), self.out_len));
        for (row, mut orow) in x.rows().into_iter().zip(out.rows_mut()) {
            let src = row.to_vec();
            let dst = orow.as_slice_mut().expect("standard layout");
            self.apply_slice(&src, dst);
        }
        out
    }

    pub fn apply_transpose(&self, g: &Mat) -> Mat {
        let mut out = Mat::zeros((g.nrows(), self.in_len));
        for (row, mut orow) in g.rows().into_iter().zip(out.rows_mut()) {
            let src = row.to_vec();
            let dst = orow.as_slice_mut().expect("standard layout");
            self.apply_transpose_slice(&src, dst);
        }
        out
    }
}

/// Extension point for operations whose backward pass is supplied externally,
/// e.g. an adapter around a pretrained network with its own vector-Jacobian product.
pub trait CustomOp {
    /// Returns one gradient per input given the upstream gradient of the output.
    fn backward(&self, inputs: &[&Mat], output: &Mat, grad: &Mat) -> Vec<Option<Mat>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    BroadcastRows(Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Silu(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    RowNormalize(Var),
    RowDot(Var, Var),
    ScaleBy(Var, Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    Sparse(Var, Arc<SparseMap>),
    Clamp(Var, f64, f64),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Arc<Mat>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the given shape when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Mat, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.is_standard_layout());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> Arc<Mat> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dim()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        assert_eq!(value.dim(), (1, 1), "scalar() on a non-scalar node");
        value[[0, 0]]
    }

    /// A constant input; gradients are not tracked through it.
    pub fn constant(&self, m: Mat) -> Var {
        self.push(m.as_standard_layout().into_owned(), Op::Leaf, false)
    }

    pub fn constant_arc(&self, m: Arc<Mat>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: m,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(nodes.len() - 1)
    }

    pub fn scalar_constant(&self, x: f64) -> Var {
        self.constant(Mat::from_elem((1, 1), x))
    }

    /// A differentiable input.
    pub fn input(&self, m: Mat) -> Var {
        self.push(m.as_standard_layout().into_owned(), Op::Leaf, true)
    }

    pub fn input_arc(&self, m: Arc<Mat>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: m,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(nodes.len() - 1)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).mapv(f);
        let needs = self.needs(&[a]);
        self.push(value, op, needs)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = &*self.value(a) + &*self.value(b);
        self.push(value, Op::Add(a, b), self.needs(&[a, b]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = &*self.value(a) - &*self.value(b);
        self.push(value, Op::Sub(a, b), self.needs(&[a, b]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = &*self.value(a) * &*self.value(b);
        self.push(value, Op::Mul(a, b), self.needs(&[a, b]))
    }

    /// `a + row`, broadcasting a `1 x m` row over every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let value = &*self.value(a) + &*self.value(row);
        self.push(value, Op::AddRow(a, row), self.needs(&[a, row]))
    }

    /// `a * row`, broadcasting a `1 x m` row over every row of `a`.
    pub fn mul_row(&self, a: Var, row: Var) -> Var {
        let value = &*self.value(a) * &*self.value(row);
        self.push(value, Op::MulRow(a, row), self.needs(&[a, row]))
    }

    /// Repeats a `1 x m` row `n` times.
    pub fn broadcast_rows(&self, a: Var, n: usize) -> Var {
        let row = self.value(a);
        assert_eq!(row.nrows(), 1, "broadcast_rows expects a single row");
        let value = row
            .broadcast((n, row.ncols()))
            .expect("broadcast")
            .to_owned();
        self.push(value, Op::BroadcastRows(a), self.needs(&[a]))
    }

    /// `a * scale + shift`.
    pub fn affine(&self, a: Var, scale: f64, shift: f64) -> Var {
        self.unary(a, |x| x * scale + shift, Op::Affine(a, scale))
    }

    pub fn scale(&self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&*self.value(b));
        self.push(value, Op::MatMul(a, b), self.needs(&[a, b]))
    }

    /// `x W + b` with `b` a `1 x out` row.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn silu(&self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a), self.needs(&[a]))
    }

    pub fn mean(&self, a: Var) -> Var {
        let v = self.value(a);
        let value = Mat::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(value, Op::Mean(a), self.needs(&[a]))
    }

    /// Sum of squares of every entry.
    pub fn sum_sq(&self, a: Var) -> Var {
        let sq = self.square(a);
        self.sum(sq)
    }

    /// Per-row sums, `n x m -> n x 1`.
    pub fn row_sum(&self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::RowSum(a), self.needs(&[a]))
    }

    /// Divides every row by its Euclidean norm.
    pub fn row_normalize(&self, a: Var) -> Var {
        let mut value = (*self.value(a)).clone();
        for mut row in value.rows_mut() {
            let norm = row.dot(&row).sqrt().max(f64::MIN_POSITIVE);
            row.mapv_inplace(|x| x / norm);
        }
        self.push(value, Op::RowNormalize(a), self.needs(&[a]))
    }

    /// Per-row dot products, `n x m, n x m -> n x 1`.
    pub fn row_dot(&self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.dim(), bv.dim(), "row_dot shape mismatch");
        let value = (&*av * &*bv).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::RowDot(a, b), self.needs(&[a, b]))
    }

    /// Multiplies every entry of `a` by the `1 x 1` node `s`.
    pub fn scale_by(&self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let value = self.value(a).mapv(|x| x * sv);
        self.push(value, Op::ScaleBy(a, s), self.needs(&[a, s]))
    }

    /// Horizontal concatenation.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let values: Vec<Arc<Mat>> = parts.iter().map(|&p| self.value(p)).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let value = ndarray::concatenate(Axis(1), &views)
            .expect("concat_cols row mismatch")
            .as_standard_layout()
            .into_owned();
        self.push(value, Op::Concat(parts.to_vec()), self.needs(parts))
    }

    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Var {
        let value = self
            .value(a)
            .slice(ndarray::s![.., start..end])
            .as_standard_layout()
            .into_owned();
        self.push(value, Op::SliceCols(a, start), self.needs(&[a]))
    }

    /// Row-major reshape.
    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a);
        let value = Mat::from_shape_vec((rows, cols), v.iter().copied().collect())
            .expect("reshape size mismatch");
        self.push(value, Op::Reshape(a), self.needs(&[a]))
    }

    pub fn sparse(&self, a: Var, map: &Arc<SparseMap>) -> Var {
        let value = map.apply(&self.value(a));
        self.push(value, Op::Sparse(a, map.clone()), self.needs(&[a]))
    }

    /// Records an externally computed output together with its backward rule.
    pub fn custom(&self, inputs: &[Var], output: Mat, op: Box<dyn CustomOp>) -> Var {
        let needs = self.needs(inputs);
        self.push(
            output.as_standard_layout().into_owned(),
            Op::Custom(inputs.to_vec(), op),
            needs,
        )
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, out: Var) -> Grads {
        let shape = self.shape(out);
        assert_eq!(shape, (1, 1), "backward() expects a scalar output");
        self.backward_with(out, Mat::from_elem((1, 1), 1.0))
    }

    /// Reverse sweep seeded with an arbitrary upstream gradient for `out`.
    pub fn backward_with(&self, out: Var, seed: Mat) -> Grads {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Mat>> = (0..nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);

        for idx in (0..=out.0).rev() {
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let val = |v: Var| nodes[v.0].value.clone();
            let mut acc = |v: Var, contribution: Mat| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &contribution,
                    slot @ None => *slot = Some(contribution),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * &*val(*b));
                    acc(*b, &g * &*val(*a));
                }
                Op::AddRow(a, row) => {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::MulRow(a, row) => {
                    let rv = val(*row);
                    let av = val(*a);
                    acc(*row, (&g * &*av).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, &g * &*rv);
                }
                Op::BroadcastRows(a) => {
                    acc(*a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Affine(a, scale) => acc(*a, g * *scale),
                Op::MatMul(a, b) => {
                    let av = val(*a);
                    let bv = val(*b);
                    if nodes[a.0].needs_grad {
                        acc(*a, g.dot(&bv.t()));
                    }
                    if nodes[b.0].needs_grad {
                        acc(*b, av.t().dot(&g));
                    }
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&*node.value)
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(*a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&*node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(*a, d);
                }
                Op::Silu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&*val(*a)).for_each(|d, &x| {
                        let s = sigmoid(x);
                        *d *= s * (1.0 + x * (1.0 - s));
                    });
                    acc(*a, d);
                }
                Op::Exp(a) => acc(*a, &g * &*node.value),
                Op::Ln(a) => acc(*a, &g / &*val(*a)),
                Op::Square(a) => acc(*a, &g * &*val(*a) * 2.0),
                Op::Clamp(a, lo, hi) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&*val(*a)).for_each(|d, &x| {
                        if x < *lo || x > *hi {
                            *d = 0.0;
                        }
                    });
                    acc(*a, d);
                }
                Op::Sum(a) => {
                    let shape = nodes[a.0].value.dim();
                    acc(*a, Mat::from_elem(shape, g[[0, 0]]));
                }
                Op::Mean(a) => {
                    let shape = nodes[a.0].value.dim();
                    let n = (shape.0 * shape.1) as f64;
                    acc(*a, Mat::from_elem(shape, g[[0, 0]] / n));
                }
                Op::RowSum(a) => {
                    let shape = nodes[a.0].value.dim();
                    let d = g.broadcast(shape).expect("row_sum broadcast").to_owned();
                    acc(*a, d);
                }
                Op::RowNormalize(a) => {
                    let x = val(*a);
                    let y = &node.value;
                    let mut d = Mat::zeros(x.dim());
                    for ((xr, yr), (gr, mut dr)) in x
                        .rows()
                        .into_iter()
                        .zip(y.rows())
                        .zip(g.rows().into_iter().zip(d.rows_mut()))
                    {
                        let norm = xr.dot(&xr).sqrt().max(f64::MIN_POSITIVE);
                        let yg = yr.dot(&gr);
                        Zip::from(&mut dr)
                            .and(&gr)
                            .and(&yr)
                            .for_each(|d, &g, &y| *d = (g - y * yg) / norm);
                    }
                    acc(*a, d);
                }
                Op::RowDot(a, b) => {
                    let av = val(*a);
                    let bv = val(*b);
                    let gcol = g.broadcast(av.dim()).expect("row_dot broadcast");
                    acc(*a, &gcol * &*bv);
                    acc(*b, &gcol * &*av);
                }
                Op::ScaleBy(a, s) => {
                    let sv = nodes[s.0].value[[0, 0]];
                    let av = val(*a);
                    acc(*s, Mat::from_elem((1, 1), (&g * &*av).sum()));
                    acc(*a, g * sv);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let width = nodes[p.0].value.ncols();
                        let piece = g
                            .slice(ndarray::s![.., start..start + width])
                            .as_standard_layout()
                            .into_owned();
                        acc(*p, piece);
                        start += width;
                    }
                }
                Op::SliceCols(a, start) => {
                    let shape = nodes[a.0].value.dim();
                    let mut d = Mat::zeros(shape);
                    d.slice_mut(ndarray::s![.., *start..*start + g.ncols()])
                        .assign(&g);
                    acc(*a, d);
                }
                Op::Reshape(a) => {
                    let shape = nodes[a.0].value.dim();
                    let d = Mat::from_shape_vec(shape, g.iter().copied().collect())
                        .expect("reshape grad");
                    acc(*a, d);
                }
                Op::Sparse(a, map) => acc(*a, map.apply_transpose(&g)),
                Op::Custom(inputs, op) => {
                    let input_values: Vec<Arc<Mat>> = inputs.iter().map(|&v| val(v)).collect();
                    let refs: Vec<&Mat> = input_values.iter().map(|v| v.as_ref()).collect();
                    let parts = op.backward(&refs, &node.value, &g);
                    for (v, part) in inputs.iter().zip(parts) {
                        if let Some(part) = part {
                            acc(*v, part);
                        }
                    }
                }
            }
        }
        Grads { grads }
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

    fn numeric_grad(f: impl Fn(&Mat) -> f64, x: &Mat) -> Mat {
        let h = 1e-6;
        let mut out = Mat::zeros(x.dim());
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                out[[i, j]] = (f(&xp) - f(&xm)) / (2.0 * h);
            }
        }
        out
    }

    fn check(build: impl Fn(&Graph, Var) -> Var, x: Mat) {
        let g = Graph::new();
        let xv = g.input(x.clone());
        let out = build(&g, xv);
        let grads = g.backward(out);
        let analytic = grads.get_or_zeros(xv, x.dim());
        let numeric = numeric_grad(
            |probe| {
                let g = Graph::new();
                let xv = g.input(probe.clone());
                let out = build(&g, xv);
                g.scalar(out)
            },
            &x,
        );
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let x = array![[0.3, -0.7, 1.1], [0.5, 0.2, -0.4]];
        check(
            |g, x| {
                let t = g.tanh(x);
                let s = g.sigmoid(x);
                let m = g.mul(t, s);
                let sq = g.square(m);
                let si = g.silu(x);
                let e = g.exp(g.scale(x, 0.5));
                let a = g.add(sq, si);
                let b = g.sub(a, e);
                g.sum(b)
            },
            x,
        );
    }

    #[test]
    fn matmul_bias_and_normalize() {
        let w = array![[0.2, -0.1], [0.4, 0.3], [-0.5, 0.7]];
        let x = array![[0.3, -0.7, 1.1], [0.5, 0.2, -0.4]];
        check(
            move |g, x| {
                let wv = g.constant(w.clone());
                let b = g.constant(array![[0.1, -0.2]]);
                let h = g.linear(x, wv, b);
                let n = g.row_normalize(h);
                let r = g.constant(array![[1.0, 2.0], [-1.0, 0.5]]);
                let d = g.row_dot(n, r);
                let sq = g.square(d);
                g.mean(sq)
            },
            x,
        );
    }

    #[test]
    fn structural_ops() {
        let x = array![[0.3, -0.7, 1.1, 0.4], [0.5, 0.2, -0.4, 0.9]];
        let map = Arc::new(SparseMap::new(
            4,
            2,
            vec![(0, 0, 0.5), (0, 1, 0.5), (1, 2, 0.25), (1, 3, 2.0)],
        ));
        check(
            move |g, x| {
                let s = g.slice_cols(x, 1, 3);
                let c = g.concat_cols(&[s, x]);
                let r = g.reshape(c, 3, 4);
                let sp = g.sparse(r, &map);
                let row = g.constant(array![[2.0, -1.0]]);
                let mr = g.mul_row(sp, row);
                let rs = g.row_sum(mr);
                let l = g.ln(g.affine(g.square(rs), 1.0, 1.0));
                let k = g.sum(l);
                let scaled = g.scale_by(x, k);
                g.sum(g.square(scaled))
            },
            x,
        );
    }

    #[test]
    fn broadcast_rows_accumulates() {
        let x = array![[0.3, -0.7]];
        check(
            |g, x| {
                let b = g.broadcast_rows(x, 3);
                let w = g.constant(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
                g.sum(g.mul(b, w))
            },
            x,
        );
    }

    #[test]
    fn constants_get_no_gradient() {
        let g = Graph::new();
        let c = g.constant(array![[1.0, 2.0]]);
        let x = g.input(array![[3.0, 4.0]]);
        let out = g.sum(g.mul(c, x));
        let grads = g.backward(out);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap(), &array![[1.0, 2.0]]);
    }
}
