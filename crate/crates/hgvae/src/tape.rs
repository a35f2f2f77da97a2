//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation as it is evaluated; [`Tape::backward`]
//! replays the record in reverse to accumulate gradients of a scalar output
//! with respect to any recorded node. Scalars are represented as 1x1
//! matrices so the whole engine works on a single value type.
//!
//! The op set is deliberately small: exactly what the attention encoder,
//! posterior heads, and the three training losses need. Every op's adjoint
//! is exercised against central finite differences in the tests below.

use std::sync::Arc;

use ndarray::{Array2, Axis};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    /// y = mul * x + add, elementwise with constant coefficients.
    Affine { x: NodeId, mul: f64 },
    AddRowVec(NodeId, NodeId),
    /// S_ij = f_i + g_j for column vectors f, g.
    PairwiseAdd(NodeId, NodeId),
    LeakyRelu { x: NodeId, slope: f64 },
    Elu { x: NodeId, alpha: f64 },
    Tanh(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Powf { x: NodeId, p: f64 },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    /// x < threshold is replaced by `value` (zero gradient there).
    ReplaceBelow { x: NodeId, threshold: f64 },
    MaskedSoftmaxRows { x: NodeId, mask: Arc<Array2<bool>> },
    SoftmaxCol(NodeId),
    RowStandardize { x: NodeId, eps: f64 },
    L2NormalizeRows { x: NodeId, eps: f64 },
    RowDot(NodeId, NodeId),
    SumRows(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    MulConst { x: NodeId, c: Arc<Array2<f64>> },
    ScaleByScalar { x: NodeId, s: NodeId },
    StackScalars(Vec<NodeId>),
    GetElement { x: NodeId, i: usize, j: usize },
    ConcatCols(Vec<NodeId>),
    SelectRows { x: NodeId, idx: Arc<Vec<usize>> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradient table produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the backward root w.r.t. `id`; zero matrix if the node
    /// does not influence the root.
    pub fn wrt(&self, tape: &Tape, id: NodeId) -> Array2<f64> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(tape.nodes[id.0].value.raw_dim()),
        }
    }
}

/// Record of a differentiable computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "expected scalar node");
        v[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> NodeId {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, name: &str) {
        assert_eq!(
            self.value(a).dim(),
            self.value(b).dim(),
            "{name}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "add");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "sub");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "mul");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "div");
        let v = self.value(a) / self.value(b);
        self.push(v, Op::Div(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.value(a).ncols(),
            self.value(b).nrows(),
            "matmul: inner dimensions differ"
        );
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    /// `mul * x + add` elementwise with constant scalars.
    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> NodeId {
        let v = self.value(x).mapv(|e| mul * e + add);
        self.push(v, Op::Affine { x, mul })
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        self.affine(x, k, 0.0)
    }

    /// Broadcast-add a 1xd row vector to every row of an nxd matrix.
    pub fn add_row_vec(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(b).nrows(), 1, "add_row_vec: rhs must be 1xd");
        assert_eq!(
            self.value(a).ncols(),
            self.value(b).ncols(),
            "add_row_vec: widths differ"
        );
        let v = self.value(a) + &self.value(b).row(0);
        self.push(v, Op::AddRowVec(a, b))
    }

    /// S_ij = f_i + g_j from two nx1 column vectors.
    pub fn pairwise_add(&mut self, f: NodeId, g: NodeId) -> NodeId {
        assert_eq!(self.value(f).ncols(), 1, "pairwise_add: f must be nx1");
        assert_eq!(self.value(g).ncols(), 1, "pairwise_add: g must be nx1");
        let n = self.value(f).nrows();
        let m = self.value(g).nrows();
        let mut v = Array2::zeros((n, m));
        for i in 0..n {
            for j in 0..m {
                v[[i, j]] = self.value(f)[[i, 0]] + self.value(g)[[j, 0]];
            }
        }
        self.push(v, Op::PairwiseAdd(f, g))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let v = self.value(x).mapv(|e| if e > 0.0 { e } else { slope * e });
        self.push(v, Op::LeakyRelu { x, slope })
    }

    pub fn elu(&mut self, x: NodeId, alpha: f64) -> NodeId {
        let v = self
            .value(x)
            .mapv(|e| if e > 0.0 { e } else { alpha * (e.exp() - 1.0) });
        self.push(v, Op::Elu { x, alpha })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).mapv(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).mapv(f64::exp);
        self.push(v, Op::Exp(x))
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).mapv(f64::ln);
        self.push(v, Op::Ln(x))
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).mapv(f64::sqrt);
        self.push(v, Op::Sqrt(x))
    }

    pub fn powf(&mut self, x: NodeId, p: f64) -> NodeId {
        let v = self.value(x).mapv(|e| e.powf(p));
        self.push(v, Op::Powf { x, p })
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(x).mapv(|e| e.clamp(lo, hi));
        self.push(v, Op::Clamp { x, lo, hi })
    }

    pub fn clamp_min(&mut self, x: NodeId, lo: f64) -> NodeId {
        self.clamp(x, lo, f64::INFINITY)
    }

    /// Entries below `threshold` are replaced by `value` and receive zero
    /// gradient; entries at or above pass through unchanged.
    pub fn replace_below(&mut self, x: NodeId, threshold: f64, value: f64) -> NodeId {
        let v = self
            .value(x)
            .mapv(|e| if e < threshold { value } else { e });
        self.push(v, Op::ReplaceBelow { x, threshold })
    }

    /// Row-wise softmax restricted to `mask`; entries off the mask are zero.
    /// Rows whose mask is empty come out all-zero.
    pub fn masked_softmax_rows(&mut self, x: NodeId, mask: Arc<Array2<bool>>) -> NodeId {
        assert_eq!(self.value(x).dim(), mask.dim(), "masked_softmax_rows: mask shape");
        let xv = self.value(x);
        let (n, m) = xv.dim();
        let mut v = Array2::zeros((n, m));
        for i in 0..n {
            let mut max = f64::NEG_INFINITY;
            for j in 0..m {
                if mask[[i, j]] && xv[[i, j]] > max {
                    max = xv[[i, j]];
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for j in 0..m {
                if mask[[i, j]] {
                    let e = (xv[[i, j]] - max).exp();
                    v[[i, j]] = e;
                    sum += e;
                }
            }
            for j in 0..m {
                if mask[[i, j]] {
                    v[[i, j]] /= sum;
                }
            }
        }
        self.push(v, Op::MaskedSoftmaxRows { x, mask })
    }

    /// Softmax down a px1 column vector.
    pub fn softmax_col(&mut self, x: NodeId) -> NodeId {
        assert_eq!(self.value(x).ncols(), 1, "softmax_col: expected px1");
        let xv = self.value(x);
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps = xv.mapv(|e| (e - max).exp());
        let sum: f64 = exps.sum();
        self.push(exps / sum, Op::SoftmaxCol(x))
    }

    /// Standardize each row to zero mean and unit variance (population
    /// variance, `eps` added under the square root; no learnable affine).
    pub fn row_standardize(&mut self, x: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let (n, d) = xv.dim();
        let mut v = Array2::zeros((n, d));
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                v[[i, j]] = (xv[[i, j]] - mean) * inv;
            }
        }
        self.push(v, Op::RowStandardize { x, eps })
    }

    /// Scale each row to unit L2 norm; `eps` is added inside the square root
    /// so zero rows stay finite.
    pub fn l2_normalize_rows(&mut self, x: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let (n, d) = xv.dim();
        let mut v = Array2::zeros((n, d));
        for i in 0..n {
            let r = (xv.row(i).iter().map(|e| e * e).sum::<f64>() + eps).sqrt();
            for j in 0..d {
                v[[i, j]] = xv[[i, j]] / r;
            }
        }
        self.push(v, Op::L2NormalizeRows { x, eps })
    }

    /// Row-wise dot product of two nxd matrices, producing nx1.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "row_dot");
        let av = self.value(a);
        let bv = self.value(b);
        let n = av.nrows();
        let mut v = Array2::zeros((n, 1));
        for i in 0..n {
            v[[i, 0]] = av.row(i).dot(&bv.row(i));
        }
        self.push(v, Op::RowDot(a, b))
    }

    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let v = self
            .value(x)
            .sum_axis(Axis(1))
            .insert_axis(Axis(1))
            .to_owned();
        self.push(v, Op::SumRows(x))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(v, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let len = self.value(x).len() as f64;
        let v = Array2::from_elem((1, 1), self.value(x).sum() / len);
        self.push(v, Op::MeanAll(x))
    }

    /// Elementwise multiply by a constant matrix (dropout masks, fixed noise).
    pub fn mul_const(&mut self, x: NodeId, c: Arc<Array2<f64>>) -> NodeId {
        assert_eq!(self.value(x).dim(), c.dim(), "mul_const: shape mismatch");
        let v = self.value(x) * c.as_ref();
        self.push(v, Op::MulConst { x, c })
    }

    /// Multiply a matrix node by a 1x1 scalar node.
    pub fn scale_by_scalar(&mut self, x: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.value(s).dim(), (1, 1), "scale_by_scalar: s must be 1x1");
        let sv = self.value(s)[[0, 0]];
        let v = self.value(x).mapv(|e| sv * e);
        self.push(v, Op::ScaleByScalar { x, s })
    }

    /// Stack p scalar nodes into a px1 column vector.
    pub fn stack_scalars(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "stack_scalars: empty input");
        let mut v = Array2::zeros((xs.len(), 1));
        for (i, &id) in xs.iter().enumerate() {
            v[[i, 0]] = self.scalar_value(id);
        }
        self.push(v, Op::StackScalars(xs.to_vec()))
    }

    /// Extract one element as a 1x1 node.
    pub fn get_element(&mut self, x: NodeId, i: usize, j: usize) -> NodeId {
        let v = Array2::from_elem((1, 1), self.value(x)[[i, j]]);
        self.push(v, Op::GetElement { x, i, j })
    }

    /// Concatenate equally-tall matrices along the column axis.
    pub fn concat_cols(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "concat_cols: empty input");
        let n = self.value(xs[0]).nrows();
        let total: usize = xs.iter().map(|&id| self.value(id).ncols()).sum();
        let mut v = Array2::zeros((n, total));
        let mut col = 0;
        for &id in xs {
            let part = self.value(id);
            assert_eq!(part.nrows(), n, "concat_cols: row counts differ");
            let w = part.ncols();
            v.slice_mut(ndarray::s![.., col..col + w]).assign(part);
            col += w;
        }
        self.push(v, Op::ConcatCols(xs.to_vec()))
    }

    /// Gather rows by index (duplicates allowed; gradient scatter-adds).
    pub fn select_rows(&mut self, x: NodeId, idx: Arc<Vec<usize>>) -> NodeId {
        let xv = self.value(x);
        let mut v = Array2::zeros((idx.len(), xv.ncols()));
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).assign(&xv.row(i));
        }
        self.push(v, Op::SelectRows { x, idx })
    }

    /// Accumulate gradients of the scalar node `root` w.r.t. every node.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward: root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for id in (0..=root.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, id: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[id];
        let mut add_to = |target: NodeId, delta: Array2<f64>| {
            match &mut grads[target.0] {
                Some(acc) => *acc += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(*a, g.clone());
                add_to(*b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(*a, g.clone());
                add_to(*b, -g);
            }
            Op::Mul(a, b) => {
                add_to(*a, g * self.value(*b));
                add_to(*b, g * self.value(*a));
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                add_to(*a, g / bv);
                add_to(*b, -(g * &node.value / bv));
            }
            Op::MatMul(a, b) => {
                add_to(*a, g.dot(&self.value(*b).t()));
                add_to(*b, self.value(*a).t().dot(g));
            }
            Op::Transpose(a) => add_to(*a, g.t().to_owned()),
            Op::Affine { x, mul } => add_to(*x, g * *mul),
            Op::AddRowVec(a, b) => {
                add_to(*a, g.clone());
                let col_sum = g.sum_axis(Axis(0)).insert_axis(Axis(0)).to_owned();
                add_to(*b, col_sum);
            }
            Op::PairwiseAdd(f, h) => {
                add_to(*f, g.sum_axis(Axis(1)).insert_axis(Axis(1)).to_owned());
                add_to(*h, g.sum_axis(Axis(0)).insert_axis(Axis(1)).to_owned());
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                let mut d = g.clone();
                d.zip_mut_with(xv, |gi, &xi| {
                    if xi <= 0.0 {
                        *gi *= slope;
                    }
                });
                add_to(*x, d);
            }
            Op::Elu { x, alpha } => {
                let xv = self.value(*x);
                let yv = &node.value;
                let mut d = g.clone();
                for ((gi, &xi), &yi) in d.iter_mut().zip(xv.iter()).zip(yv.iter()) {
                    if xi <= 0.0 {
                        *gi *= yi + alpha;
                    }
                }
                add_to(*x, d);
            }
            Op::Tanh(x) => add_to(*x, g * &node.value.mapv(|y| 1.0 - y * y)),
            Op::Exp(x) => add_to(*x, g * &node.value),
            Op::Ln(x) => add_to(*x, g / self.value(*x)),
            Op::Sqrt(x) => add_to(*x, g / &node.value.mapv(|y| 2.0 * y)),
            Op::Powf { x, p } => {
                let d = self.value(*x).mapv(|e| p * e.powf(p - 1.0));
                add_to(*x, g * &d);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                let mut d = g.clone();
                d.zip_mut_with(xv, |gi, &xi| {
                    if xi < *lo || xi > *hi {
                        *gi = 0.0;
                    }
                });
                add_to(*x, d);
            }
            Op::ReplaceBelow { x, threshold } => {
                let xv = self.value(*x);
                let mut d = g.clone();
                d.zip_mut_with(xv, |gi, &xi| {
                    if xi < *threshold {
                        *gi = 0.0;
                    }
                });
                add_to(*x, d);
            }
            Op::MaskedSoftmaxRows { x, mask } => {
                let y = &node.value;
                let (n, m) = y.dim();
                let mut d = Array2::zeros((n, m));
                for i in 0..n {
                    let mut s = 0.0;
                    for j in 0..m {
                        if mask[[i, j]] {
                            s += y[[i, j]] * g[[i, j]];
                        }
                    }
                    for j in 0..m {
                        if mask[[i, j]] {
                            d[[i, j]] = y[[i, j]] * (g[[i, j]] - s);
                        }
                    }
                }
                add_to(*x, d);
            }
            Op::SoftmaxCol(x) => {
                let y = &node.value;
                let s: f64 = y.iter().zip(g.iter()).map(|(yi, gi)| yi * gi).sum();
                let d = ndarray::Zip::from(y).and(g).map_collect(|&yi, &gi| yi * (gi - s));
                add_to(*x, d);
            }
            Op::RowStandardize { x, eps } => {
                let xv = self.value(*x);
                let y = &node.value;
                let (n, dd) = xv.dim();
                let dim = dd as f64;
                let mut d = Array2::zeros((n, dd));
                for i in 0..n {
                    let row = xv.row(i);
                    let mean = row.sum() / dim;
                    let var = row.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / dim;
                    let inv = 1.0 / (var + eps).sqrt();
                    let g_mean = g.row(i).sum() / dim;
                    let gy_mean = g
                        .row(i)
                        .iter()
                        .zip(y.row(i).iter())
                        .map(|(gi, yi)| gi * yi)
                        .sum::<f64>()
                        / dim;
                    for j in 0..dd {
                        d[[i, j]] = inv * (g[[i, j]] - g_mean - y[[i, j]] * gy_mean);
                    }
                }
                add_to(*x, d);
            }
            Op::L2NormalizeRows { x, eps } => {
                let xv = self.value(*x);
                let (n, dd) = xv.dim();
                let mut d = Array2::zeros((n, dd));
                for i in 0..n {
                    let r2 = xv.row(i).iter().map(|e| e * e).sum::<f64>() + eps;
                    let r = r2.sqrt();
                    let gx: f64 = g.row(i).dot(&xv.row(i));
                    for j in 0..dd {
                        d[[i, j]] = (g[[i, j]] - gx * xv[[i, j]] / r2) / r;
                    }
                }
                add_to(*x, d);
            }
            Op::RowDot(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (n, dd) = av.dim();
                let mut da = Array2::zeros((n, dd));
                let mut db = Array2::zeros((n, dd));
                for i in 0..n {
                    let gi = g[[i, 0]];
                    for j in 0..dd {
                        da[[i, j]] = gi * bv[[i, j]];
                        db[[i, j]] = gi * av[[i, j]];
                    }
                }
                add_to(*a, da);
                add_to(*b, db);
            }
            Op::SumRows(x) => {
                let (n, m) = self.value(*x).dim();
                let mut d = Array2::zeros((n, m));
                for i in 0..n {
                    d.row_mut(i).fill(g[[i, 0]]);
                }
                add_to(*x, d);
            }
            Op::SumAll(x) => {
                let shape = self.value(*x).raw_dim();
                add_to(*x, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::MeanAll(x) => {
                let shape = self.value(*x).raw_dim();
                let len = self.value(*x).len() as f64;
                add_to(*x, Array2::from_elem(shape, g[[0, 0]] / len));
            }
            Op::MulConst { x, c } => add_to(*x, g * c.as_ref()),
            Op::ScaleByScalar { x, s } => {
                let sv = self.value(*s)[[0, 0]];
                add_to(*x, g * sv);
                let dot = (g * self.value(*x)).sum();
                add_to(*s, Array2::from_elem((1, 1), dot));
            }
            Op::StackScalars(xs) => {
                for (i, &sid) in xs.iter().enumerate() {
                    add_to(sid, Array2::from_elem((1, 1), g[[i, 0]]));
                }
            }
            Op::GetElement { x, i, j } => {
                let mut d = Array2::zeros(self.value(*x).raw_dim());
                d[[*i, *j]] = g[[0, 0]];
                add_to(*x, d);
            }
            Op::ConcatCols(xs) => {
                let mut col = 0;
                for &part in xs {
                    let w = self.value(part).ncols();
                    let d = g.slice(ndarray::s![.., col..col + w]).to_owned();
                    add_to(part, d);
                    col += w;
                }
            }
            Op::SelectRows { x, idx } => {
                let mut d = Array2::zeros(self.value(*x).raw_dim());
                for (k, &i) in idx.iter().enumerate() {
                    let mut row = d.row_mut(i);
                    row += &g.row(k);
                }
                add_to(*x, d);
            }
        }
    }
}
