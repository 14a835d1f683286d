//! Reverse-mode automatic differentiation over `Array2<f64>` values.
//!
//! A [`Tape`] records every operation of a forward pass in topological
//! order; [`Tape::backward`] replays it in reverse and accumulates exact
//! gradients for every node. Leaves may be bound to a [`ParamId`] so the
//! optimizer can collect gradients per named parameter.
//!
//! The op set is the minimum needed by the model: dense linear algebra,
//! pointwise nonlinearities, row/column broadcasts, gather/slice, and the
//! segment ops (softmax/sum/max over contiguous groups) that graph
//! attention and per-sentence pooling are built from. Vectors are
//! represented as `1 x d` or `n x 1` matrices.

use ndarray::{s, Array2, Axis};

use crate::params::ParamId;

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    /// k * x + c, elementwise; only k matters for the gradient.
    Affine(NodeId, f64),
    /// (n x d) + (1 x d), row broadcast.
    AddRow(NodeId, NodeId),
    /// (n x d) * (1 x d), row broadcast.
    MulRow(NodeId, NodeId),
    /// (n x d) * (n x 1), column broadcast.
    MulCol(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    Transpose(NodeId),
    /// Output row r = input row idx[r]. Gradient scatter-adds.
    GatherRows(NodeId, Vec<usize>),
    /// Output has n_rows rows; out[targets[r]] += in[r], rest zero.
    ScatterRows(NodeId, Vec<usize>, usize),
    /// Columns [start, end) of the input.
    SliceCols(NodeId, usize, usize),
    LeakyRelu(NodeId, f64),
    Elu(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// ln(max(x, eps)); gradient is 0 where clamped.
    LnClamped(NodeId, f64),
    /// Softmax of an (E x 1) logit column within segments. Entry e belongs
    /// to segment `seg[e]`; normalization runs over each segment.
    SegmentSoftmax {
        logits: NodeId,
        seg: Vec<usize>,
        n_segments: usize,
    },
    /// (E x d) rows summed into their segment: output is (S x d).
    SegmentSum { values: NodeId, seg: Vec<usize> },
    /// Columnwise max over each segment's rows; empty segments yield 0.
    /// `argmax[s * d + c]` stores the winning input row (usize::MAX if empty).
    SegmentMax {
        values: NodeId,
        n_segments: usize,
        argmax: Vec<usize>,
    },
    /// Row softmax of (n x m) logits restricted to entries where
    /// mask != 0. Masked-out entries get probability 0.
    MaskedSoftmaxRows { logits: NodeId },
    /// Sum of all entries, yielding 1 x 1.
    SumAll(NodeId),
    /// Row-wise standardization (x - mean) / sqrt(var + eps), no affine.
    LayerNormRows { input: NodeId, eps: f64 },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    param: Option<ParamId>,
}

/// Gradient of the scalar root with respect to every node, produced by
/// [`Tape::backward`].
pub struct Grads {
    by_node: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.by_node[id.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a named parameter; its gradient is collected by
    /// [`Grads`] consumers keyed on the id.
    pub fn param(&mut self, pid: ParamId, value: Array2<f64>) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.nodes[id.0].param = Some(pid);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        assert_eq!(ac, br, "matmul shape mismatch: {ar}x{ac} . {br}x{bc}");
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shape");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MulElem(a, b))
    }

    pub fn affine(&mut self, a: NodeId, k: f64, c: f64) -> NodeId {
        let v = self.value(a).mapv(|x| k * x + c);
        self.push(v, Op::Affine(a, k))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (_, d) = self.value(a).dim();
        assert_eq!(self.value(row).dim(), (1, d), "add_row shape");
        let v = self.value(a) + &self.value(row).row(0);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (_, d) = self.value(a).dim();
        assert_eq!(self.value(row).dim(), (1, d), "mul_row shape");
        let v = self.value(a) * &self.value(row).row(0);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (n, _) = self.value(a).dim();
        assert_eq!(self.value(col).dim(), (n, 1), "mul_col shape");
        let v = self.value(a) * &self.value(col).column(0).insert_axis(Axis(1));
        self.push(v, Op::MulCol(a, col))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut v = Array2::zeros((n, total));
        let mut at = 0;
        for p in parts {
            let part = self.value(*p);
            assert_eq!(part.nrows(), n, "concat_cols row mismatch");
            let w = part.ncols();
            v.slice_mut(s![.., at..at + w]).assign(part);
            at += w;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let src = self.value(a);
        let mut v = Array2::zeros((idx.len(), src.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).assign(&src.row(i));
        }
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn scatter_rows(&mut self, a: NodeId, targets: &[usize], n_rows: usize) -> NodeId {
        let src = self.value(a);
        assert_eq!(src.nrows(), targets.len(), "scatter_rows target count");
        let mut v = Array2::zeros((n_rows, src.ncols()));
        for (r, &tgt) in targets.iter().enumerate() {
            let mut row = v.row_mut(tgt);
            row += &src.row(r);
        }
        self.push(v, Op::ScatterRows(a, targets.to_vec(), n_rows))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        assert!(start < end && end <= self.value(a).ncols(), "slice_cols range");
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn elu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { x.exp() - 1.0 });
        self.push(v, Op::Elu(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn ln_clamped(&mut self, a: NodeId, eps: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(eps).ln());
        self.push(v, Op::LnClamped(a, eps))
    }

    pub fn segment_softmax(&mut self, logits: NodeId, seg: &[usize], n_segments: usize) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.dim(), (seg.len(), 1), "segment_softmax expects E x 1 logits");
        let mut max = vec![f64::NEG_INFINITY; n_segments];
        for (e, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(z[(e, 0)]);
        }
        let mut denom = vec![0.0; n_segments];
        let mut v = Array2::zeros((seg.len(), 1));
        for (e, &s) in seg.iter().enumerate() {
            let x = (z[(e, 0)] - max[s]).exp();
            v[(e, 0)] = x;
            denom[s] += x;
        }
        for (e, &s) in seg.iter().enumerate() {
            v[(e, 0)] /= denom[s];
        }
        self.push(
            v,
            Op::SegmentSoftmax {
                logits,
                seg: seg.to_vec(),
                n_segments,
            },
        )
    }

    pub fn segment_sum(&mut self, values: NodeId, seg: &[usize], n_segments: usize) -> NodeId {
        let x = self.value(values);
        assert_eq!(x.nrows(), seg.len(), "segment_sum row count");
        let mut v = Array2::zeros((n_segments, x.ncols()));
        for (e, &s) in seg.iter().enumerate() {
            let mut row = v.row_mut(s);
            row += &x.row(e);
        }
        self.push(
            v,
            Op::SegmentSum {
                values,
                seg: seg.to_vec(),
            },
        )
    }

    pub fn segment_max(&mut self, values: NodeId, seg: &[usize], n_segments: usize) -> NodeId {
        let x = self.value(values);
        assert_eq!(x.nrows(), seg.len(), "segment_max row count");
        let d = x.ncols();
        let mut v = Array2::zeros((n_segments, d));
        let mut argmax = vec![usize::MAX; n_segments * d];
        let mut best = vec![f64::NEG_INFINITY; n_segments * d];
        for (e, &s) in seg.iter().enumerate() {
            for c in 0..d {
                let val = x[(e, c)];
                if val > best[s * d + c] {
                    best[s * d + c] = val;
                    argmax[s * d + c] = e;
                }
            }
        }
        for sc in 0..n_segments * d {
            if argmax[sc] != usize::MAX {
                v[(sc / d, sc % d)] = best[sc];
            }
        }
        self.push(
            v,
            Op::SegmentMax {
                values,
                n_segments,
                argmax,
            },
        )
    }

    pub fn masked_softmax_rows(&mut self, logits: NodeId, mask: &Array2<f64>) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.dim(), mask.dim(), "masked_softmax mask shape");
        let (n, m) = z.dim();
        let mut v = Array2::zeros((n, m));
        for r in 0..n {
            let mut mx = f64::NEG_INFINITY;
            for c in 0..m {
                if mask[(r, c)] != 0.0 {
                    mx = mx.max(z[(r, c)]);
                }
            }
            if mx == f64::NEG_INFINITY {
                continue; // fully masked row: all-zero probabilities
            }
            let mut denom = 0.0;
            for c in 0..m {
                if mask[(r, c)] != 0.0 {
                    let x = (z[(r, c)] - mx).exp();
                    v[(r, c)] = x;
                    denom += x;
                }
            }
            for c in 0..m {
                v[(r, c)] /= denom;
            }
        }
        self.push(v, Op::MaskedSoftmaxRows { logits })
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn layer_norm_rows(&mut self, input: NodeId, eps: f64) -> NodeId {
        let x = self.value(input);
        let d = x.ncols() as f64;
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d;
            let denom = (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) / denom);
        }
        self.push(v, Op::LayerNormRows { input, eps })
    }

    /// Backpropagate from a 1x1 root node. Returns per-node gradients.
    pub fn backward(&self, root: NodeId) -> Grads {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be scalar");
        let mut g: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        g[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=root.0).rev() {
            let grad = match g[i].take() {
                Some(gr) => gr,
                None => continue,
            };
            self.accumulate(i, &grad, &mut g);
            g[i] = Some(grad);
        }
        Grads { by_node: g }
    }

    fn accumulate(&self, i: usize, grad: &Array2<f64>, g: &mut [Option<Array2<f64>>]) {
        let add_to = |g: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>| {
            match &mut g[id.0] {
                Some(acc) => *acc += &delta,
                slot @ None => *slot = Some(delta),
            }
        };

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = grad.dot(&self.value(*b).t());
                let db = self.value(*a).t().dot(grad);
                add_to(g, *a, da);
                add_to(g, *b, db);
            }
            Op::Add(a, b) => {
                add_to(g, *a, grad.clone());
                add_to(g, *b, grad.clone());
            }
            Op::Sub(a, b) => {
                add_to(g, *a, grad.clone());
                add_to(g, *b, -grad.clone());
            }
            Op::MulElem(a, b) => {
                add_to(g, *a, grad * self.value(*b));
                add_to(g, *b, grad * self.value(*a));
            }
            Op::Affine(a, k) => add_to(g, *a, grad.mapv(|x| k * x)),
            Op::AddRow(a, row) => {
                add_to(g, *a, grad.clone());
                let dr = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                add_to(g, *row, dr);
            }
            Op::MulRow(a, row) => {
                add_to(g, *a, grad * &self.value(*row).row(0));
                let dr = (grad * self.value(*a))
                    .sum_axis(Axis(0))
                    .insert_axis(Axis(0));
                add_to(g, *row, dr);
            }
            Op::MulCol(a, col) => {
                let c = self.value(*col).column(0).insert_axis(Axis(1));
                add_to(g, *a, grad * &c);
                let dc = (grad * self.value(*a))
                    .sum_axis(Axis(1))
                    .insert_axis(Axis(1));
                add_to(g, *col, dc);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    add_to(g, *p, grad.slice(s![.., at..at + w]).to_owned());
                    at += w;
                }
            }
            Op::Transpose(a) => add_to(g, *a, grad.t().to_owned()),
            Op::GatherRows(a, idx) => {
                let mut da = Array2::zeros(self.value(*a).dim());
                for (r, &src) in idx.iter().enumerate() {
                    let mut row = da.row_mut(src);
                    row += &grad.row(r);
                }
                add_to(g, *a, da);
            }
            Op::ScatterRows(a, targets, _n) => {
                let mut da = Array2::zeros(self.value(*a).dim());
                for (r, &tgt) in targets.iter().enumerate() {
                    let mut row = da.row_mut(r);
                    row += &grad.row(tgt);
                }
                add_to(g, *a, da);
            }
            Op::SliceCols(a, start, _end) => {
                let mut da = Array2::zeros(self.value(*a).dim());
                da.slice_mut(s![.., *start..*start + grad.ncols()])
                    .assign(grad);
                add_to(g, *a, da);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let da = Array2::from_shape_fn(x.dim(), |(r, c)| {
                    grad[(r, c)] * if x[(r, c)] > 0.0 { 1.0 } else { *slope }
                });
                add_to(g, *a, da);
            }
            Op::Elu(a) => {
                let x = self.value(*a);
                let y = &self.nodes[i].value;
                let da = Array2::from_shape_fn(x.dim(), |(r, c)| {
                    grad[(r, c)] * if x[(r, c)] > 0.0 { 1.0 } else { y[(r, c)] + 1.0 }
                });
                add_to(g, *a, da);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let da = Array2::from_shape_fn(x.dim(), |(r, c)| {
                    if x[(r, c)] > 0.0 { grad[(r, c)] } else { 0.0 }
                });
                add_to(g, *a, da);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                add_to(g, *a, grad * &y.mapv(|s| s * (1.0 - s)));
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                add_to(g, *a, grad * &y.mapv(|t| 1.0 - t * t));
            }
            Op::LnClamped(a, eps) => {
                let x = self.value(*a);
                let da = Array2::from_shape_fn(x.dim(), |(r, c)| {
                    if x[(r, c)] > *eps { grad[(r, c)] / x[(r, c)] } else { 0.0 }
                });
                add_to(g, *a, da);
            }
            Op::SegmentSoftmax {
                logits,
                seg,
                n_segments,
            } => {
                let p = &self.nodes[i].value;
                let mut dot = vec![0.0; *n_segments];
                for (e, &sgm) in seg.iter().enumerate() {
                    dot[sgm] += grad[(e, 0)] * p[(e, 0)];
                }
                let mut dz = Array2::zeros(p.dim());
                for (e, &sgm) in seg.iter().enumerate() {
                    dz[(e, 0)] = p[(e, 0)] * (grad[(e, 0)] - dot[sgm]);
                }
                add_to(g, *logits, dz);
            }
            Op::SegmentSum { values, seg, .. } => {
                let d = self.value(*values).ncols();
                let mut dv = Array2::zeros((seg.len(), d));
                for (e, &sgm) in seg.iter().enumerate() {
                    dv.row_mut(e).assign(&grad.row(sgm));
                }
                add_to(g, *values, dv);
            }
            Op::SegmentMax {
                values,
                n_segments,
                argmax,
                ..
            } => {
                let x = self.value(*values);
                let d = x.ncols();
                let mut dv = Array2::zeros(x.dim());
                for s in 0..*n_segments {
                    for c in 0..d {
                        let e = argmax[s * d + c];
                        if e != usize::MAX {
                            dv[(e, c)] += grad[(s, c)];
                        }
                    }
                }
                add_to(g, *values, dv);
            }
            Op::MaskedSoftmaxRows { logits } => {
                let p = &self.nodes[i].value;
                let (n, m) = p.dim();
                let mut dz = Array2::zeros((n, m));
                for r in 0..n {
                    let mut dot = 0.0;
                    for c in 0..m {
                        dot += grad[(r, c)] * p[(r, c)];
                    }
                    for c in 0..m {
                        dz[(r, c)] = p[(r, c)] * (grad[(r, c)] - dot);
                    }
                }
                add_to(g, *logits, dz);
            }
            Op::SumAll(a) => {
                let da = Array2::from_elem(self.value(*a).dim(), grad[(0, 0)]);
                add_to(g, *a, da);
            }
            Op::LayerNormRows { input, eps } => {
                let x = self.value(*input);
                let y = &self.nodes[i].value;
                let (n, d) = x.dim();
                let df = d as f64;
                let mut dx = Array2::zeros((n, d));
                for r in 0..n {
                    let mean = x.row(r).sum() / df;
                    let var = x.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / df;
                    let denom = (var + eps).sqrt();
                    let g_mean = grad.row(r).sum() / df;
                    let gy_dot = grad
                        .row(r)
                        .iter()
                        .zip(y.row(r).iter())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / df;
                    for c in 0..d {
                        dx[(r, c)] = (grad[(r, c)] - g_mean - y[(r, c)] * gy_dot) / denom;
                    }
                }
                add_to(g, *input, dx);
            }
        }
    }

    /// Collect gradients for every param-bound leaf. A parameter bound to
    /// several leaves has the contributions summed.
    pub fn param_grads(&self, grads: &Grads) -> Vec<(ParamId, Array2<f64>)> {
        let mut out: Vec<(ParamId, Array2<f64>)> = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(pid), Some(grad)) = (node.param, grads.by_node[i].as_ref()) {
                match out.iter_mut().find(|(p, _)| *p == pid) {
                    Some((_, acc)) => *acc += grad,
                    None => out.push((pid, grad.clone())),
                }
            }
        }
        out
    }
}
