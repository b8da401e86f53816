//! Reverse-mode automatic differentiation over dense 64-bit matrices.
//!
//! A [`Graph`] records every operation of a forward pass in construction
//! order; [`Graph::backward`] walks the tape in reverse, accumulating
//! gradients into every node. Models re-record a fresh graph each step.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("non-finite activation at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("backward requires a 1x1 scalar node, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
}

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Broadcast-add a 1-row bias to every row.
    AddRow(NodeId, NodeId),
    /// Broadcast-multiply every row by a 1-row gain.
    MulRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    /// Row-wise normalization to zero mean, unit variance.
    LayerNorm(NodeId, f64),
    GatherRows(NodeId, Vec<usize>),
    SegmentSum(NodeId, Vec<usize>),
    /// Softmax over a column vector within contiguous segments.
    SegmentSoftmax(NodeId, Vec<usize>),
    /// Scale row i of the first operand by the scalar in row i of the second.
    MulCol(NodeId, NodeId),
    Minimum(NodeId, NodeId),
    Maximum(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    Transpose(NodeId),
    /// Column-wise max over all rows, yielding a single row.
    MaxOverRows(NodeId),
    SumAll(NodeId),
    /// ln(max(x, eps)); gradient is zero in the clamped region.
    LnClamp(NodeId, f64),
    SoftmaxRows(NodeId),
    Reshape(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::LayerNorm(..) => "layer_norm",
            Op::GatherRows(..) => "gather_rows",
            Op::SegmentSum(..) => "segment_sum",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::MulCol(..) => "mul_col",
            Op::Minimum(..) => "minimum",
            Op::Maximum(..) => "maximum",
            Op::ConcatCols(..) => "concat_cols",
            Op::Transpose(..) => "transpose",
            Op::MaxOverRows(..) => "max_over_rows",
            Op::SumAll(..) => "sum_all",
            Op::LnClamp(..) => "ln_clamp",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Reshape(..) => "reshape",
        }
    }
}

pub type NodeId = usize;

struct Node {
    op: Op,
    value: Mat,
    grad: Mat,
}

/// Operation tape. Node ids are construction order, which is a valid
/// topological order for the backward sweep.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Mat) -> NodeId {
        let grad = Mat::zeros(value.rows, value.cols);
        self.nodes.push(Node { op, value, grad });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> &Mat {
        &self.nodes[id].grad
    }

    /// Returns an error naming the first node whose value is non-finite.
    pub fn check_finite(&self, id: NodeId) -> Result<(), TapeError> {
        if self.nodes[id].value.is_finite() {
            Ok(())
        } else {
            Err(TapeError::NonFinite {
                node: id,
                op: self.nodes[id].op.name(),
            })
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (am, bm) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(am.cols, bm.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(am.rows, bm.cols);
        for i in 0..am.rows {
            for k in 0..am.cols {
                let aik = am.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..bm.cols {
                    out.data[i * out.cols + j] += aik * bm.get(k, j);
                }
            }
        }
        self.push(Op::MatMul(a, b), out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Mat {
        let (am, bm) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((am.rows, am.cols), (bm.rows, bm.cols), "shape mismatch");
        let data = am
            .data
            .iter()
            .zip(&bm.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Mat::from_vec(am.rows, am.cols, data)
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (am, bm) = (&self.nodes[a].value, &self.nodes[bias].value);
        assert_eq!(bm.rows, 1);
        assert_eq!(am.cols, bm.cols);
        let mut out = am.clone();
        for i in 0..out.rows {
            for j in 0..out.cols {
                out.data[i * out.cols + j] += bm.data[j];
            }
        }
        self.push(Op::AddRow(a, bias), out)
    }

    pub fn mul_row(&mut self, a: NodeId, gain: NodeId) -> NodeId {
        let (am, gm) = (&self.nodes[a].value, &self.nodes[gain].value);
        assert_eq!(gm.rows, 1);
        assert_eq!(am.cols, gm.cols);
        let mut out = am.clone();
        for i in 0..out.rows {
            for j in 0..out.cols {
                out.data[i * out.cols + j] *= gm.data[j];
            }
        }
        self.push(Op::MulRow(a, gain), out)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let am = &self.nodes[a].value;
        let out = Mat::from_vec(am.rows, am.cols, am.data.iter().map(|&x| x * c).collect());
        self.push(Op::Scale(a, c), out)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let am = &self.nodes[a].value;
        let out = Mat::from_vec(am.rows, am.cols, am.data.iter().map(|&x| x.max(0.0)).collect());
        self.push(Op::Relu(a), out)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let am = &self.nodes[a].value;
        let out = Mat::from_vec(
            am.rows,
            am.cols,
            am.data
                .iter()
                .map(|&x| if x > 0.0 { x } else { slope * x })
                .collect(),
        );
        self.push(Op::LeakyRelu(a, slope), out)
    }

    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> NodeId {
        let am = &self.nodes[a].value;
        let mut out = Mat::zeros(am.rows, am.cols);
        for i in 0..am.rows {
            let row = am.row(i);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / row.len() as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..am.cols {
                out.data[i * out.cols + j] = (row[j] - mean) * inv;
            }
        }
        self.push(Op::LayerNorm(a, eps), out)
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> NodeId {
        let am = &self.nodes[a].value;
        let mut out = Mat::zeros(indices.len(), am.cols);
        for (i, &src) in indices.iter().enumerate() {
            out.data[i * out.cols..(i + 1) * out.cols].copy_from_slice(am.row(src));
        }
        self.push(Op::GatherRows(a, indices), out)
    }

    /// Sums rows into `n_segments` buckets given by `segments[row]`.
    pub fn segment_sum(&mut self, a: NodeId, segments: Vec<usize>, n_segments: usize) -> NodeId {
        let am = &self.nodes[a].value;
        assert_eq!(segments.len(), am.rows);
        let mut out = Mat::zeros(n_segments, am.cols);
        for (i, &s) in segments.iter().enumerate() {
            for j in 0..am.cols {
                out.data[s * out.cols + j] += am.get(i, j);
            }
        }
        self.push(Op::SegmentSum(a, segments), out)
    }

    /// Softmax over the entries of a column vector within each segment.
    /// Segment ids must be grouped contiguously.
    pub fn segment_softmax(&mut self, a: NodeId, segments: Vec<usize>) -> NodeId {
        let am = &self.nodes[a].value;
        assert_eq!(am.cols, 1);
        assert_eq!(segments.len(), am.rows);
        let mut out = Mat::zeros(am.rows, 1);
        let mut start = 0;
        while start < segments.len() {
            let seg = segments[start];
            let mut end = start;
            while end < segments.len() && segments[end] == seg {
                end += 1;
            }
            let max = am.data[start..end].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for i in start..end {
                let e = (am.data[i] - max).exp();
                out.data[i] = e;
                denom += e;
            }
            for i in start..end {
                out.data[i] /= denom;
            }
            start = end;
        }
        self.push(Op::SegmentSoftmax(a, segments), out)
    }

    pub fn mul_col(&mut self, a: NodeId, scalars: NodeId) -> NodeId {
        let (am, sm) = (&self.nodes[a].value, &self.nodes[scalars].value);
        assert_eq!(sm.cols, 1);
        assert_eq!(am.rows, sm.rows);
        let mut out = am.clone();
        for i in 0..out.rows {
            let s = sm.data[i];
            for j in 0..out.cols {
                out.data[i * out.cols + j] *= s;
            }
        }
        self.push(Op::MulCol(a, scalars), out)
    }

    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip(a, b, f64::min);
        self.push(Op::Minimum(a, b), out)
    }

    pub fn maximum(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip(a, b, f64::max);
        self.push(Op::Maximum(a, b), out)
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let rows = self.nodes[parts[0]].value.rows;
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.cols).sum();
        let mut out = Mat::zeros(rows, total);
        let mut offset = 0;
        for &p in &parts {
            let pm = &self.nodes[p].value;
            assert_eq!(pm.rows, rows);
            for i in 0..rows {
                out.data[i * total + offset..i * total + offset + pm.cols]
                    .copy_from_slice(pm.row(i));
            }
            offset += pm.cols;
        }
        self.push(Op::ConcatCols(parts), out)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let am = &self.nodes[a].value;
        let mut out = Mat::zeros(am.cols, am.rows);
        for i in 0..am.rows {
            for j in 0..am.cols {
                out.set(j, i, am.get(i, j));
            }
        }
        self.push(Op::Transpose(a), out)
    }

    pub fn max_over_rows(&mut self, a: NodeId) -> NodeId {
        let am = &self.nodes[a].value;
        let mut out = Mat::zeros(1, am.cols);
        for j in 0..am.cols {
            let mut best = f64::NEG_INFINITY;
            for i in 0..am.rows {
                best = best.max(am.get(i, j));
            }
            out.data[j] = best;
        }
        self.push(Op::MaxOverRows(a), out)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let am = &self.nodes[a].value;
        let out = Mat::from_vec(1, 1, vec![am.data.iter().sum()]);
        self.push(Op::SumAll(a), out)
    }

    pub fn ln_clamp(&mut self, a: NodeId, eps: f64) -> NodeId {
        let am = &self.nodes[a].value;
        let out = Mat::from_vec(
            am.rows,
            am.cols,
            am.data.iter().map(|&x| x.max(eps).ln()).collect(),
        );
        self.push(Op::LnClamp(a, eps), out)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let am = &self.nodes[a].value;
        let mut out = Mat::zeros(am.rows, am.cols);
        for i in 0..am.rows {
            let row = am.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..am.cols {
                let e = (row[j] - max).exp();
                out.data[i * out.cols + j] = e;
                denom += e;
            }
            for j in 0..am.cols {
                out.data[i * out.cols + j] /= denom;
            }
        }
        self.push(Op::SoftmaxRows(a), out)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let am = &self.nodes[a].value;
        assert_eq!(am.rows * am.cols, rows * cols);
        let out = Mat::from_vec(rows, cols, am.data.clone());
        self.push(Op::Reshape(a), out)
    }

    /// Seeds the gradient of the scalar node `loss` with 1 and sweeps the
    /// tape in reverse, accumulating parent gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TapeError> {
        let lm = &self.nodes[loss].value;
        if lm.rows != 1 || lm.cols != 1 {
            return Err(TapeError::NotScalar {
                rows: lm.rows,
                cols: lm.cols,
            });
        }
        for n in &mut self.nodes {
            n.grad.data.fill(0.0);
        }
        self.nodes[loss].grad.data[0] = 1.0;
        for id in (0..=loss).rev() {
            let op = self.nodes[id].op.clone();
            let grad = self.nodes[id].grad.clone();
            if grad.data.iter().all(|&g| g == 0.0) {
                continue;
            }
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = self.nodes[a].value.clone();
                    let bv = self.nodes[b].value.clone();
                    // dA += G * B^T
                    {
                        let ga = &mut self.nodes[a].grad;
                        for i in 0..av.rows {
                            for k in 0..av.cols {
                                let mut acc = 0.0;
                                for j in 0..bv.cols {
                                    acc += grad.get(i, j) * bv.get(k, j);
                                }
                                ga.data[i * ga.cols + k] += acc;
                            }
                        }
                    }
                    // dB += A^T * G
                    {
                        let gb = &mut self.nodes[b].grad;
                        for k in 0..bv.rows {
                            for j in 0..bv.cols {
                                let mut acc = 0.0;
                                for i in 0..av.rows {
                                    acc += av.get(i, k) * grad.get(i, j);
                                }
                                gb.data[k * gb.cols + j] += acc;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(a, &grad.data, 1.0);
                    self.accumulate(b, &grad.data, 1.0);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, &grad.data, 1.0);
                    self.accumulate(b, &grad.data, -1.0);
                }
                Op::AddRow(a, bias) => {
                    self.accumulate(a, &grad.data, 1.0);
                    let gb = &mut self.nodes[bias].grad;
                    for i in 0..grad.rows {
                        for j in 0..grad.cols {
                            gb.data[j] += grad.get(i, j);
                        }
                    }
                }
                Op::MulRow(a, gain) => {
                    let av = self.nodes[a].value.clone();
                    let gv = self.nodes[gain].value.clone();
                    {
                        let ga = &mut self.nodes[a].grad;
                        for i in 0..grad.rows {
                            for j in 0..grad.cols {
                                ga.data[i * ga.cols + j] += grad.get(i, j) * gv.data[j];
                            }
                        }
                    }
                    {
                        let gg = &mut self.nodes[gain].grad;
                        for i in 0..grad.rows {
                            for j in 0..grad.cols {
                                gg.data[j] += grad.get(i, j) * av.get(i, j);
                            }
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a].value.clone();
                    let bv = self.nodes[b].value.clone();
                    {
                        let ga = &mut self.nodes[a].grad;
                        for (g, (gr, b)) in
                            ga.data.iter_mut().zip(grad.data.iter().zip(&bv.data))
                        {
                            *g += gr * b;
                        }
                    }
                    {
                        let gb = &mut self.nodes[b].grad;
                        for (g, (gr, a)) in
                            gb.data.iter_mut().zip(grad.data.iter().zip(&av.data))
                        {
                            *g += gr * a;
                        }
                    }
                }
                Op::Scale(a, c) => self.accumulate(a, &grad.data, c),
                Op::Relu(a) => {
                    let av = self.nodes[a].value.clone();
                    let ga = &mut self.nodes[a].grad;
                    for (g, (gr, x)) in ga.data.iter_mut().zip(grad.data.iter().zip(&av.data)) {
                        if *x > 0.0 {
                            *g += gr;
                        }
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let av = self.nodes[a].value.clone();
                    let ga = &mut self.nodes[a].grad;
                    for (g, (gr, x)) in ga.data.iter_mut().zip(grad.data.iter().zip(&av.data)) {
                        *g += gr * if *x > 0.0 { 1.0 } else { slope };
                    }
                }
                Op::LayerNorm(a, eps) => {
                    let av = self.nodes[a].value.clone();
                    let yv = self.nodes[id].value.clone();
                    let ga = &mut self.nodes[a].grad;
                    for i in 0..av.rows {
                        let n = av.cols as f64;
                        let row = av.row(i);
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let g_row = grad.row(i);
                        let y_row = yv.row(i);
                        let g_mean = g_row.iter().sum::<f64>() / n;
                        let gy_mean = g_row
                            .iter()
                            .zip(y_row)
                            .map(|(&g, &y)| g * y)
                            .sum::<f64>()
                            / n;
                        for j in 0..av.cols {
                            ga.data[i * ga.cols + j] +=
                                inv * (g_row[j] - g_mean - y_row[j] * gy_mean);
                        }
                    }
                }
                Op::GatherRows(a, indices) => {
                    let ga = &mut self.nodes[a].grad;
                    for (i, &src) in indices.iter().enumerate() {
                        for j in 0..grad.cols {
                            ga.data[src * ga.cols + j] += grad.get(i, j);
                        }
                    }
                }
                Op::SegmentSum(a, segments) => {
                    let ga = &mut self.nodes[a].grad;
                    for (i, &s) in segments.iter().enumerate() {
                        for j in 0..grad.cols {
                            ga.data[i * ga.cols + j] += grad.get(s, j);
                        }
                    }
                }
                Op::SegmentSoftmax(a, segments) => {
                    let yv = self.nodes[id].value.clone();
                    let ga = &mut self.nodes[a].grad;
                    let mut start = 0;
                    while start < segments.len() {
                        let seg = segments[start];
                        let mut end = start;
                        while end < segments.len() && segments[end] == seg {
                            end += 1;
                        }
                        let dot: f64 = (start..end).map(|i| yv.data[i] * grad.data[i]).sum();
                        for i in start..end {
                            ga.data[i] += yv.data[i] * (grad.data[i] - dot);
                        }
                        start = end;
                    }
                }
                Op::MulCol(a, scalars) => {
                    let av = self.nodes[a].value.clone();
                    let sv = self.nodes[scalars].value.clone();
                    {
                        let ga = &mut self.nodes[a].grad;
                        for i in 0..grad.rows {
                            let s = sv.data[i];
                            for j in 0..grad.cols {
                                ga.data[i * ga.cols + j] += grad.get(i, j) * s;
                            }
                        }
                    }
                    {
                        let gs = &mut self.nodes[scalars].grad;
                        for i in 0..grad.rows {
                            let mut acc = 0.0;
                            for j in 0..grad.cols {
                                acc += grad.get(i, j) * av.get(i, j);
                            }
                            gs.data[i] += acc;
                        }
                    }
                }
                Op::Minimum(a, b) | Op::Maximum(a, b) => {
                    let take_min = matches!(self.nodes[id].op, Op::Minimum(..));
                    let av = self.nodes[a].value.clone();
                    let bv = self.nodes[b].value.clone();
                    for idx in 0..grad.data.len() {
                        let choose_a = if take_min {
                            av.data[idx] <= bv.data[idx]
                        } else {
                            av.data[idx] >= bv.data[idx]
                        };
                        let target = if choose_a { a } else { b };
                        self.nodes[target].grad.data[idx] += grad.data[idx];
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in &parts {
                        let pc = self.nodes[p].value.cols;
                        let gp = &mut self.nodes[p].grad;
                        for i in 0..grad.rows {
                            for j in 0..pc {
                                gp.data[i * pc + j] += grad.get(i, offset + j);
                            }
                        }
                        offset += pc;
                    }
                }
                Op::Transpose(a) => {
                    let ga = &mut self.nodes[a].grad;
                    for i in 0..grad.rows {
                        for j in 0..grad.cols {
                            ga.data[j * ga.cols + i] += grad.get(i, j);
                        }
                    }
                }
                Op::MaxOverRows(a) => {
                    let av = self.nodes[a].value.clone();
                    let ga = &mut self.nodes[a].grad;
                    for j in 0..av.cols {
                        let mut best_i = 0;
                        let mut best = f64::NEG_INFINITY;
                        for i in 0..av.rows {
                            if av.get(i, j) > best {
                                best = av.get(i, j);
                                best_i = i;
                            }
                        }
                        ga.data[best_i * ga.cols + j] += grad.data[j];
                    }
                }
                Op::SumAll(a) => {
                    let g = grad.data[0];
                    let ga = &mut self.nodes[a].grad;
                    for v in ga.data.iter_mut() {
                        *v += g;
                    }
                }
                Op::LnClamp(a, eps) => {
                    let av = self.nodes[a].value.clone();
                    let ga = &mut self.nodes[a].grad;
                    for (g, (gr, x)) in ga.data.iter_mut().zip(grad.data.iter().zip(&av.data)) {
                        if *x > eps {
                            *g += gr / x;
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let yv = self.nodes[id].value.clone();
                    let ga = &mut self.nodes[a].grad;
                    for i in 0..yv.rows {
                        let y_row = yv.row(i);
                        let g_row = grad.row(i);
                        let dot: f64 = y_row.iter().zip(g_row).map(|(&y, &g)| y * g).sum();
                        for j in 0..yv.cols {
                            ga.data[i * ga.cols + j] += y_row[j] * (g_row[j] - dot);
                        }
                    }
                }
                Op::Reshape(a) => {
                    let ga = &mut self.nodes[a].grad;
                    for (g, gr) in ga.data.iter_mut().zip(&grad.data) {
                        *g += gr;
                    }
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, target: NodeId, grad: &[f64], factor: f64) {
        let g = &mut self.nodes[target].grad;
        for (t, s) in g.data.iter_mut().zip(grad) {
            *t += s * factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite difference on a scalar-valued graph builder.
    fn fd_check(
        input: Mat,
        build: impl Fn(&mut Graph, NodeId) -> NodeId,
        tol: f64,
    ) {
        let mut g = Graph::new();
        let x = g.leaf(input.clone());
        let loss = build(&mut g, x);
        g.backward(loss).unwrap();
        let analytic = g.grad(x).clone();

        let h = 1e-5;
        for idx in 0..input.data.len() {
            let mut plus = input.clone();
            plus.data[idx] += h;
            let mut minus = input.clone();
            minus.data[idx] -= h;
            let eval = |m: Mat| {
                let mut g = Graph::new();
                let x = g.leaf(m);
                let loss = build(&mut g, x);
                g.value(loss).data[0]
            };
            let numeric = (eval(plus) - eval(minus)) / (2.0 * h);
            let a = analytic.data[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (a - numeric).abs() / denom < tol,
                "index {idx}: analytic {a} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn matmul_gradient() {
        let input = Mat::from_vec(2, 3, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4]);
        fd_check(
            input,
            |g, x| {
                let w = g.leaf(Mat::from_vec(3, 2, vec![0.5, -0.2, 1.1, 0.3, -0.7, 0.9]));
                let y = g.matmul(x, w);
                let sq = g.mul(y, y);
                g.sum_all(sq)
            },
            1e-6,
        );
    }

    #[test]
    fn layer_norm_gradient() {
        let input = Mat::from_vec(2, 4, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4, 0.9, -2.2]);
        fd_check(
            input,
            |g, x| {
                let y = g.layer_norm(x, 1e-5);
                let w = g.leaf(Mat::from_vec(1, 4, vec![0.2, -0.5, 1.4, 0.8]));
                let z = g.mul_row(y, w);
                let sq = g.mul(z, z);
                g.sum_all(sq)
            },
            1e-5,
        );
    }

    #[test]
    fn segment_softmax_sums_to_one_and_gradients() {
        let input = Mat::from_vec(5, 1, vec![0.3, -1.2, 0.7, 2.0, 0.1]);
        let segments = vec![0, 0, 0, 1, 1];
        {
            let mut g = Graph::new();
            let x = g.leaf(input.clone());
            let y = g.segment_softmax(x, segments.clone());
            let v = g.value(y);
            assert!((v.data[0] + v.data[1] + v.data[2] - 1.0).abs() < 1e-12);
            assert!((v.data[3] + v.data[4] - 1.0).abs() < 1e-12);
        }
        fd_check(
            input,
            move |g, x| {
                let y = g.segment_softmax(x, segments.clone());
                let w = g.leaf(Mat::from_vec(5, 1, vec![1.0, 2.0, -1.0, 0.5, 3.0]));
                let z = g.mul(y, w);
                let sq = g.mul(z, z);
                g.sum_all(sq)
            },
            1e-5,
        );
    }

    #[test]
    fn softmax_rows_gradient() {
        let input = Mat::from_vec(2, 3, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4]);
        fd_check(
            input,
            |g, x| {
                let y = g.softmax_rows(x);
                let lnp = g.ln_clamp(y, 1e-12);
                let mask = g.leaf(Mat::from_vec(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
                let m = g.mul(lnp, mask);
                let s = g.sum_all(m);
                g.scale(s, -0.5)
            },
            1e-5,
        );
    }

    #[test]
    fn pooling_and_concat_gradients() {
        let input = Mat::from_vec(3, 2, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4]);
        fd_check(
            input,
            |g, x| {
                let i0 = g.gather_rows(x, vec![0]);
                let i1 = g.gather_rows(x, vec![1]);
                let i2 = g.gather_rows(x, vec![2]);
                let mn0 = g.minimum(i0, i1);
                let mn = g.minimum(mn0, i2);
                let mx0 = g.maximum(i0, i1);
                let mx = g.maximum(mx0, i2);
                let sum0 = g.add(i0, i1);
                let sum = g.add(sum0, i2);
                let mean = g.scale(sum, 1.0 / 3.0);
                let cat = g.concat_cols(vec![mn, mean, mx]);
                let sq = g.mul(cat, cat);
                g.sum_all(sq)
            },
            1e-5,
        );
    }

    #[test]
    fn transpose_and_orthogonality_penalty_gradient() {
        let input = Mat::from_vec(3, 3, vec![0.9, -0.1, 0.2, 0.05, 1.1, -0.3, 0.2, 0.1, 0.8]);
        fd_check(
            input,
            |g, x| {
                let xt = g.transpose(x);
                let p = g.matmul(x, xt);
                let i = g.leaf(Mat::identity(3));
                let d = g.sub(i, p);
                let sq = g.mul(d, d);
                g.sum_all(sq)
            },
            1e-5,
        );
    }

    #[test]
    fn max_over_rows_gradient() {
        let input = Mat::from_vec(3, 2, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4]);
        fd_check(
            input,
            |g, x| {
                let m = g.max_over_rows(x);
                let sq = g.mul(m, m);
                g.sum_all(sq)
            },
            1e-5,
        );
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Mat::zeros(2, 2));
        assert!(matches!(g.backward(x), Err(TapeError::NotScalar { .. })));
    }
}
