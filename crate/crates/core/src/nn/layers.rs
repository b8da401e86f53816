//! Network building blocks: linear maps, learnable layer norm, residual
//! point blocks, T-Nets, and graph attention layers.

use rand::Rng;

use super::tape::{Graph, Mat, NodeId};
use crate::geometry::MeshGraph;

/// Records the leaf node id of every parameter bound into a graph, in
/// the same order the model visits its parameters. Gradient readback
/// relies on that order matching.
#[derive(Debug, Default)]
pub struct ParamTape {
    pub ids: Vec<NodeId>,
}

impl ParamTape {
    pub fn bind(&mut self, g: &mut Graph, m: &Mat) -> NodeId {
        let id = g.leaf(m.clone());
        self.ids.push(id);
        id
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Mat::from_vec(rows, cols, data)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Mat,
    pub b: Mat,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: glorot(input, output, rng),
            b: Mat::zeros(1, output),
        }
    }

    /// All-zero weights; used for T-Net heads so the predicted transform
    /// starts as the identity.
    pub fn zeroed(input: usize, output: usize) -> Self {
        Self {
            w: Mat::zeros(input, output),
            b: Mat::zeros(1, output),
        }
    }

    pub fn forward(&self, g: &mut Graph, tape: &mut ParamTape, x: NodeId) -> NodeId {
        let w = tape.bind(g, &self.w);
        let b = tape.bind(g, &self.b);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Mat)) {
        f(&self.w);
        f(&self.b);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Mat)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

/// Per-feature layer normalization with learnable gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Mat,
    pub bias: Mat,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(width: usize) -> Self {
        Self {
            gain: Mat::from_vec(1, width, vec![1.0; width]),
            bias: Mat::zeros(1, width),
        }
    }

    pub fn forward(&self, g: &mut Graph, tape: &mut ParamTape, x: NodeId) -> NodeId {
        let gain = tape.bind(g, &self.gain);
        let bias = tape.bind(g, &self.bias);
        let n = g.layer_norm(x, Self::EPS);
        let scaled = g.mul_row(n, gain);
        g.add_row(scaled, bias)
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Mat)) {
        f(&self.gain);
        f(&self.bias);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Mat)) {
        f(&mut self.gain);
        f(&mut self.bias);
    }
}

/// Residual per-point block: linear -> norm -> relu -> linear -> norm,
/// plus a shortcut (projected when widths differ), then relu.
#[derive(Debug, Clone)]
pub struct ResPBlock {
    pub lin1: Linear,
    pub norm1: LayerNorm,
    pub lin2: Linear,
    pub norm2: LayerNorm,
    pub shortcut: Option<Linear>,
}

impl ResPBlock {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            lin1: Linear::new(input, output, rng),
            norm1: LayerNorm::new(output),
            lin2: Linear::new(output, output, rng),
            norm2: LayerNorm::new(output),
            shortcut: (input != output).then(|| Linear::new(input, output, rng)),
        }
    }

    pub fn forward(&self, g: &mut Graph, tape: &mut ParamTape, x: NodeId) -> NodeId {
        let h = self.lin1.forward(g, tape, x);
        let h = self.norm1.forward(g, tape, h);
        let h = g.relu(h);
        let h = self.lin2.forward(g, tape, h);
        let h = self.norm2.forward(g, tape, h);
        let s = match &self.shortcut {
            Some(p) => p.forward(g, tape, x),
            None => x,
        };
        let sum = g.add(h, s);
        g.relu(sum)
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Mat)) {
        self.lin1.visit(f);
        self.norm1.visit(f);
        self.lin2.visit(f);
        self.norm2.visit(f);
        if let Some(p) = &self.shortcut {
            p.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Mat)) {
        self.lin1.visit_mut(f);
        self.norm1.visit_mut(f);
        self.lin2.visit_mut(f);
        self.norm2.visit_mut(f);
        if let Some(p) = &mut self.shortcut {
            p.visit_mut(f);
        }
    }
}

/// Predicts a d-by-d feature transform from the point set: a small ResP
/// stack, max-pool over points, and a zero-initialized head offset from
/// the identity. The transform is applied as x <- x * A and A is kept
/// for the orthogonality regularizer.
#[derive(Debug, Clone)]
pub struct TNet {
    pub dim: usize,
    pub blocks: Vec<ResPBlock>,
    pub head: Linear,
}

impl TNet {
    pub fn new(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            dim,
            blocks: vec![
                ResPBlock::new(dim, hidden, rng),
                ResPBlock::new(hidden, hidden, rng),
            ],
            head: Linear::zeroed(hidden, dim * dim),
        }
    }

    /// Returns (transformed features, transform node).
    pub fn forward(&self, g: &mut Graph, tape: &mut ParamTape, x: NodeId) -> (NodeId, NodeId) {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, tape, h);
        }
        let pooled = g.max_over_rows(h);
        let flat = self.head.forward(g, tape, pooled);
        let offset = g.reshape(flat, self.dim, self.dim);
        let eye = g.leaf(Mat::identity(self.dim));
        let a = g.add(offset, eye);
        let out = g.matmul(x, a);
        (out, a)
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Mat)) {
        for b in &self.blocks {
            b.visit(f);
        }
        self.head.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Mat)) {
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}

/// Directed edge list with self-loops, grouped by destination node, as
/// consumed by the attention layers.
#[derive(Debug, Clone)]
pub struct DirectedEdges {
    pub node_count: usize,
    pub srcs: Vec<usize>,
    pub dsts: Vec<usize>,
}

impl DirectedEdges {
    /// Both directions of every undirected mesh edge, plus one self-loop
    /// per node, sorted by destination then source.
    pub fn from_mesh_graph(graph: &MeshGraph) -> Self {
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(graph.edges.len() * 2 + graph.node_count);
        for &(a, b) in &graph.edges {
            pairs.push((a, b));
            pairs.push((b, a));
        }
        for n in 0..graph.node_count {
            pairs.push((n, n));
        }
        pairs.sort_unstable_by_key(|&(src, dst)| (dst, src));
        let (srcs, dsts) = pairs.into_iter().unzip();
        Self {
            node_count: graph.node_count,
            srcs,
            dsts,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatHead {
    pub w: Mat,
    pub attn_src: Mat,
    pub attn_dst: Mat,
}

/// Multi-head graph attention layer. Attention weights are normalized
/// over each node's in-neighborhood (self-loop included); heads are
/// concatenated.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub dropout: f64,
}

impl GatLayer {
    pub const LEAKY_SLOPE: f64 = 0.2;

    pub fn new(input: usize, heads: usize, head_dim: usize, dropout: f64, rng: &mut impl Rng) -> Self {
        let heads = (0..heads)
            .map(|_| GatHead {
                w: glorot(input, head_dim, rng),
                attn_src: glorot(head_dim, 1, rng),
                attn_dst: glorot(head_dim, 1, rng),
            })
            .collect();
        Self { heads, dropout }
    }

    pub fn output_width(&self) -> usize {
        self.heads.len() * self.heads[0].w.cols
    }

    /// `dropout_rng`: when `Some`, attention coefficients are dropped at
    /// the configured rate (training mode).
    pub fn forward(
        &self,
        g: &mut Graph,
        tape: &mut ParamTape,
        x: NodeId,
        edges: &DirectedEdges,
        dropout_rng: Option<&mut dyn rand::RngCore>,
    ) -> NodeId {
        let mask = dropout_rng.and_then(|rng| {
            (self.dropout > 0.0).then(|| {
                let keep = 1.0 - self.dropout;
                let data = (0..self.srcs_len(edges))
                    .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
                    .collect();
                Mat::from_vec(self.srcs_len(edges), 1, data)
            })
        });
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let w = tape.bind(g, &head.w);
            let a_src = tape.bind(g, &head.attn_src);
            let a_dst = tape.bind(g, &head.attn_dst);
            let hw = g.matmul(x, w);
            let s_src = g.matmul(hw, a_src);
            let s_dst = g.matmul(hw, a_dst);
            let e_src = g.gather_rows(s_src, edges.srcs.clone());
            let e_dst = g.gather_rows(s_dst, edges.dsts.clone());
            let e = g.add(e_src, e_dst);
            let e = g.leaky_relu(e, Self::LEAKY_SLOPE);
            let mut alpha = g.segment_softmax(e, edges.dsts.clone());
            if let Some(mask) = &mask {
                let m = g.leaf(mask.clone());
                alpha = g.mul(alpha, m);
            }
            let msgs = g.gather_rows(hw, edges.srcs.clone());
            let weighted = g.mul_col(msgs, alpha);
            outs.push(g.segment_sum(weighted, edges.dsts.clone(), edges.node_count));
        }
        g.concat_cols(outs)
    }

    fn srcs_len(&self, edges: &DirectedEdges) -> usize {
        edges.srcs.len()
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Mat)) {
        for h in &self.heads {
            f(&h.w);
            f(&h.attn_src);
            f(&h.attn_dst);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Mat)) {
        for h in &mut self.heads {
            f(&mut h.w);
            f(&mut h.attn_src);
            f(&mut h.attn_dst);
        }
    }
}

/// Order-invariant face aggregation: componentwise [min; mean; max] of
/// exactly three vertex feature rows, concatenated to width 3w.
pub fn aggregate_face(rows: &Mat) -> Vec<f64> {
    assert_eq!(rows.rows, 3, "face aggregation takes exactly 3 vertex rows");
    let w = rows.cols;
    let mut out = vec![0.0; 3 * w];
    for j in 0..w {
        let vals = [rows.get(0, j), rows.get(1, j), rows.get(2, j)];
        out[j] = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        out[w + j] = vals.iter().sum::<f64>() / 3.0;
        out[2 * w + j] = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    out
}

/// In-graph face aggregation over all faces at once: gathers the three
/// vertex rows of each face and concatenates min/mean/max pooling.
pub fn aggregate_faces(g: &mut Graph, x: NodeId, faces: &[[usize; 3]]) -> NodeId {
    let v0: Vec<usize> = faces.iter().map(|f| f[0]).collect();
    let v1: Vec<usize> = faces.iter().map(|f| f[1]).collect();
    let v2: Vec<usize> = faces.iter().map(|f| f[2]).collect();
    let r0 = g.gather_rows(x, v0);
    let r1 = g.gather_rows(x, v1);
    let r2 = g.gather_rows(x, v2);
    let mn = g.minimum(r0, r1);
    let mn = g.minimum(mn, r2);
    let sum = g.add(r0, r1);
    let sum = g.add(sum, r2);
    let mean = g.scale(sum, 1.0 / 3.0);
    let mx = g.maximum(r0, r1);
    let mx = g.maximum(mx, r2);
    g.concat_cols(vec![mn, mean, mx])
}
