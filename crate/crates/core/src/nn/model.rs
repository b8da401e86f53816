//! The hybrid point/graph segmentation model: priming ResP blocks and
//! T-Nets, a stack of attention layers with a T-Net residual after each,
//! post-processing ResP blocks, face aggregation, and a classifier head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{aggregate_faces, DirectedEdges, GatLayer, LayerNorm, Linear, ParamTape, ResPBlock, TNet};
use super::tape::{Graph, Mat, NodeId};
use super::NnError;
use crate::geometry::{build_graph, normalize, LabeledMesh, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub priming_width: usize,
    pub gat_layers: usize,
    pub gat_heads: usize,
    pub gat_head_dim: usize,
    pub post_widths: [usize; 2],
    pub classifier_hidden: usize,
    pub tnet_hidden: usize,
    pub dropout: f64,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            priming_width: 64,
            gat_layers: 4,
            gat_heads: 8,
            gat_head_dim: 64,
            post_widths: [256, 128],
            classifier_hidden: 64,
            tnet_hidden: 32,
            dropout: 0.1,
            num_classes: NUM_CLASSES,
        }
    }
}

impl ModelConfig {
    /// Reduced widths for CPU-scale training runs and tests. Same
    /// architecture, smaller feature spaces.
    pub fn small() -> Self {
        Self {
            priming_width: 24,
            gat_layers: 4,
            gat_heads: 4,
            gat_head_dim: 8,
            post_widths: [32, 24],
            classifier_hidden: 24,
            tnet_hidden: 12,
            dropout: 0.1,
            num_classes: NUM_CLASSES,
        }
    }

    pub fn gat_width(&self) -> usize {
        self.gat_heads * self.gat_head_dim
    }
}

/// Outcome of one forward pass; node ids refer into the graph the pass
/// was recorded on.
pub struct ForwardPass {
    pub logits: NodeId,
    pub probs: NodeId,
    pub transforms: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct SegmentationModel {
    pub config: ModelConfig,
    tnet_input: TNet,
    resp_prime1: ResPBlock,
    tnet_feature: TNet,
    resp_prime2: ResPBlock,
    graph_proj: Linear,
    graph_norm: LayerNorm,
    gat_layers: Vec<GatLayer>,
    gat_tnets: Vec<TNet>,
    resp_post1: ResPBlock,
    tnet_post1: TNet,
    resp_post2: ResPBlock,
    tnet_post2: TNet,
    cls_hidden: Linear,
    cls_out: Linear,
}

impl SegmentationModel {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Self {
        let pw = config.priming_width;
        let gw = config.gat_width();
        let [p0, p1] = config.post_widths;
        let th = config.tnet_hidden;
        let gat_layers = (0..config.gat_layers)
            .map(|_| GatLayer::new(gw, config.gat_heads, config.gat_head_dim, config.dropout, rng))
            .collect();
        let gat_tnets = (0..config.gat_layers).map(|_| TNet::new(gw, th, rng)).collect();
        Self {
            tnet_input: TNet::new(3, th, rng),
            resp_prime1: ResPBlock::new(3, pw, rng),
            tnet_feature: TNet::new(pw, th, rng),
            resp_prime2: ResPBlock::new(pw, pw, rng),
            graph_proj: Linear::new(pw, gw, rng),
            graph_norm: LayerNorm::new(gw),
            gat_layers,
            gat_tnets,
            resp_post1: ResPBlock::new(gw, p0, rng),
            tnet_post1: TNet::new(p0, th, rng),
            resp_post2: ResPBlock::new(p0, p1, rng),
            tnet_post2: TNet::new(p1, th, rng),
            cls_hidden: Linear::new(3 * p1, config.classifier_hidden, rng),
            cls_out: Linear::new(config.classifier_hidden, config.num_classes, rng),
            config,
        }
    }

    /// Records one forward pass onto `graph`. `positions` is one row per
    /// vertex; `faces` indexes those rows. Dropout is active only when a
    /// dropout RNG is supplied.
    pub fn forward(
        &self,
        graph: &mut Graph,
        tape: &mut ParamTape,
        positions: &Mat,
        edges: &DirectedEdges,
        faces: &[[usize; 3]],
        mut dropout_rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<ForwardPass, NnError> {
        let check = |g: &Graph, id: NodeId, stage: &'static str| -> Result<(), NnError> {
            g.check_finite(id)
                .map_err(|_| NnError::NonFinite { stage })
        };
        let mut transforms = Vec::new();
        let x = graph.leaf(positions.clone());

        // priming: input T-Net, ResP, feature T-Net, ResP
        let (x, a) = self.tnet_input.forward(graph, tape, x);
        transforms.push(a);
        let x = self.resp_prime1.forward(graph, tape, x);
        let (x, a) = self.tnet_feature.forward(graph, tape, x);
        transforms.push(a);
        let x = self.resp_prime2.forward(graph, tape, x);
        check(graph, x, "priming")?;

        // graph stage: project up, then attention with a T-Net residual
        // after every layer
        let x = self.graph_proj.forward(graph, tape, x);
        let x = self.graph_norm.forward(graph, tape, x);
        let mut x = graph.relu(x);
        for (i, (gat, tnet)) in self.gat_layers.iter().zip(&self.gat_tnets).enumerate() {
            let rng: Option<&mut dyn rand::RngCore> =
                dropout_rng.as_mut().map(|r| &mut **r as _);
            let h = gat.forward(graph, tape, x, edges, rng);
            let h = graph.relu(h);
            let (h, a) = tnet.forward(graph, tape, h);
            transforms.push(a);
            x = h;
            if graph.check_finite(x).is_err() {
                return Err(NnError::NonFinite {
                    stage: match i {
                        0 => "gat-0",
                        1 => "gat-1",
                        2 => "gat-2",
                        _ => "gat-3",
                    },
                });
            }
        }

        // post-processing
        let x = self.resp_post1.forward(graph, tape, x);
        let (x, a) = self.tnet_post1.forward(graph, tape, x);
        transforms.push(a);
        let x = self.resp_post2.forward(graph, tape, x);
        let (x, a) = self.tnet_post2.forward(graph, tape, x);
        transforms.push(a);
        check(graph, x, "post")?;

        // per-face aggregation and classifier
        let f = aggregate_faces(graph, x, faces);
        let h = self.cls_hidden.forward(graph, tape, f);
        let h = graph.relu(h);
        let logits = self.cls_out.forward(graph, tape, h);
        let probs = graph.softmax_rows(logits);
        check(graph, probs, "classifier")?;
        Ok(ForwardPass {
            logits,
            probs,
            transforms,
        })
    }

    /// Inference on a raw mesh: normalizes, builds adjacency, runs one
    /// forward pass with dropout off. Returns per-face probabilities and
    /// the recorded T-Net transforms.
    pub fn predict(&self, mesh: &LabeledMesh) -> Result<(Mat, Vec<Mat>), NnError> {
        let (normed, _) = normalize(mesh).map_err(NnError::Geometry)?;
        let mesh_graph = build_graph(&normed);
        let edges = DirectedEdges::from_mesh_graph(&mesh_graph);
        let positions = positions_matrix(&normed);
        let mut graph = Graph::new();
        let mut tape = ParamTape::default();
        let pass = self.forward(&mut graph, &mut tape, &positions, &edges, &normed.faces, None)?;
        let probs = graph.value(pass.probs).clone();
        let transforms = pass
            .transforms
            .iter()
            .map(|&id| graph.value(id).clone())
            .collect();
        Ok((probs, transforms))
    }

    /// Visits every parameter in the fixed order used by [`ParamTape`].
    pub fn visit_params(&self, f: &mut impl FnMut(&Mat)) {
        // order must match forward() binding order
        self.tnet_input.visit(f);
        self.resp_prime1.visit(f);
        self.tnet_feature.visit(f);
        self.resp_prime2.visit(f);
        self.graph_proj.visit(f);
        self.graph_norm.visit(f);
        for (gat, tnet) in self.gat_layers.iter().zip(&self.gat_tnets) {
            gat.visit(f);
            tnet.visit(f);
        }
        self.resp_post1.visit(f);
        self.tnet_post1.visit(f);
        self.resp_post2.visit(f);
        self.tnet_post2.visit(f);
        self.cls_hidden.visit(f);
        self.cls_out.visit(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut Mat)) {
        self.tnet_input.visit_mut(f);
        self.resp_prime1.visit_mut(f);
        self.tnet_feature.visit_mut(f);
        self.resp_prime2.visit_mut(f);
        self.graph_proj.visit_mut(f);
        self.graph_norm.visit_mut(f);
        for (gat, tnet) in self.gat_layers.iter_mut().zip(&mut self.gat_tnets) {
            gat.visit_mut(f);
            tnet.visit_mut(f);
        }
        self.resp_post1.visit_mut(f);
        self.tnet_post1.visit_mut(f);
        self.resp_post2.visit_mut(f);
        self.tnet_post2.visit_mut(f);
        self.cls_hidden.visit_mut(f);
        self.cls_out.visit_mut(f);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |m| n += m.data.len());
        n
    }
}

/// One row per vertex, columns x, y, z.
pub fn positions_matrix(mesh: &LabeledMesh) -> Mat {
    let mut m = Mat::zeros(mesh.vertex_count(), 3);
    for (i, v) in mesh.vertices.iter().enumerate() {
        m.data[i * 3..i * 3 + 3].copy_from_slice(v);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tet_mesh() -> LabeledMesh {
        LabeledMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn untrained_output_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = SegmentationModel::new(ModelConfig::small(), &mut rng);
        let (probs, _) = model.predict(&tet_mesh()).unwrap();
        assert_eq!(probs.rows, 4);
        assert_eq!(probs.cols, 4);
        for i in 0..probs.rows {
            let s: f64 = probs.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gat_stage_output_width_matches_paper_config() {
        // ten-node graph through a single paper-width GAT layer
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let layer = GatLayer::new(16, 8, 64, 0.1, &mut rng);
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for i in 0..10 {
            vertices.push([i as f64, (i % 3) as f64, 0.5 * i as f64]);
        }
        for i in 0..8 {
            faces.push([i, i + 1, i + 2]);
        }
        let mesh = LabeledMesh::new(vertices, faces, None).unwrap();
        let edges = DirectedEdges::from_mesh_graph(&build_graph(&mesh));
        let mut g = Graph::new();
        let mut tape = ParamTape::default();
        let x = g.leaf(Mat::zeros(10, 16));
        let out = layer.forward(&mut g, &mut tape, x, &edges, None);
        assert_eq!((g.value(out).rows, g.value(out).cols), (10, 512));
    }

    #[test]
    fn face_vertex_permutation_leaves_logits_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = SegmentationModel::new(ModelConfig::small(), &mut rng);
        let mesh = tet_mesh();
        let mut permuted = mesh.clone();
        permuted.faces[1] = [
            mesh.faces[1][2],
            mesh.faces[1][0],
            mesh.faces[1][1],
        ];
        let (p0, _) = model.predict(&mesh).unwrap();
        let (p1, _) = model.predict(&permuted).unwrap();
        for (a, b) in p0.row(1).iter().zip(p1.row(1)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn param_tape_order_matches_visit_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let model = SegmentationModel::new(ModelConfig::small(), &mut rng);
        let mesh = tet_mesh();
        let (normed, _) = normalize(&mesh).unwrap();
        let mesh_graph = build_graph(&normed);
        let edges = DirectedEdges::from_mesh_graph(&mesh_graph);
        let positions = positions_matrix(&normed);
        let mut g = Graph::new();
        let mut tape = ParamTape::default();
        model
            .forward(&mut g, &mut tape, &positions, &edges, &normed.faces, None)
            .unwrap();
        let mut shapes = Vec::new();
        model.visit_params(&mut |m| shapes.push((m.rows, m.cols)));
        assert_eq!(shapes.len(), tape.ids.len());
        for (&id, &(r, c)) in tape.ids.iter().zip(&shapes) {
            assert_eq!((g.value(id).rows, g.value(id).cols), (r, c));
        }
    }
}
