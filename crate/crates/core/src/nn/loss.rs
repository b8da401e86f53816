//! Segmentation losses: categorical cross-entropy over face
//! probabilities, the T-Net orthogonality penalty, and their weighted
//! total.

use super::tape::{Graph, Mat, NodeId};

pub const LOG_EPS: f64 = 1e-12;

/// -(1/N) sum_i sum_j y_ij ln(p_ij) with one-hot y and an epsilon clamp
/// inside the log.
pub fn cls_loss(probs: &Mat, labels: &[usize]) -> f64 {
    assert_eq!(probs.rows, labels.len());
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        total -= probs.get(i, label).max(LOG_EPS).ln();
    }
    total / labels.len() as f64
}

/// sum_i || I - A_i A_i^T ||_F^2 over the recorded T-Net transforms.
pub fn treg_loss(transforms: &[Mat]) -> f64 {
    let mut total = 0.0;
    for a in transforms {
        assert_eq!(a.rows, a.cols, "T-Net transform must be square");
        let d = a.rows;
        for i in 0..d {
            for j in 0..d {
                let mut dot = 0.0;
                for k in 0..d {
                    dot += a.get(i, k) * a.get(j, k);
                }
                let target = if i == j { 1.0 } else { 0.0 };
                total += (target - dot).powi(2);
            }
        }
    }
    total
}

/// L = L_CLS + gamma * L_T-reg.
pub fn total_loss(probs: &Mat, labels: &[usize], transforms: &[Mat], gamma: f64) -> f64 {
    cls_loss(probs, labels) + gamma * treg_loss(transforms)
}

/// One-hot mask matrix for a label vector.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Mat {
    let mut m = Mat::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        assert!(l < num_classes);
        m.set(i, l, 1.0);
    }
    m
}

/// Records the cross-entropy loss onto the tape.
pub fn cls_loss_node(g: &mut Graph, probs: NodeId, labels: &[usize], num_classes: usize) -> NodeId {
    let n = labels.len();
    let mask = g.leaf(one_hot(labels, num_classes));
    let lnp = g.ln_clamp(probs, LOG_EPS);
    let picked = g.mul(lnp, mask);
    let s = g.sum_all(picked);
    g.scale(s, -1.0 / n as f64)
}

/// Records the orthogonality penalty onto the tape.
pub fn treg_loss_node(g: &mut Graph, transforms: &[NodeId]) -> NodeId {
    let mut acc: Option<NodeId> = None;
    for &a in transforms {
        let d = g.value(a).rows;
        let at = g.transpose(a);
        let p = g.matmul(a, at);
        let eye = g.leaf(Mat::identity(d));
        let diff = g.sub(eye, p);
        let sq = g.mul(diff, diff);
        let s = g.sum_all(sq);
        acc = Some(match acc {
            Some(prev) => g.add(prev, s),
            None => s,
        });
    }
    acc.unwrap_or_else(|| g.leaf(Mat::zeros(1, 1)))
}

/// Records L = L_CLS + gamma * L_T-reg onto the tape.
pub fn total_loss_node(
    g: &mut Graph,
    probs: NodeId,
    labels: &[usize],
    num_classes: usize,
    transforms: &[NodeId],
    gamma: f64,
) -> NodeId {
    let cls = cls_loss_node(g, probs, labels, num_classes);
    let treg = treg_loss_node(g, transforms);
    let weighted = g.scale(treg, gamma);
    g.add(cls, weighted)
}
