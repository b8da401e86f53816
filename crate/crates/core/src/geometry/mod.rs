//! Mesh and CAD-surface data model: validation, adjacency, centroids,
//! normalization, and file IO.

mod io;

pub use io::{
    load_labels, load_mesh, load_surface_grids, save_labels, save_mesh, save_surface_grids,
};

use thiserror::Error;

pub type Point3 = [f64; 3];

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("face {face} references vertex {index} but mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("face {face} is degenerate: vertex indices {indices:?} are not distinct")]
    DegenerateFace { face: usize, indices: [usize; 3] },
    #[error("label count {labels} does not match face count {faces}")]
    LabelCountMismatch { labels: usize, faces: usize },
    #[error("unknown part label id {0}")]
    UnknownLabel(u8),
    #[error("mesh bounding box has zero extent")]
    ZeroExtentBoundingBox,
    #[error("surface grid {0} is empty")]
    EmptyGrid(String),
    #[error("surface grid {0} contains a non-finite point")]
    NonFinitePoint(String),
}

/// The closed set of aircraft part classes (M = 4).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PartLabel {
    Fuselage,
    Wing,
    Stabilizer,
    Engine,
}

pub const NUM_CLASSES: usize = 4;

impl PartLabel {
    pub const ALL: [PartLabel; 4] = [
        PartLabel::Fuselage,
        PartLabel::Wing,
        PartLabel::Stabilizer,
        PartLabel::Engine,
    ];

    pub fn id(self) -> u8 {
        match self {
            PartLabel::Fuselage => 0,
            PartLabel::Wing => 1,
            PartLabel::Stabilizer => 2,
            PartLabel::Engine => 3,
        }
    }

    pub fn from_id(id: u8) -> Result<Self, GeometryError> {
        match id {
            0 => Ok(PartLabel::Fuselage),
            1 => Ok(PartLabel::Wing),
            2 => Ok(PartLabel::Stabilizer),
            3 => Ok(PartLabel::Engine),
            other => Err(GeometryError::UnknownLabel(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PartLabel::Fuselage => "fuselage",
            PartLabel::Wing => "wing",
            PartLabel::Stabilizer => "stabilizer",
            PartLabel::Engine => "engine",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "fuselage" => Some(PartLabel::Fuselage),
            "wing" => Some(PartLabel::Wing),
            "stabilizer" => Some(PartLabel::Stabilizer),
            "engine" => Some(PartLabel::Engine),
            _ => None,
        }
    }
}

/// Triangle mesh with optional per-face part labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
    pub face_labels: Option<Vec<PartLabel>>,
}

impl LabeledMesh {
    /// Builds a mesh, checking every invariant: triangle indices in range,
    /// no degenerate faces, label count matching face count.
    pub fn new(
        vertices: Vec<Point3>,
        faces: Vec<[usize; 3]>,
        face_labels: Option<Vec<PartLabel>>,
    ) -> Result<Self, GeometryError> {
        for (fi, face) in faces.iter().enumerate() {
            for &vi in face {
                if vi >= vertices.len() {
                    return Err(GeometryError::IndexOutOfRange {
                        face: fi,
                        index: vi,
                        vertex_count: vertices.len(),
                    });
                }
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(GeometryError::DegenerateFace {
                    face: fi,
                    indices: *face,
                });
            }
        }
        if let Some(labels) = &face_labels {
            if labels.len() != faces.len() {
                return Err(GeometryError::LabelCountMismatch {
                    labels: labels.len(),
                    faces: faces.len(),
                });
            }
        }
        Ok(Self {
            vertices,
            faces,
            face_labels,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounding_box(&self) -> (Point3, Point3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        (lo, hi)
    }
}

/// Vertex-adjacency graph of a mesh: one node per vertex, one undirected
/// edge per unique mesh edge, no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeshGraph {
    pub node_count: usize,
    /// Unique undirected edges, each stored once as (lo, hi), sorted.
    pub edges: Vec<(usize, usize)>,
    pub faces: Vec<[usize; 3]>,
}

/// Discretized CAD surface: a rectangular grid of 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub surface_id: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, rows * cols points.
    pub points: Vec<Point3>,
    pub true_label: Option<PartLabel>,
}

impl SurfaceGrid {
    pub fn new(
        surface_id: String,
        rows: usize,
        cols: usize,
        points: Vec<Point3>,
        true_label: Option<PartLabel>,
    ) -> Result<Self, GeometryError> {
        if rows == 0 || cols == 0 || points.len() != rows * cols {
            return Err(GeometryError::EmptyGrid(surface_id));
        }
        if points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(GeometryError::NonFinitePoint(surface_id));
        }
        Ok(Self {
            surface_id,
            rows,
            cols,
            points,
            true_label,
        })
    }
}

/// Inverse transform recorded by [`normalize`]: original = normalized * scale + offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub scale: f64,
    pub offset: Point3,
}

impl NormalizationRecord {
    pub fn invert(&self, p: Point3) -> Point3 {
        [
            p[0] * self.scale + self.offset[0],
            p[1] * self.scale + self.offset[1],
            p[2] * self.scale + self.offset[2],
        ]
    }
}

/// One node per vertex, one undirected edge per unique mesh edge.
pub fn build_graph(mesh: &LabeledMesh) -> MeshGraph {
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(mesh.faces.len() * 3);
    for face in &mesh.faces {
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            let (i, j) = (face[a], face[b]);
            edges.push((i.min(j), i.max(j)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    MeshGraph {
        node_count: mesh.vertex_count(),
        edges,
        faces: mesh.faces.clone(),
    }
}

/// Arithmetic mean of the three vertex positions of each face.
pub fn face_centroids(mesh: &LabeledMesh) -> Vec<Point3> {
    mesh.faces
        .iter()
        .map(|f| {
            let [a, b, c] = [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
            [
                (a[0] + b[0] + c[0]) / 3.0,
                (a[1] + b[1] + c[1]) / 3.0,
                (a[2] + b[2] + c[2]) / 3.0,
            ]
        })
        .collect()
}

/// Centers the mesh at its bounding-box centroid and scales uniformly so
/// the longest bounding-box edge is 1. Returns the inverse transform.
pub fn normalize(mesh: &LabeledMesh) -> Result<(LabeledMesh, NormalizationRecord), GeometryError> {
    let (lo, hi) = mesh.bounding_box();
    let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let longest = extent.iter().cloned().fold(0.0f64, f64::max);
    if !longest.is_finite() || longest <= 0.0 {
        return Err(GeometryError::ZeroExtentBoundingBox);
    }
    let center = [
        (lo[0] + hi[0]) / 2.0,
        (lo[1] + hi[1]) / 2.0,
        (lo[2] + hi[2]) / 2.0,
    ];
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| {
            [
                (v[0] - center[0]) / longest,
                (v[1] - center[1]) / longest,
                (v[2] - center[2]) / longest,
            ]
        })
        .collect();
    let normalized = LabeledMesh {
        vertices,
        faces: mesh.faces.clone(),
        face_labels: mesh.face_labels.clone(),
    };
    Ok((
        normalized,
        NormalizationRecord {
            scale: longest,
            offset: center,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetrahedron() -> LabeledMesh {
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
    fn rejects_out_of_range_index() {
        let err = LabeledMesh::new(
            vec![[0.0; 3]; 4],
            vec![[0, 1, 9]],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, GeometryError::IndexOutOfRange { index: 9, .. }));
    }

    #[test]
    fn rejects_degenerate_face() {
        let err = LabeledMesh::new(vec![[0.0; 3]; 3], vec![[0, 0, 1]], None).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateFace { .. }));
    }

    #[test]
    fn rejects_label_count_mismatch() {
        let err = LabeledMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
            Some(vec![PartLabel::Wing, PartLabel::Wing]),
        )
        .unwrap_err();
        assert!(matches!(err, GeometryError::LabelCountMismatch { .. }));
    }

    #[test]
    fn single_triangle_graph() {
        let mesh = LabeledMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let g = build_graph(&mesh);
        assert_eq!(g.node_count, 3);
        assert_eq!(g.edges.len(), 3);
    }

    #[test]
    fn shared_edge_counted_once() {
        let mesh = LabeledMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [1.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [1, 3, 2]],
            None,
        )
        .unwrap();
        let g = build_graph(&mesh);
        assert_eq!(g.node_count, 4);
        assert_eq!(g.edges.len(), 5);
    }

    #[test]
    fn tetrahedron_every_edge_in_two_faces() {
        let mesh = tetrahedron();
        let g = build_graph(&mesh);
        assert_eq!(g.edges.len(), 6);
        for &(a, b) in &g.edges {
            let count = mesh
                .faces
                .iter()
                .filter(|f| f.contains(&a) && f.contains(&b))
                .count();
            assert_eq!(count, 2);
        }
    }

    #[test]
    fn centroid_simple() {
        let mesh = LabeledMesh::new(
            vec![[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0]],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        assert_eq!(face_centroids(&mesh)[0], [1.0, 1.0, 0.0]);
    }

    #[test]
    fn centroid_commutes_with_translation() {
        let mesh = tetrahedron();
        let c0 = face_centroids(&mesh);
        let mut shifted = mesh.clone();
        for v in &mut shifted.vertices {
            v[0] += 5.0;
            v[1] -= 2.0;
            v[2] += 0.25;
        }
        let c1 = face_centroids(&shifted);
        for (a, b) in c0.iter().zip(&c1) {
            assert!((a[0] + 5.0 - b[0]).abs() < 1e-9);
            assert!((a[1] - 2.0 - b[1]).abs() < 1e-9);
            assert!((a[2] + 0.25 - b[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_scale_invariant() {
        let mesh = tetrahedron();
        let mut scaled = mesh.clone();
        for v in &mut scaled.vertices {
            for c in v.iter_mut() {
                *c *= 10.0;
            }
        }
        let (n0, _) = normalize(&mesh).unwrap();
        let (n1, _) = normalize(&scaled).unwrap();
        for (a, b) in n0.vertices.iter().zip(&n1.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_round_trip() {
        let mesh = tetrahedron();
        let (n, rec) = normalize(&mesh).unwrap();
        for (orig, norm) in mesh.vertices.iter().zip(&n.vertices) {
            let back = rec.invert(*norm);
            for k in 0..3 {
                assert!((orig[k] - back[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalize_idempotent() {
        let mesh = tetrahedron();
        let (n1, _) = normalize(&mesh).unwrap();
        let (n2, _) = normalize(&n1).unwrap();
        for (a, b) in n1.vertices.iter().zip(&n2.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalize_rejects_zero_extent() {
        let mesh = LabeledMesh::new(
            vec![[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]],
            vec![],
            None,
        )
        .unwrap();
        assert!(matches!(
            normalize(&mesh),
            Err(GeometryError::ZeroExtentBoundingBox)
        ));
    }
}
