//! Free-form deformation through a trivariate Bernstein control lattice.

use super::AugmentError;
use crate::geometry::{LabeledMesh, Point3};

/// Control-point lattice spanning a mesh bounding box. Displacements are
/// interpolated over the box with the Bernstein (Bezier) basis.
#[derive(Debug, Clone)]
pub struct FfdLattice {
    /// Control points per axis; >= 2 each.
    pub dims: [usize; 3],
    pub origin: Point3,
    pub extent: Point3,
    /// One displacement per control point, x-major then y then z.
    pub displacements: Vec<Point3>,
}

impl FfdLattice {
    pub const DEFAULT_DIMS: [usize; 3] = [4, 4, 4];

    /// Builds a zero-displacement lattice over the mesh bounding box.
    pub fn over_mesh(mesh: &LabeledMesh) -> Result<Self, AugmentError> {
        let (lo, hi) = mesh.bounding_box();
        let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        if extent.iter().any(|&e| !e.is_finite() || e <= 0.0) {
            return Err(AugmentError::DegenerateBoundingBox);
        }
        let dims = Self::DEFAULT_DIMS;
        Ok(Self {
            dims,
            origin: lo,
            extent,
            displacements: vec![[0.0; 3]; dims[0] * dims[1] * dims[2]],
        })
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    /// Displacement at local coordinates (s, t, u) in [0, 1]^3.
    fn interpolate(&self, s: f64, t: f64, u: f64) -> Point3 {
        let bs = bernstein(self.dims[0] - 1, s);
        let bt = bernstein(self.dims[1] - 1, t);
        let bu = bernstein(self.dims[2] - 1, u);
        let mut out = [0.0; 3];
        for (k, wu) in bu.iter().enumerate() {
            for (j, wt) in bt.iter().enumerate() {
                let wtu = wt * wu;
                for (i, ws) in bs.iter().enumerate() {
                    let w = ws * wtu;
                    let d = self.displacements[self.index(i, j, k)];
                    out[0] += w * d[0];
                    out[1] += w * d[1];
                    out[2] += w * d[2];
                }
            }
        }
        out
    }

    /// Applies the lattice displacement field to every vertex.
    pub fn deform(&self, mesh: &LabeledMesh) -> LabeledMesh {
        let vertices = mesh
            .vertices
            .iter()
            .map(|v| {
                let s = (v[0] - self.origin[0]) / self.extent[0];
                let t = (v[1] - self.origin[1]) / self.extent[1];
                let u = (v[2] - self.origin[2]) / self.extent[2];
                let d = self.interpolate(s, t, u);
                [v[0] + d[0], v[1] + d[1], v[2] + d[2]]
            })
            .collect();
        LabeledMesh {
            vertices,
            faces: mesh.faces.clone(),
            face_labels: mesh.face_labels.clone(),
        }
    }
}

/// Bernstein basis values B_{i,n}(t) for i = 0..=n.
fn bernstein(degree: usize, t: f64) -> Vec<f64> {
    let n = degree;
    let mut out = vec![0.0; n + 1];
    for (i, o) in out.iter_mut().enumerate() {
        *o = binomial(n, i) as f64 * t.powi(i as i32) * (1.0 - t).powi((n - i) as i32);
    }
    out
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube_mesh() -> LabeledMesh {
        // corners only, plus one face to satisfy mesh shape
        LabeledMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [1.0, 1.0, 1.0],
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn bernstein_partition_of_unity() {
        for &t in &[0.0, 0.17, 0.5, 0.93, 1.0] {
            let sum: f64 = bernstein(3, t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_displacement_translates_everything() {
        let mesh = unit_cube_mesh();
        let mut lattice = FfdLattice::over_mesh(&mesh).unwrap();
        for d in lattice.displacements.iter_mut() {
            *d = [0.25, -0.5, 1.0];
        }
        let out = lattice.deform(&mesh);
        for (a, b) in mesh.vertices.iter().zip(&out.vertices) {
            assert!((b[0] - a[0] - 0.25).abs() < 1e-12);
            assert!((b[1] - a[1] + 0.5).abs() < 1e-12);
            assert!((b[2] - a[2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn corner_control_point_moves_only_its_corner() {
        let mesh = unit_cube_mesh();
        let mut lattice = FfdLattice::over_mesh(&mesh).unwrap();
        let idx = lattice.index(0, 0, 0);
        lattice.displacements[idx] = [0.3, 0.0, 0.0];
        let out = lattice.deform(&mesh);
        // vertex at the (0,0,0) corner takes the full displacement
        assert!((out.vertices[0][0] - 0.3).abs() < 1e-12);
        // opposite corner (1,1,1) is unmoved: its Bernstein weight for
        // control point (0,0,0) is zero
        assert_eq!(out.vertices[4], mesh.vertices[4]);
    }
}
