//! Stochastic mesh augmentations and the cosine intensity schedule used
//! during training.
//!
//! Five transforms are applied in a fixed order: rotation, vertex noise,
//! mirroring, free-form deformation, uniform scaling. Each is gated by a
//! per-epoch intensity that ramps from 0 at epoch 0 to its target at the
//! final planned epoch.

mod ffd;

pub use ffd::FfdLattice;

use rand::Rng;
use thiserror::Error;

use crate::geometry::LabeledMesh;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("schedule requires tau >= 1")]
    ZeroTau,
    #[error("free-form deformation requires a non-degenerate bounding box")]
    DegenerateBoundingBox,
}

/// Target intensities and schedule state for the augmentation pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationParams {
    /// Max rotation angle about each axis, radians.
    pub xi1_target: f64,
    /// Max vertex-noise amplitude, normalized units.
    pub xi2_target: f64,
    /// Mirror probability per plane, in [0, 1).
    pub xi3_target: f64,
    /// Max FFD control-point displacement, normalized units.
    pub xi4_target: f64,
    /// Max scale perturbation.
    pub xi5_target: f64,
    /// Current epoch.
    pub epoch: usize,
    /// Total planned epochs.
    pub tau: usize,
    /// Sample vertex noise from U(-xi2, xi2) instead of the one-sided
    /// U(0, xi2). Off by default; the one-sided draw biases vertices
    /// along +axes but matches the stated distribution.
    pub symmetric_noise: bool,
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self {
            xi1_target: std::f64::consts::PI / 6.0,
            xi2_target: 0.001,
            xi3_target: 0.2,
            xi4_target: 0.4,
            xi5_target: 0.15,
            epoch: 0,
            tau: 200,
            symmetric_noise: false,
        }
    }
}

impl AugmentationParams {
    /// All five intensities at the current epoch.
    pub fn current(&self) -> Result<[f64; 5], AugmentError> {
        let targets = [
            self.xi1_target,
            self.xi2_target,
            self.xi3_target,
            self.xi4_target,
            self.xi5_target,
        ];
        let mut out = [0.0; 5];
        for (o, t) in out.iter_mut().zip(targets) {
            *o = scheduled_value(t, self.epoch, self.tau)?;
        }
        Ok(out)
    }
}

/// Cosine ramp from 0 at epoch 0 to `target` at epoch `tau`:
/// target * (1 + cos(T*pi/tau - pi)) / 2.
pub fn scheduled_value(target: f64, epoch: usize, tau: usize) -> Result<f64, AugmentError> {
    if tau == 0 {
        return Err(AugmentError::ZeroTau);
    }
    let t = epoch as f64;
    let tau = tau as f64;
    Ok(target * (1.0 + (t * std::f64::consts::PI / tau - std::f64::consts::PI).cos()) / 2.0)
}

fn rotation_matrix(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let (sx, cx) = angles[0].sin_cos();
    let (sy, cy) = angles[1].sin_cos();
    let (sz, cz) = angles[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Rotates all vertices by angles drawn from U(0, xi1) about X, Y, Z,
/// composed in that fixed order.
pub fn apply_rotation(mesh: &LabeledMesh, xi1: f64, rng: &mut impl Rng) -> LabeledMesh {
    let angles = [
        sample_uniform(rng, 0.0, xi1),
        sample_uniform(rng, 0.0, xi1),
        sample_uniform(rng, 0.0, xi1),
    ];
    rotate(mesh, angles)
}

/// Deterministic rotation by explicit angles (X then Y then Z).
pub fn rotate(mesh: &LabeledMesh, angles: [f64; 3]) -> LabeledMesh {
    let r = rotation_matrix(angles);
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| {
            [
                r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
                r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
                r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
            ]
        })
        .collect();
    LabeledMesh {
        vertices,
        faces: mesh.faces.clone(),
        face_labels: mesh.face_labels.clone(),
    }
}

fn sample_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Adds per-vertex noise with each component drawn from U(0, xi2)
/// (or U(-xi2, xi2) in symmetric mode).
pub fn apply_noise(
    mesh: &LabeledMesh,
    xi2: f64,
    symmetric: bool,
    rng: &mut impl Rng,
) -> LabeledMesh {
    let lo = if symmetric { -xi2 } else { 0.0 };
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| {
            [
                v[0] + sample_uniform(rng, lo, xi2),
                v[1] + sample_uniform(rng, lo, xi2),
                v[2] + sample_uniform(rng, lo, xi2),
            ]
        })
        .collect();
    LabeledMesh {
        vertices,
        faces: mesh.faces.clone(),
        face_labels: mesh.face_labels.clone(),
    }
}

/// Mirrors across each of XY, XZ, YZ independently with probability xi3.
pub fn apply_mirror(mesh: &LabeledMesh, xi3: f64, rng: &mut impl Rng) -> LabeledMesh {
    let planes = [
        rng.gen_bool(xi3.clamp(0.0, 1.0)),
        rng.gen_bool(xi3.clamp(0.0, 1.0)),
        rng.gen_bool(xi3.clamp(0.0, 1.0)),
    ];
    mirror_planes(mesh, planes)
}

/// Deterministic mirror: `planes = [xy, xz, yz]` negates z, y, x
/// respectively. After an odd number of mirrors the face winding is
/// reversed so outward normals are preserved.
pub fn mirror_planes(mesh: &LabeledMesh, planes: [bool; 3]) -> LabeledMesh {
    let signs = [
        if planes[2] { -1.0 } else { 1.0 },
        if planes[1] { -1.0 } else { 1.0 },
        if planes[0] { -1.0 } else { 1.0 },
    ];
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| [v[0] * signs[0], v[1] * signs[1], v[2] * signs[2]])
        .collect();
    let odd = planes.iter().filter(|&&b| b).count() % 2 == 1;
    let faces = if odd {
        mesh.faces.iter().map(|f| [f[0], f[2], f[1]]).collect()
    } else {
        mesh.faces.clone()
    };
    LabeledMesh {
        vertices,
        faces,
        face_labels: mesh.face_labels.clone(),
    }
}

/// Deforms the mesh through a Bernstein lattice over its bounding box,
/// with control displacements drawn from U(-xi4, xi4) per component.
pub fn apply_ffd(
    mesh: &LabeledMesh,
    xi4: f64,
    rng: &mut impl Rng,
) -> Result<LabeledMesh, AugmentError> {
    if xi4 == 0.0 {
        return Ok(mesh.clone());
    }
    let mut lattice = FfdLattice::over_mesh(mesh)?;
    for d in lattice.displacements.iter_mut() {
        *d = [
            sample_uniform(rng, -xi4, xi4),
            sample_uniform(rng, -xi4, xi4),
            sample_uniform(rng, -xi4, xi4),
        ];
    }
    Ok(lattice.deform(mesh))
}

/// Uniform scale by (1 - SA) with SA drawn from U(-xi5, xi5).
pub fn apply_scale(mesh: &LabeledMesh, xi5: f64, rng: &mut impl Rng) -> LabeledMesh {
    let sa = sample_uniform(rng, -xi5, xi5);
    scale(mesh, 1.0 - sa)
}

/// Deterministic uniform scale.
pub fn scale(mesh: &LabeledMesh, factor: f64) -> LabeledMesh {
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| [v[0] * factor, v[1] * factor, v[2] * factor])
        .collect();
    LabeledMesh {
        vertices,
        faces: mesh.faces.clone(),
        face_labels: mesh.face_labels.clone(),
    }
}

/// Applies rotation, noise, mirror, FFD, scale in that fixed order with
/// epoch-scheduled intensities. Face labels pass through untouched.
pub fn augment(
    mesh: &LabeledMesh,
    params: &AugmentationParams,
    rng: &mut impl Rng,
) -> Result<LabeledMesh, AugmentError> {
    let [xi1, xi2, xi3, xi4, xi5] = params.current()?;
    let m = apply_rotation(mesh, xi1, rng);
    let m = apply_noise(&m, xi2, params.symmetric_noise, rng);
    let m = apply_mirror(&m, xi3, rng);
    let m = apply_ffd(&m, xi4, rng)?;
    Ok(apply_scale(&m, xi5, rng))
}
