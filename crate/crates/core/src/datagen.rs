//! Procedural generation of labeled aircraft-like surface meshes and
//! matching discretized CAD surfaces: a capsule fuselage, swept wing
//! boxes, tail stabilizers, and underslung engine cylinders, each at
//! one of five tessellation densities.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::geometry::{LabeledMesh, PartLabel, Point3, SurfaceGrid};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid aircraft parameters: {0}")]
    InvalidParams(String),
    #[error("density level {0} out of range 0..=4")]
    BadDensity(u8),
}

/// Parametric description of one aircraft shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AircraftParams {
    pub fuselage_length: f64,
    pub fuselage_radius: f64,
    pub wing_span: f64,
    pub wing_chord: f64,
    pub wing_sweep: f64,
    pub wing_thickness: f64,
    pub hstab_span: f64,
    pub hstab_chord: f64,
    pub vstab_span: f64,
    pub vstab_chord: f64,
    pub engine_count: usize,
    pub engine_radius: f64,
    /// Spanwise engine station as a fraction of the half span, in (0, 1).
    pub engine_position: f64,
    /// Tessellation density level, 0 (coarsest) to 4 (finest).
    pub density: u8,
}

impl Default for AircraftParams {
    fn default() -> Self {
        Self {
            fuselage_length: 30.0,
            fuselage_radius: 1.8,
            wing_span: 28.0,
            wing_chord: 5.0,
            wing_sweep: 3.0,
            wing_thickness: 0.5,
            hstab_span: 10.0,
            hstab_chord: 2.5,
            vstab_span: 4.5,
            vstab_chord: 3.0,
            engine_count: 2,
            engine_radius: 0.8,
            engine_position: 0.35,
            density: 1,
        }
    }
}

impl AircraftParams {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let positive = [
            ("fuselage_length", self.fuselage_length),
            ("fuselage_radius", self.fuselage_radius),
            ("wing_span", self.wing_span),
            ("wing_chord", self.wing_chord),
            ("wing_thickness", self.wing_thickness),
            ("hstab_span", self.hstab_span),
            ("hstab_chord", self.hstab_chord),
            ("vstab_span", self.vstab_span),
            ("vstab_chord", self.vstab_chord),
            ("engine_radius", self.engine_radius),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(DatagenError::InvalidParams(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if self.density > 4 {
            return Err(DatagenError::BadDensity(self.density));
        }
        if self.fuselage_radius * 2.0 >= self.fuselage_length {
            return Err(DatagenError::InvalidParams(
                "fuselage radius too large for its length".to_string(),
            ));
        }
        if self.wing_chord + self.wing_sweep.abs() >= self.fuselage_length {
            return Err(DatagenError::InvalidParams(
                "wing chord plus sweep exceeds fuselage length".to_string(),
            ));
        }
        if self.hstab_chord >= self.fuselage_length / 2.0
            || self.vstab_chord >= self.fuselage_length / 2.0
        {
            return Err(DatagenError::InvalidParams(
                "stabilizer chord too large for the fuselage".to_string(),
            ));
        }
        if !(self.engine_position > 0.0 && self.engine_position < 1.0) {
            return Err(DatagenError::InvalidParams(format!(
                "engine position must lie in (0, 1), got {}",
                self.engine_position
            )));
        }
        if self.engine_count > 0
            && self.engine_radius * 2.0 >= self.wing_span / 2.0 * self.engine_position
        {
            return Err(DatagenError::InvalidParams(
                "engines too large for their spanwise station".to_string(),
            ));
        }
        Ok(())
    }
}

/// Deterministic family of base designs; index picks proportions.
pub fn base_params(index: usize) -> AircraftParams {
    let mut p = AircraftParams::default();
    let f = index as f64;
    p.fuselage_length = 24.0 + 2.0 * (f % 5.0);
    p.fuselage_radius = 1.4 + 0.15 * (f % 4.0);
    p.wing_span = 22.0 + 2.5 * ((f * 1.3) % 4.0);
    p.wing_chord = 4.0 + 0.5 * (f % 3.0);
    p.wing_sweep = 1.5 + 0.8 * (f % 4.0);
    p.wing_thickness = 0.4 + 0.05 * (f % 3.0);
    p.hstab_span = 8.0 + 0.8 * (f % 3.0);
    p.hstab_chord = 2.0 + 0.25 * (f % 3.0);
    p.vstab_span = 3.5 + 0.4 * (f % 3.0);
    p.vstab_chord = 2.5 + 0.3 * (f % 2.0);
    p.engine_count = 2 + 2 * (index % 2);
    p.engine_radius = 0.6 + 0.1 * (f % 3.0);
    p.engine_position = 0.3 + 0.08 * (f % 3.0);
    p.validate().expect("base designs are valid");
    p
}

/// k random variations of a base design: each continuous parameter is
/// drawn uniformly from 80% to 120% of its base value; engine count and
/// density are kept.
pub fn sample_variations(
    base: &AircraftParams,
    k: usize,
    rng: &mut impl Rng,
) -> Vec<AircraftParams> {
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let mut vary = |v: f64| v * rng.gen_range(0.8..1.2);
        let candidate = AircraftParams {
            fuselage_length: vary(base.fuselage_length),
            fuselage_radius: vary(base.fuselage_radius),
            wing_span: vary(base.wing_span),
            wing_chord: vary(base.wing_chord),
            wing_sweep: vary(base.wing_sweep),
            wing_thickness: vary(base.wing_thickness),
            hstab_span: vary(base.hstab_span),
            hstab_chord: vary(base.hstab_chord),
            vstab_span: vary(base.vstab_span),
            vstab_chord: vary(base.vstab_chord),
            engine_count: base.engine_count,
            engine_radius: vary(base.engine_radius),
            engine_position: base.engine_position * rng.gen_range(0.9..1.1),
            density: base.density,
        };
        if candidate.validate().is_ok() {
            out.push(candidate);
        }
    }
    out
}

/// Mesh builder that welds bit-identical vertices so independently
/// tessellated panels share their boundary vertices.
struct MeshBuilder {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
    labels: Vec<PartLabel>,
    index: HashMap<[u64; 3], usize>,
}

impl MeshBuilder {
    fn new() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            labels: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn vertex(&mut self, p: Point3) -> usize {
        let key = [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()];
        *self.index.entry(key).or_insert_with(|| {
            self.vertices.push(p);
            self.vertices.len() - 1
        })
    }

    fn triangle(&mut self, a: Point3, b: Point3, c: Point3, label: PartLabel) {
        let ia = self.vertex(a);
        let ib = self.vertex(b);
        let ic = self.vertex(c);
        if ia == ib || ib == ic || ia == ic {
            return;
        }
        self.faces.push([ia, ib, ic]);
        self.labels.push(label);
    }

    fn finish(self) -> LabeledMesh {
        LabeledMesh::new(self.vertices, self.faces, Some(self.labels))
            .expect("builder output is valid")
    }
}

fn lerp(a: Point3, b: Point3, t: f64) -> Point3 {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Bilinear patch over a quad (a, b, c, d), counterclockwise seen from
/// outside, split into an m-by-m grid of triangle pairs.
fn quad_patch(
    builder: &mut MeshBuilder,
    quad: [Point3; 4],
    m: usize,
    label: PartLabel,
) {
    let [a, b, c, d] = quad;
    let at = |i: usize, j: usize| {
        let u = i as f64 / m as f64;
        let v = j as f64 / m as f64;
        lerp(lerp(a, b, u), lerp(d, c, u), v)
    };
    for i in 0..m {
        for j in 0..m {
            let p00 = at(i, j);
            let p10 = at(i + 1, j);
            let p11 = at(i + 1, j + 1);
            let p01 = at(i, j + 1);
            builder.triangle(p00, p10, p11, label);
            builder.triangle(p00, p11, p01, label);
        }
    }
}

/// Closed hexahedron from 8 corners (bit layout: index bit 0 = +u,
/// bit 1 = +v, bit 2 = +w), every face subdivided m times.
fn hexahedron(builder: &mut MeshBuilder, c: [Point3; 8], m: usize, label: PartLabel) {
    let faces: [[usize; 4]; 6] = [
        [0, 2, 3, 1], // w-min
        [4, 5, 7, 6], // w-max
        [0, 1, 5, 4], // v-min
        [2, 6, 7, 3], // v-max
        [0, 4, 6, 2], // u-min
        [1, 3, 7, 5], // u-max
    ];
    for f in faces {
        quad_patch(builder, [c[f[0]], c[f[1]], c[f[2]], c[f[3]]], m, label);
    }
}

/// Capsule of revolution along X: rounded nose and tail blended into a
/// cylindrical midbody.
fn fuselage_radius_at(len: f64, r: f64, x: f64) -> f64 {
    if x < r {
        let t = x / r - 1.0;
        r * (1.0 - t * t).max(0.0).sqrt()
    } else if x > len - r {
        let t = (x - (len - r)) / r;
        r * (1.0 - t * t).max(0.0).sqrt()
    } else {
        r
    }
}

fn fuselage(builder: &mut MeshBuilder, p: &AircraftParams, axial: usize, around: usize) {
    let len = p.fuselage_length;
    let r = p.fuselage_radius;
    let radius_at = |x: f64| fuselage_radius_at(len, r, x);
    let ring = |x: f64| -> Vec<Point3> {
        let rad = radius_at(x);
        (0..around)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / around as f64;
                [x, rad * theta.cos(), rad * theta.sin()]
            })
            .collect()
    };
    let stations: Vec<f64> = (1..axial).map(|i| len * i as f64 / axial as f64).collect();
    let rings: Vec<Vec<Point3>> = stations.iter().map(|&x| ring(x)).collect();
    let nose = [0.0, 0.0, 0.0];
    let tail = [len, 0.0, 0.0];
    for k in 0..around {
        let k1 = (k + 1) % around;
        builder.triangle(nose, rings[0][k1], rings[0][k], PartLabel::Fuselage);
        let last = rings.len() - 1;
        builder.triangle(tail, rings[last][k], rings[last][k1], PartLabel::Fuselage);
    }
    for w in 0..rings.len() - 1 {
        for k in 0..around {
            let k1 = (k + 1) % around;
            builder.triangle(
                rings[w][k],
                rings[w][k1],
                rings[w + 1][k1],
                PartLabel::Fuselage,
            );
            builder.triangle(
                rings[w][k],
                rings[w + 1][k1],
                rings[w + 1][k],
                PartLabel::Fuselage,
            );
        }
    }
}

/// Closed cylinder along X with fan caps.
fn cylinder(
    builder: &mut MeshBuilder,
    center: Point3,
    length: f64,
    radius: f64,
    around: usize,
    axial: usize,
    label: PartLabel,
) {
    let x0 = center[0] - length / 2.0;
    let ring = |x: f64| -> Vec<Point3> {
        (0..around)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / around as f64;
                [
                    x,
                    center[1] + radius * theta.cos(),
                    center[2] + radius * theta.sin(),
                ]
            })
            .collect()
    };
    let rings: Vec<Vec<Point3>> = (0..=axial)
        .map(|i| ring(x0 + length * i as f64 / axial as f64))
        .collect();
    let front = [x0, center[1], center[2]];
    let back = [x0 + length, center[1], center[2]];
    for k in 0..around {
        let k1 = (k + 1) % around;
        builder.triangle(front, rings[0][k1], rings[0][k], label);
        builder.triangle(back, rings[axial][k], rings[axial][k1], label);
    }
    for w in 0..axial {
        for k in 0..around {
            let k1 = (k + 1) % around;
            builder.triangle(rings[w][k], rings[w][k1], rings[w + 1][k1], label);
            builder.triangle(rings[w][k], rings[w + 1][k1], rings[w + 1][k], label);
        }
    }
}

/// Swept tapered panel corners: a thin hexahedron from a root chord
/// line to a tip chord line.
#[allow(clippy::too_many_arguments)]
fn panel_corners(
    root_le: Point3,
    tip_le: Point3,
    chord_root: f64,
    chord_tip: f64,
    thickness: f64,
    thickness_axis: usize,
) -> [Point3; 8] {
    let mut c = [[0.0; 3]; 8];
    for i in 0..8 {
        let u = (i & 1) as f64; // chordwise (along +x)
        let v = ((i >> 1) & 1) as f64; // spanwise root -> tip
        let w = ((i >> 2) & 1) as f64; // thickness
        let le = lerp(root_le, tip_le, v);
        let chord = chord_root + (chord_tip - chord_root) * v;
        let mut p = [le[0] + u * chord, le[1], le[2]];
        p[thickness_axis] += (w - 0.5) * thickness;
        c[i] = p;
    }
    c
}

const TAPER: f64 = 0.6;

fn grid_over_quad(id: &str, quad: [Point3; 4], n: usize, label: PartLabel) -> SurfaceGrid {
    let [a, b, c, d] = quad;
    let mut points = Vec::with_capacity(n * n);
    for i in 0..n {
        let u = i as f64 / (n - 1) as f64;
        for j in 0..n {
            let v = j as f64 / (n - 1) as f64;
            points.push(lerp(lerp(a, b, u), lerp(d, c, u), v));
        }
    }
    SurfaceGrid::new(id.to_string(), n, n, points, Some(label)).expect("non-empty panel grid")
}

/// Builds the labeled mesh and one surface grid per part panel.
pub fn generate_aircraft(
    params: &AircraftParams,
) -> Result<(LabeledMesh, Vec<SurfaceGrid>), DatagenError> {
    params.validate()?;
    let d = params.density as usize;
    let around = 10 + 4 * d;
    let axial = 8 + 4 * d;
    let m = 2 + d;

    let mut builder = MeshBuilder::new();
    fuselage(&mut builder, params, axial, around);

    let len = params.fuselage_length;
    let r = params.fuselage_radius;
    let half_span = params.wing_span / 2.0;
    let wing_root_x = len * 0.42;
    let mut grids = Vec::new();

    // fuselage grid: revolution sampling of the full body profile
    {
        let gr = 40;
        let gc = 24;
        let mut points = Vec::with_capacity(gr * gc);
        for i in 0..gr {
            let x = len * (i as f64 + 0.5) / gr as f64;
            let rad = fuselage_radius_at(len, r, x);
            for k in 0..gc {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / gc as f64;
                points.push([x, rad * theta.cos(), rad * theta.sin()]);
            }
        }
        grids.push(
            SurfaceGrid::new(
                "fuselage".to_string(),
                gr,
                gc,
                points,
                Some(PartLabel::Fuselage),
            )
            .expect("non-empty fuselage grid"),
        );
    }

    // wings, one panel per side
    for (name, side) in [("wing-right", 1.0), ("wing-left", -1.0)] {
        let root_le = [wing_root_x, side * r * 0.8, 0.0];
        let tip_le = [wing_root_x + params.wing_sweep, side * half_span, 0.0];
        let corners = panel_corners(
            root_le,
            tip_le,
            params.wing_chord,
            params.wing_chord * TAPER,
            params.wing_thickness,
            2,
        );
        hexahedron(&mut builder, corners, m, PartLabel::Wing);
        // grids over the upper (w-max) and lower (w-min) skins
        grids.push(grid_over_quad(
            name,
            [corners[4], corners[5], corners[7], corners[6]],
            16,
            PartLabel::Wing,
        ));
        grids.push(grid_over_quad(
            &format!("{name}-lower"),
            [corners[0], corners[1], corners[3], corners[2]],
            16,
            PartLabel::Wing,
        ));
    }

    // horizontal stabilizers at the tail
    let stab_x = len - params.hstab_chord - r * 0.5;
    for (name, side) in [("hstab-right", 1.0), ("hstab-left", -1.0)] {
        let root_le = [stab_x, side * r * 0.6, 0.2];
        let tip_le = [stab_x + params.wing_sweep * 0.5, side * params.hstab_span / 2.0, 0.2];
        let corners = panel_corners(
            root_le,
            tip_le,
            params.hstab_chord,
            params.hstab_chord * TAPER,
            params.wing_thickness * 0.7,
            2,
        );
        hexahedron(&mut builder, corners, m, PartLabel::Stabilizer);
        grids.push(grid_over_quad(
            name,
            [corners[4], corners[5], corners[7], corners[6]],
            16,
            PartLabel::Stabilizer,
        ));
        grids.push(grid_over_quad(
            &format!("{name}-lower"),
            [corners[0], corners[1], corners[3], corners[2]],
            16,
            PartLabel::Stabilizer,
        ));
    }

    // vertical stabilizer
    {
        let vstab_x = len - params.vstab_chord - r * 0.5;
        let root_le = [vstab_x, 0.0, r * 0.6];
        let tip_le = [vstab_x + params.wing_sweep * 0.6, 0.0, r * 0.6 + params.vstab_span];
        let corners = panel_corners(
            root_le,
            tip_le,
            params.vstab_chord,
            params.vstab_chord * TAPER,
            params.wing_thickness * 0.7,
            1,
        );
        hexahedron(&mut builder, corners, m, PartLabel::Stabilizer);
        grids.push(grid_over_quad(
            "vstab",
            [corners[4], corners[5], corners[7], corners[6]],
            16,
            PartLabel::Stabilizer,
        ));
        grids.push(grid_over_quad(
            "vstab-lower",
            [corners[0], corners[1], corners[3], corners[2]],
            16,
            PartLabel::Stabilizer,
        ));
    }

    // engines hang below the wings, alternating sides outward
    for e in 0..params.engine_count {
        let side = if e % 2 == 0 { 1.0 } else { -1.0 };
        let station = params.engine_position * (1.0 + 0.4 * (e / 2) as f64);
        let station = station.min(0.9);
        let y = side * (r * 0.8 + station * (half_span - r * 0.8));
        let z = -(params.wing_thickness / 2.0 + params.engine_radius * 1.4);
        let x = wing_root_x + params.wing_sweep * station + params.wing_chord * 0.3;
        let length = params.wing_chord * 0.8;
        cylinder(
            &mut builder,
            [x, y, z],
            length,
            params.engine_radius,
            around.max(8) / 2 * 2,
            2 + d,
            PartLabel::Engine,
        );
        // grid over the engine barrel
        let gr = 8;
        let gc = 12;
        let mut points = Vec::with_capacity(gr * gc);
        for i in 0..gr {
            let px = x - length / 2.0 + length * i as f64 / (gr - 1) as f64;
            for k in 0..gc {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / gc as f64;
                points.push([
                    px,
                    y + params.engine_radius * theta.cos(),
                    z + params.engine_radius * theta.sin(),
                ]);
            }
        }
        grids.push(
            SurfaceGrid::new(
                format!("engine-{e}"),
                gr,
                gc,
                points,
                Some(PartLabel::Engine),
            )
            .expect("non-empty engine grid"),
        );
    }

    Ok((builder.finish(), grids))
}

/// True when every undirected edge borders exactly two faces.
pub fn is_closed(mesh: &LabeledMesh) -> bool {
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            let key = (a.min(b), a.max(b));
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts.values().all(|&c| c == 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_mesh_has_all_labels() {
        let (mesh, grids) = generate_aircraft(&AircraftParams::default()).unwrap();
        let labels = mesh.face_labels.as_ref().unwrap();
        assert_eq!(labels.len(), mesh.face_count());
        for part in PartLabel::ALL {
            assert!(labels.contains(&part), "missing faces for {}", part.name());
            assert!(
                grids.iter().any(|g| g.true_label == Some(part)),
                "missing grid for {}",
                part.name()
            );
        }
    }

    #[test]
    fn density_increases_face_count() {
        let mut prev = 0;
        for d in 0..=4 {
            let params = AircraftParams {
                density: d,
                ..AircraftParams::default()
            };
            let (mesh, _) = generate_aircraft(&params).unwrap();
            assert!(
                mesh.face_count() > prev,
                "density {d} not finer than {}",
                d.saturating_sub(1)
            );
            prev = mesh.face_count();
        }
    }

    #[test]
    fn zero_engines_means_no_engine_faces() {
        let params = AircraftParams {
            engine_count: 0,
            ..AircraftParams::default()
        };
        let (mesh, grids) = generate_aircraft(&params).unwrap();
        let labels = mesh.face_labels.as_ref().unwrap();
        assert!(!labels.contains(&PartLabel::Engine));
        assert!(grids.iter().all(|g| g.true_label != Some(PartLabel::Engine)));
    }

    #[test]
    fn generated_meshes_are_closed() {
        for index in 0..4 {
            let (mesh, _) = generate_aircraft(&base_params(index)).unwrap();
            assert!(is_closed(&mesh), "base {index} not closed");
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let params = AircraftParams {
            fuselage_radius: 20.0,
            ..AircraftParams::default()
        };
        assert!(generate_aircraft(&params).is_err());
        let params = AircraftParams {
            wing_span: -1.0,
            ..AircraftParams::default()
        };
        assert!(params.validate().is_err());
        let params = AircraftParams {
            density: 5,
            ..AircraftParams::default()
        };
        assert!(matches!(params.validate(), Err(DatagenError::BadDensity(5))));
    }

    #[test]
    fn variations_stay_in_range() {
        let base = AircraftParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vars = sample_variations(&base, 20, &mut rng);
        assert_eq!(vars.len(), 20);
        for v in &vars {
            v.validate().unwrap();
            assert!(v.wing_span >= base.wing_span * 0.8);
            assert!(v.wing_span <= base.wing_span * 1.2);
            assert_eq!(v.engine_count, base.engine_count);
            assert_eq!(v.density, base.density);
        }
    }

    #[test]
    fn variations_reproducible() {
        let base = base_params(3);
        let a = sample_variations(&base, 5, &mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_variations(&base, 5, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_variations_zero_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_variations(&AircraftParams::default(), 0, &mut rng).is_empty());
    }

    #[test]
    fn grids_agree_with_face_labels() {
        use crate::geometry::face_centroids;
        use crate::projection::assign_faces;
        let (mesh, grids) = generate_aircraft(&base_params(0)).unwrap();
        let centroids = face_centroids(&mesh);
        let assignments = assign_faces(&centroids, &grids).unwrap();
        let labels = mesh.face_labels.as_ref().unwrap();
        let mut per_part_total = [0usize; 4];
        let mut per_part_hit = [0usize; 4];
        for a in &assignments {
            let truth = labels[a.face as usize];
            per_part_total[truth.id() as usize] += 1;
            if grids[a.surface as usize].true_label == Some(truth) {
                per_part_hit[truth.id() as usize] += 1;
            }
        }
        for part in PartLabel::ALL {
            let i = part.id() as usize;
            let frac = per_part_hit[i] as f64 / per_part_total[i] as f64;
            assert!(
                frac >= 0.95,
                "{} grid consistency {frac} below 0.95",
                part.name()
            );
        }
    }
}
