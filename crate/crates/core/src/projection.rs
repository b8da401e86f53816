//! Face-to-surface assignment by nearest discretized CAD point and
//! surface labeling by conformal-set voting with a conservative
//! tie-break toward the class needing finer mesh settings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::conformal::PredictionSet;
use crate::geometry::{PartLabel, SurfaceGrid, NUM_CLASSES};

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("no surfaces to project onto")]
    NoSurfaces,
    #[error("surface {0} has no assigned faces")]
    EmptySurface(u32),
    #[error("face {0} has no prediction set")]
    MissingPredictionSet(u32),
    #[error("priority order must cover every label exactly once")]
    InvalidPriority,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Nearest-surface record for one mesh face.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceAssignment {
    pub face: u32,
    pub surface: u32,
    pub distance: f64,
}

/// How a surface's winning label was decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionMode {
    Majority,
    ConservativeTiebreak,
}

impl DecisionMode {
    pub fn name(self) -> &'static str {
        match self {
            DecisionMode::Majority => "majority",
            DecisionMode::ConservativeTiebreak => "conservative-tiebreak",
        }
    }
}

/// Voted label for one CAD surface.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurfaceClassification {
    pub surface: u32,
    pub label: PartLabel,
    pub votes: [u32; NUM_CLASSES],
    pub mode: DecisionMode,
}

/// Total order over labels by required mesh refinement, finest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefinementPriority {
    order: [PartLabel; NUM_CLASSES],
}

impl Default for RefinementPriority {
    fn default() -> Self {
        Self {
            order: [
                PartLabel::Wing,
                PartLabel::Stabilizer,
                PartLabel::Engine,
                PartLabel::Fuselage,
            ],
        }
    }
}

impl RefinementPriority {
    pub fn new(order: [PartLabel; NUM_CLASSES]) -> Result<Self, ProjectionError> {
        let mut seen = [false; NUM_CLASSES];
        for label in order {
            let i = label.id() as usize;
            if seen[i] {
                return Err(ProjectionError::InvalidPriority);
            }
            seen[i] = true;
        }
        Ok(Self { order })
    }

    /// Rank in the order, 0 = most refined.
    pub fn rank(&self, label: PartLabel) -> usize {
        self.order
            .iter()
            .position(|&l| l == label)
            .expect("order covers all labels")
    }

    /// True when `a` demands a finer mesh than `b`.
    pub fn outranks(&self, a: PartLabel, b: PartLabel) -> bool {
        self.rank(a) < self.rank(b)
    }

    pub fn order(&self) -> &[PartLabel; NUM_CLASSES] {
        &self.order
    }
}

/// Minimum Euclidean distance from a centroid to any grid point.
pub fn face_surface_distance(centroid: [f64; 3], grid: &SurfaceGrid) -> f64 {
    grid.points
        .iter()
        .map(|p| {
            let dx = centroid[0] - p[0];
            let dy = centroid[1] - p[1];
            let dz = centroid[2] - p[2];
            (dx * dx + dy * dy + dz * dz).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Maps each centroid to its argmin surface; equidistant faces go to
/// the lowest surface id.
pub fn assign_faces(
    centroids: &[[f64; 3]],
    grids: &[SurfaceGrid],
) -> Result<Vec<SurfaceAssignment>, ProjectionError> {
    if grids.is_empty() {
        return Err(ProjectionError::NoSurfaces);
    }
    let mut out = Vec::with_capacity(centroids.len());
    for (face, &c) in centroids.iter().enumerate() {
        let mut best_surface = 0u32;
        let mut best_distance = f64::INFINITY;
        for (s, grid) in grids.iter().enumerate() {
            let d = face_surface_distance(c, grid);
            if d < best_distance {
                best_distance = d;
                best_surface = s as u32;
            }
        }
        out.push(SurfaceAssignment {
            face: face as u32,
            surface: best_surface,
            distance: best_distance,
        });
    }
    Ok(out)
}

/// Each face votes for every class in its prediction set. The top
/// vote-getter (vote ties resolved by priority) wins outright when it
/// holds strictly more than half the face count; otherwise the
/// higher-priority of the two top vote-getters wins.
pub fn classify_surface(
    surface: u32,
    assignments: &[&SurfaceAssignment],
    sets: &BTreeMap<u32, PredictionSet>,
    priority: &RefinementPriority,
) -> Result<SurfaceClassification, ProjectionError> {
    if assignments.is_empty() {
        return Err(ProjectionError::EmptySurface(surface));
    }
    let mut votes = [0u32; NUM_CLASSES];
    for a in assignments {
        let set = sets
            .get(&a.face)
            .ok_or(ProjectionError::MissingPredictionSet(a.face))?;
        for label in &set.labels {
            votes[label.id() as usize] += 1;
        }
    }
    let faces = assignments.len() as u32;
    // rank classes by vote count, count ties resolved by priority; with
    // set-valued votes several classes can clear the majority bar at
    // once, so the majority winner is the best-ranked such class
    let mut ranked: Vec<PartLabel> = PartLabel::ALL.to_vec();
    ranked.sort_by(|&a, &b| {
        votes[b.id() as usize]
            .cmp(&votes[a.id() as usize])
            .then(priority.rank(a).cmp(&priority.rank(b)))
    });
    if 2 * votes[ranked[0].id() as usize] > faces {
        return Ok(SurfaceClassification {
            surface,
            label: ranked[0],
            votes,
            mode: DecisionMode::Majority,
        });
    }
    let winner = if priority.outranks(ranked[0], ranked[1]) {
        ranked[0]
    } else {
        ranked[1]
    };
    Ok(SurfaceClassification {
        surface,
        label: winner,
        votes,
        mode: DecisionMode::ConservativeTiebreak,
    })
}

/// Groups assignments by surface and classifies each one. Surfaces with
/// no assigned faces are skipped.
pub fn classify_surfaces(
    assignments: &[SurfaceAssignment],
    sets: &BTreeMap<u32, PredictionSet>,
    priority: &RefinementPriority,
) -> Result<Vec<SurfaceClassification>, ProjectionError> {
    let mut by_surface: BTreeMap<u32, Vec<&SurfaceAssignment>> = BTreeMap::new();
    for a in assignments {
        by_surface.entry(a.surface).or_default().push(a);
    }
    by_surface
        .into_iter()
        .map(|(surface, group)| classify_surface(surface, &group, sets, priority))
        .collect()
}

/// Surface-level evaluation against ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceReport {
    pub total: usize,
    pub incorrect: usize,
    pub under_refined: usize,
    pub over_refined: usize,
    pub accuracy: f64,
}

/// truths maps surface id to its true label; classifications without a
/// truth entry are ignored.
pub fn evaluate_surfaces(
    classifications: &[SurfaceClassification],
    truths: &BTreeMap<u32, PartLabel>,
    priority: &RefinementPriority,
) -> SurfaceReport {
    let mut total = 0;
    let mut incorrect = 0;
    let mut under_refined = 0;
    let mut over_refined = 0;
    for c in classifications {
        let Some(&truth) = truths.get(&c.surface) else {
            continue;
        };
        total += 1;
        if c.label != truth {
            incorrect += 1;
            if priority.outranks(truth, c.label) {
                under_refined += 1;
            } else {
                over_refined += 1;
            }
        }
    }
    let accuracy = if total == 0 {
        0.0
    } else {
        (total - incorrect) as f64 / total as f64
    };
    SurfaceReport {
        total,
        incorrect,
        under_refined,
        over_refined,
        accuracy,
    }
}

/// CSV dump, one row per classified surface.
pub fn save_classifications(
    classifications: &[SurfaceClassification],
    path: impl AsRef<Path>,
) -> Result<(), ProjectionError> {
    let path = path.as_ref();
    let mut out = String::from(
        "surface_id,label,mode,votes_fuselage,votes_wing,votes_stabilizer,votes_engine\n",
    );
    for c in classifications {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.surface,
            c.label.name(),
            c.mode.name(),
            c.votes[0],
            c.votes[1],
            c.votes[2],
            c.votes[3],
        )
        .unwrap();
    }
    let io_err = |source| ProjectionError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, out).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

/// Uniform grid over a planar rectangle, for synthetic surfaces.
pub fn sample_rectangle_grid(
    surface_id: &str,
    origin: [f64; 3],
    edge_u: [f64; 3],
    edge_v: [f64; 3],
    rows: usize,
    cols: usize,
    true_label: Option<PartLabel>,
) -> SurfaceGrid {
    let mut points = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let fu = if rows > 1 { r as f64 / (rows - 1) as f64 } else { 0.5 };
        for c in 0..cols {
            let fv = if cols > 1 { c as f64 / (cols - 1) as f64 } else { 0.5 };
            points.push([
                origin[0] + fu * edge_u[0] + fv * edge_v[0],
                origin[1] + fu * edge_u[1] + fv * edge_v[1],
                origin[2] + fu * edge_u[2] + fv * edge_v[2],
            ]);
        }
    }
    SurfaceGrid::new(surface_id.to_string(), rows, cols, points, true_label)
        .expect("non-empty rectangle grid")
}
