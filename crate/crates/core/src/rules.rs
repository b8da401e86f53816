//! Expert meshing rules: maps part labels to mesh settings for one
//! flow condition and writes a byte-stable settings document per
//! classified surface.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::geometry::PartLabel;
use crate::projection::SurfaceClassification;

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("no mesh settings for label {0}")]
    MissingRule(&'static str),
    #[error("invalid mesh settings for {label}: {reason}")]
    InvalidSettings { label: &'static str, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceCellType {
    QuadDominant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeCellType {
    HexDominant,
}

impl SurfaceCellType {
    pub fn name(self) -> &'static str {
        match self {
            SurfaceCellType::QuadDominant => "quad-dominant",
        }
    }
}

impl VolumeCellType {
    pub fn name(self) -> &'static str {
        match self {
            VolumeCellType::HexDominant => "hex-dominant",
        }
    }
}

/// Meshing parameters for one part class. Lengths carry no explicit
/// unit; values are emitted verbatim with a units-unspecified note.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSettings {
    pub surface_mesh_dimension: f64,
    pub surface_cell_type: SurfaceCellType,
    pub volume_cell_type: VolumeCellType,
    pub initial_wall_spacing: f64,
    pub growth_rate: f64,
    pub collision_buffer: f64,
    pub yplus_advisory: String,
}

impl MeshSettings {
    fn validate(&self, label: &'static str) -> Result<(), RulesError> {
        let bad = |reason: &str| RulesError::InvalidSettings {
            label,
            reason: reason.to_string(),
        };
        if !(self.surface_mesh_dimension > 0.0) {
            return Err(bad("surface mesh dimension must be positive"));
        }
        if !(self.initial_wall_spacing > 0.0) {
            return Err(bad("initial wall spacing must be positive"));
        }
        if !(self.growth_rate > 1.0) {
            return Err(bad("growth rate must exceed 1"));
        }
        if !(self.collision_buffer > 0.0) {
            return Err(bad("collision buffer must be positive"));
        }
        Ok(())
    }
}

const YPLUS_ADVISORY: &str =
    "compute Y+ after an initial solution; if Y+ > 1, decrease initial wall spacing";

/// Label-to-settings map plus the flow condition it was authored for.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleDatabase {
    settings: BTreeMap<PartLabel, MeshSettings>,
    pub flow_condition: String,
    /// Labels whose entries are fallbacks rather than expert-authored
    /// rules; noted in emitted output.
    pub fallback_labels: Vec<PartLabel>,
}

impl RuleDatabase {
    pub fn get(&self, label: PartLabel) -> Result<&MeshSettings, RulesError> {
        self.settings
            .get(&label)
            .ok_or(RulesError::MissingRule(label.name()))
    }

    pub fn set(&mut self, label: PartLabel, settings: MeshSettings) -> Result<(), RulesError> {
        settings.validate(label.name())?;
        self.fallback_labels.retain(|&l| l != label);
        self.settings.insert(label, settings);
        Ok(())
    }

    pub fn is_fallback(&self, label: PartLabel) -> bool {
        self.fallback_labels.contains(&label)
    }
}

/// Expert rules for cruise at Mach 0.65, 0 degrees angle of attack,
/// sea level, 30 m reference length. Engines have no authored rule and
/// reuse the stabilizer record as a conservative fallback.
pub fn default_rules() -> RuleDatabase {
    let shared = |dimension: f64| MeshSettings {
        surface_mesh_dimension: dimension,
        surface_cell_type: SurfaceCellType::QuadDominant,
        volume_cell_type: VolumeCellType::HexDominant,
        initial_wall_spacing: 4.7e-6,
        growth_rate: 1.1,
        collision_buffer: 2.0,
        yplus_advisory: YPLUS_ADVISORY.to_string(),
    };
    let mut settings = BTreeMap::new();
    settings.insert(PartLabel::Wing, shared(0.05));
    settings.insert(PartLabel::Stabilizer, shared(0.2));
    settings.insert(PartLabel::Fuselage, shared(1.0));
    settings.insert(PartLabel::Engine, shared(0.2));
    RuleDatabase {
        settings,
        flow_condition:
            "Mach 0.65, AoA 0 deg, sea level, reference length 30 m".to_string(),
        fallback_labels: vec![PartLabel::Engine],
    }
}

/// Writes the settings document: a human-readable header and table,
/// then a JSON machine section. Output is byte-stable for fixed input.
pub fn emit_settings(
    classifications: &[SurfaceClassification],
    rules: &RuleDatabase,
    path: impl AsRef<Path>,
) -> Result<(), RulesError> {
    let text = render_settings(classifications, rules)?;
    let path = path.as_ref();
    let io_err = |source| RulesError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn render_settings(
    classifications: &[SurfaceClassification],
    rules: &RuleDatabase,
) -> Result<String, RulesError> {
    let mut out = String::new();
    writeln!(out, "# mesh settings").unwrap();
    writeln!(out, "# flow condition: {}", rules.flow_condition).unwrap();
    writeln!(out, "# units: unspecified; values scaled for a 30 m reference length").unwrap();
    writeln!(
        out,
        "# fields: surface_id | label | dimension | wall_spacing | growth | buffer | cell_types | advisories"
    )
    .unwrap();
    let mut machine = Vec::new();
    for c in classifications {
        let s = rules.get(c.label)?;
        let mut advisories = vec![s.yplus_advisory.clone()];
        if rules.is_fallback(c.label) {
            advisories.push(format!(
                "no expert rule for {}; fallback settings, not expert-authored",
                c.label.name()
            ));
        }
        writeln!(
            out,
            "{} | {} | {} | {} | {} | {} | {}/{} | {}",
            c.surface,
            c.label.name(),
            s.surface_mesh_dimension,
            s.initial_wall_spacing,
            s.growth_rate,
            s.collision_buffer,
            s.surface_cell_type.name(),
            s.volume_cell_type.name(),
            advisories.join("; "),
        )
        .unwrap();
        machine.push(serde_json::json!({
            "surface_id": c.surface,
            "label": c.label.name(),
            "decision_mode": c.mode.name(),
            "surface_mesh_dimension": s.surface_mesh_dimension,
            "initial_wall_spacing": s.initial_wall_spacing,
            "growth_rate": s.growth_rate,
            "collision_buffer": s.collision_buffer,
            "surface_cell_type": s.surface_cell_type.name(),
            "volume_cell_type": s.volume_cell_type.name(),
            "advisories": advisories,
        }));
    }
    writeln!(out, "# machine section").unwrap();
    let doc = serde_json::json!({
        "flow_condition": rules.flow_condition,
        "reference_length_m": 30.0,
        "surfaces": machine,
    });
    out.push_str(&serde_json::to_string_pretty(&doc).expect("serializable document"));
    out.push('\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::DecisionMode;

    fn classification(surface: u32, label: PartLabel) -> SurfaceClassification {
        SurfaceClassification {
            surface,
            label,
            votes: [0; 4],
            mode: DecisionMode::Majority,
        }
    }

    #[test]
    fn wing_rule_values() {
        let rules = default_rules();
        let wing = rules.get(PartLabel::Wing).unwrap();
        assert_eq!(wing.surface_mesh_dimension, 0.05);
        assert_eq!(wing.initial_wall_spacing, 4.7e-6);
        assert_eq!(wing.growth_rate, 1.1);
        assert_eq!(wing.collision_buffer, 2.0);
    }

    #[test]
    fn stabilizer_and_fuselage_dimensions() {
        let rules = default_rules();
        assert_eq!(
            rules.get(PartLabel::Stabilizer).unwrap().surface_mesh_dimension,
            0.2
        );
        assert_eq!(
            rules.get(PartLabel::Fuselage).unwrap().surface_mesh_dimension,
            1.0
        );
    }

    #[test]
    fn refinement_monotone_in_priority() {
        let rules = default_rules();
        let dim = |l| rules.get(l).unwrap().surface_mesh_dimension;
        assert!(dim(PartLabel::Wing) < dim(PartLabel::Stabilizer));
        assert!(dim(PartLabel::Stabilizer) < dim(PartLabel::Fuselage));
    }

    #[test]
    fn engine_is_marked_fallback() {
        let rules = default_rules();
        assert!(rules.is_fallback(PartLabel::Engine));
        assert_eq!(
            rules.get(PartLabel::Engine).unwrap(),
            rules.get(PartLabel::Stabilizer).unwrap()
        );
        let text =
            render_settings(&[classification(0, PartLabel::Engine)], &rules).unwrap();
        assert!(text.contains("not expert-authored"));
    }

    #[test]
    fn override_clears_fallback_mark() {
        let mut rules = default_rules();
        let mut custom = rules.get(PartLabel::Engine).unwrap().clone();
        custom.surface_mesh_dimension = 0.1;
        rules.set(PartLabel::Engine, custom).unwrap();
        assert!(!rules.is_fallback(PartLabel::Engine));
    }

    #[test]
    fn invalid_override_rejected() {
        let mut rules = default_rules();
        let mut custom = rules.get(PartLabel::Wing).unwrap().clone();
        custom.growth_rate = 1.0;
        assert!(rules.set(PartLabel::Wing, custom).is_err());
    }

    #[test]
    fn three_surface_document() {
        let rules = default_rules();
        let cls = vec![
            classification(0, PartLabel::Wing),
            classification(1, PartLabel::Stabilizer),
            classification(2, PartLabel::Fuselage),
        ];
        let text = render_settings(&cls, &rules).unwrap();
        assert!(text.contains("0 | wing | 0.05 | 0.0000047 | 1.1 | 2 | quad-dominant/hex-dominant"));
        assert!(text.contains("1 | stabilizer | 0.2 |"));
        assert!(text.contains("2 | fuselage | 1 |"));
    }

    #[test]
    fn empty_input_is_header_only() {
        let text = render_settings(&[], &default_rules()).unwrap();
        assert!(text.starts_with("# mesh settings"));
        assert!(text.contains("\"surfaces\": []"));
    }

    #[test]
    fn emission_is_byte_stable() {
        let rules = default_rules();
        let cls = vec![
            classification(0, PartLabel::Wing),
            classification(1, PartLabel::Engine),
        ];
        let a = render_settings(&cls, &rules).unwrap();
        let b = render_settings(&cls, &rules).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("one.txt");
        let p2 = dir.path().join("two.txt");
        emit_settings(&cls, &rules, &p1).unwrap();
        emit_settings(&cls, &rules, &p2).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap()
        );
    }
}
