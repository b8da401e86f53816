//! Randomized property checks over the conformal, voting, and
//! augmentation layers.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use aeromesh::conformal::{aps_score, calibrate, CalibrationRecord, PredictionSet};
use aeromesh::geometry::PartLabel;
use aeromesh::projection::{classify_surface, RefinementPriority, SurfaceAssignment};

fn prob_vector() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(1e-6..1.0f64, 4).prop_map(|raw| {
        let sum: f64 = raw.iter().sum();
        raw.iter().map(|v| v / sum).collect()
    })
}

fn label() -> impl Strategy<Value = PartLabel> {
    (0u8..4).prop_map(|i| PartLabel::from_id(i).unwrap())
}

proptest! {
    #[test]
    fn aps_score_lies_in_unit_interval(probs in prob_vector(), l in label()) {
        let s = aps_score(&probs, l);
        prop_assert!(s > 0.0 && s <= 1.0 + 1e-12);
    }

    #[test]
    fn aps_score_at_least_own_probability(probs in prob_vector(), l in label()) {
        let s = aps_score(&probs, l);
        prop_assert!(s >= probs[l.id() as usize] - 1e-12);
    }

    #[test]
    fn prediction_sets_are_never_empty_and_contain_top1(
        cal in proptest::collection::vec((prob_vector(), label()), 10..60),
        probs in prob_vector(),
        alpha in 0.01..0.5f64,
    ) {
        let records: Vec<CalibrationRecord> = cal
            .into_iter()
            .map(|(p, l)| CalibrationRecord::new(p, l).unwrap())
            .collect();
        let calibrator = calibrate(&records, alpha).unwrap();
        let set = calibrator.predict_set(&probs);
        prop_assert!(!set.is_empty());
        let top1 = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        prop_assert!(set.contains(PartLabel::from_id(top1 as u8).unwrap()));
    }

    #[test]
    fn coverage_on_calibration_data_meets_target(
        cal in proptest::collection::vec((prob_vector(), label()), 40..200),
        alpha in 0.05..0.5f64,
    ) {
        let records: Vec<CalibrationRecord> = cal
            .into_iter()
            .map(|(p, l)| CalibrationRecord::new(p, l).unwrap())
            .collect();
        let calibrator = calibrate(&records, alpha).unwrap();
        // in-sample coverage is at least the nominal level by the
        // quantile construction
        let coverage = calibrator.empirical_coverage(&records);
        prop_assert!(coverage >= 1.0 - alpha - 1e-12, "coverage {coverage}");
    }

    #[test]
    fn voting_is_permutation_invariant(
        face_sets in proptest::collection::vec(
            proptest::collection::btree_set(label(), 1..4), 1..30),
        seed in 0u64..1000,
    ) {
        let priority = RefinementPriority::default();
        let assignments: Vec<SurfaceAssignment> = (0..face_sets.len() as u32)
            .map(|face| SurfaceAssignment { face, surface: 0, distance: 0.0 })
            .collect();
        let sets: BTreeMap<u32, PredictionSet> = face_sets
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u32, PredictionSet { labels: s.clone() }))
            .collect();
        let mut refs: Vec<&SurfaceAssignment> = assignments.iter().collect();
        let base = classify_surface(0, &refs, &sets, &priority).unwrap();
        // deterministic shuffle driven by the seed
        let n = refs.len();
        for i in 0..n {
            let j = (seed as usize + i * 7) % n;
            refs.swap(i, j);
        }
        let shuffled = classify_surface(0, &refs, &sets, &priority).unwrap();
        prop_assert_eq!(base, shuffled);
    }

    #[test]
    fn widening_a_set_never_lowers_refinement(
        face_sets in proptest::collection::vec(
            proptest::collection::btree_set(label(), 1..3), 2..20),
        widen_face in 0usize..20,
        extra in label(),
    ) {
        let priority = RefinementPriority::default();
        let widen_face = widen_face % face_sets.len();
        let assignments: Vec<SurfaceAssignment> = (0..face_sets.len() as u32)
            .map(|face| SurfaceAssignment { face, surface: 0, distance: 0.0 })
            .collect();
        let refs: Vec<&SurfaceAssignment> = assignments.iter().collect();
        let sets: BTreeMap<u32, PredictionSet> = face_sets
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u32, PredictionSet { labels: s.clone() }))
            .collect();
        let before = classify_surface(0, &refs, &sets, &priority).unwrap();
        // adding a class that outranks the current winner must not
        // produce a lower-priority decision
        if !priority.outranks(extra, before.label) {
            return Ok(());
        }
        let mut widened = sets.clone();
        let mut labels: BTreeSet<PartLabel> =
            widened[&(widen_face as u32)].labels.clone();
        labels.insert(extra);
        widened.insert(widen_face as u32, PredictionSet { labels });
        let after = classify_surface(0, &refs, &widened, &priority).unwrap();
        prop_assert!(
            !priority.outranks(before.label, after.label)
                || after.label == before.label,
            "widening flipped {:?} -> {:?}",
            before.label,
            after.label
        );
    }
}
