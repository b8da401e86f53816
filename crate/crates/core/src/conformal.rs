//! Adaptive prediction sets: split-conformal calibration of a score
//! quantile and set-valued prediction with a 1 - alpha marginal
//! coverage guarantee.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::geometry::PartLabel;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("alpha must be in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("probability vector does not sum to 1 (sum = {0})")]
    NotStochastic(f64),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed calibrator file {0}")]
    Malformed(String),
}

/// A held-out model output paired with its true label.
#[derive(Debug, Clone)]
pub struct CalibrationRecord {
    pub probs: Vec<f64>,
    pub label: PartLabel,
}

impl CalibrationRecord {
    pub fn new(probs: Vec<f64>, label: PartLabel) -> Result<Self, ConformalError> {
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConformalError::NotStochastic(sum));
        }
        Ok(Self { probs, label })
    }
}

/// Per-face conformal label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSet {
    pub labels: BTreeSet<PartLabel>,
}

impl PredictionSet {
    pub fn contains(&self, label: PartLabel) -> bool {
        self.labels.contains(&label)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Classes in descending-probability order with ties broken by class id
/// ascending, so scores and sets are well-defined.
fn sorted_classes(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });
    order
}

/// Cumulative probability mass down to and including the true label's
/// position in the descending sort.
pub fn aps_score(probs: &[f64], label: PartLabel) -> f64 {
    let target = label.id() as usize;
    let mut cum = 0.0;
    for class in sorted_classes(probs) {
        cum += probs[class];
        if class == target {
            return cum;
        }
    }
    cum
}

/// Calibrated score threshold at risk level alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalCalibrator {
    pub alpha: f64,
    pub qhat: f64,
    pub n_cal: usize,
}

/// qhat is the ceil((n+1)(1-alpha))-th smallest of the n calibration
/// scores, clamped to 1 when that rank exceeds n.
pub fn calibrate(
    records: &[CalibrationRecord],
    alpha: f64,
) -> Result<ConformalCalibrator, ConformalError> {
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(ConformalError::InvalidAlpha(alpha));
    }
    if records.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    let n = records.len();
    let mut scores: Vec<f64> = records
        .iter()
        .map(|r| aps_score(&r.probs, r.label))
        .collect();
    scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let rank = (((n + 1) as f64) * (1.0 - alpha)).ceil() as usize;
    let qhat = if rank > n { 1.0 } else { scores[rank - 1] };
    Ok(ConformalCalibrator {
        alpha,
        qhat,
        n_cal: n,
    })
}

impl ConformalCalibrator {
    /// Greedily includes classes in descending-probability order until
    /// the cumulative mass reaches qhat; never returns an empty set.
    pub fn predict_set(&self, probs: &[f64]) -> PredictionSet {
        let mut labels = BTreeSet::new();
        let mut cum = 0.0;
        for class in sorted_classes(probs) {
            labels.insert(PartLabel::from_id(class as u8).expect("class in label space"));
            cum += probs[class];
            if cum >= self.qhat {
                break;
            }
        }
        PredictionSet { labels }
    }

    /// Fraction of records whose true label lies in the prediction set.
    pub fn empirical_coverage(&self, records: &[CalibrationRecord]) -> f64 {
        if records.is_empty() {
            return 0.0;
        }
        let hits = records
            .iter()
            .filter(|r| self.predict_set(&r.probs).contains(r.label))
            .count();
        hits as f64 / records.len() as f64
    }

    /// Structured-text dump: `alpha`, `qhat`, `n_cal` lines.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConformalError> {
        let path = path.as_ref();
        let mut out = String::new();
        writeln!(out, "alpha {}", self.alpha).unwrap();
        writeln!(out, "qhat {}", self.qhat).unwrap();
        writeln!(out, "n_cal {}", self.n_cal).unwrap();
        let io_err = |source| ConformalError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, out).map_err(io_err)?;
        fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConformalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConformalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut alpha = None;
        let mut qhat = None;
        let mut n_cal = None;
        for line in text.lines() {
            let mut toks = line.split_whitespace();
            match (toks.next(), toks.next()) {
                (Some("alpha"), Some(v)) => alpha = v.parse().ok(),
                (Some("qhat"), Some(v)) => qhat = v.parse().ok(),
                (Some("n_cal"), Some(v)) => n_cal = v.parse().ok(),
                _ => {}
            }
        }
        match (alpha, qhat, n_cal) {
            (Some(alpha), Some(qhat), Some(n_cal)) => Ok(Self { alpha, qhat, n_cal }),
            _ => Err(ConformalError::Malformed(path.display().to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(probs: [f64; 4], label: PartLabel) -> CalibrationRecord {
        CalibrationRecord::new(probs.to_vec(), label).unwrap()
    }

    #[test]
    fn score_certain_prediction() {
        assert_eq!(aps_score(&[1.0, 0.0, 0.0, 0.0], PartLabel::Fuselage), 1.0);
    }

    #[test]
    fn score_uniform_with_tie_order() {
        // deterministic tie order puts class 2 third
        let s = aps_score(&[0.25; 4], PartLabel::Stabilizer);
        assert!((s - 0.75).abs() < 1e-12);
    }

    #[test]
    fn score_hand_cumulative_sum() {
        let s = aps_score(&[0.5, 0.3, 0.15, 0.05], PartLabel::Wing);
        assert!((s - 0.8).abs() < 1e-12);
    }

    #[test]
    fn calibrate_rank_formula() {
        // n = 99, alpha = 0.05 -> rank ceil(100 * 0.95) = 95th smallest
        let records: Vec<CalibrationRecord> = (0..99)
            .map(|i| {
                let p = 0.5 + 0.005 * i as f64 / 2.0;
                rec([p, 1.0 - p, 0.0, 0.0], PartLabel::Fuselage)
            })
            .collect();
        let mut scores: Vec<f64> = records
            .iter()
            .map(|r| aps_score(&r.probs, r.label))
            .collect();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cal = calibrate(&records, 0.05).unwrap();
        assert_eq!(cal.qhat, scores[94]);
    }

    #[test]
    fn calibrate_constant_scores() {
        let records: Vec<_> = (0..19)
            .map(|_| rec([0.5, 0.5, 0.0, 0.0], PartLabel::Fuselage))
            .collect();
        let cal = calibrate(&records, 0.05).unwrap();
        assert_eq!(cal.qhat, 0.5);
    }

    #[test]
    fn calibrate_clamps_small_n() {
        let records: Vec<_> = (0..3)
            .map(|_| rec([0.9, 0.1, 0.0, 0.0], PartLabel::Fuselage))
            .collect();
        let cal = calibrate(&records, 0.05).unwrap();
        assert_eq!(cal.qhat, 1.0);
    }

    #[test]
    fn calibrate_rejects_empty_and_bad_alpha() {
        assert!(matches!(
            calibrate(&[], 0.05),
            Err(ConformalError::EmptyCalibration)
        ));
        let records = vec![rec([1.0, 0.0, 0.0, 0.0], PartLabel::Fuselage)];
        assert!(matches!(
            calibrate(&records, 0.0),
            Err(ConformalError::InvalidAlpha(_))
        ));
        assert!(matches!(
            calibrate(&records, 1.0),
            Err(ConformalError::InvalidAlpha(_))
        ));
    }

    #[test]
    fn qhat_one_gives_full_label_set() {
        let cal = ConformalCalibrator {
            alpha: 0.05,
            qhat: 1.0,
            n_cal: 3,
        };
        let set = cal.predict_set(&[0.7, 0.1, 0.1, 0.1]);
        assert_eq!(set.len(), 4);
    }

    #[test]
    fn confident_prediction_gives_singleton() {
        let cal = ConformalCalibrator {
            alpha: 0.05,
            qhat: 0.9,
            n_cal: 100,
        };
        let set = cal.predict_set(&[0.97, 0.01, 0.01, 0.01]);
        assert_eq!(set.len(), 1);
        assert!(set.contains(PartLabel::Fuselage));
    }

    #[test]
    fn set_by_hand_cumulative_sum() {
        let cal = ConformalCalibrator {
            alpha: 0.05,
            qhat: 0.85,
            n_cal: 100,
        };
        // cumulative 0.5 -> 0.8 -> 0.95: three classes
        let set = cal.predict_set(&[0.5, 0.3, 0.15, 0.05]);
        assert_eq!(set.len(), 3);
        assert!(set.contains(PartLabel::Fuselage));
        assert!(set.contains(PartLabel::Wing));
        assert!(set.contains(PartLabel::Stabilizer));
    }

    #[test]
    fn coverage_is_one_with_qhat_one() {
        let cal = ConformalCalibrator {
            alpha: 0.05,
            qhat: 1.0,
            n_cal: 10,
        };
        let records: Vec<_> = (0..50)
            .map(|i| {
                rec(
                    [0.4, 0.3, 0.2, 0.1],
                    PartLabel::from_id((i % 4) as u8).unwrap(),
                )
            })
            .collect();
        assert_eq!(cal.empirical_coverage(&records), 1.0);
    }

    #[test]
    fn calibration_order_invariant() {
        let mut records: Vec<_> = (0..40)
            .map(|i| {
                let p = 0.3 + 0.017 * (i as f64 % 37.0);
                let p = p.min(0.99);
                rec(
                    [p, (1.0 - p) / 2.0, (1.0 - p) / 3.0, 1.0 - p - (1.0 - p) / 2.0 - (1.0 - p) / 3.0],
                    PartLabel::Fuselage,
                )
            })
            .collect();
        let c1 = calibrate(&records, 0.1).unwrap();
        records.reverse();
        let c2 = calibrate(&records, 0.1).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn monotone_in_alpha() {
        let records: Vec<_> = (0..200)
            .map(|i| {
                let p = (0.2 + 0.004 * i as f64).min(0.995);
                let q = (1.0 - p) / 3.0;
                rec([p, q, q, 1.0 - p - 2.0 * q], PartLabel::Fuselage)
            })
            .collect();
        let tight = calibrate(&records, 0.02).unwrap();
        let loose = calibrate(&records, 0.2).unwrap();
        assert!(tight.qhat >= loose.qhat);
        let probs = [0.45, 0.3, 0.2, 0.05];
        let tight_set = tight.predict_set(&probs);
        let loose_set = loose.predict_set(&probs);
        for l in &loose_set.labels {
            assert!(tight_set.contains(*l));
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.txt");
        let cal = ConformalCalibrator {
            alpha: 0.05,
            qhat: 0.87654321,
            n_cal: 1234,
        };
        cal.save(&path).unwrap();
        assert_eq!(ConformalCalibrator::load(&path).unwrap(), cal);
    }
}
