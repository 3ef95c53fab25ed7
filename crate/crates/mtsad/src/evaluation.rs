//! Point-level detection metrics and a window-aware benchmark score.
//!
//! The benchmark score rewards the earliest detection inside each truth
//! window through a scaled sigmoid (one at the window start after
//! normalisation), penalises detections after a window with the same
//! sigmoid decaying towards minus one, charges every missed window minus
//! one, and normalises by the perfect-detector total.

use serde::{Deserialize, Serialize};

use crate::rootcause::RootCauseResult;
use crate::series::AnomalyWindow;
use crate::{Error, Result};

/// Confusion counts over raw test points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Detection quality summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub nab_score: Option<f64>,
    pub root_cause_recall: Option<f64>,
    pub counts: Counts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn truth_mask(t_len: usize, labels: &[AnomalyWindow]) -> Vec<bool> {
    let mut truth = vec![false; t_len];
    for w in labels {
        for t in w.start..=w.end.min(t_len.saturating_sub(1)) {
            truth[t] = true;
        }
    }
    truth
}

/// Standard confusion-matrix metrics over raw points. A point is a positive
/// truth when it lies inside any label window. Degenerate ratios are
/// reported as zero with a note.
pub fn point_metrics(flags: &[bool], labels: &[AnomalyWindow]) -> Result<MetricReport> {
    let t_len = flags.len();
    for w in labels {
        if w.end >= t_len {
            return Err(Error::Argument(format!(
                "label window [{}, {}] exceeds flag length {t_len}",
                w.start, w.end
            )));
        }
    }
    let truth = truth_mask(t_len, labels);
    let mut counts = Counts {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (&flag, &is_true) in flags.iter().zip(&truth) {
        match (flag, is_true) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.fn_ += 1,
            (false, false) => counts.tn += 1,
        }
    }
    let mut notes = Vec::new();
    let precision = if counts.tp + counts.fp > 0 {
        counts.tp as f64 / (counts.tp + counts.fp) as f64
    } else {
        notes.push("precision undefined (no positive predictions); reported 0".into());
        0.0
    };
    let recall = if counts.tp + counts.fn_ > 0 {
        counts.tp as f64 / (counts.tp + counts.fn_) as f64
    } else {
        notes.push("recall undefined (no positive truth); reported 0".into());
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let fpr = if counts.fp + counts.tn > 0 {
        counts.fp as f64 / (counts.fp + counts.tn) as f64
    } else {
        0.0
    };
    Ok(MetricReport {
        precision,
        recall,
        f1,
        fpr,
        nab_score: None,
        root_cause_recall: None,
        counts,
        notes,
    })
}

/// Relative weights of the score contributions; the default profile weighs
/// detections, false positives, and misses equally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NabProfile {
    pub tp_weight: f64,
    pub fp_weight: f64,
    pub fn_weight: f64,
}

impl Default for NabProfile {
    fn default() -> Self {
        Self {
            tp_weight: 1.0,
            fp_weight: 1.0,
            fn_weight: 1.0,
        }
    }
}

/// The scaled sigmoid mapping relative positions to `(-1, 1)`.
pub fn scaled_sigmoid(y: f64) -> f64 {
    2.0 / (1.0 + (5.0 * y).exp()) - 1.0
}

/// Relative position of point `p` against window `[start, end]`: -1 at the
/// window start, 0 just past the end, positive beyond.
fn relative_position(p: usize, w: &AnomalyWindow) -> f64 {
    (p as f64 - (w.end + 1) as f64) / w.len() as f64
}

/// Window-aware benchmark score of a flag sequence.
///
/// Only the earliest detection inside each window scores; missed windows
/// contribute `-fn_weight`; flagged points outside windows score the
/// (negative) sigmoid relative to the nearest preceding window, or the floor
/// `-fp_weight` when no window precedes them. The total is divided by the
/// perfect-detector score, so a perfect run scores exactly 1. Returns 0 when
/// there are no windows to detect.
pub fn nab_score(flags: &[bool], labels: &[AnomalyWindow], profile: &NabProfile) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut windows: Vec<&AnomalyWindow> = labels.iter().collect();
    windows.sort_by_key(|w| w.start);

    let mut raw = 0.0;
    for w in &windows {
        let earliest = (w.start..=w.end.min(flags.len().saturating_sub(1)))
            .find(|&t| flags[t]);
        match earliest {
            // Inside the window the relative position is negative, so the
            // sigmoid rewards earlier detections with larger positives.
            Some(p) => raw += profile.tp_weight * scaled_sigmoid(relative_position(p, w)),
            None => raw -= profile.fn_weight,
        }
    }

    for (p, &flag) in flags.iter().enumerate() {
        if !flag || windows.iter().any(|w| w.contains(p)) {
            continue;
        }
        let preceding = windows.iter().filter(|w| w.end < p).last();
        raw += match preceding {
            // Past a window the position is positive and the sigmoid
            // negative, decaying towards -1 with distance.
            Some(w) => profile.fp_weight * scaled_sigmoid(relative_position(p, w)),
            None => -profile.fp_weight,
        };
    }

    let perfect = windows.len() as f64 * profile.tp_weight * scaled_sigmoid(-1.0);
    raw / perfect
}

/// Mean per-event root-cause recall over detected events that overlap a
/// truth window with known causes; `None` when nothing matches.
pub fn root_cause_recall(
    events: &[RootCauseResult],
    labels: &[AnomalyWindow],
    step_size: usize,
) -> Option<f64> {
    let mut recalls = Vec::new();
    for event in events {
        let raw_start = event.start_step * step_size;
        let raw_end = (event.end_step + 1) * step_size - 1;
        let mut truth: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
        let mut matched = false;
        for w in labels {
            if raw_start <= w.end && raw_end >= w.start && !w.root_causes.is_empty() {
                matched = true;
                truth.extend(w.root_causes.iter().copied());
            }
        }
        if !matched {
            continue;
        }
        let hit = event
            .selected
            .iter()
            .filter(|s| truth.contains(s))
            .count();
        recalls.push(hit as f64 / truth.len() as f64);
    }
    if recalls.is_empty() {
        None
    } else {
        Some(recalls.iter().sum::<f64>() / recalls.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn window(start: usize, end: usize) -> AnomalyWindow {
        AnomalyWindow::new(start, end, BTreeSet::new())
    }

    /// Independent formula-sum oracle: a direct, separate translation of the
    /// scoring rules used to cross-check `nab_score`.
    fn oracle(flags: &[bool], labels: &[AnomalyWindow]) -> f64 {
        let sig = |y: f64| 2.0 / (1.0 + (5.0 * y).exp()) - 1.0;
        let mut raw = 0.0;
        let mut sorted: Vec<&AnomalyWindow> = labels.iter().collect();
        sorted.sort_by_key(|w| w.start);
        for w in &sorted {
            let mut first = None;
            for t in w.start..=w.end {
                if t < flags.len() && flags[t] {
                    first = Some(t);
                    break;
                }
            }
            match first {
                Some(t) => {
                    let len = (w.end - w.start + 1) as f64;
                    let y = (t as f64 - (w.end + 1) as f64) / len;
                    raw += sig(y);
                }
                None => raw -= 1.0,
            }
        }
        for (t, &f) in flags.iter().enumerate() {
            if !f {
                continue;
            }
            if sorted.iter().any(|w| t >= w.start && t <= w.end) {
                continue;
            }
            let mut best: Option<&AnomalyWindow> = None;
            for w in &sorted {
                if w.end < t {
                    best = Some(w);
                }
            }
            raw += match best {
                Some(w) => {
                    let len = (w.end - w.start + 1) as f64;
                    sig((t as f64 - (w.end + 1) as f64) / len)
                }
                None => -1.0,
            };
        }
        raw / (sorted.len() as f64 * sig(-1.0))
    }

    #[test]
    fn perfect_detector_metrics() {
        let labels = vec![window(5, 9), window(15, 16)];
        let mut flags = vec![false; 20];
        for t in 5..=9 {
            flags[t] = true;
        }
        for t in 15..=16 {
            flags[t] = true;
        }
        let report = point_metrics(&flags, &labels).unwrap();
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.fpr, 0.0);
        assert_eq!(
            report.counts.tp + report.counts.fp + report.counts.fn_ + report.counts.tn,
            20
        );
    }

    #[test]
    fn silent_detector_reports_zero_precision_with_note() {
        let labels = vec![window(5, 9)];
        let flags = vec![false; 20];
        let report = point_metrics(&flags, &labels).unwrap();
        assert_eq!(report.recall, 0.0);
        assert_eq!(report.fpr, 0.0);
        assert_eq!(report.precision, 0.0);
        assert!(!report.notes.is_empty());
    }

    #[test]
    fn hand_tallied_confusion_matrix() {
        // T=20, window [8,12]; flags at 7,8,9,15.
        let labels = vec![window(8, 12)];
        let mut flags = vec![false; 20];
        for t in [7, 8, 9, 15] {
            flags[t] = true;
        }
        let report = point_metrics(&flags, &labels).unwrap();
        assert_eq!(report.counts.tp, 2);
        assert_eq!(report.counts.fp, 2);
        assert_eq!(report.counts.fn_, 3);
        assert_eq!(report.counts.tn, 13);
        assert!((report.precision - 0.5).abs() < 1e-12);
        assert!((report.recall - 0.4).abs() < 1e-12);
        assert!((report.fpr - 2.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn label_order_does_not_matter() {
        let mut flags = vec![false; 30];
        for t in [3, 11, 24] {
            flags[t] = true;
        }
        let a = vec![window(2, 4), window(10, 12), window(22, 25)];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(
            point_metrics(&flags, &a).unwrap(),
            point_metrics(&flags, &b).unwrap()
        );
    }

    #[test]
    fn window_length_mismatch_is_an_error() {
        assert!(point_metrics(&[false; 5], &[window(3, 7)]).is_err());
    }

    #[test]
    fn window_start_detection_scores_one_after_normalisation() {
        let labels = vec![window(10, 19)];
        let mut flags = vec![false; 30];
        flags[10] = true;
        let score = nab_score(&flags, &labels, &NabProfile::default());
        assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn later_detection_scores_less_than_earlier() {
        let labels = vec![window(10, 19)];
        let mut early = vec![false; 30];
        early[10] = true;
        let mut late = vec![false; 30];
        late[18] = true;
        let profile = NabProfile::default();
        assert!(
            nab_score(&early, &labels, &profile) > nab_score(&late, &labels, &profile)
        );
    }

    #[test]
    fn missed_window_contributes_minus_one_pre_normalisation() {
        let labels = vec![window(10, 19)];
        let flags = vec![false; 30];
        let score = nab_score(&flags, &labels, &NabProfile::default());
        let normaliser = scaled_sigmoid(-1.0);
        assert!((score * normaliser - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn flag_everything_goes_strongly_negative_and_matches_oracle() {
        let labels = vec![window(40, 49)];
        let flags = vec![true; 200];
        let got = nab_score(&flags, &labels, &NabProfile::default());
        let want = oracle(&flags, &labels);
        assert!(got < -10.0, "{got}");
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn hand_cases_match_formula_oracle() {
        let cases: Vec<(Vec<usize>, Vec<AnomalyWindow>, usize)> = vec![
            (vec![10], vec![window(10, 19)], 40),
            (vec![15], vec![window(10, 19)], 40),
            (vec![19], vec![window(10, 19)], 40),
            (vec![25], vec![window(10, 19)], 40),
            (vec![5], vec![window(10, 19)], 40),
            (vec![10, 15, 25], vec![window(10, 19)], 40),
            (vec![], vec![window(0, 4), window(20, 24)], 40),
            (vec![0, 22], vec![window(0, 4), window(20, 24)], 40),
            (vec![7, 8], vec![window(0, 4), window(20, 24)], 40),
            (vec![39], vec![window(0, 4), window(20, 24)], 40),
        ];
        for (points, labels, t_len) in cases {
            let mut flags = vec![false; t_len];
            for p in &points {
                flags[*p] = true;
            }
            let got = nab_score(&flags, &labels, &NabProfile::default());
            let want = oracle(&flags, &labels);
            assert!(
                (got - want).abs() < 1e-9,
                "points {points:?}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn empty_labels_score_zero() {
        assert_eq!(nab_score(&[true, false], &[], &NabProfile::default()), 0.0);
    }

    #[test]
    fn root_cause_recall_averages_matched_events() {
        let labels = vec![
            AnomalyWindow::new(100, 140, BTreeSet::from([1, 2])),
            AnomalyWindow::new(300, 320, BTreeSet::from([0, 3])),
        ];
        let events = vec![
            RootCauseResult {
                start_step: 20,
                end_step: 28,
                method: crate::rootcause::RootCauseMethod::AbsoluteError,
                scores: vec![],
                selected: vec![2, 1],
                degenerate: false,
            },
            RootCauseResult {
                start_step: 60,
                end_step: 64,
                method: crate::rootcause::RootCauseMethod::AbsoluteError,
                scores: vec![],
                selected: vec![0],
                degenerate: false,
            },
        ];
        // step_size 5: event 1 covers [100,145), event 2 covers [300,325).
        let recall = root_cause_recall(&events, &labels, 5).unwrap();
        assert!((recall - 0.75).abs() < 1e-12); // (1.0 + 0.5) / 2
    }

    #[test]
    fn unmatched_events_yield_none() {
        let labels = vec![AnomalyWindow::new(0, 10, BTreeSet::from([1]))];
        let events = vec![RootCauseResult {
            start_step: 100,
            end_step: 101,
            method: crate::rootcause::RootCauseMethod::AbsoluteError,
            scores: vec![],
            selected: vec![1],
            degenerate: false,
        }];
        assert!(root_cause_recall(&events, &labels, 5).is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn score_never_exceeds_one_and_matches_oracle(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t_len = 120;
            let flags: Vec<bool> = (0..t_len).map(|_| rng.random_range(0.0..1.0) < 0.1).collect();
            let a = rng.random_range(10..40);
            let b = a + rng.random_range(3..20);
            let c = rng.random_range(70..90);
            let d = c + rng.random_range(3..20);
            let labels = vec![window(a, b), window(c, d)];
            let score = nab_score(&flags, &labels, &NabProfile::default());
            prop_assert!(score <= 1.0 + 1e-12);
            prop_assert!((score - oracle(&flags, &labels)).abs() < 1e-9);
        }

        #[test]
        fn far_false_positive_strictly_decreases_score(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t_len = 200;
            let labels = vec![window(20, 29)];
            let mut flags = vec![false; t_len];
            flags[rng.random_range(20..30)] = true;
            let base = nab_score(&flags, &labels, &NabProfile::default());
            let mut with_fp = flags.clone();
            with_fp[150 + rng.random_range(0..40)] = true;
            let worse = nab_score(&with_fp, &labels, &NabProfile::default());
            prop_assert!(worse < base);
        }
    }
}
