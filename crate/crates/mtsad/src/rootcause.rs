//! Per-series attribution of flagged events.
//!
//! Each series gets a score from its row of the contextual residuals
//! averaged over an event window; the unknown number of root causes is then
//! picked by the elbow of the sorted score curve.

use serde::{Deserialize, Serialize};

use crate::nn::train::ResidualRecord;
use crate::scoring::ScoreSeries;
use crate::{Error, Result};

/// Per-series scoring rule over an event window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootCauseMethod {
    /// Mean count of broken tiles in the series' row.
    NumberBroken,
    /// Mean summed error of the broken tiles in the row.
    WeightedBroken,
    /// Mean summed error of every tile in the row.
    AbsoluteError,
}

impl RootCauseMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nb" | "number_broken" => Ok(Self::NumberBroken),
            "wb" | "weighted_broken" => Ok(Self::WeightedBroken),
            "ae" | "absolute_error" => Ok(Self::AbsoluteError),
            other => Err(Error::Argument(format!(
                "unknown root-cause method '{other}' (expected nb, wb, or ae)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::NumberBroken => "nb",
            Self::WeightedBroken => "wb",
            Self::AbsoluteError => "ae",
        }
    }
}

/// Attribution for one flagged event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCauseResult {
    pub start_step: usize,
    pub end_step: usize,
    pub method: RootCauseMethod,
    pub scores: Vec<f64>,
    /// Selected series, ordered by descending score.
    pub selected: Vec<usize>,
    /// True when every score was equal and the top series was returned by
    /// stable order.
    pub degenerate: bool,
}

/// Scores each series over an event window: the chosen statistic of the
/// series' residual row, averaged across the window's steps. `theta` is the
/// fitted broken-tile threshold.
pub fn series_scores(
    records: &[&ResidualRecord],
    method: RootCauseMethod,
    theta: f64,
) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::Argument("empty event window".into()));
    }
    let n = records[0].contextual.nrows();
    let mut scores = vec![0.0; n];
    for record in records {
        for (i, row) in record.contextual.rows().into_iter().enumerate() {
            let contribution: f64 = match method {
                RootCauseMethod::NumberBroken => row.iter().filter(|&&v| v > theta).count() as f64,
                RootCauseMethod::WeightedBroken => {
                    row.iter().filter(|&&v| v > theta).map(|&v| v.abs()).sum()
                }
                RootCauseMethod::AbsoluteError => row.iter().map(|&v| v.abs()).sum(),
            };
            scores[i] += contribution;
        }
    }
    let count = records.len() as f64;
    for s in &mut scores {
        *s /= count;
    }
    Ok(scores)
}

/// Outcome of [`elbow_select`].
#[derive(Debug, Clone, PartialEq)]
pub struct ElbowSelection {
    /// Indices with scores strictly above the elbow score, ordered by
    /// descending score (at least the single top series).
    pub selected: Vec<usize>,
    /// Position of the elbow in the sorted curve.
    pub elbow_rank: usize,
    pub degenerate: bool,
}

/// Picks the series whose sorted scores sit above the elbow: both axes are
/// normalised to `[0, 1]`, the chord joins the first and last points, and
/// the elbow is the point of maximum perpendicular distance. Series scoring
/// strictly above the elbow score are selected; ties at the elbow score are
/// excluded, and an empty selection falls back to the single top series.
pub fn elbow_select(scores: &[f64]) -> Result<ElbowSelection> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 scores, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| scores[i]).collect();

    let (top, bottom) = (sorted[0], sorted[n - 1]);
    if top == bottom {
        return Ok(ElbowSelection {
            selected: vec![order[0]],
            elbow_rank: 0,
            degenerate: true,
        });
    }

    // Normalised curve: x in [0,1] by rank, y in [0,1] by score; the chord
    // runs from (0, 1) to (1, 0).
    let dist = |rank: usize| -> f64 {
        let x = rank as f64 / (n - 1) as f64;
        let y = (sorted[rank] - bottom) / (top - bottom);
        (x + y - 1.0).abs() / std::f64::consts::SQRT_2
    };
    let elbow_rank = (0..n)
        .max_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap().then(b.cmp(&a)))
        .unwrap();
    let elbow_score = sorted[elbow_rank];

    let selected: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| scores[i] > elbow_score)
        .collect();
    if selected.is_empty() {
        return Ok(ElbowSelection {
            selected: vec![order[0]],
            elbow_rank,
            degenerate: false,
        });
    }
    Ok(ElbowSelection {
        selected,
        elbow_rank,
        degenerate: false,
    })
}

/// Merges flagged steps of a score series into events, bridging gaps of at
/// most `gap_tolerance` steps.
pub fn merge_events(series: &ScoreSeries, gap_tolerance: usize) -> Vec<(usize, usize)> {
    let mut flagged: Vec<usize> = series
        .step_indices
        .iter()
        .zip(&series.flags)
        .filter(|(_, &f)| f)
        .map(|(&s, _)| s)
        .collect();
    flagged.sort_unstable();
    let mut events: Vec<(usize, usize)> = Vec::new();
    for step in flagged {
        match events.last_mut() {
            Some((_, end)) if step <= *end + gap_tolerance + 1 => *end = step,
            _ => events.push((step, step)),
        }
    }
    events
}

/// Attributes every flagged event of `series`: merges contiguous flags
/// (gap tolerance 1), scores each series over the event's records, and
/// applies the elbow selection.
pub fn attribute_events(
    records: &[ResidualRecord],
    series: &ScoreSeries,
    method: RootCauseMethod,
    theta: f64,
) -> Result<Vec<RootCauseResult>> {
    let mut results = Vec::new();
    for (start, end) in merge_events(series, 1) {
        let window: Vec<&ResidualRecord> = records
            .iter()
            .filter(|r| r.step_index >= start && r.step_index <= end)
            .collect();
        if window.is_empty() {
            continue;
        }
        let scores = series_scores(&window, method, theta)?;
        let elbow = elbow_select(&scores)?;
        results.push(RootCauseResult {
            start_step: start,
            end_step: end,
            method,
            scores,
            selected: elbow.selected,
            degenerate: elbow.degenerate,
        });
    }
    Ok(results)
}
