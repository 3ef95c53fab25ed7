//! Residual-based anomaly scores, thresholds, and flagging.
//!
//! A residual entry is a "broken tile" when it exceeds a threshold
//! `theta = beta * eta`, where `eta` is the 99.6th percentile of the training
//! residual errors and `beta` comes from a grid search on a validation set.
//! Scores count broken tiles in different ways; flags compare scores against
//! a separately searched cutoff.

use serde::{Deserialize, Serialize};

use crate::nn::train::ResidualRecord;
use crate::series::AnomalyWindow;
use crate::{Error, Result};

/// Percentile rank used for the threshold base.
pub const ETA_PERCENTILE: f64 = 0.996;

/// How a residual record is collapsed into one anomaly score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    /// Broken tiles of the latent residual vector.
    LatentB,
    /// Broken tiles of the contextual residual matrix.
    ContextB,
    /// Broken tiles in rows that are more than half broken.
    ContextH,
    /// Equal-weight normalised sum of the context and latent scores.
    Combined,
}

impl ScoreMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "latent_b" => Ok(Self::LatentB),
            "context_b" => Ok(Self::ContextB),
            "context_h" => Ok(Self::ContextH),
            "combined" => Ok(Self::Combined),
            other => Err(Error::Argument(format!(
                "unknown scoring method '{other}' (expected latent_b, context_b, \
                 context_h, or combined)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LatentB => "latent_b",
            Self::ContextB => "context_b",
            Self::ContextH => "context_h",
            Self::Combined => "combined",
        }
    }
}

/// Fitted thresholds. `theta_b` and `theta_h` live in contextual-residual
/// units; the latent-space broken-tile threshold is `beta_b * eta996_latent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub theta_b: f64,
    pub theta_h: f64,
    pub beta_b: f64,
    pub beta_h: f64,
    pub eta996_context: f64,
    pub eta996_latent: f64,
    /// Score cutoff: a step is flagged when its score exceeds this.
    pub flag_threshold: f64,
    /// Largest context score seen on training residuals (combined-score
    /// normaliser).
    pub max_train_context: f64,
    /// Largest latent score seen on training residuals.
    pub max_train_latent: f64,
}

impl ThresholdSet {
    pub fn theta_latent(&self) -> f64 {
        self.beta_b * self.eta996_latent
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_h > self.theta_b {
            return Err(Error::Argument(format!(
                "theta_h {} must not exceed theta_b {}",
                self.theta_h, self.theta_b
            )));
        }
        for (name, v) in [
            ("theta_b", self.theta_b),
            ("theta_h", self.theta_h),
            ("flag_threshold", self.flag_threshold),
        ] {
            if v < 0.0 {
                return Err(Error::Argument(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Nearest-rank percentile of an unsorted sample; `q` in (0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Scores one residual record.
pub fn score_step(record: &ResidualRecord, method: ScoreMethod, thresholds: &ThresholdSet) -> f64 {
    match method {
        ScoreMethod::LatentB => latent_b(record, thresholds.theta_latent()),
        ScoreMethod::ContextB => context_b(record, thresholds.theta_b),
        ScoreMethod::ContextH => context_h(record, thresholds.theta_h),
        ScoreMethod::Combined => {
            let ch = context_h(record, thresholds.theta_h);
            let lb = latent_b(record, thresholds.theta_latent());
            let cnorm = if thresholds.max_train_context > 0.0 {
                thresholds.max_train_context
            } else {
                1.0
            };
            let lnorm = if thresholds.max_train_latent > 0.0 {
                thresholds.max_train_latent
            } else {
                1.0
            };
            0.5 * ch / cnorm + 0.5 * lb / lnorm
        }
    }
}

fn latent_b(record: &ResidualRecord, theta: f64) -> f64 {
    record.latent.iter().filter(|&&v| v > theta).count() as f64
}

fn context_b(record: &ResidualRecord, theta: f64) -> f64 {
    record.contextual.iter().filter(|&&v| v > theta).count() as f64
}

/// Counts broken tiles only in rows with more than `floor(n/2)` broken
/// tiles; diagonal tiles count. Rows suffice because the underlying
/// matrices are symmetric in expectation.
fn context_h(record: &ResidualRecord, theta: f64) -> f64 {
    let n = record.contextual.nrows();
    let mut total = 0usize;
    for row in record.contextual.rows() {
        let broken = row.iter().filter(|&&v| v > theta).count();
        if broken > n / 2 {
            total += broken;
        }
    }
    total as f64
}

/// Per-step scores, flags, and the thresholds that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub method: ScoreMethod,
    pub step_indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
    pub thresholds: ThresholdSet,
}

impl ScoreSeries {
    /// Expands flagged steps onto raw time points: step `k` covers
    /// `[k * step_size, (k + 1) * step_size)`.
    pub fn expand_to_points(&self, step_size: usize, t_len: usize) -> Vec<bool> {
        let mut flags = vec![false; t_len];
        for (&step, &flag) in self.step_indices.iter().zip(&self.flags) {
            if !flag {
                continue;
            }
            for t in step * step_size..((step + 1) * step_size).min(t_len) {
                flags[t] = true;
            }
        }
        flags
    }
}

/// Applies `score_step` over ordered records and flags scores strictly above
/// the fitted cutoff.
pub fn score_series(
    records: &[ResidualRecord],
    method: ScoreMethod,
    thresholds: &ThresholdSet,
) -> ScoreSeries {
    let scores: Vec<f64> = records
        .iter()
        .map(|r| score_step(r, method, thresholds))
        .collect();
    let flags: Vec<bool> = scores
        .iter()
        .map(|&s| s > thresholds.flag_threshold)
        .collect();
    ScoreSeries {
        method,
        step_indices: records.iter().map(|r| r.step_index).collect(),
        scores,
        flags,
        thresholds: thresholds.clone(),
    }
}

/// A held-out slice of the training residuals with its labels, used to fit
/// `beta` and the flag cutoff. Step indices and labels stay in the
/// coordinates of the half they came from; `span` bounds the raw points the
/// search evaluates.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub records: Vec<ResidualRecord>,
    pub labels: Vec<AnomalyWindow>,
    /// Raw-point span `[start, end)` covered by the validation slice.
    pub span: (usize, usize),
    pub step_size: usize,
}

/// Splits training residuals into a fitting part and a trailing validation
/// part covering the last `fraction` of the raw span, clipping `labels` to
/// the validation span.
pub fn validation_split(
    records: &[ResidualRecord],
    labels: &[AnomalyWindow],
    fraction: f64,
    step_size: usize,
    t_len: usize,
) -> (Vec<ResidualRecord>, ValidationSet) {
    let val_start = ((1.0 - fraction) * t_len as f64).floor() as usize;
    let mut fit_part = Vec::new();
    let mut val_records = Vec::new();
    for r in records {
        if r.step_index * step_size >= val_start {
            val_records.push(r.clone());
        } else {
            fit_part.push(r.clone());
        }
    }
    let val_labels: Vec<AnomalyWindow> = labels
        .iter()
        .filter(|w| w.end >= val_start)
        .map(|w| AnomalyWindow::new(w.start.max(val_start), w.end, w.root_causes.clone()))
        .collect();
    (
        fit_part,
        ValidationSet {
            records: val_records,
            labels: val_labels,
            span: (val_start, t_len),
            step_size,
        },
    )
}

fn f1_on_validation(series: &ScoreSeries, validation: &ValidationSet) -> f64 {
    let (start, end) = validation.span;
    let flags = series.expand_to_points(validation.step_size, end);
    let mut truth = vec![false; end];
    for w in &validation.labels {
        for t in w.start..=w.end.min(end - 1) {
            truth[t] = true;
        }
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for t in start..end {
        match (flags[t], truth[t]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Fits thresholds from training residuals.
///
/// `eta` is the 99.6th percentile of all elementwise training errors,
/// context and latent separately. When the validation set carries labels,
/// `beta_b`, `beta_h <= beta_b`, and the flag cutoff are grid-searched to
/// maximise point-level F1 on the validation span (ties prefer the smaller
/// value); otherwise both betas default to one and the cutoff to the largest
/// validation score, with a warning.
pub fn fit_thresholds(
    train: &[ResidualRecord],
    validation: &ValidationSet,
    beta_grid: &[f64],
    method: ScoreMethod,
) -> Result<(ThresholdSet, Vec<String>)> {
    if train.is_empty() {
        return Err(Error::Argument("no training residuals".into()));
    }
    if beta_grid.is_empty() {
        return Err(Error::Argument("empty beta grid".into()));
    }
    let mut context_errors = Vec::new();
    let mut latent_errors = Vec::new();
    for r in train {
        context_errors.extend(r.contextual.iter().copied());
        latent_errors.extend(r.latent.iter().copied());
    }
    let eta996_context = percentile(&context_errors, ETA_PERCENTILE);
    let eta996_latent = percentile(&latent_errors, ETA_PERCENTILE);

    let base = |beta_b: f64, beta_h: f64| ThresholdSet {
        theta_b: beta_b * eta996_context,
        theta_h: beta_h * eta996_context,
        beta_b,
        beta_h,
        eta996_context,
        eta996_latent,
        flag_threshold: 0.0,
        max_train_context: 0.0,
        max_train_latent: 0.0,
    };

    let mut warnings = Vec::new();
    let mut chosen = if validation.labels.is_empty() {
        warnings.push(
            "validation span has no labels; beta defaults to 1 and the flag cutoff \
             to the largest validation score"
                .to_string(),
        );
        let mut t = base(1.0, 1.0);
        t.flag_threshold = validation
            .records
            .iter()
            .map(|r| score_step(r, method, &t))
            .fold(0.0, f64::max);
        t
    } else {
        let mut best: Option<(f64, f64, f64, f64)> = None; // f1, beta_b, beta_h, flag
        let mut sorted_grid = beta_grid.to_vec();
        sorted_grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &beta_b in &sorted_grid {
            for &beta_h in sorted_grid.iter().filter(|&&b| b <= beta_b) {
                let t = base(beta_b, beta_h);
                let series = score_series(&validation.records, method, &t);
                let mut cutoffs: Vec<f64> = vec![0.0];
                cutoffs.extend(series.scores.iter().copied());
                cutoffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                cutoffs.dedup();
                for &cutoff in &cutoffs {
                    let mut tt = t.clone();
                    tt.flag_threshold = cutoff;
                    let flagged = score_series(&validation.records, method, &tt);
                    let f1 = f1_on_validation(&flagged, validation);
                    let better = match best {
                        None => true,
                        Some((bf1, ..)) => f1 > bf1 + 1e-12,
                    };
                    if better {
                        best = Some((f1, beta_b, beta_h, cutoff));
                    }
                }
            }
        }
        let (_, beta_b, beta_h, cutoff) = best.unwrap();
        let mut t = base(beta_b, beta_h);
        t.flag_threshold = cutoff;
        t
    };

    // Combined-score normalisers from the training residuals.
    chosen.max_train_context = train
        .iter()
        .map(|r| context_h(r, chosen.theta_h))
        .fold(0.0, f64::max);
    chosen.max_train_latent = train
        .iter()
        .map(|r| latent_b(r, chosen.theta_latent()))
        .fold(0.0, f64::max);
    chosen.validate()?;
    Ok((chosen, warnings))
}
