//! Correlation-matrix tensors and model-sample assembly.
//!
//! A raw `n x T` series is summarised once per `step_size` samples as a stack
//! of `n x n` windowed inner-product matrices, one channel per window length.
//! Model samples then bundle the current step with recent history, smoothed
//! seasonal lookbacks, and per-step holiday bits.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::series::{HolidayCalendar, Mts};
use crate::{Error, Result};

/// Windowing parameters for [`compute_mcm`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct McmConfig {
    /// Window lengths, one correlation channel each.
    pub windows: Vec<usize>,
    /// Samples between consecutive steps.
    pub step_size: usize,
    /// Sum `w + 1` terms (lags 0..=w) while dividing by `w`, as the defining
    /// formula is written. Set false to sum exactly `w` terms instead.
    pub inclusive_window: bool,
}

impl Default for McmConfig {
    fn default() -> Self {
        Self {
            windows: vec![5, 10, 30],
            step_size: 5,
            inclusive_window: true,
        }
    }
}

impl McmConfig {
    /// Largest lag a window reaches behind a step endpoint.
    fn max_lag(&self) -> usize {
        let w = *self.windows.iter().max().unwrap_or(&0);
        if self.inclusive_window {
            w
        } else {
            w.saturating_sub(1)
        }
    }
}

/// A sequence of multi-channel correlation matrices.
///
/// `data[m, k, i, j]` is the channel-`k` inner product of series `i` and `j`
/// at kept step `m`. Every channel matrix is symmetric. Steps whose largest
/// window would cross the series start are dropped; `first_step` records the
/// global index of the first kept step so raw-time alignment survives.
#[derive(Debug, Clone, PartialEq)]
pub struct McmTensor {
    data: Array4<f64>,
    step_size: usize,
    windows: Vec<usize>,
    inclusive_window: bool,
    first_step: usize,
}

impl McmTensor {
    /// Number of kept steps.
    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Channels (one per window).
    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    /// Series count.
    pub fn n(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn step_size(&self) -> usize {
        self.step_size
    }

    pub fn windows(&self) -> &[usize] {
        &self.windows
    }

    /// Global index of the first kept step.
    pub fn first_step(&self) -> usize {
        self.first_step
    }

    /// Global step index of kept step `m`.
    pub fn global_step(&self, m: usize) -> usize {
        self.first_step + m
    }

    /// Raw-sample index of the endpoint of global step `k`.
    pub fn endpoint(&self, global_step: usize) -> usize {
        self.step_size * (global_step + 1) - 1
    }

    /// The `c x n x n` matrix stack at kept step `m`.
    pub fn step(&self, m: usize) -> Array3<f64> {
        self.data.index_axis(ndarray::Axis(0), m).to_owned()
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }
}

/// Computes the correlation-matrix sequence of `mts`.
///
/// For each kept step with endpoint `e` and each window `w`, entry `(i, j)`
/// is `sum_d x_i[e-d] * x_j[e-d] / w` with `d` ranging over the configured
/// lag set of `w`.
pub fn compute_mcm(mts: &Mts, config: &McmConfig) -> Result<McmTensor> {
    if config.windows.is_empty() {
        return Err(Error::Argument("at least one window required".into()));
    }
    if config.step_size == 0 {
        return Err(Error::Argument("step size must be positive".into()));
    }
    if config.windows.iter().any(|&w| w == 0) {
        return Err(Error::Argument("windows must be positive".into()));
    }
    let t_len = mts.t_len();
    let max_w = *config.windows.iter().max().unwrap();
    if t_len < max_w {
        return Err(Error::InsufficientData(format!(
            "T={t_len} is shorter than the largest window {max_w}"
        )));
    }
    let n = mts.n();
    let c = config.windows.len();
    let s_s = config.step_size;
    let max_lag = config.max_lag();
    let total_steps = t_len / s_s;
    // First step whose endpoint reaches back max_lag without crossing the start.
    let first_step = (0..total_steps)
        .find(|&k| s_s * (k + 1) - 1 >= max_lag)
        .ok_or_else(|| {
            Error::InsufficientData(format!(
                "no step endpoint reaches lag {max_lag} within T={t_len}"
            ))
        })?;
    let kept = total_steps - first_step;

    let x = mts.values();
    let mut data = Array4::zeros((kept, c, n, n));
    for m in 0..kept {
        let endpoint = s_s * (first_step + m + 1) - 1;
        for (ch, &w) in config.windows.iter().enumerate() {
            let lags = if config.inclusive_window { w + 1 } else { w };
            for i in 0..n {
                for j in i..n {
                    let mut acc = 0.0;
                    for d in 0..lags {
                        let t = endpoint - d;
                        acc += x[[i, t]] * x[[j, t]];
                    }
                    let v = acc / w as f64;
                    data[[m, ch, i, j]] = v;
                    data[[m, ch, j, i]] = v;
                }
            }
        }
    }
    Ok(McmTensor {
        data,
        step_size: s_s,
        windows: config.windows.clone(),
        inclusive_window: config.inclusive_window,
        first_step,
    })
}

/// One seasonal lookback pattern: `count` steps spaced `period` raw samples
/// apart (e.g. the same time on previous days).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeasonalPattern {
    /// Seasonal period in raw samples.
    pub period: usize,
    /// How many previous periods to stack.
    pub count: usize,
}

/// Seasonal stacking configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SeasonalConfig {
    pub patterns: Vec<SeasonalPattern>,
    /// Full width, in raw samples, of the symmetric smoothing window around
    /// each seasonal step (30 samples = 30 minutes at minutely sampling).
    pub smoothing_window: usize,
}

impl SeasonalConfig {
    pub fn new(patterns: Vec<SeasonalPattern>, smoothing_window: usize) -> Self {
        Self {
            patterns,
            smoothing_window,
        }
    }

    fn validate(&self, step_size: usize) -> Result<()> {
        for p in &self.patterns {
            if p.period <= step_size {
                return Err(Error::Argument(format!(
                    "seasonal period {} must exceed the step size {step_size}",
                    p.period
                )));
            }
        }
        Ok(())
    }

    /// Total stacked seasonal steps.
    pub fn total_count(&self) -> usize {
        self.patterns.iter().map(|p| p.count).sum()
    }
}

/// One training or testing unit: the current correlation-matrix step plus
/// recent history, smoothed seasonal lookbacks, and per-step holiday bits.
///
/// The stacked temporal order is seasonal steps (most distant first), then
/// history (oldest first), then the current step. `holiday_bits` follows the
/// same order; a bit is `false` when the source time of that stacked step is
/// flagged in the calendar, and the current step's bit is always `true`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSample {
    pub current: Array3<f64>,
    pub history: Vec<Array3<f64>>,
    pub seasonal: Vec<Array3<f64>>,
    pub holiday_bits: Vec<bool>,
    pub step_index: usize,
}

impl ModelSample {
    /// Stacked steps in temporal processing order: seasonal, history, current.
    pub fn stacked(&self) -> impl Iterator<Item = &Array3<f64>> {
        self.seasonal
            .iter()
            .chain(self.history.iter())
            .chain(std::iter::once(&self.current))
    }

    /// Number of stacked steps (`h + sum(m_i) + 1`).
    pub fn stacked_len(&self) -> usize {
        self.seasonal.len() + self.history.len() + 1
    }
}

/// Assembles model samples from a correlation tensor.
///
/// For each emitted step the history holds the `h` immediately preceding
/// steps, and each seasonal slot `j = count..1` of a pattern with period `P`
/// averages the kept steps whose endpoints fall inside the smoothing window
/// centred `j * P` samples back. Steps without full history or whose
/// seasonal centres precede the tensor are skipped.
pub fn build_samples(
    mcm: &McmTensor,
    h: usize,
    seasonal: &SeasonalConfig,
    calendar: &HolidayCalendar,
) -> Result<Vec<ModelSample>> {
    seasonal.validate(mcm.step_size())?;
    let half = seasonal.smoothing_window / 2;
    let first_endpoint = mcm.endpoint(mcm.first_step());
    let max_lag = if mcm.inclusive_window {
        *mcm.windows.iter().max().unwrap()
    } else {
        mcm.windows.iter().max().unwrap().saturating_sub(1)
    };

    // A step is holiday-flagged when any raw sample inside its largest
    // window is flagged.
    let step_flagged = |m: usize| -> bool {
        let e = mcm.endpoint(mcm.global_step(m));
        (e - max_lag..=e).any(|t| calendar.is_flagged(t))
    };

    let mut samples = Vec::new();
    for m in 0..mcm.len() {
        if m < h {
            continue;
        }
        let endpoint = mcm.endpoint(mcm.global_step(m));

        // Seasonal slots, most distant period first within each pattern,
        // patterns in declaration order.
        let mut seasonal_mats = Vec::with_capacity(seasonal.total_count());
        let mut seasonal_bits = Vec::with_capacity(seasonal.total_count());
        let mut feasible = true;
        'patterns: for pattern in &seasonal.patterns {
            for j in (1..=pattern.count).rev() {
                let back = j * pattern.period;
                if back + first_endpoint > endpoint {
                    feasible = false;
                    break 'patterns;
                }
                let target = endpoint - back;
                let lo = target.saturating_sub(half).max(first_endpoint);
                let hi = target + half;
                // Kept steps with endpoints in [lo, hi].
                let m_lo = (lo + 1).div_ceil(mcm.step_size()).max(mcm.first_step() + 1);
                let m_hi = (hi + 1) / mcm.step_size();
                let lo_idx = m_lo - 1 - mcm.first_step();
                let hi_idx = (m_hi.saturating_sub(1)).saturating_sub(mcm.first_step());
                if m_hi < m_lo {
                    feasible = false;
                    break 'patterns;
                }
                let count = hi_idx - lo_idx + 1;
                let mut acc = mcm.step(lo_idx);
                for s in lo_idx + 1..=hi_idx {
                    acc += &mcm.data.index_axis(ndarray::Axis(0), s);
                }
                acc.mapv_inplace(|v| v / count as f64);
                seasonal_mats.push(acc);
                seasonal_bits.push(!(lo_idx..=hi_idx).any(step_flagged));
            }
        }
        if !feasible {
            continue;
        }

        let history: Vec<Array3<f64>> = (m - h..m).map(|s| mcm.step(s)).collect();
        let history_bits: Vec<bool> = (m - h..m).map(|s| !step_flagged(s)).collect();

        let mut holiday_bits = seasonal_bits;
        holiday_bits.extend(history_bits);
        holiday_bits.push(true); // current step is never masked

        samples.push(ModelSample {
            current: mcm.step(m),
            history,
            seasonal: seasonal_mats,
            holiday_bits,
            step_index: mcm.global_step(m),
        });
    }
    Ok(samples)
}

const CACHE_MAGIC: &[u8; 4] = b"MCM\0";
const CACHE_VERSION: u8 = 1;

impl McmTensor {
    /// Writes the tensor in the documented binary layout: magic `MCM\0`, a
    /// version byte, little-endian `u64` header fields (steps, channels, n,
    /// step_size, first_step, window count), the window lengths, an
    /// inclusive-window flag byte, and the row-major `f64` payload.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(CACHE_MAGIC)?;
        f.write_all(&[CACHE_VERSION])?;
        for v in [
            self.len() as u64,
            self.channels() as u64,
            self.n() as u64,
            self.step_size as u64,
            self.first_step as u64,
            self.windows.len() as u64,
        ] {
            f.write_all(&v.to_le_bytes())?;
        }
        for &w in &self.windows {
            f.write_all(&(w as u64).to_le_bytes())?;
        }
        f.write_all(&[self.inclusive_window as u8])?;
        for v in self.data.iter() {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("not a correlation-tensor cache file".into()));
        }
        let mut version = [0u8; 1];
        f.read_exact(&mut version)?;
        if version[0] != CACHE_VERSION {
            return Err(Error::Format(format!(
                "unsupported cache version {}",
                version[0]
            )));
        }
        let mut u64_field = || -> Result<u64> {
            let mut buf = [0u8; 8];
            f.read_exact(&mut buf)?;
            Ok(u64::from_le_bytes(buf))
        };
        let steps = u64_field()? as usize;
        let channels = u64_field()? as usize;
        let n = u64_field()? as usize;
        let step_size = u64_field()? as usize;
        let first_step = u64_field()? as usize;
        let w_count = u64_field()? as usize;
        let mut windows = Vec::with_capacity(w_count);
        for _ in 0..w_count {
            windows.push(u64_field()? as usize);
        }
        if w_count != channels {
            return Err(Error::Format("window count does not match channels".into()));
        }
        let mut flag = [0u8; 1];
        f.read_exact(&mut flag)?;
        let mut payload = vec![0.0f64; steps * channels * n * n];
        let mut buf = [0u8; 8];
        for v in payload.iter_mut() {
            f.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let data = Array4::from_shape_vec((steps, channels, n, n), payload)
            .map_err(|e| Error::Format(format!("bad cache payload shape: {e}")))?;
        Ok(Self {
            data,
            step_size,
            windows,
            inclusive_window: flag[0] != 0,
            first_step,
        })
    }
}
