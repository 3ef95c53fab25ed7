//! Seasonal synthetic series generation and labelled anomaly injection.

use std::collections::BTreeSet;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Weekday};
use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::series::{AnomalyWindow, HolidayCalendar, Mts};
use crate::{Error, Result};

/// Parameters of one sinusoidal wave: `sin[(t - t0)/F] + noise_scale * e_t`,
/// with the cosine form when `cosine` is set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaveSpec {
    /// Use the cosine form instead of the sine form.
    pub cosine: bool,
    /// Phase shift in samples, drawn from [10, 100] for generated series.
    pub t0: f64,
    /// Periodicity divisor; the wave repeats every `2*pi*F` samples.
    pub period_scale: f64,
    /// Standard-normal noise multiplier.
    pub noise_scale: f64,
    pub seed: u64,
}

impl WaveSpec {
    fn validate(&self) -> Result<()> {
        if self.period_scale <= 0.0 {
            return Err(Error::Argument("period_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Periodicity divisor whose wave repeats every `period` samples.
pub fn period_scale_for(period: f64) -> f64 {
    period / std::f64::consts::TAU
}

/// Generates one wave of length `t_len` from `spec`.
pub fn gen_wave(t_len: usize, spec: &WaveSpec) -> Result<Vec<f64>> {
    if t_len == 0 {
        return Err(Error::Argument("wave length must be at least 1".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..t_len)
        .map(|t| {
            let arg = (t as f64 - spec.t0) / spec.period_scale;
            let base = if spec.cosine { arg.cos() } else { arg.sin() };
            let noise: f64 = rng.sample(StandardNormal);
            base + spec.noise_scale * noise
        })
        .collect())
}

/// Which seasonal components the generated series carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeasonalityMode {
    /// Random-period waves only (minutely sampling).
    Random,
    /// Random wave plus a daily component (minutely sampling).
    Daily,
    /// Random wave plus daily and weekly components (minutely sampling).
    DailyWeekly,
    /// Random wave plus weekly and monthly components with additive US-holiday
    /// patterns, emitted as 3 years of hourly data.
    WeeklyMonthlyHoliday,
}

impl SeasonalityMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "daily" => Ok(Self::Daily),
            "daily+weekly" => Ok(Self::DailyWeekly),
            "weekly+monthly+holiday" => Ok(Self::WeeklyMonthlyHoliday),
            other => Err(Error::Argument(format!(
                "unknown seasonality mode '{other}' (expected random, daily, \
                 daily+weekly, or weekly+monthly+holiday)"
            ))),
        }
    }
}

const MINUTES_PER_DAY: f64 = 60.0 * 24.0;
const MINUTES_PER_WEEK: f64 = MINUTES_PER_DAY * 7.0;
const HOURS_PER_WEEK: f64 = 24.0 * 7.0;
const HOURS_PER_MONTH: f64 = 365.0 * 24.0 / 12.0;
/// Level shift added to every series on holiday steps (twice the unit
/// amplitude of a seasonal component).
pub const HOLIDAY_SHIFT: f64 = 2.0;

/// Generates `n` synthetic series of length `t_len` with the seasonal
/// components of `mode` and noise scale 0.3. See [`gen_seasonal_mts_with`].
pub fn gen_seasonal_mts(
    n: usize,
    t_len: usize,
    mode: SeasonalityMode,
    seed: u64,
) -> Result<(Mts, HolidayCalendar)> {
    gen_seasonal_mts_with(n, t_len, mode, seed, 0.3)
}

/// Generates `n` synthetic series with an explicit noise scale.
///
/// Every series is the sum of a random-period wave (`F` in [60, 100]) and the
/// seasonal components selected by `mode`; each component carries its own
/// random phase, sine/cosine shape, and noise draws. The holiday mode ignores
/// `t_len` and emits 3 years of hourly data starting 2017-01-01, adding
/// [`HOLIDAY_SHIFT`] to every series on US-holiday steps and returning a
/// calendar that flags them; other modes are minutely and return an all-clear
/// calendar.
pub fn gen_seasonal_mts_with(
    n: usize,
    t_len: usize,
    mode: SeasonalityMode,
    seed: u64,
    noise_scale: f64,
) -> Result<(Mts, HolidayCalendar)> {
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 series, got {n}")));
    }
    let start = NaiveDate::from_ymd_opt(2021, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let (t_len, interval, start) = match mode {
        SeasonalityMode::WeeklyMonthlyHoliday => (
            3 * 365 * 24,
            Duration::hours(1),
            NaiveDate::from_ymd_opt(2017, 1, 1)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
        ),
        _ => (t_len, Duration::minutes(1), start),
    };
    if t_len == 0 {
        return Err(Error::Argument("series length must be at least 1".into()));
    }

    let component_periods: Vec<f64> = match mode {
        SeasonalityMode::Random => vec![],
        SeasonalityMode::Daily => vec![MINUTES_PER_DAY],
        SeasonalityMode::DailyWeekly => vec![MINUTES_PER_DAY, MINUTES_PER_WEEK],
        SeasonalityMode::WeeklyMonthlyHoliday => vec![HOURS_PER_WEEK, HOURS_PER_MONTH],
    };

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Array2::zeros((n, t_len));
    for i in 0..n {
        let mut acc = vec![0.0; t_len];
        // Random-period component: F uniform in [60, 100].
        let specs = std::iter::once(master.random_range(60.0..=100.0))
            .chain(component_periods.iter().map(|&p| period_scale_for(p)));
        for period_scale in specs {
            let spec = WaveSpec {
                cosine: master.random_bool(0.5),
                t0: master.random_range(10.0..=100.0),
                period_scale,
                noise_scale,
                seed: master.random(),
            };
            for (t, v) in gen_wave(t_len, &spec)?.into_iter().enumerate() {
                acc[t] += v;
            }
        }
        for (t, v) in acc.into_iter().enumerate() {
            values[[i, t]] = v;
        }
    }

    let calendar = match mode {
        SeasonalityMode::WeeklyMonthlyHoliday => {
            let flags = holiday_flags(start, t_len);
            for t in 0..t_len {
                if flags[t] {
                    for i in 0..n {
                        values[[i, t]] += HOLIDAY_SHIFT;
                    }
                }
            }
            HolidayCalendar::new(flags)
        }
        _ => HolidayCalendar::none(t_len),
    };

    let names = (0..n).map(|i| format!("series_{i}")).collect();
    Ok((Mts::new(values, start, interval, names)?, calendar))
}

fn nth_weekday(year: i32, month: u32, weekday: Weekday, nth: u32) -> NaiveDate {
    let first = NaiveDate::from_ymd_opt(year, month, 1).unwrap();
    let offset = (7 + weekday.num_days_from_monday() - first.weekday().num_days_from_monday()) % 7;
    first + Duration::days((offset + 7 * (nth - 1)) as i64)
}

fn last_weekday(year: i32, month: u32, weekday: Weekday) -> NaiveDate {
    let next_month = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1).unwrap()
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1).unwrap()
    };
    let mut d = next_month - Duration::days(1);
    while d.weekday() != weekday {
        d -= Duration::days(1);
    }
    d
}

/// The built-in US-holiday table for `year`: New Year's Day, MLK Day,
/// Presidents Day, Memorial Day, Independence Day, Labor Day, Thanksgiving,
/// and Christmas (actual dates, not observed shifts).
pub fn us_holidays(year: i32) -> Vec<NaiveDate> {
    vec![
        NaiveDate::from_ymd_opt(year, 1, 1).unwrap(),
        nth_weekday(year, 1, Weekday::Mon, 3),
        nth_weekday(year, 2, Weekday::Mon, 3),
        last_weekday(year, 5, Weekday::Mon),
        NaiveDate::from_ymd_opt(year, 7, 4).unwrap(),
        nth_weekday(year, 9, Weekday::Mon, 1),
        nth_weekday(year, 11, Weekday::Thu, 4),
        NaiveDate::from_ymd_opt(year, 12, 25).unwrap(),
    ]
}

fn holiday_flags(start: NaiveDateTime, t_len: usize) -> Vec<bool> {
    let end = start + Duration::hours(t_len as i64);
    let mut holidays = BTreeSet::new();
    for year in start.year()..=end.year() {
        for d in us_holidays(year) {
            holidays.insert(d);
        }
    }
    (0..t_len)
        .map(|t| holidays.contains(&(start + Duration::hours(t as i64)).date()))
        .collect()
}

/// Parameters for labelled shock injection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InjectionSpec {
    /// Number of anomalies to place.
    pub count: usize,
    /// Inclusive duration range in samples.
    pub duration_range: (usize, usize),
    /// Inclusive range for the number of shocked series per anomaly.
    pub root_cause_range: (usize, usize),
    /// Shock magnitude as a multiple of each shocked series' standard
    /// deviation over the input span.
    pub magnitude_scale: f64,
    /// Ramp the shock linearly over the window instead of a constant offset.
    pub ramp: bool,
    pub seed: u64,
}

impl InjectionSpec {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            duration_range: (5, 60),
            root_cause_range: (2, 6),
            magnitude_scale: 1.5,
            ramp: false,
            seed,
        }
    }
}

/// Adds `spec.count` non-overlapping constant (or ramped) shocks to randomly
/// chosen series and returns the modified copy with exact labels. Values
/// outside the injected windows are untouched. Each anomaly draws a uniform
/// duration, a direction, and `k` root-cause series within
/// `spec.root_cause_range` (clamped to `n - 1`).
pub fn inject_anomalies(mts: &Mts, spec: &InjectionSpec) -> Result<(Mts, Vec<AnomalyWindow>)> {
    let t_len = mts.t_len();
    let n = mts.n();
    if spec.count == 0 {
        return Ok((mts.clone(), Vec::new()));
    }
    if t_len <= 60 {
        return Err(Error::Argument(format!(
            "need more than 60 samples to inject anomalies, got {t_len}"
        )));
    }
    let (dmin, dmax) = spec.duration_range;
    if dmin == 0 || dmin > dmax || dmax >= t_len {
        return Err(Error::Argument(format!(
            "invalid duration range [{dmin}, {dmax}] for T={t_len}"
        )));
    }
    let kmin = spec.root_cause_range.0.max(1);
    let kmax = spec.root_cause_range.1.min(n.saturating_sub(1)).max(kmin);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let stds: Vec<f64> = (0..n)
        .map(|i| {
            let row = mts.values().row(i);
            let mean = row.mean().unwrap();
            (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t_len as f64).sqrt()
        })
        .collect();

    let mut windows: Vec<AnomalyWindow> = Vec::with_capacity(spec.count);
    let max_attempts = 1000 * spec.count;
    let mut attempts = 0;
    while windows.len() < spec.count {
        if attempts >= max_attempts {
            return Err(Error::Placement(format!(
                "placed only {} of {} non-overlapping windows after {} attempts",
                windows.len(),
                spec.count,
                attempts
            )));
        }
        attempts += 1;
        let duration = rng.random_range(dmin..=dmax);
        let start = rng.random_range(0..=t_len - duration);
        let end = start + duration - 1;
        if windows.iter().any(|w| start <= w.end && end >= w.start) {
            continue;
        }
        let k = rng.random_range(kmin..=kmax);
        let causes: BTreeSet<usize> = rand::seq::index::sample(&mut rng, n, k)
            .into_iter()
            .collect();
        windows.push(AnomalyWindow::new(start, end, causes));
    }
    windows.sort_by_key(|w| w.start);

    let mut values = mts.values().clone();
    for w in &windows {
        let direction = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        for &series in &w.root_causes {
            let magnitude = direction * spec.magnitude_scale * stds[series];
            for t in w.start..=w.end {
                let shock = if spec.ramp {
                    magnitude * (t - w.start + 1) as f64 / w.len() as f64
                } else {
                    magnitude
                };
                values[[series, t]] += shock;
            }
        }
    }
    let shocked = Mts::new(
        values,
        mts.start_time(),
        mts.sample_interval(),
        mts.series_names().to_vec(),
    )?;
    Ok((shocked, windows))
}
