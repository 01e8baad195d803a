//! Trace ingestion, per-hour empirical distributions and synthetic
//! generators.
//!
//! CSV formats (comma-separated, header required, `.` decimal separator):
//!
//! * prices: `timestamp,price_ct_per_kwh`, one row per hour;
//! * demand: `timestamp,demand_kwh`, any fixed sub-hourly cadence,
//!   aggregated here to hourly totals.
//!
//! Timestamps are civil local time (`2011-01-01T13:00:00`); no time-zone
//! arithmetic is performed and irregular cadences are rejected.

use std::path::Path;

use chrono::{Duration, NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::mdp::{cell_index, PROB_TOL};
use crate::Result;

/// Rounding steps applied to ingested values: prices snap to multiples of
/// `price_step` (5 ct by convention), demands to multiples of `demand_step`
/// (the battery grid step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSteps {
    pub price_step: f64,
    pub demand_step: f64,
}

impl Default for GridSteps {
    fn default() -> Self {
        GridSteps {
            price_step: 5.0,
            demand_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Price,
    Demand,
}

/// How to treat missing hours in price traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillRule {
    /// Reject traces with gaps.
    #[default]
    Error,
    /// Repeat the previous hour's value across the gap.
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub timestamp: NaiveDateTime,
    pub value: f64,
}

/// A time-ordered, gap-free, hourly series of grid-aligned values.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.value)
    }

    /// Hour of day (0..=23) of each record.
    pub fn hours(&self) -> impl Iterator<Item = u32> + '_ {
        self.records.iter().map(|r| r.timestamp.hour())
    }

    /// Split into the first `days` whole days and the rest.
    pub fn split_at_day(&self, days: usize) -> (Trace, Trace) {
        let cut = days * 24;
        let cut = cut.min(self.records.len());
        (
            Trace {
                records: self.records[..cut].to_vec(),
            },
            Trace {
                records: self.records[cut..].to_vec(),
            },
        )
    }

    fn check_hourly_contiguous(&self) -> Result<()> {
        for (i, pair) in self.records.windows(2).enumerate() {
            if pair[1].timestamp - pair[0].timestamp != Duration::hours(1) {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: format!(
                        "expected hourly cadence, got {} after {}",
                        pair[1].timestamp, pair[0].timestamp
                    ),
                });
            }
        }
        Ok(())
    }
}

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];

fn parse_timestamp(raw: &str, line: usize) -> Result<NaiveDateTime> {
    for format in TIMESTAMP_FORMATS {
        if let Ok(ts) = NaiveDateTime::parse_from_str(raw, format) {
            return Ok(ts);
        }
    }
    Err(Error::Parse {
        line,
        msg: format!("unrecognized timestamp '{raw}'"),
    })
}

/// Load a CSV trace, snap values to the grid and (for demand) aggregate to
/// hourly totals. Returns the trace and the number of values clamped up to
/// zero.
pub fn load_trace(
    path: &Path,
    kind: TraceKind,
    steps: &GridSteps,
    fill: FillRule,
) -> Result<(Trace, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let expected_value_column = match kind {
        TraceKind::Price => "price_ct_per_kwh",
        TraceKind::Demand => "demand_kwh",
    };
    {
        let headers = reader.headers()?;
        if headers.len() < 2 || &headers[0] != "timestamp" || &headers[1] != expected_value_column {
            return Err(Error::Parse {
                line: 1,
                msg: format!(
                    "expected header 'timestamp,{expected_value_column}', got '{}'",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
    }

    let mut raw = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 2 columns, got {}", record.len()),
            });
        }
        let timestamp = parse_timestamp(&record[0], line)?;
        let value: f64 = record[1].parse().map_err(|e| Error::Parse {
            line,
            msg: format!("bad value '{}': {e}", &record[1]),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("non-finite value {value}"),
            });
        }
        raw.push((timestamp, value, line));
    }
    if raw.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "trace has no rows".into(),
        });
    }
    for pair in raw.windows(2) {
        if pair[1].0 <= pair[0].0 {
            return Err(Error::Parse {
                line: pair[1].2,
                msg: format!("timestamps not strictly increasing at {}", pair[1].0),
            });
        }
    }

    match kind {
        TraceKind::Price => load_price(raw, steps, fill),
        TraceKind::Demand => load_demand(raw, steps),
    }
}

fn load_price(
    raw: Vec<(NaiveDateTime, f64, usize)>,
    steps: &GridSteps,
    fill: FillRule,
) -> Result<(Trace, usize)> {
    let mut clamped = 0usize;
    let mut records: Vec<TraceRecord> = Vec::with_capacity(raw.len());
    for (timestamp, value, line) in raw {
        if timestamp.minute() != 0 || timestamp.second() != 0 {
            return Err(Error::Parse {
                line,
                msg: format!("price timestamps must be on the hour, got {timestamp}"),
            });
        }
        let mut value = value;
        if value < 0.0 {
            value = 0.0;
            clamped += 1;
        }
        let value = crate::mdp::snap_to_step(value, steps.price_step);
        if let Some(prev) = records.last() {
            let mut gap = timestamp - prev.timestamp;
            if gap > Duration::hours(1) {
                match fill {
                    FillRule::Error => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("missing hour(s) before {timestamp}"),
                        })
                    }
                    FillRule::Hold => {
                        let hold = prev.value;
                        let mut ts = prev.timestamp + Duration::hours(1);
                        while gap > Duration::hours(1) {
                            records.push(TraceRecord {
                                timestamp: ts,
                                value: hold,
                            });
                            ts += Duration::hours(1);
                            gap = timestamp - records.last().unwrap().timestamp;
                        }
                    }
                }
            }
        }
        records.push(TraceRecord { timestamp, value });
    }
    let trace = Trace { records };
    trace.check_hourly_contiguous()?;
    Ok((trace, clamped))
}

fn load_demand(raw: Vec<(NaiveDateTime, f64, usize)>, steps: &GridSteps) -> Result<(Trace, usize)> {
    // Infer the cadence from the first two rows; it must divide one hour.
    let period = if raw.len() >= 2 {
        raw[1].0 - raw[0].0
    } else {
        Duration::hours(1)
    };
    let minutes = period.num_minutes();
    if minutes <= 0 || 60 % minutes != 0 || period != Duration::minutes(minutes) {
        return Err(Error::Parse {
            line: 2,
            msg: format!("demand cadence of {minutes} min does not divide one hour"),
        });
    }
    let per_hour = (60 / minutes) as usize;

    let mut clamped = 0usize;
    let mut records: Vec<TraceRecord> = Vec::new();
    let mut bucket_hour: Option<NaiveDateTime> = None;
    let mut bucket_sum = 0.0;
    let mut bucket_count = 0usize;

    let flush = |hour: NaiveDateTime, sum: f64, count: usize, records: &mut Vec<TraceRecord>| {
        if count != per_hour {
            return Err(Error::Parse {
                line: 0,
                msg: format!("hour {hour} has {count} samples, expected {per_hour}"),
            });
        }
        records.push(TraceRecord {
            timestamp: hour,
            value: crate::mdp::snap_to_step(sum, steps.demand_step),
        });
        Ok(())
    };

    for (timestamp, value, line) in raw {
        let expected_offset =
            Duration::minutes(minutes) * (timestamp.minute() as i32 / minutes as i32);
        let hour_start = timestamp
            .with_minute(0)
            .and_then(|t| t.with_second(0))
            .expect("zeroing minutes is valid");
        if timestamp.second() != 0
            || timestamp.minute() as i64 % minutes != 0
            || hour_start + expected_offset != timestamp
        {
            return Err(Error::Parse {
                line,
                msg: format!("timestamp {timestamp} off the {minutes}-minute cadence"),
            });
        }
        let mut value = value;
        if value < 0.0 {
            value = 0.0;
            clamped += 1;
        }
        match bucket_hour {
            Some(hour) if hour == hour_start => {
                bucket_sum += value;
                bucket_count += 1;
            }
            Some(hour) => {
                flush(hour, bucket_sum, bucket_count, &mut records)?;
                bucket_hour = Some(hour_start);
                bucket_sum = value;
                bucket_count = 1;
            }
            None => {
                bucket_hour = Some(hour_start);
                bucket_sum = value;
                bucket_count = 1;
            }
        }
    }
    if let Some(hour) = bucket_hour {
        flush(hour, bucket_sum, bucket_count, &mut records)?;
    }
    let trace = Trace { records };
    trace.check_hourly_contiguous()?;
    Ok((trace, clamped))
}

/// Clamp a trace to non-negative values and snap it to multiples of
/// `step`, as [`load_trace`] does on ingestion. Used when traces are
/// generated in-process instead of read from disk.
pub fn snap_trace(trace: &Trace, step: f64) -> Trace {
    Trace {
        records: trace
            .records
            .iter()
            .map(|r| TraceRecord {
                timestamp: r.timestamp,
                value: crate::mdp::snap_to_step(r.value.max(0.0), step),
            })
            .collect(),
    }
}

/// Write a trace in the CSV format that [`load_trace`] reads.
pub fn write_trace(trace: &Trace, kind: TraceKind, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let value_column = match kind {
        TraceKind::Price => "price_ct_per_kwh",
        TraceKind::Demand => "demand_kwh",
    };
    writer.write_record(["timestamp", value_column])?;
    for record in &trace.records {
        writer.write_record([
            record.timestamp.format("%Y-%m-%dT%H:%M:%S").to_string(),
            format!("{}", record.value),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Per-hour-of-day empirical joint distributions over (price, demand)
/// grid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyEmpirical {
    /// `hours[h]` lists `((price, demand), probability)` cells for hour `h`.
    hours: Vec<Vec<((f64, f64), f64)>>,
    price_step: f64,
    demand_step: f64,
}

impl HourlyEmpirical {
    pub fn new(hours: Vec<Vec<((f64, f64), f64)>>, steps: &GridSteps) -> Result<Self> {
        let empirical = HourlyEmpirical {
            hours,
            price_step: steps.price_step,
            demand_step: steps.demand_step,
        };
        empirical.validate()?;
        Ok(empirical)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hours.len() != 24 {
            return Err(Error::invalid(
                "hourly distributions",
                "need exactly 24 hours",
            ));
        }
        for (h, cells) in self.hours.iter().enumerate() {
            if cells.is_empty() {
                return Err(Error::invalid(
                    "hourly distributions",
                    format!("hour {h} has no observations"),
                ));
            }
            let total: f64 = cells.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::invalid(
                    "hourly distributions",
                    format!("hour {h} sums to {total}"),
                ));
            }
            if cells
                .iter()
                .any(|((p, d), mass)| *p < 0.0 || *d < 0.0 || *mass < 0.0)
            {
                return Err(Error::invalid(
                    "hourly distributions",
                    format!("hour {h} has negative entries"),
                ));
            }
        }
        Ok(())
    }

    pub fn hour(&self, h: usize) -> &[((f64, f64), f64)] {
        &self.hours[h]
    }

    pub fn price_step(&self) -> f64 {
        self.price_step
    }

    pub fn demand_step(&self) -> f64 {
        self.demand_step
    }
}

/// Estimate per-hour joint (price, demand) distributions from aligned
/// hourly traces by normalized counting.
///
/// With `independent` set, each hour's joint is replaced by the product of
/// its price and demand marginals, which makes the fitted thresholds
/// independent of the demand realization.
pub fn fit_hourly(
    price: &Trace,
    demand: &Trace,
    steps: &GridSteps,
    independent: bool,
) -> Result<HourlyEmpirical> {
    if price.len() != demand.len() || price.is_empty() {
        return Err(Error::invalid(
            "traces",
            format!(
                "price ({}) and demand ({}) must align non-empty",
                price.len(),
                demand.len()
            ),
        ));
    }
    for (p, d) in price.records.iter().zip(&demand.records) {
        if p.timestamp != d.timestamp {
            return Err(Error::invalid(
                "traces",
                format!(
                    "timestamp mismatch: price {} vs demand {}",
                    p.timestamp, d.timestamp
                ),
            ));
        }
    }

    let mut counts: Vec<std::collections::BTreeMap<(i64, i64), usize>> =
        vec![Default::default(); 24];
    let mut totals = [0usize; 24];
    for (p, d) in price.records.iter().zip(&demand.records) {
        let hour = p.timestamp.hour() as usize;
        let key = (
            cell_index(p.value, steps.price_step),
            cell_index(d.value, steps.demand_step),
        );
        *counts[hour].entry(key).or_insert(0) += 1;
        totals[hour] += 1;
    }

    let mut hours = Vec::with_capacity(24);
    for (h, hour_counts) in counts.iter().enumerate() {
        if totals[h] == 0 {
            return Err(Error::invalid(
                "hourly distributions",
                format!("hour {h} has no observations in the training window"),
            ));
        }
        let n = totals[h] as f64;
        let joint: Vec<((f64, f64), f64)> = hour_counts
            .iter()
            .map(|(&(pc, dc), &count)| {
                (
                    (pc as f64 * steps.price_step, dc as f64 * steps.demand_step),
                    count as f64 / n,
                )
            })
            .collect();
        let cells = if independent {
            factorize(&joint)
        } else {
            joint
        };
        hours.push(cells);
    }
    HourlyEmpirical::new(hours, steps)
}

fn factorize(joint: &[((f64, f64), f64)]) -> Vec<((f64, f64), f64)> {
    // Values are non-negative, so ordering their bit patterns orders the
    // values; the maps stay deterministic.
    let mut price_marginal: std::collections::BTreeMap<u64, (f64, f64)> = Default::default();
    let mut demand_marginal: std::collections::BTreeMap<u64, (f64, f64)> = Default::default();
    for &((p, d), mass) in joint {
        price_marginal.entry(p.to_bits()).or_insert((p, 0.0)).1 += mass;
        demand_marginal.entry(d.to_bits()).or_insert((d, 0.0)).1 += mass;
    }
    let mut cells = Vec::new();
    for (p, pp) in price_marginal.values() {
        for (d, pd) in demand_marginal.values() {
            cells.push(((*p, *d), pp * pd));
        }
    }
    // Renormalize away accumulated roundoff.
    let total: f64 = cells.iter().map(|(_, m)| m).sum();
    for cell in &mut cells {
        cell.1 /= total;
    }
    cells
}

/// Hourly mean prices of a synthetic day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceProfile {
    pub hourly_base: [f64; 24],
}

impl PriceProfile {
    /// Flat profile at `level`.
    pub fn flat(level: f64) -> Self {
        PriceProfile {
            hourly_base: [level; 24],
        }
    }

    /// Residential-style profile in ct/kWh: cheap at night, an active phase
    /// with a morning and an evening peak between 9:00 and 22:00.
    pub fn residential() -> Self {
        PriceProfile {
            hourly_base: [
                10.0, 10.0, 10.0, 10.0, 10.0, 10.0, // 0-5: night
                15.0, 20.0, 25.0, // 6-8: ramp-up
                30.0, 35.0, 30.0, 28.0, // 9-12: morning peak
                26.0, 30.0, 34.0, 32.0, // 13-16: midday
                36.0, 40.0, 38.0, 32.0, 28.0, // 17-21: evening peak
                20.0, 12.0, // 22-23: wind-down
            ],
        }
    }

    /// Hours whose base price is below the daily mean. Useful to check that
    /// storage shifts purchases toward inexpensive hours.
    pub fn cheap_hours(&self) -> Vec<u32> {
        let mean = self.hourly_base.iter().sum::<f64>() / 24.0;
        (0..24u32)
            .filter(|&h| self.hourly_base[h as usize] < mean)
            .collect()
    }
}

fn synth_start() -> NaiveDateTime {
    chrono::NaiveDate::from_ymd_opt(2024, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time")
}

/// Generate `days` of hourly prices around `profile`, with mean-preserving
/// multiplicative lognormal noise of parameter `sigma`. Deterministic in
/// `seed`.
pub fn synth_prices(profile: &PriceProfile, sigma: f64, days: usize, seed: u64) -> Result<Trace> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::invalid("sigma", format!("{sigma} must be >= 0")));
    }
    if days == 0 {
        return Err(Error::invalid("days", "must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(days * 24);
    let mut ts = synth_start();
    for _ in 0..days {
        for hour in 0..24 {
            let noise = lognormal_unit_mean(&mut rng, sigma);
            records.push(TraceRecord {
                timestamp: ts,
                value: profile.hourly_base[hour] * noise,
            });
            ts += Duration::hours(1);
        }
    }
    Ok(Trace { records })
}

/// Energy used by one occupant over a canonical day, kWh.
pub const DAILY_KWH_PER_OCCUPANT: f64 = 2.5;

/// Canonical per-occupant hourly demand profile (kWh); sums to
/// [`DAILY_KWH_PER_OCCUPANT`]. A deliberately simple two-peak stand-in for
/// measured household load: a morning peak around 7:00-9:00 and a larger
/// evening peak around 18:00-21:00.
pub const OCCUPANT_PROFILE: [f64; 24] = [
    0.04, 0.04, 0.04, 0.04, 0.04, 0.05, // 0-5
    0.08, 0.16, 0.15, 0.11, // 6-9
    0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.09, // 10-16
    0.14, 0.21, 0.24, 0.21, 0.16, // 17-21
    0.14, 0.08, // 22-23
];

/// Generate `days` of hourly household demand for `occupants` people with
/// mean-preserving multiplicative lognormal noise. Deterministic in `seed`.
pub fn synth_demand(occupants: u32, sigma: f64, days: usize, seed: u64) -> Result<Trace> {
    if occupants == 0 {
        return Err(Error::invalid("occupants", "must be >= 1"));
    }
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::invalid("sigma", format!("{sigma} must be >= 0")));
    }
    if days == 0 {
        return Err(Error::invalid("days", "must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(days * 24);
    let mut ts = synth_start();
    for _ in 0..days {
        for base in OCCUPANT_PROFILE {
            let noise = lognormal_unit_mean(&mut rng, sigma);
            let value = f64::from(occupants) * base * noise;
            records.push(TraceRecord {
                timestamp: ts,
                value,
            });
            ts += Duration::hours(1);
        }
    }
    Ok(Trace { records })
}

fn lognormal_unit_mean(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    (sigma * z - sigma * sigma / 2.0).exp()
}
