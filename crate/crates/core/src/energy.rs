//! Hourly irradiance traces and the harvested-energy integral.

use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const HOURS_PER_DAY: usize = 24;

/// Hourly global horizontal irradiance, in Wh/m² per hour slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrace {
    pub start_date: Option<NaiveDate>,
    hourly_ghi: Vec<f64>,
    /// Joules per Wh.
    pub wh_to_joules: f64,
}

impl EnergyTrace {
    pub const DEFAULT_WH_TO_JOULES: f64 = 3600.0;

    pub fn new(hourly_ghi: Vec<f64>) -> Result<Self> {
        if hourly_ghi.is_empty() || !hourly_ghi.len().is_multiple_of(HOURS_PER_DAY) {
            return Err(Error::param(format!("trace length {} is not a positive multiple of 24", hourly_ghi.len())));
        }
        if let Some(h) = hourly_ghi.iter().position(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::param(format!("GHI at hour {h} is negative or not finite")));
        }
        Ok(Self { start_date: None, hourly_ghi, wh_to_joules: Self::DEFAULT_WH_TO_JOULES })
    }

    pub fn with_start_date(mut self, date: NaiveDate) -> Self {
        self.start_date = Some(date);
        self
    }

    pub fn hourly_ghi(&self) -> &[f64] {
        &self.hourly_ghi
    }

    pub fn hours(&self) -> usize {
        self.hourly_ghi.len()
    }

    pub fn days(&self) -> usize {
        self.hourly_ghi.len() / HOURS_PER_DAY
    }

    /// Sub-trace of `days` whole days starting at day `offset`.
    pub fn window(&self, offset: usize, days: usize) -> Result<EnergyTrace> {
        if days == 0 || offset + days > self.days() {
            return Err(Error::param(format!(
                "window [{offset}, {}) outside a {}-day trace",
                offset + days,
                self.days()
            )));
        }
        let start = offset * HOURS_PER_DAY;
        Ok(EnergyTrace {
            start_date: self.start_date.map(|d| d + chrono::Days::new(offset as u64)),
            hourly_ghi: self.hourly_ghi[start..start + days * HOURS_PER_DAY].to_vec(),
            wh_to_joules: self.wh_to_joules,
        })
    }

    /// Energy captured by a panel of `panel_size` m² over `[t1, t2]` hours,
    /// with irradiance constant within each hour slot.
    pub fn harvested_energy(&self, panel_size: f64, t1: f64, t2: f64) -> Result<f64> {
        let end = self.hours() as f64;
        if !(0.0 <= t1 && t1 <= t2 && t2 <= end) {
            return Err(Error::param(format!("interval [{t1}, {t2}] outside trace of {end} hours")));
        }
        Ok(panel_size * self.wh_to_joules * self.irradiance_integral(t1, t2))
    }

    /// `∫ GHI dt` over `[t1, t2]`, in Wh/m². Caller guarantees bounds.
    fn irradiance_integral(&self, t1: f64, t2: f64) -> f64 {
        if t2 <= t1 {
            return 0.0;
        }
        let first = t1.floor() as usize;
        let last = (t2.ceil() as usize).min(self.hours());
        let mut acc = 0.0;
        for (slot, &ghi) in self.hourly_ghi[first..last].iter().enumerate() {
            let h = (first + slot) as f64;
            let overlap = t2.min(h + 1.0) - t1.max(h);
            if overlap > 0.0 {
                acc += ghi * overlap;
            }
        }
        acc
    }

    pub fn total_irradiance(&self) -> f64 {
        self.hourly_ghi.iter().sum()
    }
}

/// Read-only view of a trace starting at an hour offset, as seen by one
/// simulation episode. Times are relative to the view's start; the view
/// yields no energy past the end of the underlying trace.
#[derive(Debug, Clone)]
pub struct TraceWindow {
    trace: Arc<EnergyTrace>,
    start_hour: usize,
    panel_size: f64,
}

impl TraceWindow {
    pub fn new(trace: Arc<EnergyTrace>, start_day: usize, panel_size: f64) -> Result<Self> {
        if start_day >= trace.days() {
            return Err(Error::param(format!("trace offset {start_day} beyond {}-day trace", trace.days())));
        }
        Ok(Self { trace, start_hour: start_day * HOURS_PER_DAY, panel_size })
    }

    pub fn trace(&self) -> &Arc<EnergyTrace> {
        &self.trace
    }

    /// Hours available from the start of the view to the end of the trace.
    pub fn remaining_hours(&self) -> f64 {
        (self.trace.hours() - self.start_hour) as f64
    }

    /// Harvested Joules over `[t1, t2]` (relative hours), clamped to the trace.
    pub fn harvest(&self, t1: f64, t2: f64) -> f64 {
        let limit = self.remaining_hours();
        let a = t1.clamp(0.0, limit) + self.start_hour as f64;
        let b = t2.clamp(0.0, limit) + self.start_hour as f64;
        self.panel_size * self.trace.wh_to_joules * self.trace.irradiance_integral(a, b)
    }
}

/// Parses the `hour_index,ghi` CSV format. Days with a missing hour, an empty
/// field or a negative value are dropped whole.
pub fn load_ghi_csv(path: impl AsRef<Path>) -> Result<EnergyTrace> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_ghi_csv(file)
}

pub fn parse_ghi_csv<R: Read>(reader: R) -> Result<EnergyTrace> {
    use std::collections::BTreeMap;

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(&e, 1))?.clone();
    if headers.len() < 2 {
        return Err(Error::Parse { line: 1, message: "expected header `hour_index,ghi`".into() });
    }

    let mut days: BTreeMap<usize, [Option<f64>; HOURS_PER_DAY]> = BTreeMap::new();
    let mut broken: std::collections::BTreeSet<usize> = Default::default();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(&e, 0))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        rows += 1;
        let hour_field = record.get(0).unwrap_or("");
        let hour: usize = hour_field
            .parse()
            .map_err(|_| Error::Parse { line, message: format!("invalid hour index `{hour_field}`") })?;
        let ghi_field = record.get(1).unwrap_or("");
        let value = if ghi_field.is_empty() {
            None
        } else {
            let v: f64 = ghi_field
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("invalid GHI value `{ghi_field}`") })?;
            (v >= 0.0 && v.is_finite()).then_some(v)
        };
        let (day, slot) = (hour / HOURS_PER_DAY, hour % HOURS_PER_DAY);
        let entry = days.entry(day).or_insert([None; HOURS_PER_DAY]);
        if entry[slot].is_some() {
            return Err(Error::Parse { line, message: format!("duplicate hour index {hour}") });
        }
        match value {
            Some(v) => entry[slot] = Some(v),
            None => {
                broken.insert(day);
            }
        }
    }
    if rows == 0 {
        return Err(Error::Parse { line: 1, message: "no data rows".into() });
    }

    let mut ghi = Vec::new();
    for (day, slots) in &days {
        if broken.contains(day) || slots.iter().any(Option::is_none) {
            continue;
        }
        ghi.extend(slots.iter().map(|v| v.unwrap()));
    }
    if ghi.is_empty() {
        return Err(Error::Parse { line: 1, message: "no intact day in file".into() });
    }
    EnergyTrace::new(ghi)
}

fn csv_error(e: &csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    Error::Parse { line, message: e.to_string() }
}

/// Shape of the synthetic clear/overcast sky model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSky {
    pub peak_ghi: f64,
    /// Half-width of the uniform per-hour multiplicative noise.
    pub hourly_noise: f64,
    /// Probability that a day is overcast.
    pub overcast_prob: f64,
    /// Daily attenuation range on overcast days.
    pub overcast_range: [f64; 2],
    /// Daily attenuation range on clear days.
    pub clear_range: [f64; 2],
}

impl Default for SyntheticSky {
    fn default() -> Self {
        Self {
            peak_ghi: 900.0,
            hourly_noise: 0.1,
            overcast_prob: 0.15,
            overcast_range: [0.05, 0.35],
            clear_range: [0.75, 1.0],
        }
    }
}

impl SyntheticSky {
    fn validate(&self) -> Result<()> {
        let unit = |r: [f64; 2]| 0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0;
        if !(self.peak_ghi >= 0.0 && self.peak_ghi.is_finite()) {
            return Err(Error::param("peak_ghi must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.hourly_noise) {
            return Err(Error::param("hourly_noise must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.overcast_prob) {
            return Err(Error::param("overcast_prob must lie in [0, 1]"));
        }
        if !unit(self.overcast_range) || !unit(self.clear_range) {
            return Err(Error::param("attenuation ranges must be sub-intervals of [0, 1]"));
        }
        Ok(())
    }

    /// Generates `days` days of irradiance: a half-sine between 06:00 and
    /// 18:00, scaled by a per-day attenuation and per-hour noise.
    pub fn generate(&self, days: usize, seed: u64) -> Result<EnergyTrace> {
        self.validate()?;
        if days == 0 {
            return Err(Error::param("synthetic trace needs at least one day"));
        }
        let mut rng = seed::rng(seed);
        let mut ghi = Vec::with_capacity(days * HOURS_PER_DAY);
        for _ in 0..days {
            let range = if rng.random_bool(self.overcast_prob) { self.overcast_range } else { self.clear_range };
            let attenuation = uniform(&mut rng, range[0], range[1]);
            for hour in 0..HOURS_PER_DAY {
                let noise = 1.0 + uniform(&mut rng, -self.hourly_noise, self.hourly_noise);
                let mid = hour as f64 + 0.5;
                let base = if (6.0..18.0).contains(&mid) {
                    self.peak_ghi * (std::f64::consts::PI * (mid - 6.0) / 12.0).sin()
                } else {
                    0.0
                };
                ghi.push(base * attenuation * noise);
            }
        }
        EnergyTrace::new(ghi)
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Synthetic diurnal trace with the default sky model and the given peak.
pub fn synthetic_diurnal(days: usize, peak_ghi: f64, seed: u64) -> Result<EnergyTrace> {
    SyntheticSky { peak_ghi, ..SyntheticSky::default() }.generate(days, seed)
}
