//! Aggregation of transition logs into evaluation reports and CSV output.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{RejectionMotivation, StepOutcome, HOURS_PER_DAY};

/// Mergeable counters over a log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accumulator {
    day_length: f64,
    daily: Vec<f64>,
    requests: u64,
    accepted: u64,
    full_reserved: u64,
    full_loaded: u64,
    conservation: u64,
    tau_sum: f64,
}

impl Accumulator {
    pub fn new(day_length: f64) -> Self {
        assert!(day_length > 0.0, "day length");
        Self { day_length, ..Self::default() }
    }

    /// Makes sure at least `days` days are reported, padding with zero reward.
    pub fn ensure_days(&mut self, days: usize) {
        if self.daily.len() < days {
            self.daily.resize(days, 0.0);
        }
    }

    pub fn push(&mut self, outcome: &StepOutcome) {
        let day = (outcome.request.arrival_time / self.day_length).floor().max(0.0) as usize;
        self.ensure_days(day + 1);
        self.daily[day] += outcome.reward;
        self.requests += 1;
        match outcome.rejection_motivation {
            RejectionMotivation::None => {
                self.accepted += 1;
                self.tau_sum += outcome.processing_time;
            }
            RejectionMotivation::FullReserved => self.full_reserved += 1,
            RejectionMotivation::FullLoaded => self.full_loaded += 1,
            RejectionMotivation::Conservation => self.conservation += 1,
        }
    }

    pub fn extend<'a>(&mut self, outcomes: impl IntoIterator<Item = &'a StepOutcome>) {
        for o in outcomes {
            self.push(o);
        }
    }

    /// Adds the counts of `other`, whose log followed this one.
    pub fn merge(&mut self, other: &Accumulator) {
        self.ensure_days(other.daily.len());
        for (a, b) in self.daily.iter_mut().zip(&other.daily) {
            *a += b;
        }
        self.requests += other.requests;
        self.accepted += other.accepted;
        self.full_reserved += other.full_reserved;
        self.full_loaded += other.full_loaded;
        self.conservation += other.conservation;
        self.tau_sum += other.tau_sum;
    }

    pub fn finish(&self, policy: &str, eta: f64, arrival_rate: f64) -> EvaluationReport {
        let pct = |c: u64| if self.requests == 0 { 0.0 } else { 100.0 * c as f64 / self.requests as f64 };
        let days = self.daily.len();
        EvaluationReport {
            policy: policy.to_string(),
            eta,
            arrival_rate,
            days,
            rewards_per_day: self.daily.clone(),
            mean_daily_reward: if days == 0 { 0.0 } else { self.daily.iter().sum::<f64>() / days as f64 },
            requests: self.requests,
            acceptance_pct: pct(self.accepted),
            avg_processing_time_hours: if self.requests == 0 { 0.0 } else { self.tau_sum / self.requests as f64 },
            avg_processing_time_accepted_hours: if self.accepted == 0 {
                0.0
            } else {
                self.tau_sum / self.accepted as f64
            },
            pct_full_reserved: pct(self.full_reserved),
            pct_full_loaded: pct(self.full_loaded),
            pct_conservation: pct(self.conservation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub policy: String,
    pub eta: f64,
    pub arrival_rate: f64,
    pub days: usize,
    pub rewards_per_day: Vec<f64>,
    pub mean_daily_reward: f64,
    pub requests: u64,
    pub acceptance_pct: f64,
    /// Mean processing time over all requests, rejections counting as zero.
    pub avg_processing_time_hours: f64,
    /// Mean processing time over accepted requests only.
    pub avg_processing_time_accepted_hours: f64,
    pub pct_full_reserved: f64,
    pub pct_full_loaded: f64,
    pub pct_conservation: f64,
}

impl EvaluationReport {
    pub fn total_reward(&self) -> f64 {
        self.rewards_per_day.iter().sum()
    }

    /// Acceptance plus the three rejection shares; 100 for a non-empty log.
    pub fn percentage_total(&self) -> f64 {
        self.acceptance_pct + self.pct_full_reserved + self.pct_full_loaded + self.pct_conservation
    }

    pub fn row(&self) -> ReportRow {
        ReportRow {
            policy: self.policy.clone(),
            eta: self.eta,
            arrival_rate: self.arrival_rate,
            days: self.days,
            requests: self.requests,
            mean_daily_reward: self.mean_daily_reward,
            acceptance_pct: self.acceptance_pct,
            avg_processing_time_hours: self.avg_processing_time_hours,
            avg_processing_time_accepted_hours: self.avg_processing_time_accepted_hours,
            pct_full_reserved: self.pct_full_reserved,
            pct_full_loaded: self.pct_full_loaded,
            pct_conservation: self.pct_conservation,
        }
    }
}

/// Aggregates one time-ordered log with day boundaries every `day_length` hours.
pub fn aggregate(outcomes: &[StepOutcome], day_length: f64) -> EvaluationReportBuilder {
    let mut acc = Accumulator::new(day_length);
    acc.extend(outcomes);
    EvaluationReportBuilder { acc }
}

/// Aggregated counts awaiting the labels of their experiment cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReportBuilder {
    pub acc: Accumulator,
}

impl EvaluationReportBuilder {
    pub fn days(mut self, days: usize) -> Self {
        self.acc.ensure_days(days);
        self
    }

    pub fn finish(&self, policy: &str, eta: f64, arrival_rate: f64) -> EvaluationReport {
        self.acc.finish(policy, eta, arrival_rate)
    }
}

/// Aggregates with 24-hour days.
pub fn aggregate_daily(outcomes: &[StepOutcome]) -> EvaluationReportBuilder {
    aggregate(outcomes, HOURS_PER_DAY)
}

/// One row of the report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub policy: String,
    pub eta: f64,
    pub arrival_rate: f64,
    pub days: usize,
    pub requests: u64,
    pub mean_daily_reward: f64,
    pub acceptance_pct: f64,
    pub avg_processing_time_hours: f64,
    pub avg_processing_time_accepted_hours: f64,
    pub pct_full_reserved: f64,
    pub pct_full_loaded: f64,
    pub pct_conservation: f64,
}

/// Long-format daily reward row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRow {
    pub policy: String,
    pub eta: f64,
    pub arrival_rate: f64,
    pub day: usize,
    pub reward: f64,
}

pub fn write_reports<W: Write>(w: W, reports: &[EvaluationReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(r.row()).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_daily<W: Write>(w: W, reports: &[EvaluationReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        for (day, &reward) in r.rewards_per_day.iter().enumerate() {
            out.serialize(DailyRow { policy: r.policy.clone(), eta: r.eta, arrival_rate: r.arrival_rate, day, reward })
                .map_err(csv_error)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_reports<R: Read>(r: R) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Parse { line: i + 2, message: e.to_string() }))
        .collect()
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line: 0, message: format!("{other:?}") },
    }
}

/// A report row with best-in-group flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparedRow {
    #[serde(flatten)]
    pub row: ReportRow,
    pub best_acceptance: bool,
    pub best_processing_time: bool,
    pub best_reward: bool,
}

/// Groups rows by `(eta, arrival_rate)` and flags the best value per column.
///
/// Every group must contain the same policies.
pub fn compare(rows: &[ReportRow]) -> Result<Vec<ComparedRow>> {
    let mut groups: Vec<((f64, f64), Vec<&ReportRow>)> = Vec::new();
    for r in rows {
        let key = (r.eta, r.arrival_rate);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let policies = |g: &[&ReportRow]| {
        let mut p: Vec<String> = g.iter().map(|r| r.policy.clone()).collect();
        p.sort();
        p
    };
    if let Some((_, first)) = groups.first() {
        let expected = policies(first);
        for (key, g) in &groups {
            let got = policies(g);
            if got.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::param(format!("duplicate policy rows in group eta={} rate={}", key.0, key.1)));
            }
            if got != expected {
                return Err(Error::param(format!(
                    "group eta={} rate={} has policies {got:?}, expected {expected:?}",
                    key.0, key.1
                )));
            }
        }
    }
    let mut out = Vec::with_capacity(rows.len());
    for (_, g) in groups {
        let best_acc = g.iter().map(|r| r.acceptance_pct).fold(f64::NEG_INFINITY, f64::max);
        let best_tau = g.iter().map(|r| r.avg_processing_time_hours).fold(f64::INFINITY, f64::min);
        let best_rew = g.iter().map(|r| r.mean_daily_reward).fold(f64::NEG_INFINITY, f64::max);
        for r in g {
            out.push(ComparedRow {
                row: r.clone(),
                best_acceptance: r.acceptance_pct == best_acc,
                best_processing_time: r.avg_processing_time_hours == best_tau,
                best_reward: r.mean_daily_reward == best_rew,
            });
        }
    }
    Ok(out)
}

pub fn write_compared<W: Write>(w: W, rows: &[ComparedRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    // serde(flatten) is not supported by the csv serializer; write records by hand
    out.write_record([
        "policy",
        "eta",
        "arrival_rate",
        "days",
        "requests",
        "mean_daily_reward",
        "acceptance_pct",
        "avg_processing_time_hours",
        "avg_processing_time_accepted_hours",
        "pct_full_reserved",
        "pct_full_loaded",
        "pct_conservation",
        "best_acceptance",
        "best_processing_time",
        "best_reward",
    ])
    .map_err(csv_error)?;
    for c in rows {
        let r = &c.row;
        out.write_record([
            r.policy.clone(),
            r.eta.to_string(),
            r.arrival_rate.to_string(),
            r.days.to_string(),
            r.requests.to_string(),
            r.mean_daily_reward.to_string(),
            r.acceptance_pct.to_string(),
            r.avg_processing_time_hours.to_string(),
            r.avg_processing_time_accepted_hours.to_string(),
            r.pct_full_reserved.to_string(),
            r.pct_full_loaded.to_string(),
            r.pct_conservation.to_string(),
            c.best_acceptance.to_string(),
            c.best_processing_time.to_string(),
            c.best_reward.to_string(),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}
