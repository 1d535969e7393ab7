//! Offline fidelity monitoring: per-day metrics, threshold alerts and a
//! combined report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::encode_float;
use crate::ledger::{
    read_all, verify_chain, AlertEvent, ChainStatus, EventEnvelope, Ledger, LedgerError, Payload,
};
use crate::policy::Provenance;
use crate::replay::{DivergenceReport, Status};
use crate::runtime::{Schedule, DAY_MS};

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("refusing to monitor a ledger with a broken chain at seq {seq}: {reason}")]
    BrokenChain { seq: u64, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
}

/// The documented metric set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    DecisionCoverage,
    FallbackRate,
    UpdateSuccessRate,
    DataCompleteness,
    ErrorCount,
    MeanPi,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Self::DecisionCoverage,
        Self::FallbackRate,
        Self::UpdateSuccessRate,
        Self::DataCompleteness,
        Self::ErrorCount,
        Self::MeanPi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DecisionCoverage => "decision_coverage",
            Self::FallbackRate => "fallback_rate",
            Self::UpdateSuccessRate => "update_success_rate",
            Self::DataCompleteness => "data_completeness",
            Self::ErrorCount => "error_count",
            Self::MeanPi => "mean_pi",
        }
    }

    pub fn parse(name: &str) -> Result<Self, MonitorError> {
        Self::ALL.into_iter().find(|m| m.as_str() == name).ok_or_else(|| {
            MonitorError::Config(format!(
                "unknown metric {name:?}; expected one of {}",
                Self::ALL.map(Metric::as_str).join(", ")
            ))
        })
    }
}

/// Raw counts for one day (or the whole trial).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowCounts {
    pub scheduled: u64,
    pub decisions: u64,
    pub fallbacks: u64,
    pub updates: u64,
    pub update_failures: u64,
    pub snapshot_entries: u64,
    pub observed_entries: u64,
    pub errors: u64,
    pub pi_sum: f64,
}

fn ratio(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

impl WindowCounts {
    fn add(&mut self, other: &WindowCounts) {
        self.scheduled += other.scheduled;
        self.decisions += other.decisions;
        self.fallbacks += other.fallbacks;
        self.updates += other.updates;
        self.update_failures += other.update_failures;
        self.snapshot_entries += other.snapshot_entries;
        self.observed_entries += other.observed_entries;
        self.errors += other.errors;
        self.pi_sum += other.pi_sum;
    }

    /// Value of `metric`. Rates over an empty denominator are 1 except
    /// `mean_pi`, which is NaN when no decision was made.
    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::DecisionCoverage => ratio(self.decisions, self.scheduled, 1.0),
            Metric::FallbackRate => ratio(self.fallbacks, self.decisions, 0.0),
            Metric::UpdateSuccessRate => {
                ratio(self.updates, self.updates + self.update_failures, 1.0)
            }
            Metric::DataCompleteness => ratio(self.observed_entries, self.snapshot_entries, 1.0),
            Metric::ErrorCount => self.errors as f64,
            Metric::MeanPi => {
                if self.decisions == 0 {
                    f64::NAN
                } else {
                    self.pi_sum / self.decisions as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub days: Vec<WindowCounts>,
    pub overall: WindowCounts,
}

impl MetricTable {
    pub fn day(&self, day: u64) -> Option<&WindowCounts> {
        self.days.get(day as usize)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("window");
        for m in Metric::ALL {
            let _ = write!(out, "\t{}", m.as_str());
        }
        out.push_str("\tscheduled\tdecisions\n");
        let rows = self
            .days
            .iter()
            .enumerate()
            .map(|(d, c)| (format!("day{d}"), c))
            .chain(std::iter::once(("trial".to_owned(), &self.overall)));
        for (name, c) in rows {
            out.push_str(&name);
            for m in Metric::ALL {
                let _ = write!(out, "\t{}", encode_float(c.value(m)));
            }
            let _ = writeln!(out, "\t{}\t{}", c.scheduled, c.decisions);
        }
        out
    }
}

fn day_of_ts(schedule: &Schedule, ts: i64) -> u64 {
    let d = (ts - schedule.start_ms).div_euclid(DAY_MS);
    d.clamp(0, schedule.trial_days.saturating_sub(1) as i64) as u64
}

/// Per-day and whole-trial metrics. Refuses a ledger whose chain is broken.
pub fn compute_metrics(bytes: &[u8]) -> Result<MetricTable, MonitorError> {
    if let ChainStatus::Broken { first_bad_seq, reason } = verify_chain(bytes) {
        return Err(MonitorError::BrokenChain { seq: first_bad_seq, reason });
    }
    let events = read_all(bytes)?;
    metrics_from_events(&events)
}

pub fn metrics_from_events(events: &[EventEnvelope]) -> Result<MetricTable, MonitorError> {
    let header = match events.first().map(|e| &e.payload) {
        Some(Payload::LedgerHeader(h)) => h,
        _ => return Err(MonitorError::Config("record 0 is not a ledger header".into())),
    };
    let schedule = &header.schedule;
    let n_days = schedule.trial_days as usize;
    let mut days = vec![WindowCounts::default(); n_days];
    for day in &mut days {
        day.scheduled = header.participants.len() as u64 * schedule.points_per_day();
    }
    let day_of_index = |idx: u64| (schedule.day_of(idx) as usize).min(n_days.saturating_sub(1));

    if n_days > 0 {
        for e in events {
            match &e.payload {
                Payload::Decision(d) => {
                    let c = &mut days[day_of_index(d.record.decision_index)];
                    c.decisions += 1;
                    c.pi_sum += d.record.pi;
                    if d.record.fallback {
                        c.fallbacks += 1;
                    }
                }
                Payload::FeatureSnapshot(s) => {
                    let c = &mut days[day_of_index(s.decision_index)];
                    c.snapshot_entries += s.snapshot.entries().len() as u64;
                    c.observed_entries += s.snapshot.count(Provenance::Observed) as u64;
                }
                Payload::ModelUpdate(_) => {
                    days[day_of_ts(schedule, e.backend_ts) as usize].updates += 1;
                }
                Payload::Error(err) => {
                    let day = match err.decision_index {
                        Some(idx) => day_of_index(idx),
                        None => day_of_ts(schedule, e.backend_ts) as usize,
                    };
                    days[day].errors += 1;
                    if err.kind == "update" {
                        days[day].update_failures += 1;
                    }
                }
                _ => {}
            }
        }
    }
    let mut overall = WindowCounts::default();
    for d in &days {
        overall.add(d);
    }
    Ok(MetricTable { days, overall })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Comparator {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lt => "<",
            Self::Le => "<=",
            Self::Gt => ">",
            Self::Ge => ">=",
        }
    }

    /// NaN never fires.
    pub fn holds(self, observed: f64, threshold: f64) -> bool {
        match self {
            Self::Lt => observed < threshold,
            Self::Le => observed <= threshold,
            Self::Gt => observed > threshold,
            Self::Ge => observed >= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Day,
    Trial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertRule {
    pub metric: String,
    pub comparator: Comparator,
    pub threshold: f64,
    pub window: Window,
    pub severity: String,
}

impl AlertRule {
    pub fn new(metric: Metric, comparator: Comparator, threshold: f64, window: Window, severity: &str) -> Self {
        Self {
            metric: metric.as_str().to_owned(),
            comparator,
            threshold,
            window,
            severity: severity.to_owned(),
        }
    }

    pub fn validate(&self) -> Result<Metric, MonitorError> {
        let metric = Metric::parse(&self.metric)?;
        if !self.threshold.is_finite() {
            return Err(MonitorError::Config(format!(
                "rule on {}: threshold must be finite",
                self.metric
            )));
        }
        if self.severity.is_empty() {
            return Err(MonitorError::Config(format!("rule on {}: severity is empty", self.metric)));
        }
        Ok(metric)
    }
}

pub fn default_rules() -> Vec<AlertRule> {
    vec![
        AlertRule::new(Metric::DecisionCoverage, Comparator::Lt, 0.95, Window::Day, "high"),
        AlertRule::new(Metric::FallbackRate, Comparator::Gt, 0.2, Window::Day, "medium"),
        AlertRule::new(Metric::DataCompleteness, Comparator::Lt, 0.5, Window::Day, "low"),
        AlertRule::new(Metric::ErrorCount, Comparator::Gt, 0.0, Window::Day, "medium"),
    ]
}

pub const ALERT_SOURCE: &str = "monitor";

/// Evaluates `rules` in order; day-window rules are evaluated day by day.
/// Every rule is validated before any is evaluated.
pub fn evaluate_alerts(metrics: &MetricTable, rules: &[AlertRule]) -> Result<Vec<AlertEvent>, MonitorError> {
    let parsed = rules.iter().map(AlertRule::validate).collect::<Result<Vec<_>, _>>()?;
    let mut alerts = Vec::new();
    for (index, (rule, metric)) in rules.iter().zip(parsed).enumerate() {
        let windows: Vec<(Option<u64>, &WindowCounts)> = match rule.window {
            Window::Day => metrics.days.iter().enumerate().map(|(d, c)| (Some(d as u64), c)).collect(),
            Window::Trial => vec![(None, &metrics.overall)],
        };
        for (day, counts) in windows {
            let observed = counts.value(metric);
            if rule.comparator.holds(observed, rule.threshold) {
                alerts.push(AlertEvent {
                    source: ALERT_SOURCE.to_owned(),
                    rule_index: index as u64,
                    metric: rule.metric.clone(),
                    comparator: rule.comparator.as_str().to_owned(),
                    threshold: rule.threshold,
                    window: match rule.window {
                        Window::Day => "day".to_owned(),
                        Window::Trial => "trial".to_owned(),
                    },
                    day,
                    observed,
                    severity: rule.severity.clone(),
                });
            }
        }
    }
    Ok(alerts)
}

/// Appends `alerts` as ALERT events, stamped with the backend time of the
/// last existing record. Returns the seqs written.
pub fn append_alerts(ledger: &Ledger, alerts: &[AlertEvent]) -> Result<Vec<u64>, MonitorError> {
    let bytes = ledger.bytes()?;
    let last_ts = read_all(&bytes)?.last().map_or(0, |e| e.backend_ts);
    let mut seqs = Vec::with_capacity(alerts.len());
    for a in alerts {
        let env = ledger.append(ledger.draft(None, last_ts, Payload::Alert(a.clone())))?;
        seqs.push(env.seq);
    }
    Ok(seqs)
}

/// Canonical report text: metric table, alerts, optional replay section,
/// then a readable summary.
pub fn emit_report(
    metrics: &MetricTable,
    alerts: &[AlertEvent],
    divergence: Option<&DivergenceReport>,
) -> String {
    let mut out = String::from("# monitor-report v1\n## metrics\n");
    out.push_str(&metrics.to_table());
    out.push_str("## alerts\n");
    for a in alerts {
        let day = a.day.map_or("-".to_owned(), |d| d.to_string());
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            a.rule_index,
            a.severity,
            a.metric,
            a.comparator,
            encode_float(a.threshold),
            a.window,
            day,
            encode_float(a.observed)
        );
    }
    if let Some(report) = divergence {
        out.push_str("## replay\n");
        out.push_str(&report.to_text());
    }
    out.push_str("## summary\n");
    let o = &metrics.overall;
    let _ = writeln!(
        out,
        "{} decisions of {} scheduled (coverage {:.6}), fallback rate {:.6}",
        o.decisions,
        o.scheduled,
        o.value(Metric::DecisionCoverage),
        o.value(Metric::FallbackRate)
    );
    let _ = writeln!(
        out,
        "update success rate {:.6}, data completeness {:.6}, {} errors, mean pi {:.6}",
        o.value(Metric::UpdateSuccessRate),
        o.value(Metric::DataCompleteness),
        o.errors,
        o.value(Metric::MeanPi)
    );
    let _ = writeln!(out, "{} alerts fired", alerts.len());
    if let Some(report) = divergence {
        match report.status {
            Status::Exact => out.push_str("deployment reproducibility: PASS\n"),
            Status::Diverged => {
                let _ = writeln!(
                    out,
                    "deployment reproducibility: FAIL (first divergence at seq {})",
                    report.first_divergent_seq.unwrap_or_default()
                );
            }
        }
    }
    out
}

/// Writes a report, refusing to overwrite an existing file.
pub fn write_report(path: &Path, report: &str) -> Result<(), MonitorError> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().write(true).create_new(true).open(path)?;
    f.write_all(report.as_bytes())?;
    f.sync_all()?;
    Ok(())
}
