use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{GroundTruth, TwinError};
use crate::codec::encode_float;
use crate::ledger::{read_all, read_header, Payload};
use crate::policy::Action;

/// Outcome metrics of one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    /// Mean realized outcome per decision point.
    pub mean_outcome: f64,
    /// Per-participant cumulative regret against the ground-truth oracle,
    /// averaged over participants.
    pub cumulative_regret: f64,
    pub fallback_rate: f64,
    pub decision_coverage: f64,
    pub mean_pi: f64,
}

impl RunMetrics {
    pub const NAMES: [&'static str; 5] =
        ["mean_outcome", "cumulative_regret", "fallback_rate", "decision_coverage", "mean_pi"];

    pub fn values(&self) -> [f64; 5] {
        [
            self.mean_outcome,
            self.cumulative_regret,
            self.fallback_rate,
            self.decision_coverage,
            self.mean_pi,
        ]
    }

    fn from_values(v: [f64; 5]) -> Self {
        Self {
            mean_outcome: v[0],
            cumulative_regret: v[1],
            fallback_rate: v[2],
            decision_coverage: v[3],
            mean_pi: v[4],
        }
    }
}

/// Scores a trial ledger against the twin's ground truth. Regret at each
/// point is `max(0, effect) - A·effect` with `A` the logged action (no
/// decision counts as withholding); the oracle withholds on ties.
pub fn evaluate_run(ledger: &[u8], truth: &GroundTruth) -> Result<RunMetrics, TwinError> {
    let header = read_header(ledger).map_err(|e| TwinError::Config(e.to_string()))?;
    let truth_ids: Vec<&str> =
        truth.participants.iter().map(|p| p.participant_id.as_str()).collect();
    if header.participants.iter().map(String::as_str).ne(truth_ids.iter().copied()) {
        return Err(TwinError::Config(format!(
            "ledger participants {:?} do not match ground truth {:?}",
            header.participants, truth_ids
        )));
    }
    let events = read_all(ledger).map_err(|e| TwinError::Config(e.to_string()))?;
    let mut actions: BTreeMap<(&str, u64), Action> = BTreeMap::new();
    let (mut decisions, mut fallbacks, mut pi_sum) = (0u64, 0u64, 0.0);
    for e in &events {
        if let Payload::Decision(d) = &e.payload {
            let r = &d.record;
            actions.insert((r.participant_id.as_str(), r.decision_index), r.action);
            decisions += 1;
            fallbacks += u64::from(r.fallback);
            pi_sum += r.pi;
        }
    }

    let (mut outcome_sum, mut points, mut regret_sum) = (0.0, 0u64, 0.0);
    for p in &truth.participants {
        for pt in &p.points {
            let a = actions
                .get(&(p.participant_id.as_str(), pt.decision_index))
                .copied()
                .unwrap_or(Action::Withhold);
            regret_sum += pt.effect.max(0.0) - a.as_f64() * pt.effect;
            outcome_sum += pt.outcome;
            points += 1;
        }
    }
    let scheduled = header.schedule.total_points() * header.participants.len() as u64;
    let ratio = |num: f64, den: u64| if den == 0 { 0.0 } else { num / den as f64 };
    Ok(RunMetrics {
        mean_outcome: ratio(outcome_sum, points),
        cumulative_regret: ratio(regret_sum, truth.participants.len() as u64),
        fallback_rate: ratio(fallbacks as f64, decisions),
        decision_coverage: ratio(decisions as f64, scheduled),
        mean_pi: ratio(pi_sum, decisions),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub env_index: usize,
    pub candidate: String,
    pub seed: u64,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalAggregate {
    pub env_index: usize,
    pub candidate: String,
    pub seeds: usize,
    pub mean: RunMetrics,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub sd: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregates: Vec<EvalAggregate>,
}

pub(crate) fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

impl EvalReport {
    /// Builds a report from rows; aggregates follow first-appearance order
    /// of `(env, candidate)`.
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let mut order: Vec<(usize, String)> = Vec::new();
        let mut groups: BTreeMap<(usize, String), Vec<RunMetrics>> = BTreeMap::new();
        for r in &rows {
            let key = (r.env_index, r.candidate.clone());
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(r.metrics);
        }
        let aggregates = order
            .into_iter()
            .map(|key| {
                let ms = &groups[&key];
                let mut mean = [0.0; 5];
                let mut sd = [0.0; 5];
                for i in 0..5 {
                    let col: Vec<f64> = ms.iter().map(|m| m.values()[i]).collect();
                    (mean[i], sd[i]) = mean_sd(&col);
                }
                EvalAggregate {
                    env_index: key.0,
                    candidate: key.1,
                    seeds: ms.len(),
                    mean: RunMetrics::from_values(mean),
                    sd: RunMetrics::from_values(sd),
                }
            })
            .collect();
        Self { rows, aggregates }
    }

    /// Tab-separated table: every metric as a hex bit pattern followed by a
    /// six-decimal rendering.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str("# eval-report v1\n");
        out.push_str("# runs\nenv\tcandidate\tseed");
        for name in RunMetrics::NAMES {
            let _ = write!(out, "\t{name}_hex\t{name}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}\t{}\t{}", r.env_index, r.candidate, r.seed);
            push_metrics(&mut out, &r.metrics);
            out.push('\n');
        }
        out.push_str("# aggregates\nenv\tcandidate\tseeds\tstat");
        for name in RunMetrics::NAMES {
            let _ = write!(out, "\t{name}_hex\t{name}");
        }
        out.push('\n');
        for a in &self.aggregates {
            for (stat, m) in [("mean", &a.mean), ("sd", &a.sd)] {
                let _ = write!(out, "{}\t{}\t{}\t{stat}", a.env_index, a.candidate, a.seeds);
                push_metrics(&mut out, m);
                out.push('\n');
            }
        }
        out
    }
}

pub(crate) fn push_metrics(out: &mut String, m: &RunMetrics) {
    for v in m.values() {
        push_float(out, v);
    }
}

pub(crate) fn push_float(out: &mut String, v: f64) {
    let _ = write!(out, "\t{}\t{v:.6}", encode_float(v));
}
