use std::fmt::Write as _;

use super::eval::{mean_sd, push_float};
use super::{run_grid, Candidate, EnvironmentSpec, EvalReport, TrialSetup, TwinError};
use crate::par::Execution;
use crate::policy::ModelConfig;

/// Candidates for every `(λ, σ²)` pair on top of `base`, λ-major.
pub fn tuning_grid(base: &ModelConfig, lambdas: &[f64], noise_variances: &[f64]) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(lambdas.len() * noise_variances.len());
    for &lambda in lambdas {
        for &sigma2 in noise_variances {
            let mut model = base.clone();
            model.prior_precision_scale = lambda;
            model.noise_variance = sigma2;
            out.push(Candidate::conjugate(format!("lambda={lambda},sigma2={sigma2}"), model));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneEntry {
    pub candidate: String,
    pub prior_precision_scale: f64,
    pub noise_variance: f64,
    /// Mean outcome averaged over environments and seeds.
    pub score: f64,
    /// Variance across environments of the seed-averaged regret.
    pub regret_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    pub ranked: Vec<TuneEntry>,
    pub evaluation: EvalReport,
}

/// Runs every candidate in every environment under every seed and ranks by
/// score (descending), then lower regret variance, then smaller λ, then
/// smaller σ², then name.
pub fn tune(
    candidates: &[Candidate],
    envs: &[EnvironmentSpec],
    seeds: &[u64],
    setup: &TrialSetup,
    exec: Execution,
) -> Result<TuneReport, TwinError> {
    if candidates.is_empty() || envs.is_empty() || seeds.is_empty() {
        return Err(TwinError::Config("tuning needs candidates, environments and seeds".into()));
    }
    let evaluation = run_grid(envs, candidates, seeds, setup, exec)?;
    let mut ranked: Vec<TuneEntry> = candidates
        .iter()
        .map(|c| {
            let per_env: Vec<&super::EvalAggregate> =
                evaluation.aggregates.iter().filter(|a| a.candidate == c.name).collect();
            let outcomes: Vec<f64> = per_env.iter().map(|a| a.mean.mean_outcome).collect();
            let regrets: Vec<f64> = per_env.iter().map(|a| a.mean.cumulative_regret).collect();
            let (score, _) = mean_sd(&outcomes);
            let (regret_mean, _) = mean_sd(&regrets);
            let regret_variance = regrets
                .iter()
                .map(|r| (r - regret_mean) * (r - regret_mean))
                .sum::<f64>()
                / regrets.len().max(1) as f64;
            TuneEntry {
                candidate: c.name.clone(),
                prior_precision_scale: c.model.prior_precision_scale,
                noise_variance: c.model.noise_variance,
                score,
                regret_variance,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.regret_variance.total_cmp(&b.regret_variance))
            .then(a.prior_precision_scale.total_cmp(&b.prior_precision_scale))
            .then(a.noise_variance.total_cmp(&b.noise_variance))
            .then(a.candidate.cmp(&b.candidate))
    });
    Ok(TuneReport { ranked, evaluation })
}

impl TuneReport {
    pub fn to_table(&self) -> String {
        let mut out = String::from("# tune-report v1\n# ranking\nrank\tcandidate");
        for name in ["prior_precision_scale", "noise_variance", "score", "regret_variance"] {
            let _ = write!(out, "\t{name}_hex\t{name}");
        }
        out.push('\n');
        for (i, e) in self.ranked.iter().enumerate() {
            let _ = write!(out, "{}\t{}", i + 1, e.candidate);
            for v in [e.prior_precision_scale, e.noise_variance, e.score, e.regret_variance] {
                push_float(&mut out, v);
            }
            out.push('\n');
        }
        out.push_str(&self.evaluation.to_table());
        out
    }
}
