//! Digital-twin testbed: simulated participants whose behaviour responds to
//! the interventions they receive, environment grids over the uncertain
//! parts of that behaviour, full trials through the real runtime, and
//! candidate evaluation and tuning.

mod env;
mod eval;
mod participant;
mod trial;
mod tune;

use thiserror::Error;

pub use env::{build_environment_grid, EnvironmentSpec, GridAxes};
pub use eval::{evaluate_run, EvalAggregate, EvalReport, EvalRow, RunMetrics};
pub use participant::{step_participant, ParticipantTwin, StepOutcome};
pub use trial::{
    participant_ids, run_trial, Candidate, GroundTruth, ParticipantTruth, TrialRun, TrialSetup,
    TruePoint, VersionUpgrade,
};
pub use tune::{tune, tuning_grid, TuneEntry, TuneReport};

use crate::par::{self, Execution};
use crate::policy::{
    ActionProbability, FeatureSnapshot, ModelConfig, Observation, PolicyError, PolicyLogic,
    PosteriorState,
};
use crate::runtime::RuntimeError;

#[derive(Debug, Error)]
pub enum TwinError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

/// One `(environment, candidate, seed)` cell of a grid run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub env_index: usize,
    pub candidate_index: usize,
    pub seed: u64,
}

/// Grid cells in report order: environment, then candidate, then seed.
pub fn grid_cells(n_envs: usize, n_candidates: usize, seeds: &[u64]) -> Vec<Cell> {
    let mut cells = Vec::with_capacity(n_envs * n_candidates * seeds.len());
    for env_index in 0..n_envs {
        for candidate_index in 0..n_candidates {
            for &seed in seeds {
                cells.push(Cell { env_index, candidate_index, seed });
            }
        }
    }
    cells
}

/// Runs and scores every cell. Cells are independent and may run in
/// parallel; rows are folded in cell order.
pub fn run_grid(
    envs: &[EnvironmentSpec],
    candidates: &[Candidate],
    seeds: &[u64],
    setup: &TrialSetup,
    exec: Execution,
) -> Result<EvalReport, TwinError> {
    let cells = grid_cells(envs.len(), candidates.len(), seeds);
    let results = par::map(&cells, exec, |cell| {
        let candidate = &candidates[cell.candidate_index];
        let run = run_trial(&envs[cell.env_index], candidate, setup, cell.seed)?;
        let metrics = evaluate_run(&run.ledger, &run.truth)?;
        Ok::<_, TwinError>(EvalRow {
            env_index: cell.env_index,
            candidate: candidate.name.clone(),
            seed: cell.seed,
            metrics,
        })
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_rows(rows))
}

/// Seeds for `replicates` runs derived from one master seed.
pub fn replicate_seeds(master_seed: u64, replicates: usize) -> Vec<u64> {
    (0..replicates as u64)
        .map(|r| crate::policy::derive_substream_seed(master_seed, "twin-replicate", r))
        .collect()
}

/// Benchmark policy that knows the population treatment effect: delivers
/// with probability 1 when `h(s)ᵀθ > 0`, else 0. Exact when participants
/// share one effect (`effect_sd = 0`) and snapshots are fully observed.
#[derive(Debug, Clone)]
pub struct OracleLogic {
    pub effect: Vec<f64>,
}

impl PolicyLogic for OracleLogic {
    fn name(&self) -> &str {
        "oracle"
    }

    fn action_probability(
        &self,
        _state: &PosteriorState,
        snapshot: &FeatureSnapshot,
        _config: &ModelConfig,
    ) -> Result<ActionProbability, PolicyError> {
        let effect: f64 = snapshot.treatment().iter().zip(&self.effect).map(|(h, t)| h * t).sum();
        let p = if effect > 0.0 { 1.0 } else { 0.0 };
        Ok(ActionProbability { raw: p, clipped: p })
    }

    fn update_posterior(
        &self,
        state: &PosteriorState,
        batch: &[Observation<'_>],
        config: &ModelConfig,
    ) -> Result<PosteriorState, PolicyError> {
        crate::policy::update_posterior(state, batch, config)
    }
}

/// Forced-uniform benchmark: every decision has probability 1/2.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformLogic;

impl PolicyLogic for UniformLogic {
    fn name(&self) -> &str {
        "uniform"
    }

    fn action_probability(
        &self,
        _state: &PosteriorState,
        _snapshot: &FeatureSnapshot,
        _config: &ModelConfig,
    ) -> Result<ActionProbability, PolicyError> {
        Ok(ActionProbability { raw: 0.5, clipped: 0.5 })
    }

    fn update_posterior(
        &self,
        state: &PosteriorState,
        batch: &[Observation<'_>],
        config: &ModelConfig,
    ) -> Result<PosteriorState, PolicyError> {
        crate::policy::update_posterior(state, batch, config)
    }
}
