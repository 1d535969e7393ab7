use std::collections::BTreeMap;
use std::sync::Arc;

use rand_distr::{Distribution, Geometric};
use rand_xoshiro::SplitMix64;

use super::participant::{substream, unit, ParticipantTwin};
use super::{EnvironmentSpec, TwinError};
use crate::ledger::{EnvironmentProfile, MemoryStore};
use crate::policy::{Action, ConjugateThompson, LogicRegistry, ModelConfig, PolicyLogic};
use crate::runtime::{
    Deployment, DeploymentSetup, FaultInjection, FeatureMap, ImputationPolicy, LocalTime,
    RuntimeError, Schedule, ENGAGEMENT_FEATURE, OUTCOME_FEATURE,
};

/// A candidate algorithm: model hyperparameters plus the logic that runs
/// them, and optional mid-trial version upgrades.
#[derive(Clone)]
pub struct Candidate {
    pub name: String,
    pub model: ModelConfig,
    pub logic: Arc<dyn PolicyLogic>,
    pub upgrades: Vec<VersionUpgrade>,
}

/// Activates `version_id` (running `logic`) at the start of `day`.
#[derive(Clone)]
pub struct VersionUpgrade {
    pub day: u64,
    pub version_id: String,
    pub logic: Arc<dyn PolicyLogic>,
}

impl Candidate {
    pub fn conjugate(name: impl Into<String>, model: ModelConfig) -> Self {
        Self { name: name.into(), model, logic: Arc::new(ConjugateThompson), upgrades: Vec::new() }
    }

    /// Registry mapping every version this candidate may run to its logic.
    pub fn logic_registry(&self) -> LogicRegistry {
        let mut reg = LogicRegistry::new().with(self.model.version_id.clone(), self.logic.clone());
        for up in &self.upgrades {
            reg.insert(up.version_id.clone(), up.logic.clone());
        }
        reg
    }
}

impl std::fmt::Debug for Candidate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Candidate")
            .field("name", &self.name)
            .field("model", &self.model)
            .field("logic", &self.logic.name())
            .finish()
    }
}

/// Everything about a trial that is not the environment or the candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSetup {
    pub decision_times: Vec<LocalTime>,
    pub update_time: LocalTime,
    pub features: FeatureMap,
    pub imputation: ImputationPolicy,
    pub injection: FaultInjection,
    pub profile: EnvironmentProfile,
    /// Ledger stream id; `twin/{candidate}/{seed}` when unset.
    pub stream_id: Option<String>,
}

impl Default for TrialSetup {
    fn default() -> Self {
        let schedule = Schedule::twice_daily(1);
        let features = FeatureMap::default();
        Self {
            decision_times: schedule.decision_times,
            update_time: schedule.update_time,
            imputation: ImputationPolicy::for_features(&features),
            features,
            injection: FaultInjection::default(),
            profile: EnvironmentProfile::Test,
            stream_id: None,
        }
    }
}

impl TrialSetup {
    pub fn schedule(&self, n_days: u64) -> Schedule {
        Schedule {
            decision_times: self.decision_times.clone(),
            update_time: self.update_time,
            trial_days: n_days,
            start_ms: 0,
        }
    }
}

/// Ground truth for one decision point of one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct TruePoint {
    pub decision_index: u64,
    pub expected_base: f64,
    pub effect: f64,
    pub outcome: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantTruth {
    pub participant_id: String,
    pub baseline_weights: Vec<f64>,
    pub effect_weights: Vec<f64>,
    pub points: Vec<TruePoint>,
}

/// What the twin knows and the deployment does not.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub participants: Vec<ParticipantTruth>,
}

#[derive(Debug, Clone)]
pub struct TrialRun {
    pub ledger: Vec<u8>,
    pub truth: GroundTruth,
}

pub fn participant_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{i:03}")).collect()
}

#[derive(Debug, Clone)]
enum Delivery {
    Feature { name: &'static str, value: f64, device_ts: i64 },
    Outcome { decision_index: u64, reward: f64, device_ts: i64 },
}

/// Per-participant random streams deciding each datum's fate. Every stream
/// is drawn exactly once per datum whatever the outcome, so changing one
/// probability does not shift the others' draws.
struct Fates {
    miss: SplitMix64,
    delay: SplitMix64,
    inject_loss: SplitMix64,
    inject_delay: SplitMix64,
}

impl Fates {
    fn new(master_seed: u64, pid: &str) -> Self {
        Self {
            miss: substream(master_seed, "twin-miss", pid),
            delay: substream(master_seed, "twin-delay", pid),
            inject_loss: substream(master_seed, "inject-loss", pid),
            inject_delay: substream(master_seed, "inject-delay", pid),
        }
    }

    /// Extra windows before arrival, or `None` if the datum is lost.
    fn draw(&mut self, env: &EnvironmentSpec, inj: &FaultInjection) -> Option<u64> {
        let missed = unit(&mut self.miss) < env.miss_prob;
        let env_delay = Geometric::new(env.delay_geometric_p)
            .expect("validated probability")
            .sample(&mut self.delay);
        let lost = unit(&mut self.inject_loss) < inj.loss;
        let delayed = unit(&mut self.inject_delay) < inj.delay;
        let extra = Geometric::new(inj.delay_geometric_p)
            .expect("validated probability")
            .sample(&mut self.inject_delay);
        if missed || lost {
            return None;
        }
        Some(env_delay + if delayed { 1 + extra } else { 0 })
    }
}

fn surface(deployment: &mut Deployment, pid: Option<&str>, err: RuntimeError) -> Result<(), TwinError> {
    // Runtime errors become ERROR records; only a failing ledger aborts.
    if let RuntimeError::Ledger(e) = err {
        return Err(TwinError::Runtime(RuntimeError::Ledger(e)));
    }
    let draft = deployment.ledger().draft(
        None,
        deployment.clock(),
        crate::ledger::Payload::Error(crate::ledger::ErrorEvent {
            participant_id: pid.map(str::to_owned),
            decision_index: None,
            kind: "runtime".into(),
            message: err.to_string(),
            discarded_seqs: Vec::new(),
        }),
    );
    deployment.ledger().append(draft).map_err(|e| TwinError::Runtime(e.into()))?;
    Ok(())
}

/// Runs one full trial through the real runtime and ledger.
///
/// Participants are realized from `master_seed`, which also serves as the
/// deployment seed. Each decision point delivers the data that has arrived,
/// then every participant gets a snapshot and a decision, the twin reacts,
/// and the next window's outcome and engagement readings are queued with
/// their missingness and delay. Updates run nightly at `update_time`.
pub fn run_trial(
    env: &EnvironmentSpec,
    candidate: &Candidate,
    setup: &TrialSetup,
    master_seed: u64,
) -> Result<TrialRun, TwinError> {
    env.validate(setup.features.baseline.len(), setup.features.treatment.len())?;
    let schedule = setup.schedule(env.n_days);
    let ids = participant_ids(env.n_participants);
    let deployment_setup = DeploymentSetup {
        stream_id: setup
            .stream_id
            .clone()
            .unwrap_or_else(|| format!("twin/{}/{master_seed}", candidate.name)),
        profile: setup.profile,
        deployment_seed: master_seed,
        model: candidate.model.clone(),
        schedule: schedule.clone(),
        features: setup.features.clone(),
        imputation: setup.imputation.clone(),
        injection: setup.injection,
        participants: ids.clone(),
    };
    let mut deployment = Deployment::start(
        deployment_setup,
        Box::new(MemoryStore::new()),
        candidate.logic_registry(),
    )?;

    let mut twins: Vec<ParticipantTwin> =
        ids.iter().map(|id| ParticipantTwin::realize(env, id, master_seed)).collect();
    let mut fates: Vec<Fates> = ids.iter().map(|id| Fates::new(master_seed, id)).collect();
    let mut truth: Vec<ParticipantTruth> = twins
        .iter()
        .map(|t| ParticipantTruth {
            participant_id: t.participant_id.clone(),
            baseline_weights: t.baseline_weights.clone(),
            effect_weights: t.effect_weights.clone(),
            points: Vec::new(),
        })
        .collect();

    // (arrival window, participant, sequence) -> delivery
    let mut queue: BTreeMap<(u64, usize, u64), Delivery> = BTreeMap::new();
    let mut counter = 0u64;
    let mut enqueue = |queue: &mut BTreeMap<(u64, usize, u64), Delivery>,
                       fates: &mut Fates,
                       p: usize,
                       window: u64,
                       items: Vec<Delivery>| {
        // Items measured together share one fate.
        if let Some(delay) = fates.draw(env, &setup.injection) {
            for item in items {
                queue.insert((window + delay, p, counter), item);
                counter += 1;
            }
        }
    };

    let first_reading_ts = schedule.due_ts(0) - 3_600_000;
    for (p, twin) in twins.iter().enumerate() {
        let item = Delivery::Feature {
            name: ENGAGEMENT_FEATURE,
            value: twin.engagement,
            device_ts: first_reading_ts,
        };
        enqueue(&mut queue, &mut fates[p], p, 0, vec![item]);
    }

    let k = schedule.points_per_day();
    let update_minute = schedule.update_time.minutes();
    for day in 0..env.n_days {
        for up in candidate.upgrades.iter().filter(|u| u.day == day) {
            deployment.set_clock(schedule.start_ms + day as i64 * crate::runtime::DAY_MS);
            if let Err(e) = deployment.register_version(&up.version_id) {
                surface(&mut deployment, None, e)?;
            }
        }
        let mut updated = false;
        for (n, due) in schedule.decision_points(day) {
            let slot_minute = schedule.decision_times[schedule.slot_of(n)].minutes();
            if !updated && update_minute < slot_minute {
                nightly_update(&mut deployment, &ids, schedule.update_ts(day))?;
                updated = true;
            }

            deployment.set_clock(due - 1);
            let arrived: Vec<_> = queue.range(..(n + 1, 0, 0)).map(|(k, _)| *k).collect();
            for key in arrived {
                let item = queue.remove(&key).expect("present");
                let pid = &ids[key.1];
                let res = match item {
                    Delivery::Feature { name, value, device_ts } => {
                        deployment.ingest_observation(pid, name, value, device_ts)
                    }
                    Delivery::Outcome { decision_index, reward, device_ts } => {
                        deployment.ingest_outcome(pid, decision_index, reward, device_ts)
                    }
                };
                if let Err(e) = res {
                    surface(&mut deployment, Some(pid), e)?;
                }
            }

            deployment.set_clock(due);
            let next_due = schedule.due_ts(n + 1);
            let reading_ts = due + (next_due - due) / 2;
            for (p, pid) in ids.iter().enumerate() {
                let decided = match deployment.decision_point(pid, n) {
                    Ok(record) => record,
                    Err(e) => {
                        surface(&mut deployment, Some(pid), e)?;
                        None
                    }
                };
                let action = decided.as_ref().map_or(Action::Withhold, |r| r.action);
                let step = twins[p].step(
                    env,
                    &setup.features,
                    n,
                    schedule.slot_of(n),
                    k as usize,
                    action,
                );
                truth[p].points.push(TruePoint {
                    decision_index: n,
                    expected_base: step.expected_base,
                    effect: step.effect,
                    outcome: step.outcome,
                });

                let mut outcome_items = vec![Delivery::Feature {
                    name: OUTCOME_FEATURE,
                    value: step.outcome,
                    device_ts: reading_ts,
                }];
                if decided.is_some() {
                    outcome_items.push(Delivery::Outcome {
                        decision_index: n,
                        reward: step.outcome,
                        device_ts: reading_ts,
                    });
                }
                enqueue(&mut queue, &mut fates[p], p, n + 1, outcome_items);
                let engagement = Delivery::Feature {
                    name: ENGAGEMENT_FEATURE,
                    value: twins[p].engagement,
                    device_ts: reading_ts,
                };
                enqueue(&mut queue, &mut fates[p], p, n + 1, vec![engagement]);
            }
        }
        if !updated {
            nightly_update(&mut deployment, &ids, schedule.update_ts(day))?;
        }
    }

    let ledger = deployment.ledger().bytes().map_err(|e| TwinError::Runtime(e.into()))?;
    Ok(TrialRun { ledger, truth: GroundTruth { participants: truth } })
}

fn nightly_update(deployment: &mut Deployment, ids: &[String], ts: i64) -> Result<(), TwinError> {
    deployment.set_clock(ts);
    for pid in ids {
        if let Err(e) = deployment.run_update_cycle(pid) {
            surface(deployment, Some(pid), e)?;
        }
    }
    Ok(())
}
