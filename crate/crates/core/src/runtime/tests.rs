use super::*;
use crate::ledger::{read_all, MemoryStore};
use crate::ledger::{EventEnvelope, EventType};
use crate::policy::{init_state, update_posterior, ActionProbability, ConjugateThompson};

const HOUR: i64 = 3_600_000;

fn setup(injection: FaultInjection) -> DeploymentSetup {
    let features = FeatureMap::default();
    DeploymentSetup {
        stream_id: "rt".into(),
        profile: EnvironmentProfile::Test,
        deployment_seed: 11,
        model: ModelConfig::standard(3, 3),
        schedule: Schedule::twice_daily(3),
        imputation: ImputationPolicy::for_features(&features),
        features,
        injection,
        participants: vec!["a".into(), "b".into()],
    }
}

fn registry() -> LogicRegistry {
    LogicRegistry::new()
        .with("v1.0.0", Arc::new(ConjugateThompson))
        .with("v2", Arc::new(ConjugateThompson))
}

fn start(injection: FaultInjection) -> Deployment {
    Deployment::start(setup(injection), Box::new(MemoryStore::new()), registry()).unwrap()
}

fn events(d: &Deployment) -> Vec<EventEnvelope> {
    read_all(&d.ledger().bytes().unwrap()).unwrap()
}

fn entry<'a>(s: &'a FeatureSnapshot, name: &str) -> &'a FeatureEntry {
    s.entries().iter().find(|e| e.name == name).unwrap()
}

#[test]
fn start_writes_header_and_version() {
    let d = start(FaultInjection::default());
    let ev = events(&d);
    assert_eq!(ev.len(), 2);
    assert_eq!(ev[0].event_type(), EventType::LedgerHeader);
    assert_eq!(ev[1].event_type(), EventType::VersionChange);
    assert_eq!(ev[1].version_id, "v1.0.0");
    assert_eq!(d.versions().active().unwrap().activation_seq, 1);
}

#[test]
fn start_rejects_bad_setup() {
    let mut s = setup(FaultInjection::default());
    s.model = ModelConfig::standard(2, 3);
    assert!(matches!(
        Deployment::start(s, Box::new(MemoryStore::new()), registry()),
        Err(RuntimeError::Config(_))
    ));
    let mut s = setup(FaultInjection::default());
    s.model.version_id = "missing".into();
    assert!(Deployment::start(s, Box::new(MemoryStore::new()), registry()).is_err());
}

#[test]
fn provenance_follows_windows_and_horizon() {
    let mut d = start(FaultInjection::default());
    // Window 0 ends at 09:00 on day 0.
    d.ingest_observation("a", "engagement", 0.7, 8 * HOUR).unwrap();
    let (_, s0) = d.assemble_features("a", 0).unwrap();
    assert_eq!(entry(&s0, "engagement").provenance, Provenance::Observed);
    assert_eq!(entry(&s0, "outcome").provenance, Provenance::Default);
    assert_eq!(s0.treatment()[2], 0.7);

    for n in 1..=3 {
        let (_, s) = d.assemble_features("a", n).unwrap();
        let e = entry(&s, "engagement");
        assert_eq!(e.provenance, Provenance::Imputed, "point {n}");
        assert_eq!(e.imputation_method.as_deref(), Some(LOCF));
        assert_eq!(e.value, 0.7);
    }
    let (_, s4) = d.assemble_features("a", 4).unwrap();
    assert_eq!(entry(&s4, "engagement").provenance, Provenance::Default);
    assert_eq!(s4.treatment()[2], 0.0);
}

#[test]
fn ties_take_the_lowest_seq() {
    let mut d = start(FaultInjection::default());
    let first = d.ingest_observation("a", "outcome", 1.0, 7 * HOUR).unwrap();
    d.ingest_observation("a", "outcome", 2.0, 7 * HOUR).unwrap();
    let (_, s) = d.assemble_features("a", 0).unwrap();
    assert_eq!(entry(&s, "outcome").source_seq, Some(first));
    assert_eq!(s.baseline()[1], 1.0);
}

#[test]
fn late_data_never_rewrites_a_snapshot() {
    let mut d = start(FaultInjection::default());
    let (snap_seq, _) = d.assemble_features("a", 0).unwrap();
    let before = d.ledger().bytes().unwrap();
    let late = d.ingest_observation("a", "outcome", 3.0, 8 * HOUR).unwrap();
    let after = d.ledger().bytes().unwrap();
    assert_eq!(&after[..before.len()], &before[..]);
    let ev = events(&d);
    match &ev[late as usize].payload {
        Payload::DataIngested(di) => assert_eq!(di.supersedes_snapshot, Some(snap_seq)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn decisions_are_logged_with_snapshot_and_version() {
    let mut d = start(FaultInjection::default());
    let r = d.decision_point("a", 0).unwrap().unwrap();
    assert!(!r.fallback);
    assert_eq!(r.pi, 0.5);
    assert_eq!(r.version_id, "v1.0.0");
    assert_eq!(r.seed, derive_decision_seed(11, "a", 0));
    assert_eq!(r.action, decide(r.pi, r.seed));
    let ev = events(&d);
    let dm = ev.last().unwrap().as_decision().unwrap();
    assert_eq!(ev[dm.snapshot_seq as usize].event_type(), EventType::FeatureSnapshot);
    assert!(matches!(d.make_decision("a", 0), Err(RuntimeError::Protocol(_))));
    assert!(matches!(d.make_decision("a", 1), Err(RuntimeError::Protocol(_))));
}

#[test]
fn injected_exceptions_fall_back() {
    let inj = FaultInjection { policy_exception: 1.0, ..FaultInjection::default() };
    let mut d = start(inj);
    for n in 0..4 {
        let r = d.decision_point("b", n).unwrap().unwrap();
        assert!(r.fallback);
        assert_eq!(r.pi.to_bits(), 0.5f64.to_bits());
        assert_eq!(r.action, decide(0.5, r.seed));
        assert!(r.fallback_reason.is_some());
    }
    let errors = events(&d).iter().filter(|e| e.event_type() == EventType::Error).count();
    assert_eq!(errors, 4);
}

struct Panicking;

impl PolicyLogic for Panicking {
    fn name(&self) -> &str {
        "panicking"
    }

    fn action_probability(
        &self,
        _: &PosteriorState,
        _: &FeatureSnapshot,
        _: &ModelConfig,
    ) -> Result<ActionProbability, PolicyError> {
        panic!("boom")
    }

    fn update_posterior(
        &self,
        _: &PosteriorState,
        _: &[Observation<'_>],
        _: &ModelConfig,
    ) -> Result<PosteriorState, PolicyError> {
        panic!("boom")
    }
}

#[test]
fn panicking_logic_falls_back() {
    let reg = LogicRegistry::new().with("v1.0.0", Arc::new(Panicking));
    let mut d = Deployment::start(setup(FaultInjection::default()), Box::new(MemoryStore::new()), reg)
        .unwrap();
    let r = d.decision_point("a", 0).unwrap().unwrap();
    assert!(r.fallback);
    assert!(r.fallback_reason.unwrap().contains("boom"));
    d.ingest_outcome("a", 0, 1.0, 10 * HOUR).unwrap();
    let before = d.state("a").unwrap().clone();
    assert_eq!(d.run_update_cycle("a").unwrap(), before);
}

#[test]
fn update_cycle_folds_outcomes_in_ledger_order() {
    let mut d = start(FaultInjection::default());
    d.decision_point("a", 0).unwrap();
    d.decision_point("a", 1).unwrap();
    let s1 = d.ingest_outcome("a", 1, -0.5, 19 * HOUR).unwrap();
    let s0 = d.ingest_outcome("a", 0, 2.0, 20 * HOUR).unwrap();
    let post = d.run_update_cycle("a").unwrap();
    assert_eq!(post.update_count(), 2);
    assert_eq!(post.last_update_seq(), Some(s0));

    let ev = events(&d);
    let snaps: Vec<&FeatureSnapshot> = (0..2)
        .map(|n| {
            &ev.iter()
                .filter_map(|e| e.as_snapshot())
                .find(|s| s.participant_id == "a" && s.decision_index == n)
                .unwrap()
                .snapshot
        })
        .collect();
    let actions: Vec<Action> = ev.iter().filter_map(|e| e.as_decision()).map(|d| d.record.action).collect();
    let batch = [
        Observation { seq: s1, snapshot: snaps[1], action: actions[1], reward: -0.5 },
        Observation { seq: s0, snapshot: snaps[0], action: actions[0], reward: 2.0 },
    ];
    let cfg = ModelConfig::standard(3, 3);
    let expected = update_posterior(&init_state(&cfg).unwrap(), &batch, &cfg).unwrap();
    assert_eq!(post, expected);
    match &ev.last().unwrap().payload {
        Payload::ModelUpdate(u) => {
            assert_eq!(u.batch_seqs, vec![s1, s0]);
            assert_eq!(u.post_state, expected.canonical_bytes());
        }
        other => panic!("{other:?}"),
    }
    // Nothing pending: no new event.
    let n = events(&d).len();
    d.run_update_cycle("a").unwrap();
    assert_eq!(events(&d).len(), n);
    assert_eq!(d.state("b").unwrap().update_count(), 0);
}

#[test]
fn failed_update_discards_the_batch() {
    let mut d = start(FaultInjection::default());
    d.decision_point("a", 0).unwrap();
    let seq = d.ingest_outcome("a", 0, f64::NAN, 10 * HOUR).unwrap();
    let before = d.state("a").unwrap().clone();
    assert_eq!(d.run_update_cycle("a").unwrap(), before);
    match &events(&d).last().unwrap().payload {
        Payload::Error(e) => {
            assert_eq!(e.kind, "update");
            assert_eq!(e.discarded_seqs, vec![seq]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn outcome_before_decision_is_rejected() {
    let mut d = start(FaultInjection::default());
    assert!(matches!(d.ingest_outcome("a", 0, 1.0, 0), Err(RuntimeError::Protocol(_))));
    assert!(matches!(d.ingest_outcome("zz", 0, 1.0, 0), Err(RuntimeError::Config(_))));
}

#[test]
fn versions_are_stamped_and_unique() {
    let mut d = start(FaultInjection::default());
    d.decision_point("a", 0).unwrap();
    let seq = d.register_version("v2").unwrap();
    let r = d.decision_point("a", 1).unwrap().unwrap();
    assert_eq!(r.version_id, "v2");
    assert!(d.register_version("v2").is_err());
    assert!(d.register_version("v9").is_err());
    for e in events(&d) {
        let expected = if e.seq == 0 {
            ""
        } else if e.seq < seq {
            "v1.0.0"
        } else {
            "v2"
        };
        assert_eq!(e.version_id, expected, "seq {}", e.seq);
    }
}

#[test]
fn outages_leave_a_gap() {
    let inj = FaultInjection { outage: 1.0, ..FaultInjection::default() };
    let mut d = start(inj);
    assert!(d.decision_point("a", 0).unwrap().is_none());
    let ev = events(&d);
    assert!(ev.iter().all(|e| e.as_decision().is_none()));
    match &ev.last().unwrap().payload {
        Payload::Error(e) => assert_eq!(e.kind, "missed_decision"),
        other => panic!("{other:?}"),
    }
}
