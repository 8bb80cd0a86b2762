//! End-to-end query runs over a synthetic scene with the bundled
//! processors.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidpriv::pipeline::{execute, prepare, Baseline, PipelineError, QueryOptions};
use vidpriv::sandbox::RunOptions;
use vidpriv::scene::{gen_scene, SceneConfig};
use vidpriv::state::{ledger_for, BudgetStore, JournaledLedger, StateDir};
use vidpriv_core::owner::{estimate_policy, CameraMeta, CameraRegistry, EstimateOptions};
use vidpriv_core::privacy::BudgetError;
use vidpriv_core::trace::{FrameStream, Policy};

fn setup(hours: u64) -> (CameraRegistry, BTreeMap<String, FrameStream>) {
    let stream = gen_scene(&SceneConfig {
        duration_secs: hours * 3600,
        seed: 5,
        ..SceneConfig::default()
    })
    .unwrap();
    let (rho, k) = estimate_policy(&stream, &EstimateOptions::default());
    let mut reg = CameraRegistry::new();
    reg.insert(CameraMeta {
        camera_id: stream.camera_id.clone(),
        fps: stream.fps,
        start_time: stream.start_time,
        n_frames: stream.len() as u64,
        grid: stream.grid,
        policy: Policy::new(rho, k, 1.0).unwrap(),
        masks: Vec::new(),
        region_schemes: Vec::new(),
    });
    let traces = [(stream.camera_id.clone(), stream)].into_iter().collect();
    (reg, traces)
}

fn traffic_query(begin: u64, end: u64) -> String {
    format!(
        "SPLIT cam BEGIN {begin} END {end} BY TIME 60sec STRIDE 0sec INTO ch;\n\
         PROCESS ch USING {} TIMEOUT 5sec PRODUCING 5 ROWS\n\
           WITH SCHEMA (plate:STRING=\"\", color:STRING=\"\", speed:NUMBER=0) INTO cars;\n\
         SELECT AVG(range(speed, 0, 60)) FROM cars;\n\
         SELECT COUNT(*) FROM cars WHERE color = \"RED\";\n\
         SELECT COUNT(*) FROM cars WHERE speed > 20;\n\
         SELECT COUNT(*) FROM (SELECT plate FROM cars GROUP BY plate);\n",
        env!("CARGO_BIN_EXE_vp-cars")
    )
}

fn options(epsilon: f64) -> QueryOptions {
    QueryOptions {
        run: RunOptions::default(),
        query_epsilon: Some(epsilon),
        baseline: None,
    }
}

#[test]
fn query_spends_budget_until_denied() {
    let (reg, traces) = setup(5);
    let dir = tempfile::tempdir().unwrap();
    let state = StateDir::new(dir.path());
    let mut store = JournaledLedger::new(state.clone(), reg.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let plan = prepare(&traffic_query(0, 3 * 3600), &reg, Some(1.0)).unwrap();
    assert_eq!(plan.selects.len(), 4);
    assert!((plan.total_epsilon - 1.0).abs() < 1e-12);

    let report = execute(&plan, &traces, &mut store, "first", &options(1.0), &mut rng).unwrap();
    assert_eq!(report.releases.len(), 4);
    for r in &report.releases {
        assert!((r.epsilon - 0.25).abs() < 1e-12);
        assert!((r.scale - r.delta_q / 0.25).abs() < 1e-9);
        assert!(r.noised.is_finite());
    }

    let journal_before = state.journal().unwrap();
    match execute(&plan, &traces, &mut store, "second", &options(1.0), &mut rng) {
        Err(PipelineError::Denied(BudgetError::Exhausted { .. })) => {}
        other => panic!("expected a denial, got {other:?}"),
    }
    assert_eq!(state.journal().unwrap(), journal_before);

    // a window past the rho margin still has its budget
    let later = prepare(&traffic_query(3 * 3600 + 200, 5 * 3600), &reg, Some(1.0)).unwrap();
    execute(&later, &traces, &mut store, "third", &options(1.0), &mut rng).unwrap();
    let ledger = state.ledger(&reg).unwrap();
    assert!(ledger.max_remaining("cam", 0, 3 * 3600).unwrap().abs() < 1e-9);
    assert!((ledger.max_remaining("cam", 3 * 3600 + 50, 3 * 3600 + 150).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn denial_happens_before_any_processing() {
    let (reg, traces) = setup(1);
    let mut ledger = ledger_for(&reg);
    let plan = prepare(&traffic_query(0, 3600), &reg, Some(1.5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let before = ledger.clone();
    let err = execute(&plan, &traces, &mut ledger, "q", &options(1.5), &mut rng).unwrap_err();
    assert!(matches!(err, PipelineError::Denied(_)), "{err}");
    assert_eq!(ledger, before);
}

#[test]
fn experiment_mode_reports_baseline_accuracy() {
    let (reg, traces) = setup(2);
    let mut ledger = ledger_for(&reg);
    let plan = prepare(&traffic_query(0, 2 * 3600), &reg, Some(1.0)).unwrap();
    let opts = QueryOptions {
        baseline: Some(Baseline { chunk_secs: None }),
        ..options(1.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let report = execute(&plan, &traces, &mut ledger, "q", &opts, &mut rng).unwrap();
    let unique = &report.releases[3];
    // the whole window in one chunk sees every plate exactly once
    let truth = traces["cam"]
        .frames()
        .iter()
        .flat_map(|f| {
            f.detections
                .iter()
                .filter(|d| d.class == "car")
                .map(|d| d.entity_id.clone())
        })
        .collect::<std::collections::BTreeSet<_>>()
        .len() as f64;
    assert_eq!(unique.baseline, Some(truth));
    for r in &report.releases {
        let (lo, hi) = r.belt.unwrap();
        assert!(lo < r.raw && r.raw < hi);
        assert!(r.accuracy.unwrap() <= 1.0);
    }
    let public = serde_json::to_value(report.public()).unwrap();
    assert!(public[0].get("raw").is_none());
    assert!(public[0].get("value").is_some());
}

#[test]
fn missing_processor_fails_before_spending() {
    let (reg, traces) = setup(1);
    let mut ledger = ledger_for(&reg);
    let text = traffic_query(0, 3600).replace(env!("CARGO_BIN_EXE_vp-cars"), "/nonexistent/processor");
    let plan = prepare(&text, &reg, Some(0.5)).unwrap();
    let before = ledger.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let err = execute(&plan, &traces, &mut ledger, "q", &options(0.5), &mut rng).unwrap_err();
    assert!(matches!(err, PipelineError::Processor(_)), "{err}");
    assert_eq!(ledger, before);
    assert!(ledger.reserve("x", &plan.reservations()).is_ok());
}
