//! Relational evaluation against hand-computed oracles, and monotonicity of
//! the sensitivity analysis in the policy and processor limits.

use std::collections::BTreeMap;

use proptest::collection::vec;
use proptest::prelude::*;
use vidpriv_core::chunking::ChunkSpec;
use vidpriv_core::owner::{CameraMeta, CameraRegistry};
use vidpriv_core::query::validate::validate;
use vidpriv_core::query::{parse_query, ColumnDef, DataType, Literal};
use vidpriv_core::relational::{evaluate, Tables};
use vidpriv_core::sensitivity::analyze;
use vidpriv_core::table::{IntermediateTable, TableMeta, TableRow, Value};
use vidpriv_core::trace::{Grid, Policy};

const COLORS: [&str; 4] = ["RED", "WHITE", "BLUE", "SILVER"];

fn meta(n_chunks: u64, chunk: u64, max_rows: u64, policy: Policy) -> TableMeta {
    TableMeta {
        name: "t".into(),
        camera_id: "cam".into(),
        schema: vec![
            ColumnDef {
                name: "c".into(),
                dtype: DataType::String,
                default: Literal::Str(String::new()),
            },
            ColumnDef {
                name: "v".into(),
                dtype: DataType::Number,
                default: Literal::Num(0.0),
            },
        ],
        max_rows,
        chunk: ChunkSpec::new(chunk, chunk, 1).unwrap(),
        start_time: 0,
        first_frame: 0,
        n_chunks,
        n_regions: 1,
        policy,
    }
}

fn table(m: TableMeta, rows: &[(u64, &str, f64)]) -> Tables {
    let rows = rows
        .iter()
        .map(|&(k, c, v)| TableRow {
            chunk_index: k,
            region: 0,
            values: vec![Value::Str(c.into()), Value::Num(v)],
        })
        .collect();
    let mut t = BTreeMap::new();
    t.insert("t".to_string(), IntermediateTable { meta: m, rows });
    t
}

fn run(q: &str, t: &Tables, slots: Option<f64>) -> Vec<(Vec<Value>, f64)> {
    let plan = parse_query(q).unwrap();
    evaluate(&plan.selects[0], t, slots)
        .unwrap()
        .into_iter()
        .map(|r| (r.key, r.value))
        .collect()
}

fn rows() -> impl Strategy<Value = Vec<(u64, &'static str, f64)>> {
    vec((0u64..10, prop::sample::select(COLORS.to_vec()), -50i32..150), 0..40)
        .prop_map(|rs| rs.into_iter().map(|(k, c, v)| (k, c, f64::from(v))).collect())
}

fn policy() -> Policy {
    Policy::new(30.0, 1, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn clamped_aggregates_match_direct_sums(rs in rows(), lo in -20i32..60, w in 0i32..80) {
        let (lo, hi) = (f64::from(lo), f64::from(lo + w));
        let t = table(meta(10, 60, 8, policy()), &rs);
        let clamped: Vec<f64> = rs.iter().map(|r| r.2.clamp(lo, hi)).collect();
        let sum: f64 = clamped.iter().sum();
        let got = run(&format!("SELECT SUM(range(v, {lo:?}, {hi:?})) FROM t;"), &t, None);
        prop_assert!((got[0].1 - sum).abs() < 1e-9);
        let slots = 80.0;
        let avg = run(&format!("SELECT AVG(range(v, {lo:?}, {hi:?})) FROM t;"), &t, Some(slots));
        prop_assert!((avg[0].1 - sum / slots).abs() < 1e-9);
        let n = rs.iter().filter(|r| r.2 > lo).count() as f64;
        let cnt = run(&format!("SELECT COUNT(*) FROM t WHERE v > {lo:?};"), &t, None);
        prop_assert_eq!(cnt[0].1, n);
    }

    #[test]
    fn declared_keys_are_released_in_order(rs in rows(), keys in Just(COLORS.to_vec()).prop_shuffle(), n in 0usize..5) {
        let keys = &keys[..n];
        let t = table(meta(10, 60, 8, policy()), &rs);
        let list: Vec<String> = keys.iter().map(|k| format!("\"{k}\"")).collect();
        let q = format!("SELECT c, COUNT(*) FROM t GROUP BY c WITH KEYS [{}];", list.join(", "));
        let got = run(&q, &t, None);
        prop_assert_eq!(got.len(), keys.len());
        for ((key, v), want) in got.iter().zip(keys) {
            prop_assert_eq!(key, &vec![Value::Str(want.to_string())]);
            prop_assert_eq!(*v, rs.iter().filter(|r| r.1 == *want).count() as f64);
        }
    }

    /// Widening the policy or the processor limits never lowers the
    /// sensitivity.
    #[test]
    fn sensitivity_grows_with_the_policy(
        q in prop::sample::select(vec![
            "SELECT COUNT(*) FROM t;",
            "SELECT SUM(range(v, 0, 10)) FROM t;",
            "SELECT AVG(range(v, 0, 10)) FROM t;",
            "SELECT VAR(range(v, -5, 10)) FROM t;",
            "SELECT c, COUNT(*) FROM t GROUP BY c WITH KEYS [\"RED\", \"WHITE\"];",
            "SELECT bin(chunk, 300) AS b, SUM(range(v, 0, 4)) FROM t GROUP BY bin(chunk, 300);",
            "SELECT AVG(range(n, 0, 50)) FROM (SELECT hour(chunk) AS h, COUNT(*) AS n FROM t GROUP BY hour(chunk));",
            "SELECT COUNT(*) FROM (SELECT c FROM t GROUP BY c);",
            "SELECT COUNT(*) FROM t LIMIT 7;",
        ]),
        rho in 0u32..400, drho in 0u32..400,
        k in 1u32..4, dk in 0u32..3,
        rows_ in 1u64..5, drows in 0u64..4,
        chunk in prop::sample::select(vec![1u64, 10, 60, 600]),
    ) {
        let n_chunks = 7200 / chunk;
        let small = meta(n_chunks, chunk, rows_, Policy::new(f64::from(rho), k, 1.0).unwrap());
        let big = meta(n_chunks, chunk, rows_ + drows, Policy::new(f64::from(rho + drho), k + dk, 1.0).unwrap());
        let stmt = parse_query(q).unwrap().selects.remove(0);
        let cat = |m: TableMeta| -> BTreeMap<String, TableMeta> { [("t".to_string(), m)].into_iter().collect() };
        let a = analyze(&stmt, &cat(small)).unwrap();
        let b = analyze(&stmt, &cat(big)).unwrap();
        prop_assert!(a.delta_q <= b.delta_q + 1e-9, "{} vs {}", a.delta_q, b.delta_q);
        prop_assert!(a.input.delta <= b.input.delta + 1e-9);
    }
}

#[test]
fn chunk_bins_cover_the_whole_window() {
    // three hours of 10-minute chunks; rows only in the first hour
    let t = table(meta(18, 600, 2, policy()), &[(0, "RED", 1.0), (2, "RED", 1.0)]);
    let got = run(
        "SELECT hour(chunk) AS h, COUNT(*) FROM t GROUP BY hour(chunk);",
        &t,
        None,
    );
    let keys: Vec<Vec<Value>> = got.iter().map(|g| g.0.clone()).collect();
    assert_eq!(
        keys,
        vec![
            vec![Value::Num(0.0)],
            vec![Value::Num(3600.0)],
            vec![Value::Num(7200.0)]
        ]
    );
    assert_eq!(got.iter().map(|g| g.1).collect::<Vec<_>>(), vec![2.0, 0.0, 0.0]);
}

fn registry() -> CameraRegistry {
    let mut reg = CameraRegistry::new();
    reg.insert(CameraMeta {
        camera_id: "camA".into(),
        fps: 1,
        start_time: 0,
        n_frames: 86_400,
        grid: Grid::new(4, 4),
        policy: Policy::new(60.0, 2, 1.0).unwrap(),
        masks: Vec::new(),
        region_schemes: Vec::new(),
    });
    reg
}

const COLOR_QUERY: &str = "SPLIT camA BEGIN 0 END 3600 BY TIME 60sec STRIDE 0sec INTO chunks;\
    PROCESS chunks USING ./cars TIMEOUT 1sec PRODUCING 2 ROWS WITH SCHEMA (c:STRING=\"\", v:NUMBER=0) INTO t;\
    SELECT c, COUNT(*) FROM t GROUP BY c WITH KEYS [\"RED\", \"WHITE\", \"SILVER\"] CONSUMING 0.1;";

#[test]
fn per_key_counts_with_empty_keys() {
    let plan = validate(&parse_query(COLOR_QUERY).unwrap(), &registry()).unwrap();
    let sel = &plan.selects[0];
    // span 2 chunks, K = 2, two rows per chunk
    assert_eq!(sel.analysis.delta_q, 8.0);
    assert_eq!(sel.analysis.release_count(), 3);
    assert!((plan.total_epsilon - 0.3).abs() < 1e-12);
    let m = plan.processes[0].meta.clone();
    let t = table(
        m,
        &[(0, "RED", 0.0), (3, "WHITE", 0.0), (4, "RED", 0.0), (9, "BLUE", 0.0)],
    );
    let got = run(COLOR_QUERY, &t, None);
    let got: Vec<(String, f64)> = got.into_iter().map(|(k, v)| (k[0].to_string(), v)).collect();
    assert_eq!(
        got,
        vec![("RED".into(), 2.0), ("WHITE".into(), 1.0), ("SILVER".into(), 0.0)]
    );
}

#[test]
fn validation_is_deterministic() {
    let plan = parse_query(COLOR_QUERY).unwrap();
    let a = validate(&plan, &registry()).unwrap();
    let b = validate(&plan, &registry()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.reservations(), b.reservations());
    let r = &a.reservations()[0];
    assert_eq!((r.first, r.end), (0, 3600));
    assert!((r.epsilon - 0.3).abs() < 1e-12);
}
