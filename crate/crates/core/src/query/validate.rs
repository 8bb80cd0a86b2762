//! Resolves a parsed query against camera metadata and checks every rule
//! that does not depend on trace contents.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{DataType, Literal, ProcessSpec, QueryPlan, SelectStmt, SplitSpec};
use crate::chunking::{window_frames, BoundaryKind, ChunkSpec, Mask, RegionScheme};
use crate::owner::{camera_policy, CameraMeta, CameraRegistry};
use crate::privacy::Reservation;
use crate::query::AggFunc;
use crate::sensitivity::{analyze, SelectAnalysis};
use crate::table::{TableMeta, CHUNK_COLUMN, REGION_COLUMN};
use crate::trace::Policy;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    /// Statement the error belongs to: an output name or `select #n`.
    pub statement: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.statement, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSplit {
    pub spec: SplitSpec,
    pub camera: CameraMeta,
    pub chunk: ChunkSpec,
    /// Frame window `[first_frame, end_frame)`.
    pub first_frame: u64,
    pub end_frame: u64,
    pub n_chunks: u64,
    pub policy: Policy,
    pub mask: Option<Mask>,
    pub scheme: Option<RegionScheme>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedProcess {
    pub spec: ProcessSpec,
    /// Index into [`ValidatedPlan::splits`].
    pub split: usize,
    pub timeout_secs: f64,
    pub meta: TableMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSelect {
    pub stmt: SelectStmt,
    pub analysis: SelectAnalysis,
    /// Budget for each release of this statement.
    pub epsilon: f64,
    /// Cameras whose tables the statement reads.
    pub cameras: BTreeSet<String>,
}

impl ResolvedSelect {
    /// Denominator for AVG and VAR.
    pub fn slots(&self) -> Option<f64> {
        match self.analysis.agg {
            AggFunc::Avg | AggFunc::Var => self.analysis.input.cs,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedPlan {
    pub plan: QueryPlan,
    pub splits: Vec<ResolvedSplit>,
    pub processes: Vec<ResolvedProcess>,
    pub selects: Vec<ResolvedSelect>,
    pub total_epsilon: f64,
}

impl ValidatedPlan {
    /// Per camera: the hull of its split windows, charged the budget of
    /// every release that reads it.
    pub fn reservations(&self) -> Vec<Reservation> {
        let mut hull: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
        for s in &self.splits {
            if s.first_frame >= s.end_frame {
                continue;
            }
            let e = hull
                .entry(s.camera.camera_id.as_str())
                .or_insert((s.first_frame, s.end_frame));
            e.0 = e.0.min(s.first_frame);
            e.1 = e.1.max(s.end_frame);
        }
        let mut out = Vec::new();
        for (cam, (first, end)) in hull {
            let eps: f64 = self
                .selects
                .iter()
                .filter(|s| s.cameras.contains(cam))
                .map(|s| s.epsilon * s.analysis.release_count() as f64)
                .sum();
            if eps > 0.0 {
                out.push(Reservation {
                    camera_id: cam.into(),
                    first,
                    end,
                    epsilon: eps,
                });
            }
        }
        out
    }

    pub fn table_metas(&self) -> BTreeMap<String, TableMeta> {
        self.processes
            .iter()
            .map(|p| (p.meta.name.clone(), p.meta.clone()))
            .collect()
    }
}

/// Validates with the default budget: statements without `CONSUMING`
/// share the smallest per-frame epsilon among the cameras involved.
pub fn validate(plan: &QueryPlan, registry: &CameraRegistry) -> Result<ValidatedPlan, Vec<ValidationError>> {
    validate_with(plan, registry, None)
}

/// Validates the plan. `query_epsilon`, when given, is the total budget the
/// statements without `CONSUMING` split equally.
pub fn validate_with(
    plan: &QueryPlan,
    registry: &CameraRegistry,
    query_epsilon: Option<f64>,
) -> Result<ValidatedPlan, Vec<ValidationError>> {
    let mut errors = Vec::new();
    let mut error = |statement: &str, message: String| {
        errors.push(ValidationError {
            statement: statement.into(),
            message,
        })
    };

    let mut splits = Vec::new();
    let mut split_index = BTreeMap::new();
    for spec in &plan.splits {
        let Some(camera) = registry.get(&spec.camera_id) else {
            error(&spec.output, format!("unknown camera {}", spec.camera_id));
            continue;
        };
        let chunk = match ChunkSpec::from_durations(spec.chunk, spec.stride, camera.fps) {
            Ok(c) => c,
            Err(e) => {
                error(&spec.output, format!("{e}"));
                continue;
            }
        };
        let mut ok = true;
        let mask = match &spec.mask {
            None => None,
            Some(id) => match camera.mask(id) {
                Some(m) => Some(m.mask.clone()),
                None => {
                    error(&spec.output, format!("camera {} has no mask {id}", camera.camera_id));
                    ok = false;
                    None
                }
            },
        };
        let scheme = match &spec.region_scheme {
            None => None,
            Some(id) => match camera.region_scheme(id) {
                Some(s) => {
                    if s.boundary == BoundaryKind::Soft && chunk.chunk_frames != 1 {
                        error(
                            &spec.output,
                            format!("region scheme {id} has soft boundaries and needs 1-frame chunks"),
                        );
                        ok = false;
                    }
                    Some(s.clone())
                }
                None => {
                    error(
                        &spec.output,
                        format!("camera {} has no region scheme {id}", camera.camera_id),
                    );
                    ok = false;
                    None
                }
            },
        };
        if !ok {
            continue;
        }
        let policy = camera_policy(camera, spec.mask.as_deref()).unwrap_or(camera.policy);
        let (first_frame, end_frame) =
            window_frames(camera.start_time, camera.fps, camera.n_frames, spec.begin, spec.end);
        split_index.insert(spec.output.clone(), splits.len());
        splits.push(ResolvedSplit {
            spec: spec.clone(),
            camera: camera.clone(),
            chunk,
            first_frame,
            end_frame,
            n_chunks: chunk.chunk_count(end_frame - first_frame),
            policy,
            mask,
            scheme,
        });
    }

    let mut processes = Vec::new();
    for spec in &plan.processes {
        let Some(&si) = split_index.get(&spec.input) else {
            if plan.split(&spec.input).is_none() {
                error(&spec.output, format!("unknown split {}", spec.input));
            }
            continue;
        };
        let split = &splits[si];
        let mut ok = true;
        let timeout_secs = spec.timeout.seconds(split.camera.fps);
        if !(timeout_secs > 0.0 && timeout_secs.is_finite()) {
            error(&spec.output, "TIMEOUT must be positive".into());
            ok = false;
        }
        if spec.max_rows == 0 {
            error(&spec.output, "PRODUCING must allow at least one row".into());
            ok = false;
        }
        let mut names = BTreeSet::new();
        for col in &spec.schema {
            if col.name == CHUNK_COLUMN || col.name == REGION_COLUMN {
                error(&spec.output, format!("column name {} is reserved", col.name));
                ok = false;
            }
            if !names.insert(col.name.as_str()) {
                error(&spec.output, format!("duplicate column {}", col.name));
                ok = false;
            }
            let type_ok = matches!(
                (col.dtype, &col.default),
                (DataType::String, Literal::Str(_)) | (DataType::Number, Literal::Num(_))
            );
            if !type_ok {
                error(&spec.output, format!("default of {} does not match its type", col.name));
                ok = false;
            }
        }
        if !ok {
            continue;
        }
        processes.push(ResolvedProcess {
            spec: spec.clone(),
            split: si,
            timeout_secs,
            meta: TableMeta {
                name: spec.output.clone(),
                camera_id: split.camera.camera_id.clone(),
                schema: spec.schema.clone(),
                max_rows: spec.max_rows,
                chunk: split.chunk,
                start_time: split.camera.start_time,
                first_frame: split.first_frame,
                n_chunks: split.n_chunks,
                n_regions: split.scheme.as_ref().map_or(1, |s| s.len() as u32),
                policy: split.policy,
            },
        });
    }

    let metas: BTreeMap<String, TableMeta> = processes
        .iter()
        .map(|p: &ResolvedProcess| (p.meta.name.clone(), p.meta.clone()))
        .collect();
    let mut analyzed = Vec::new();
    for (i, stmt) in plan.selects.iter().enumerate() {
        let label = format!("select #{}", i + 1);
        if let Some(c) = stmt.consuming {
            if !(c > 0.0 && c.is_finite()) {
                error(&label, format!("CONSUMING must be positive, got {c}"));
                continue;
            }
        }
        let mut tables = BTreeSet::new();
        collect_tables(&stmt.core.from, &mut tables);
        let missing: Vec<&String> = tables
            .iter()
            .filter(|t| !metas.contains_key(*t) && plan.process(t).is_none())
            .collect();
        if !missing.is_empty() {
            for t in missing {
                error(&label, format!("unknown table {t}"));
            }
            continue;
        }
        if tables.iter().any(|t| !metas.contains_key(t)) {
            // the producing statement already reported an error
            continue;
        }
        match analyze(stmt, &metas) {
            Ok(a) => {
                let cameras = tables.iter().map(|t| metas[t].camera_id.clone()).collect();
                analyzed.push((stmt.clone(), a, cameras));
            }
            Err(e) => error(&label, format!("{e}")),
        }
    }

    let default_eps = query_epsilon.unwrap_or_else(|| {
        splits
            .iter()
            .map(|s| s.camera.policy.epsilon)
            .fold(f64::INFINITY, f64::min)
    });
    let specified: f64 = analyzed
        .iter()
        .filter_map(|(s, a, _)| s.consuming.map(|c| c * a.release_count() as f64))
        .sum();
    let unspecified: usize = analyzed
        .iter()
        .filter(|(s, _, _)| s.consuming.is_none())
        .map(|(_, a, _)| a.release_count())
        .sum();
    let mut share = 0.0;
    if unspecified > 0 {
        let left = default_eps - specified;
        if !(left > 0.0 && left.is_finite()) {
            error(
                "query",
                format!("no budget left for statements without CONSUMING ({default_eps} total, {specified} claimed)"),
            );
        } else {
            share = left / unspecified as f64;
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    let selects: Vec<ResolvedSelect> = analyzed
        .into_iter()
        .map(|(stmt, analysis, cameras)| ResolvedSelect {
            epsilon: stmt.consuming.unwrap_or(share),
            stmt,
            analysis,
            cameras,
        })
        .collect();
    let total_epsilon = selects
        .iter()
        .map(|s| s.epsilon * s.analysis.release_count() as f64)
        .sum();
    Ok(ValidatedPlan {
        plan: plan.clone(),
        splits,
        processes,
        selects,
        total_epsilon,
    })
}

fn collect_tables(rel: &super::Relation, out: &mut BTreeSet<String>) {
    use super::Relation;
    match rel {
        Relation::Table(t) => {
            out.insert(t.clone());
        }
        Relation::Select(core) => collect_tables(&core.from, out),
        Relation::Join { left, right, .. } | Relation::Union(left, right) => {
            collect_tables(left, out);
            collect_tables(right, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_query;
    use crate::trace::Grid;
    use alloc::vec;

    fn registry() -> CameraRegistry {
        let mut r = CameraRegistry::new();
        r.insert(CameraMeta {
            camera_id: "camA".into(),
            fps: 1,
            start_time: 1_606_780_800,
            n_frames: 31 * 86400,
            grid: Grid::new(4, 4),
            policy: Policy::new(30.0, 1, 1.0).unwrap(),
            masks: Vec::new(),
            region_schemes: vec![RegionScheme::new(
                "halves",
                vec![
                    (0..4).flat_map(|r| [(0, r), (1, r)]).collect(),
                    (0..4).flat_map(|r| [(2, r), (3, r)]).collect(),
                ],
                BoundaryKind::Soft,
                Grid::new(4, 4),
            )
            .unwrap()],
        });
        r
    }

    const LISTING: &str = "
        SPLIT camA BEGIN 12-01-2020/12:00am END 01-01-2021/12:00am
            BY TIME 5sec STRIDE 0sec INTO chunksA;
        PROCESS chunksA USING model.py TIMEOUT 1sec PRODUCING 10 ROWS
            WITH SCHEMA (plate:STRING=\"\", color:STRING=\"\", speed:NUMBER=0) INTO tableA;
        SELECT AVG(range(speed, 30, 60)) FROM tableA CONSUMING 0.5;
        SELECT color, COUNT(*) FROM tableA GROUP BY color
            WITH KEYS [\"RED\", \"WHITE\", \"SILVER\"] CONSUMING 1/6;";

    #[test]
    fn listing_validates() {
        let v = validate(&parse_query(LISTING).unwrap(), &registry()).unwrap();
        assert_eq!(v.splits[0].n_chunks, 535_680);
        assert_eq!(v.selects.len(), 2);
        assert_eq!(v.selects[1].analysis.release_count(), 3);
        assert!((v.total_epsilon - 1.0).abs() < 1e-12);
        let res = v.reservations();
        assert_eq!(res.len(), 1);
        assert_eq!((res[0].first, res[0].end), (0, 31 * 86400));
        // span 7 chunks x 10 rows
        assert_eq!(v.selects[1].analysis.delta_q, 70.0);
        assert_eq!(v.selects[0].slots(), Some(5_356_800.0));
    }

    #[test]
    fn errors_are_collected_per_rule() {
        let q = "SPLIT camA BEGIN 0 END 1 BY TIME 5sec STRIDE 0sec BY REGION halves WITH MASK nope INTO c;
                 SPLIT camB BEGIN 0 END 1 BY TIME 5sec STRIDE 0sec INTO d;
                 PROCESS x USING p TIMEOUT 0sec PRODUCING 0 ROWS WITH SCHEMA (chunk:NUMBER=\"a\") INTO t;
                 SELECT SUM(v) FROM nowhere CONSUMING 0.1;";
        let errs = validate(&parse_query(q).unwrap(), &registry()).unwrap_err();
        let text: Vec<String> = errs.iter().map(|e| format!("{e}")).collect();
        assert!(text.iter().any(|e| e.contains("no mask nope")), "{text:?}");
        assert!(text.iter().any(|e| e.contains("1-frame chunks")), "{text:?}");
        assert!(text.iter().any(|e| e.contains("unknown camera camB")), "{text:?}");
        assert!(text.iter().any(|e| e.contains("unknown split x")), "{text:?}");
        assert!(text.iter().any(|e| e.contains("unknown table nowhere")), "{text:?}");
    }

    #[test]
    fn process_rules() {
        let q = "SPLIT camA BEGIN 1606780800 END 1606784400 BY TIME 5sec STRIDE 0sec INTO c;
                 PROCESS c USING p TIMEOUT 0sec PRODUCING 0 ROWS WITH SCHEMA (chunk:NUMBER=\"a\", v:NUMBER=0, v:STRING=\"\") INTO t;";
        let errs = validate(&parse_query(q).unwrap(), &registry()).unwrap_err();
        assert_eq!(errs.len(), 5, "{errs:?}");
    }

    #[test]
    fn default_budget_split() {
        let q = "SPLIT camA BEGIN 1606780800 END 1606784400 BY TIME 5sec STRIDE 0sec INTO c;
                 PROCESS c USING p TIMEOUT 1sec PRODUCING 2 ROWS WITH SCHEMA (v:NUMBER=0) INTO t;
                 SELECT COUNT(*) FROM t;
                 SELECT chunk, COUNT(*) FROM t GROUP BY chunk LIMIT 3 CONSUMING 0.001;
                 SELECT SUM(range(v, 0, 1)) FROM t;";
        let v = validate(&parse_query(q).unwrap(), &registry()).unwrap();
        let spent = 720.0 * 0.001;
        assert!((v.selects[0].epsilon - (1.0 - spent) / 2.0).abs() < 1e-12);
        assert!((v.total_epsilon - 1.0).abs() < 1e-12);

        let greedy = q.replace("0.001", "0.01");
        assert!(validate(&parse_query(&greedy).unwrap(), &registry()).is_err());
        assert!(validate_with(&parse_query(&greedy).unwrap(), &registry(), Some(10.0)).is_ok());
    }

    #[test]
    fn fractional_chunks_rejected() {
        let q = "SPLIT camA BEGIN 0 END 1 BY TIME 0.5sec STRIDE 0sec INTO c;";
        assert!(validate(&parse_query(q).unwrap(), &registry()).is_err());
    }
}
