//! Static bound on how much a `(rho, K)`-bounded event can move a release.
//!
//! Every relation carries a [`ConstraintSet`]: `delta`, the number of rows
//! that may differ between neighboring inputs; `cs`, an upper bound on its
//! row count; and a per-column value range. The bound for the base table
//! comes from the chunk geometry and is propagated operator by operator.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::chunking::max_chunk_span;
use crate::query::{AggFunc, Expr, Func, Literal, Relation, SelectCore, SelectItem, SelectStmt};
use crate::relational::{declared_tuples, expr_lineage, Domain, Lineage};
use crate::table::{TableMeta, Value, CHUNK_COLUMN, REGION_COLUMN};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensitivityError {
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("{0} needs a bounded value range; wrap the argument in range(x, lo, hi)")]
    MissingRange(AggFunc),
    #[error("{0} needs a bounded table size; add GROUP BY keys or LIMIT")]
    MissingSize(AggFunc),
    #[error("each side of a JOIN must be a GROUP BY on exactly the join columns")]
    JoinNotGrouped,
    #[error("UNION inputs must have the same columns")]
    UnionMismatch,
    #[error("column {0} must appear in GROUP BY or inside an aggregation")]
    NonKeyColumn(String),
    #[error("an inner SELECT may only aggregate under GROUP BY")]
    UngroupedAggregate,
    #[error("a released GROUP BY over non-chunk columns needs WITH KEYS")]
    KeysRequired,
    #[error("WITH KEYS needs one key list per GROUP BY expression")]
    KeyArity,
    #[error("ARGMAX needs WITH KEYS")]
    ArgmaxKeys,
    #[error("{0} can only be used inside an inner GROUP BY")]
    NotReleasable(AggFunc),
    #[error("a SELECT must release exactly one aggregation")]
    AggregationCount,
    #[error("{0}")]
    Unsupported(String),
}

/// Bound on a column's values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColRange {
    /// Every value lies in `[lo, hi]` (nulls count as absent).
    pub interval: Option<(f64, f64)>,
    /// Between neighboring inputs a row that exists on both sides changes
    /// this column by at most this much. Only kept while rows cannot appear
    /// or disappear.
    pub change: Option<f64>,
}

impl ColRange {
    pub const UNBOUND: ColRange = ColRange {
        interval: None,
        change: None,
    };

    pub fn interval(lo: f64, hi: f64) -> ColRange {
        ColRange {
            interval: Some((lo, hi)),
            change: None,
        }
    }

    /// Largest difference an absent-or-present row can make: the width of
    /// `[lo, hi]` extended to contain 0, or the change bound if smaller.
    pub fn width(&self) -> Option<f64> {
        let hull = self.interval.map(|(lo, hi)| hi.max(0.0) - lo.min(0.0));
        match (hull, self.change) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn hull(&self, other: &ColRange) -> ColRange {
        ColRange {
            interval: match (self.interval, other.interval) {
                (Some((a, b)), Some((c, d))) => Some((a.min(c), b.max(d))),
                _ => None,
            },
            change: match (self.change, other.change) {
                (Some(a), Some(b)) => Some(a.max(b)),
                _ => None,
            },
        }
    }

    fn without_change(&self) -> ColRange {
        ColRange {
            interval: self.interval,
            change: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub range: ColRange,
    pub lineage: Lineage,
}

/// Chunk geometry of one base table feeding a relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpan {
    pub k: u32,
    /// Chunks one segment can touch.
    pub span: u64,
    pub pitch_frames: u64,
    pub fps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    /// Rows that may differ between neighboring inputs.
    pub delta: f64,
    /// Upper bound on the row count, if known.
    pub cs: Option<f64>,
    pub columns: Vec<Column>,
    pub sources: Vec<SourceSpan>,
    /// Whether every differing row still carries the chunk time it came
    /// from (false after LIMIT shifts rows across chunks).
    pub local: bool,
    pub domain: Domain,
}

impl ConstraintSet {
    pub fn column(&self, name: &str) -> Result<&Column, SensitivityError> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| SensitivityError::UnknownColumn(name.into()))
    }

    fn lineage_of(&self, name: &str) -> Option<Lineage> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.lineage)
    }
}

/// `max_rows * K * span(rho)` for a base table.
pub fn base_sensitivity(meta: &TableMeta) -> f64 {
    meta.max_rows as f64 * f64::from(meta.policy.k) * max_chunk_span(meta.policy.rho, &meta.chunk) as f64
}

pub fn base_constraints(meta: &TableMeta) -> ConstraintSet {
    let mut columns: Vec<Column> = meta
        .schema
        .iter()
        .map(|c| Column {
            name: c.name.clone(),
            range: ColRange::UNBOUND,
            lineage: Lineage::Analyst,
        })
        .collect();
    let t_last = meta.chunk_time(meta.n_chunks.saturating_sub(1));
    columns.push(Column {
        name: CHUNK_COLUMN.into(),
        range: ColRange::interval(meta.chunk_time(0), t_last),
        lineage: Lineage::Chunk,
    });
    columns.push(Column {
        name: REGION_COLUMN.into(),
        range: ColRange::interval(0.0, f64::from(meta.n_regions.max(1) - 1)),
        lineage: Lineage::Region,
    });
    ConstraintSet {
        delta: base_sensitivity(meta),
        cs: Some(meta.n_chunks as f64 * f64::from(meta.n_regions.max(1)) * meta.max_rows as f64),
        columns,
        sources: alloc::vec![SourceSpan {
            k: meta.policy.k,
            span: max_chunk_span(meta.policy.rho, &meta.chunk),
            pitch_frames: meta.chunk.pitch_frames,
            fps: meta.chunk.fps,
        }],
        local: true,
        domain: Domain::from_meta(meta),
    }
}

/// A relational operator with its expressions already resolved to column
/// bounds.
#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    /// WHERE; `trusted_only` when the predicate reads only trusted columns.
    Filter {
        trusted_only: bool,
    },
    Limit(u64),
    /// Projection to the given output columns.
    Project(Vec<Column>),
    GroupBy {
        /// Lineage of each grouping expression.
        keys: Vec<Lineage>,
        /// Number of declared key tuples, if WITH KEYS was given.
        declared: Option<usize>,
        /// Output columns, keys included.
        outputs: Vec<Column>,
    },
    Join {
        on: Vec<String>,
        outer: bool,
    },
    Union,
}

/// Constraint set of an operator's output from those of its inputs.
pub fn propagate(op: &Operator, inputs: &[ConstraintSet]) -> Result<ConstraintSet, SensitivityError> {
    let input = &inputs[0];
    Ok(match op {
        Operator::Filter { trusted_only } => {
            let mut out = input.clone();
            if !trusted_only {
                for c in &mut out.columns {
                    c.range = c.range.without_change();
                }
            }
            out
        }
        Operator::Limit(x) => {
            let mut out = input.clone();
            let x = *x as f64;
            out.cs = Some(out.cs.map_or(x, |c| c.min(x)));
            out.local = false;
            for c in &mut out.columns {
                c.range = c.range.without_change();
            }
            out
        }
        Operator::Project(cols) => ConstraintSet {
            columns: cols.clone(),
            ..input.clone()
        },
        Operator::GroupBy {
            keys,
            declared,
            outputs,
        } => {
            let trusted = declared.is_none() && !keys.is_empty() && keys.iter().all(Lineage::is_trusted);
            if trusted {
                let tuples = input.domain.key_tuples(keys).len() as f64;
                let mut delta = input.delta.min(tuples);
                if input.local {
                    delta = delta.min(touched_groups(keys, &input.sources));
                }
                ConstraintSet {
                    delta,
                    cs: Some(tuples),
                    columns: outputs.clone(),
                    ..input.clone()
                }
            } else {
                ConstraintSet {
                    delta: input.delta,
                    cs: declared.map(|n| n as f64),
                    columns: outputs.clone(),
                    ..input.clone()
                }
            }
        }
        Operator::Join { on, outer } => {
            let right = &inputs[1];
            let mut columns = Vec::new();
            let mut trusted_keys = true;
            for c in &input.columns {
                if on.contains(&c.name) {
                    let r = right.column(&c.name)?;
                    let lineage = if r.lineage == c.lineage {
                        c.lineage
                    } else {
                        Lineage::Analyst
                    };
                    trusted_keys &= lineage.is_trusted();
                    columns.push(Column {
                        name: c.name.clone(),
                        range: c.range.hull(&r.range).without_change(),
                        lineage,
                    });
                } else {
                    columns.push(c.clone());
                }
            }
            for c in &right.columns {
                if !on.contains(&c.name) {
                    columns.push(c.clone());
                }
            }
            if !trusted_keys {
                for c in &mut columns {
                    c.range = c.range.without_change();
                }
            }
            let cs = if *outer {
                input.cs.zip(right.cs).map(|(a, b)| a + b)
            } else {
                match (input.cs, right.cs) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            };
            let mut sources = input.sources.clone();
            sources.extend_from_slice(&right.sources);
            ConstraintSet {
                delta: input.delta + right.delta,
                cs,
                columns,
                sources,
                local: input.local && right.local,
                domain: input.domain.merge(&right.domain),
            }
        }
        Operator::Union => {
            let right = &inputs[1];
            if input.columns.len() != right.columns.len() {
                return Err(SensitivityError::UnionMismatch);
            }
            let columns = input
                .columns
                .iter()
                .zip(&right.columns)
                .map(|(a, b)| Column {
                    name: a.name.clone(),
                    range: a.range.hull(&b.range),
                    lineage: if a.lineage == b.lineage {
                        a.lineage
                    } else {
                        Lineage::Analyst
                    },
                })
                .collect();
            let mut sources = input.sources.clone();
            sources.extend_from_slice(&right.sources);
            ConstraintSet {
                delta: input.delta + right.delta,
                cs: input.cs.zip(right.cs).map(|(a, b)| a + b),
                columns,
                sources,
                local: input.local && right.local,
                domain: input.domain.merge(&right.domain),
            }
        }
    })
}

/// Groups of a trusted GROUP BY one event can change, summed over sources:
/// a segment touching `span` chunks spans `(span - 1) * pitch` frames of
/// chunk start times, which meet at most `ceil(L / bin) + 1` bins.
fn touched_groups(keys: &[Lineage], sources: &[SourceSpan]) -> f64 {
    sources
        .iter()
        .map(|s| {
            let per_segment = if keys.contains(&Lineage::Chunk) {
                s.span as f64
            } else {
                let mut bins = 1.0f64;
                let mut any_bin = false;
                for k in keys {
                    if let Lineage::ChunkBin(f) = k {
                        any_bin = true;
                        let l = (s.span - 1) as f64 * s.pitch_frames as f64;
                        let b = f.seconds() * f64::from(s.fps);
                        bins *= libm::ceil(l / b - 1e-9).max(0.0) + 1.0;
                    }
                }
                if any_bin {
                    bins.min(s.span as f64)
                } else {
                    s.span as f64
                }
            };
            f64::from(s.k) * per_segment
        })
        .sum()
}

/// Sensitivity of one release: COUNT `delta`, SUM `delta * cr`,
/// AVG `delta * cr / cs`, VAR `(delta * cr)^2 / cs`, ARGMAX `delta`.
pub fn aggregation_sensitivity(
    agg: AggFunc,
    delta: f64,
    cr: Option<f64>,
    cs: Option<f64>,
) -> Result<f64, SensitivityError> {
    let need_cr = || cr.ok_or(SensitivityError::MissingRange(agg));
    let need_cs = || match cs {
        Some(c) if c > 0.0 => Ok(c),
        _ => Err(SensitivityError::MissingSize(agg)),
    };
    match agg {
        AggFunc::Count | AggFunc::Argmax => Ok(delta),
        AggFunc::Sum => Ok(delta * need_cr()?),
        AggFunc::Avg => {
            let cr = need_cr()?;
            Ok(delta * cr / need_cs()?)
        }
        AggFunc::Var => {
            let cr = need_cr()?;
            Ok((delta * cr) * (delta * cr) / need_cs()?)
        }
        AggFunc::Min | AggFunc::Max => Err(SensitivityError::NotReleasable(agg)),
    }
}

/// Static analysis of one released statement.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectAnalysis {
    pub agg: AggFunc,
    /// Constraints of the relation the aggregation runs over.
    pub input: ConstraintSet,
    pub cr: Option<f64>,
    /// Sensitivity of each release.
    pub delta_q: f64,
    /// One entry per release (empty key for ungrouped statements); for
    /// ARGMAX the candidate keys, which together form a single release.
    pub keys: Vec<Vec<Value>>,
}

impl SelectAnalysis {
    pub fn release_count(&self) -> usize {
        if self.agg == AggFunc::Argmax {
            1
        } else {
            self.keys.len()
        }
    }
}

/// Looks up base table metadata by name.
pub trait TableCatalog {
    fn table(&self, name: &str) -> Option<&TableMeta>;
}

impl TableCatalog for alloc::collections::BTreeMap<String, TableMeta> {
    fn table(&self, name: &str) -> Option<&TableMeta> {
        self.get(name)
    }
}

/// Analyzes a top-level statement.
pub fn analyze(stmt: &SelectStmt, tables: &dyn TableCatalog) -> Result<SelectAnalysis, SensitivityError> {
    let core = &stmt.core;
    let mut aggs = Vec::new();
    for item in &core.items {
        if let SelectItem::Expr { expr, .. } = item {
            match expr {
                Expr::Agg(f, arg) => aggs.push((*f, arg.as_deref())),
                e if e.contains_agg() => {
                    return Err(SensitivityError::Unsupported(format!(
                        "the released aggregation must be a plain aggregate call, got {e}"
                    )))
                }
                _ => {}
            }
        }
    }
    if aggs.len() != 1 {
        return Err(SensitivityError::AggregationCount);
    }
    let (agg, arg) = aggs[0];
    let mut rel = analyze_relation(&core.from, tables)?;
    if let Some(f) = &core.filter {
        check_columns(f, &rel)?;
        rel = propagate(
            &Operator::Filter {
                trusted_only: trusted_only(f, &rel),
            },
            &[rel],
        )?;
    }
    if let Some(n) = core.limit {
        rel = propagate(&Operator::Limit(n), &[rel])?;
    }
    if let Some(a) = arg {
        if a.contains_agg() {
            return Err(SensitivityError::Unsupported("nested aggregation".into()));
        }
        check_columns(a, &rel)?;
    }
    let cr = arg.map_or(Some(0.0), |a| expr_range(a, &rel).width());

    let keys = if agg == AggFunc::Argmax {
        if core.group_by.is_some() {
            return Err(SensitivityError::Unsupported("ARGMAX with GROUP BY".into()));
        }
        let keys = stmt.argmax_keys.as_ref().ok_or(SensitivityError::ArgmaxKeys)?;
        if keys.is_empty() || arg.is_none() {
            return Err(SensitivityError::ArgmaxKeys);
        }
        keys.iter().map(|k| alloc::vec![Value::from(k)]).collect()
    } else {
        match &core.group_by {
            None => alloc::vec![Vec::new()],
            Some(g) => {
                for k in &g.keys {
                    if k.contains_agg() {
                        return Err(SensitivityError::Unsupported("aggregate in GROUP BY".into()));
                    }
                    check_columns(k, &rel)?;
                }
                let lineage: Vec<Lineage> = g.keys.iter().map(|k| expr_lineage(k, &|c| rel.lineage_of(c))).collect();
                match &g.key_values {
                    Some(lists) => {
                        if lists.len() != g.keys.len() {
                            return Err(SensitivityError::KeyArity);
                        }
                        declared_tuples(lists)
                    }
                    None if lineage.iter().all(Lineage::is_trusted) => rel.domain.key_tuples(&lineage),
                    None => return Err(SensitivityError::KeysRequired),
                }
            }
        }
    };
    if let Some(g) = &core.group_by {
        for item in &core.items {
            if let SelectItem::Expr { expr, .. } = item {
                if !expr.contains_agg() && !g.keys.contains(expr) {
                    return Err(SensitivityError::NonKeyColumn(expr.default_name()));
                }
            } else {
                return Err(SensitivityError::Unsupported("SELECT * with an aggregation".into()));
            }
        }
    } else if core.items.len() != 1 {
        return Err(SensitivityError::NonKeyColumn(
            core.items
                .iter()
                .find_map(|i| match i {
                    SelectItem::Expr { expr, .. } if !expr.contains_agg() => Some(expr.default_name()),
                    _ => None,
                })
                .unwrap_or_else(|| "*".into()),
        ));
    }
    let delta_q = aggregation_sensitivity(agg, rel.delta, cr, rel.cs)?;
    Ok(SelectAnalysis {
        agg,
        input: rel,
        cr,
        delta_q,
        keys,
    })
}

/// Constraint set of a FROM clause.
pub fn analyze_relation(rel: &Relation, tables: &dyn TableCatalog) -> Result<ConstraintSet, SensitivityError> {
    match rel {
        Relation::Table(name) => tables
            .table(name)
            .map(base_constraints)
            .ok_or_else(|| SensitivityError::UnknownTable(name.clone())),
        Relation::Select(core) => analyze_core(core, tables),
        Relation::Union(l, r) => {
            let a = analyze_relation(l, tables)?;
            let b = analyze_relation(r, tables)?;
            let names_a: Vec<&str> = a.columns.iter().map(|c| c.name.as_str()).collect();
            let names_b: Vec<&str> = b.columns.iter().map(|c| c.name.as_str()).collect();
            if names_a != names_b {
                return Err(SensitivityError::UnionMismatch);
            }
            propagate(&Operator::Union, &[a, b])
        }
        Relation::Join { left, right, on, outer } => {
            for side in [left, right] {
                let Relation::Select(core) = &**side else {
                    return Err(SensitivityError::JoinNotGrouped);
                };
                let Some(g) = &core.group_by else {
                    return Err(SensitivityError::JoinNotGrouped);
                };
                let key_names: BTreeSet<String> = core
                    .items
                    .iter()
                    .filter_map(|i| match i {
                        SelectItem::Expr { expr, alias } if g.keys.contains(expr) => {
                            Some(alias.clone().unwrap_or_else(|| expr.default_name()))
                        }
                        _ => None,
                    })
                    .collect();
                let on_names: BTreeSet<String> = on.iter().cloned().collect();
                if key_names != on_names || on_names.len() != g.keys.len() {
                    return Err(SensitivityError::JoinNotGrouped);
                }
            }
            let a = analyze_relation(left, tables)?;
            let b = analyze_relation(right, tables)?;
            propagate(
                &Operator::Join {
                    on: on.clone(),
                    outer: *outer,
                },
                &[a, b],
            )
        }
    }
}

/// Constraint set of an inner SELECT.
pub fn analyze_core(core: &SelectCore, tables: &dyn TableCatalog) -> Result<ConstraintSet, SensitivityError> {
    let mut rel = analyze_relation(&core.from, tables)?;
    if let Some(f) = &core.filter {
        if f.contains_agg() {
            return Err(SensitivityError::Unsupported("aggregate in WHERE".into()));
        }
        check_columns(f, &rel)?;
        rel = propagate(
            &Operator::Filter {
                trusted_only: trusted_only(f, &rel),
            },
            &[rel],
        )?;
    }
    let mut out = match &core.group_by {
        None => {
            let mut cols = Vec::new();
            for item in &core.items {
                match item {
                    SelectItem::Star => cols.extend(rel.columns.iter().cloned()),
                    SelectItem::Expr { expr, alias } => {
                        if expr.contains_agg() {
                            return Err(SensitivityError::UngroupedAggregate);
                        }
                        check_columns(expr, &rel)?;
                        cols.push(Column {
                            name: alias.clone().unwrap_or_else(|| expr.default_name()),
                            range: expr_range(expr, &rel),
                            lineage: expr_lineage(expr, &|c| rel.lineage_of(c)),
                        });
                    }
                }
            }
            propagate(&Operator::Project(cols), &[rel])?
        }
        Some(g) => {
            for k in &g.keys {
                if k.contains_agg() {
                    return Err(SensitivityError::Unsupported("aggregate in GROUP BY".into()));
                }
                check_columns(k, &rel)?;
            }
            let keys: Vec<Lineage> = g.keys.iter().map(|k| expr_lineage(k, &|c| rel.lineage_of(c))).collect();
            if let Some(lists) = &g.key_values {
                if lists.len() != g.keys.len() {
                    return Err(SensitivityError::KeyArity);
                }
            }
            let trusted = g.key_values.is_none() && keys.iter().all(Lineage::is_trusted);
            let mut outputs = Vec::new();
            for item in &core.items {
                let SelectItem::Expr { expr, alias } = item else {
                    return Err(SensitivityError::Unsupported("SELECT * with GROUP BY".into()));
                };
                let name = alias.clone().unwrap_or_else(|| expr.default_name());
                if let Some(i) = g.keys.iter().position(|k| k == expr) {
                    let mut range = expr_range(expr, &rel);
                    range.change = None;
                    outputs.push(Column {
                        name,
                        range,
                        lineage: keys[i],
                    });
                    continue;
                }
                let range = grouped_range(expr, &g.keys, &rel, trusted)?;
                outputs.push(Column {
                    name,
                    range,
                    lineage: Lineage::Analyst,
                });
            }
            propagate(
                &Operator::GroupBy {
                    keys,
                    declared: g.key_values.as_ref().map(|l| declared_tuples(l).len()),
                    outputs,
                },
                &[rel],
            )?
        }
    };
    if let Some(n) = core.limit {
        out = propagate(&Operator::Limit(n), &[out])?;
    }
    Ok(out)
}

fn check_columns(expr: &Expr, rel: &ConstraintSet) -> Result<(), SensitivityError> {
    match expr {
        Expr::Column(c) => rel.column(c).map(|_| ()),
        Expr::Lit(_) => Ok(()),
        Expr::Unary(_, e) => check_columns(e, rel),
        Expr::Binary(_, a, b) => {
            check_columns(a, rel)?;
            check_columns(b, rel)
        }
        Expr::Call(f, args) => {
            if *f == Func::Range {
                match (&args[1], &args[2]) {
                    (Expr::Lit(Literal::Num(lo)), Expr::Lit(Literal::Num(hi))) if lo <= hi => {}
                    _ => {
                        return Err(SensitivityError::Unsupported(
                            "range() bounds must be numeric literals with lo <= hi".into(),
                        ))
                    }
                }
            }
            if *f == Func::Bin && !matches!(&args[1], Expr::Lit(Literal::Num(w)) if *w > 0.0) {
                return Err(SensitivityError::Unsupported(
                    "bin() width must be a positive literal".into(),
                ));
            }
            args.iter().try_for_each(|a| check_columns(a, rel))
        }
        Expr::Agg(_, arg) => arg.as_deref().map_or(Ok(()), |a| check_columns(a, rel)),
    }
}

fn trusted_only(expr: &Expr, rel: &ConstraintSet) -> bool {
    match expr {
        Expr::Column(c) => rel.lineage_of(c).is_some_and(|l| l.is_trusted()),
        Expr::Lit(_) => true,
        Expr::Unary(_, e) => trusted_only(e, rel),
        Expr::Binary(_, a, b) => trusted_only(a, rel) && trusted_only(b, rel),
        Expr::Call(_, args) => args.iter().all(|a| trusted_only(a, rel)),
        Expr::Agg(..) => false,
    }
}

/// Row-level range of an expression.
pub fn expr_range(expr: &Expr, rel: &ConstraintSet) -> ColRange {
    match expr {
        Expr::Column(c) => rel.column(c).map_or(ColRange::UNBOUND, |c| c.range),
        Expr::Lit(Literal::Num(v)) => ColRange {
            interval: Some((*v, *v)),
            change: Some(0.0),
        },
        Expr::Call(Func::Range, args) => clamp(expr_range(&args[0], rel), &args[1], &args[2]),
        _ => ColRange::UNBOUND,
    }
}

/// `range(e, lo, hi)` bounds the values, and since clamping never widens
/// differences a change bound on `e` survives.
fn clamp(inner: ColRange, lo: &Expr, hi: &Expr) -> ColRange {
    match (lo, hi) {
        (Expr::Lit(Literal::Num(lo)), Expr::Lit(Literal::Num(hi))) => ColRange {
            interval: Some((*lo, *hi)),
            change: inner.change,
        },
        _ => ColRange::UNBOUND,
    }
}

/// Range of a per-group output expression. Under a trusted grouping every
/// group exists on both neighboring inputs, so aggregates also get a change
/// bound.
fn grouped_range(expr: &Expr, keys: &[Expr], rel: &ConstraintSet, trusted: bool) -> Result<ColRange, SensitivityError> {
    match expr {
        Expr::Agg(f, arg) => {
            if let Some(a) = arg {
                if a.contains_agg() {
                    return Err(SensitivityError::Unsupported("nested aggregation".into()));
                }
            }
            let arg_range = arg.as_deref().map(|a| expr_range(a, rel));
            let (interval, change) = match f {
                AggFunc::Count => (rel.cs.map(|c| (0.0, c)), Some(rel.delta)),
                AggFunc::Sum => (None, arg_range.and_then(|r| r.width()).map(|w| rel.delta * w)),
                AggFunc::Avg | AggFunc::Min | AggFunc::Max => (arg_range.and_then(|r| r.interval), None),
                AggFunc::Var => (None, None),
                AggFunc::Argmax => return Err(SensitivityError::NotReleasable(*f)),
            };
            Ok(ColRange {
                interval,
                change: if trusted { change } else { None },
            })
        }
        Expr::Column(c) if keys.iter().any(|k| k == expr) => Ok(rel.column(c)?.range.without_change()),
        Expr::Column(c) => Err(SensitivityError::NonKeyColumn(c.clone())),
        Expr::Lit(Literal::Num(v)) => Ok(ColRange::interval(*v, *v)),
        Expr::Lit(_) => Ok(ColRange::UNBOUND),
        Expr::Call(Func::Range, args) => {
            let inner = grouped_range(&args[0], keys, rel, trusted)?;
            Ok(clamp(inner, &args[1], &args[2]))
        }
        Expr::Unary(_, e) => grouped_range(e, keys, rel, trusted).map(|_| ColRange::UNBOUND),
        Expr::Binary(_, a, b) => {
            grouped_range(a, keys, rel, trusted)?;
            grouped_range(b, keys, rel, trusted)?;
            Ok(ColRange::UNBOUND)
        }
        Expr::Call(_, args) => {
            for a in args {
                grouped_range(a, keys, rel, trusted)?;
            }
            Ok(ColRange::UNBOUND)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunking::ChunkSpec;
    use crate::query::{parse_query, ColumnDef, DataType};
    use crate::trace::Policy;
    use alloc::collections::BTreeMap;

    fn meta(name: &str, rho: f64, chunk: u64, max_rows: u64, n_chunks: u64) -> TableMeta {
        TableMeta {
            name: name.into(),
            camera_id: "c".into(),
            schema: alloc::vec![
                ColumnDef {
                    name: "plate".into(),
                    dtype: DataType::String,
                    default: Literal::Str(String::new()),
                },
                ColumnDef {
                    name: "speed".into(),
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
            policy: Policy::new(rho, 1, 1.0).unwrap(),
        }
    }

    fn catalog(ms: &[TableMeta]) -> BTreeMap<String, TableMeta> {
        ms.iter().map(|m| (m.name.clone(), m.clone())).collect()
    }

    fn analyze_text(q: &str, cat: &BTreeMap<String, TableMeta>) -> Result<SelectAnalysis, SensitivityError> {
        analyze(&parse_query(q).unwrap().selects[0], cat)
    }

    #[test]
    fn table_formulas() {
        assert_eq!(aggregation_sensitivity(AggFunc::Count, 140.0, None, None), Ok(140.0));
        assert_eq!(
            aggregation_sensitivity(AggFunc::Sum, 140.0, Some(30.0), None),
            Ok(4200.0)
        );
        assert_eq!(
            aggregation_sensitivity(AggFunc::Avg, 140.0, Some(30.0), Some(10.0)),
            Ok(420.0)
        );
        assert_eq!(
            aggregation_sensitivity(AggFunc::Var, 2.0, Some(3.0), Some(4.0)),
            Ok(9.0)
        );
        assert_eq!(
            aggregation_sensitivity(AggFunc::Sum, 1.0, None, None),
            Err(SensitivityError::MissingRange(AggFunc::Sum))
        );
        assert_eq!(
            aggregation_sensitivity(AggFunc::Avg, 1.0, Some(1.0), None),
            Err(SensitivityError::MissingSize(AggFunc::Avg))
        );
    }

    #[test]
    fn base_table() {
        // 30 s events over 5 s chunks touch 7 chunks, 20 rows each
        let cat = catalog(&[meta("t", 30.0, 5, 20, 100)]);
        let a = analyze_text("SELECT COUNT(*) FROM t;", &cat).unwrap();
        assert_eq!(a.delta_q, 140.0);
        let a = analyze_text("SELECT SUM(range(speed, 30, 60)) FROM t;", &cat).unwrap();
        assert_eq!(a.cr, Some(60.0));
        let a = analyze_text("SELECT SUM(range(speed, -10, 20)) FROM t LIMIT 5;", &cat).unwrap();
        assert_eq!(a.delta_q, 140.0 * 30.0);
        assert_eq!(a.input.cs, Some(5.0));
    }

    #[test]
    fn stateless_function_drops_range() {
        let cat = catalog(&[meta("t", 30.0, 5, 1, 100)]);
        let e = analyze_text(
            "SELECT SUM(speed * 2) FROM (SELECT range(speed, 0, 1) AS speed FROM t);",
            &cat,
        );
        assert_eq!(e.unwrap_err(), SensitivityError::MissingRange(AggFunc::Sum));
        let ok = analyze_text(
            "SELECT SUM(speed) FROM (SELECT range(speed, 0, 1) AS speed FROM t);",
            &cat,
        );
        assert_eq!(ok.unwrap().delta_q, 7.0);
    }

    #[test]
    fn hourly_bins() {
        // rho = 0, 30 min chunks: one chunk, one hour bin per segment
        let cat = catalog(&[meta("t", 0.0, 1800, 5, 48)]);
        let q =
            "SELECT AVG(range(n, 0, 100)) FROM (SELECT hour(chunk) AS h, COUNT(*) AS n FROM t GROUP BY hour(chunk));";
        let a = analyze_text(q, &cat).unwrap();
        assert_eq!(a.input.delta, 1.0);
        assert_eq!(a.input.cs, Some(24.0));
        // Cr is the smaller of the declared width and the per-hour count change
        assert_eq!(a.cr, Some(5.0));
        assert!((a.delta_q - 5.0 / 24.0).abs() < 1e-12);

        // rho = 2 h over 30 min chunks: span 5, covering at most 3 hour bins
        let cat = catalog(&[meta("t", 7200.0, 1800, 5, 48)]);
        let a = analyze_text(q, &cat).unwrap();
        assert_eq!(a.input.delta, 3.0);
    }

    #[test]
    fn releases_and_keys() {
        let cat = catalog(&[meta("t", 30.0, 5, 10, 12)]);
        let a = analyze_text(
            "SELECT plate, COUNT(*) FROM t GROUP BY plate WITH KEYS [\"RED\", \"WHITE\", \"SILVER\"];",
            &cat,
        )
        .unwrap();
        assert_eq!(a.release_count(), 3);
        assert_eq!(
            analyze_text("SELECT plate, COUNT(*) FROM t GROUP BY plate;", &cat).unwrap_err(),
            SensitivityError::KeysRequired
        );
        let a = analyze_text("SELECT chunk, COUNT(*) FROM t GROUP BY chunk;", &cat).unwrap();
        assert_eq!(a.release_count(), 12);
        let a = analyze_text("SELECT ARGMAX(plate) FROM t WITH KEYS [\"a\", \"b\"];", &cat).unwrap();
        assert_eq!((a.release_count(), a.delta_q), (1, 70.0));
        assert_eq!(
            analyze_text("SELECT speed, COUNT(*) FROM t GROUP BY plate WITH KEYS [\"a\"];", &cat).unwrap_err(),
            SensitivityError::NonKeyColumn("speed".into())
        );
    }

    #[test]
    fn joins_and_unions() {
        let cat = catalog(&[meta("a", 30.0, 5, 2, 12), meta("b", 0.0, 5, 3, 12)]);
        let q = "SELECT COUNT(*) FROM (SELECT plate, COUNT(*) AS n FROM a GROUP BY plate) \
                 JOIN (SELECT plate, COUNT(*) AS m FROM b GROUP BY plate) ON plate;";
        assert_eq!(analyze_text(q, &cat).unwrap().delta_q, 14.0 + 3.0);
        let bad = "SELECT COUNT(*) FROM a JOIN b ON plate;";
        assert_eq!(analyze_text(bad, &cat).unwrap_err(), SensitivityError::JoinNotGrouped);
        let u = analyze_text("SELECT COUNT(*) FROM a UNION b;", &cat).unwrap();
        assert_eq!(u.delta_q, 17.0);
        assert_eq!(u.input.cs, Some(24.0 + 36.0));
    }
}
