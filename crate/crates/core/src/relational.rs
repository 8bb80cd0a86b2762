//! Evaluation of SELECT statements over intermediate tables.
//!
//! Rows keep a deterministic order: base tables are ordered by
//! `(chunk, region, emission order)`, filters and projections preserve it,
//! group outputs follow key order and unions concatenate left then right.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use crate::query::{AggFunc, BinOp, Expr, Func, GroupBy, Literal, Relation, SelectCore, SelectItem, SelectStmt, UnOp};
use crate::table::{IntermediateTable, TableMeta, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct EvalError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, EvalError> {
    Err(EvalError(msg.into()))
}

/// Time bucketing applied to a chunk start time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinFn {
    Hour,
    Day,
    Width(f64),
}

impl BinFn {
    pub fn seconds(&self) -> f64 {
        match *self {
            BinFn::Hour => 3600.0,
            BinFn::Day => 86400.0,
            BinFn::Width(w) => w,
        }
    }

    pub fn apply(&self, t: f64) -> f64 {
        floor_to(t, self.seconds())
    }
}

fn floor_to(t: f64, w: f64) -> f64 {
    libm::floor(t / w) * w
}

/// Where a column's values come from. Only columns whose values the engine
/// itself assigned (chunk times, regions and bins of them) are trusted as
/// grouping keys with a public domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lineage {
    Chunk,
    ChunkBin(BinFn),
    Region,
    Analyst,
}

impl Lineage {
    pub fn is_trusted(&self) -> bool {
        !matches!(self, Lineage::Analyst)
    }
}

/// Lineage of an expression given the lineage of each column.
pub fn expr_lineage(expr: &Expr, column: &dyn Fn(&str) -> Option<Lineage>) -> Lineage {
    match expr {
        Expr::Column(c) => column(c).unwrap_or(Lineage::Analyst),
        Expr::Call(f, args) if !args.is_empty() && expr_lineage(&args[0], column) == Lineage::Chunk => {
            match (f, args.get(1)) {
                (Func::Hour, None) => Lineage::ChunkBin(BinFn::Hour),
                (Func::Day, None) => Lineage::ChunkBin(BinFn::Day),
                (Func::Bin, Some(Expr::Lit(Literal::Num(w)))) if *w > 0.0 => Lineage::ChunkBin(BinFn::Width(*w)),
                _ => Lineage::Analyst,
            }
        }
        _ => Lineage::Analyst,
    }
}

/// Public domain of the trusted columns: every chunk start time in the
/// split windows and the number of regions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Domain {
    /// Sorted and deduplicated.
    pub chunk_times: Vec<f64>,
    pub regions: u32,
}

impl Domain {
    pub fn from_meta(meta: &TableMeta) -> Domain {
        Domain {
            chunk_times: (0..meta.n_chunks).map(|k| meta.chunk_time(k)).collect(),
            regions: meta.n_regions.max(1),
        }
    }

    pub fn merge(&self, other: &Domain) -> Domain {
        let mut chunk_times = self.chunk_times.clone();
        chunk_times.extend_from_slice(&other.chunk_times);
        chunk_times.sort_by(f64::total_cmp);
        chunk_times.dedup();
        Domain {
            chunk_times,
            regions: self.regions.max(other.regions),
        }
    }

    /// Distinct values a trusted column can take, ascending.
    pub fn values(&self, lineage: Lineage) -> Vec<Value> {
        match lineage {
            Lineage::Chunk => self.chunk_times.iter().map(|t| Value::Num(*t)).collect(),
            Lineage::ChunkBin(f) => {
                let mut v: Vec<f64> = self.chunk_times.iter().map(|t| f.apply(*t)).collect();
                v.dedup();
                v.into_iter().map(Value::Num).collect()
            }
            Lineage::Region => (0..self.regions).map(|r| Value::Num(f64::from(r))).collect(),
            Lineage::Analyst => Vec::new(),
        }
    }

    /// Cartesian product of the domains of `keys`, lexicographic.
    pub fn key_tuples(&self, keys: &[Lineage]) -> Vec<Vec<Value>> {
        let mut out = vec![Vec::new()];
        for &k in keys {
            let vals = self.values(k);
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    vals.iter().map(move |v| {
                        let mut t = prefix.clone();
                        t.push(v.clone());
                        t
                    })
                })
                .collect();
        }
        out
    }
}

/// Cartesian product of declared key lists, in declaration order.
pub fn declared_tuples(lists: &[Vec<Literal>]) -> Vec<Vec<Value>> {
    let mut out = vec![Vec::new()];
    for list in lists {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<Value>| {
                list.iter().map(move |l| {
                    let mut t = prefix.clone();
                    t.push(Value::from(l));
                    t
                })
            })
            .collect();
    }
    out
}

/// A relation during evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Rel {
    pub columns: Vec<String>,
    pub lineage: Vec<Lineage>,
    pub rows: Vec<Vec<Value>>,
    pub domain: Domain,
}

impl Rel {
    pub fn from_table(t: &IntermediateTable) -> Rel {
        let mut lineage = vec![Lineage::Analyst; t.meta.schema.len()];
        lineage.push(Lineage::Chunk);
        lineage.push(Lineage::Region);
        let rows = t
            .rows
            .iter()
            .map(|r| {
                let mut v = r.values.clone();
                v.push(Value::Num(t.meta.chunk_time(r.chunk_index)));
                v.push(Value::Num(f64::from(r.region)));
                v
            })
            .collect();
        Rel {
            columns: t.meta.column_names(),
            lineage,
            rows,
            domain: Domain::from_meta(&t.meta),
        }
    }

    pub fn index_of(&self, col: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == col)
    }

    fn lineage_of(&self, col: &str) -> Option<Lineage> {
        self.index_of(col).map(|i| self.lineage[i])
    }
}

pub type Tables = BTreeMap<String, IntermediateTable>;

/// Evaluates a FROM clause.
pub fn eval_relation(rel: &Relation, tables: &Tables) -> Result<Rel, EvalError> {
    match rel {
        Relation::Table(name) => match tables.get(name) {
            Some(t) => Ok(Rel::from_table(t)),
            None => err(format!("unknown table {name}")),
        },
        Relation::Select(core) => eval_core(core, tables),
        Relation::Union(l, r) => {
            let mut l = eval_relation(l, tables)?;
            let r = eval_relation(r, tables)?;
            if l.columns.len() != r.columns.len() {
                return err("UNION inputs have different column counts");
            }
            for (a, b) in l.lineage.iter_mut().zip(&r.lineage) {
                if a != b {
                    *a = Lineage::Analyst;
                }
            }
            l.rows.extend(r.rows);
            l.domain = l.domain.merge(&r.domain);
            Ok(l)
        }
        Relation::Join { left, right, on, outer } => {
            let l = eval_relation(left, tables)?;
            let r = eval_relation(right, tables)?;
            join(l, r, on, *outer)
        }
    }
}

fn join(l: Rel, r: Rel, on: &[String], outer: bool) -> Result<Rel, EvalError> {
    let mut lk = Vec::new();
    let mut rk = Vec::new();
    for c in on {
        match (l.index_of(c), r.index_of(c)) {
            (Some(a), Some(b)) => {
                lk.push(a);
                rk.push(b);
            }
            _ => return err(format!("join column {c} missing on one side")),
        }
    }
    let r_extra: Vec<usize> = (0..r.columns.len()).filter(|i| !rk.contains(i)).collect();
    let mut columns = l.columns.clone();
    let mut lineage = l.lineage.clone();
    for &i in &r_extra {
        columns.push(r.columns[i].clone());
        lineage.push(r.lineage[i]);
    }
    let same = |a: &[Value], ai: &[usize], b: &[Value], bi: &[usize]| {
        ai.iter()
            .zip(bi)
            .all(|(&x, &y)| a[x].total_cmp(&b[y]) == Ordering::Equal && a[x] != Value::Null)
    };
    let mut rows = Vec::new();
    let mut r_used = vec![false; r.rows.len()];
    for lrow in &l.rows {
        let mut matched = false;
        for (j, rrow) in r.rows.iter().enumerate() {
            if same(lrow, &lk, rrow, &rk) {
                matched = true;
                r_used[j] = true;
                let mut row = lrow.clone();
                row.extend(r_extra.iter().map(|&i| rrow[i].clone()));
                rows.push(row);
            }
        }
        if outer && !matched {
            let mut row = lrow.clone();
            row.extend(r_extra.iter().map(|_| Value::Null));
            rows.push(row);
        }
    }
    if outer {
        for (j, rrow) in r.rows.iter().enumerate() {
            if !r_used[j] {
                let mut row = vec![Value::Null; l.columns.len()];
                for (&a, &b) in lk.iter().zip(&rk) {
                    row[a] = rrow[b].clone();
                }
                row.extend(r_extra.iter().map(|&i| rrow[i].clone()));
                rows.push(row);
            }
        }
    }
    Ok(Rel {
        columns,
        lineage,
        rows,
        domain: l.domain.merge(&r.domain),
    })
}

/// Evaluates a scalar expression on one row. Aggregates are rejected.
pub fn eval_expr(expr: &Expr, rel: &Rel, row: &[Value]) -> Result<Value, EvalError> {
    match expr {
        Expr::Column(c) => match rel.index_of(c) {
            Some(i) => Ok(row[i].clone()),
            None => err(format!("unknown column {c}")),
        },
        Expr::Lit(l) => Ok(Value::from(l)),
        Expr::Unary(op, e) => Ok(unary(*op, eval_expr(e, rel, row)?)),
        Expr::Binary(op, a, b) => Ok(binary(*op, eval_expr(a, rel, row)?, eval_expr(b, rel, row)?)),
        Expr::Call(f, args) => {
            let vals = args
                .iter()
                .map(|a| eval_expr(a, rel, row))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(call(*f, &vals))
        }
        Expr::Agg(..) => err("aggregation outside GROUP BY"),
    }
}

fn unary(op: UnOp, v: Value) -> Value {
    match (op, v) {
        (UnOp::Neg, Value::Num(x)) => Value::Num(-x),
        (UnOp::Not, Value::Null) => Value::Null,
        (UnOp::Not, v) => bool_val(!v.truthy()),
        _ => Value::Null,
    }
}

fn bool_val(b: bool) -> Value {
    Value::Num(if b { 1.0 } else { 0.0 })
}

fn binary(op: BinOp, a: Value, b: Value) -> Value {
    use BinOp::*;
    match op {
        And => bool_val(a.truthy() && b.truthy()),
        Or => bool_val(a.truthy() || b.truthy()),
        Eq | Ne | Lt | Le | Gt | Ge => {
            let ord = match (&a, &b) {
                (Value::Num(x), Value::Num(y)) => x.partial_cmp(y),
                (Value::Str(x), Value::Str(y)) => Some(x.cmp(y)),
                _ => None,
            };
            let Some(ord) = ord else {
                return bool_val(false);
            };
            bool_val(match op {
                Eq => ord == Ordering::Equal,
                Ne => ord != Ordering::Equal,
                Lt => ord == Ordering::Less,
                Le => ord != Ordering::Greater,
                Gt => ord == Ordering::Greater,
                _ => ord != Ordering::Less,
            })
        }
        Add | Sub | Mul | Div => match (a, b) {
            (Value::Num(x), Value::Num(y)) => {
                let v = match op {
                    Add => x + y,
                    Sub => x - y,
                    Mul => x * y,
                    _ => x / y,
                };
                if v.is_finite() {
                    Value::Num(v)
                } else {
                    Value::Null
                }
            }
            _ => Value::Null,
        },
    }
}

fn call(f: Func, args: &[Value]) -> Value {
    let nums: Vec<Option<f64>> = args.iter().map(Value::as_num).collect();
    let x = match nums.first().copied().flatten() {
        Some(x) => x,
        None => return Value::Null,
    };
    let v = match f {
        Func::Range => match (nums.get(1).copied().flatten(), nums.get(2).copied().flatten()) {
            (Some(lo), Some(hi)) => x.max(lo).min(hi),
            _ => return Value::Null,
        },
        Func::Hour => floor_to(x, 3600.0),
        Func::Day => floor_to(x, 86400.0),
        Func::Bin => match nums.get(1).copied().flatten() {
            Some(w) if w > 0.0 => floor_to(x, w),
            _ => return Value::Null,
        },
        Func::Abs => x.abs(),
        Func::Floor => libm::floor(x),
        Func::Ceil => libm::ceil(x),
    };
    Value::Num(v)
}

/// Result of an aggregation over a group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggResult {
    pub value: f64,
    /// The group had no contributing rows.
    pub empty: bool,
}

/// Computes an aggregate over `rows`. AVG and VAR divide by `slots` when
/// given, treating absent rows as zeros; otherwise by the number of values.
pub fn aggregate(
    func: AggFunc,
    arg: Option<&Expr>,
    rel: &Rel,
    rows: &[&Vec<Value>],
    slots: Option<f64>,
) -> Result<AggResult, EvalError> {
    let Some(arg) = arg else {
        return match func {
            AggFunc::Count => Ok(AggResult {
                value: rows.len() as f64,
                empty: rows.is_empty(),
            }),
            _ => err(format!("{func}(*) is not supported")),
        };
    };
    let mut vals = Vec::with_capacity(rows.len());
    let mut non_null = 0usize;
    for r in rows {
        let v = eval_expr(arg, rel, r)?;
        if v != Value::Null {
            non_null += 1;
        }
        if let Value::Num(x) = v {
            vals.push(x);
        }
    }
    let m = vals.len() as f64;
    let sum: f64 = vals.iter().sum();
    let empty = vals.is_empty();
    let value = match func {
        AggFunc::Count => {
            return Ok(AggResult {
                value: non_null as f64,
                empty: non_null == 0,
            })
        }
        AggFunc::Sum => sum,
        AggFunc::Avg => {
            let n = slots.unwrap_or(m);
            if n > 0.0 {
                sum / n
            } else {
                0.0
            }
        }
        AggFunc::Var => {
            let n = slots.unwrap_or(m);
            if n > 0.0 {
                let mean = sum / n;
                let ss: f64 = vals.iter().map(|x| (x - mean) * (x - mean)).sum();
                (ss + (n - m).max(0.0) * mean * mean) / n
            } else {
                0.0
            }
        }
        AggFunc::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
        AggFunc::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AggFunc::Argmax => return err("ARGMAX is only valid as a released aggregation"),
    };
    Ok(AggResult {
        value: if empty && matches!(func, AggFunc::Min | AggFunc::Max) {
            0.0
        } else {
            value
        },
        empty,
    })
}

fn apply_filter(rel: &mut Rel, filter: Option<&Expr>) -> Result<(), EvalError> {
    if let Some(f) = filter {
        let mut kept = Vec::with_capacity(rel.rows.len());
        for row in core::mem::take(&mut rel.rows) {
            if eval_expr(f, rel, &row)?.truthy() {
                kept.push(row);
            }
        }
        rel.rows = kept;
    }
    Ok(())
}

/// Evaluates an inner SELECT to a relation.
pub fn eval_core(core: &SelectCore, tables: &Tables) -> Result<Rel, EvalError> {
    let mut rel = eval_relation(&core.from, tables)?;
    apply_filter(&mut rel, core.filter.as_ref())?;
    let mut out = match &core.group_by {
        None => project(core, &rel)?,
        Some(g) => {
            let groups = group(&rel, g)?;
            let mut columns = Vec::new();
            let mut lineage = Vec::new();
            for item in &core.items {
                let SelectItem::Expr { expr, alias } = item else {
                    return err("SELECT * cannot be combined with GROUP BY");
                };
                columns.push(alias.clone().unwrap_or_else(|| expr.default_name()));
                lineage.push(match g.keys.iter().position(|k| k == expr) {
                    Some(i) => groups.lineage[i],
                    None => Lineage::Analyst,
                });
            }
            let mut rows = Vec::with_capacity(groups.groups.len());
            for (key, members) in &groups.groups {
                let mut row = Vec::with_capacity(core.items.len());
                for item in &core.items {
                    if let SelectItem::Expr { expr, .. } = item {
                        row.push(eval_grouped(expr, &g.keys, key, &rel, members)?);
                    }
                }
                rows.push(row);
            }
            Rel {
                columns,
                lineage,
                rows,
                domain: rel.domain.clone(),
            }
        }
    };
    if let Some(n) = core.limit {
        out.rows.truncate(usize::try_from(n).unwrap_or(usize::MAX));
    }
    Ok(out)
}

fn project(core: &SelectCore, rel: &Rel) -> Result<Rel, EvalError> {
    let mut columns = Vec::new();
    let mut lineage = Vec::new();
    for item in &core.items {
        match item {
            SelectItem::Star => {
                columns.extend(rel.columns.iter().cloned());
                lineage.extend(rel.lineage.iter().copied());
            }
            SelectItem::Expr { expr, alias } => {
                if expr.contains_agg() {
                    return err("aggregation in a SELECT without GROUP BY");
                }
                columns.push(alias.clone().unwrap_or_else(|| expr.default_name()));
                lineage.push(expr_lineage(expr, &|c| rel.lineage_of(c)));
            }
        }
    }
    let mut rows = Vec::with_capacity(rel.rows.len());
    for row in &rel.rows {
        let mut out = Vec::with_capacity(columns.len());
        for item in &core.items {
            match item {
                SelectItem::Star => out.extend(row.iter().cloned()),
                SelectItem::Expr { expr, .. } => out.push(eval_expr(expr, rel, row)?),
            }
        }
        rows.push(out);
    }
    Ok(Rel {
        columns,
        lineage,
        rows,
        domain: rel.domain.clone(),
    })
}

struct Groups<'a> {
    lineage: Vec<Lineage>,
    groups: Vec<(Vec<Value>, Vec<&'a Vec<Value>>)>,
}

/// Groups rows by key. With declared keys the groups are exactly the
/// declared tuples; with trusted keys they are every tuple of the public
/// domain; otherwise the distinct observed tuples in ascending order.
fn group<'a>(rel: &'a Rel, g: &GroupBy) -> Result<Groups<'a>, EvalError> {
    let lineage: Vec<Lineage> = g.keys.iter().map(|k| expr_lineage(k, &|c| rel.lineage_of(c))).collect();
    let mut keyed: Vec<(Vec<Value>, &Vec<Value>)> = Vec::with_capacity(rel.rows.len());
    for row in &rel.rows {
        let key = g
            .keys
            .iter()
            .map(|k| eval_expr(k, rel, row))
            .collect::<Result<Vec<_>, _>>()?;
        keyed.push((key, row));
    }
    let tuples = if let Some(lists) = &g.key_values {
        declared_tuples(lists)
    } else if lineage.iter().all(Lineage::is_trusted) {
        rel.domain.key_tuples(&lineage)
    } else {
        let mut seen: Vec<Vec<Value>> = keyed.iter().map(|(k, _)| k.clone()).collect();
        seen.sort_by(|a, b| cmp_tuple(a, b));
        seen.dedup_by(|a, b| cmp_tuple(a, b) == Ordering::Equal);
        seen
    };
    let mut index: BTreeMap<TupleKey, usize> = BTreeMap::new();
    for (i, t) in tuples.iter().enumerate() {
        index.entry(TupleKey(t.clone())).or_insert(i);
    }
    let mut groups: Vec<(Vec<Value>, Vec<&Vec<Value>>)> = tuples.into_iter().map(|t| (t, Vec::new())).collect();
    for (key, row) in keyed {
        if let Some(&i) = index.get(&TupleKey(key)) {
            groups[i].1.push(row);
        }
    }
    Ok(Groups { lineage, groups })
}

fn cmp_tuple(a: &[Value], b: &[Value]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

struct TupleKey(Vec<Value>);

impl PartialEq for TupleKey {
    fn eq(&self, other: &Self) -> bool {
        cmp_tuple(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for TupleKey {}
impl PartialOrd for TupleKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for TupleKey {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_tuple(&self.0, &other.0)
    }
}

/// Evaluates a select item for one group. Key expressions (and bare key
/// columns) evaluate to the key, aggregates run over the group's rows.
fn eval_grouped(
    expr: &Expr,
    keys: &[Expr],
    key: &[Value],
    rel: &Rel,
    rows: &[&Vec<Value>],
) -> Result<Value, EvalError> {
    if let Some(i) = keys.iter().position(|k| k == expr) {
        return Ok(key[i].clone());
    }
    match expr {
        Expr::Agg(f, arg) => {
            let r = aggregate(*f, arg.as_deref(), rel, rows, None)?;
            if r.empty && matches!(f, AggFunc::Min | AggFunc::Max | AggFunc::Avg) {
                Ok(Value::Null)
            } else {
                Ok(Value::Num(r.value))
            }
        }
        Expr::Column(c) => err(format!("column {c} must appear in GROUP BY or inside an aggregation")),
        Expr::Lit(l) => Ok(Value::from(l)),
        Expr::Unary(op, e) => Ok(unary(*op, eval_grouped(e, keys, key, rel, rows)?)),
        Expr::Binary(op, a, b) => Ok(binary(
            *op,
            eval_grouped(a, keys, key, rel, rows)?,
            eval_grouped(b, keys, key, rel, rows)?,
        )),
        Expr::Call(f, args) => {
            let vals = args
                .iter()
                .map(|a| eval_grouped(a, keys, key, rel, rows))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(call(*f, &vals))
        }
    }
}

/// One released quantity before noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseValue {
    /// Group key, or the candidate key for ARGMAX scores; empty otherwise.
    pub key: Vec<Value>,
    pub value: f64,
    pub empty: bool,
}

/// Evaluates a top-level statement. Returns one value per release, or for
/// ARGMAX one count per candidate key. `slots` is the public size bound
/// used as the AVG/VAR denominator; `None` gives the plain mean.
pub fn evaluate(stmt: &SelectStmt, tables: &Tables, slots: Option<f64>) -> Result<Vec<ReleaseValue>, EvalError> {
    let core = &stmt.core;
    let Some((func, arg)) = stmt.aggregation() else {
        return err("statement has no aggregation");
    };
    let mut rel = eval_relation(&core.from, tables)?;
    apply_filter(&mut rel, core.filter.as_ref())?;
    if let Some(n) = core.limit {
        rel.rows.truncate(usize::try_from(n).unwrap_or(usize::MAX));
    }
    if func == AggFunc::Argmax {
        let Some(keys) = &stmt.argmax_keys else {
            return err("ARGMAX requires WITH KEYS");
        };
        let Some(arg) = arg else {
            return err("ARGMAX needs an argument");
        };
        let mut vals = Vec::with_capacity(rel.rows.len());
        for row in &rel.rows {
            vals.push(eval_expr(arg, &rel, row)?);
        }
        return Ok(keys
            .iter()
            .map(|k| {
                let n = vals.iter().filter(|v| v.matches(k)).count();
                ReleaseValue {
                    key: vec![Value::from(k)],
                    value: n as f64,
                    empty: n == 0,
                }
            })
            .collect());
    }
    match &core.group_by {
        None => {
            let rows: Vec<&Vec<Value>> = rel.rows.iter().collect();
            let r = aggregate(func, arg, &rel, &rows, slots)?;
            Ok(vec![ReleaseValue {
                key: Vec::new(),
                value: r.value,
                empty: r.empty,
            }])
        }
        Some(g) => {
            let groups = group(&rel, g)?;
            groups
                .groups
                .iter()
                .map(|(key, rows)| {
                    let r = aggregate(func, arg, &rel, rows, slots)?;
                    Ok(ReleaseValue {
                        key: key.clone(),
                        value: r.value,
                        empty: r.empty,
                    })
                })
                .collect()
        }
    }
}
