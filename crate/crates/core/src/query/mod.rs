//! The split / process / select query language.
//!
//! ```text
//! SPLIT camA BEGIN 12-01-2020/12:00am END 01-01-2021/12:00am
//!     BY TIME 5sec STRIDE 0sec [BY REGION lanes] [WITH MASK m1] INTO chunksA;
//! PROCESS chunksA USING model.py TIMEOUT 1sec PRODUCING 10 ROWS
//!     WITH SCHEMA (plate:STRING="", speed:NUMBER=0) INTO tableA;
//! SELECT AVG(range(speed, 30, 60)) FROM tableA CONSUMING 0.5;
//! ```
//!
//! Parsing is purely syntactic; name resolution and the privacy rules are
//! checked by [`validate`](validate::validate) against camera metadata.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

mod lexer;
mod parser;
mod printer;
pub mod validate;

pub use parser::parse_query;
pub use validate::{validate, ValidatedPlan, ValidationError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

/// A duration as written in the query, converted to frames once the
/// camera's frame rate is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DurationLit {
    Seconds(f64),
    Frames(i64),
}

impl DurationLit {
    /// Whole frames at `fps`, or `None` if the duration is fractional.
    pub fn to_frames(&self, fps: u32) -> Option<i64> {
        match *self {
            DurationLit::Frames(n) => Some(n),
            DurationLit::Seconds(s) => {
                let f = s * f64::from(fps);
                let r = libm::round(f);
                if (f - r).abs() < 1e-9 && r.abs() < 9.0e15 {
                    Some(r as i64)
                } else {
                    None
                }
            }
        }
    }

    pub fn seconds(&self, fps: u32) -> f64 {
        match *self {
            DurationLit::Frames(n) => n as f64 / f64::from(fps),
            DurationLit::Seconds(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Num(f64),
    Str(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    String,
    Number,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnDef {
    pub name: String,
    pub dtype: DataType,
    pub default: Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub camera_id: String,
    /// Epoch seconds, inclusive.
    pub begin: i64,
    /// Epoch seconds, exclusive.
    pub end: i64,
    pub chunk: DurationLit,
    pub stride: DurationLit,
    pub region_scheme: Option<String>,
    pub mask: Option<String>,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSpec {
    pub input: String,
    pub executable: String,
    pub timeout: DurationLit,
    pub max_rows: u64,
    pub schema: Vec<ColumnDef>,
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

/// Stateless scalar functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    /// `range(e, lo, hi)`: clamps and declares the column range.
    Range,
    Hour,
    Day,
    /// `bin(e, seconds)`: floor to a multiple of `seconds`.
    Bin,
    Abs,
    Floor,
    Ceil,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    Count,
    Sum,
    Avg,
    Var,
    Min,
    Max,
    Argmax,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column(String),
    Lit(Literal),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    /// `arg == None` is `COUNT(*)`.
    Agg(AggFunc, Option<Box<Expr>>),
}

impl Expr {
    pub fn col(name: impl Into<String>) -> Expr {
        Expr::Column(name.into())
    }

    pub fn num(v: f64) -> Expr {
        Expr::Lit(Literal::Num(v))
    }

    pub fn contains_agg(&self) -> bool {
        match self {
            Expr::Agg(..) => true,
            Expr::Column(_) | Expr::Lit(_) => false,
            Expr::Unary(_, e) => e.contains_agg(),
            Expr::Binary(_, l, r) => l.contains_agg() || r.contains_agg(),
            Expr::Call(_, args) => args.iter().any(Expr::contains_agg),
        }
    }

    /// Output column name when no alias is given.
    pub fn default_name(&self) -> String {
        match self {
            Expr::Column(c) => c.clone(),
            Expr::Call(Func::Range, args) if !args.is_empty() => args[0].default_name(),
            other => alloc::format!("{other}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Star,
    Expr { expr: Expr, alias: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupBy {
    pub keys: Vec<Expr>,
    /// One key list per grouping expression.
    pub key_values: Option<Vec<Vec<Literal>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Relation {
    Table(String),
    Select(Box<SelectCore>),
    Join {
        left: Box<Relation>,
        right: Box<Relation>,
        on: Vec<String>,
        outer: bool,
    },
    Union(Box<Relation>, Box<Relation>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectCore {
    pub items: Vec<SelectItem>,
    pub from: Relation,
    pub filter: Option<Expr>,
    pub group_by: Option<GroupBy>,
    pub limit: Option<u64>,
}

/// A top-level SELECT: exactly one aggregation, one release per key.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectStmt {
    pub core: SelectCore,
    /// Candidate keys of an `ARGMAX` aggregation.
    pub argmax_keys: Option<Vec<Literal>>,
    /// Budget per release.
    pub consuming: Option<f64>,
}

impl SelectStmt {
    /// The aggregation the statement releases.
    pub fn aggregation(&self) -> Option<(AggFunc, Option<&Expr>)> {
        self.core.items.iter().find_map(|it| match it {
            SelectItem::Expr {
                expr: Expr::Agg(f, arg),
                ..
            } => Some((*f, arg.as_deref())),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Split(SplitSpec),
    Process(ProcessSpec),
    Select(SelectStmt),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryPlan {
    pub splits: Vec<SplitSpec>,
    pub processes: Vec<ProcessSpec>,
    pub selects: Vec<SelectStmt>,
}

impl QueryPlan {
    pub fn split(&self, name: &str) -> Option<&SplitSpec> {
        self.splits.iter().find(|s| s.output == name)
    }

    pub fn process(&self, name: &str) -> Option<&ProcessSpec> {
        self.processes.iter().find(|p| p.output == name)
    }
}
