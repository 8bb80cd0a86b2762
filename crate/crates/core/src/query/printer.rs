//! Canonical text form. `parse_query(&plan.to_string())` yields `plan`.

use core::fmt::{self, Display, Formatter, Write};

use super::*;

fn num(f: &mut Formatter<'_>, v: f64) -> fmt::Result {
    write!(f, "{v:?}")
}

fn string(f: &mut Formatter<'_>, s: &str) -> fmt::Result {
    f.write_char('"')?;
    for ch in s.chars() {
        match ch {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c => f.write_char(c)?,
        }
    }
    f.write_char('"')
}

/// Names are printed bare when they lex back as the same identifier.
fn name(f: &mut Formatter<'_>, s: &str) -> fmt::Result {
    let bare = s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !is_keyword(s);
    if bare {
        f.write_str(s)
    } else {
        string(f, s)
    }
}

fn is_keyword(s: &str) -> bool {
    const WORDS: [&str; 30] = [
        "SELECT",
        "FROM",
        "WHERE",
        "GROUP",
        "BY",
        "LIMIT",
        "WITH",
        "KEYS",
        "CONSUMING",
        "JOIN",
        "OUTER",
        "FULL",
        "ON",
        "UNION",
        "AS",
        "AND",
        "OR",
        "NOT",
        "SPLIT",
        "PROCESS",
        "INTO",
        "BEGIN",
        "END",
        "STRIDE",
        "USING",
        "TIMEOUT",
        "PRODUCING",
        "SCHEMA",
        "MASK",
        "REGION",
    ];
    WORDS.iter().any(|w| w.eq_ignore_ascii_case(s))
}

impl Display for Literal {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Num(v) => num(f, *v),
            Literal::Str(s) => string(f, s),
        }
    }
}

impl Display for DurationLit {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            DurationLit::Seconds(s) => write!(f, "{s:?}sec"),
            DurationLit::Frames(n) => write!(f, "{n}frames"),
        }
    }
}

impl Display for DataType {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataType::String => "STRING",
            DataType::Number => "NUMBER",
        })
    }
}

impl Display for AggFunc {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggFunc::Count => "COUNT",
            AggFunc::Sum => "SUM",
            AggFunc::Avg => "AVG",
            AggFunc::Var => "VAR",
            AggFunc::Min => "MIN",
            AggFunc::Max => "MAX",
            AggFunc::Argmax => "ARGMAX",
        })
    }
}

impl Display for Func {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Func::Range => "range",
            Func::Hour => "hour",
            Func::Day => "day",
            Func::Bin => "bin",
            Func::Abs => "abs",
            Func::Floor => "floor",
            Func::Ceil => "ceil",
        })
    }
}

impl Display for BinOp {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Eq => "=",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "AND",
            BinOp::Or => "OR",
        })
    }
}

impl Display for Expr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Column(c) => name(f, c),
            Expr::Lit(l) => write!(f, "{l}"),
            Expr::Unary(UnOp::Neg, e) => write!(f, "-({e})"),
            Expr::Unary(UnOp::Not, e) => write!(f, "(NOT ({e}))"),
            Expr::Binary(op, l, r) => write!(f, "({l} {op} {r})"),
            Expr::Call(func, args) => {
                write!(f, "{func}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_char(')')
            }
            Expr::Agg(func, None) => write!(f, "{func}(*)"),
            Expr::Agg(func, Some(arg)) => write!(f, "{func}({arg})"),
        }
    }
}

fn literal_list(f: &mut Formatter<'_>, lits: &[Literal]) -> fmt::Result {
    f.write_char('[')?;
    for (i, l) in lits.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{l}")?;
    }
    f.write_char(']')
}

impl Display for Relation {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Relation::Table(t) => name(f, t),
            Relation::Select(core) => write!(f, "({core})"),
            Relation::Join { left, right, on, outer } => {
                let kw = if *outer { "OUTER JOIN" } else { "JOIN" };
                write!(f, "{left} {kw} ")?;
                // a join or union on the right must keep its grouping
                match **right {
                    Relation::Join { .. } | Relation::Union(..) => write!(f, "({right})")?,
                    _ => write!(f, "{right}")?,
                }
                f.write_str(" ON ")?;
                for (i, c) in on.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    name(f, c)?;
                }
                Ok(())
            }
            Relation::Union(l, r) => match **r {
                Relation::Join { .. } | Relation::Union(..) => write!(f, "{l} UNION ({r})"),
                _ => write!(f, "{l} UNION {r}"),
            },
        }
    }
}

impl Display for SelectCore {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        for (i, item) in self.items.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            match item {
                SelectItem::Star => f.write_char('*')?,
                SelectItem::Expr { expr, alias } => {
                    write!(f, "{expr}")?;
                    if let Some(a) = alias {
                        f.write_str(" AS ")?;
                        name(f, a)?;
                    }
                }
            }
        }
        write!(f, " FROM {}", self.from)?;
        if let Some(w) = &self.filter {
            write!(f, " WHERE {w}")?;
        }
        if let Some(g) = &self.group_by {
            f.write_str(" GROUP BY ")?;
            for (i, k) in g.keys.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{k}")?;
            }
            if let Some(lists) = &g.key_values {
                f.write_str(" WITH KEYS ")?;
                for (i, l) in lists.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    literal_list(f, l)?;
                }
            }
        }
        if let Some(n) = self.limit {
            write!(f, " LIMIT {n}")?;
        }
        Ok(())
    }
}

impl Display for SelectStmt {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.core)?;
        if let Some(keys) = &self.argmax_keys {
            f.write_str(" WITH KEYS ")?;
            literal_list(f, keys)?;
        }
        if let Some(c) = self.consuming {
            f.write_str(" CONSUMING ")?;
            num(f, c)?;
        }
        Ok(())
    }
}

impl Display for SplitSpec {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str("SPLIT ")?;
        name(f, &self.camera_id)?;
        write!(
            f,
            " BEGIN {} END {} BY TIME {} STRIDE {}",
            self.begin, self.end, self.chunk, self.stride
        )?;
        if let Some(r) = &self.region_scheme {
            f.write_str(" BY REGION ")?;
            name(f, r)?;
        }
        if let Some(m) = &self.mask {
            f.write_str(" WITH MASK ")?;
            name(f, m)?;
        }
        f.write_str(" INTO ")?;
        name(f, &self.output)
    }
}

impl Display for ProcessSpec {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str("PROCESS ")?;
        name(f, &self.input)?;
        f.write_str(" USING ")?;
        if self.executable.is_empty()
            || self.executable.starts_with("--")
            || self.executable.starts_with("/*")
            || self
                .executable
                .contains(|c: char| c.is_whitespace() || c == ';' || c == '"' || c == '\'')
        {
            string(f, &self.executable)?;
        } else {
            f.write_str(&self.executable)?;
        }
        write!(
            f,
            " TIMEOUT {} PRODUCING {} ROWS WITH SCHEMA (",
            self.timeout, self.max_rows
        )?;
        for (i, c) in self.schema.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            name(f, &c.name)?;
            write!(f, ":{}={}", c.dtype, c.default)?;
        }
        f.write_str(") INTO ")?;
        name(f, &self.output)
    }
}

impl Display for QueryPlan {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        for s in &self.splits {
            writeln!(f, "{s};")?;
        }
        for p in &self.processes {
            writeln!(f, "{p};")?;
        }
        for s in &self.selects {
            writeln!(f, "{s};")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_query;
    use alloc::string::ToString;

    #[test]
    fn round_trip_samples() {
        let texts = [
            "SPLIT \"cam 1\" BEGIN 0 END 3600 BY TIME 5sec STRIDE -2sec BY REGION lanes WITH MASK m INTO c;\
             PROCESS c USING ./bin/x TIMEOUT 1.5sec PRODUCING 3 ROWS WITH SCHEMA (plate:STRING=\"\", n:NUMBER=-1) INTO t;\
             SELECT hour(chunk) AS h, SUM(range(n, -2, 5)) FROM t WHERE NOT (n = 2) OR plate != 'a\"b' GROUP BY hour(chunk) LIMIT 4 CONSUMING 0.25;",
            "SELECT COUNT(*) FROM (SELECT plate, COUNT(*) AS k FROM a GROUP BY plate) OUTER JOIN (SELECT plate, COUNT(*) AS j FROM b GROUP BY plate) ON plate UNION (c UNION d);",
            "SELECT ARGMAX(color) FROM t WITH KEYS [\"RED\", 1.5, -2];",
            "SELECT AVG(-(n) * -3) FROM \"select\";",
        ];
        for t in texts {
            let plan = parse_query(t).unwrap();
            let printed = plan.to_string();
            assert_eq!(parse_query(&printed).unwrap(), plan, "{printed}");
        }
    }
}
