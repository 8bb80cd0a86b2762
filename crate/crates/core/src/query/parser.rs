use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::lexer::{Lexer, Tok};
use super::*;

const RESERVED: [&str; 30] = [
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

/// Parses a complete query: statements separated by `;`.
pub fn parse_query(text: &str) -> Result<QueryPlan, ParseError> {
    let mut p = Parser { lx: Lexer::new(text) };
    let mut plan = QueryPlan::default();
    let mut names = BTreeSet::new();
    loop {
        let (tok, pos, _) = p.lx.peek()?;
        let name_pos;
        match tok {
            Tok::Eof => break,
            Tok::Sym(";") => {
                p.lx.next()?;
                continue;
            }
            Tok::Ident(ref w) if w.eq_ignore_ascii_case("SPLIT") => {
                let s = p.split()?;
                name_pos = (s.output.clone(), pos);
                plan.splits.push(s);
            }
            Tok::Ident(ref w) if w.eq_ignore_ascii_case("PROCESS") => {
                let s = p.process()?;
                name_pos = (s.output.clone(), pos);
                plan.processes.push(s);
            }
            Tok::Ident(ref w) if w.eq_ignore_ascii_case("SELECT") => {
                plan.selects.push(p.select_stmt()?);
                p.end_statement()?;
                continue;
            }
            _ => return Err(p.lx.err(pos, "expected SPLIT, PROCESS or SELECT")),
        }
        if !names.insert(name_pos.0.clone()) {
            return Err(p.lx.err(name_pos.1, format!("duplicate name {:?}", name_pos.0)));
        }
        p.end_statement()?;
    }
    if plan.splits.is_empty() && plan.processes.is_empty() && plan.selects.is_empty() {
        return Err(p.lx.err(0, "empty query"));
    }
    Ok(plan)
}

struct Parser<'a> {
    lx: Lexer<'a>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Result<(Tok, usize), ParseError> {
        self.lx.peek().map(|(t, s, _)| (t, s))
    }

    fn is_kw(&self, kw: &str) -> Result<bool, ParseError> {
        Ok(matches!(self.peek()?.0, Tok::Ident(w) if w.eq_ignore_ascii_case(kw)))
    }

    fn eat_kw(&mut self, kw: &str) -> Result<bool, ParseError> {
        if self.is_kw(kw)? {
            self.lx.next()?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn kw(&mut self, kw: &str) -> Result<(), ParseError> {
        let (tok, pos) = self.peek()?;
        if self.eat_kw(kw)? {
            Ok(())
        } else {
            Err(self.lx.err(pos, format!("expected {kw}, found {}", describe(&tok))))
        }
    }

    fn is_sym(&self, sym: &str) -> Result<bool, ParseError> {
        Ok(matches!(self.peek()?.0, Tok::Sym(s) if s == sym))
    }

    fn eat_sym(&mut self, sym: &str) -> Result<bool, ParseError> {
        if self.is_sym(sym)? {
            self.lx.next()?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn sym(&mut self, sym: &str) -> Result<(), ParseError> {
        let (tok, pos) = self.peek()?;
        if self.eat_sym(sym)? {
            Ok(())
        } else {
            Err(self.lx.err(pos, format!("expected '{sym}', found {}", describe(&tok))))
        }
    }

    fn end_statement(&mut self) -> Result<(), ParseError> {
        let (tok, pos) = self.peek()?;
        match tok {
            Tok::Sym(";") => {
                self.lx.next()?;
                Ok(())
            }
            Tok::Eof => Ok(()),
            other => Err(self.lx.err(pos, format!("expected ';', found {}", describe(&other)))),
        }
    }

    /// A name: identifier that is not a reserved word, or a quoted string.
    fn name(&mut self) -> Result<String, ParseError> {
        let (tok, pos) = self.lx.next()?;
        match tok {
            Tok::Ident(w) if !is_reserved(&w) => Ok(w),
            Tok::Str(s) => Ok(s),
            other => Err(self.lx.err(pos, format!("expected a name, found {}", describe(&other)))),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let neg = self.eat_sym("-")?;
        let (tok, pos) = self.lx.next()?;
        match tok {
            Tok::Num(v) => Ok(if neg { -v } else { v }),
            other => Err(self
                .lx
                .err(pos, format!("expected a number, found {}", describe(&other)))),
        }
    }

    fn duration(&mut self) -> Result<DurationLit, ParseError> {
        let (_, pos) = self.peek()?;
        let v = self.number()?;
        let unit = match self.peek()?.0 {
            Tok::Ident(u) if unit_scale(&u).is_some() => {
                self.lx.next()?;
                u
            }
            _ => String::new(),
        };
        match unit_scale(&unit) {
            Some(None) => {
                if libm::trunc(v) != v || v.abs() > 9.0e15 {
                    return Err(self.lx.err(pos, "frame counts must be whole numbers"));
                }
                Ok(DurationLit::Frames(v as i64))
            }
            Some(Some(scale)) => Ok(DurationLit::Seconds(v * scale)),
            None => Ok(DurationLit::Seconds(v)),
        }
    }

    fn timestamp(&mut self) -> Result<i64, ParseError> {
        let (word, pos) = self.lx.raw_word()?;
        parse_timestamp(&word).ok_or_else(|| self.lx.err(pos, format!("bad timestamp {word:?}")))
    }

    fn split(&mut self) -> Result<SplitSpec, ParseError> {
        self.kw("SPLIT")?;
        let camera_id = self.name()?;
        self.kw("BEGIN")?;
        let begin = self.timestamp()?;
        self.kw("END")?;
        let end = self.timestamp()?;
        self.kw("BY")?;
        self.kw("TIME")?;
        let chunk = self.duration()?;
        self.kw("STRIDE")?;
        let stride = self.duration()?;
        let mut region_scheme = None;
        let mut mask = None;
        loop {
            if self.is_kw("BY")? {
                self.lx.next()?;
                self.kw("REGION")?;
                region_scheme = Some(self.name()?);
            } else if self.is_kw("WITH")? {
                self.lx.next()?;
                self.kw("MASK")?;
                mask = Some(self.name()?);
            } else {
                break;
            }
        }
        self.kw("INTO")?;
        let output = self.name()?;
        Ok(SplitSpec {
            camera_id,
            begin,
            end,
            chunk,
            stride,
            region_scheme,
            mask,
            output,
        })
    }

    fn process(&mut self) -> Result<ProcessSpec, ParseError> {
        self.kw("PROCESS")?;
        let input = self.name()?;
        self.kw("USING")?;
        let (executable, _) = self.lx.raw_word()?;
        self.kw("TIMEOUT")?;
        let timeout = self.duration()?;
        self.kw("PRODUCING")?;
        let (_, pos) = self.peek()?;
        let n = self.number()?;
        if n < 0.0 || libm::trunc(n) != n || n > 1.0e12 {
            return Err(self.lx.err(pos, "row count must be a non-negative integer"));
        }
        self.eat_kw("ROWS")?;
        self.kw("WITH")?;
        self.kw("SCHEMA")?;
        self.sym("(")?;
        let mut schema = Vec::new();
        loop {
            let name = self.name()?;
            self.sym(":")?;
            let (tok, tpos) = self.lx.next()?;
            let dtype = match tok {
                Tok::Ident(t) if t.eq_ignore_ascii_case("STRING") => DataType::String,
                Tok::Ident(t) if t.eq_ignore_ascii_case("NUMBER") => DataType::Number,
                other => {
                    return Err(self
                        .lx
                        .err(tpos, format!("expected STRING or NUMBER, found {}", describe(&other))))
                }
            };
            let default = if self.eat_sym("=")? {
                self.literal()?
            } else {
                match dtype {
                    DataType::String => Literal::Str(String::new()),
                    DataType::Number => Literal::Num(0.0),
                }
            };
            schema.push(ColumnDef { name, dtype, default });
            if !self.eat_sym(",")? {
                break;
            }
        }
        self.sym(")")?;
        self.kw("INTO")?;
        let output = self.name()?;
        Ok(ProcessSpec {
            input,
            executable,
            timeout,
            max_rows: n as u64,
            schema,
            output,
        })
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        let (tok, pos) = self.peek()?;
        match tok {
            Tok::Str(s) => {
                self.lx.next()?;
                Ok(Literal::Str(s))
            }
            Tok::Num(_) | Tok::Sym("-") => Ok(Literal::Num(self.number()?)),
            other => Err(self
                .lx
                .err(pos, format!("expected a literal, found {}", describe(&other)))),
        }
    }

    fn literal_list(&mut self) -> Result<Vec<Literal>, ParseError> {
        self.sym("[")?;
        let mut out = Vec::new();
        if !self.is_sym("]")? {
            loop {
                out.push(self.literal()?);
                if !self.eat_sym(",")? {
                    break;
                }
            }
        }
        self.sym("]")?;
        Ok(out)
    }

    fn select_stmt(&mut self) -> Result<SelectStmt, ParseError> {
        let (_, pos) = self.peek()?;
        let core = self.select_core()?;
        let mut argmax_keys = None;
        if core.group_by.is_none() && self.is_kw("WITH")? {
            self.lx.next()?;
            self.kw("KEYS")?;
            argmax_keys = Some(self.literal_list()?);
        }
        let consuming = if self.eat_kw("CONSUMING")? {
            let v = self.number()?;
            if self.eat_sym("/")? {
                let (_, dpos) = self.peek()?;
                let d = self.number()?;
                if d == 0.0 {
                    return Err(self.lx.err(dpos, "division by zero"));
                }
                Some(v / d)
            } else {
                Some(v)
            }
        } else {
            None
        };
        let stmt = SelectStmt {
            core,
            argmax_keys,
            consuming,
        };
        if stmt.aggregation().is_none() {
            return Err(self.lx.err(pos, "a top-level SELECT must release an aggregation"));
        }
        Ok(stmt)
    }

    fn select_core(&mut self) -> Result<SelectCore, ParseError> {
        self.kw("SELECT")?;
        let mut items = Vec::new();
        loop {
            if self.eat_sym("*")? {
                items.push(SelectItem::Star);
            } else {
                let expr = self.expr()?;
                let alias = if self.eat_kw("AS")? { Some(self.name()?) } else { None };
                items.push(SelectItem::Expr { expr, alias });
            }
            if !self.eat_sym(",")? {
                break;
            }
        }
        self.kw("FROM")?;
        let from = self.relation()?;
        let filter = if self.eat_kw("WHERE")? {
            Some(self.expr()?)
        } else {
            None
        };
        let group_by = if self.eat_kw("GROUP")? {
            self.kw("BY")?;
            let mut keys = vec![self.expr()?];
            while self.eat_sym(",")? {
                keys.push(self.expr()?);
            }
            let key_values = if self.is_kw("WITH")? {
                self.lx.next()?;
                self.kw("KEYS")?;
                let mut lists = vec![self.literal_list()?];
                while self.is_sym(",")? {
                    self.lx.next()?;
                    lists.push(self.literal_list()?);
                }
                Some(lists)
            } else {
                None
            };
            Some(GroupBy { keys, key_values })
        } else {
            None
        };
        let limit = if self.eat_kw("LIMIT")? {
            let (_, pos) = self.peek()?;
            let n = self.number()?;
            if n < 0.0 || libm::trunc(n) != n {
                return Err(self.lx.err(pos, "LIMIT must be a non-negative integer"));
            }
            Some(n as u64)
        } else {
            None
        };
        Ok(SelectCore {
            items,
            from,
            filter,
            group_by,
            limit,
        })
    }

    fn relation(&mut self) -> Result<Relation, ParseError> {
        let mut left = self.relation_primary()?;
        loop {
            let outer = if self.is_kw("FULL")? {
                self.lx.next()?;
                self.kw("OUTER")?;
                true
            } else {
                self.eat_kw("OUTER")?
            };
            if outer || self.is_kw("JOIN")? {
                self.kw("JOIN")?;
                let right = self.relation_primary()?;
                self.kw("ON")?;
                let paren = self.eat_sym("(")?;
                let mut on = vec![self.name()?];
                while self.eat_sym(",")? {
                    on.push(self.name()?);
                }
                if paren {
                    self.sym(")")?;
                }
                left = Relation::Join {
                    left: Box::new(left),
                    right: Box::new(right),
                    on,
                    outer,
                };
            } else if self.eat_kw("UNION")? {
                let right = self.relation_primary()?;
                left = Relation::Union(Box::new(left), Box::new(right));
            } else {
                return Ok(left);
            }
        }
    }

    fn relation_primary(&mut self) -> Result<Relation, ParseError> {
        if self.eat_sym("(")? {
            let rel = if self.is_kw("SELECT")? {
                Relation::Select(Box::new(self.select_core()?))
            } else {
                self.relation()?
            };
            self.sym(")")?;
            Ok(rel)
        } else {
            Ok(Relation::Table(self.name()?))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut l = self.and_expr()?;
        while self.eat_kw("OR")? {
            let r = self.and_expr()?;
            l = Expr::Binary(BinOp::Or, Box::new(l), Box::new(r));
        }
        Ok(l)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut l = self.not_expr()?;
        while self.eat_kw("AND")? {
            let r = self.not_expr()?;
            l = Expr::Binary(BinOp::And, Box::new(l), Box::new(r));
        }
        Ok(l)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.eat_kw("NOT")? {
            Ok(Expr::Unary(UnOp::Not, Box::new(self.not_expr()?)))
        } else {
            self.cmp_expr()
        }
    }

    fn cmp_expr(&mut self) -> Result<Expr, ParseError> {
        let l = self.add_expr()?;
        let op = match self.peek()?.0 {
            Tok::Sym("=") => BinOp::Eq,
            Tok::Sym("!=") | Tok::Sym("<>") => BinOp::Ne,
            Tok::Sym("<") => BinOp::Lt,
            Tok::Sym("<=") => BinOp::Le,
            Tok::Sym(">") => BinOp::Gt,
            Tok::Sym(">=") => BinOp::Ge,
            _ => return Ok(l),
        };
        self.lx.next()?;
        let r = self.add_expr()?;
        Ok(Expr::Binary(op, Box::new(l), Box::new(r)))
    }

    fn add_expr(&mut self) -> Result<Expr, ParseError> {
        let mut l = self.mul_expr()?;
        loop {
            let op = match self.peek()?.0 {
                Tok::Sym("+") => BinOp::Add,
                Tok::Sym("-") => BinOp::Sub,
                _ => return Ok(l),
            };
            self.lx.next()?;
            let r = self.mul_expr()?;
            l = Expr::Binary(op, Box::new(l), Box::new(r));
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, ParseError> {
        let mut l = self.unary_expr()?;
        loop {
            let op = match self.peek()?.0 {
                Tok::Sym("*") => BinOp::Mul,
                Tok::Sym("/") => BinOp::Div,
                _ => return Ok(l),
            };
            self.lx.next()?;
            let r = self.unary_expr()?;
            l = Expr::Binary(op, Box::new(l), Box::new(r));
        }
    }

    fn unary_expr(&mut self) -> Result<Expr, ParseError> {
        if self.eat_sym("-")? {
            if let Tok::Num(v) = self.peek()?.0 {
                self.lx.next()?;
                return Ok(Expr::num(-v));
            }
            return Ok(Expr::Unary(UnOp::Neg, Box::new(self.unary_expr()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (tok, pos) = self.lx.next()?;
        match tok {
            Tok::Num(v) => Ok(Expr::num(v)),
            Tok::Str(s) => Ok(Expr::Lit(Literal::Str(s))),
            Tok::Sym("(") => {
                let e = self.expr()?;
                self.sym(")")?;
                Ok(e)
            }
            Tok::Ident(w) => {
                if !self.is_sym("(")? {
                    if is_reserved(&w) {
                        return Err(self.lx.err(pos, format!("unexpected keyword {w}")));
                    }
                    return Ok(Expr::Column(w));
                }
                self.lx.next()?;
                if let Some(agg) = agg_func(&w) {
                    let arg = if agg == AggFunc::Count && self.eat_sym("*")? {
                        None
                    } else {
                        Some(Box::new(self.expr()?))
                    };
                    self.sym(")")?;
                    return Ok(Expr::Agg(agg, arg));
                }
                let Some(func) = scalar_func(&w) else {
                    return Err(self.lx.err(pos, format!("unknown function {w}")));
                };
                let mut args = Vec::new();
                if !self.is_sym(")")? {
                    loop {
                        if self.is_sym("[")? {
                            // range(x, [lo, hi]) is shorthand for range(x, lo, hi)
                            for lit in self.literal_list()? {
                                args.push(Expr::Lit(lit));
                            }
                        } else {
                            args.push(self.expr()?);
                        }
                        if !self.eat_sym(",")? {
                            break;
                        }
                    }
                }
                self.sym(")")?;
                let want = match func {
                    Func::Range => 3,
                    Func::Bin => 2,
                    _ => 1,
                };
                if args.len() != want {
                    return Err(self
                        .lx
                        .err(pos, format!("{w} takes {want} argument(s), got {}", args.len())));
                }
                Ok(Expr::Call(func, args))
            }
            other => Err(self.lx.err(pos, format!("unexpected {}", describe(&other)))),
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Ident(w) => format!("{w:?}"),
        Tok::Num(v) => format!("number {v}"),
        Tok::Str(s) => format!("string {s:?}"),
        Tok::Sym(s) => format!("'{s}'"),
        Tok::Eof => "end of input".to_string(),
    }
}

fn is_reserved(w: &str) -> bool {
    RESERVED.iter().any(|r| r.eq_ignore_ascii_case(w))
}

/// `Some(Some(seconds per unit))`, `Some(None)` for frames.
fn unit_scale(u: &str) -> Option<Option<f64>> {
    let u = u.to_ascii_lowercase();
    Some(match u.as_str() {
        "s" | "sec" | "secs" | "second" | "seconds" => Some(1.0),
        "m" | "min" | "mins" | "minute" | "minutes" => Some(60.0),
        "h" | "hr" | "hrs" | "hour" | "hours" => Some(3600.0),
        "d" | "day" | "days" => Some(86400.0),
        "frame" | "frames" => None,
        _ => return None,
    })
}

fn agg_func(w: &str) -> Option<AggFunc> {
    Some(match w.to_ascii_lowercase().as_str() {
        "count" => AggFunc::Count,
        "sum" => AggFunc::Sum,
        "avg" => AggFunc::Avg,
        "var" => AggFunc::Var,
        "min" => AggFunc::Min,
        "max" => AggFunc::Max,
        "argmax" => AggFunc::Argmax,
        _ => return None,
    })
}

fn scalar_func(w: &str) -> Option<Func> {
    Some(match w.to_ascii_lowercase().as_str() {
        "range" => Func::Range,
        "hour" => Func::Hour,
        "day" => Func::Day,
        "bin" => Func::Bin,
        "abs" => Func::Abs,
        "floor" => Func::Floor,
        "ceil" => Func::Ceil,
        _ => return None,
    })
}

/// Epoch seconds (UTC) from an integer, `MM-DD-YYYY[/hh:mm[:ss][am|pm]]` or
/// `YYYY-MM-DD[Thh:mm[:ss][Z]]`.
pub(crate) fn parse_timestamp(word: &str) -> Option<i64> {
    if let Ok(v) = word.parse::<i64>() {
        return Some(v);
    }
    let (date, time) = match word.find(['/', 'T', ' ']) {
        Some(i) => (&word[..i], Some(&word[i + 1..])),
        None => (word, None),
    };
    let parts: Vec<&str> = date.split('-').collect();
    if parts.len() != 3 {
        return None;
    }
    let (y, m, d) = if parts[0].len() == 4 {
        (parts[0], parts[1], parts[2])
    } else {
        (parts[2], parts[0], parts[1])
    };
    let date = chrono::NaiveDate::from_ymd_opt(y.parse().ok()?, m.parse().ok()?, d.parse().ok()?)?;
    let (h, mi, s) = match time {
        None => (0, 0, 0),
        Some(t) => parse_clock(t)?,
    };
    Some(date.and_hms_opt(h, mi, s)?.and_utc().timestamp())
}

fn parse_clock(t: &str) -> Option<(u32, u32, u32)> {
    let lower = t.to_ascii_lowercase();
    let t = lower.strip_suffix('z').unwrap_or(&lower);
    let (t, meridian) = if let Some(x) = t.strip_suffix("am") {
        (x, Some(false))
    } else if let Some(x) = t.strip_suffix("pm") {
        (x, Some(true))
    } else {
        (t, None)
    };
    let mut it = t.split(':');
    let h: u32 = it.next()?.parse().ok()?;
    let mi: u32 = it.next()?.parse().ok()?;
    let s: u32 = match it.next() {
        Some(s) => s.parse().ok()?,
        None => 0,
    };
    if it.next().is_some() {
        return None;
    }
    let h = match meridian {
        None => h,
        Some(_) if h == 0 || h > 12 => return None,
        Some(false) => h % 12,
        Some(true) => h % 12 + 12,
    };
    Some((h, mi, s))
}
