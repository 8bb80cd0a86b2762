//! Printing a plan and parsing it back yields the same plan.

use proptest::collection::vec;
use proptest::option;
use proptest::prelude::*;
use vidpriv_core::query::*;

const RESERVED: [&str; 31] = [
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
    "ROWS",
];

fn ident() -> impl Strategy<Value = String> {
    "[a-zA-Z_][a-zA-Z0-9_]{0,7}".prop_filter("reserved", |s| !RESERVED.iter().any(|r| r.eq_ignore_ascii_case(s)))
}

/// Names outside expressions may be quoted, so anything printable goes.
fn name() -> impl Strategy<Value = String> {
    prop_oneof![ident(), "[ -~\t\n]{1,8}", Just("select".to_string())]
}

fn number() -> impl Strategy<Value = f64> {
    prop_oneof![(-4000i32..4000).prop_map(|v| f64::from(v) / 4.0), Just(1.0 / 3.0)]
}

fn literal() -> impl Strategy<Value = Literal> {
    prop_oneof![number().prop_map(Literal::Num), "[ -~\t\n]{0,6}".prop_map(Literal::Str)]
}

fn duration() -> impl Strategy<Value = DurationLit> {
    prop_oneof![
        (1u32..400).prop_map(|v| DurationLit::Seconds(f64::from(v) / 2.0)),
        (1i64..1000).prop_map(DurationLit::Frames),
    ]
}

fn binop() -> impl Strategy<Value = BinOp> {
    use BinOp::*;
    prop::sample::select(vec![Add, Sub, Mul, Div, Eq, Ne, Lt, Le, Gt, Ge, And, Or])
}

fn scalar_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![ident().prop_map(Expr::Column), literal().prop_map(Expr::Lit),];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            (prop_oneof![Just(UnOp::Neg), Just(UnOp::Not)], inner.clone())
                .prop_map(|(op, e)| Expr::Unary(op, Box::new(e))),
            (binop(), inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::Binary(op, Box::new(l), Box::new(r))),
            (inner.clone(), inner.clone(), inner.clone()).prop_map(|(a, b, c)| Expr::Call(Func::Range, vec![a, b, c])),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Call(Func::Bin, vec![a, b])),
            (
                prop::sample::select(vec![Func::Hour, Func::Day, Func::Abs, Func::Floor, Func::Ceil]),
                inner,
            )
                .prop_map(|(f, a)| Expr::Call(f, vec![a])),
        ]
    })
}

fn agg() -> impl Strategy<Value = Expr> {
    use AggFunc::*;
    prop_oneof![
        Just(Expr::Agg(Count, None)),
        (
            prop::sample::select(vec![Count, Sum, Avg, Var, Min, Max]),
            scalar_expr()
        )
            .prop_map(|(f, e)| Expr::Agg(f, Some(Box::new(e)))),
    ]
}

fn item() -> impl Strategy<Value = SelectItem> {
    prop_oneof![
        1 => Just(SelectItem::Star),
        4 => (prop_oneof![scalar_expr(), agg()], option::of(name()))
            .prop_map(|(expr, alias)| SelectItem::Expr { expr, alias }),
    ]
}

fn group_by() -> impl Strategy<Value = GroupBy> {
    (1usize..3)
        .prop_flat_map(|n| (vec(scalar_expr(), n), option::of(vec(vec(literal(), 0..3), n))))
        .prop_map(|(keys, key_values)| GroupBy { keys, key_values })
}

fn relation() -> impl Strategy<Value = Relation> {
    let leaf = name().prop_map(Relation::Table);
    leaf.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (
                vec(item(), 1..3),
                inner.clone(),
                option::of(scalar_expr()),
                option::of(group_by()),
                option::of(0u64..50)
            )
                .prop_map(|(items, from, filter, group_by, limit)| {
                    Relation::Select(Box::new(SelectCore {
                        items,
                        from,
                        filter,
                        group_by,
                        limit,
                    }))
                }),
            (inner.clone(), inner.clone(), vec(name(), 1..3), any::<bool>()).prop_map(|(l, r, on, outer)| {
                Relation::Join {
                    left: Box::new(l),
                    right: Box::new(r),
                    on,
                    outer,
                }
            }),
            (inner.clone(), inner).prop_map(|(l, r)| Relation::Union(Box::new(l), Box::new(r))),
        ]
    })
}

fn select_stmt() -> impl Strategy<Value = SelectStmt> {
    (
        vec(item(), 0..3),
        agg(),
        relation(),
        option::of(scalar_expr()),
        option::of(group_by()),
        option::of(0u64..50),
        option::of(vec(literal(), 0..4)),
        option::of((1u32..64).prop_map(|v| f64::from(v) / 64.0)),
    )
        .prop_map(|(mut items, agg, from, filter, group_by, limit, keys, consuming)| {
            items.push(SelectItem::Expr { expr: agg, alias: None });
            // WITH KEYS after the core only parses when there is no GROUP BY
            let argmax_keys = if group_by.is_none() { keys } else { None };
            SelectStmt {
                core: SelectCore {
                    items,
                    from,
                    filter,
                    group_by,
                    limit,
                },
                argmax_keys,
                consuming,
            }
        })
}

fn split() -> impl Strategy<Value = SplitSpec> {
    (
        name(),
        0i64..2_000_000_000,
        1i64..1_000_000,
        duration(),
        prop_oneof![
            duration(),
            Just(DurationLit::Seconds(0.0)),
            Just(DurationLit::Seconds(-1.5))
        ],
        option::of(name()),
        option::of(name()),
        name(),
    )
        .prop_map(
            |(camera_id, begin, len, chunk, stride, region_scheme, mask, output)| SplitSpec {
                camera_id,
                begin,
                end: begin + len,
                chunk,
                stride,
                region_scheme,
                mask,
                output,
            },
        )
}

fn process() -> impl Strategy<Value = ProcessSpec> {
    let col = (
        name(),
        prop_oneof![
            literal().prop_map(|l| (DataType::Number, l)),
            literal().prop_map(|l| (DataType::String, l)),
        ],
    )
        .prop_map(|(name, (dtype, default))| ColumnDef { name, dtype, default });
    (
        name(),
        prop_oneof!["[a-z./_]{1,12}", "[ -~]{1,12}", Just("--x".to_string())],
        duration(),
        0u64..1000,
        vec(col, 1..4),
        name(),
    )
        .prop_map(|(input, executable, timeout, max_rows, schema, output)| ProcessSpec {
            input,
            executable,
            timeout,
            max_rows,
            schema,
            output,
        })
}

fn plan() -> impl Strategy<Value = QueryPlan> {
    (vec(split(), 0..3), vec(process(), 0..3), vec(select_stmt(), 1..3))
        .prop_map(|(splits, processes, selects)| QueryPlan {
            splits,
            processes,
            selects,
        })
        .prop_filter("output names must be distinct", |p| {
            let mut names: Vec<&str> = p.splits.iter().map(|s| s.output.as_str()).collect();
            names.extend(p.processes.iter().map(|s| s.output.as_str()));
            let n = names.len();
            names.sort_unstable();
            names.dedup();
            names.len() == n
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn printed_plan_parses_back(p in plan()) {
        let text = p.to_string();
        let back = parse_query(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back, p, "{}", text);
    }

    #[test]
    fn printing_is_idempotent(p in plan()) {
        let once = p.to_string();
        let twice = parse_query(&once).unwrap().to_string();
        prop_assert_eq!(once, twice);
    }
}

#[test]
fn example_statements_parse() {
    let text = "SPLIT camA BEGIN 12-01-2020/12:00am END 01-01-2021/12:00am \
                BY TIME 5sec STRIDE 0sec INTO chunksA;\
                PROCESS chunksA USING model.py TIMEOUT 1sec PRODUCING 10 ROWS \
                WITH SCHEMA (plate:STRING=\"\", speed:NUMBER=0) INTO tableA;\
                SELECT AVG(range(speed, [30, 60])) FROM tableA CONSUMING 1/2;";
    let plan = parse_query(text).unwrap();
    assert_eq!(plan.splits[0].begin, 1_606_780_800);
    assert_eq!(plan.splits[0].end, 1_609_459_200);
    assert_eq!(plan.processes[0].max_rows, 10);
    assert_eq!(plan.selects[0].consuming, Some(0.5));
    assert_eq!(parse_query(&plan.to_string()).unwrap(), plan);
}
