use proptest::prelude::*;
use ska_shmem::dsl::{
    expand_for, parse, validate, BinOp, Env, Expr, SkiAst, StepMode, StepSpec, Stmt, KEYWORDS,
};
use ska_shmem::Error;

fn num(n: f64) -> Expr {
    Expr::Num(n)
}

fn var(v: &str) -> Expr {
    Expr::Var(v.into())
}

#[test]
fn measure_line_golden() {
    let ast =
        parse("comm_pt2pt = MPI_COMM_WORLD\nmeasure comm_pt2pt : Shmem_Put_Simple(10, 5)").unwrap();
    assert_eq!(
        ast.items,
        vec![
            Stmt::Assign {
                name: "comm_pt2pt".into(),
                value: var("MPI_COMM_WORLD")
            },
            Stmt::Measure {
                comm: "comm_pt2pt".into(),
                routine: "Shmem_Put_Simple".into(),
                args: vec![num(10.0), num(5.0)]
            },
        ]
    );
}

#[test]
fn iput_round_block_golden() {
    let src = "begin measurement \"Iput_Round\"\n  stride = 16\t  \n  for count = 1 to MAXSIZE/stride step *sqrt(2) do\n    measure comm_pt2pt : Shmem_Iput_Round(count, stride, 5)\n  od\nend measurement\n";
    let ast = parse(src).unwrap();
    let want = Stmt::MeasureBlock {
        title: "Iput_Round".into(),
        body: vec![
            Stmt::Assign {
                name: "stride".into(),
                value: num(16.0),
            },
            Stmt::For {
                var: "count".into(),
                from: num(1.0),
                to: Expr::bin(var("MAXSIZE"), BinOp::Div, var("stride")),
                step: StepSpec {
                    mode: StepMode::Multiplicative,
                    factor: Expr::Call("sqrt".into(), vec![num(2.0)]),
                },
                body: vec![Stmt::Measure {
                    comm: "comm_pt2pt".into(),
                    routine: "Shmem_Iput_Round".into(),
                    args: vec![var("count"), var("stride"), num(5.0)],
                }],
            },
        ],
    };
    assert_eq!(ast.items, vec![want]);
}

#[test]
fn full_sweep_validates() {
    let src = "MAXSIZE = 4096\ncomm_pt2pt = MPI_COMM_WORLD\nbegin measurement \"Iget_Round\"\n  stride = 16\n  for count = 1 to MAXSIZE/stride step *sqrt(2) do\n    measure comm_pt2pt : Shmem_Iget_Round(count, stride, 5)\n  od\nend measurement\n";
    let n = validate(&parse(src).unwrap(), Env::default()).unwrap();
    assert_eq!(
        n,
        expand_for(1.0, 256.0, StepMode::Multiplicative, 2f64.sqrt())
            .unwrap()
            .len()
    );
}

#[test]
fn syntax_errors_carry_location() {
    for (src, line, col) in [
        ("set_unit(1e9)", 1, 10),
        ("x = 1\ny = (2", 2, 7),
        ("measure MPI_COMM_WORLD Shmem_Put_Simple(1, 1)", 1, 24),
        ("for i = 1 to 4 step 1 do\n  x = 1\n  oops", 3, 7),
    ] {
        match parse(src) {
            Err(Error::Syntax {
                line: l, col: c, ..
            }) => assert_eq!((l, c), (line, col), "{src:?}"),
            other => panic!("{src:?}: expected syntax error, got {other:?}"),
        }
    }
}

fn ident() -> impl Strategy<Value = String> {
    "[a-zA-Z_][a-zA-Z0-9_]{0,6}".prop_filter("keyword", |s| !KEYWORDS.contains(&s.as_str()))
}

fn number() -> impl Strategy<Value = f64> {
    prop_oneof![
        (0u32..100_000).prop_map(f64::from),
        (0.0f64..1e6),
        (0.0f64..1e-3)
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![number().prop_map(Expr::Num), ident().prop_map(Expr::Var)];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            (inner.clone(), 0..4usize, inner.clone()).prop_map(|(l, op, r)| {
                let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div][op];
                Expr::bin(l, op, r)
            }),
            (ident(), prop::collection::vec(inner, 0..3)).prop_map(|(f, a)| Expr::Call(f, a)),
        ]
    })
}

fn simple_stmt() -> impl Strategy<Value = Stmt> {
    prop_oneof![
        (ident(), expr()).prop_map(|(name, value)| Stmt::Assign { name, value }),
        (ident(), prop::collection::vec(expr(), 0..3))
            .prop_map(|(name, args)| Stmt::Call { name, args }),
        (ident(), ident(), prop::collection::vec(expr(), 0..4)).prop_map(
            |(comm, routine, args)| Stmt::Measure {
                comm,
                routine,
                args
            }
        ),
    ]
}

fn loop_stmt(body: impl Strategy<Value = Stmt> + Clone + 'static) -> impl Strategy<Value = Stmt> {
    (
        ident(),
        expr(),
        expr(),
        any::<bool>(),
        expr(),
        prop::collection::vec(body, 0..3),
    )
        .prop_map(|(var, from, to, mul, factor, body)| Stmt::For {
            var,
            from,
            to,
            step: StepSpec {
                mode: if mul {
                    StepMode::Multiplicative
                } else {
                    StepMode::Additive
                },
                factor,
            },
            body,
        })
}

fn block_body() -> impl Strategy<Value = Stmt> {
    simple_stmt().prop_recursive(2, 8, 3, |inner| loop_stmt(inner).boxed())
}

fn top_stmt() -> impl Strategy<Value = Stmt> {
    prop_oneof![
        3 => block_body(),
        1 => ("[A-Za-z0-9 _.-]{0,12}", prop::collection::vec(block_body(), 0..3))
            .prop_map(|(title, body)| Stmt::MeasureBlock { title, body }),
    ]
}

proptest! {
    #[test]
    fn print_then_parse_is_identity(items in prop::collection::vec(top_stmt(), 0..5)) {
        let ast = SkiAst { items };
        let printed = ast.to_string();
        let reparsed = parse(&printed).map_err(|e| TestCaseError::fail(format!("{e}\n{printed}")))?;
        prop_assert_eq!(reparsed, ast);
    }

    #[test]
    fn expand_for_is_increasing_and_bounded(
        from in 1.0f64..500.0,
        to in 0.0f64..5000.0,
        mul in any::<bool>(),
        f in 1.01f64..4.0,
    ) {
        let mode = if mul { StepMode::Multiplicative } else { StepMode::Additive };
        let v = expand_for(from, to, mode, f).unwrap();
        prop_assert!(v.windows(2).all(|w| w[0] < w[1]));
        if let Some(&last) = v.last() {
            prop_assert!(last as f64 <= (to + 0.5).floor());
            prop_assert_eq!(v[0] as f64, (from + 0.5).floor());
        }
    }
}
