//! Acceptance suite: one test per criterion, each printing a pass line.
//! Run with `cargo test --test acceptance -- --nocapture` to see them.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use rayon::prelude::*;

use corechk::compile::{compile, compile_program, lower_deref_region, CompileError, ShadowEnv};
use corechk::corec::{parse_corec_program, CExpr};
use corechk::lattice::*;
use corechk::machine::*;
use corechk::parse::parse_program;
use corechk::propcheck::*;
use corechk::store::{FunStore, Heap, Stack};
use corechk::syntax::*;
use corechk::typecheck::{typecheck_in, TypeEnv};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn load_fixture(name: &str) -> Program {
    parse_program(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

fn ptr_int(m: PtrMode) -> WordType {
    WordType::ptr_word(WordType::Int, m)
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_flag_table_conformance() {
    use PtrMode::*;
    // All nine (context mode x pointer mode) cells: seven lower to an
    // operation tagged with the heap region of the mode meet, two are type
    // rejections.
    let expect = |ctx: PtrMode, ptr: PtrMode| match (ctx, ptr) {
        (Checked, Unchecked) | (Unchecked, Checked) => None,
        _ => Some(heap_region(mode_meet(ctx, ptr))),
    };
    let mut lowered = 0;
    let mut rejected = 0;
    for ctx in PtrMode::ALL {
        for ptr in PtrMode::ALL {
            let got = lower_deref_region(ctx, ptr);
            assert_eq!(got, expect(ctx, ptr), "cell ({ctx}, {ptr})");
            match got {
                Some(_) => lowered += 1,
                None => rejected += 1,
            }
        }
    }
    assert_eq!((lowered, rejected), (7, 2));
    // The four specified cells, exactly as in the table.
    assert_eq!(lower_deref_region(Checked, Checked), Some(Region::C));
    assert_eq!(lower_deref_region(Checked, Tainted), Some(Region::U));
    assert_eq!(lower_deref_region(Unchecked, Tainted), Some(Region::U));
    assert_eq!(lower_deref_region(Unchecked, Unchecked), Some(Region::U));

    // End-to-end through the compiler on deref of a variable.
    let lower_of = |ptr_mode: PtrMode, ctx: ContextMode| {
        let gamma: TypeEnv =
            [("p".to_string(), ptr_int(ptr_mode))].into_iter().collect();
        compile(
            &gamma,
            &PredEnv::new(),
            &ShadowEnv::default(),
            ctx,
            &Expr::deref(Expr::var("p")),
        )
    };
    let region_of = |out: &corechk::compile::CompileOutput| {
        fn find(e: &CExpr) -> Option<Region> {
            match e {
                CExpr::Deref(r, _) => Some(*r),
                CExpr::Seq(_, rest) => find(rest),
                _ => None,
            }
        }
        find(&out.target).expect("a lowered dereference")
    };
    assert_eq!(region_of(&lower_of(PtrMode::Checked, ContextMode::Checked).unwrap()), Region::C);
    assert_eq!(region_of(&lower_of(PtrMode::Tainted, ContextMode::Checked).unwrap()), Region::U);
    assert_eq!(region_of(&lower_of(PtrMode::Tainted, ContextMode::Unchecked).unwrap()), Region::U);
    assert_eq!(
        region_of(&lower_of(PtrMode::Unchecked, ContextMode::Unchecked).unwrap()),
        Region::U
    );
    assert!(matches!(
        lower_of(PtrMode::Unchecked, ContextMode::Checked),
        Err(CompileError::Type(e)) if e.rule == "T-Def"
    ));
    assert!(matches!(
        lower_of(PtrMode::Checked, ContextMode::Unchecked),
        Err(CompileError::Type(e)) if e.rule == "T-Def"
    ));
    println!("criterion 1: PASS — flag table: 7 lowered cells, 2 type rejections");
}

#[test]
fn criterion_2_mode_algebra() {
    use PtrMode::*;
    // mode_le: generated by t <= xi and xi <= xi; exhaustive 9 cases.
    for a in PtrMode::ALL {
        for b in PtrMode::ALL {
            assert_eq!(mode_le(a, b), a == Tainted || a == b, "{a} <= {b}");
        }
    }
    // mode_meet: the footnote equations.
    assert_eq!(mode_meet(Tainted, Checked), Unchecked); // t /\ c = u
    for m in PtrMode::ALL {
        assert_eq!(mode_meet(m, Unchecked), Unchecked); // xi /\ u = u
    }
    for m in [Checked, Unchecked] {
        assert_eq!(mode_meet(Checked, m), m); // c /\ m = m (context modes)
    }
    let mut triples = 0;
    for a in PtrMode::ALL {
        for b in PtrMode::ALL {
            assert_eq!(mode_meet(a, b), mode_meet(b, a)); // commutativity
            for c in PtrMode::ALL {
                assert_eq!(mode_meet(mode_meet(a, b), c), mode_meet(a, mode_meet(b, c)));
                triples += 1;
            }
        }
    }
    assert_eq!(triples, 27);
    println!("criterion 2: PASS — mode lattice and meet match the defining equations");
}

// ---------------------------------------------------------------------------

struct RuleCheck {
    stack: Stack,
    heap: Heap,
    funs: FunStore,
}

impl RuleCheck {
    fn new() -> Self {
        RuleCheck { stack: Stack::new(), heap: Heap::new(), funs: FunStore::default() }
    }

    fn expect(&self, redex: Expr, rule: &str, check: impl FnOnce(&Computed)) {
        let got = compute_step(&self.stack, &self.heap, &self.funs, &redex);
        let name: &str = match &got {
            Computed::Next { rule, .. } => rule,
            Computed::Null { rule } => rule,
            Computed::Bounds { rule } => rule,
            Computed::NoRule => "NoRule",
        };
        assert_eq!(name, rule, "for {redex:?}");
        check(&got);
    }
}

fn next_expr(c: &Computed) -> Expr {
    match c {
        Computed::Next { expr, .. } => expr.clone(),
        other => panic!("expected a step, got {other:?}"),
    }
}

#[test]
fn criterion_3_rule_goldens() {
    let int = WordType::Int;
    let arr = |nt, lo, hi, m| WordType::ptr_array(nt, lo, hi, WordType::Int, m);

    // --- S-rule goldens: one-step results match each rule's conclusion. ---
    let mut rc = RuleCheck::new();
    rc.stack.bind("x", Value::int(7));
    rc.expect(Expr::var("x"), "S-Var", |c| {
        assert_eq!(next_expr(c), Expr::int(7));
    });
    rc.expect(Expr::add(Expr::int(1), Expr::int(2)), "S-Add", |c| {
        assert_eq!(next_expr(c), Expr::int(3));
    });
    rc.expect(
        Expr::add(Expr::lit(10, arr(false, 0, 5, PtrMode::Checked)), Expr::int(2)),
        "S-AddArr",
        |c| assert_eq!(next_expr(c), Expr::lit(12, arr(false, -2, 3, PtrMode::Checked))),
    );
    rc.expect(
        Expr::add(Expr::lit(0, arr(false, 0, 5, PtrMode::Checked)), Expr::int(2)),
        "S-AddArrNull",
        |_| {},
    );
    // S-Cast evaluates bound variables against the stack.
    rc.stack.bind("k", Value::int(2));
    let open_target = WordType::ptr(
        ObjectType::Array {
            nt: true,
            bounds: BoundPair { lo: Bound::Lit(0), hi: Bound::Off("k".into(), 3) },
            elem: int.clone(),
        },
        PtrMode::Checked,
    );
    rc.expect(
        Expr::cast(open_target, Expr::lit(4, ptr_int(PtrMode::Checked))),
        "S-Cast",
        |c| assert_eq!(next_expr(c), Expr::lit(4, arr(true, 0, 5, PtrMode::Checked))),
    );
    rc.expect(
        Expr::dyncast(
            arr(false, 0, 2, PtrMode::Checked),
            Expr::lit(4, arr(false, 0, 5, PtrMode::Checked)),
        ),
        "S-DynCast",
        |c| assert_eq!(next_expr(c), Expr::lit(4, arr(false, 0, 2, PtrMode::Checked))),
    );
    rc.expect(
        Expr::dyncast(
            arr(false, 0, 9, PtrMode::Checked),
            Expr::lit(4, arr(false, 0, 5, PtrMode::Checked)),
        ),
        "S-DynCastBound",
        |_| {},
    );

    // Dereference family.
    let mut rc = RuleCheck::new();
    rc.heap.c.insert(1, Value::int(42));
    rc.heap.u.insert(1, Value::int(9));
    rc.expect(Expr::deref(Expr::lit(1, ptr_int(PtrMode::Checked))), "S-DefC", |c| {
        assert_eq!(next_expr(c), Expr::int(42));
    });
    rc.expect(Expr::deref(Expr::lit(1, ptr_int(PtrMode::Tainted))), "S-DefT", |c| {
        assert_eq!(next_expr(c), Expr::int(9));
    });
    rc.expect(Expr::deref(Expr::lit(0, ptr_int(PtrMode::Checked))), "S-DefNull", |_| {});
    rc.expect(Expr::deref(Expr::lit(2, ptr_int(PtrMode::Tainted))), "S-DefTFail", |_| {});
    rc.expect(Expr::deref(Expr::lit(1, ptr_int(PtrMode::Unchecked))), "S-DefU", |c| {
        assert_eq!(next_expr(c), Expr::int(9));
    });
    rc.expect(
        Expr::deref(Expr::lit(1, arr(false, 0, 3, PtrMode::Checked))),
        "S-DefArrayC",
        |c| assert_eq!(next_expr(c), Expr::int(42)),
    );
    rc.expect(
        Expr::deref(Expr::lit(1, arr(false, 2, 5, PtrMode::Checked))),
        "S-DefArrayBound",
        |_| {},
    );
    // NT dereference may read the upper-bound position.
    rc.expect(
        Expr::deref(Expr::lit(1, arr(true, -1, 0, PtrMode::Checked))),
        "S-DefArrayC",
        |c| assert_eq!(next_expr(c), Expr::int(42)),
    );
    rc.expect(
        Expr::deref(Expr::lit(1, arr(true, 1, 3, PtrMode::Checked))),
        "S-DefNTArrayBound",
        |_| {},
    );
    rc.expect(
        Expr::deref(Expr::lit(1, arr(false, 0, 3, PtrMode::Tainted))),
        "S-DefArrayT",
        |c| assert_eq!(next_expr(c), Expr::int(9)),
    );

    // Assignment family. Heap cells keep their stored annotation.
    let mut rc = RuleCheck::new();
    rc.heap.c.insert(1, Value::int(5));
    rc.heap.u.insert(1, Value::int(5));
    rc.expect(
        Expr::assign(Expr::lit(0, ptr_int(PtrMode::Checked)), Expr::int(3)),
        "S-AssignNull",
        |_| {},
    );
    rc.expect(
        Expr::assign(Expr::lit(1, ptr_int(PtrMode::Checked)), Expr::int(3)),
        "S-AssignC",
        |c| match c {
            Computed::Next { heap, expr, .. } => {
                assert_eq!(heap.c.get(&1), Some(&Value::int(3)));
                assert_eq!(expr, &Expr::int(3));
            }
            other => panic!("unexpected {other:?}"),
        },
    );
    rc.expect(
        Expr::assign(Expr::lit(1, ptr_int(PtrMode::Tainted)), Expr::int(4)),
        "S-AssignT",
        |c| match c {
            Computed::Next { heap, .. } => assert_eq!(heap.u.get(&1), Some(&Value::int(4))),
            other => panic!("unexpected {other:?}"),
        },
    );
    rc.expect(
        Expr::assign(Expr::lit(1, ptr_int(PtrMode::Unchecked)), Expr::int(4)),
        "S-AssignU",
        |_| {},
    );
    rc.expect(
        Expr::assign(Expr::lit(1, arr(false, 0, 3, PtrMode::Checked)), Expr::int(8)),
        "S-AssignArrC",
        |c| match c {
            Computed::Next { heap, .. } => assert_eq!(heap.c.get(&1), Some(&Value::int(8))),
            other => panic!("unexpected {other:?}"),
        },
    );
    rc.expect(
        Expr::assign(Expr::lit(1, arr(false, 0, 3, PtrMode::Tainted)), Expr::int(8)),
        "S-AssignArrT",
        |c| match c {
            Computed::Next { heap, .. } => assert_eq!(heap.u.get(&1), Some(&Value::int(8))),
            other => panic!("unexpected {other:?}"),
        },
    );
    // Writes are strict at the upper bound, including NT arrays.
    rc.expect(
        Expr::assign(Expr::lit(1, arr(true, -1, 0, PtrMode::Checked)), Expr::int(8)),
        "S-AssignArrBound",
        |_| {},
    );

    // Allocation.
    let rc = RuleCheck::new();
    rc.expect(
        Expr::Malloc(PtrMode::Checked, ObjectType::Array {
            nt: false,
            bounds: BoundPair::lits(0, 3),
            elem: int.clone(),
        }),
        "S-Malloc",
        |c| match c {
            Computed::Next { heap, expr, .. } => {
                // Cells initialized to 0 : elem at the high-water mark.
                assert_eq!(heap.c.len(), 3);
                assert_eq!(heap.c.get(&1), Some(&Value::int(0)));
                assert_eq!(expr, &Expr::lit(1, arr(false, 0, 3, PtrMode::Checked)));
            }
            other => panic!("unexpected {other:?}"),
        },
    );
    // NT allocation includes the terminator cell.
    rc.expect(
        Expr::Malloc(PtrMode::Checked, ObjectType::Array {
            nt: true,
            bounds: BoundPair::lits(0, 3),
            elem: int.clone(),
        }),
        "S-Malloc",
        |c| match c {
            Computed::Next { heap, .. } => assert_eq!(heap.c.len(), 4),
            other => panic!("unexpected {other:?}"),
        },
    );
    rc.expect(
        Expr::Malloc(PtrMode::Checked, ObjectType::Array {
            nt: false,
            bounds: BoundPair::lits(0, 0),
            elem: int.clone(),
        }),
        "S-MallocBound",
        |_| {},
    );

    // Scopes.
    let mut rc = RuleCheck::new();
    rc.stack.bind("x", Value::int(9));
    rc.expect(Expr::let_("x", Expr::int(1), Expr::var("x")), "S-Let", |c| {
        assert_eq!(
            next_expr(c),
            Expr::Ret("x".into(), Some(Value::int(9)), Box::new(Expr::var("x")))
        );
    });
    rc.expect(
        Expr::Ret("x".into(), Some(Value::int(9)), Box::new(Expr::int(2))),
        "S-Ret",
        |c| match c {
            Computed::Next { stack, expr, .. } => {
                assert_eq!(stack.get("x"), Some(&Value::int(9)));
                assert_eq!(expr, &Expr::int(2));
            }
            other => panic!("unexpected {other:?}"),
        },
    );
    rc.expect(Expr::if_(Expr::int(1), Expr::int(10), Expr::int(20)), "S-IfT", |c| {
        assert_eq!(next_expr(c), Expr::int(10));
    });
    rc.expect(Expr::if_(Expr::int(0), Expr::int(10), Expr::int(20)), "S-IfF", |c| {
        assert_eq!(next_expr(c), Expr::int(20));
    });

    // NT widening: reading a nonzero cell at the upper bound widens it.
    let mut rc = RuleCheck::new();
    rc.stack.bind("s", Value::new(1, arr(true, 0, 0, PtrMode::Checked)));
    rc.heap.c.insert(1, Value::int(7));
    rc.expect(
        Expr::if_(Expr::deref(Expr::var("s")), Expr::int(1), Expr::int(2)),
        "S-IfNTNotC",
        |c| match c {
            Computed::Next { stack, expr, .. } => {
                assert_eq!(expr, &Expr::int(1));
                assert_eq!(stack.get("s").unwrap().ty, arr(true, 0, 1, PtrMode::Checked));
            }
            other => panic!("unexpected {other:?}"),
        },
    );
    // Strlen scans to the terminator and widens the stack type.
    let mut rc = RuleCheck::new();
    rc.stack.bind("s", Value::new(1, arr(true, 0, 1, PtrMode::Checked)));
    for (a, v) in [(1, 7), (2, 8), (3, 9), (4, 0)] {
        rc.heap.c.insert(a, Value::int(v));
    }
    rc.expect(Expr::Strlen("s".into()), "S-Strlen", |c| match c {
        Computed::Next { stack, expr, .. } => {
            assert_eq!(expr, &Expr::int(3));
            assert_eq!(stack.get("s").unwrap().ty, arr(true, 0, 3, PtrMode::Checked));
        }
        other => panic!("unexpected {other:?}"),
    });
    let mut rc = RuleCheck::new();
    rc.stack.bind("s", Value::new(1, arr(true, 0, 1, PtrMode::Checked)));
    rc.heap.c.insert(1, Value::int(7));
    rc.expect(Expr::Strlen("s".into()), "S-StrlenBound", |_| {});

    // Blocks.
    let rc = RuleCheck::new();
    rc.expect(
        Expr::Unchecked(vec![], Box::new(Expr::int(3))),
        "S-Unchecked",
        |c| assert_eq!(next_expr(c), Expr::int(3)),
    );
    rc.expect(
        Expr::Checked(vec![], Box::new(Expr::int(3))),
        "S-Checked",
        |c| assert_eq!(next_expr(c), Expr::int(3)),
    );

    // Calls: parameters rebind at instantiated signature types and the body
    // is wrapped in a cast to the instantiated return type.
    let mut rc = RuleCheck::new();
    let nt_p = WordType::ptr(
        ObjectType::Array {
            nt: true,
            bounds: BoundPair { lo: Bound::Lit(0), hi: Bound::Off("n".into(), 0) },
            elem: int.clone(),
        },
        PtrMode::Checked,
    );
    let def = FunDef {
        ret: int.clone(),
        params: vec![("n".into(), int.clone()), ("p".into(), nt_p)],
        mode: PtrMode::Checked,
        body: Expr::deref(Expr::var("p")),
    };
    let fun_ty = WordType::ptr(def.fun_type(), PtrMode::Checked);
    rc.funs.c.insert(3, def.clone());
    rc.expect(
        Expr::call(
            Expr::lit(3, fun_ty.clone()),
            vec![Expr::int(5), Expr::lit(1, arr(true, 0, 5, PtrMode::Checked))],
        ),
        "S-FunC",
        |c| {
            let expect = Expr::let_(
                "n",
                Expr::int(5),
                Expr::let_(
                    "p",
                    Expr::lit(1, arr(true, 0, 5, PtrMode::Checked)),
                    Expr::cast(int.clone(), Expr::deref(Expr::var("p"))),
                ),
            );
            assert_eq!(next_expr(c), expect);
        },
    );
    rc.expect(Expr::call(Expr::lit(0, fun_ty), vec![Expr::int(5), Expr::int(0)]), "S-FunNull", |_| {});
    let tdef = FunDef {
        ret: int.clone(),
        params: vec![("a".into(), int.clone())],
        mode: PtrMode::Tainted,
        body: Expr::add(Expr::var("a"), Expr::int(1)),
    };
    let t_ty = WordType::ptr(tdef.fun_type(), PtrMode::Tainted);
    rc.funs.u.insert(4, tdef);
    rc.expect(
        Expr::call(Expr::lit(4, t_ty.clone()), vec![Expr::int(2)]),
        "S-FunT",
        |c| {
            let expect = Expr::let_(
                "a",
                Expr::int(2),
                Expr::cast(int.clone(), Expr::add(Expr::var("a"), Expr::int(1))),
            );
            assert_eq!(next_expr(c), expect);
        },
    );
    // A tainted call to an undefined store address fails verification.
    rc.expect(Expr::call(Expr::lit(9, t_ty), vec![Expr::int(2)]), "S-FunTFail", |_| {});

    // The unchecked-region crash rule as a whole-machine step.
    let p = Program {
        main: Expr::Unchecked(
            vec![],
            Box::new(Expr::deref(Expr::lit(5, ptr_int(PtrMode::Unchecked)))),
        ),
        ..Program::default()
    };
    let out = eval(&p, 8, &FaultPolicy::new(1.0, 1));
    assert!(matches!(out.steps[0].kind, StepKind::FaultInjected));
    assert_eq!(out.result, Terminal::Value(Value::int(0)));

    // --- T-rule accept/reject pairs. ---
    let empty_heap = Heap::new();
    let empty_funs = FunStore::default();
    let accepts = |gamma: &TypeEnv, m: ContextMode, e: &Expr| {
        typecheck_in(gamma, &PredEnv::new(), m, e, &empty_heap, &empty_funs)
            .unwrap_or_else(|err| panic!("expected accept, got {err} for {e:?}"))
    };
    let rejects = |gamma: &TypeEnv, m: ContextMode, e: &Expr, rule: &str| {
        let err = typecheck_in(gamma, &PredEnv::new(), m, e, &empty_heap, &empty_funs)
            .expect_err("expected rejection");
        assert_eq!(err.rule, rule, "{e:?}");
    };
    let env = |pairs: &[(&str, WordType)]| -> TypeEnv {
        pairs.iter().map(|(x, t)| (x.to_string(), t.clone())).collect()
    };
    let c = ContextMode::Checked;
    let u = ContextMode::Unchecked;
    let empty = TypeEnv::new();

    // T-ConstU / T-ConstC
    accepts(&empty, u, &Expr::lit(5, ptr_int(PtrMode::Unchecked)));
    rejects(&empty, u, &Expr::lit(5, ptr_int(PtrMode::Checked)), "T-ConstU");
    accepts(&empty, c, &Expr::lit(0, ptr_int(PtrMode::Checked)));
    rejects(&empty, c, &Expr::lit(9, ptr_int(PtrMode::Checked)), "T-ConstC");
    // T-Var
    accepts(&env(&[("x", int.clone())]), c, &Expr::var("x"));
    rejects(&empty, c, &Expr::var("nope"), "T-Var");
    // T-Let (non-integer binder; its escape condition is structurally
    // unreachable since only integers occur in bounds, so the rejection
    // goes through the binding).
    accepts(
        &empty,
        c,
        &Expr::let_("p", Expr::Malloc(PtrMode::Checked, ObjectType::Word(int.clone())), Expr::int(1)),
    );
    rejects(
        &empty,
        c,
        &Expr::let_("p", Expr::deref(Expr::lit(0, ptr_int(PtrMode::Unchecked))), Expr::int(1)),
        "T-Def",
    );
    // T-LetInt: dependent binding must be bound-shaped.
    let dep_malloc = |b: Bound| {
        Expr::Malloc(
            PtrMode::Checked,
            ObjectType::Array { nt: true, bounds: BoundPair { lo: Bound::Lit(0), hi: b }, elem: int.clone() },
        )
    };
    accepts(&empty, c, &Expr::let_("n", Expr::int(4), dep_malloc(Bound::Off("n".into(), 0))));
    rejects(
        &env(&[("y", int.clone()), ("z", int.clone())]),
        c,
        &Expr::let_(
            "n",
            Expr::add(Expr::var("y"), Expr::var("z")),
            dep_malloc(Bound::Off("n".into(), 0)),
        ),
        "T-LetInt",
    );
    // T-RetInt: machine scope frames; the result type substitutes the frame
    // variable away only with an equation in scope.
    {
        let gamma = env(&[("n", int.clone())]);
        let theta = PredEnv::new().with("n", Predicate::Eq(Bound::Lit(4)));
        let e = Expr::Ret("n".into(), Some(Value::int(1)), Box::new(dep_malloc(Bound::Off("n".into(), 0))));
        let got = typecheck_in(&gamma, &theta, c, &e, &empty_heap, &empty_funs).unwrap();
        assert_eq!(got, WordType::ptr_array(true, 0, 4, int.clone(), PtrMode::Checked));
        let err = typecheck_in(&gamma, &PredEnv::new(), c, &e, &empty_heap, &empty_funs)
            .expect_err("escaping frame variable");
        assert_eq!(err.rule, "T-RetInt");
    }
    // T-CastPtr: a tainted pointer casts to unchecked even in checked
    // code; the unchecked result is merely unusable there.
    accepts(
        &empty,
        c,
        &Expr::cast(ptr_int(PtrMode::Unchecked), Expr::lit(0, ptr_int(PtrMode::Tainted))),
    );
    rejects(
        &empty,
        c,
        &Expr::cast(ptr_int(PtrMode::Checked), Expr::lit(0, ptr_int(PtrMode::Tainted))),
        "T-CastPtr",
    );
    // T-Def
    accepts(&env(&[("p", ptr_int(PtrMode::Checked))]), c, &Expr::deref(Expr::var("p")));
    rejects(&env(&[("p", ptr_int(PtrMode::Checked))]), u, &Expr::deref(Expr::var("p")), "T-Def");
    // T-Ind
    let arr_c = arr(false, 0, 3, PtrMode::Checked);
    accepts(
        &env(&[("p", arr_c.clone())]),
        c,
        &Expr::deref(Expr::add(Expr::var("p"), Expr::int(1))),
    );
    rejects(
        &env(&[("p", arr_c.clone()), ("q", ptr_int(PtrMode::Checked))]),
        c,
        &Expr::deref(Expr::add(Expr::var("p"), Expr::var("q"))),
        "T-Ind",
    );
    // T-Assign
    accepts(
        &env(&[("p", ptr_int(PtrMode::Checked))]),
        c,
        &Expr::assign(Expr::var("p"), Expr::int(1)),
    );
    rejects(
        &env(&[("p", ptr_int(PtrMode::Checked))]),
        c,
        &Expr::assign(Expr::var("p"), Expr::lit(0, ptr_int(PtrMode::Tainted))),
        "T-Assign",
    );
    // T-AssignArr
    accepts(&env(&[("p", arr_c.clone())]), c, &Expr::assign(Expr::var("p"), Expr::int(1)));
    rejects(
        &env(&[("p", arr_c.clone())]),
        c,
        &Expr::assign(Expr::var("p"), Expr::lit(0, ptr_int(PtrMode::Tainted))),
        "T-AssignArr",
    );
    // T-IndAssign
    accepts(
        &env(&[("p", arr_c.clone())]),
        c,
        &Expr::assign(Expr::add(Expr::var("p"), Expr::int(1)), Expr::int(2)),
    );
    rejects(
        &env(&[("p", arr_c.clone())]),
        c,
        &Expr::assign(
            Expr::add(Expr::var("p"), Expr::int(1)),
            Expr::lit(0, ptr_int(PtrMode::Tainted)),
        ),
        "T-IndAssign",
    );
    // T-Mac
    accepts(&empty, c, &Expr::Malloc(PtrMode::Tainted, ObjectType::Word(int.clone())));
    rejects(&empty, c, &Expr::Malloc(PtrMode::Unchecked, ObjectType::Word(int.clone())), "T-Mac");
    // T-Add
    accepts(&empty, c, &Expr::add(Expr::int(1), Expr::int(2)));
    rejects(
        &empty,
        c,
        &Expr::add(Expr::int(1), Expr::lit(0, ptr_int(PtrMode::Checked))),
        "T-Add",
    );
    // T-Fun: dependent application; integer arguments must be bound-shaped.
    {
        let mut prog = Program::default();
        let nt_p = WordType::ptr(
            ObjectType::Array {
                nt: true,
                bounds: BoundPair { lo: Bound::Lit(0), hi: Bound::Off("n".into(), 0) },
                elem: int.clone(),
            },
            PtrMode::Checked,
        );
        let def = FunDef {
            ret: int.clone(),
            params: vec![("n".into(), int.clone()), ("p".into(), nt_p)],
            mode: PtrMode::Checked,
            body: Expr::deref(Expr::var("p")),
        };
        let fun_ty = WordType::ptr(def.fun_type(), PtrMode::Checked);
        prog.funs.insert((Region::C, 1), def);
        for a in 1..=4 {
            prog.heap_init.insert((Region::C, a), Value::int(if a == 4 { 0 } else { a }));
        }
        let heap = Heap::from_init(&prog.heap_init);
        let funs = FunStore::from_program(&prog);
        let good = Expr::call(
            Expr::lit(1, fun_ty.clone()),
            vec![Expr::int(3), Expr::lit(1, arr(true, 0, 3, PtrMode::Checked))],
        );
        let got = typecheck_in(&empty, &PredEnv::new(), c, &good, &heap, &funs).unwrap();
        assert_eq!(got, int);
        let bad = Expr::call(
            Expr::lit(1, fun_ty),
            vec![
                Expr::add(Expr::int(1), Expr::int(2)),
                Expr::lit(1, arr(true, 0, 3, PtrMode::Checked)),
            ],
        );
        let err = typecheck_in(&empty, &PredEnv::new(), c, &bad, &heap, &funs).unwrap_err();
        assert_eq!(err.rule, "T-Fun");
    }
    // T-Checked / T-Unchecked
    accepts(
        &env(&[("t", ptr_int(PtrMode::Tainted))]),
        c,
        &Expr::Checked(vec!["t".into()], Box::new(Expr::deref(Expr::var("t")))),
    );
    rejects(
        &env(&[("p", ptr_int(PtrMode::Checked))]),
        c,
        &Expr::Checked(vec!["p".into()], Box::new(Expr::int(1))),
        "T-Checked",
    );
    accepts(
        &env(&[("t", ptr_int(PtrMode::Tainted))]),
        c,
        &Expr::Unchecked(vec!["t".into()], Box::new(Expr::deref(Expr::var("t")))),
    );
    rejects(
        &env(&[("t", ptr_int(PtrMode::Tainted))]),
        c,
        &Expr::Unchecked(vec![], Box::new(Expr::deref(Expr::var("t")))),
        "T-Unchecked",
    );

    println!("criterion 3: PASS — every S-rule and T-rule has matching golden fixtures");
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_4_progress_and_preservation_fuzz() {
    let cfg = GenConfig { seed: 20260810, max_depth: 8, count: 5000, ..GenConfig::default() };
    let failures: Vec<String> = (0..cfg.count)
        .into_par_iter()
        .filter_map(|i| {
            let p = gen_well_typed(&cfg, i);
            if let Verdict::Fail(m) = check_progress(&p, 128) {
                return Some(format!("case {i} progress: {m}"));
            }
            if let Verdict::Fail(m) = check_preservation(&p, 128) {
                return Some(format!("case {i} preservation: {m}"));
            }
            None
        })
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
    println!(
        "criterion 4: PASS — progress + preservation over {} programs at depth {}",
        cfg.count, cfg.max_depth
    );
}

#[test]
fn criterion_5_simulation_fuzz() {
    let cfg = GenConfig { seed: 518, max_depth: 8, count: 2000, ..GenConfig::default() };
    let results: Vec<(u64, Verdict)> = (0..cfg.count)
        .into_par_iter()
        .map(|i| (i, check_simulation(&gen_well_typed(&cfg, i), 96, 256)))
        .collect();
    let mut inconclusive = 0u64;
    for (i, v) in &results {
        match v {
            Verdict::Pass => {}
            Verdict::Inconclusive(msg) => {
                inconclusive += 1;
                println!("criterion 5: join budget exceeded in case {i}: {msg}");
            }
            Verdict::Fail(m) => panic!("case {i}: {m}"),
        }
    }
    let rate = inconclusive as f64 / cfg.count as f64;
    assert!(rate < 0.005, "inconclusive rate {rate}");
    println!(
        "criterion 5: PASS — adjacent-step simulation over {} programs, {} inconclusive",
        cfg.count, inconclusive
    );
}

#[test]
fn criterion_6_and_7_fault_injection() {
    let base = GenConfig {
        seed: 66,
        max_depth: 8,
        count: 1000,
        unchecked_blocks: true,
        ..GenConfig::default()
    };
    for rate in [0.25, 1.0] {
        let failures: Vec<String> = (0..base.count)
            .into_par_iter()
            .filter_map(|i| {
                let p = gen_well_typed(&base, i);
                let policy = FaultPolicy::new(rate, 0xC0FFEE ^ i);
                // Criterion 6: never stuck under injection.
                if let Verdict::Fail(m) = check_non_crashing(&p, 128, &policy) {
                    return Some(format!("case {i} rate {rate} non-crashing: {m}"));
                }
                // Criterion 7 piggybacks on the same corpus: unchecked steps
                // leave region C alone and observe no checked values.
                if let Verdict::Fail(m) = check_unchecked_preservation(&p, 128, &policy) {
                    return Some(format!("case {i} rate {rate} unchecked-preservation: {m}"));
                }
                if let Verdict::Fail(m) = check_non_exposure(&p, 128, &policy) {
                    return Some(format!("case {i} rate {rate} non-exposure: {m}"));
                }
                None
            })
            .collect();
        assert!(failures.is_empty(), "{failures:?}");
    }
    println!("criterion 6: PASS — non-crashing at rates 0.25 and 1.0 over 1000 programs");
    println!("criterion 7: PASS — unchecked preservation + non-exposure on the same traces");
}

#[test]
fn criterion_8_bound_le_soundness() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(88);
    let vars = ["x", "y"];
    let mut gen_bound = |rng: &mut rand_chacha::ChaCha8Rng| -> Bound {
        if rng.gen_bool(0.5) {
            Bound::Lit(rng.gen_range(-6..7))
        } else {
            Bound::Off(vars[rng.gen_range(0..vars.len())].to_string(), rng.gen_range(-4..5))
        }
    };
    let mut completeness_gaps = 0u64;
    for case in 0..10_000u64 {
        let theta = {
            let mut t = PredEnv::new();
            for v in vars {
                match rng.gen_range(0..3) {
                    0 => {}
                    1 => t = t.with(v, Predicate::GeZero),
                    _ => {
                        let b = gen_bound(&mut rng);
                        t = t.with(v, Predicate::Eq(b));
                    }
                }
            }
            t
        };
        let b1 = gen_bound(&mut rng);
        let b2 = gen_bound(&mut rng);
        let deductive = bound_le(&theta, &b1, &b2);
        // Brute-force oracle: enumerate all valuations over [-8, 8]
        // consistent with the predicates.
        let mut semantic = true;
        let mut any_model = false;
        for vx in -8..=8i64 {
            for vy in -8..=8i64 {
                let lookup = |x: &String| -> Option<i64> {
                    match x.as_str() {
                        "x" => Some(vx),
                        "y" => Some(vy),
                        _ => None,
                    }
                };
                let consistent = theta.0.iter().all(|(v, p)| {
                    let val = lookup(v).unwrap();
                    match p {
                        Predicate::GeZero => val >= 0,
                        Predicate::Eq(b) => b.eval(&lookup) == Some(val),
                    }
                });
                if !consistent {
                    continue;
                }
                any_model = true;
                let l = b1.eval(&lookup).unwrap();
                let r = b2.eval(&lookup).unwrap();
                if l > r {
                    semantic = false;
                }
            }
        }
        if deductive {
            assert!(
                !any_model || semantic,
                "case {case}: deductively true but semantically false: {theta:?} {b1:?} {b2:?}"
            );
        } else if semantic && any_model {
            completeness_gaps += 1;
        }
    }
    println!(
        "criterion 8: PASS — bound_le sound on 10000 instances ({completeness_gaps} completeness gaps logged, not failures)"
    );
}

#[test]
fn criterion_9_compilation_golden() {
    let prog = load_fixture("deref_array.chk");
    let compiled = compile_program(&prog).unwrap();
    let golden_text = std::fs::read_to_string(fixture("deref_array.golden.corec")).unwrap();
    let golden = parse_corec_program(&golden_text).unwrap();
    assert_eq!(compiled, golden, "compiled target differs from the checked-in golden");

    // Structural spot checks mirroring the reference shape: shadow
    // initialization from the parameter types at entry, assert before the
    // dereference, verify before the assignment, and no bounds passed at
    // the call.
    let def = &compiled.funs[&(Region::C, 1)];
    assert_eq!(def.params, vec!["n", "p", "q"]);
    let text = corechk::corec::print_cexpr(&def.body);
    assert!(text.starts_with("(bind p#lo (lit 0) (bind p#hi (var n) (bind q#lo (lit 0) (bind q#hi (var n)"));
    assert!(text.contains("(assertnn arr (var p))"));
    assert!(text.contains("(assertb nt (var p#lo) (var p#hi) (lit 0)) (deref c (var p))"));
    assert!(text.contains("(verify u (var q) (bounds (var q#lo) (var q#hi) (lit 0)) (elem int)) (assignr u (var q) (lit 1))"));
    let main = corechk::corec::print_cexpr(&compiled.main);
    assert!(main.contains("(callr c (lit 1) (lit 5) (lit 1) (lit 1))"));

    // The target agrees with the source outcome.
    let src = eval(&prog, 256, &FaultPolicy::OFF);
    let tgt = corechk::corec::eval_corec(&compiled, 1024);
    assert_eq!(src.result, Terminal::Value(Value::int(1)));
    assert!(matches!(tgt.result, corechk::corec::CTerminal::Value(1)));
    println!("criterion 9: PASS — dependent-function compilation matches the golden tree");
}

// ---------------------------------------------------------------------------
// Additional cross-checks backing the per-module invariants.

#[test]
fn subtype_reflexive_transitive_and_monotone() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    // A small corpus of types of depth <= 4.
    let mut types: Vec<WordType> = vec![WordType::Int];
    for _ in 0..60 {
        let m = [PtrMode::Checked, PtrMode::Tainted, PtrMode::Unchecked]
            [rng.gen_range(0..3)];
        let t = match rng.gen_range(0..3) {
            0 => WordType::ptr_word(WordType::Int, m),
            1 => WordType::ptr_array(
                rng.gen_bool(0.5),
                rng.gen_range(-1..2),
                rng.gen_range(0..4),
                WordType::Int,
                m,
            ),
            _ => {
                let inner = types[rng.gen_range(0..types.len())].clone();
                WordType::ptr(
                    ObjectType::Array { nt: false, bounds: BoundPair::lits(0, 2), elem: inner },
                    m,
                )
            }
        };
        types.push(t);
    }
    let theta = PredEnv::new().with("w", Predicate::GeZero);
    let bigger = theta.clone().with("v", Predicate::Eq(Bound::Lit(3)));
    let heap = Heap::new();
    let funs = FunStore::default();
    for a in &types {
        assert!(subtype(&theta, a, a), "reflexivity");
        for b in &types {
            if subtype(&theta, a, b) {
                // Monotonicity in the predicate environment.
                assert!(subtype(&bigger, a, b), "theta monotonicity");
                for c in &types {
                    if subtype(&theta, b, c) {
                        assert!(subtype(&theta, a, c), "transitivity {a:?} {b:?} {c:?}");
                    }
                }
                // Subsumption coherence: a cast to any well-formed
                // supertype typechecks to that supertype.
                if matches!(b, WordType::Ptr(..)) && wf_nested_word(PtrMode::Checked, b) {
                    let gamma: TypeEnv =
                        [("x".to_string(), a.clone())].into_iter().collect();
                    let e = Expr::cast(b.clone(), Expr::var("x"));
                    let got = typecheck_in(&gamma, &theta, ContextMode::Checked, &e, &heap, &funs)
                        .unwrap_or_else(|err| panic!("{err} for cast {a:?} -> {b:?}"));
                    assert_eq!(&got, b);
                }
            }
        }
    }
}

#[test]
fn fixtures_behave_as_documented() {
    let cases: &[(&str, Terminal)] = &[
        ("value.chk", Terminal::Value(Value::int(3))),
        ("null_deref.chk", Terminal::Null),
        ("out_of_bounds.chk", Terminal::Bounds),
        ("widen.chk", Terminal::Value(Value::int(7))),
        ("strlen.chk", Terminal::Value(Value::int(3))),
        ("tainted_rw.chk", Terminal::Value(Value::int(9))),
    ];
    for (name, want) in cases {
        let p = load_fixture(name);
        corechk::typecheck::validate_program(&p).unwrap();
        let out = eval(&p, 256, &FaultPolicy::OFF);
        assert_eq!(&out.result, want, "{name}");
        // Each fixture also simulates.
        assert_eq!(check_simulation(&p, 96, 256), Verdict::Pass, "{name}");
    }
    for name in ["reject_uc_deref.chk", "reject_cu_deref.chk", "reject_checked_interface.chk"] {
        let p = load_fixture(name);
        corechk::typecheck::validate_program(&p).unwrap_err();
    }
    let err = corechk::typecheck::validate_program(&load_fixture("reject_cu_deref.chk"))
        .unwrap_err();
    assert_eq!(err.rule, "T-Def");
}

#[test]
fn trace_invariants_on_fixture_runs() {
    // Heap annotations never change across assignments, and the null
    // address stays undefined, along every fixture trace.
    for name in ["value.chk", "widen.chk", "strlen.chk", "tainted_rw.chk", "deref_array.chk"] {
        let p = load_fixture(name);
        let out = eval(&p, 256, &FaultPolicy::OFF);
        let mut cells: BTreeMap<(Region, i64), WordType> = BTreeMap::new();
        let mut track = |heap: &Heap| {
            for (region, map) in [(Region::C, &heap.c), (Region::U, &heap.u)] {
                assert!(!map.contains_key(&0), "null address defined");
                for (a, v) in map {
                    let prev = cells.insert((region, *a), v.ty.clone());
                    if let Some(prev) = prev {
                        assert_eq!(prev, v.ty, "annotation changed at {region}:{a}");
                    }
                }
            }
        };
        for st in &out.steps {
            track(&st.before.heap);
        }
        track(&out.final_heap);
    }
}
