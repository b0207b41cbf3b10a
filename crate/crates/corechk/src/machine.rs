//! Small-step operational semantics: evaluation-context decomposition with
//! context modes, the computation rules over the two-region heap and
//! function store, failure results, and seeded fault injection for
//! unchecked regions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::lattice::PredEnv;
use crate::store::{FunStore, Heap, Stack};
use crate::syntax::*;
use crate::typecheck::{const_valid, size_of, typecheck_in, Scope};

/// One frame of an evaluation context; a context is a stack of frames,
/// outermost first.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Frame {
    AddL(Expr),
    AddR(Value),
    Cast(WordType),
    DynCast(WordType),
    Deref,
    AssignL(Expr),
    AssignR(Value),
    LetBound(Var, Expr),
    RetBody(Var, Option<Value>),
    IfGuard(Expr, Expr),
    CallCallee(Vec<Expr>),
    CallArg(Value, Vec<Value>, Vec<Expr>),
    UncheckedBody(Vec<Var>),
    CheckedBody(Vec<Var>),
}

pub type EvalContext = Vec<Frame>;

/// Rebuilds the expression from a context and a filler.
pub fn plug(frames: &[Frame], mut e: Expr) -> Expr {
    for f in frames.iter().rev() {
        e = match f.clone() {
            Frame::AddL(rhs) => Expr::add(e, rhs),
            Frame::AddR(lhs) => Expr::add(Expr::Lit(lhs), e),
            Frame::Cast(t) => Expr::cast(t, e),
            Frame::DynCast(t) => Expr::dyncast(t, e),
            Frame::Deref => Expr::deref(e),
            Frame::AssignL(rhs) => Expr::assign(e, rhs),
            Frame::AssignR(lhs) => Expr::assign(Expr::Lit(lhs), e),
            Frame::LetBound(x, body) => Expr::Let(x, Box::new(e), Box::new(body)),
            Frame::RetBody(x, saved) => Expr::Ret(x, saved, Box::new(e)),
            Frame::IfGuard(t, f2) => Expr::if_(e, t, f2),
            Frame::CallCallee(args) => Expr::Call(Box::new(e), args),
            Frame::CallArg(callee, before, after) => {
                let mut args: Vec<Expr> = before.into_iter().map(Expr::Lit).collect();
                args.push(e);
                args.extend(after);
                Expr::Call(Box::new(Expr::Lit(callee)), args)
            }
            Frame::UncheckedBody(xs) => Expr::Unchecked(xs, Box::new(e)),
            Frame::CheckedBody(xs) => Expr::Checked(xs, Box::new(e)),
        };
    }
    e
}

/// Context mode: the innermost enclosing checked/unchecked frame decides;
/// the top level is checked.
pub fn context_mode(frames: &[Frame]) -> ContextMode {
    for f in frames.iter().rev() {
        match f {
            Frame::CheckedBody(_) => return ContextMode::Checked,
            Frame::UncheckedBody(_) => return ContextMode::Unchecked,
            _ => {}
        }
    }
    ContextMode::Checked
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Decomposition {
    AlreadyValue,
    Redex(EvalContext, Expr),
}

/// Purely syntactic unique decomposition per the evaluation-context
/// grammar. The machine itself uses [`decompose_in`], which additionally
/// recognizes the NT-array widening guard (that rule's premises consult the
/// stack and heap).
pub fn decompose(e: &Expr) -> Decomposition {
    decompose_in(e, None)
}

pub fn decompose_in(e: &Expr, state: Option<(&Stack, &Heap)>) -> Decomposition {
    let mut frames = Vec::new();
    match find_redex(e, state, &mut frames) {
        None => Decomposition::AlreadyValue,
        Some(redex) => Decomposition::Redex(frames, redex),
    }
}

fn find_redex(e: &Expr, st: Option<(&Stack, &Heap)>, frames: &mut Vec<Frame>) -> Option<Expr> {
    match e {
        Expr::Lit(_) => None,
        Expr::Var(_) | Expr::Strlen(_) | Expr::Malloc(..) => Some(e.clone()),
        Expr::Add(a, b) => {
            if !a.is_value() {
                frames.push(Frame::AddL(b.as_ref().clone()));
                find_redex(a, st, frames)
            } else if !b.is_value() {
                frames.push(Frame::AddR(a.as_value().unwrap().clone()));
                find_redex(b, st, frames)
            } else {
                Some(e.clone())
            }
        }
        Expr::Cast(t, inner) => {
            if !inner.is_value() {
                frames.push(Frame::Cast(t.clone()));
                find_redex(inner, st, frames)
            } else {
                Some(e.clone())
            }
        }
        Expr::DynCast(t, inner) => {
            if !inner.is_value() {
                frames.push(Frame::DynCast(t.clone()));
                find_redex(inner, st, frames)
            } else {
                Some(e.clone())
            }
        }
        Expr::Deref(inner) => {
            if !inner.is_value() {
                frames.push(Frame::Deref);
                find_redex(inner, st, frames)
            } else {
                Some(e.clone())
            }
        }
        Expr::Assign(l, r) => {
            if !l.is_value() {
                frames.push(Frame::AssignL(r.as_ref().clone()));
                find_redex(l, st, frames)
            } else if !r.is_value() {
                frames.push(Frame::AssignR(l.as_value().unwrap().clone()));
                find_redex(r, st, frames)
            } else {
                Some(e.clone())
            }
        }
        Expr::Let(x, e1, e2) => {
            if !e1.is_value() {
                frames.push(Frame::LetBound(x.clone(), e2.as_ref().clone()));
                find_redex(e1, st, frames)
            } else {
                Some(e.clone())
            }
        }
        Expr::Ret(x, saved, body) => {
            if !body.is_value() {
                frames.push(Frame::RetBody(x.clone(), saved.clone()));
                find_redex(body, st, frames)
            } else {
                Some(e.clone())
            }
        }
        Expr::If(g, t, f) => {
            if let Some((stack, heap)) = st {
                if nt_widen_premises(g, stack, heap) {
                    return Some(e.clone());
                }
            }
            if !g.is_value() {
                frames.push(Frame::IfGuard(t.as_ref().clone(), f.as_ref().clone()));
                find_redex(g, st, frames)
            } else {
                Some(e.clone())
            }
        }
        Expr::Call(callee, args) => {
            if !callee.is_value() {
                frames.push(Frame::CallCallee(args.clone()));
                return find_redex(callee, st, frames);
            }
            for (i, a) in args.iter().enumerate() {
                if !a.is_value() {
                    let before = args[..i]
                        .iter()
                        .map(|e| e.as_value().unwrap().clone())
                        .collect();
                    let after = args[i + 1..].to_vec();
                    frames.push(Frame::CallArg(
                        callee.as_value().unwrap().clone(),
                        before,
                        after,
                    ));
                    return find_redex(a, st, frames);
                }
            }
            Some(e.clone())
        }
        Expr::Unchecked(xs, body) => {
            if !body.is_value() {
                frames.push(Frame::UncheckedBody(xs.clone()));
                find_redex(body, st, frames)
            } else {
                Some(e.clone())
            }
        }
        Expr::Checked(xs, body) => {
            if !body.is_value() {
                frames.push(Frame::CheckedBody(xs.clone()));
                find_redex(body, st, frames)
            } else {
                Some(e.clone())
            }
        }
    }
}

/// Premises of the NT-array widening guard: `if (*x) ...` where x holds a
/// checked NT-array pointer whose upper bound is exactly 0 (so the
/// dereference reads the current upper-bound position) and the cell there
/// is defined and nonzero.
fn nt_widen_premises(guard: &Expr, stack: &Stack, heap: &Heap) -> bool {
    let Expr::Deref(inner) = guard else { return false };
    let Expr::Var(x) = inner.as_ref() else { return false };
    let Some(v) = stack.get(x) else { return false };
    let WordType::Ptr(omega, PtrMode::Checked) = &v.ty else { return false };
    let ObjectType::Array { nt: true, bounds, .. } = omega.as_ref() else { return false };
    let (Some(lo), Some(hi)) = (bounds.lo.as_lit(), bounds.hi.as_lit()) else { return false };
    if hi != 0 || lo > 0 {
        return false;
    }
    matches!(heap.get(Region::C, v.n), Some(cell) if cell.n != 0)
}

/// Result of one computation-relation application.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Computed {
    Next { stack: Stack, heap: Heap, expr: Expr, rule: &'static str },
    Null { rule: &'static str },
    Bounds { rule: &'static str },
    NoRule,
}

fn literal_array_bounds(ty: &WordType) -> Option<(bool, i64, i64, WordType, PtrMode)> {
    let WordType::Ptr(omega, xi) = ty else { return None };
    let ObjectType::Array { nt, bounds, elem } = omega.as_ref() else { return None };
    Some((*nt, bounds.lo.as_lit()?, bounds.hi.as_lit()?, elem.clone(), *xi))
}

/// Dynamic verification for tainted accesses: the constant-validity
/// judgment at unchecked mode with empty Θ and scope.
fn verify_tainted(heap: &Heap, funs: &FunStore, n: i64, tau: &WordType) -> bool {
    const_valid(
        &PredEnv::new(),
        heap,
        funs,
        &Scope::new(),
        ContextMode::Unchecked,
        n,
        tau,
    )
}

/// Applies one computation rule to a redex.
pub fn compute_step(stack: &Stack, heap: &Heap, funs: &FunStore, redex: &Expr) -> Computed {
    let keep = |expr: Expr, rule: &'static str| Computed::Next {
        stack: stack.clone(),
        heap: heap.clone(),
        expr,
        rule,
    };
    match redex {
        Expr::Var(x) => match stack.get(x) {
            Some(v) => keep(Expr::Lit(v.clone()), "S-Var"),
            None => Computed::NoRule,
        },
        Expr::Add(a, b) => {
            let (Some(va), Some(vb)) = (a.as_value(), b.as_value()) else {
                return Computed::NoRule;
            };
            match (&va.ty, &vb.ty) {
                (WordType::Int, WordType::Int) => {
                    keep(Expr::int(va.n.wrapping_add(vb.n)), "S-Add")
                }
                (WordType::Ptr(..), WordType::Int) => {
                    let Some((nt, lo, hi, elem, xi)) = literal_array_bounds(&va.ty) else {
                        return Computed::NoRule;
                    };
                    if va.n == 0 {
                        return Computed::Null { rule: "S-AddArrNull" };
                    }
                    let shifted = WordType::ptr(
                        ObjectType::Array {
                            nt,
                            bounds: BoundPair::lits(
                                lo.wrapping_sub(vb.n),
                                hi.wrapping_sub(vb.n),
                            ),
                            elem,
                        },
                        xi,
                    );
                    keep(Expr::lit(va.n.wrapping_add(vb.n), shifted), "S-AddArr")
                }
                _ => Computed::NoRule,
            }
        }
        Expr::Cast(t, inner) => {
            let Some(v) = inner.as_value() else { return Computed::NoRule };
            match stack.eval_type(t) {
                Some(t2) => keep(Expr::lit(v.n, t2), "S-Cast"),
                None => Computed::NoRule,
            }
        }
        Expr::DynCast(t, inner) => {
            let Some(v) = inner.as_value() else { return Computed::NoRule };
            let Some(target) = stack.eval_type(t) else { return Computed::NoRule };
            match (literal_array_bounds(&target), literal_array_bounds(&v.ty)) {
                (Some((tnt, tlo, thi, _, _)), Some((snt, slo, shi, _, _))) => {
                    // Both array pointers: the target bounds must sit inside
                    // the source bounds, and a plain source cannot acquire a
                    // null-terminator guarantee. Null passes untested.
                    let ok = v.n == 0 || (slo <= tlo && thi <= shi && (snt || !tnt));
                    if ok {
                        keep(Expr::lit(v.n, target), "S-DynCast")
                    } else {
                        Computed::Bounds { rule: "S-DynCastBound" }
                    }
                }
                _ => keep(Expr::lit(v.n, target), "S-DynCast"),
            }
        }
        Expr::Deref(inner) => {
            let Some(v) = inner.as_value() else { return Computed::NoRule };
            compute_deref(stack, heap, funs, v)
        }
        Expr::Assign(l, r) => {
            let (Some(lhs), Some(rhs)) = (l.as_value(), r.as_value()) else {
                return Computed::NoRule;
            };
            compute_assign(stack, heap, funs, lhs, rhs)
        }
        Expr::Let(x, e1, e2) => {
            let Some(v) = e1.as_value() else { return Computed::NoRule };
            let saved = stack.get(x).cloned();
            let mut stack2 = stack.clone();
            stack2.bind(x.clone(), v.clone());
            Computed::Next {
                stack: stack2,
                heap: heap.clone(),
                expr: Expr::Ret(x.clone(), saved, e2.clone()),
                rule: "S-Let",
            }
        }
        Expr::Ret(x, saved, body) => {
            let Some(v) = body.as_value() else { return Computed::NoRule };
            let mut stack2 = stack.clone();
            stack2.restore(x, saved.clone());
            Computed::Next {
                stack: stack2,
                heap: heap.clone(),
                expr: Expr::Lit(v.clone()),
                rule: "S-Ret",
            }
        }
        Expr::If(g, e1, e2) => {
            if nt_widen_premises(g, stack, heap) {
                let Expr::Deref(inner) = g.as_ref() else { unreachable!() };
                let Expr::Var(x) = inner.as_ref() else { unreachable!() };
                let v = stack.get(x).unwrap().clone();
                let WordType::Ptr(omega, xi) = &v.ty else { unreachable!() };
                let ObjectType::Array { nt, bounds, elem } = omega.as_ref() else {
                    unreachable!()
                };
                let widened = WordType::ptr(
                    ObjectType::Array {
                        nt: *nt,
                        bounds: BoundPair { lo: bounds.lo.clone(), hi: Bound::Lit(1) },
                        elem: elem.clone(),
                    },
                    *xi,
                );
                let mut stack2 = stack.clone();
                stack2.bind(x.clone(), Value::new(v.n, widened));
                return Computed::Next {
                    stack: stack2,
                    heap: heap.clone(),
                    expr: e1.as_ref().clone(),
                    rule: "S-IfNTNotC",
                };
            }
            let Some(v) = g.as_value() else { return Computed::NoRule };
            if v.n != 0 {
                keep(e1.as_ref().clone(), "S-IfT")
            } else {
                keep(e2.as_ref().clone(), "S-IfF")
            }
        }
        Expr::Strlen(x) => {
            let Some(v) = stack.get(x) else { return Computed::NoRule };
            let Some((nt, lo, hi, elem, xi)) = literal_array_bounds(&v.ty) else {
                return Computed::NoRule;
            };
            if !nt {
                return Computed::NoRule;
            }
            let region = heap_region(xi);
            let mut k = 0i64;
            loop {
                match heap.get(region, v.n + k) {
                    None => return Computed::Bounds { rule: "S-StrlenBound" },
                    Some(cell) if cell.n == 0 => break,
                    Some(_) => k += 1,
                }
            }
            let mut stack2 = stack.clone();
            if k > hi {
                let widened = WordType::ptr(
                    ObjectType::Array { nt, bounds: BoundPair::lits(lo, k), elem },
                    xi,
                );
                stack2.bind(x.clone(), Value::new(v.n, widened));
            }
            Computed::Next {
                stack: stack2,
                heap: heap.clone(),
                expr: Expr::int(k),
                rule: "S-Strlen",
            }
        }
        Expr::Malloc(xi, omega) => {
            let Some(omega2) = stack.eval_object(omega) else { return Computed::NoRule };
            if let ObjectType::Array { bounds, .. } = &omega2 {
                let (Some(lo), Some(hi)) = (bounds.lo.as_lit(), bounds.hi.as_lit()) else {
                    return Computed::NoRule;
                };
                if lo != 0 || hi <= 0 {
                    return Computed::Bounds { rule: "S-MallocBound" };
                }
            }
            let Ok(count) = size_of(&omega2) else { return Computed::NoRule };
            let elem = match &omega2 {
                ObjectType::Word(t) => t.clone(),
                ObjectType::Array { elem, .. } => elem.clone(),
                ObjectType::Fun { .. } => return Computed::NoRule,
            };
            let region = heap_region(*xi);
            let mut heap2 = heap.clone();
            let base = heap2.alloc(region, count, &elem);
            Computed::Next {
                stack: stack.clone(),
                heap: heap2,
                expr: Expr::lit(base, WordType::ptr(omega2, *xi)),
                rule: "S-Malloc",
            }
        }
        Expr::Call(callee, args) => {
            let Some(f) = callee.as_value() else { return Computed::NoRule };
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                match a.as_value() {
                    Some(v) => vals.push(v.clone()),
                    None => return Computed::NoRule,
                }
            }
            compute_call(stack, heap, funs, f, &vals)
        }
        Expr::Unchecked(_, body) => match body.as_value() {
            Some(v) => keep(Expr::Lit(v.clone()), "S-Unchecked"),
            None => Computed::NoRule,
        },
        Expr::Checked(_, body) => match body.as_value() {
            Some(v) => keep(Expr::Lit(v.clone()), "S-Checked"),
            None => Computed::NoRule,
        },
        Expr::Lit(_) => Computed::NoRule,
    }
}

fn compute_deref(stack: &Stack, heap: &Heap, funs: &FunStore, v: &Value) -> Computed {
    let WordType::Ptr(omega, xi) = &v.ty else { return Computed::NoRule };
    let read = |region: Region, result_ty: &WordType, rule: &'static str| {
        match heap.get(region, v.n) {
            Some(cell) => Computed::Next {
                stack: stack.clone(),
                heap: heap.clone(),
                expr: Expr::lit(cell.n, result_ty.clone()),
                rule,
            },
            None => Computed::NoRule,
        }
    };
    let read_verified = |result_ty: &WordType, rule: &'static str| match heap.get(Region::U, v.n)
    {
        Some(cell) if verify_tainted(heap, funs, cell.n, result_ty) => Computed::Next {
            stack: stack.clone(),
            heap: heap.clone(),
            expr: Expr::lit(cell.n, result_ty.clone()),
            rule,
        },
        _ => Computed::Bounds { rule: "S-DefTFail" },
    };
    match omega.as_ref() {
        ObjectType::Fun { .. } => Computed::NoRule,
        ObjectType::Word(tau) => {
            if v.n == 0 {
                return Computed::Null { rule: "S-DefNull" };
            }
            match xi {
                PtrMode::Checked => read(Region::C, tau, "S-DefC"),
                PtrMode::Tainted => read_verified(tau, "S-DefT"),
                PtrMode::Unchecked => read(Region::U, tau, "S-DefU"),
            }
        }
        ObjectType::Array { .. } => {
            let Some((nt, lo, hi, elem, _)) = literal_array_bounds(&v.ty) else {
                return Computed::NoRule;
            };
            // Array pointers take the null transition for any n <= 0.
            if v.n <= 0 {
                return Computed::Null { rule: "S-DefNull" };
            }
            // NT-array dereference may read the upper-bound position.
            let in_range = if nt { lo <= 0 && 0 <= hi } else { lo <= 0 && 0 < hi };
            if !in_range {
                let rule = if nt { "S-DefNTArrayBound" } else { "S-DefArrayBound" };
                return Computed::Bounds { rule };
            }
            match xi {
                PtrMode::Checked => read(Region::C, &elem, "S-DefArrayC"),
                PtrMode::Tainted => read_verified(&elem, "S-DefArrayT"),
                PtrMode::Unchecked => read(Region::U, &elem, "S-DefArrayU"),
            }
        }
    }
}

fn compute_assign(
    stack: &Stack,
    heap: &Heap,
    funs: &FunStore,
    lhs: &Value,
    rhs: &Value,
) -> Computed {
    let WordType::Ptr(omega, xi) = &lhs.ty else { return Computed::NoRule };
    // Heap cells keep their stored annotation across writes.
    let write = |region: Region, stored_ty: WordType, result: WordType, rule: &'static str| {
        let mut heap2 = heap.clone();
        heap2
            .region_mut(region)
            .insert(lhs.n, Value::new(rhs.n, stored_ty));
        Computed::Next {
            stack: stack.clone(),
            heap: heap2,
            expr: Expr::lit(rhs.n, result),
            rule,
        }
    };
    match omega.as_ref() {
        ObjectType::Fun { .. } => Computed::NoRule,
        ObjectType::Word(tau) => {
            if lhs.n == 0 {
                return Computed::Null { rule: "S-AssignNull" };
            }
            match xi {
                PtrMode::Checked => match heap.get(Region::C, lhs.n) {
                    Some(cell) => write(Region::C, cell.ty.clone(), tau.clone(), "S-AssignC"),
                    None => Computed::NoRule,
                },
                PtrMode::Tainted => match heap.get(Region::U, lhs.n) {
                    Some(cell) if verify_tainted(heap, funs, cell.n, tau) => {
                        write(Region::U, cell.ty.clone(), tau.clone(), "S-AssignT")
                    }
                    _ => Computed::Bounds { rule: "S-AssignTFail" },
                },
                PtrMode::Unchecked => match heap.get(Region::U, lhs.n) {
                    Some(cell) => write(Region::U, cell.ty.clone(), tau.clone(), "S-AssignU"),
                    None => Computed::NoRule,
                },
            }
        }
        ObjectType::Array { .. } => {
            let Some((_, lo, hi, elem, _)) = literal_array_bounds(&lhs.ty) else {
                return Computed::NoRule;
            };
            if lhs.n <= 0 {
                return Computed::Null { rule: "S-AssignNull" };
            }
            // Writes are strict at the upper bound for both array kinds.
            if !(lo <= 0 && 0 < hi) {
                return Computed::Bounds { rule: "S-AssignArrBound" };
            }
            match xi {
                PtrMode::Checked => match heap.get(Region::C, lhs.n) {
                    Some(cell) => write(Region::C, cell.ty.clone(), elem, "S-AssignArrC"),
                    None => Computed::NoRule,
                },
                PtrMode::Tainted => match heap.get(Region::U, lhs.n) {
                    Some(cell) if verify_tainted(heap, funs, cell.n, &elem) => {
                        write(Region::U, cell.ty.clone(), elem, "S-AssignArrT")
                    }
                    _ => Computed::Bounds { rule: "S-AssignTFail" },
                },
                PtrMode::Unchecked => match heap.get(Region::U, lhs.n) {
                    Some(cell) => write(Region::U, cell.ty.clone(), elem, "S-AssignArrU"),
                    None => Computed::NoRule,
                },
            }
        }
    }
}

fn compute_call(
    stack: &Stack,
    heap: &Heap,
    funs: &FunStore,
    f: &Value,
    args: &[Value],
) -> Computed {
    let WordType::Ptr(omega, xi) = &f.ty else { return Computed::NoRule };
    let ObjectType::Fun { .. } = omega.as_ref() else { return Computed::NoRule };
    if f.n == 0 {
        return Computed::Null { rule: "S-FunNull" };
    }
    let (region, rule) = match xi {
        PtrMode::Checked => (Region::C, "S-FunC"),
        PtrMode::Tainted => (Region::U, "S-FunT"),
        PtrMode::Unchecked => (Region::U, "S-FunU"),
    };
    // Tainted calls verify the function pointer against the store before
    // use; checked ones were verified statically.
    if *xi == PtrMode::Tainted && !verify_tainted(heap, funs, f.n, &f.ty) {
        return Computed::Bounds { rule: "S-FunTFail" };
    }
    let Some(def) = funs.get(region, f.n) else { return Computed::NoRule };
    if def.mode != *xi || def.params.len() != args.len() {
        return Computed::NoRule;
    }
    // Instantiate the signature: integer parameter values substitute into
    // the parameter and return types; the arguments are rebound at the
    // instantiated signature types.
    let mut map = std::collections::BTreeMap::new();
    for ((x, t), v) in def.params.iter().zip(args) {
        if *t == WordType::Int {
            map.insert(x.clone(), Bound::Lit(v.n));
        }
    }
    let mut expr = Expr::cast(subst_word(&def.ret, &map), def.body.clone());
    for ((x, t), v) in def.params.iter().zip(args).rev() {
        expr = Expr::let_(x.clone(), Expr::lit(v.n, subst_word(t, &map)), expr);
    }
    Computed::Next { stack: stack.clone(), heap: heap.clone(), expr, rule }
}

/// Terminal evaluation results. Null and bounds failures are legal outcomes
/// of a failed dynamic check; `Stuck` flags undefined behavior.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Terminal {
    Value(Value),
    Null,
    Bounds,
    Stuck,
    OutOfFuel,
}

impl Terminal {
    pub fn describe(&self) -> String {
        match self {
            Terminal::Value(v) => {
                format!("value {} : {}", v.n, crate::print::print_word(&v.ty))
            }
            Terminal::Null => "null".to_string(),
            Terminal::Bounds => "bounds".to_string(),
            Terminal::Stuck => "stuck".to_string(),
            Terminal::OutOfFuel => "out-of-fuel".to_string(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum StepKind {
    Rule(&'static str),
    FaultInjected,
}

impl StepKind {
    pub fn name(&self) -> &'static str {
        match self {
            StepKind::Rule(r) => r,
            StepKind::FaultInjected => "U-Crash",
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Config {
    pub stack: Stack,
    pub heap: Heap,
    pub expr: Expr,
}

/// One recorded step: the configuration it started from, the context mode
/// of the redex, the rule applied and the redex itself.
#[derive(Clone, Debug)]
pub struct TraceStep {
    pub before: Config,
    pub mode: ContextMode,
    pub kind: StepKind,
    pub redex: Expr,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub result: Terminal,
    pub steps: Vec<TraceStep>,
    pub final_stack: Stack,
    pub final_heap: Heap,
    pub final_expr: Option<Expr>,
}

/// Policy for the nondeterministic unchecked-region crash rule, made
/// reproducible: with probability `rate`, an unchecked-mode redex is
/// replaced by `0 : τ`. Rate 0 disables the rule entirely.
#[derive(Clone, Copy, Debug)]
pub struct FaultPolicy {
    pub rate: f64,
    pub seed: u64,
}

impl FaultPolicy {
    pub const OFF: FaultPolicy = FaultPolicy { rate: 0.0, seed: 0 };

    pub fn new(rate: f64, seed: u64) -> FaultPolicy {
        FaultPolicy { rate, seed }
    }
}

pub enum StepResult {
    Stepped { config: Config, mode: ContextMode, kind: StepKind, redex: Expr },
    Done(Value),
    Failed { terminal: Terminal, mode: ContextMode, kind: StepKind, redex: Expr },
    Stuck { redex: Expr },
}

/// Performs one evaluation step: decompose, determine the context mode,
/// possibly fire the fault-injection rule, otherwise apply the computation
/// relation and plug the context. Null and bounds failures abort the whole
/// evaluation.
pub fn step(
    config: &Config,
    funs: &FunStore,
    policy: &FaultPolicy,
    rng: &mut ChaCha8Rng,
) -> StepResult {
    let decomp = decompose_in(&config.expr, Some((&config.stack, &config.heap)));
    let (frames, redex) = match decomp {
        Decomposition::AlreadyValue => {
            return StepResult::Done(config.expr.as_value().unwrap().clone());
        }
        Decomposition::Redex(frames, redex) => (frames, redex),
    };
    let mode = context_mode(&frames);
    if mode == ContextMode::Unchecked && policy.rate > 0.0 && rng.gen::<f64>() < policy.rate {
        // Recover the program to a safe point 0 : τ, where τ is the redex's
        // type in the ambient environment, evaluated against the stack so
        // the injected literal is closed.
        let gamma = config.stack.type_env();
        let theta = config.stack.pred_env();
        if let Ok(tau) =
            typecheck_in(&gamma, &theta, ContextMode::Unchecked, &redex, &config.heap, funs)
        {
            if let Some(tau) = config.stack.eval_type(&tau) {
                let expr = plug(&frames, Expr::lit(0, tau));
                return StepResult::Stepped {
                    config: Config {
                        stack: config.stack.clone(),
                        heap: config.heap.clone(),
                        expr,
                    },
                    mode,
                    kind: StepKind::FaultInjected,
                    redex,
                };
            }
        }
    }
    match compute_step(&config.stack, &config.heap, funs, &redex) {
        Computed::Next { stack, heap, expr, rule } => StepResult::Stepped {
            config: Config { stack, heap, expr: plug(&frames, expr) },
            mode,
            kind: StepKind::Rule(rule),
            redex,
        },
        Computed::Null { rule } => StepResult::Failed {
            terminal: Terminal::Null,
            mode,
            kind: StepKind::Rule(rule),
            redex,
        },
        Computed::Bounds { rule } => StepResult::Failed {
            terminal: Terminal::Bounds,
            mode,
            kind: StepKind::Rule(rule),
            redex,
        },
        Computed::NoRule => StepResult::Stuck { redex },
    }
}

/// Iterates [`step`] up to `fuel` times from the program's initial
/// configuration, recording the trace.
pub fn eval(program: &Program, fuel: u64, policy: &FaultPolicy) -> Outcome {
    let funs = FunStore::from_program(program);
    let config = Config {
        stack: Stack::new(),
        heap: Heap::from_init(&program.heap_init),
        expr: program.main.clone(),
    };
    eval_config(config, &funs, fuel, policy)
}

pub fn eval_config(
    mut config: Config,
    funs: &FunStore,
    fuel: u64,
    policy: &FaultPolicy,
) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut steps = Vec::new();
    for _ in 0..fuel {
        match step(&config, funs, policy, &mut rng) {
            StepResult::Done(v) => {
                return Outcome {
                    result: Terminal::Value(v),
                    steps,
                    final_stack: config.stack,
                    final_heap: config.heap,
                    final_expr: Some(config.expr),
                };
            }
            StepResult::Stepped { config: next, mode, kind, redex } => {
                steps.push(TraceStep { before: config, mode, kind, redex });
                config = next;
            }
            StepResult::Failed { terminal, mode, kind, redex } => {
                steps.push(TraceStep { before: config.clone(), mode, kind, redex });
                return Outcome {
                    result: terminal,
                    steps,
                    final_stack: config.stack,
                    final_heap: config.heap,
                    final_expr: None,
                };
            }
            StepResult::Stuck { redex } => {
                let _ = redex;
                return Outcome {
                    result: Terminal::Stuck,
                    steps,
                    final_stack: config.stack.clone(),
                    final_heap: config.heap.clone(),
                    final_expr: Some(config.expr),
                };
            }
        }
    }
    Outcome {
        result: Terminal::OutOfFuel,
        steps,
        final_stack: config.stack.clone(),
        final_heap: config.heap.clone(),
        final_expr: Some(config.expr),
    }
}
