//! The mode-indexed typing judgment `Γ;Θ ⊢_m e : τ`, plus the literal
//! validity verification used statically for checked literals (T-ConstC) and
//! dynamically for tainted pointer accesses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::lattice::*;
use crate::store::{FunStore, Heap};
use crate::syntax::*;

pub type TypeEnv = BTreeMap<Var, WordType>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{rule} at {path}: {msg}")]
pub struct TypeError {
    pub rule: String,
    pub path: String,
    pub msg: String,
}

#[derive(Clone, Copy, Debug)]
enum Seg {
    Name(&'static str),
    Idx(&'static str, usize),
}

impl fmt::Display for Seg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Seg::Name(s) => write!(f, "{s}"),
            Seg::Idx(s, i) => write!(f, "{s}[{i}]"),
        }
    }
}

struct Ck<'a> {
    heap: &'a Heap,
    funs: &'a FunStore,
    path: Vec<Seg>,
    /// When set, literal validity against the heap is assumed rather than
    /// re-verified; used by the compiler, whose input is already validated.
    trust_consts: bool,
}

impl<'a> Ck<'a> {
    fn err<T>(&self, rule: &str, msg: impl Into<String>) -> Result<T, TypeError> {
        let mut path = String::from("main");
        for seg in &self.path {
            path.push('.');
            path.push_str(&seg.to_string());
        }
        Err(TypeError { rule: rule.to_string(), path, msg: msg.into() })
    }
}

/// `c(τ)`: true exactly for checked pointers; the outermost mode decides.
pub fn is_checked(tau: &WordType) -> bool {
    matches!(tau, WordType::Ptr(_, PtrMode::Checked))
}

/// Formation discipline for a type at its occurrence: the nested-pointer
/// rules descending from the meet of the root pointer's mode with the
/// context (no checked component below a tainted or unchecked pointer).
/// The root's own `ξ ≤ m` condition belongs to the access rules instead;
/// an unchecked `int*` may be formed and carried through checked code.
pub fn wf_formation(m: ContextMode, tau: &WordType) -> bool {
    match tau {
        WordType::Int => true,
        WordType::Ptr(omega, xi) => {
            wf_nested_object(crate::lattice::mode_meet(*xi, m.as_ptr_mode()), omega)
        }
    }
}

/// Word size of an object type: `int` and pointers occupy one cell; arrays
/// `(l,h)` occupy `(h-l)` elements plus one terminator cell when
/// null-terminated. Function types are unsized and variable bounds have no
/// static size.
pub fn size_of(omega: &ObjectType) -> Result<i64, String> {
    match omega {
        ObjectType::Word(_) => Ok(1),
        ObjectType::Array { nt, bounds, elem } => {
            let lo = bounds.lo.as_lit().ok_or("variable lower bound has no size")?;
            let hi = bounds.hi.as_lit().ok_or("variable upper bound has no size")?;
            let elem_size = match elem {
                WordType::Int | WordType::Ptr(..) => 1,
            };
            Ok((hi - lo).max(0) * elem_size + if *nt { 1 } else { 0 })
        }
        ObjectType::Fun { .. } => Err("function types are unsized".to_string()),
    }
}

pub type Scope = BTreeSet<(i64, WordType)>;

/// Constant validity `Θ;H;σ ⊢_m n : τ`. The scope σ carries pointers assumed
/// valid, breaking cycles through the heap.
pub fn const_valid(
    theta: &PredEnv,
    heap: &Heap,
    funs: &FunStore,
    sigma: &Scope,
    m: ContextMode,
    n: i64,
    tau: &WordType,
) -> bool {
    let (omega, xi) = match tau {
        WordType::Int => return true,
        WordType::Ptr(omega, xi) => (omega.as_ref(), *xi),
    };
    // Null pointers are always valid.
    if n == 0 {
        return true;
    }
    // Mode restriction: literals whose region the current mode cannot
    // inspect are assumed valid here and verified dynamically.
    let vacuous = match m {
        ContextMode::Checked => xi != PtrMode::Checked,
        ContextMode::Unchecked => xi == PtrMode::Unchecked,
    };
    if vacuous {
        return true;
    }
    if sigma.contains(&(n, tau.clone())) {
        return true;
    }
    let region = match m {
        ContextMode::Checked => Region::C,
        ContextMode::Unchecked => Region::U,
    };
    if direct_valid(theta, heap, funs, sigma, m, region, n, omega, xi, tau) {
        return true;
    }
    // Subtype weakening along the declared axes: an unchecked pointer is
    // valid if the same-shaped tainted pointer is, and a plain array pointer
    // is valid if the same-bounded NT one is.
    if xi == PtrMode::Unchecked {
        let weaker = WordType::ptr(omega.clone(), PtrMode::Tainted);
        if subtype(theta, &weaker, tau) && const_valid(theta, heap, funs, sigma, m, n, &weaker) {
            return true;
        }
    }
    if let ObjectType::Array { nt: false, bounds, elem } = omega {
        let weaker = WordType::ptr(
            ObjectType::Array { nt: true, bounds: bounds.clone(), elem: elem.clone() },
            xi,
        );
        if subtype(theta, &weaker, tau) && const_valid(theta, heap, funs, sigma, m, n, &weaker) {
            return true;
        }
    }
    false
}

#[allow(clippy::too_many_arguments)]
fn direct_valid(
    theta: &PredEnv,
    heap: &Heap,
    funs: &FunStore,
    sigma: &Scope,
    m: ContextMode,
    region: Region,
    n: i64,
    omega: &ObjectType,
    xi: PtrMode,
    tau: &WordType,
) -> bool {
    if !mode_le(xi, m.as_ptr_mode()) {
        return false;
    }
    if let ObjectType::Fun { .. } = omega {
        // A valid function pointer sits in the right store region, with the
        // matching flag, and its signature assembles to the claimed type.
        let Some(def) = funs.get(region, n) else { return false };
        return def.mode == xi && object_eq(theta, &def.fun_type(), omega);
    }
    // Footprint of the object: one cell for word pointees, the accessible
    // offset range for arrays (bounds may have been shifted by pointer
    // arithmetic; at zero lower bounds this is exactly [n, n+size)).
    let offsets: std::ops::Range<i64> = match omega {
        ObjectType::Word(_) => 0..1,
        ObjectType::Array { nt, bounds, .. } => {
            let (Some(lo), Some(hi)) = (bounds.lo.as_lit(), bounds.hi.as_lit()) else {
                return false;
            };
            lo..(hi + if *nt { 1 } else { 0 })
        }
        ObjectType::Fun { .. } => unreachable!(),
    };
    let mut sigma2 = sigma.clone();
    sigma2.insert((n, tau.clone()));
    for i in offsets {
        match heap.get(region, n + i) {
            None => return false,
            Some(cell) => {
                if !const_valid(theta, heap, funs, &sigma2, m, cell.n, &cell.ty) {
                    return false;
                }
            }
        }
    }
    true
}

/// Is the expression shaped like a bound (`n`, `x`, or `x + n`)?
pub fn as_bound_expr(e: &Expr) -> Option<Bound> {
    match e {
        Expr::Lit(v) if v.ty == WordType::Int => Some(Bound::Lit(v.n)),
        Expr::Var(x) => Some(Bound::Off(x.clone(), 0)),
        Expr::Add(a, b) => match (a.as_ref(), b.as_ref()) {
            (Expr::Var(x), Expr::Lit(v)) if v.ty == WordType::Int => {
                Some(Bound::Off(x.clone(), v.n))
            }
            _ => None,
        },
        _ => None,
    }
}

/// Typechecks `e` against a given heap and function store (the machine
/// re-typechecks intermediate states against the current heap).
pub fn typecheck_in(
    gamma: &TypeEnv,
    theta: &PredEnv,
    m: ContextMode,
    e: &Expr,
    heap: &Heap,
    funs: &FunStore,
) -> Result<WordType, TypeError> {
    let mut ck = Ck { heap, funs, path: Vec::new(), trust_consts: false };
    check(&mut ck, gamma, theta, m, e)
}

/// Type query that assumes every literal has already passed constant
/// validity. The compiler uses this to re-derive types of validated input
/// without carrying the heap around.
pub fn typecheck_trusting(
    gamma: &TypeEnv,
    theta: &PredEnv,
    m: ContextMode,
    e: &Expr,
) -> Result<WordType, TypeError> {
    let heap = Heap::new();
    let funs = FunStore::default();
    let mut ck = Ck { heap: &heap, funs: &funs, path: Vec::new(), trust_consts: true };
    check(&mut ck, gamma, theta, m, e)
}

/// Typechecks `e` against a program's initial heap and function store.
pub fn typecheck(
    gamma: &TypeEnv,
    theta: &PredEnv,
    m: ContextMode,
    e: &Expr,
    program: &Program,
) -> Result<WordType, TypeError> {
    let heap = Heap::from_init(&program.heap_init);
    let funs = FunStore::from_program(program);
    typecheck_in(gamma, theta, m, e, &heap, &funs)
}

fn check(
    ck: &mut Ck,
    gamma: &TypeEnv,
    theta: &PredEnv,
    m: ContextMode,
    e: &Expr,
) -> Result<WordType, TypeError> {
    match e {
        Expr::Lit(v) => check_literal(ck, gamma, theta, m, v),
        Expr::Var(x) => match gamma.get(x) {
            Some(t) => Ok(t.clone()),
            None => ck.err("T-Var", format!("unbound variable {x}")),
        },
        Expr::Add(a, b) => {
            ck.path.push(Seg::Name("add.lhs"));
            let ta = check(ck, gamma, theta, m, a)?;
            ck.path.pop();
            ck.path.push(Seg::Name("add.rhs"));
            let tb = check(ck, gamma, theta, m, b)?;
            ck.path.pop();
            if ta != WordType::Int {
                return ck.err("T-Add", "left operand is not int");
            }
            if tb != WordType::Int {
                return ck.err("T-Add", "right operand is not int");
            }
            Ok(WordType::Int)
        }
        Expr::Cast(target, inner) => {
            check_type_formation(ck, gamma, m, target, "T-CastPtr")?;
            ck.path.push(Seg::Name("cast"));
            let t = check(ck, gamma, theta, m, inner)?;
            ck.path.pop();
            // Identity casts to int arise from call inlining, which wraps
            // function bodies in a cast to the instantiated return type.
            if *target == WordType::Int {
                if t != WordType::Int {
                    return ck.err("T-CastInt", "only int casts to int");
                }
                return Ok(WordType::Int);
            }
            if !subtype(theta, &t, target) {
                return ck.err(
                    "T-CastPtr",
                    format!(
                        "{} is not a subtype of {}",
                        crate::print::print_word(&t),
                        crate::print::print_word(target)
                    ),
                );
            }
            Ok(target.clone())
        }
        Expr::DynCast(target, inner) => {
            check_type_formation(ck, gamma, m, target, "T-DynCast")?;
            if !matches!(target, WordType::Ptr(..)) {
                return ck.err("T-DynCast", "cast target must be a pointer type");
            }
            ck.path.push(Seg::Name("dyncast"));
            check(ck, gamma, theta, m, inner)?;
            ck.path.pop();
            // Assumed at compile time; verified at run time.
            Ok(target.clone())
        }
        Expr::Ret(x, _, body) => {
            ck.path.push(Seg::Name("ret"));
            let t = check(ck, gamma, theta, m, body)?;
            ck.path.pop();
            if t.free_vars().contains(x) {
                match theta.get(x) {
                    Some(Predicate::Eq(b)) => {
                        let mut map = BTreeMap::new();
                        map.insert(x.clone(), b.clone());
                        Ok(subst_word(&t, &map))
                    }
                    _ => ck.err("T-RetInt", format!("{x} escapes its scope in the result type")),
                }
            } else {
                Ok(t)
            }
        }
        Expr::Strlen(x) => {
            let Some(t) = gamma.get(x) else {
                return ck.err("T-Strlen", format!("unbound variable {x}"));
            };
            match t {
                WordType::Ptr(omega, xi) => {
                    if !matches!(omega.as_ref(), ObjectType::Array { nt: true, .. }) {
                        return ck.err("T-Strlen", "strlen needs an NT-array pointer");
                    }
                    if !mode_le(*xi, m.as_ptr_mode()) {
                        return ck.err("T-Strlen", format!("pointer mode {xi} not usable at mode {m}"));
                    }
                    Ok(WordType::Int)
                }
                _ => ck.err("T-Strlen", "strlen needs an NT-array pointer"),
            }
        }
        Expr::Malloc(xi, omega) => {
            if !mode_le(*xi, m.as_ptr_mode()) {
                return ck.err("T-Mac", format!("allocation mode {xi} not allowed at mode {m}"));
            }
            if matches!(omega, ObjectType::Fun { .. }) {
                return ck.err("T-Mac", "cannot allocate a function type");
            }
            if !wf_bounds_object(gamma, omega) {
                return ck.err("T-Mac", "allocation type has unbound bound variables");
            }
            let ptr = WordType::ptr(omega.clone(), *xi);
            if !wf_formation(m, &ptr) {
                return ck.err("T-Mac", "allocation type is not well-formed");
            }
            Ok(ptr)
        }
        Expr::Deref(inner) => check_deref(ck, gamma, theta, m, inner),
        Expr::Assign(lhs, rhs) => check_assign(ck, gamma, theta, m, lhs, rhs),
        Expr::Let(x, e1, e2) => check_let(ck, gamma, theta, m, x, e1, e2),
        Expr::If(g, t, f) => {
            ck.path.push(Seg::Name("if.guard"));
            check(ck, gamma, theta, m, g)?;
            ck.path.pop();
            ck.path.push(Seg::Name("if.then"));
            let tt = check(ck, gamma, theta, m, t)?;
            ck.path.pop();
            ck.path.push(Seg::Name("if.else"));
            let tf = check(ck, gamma, theta, m, f)?;
            ck.path.pop();
            if subtype(theta, &tf, &tt) {
                Ok(tt)
            } else if subtype(theta, &tt, &tf) {
                Ok(tf)
            } else {
                ck.err("T-If", "branch types are unrelated")
            }
        }
        Expr::Call(callee, args) => check_call(ck, gamma, theta, m, callee, args),
        Expr::Unchecked(xs, body) => {
            check_block(ck, gamma, theta, xs, body, ContextMode::Unchecked, "T-Unchecked")
        }
        Expr::Checked(xs, body) => {
            check_block(ck, gamma, theta, xs, body, ContextMode::Checked, "T-Checked")
        }
    }
}

fn check_literal(
    ck: &mut Ck,
    gamma: &TypeEnv,
    theta: &PredEnv,
    m: ContextMode,
    v: &Value,
) -> Result<WordType, TypeError> {
    let rule = match m {
        ContextMode::Checked => "T-ConstC",
        ContextMode::Unchecked => "T-ConstU",
    };
    if !v.ty.is_closed() {
        return ck.err(rule, "literal type must be closed");
    }
    if !wf_formation(m, &v.ty) {
        return ck.err(rule, "literal type is not well-formed");
    }
    if !wf_bounds_word(gamma, &v.ty) {
        return ck.err(rule, "literal type has unbound bound variables");
    }
    match m {
        ContextMode::Unchecked => {
            if is_checked(&v.ty) {
                return ck.err("T-ConstU", "checked pointer literal in unchecked mode");
            }
        }
        ContextMode::Checked => {
            if !ck.trust_consts
                && !const_valid(theta, ck.heap, ck.funs, &Scope::new(), m, v.n, &v.ty)
            {
                return ck.err(
                    "T-ConstC",
                    format!("literal {} : {} is not valid", v.n, crate::print::print_word(&v.ty)),
                );
            }
        }
    }
    Ok(v.ty.clone())
}

fn check_type_formation(
    ck: &mut Ck,
    gamma: &TypeEnv,
    m: ContextMode,
    tau: &WordType,
    rule: &str,
) -> Result<(), TypeError> {
    if !wf_formation(m, tau) {
        return ck.err(rule, "type is not well-formed");
    }
    if !wf_bounds_word(gamma, tau) {
        return ck.err(rule, "type has unbound bound variables");
    }
    Ok(())
}

fn check_deref(
    ck: &mut Ck,
    gamma: &TypeEnv,
    theta: &PredEnv,
    m: ContextMode,
    inner: &Expr,
) -> Result<WordType, TypeError> {
    // Pointer arithmetic is only allowed directly under a dereference or an
    // assignment target (T-Ind and T-IndAssign).
    if let Expr::Add(e1, e2) = inner {
        ck.path.push(Seg::Name("ind.ptr"));
        let t1 = check(ck, gamma, theta, m, e1)?;
        ck.path.pop();
        ck.path.push(Seg::Name("ind.off"));
        let t2 = check(ck, gamma, theta, m, e2)?;
        ck.path.pop();
        let WordType::Ptr(omega, xi) = &t1 else {
            return ck.err("T-Ind", "pointer arithmetic on a non-pointer");
        };
        let ObjectType::Array { elem, .. } = omega.as_ref() else {
            return ck.err("T-Ind", "pointer arithmetic needs an array pointer");
        };
        if t2 != WordType::Int {
            return ck.err("T-Ind", "index is not int");
        }
        if !mode_le(*xi, m.as_ptr_mode()) {
            return ck.err("T-Ind", format!("pointer mode {xi} not usable at mode {m}"));
        }
        return Ok(elem.clone());
    }
    ck.path.push(Seg::Name("deref"));
    let t = check(ck, gamma, theta, m, inner)?;
    ck.path.pop();
    let WordType::Ptr(omega, xi) = &t else {
        return ck.err("T-Def", "dereference of a non-pointer");
    };
    if !mode_le(*xi, m.as_ptr_mode()) {
        return ck.err("T-Def", format!("pointer mode {xi} not usable at mode {m}"));
    }
    match omega.as_ref() {
        ObjectType::Word(tau) => Ok(tau.clone()),
        ObjectType::Array { elem, .. } => Ok(elem.clone()),
        ObjectType::Fun { .. } => ck.err("T-Def", "dereference of a function pointer"),
    }
}

fn check_assign(
    ck: &mut Ck,
    gamma: &TypeEnv,
    theta: &PredEnv,
    m: ContextMode,
    lhs: &Expr,
    rhs: &Expr,
) -> Result<WordType, TypeError> {
    if let Expr::Add(e1, e2) = lhs {
        ck.path.push(Seg::Name("indassign.ptr"));
        let t1 = check(ck, gamma, theta, m, e1)?;
        ck.path.pop();
        ck.path.push(Seg::Name("indassign.off"));
        let t2 = check(ck, gamma, theta, m, e2)?;
        ck.path.pop();
        ck.path.push(Seg::Name("indassign.rhs"));
        let t3 = check(ck, gamma, theta, m, rhs)?;
        ck.path.pop();
        let WordType::Ptr(omega, xi) = &t1 else {
            return ck.err("T-IndAssign", "assignment through a non-pointer");
        };
        let ObjectType::Array { elem, .. } = omega.as_ref() else {
            return ck.err("T-IndAssign", "indexed assignment needs an array pointer");
        };
        if t2 != WordType::Int {
            return ck.err("T-IndAssign", "index is not int");
        }
        if !subtype(theta, &t3, elem) {
            return ck.err("T-IndAssign", "assigned value is not a subtype of the element type");
        }
        if !mode_le(*xi, m.as_ptr_mode()) {
            return ck.err("T-IndAssign", format!("pointer mode {xi} not usable at mode {m}"));
        }
        return Ok(elem.clone());
    }
    ck.path.push(Seg::Name("assign.lhs"));
    let tl = check(ck, gamma, theta, m, lhs)?;
    ck.path.pop();
    ck.path.push(Seg::Name("assign.rhs"));
    let tr = check(ck, gamma, theta, m, rhs)?;
    ck.path.pop();
    let WordType::Ptr(omega, xi) = &tl else {
        return ck.err("T-Assign", "assignment through a non-pointer");
    };
    let (rule, pointee) = match omega.as_ref() {
        ObjectType::Word(tau) => ("T-Assign", tau.clone()),
        ObjectType::Array { elem, .. } => ("T-AssignArr", elem.clone()),
        ObjectType::Fun { .. } => {
            return ck.err("T-Assign", "assignment through a function pointer")
        }
    };
    if !subtype(theta, &tr, &pointee) {
        return ck.err(rule, "assigned value is not a subtype of the pointee type");
    }
    if !mode_le(*xi, m.as_ptr_mode()) {
        return ck.err(rule, format!("pointer mode {xi} not usable at mode {m}"));
    }
    Ok(pointee)
}

fn check_let(
    ck: &mut Ck,
    gamma: &TypeEnv,
    theta: &PredEnv,
    m: ContextMode,
    x: &Var,
    e1: &Expr,
    e2: &Expr,
) -> Result<WordType, TypeError> {
    ck.path.push(Seg::Name("let.bound"));
    let t1 = check(ck, gamma, theta, m, e1)?;
    ck.path.pop();
    let mut gamma2 = gamma.clone();
    gamma2.insert(x.clone(), t1.clone());
    if t1 == WordType::Int {
        let bound = as_bound_expr(e1);
        let theta2 = match &bound {
            Some(b) => theta.with(x.clone(), Predicate::Eq(b.clone())),
            None => {
                // No recordable fact; drop any stale entry for x.
                let mut t = theta.clone();
                t.0.remove(x);
                t
            }
        };
        ck.path.push(Seg::Name("let.body"));
        let t2 = check(ck, &gamma2, &theta2, m, e2)?;
        ck.path.pop();
        if t2.free_vars().contains(x) {
            let Some(b) = bound else {
                return ck.err(
                    "T-LetInt",
                    "dependent let needs a bound-shaped binding expression",
                );
            };
            let mut map = BTreeMap::new();
            map.insert(x.clone(), b);
            Ok(subst_word(&t2, &map))
        } else {
            Ok(t2)
        }
    } else {
        let mut theta2 = theta.clone();
        theta2.0.remove(x);
        ck.path.push(Seg::Name("let.body"));
        let t2 = check(ck, &gamma2, &theta2, m, e2)?;
        ck.path.pop();
        if t2.free_vars().contains(x) {
            return ck.err("T-Let", format!("{x} escapes its scope in the result type"));
        }
        Ok(t2)
    }
}

fn check_call(
    ck: &mut Ck,
    gamma: &TypeEnv,
    theta: &PredEnv,
    m: ContextMode,
    callee: &Expr,
    args: &[Expr],
) -> Result<WordType, TypeError> {
    ck.path.push(Seg::Name("call.callee"));
    let tf = check(ck, gamma, theta, m, callee)?;
    ck.path.pop();
    let WordType::Ptr(omega, xi) = &tf else {
        return ck.err("T-Fun", "call of a non-function pointer");
    };
    let ObjectType::Fun { binders, params, ret } = omega.as_ref() else {
        return ck.err("T-Fun", "call of a non-function pointer");
    };
    if !mode_le(*xi, m.as_ptr_mode()) {
        return ck.err("T-Fun", format!("pointer mode {xi} not usable at mode {m}"));
    }
    if args.len() != params.len() {
        return ck.err(
            "T-Fun",
            format!("expected {} arguments, got {}", params.len(), args.len()),
        );
    }
    let mut arg_tys = Vec::with_capacity(args.len());
    for (i, a) in args.iter().enumerate() {
        ck.path.push(Seg::Idx("call.arg", i));
        arg_tys.push(check(ck, gamma, theta, m, a)?);
        ck.path.pop();
    }
    // Integer-typed arguments instantiate the binders positionally and must
    // be bound-shaped.
    let mut bounds = Vec::new();
    for (i, p) in params.iter().enumerate() {
        if *p == WordType::Int {
            match as_bound_expr(&args[i]) {
                Some(b) => bounds.push(b),
                None => {
                    return ck.err(
                        "T-Fun",
                        format!("argument {i} must be shaped like a bound expression"),
                    )
                }
            }
        }
    }
    if bounds.len() != binders.len() {
        return ck.err(
            "T-Fun",
            format!(
                "function type has {} binders but {} integer parameters",
                binders.len(),
                bounds.len()
            ),
        );
    }
    let map: BTreeMap<Var, Bound> = binders.iter().cloned().zip(bounds).collect();
    for (i, (got, want)) in arg_tys.iter().zip(params).enumerate() {
        let want = subst_word(want, &map);
        if !subtype(theta, got, &want) {
            return ck.err(
                "T-Fun",
                format!(
                    "argument {i}: {} is not a subtype of {}",
                    crate::print::print_word(got),
                    crate::print::print_word(&want)
                ),
            );
        }
    }
    Ok(subst_word(ret, &map))
}

fn check_block(
    ck: &mut Ck,
    gamma: &TypeEnv,
    theta: &PredEnv,
    xs: &[Var],
    body: &Expr,
    inner_mode: ContextMode,
    rule: &'static str,
) -> Result<WordType, TypeError> {
    for x in xs {
        match gamma.get(x) {
            None => return ck.err(rule, format!("interface variable {x} is unbound")),
            Some(t) => {
                if is_checked(t) {
                    return ck.err(rule, format!("interface variable {x} has a checked type"));
                }
            }
        }
    }
    let fv = free_vars(body);
    for x in &fv {
        if !xs.contains(x) {
            return ck.err(rule, format!("free variable {x} is not declared by the block"));
        }
    }
    ck.path.push(Seg::Name("block"));
    let t = check(ck, gamma, theta, inner_mode, body)?;
    ck.path.pop();
    if is_checked(&t) {
        return ck.err(rule, "block result has a checked type");
    }
    Ok(t)
}

/// Validates a whole program: store region/flag discipline, initial heap
/// well-formedness, function bodies at their modes, and the main expression
/// in checked mode. Returns main's type.
pub fn validate_program(p: &Program) -> Result<WordType, TypeError> {
    let heap = Heap::from_init(&p.heap_init);
    let funs = FunStore::from_program(p);
    let fail = |rule: &str, msg: String| TypeError { rule: rule.to_string(), path: "program".into(), msg };
    for ((region, addr), v) in &p.heap_init {
        if *addr <= 0 {
            return Err(fail("H-Wf", format!("heap address {addr} in region {region}")));
        }
        if !v.ty.is_closed() {
            return Err(fail("H-Wf", format!("heap cell {region}:{addr} has an open type")));
        }
    }
    for ((region, addr), def) in &p.funs {
        if *addr <= 0 {
            return Err(fail("S-Wf", format!("function address {addr}")));
        }
        let ok_flag = match region {
            Region::C => def.mode == PtrMode::Checked,
            Region::U => def.mode != PtrMode::Checked,
        };
        if !ok_flag {
            return Err(fail(
                "S-Wf",
                format!("function {region}:{addr} has flag {} in region {region}", def.mode),
            ));
        }
        let mut gamma = TypeEnv::new();
        for (x, t) in &def.params {
            // Parameters are formed at the mode the body runs at; tainted
            // bodies inline at either mode, checked is the stricter.
            let formation_mode = match def.mode {
                PtrMode::Unchecked => ContextMode::Unchecked,
                _ => ContextMode::Checked,
            };
            if !wf_formation(formation_mode, t) {
                return Err(fail(
                    "S-Wf",
                    format!("function {region}:{addr}: parameter {x} type not well-formed"),
                ));
            }
            gamma.insert(x.clone(), t.clone());
        }
        if !wf_bounds_word(&gamma, &def.ret)
            || def.params.iter().any(|(_, t)| !wf_bounds_word(&gamma, t))
        {
            return Err(fail("S-Wf", format!("function {region}:{addr}: unbound bound variable")));
        }
        // Checked bodies check at mode c, unchecked at mode u; tainted
        // bodies inline at their caller's mode, so they must check at both.
        let modes: &[ContextMode] = match def.mode {
            PtrMode::Checked => &[ContextMode::Checked],
            PtrMode::Unchecked => &[ContextMode::Unchecked],
            PtrMode::Tainted => &[ContextMode::Checked, ContextMode::Unchecked],
        };
        for mode in modes {
            let theta = PredEnv::new();
            let got = typecheck_in(&gamma, &theta, *mode, &def.body, &heap, &funs)
                .map_err(|e| TypeError {
                    rule: e.rule,
                    path: format!("fun {region}:{addr}.{}", e.path),
                    msg: e.msg,
                })?;
            if !subtype(&theta, &got, &def.ret) {
                return Err(fail(
                    "T-FunDef",
                    format!(
                        "function {region}:{addr} body has type {}, declared {}",
                        crate::print::print_word(&got),
                        crate::print::print_word(&def.ret)
                    ),
                ));
            }
        }
    }
    typecheck_in(
        &TypeEnv::new(),
        &PredEnv::new(),
        ContextMode::Checked,
        &p.main,
        &heap,
        &funs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, WordType)]) -> TypeEnv {
        pairs.iter().map(|(x, t)| (x.to_string(), t.clone())).collect()
    }

    fn check_expr(gamma: &TypeEnv, m: ContextMode, e: &Expr) -> Result<WordType, TypeError> {
        let p = Program::default();
        typecheck(gamma, &PredEnv::new(), m, e, &p)
    }

    #[test]
    fn deref_checked_in_checked_mode() {
        let gamma = env(&[("p", WordType::ptr_word(WordType::Int, PtrMode::Checked))]);
        let e = Expr::deref(Expr::var("p"));
        assert_eq!(check_expr(&gamma, ContextMode::Checked, &e).unwrap(), WordType::Int);
    }

    #[test]
    fn deref_checked_in_unchecked_mode_fails() {
        let gamma = env(&[("p", WordType::ptr_word(WordType::Int, PtrMode::Checked))]);
        let e = Expr::deref(Expr::var("p"));
        let err = check_expr(&gamma, ContextMode::Unchecked, &e).unwrap_err();
        assert_eq!(err.rule, "T-Def");
    }

    #[test]
    fn checked_block_rejects_checked_interface_var() {
        let gamma = env(&[("x", WordType::ptr_word(WordType::Int, PtrMode::Checked))]);
        let e = Expr::Checked(vec!["x".into()], Box::new(Expr::var("x")));
        let err = check_expr(&gamma, ContextMode::Checked, &e).unwrap_err();
        assert_eq!(err.rule, "T-Checked");
    }

    #[test]
    fn cast_tainted_to_unchecked_ok() {
        // Casting tainted to unchecked is fine even in checked code.
        let e = Expr::cast(
            WordType::ptr_word(WordType::Int, PtrMode::Unchecked),
            Expr::lit(0, WordType::ptr_word(WordType::Int, PtrMode::Tainted)),
        );
        assert_eq!(
            check_expr(&TypeEnv::new(), ContextMode::Checked, &e).unwrap(),
            WordType::ptr_word(WordType::Int, PtrMode::Unchecked)
        );
    }

    #[test]
    fn cast_tainted_to_checked_fails() {
        let e = Expr::cast(
            WordType::ptr_word(WordType::Int, PtrMode::Checked),
            Expr::lit(0, WordType::ptr_word(WordType::Int, PtrMode::Tainted)),
        );
        let err = check_expr(&TypeEnv::new(), ContextMode::Checked, &e).unwrap_err();
        assert_eq!(err.rule, "T-CastPtr");
    }

    #[test]
    fn dependent_let_substitutes_result_type() {
        // let x = 5 in (0 : ptr ntarray(0, x+0) c) : the result type
        // substitutes 5 for x.
        let arr = WordType::ptr(
            ObjectType::Array {
                nt: true,
                bounds: BoundPair { lo: Bound::Lit(0), hi: Bound::Off("x".into(), 0) },
                elem: WordType::Int,
            },
            PtrMode::Checked,
        );
        let e = Expr::let_("x", Expr::int(5), Expr::lit(0, arr));
        // The literal's type mentions x, which violates closedness; build it
        // through malloc instead.
        let e2 = Expr::let_(
            "x",
            Expr::int(5),
            Expr::Malloc(
                PtrMode::Checked,
                ObjectType::Array {
                    nt: true,
                    bounds: BoundPair { lo: Bound::Lit(0), hi: Bound::Off("x".into(), 0) },
                    elem: WordType::Int,
                },
            ),
        );
        assert!(check_expr(&TypeEnv::new(), ContextMode::Checked, &e).is_err());
        let got = check_expr(&TypeEnv::new(), ContextMode::Checked, &e2).unwrap();
        assert_eq!(got, WordType::ptr_array(true, 0, 5, WordType::Int, PtrMode::Checked));
    }

    #[test]
    fn is_checked_examples() {
        assert!(!is_checked(&WordType::Int));
        assert!(is_checked(&WordType::ptr_word(WordType::Int, PtrMode::Checked)));
        // The outer mode decides.
        assert!(!is_checked(&WordType::ptr_word(
            WordType::ptr_word(WordType::Int, PtrMode::Checked),
            PtrMode::Tainted
        )));
    }

    #[test]
    fn const_valid_examples() {
        let heap = Heap::new();
        let funs = FunStore::default();
        let theta = PredEnv::new();
        let sigma = Scope::new();
        // Null pointer and plain int are always valid.
        assert!(const_valid(
            &theta, &heap, &funs, &sigma, ContextMode::Checked,
            0, &WordType::ptr_word(WordType::Int, PtrMode::Checked)
        ));
        assert!(const_valid(&theta, &heap, &funs, &sigma, ContextMode::Checked, 7, &WordType::Int));
        // Data pointer: valid only when the cell exists.
        let t = WordType::ptr_word(WordType::Int, PtrMode::Checked);
        assert!(!const_valid(&theta, &heap, &funs, &sigma, ContextMode::Checked, 1, &t));
        let mut heap2 = Heap::new();
        heap2.c.insert(1, Value::int(3));
        assert!(const_valid(&theta, &heap2, &funs, &sigma, ContextMode::Checked, 1, &t));
    }

    #[test]
    fn const_valid_terminates_on_cycles() {
        // Two cells pointing at each other.
        let pc = WordType::ptr_word(WordType::ptr_word(WordType::Int, PtrMode::Checked), PtrMode::Checked);
        let inner = WordType::ptr_word(WordType::Int, PtrMode::Checked);
        let mut heap = Heap::new();
        heap.c.insert(1, Value::new(2, inner.clone()));
        heap.c.insert(2, Value::new(1, pc.clone()));
        let ok = const_valid(
            &PredEnv::new(),
            &heap,
            &FunStore::default(),
            &Scope::new(),
            ContextMode::Checked,
            1,
            &pc,
        );
        // Cell 2 holds a pointer back to 1; the scope assumption closes the
        // cycle. Cell 1 holds 2 : ptr int which needs cell 2 defined.
        assert!(ok);
    }

    #[test]
    fn size_of_examples() {
        assert_eq!(size_of(&ObjectType::Word(WordType::Int)).unwrap(), 1);
        let arr = ObjectType::Array { nt: false, bounds: BoundPair::lits(0, 3), elem: WordType::Int };
        assert_eq!(size_of(&arr).unwrap(), 3);
        let nt = ObjectType::Array { nt: true, bounds: BoundPair::lits(0, 3), elem: WordType::Int };
        assert_eq!(size_of(&nt).unwrap(), 4);
    }

    #[test]
    fn weakening_fresh_var_does_not_change_verdict() {
        let gamma = env(&[("p", WordType::ptr_word(WordType::Int, PtrMode::Checked))]);
        let e = Expr::deref(Expr::var("p"));
        let t1 = check_expr(&gamma, ContextMode::Checked, &e).unwrap();
        let mut gamma2 = gamma.clone();
        gamma2.insert("zzz".into(), WordType::Int);
        let t2 = check_expr(&gamma2, ContextMode::Checked, &e).unwrap();
        assert_eq!(t1, t2);
    }
}
