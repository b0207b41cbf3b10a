//! Abstract syntax of the source language: pointer modes, dependent bounds,
//! types, expressions and whole programs.
//!
//! Values are integer literals carrying a word type; `Lit(0, Ptr(..))` is the
//! null pointer. The `Ret` form never appears in source programs — the
//! machine introduces it when a `let` binding is entered.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub type Var = String;

/// Pointer mode: checked, tainted or unchecked.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum PtrMode {
    Checked,
    Tainted,
    Unchecked,
}

impl PtrMode {
    pub const ALL: [PtrMode; 3] = [PtrMode::Checked, PtrMode::Tainted, PtrMode::Unchecked];

    pub fn letter(self) -> char {
        match self {
            PtrMode::Checked => 'c',
            PtrMode::Tainted => 't',
            PtrMode::Unchecked => 'u',
        }
    }
}

impl fmt::Display for PtrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Context mode: the region code runs in. A restriction of [`PtrMode`] to
/// checked and unchecked.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum ContextMode {
    Checked,
    Unchecked,
}

impl ContextMode {
    pub fn as_ptr_mode(self) -> PtrMode {
        match self {
            ContextMode::Checked => PtrMode::Checked,
            ContextMode::Unchecked => PtrMode::Unchecked,
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_ptr_mode())
    }
}

/// One of the two heap / function-store regions.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Region {
    C,
    U,
}

impl Region {
    pub fn letter(self) -> char {
        match self {
            Region::C => 'c',
            Region::U => 'u',
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// The heap region a pointer of the given mode refers to: checked pointers
/// live in region C, tainted and unchecked pointers in region U.
pub fn heap_region(mode: PtrMode) -> Region {
    match mode {
        PtrMode::Checked => Region::C,
        PtrMode::Tainted | PtrMode::Unchecked => Region::U,
    }
}

/// A bound: a literal integer or `x + n`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Bound {
    Lit(i64),
    Off(Var, i64),
}

impl Bound {
    /// Offset addition with normalization: `(x+n')+n = x+(n'+n)` and
    /// `n'+n = add(n',n)`.
    pub fn add_offset(&self, n: i64) -> Bound {
        match self {
            Bound::Lit(m) => Bound::Lit(m + n),
            Bound::Off(x, m) => Bound::Off(x.clone(), m + n),
        }
    }

    pub fn free_var(&self) -> Option<&Var> {
        match self {
            Bound::Lit(_) => None,
            Bound::Off(x, _) => Some(x),
        }
    }

    pub fn as_lit(&self) -> Option<i64> {
        match self {
            Bound::Lit(n) => Some(*n),
            Bound::Off(..) => None,
        }
    }

    /// Substitutes the bound's variable if mapped, normalizing offsets.
    pub fn subst(&self, map: &BTreeMap<Var, Bound>) -> Bound {
        match self {
            Bound::Lit(_) => self.clone(),
            Bound::Off(x, n) => match map.get(x) {
                Some(b) => b.add_offset(*n),
                None => self.clone(),
            },
        }
    }

    /// Evaluates the bound under a valuation of its variable.
    pub fn eval(&self, lookup: &impl Fn(&Var) -> Option<i64>) -> Option<i64> {
        match self {
            Bound::Lit(n) => Some(*n),
            Bound::Off(x, n) => lookup(x).map(|v| v + n),
        }
    }
}

/// A lower/upper bound pair `(b_l, b_h)`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct BoundPair {
    pub lo: Bound,
    pub hi: Bound,
}

impl BoundPair {
    pub fn lits(lo: i64, hi: i64) -> BoundPair {
        BoundPair { lo: Bound::Lit(lo), hi: Bound::Lit(hi) }
    }
}

/// Word types: integers and pointers.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum WordType {
    Int,
    Ptr(Box<ObjectType>, PtrMode),
}

impl WordType {
    pub fn ptr(omega: ObjectType, mode: PtrMode) -> WordType {
        WordType::Ptr(Box::new(omega), mode)
    }

    pub fn ptr_word(tau: WordType, mode: PtrMode) -> WordType {
        WordType::ptr(ObjectType::Word(tau), mode)
    }

    pub fn ptr_array(nt: bool, lo: i64, hi: i64, elem: WordType, mode: PtrMode) -> WordType {
        WordType::ptr(
            ObjectType::Array { nt, bounds: BoundPair::lits(lo, hi), elem },
            mode,
        )
    }

    pub fn mode(&self) -> Option<PtrMode> {
        match self {
            WordType::Int => None,
            WordType::Ptr(_, m) => Some(*m),
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Var> {
        let mut acc = BTreeSet::new();
        collect_word_fv(self, &mut acc);
        acc
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }
}

/// Object types: word types, (NT-)arrays of word types, or dependent
/// function types whose integer binders scope over parameter and result
/// bounds.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum ObjectType {
    Word(WordType),
    Array { nt: bool, bounds: BoundPair, elem: WordType },
    Fun { binders: Vec<Var>, params: Vec<WordType>, ret: WordType },
}

impl ObjectType {
    pub fn free_vars(&self) -> BTreeSet<Var> {
        let mut acc = BTreeSet::new();
        collect_object_fv(self, &mut acc);
        acc
    }
}

fn collect_word_fv(tau: &WordType, acc: &mut BTreeSet<Var>) {
    match tau {
        WordType::Int => {}
        WordType::Ptr(omega, _) => collect_object_fv(omega, acc),
    }
}

fn collect_object_fv(omega: &ObjectType, acc: &mut BTreeSet<Var>) {
    match omega {
        ObjectType::Word(tau) => collect_word_fv(tau, acc),
        ObjectType::Array { bounds, elem, .. } => {
            if let Some(x) = bounds.lo.free_var() {
                acc.insert(x.clone());
            }
            if let Some(x) = bounds.hi.free_var() {
                acc.insert(x.clone());
            }
            collect_word_fv(elem, acc);
        }
        ObjectType::Fun { binders, params, ret } => {
            let mut inner = BTreeSet::new();
            for p in params {
                collect_word_fv(p, &mut inner);
            }
            collect_word_fv(ret, &mut inner);
            for x in binders {
                inner.remove(x);
            }
            acc.extend(inner);
        }
    }
}

/// A typed integer literal `n : tau`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Value {
    pub n: i64,
    pub ty: WordType,
}

impl Value {
    pub fn new(n: i64, ty: WordType) -> Value {
        Value { n, ty }
    }

    pub fn int(n: i64) -> Value {
        Value { n, ty: WordType::Int }
    }

    pub fn is_null_ptr(&self) -> bool {
        self.n == 0 && matches!(self.ty, WordType::Ptr(..))
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Expr {
    Lit(Value),
    Var(Var),
    Add(Box<Expr>, Box<Expr>),
    Cast(WordType, Box<Expr>),
    DynCast(WordType, Box<Expr>),
    /// Machine-introduced scope frame: restores `var` to the saved binding
    /// (or unbinds it) once the body is a value.
    Ret(Var, Option<Value>, Box<Expr>),
    Strlen(Var),
    Malloc(PtrMode, ObjectType),
    Deref(Box<Expr>),
    Assign(Box<Expr>, Box<Expr>),
    Let(Var, Box<Expr>, Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(Box<Expr>, Vec<Expr>),
    Unchecked(Vec<Var>, Box<Expr>),
    Checked(Vec<Var>, Box<Expr>),
}

impl Expr {
    pub fn lit(n: i64, ty: WordType) -> Expr {
        Expr::Lit(Value::new(n, ty))
    }

    pub fn int(n: i64) -> Expr {
        Expr::lit(n, WordType::Int)
    }

    pub fn var(x: impl Into<String>) -> Expr {
        Expr::Var(x.into())
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn deref(e: Expr) -> Expr {
        Expr::Deref(Box::new(e))
    }

    pub fn assign(lhs: Expr, rhs: Expr) -> Expr {
        Expr::Assign(Box::new(lhs), Box::new(rhs))
    }

    pub fn let_(x: impl Into<String>, e1: Expr, e2: Expr) -> Expr {
        Expr::Let(x.into(), Box::new(e1), Box::new(e2))
    }

    pub fn if_(g: Expr, t: Expr, f: Expr) -> Expr {
        Expr::If(Box::new(g), Box::new(t), Box::new(f))
    }

    pub fn cast(ty: WordType, e: Expr) -> Expr {
        Expr::Cast(ty, Box::new(e))
    }

    pub fn dyncast(ty: WordType, e: Expr) -> Expr {
        Expr::DynCast(ty, Box::new(e))
    }

    pub fn call(f: Expr, args: Vec<Expr>) -> Expr {
        Expr::Call(Box::new(f), args)
    }

    pub fn as_value(&self) -> Option<&Value> {
        match self {
            Expr::Lit(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_value(&self) -> bool {
        self.as_value().is_some()
    }

    /// Does the tree contain a `Ret` node anywhere?
    pub fn contains_ret(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if matches!(e, Expr::Ret(..)) {
                found = true;
            }
        });
        found
    }

    /// Pre-order traversal over all subexpressions.
    pub fn walk(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Lit(_) | Expr::Var(_) | Expr::Strlen(_) | Expr::Malloc(..) => {}
            Expr::Add(a, b) | Expr::Assign(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::Cast(_, e) | Expr::DynCast(_, e) => e.walk(f),
            Expr::Ret(_, _, e) => e.walk(f),
            Expr::Deref(e) => e.walk(f),
            Expr::Let(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::If(g, t, e) => {
                g.walk(f);
                t.walk(f);
                e.walk(f);
            }
            Expr::Call(callee, args) => {
                callee.walk(f);
                for a in args {
                    a.walk(f);
                }
            }
            Expr::Unchecked(_, e) | Expr::Checked(_, e) => e.walk(f),
        }
    }
}

/// Free variables of an expression. `Let` and `Ret` bind; the variable lists
/// of `Checked`/`Unchecked` blocks are interface declarations and do not
/// bind.
pub fn free_vars(e: &Expr) -> BTreeSet<Var> {
    let mut acc = BTreeSet::new();
    fv(e, &mut Vec::new(), &mut acc);
    acc
}

fn fv(e: &Expr, bound: &mut Vec<Var>, acc: &mut BTreeSet<Var>) {
    let mut hit = |x: &Var, bound: &[Var]| {
        if !bound.contains(x) {
            acc_insert(acc, x);
        }
    };
    match e {
        Expr::Lit(_) | Expr::Malloc(..) => {}
        Expr::Var(x) | Expr::Strlen(x) => hit(x, bound),
        Expr::Add(a, b) | Expr::Assign(a, b) => {
            fv(a, bound, acc);
            fv(b, bound, acc);
        }
        Expr::Cast(_, e) | Expr::DynCast(_, e) => fv(e, bound, acc),
        Expr::Deref(e) => fv(e, bound, acc),
        Expr::Let(x, a, b) => {
            fv(a, bound, acc);
            bound.push(x.clone());
            fv(b, bound, acc);
            bound.pop();
        }
        Expr::Ret(x, _, e) => {
            bound.push(x.clone());
            fv(e, bound, acc);
            bound.pop();
        }
        Expr::If(g, t, f) => {
            fv(g, bound, acc);
            fv(t, bound, acc);
            fv(f, bound, acc);
        }
        Expr::Call(callee, args) => {
            fv(callee, bound, acc);
            for a in args {
                fv(a, bound, acc);
            }
        }
        Expr::Unchecked(_, e) | Expr::Checked(_, e) => fv(e, bound, acc),
    }
}

fn acc_insert(acc: &mut BTreeSet<Var>, x: &Var) {
    if !acc.contains(x) {
        acc.insert(x.clone());
    }
}

/// Substitutes bounds for variables inside a word type against `map`,
/// normalizing offsets. Capture-avoiding at function binders: binders that
/// collide with the substitution (either its domain or the variables of its
/// range) are renamed to fresh names first.
pub fn subst_word(tau: &WordType, map: &BTreeMap<Var, Bound>) -> WordType {
    if map.is_empty() {
        return tau.clone();
    }
    match tau {
        WordType::Int => WordType::Int,
        WordType::Ptr(omega, m) => WordType::ptr(subst_object(omega, map), *m),
    }
}

pub fn subst_object(omega: &ObjectType, map: &BTreeMap<Var, Bound>) -> ObjectType {
    match omega {
        ObjectType::Word(tau) => ObjectType::Word(subst_word(tau, map)),
        ObjectType::Array { nt, bounds, elem } => ObjectType::Array {
            nt: *nt,
            bounds: BoundPair { lo: bounds.lo.subst(map), hi: bounds.hi.subst(map) },
            elem: subst_word(elem, map),
        },
        ObjectType::Fun { binders, params, ret } => {
            // Drop mappings shadowed by the binders.
            let mut inner: BTreeMap<Var, Bound> = map
                .iter()
                .filter(|(k, _)| !binders.contains(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            if inner.is_empty() {
                return omega.clone();
            }
            // Rename binders that would capture variables of the range.
            let range_vars: BTreeSet<Var> = inner
                .values()
                .filter_map(|b| b.free_var().cloned())
                .collect();
            let mut binders = binders.clone();
            let mut params = params.clone();
            let mut ret = ret.clone();
            for i in 0..binders.len() {
                if range_vars.contains(&binders[i]) {
                    let mut avoid: BTreeSet<Var> = range_vars.clone();
                    avoid.extend(binders.iter().cloned());
                    avoid.extend(inner.keys().cloned());
                    for p in &params {
                        avoid.extend(p.free_vars());
                    }
                    avoid.extend(ret.free_vars());
                    let fresh = fresh_name(&binders[i], &avoid);
                    let mut ren = BTreeMap::new();
                    ren.insert(binders[i].clone(), Bound::Off(fresh.clone(), 0));
                    params = params.iter().map(|p| subst_word(p, &ren)).collect();
                    ret = subst_word(&ret, &ren);
                    binders[i] = fresh;
                }
            }
            // Binder renames may have invalidated shadowing; refilter.
            inner.retain(|k, _| !binders.contains(k));
            ObjectType::Fun {
                binders,
                params: params.iter().map(|p| subst_word(p, &inner)).collect(),
                ret: subst_word(&ret, &inner),
            }
        }
    }
}

/// Picks a name derived from `base` that avoids the given set.
pub fn fresh_name(base: &str, avoid: &BTreeSet<Var>) -> Var {
    let stem = base.split('%').next().unwrap_or(base);
    let mut k = 0u64;
    loop {
        let cand = format!("{stem}%{k}");
        if !avoid.contains(&cand) {
            return cand;
        }
        k += 1;
    }
}

/// A stored function: return type, typed parameters, mode flag and body.
/// Integer-typed parameters act as the dependent binders available to bounds
/// in the other parameter types and the return type.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FunDef {
    pub ret: WordType,
    pub params: Vec<(Var, WordType)>,
    pub mode: PtrMode,
    pub body: Expr,
}

impl FunDef {
    /// The binder list of the corresponding function type: the names of the
    /// integer-typed parameters.
    pub fn binders(&self) -> Vec<Var> {
        self.params
            .iter()
            .filter(|(_, t)| matches!(t, WordType::Int))
            .map(|(x, _)| x.clone())
            .collect()
    }

    /// The function type `fun(binders, params -> ret)` assembled from the
    /// signature.
    pub fn fun_type(&self) -> ObjectType {
        ObjectType::Fun {
            binders: self.binders(),
            params: self.params.iter().map(|(_, t)| t.clone()).collect(),
            ret: self.ret.clone(),
        }
    }
}

/// A whole program: the two-region function store, the two-region initial
/// heap and the main expression.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Program {
    pub funs: BTreeMap<(Region, i64), FunDef>,
    pub heap_init: BTreeMap<(Region, i64), Value>,
    pub main: Expr,
}

impl Default for Expr {
    fn default() -> Self {
        Expr::int(0)
    }
}
