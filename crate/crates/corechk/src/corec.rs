//! The untyped target language: region-tagged memory operations, explicit
//! check primitives, erasure of source states, a printer/parser for
//! `.corec` files, and a deterministic small-step interpreter.
//!
//! Values carry no metadata; only the explicit check primitives can fail.
//! Reading undefined heap cells or calling undefined store addresses is
//! stuck.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::machine::Config;
use crate::parse::{ParseError, Parser};
use crate::print::print_word;
use crate::store::{Heap, Stack};
use crate::syntax::*;

/// Shape of an allocation after types are dropped: one word, or an array
/// with bound expressions evaluated against the stack at the allocation
/// site.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum CShape {
    Word,
    Array { nt: bool, lo: Box<CExpr>, hi: Box<CExpr> },
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum CExpr {
    Lit(i64),
    Var(Var),
    Add(Box<CExpr>, Box<CExpr>),
    Sub(Box<CExpr>, Box<CExpr>),
    /// Scoped binding; evaluation introduces a `Ret` frame.
    Let(Var, Box<CExpr>, Box<CExpr>),
    /// Unscoped binding used for shadow variables: the binding persists with
    /// no restore frame.
    Bind(Var, Box<CExpr>, Box<CExpr>),
    Ret(Var, Option<i64>, Box<CExpr>),
    If(Box<CExpr>, Box<CExpr>, Box<CExpr>),
    /// Evaluates the first expression for its checks, discards it, then
    /// continues with the second.
    Seq(Box<CExpr>, Box<CExpr>),
    Deref(Region, Box<CExpr>),
    Assign(Region, Box<CExpr>, Box<CExpr>),
    Malloc(Region, CShape),
    Call(Region, Box<CExpr>, Vec<CExpr>),
    /// Region marker for checked/unchecked blocks; a no-op at run time.
    ModeScope(Region, Box<CExpr>),
    /// Null check: fails with a null outcome. Array pointers also treat
    /// negative addresses as null.
    AssertNN { array: bool, ptr: Box<CExpr> },
    /// Bounds check `lo <= idx && idx < hi` (`<= hi` for NT arrays); fails
    /// with a bounds outcome.
    AssertBounds { nt: bool, lo: Box<CExpr>, hi: Box<CExpr>, idx: Box<CExpr> },
    /// Tainted-access verification: optional bounds test, then the accessed
    /// cell must be defined in the region and the value read from it must
    /// pass the region-U validity walk at the element shape. Fails with a
    /// bounds outcome.
    Verify {
        region: Region,
        ptr: Box<CExpr>,
        bounds: Option<(bool, Box<CExpr>, Box<CExpr>, Box<CExpr>)>,
        elem: WordType,
    },
    /// Function-store check: the callee must be defined in the region with
    /// the given flag and arity. Fails with a bounds outcome.
    VerifyFun { region: Region, flag: PtrMode, arity: usize, callee: Box<CExpr> },
    /// Dynamic-cast check: target bounds must sit inside the source bounds
    /// (null passes; a plain source cannot become null-terminated).
    DynCheck {
        ptr: Box<CExpr>,
        t_nt: bool,
        tlo: Box<CExpr>,
        thi: Box<CExpr>,
        s_nt: bool,
        slo: Box<CExpr>,
        shi: Box<CExpr>,
    },
    /// Scan for a zero cell; widens the upper-bound shadow when present.
    Strlen { region: Region, ptr: Box<CExpr>, hi_shadow: Option<Var> },
    /// NT guard widening: bumps a zero upper-bound shadow to one.
    NtWiden { hi_shadow: Var },
}

impl CExpr {
    pub fn lit(n: i64) -> CExpr {
        CExpr::Lit(n)
    }

    pub fn var(x: impl Into<String>) -> CExpr {
        CExpr::Var(x.into())
    }

    pub fn seq(a: CExpr, b: CExpr) -> CExpr {
        CExpr::Seq(Box::new(a), Box::new(b))
    }

    pub fn as_value(&self) -> Option<i64> {
        match self {
            CExpr::Lit(n) => Some(*n),
            _ => None,
        }
    }

    pub fn is_value(&self) -> bool {
        matches!(self, CExpr::Lit(_))
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CFunDef {
    pub flag: PtrMode,
    pub params: Vec<Var>,
    pub body: CExpr,
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct CoreCProgram {
    pub funs: BTreeMap<(Region, i64), CFunDef>,
    pub heap_init: BTreeMap<(Region, i64), i64>,
    pub main: CExpr,
}

impl Default for CExpr {
    fn default() -> Self {
        CExpr::Lit(0)
    }
}

/// Erased stack: variables to bare integers.
pub type CStack = BTreeMap<Var, i64>;

/// Erased two-region heap.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Default)]
pub struct CHeap {
    pub c: BTreeMap<i64, i64>,
    pub u: BTreeMap<i64, i64>,
}

impl CHeap {
    pub fn region(&self, r: Region) -> &BTreeMap<i64, i64> {
        match r {
            Region::C => &self.c,
            Region::U => &self.u,
        }
    }

    pub fn region_mut(&mut self, r: Region) -> &mut BTreeMap<i64, i64> {
        match r {
            Region::C => &mut self.c,
            Region::U => &mut self.u,
        }
    }

    pub fn get(&self, r: Region, addr: i64) -> Option<i64> {
        if addr == 0 {
            return None;
        }
        self.region(r).get(&addr).copied()
    }

    pub fn high_water(&self, r: Region) -> i64 {
        self.region(r).keys().next_back().map_or(1, |k| k + 1)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ErasedConfig {
    pub stack: CStack,
    pub heap: CHeap,
}

pub fn erase_stack(stack: &Stack) -> CStack {
    stack.0.iter().map(|(x, v)| (x.clone(), v.n)).collect()
}

pub fn erase_heap(heap: &Heap) -> CHeap {
    CHeap {
        c: heap.c.iter().map(|(a, v)| (*a, v.n)).collect(),
        u: heap.u.iter().map(|(a, v)| (*a, v.n)).collect(),
    }
}

/// Drops every type annotation from a machine configuration's stack and
/// heap.
pub fn erase_config(config: &Config) -> ErasedConfig {
    ErasedConfig { stack: erase_stack(&config.stack), heap: erase_heap(&config.heap) }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct CConfig {
    pub stack: CStack,
    pub heap: CHeap,
    pub expr: CExpr,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum CTerminal {
    Value(i64),
    Null,
    Bounds,
    Stuck,
    OutOfFuel,
}

impl CTerminal {
    pub fn describe(&self) -> String {
        match self {
            CTerminal::Value(n) => format!("value {n}"),
            CTerminal::Null => "null".to_string(),
            CTerminal::Bounds => "bounds".to_string(),
            CTerminal::Stuck => "stuck".to_string(),
            CTerminal::OutOfFuel => "out-of-fuel".to_string(),
        }
    }
}

enum CFrame {
    AddL(CExpr),
    AddR(i64),
    SubL(CExpr),
    SubR(i64),
    LetBound(Var, CExpr),
    RetBody(Var, Option<i64>),
    BindBound(Var, CExpr),
    IfGuard(CExpr, CExpr),
    SeqFirst(CExpr),
    DerefAddr(Region),
    AssignAddr(Region, CExpr),
    AssignVal(Region, i64),
    CallCallee(Region, Vec<CExpr>),
    CallArg(Region, i64, Vec<i64>, Vec<CExpr>),
    Scope(Region),
}

fn cplug(frames: &[CFrame], mut e: CExpr) -> CExpr {
    for f in frames.iter().rev() {
        e = match f {
            CFrame::AddL(rhs) => CExpr::Add(Box::new(e), Box::new(rhs.clone())),
            CFrame::AddR(lhs) => CExpr::Add(Box::new(CExpr::Lit(*lhs)), Box::new(e)),
            CFrame::SubL(rhs) => CExpr::Sub(Box::new(e), Box::new(rhs.clone())),
            CFrame::SubR(lhs) => CExpr::Sub(Box::new(CExpr::Lit(*lhs)), Box::new(e)),
            CFrame::LetBound(x, body) => {
                CExpr::Let(x.clone(), Box::new(e), Box::new(body.clone()))
            }
            CFrame::RetBody(x, saved) => CExpr::Ret(x.clone(), *saved, Box::new(e)),
            CFrame::BindBound(x, body) => {
                CExpr::Bind(x.clone(), Box::new(e), Box::new(body.clone()))
            }
            CFrame::IfGuard(t, f2) => {
                CExpr::If(Box::new(e), Box::new(t.clone()), Box::new(f2.clone()))
            }
            CFrame::SeqFirst(rest) => CExpr::Seq(Box::new(e), Box::new(rest.clone())),
            CFrame::DerefAddr(r) => CExpr::Deref(*r, Box::new(e)),
            CFrame::AssignAddr(r, v) => CExpr::Assign(*r, Box::new(e), Box::new(v.clone())),
            CFrame::AssignVal(r, a) => {
                CExpr::Assign(*r, Box::new(CExpr::Lit(*a)), Box::new(e))
            }
            CFrame::CallCallee(r, args) => CExpr::Call(*r, Box::new(e), args.clone()),
            CFrame::CallArg(r, callee, before, after) => {
                let mut args: Vec<CExpr> = before.iter().copied().map(CExpr::Lit).collect();
                args.push(e);
                args.extend(after.iter().cloned());
                CExpr::Call(*r, Box::new(CExpr::Lit(*callee)), args)
            }
            CFrame::Scope(r) => CExpr::ModeScope(*r, Box::new(e)),
        };
    }
    e
}

fn cfind_redex(e: &CExpr, frames: &mut Vec<CFrame>) -> Option<CExpr> {
    match e {
        CExpr::Lit(_) => None,
        CExpr::Var(_)
        | CExpr::Malloc(..)
        | CExpr::AssertNN { .. }
        | CExpr::AssertBounds { .. }
        | CExpr::Verify { .. }
        | CExpr::VerifyFun { .. }
        | CExpr::DynCheck { .. }
        | CExpr::Strlen { .. }
        | CExpr::NtWiden { .. } => Some(e.clone()),
        CExpr::Add(a, b) => {
            if !a.is_value() {
                frames.push(CFrame::AddL(b.as_ref().clone()));
                cfind_redex(a, frames)
            } else if !b.is_value() {
                frames.push(CFrame::AddR(a.as_value().unwrap()));
                cfind_redex(b, frames)
            } else {
                Some(e.clone())
            }
        }
        CExpr::Sub(a, b) => {
            if !a.is_value() {
                frames.push(CFrame::SubL(b.as_ref().clone()));
                cfind_redex(a, frames)
            } else if !b.is_value() {
                frames.push(CFrame::SubR(a.as_value().unwrap()));
                cfind_redex(b, frames)
            } else {
                Some(e.clone())
            }
        }
        CExpr::Let(x, e1, e2) => {
            if !e1.is_value() {
                frames.push(CFrame::LetBound(x.clone(), e2.as_ref().clone()));
                cfind_redex(e1, frames)
            } else {
                Some(e.clone())
            }
        }
        CExpr::Bind(x, e1, e2) => {
            if !e1.is_value() {
                frames.push(CFrame::BindBound(x.clone(), e2.as_ref().clone()));
                cfind_redex(e1, frames)
            } else {
                Some(e.clone())
            }
        }
        CExpr::Ret(x, saved, body) => {
            if !body.is_value() {
                frames.push(CFrame::RetBody(x.clone(), *saved));
                cfind_redex(body, frames)
            } else {
                Some(e.clone())
            }
        }
        CExpr::If(g, t, f) => {
            if !g.is_value() {
                frames.push(CFrame::IfGuard(t.as_ref().clone(), f.as_ref().clone()));
                cfind_redex(g, frames)
            } else {
                Some(e.clone())
            }
        }
        CExpr::Seq(a, b) => {
            if !a.is_value() {
                frames.push(CFrame::SeqFirst(b.as_ref().clone()));
                cfind_redex(a, frames)
            } else {
                Some(e.clone())
            }
        }
        CExpr::Deref(r, addr) => {
            if !addr.is_value() {
                frames.push(CFrame::DerefAddr(*r));
                cfind_redex(addr, frames)
            } else {
                Some(e.clone())
            }
        }
        CExpr::Assign(r, addr, val) => {
            if !addr.is_value() {
                frames.push(CFrame::AssignAddr(*r, val.as_ref().clone()));
                cfind_redex(addr, frames)
            } else if !val.is_value() {
                frames.push(CFrame::AssignVal(*r, addr.as_value().unwrap()));
                cfind_redex(val, frames)
            } else {
                Some(e.clone())
            }
        }
        CExpr::Call(r, callee, args) => {
            if !callee.is_value() {
                frames.push(CFrame::CallCallee(*r, args.clone()));
                return cfind_redex(callee, frames);
            }
            for (i, a) in args.iter().enumerate() {
                if !a.is_value() {
                    let before = args[..i].iter().map(|x| x.as_value().unwrap()).collect();
                    let after = args[i + 1..].to_vec();
                    frames.push(CFrame::CallArg(
                        *r,
                        callee.as_value().unwrap(),
                        before,
                        after,
                    ));
                    return cfind_redex(a, frames);
                }
            }
            Some(e.clone())
        }
        CExpr::ModeScope(r, body) => {
            if !body.is_value() {
                frames.push(CFrame::Scope(*r));
                cfind_redex(body, frames)
            } else {
                Some(e.clone())
            }
        }
    }
}

fn eval_atom(stack: &CStack, e: &CExpr) -> Option<i64> {
    match e {
        CExpr::Lit(n) => Some(*n),
        CExpr::Var(x) => stack.get(x).copied(),
        CExpr::Add(a, b) => Some(eval_atom(stack, a)?.wrapping_add(eval_atom(stack, b)?)),
        CExpr::Sub(a, b) => Some(eval_atom(stack, a)?.wrapping_sub(eval_atom(stack, b)?)),
        _ => None,
    }
}

/// Region-U validity walk over erased state, recursing along expected
/// element shapes. Mirrors the typed constant-validity judgment at
/// unchecked mode on annotation-consistent heaps; unresolvable nested
/// bounds pass shallowly.
fn verify_walk(
    heap: &CHeap,
    funs: &BTreeMap<(Region, i64), CFunDef>,
    val: i64,
    tau: &WordType,
    seen: &mut std::collections::BTreeSet<(i64, WordType)>,
) -> bool {
    let WordType::Ptr(omega, xi) = tau else { return true };
    if val == 0 {
        return true;
    }
    match xi {
        PtrMode::Unchecked => return true,
        PtrMode::Checked => return false,
        PtrMode::Tainted => {}
    }
    if seen.contains(&(val, tau.clone())) {
        return true;
    }
    seen.insert((val, tau.clone()));
    match omega.as_ref() {
        ObjectType::Fun { params, .. } => match funs.get(&(Region::U, val)) {
            Some(def) => def.flag == PtrMode::Tainted && def.params.len() == params.len(),
            None => false,
        },
        ObjectType::Word(inner) => match heap.get(Region::U, val) {
            Some(cell) => verify_walk(heap, funs, cell, inner, seen),
            None => false,
        },
        ObjectType::Array { nt, bounds, elem } => {
            let (Some(lo), Some(hi)) = (bounds.lo.as_lit(), bounds.hi.as_lit()) else {
                return true;
            };
            for i in lo..(hi + if *nt { 1 } else { 0 }) {
                match heap.get(Region::U, val + i) {
                    Some(cell) => {
                        if !verify_walk(heap, funs, cell, elem, seen) {
                            return false;
                        }
                    }
                    None => return false,
                }
            }
            true
        }
    }
}

pub enum CStepResult {
    Stepped(CConfig),
    Done(i64),
    Failed(CTerminal),
    Stuck,
}

/// One deterministic step of the target machine. The semantics does not
/// distinguish regions as a permission matter; region tags only select
/// which map an operation touches.
pub fn step_corec(config: &CConfig, funs: &BTreeMap<(Region, i64), CFunDef>) -> CStepResult {
    let mut frames = Vec::new();
    let Some(redex) = cfind_redex(&config.expr, &mut frames) else {
        return CStepResult::Done(config.expr.as_value().unwrap());
    };
    let stack = &config.stack;
    let heap = &config.heap;
    let ok = |stack: CStack, heap: CHeap, filler: CExpr, frames: &[CFrame]| {
        CStepResult::Stepped(CConfig { stack, heap, expr: cplug(frames, filler) })
    };
    match &redex {
        CExpr::Var(x) => match stack.get(x) {
            Some(n) => ok(stack.clone(), heap.clone(), CExpr::Lit(*n), &frames),
            None => CStepResult::Stuck,
        },
        CExpr::Add(a, b) => {
            let (Some(x), Some(y)) = (a.as_value(), b.as_value()) else {
                return CStepResult::Stuck;
            };
            ok(stack.clone(), heap.clone(), CExpr::Lit(x.wrapping_add(y)), &frames)
        }
        CExpr::Sub(a, b) => {
            let (Some(x), Some(y)) = (a.as_value(), b.as_value()) else {
                return CStepResult::Stuck;
            };
            ok(stack.clone(), heap.clone(), CExpr::Lit(x.wrapping_sub(y)), &frames)
        }
        CExpr::Let(x, e1, e2) => {
            let v = e1.as_value().unwrap();
            let saved = stack.get(x).copied();
            let mut stack2 = stack.clone();
            stack2.insert(x.clone(), v);
            ok(
                stack2,
                heap.clone(),
                CExpr::Ret(x.clone(), saved, e2.clone()),
                &frames,
            )
        }
        CExpr::Bind(x, e1, e2) => {
            let v = e1.as_value().unwrap();
            let mut stack2 = stack.clone();
            stack2.insert(x.clone(), v);
            ok(stack2, heap.clone(), e2.as_ref().clone(), &frames)
        }
        CExpr::Ret(x, saved, body) => {
            let v = body.as_value().unwrap();
            let mut stack2 = stack.clone();
            match saved {
                Some(n) => {
                    stack2.insert(x.clone(), *n);
                }
                None => {
                    stack2.remove(x);
                }
            }
            ok(stack2, heap.clone(), CExpr::Lit(v), &frames)
        }
        CExpr::If(g, t, f) => {
            let v = g.as_value().unwrap();
            let branch = if v != 0 { t } else { f };
            ok(stack.clone(), heap.clone(), branch.as_ref().clone(), &frames)
        }
        CExpr::Seq(_, rest) => ok(stack.clone(), heap.clone(), rest.as_ref().clone(), &frames),
        CExpr::Deref(r, addr) => {
            let a = addr.as_value().unwrap();
            match heap.get(*r, a) {
                Some(n) => ok(stack.clone(), heap.clone(), CExpr::Lit(n), &frames),
                None => CStepResult::Stuck,
            }
        }
        CExpr::Assign(r, addr, val) => {
            let a = addr.as_value().unwrap();
            let v = val.as_value().unwrap();
            if heap.get(*r, a).is_none() {
                return CStepResult::Stuck;
            }
            let mut heap2 = heap.clone();
            heap2.region_mut(*r).insert(a, v);
            ok(stack.clone(), heap2, CExpr::Lit(v), &frames)
        }
        CExpr::Malloc(r, shape) => {
            let (count, nt) = match shape {
                CShape::Word => (1, false),
                CShape::Array { nt, lo, hi } => {
                    let (Some(lo), Some(hi)) =
                        (eval_atom(stack, lo), eval_atom(stack, hi))
                    else {
                        return CStepResult::Stuck;
                    };
                    if lo != 0 || hi <= 0 {
                        return CStepResult::Failed(CTerminal::Bounds);
                    }
                    (hi - lo, *nt)
                }
            };
            let total = count + if nt { 1 } else { 0 };
            let mut heap2 = heap.clone();
            let base = heap2.high_water(*r);
            for i in 0..total {
                heap2.region_mut(*r).insert(base + i, 0);
            }
            ok(stack.clone(), heap2, CExpr::Lit(base), &frames)
        }
        CExpr::Call(r, callee, args) => {
            let f = callee.as_value().unwrap();
            let vals: Vec<i64> = args.iter().map(|a| a.as_value().unwrap()).collect();
            let Some(def) = funs.get(&(*r, f)) else { return CStepResult::Stuck };
            if def.params.len() != vals.len() {
                return CStepResult::Stuck;
            }
            let mut expr = def.body.clone();
            for (x, v) in def.params.iter().zip(&vals).rev() {
                expr = CExpr::Let(x.clone(), Box::new(CExpr::Lit(*v)), Box::new(expr));
            }
            ok(stack.clone(), heap.clone(), expr, &frames)
        }
        CExpr::ModeScope(_, body) => {
            let v = body.as_value().unwrap();
            ok(stack.clone(), heap.clone(), CExpr::Lit(v), &frames)
        }
        CExpr::AssertNN { array, ptr } => {
            let Some(v) = eval_atom(stack, ptr) else { return CStepResult::Stuck };
            let null = if *array { v <= 0 } else { v == 0 };
            if null {
                CStepResult::Failed(CTerminal::Null)
            } else {
                ok(stack.clone(), heap.clone(), CExpr::Lit(0), &frames)
            }
        }
        CExpr::AssertBounds { nt, lo, hi, idx } => {
            let (Some(lo), Some(hi), Some(idx)) = (
                eval_atom(stack, lo),
                eval_atom(stack, hi),
                eval_atom(stack, idx),
            ) else {
                return CStepResult::Stuck;
            };
            let in_range = lo <= idx && if *nt { idx <= hi } else { idx < hi };
            if in_range {
                ok(stack.clone(), heap.clone(), CExpr::Lit(0), &frames)
            } else {
                CStepResult::Failed(CTerminal::Bounds)
            }
        }
        CExpr::Verify { region, ptr, bounds, elem } => {
            let Some(addr) = eval_atom(stack, ptr) else { return CStepResult::Stuck };
            if let Some((nt, lo, hi)) = bounds
                .as_ref()
                .map(|(nt, lo, hi, _)| (*nt, lo, hi))
            {
                let (Some(lo), Some(hi)) = (eval_atom(stack, lo), eval_atom(stack, hi)) else {
                    return CStepResult::Stuck;
                };
                let idx = bounds
                    .as_ref()
                    .and_then(|(_, _, _, idx)| eval_atom(stack, idx));
                let Some(idx) = idx else { return CStepResult::Stuck };
                let in_range = lo <= idx && if nt { idx <= hi } else { idx < hi };
                if !in_range {
                    return CStepResult::Failed(CTerminal::Bounds);
                }
            }
            let Some(cell) = heap.get(*region, addr) else {
                return CStepResult::Failed(CTerminal::Bounds);
            };
            let mut seen = std::collections::BTreeSet::new();
            if verify_walk(heap, funs, cell, elem, &mut seen) {
                ok(stack.clone(), heap.clone(), CExpr::Lit(0), &frames)
            } else {
                CStepResult::Failed(CTerminal::Bounds)
            }
        }
        CExpr::VerifyFun { region, flag, arity, callee } => {
            let Some(f) = eval_atom(stack, callee) else { return CStepResult::Stuck };
            match funs.get(&(*region, f)) {
                Some(def) if def.flag == *flag && def.params.len() == *arity => {
                    ok(stack.clone(), heap.clone(), CExpr::Lit(0), &frames)
                }
                _ => CStepResult::Failed(CTerminal::Bounds),
            }
        }
        CExpr::DynCheck { ptr, t_nt, tlo, thi, s_nt, slo, shi } => {
            let (Some(p), Some(tlo), Some(thi), Some(slo), Some(shi)) = (
                eval_atom(stack, ptr),
                eval_atom(stack, tlo),
                eval_atom(stack, thi),
                eval_atom(stack, slo),
                eval_atom(stack, shi),
            ) else {
                return CStepResult::Stuck;
            };
            let pass = p == 0 || (slo <= tlo && thi <= shi && (*s_nt || !*t_nt));
            if pass {
                ok(stack.clone(), heap.clone(), CExpr::Lit(0), &frames)
            } else {
                CStepResult::Failed(CTerminal::Bounds)
            }
        }
        CExpr::Strlen { region, ptr, hi_shadow } => {
            let Some(base) = eval_atom(stack, ptr) else { return CStepResult::Stuck };
            let mut k = 0i64;
            loop {
                match heap.get(*region, base + k) {
                    None => return CStepResult::Failed(CTerminal::Bounds),
                    Some(0) => break,
                    Some(_) => k += 1,
                }
            }
            let mut stack2 = stack.clone();
            if let Some(x) = hi_shadow {
                match stack2.get(x).copied() {
                    Some(old) if k > old => {
                        stack2.insert(x.clone(), k);
                    }
                    Some(_) => {}
                    None => return CStepResult::Stuck,
                }
            }
            ok(stack2, heap.clone(), CExpr::Lit(k), &frames)
        }
        CExpr::NtWiden { hi_shadow } => {
            let mut stack2 = stack.clone();
            match stack2.get(hi_shadow).copied() {
                Some(0) => {
                    stack2.insert(hi_shadow.clone(), 1);
                }
                Some(_) => {}
                None => return CStepResult::Stuck,
            }
            ok(stack2, heap.clone(), CExpr::Lit(0), &frames)
        }
        CExpr::Lit(_) => CStepResult::Stuck,
    }
}

#[derive(Clone, Debug)]
pub struct COutcome {
    pub result: CTerminal,
    pub states: Vec<CConfig>,
    pub final_stack: CStack,
    pub final_heap: CHeap,
}

/// Iterated [`step_corec`] with a fuel budget; records every configuration,
/// starting configuration included.
pub fn run_corec(
    config: CConfig,
    funs: &BTreeMap<(Region, i64), CFunDef>,
    fuel: u64,
) -> COutcome {
    let mut states = vec![config];
    for _ in 0..fuel {
        let cur = states.last().unwrap().clone();
        match step_corec(&cur, funs) {
            CStepResult::Stepped(next) => states.push(next),
            CStepResult::Done(n) => {
                return COutcome {
                    result: CTerminal::Value(n),
                    final_stack: cur.stack,
                    final_heap: cur.heap,
                    states,
                };
            }
            CStepResult::Failed(t) => {
                return COutcome {
                    result: t,
                    final_stack: cur.stack,
                    final_heap: cur.heap,
                    states,
                };
            }
            CStepResult::Stuck => {
                return COutcome {
                    result: CTerminal::Stuck,
                    final_stack: cur.stack,
                    final_heap: cur.heap,
                    states,
                };
            }
        }
    }
    let last = states.last().unwrap().clone();
    COutcome {
        result: CTerminal::OutOfFuel,
        final_stack: last.stack,
        final_heap: last.heap,
        states,
    }
}

pub fn initial_cconfig(p: &CoreCProgram) -> CConfig {
    let mut heap = CHeap::default();
    for ((r, a), v) in &p.heap_init {
        heap.region_mut(*r).insert(*a, *v);
    }
    CConfig { stack: CStack::new(), heap, expr: p.main.clone() }
}

pub fn eval_corec(p: &CoreCProgram, fuel: u64) -> COutcome {
    run_corec(initial_cconfig(p), &p.funs, fuel)
}

// ---------------------------------------------------------------------------
// Printer / parser for .corec files.

pub fn print_cexpr(e: &CExpr) -> String {
    let mut s = String::new();
    wr(&mut s, e);
    s
}

fn wr(out: &mut String, e: &CExpr) {
    match e {
        CExpr::Lit(n) => {
            let _ = write!(out, "(lit {n})");
        }
        CExpr::Var(x) => {
            let _ = write!(out, "(var {x})");
        }
        CExpr::Add(a, b) => bin(out, "add", a, b),
        CExpr::Sub(a, b) => bin(out, "sub", a, b),
        CExpr::Let(x, a, b) => {
            let _ = write!(out, "(let {x} ");
            wr(out, a);
            out.push(' ');
            wr(out, b);
            out.push(')');
        }
        CExpr::Bind(x, a, b) => {
            let _ = write!(out, "(bind {x} ");
            wr(out, a);
            out.push(' ');
            wr(out, b);
            out.push(')');
        }
        CExpr::Ret(x, saved, body) => {
            let s = saved.map_or("none".to_string(), |n| n.to_string());
            let _ = write!(out, "(ret {x} {s} ");
            wr(out, body);
            out.push(')');
        }
        CExpr::If(g, t, f) => {
            out.push_str("(if ");
            wr(out, g);
            out.push(' ');
            wr(out, t);
            out.push(' ');
            wr(out, f);
            out.push(')');
        }
        CExpr::Seq(a, b) => bin(out, "seq", a, b),
        CExpr::Deref(r, a) => {
            let _ = write!(out, "(deref {r} ");
            wr(out, a);
            out.push(')');
        }
        CExpr::Assign(r, a, v) => {
            let _ = write!(out, "(assignr {r} ");
            wr(out, a);
            out.push(' ');
            wr(out, v);
            out.push(')');
        }
        CExpr::Malloc(r, shape) => {
            let _ = write!(out, "(mallocr {r} ");
            match shape {
                CShape::Word => out.push_str("word"),
                CShape::Array { nt, lo, hi } => {
                    let _ = write!(out, "(array {}", if *nt { "nt " } else { "" });
                    wr(out, lo);
                    out.push(' ');
                    wr(out, hi);
                    out.push(')');
                }
            }
            out.push(')');
        }
        CExpr::Call(r, f, args) => {
            let _ = write!(out, "(callr {r} ");
            wr(out, f);
            for a in args {
                out.push(' ');
                wr(out, a);
            }
            out.push(')');
        }
        CExpr::ModeScope(r, body) => {
            let _ = write!(out, "(scope {r} ");
            wr(out, body);
            out.push(')');
        }
        CExpr::AssertNN { array, ptr } => {
            let _ = write!(out, "(assertnn {}", if *array { "arr " } else { "" });
            wr(out, ptr);
            out.push(')');
        }
        CExpr::AssertBounds { nt, lo, hi, idx } => {
            let _ = write!(out, "(assertb {}", if *nt { "nt " } else { "" });
            wr(out, lo);
            out.push(' ');
            wr(out, hi);
            out.push(' ');
            wr(out, idx);
            out.push(')');
        }
        CExpr::Verify { region, ptr, bounds, elem } => {
            let _ = write!(out, "(verify {region} ");
            wr(out, ptr);
            if let Some((nt, lo, hi, idx)) = bounds {
                let _ = write!(out, " (bounds {}", if *nt { "nt " } else { "" });
                wr(out, lo);
                out.push(' ');
                wr(out, hi);
                out.push(' ');
                wr(out, idx);
                out.push(')');
            }
            let _ = write!(out, " (elem {}))", print_word(elem));
        }
        CExpr::VerifyFun { region, flag, arity, callee } => {
            let _ = write!(out, "(verifyfun {region} {flag} {arity} ");
            wr(out, callee);
            out.push(')');
        }
        CExpr::DynCheck { ptr, t_nt, tlo, thi, s_nt, slo, shi } => {
            out.push_str("(dyncheck ");
            wr(out, ptr);
            let _ = write!(out, " (target {}", if *t_nt { "nt " } else { "" });
            wr(out, tlo);
            out.push(' ');
            wr(out, thi);
            let _ = write!(out, ") (source {}", if *s_nt { "nt " } else { "" });
            wr(out, slo);
            out.push(' ');
            wr(out, shi);
            out.push_str("))");
        }
        CExpr::Strlen { region, ptr, hi_shadow } => {
            let _ = write!(out, "(strlenr {region} ");
            wr(out, ptr);
            match hi_shadow {
                Some(x) => {
                    let _ = write!(out, " {x})");
                }
                None => out.push_str(" none)"),
            }
        }
        CExpr::NtWiden { hi_shadow } => {
            let _ = write!(out, "(ntwiden {hi_shadow})");
        }
    }
}

fn bin(out: &mut String, head: &str, a: &CExpr, b: &CExpr) {
    let _ = write!(out, "({head} ");
    wr(out, a);
    out.push(' ');
    wr(out, b);
    out.push(')');
}

pub fn print_corec_program(p: &CoreCProgram) -> String {
    let mut out = String::new();
    for ((region, addr), def) in &p.funs {
        let _ = writeln!(
            out,
            "(cfundef (addr {addr}) (region {region}) (flag {}) (params {}) (body {}))",
            def.flag,
            def.params.join(" "),
            print_cexpr(&def.body),
        );
    }
    if !p.heap_init.is_empty() {
        out.push_str("(cheap");
        for region in [Region::C, Region::U] {
            let cells: Vec<_> =
                p.heap_init.iter().filter(|((r, _), _)| *r == region).collect();
            if cells.is_empty() {
                continue;
            }
            let _ = write!(out, " ({region}");
            for ((_, addr), v) in cells {
                let _ = write!(out, " ({addr} {v})");
            }
            out.push(')');
        }
        out.push_str(")\n");
    }
    let _ = writeln!(out, "(cmain {})", print_cexpr(&p.main));
    out
}

pub fn parse_corec_program(text: &str) -> Result<CoreCProgram, ParseError> {
    // Shadow and temporary names contain '#', which the source-language
    // lexer rejects; rewrite them around lexing.
    let mut p = CParser { inner: Parser::new(&text.replace('#', "_HASH_"))? };
    p.program()
}

struct CParser {
    inner: Parser,
}

impl CParser {
    fn program(&mut self) -> Result<CoreCProgram, ParseError> {
        let mut prog = CoreCProgram::default();
        let mut saw_main = false;
        while self.inner.peek_some() {
            self.inner.open("a top-level form")?;
            let head = self.inner.ident_tok("'cfundef', 'cheap' or 'cmain'")?;
            match head.as_str() {
                "cfundef" => {
                    self.inner.open("(addr N)")?;
                    self.inner.keyword("addr")?;
                    let addr = self.inner.int_tok("address")?;
                    self.inner.close("(addr N)")?;
                    self.inner.open("(region R)")?;
                    self.inner.keyword("region")?;
                    let region = self.inner.region_tok()?;
                    self.inner.close("(region R)")?;
                    self.inner.open("(flag M)")?;
                    self.inner.keyword("flag")?;
                    let flag = self.inner.mode_tok()?;
                    self.inner.close("(flag M)")?;
                    self.inner.open("(params ...)")?;
                    self.inner.keyword("params")?;
                    let mut params = Vec::new();
                    while !self.inner.peek_rparen() {
                        params.push(unhash(self.inner.ident_tok("a parameter")?));
                    }
                    self.inner.close("(params ...)")?;
                    self.inner.open("(body E)")?;
                    self.inner.keyword("body")?;
                    let body = self.expr()?;
                    self.inner.close("(body E)")?;
                    prog.funs.insert((region, addr), CFunDef { flag, params, body });
                }
                "cheap" => {
                    while self.inner.peek_lparen() {
                        self.inner.open("heap region")?;
                        let region = self.inner.region_tok()?;
                        while self.inner.peek_lparen() {
                            self.inner.open("heap cell")?;
                            let addr = self.inner.int_tok("address")?;
                            let v = self.inner.int_tok("cell value")?;
                            self.inner.close("heap cell")?;
                            prog.heap_init.insert((region, addr), v);
                        }
                        self.inner.close("heap region")?;
                    }
                }
                "cmain" => {
                    prog.main = self.expr()?;
                    saw_main = true;
                }
                _ => return self.inner.fail("'cfundef', 'cheap' or 'cmain'"),
            }
            self.inner.close("top-level form")?;
        }
        if !saw_main {
            return self.inner.fail("a (cmain E) form");
        }
        Ok(prog)
    }

    fn expr(&mut self) -> Result<CExpr, ParseError> {
        self.inner.open("an expression")?;
        let head = self.inner.ident_tok("an expression head")?;
        let e = match head.as_str() {
            "lit" => CExpr::Lit(self.inner.int_tok("an integer")?),
            "var" => CExpr::Var(unhash(self.inner.ident_tok("a variable")?)),
            "add" => CExpr::Add(Box::new(self.expr()?), Box::new(self.expr()?)),
            "sub" => CExpr::Sub(Box::new(self.expr()?), Box::new(self.expr()?)),
            "let" => {
                let x = unhash(self.inner.ident_tok("a variable")?);
                CExpr::Let(x, Box::new(self.expr()?), Box::new(self.expr()?))
            }
            "bind" => {
                let x = unhash(self.inner.ident_tok("a variable")?);
                CExpr::Bind(x, Box::new(self.expr()?), Box::new(self.expr()?))
            }
            "ret" => {
                let x = unhash(self.inner.ident_tok("a variable")?);
                let saved = self.inner.int_or_none()?;
                CExpr::Ret(x, saved, Box::new(self.expr()?))
            }
            "if" => CExpr::If(
                Box::new(self.expr()?),
                Box::new(self.expr()?),
                Box::new(self.expr()?),
            ),
            "seq" => CExpr::Seq(Box::new(self.expr()?), Box::new(self.expr()?)),
            "deref" => {
                let r = self.inner.region_tok()?;
                CExpr::Deref(r, Box::new(self.expr()?))
            }
            "assignr" => {
                let r = self.inner.region_tok()?;
                CExpr::Assign(r, Box::new(self.expr()?), Box::new(self.expr()?))
            }
            "mallocr" => {
                let r = self.inner.region_tok()?;
                let shape = if self.inner.try_keyword("word") {
                    CShape::Word
                } else {
                    self.inner.open("(array ...)")?;
                    self.inner.keyword("array")?;
                    let nt = self.inner.try_keyword("nt");
                    let lo = self.expr()?;
                    let hi = self.expr()?;
                    self.inner.close("(array ...)")?;
                    CShape::Array { nt, lo: Box::new(lo), hi: Box::new(hi) }
                };
                CExpr::Malloc(r, shape)
            }
            "callr" => {
                let r = self.inner.region_tok()?;
                let f = self.expr()?;
                let mut args = Vec::new();
                while !self.inner.peek_rparen() {
                    args.push(self.expr()?);
                }
                CExpr::Call(r, Box::new(f), args)
            }
            "scope" => {
                let r = self.inner.region_tok()?;
                CExpr::ModeScope(r, Box::new(self.expr()?))
            }
            "assertnn" => {
                let array = self.inner.try_keyword("arr");
                CExpr::AssertNN { array, ptr: Box::new(self.expr()?) }
            }
            "assertb" => {
                let nt = self.inner.try_keyword("nt");
                CExpr::AssertBounds {
                    nt,
                    lo: Box::new(self.expr()?),
                    hi: Box::new(self.expr()?),
                    idx: Box::new(self.expr()?),
                }
            }
            "verify" => {
                let region = self.inner.region_tok()?;
                let ptr = self.expr()?;
                let mut bounds = None;
                self.inner.open("(bounds ...) or (elem TYPE)")?;
                let mut section = self.inner.ident_tok("'bounds' or 'elem'")?;
                if section == "bounds" {
                    let nt = self.inner.try_keyword("nt");
                    let lo = self.expr()?;
                    let hi = self.expr()?;
                    let idx = self.expr()?;
                    self.inner.close("(bounds ...)")?;
                    bounds = Some((nt, Box::new(lo), Box::new(hi), Box::new(idx)));
                    self.inner.open("(elem TYPE)")?;
                    section = self.inner.ident_tok("'elem'")?;
                }
                if section != "elem" {
                    return self.inner.fail("'elem'");
                }
                let elem = self.inner.word_type_tok()?;
                self.inner.close("(elem TYPE)")?;
                CExpr::Verify { region, ptr: Box::new(ptr), bounds, elem }
            }
            "verifyfun" => {
                let region = self.inner.region_tok()?;
                let flag = self.inner.mode_tok()?;
                let arity = self.inner.int_tok("arity")? as usize;
                CExpr::VerifyFun { region, flag, arity, callee: Box::new(self.expr()?) }
            }
            "dyncheck" => {
                let ptr = self.expr()?;
                self.inner.open("(target ...)")?;
                self.inner.keyword("target")?;
                let t_nt = self.inner.try_keyword("nt");
                let tlo = self.expr()?;
                let thi = self.expr()?;
                self.inner.close("(target ...)")?;
                self.inner.open("(source ...)")?;
                self.inner.keyword("source")?;
                let s_nt = self.inner.try_keyword("nt");
                let slo = self.expr()?;
                let shi = self.expr()?;
                self.inner.close("(source ...)")?;
                CExpr::DynCheck {
                    ptr: Box::new(ptr),
                    t_nt,
                    tlo: Box::new(tlo),
                    thi: Box::new(thi),
                    s_nt,
                    slo: Box::new(slo),
                    shi: Box::new(shi),
                }
            }
            "strlenr" => {
                let region = self.inner.region_tok()?;
                let ptr = self.expr()?;
                let hi_shadow = if self.inner.try_keyword("none") {
                    None
                } else {
                    Some(unhash(self.inner.ident_tok("a shadow variable")?))
                };
                CExpr::Strlen { region, ptr: Box::new(ptr), hi_shadow }
            }
            "ntwiden" => CExpr::NtWiden {
                hi_shadow: unhash(self.inner.ident_tok("a shadow variable")?),
            },
            _ => return self.inner.fail("an expression head"),
        };
        self.inner.close("expression")?;
        Ok(e)
    }
}

fn unhash(s: String) -> String {
    s.replace("_HASH_", "#")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erase_examples() {
        let mut stack = Stack::new();
        stack.bind("x", Value::int(3));
        assert_eq!(erase_stack(&stack), [("x".to_string(), 3)].into_iter().collect());

        let mut heap = Heap::new();
        heap.c.insert(
            1,
            Value::new(7, WordType::ptr_word(WordType::Int, PtrMode::Checked)),
        );
        let erased = erase_heap(&heap);
        assert_eq!(erased.get(Region::C, 1), Some(7));
    }

    #[test]
    fn add_steps_to_value() {
        let funs = BTreeMap::new();
        let config = CConfig {
            stack: CStack::new(),
            heap: CHeap::default(),
            expr: CExpr::Add(Box::new(CExpr::Lit(2)), Box::new(CExpr::Lit(3))),
        };
        let out = run_corec(config, &funs, 10);
        assert_eq!(out.result, CTerminal::Value(5));
    }

    #[test]
    fn deref_defined_cell() {
        let funs = BTreeMap::new();
        let mut heap = CHeap::default();
        heap.c.insert(4, 9);
        let config = CConfig {
            stack: CStack::new(),
            heap,
            expr: CExpr::Deref(Region::C, Box::new(CExpr::Lit(4))),
        };
        let out = run_corec(config, &funs, 10);
        assert_eq!(out.result, CTerminal::Value(9));
    }

    #[test]
    fn assertnn_guard_gives_null() {
        let funs = BTreeMap::new();
        let config = CConfig {
            stack: CStack::new(),
            heap: CHeap::default(),
            expr: CExpr::seq(
                CExpr::AssertNN { array: false, ptr: Box::new(CExpr::Lit(0)) },
                CExpr::Deref(Region::U, Box::new(CExpr::Lit(0))),
            ),
        };
        let out = run_corec(config, &funs, 10);
        assert_eq!(out.result, CTerminal::Null);
    }

    #[test]
    fn undefined_read_is_stuck() {
        let funs = BTreeMap::new();
        let config = CConfig {
            stack: CStack::new(),
            heap: CHeap::default(),
            expr: CExpr::Deref(Region::C, Box::new(CExpr::Lit(12))),
        };
        let out = run_corec(config, &funs, 10);
        assert_eq!(out.result, CTerminal::Stuck);
    }

    #[test]
    fn corec_program_roundtrip() {
        let mut p = CoreCProgram::default();
        p.funs.insert(
            (Region::U, 2),
            CFunDef {
                flag: PtrMode::Tainted,
                params: vec!["a".into()],
                body: CExpr::seq(
                    CExpr::Verify {
                        region: Region::U,
                        ptr: Box::new(CExpr::var("a")),
                        bounds: Some((
                            true,
                            Box::new(CExpr::var("a#lo")),
                            Box::new(CExpr::var("a#hi")),
                            Box::new(CExpr::Lit(0)),
                        )),
                        elem: WordType::Int,
                    },
                    CExpr::Deref(Region::U, Box::new(CExpr::var("a"))),
                ),
            },
        );
        p.heap_init.insert((Region::U, 1), 5);
        p.main = CExpr::Call(Region::U, Box::new(CExpr::Lit(2)), vec![CExpr::Lit(1)]);
        let text = print_corec_program(&p);
        let p2 = parse_corec_program(&text).unwrap();
        assert_eq!(p, p2);
    }
}
