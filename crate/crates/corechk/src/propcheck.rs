//! Randomized metatheory harness: type-directed generation of well-typed
//! programs and oracles for progress, checked/unchecked preservation,
//! non-exposure, non-crashing, and adjacent-step simulation with the
//! join relation.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::compile::{compile_config, compile_program, CompileError};
use crate::corec::*;
use crate::lattice::{subtype, PredEnv};
use crate::machine::*;
use crate::print::{print_expr, print_program};
use crate::store::FunStore;
use crate::syntax::*;
use crate::typecheck::{const_valid, is_checked, typecheck_in, validate_program, Scope};

// ---------------------------------------------------------------------------
// Generator configuration and reports.

#[derive(Clone, Copy, Debug)]
pub struct GenConfig {
    pub seed: u64,
    pub max_depth: u32,
    pub count: u64,
    pub arrays: bool,
    pub nt_arrays: bool,
    pub fun_ptrs: bool,
    pub tainted_ptrs: bool,
    /// The progress/preservation/simulation suites never generate unchecked
    /// expressions; the non-crashing suite turns this on.
    pub unchecked_blocks: bool,
    pub fault_rate: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            max_depth: 8,
            count: 100,
            arrays: true,
            nt_arrays: true,
            fun_ptrs: true,
            tainted_ptrs: true,
            unchecked_blocks: false,
            fault_rate: 0.0,
        }
    }
}

#[derive(Serialize, Clone, Debug)]
pub struct FailureRecord {
    pub seed: u64,
    pub index: u64,
    pub program: String,
    pub trace_prefix: Vec<String>,
    pub detail: String,
}

#[derive(Serialize, Clone, Debug)]
pub struct CheckReport {
    pub property: String,
    pub cases: u64,
    pub failures: Vec<FailureRecord>,
    /// Inconclusive simulation joins (budget exhaustion), by case index.
    pub inconclusive: Vec<u64>,
    /// Not serialized: identical invocations must produce byte-identical
    /// reports.
    #[serde(skip)]
    pub wall_ms: u128,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn case_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(index)))
}

// ---------------------------------------------------------------------------
// Program generation.

/// Typed entry points into the generated initial heap and function store.
struct Plan {
    c_ptrs: Vec<(i64, WordType)>,
    t_ptrs: Vec<(i64, WordType)>,
    c_funs: Vec<(i64, ObjectType)>,
    t_funs: Vec<(i64, ObjectType)>,
    u_funs: Vec<(i64, ObjectType)>,
}

struct Gen<'a> {
    rng: ChaCha8Rng,
    cfg: &'a GenConfig,
    plan: Plan,
    fresh: u64,
}

#[derive(Clone)]
struct Scope2 {
    gamma: Vec<(Var, WordType)>,
    /// Integer variables whose concrete value is known (bound to literals),
    /// usable as positive array bounds.
    known_ints: Vec<(Var, i64)>,
    mode: ContextMode,
}

impl Scope2 {
    fn lookup_of(&self, pred: impl Fn(&WordType) -> bool) -> Vec<(Var, WordType)> {
        self.gamma
            .iter()
            .filter(|(_, t)| pred(t))
            .map(|(x, t)| (x.clone(), t.clone()))
            .collect()
    }

    fn with(&self, x: Var, t: WordType) -> Scope2 {
        let mut s = self.clone();
        s.gamma.push((x, t));
        s
    }

    /// Shadowed names would break the compiled shadow-variable discipline;
    /// the generator simply never reuses a binder.
    fn restricted_to_untainted_free(&self) -> Scope2 {
        let mut s = self.clone();
        s.gamma.retain(|(_, t)| !is_checked(t));
        s.mode = ContextMode::Unchecked;
        s
    }
}

impl<'a> Gen<'a> {
    fn fresh_var(&mut self, stem: &str) -> Var {
        let k = self.fresh;
        self.fresh += 1;
        format!("{stem}{k}")
    }

    fn coin(&mut self, p: f64) -> bool {
        self.rng.gen::<f64>() < p
    }

    fn pick<T: Clone>(&mut self, xs: &[T]) -> Option<T> {
        if xs.is_empty() {
            None
        } else {
            let i = self.rng.gen_range(0..xs.len());
            Some(xs[i].clone())
        }
    }

    /// A random goal type for subterms.
    fn gen_goal(&mut self, depth: u32, mode: ContextMode) -> WordType {
        let mut menu: Vec<WordType> = vec![WordType::Int, WordType::Int, WordType::Int];
        if depth >= 1 {
            if mode == ContextMode::Checked {
                menu.push(WordType::ptr_word(WordType::Int, PtrMode::Checked));
                if self.cfg.arrays {
                    let k = self.rng.gen_range(1..5);
                    menu.push(WordType::ptr_array(false, 0, k, WordType::Int, PtrMode::Checked));
                }
                if self.cfg.nt_arrays {
                    let k = self.rng.gen_range(1..5);
                    menu.push(WordType::ptr_array(true, 0, k, WordType::Int, PtrMode::Checked));
                }
            }
            if self.cfg.tainted_ptrs {
                menu.push(WordType::ptr_word(WordType::Int, PtrMode::Tainted));
                if self.cfg.arrays {
                    let k = self.rng.gen_range(1..5);
                    menu.push(WordType::ptr_array(false, 0, k, WordType::Int, PtrMode::Tainted));
                }
                if self.cfg.nt_arrays {
                    let k = self.rng.gen_range(1..5);
                    menu.push(WordType::ptr_array(true, 0, k, WordType::Int, PtrMode::Tainted));
                }
            }
            if mode == ContextMode::Unchecked {
                menu.push(WordType::ptr_word(WordType::Int, PtrMode::Unchecked));
            }
        }
        self.pick(&menu).unwrap()
    }

    /// Type-directed expression generation by inverting the typing rules;
    /// `None` signals a dead end for retry at the caller.
    fn gen_expr(&mut self, sc: &Scope2, goal: &WordType, depth: u32) -> Option<Expr> {
        for _ in 0..16 {
            if let Some(e) = self.try_once(sc, goal, depth) {
                return Some(e);
            }
        }
        None
    }

    fn try_once(&mut self, sc: &Scope2, goal: &WordType, depth: u32) -> Option<Expr> {
        if depth == 0 {
            return self.gen_leaf(sc, goal);
        }
        let roll = self.rng.gen_range(0..100u32);
        match goal {
            WordType::Int => match roll {
                0..=17 => self.gen_leaf(sc, goal),
                18..=37 => Some(Expr::add(
                    self.gen_expr(sc, &WordType::Int, depth - 1)?,
                    self.gen_expr(sc, &WordType::Int, depth - 1)?,
                )),
                38..=51 => self.gen_deref(sc, goal, depth),
                52..=59 => self.gen_let(sc, goal, depth),
                60..=67 => self.gen_if(sc, goal, depth),
                68..=77 => self.gen_call(sc, goal, depth),
                78..=83 => self.gen_strlen(sc, depth),
                84..=88 => self.gen_assign(sc, goal, depth),
                89..=93 => self.gen_block(sc, goal, depth),
                _ => self.gen_nt_widen_probe(sc, depth),
            },
            WordType::Ptr(..) => match roll {
                0..=24 => self.gen_leaf(sc, goal),
                25..=49 => self.gen_malloc(sc, goal, depth),
                50..=61 => self.gen_let(sc, goal, depth),
                62..=71 => self.gen_cast(sc, goal, depth),
                72..=79 => self.gen_dyncast(sc, goal, depth),
                80..=87 => self.gen_if(sc, goal, depth),
                _ => self.gen_deref(sc, goal, depth),
            },
        }
    }

    fn gen_leaf(&mut self, sc: &Scope2, goal: &WordType) -> Option<Expr> {
        let vars = sc.lookup_of(|t| t == goal);
        if !vars.is_empty() && self.coin(0.55) {
            let (x, _) = self.pick(&vars)?;
            return Some(Expr::var(x));
        }
        match goal {
            WordType::Int => Some(Expr::int(self.rng.gen_range(-4..10))),
            WordType::Ptr(_, xi) => {
                // Plan literals when available, null as the fallback.
                let pool: Vec<(i64, WordType)> = match xi {
                    PtrMode::Checked => self.plan.c_ptrs.clone(),
                    PtrMode::Tainted => self.plan.t_ptrs.clone(),
                    PtrMode::Unchecked => Vec::new(),
                };
                let matching: Vec<i64> = pool
                    .iter()
                    .filter(|(_, t)| t == goal)
                    .map(|(a, _)| *a)
                    .collect();
                if !matching.is_empty() && self.coin(0.8) {
                    let a = self.pick(&matching)?;
                    return Some(Expr::lit(a, goal.clone()));
                }
                if sc.mode == ContextMode::Unchecked || self.coin(0.35) {
                    // Null literal; unchecked mode also allows bare
                    // addresses of non-checked type.
                    if sc.mode == ContextMode::Unchecked
                        && !is_checked(goal)
                        && self.coin(0.3)
                    {
                        return Some(Expr::lit(self.rng.gen_range(1..6), goal.clone()));
                    }
                    return Some(Expr::lit(0, goal.clone()));
                }
                Some(Expr::lit(0, goal.clone()))
            }
        }
    }

    fn usable_mode(&self, sc: &Scope2, xi: PtrMode) -> bool {
        crate::lattice::mode_le(xi, sc.mode.as_ptr_mode())
    }

    fn gen_deref(&mut self, sc: &Scope2, goal: &WordType, depth: u32) -> Option<Expr> {
        // Invent a pointer type whose dereference yields the goal.
        let mut modes = Vec::new();
        if sc.mode == ContextMode::Checked && !is_checked(goal) || sc.mode == ContextMode::Checked
        {
            modes.push(PtrMode::Checked);
        }
        if self.cfg.tainted_ptrs && !is_checked(goal) {
            modes.push(PtrMode::Tainted);
        }
        if sc.mode == ContextMode::Unchecked {
            modes.retain(|m| *m != PtrMode::Checked);
            if !is_checked(goal) {
                modes.push(PtrMode::Unchecked);
            }
        }
        let xi = self.pick(&modes)?;
        // Tainted pointee must stay free of checked components.
        if xi == PtrMode::Tainted && is_checked(goal) {
            return None;
        }
        let arrayish = self.cfg.arrays && self.coin(0.5);
        let ptr_ty = if arrayish {
            let k = self.rng.gen_range(1..5);
            let nt = self.cfg.nt_arrays && self.coin(0.4);
            WordType::ptr(
                ObjectType::Array {
                    nt,
                    bounds: BoundPair::lits(0, k),
                    elem: goal.clone(),
                },
                xi,
            )
        } else {
            WordType::ptr_word(goal.clone(), xi)
        };
        if !crate::lattice::wf_nested_word(sc.mode.as_ptr_mode(), &ptr_ty) {
            return None;
        }
        let ptr = self.gen_expr(sc, &ptr_ty, depth - 1)?;
        if arrayish && self.coin(0.4) {
            let idx = Expr::int(self.rng.gen_range(0..3));
            Some(Expr::deref(Expr::add(ptr, idx)))
        } else {
            Some(Expr::deref(ptr))
        }
    }

    fn gen_malloc(&mut self, sc: &Scope2, goal: &WordType, depth: u32) -> Option<Expr> {
        let WordType::Ptr(omega, xi) = goal else { return None };
        if !self.usable_mode(sc, *xi) {
            return None;
        }
        match omega.as_ref() {
            ObjectType::Fun { .. } => None,
            ObjectType::Word(_) => Some(Expr::Malloc(*xi, omega.as_ref().clone())),
            ObjectType::Array { nt, bounds, elem } => {
                let (Some(0), Some(hi)) = (bounds.lo.as_lit(), bounds.hi.as_lit()) else {
                    return None;
                };
                if hi <= 0 {
                    return None;
                }
                // Sometimes allocate through a dependent let so the bound is
                // a variable.
                if depth >= 2 && self.coin(0.35) {
                    let n = self.fresh_var("n");
                    let body = Expr::Malloc(
                        *xi,
                        ObjectType::Array {
                            nt: *nt,
                            bounds: BoundPair {
                                lo: Bound::Lit(0),
                                hi: Bound::Off(n.clone(), 0),
                            },
                            elem: elem.clone(),
                        },
                    );
                    return Some(Expr::let_(n, Expr::int(hi), body));
                }
                Some(Expr::Malloc(*xi, omega.as_ref().clone()))
            }
        }
    }

    fn gen_let(&mut self, sc: &Scope2, goal: &WordType, depth: u32) -> Option<Expr> {
        let x = self.fresh_var("v");
        let t1 = self.gen_goal(depth - 1, sc.mode);
        let e1 = self.gen_expr(sc, &t1, depth - 1)?;
        let mut sc2 = sc.with(x.clone(), t1.clone());
        if t1 == WordType::Int {
            if let Expr::Lit(v) = &e1 {
                sc2.known_ints.push((x.clone(), v.n));
            }
        }
        let e2 = self.gen_expr(&sc2, goal, depth - 1)?;
        Some(Expr::let_(x, e1, e2))
    }

    fn gen_if(&mut self, sc: &Scope2, goal: &WordType, depth: u32) -> Option<Expr> {
        let g = self.gen_expr(sc, &WordType::Int, depth - 1)?;
        let t = self.gen_expr(sc, goal, depth - 1)?;
        let f = self.gen_expr(sc, goal, depth - 1)?;
        Some(Expr::if_(g, t, f))
    }

    fn gen_strlen(&mut self, sc: &Scope2, depth: u32) -> Option<Expr> {
        if !self.cfg.nt_arrays {
            return None;
        }
        let nts = sc.lookup_of(|t| match t {
            WordType::Ptr(o, xi) => {
                matches!(o.as_ref(), ObjectType::Array { nt: true, .. })
                    && crate::lattice::mode_le(*xi, sc.mode.as_ptr_mode())
            }
            _ => false,
        });
        if !nts.is_empty() && self.coin(0.5) {
            let (x, _) = self.pick(&nts)?;
            return Some(Expr::Strlen(x));
        }
        // Bind an NT pointer first, then measure it.
        if depth == 0 {
            return None;
        }
        let xi = if self.cfg.tainted_ptrs && sc.mode == ContextMode::Unchecked {
            PtrMode::Tainted
        } else if sc.mode == ContextMode::Checked {
            PtrMode::Checked
        } else {
            PtrMode::Tainted
        };
        if !self.cfg.tainted_ptrs && xi == PtrMode::Tainted {
            return None;
        }
        let k = self.rng.gen_range(1..5);
        let ty = WordType::ptr_array(true, 0, k, WordType::Int, xi);
        let src = self.gen_expr(sc, &ty, depth - 1)?;
        let s = self.fresh_var("s");
        Some(Expr::let_(s.clone(), src, Expr::Strlen(s)))
    }

    fn gen_assign(&mut self, sc: &Scope2, goal: &WordType, depth: u32) -> Option<Expr> {
        // assign through a pointer to goal; the result is the written value.
        let mut modes = vec![];
        if sc.mode == ContextMode::Checked {
            modes.push(PtrMode::Checked);
        } else {
            modes.push(PtrMode::Unchecked);
        }
        if self.cfg.tainted_ptrs && !is_checked(goal) {
            modes.push(PtrMode::Tainted);
        }
        let xi = self.pick(&modes)?;
        if is_checked(goal) && xi != PtrMode::Checked {
            return None;
        }
        let arrayish = self.cfg.arrays && self.coin(0.4);
        let ptr_ty = if arrayish {
            let k = self.rng.gen_range(1..4);
            WordType::ptr(
                ObjectType::Array { nt: false, bounds: BoundPair::lits(0, k), elem: goal.clone() },
                xi,
            )
        } else {
            WordType::ptr_word(goal.clone(), xi)
        };
        if !crate::lattice::wf_nested_word(sc.mode.as_ptr_mode(), &ptr_ty) {
            return None;
        }
        let ptr = self.gen_expr(sc, &ptr_ty, depth - 1)?;
        let rhs = self.gen_expr(sc, goal, depth - 1)?;
        if arrayish && self.coin(0.4) {
            let idx = Expr::int(self.rng.gen_range(0..3));
            Some(Expr::assign(Expr::add(ptr, idx), rhs))
        } else {
            Some(Expr::assign(ptr, rhs))
        }
    }

    fn gen_cast(&mut self, sc: &Scope2, goal: &WordType, depth: u32) -> Option<Expr> {
        let WordType::Ptr(omega, xi) = goal else { return None };
        // Generate a source type that subtypes into the goal.
        let src = match omega.as_ref() {
            ObjectType::Word(tau) => {
                if *xi == PtrMode::Unchecked && self.coin(0.5) {
                    // t is a subtype of u at word pointees.
                    WordType::ptr_word(tau.clone(), PtrMode::Tainted)
                } else if self.cfg.arrays && self.coin(0.5) {
                    WordType::ptr(
                        ObjectType::Array {
                            nt: false,
                            bounds: BoundPair::lits(0, self.rng.gen_range(1..4)),
                            elem: tau.clone(),
                        },
                        *xi,
                    )
                } else {
                    goal.clone()
                }
            }
            ObjectType::Array { nt, bounds, elem } => {
                let (lo, hi) = (bounds.lo.as_lit()?, bounds.hi.as_lit()?);
                let wider_hi = hi + self.rng.gen_range(0..3);
                WordType::ptr(
                    ObjectType::Array {
                        nt: *nt || (self.cfg.nt_arrays && self.coin(0.3)),
                        bounds: BoundPair::lits(lo.min(0), wider_hi),
                        elem: elem.clone(),
                    },
                    *xi,
                )
            }
            ObjectType::Fun { .. } => goal.clone(),
        };
        if !crate::lattice::wf_nested_word(sc.mode.as_ptr_mode(), &src) {
            return None;
        }
        let inner = self.gen_expr(sc, &src, depth - 1)?;
        Some(Expr::cast(goal.clone(), inner))
    }

    fn gen_dyncast(&mut self, sc: &Scope2, goal: &WordType, depth: u32) -> Option<Expr> {
        let WordType::Ptr(omega, xi) = goal else { return None };
        let ObjectType::Array { nt, bounds, elem } = omega.as_ref() else { return None };
        let (0, hi) = (bounds.lo.as_lit()?, bounds.hi.as_lit()?) else { return None };
        // Source usually wide enough for the runtime inclusion test.
        let src_hi = if self.coin(0.85) { hi + self.rng.gen_range(0..3) } else { 1.max(hi - 1) };
        let src = WordType::ptr(
            ObjectType::Array {
                nt: *nt,
                bounds: BoundPair::lits(0, src_hi),
                elem: elem.clone(),
            },
            *xi,
        );
        let inner = self.gen_expr(sc, &src, depth - 1)?;
        Some(Expr::dyncast(goal.clone(), inner))
    }

    fn gen_call(&mut self, sc: &Scope2, goal: &WordType, depth: u32) -> Option<Expr> {
        if !self.cfg.fun_ptrs {
            return None;
        }
        let pool: Vec<(i64, ObjectType, PtrMode)> = match sc.mode {
            ContextMode::Checked => {
                let mut v: Vec<_> = self
                    .plan
                    .c_funs
                    .iter()
                    .map(|(a, t)| (*a, t.clone(), PtrMode::Checked))
                    .collect();
                v.extend(
                    self.plan
                        .t_funs
                        .iter()
                        .map(|(a, t)| (*a, t.clone(), PtrMode::Tainted)),
                );
                v
            }
            ContextMode::Unchecked => {
                let mut v: Vec<_> = self
                    .plan
                    .t_funs
                    .iter()
                    .map(|(a, t)| (*a, t.clone(), PtrMode::Tainted))
                    .collect();
                v.extend(
                    self.plan
                        .u_funs
                        .iter()
                        .map(|(a, t)| (*a, t.clone(), PtrMode::Unchecked)),
                );
                v
            }
        };
        let candidates: Vec<_> = pool
            .iter()
            .filter(|(_, t, _)| match t {
                ObjectType::Fun { ret, binders, .. } => {
                    ret == goal && binders.is_empty()
                        || (*ret == WordType::Int && *goal == WordType::Int)
                }
                _ => false,
            })
            .cloned()
            .collect();
        let (addr, fun_ty, xi) = self.pick(&candidates)?;
        let ObjectType::Fun { binders, params, ret } = &fun_ty else { return None };
        // Instantiate binders left to right with bound-shaped arguments.
        let mut map: BTreeMap<Var, Bound> = BTreeMap::new();
        let mut args = Vec::new();
        for (x, p) in params
            .iter()
            .map(|p| (None::<&Var>, p))
            .scan(0usize, |i, (_, p)| {
                let r = if *p == WordType::Int && *i < binders.len() {
                    let b = &binders[*i];
                    *i += 1;
                    (Some(b), p)
                } else {
                    (None, p)
                };
                Some(r)
            })
        {
            let want = subst_word(p, &map);
            if want == WordType::Int {
                // Bound-shaped: a literal or a known integer variable.
                let arg = if !sc.known_ints.is_empty() && self.coin(0.4) {
                    let (v, n) = self.pick(&sc.known_ints)?;
                    map_extend(&mut map, x, Bound::Off(v.clone(), 0), n);
                    Expr::var(v)
                } else {
                    let n = self.rng.gen_range(1..4);
                    map_extend(&mut map, x, Bound::Lit(n), n);
                    Expr::int(n)
                };
                args.push(arg);
            } else {
                args.push(self.gen_expr(sc, &want, depth - 1)?);
            }
        }
        let _ = ret;
        let callee = Expr::lit(addr, WordType::ptr(fun_ty.clone(), xi));
        let call = Expr::call(callee, args);
        // The instantiated return type must match the goal.
        if let ObjectType::Fun { ret, .. } = &fun_ty {
            if subst_word(ret, &map) != *goal {
                return None;
            }
        }
        Some(call)
    }

    fn gen_block(&mut self, sc: &Scope2, goal: &WordType, depth: u32) -> Option<Expr> {
        if is_checked(goal) {
            return None;
        }
        if self.cfg.unchecked_blocks && sc.mode == ContextMode::Checked && self.coin(0.7) {
            return self.gen_unchecked_block(sc, goal, depth);
        }
        // A checked block (possibly nested inside unchecked code).
        let mut sc2 = sc.clone();
        sc2.gamma.retain(|(_, t)| !is_checked(t));
        sc2.mode = ContextMode::Checked;
        let body = self.gen_expr(&sc2, goal, depth - 1)?;
        let fv: Vec<Var> = free_vars(&body).into_iter().collect();
        Some(Expr::Checked(fv, Box::new(body)))
    }

    fn gen_unchecked_block(&mut self, sc: &Scope2, goal: &WordType, depth: u32) -> Option<Expr> {
        if is_checked(goal) {
            return None;
        }
        let sc2 = sc.restricted_to_untainted_free();
        let body = self.gen_expr(&sc2, goal, depth.saturating_sub(1))?;
        let fv: Vec<Var> = free_vars(&body).into_iter().collect();
        Some(Expr::Unchecked(fv, Box::new(body)))
    }

    /// `let s = cast((0,0) NT view, p) in if (*s) ... else ...`: exercises
    /// the NT upper-bound widening rule.
    fn gen_nt_widen_probe(&mut self, sc: &Scope2, depth: u32) -> Option<Expr> {
        if !self.cfg.nt_arrays || sc.mode != ContextMode::Checked {
            return None;
        }
        let k = self.rng.gen_range(1..4);
        let src_ty = WordType::ptr_array(true, 0, k, WordType::Int, PtrMode::Checked);
        let narrow = WordType::ptr_array(true, 0, 0, WordType::Int, PtrMode::Checked);
        let src = self.gen_expr(sc, &src_ty, depth - 1)?;
        let s = self.fresh_var("s");
        let body = Expr::if_(
            Expr::deref(Expr::var(s.clone())),
            Expr::deref(Expr::var(s.clone())),
            Expr::int(0),
        );
        Some(Expr::let_(s, Expr::cast(narrow, src), body))
    }

    fn gen_program(&mut self) -> Program {
        let mut prog = Program::default();
        // Region C heap: ints, a plain array, an NT block, a pointer cell.
        let mut addr = 1i64;
        let n_ints = self.rng.gen_range(1..4);
        for _ in 0..n_ints {
            prog.heap_init.insert(
                (Region::C, addr),
                Value::int(self.rng.gen_range(0..9)),
            );
            self.plan
                .c_ptrs
                .push((addr, WordType::ptr_word(WordType::Int, PtrMode::Checked)));
            addr += 1;
        }
        if self.cfg.arrays {
            let k = self.rng.gen_range(2..5);
            let base = addr;
            for _ in 0..k {
                prog.heap_init
                    .insert((Region::C, addr), Value::int(self.rng.gen_range(1..9)));
                addr += 1;
            }
            self.plan.c_ptrs.push((
                base,
                WordType::ptr_array(false, 0, k, WordType::Int, PtrMode::Checked),
            ));
        }
        if self.cfg.nt_arrays {
            let k = self.rng.gen_range(2..5);
            let base = addr;
            for _ in 0..k {
                prog.heap_init
                    .insert((Region::C, addr), Value::int(self.rng.gen_range(1..9)));
                addr += 1;
            }
            prog.heap_init.insert((Region::C, addr), Value::int(0));
            addr += 1;
            self.plan.c_ptrs.push((
                base,
                WordType::ptr_array(true, 0, k, WordType::Int, PtrMode::Checked),
            ));
        }
        // A cell holding a checked pointer to the first int cell.
        prog.heap_init.insert(
            (Region::C, addr),
            Value::new(1, WordType::ptr_word(WordType::Int, PtrMode::Checked)),
        );
        self.plan.c_ptrs.push((
            addr,
            WordType::ptr_word(
                WordType::ptr_word(WordType::Int, PtrMode::Checked),
                PtrMode::Checked,
            ),
        ));

        // Region U heap: the tainted world.
        if self.cfg.tainted_ptrs {
            let mut ua = 1i64;
            let n = self.rng.gen_range(1..4);
            for _ in 0..n {
                prog.heap_init
                    .insert((Region::U, ua), Value::int(self.rng.gen_range(0..9)));
                self.plan
                    .t_ptrs
                    .push((ua, WordType::ptr_word(WordType::Int, PtrMode::Tainted)));
                ua += 1;
            }
            if self.cfg.arrays {
                let k = self.rng.gen_range(2..5);
                let base = ua;
                for _ in 0..k {
                    prog.heap_init
                        .insert((Region::U, ua), Value::int(self.rng.gen_range(1..9)));
                    ua += 1;
                }
                self.plan.t_ptrs.push((
                    base,
                    WordType::ptr_array(false, 0, k, WordType::Int, PtrMode::Tainted),
                ));
            }
            if self.cfg.nt_arrays {
                let k = self.rng.gen_range(2..5);
                let base = ua;
                for _ in 0..k {
                    prog.heap_init
                        .insert((Region::U, ua), Value::int(self.rng.gen_range(1..9)));
                    ua += 1;
                }
                prog.heap_init.insert((Region::U, ua), Value::int(0));
                self.plan.t_ptrs.push((
                    base,
                    WordType::ptr_array(true, 0, k, WordType::Int, PtrMode::Tainted),
                ));
            }
        }

        // Function stores.
        if self.cfg.fun_ptrs {
            let a = self.rng.gen_range(0..7);
            let f1 = FunDef {
                ret: WordType::Int,
                params: vec![("a".into(), WordType::Int)],
                mode: PtrMode::Checked,
                body: Expr::add(Expr::var("a"), Expr::int(a)),
            };
            self.plan.c_funs.push((1, f1.fun_type()));
            prog.funs.insert((Region::C, 1), f1);
            if self.cfg.nt_arrays {
                // Dependent signature: int n, then an NT array bounded by n.
                let p_ty = WordType::ptr(
                    ObjectType::Array {
                        nt: true,
                        bounds: BoundPair { lo: Bound::Lit(0), hi: Bound::Off("n".into(), 0) },
                        elem: WordType::Int,
                    },
                    PtrMode::Checked,
                );
                let f2 = FunDef {
                    ret: WordType::Int,
                    params: vec![("n".into(), WordType::Int), ("p".into(), p_ty)],
                    mode: PtrMode::Checked,
                    body: Expr::deref(Expr::var("p")),
                };
                self.plan.c_funs.push((2, f2.fun_type()));
                prog.funs.insert((Region::C, 2), f2);
            }
            if self.cfg.tainted_ptrs {
                let b = self.rng.gen_range(0..7);
                let g1 = FunDef {
                    ret: WordType::Int,
                    params: vec![("a".into(), WordType::Int)],
                    mode: PtrMode::Tainted,
                    body: Expr::add(Expr::var("a"), Expr::int(b)),
                };
                self.plan.t_funs.push((1, g1.fun_type()));
                prog.funs.insert((Region::U, 1), g1);
                let g2 = FunDef {
                    ret: WordType::Int,
                    params: vec![(
                        "q".into(),
                        WordType::ptr_word(WordType::Int, PtrMode::Tainted),
                    )],
                    mode: PtrMode::Tainted,
                    body: Expr::deref(Expr::var("q")),
                };
                self.plan.t_funs.push((2, g2.fun_type()));
                prog.funs.insert((Region::U, 2), g2);
            }
            if self.cfg.unchecked_blocks {
                let h1 = FunDef {
                    ret: WordType::Int,
                    params: vec![("a".into(), WordType::Int)],
                    mode: PtrMode::Unchecked,
                    body: Expr::add(Expr::var("a"), Expr::int(3)),
                };
                self.plan.u_funs.push((3, h1.fun_type()));
                prog.funs.insert((Region::U, 3), h1);
            }
        }

        let sc = Scope2 {
            gamma: Vec::new(),
            known_ints: Vec::new(),
            mode: ContextMode::Checked,
        };
        let goal = self.gen_goal(self.cfg.max_depth, ContextMode::Checked);
        let mut main = self
            .gen_expr(&sc, &goal, self.cfg.max_depth)
            .unwrap_or_else(|| Expr::int(1));
        if self.cfg.unchecked_blocks {
            let mut has_unchecked = false;
            main.walk(&mut |e| {
                if matches!(e, Expr::Unchecked(..)) {
                    has_unchecked = true;
                }
            });
            if !has_unchecked {
                let block = self
                    .gen_unchecked_block(&sc, &WordType::Int, self.cfg.max_depth.min(4))
                    .unwrap_or(Expr::Unchecked(vec![], Box::new(Expr::int(0))));
                let x = self.fresh_var("ub");
                main = Expr::let_(x, block, main);
            }
        }
        prog.main = main;
        prog
    }
}

fn map_extend(map: &mut BTreeMap<Var, Bound>, binder: Option<&Var>, b: Bound, _n: i64) {
    if let Some(x) = binder {
        map.insert(x.clone(), b);
    }
}

/// Generates the `index`-th well-typed program for a configuration. Retries
/// internally until validation passes; panics after exhausting the retry
/// budget (a generator bug, not expected in normal operation).
pub fn gen_well_typed(cfg: &GenConfig, index: u64) -> Program {
    for attempt in 0..40u64 {
        let mut g = Gen {
            rng: case_rng(cfg.seed.wrapping_add(attempt.wrapping_mul(0x9e37)), index),
            cfg,
            plan: Plan {
                c_ptrs: Vec::new(),
                t_ptrs: Vec::new(),
                c_funs: Vec::new(),
                t_funs: Vec::new(),
                u_funs: Vec::new(),
            },
            fresh: 0,
        };
        let prog = g.gen_program();
        if validate_program(&prog).is_ok() {
            return prog;
        }
    }
    panic!("generator failed to produce a well-typed program for case {index}");
}

// ---------------------------------------------------------------------------
// Property oracles.

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Inconclusive(String),
    Fail(String),
}

fn trace_prefix(out: &Outcome, n: usize) -> Vec<String> {
    out.steps
        .iter()
        .take(n)
        .map(|s| format!("[{}] {} @ {}", s.mode, s.kind.name(), print_expr(&s.redex)))
        .collect()
}

/// Progress: along a fault-free trace, every non-value configuration steps;
/// null and bounds results are legal outcomes, stuck states are not.
pub fn check_progress(p: &Program, fuel: u64) -> Verdict {
    let out = eval(p, fuel, &FaultPolicy::OFF);
    match out.result {
        Terminal::Stuck => Verdict::Fail(format!(
            "stuck after {} steps at {}",
            out.steps.len(),
            out.final_expr.map(|e| print_expr(&e)).unwrap_or_default()
        )),
        _ => Verdict::Pass,
    }
}

/// Checked preservation: after every checked-mode step the expression
/// re-typechecks to a subtype of its previous type, and previously valid
/// checked pointers stay valid in the new heap.
pub fn check_preservation(p: &Program, fuel: u64) -> Verdict {
    let funs = FunStore::from_program(p);
    let out = eval(p, fuel, &FaultPolicy::OFF);
    let mut configs: Vec<&Config> = out.steps.iter().map(|s| &s.before).collect();
    let final_cfg;
    if matches!(out.result, Terminal::Value(_) | Terminal::OutOfFuel) {
        final_cfg = Config {
            stack: out.final_stack.clone(),
            heap: out.final_heap.clone(),
            expr: out.final_expr.clone().unwrap(),
        };
        configs.push(&final_cfg);
    }
    let mut prev: Option<(WordType, &Config)> = None;
    for (i, cfg) in configs.iter().enumerate() {
        let gamma = cfg.stack.type_env();
        let theta = cfg.stack.pred_env();
        let ty = match typecheck_in(
            &gamma,
            &theta,
            ContextMode::Checked,
            &cfg.expr,
            &cfg.heap,
            &funs,
        ) {
            Ok(t) => t,
            Err(e) => {
                return Verdict::Fail(format!("config {i} no longer typechecks: {e}"));
            }
        };
        if let Some((prev_ty, prev_cfg)) = &prev {
            let step_mode = out.steps[i - 1].mode;
            if step_mode == ContextMode::Checked {
                if !subtype(&theta, &ty, prev_ty) {
                    return Verdict::Fail(format!(
                        "type not preserved at step {}: {} then {}",
                        i - 1,
                        crate::print::print_word(prev_ty),
                        crate::print::print_word(&ty),
                    ));
                }
                if let Some(msg) = heap_consistency_gap(prev_cfg, cfg, &funs) {
                    return Verdict::Fail(format!("heap consistency at step {}: {msg}", i - 1));
                }
            }
        }
        prev = Some((ty, cfg));
    }
    Verdict::Pass
}

/// Checked heap-heap consistency, approximated over the checked pointers
/// reachable from the stack and the checked-region cells.
fn heap_consistency_gap(before: &Config, after: &Config, funs: &FunStore) -> Option<String> {
    let theta = PredEnv::new();
    let mut candidates: Vec<(i64, WordType)> = Vec::new();
    for v in before.stack.0.values() {
        if is_checked(&v.ty) {
            candidates.push((v.n, v.ty.clone()));
        }
    }
    for cell in before.heap.c.values() {
        if is_checked(&cell.ty) {
            candidates.push((cell.n, cell.ty.clone()));
        }
    }
    for (n, ty) in candidates {
        let was = const_valid(&theta, &before.heap, funs, &Scope::new(), ContextMode::Checked, n, &ty);
        if was {
            let still =
                const_valid(&theta, &after.heap, funs, &Scope::new(), ContextMode::Checked, n, &ty);
            if !still {
                return Some(format!(
                    "{n} : {} lost validity",
                    crate::print::print_word(&ty)
                ));
            }
        }
    }
    None
}

/// Unchecked preservation: unchecked-mode steps leave the checked heap
/// region untouched.
pub fn check_unchecked_preservation(p: &Program, fuel: u64, policy: &FaultPolicy) -> Verdict {
    let out = eval(p, fuel, policy);
    for (i, st) in out.steps.iter().enumerate() {
        if st.mode != ContextMode::Unchecked {
            continue;
        }
        let after_heap = out
            .steps
            .get(i + 1)
            .map(|s| &s.before.heap)
            .unwrap_or(&out.final_heap);
        if after_heap.c != st.before.heap.c {
            return Verdict::Fail(format!(
                "unchecked step {i} ({}) modified the checked region",
                st.kind.name()
            ));
        }
    }
    Verdict::Pass
}

/// Non-exposure: no unchecked-mode redex observes a checked-typed value,
/// either through a stack variable or a literal. Interiors of nested
/// checked blocks run at checked mode and are exempt.
pub fn check_non_exposure(p: &Program, fuel: u64, policy: &FaultPolicy) -> Verdict {
    let out = eval(p, fuel, policy);
    for (i, st) in out.steps.iter().enumerate() {
        if st.mode != ContextMode::Unchecked {
            continue;
        }
        if matches!(st.redex, Expr::Checked(..) | Expr::Unchecked(..)) {
            continue;
        }
        if let Some(msg) = exposure_in(&st.redex, &st.before) {
            return Verdict::Fail(format!("step {i} ({}): {msg}", st.kind.name()));
        }
    }
    Verdict::Pass
}

fn exposure_in(redex: &Expr, cfg: &Config) -> Option<String> {
    fn scan(e: &Expr, bound: &mut Vec<Var>, cfg: &Config) -> Option<String> {
        match e {
            // Nested checked blocks evaluate at checked mode.
            Expr::Checked(..) => None,
            Expr::Lit(v) => {
                if is_checked(&v.ty) {
                    Some(format!("checked literal {} observed", print_expr(e)))
                } else {
                    None
                }
            }
            Expr::Var(x) | Expr::Strlen(x) => {
                if !bound.contains(x) {
                    if let Some(v) = cfg.stack.get(x) {
                        if is_checked(&v.ty) {
                            return Some(format!("variable {x} holds a checked pointer"));
                        }
                    }
                }
                None
            }
            Expr::Let(x, a, b) => {
                if let Some(m) = scan(a, bound, cfg) {
                    return Some(m);
                }
                bound.push(x.clone());
                let r = scan(b, bound, cfg);
                bound.pop();
                r
            }
            Expr::Ret(x, saved, b) => {
                if let Some(v) = saved {
                    if is_checked(&v.ty) {
                        return Some(format!("saved binding of {x} is checked"));
                    }
                }
                bound.push(x.clone());
                let r = scan(b, bound, cfg);
                bound.pop();
                r
            }
            Expr::Add(a, b) | Expr::Assign(a, b) => {
                scan(a, bound, cfg).or_else(|| scan(b, bound, cfg))
            }
            Expr::Cast(_, a) | Expr::DynCast(_, a) | Expr::Deref(a) => scan(a, bound, cfg),
            Expr::If(g, t, f) => scan(g, bound, cfg)
                .or_else(|| scan(t, bound, cfg))
                .or_else(|| scan(f, bound, cfg)),
            Expr::Call(c, args) => scan(c, bound, cfg)
                .or_else(|| args.iter().find_map(|a| scan(a, bound, cfg))),
            Expr::Unchecked(_, b) => scan(b, bound, cfg),
            Expr::Malloc(..) => None,
        }
    }
    scan(redex, &mut Vec::new(), cfg)
}

/// Non-crashing: under fault injection at any rate the outcome is a value,
/// a failed check, or fuel exhaustion — never stuck.
pub fn check_non_crashing(p: &Program, fuel: u64, policy: &FaultPolicy) -> Verdict {
    let out = eval(p, fuel, policy);
    match out.result {
        Terminal::Stuck => Verdict::Fail(format!(
            "stuck under fault injection after {} steps",
            out.steps.len()
        )),
        _ => Verdict::Pass,
    }
}

// ---------------------------------------------------------------------------
// Simulation.

/// Canonical form for target-state comparison: temporaries are renamed by
/// first occurrence, and the stack is restricted to the live variables of
/// the expression.
fn normalize_cconfig(c: &CConfig) -> CConfig {
    let mut order: Vec<Var> = Vec::new();
    collect_names(&c.expr, &mut order);
    let mut ren: BTreeMap<Var, Var> = BTreeMap::new();
    let mut k = 0usize;
    for name in &order {
        if name.starts_with("tmp#") && !ren.contains_key(name) {
            ren.insert(name.clone(), format!("tmp!{k}"));
            k += 1;
        }
    }
    let expr = rename_cexpr(&c.expr, &ren);
    let live = cexpr_free_vars(&expr);
    let mut stack = CStack::new();
    for (x, v) in &c.stack {
        let key = ren.get(x).cloned().unwrap_or_else(|| x.clone());
        if live.contains(&key) {
            stack.insert(key, *v);
        }
    }
    CConfig { stack, heap: c.heap.clone(), expr }
}

fn collect_names(e: &CExpr, out: &mut Vec<crate::syntax::Var>) {
    use CExpr::*;
    match e {
        Lit(_) => {}
        Var(x) => out.push(x.clone()),
        Add(a, b) | Sub(a, b) | Seq(a, b) => {
            collect_names(a, out);
            collect_names(b, out);
        }
        Let(x, a, b) | Bind(x, a, b) => {
            out.push(x.clone());
            collect_names(a, out);
            collect_names(b, out);
        }
        Ret(x, _, b) => {
            out.push(x.clone());
            collect_names(b, out);
        }
        If(g, t, f) => {
            collect_names(g, out);
            collect_names(t, out);
            collect_names(f, out);
        }
        Deref(_, a) | ModeScope(_, a) => collect_names(a, out),
        Assign(_, a, b) => {
            collect_names(a, out);
            collect_names(b, out);
        }
        Malloc(_, shape) => {
            if let CShape::Array { lo, hi, .. } = shape {
                collect_names(lo, out);
                collect_names(hi, out);
            }
        }
        Call(_, f, args) => {
            collect_names(f, out);
            for a in args {
                collect_names(a, out);
            }
        }
        AssertNN { ptr, .. } => collect_names(ptr, out),
        AssertBounds { lo, hi, idx, .. } => {
            collect_names(lo, out);
            collect_names(hi, out);
            collect_names(idx, out);
        }
        Verify { ptr, bounds, .. } => {
            collect_names(ptr, out);
            if let Some((_, lo, hi, idx)) = bounds {
                collect_names(lo, out);
                collect_names(hi, out);
                collect_names(idx, out);
            }
        }
        VerifyFun { callee, .. } => collect_names(callee, out),
        DynCheck { ptr, tlo, thi, slo, shi, .. } => {
            collect_names(ptr, out);
            collect_names(tlo, out);
            collect_names(thi, out);
            collect_names(slo, out);
            collect_names(shi, out);
        }
        Strlen { ptr, hi_shadow, .. } => {
            collect_names(ptr, out);
            if let Some(x) = hi_shadow {
                out.push(x.clone());
            }
        }
        NtWiden { hi_shadow } => out.push(hi_shadow.clone()),
    }
}

fn rename_cexpr(e: &CExpr, ren: &BTreeMap<crate::syntax::Var, crate::syntax::Var>) -> CExpr {
    let r = |x: &String| ren.get(x).cloned().unwrap_or_else(|| x.clone());
    use CExpr::*;
    match e {
        Lit(n) => Lit(*n),
        Var(x) => Var(r(x)),
        Add(a, b) => Add(Box::new(rename_cexpr(a, ren)), Box::new(rename_cexpr(b, ren))),
        Sub(a, b) => Sub(Box::new(rename_cexpr(a, ren)), Box::new(rename_cexpr(b, ren))),
        Seq(a, b) => Seq(Box::new(rename_cexpr(a, ren)), Box::new(rename_cexpr(b, ren))),
        Let(x, a, b) => Let(
            r(x),
            Box::new(rename_cexpr(a, ren)),
            Box::new(rename_cexpr(b, ren)),
        ),
        Bind(x, a, b) => Bind(
            r(x),
            Box::new(rename_cexpr(a, ren)),
            Box::new(rename_cexpr(b, ren)),
        ),
        Ret(x, s, b) => Ret(r(x), *s, Box::new(rename_cexpr(b, ren))),
        If(g, t, f) => If(
            Box::new(rename_cexpr(g, ren)),
            Box::new(rename_cexpr(t, ren)),
            Box::new(rename_cexpr(f, ren)),
        ),
        Deref(reg, a) => Deref(*reg, Box::new(rename_cexpr(a, ren))),
        ModeScope(reg, a) => ModeScope(*reg, Box::new(rename_cexpr(a, ren))),
        Assign(reg, a, b) => Assign(
            *reg,
            Box::new(rename_cexpr(a, ren)),
            Box::new(rename_cexpr(b, ren)),
        ),
        Malloc(reg, shape) => Malloc(
            *reg,
            match shape {
                CShape::Word => CShape::Word,
                CShape::Array { nt, lo, hi } => CShape::Array {
                    nt: *nt,
                    lo: Box::new(rename_cexpr(lo, ren)),
                    hi: Box::new(rename_cexpr(hi, ren)),
                },
            },
        ),
        Call(reg, f, args) => Call(
            *reg,
            Box::new(rename_cexpr(f, ren)),
            args.iter().map(|a| rename_cexpr(a, ren)).collect(),
        ),
        AssertNN { array, ptr } => {
            AssertNN { array: *array, ptr: Box::new(rename_cexpr(ptr, ren)) }
        }
        AssertBounds { nt, lo, hi, idx } => AssertBounds {
            nt: *nt,
            lo: Box::new(rename_cexpr(lo, ren)),
            hi: Box::new(rename_cexpr(hi, ren)),
            idx: Box::new(rename_cexpr(idx, ren)),
        },
        Verify { region, ptr, bounds, elem } => Verify {
            region: *region,
            ptr: Box::new(rename_cexpr(ptr, ren)),
            bounds: bounds.as_ref().map(|(nt, lo, hi, idx)| {
                (
                    *nt,
                    Box::new(rename_cexpr(lo, ren)),
                    Box::new(rename_cexpr(hi, ren)),
                    Box::new(rename_cexpr(idx, ren)),
                )
            }),
            elem: elem.clone(),
        },
        VerifyFun { region, flag, arity, callee } => VerifyFun {
            region: *region,
            flag: *flag,
            arity: *arity,
            callee: Box::new(rename_cexpr(callee, ren)),
        },
        DynCheck { ptr, t_nt, tlo, thi, s_nt, slo, shi } => DynCheck {
            ptr: Box::new(rename_cexpr(ptr, ren)),
            t_nt: *t_nt,
            tlo: Box::new(rename_cexpr(tlo, ren)),
            thi: Box::new(rename_cexpr(thi, ren)),
            s_nt: *s_nt,
            slo: Box::new(rename_cexpr(slo, ren)),
            shi: Box::new(rename_cexpr(shi, ren)),
        },
        Strlen { region, ptr, hi_shadow } => Strlen {
            region: *region,
            ptr: Box::new(rename_cexpr(ptr, ren)),
            hi_shadow: hi_shadow.as_ref().map(r),
        },
        NtWiden { hi_shadow } => NtWiden { hi_shadow: r(hi_shadow) },
    }
}

fn cexpr_free_vars(e: &CExpr) -> BTreeSet<crate::syntax::Var> {
    fn go(e: &CExpr, bound: &mut Vec<String>, acc: &mut BTreeSet<String>) {
        use CExpr::*;
        let hit = |x: &String, bound: &[String], acc: &mut BTreeSet<String>| {
            if !bound.contains(x) {
                acc.insert(x.clone());
            }
        };
        match e {
            Lit(_) => {}
            Var(x) => hit(x, bound, acc),
            Add(a, b) | Sub(a, b) | Seq(a, b) => {
                go(a, bound, acc);
                go(b, bound, acc);
            }
            Let(x, a, b) | Bind(x, a, b) => {
                go(a, bound, acc);
                bound.push(x.clone());
                go(b, bound, acc);
                bound.pop();
            }
            Ret(x, _, b) => {
                bound.push(x.clone());
                go(b, bound, acc);
                bound.pop();
            }
            If(g, t, f) => {
                go(g, bound, acc);
                go(t, bound, acc);
                go(f, bound, acc);
            }
            Deref(_, a) | ModeScope(_, a) => go(a, bound, acc),
            Assign(_, a, b) => {
                go(a, bound, acc);
                go(b, bound, acc);
            }
            Malloc(_, shape) => {
                if let CShape::Array { lo, hi, .. } = shape {
                    go(lo, bound, acc);
                    go(hi, bound, acc);
                }
            }
            Call(_, f, args) => {
                go(f, bound, acc);
                for a in args {
                    go(a, bound, acc);
                }
            }
            AssertNN { ptr, .. } => go(ptr, bound, acc),
            AssertBounds { lo, hi, idx, .. } => {
                go(lo, bound, acc);
                go(hi, bound, acc);
                go(idx, bound, acc);
            }
            Verify { ptr, bounds, .. } => {
                go(ptr, bound, acc);
                if let Some((_, lo, hi, idx)) = bounds {
                    go(lo, bound, acc);
                    go(hi, bound, acc);
                    go(idx, bound, acc);
                }
            }
            VerifyFun { callee, .. } => go(callee, bound, acc),
            DynCheck { ptr, tlo, thi, slo, shi, .. } => {
                go(ptr, bound, acc);
                go(tlo, bound, acc);
                go(thi, bound, acc);
                go(slo, bound, acc);
                go(shi, bound, acc);
            }
            Strlen { ptr, hi_shadow, .. } => {
                go(ptr, bound, acc);
                if let Some(x) = hi_shadow {
                    hit(x, bound, acc);
                }
            }
            NtWiden { hi_shadow } => hit(hi_shadow, bound, acc),
        }
    }
    let mut acc = BTreeSet::new();
    go(e, &mut Vec::new(), &mut acc);
    acc
}

/// Adjacent-step simulation: compile and erase both sides of every source
/// step and search for a common target state within the join budget. For a
/// failing source step, the compiled predecessor must reach the same
/// failure with matching erased state.
pub fn check_simulation(p: &Program, fuel: u64, join_budget: u64) -> Verdict {
    let target = match compile_program(p) {
        Ok(t) => t,
        Err(CompileError::Type(e)) => return Verdict::Fail(format!("compile: {e}")),
        Err(CompileError::Internal(e)) => return Verdict::Fail(format!("compile: {e}")),
    };
    let funs = FunStore::from_program(p);
    let out = eval(p, fuel, &FaultPolicy::OFF);
    let mut budget_exceeded = 0usize;
    for i in 0..out.steps.len() {
        let before = &out.steps[i].before;
        let compiled_before = match compile_config(before, &before.heap, &funs) {
            Ok(c) => c,
            Err(e) => return Verdict::Fail(format!("compile config {i}: {e}")),
        };
        let is_last = i + 1 == out.steps.len();
        let failure = if is_last {
            match out.result {
                Terminal::Null => Some(CTerminal::Null),
                Terminal::Bounds => Some(CTerminal::Bounds),
                _ => None,
            }
        } else {
            None
        };
        if let Some(expected) = failure {
            let run = run_corec(compiled_before, &target.funs, join_budget);
            if run.result == CTerminal::OutOfFuel {
                budget_exceeded += 1;
                continue;
            }
            if run.result != expected {
                return Verdict::Fail(format!(
                    "step {i}: source failed with {:?}, target {:?}",
                    out.result, run.result
                ));
            }
            // Erased final state must match.
            let want_stack = erase_stack(&out.final_stack);
            let want_heap = erase_heap(&out.final_heap);
            let got: CStack = run
                .final_stack
                .iter()
                .filter(|(k, _)| want_stack.contains_key(*k))
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            if got != want_stack || run.final_heap != want_heap {
                return Verdict::Fail(format!("step {i}: failure state differs"));
            }
            continue;
        }
        let after = if is_last {
            Config {
                stack: out.final_stack.clone(),
                heap: out.final_heap.clone(),
                expr: out.final_expr.clone().unwrap(),
            }
        } else {
            out.steps[i + 1].before.clone()
        };
        let compiled_after = match compile_config(&after, &after.heap, &funs) {
            Ok(c) => c,
            Err(e) => return Verdict::Fail(format!("compile config {}: {e}", i + 1)),
        };
        match joinable(compiled_before, compiled_after, &target.funs, join_budget) {
            Join::Met => {}
            Join::BudgetExceeded => budget_exceeded += 1,
            Join::Mismatch => {
                return Verdict::Fail(format!(
                    "step {i} ({}): orbits never meet",
                    out.steps[i].kind.name()
                ));
            }
        }
    }
    if budget_exceeded > 0 {
        Verdict::Inconclusive(format!("{budget_exceeded} join searches exceeded the budget"))
    } else {
        Verdict::Pass
    }
}

enum Join {
    Met,
    BudgetExceeded,
    Mismatch,
}

/// The target machine is deterministic, so the join relation is decided by
/// stepping both configurations forward and intersecting the two orbits on
/// normalized states.
fn joinable(
    a: CConfig,
    b: CConfig,
    funs: &BTreeMap<(Region, i64), CFunDef>,
    budget: u64,
) -> Join {
    let ra = run_corec(a, funs, budget);
    let rb = run_corec(b, funs, budget);
    let seen: BTreeSet<CConfig> = ra.states.iter().map(normalize_cconfig).collect();
    for st in &rb.states {
        if seen.contains(&normalize_cconfig(st)) {
            return Join::Met;
        }
    }
    let a_done = ra.result != CTerminal::OutOfFuel;
    let b_done = rb.result != CTerminal::OutOfFuel;
    if a_done && b_done {
        // Reaching the same terminal failure in the same state also counts
        // as meeting; temporaries and shadows are compilation artifacts
        // outside the erased source stack and are ignored there.
        if matches!(ra.result, CTerminal::Null | CTerminal::Bounds)
            && ra.result == rb.result
            && ra.final_heap == rb.final_heap
            && source_entries(&ra.final_stack) == source_entries(&rb.final_stack)
        {
            return Join::Met;
        }
        Join::Mismatch
    } else {
        Join::BudgetExceeded
    }
}

fn source_entries(stack: &CStack) -> CStack {
    stack
        .iter()
        .filter(|(k, _)| !k.contains('#'))
        .map(|(k, v)| (k.clone(), *v))
        .collect()
}

// ---------------------------------------------------------------------------
// Suite driver.

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Property {
    Progress,
    Preservation,
    UncheckedPreservation,
    NonExposure,
    NonCrashing,
    Simulation,
}

impl Property {
    pub const ALL: [Property; 6] = [
        Property::Progress,
        Property::Preservation,
        Property::UncheckedPreservation,
        Property::NonExposure,
        Property::NonCrashing,
        Property::Simulation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Property::Progress => "progress",
            Property::Preservation => "preservation",
            Property::UncheckedPreservation => "unchecked-preservation",
            Property::NonExposure => "non-exposure",
            Property::NonCrashing => "non-crashing",
            Property::Simulation => "simulation",
        }
    }

    pub fn parse(s: &str) -> Option<Vec<Property>> {
        match s {
            "all" => Some(Property::ALL.to_vec()),
            "progress" => Some(vec![Property::Progress]),
            "preservation" => Some(vec![Property::Preservation]),
            "uncheckedpres" => Some(vec![Property::UncheckedPreservation]),
            "nonexposure" => Some(vec![Property::NonExposure]),
            "noncrash" => Some(vec![Property::NonCrashing]),
            "simulation" => Some(vec![Property::Simulation]),
            _ => None,
        }
    }

    /// The crash-prone suites generate unchecked blocks; the others never
    /// do.
    pub fn wants_unchecked(&self) -> bool {
        matches!(
            self,
            Property::UncheckedPreservation | Property::NonExposure | Property::NonCrashing
        )
    }
}

pub struct SuiteParams {
    pub fuel: u64,
    pub join_budget: u64,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams { fuel: 128, join_budget: 256 }
    }
}

/// Runs one property over `cfg.count` generated programs. Cases run in
/// parallel; results merge deterministically by case index.
pub fn run_property(prop: Property, cfg: &GenConfig, params: &SuiteParams) -> CheckReport {
    let started = Instant::now();
    let mut cfg = *cfg;
    cfg.unchecked_blocks = prop.wants_unchecked();
    let results: Vec<(u64, Verdict, Option<String>)> = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let program = gen_well_typed(&cfg, i);
            let policy = FaultPolicy::new(cfg.fault_rate, splitmix(cfg.seed ^ i));
            let verdict = match prop {
                Property::Progress => check_progress(&program, params.fuel),
                Property::Preservation => check_preservation(&program, params.fuel),
                Property::UncheckedPreservation => {
                    check_unchecked_preservation(&program, params.fuel, &policy)
                }
                Property::NonExposure => check_non_exposure(&program, params.fuel, &policy),
                Property::NonCrashing => check_non_crashing(&program, params.fuel, &policy),
                Property::Simulation => {
                    check_simulation(&program, params.fuel, params.join_budget)
                }
            };
            let text = match &verdict {
                Verdict::Pass => None,
                _ => Some(print_program(&program)),
            };
            (i, verdict, text)
        })
        .collect();
    let mut failures = Vec::new();
    let mut inconclusive = Vec::new();
    for (i, verdict, text) in results {
        match verdict {
            Verdict::Pass => {}
            Verdict::Inconclusive(_) => inconclusive.push(i),
            Verdict::Fail(detail) => {
                let program = text.unwrap_or_default();
                let replay = gen_well_typed(&cfg, i);
                let out = eval(&replay, params.fuel, &FaultPolicy::new(cfg.fault_rate, splitmix(cfg.seed ^ i)));
                failures.push(FailureRecord {
                    seed: cfg.seed,
                    index: i,
                    program,
                    trace_prefix: trace_prefix(&out, 12),
                    detail,
                });
            }
        }
    }
    CheckReport {
        property: prop.name().to_string(),
        cases: cfg.count,
        failures,
        inconclusive,
        wall_ms: started.elapsed().as_millis(),
    }
}
