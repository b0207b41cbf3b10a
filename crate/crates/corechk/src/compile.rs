//! Type-directed compilation to the untyped target: A-normal form
//! conversion, shadow bound variables, dynamic check insertion, and
//! mode-meet lowering of memory operations.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corec::*;
use crate::lattice::{mode_meet, PredEnv, Predicate};
use crate::machine::Config;
use crate::store::{FunStore, Heap};
use crate::syntax::*;
use crate::typecheck::{
    as_bound_expr, typecheck_trusting, validate_program, TypeEnv, TypeError,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompileError {
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("internal compilation error: {0}")]
    Internal(String),
}

/// Deref/assign lowering table over context and pointer modes: the two
/// cross-region cells are type rejections, every other cell lowers to an
/// operation on the heap region of the mode meet.
pub fn lower_deref_region(ctx: PtrMode, ptr: PtrMode) -> Option<Region> {
    match (ctx, ptr) {
        (PtrMode::Checked, PtrMode::Unchecked) | (PtrMode::Unchecked, PtrMode::Checked) => None,
        _ => Some(heap_region(mode_meet(ctx, ptr))),
    }
}

pub fn shadow_lo(x: &str) -> Var {
    format!("{x}#lo")
}

pub fn shadow_hi(x: &str) -> Var {
    format!("{x}#hi")
}

/// Shadow-variable environment ρ: which variables carry bound shadows, with
/// their pointer mode. Shadow names derive from the variable name, so only
/// membership and mode are tracked.
#[derive(Clone, Debug, Default)]
pub struct ShadowEnv(pub BTreeMap<Var, PtrMode>);

impl ShadowEnv {
    pub fn has(&self, x: &str) -> bool {
        self.0.contains_key(x)
    }

    pub fn with(&self, x: impl Into<Var>, mode: PtrMode) -> ShadowEnv {
        let mut m = self.0.clone();
        m.insert(x.into(), mode);
        ShadowEnv(m)
    }
}

#[derive(Clone, Debug)]
pub struct CompileOutput {
    pub target: CExpr,
    pub ty: WordType,
}

// ---------------------------------------------------------------------------
// A-normal form.

struct Anf {
    counter: u64,
}

impl Anf {
    fn fresh(&mut self) -> Var {
        let k = self.counter;
        self.counter += 1;
        format!("tmp#{k}")
    }

    /// Statement position: operand bindings stay local to this subtree.
    fn tail(&mut self, e: &Expr) -> Expr {
        let mut binds = Vec::new();
        let small = self.small(e, &mut binds);
        wrap_binds(binds, small)
    }

    /// A "small" expression: every operand is a variable or literal, with
    /// freshly bound temporaries pushed onto `binds`.
    fn small(&mut self, e: &Expr, binds: &mut Vec<(Var, Expr)>) -> Expr {
        match e {
            Expr::Lit(_) | Expr::Var(_) | Expr::Strlen(_) | Expr::Malloc(..) => e.clone(),
            Expr::Add(a, b) => Expr::add(self.atom(a, binds), self.atom(b, binds)),
            Expr::Cast(t, inner) => Expr::cast(t.clone(), self.atom(inner, binds)),
            Expr::DynCast(t, inner) => Expr::dyncast(t.clone(), self.atom(inner, binds)),
            Expr::Deref(inner) => Expr::deref(self.accessor_addr(inner, binds)),
            Expr::Assign(l, r) => {
                let l2 = self.accessor_addr(l, binds);
                let r2 = self.atom(r, binds);
                Expr::assign(l2, r2)
            }
            Expr::Let(x, e1, e2) => {
                let r1 = self.small(e1, binds);
                Expr::let_(x.clone(), r1, self.tail(e2))
            }
            Expr::Ret(x, saved, body) => {
                Expr::Ret(x.clone(), saved.clone(), Box::new(self.tail(body)))
            }
            Expr::If(g, t, f) => {
                // Guards evaluate in place; the widening guard shape `*x`
                // must survive unchanged.
                let g2 = match g.as_ref() {
                    Expr::Deref(inner) if matches!(inner.as_ref(), Expr::Var(_)) => {
                        g.as_ref().clone()
                    }
                    _ => self.tail(g),
                };
                Expr::if_(g2, self.tail(t), self.tail(f))
            }
            Expr::Call(callee, args) => {
                let c2 = self.atom(callee, binds);
                let a2 = args.iter().map(|a| self.atom(a, binds)).collect();
                Expr::Call(Box::new(c2), a2)
            }
            Expr::Unchecked(xs, body) => {
                Expr::Unchecked(xs.clone(), Box::new(self.tail(body)))
            }
            Expr::Checked(xs, body) => Expr::Checked(xs.clone(), Box::new(self.tail(body))),
        }
    }

    /// Dereference/assignment targets keep pointer arithmetic in place with
    /// atomic operands.
    fn accessor_addr(&mut self, e: &Expr, binds: &mut Vec<(Var, Expr)>) -> Expr {
        match e {
            Expr::Add(a, b) => Expr::add(self.atom(a, binds), self.atom(b, binds)),
            _ => self.atom(e, binds),
        }
    }

    fn atom(&mut self, e: &Expr, binds: &mut Vec<(Var, Expr)>) -> Expr {
        match e {
            Expr::Lit(_) | Expr::Var(_) => e.clone(),
            _ => {
                let small = self.small(e, binds);
                let t = self.fresh();
                binds.push((t.clone(), small));
                Expr::Var(t)
            }
        }
    }
}

fn wrap_binds(binds: Vec<(Var, Expr)>, body: Expr) -> Expr {
    binds
        .into_iter()
        .rev()
        .fold(body, |acc, (x, rhs)| Expr::let_(x, rhs, acc))
}

/// Converts an expression to A-normal form: every compound operand is
/// bound to a fresh temporary. Accessor targets keep the `*(p+i)` shape and
/// `if` guards keep the `*x` shape.
pub fn anf(e: &Expr) -> Expr {
    Anf { counter: 0 }.tail(e)
}

// ---------------------------------------------------------------------------
// Lowering.

struct Lower {
    /// Lowering context mode; tainted marks the body of a tainted function,
    /// which executes at its caller's mode.
    ctx: PtrMode,
    tmp: std::cell::Cell<u64>,
}

#[derive(Clone)]
struct Env {
    gamma: TypeEnv,
    theta: PredEnv,
    rho: ShadowEnv,
}

enum BindItem {
    Named(Var, CExpr),
    Check(CExpr),
}

type Binds = Vec<BindItem>;

impl Lower {
    fn query_mode(&self) -> ContextMode {
        match self.ctx {
            PtrMode::Unchecked => ContextMode::Unchecked,
            _ => ContextMode::Checked,
        }
    }

    fn at(&self, ctx: PtrMode) -> Lower {
        Lower { ctx, tmp: self.tmp.clone() }
    }

    fn fresh_tmp(&self) -> Var {
        let k = self.tmp.get();
        self.tmp.set(k + 1);
        format!("tmp#{k}")
    }

    fn type_of(&self, env: &Env, e: &Expr) -> Result<WordType, CompileError> {
        Ok(typecheck_trusting(&env.gamma, &env.theta, self.query_mode(), e)?)
    }

    /// Statement root: operand temporaries introduced below stay local.
    fn lower_tail(&self, env: &Env, e: &Expr) -> Result<(CExpr, WordType), CompileError> {
        let mut binds = Binds::new();
        let (ce, ty) = self.lower_small(env, e, &mut binds)?;
        Ok((wrap_cbinds(binds, ce), ty))
    }

    /// Operand position: the result is a literal, a variable, or one of
    /// those behind erased casts; anything else is bound to a fresh
    /// unscoped temporary. The A-normal-form conversion happens here.
    fn lower_atom(
        &self,
        env: &Env,
        e: &Expr,
        binds: &mut Binds,
    ) -> Result<(CExpr, WordType), CompileError> {
        match e {
            Expr::Lit(v) => Ok((CExpr::Lit(v.n), v.ty.clone())),
            Expr::Var(_) => {
                let ty = self.type_of(env, e)?;
                let Expr::Var(x) = e else { unreachable!() };
                Ok((CExpr::var(x.clone()), ty))
            }
            // Static casts are free: the operand keeps its erased value and
            // takes the target type.
            Expr::Cast(t, inner) => {
                let (a, _) = self.lower_atom(env, inner, binds)?;
                Ok((a, t.clone()))
            }
            _ => {
                let (ce, ty) = self.lower_small(env, e, binds)?;
                let t = self.fresh_tmp();
                binds.push(BindItem::Named(t.clone(), ce));
                Ok((CExpr::var(t), ty))
            }
        }
    }

    fn lower_small(
        &self,
        env: &Env,
        e: &Expr,
        binds: &mut Binds,
    ) -> Result<(CExpr, WordType), CompileError> {
        match e {
            Expr::Lit(_) | Expr::Var(_) | Expr::Cast(..) => self.lower_atom(env, e, binds),
            Expr::Add(a, b) => {
                let (ea, ta) = self.lower_atom(env, a, binds)?;
                let (eb, _) = self.lower_atom(env, b, binds)?;
                if ta != WordType::Int {
                    return Err(CompileError::Internal(
                        "plain addition on a pointer outside an accessor".into(),
                    ));
                }
                Ok((CExpr::Add(Box::new(ea), Box::new(eb)), WordType::Int))
            }
            Expr::DynCast(t, inner) => {
                let (ei, src_ty) = self.lower_atom(env, inner, binds)?;
                let target = self.type_of(env, e)?;
                let checked = self.dyncast_check(env, t, inner, &src_ty, ei)?;
                Ok((checked, target))
            }
            Expr::Deref(inner) => self.lower_deref(env, inner, binds),
            Expr::Assign(l, r) => self.lower_assign(env, l, r, binds),
            Expr::Let(x, e1, e2) => self.lower_let(env, x, e1, e2, binds),
            Expr::Ret(x, saved, body) => {
                let (eb, ty) = self.lower_tail(env, body)?;
                let result = match (&ty.free_vars().contains(x), env.theta.get(x)) {
                    (true, Some(Predicate::Eq(b))) => {
                        let mut map = BTreeMap::new();
                        map.insert(x.clone(), b.clone());
                        subst_word(&ty, &map)
                    }
                    _ => ty,
                };
                Ok((
                    CExpr::Ret(x.clone(), saved.as_ref().map(|v| v.n), Box::new(eb)),
                    result,
                ))
            }
            Expr::If(g, t, f) => {
                let widen = self.widen_hook(env, g);
                let (eg, _) = self.lower_tail(env, g)?;
                let (et, _) = self.lower_tail(env, t)?;
                let (ef, _) = self.lower_tail(env, f)?;
                let ty = self.type_of(env, e)?;
                let then_branch = match widen {
                    Some(hi) => CExpr::seq(CExpr::NtWiden { hi_shadow: hi }, et),
                    None => et,
                };
                Ok((
                    CExpr::If(Box::new(eg), Box::new(then_branch), Box::new(ef)),
                    ty,
                ))
            }
            Expr::Call(callee, args) => self.lower_call(env, e, callee, args, binds),
            Expr::Unchecked(_, body) => {
                let inner = self.at(PtrMode::Unchecked);
                let mut env2 = env.clone();
                env2.theta = PredEnv::new();
                let (eb, ty) = inner.lower_tail(&env2, body)?;
                Ok((CExpr::ModeScope(Region::U, Box::new(eb)), ty))
            }
            Expr::Checked(_, body) => {
                let inner = self.at(PtrMode::Checked);
                let (eb, ty) = inner.lower_tail(env, body)?;
                Ok((CExpr::ModeScope(Region::C, Box::new(eb)), ty))
            }
            Expr::Strlen(x) => {
                let ty = env.gamma.get(x).cloned().ok_or_else(|| {
                    CompileError::Internal(format!("strlen of unbound {x}"))
                })?;
                let WordType::Ptr(_, xi) = &ty else {
                    return Err(CompileError::Internal("strlen of non-pointer".into()));
                };
                let region = heap_region(*xi);
                let hi_shadow = env.rho.has(x).then(|| shadow_hi(x));
                Ok((
                    CExpr::Strlen { region, ptr: Box::new(CExpr::var(x.clone())), hi_shadow },
                    WordType::Int,
                ))
            }
            Expr::Malloc(xi, omega) => {
                let region = heap_region(*xi);
                let shape = match omega {
                    ObjectType::Word(_) => CShape::Word,
                    ObjectType::Array { nt, bounds, .. } => CShape::Array {
                        nt: *nt,
                        lo: Box::new(bound_to_cexpr(&bounds.lo)),
                        hi: Box::new(bound_to_cexpr(&bounds.hi)),
                    },
                    ObjectType::Fun { .. } => {
                        return Err(CompileError::Internal("malloc of a function type".into()))
                    }
                };
                Ok((
                    CExpr::Malloc(region, shape),
                    WordType::ptr(omega.clone(), *xi),
                ))
            }
        }
    }

    /// When the guard is `*x` for a checked NT-array variable, the widened
    /// branch must bump the upper-bound shadow.
    fn widen_hook(&self, env: &Env, guard: &Expr) -> Option<Var> {
        let Expr::Deref(inner) = guard else { return None };
        let Expr::Var(x) = inner.as_ref() else { return None };
        let WordType::Ptr(omega, PtrMode::Checked) = env.gamma.get(x)? else { return None };
        let ObjectType::Array { nt: true, .. } = omega.as_ref() else { return None };
        env.rho.has(x).then(|| shadow_hi(x))
    }

    /// Bounds of an atomic array pointer: the shadow variables for source
    /// variables, the static type bounds otherwise (literals, temporaries,
    /// cast results).
    fn atom_bounds(&self, env: &Env, atom: &Expr, ty: &WordType) -> Option<(CExpr, CExpr)> {
        let WordType::Ptr(omega, _) = ty else { return None };
        let ObjectType::Array { bounds, .. } = omega.as_ref() else { return None };
        match atom {
            Expr::Var(x) if env.rho.has(x) => {
                Some((CExpr::var(shadow_lo(x)), CExpr::var(shadow_hi(x))))
            }
            _ => Some((bound_to_cexpr(&bounds.lo), bound_to_cexpr(&bounds.hi))),
        }
    }

    fn dyncast_check(
        &self,
        env: &Env,
        target: &WordType,
        src_atom: &Expr,
        src_ty: &WordType,
        lowered: CExpr,
    ) -> Result<CExpr, CompileError> {
        let (WordType::Ptr(to, _), WordType::Ptr(so, _)) = (target, src_ty) else {
            return Ok(lowered);
        };
        let (
            ObjectType::Array { nt: t_nt, bounds: tb, .. },
            ObjectType::Array { nt: s_nt, .. },
        ) = (to.as_ref(), so.as_ref())
        else {
            return Ok(lowered);
        };
        let (slo, shi) = self
            .atom_bounds(env, src_atom, src_ty)
            .ok_or_else(|| CompileError::Internal("dyncast source bounds".into()))?;
        let check = CExpr::DynCheck {
            ptr: Box::new(lowered.clone()),
            t_nt: *t_nt,
            tlo: Box::new(bound_to_cexpr(&tb.lo)),
            thi: Box::new(bound_to_cexpr(&tb.hi)),
            s_nt: *s_nt,
            slo: Box::new(slo),
            shi: Box::new(shi),
        };
        Ok(CExpr::seq(check, lowered))
    }

    /// Dereference lowering: null check, bounds assertion against shadows,
    /// verification for tainted pointers, then the region-tagged read.
    fn lower_deref(
        &self,
        env: &Env,
        inner: &Expr,
        binds: &mut Binds,
    ) -> Result<(CExpr, WordType), CompileError> {
        let (base, idx) = split_accessor(inner);
        let (base_c, base_ty) = self.lower_atom(env, base, binds)?;
        let WordType::Ptr(omega, xi) = &base_ty else {
            return Err(CompileError::Internal("dereference of a non-pointer".into()));
        };
        let region = lower_deref_region(self.ctx, *xi).ok_or_else(|| {
            CompileError::Internal(format!(
                "flag table rejects pointer mode {xi} in context {}",
                self.ctx
            ))
        })?;
        let (elem, is_array, nt) = match omega.as_ref() {
            ObjectType::Word(t) => (t.clone(), false, false),
            ObjectType::Array { nt, elem, .. } => (elem.clone(), true, *nt),
            ObjectType::Fun { .. } => {
                return Err(CompileError::Internal("dereference of a function pointer".into()))
            }
        };
        let idx_c = match idx {
            Some(i) => Some(self.lower_atom(env, i, binds)?.0),
            None => None,
        };
        let addr = match &idx_c {
            Some(i) => CExpr::Add(Box::new(base_c.clone()), Box::new(i.clone())),
            None => base_c.clone(),
        };
        let mut checks: Vec<CExpr> = Vec::new();
        if idx_c.is_some() {
            // Pointer arithmetic on a (strictly) null base fails first.
            checks.push(CExpr::AssertNN { array: false, ptr: Box::new(base_c.clone()) });
            checks.push(CExpr::AssertNN { array: is_array, ptr: Box::new(addr.clone()) });
        } else {
            checks.push(CExpr::AssertNN { array: is_array, ptr: Box::new(base_c.clone()) });
        }
        if is_array {
            let (lo, hi) = self
                .atom_bounds(env, base, &base_ty)
                .ok_or_else(|| CompileError::Internal("array bounds unavailable".into()))?;
            let idx_expr = idx_c.clone().unwrap_or(CExpr::Lit(0));
            if *xi == PtrMode::Tainted {
                checks.push(CExpr::Verify {
                    region,
                    ptr: Box::new(addr.clone()),
                    bounds: Some((nt, Box::new(lo), Box::new(hi), Box::new(idx_expr))),
                    elem: elem.clone(),
                });
            } else {
                checks.push(CExpr::AssertBounds {
                    nt,
                    lo: Box::new(lo),
                    hi: Box::new(hi),
                    idx: Box::new(idx_expr),
                });
            }
        } else if *xi == PtrMode::Tainted {
            checks.push(CExpr::Verify {
                region,
                ptr: Box::new(addr.clone()),
                bounds: None,
                elem: elem.clone(),
            });
        }
        let read = CExpr::Deref(region, Box::new(addr));
        Ok((seq_all(checks, read), elem))
    }

    fn lower_assign(
        &self,
        env: &Env,
        lhs: &Expr,
        rhs: &Expr,
        binds: &mut Binds,
    ) -> Result<(CExpr, WordType), CompileError> {
        let (base, idx) = split_accessor(lhs);
        let (base_c, base_ty) = self.lower_atom(env, base, binds)?;
        let WordType::Ptr(omega, xi) = &base_ty else {
            return Err(CompileError::Internal("assignment through a non-pointer".into()));
        };
        let region = lower_deref_region(self.ctx, *xi).ok_or_else(|| {
            CompileError::Internal(format!(
                "flag table rejects pointer mode {xi} in context {}",
                self.ctx
            ))
        })?;
        let (elem, is_array) = match omega.as_ref() {
            ObjectType::Word(t) => (t.clone(), false),
            ObjectType::Array { elem, .. } => (elem.clone(), true),
            ObjectType::Fun { .. } => {
                return Err(CompileError::Internal("assignment through a function pointer".into()))
            }
        };
        let idx_c = match idx {
            Some(i) => Some(self.lower_atom(env, i, binds)?.0),
            None => None,
        };
        let addr = match &idx_c {
            Some(i) => CExpr::Add(Box::new(base_c.clone()), Box::new(i.clone())),
            None => base_c.clone(),
        };
        if idx_c.is_some() {
            // The pointer-arithmetic redex nulls on a zero base before the
            // right-hand side ever evaluates.
            binds.push(BindItem::Check(CExpr::AssertNN {
                array: false,
                ptr: Box::new(base_c.clone()),
            }));
        }
        let (rhs_c, _) = self.lower_atom(env, rhs, binds)?;
        let mut checks: Vec<CExpr> = Vec::new();
        if idx_c.is_some() {
            checks.push(CExpr::AssertNN { array: is_array, ptr: Box::new(addr.clone()) });
        } else {
            checks.push(CExpr::AssertNN { array: is_array, ptr: Box::new(base_c.clone()) });
        }
        if is_array {
            let (lo, hi) = self
                .atom_bounds(env, base, &base_ty)
                .ok_or_else(|| CompileError::Internal("array bounds unavailable".into()))?;
            let idx_expr = idx_c.clone().unwrap_or(CExpr::Lit(0));
            // Writes are strict at the upper bound for both array kinds.
            if *xi == PtrMode::Tainted {
                checks.push(CExpr::Verify {
                    region,
                    ptr: Box::new(addr.clone()),
                    bounds: Some((false, Box::new(lo), Box::new(hi), Box::new(idx_expr))),
                    elem: elem.clone(),
                });
            } else {
                checks.push(CExpr::AssertBounds {
                    nt: false,
                    lo: Box::new(lo),
                    hi: Box::new(hi),
                    idx: Box::new(idx_expr),
                });
            }
        } else if *xi == PtrMode::Tainted {
            checks.push(CExpr::Verify {
                region,
                ptr: Box::new(addr.clone()),
                bounds: None,
                elem: elem.clone(),
            });
        }
        let write = CExpr::Assign(region, Box::new(addr), Box::new(rhs_c));
        Ok((seq_all(checks, write), elem))
    }

    fn lower_let(
        &self,
        env: &Env,
        x: &Var,
        e1: &Expr,
        e2: &Expr,
        binds: &mut Binds,
    ) -> Result<(CExpr, WordType), CompileError> {
        let (re1, t1) = self.lower_small(env, e1, binds)?;
        let mut env2 = env.clone();
        env2.gamma.insert(x.clone(), t1.clone());
        if t1 == WordType::Int {
            match as_bound_expr(e1) {
                Some(b) => env2.theta = env.theta.with(x.clone(), Predicate::Eq(b)),
                None => {
                    env2.theta.0.remove(x);
                }
            }
        } else {
            env2.theta.0.remove(x);
        }
        let mut prologue: Vec<(Var, CExpr)> = Vec::new();
        let mut verify_entry = None;
        if let WordType::Ptr(omega, xi) = &t1 {
            match omega.as_ref() {
                ObjectType::Array { bounds, .. } => {
                    env2.rho = env2.rho.with(x.clone(), *xi);
                    prologue.push((shadow_lo(x), bound_to_cexpr(&bounds.lo)));
                    prologue.push((shadow_hi(x), bound_to_cexpr(&bounds.hi)));
                }
                ObjectType::Fun { params, .. } if *xi == PtrMode::Checked => {
                    // Checked function pointers are verified once, at their
                    // binding.
                    verify_entry = Some(CExpr::VerifyFun {
                        region: Region::C,
                        flag: PtrMode::Checked,
                        arity: params.len(),
                        callee: Box::new(CExpr::var(x.clone())),
                    });
                }
                _ => {}
            }
        }
        let (re2, t2) = self.lower_tail(&env2, e2)?;
        let mut body = re2;
        if let Some(v) = verify_entry {
            body = CExpr::seq(v, body);
        }
        for (name, init) in prologue.into_iter().rev() {
            body = CExpr::Bind(name, Box::new(init), Box::new(body));
        }
        let result = if t2.free_vars().contains(x) {
            match as_bound_expr(e1) {
                Some(b) => {
                    let mut map = BTreeMap::new();
                    map.insert(x.clone(), b);
                    subst_word(&t2, &map)
                }
                None => {
                    return Err(CompileError::Internal(
                        "dependent let without a bound-shaped binding".into(),
                    ))
                }
            }
        } else {
            t2
        };
        Ok((CExpr::Let(x.clone(), Box::new(re1), Box::new(body)), result))
    }

    fn lower_call(
        &self,
        env: &Env,
        whole: &Expr,
        callee: &Expr,
        args: &[Expr],
        binds: &mut Binds,
    ) -> Result<(CExpr, WordType), CompileError> {
        let (callee_c, callee_ty) = self.lower_atom(env, callee, binds)?;
        let WordType::Ptr(omega, xi) = &callee_ty else {
            return Err(CompileError::Internal("call of a non-pointer".into()));
        };
        let ObjectType::Fun { params, .. } = omega.as_ref() else {
            return Err(CompileError::Internal("call of a non-function".into()));
        };
        let region = heap_region(*xi);
        let mut args_c = Vec::with_capacity(args.len());
        for a in args {
            args_c.push(self.lower_atom(env, a, binds)?.0);
        }
        let result = self.type_of(env, whole)?;
        let mut checks = vec![CExpr::AssertNN { array: false, ptr: Box::new(callee_c.clone()) }];
        // Tainted callees are verified at every use; checked literal callees
        // at their (only) appearance. Checked variable callees were verified
        // at their binding.
        let verify_here = match xi {
            PtrMode::Tainted => true,
            PtrMode::Checked => matches!(strip_casts(callee), Expr::Lit(_)),
            PtrMode::Unchecked => false,
        };
        if verify_here {
            checks.push(CExpr::VerifyFun {
                region,
                flag: *xi,
                arity: params.len(),
                callee: Box::new(callee_c.clone()),
            });
        }
        let call = CExpr::Call(region, Box::new(callee_c), args_c);
        Ok((seq_all(checks, call), result))
    }
}

fn seq_all(checks: Vec<CExpr>, last: CExpr) -> CExpr {
    checks.into_iter().rev().fold(last, |acc, c| CExpr::seq(c, acc))
}

fn wrap_cbinds(binds: Binds, body: CExpr) -> CExpr {
    binds.into_iter().rev().fold(body, |acc, item| match item {
        BindItem::Named(x, rhs) => CExpr::Bind(x, Box::new(rhs), Box::new(acc)),
        BindItem::Check(c) => CExpr::seq(c, acc),
    })
}

fn strip_casts(e: &Expr) -> &Expr {
    match e {
        Expr::Cast(_, inner) => strip_casts(inner),
        _ => e,
    }
}

fn bound_to_cexpr(b: &Bound) -> CExpr {
    match b {
        Bound::Lit(n) => CExpr::Lit(*n),
        Bound::Off(x, 0) => CExpr::var(x.clone()),
        Bound::Off(x, n) => CExpr::Add(Box::new(CExpr::var(x.clone())), Box::new(CExpr::Lit(*n))),
    }
}

fn split_accessor(e: &Expr) -> (&Expr, Option<&Expr>) {
    match e {
        Expr::Add(a, b) => (a.as_ref(), Some(b.as_ref())),
        _ => (e, None),
    }
}

/// Compiles an expression: A-normal form conversion followed by lowering.
/// The returned type equals the typechecker's verdict on the source term.
pub fn compile(
    gamma: &TypeEnv,
    theta: &PredEnv,
    rho: &ShadowEnv,
    m: ContextMode,
    e: &Expr,
) -> Result<CompileOutput, CompileError> {
    compile_at(gamma, theta, rho, m.as_ptr_mode(), e)
}

fn compile_at(
    gamma: &TypeEnv,
    theta: &PredEnv,
    rho: &ShadowEnv,
    ctx: PtrMode,
    e: &Expr,
) -> Result<CompileOutput, CompileError> {
    let lower = Lower { ctx, tmp: std::cell::Cell::new(0) };
    // Mode-permission violations are type errors, not lowering bugs.
    typecheck_trusting(gamma, theta, lower.query_mode(), e)?;
    let env = Env { gamma: gamma.clone(), theta: theta.clone(), rho: rho.clone() };
    let (target, ty) = lower.lower_tail(&env, e)?;
    Ok(CompileOutput { target, ty })
}

/// Compiles a whole validated program: every stored function body at its
/// own flag's context, and main in checked mode. Function addresses and the
/// initial heap carry over erased.
pub fn compile_program(p: &Program) -> Result<CoreCProgram, CompileError> {
    validate_program(p)?;
    let mut out = CoreCProgram::default();
    for ((region, addr), def) in &p.funs {
        let mut gamma = TypeEnv::new();
        let mut rho = ShadowEnv::default();
        let mut prologue: Vec<CExpr> = Vec::new();
        for (x, t) in &def.params {
            gamma.insert(x.clone(), t.clone());
            if let WordType::Ptr(omega, xi) = t {
                match omega.as_ref() {
                    ObjectType::Array { bounds, .. } => {
                        rho = rho.with(x.clone(), *xi);
                        prologue.push(CExpr::Bind(
                            shadow_lo(x),
                            Box::new(bound_to_cexpr(&bounds.lo)),
                            Box::new(CExpr::Lit(0)),
                        ));
                        prologue.push(CExpr::Bind(
                            shadow_hi(x),
                            Box::new(bound_to_cexpr(&bounds.hi)),
                            Box::new(CExpr::Lit(0)),
                        ));
                    }
                    ObjectType::Fun { params, .. } if *xi == PtrMode::Checked => {
                        prologue.push(CExpr::VerifyFun {
                            region: Region::C,
                            flag: PtrMode::Checked,
                            arity: params.len(),
                            callee: Box::new(CExpr::var(x.clone())),
                        });
                    }
                    _ => {}
                }
            }
        }
        let body = compile_at(&gamma, &PredEnv::new(), &rho, def.mode, &def.body)?.target;
        // Entry prologue: shadow initialization from the parameter types
        // (bounds are not passed as arguments), then checked function
        // pointer verification, then the body.
        let full = prologue.into_iter().rev().fold(body, |acc, c| match c {
            CExpr::Bind(x, init, _) => CExpr::Bind(x, init, Box::new(acc)),
            other => CExpr::seq(other, acc),
        });
        out.funs.insert(
            (*region, *addr),
            CFunDef {
                flag: def.mode,
                params: def.params.iter().map(|(x, _)| x.clone()).collect(),
                body: full,
            },
        );
    }
    for ((region, addr), v) in &p.heap_init {
        out.heap_init.insert((*region, *addr), v.n);
    }
    out.main = compile_at(
        &TypeEnv::new(),
        &PredEnv::new(),
        &ShadowEnv::default(),
        PtrMode::Checked,
        &p.main,
    )?
    .target;
    Ok(out)
}

/// Compiles a machine configuration for simulation testing: the erased
/// stack is extended with synthesized shadow bindings for every array
/// pointer (their current annotation bounds are exactly what the shadows
/// track), and the expression is compiled in checked mode under the
/// environment recovered from the stack.
pub fn compile_config(
    config: &Config,
    heap_for_types: &Heap,
    funs: &FunStore,
) -> Result<CConfig, CompileError> {
    let _ = (heap_for_types, funs);
    let gamma = config.stack.type_env();
    let theta = config.stack.pred_env();
    let mut rho = ShadowEnv::default();
    let mut cstack = erase_stack(&config.stack);
    for (x, v) in &config.stack.0 {
        if let WordType::Ptr(omega, xi) = &v.ty {
            if let ObjectType::Array { bounds, .. } = omega.as_ref() {
                let (Some(lo), Some(hi)) = (bounds.lo.as_lit(), bounds.hi.as_lit()) else {
                    return Err(CompileError::Internal(format!(
                        "stack binding {x} has non-literal bounds"
                    )));
                };
                rho = rho.with(x.clone(), *xi);
                cstack.insert(shadow_lo(x), lo);
                cstack.insert(shadow_hi(x), hi);
            }
        }
    }
    let out = compile_at(&gamma, &theta, &rho, PtrMode::Checked, &config.expr)?;
    Ok(CConfig { stack: cstack, heap: erase_heap(&config.heap), expr: out.target })
}
