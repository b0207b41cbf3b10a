//! Mode lattice and meet, bound inequality under predicate environments,
//! type equality, subtyping, and well-formedness of types and bounds.

use std::collections::{BTreeMap, BTreeSet};

use crate::syntax::*;

/// A per-variable fact used by bound reasoning: nonnegativity or equality to
/// a bound.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Predicate {
    GeZero,
    Eq(Bound),
}

/// Predicate environment Θ mapping integer-typed variables to facts.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct PredEnv(pub BTreeMap<Var, Predicate>);

impl PredEnv {
    pub fn new() -> PredEnv {
        PredEnv(BTreeMap::new())
    }

    pub fn get(&self, x: &str) -> Option<&Predicate> {
        self.0.get(x)
    }

    pub fn with(&self, x: impl Into<Var>, p: Predicate) -> PredEnv {
        let mut m = self.0.clone();
        m.insert(x.into(), p);
        PredEnv(m)
    }
}

/// The three-point permission lattice: `t <= xi` and `xi <= xi`.
pub fn mode_le(a: PtrMode, b: PtrMode) -> bool {
    a == PtrMode::Tainted || a == b
}

/// Commutative mode meet closing the equations `t/\c = u`, `xi/\u = u`,
/// `c/\m = m` (m a context mode) under commutativity and idempotence.
pub fn mode_meet(a: PtrMode, b: PtrMode) -> PtrMode {
    use PtrMode::*;
    match (a, b) {
        (Checked, Checked) => Checked,
        (Tainted, Tainted) => Tainted,
        (Tainted, Checked) | (Checked, Tainted) => Unchecked,
        (Unchecked, _) | (_, Unchecked) => Unchecked,
    }
}

/// Bound inequality `b <=_Θ b'`, as a syntax-directed deductive procedure.
/// Each `Eq` entry of Θ unfolds at most once per derivation path, which keeps
/// the procedure total; the relation is deliberately incomplete relative to
/// integer arithmetic.
pub fn bound_le(theta: &PredEnv, b1: &Bound, b2: &Bound) -> bool {
    bound_le_inner(theta, b1, b2, &mut BTreeSet::new())
}

fn bound_le_inner(theta: &PredEnv, b1: &Bound, b2: &Bound, used: &mut BTreeSet<Var>) -> bool {
    match (b1, b2) {
        (Bound::Lit(n), Bound::Lit(m)) => {
            if n <= m {
                return true;
            }
        }
        (Bound::Off(x, n), Bound::Off(y, m)) if x == y => {
            if n <= m {
                return true;
            }
        }
        (Bound::Lit(n), Bound::Off(x, m)) => {
            if n <= m && matches!(theta.get(x), Some(Predicate::GeZero)) {
                return true;
            }
        }
        _ => {}
    }
    // Eq-unfolding on the left: x+n <= b' when Θ(x) = eq b and b+n <= b'.
    if let Bound::Off(x, n) = b1 {
        if !used.contains(x) {
            if let Some(Predicate::Eq(b)) = theta.get(x) {
                used.insert(x.clone());
                let ok = bound_le_inner(theta, &b.add_offset(*n), b2, used);
                used.remove(x);
                if ok {
                    return true;
                }
            }
        }
    }
    // Eq-unfolding on the right: b' <= x+n when Θ(x) = eq b and b' <= b+n.
    if let Bound::Off(x, n) = b2 {
        if !used.contains(x) {
            if let Some(Predicate::Eq(b)) = theta.get(x) {
                used.insert(x.clone());
                let ok = bound_le_inner(theta, b1, &b.add_offset(*n), used);
                used.remove(x);
                if ok {
                    return true;
                }
            }
        }
    }
    false
}

/// Bound equality via antisymmetry.
pub fn bound_eq(theta: &PredEnv, b1: &Bound, b2: &Bound) -> bool {
    bound_le(theta, b1, b2) && bound_le(theta, b2, b1)
}

/// Type equality: structural with bound equality at array bounds and alpha
/// equivalence of function types (renaming both binder lists to a common
/// fresh list of equal length).
pub fn word_eq(theta: &PredEnv, a: &WordType, b: &WordType) -> bool {
    match (a, b) {
        (WordType::Int, WordType::Int) => true,
        (WordType::Ptr(oa, ma), WordType::Ptr(ob, mb)) => ma == mb && object_eq(theta, oa, ob),
        _ => false,
    }
}

pub fn object_eq(theta: &PredEnv, a: &ObjectType, b: &ObjectType) -> bool {
    match (a, b) {
        (ObjectType::Word(ta), ObjectType::Word(tb)) => word_eq(theta, ta, tb),
        (
            ObjectType::Array { nt: na, bounds: ba, elem: ea },
            ObjectType::Array { nt: nb, bounds: bb, elem: eb },
        ) => {
            na == nb
                && bound_eq(theta, &ba.lo, &bb.lo)
                && bound_eq(theta, &ba.hi, &bb.hi)
                && word_eq(theta, ea, eb)
        }
        (ObjectType::Fun { .. }, ObjectType::Fun { .. }) => {
            match alpha_normalize_pair(a, b) {
                Some((pa, ra, pb, rb)) => {
                    pa.len() == pb.len()
                        && pa.iter().zip(&pb).all(|(x, y)| word_eq(theta, x, y))
                        && word_eq(theta, &ra, &rb)
                }
                None => false,
            }
        }
        _ => false,
    }
}

/// Renames both function types' binders to a shared fresh list, returning
/// the renamed parameter lists and return types. `None` when the binder
/// lists have different lengths.
fn alpha_normalize_pair(
    a: &ObjectType,
    b: &ObjectType,
) -> Option<(Vec<WordType>, WordType, Vec<WordType>, WordType)> {
    let (ObjectType::Fun { binders: xa, params: pa, ret: ra },
         ObjectType::Fun { binders: xb, params: pb, ret: rb }) = (a, b)
    else {
        return None;
    };
    if xa.len() != xb.len() {
        return None;
    }
    let mut avoid: BTreeSet<Var> = a.free_vars();
    avoid.extend(b.free_vars());
    avoid.extend(xa.iter().cloned());
    avoid.extend(xb.iter().cloned());
    let mut map_a = BTreeMap::new();
    let mut map_b = BTreeMap::new();
    for (i, (x, y)) in xa.iter().zip(xb).enumerate() {
        let z = fresh_name(&format!("z{i}"), &avoid);
        avoid.insert(z.clone());
        map_a.insert(x.clone(), Bound::Off(z.clone(), 0));
        map_b.insert(y.clone(), Bound::Off(z, 0));
    }
    Some((
        pa.iter().map(|t| subst_word(t, &map_a)).collect(),
        subst_word(ra, &map_a),
        pb.iter().map(|t| subst_word(t, &map_b)).collect(),
        subst_word(rb, &map_b),
    ))
}

/// The subtyping relation over word types.
pub fn subtype(theta: &PredEnv, a: &WordType, b: &WordType) -> bool {
    if word_eq(theta, a, b) {
        return true;
    }
    let (WordType::Ptr(oa, ma), WordType::Ptr(ob, mb)) = (a, b) else {
        return false;
    };
    // ptr tau t <= ptr tau u. Retagging and recursing closes this rule
    // under the same-mode structural rules, keeping the relation
    // transitive.
    if *ma == PtrMode::Tainted && *mb == PtrMode::Unchecked {
        if subtype(theta, &WordType::ptr(oa.as_ref().clone(), PtrMode::Unchecked), b) {
            return true;
        }
    }
    if ma != mb {
        return false;
    }
    let zero = Bound::Lit(0);
    let one = Bound::Lit(1);
    match (oa.as_ref(), ob.as_ref()) {
        // Singleton to array: 0 <= bl and bh <= 1, plain arrays only.
        (ObjectType::Word(ta), ObjectType::Array { nt: false, bounds, elem }) => {
            word_eq(theta, ta, elem)
                && bound_le(theta, &zero, &bounds.lo)
                && bound_le(theta, &bounds.hi, &one)
        }
        // Array or NT-array to singleton: bl <= 0 and 1 <= bh.
        (ObjectType::Array { bounds, elem, .. }, ObjectType::Word(tb)) => {
            word_eq(theta, elem, tb)
                && bound_le(theta, &bounds.lo, &zero)
                && bound_le(theta, &one, &bounds.hi)
        }
        // Narrowing between arrays of the same flavor, and NT-array to
        // plain array: bl <= bl' and bh' <= bh.
        (
            ObjectType::Array { nt: na, bounds: ba, elem: ea },
            ObjectType::Array { nt: nb, bounds: bb, elem: eb },
        ) => {
            (na == nb || (*na && !*nb))
                && word_eq(theta, ea, eb)
                && bound_le(theta, &ba.lo, &bb.lo)
                && bound_le(theta, &bb.hi, &ba.hi)
        }
        // Function pointers: contravariant parameters, covariant result,
        // identical binder lists after alpha-normalization.
        (ObjectType::Fun { .. }, ObjectType::Fun { .. }) => {
            match alpha_normalize_pair(oa, ob) {
                Some((pa, ra, pb, rb)) => {
                    pa.len() == pb.len()
                        && pb.iter().zip(&pa).all(|(x, y)| subtype(theta, x, y))
                        && subtype(theta, &ra, &rb)
                }
                None => false,
            }
        }
        _ => false,
    }
}

/// Well-formedness for nested pointers under a mode: `int` is always
/// well formed; `ptr omega xi` requires `xi <= m` and `omega` well formed
/// under `xi /\ m`; function pointees additionally require the binders to
/// cover the free bound variables of the signature.
pub fn wf_nested_word(m: PtrMode, tau: &WordType) -> bool {
    match tau {
        WordType::Int => true,
        WordType::Ptr(omega, xi) => {
            mode_le(*xi, m) && wf_nested_object(mode_meet(*xi, m), omega)
        }
    }
}

pub fn wf_nested_object(m: PtrMode, omega: &ObjectType) -> bool {
    match omega {
        ObjectType::Word(tau) => wf_nested_word(m, tau),
        ObjectType::Array { elem, .. } => wf_nested_word(m, elem),
        ObjectType::Fun { binders, params, ret } => {
            let mut fv = BTreeSet::new();
            for p in params {
                fv.extend(p.free_vars());
            }
            fv.extend(ret.free_vars());
            fv.iter().all(|x| binders.contains(x))
                && params.iter().all(|p| wf_nested_word(m, p))
                && wf_nested_word(m, ret)
        }
    }
}

/// Well-formedness of the bounds occurring in a type: every bound variable
/// is integer-typed in Γ or bound by an enclosing function binder list.
pub fn wf_bounds_object(gamma: &BTreeMap<Var, WordType>, omega: &ObjectType) -> bool {
    fn bound_ok(gamma: &BTreeMap<Var, WordType>, extra: &[Var], b: &Bound) -> bool {
        match b.free_var() {
            None => true,
            Some(x) => extra.contains(x) || gamma.get(x) == Some(&WordType::Int),
        }
    }
    fn go_word(gamma: &BTreeMap<Var, WordType>, extra: &mut Vec<Var>, tau: &WordType) -> bool {
        match tau {
            WordType::Int => true,
            WordType::Ptr(omega, _) => go_object(gamma, extra, omega),
        }
    }
    fn go_object(gamma: &BTreeMap<Var, WordType>, extra: &mut Vec<Var>, omega: &ObjectType) -> bool {
        match omega {
            ObjectType::Word(tau) => go_word(gamma, extra, tau),
            ObjectType::Array { bounds, elem, .. } => {
                bound_ok(gamma, extra, &bounds.lo)
                    && bound_ok(gamma, extra, &bounds.hi)
                    && go_word(gamma, extra, elem)
            }
            ObjectType::Fun { binders, params, ret } => {
                let base = extra.len();
                extra.extend(binders.iter().cloned());
                let ok = params.iter().all(|p| go_word(gamma, extra, p))
                    && go_word(gamma, extra, ret);
                extra.truncate(base);
                ok
            }
        }
    }
    go_object(gamma, &mut Vec::new(), omega)
}

pub fn wf_bounds_word(gamma: &BTreeMap<Var, WordType>, tau: &WordType) -> bool {
    wf_bounds_object(gamma, &ObjectType::Word(tau.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use PtrMode::*;

    #[test]
    fn mode_le_examples() {
        assert!(mode_le(Tainted, Checked));
        assert!(mode_le(Checked, Checked));
        assert!(!mode_le(Checked, Unchecked));
    }

    #[test]
    fn mode_le_full_table() {
        // Exhaustive 9-case table from the two generating rules.
        let expect = |a: PtrMode, b: PtrMode| a == Tainted || a == b;
        for a in PtrMode::ALL {
            for b in PtrMode::ALL {
                assert_eq!(mode_le(a, b), expect(a, b), "{a} <= {b}");
            }
        }
    }

    #[test]
    fn mode_le_is_partial_order() {
        for a in PtrMode::ALL {
            assert!(mode_le(a, a));
            for b in PtrMode::ALL {
                if mode_le(a, b) && mode_le(b, a) {
                    assert_eq!(a, b);
                }
                for c in PtrMode::ALL {
                    if mode_le(a, b) && mode_le(b, c) {
                        assert!(mode_le(a, c));
                    }
                }
            }
        }
    }

    #[test]
    fn mode_meet_examples() {
        assert_eq!(mode_meet(Tainted, Checked), Unchecked);
        for x in PtrMode::ALL {
            // c /\ m = m for context modes; c /\ t follows the explicit
            // t /\ c = u equation under commutativity.
            let want = if x == Tainted { Unchecked } else { x };
            assert_eq!(mode_meet(Checked, x), want);
        }
        assert_eq!(mode_meet(Tainted, Tainted), Tainted);
    }

    #[test]
    fn mode_meet_laws() {
        for a in PtrMode::ALL {
            assert_eq!(mode_meet(a, a), a, "idempotent");
            for b in PtrMode::ALL {
                assert_eq!(mode_meet(a, b), mode_meet(b, a), "commutative");
                assert_eq!(mode_meet(PtrMode::Unchecked, b), PtrMode::Unchecked, "u absorbs");
                for c in PtrMode::ALL {
                    assert_eq!(
                        mode_meet(mode_meet(a, b), c),
                        mode_meet(a, mode_meet(b, c)),
                        "associative"
                    );
                }
            }
        }
    }

    #[test]
    fn bound_le_examples() {
        let empty = PredEnv::new();
        assert!(bound_le(&empty, &Bound::Lit(3), &Bound::Lit(5)));
        let ge = PredEnv::new().with("x", Predicate::GeZero);
        assert!(bound_le(&ge, &Bound::Lit(3), &Bound::Off("x".into(), 3)));
        // Unfold x to 2, then 3 <= 3 by the literal rule.
        let eq = PredEnv::new().with("x", Predicate::Eq(Bound::Lit(2)));
        assert!(bound_le(&eq, &Bound::Off("x".into(), 1), &Bound::Lit(3)));
    }

    #[test]
    fn bound_le_eq_chain_terminates() {
        // x = y+1, y = x+1: unfolding must not loop.
        let theta = PredEnv::new()
            .with("x", Predicate::Eq(Bound::Off("y".into(), 1)))
            .with("y", Predicate::Eq(Bound::Off("x".into(), 1)));
        assert!(!bound_le(&theta, &Bound::Off("x".into(), 0), &Bound::Lit(0)));
    }

    #[test]
    fn type_eq_examples() {
        let empty = PredEnv::new();
        assert!(word_eq(&empty, &WordType::Int, &WordType::Int));

        // Bound equality through Eq unfolding in both directions.
        let theta = PredEnv::new().with("x", Predicate::Eq(Bound::Lit(5)));
        let a = ObjectType::Array {
            nt: true,
            bounds: BoundPair { lo: Bound::Lit(0), hi: Bound::Off("x".into(), 0) },
            elem: WordType::Int,
        };
        let b = ObjectType::Array {
            nt: true,
            bounds: BoundPair::lits(0, 5),
            elem: WordType::Int,
        };
        assert!(object_eq(&theta, &a, &b));

        // Alpha equivalence of function types.
        let fa = ObjectType::Fun { binders: vec!["a".into()], params: vec![WordType::Int], ret: WordType::Int };
        let fb = ObjectType::Fun { binders: vec!["b".into()], params: vec![WordType::Int], ret: WordType::Int };
        assert!(object_eq(&empty, &fa, &fb));
    }

    #[test]
    fn subtype_examples() {
        let empty = PredEnv::new();
        assert!(subtype(
            &empty,
            &WordType::ptr_word(WordType::Int, Tainted),
            &WordType::ptr_word(WordType::Int, Unchecked)
        ));
        // NT-array narrowing into a plain array: 0 <= 1 and 3 <= 5.
        assert!(subtype(
            &empty,
            &WordType::ptr_array(true, 0, 5, WordType::Int, Checked),
            &WordType::ptr_array(false, 1, 3, WordType::Int, Checked)
        ));
        // Casting tainted to checked is not derivable.
        assert!(!subtype(
            &empty,
            &WordType::ptr_word(WordType::Int, Tainted),
            &WordType::ptr_word(WordType::Int, Checked)
        ));
    }

    #[test]
    fn wf_nested_examples() {
        // Checked array of tainted pointers is a valid type.
        let ok = WordType::ptr_array(
            false,
            0,
            3,
            WordType::ptr_word(WordType::Int, Tainted),
            Checked,
        );
        assert!(wf_nested_word(Checked, &ok));

        // A tainted array of checked pointers exposes checked addresses.
        let bad = WordType::ptr_array(
            false,
            0,
            3,
            WordType::ptr_word(WordType::Int, Checked),
            Tainted,
        );
        assert!(!wf_nested_word(Checked, &bad));

        // c <= u fails.
        assert!(!wf_nested_word(Unchecked, &WordType::ptr_word(WordType::Int, Checked)));
    }

    #[test]
    fn wf_bounds_examples() {
        let mut gamma = BTreeMap::new();
        gamma.insert("x".to_string(), WordType::Int);
        let arr = ObjectType::Array {
            nt: true,
            bounds: BoundPair { lo: Bound::Lit(0), hi: Bound::Off("x".into(), 0) },
            elem: WordType::Int,
        };
        assert!(wf_bounds_object(&gamma, &arr));
        assert!(!wf_bounds_object(&BTreeMap::new(), &arr));

        let fun = ObjectType::Fun {
            binders: vec!["n".into()],
            params: vec![WordType::ptr(
                ObjectType::Array {
                    nt: false,
                    bounds: BoundPair { lo: Bound::Lit(0), hi: Bound::Off("n".into(), 0) },
                    elem: WordType::Int,
                },
                Tainted,
            )],
            ret: WordType::Int,
        };
        assert!(wf_bounds_object(&BTreeMap::new(), &fun));
    }
}
