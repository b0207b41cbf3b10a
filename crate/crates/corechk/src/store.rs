//! Machine-state containers: the immutable-binding stack, the two-region
//! heap and the two-region function store.

use std::collections::BTreeMap;

use crate::lattice::{PredEnv, Predicate};
use crate::syntax::*;

/// Stack φ mapping variables to values. Bindings are immutable from the
/// program's point of view; the machine swaps them when entering and leaving
/// `let` scopes and patches type annotations for NT-array bound widening.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Stack(pub BTreeMap<Var, Value>);

impl Stack {
    pub fn new() -> Stack {
        Stack(BTreeMap::new())
    }

    pub fn get(&self, x: &str) -> Option<&Value> {
        self.0.get(x)
    }

    pub fn bind(&mut self, x: impl Into<Var>, v: Value) {
        self.0.insert(x.into(), v);
    }

    pub fn restore(&mut self, x: &str, saved: Option<Value>) {
        match saved {
            Some(v) => self.0.insert(x.to_string(), v),
            None => self.0.remove(x),
        };
    }

    /// Type environment induced by the stack.
    pub fn type_env(&self) -> BTreeMap<Var, WordType> {
        self.0.iter().map(|(x, v)| (x.clone(), v.ty.clone())).collect()
    }

    /// Predicate environment induced by the stack: every integer binding
    /// contributes an equality fact (the stack-snapshot parameterization of
    /// subtyping).
    pub fn pred_env(&self) -> PredEnv {
        let mut theta = PredEnv::new();
        for (x, v) in &self.0 {
            if v.ty == WordType::Int {
                theta = theta.with(x.clone(), Predicate::Eq(Bound::Lit(v.n)));
            }
        }
        theta
    }

    /// Evaluates the bound variables of a type against integer stack
    /// bindings (`φ(τ)`). Returns `None` when a free bound variable is
    /// unbound or bound to a non-integer.
    pub fn eval_type(&self, tau: &WordType) -> Option<WordType> {
        let mut map = BTreeMap::new();
        for x in tau.free_vars() {
            match self.get(&x) {
                Some(v) if v.ty == WordType::Int => {
                    map.insert(x, Bound::Lit(v.n));
                }
                _ => return None,
            }
        }
        Some(subst_word(tau, &map))
    }

    pub fn eval_object(&self, omega: &ObjectType) -> Option<ObjectType> {
        let mut map = BTreeMap::new();
        for x in omega.free_vars() {
            match self.get(&x) {
                Some(v) if v.ty == WordType::Int => {
                    map.insert(x, Bound::Lit(v.n));
                }
                _ => return None,
            }
        }
        Some(subst_object(omega, &map))
    }
}

/// Two-region heap. Address 0 is never defined; allocation is monotone at
/// the per-region high-water mark and nothing is ever freed.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Heap {
    pub c: BTreeMap<i64, Value>,
    pub u: BTreeMap<i64, Value>,
}

impl Heap {
    pub fn new() -> Heap {
        Heap::default()
    }

    pub fn region(&self, r: Region) -> &BTreeMap<i64, Value> {
        match r {
            Region::C => &self.c,
            Region::U => &self.u,
        }
    }

    pub fn region_mut(&mut self, r: Region) -> &mut BTreeMap<i64, Value> {
        match r {
            Region::C => &mut self.c,
            Region::U => &mut self.u,
        }
    }

    pub fn get(&self, r: Region, addr: i64) -> Option<&Value> {
        if addr == 0 {
            return None;
        }
        self.region(r).get(&addr)
    }

    /// First address past the allocated part of a region, at least 1.
    pub fn high_water(&self, r: Region) -> i64 {
        self.region(r).keys().next_back().map_or(1, |k| k + 1)
    }

    /// Allocates `count` cells initialized to `0 : elem`, returning the base
    /// address.
    pub fn alloc(&mut self, r: Region, count: i64, elem: &WordType) -> i64 {
        let base = self.high_water(r);
        let map = self.region_mut(r);
        for i in 0..count {
            map.insert(base + i, Value::new(0, elem.clone()));
        }
        base
    }

    pub fn from_init(init: &BTreeMap<(Region, i64), Value>) -> Heap {
        let mut h = Heap::new();
        for ((r, addr), v) in init {
            h.region_mut(*r).insert(*addr, v.clone());
        }
        h
    }
}

/// Two-region function store. Region C holds checked definitions; region U
/// holds tainted and unchecked ones.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct FunStore {
    pub c: BTreeMap<i64, FunDef>,
    pub u: BTreeMap<i64, FunDef>,
}

impl FunStore {
    pub fn region(&self, r: Region) -> &BTreeMap<i64, FunDef> {
        match r {
            Region::C => &self.c,
            Region::U => &self.u,
        }
    }

    pub fn get(&self, r: Region, addr: i64) -> Option<&FunDef> {
        if addr == 0 {
            return None;
        }
        self.region(r).get(&addr)
    }

    pub fn from_program(p: &Program) -> FunStore {
        let mut s = FunStore::default();
        for ((r, addr), def) in &p.funs {
            match r {
                Region::C => s.c.insert(*addr, def.clone()),
                Region::U => s.u.insert(*addr, def.clone()),
            };
        }
        s
    }
}
