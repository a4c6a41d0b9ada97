//! Guarantee types: canonical (flags, closed location set) pairs and environments.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde_json::{json, Value};

use crate::automata::{AutomatonError, LocSet, SmrAutomaton, VarRole};
use crate::lang::Command;

/// Subset of the built-in guarantees {A, L, S}.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Flags(pub u8);

impl Flags {
    pub const NONE: Flags = Flags(0);
    pub const A: Flags = Flags(1);
    pub const L: Flags = Flags(2);
    pub const S: Flags = Flags(4);
    pub const AL: Flags = Flags(3);
    pub const ALL: Flags = Flags(7);

    pub fn has(self, f: Flags) -> bool {
        self.0 & f.0 == f.0
    }

    pub fn any(self, f: Flags) -> bool {
        self.0 & f.0 != 0
    }

    pub fn union(self, f: Flags) -> Flags {
        Flags(self.0 | f.0)
    }

    pub fn inter(self, f: Flags) -> Flags {
        Flags(self.0 & f.0)
    }

    pub fn minus(self, f: Flags) -> Flags {
        Flags(self.0 & !f.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn names(self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.has(Flags::A) {
            v.push("A");
        }
        if self.has(Flags::L) {
            v.push("L");
        }
        if self.has(Flags::S) {
            v.push("S");
        }
        v
    }
}

impl fmt::Debug for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.names().join(","))
    }
}

/// A type in canonical form. Build through [`TypeContext::make`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalType {
    pub flags: Flags,
    /// Interference-closed; closure of `Locs` of the type.
    pub custom: LocSet,
}

impl CanonicalType {
    pub fn is_valid(&self) -> bool {
        !self.flags.is_empty()
    }
}

/// Automaton-derived tables shared by all type operations.
#[derive(Debug)]
pub struct TypeContext {
    pub aut: SmrAutomaton,
    pub all: LocSet,
    pub locs_a: LocSet,
    pub safe: LocSet,
    closed_all: LocSet,
}

impl TypeContext {
    pub fn new(aut: SmrAutomaton) -> Arc<TypeContext> {
        let all = aut.all_locations();
        let locs_a = aut.active_locations();
        let safe = aut.safe_locations();
        let closed_all = aut.interference_closure(all);
        Arc::new(TypeContext {
            aut,
            all,
            locs_a,
            safe,
            closed_all,
        })
    }

    /// Locations over-approximated by the (not necessarily canonical) pair.
    pub fn locs_of(&self, flags: Flags, custom: LocSet) -> LocSet {
        let mut l = custom;
        if flags.any(Flags::AL) {
            l = l.inter(self.locs_a);
        }
        if flags.has(Flags::S) {
            l = l.inter(self.safe);
        }
        l
    }

    pub fn locs(&self, t: &CanonicalType) -> LocSet {
        self.locs_of(t.flags, t.custom)
    }

    /// Canonical form of the conjunction of `flags` and the custom guarantee
    /// `custom` (closed or not; it is closed here).
    pub fn make(&self, flags: Flags, custom: LocSet) -> CanonicalType {
        let mut flags = flags;
        let mut custom = self.aut.interference_closure(custom);
        loop {
            let l = self.locs_of(flags, custom);
            let mut f2 = flags;
            if flags.any(Flags::AL) && l.is_subset(self.safe) {
                f2 = f2.union(Flags::S);
            }
            let c2 = self.aut.interference_closure(self.locs_of(f2, custom));
            if f2 == flags && c2 == custom {
                return CanonicalType { flags, custom };
            }
            flags = f2;
            custom = c2;
        }
    }

    /// The type without guarantees.
    pub fn empty(&self) -> CanonicalType {
        CanonicalType {
            flags: Flags::NONE,
            custom: self.closed_all,
        }
    }

    pub fn with_flags(&self, f: Flags) -> CanonicalType {
        self.make(f, self.all)
    }

    pub fn custom(&self, l: LocSet) -> CanonicalType {
        self.make(Flags::NONE, l)
    }

    pub fn join(&self, a: &CanonicalType, b: &CanonicalType) -> CanonicalType {
        self.make(a.flags.inter(b.flags), a.custom.union(b.custom))
    }

    pub fn meet(&self, a: &CanonicalType, b: &CanonicalType) -> CanonicalType {
        self.make(a.flags.union(b.flags), a.custom.inter(b.custom))
    }

    /// `a ⊑ b`: `b` follows from `a` by an empty transformer step.
    pub fn leq(&self, a: &CanonicalType, b: &CanonicalType) -> bool {
        self.locs(a).is_subset(self.locs(b))
            && (!b.is_valid() || a.is_valid())
            && b.flags.inter(Flags::AL).0 & !a.flags.0 == 0
    }

    /// Post-image of `Locs(t)` for the command seen by `role`.
    pub fn post(&self, t: &CanonicalType, role: VarRole<'_>, com: &Command) -> Result<LocSet, AutomatonError> {
        self.aut.post_image(role, com, self.locs(t))
    }

    /// The least `T'` with `T, x, com ⇝ T'`.
    pub fn transformer(
        &self,
        t: &CanonicalType,
        role: VarRole<'_>,
        com: &Command,
    ) -> Result<CanonicalType, AutomatonError> {
        let post = self.post(t, role, com)?;
        Ok(self.transform_post(t, post))
    }

    pub(crate) fn transform_post(&self, t: &CanonicalType, post: LocSet) -> CanonicalType {
        let mut flags = Flags::NONE;
        if post.is_subset(self.locs_a) {
            flags = flags.union(t.flags.inter(Flags::AL));
        }
        if t.is_valid() && post.is_subset(self.safe) {
            flags = flags.union(Flags::S);
        }
        self.make(flags, post)
    }

    pub fn transformer_holds(
        &self,
        t: &CanonicalType,
        role: VarRole<'_>,
        com: &Command,
        t2: &CanonicalType,
    ) -> Result<bool, AutomatonError> {
        let post = self.post(t, role, com)?;
        Ok(post.is_subset(self.locs(t2))
            && (!t2.is_valid() || t.is_valid())
            && t2.flags.inter(Flags::AL).0 & !t.flags.0 == 0)
    }

    /// Every canonical type, by closing each (flags, closed set) pair.
    pub fn enumerate(&self) -> Vec<CanonicalType> {
        let n = self.aut.n_locations();
        assert!(n <= 16, "enumeration is meant for small automata");
        let mut out: Vec<CanonicalType> = Vec::new();
        for sub in 0u128..(1 << n) {
            let l = LocSet(sub);
            if !self.aut.is_closed(l) {
                continue;
            }
            for f in 0..8 {
                let t = self.make(Flags(f), l);
                if !out.contains(&t) {
                    out.push(t);
                }
            }
        }
        out.sort();
        out
    }

    pub fn render(&self, t: &CanonicalType) -> String {
        let mut parts: Vec<String> = t.flags.names().iter().map(|s| s.to_string()).collect();
        if t.custom != self.closed_all {
            parts.push(format!("E{{{}}}", self.aut.locset_names(t.custom).join(",")));
        }
        if parts.is_empty() {
            "∅".into()
        } else {
            parts.join("∧")
        }
    }

    /// `custom` is `null` when the type carries no custom guarantee.
    pub fn to_json(&self, t: &CanonicalType) -> Value {
        let custom = if t.custom == self.closed_all {
            Value::Null
        } else {
            json!(self.aut.locset_names(t.custom))
        };
        json!({ "flags": t.flags.names(), "custom": custom })
    }
}

/// Either failure (`Top`) or a total map from pointer/angel names to types.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TypeEnv {
    Top,
    Env(BTreeMap<String, CanonicalType>),
}

impl TypeEnv {
    /// Every variable at the empty type.
    pub fn initial(ctx: &TypeContext, vars: impl IntoIterator<Item = String>) -> TypeEnv {
        TypeEnv::Env(vars.into_iter().map(|v| (v, ctx.empty())).collect())
    }

    pub fn is_top(&self) -> bool {
        matches!(self, TypeEnv::Top)
    }

    pub fn get(&self, v: &str) -> Option<&CanonicalType> {
        match self {
            TypeEnv::Top => None,
            TypeEnv::Env(m) => m.get(v),
        }
    }

    pub fn set(&mut self, v: &str, t: CanonicalType) {
        if let TypeEnv::Env(m) = self {
            m.insert(v.to_string(), t);
        }
    }

    pub fn join(&self, other: &TypeEnv, ctx: &TypeContext) -> TypeEnv {
        match (self, other) {
            (TypeEnv::Env(a), TypeEnv::Env(b)) => TypeEnv::Env(
                a.iter()
                    .map(|(k, t)| {
                        let j = match b.get(k) {
                            Some(u) => ctx.join(t, u),
                            None => *t,
                        };
                        (k.clone(), j)
                    })
                    .collect(),
            ),
            _ => TypeEnv::Top,
        }
    }

    pub fn to_json(&self, ctx: &TypeContext) -> Value {
        match self {
            TypeEnv::Top => json!("top"),
            TypeEnv::Env(m) => Value::Object(m.iter().map(|(k, t)| (k.clone(), ctx.to_json(t))).collect()),
        }
    }

    pub fn render(&self, ctx: &TypeContext) -> String {
        match self {
            TypeEnv::Top => "⊤".into(),
            TypeEnv::Env(m) => m
                .iter()
                .map(|(k, t)| format!("{k}: {}", ctx.render(t)))
                .collect::<Vec<_>>()
                .join(", "),
        }
    }
}

/// Drop A from local pointers and forget everything about shared ones.
pub fn rm_transient(env: &TypeEnv, ctx: &TypeContext, is_shared: impl Fn(&str) -> bool) -> TypeEnv {
    match env {
        TypeEnv::Top => TypeEnv::Top,
        TypeEnv::Env(m) => TypeEnv::Env(
            m.iter()
                .map(|(k, t)| {
                    let t2 = if is_shared(k) {
                        ctx.empty()
                    } else if t.flags.has(Flags::A) {
                        ctx.make(t.flags.minus(Flags::A), t.custom)
                    } else {
                        *t
                    };
                    (k.clone(), t2)
                })
                .collect(),
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("environments have different domains")]
pub struct DomainMismatch;

pub fn env_leq(a: &TypeEnv, b: &TypeEnv, ctx: &TypeContext) -> Result<bool, DomainMismatch> {
    match (a, b) {
        (_, TypeEnv::Top) => Ok(true),
        (TypeEnv::Top, _) => Ok(false),
        (TypeEnv::Env(x), TypeEnv::Env(y)) => {
            if x.len() != y.len() || x.keys().zip(y.keys()).any(|(p, q)| p != q) {
                return Err(DomainMismatch);
            }
            Ok(x.iter().all(|(k, t)| ctx.leq(t, &y[k])))
        }
    }
}

/// Stable short names (E1, E2, ...) for the custom guarantees shown in a report.
#[derive(Debug, Default, Clone)]
pub struct GuaranteeNames {
    names: HashMap<LocSet, String>,
    order: Vec<LocSet>,
}

impl GuaranteeNames {
    pub fn name(&mut self, l: LocSet) -> String {
        if let Some(n) = self.names.get(&l) {
            return n.clone();
        }
        let n = format!("E{}", self.order.len() + 1);
        self.names.insert(l, n.clone());
        self.order.push(l);
        n
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, LocSet)> + '_ {
        self.order.iter().map(move |l| (&self.names[l], *l))
    }
}
