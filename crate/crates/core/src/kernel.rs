//! Terms, atoms, signatures, factbases and the substitution algebra.
//!
//! Everything here is an immutable value after construction; factbase indexes
//! are maintained on insertion and never go stale.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KernelError {
    #[error("predicate `{pred}` expects {expected} arguments, got {got}")]
    ArityMismatch {
        pred: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
}

/// Canonical identity of a trigger: a rule id plus the body binding, sorted by
/// variable name.
///
/// Fresh nulls are indexed by the trigger that created them, so this key is
/// part of term identity. It must depend only on the rule and the binding,
/// never on the position of the trigger inside a derivation: that is what
/// makes the chase produce the same atoms no matter in which order (or in
/// which derivation) a trigger fires.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TriggerKey {
    rule: Arc<str>,
    bindings: Arc<[(Arc<str>, Term)]>,
}

impl TriggerKey {
    pub fn new(rule: impl Into<Arc<str>>, mut bindings: Vec<(Arc<str>, Term)>) -> Self {
        bindings.sort();
        TriggerKey {
            rule: rule.into(),
            bindings: bindings.into(),
        }
    }

    pub fn rule(&self) -> &str {
        &self.rule
    }

    pub fn bindings(&self) -> &[(Arc<str>, Term)] {
        &self.bindings
    }

    /// Canonical text form, e.g. `R1[x->a,y->z]`.
    pub fn text(&self) -> String {
        let body = self
            .bindings
            .iter()
            .map(|(v, t)| format!("{v}->{t}"))
            .collect::<Vec<_>>()
            .join(",");
        format!("{}[{}]", self.rule, body)
    }
}

/// Identity of a fresh null: the rule, the existential variable and the
/// trigger that created it. Two triggers with equal (rule, binding) produce
/// identical nulls.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NullOrigin {
    pub rule: Arc<str>,
    pub var: Arc<str>,
    pub key: TriggerKey,
}

/// A term: a constant, a (labelled-null) variable, or a trigger-indexed fresh
/// null. Constants and variables live in disjoint namespaces; equality is by
/// kind and content.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Constant(Arc<str>),
    Variable(Arc<str>),
    FreshNull(Arc<NullOrigin>),
}

impl Term {
    pub fn constant(name: impl Into<Arc<str>>) -> Term {
        Term::Constant(name.into())
    }

    pub fn variable(name: impl Into<Arc<str>>) -> Term {
        Term::Variable(name.into())
    }

    pub fn fresh_null(rule: impl Into<Arc<str>>, var: impl Into<Arc<str>>, key: TriggerKey) -> Term {
        Term::FreshNull(Arc::new(NullOrigin {
            rule: rule.into(),
            var: var.into(),
            key,
        }))
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Term::Constant(_))
    }

    /// Variables and fresh nulls form one "null" sort for substitution
    /// purposes; provenance is kept only for display and trigger identity.
    pub fn is_null(&self) -> bool {
        !self.is_constant()
    }

    fn kind_rank(&self) -> u8 {
        match self {
            Term::Constant(_) => 0,
            Term::Variable(_) => 1,
            Term::FreshNull(_) => 2,
        }
    }
}

// Total order Constant < Variable < FreshNull, then by content; this order is
// used for every canonical or deterministic listing in the crate.
impl Ord for Term {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self, other) {
            (Term::Constant(a), Term::Constant(b)) => a.cmp(b),
            (Term::Variable(a), Term::Variable(b)) => a.cmp(b),
            (Term::FreshNull(a), Term::FreshNull(b)) => a.cmp(b),
            _ => self.kind_rank().cmp(&other.kind_rank()),
        }
    }
}

impl PartialOrd for Term {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Constant(n) | Term::Variable(n) => write!(f, "{n}"),
            Term::FreshNull(o) => write!(f, "{}!{}", o.var, o.key.text()),
        }
    }
}

/// An atom: a predicate applied to an ordered list of terms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub pred: Arc<str>,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(pred: impl Into<Arc<str>>, args: Vec<Term>) -> Atom {
        Atom {
            pred: pred.into(),
            args,
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.args.iter()
    }

    /// Variables and fresh nulls occurring in the atom.
    pub fn nulls(&self) -> impl Iterator<Item = &Term> {
        self.args.iter().filter(|t| t.is_null())
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.pred)?;
        for (i, t) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, ")")
    }
}

/// Builds an atom, validating it against the signature.
pub fn make_atom(pred: &str, args: Vec<Term>, sig: &Signature) -> Result<Atom, KernelError> {
    match sig.arity(pred) {
        None => Err(KernelError::UnknownPredicate(pred.to_string())),
        Some(expected) if expected != args.len() => Err(KernelError::ArityMismatch {
            pred: pred.to_string(),
            expected,
            got: args.len(),
        }),
        Some(_) => Ok(Atom::new(pred, args)),
    }
}

/// A vocabulary: predicates with arities and a set of constant names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Signature {
    predicates: BTreeMap<String, usize>,
    constants: BTreeSet<String>,
}

impl Signature {
    pub fn new() -> Signature {
        Signature::default()
    }

    /// Declares a predicate; redeclaring with a different arity is an error.
    pub fn declare_predicate(&mut self, name: &str, arity: usize) -> Result<(), KernelError> {
        match self.predicates.get(name) {
            Some(&old) if old != arity => Err(KernelError::ArityMismatch {
                pred: name.to_string(),
                expected: old,
                got: arity,
            }),
            _ => {
                self.predicates.insert(name.to_string(), arity);
                Ok(())
            }
        }
    }

    pub fn declare_constant(&mut self, name: &str) {
        self.constants.insert(name.to_string());
    }

    pub fn arity(&self, pred: &str) -> Option<usize> {
        self.predicates.get(pred).copied()
    }

    pub fn predicates(&self) -> impl Iterator<Item = (&str, usize)> {
        self.predicates.iter().map(|(n, &a)| (n.as_str(), a))
    }

    pub fn constants(&self) -> impl Iterator<Item = &str> {
        self.constants.iter().map(|s| s.as_str())
    }

    /// Records the predicate (and any constants) of an atom, failing on an
    /// arity conflict.
    pub fn observe_atom(&mut self, atom: &Atom) -> Result<(), KernelError> {
        self.declare_predicate(&atom.pred, atom.args.len())?;
        for t in &atom.args {
            if let Term::Constant(c) = t {
                self.constants.insert(c.to_string());
            }
        }
        Ok(())
    }
}

/// The three-way partition of the terms of a factbase. Fresh nulls count as
/// variables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermInventory {
    pub vars: BTreeSet<Term>,
    pub consts: BTreeSet<Term>,
    pub all: BTreeSet<Term>,
}

/// A duplicate-free set of atoms with predicate and term indexes.
#[derive(Debug, Clone, Default)]
pub struct FactBase {
    atoms: BTreeSet<Atom>,
    by_pred: BTreeMap<Arc<str>, BTreeSet<Atom>>,
    by_term: BTreeMap<Term, BTreeSet<Atom>>,
}

impl PartialEq for FactBase {
    fn eq(&self, other: &Self) -> bool {
        self.atoms == other.atoms
    }
}

impl Eq for FactBase {}

impl FactBase {
    pub fn new() -> FactBase {
        FactBase::default()
    }

    pub fn from_atoms(atoms: impl IntoIterator<Item = Atom>) -> FactBase {
        let mut fb = FactBase::new();
        for a in atoms {
            fb.insert(a);
        }
        fb
    }

    /// Inserts an atom; inserting an existing atom is a no-op. Returns whether
    /// the atom was new.
    pub fn insert(&mut self, atom: Atom) -> bool {
        if !self.atoms.insert(atom.clone()) {
            return false;
        }
        self.by_pred
            .entry(atom.pred.clone())
            .or_default()
            .insert(atom.clone());
        for t in &atom.args {
            self.by_term
                .entry(t.clone())
                .or_default()
                .insert(atom.clone());
        }
        true
    }

    pub fn remove(&mut self, atom: &Atom) -> bool {
        if !self.atoms.remove(atom) {
            return false;
        }
        if let Some(set) = self.by_pred.get_mut(&atom.pred) {
            set.remove(atom);
            if set.is_empty() {
                self.by_pred.remove(&atom.pred);
            }
        }
        for t in &atom.args {
            if let Some(set) = self.by_term.get_mut(t) {
                set.remove(atom);
                if set.is_empty() {
                    self.by_term.remove(t);
                }
            }
        }
        true
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.atoms.contains(atom)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Atoms in term order.
    pub fn iter(&self) -> impl Iterator<Item = &Atom> {
        self.atoms.iter()
    }

    pub fn atoms(&self) -> &BTreeSet<Atom> {
        &self.atoms
    }

    pub fn with_predicate(&self, pred: &str) -> impl Iterator<Item = &Atom> {
        self.by_pred.get(pred).into_iter().flatten()
    }

    pub fn with_term(&self, term: &Term) -> impl Iterator<Item = &Atom> {
        self.by_term.get(term).into_iter().flatten()
    }

    pub fn terms(&self) -> BTreeSet<Term> {
        self.by_term.keys().cloned().collect()
    }

    pub fn is_subset_of(&self, other: &FactBase) -> bool {
        self.atoms.is_subset(&other.atoms)
    }

    pub fn union(&self, other: &FactBase) -> FactBase {
        let mut fb = self.clone();
        for a in other.iter() {
            fb.insert(a.clone());
        }
        fb
    }
}

impl FromIterator<Atom> for FactBase {
    fn from_iter<I: IntoIterator<Item = Atom>>(iter: I) -> Self {
        FactBase::from_atoms(iter)
    }
}

impl fmt::Display for FactBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, a) in self.atoms.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "}}")
    }
}

/// Partitions the terms of a factbase into variables (including fresh nulls),
/// constants, and all terms.
pub fn term_inventory(f: &FactBase) -> TermInventory {
    let mut inv = TermInventory::default();
    for t in f.terms() {
        if t.is_constant() {
            inv.consts.insert(t.clone());
        } else {
            inv.vars.insert(t.clone());
        }
        inv.all.insert(t);
    }
    inv
}

/// A mapping from variables/fresh nulls to terms; constants are never
/// remapped. Application is total: unmapped terms map to themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Substitution {
    map: BTreeMap<Term, Term>,
}

impl Substitution {
    pub fn new() -> Substitution {
        Substitution::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Term, Term)>) -> Substitution {
        let mut s = Substitution::new();
        for (from, to) in pairs {
            s.bind(from, to);
        }
        s
    }

    /// Binds a variable or null. Identity bindings are not stored.
    ///
    /// Panics if `from` is a constant: the domain of a substitution never
    /// contains constants.
    pub fn bind(&mut self, from: Term, to: Term) {
        assert!(
            !from.is_constant(),
            "substitution domain cannot contain constants: {from}"
        );
        if from == to {
            self.map.remove(&from);
        } else {
            self.map.insert(from, to);
        }
    }

    pub fn unbind(&mut self, t: &Term) {
        self.map.remove(t);
    }

    pub fn get(&self, t: &Term) -> Term {
        self.map.get(t).cloned().unwrap_or_else(|| t.clone())
    }

    pub fn maps(&self, t: &Term) -> bool {
        self.map.contains_key(t)
    }

    pub fn domain(&self) -> impl Iterator<Item = &Term> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Term, &Term)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn apply_to_atom(&self, atom: &Atom) -> Atom {
        Atom {
            pred: atom.pred.clone(),
            args: atom.args.iter().map(|t| self.get(t)).collect(),
        }
    }

    pub fn apply_to_atoms(&self, atoms: &BTreeSet<Atom>) -> BTreeSet<Atom> {
        atoms.iter().map(|a| self.apply_to_atom(a)).collect()
    }

    /// `compose(s1, s2)` applies `s1` first, then `s2`.
    pub fn compose(&self, then: &Substitution) -> Substitution {
        let mut out = Substitution::new();
        for (from, to) in &self.map {
            out.bind(from.clone(), then.get(to));
        }
        for (from, to) in &then.map {
            if !self.map.contains_key(from) {
                out.bind(from.clone(), to.clone());
            }
        }
        out
    }

    pub fn restricted_to<'a>(&self, keys: impl IntoIterator<Item = &'a Term>) -> Substitution {
        let mut out = Substitution::new();
        for k in keys {
            if let Some(v) = self.map.get(k) {
                out.bind(k.clone(), v.clone());
            }
        }
        out
    }
}

impl fmt::Display for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (from, to)) in self.map.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{from}->{to}")?;
        }
        write!(f, "}}")
    }
}

/// Applies a substitution to a set of atoms; the result is deduplicated.
pub fn apply_substitution(sub: &Substitution, atoms: &BTreeSet<Atom>) -> BTreeSet<Atom> {
    sub.apply_to_atoms(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(n: &str) -> Term {
        Term::constant(n)
    }

    fn v(n: &str) -> Term {
        Term::variable(n)
    }

    fn atom(p: &str, args: &[Term]) -> Atom {
        Atom::new(p, args.to_vec())
    }

    #[test]
    fn make_atom_validates_arity() {
        let mut sig = Signature::new();
        sig.declare_predicate("p", 2).unwrap();
        sig.declare_predicate("human", 1).unwrap();

        let ok = make_atom("p", vec![c("a"), c("b")], &sig).unwrap();
        assert_eq!(ok.to_string(), "p(a,b)");

        let err = make_atom("p", vec![c("a")], &sig).unwrap_err();
        assert!(matches!(err, KernelError::ArityMismatch { .. }));

        assert!(matches!(
            make_atom("q", vec![c("a")], &sig),
            Err(KernelError::UnknownPredicate(_))
        ));

        let human = make_atom("human", vec![c("alice")], &sig).unwrap();
        assert_eq!(human.to_string(), "human(alice)");
    }

    #[test]
    fn apply_substitution_examples() {
        let f: BTreeSet<Atom> = [atom("p", &[v("x"), v("y")])].into_iter().collect();
        let sub = Substitution::from_pairs([(v("x"), c("a"))]);
        let out = apply_substitution(&sub, &f);
        assert_eq!(out, [atom("p", &[c("a"), v("y")])].into_iter().collect());

        // identity case
        let id = Substitution::new();
        assert_eq!(apply_substitution(&id, &f), f);

        // paper example: maps z1 to b, z0 to itself
        let f2: BTreeSet<Atom> = [
            atom("p", &[v("z0"), v("z1")]),
            atom("p", &[v("z1"), v("z0")]),
        ]
        .into_iter()
        .collect();
        let sub = Substitution::from_pairs([(v("z1"), c("b")), (v("z0"), v("z0"))]);
        let out = apply_substitution(&sub, &f2);
        let expect: BTreeSet<Atom> = [
            atom("p", &[v("z0"), c("b")]),
            atom("p", &[c("b"), v("z0")]),
        ]
        .into_iter()
        .collect();
        assert_eq!(out, expect);
    }

    #[test]
    fn term_inventory_partitions() {
        let f = FactBase::from_atoms([atom("p", &[c("a"), v("x")])]);
        let inv = term_inventory(&f);
        assert_eq!(inv.vars, [v("x")].into_iter().collect());
        assert_eq!(inv.consts, [c("a")].into_iter().collect());
        assert_eq!(inv.all.len(), 2);

        let empty = term_inventory(&FactBase::new());
        assert!(empty.vars.is_empty() && empty.consts.is_empty() && empty.all.is_empty());

        let f = FactBase::from_atoms([atom("p", &[c("a"), v("w")])]);
        let inv = term_inventory(&f);
        assert_eq!(inv.vars, [v("w")].into_iter().collect());
        assert_eq!(inv.consts, [c("a")].into_iter().collect());
    }

    #[test]
    fn factbase_insert_is_idempotent() {
        let mut f = FactBase::new();
        assert!(f.insert(atom("p", &[c("a"), c("b")])));
        assert!(!f.insert(atom("p", &[c("a"), c("b")])));
        assert_eq!(f.len(), 1);
        assert_eq!(f.with_predicate("p").count(), 1);
        assert_eq!(f.with_term(&c("a")).count(), 1);
    }

    #[test]
    fn fresh_null_identity_is_structural() {
        let key = TriggerKey::new("R1", vec![("x".into(), c("a"))]);
        let n1 = Term::fresh_null("R1", "z", key.clone());
        let n2 = Term::fresh_null("R1", "z", key.clone());
        assert_eq!(n1, n2);

        let other = TriggerKey::new("R1", vec![("x".into(), c("b"))]);
        let n3 = Term::fresh_null("R1", "z", other);
        assert_ne!(n1, n3);
    }

    #[test]
    fn term_order_by_kind_then_name() {
        let key = TriggerKey::new("R", vec![]);
        let null = Term::fresh_null("R", "z", key);
        let mut terms = vec![null.clone(), v("A"), c("z"), c("a"), v("B")];
        terms.sort();
        assert_eq!(terms, vec![c("a"), c("z"), v("A"), v("B"), null]);
    }

    proptest! {
        #[test]
        fn compose_is_sequential_application(pairs1 in subst_strategy(), pairs2 in subst_strategy(), atoms in atoms_strategy()) {
            let s1 = Substitution::from_pairs(pairs1);
            let s2 = Substitution::from_pairs(pairs2);
            let composed = s1.compose(&s2);
            let via_compose = apply_substitution(&composed, &atoms);
            let via_steps = apply_substitution(&s2, &apply_substitution(&s1, &atoms));
            prop_assert_eq!(via_compose, via_steps);
        }
    }

    fn term_strategy() -> impl Strategy<Value = Term> {
        prop_oneof![
            prop::sample::select(vec!["a", "b", "c"]).prop_map(Term::constant),
            prop::sample::select(vec!["x", "y", "z"]).prop_map(Term::variable),
        ]
    }

    fn subst_strategy() -> impl Strategy<Value = Vec<(Term, Term)>> {
        prop::collection::vec(
            (
                prop::sample::select(vec!["x", "y", "z"]).prop_map(Term::variable),
                term_strategy(),
            ),
            0..3,
        )
    }

    fn atoms_strategy() -> impl Strategy<Value = BTreeSet<Atom>> {
        prop::collection::btree_set(
            prop::collection::vec(term_strategy(), 1..3)
                .prop_map(|args| Atom::new("p", args)),
            0..4,
        )
    }
}
