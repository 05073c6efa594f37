//! The k-boundedness decision procedure: enumerate factbases up to
//! quasi-isomorphism within the prime-ancestor size bound and search each for
//! a derivation reaching rank k+1.

use std::collections::{BTreeSet, HashSet};
use std::ops::ControlFlow;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::chase::{
    is_applicable, run, visit_derivations, Caps, Derivation, DfsEvent, Status, Variant,
    VariantPolicy,
};
use crate::homo::canonical_form_pinned;
use crate::kernel::{Atom, FactBase, Signature, Term};
use crate::rules::{applicable_triggers, Rule};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BoundedError {
    #[error("ruleset is empty")]
    EmptyRuleset,
    #[error("existential k-boundedness is open for the restricted chase")]
    UnsupportedQuery,
    #[error("conflicting predicate arities in ruleset: {0}")]
    ArityConflict(String),
}

/// Chase variants for which k-boundedness is decidable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeciderVariant {
    O,
    BfO,
    So,
    BfSo,
    R,
    BfR,
}

impl DeciderVariant {
    pub fn policy(self) -> VariantPolicy {
        match self {
            DeciderVariant::O => VariantPolicy::free(Variant::Oblivious),
            DeciderVariant::BfO => VariantPolicy::bf(Variant::Oblivious),
            DeciderVariant::So => VariantPolicy::free(Variant::SemiOblivious),
            DeciderVariant::BfSo => VariantPolicy::bf(Variant::SemiOblivious),
            DeciderVariant::R => VariantPolicy::free(Variant::Restricted),
            DeciderVariant::BfR => VariantPolicy::bf(Variant::Restricted),
        }
    }

    pub fn is_restricted_family(self) -> bool {
        matches!(self, DeciderVariant::R | DeciderVariant::BfR)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeciderVariant::O => "o",
            DeciderVariant::BfO => "bfo",
            DeciderVariant::So => "so",
            DeciderVariant::BfSo => "bfso",
            DeciderVariant::R => "r",
            DeciderVariant::BfR => "bfr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantifier {
    ForAll,
    Exists,
}

#[derive(Debug, Clone)]
pub struct BoundednessQuery {
    pub rules: Vec<Arc<Rule>>,
    pub variant: DeciderVariant,
    pub quantifier: Quantifier,
    pub k: u32,
}

/// Budgets are mandatory: the worst case is multiply exponential in k.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub max_factbases: u64,
    pub max_derivations: u64,
    pub time_limit: Duration,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_factbases: 1_000_000,
            max_derivations: 10_000_000,
            time_limit: Duration::from_secs(600),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundednessVerdict {
    /// `None` when the budget was exceeded before a decision.
    pub bounded: Option<bool>,
    pub witness: Option<(FactBase, Derivation)>,
    pub factbases_checked: u64,
    pub derivations_explored: u64,
    pub budget_exceeded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKinds {
    ConstantsOnly,
    Mixed,
}

#[derive(Debug, Clone)]
pub struct EnumerationSpec {
    pub signature: Signature,
    pub max_atoms: usize,
    pub term_kinds: TermKinds,
}

/// `b^(k+1)` with `b` the maximal body atom count: the prime-ancestor bound
/// on counterexample factbases.
pub fn prime_bound(rules: &[Arc<Rule>], k: u32) -> Result<u64, BoundedError> {
    let b = rules
        .iter()
        .map(|r| r.body().len())
        .max()
        .ok_or(BoundedError::EmptyRuleset)? as u64;
    Ok(b.saturating_pow(k + 1))
}

fn fresh_lower_names(avoid: &BTreeSet<String>, count: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 0usize;
    while out.len() < count {
        let letter = (b'a' + (i % 26) as u8) as char;
        let name = if i < 26 {
            letter.to_string()
        } else {
            format!("{}{}", letter, i / 26)
        };
        if !avoid.contains(&name) {
            out.push(name);
        }
        i += 1;
    }
    out
}

fn fresh_upper_names(count: usize) -> Vec<String> {
    let letters = ["X", "Y", "Z", "U", "V", "W"];
    (0..count)
        .map(|i| {
            if i < letters.len() {
                letters[i].to_string()
            } else {
                format!("{}{}", letters[i % letters.len()], i / letters.len())
            }
        })
        .collect()
}

/// Streams exactly one representative per quasi-isomorphism class of
/// nonempty factbases with at most `max_atoms` atoms over the signature, in
/// increasing atom count and deterministic order within each count.
/// Signature constants are pinned: they take part in atoms but are never
/// renamed away.
pub fn enumerate_factbases(spec: &EnumerationSpec) -> Vec<FactBase> {
    let mut out = Vec::new();
    visit_factbases(spec, &mut |fb| {
        out.push(fb.clone());
        ControlFlow::Continue(())
    });
    out
}

/// Visitor-driven version of [`enumerate_factbases`].
pub fn visit_factbases(
    spec: &EnumerationSpec,
    visit: &mut dyn FnMut(&FactBase) -> ControlFlow<()>,
) {
    let preds: Vec<(String, usize)> = spec
        .signature
        .predicates()
        .map(|(n, a)| (n.to_string(), a))
        .collect();
    if preds.is_empty() || spec.max_atoms == 0 {
        return;
    }
    let max_arity = preds.iter().map(|(_, a)| *a).max().unwrap_or(0);
    let term_budget = spec.max_atoms * max_arity;
    let pinned_names: BTreeSet<String> =
        spec.signature.constants().map(|s| s.to_string()).collect();
    let pinned: Vec<Term> = pinned_names
        .iter()
        .map(|n| Term::constant(n.as_str()))
        .collect();
    let pinned_set: BTreeSet<Term> = pinned.iter().cloned().collect();
    let consts: Vec<Term> = fresh_lower_names(&pinned_names, term_budget)
        .into_iter()
        .map(Term::constant)
        .collect();
    let vars: Vec<Term> = match spec.term_kinds {
        TermKinds::ConstantsOnly => Vec::new(),
        TermKinds::Mixed => fresh_upper_names(term_budget)
            .into_iter()
            .map(Term::variable)
            .collect(),
    };

    let gen = Generator {
        preds,
        pinned,
        pinned_set,
        consts,
        vars,
    };
    for size in 1..=spec.max_atoms {
        let mut seen: HashSet<Vec<u8>> = HashSet::new();
        let mut atoms: Vec<Atom> = Vec::new();
        if gen
            .extend(size, &mut atoms, 0, 0, &mut seen, visit)
            .is_break()
        {
            return;
        }
    }
}

struct Generator {
    preds: Vec<(String, usize)>,
    pinned: Vec<Term>,
    pinned_set: BTreeSet<Term>,
    consts: Vec<Term>,
    vars: Vec<Term>,
}

impl Generator {
    /// All atoms over terms used so far plus at most the next fresh term of
    /// each kind per argument, together with updated fresh-term counts.
    fn candidate_atoms(&self, used_c: usize, used_v: usize) -> Vec<(Atom, usize, usize)> {
        let mut out = Vec::new();
        for (pred, arity) in &self.preds {
            let mut stack: Vec<(Vec<Term>, usize, usize)> = vec![(Vec::new(), used_c, used_v)];
            for _ in 0..*arity {
                let mut next = Vec::new();
                for (args, uc, uv) in stack {
                    let mut choices: Vec<(Term, usize, usize)> = Vec::new();
                    for t in &self.pinned {
                        choices.push((t.clone(), uc, uv));
                    }
                    for t in self.consts.iter().take(uc) {
                        choices.push((t.clone(), uc, uv));
                    }
                    if uc < self.consts.len() {
                        choices.push((self.consts[uc].clone(), uc + 1, uv));
                    }
                    for t in self.vars.iter().take(uv) {
                        choices.push((t.clone(), uc, uv));
                    }
                    if uv < self.vars.len() {
                        choices.push((self.vars[uv].clone(), uc, uv + 1));
                    }
                    for (t, uc2, uv2) in choices {
                        let mut a = args.clone();
                        a.push(t);
                        next.push((a, uc2, uv2));
                    }
                }
                stack = next;
            }
            for (args, uc, uv) in stack {
                out.push((Atom::new(pred.as_str(), args), uc, uv));
            }
        }
        out
    }

    fn extend(
        &self,
        size: usize,
        atoms: &mut Vec<Atom>,
        used_c: usize,
        used_v: usize,
        seen: &mut HashSet<Vec<u8>>,
        visit: &mut dyn FnMut(&FactBase) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        if atoms.len() == size {
            let fb = FactBase::from_atoms(atoms.iter().cloned());
            let key = canonical_form_pinned(&fb, &self.pinned_set);
            if seen.insert(key) {
                return visit(&fb);
            }
            return ControlFlow::Continue(());
        }
        let last = atoms.last().cloned();
        let mut cands = self.candidate_atoms(used_c, used_v);
        cands.sort();
        for (cand, uc, uv) in cands {
            if let Some(l) = &last {
                if cand <= *l {
                    continue;
                }
            }
            atoms.push(cand);
            let flow = self.extend(size, atoms, uc, uv, seen, visit);
            atoms.pop();
            flow?;
        }
        ControlFlow::Continue(())
    }
}

enum Search {
    Bounded,
    Witness(Derivation),
    Budget,
}

struct BudgetClock<'a> {
    budget: &'a Budget,
    started: Instant,
}

impl BudgetClock<'_> {
    fn time_up(&self) -> bool {
        self.started.elapsed() > self.budget.time_limit
    }
}

/// Decides X-k-boundedness of a ruleset.
///
/// Enumerates canonical factbases of at most `b^(k+1)` atoms in increasing
/// size and searches each for an X-derivation containing an atom of rank
/// k+1; the first such derivation wins and becomes the witness. Existential
/// queries for the (semi-)oblivious family reduce to the universal
/// breadth-first question. Fairness is not required of witnesses: any
/// derivation reaching rank k+1 refutes k-boundedness.
pub fn decide(query: &BoundednessQuery, budget: &Budget) -> Result<BoundednessVerdict, BoundedError> {
    if query.quantifier == Quantifier::Exists && query.variant.is_restricted_family() {
        return Err(BoundedError::UnsupportedQuery);
    }
    let mut verdict = BoundednessVerdict {
        bounded: Some(true),
        witness: None,
        factbases_checked: 0,
        derivations_explored: 0,
        budget_exceeded: false,
    };
    if query.rules.is_empty() {
        // no triggers exist on any factbase
        return Ok(verdict);
    }
    let effective = match (query.quantifier, query.variant) {
        (Quantifier::ForAll, v) => v,
        (Quantifier::Exists, DeciderVariant::O | DeciderVariant::BfO) => DeciderVariant::BfO,
        (Quantifier::Exists, DeciderVariant::So | DeciderVariant::BfSo) => DeciderVariant::BfSo,
        (Quantifier::Exists, _) => unreachable!("rejected above"),
    };

    let mut sig = Signature::new();
    for rule in &query.rules {
        for atom in rule.body().iter().chain(rule.head().iter()) {
            sig.observe_atom(atom)
                .map_err(|e| BoundedError::ArityConflict(e.to_string()))?;
        }
    }
    let bound = prime_bound(&query.rules, query.k)?;
    let spec = EnumerationSpec {
        signature: sig,
        max_atoms: usize::try_from(bound).unwrap_or(usize::MAX),
        // retractions freeze constants but not factbase variables, so the
        // restricted family needs mixed term kinds; O/SO applicability never
        // inspects term kind
        term_kinds: if effective.is_restricted_family() {
            TermKinds::Mixed
        } else {
            TermKinds::ConstantsOnly
        },
    };
    let clock = BudgetClock {
        budget,
        started: Instant::now(),
    };

    visit_factbases(&spec, &mut |fb| {
        if verdict.factbases_checked >= budget.max_factbases || clock.time_up() {
            verdict.budget_exceeded = true;
            return ControlFlow::Break(());
        }
        verdict.factbases_checked += 1;
        match search_deep_atom(fb, &query.rules, effective, query.k, &clock, &mut verdict) {
            Search::Bounded => ControlFlow::Continue(()),
            Search::Witness(d) => {
                verdict.bounded = Some(false);
                verdict.witness = Some((fb.clone(), d));
                ControlFlow::Break(())
            }
            Search::Budget => {
                verdict.budget_exceeded = true;
                ControlFlow::Break(())
            }
        }
    });

    if verdict.budget_exceeded {
        verdict.bounded = None;
        verdict.witness = None;
    }
    Ok(verdict)
}

fn search_deep_atom(
    f: &FactBase,
    rules: &[Arc<Rule>],
    variant: DeciderVariant,
    k: u32,
    clock: &BudgetClock,
    verdict: &mut BoundednessVerdict,
) -> Search {
    let policy = variant.policy();
    match variant {
        // All breadth-first (semi-)oblivious derivations produce the same
        // atoms at the same ranks, so one derivation per factbase decides.
        DeciderVariant::BfO | DeciderVariant::BfSo => {
            verdict.derivations_explored += 1;
            let out = run(
                f,
                rules,
                policy,
                Caps {
                    max_depth: k,
                    max_triggers: usize::MAX,
                },
            );
            match out.status {
                Status::Terminated => Search::Bounded,
                Status::DepthCapReached => {
                    let d = out.derivation;
                    let deep = applicable_triggers(d.atoms(), rules)
                        .into_iter()
                        .filter(|t| is_applicable(policy, &d, t).expect("support present"))
                        .filter(|t| t.output().iter().any(|a| !d.atoms().contains(a)))
                        .find(|t| d.trigger_rank(t).expect("support present") == k + 1);
                    let t = deep.expect("depth cap implies a productive deep trigger");
                    let mut w = d;
                    w.extend(t).expect("trigger is applicable");
                    Search::Witness(w)
                }
                Status::TriggerCapReached => unreachable!("trigger cap disabled"),
            }
        }
        _ => {
            let mut result = Search::Bounded;
            visit_derivations(f, rules, policy, k, &mut |ev| match ev {
                DfsEvent::State(_) => {
                    verdict.derivations_explored += 1;
                    if verdict.derivations_explored > clock.budget.max_derivations || clock.time_up()
                    {
                        result = Search::Budget;
                        return ControlFlow::Break(());
                    }
                    ControlFlow::Continue(())
                }
                DfsEvent::Truncated(d) => {
                    result = Search::Witness(d.clone());
                    ControlFlow::Break(())
                }
                DfsEvent::Terminating(_) => ControlFlow::Continue(()),
            });
            result
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Term;

    fn c(n: &str) -> Term {
        Term::constant(n)
    }

    fn v(n: &str) -> Term {
        Term::variable(n)
    }

    fn atom(p: &str, args: &[Term]) -> Atom {
        Atom::new(p, args.to_vec())
    }

    fn rule(id: &str, body: &[Atom], head: &[Atom]) -> Arc<Rule> {
        Arc::new(Rule::new(id, body.iter().cloned(), head.iter().cloned()).unwrap())
    }

    fn sig(preds: &[(&str, usize)]) -> Signature {
        let mut s = Signature::new();
        for (n, a) in preds {
            s.declare_predicate(n, *a).unwrap();
        }
        s
    }

    #[test]
    fn unary_constants_only_two_classes() {
        let spec = EnumerationSpec {
            signature: sig(&[("p", 1)]),
            max_atoms: 2,
            term_kinds: TermKinds::ConstantsOnly,
        };
        let all = enumerate_factbases(&spec);
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].len(), 1);
        assert_eq!(all[1].len(), 2);
    }

    #[test]
    fn unary_mixed_five_classes() {
        let spec = EnumerationSpec {
            signature: sig(&[("p", 1)]),
            max_atoms: 2,
            term_kinds: TermKinds::Mixed,
        };
        let all = enumerate_factbases(&spec);
        assert_eq!(all.len(), 5);
    }

    #[test]
    fn binary_single_atom_two_classes() {
        let spec = EnumerationSpec {
            signature: sig(&[("p", 2)]),
            max_atoms: 1,
            term_kinds: TermKinds::ConstantsOnly,
        };
        let all = enumerate_factbases(&spec);
        assert_eq!(all.len(), 2); // loop and plain edge
    }

    #[test]
    fn prime_bound_examples() {
        let unary = rule("R", &[atom("p", &[v("x")])], &[atom("q", &[v("x")])]);
        assert_eq!(prime_bound(&[unary], 2).unwrap(), 1);

        let two = rule(
            "R",
            &[atom("p", &[v("x"), v("y")]), atom("p", &[v("y"), v("z")])],
            &[atom("p", &[v("x"), v("z")])],
        );
        assert_eq!(prime_bound(&[two.clone()], 1).unwrap(), 4);
        assert_eq!(prime_bound(&[two], 2).unwrap(), 8);

        assert_eq!(prime_bound(&[], 1), Err(BoundedError::EmptyRuleset));
    }

    #[test]
    fn empty_ruleset_is_bounded() {
        let q = BoundednessQuery {
            rules: vec![],
            variant: DeciderVariant::O,
            quantifier: Quantifier::ForAll,
            k: 0,
        };
        let v = decide(&q, &Budget::default()).unwrap();
        assert_eq!(v.bounded, Some(true));
    }

    #[test]
    fn exists_restricted_is_rejected() {
        let r = rule("R", &[atom("p", &[v("x")])], &[atom("q", &[v("x")])]);
        let q = BoundednessQuery {
            rules: vec![r],
            variant: DeciderVariant::R,
            quantifier: Quantifier::Exists,
            k: 1,
        };
        assert_eq!(
            decide(&q, &Budget::default()).unwrap_err(),
            BoundedError::UnsupportedQuery
        );
    }

    #[test]
    fn budget_exceeded_reports_undecided() {
        // transitivity needs more than two factbases to refute 2-boundedness
        let r = rule(
            "R",
            &[atom("p", &[v("x"), v("y")]), atom("p", &[v("y"), v("z")])],
            &[atom("p", &[v("x"), v("z")])],
        );
        let q = BoundednessQuery {
            rules: vec![r],
            variant: DeciderVariant::BfO,
            quantifier: Quantifier::ForAll,
            k: 2,
        };
        let budget = Budget {
            max_factbases: 2,
            ..Budget::default()
        };
        let v = decide(&q, &budget).unwrap();
        assert!(v.budget_exceeded);
        assert_eq!(v.bounded, None);
    }

    #[test]
    fn rule_constants_are_pinned_in_enumeration() {
        // p(a,y) -> exists z. p(y,z): unbounded only through the constant a
        let r = rule(
            "R",
            &[atom("p", &[c("a"), v("y")])],
            &[atom("p", &[v("y"), v("z")])],
        );
        let q = BoundednessQuery {
            rules: vec![r],
            variant: DeciderVariant::O,
            quantifier: Quantifier::ForAll,
            k: 1,
        };
        let v = decide(&q, &Budget::default()).unwrap();
        assert_eq!(v.bounded, Some(false));
        let (fb, d) = v.witness.unwrap();
        assert!(fb.terms().contains(&c("a")));
        assert_eq!(d.depth(), 2);
    }

    #[test]
    fn datalog_loop_rule_is_zero_bounded() {
        let r = rule("R", &[atom("p", &[v("x")])], &[atom("p", &[v("x")])]);
        let q = BoundednessQuery {
            rules: vec![r],
            variant: DeciderVariant::O,
            quantifier: Quantifier::ForAll,
            k: 0,
        };
        let v = decide(&q, &Budget::default()).unwrap();
        assert_eq!(v.bounded, Some(true));
    }
}
