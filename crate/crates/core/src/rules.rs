//! Existential rules, trigger discovery and immediate derivations (single
//! chase steps).

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::homo::{find_homomorphisms, HomSearchSpec};
use crate::kernel::{Atom, FactBase, Substitution, Term, TriggerKey};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("rule `{0}` has an empty body")]
    EmptyBody(String),
    #[error("rule `{0}` has an empty head")]
    EmptyHead(String),
    #[error("rule `{0}` contains a fresh null")]
    FreshNullInRule(String),
    #[error("trigger support is not present in the factbase")]
    SupportNotPresent,
}

/// An existential rule `body -> head`. The frontier is the set of variables
/// shared by body and head; head variables outside the body are existential.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    id: Arc<str>,
    body: BTreeSet<Atom>,
    head: BTreeSet<Atom>,
    frontier: BTreeSet<Term>,
    existentials: BTreeSet<Term>,
}

fn vars_of(atoms: &BTreeSet<Atom>) -> BTreeSet<Term> {
    atoms
        .iter()
        .flat_map(|a| a.args.iter())
        .filter(|t| !t.is_constant())
        .cloned()
        .collect()
}

impl Rule {
    pub fn new(
        id: impl Into<Arc<str>>,
        body: impl IntoIterator<Item = Atom>,
        head: impl IntoIterator<Item = Atom>,
    ) -> Result<Rule, RuleError> {
        let id = id.into();
        let body: BTreeSet<Atom> = body.into_iter().collect();
        let head: BTreeSet<Atom> = head.into_iter().collect();
        if body.is_empty() {
            return Err(RuleError::EmptyBody(id.to_string()));
        }
        if head.is_empty() {
            return Err(RuleError::EmptyHead(id.to_string()));
        }
        for atom in body.iter().chain(head.iter()) {
            if atom.args.iter().any(|t| matches!(t, Term::FreshNull(_))) {
                return Err(RuleError::FreshNullInRule(id.to_string()));
            }
        }
        let body_vars = vars_of(&body);
        let head_vars = vars_of(&head);
        let frontier = body_vars.intersection(&head_vars).cloned().collect();
        let existentials = head_vars.difference(&body_vars).cloned().collect();
        Ok(Rule {
            id,
            body,
            head,
            frontier,
            existentials,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn id_arc(&self) -> Arc<str> {
        self.id.clone()
    }

    pub fn body(&self) -> &BTreeSet<Atom> {
        &self.body
    }

    pub fn head(&self) -> &BTreeSet<Atom> {
        &self.head
    }

    pub fn frontier(&self) -> &BTreeSet<Term> {
        &self.frontier
    }

    pub fn existentials(&self) -> &BTreeSet<Term> {
        &self.existentials
    }

    pub fn body_vars(&self) -> BTreeSet<Term> {
        vars_of(&self.body)
    }

    pub fn is_datalog(&self) -> bool {
        self.existentials.is_empty()
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |atoms: &BTreeSet<Atom>| {
            atoms
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        };
        write!(f, "{} -> {}", join(&self.body), join(&self.head))
    }
}

/// How fresh nulls are named.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum NullNaming {
    /// Index nulls by the full trigger key (default). Distinct triggers make
    /// distinct nulls.
    #[default]
    TriggerKey,
    /// Index nulls by the frontier restriction of the binding, so that all
    /// SO-derivations produce identical (not merely isomorphic) atom sets.
    FrontierKey,
}

/// A trigger: a rule together with a homomorphism from its body. Trigger
/// equality is equality of (rule id, binding).
#[derive(Debug, Clone)]
pub struct Trigger {
    rule: Arc<Rule>,
    pi: Substitution,
    key: TriggerKey,
    naming: NullNaming,
}

impl PartialEq for Trigger {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for Trigger {}

impl PartialOrd for Trigger {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Trigger {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

impl std::hash::Hash for Trigger {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key.hash(state);
    }
}

fn bindings_for(rule: &Rule, pi: &Substitution, vars: &BTreeSet<Term>) -> Vec<(Arc<str>, Term)> {
    let _ = rule;
    vars.iter()
        .filter_map(|v| match v {
            Term::Variable(name) => Some((name.clone(), pi.get(v))),
            _ => None,
        })
        .collect()
}

impl Trigger {
    pub fn new(rule: Arc<Rule>, pi: Substitution) -> Trigger {
        Trigger::with_naming(rule, pi, NullNaming::TriggerKey)
    }

    pub fn with_naming(rule: Arc<Rule>, pi: Substitution, naming: NullNaming) -> Trigger {
        let body_vars = rule.body_vars();
        let pi = pi.restricted_to(body_vars.iter());
        let key = TriggerKey::new(rule.id_arc(), bindings_for(&rule, &pi, &body_vars));
        Trigger {
            rule,
            pi,
            key,
            naming,
        }
    }

    pub fn rule(&self) -> &Arc<Rule> {
        &self.rule
    }

    pub fn pi(&self) -> &Substitution {
        &self.pi
    }

    pub fn key(&self) -> &TriggerKey {
        &self.key
    }

    /// Key identifying the SO equivalence class: rule id plus the frontier
    /// image of the binding.
    pub fn so_class(&self) -> TriggerKey {
        TriggerKey::new(
            self.rule.id_arc(),
            bindings_for(&self.rule, &self.pi, self.rule.frontier()),
        )
    }

    /// The body instance, `pi(body)`.
    pub fn support(&self) -> BTreeSet<Atom> {
        self.pi.apply_to_atoms(self.rule.body())
    }

    /// The head instance with existentials renamed to trigger-indexed fresh
    /// nulls. Depends only on (rule, binding), never on any derivation.
    pub fn output(&self) -> BTreeSet<Atom> {
        let mut ext = self.pi.clone();
        let null_key = match self.naming {
            NullNaming::TriggerKey => self.key.clone(),
            NullNaming::FrontierKey => self.so_class(),
        };
        for z in self.rule.existentials() {
            if let Term::Variable(name) = z {
                ext.bind(
                    z.clone(),
                    Term::fresh_null(self.rule.id_arc(), name.clone(), null_key.clone()),
                );
            }
        }
        ext.apply_to_atoms(self.rule.head())
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.rule.id(), self.pi)
    }
}

/// All triggers applicable on `f`, in deterministic order: by rule id, then
/// by binding in term order. Exhaustive.
pub fn applicable_triggers(f: &FactBase, rules: &[Arc<Rule>]) -> Vec<Trigger> {
    applicable_triggers_with(f, rules, NullNaming::TriggerKey)
}

pub fn applicable_triggers_with(
    f: &FactBase,
    rules: &[Arc<Rule>],
    naming: NullNaming,
) -> Vec<Trigger> {
    let mut sorted: Vec<&Arc<Rule>> = rules.iter().collect();
    sorted.sort_by(|a, b| a.id().cmp(b.id()));
    let mut out = Vec::new();
    for rule in sorted {
        let spec = HomSearchSpec::plain(rule.body(), f);
        let mut homs = find_homomorphisms(&spec, None);
        homs.sort();
        for pi in homs {
            out.push(Trigger::with_naming(rule.clone(), pi, naming));
        }
    }
    out
}

/// Applies a trigger: returns `f` extended with the trigger output.
pub fn immediate_derivation(f: &FactBase, t: &Trigger) -> Result<FactBase, RuleError> {
    for atom in t.support() {
        if !f.contains(&atom) {
            return Err(RuleError::SupportNotPresent);
        }
    }
    let mut out = f.clone();
    for atom in t.output() {
        out.insert(atom);
    }
    Ok(out)
}

/// Function-free Skolem presentation: each rule with existentials is split
/// into one rule per head atom, existentials replaced by tagged Skolem
/// constants over the frontier, e.g. `f_R^z(x,y)`. Documentation aid only;
/// the chase engine never uses it.
pub fn skolemize(rules: &[Rule]) -> Vec<Rule> {
    let mut out = Vec::new();
    for rule in rules {
        if rule.is_datalog() {
            out.push(rule.clone());
            continue;
        }
        let frontier_names: Vec<String> = rule
            .frontier()
            .iter()
            .map(|t| t.to_string())
            .collect();
        let sk = |z: &Term| {
            Term::constant(format!(
                "f_{}^{}({})",
                rule.id(),
                z,
                frontier_names.join(",")
            ))
        };
        for (i, head_atom) in rule.head().iter().enumerate() {
            let new_head = Atom {
                pred: head_atom.pred.clone(),
                args: head_atom
                    .args
                    .iter()
                    .map(|t| {
                        if rule.existentials().contains(t) {
                            sk(t)
                        } else {
                            t.clone()
                        }
                    })
                    .collect(),
            };
            let id = format!("{}.{}", rule.id(), i + 1);
            out.push(
                Rule::new(id, rule.body().iter().cloned(), [new_head])
                    .expect("skolemized rule is well-formed"),
            );
        }
    }
    out
}
