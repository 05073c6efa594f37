//! Derivations, the four chase variants (O, SO, R, E) with free and
//! breadth-first scheduling, chase graphs, ancestry, derivation restriction
//! and rank-compatible reordering.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::ops::ControlFlow;
use std::sync::Arc;

use thiserror::Error;

use crate::homo::{exists_homomorphism, exists_retraction};
use crate::kernel::{Atom, FactBase, Substitution, TriggerKey};
use crate::rules::{applicable_triggers_with, NullNaming, Rule, Trigger};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChaseError {
    #[error("trigger support is not present in the derivation")]
    SupportNotPresent,
    #[error("trigger was already applied in this derivation")]
    DuplicateTrigger,
    #[error("atom is not part of the derivation")]
    AtomNotInDerivation,
    #[error("expected a subset of the initial factbase")]
    NotASubset,
    #[error("derivation is not terminating")]
    NotTerminating,
    #[error("step {step}: {reason}")]
    InvalidDerivation { step: usize, reason: String },
}

/// The four redundancy criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Oblivious,
    SemiOblivious,
    Restricted,
    Equivalent,
}

impl Variant {
    pub fn short(self) -> &'static str {
        match self {
            Variant::Oblivious => "o",
            Variant::SemiOblivious => "so",
            Variant::Restricted => "r",
            Variant::Equivalent => "e",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TieBreak {
    /// By (rule id, binding) in term order.
    #[default]
    Lex,
    /// By trigger discovery order.
    Fifo,
}

/// Which chase to run and how to schedule it. The breadth-first flag
/// constrains scheduling only; it never changes the applicability predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantPolicy {
    pub variant: Variant,
    pub breadth_first: bool,
    pub tie_break: TieBreak,
}

impl VariantPolicy {
    pub fn free(variant: Variant) -> Self {
        VariantPolicy {
            variant,
            breadth_first: false,
            tie_break: TieBreak::Lex,
        }
    }

    pub fn bf(variant: Variant) -> Self {
        VariantPolicy {
            variant,
            breadth_first: true,
            tie_break: TieBreak::Lex,
        }
    }
}

/// One element of a derivation: the applied trigger and the factbase after it.
#[derive(Debug, Clone)]
pub struct Step {
    pub trigger: Trigger,
    pub factbase: FactBase,
    pub rank: u32,
    /// Atoms first produced by this step, in term order.
    pub produced: Vec<Atom>,
    pub support: BTreeSet<Atom>,
}

/// A derivation: an initial factbase plus a sequence of pairwise-distinct
/// applied triggers. Ranks and the producer of each atom are fixed at first
/// production and never change.
#[derive(Debug, Clone)]
pub struct Derivation {
    initial: FactBase,
    steps: Vec<Step>,
    atoms: FactBase,
    rank_of: BTreeMap<Atom, u32>,
    produced_by: BTreeMap<Atom, usize>,
    applied: BTreeSet<TriggerKey>,
    so_seen: BTreeSet<TriggerKey>,
}

impl Derivation {
    pub fn new(initial: FactBase) -> Derivation {
        let rank_of = initial.iter().map(|a| (a.clone(), 0)).collect();
        Derivation {
            atoms: initial.clone(),
            initial,
            steps: Vec::new(),
            rank_of,
            produced_by: BTreeMap::new(),
            applied: BTreeSet::new(),
            so_seen: BTreeSet::new(),
        }
    }

    pub fn initial(&self) -> &FactBase {
        &self.initial
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// The union of all factbases of the derivation, `F^D`.
    pub fn atoms(&self) -> &FactBase {
        &self.atoms
    }

    pub fn rank_of(&self, atom: &Atom) -> Option<u32> {
        self.rank_of.get(atom).copied()
    }

    /// Maximal atom rank.
    pub fn depth(&self) -> u32 {
        self.rank_of.values().copied().max().unwrap_or(0)
    }

    pub fn last_trigger_rank(&self) -> u32 {
        self.steps.last().map(|s| s.rank).unwrap_or(0)
    }

    pub fn contains_trigger(&self, t: &Trigger) -> bool {
        self.applied.contains(t.key())
    }

    pub fn has_so_class(&self, t: &Trigger) -> bool {
        self.so_seen.contains(&t.so_class())
    }

    /// Producer step of an atom, if it was produced by a trigger (atoms of
    /// the initial factbase have none).
    pub fn producer(&self, atom: &Atom) -> Option<&Step> {
        self.produced_by.get(atom).map(|&i| &self.steps[i])
    }

    /// Rank a trigger would get if applied now: 1 + the maximal rank of its
    /// support.
    pub fn trigger_rank(&self, t: &Trigger) -> Result<u32, ChaseError> {
        let mut max = 0;
        for a in t.support() {
            match self.rank_of.get(&a) {
                Some(&r) => max = max.max(r),
                None => return Err(ChaseError::SupportNotPresent),
            }
        }
        Ok(max + 1)
    }

    /// Appends a trigger application. Errors if the trigger repeats or its
    /// support is missing.
    pub fn extend(&mut self, t: Trigger) -> Result<(), ChaseError> {
        let support = t.support();
        for a in &support {
            if !self.atoms.contains(a) {
                return Err(ChaseError::SupportNotPresent);
            }
        }
        if self.applied.contains(t.key()) {
            return Err(ChaseError::DuplicateTrigger);
        }
        let rank = 1 + support
            .iter()
            .map(|a| self.rank_of[a])
            .max()
            .expect("rule bodies are nonempty");
        let step_idx = self.steps.len();
        let mut produced = Vec::new();
        for atom in t.output() {
            if self.atoms.insert(atom.clone()) {
                self.rank_of.insert(atom.clone(), rank);
                self.produced_by.insert(atom.clone(), step_idx);
                produced.push(atom);
            }
        }
        self.applied.insert(t.key().clone());
        self.so_seen.insert(t.so_class());
        self.steps.push(Step {
            factbase: self.atoms.clone(),
            trigger: t,
            rank,
            produced,
            support,
        });
        Ok(())
    }

    /// The chase graph: one edge per (support atom, produced atom) pair,
    /// labeled by the producing step.
    pub fn graph(&self) -> ChaseGraph {
        let nodes = self
            .atoms
            .iter()
            .map(|a| (a.clone(), self.rank_of[a]))
            .collect();
        let mut edges = Vec::new();
        for (i, step) in self.steps.iter().enumerate() {
            for p in &step.produced {
                for s in &step.support {
                    edges.push((s.clone(), p.clone(), i));
                }
            }
        }
        ChaseGraph { nodes, edges }
    }

    fn memo_key(&self, policy: VariantPolicy) -> String {
        use std::fmt::Write;
        let mut key = String::new();
        for (a, r) in &self.rank_of {
            let _ = write!(key, "{a}@{r};");
        }
        match policy.variant {
            Variant::Oblivious => {
                for k in &self.applied {
                    let _ = write!(key, "O{};", k.text());
                }
            }
            Variant::SemiOblivious => {
                for k in &self.so_seen {
                    let _ = write!(key, "S{};", k.text());
                }
            }
            Variant::Restricted | Variant::Equivalent => {}
        }
        if policy.breadth_first {
            let _ = write!(key, "#bf{}", self.last_trigger_rank());
        }
        key
    }
}

/// Atoms as nodes (with ranks), support-to-produced edges labeled by the
/// index of the producing step.
#[derive(Debug, Clone)]
pub struct ChaseGraph {
    pub nodes: Vec<(Atom, u32)>,
    pub edges: Vec<(Atom, Atom, usize)>,
}

/// The four X-applicability tests. The breadth-first flag of the policy is
/// ignored here: it constrains scheduling, not applicability.
pub fn is_applicable(
    policy: VariantPolicy,
    d: &Derivation,
    t: &Trigger,
) -> Result<bool, ChaseError> {
    let support = t.support();
    for a in &support {
        if !d.atoms.contains(a) {
            return Err(ChaseError::SupportNotPresent);
        }
    }
    match policy.variant {
        Variant::Oblivious => Ok(!d.contains_trigger(t)),
        Variant::SemiOblivious => Ok(!d.has_so_class(t)),
        Variant::Restricted => {
            let output = t.output();
            if output.iter().all(|a| d.atoms.contains(a)) {
                return Ok(false);
            }
            let mut big = d.atoms.clone();
            for a in output {
                big.insert(a);
            }
            Ok(!exists_retraction(&big, &d.atoms).expect("factbase is a subset by construction"))
        }
        Variant::Equivalent => {
            let output = t.output();
            if output.iter().all(|a| d.atoms.contains(a)) {
                return Ok(false);
            }
            let mut big = d.atoms.clone();
            for a in output {
                big.insert(a);
            }
            // the reverse direction is the inclusion, so one homomorphism
            // test decides logical equivalence
            Ok(!exists_homomorphism(&big, &d.atoms))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Caps {
    pub max_depth: u32,
    pub max_triggers: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            max_depth: 100,
            max_triggers: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Terminated,
    DepthCapReached,
    TriggerCapReached,
}

#[derive(Debug, Clone)]
pub struct ChaseOutcome {
    pub derivation: Derivation,
    pub status: Status,
    pub depth: u32,
}

/// Incremental trigger discovery: after each step only homomorphisms that use
/// at least one newly produced atom are searched (semi-naive evaluation).
struct TriggerPool {
    rules: Vec<Arc<Rule>>,
    naming: NullNaming,
    discovered: Vec<Cand>,
    known: BTreeSet<TriggerKey>,
}

struct Cand {
    trigger: Trigger,
    rank: u32,
    so_class: TriggerKey,
    output: BTreeSet<Atom>,
    /// Rejected forever: applied, SO-class seen, or retraction found.
    dead: bool,
}

fn partial_binding(body_atom: &Atom, fact: &Atom) -> Option<Substitution> {
    if body_atom.pred != fact.pred || body_atom.args.len() != fact.args.len() {
        return None;
    }
    let mut map: BTreeMap<&crate::kernel::Term, &crate::kernel::Term> = BTreeMap::new();
    for (b, f) in body_atom.args.iter().zip(fact.args.iter()) {
        if b.is_constant() {
            if b != f {
                return None;
            }
        } else if let Some(&prev) = map.get(b) {
            if prev != f {
                return None;
            }
        } else {
            map.insert(b, f);
        }
    }
    Some(Substitution::from_pairs(
        map.into_iter().map(|(a, b)| (a.clone(), b.clone())),
    ))
}

impl TriggerPool {
    fn new(rules: &[Arc<Rule>], naming: NullNaming) -> TriggerPool {
        let mut rules: Vec<Arc<Rule>> = rules.to_vec();
        rules.sort_by(|a, b| a.id().cmp(b.id()));
        TriggerPool {
            rules,
            naming,
            discovered: Vec::new(),
            known: BTreeSet::new(),
        }
    }

    fn discover_initial(&mut self, d: &Derivation) {
        for t in applicable_triggers_with(d.atoms(), &self.rules, self.naming) {
            self.add(t, d);
        }
    }

    fn discover_new(&mut self, d: &Derivation, new_atoms: &[Atom]) {
        let rules = self.rules.clone();
        let mut found = Vec::new();
        for rule in &rules {
            for body_atom in rule.body() {
                for fact in new_atoms {
                    let Some(fixed) = partial_binding(body_atom, fact) else {
                        continue;
                    };
                    let spec = crate::homo::HomSearchSpec {
                        source: rule.body(),
                        target: d.atoms(),
                        fixed,
                        frozen: BTreeSet::new(),
                    };
                    for pi in crate::homo::find_homomorphisms(&spec, None) {
                        found.push(Trigger::with_naming(rule.clone(), pi, self.naming));
                    }
                }
            }
        }
        found.sort();
        for t in found {
            self.add(t, d);
        }
    }

    fn add(&mut self, t: Trigger, d: &Derivation) {
        if self.known.insert(t.key().clone()) {
            let rank = d.trigger_rank(&t).expect("support present at discovery");
            self.discovered.push(Cand {
                rank,
                so_class: t.so_class(),
                output: t.output(),
                trigger: t,
                dead: false,
            });
        }
    }

    fn kill(&mut self, idx: usize) {
        self.discovered[idx].dead = true;
    }

    /// Indices and ranks of currently applicable candidates.
    fn candidates(&mut self, d: &Derivation, policy: VariantPolicy) -> Vec<(usize, u32)> {
        let mut out = Vec::new();
        for i in 0..self.discovered.len() {
            let cand = &self.discovered[i];
            if cand.dead {
                continue;
            }
            let rank = cand.rank;
            match policy.variant {
                Variant::Oblivious => {
                    if d.contains_trigger(&cand.trigger) {
                        self.discovered[i].dead = true;
                        continue;
                    }
                }
                Variant::SemiOblivious => {
                    if d.so_seen.contains(&cand.so_class) {
                        self.discovered[i].dead = true;
                        continue;
                    }
                }
                Variant::Restricted => {
                    // rejection is permanent for R: retractions survive growth
                    if cand.output.iter().all(|a| d.atoms.contains(a))
                        || exists_retraction(&union_with(&d.atoms, &cand.output), &d.atoms)
                            .expect("subset by construction")
                    {
                        self.discovered[i].dead = true;
                        continue;
                    }
                }
                Variant::Equivalent => {
                    // E-applicability is non-monotone, re-test every time
                    if cand.output.iter().all(|a| d.atoms.contains(a)) {
                        self.discovered[i].dead = true;
                        continue;
                    }
                    if exists_homomorphism(&union_with(&d.atoms, &cand.output), &d.atoms) {
                        continue;
                    }
                }
            }
            out.push((i, rank));
        }
        out
    }

    fn is_unproductive(&self, idx: usize, d: &Derivation) -> bool {
        self.discovered[idx].output.iter().all(|a| d.atoms.contains(a))
    }
}

fn union_with(f: &FactBase, atoms: &BTreeSet<Atom>) -> FactBase {
    let mut out = f.clone();
    for a in atoms {
        out.insert(a.clone());
    }
    out
}

/// Runs the chase. Breadth-first scheduling applies applicable triggers rank
/// by rank, saturating each rank before advancing; the free strategy applies
/// the tie-break-first applicable trigger greedily.
pub fn run(f: &FactBase, rules: &[Arc<Rule>], policy: VariantPolicy, caps: Caps) -> ChaseOutcome {
    run_with(f, rules, policy, caps, NullNaming::TriggerKey)
}

pub fn run_with(
    f: &FactBase,
    rules: &[Arc<Rule>],
    policy: VariantPolicy,
    caps: Caps,
    naming: NullNaming,
) -> ChaseOutcome {
    let mut d = Derivation::new(f.clone());
    let mut pool = TriggerPool::new(rules, naming);
    pool.discover_initial(&d);

    let status = loop {
        let cands = pool.candidates(&d, policy);
        if cands.is_empty() {
            break Status::Terminated;
        }
        if d.steps.len() >= caps.max_triggers {
            break Status::TriggerCapReached;
        }
        // a trigger is blocked by the depth cap only if it would actually
        // produce an atom beyond the cap
        let viable: Vec<(usize, u32)> = cands
            .into_iter()
            .filter(|&(i, rank)| rank <= caps.max_depth || pool.is_unproductive(i, &d))
            .collect();
        if viable.is_empty() {
            break Status::DepthCapReached;
        }
        let chosen = if policy.breadth_first {
            let floor = d.last_trigger_rank();
            let min_rank = viable
                .iter()
                .filter(|(_, r)| *r >= floor)
                .map(|(_, r)| *r)
                .min();
            match min_rank {
                Some(r) => select(
                    viable.iter().filter(|(_, rr)| *rr == r).map(|&(i, _)| i),
                    &pool,
                    policy.tie_break,
                ),
                // Only reachable for E: applicable triggers of lower rank can
                // resurface after the rank advanced. Fairness wins over strict
                // rank-compatibility here.
                None => select(viable.iter().map(|&(i, _)| i), &pool, policy.tie_break),
            }
        } else {
            select(viable.iter().map(|&(i, _)| i), &pool, policy.tie_break)
        };
        let idx = chosen.expect("viable set is nonempty");
        let trigger = pool.discovered[idx].trigger.clone();
        pool.kill(idx);
        d.extend(trigger).expect("candidate is applicable");
        let new_atoms = d.steps.last().unwrap().produced.clone();
        if !new_atoms.is_empty() {
            pool.discover_new(&d, &new_atoms);
        }
    };

    let depth = d.depth();
    ChaseOutcome {
        derivation: d,
        status,
        depth,
    }
}

fn select(iter: impl Iterator<Item = usize>, pool: &TriggerPool, tie: TieBreak) -> Option<usize> {
    match tie {
        // discovery order is by (rule, binding) within each step, so the
        // index order doubles as fifo order
        TieBreak::Fifo => iter.min(),
        TieBreak::Lex => iter.min_by(|&a, &b| {
            pool.discovered[a]
                .trigger
                .cmp(&pool.discovered[b].trigger)
        }),
    }
}

/// Events of the exhaustive derivation search.
pub enum DfsEvent<'a> {
    /// Every reached derivation, right after a trigger application.
    State(&'a Derivation),
    /// A maximal derivation: no X-applicable trigger remains.
    Terminating(&'a Derivation),
    /// A branch cut at the first atom of rank `max_depth + 1`.
    Truncated(&'a Derivation),
}

/// Depth-first enumeration of all X-derivations (breadth-first-constrained
/// when the policy says so) that either terminate or reach an atom of rank
/// `max_depth + 1`; a branch is truncated at the first such atom. States are
/// deduplicated by (atoms, ranks, applied-trigger residue).
pub fn enumerate_derivations(
    f: &FactBase,
    rules: &[Arc<Rule>],
    policy: VariantPolicy,
    max_depth: u32,
) -> Vec<Derivation> {
    let mut out = Vec::new();
    visit_derivations(f, rules, policy, max_depth, &mut |ev| {
        match ev {
            DfsEvent::Terminating(d) | DfsEvent::Truncated(d) => out.push(d.clone()),
            DfsEvent::State(_) => {}
        }
        ControlFlow::Continue(())
    });
    out
}

/// Visitor-driven version of [`enumerate_derivations`]; the callback can stop
/// the search early.
pub fn visit_derivations(
    f: &FactBase,
    rules: &[Arc<Rule>],
    policy: VariantPolicy,
    max_depth: u32,
    visit: &mut dyn FnMut(DfsEvent) -> ControlFlow<()>,
) {
    let mut sorted: Vec<Arc<Rule>> = rules.to_vec();
    sorted.sort_by(|a, b| a.id().cmp(b.id()));
    let d = Derivation::new(f.clone());
    let mut memo: HashSet<String> = HashSet::new();
    memo.insert(d.memo_key(policy));
    let _ = dfs(&d, &sorted, policy, max_depth, &mut memo, visit);
}

fn x_applicable(d: &Derivation, rules: &[Arc<Rule>], policy: VariantPolicy) -> Vec<(Trigger, u32)> {
    applicable_triggers_with(d.atoms(), rules, NullNaming::TriggerKey)
        .into_iter()
        .filter(|t| is_applicable(policy, d, t).expect("support present by construction"))
        .map(|t| {
            let rank = d.trigger_rank(&t).expect("support present");
            (t, rank)
        })
        .collect()
}

fn dfs(
    d: &Derivation,
    rules: &[Arc<Rule>],
    policy: VariantPolicy,
    max_depth: u32,
    memo: &mut HashSet<String>,
    visit: &mut dyn FnMut(DfsEvent) -> ControlFlow<()>,
) -> ControlFlow<()> {
    let all = x_applicable(d, rules, policy);
    if all.is_empty() {
        return visit(DfsEvent::Terminating(d));
    }
    let branch: Vec<&(Trigger, u32)> = if policy.breadth_first {
        let floor = d.last_trigger_rank();
        let min_rank = all
            .iter()
            .filter(|(_, r)| *r >= floor)
            .map(|(_, r)| *r)
            .min();
        match min_rank {
            Some(r) => all.iter().filter(|(_, rr)| *rr == r).collect(),
            // breadth-first dead end (E stragglers): not terminating, no
            // deeper atom reachable rank-compatibly
            None => Vec::new(),
        }
    } else {
        all.iter().collect()
    };
    for (t, _) in branch {
        let mut child = d.clone();
        child.extend(t.clone()).expect("candidate is applicable");
        visit(DfsEvent::State(&child))?;
        if child.depth() > max_depth {
            visit(DfsEvent::Truncated(&child))?;
            continue;
        }
        let key = child.memo_key(policy);
        if memo.insert(key) {
            dfs(&child, rules, policy, max_depth, memo, visit)?;
        }
    }
    ControlFlow::Continue(())
}

/// Atoms with a nonempty path to `atom` in the chase graph. Empty for atoms
/// of the initial factbase.
pub fn ancestors(d: &Derivation, atom: &Atom) -> Result<BTreeSet<Atom>, ChaseError> {
    if !d.atoms().contains(atom) {
        return Err(ChaseError::AtomNotInDerivation);
    }
    let mut out = BTreeSet::new();
    let mut stack = vec![atom.clone()];
    while let Some(a) = stack.pop() {
        if let Some(step) = d.producer(&a) {
            for s in &step.support {
                if out.insert(s.clone()) {
                    stack.push(s.clone());
                }
            }
        }
    }
    Ok(out)
}

/// The rank-0 ancestors: the initial atoms the atom derives from.
pub fn prime_ancestors(d: &Derivation, atom: &Atom) -> Result<BTreeSet<Atom>, ChaseError> {
    Ok(ancestors(d, atom)?
        .into_iter()
        .filter(|a| d.initial().contains(a))
        .collect())
}

/// Restriction of a derivation to a subset of its initial factbase: replays
/// the triggers of `d` in order, keeping exactly those whose support is
/// available when reached.
pub fn restrict(d: &Derivation, g: &FactBase) -> Result<Derivation, ChaseError> {
    if !g.is_subset_of(d.initial()) {
        return Err(ChaseError::NotASubset);
    }
    let mut out = Derivation::new(g.clone());
    for step in d.steps() {
        let available = step.trigger.support().iter().all(|a| out.atoms().contains(a));
        if available {
            out.extend(step.trigger.clone())?;
        }
    }
    Ok(out)
}

/// Stable-sorts the triggers of a terminating R-derivation by rank and
/// replays the maximal R-derivation over that order. The result is a
/// terminating, rank-compatible R-derivation of smaller or equal depth.
pub fn to_rank_compatible(d: &Derivation, rules: &[Arc<Rule>]) -> Result<Derivation, ChaseError> {
    let policy = VariantPolicy::free(Variant::Restricted);
    // terminating under the restricted criterion: nothing R-applicable left
    let leftovers = x_applicable(d, rules, policy);
    if !leftovers.is_empty() {
        return Err(ChaseError::NotTerminating);
    }
    let mut order: Vec<usize> = (0..d.steps().len()).collect();
    order.sort_by_key(|&i| d.steps()[i].rank);
    let mut out = Derivation::new(d.initial().clone());
    for i in order {
        let t = &d.steps()[i].trigger;
        if !t.support().iter().all(|a| out.atoms().contains(a)) {
            continue;
        }
        if is_applicable(policy, &out, t)? {
            out.extend(t.clone())?;
        }
    }
    Ok(out)
}

/// Checks whether `atom` (produced by `d`) can be re-produced at the same
/// rank by an X-derivation started from its prime ancestors alone. Returns
/// the witnessing derivation when one exists. Atom identity across
/// derivations relies on trigger-indexed null naming.
pub fn check_ancestry_preservation(
    rules: &[Arc<Rule>],
    d: &Derivation,
    atom: &Atom,
    policy: VariantPolicy,
) -> Result<(bool, Option<Derivation>), ChaseError> {
    if !d.atoms().contains(atom) || d.initial().contains(atom) {
        return Err(ChaseError::AtomNotInDerivation);
    }
    let target_rank = d.rank_of(atom).expect("atom is in the derivation");
    let g = FactBase::from_atoms(prime_ancestors(d, atom)?);
    let mut witness: Option<Derivation> = None;
    visit_derivations(&g, rules, policy, target_rank, &mut |ev| {
        if let DfsEvent::State(child) = ev {
            if child.rank_of(atom) == Some(target_rank) {
                witness = Some(child.clone());
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    });
    Ok((witness.is_some(), witness))
}

/// Replays a derivation, verifying X-applicability of every trigger on its
/// prefix; with a breadth-first policy additionally verifies
/// rank-compatibility and rank saturation at every internal rank mark. This
/// accepts breadth-first prefixes that stop in the middle of a rank.
pub fn validate_derivation(
    policy: VariantPolicy,
    d: &Derivation,
    rules: &[Arc<Rule>],
) -> Result<(), ChaseError> {
    validate_with_end(policy, d, rules, false)
}

/// Like [`validate_derivation`], but treats the end of the derivation as a
/// rank mark too: a completed breadth-first derivation must have exhausted
/// every rank it opened, so a pending applicable trigger of rank at most the
/// last applied rank disqualifies it.
pub fn validate_breadth_first_complete(
    policy: VariantPolicy,
    d: &Derivation,
    rules: &[Arc<Rule>],
) -> Result<(), ChaseError> {
    validate_with_end(policy, d, rules, true)
}

fn validate_with_end(
    policy: VariantPolicy,
    d: &Derivation,
    rules: &[Arc<Rule>],
    end_is_mark: bool,
) -> Result<(), ChaseError> {
    let mut cur = Derivation::new(d.initial().clone());
    let n = d.steps().len();
    for (i, step) in d.steps().iter().enumerate() {
        let t = &step.trigger;
        if !is_applicable(policy, &cur, t)? {
            return Err(ChaseError::InvalidDerivation {
                step: i,
                reason: format!("trigger {t} is not {}-applicable", policy.variant.short()),
            });
        }
        let rank = cur.trigger_rank(t)?;
        if policy.breadth_first && rank < cur.last_trigger_rank() {
            return Err(ChaseError::InvalidDerivation {
                step: i,
                reason: "not rank-compatible".into(),
            });
        }
        cur.extend(t.clone())?;
        let at_mark = if i + 1 == n {
            end_is_mark
        } else {
            let next = &d.steps()[i + 1].trigger;
            match cur.trigger_rank(next) {
                Ok(next_rank) => next_rank > rank,
                Err(_) => true,
            }
        };
        if policy.breadth_first && at_mark {
            // rank saturation: nothing of rank <= current may remain applicable
            for (pending, pending_rank) in x_applicable(&cur, rules, policy) {
                if pending_rank <= rank {
                    return Err(ChaseError::InvalidDerivation {
                        step: i,
                        reason: format!(
                            "not breadth-first: trigger {pending} of rank {pending_rank} is still applicable"
                        ),
                    });
                }
            }
        }
    }
    Ok(())
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

    fn trigger(r: &Arc<Rule>, pairs: &[(&str, Term)]) -> Trigger {
        let pi = Substitution::from_pairs(
            pairs.iter().map(|(n, t)| (v(n), t.clone())),
        );
        Trigger::new(r.clone(), pi)
    }

    #[test]
    fn restricted_blocks_retractable_trigger() {
        // K2: p(a,a) with p(x,y) -> exists z p(y,z); the new null retracts onto a
        let r2 = rule(
            "R2",
            &[atom("p", &[v("x"), v("y")])],
            &[atom("p", &[v("y"), v("z")])],
        );
        let d = Derivation::new(FactBase::from_atoms([atom("p", &[c("a"), c("a")])]));
        let t = trigger(&r2, &[("x", c("a")), ("y", c("a"))]);
        assert!(!is_applicable(VariantPolicy::free(Variant::Restricted), &d, &t).unwrap());
        // under SO the same trigger is applicable, and after applying it the
        // chain continues on a new frontier image
        assert!(is_applicable(VariantPolicy::free(Variant::SemiOblivious), &d, &t).unwrap());
        let mut d2 = d.clone();
        d2.extend(t).unwrap();
        let null = d2
            .atoms()
            .terms()
            .into_iter()
            .find(|t| matches!(t, Term::FreshNull(_)))
            .unwrap();
        let t2 = Trigger::new(
            r2.clone(),
            Substitution::from_pairs([(v("x"), c("a")), (v("y"), null)]),
        );
        assert!(is_applicable(VariantPolicy::free(Variant::SemiOblivious), &d2, &t2).unwrap());
    }

    #[test]
    fn k3_second_trigger_restricted_yes_equivalent_no() {
        let r3 = rule(
            "R3",
            &[atom("p", &[v("x"), v("y")])],
            &[atom("p", &[v("x"), v("x")]), atom("p", &[v("y"), v("z")])],
        );
        let f = FactBase::from_atoms([atom("p", &[c("a"), v("w")])]);
        let mut d = Derivation::new(f);
        let t1 = trigger(&r3, &[("x", c("a")), ("y", v("w"))]);
        assert!(is_applicable(VariantPolicy::free(Variant::Restricted), &d, &t1).unwrap());
        d.extend(t1).unwrap();
        let z0 = d
            .atoms()
            .terms()
            .into_iter()
            .find(|t| matches!(t, Term::FreshNull(_)))
            .unwrap();
        let t2 = Trigger::new(
            r3.clone(),
            Substitution::from_pairs([(v("x"), v("w")), (v("y"), z0)]),
        );
        assert!(is_applicable(VariantPolicy::free(Variant::Restricted), &d, &t2).unwrap());
        assert!(!is_applicable(VariantPolicy::free(Variant::Equivalent), &d, &t2).unwrap());
    }

    #[test]
    fn ranks_depend_on_application_order() {
        // ex-Datalog2: r(a) has rank 2 in D1 but rank 1 in D2
        let r1 = rule("R1", &[atom("p", &[v("x")])], &[atom("q", &[v("x")])]);
        let r2 = rule("R2", &[atom("q", &[v("x")])], &[atom("r", &[v("x")])]);
        let r3 = rule("R3", &[atom("p", &[v("x")])], &[atom("r", &[v("x")])]);
        let f = FactBase::from_atoms([atom("p", &[c("a")])]);

        let mut d1 = Derivation::new(f.clone());
        d1.extend(trigger(&r1, &[("x", c("a"))])).unwrap();
        d1.extend(trigger(&r2, &[("x", c("a"))])).unwrap();
        d1.extend(trigger(&r3, &[("x", c("a"))])).unwrap();
        assert_eq!(d1.rank_of(&atom("r", &[c("a")])), Some(2));
        assert_eq!(d1.depth(), 2);
        // the last trigger produced nothing
        assert!(d1.steps()[2].produced.is_empty());

        let mut d2 = Derivation::new(f);
        d2.extend(trigger(&r1, &[("x", c("a"))])).unwrap();
        d2.extend(trigger(&r3, &[("x", c("a"))])).unwrap();
        d2.extend(trigger(&r2, &[("x", c("a"))])).unwrap();
        assert_eq!(d2.rank_of(&atom("r", &[c("a")])), Some(1));
        assert_eq!(d2.depth(), 1);
        assert!(d2.steps()[2].produced.is_empty());

        // D2 is breadth-first, D1 is not even rank-compatible
        let rules = vec![r1, r2, r3];
        assert!(
            validate_breadth_first_complete(VariantPolicy::bf(Variant::Oblivious), &d2, &rules)
                .is_ok()
        );
        assert!(validate_derivation(VariantPolicy::bf(Variant::Oblivious), &d1, &rules).is_err());
    }

    #[test]
    fn duplicate_trigger_is_rejected() {
        let r = rule("R", &[atom("p", &[v("x")])], &[atom("q", &[v("x")])]);
        let f = FactBase::from_atoms([atom("p", &[c("a")])]);
        let mut d = Derivation::new(f);
        let t = trigger(&r, &[("x", c("a"))]);
        d.extend(t.clone()).unwrap();
        assert_eq!(d.extend(t), Err(ChaseError::DuplicateTrigger));
    }

    #[test]
    fn run_semi_oblivious_halts_on_k1() {
        let r1 = rule(
            "R1",
            &[atom("p", &[v("x"), v("y")])],
            &[atom("p", &[v("x"), v("z")])],
        );
        let f = FactBase::from_atoms([atom("p", &[c("a"), c("a")])]);
        let out = run(
            &f,
            &[r1.clone()],
            VariantPolicy::free(Variant::SemiOblivious),
            Caps::default(),
        );
        assert_eq!(out.status, Status::Terminated);
        assert_eq!(out.depth, 1);
        assert_eq!(out.derivation.steps().len(), 1);

        let out = run(
            &f,
            &[r1],
            VariantPolicy::free(Variant::Oblivious),
            Caps {
                max_triggers: 50,
                ..Caps::default()
            },
        );
        assert_eq!(out.status, Status::TriggerCapReached);
    }

    #[test]
    fn run_restricted_halts_without_producing_on_k2() {
        let r2 = rule(
            "R2",
            &[atom("p", &[v("x"), v("y")])],
            &[atom("p", &[v("y"), v("z")])],
        );
        let f = FactBase::from_atoms([atom("p", &[c("a"), c("a")])]);
        let out = run(
            &f,
            &[r2],
            VariantPolicy::free(Variant::Restricted),
            Caps::default(),
        );
        assert_eq!(out.status, Status::Terminated);
        assert_eq!(out.depth, 0);
        assert!(out.derivation.steps().is_empty());
    }

    #[test]
    fn run_k3_restricted_diverges_equivalent_halts() {
        let r3 = rule(
            "R3",
            &[atom("p", &[v("x"), v("y")])],
            &[atom("p", &[v("x"), v("x")]), atom("p", &[v("y"), v("z")])],
        );
        let f = FactBase::from_atoms([atom("p", &[c("a"), v("w")])]);
        let out = run(
            &f,
            &[r3.clone()],
            VariantPolicy::free(Variant::Restricted),
            Caps {
                max_depth: 5,
                ..Caps::default()
            },
        );
        assert_eq!(out.status, Status::DepthCapReached);

        let out = run(
            &f,
            &[r3],
            VariantPolicy::free(Variant::Equivalent),
            Caps::default(),
        );
        assert_eq!(out.status, Status::Terminated);
        assert_eq!(out.depth, 1);
    }

    #[test]
    fn breadth_first_restricted_on_two_null_example() {
        let r = rule(
            "R",
            &[atom("p", &[v("x"), v("y")])],
            &[atom("p", &[v("y"), v("z")]), atom("p", &[v("z"), v("y")])],
        );
        let f = FactBase::from_atoms([atom("p", &[c("a"), c("b")])]);
        let out = run(
            &f,
            &[r],
            VariantPolicy::bf(Variant::Restricted),
            Caps::default(),
        );
        assert_eq!(out.status, Status::Terminated);
        assert_eq!(out.depth, 1);
        assert_eq!(out.derivation.atoms().len(), 3);
    }

    #[test]
    fn enumerate_single_maximal_derivation() {
        let r = rule("R", &[atom("p", &[v("x")])], &[atom("q", &[v("x")])]);
        let f = FactBase::from_atoms([atom("p", &[c("a")])]);
        let all = enumerate_derivations(&f, &[r], VariantPolicy::free(Variant::Oblivious), 2);
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].depth(), 1);
    }

    #[test]
    fn ancestors_of_chain() {
        let r = rule(
            "R",
            &[atom("p", &[v("x"), v("y")])],
            &[atom("p", &[v("y"), v("z")])],
        );
        let f = FactBase::from_atoms([atom("p", &[c("a"), c("b")])]);
        let mut d = Derivation::new(f);
        d.extend(trigger(&r, &[("x", c("a")), ("y", c("b"))])).unwrap();
        let mid = d.steps()[0].produced[0].clone();
        let t2 = Trigger::new(
            r.clone(),
            Substitution::from_pairs([(v("x"), c("b")), (v("y"), mid.args[1].clone())]),
        );
        d.extend(t2).unwrap();
        let last = d.steps()[1].produced[0].clone();
        assert_eq!(d.rank_of(&last), Some(2));
        let anc = ancestors(&d, &last).unwrap();
        assert_eq!(anc.len(), 2);
        let prime = prime_ancestors(&d, &last).unwrap();
        assert_eq!(prime.len(), 1);
        assert!(prime.contains(&atom("p", &[c("a"), c("b")])));

        // initial atoms have no ancestors
        assert!(ancestors(&d, &atom("p", &[c("a"), c("b")])).unwrap().is_empty());
        assert_eq!(
            ancestors(&d, &atom("q", &[c("a")])),
            Err(ChaseError::AtomNotInDerivation)
        );
    }

    #[test]
    fn restrict_to_full_initial_is_identity() {
        let r = rule("R", &[atom("p", &[v("x")])], &[atom("q", &[v("x")])]);
        let f = FactBase::from_atoms([atom("p", &[c("a")]), atom("p", &[c("b")])]);
        let out = run(&f, &[r], VariantPolicy::free(Variant::Oblivious), Caps::default());
        let d = out.derivation;
        let replay = restrict(&d, &f).unwrap();
        assert_eq!(replay.steps().len(), d.steps().len());
        assert_eq!(replay.atoms(), d.atoms());
    }

    #[test]
    fn restrict_can_raise_ranks() {
        // R1: p(x) -> q(x); R2: p(x), q(x) -> r(x); restricting to {p(a)}
        // keeps both triggers and raises the rank of r(a) from 1 to 2
        let r1 = rule("R1", &[atom("p", &[v("x")])], &[atom("q", &[v("x")])]);
        let r2 = rule(
            "R2",
            &[atom("p", &[v("x")]), atom("q", &[v("x")])],
            &[atom("r", &[v("x")])],
        );
        let f = FactBase::from_atoms([atom("p", &[c("a")]), atom("q", &[c("a")])]);
        let mut d = Derivation::new(f);
        d.extend(trigger(&r1, &[("x", c("a"))])).unwrap();
        d.extend(trigger(&r2, &[("x", c("a"))])).unwrap();
        assert_eq!(d.rank_of(&atom("r", &[c("a")])), Some(1));

        let g = FactBase::from_atoms([atom("p", &[c("a")])]);
        let restricted = restrict(&d, &g).unwrap();
        assert_eq!(restricted.steps().len(), 2);
        assert_eq!(restricted.rank_of(&atom("r", &[c("a")])), Some(2));
    }

    #[test]
    fn rank_compatible_replay_drops_unproductive_trigger() {
        let r1 = rule("R1", &[atom("p", &[v("x")])], &[atom("q", &[v("x")])]);
        let r2 = rule("R2", &[atom("q", &[v("x")])], &[atom("r", &[v("x")])]);
        let r3 = rule("R3", &[atom("p", &[v("x")])], &[atom("r", &[v("x")])]);
        let rules = vec![r1.clone(), r2.clone(), r3.clone()];
        let f = FactBase::from_atoms([atom("p", &[c("a")])]);
        let mut d1 = Derivation::new(f);
        d1.extend(trigger(&r1, &[("x", c("a"))])).unwrap();
        d1.extend(trigger(&r2, &[("x", c("a"))])).unwrap();
        d1.extend(trigger(&r3, &[("x", c("a"))])).unwrap();
        assert_eq!(d1.depth(), 2);

        let sorted = to_rank_compatible(&d1, &rules).unwrap();
        assert_eq!(sorted.depth(), 1);
        assert_eq!(sorted.steps().len(), 2);
        assert!(validate_derivation(VariantPolicy::free(Variant::Restricted), &sorted, &rules).is_ok());

        // an already rank-compatible derivation replays to the same triggers
        let again = to_rank_compatible(&sorted, &rules).unwrap();
        let keys: Vec<_> = again.steps().iter().map(|s| s.trigger.key().clone()).collect();
        let expect: Vec<_> = sorted.steps().iter().map(|s| s.trigger.key().clone()).collect();
        assert_eq!(keys, expect);
    }

    #[test]
    fn to_rank_compatible_requires_terminating_input() {
        let r = rule(
            "R",
            &[atom("p", &[v("x"), v("y")])],
            &[atom("p", &[v("y"), v("z")])],
        );
        let f = FactBase::from_atoms([atom("p", &[c("a"), c("b")])]);
        let d = Derivation::new(f);
        assert_eq!(
            to_rank_compatible(&d, &[r]).unwrap_err(),
            ChaseError::NotTerminating
        );
    }
}
