//! Chase and boundedness report rendering (text, JSON, DOT) and witness
//! replay.
//!
//! Fresh nulls get stable per-report names `Z0`, `Z1`, ... in production
//! order; in JSON every variable-like term is additionally prefixed with `?`
//! so case-insensitive consumers can still tell kinds apart.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chase_core::bounded::{BoundednessQuery, BoundednessVerdict, DeciderVariant, Quantifier};
use chase_core::chase::{is_applicable, ChaseOutcome, Derivation, Status, VariantPolicy};
use chase_core::kernel::{Atom, FactBase, Substitution, Term};
use chase_core::rules::{Rule, Trigger};
use serde_json::{json, Value};

use crate::parser::{parse_report_atom, ParseError};

/// Deterministic display names for the terms of a derivation.
pub struct TermNamer {
    null_names: BTreeMap<Term, String>,
}

impl TermNamer {
    pub fn for_derivation(d: &Derivation) -> TermNamer {
        let mut used: BTreeSet<String> = BTreeSet::new();
        for t in d.atoms().terms() {
            if let Term::Variable(n) = &t {
                used.insert(n.to_string());
            }
        }
        let mut null_names = BTreeMap::new();
        let mut counter = 0usize;
        let mut name_null = |t: &Term, null_names: &mut BTreeMap<Term, String>| {
            if matches!(t, Term::FreshNull(_)) && !null_names.contains_key(t) {
                loop {
                    let cand = format!("Z{counter}");
                    counter += 1;
                    if !used.contains(&cand) {
                        null_names.insert(t.clone(), cand);
                        break;
                    }
                }
            }
        };
        for atom in d.initial().iter() {
            for t in &atom.args {
                name_null(t, &mut null_names);
            }
        }
        for step in d.steps() {
            for atom in &step.produced {
                for t in &atom.args {
                    name_null(t, &mut null_names);
                }
            }
        }
        TermNamer { null_names }
    }

    pub fn term(&self, t: &Term) -> String {
        match t {
            Term::Constant(n) | Term::Variable(n) => n.to_string(),
            Term::FreshNull(_) => self
                .null_names
                .get(t)
                .cloned()
                .unwrap_or_else(|| t.to_string()),
        }
    }

    pub fn term_json(&self, t: &Term) -> String {
        if t.is_constant() {
            self.term(t)
        } else {
            format!("?{}", self.term(t))
        }
    }

    pub fn atom(&self, a: &Atom) -> String {
        let args: Vec<String> = a.args.iter().map(|t| self.term(t)).collect();
        format!("{}({})", a.pred, args.join(","))
    }

    pub fn atom_json(&self, a: &Atom) -> String {
        let args: Vec<String> = a.args.iter().map(|t| self.term_json(t)).collect();
        format!("{}({})", a.pred, args.join(","))
    }
}

fn status_str(s: Status) -> &'static str {
    match s {
        Status::Terminated => "terminated",
        Status::DepthCapReached => "depthCapReached",
        Status::TriggerCapReached => "triggerCapReached",
    }
}

/// Per-rank produced atoms plus the final status.
pub fn chase_text(outcome: &ChaseOutcome) -> String {
    let namer = TermNamer::for_derivation(&outcome.derivation);
    let d = &outcome.derivation;
    let mut by_rank: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for atom in d.atoms().iter() {
        let rank = d.rank_of(atom).expect("atom is in the derivation");
        by_rank.entry(rank).or_default().push(namer.atom(atom));
    }
    let mut out = String::new();
    for (rank, atoms) in &by_rank {
        out.push_str(&format!("rank {rank}: {}\n", atoms.join(", ")));
    }
    out.push_str(&format!(
        "status: {} (depth {}, {} triggers applied)\n",
        status_str(outcome.status),
        outcome.depth,
        d.steps().len()
    ));
    out
}

fn steps_json(d: &Derivation, namer: &TermNamer) -> Value {
    let steps: Vec<Value> = d
        .steps()
        .iter()
        .map(|step| {
            let sub: BTreeMap<String, String> = step
                .trigger
                .rule()
                .body_vars()
                .iter()
                .map(|v| {
                    let name = match v {
                        Term::Variable(n) => n.to_string(),
                        _ => unreachable!("body variables are variables"),
                    };
                    (name, namer.term_json(&step.trigger.pi().get(v)))
                })
                .collect();
            json!({
                "rule": step.trigger.rule().id(),
                "substitution": sub,
                "produced": step.produced.iter().map(|a| namer.atom_json(a)).collect::<Vec<_>>(),
                "rank": step.rank,
            })
        })
        .collect();
    Value::Array(steps)
}

/// Full chase outcome as JSON.
pub fn chase_json(outcome: &ChaseOutcome, policy: VariantPolicy) -> Value {
    let namer = TermNamer::for_derivation(&outcome.derivation);
    let d = &outcome.derivation;
    let atoms: Vec<Value> = d
        .atoms()
        .iter()
        .map(|a| json!({"atom": namer.atom_json(a), "rank": d.rank_of(a).unwrap()}))
        .collect();
    json!({
        "variant": policy.variant.short(),
        "breadthFirst": policy.breadth_first,
        "status": status_str(outcome.status),
        "depth": outcome.depth,
        "initial": d.initial().iter().map(|a| namer.atom_json(a)).collect::<Vec<_>>(),
        "steps": steps_json(d, &namer),
        "atoms": atoms,
    })
}

/// Chase graph in DOT: nodes are atoms labeled with their rank, edges are
/// labeled with the producing rule id; exactly one edge per (support atom,
/// produced atom) pair.
pub fn chase_dot(outcome: &ChaseOutcome) -> String {
    let namer = TermNamer::for_derivation(&outcome.derivation);
    let d = &outcome.derivation;
    let graph = d.graph();
    let mut out = String::from("digraph chase {\n");
    for (atom, rank) in &graph.nodes {
        let name = namer.atom(atom);
        out.push_str(&format!("  \"{name}\" [label=\"{name} [{rank}]\"];\n"));
    }
    for (from, to, step) in &graph.edges {
        let rule = d.steps()[*step].trigger.rule().id();
        out.push_str(&format!(
            "  \"{}\" -> \"{}\" [label=\"{}\"];\n",
            namer.atom(from),
            namer.atom(to),
            rule
        ));
    }
    out.push_str("}\n");
    out
}

pub fn quantifier_str(q: Quantifier) -> &'static str {
    match q {
        Quantifier::ForAll => "all",
        Quantifier::Exists => "exists",
    }
}

/// The structured verdict report.
pub fn bounded_json(query: &BoundednessQuery, verdict: &BoundednessVerdict) -> Value {
    let (witness_fb, witness_deriv) = match &verdict.witness {
        None => (Value::Null, Value::Null),
        Some((fb, d)) => {
            let namer = TermNamer::for_derivation(d);
            let atoms: Vec<String> = fb.iter().map(|a| namer.atom_json(a)).collect();
            (Value::Array(atoms.into_iter().map(Value::String).collect()), steps_json(d, &namer))
        }
    };
    json!({
        "variant": query.variant.as_str(),
        "quantifier": quantifier_str(query.quantifier),
        "k": query.k,
        "bounded": verdict.bounded.map(Value::Bool).unwrap_or(Value::Null),
        "witnessFactbase": witness_fb,
        "witnessDerivation": witness_deriv,
        "counters": {
            "factbasesChecked": verdict.factbases_checked,
            "derivationsExplored": verdict.derivations_explored,
        },
        "budgetExceeded": verdict.budget_exceeded,
    })
}

pub fn bounded_text(query: &BoundednessQuery, verdict: &BoundednessVerdict) -> String {
    let mut out = format!(
        "variant: {}  quantifier: {}  k: {}\n",
        query.variant.as_str(),
        quantifier_str(query.quantifier),
        query.k
    );
    match (verdict.budget_exceeded, verdict.bounded) {
        (true, _) => out.push_str("bounded: undecided (budget exceeded)\n"),
        (false, Some(b)) => out.push_str(&format!("bounded: {b}\n")),
        (false, None) => out.push_str("bounded: undecided\n"),
    }
    if let Some((fb, d)) = &verdict.witness {
        let namer = TermNamer::for_derivation(d);
        let atoms: Vec<String> = fb.iter().map(|a| namer.atom(a)).collect();
        out.push_str(&format!("witness factbase: {{{}}}\n", atoms.join(", ")));
        out.push_str("witness derivation:\n");
        for (i, step) in d.steps().iter().enumerate() {
            let produced: Vec<String> = step.produced.iter().map(|a| namer.atom(a)).collect();
            out.push_str(&format!(
                "  {}. {} {} rank {} produced {}\n",
                i + 1,
                step.trigger.rule().id(),
                step.trigger.pi(),
                step.rank,
                if produced.is_empty() {
                    "nothing".to_string()
                } else {
                    produced.join(", ")
                }
            ));
        }
    }
    out.push_str(&format!(
        "counters: {} factbases checked, {} derivations explored\n",
        verdict.factbases_checked, verdict.derivations_explored
    ));
    out
}

/// Rebuilds and validates a witness from its JSON report: re-parses the
/// factbase and the trigger steps, replays them checking X-applicability and
/// the reported ranks at every step. Returns the replayed derivation.
pub fn replay_witness(report: &Value, rules: &[Arc<Rule>]) -> Result<Derivation, String> {
    let variant = report["variant"]
        .as_str()
        .ok_or("report is missing `variant`")?;
    let quantifier = report["quantifier"].as_str().unwrap_or("all");
    let dec = parse_decider_variant(variant).ok_or_else(|| format!("bad variant `{variant}`"))?;
    let effective = if quantifier == "exists" {
        match dec {
            DeciderVariant::O | DeciderVariant::BfO => DeciderVariant::BfO,
            DeciderVariant::So | DeciderVariant::BfSo => DeciderVariant::BfSo,
            other => other,
        }
    } else {
        dec
    };
    let policy = effective.policy();

    let fb_texts = report["witnessFactbase"]
        .as_array()
        .ok_or("report has no witness factbase")?;
    let mut env: BTreeMap<String, Term> = BTreeMap::new();
    let mut fb = FactBase::new();
    for t in fb_texts {
        let text = t.as_str().ok_or("witness atom is not a string")?;
        let atom = parse_report_atom(text).map_err(|e| e.to_string())?;
        for term in &atom.args {
            if let Term::Variable(n) = term {
                env.insert(n.to_string(), term.clone());
            }
        }
        fb.insert(atom);
    }

    let steps = report["witnessDerivation"]
        .as_array()
        .ok_or("report has no witness derivation")?;
    let mut d = Derivation::new(fb);
    for (i, step) in steps.iter().enumerate() {
        let rule_id = step["rule"]
            .as_str()
            .ok_or_else(|| format!("step {i}: missing rule id"))?;
        let rule = rules
            .iter()
            .find(|r| r.id() == rule_id)
            .ok_or_else(|| format!("step {i}: unknown rule `{rule_id}`"))?;
        let sub_obj = step["substitution"]
            .as_object()
            .ok_or_else(|| format!("step {i}: missing substitution"))?;
        let mut pi = Substitution::new();
        for (var, val) in sub_obj {
            let text = val
                .as_str()
                .ok_or_else(|| format!("step {i}: binding of {var} is not a string"))?;
            let term = resolve_term(text, &env)
                .ok_or_else(|| format!("step {i}: unknown term `{text}`"))?;
            pi.bind(Term::variable(var.as_str()), term);
        }
        let trigger = Trigger::new(rule.clone(), pi);
        match is_applicable(policy, &d, &trigger) {
            Ok(true) => {}
            Ok(false) => return Err(format!("step {i}: trigger is not applicable")),
            Err(e) => return Err(format!("step {i}: {e}")),
        }
        let reported_rank = step["rank"]
            .as_u64()
            .ok_or_else(|| format!("step {i}: missing rank"))?;
        let rank = d
            .trigger_rank(&trigger)
            .map_err(|e| format!("step {i}: {e}"))?;
        if u64::from(rank) != reported_rank {
            return Err(format!(
                "step {i}: reported rank {reported_rank}, replay gives {rank}"
            ));
        }
        d.extend(trigger).map_err(|e| format!("step {i}: {e}"))?;
        // bind the names of freshly produced nulls
        let produced_texts = step["produced"]
            .as_array()
            .ok_or_else(|| format!("step {i}: missing produced atoms"))?;
        let actual = d.steps().last().expect("just extended").produced.clone();
        if produced_texts.len() != actual.len() {
            return Err(format!(
                "step {i}: reported {} produced atoms, replay gives {}",
                produced_texts.len(),
                actual.len()
            ));
        }
        for (text, atom) in produced_texts.iter().zip(actual.iter()) {
            let text = text
                .as_str()
                .ok_or_else(|| format!("step {i}: produced atom is not a string"))?;
            let parsed = parse_report_atom(text).map_err(|e| e.to_string())?;
            unify_produced(&parsed, atom, &mut env)
                .map_err(|e| format!("step {i}: {e}"))?;
        }
    }
    Ok(d)
}

fn parse_decider_variant(s: &str) -> Option<DeciderVariant> {
    match s {
        "o" => Some(DeciderVariant::O),
        "bfo" => Some(DeciderVariant::BfO),
        "so" => Some(DeciderVariant::So),
        "bfso" => Some(DeciderVariant::BfSo),
        "r" => Some(DeciderVariant::R),
        "bfr" => Some(DeciderVariant::BfR),
        _ => None,
    }
}

fn resolve_term(text: &str, env: &BTreeMap<String, Term>) -> Option<Term> {
    if let Some(name) = text.strip_prefix('?') {
        env.get(name).cloned()
    } else if text.starts_with(|c: char| c.is_uppercase()) {
        env.get(text).cloned()
    } else {
        Some(Term::constant(text))
    }
}

fn unify_produced(
    parsed: &Atom,
    actual: &Atom,
    env: &mut BTreeMap<String, Term>,
) -> Result<(), String> {
    if parsed.pred != actual.pred || parsed.args.len() != actual.args.len() {
        return Err(format!("produced atom mismatch: {parsed} vs replay"));
    }
    for (p, a) in parsed.args.iter().zip(actual.args.iter()) {
        match p {
            Term::Constant(_) => {
                if p != a {
                    return Err(format!("produced atom mismatch on constant {p}"));
                }
            }
            Term::Variable(name) => match env.get(name.as_ref()) {
                Some(bound) => {
                    if bound != a {
                        return Err(format!("produced atom name `{name}` is inconsistent"));
                    }
                }
                None => {
                    env.insert(name.to_string(), a.clone());
                }
            },
            Term::FreshNull(_) => unreachable!("report atoms never parse to nulls"),
        }
    }
    Ok(())
}

/// Convenience used by tests and main: parse error into the exit-65 message.
pub fn parse_error_message(e: &ParseError) -> String {
    format!("parse error: {e}")
}
