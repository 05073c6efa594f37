//! Homomorphism search, retractions, quasi-isomorphism canonical forms and
//! core computation.
//!
//! Homomorphism existence is NP-complete in general; the instances handled
//! here are small and determinism matters more than asymptotics, so the
//! search is a plain backtracking over source atoms with predicate-index
//! candidate filtering.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::kernel::{Atom, FactBase, Substitution, Term};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HomoError {
    #[error("expected a subset factbase")]
    NotASubset,
}

/// A homomorphism search problem: map `source` into `target` so that every
/// source atom lands in the target, extending `fixed` and leaving every term
/// of `frozen` in place. Constants are never remapped.
#[derive(Debug, Clone)]
pub struct HomSearchSpec<'a> {
    pub source: &'a BTreeSet<Atom>,
    pub target: &'a FactBase,
    pub fixed: Substitution,
    pub frozen: BTreeSet<Term>,
}

impl<'a> HomSearchSpec<'a> {
    pub fn plain(source: &'a BTreeSet<Atom>, target: &'a FactBase) -> Self {
        HomSearchSpec {
            source,
            target,
            fixed: Substitution::new(),
            frozen: BTreeSet::new(),
        }
    }
}

/// Enumerates homomorphisms for `spec` in a deterministic order; exhaustive
/// when `limit` is `None`. An empty result means no homomorphism exists.
pub fn find_homomorphisms(spec: &HomSearchSpec, limit: Option<usize>) -> Vec<Substitution> {
    let cap = limit.unwrap_or(usize::MAX);
    let mut results = Vec::new();
    if cap == 0 {
        return results;
    }
    let source: Vec<Atom> = spec.source.iter().cloned().collect();
    let mut matched = vec![false; source.len()];
    // Identity mappings are not stored in a Substitution, so boundness is
    // tracked separately: a variable bound to itself must stay bound.
    let mut binding: BTreeMap<Term, Term> = spec.fixed.iter().map(|(a, b)| (a.clone(), b.clone())).collect();
    search(&source, &mut matched, spec, &mut binding, &mut results, cap);
    results
}

fn bound_count(atom: &Atom, binding: &BTreeMap<Term, Term>, frozen: &BTreeSet<Term>) -> usize {
    atom.args
        .iter()
        .filter(|t| t.is_constant() || frozen.contains(t) || binding.contains_key(t))
        .count()
}

fn search(
    source: &[Atom],
    matched: &mut [bool],
    spec: &HomSearchSpec,
    binding: &mut BTreeMap<Term, Term>,
    results: &mut Vec<Substitution>,
    cap: usize,
) -> bool {
    // Pick the unmatched atom with the most bound arguments; ties break in
    // term order (the source list is sorted).
    let mut pick: Option<(usize, usize)> = None;
    for i in 0..source.len() {
        if matched[i] {
            continue;
        }
        let bc = bound_count(&source[i], binding, &spec.frozen);
        match pick {
            Some((best, _)) if best >= bc => {}
            _ => pick = Some((bc, i)),
        }
    }
    let Some((bc, i)) = pick else {
        results.push(Substitution::from_pairs(
            binding.iter().map(|(a, b)| (a.clone(), b.clone())),
        ));
        return results.len() >= cap;
    };

    let atom = &source[i];
    // a fully bound atom has exactly one possible image
    if bc == atom.args.len() {
        let image = Atom {
            pred: atom.pred.clone(),
            args: atom
                .args
                .iter()
                .map(|t| binding.get(t).cloned().unwrap_or_else(|| t.clone()))
                .collect(),
        };
        if !spec.target.contains(&image) {
            return false;
        }
        matched[i] = true;
        let stop = search(source, matched, spec, binding, results, cap);
        matched[i] = false;
        return stop;
    }
    matched[i] = true;
    for cand in spec.target.with_predicate(&atom.pred) {
        if let Some(new_binds) = try_match(atom, cand, binding, &spec.frozen) {
            for (from, to) in &new_binds {
                binding.insert(from.clone(), to.clone());
            }
            let stop = search(source, matched, spec, binding, results, cap);
            for (from, _) in &new_binds {
                binding.remove(from);
            }
            if stop {
                matched[i] = false;
                return true;
            }
        }
    }
    matched[i] = false;
    false
}

/// Bindings needed to map `atom` onto `cand`, or `None` if impossible under
/// the current binding. Repeated variables within the atom are checked.
fn try_match(
    atom: &Atom,
    cand: &Atom,
    binding: &BTreeMap<Term, Term>,
    frozen: &BTreeSet<Term>,
) -> Option<Vec<(Term, Term)>> {
    if atom.args.len() != cand.args.len() {
        return None;
    }
    let mut local: BTreeMap<&Term, &Term> = BTreeMap::new();
    for (s, t) in atom.args.iter().zip(cand.args.iter()) {
        if s.is_constant() || frozen.contains(s) {
            if s != t {
                return None;
            }
        } else if let Some(prev) = binding.get(s) {
            if prev != t {
                return None;
            }
        } else if let Some(&prev) = local.get(s) {
            if prev != t {
                return None;
            }
        } else {
            local.insert(s, t);
        }
    }
    Some(
        local
            .into_iter()
            .map(|(s, t)| (s.clone(), t.clone()))
            .collect(),
    )
}

/// True iff `sub` is a retract of `big`: some substitution that is the
/// identity on the terms of `sub` maps `big` onto `sub`.
pub fn exists_retraction(big: &FactBase, sub: &FactBase) -> Result<bool, HomoError> {
    Ok(find_retraction(big, sub)?.is_some())
}

/// Returns a witnessing retraction from `big` to `sub` if one exists.
pub fn find_retraction(big: &FactBase, sub: &FactBase) -> Result<Option<Substitution>, HomoError> {
    if !sub.is_subset_of(big) {
        return Err(HomoError::NotASubset);
    }
    let spec = HomSearchSpec {
        source: big.atoms(),
        target: sub,
        fixed: Substitution::new(),
        frozen: sub.terms(),
    };
    Ok(find_homomorphisms(&spec, Some(1)).into_iter().next())
}

/// True iff a homomorphism from `f` to `g` exists (constants fixed,
/// variables and nulls free).
pub fn exists_homomorphism(f: &FactBase, g: &FactBase) -> bool {
    let spec = HomSearchSpec::plain(f.atoms(), g);
    !find_homomorphisms(&spec, Some(1)).is_empty()
}

/// Computes a core of `f`: a subset-minimal retract. Deterministic given the
/// term order.
///
/// Repeatedly looks for an atom whose removal still admits a homomorphism
/// from the whole factbase, then collapses through the idempotent power of
/// that homomorphism. Testing single-atom retractions alone is not enough:
/// a factbase can need several atoms dropped by one collapse while no single
/// atom is removable by a retraction.
pub fn core_of(f: &FactBase) -> FactBase {
    let mut cur = f.clone();
    loop {
        let mut changed = false;
        let atoms: Vec<Atom> = cur.iter().cloned().collect();
        for atom in atoms {
            if !cur.contains(&atom) {
                continue;
            }
            let mut smaller = cur.clone();
            smaller.remove(&atom);
            if smaller.is_empty() {
                continue;
            }
            let spec = HomSearchSpec::plain(cur.atoms(), &smaller);
            if let Some(h) = find_homomorphisms(&spec, Some(1)).into_iter().next() {
                let collapse = idempotent_power(&h, &cur.terms());
                cur = FactBase::from_atoms(collapse.apply_to_atoms(cur.atoms()));
                changed = true;
            }
        }
        if !changed {
            return cur;
        }
    }
}

/// Iterates `h` until the resulting substitution is idempotent on `terms`.
/// The image of an idempotent endomorphism is a retract.
fn idempotent_power(h: &Substitution, terms: &BTreeSet<Term>) -> Substitution {
    let mut power = h.clone();
    loop {
        let idem = terms
            .iter()
            .all(|t| power.get(&power.get(t)) == power.get(t));
        if idem {
            return power;
        }
        power = power.compose(h);
    }
}

/// Canonical byte string: two factbases get equal forms iff they are
/// quasi-isomorphic (a kind-preserving bijective renaming, constants to
/// constants and variables/nulls to variables/nulls).
pub fn canonical_form(f: &FactBase) -> Vec<u8> {
    canonical_form_pinned(f, &BTreeSet::new())
}

/// Canonical form where every term in `pinned` must be fixed pointwise by the
/// renaming. The boundedness decider pins rule constants this way.
pub fn canonical_form_pinned(f: &FactBase, pinned: &BTreeSet<Term>) -> Vec<u8> {
    if f.is_empty() {
        return b"{}".to_vec();
    }
    let terms: Vec<Term> = f.terms().into_iter().collect();
    let term_idx: BTreeMap<&Term, usize> = terms.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let atoms: Vec<&Atom> = f.iter().collect();
    // occurrences[t] = (atom index, argument position) pairs
    let mut occurrences: Vec<Vec<(usize, usize)>> = vec![Vec::new(); terms.len()];
    for (ai, atom) in atoms.iter().enumerate() {
        for (pos, t) in atom.args.iter().enumerate() {
            occurrences[term_idx[t]].push((ai, pos));
        }
    }

    // Initial colors: pinned terms are singletons in term order, then all
    // remaining constants, then all variables/nulls.
    let pinned_here: Vec<usize> = terms
        .iter()
        .enumerate()
        .filter(|(_, t)| pinned.contains(t))
        .map(|(i, _)| i)
        .collect();
    let mut color: Vec<u32> = vec![0; terms.len()];
    for (rank, &i) in pinned_here.iter().enumerate() {
        color[i] = rank as u32;
    }
    let base = pinned_here.len() as u32;
    for (i, t) in terms.iter().enumerate() {
        if pinned.contains(t) {
            continue;
        }
        color[i] = if t.is_constant() { base } else { base + 1 };
    }

    let ctx = CanonCtx {
        terms: &terms,
        atoms: &atoms,
        occurrences: &occurrences,
        pinned,
    };
    refine(&mut color, &ctx);
    let mut best: Option<Vec<u8>> = None;
    canon_search(color, &ctx, &mut best);
    best.expect("nonempty factbase always has a labeling")
}

struct CanonCtx<'a> {
    terms: &'a [Term],
    atoms: &'a [&'a Atom],
    occurrences: &'a [Vec<(usize, usize)>],
    pinned: &'a BTreeSet<Term>,
}

/// Color refinement: split cells by the multiset of colored occurrences until
/// stable. Colors are rank indices of sorted signatures, so they are
/// invariant under renaming and deterministic.
fn refine(color: &mut Vec<u32>, ctx: &CanonCtx) {
    let term_idx: BTreeMap<&Term, usize> =
        ctx.terms.iter().enumerate().map(|(i, t)| (t, i)).collect();
    loop {
        let mut sigs: Vec<(u32, Vec<(String, Vec<u32>, usize)>)> = Vec::with_capacity(ctx.terms.len());
        for i in 0..ctx.terms.len() {
            let mut occ_sig: Vec<(String, Vec<u32>, usize)> = ctx.occurrences[i]
                .iter()
                .map(|&(ai, pos)| {
                    let atom = ctx.atoms[ai];
                    let arg_colors = atom.args.iter().map(|t| color[term_idx[t]]).collect();
                    (atom.pred.to_string(), arg_colors, pos)
                })
                .collect();
            occ_sig.sort();
            sigs.push((color[i], occ_sig));
        }
        let mut keys: Vec<&(u32, Vec<(String, Vec<u32>, usize)>)> = sigs.iter().collect();
        keys.sort();
        keys.dedup();
        let rank: BTreeMap<_, u32> = keys
            .iter()
            .enumerate()
            .map(|(r, k)| ((*k).clone(), r as u32))
            .collect();
        let new_color: Vec<u32> = sigs.iter().map(|s| rank[s]).collect();
        let old_cells = color.iter().collect::<BTreeSet<_>>().len();
        let new_cells = new_color.iter().collect::<BTreeSet<_>>().len();
        *color = new_color;
        if new_cells == old_cells {
            return;
        }
    }
}

fn canon_search(color: Vec<u32>, ctx: &CanonCtx, best: &mut Option<Vec<u8>>) {
    // cells grouped by color value, in color order
    let mut cells: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &c) in color.iter().enumerate() {
        cells.entry(c).or_default().push(i);
    }
    let target = cells.values().find(|cell| cell.len() > 1);
    match target {
        None => {
            let bytes = serialize(&color, ctx);
            if best.as_ref().map_or(true, |b| bytes < *b) {
                *best = Some(bytes);
            }
        }
        Some(cell) => {
            // Individualize each member in turn and recurse; exactness over
            // speed, the decider instances stay small.
            for &t in cell {
                let mut child = color.clone();
                let split = child[t];
                for c in child.iter_mut() {
                    if *c > split {
                        *c += 1;
                    }
                }
                child[t] = split + 1;
                // move the individualized term *before* its old cell-mates is
                // irrelevant for correctness; only the partition matters
                let mut refined = child;
                refine(&mut refined, ctx);
                canon_search(refined, ctx, best);
            }
        }
    }
}

fn serialize(color: &[u32], ctx: &CanonCtx) -> Vec<u8> {
    // Discrete partition: order terms by color, label per kind.
    let mut order: Vec<usize> = (0..ctx.terms.len()).collect();
    order.sort_by_key(|&i| color[i]);
    let mut label: BTreeMap<&Term, String> = BTreeMap::new();
    let (mut nc, mut nv) = (0usize, 0usize);
    for &i in &order {
        let t = &ctx.terms[i];
        let l = if ctx.pinned.contains(t) {
            format!("!{t}")
        } else if t.is_constant() {
            nc += 1;
            format!("c{}", nc - 1)
        } else {
            nv += 1;
            format!("v{}", nv - 1)
        };
        label.insert(t, l);
    }
    let mut lines: Vec<String> = ctx
        .atoms
        .iter()
        .map(|a| {
            let args: Vec<&str> = a.args.iter().map(|t| label[t].as_str()).collect();
            format!("{}({})", a.pred, args.join(","))
        })
        .collect();
    lines.sort();
    lines.join(";").into_bytes()
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

    fn fb(atoms: &[Atom]) -> FactBase {
        FactBase::from_atoms(atoms.iter().cloned())
    }

    #[test]
    fn finds_single_homomorphism() {
        let source: BTreeSet<Atom> = [atom("p", &[v("x"), v("y")])].into_iter().collect();
        let target = fb(&[atom("p", &[c("a"), c("b")])]);
        let homs = find_homomorphisms(&HomSearchSpec::plain(&source, &target), None);
        assert_eq!(homs.len(), 1);
        assert_eq!(homs[0].get(&v("x")), c("a"));
        assert_eq!(homs[0].get(&v("y")), c("b"));
    }

    #[test]
    fn path_of_two_does_not_map_to_single_edge() {
        let source: BTreeSet<Atom> = [
            atom("p", &[v("x"), v("y")]),
            atom("p", &[v("y"), v("z")]),
        ]
        .into_iter()
        .collect();
        let target = fb(&[atom("p", &[c("a"), c("b")])]);
        assert!(find_homomorphisms(&HomSearchSpec::plain(&source, &target), None).is_empty());
    }

    #[test]
    fn frozen_search_maps_new_null_back() {
        // F2 -> F1 fixing the terms of F1; some solution maps z1 to b
        let f1 = fb(&[
            atom("p", &[c("a"), c("b")]),
            atom("p", &[c("b"), v("z0")]),
            atom("p", &[v("z0"), c("b")]),
        ]);
        let f2_atoms: BTreeSet<Atom> = f1
            .iter()
            .cloned()
            .chain([
                atom("p", &[v("z0"), v("z1")]),
                atom("p", &[v("z1"), v("z0")]),
            ])
            .collect();
        let spec = HomSearchSpec {
            source: &f2_atoms,
            target: &f1,
            fixed: Substitution::new(),
            frozen: f1.terms(),
        };
        let homs = find_homomorphisms(&spec, None);
        assert!(!homs.is_empty());
        assert!(homs.iter().any(|h| h.get(&v("z1")) == c("b")));
    }

    #[test]
    fn retraction_examples() {
        // restricted chase halts on K2: z0 can retract onto a
        let f = fb(&[atom("p", &[c("a"), c("a")])]);
        let big = fb(&[
            atom("p", &[c("a"), c("a")]),
            atom("p", &[c("a"), v("z0")]),
        ]);
        assert!(exists_retraction(&big, &f).unwrap());

        // no retraction from F'' to F'
        let big = fb(&[
            atom("p", &[c("a"), v("w")]),
            atom("p", &[c("a"), c("a")]),
            atom("p", &[v("w"), v("z0")]),
        ]);
        let sub = fb(&[atom("p", &[c("a"), v("w")])]);
        assert!(!exists_retraction(&big, &sub).unwrap());

        // identity
        assert!(exists_retraction(&big, &big).unwrap());

        // precondition violated
        let other = fb(&[atom("q", &[c("a")])]);
        assert_eq!(exists_retraction(&big, &other), Err(HomoError::NotASubset));
    }

    #[test]
    fn homomorphism_examples() {
        let f = fb(&[
            atom("p", &[c("a"), v("w")]),
            atom("p", &[c("a"), c("a")]),
            atom("p", &[v("w"), v("z0")]),
        ]);
        let g = fb(&[atom("p", &[c("a"), c("a")])]);
        assert!(exists_homomorphism(&f, &g));

        // constants are immovable
        let f = fb(&[atom("p", &[c("a"), c("b")])]);
        let g = fb(&[atom("p", &[c("b"), c("a")])]);
        assert!(!exists_homomorphism(&f, &g));

        assert!(exists_homomorphism(&g, &g));
    }

    #[test]
    fn core_examples() {
        let f = fb(&[
            atom("p", &[c("a"), v("w")]),
            atom("p", &[c("a"), c("a")]),
            atom("p", &[v("w"), v("z0")]),
        ]);
        assert_eq!(core_of(&f), fb(&[atom("p", &[c("a"), c("a")])]));

        let ground = fb(&[atom("p", &[c("a"), c("b")]), atom("q", &[c("b")])]);
        assert_eq!(core_of(&ground), ground);

        let f = fb(&[atom("p", &[v("x"), v("y")]), atom("p", &[c("a"), c("b")])]);
        assert_eq!(core_of(&f), fb(&[atom("p", &[c("a"), c("b")])]));
    }

    #[test]
    fn core_handles_simultaneous_collapse() {
        // no single atom is removable by a retraction, yet the core drops two
        let f2 = fb(&[
            atom("p", &[c("a"), c("b")]),
            atom("p", &[c("b"), v("z0")]),
            atom("p", &[v("z0"), c("b")]),
            atom("p", &[v("z0"), v("z1")]),
            atom("p", &[v("z1"), v("z0")]),
        ]);
        let f1 = fb(&[
            atom("p", &[c("a"), c("b")]),
            atom("p", &[c("b"), v("z0")]),
            atom("p", &[v("z0"), c("b")]),
        ]);
        assert_eq!(core_of(&f2), f1);
    }

    #[test]
    fn canonical_form_examples() {
        let a = fb(&[atom("p", &[c("a"), v("X")])]);
        let b = fb(&[atom("p", &[c("a"), v("Y")])]);
        assert_eq!(canonical_form(&a), canonical_form(&b));

        let g = fb(&[atom("p", &[c("a"), c("b")])]);
        assert_ne!(canonical_form(&a), canonical_form(&g));

        let h = fb(&[atom("p", &[c("c"), c("d")])]);
        assert_eq!(canonical_form(&g), canonical_form(&h));

        // loop vs edge
        let l = fb(&[atom("p", &[c("a"), c("a")])]);
        assert_ne!(canonical_form(&l), canonical_form(&g));
    }

    #[test]
    fn canonical_form_pinned_distinguishes_pinned_constants() {
        let a = fb(&[atom("p", &[c("a"), c("b")])]);
        let b = fb(&[atom("p", &[c("b"), c("a")])]);
        assert_eq!(canonical_form(&a), canonical_form(&b));
        let pinned: BTreeSet<Term> = [c("a")].into_iter().collect();
        assert_ne!(
            canonical_form_pinned(&a, &pinned),
            canonical_form_pinned(&b, &pinned)
        );
    }

    #[test]
    fn retraction_implies_homomorphism() {
        let big = fb(&[
            atom("p", &[c("a"), c("a")]),
            atom("p", &[c("a"), v("z0")]),
            atom("q", &[v("z0")]),
        ]);
        for atom_to_drop in big.iter() {
            let mut sub = big.clone();
            sub.remove(atom_to_drop);
            if exists_retraction(&big, &sub).unwrap() {
                assert!(exists_homomorphism(&big, &sub));
            }
        }
    }

    #[test]
    fn core_is_idempotent() {
        let f = fb(&[
            atom("p", &[c("a"), v("w")]),
            atom("p", &[c("a"), c("a")]),
            atom("p", &[v("w"), v("z0")]),
            atom("q", &[v("w"), v("w")]),
        ]);
        let once = core_of(&f);
        let twice = core_of(&once);
        assert_eq!(canonical_form(&once), canonical_form(&twice));
    }

    proptest! {
        #[test]
        fn canonical_form_invariant_under_renaming(f in factbase_strategy(), seed in 0u64..1000) {
            let renamed = rename(&f, seed);
            prop_assert_eq!(canonical_form(&f), canonical_form(&renamed));
        }
    }

    fn factbase_strategy() -> impl Strategy<Value = FactBase> {
        let term = prop_oneof![
            prop::sample::select(vec!["a", "b", "c"]).prop_map(Term::constant),
            prop::sample::select(vec!["x", "y", "z"]).prop_map(Term::variable),
        ];
        prop::collection::vec(
            (prop::sample::select(vec!["p", "q"]), prop::collection::vec(term, 1..3)),
            1..5,
        )
        .prop_map(|atoms| {
            FactBase::from_atoms(atoms.into_iter().map(|(p, args)| Atom::new(p, args)))
        })
    }

    /// Kind-preserving bijective renaming derived from a seed.
    fn rename(f: &FactBase, seed: u64) -> FactBase {
        let inv = crate::kernel::term_inventory(f);
        let consts: Vec<Term> = inv.consts.iter().cloned().collect();
        let vars: Vec<Term> = inv.vars.iter().cloned().collect();
        let mut map: BTreeMap<Term, Term> = BTreeMap::new();
        let perm = |n: usize, s: u64| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..n).collect();
            let mut state = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                idx.swap(i, j);
            }
            idx
        };
        for (i, t) in consts.iter().enumerate() {
            let p = perm(consts.len(), seed)[i];
            map.insert(t.clone(), Term::constant(format!("k{p}")));
        }
        for (i, t) in vars.iter().enumerate() {
            let p = perm(vars.len(), seed.wrapping_add(7))[i];
            map.insert(t.clone(), Term::variable(format!("W{p}")));
        }
        FactBase::from_atoms(f.iter().map(|a| Atom {
            pred: a.pred.clone(),
            args: a.args.iter().map(|t| map[t].clone()).collect(),
        }))
    }
}
