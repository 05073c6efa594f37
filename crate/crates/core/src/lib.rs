//! Forward chaining (the chase) for existential rules, together with a
//! decision procedure for k-boundedness of rulesets.
//!
//! The crate is organized around five modules:
//!
//! * [`kernel`] — terms, atoms, signatures, factbases and substitutions;
//! * [`homo`] — homomorphism search, retractions, cores and canonical forms;
//! * [`rules`] — existential rules, triggers and single chase steps;
//! * [`chase`] — derivations, the chase variants (oblivious, semi-oblivious,
//!   restricted, equivalent) with free and breadth-first scheduling, chase
//!   graphs, ancestry and derivation surgery;
//! * [`bounded`] — the k-boundedness decider: canonical factbase enumeration
//!   and counterexample search.

pub mod bounded;
pub mod chase;
pub mod homo;
pub mod kernel;
pub mod rules;

pub use bounded::{
    decide, enumerate_factbases, prime_bound, BoundednessQuery, BoundednessVerdict, Budget,
    DeciderVariant, EnumerationSpec, Quantifier, TermKinds,
};
pub use chase::{
    ancestors, check_ancestry_preservation, enumerate_derivations, is_applicable, prime_ancestors,
    restrict, run, to_rank_compatible, validate_breadth_first_complete, validate_derivation, Caps,
    ChaseGraph, ChaseOutcome, Derivation, Status, TieBreak, Variant, VariantPolicy,
};
pub use homo::{
    canonical_form, core_of, exists_homomorphism, exists_retraction, find_homomorphisms,
    HomSearchSpec,
};
pub use kernel::{
    apply_substitution, make_atom, term_inventory, Atom, FactBase, KernelError, NullOrigin,
    Signature, Substitution, Term, TriggerKey,
};
pub use rules::{applicable_triggers, immediate_derivation, skolemize, NullNaming, Rule, Trigger};
