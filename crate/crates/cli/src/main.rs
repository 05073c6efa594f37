//! `chase` — run chase variants on a knowledge base and decide k-boundedness
//! of rulesets.
//!
//! Exit codes: 0 terminated/bounded, 1 not bounded, 2 cap or budget reached,
//! 64 usage error, 65 parse error.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use chase_core::bounded::{
    decide, BoundedError, BoundednessQuery, Budget, DeciderVariant, Quantifier,
};
use chase_core::chase::{run, Caps, Status, TieBreak, Variant, VariantPolicy};
use chase_core::kernel::Signature;
use chase_core::rules::Rule;
use clap::{Args, Parser, Subcommand, ValueEnum};

use chase_cli::parser::{parse_facts, parse_rules};
use chase_cli::report;

const EXIT_OK: i32 = 0;
const EXIT_UNBOUNDED: i32 = 1;
const EXIT_CAP: i32 = 2;
const EXIT_USAGE: i32 = 64;
const EXIT_PARSE: i32 = 65;

#[derive(Parser)]
#[command(
    name = "chase",
    version,
    about = "Chase engine for existential rules with a k-boundedness decider"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a chase variant on a rule and fact file
    Run(RunArgs),
    /// Decide whether a ruleset is k-bounded for a chase variant
    Bounded(BoundedArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RunVariant {
    O,
    So,
    R,
    E,
}

#[derive(Clone, Copy, ValueEnum)]
enum TieBreakArg {
    Lex,
    Fifo,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunOut {
    Text,
    Json,
    Dot,
}

#[derive(Args)]
struct RunArgs {
    /// Rule file
    #[arg(long)]
    rules: PathBuf,
    /// Fact file
    #[arg(long)]
    facts: PathBuf,
    /// Chase variant
    #[arg(long, value_enum)]
    variant: RunVariant,
    /// Breadth-first scheduling
    #[arg(long)]
    bf: bool,
    #[arg(long, default_value_t = 100)]
    max_depth: u32,
    #[arg(long, default_value_t = 100_000)]
    max_triggers: usize,
    #[arg(long, value_enum, default_value = "lex")]
    tie_break: TieBreakArg,
    #[arg(long, value_enum, default_value = "text")]
    out: RunOut,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundedVariant {
    O,
    Bfo,
    So,
    Bfso,
    R,
    Bfr,
}

#[derive(Clone, Copy, ValueEnum)]
enum QuantifierArg {
    All,
    Exists,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundedOut {
    Text,
    Json,
}

#[derive(Args)]
struct BoundedArgs {
    /// Rule file
    #[arg(long)]
    rules: PathBuf,
    /// Chase variant, optionally breadth-first
    #[arg(long, value_enum)]
    variant: BoundedVariant,
    /// The depth bound to test
    #[arg(long)]
    k: u32,
    /// Bound all fair derivations or require one
    #[arg(long, value_enum, default_value = "all")]
    quantifier: QuantifierArg,
    #[arg(long, default_value_t = 1_000_000)]
    max_factbases: u64,
    #[arg(long, default_value_t = 10_000_000)]
    max_derivations: u64,
    /// Time limit in seconds
    #[arg(long, default_value_t = 600.0)]
    time_limit: f64,
    #[arg(long, value_enum, default_value = "text")]
    out: BoundedOut,
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(args) => cmd_chase(args),
        Command::Bounded(args) => cmd_bounded(args),
    }
}

fn load_rules(path: &PathBuf) -> Result<(Vec<Arc<Rule>>, Signature), i32> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", path.display());
            return Err(EXIT_PARSE);
        }
    };
    parse_rules(&text).map_err(|e| {
        eprintln!("{}: {}", path.display(), report::parse_error_message(&e));
        EXIT_PARSE
    })
}

fn cmd_chase(args: RunArgs) -> i32 {
    let (rules, mut sig) = match load_rules(&args.rules) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let facts_text = match std::fs::read_to_string(&args.facts) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", args.facts.display());
            return EXIT_PARSE;
        }
    };
    let facts = match parse_facts(&facts_text, &mut sig) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{}: {}", args.facts.display(), report::parse_error_message(&e));
            return EXIT_PARSE;
        }
    };

    let policy = VariantPolicy {
        variant: match args.variant {
            RunVariant::O => Variant::Oblivious,
            RunVariant::So => Variant::SemiOblivious,
            RunVariant::R => Variant::Restricted,
            RunVariant::E => Variant::Equivalent,
        },
        breadth_first: args.bf,
        tie_break: match args.tie_break {
            TieBreakArg::Lex => TieBreak::Lex,
            TieBreakArg::Fifo => TieBreak::Fifo,
        },
    };
    let caps = Caps {
        max_depth: args.max_depth,
        max_triggers: args.max_triggers,
    };
    let outcome = run(&facts, &rules, policy, caps);
    let rendered = match args.out {
        RunOut::Text => report::chase_text(&outcome),
        RunOut::Json => format!("{}\n", report::chase_json(&outcome, policy)),
        RunOut::Dot => report::chase_dot(&outcome),
    };
    print!("{rendered}");
    match outcome.status {
        Status::Terminated => EXIT_OK,
        Status::DepthCapReached | Status::TriggerCapReached => EXIT_CAP,
    }
}

fn cmd_bounded(args: BoundedArgs) -> i32 {
    let variant = match args.variant {
        BoundedVariant::O => DeciderVariant::O,
        BoundedVariant::Bfo => DeciderVariant::BfO,
        BoundedVariant::So => DeciderVariant::So,
        BoundedVariant::Bfso => DeciderVariant::BfSo,
        BoundedVariant::R => DeciderVariant::R,
        BoundedVariant::Bfr => DeciderVariant::BfR,
    };
    let quantifier = match args.quantifier {
        QuantifierArg::All => Quantifier::ForAll,
        QuantifierArg::Exists => Quantifier::Exists,
    };
    if quantifier == Quantifier::Exists && variant.is_restricted_family() {
        eprintln!("existential k-boundedness for the restricted chase is an open problem");
        return EXIT_USAGE;
    }
    let (rules, _) = match load_rules(&args.rules) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let query = BoundednessQuery {
        rules,
        variant,
        quantifier,
        k: args.k,
    };
    let budget = Budget {
        max_factbases: args.max_factbases,
        max_derivations: args.max_derivations,
        time_limit: Duration::from_secs_f64(args.time_limit),
    };
    let verdict = match decide(&query, &budget) {
        Ok(v) => v,
        Err(e @ BoundedError::UnsupportedQuery) => {
            eprintln!("{e}");
            return EXIT_USAGE;
        }
        Err(e) => {
            eprintln!("{e}");
            return EXIT_PARSE;
        }
    };
    let rendered = match args.out {
        BoundedOut::Text => report::bounded_text(&query, &verdict),
        BoundedOut::Json => format!("{}\n", report::bounded_json(&query, &verdict)),
    };
    print!("{rendered}");
    if verdict.budget_exceeded {
        EXIT_CAP
    } else if verdict.bounded == Some(true) {
        EXIT_OK
    } else {
        EXIT_UNBOUNDED
    }
}
