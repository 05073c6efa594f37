//! Parser for the rule and fact file syntax.
//!
//! Identifiers starting lowercase are predicates or constants, identifiers
//! starting uppercase are variables. A rule is `atom ("," atom)* "->" atom
//! ("," atom)* "."`, a fact line is `atom ("," atom)* "."`, `#` starts a line
//! comment, and a rule may carry an `@id` label:
//!
//! ```text
//! # people
//! @R1 human(X) -> parentOf(Z,X), human(Z).
//! human(alice).
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use chase_core::kernel::{Atom, Signature, Term};
use chase_core::rules::Rule;
use chase_core::FactBase;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: predicate `{pred}` used with arity {got}, previously {expected}")]
    ArityConflict {
        line: usize,
        col: usize,
        pred: String,
        expected: usize,
        got: usize,
    },
}

impl ParseError {
    fn at(pos: Pos, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: pos.line,
            col: pos.col,
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pos {
    line: usize,
    col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Arrow,
    At,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Dot => write!(f, "`.`"),
            Tok::Arrow => write!(f, "`->`"),
            Tok::At => write!(f, "`@`"),
        }
    }
}

fn tokenize(text: &str, allow_question_vars: bool) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1usize;
    let mut col = 0usize;
    while let Some(ch) = chars.next() {
        col += 1;
        let pos = Pos { line, col };
        match ch {
            '\n' => {
                line += 1;
                col = 0;
            }
            c if c.is_whitespace() => {}
            '#' => {
                for c in chars.by_ref() {
                    if c == '\n' {
                        line += 1;
                        col = 0;
                        break;
                    }
                }
            }
            '(' => out.push((Tok::LParen, pos)),
            ')' => out.push((Tok::RParen, pos)),
            ',' => out.push((Tok::Comma, pos)),
            '.' => out.push((Tok::Dot, pos)),
            '@' => out.push((Tok::At, pos)),
            '-' => match chars.next() {
                Some('>') => {
                    col += 1;
                    out.push((Tok::Arrow, pos));
                }
                _ => return Err(ParseError::at(pos, "expected `->`")),
            },
            '?' if allow_question_vars => {
                let mut word = String::from("?");
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        word.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                if word.len() == 1 {
                    return Err(ParseError::at(pos, "`?` must be followed by a name"));
                }
                out.push((Tok::Ident(word), pos));
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut word = String::new();
                word.push(c);
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        word.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push((Tok::Ident(word), pos));
            }
            c => return Err(ParseError::at(pos, format!("unexpected character `{c}`"))),
        }
    }
    Ok(out)
}

fn term_of(word: &str) -> Term {
    let first = word.chars().next().unwrap_or('a');
    if word.starts_with('?') {
        Term::variable(word.trim_start_matches('?'))
    } else if first.is_uppercase() {
        Term::variable(word)
    } else {
        Term::constant(word)
    }
}

struct Cursor {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

impl Cursor {
    fn peek(&self) -> Option<&(Tok, Pos)> {
        self.toks.get(self.at)
    }

    fn next(&mut self) -> Option<(Tok, Pos)> {
        let t = self.toks.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn last_pos(&self) -> Pos {
        self.toks
            .last()
            .map(|(_, p)| *p)
            .unwrap_or(Pos { line: 1, col: 1 })
    }

    fn expect(&mut self, want: &Tok) -> Result<Pos, ParseError> {
        match self.next() {
            Some((tok, pos)) if tok == *want => Ok(pos),
            Some((tok, pos)) => Err(ParseError::at(pos, format!("expected {want}, found {tok}"))),
            None => Err(ParseError::at(self.last_pos(), format!("expected {want}"))),
        }
    }

    fn atom(&mut self, sig: &mut Signature) -> Result<Atom, ParseError> {
        let (pred, ppos) = match self.next() {
            Some((Tok::Ident(w), pos)) => (w, pos),
            Some((tok, pos)) => {
                return Err(ParseError::at(pos, format!("expected a predicate, found {tok}")))
            }
            None => return Err(ParseError::at(self.last_pos(), "expected a predicate")),
        };
        if pred.starts_with(|c: char| c.is_uppercase()) || pred.starts_with('?') {
            return Err(ParseError::at(ppos, "predicates must start lowercase"));
        }
        self.expect(&Tok::LParen)?;
        let mut args = Vec::new();
        loop {
            match self.next() {
                Some((Tok::Ident(w), _)) => args.push(term_of(&w)),
                Some((tok, pos)) => {
                    return Err(ParseError::at(pos, format!("expected a term, found {tok}")))
                }
                None => return Err(ParseError::at(self.last_pos(), "expected a term")),
            }
            match self.next() {
                Some((Tok::Comma, _)) => {}
                Some((Tok::RParen, _)) => break,
                Some((tok, pos)) => {
                    return Err(ParseError::at(pos, format!("expected `,` or `)`, found {tok}")))
                }
                None => return Err(ParseError::at(self.last_pos(), "expected `,` or `)`")),
            }
        }
        let atom = Atom::new(pred.as_str(), args);
        match sig.arity(&pred) {
            Some(expected) if expected != atom.args.len() => Err(ParseError::ArityConflict {
                line: ppos.line,
                col: ppos.col,
                pred,
                expected,
                got: atom.args.len(),
            }),
            _ => {
                sig.observe_atom(&atom).expect("arity checked above");
                Ok(atom)
            }
        }
    }

    fn atom_list(
        &mut self,
        sig: &mut Signature,
        stop: &[Tok],
    ) -> Result<(Vec<Atom>, Tok, Pos), ParseError> {
        let mut atoms = vec![self.atom(sig)?];
        loop {
            match self.next() {
                Some((Tok::Comma, _)) => atoms.push(self.atom(sig)?),
                Some((tok, pos)) if stop.contains(&tok) => return Ok((atoms, tok, pos)),
                Some((tok, pos)) => {
                    return Err(ParseError::at(
                        pos,
                        format!("expected `,`, `.` or `->`, found {tok}"),
                    ))
                }
                None => {
                    return Err(ParseError::at(self.last_pos(), "statement is missing `.`"))
                }
            }
        }
    }
}

/// Parses a ruleset. Rules may be labeled with `@id`; unlabeled rules get
/// `R1`, `R2`, ... by position. Duplicate ids are rejected, as is a
/// predicate used with two different arities.
pub fn parse_rules(text: &str) -> Result<(Vec<Arc<Rule>>, Signature), ParseError> {
    let mut sig = Signature::new();
    let mut cur = Cursor {
        toks: tokenize(text, false)?,
        at: 0,
    };
    let mut rules = Vec::new();
    let mut ids = BTreeSet::new();
    let mut counter = 0usize;
    while cur.peek().is_some() {
        counter += 1;
        let (id, id_pos) = match cur.peek() {
            Some((Tok::At, pos)) => {
                let pos = *pos;
                cur.next();
                match cur.next() {
                    Some((Tok::Ident(w), _)) => (w, pos),
                    Some((tok, pos)) => {
                        return Err(ParseError::at(pos, format!("expected a rule id, found {tok}")))
                    }
                    None => return Err(ParseError::at(pos, "expected a rule id after `@`")),
                }
            }
            Some((_, pos)) => (format!("R{counter}"), *pos),
            None => unreachable!(),
        };
        if !ids.insert(id.clone()) {
            return Err(ParseError::at(id_pos, format!("duplicate rule id `{id}`")));
        }
        let (body, _, _) = cur.atom_list(&mut sig, &[Tok::Arrow])?;
        let (head, _, _) = cur.atom_list(&mut sig, &[Tok::Dot])?;
        let rule = Rule::new(id.as_str(), body, head)
            .map_err(|e| ParseError::at(id_pos, e.to_string()))?;
        rules.push(Arc::new(rule));
    }
    Ok((rules, sig))
}

/// Parses a factbase, extending `sig` (and checking arities against it).
pub fn parse_facts(text: &str, sig: &mut Signature) -> Result<FactBase, ParseError> {
    let mut cur = Cursor {
        toks: tokenize(text, false)?,
        at: 0,
    };
    let mut fb = FactBase::new();
    while cur.peek().is_some() {
        let (atoms, _, _) = cur.atom_list(sig, &[Tok::Dot])?;
        for a in atoms {
            fb.insert(a);
        }
    }
    Ok(fb)
}

/// Parses a single atom in report syntax, where variables may be written
/// with a `?` prefix (as in JSON output).
pub fn parse_report_atom(text: &str) -> Result<Atom, ParseError> {
    let mut sig = Signature::new();
    let mut cur = Cursor {
        toks: tokenize(text, true)?,
        at: 0,
    };
    let atom = cur.atom(&mut sig)?;
    if let Some((tok, pos)) = cur.peek() {
        return Err(ParseError::at(*pos, format!("trailing {tok}")));
    }
    Ok(atom)
}

/// Parses a report term: `?x` is a variable, anything uppercase-start too,
/// the rest are constants.
pub fn parse_report_term(text: &str) -> Term {
    term_of(text)
}

/// Canonical text of a ruleset in the file syntax.
pub fn print_rules(rules: &[Arc<Rule>]) -> String {
    let mut out = String::new();
    for r in rules {
        let body = r
            .body()
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        let head = r
            .head()
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str(&format!("@{} {} -> {}.\n", r.id(), body, head));
    }
    out
}

/// Canonical text of a factbase in the file syntax.
pub fn print_facts(fb: &FactBase) -> String {
    let mut out = String::new();
    for a in fb.iter() {
        out.push_str(&format!("{a}.\n"));
    }
    out
}
