//! Sorted first-order formulas: signatures, ASCII parser, canonical printer,
//! sort checking, substitution, unnesting, and syntactic complexity classes.
//!
//! Grammar (ASCII), loosest binding first:
//!
//! ```text
//! formula := or ('->' formula)?          right-associative
//! or      := and ('|' and)*
//! and     := unary ('&' unary)*
//! unary   := '!' unary
//!          | ('A' | 'E') IDENT (':' SORT)? unary
//!          | 'true' | 'false'
//!          | term ('=' term | '<' term | 'in' ('O' | 'm'))
//!          | '(' formula ')'
//! term    := prod ('+' prod)*
//! prod    := leaf ('*' leaf)*
//! leaf    := '(' term ')' | '[' term ']' | NUMBER | 'c' '{' elem '}' | IDENT
//! ```
//!
//! `[x]` is the Teichmuller symbol of the two-sorted signatures; `c{..}` is a
//! parameter constant whose payload uses the element grammar of
//! [`PerfElem::parse`]. Quantifier bodies bind as tightly as `!`, so the
//! canonical printer always parenthesizes them. Reserved words: `A`, `E`,
//! `in`, `O`, `m`, `true`, `false`.

use crate::error::{Error, Result};
use crate::field::PrimeConfig;
use crate::perfect::PerfElem;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

pub const SORT_W: &str = "W";
pub const SORT_R: &str = "R";
pub const SORT_G: &str = "G";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuncSym {
    pub name: String,
    pub args: Vec<String>,
    pub result: String,
}

/// A finite vocabulary: sorts (the first is the default for unannotated
/// binders), function symbols overloaded by argument sorts, named constants,
/// and relation symbols. `numerals` admits integer literals (read as repeated
/// 1 + ... + 1 in ring sorts); `params` names the sort whose elements may
/// appear as `c{..}` parameter constants.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature {
    name: String,
    sorts: Vec<String>,
    funcs: Vec<FuncSym>,
    consts: BTreeMap<String, String>,
    rels: Vec<(String, Vec<String>)>,
    numerals: bool,
    params: Option<String>,
}

fn ring_funcs(sort: &str) -> Vec<FuncSym> {
    vec![
        FuncSym { name: "+".into(), args: vec![sort.into(), sort.into()], result: sort.into() },
        FuncSym { name: "*".into(), args: vec![sort.into(), sort.into()], result: sort.into() },
    ]
}

impl Signature {
    /// L_r: one ring sort with + and *.
    pub fn ring() -> Signature {
        Signature {
            name: "ring".into(),
            sorts: vec![SORT_R.into()],
            funcs: ring_funcs(SORT_R),
            consts: BTreeMap::new(),
            rels: Vec::new(),
            numerals: true,
            params: None,
        }
    }

    /// L_val: the ring language plus the valuation-ring predicate O.
    pub fn valued_ring() -> Signature {
        let mut sig = Signature::ring();
        sig.name = "valued-ring".into();
        sig.rels.push(("O".into(), vec![SORT_R.into()]));
        sig
    }

    /// L_lcr: the ring language plus the maximal-ideal predicate m.
    pub fn local_ring() -> Signature {
        let mut sig = Signature::ring();
        sig.name = "local-ring".into();
        sig.rels.push(("m".into(), vec![SORT_R.into()]));
        sig
    }

    /// L_oag: one group sort with +, <, and the literal 0.
    pub fn ordered_group() -> Signature {
        Signature {
            name: "ordered-group".into(),
            sorts: vec![SORT_G.into()],
            funcs: vec![FuncSym {
                name: "+".into(),
                args: vec![SORT_G.into(), SORT_G.into()],
                result: SORT_G.into(),
            }],
            consts: BTreeMap::new(),
            rels: vec![("<".into(), vec![SORT_G.into(), SORT_G.into()])],
            numerals: false,
            params: None,
        }
    }

    /// L_oag plus the distinguished constant vp.
    pub fn ordered_group_vp() -> Signature {
        let mut sig = Signature::ordered_group();
        sig.name = "ordered-group-vp".into();
        sig.consts.insert("vp".into(), SORT_G.into());
        sig
    }

    /// Two sorts W and R, ring operations on each, and the Teichmuller
    /// symbol [ ] : R -> W. Unannotated binders default to W.
    pub fn two_sorted() -> Signature {
        let mut funcs = ring_funcs(SORT_W);
        funcs.extend(ring_funcs(SORT_R));
        funcs.push(FuncSym {
            name: "teich".into(),
            args: vec![SORT_R.into()],
            result: SORT_W.into(),
        });
        Signature {
            name: "two-sorted".into(),
            sorts: vec![SORT_W.into(), SORT_R.into()],
            funcs,
            consts: BTreeMap::new(),
            rels: Vec::new(),
            numerals: true,
            params: None,
        }
    }

    /// The two-sorted language extended for local-ring translation work: a
    /// distinguished W-constant c and the ideal predicate m on the R sort.
    pub fn two_sorted_local() -> Signature {
        let mut sig = Signature::two_sorted();
        sig.name = "two-sorted-local".into();
        sig.consts.insert("c".into(), SORT_W.into());
        sig.rels.push(("m".into(), vec![SORT_R.into()]));
        sig
    }

    /// Allow parameter constants `c{..}` on the default sort.
    pub fn with_params(mut self) -> Signature {
        self.params = Some(self.default_sort().to_string());
        if !self.name.ends_with("+params") {
            self.name = format!("{}+params", self.name);
        }
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sorts(&self) -> &[String] {
        &self.sorts
    }

    pub fn default_sort(&self) -> &str {
        &self.sorts[0]
    }

    pub fn is_multi_sorted(&self) -> bool {
        self.sorts.len() > 1
    }

    pub fn has_sort(&self, s: &str) -> bool {
        self.sorts.iter().any(|t| t == s)
    }

    pub fn allows_numerals(&self) -> bool {
        self.numerals
    }

    pub fn param_sort(&self) -> Option<&str> {
        self.params.as_deref()
    }

    pub fn const_sort(&self, name: &str) -> Option<&str> {
        self.consts.get(name).map(|s| s.as_str())
    }

    pub fn rel(&self, name: &str) -> Option<&[String]> {
        self.rels.iter().find(|(n, _)| n == name).map(|(_, a)| a.as_slice())
    }

    /// Overload lookup: the unique function symbol with this name whose
    /// argument sorts are all `arg_sort`.
    pub fn func(&self, name: &str, arg_sort: &str) -> Option<&FuncSym> {
        self.funcs.iter().find(|f| f.name == name && f.args.iter().all(|a| a == arg_sort))
    }

    pub fn func_overloads<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a FuncSym> {
        self.funcs.iter().filter(move |f| f.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Term {
    Var(String),
    /// Integer literal, read as a sum of 1s in the relevant sort.
    Int(u64),
    /// Named constant from the signature (c, vp).
    Const(String),
    /// Parameter constant with an exact payload.
    Param(PerfElem),
    /// Internal: a finite-structure element pinned by index. Produced by the
    /// expansion-based evaluator, never by the parser.
    Elem { sort: String, index: usize },
    App { func: String, args: Vec<Term> },
}

impl Term {
    pub fn var(name: impl Into<String>) -> Term {
        Term::Var(name.into())
    }

    pub fn add(args: Vec<Term>) -> Term {
        debug_assert!(args.len() >= 2);
        Term::App { func: "+".into(), args }
    }

    pub fn mul(args: Vec<Term>) -> Term {
        debug_assert!(args.len() >= 2);
        Term::App { func: "*".into(), args }
    }

    pub fn teich(arg: Term) -> Term {
        Term::App { func: "teich".into(), args: vec![arg] }
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self, Term::App { .. })
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Term::Var(v) => {
                out.insert(v.clone());
            }
            Term::App { args, .. } => {
                for a in args {
                    a.collect_vars(out);
                }
            }
            _ => {}
        }
    }

    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Formula {
    True,
    False,
    Eq(Term, Term),
    Less(Term, Term),
    InO(Term),
    InM(Term),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Forall(String, String, Box<Formula>),
    Exists(String, String, Box<Formula>),
}

/// Conjunction that flattens nested Ands and drops redundant units.
pub fn and_of(mut parts: Vec<Formula>) -> Formula {
    let mut flat = Vec::new();
    for f in parts.drain(..) {
        match f {
            Formula::True => {}
            Formula::False => return Formula::False,
            Formula::And(inner) => flat.extend(inner),
            other => flat.push(other),
        }
    }
    match flat.len() {
        0 => Formula::True,
        1 => flat.pop().unwrap(),
        _ => Formula::And(flat),
    }
}

pub fn or_of(mut parts: Vec<Formula>) -> Formula {
    let mut flat = Vec::new();
    for f in parts.drain(..) {
        match f {
            Formula::False => {}
            Formula::True => return Formula::True,
            Formula::Or(inner) => flat.extend(inner),
            other => flat.push(other),
        }
    }
    match flat.len() {
        0 => Formula::False,
        1 => flat.pop().unwrap(),
        _ => Formula::Or(flat),
    }
}

pub fn exists(var: impl Into<String>, sort: impl Into<String>, body: Formula) -> Formula {
    Formula::Exists(var.into(), sort.into(), Box::new(body))
}

pub fn forall(var: impl Into<String>, sort: impl Into<String>, body: Formula) -> Formula {
    Formula::Forall(var.into(), sort.into(), Box::new(body))
}

// ---------------------------------------------------------------------------
// Parsing

struct Parser<'a> {
    src: Vec<char>,
    pos: usize,
    sig: &'a Signature,
    cfg: Option<&'a Arc<PrimeConfig>>,
}

const RESERVED: &[&str] = &["A", "E", "in", "O", "m", "true", "false"];

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::parse(format!("{msg} (at position {})", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected '{c}'")))
        }
    }

    fn peek_ident(&mut self) -> Option<String> {
        self.skip_ws();
        let mut i = self.pos;
        let first = *self.src.get(i)?;
        if !(first.is_ascii_alphabetic() || first == '_') {
            return None;
        }
        let mut s = String::new();
        while i < self.src.len() && (self.src[i].is_ascii_alphanumeric() || self.src[i] == '_') {
            s.push(self.src[i]);
            i += 1;
        }
        Some(s)
    }

    fn take_ident(&mut self) -> Option<String> {
        let s = self.peek_ident()?;
        self.pos += s.chars().count();
        Some(s)
    }

    fn parse_formula(&mut self) -> Result<Formula> {
        let lhs = self.parse_or()?;
        self.skip_ws();
        if self.src.get(self.pos) == Some(&'-') && self.src.get(self.pos + 1) == Some(&'>') {
            self.pos += 2;
            let rhs = self.parse_formula()?;
            Ok(Formula::Implies(Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn parse_or(&mut self) -> Result<Formula> {
        let mut parts = vec![self.parse_and()?];
        while self.eat('|') {
            parts.push(self.parse_and()?);
        }
        if parts.len() == 1 {
            Ok(parts.pop().unwrap())
        } else {
            Ok(Formula::Or(parts))
        }
    }

    fn parse_and(&mut self) -> Result<Formula> {
        let mut parts = vec![self.parse_unary()?];
        while self.eat('&') {
            parts.push(self.parse_unary()?);
        }
        if parts.len() == 1 {
            Ok(parts.pop().unwrap())
        } else {
            Ok(Formula::And(parts))
        }
    }

    fn parse_unary(&mut self) -> Result<Formula> {
        if self.eat('!') {
            let body = self.parse_unary()?;
            return Ok(Formula::Not(Box::new(body)));
        }
        if let Some(word) = self.peek_ident() {
            match word.as_str() {
                "A" | "E" => {
                    self.pos += 1;
                    let var = self
                        .take_ident()
                        .ok_or_else(|| self.err("expected a variable after quantifier"))?;
                    if RESERVED.contains(&var.as_str()) {
                        return Err(self.err(&format!("'{var}' is reserved")));
                    }
                    let sort = if self.eat(':') {
                        let s = self.take_ident().ok_or_else(|| self.err("expected a sort"))?;
                        if !self.sig.has_sort(&s) {
                            return Err(self.err(&format!("unknown sort '{s}'")));
                        }
                        s
                    } else {
                        self.sig.default_sort().to_string()
                    };
                    let body = self.parse_unary()?;
                    return Ok(if word == "A" {
                        Formula::Forall(var, sort, Box::new(body))
                    } else {
                        Formula::Exists(var, sort, Box::new(body))
                    });
                }
                "true" => {
                    self.pos += 4;
                    return Ok(Formula::True);
                }
                "false" => {
                    self.pos += 5;
                    return Ok(Formula::False);
                }
                _ => {}
            }
        }
        // Try an atomic formula headed by a term; fall back to a
        // parenthesized formula when that fails.
        let save = self.pos;
        match self.parse_term_atom() {
            Ok(f) => Ok(f),
            Err(term_err) => {
                self.pos = save;
                if self.peek() == Some('(') {
                    self.pos += 1;
                    let f = self.parse_formula()?;
                    self.expect(')')?;
                    Ok(f)
                } else {
                    Err(term_err)
                }
            }
        }
    }

    fn parse_term_atom(&mut self) -> Result<Formula> {
        let t = self.parse_term()?;
        self.skip_ws();
        if self.eat('=') {
            let rhs = self.parse_term()?;
            return Ok(Formula::Eq(t, rhs));
        }
        if self.eat('<') {
            let rhs = self.parse_term()?;
            return Ok(Formula::Less(t, rhs));
        }
        if self.peek_ident().as_deref() == Some("in") {
            self.pos += 2;
            let rel = self.take_ident().ok_or_else(|| self.err("expected O or m after 'in'"))?;
            return match rel.as_str() {
                "O" => Ok(Formula::InO(t)),
                "m" => Ok(Formula::InM(t)),
                _ => Err(self.err(&format!("unknown membership predicate '{rel}'"))),
            };
        }
        Err(self.err("expected '=', '<', or 'in' after term"))
    }

    fn parse_term(&mut self) -> Result<Term> {
        let mut parts = vec![self.parse_prod()?];
        while self.eat('+') {
            parts.push(self.parse_prod()?);
        }
        if parts.len() == 1 {
            Ok(parts.pop().unwrap())
        } else {
            Ok(Term::App { func: "+".into(), args: parts })
        }
    }

    fn parse_prod(&mut self) -> Result<Term> {
        let mut parts = vec![self.parse_leaf()?];
        while self.eat('*') {
            parts.push(self.parse_leaf()?);
        }
        if parts.len() == 1 {
            Ok(parts.pop().unwrap())
        } else {
            Ok(Term::App { func: "*".into(), args: parts })
        }
    }

    fn parse_leaf(&mut self) -> Result<Term> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let t = self.parse_term()?;
                self.expect(')')?;
                Ok(t)
            }
            Some('[') => {
                self.pos += 1;
                let t = self.parse_term()?;
                self.expect(']')?;
                Ok(Term::App { func: "teich".into(), args: vec![t] })
            }
            Some(c) if c.is_ascii_digit() => {
                let mut v: u64 = 0;
                while let Some(&d) = self.src.get(self.pos) {
                    if !d.is_ascii_digit() {
                        break;
                    }
                    v = v
                        .checked_mul(10)
                        .and_then(|v| v.checked_add(d as u64 - '0' as u64))
                        .ok_or_else(|| self.err("integer literal too large"))?;
                    self.pos += 1;
                }
                Ok(Term::Int(v))
            }
            _ => {
                let name =
                    self.take_ident().ok_or_else(|| self.err("expected a term"))?;
                if name == "c" && self.src.get(self.pos) == Some(&'{') {
                    if self.sig.param_sort().is_none() {
                        return Err(self.err("parameter constants are not allowed here"));
                    }
                    let cfg = self
                        .cfg
                        .ok_or_else(|| self.err("parameter constants need a prime config"))?;
                    self.pos += 1;
                    let start = self.pos;
                    while self.pos < self.src.len() && self.src[self.pos] != '}' {
                        self.pos += 1;
                    }
                    if self.pos == self.src.len() {
                        return Err(self.err("unterminated parameter constant"));
                    }
                    let payload: String = self.src[start..self.pos].iter().collect();
                    self.pos += 1;
                    let elem = PerfElem::parse(cfg, &payload)?;
                    return Ok(Term::Param(elem));
                }
                if RESERVED.contains(&name.as_str()) {
                    return Err(self.err(&format!("'{name}' is reserved")));
                }
                if self.sig.const_sort(&name).is_some() {
                    Ok(Term::Const(name))
                } else {
                    Ok(Term::Var(name))
                }
            }
        }
    }
}

/// Parse and sort-check a formula. `cfg` is needed only when the signature
/// admits `c{..}` parameter constants.
pub fn parse_formula(
    sig: &Signature,
    cfg: Option<&Arc<PrimeConfig>>,
    text: &str,
) -> Result<Formula> {
    let mut p = Parser { src: text.chars().collect(), pos: 0, sig, cfg };
    let f = p.parse_formula()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing input"));
    }
    check_sorts(&f, sig)?;
    Ok(f)
}

// ---------------------------------------------------------------------------
// Printing

fn fmt_term(t: &Term, prec: u8, out: &mut String) {
    match t {
        Term::Var(v) => out.push_str(v),
        Term::Const(c) => out.push_str(c),
        Term::Int(v) => out.push_str(&v.to_string()),
        Term::Param(e) => {
            out.push_str("c{");
            out.push_str(&e.render());
            out.push('}');
        }
        Term::Elem { sort, index } => {
            out.push('#');
            out.push_str(sort);
            out.push(':');
            out.push_str(&index.to_string());
        }
        Term::App { func, args } => match func.as_str() {
            "teich" => {
                out.push('[');
                fmt_term(&args[0], 1, out);
                out.push(']');
            }
            "+" => {
                if prec > 1 {
                    out.push('(');
                }
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(" + ");
                    }
                    fmt_term(a, 2, out);
                }
                if prec > 1 {
                    out.push(')');
                }
            }
            "*" => {
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push('*');
                    }
                    fmt_term(a, 2, out);
                }
            }
            other => {
                out.push_str(other);
                out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    fmt_term(a, 1, out);
                }
                out.push(')');
            }
        },
    }
}

pub fn render_term(t: &Term) -> String {
    let mut s = String::new();
    fmt_term(t, 1, &mut s);
    s
}

fn node_prec(f: &Formula) -> u8 {
    match f {
        Formula::Implies(..) => 1,
        Formula::Or(..) => 2,
        Formula::And(..) => 3,
        _ => 4,
    }
}

fn fmt_formula(f: &Formula, prec: u8, multi: bool, out: &mut String) {
    let np = node_prec(f);
    let wrap = np < prec;
    if wrap {
        out.push('(');
    }
    match f {
        Formula::True => out.push_str("true"),
        Formula::False => out.push_str("false"),
        Formula::Eq(a, b) => {
            fmt_term(a, 1, out);
            out.push_str(" = ");
            fmt_term(b, 1, out);
        }
        Formula::Less(a, b) => {
            fmt_term(a, 1, out);
            out.push_str(" < ");
            fmt_term(b, 1, out);
        }
        Formula::InO(t) => {
            fmt_term(t, 1, out);
            out.push_str(" in O");
        }
        Formula::InM(t) => {
            fmt_term(t, 1, out);
            out.push_str(" in m");
        }
        Formula::Not(inner) => {
            out.push_str("!(");
            fmt_formula(inner, 1, multi, out);
            out.push(')');
        }
        Formula::And(parts) => {
            for (i, part) in parts.iter().enumerate() {
                if i > 0 {
                    out.push_str(" & ");
                }
                fmt_formula(part, 4, multi, out);
            }
        }
        Formula::Or(parts) => {
            for (i, part) in parts.iter().enumerate() {
                if i > 0 {
                    out.push_str(" | ");
                }
                fmt_formula(part, 3, multi, out);
            }
        }
        Formula::Implies(a, b) => {
            fmt_formula(a, 2, multi, out);
            out.push_str(" -> ");
            fmt_formula(b, 1, multi, out);
        }
        Formula::Forall(v, s, body) | Formula::Exists(v, s, body) => {
            out.push(if matches!(f, Formula::Forall(..)) { 'A' } else { 'E' });
            out.push(' ');
            out.push_str(v);
            if multi {
                out.push(':');
                out.push_str(s);
            }
            if matches!(body.as_ref(), Formula::Forall(..) | Formula::Exists(..)) {
                // Quantifier chains print without intermediate parentheses.
                out.push(' ');
                fmt_formula(body, 4, multi, out);
            } else {
                out.push_str(" (");
                fmt_formula(body, 1, multi, out);
                out.push(')');
            }
        }
    }
    if wrap {
        out.push(')');
    }
}

/// Canonical printing; `parse(render(f))` is `f` for sort-correct formulas.
pub fn render_formula(f: &Formula, sig: &Signature) -> String {
    let mut s = String::new();
    fmt_formula(f, 1, sig.is_multi_sorted(), &mut s);
    s
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_term(self))
    }
}

// ---------------------------------------------------------------------------
// Sort checking

/// Infer a term's sort without committing: None when the term is sort-
/// polymorphic (integer literals and sums/products of them).
pub(crate) fn infer_sort(
    t: &Term,
    sig: &Signature,
    env: &BTreeMap<String, String>,
) -> Option<String> {
    match t {
        Term::Var(v) => {
            Some(env.get(v).cloned().unwrap_or_else(|| sig.default_sort().to_string()))
        }
        Term::Int(_) => None,
        Term::Const(c) => sig.const_sort(c).map(|s| s.to_string()),
        Term::Param(_) => sig.param_sort().map(|s| s.to_string()),
        Term::Elem { sort, .. } => Some(sort.clone()),
        Term::App { func, args } => {
            if func == "teich" {
                return Some(SORT_W.to_string());
            }
            args.iter().find_map(|a| infer_sort(a, sig, env))
        }
    }
}

/// Check a term against an expected sort (or the best inferable one) and
/// return the sort it was checked at.
pub fn term_sort(
    t: &Term,
    sig: &Signature,
    env: &BTreeMap<String, String>,
    expected: Option<&str>,
) -> Result<String> {
    match t {
        Term::Var(v) => {
            let s = env.get(v).cloned().unwrap_or_else(|| sig.default_sort().to_string());
            if let Some(e) = expected {
                if e != s {
                    return Err(Error::sort(format!("variable {v} has sort {s}, expected {e}")));
                }
            }
            Ok(s)
        }
        Term::Int(v) => {
            let s = expected.unwrap_or(sig.default_sort()).to_string();
            if !sig.has_sort(&s) {
                return Err(Error::sort(format!("unknown sort {s}")));
            }
            if !sig.allows_numerals() && *v > 0 {
                return Err(Error::sort(format!(
                    "integer literal {v} is not meaningful in the {} signature",
                    sig.name()
                )));
            }
            Ok(s)
        }
        Term::Const(c) => {
            let s = sig
                .const_sort(c)
                .ok_or_else(|| Error::sort(format!("unknown constant {c}")))?
                .to_string();
            if let Some(e) = expected {
                if e != s {
                    return Err(Error::sort(format!("constant {c} has sort {s}, expected {e}")));
                }
            }
            Ok(s)
        }
        Term::Param(_) => {
            let s = sig
                .param_sort()
                .ok_or_else(|| Error::sort("parameter constants are not allowed here".to_string()))?
                .to_string();
            if let Some(e) = expected {
                if e != s {
                    return Err(Error::sort(format!("parameter has sort {s}, expected {e}")));
                }
            }
            Ok(s)
        }
        Term::Elem { sort, .. } => {
            if let Some(e) = expected {
                if e != sort {
                    return Err(Error::sort(format!("element has sort {sort}, expected {e}")));
                }
            }
            Ok(sort.clone())
        }
        Term::App { func, args } => {
            if func == "teich" {
                let overload = sig
                    .func("teich", SORT_R)
                    .ok_or_else(|| Error::sort("no Teichmuller symbol in this signature".to_string()))?;
                if args.len() != 1 {
                    return Err(Error::sort("[ ] takes one argument".to_string()));
                }
                term_sort(&args[0], sig, env, Some(SORT_R))?;
                let res = overload.result.clone();
                if let Some(e) = expected {
                    if e != res {
                        return Err(Error::sort(format!("[ ] has sort {res}, expected {e}")));
                    }
                }
                return Ok(res);
            }
            if args.len() < 2 {
                return Err(Error::sort(format!("{func} needs at least two arguments")));
            }
            let s = match expected {
                Some(e) => e.to_string(),
                None => args
                    .iter()
                    .find_map(|a| infer_sort(a, sig, env))
                    .unwrap_or_else(|| sig.default_sort().to_string()),
            };
            if sig.func(func, &s).is_none() {
                return Err(Error::sort(format!("no operation {func} on sort {s}")));
            }
            for a in args {
                term_sort(a, sig, env, Some(&s))?;
            }
            Ok(s)
        }
    }
}

fn check_rec(f: &Formula, sig: &Signature, env: &mut BTreeMap<String, String>) -> Result<()> {
    match f {
        Formula::True | Formula::False => Ok(()),
        Formula::Eq(a, b) => {
            let s = infer_sort(a, sig, env)
                .or_else(|| infer_sort(b, sig, env))
                .unwrap_or_else(|| sig.default_sort().to_string());
            term_sort(a, sig, env, Some(&s))?;
            term_sort(b, sig, env, Some(&s))?;
            Ok(())
        }
        Formula::Less(a, b) => {
            let sorts =
                sig.rel("<").ok_or_else(|| Error::sort("no order relation here".to_string()))?;
            let s = sorts[0].clone();
            term_sort(a, sig, env, Some(&s))?;
            term_sort(b, sig, env, Some(&s))?;
            Ok(())
        }
        Formula::InO(t) => {
            let sorts = sig
                .rel("O")
                .ok_or_else(|| Error::sort("no O predicate in this signature".to_string()))?;
            term_sort(t, sig, env, Some(&sorts[0].clone()))?;
            Ok(())
        }
        Formula::InM(t) => {
            let sorts = sig
                .rel("m")
                .ok_or_else(|| Error::sort("no m predicate in this signature".to_string()))?;
            term_sort(t, sig, env, Some(&sorts[0].clone()))?;
            Ok(())
        }
        Formula::Not(inner) => check_rec(inner, sig, env),
        Formula::And(parts) | Formula::Or(parts) => {
            for p in parts {
                check_rec(p, sig, env)?;
            }
            Ok(())
        }
        Formula::Implies(a, b) => {
            check_rec(a, sig, env)?;
            check_rec(b, sig, env)
        }
        Formula::Forall(v, s, body) | Formula::Exists(v, s, body) => {
            if !sig.has_sort(s) {
                return Err(Error::sort(format!("unknown sort {s}")));
            }
            let prev = env.insert(v.clone(), s.clone());
            let r = check_rec(body, sig, env);
            match prev {
                Some(old) => {
                    env.insert(v.clone(), old);
                }
                None => {
                    env.remove(v);
                }
            }
            r
        }
    }
}

/// Well-sortedness. Free variables default to the signature's first sort.
pub fn check_sorts(f: &Formula, sig: &Signature) -> Result<()> {
    let mut env = BTreeMap::new();
    check_rec(f, sig, &mut env)
}

// ---------------------------------------------------------------------------
// Variables and substitution

fn free_vars_rec(f: &Formula, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
    let term_vars = |t: &Term, bound: &Vec<String>, out: &mut BTreeSet<String>| {
        for v in t.vars() {
            if !bound.contains(&v) {
                out.insert(v);
            }
        }
    };
    match f {
        Formula::True | Formula::False => {}
        Formula::Eq(a, b) | Formula::Less(a, b) => {
            term_vars(a, bound, out);
            term_vars(b, bound, out);
        }
        Formula::InO(t) | Formula::InM(t) => term_vars(t, bound, out),
        Formula::Not(inner) => free_vars_rec(inner, bound, out),
        Formula::And(parts) | Formula::Or(parts) => {
            for p in parts {
                free_vars_rec(p, bound, out);
            }
        }
        Formula::Implies(a, b) => {
            free_vars_rec(a, bound, out);
            free_vars_rec(b, bound, out);
        }
        Formula::Forall(v, _, body) | Formula::Exists(v, _, body) => {
            bound.push(v.clone());
            free_vars_rec(body, bound, out);
            bound.pop();
        }
    }
}

pub fn free_vars(f: &Formula) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    free_vars_rec(f, &mut Vec::new(), &mut out);
    out
}

pub fn all_var_names(f: &Formula) -> BTreeSet<String> {
    fn walk(f: &Formula, out: &mut BTreeSet<String>) {
        match f {
            Formula::True | Formula::False => {}
            Formula::Eq(a, b) | Formula::Less(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Formula::InO(t) | Formula::InM(t) => t.collect_vars(out),
            Formula::Not(inner) => walk(inner, out),
            Formula::And(parts) | Formula::Or(parts) => {
                for p in parts {
                    walk(p, out);
                }
            }
            Formula::Implies(a, b) => {
                walk(a, out);
                walk(b, out);
            }
            Formula::Forall(v, _, body) | Formula::Exists(v, _, body) => {
                out.insert(v.clone());
                walk(body, out);
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(f, &mut out);
    out
}

/// Deterministic fresh-name source: u0, u1, ... skipping taken names.
pub struct FreshVars {
    taken: BTreeSet<String>,
    counter: usize,
    prefix: &'static str,
}

impl FreshVars {
    pub fn new(taken: BTreeSet<String>) -> FreshVars {
        FreshVars { taken, counter: 0, prefix: "u" }
    }

    pub fn reserve(&mut self, name: &str) {
        self.taken.insert(name.to_string());
    }

    pub fn next(&mut self) -> String {
        loop {
            let cand = format!("{}{}", self.prefix, self.counter);
            self.counter += 1;
            if self.taken.insert(cand.clone()) {
                return cand;
            }
        }
    }
}

fn subst_term(t: &Term, map: &BTreeMap<String, Term>) -> Term {
    match t {
        Term::Var(v) => map.get(v).cloned().unwrap_or_else(|| t.clone()),
        Term::App { func, args } => Term::App {
            func: func.clone(),
            args: args.iter().map(|a| subst_term(a, map)).collect(),
        },
        _ => t.clone(),
    }
}

/// Capture-avoiding substitution of terms for free variables. Binders whose
/// variable occurs free in a replacement term are renamed deterministically.
pub fn substitute(f: &Formula, map: &BTreeMap<String, Term>) -> Formula {
    if map.is_empty() {
        return f.clone();
    }
    match f {
        Formula::True | Formula::False => f.clone(),
        Formula::Eq(a, b) => Formula::Eq(subst_term(a, map), subst_term(b, map)),
        Formula::Less(a, b) => Formula::Less(subst_term(a, map), subst_term(b, map)),
        Formula::InO(t) => Formula::InO(subst_term(t, map)),
        Formula::InM(t) => Formula::InM(subst_term(t, map)),
        Formula::Not(inner) => Formula::Not(Box::new(substitute(inner, map))),
        Formula::And(parts) => Formula::And(parts.iter().map(|p| substitute(p, map)).collect()),
        Formula::Or(parts) => Formula::Or(parts.iter().map(|p| substitute(p, map)).collect()),
        Formula::Implies(a, b) => {
            Formula::Implies(Box::new(substitute(a, map)), Box::new(substitute(b, map)))
        }
        Formula::Forall(v, s, body) | Formula::Exists(v, s, body) => {
            let mut inner_map: BTreeMap<String, Term> = map.clone();
            inner_map.remove(v);
            // Rename the binder when a replacement would capture it.
            let captures = inner_map.values().any(|t| t.vars().contains(v));
            let (v2, body2) = if captures {
                let mut used = all_var_names(body);
                for t in inner_map.values() {
                    used.extend(t.vars());
                }
                used.extend(inner_map.keys().cloned());
                used.insert(v.clone());
                let mut k = 1usize;
                let fresh = loop {
                    let cand = format!("{v}_{k}");
                    if !used.contains(&cand) {
                        break cand;
                    }
                    k += 1;
                };
                let mut rename = BTreeMap::new();
                rename.insert(v.clone(), Term::var(fresh.clone()));
                (fresh, substitute(body, &rename))
            } else {
                (v.clone(), body.as_ref().clone())
            };
            let new_body = Box::new(substitute(&body2, &inner_map));
            if matches!(f, Formula::Forall(..)) {
                Formula::Forall(v2, s.clone(), new_body)
            } else {
                Formula::Exists(v2, s.clone(), new_body)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Unnesting

/// Shapes an atomic formula may take after unnesting: x = y, x = c,
/// F(x, ..) = y, or R(x, ..) with all arguments plain variables.
pub fn is_unnested_atom(f: &Formula) -> bool {
    let is_const = |t: &Term| matches!(t, Term::Int(_) | Term::Const(_) | Term::Param(_) | Term::Elem { .. });
    match f {
        Formula::True | Formula::False => true,
        Formula::Eq(a, b) => match (a, b) {
            (Term::Var(_), Term::Var(_)) => true,
            (Term::Var(_), t) if is_const(t) => true,
            (Term::App { func, args }, Term::Var(_)) => {
                // Applications must be binary (unary for [ ]) so that
                // translation rules only ever see one operation at a time.
                let arity_ok =
                    if func == "teich" { args.len() == 1 } else { args.len() == 2 };
                arity_ok && args.iter().all(|t| matches!(t, Term::Var(_)))
            }
            _ => false,
        },
        Formula::Less(a, b) => matches!((a, b), (Term::Var(_), Term::Var(_))),
        Formula::InO(t) | Formula::InM(t) => matches!(t, Term::Var(_)),
        _ => false,
    }
}

pub fn is_unnested(f: &Formula) -> bool {
    match f {
        Formula::Not(inner) => is_unnested(inner),
        Formula::And(parts) | Formula::Or(parts) => parts.iter().all(is_unnested),
        Formula::Implies(a, b) => is_unnested(a) && is_unnested(b),
        Formula::Forall(_, _, body) | Formula::Exists(_, _, body) => is_unnested(body),
        atom => is_unnested_atom(atom),
    }
}

struct Unnester<'a> {
    sig: &'a Signature,
    fresh: FreshVars,
}

impl<'a> Unnester<'a> {
    /// Reduce a term to a leaf, pushing definitions F(vars) = u (with their
    /// binder sorts) onto `defs`.
    fn flatten(
        &mut self,
        t: &Term,
        env: &BTreeMap<String, String>,
        defs: &mut Vec<(String, String, Formula)>,
    ) -> Result<Term> {
        match t {
            Term::App { func, args } => {
                let sort = term_sort(t, self.sig, env, None)?;
                let arg_sort = if func == "teich" {
                    SORT_R.to_string()
                } else {
                    sort.clone()
                };
                let mut new_args = Vec::with_capacity(args.len());
                for a in args {
                    let leaf = self.flatten(a, env, defs)?;
                    match leaf {
                        Term::Var(_) => new_args.push(leaf),
                        other => {
                            // Constant argument: name it so the head
                            // application sees only variables.
                            let u = self.fresh.next();
                            defs.push((
                                u.clone(),
                                arg_sort.clone(),
                                Formula::Eq(Term::var(u.clone()), other),
                            ));
                            new_args.push(Term::var(u));
                        }
                    }
                }
                if func == "teich" {
                    let u = self.fresh.next();
                    defs.push((
                        u.clone(),
                        sort,
                        Formula::Eq(
                            Term::App { func: func.clone(), args: new_args },
                            Term::var(u.clone()),
                        ),
                    ));
                    return Ok(Term::var(u));
                }
                // n-ary + and * fold into a chain of binary definitions.
                let mut acc = new_args[0].clone();
                for next in new_args.into_iter().skip(1) {
                    let u = self.fresh.next();
                    defs.push((
                        u.clone(),
                        sort.clone(),
                        Formula::Eq(
                            Term::App { func: func.clone(), args: vec![acc, next] },
                            Term::var(u.clone()),
                        ),
                    ));
                    acc = Term::var(u);
                }
                Ok(acc)
            }
            leaf => Ok(leaf.clone()),
        }
    }

    /// Unnest one atomic formula; `negated` wraps the final atom (not the
    /// definitions) in a negation, keeping the existentials outside.
    fn atom(
        &mut self,
        f: &Formula,
        env: &BTreeMap<String, String>,
        negated: bool,
    ) -> Result<Formula> {
        let wrap = |atom: Formula| if negated { Formula::Not(Box::new(atom)) } else { atom };
        if is_unnested_atom(f) {
            return Ok(wrap(f.clone()));
        }
        let mut defs = Vec::new();
        let atom = match f {
            Formula::Eq(a, b) => {
                let la = self.flatten(a, env, &mut defs)?;
                let lb = self.flatten(b, env, &mut defs)?;
                match (la, lb) {
                    (Term::Var(x), rhs) => Formula::Eq(Term::var(x), rhs),
                    (lhs, Term::Var(y)) => Formula::Eq(Term::var(y), lhs),
                    (lhs, rhs) => {
                        // Both sides are constants: name one of them.
                        let sort = term_sort(a, self.sig, env, None)?;
                        let u = self.fresh.next();
                        defs.push((
                            u.clone(),
                            sort,
                            Formula::Eq(Term::var(u.clone()), lhs),
                        ));
                        Formula::Eq(Term::var(u), rhs)
                    }
                }
            }
            Formula::Less(a, b) => {
                let la = self.leaf_to_var(a, env, &mut defs)?;
                let lb = self.leaf_to_var(b, env, &mut defs)?;
                Formula::Less(la, lb)
            }
            Formula::InO(t) => Formula::InO(self.leaf_to_var(t, env, &mut defs)?),
            Formula::InM(t) => Formula::InM(self.leaf_to_var(t, env, &mut defs)?),
            _ => unreachable!("atom() called on a non-atomic formula"),
        };
        let mut body: Vec<Formula> = defs.iter().map(|(_, _, d)| d.clone()).collect();
        body.push(wrap(atom));
        let mut out = and_of(body);
        for (v, s, _) in defs.into_iter().rev() {
            out = exists(v, s, out);
        }
        Ok(out)
    }

    fn leaf_to_var(
        &mut self,
        t: &Term,
        env: &BTreeMap<String, String>,
        defs: &mut Vec<(String, String, Formula)>,
    ) -> Result<Term> {
        let leaf = self.flatten(t, env, defs)?;
        match leaf {
            Term::Var(_) => Ok(leaf),
            other => {
                let sort = term_sort(&other, self.sig, env, None)?;
                let u = self.fresh.next();
                defs.push((u.clone(), sort, Formula::Eq(Term::var(u.clone()), other)));
                Ok(Term::var(u))
            }
        }
    }

    fn formula(&mut self, f: &Formula, env: &mut BTreeMap<String, String>) -> Result<Formula> {
        match f {
            Formula::True | Formula::False => Ok(f.clone()),
            Formula::Eq(..) | Formula::Less(..) | Formula::InO(..) | Formula::InM(..) => {
                self.atom(f, env, false)
            }
            Formula::Not(inner) => match inner.as_ref() {
                atom @ (Formula::Eq(..)
                | Formula::Less(..)
                | Formula::InO(..)
                | Formula::InM(..)) => self.atom(atom, env, true),
                other => Ok(Formula::Not(Box::new(self.formula(other, env)?))),
            },
            Formula::And(parts) => {
                let new: Result<Vec<_>> = parts.iter().map(|p| self.formula(p, env)).collect();
                Ok(Formula::And(new?))
            }
            Formula::Or(parts) => {
                let new: Result<Vec<_>> = parts.iter().map(|p| self.formula(p, env)).collect();
                Ok(Formula::Or(new?))
            }
            Formula::Implies(a, b) => Ok(Formula::Implies(
                Box::new(self.formula(a, env)?),
                Box::new(self.formula(b, env)?),
            )),
            Formula::Forall(v, s, body) | Formula::Exists(v, s, body) => {
                let prev = env.insert(v.clone(), s.clone());
                let new_body = self.formula(body, env);
                match prev {
                    Some(old) => {
                        env.insert(v.clone(), old);
                    }
                    None => {
                        env.remove(v);
                    }
                }
                let new_body = Box::new(new_body?);
                Ok(if matches!(f, Formula::Forall(..)) {
                    Formula::Forall(v.clone(), s.clone(), new_body)
                } else {
                    Formula::Exists(v.clone(), s.clone(), new_body)
                })
            }
        }
    }
}

/// Rewrite every atomic subformula into an unnested shape, introducing fresh
/// existentially quantified names for compound subterms. Negated atoms keep
/// the new existentials outside the negation (the definitions are
/// functional, so this preserves logical equivalence). Quantifier-free
/// inputs become existential exactly where nesting forces it; existential
/// and existential-positive inputs stay in their class.
pub fn unnest(f: &Formula, sig: &Signature) -> Result<Formula> {
    let mut un = Unnester { sig, fresh: FreshVars::new(all_var_names(f)) };
    un.formula(f, &mut BTreeMap::new())
}

// ---------------------------------------------------------------------------
// One-point simplification

fn try_one_point(var: &str, body: &Formula) -> Option<Formula> {
    let parts: Vec<Formula> = match body {
        Formula::And(parts) => parts.clone(),
        other => vec![other.clone()],
    };
    let defines = |f: &Formula| -> Option<Term> {
        if let Formula::Eq(a, b) = f {
            if let Term::Var(v) = a {
                if v == var && !b.vars().contains(var) {
                    return Some(b.clone());
                }
            }
            if let Term::Var(v) = b {
                if v == var && !a.vars().contains(var) {
                    return Some(a.clone());
                }
            }
        }
        None
    };
    let idx = parts.iter().position(|p| defines(p).is_some())?;
    let def = defines(&parts[idx]).unwrap();
    let mut map = BTreeMap::new();
    map.insert(var.to_string(), def);
    let rest: Vec<Formula> =
        parts.into_iter().enumerate().filter(|(i, _)| *i != idx).map(|(_, p)| p).collect();
    Some(and_of(rest.iter().map(|p| substitute(p, &map)).collect()))
}

/// Eliminate determined existentials: E u (A & u = t & B) becomes
/// (A & B)[u := t] whenever u does not occur in t. Unnesting introduces
/// exactly such definitions, so composing the two maps nested atoms back
/// into plain term identities without changing truth.
pub fn one_point(f: &Formula) -> Formula {
    match f {
        Formula::Not(inner) => Formula::Not(Box::new(one_point(inner))),
        Formula::And(parts) => and_of(parts.iter().map(one_point).collect()),
        Formula::Or(parts) => or_of(parts.iter().map(one_point).collect()),
        Formula::Implies(a, b) => {
            Formula::Implies(Box::new(one_point(a)), Box::new(one_point(b)))
        }
        Formula::Forall(v, s, body) => forall(v.clone(), s.clone(), one_point(body)),
        Formula::Exists(v, s, body) => {
            let body = one_point(body);
            match try_one_point(v, &body) {
                Some(reduced) => one_point(&reduced),
                None => exists(v.clone(), s.clone(), body),
            }
        }
        other => other.clone(),
    }
}

// ---------------------------------------------------------------------------
// Complexity classification

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComplexityClass {
    QuantifierFree,
    ExistentialPositive,
    Existential,
    Universal,
    Full,
}

impl fmt::Display for ComplexityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ComplexityClass::QuantifierFree => "quantifier-free",
            ComplexityClass::ExistentialPositive => "existential-positive",
            ComplexityClass::Existential => "existential",
            ComplexityClass::Universal => "universal",
            ComplexityClass::Full => "full",
        };
        f.write_str(s)
    }
}

impl ComplexityClass {
    /// Partial order: QF below everything, existential-positive below
    /// existential below full, universal below full; the existential chain
    /// and universal are incomparable.
    pub fn le(self, other: ComplexityClass) -> bool {
        use ComplexityClass::*;
        if self == other || self == QuantifierFree || other == Full {
            return true;
        }
        matches!((self, other), (ExistentialPositive, Existential))
    }

    pub fn join(self, other: ComplexityClass) -> ComplexityClass {
        use ComplexityClass::*;
        if self.le(other) {
            return other;
        }
        if other.le(self) {
            return self;
        }
        // Only incomparable pairs mix the existential chain with Universal.
        Full
    }
}

#[derive(Default)]
struct ClassStats {
    eff_exists: bool,
    eff_forall: bool,
    negative_atom: bool,
}

fn class_walk(f: &Formula, positive: bool, st: &mut ClassStats) {
    match f {
        Formula::True | Formula::False => {}
        Formula::Eq(..) | Formula::Less(..) | Formula::InO(..) | Formula::InM(..) => {
            if !positive {
                st.negative_atom = true;
            }
        }
        // A negated O-membership is treated as a literal of its own: the
        // translation rules that need it stay within the positive fragment.
        Formula::Not(inner) if matches!(inner.as_ref(), Formula::InO(..)) => {}
        Formula::Not(inner) => class_walk(inner, !positive, st),
        Formula::And(parts) | Formula::Or(parts) => {
            for p in parts {
                class_walk(p, positive, st);
            }
        }
        Formula::Implies(a, b) => {
            class_walk(a, !positive, st);
            class_walk(b, positive, st);
        }
        Formula::Forall(_, _, body) => {
            if positive {
                st.eff_forall = true;
            } else {
                st.eff_exists = true;
            }
            class_walk(body, positive, st);
        }
        Formula::Exists(_, _, body) => {
            if positive {
                st.eff_exists = true;
            } else {
                st.eff_forall = true;
            }
            class_walk(body, positive, st);
        }
    }
}

/// Syntactic complexity, computed by polarity: quantifier-free when no
/// quantifiers occur; existential-positive when every quantifier occurrence
/// is effectively existential and every atom occurs positively (negated
/// O-membership counts as positive); existential when negative atoms occur
/// too; universal for the dual; full otherwise.
pub fn classify(f: &Formula) -> ComplexityClass {
    let mut st = ClassStats::default();
    class_walk(f, true, &mut st);
    match (st.eff_exists, st.eff_forall) {
        (false, false) => ComplexityClass::QuantifierFree,
        (true, false) => {
            if st.negative_atom {
                ComplexityClass::Existential
            } else {
                ComplexityClass::ExistentialPositive
            }
        }
        (false, true) => ComplexityClass::Universal,
        (true, true) => ComplexityClass::Full,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts() -> Signature {
        Signature::two_sorted()
    }

    fn roundtrip(sig: &Signature, text: &str) {
        let f = parse_formula(sig, None, text).unwrap();
        assert_eq!(render_formula(&f, sig), text, "canonical print mismatch");
        let again = parse_formula(sig, None, &render_formula(&f, sig)).unwrap();
        assert_eq!(f, again);
    }

    #[test]
    fn golden_corpus_roundtrips() {
        let val = Signature::valued_ring();
        for s in [
            "A x (x in O -> x*x in O)",
            "E x (x*x = 1)",
            "A x E y (x + y = 0)",
            "x in O | x in O & y in O",
            "!(x = 0)",
            "E x (!(x = 0) & x*x*x = 1)",
            "true",
            "A x (false -> x = 0)",
            "x = 0 -> y = 0 -> x + y = 0",
            "(x = 0 -> y = 0) -> x + y = 0",
            "E x ((x = 0 | x = 1) & x in O)",
            "x*(y + 1) = z",
            "2*x + 1 = 0",
        ] {
            roundtrip(&val, s);
        }
        let two = ts();
        for s in [
            "E x:W (x + x = 0)",
            "A x:R ([x]*[x] = [x*x])",
            "E x:W A y:W (x*y = y)",
            "A x:R E y:W (y + [x] = 0)",
            "E x:W (x*x = 2)",
        ] {
            roundtrip(&two, s);
        }
        let lcr = Signature::local_ring();
        for s in ["E x (x in m & x*x = 0)", "A y (y in m -> E x (x*x = y))"] {
            roundtrip(&lcr, s);
        }
        let oag = Signature::ordered_group_vp();
        for s in ["0 < vp", "E g (g + g = vp)", "A g A h (g < h | h < g | g = h)"] {
            roundtrip(&oag, s);
        }
    }

    #[test]
    fn parser_is_lenient_printer_is_canonical() {
        let val = Signature::valued_ring();
        let f = parse_formula(&val, None, "  E x( x * x=1 )").unwrap();
        assert_eq!(render_formula(&f, &val), "E x (x*x = 1)");
        // Implication is right-associative.
        let g = parse_formula(&val, None, "x = 0 -> y = 0 -> x = y").unwrap();
        match g {
            Formula::Implies(_, rhs) => assert!(matches!(*rhs, Formula::Implies(..))),
            _ => panic!("expected implication"),
        }
    }

    #[test]
    fn quantifier_bodies_bind_tightly() {
        let val = Signature::valued_ring();
        let f = parse_formula(&val, None, "E x (x = 0) & y = 0").unwrap();
        assert!(matches!(f, Formula::And(_)));
        let g = parse_formula(&val, None, "A x (x = 0 -> x in O)").unwrap();
        assert!(matches!(g, Formula::Forall(..)));
    }

    #[test]
    fn two_sorted_parse_and_sorts() {
        let two = ts();
        let f = parse_formula(&two, None, "E x:W (x + x = 0)").unwrap();
        match &f {
            Formula::Exists(v, s, _) => {
                assert_eq!(v, "x");
                assert_eq!(s, SORT_W);
            }
            _ => panic!("expected an existential"),
        }
        // Unannotated binders default to the first sort (W).
        let g = parse_formula(&two, None, "E x (x*x = 2)").unwrap();
        assert!(matches!(g, Formula::Exists(_, ref s, _) if s == SORT_W));
        // Teichmuller arguments are R-sorted.
        assert!(parse_formula(&two, None, "A x:W ([x] = x)").is_err());
        // No m predicate in the plain two-sorted signature.
        assert!(parse_formula(&two, None, "E x:R (x in m)").is_err());
    }

    #[test]
    fn sort_errors_are_reported() {
        let val = Signature::valued_ring();
        assert!(parse_formula(&val, None, "x in m").is_err());
        assert!(parse_formula(&val, None, "x < y").is_err());
        let oag = Signature::ordered_group();
        assert!(parse_formula(&oag, None, "g + g = 2").is_err());
        assert!(parse_formula(&oag, None, "g * g = 0").is_err());
    }

    #[test]
    fn free_and_bound_variables() {
        let val = Signature::valued_ring();
        let f = parse_formula(&val, None, "E x (x + y = 0)").unwrap();
        let fv = free_vars(&f);
        assert_eq!(fv.into_iter().collect::<Vec<_>>(), vec!["y".to_string()]);
    }

    #[test]
    fn substitution_avoids_capture() {
        let val = Signature::valued_ring();
        let f = parse_formula(&val, None, "E u (x + u = 0)").unwrap();
        let mut map = BTreeMap::new();
        map.insert("x".to_string(), Term::add(vec![Term::var("u"), Term::Int(1)]));
        let g = substitute(&f, &map);
        match &g {
            Formula::Exists(v, _, body) => {
                assert_ne!(v, "u");
                assert!(free_vars(body).contains("u"));
            }
            _ => panic!("expected an existential"),
        }
    }

    #[test]
    fn unnest_flattens_nested_atoms() {
        let val = Signature::valued_ring();
        let f = parse_formula(&val, None, "x*y + 1 = 0").unwrap();
        let g = unnest(&f, &val).unwrap();
        assert!(is_unnested(&g));
        assert_eq!(
            render_formula(&g, &val),
            "E u0 E u1 E u2 (x*y = u0 & u1 = 1 & u0 + u1 = u2 & u2 = 0)"
        );
        // Identity on already-unnested formulas.
        let h = parse_formula(&val, None, "E x (x = y)").unwrap();
        assert_eq!(unnest(&h, &val).unwrap(), h);
    }

    #[test]
    fn unnest_keeps_existentials_outside_negation() {
        let val = Signature::valued_ring();
        let f = parse_formula(&val, None, "!(x*x = 1)").unwrap();
        let g = unnest(&f, &val).unwrap();
        assert!(is_unnested(&g));
        match &g {
            Formula::Exists(_, _, body) => match body.as_ref() {
                Formula::And(parts) => {
                    assert!(matches!(parts.last().unwrap(), Formula::Not(_)))
                }
                _ => panic!("expected a conjunction under the existential"),
            },
            _ => panic!("expected the definition outside the negation"),
        }
        // Classification bound: existential inputs stay existential.
        assert_eq!(classify(&g), ComplexityClass::Existential);
    }

    #[test]
    fn unnest_respects_class_bounds() {
        let val = Signature::valued_ring();
        for (text, bound) in [
            ("E x (x*x + 1 = 0)", ComplexityClass::ExistentialPositive),
            ("E x (!(x*x = 1))", ComplexityClass::Existential),
            ("x*x = 1", ComplexityClass::ExistentialPositive),
            ("A x (x*x + x = 0)", ComplexityClass::Full),
        ] {
            let f = parse_formula(&val, None, text).unwrap();
            let g = unnest(&f, &val).unwrap();
            assert!(is_unnested(&g));
            assert!(
                classify(&g).le(bound),
                "{text}: classify(unnest) = {} exceeds {bound}",
                classify(&g)
            );
        }
    }

    #[test]
    fn one_point_inverts_unnesting_definitions() {
        let val = Signature::valued_ring();
        let f = parse_formula(&val, None, "x*y + 1 = 0").unwrap();
        let g = one_point(&unnest(&f, &val).unwrap());
        assert_eq!(render_formula(&g, &val), "x*y + 1 = 0");
        let h = parse_formula(&val, None, "E x (x = 1 & x*x = 1)").unwrap();
        assert_eq!(render_formula(&one_point(&h), &val), "1*1 = 1");
    }

    #[test]
    fn classify_examples() {
        let val = Signature::valued_ring();
        let cases = [
            ("E x (x*x = 1)", ComplexityClass::ExistentialPositive),
            ("A x E y (x + y = 0)", ComplexityClass::Full),
            ("x = y", ComplexityClass::QuantifierFree),
            ("E x (!(x = 0))", ComplexityClass::Existential),
            ("A x (x in O -> x*x in O)", ComplexityClass::Universal),
            ("!(E x (x = 0))", ComplexityClass::Universal),
            ("E x (x in O & !(x in O))", ComplexityClass::ExistentialPositive),
        ];
        for (text, expect) in cases {
            let f = parse_formula(&val, None, text).unwrap();
            assert_eq!(classify(&f), expect, "{text}");
        }
    }

    #[test]
    fn class_lattice() {
        use ComplexityClass::*;
        assert!(QuantifierFree.le(ExistentialPositive));
        assert!(ExistentialPositive.le(Existential));
        assert!(!Existential.le(Universal));
        assert!(!Universal.le(Existential));
        assert_eq!(ExistentialPositive.join(Universal), Full);
        assert_eq!(QuantifierFree.join(Universal), Universal);
        assert_eq!(ExistentialPositive.join(ExistentialPositive), ExistentialPositive);
    }

    #[test]
    fn param_constants_parse_in_expanded_signatures() {
        let cfg = PrimeConfig::new(2, 1, None).unwrap();
        let sig = Signature::valued_ring().with_params();
        let f = parse_formula(&sig, Some(&cfg), "E x (x*c{t^(1/2)} = c{t + 1})").unwrap();
        let printed = render_formula(&f, &sig);
        assert_eq!(printed, "E x (x*c{t^(1/2)} = c{1 + t^(1/1)})");
        let again = parse_formula(&sig, Some(&cfg), &printed).unwrap();
        assert_eq!(f, again);
        // No params without the expansion.
        assert!(parse_formula(&Signature::valued_ring(), Some(&cfg), "c{t} = 0").is_err());
    }
}
