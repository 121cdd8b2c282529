//! Translations between the first-order languages of the rings in play,
//! with optional witness transport.
//!
//! An [`Interpretation`] rewrites sentences of a source signature into
//! sentences of a target signature, atom by atom, after unnesting. Each
//! source variable becomes a fixed number of coordinate variables of a
//! target sort, quantifiers are relativized to a domain guard, and every
//! unnested atom goes through a translation rule. Composites chain whole
//! reductions, so the output of one stage is re-unnested and translated by
//! the next.
//!
//! In witness mode the same walk carries concrete values: the caller
//! supplies values for the source existentials, unnesting definitions are
//! evaluated in the source carrier, and each rule computes values for the
//! variables it introduces. The result assigns a value to every existential
//! of the translated sentence, ready for
//! [`eval_eplus_with`](crate::feval::eval_eplus_with). Transport requires
//! determined existentials, so universal quantifiers and maximal-ideal atoms
//! on the residue side are rejected in witness mode.

use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::feval::Value;
use crate::field::{FqElem, PrimeConfig};
use crate::formula::{
    all_var_names, and_of, check_sorts, exists, forall, unnest, ComplexityClass, Formula,
    FreshVars, Signature, Term, SORT_G, SORT_R, SORT_W,
};
use crate::perfect::{FracElem, PerfElem};
use crate::untilt::{self, Digits, UntiltSpec};
use crate::witt::WittVec;
use crate::wittpoly::{Var as PolyVar, WittPoly, WittPolyCache};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// A concrete element in one of the carriers a witness passes through.
#[derive(Clone, Debug)]
pub enum Concrete {
    Res(Digits),
    Witt(WittVec),
    Ring(PerfElem),
    Field(FracElem),
}

impl Concrete {
    fn as_res(&self) -> Result<&Digits> {
        match self {
            Concrete::Res(d) => Ok(d),
            _ => Err(Error::domain("expected a residue-ring value")),
        }
    }

    fn as_witt(&self) -> Result<&WittVec> {
        match self {
            Concrete::Witt(w) => Ok(w),
            _ => Err(Error::domain("expected a Witt vector value")),
        }
    }

    fn as_ring(&self) -> Result<&PerfElem> {
        match self {
            Concrete::Ring(x) => Ok(x),
            _ => Err(Error::domain("expected a tilt-ring value")),
        }
    }

    fn as_field(&self) -> Result<FracElem> {
        match self {
            Concrete::Field(x) => Ok(x.clone()),
            Concrete::Ring(x) => Ok(FracElem::from_perf(x.clone())),
            _ => Err(Error::domain("expected a field value")),
        }
    }
}

/// Final transported assignments, in the carriers the evaluators accept.
pub fn to_values(w: &BTreeMap<String, Concrete>) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    for (k, v) in w {
        let val = match v {
            Concrete::Res(d) => Value::Res(d.clone()),
            Concrete::Ring(x) => Value::Ring(x.clone()),
            Concrete::Field(x) => Value::Field(x.clone()),
            Concrete::Witt(_) => {
                return Err(Error::domain(format!(
                    "transported value for {k} was never expanded into coordinates"
                )))
            }
        };
        out.insert(k.clone(), val);
    }
    Ok(out)
}

/// How unnesting definitions are evaluated during transport.
#[derive(Clone, Copy, PartialEq)]
enum Carrier {
    /// Digit arithmetic in an untilt residue ring.
    Residue,
    /// Witt vectors over the tilt paired with the tilt itself.
    WittPair,
    /// The perfect subring of the tilt.
    Tilt,
    /// Value-group elements represented by field elements; + reads as *.
    Group,
}

#[derive(Clone)]
struct InterpAux {
    cfg: Arc<PrimeConfig>,
    untilt: Option<Arc<UntiltSpec>>,
    n: usize,
}

impl InterpAux {
    fn untilt(&self) -> Result<&Arc<UntiltSpec>> {
        self.untilt.as_ref().ok_or_else(|| Error::invalid("translation needs an untilt"))
    }
}

/// The right-hand side of an unnested equality atom.
#[derive(Clone, Debug)]
pub enum AtomRhs {
    Var(String),
    Int(u64),
    Const(String),
    Param(PerfElem),
}

/// An unnested atom in the shape the translation rules consume.
#[derive(Clone, Debug)]
pub enum Atom {
    /// lhs = rhs with a variable on the left; `sort` is the variable's sort.
    Eq { lhs: String, rhs: AtomRhs, sort: String },
    /// func(args) = result over variables; `sort` is the argument sort.
    Func { func: String, args: Vec<String>, result: String, sort: String },
    InO { var: String },
    InM { var: String },
    Less { lhs: String, rhs: String },
}

/// Shared state a rule sees: fresh names, ring context, and (in witness
/// mode) source-carrier values for the atom's variables plus a slot for the
/// target-carrier values of any variable the rule introduces.
pub struct RuleCtx<'a> {
    fresh: &'a mut FreshVars,
    aux: &'a InterpAux,
    vals: Option<&'a BTreeMap<String, Concrete>>,
    out: BTreeMap<String, Concrete>,
}

impl<'a> RuleCtx<'a> {
    fn val(&self, v: &str) -> Result<&Concrete> {
        self.vals
            .and_then(|m| m.get(v))
            .ok_or_else(|| Error::domain(format!("no transported value for {v}")))
    }

    fn witnessing(&self) -> bool {
        self.vals.is_some()
    }
}

type Rule = Arc<dyn Fn(&Atom, &mut RuleCtx) -> Result<Formula> + Send + Sync>;
type DomainFn = Arc<dyn Fn(&str) -> Option<Formula> + Send + Sync>;

struct AtomicInterp {
    /// source sort -> (coordinate count, coordinate sort)
    dims: BTreeMap<String, (usize, String)>,
    domain: DomainFn,
    rule: Rule,
    carrier: Carrier,
    aux: InterpAux,
    class: ComplexityClass,
}

enum Kind {
    Atomic(AtomicInterp),
    /// Stages applied left to right by full reduction.
    Composite(Vec<Interpretation>),
}

pub struct Interpretation {
    name: String,
    source: Signature,
    target: Signature,
    kind: Kind,
}

impl Interpretation {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &Signature {
        &self.source
    }

    pub fn target(&self) -> &Signature {
        &self.target
    }

    /// Upper bound on the complexity class of translated atoms.
    pub fn declared_class(&self) -> ComplexityClass {
        match &self.kind {
            Kind::Atomic(a) => a.class,
            Kind::Composite(parts) => parts
                .iter()
                .map(|p| p.declared_class())
                .fold(ComplexityClass::QuantifierFree, |a, b| a.join(b)),
        }
    }

    /// Coordinate count and final coordinate sort for a source sort.
    pub fn sort_dim(&self, sort: &str) -> Result<(usize, String)> {
        match &self.kind {
            Kind::Atomic(a) => a
                .dims
                .get(sort)
                .cloned()
                .ok_or_else(|| Error::sort(format!("no sort {sort} in {}", self.name))),
            Kind::Composite(parts) => {
                let mut dim = 1usize;
                let mut cur = sort.to_string();
                for p in parts {
                    let (k, cs) = p.sort_dim(&cur)?;
                    dim *= k;
                    cur = cs;
                }
                Ok((dim, cur))
            }
        }
    }

    /// Chain this interpretation with another whose source is this target.
    pub fn compose(self, then: Interpretation) -> Result<Interpretation> {
        if self.target != then.source {
            return Err(Error::sort(format!(
                "cannot compose: {} targets {} but {} reads {}",
                self.name,
                self.target.name(),
                then.name,
                then.source.name()
            )));
        }
        let name = format!("{}>>{}", self.name, then.name);
        let mut parts = match self.kind {
            Kind::Composite(p) => p,
            k => vec![Interpretation { kind: k, ..clone_shell(&self.name, &self.source, &self.target) }],
        };
        match then.kind {
            Kind::Composite(p) => parts.extend(p),
            k => parts.push(Interpretation {
                kind: k,
                ..clone_shell(&then.name, &then.source, &then.target)
            }),
        }
        Ok(Interpretation {
            name,
            source: parts.first().unwrap().source.clone(),
            target: parts.last().unwrap().target.clone(),
            kind: Kind::Composite(parts),
        })
    }

    fn renamed(mut self, name: &str) -> Interpretation {
        self.name = name.to_string();
        self
    }

    /// Translate a sentence of the source language.
    pub fn reduce(&self, f: &Formula) -> Result<Formula> {
        Ok(self.reduce_opt(f, None)?.0)
    }

    /// Translate and transport: `witness` gives source-carrier values for
    /// the sentence's existential variables; the result also assigns a value
    /// to every existential variable of the translated sentence.
    pub fn reduce_with_witness(
        &self,
        f: &Formula,
        witness: &BTreeMap<String, Concrete>,
    ) -> Result<(Formula, BTreeMap<String, Concrete>)> {
        let (g, w) = self.reduce_opt(f, Some(witness.clone()))?;
        Ok((g, w.expect("witness mode returns a map")))
    }

    fn reduce_opt(
        &self,
        f: &Formula,
        witness: Option<BTreeMap<String, Concrete>>,
    ) -> Result<(Formula, Option<BTreeMap<String, Concrete>>)> {
        match &self.kind {
            Kind::Atomic(a) => a.reduce(f, &self.source, witness),
            Kind::Composite(parts) => {
                let mut cur = f.clone();
                let mut w = witness;
                for p in parts {
                    let (next, nw) = p.reduce_opt(&cur, w)?;
                    cur = next;
                    w = nw;
                }
                Ok((cur, w))
            }
        }
    }
}

fn clone_shell(name: &str, source: &Signature, target: &Signature) -> Interpretation {
    Interpretation {
        name: name.to_string(),
        source: source.clone(),
        target: target.clone(),
        kind: Kind::Composite(Vec::new()),
    }
}

fn coord_name(v: &str, i: usize, k: usize) -> String {
    if k == 1 {
        v.to_string()
    } else {
        format!("{v}_{i}")
    }
}

fn duplicate_binder(f: &Formula, seen: &mut BTreeSet<String>) -> Option<String> {
    match f {
        Formula::Forall(v, _, body) | Formula::Exists(v, _, body) => {
            if !seen.insert(v.clone()) {
                return Some(v.clone());
            }
            duplicate_binder(body, seen)
        }
        Formula::Not(inner) => duplicate_binder(inner, seen),
        Formula::And(parts) | Formula::Or(parts) => {
            parts.iter().find_map(|p| duplicate_binder(p, seen))
        }
        Formula::Implies(a, b) => {
            duplicate_binder(a, seen).or_else(|| duplicate_binder(b, seen))
        }
        _ => None,
    }
}

struct WalkState {
    /// Source-carrier values, growing as definitions are solved.
    vals: BTreeMap<String, Concrete>,
    /// Target-carrier values for the translated formula's variables.
    out: BTreeMap<String, Concrete>,
    active: bool,
}

impl AtomicInterp {
    fn reduce(
        &self,
        f: &Formula,
        source: &Signature,
        witness: Option<BTreeMap<String, Concrete>>,
    ) -> Result<(Formula, Option<BTreeMap<String, Concrete>>)> {
        check_sorts(f, source)?;
        let names = all_var_names(f);
        let max_dim = self.dims.values().map(|(k, _)| *k).max().unwrap_or(1);
        if max_dim > 1 {
            for v in &names {
                for i in 0..max_dim {
                    if names.contains(&coord_name(v, i, 2)) {
                        return Err(Error::invalid(format!(
                            "variable {v}_{i} collides with the coordinates of {v}; rename it"
                        )));
                    }
                }
            }
        }
        let active = witness.is_some();
        if active {
            if let Some(v) = duplicate_binder(f, &mut BTreeSet::new()) {
                return Err(Error::unsupported(format!(
                    "witness transport needs distinct binder names, {v} repeats"
                )));
            }
        }
        let g = unnest(f, source)?;
        let mut fresh = FreshVars::new(all_var_names(&g));
        let mut st = WalkState { vals: witness.unwrap_or_default(), out: BTreeMap::new(), active };
        let mut env = BTreeMap::new();
        let out = self.walk(&g, source, &mut env, &mut st, &mut fresh)?;
        Ok((out, st.active.then_some(st.out)))
    }

    fn walk(
        &self,
        f: &Formula,
        source: &Signature,
        env: &mut BTreeMap<String, String>,
        st: &mut WalkState,
        fresh: &mut FreshVars,
    ) -> Result<Formula> {
        match f {
            Formula::True | Formula::False => Ok(f.clone()),
            Formula::Eq(..) | Formula::Less(..) | Formula::InO(..) | Formula::InM(..) => {
                let atom = to_atom(f, source, env)?;
                let mut ctx = RuleCtx {
                    fresh,
                    aux: &self.aux,
                    vals: if st.active { Some(&st.vals) } else { None },
                    out: BTreeMap::new(),
                };
                let translated = (self.rule)(&atom, &mut ctx)?;
                let intro = std::mem::take(&mut ctx.out);
                st.out.extend(intro);
                Ok(translated)
            }
            Formula::Not(inner) => {
                Ok(Formula::Not(Box::new(self.walk(inner, source, env, st, fresh)?)))
            }
            Formula::And(parts) => {
                let new: Result<Vec<_>> =
                    parts.iter().map(|p| self.walk(p, source, env, st, fresh)).collect();
                Ok(Formula::And(new?))
            }
            Formula::Or(parts) => {
                let new: Result<Vec<_>> =
                    parts.iter().map(|p| self.walk(p, source, env, st, fresh)).collect();
                Ok(Formula::Or(new?))
            }
            Formula::Implies(a, b) => Ok(Formula::Implies(
                Box::new(self.walk(a, source, env, st, fresh)?),
                Box::new(self.walk(b, source, env, st, fresh)?),
            )),
            Formula::Forall(v, s, body) | Formula::Exists(v, s, body) => {
                let universal = matches!(f, Formula::Forall(..));
                if universal && st.active {
                    return Err(Error::unsupported(
                        "cannot transport a witness through a universal quantifier",
                    ));
                }
                let (k, cs) = self
                    .dims
                    .get(s)
                    .cloned()
                    .ok_or_else(|| Error::sort(format!("no sort {s} here")))?;
                if st.active {
                    if !st.vals.contains_key(v) {
                        let value = self.solve_definition(v, s, body, st)?;
                        st.vals.insert(v.clone(), value);
                    }
                    let coords = self.expand_value(&st.vals[v].clone(), s, k)?;
                    for (i, c) in coords.into_iter().enumerate() {
                        st.out.insert(coord_name(v, i, k), c);
                    }
                }
                let prev = env.insert(v.clone(), s.clone());
                let inner = self.walk(body, source, env, st, fresh);
                match prev {
                    Some(old) => {
                        env.insert(v.clone(), old);
                    }
                    None => {
                        env.remove(v);
                    }
                }
                let mut out = inner?;
                let guards: Vec<Formula> =
                    (0..k).filter_map(|i| (self.domain)(&coord_name(v, i, k))).collect();
                if !guards.is_empty() {
                    out = if universal {
                        Formula::Implies(Box::new(and_of(guards)), Box::new(out))
                    } else {
                        and_of(guards.into_iter().chain([out]).collect())
                    };
                }
                for i in (0..k).rev() {
                    let name = coord_name(v, i, k);
                    out = if universal {
                        forall(name, cs.clone(), out)
                    } else {
                        exists(name, cs.clone(), out)
                    };
                }
                Ok(out)
            }
        }
    }

    /// Value of an unnesting-introduced variable, read off its defining
    /// conjunct in the positive existential spine of `body`.
    fn solve_definition(
        &self,
        v: &str,
        sort: &str,
        body: &Formula,
        st: &WalkState,
    ) -> Result<Concrete> {
        // Definitions precede uses, so the scan must run left to right:
        // the head atom can mention v without defining it.
        let mut stack = vec![body];
        while let Some(f) = stack.pop() {
            match f {
                Formula::And(parts) => stack.extend(parts.iter().rev()),
                Formula::Exists(_, _, inner) => stack.push(inner),
                Formula::Eq(Term::Var(a), rhs) if a == v => {
                    return self.carrier_leaf(rhs, sort, &st.vals);
                }
                Formula::Eq(Term::App { func, args }, Term::Var(r)) if r == v => {
                    let vals: Vec<&Concrete> = args
                        .iter()
                        .map(|a| match a {
                            Term::Var(name) => st
                                .vals
                                .get(name)
                                .ok_or_else(|| Error::domain(format!("unvalued variable {name}"))),
                            _ => Err(Error::invalid("unnested application has variable arguments")),
                        })
                        .collect::<Result<_>>()?;
                    return self.carrier_app(func, &vals);
                }
                _ => {}
            }
        }
        Err(Error::unsupported(format!(
            "no witness value for {v} and no defining equation in scope"
        )))
    }

    fn carrier_leaf(
        &self,
        rhs: &Term,
        sort: &str,
        vals: &BTreeMap<String, Concrete>,
    ) -> Result<Concrete> {
        let aux = &self.aux;
        match rhs {
            Term::Var(name) => vals
                .get(name)
                .cloned()
                .ok_or_else(|| Error::domain(format!("unvalued variable {name}"))),
            Term::Int(k) => match self.carrier {
                Carrier::Residue => {
                    Ok(Concrete::Res(Digits::from_integer(*k as i128, aux.untilt()?, aux.n)?))
                }
                Carrier::WittPair => {
                    if sort == SORT_W {
                        Ok(Concrete::Witt(WittVec::from_integer(*k as i128, &aux.cfg, aux.n)?))
                    } else {
                        Ok(Concrete::Ring(const_perf(&aux.cfg, *k)))
                    }
                }
                Carrier::Tilt => Ok(Concrete::Ring(const_perf(&aux.cfg, *k))),
                Carrier::Group => {
                    if *k == 0 {
                        // The group identity: valuation zero.
                        Ok(Concrete::Field(FracElem::one(&aux.cfg)))
                    } else {
                        Err(Error::unsupported("no numerals in the value group"))
                    }
                }
            },
            Term::Const(c) => match (self.carrier, c.as_str()) {
                (Carrier::WittPair, "c") => Ok(Concrete::Witt(aux.untilt()?.xi(aux.n)?)),
                (Carrier::Group, "vp") => {
                    let xi0 = aux.untilt()?.xi(1)?.coord(0).clone();
                    Ok(Concrete::Field(FracElem::from_perf(xi0)))
                }
                _ => Err(Error::unsupported(format!("no value for constant {c} here"))),
            },
            Term::Param(e) => match self.carrier {
                Carrier::Tilt => Ok(Concrete::Ring(e.clone())),
                Carrier::Group => Ok(Concrete::Field(FracElem::from_perf(e.clone()))),
                _ => Err(Error::unsupported("parameters have no value in this carrier")),
            },
            _ => Err(Error::invalid("definition right-hand side is not a leaf")),
        }
    }

    fn carrier_app(&self, func: &str, args: &[&Concrete]) -> Result<Concrete> {
        let aux = &self.aux;
        match self.carrier {
            Carrier::Residue => {
                let a = args[0].as_res()?;
                let b = args[1].as_res()?;
                Ok(Concrete::Res(match func {
                    "+" => untilt::digit_add(a, b)?,
                    "*" => untilt::digit_mul(a, b)?,
                    _ => return Err(Error::unsupported(format!("{func} on residue digits"))),
                }))
            }
            Carrier::WittPair => {
                if func == "teich" {
                    let x = args[0].as_ring()?;
                    return Ok(Concrete::Witt(WittVec::teichmuller(x, aux.n)?));
                }
                match args[0] {
                    Concrete::Witt(_) => {
                        let a = args[0].as_witt()?;
                        let b = args[1].as_witt()?;
                        Ok(Concrete::Witt(match func {
                            "+" => a.add(b)?,
                            "*" => a.mul(b)?,
                            _ => return Err(Error::unsupported(format!("{func} on Witt vectors"))),
                        }))
                    }
                    _ => {
                        let a = args[0].as_ring()?;
                        let b = args[1].as_ring()?;
                        Ok(Concrete::Ring(match func {
                            "+" => a.add(b)?,
                            "*" => a.mul(b)?,
                            _ => return Err(Error::unsupported(format!("{func} on the tilt"))),
                        }))
                    }
                }
            }
            Carrier::Tilt => {
                let a = args[0].as_ring()?;
                let b = args[1].as_ring()?;
                Ok(Concrete::Ring(match func {
                    "+" => a.add(b)?,
                    "*" => a.mul(b)?,
                    _ => return Err(Error::unsupported(format!("{func} on the tilt"))),
                }))
            }
            Carrier::Group => {
                // Group addition of valuations is field multiplication.
                if func != "+" {
                    return Err(Error::unsupported(format!("{func} in the value group")));
                }
                let a = args[0].as_field()?;
                let b = args[1].as_field()?;
                Ok(Concrete::Field(a.mul(&b)?))
            }
        }
    }

    /// Coordinate values of a bound variable's value under expansion.
    fn expand_value(&self, value: &Concrete, sort: &str, k: usize) -> Result<Vec<Concrete>> {
        match self.carrier {
            Carrier::Residue => Ok(vec![Concrete::Witt(value.as_res()?.lift()?)]),
            Carrier::WittPair => {
                if sort == SORT_W {
                    let w = value.as_witt()?;
                    debug_assert_eq!(w.level(), k);
                    Ok(w.coords().iter().map(|c| Concrete::Ring(c.clone())).collect())
                } else {
                    Ok(vec![Concrete::Ring(value.as_ring()?.clone())])
                }
            }
            Carrier::Tilt => Ok(vec![value.clone()]),
            Carrier::Group => Ok(vec![Concrete::Field(value.as_field()?)]),
        }
    }
}

fn to_atom(f: &Formula, sig: &Signature, env: &BTreeMap<String, String>) -> Result<Atom> {
    let var_sort =
        |v: &String| env.get(v).cloned().unwrap_or_else(|| sig.default_sort().to_string());
    match f {
        Formula::Eq(Term::Var(a), rhs) => {
            let sort = var_sort(a);
            let rhs = match rhs {
                Term::Var(b) => AtomRhs::Var(b.clone()),
                Term::Int(k) => AtomRhs::Int(*k),
                Term::Const(c) => AtomRhs::Const(c.clone()),
                Term::Param(e) => AtomRhs::Param(e.clone()),
                _ => return Err(Error::invalid("reduction reached a nested equality")),
            };
            Ok(Atom::Eq { lhs: a.clone(), rhs, sort })
        }
        Formula::Eq(Term::App { func, args }, Term::Var(r)) => {
            let names: Vec<String> = args
                .iter()
                .map(|t| match t {
                    Term::Var(v) => Ok(v.clone()),
                    _ => Err(Error::invalid("reduction reached a nested application")),
                })
                .collect::<Result<_>>()?;
            let sort = if func == "teich" { SORT_R.to_string() } else { var_sort(&names[0]) };
            Ok(Atom::Func { func: func.clone(), args: names, result: r.clone(), sort })
        }
        Formula::Less(Term::Var(a), Term::Var(b)) => {
            Ok(Atom::Less { lhs: a.clone(), rhs: b.clone() })
        }
        Formula::InO(Term::Var(v)) => Ok(Atom::InO { var: v.clone() }),
        Formula::InM(Term::Var(v)) => Ok(Atom::InM { var: v.clone() }),
        _ => Err(Error::invalid("reduction reached an atom that is not in unnested form")),
    }
}

fn const_perf(cfg: &Arc<PrimeConfig>, k: u64) -> PerfElem {
    PerfElem::monomial(cfg, cfg.from_u64(k % cfg.p()), Exponent::zero())
}

/// The prime-subfield numeral a constant equals, if any.
fn fq_numeral(cfg: &Arc<PrimeConfig>, c: &FqElem) -> Result<u64> {
    for a in 0..cfg.p() {
        if cfg.from_u64(a) == *c {
            return Ok(a);
        }
    }
    Err(Error::domain("coordinate lies outside the prime subfield"))
}

/// A Witt addition/multiplication polynomial as a target-language term over
/// the coordinate variables of the two arguments.
fn poly_to_term(poly: &WittPoly, p: u64, xs: &[String], ys: &[String]) -> Term {
    let mut monos = Vec::new();
    for (vars, coeff) in poly.sorted_terms() {
        let c = coeff.rem_u64(p);
        if c == 0 {
            continue;
        }
        let mut factors = Vec::new();
        if c != 1 || vars.is_empty() {
            factors.push(Term::Int(c));
        }
        for (v, e) in vars {
            let name = match v {
                PolyVar::X(j) => &xs[j],
                PolyVar::Y(j) => &ys[j],
            };
            for _ in 0..e {
                factors.push(Term::var(name.clone()));
            }
        }
        monos.push(if factors.len() == 1 { factors.pop().unwrap() } else { Term::mul(factors) });
    }
    match monos.len() {
        0 => Term::Int(0),
        1 => monos.pop().unwrap(),
        _ => Term::add(monos),
    }
}

fn coords_of(v: &str, k: usize) -> Vec<String> {
    (0..k).map(|i| coord_name(v, i, k)).collect()
}

/// Rule shared by the plain and xi-extended coordinate translations.
fn witt_coords_rule(
    cfg: Arc<PrimeConfig>,
    n: usize,
    with_xi: bool,
) -> Result<Rule> {
    let cache = Arc::new(WittPolyCache::new(cfg.p())?);
    Ok(Arc::new(move |atom: &Atom, ctx: &mut RuleCtx| -> Result<Formula> {
        let aux = ctx.aux;
        match atom {
            Atom::Func { func, args, result, sort } if sort == SORT_W => {
                let xs = coords_of(&args[0], n);
                let ys = coords_of(args.get(1).unwrap_or(&args[0]), n);
                let zs = coords_of(result, n);
                if func == "teich" {
                    // [x] = (x, 0, ..., 0); args[0] is a base-sort variable.
                    let mut parts =
                        vec![Formula::Eq(Term::var(zs[0].clone()), Term::var(args[0].clone()))];
                    for z in &zs[1..] {
                        parts.push(Formula::Eq(Term::var(z.clone()), Term::Int(0)));
                    }
                    return Ok(and_of(parts));
                }
                let mut parts = Vec::with_capacity(n);
                for i in 0..n {
                    let poly = match func.as_str() {
                        "+" => cache.sum_poly(i)?,
                        "*" => cache.prod_poly(i)?,
                        _ => return Err(Error::unsupported(format!("{func} on Witt vectors"))),
                    };
                    parts.push(Formula::Eq(
                        Term::var(zs[i].clone()),
                        poly_to_term(&poly, aux.cfg.p(), &xs, &ys),
                    ));
                }
                Ok(and_of(parts))
            }
            Atom::Func { func, args, result, sort } if sort == SORT_R && func == "teich" => {
                // Teichmuller of a base variable: handled under the W sort
                // because its result coordinates live there.
                let zs = coords_of(result, n);
                let mut parts =
                    vec![Formula::Eq(Term::var(zs[0].clone()), Term::var(args[0].clone()))];
                for z in &zs[1..] {
                    parts.push(Formula::Eq(Term::var(z.clone()), Term::Int(0)));
                }
                Ok(and_of(parts))
            }
            Atom::Func { func, args, result, .. } => Ok(Formula::Eq(
                Term::App {
                    func: func.clone(),
                    args: args.iter().map(|a| Term::var(a.clone())).collect(),
                },
                Term::var(result.clone()),
            )),
            Atom::Eq { lhs, rhs: AtomRhs::Var(rhs), sort } if sort == SORT_W => {
                let xs = coords_of(lhs, n);
                let ys = coords_of(rhs, n);
                Ok(and_of(
                    xs.into_iter()
                        .zip(ys)
                        .map(|(a, b)| Formula::Eq(Term::var(a), Term::var(b)))
                        .collect(),
                ))
            }
            Atom::Eq { lhs, rhs: AtomRhs::Int(k), sort } if sort == SORT_W => {
                let w = WittVec::from_integer(*k as i128, &aux.cfg, n)?;
                let xs = coords_of(lhs, n);
                let mut parts = Vec::with_capacity(n);
                for (x, c) in xs.into_iter().zip(w.coords()) {
                    let a = fq_numeral(&aux.cfg, &c.coeff_at(&Exponent::zero()))?;
                    parts.push(Formula::Eq(Term::var(x), Term::Int(a)));
                }
                Ok(and_of(parts))
            }
            Atom::Eq { lhs, rhs: AtomRhs::Const(c), sort } if with_xi && sort == SORT_W => {
                if c != "c" {
                    return Err(Error::unsupported(format!("unknown constant {c}")));
                }
                let xi = aux.untilt()?.xi(n)?;
                let xs = coords_of(lhs, n);
                let mut parts = Vec::with_capacity(n);
                for (x, coord) in xs.into_iter().zip(xi.coords()) {
                    parts.push(Formula::Eq(Term::var(x), Term::Param(coord.clone())));
                }
                Ok(and_of(parts))
            }
            Atom::Eq { lhs, rhs, .. } => {
                let rhs = match rhs {
                    AtomRhs::Var(b) => Term::var(b.clone()),
                    AtomRhs::Int(k) => Term::Int(*k),
                    _ => return Err(Error::unsupported("constant atom outside the W sort")),
                };
                Ok(Formula::Eq(Term::var(lhs.clone()), rhs))
            }
            Atom::InM { var } if with_xi => Ok(Formula::InM(Term::var(var.clone()))),
            Atom::InM { .. } | Atom::InO { .. } | Atom::Less { .. } => {
                Err(Error::unsupported("relation atom outside this source language"))
            }
        }
    }))
}

fn witt_pair_dims(n: usize) -> BTreeMap<String, (usize, String)> {
    BTreeMap::from([
        (SORT_W.to_string(), (n, SORT_R.to_string())),
        (SORT_R.to_string(), (1, SORT_R.to_string())),
    ])
}

/// Sentences about (W_n(F), F) become sentences about F: Witt variables
/// split into coordinates and the ring operations become their coordinate
/// polynomials.
pub fn witt_coordinate_translation(cfg: &Arc<PrimeConfig>, n: usize) -> Result<Interpretation> {
    let aux = InterpAux { cfg: cfg.clone(), untilt: None, n };
    Ok(Interpretation {
        name: format!("witt-coords[{n}]"),
        source: Signature::two_sorted(),
        target: Signature::ring(),
        kind: Kind::Atomic(AtomicInterp {
            dims: witt_pair_dims(n),
            domain: Arc::new(|_| None),
            rule: witt_coords_rule(cfg.clone(), n, false)?,
            carrier: Carrier::WittPair,
            aux,
            class: ComplexityClass::QuantifierFree,
        }),
    })
}

/// The coordinate translation extended with the distinguished constant c
/// (sent to the coordinates of xi) and the maximal-ideal predicate on the
/// base sort.
pub fn witt_coordinate_translation_with_xi(
    untilt: &Arc<UntiltSpec>,
    n: usize,
) -> Result<Interpretation> {
    let cfg = untilt.cfg().clone();
    let aux = InterpAux { cfg: cfg.clone(), untilt: Some(untilt.clone()), n };
    Ok(Interpretation {
        name: format!("witt-coords-xi[{n}]"),
        source: Signature::two_sorted_local(),
        target: Signature::local_ring().with_params(),
        kind: Kind::Atomic(AtomicInterp {
            dims: witt_pair_dims(n),
            domain: Arc::new(|_| None),
            rule: witt_coords_rule(cfg, n, true)?,
            carrier: Carrier::WittPair,
            aux,
            class: ComplexityClass::QuantifierFree,
        }),
    })
}

/// Sentences about the residue ring O_K/(p^n) become sentences about
/// (W_n(O_F), O_F): every atom acquires an existential slack variable
/// multiplying the distinguished constant.
pub fn residue_lift_translation(untilt: &Arc<UntiltSpec>, n: usize) -> Result<Interpretation> {
    let aux = InterpAux { cfg: untilt.cfg().clone(), untilt: Some(untilt.clone()), n };
    let rule_aux = aux.clone();
    let rule: Rule = Arc::new(move |atom: &Atom, ctx: &mut RuleCtx| -> Result<Formula> {
        let aux = &rule_aux;
        let slack = |ctx: &mut RuleCtx, lhs: Term, rhs: Term| -> (String, Formula) {
            let w = ctx.fresh.next();
            let body = Formula::Eq(
                lhs,
                Term::add(vec![rhs, Term::mul(vec![Term::var(w.clone()), Term::Const("c".into())])]),
            );
            (w.clone(), exists(w, SORT_W, body))
        };
        let quotient = |x: &WittVec, y: &WittVec| -> Result<WittVec> {
            let (_, q) = untilt::reduce_with_quotient(&x.sub(y)?, aux.untilt()?)?;
            Ok(q)
        };
        match atom {
            Atom::Eq { lhs, rhs, .. } => {
                let (rhs_term, rhs_val) = match rhs {
                    AtomRhs::Var(b) => (
                        Term::var(b.clone()),
                        if ctx.witnessing() { Some(ctx.val(b)?.as_res()?.lift()?) } else { None },
                    ),
                    AtomRhs::Int(k) => (
                        Term::Int(*k),
                        if ctx.witnessing() {
                            Some(WittVec::from_integer(*k as i128, &aux.cfg, aux.n)?)
                        } else {
                            None
                        },
                    ),
                    _ => return Err(Error::unsupported("constant atom in the residue language")),
                };
                let (w, out) = slack(ctx, Term::var(lhs.clone()), rhs_term);
                if let Some(rhs_val) = rhs_val {
                    let x = ctx.val(lhs)?.as_res()?.lift()?;
                    ctx.out.insert(w, Concrete::Witt(quotient(&x, &rhs_val)?));
                }
                Ok(out)
            }
            Atom::Func { func, args, result, .. } => {
                let app = Term::App {
                    func: func.clone(),
                    args: args.iter().map(|a| Term::var(a.clone())).collect(),
                };
                let (w, out) = slack(ctx, app, Term::var(result.clone()));
                if ctx.witnessing() {
                    let a = ctx.val(&args[0])?.as_res()?.lift()?;
                    let b = ctx.val(&args[1])?.as_res()?.lift()?;
                    let v = match func.as_str() {
                        "+" => a.add(&b)?,
                        "*" => a.mul(&b)?,
                        _ => return Err(Error::unsupported(format!("{func} in the residue language"))),
                    };
                    let z = ctx.val(result)?.as_res()?.lift()?;
                    ctx.out.insert(w, Concrete::Witt(quotient(&v, &z)?));
                }
                Ok(out)
            }
            Atom::InM { var } => {
                if ctx.witnessing() {
                    return Err(Error::unsupported(
                        "maximal-ideal atoms are not witness-transportable",
                    ));
                }
                // x is in the ideal iff x = [y] z + w c with y in the base
                // ideal: the first digit of x has positive valuation.
                let z = ctx.fresh.next();
                let w = ctx.fresh.next();
                let y = ctx.fresh.next();
                let body = and_of(vec![
                    Formula::InM(Term::var(y.clone())),
                    Formula::Eq(
                        Term::var(var.clone()),
                        Term::add(vec![
                            Term::mul(vec![Term::teich(Term::var(y.clone())), Term::var(z.clone())]),
                            Term::mul(vec![Term::var(w.clone()), Term::Const("c".into())]),
                        ]),
                    ),
                ]);
                Ok(exists(z, SORT_W, exists(w, SORT_W, exists(y, SORT_R, body))))
            }
            Atom::InO { .. } | Atom::Less { .. } => {
                Err(Error::unsupported("relation atom outside the residue language"))
            }
        }
    });
    Ok(Interpretation {
        name: format!("residue-lift[{n}]"),
        source: Signature::local_ring(),
        target: Signature::two_sorted_local(),
        kind: Kind::Atomic(AtomicInterp {
            dims: BTreeMap::from([(SORT_R.to_string(), (1, SORT_W.to_string()))]),
            domain: Arc::new(|_| None),
            rule,
            carrier: Carrier::Residue,
            aux,
            class: ComplexityClass::ExistentialPositive,
        }),
    })
}

/// Sentences about the valuation ring O_F, with parameters, become
/// sentences about the field F: quantifiers are relativized to O and ideal
/// membership becomes non-invertibility inside O.
pub fn local_to_valued_translation(cfg: &Arc<PrimeConfig>) -> Result<Interpretation> {
    let aux = InterpAux { cfg: cfg.clone(), untilt: None, n: 1 };
    let rule: Rule = Arc::new(|atom: &Atom, ctx: &mut RuleCtx| -> Result<Formula> {
        match atom {
            Atom::Eq { lhs, rhs, .. } => {
                let rhs = match rhs {
                    AtomRhs::Var(b) => Term::var(b.clone()),
                    AtomRhs::Int(k) => Term::Int(*k),
                    AtomRhs::Param(e) => Term::Param(e.clone()),
                    AtomRhs::Const(c) => {
                        return Err(Error::unsupported(format!("unknown constant {c}")))
                    }
                };
                Ok(Formula::Eq(Term::var(lhs.clone()), rhs))
            }
            Atom::Func { func, args, result, .. } => Ok(Formula::Eq(
                Term::App {
                    func: func.clone(),
                    args: args.iter().map(|a| Term::var(a.clone())).collect(),
                },
                Term::var(result.clone()),
            )),
            Atom::InM { var } => {
                // x in m iff x = 0 or 1/x exists outside O. The zero
                // disjunct comes first so witness evaluation never needs an
                // inverse for zero.
                let y = ctx.fresh.next();
                if ctx.witnessing() {
                    let x = ctx.val(var)?.as_ring()?.clone();
                    if !x.is_zero() {
                        let inv = FracElem::from_perf(x).inverse()?;
                        ctx.out.insert(y.clone(), Concrete::Field(inv));
                    }
                }
                let inverse = and_of(vec![
                    Formula::Eq(
                        Term::mul(vec![Term::var(var.clone()), Term::var(y.clone())]),
                        Term::Int(1),
                    ),
                    Formula::Not(Box::new(Formula::InO(Term::var(y.clone())))),
                ]);
                Ok(or_of_two(
                    Formula::Eq(Term::var(var.clone()), Term::Int(0)),
                    exists(y, SORT_R, inverse),
                ))
            }
            Atom::InO { .. } | Atom::Less { .. } => {
                Err(Error::unsupported("relation atom outside the local-ring language"))
            }
        }
    });
    Ok(Interpretation {
        name: "local-to-valued".to_string(),
        source: Signature::local_ring().with_params(),
        target: Signature::valued_ring().with_params(),
        kind: Kind::Atomic(AtomicInterp {
            dims: BTreeMap::from([(SORT_R.to_string(), (1, SORT_R.to_string()))]),
            domain: Arc::new(|v| Some(Formula::InO(Term::var(v.to_string())))),
            rule,
            carrier: Carrier::Tilt,
            aux,
            class: ComplexityClass::ExistentialPositive,
        }),
    })
}

fn or_of_two(a: Formula, b: Formula) -> Formula {
    Formula::Or(vec![a, b])
}

/// The full chain: residue-ring sentences about O_K/(p^n) become valued
/// field sentences about the tilt F with exact parameters.
pub fn residue_to_tilt(untilt: &Arc<UntiltSpec>, n: usize) -> Result<Interpretation> {
    let a = residue_lift_translation(untilt, n)?;
    let b = witt_coordinate_translation_with_xi(untilt, n)?;
    let d = local_to_valued_translation(untilt.cfg())?;
    Ok(a.compose(b)?.compose(d)?.renamed(&format!("residue-to-tilt[{n}]")))
}

/// Sentences about the value group (with the distinguished element vp)
/// become sentences about the field: group elements are represented by
/// nonzero field elements, equality and order become ratio membership in O
/// and m, and + reads as multiplication.
pub fn value_group_translation(untilt: &Arc<UntiltSpec>) -> Result<Interpretation> {
    let cfg = untilt.cfg().clone();
    let aux = InterpAux { cfg, untilt: Some(untilt.clone()), n: 1 };
    let xi0 = untilt.xi(1)?.coord(0).clone();
    let rule: Rule = Arc::new(move |atom: &Atom, ctx: &mut RuleCtx| -> Result<Formula> {
        // v(a) = v(b) iff b/a and a/b both lie in O.
        let ratio = |ctx: &mut RuleCtx,
                     a: Term,
                     b: Term,
                     av: Option<FracElem>,
                     bv: Option<FracElem>|
         -> Result<Formula> {
            let u = ctx.fresh.next();
            let u2 = ctx.fresh.next();
            if let (Some(av), Some(bv)) = (av, bv) {
                ctx.out.insert(u.clone(), Concrete::Field(bv.mul(&av.inverse()?)?));
                ctx.out.insert(u2.clone(), Concrete::Field(av.mul(&bv.inverse()?)?));
            }
            let body = and_of(vec![
                Formula::InO(Term::var(u.clone())),
                Formula::InO(Term::var(u2.clone())),
                Formula::Eq(Term::mul(vec![a.clone(), Term::var(u.clone())]), b.clone()),
                Formula::Eq(Term::mul(vec![b, Term::var(u2.clone())]), a),
            ]);
            Ok(exists(u, SORT_R, exists(u2, SORT_R, body)))
        };
        match atom {
            Atom::Eq { lhs, rhs: AtomRhs::Var(rhs), .. } => {
                let (av, bv) = if ctx.witnessing() {
                    (Some(ctx.val(lhs)?.as_field()?), Some(ctx.val(rhs)?.as_field()?))
                } else {
                    (None, None)
                };
                ratio(ctx, Term::var(lhs.clone()), Term::var(rhs.clone()), av, bv)
            }
            Atom::Eq { lhs, rhs: AtomRhs::Int(0), .. } => {
                // The group identity: x is a unit of O.
                let y = ctx.fresh.next();
                if ctx.witnessing() {
                    let x = ctx.val(lhs)?.as_field()?;
                    ctx.out.insert(y.clone(), Concrete::Field(x.inverse()?));
                }
                let body = and_of(vec![
                    Formula::InO(Term::var(lhs.clone())),
                    Formula::InO(Term::var(y.clone())),
                    Formula::Eq(
                        Term::mul(vec![Term::var(lhs.clone()), Term::var(y.clone())]),
                        Term::Int(1),
                    ),
                ]);
                Ok(exists(y, SORT_R, body))
            }
            Atom::Eq { lhs, rhs: AtomRhs::Const(c), .. } if c == "vp" => {
                let (av, bv) = if ctx.witnessing() {
                    (
                        Some(ctx.val(lhs)?.as_field()?),
                        Some(FracElem::from_perf(xi0.clone())),
                    )
                } else {
                    (None, None)
                };
                ratio(ctx, Term::var(lhs.clone()), Term::Param(xi0.clone()), av, bv)
            }
            Atom::Func { func, args, result, .. } if func == "+" => {
                let prod = Term::mul(vec![Term::var(args[0].clone()), Term::var(args[1].clone())]);
                let (av, bv) = if ctx.witnessing() {
                    let a = ctx.val(&args[0])?.as_field()?;
                    let b = ctx.val(&args[1])?.as_field()?;
                    (Some(a.mul(&b)?), Some(ctx.val(result)?.as_field()?))
                } else {
                    (None, None)
                };
                ratio(ctx, prod, Term::var(result.clone()), av, bv)
            }
            Atom::Less { lhs, rhs } => {
                // v(a) < v(b) iff b/a lies in the maximal ideal.
                let u = ctx.fresh.next();
                if ctx.witnessing() {
                    let a = ctx.val(lhs)?.as_field()?;
                    let b = ctx.val(rhs)?.as_field()?;
                    ctx.out.insert(u.clone(), Concrete::Field(b.mul(&a.inverse()?)?));
                }
                let body = and_of(vec![
                    Formula::InM(Term::var(u.clone())),
                    Formula::Eq(
                        Term::mul(vec![Term::var(lhs.clone()), Term::var(u.clone())]),
                        Term::var(rhs.clone()),
                    ),
                ]);
                Ok(exists(u, SORT_R, body))
            }
            _ => Err(Error::unsupported("atom outside the ordered-group language")),
        }
    });
    Ok(Interpretation {
        name: "value-group".to_string(),
        source: Signature::ordered_group_vp(),
        target: Signature::valued_ring().with_params(),
        kind: Kind::Atomic(AtomicInterp {
            dims: BTreeMap::from([(SORT_G.to_string(), (1, SORT_R.to_string()))]),
            domain: Arc::new(|v| {
                Some(Formula::Not(Box::new(Formula::Eq(Term::var(v.to_string()), Term::Int(0)))))
            }),
            rule,
            carrier: Carrier::Group,
            aux,
            class: ComplexityClass::Existential,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feval::{
        build_fq_structure, build_wn_structure, eval, eval_eplus_with, EvalOpts,
    };
    use crate::formula::{classify, one_point, parse_formula, render_formula};
    use crate::untilt::{sharp, UntiltKind};

    fn cfg(p: u64, d: usize) -> Arc<PrimeConfig> {
        PrimeConfig::new(p, d, None).unwrap()
    }

    fn ppr(p: u64) -> Arc<UntiltSpec> {
        UntiltSpec::builtin(UntiltKind::PPowerRoots, &cfg(p, 1)).unwrap()
    }

    #[test]
    fn coordinate_translation_golden_shape() {
        let c = cfg(2, 1);
        let g = witt_coordinate_translation(&c, 2).unwrap();
        let two = Signature::two_sorted();
        let f = parse_formula(&two, None, "E x (x + x = 0)").unwrap();
        let out = one_point(&g.reduce(&f).unwrap());
        assert_eq!(
            render_formula(&out, g.target()),
            "E x_0 E x_1 (x_0 + x_0 = 0 & x_1 + x_0*x_0 + x_1 = 0)"
        );
        assert!(classify(&out).le(ComplexityClass::Existential));
    }

    #[test]
    fn coordinate_translation_agrees_with_direct_evaluation() {
        let sentences = [
            "E x:W (x + x = 0)",
            "A x:W (x*0 = 0)",
            "E x:W (x*x = 2)",
            "A x:W E y:W (x + y = 0)",
            "A x:R ([x]*[x] = [x*x])",
            "E x:W (2*x = 1)",
            "A x:W (x*2 = x + x)",
        ];
        for (p, d, n) in [(2, 1, 2), (2, 2, 2), (3, 1, 2), (2, 1, 3)] {
            let c = cfg(p, d);
            let g = witt_coordinate_translation(&c, n).unwrap();
            let wn = build_wn_structure(&c, n).unwrap();
            let fq = build_fq_structure(&c).unwrap();
            for text in sentences {
                let f = parse_formula(&Signature::two_sorted(), None, text).unwrap();
                let direct = eval(&wn, &f, 10_000_000).unwrap();
                let translated = one_point(&g.reduce(&f).unwrap());
                let via = eval(&fq, &translated, 10_000_000).unwrap();
                assert_eq!(direct, via, "oracle mismatch on {text} at p={p} d={d} n={n}");
            }
        }
    }

    #[test]
    fn residue_lift_golden_shape() {
        let u = ppr(2);
        let a = residue_lift_translation(&u, 2).unwrap();
        let f = parse_formula(&Signature::local_ring(), None, "E x (x = 1)").unwrap();
        let out = a.reduce(&f).unwrap();
        assert_eq!(render_formula(&out, a.target()), "E x:W E u0:W (x = 1 + u0*c)");
    }

    #[test]
    fn residue_pipeline_transports_power_root_witnesses() {
        for p in [2u64, 3] {
            let u = ppr(p);
            let n = 2usize;
            let interp = residue_to_tilt(&u, n).unwrap();
            // x^p = p in O_K/(p^2), witnessed by the sharp of t^(1/p).
            let c = u.cfg();
            let text = match p {
                2 => "E x (x*x = 2)",
                _ => "E x (x*x*x = 3)",
            };
            let f = parse_formula(&Signature::local_ring(), None, text).unwrap();
            let root = PerfElem::monomial(c, c.one(), Exponent::new(1, p, 1).unwrap());
            let wit = sharp(&root, &u, n).unwrap();
            // Sanity: the witness really solves the source sentence.
            let mut pw = wit.clone();
            for _ in 1..p {
                pw = untilt::digit_mul(&pw, &wit).unwrap();
            }
            assert_eq!(pw, Digits::from_integer(p as i128, &u, n).unwrap());

            let w = BTreeMap::from([("x".to_string(), Concrete::Res(wit))]);
            let (out, values) = interp.reduce_with_witness(&f, &w).unwrap();
            assert!(classify(&out).le(ComplexityClass::ExistentialPositive));
            let asg = to_values(&values).unwrap();
            assert!(eval_eplus_with(&out, &asg, &EvalOpts::default()).unwrap());

            // A wrong witness transports fine but fails evaluation.
            let bad = BTreeMap::from([(
                "x".to_string(),
                Concrete::Res(Digits::one(&u, n).unwrap()),
            )]);
            let (out, values) = interp.reduce_with_witness(&f, &bad).unwrap();
            let asg = to_values(&values).unwrap();
            assert!(!eval_eplus_with(&out, &asg, &EvalOpts::default()).unwrap());
        }
    }

    #[test]
    fn value_group_positivity_and_halving() {
        let u = ppr(2);
        let vg = value_group_translation(&u).unwrap();
        let sig = Signature::ordered_group_vp();
        let c = u.cfg();

        // vp is positive: no witness needed beyond the unnesting values.
        let f = parse_formula(&sig, None, "0 < vp").unwrap();
        let (out, values) = vg.reduce_with_witness(&f, &BTreeMap::new()).unwrap();
        let asg = to_values(&values).unwrap();
        assert!(eval_eplus_with(&out, &asg, &EvalOpts::default()).unwrap());

        // vp halves, witnessed by v(t^(1/2)).
        let f = parse_formula(&sig, None, "E g (g + g = vp)").unwrap();
        let half = PerfElem::monomial(c, c.one(), Exponent::new(1, 2, 1).unwrap());
        let w = BTreeMap::from([(
            "g".to_string(),
            Concrete::Field(FracElem::from_perf(half)),
        )]);
        let (out, values) = vg.reduce_with_witness(&f, &w).unwrap();
        let asg = to_values(&values).unwrap();
        assert!(eval_eplus_with(&out, &asg, &EvalOpts::default()).unwrap());

        // v(t) doubles to 2, not to vp = 1.
        let wrong = BTreeMap::from([(
            "g".to_string(),
            Concrete::Field(FracElem::from_perf(PerfElem::var_t(c))),
        )]);
        let (out, values) = vg.reduce_with_witness(&f, &wrong).unwrap();
        let asg = to_values(&values).unwrap();
        assert!(!eval_eplus_with(&out, &asg, &EvalOpts::default()).unwrap());
    }

    #[test]
    fn value_group_totality_translates_structurally() {
        let u = ppr(3);
        let vg = value_group_translation(&u).unwrap();
        let sig = Signature::ordered_group_vp();
        let f = parse_formula(&sig, None, "A g A h (g < h | h < g | g = h)").unwrap();
        let out = vg.reduce(&f).unwrap();
        let text = render_formula(&out, vg.target());
        assert!(text.starts_with("A g (!(g = 0) -> A h (!(h = 0) ->"), "got {text}");
        assert_eq!(classify(&out), ComplexityClass::Full);
    }

    #[test]
    fn composite_dimensions_multiply() {
        let u = ppr(2);
        let interp = residue_to_tilt(&u, 3).unwrap();
        assert_eq!(interp.sort_dim(SORT_R).unwrap(), (3, SORT_R.to_string()));
        assert_eq!(interp.declared_class(), ComplexityClass::ExistentialPositive);
        let g = witt_coordinate_translation(u.cfg(), 3).unwrap();
        assert_eq!(g.sort_dim(SORT_W).unwrap(), (3, SORT_R.to_string()));
        assert_eq!(g.sort_dim(SORT_R).unwrap(), (1, SORT_R.to_string()));
    }

    #[test]
    fn coordinate_collisions_are_rejected() {
        let c = cfg(2, 1);
        let g = witt_coordinate_translation(&c, 2).unwrap();
        let two = Signature::two_sorted();
        let f = parse_formula(&two, None, "E x E x_0 (x = x_0)").unwrap();
        assert!(g.reduce(&f).is_err());
    }

    #[test]
    fn witness_transport_requires_distinct_binders() {
        let u = ppr(2);
        let interp = residue_to_tilt(&u, 2).unwrap();
        let f = parse_formula(
            &Signature::local_ring(),
            None,
            "E x (x = 1) & E x (x = 0)",
        )
        .unwrap();
        assert!(interp.reduce(&f).is_ok());
        let w = BTreeMap::from([(
            "x".to_string(),
            Concrete::Res(Digits::one(&u, 2).unwrap()),
        )]);
        assert!(interp.reduce_with_witness(&f, &w).is_err());
    }

    #[test]
    fn ideal_membership_round_trip() {
        // m-atoms translate through the full pipeline (without witnesses)
        // and stay within the declared class.
        let u = ppr(3);
        let interp = residue_to_tilt(&u, 2).unwrap();
        let f = parse_formula(&Signature::local_ring(), None, "E x (x in m & x*x = 0)").unwrap();
        let out = interp.reduce(&f).unwrap();
        assert!(classify(&out).le(ComplexityClass::ExistentialPositive));
    }
}
