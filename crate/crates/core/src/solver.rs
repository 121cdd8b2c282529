//! Bounded decision procedures for polynomial systems over the tilt:
//! residue solving modulo t^gamma, valuation-inequality solving, the
//! constructive transfer between the two readings, and the mod-t^{p^N}
//! variant through Frobenius rescaling.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::feval::{eval_qf, EvalOpts, Value};
use crate::field::{checked_pow, FqElem, PrimeConfig};
use crate::formula::{and_of, exists, forall, Formula, Term, SORT_R};
use crate::perfect::{FracElem, PerfElem};

/// The distinguished series name in mixed systems f(x, T): solvers treat it
/// as the constant t^{1/p^N} rather than an unknown.
pub const SERIES_VAR: &str = "T";

/// Monomial: variable name to positive exponent.
type Monomial = BTreeMap<String, u32>;

/// A sparse multivariate polynomial with coefficients in the prime field,
/// kept reduced: coefficients lie in 1..p and no zero terms are stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poly {
    p: u64,
    terms: BTreeMap<Monomial, u64>,
}

impl Poly {
    pub fn zero(p: u64) -> Poly {
        Poly { p, terms: BTreeMap::new() }
    }

    pub fn constant(c: u64, p: u64) -> Poly {
        let mut f = Poly::zero(p);
        f.add_term(Monomial::new(), c);
        f
    }

    pub fn variable(name: &str, p: u64) -> Poly {
        let mut f = Poly::zero(p);
        f.add_term(Monomial::from([(name.to_string(), 1)]), 1);
        f
    }

    /// Grammar: sums with + and -, products with *, powers with ^,
    /// parentheses, decimal constants, identifier variables.
    pub fn parse(src: &str, p: u64) -> Result<Poly> {
        let mut ps = PolyParser { src: src.as_bytes(), pos: 0, p };
        let f = ps.sum()?;
        if ps.peek().is_some() {
            return Err(Error::parse(format!(
                "unexpected input after polynomial at byte {}",
                ps.pos
            )));
        }
        Ok(f)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn vars(&self) -> BTreeSet<String> {
        self.terms.keys().flat_map(|m| m.keys().cloned()).collect()
    }

    fn add_term(&mut self, m: Monomial, c: u64) {
        let c = c % self.p;
        if c == 0 {
            return;
        }
        let slot = self.terms.entry(m.clone()).or_insert(0);
        *slot = (*slot + c) % self.p;
        if *slot == 0 {
            self.terms.remove(&m);
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), *c);
        }
        out
    }

    pub fn neg(&self) -> Poly {
        let mut out = Poly::zero(self.p);
        for (m, c) in &self.terms {
            out.add_term(m.clone(), self.p - c);
        }
        out
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero(self.p);
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                let mut m = m1.clone();
                for (v, e) in m2 {
                    *m.entry(v.clone()).or_insert(0) += e;
                }
                out.add_term(m, c1 * c2);
            }
        }
        out
    }

    pub fn pow(&self, e: u32) -> Poly {
        let mut out = Poly::constant(1, self.p);
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// Exact evaluation at ring points; every variable must be assigned.
    pub fn eval(
        &self,
        asg: &BTreeMap<String, PerfElem>,
        cfg: &Arc<PrimeConfig>,
    ) -> Result<PerfElem> {
        let mut acc = PerfElem::zero(cfg);
        for (m, c) in &self.terms {
            let mut term = PerfElem::monomial(cfg, cfg.from_u64(*c), Exponent::zero());
            for (v, e) in m {
                let x = asg
                    .get(v)
                    .ok_or_else(|| Error::domain(format!("unbound variable {v}")))?;
                term = term.mul(&x.pow(u64::from(*e))?)?;
            }
            acc = acc.add(&term)?;
        }
        Ok(acc)
    }

    /// Evaluation at residue-field constants.
    fn eval_fq(&self, asg: &BTreeMap<String, FqElem>, cfg: &Arc<PrimeConfig>) -> Result<FqElem> {
        let mut acc = cfg.zero();
        for (m, c) in &self.terms {
            let mut term = cfg.from_u64(*c);
            for (v, e) in m {
                let x = asg
                    .get(v)
                    .ok_or_else(|| Error::domain(format!("unbound variable {v}")))?;
                term = cfg.mul_fq(&term, &cfg.pow_fq(x, u64::from(*e)));
            }
            acc = cfg.add_fq(&acc, &term);
        }
        Ok(acc)
    }

    /// The polynomial as a formula term: a sum of monomials with numeral
    /// coefficients and powers expanded into binary products. `rename`
    /// substitutes variable names on the way out.
    pub fn to_term(&self, rename: &BTreeMap<String, String>) -> Term {
        let mut parts: Vec<Term> = Vec::new();
        for (m, c) in &self.terms {
            let mut factors: Vec<Term> = Vec::new();
            for (v, e) in m {
                let name = rename.get(v).cloned().unwrap_or_else(|| v.clone());
                for _ in 0..*e {
                    factors.push(Term::var(name.clone()));
                }
            }
            let head = if factors.is_empty() {
                Term::Int(*c)
            } else {
                let mut acc = if *c == 1 { factors.remove(0) } else { Term::Int(*c) };
                for f in factors {
                    acc = Term::App { func: "*".to_string(), args: vec![acc, f] };
                }
                acc
            };
            parts.push(head);
        }
        let mut parts = parts.into_iter();
        let Some(mut acc) = parts.next() else { return Term::Int(0) };
        for t in parts {
            acc = Term::App { func: "+".to_string(), args: vec![acc, t] };
        }
        acc
    }
}

struct PolyParser<'a> {
    src: &'a [u8],
    pos: usize,
    p: u64,
}

impl PolyParser<'_> {
    fn peek(&mut self) -> Option<u8> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.src.get(self.pos).copied()
    }

    fn sum(&mut self) -> Result<Poly> {
        let mut acc = if self.peek() == Some(b'-') {
            self.pos += 1;
            self.product()?.neg()
        } else {
            self.product()?
        };
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = acc.add(&self.product()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = acc.sub(&self.product()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn product(&mut self) -> Result<Poly> {
        let mut acc = self.power()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            acc = acc.mul(&self.power()?);
        }
        Ok(acc)
    }

    fn power(&mut self) -> Result<Poly> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let e = self.number()?;
            let e = u32::try_from(e)
                .map_err(|_| Error::parse("exponent too large".to_string()))?;
            return Ok(base.pow(e));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Poly> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let f = self.sum()?;
                if self.peek() != Some(b')') {
                    return Err(Error::parse("expected )".to_string()));
                }
                self.pos += 1;
                Ok(f)
            }
            Some(c) if c.is_ascii_digit() => Ok(Poly::constant(self.number()?, self.p)),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self
                    .src
                    .get(self.pos)
                    .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                Ok(Poly::variable(name, self.p))
            }
            _ => Err(Error::parse(format!("expected a polynomial atom at byte {}", self.pos))),
        }
    }

    fn number(&mut self) -> Result<u64> {
        let Some(c) = self.peek() else {
            return Err(Error::parse("expected a number".to_string()));
        };
        if !c.is_ascii_digit() {
            return Err(Error::parse("expected a number".to_string()));
        }
        let mut n: u64 = 0;
        while let Some(d) = self.src.get(self.pos).filter(|b| b.is_ascii_digit()) {
            n = n
                .checked_mul(10)
                .and_then(|n| n.checked_add(u64::from(d - b'0')))
                .ok_or_else(|| Error::overflow("numeric literal too large"))?;
            self.pos += 1;
        }
        Ok(n)
    }
}

/// Equations f_i = 0 and inequations g_j != 0 sharing one coefficient
/// configuration; the solvers read them in F_q[t^{1/p^infinity}] or its
/// quotients.
#[derive(Clone, Debug)]
pub struct PolySystem {
    cfg: Arc<PrimeConfig>,
    equations: Vec<Poly>,
    inequations: Vec<Poly>,
}

impl PolySystem {
    pub fn new(
        cfg: &Arc<PrimeConfig>,
        equations: Vec<Poly>,
        inequations: Vec<Poly>,
    ) -> Result<PolySystem> {
        for f in equations.iter().chain(&inequations) {
            if f.p != cfg.p() {
                return Err(Error::invalid("polynomial characteristic differs from the configuration"));
            }
        }
        Ok(PolySystem { cfg: cfg.clone(), equations, inequations })
    }

    pub fn parse(
        cfg: &Arc<PrimeConfig>,
        equations: &[&str],
        inequations: &[&str],
    ) -> Result<PolySystem> {
        let eqs = equations
            .iter()
            .map(|s| Poly::parse(s, cfg.p()))
            .collect::<Result<Vec<_>>>()?;
        let ineqs = inequations
            .iter()
            .map(|s| Poly::parse(s, cfg.p()))
            .collect::<Result<Vec<_>>>()?;
        PolySystem::new(cfg, eqs, ineqs)
    }

    pub fn cfg(&self) -> &Arc<PrimeConfig> {
        &self.cfg
    }

    pub fn equations(&self) -> &[Poly] {
        &self.equations
    }

    pub fn inequations(&self) -> &[Poly] {
        &self.inequations
    }

    /// All variable names, sorted; searches bind them in this order.
    pub fn vars(&self) -> Vec<String> {
        let mut set = BTreeSet::new();
        for f in self.equations.iter().chain(&self.inequations) {
            set.extend(f.vars());
        }
        set.into_iter().collect()
    }
}

/// Search-space caps: candidate exponents are a/p^denom_log with
/// 0 <= a <= numer_cap, and one candidate assigns at most support_cap
/// monomials in total across all variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchBounds {
    pub denom_log: u32,
    pub numer_cap: u64,
    pub support_cap: usize,
}

impl Default for SearchBounds {
    fn default() -> SearchBounds {
        SearchBounds { denom_log: 2, numer_cap: 8, support_cap: 2 }
    }
}

/// Search result: a verified witness, bounded exhaustion, or a finite
/// refutation independent of the bounds.
#[derive(Clone, Debug)]
pub enum Outcome {
    Witness(BTreeMap<String, PerfElem>),
    ExhaustedBounds,
    CertifiedNo { reason: String },
}

impl Outcome {
    pub fn witness(&self) -> Option<&BTreeMap<String, PerfElem>> {
        match self {
            Outcome::Witness(w) => Some(w),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub outcome: Outcome,
    /// Complete candidate assignments tested before stopping.
    pub checked: u64,
}

/// Candidates in increasing total support, then lexicographically by
/// exponent-pool position and unit index; the first accepted assignment
/// wins, so results are reproducible.
struct Search<'a, F> {
    cfg: &'a Arc<PrimeConfig>,
    vars: &'a [String],
    pool: &'a [Exponent],
    units: &'a [FqElem],
    accept: F,
    asg: BTreeMap<String, PerfElem>,
    checked: u64,
    found: Option<BTreeMap<String, PerfElem>>,
}

impl<F: FnMut(&BTreeMap<String, PerfElem>) -> Result<bool>> Search<'_, F> {
    fn run(&mut self, support_cap: usize) -> Result<()> {
        for budget in 0..=support_cap {
            self.var_level(0, budget)?;
            if self.found.is_some() {
                return Ok(());
            }
        }
        Ok(())
    }

    /// Distribute exactly `budget` monomials over vars[vi..].
    fn var_level(&mut self, vi: usize, budget: usize) -> Result<()> {
        if self.found.is_some() {
            return Ok(());
        }
        if vi == self.vars.len() {
            if budget == 0 {
                self.checked += 1;
                if (self.accept)(&self.asg)? {
                    self.found = Some(self.asg.clone());
                }
            }
            return Ok(());
        }
        let mut picks = Vec::new();
        for size in 0..=budget {
            self.monomials(vi, size, budget - size, 0, &mut picks)?;
            if self.found.is_some() {
                return Ok(());
            }
        }
        Ok(())
    }

    /// Choose `left` more (exponent, unit) picks for vars[vi], exponent
    /// indices strictly increasing from `from`.
    fn monomials(
        &mut self,
        vi: usize,
        left: usize,
        rest: usize,
        from: usize,
        picks: &mut Vec<(usize, usize)>,
    ) -> Result<()> {
        if self.found.is_some() {
            return Ok(());
        }
        if left == 0 {
            let elem = PerfElem::from_terms(
                self.cfg,
                picks.iter().map(|&(e, u)| (self.pool[e], self.units[u].clone())),
            );
            self.asg.insert(self.vars[vi].clone(), elem);
            self.var_level(vi + 1, rest)?;
            self.asg.remove(&self.vars[vi]);
            return Ok(());
        }
        if from + left > self.pool.len() {
            return Ok(());
        }
        for e in from..=(self.pool.len() - left) {
            for u in 0..self.units.len() {
                picks.push((e, u));
                self.monomials(vi, left - 1, rest, e + 1, picks)?;
                picks.pop();
                if self.found.is_some() {
                    return Ok(());
                }
            }
        }
        Ok(())
    }
}

fn nonzero_units(cfg: &Arc<PrimeConfig>) -> Vec<FqElem> {
    cfg.elements().filter(|e| !e.is_zero()).collect()
}

fn residue_pool(cfg: &Arc<PrimeConfig>, gamma: &Exponent, bounds: &SearchBounds) -> Result<Vec<Exponent>> {
    let mut pool = Vec::new();
    for a in 0..=bounds.numer_cap {
        let e = Exponent::new(a, cfg.p(), bounds.denom_log)?;
        if e >= *gamma {
            break;
        }
        pool.push(e);
    }
    Ok(pool)
}

fn valuation_pool(cfg: &Arc<PrimeConfig>, bounds: &SearchBounds) -> Result<Vec<Exponent>> {
    (0..=bounds.numer_cap)
        .map(|a| Exponent::new(a, cfg.p(), bounds.denom_log))
        .collect()
}

/// Bounded search for x with every f_i(x) = 0 and every g_j(x) != 0 in
/// F_q[t^{1/p^infinity}]/(t^gamma). Witnesses re-verify through eval_qf;
/// systems with no residue-field constant solution are refuted outright.
pub fn solve_residue(
    system: &PolySystem,
    gamma: &Exponent,
    bounds: &SearchBounds,
) -> Result<SolveReport> {
    if gamma.is_zero() {
        return Err(Error::invalid("the congruence modulus exponent must be positive"));
    }
    solve_residue_pinned(system, gamma, bounds, &BTreeMap::new(), true)
}

fn solve_residue_pinned(
    system: &PolySystem,
    gamma: &Exponent,
    bounds: &SearchBounds,
    pinned: &BTreeMap<String, PerfElem>,
    certify: bool,
) -> Result<SolveReport> {
    let cfg = system.cfg();
    if certify {
        if let Some(reason) = constant_refutation(system)? {
            return Ok(SolveReport { outcome: Outcome::CertifiedNo { reason }, checked: 0 });
        }
    }
    let vars: Vec<String> = system
        .vars()
        .into_iter()
        .filter(|v| !pinned.contains_key(v))
        .collect();
    let pool = residue_pool(cfg, gamma, bounds)?;
    let units = nonzero_units(cfg);
    let mut search = Search {
        cfg,
        vars: &vars,
        pool: &pool,
        units: &units,
        accept: |asg: &BTreeMap<String, PerfElem>| -> Result<bool> {
            for f in &system.equations {
                if !f.eval(asg, cfg)?.truncate(gamma).is_zero() {
                    return Ok(false);
                }
            }
            for g in &system.inequations {
                if g.eval(asg, cfg)?.truncate(gamma).is_zero() {
                    return Ok(false);
                }
            }
            Ok(true)
        },
        asg: pinned.clone(),
        checked: 0,
        found: None,
    };
    search.run(bounds.support_cap)?;
    let checked = search.checked;
    match search.found {
        Some(w) => {
            if !verify_residue(system, &w, gamma)? {
                return Err(Error::domain("search accepted a witness that fails re-verification"));
            }
            Ok(SolveReport { outcome: Outcome::Witness(w), checked })
        }
        None => Ok(SolveReport { outcome: Outcome::ExhaustedBounds, checked }),
    }
}

/// Bounded search for x with v(f_i(x)) > v(g_j(x)) for every pair, read in
/// the valuation ring; v(0) counts as larger than every finite value.
pub fn solve_valuation(system: &PolySystem, bounds: &SearchBounds) -> Result<SolveReport> {
    let cfg = system.cfg();
    let vars = system.vars();
    let pool = valuation_pool(cfg, bounds)?;
    let units = nonzero_units(cfg);
    let mut search = Search {
        cfg,
        vars: &vars,
        pool: &pool,
        units: &units,
        accept: |asg: &BTreeMap<String, PerfElem>| -> Result<bool> {
            for f in &system.equations {
                let fv = f.eval(asg, cfg)?.valuation();
                for g in &system.inequations {
                    let gv = g.eval(asg, cfg)?.valuation();
                    match (fv, gv) {
                        (_, None) => return Ok(false),
                        (None, Some(_)) => {}
                        (Some(a), Some(b)) => {
                            if a <= b {
                                return Ok(false);
                            }
                        }
                    }
                }
            }
            Ok(true)
        },
        asg: BTreeMap::new(),
        checked: 0,
        found: None,
    };
    search.run(bounds.support_cap)?;
    let checked = search.checked;
    match search.found {
        Some(w) => {
            if !verify_valuation(system, &w)? {
                return Err(Error::domain("search accepted a witness that fails re-verification"));
            }
            Ok(SolveReport { outcome: Outcome::Witness(w), checked })
        }
        None => Ok(SolveReport { outcome: Outcome::ExhaustedBounds, checked }),
    }
}

/// eval_qf re-check of a residue witness modulo t^gamma.
pub fn verify_residue(
    system: &PolySystem,
    witness: &BTreeMap<String, PerfElem>,
    gamma: &Exponent,
) -> Result<bool> {
    let rename = BTreeMap::new();
    let mut parts: Vec<Formula> = system
        .equations
        .iter()
        .map(|f| Formula::Eq(f.to_term(&rename), Term::Int(0)))
        .collect();
    parts.extend(
        system
            .inequations
            .iter()
            .map(|g| Formula::Not(Box::new(Formula::Eq(g.to_term(&rename), Term::Int(0))))),
    );
    let conj = and_of(parts);
    let asg: BTreeMap<String, Value> =
        witness.iter().map(|(k, v)| (k.clone(), Value::Ring(v.clone()))).collect();
    eval_qf(&conj, &asg, &EvalOpts { modulus: Some(*gamma) })
}

/// Exact pairwise check v(f_i(x)) > v(g_j(x)): each finite comparison is
/// re-read through the fraction-field carrier as f/g lying in the maximal
/// ideal.
pub fn verify_valuation(system: &PolySystem, witness: &BTreeMap<String, PerfElem>) -> Result<bool> {
    let cfg = system.cfg();
    let in_m = Formula::InM(Term::var("u"));
    for f in &system.equations {
        let fv = f.eval(witness, cfg)?;
        for g in &system.inequations {
            let gv = g.eval(witness, cfg)?;
            if gv.is_zero() {
                return Ok(false);
            }
            if fv.is_zero() {
                continue;
            }
            let ratio = FracElem::new(fv.clone(), gv)?;
            let asg = BTreeMap::from([("u".to_string(), Value::Field(ratio))]);
            if !eval_qf(&in_m, &asg, &EvalOpts::default())? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// A sound finite refutation: the exponent-zero coefficients of any residue
/// solution solve every equation over F_q, so an exhaustive constant scan
/// that comes back empty certifies unsolvability for every modulus t^gamma
/// with gamma > 0 and every search bound.
fn constant_refutation(system: &PolySystem) -> Result<Option<String>> {
    if system.equations.is_empty() {
        return Ok(None);
    }
    let cfg = system.cfg();
    let vars = system.vars();
    let q = cfg.q();
    let Some(total) = checked_pow(q, vars.len() as u32) else {
        return Ok(None);
    };
    if total > 4096 {
        return Ok(None);
    }
    'tuples: for idx in 0..total {
        let mut rem = idx;
        let mut asg = BTreeMap::new();
        for v in &vars {
            asg.insert(v.clone(), cfg.from_index(rem % q)?);
            rem /= q;
        }
        for f in &system.equations {
            if !f.eval_fq(&asg, cfg)?.is_zero() {
                continue 'tuples;
            }
        }
        return Ok(None);
    }
    Ok(Some("no residue-field constant assignment solves the equations".to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferStatus {
    /// At least one side found a witness and every conversion verified.
    Agree,
    /// Both searches exhausted their bounds.
    Inconclusive,
    /// A converted witness failed on the other side, or a witness met a
    /// certified refutation.
    Disagree,
}

#[derive(Clone, Debug)]
pub struct TransferReport {
    pub status: TransferStatus,
    pub residue: SolveReport,
    pub valuation: SolveReport,
    /// The residue witness re-read in the valuation ring, when verified.
    pub residue_to_valuation: Option<BTreeMap<String, PerfElem>>,
    /// The valuation witness rescaled by t -> t^q and reduced, when
    /// verified, together with the chosen q.
    pub valuation_to_residue: Option<(Exponent, BTreeMap<String, PerfElem>)>,
}

/// Run both searches and convert witnesses across the equivalence. A
/// residue witness transfers as-is: its equation values vanish modulo
/// t^gamma while its inequation values do not, which orders the valuations.
/// A valuation witness is rescaled so that gamma falls strictly between the
/// extreme valuations, then reduced.
pub fn transfer_check(
    system: &PolySystem,
    gamma: &Exponent,
    bounds: &SearchBounds,
) -> Result<TransferReport> {
    let p = system.cfg().p();
    if gamma.as_integer() != Some(1) && gamma.as_integer() != Some(p - 1) {
        return Err(Error::invalid("the transfer is stated for gamma = 1 and gamma = p - 1"));
    }
    let residue = solve_residue(system, gamma, bounds)?;
    let valuation = solve_valuation(system, bounds)?;
    let mut residue_to_valuation = None;
    let mut valuation_to_residue = None;
    let mut disagree = false;
    if let Outcome::Witness(w) = &residue.outcome {
        if verify_valuation(system, w)? {
            residue_to_valuation = Some(w.clone());
        } else {
            disagree = true;
        }
    }
    if let Outcome::Witness(w) = &valuation.outcome {
        match rescale_witness(system, w, gamma)? {
            Some((q, rw)) if verify_residue(system, &rw, gamma)? => {
                valuation_to_residue = Some((q, rw));
            }
            _ => disagree = true,
        }
    }
    if matches!(residue.outcome, Outcome::CertifiedNo { .. })
        && matches!(valuation.outcome, Outcome::Witness(_))
    {
        disagree = true;
    }
    let status = if disagree {
        TransferStatus::Disagree
    } else if residue_to_valuation.is_some() || valuation_to_residue.is_some() {
        TransferStatus::Agree
    } else {
        TransferStatus::Inconclusive
    };
    Ok(TransferReport { status, residue, valuation, residue_to_valuation, valuation_to_residue })
}

/// Rescale a valuation witness by t -> t^q with q chosen so that gamma lies
/// strictly between q * max v(g_j) and q * min v(f_i), then reduce modulo
/// t^gamma. An empty inequation list reads as the single inequation 1 != 0.
fn rescale_witness(
    system: &PolySystem,
    witness: &BTreeMap<String, PerfElem>,
    gamma: &Exponent,
) -> Result<Option<(Exponent, BTreeMap<String, PerfElem>)>> {
    let cfg = system.cfg();
    let mut g1 = Exponent::zero();
    for g in &system.inequations {
        match g.eval(witness, cfg)?.valuation() {
            None => return Ok(None),
            Some(v) => {
                if v > g1 {
                    g1 = v;
                }
            }
        }
    }
    let mut g2: Option<Exponent> = None;
    for f in &system.equations {
        if let Some(v) = f.eval(witness, cfg)?.valuation() {
            g2 = Some(match g2 {
                None => v,
                Some(cur) if v < cur => v,
                Some(cur) => cur,
            });
        }
    }
    if let Some(upper) = g2 {
        if upper <= g1 {
            return Ok(None);
        }
    }
    let q = choose_rescale(&g1, g2.as_ref(), gamma, cfg.p())?;
    let mut out = BTreeMap::new();
    for (k, x) in witness {
        out.insert(k.clone(), x.rescale(&q)?.truncate(gamma));
    }
    Ok(Some((q, out)))
}

/// Smallest q = m/p^j (minimal j, then minimal m) with
/// m * g1 < gamma * p^j and, when finite, gamma * p^j < m * g2.
fn choose_rescale(g1: &Exponent, g2: Option<&Exponent>, gamma: &Exponent, p: u64) -> Result<Exponent> {
    let pw = |k: u32| -> Result<u128> {
        u128::from(p)
            .checked_pow(k)
            .ok_or_else(|| Error::overflow("rescaling exponent overflow"))
    };
    let c = u128::from(gamma.num());
    let u = gamma.log_p_den(p);
    let a = u128::from(g1.num());
    let r = g1.log_p_den(p);
    for j in 0..64u32 {
        let m = match g2 {
            None => 1u128,
            Some(g2) => {
                let b = u128::from(g2.num());
                let s = g2.log_p_den(p);
                // smallest m with c * p^(j+s) < m * b * p^u
                c * pw(j + s)? / (b * pw(u)?) + 1
            }
        };
        // need m * a * p^u < c * p^(j+r)
        let rhs = c * pw(j + r)?;
        if m.checked_mul(a * pw(u)?).is_some_and(|lhs| lhs < rhs) {
            let m = u64::try_from(m)
                .map_err(|_| Error::overflow("rescaling numerator overflow"))?;
            return Ok(Exponent::new(m, p, j)?);
        }
    }
    Err(Error::overflow("no rescaling exponent with denominator up to p^64"))
}

/// Solvability of equation systems f_i(x, T) = 0 modulo t^{p^N}: pin
/// T = t^{1/p^N}, solve modulo t, and push any witness back through the
/// N-th Frobenius power, which carries solutions at t^{1/p^N} to solutions
/// at t while multiplying valuations by p^N.
pub fn solve_mod_tn(system: &PolySystem, n: u32, bounds: &SearchBounds) -> Result<SolveReport> {
    if !system.inequations.is_empty() {
        return Err(Error::unsupported("only equation systems lift through Frobenius rescaling"));
    }
    let cfg = system.cfg();
    let root = PerfElem::monomial(cfg, cfg.one(), Exponent::new(1, cfg.p(), n)?);
    let pinned = BTreeMap::from([(SERIES_VAR.to_string(), root)]);
    let report = solve_residue_pinned(system, &Exponent::one(), bounds, &pinned, false)?;
    let Outcome::Witness(w) = report.outcome else {
        return Ok(report);
    };
    let mut out = BTreeMap::new();
    for (k, x) in &w {
        if k == SERIES_VAR {
            continue;
        }
        let mut y = x.clone();
        for _ in 0..n {
            y = y.frobenius()?;
        }
        out.insert(k.clone(), y);
    }
    let target = checked_pow(cfg.p(), n)
        .ok_or_else(|| Error::overflow("modulus exponent p^N overflow"))?;
    let mut full = out.clone();
    full.insert(SERIES_VAR.to_string(), PerfElem::var_t(cfg));
    if !verify_residue(system, &full, &Exponent::integer(target))? {
        return Err(Error::domain("Frobenius push-forward failed re-verification"));
    }
    Ok(SolveReport { outcome: Outcome::Witness(out), checked: report.checked })
}

/// The one-sided reading of series congruences over the local-ring
/// signature: for every y in the maximal ideal there are x with
/// f_i(x, y) = 0, with the series name T rebound to y.
pub fn lift_to_forall_exists(system: &PolySystem) -> Result<Formula> {
    if !system.inequations.is_empty() {
        return Err(Error::unsupported("only equation systems have a forall-exists reading"));
    }
    let vars = system.vars();
    let mut yname = "y".to_string();
    let mut i = 0;
    while vars.contains(&yname) {
        yname = format!("y{i}");
        i += 1;
    }
    let rename = BTreeMap::from([(SERIES_VAR.to_string(), yname.clone())]);
    let parts: Vec<Formula> = system
        .equations
        .iter()
        .map(|f| Formula::Eq(f.to_term(&rename), Term::Int(0)))
        .collect();
    let mut body = and_of(parts);
    for x in vars.iter().rev() {
        if x != SERIES_VAR {
            body = exists(x.clone(), SORT_R, body);
        }
    }
    Ok(forall(
        yname.clone(),
        SORT_R,
        Formula::Implies(Box::new(Formula::InM(Term::var(yname))), Box::new(body)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{render_formula, Signature};

    fn fp(p: u64) -> Arc<PrimeConfig> {
        PrimeConfig::new(p, 1, None).unwrap()
    }

    fn bounds(k: u32, d: u64, s: usize) -> SearchBounds {
        SearchBounds { denom_log: k, numer_cap: d, support_cap: s }
    }

    #[test]
    fn poly_parser_reduces_mod_p() {
        let f = Poly::parse("x^2 - x + 3", 3).unwrap();
        let g = Poly::parse("x*x + 2*x", 3).unwrap();
        assert_eq!(f, g);
        let h = Poly::parse("(x + 1)^2 - (x^2 + 2*x + 1)", 5).unwrap();
        assert!(h.is_zero());
        assert!(Poly::parse("x +", 3).is_err());
        assert!(Poly::parse("x ^ y", 3).is_err());
    }

    #[test]
    fn residue_search_finds_the_unit_root() {
        let cfg = fp(2);
        let sys = PolySystem::parse(&cfg, &["x^2 - x"], &["x"]).unwrap();
        let report = solve_residue(&sys, &Exponent::one(), &bounds(2, 8, 2)).unwrap();
        let w = report.outcome.witness().expect("witness");
        assert_eq!(w["x"], PerfElem::one(&cfg));
    }

    #[test]
    fn residue_refutation_from_constant_terms() {
        let cfg = fp(3);
        let sys = PolySystem::parse(&cfg, &["x^2 + 1"], &[]).unwrap();
        let report = solve_residue(&sys, &Exponent::one(), &bounds(3, 8, 3)).unwrap();
        assert!(matches!(report.outcome, Outcome::CertifiedNo { .. }));
        // The refutation is independent of the modulus exponent.
        let g2 = Exponent::integer(2);
        let report = solve_residue(&sys, &g2, &bounds(2, 8, 2)).unwrap();
        assert!(matches!(report.outcome, Outcome::CertifiedNo { .. }));
    }

    #[test]
    fn empty_system_takes_the_zero_witness() {
        let cfg = fp(2);
        let sys = PolySystem::parse(&cfg, &[], &[]).unwrap();
        let report = solve_residue(&sys, &Exponent::one(), &SearchBounds::default()).unwrap();
        let w = report.outcome.witness().expect("witness");
        assert!(w.is_empty());
        assert_eq!(report.checked, 1);
    }

    #[test]
    fn valuation_search_and_the_maximal_unit_obstruction() {
        let cfg = fp(2);
        let sys = PolySystem::parse(&cfg, &["x^2 - x"], &["x"]).unwrap();
        let report = solve_valuation(&sys, &bounds(2, 8, 2)).unwrap();
        let w = report.outcome.witness().expect("witness");
        assert!(verify_valuation(&sys, w).unwrap());

        // v(1) = 0 is never strictly larger than another valuation in O.
        let sys = PolySystem::parse(&cfg, &["1"], &["x"]).unwrap();
        let report = solve_valuation(&sys, &bounds(2, 4, 2)).unwrap();
        assert!(matches!(report.outcome, Outcome::ExhaustedBounds));

        // The zero assignment already wins when no inequation blocks it.
        let sys = PolySystem::parse(&cfg, &["x"], &["1"]).unwrap();
        let report = solve_valuation(&sys, &bounds(2, 4, 2)).unwrap();
        let w = report.outcome.witness().expect("witness");
        assert!(w["x"].is_zero());
    }

    #[test]
    fn transfer_agrees_on_the_unit_root_instance() {
        let cfg = fp(2);
        let sys = PolySystem::parse(&cfg, &["x^2 - x"], &["x"]).unwrap();
        let report = transfer_check(&sys, &Exponent::one(), &bounds(2, 8, 2)).unwrap();
        assert_eq!(report.status, TransferStatus::Agree);
        assert!(report.residue_to_valuation.is_some());
        assert!(report.valuation_to_residue.is_some());
    }

    #[test]
    fn transfer_gamma_p_minus_one_case() {
        let cfg = fp(3);
        let sys = PolySystem::parse(&cfg, &["x^2 - x"], &["x - 1"]).unwrap();
        let report = transfer_check(&sys, &Exponent::integer(2), &bounds(2, 8, 2)).unwrap();
        assert_eq!(report.status, TransferStatus::Agree);
        let w = report.residue.outcome.witness().expect("residue witness");
        assert!(w["x"].is_zero());
        let w = report.valuation.outcome.witness().expect("valuation witness");
        assert!(w["x"].is_zero());
    }

    #[test]
    fn transfer_rejects_other_moduli() {
        let cfg = fp(3);
        let sys = PolySystem::parse(&cfg, &["x"], &[]).unwrap();
        assert!(transfer_check(&sys, &Exponent::integer(3), &SearchBounds::default()).is_err());
    }

    #[test]
    fn rescaling_conversion_picks_a_nontrivial_q() {
        // f = x^2, g = x: valuation witnesses have 2 v(x) > v(x) > 0, and
        // the first found has v(x) = 1/4, forcing q strictly between 2 and 4.
        let cfg = fp(2);
        let sys = PolySystem::parse(&cfg, &["x^2"], &["x"]).unwrap();
        let report = transfer_check(&sys, &Exponent::one(), &bounds(2, 8, 1)).unwrap();
        assert_eq!(report.status, TransferStatus::Agree);
        let (q, w) = report.valuation_to_residue.as_ref().expect("converted witness");
        assert_eq!(*q, Exponent::integer(3));
        assert!(verify_residue(&sys, w, &Exponent::one()).unwrap());
    }

    #[test]
    fn empty_transfer_is_trivially_witnessed() {
        let cfg = fp(2);
        let sys = PolySystem::parse(&cfg, &[], &[]).unwrap();
        let report = transfer_check(&sys, &Exponent::one(), &SearchBounds::default()).unwrap();
        assert_eq!(report.status, TransferStatus::Agree);
    }

    #[test]
    fn frobenius_rescaling_solves_root_extractions() {
        for p in [2u64, 3] {
            let cfg = fp(p);
            let sys = PolySystem::parse(&cfg, &["X^2 - T"], &[]).unwrap();
            let sys = if p == 2 {
                sys
            } else {
                PolySystem::parse(&cfg, &["X^3 - T"], &[]).unwrap()
            };
            for n in 0..=3u32 {
                let b = bounds(n + 1, p, 1);
                let report = solve_mod_tn(&sys, n, &b).unwrap();
                let w = report.outcome.witness().expect("witness");
                let expect = PerfElem::monomial(&cfg, cfg.one(), Exponent::new(1, p, 1).unwrap());
                if n >= 1 {
                    assert_eq!(w["X"], expect, "p={p} n={n}");
                }
            }
        }
    }

    #[test]
    fn identity_series_equation_recovers_t() {
        let cfg = fp(2);
        let sys = PolySystem::parse(&cfg, &["X - T"], &[]).unwrap();
        for n in 0..=3u32 {
            let report = solve_mod_tn(&sys, n, &bounds(n + 1, 2, 1)).unwrap();
            let w = report.outcome.witness().expect("witness");
            if n == 0 {
                // Modulo t the series constant itself vanishes, so zero is
                // the first solution in search order.
                assert!(w["X"].is_zero());
            } else {
                assert_eq!(w["X"], PerfElem::var_t(&cfg), "n={n}");
            }
        }
    }

    #[test]
    fn forall_exists_reading_shape() {
        let cfg = fp(2);
        let sys = PolySystem::parse(&cfg, &["X - T"], &[]).unwrap();
        let f = lift_to_forall_exists(&sys).unwrap();
        let sig = Signature::local_ring();
        assert_eq!(render_formula(&f, &sig), "A y (y in m -> E X (y + X = 0))");
    }

    #[test]
    fn enlarging_bounds_keeps_witnesses() {
        let cfg = fp(3);
        let instances: [(&[&str], &[&str]); 4] = [
            (&["x^2 - x"], &["x"]),
            (&["x - t_half"], &[]),
            (&["x*y - 1"], &["x - y"]),
            (&["x^3"], &["x^2"]),
        ];
        let small = bounds(1, 3, 1);
        let large = bounds(2, 9, 2);
        for (eqs, ineqs) in instances {
            let sys = PolySystem::parse(&cfg, eqs, ineqs).unwrap();
            let a = solve_residue(&sys, &Exponent::one(), &small).unwrap();
            let b = solve_residue(&sys, &Exponent::one(), &large).unwrap();
            if a.outcome.witness().is_some() {
                assert!(b.outcome.witness().is_some());
            }
            let a = solve_valuation(&sys, &small).unwrap();
            let b = solve_valuation(&sys, &large).unwrap();
            if a.outcome.witness().is_some() {
                assert!(b.outcome.witness().is_some());
            }
        }
    }
}
