//! Evaluation of sentences in explicit finite structures, plus a
//! quantifier-free evaluator over exact ring elements for witness checking.
//!
//! Two independent sentence oracles are provided. [`eval`] walks the formula
//! with an environment and short-circuits; [`eval_naive`] first expands every
//! quantifier into an explicit conjunction or disjunction over the domain and
//! then evaluates the closed propositional result. They share nothing past
//! the atom level, so agreement between them is meaningful evidence.
//!
//! Both are guarded by a cost pre-flight: the cost of a sentence is the
//! number of atom instances a full (non-short-circuiting) evaluation would
//! touch, and evaluation refuses to start if that exceeds the caller's
//! budget. `eval_naive` materializes the expansion, so its memory use is
//! proportional to the same count.

use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::field::PrimeConfig;
use crate::formula::{
    check_sorts, free_vars, infer_sort, substitute, Formula, Signature, Term, SORT_R, SORT_W,
};
use crate::perfect::{FracElem, PerfElem};
use crate::untilt::{self, Digits};
use crate::witt::WittVec;
use std::collections::BTreeMap;
use std::sync::Arc;

pub const DEFAULT_EVAL_BUDGET: u64 = 10_000_000;

struct FuncTable {
    arity: usize,
    /// Row-major over argument indices; entries are element indices of the
    /// result sort.
    table: Vec<usize>,
}

/// An explicit finite structure for a signature: element counts per sort,
/// full operation tables, and numeral tables giving k*1 per sort. Relation
/// symbols are not interpreted; sentences using them are rejected.
pub struct FiniteStructure {
    sig: Signature,
    label: String,
    cfg: Arc<PrimeConfig>,
    sizes: BTreeMap<String, usize>,
    /// Keyed by (function name, argument sort); + and * are overloaded.
    funcs: BTreeMap<(String, String), FuncTable>,
    /// Numeral tables: k maps to entry k mod len, so len is the additive
    /// order of 1 in that sort.
    numerals: BTreeMap<String, Vec<usize>>,
    names: BTreeMap<String, Vec<String>>,
}

impl FiniteStructure {
    pub fn sig(&self) -> &Signature {
        &self.sig
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn cfg(&self) -> &Arc<PrimeConfig> {
        &self.cfg
    }

    pub fn size(&self, sort: &str) -> Option<usize> {
        self.sizes.get(sort).copied()
    }

    pub fn element_name(&self, sort: &str, index: usize) -> Option<&str> {
        self.names.get(sort).and_then(|v| v.get(index)).map(|s| s.as_str())
    }

    /// Index of the numeral k in the given sort.
    pub fn numeral_index(&self, sort: &str, k: u64) -> Option<usize> {
        let table = self.numerals.get(sort)?;
        Some(table[(k % table.len() as u64) as usize])
    }

    fn func_table(&self, name: &str, arg_sort: &str) -> Result<&FuncTable> {
        self.funcs
            .get(&(name.to_string(), arg_sort.to_string()))
            .ok_or_else(|| Error::unsupported(format!("no table for {name} on sort {arg_sort}")))
    }

    fn apply(&self, name: &str, arg_sort: &str, args: &[usize]) -> Result<usize> {
        let ft = self.func_table(name, arg_sort)?;
        debug_assert_eq!(ft.arity, args.len());
        let size = self.sizes[arg_sort];
        let mut flat = 0usize;
        for &a in args {
            flat = flat * size + a;
        }
        Ok(ft.table[flat])
    }
}

/// The field F_q as a structure for the plain ring language.
pub fn build_fq_structure(cfg: &Arc<PrimeConfig>) -> Result<FiniteStructure> {
    let sig = Signature::ring();
    let q = cfg.q() as usize;
    let mut add = Vec::with_capacity(q * q);
    let mut mul = Vec::with_capacity(q * q);
    for a in 0..q {
        let x = cfg.from_index(a as u64)?;
        for b in 0..q {
            let y = cfg.from_index(b as u64)?;
            add.push(cfg.index_of(&cfg.add_fq(&x, &y)) as usize);
            mul.push(cfg.index_of(&cfg.mul_fq(&x, &y)) as usize);
        }
    }
    let mut funcs = BTreeMap::new();
    funcs.insert(("+".to_string(), SORT_R.to_string()), FuncTable { arity: 2, table: add });
    funcs.insert(("*".to_string(), SORT_R.to_string()), FuncTable { arity: 2, table: mul });
    let numerals: Vec<usize> =
        (0..cfg.p()).map(|k| cfg.index_of(&cfg.from_u64(k)) as usize).collect();
    let names: Vec<String> =
        (0..q).map(|i| cfg.format_fq(&cfg.from_index(i as u64).unwrap())).collect();
    Ok(FiniteStructure {
        sig,
        label: format!("F_{}", cfg.q()),
        cfg: cfg.clone(),
        sizes: BTreeMap::from([(SORT_R.to_string(), q)]),
        funcs,
        numerals: BTreeMap::from([(SORT_R.to_string(), numerals)]),
        names: BTreeMap::from([(SORT_R.to_string(), names)]),
    })
}

fn const_perf(cfg: &Arc<PrimeConfig>, c: &crate::field::FqElem) -> PerfElem {
    PerfElem::monomial(cfg, c.clone(), Exponent::zero())
}

/// W element index: little-endian base-q digits over coordinate indices.
fn witt_index(x: &WittVec) -> Result<usize> {
    let cfg = x.cfg();
    let mut idx = 0usize;
    for coord in x.coords().iter().rev() {
        let c = constant_coeff(coord)?;
        idx = idx * cfg.q() as usize + cfg.index_of(&c) as usize;
    }
    Ok(idx)
}

fn constant_coeff(x: &PerfElem) -> Result<crate::field::FqElem> {
    for (e, _) in x.terms() {
        if !e.is_zero() {
            return Err(Error::invalid("coordinate is not a constant"));
        }
    }
    Ok(x.coeff_at(&Exponent::zero()))
}

fn witt_from_index(cfg: &Arc<PrimeConfig>, n: usize, mut idx: usize) -> Result<WittVec> {
    let q = cfg.q() as usize;
    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        let c = cfg.from_index((idx % q) as u64)?;
        coords.push(const_perf(cfg, &c));
        idx /= q;
    }
    WittVec::new(cfg, coords)
}

/// The pair (W_n(F_q), F_q) as a structure for the two-sorted language.
/// All tables are filled through the public Witt arithmetic, so the
/// structure is an independent artifact to test that arithmetic against.
pub fn build_wn_structure(cfg: &Arc<PrimeConfig>, n: usize) -> Result<FiniteStructure> {
    let sig = Signature::two_sorted();
    let q = cfg.q() as usize;
    let wsize = q.checked_pow(n as u32).ok_or_else(|| Error::overflow("q^n"))?;
    let elems: Vec<WittVec> =
        (0..wsize).map(|i| witt_from_index(cfg, n, i)).collect::<Result<_>>()?;

    let mut wadd = Vec::with_capacity(wsize * wsize);
    let mut wmul = Vec::with_capacity(wsize * wsize);
    for a in &elems {
        for b in &elems {
            wadd.push(witt_index(&a.add(b)?)?);
            wmul.push(witt_index(&a.mul(b)?)?);
        }
    }
    let mut radd = Vec::with_capacity(q * q);
    let mut rmul = Vec::with_capacity(q * q);
    for a in 0..q {
        let x = cfg.from_index(a as u64)?;
        for b in 0..q {
            let y = cfg.from_index(b as u64)?;
            radd.push(cfg.index_of(&cfg.add_fq(&x, &y)) as usize);
            rmul.push(cfg.index_of(&cfg.mul_fq(&x, &y)) as usize);
        }
    }
    let mut teich = Vec::with_capacity(q);
    for a in 0..q {
        let x = const_perf(cfg, &cfg.from_index(a as u64)?);
        teich.push(witt_index(&WittVec::teichmuller(&x, n)?)?);
    }

    let mut funcs = BTreeMap::new();
    funcs.insert(("+".to_string(), SORT_W.to_string()), FuncTable { arity: 2, table: wadd });
    funcs.insert(("*".to_string(), SORT_W.to_string()), FuncTable { arity: 2, table: wmul });
    funcs.insert(("+".to_string(), SORT_R.to_string()), FuncTable { arity: 2, table: radd });
    funcs.insert(("*".to_string(), SORT_R.to_string()), FuncTable { arity: 2, table: rmul });
    funcs.insert(("teich".to_string(), SORT_R.to_string()), FuncTable { arity: 1, table: teich });

    let pn = (cfg.p() as u128).pow(n as u32) as u64;
    let mut wnum = Vec::with_capacity(pn as usize);
    for k in 0..pn {
        wnum.push(witt_index(&WittVec::from_integer(k as i128, cfg, n)?)?);
    }
    let rnum: Vec<usize> = (0..cfg.p()).map(|k| cfg.index_of(&cfg.from_u64(k)) as usize).collect();

    let wnames: Vec<String> = elems.iter().map(|w| w.render()).collect();
    let rnames: Vec<String> =
        (0..q).map(|i| cfg.format_fq(&cfg.from_index(i as u64).unwrap())).collect();

    Ok(FiniteStructure {
        sig,
        label: format!("(W_{}(F_{}), F_{})", n, cfg.q(), cfg.q()),
        cfg: cfg.clone(),
        sizes: BTreeMap::from([(SORT_W.to_string(), wsize), (SORT_R.to_string(), q)]),
        funcs,
        numerals: BTreeMap::from([(SORT_W.to_string(), wnum), (SORT_R.to_string(), rnum)]),
        names: BTreeMap::from([(SORT_W.to_string(), wnames), (SORT_R.to_string(), rnames)]),
    })
}

/// Number of atom instances a full evaluation touches: atoms cost 1,
/// connectives add their children, quantifiers multiply by the domain size.
pub fn eval_cost(f: &Formula, sizes: &BTreeMap<String, usize>) -> u128 {
    match f {
        Formula::True | Formula::False => 0,
        Formula::Eq(..) | Formula::Less(..) | Formula::InO(..) | Formula::InM(..) => 1,
        Formula::Not(inner) => eval_cost(inner, sizes),
        Formula::And(parts) | Formula::Or(parts) => {
            parts.iter().map(|p| eval_cost(p, sizes)).fold(0u128, u128::saturating_add)
        }
        Formula::Implies(a, b) => eval_cost(a, sizes).saturating_add(eval_cost(b, sizes)),
        Formula::Forall(_, s, body) | Formula::Exists(_, s, body) => {
            let size = sizes.get(s).copied().unwrap_or(1) as u128;
            size.saturating_mul(eval_cost(body, sizes))
        }
    }
}

type Env = BTreeMap<String, (String, usize)>;

fn sort_env(env: &Env) -> BTreeMap<String, String> {
    env.iter().map(|(k, (s, _))| (k.clone(), s.clone())).collect()
}

fn eval_term_sorted(st: &FiniteStructure, t: &Term, env: &Env, sort: &str) -> Result<(String, usize)> {
    match t {
        Term::Var(v) => env
            .get(v)
            .cloned()
            .ok_or_else(|| Error::domain(format!("unbound variable {v}"))),
        Term::Int(k) => {
            let idx = st
                .numeral_index(sort, *k)
                .ok_or_else(|| Error::unsupported(format!("no numerals on sort {sort}")))?;
            Ok((sort.to_string(), idx))
        }
        Term::Const(c) => Err(Error::unsupported(format!(
            "constant {c} has no interpretation in {}",
            st.label
        ))),
        Term::Param(_) => {
            Err(Error::unsupported("parameter constants are not finite-structure terms"))
        }
        Term::Elem { sort: s, index } => {
            if s != sort {
                return Err(Error::sort(format!("element of sort {s} used at sort {sort}")));
            }
            if *index >= st.sizes[s] {
                return Err(Error::invalid("element index out of range"));
            }
            Ok((s.clone(), *index))
        }
        Term::App { func, args } => {
            if func == "teich" {
                let (_, a) = eval_term_sorted(st, &args[0], env, SORT_R)?;
                let idx = st.apply("teich", SORT_R, &[a])?;
                return Ok((SORT_W.to_string(), idx));
            }
            // + and * are n-ary in the tree but binary in the tables.
            let mut acc: Option<usize> = None;
            for arg in args {
                let (_, v) = eval_term_sorted(st, arg, env, sort)?;
                acc = Some(match acc {
                    None => v,
                    Some(prev) => st.apply(func, sort, &[prev, v])?,
                });
            }
            Ok((sort.to_string(), acc.expect("apps have arguments")))
        }
    }
}

fn eq_sort(st: &FiniteStructure, a: &Term, b: &Term, env: &Env) -> String {
    let sorts = sort_env(env);
    infer_sort(a, &st.sig, &sorts)
        .or_else(|| infer_sort(b, &st.sig, &sorts))
        .unwrap_or_else(|| st.sig.default_sort().to_string())
}

// ---------------------------------------------------------------------------
// Compiled evaluation: one pass over the sentence resolves sorts, numerals,
// and function tables, so the assignment walk touches only integer slots.
// The translated oracles re-evaluate multi-thousand-node terms over every
// assignment of a q^n-element domain; name lookups there are ruinous.

enum CTerm {
    Slot(usize),
    Lit(usize),
    Unary { table: usize, arg: Box<CTerm> },
    /// Left fold of a binary table over two or more arguments.
    Fold { table: usize, size: usize, args: Vec<CTerm> },
}

enum CForm {
    True,
    False,
    Eq(CTerm, CTerm),
    Not(Box<CForm>),
    And(Vec<CForm>),
    Or(Vec<CForm>),
    Implies(Box<CForm>, Box<CForm>),
    Quant { universal: bool, slot: usize, size: usize, body: Box<CForm> },
}

struct Compiler<'a> {
    st: &'a FiniteStructure,
    tables: Vec<&'a [usize]>,
    table_ids: BTreeMap<(String, String), usize>,
    /// Binder stack; innermost last. Every binder gets a fresh slot.
    scope: Vec<(String, String, usize)>,
    nslots: usize,
}

impl<'a> Compiler<'a> {
    fn new(st: &'a FiniteStructure) -> Compiler<'a> {
        Compiler { st, tables: Vec::new(), table_ids: BTreeMap::new(), scope: Vec::new(), nslots: 0 }
    }

    fn table(&mut self, func: &str, sort: &str) -> Result<usize> {
        let key = (func.to_string(), sort.to_string());
        if let Some(&id) = self.table_ids.get(&key) {
            return Ok(id);
        }
        let ft = self.st.func_table(func, sort)?;
        let id = self.tables.len();
        self.tables.push(&ft.table);
        self.table_ids.insert(key, id);
        Ok(id)
    }

    fn term(&mut self, t: &Term, sort: &str) -> Result<CTerm> {
        match t {
            Term::Var(v) => self
                .scope
                .iter()
                .rev()
                .find(|(name, _, _)| name == v)
                .map(|(_, _, slot)| CTerm::Slot(*slot))
                .ok_or_else(|| Error::domain(format!("unbound variable {v}"))),
            Term::Int(k) => {
                let idx = self
                    .st
                    .numeral_index(sort, *k)
                    .ok_or_else(|| Error::unsupported(format!("no numerals on sort {sort}")))?;
                Ok(CTerm::Lit(idx))
            }
            Term::Const(c) => Err(Error::unsupported(format!(
                "constant {c} has no interpretation in {}",
                self.st.label
            ))),
            Term::Param(_) => {
                Err(Error::unsupported("parameter constants are not finite-structure terms"))
            }
            Term::Elem { sort: s, index } => {
                if s != sort {
                    return Err(Error::sort(format!("element of sort {s} used at sort {sort}")));
                }
                if *index >= self.st.sizes[s] {
                    return Err(Error::invalid("element index out of range"));
                }
                Ok(CTerm::Lit(*index))
            }
            Term::App { func, args } => {
                if func == "teich" {
                    let arg = self.term(&args[0], SORT_R)?;
                    let table = self.table("teich", SORT_R)?;
                    return Ok(CTerm::Unary { table, arg: Box::new(arg) });
                }
                let table = self.table(func, sort)?;
                let size = self.st.sizes[sort];
                let args =
                    args.iter().map(|a| self.term(a, sort)).collect::<Result<Vec<_>>>()?;
                Ok(CTerm::Fold { table, size, args })
            }
        }
    }

    fn formula(&mut self, f: &Formula) -> Result<CForm> {
        match f {
            Formula::True => Ok(CForm::True),
            Formula::False => Ok(CForm::False),
            Formula::Eq(a, b) => {
                let sorts: BTreeMap<String, String> =
                    self.scope.iter().map(|(v, s, _)| (v.clone(), s.clone())).collect();
                let s = infer_sort(a, &self.st.sig, &sorts)
                    .or_else(|| infer_sort(b, &self.st.sig, &sorts))
                    .unwrap_or_else(|| self.st.sig.default_sort().to_string());
                Ok(CForm::Eq(self.term(a, &s)?, self.term(b, &s)?))
            }
            Formula::Less(..) | Formula::InO(..) | Formula::InM(..) => Err(Error::unsupported(
                format!("relation atoms have no interpretation in {}", self.st.label),
            )),
            Formula::Not(inner) => Ok(CForm::Not(Box::new(self.formula(inner)?))),
            Formula::And(parts) => {
                Ok(CForm::And(parts.iter().map(|p| self.formula(p)).collect::<Result<_>>()?))
            }
            Formula::Or(parts) => {
                Ok(CForm::Or(parts.iter().map(|p| self.formula(p)).collect::<Result<_>>()?))
            }
            Formula::Implies(a, b) => {
                Ok(CForm::Implies(Box::new(self.formula(a)?), Box::new(self.formula(b)?)))
            }
            Formula::Forall(v, s, body) | Formula::Exists(v, s, body) => {
                let size = *self
                    .st
                    .sizes
                    .get(s)
                    .ok_or_else(|| Error::sort(format!("no sort {s} in {}", self.st.label)))?;
                let slot = self.nslots;
                self.nslots += 1;
                self.scope.push((v.clone(), s.clone(), slot));
                let body = self.formula(body)?;
                self.scope.pop();
                Ok(CForm::Quant {
                    universal: matches!(f, Formula::Forall(..)),
                    slot,
                    size,
                    body: Box::new(body),
                })
            }
        }
    }
}

fn cterm(t: &CTerm, env: &[usize], tables: &[&[usize]]) -> usize {
    match t {
        CTerm::Slot(s) => env[*s],
        CTerm::Lit(v) => *v,
        CTerm::Unary { table, arg } => tables[*table][cterm(arg, env, tables)],
        CTerm::Fold { table, size, args } => {
            let mut it = args.iter();
            let mut acc = cterm(it.next().expect("apps have arguments"), env, tables);
            for a in it {
                acc = tables[*table][acc * size + cterm(a, env, tables)];
            }
            acc
        }
    }
}

fn ceval(f: &CForm, env: &mut Vec<usize>, tables: &[&[usize]]) -> bool {
    match f {
        CForm::True => true,
        CForm::False => false,
        CForm::Eq(a, b) => cterm(a, env, tables) == cterm(b, env, tables),
        CForm::Not(inner) => !ceval(inner, env, tables),
        CForm::And(parts) => parts.iter().all(|p| ceval(p, env, tables)),
        CForm::Or(parts) => parts.iter().any(|p| ceval(p, env, tables)),
        CForm::Implies(a, b) => !ceval(a, env, tables) || ceval(b, env, tables),
        CForm::Quant { universal, slot, size, body } => {
            for i in 0..*size {
                env[*slot] = i;
                if ceval(body, env, tables) != *universal {
                    return !*universal;
                }
            }
            *universal
        }
    }
}

fn preflight(st: &FiniteStructure, f: &Formula, budget: u64) -> Result<()> {
    if !free_vars(f).is_empty() {
        return Err(Error::domain(format!(
            "not a sentence: free variables {:?}",
            free_vars(f).into_iter().collect::<Vec<_>>()
        )));
    }
    check_sorts(f, &st.sig)?;
    let cost = eval_cost(f, &st.sizes);
    if cost > budget as u128 {
        return Err(Error::budget(format!(
            "evaluation needs {cost} atom instances, budget is {budget}"
        )));
    }
    Ok(())
}

/// Truth of a sentence in the structure, by environment walk with
/// short-circuiting connectives and quantifiers.
pub fn eval(st: &FiniteStructure, f: &Formula, budget: u64) -> Result<bool> {
    preflight(st, f, budget)?;
    let mut c = Compiler::new(st);
    let compiled = c.formula(f)?;
    let mut env = vec![0usize; c.nslots];
    Ok(ceval(&compiled, &mut env, &c.tables))
}

fn expand(st: &FiniteStructure, f: &Formula) -> Result<Formula> {
    Ok(match f {
        Formula::True
        | Formula::False
        | Formula::Eq(..)
        | Formula::Less(..)
        | Formula::InO(..)
        | Formula::InM(..) => f.clone(),
        Formula::Not(inner) => Formula::Not(Box::new(expand(st, inner)?)),
        Formula::And(parts) => {
            Formula::And(parts.iter().map(|p| expand(st, p)).collect::<Result<_>>()?)
        }
        Formula::Or(parts) => {
            Formula::Or(parts.iter().map(|p| expand(st, p)).collect::<Result<_>>()?)
        }
        Formula::Implies(a, b) => {
            Formula::Implies(Box::new(expand(st, a)?), Box::new(expand(st, b)?))
        }
        Formula::Forall(v, s, body) | Formula::Exists(v, s, body) => {
            let size = *st
                .sizes
                .get(s)
                .ok_or_else(|| Error::sort(format!("no sort {s} in {}", st.label)))?;
            let mut parts = Vec::with_capacity(size);
            for i in 0..size {
                let map = BTreeMap::from([(
                    v.clone(),
                    Term::Elem { sort: s.clone(), index: i },
                )]);
                parts.push(expand(st, &substitute(body, &map))?);
            }
            if matches!(f, Formula::Forall(..)) {
                Formula::And(parts)
            } else {
                Formula::Or(parts)
            }
        }
    })
}

fn eval_closed_qf(st: &FiniteStructure, f: &Formula) -> Result<bool> {
    match f {
        Formula::True => Ok(true),
        Formula::False => Ok(false),
        Formula::Eq(a, b) => {
            let env = Env::new();
            let s = eq_sort(st, a, b, &env);
            let (_, x) = eval_term_sorted(st, a, &env, &s)?;
            let (_, y) = eval_term_sorted(st, b, &env, &s)?;
            Ok(x == y)
        }
        Formula::Less(..) | Formula::InO(..) | Formula::InM(..) => Err(Error::unsupported(
            format!("relation atoms have no interpretation in {}", st.label),
        )),
        Formula::Not(inner) => Ok(!eval_closed_qf(st, inner)?),
        // No short-circuit: every child is evaluated before combining.
        Formula::And(parts) => {
            let vals: Vec<bool> =
                parts.iter().map(|p| eval_closed_qf(st, p)).collect::<Result<_>>()?;
            Ok(vals.into_iter().all(|b| b))
        }
        Formula::Or(parts) => {
            let vals: Vec<bool> =
                parts.iter().map(|p| eval_closed_qf(st, p)).collect::<Result<_>>()?;
            Ok(vals.into_iter().any(|b| b))
        }
        Formula::Implies(a, b) => {
            let x = eval_closed_qf(st, a)?;
            let y = eval_closed_qf(st, b)?;
            Ok(!x || y)
        }
        Formula::Forall(..) | Formula::Exists(..) => {
            Err(Error::invalid("expansion left a quantifier behind"))
        }
    }
}

/// Second oracle: expand all quantifiers into explicit conjunctions and
/// disjunctions over the domain, then evaluate the closed result without
/// short-circuiting. Shares only the atom evaluator with [`eval`].
pub fn eval_naive(st: &FiniteStructure, f: &Formula, budget: u64) -> Result<bool> {
    preflight(st, f, budget)?;
    let expanded = expand(st, f)?;
    eval_closed_qf(st, &expanded)
}

/// A point of one of the exact carriers that quantifier-free formulas are
/// checked against.
#[derive(Clone, Debug)]
pub enum Value {
    /// An element of F_q[t^{1/p^infinity}], inside the tilt's valuation ring.
    Ring(PerfElem),
    /// An element of an untilt residue ring in digit normal form.
    Res(Digits),
    /// An element of the fraction field of the perfect subring.
    Field(FracElem),
}

#[derive(Clone, Debug, Default)]
pub struct EvalOpts {
    /// When set, ring equalities and membership tests are read modulo
    /// t^modulus; used to verify approximate solver witnesses.
    pub modulus: Option<Exponent>,
}

fn ring_term(t: &Term, asg: &BTreeMap<String, Value>, cfg: &Arc<PrimeConfig>) -> Result<PerfElem> {
    match t {
        Term::Var(v) => match asg.get(v) {
            Some(Value::Ring(x)) => Ok(x.clone()),
            Some(_) => Err(Error::domain(format!("variable {v} is bound outside the ring carrier"))),
            None => Err(Error::domain(format!("unbound variable {v}"))),
        },
        Term::Int(k) => Ok(const_perf(cfg, &cfg.from_u64(*k % cfg.p()))),
        Term::Param(e) => Ok(e.clone()),
        Term::Const(c) => Err(Error::unsupported(format!("constant {c} needs a structure"))),
        Term::Elem { .. } => Err(Error::unsupported("finite-structure elements are not ring terms")),
        Term::App { func, args } => {
            let vals: Vec<PerfElem> =
                args.iter().map(|a| ring_term(a, asg, cfg)).collect::<Result<_>>()?;
            match func.as_str() {
                "+" => {
                    let mut acc = vals[0].clone();
                    for v in &vals[1..] {
                        acc = acc.add(v)?;
                    }
                    Ok(acc)
                }
                "*" => {
                    let mut acc = vals[0].clone();
                    for v in &vals[1..] {
                        acc = acc.mul(v)?;
                    }
                    Ok(acc)
                }
                _ => Err(Error::unsupported(format!("{func} is not a ring operation"))),
            }
        }
    }
}

fn res_term(t: &Term, asg: &BTreeMap<String, Value>, sample: &Digits) -> Result<Digits> {
    match t {
        Term::Var(v) => match asg.get(v) {
            Some(Value::Res(x)) => Ok(x.clone()),
            Some(_) => Err(Error::domain(format!("variable {v} is bound outside the residue carrier"))),
            None => Err(Error::domain(format!("unbound variable {v}"))),
        },
        Term::Int(k) => Digits::from_integer(*k as i128, sample.untilt(), sample.level()),
        Term::Param(_) => Err(Error::unsupported("parameter constants are not residue terms")),
        Term::Const(c) => Err(Error::unsupported(format!("constant {c} needs a structure"))),
        Term::Elem { .. } => Err(Error::unsupported("finite-structure elements are not residue terms")),
        Term::App { func, args } => {
            let vals: Vec<Digits> =
                args.iter().map(|a| res_term(a, asg, sample)).collect::<Result<_>>()?;
            let mut acc = vals[0].clone();
            for v in &vals[1..] {
                acc = match func.as_str() {
                    "+" => untilt::digit_add(&acc, v)?,
                    "*" => untilt::digit_mul(&acc, v)?,
                    _ => return Err(Error::unsupported(format!("{func} is not a ring operation"))),
                };
            }
            Ok(acc)
        }
    }
}

fn field_term(t: &Term, asg: &BTreeMap<String, Value>, cfg: &Arc<PrimeConfig>) -> Result<FracElem> {
    match t {
        Term::Var(v) => match asg.get(v) {
            Some(Value::Field(x)) => Ok(x.clone()),
            Some(Value::Ring(x)) => Ok(FracElem::from_perf(x.clone())),
            Some(_) => Err(Error::domain(format!("variable {v} is bound outside the field carrier"))),
            None => Err(Error::domain(format!("unbound variable {v}"))),
        },
        Term::Int(k) => Ok(FracElem::from_perf(const_perf(cfg, &cfg.from_u64(*k % cfg.p())))),
        Term::Param(e) => Ok(FracElem::from_perf(e.clone())),
        Term::Const(c) => Err(Error::unsupported(format!("constant {c} needs a structure"))),
        Term::Elem { .. } => Err(Error::unsupported("finite-structure elements are not field terms")),
        Term::App { func, args } => {
            let vals: Vec<FracElem> =
                args.iter().map(|a| field_term(a, asg, cfg)).collect::<Result<_>>()?;
            let mut acc = vals[0].clone();
            for v in &vals[1..] {
                acc = match func.as_str() {
                    "+" => acc.add(v)?,
                    "*" => acc.mul(v)?,
                    _ => return Err(Error::unsupported(format!("{func} is not a ring operation"))),
                };
            }
            Ok(acc)
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Carrier {
    Ring,
    Res,
    Field,
}

fn carrier_of(asg: &BTreeMap<String, Value>) -> Result<(Carrier, Arc<PrimeConfig>)> {
    let mut found: Option<(Carrier, Arc<PrimeConfig>)> = None;
    for v in asg.values() {
        let entry = match v {
            Value::Ring(x) => (Carrier::Ring, x.cfg().clone()),
            Value::Res(x) => (Carrier::Res, x.untilt().cfg().clone()),
            Value::Field(x) => (Carrier::Field, x.cfg().clone()),
        };
        match &found {
            None => found = Some(entry),
            Some((c, cfg)) => {
                // Ring values coerce into the field carrier.
                let joined = match (*c, entry.0) {
                    (a, b) if a == b => a,
                    (Carrier::Ring, Carrier::Field) | (Carrier::Field, Carrier::Ring) => {
                        Carrier::Field
                    }
                    _ => return Err(Error::domain("assignment mixes carriers")),
                };
                if *cfg != entry.1 {
                    return Err(Error::domain("assignment mixes prime configurations"));
                }
                found = Some((joined, cfg.clone()));
            }
        }
    }
    found.ok_or_else(|| Error::domain("empty assignment: no carrier to evaluate in"))
}

fn truncated(x: &PerfElem, opts: &EvalOpts) -> PerfElem {
    match &opts.modulus {
        Some(g) => x.truncate(g),
        None => x.clone(),
    }
}

fn res_sample(asg: &BTreeMap<String, Value>) -> Result<Digits> {
    for v in asg.values() {
        if let Value::Res(x) = v {
            return Ok(x.clone());
        }
    }
    Err(Error::domain("no residue value in assignment"))
}

fn eval_atom(
    f: &Formula,
    asg: &BTreeMap<String, Value>,
    opts: &EvalOpts,
    carrier: Carrier,
    cfg: &Arc<PrimeConfig>,
) -> Result<bool> {
    match (f, carrier) {
        (Formula::Eq(a, b), Carrier::Ring) => {
            let x = ring_term(a, asg, cfg)?;
            let y = ring_term(b, asg, cfg)?;
            Ok(truncated(&x.sub(&y)?, opts).is_zero())
        }
        (Formula::InO(_), Carrier::Ring) => Ok(true),
        (Formula::InM(t), Carrier::Ring) => {
            let x = truncated(&ring_term(t, asg, cfg)?, opts);
            Ok(match x.valuation() {
                None => true,
                Some(v) => v > Exponent::zero(),
            })
        }
        (Formula::Eq(a, b), Carrier::Res) => {
            let sample = res_sample(asg)?;
            let x = res_term(a, asg, &sample)?;
            let y = res_term(b, asg, &sample)?;
            Ok(untilt::digit_sub(&x, &y)?.is_zero())
        }
        (Formula::InO(_), Carrier::Res) => Ok(true),
        (Formula::InM(t), Carrier::Res) => {
            let sample = res_sample(asg)?;
            Ok(untilt::in_maximal_ideal(&res_term(t, asg, &sample)?))
        }
        (Formula::Eq(a, b), Carrier::Field) => {
            let x = field_term(a, asg, cfg)?;
            let y = field_term(b, asg, cfg)?;
            Ok(x == y)
        }
        (Formula::InO(t), Carrier::Field) => Ok(field_term(t, asg, cfg)?.in_o()),
        (Formula::InM(t), Carrier::Field) => Ok(field_term(t, asg, cfg)?.in_m()),
        (Formula::Less(..), _) => {
            Err(Error::unsupported("order atoms are not evaluable over exact carriers"))
        }
        _ => unreachable!("eval_atom called on a non-atom"),
    }
}

fn eval_qf_rec(
    f: &Formula,
    asg: &BTreeMap<String, Value>,
    opts: &EvalOpts,
    carrier: Carrier,
    cfg: &Arc<PrimeConfig>,
) -> Result<bool> {
    match f {
        Formula::True => Ok(true),
        Formula::False => Ok(false),
        Formula::Eq(..) | Formula::Less(..) | Formula::InO(..) | Formula::InM(..) => {
            eval_atom(f, asg, opts, carrier, cfg)
        }
        Formula::Not(inner) => Ok(!eval_qf_rec(inner, asg, opts, carrier, cfg)?),
        Formula::And(parts) => {
            for p in parts {
                if !eval_qf_rec(p, asg, opts, carrier, cfg)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Formula::Or(parts) => {
            for p in parts {
                if eval_qf_rec(p, asg, opts, carrier, cfg)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Formula::Implies(a, b) => {
            if !eval_qf_rec(a, asg, opts, carrier, cfg)? {
                return Ok(true);
            }
            eval_qf_rec(b, asg, opts, carrier, cfg)
        }
        Formula::Forall(..) | Formula::Exists(..) => {
            Err(Error::domain("eval_qf expects a quantifier-free formula"))
        }
    }
}

/// Connective-only formulas have a truth value without any carrier.
fn eval_no_carrier(f: &Formula) -> Option<bool> {
    match f {
        Formula::True => Some(true),
        Formula::False => Some(false),
        Formula::Not(inner) => eval_no_carrier(inner).map(|b| !b),
        Formula::And(parts) => parts
            .iter()
            .try_fold(true, |acc, p| Some(acc & eval_no_carrier(p)?)),
        Formula::Or(parts) => parts
            .iter()
            .try_fold(false, |acc, p| Some(acc | eval_no_carrier(p)?)),
        Formula::Implies(a, b) => Some(!eval_no_carrier(a)? | eval_no_carrier(b)?),
        _ => None,
    }
}

/// Truth of a quantifier-free formula under an explicit assignment into one
/// of the exact carriers.
pub fn eval_qf(f: &Formula, asg: &BTreeMap<String, Value>, opts: &EvalOpts) -> Result<bool> {
    if asg.is_empty() {
        if let Some(v) = eval_no_carrier(f) {
            return Ok(v);
        }
    }
    let (carrier, cfg) = carrier_of(asg)?;
    eval_qf_rec(f, asg, opts, carrier, &cfg)
}

fn eval_eplus_rec(
    f: &Formula,
    asg: &BTreeMap<String, Value>,
    opts: &EvalOpts,
    carrier: Carrier,
    cfg: &Arc<PrimeConfig>,
) -> Result<bool> {
    match f {
        Formula::Exists(v, _, body) => {
            if !asg.contains_key(v) {
                return Err(Error::domain(format!("no witness value for {v}")));
            }
            eval_eplus_rec(body, asg, opts, carrier, cfg)
        }
        Formula::Forall(..) => {
            Err(Error::unsupported("universal quantifiers cannot be witness-checked"))
        }
        Formula::Not(inner) => Ok(!eval_eplus_rec(inner, asg, opts, carrier, cfg)?),
        Formula::And(parts) => {
            for p in parts {
                if !eval_eplus_rec(p, asg, opts, carrier, cfg)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Formula::Or(parts) => {
            for p in parts {
                if eval_eplus_rec(p, asg, opts, carrier, cfg)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Formula::Implies(a, b) => {
            if !eval_eplus_rec(a, asg, opts, carrier, cfg)? {
                return Ok(true);
            }
            eval_eplus_rec(b, asg, opts, carrier, cfg)
        }
        _ => eval_qf_rec(f, asg, opts, carrier, cfg),
    }
}

/// Truth of an existential formula with every quantifier discharged by a
/// provided witness value: each `E v` looks up `v` in the assignment and
/// descends. The result certifies the existential when true.
pub fn eval_eplus_with(
    f: &Formula,
    asg: &BTreeMap<String, Value>,
    opts: &EvalOpts,
) -> Result<bool> {
    let (carrier, cfg) = carrier_of(asg)?;
    eval_eplus_rec(f, asg, opts, carrier, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::formula::parse_formula;
    use crate::untilt::{sharp, UntiltKind, UntiltSpec};

    fn cfg(p: u64, d: usize) -> Arc<PrimeConfig> {
        PrimeConfig::new(p, d, None).unwrap()
    }

    fn s(st: &FiniteStructure, text: &str) -> Formula {
        parse_formula(st.sig(), None, text).unwrap()
    }

    #[test]
    fn field_structures_decide_basic_sentences() {
        let f2 = build_fq_structure(&cfg(2, 1)).unwrap();
        let f4 = build_fq_structure(&cfg(2, 2)).unwrap();
        assert!(eval(&f2, &s(&f2, "A x (x*x = x)"), 1000).unwrap());
        assert!(!eval(&f4, &s(&f4, "A x (x*x = x)"), 1000).unwrap());
        assert!(eval(&f4, &s(&f4, "E x (x*x + x + 1 = 0)"), 1000).unwrap());
        assert!(!eval(&f2, &s(&f2, "E x (x*x + x + 1 = 0)"), 1000).unwrap());
    }

    #[test]
    fn witt_structure_squares() {
        // W_2(F_2) = Z/4: the squares are 0 and 1, so 2 is not one.
        let st = build_wn_structure(&cfg(2, 1), 2).unwrap();
        assert!(!eval(&st, &s(&st, "E x (x*x = 2)"), 1000).unwrap());
        assert!(eval(&st, &s(&st, "E x (x*x = 1)"), 1000).unwrap());
    }

    #[test]
    fn witt_numeral_table_is_a_ring_isomorphism_onto_zmod() {
        // W_3(F_3) has prime residue field, so numerals exhaust it: the
        // structure must be Z/27 in disguise.
        let c = cfg(3, 1);
        let st = build_wn_structure(&c, 3).unwrap();
        let pn = 27u64;
        let table: Vec<usize> =
            (0..pn).map(|k| st.numeral_index(SORT_W, k).unwrap()).collect();
        let mut seen = table.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 27, "numerals must be pairwise distinct");
        for a in 0..pn {
            for b in 0..pn {
                let lhs = st.apply("+", SORT_W, &[table[a as usize], table[b as usize]]).unwrap();
                assert_eq!(lhs, table[((a + b) % pn) as usize]);
                let lhs = st.apply("*", SORT_W, &[table[a as usize], table[b as usize]]).unwrap();
                assert_eq!(lhs, table[((a * b) % pn) as usize]);
            }
        }
    }

    #[test]
    fn teichmuller_table_is_multiplicative() {
        let st = build_wn_structure(&cfg(2, 2), 2).unwrap();
        let q = 4usize;
        for a in 0..q {
            for b in 0..q {
                let ab = st.apply("*", SORT_R, &[a, b]).unwrap();
                let lhs = st.apply("teich", SORT_R, &[ab]).unwrap();
                let ta = st.apply("teich", SORT_R, &[a]).unwrap();
                let tb = st.apply("teich", SORT_R, &[b]).unwrap();
                assert_eq!(lhs, st.apply("*", SORT_W, &[ta, tb]).unwrap());
            }
        }
    }

    const ORACLE_CORPUS_RING: &[&str] = &[
        "A x (x + x = x + x)",
        "A x (x*x = x)",
        "E x (x + 1 = 0)",
        "A x E y (x + y = 0)",
        "E x A y (x*y = y)",
        "A x A y (x + y = y + x)",
        "A x A y (x*y = y*x)",
        "A x (x*0 = 0)",
        "A x (x*1 = x)",
        "E x (!(x = 0))",
        "A x (!(x = 0) -> E y (x*y = 1))",
        "E x (x*x + x + 1 = 0)",
        "A x E y (y*y = x)",
        "E x (x*x = x & !(x = 0))",
        "A x A y A z (x*(y + z) = x*y + x*z)",
        "A x (x + 1 = x) -> false",
        "E x E y (!(x = y))",
        "A x A y (x = y | x + y = 1)",
        "true & A x (x = x)",
        "E x (x = 1 & x + 1 = 0)",
    ];

    const ORACLE_CORPUS_TWO_SORTED: &[&str] = &[
        "A x:W (x + 0 = x)",
        "A x:W (x*0 = 0)",
        "E x:W (x + x = 0)",
        "E x:W (x*x = 2)",
        "A x:W A y:W (x + y = y + x)",
        "A x:R ([x]*[x] = [x*x])",
        "E x:W A y:W (x*y = y)",
        "A x:W E y:W (x + y = 0)",
        "E x:W (!(x = 0) & x*x = 0)",
        "A x:W (x*2 = x + x)",
        "E x:W (2*x = 1)",
        "A x:R ([x] = 0 -> x = 0)",
        "A x:R E y:W (y = [x] + 1)",
        "E x:R (!([x] = 0))",
        "A x:W A y:W ((x + y)*(x + y) = x*x + x*y + x*y + y*y)",
    ];

    #[test]
    fn two_oracles_agree_on_the_corpus() {
        let f2 = build_fq_structure(&cfg(2, 1)).unwrap();
        let w22 = build_wn_structure(&cfg(2, 1), 2).unwrap();
        let budget = 100_000u64;
        let run = |st: &FiniteStructure, text: &str| {
            let f = s(st, text);
            let a = eval(st, &f, budget).unwrap();
            let b = eval_naive(st, &f, budget).unwrap();
            assert_eq!(a, b, "oracle disagreement on {text} in {}", st.label());
            // Double negation changes the evaluation path but not the value.
            let nn = Formula::Not(Box::new(Formula::Not(Box::new(f))));
            assert_eq!(a, eval(st, &nn, budget).unwrap(), "!!-mismatch on {text}");
            assert_eq!(a, eval_naive(st, &nn, budget).unwrap());
            a
        };
        for text in ORACLE_CORPUS_RING {
            run(&f2, text);
        }
        for text in ORACLE_CORPUS_TWO_SORTED {
            run(&w22, text);
        }
    }

    #[test]
    fn prenex_pairs_agree() {
        // Hand-flattened prenex forms of nested sentences.
        let pairs = [
            ("A x (x = 0 | E y (x*y = 1))", "A x E y (x = 0 | x*y = 1)"),
            ("E x (x + 1 = 0) & A z (z*0 = 0)", "E x A z (x + 1 = 0 & z*0 = 0)"),
            ("A x (E y (y + y = x) -> x = 0)", "A x A y (y + y = x -> x = 0)"),
            ("E x A y (x*y = y) | E x A y (x*y = 0)", "E x E u A y A v (x*y = y | u*v = 0)"),
            ("A x (x = x) -> E y (y = 0)", "E y (A x (x = x) -> y = 0)"),
        ];
        let w22 = build_wn_structure(&cfg(2, 1), 2).unwrap();
        for (a, b) in pairs {
            let fa = s(&w22, a);
            let fb = s(&w22, b);
            assert_eq!(
                eval(&w22, &fa, 100_000).unwrap(),
                eval(&w22, &fb, 100_000).unwrap(),
                "prenex mismatch: {a} vs {b}"
            );
        }
    }

    #[test]
    fn budget_preflight_blocks_large_sentences() {
        let st = build_wn_structure(&cfg(2, 1), 2).unwrap();
        let f = s(&st, "A x:W A y:W (x + y = y + x)");
        assert_eq!(eval_cost(&f, &st.sizes), 16);
        assert!(matches!(eval(&st, &f, 10), Err(Error::BudgetExceeded(_))));
        assert!(eval(&st, &f, 16).unwrap());
    }

    #[test]
    fn sentences_must_be_closed() {
        let st = build_fq_structure(&cfg(2, 1)).unwrap();
        let f = s(&st, "x + 1 = 0");
        assert!(eval(&st, &f, 100).is_err());
    }

    #[test]
    fn qf_ring_atoms() {
        let c = cfg(2, 1);
        let val = Signature::valued_ring();
        let t = PerfElem::var_t(&c);
        let half = PerfElem::monomial(&c, c.one(), Exponent::new(1, 2, 1).unwrap());
        let opts = EvalOpts::default();

        let asg = BTreeMap::from([("x".to_string(), Value::Ring(t.clone()))]);
        let f = parse_formula(&val, None, "x in O").unwrap();
        assert!(eval_qf(&f, &asg, &opts).unwrap());

        let asg = BTreeMap::from([("x".to_string(), Value::Ring(half))]);
        let par = Signature::valued_ring().with_params();
        let f = parse_formula(&par, Some(&c), "x*x = c{t}").unwrap();
        assert!(eval_qf(&f, &asg, &opts).unwrap());

        let lcr = Signature::local_ring();
        let one_plus_t = PerfElem::one(&c).add(&t).unwrap();
        let asg = BTreeMap::from([("x".to_string(), Value::Ring(one_plus_t))]);
        let f = parse_formula(&lcr, None, "x in m").unwrap();
        assert!(!eval_qf(&f, &asg, &opts).unwrap());
        let asg = BTreeMap::from([("x".to_string(), Value::Ring(t.clone()))]);
        assert!(eval_qf(&f, &asg, &opts).unwrap());
    }

    #[test]
    fn qf_modulus_truncates_equalities() {
        let c = cfg(2, 1);
        let par = Signature::ring().with_params();
        let t = PerfElem::var_t(&c);
        let x = PerfElem::one(&c).add(&t).unwrap();
        let asg = BTreeMap::from([("x".to_string(), Value::Ring(x))]);
        // (1+t)^2 = 1 + t^2 over F_2: false exactly, true mod t^2.
        let f = parse_formula(&par, Some(&c), "x*x = 1").unwrap();
        assert!(!eval_qf(&f, &asg, &EvalOpts::default()).unwrap());
        let opts = EvalOpts { modulus: Some(Exponent::integer(2)) };
        assert!(eval_qf(&f, &asg, &opts).unwrap());
    }

    #[test]
    fn qf_residue_atoms() {
        let c = cfg(2, 1);
        let u = UntiltSpec::builtin(UntiltKind::PPowerRoots, &c).unwrap();
        let lcr = Signature::local_ring();
        let opts = EvalOpts::default();
        // 3*3 = 9 = 1 in Z/4 digits.
        let three = Digits::from_integer(3, &u, 2).unwrap();
        let asg = BTreeMap::from([("x".to_string(), Value::Res(three))]);
        let f = parse_formula(&lcr, None, "x*x = 1").unwrap();
        assert!(eval_qf(&f, &asg, &opts).unwrap());
        // sharp(t) generates the maximal ideal; 1 is not in it.
        let st = sharp(&PerfElem::var_t(&c), &u, 2).unwrap();
        let asg = BTreeMap::from([("x".to_string(), Value::Res(st))]);
        let f = parse_formula(&lcr, None, "x in m").unwrap();
        assert!(eval_qf(&f, &asg, &opts).unwrap());
        let one = Digits::one(&u, 2).unwrap();
        let asg = BTreeMap::from([("x".to_string(), Value::Res(one))]);
        assert!(!eval_qf(&f, &asg, &opts).unwrap());
    }

    #[test]
    fn qf_field_atoms_reach_negative_valuation() {
        let c = cfg(3, 1);
        let val = Signature::valued_ring();
        let t = PerfElem::var_t(&c);
        let inv_t = FracElem::new(PerfElem::one(&c), t.clone()).unwrap();
        let opts = EvalOpts::default();
        let asg = BTreeMap::from([
            ("x".to_string(), Value::Field(inv_t)),
            ("y".to_string(), Value::Ring(t)),
        ]);
        let f = parse_formula(&val, None, "x*y = 1").unwrap();
        assert!(eval_qf(&f, &asg, &opts).unwrap());
        let f = parse_formula(&val, None, "x in O").unwrap();
        assert!(!eval_qf(&f, &asg, &opts).unwrap());
        let f = parse_formula(&val, None, "y in O").unwrap();
        assert!(eval_qf(&f, &asg, &opts).unwrap());
    }

    #[test]
    fn witness_guided_evaluation() {
        let c = cfg(2, 1);
        let par = Signature::valued_ring().with_params();
        let half = PerfElem::monomial(&c, c.one(), Exponent::new(1, 2, 1).unwrap());
        let f = parse_formula(&par, Some(&c), "E x (x*x = c{t} & x in O)").unwrap();
        let opts = EvalOpts::default();
        let asg = BTreeMap::from([("x".to_string(), Value::Ring(half))]);
        assert!(eval_eplus_with(&f, &asg, &opts).unwrap());
        let wrong = BTreeMap::from([("x".to_string(), Value::Ring(PerfElem::one(&c)))]);
        assert!(!eval_eplus_with(&f, &wrong, &opts).unwrap());
        let missing = BTreeMap::from([("y".to_string(), Value::Ring(PerfElem::one(&c)))]);
        assert!(eval_eplus_with(&f, &missing, &opts).is_err());
    }
}
