use crate::error::{Error, Result};
use crate::field::is_prime;
use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use std::collections::HashMap;
use std::fmt;
use std::hash::{BuildHasherDefault, Hasher};
use std::sync::{Arc, Mutex};

/// Highest cached polynomial index. The monomial packing reserves five
/// exponent lanes per variable family, and every consumer of higher trunction
/// levels goes through the residue-ring model instead of these polynomials.
pub const MAX_INDEX: usize = 4;

const LANE_BITS: u32 = 12;
const LANE_MASK: u128 = (1 << LANE_BITS) - 1;
const SIDE: usize = MAX_INDEX + 1;
/// Both operands below 2^11 per lane guarantees carry-free packed addition.
const LANE_GUARD: u128 = {
    let mut g = 0u128;
    let mut i = 0;
    while i < 2 * SIDE {
        g |= (1 << (LANE_BITS - 1)) << (LANE_BITS * i as u32);
        i += 1;
    }
    g
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    X(usize),
    Y(usize),
}

impl Var {
    fn slot(self) -> u32 {
        match self {
            Var::X(i) => {
                assert!(i < SIDE);
                i as u32
            }
            Var::Y(i) => {
                assert!(i < SIDE);
                (SIDE + i) as u32
            }
        }
    }
}

fn decode_key(key: u128) -> Vec<(Var, u32)> {
    let mut out = Vec::new();
    for i in 0..SIDE {
        let e = (key >> (LANE_BITS * i as u32)) & LANE_MASK;
        if e != 0 {
            out.push((Var::X(i), e as u32));
        }
    }
    for i in 0..SIDE {
        let e = (key >> (LANE_BITS * (SIDE + i) as u32)) & LANE_MASK;
        if e != 0 {
            out.push((Var::Y(i), e as u32));
        }
    }
    out
}

/// Exact integer coefficient: i128 fast path, promoted to BigInt only when a
/// checked operation overflows. Values fitting i128 are always stored Small,
/// so equality is structural.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Int {
    Small(i128),
    Big(BigInt),
}

impl Int {
    pub fn from_i128(v: i128) -> Int {
        Int::Small(v)
    }

    fn normalize(self) -> Int {
        match self {
            Int::Big(b) => match i128::try_from(&b) {
                Ok(v) => Int::Small(v),
                Err(_) => Int::Big(b),
            },
            s => s,
        }
    }

    fn to_big(&self) -> BigInt {
        match self {
            Int::Small(v) => BigInt::from(*v),
            Int::Big(b) => b.clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Int::Small(v) => *v == 0,
            Int::Big(b) => b.is_zero(),
        }
    }

    pub fn add(&self, other: &Int) -> Int {
        if let (Int::Small(a), Int::Small(b)) = (self, other) {
            if let Some(s) = a.checked_add(*b) {
                return Int::Small(s);
            }
        }
        Int::Big(self.to_big() + other.to_big()).normalize()
    }

    pub fn mul(&self, other: &Int) -> Int {
        if let (Int::Small(a), Int::Small(b)) = (self, other) {
            if let Some(m) = a.checked_mul(*b) {
                return Int::Small(m);
            }
        }
        Int::Big(self.to_big() * other.to_big()).normalize()
    }

    pub fn neg(&self) -> Int {
        match self {
            Int::Small(v) => match v.checked_neg() {
                Some(n) => Int::Small(n),
                None => Int::Big(-BigInt::from(*v)),
            },
            Int::Big(b) => Int::Big(-b.clone()).normalize(),
        }
    }

    /// Exact division by a small positive divisor; errors when a remainder
    /// appears, which would mean the ghost recursion is broken.
    pub fn exact_div(&self, d: i128) -> Result<Int> {
        match self {
            Int::Small(v) => {
                if v % d != 0 {
                    return Err(Error::domain(format!(
                        "inexact division of {v} by {d} in ghost recursion"
                    )));
                }
                Ok(Int::Small(v / d))
            }
            Int::Big(b) => {
                let d = BigInt::from(d);
                if (b % &d) != BigInt::zero() {
                    return Err(Error::domain("inexact big-integer division in ghost recursion"));
                }
                Ok(Int::Big(b / d).normalize())
            }
        }
    }

    /// The representative in 0..m of the coefficient mod m.
    pub fn rem_u64(&self, m: u64) -> u64 {
        match self {
            Int::Small(v) => v.rem_euclid(m as i128) as u64,
            Int::Big(b) => {
                let m = BigInt::from(m);
                let r = ((b % &m) + &m) % &m;
                u64::try_from(r.magnitude().clone()).expect("reduced below u64 modulus")
            }
        }
    }
}

impl fmt::Display for Int {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Int::Small(v) => write!(f, "{v}"),
            Int::Big(b) => write!(f, "{b}"),
        }
    }
}

/// Keys are already well-mixed exponent packs; a splitmix-style final
/// avalanche is enough and much faster than SipHash for these maps.
#[derive(Default)]
pub struct MixHasher {
    state: u64,
}

impl Hasher for MixHasher {
    fn write(&mut self, bytes: &[u8]) {
        for chunk in bytes.chunks(8) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            let mut z = self.state ^ u64::from_le_bytes(buf);
            z = z.wrapping_add(0x9e3779b97f4a7c15);
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            self.state = z ^ (z >> 31);
        }
    }

    fn finish(&self) -> u64 {
        self.state
    }
}

type TermMap = HashMap<u128, Int, BuildHasherDefault<MixHasher>>;

/// Cumulative cost accounting for polynomial computation. `products` counts
/// pairwise term multiplications across all operations charged to this
/// budget; both caps abort the offending operation before it runs.
#[derive(Clone, Debug)]
pub struct PolyBudget {
    pub max_products: u128,
    pub max_terms: usize,
    used_products: u128,
}

pub const DEFAULT_MAX_PRODUCTS: u128 = 400_000_000;
pub const DEFAULT_MAX_TERMS: usize = 4_000_000;

impl Default for PolyBudget {
    fn default() -> Self {
        PolyBudget {
            max_products: DEFAULT_MAX_PRODUCTS,
            max_terms: DEFAULT_MAX_TERMS,
            used_products: 0,
        }
    }
}

impl PolyBudget {
    pub fn new(max_products: u128, max_terms: usize) -> PolyBudget {
        PolyBudget { max_products, max_terms, used_products: 0 }
    }

    pub fn used_products(&self) -> u128 {
        self.used_products
    }

    fn charge(&mut self, cost: u128) -> Result<()> {
        if self.used_products.saturating_add(cost) > self.max_products {
            return Err(Error::budget(format!(
                "polynomial multiplication needs {cost} term products; {} of {} already used",
                self.used_products, self.max_products
            )));
        }
        self.used_products += cost;
        Ok(())
    }

    fn check_terms(&self, len: usize) -> Result<()> {
        if len > self.max_terms {
            return Err(Error::budget(format!(
                "polynomial has {len} terms, cap is {}",
                self.max_terms
            )));
        }
        Ok(())
    }
}

/// Sparse multivariate polynomial over Z in x_0..x_4, y_0..y_4 with packed
/// exponents. No zero coefficients are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct WittPoly {
    terms: TermMap,
}

impl WittPoly {
    pub fn zero() -> WittPoly {
        WittPoly { terms: TermMap::default() }
    }

    pub fn constant(v: i128) -> WittPoly {
        let mut p = WittPoly::zero();
        p.add_term(0, Int::Small(v));
        p
    }

    pub fn var(v: Var) -> WittPoly {
        let mut p = WittPoly::zero();
        p.add_term(1u128 << (LANE_BITS * v.slot()), Int::Small(1));
        p
    }

    /// Monomial c * prod v_i^{e_i}; exponents must fit a lane.
    pub fn monomial(c: i128, vars: &[(Var, u32)]) -> WittPoly {
        let mut key = 0u128;
        for &(v, e) in vars {
            assert!((e as u128) <= LANE_MASK, "exponent too large for packing");
            key += (e as u128) << (LANE_BITS * v.slot());
        }
        let mut p = WittPoly::zero();
        p.add_term(key, Int::Small(c));
        p
    }

    pub fn from_terms(terms: &[(i128, &[(Var, u32)])]) -> WittPoly {
        let mut p = WittPoly::zero();
        for &(c, vars) in terms {
            p = p.add(&WittPoly::monomial(c, vars));
        }
        p
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (Vec<(Var, u32)>, &Int)> {
        self.terms.iter().map(|(k, c)| (decode_key(*k), c))
    }

    fn add_term(&mut self, key: u128, c: Int) {
        if c.is_zero() {
            return;
        }
        match self.terms.remove(&key) {
            None => {
                self.terms.insert(key, c);
            }
            Some(old) => {
                let s = old.add(&c);
                if !s.is_zero() {
                    self.terms.insert(key, s);
                }
            }
        }
    }

    pub fn add(&self, other: &WittPoly) -> WittPoly {
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.add_term(*k, c.clone());
        }
        out
    }

    pub fn neg(&self) -> WittPoly {
        let terms = self.terms.iter().map(|(k, c)| (*k, c.neg())).collect();
        WittPoly { terms }
    }

    pub fn sub(&self, other: &WittPoly) -> WittPoly {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: i128) -> WittPoly {
        if c == 0 {
            return WittPoly::zero();
        }
        let s = Int::Small(c);
        let terms = self.terms.iter().map(|(k, v)| (*k, v.mul(&s))).collect();
        WittPoly { terms }
    }

    fn mul_keys(a: u128, b: u128) -> Result<u128> {
        if (a | b) & LANE_GUARD == 0 {
            return Ok(a + b);
        }
        // Slow path: at least one lane is >= 2^11, add lanes individually.
        let mut out = 0u128;
        for i in 0..2 * SIDE {
            let shift = LANE_BITS * i as u32;
            let s = ((a >> shift) & LANE_MASK) + ((b >> shift) & LANE_MASK);
            if s > LANE_MASK {
                return Err(Error::overflow("monomial exponent exceeds packed lane"));
            }
            out |= s << shift;
        }
        Ok(out)
    }

    pub fn mul(&self, other: &WittPoly, budget: &mut PolyBudget) -> Result<WittPoly> {
        let cost = (self.terms.len() as u128) * (other.terms.len() as u128);
        budget.charge(cost)?;
        let mut out = WittPoly::zero();
        for (k1, c1) in &self.terms {
            for (k2, c2) in &other.terms {
                let k = WittPoly::mul_keys(*k1, *k2)?;
                out.add_term(k, c1.mul(c2));
            }
            budget.check_terms(out.terms.len())?;
        }
        Ok(out)
    }

    pub fn pow(&self, e: u32, budget: &mut PolyBudget) -> Result<WittPoly> {
        if e == 0 {
            return Ok(WittPoly::constant(1));
        }
        let mut acc: Option<WittPoly> = None;
        let mut base = self.clone();
        let mut rest = e;
        loop {
            if rest & 1 == 1 {
                acc = Some(match acc {
                    None => base.clone(),
                    Some(a) => a.mul(&base, budget)?,
                });
            }
            rest >>= 1;
            if rest == 0 {
                break;
            }
            base = base.mul(&base, budget)?;
        }
        Ok(acc.expect("e > 0"))
    }

    pub fn exact_div(&self, d: i128) -> Result<WittPoly> {
        let mut terms = TermMap::default();
        for (k, c) in &self.terms {
            terms.insert(*k, c.exact_div(d)?);
        }
        Ok(WittPoly { terms })
    }

    /// Terms in a deterministic order (sorted by packed key) for display and
    /// golden comparisons.
    pub fn sorted_terms(&self) -> Vec<(Vec<(Var, u32)>, Int)> {
        let mut keys: Vec<&u128> = self.terms.keys().collect();
        keys.sort();
        keys.into_iter().map(|k| (decode_key(*k), self.terms[k].clone())).collect()
    }
}

impl fmt::Display for WittPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (idx, (vars, coeff)) in self.sorted_terms().into_iter().enumerate() {
            let neg = match &coeff {
                Int::Small(v) => *v < 0,
                Int::Big(b) => b.is_negative(),
            };
            let mag = if neg { coeff.neg() } else { coeff };
            if idx == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let one = matches!(&mag, Int::Small(1));
            if !one || vars.is_empty() {
                write!(f, "{mag}")?;
                if !vars.is_empty() {
                    write!(f, "*")?;
                }
            }
            for (i, (v, e)) in vars.iter().enumerate() {
                if i > 0 {
                    write!(f, "*")?;
                }
                match v {
                    Var::X(j) => write!(f, "x{j}")?,
                    Var::Y(j) => write!(f, "y{j}")?,
                }
                if *e > 1 {
                    write!(f, "^{e}")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WittFamily {
    Sum,
    Prod,
    Neg,
}

impl WittFamily {
    pub fn label(self) -> &'static str {
        match self {
            WittFamily::Sum => "S",
            WittFamily::Prod => "P",
            WittFamily::Neg => "I",
        }
    }
}

struct CacheState {
    budget: PolyBudget,
    sums: Vec<Arc<WittPoly>>,
    prods: Vec<Arc<WittPoly>>,
    negs: Vec<Arc<WittPoly>>,
}

/// Per-prime cache of the addition/multiplication/negation coordinate
/// polynomials, extended lazily and deterministically. All computation done
/// on behalf of this cache draws from one shared budget.
pub struct WittPolyCache {
    p: u64,
    state: Mutex<CacheState>,
}

impl WittPolyCache {
    pub fn new(p: u64) -> Result<WittPolyCache> {
        WittPolyCache::with_budget(p, PolyBudget::default())
    }

    pub fn with_budget(p: u64, budget: PolyBudget) -> Result<WittPolyCache> {
        if !is_prime(p) {
            return Err(Error::invalid(format!("p = {p} is not prime")));
        }
        Ok(WittPolyCache {
            p,
            state: Mutex::new(CacheState {
                budget,
                sums: Vec::new(),
                prods: Vec::new(),
                negs: Vec::new(),
            }),
        })
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn products_used(&self) -> u128 {
        self.state.lock().expect("cache lock").budget.used_products()
    }

    /// Ghost polynomial W_k over one variable family:
    /// sum_{i<=k} p^i * v_i^{p^{k-i}}.
    pub fn ghost_poly(&self, k: usize, side_y: bool) -> Result<WittPoly> {
        check_index(k)?;
        let mut out = WittPoly::zero();
        for i in 0..=k {
            let coeff = pow_i128(self.p as i128, i as u32)?;
            let exp = pow_u32(self.p, (k - i) as u32)?;
            let var = if side_y { Var::Y(i) } else { Var::X(i) };
            out = out.add(&WittPoly::monomial(coeff, &[(var, exp)]));
        }
        Ok(out)
    }

    pub fn sum_poly(&self, i: usize) -> Result<Arc<WittPoly>> {
        self.family_poly(WittFamily::Sum, i)
    }

    pub fn prod_poly(&self, i: usize) -> Result<Arc<WittPoly>> {
        self.family_poly(WittFamily::Prod, i)
    }

    pub fn neg_poly(&self, i: usize) -> Result<Arc<WittPoly>> {
        self.family_poly(WittFamily::Neg, i)
    }

    pub fn family_poly(&self, family: WittFamily, i: usize) -> Result<Arc<WittPoly>> {
        check_index(i)?;
        let mut state = self.state.lock().expect("cache lock");
        loop {
            let cached = match family {
                WittFamily::Sum => &state.sums,
                WittFamily::Prod => &state.prods,
                WittFamily::Neg => &state.negs,
            };
            if i < cached.len() {
                return Ok(cached[i].clone());
            }
            let next = cached.len();
            let poly = Arc::new(self.compute(family, next, &mut state)?);
            match family {
                WittFamily::Sum => state.sums.push(poly),
                WittFamily::Prod => state.prods.push(poly),
                WittFamily::Neg => state.negs.push(poly),
            }
        }
    }

    /// One step of the ghost recursion: p^k * F_k = target_k - sum_{i<k}
    /// p^i * F_i^{p^{k-i}}, with exact division at the end.
    fn compute(&self, family: WittFamily, k: usize, state: &mut CacheState) -> Result<WittPoly> {
        let target = self.target(family, k, state)?;
        let mut rhs = target;
        for i in 0..k {
            let prev = match family {
                WittFamily::Sum => state.sums[i].clone(),
                WittFamily::Prod => state.prods[i].clone(),
                WittFamily::Neg => state.negs[i].clone(),
            };
            let e = pow_u32(self.p, (k - i) as u32)?;
            let powed = prev.pow(e, &mut state.budget)?;
            let coeff = pow_i128(self.p as i128, i as u32)?;
            rhs = rhs.sub(&powed.scale(coeff));
        }
        rhs.exact_div(pow_i128(self.p as i128, k as u32)?)
    }

    fn target(&self, family: WittFamily, k: usize, state: &mut CacheState) -> Result<WittPoly> {
        let gx = self.ghost_poly(k, false)?;
        match family {
            WittFamily::Sum => Ok(gx.add(&self.ghost_poly(k, true)?)),
            WittFamily::Prod => gx.mul(&self.ghost_poly(k, true)?, &mut state.budget),
            WittFamily::Neg => Ok(gx.neg()),
        }
    }

    /// Recomputes both sides of the defining ghost identity for (family, i)
    /// from the cached polynomials and checks exact equality over Z.
    pub fn verify_ghost_identity(&self, family: WittFamily, i: usize) -> Result<()> {
        check_index(i)?;
        let mut coords = Vec::with_capacity(i + 1);
        for j in 0..=i {
            coords.push(self.family_poly(family, j)?);
        }
        let mut state = self.state.lock().expect("cache lock");
        let mut lhs = WittPoly::zero();
        for (j, f) in coords.iter().enumerate() {
            let e = pow_u32(self.p, (i - j) as u32)?;
            let powed = f.pow(e, &mut state.budget)?;
            lhs = lhs.add(&powed.scale(pow_i128(self.p as i128, j as u32)?));
        }
        let rhs = self.target(family, i, &mut state)?;
        if lhs == rhs {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "ghost identity failed for {}_{i}, p = {}",
                family.label(),
                self.p
            )))
        }
    }
}

fn check_index(i: usize) -> Result<()> {
    if i > MAX_INDEX {
        return Err(Error::unsupported(format!(
            "coordinate polynomial index {i} above supported maximum {MAX_INDEX}"
        )));
    }
    Ok(())
}

fn pow_i128(base: i128, e: u32) -> Result<i128> {
    base.checked_pow(e).ok_or_else(|| Error::overflow("p^k overflows i128"))
}

fn pow_u32(base: u64, e: u32) -> Result<u32> {
    base.checked_pow(e)
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| Error::overflow("exponent p^k too large for packing"))
}
