use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::sync::Arc;

/// An element of F_q = F_p[z]/(modulus), stored as coefficients of
/// 1, z, ..., z^{d-1} in ascending order. Coefficients are reduced mod p.
/// All arithmetic goes through `PrimeConfig`, which owns p and the modulus.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FqElem {
    coeffs: Vec<u64>,
}

impl FqElem {
    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }
}

/// Shared arithmetic context: the prime p, extension degree d, and the monic
/// irreducible modulus of F_q over F_p (ascending coefficients, length d+1).
#[derive(Debug, PartialEq, Eq)]
pub struct PrimeConfig {
    p: u64,
    d: usize,
    q: u64,
    modulus: Vec<u64>,
}

/// Enumerating monic polynomials of degree e costs p^e candidates; the
/// brute-force factor search stays below this many division attempts.
const FACTOR_SEARCH_CAP: u64 = 1 << 24;

impl PrimeConfig {
    /// Builds a config, searching for a default modulus when none is given.
    /// The supplied modulus must be monic of degree d with coefficients < p,
    /// and is verified irreducible by brute-force factor search.
    pub fn new(p: u64, d: usize, modulus: Option<Vec<u64>>) -> Result<Arc<PrimeConfig>> {
        if !is_prime(p) {
            return Err(Error::invalid(format!("p = {p} is not prime")));
        }
        if d == 0 || d > 8 {
            return Err(Error::invalid(format!(
                "extension degree d = {d} out of supported range 1..=8"
            )));
        }
        let q = checked_pow(p, d as u32)
            .ok_or_else(|| Error::overflow(format!("p^d overflows u64 for p={p}, d={d}")))?;
        let modulus = match modulus {
            Some(m) => {
                if m.len() != d + 1 {
                    return Err(Error::invalid(format!(
                        "modulus must have degree {d} (got {} coefficients, need {})",
                        m.len(),
                        d + 1
                    )));
                }
                if m[d] != 1 {
                    return Err(Error::invalid("modulus must be monic"));
                }
                if m.iter().any(|&c| c >= p) {
                    return Err(Error::invalid("modulus coefficients must be reduced mod p"));
                }
                if d > 1 {
                    check_factor_search_budget(p, d)?;
                    if !is_irreducible(&m, p) {
                        return Err(Error::invalid("modulus is reducible over F_p"));
                    }
                }
                m
            }
            None => default_modulus(p, d)?,
        };
        Ok(Arc::new(PrimeConfig { p, d, q, modulus }))
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn modulus(&self) -> &[u64] {
        &self.modulus
    }

    pub fn zero(&self) -> FqElem {
        FqElem { coeffs: vec![0; self.d] }
    }

    pub fn one(&self) -> FqElem {
        self.from_u64(1)
    }

    pub fn from_u64(&self, v: u64) -> FqElem {
        let mut coeffs = vec![0; self.d];
        coeffs[0] = v % self.p;
        FqElem { coeffs }
    }

    /// Builds an element from ascending coefficients; shorter slices are
    /// zero-padded, entries are reduced mod p. Errors if too many entries.
    pub fn from_coeffs(&self, cs: &[u64]) -> Result<FqElem> {
        if cs.len() > self.d {
            return Err(Error::invalid(format!(
                "{} coefficients for extension degree {}",
                cs.len(),
                self.d
            )));
        }
        let mut coeffs = vec![0; self.d];
        for (i, &c) in cs.iter().enumerate() {
            coeffs[i] = c % self.p;
        }
        Ok(FqElem { coeffs })
    }

    pub fn add_fq(&self, a: &FqElem, b: &FqElem) -> FqElem {
        let coeffs = a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(&x, &y)| (x + y) % self.p)
            .collect();
        FqElem { coeffs }
    }

    pub fn neg_fq(&self, a: &FqElem) -> FqElem {
        let coeffs = a.coeffs.iter().map(|&x| (self.p - x) % self.p).collect();
        FqElem { coeffs }
    }

    pub fn sub_fq(&self, a: &FqElem, b: &FqElem) -> FqElem {
        self.add_fq(a, &self.neg_fq(b))
    }

    pub fn mul_fq(&self, a: &FqElem, b: &FqElem) -> FqElem {
        let d = self.d;
        let mut prod = vec![0u128; 2 * d - 1];
        for i in 0..d {
            if a.coeffs[i] == 0 {
                continue;
            }
            for j in 0..d {
                prod[i + j] += (a.coeffs[i] as u128) * (b.coeffs[j] as u128);
            }
        }
        // Reduce by the monic modulus from the top down.
        for k in (d..2 * d - 1).rev() {
            let c = (prod[k] % self.p as u128) as u64;
            prod[k] = 0;
            if c == 0 {
                continue;
            }
            for i in 0..d {
                let m = self.modulus[i];
                if m == 0 {
                    continue;
                }
                // z^k = -modulus_tail * z^{k-d}
                let sub = (c as u128) * (m as u128) % self.p as u128;
                let slot = &mut prod[k - d + i];
                *slot += self.p as u128 - sub;
            }
        }
        let coeffs = prod[..d].iter().map(|&x| (x % self.p as u128) as u64).collect();
        FqElem { coeffs }
    }

    pub fn pow_fq(&self, a: &FqElem, mut e: u64) -> FqElem {
        let mut base = a.clone();
        let mut acc = self.one();
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul_fq(&acc, &base);
            }
            base = self.mul_fq(&base, &base);
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via x^{q-2}. Errors on zero.
    pub fn inv_fq(&self, a: &FqElem) -> Result<FqElem> {
        if a.is_zero() {
            return Err(Error::domain("inverse of zero in F_q"));
        }
        Ok(self.pow_fq(a, self.q - 2))
    }

    /// x -> x^p, the absolute Frobenius.
    pub fn frobenius_fq(&self, a: &FqElem) -> FqElem {
        self.pow_fq(a, self.p)
    }

    /// The inverse of Frobenius: x -> x^{q/p}, since x^q = x.
    pub fn frobenius_inv_fq(&self, a: &FqElem) -> FqElem {
        self.pow_fq(a, self.q / self.p)
    }

    /// Canonical index in 0..q: sum of coeff_i * p^i.
    pub fn index_of(&self, a: &FqElem) -> u64 {
        let mut idx = 0u64;
        for &c in a.coeffs.iter().rev() {
            idx = idx * self.p + c;
        }
        idx
    }

    pub fn from_index(&self, mut idx: u64) -> Result<FqElem> {
        if idx >= self.q {
            return Err(Error::invalid(format!("field index {idx} out of range 0..{}", self.q)));
        }
        let mut coeffs = vec![0; self.d];
        for c in coeffs.iter_mut() {
            *c = idx % self.p;
            idx /= self.p;
        }
        Ok(FqElem { coeffs })
    }

    pub fn elements(self: &Arc<Self>) -> impl Iterator<Item = FqElem> + '_ {
        (0..self.q).map(move |i| self.from_index(i).expect("index in range"))
    }

    /// Renders as a polynomial in z, descending powers: "z^2+2*z+1", "0".
    pub fn format_fq(&self, a: &FqElem) -> String {
        let mut out = String::new();
        for (e, &c) in a.coeffs.iter().enumerate().rev() {
            if c == 0 {
                continue;
            }
            if !out.is_empty() {
                out.push('+');
            }
            match e {
                0 => {
                    let _ = write!(out, "{c}");
                }
                _ => {
                    if c != 1 {
                        let _ = write!(out, "{c}*");
                    }
                    if e == 1 {
                        out.push('z');
                    } else {
                        let _ = write!(out, "z^{e}");
                    }
                }
            }
        }
        if out.is_empty() {
            out.push('0');
        }
        out
    }

    /// Parses the z-polynomial forms produced by `format_fq`, leniently
    /// accepting unreduced coefficients and repeated powers.
    pub fn parse_fq(&self, s: &str) -> Result<FqElem> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(Error::parse("empty field element"));
        }
        let mut acc = self.zero();
        for piece in compact.split('+') {
            if piece.is_empty() {
                return Err(Error::parse(format!("empty term in field element '{s}'")));
            }
            let (coeff, rest) = match piece.find(|ch: char| !ch.is_ascii_digit()) {
                None => {
                    let v: u64 = piece
                        .parse()
                        .map_err(|_| Error::parse(format!("bad integer '{piece}'")))?;
                    (v, "")
                }
                Some(0) => (1, piece),
                Some(split) => {
                    let v: u64 = piece[..split]
                        .parse()
                        .map_err(|_| Error::parse(format!("bad integer in '{piece}'")))?;
                    let rest = piece[split..].strip_prefix('*').unwrap_or(&piece[split..]);
                    (v, rest)
                }
            };
            let exp = if rest.is_empty() {
                0
            } else if rest == "z" {
                1
            } else if let Some(e) = rest.strip_prefix("z^") {
                e.parse::<usize>()
                    .map_err(|_| Error::parse(format!("bad exponent in '{piece}'")))?
            } else {
                return Err(Error::parse(format!("unrecognized term '{piece}'")));
            };
            if exp >= self.d {
                return Err(Error::parse(format!(
                    "z^{exp} exceeds extension degree {} (reduce by the modulus first)",
                    self.d
                )));
            }
            let mut term = vec![0; self.d];
            term[exp] = coeff % self.p;
            acc = self.add_fq(&acc, &FqElem { coeffs: term });
        }
        Ok(acc)
    }
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut f = 3;
    while f * f <= n {
        if n % f == 0 {
            return false;
        }
        f += 2;
    }
    true
}

pub fn checked_pow(base: u64, exp: u32) -> Option<u64> {
    base.checked_pow(exp)
}

fn check_factor_search_budget(p: u64, d: usize) -> Result<()> {
    let e = d / 2;
    match checked_pow(p, e as u32) {
        Some(n) if n <= FACTOR_SEARCH_CAP => Ok(()),
        _ => Err(Error::unsupported(format!(
            "irreducibility search over F_{p} up to degree {e} is too large; supply a smaller p or d"
        ))),
    }
}

/// First irreducible monic polynomial z^d + c_{d-1} z^{d-1} + ... + c_0,
/// scanning lower coefficients in base-p counter order.
fn default_modulus(p: u64, d: usize) -> Result<Vec<u64>> {
    if d == 1 {
        return Ok(vec![0, 1]);
    }
    check_factor_search_budget(p, d)?;
    let total = checked_pow(p, d as u32)
        .ok_or_else(|| Error::overflow("modulus search space overflows u64"))?;
    for k in 0..total {
        let mut cand = Vec::with_capacity(d + 1);
        let mut v = k;
        for _ in 0..d {
            cand.push(v % p);
            v /= p;
        }
        cand.push(1);
        if is_irreducible(&cand, p) {
            return Ok(cand);
        }
    }
    Err(Error::domain(format!("no irreducible monic polynomial of degree {d} over F_{p}")))
}

/// Brute-force: f (monic, degree >= 2) is irreducible iff no monic polynomial
/// of degree 1..=deg(f)/2 divides it.
fn is_irreducible(f: &[u64], p: u64) -> bool {
    let d = f.len() - 1;
    for e in 1..=d / 2 {
        let count = match checked_pow(p, e as u32) {
            Some(c) => c,
            None => return false,
        };
        for k in 0..count {
            let mut g = Vec::with_capacity(e + 1);
            let mut v = k;
            for _ in 0..e {
                g.push(v % p);
                v /= p;
            }
            g.push(1);
            if poly_divides(&g, f, p) {
                return false;
            }
        }
    }
    true
}

/// Whether monic g divides f over F_p (remainder of long division is zero).
fn poly_divides(g: &[u64], f: &[u64], p: u64) -> bool {
    let dg = g.len() - 1;
    let mut rem: Vec<u64> = f.to_vec();
    while rem.len() > dg {
        let lead = *rem.last().expect("nonempty");
        let k = rem.len() - 1 - dg;
        if lead != 0 {
            for i in 0..=dg {
                let sub = lead * g[i] % p;
                let slot = &mut rem[k + i];
                *slot = (*slot + p - sub) % p;
            }
        }
        rem.pop();
    }
    rem.iter().all(|&c| c == 0)
}
