use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::field::PrimeConfig;
use crate::perfect::PerfElem;
use crate::wittpoly::{Var, WittPoly, WittPolyCache};
use std::collections::BTreeMap;
use std::sync::Arc;

/// A truncated Witt vector over F_q[t^{1/p^infinity}]: level n >= 1 and n
/// coordinates sharing one PrimeConfig. Vectors over F_q embed as vectors
/// with constant coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WittVec {
    cfg: Arc<PrimeConfig>,
    coords: Vec<PerfElem>,
}

/// Truncation levels are capped so p^n fits comfortably in u64 arithmetic.
const MAX_PN: u64 = 1 << 62;

/// Below this many products the sparse map loop beats building dense arrays.
const DENSE_MIN_PRODUCTS: usize = 1 << 12;

/// Cap on the dense output width (memory guard for very sparse supports).
const DENSE_MAX_WIDTH: u128 = 1 << 22;

impl WittVec {
    pub fn new(cfg: &Arc<PrimeConfig>, coords: Vec<PerfElem>) -> Result<WittVec> {
        if coords.is_empty() {
            return Err(Error::invalid("Witt vector level must be at least 1"));
        }
        for c in &coords {
            if c.cfg() != cfg {
                return Err(Error::invalid("Witt coordinates built from a different prime configuration"));
            }
        }
        check_level(cfg.p(), coords.len())?;
        Ok(WittVec { cfg: cfg.clone(), coords })
    }

    pub fn zero(cfg: &Arc<PrimeConfig>, n: usize) -> Result<WittVec> {
        WittVec::new(cfg, vec![PerfElem::zero(cfg); n])
    }

    /// [x] = (x, 0, ..., 0); the multiplicative section over a perfect base.
    pub fn teichmuller(x: &PerfElem, n: usize) -> Result<WittVec> {
        let cfg = x.cfg().clone();
        let mut coords = vec![PerfElem::zero(&cfg); n];
        coords[0] = x.clone();
        WittVec::new(&cfg, coords)
    }

    pub fn cfg(&self) -> &Arc<PrimeConfig> {
        &self.cfg
    }

    pub fn level(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[PerfElem] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> &PerfElem {
        &self.coords[i]
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|c| c.is_zero())
    }

    fn check_compatible(&self, other: &WittVec) -> Result<()> {
        if self.cfg != other.cfg {
            return Err(Error::invalid("Witt vectors from different prime configurations"));
        }
        if self.coords.len() != other.coords.len() {
            return Err(Error::invalid(format!(
                "Witt vector level mismatch: {} vs {}",
                self.coords.len(),
                other.coords.len()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &WittVec) -> Result<WittVec> {
        self.check_compatible(other)?;
        let ctx = ModelCtx::new(&self.cfg, self.level())?;
        let x = ctx.to_model(&self.coords)?;
        let y = ctx.to_model(&other.coords)?;
        let coords = ctx.from_model(ctx.add(&x, &y))?;
        WittVec::new(&self.cfg, coords)
    }

    pub fn mul(&self, other: &WittVec) -> Result<WittVec> {
        self.check_compatible(other)?;
        let ctx = ModelCtx::new(&self.cfg, self.level())?;
        let x = ctx.to_model(&self.coords)?;
        let y = ctx.to_model(&other.coords)?;
        let coords = ctx.from_model(ctx.mul(&x, &y)?)?;
        WittVec::new(&self.cfg, coords)
    }

    pub fn neg(&self) -> Result<WittVec> {
        let ctx = ModelCtx::new(&self.cfg, self.level())?;
        let x = ctx.to_model(&self.coords)?;
        let coords = ctx.from_model(ctx.neg(&x))?;
        WittVec::new(&self.cfg, coords)
    }

    pub fn sub(&self, other: &WittVec) -> Result<WittVec> {
        self.add(&other.neg()?)
    }

    /// m * 1 in W_n, computed in the residue-ring model; agrees with a
    /// repeated witt_add chain (tested).
    pub fn from_integer(m: i128, cfg: &Arc<PrimeConfig>, n: usize) -> Result<WittVec> {
        let ctx = ModelCtx::new(cfg, n)?;
        let r = m.rem_euclid(ctx.pn as i128) as u64;
        let mut poly = BTreeMap::new();
        let c = ctx.zq_from_u64(r);
        if !zq_is_zero(&c) {
            poly.insert(Exponent::zero(), c);
        }
        let coords = ctx.from_model(poly)?;
        WittVec::new(cfg, coords)
    }

    /// V(a) = (0, a_0, ..., a_{n-2}) at the same level.
    pub fn verschiebung(&self) -> Result<WittVec> {
        let mut coords = vec![PerfElem::zero(&self.cfg)];
        coords.extend_from_slice(&self.coords[..self.coords.len() - 1]);
        WittVec::new(&self.cfg, coords)
    }

    /// p * a = (0, a_0^p, ..., a_{n-2}^p): Verschiebung after coordinatewise
    /// Frobenius, valid over a perfect base.
    pub fn p_times(&self) -> Result<WittVec> {
        let mut coords = vec![PerfElem::zero(&self.cfg)];
        for c in &self.coords[..self.coords.len() - 1] {
            coords.push(c.frobenius()?);
        }
        WittVec::new(&self.cfg, coords)
    }

    /// Inverse of p_times on vectors with vanishing first coordinate; drops
    /// to level n-1.
    pub fn divide_by_p(&self) -> Result<WittVec> {
        if !self.coords[0].is_zero() {
            return Err(Error::domain("divide_by_p requires first coordinate zero"));
        }
        if self.coords.len() < 2 {
            return Err(Error::invalid("divide_by_p needs level at least 2"));
        }
        let mut coords = Vec::with_capacity(self.coords.len() - 1);
        for c in &self.coords[1..] {
            coords.push(c.frobenius_inverse()?);
        }
        WittVec::new(&self.cfg, coords)
    }

    /// Truncation W_n -> W_m for m <= n: drop trailing coordinates.
    pub fn truncate_level(&self, m: usize) -> Result<WittVec> {
        if m == 0 || m > self.coords.len() {
            return Err(Error::invalid(format!(
                "cannot truncate level {} vector to level {m}",
                self.coords.len()
            )));
        }
        WittVec::new(&self.cfg, self.coords[..m].to_vec())
    }

    /// Applies the residue map O_F -> F_q coordinatewise; the image of x
    /// under W(res), landing in W_n(F_q) (constant coordinates).
    pub fn residue_coordinatewise(&self) -> Result<WittVec> {
        let coords = self
            .coords
            .iter()
            .map(|c| PerfElem::monomial(&self.cfg, c.residue(), Exponent::zero()))
            .collect();
        WittVec::new(&self.cfg, coords)
    }

    /// Text form `[e0; e1; ...]` with coordinates in the perfect-ring
    /// grammar; round-trips exactly.
    pub fn render(&self) -> String {
        let inner: Vec<String> = self.coords.iter().map(|c| c.render()).collect();
        format!("[{}]", inner.join("; "))
    }

    pub fn parse(cfg: &Arc<PrimeConfig>, input: &str) -> Result<WittVec> {
        let trimmed = input.trim();
        let body = trimmed
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| Error::parse("Witt vector must be bracketed: [e0; e1; ...]"))?;
        let coords = body
            .split(';')
            .map(|s| PerfElem::parse(cfg, s))
            .collect::<Result<Vec<_>>>()?;
        WittVec::new(cfg, coords)
    }
}

fn check_level(p: u64, n: usize) -> Result<u64> {
    u32::try_from(n)
        .ok()
        .and_then(|n| p.checked_pow(n))
        .filter(|&pn| pn <= MAX_PN)
        .ok_or_else(|| Error::invalid(format!("p^n exceeds supported range for p={p}, n={n}")))
}

/// An element of the Galois ring (Z/p^n)[z]/(modulus): d coefficients mod
/// p^n. The modulus is the integer lift of the F_q modulus, still monic, so
/// division with remainder works over Z/p^n.
pub(crate) type Zq = Vec<u64>;

fn zq_is_zero(a: &Zq) -> bool {
    a.iter().all(|&c| c == 0)
}

/// Sparse polynomial in T^{1/p^infinity} with Galois-ring coefficients: the
/// working model of W_n(F_q[t^{1/p^infinity}]). The model is the p-adic
/// completion viewpoint: W_n of a perfect F_p-algebra is the unique flat
/// Z/p^n-lift, realized here concretely.
pub(crate) type ModelPoly = BTreeMap<Exponent, Zq>;

pub(crate) struct ModelCtx {
    cfg: Arc<PrimeConfig>,
    n: usize,
    pn: u64,
}

impl ModelCtx {
    pub(crate) fn new(cfg: &Arc<PrimeConfig>, n: usize) -> Result<ModelCtx> {
        let pn = check_level(cfg.p(), n)?;
        Ok(ModelCtx { cfg: cfg.clone(), n, pn })
    }

    fn d(&self) -> usize {
        self.cfg.d()
    }

    pub(crate) fn p(&self) -> u64 {
        self.cfg.p()
    }

    fn zq_zero(&self) -> Zq {
        vec![0; self.d()]
    }

    fn zq_from_u64(&self, v: u64) -> Zq {
        let mut c = self.zq_zero();
        c[0] = v % self.pn;
        c
    }

    fn zq_add(&self, a: &Zq, b: &Zq) -> Zq {
        a.iter().zip(b).map(|(&x, &y)| (x + y) % self.pn).collect()
    }

    fn zq_neg(&self, a: &Zq) -> Zq {
        a.iter().map(|&x| (self.pn - x) % self.pn).collect()
    }

    fn zq_mul(&self, a: &[u64], b: &[u64]) -> Zq {
        let d = self.d();
        if d == 1 {
            return vec![(((a[0] as u128) * (b[0] as u128)) % self.pn as u128) as u64];
        }
        let mut prod = vec![0u128; 2 * d - 1];
        for i in 0..d {
            if a[i] == 0 {
                continue;
            }
            for j in 0..d {
                prod[i + j] = (prod[i + j] + (a[i] as u128) * (b[j] as u128))
                    % (self.pn as u128 * self.pn as u128);
            }
        }
        // Monic modulus (the integer lift of the F_q modulus): reduce top-down.
        let m = self.cfg.modulus();
        for k in (d..2 * d - 1).rev() {
            let c = (prod[k] % self.pn as u128) as u64;
            prod[k] = 0;
            if c == 0 {
                continue;
            }
            for i in 0..d {
                if m[i] == 0 {
                    continue;
                }
                let sub = (c as u128) * (m[i] as u128) % self.pn as u128;
                prod[k - d + i] = prod[k - d + i] + (self.pn as u128) - sub;
            }
        }
        prod[..d].iter().map(|&x| (x % self.pn as u128) as u64).collect()
    }

    fn zq_scale(&self, a: &Zq, s: u64) -> Zq {
        a.iter().map(|&x| (((x as u128) * (s as u128)) % self.pn as u128) as u64).collect()
    }

    /// Exact division by p; valid whenever the value is divisible by p
    /// modulo the precision still carried.
    fn zq_div_p(&self, a: &Zq) -> Result<Zq> {
        let p = self.cfg.p();
        a.iter()
            .map(|&x| {
                if x % p != 0 {
                    Err(Error::domain("model coefficient not divisible by p"))
                } else {
                    Ok(x / p)
                }
            })
            .collect()
    }

    fn zq_mod_p(&self, a: &Zq) -> crate::field::FqElem {
        let p = self.cfg.p();
        let reduced: Vec<u64> = a.iter().map(|&x| x % p).collect();
        self.cfg.from_coeffs(&reduced).expect("coefficient count matches d")
    }

    fn zq_lift(&self, c: &crate::field::FqElem) -> Zq {
        c.coeffs().to_vec()
    }

    pub(crate) fn add(&self, a: &ModelPoly, b: &ModelPoly) -> ModelPoly {
        let mut out = a.clone();
        for (e, c) in b {
            self.insert_term(&mut out, *e, c.clone());
        }
        out
    }

    pub(crate) fn neg(&self, a: &ModelPoly) -> ModelPoly {
        a.iter().map(|(e, c)| (*e, self.zq_neg(c))).collect()
    }

    pub(crate) fn mul(&self, a: &ModelPoly, b: &ModelPoly) -> Result<ModelPoly> {
        if a.is_empty() || b.is_empty() {
            return Ok(ModelPoly::new());
        }
        if a.len() * b.len() >= DENSE_MIN_PRODUCTS {
            if let Some(out) = self.mul_dense(a, b)? {
                return Ok(out);
            }
        }
        let p = self.cfg.p();
        let mut out = ModelPoly::new();
        for (e1, c1) in a {
            for (e2, c2) in b {
                let e = e1.add(e2, p)?;
                self.insert_term(&mut out, e, self.zq_mul(c1, c2));
            }
        }
        Ok(out)
    }

    /// Same product as the sparse loop, through dense coefficient arrays
    /// over the common p-power denominator. The teich power chains fill
    /// their whole exponent window, and there the per-term map overhead is
    /// what dominates; flat arrays remove it. None when the window is too
    /// wide for the dense form to pay.
    fn mul_dense(&self, a: &ModelPoly, b: &ModelPoly) -> Result<Option<ModelPoly>> {
        let p = self.cfg.p();
        let den = a.keys().chain(b.keys()).map(|e| e.den()).max().expect("nonempty");
        let top = |m: &ModelPoly| -> u128 {
            m.keys().map(|e| e.num() as u128 * (den / e.den()) as u128).max().expect("nonempty")
        };
        let (wa, wb) = (top(a), top(b));
        if wa + wb + 1 > DENSE_MAX_WIDTH {
            return Ok(None);
        }
        let d = self.d();
        let (la, lb) = (wa as usize + 1, wb as usize + 1);
        let lr = la + lb - 1;
        let fill = |m: &ModelPoly, len: usize| -> Vec<u64> {
            let mut f = vec![0u64; len * d];
            for (e, c) in m {
                let i = (e.num() as u128 * (den / e.den()) as u128) as usize;
                f[i * d..(i + 1) * d].copy_from_slice(c);
            }
            f
        };
        let fa = fill(a, la);
        let fb = fill(b, lb);
        let mut fr = vec![0u64; lr * d];
        if d == 1 {
            let pn = self.pn as u128;
            for (i, &x) in fa.iter().enumerate() {
                if x == 0 {
                    continue;
                }
                for (j, &y) in fb.iter().enumerate() {
                    if y == 0 {
                        continue;
                    }
                    let cell = &mut fr[i + j];
                    *cell = ((*cell as u128 + (x as u128) * (y as u128)) % pn) as u64;
                }
            }
        } else {
            for i in 0..la {
                let ca = &fa[i * d..(i + 1) * d];
                if ca.iter().all(|&x| x == 0) {
                    continue;
                }
                for j in 0..lb {
                    let cb = &fb[j * d..(j + 1) * d];
                    if cb.iter().all(|&x| x == 0) {
                        continue;
                    }
                    let prod = self.zq_mul(ca, cb);
                    for (t, &v) in prod.iter().enumerate() {
                        let cell = &mut fr[(i + j) * d + t];
                        *cell = (((*cell as u128) + v as u128) % self.pn as u128) as u64;
                    }
                }
            }
        }
        let mut k = 0u32;
        let mut rest = den;
        while rest > 1 {
            rest /= p;
            k += 1;
        }
        let mut out = ModelPoly::new();
        for idx in 0..lr {
            let c = &fr[idx * d..(idx + 1) * d];
            if c.iter().any(|&x| x != 0) {
                out.insert(Exponent::new(idx as u64, p, k)?, c.to_vec());
            }
        }
        Ok(Some(out))
    }

    fn insert_term(&self, m: &mut ModelPoly, e: Exponent, c: Zq) {
        if zq_is_zero(&c) {
            return;
        }
        match m.remove(&e) {
            None => {
                m.insert(e, c);
            }
            Some(old) => {
                let s = self.zq_add(&old, &c);
                if !zq_is_zero(&s) {
                    m.insert(e, s);
                }
            }
        }
    }

    pub(crate) fn scale(&self, a: &ModelPoly, s: u64) -> ModelPoly {
        let mut out = ModelPoly::new();
        for (e, c) in a {
            self.insert_term(&mut out, *e, self.zq_scale(c, s));
        }
        out
    }

    pub(crate) fn div_p(&self, a: &ModelPoly) -> Result<ModelPoly> {
        let mut out = ModelPoly::new();
        for (e, c) in a {
            let q = self.zq_div_p(c)?;
            self.insert_term(&mut out, *e, q);
        }
        Ok(out)
    }

    pub(crate) fn mod_p(&self, a: &ModelPoly) -> PerfElem {
        PerfElem::from_terms(&self.cfg, a.iter().map(|(e, c)| (*e, self.zq_mod_p(c))))
    }

    fn lift_naive(&self, x: &PerfElem) -> ModelPoly {
        let mut out = ModelPoly::new();
        for (e, c) in x.terms() {
            self.insert_term(&mut out, *e, self.zq_lift(c));
        }
        out
    }

    fn pow(&self, a: &ModelPoly, mut e: u64) -> Result<ModelPoly> {
        let mut acc: Option<ModelPoly> = None;
        let mut base = a.clone();
        while e > 0 {
            if e & 1 == 1 {
                acc = Some(match acc {
                    None => base.clone(),
                    Some(x) => self.mul(&x, &base)?,
                });
            }
            e >>= 1;
            if e > 0 {
                base = self.mul(&base, &base)?;
            }
        }
        Ok(acc.unwrap_or_else(|| {
            let mut one = ModelPoly::new();
            one.insert(Exponent::zero(), self.zq_from_u64(1));
            one
        }))
    }

    /// Teichmuller representative at level m <= n: any coefficientwise lift
    /// of the (m-1)-fold inverse Frobenius of x, raised to p^{m-1}.
    /// Independent of the choice of lift mod p^m, multiplicative by
    /// construction, and for m < n agrees with the level-n lift mod p^m.
    /// The digit-stripping loops below only consume the lift mod the
    /// precision still carried, and the lower power keeps the intermediate
    /// polynomials small (the p^{n-1}-th power of a dense digit is what
    /// blows up at p = 5, n = 4).
    pub(crate) fn teich_at(&self, x: &PerfElem, m: usize) -> Result<ModelPoly> {
        let mut w = x.clone();
        for _ in 0..m - 1 {
            w = w.frobenius_inverse()?;
        }
        let mut acc = self.lift_naive(&w);
        for _ in 0..m - 1 {
            acc = self.pow(&acc, self.cfg.p())?;
        }
        Ok(acc)
    }

    /// The model element with Witt coordinates `coords`:
    /// sum_i p^i * [coords_i^{p^{-i}}].
    pub(crate) fn to_model(&self, coords: &[PerfElem]) -> Result<ModelPoly> {
        let mut acc = ModelPoly::new();
        let mut p_power = 1u64;
        for (i, a) in coords.iter().enumerate() {
            if !a.is_zero() {
                let mut w = a.clone();
                for _ in 0..i {
                    w = w.frobenius_inverse()?;
                }
                // p^i * (level n-i lift) equals p^i * (level n lift) mod p^n.
                let t = self.teich_at(&w, self.n - i)?;
                acc = self.add(&acc, &self.scale(&t, p_power));
            }
            if i + 1 < coords.len() {
                p_power *= self.cfg.p();
            }
        }
        Ok(acc)
    }

    /// Inverts to_model: strips multiplicative digits top down. After i
    /// extractions values are carried mod p^{n-i}, which keeps every
    /// divisibility check valid.
    pub(crate) fn from_model(&self, x: ModelPoly) -> Result<Vec<PerfElem>> {
        let mut coords = Vec::with_capacity(self.n);
        let mut cur = x;
        for i in 0..self.n {
            let digit = self.mod_p(&cur);
            // Witt coordinate = digit twisted back by Frobenius^i.
            let mut a = digit.clone();
            for _ in 0..i {
                a = a.frobenius()?;
            }
            coords.push(a);
            if i + 1 < self.n {
                // Only mod p^{n-i} of the lift matters for what remains.
                let t = self.teich_at(&digit, self.n - i)?;
                let diff = self.add(&cur, &self.neg(&t));
                cur = self.div_p(&diff)?;
            }
        }
        Ok(coords)
    }
}

/// Evaluates a cached coordinate polynomial at concrete coordinates, with
/// integer coefficients reduced into the characteristic-p base.
pub fn eval_witt_poly(
    poly: &WittPoly,
    cfg: &Arc<PrimeConfig>,
    xs: &[PerfElem],
    ys: &[PerfElem],
) -> Result<PerfElem> {
    let p = cfg.p();
    let mut acc = PerfElem::zero(cfg);
    for (vars, coeff) in poly.terms() {
        let c = coeff.rem_u64(p);
        if c == 0 {
            continue;
        }
        let mut term = PerfElem::monomial(cfg, cfg.from_u64(c), Exponent::zero());
        for (v, e) in vars {
            let base = match v {
                Var::X(i) => xs
                    .get(i)
                    .ok_or_else(|| Error::invalid(format!("missing x{i} argument")))?,
                Var::Y(i) => ys
                    .get(i)
                    .ok_or_else(|| Error::invalid(format!("missing y{i} argument")))?,
            };
            term = term.mul(&base.pow(e as u64)?)?;
        }
        acc = acc.add(&term)?;
    }
    Ok(acc)
}

/// Coordinatewise evaluation of the sum polynomials: the universal-algebra
/// reference implementation used to cross-validate the model arithmetic.
pub fn witt_add_via_polys(cache: &WittPolyCache, a: &WittVec, b: &WittVec) -> Result<WittVec> {
    let mut coords = Vec::with_capacity(a.level());
    for i in 0..a.level() {
        let s = cache.sum_poly(i)?;
        coords.push(eval_witt_poly(&s, a.cfg(), a.coords(), b.coords())?);
    }
    WittVec::new(a.cfg(), coords)
}

pub fn witt_mul_via_polys(cache: &WittPolyCache, a: &WittVec, b: &WittVec) -> Result<WittVec> {
    let mut coords = Vec::with_capacity(a.level());
    for i in 0..a.level() {
        let s = cache.prod_poly(i)?;
        coords.push(eval_witt_poly(&s, a.cfg(), a.coords(), b.coords())?);
    }
    WittVec::new(a.cfg(), coords)
}

pub fn witt_neg_via_polys(cache: &WittPolyCache, a: &WittVec) -> Result<WittVec> {
    let mut coords = Vec::with_capacity(a.level());
    for i in 0..a.level() {
        let s = cache.neg_poly(i)?;
        coords.push(eval_witt_poly(&s, a.cfg(), a.coords(), &[])?);
    }
    WittVec::new(a.cfg(), coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(p: u64) -> Arc<PrimeConfig> {
        PrimeConfig::new(p, 1, None).unwrap()
    }

    fn consts(cfg: &Arc<PrimeConfig>, vals: &[u64]) -> WittVec {
        let coords = vals
            .iter()
            .map(|&v| PerfElem::monomial(cfg, cfg.from_u64(v), Exponent::zero()))
            .collect();
        WittVec::new(cfg, coords).unwrap()
    }

    #[test]
    fn one_plus_one_in_w2_f2() {
        let cfg = cfg(2);
        let one = consts(&cfg, &[1, 0]);
        let sum = one.add(&one).unwrap();
        assert_eq!(sum, consts(&cfg, &[0, 1]));
    }

    #[test]
    fn from_integer_examples() {
        let cfg2 = cfg(2);
        assert!(WittVec::from_integer(0, &cfg2, 3).unwrap().is_zero());
        assert_eq!(WittVec::from_integer(2, &cfg2, 2).unwrap(), consts(&cfg2, &[0, 1]));
        assert!(WittVec::from_integer(8, &cfg2, 3).unwrap().is_zero());
        let cfg3 = cfg(3);
        assert!(WittVec::from_integer(27, &cfg3, 3).unwrap().is_zero());
        // Matches a repeated addition chain.
        let one = WittVec::from_integer(1, &cfg3, 3).unwrap();
        let mut acc = WittVec::zero(&cfg3, 3).unwrap();
        for _ in 0..7 {
            acc = acc.add(&one).unwrap();
        }
        assert_eq!(acc, WittVec::from_integer(7, &cfg3, 3).unwrap());
    }

    #[test]
    fn teichmuller_shape_and_multiplicativity() {
        let cfg = PrimeConfig::new(3, 2, None).unwrap();
        let zero = PerfElem::zero(&cfg);
        assert!(WittVec::teichmuller(&zero, 3).unwrap().is_zero());
        let one = PerfElem::one(&cfg);
        let t1 = WittVec::teichmuller(&one, 3).unwrap();
        assert_eq!(t1, WittVec::from_integer(1, &cfg, 3).unwrap());

        let x = PerfElem::parse(&cfg, "t^(1/3) + 2").unwrap();
        let y = PerfElem::parse(&cfg, "(z)*t^(2/3) + t").unwrap();
        let lhs = WittVec::teichmuller(&x.mul(&y).unwrap(), 3).unwrap();
        let rhs = WittVec::teichmuller(&x, 3)
            .unwrap()
            .mul(&WittVec::teichmuller(&y, 3).unwrap())
            .unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn verschiebung_p_times_divide() {
        let cfg = cfg(2);
        let a = WittVec::new(
            &cfg,
            vec![
                PerfElem::parse(&cfg, "t^(1/2)").unwrap(),
                PerfElem::parse(&cfg, "1 + t").unwrap(),
                PerfElem::parse(&cfg, "t^(3/4)").unwrap(),
            ],
        )
        .unwrap();
        // p * a as a Witt-addition chain equals the closed form.
        let doubled = a.add(&a).unwrap();
        assert_eq!(doubled, a.p_times().unwrap());
        // divide_by_p inverts p_times up to the lost level.
        let back = a.p_times().unwrap().divide_by_p().unwrap();
        assert_eq!(back, a.truncate_level(2).unwrap());
        // V is additive.
        let b = WittVec::from_integer(3, &cfg, 3).unwrap();
        let lhs = a.verschiebung().unwrap().add(&b.verschiebung().unwrap()).unwrap();
        let rhs = a.add(&b).unwrap().verschiebung().unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn divide_by_p_spec_example() {
        let cfg = cfg(3);
        let a = PerfElem::parse(&cfg, "t^(1/3) + 2").unwrap();
        let v = WittVec::new(
            &cfg,
            vec![PerfElem::zero(&cfg), a.frobenius().unwrap()],
        )
        .unwrap();
        let q = v.divide_by_p().unwrap();
        assert_eq!(q, WittVec::new(&cfg, vec![a]).unwrap());

        let bad = consts(&cfg, &[1, 0]);
        assert!(bad.divide_by_p().is_err());
    }

    fn random_perf(cfg: &Arc<PrimeConfig>, rng: &mut ChaCha8Rng) -> PerfElem {
        let mut x = PerfElem::zero(cfg);
        for _ in 0..rng.gen_range(0..3) {
            let e = Exponent::new(rng.gen_range(0..8), cfg.p(), rng.gen_range(0..3)).unwrap();
            let c = cfg.from_index(rng.gen_range(0..cfg.q())).unwrap();
            x = x.add(&PerfElem::monomial(cfg, c, e)).unwrap();
        }
        x
    }

    #[test]
    fn model_matches_polynomial_evaluation() {
        for p in [2u64, 3] {
            let cfg = PrimeConfig::new(p, 1, None).unwrap();
            let cache = WittPolyCache::new(p).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7 + p);
            for n in 1..=3usize {
                for _ in 0..12 {
                    let a = WittVec::new(
                        &cfg,
                        (0..n).map(|_| random_perf(&cfg, &mut rng)).collect(),
                    )
                    .unwrap();
                    let b = WittVec::new(
                        &cfg,
                        (0..n).map(|_| random_perf(&cfg, &mut rng)).collect(),
                    )
                    .unwrap();
                    assert_eq!(a.add(&b).unwrap(), witt_add_via_polys(&cache, &a, &b).unwrap());
                    assert_eq!(a.mul(&b).unwrap(), witt_mul_via_polys(&cache, &a, &b).unwrap());
                    assert_eq!(a.neg().unwrap(), witt_neg_via_polys(&cache, &a).unwrap());
                }
            }
        }
    }

    #[test]
    fn multiplicative_identity_and_inverse_law() {
        let cfg = cfg(3);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let one = WittVec::from_integer(1, &cfg, 3).unwrap();
        for _ in 0..10 {
            let a = WittVec::new(
                &cfg,
                (0..3).map(|_| random_perf(&cfg, &mut rng)).collect(),
            )
            .unwrap();
            assert_eq!(a.mul(&one).unwrap(), a);
            assert!(a.add(&a.neg().unwrap()).unwrap().is_zero());
        }
    }

    #[test]
    fn render_parse_round_trip() {
        let cfg = PrimeConfig::new(2, 2, None).unwrap();
        let v = WittVec::new(
            &cfg,
            vec![
                PerfElem::parse(&cfg, "(z+1)*t^(1/2) + 1").unwrap(),
                PerfElem::zero(&cfg),
                PerfElem::parse(&cfg, "t^(3/4)").unwrap(),
            ],
        )
        .unwrap();
        let s = v.render();
        assert_eq!(s, "[1 + (z+1)*t^(1/2); 0; t^(3/4)]");
        assert_eq!(WittVec::parse(&cfg, &s).unwrap(), v);
    }

    #[test]
    fn level_cap_enforced() {
        let cfg = cfg(2);
        assert!(WittVec::zero(&cfg, 63).is_err());
        assert!(WittVec::zero(&cfg, 62).is_ok());
    }
}
