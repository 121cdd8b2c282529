use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::field::{FqElem, PrimeConfig};
use crate::perfect::PerfElem;
use crate::witt::WittVec;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UntiltKind {
    PPowerRoots,
    Cyclotomic,
    Abelian,
    Custom,
}

impl UntiltKind {
    pub fn label(self) -> &'static str {
        match self {
            UntiltKind::PPowerRoots => "p-power-roots",
            UntiltKind::Cyclotomic => "cyclotomic",
            UntiltKind::Abelian => "abelian",
            UntiltKind::Custom => "custom",
        }
    }
}

/// A residue-ring presentation of an untilt: a rule producing the
/// distinguished generator xi mod p^n for every level, plus the data the
/// digit algorithm needs (c_0 = lead * t^gamma).
///
/// Built-ins: p-power-roots is [t] - p; cyclotomic is sum_{i<p} [t+1]^i (the
/// p-th cyclotomic polynomial evaluated at [t+1]); abelian is the cyclotomic
/// rule over an extension field F_{p^d}. Custom takes an explicit coordinate
/// list.
#[derive(Debug)]
pub struct UntiltSpec {
    kind: UntiltKind,
    name: String,
    cfg: Arc<PrimeConfig>,
    gamma: Exponent,
    lead: FqElem,
    custom_coords: Option<Vec<PerfElem>>,
    // Generators per level, memoized: reduce consults xi(m) for every level
    // it strips, and recomputing the cyclotomic product there dominates.
    xi_cache: Mutex<BTreeMap<usize, WittVec>>,
}

impl PartialEq for UntiltSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.name == other.name
            && self.cfg == other.cfg
            && self.custom_coords == other.custom_coords
    }
}

impl UntiltSpec {
    pub fn builtin(kind: UntiltKind, cfg: &Arc<PrimeConfig>) -> Result<Arc<UntiltSpec>> {
        match kind {
            UntiltKind::Custom => Err(Error::invalid("custom untilts need explicit coordinates")),
            UntiltKind::Abelian if cfg.d() == 1 => Err(Error::invalid(
                "abelian untilt expects an extension field (d > 1); use cyclotomic for F_p",
            )),
            _ => UntiltSpec::finish(kind, kind.label().to_string(), cfg, None),
        }
    }

    /// An untilt whose generator is given by explicit Witt coordinates
    /// c_0, c_1, ...; usable up to level = number of coordinates supplied.
    pub fn custom(
        name: impl Into<String>,
        cfg: &Arc<PrimeConfig>,
        coords: Vec<PerfElem>,
    ) -> Result<Arc<UntiltSpec>> {
        if coords.len() < 2 {
            return Err(Error::invalid(
                "custom untilt needs at least 2 coordinates (c_0 and c_1)",
            ));
        }
        UntiltSpec::finish(UntiltKind::Custom, name.into(), cfg, Some(coords))
    }

    fn finish(
        kind: UntiltKind,
        name: String,
        cfg: &Arc<PrimeConfig>,
        custom_coords: Option<Vec<PerfElem>>,
    ) -> Result<Arc<UntiltSpec>> {
        let mut spec = UntiltSpec {
            kind,
            name,
            cfg: cfg.clone(),
            gamma: Exponent::one(),
            lead: cfg.one(),
            custom_coords,
            xi_cache: Mutex::new(BTreeMap::new()),
        };
        let xi2 = spec.xi(2)?;
        if !is_distinguished(&xi2)? {
            return Err(Error::invalid(format!(
                "generator of '{}' is not distinguished (need c_0 in the maximal ideal and c_1 a unit)",
                spec.name
            )));
        }
        let c0 = xi2.coord(0);
        let mut terms = c0.terms();
        let (gamma, lead) = match (terms.next(), terms.next()) {
            (Some((e, c)), None) => (*e, c.clone()),
            _ => {
                return Err(Error::unsupported(format!(
                    "generator of '{}' has c_0 = {}, but the digit algorithm needs a monomial a*t^gamma",
                    spec.name,
                    c0.render()
                )))
            }
        };
        spec.gamma = gamma;
        spec.lead = lead;
        Ok(Arc::new(spec))
    }

    pub fn kind(&self) -> UntiltKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cfg(&self) -> &Arc<PrimeConfig> {
        &self.cfg
    }

    /// Valuation of c_0; one digit spans the exponent window [0, gamma).
    pub fn gamma(&self) -> Exponent {
        self.gamma
    }

    pub fn lead(&self) -> &FqElem {
        &self.lead
    }

    /// Highest level a custom coordinate list supports; built-ins are
    /// unbounded (up to the global p^n cap).
    pub fn max_level(&self) -> Option<usize> {
        self.custom_coords.as_ref().map(|c| c.len())
    }

    /// The distinguished generator truncated to level n.
    pub fn xi(&self, n: usize) -> Result<WittVec> {
        if n == 0 {
            return Err(Error::invalid("level must be at least 1"));
        }
        if let Some(v) = self.xi_cache.lock().expect("xi cache poisoned").get(&n) {
            return Ok(v.clone());
        }
        let v = self.xi_fresh(n)?;
        self.xi_cache.lock().expect("xi cache poisoned").insert(n, v.clone());
        Ok(v)
    }

    fn xi_fresh(&self, n: usize) -> Result<WittVec> {
        match self.kind {
            UntiltKind::PPowerRoots => {
                let t = WittVec::teichmuller(&PerfElem::var_t(&self.cfg), n)?;
                t.sub(&WittVec::from_integer(self.cfg.p() as i128, &self.cfg, n)?)
            }
            UntiltKind::Cyclotomic | UntiltKind::Abelian => {
                let t1 = PerfElem::var_t(&self.cfg).add(&PerfElem::one(&self.cfg))?;
                let u = WittVec::teichmuller(&t1, n)?;
                let mut acc = WittVec::from_integer(1, &self.cfg, n)?;
                let mut upow = WittVec::from_integer(1, &self.cfg, n)?;
                for _ in 1..self.cfg.p() {
                    upow = upow.mul(&u)?;
                    acc = acc.add(&upow)?;
                }
                Ok(acc)
            }
            UntiltKind::Custom => {
                let coords = self.custom_coords.as_ref().expect("custom coords present");
                if n > coords.len() {
                    return Err(Error::invalid(format!(
                        "custom untilt '{}' provides {} coordinates; level {n} requested",
                        self.name,
                        coords.len()
                    )));
                }
                WittVec::new(&self.cfg, coords[..n].to_vec())
            }
        }
    }
}

/// c_0 in the maximal ideal and c_1 a unit; needs level >= 2 to see c_1.
pub fn is_distinguished(xi: &WittVec) -> Result<bool> {
    if xi.level() < 2 {
        return Err(Error::invalid("distinguished check needs level >= 2 (c_1 unavailable)"));
    }
    let c0_in_m = !xi.coord(0).is_unit();
    Ok(c0_in_m && xi.coord(1).is_unit())
}

/// Applies the residue map coordinatewise and reports whether the image is a
/// unit multiple of p in W_n(F_q) (first coordinate zero, second a unit).
pub fn witt_res_check(xi: &WittVec) -> Result<(WittVec, bool)> {
    let res = xi.residue_coordinatewise()?;
    let unit_multiple_of_p = res.coord(0).is_zero()
        && res.level() >= 2
        && !res.coord(1).is_zero();
    Ok((res, unit_multiple_of_p))
}

/// Canonical residue-ring element: n digits, each a PerfElem supported on
/// exponents in [0, gamma). Two values with equal fields are equal in
/// O_K/(p^n); reduce makes this form unique (tested, not proved in-code).
#[derive(Clone, Debug)]
pub struct Digits {
    untilt: Arc<UntiltSpec>,
    digits: Vec<PerfElem>,
}

impl PartialEq for Digits {
    fn eq(&self, other: &Self) -> bool {
        self.untilt == other.untilt && self.digits == other.digits
    }
}

impl Eq for Digits {}

impl Digits {
    pub fn untilt(&self) -> &Arc<UntiltSpec> {
        &self.untilt
    }

    pub fn level(&self) -> usize {
        self.digits.len()
    }

    pub fn digits(&self) -> &[PerfElem] {
        &self.digits
    }

    pub fn digit(&self, i: usize) -> &PerfElem {
        &self.digits[i]
    }

    pub fn is_zero(&self) -> bool {
        self.digits.iter().all(|d| d.is_zero())
    }

    pub fn zero(untilt: &Arc<UntiltSpec>, n: usize) -> Result<Digits> {
        let cfg = untilt.cfg().clone();
        let _ = untilt.xi(n)?;
        Ok(Digits { untilt: untilt.clone(), digits: vec![PerfElem::zero(&cfg); n] })
    }

    pub fn one(untilt: &Arc<UntiltSpec>, n: usize) -> Result<Digits> {
        let mut d = Digits::zero(untilt, n)?;
        d.digits[0] = PerfElem::one(untilt.cfg());
        Ok(d)
    }

    pub fn from_integer(m: i128, untilt: &Arc<UntiltSpec>, n: usize) -> Result<Digits> {
        reduce(&WittVec::from_integer(m, untilt.cfg(), n)?, untilt)
    }

    /// Sum_i p^i * [b_i]: the standard lift back to W_n.
    pub fn lift(&self) -> Result<WittVec> {
        let n = self.digits.len();
        let cfg = self.untilt.cfg();
        let mut acc = WittVec::zero(cfg, n)?;
        for (i, b) in self.digits.iter().enumerate() {
            if b.is_zero() {
                continue;
            }
            let mut term = WittVec::teichmuller(b, n)?;
            for _ in 0..i {
                term = term.p_times()?;
            }
            acc = acc.add(&term)?;
        }
        Ok(acc)
    }

    /// `⟨b0 | b1 | ...⟩ @ name, n=..` with digits in the perfect-ring
    /// grammar.
    pub fn render(&self) -> String {
        let mut out = String::from("⟨");
        for (i, d) in self.digits.iter().enumerate() {
            if i > 0 {
                out.push_str(" | ");
            }
            out.push_str(&d.render());
        }
        let _ = write!(out, "⟩ @ {}, n={}", self.untilt.name(), self.digits.len());
        out
    }
}

fn check_same_context(a: &Digits, b: &Digits) -> Result<()> {
    if a.untilt != b.untilt {
        return Err(Error::invalid("digit operands belong to different untilts"));
    }
    if a.digits.len() != b.digits.len() {
        return Err(Error::invalid(format!(
            "digit level mismatch: {} vs {}",
            a.digits.len(),
            b.digits.len()
        )));
    }
    Ok(())
}

/// The digit normal form of x in W_n(O_F)/(xi): strips one multiplicative
/// digit per level. Each step is exact; the first coordinate of the
/// remainder vanishes identically (checked).
pub fn reduce(x: &WittVec, untilt: &Arc<UntiltSpec>) -> Result<Digits> {
    Ok(reduce_inner(x, untilt, false)?.0)
}

/// reduce plus the quotient q with x = lift(digits) + xi * q in W_n;
/// the identity is exact at level n (tested).
pub fn reduce_with_quotient(x: &WittVec, untilt: &Arc<UntiltSpec>) -> Result<(Digits, WittVec)> {
    let (d, q) = reduce_inner(x, untilt, true)?;
    Ok((d, q.expect("quotient requested")))
}

fn reduce_inner(
    x: &WittVec,
    untilt: &Arc<UntiltSpec>,
    want_quotient: bool,
) -> Result<(Digits, Option<WittVec>)> {
    if x.cfg() != untilt.cfg() {
        return Err(Error::invalid("value and untilt use different prime configurations"));
    }
    let n = x.level();
    let ctx = ModelCtx::new(untilt.cfg(), n)?;
    let cur = ctx.to_model(x.coords())?;
    reduce_model(&ctx, cur, untilt, n, want_quotient)
}

/// The digit-stripping loop, run entirely inside one model context. After m
/// strips the carried values are correct mod p^{n-m}, which every step here
/// consumes at most; the generator's level-n model serves all levels for the
/// same reason.
fn reduce_model(
    ctx: &ModelCtx,
    mut cur: ModelPoly,
    untilt: &Arc<UntiltSpec>,
    n: usize,
    want_quotient: bool,
) -> Result<(Digits, Option<WittVec>)> {
    let gamma = untilt.gamma();
    let lead = untilt.lead().clone();
    let xi_model = ctx.to_model(untilt.xi(n)?.coords())?;
    let mut digits = Vec::with_capacity(n);
    let mut quotient_digits = Vec::with_capacity(n);
    for m in (1..=n).rev() {
        let c0 = ctx.mod_p(&cur);
        let (b, s) = c0.split_mod_monomial(&lead, &gamma)?;
        digits.push(b.clone());
        if want_quotient {
            quotient_digits.push(s.clone());
        }
        if m == 1 {
            break;
        }
        let tb = ctx.teich_at(&b, m)?;
        let ts = ctx.teich_at(&s, m)?;
        let sub = ctx.add(&tb, &ctx.mul(&xi_model, &ts)?);
        let z = ctx.add(&cur, &ctx.neg(&sub));
        if !ctx.mod_p(&z).is_zero() {
            return Err(Error::domain(
                "digit reduction invariant failed: remainder has nonzero first coordinate",
            ));
        }
        cur = ctx.div_p(&z)?;
    }
    let d = Digits { untilt: untilt.clone(), digits };
    let q = if want_quotient {
        let cfg = untilt.cfg();
        let mut acc = WittVec::zero(cfg, n)?;
        for (i, s) in quotient_digits.iter().enumerate() {
            if s.is_zero() {
                continue;
            }
            let mut term = WittVec::teichmuller(s, n)?;
            for _ in 0..i {
                term = term.p_times()?;
            }
            acc = acc.add(&term)?;
        }
        Some(acc)
    } else {
        None
    };
    Ok((d, q))
}

/// Sum_i p^i * [b_i] as a model element: the digit lift without leaving the
/// context. Under the p^i factor the level-(n-i) representative suffices.
fn lift_model(ctx: &ModelCtx, digits: &[PerfElem], n: usize) -> Result<ModelPoly> {
    let mut acc = ModelPoly::new();
    let mut p_power = 1u64;
    for (i, b) in digits.iter().enumerate() {
        if !b.is_zero() {
            let t = ctx.teich_at(b, n - i)?;
            acc = ctx.add(&acc, &ctx.scale(&t, p_power));
        }
        if i + 1 < n {
            p_power *= ctx.p();
        }
    }
    Ok(acc)
}

/// theta([x]): the multiplicative sharp map landing in the digit ring.
pub fn sharp(x: &PerfElem, untilt: &Arc<UntiltSpec>, n: usize) -> Result<Digits> {
    let ctx = ModelCtx::new(untilt.cfg(), n)?;
    let cur = ctx.teich_at(x, n)?;
    Ok(reduce_model(&ctx, cur, untilt, n, false)?.0)
}

fn digit_op(
    a: &Digits,
    b: &Digits,
    op: impl FnOnce(&ModelCtx, &ModelPoly, &ModelPoly) -> Result<ModelPoly>,
) -> Result<Digits> {
    check_same_context(a, b)?;
    let n = a.level();
    let ctx = ModelCtx::new(a.untilt.cfg(), n)?;
    let ma = lift_model(&ctx, &a.digits, n)?;
    let mb = lift_model(&ctx, &b.digits, n)?;
    let m = op(&ctx, &ma, &mb)?;
    Ok(reduce_model(&ctx, m, &a.untilt, n, false)?.0)
}

pub fn digit_add(a: &Digits, b: &Digits) -> Result<Digits> {
    digit_op(a, b, |ctx, x, y| Ok(ctx.add(x, y)))
}

pub fn digit_sub(a: &Digits, b: &Digits) -> Result<Digits> {
    digit_op(a, b, |ctx, x, y| Ok(ctx.add(x, &ctx.neg(y))))
}

pub fn digit_mul(a: &Digits, b: &Digits) -> Result<Digits> {
    digit_op(a, b, |ctx, x, y| ctx.mul(x, y))
}

pub fn digit_neg(a: &Digits) -> Result<Digits> {
    let n = a.level();
    let ctx = ModelCtx::new(a.untilt.cfg(), n)?;
    let ma = lift_model(&ctx, &a.digits, n)?;
    Ok(reduce_model(&ctx, ctx.neg(&ma), &a.untilt, n, false)?.0)
}

pub fn digit_pow(a: &Digits, e: u64) -> Result<Digits> {
    let mut acc = Digits::one(&a.untilt, a.level())?;
    let mut base = a.clone();
    let mut rest = e;
    while rest > 0 {
        if rest & 1 == 1 {
            acc = digit_mul(&acc, &base)?;
        }
        rest >>= 1;
        if rest > 0 {
            base = digit_mul(&base, &base)?;
        }
    }
    Ok(acc)
}

/// Inverse of a unit in O_K/(p^n), in two stages: a geometric series mod
/// t^gamma inverts the leading digit, then a finite p-adic series kills the
/// remaining error (it is p times something, so the series stops at n).
pub fn digit_inv(a: &Digits) -> Result<Digits> {
    if a.digit(0).residue().is_zero() {
        return Err(Error::domain(
            "digit inversion of a non-unit (the element lies in the maximal ideal)",
        ));
    }
    let n = a.level();
    let gamma = a.untilt.gamma();
    let y0 = a.digit(0).inverse_mod(&gamma)?;
    let y_sharp = sharp(&y0, &a.untilt, n)?;
    let one = Digits::one(&a.untilt, n)?;
    // a * [y0] = 1 + e with e a multiple of p, hence nilpotent of order <= n.
    let e = digit_sub(&digit_mul(a, &y_sharp)?, &one)?;
    let mut acc = one.clone();
    let mut pw = one.clone();
    for j in 1..n {
        pw = digit_mul(&pw, &e)?;
        let term = if j % 2 == 1 { digit_neg(&pw)? } else { pw.clone() };
        acc = digit_add(&acc, &term)?;
    }
    let inv = digit_mul(&y_sharp, &acc)?;
    let check = digit_mul(a, &inv)?;
    if check != one {
        return Err(Error::domain("digit inversion self-check failed"));
    }
    Ok(inv)
}

/// min_i (valuation(b_i) + i*gamma) over nonzero digits; the minimum is
/// attained once because each digit valuation lies in [0, gamma). None is
/// +infinity (the zero class).
pub fn valuation_of_digits(a: &Digits) -> Option<Exponent> {
    let p = a.untilt.cfg().p();
    let gamma = a.untilt.gamma();
    let mut best: Option<Exponent> = None;
    for (i, b) in a.digits.iter().enumerate() {
        if let Some(v) = b.valuation() {
            let total = gamma
                .scale_int(i as u64, p)
                .and_then(|g| v.add(&g, p))
                .expect("digit valuations stay in range");
            best = Some(match best {
                None => total,
                Some(cur) => cur.min(total),
            });
        }
    }
    best
}

pub fn in_maximal_ideal(a: &Digits) -> bool {
    a.digit(0).residue().is_zero()
}

/// Distance between two untilts at working precision n, in -log_p scale
/// under the embedding w(t) = 1: the valuation of theta_y(xi_x), or a
/// lower-bound marker when all n digits vanish.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Distance {
    Finite(Exponent),
    AtLeast(Exponent),
}

pub fn distance(x: &Arc<UntiltSpec>, y: &Arc<UntiltSpec>, n: usize) -> Result<Distance> {
    if x.cfg() != y.cfg() {
        return Err(Error::invalid("untilts use different prime configurations"));
    }
    let xi_x = x.xi(n)?;
    let d = reduce(&xi_x, y)?;
    match valuation_of_digits(&d) {
        Some(v) => Ok(Distance::Finite(v)),
        None => {
            let p = x.cfg().p();
            Ok(Distance::AtLeast(y.gamma().scale_int(n as u64, p)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(p: u64) -> Arc<PrimeConfig> {
        PrimeConfig::new(p, 1, None).unwrap()
    }

    fn ppr(p: u64) -> Arc<UntiltSpec> {
        UntiltSpec::builtin(UntiltKind::PPowerRoots, &cfg(p)).unwrap()
    }

    fn cyc(p: u64) -> Arc<UntiltSpec> {
        UntiltSpec::builtin(UntiltKind::Cyclotomic, &cfg(p)).unwrap()
    }

    fn digits_from_strs(u: &Arc<UntiltSpec>, strs: &[&str]) -> Digits {
        let ds: Vec<PerfElem> =
            strs.iter().map(|s| PerfElem::parse(u.cfg(), s).unwrap()).collect();
        Digits { untilt: u.clone(), digits: ds }
    }

    #[test]
    #[ignore]
    fn cyclotomic_cost_probe() {
        let u = cyc(5);
        let n = 4;
        let t = std::time::Instant::now();
        let xi = u.xi(n).unwrap();
        println!("xi(4): {:.2}s", t.elapsed().as_secs_f64());
        let t = std::time::Instant::now();
        let (_res, _flag) = witt_res_check(&xi).unwrap();
        println!("witt_res_check: {:.2}s", t.elapsed().as_secs_f64());
        let t = std::time::Instant::now();
        let r = reduce(&xi, &u).unwrap();
        println!("reduce(xi): {:.2}s (zero={})", t.elapsed().as_secs_f64(), r.is_zero());
        let t = std::time::Instant::now();
        let t1 = PerfElem::var_t(u.cfg()).add(&PerfElem::one(u.cfg())).unwrap();
        let zeta = sharp(&t1, &u, n).unwrap();
        println!("sharp(t+1): {:.2}s", t.elapsed().as_secs_f64());
        let t = std::time::Instant::now();
        let mut pw = zeta.clone();
        for _ in 1..5 {
            pw = digit_mul(&pw, &zeta).unwrap();
        }
        println!("zeta^5: {:.2}s (one={})", t.elapsed().as_secs_f64(), pw == Digits::one(&u, n).unwrap());
    }

    #[test]
    fn distinguished_checks() {
        let cfg = cfg(2);
        let p_vec = WittVec::from_integer(2, &cfg, 3).unwrap();
        assert!(is_distinguished(&p_vec).unwrap());
        let t_only = WittVec::teichmuller(&PerfElem::var_t(&cfg), 3).unwrap();
        assert!(!is_distinguished(&t_only).unwrap());
        let u = ppr(2);
        assert!(is_distinguished(&u.xi(3).unwrap()).unwrap());
        assert!(is_distinguished(&WittVec::from_integer(2, &cfg, 1).unwrap()).is_err());
    }

    #[test]
    fn cyclotomic_c0_is_monomial() {
        for p in [2u64, 3, 5] {
            let u = cyc(p);
            assert_eq!(u.gamma(), Exponent::integer(p - 1));
            assert_eq!(u.lead(), &u.cfg().one());
            // Witt coordinate 0 of the generator is exactly t^{p-1}.
            let xi = u.xi(2).unwrap();
            let want = PerfElem::monomial(u.cfg(), u.cfg().one(), Exponent::integer(p - 1));
            assert_eq!(xi.coord(0), &want);
        }
    }

    #[test]
    fn res_check_examples() {
        let u = cyc(3);
        let (res, unit_p) = witt_res_check(&u.xi(2).unwrap()).unwrap();
        assert!(unit_p);
        assert_eq!(res, WittVec::from_integer(3, u.cfg(), 2).unwrap());

        let u = ppr(2);
        let (res, unit_p) = witt_res_check(&u.xi(2).unwrap()).unwrap();
        assert!(unit_p);
        // W(res)([t] - p) = -p.
        assert_eq!(res, WittVec::from_integer(-2, u.cfg(), 2).unwrap());

        let cfg2 = cfg(2);
        let t_only = WittVec::teichmuller(&PerfElem::var_t(&cfg2), 2).unwrap();
        let (res, unit_p) = witt_res_check(&t_only).unwrap();
        assert!(!unit_p);
        assert!(res.is_zero());
    }

    #[test]
    fn t_sharp_is_p() {
        let u = ppr(2);
        let t = WittVec::teichmuller(&PerfElem::var_t(u.cfg()), 2).unwrap();
        let d = reduce(&t, &u).unwrap();
        assert_eq!(d, digits_from_strs(&u, &["0", "1"]));
        assert_eq!(d, Digits::from_integer(2, &u, 2).unwrap());
    }

    #[test]
    fn reduce_p_has_digits_zero_one() {
        for p in [2u64, 3] {
            for u in [ppr(p), cyc(p)] {
                let d = Digits::from_integer(p as i128, &u, 2).unwrap();
                assert_eq!(d, digits_from_strs(&u, &["0", "1"]));
                assert!(reduce(&u.xi(3).unwrap(), &u).unwrap().is_zero());
            }
        }
    }

    #[test]
    fn cyclotomic_p2_sharp_values() {
        let u = cyc(2);
        let t1 = PerfElem::parse(u.cfg(), "1 + t").unwrap();
        let s = sharp(&t1, &u, 2).unwrap();
        assert_eq!(s, digits_from_strs(&u, &["1", "1"]));
        // (t+1)^sharp is a primitive square root of unity: -1 mod 4.
        let one = Digits::one(&u, 2).unwrap();
        assert_ne!(s, one);
        assert_eq!(digit_pow(&s, 2).unwrap(), one);
        assert!(digit_add(&s, &one).unwrap().is_zero());
    }

    #[test]
    fn sqrt_of_p_squares_to_p() {
        let u = ppr(2);
        let half_t = PerfElem::parse(u.cfg(), "t^(1/2)").unwrap();
        let s = sharp(&half_t, &u, 2).unwrap();
        assert_eq!(s, digits_from_strs(&u, &["t^(1/2)", "0"]));
        let sq = digit_mul(&s, &s).unwrap();
        assert_eq!(sq, Digits::from_integer(2, &u, 2).unwrap());
        // Valuation agrees with the tilt side: v(x^sharp) = w(x).
        assert_eq!(valuation_of_digits(&s).unwrap(), Exponent::new(1, 2, 1).unwrap());
    }

    #[test]
    fn valuation_of_p_is_gamma() {
        for p in [2u64, 3, 5] {
            for u in [ppr(p), cyc(p)] {
                let d = Digits::from_integer(p as i128, &u, 3).unwrap();
                assert_eq!(valuation_of_digits(&d).unwrap(), u.gamma());
            }
        }
    }

    #[test]
    fn distance_between_builtin_untilts() {
        let x = ppr(2);
        let y = cyc(2);
        let d = distance(&x, &y, 2).unwrap();
        assert_eq!(d, Distance::Finite(Exponent::new(3, 2, 1).unwrap()));
        // Self-distance is below precision at every level.
        assert_eq!(
            distance(&x, &x, 3).unwrap(),
            Distance::AtLeast(Exponent::integer(3))
        );
        let y3 = cyc(3);
        let x3 = ppr(3);
        match distance(&x3, &y3, 2).unwrap() {
            Distance::Finite(v) => assert!(v.cmp_int(0) == std::cmp::Ordering::Greater),
            Distance::AtLeast(_) => panic!("expected finite distance"),
        }
    }

    #[test]
    fn reduce_well_definedness_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for p in [2u64, 3] {
            for u in [ppr(p), cyc(p)] {
                let cfg = u.cfg().clone();
                for n in 2..=3usize {
                    for _ in 0..8 {
                        let rand_coords = |rng: &mut ChaCha8Rng| -> Vec<PerfElem> {
                            (0..n)
                                .map(|_| {
                                    let mut x = PerfElem::zero(&cfg);
                                    for _ in 0..rng.gen_range(0..3) {
                                        let e = Exponent::new(
                                            rng.gen_range(0..6),
                                            p,
                                            rng.gen_range(0..3),
                                        )
                                        .unwrap();
                                        let c = cfg.from_index(rng.gen_range(0..cfg.q())).unwrap();
                                        x = x.add(&PerfElem::monomial(&cfg, c, e)).unwrap();
                                    }
                                    x
                                })
                                .collect()
                        };
                        let x = WittVec::new(&cfg, rand_coords(&mut rng)).unwrap();
                        let eta = WittVec::new(&cfg, rand_coords(&mut rng)).unwrap();
                        let shifted = x.add(&u.xi(n).unwrap().mul(&eta).unwrap()).unwrap();
                        let dx = reduce(&x, &u).unwrap();
                        assert_eq!(dx, reduce(&shifted, &u).unwrap());
                        // Round-trip through the lift.
                        assert_eq!(reduce(&dx.lift().unwrap(), &u).unwrap(), dx);
                        // Quotient identity: x = lift(digits) + xi * q.
                        let (d2, q) = reduce_with_quotient(&x, &u).unwrap();
                        assert_eq!(d2, dx);
                        let recon =
                            d2.lift().unwrap().add(&u.xi(n).unwrap().mul(&q).unwrap()).unwrap();
                        assert_eq!(recon, x);
                    }
                }
            }
        }
    }

    #[test]
    fn digit_ring_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = cyc(3);
        let cfg = u.cfg().clone();
        let n = 3;
        let one = Digits::one(&u, n).unwrap();
        for _ in 0..6 {
            let x = WittVec::new(
                &cfg,
                (0..n)
                    .map(|_| {
                        let e = Exponent::new(rng.gen_range(0..4), 3, rng.gen_range(0..2)).unwrap();
                        let c = cfg.from_index(rng.gen_range(0..3)).unwrap();
                        PerfElem::monomial(&cfg, c, e)
                    })
                    .collect(),
            )
            .unwrap();
            let d = reduce(&x, &u).unwrap();
            assert!(digit_add(&d, &digit_neg(&d).unwrap()).unwrap().is_zero());
            assert_eq!(digit_mul(&d, &one).unwrap(), d);
            if !in_maximal_ideal(&d) {
                let inv = digit_inv(&d).unwrap();
                assert_eq!(digit_mul(&d, &inv).unwrap(), one);
            }
        }
        let t_digit = sharp(&PerfElem::var_t(&cfg), &u, n).unwrap();
        assert!(in_maximal_ideal(&t_digit));
        assert!(digit_inv(&t_digit).is_err());
    }

    #[test]
    fn coherence_across_levels() {
        for p in [2u64, 3] {
            for u in [ppr(p), cyc(p)] {
                let xi4 = u.xi(4).unwrap();
                for m in 2..4 {
                    assert_eq!(xi4.truncate_level(m).unwrap(), u.xi(m).unwrap());
                }
                // Digit reduction truncates consistently too.
                let root_t = PerfElem::monomial(
                    u.cfg(),
                    u.cfg().one(),
                    Exponent::new(1, p, 1).unwrap(),
                );
                let x = WittVec::teichmuller(
                    &PerfElem::one(u.cfg()).add(&root_t).unwrap(),
                    4,
                )
                .unwrap();
                let d4 = reduce(&x, &u).unwrap();
                let d2 = reduce(&x.truncate_level(2).unwrap(), &u).unwrap();
                assert_eq!(&d4.digits()[..2], d2.digits());
            }
        }
    }

    #[test]
    fn custom_untilt_round_trip() {
        let cfg = cfg(2);
        let u = ppr(2);
        // Rebuild p-power-roots as a custom coordinate list.
        let xi3 = u.xi(3).unwrap();
        let custom = UntiltSpec::custom("mine", &cfg, xi3.coords().to_vec()).unwrap();
        assert_eq!(custom.gamma(), Exponent::one());
        let t = WittVec::teichmuller(&PerfElem::var_t(&cfg), 3).unwrap();
        assert_eq!(
            reduce(&t, &custom).unwrap().digits(),
            reduce(&t, &u).unwrap().digits()
        );
        assert!(custom.xi(4).is_err());

        // Non-monomial c_0 is rejected.
        let bad = UntiltSpec::custom(
            "bad",
            &cfg,
            vec![
                PerfElem::parse(&cfg, "t + t^(2)").unwrap(),
                PerfElem::one(&cfg),
            ],
        );
        assert!(bad.is_err());
        // Non-distinguished is rejected.
        let nd = UntiltSpec::custom(
            "nd",
            &cfg,
            vec![PerfElem::var_t(&cfg), PerfElem::var_t(&cfg)],
        );
        assert!(nd.is_err());
    }

    #[test]
    fn digits_render_format() {
        let u = ppr(2);
        let d = Digits::from_integer(2, &u, 2).unwrap();
        assert_eq!(d.render(), "⟨0 | 1⟩ @ p-power-roots, n=2");
    }
}
