use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::field::{FqElem, PrimeConfig};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

/// A finitely supported element of F_q[t^{1/p^infinity}]: a map from
/// canonical exponents to nonzero coefficients. The completed perfectoid
/// field is only ever touched through this dense subring, so every
/// operation here is exact.
#[derive(Clone, Debug)]
pub struct PerfElem {
    cfg: Arc<PrimeConfig>,
    terms: BTreeMap<Exponent, FqElem>,
}

impl PartialEq for PerfElem {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.terms == other.terms
    }
}

impl Eq for PerfElem {}

impl PerfElem {
    pub fn zero(cfg: &Arc<PrimeConfig>) -> PerfElem {
        PerfElem { cfg: cfg.clone(), terms: BTreeMap::new() }
    }

    pub fn one(cfg: &Arc<PrimeConfig>) -> PerfElem {
        PerfElem::monomial(cfg, cfg.one(), Exponent::zero())
    }

    pub fn var_t(cfg: &Arc<PrimeConfig>) -> PerfElem {
        PerfElem::monomial(cfg, cfg.one(), Exponent::one())
    }

    pub fn monomial(cfg: &Arc<PrimeConfig>, coeff: FqElem, exp: Exponent) -> PerfElem {
        let mut terms = BTreeMap::new();
        if !coeff.is_zero() {
            terms.insert(exp, coeff);
        }
        PerfElem { cfg: cfg.clone(), terms }
    }

    pub fn from_terms(
        cfg: &Arc<PrimeConfig>,
        entries: impl IntoIterator<Item = (Exponent, FqElem)>,
    ) -> PerfElem {
        let mut out = PerfElem::zero(cfg);
        for (e, c) in entries {
            out.add_term(e, c);
        }
        out
    }

    pub fn cfg(&self) -> &Arc<PrimeConfig> {
        &self.cfg
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponent, &FqElem)> {
        self.terms.iter()
    }

    pub fn support_len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff_at(&self, e: &Exponent) -> FqElem {
        self.terms.get(e).cloned().unwrap_or_else(|| self.cfg.zero())
    }

    fn add_term(&mut self, e: Exponent, c: FqElem) {
        if c.is_zero() {
            return;
        }
        match self.terms.remove(&e) {
            None => {
                self.terms.insert(e, c);
            }
            Some(old) => {
                let s = self.cfg.add_fq(&old, &c);
                if !s.is_zero() {
                    self.terms.insert(e, s);
                }
            }
        }
    }

    fn check_cfg(&self, other: &PerfElem) -> Result<()> {
        if self.cfg == other.cfg {
            Ok(())
        } else {
            Err(Error::invalid("operands built from different prime configurations"))
        }
    }

    pub fn add(&self, other: &PerfElem) -> Result<PerfElem> {
        self.check_cfg(other)?;
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(*e, c.clone());
        }
        Ok(out)
    }

    pub fn neg(&self) -> PerfElem {
        let terms = self.terms.iter().map(|(e, c)| (*e, self.cfg.neg_fq(c))).collect();
        PerfElem { cfg: self.cfg.clone(), terms }
    }

    pub fn sub(&self, other: &PerfElem) -> Result<PerfElem> {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &PerfElem) -> Result<PerfElem> {
        self.check_cfg(other)?;
        let p = self.cfg.p();
        let mut out = PerfElem::zero(&self.cfg);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e = e1.add(e2, p)?;
                out.add_term(e, self.cfg.mul_fq(c1, c2));
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: &FqElem) -> PerfElem {
        let mut out = PerfElem::zero(&self.cfg);
        for (e, c0) in &self.terms {
            out.add_term(*e, self.cfg.mul_fq(c0, c));
        }
        out
    }

    /// x^e by base-p expansion: x^e = prod_j frobenius^j(x)^{digit_j}, which
    /// keeps intermediate supports small in characteristic p.
    pub fn pow(&self, e: u64) -> Result<PerfElem> {
        let p = self.cfg.p();
        let mut digits = Vec::new();
        let mut rest = e;
        while rest > 0 {
            digits.push(rest % p);
            rest /= p;
        }
        let mut acc = PerfElem::one(&self.cfg);
        let mut base = self.clone();
        for (j, &dig) in digits.iter().enumerate() {
            for _ in 0..dig {
                acc = acc.mul(&base)?;
            }
            if j + 1 < digits.len() {
                base = base.frobenius()?;
            }
        }
        Ok(acc)
    }

    pub fn frobenius(&self) -> Result<PerfElem> {
        let p = self.cfg.p();
        let mut out = PerfElem::zero(&self.cfg);
        for (e, c) in &self.terms {
            out.add_term(e.mul_p(p)?, self.cfg.frobenius_fq(c));
        }
        Ok(out)
    }

    pub fn frobenius_inverse(&self) -> Result<PerfElem> {
        let p = self.cfg.p();
        let mut out = PerfElem::zero(&self.cfg);
        for (e, c) in &self.terms {
            out.add_term(e.div_p(p)?, self.cfg.frobenius_inv_fq(c));
        }
        Ok(out)
    }

    /// Minimum exponent of the support; None encodes +infinity (the zero
    /// element).
    pub fn valuation(&self) -> Option<Exponent> {
        self.terms.keys().next().copied()
    }

    pub fn residue(&self) -> FqElem {
        self.coeff_at(&Exponent::zero())
    }

    pub fn is_unit(&self) -> bool {
        !self.residue().is_zero()
    }

    /// x = b + a*t^gamma*s with supp(b) strictly below gamma; the pair is
    /// unique because exponents partition into [0, gamma) and [gamma, inf).
    pub fn split_mod_monomial(&self, a: &FqElem, gamma: &Exponent) -> Result<(PerfElem, PerfElem)> {
        if a.is_zero() {
            return Err(Error::invalid("split coefficient must be nonzero"));
        }
        if gamma.is_zero() {
            return Err(Error::invalid("split exponent must be positive"));
        }
        let p = self.cfg.p();
        let a_inv = self.cfg.inv_fq(a)?;
        let mut b = PerfElem::zero(&self.cfg);
        let mut s = PerfElem::zero(&self.cfg);
        for (e, c) in &self.terms {
            if e < gamma {
                b.add_term(*e, c.clone());
            } else {
                s.add_term(e.sub(gamma, p)?, self.cfg.mul_fq(c, &a_inv));
            }
        }
        Ok((b, s))
    }

    /// Drops all terms with exponent >= gamma (the canonical representative
    /// of x modulo the ideal generated by t^gamma).
    pub fn truncate(&self, gamma: &Exponent) -> PerfElem {
        let terms = self
            .terms
            .iter()
            .filter(|(e, _)| *e < gamma)
            .map(|(e, c)| (*e, c.clone()))
            .collect();
        PerfElem { cfg: self.cfg.clone(), terms }
    }

    /// The endomorphism t -> t^q for positive rational q with p-power
    /// denominator; a ring map fixing F_q.
    pub fn rescale(&self, q: &Exponent) -> Result<PerfElem> {
        if q.is_zero() {
            return Err(Error::invalid("rescale exponent must be positive"));
        }
        let p = self.cfg.p();
        let mut out = PerfElem::zero(&self.cfg);
        for (e, c) in &self.terms {
            out.add_term(e.mul(q, p)?, c.clone());
        }
        Ok(out)
    }

    /// Multiplicative inverse modulo t^gamma for units: the finite geometric
    /// series (1 - w)^{-1} = sum w^j truncated once w^j vanishes below gamma.
    pub fn inverse_mod(&self, gamma: &Exponent) -> Result<PerfElem> {
        let r = self.residue();
        if r.is_zero() {
            return Err(Error::domain("inverse of a non-unit"));
        }
        let r_inv = self.cfg.inv_fq(&r)?;
        // self = r * (1 - w) with valuation(w) > 0.
        let unit_part = self.scale(&r_inv);
        let w = PerfElem::one(&self.cfg).sub(&unit_part)?;
        let mut acc = PerfElem::one(&self.cfg);
        let mut pw = PerfElem::one(&self.cfg);
        loop {
            pw = pw.mul(&w)?.truncate(gamma);
            if pw.is_zero() {
                break;
            }
            acc = acc.add(&pw)?;
        }
        Ok(acc.scale(&r_inv).truncate(gamma))
    }

    /// Renders in the canonical grammar: ascending exponents, coefficient 1
    /// omitted before a t-power, non-constant coefficients parenthesized,
    /// exponents always as t^(num/den).
    pub fn render(&self) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (e, c) in &self.terms {
            if !out.is_empty() {
                out.push_str(" + ");
            }
            let coeff_str = self.cfg.format_fq(c);
            let is_plain_int = coeff_str.chars().all(|ch| ch.is_ascii_digit());
            if e.is_zero() {
                if is_plain_int {
                    out.push_str(&coeff_str);
                } else {
                    let _ = write!(out, "({coeff_str})");
                }
                continue;
            }
            if coeff_str != "1" {
                if is_plain_int {
                    let _ = write!(out, "{coeff_str}*");
                } else {
                    let _ = write!(out, "({coeff_str})*");
                }
            }
            let _ = write!(out, "t^({}/{})", e.num(), e.den());
        }
        out
    }

    /// Parses the grammar emitted by `render`, leniently: unreduced
    /// exponents, bare `t`, integer exponents like t^(2), and unparenthesized
    /// single-factor coefficients are all accepted.
    pub fn parse(cfg: &Arc<PrimeConfig>, input: &str) -> Result<PerfElem> {
        let compact: String = input.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(Error::parse("empty element"));
        }
        let mut out = PerfElem::zero(cfg);
        for piece in split_top_level(&compact, '+') {
            if piece.is_empty() {
                return Err(Error::parse(format!("empty term in '{input}'")));
            }
            let (exp, coeff) = parse_term(cfg, piece)?;
            out.add_term(exp, coeff);
        }
        Ok(out)
    }
}

/// Splits on `sep` at parenthesis depth zero.
fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            c if c == sep && depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

fn parse_term(cfg: &Arc<PrimeConfig>, term: &str) -> Result<(Exponent, FqElem)> {
    let mut coeff = cfg.one();
    let mut exp: Option<Exponent> = None;
    for factor in split_top_level(term, '*') {
        if factor.is_empty() {
            return Err(Error::parse(format!("empty factor in '{term}'")));
        }
        if factor == "t" || factor.starts_with("t^") {
            if exp.is_some() {
                return Err(Error::parse(format!("repeated t-power in '{term}'")));
            }
            exp = Some(parse_t_power(cfg, factor)?);
        } else if let Some(inner) = factor.strip_prefix('(') {
            let inner = inner
                .strip_suffix(')')
                .ok_or_else(|| Error::parse(format!("unbalanced parentheses in '{term}'")))?;
            coeff = cfg.mul_fq(&coeff, &cfg.parse_fq(inner)?);
        } else {
            coeff = cfg.mul_fq(&coeff, &cfg.parse_fq(factor)?);
        }
    }
    Ok((exp.unwrap_or_else(Exponent::zero), coeff))
}

fn parse_t_power(cfg: &Arc<PrimeConfig>, factor: &str) -> Result<Exponent> {
    if factor == "t" {
        return Ok(Exponent::one());
    }
    let body = factor
        .strip_prefix("t^(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| Error::parse(format!("bad t-power '{factor}' (expected t^(num/den))")))?;
    match body.split_once('/') {
        Some((n, d)) => {
            let num: u64 = n.parse().map_err(|_| Error::parse(format!("bad numerator '{n}'")))?;
            let den: u64 =
                d.parse().map_err(|_| Error::parse(format!("bad denominator '{d}'")))?;
            Exponent::from_fraction(num, den, cfg.p())
        }
        None => {
            let num: u64 =
                body.parse().map_err(|_| Error::parse(format!("bad exponent '{body}'")))?;
            Ok(Exponent::integer(num))
        }
    }
}

/// A fraction num/den of finitely supported elements, den != 0. This is the
/// smallest field containing the perfect subring, enough to talk about
/// elements of negative valuation without ever completing anything.
#[derive(Clone, Debug)]
pub struct FracElem {
    num: PerfElem,
    den: PerfElem,
}

impl PartialEq for FracElem {
    fn eq(&self, other: &Self) -> bool {
        // Cross-multiplication; denominators are nonzero by construction.
        match self.num.mul(&other.den) {
            Ok(lhs) => match other.num.mul(&self.den) {
                Ok(rhs) => lhs == rhs,
                Err(_) => false,
            },
            Err(_) => false,
        }
    }
}

impl Eq for FracElem {}

impl FracElem {
    pub fn new(num: PerfElem, den: PerfElem) -> Result<FracElem> {
        if den.is_zero() {
            return Err(Error::domain("zero denominator"));
        }
        Ok(FracElem { num, den })
    }

    pub fn from_perf(x: PerfElem) -> FracElem {
        let one = PerfElem::one(x.cfg());
        FracElem { num: x, den: one }
    }

    pub fn zero(cfg: &Arc<PrimeConfig>) -> FracElem {
        FracElem::from_perf(PerfElem::zero(cfg))
    }

    pub fn one(cfg: &Arc<PrimeConfig>) -> FracElem {
        FracElem::from_perf(PerfElem::one(cfg))
    }

    pub fn cfg(&self) -> &Arc<PrimeConfig> {
        self.num.cfg()
    }

    pub fn num(&self) -> &PerfElem {
        &self.num
    }

    pub fn den(&self) -> &PerfElem {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn add(&self, other: &FracElem) -> Result<FracElem> {
        let num = self.num.mul(&other.den)?.add(&other.num.mul(&self.den)?)?;
        let den = self.den.mul(&other.den)?;
        FracElem::new(num, den)
    }

    pub fn neg(&self) -> FracElem {
        FracElem { num: self.num.neg(), den: self.den.clone() }
    }

    pub fn sub(&self, other: &FracElem) -> Result<FracElem> {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &FracElem) -> Result<FracElem> {
        FracElem::new(self.num.mul(&other.num)?, self.den.mul(&other.den)?)
    }

    pub fn inverse(&self) -> Result<FracElem> {
        if self.num.is_zero() {
            return Err(Error::domain("inverse of zero"));
        }
        Ok(FracElem { num: self.den.clone(), den: self.num.clone() })
    }

    /// Whether the element lies in the valuation ring: v(num) >= v(den).
    /// Exponents are unsigned so valuations are compared, never subtracted.
    pub fn in_o(&self) -> bool {
        match self.num.valuation() {
            None => true,
            Some(vn) => vn >= self.den.valuation().expect("nonzero denominator"),
        }
    }

    /// Whether the element lies in the maximal ideal: v(num) > v(den).
    pub fn in_m(&self) -> bool {
        match self.num.valuation() {
            None => true,
            Some(vn) => vn > self.den.valuation().expect("nonzero denominator"),
        }
    }

    pub fn render(&self) -> String {
        if self.den == PerfElem::one(self.cfg()) {
            self.num.render()
        } else {
            format!("({}) / ({})", self.num.render(), self.den.render())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg2() -> Arc<PrimeConfig> {
        PrimeConfig::new(2, 1, None).unwrap()
    }

    fn cfg3() -> Arc<PrimeConfig> {
        PrimeConfig::new(3, 1, None).unwrap()
    }

    fn t_pow(cfg: &Arc<PrimeConfig>, num: u64, k: u32) -> PerfElem {
        PerfElem::monomial(cfg, cfg.one(), Exponent::new(num, cfg.p(), k).unwrap())
    }

    #[test]
    fn characteristic_two_cancellation() {
        let cfg = cfg2();
        let half = t_pow(&cfg, 1, 1);
        assert!(half.add(&half).unwrap().is_zero());
    }

    #[test]
    fn exponent_addition_in_products() {
        let cfg = cfg3();
        let a = t_pow(&cfg, 1, 1);
        let b = t_pow(&cfg, 2, 1);
        assert_eq!(a.mul(&b).unwrap(), PerfElem::var_t(&cfg));
    }

    #[test]
    fn freshman_dream_pow() {
        let cfg = cfg3();
        let x = PerfElem::one(&cfg).add(&t_pow(&cfg, 1, 1)).unwrap();
        let want = PerfElem::one(&cfg).add(&PerfElem::var_t(&cfg)).unwrap();
        assert_eq!(x.pow(3).unwrap(), want);
    }

    #[test]
    fn frobenius_inverse_examples() {
        let cfg = cfg2();
        let t2 = t_pow(&cfg, 2, 0);
        assert_eq!(t2.frobenius_inverse().unwrap(), PerfElem::var_t(&cfg));

        let cfg = cfg3();
        let x = PerfElem::var_t(&cfg).add(&t_pow(&cfg, 3, 0)).unwrap();
        let want = t_pow(&cfg, 1, 1).add(&PerfElem::var_t(&cfg)).unwrap();
        assert_eq!(x.frobenius_inverse().unwrap(), want);
    }

    #[test]
    fn valuation_examples() {
        let cfg = cfg3();
        let x = t_pow(&cfg, 1, 2).add(&PerfElem::var_t(&cfg)).unwrap();
        assert_eq!(x.valuation().unwrap(), Exponent::new(1, 3, 2).unwrap());
        assert_eq!(PerfElem::zero(&cfg).valuation(), None);
    }

    #[test]
    fn split_example() {
        let cfg = cfg3();
        // 1 + t^{4/3} + t^2 + t^{7/3} split at gamma = 2.
        let x = PerfElem::one(&cfg)
            .add(&t_pow(&cfg, 4, 1))
            .unwrap()
            .add(&t_pow(&cfg, 2, 0))
            .unwrap()
            .add(&t_pow(&cfg, 7, 1))
            .unwrap();
        let (b, s) = x.split_mod_monomial(&cfg.one(), &Exponent::integer(2)).unwrap();
        let want_b = PerfElem::one(&cfg).add(&t_pow(&cfg, 4, 1)).unwrap();
        let want_s = PerfElem::one(&cfg).add(&t_pow(&cfg, 1, 1)).unwrap();
        assert_eq!(b, want_b);
        assert_eq!(s, want_s);

        let (b0, s0) = PerfElem::zero(&cfg)
            .split_mod_monomial(&cfg.one(), &Exponent::integer(2))
            .unwrap();
        assert!(b0.is_zero() && s0.is_zero());
    }

    #[test]
    fn rescale_examples() {
        let cfg = cfg2();
        let half = t_pow(&cfg, 1, 1);
        assert_eq!(half.rescale(&Exponent::integer(2)).unwrap(), PerfElem::var_t(&cfg));
        let x = PerfElem::one(&cfg).add(&t_pow(&cfg, 3, 2)).unwrap();
        let want = PerfElem::one(&cfg).add(&t_pow(&cfg, 3, 3)).unwrap();
        assert_eq!(x.rescale(&Exponent::new(1, 2, 1).unwrap()).unwrap(), want);
    }

    #[test]
    fn residue_and_units() {
        let cfg = cfg3();
        let x = PerfElem::one(&cfg).add(&t_pow(&cfg, 1, 1)).unwrap();
        assert_eq!(x.residue(), cfg.one());
        assert!(!PerfElem::var_t(&cfg).is_unit());
        let two_plus_t = PerfElem::from_terms(
            &cfg,
            [
                (Exponent::zero(), cfg.from_u64(2)),
                (Exponent::one(), cfg.one()),
            ],
        );
        assert!(two_plus_t.is_unit());
    }

    #[test]
    fn render_parse_round_trip() {
        let cfg = PrimeConfig::new(3, 2, None).unwrap();
        let z1 = cfg.from_coeffs(&[1, 1]).unwrap();
        let x = PerfElem::from_terms(
            &cfg,
            [
                (Exponent::zero(), cfg.from_u64(2)),
                (Exponent::new(3, 3, 2).unwrap(), z1),
                (Exponent::integer(2), cfg.from_u64(1)),
            ],
        );
        let s = x.render();
        assert_eq!(s, "2 + (z+1)*t^(1/3) + t^(2/1)");
        assert_eq!(PerfElem::parse(&cfg, &s).unwrap(), x);
        // Lenient inputs.
        assert_eq!(
            PerfElem::parse(&cfg, "(z+1)*t^(3/9) + 2 + t^(2)").unwrap(),
            x
        );
        assert_eq!(PerfElem::parse(&cfg, "0").unwrap(), PerfElem::zero(&cfg));
        assert_eq!(PerfElem::parse(&cfg, "t").unwrap(), PerfElem::var_t(&cfg));
        assert!(PerfElem::parse(&cfg, "t^(1/2)").is_err());
    }

    #[test]
    fn inverse_mod_truncation() {
        let cfg = cfg2();
        // (1 + t)^{-1} = 1 + t + t^2 + ... mod t^3
        let x = PerfElem::one(&cfg).add(&PerfElem::var_t(&cfg)).unwrap();
        let inv = x.inverse_mod(&Exponent::integer(3)).unwrap();
        let prod = x.mul(&inv).unwrap().truncate(&Exponent::integer(3));
        assert_eq!(prod, PerfElem::one(&cfg));
    }

    #[test]
    fn fraction_field_basics() {
        let cfg = cfg2();
        let t = PerfElem::var_t(&cfg);
        let one = PerfElem::one(&cfg);
        // 1/t has negative valuation: not in O.
        let y = FracElem::new(one.clone(), t.clone()).unwrap();
        assert!(!y.in_o());
        assert!(!y.in_m());
        // t/1 is in m; (1+t)/1 is a unit of O.
        let ft = FracElem::from_perf(t.clone());
        assert!(ft.in_o() && ft.in_m());
        let u = FracElem::from_perf(one.add(&t).unwrap());
        assert!(u.in_o() && !u.in_m());
        // x * x^{-1} = 1, and equality is by cross-multiplication:
        // t^(1/2)/1 equals t/t^(1/2).
        let prod = y.mul(&y.inverse().unwrap()).unwrap();
        assert_eq!(prod, FracElem::one(&cfg));
        let half = t_pow(&cfg, 1, 1);
        let a = FracElem::from_perf(half.clone());
        let b = FracElem::new(t, half).unwrap();
        assert_eq!(a, b);
        // 0 belongs to O and to m; inverting it is a domain error.
        let z = FracElem::zero(&cfg);
        assert!(z.in_o() && z.in_m());
        assert!(z.inverse().is_err());
    }

    #[test]
    fn fraction_arithmetic_matches_subring() {
        let cfg = cfg3();
        let a = t_pow(&cfg, 1, 1).add(&PerfElem::one(&cfg)).unwrap();
        let b = t_pow(&cfg, 2, 0);
        let fa = FracElem::from_perf(a.clone());
        let fb = FracElem::from_perf(b.clone());
        assert_eq!(fa.add(&fb).unwrap(), FracElem::from_perf(a.add(&b).unwrap()));
        assert_eq!(fa.mul(&fb).unwrap(), FracElem::from_perf(a.mul(&b).unwrap()));
        assert_eq!(fa.sub(&fa).unwrap(), FracElem::zero(&cfg));
    }

    fn arb_perf(cfg: Arc<PrimeConfig>) -> impl Strategy<Value = PerfElem> {
        let q = cfg.q();
        proptest::collection::vec(((0u64..24, 0u32..3), 0..q), 0..5).prop_map(move |entries| {
            let mut x = PerfElem::zero(&cfg);
            for ((num, k), ci) in entries {
                let e = Exponent::new(num, cfg.p(), k).unwrap();
                let c = cfg.from_index(ci).unwrap();
                x = x.add(&PerfElem::monomial(&cfg, c, e)).unwrap();
            }
            x
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn ring_axioms(
            (a, b, c) in (Just(PrimeConfig::new(3, 2, None).unwrap())).prop_flat_map(|cfg| {
                (arb_perf(cfg.clone()), arb_perf(cfg.clone()), arb_perf(cfg))
            })
        ) {
            let ab = a.add(&b).unwrap();
            prop_assert_eq!(ab.add(&c).unwrap(), a.add(&b.add(&c).unwrap()).unwrap());
            prop_assert_eq!(a.mul(&b).unwrap(), b.mul(&a).unwrap());
            let left = a.mul(&b.add(&c).unwrap()).unwrap();
            let right = a.mul(&b).unwrap().add(&a.mul(&c).unwrap()).unwrap();
            prop_assert_eq!(left, right);
            let assoc_l = a.mul(&b).unwrap().mul(&c).unwrap();
            let assoc_r = a.mul(&b.mul(&c).unwrap()).unwrap();
            prop_assert_eq!(assoc_l, assoc_r);
        }

        #[test]
        fn frobenius_is_ring_map(
            (a, b) in (Just(PrimeConfig::new(2, 2, None).unwrap())).prop_flat_map(|cfg| {
                (arb_perf(cfg.clone()), arb_perf(cfg))
            })
        ) {
            let f_sum = a.add(&b).unwrap().frobenius().unwrap();
            let sum_f = a.frobenius().unwrap().add(&b.frobenius().unwrap()).unwrap();
            prop_assert_eq!(f_sum, sum_f);
            let f_prod = a.mul(&b).unwrap().frobenius().unwrap();
            let prod_f = a.frobenius().unwrap().mul(&b.frobenius().unwrap()).unwrap();
            prop_assert_eq!(f_prod, prod_f);
            prop_assert_eq!(a.frobenius().unwrap().frobenius_inverse().unwrap(), a.clone());
            prop_assert_eq!(a.frobenius_inverse().unwrap().frobenius().unwrap(), a);
        }

        #[test]
        fn valuation_rules(
            (a, b) in (Just(PrimeConfig::new(3, 1, None).unwrap())).prop_flat_map(|cfg| {
                (arb_perf(cfg.clone()), arb_perf(cfg))
            })
        ) {
            let prod = a.mul(&b).unwrap();
            match (a.valuation(), b.valuation()) {
                (Some(va), Some(vb)) => {
                    prop_assert_eq!(prod.valuation().unwrap(), va.add(&vb, 3).unwrap());
                }
                _ => prop_assert!(prod.is_zero()),
            }
            let sum = a.add(&b).unwrap();
            if let (Some(va), Some(vb)) = (a.valuation(), b.valuation()) {
                if va != vb {
                    prop_assert_eq!(sum.valuation().unwrap(), va.min(vb));
                } else if let Some(vs) = sum.valuation() {
                    prop_assert!(vs >= va);
                }
            }
        }

        #[test]
        fn split_recombines(
            x in (Just(PrimeConfig::new(3, 2, None).unwrap())).prop_flat_map(arb_perf),
            anum in 1u64..9,
            gnum in 1u64..6,
            gk in 0u32..2,
        ) {
            let cfg = x.cfg().clone();
            let a = cfg.from_index(anum % cfg.q()).unwrap();
            prop_assume!(!a.is_zero());
            let gamma = Exponent::new(gnum, 3, gk).unwrap();
            let (b, s) = x.split_mod_monomial(&a, &gamma).unwrap();
            for (e, _) in b.terms() {
                prop_assert!(e < &gamma);
            }
            let back = b
                .add(&PerfElem::monomial(&cfg, a, gamma).mul(&s).unwrap())
                .unwrap();
            prop_assert_eq!(back, x);
        }

        #[test]
        fn rescale_is_injective_ring_map(
            (a, b) in (Just(PrimeConfig::new(2, 1, None).unwrap())).prop_flat_map(|cfg| {
                (arb_perf(cfg.clone()), arb_perf(cfg))
            }),
            qnum in 1u64..8,
            qk in 0u32..3,
        ) {
            let q = Exponent::new(qnum, 2, qk).unwrap();
            let lhs = a.add(&b).unwrap().rescale(&q).unwrap();
            let rhs = a.rescale(&q).unwrap().add(&b.rescale(&q).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
            let lhs = a.mul(&b).unwrap().rescale(&q).unwrap();
            let rhs = a.rescale(&q).unwrap().mul(&b.rescale(&q).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
            if a != b {
                prop_assert_ne!(a.rescale(&q).unwrap(), b.rescale(&q).unwrap());
            }
        }

        #[test]
        fn render_round_trips(
            x in (Just(PrimeConfig::new(2, 2, None).unwrap())).prop_flat_map(arb_perf)
        ) {
            let s = x.render();
            let parsed = PerfElem::parse(x.cfg(), &s).unwrap();
            prop_assert_eq!(parsed.render(), s);
            prop_assert_eq!(parsed, x);
        }
    }
}
