use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::fmt;

/// A nonnegative rational with p-power denominator, kept in lowest terms:
/// den = p^k, and p does not divide num unless den = 1; zero is 0/1.
/// Because the form is canonical, structural equality is value equality and
/// the ordering below needs no knowledge of p.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Exponent {
    num: u64,
    den: u64,
}

/// Numerators and denominators stay below this bound so that cross products
/// fit comfortably in u128 and scaling stays checked.
const MAG_CAP: u64 = 1 << 62;

impl Exponent {
    pub fn zero() -> Exponent {
        Exponent { num: 0, den: 1 }
    }

    pub fn one() -> Exponent {
        Exponent { num: 1, den: 1 }
    }

    pub fn integer(m: u64) -> Exponent {
        Exponent { num: m, den: 1 }
    }

    /// num / p^k, canonicalized.
    pub fn new(mut num: u64, p: u64, mut k: u32) -> Result<Exponent> {
        if num == 0 {
            return Ok(Exponent::zero());
        }
        while k > 0 && num % p == 0 {
            num /= p;
            k -= 1;
        }
        let den = p
            .checked_pow(k)
            .filter(|&d| d <= MAG_CAP && num <= MAG_CAP)
            .ok_or_else(|| Error::overflow("exponent denominator p^k too large"))?;
        Ok(Exponent { num, den })
    }

    /// num/den where den must be a (possibly trivial) power of p.
    pub fn from_fraction(num: u64, den: u64, p: u64) -> Result<Exponent> {
        if den == 0 {
            return Err(Error::parse("exponent denominator is zero"));
        }
        let mut k = 0u32;
        let mut rest = den;
        while rest > 1 {
            if rest % p != 0 {
                return Err(Error::parse(format!(
                    "exponent denominator {den} is not a power of p = {p}"
                )));
            }
            rest /= p;
            k += 1;
        }
        Exponent::new(num, p, k)
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }

    pub fn as_integer(&self) -> Option<u64> {
        if self.den == 1 {
            Some(self.num)
        } else {
            None
        }
    }

    pub fn log_p_den(&self, p: u64) -> u32 {
        let mut k = 0;
        let mut d = self.den;
        while d > 1 {
            d /= p;
            k += 1;
        }
        k
    }

    pub fn add(&self, other: &Exponent, p: u64) -> Result<Exponent> {
        // Denominators are powers of p, so one divides the other.
        let den = self.den.max(other.den);
        let a = (self.num as u128) * ((den / self.den) as u128);
        let b = (other.num as u128) * ((den / other.den) as u128);
        let num = a + b;
        if num > MAG_CAP as u128 {
            return Err(Error::overflow("exponent numerator too large"));
        }
        Exponent::new(num as u64, p, exp_log(den, p))
    }

    /// self - other; errors when the result would be negative.
    pub fn sub(&self, other: &Exponent, p: u64) -> Result<Exponent> {
        let den = self.den.max(other.den);
        let a = (self.num as u128) * ((den / self.den) as u128);
        let b = (other.num as u128) * ((den / other.den) as u128);
        if a < b {
            return Err(Error::domain("negative exponent"));
        }
        Exponent::new((a - b) as u64, p, exp_log(den, p))
    }

    pub fn mul(&self, other: &Exponent, p: u64) -> Result<Exponent> {
        let num = (self.num as u128) * (other.num as u128);
        let den = (self.den as u128) * (other.den as u128);
        if num > MAG_CAP as u128 || den > MAG_CAP as u128 {
            return Err(Error::overflow("exponent product too large"));
        }
        // Both factors are reduced, so no p cancels between num and den
        // unless one side is zero.
        if num == 0 {
            return Ok(Exponent::zero());
        }
        Exponent::new(num as u64, p, exp_log(den as u64, p))
    }

    pub fn scale_int(&self, m: u64, p: u64) -> Result<Exponent> {
        let num = (self.num as u128) * (m as u128);
        if num > MAG_CAP as u128 {
            return Err(Error::overflow("exponent numerator too large"));
        }
        Exponent::new(num as u64, p, exp_log(self.den, p))
    }

    /// e / p, used by inverse Frobenius.
    pub fn div_p(&self, p: u64) -> Result<Exponent> {
        Exponent::new(self.num, p, self.log_p_den(p) + 1)
    }

    /// e * p, used by Frobenius.
    pub fn mul_p(&self, p: u64) -> Result<Exponent> {
        if self.den > 1 {
            Ok(Exponent { num: self.num, den: self.den / p })
        } else {
            let num = self
                .num
                .checked_mul(p)
                .filter(|&n| n <= MAG_CAP)
                .ok_or_else(|| Error::overflow("exponent numerator too large"))?;
            Ok(Exponent { num, den: 1 })
        }
    }

    pub fn cmp_int(&self, m: u64) -> Ordering {
        (self.num as u128).cmp(&((m as u128) * (self.den as u128)))
    }
}

fn exp_log(mut den: u64, p: u64) -> u32 {
    let mut k = 0;
    while den > 1 {
        den /= p;
        k += 1;
    }
    k
}

impl Ord for Exponent {
    fn cmp(&self, other: &Self) -> Ordering {
        let a = (self.num as u128) * (other.den as u128);
        let b = (other.num as u128) * (self.den as u128);
        a.cmp(&b)
    }
}

impl PartialOrd for Exponent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_forms() {
        let e = Exponent::new(4, 2, 2).unwrap();
        assert_eq!((e.num(), e.den()), (1, 1));
        let e = Exponent::new(6, 2, 1).unwrap();
        assert_eq!((e.num(), e.den()), (3, 1));
        let e = Exponent::new(3, 2, 2).unwrap();
        assert_eq!((e.num(), e.den()), (3, 4));
        assert_eq!(Exponent::new(0, 5, 7).unwrap(), Exponent::zero());
    }

    #[test]
    fn arithmetic() {
        let p = 2;
        let half = Exponent::new(1, p, 1).unwrap();
        assert_eq!(half.add(&half, p).unwrap(), Exponent::one());
        let q = Exponent::new(3, p, 2).unwrap();
        assert_eq!(
            q.add(&half, p).unwrap(),
            Exponent::new(5, p, 2).unwrap()
        );
        assert_eq!(q.sub(&half, p).unwrap(), Exponent::new(1, p, 2).unwrap());
        assert!(half.sub(&q, p).is_err());
        assert_eq!(half.mul(&half, p).unwrap(), Exponent::new(1, p, 2).unwrap());
        assert_eq!(q.scale_int(4, p).unwrap(), Exponent::integer(3));
        assert_eq!(half.div_p(p).unwrap(), Exponent::new(1, p, 2).unwrap());
        assert_eq!(half.mul_p(p).unwrap(), Exponent::one());
        assert_eq!(Exponent::integer(3).mul_p(p).unwrap(), Exponent::integer(6));
    }

    #[test]
    fn ordering_is_by_value() {
        let p = 3;
        let a = Exponent::new(2, p, 1).unwrap(); // 2/3
        let b = Exponent::new(5, p, 2).unwrap(); // 5/9
        assert!(b < a);
        assert!(a.cmp_int(1) == Ordering::Less);
        assert!(Exponent::integer(2).cmp_int(2) == Ordering::Equal);
    }

    #[test]
    fn fraction_parsing_guard() {
        assert!(Exponent::from_fraction(1, 6, 2).is_err());
        assert_eq!(
            Exponent::from_fraction(2, 4, 2).unwrap(),
            Exponent::new(1, 2, 1).unwrap()
        );
    }

    proptest! {
        #[test]
        fn add_commutes_and_sub_inverts(n1 in 0u64..1000, k1 in 0u32..6, n2 in 0u64..1000, k2 in 0u32..6) {
            let p = 3u64;
            let a = Exponent::new(n1, p, k1).unwrap();
            let b = Exponent::new(n2, p, k2).unwrap();
            let s1 = a.add(&b, p).unwrap();
            let s2 = b.add(&a, p).unwrap();
            prop_assert_eq!(s1, s2);
            prop_assert_eq!(s1.sub(&b, p).unwrap(), a);
        }

        #[test]
        fn mul_matches_rational_value(n1 in 0u64..100, k1 in 0u32..4, n2 in 0u64..100, k2 in 0u32..4) {
            let p = 2u64;
            let a = Exponent::new(n1, p, k1).unwrap();
            let b = Exponent::new(n2, p, k2).unwrap();
            let m = a.mul(&b, p).unwrap();
            // Compare as exact rationals via cross multiplication:
            // m = (n1/2^k1) * (n2/2^k2) iff m.num * 2^(k1+k2) = n1 * n2 * m.den.
            let lhs = (m.num() as u128) << (k1 + k2);
            let rhs = (n1 as u128) * (n2 as u128) * (m.den() as u128);
            prop_assert_eq!(lhs, rhs);
        }
    }
}
