//! Scalar values for certificate constants.
//!
//! Certificate constants are typically rationals, or rationals times a power
//! of Euler's constant (e.g. `B = e`, or `B = e^(1/2)` after a root
//! reduction). [`Scalar`] keeps such values exact — so equalities like
//! `B = e` survive composition — and falls back to an [`HPReal`] only when a
//! value has no rational-times-`e`-power form.

use crate::hpreal::{e_const, HPReal};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::fmt;

/// Precision used when an exact scalar must be compared numerically.
const CMP_PREC: u32 = 512;

/// An exact or floating certificate constant.
#[derive(Debug, Clone)]
pub enum Scalar {
    /// `coeff * e^epow` with both parts exact rationals.
    Exact { coeff: BigRational, epow: BigRational },
    /// Arbitrary-precision fallback for values with no exact form here.
    Float(HPReal),
}

impl Scalar {
    pub fn from_ratio(r: BigRational) -> Self {
        Scalar::Exact { coeff: r, epow: BigRational::zero() }
    }

    pub fn from_i64(v: i64) -> Self {
        Self::from_ratio(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn one() -> Self {
        Self::from_i64(1)
    }

    /// Euler's constant, kept symbolic.
    pub fn e() -> Self {
        Scalar::Exact { coeff: BigRational::one(), epow: BigRational::one() }
    }

    /// `e^r`, kept symbolic.
    pub fn e_pow(r: BigRational) -> Self {
        Scalar::Exact { coeff: BigRational::one(), epow: r }
    }

    /// Exact rational content if this scalar is a plain rational.
    pub fn as_ratio(&self) -> Option<&BigRational> {
        match self {
            Scalar::Exact { coeff, epow } if epow.is_zero() => Some(coeff),
            _ => None,
        }
    }

    /// Numeric value at the given precision.
    pub fn to_hp(&self, prec: u32) -> HPReal {
        match self {
            Scalar::Exact { coeff, epow } => {
                let c = HPReal::from_ratio(coeff, prec);
                if epow.is_zero() {
                    c
                } else if epow.is_one() {
                    c.mul(&e_const(prec))
                } else {
                    c.mul(&HPReal::from_ratio(epow, prec).exp())
                }
            }
            Scalar::Float(v) => v.with_prec(prec),
        }
    }

    pub fn mul(&self, other: &Scalar) -> Scalar {
        match (self, other) {
            (
                Scalar::Exact { coeff: c1, epow: p1 },
                Scalar::Exact { coeff: c2, epow: p2 },
            ) => Scalar::Exact { coeff: c1 * c2, epow: p1 + p2 },
            _ => {
                let prec = self.float_prec().max(other.float_prec()).max(CMP_PREC);
                Scalar::Float(self.to_hp(prec).mul(&other.to_hp(prec)))
            }
        }
    }

    pub fn add(&self, other: &Scalar) -> Scalar {
        match (self, other) {
            (
                Scalar::Exact { coeff: c1, epow: p1 },
                Scalar::Exact { coeff: c2, epow: p2 },
            ) if p1 == p2 => Scalar::Exact { coeff: c1 + c2, epow: p1.clone() },
            _ => {
                let prec = self.float_prec().max(other.float_prec()).max(CMP_PREC);
                Scalar::Float(self.to_hp(prec).add(&other.to_hp(prec)))
            }
        }
    }

    /// `self^r` for a positive scalar. Stays exact when the rational part
    /// has an exact root (the `e`-power is closed under rational powers).
    pub fn pow_ratio(&self, r: &BigRational) -> Scalar {
        if r.is_zero() {
            return Scalar::one();
        }
        match self {
            Scalar::Exact { coeff, epow } => {
                let new_epow = epow * r;
                if let Some(c) = rational_pow(coeff, r) {
                    return Scalar::Exact { coeff: c, epow: new_epow };
                }
                // Rational part has no exact root: split it off numerically,
                // the e-power still carries exactly.
                let prec = CMP_PREC;
                let c = HPReal::from_ratio(coeff, prec).pow_ratio(r);
                let e = if new_epow.is_zero() {
                    HPReal::one(prec)
                } else {
                    HPReal::from_ratio(&new_epow, prec).exp()
                };
                Scalar::Float(c.mul(&e))
            }
            Scalar::Float(v) => Scalar::Float(v.pow_ratio(r)),
        }
    }

    pub fn is_positive(&self) -> bool {
        match self {
            Scalar::Exact { coeff, .. } => coeff.is_positive(),
            Scalar::Float(v) => v.is_positive(),
        }
    }

    pub fn cmp_value(&self, other: &Scalar) -> Ordering {
        if let (
            Scalar::Exact { coeff: c1, epow: p1 },
            Scalar::Exact { coeff: c2, epow: p2 },
        ) = (self, other)
        {
            if p1 == p2 {
                return c1.cmp(c2);
            }
            if c1 == c2 && c1.is_positive() {
                return p1.cmp(p2);
            }
        }
        let prec = self.float_prec().max(other.float_prec()).max(CMP_PREC);
        self.to_hp(prec).cmp_value(&other.to_hp(prec))
    }

    pub fn max_value(&self, other: &Scalar) -> Scalar {
        if self.cmp_value(other) == Ordering::Less {
            other.clone()
        } else {
            self.clone()
        }
    }

    /// Decimal rendering at the given significant-digit count.
    pub fn to_decimal_string(&self, digits: usize) -> String {
        self.to_hp(CMP_PREC).to_decimal_string(digits)
    }

    fn float_prec(&self) -> u32 {
        match self {
            Scalar::Exact { .. } => 0,
            Scalar::Float(v) => v.precision(),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Exact { coeff, epow } => {
                if epow.is_zero() {
                    return write!(f, "{coeff}");
                }
                let e_part = if epow.is_one() {
                    "e".to_string()
                } else {
                    format!("e^({epow})")
                };
                if coeff.is_one() {
                    write!(f, "{e_part}")
                } else {
                    write!(f, "{coeff}*{e_part}")
                }
            }
            Scalar::Float(v) => write!(f, "{}", v.to_decimal_string(20)),
        }
    }
}

/// `base^r` when the result is rational: exact integer roots of numerator
/// and denominator, or `None`.
fn rational_pow(base: &BigRational, r: &BigRational) -> Option<BigRational> {
    if base.is_zero() {
        return if r.is_positive() { Some(BigRational::zero()) } else { None };
    }
    if base.is_negative() {
        // Not needed for certificate constants; keep the exact path narrow.
        return None;
    }
    let q = r.denom().to_u32()?;
    let rooted = if q == 1 {
        base.clone()
    } else {
        let rn = exact_nth_root(base.numer(), q)?;
        let rd = exact_nth_root(base.denom(), q)?;
        BigRational::new(rn, rd)
    };
    let p = r.numer().to_i32()?;
    let abs = rooted.pow(p.unsigned_abs() as i32);
    Some(if p < 0 { abs.recip() } else { abs })
}

fn exact_nth_root(v: &BigInt, n: u32) -> Option<BigInt> {
    let root = v.nth_root(n);
    if root.pow(n) == *v {
        Some(root)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn symbolic_e_survives_products_and_roots() {
        let b = Scalar::e();
        let sq = b.pow_ratio(&rat(1, 2));
        match &sq {
            Scalar::Exact { coeff, epow } => {
                assert!(coeff.is_one());
                assert_eq!(*epow, rat(1, 2));
            }
            Scalar::Float(_) => panic!("e^(1/2) should stay exact"),
        }
        let back = sq.mul(&sq);
        assert_eq!(back.to_string(), "e");
    }

    #[test]
    fn exact_roots_detected() {
        let v = Scalar::from_ratio(rat(27, 8));
        match v.pow_ratio(&rat(1, 3)) {
            Scalar::Exact { coeff, epow } => {
                assert_eq!(coeff, rat(3, 2));
                assert!(epow.is_zero());
            }
            Scalar::Float(_) => panic!("cube root of 27/8 is exact"),
        }
        // 2^(1/2) has no exact form.
        assert!(matches!(
            Scalar::from_i64(2).pow_ratio(&rat(1, 2)),
            Scalar::Float(_)
        ));
    }

    #[test]
    fn comparison_mixes_exact_and_float() {
        let e = Scalar::e();
        let almost = Scalar::from_ratio(rat(27, 10));
        assert_eq!(almost.cmp_value(&e), Ordering::Less);
        let f = Scalar::Float(HPReal::from_i64(3, 128));
        assert_eq!(f.cmp_value(&e), Ordering::Greater);
        assert_eq!(e.cmp_value(&e), Ordering::Equal);
    }

    #[test]
    fn display_forms() {
        assert_eq!(Scalar::from_i64(6).to_string(), "6");
        assert_eq!(Scalar::e().to_string(), "e");
        assert_eq!(Scalar::e_pow(rat(1, 2)).to_string(), "e^(1/2)");
        assert_eq!(
            Scalar::from_ratio(rat(3, 2)).mul(&Scalar::e()).to_string(),
            "3/2*e"
        );
    }

    #[test]
    fn addition_merges_matching_e_powers_only() {
        let a = Scalar::e().add(&Scalar::e());
        assert_eq!(a.to_string(), "2*e");
        let mixed = Scalar::e().add(&Scalar::one());
        assert!(matches!(mixed, Scalar::Float(_)));
    }
}
