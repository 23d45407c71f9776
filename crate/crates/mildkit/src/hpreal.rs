//! Arbitrary-precision binary floating point.
//!
//! `HPReal` stores a value as `mant * 2^exp` with a signed big-integer
//! mantissa rounded to `prec` bits and an `i128` exponent. The wide exponent
//! matters: evaluating `exp(1 - x^(-alpha))` at grid points near zero
//! produces magnitudes like `2^(-2^80)`, far outside any fixed-width float.
//!
//! Error accounting: every primitive operation rounds to nearest, so it is
//! accurate to 1 ulp (relative `2^(1-prec)`); transcendentals run their
//! series with 64 guard bits before the final rounding. Exposed results are
//! therefore well within the advertised relative budget of `2^(8-prec)`
//! for the operation chains in this crate.

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{Euclid, One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Mutex;
use std::sync::OnceLock;

/// Values whose binary exponent would leave `(-2^126, 2^126)` are out of
/// range. Inputs that large violate the evaluation-domain contracts upstream;
/// results that small flush to an exact zero, which is rigorous for every
/// bound sweep in this crate (the true value is below any reported margin).
const EXP_LIMIT: i128 = 1 << 126;

/// Guard bits used internally by transcendental functions.
const GUARD: u32 = 64;

/// Arbitrary-precision binary float: `mant * 2^exp`, `|mant| < 2^prec`.
#[derive(Debug, Clone)]
pub struct HPReal {
    mant: BigInt,
    exp: i128,
    prec: u32,
}

impl HPReal {
    /// Exact zero at the given precision.
    pub fn zero(prec: u32) -> Self {
        HPReal { mant: BigInt::zero(), exp: 0, prec }
    }

    /// Exact one at the given precision.
    pub fn one(prec: u32) -> Self {
        HPReal { mant: BigInt::one(), exp: 0, prec }
    }

    pub fn from_i64(v: i64, prec: u32) -> Self {
        HPReal { mant: BigInt::from(v), exp: 0, prec }.rounded()
    }

    pub fn from_bigint(v: &BigInt, prec: u32) -> Self {
        HPReal { mant: v.clone(), exp: 0, prec }.rounded()
    }

    /// Round a rational to `prec` bits.
    pub fn from_ratio(r: &BigRational, prec: u32) -> Self {
        if r.is_zero() {
            return Self::zero(prec);
        }
        let num = r.numer();
        let den = r.denom();
        // Shift the numerator so the quotient carries prec+2 significant bits.
        let nb = num.bits() as i128;
        let db = den.bits() as i128;
        let shift = (prec as i128 + 2) - (nb - db);
        let (q, e) = if shift > 0 {
            ((num << shift as u64).div_euclid(den), -shift)
        } else {
            ((num >> (-shift) as u64).div_euclid(den), -shift)
        };
        HPReal { mant: q, exp: e, prec }.rounded()
    }

    pub fn precision(&self) -> u32 {
        self.prec
    }

    /// Same value re-rounded at a new working precision.
    pub fn with_prec(&self, prec: u32) -> Self {
        HPReal { mant: self.mant.clone(), exp: self.exp, prec }.rounded()
    }

    pub fn is_zero(&self) -> bool {
        self.mant.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.mant.is_negative()
    }

    pub fn is_positive(&self) -> bool {
        self.mant.is_positive()
    }

    /// Position of the most significant bit: value magnitude is in
    /// `[2^(msb-1), 2^msb)`. Meaningless for zero.
    fn msb(&self) -> i128 {
        self.exp + self.mant.bits() as i128
    }

    /// Round the mantissa to `prec` bits (round half away from zero) and
    /// enforce the exponent range.
    fn rounded(mut self) -> Self {
        let bits = self.mant.bits();
        if bits > self.prec as u64 {
            let drop = (bits - self.prec as u64) as i128;
            let neg = self.mant.is_negative();
            let mut mag = self.mant.magnitude().clone();
            let half = num_bigint::BigUint::one() << (drop - 1) as u64;
            mag += &half;
            mag >>= drop as u64;
            self.mant = BigInt::from_biguint(if neg { Sign::Minus } else { Sign::Plus }, mag);
            self.exp += drop;
        }
        if self.mant.is_zero() {
            self.exp = 0;
            return self;
        }
        // Strip trailing zero bits so equal values share a representation.
        let tz = self.mant.trailing_zeros().unwrap_or(0);
        if tz > 0 {
            self.mant >>= tz;
            self.exp += tz as i128;
        }
        if self.msb() < -EXP_LIMIT {
            return Self::zero(self.prec);
        }
        if self.msb() > EXP_LIMIT {
            panic!("HPReal overflow: magnitude 2^{}", self.msb());
        }
        self
    }

    pub fn neg(&self) -> Self {
        HPReal { mant: -&self.mant, exp: self.exp, prec: self.prec }
    }

    pub fn abs(&self) -> Self {
        HPReal { mant: self.mant.abs(), exp: self.exp, prec: self.prec }
    }

    pub fn add(&self, other: &Self) -> Self {
        let prec = self.prec.max(other.prec);
        if self.is_zero() {
            return other.with_prec(prec);
        }
        if other.is_zero() {
            return self.with_prec(prec);
        }
        // If the magnitudes are too far apart the small operand only matters
        // through rounding; absorbing it keeps the shift bounded.
        let gap = self.msb() - other.msb();
        if gap > prec as i128 + 4 {
            return self.with_prec(prec);
        }
        if gap < -(prec as i128 + 4) {
            return other.with_prec(prec);
        }
        let (mant, exp) = if self.exp >= other.exp {
            ((&self.mant << (self.exp - other.exp) as u64) + &other.mant, other.exp)
        } else {
            ((&other.mant << (other.exp - self.exp) as u64) + &self.mant, self.exp)
        };
        HPReal { mant, exp, prec }.rounded()
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let prec = self.prec.max(other.prec);
        if self.is_zero() || other.is_zero() {
            return Self::zero(prec);
        }
        HPReal { mant: &self.mant * &other.mant, exp: self.exp + other.exp, prec }.rounded()
    }

    pub fn div(&self, other: &Self) -> Self {
        let prec = self.prec.max(other.prec);
        assert!(!other.is_zero(), "HPReal division by zero");
        if self.is_zero() {
            return Self::zero(prec);
        }
        let shift = prec as u64 + 2 + other.mant.bits();
        let mant = (&self.mant << shift).div_euclid(&other.mant);
        HPReal { mant, exp: self.exp - other.exp - shift as i128, prec }.rounded()
    }

    pub fn mul_i64(&self, k: i64) -> Self {
        HPReal { mant: &self.mant * k, exp: self.exp, prec: self.prec }.rounded()
    }

    /// Exact multiplication by `2^k`.
    pub fn shl(&self, k: i128) -> Self {
        if self.is_zero() {
            return self.clone();
        }
        HPReal { mant: self.mant.clone(), exp: self.exp + k, prec: self.prec }.rounded()
    }

    pub fn cmp_value(&self, other: &Self) -> Ordering {
        let sa = self.mant.sign();
        let sb = other.mant.sign();
        if sa != sb {
            return match (sa, sb) {
                (Sign::Minus, _) => Ordering::Less,
                (Sign::Plus, _) => Ordering::Greater,
                (Sign::NoSign, Sign::Plus) => Ordering::Less,
                (Sign::NoSign, Sign::Minus) => Ordering::Greater,
                _ => Ordering::Equal,
            };
        }
        if sa == Sign::NoSign {
            return Ordering::Equal;
        }
        let mag = match self.msb().cmp(&other.msb()) {
            Ordering::Equal => {
                // Same binary order of magnitude: compare aligned mantissas.
                let shift = self.exp - other.exp;
                let (a, b) = if shift >= 0 {
                    (&self.mant << shift as u64, other.mant.clone())
                } else {
                    (self.mant.clone(), &other.mant << (-shift) as u64)
                };
                a.magnitude().cmp(b.magnitude())
            }
            ord => ord,
        };
        if sa == Sign::Minus {
            mag.reverse()
        } else {
            mag
        }
    }

    pub fn max_value(&self, other: &Self) -> Self {
        if self.cmp_value(other) == Ordering::Less {
            other.clone()
        } else {
            self.clone()
        }
    }

    /// `e^self`. Panics if the result magnitude leaves the exponent range;
    /// flushes to exact zero when it falls below it.
    pub fn exp(&self) -> Self {
        let prec = self.prec;
        if self.is_zero() {
            return Self::one(prec);
        }
        let work = prec + GUARD;
        // k = round(x / ln 2), r = x - k ln 2 with |r| <= ln2/2.
        // ln 2 needs enough bits to keep k*ln2 accurate at the target scale.
        let xbits = self.msb().max(0) as u32;
        let ln2 = ln2_const(work + xbits + 4);
        let x = self.with_prec(work + xbits + 4);
        let kf = x.div(&ln2);
        let k = kf.round_to_bigint();
        let kbig = HPReal::from_bigint(&k, work + xbits + 4);
        let r = x.sub(&kbig.mul(&ln2)).with_prec(work);
        let k: i128 = k.to_i128().unwrap_or_else(|| {
            if k.is_negative() {
                -EXP_LIMIT - 1
            } else {
                panic!("HPReal::exp overflow: argument {}", self.to_decimal_string(8))
            }
        });
        if k < -EXP_LIMIT {
            return Self::zero(prec);
        }
        // Halve r eight times so the Taylor series converges fast, then
        // square the result back up.
        const HALVINGS: i128 = 8;
        let rs = r.shl(-HALVINGS);
        let mut term = HPReal::one(work);
        let mut sum = HPReal::one(work);
        let mut n: i64 = 1;
        loop {
            term = term.mul(&rs);
            term = HPReal {
                mant: term.mant.clone(),
                exp: term.exp,
                prec: work,
            };
            term = term.div(&HPReal::from_i64(n, work));
            if term.is_zero() || sum.msb() - term.msb() > work as i128 + 2 {
                break;
            }
            sum = sum.add(&term);
            n += 1;
        }
        let mut result = sum;
        for _ in 0..HALVINGS {
            result = result.mul(&result);
        }
        result.shl(k).with_prec(prec)
    }

    /// Natural logarithm; requires a strictly positive value.
    pub fn ln(&self) -> Self {
        assert!(self.is_positive(), "HPReal::ln of non-positive value");
        let prec = self.prec;
        let work = prec + GUARD;
        // x = m * 2^e with m in [1, 2): ln x = e ln2 + ln m.
        let e = self.msb() - 1;
        let m = HPReal { mant: self.mant.clone(), exp: -(self.mant.bits() as i128) + 1, prec: work };
        // ln m = 2 atanh((m-1)/(m+1)), argument in [0, 1/3).
        let one = HPReal::one(work);
        let t = m.sub(&one).div(&m.add(&one));
        let t2 = t.mul(&t);
        let mut term = t.clone();
        let mut sum = t;
        let mut n: i64 = 3;
        loop {
            term = term.mul(&t2);
            let contrib = term.div(&HPReal::from_i64(n, work));
            if contrib.is_zero() || (!sum.is_zero() && sum.msb() - contrib.msb() > work as i128 + 2)
            {
                break;
            }
            sum = sum.add(&contrib);
            n += 2;
        }
        let ln_m = sum.shl(1);
        if e == 0 {
            return ln_m.with_prec(prec);
        }
        let ebits = 128 - e.unsigned_abs().leading_zeros();
        let ln2 = ln2_const(work + ebits + 2);
        let ef = HPReal::from_bigint(&BigInt::from(e), work + ebits + 2);
        ef.mul(&ln2).add(&ln_m).with_prec(prec)
    }

    /// Integer power by binary exponentiation.
    pub fn pow_i64(&self, n: i64) -> Self {
        if n == 0 {
            return Self::one(self.prec);
        }
        let work = self.prec + GUARD;
        let mut base = self.with_prec(work);
        let mut e = n.unsigned_abs();
        if n < 0 {
            base = HPReal::one(work).div(&base);
        }
        let mut acc = HPReal::one(work);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        acc.with_prec(self.prec)
    }

    /// Rational power of a positive value: `exp(r * ln self)`, with exact
    /// fast paths for integer exponents.
    pub fn pow_ratio(&self, r: &BigRational) -> Self {
        if r.is_zero() {
            return Self::one(self.prec);
        }
        if r.is_integer() {
            if let Some(n) = r.numer().to_i64() {
                return self.pow_i64(n);
            }
        }
        assert!(self.is_positive(), "HPReal::pow_ratio of non-positive base");
        let work = self.prec + GUARD;
        let x = self.with_prec(work);
        let rf = HPReal::from_ratio(r, work);
        x.ln().mul(&rf).exp().with_prec(self.prec)
    }

    pub fn sqrt(&self) -> Self {
        self.pow_ratio(&BigRational::new(BigInt::one(), BigInt::from(2)))
    }

    /// Nearest integer (ties away from zero).
    pub fn round_to_bigint(&self) -> BigInt {
        if self.is_zero() {
            return BigInt::zero();
        }
        if self.exp >= 0 {
            return &self.mant << self.exp as u64;
        }
        let drop = (-self.exp) as u64;
        if drop >= self.mant.bits() + 2 {
            return BigInt::zero();
        }
        let neg = self.mant.is_negative();
        let mut mag = self.mant.magnitude().clone();
        mag += num_bigint::BigUint::one() << (drop - 1);
        mag >>= drop;
        BigInt::from_biguint(if neg { Sign::Minus } else { Sign::Plus }, mag)
    }

    /// Best-effort conversion; saturates to +-inf outside f64 range.
    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let sign = if self.mant.is_negative() { -1.0 } else { 1.0 };
        let bits = self.mant.bits();
        let keep = 53.min(bits);
        let top = (self.mant.magnitude() >> (bits - keep)).to_f64().unwrap_or(f64::MAX);
        let e2 = self.exp + (bits - keep) as i128;
        if e2 > 2000 {
            return sign * f64::INFINITY;
        }
        if e2 < -2000 {
            return 0.0;
        }
        sign * top * (e2 as f64).exp2()
    }

    /// Scientific decimal string with `digits` significant digits,
    /// e.g. `1.4715177646e0`.
    pub fn to_decimal_string(&self, digits: usize) -> String {
        if self.is_zero() {
            return "0".to_string();
        }
        let digits = digits.max(1);
        let neg = self.mant.is_negative();
        // Decimal exponent estimate: msb * log10(2).
        let e10_est = (self.msb() as f64 * std::f64::consts::LOG10_2).floor() as i128;
        // scaled = value * 10^(digits - 1 - e10), computed in binary.
        let work = self.prec + GUARD + 32;
        let ten = HPReal::from_i64(10, work);
        let mut e10 = e10_est;
        let mut scaled = self.abs().with_prec(work).mul(&pow_i128(&ten, digits as i128 - 1 - e10));
        // The estimate can be off by one; renormalize into [10^(d-1), 10^d).
        let lo = pow_i128(&ten, digits as i128 - 1);
        let hi = lo.mul(&ten);
        if scaled.cmp_value(&lo) == Ordering::Less {
            scaled = scaled.mul(&ten);
            e10 -= 1;
        } else if scaled.cmp_value(&hi) != Ordering::Less {
            scaled = scaled.div(&ten);
            e10 += 1;
        }
        let mut int = scaled.round_to_bigint().magnitude().to_str_radix(10);
        // Rounding can push e.g. 999.9 to 1000: one more digit than asked.
        if int.len() > digits {
            int.truncate(digits);
            e10 += 1;
        }
        let mantissa = if int.len() == 1 {
            int
        } else {
            format!("{}.{}", &int[..1], &int[1..])
        };
        format!("{}{}e{}", if neg { "-" } else { "" }, mantissa, e10)
    }
}

/// `base^k` for possibly huge `k`, via binary exponentiation.
fn pow_i128(base: &HPReal, k: i128) -> HPReal {
    let work = base.precision();
    if k == 0 {
        return HPReal::one(work);
    }
    let mut b = if k < 0 { HPReal::one(work).div(base) } else { base.clone() };
    let mut e = k.unsigned_abs();
    let mut acc = HPReal::one(work);
    while e > 0 {
        if e & 1 == 1 {
            acc = acc.mul(&b);
        }
        e >>= 1;
        if e > 0 {
            b = b.mul(&b);
        }
    }
    acc
}

fn constant_cache() -> &'static Mutex<HashMap<(u8, u32), HPReal>> {
    static CACHE: OnceLock<Mutex<HashMap<(u8, u32), HPReal>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `ln 2` at the given precision, via `2 atanh(1/3)`.
pub fn ln2_const(prec: u32) -> HPReal {
    if let Some(v) = constant_cache().lock().unwrap().get(&(0, prec)) {
        return v.clone();
    }
    let work = prec + GUARD;
    let third = HPReal::from_ratio(&BigRational::new(BigInt::one(), BigInt::from(3)), work);
    let t2 = third.mul(&third);
    let mut term = third.clone();
    let mut sum = third;
    let mut n: i64 = 3;
    loop {
        term = term.mul(&t2);
        let contrib = term.div(&HPReal::from_i64(n, work));
        if contrib.is_zero() || sum.msb() - contrib.msb() > work as i128 + 2 {
            break;
        }
        sum = sum.add(&contrib);
        n += 2;
    }
    let v = sum.shl(1).with_prec(prec);
    constant_cache().lock().unwrap().insert((0, prec), v.clone());
    v
}

/// Euler's number at the given precision.
pub fn e_const(prec: u32) -> HPReal {
    if let Some(v) = constant_cache().lock().unwrap().get(&(1, prec)) {
        return v.clone();
    }
    let v = HPReal::one(prec + GUARD).exp().with_prec(prec);
    constant_cache().lock().unwrap().insert((1, prec), v.clone());
    v
}
