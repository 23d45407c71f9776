//! Exact calculus on exp-monomial functions.
//!
//! The function class is finite sums of terms
//!
//! ```text
//! c * e^p * prod_i x_i^(a_i + b_i*alpha) * prod_i exp(s_i * (1 - x_i^-alpha))
//! ```
//!
//! with all of `c`, `a_i`, `b_i`, `s_i` exact rationals, `p` a nonnegative
//! integer, and `alpha` a fixed positive rational attached to the whole
//! expression. The class is closed under addition, multiplication, and
//! partial differentiation, so arbitrary-order derivatives are computed with
//! rational arithmetic only; floating point enters solely at evaluation.
//!
//! Exponents are the pairs `(a, b)` standing for `a + b*alpha` with `alpha`
//! treated as transcendental: two exponents are equal iff both components
//! are. Numeric coincidences at the attached rational `alpha` surface only
//! when evaluating.

use crate::error::{MildError, Result};
use crate::hpreal::{e_const, HPReal};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

/// Extra working bits used inside evaluation contexts.
const EVAL_GUARD: u32 = 64;

/// The positive rational exponent parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alpha(BigRational);

impl Alpha {
    pub fn new(value: BigRational) -> Result<Self> {
        if value.is_positive() {
            Ok(Alpha(value))
        } else {
            Err(MildError::InvalidInput(format!(
                "alpha must be positive, got {value}"
            )))
        }
    }

    pub fn from_u64(v: u64) -> Self {
        Alpha(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn value(&self) -> &BigRational {
        &self.0
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Exponent `a + b*alpha` of a single variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AlphaExponent {
    pub a: BigRational,
    pub b: BigRational,
}

impl AlphaExponent {
    pub fn new(a: BigRational, b: BigRational) -> Self {
        AlphaExponent { a, b }
    }

    pub fn zero() -> Self {
        AlphaExponent { a: BigRational::zero(), b: BigRational::zero() }
    }

    pub fn is_zero(&self) -> bool {
        self.a.is_zero() && self.b.is_zero()
    }

    /// The exponent's value at the attached rational `alpha`.
    fn at(&self, alpha: &BigRational) -> BigRational {
        &self.a + &self.b * alpha
    }
}

/// One term `coeff * e^epow * prod x_i^pows[i] * prod exp(weights[i]*(1-x_i^-alpha))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpTerm {
    pub coeff: BigRational,
    pub epow: u64,
    pub pows: Vec<AlphaExponent>,
    pub weights: Vec<BigRational>,
}

impl ExpTerm {
    pub fn new(
        coeff: BigRational,
        epow: u64,
        pows: Vec<AlphaExponent>,
        weights: Vec<BigRational>,
    ) -> Self {
        ExpTerm { coeff, epow, pows, weights }
    }

    /// Canonical sort key: flattened exponents, then weights, then e-power.
    fn key(&self) -> (Vec<(BigRational, BigRational)>, Vec<BigRational>, u64) {
        (
            self.pows.iter().map(|p| (p.a.clone(), p.b.clone())).collect(),
            self.weights.clone(),
            self.epow,
        )
    }
}

/// Named constructors for the built-in functions of the class.
#[derive(Debug, Clone)]
pub enum FnKind {
    /// `P_alpha(x) = exp(1 - x^-alpha)` in the first variable.
    PAlpha,
    /// `u_alpha(x) = 1 - x^-alpha` in the first variable.
    UAlpha,
    /// `x^mu = prod x_i^mu_i` with rational exponents.
    Monomial(Vec<BigRational>),
    /// `exp(sum_i mu_i * (1 - x_i^-alpha))`.
    ExpOfLinear(Vec<BigRational>),
    /// The constant function `c`.
    Constant(BigRational),
}

/// A canonical finite sum of exp-monomial terms in `arity` variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpPoly {
    arity: usize,
    alpha: Alpha,
    terms: Vec<ExpTerm>,
}

impl ExpPoly {
    /// Build from raw terms, canonicalizing (merge, drop zeros, sort).
    pub fn from_terms(arity: usize, alpha: Alpha, terms: Vec<ExpTerm>) -> Result<Self> {
        if arity == 0 {
            return Err(MildError::InvalidInput("arity must be positive".into()));
        }
        for t in &terms {
            if t.pows.len() != arity || t.weights.len() != arity {
                return Err(MildError::InvalidInput(format!(
                    "term has {} pows / {} weights, arity is {arity}",
                    t.pows.len(),
                    t.weights.len()
                )));
            }
        }
        let mut merged: HashMap<_, ExpTerm> = HashMap::new();
        for t in terms {
            if t.coeff.is_zero() {
                continue;
            }
            match merged.entry(t.key()) {
                std::collections::hash_map::Entry::Occupied(mut e) => {
                    e.get_mut().coeff += &t.coeff;
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(t);
                }
            }
        }
        let mut terms: Vec<ExpTerm> =
            merged.into_values().filter(|t| !t.coeff.is_zero()).collect();
        terms.sort_by(|s, t| s.key().cmp(&t.key()));
        Ok(ExpPoly { arity, alpha, terms })
    }

    /// The zero function.
    pub fn zero(arity: usize, alpha: Alpha) -> Self {
        ExpPoly { arity: arity.max(1), alpha, terms: Vec::new() }
    }

    /// Build one of the named functions.
    pub fn construct(kind: FnKind, arity: usize, alpha: Alpha) -> Result<Self> {
        if arity == 0 {
            return Err(MildError::InvalidInput("arity must be positive".into()));
        }
        let zeros = vec![AlphaExponent::zero(); arity];
        let no_weight = vec![BigRational::zero(); arity];
        let terms = match kind {
            FnKind::PAlpha => {
                let mut w = no_weight;
                w[0] = BigRational::one();
                vec![ExpTerm::new(BigRational::one(), 0, zeros, w)]
            }
            FnKind::UAlpha => {
                let mut neg_alpha = zeros.clone();
                neg_alpha[0] = AlphaExponent::new(BigRational::zero(), -BigRational::one());
                vec![
                    ExpTerm::new(BigRational::one(), 0, zeros, no_weight.clone()),
                    ExpTerm::new(-BigRational::one(), 0, neg_alpha, no_weight),
                ]
            }
            FnKind::Monomial(mu) => {
                if mu.len() != arity {
                    return Err(MildError::InvalidInput(format!(
                        "monomial exponent vector has length {}, arity is {arity}",
                        mu.len()
                    )));
                }
                let pows = mu
                    .into_iter()
                    .map(|m| AlphaExponent::new(m, BigRational::zero()))
                    .collect();
                vec![ExpTerm::new(BigRational::one(), 0, pows, no_weight)]
            }
            FnKind::ExpOfLinear(mu) => {
                if mu.len() != arity {
                    return Err(MildError::InvalidInput(format!(
                        "weight vector has length {}, arity is {arity}",
                        mu.len()
                    )));
                }
                vec![ExpTerm::new(BigRational::one(), 0, zeros, mu)]
            }
            FnKind::Constant(c) => vec![ExpTerm::new(c, 0, zeros, no_weight)],
        };
        Self::from_terms(arity, alpha, terms)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn alpha(&self) -> &Alpha {
        &self.alpha
    }

    pub fn terms(&self) -> &[ExpTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.arity != other.arity {
            return Err(MildError::InvalidInput(format!(
                "arity mismatch: {} vs {}",
                self.arity, other.arity
            )));
        }
        if self.alpha != other.alpha {
            return Err(MildError::InvalidInput(format!(
                "alpha mismatch: {} vs {}",
                self.alpha, other.alpha
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self::from_terms(self.arity, self.alpha.clone(), terms)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for s in &self.terms {
            for t in &other.terms {
                let pows = s
                    .pows
                    .iter()
                    .zip(&t.pows)
                    .map(|(p, q)| AlphaExponent::new(&p.a + &q.a, &p.b + &q.b))
                    .collect();
                let weights =
                    s.weights.iter().zip(&t.weights).map(|(u, v)| u + v).collect();
                terms.push(ExpTerm::new(
                    &s.coeff * &t.coeff,
                    s.epow + t.epow,
                    pows,
                    weights,
                ));
            }
        }
        Self::from_terms(self.arity, self.alpha.clone(), terms)
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        if c.is_zero() {
            return Self::zero(self.arity, self.alpha.clone());
        }
        let terms = self
            .terms
            .iter()
            .map(|t| ExpTerm::new(&t.coeff * c, t.epow, t.pows.clone(), t.weights.clone()))
            .collect();
        ExpPoly { arity: self.arity, alpha: self.alpha.clone(), terms }
    }

    /// Exact partial derivative in variable `var`.
    ///
    /// Per-term rule in the active variable (`E^s` short for
    /// `exp(s(1 - x^-alpha))`):
    ///
    /// ```text
    /// d/dx [x^(a+b*alpha) E^s]
    ///   = (a + b*alpha) x^(a-1+b*alpha) E^s  +  s*alpha x^(a-1+(b-1)*alpha) E^s
    /// ```
    ///
    /// Both coefficients are rational because `alpha` is, while the exponent
    /// pairs keep `alpha` symbolic.
    pub fn differentiate(&self, var: usize) -> Result<Self> {
        if var >= self.arity {
            return Err(MildError::InvalidInput(format!(
                "variable index {var} out of range for arity {}",
                self.arity
            )));
        }
        let alpha = self.alpha.value();
        let mut terms = Vec::with_capacity(self.terms.len() * 2);
        for t in &self.terms {
            let p = &t.pows[var];
            let pow_coeff = p.at(alpha);
            if !pow_coeff.is_zero() {
                let mut pows = t.pows.clone();
                pows[var] = AlphaExponent::new(&p.a - BigRational::one(), p.b.clone());
                terms.push(ExpTerm::new(&t.coeff * pow_coeff, t.epow, pows, t.weights.clone()));
            }
            let s = &t.weights[var];
            if !s.is_zero() {
                let mut pows = t.pows.clone();
                pows[var] = AlphaExponent::new(
                    &p.a - BigRational::one(),
                    &p.b - BigRational::one(),
                );
                terms.push(ExpTerm::new(
                    &t.coeff * s * alpha,
                    t.epow,
                    pows,
                    t.weights.clone(),
                ));
            }
        }
        Self::from_terms(self.arity, self.alpha.clone(), terms)
    }

    /// Mixed partial of multi-order `nu` (entry `i` = order in variable `i`).
    pub fn derivative_multi(&self, nu: &[usize]) -> Result<Self> {
        if nu.len() != self.arity {
            return Err(MildError::InvalidInput(format!(
                "multi-index length {} does not match arity {}",
                nu.len(),
                self.arity
            )));
        }
        let mut cur = self.clone();
        for (var, &k) in nu.iter().enumerate() {
            for _ in 0..k {
                cur = cur.differentiate(var)?;
            }
        }
        Ok(cur)
    }

    /// All derivatives `d^0..d^n_max` in variable 0 (univariate convenience).
    pub fn derivatives_up_to(&self, n_max: usize) -> Result<Vec<Self>> {
        let mut out = Vec::with_capacity(n_max + 1);
        out.push(self.clone());
        for n in 0..n_max {
            let next = out[n].differentiate(0)?;
            out.push(next);
        }
        Ok(out)
    }

    /// Value at a rational point with every coordinate in `(0, 1]`.
    pub fn evaluate(&self, point: &[BigRational], precision_bits: u32) -> Result<HPReal> {
        let ctx = EvalCtx::new(&self.alpha, point, precision_bits)?;
        self.eval_with(&ctx)
    }

    /// Value using a shared per-point context (reuses the expensive
    /// per-variable transcendentals across many polynomials).
    pub fn eval_with(&self, ctx: &EvalCtx) -> Result<HPReal> {
        if ctx.vars.len() != self.arity {
            return Err(MildError::InvalidInput(format!(
                "evaluation point has {} coordinates, arity is {}",
                ctx.vars.len(),
                self.arity
            )));
        }
        if self.alpha != ctx.alpha {
            return Err(MildError::InvalidInput(format!(
                "context alpha {} does not match expression alpha {}",
                ctx.alpha, self.alpha
            )));
        }
        let work = ctx.work;
        let mut sum = HPReal::zero(work);
        for t in &self.terms {
            let mut acc = HPReal::from_ratio(&t.coeff, work);
            if t.epow > 0 {
                acc = acc.mul(&ctx.e_pow(t.epow));
            }
            for (i, p) in t.pows.iter().enumerate() {
                if !p.is_zero() {
                    acc = acc.mul(&ctx.pow_alpha(i, p));
                }
            }
            for (i, s) in t.weights.iter().enumerate() {
                if !s.is_zero() {
                    acc = acc.mul(&ctx.weight_factor(i, s));
                }
            }
            sum = sum.add(&acc);
        }
        Ok(sum.with_prec(ctx.prec))
    }

    /// Serialize to the interchange JSON format.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ExpPolyDto::from(self)).expect("ExpPoly serializes")
    }

    /// Parse the interchange JSON format.
    pub fn from_json(s: &str) -> Result<Self> {
        let dto: ExpPolyDto = serde_json::from_str(s)
            .map_err(|e| MildError::Malformed(format!("ExpPoly JSON: {e}")))?;
        dto.try_into()
    }
}

// ---------------------------------------------------------------------------
// Evaluation context
// ---------------------------------------------------------------------------

/// Cached per-point quantities shared across many evaluations at one point.
pub struct EvalCtx {
    alpha: Alpha,
    prec: u32,
    work: u32,
    vars: Vec<VarCtx>,
    e_pows: RefCell<HashMap<u64, HPReal>>,
}

struct VarCtx {
    /// The coordinate itself at working precision.
    x: HPReal,
    /// `ln x`, computed lazily (integer exponent pairs avoid it).
    ln_x: RefCell<Option<HPReal>>,
    /// `t = x^-alpha`.
    t: HPReal,
    /// `1 - t`, the exponent driver of the weight factors.
    one_minus_t: HPReal,
    /// Cache `s -> exp(s * (1 - t))` for the distinct weights seen.
    weight_cache: RefCell<HashMap<BigRational, HPReal>>,
}

impl EvalCtx {
    pub fn new(alpha: &Alpha, point: &[BigRational], precision_bits: u32) -> Result<Self> {
        if precision_bits < 64 {
            return Err(MildError::InvalidInput(format!(
                "precision_bits must be at least 64, got {precision_bits}"
            )));
        }
        if point.is_empty() {
            return Err(MildError::InvalidInput("empty evaluation point".into()));
        }
        let work = precision_bits + EVAL_GUARD;
        let mut vars = Vec::with_capacity(point.len());
        for (i, c) in point.iter().enumerate() {
            if !c.is_positive() || c > &BigRational::one() {
                return Err(MildError::DomainViolation(format!(
                    "coordinate {i} = {c} lies outside (0, 1]"
                )));
            }
            let x = HPReal::from_ratio(c, work);
            let t = x.pow_ratio(&-alpha.value().clone());
            let one_minus_t = HPReal::one(work).sub(&t);
            vars.push(VarCtx {
                x,
                ln_x: RefCell::new(None),
                t,
                one_minus_t,
                weight_cache: RefCell::new(HashMap::new()),
            });
        }
        Ok(EvalCtx {
            alpha: alpha.clone(),
            prec: precision_bits,
            work,
            vars,
            e_pows: RefCell::new(HashMap::new()),
        })
    }

    pub fn precision(&self) -> u32 {
        self.prec
    }

    fn e_pow(&self, p: u64) -> HPReal {
        self.e_pows
            .borrow_mut()
            .entry(p)
            .or_insert_with(|| e_const(self.work).pow_i64(p as i64))
            .clone()
    }

    /// `x_i^(a + b*alpha)`. Integer `(a, b)` take the fast path
    /// `x^a * t^(-b)` with `t = x^-alpha`; anything else goes through
    /// `exp((a + b*alpha) ln x)`.
    fn pow_alpha(&self, i: usize, p: &AlphaExponent) -> HPReal {
        let v = &self.vars[i];
        if let (Some(a), Some(b)) = (to_small_int(&p.a), to_small_int(&p.b)) {
            let mut acc = v.x.pow_i64(a);
            if b != 0 {
                acc = acc.mul(&v.t.pow_i64(-b));
            }
            return acc;
        }
        let ln_x = v
            .ln_x
            .borrow_mut()
            .get_or_insert_with(|| v.x.ln())
            .clone();
        let expo = p.at(self.alpha.value());
        ln_x.mul(&HPReal::from_ratio(&expo, self.work)).exp()
    }

    /// `exp(s * (1 - x_i^-alpha))`, cached per distinct weight.
    fn weight_factor(&self, i: usize, s: &BigRational) -> HPReal {
        let v = &self.vars[i];
        if let Some(f) = v.weight_cache.borrow().get(s) {
            return f.clone();
        }
        let f = if s.is_one() {
            v.one_minus_t.exp()
        } else {
            v.one_minus_t.mul(&HPReal::from_ratio(s, self.work)).exp()
        };
        v.weight_cache.borrow_mut().insert(s.clone(), f.clone());
        f
    }
}

fn to_small_int(r: &BigRational) -> Option<i64> {
    if r.is_integer() {
        r.numer().to_i64()
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Render a rational as `"p/q"` (plain `"p"` when the denominator is 1).
pub fn ratio_to_string(r: &BigRational) -> String {
    r.to_string()
}

/// Parse a rational from `"p/q"` or `"p"`. Decimal notation is rejected.
pub fn ratio_from_string(s: &str) -> Result<BigRational> {
    let s = s.trim();
    if s.contains('.') {
        return Err(MildError::Malformed(format!(
            "rational {s:?} must be written p/q, not as a decimal"
        )));
    }
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n, d),
        None => (s, "1"),
    };
    let n: BigInt = num
        .parse()
        .map_err(|_| MildError::Malformed(format!("bad rational numerator {num:?}")))?;
    let d: BigInt = den
        .parse()
        .map_err(|_| MildError::Malformed(format!("bad rational denominator {den:?}")))?;
    if d.is_zero() {
        return Err(MildError::Malformed(format!("zero denominator in {s:?}")));
    }
    Ok(BigRational::new(n, d))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ExpTermDto {
    coeff: String,
    epow: u64,
    pows: Vec<[String; 2]>,
    weights: Vec<String>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ExpPolyDto {
    arity: usize,
    alpha: String,
    terms: Vec<ExpTermDto>,
}

impl From<&ExpPoly> for ExpPolyDto {
    fn from(p: &ExpPoly) -> Self {
        ExpPolyDto {
            arity: p.arity,
            alpha: ratio_to_string(p.alpha.value()),
            terms: p
                .terms
                .iter()
                .map(|t| ExpTermDto {
                    coeff: ratio_to_string(&t.coeff),
                    epow: t.epow,
                    pows: t
                        .pows
                        .iter()
                        .map(|p| [ratio_to_string(&p.a), ratio_to_string(&p.b)])
                        .collect(),
                    weights: t.weights.iter().map(ratio_to_string).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ExpPolyDto> for ExpPoly {
    type Error = MildError;

    fn try_from(dto: ExpPolyDto) -> Result<Self> {
        let alpha = Alpha::new(ratio_from_string(&dto.alpha)?)?;
        let mut terms = Vec::with_capacity(dto.terms.len());
        for t in dto.terms {
            let mut pows = Vec::with_capacity(t.pows.len());
            for [a, b] in t.pows {
                pows.push(AlphaExponent::new(ratio_from_string(&a)?, ratio_from_string(&b)?));
            }
            let mut weights = Vec::with_capacity(t.weights.len());
            for w in t.weights {
                weights.push(ratio_from_string(&w)?);
            }
            terms.push(ExpTerm::new(ratio_from_string(&t.coeff)?, t.epow, pows, weights));
        }
        ExpPoly::from_terms(dto.arity, alpha, terms)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use std::cmp::Ordering;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn alpha(n: i64, d: i64) -> Alpha {
        Alpha::new(rat(n, d)).unwrap()
    }

    fn p1() -> ExpPoly {
        ExpPoly::construct(FnKind::PAlpha, 1, alpha(1, 1)).unwrap()
    }

    fn assert_hp_eq_ratio(v: &HPReal, want: &BigRational) {
        let w = HPReal::from_ratio(want, v.precision());
        let err = v.sub(&w).abs();
        assert!(
            err.is_zero()
                || (!w.is_zero()
                    && err.div(&w.abs()).cmp_value(
                        &HPReal::from_ratio(&rat(1, 1_000_000_000), v.precision())
                            .mul(&HPReal::from_ratio(&rat(1, 1_000_000_000), v.precision())),
                    ) == Ordering::Less),
            "value {} != {want}",
            v.to_decimal_string(30)
        );
    }

    #[test]
    fn u_alpha_has_the_two_expected_terms() {
        let u = ExpPoly::construct(FnKind::UAlpha, 1, alpha(1, 1)).unwrap();
        assert_eq!(u.terms().len(), 2);
        // Canonical order sorts (0,-1) before (0,0).
        assert_eq!(u.terms()[0].coeff, rat(-1, 1));
        assert_eq!(u.terms()[0].pows[0], AlphaExponent::new(rat(0, 1), rat(-1, 1)));
        assert_eq!(u.terms()[1].coeff, rat(1, 1));
        assert!(u.terms()[1].pows[0].is_zero());
    }

    #[test]
    fn p_alpha_is_a_single_weight_one_term() {
        let p = ExpPoly::construct(FnKind::PAlpha, 1, alpha(2, 1)).unwrap();
        assert_eq!(p.terms().len(), 1);
        let t = &p.terms()[0];
        assert!(t.pows[0].is_zero());
        assert_eq!(t.weights[0], rat(1, 1));
        assert_eq!(t.epow, 0);
    }

    #[test]
    fn exp_of_linear_is_product_of_single_factors() {
        let both =
            ExpPoly::construct(FnKind::ExpOfLinear(vec![rat(1, 1), rat(1, 1)]), 2, alpha(1, 1))
                .unwrap();
        let x_only =
            ExpPoly::construct(FnKind::ExpOfLinear(vec![rat(1, 1), rat(0, 1)]), 2, alpha(1, 1))
                .unwrap();
        let y_only =
            ExpPoly::construct(FnKind::ExpOfLinear(vec![rat(0, 1), rat(1, 1)]), 2, alpha(1, 1))
                .unwrap();
        assert_eq!(both, x_only.mul(&y_only).unwrap());
    }

    #[test]
    fn first_derivative_of_p1_is_canonical_single_term() {
        // d/dx exp(1 - x^-alpha) = alpha * x^(-1-alpha) * exp(1 - x^-alpha):
        // canonically pow (-1, -1); at alpha = 1 this is the x^-2 factor.
        let d = p1().differentiate(0).unwrap();
        assert_eq!(d.terms().len(), 1);
        let t = &d.terms()[0];
        assert_eq!(t.coeff, rat(1, 1));
        assert_eq!(t.pows[0], AlphaExponent::new(rat(-1, 1), rat(-1, 1)));
        assert_eq!(t.weights[0], rat(1, 1));
        // Numeric cross-check at x = 1/2: value is 4 * e^-1.
        let v = d.evaluate(&[rat(1, 2)], 128).unwrap();
        let want = HPReal::from_i64(4, 128).mul(&e_const(128).pow_i64(-1));
        assert!(v.sub(&want).abs().to_f64() < 1e-30);
    }

    #[test]
    fn higher_p1_derivatives_at_one_match_hand_values() {
        // At x = 1 all factors are exact, so values are exact integers:
        // P'' = (x^(-2-2a) - (1+a) x^(-2-a)) E -> 1 - 2 = -1 at alpha = 1;
        // P''' -> +1.
        let ds = p1().derivatives_up_to(3).unwrap();
        let at1 = |p: &ExpPoly| p.evaluate(&[rat(1, 1)], 128).unwrap();
        assert_eq!(at1(&ds[0]).cmp_value(&HPReal::one(128)), Ordering::Equal);
        assert_eq!(at1(&ds[1]).cmp_value(&HPReal::one(128)), Ordering::Equal);
        assert_eq!(
            at1(&ds[2]).cmp_value(&HPReal::from_i64(-1, 128)),
            Ordering::Equal
        );
        assert_eq!(at1(&ds[3]).cmp_value(&HPReal::one(128)), Ordering::Equal);
    }

    #[test]
    fn u1_derivatives_follow_the_rising_factorial_form() {
        // k-th derivative of 1 - x^-alpha is a single term with coefficient
        // (-1)^(k+1) alpha(alpha+1)...(alpha+k-1) and pow (-k, -1); at
        // alpha = 1 the coefficient is (-1)^(k+1) k!.
        let u = ExpPoly::construct(FnKind::UAlpha, 1, alpha(1, 1)).unwrap();
        let mut d = u;
        let mut fact = BigRational::one();
        for k in 1..=6i64 {
            d = d.differentiate(0).unwrap();
            fact *= rat(k, 1);
            assert_eq!(d.terms().len(), 1);
            let t = &d.terms()[0];
            let sign = if k % 2 == 1 { 1 } else { -1 };
            assert_eq!(t.coeff, &fact * rat(sign, 1));
            assert_eq!(t.pows[0], AlphaExponent::new(rat(-k, 1), rat(-1, 1)));
        }
    }

    #[test]
    fn evaluate_monomial_is_exact() {
        // x^(0 - 1*alpha) at alpha=2, x=1/2: (1/2)^-2 = 4.
        let m = ExpPoly::from_terms(
            1,
            alpha(2, 1),
            vec![ExpTerm::new(
                rat(1, 1),
                0,
                vec![AlphaExponent::new(rat(0, 1), rat(-1, 1))],
                vec![rat(0, 1)],
            )],
        )
        .unwrap();
        let v = m.evaluate(&[rat(1, 2)], 128).unwrap();
        assert_eq!(v.cmp_value(&HPReal::from_i64(4, 128)), Ordering::Equal);
    }

    #[test]
    fn evaluate_p1_prime_at_two_thirds() {
        // (9/4) e^(-1/2) = 1.36469398435342520310854895373015602...
        let d = p1().differentiate(0).unwrap();
        let v = d.evaluate(&[rat(2, 3)], 256).unwrap();
        let want = HPReal::from_ratio(&rat(9, 4), 256)
            .mul(&HPReal::from_ratio(&rat(-1, 2), 256).exp());
        let err = v.sub(&want).abs().div(&want);
        assert!(err.to_f64() < 1e-70, "relative error {}", err.to_f64());
        assert!(v.to_decimal_string(20).starts_with("1.3646939843534252031"));
    }

    #[test]
    fn evaluate_rejects_out_of_domain_points() {
        assert!(matches!(
            p1().evaluate(&[rat(0, 1)], 128),
            Err(MildError::DomainViolation(_))
        ));
        assert!(matches!(
            p1().evaluate(&[rat(3, 2)], 128),
            Err(MildError::DomainViolation(_))
        ));
        assert!(matches!(
            p1().evaluate(&[rat(1, 2)], 32),
            Err(MildError::InvalidInput(_))
        ));
    }

    #[test]
    fn mul_adds_exponents_and_weights() {
        let a = ExpPoly::construct(FnKind::Monomial(vec![rat(1, 1)]), 1, alpha(1, 1)).unwrap();
        let b = ExpPoly::from_terms(
            1,
            alpha(1, 1),
            vec![ExpTerm::new(
                rat(1, 1),
                0,
                vec![AlphaExponent::new(rat(0, 1), rat(-1, 1))],
                vec![rat(0, 1)],
            )],
        )
        .unwrap();
        let prod = a.mul(&b).unwrap();
        assert_eq!(prod.terms().len(), 1);
        assert_eq!(prod.terms()[0].pows[0], AlphaExponent::new(rat(1, 1), rat(-1, 1)));

        let p = p1();
        let sq = p.mul(&p).unwrap();
        assert_eq!(sq.terms().len(), 1);
        assert_eq!(sq.terms()[0].weights[0], rat(2, 1));
    }

    #[test]
    fn add_cancels_to_constant() {
        // (1 - x^-alpha) + x^-alpha = 1.
        let u = ExpPoly::construct(FnKind::UAlpha, 1, alpha(1, 1)).unwrap();
        let inv = ExpPoly::from_terms(
            1,
            alpha(1, 1),
            vec![ExpTerm::new(
                rat(1, 1),
                0,
                vec![AlphaExponent::new(rat(0, 1), rat(-1, 1))],
                vec![rat(0, 1)],
            )],
        )
        .unwrap();
        let one = ExpPoly::construct(FnKind::Constant(rat(1, 1)), 1, alpha(1, 1)).unwrap();
        assert_eq!(u.add(&inv).unwrap(), one);
    }

    #[test]
    fn arity_and_alpha_mismatches_are_rejected() {
        let a = p1();
        let b = ExpPoly::construct(FnKind::PAlpha, 1, alpha(2, 1)).unwrap();
        assert!(matches!(a.add(&b), Err(MildError::InvalidInput(_))));
        let c = ExpPoly::construct(FnKind::Constant(rat(1, 1)), 2, alpha(1, 1)).unwrap();
        assert!(matches!(a.mul(&c), Err(MildError::InvalidInput(_))));
    }

    #[test]
    fn json_roundtrip_preserves_canonical_form() {
        let d3 = p1().derivatives_up_to(3).unwrap().pop().unwrap();
        let json = d3.to_json();
        let back = ExpPoly::from_json(&json).unwrap();
        assert_eq!(d3, back);
        // Spot-check the wire format.
        assert!(json.contains("\"arity\":1"));
        assert!(json.contains("\"alpha\":\"1\""));
        assert!(json.contains("\"epow\":0"));
    }

    #[test]
    fn rational_strings_reject_decimals() {
        assert!(ratio_from_string("3/4").is_ok());
        assert!(ratio_from_string("-7").is_ok());
        assert!(matches!(ratio_from_string("0.75"), Err(MildError::Malformed(_))));
        assert!(matches!(ratio_from_string("1/0"), Err(MildError::Malformed(_))));
    }

    #[test]
    fn shared_context_matches_fresh_evaluation() {
        let ds = p1().derivatives_up_to(8).unwrap();
        let pt = [rat(2, 5)];
        let ctx = EvalCtx::new(&alpha(1, 1), &pt, 192).unwrap();
        for d in &ds {
            let a = d.eval_with(&ctx).unwrap();
            let b = d.evaluate(&pt, 192).unwrap();
            assert_eq!(a.cmp_value(&b), Ordering::Equal, "shared vs fresh context");
        }
    }

    #[test]
    fn evaluate_survives_doubly_exponential_underflow_region() {
        // At x = 2^-40, alpha = 2: exp(1 - 2^80) is astronomically small but
        // must stay a finite positive value, not a flushed zero.
        let p = ExpPoly::construct(FnKind::PAlpha, 1, alpha(2, 1)).unwrap();
        let v = p.evaluate(&[rat(1, 1 << 40)], 128).unwrap();
        assert!(v.is_positive());
        assert!(v.to_f64() == 0.0, "far below f64 range");
    }

    #[test]
    fn rational_alpha_exponents_evaluate_consistently() {
        // alpha = 3/2: derivative coefficients involve alpha numerically but
        // exponents keep it symbolic; cross-check first derivative of
        // P_(3/2) at x = 1/4 against the closed form
        // alpha x^(-1-alpha) exp(1 - x^-alpha).
        let a = alpha(3, 2);
        let p = ExpPoly::construct(FnKind::PAlpha, 1, a.clone()).unwrap();
        let d = p.differentiate(0).unwrap();
        let v = d.evaluate(&[rat(1, 4)], 256).unwrap();
        let x = HPReal::from_ratio(&rat(1, 4), 256);
        let av = HPReal::from_ratio(&rat(3, 2), 256);
        let xma = x.pow_ratio(&rat(-3, 2)); // x^-alpha = 8
        let want = av
            .mul(&x.pow_ratio(&rat(-5, 2)))
            .mul(&HPReal::one(256).sub(&xma).exp());
        let rel = v.sub(&want).abs().div(&want.abs());
        assert!(rel.to_f64() < 1e-70);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_term(arity: usize) -> impl Strategy<Value = ExpTerm> {
            (
                (-4i64..=4).prop_filter("nonzero", |n| *n != 0),
                proptest::collection::vec((-3i64..=3, -2i64..=2), arity),
                proptest::collection::vec(0i64..=2, arity),
            )
                .prop_map(|(c, pows, ws)| {
                    ExpTerm::new(
                        rat(c, 1),
                        0,
                        pows.into_iter()
                            .map(|(a, b)| AlphaExponent::new(rat(a, 1), rat(b, 1)))
                            .collect(),
                        ws.into_iter().map(|w| rat(w, 1)).collect(),
                    )
                })
        }

        fn arb_poly(arity: usize) -> impl Strategy<Value = ExpPoly> {
            (
                proptest::collection::vec(arb_term(arity), 1..=4),
                prop_oneof![Just(rat(1, 1)), Just(rat(1, 2)), Just(rat(3, 2)), Just(rat(2, 1))],
            )
                .prop_map(move |(terms, a)| {
                    ExpPoly::from_terms(arity, Alpha::new(a).unwrap(), terms).unwrap()
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn mixed_partials_commute(p in arb_poly(3)) {
                let dxy = p.differentiate(0).unwrap().differentiate(1).unwrap();
                let dyx = p.differentiate(1).unwrap().differentiate(0).unwrap();
                prop_assert_eq!(dxy, dyx);
            }

            #[test]
            fn differentiation_is_linear(p in arb_poly(2), q in arb_poly(2)) {
                prop_assume!(p.alpha() == q.alpha());
                let lhs = p.add(&q).unwrap().differentiate(0).unwrap();
                let rhs = p.differentiate(0).unwrap().add(&q.differentiate(0).unwrap()).unwrap();
                prop_assert_eq!(lhs, rhs);
            }

            #[test]
            fn addition_is_commutative_and_zero_is_neutral(
                p in arb_poly(2),
                q in arb_poly(2),
            ) {
                prop_assume!(p.alpha() == q.alpha());
                prop_assert_eq!(p.add(&q).unwrap(), q.add(&p).unwrap());
                prop_assert_eq!(p.add(&q.scale(&BigRational::zero())).unwrap(), p.clone());
            }

            #[test]
            fn central_difference_matches_exact_derivative(
                p in arb_poly(1),
                xs in (256i64..=768),
            ) {
                // x in [1/4, 3/4]; step 2^-20; expect 1e-8 relative agreement.
                let x = rat(xs, 1024);
                let h = rat(1, 1 << 20);
                let exact = p.differentiate(0).unwrap()
                    .evaluate(&[x.clone()], 256).unwrap();
                let fp = p.evaluate(&[&x + &h], 256).unwrap();
                let fm = p.evaluate(&[&x - &h], 256).unwrap();
                let approx = fp.sub(&fm).div(&HPReal::from_ratio(&(&h * rat(2, 1)), 256));
                let diff = approx.sub(&exact).abs();
                let scale = exact.abs().max_value(&HPReal::one(256));
                prop_assert!(
                    diff.div(&scale).to_f64() < 1e-8,
                    "fd mismatch: exact {} approx {}",
                    exact.to_decimal_string(20),
                    approx.to_decimal_string(20)
                );
            }
        }
    }
}
