//! Derivative-growth certificates and their calculus.
//!
//! A certificate `(A, B, C)` asserts `sup |f^(nu)(x)| <= B * A^|nu| *
//! (|nu|!)^(C+1)` over the domain; the weighted (weakly mild) variant
//! divides the right side by `x^nu`. This module constructs certificates
//! with explicit constants, combines them under composition and products,
//! verifies them against exact derivative oracles on dense grids with
//! critical-point refinement, fits empirical constants, and checks the two
//! closed-form auxiliary lemmas the constants rest on.
//!
//! Derived constant recipes (composition and products leave the constants
//! implicit in their usual statements):
//!
//! - Product: from the Leibniz rule and `k!(n-k)! <= n!` (univariate) or
//!   binomial-product bounds (multivariate), the product of `(A1,B1,C)` and
//!   `(A2,B2,C)` certificates satisfies `(A1+A2, B1*B2, max(C1,C2))`.
//! - Composition at general `C`: apply the `C = 0` composition constants to
//!   the `(C+1)`-th roots of the inputs and raise the results to the power
//!   `C+1`; this is sound because `sum a_i^(C+1) <= (sum a_i)^(C+1)` lets
//!   the rooted bound chain absorb the `(n!)^(C+1)` growth. Every emitted
//!   general-`C` certificate is additionally re-verified numerically before
//!   being relied on.

use crate::error::{MildError, Result};
use crate::faadibruno::{compose_derivative, factorial, MultiIndex, SequenceOracle};
use crate::hpreal::HPReal;
use crate::ratcalc::{ratio_to_string, Alpha, AlphaExponent, ExpPoly, EvalCtx, FnKind};
use crate::scalar::Scalar;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

/// Whether the bound is plain or carries the `x^-nu` weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertKind {
    Mild,
    WeaklyMild,
}

impl fmt::Display for CertKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CertKind::Mild => write!(f, "mild"),
            CertKind::WeaklyMild => write!(f, "weakly_mild"),
        }
    }
}

/// A growth certificate `(A, B, C)` of the given kind.
#[derive(Debug, Clone)]
pub struct MildCert {
    pub a: Scalar,
    pub b: Scalar,
    pub c: BigRational,
    pub kind: CertKind,
}

impl MildCert {
    pub fn new(a: Scalar, b: Scalar, c: BigRational, kind: CertKind) -> Result<Self> {
        if !a.is_positive() {
            return Err(MildError::InvalidInput("certificate needs A > 0".into()));
        }
        if !b.is_positive() {
            return Err(MildError::InvalidInput("certificate needs B > 0".into()));
        }
        if c.is_negative() {
            return Err(MildError::InvalidInput("certificate needs C >= 0".into()));
        }
        Ok(MildCert { a, b, c, kind })
    }

    pub fn mild(a: Scalar, b: Scalar, c: BigRational) -> Result<Self> {
        Self::new(a, b, c, CertKind::Mild)
    }

    /// The bound `B * A^n * (n!)^(C+1)` at total order `n`.
    pub fn bound(&self, n: usize, prec: u32) -> HPReal {
        let a = self.a.to_hp(prec);
        let b = self.b.to_hp(prec);
        let fact = HPReal::from_bigint(&factorial(n), prec);
        let cp1 = &self.c + BigRational::one();
        b.mul(&a.pow_i64(n as i64)).mul(&fact.pow_ratio(&cp1))
    }
}

impl fmt::Display for MildCert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})-{}", self.a, self.b, self.c, self.kind)
    }
}

/// Certificate for `P_alpha(x) = exp(1 - x^-alpha)` on `(0, 1)`:
/// `(6*alpha, e, 1/alpha)` for `alpha >= 1`, and
/// `(3*(2/alpha)^(1/alpha), e, 1/alpha)` for `0 < alpha < 1`.
pub fn p_alpha_cert(alpha: &Alpha) -> Result<MildCert> {
    let av = alpha.value();
    let one = BigRational::one();
    let a = if av >= &one {
        Scalar::from_ratio(av * BigRational::from_integer(BigInt::from(6)))
    } else {
        let base = Scalar::from_ratio(BigRational::from_integer(BigInt::from(2)) / av);
        let inv = one.clone() / av;
        Scalar::from_i64(3).mul(&base.pow_ratio(&inv))
    };
    MildCert::mild(a, Scalar::e(), &one / av)
}

/// Certificate for a composition `f . g` from certificates of `f` and `g`.
///
/// At `C = 0` the constants are `A = A_g(1 + A_f B_g)` and
/// `B = A_f B_f B_g / (1 + A_f B_g)`; at general `C = max(C_f, C_g)` the
/// same formula is applied to the `(C+1)`-th roots of the constants and the
/// result raised back to the power `C+1` (see the module docs).
pub fn compose_certs(cf: &MildCert, cg: &MildCert) -> Result<MildCert> {
    if cf.kind != CertKind::Mild || cg.kind != CertKind::Mild {
        return Err(MildError::IncompatibleCerts(
            "composition takes plain certificates on both sides".into(),
        ));
    }
    let c = cf.c.clone().max(cg.c.clone());
    let cp1 = &c + BigRational::one();
    let root = BigRational::one() / &cp1;
    let af = cf.a.pow_ratio(&root);
    let bf = cf.b.pow_ratio(&root);
    let ag = cg.a.pow_ratio(&root);
    let bg = cg.b.pow_ratio(&root);
    let one_plus = Scalar::one().add(&af.mul(&bg));
    let a0 = ag.mul(&one_plus);
    let b0 = mul_div(&af.mul(&bf).mul(&bg), &one_plus);
    MildCert::mild(a0.pow_ratio(&cp1), b0.pow_ratio(&cp1), c)
}

/// `x / y` on scalars (division = multiply by `y^-1`).
fn mul_div(x: &Scalar, y: &Scalar) -> Scalar {
    x.mul(&y.pow_ratio(&-BigRational::one()))
}

/// Certificate for a product of two certified functions:
/// `(A1 + A2, B1 * B2, max(C1, C2))` via the Leibniz rule.
pub fn product_certs(c1: &MildCert, c2: &MildCert) -> Result<MildCert> {
    if c1.kind != CertKind::Mild || c2.kind != CertKind::Mild {
        return Err(MildError::IncompatibleCerts(
            "products take plain certificates on both sides".into(),
        ));
    }
    MildCert::mild(
        c1.a.add(&c2.a),
        c1.b.mul(&c2.b),
        c1.c.clone().max(c2.c.clone()),
    )
}

/// Upgrade a weighted zeroth/first-order description to a plain certificate:
/// a function that is weakly `(A, B, 0)`-mild with weakly `(A, B, 0)`-mild
/// first derivative, precomposed with `P_alpha`, is
/// `(A', e*B, 1 + 1/alpha)`-mild with
/// `A' = ((alpha+1)/alpha)^((alpha+1)/alpha) * 2*alpha*(A+1)`.
///
/// Only the `alpha >= 1` regime carries explicit constants; smaller `alpha`
/// is rejected as out of the supported range.
pub fn weak_compose_cert(a: &Scalar, b: &Scalar, alpha: &Alpha) -> Result<MildCert> {
    let av = alpha.value();
    if av < &BigRational::one() {
        return Err(MildError::UnsupportedRegime(format!(
            "weighted-composition constants are only available for alpha >= 1, got {av}"
        )));
    }
    if !a.is_positive() || !b.is_positive() {
        return Err(MildError::InvalidInput("weighted description needs A, B > 0".into()));
    }
    let ratio = (av + BigRational::one()) / av;
    let lead = Scalar::from_ratio(ratio.clone()).pow_ratio(&ratio);
    let two_alpha = Scalar::from_ratio(av * BigRational::from_integer(BigInt::from(2)));
    let a_out = lead.mul(&two_alpha).mul(&a.add(&Scalar::one()));
    let b_out = Scalar::e().mul(b);
    let c_out = BigRational::one() + BigRational::one() / av;
    MildCert::mild(a_out, b_out, c_out)
}

/// Supremum scale of the first-order partials of the monomial `x^mu` on the
/// open unit cube, normalized per the power-substitution bound:
/// `M = max_I (sup |d_I x^mu| / (mu_I * e^|mu'|))^(1/2)` over indices `I`
/// with `mu_I != 0`, where `mu' = mu - e_I`. For a monomial the partial
/// supremum is `mu_I` in closed form, so each index yields
/// `e^(-(|mu|-1)/2)` exactly. The all-zero exponent (a constant) returns 1.
pub fn compute_m(mu: &[BigRational]) -> Result<Scalar> {
    let one = BigRational::one();
    for (i, m) in mu.iter().enumerate() {
        if m.is_negative() {
            return Err(MildError::InvalidInput(format!(
                "exponent {m} at index {i} is negative: partials are unbounded near 0"
            )));
        }
        if !m.is_zero() && m < &one {
            return Err(MildError::InvalidInput(format!(
                "exponent {m} at index {i} lies in (0,1): the partial in that \
                 variable is unbounded near 0"
            )));
        }
    }
    let total: BigRational = mu.iter().sum();
    let mut best: Option<Scalar> = None;
    for m in mu {
        if m.is_zero() {
            continue;
        }
        // sup |d_I x^mu| = mu_I on the cube; the ratio collapses to
        // e^(-|mu'|) with |mu'| = |mu| - 1.
        let sup = Scalar::from_ratio(m.clone());
        let scale = Scalar::from_ratio(m.clone())
            .mul(&Scalar::e_pow(&total - &one));
        let candidate = mul_div(&sup, &scale).pow_ratio(&BigRational::new(
            BigInt::one(),
            BigInt::from(2),
        ));
        best = Some(match best {
            None => candidate,
            Some(b) => b.max_value(&candidate),
        });
    }
    Ok(best.unwrap_or_else(Scalar::one))
}

/// Certificate for `P_alpha^mu := exp(sum mu_i (1 - x_i^-alpha))` style
/// power substitutions: `(2*alpha*(2mN + 1), e^|mu| * M^2, 1/alpha)` with
/// `N = max |mu_i|` and `M` from [`compute_m`].
pub fn abm_compose_cert(
    mu: &[BigRational],
    m: usize,
    alpha: &Alpha,
    m_const: &Scalar,
) -> Result<MildCert> {
    if mu.len() != m {
        return Err(MildError::InvalidInput(format!(
            "exponent vector has length {}, expected {m}",
            mu.len()
        )));
    }
    let av = alpha.value();
    if av < &BigRational::one() {
        return Err(MildError::UnsupportedRegime(format!(
            "power-substitution constants are only available for alpha >= 1, got {av}"
        )));
    }
    if !m_const.is_positive() {
        return Err(MildError::InvalidInput("M must be positive".into()));
    }
    let n_big = mu
        .iter()
        .map(|v| v.abs())
        .max()
        .unwrap_or_else(BigRational::zero);
    let two = BigRational::from_integer(BigInt::from(2));
    let a = Scalar::from_ratio(
        av * &two * (&two * BigRational::from_integer(BigInt::from(m as i64)) * n_big
            + BigRational::one()),
    );
    let total: BigRational = mu.iter().map(|v| v.abs()).sum();
    let b = Scalar::e_pow(total).mul(&m_const.mul(m_const));
    MildCert::mild(a, b, BigRational::one() / av)
}

// ---------------------------------------------------------------------------
// Derivative families (verification oracles)
// ---------------------------------------------------------------------------

/// Exact derivative values of one function at arbitrary rational points:
/// the numeric oracle verification sweeps consume.
pub trait DerivativeFamily {
    fn arity(&self) -> usize;

    /// Values of `f^(nu)` for each index in `nus` at one point. A single
    /// call shares per-point work across the whole batch.
    fn eval_batch(
        &self,
        nus: &[MultiIndex],
        point: &[BigRational],
        prec: u32,
    ) -> Result<Vec<HPReal>>;
}

/// Family backed by exact symbolic differentiation of an expression.
pub struct PolyFamily {
    base: ExpPoly,
    cache: Mutex<HashMap<Vec<usize>, ExpPoly>>,
}

impl PolyFamily {
    pub fn new(base: ExpPoly) -> Self {
        PolyFamily { base, cache: Mutex::new(HashMap::new()) }
    }

    /// The exact derivative expression at the index (memoized; each order
    /// extends a cached lower-order derivative by one differentiation).
    pub fn poly(&self, nu: &MultiIndex) -> Result<ExpPoly> {
        if let Some(p) = self.cache.lock().unwrap().get(nu.entries()) {
            return Ok(p.clone());
        }
        let p = match nu.entries().iter().position(|&k| k > 0) {
            None => self.base.clone(),
            Some(axis) => {
                let mut parent = nu.entries().to_vec();
                parent[axis] -= 1;
                self.poly(&MultiIndex::new(parent))?.differentiate(axis)?
            }
        };
        self.cache.lock().unwrap().insert(nu.entries().to_vec(), p.clone());
        Ok(p)
    }

    pub fn base(&self) -> &ExpPoly {
        &self.base
    }
}

impl DerivativeFamily for PolyFamily {
    fn arity(&self) -> usize {
        self.base.arity()
    }

    fn eval_batch(
        &self,
        nus: &[MultiIndex],
        point: &[BigRational],
        prec: u32,
    ) -> Result<Vec<HPReal>> {
        let ctx = EvalCtx::new(self.base.alpha(), point, prec)?;
        nus.iter().map(|nu| self.poly(nu)?.eval_with(&ctx)).collect()
    }
}

/// Univariate family defined by a closure `(order, point, prec) -> value`.
pub struct ClosureFamily<F: Fn(usize, &BigRational, u32) -> Result<HPReal>> {
    f: F,
}

impl<F: Fn(usize, &BigRational, u32) -> Result<HPReal>> ClosureFamily<F> {
    pub fn new(f: F) -> Self {
        ClosureFamily { f }
    }
}

impl<F: Fn(usize, &BigRational, u32) -> Result<HPReal>> DerivativeFamily for ClosureFamily<F> {
    fn arity(&self) -> usize {
        1
    }

    fn eval_batch(
        &self,
        nus: &[MultiIndex],
        point: &[BigRational],
        prec: u32,
    ) -> Result<Vec<HPReal>> {
        nus.iter().map(|nu| (self.f)(nu.order(), &point[0], prec)).collect()
    }
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

/// Where and how densely to sample when estimating suprema.
#[derive(Debug, Clone)]
pub struct GridSpec {
    /// Uniform points per axis on the bulk interval.
    pub grid_points: usize,
    /// Bisection iterations per critical-point bracket.
    pub refine_iters: usize,
    /// Working precision of the sweep.
    pub precision_bits: u32,
    /// Per-axis closed rational intervals; `None` uses the default composite
    /// grid on `(0, 1]` (geometric tail near 0 plus uniform bulk).
    pub intervals: Option<Vec<(BigRational, BigRational)>>,
}

impl GridSpec {
    /// Default sweep over `(0, 1]^m`.
    pub fn standard(grid_points: usize, precision_bits: u32) -> Self {
        GridSpec { grid_points, refine_iters: 48, precision_bits, intervals: None }
    }

    /// Sweep over the product of the given closed intervals.
    pub fn on_box(
        intervals: Vec<(BigRational, BigRational)>,
        grid_points: usize,
        precision_bits: u32,
    ) -> Self {
        GridSpec { grid_points, refine_iters: 48, precision_bits, intervals: Some(intervals) }
    }

    /// Sample points along one axis, ascending.
    ///
    /// The default grid is geometric `2^-40 .. 2^-3` (one point per octave;
    /// everything in scope decays super-polynomially toward 0) plus
    /// `grid_points + 1` uniform points on `[1/4, 1]`.
    fn axis_points(&self, axis: usize) -> Result<Vec<BigRational>> {
        let g = self.grid_points.max(2);
        match &self.intervals {
            None => {
                let mut pts = Vec::with_capacity(g + 39);
                for k in (3..=40u32).rev() {
                    pts.push(BigRational::new(BigInt::one(), BigInt::one() << k));
                }
                let quarter = BigRational::new(BigInt::one(), BigInt::from(4));
                let width = BigRational::new(BigInt::from(3), BigInt::from(4));
                for j in 0..=g {
                    pts.push(
                        &quarter
                            + &width * BigRational::new(BigInt::from(j), BigInt::from(g)),
                    );
                }
                Ok(pts)
            }
            Some(boxes) => {
                let (lo, hi) = boxes.get(axis).ok_or_else(|| {
                    MildError::InvalidInput(format!("grid has no interval for axis {axis}"))
                })?;
                if lo >= hi || !lo.is_positive() || hi > &BigRational::one() {
                    return Err(MildError::InvalidInput(format!(
                        "axis {axis} interval [{lo}, {hi}] must satisfy 0 < lo < hi <= 1"
                    )));
                }
                let width = hi - lo;
                Ok((0..=g)
                    .map(|j| lo + &width * BigRational::new(BigInt::from(j), BigInt::from(g)))
                    .collect())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// One verified order: estimated supremum vs. certified bound.
#[derive(Debug, Clone)]
pub struct OrderRow {
    pub nu: Vec<usize>,
    pub sup: HPReal,
    pub bound: HPReal,
    pub margin: HPReal,
    pub witness: Vec<BigRational>,
}

/// Result of sweeping a certificate against a derivative family.
#[derive(Debug)]
pub struct BoundReport {
    pub cert: MildCert,
    pub orders: Vec<OrderRow>,
    pub pass: bool,
    pub precision_bits: u32,
}

/// Decimal digits used when rendering report reals.
const REPORT_DIGITS: usize = 40;

#[derive(serde::Serialize)]
struct CertDto {
    #[serde(rename = "A")]
    a: String,
    #[serde(rename = "B")]
    b: String,
    #[serde(rename = "C")]
    c: String,
    kind: String,
}

#[derive(serde::Serialize)]
struct OrderRowDto {
    nu: Vec<usize>,
    sup: String,
    bound: String,
    margin: String,
    witness: Vec<String>,
}

#[derive(serde::Serialize)]
struct BoundReportDto {
    cert: CertDto,
    orders: Vec<OrderRowDto>,
    pass: bool,
    precision_bits: u32,
}

impl BoundReport {
    pub fn to_json(&self) -> String {
        let dto = BoundReportDto {
            cert: cert_dto(&self.cert),
            orders: self
                .orders
                .iter()
                .map(|r| OrderRowDto {
                    nu: r.nu.clone(),
                    sup: r.sup.to_decimal_string(REPORT_DIGITS),
                    bound: r.bound.to_decimal_string(REPORT_DIGITS),
                    margin: r.margin.to_decimal_string(REPORT_DIGITS),
                    witness: r.witness.iter().map(ratio_to_string).collect(),
                })
                .collect(),
            pass: self.pass,
            precision_bits: self.precision_bits,
        };
        serde_json::to_string_pretty(&dto).expect("report serializes")
    }
}

fn cert_dto(cert: &MildCert) -> CertDto {
    CertDto {
        a: cert.a.to_decimal_string(REPORT_DIGITS),
        b: cert.b.to_decimal_string(REPORT_DIGITS),
        c: ratio_to_string(&cert.c),
        kind: cert.kind.to_string(),
    }
}

impl MildCert {
    /// The report representation: `{"A", "B", "C", "kind"}` with 40-digit
    /// decimal strings for `A`, `B` and `"p/q"` for `C`.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(cert_dto(self)).expect("certificate serializes")
    }
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

/// Estimated suprema of `|f^(nu)|` (weighted by `x^nu` when asked) for every
/// index of total order up to `n_max`, with witnesses.
struct SupSweep {
    nus: Vec<MultiIndex>,
    sups: Vec<HPReal>,
    witnesses: Vec<Vec<BigRational>>,
}

/// Grid sweep plus one-axis bisection refinement of critical points.
fn estimate_sups(
    family: &dyn DerivativeFamily,
    n_max: usize,
    grid: &GridSpec,
    weighted: bool,
) -> Result<SupSweep> {
    let m = family.arity();
    let prec = grid.precision_bits;
    let nus = MultiIndex::all_with_order_between(m, 0, n_max);
    let axes: Vec<Vec<BigRational>> =
        (0..m).map(|ax| grid.axis_points(ax)).collect::<Result<_>>()?;

    if m == 1 {
        return estimate_sups_univariate(family, nus, &axes[0], grid, weighted);
    }

    let mut sups = vec![HPReal::zero(prec); nus.len()];
    let mut witnesses = vec![Vec::new(); nus.len()];

    // Dense pass over the grid (cartesian product across axes).
    let mut idx = vec![0usize; m];
    loop {
        let point: Vec<BigRational> =
            idx.iter().enumerate().map(|(ax, &i)| axes[ax][i].clone()).collect();
        let vals = family.eval_batch(&nus, &point, prec)?;
        for (j, v) in vals.iter().enumerate() {
            let v = apply_weight(v, &nus[j], &point, weighted, prec);
            if sups[j].cmp_value(&v) == Ordering::Less {
                sups[j] = v;
                witnesses[j] = point.clone();
            }
        }
        // Advance the odometer.
        let mut ax = 0;
        loop {
            if ax == m {
                // Refinement then return.
                refine_criticals(
                    family, &nus, &axes, grid, weighted, &mut sups, &mut witnesses,
                )?;
                return Ok(SupSweep { nus, sups, witnesses });
            }
            idx[ax] += 1;
            if idx[ax] < axes[ax].len() {
                break;
            }
            idx[ax] = 0;
            ax += 1;
        }
    }
}

fn apply_weight(
    v: &HPReal,
    nu: &MultiIndex,
    point: &[BigRational],
    weighted: bool,
    prec: u32,
) -> HPReal {
    let v = v.abs();
    if !weighted || nu.order() == 0 {
        return v;
    }
    let mut w = BigRational::one();
    for (x, &k) in point.iter().zip(nu.entries()) {
        if k > 0 {
            w *= x.pow(k as i32);
        }
    }
    v.mul(&HPReal::from_ratio(&w, prec))
}

/// Univariate sweep: keep the whole sampled profile per index, then polish
/// every local maximum of the (weighted) magnitude, not just the global
/// argmax — a coarse grid can rank a secondary peak above the true one, and
/// a peak's bracket can hide a max/min pair whose endpoint signs agree.
fn estimate_sups_univariate(
    family: &dyn DerivativeFamily,
    nus: Vec<MultiIndex>,
    axis: &[BigRational],
    grid: &GridSpec,
    weighted: bool,
) -> Result<SupSweep> {
    let prec = grid.precision_bits;
    let mut profiles: Vec<Vec<HPReal>> = vec![Vec::with_capacity(axis.len()); nus.len()];
    let mut sups = vec![HPReal::zero(prec); nus.len()];
    let mut witnesses = vec![Vec::new(); nus.len()];
    for x in axis {
        let point = vec![x.clone()];
        let vals = family.eval_batch(&nus, &point, prec)?;
        for (j, v) in vals.iter().enumerate() {
            let v = apply_weight(v, &nus[j], &point, weighted, prec);
            if sups[j].cmp_value(&v) == Ordering::Less {
                sups[j] = v.clone();
                witnesses[j] = point.clone();
            }
            profiles[j].push(v);
        }
    }
    let last = axis.len() - 1;
    for (j, nu) in nus.iter().enumerate() {
        let prof = &profiles[j];
        let mut next = nu.entries().to_vec();
        next[0] += 1;
        let pair = [nu.clone(), MultiIndex::new(next)];
        for i in 0..axis.len() {
            let le = |a: &HPReal, b: &HPReal| a.cmp_value(b) != Ordering::Greater;
            if (i > 0 && !le(&prof[i - 1], &prof[i]))
                || (i < last && !le(&prof[i + 1], &prof[i]))
            {
                continue;
            }
            // Skip plateau interiors (constant stretches need no polish).
            if i > 0
                && i < last
                && prof[i - 1].cmp_value(&prof[i]) == Ordering::Equal
                && prof[i + 1].cmp_value(&prof[i]) == Ordering::Equal
            {
                continue;
            }
            let lo = &axis[i.saturating_sub(1)];
            let hi = &axis[(i + 1).min(last)];
            refine_local_max(
                family, &pair, lo, &axis[i], hi, grid, weighted,
                &mut sups[j], &mut witnesses[j],
            )?;
        }
    }
    Ok(SupSweep { nus, sups, witnesses })
}

/// Polish one local maximum of |f^(nu)| on `[lo, hi]` around the sample at
/// `mid`: bisect the next-order derivative's sign change in each
/// sub-bracket that has one, tracking any larger magnitudes seen.
#[allow(clippy::too_many_arguments)]
fn refine_local_max(
    family: &dyn DerivativeFamily,
    pair: &[MultiIndex; 2],
    lo: &BigRational,
    mid: &BigRational,
    hi: &BigRational,
    grid: &GridSpec,
    weighted: bool,
    sup: &mut HPReal,
    witness: &mut Vec<BigRational>,
) -> Result<()> {
    let prec = grid.precision_bits;
    let sign_of = |x: &BigRational| -> Result<i8> {
        let vals = family.eval_batch(pair, &[x.clone()], prec)?;
        Ok(if vals[1].is_zero() {
            0
        } else if vals[1].is_negative() {
            -1
        } else {
            1
        })
    };
    let s_lo = sign_of(lo)?;
    let s_mid = sign_of(mid)?;
    let s_hi = sign_of(hi)?;
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let mut bisect = |mut a: BigRational, mut b: BigRational, sa: i8| -> Result<()> {
        for _ in 0..grid.refine_iters {
            let x = (&a + &b) * &half;
            let point = vec![x.clone()];
            let vals = family.eval_batch(pair, &point, prec)?;
            let v = apply_weight(&vals[0], &pair[0], &point, weighted, prec);
            if sup.cmp_value(&v) == Ordering::Less {
                *sup = v;
                *witness = point;
            }
            let sx = if vals[1].is_zero() {
                break;
            } else if vals[1].is_negative() {
                -1
            } else {
                1
            };
            if sx == sa {
                a = x;
            } else {
                b = x;
            }
        }
        Ok(())
    };
    if lo != mid && s_lo != s_mid && s_lo != 0 && s_mid != 0 {
        bisect(lo.clone(), mid.clone(), s_lo)?;
    }
    if mid != hi && s_mid != s_hi && s_mid != 0 && s_hi != 0 {
        bisect(mid.clone(), hi.clone(), s_mid)?;
    }
    Ok(())
}

/// For each index, walk each axis at the recorded witness and bisect on
/// sign changes of the next-order derivative, tracking any larger values.
fn refine_criticals(
    family: &dyn DerivativeFamily,
    nus: &[MultiIndex],
    axes: &[Vec<BigRational>],
    grid: &GridSpec,
    weighted: bool,
    sups: &mut [HPReal],
    witnesses: &mut [Vec<BigRational>],
) -> Result<()> {
    let prec = grid.precision_bits;
    let m = axes.len();
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    for (j, nu) in nus.iter().enumerate() {
        if witnesses[j].is_empty() {
            continue;
        }
        for ax in 0..m {
            let mut next = nu.entries().to_vec();
            next[ax] += 1;
            let pair = [nu.clone(), MultiIndex::new(next)];
            // Bracket around the witness along this axis.
            let w = &witnesses[j];
            let pos = axes[ax]
                .iter()
                .position(|x| x == &w[ax])
                .unwrap_or(axes[ax].len() - 1);
            let lo_i = pos.saturating_sub(1);
            let hi_i = (pos + 1).min(axes[ax].len() - 1);
            let mut lo = axes[ax][lo_i].clone();
            let mut hi = axes[ax][hi_i].clone();
            let at = |x: &BigRational, w: &[BigRational]| -> Vec<BigRational> {
                let mut p = w.to_vec();
                p[ax] = x.clone();
                p
            };
            let sign_at = |vals: &[HPReal]| -> i8 {
                if vals[1].is_zero() {
                    0
                } else if vals[1].is_negative() {
                    -1
                } else {
                    1
                }
            };
            let w_owned = w.clone();
            let lo_vals = family.eval_batch(&pair, &at(&lo, &w_owned), prec)?;
            let hi_vals = family.eval_batch(&pair, &at(&hi, &w_owned), prec)?;
            let slo = sign_at(&lo_vals);
            let shi = sign_at(&hi_vals);
            if slo == shi || slo == 0 || shi == 0 {
                continue;
            }
            for _ in 0..grid.refine_iters {
                let mid = (&lo + &hi) * &half;
                let p = at(&mid, &w_owned);
                let vals = family.eval_batch(&pair, &p, prec)?;
                let v = apply_weight(&vals[0], nu, &p, weighted, prec);
                if sups[j].cmp_value(&v) == Ordering::Less {
                    sups[j] = v;
                    witnesses[j] = p.clone();
                }
                let smid = sign_at(&vals);
                if smid == 0 {
                    break;
                }
                // Keep the sub-bracket whose endpoints still disagree.
                if smid == slo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }
    Ok(())
}

/// Sweep a certificate against a derivative family: estimate each supremum
/// on the grid (with refinement) and compare to the certified bound.
///
/// The report includes the zero index (`sup |f| <= B`). Weighted
/// certificates compare `x^nu |f^(nu)(x)|` against the plain bound. If a
/// negative margin is smaller in magnitude than the sweep's error budget,
/// the verdict would be noise and the sweep fails with a precision error
/// instead of reporting it.
pub fn verify_cert(
    family: &dyn DerivativeFamily,
    cert: &MildCert,
    n_max: usize,
    grid: &GridSpec,
) -> Result<BoundReport> {
    let prec = grid.precision_bits;
    let weighted = cert.kind == CertKind::WeaklyMild;
    let sweep = estimate_sups(family, n_max, grid, weighted)?;
    let mut orders = Vec::with_capacity(sweep.nus.len());
    let mut pass = true;
    for ((nu, sup), witness) in sweep.nus.iter().zip(sweep.sups).zip(sweep.witnesses) {
        let bound = cert.bound(nu.order(), prec);
        let margin = bound.sub(&sup);
        if margin.is_negative() {
            pass = false;
            let budget = bound.abs().max_value(&sup.abs()).shl(16 - prec as i128);
            if margin.abs().cmp_value(&budget) == Ordering::Less {
                return Err(MildError::InvalidInput(format!(
                    "margin at order {:?} is negative but within the precision \
                     budget; rerun with more than {prec} bits",
                    nu.entries()
                )));
            }
        }
        orders.push(OrderRow {
            nu: nu.entries().to_vec(),
            sup,
            bound,
            margin,
            witness,
        });
    }
    Ok(BoundReport { cert: cert.clone(), orders, pass, precision_bits: prec })
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// Empirically fitted certificate constants at an assumed `C`.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub c_assumed: BigRational,
    pub b_fitted: HPReal,
    pub a_fitted: HPReal,
    pub n_max: usize,
}

impl FitResult {
    pub fn cert(&self) -> Result<MildCert> {
        MildCert::mild(
            Scalar::Float(self.a_fitted.clone()),
            Scalar::Float(self.b_fitted.clone()),
            self.c_assumed.clone(),
        )
    }
}

/// Fit `B = max(1, sup_0)` and the least `A` with
/// `sup_n <= B A^n (n!)^(C+1)` for all measured `n <= n_max` (univariate).
///
/// The fitted `A` is inflated by one part in `2^(prec-16)` so that
/// re-verifying on the same grid passes by construction.
pub fn fit_constants(
    family: &dyn DerivativeFamily,
    c: &BigRational,
    n_max: usize,
    grid: &GridSpec,
) -> Result<FitResult> {
    if family.arity() != 1 {
        return Err(MildError::InvalidInput(
            "constant fitting is defined for univariate families".into(),
        ));
    }
    if c.is_negative() {
        return Err(MildError::InvalidInput("assumed C must be nonnegative".into()));
    }
    let prec = grid.precision_bits;
    let sweep = estimate_sups(family, n_max, grid, false)?;
    let b = sweep.sups[0].max_value(&HPReal::one(prec));
    let cp1 = c + BigRational::one();
    let mut a = HPReal::zero(prec);
    for (nu, sup) in sweep.nus.iter().zip(&sweep.sups) {
        let n = nu.order();
        if n == 0 || sup.is_zero() {
            continue;
        }
        let fact = HPReal::from_bigint(&factorial(n), prec).pow_ratio(&cp1);
        let candidate = sup
            .div(&b.mul(&fact))
            .pow_ratio(&BigRational::new(BigInt::one(), BigInt::from(n)));
        a = a.max_value(&candidate);
    }
    if !a.is_zero() {
        let nudge = HPReal::one(prec).add(&HPReal::one(prec).shl(16 - prec as i128));
        a = a.mul(&nudge);
    }
    Ok(FitResult { c_assumed: c.clone(), b_fitted: b, a_fitted: a, n_max })
}

// ---------------------------------------------------------------------------
// Lemma checks
// ---------------------------------------------------------------------------

/// One order of the rising-factorial bound check.
#[derive(Debug, Clone)]
pub struct UmildRow {
    pub k: usize,
    /// `alpha (alpha+1) ... (alpha+k-1)`, exactly.
    pub rising: BigRational,
    /// `alpha^k k!` for `alpha >= 1`, else `k!`.
    pub bound: BigRational,
    pub pass: bool,
}

/// Report of the exact inequality `x^(alpha+k) |u_alpha^(k)(x)| <= bound`.
#[derive(Debug)]
pub struct UmildReport {
    pub alpha: Alpha,
    pub rows: Vec<UmildRow>,
    pub all_pass: bool,
}

/// Check `x^(alpha+k) |u_alpha^(k)(x)| = alpha(alpha+1)...(alpha+k-1)` and
/// its bound `alpha^k k!` (or `k!` for `alpha < 1`), in exact rationals.
///
/// The weighted derivative is constant in `x`: the `k`-th derivative of
/// `1 - x^-alpha` is a single term with exponent exactly `-(alpha + k)`.
/// This is re-derived here through the symbolic engine and cross-checked
/// against the closed-form rising factorial at every order.
pub fn check_umild(alpha: &Alpha, k_max: usize) -> Result<UmildReport> {
    if k_max < 1 {
        return Err(MildError::InvalidInput("k_max must be at least 1".into()));
    }
    let av = alpha.value();
    let u = ExpPoly::construct(FnKind::UAlpha, 1, alpha.clone())?;
    let mut d = u;
    let mut rising = BigRational::one();
    let mut kfact = BigRational::one();
    let mut apow = BigRational::one();
    let mut rows = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        d = d.differentiate(0)?;
        rising *= av + BigRational::from_integer(BigInt::from(k as i64 - 1));
        kfact *= BigRational::from_integer(BigInt::from(k as i64));
        apow *= av;

        // Symbolic route: single term, exponent -(k + alpha), coefficient
        // magnitude equal to the rising factorial.
        if d.terms().len() != 1 {
            return Err(MildError::InvalidInput(format!(
                "derivative {k} of the base unit is not a single term"
            )));
        }
        let t = &d.terms()[0];
        let expected_pow = AlphaExponent::new(
            BigRational::from_integer(BigInt::from(-(k as i64))),
            -BigRational::one(),
        );
        if t.pows[0] != expected_pow || t.coeff.abs() != rising {
            return Err(MildError::InvalidInput(format!(
                "symbolic derivative {k} disagrees with the closed form"
            )));
        }

        let bound = if av >= &BigRational::one() {
            &apow * &kfact
        } else {
            kfact.clone()
        };
        rows.push(UmildRow { k, rising: rising.clone(), pass: rising <= bound, bound });
    }
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(UmildReport { alpha: alpha.clone(), rows, all_pass })
}

/// Report comparing the closed-form maximum of `x^-r exp(-s x^-alpha)` on
/// `(0, inf)` against an independent numeric maximization.
#[derive(Debug)]
pub struct ExpmildReport {
    pub r: BigRational,
    pub s: BigRational,
    pub alpha: Alpha,
    /// `(r/(e s alpha))^(r/alpha)`.
    pub closed_max: HPReal,
    /// Golden-section maximum over a bracket around the closed-form argmax.
    pub numeric_max: HPReal,
    /// `(s alpha / r)^(1/alpha)`.
    pub argmax: HPReal,
    pub rel_gap: HPReal,
    pub pass: bool,
}

/// Verify `max_(x>0) x^-r exp(-s x^-alpha) = (r/(e s alpha))^(r/alpha)`,
/// attained at `x = (s alpha / r)^(1/alpha)`, within relative `1e-10`.
pub fn check_expmild(r: &BigRational, s: &BigRational, alpha: &Alpha) -> Result<ExpmildReport> {
    if !r.is_positive() || !s.is_positive() {
        return Err(MildError::InvalidInput("r and s must be positive".into()));
    }
    let prec: u32 = 256;
    let av = alpha.value();

    let h = |x: &HPReal| -> HPReal {
        // x^-r * exp(-s * x^-alpha)
        let xr = x.pow_ratio(&-r.clone());
        let xa = x.pow_ratio(&-av.clone());
        xr.mul(&xa.mul(&HPReal::from_ratio(&-s.clone(), prec)).exp())
    };

    // Closed forms.
    let base = HPReal::from_ratio(&(r / (s * av)), prec);
    let exponent = r / av;
    let closed_max = base
        .ln()
        .sub(&HPReal::one(prec))
        .mul(&HPReal::from_ratio(&exponent, prec))
        .exp();
    let argmax = HPReal::from_ratio(&((s * av) / r), prec)
        .pow_ratio(&(BigRational::one() / av));

    // Independent maximization: golden-section over [argmax/8, 8*argmax]
    // (the function rises to a single peak and falls, so the bracket holds
    // the maximum).
    let mut lo = argmax.div(&HPReal::from_i64(8, prec));
    let mut hi = argmax.mul(&HPReal::from_i64(8, prec));
    let phi = HPReal::from_i64(5, prec)
        .sqrt()
        .sub(&HPReal::one(prec))
        .div(&HPReal::from_i64(2, prec));
    let mut c = hi.sub(&phi.mul(&hi.sub(&lo)));
    let mut d = lo.add(&phi.mul(&hi.sub(&lo)));
    let mut hc = h(&c);
    let mut hd = h(&d);
    let mut best = hc.max_value(&hd);
    for _ in 0..220 {
        if hc.cmp_value(&hd) == Ordering::Less {
            lo = c;
            c = d.clone();
            hc = hd.clone();
            d = lo.add(&phi.mul(&hi.sub(&lo)));
            hd = h(&d);
        } else {
            hi = d;
            d = c.clone();
            hd = hc.clone();
            c = hi.sub(&phi.mul(&hi.sub(&lo)));
            hc = h(&c);
        }
        best = best.max_value(&hc.max_value(&hd));
    }

    let rel_gap = closed_max.sub(&best).abs().div(&closed_max);
    let tol = HPReal::from_ratio(
        &BigRational::new(BigInt::one(), BigInt::from(10_000_000_000i64)),
        prec,
    );
    let pass = rel_gap.cmp_value(&tol) == Ordering::Less;
    Ok(ExpmildReport {
        r: r.clone(),
        s: s.clone(),
        alpha: alpha.clone(),
        closed_max,
        numeric_max: best,
        argmax,
        rel_gap,
        pass,
    })
}

/// One order of the generating-function cross-check.
#[derive(Debug, Clone)]
pub struct GfRow {
    pub n: usize,
    /// The chain-rule sum computed through the partition engine.
    pub composed: BigRational,
    /// The closed form `(A_f B_f B_g/(1+A_f B_g)) (A_g(1+A_f B_g))^n n!`.
    pub closed: BigRational,
    pub equal: bool,
}

/// Report of the exact generating-function identity behind the composition
/// constants.
#[derive(Debug)]
pub struct GfReport {
    pub rows: Vec<GfRow>,
    pub all_equal: bool,
}

/// Cross-check the composition constants' generating functions: compose
/// `psi(x) = B_f / (1 - A_f (x - B_g))` with `phi(x) = B_g / (1 - A_g x)`
/// through the partition engine and compare each derivative at 0 with the
/// closed form, in exact rational arithmetic.
pub fn gf_check(
    af: &BigRational,
    bf: &BigRational,
    ag: &BigRational,
    bg: &BigRational,
    n_max: usize,
) -> Result<GfReport> {
    for (name, v) in [("A_f", af), ("B_f", bf), ("A_g", ag), ("B_g", bg)] {
        if !v.is_positive() {
            return Err(MildError::InvalidInput(format!("{name} must be positive")));
        }
    }
    // psi^(k) at phi(0) = B_g is B_f A_f^k k!; phi^(k)(0) = B_g A_g^k k!.
    let psi = SequenceOracle::new(|k: usize| {
        Ok(bf * af.pow(k as i32) * BigRational::from_integer(factorial(k)))
    });
    let phi = SequenceOracle::new(|k: usize| {
        Ok(bg * ag.pow(k as i32) * BigRational::from_integer(factorial(k)))
    });
    let one_plus = BigRational::one() + af * bg;
    let lead = af * bf * bg / &one_plus;
    let growth = ag * &one_plus;
    let mut rows = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let composed = compose_derivative(&psi, &phi, &MultiIndex::new(vec![n]))?;
        let closed = &lead * growth.pow(n as i32) * BigRational::from_integer(factorial(n));
        rows.push(GfRow { n, equal: composed == closed, composed, closed });
    }
    let all_equal = rows.iter().all(|r| r.equal);
    Ok(GfReport { rows, all_equal })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn alpha(n: i64, d: i64) -> Alpha {
        Alpha::new(rat(n, d)).unwrap()
    }

    fn rational_cert(a: i64, b_num: i64, b_den: i64, c: i64) -> MildCert {
        MildCert::mild(
            Scalar::from_i64(a),
            Scalar::from_ratio(rat(b_num, b_den)),
            rat(c, 1),
        )
        .unwrap()
    }

    fn small_grid() -> GridSpec {
        GridSpec::standard(48, 192)
    }

    #[test]
    fn base_certificates_match_the_stated_constants() {
        let c1 = p_alpha_cert(&alpha(1, 1)).unwrap();
        assert_eq!(c1.a.as_ratio().unwrap(), &rat(6, 1));
        assert_eq!(c1.b.to_string(), "e");
        assert_eq!(c1.c, rat(1, 1));

        let c2 = p_alpha_cert(&alpha(2, 1)).unwrap();
        assert_eq!(c2.a.as_ratio().unwrap(), &rat(12, 1));
        assert_eq!(c2.c, rat(1, 2));

        let ch = p_alpha_cert(&alpha(1, 2)).unwrap();
        assert_eq!(ch.a.as_ratio().unwrap(), &rat(48, 1));
        assert_eq!(ch.c, rat(2, 1));
    }

    #[test]
    fn composition_constants_at_c_zero() {
        let id = rational_cert(1, 1, 1, 0);
        let out = compose_certs(&id, &id).unwrap();
        assert_eq!(out.a.as_ratio().unwrap(), &rat(2, 1));
        assert_eq!(out.b.as_ratio().unwrap(), &rat(1, 2));
        assert_eq!(out.c, rat(0, 1));

        let f = rational_cert(2, 3, 1, 0);
        let out = compose_certs(&f, &id).unwrap();
        assert_eq!(out.a.as_ratio().unwrap(), &rat(3, 1));
        assert_eq!(out.b.as_ratio().unwrap(), &rat(2, 1));
    }

    #[test]
    fn composition_with_mixed_c_uses_root_reduction() {
        let f = rational_cert(1, 1, 1, 1);
        let g = rational_cert(1, 1, 1, 0);
        let out = compose_certs(&f, &g).unwrap();
        assert_eq!(out.c, rat(1, 1));
        // Roots are all 1, so A0 = 2, B0 = 1/2, squared: A = 4, B = 1/4.
        assert_eq!(out.a.as_ratio().unwrap(), &rat(4, 1));
        assert_eq!(out.b.as_ratio().unwrap(), &rat(1, 4));
    }

    #[test]
    fn composition_shrinks_b_below_outer_b() {
        for (af, bf, ag, bg) in
            [(1, 1, 1, 1), (2, 3, 1, 2), (5, 1, 3, 4), (1, 7, 2, 1)]
        {
            let f = rational_cert(af, bf, 1, 0);
            let g = rational_cert(ag, bg, 1, 0);
            let out = compose_certs(&f, &g).unwrap();
            assert_eq!(
                out.b.cmp_value(&f.b),
                Ordering::Less,
                "B must shrink strictly below B_f"
            );
        }
    }

    #[test]
    fn composition_rejects_weighted_certificates() {
        let plain = rational_cert(1, 1, 1, 0);
        let weak =
            MildCert::new(Scalar::one(), Scalar::one(), rat(0, 1), CertKind::WeaklyMild)
                .unwrap();
        assert!(matches!(
            compose_certs(&plain, &weak),
            Err(MildError::IncompatibleCerts(_))
        ));
    }

    #[test]
    fn product_constants_add_a_and_multiply_b() {
        let out = product_certs(&rational_cert(1, 1, 1, 0), &rational_cert(2, 3, 1, 0))
            .unwrap();
        assert_eq!(out.a.as_ratio().unwrap(), &rat(3, 1));
        assert_eq!(out.b.as_ratio().unwrap(), &rat(3, 1));
        assert_eq!(out.c, rat(0, 1));
    }

    #[test]
    fn product_with_near_constant_factor_keeps_a() {
        // A constant factor is certified with arbitrarily small A: the
        // product constants degrade to (A1 + eps, B1*B2, 0).
        let tiny = MildCert::mild(
            Scalar::from_ratio(rat(1, 1_000_000)),
            Scalar::from_ratio(rat(1, 2)),
            rat(0, 1),
        )
        .unwrap();
        let out = product_certs(&rational_cert(1, 1, 1, 0), &tiny).unwrap();
        assert_eq!(out.a.as_ratio().unwrap(), &rat(1_000_001, 1_000_000));
        assert_eq!(out.b.as_ratio().unwrap(), &rat(1, 2));
    }

    #[test]
    fn product_is_symmetric() {
        let c1 = rational_cert(3, 2, 1, 1);
        let c2 = rational_cert(1, 5, 2, 0);
        let a = product_certs(&c1, &c2).unwrap();
        let b = product_certs(&c2, &c1).unwrap();
        assert_eq!(a.a.cmp_value(&b.a), Ordering::Equal);
        assert_eq!(a.b.cmp_value(&b.b), Ordering::Equal);
        assert_eq!(a.c, b.c);
    }

    #[test]
    fn weak_composition_constants() {
        let out =
            weak_compose_cert(&Scalar::one(), &Scalar::one(), &alpha(1, 1)).unwrap();
        assert_eq!(out.a.as_ratio().unwrap(), &rat(16, 1));
        assert_eq!(out.b.to_string(), "e");
        assert_eq!(out.c, rat(2, 1));

        assert!(matches!(
            weak_compose_cert(&Scalar::one(), &Scalar::one(), &alpha(1, 2)),
            Err(MildError::UnsupportedRegime(_))
        ));

        // Large alpha: A' approaches 1 * 2*alpha * 2 from above, C' -> 1.
        let big = weak_compose_cert(&Scalar::one(), &Scalar::one(), &alpha(1000, 1))
            .unwrap();
        assert_eq!(big.c, rat(1001, 1000));
        let a_val = big.a.to_hp(128).to_f64();
        assert!(a_val > 4000.0 && a_val < 4040.0, "A' = {a_val}");
    }

    #[test]
    fn partial_scale_closed_form() {
        let m = compute_m(&[rat(1, 1), rat(1, 1)]).unwrap();
        assert_eq!(m.to_string(), "e^(-1/2)");
        let m = compute_m(&[rat(1, 1), rat(2, 1)]).unwrap();
        assert_eq!(m.to_string(), "e^(-1)");
        assert_eq!(compute_m(&[rat(0, 1), rat(0, 1)]).unwrap().to_string(), "1");
        assert!(matches!(
            compute_m(&[rat(1, 2), rat(1, 1)]),
            Err(MildError::InvalidInput(_))
        ));
    }

    #[test]
    fn power_substitution_constants() {
        let a1 = alpha(1, 1);
        let mu = [rat(1, 1), rat(1, 1)];
        let m_const = compute_m(&mu).unwrap();
        let cert = abm_compose_cert(&mu, 2, &a1, &m_const).unwrap();
        assert_eq!(cert.a.as_ratio().unwrap(), &rat(10, 1));
        assert_eq!(cert.b.to_string(), "e", "e^2 * (e^-1/2)^2 collapses to e");
        assert_eq!(cert.c, rat(1, 1));

        let mu = [rat(1, 1), rat(2, 1)];
        let m_const = compute_m(&mu).unwrap();
        let cert = abm_compose_cert(&mu, 2, &a1, &m_const).unwrap();
        assert_eq!(cert.a.as_ratio().unwrap(), &rat(18, 1));
        assert_eq!(cert.b.to_string(), "e");

        let mu = [rat(0, 1), rat(0, 1)];
        let m_const = compute_m(&mu).unwrap();
        let cert = abm_compose_cert(&mu, 2, &a1, &m_const).unwrap();
        assert_eq!(cert.a.as_ratio().unwrap(), &rat(2, 1));
        assert_eq!(cert.b.as_ratio().unwrap(), &rat(1, 1));
    }

    #[test]
    fn verify_passes_the_base_certificate_and_finds_the_order_one_peak() {
        let p = ExpPoly::construct(FnKind::PAlpha, 1, alpha(1, 1)).unwrap();
        let family = PolyFamily::new(p);
        let cert = p_alpha_cert(&alpha(1, 1)).unwrap();
        let report = verify_cert(&family, &cert, 6, &small_grid()).unwrap();
        assert!(report.pass);
        // Order 1: sup = 4/e at x = 1/2.
        let row = report.orders.iter().find(|r| r.nu == vec![1]).unwrap();
        let sup = row.sup.to_f64();
        assert!((sup - 4.0 / std::f64::consts::E).abs() < 1e-9, "sup = {sup}");
        let w = &row.witness[0];
        assert!((w - rat(1, 2)).abs() < rat(1, 100), "witness {w}");
    }

    #[test]
    fn verify_fails_an_undersized_certificate_by_order_three() {
        let p = ExpPoly::construct(FnKind::PAlpha, 1, alpha(1, 1)).unwrap();
        let family = PolyFamily::new(p);
        let false_cert = rational_cert(1, 1, 1, 0);
        let report = verify_cert(&family, &false_cert, 5, &small_grid()).unwrap();
        assert!(!report.pass);
        let first_fail = report
            .orders
            .iter()
            .find(|r| r.margin.is_negative())
            .expect("some margin fails");
        assert!(first_fail.nu[0] <= 3, "fails by order 3, got {:?}", first_fail.nu);
    }

    #[test]
    fn verify_constant_function_trivially() {
        let c = ExpPoly::construct(FnKind::Constant(rat(1, 2)), 1, alpha(1, 1)).unwrap();
        let family = PolyFamily::new(c);
        let cert = rational_cert(1, 1, 1, 0);
        let report = verify_cert(&family, &cert, 4, &small_grid()).unwrap();
        assert!(report.pass);
        for row in &report.orders[1..] {
            assert!(row.sup.is_zero(), "derivatives of a constant vanish");
        }
    }

    #[test]
    fn weighted_verification_applies_the_monomial_weight() {
        // f(x) = x^(1/2): |f^(n)(x)| * x^n = |r(r-1)...(r-n+1)| x^(1/2)
        // <= n! on (0,1], so the weighted kind passes (1, 1, 0) easily
        // while the plain kind must fail (derivatives blow up at 0).
        let f = ExpPoly::construct(FnKind::Monomial(vec![rat(1, 2)]), 1, alpha(1, 1))
            .unwrap();
        let family = PolyFamily::new(f);
        let weak = MildCert::new(
            Scalar::one(),
            Scalar::one(),
            rat(0, 1),
            CertKind::WeaklyMild,
        )
        .unwrap();
        let report = verify_cert(&family, &weak, 6, &small_grid()).unwrap();
        assert!(report.pass);

        let plain = rational_cert(1, 1, 1, 0);
        let report = verify_cert(&family, &plain, 6, &small_grid()).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn fitted_constants_reverify_and_respect_known_bounds() {
        let p = ExpPoly::construct(FnKind::PAlpha, 1, alpha(1, 1)).unwrap();
        let family = PolyFamily::new(p);
        let grid = small_grid();
        let fit = fit_constants(&family, &rat(1, 1), 10, &grid).unwrap();
        assert!(fit.a_fitted.to_f64() <= 6.0, "known constant 6 is valid");
        assert!(fit.b_fitted.to_f64() >= 1.0);
        let report = verify_cert(&family, &fit.cert().unwrap(), 10, &grid).unwrap();
        assert!(report.pass, "fit re-verifies on the same grid");
    }

    #[test]
    fn fitting_a_constant_gives_zero_growth() {
        let c = ExpPoly::construct(FnKind::Constant(rat(1, 2)), 1, alpha(1, 1)).unwrap();
        let family = PolyFamily::new(c);
        let fit = fit_constants(&family, &rat(0, 1), 6, &small_grid()).unwrap();
        assert!(fit.a_fitted.is_zero());
        assert_eq!(fit.b_fitted.to_f64(), 1.0);
    }

    #[test]
    fn fitting_the_shrinking_hyperbola_needs_large_a() {
        // g(t) = eps^2/((1-eps)t + eps) at eps = 2^-8: the fitted growth
        // rate must reach at least 0.5/eps = 128.
        let eps = rat(1, 256);
        let g = hyperbola_family(eps);
        let fit = fit_constants(&g, &rat(0, 1), 15, &small_grid()).unwrap();
        assert!(fit.a_fitted.to_f64() >= 128.0, "A = {}", fit.a_fitted.to_f64());
    }

    /// `g(t) = eps^2 / ((1-eps) t + eps)` with exact derivative values.
    fn hyperbola_family(eps: BigRational) -> ClosureFamily<impl Fn(usize, &BigRational, u32) -> Result<HPReal>> {
        ClosureFamily::new(move |n, t, prec| {
            // g^(n)(t) = eps^2 (-1)^n n! (1-eps)^n ((1-eps)t + eps)^-(n+1)
            let one_minus = BigRational::one() - &eps;
            let base = &one_minus * t + &eps;
            let sign = if n % 2 == 0 { BigInt::one() } else { -BigInt::one() };
            let value = &eps * &eps
                * BigRational::from_integer(sign * factorial(n))
                * one_minus.pow(n as i32)
                / base.pow(n as i32 + 1);
            Ok(HPReal::from_ratio(&value, prec))
        })
    }

    #[test]
    fn rising_factorial_bound_is_exact_and_tight_at_alpha_one() {
        let report = check_umild(&alpha(1, 1), 8).unwrap();
        assert!(report.all_pass);
        let k2 = &report.rows[1];
        assert_eq!(k2.rising, rat(2, 1));
        assert_eq!(k2.bound, rat(2, 1), "tight at alpha = 1, k = 2");

        let report = check_umild(&alpha(2, 1), 3).unwrap();
        assert_eq!(report.rows[2].rising, rat(24, 1));
        assert_eq!(report.rows[2].bound, rat(48, 1));

        let report = check_umild(&alpha(1, 2), 3).unwrap();
        assert_eq!(report.rows[2].rising, rat(15, 8));
        assert_eq!(report.rows[2].bound, rat(6, 1), "k! bound in the alpha < 1 regime");
        assert!(report.all_pass);
    }

    #[test]
    fn exp_monomial_maximum_closed_form_agrees_with_search() {
        let cases = [
            (rat(1, 1), rat(1, 1), alpha(1, 1), 1.0 / std::f64::consts::E, 1.0),
            (rat(2, 1), rat(1, 1), alpha(1, 1), (2.0_f64 / std::f64::consts::E).powi(2), 0.5),
            (rat(1, 1), rat(1, 2), alpha(2, 1), (1.0_f64 / std::f64::consts::E).sqrt(), 1.0),
        ];
        for (r, s, a, want_max, want_arg) in cases {
            let rep = check_expmild(&r, &s, &a).unwrap();
            assert!(rep.pass, "gap {}", rep.rel_gap.to_f64());
            assert!((rep.closed_max.to_f64() - want_max).abs() < 1e-12);
            assert!((rep.argmax.to_f64() - want_arg).abs() < 1e-12);
        }
    }

    #[test]
    fn generating_function_identity_is_exact_on_the_lattice() {
        let vals = [rat(1, 2), rat(1, 1), rat(2, 1)];
        for af in &vals {
            for bf in &vals {
                for ag in &vals {
                    for bg in &vals {
                        let rep = gf_check(af, bf, ag, bg, 15).unwrap();
                        assert!(rep.all_equal, "af={af} bf={bf} ag={ag} bg={bg}");
                    }
                }
            }
        }
    }

    #[test]
    fn gf_check_named_values() {
        let one = rat(1, 1);
        let rep = gf_check(&one, &one, &one, &one, 3).unwrap();
        assert_eq!(rep.rows[0].closed, rat(1, 1), "n = 1");
        assert_eq!(rep.rows[2].closed, rat(24, 1), "n = 3");
        let rep = gf_check(&rat(2, 1), &one, &one, &one, 2).unwrap();
        assert_eq!(rep.rows[1].closed, rat(12, 1), "n = 2 with 1 + A_f B_g = 3");
    }

    #[test]
    fn bound_is_monotone_for_a_at_least_one() {
        // A = 1, C = 0 gives bound(n) = n!, flat from 0 to 1; A = 2 is
        // strictly increasing from the start.
        let flat = rational_cert(1, 1, 1, 0);
        let strict = rational_cert(2, 1, 1, 0);
        let mut prev_flat = flat.bound(0, 128);
        let mut prev_strict = strict.bound(0, 128);
        for n in 1..=8 {
            let next = flat.bound(n, 128);
            assert_ne!(prev_flat.cmp_value(&next), Ordering::Greater);
            prev_flat = next;
            let next = strict.bound(n, 128);
            assert_eq!(prev_strict.cmp_value(&next), Ordering::Less);
            prev_strict = next;
        }
    }

    #[test]
    fn report_json_matches_the_pinned_shape() {
        let p = ExpPoly::construct(FnKind::PAlpha, 1, alpha(1, 1)).unwrap();
        let family = PolyFamily::new(p);
        let cert = p_alpha_cert(&alpha(1, 1)).unwrap();
        let report = verify_cert(&family, &cert, 2, &small_grid()).unwrap();
        let json = report.to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["cert"]["C"], "1");
        assert_eq!(v["cert"]["kind"], "mild");
        assert_eq!(v["pass"], true);
        assert_eq!(v["precision_bits"], 192);
        let orders = v["orders"].as_array().unwrap();
        assert_eq!(orders.len(), 3, "orders 0, 1, 2");
        assert!(orders[0]["sup"].is_string());
        assert!(orders[1]["witness"].is_array());
    }
}
