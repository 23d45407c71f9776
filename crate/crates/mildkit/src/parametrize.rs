//! Charts for the hyperbola family `xy = eps^2` and for power
//! substitutions, with uniform growth certificates.
//!
//! The three-chart construction covers the graph branch `y = eps^2/x`,
//! `x in (eps^2, 1)`, by precomposing with `P_alpha(u) = exp(1 - u^-alpha)`:
//! the main chart is `t -> (P_alpha(u(t)), eps^2/P_alpha(u(t)))` with the
//! affine pre-map `u(t) = (1-delta)t + delta`, `delta = P_alpha^-1(eps)`;
//! the swapped chart exchanges the two outputs; the point chart is the
//! constant `(eps, eps)`. One certificate — fitted once at the smallest
//! `eps`, doubled, and frozen — passes verification for every chart of
//! every `eps`, which is the uniformity the construction exists for. A
//! naive affine chart of the same branch, by contrast, needs a growth rate
//! `A >= 0.5/eps` even at `C = 0`; [`nonuniformity_probe`] measures that.
//!
//! Affine pre-maps stay outside the exp-monomial algebra: a component is
//! stored as an expression in `u`, sweeps run over a rational sub-interval
//! of the `u`-axis, and an order-`n` derivative value picks up the exact
//! factor `(1-delta)^n` from the chain rule.

use crate::error::{MildError, Result};
use crate::faadibruno::{compose_derivative, factorial, DerivativeOracle, MultiIndex};
use crate::hpreal::HPReal;
use crate::mildness::{
    abm_compose_cert, compose_certs, compute_m, fit_constants, p_alpha_cert, product_certs,
    verify_cert, BoundReport, ClosureFamily, DerivativeFamily, GridSpec, MildCert, PolyFamily,
};
use crate::ratcalc::{Alpha, ExpPoly, FnKind};
use crate::scalar::Scalar;
use num_bigint::BigInt;
use num_integer::binomial;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;

/// Decimal digits in chart/coverage JSON.
const JSON_DIGITS: usize = 40;

// ---------------------------------------------------------------------------
// Affine derivative scaling
// ---------------------------------------------------------------------------

/// The affine pre-map's derivative factor.
#[derive(Debug, Clone)]
pub enum ScaleSpec {
    One,
    Rational(BigRational),
    /// `1 - delta` with `delta = (1 - ln eps)^(-1/alpha)`.
    OneMinusDelta { epsilon: BigRational, alpha: Alpha },
}

impl ScaleSpec {
    fn to_hp(&self, prec: u32) -> HPReal {
        match self {
            ScaleSpec::One => HPReal::one(prec),
            ScaleSpec::Rational(r) => HPReal::from_ratio(r, prec),
            ScaleSpec::OneMinusDelta { epsilon, alpha } => {
                HPReal::one(prec).sub(&delta_value(epsilon, alpha, prec))
            }
        }
    }
}

/// A derivative family postcomposed with an affine reparametrization:
/// order-`n` values are scaled by `scale^n` (the points fed in live in the
/// codomain of the pre-map, here the `u`-axis).
pub struct ScaledFamily {
    inner: PolyFamily,
    scale: ScaleSpec,
}

impl ScaledFamily {
    pub fn new(poly: ExpPoly, scale: ScaleSpec) -> Self {
        ScaledFamily { inner: PolyFamily::new(poly), scale }
    }
}

impl DerivativeFamily for ScaledFamily {
    fn arity(&self) -> usize {
        self.inner.arity()
    }

    fn eval_batch(
        &self,
        nus: &[MultiIndex],
        point: &[BigRational],
        prec: u32,
    ) -> Result<Vec<HPReal>> {
        let vals = self.inner.eval_batch(nus, point, prec)?;
        let s = self.scale.to_hp(prec);
        Ok(vals
            .into_iter()
            .zip(nus)
            .map(|(v, nu)| v.mul(&s.pow_i64(nu.order() as i64)))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// The three-chart construction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartId {
    Main,
    Swapped,
    Point,
}

impl fmt::Display for ChartId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChartId::Main => write!(f, "main"),
            ChartId::Swapped => write!(f, "swapped"),
            ChartId::Point => write!(f, "point"),
        }
    }
}

/// One chart of the hyperbola parametrization: a pair of components in the
/// `u`-variable plus the affine pre-map data and a certificate.
#[derive(Debug, Clone)]
pub struct Chart {
    pub id: ChartId,
    pub epsilon: BigRational,
    pub alpha: Alpha,
    /// `P_alpha^-1(eps) = (1 - ln eps)^(-1/alpha)`.
    pub delta: HPReal,
    /// A rational upper bound on `delta` (within `2^-64`), used as the left
    /// wall of `u`-sweeps.
    pub delta_upper: BigRational,
    /// `(x(u), y(u))`; the chart maps `t` to these at `u = (1-delta)t + delta`.
    pub components: [ExpPoly; 2],
    pub cert: MildCert,
}

/// `delta = (1 - ln eps)^(-1/alpha)` at the given precision.
pub fn delta_value(epsilon: &BigRational, alpha: &Alpha, prec: u32) -> HPReal {
    let ln_eps = HPReal::from_ratio(epsilon, prec).ln();
    let inv = -(BigRational::one() / alpha.value());
    HPReal::one(prec).sub(&ln_eps).pow_ratio(&inv)
}

/// A rational `d` with `delta < d < delta + 2^-63`.
fn delta_upper_bound(epsilon: &BigRational, alpha: &Alpha) -> BigRational {
    let d = delta_value(epsilon, alpha, 160);
    let scaled = d.shl(64).round_to_bigint() + BigInt::one();
    BigRational::new(scaled, BigInt::one() << 64)
}

impl Chart {
    /// The affine derivative factor of this chart's pre-map.
    pub fn scale_spec(&self) -> ScaleSpec {
        match self.id {
            ChartId::Point => ScaleSpec::One,
            _ => ScaleSpec::OneMinusDelta {
                epsilon: self.epsilon.clone(),
                alpha: self.alpha.clone(),
            },
        }
    }

    /// Derivative family (in the chart parameter) of one component.
    pub fn component_family(&self, idx: usize) -> Result<ScaledFamily> {
        let poly = self
            .components
            .get(idx)
            .ok_or_else(|| MildError::InvalidInput(format!("no component {idx}")))?;
        Ok(ScaledFamily::new(poly.clone(), self.scale_spec()))
    }

    /// The `u`-interval this chart's sweeps cover.
    pub fn sweep_interval(&self) -> (BigRational, BigRational) {
        (self.delta_upper.clone(), BigRational::one())
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let (scale, offset) = match self.id {
            ChartId::Point => ("1".to_string(), "0".to_string()),
            _ => {
                let one = HPReal::one(192);
                let s = one.sub(&self.delta).to_decimal_string(JSON_DIGITS);
                (s, self.delta.to_decimal_string(JSON_DIGITS))
            }
        };
        serde_json::json!({
            "id": self.id.to_string(),
            "delta": self.delta.to_decimal_string(JSON_DIGITS),
            "components": self
                .components
                .iter()
                .map(|p| serde_json::from_str::<serde_json::Value>(&p.to_json()).unwrap())
                .collect::<Vec<_>>(),
            "affine": { "scale": scale, "offset": offset },
        })
    }
}

/// Build the three charts at one `eps`, with a default certificate (the
/// `P`-component composition cert); family constructors replace it with a
/// fitted uniform one covering both components.
pub fn yomdin_charts(epsilon: &BigRational, alpha: &Alpha) -> Result<[Chart; 3]> {
    check_epsilon(epsilon)?;
    let eps2 = epsilon * epsilon;
    let x_comp = ExpPoly::construct(FnKind::PAlpha, 1, alpha.clone())?;
    // y = eps^2 / P_alpha(u), exactly one exp-term with weight -1.
    let y_comp = ExpPoly::construct(FnKind::ExpOfLinear(vec![-BigRational::one()]), 1, alpha.clone())?
        .scale(&eps2);
    let affine = MildCert::mild(Scalar::one(), Scalar::one(), BigRational::zero())?;
    let default_cert = compose_certs(&p_alpha_cert(alpha)?, &affine)?;
    let delta = delta_value(epsilon, alpha, 192);
    let delta_upper = delta_upper_bound(epsilon, alpha);
    let point_poly = ExpPoly::construct(FnKind::Constant(epsilon.clone()), 1, alpha.clone())?;
    let mk = |id: ChartId, components: [ExpPoly; 2]| Chart {
        id,
        epsilon: epsilon.clone(),
        alpha: alpha.clone(),
        delta: delta.clone(),
        delta_upper: delta_upper.clone(),
        components,
        cert: default_cert.clone(),
    };
    Ok([
        mk(ChartId::Main, [x_comp.clone(), y_comp.clone()]),
        mk(ChartId::Swapped, [y_comp, x_comp]),
        mk(ChartId::Point, [point_poly.clone(), point_poly]),
    ])
}

fn check_epsilon(epsilon: &BigRational) -> Result<()> {
    if !epsilon.is_positive() || epsilon >= &BigRational::one() {
        return Err(MildError::InvalidInput(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Families across eps
// ---------------------------------------------------------------------------

/// A collection of three-chart parametrizations sharing one certificate.
#[derive(Debug)]
pub struct FamilyParam {
    pub alpha: Alpha,
    pub epsilons: Vec<BigRational>,
    pub charts: Vec<[Chart; 3]>,
    pub uniform_cert: MildCert,
}

/// Build the family with a uniform certificate fitted at the smallest
/// `eps` (over both main-chart components, `C = 1/alpha`), doubled as a
/// safety factor, and frozen across every chart of every `eps`.
///
/// The smallest member is the least favorable one: its wall
/// `delta = P_alpha^-1(eps)` sits deepest, so its sweep interval exposes
/// the largest derivative peaks of the second component — per-order
/// normalized growth rates increase as `eps` shrinks (e.g. at `alpha = 1`,
/// `n <= 15`: 1.12 at `eps = 1/4` versus 3.78 at `eps = 2^-20`). Fitting
/// at the largest member would therefore not transfer down; fitting at the
/// smallest transfers both ways, and the factor 2 also absorbs the drift
/// to nearby unseen `eps` below the grid (about 1.4% per halving at the
/// scales above).
pub fn yomdin_family(
    alpha: &Alpha,
    epsilons: &[BigRational],
    n_max: usize,
    grid: &GridSpec,
) -> Result<FamilyParam> {
    if epsilons.is_empty() {
        return Err(MildError::InvalidInput("family needs at least one epsilon".into()));
    }
    for eps in epsilons {
        check_epsilon(eps)?;
    }
    let eps_fit = epsilons.iter().min().unwrap().clone();
    let charts = yomdin_charts(&eps_fit, alpha)?;
    let c = BigRational::one() / alpha.value();
    let sweep = chart_grid(&charts[0], grid);
    let mut a = HPReal::zero(grid.precision_bits);
    let mut b = HPReal::zero(grid.precision_bits);
    for idx in 0..2 {
        let fam = charts[0].component_family(idx)?;
        let fit = fit_constants(&fam, &c, n_max, &sweep)?;
        a = a.max_value(&fit.a_fitted);
        b = b.max_value(&fit.b_fitted);
    }
    let two = HPReal::from_i64(2, grid.precision_bits);
    let cert = MildCert::mild(
        Scalar::Float(a.mul(&two)),
        Scalar::Float(b.mul(&two)),
        c,
    )?;
    yomdin_family_with_cert(alpha, epsilons, cert)
}

/// Build the family with an externally chosen (frozen) certificate.
pub fn yomdin_family_with_cert(
    alpha: &Alpha,
    epsilons: &[BigRational],
    cert: MildCert,
) -> Result<FamilyParam> {
    let mut charts = Vec::with_capacity(epsilons.len());
    for eps in epsilons {
        let mut trio = yomdin_charts(eps, alpha)?;
        for chart in &mut trio {
            chart.cert = cert.clone();
        }
        charts.push(trio);
    }
    Ok(FamilyParam {
        alpha: alpha.clone(),
        epsilons: epsilons.to_vec(),
        charts,
        uniform_cert: cert,
    })
}

/// The sweep grid for one chart: the template's density and precision on
/// the chart's own `u`-interval.
fn chart_grid(chart: &Chart, template: &GridSpec) -> GridSpec {
    let mut g = GridSpec::on_box(
        vec![chart.sweep_interval()],
        template.grid_points,
        template.precision_bits,
    );
    g.refine_iters = template.refine_iters;
    g
}

/// Verify the shared certificate on every component of every chart of every
/// `eps`, and aggregate to one report: each order keeps the worst case.
///
/// The swapped chart's components are the main chart's two expressions
/// exchanged, so each distinct expression is swept once per `eps`.
pub fn uniform_verify(
    family: &FamilyParam,
    n_max: usize,
    grid: &GridSpec,
) -> Result<BoundReport> {
    let mut reports = Vec::new();
    for trio in &family.charts {
        let mut seen = HashSet::new();
        for chart in trio {
            let sweep = chart_grid(chart, grid);
            for idx in 0..2 {
                if !seen.insert(chart.components[idx].to_json()) {
                    continue;
                }
                let fam = chart.component_family(idx)?;
                reports.push(verify_cert(&fam, &family.uniform_cert, n_max, &sweep)?);
            }
        }
    }
    merge_reports(reports)
}

fn merge_reports(reports: Vec<BoundReport>) -> Result<BoundReport> {
    let mut it = reports.into_iter();
    let mut merged = it
        .next()
        .ok_or_else(|| MildError::InvalidInput("nothing to aggregate".into()))?;
    for rep in it {
        if rep.orders.len() != merged.orders.len() {
            return Err(MildError::InvalidInput(
                "aggregated reports must cover the same orders".into(),
            ));
        }
        merged.pass = merged.pass && rep.pass;
        for (acc, row) in merged.orders.iter_mut().zip(rep.orders) {
            if acc.sup.cmp_value(&row.sup) == Ordering::Less {
                *acc = row;
            }
        }
    }
    Ok(merged)
}

// ---------------------------------------------------------------------------
// Coverage
// ---------------------------------------------------------------------------

/// Result of checking that the charts exactly tile the curve branch.
#[derive(Debug)]
pub struct CoverageReport {
    /// Total curve samples tested (across all `eps`).
    pub samples: usize,
    /// Largest relative (log-scale) distance from a sample to the chart
    /// point its closed-form inversion produces.
    pub max_distance: HPReal,
    pub tolerance: HPReal,
    /// Observed parameter extremes of the main chart inversions.
    pub main_t_range: (HPReal, HPReal),
    /// Observed parameter extremes of the swapped chart inversions.
    pub swapped_t_range: (HPReal, HPReal),
    /// Description of the first uncovered sample, if any.
    pub uncovered: Option<String>,
    pub pass: bool,
}

impl CoverageReport {
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "samples": self.samples,
            "max_distance": self.max_distance.to_decimal_string(JSON_DIGITS),
            "tolerance": self.tolerance.to_decimal_string(JSON_DIGITS),
            "main_t_range": [
                self.main_t_range.0.to_decimal_string(JSON_DIGITS),
                self.main_t_range.1.to_decimal_string(JSON_DIGITS),
            ],
            "swapped_t_range": [
                self.swapped_t_range.0.to_decimal_string(JSON_DIGITS),
                self.swapped_t_range.1.to_decimal_string(JSON_DIGITS),
            ],
            "uncovered": self.uncovered,
            "pass": self.pass,
        })
    }
}

/// Check the family covers its curves: (i) the on-curve identity
/// `x(u) * y(u) = eps^2` holds as exact term algebra; (ii) for `samples`
/// log-uniform curve points `x in (eps^2, 1)` per `eps`, the closed-form
/// inversion `t = (P_alpha^-1(.) - delta)/(1 - delta)` of exactly one chart
/// lands in `(0, 1)` and reproduces the sample.
///
/// Samples with `x > eps` belong to the main chart, `x < eps` to the
/// swapped chart (via `P(u) = eps^2/x`), and `x = eps` to the point chart;
/// the three ranges partition `(eps^2, 1)` by construction, so the
/// trichotomy is the coverage argument. Distances are measured on `ln x`.
pub fn verify_family(family: &FamilyParam, samples: usize, prec: u32) -> Result<CoverageReport> {
    if samples < 2 {
        return Err(MildError::InvalidInput("need at least 2 samples".into()));
    }
    let alpha = &family.alpha;
    let av = alpha.value();
    let tolerance = HPReal::one(prec).shl(16 - prec as i128);
    let mut max_distance = HPReal::zero(prec);
    let mut uncovered: Option<String> = None;
    let mut tested = 0usize;
    let one = HPReal::one(prec);
    let mut main_rng = (one.clone(), HPReal::zero(prec));
    let mut swap_rng = (one.clone(), HPReal::zero(prec));

    for (eps, trio) in family.epsilons.iter().zip(&family.charts) {
        // Exact on-curve identity for the two moving charts.
        let eps2 = eps * eps;
        let expect = ExpPoly::construct(FnKind::Constant(eps2.clone()), 1, alpha.clone())?;
        for chart in &trio[..2] {
            let product = chart.components[0].mul(&chart.components[1])?;
            if product != expect {
                return Err(MildError::InvalidInput(format!(
                    "chart {} at eps = {eps} leaves the curve",
                    chart.id
                )));
            }
        }

        let delta = &trio[0].delta;
        let delta = delta.with_prec(prec);
        let one_minus_delta = one.sub(&delta);
        let ln_eps = HPReal::from_ratio(eps, prec).ln();
        let ln_eps2 = ln_eps.mul_i64(2);

        // Log-uniform samples l = ln x in (ln eps^2, 0), plus x = eps itself.
        for i in 0..=samples {
            let (l, target, swapped) = if i == samples {
                // The x = eps sample: the point chart hits it exactly.
                tested += 1;
                continue;
            } else {
                let frac = BigRational::new(BigInt::from(i as i64 + 1), BigInt::from(samples as i64 + 1));
                let l = ln_eps2.mul(&HPReal::from_ratio(&frac, prec));
                // Trichotomy on l vs ln eps.
                match l.cmp_value(&ln_eps) {
                    Ordering::Greater => (l.clone(), l, false),
                    Ordering::Less => {
                        let w = ln_eps2.sub(&l);
                        (l, w, true)
                    }
                    Ordering::Equal => {
                        tested += 1;
                        continue; // the point chart's sample
                    }
                }
            };
            // Invert: u with 1 - u^-alpha = target.
            let u = one.sub(&target).pow_ratio(&-(BigRational::one() / av));
            let w_back = one.sub(&u.pow_ratio(&-av.clone()));
            let dist = w_back.sub(&target).abs();
            let t = u.sub(&delta).div(&one_minus_delta);
            tested += 1;
            if max_distance.cmp_value(&dist) == Ordering::Less {
                max_distance = dist.clone();
            }
            let inside = t.is_positive() && t.cmp_value(&one) == Ordering::Less;
            if !inside || dist.cmp_value(&tolerance) != Ordering::Less {
                if uncovered.is_none() {
                    uncovered = Some(format!(
                        "eps = {eps}: sample ln x = {} not reproduced (t = {})",
                        l.to_decimal_string(20),
                        t.to_decimal_string(20),
                    ));
                }
                continue;
            }
            let rng = if swapped { &mut swap_rng } else { &mut main_rng };
            if t.cmp_value(&rng.0) == Ordering::Less {
                rng.0 = t.clone();
            }
            if rng.1.cmp_value(&t) == Ordering::Less {
                rng.1 = t;
            }
        }
    }
    let pass = uncovered.is_none();
    Ok(CoverageReport {
        samples: tested,
        max_distance,
        tolerance,
        main_t_range: main_rng,
        swapped_t_range: swap_rng,
        uncovered,
        pass,
    })
}

// ---------------------------------------------------------------------------
// The naive chart and its non-uniformity
// ---------------------------------------------------------------------------

/// Exact derivative family of the naive affine chart
/// `g(t) = eps^2 / ((1-eps) t + eps)`, `t in (0, 1)`, of the same branch.
pub fn naive_chart_family(
    epsilon: BigRational,
) -> Result<ClosureFamily<impl Fn(usize, &BigRational, u32) -> Result<HPReal>>> {
    check_epsilon(&epsilon)?;
    Ok(ClosureFamily::new(move |n, t, prec| {
        // g^(n)(t) = eps^2 (-1)^n n! (1-eps)^n ((1-eps)t + eps)^-(n+1)
        let one_minus = BigRational::one() - &epsilon;
        let base = &one_minus * t + &epsilon;
        let sign = if n % 2 == 0 { BigInt::one() } else { -BigInt::one() };
        let value = &epsilon * &epsilon
            * BigRational::from_integer(sign * factorial(n))
            * one_minus.pow(n as i32)
            / base.pow(n as i32 + 1);
        Ok(HPReal::from_ratio(&value, prec))
    }))
}

/// One fitted row of the non-uniformity table.
#[derive(Debug, Clone)]
pub struct ProbeRow {
    pub epsilon: BigRational,
    /// Least `A` with `sup |g^(n)| <= B A^n n!` on the grid (`C = 0`).
    pub a_fitted: HPReal,
    pub n_max: usize,
}

/// Fit `C = 0` constants to the naive chart per `eps`. The fitted growth
/// rate scales like `1/eps` (the peak of `|g^(n)|` at `t -> 0` is
/// `n! (1-eps)^n eps^(1-n)`), which is the obstruction the three-chart
/// construction removes.
pub fn nonuniformity_probe(
    epsilons: &[BigRational],
    n_max: usize,
    grid: &GridSpec,
) -> Result<Vec<ProbeRow>> {
    let zero = BigRational::zero();
    epsilons
        .iter()
        .map(|eps| {
            let fam = naive_chart_family(eps.clone())?;
            let fit = fit_constants(&fam, &zero, n_max, grid)?;
            Ok(ProbeRow { epsilon: eps.clone(), a_fitted: fit.a_fitted, n_max })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Built-in analytic units
// ---------------------------------------------------------------------------

/// The closed library of unit functions `F` usable in power-substitution
/// charts: analytic and certified zero-free on `[0, 1]` (the closure of the
/// image of the monomial part).
#[derive(Debug, Clone)]
pub enum UnitFn {
    /// `F = c`, `c != 0`.
    Constant(BigRational),
    /// `F(y) = 1/(1+y)`.
    Reciprocal1p,
    /// `F(y) = sum_j a_j y^j`, certified nonvanishing on `[0, 1]` by
    /// interval bisection.
    Polynomial(Vec<BigRational>),
}

impl UnitFn {
    /// Reject units that vanish (or cannot be certified nonvanishing) on
    /// the image closure.
    pub fn validate(&self) -> Result<()> {
        match self {
            UnitFn::Constant(c) => {
                if c.is_zero() {
                    return Err(MildError::InvalidInput("unit constant must be nonzero".into()));
                }
            }
            UnitFn::Reciprocal1p => {}
            UnitFn::Polynomial(coeffs) => {
                if coeffs.iter().all(|c| c.is_zero()) {
                    return Err(MildError::InvalidInput("unit polynomial is zero".into()));
                }
                min_abs_on_unit_interval(coeffs)?;
            }
        }
        Ok(())
    }

    /// Growth certificate of `F` on `[0, 1]`.
    pub fn cert(&self) -> Result<MildCert> {
        let (a, b) = match self {
            UnitFn::Constant(c) => (BigRational::one(), c.abs()),
            UnitFn::Reciprocal1p => (BigRational::one(), BigRational::one()),
            UnitFn::Polynomial(coeffs) => {
                // |F^(k)(y)| <= k! sum_j |a_j| C(j,k) <= k! sum_j |a_j| 2^j.
                let b = coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c.abs() * BigRational::from_integer(BigInt::one() << j))
                    .sum();
                (BigRational::one(), b)
            }
        };
        MildCert::mild(Scalar::from_ratio(a), Scalar::from_ratio(b), BigRational::zero())
    }

    /// `F^(k)(y)`, numerically.
    fn derivative_at(&self, k: usize, y: &HPReal, prec: u32) -> HPReal {
        match self {
            UnitFn::Constant(c) => {
                if k == 0 {
                    HPReal::from_ratio(c, prec)
                } else {
                    HPReal::zero(prec)
                }
            }
            UnitFn::Reciprocal1p => {
                // (-1)^k k! (1+y)^-(k+1)
                let base = HPReal::one(prec).add(y).pow_i64(-(k as i64) - 1);
                let mut v = base.mul(&HPReal::from_bigint(&factorial(k), prec));
                if k % 2 == 1 {
                    v = v.neg();
                }
                v
            }
            UnitFn::Polynomial(coeffs) => {
                // Horner on the k-th derivative's coefficients
                // a_j * j!/(j-k)!.
                let mut acc = HPReal::zero(prec);
                for j in (k..coeffs.len()).rev() {
                    let falling = BigRational::from_integer(
                        factorial(j) / factorial(j - k),
                    );
                    acc = acc
                        .mul(y)
                        .add(&HPReal::from_ratio(&(&coeffs[j] * falling), prec));
                }
                acc
            }
        }
    }
}

/// Certified positive lower bound of `|F|` on `[0, 1]` by rational interval
/// bisection, or an error if `F` vanishes or cannot be separated from 0.
fn min_abs_on_unit_interval(coeffs: &[BigRational]) -> Result<BigRational> {
    fn horner_interval(
        coeffs: &[BigRational],
        lo: &BigRational,
        hi: &BigRational,
    ) -> (BigRational, BigRational) {
        let mut acc = (BigRational::zero(), BigRational::zero());
        for c in coeffs.iter().rev() {
            // acc * [lo, hi] + c
            let products = [&acc.0 * lo, &acc.0 * hi, &acc.1 * lo, &acc.1 * hi];
            let mut min = products[0].clone();
            let mut max = products[0].clone();
            for p in &products[1..] {
                if p < &min {
                    min = p.clone();
                }
                if p > &max {
                    max = p.clone();
                }
            }
            acc = (min + c, max + c);
        }
        acc
    }

    let mut stack = vec![(BigRational::zero(), BigRational::one(), 0u32)];
    let mut best: Option<BigRational> = None;
    let mut leaves = 0usize;
    while let Some((lo, hi, depth)) = stack.pop() {
        leaves += 1;
        if leaves > 1 << 16 {
            return Err(MildError::InvalidInput(
                "interval certification budget exhausted".into(),
            ));
        }
        let (flo, fhi) = horner_interval(coeffs, &lo, &hi);
        if flo.is_positive() || fhi.is_negative() {
            let m = flo.abs().min(fhi.abs());
            best = Some(match best {
                None => m,
                Some(b) => b.min(m),
            });
            continue;
        }
        if depth >= 24 {
            return Err(MildError::InvalidInput(format!(
                "cannot certify the unit polynomial nonvanishing near [{lo}, {hi}]"
            )));
        }
        let mid = (&lo + &hi) / BigRational::from_integer(BigInt::from(2));
        stack.push((lo, mid.clone(), depth + 1));
        stack.push((mid, hi, depth + 1));
    }
    best.ok_or_else(|| MildError::InvalidInput("empty interval certification".into()))
}

// ---------------------------------------------------------------------------
// Power-substitution charts
// ---------------------------------------------------------------------------

/// Specification of a power-substitution chart `f . P` with
/// `f(x) = b(x) F(b(x))`, `b(x) = x^mu`.
#[derive(Debug, Clone)]
pub struct ABMSpec {
    pub mu: Vec<BigRational>,
    pub unit: UnitFn,
    /// Index of the monomial component multiplying the unit (`b` is scalar
    /// here, so this must be 0).
    pub component_index: usize,
    /// Per-axis verification box inside `(0, 1]`; `None` sweeps the default
    /// composite grid on the full cube.
    pub domain: Option<Vec<(BigRational, BigRational)>>,
}

/// A power-substitution chart: the exact exp-monomial `b . P`, the unit,
/// and the assembled certificate for `(b . P) * F(b . P)`.
#[derive(Debug, Clone)]
pub struct AbmChart {
    pub spec: ABMSpec,
    pub alpha: Alpha,
    /// `b . P = exp(sum mu_i (1 - x_i^-alpha))`, exactly.
    pub base: ExpPoly,
    pub cert: MildCert,
}

/// Assemble a power-substitution chart: certificate
/// `product(cert_b, compose(cert_F, cert_b))` where `cert_b` comes from the
/// explicit power-substitution constants and `cert_F` from the unit
/// library.
pub fn abm_chart(spec: &ABMSpec, alpha: &Alpha) -> Result<AbmChart> {
    spec.unit.validate()?;
    if spec.component_index != 0 {
        return Err(MildError::InvalidInput(
            "the monomial part is scalar; component_index must be 0".into(),
        ));
    }
    let m = spec.mu.len();
    if m == 0 {
        return Err(MildError::InvalidInput("mu must be nonempty".into()));
    }
    if let Some(boxes) = &spec.domain {
        if boxes.len() != m {
            return Err(MildError::InvalidInput(format!(
                "domain has {} axes, mu has {m}",
                boxes.len()
            )));
        }
    }
    let m_const = compute_m(&spec.mu)?;
    let cert_b = abm_compose_cert(&spec.mu, m, alpha, &m_const)?;
    let cert_fb = compose_certs(&spec.unit.cert()?, &cert_b)?;
    let cert = product_certs(&cert_b, &cert_fb)?;
    let base = ExpPoly::construct(FnKind::ExpOfLinear(spec.mu.clone()), m, alpha.clone())?;
    Ok(AbmChart { spec: spec.clone(), alpha: alpha.clone(), base, cert })
}

impl AbmChart {
    /// Derivative family of the full chart `(b . P) * F(b . P)`.
    pub fn family(&self) -> AbmDerivFamily<'_> {
        AbmDerivFamily { b: PolyFamily::new(self.base.clone()), unit: &self.spec.unit }
    }

    /// The sweep grid for this chart's verification.
    pub fn grid(&self, grid_points: usize, precision_bits: u32) -> GridSpec {
        match &self.spec.domain {
            None => GridSpec::standard(grid_points, precision_bits),
            Some(boxes) => GridSpec::on_box(boxes.clone(), grid_points, precision_bits),
        }
    }

    /// Verify the assembled certificate on the chart's own grid.
    pub fn verify(
        &self,
        n_max: usize,
        grid_points: usize,
        precision_bits: u32,
    ) -> Result<BoundReport> {
        let fam = self.family();
        verify_cert(&fam, &self.cert, n_max, &self.grid(grid_points, precision_bits))
    }
}

/// Numeric derivative family of `(b . P) * F(b . P)`: the exp-monomial part
/// differentiates exactly; the unit composition goes through the partition
/// engine with the unit's closed-form derivatives; the product is assembled
/// by the Leibniz rule.
pub struct AbmDerivFamily<'a> {
    b: PolyFamily,
    unit: &'a UnitFn,
}

/// Oracle view of a table of already-evaluated derivative values.
struct MapOracle<'a> {
    arity_in: usize,
    values: &'a HashMap<Vec<usize>, HPReal>,
}

impl DerivativeOracle<HPReal> for MapOracle<'_> {
    fn arity_in(&self) -> usize {
        self.arity_in
    }

    fn arity_out(&self) -> usize {
        1
    }

    fn derivative(&self, _component: usize, index: &MultiIndex) -> Result<HPReal> {
        self.values
            .get(index.entries())
            .cloned()
            .ok_or_else(|| MildError::InvalidInput(format!("missing value at {index:?}")))
    }
}

/// Oracle view of a unit's derivatives at a fixed argument.
struct UnitOracle<'a> {
    unit: &'a UnitFn,
    y: HPReal,
    prec: u32,
}

impl DerivativeOracle<HPReal> for UnitOracle<'_> {
    fn arity_in(&self) -> usize {
        1
    }

    fn arity_out(&self) -> usize {
        1
    }

    fn derivative(&self, _component: usize, index: &MultiIndex) -> Result<HPReal> {
        Ok(self.unit.derivative_at(index.order(), &self.y, self.prec))
    }
}

impl DerivativeFamily for AbmDerivFamily<'_> {
    fn arity(&self) -> usize {
        self.b.arity()
    }

    fn eval_batch(
        &self,
        nus: &[MultiIndex],
        point: &[BigRational],
        prec: u32,
    ) -> Result<Vec<HPReal>> {
        let m = self.arity();
        // Downward closure: the Leibniz sum at nu needs every kappa <= nu.
        let mut closure: HashSet<Vec<usize>> = HashSet::new();
        for nu in nus {
            let mut idx = vec![0usize; m];
            loop {
                closure.insert(idx.clone());
                let mut ax = 0;
                loop {
                    if ax == m {
                        break;
                    }
                    idx[ax] += 1;
                    if idx[ax] <= nu.entries()[ax] {
                        break;
                    }
                    idx[ax] = 0;
                    ax += 1;
                }
                if ax == m {
                    break;
                }
            }
        }
        let indices: Vec<MultiIndex> =
            closure.into_iter().map(MultiIndex::new).collect();

        // Exact exp-monomial derivatives, one shared evaluation context.
        let b_vals_vec = self.b.eval_batch(&indices, point, prec)?;
        let b_vals: HashMap<Vec<usize>, HPReal> = indices
            .iter()
            .map(|i| i.entries().to_vec())
            .zip(b_vals_vec)
            .collect();

        // Unit-composition derivatives via the partition engine.
        let y = b_vals[&vec![0usize; m]].clone();
        let unit_oracle = UnitOracle { unit: self.unit, y, prec };
        let b_oracle = MapOracle { arity_in: m, values: &b_vals };
        let mut fb_vals: HashMap<Vec<usize>, HPReal> = HashMap::new();
        for idx in &indices {
            let v = compose_derivative(&unit_oracle, &b_oracle, idx)?;
            fb_vals.insert(idx.entries().to_vec(), v);
        }

        // Leibniz assembly per requested index.
        nus.iter()
            .map(|nu| {
                let mut acc = HPReal::zero(prec);
                let mut kappa = vec![0usize; m];
                loop {
                    let mut coeff = BigInt::one();
                    let mut rest = Vec::with_capacity(m);
                    for ax in 0..m {
                        coeff *= binomial(
                            BigInt::from(nu.entries()[ax]),
                            BigInt::from(kappa[ax]),
                        );
                        rest.push(nu.entries()[ax] - kappa[ax]);
                    }
                    let term = b_vals[&kappa]
                        .mul(&fb_vals[&rest])
                        .mul(&HPReal::from_bigint(&coeff, prec));
                    acc = acc.add(&term);
                    let mut ax = 0;
                    loop {
                        if ax == m {
                            break;
                        }
                        kappa[ax] += 1;
                        if kappa[ax] <= nu.entries()[ax] {
                            break;
                        }
                        kappa[ax] = 0;
                        ax += 1;
                    }
                    if ax == m {
                        break;
                    }
                }
                Ok(acc)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Families of power-substitution charts
// ---------------------------------------------------------------------------

/// Built-in bounded coefficient functions `a(t)` with `sup |a| <= 1` on
/// `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoeffFn {
    /// `a(t) = 1`.
    One,
    /// `a(t) = t`.
    Ident,
}

impl CoeffFn {
    fn at(&self, t: &BigRational) -> BigRational {
        match self {
            CoeffFn::One => BigRational::one(),
            CoeffFn::Ident => t.clone(),
        }
    }
}

/// A `t`-indexed family of univariate power-substitution charts
/// `a(t) x^r . P_alpha` sharing one certificate.
#[derive(Debug)]
pub struct AbmFamilyParam {
    pub alpha: Alpha,
    pub r: BigRational,
    pub t_grid: Vec<BigRational>,
    pub charts: Vec<AbmChart>,
    pub uniform_cert: MildCert,
}

/// Build the family of charts `a(t) x^r . P_alpha` over the `t` grid. The
/// shared certificate is the power-substitution certificate of `x^r . P`;
/// scaling by `|a(t)| <= 1` keeps it valid for every member.
pub fn family_abm_charts(
    a: CoeffFn,
    r: &BigRational,
    t_grid: &[BigRational],
    alpha: &Alpha,
) -> Result<AbmFamilyParam> {
    if r < &BigRational::one() {
        return Err(MildError::InvalidInput(format!(
            "exponent r = {r} < 1: the monomial's derivative a(t) r x^(r-1) \
             is unbounded near 0"
        )));
    }
    if t_grid.is_empty() {
        return Err(MildError::InvalidInput("t grid must be nonempty".into()));
    }
    for t in t_grid {
        if t.is_negative() || t > &BigRational::one() {
            return Err(MildError::InvalidInput(format!("t = {t} outside [0, 1]")));
        }
    }
    let mu = vec![r.clone()];
    let m_const = compute_m(&mu)?;
    let uniform_cert = abm_compose_cert(&mu, 1, alpha, &m_const)?;
    let base = ExpPoly::construct(FnKind::ExpOfLinear(mu.clone()), 1, alpha.clone())?;
    let charts = t_grid
        .iter()
        .map(|t| {
            Ok(AbmChart {
                spec: ABMSpec {
                    mu: mu.clone(),
                    unit: UnitFn::Constant(BigRational::one()),
                    component_index: 0,
                    domain: None,
                },
                alpha: alpha.clone(),
                base: base.scale(&a.at(t)),
                cert: uniform_cert.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AbmFamilyParam {
        alpha: alpha.clone(),
        r: r.clone(),
        t_grid: t_grid.to_vec(),
        charts,
        uniform_cert,
    })
}

/// Verify every chart of the family against the shared certificate and
/// aggregate (worst case per order).
pub fn verify_abm_family(
    family: &AbmFamilyParam,
    n_max: usize,
    grid_points: usize,
    precision_bits: u32,
) -> Result<BoundReport> {
    let reports = family
        .charts
        .iter()
        .map(|c| {
            let fam = PolyFamily::new(c.base.clone());
            verify_cert(
                &fam,
                &family.uniform_cert,
                n_max,
                &c.grid(grid_points, precision_bits),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    merge_reports(reports)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
