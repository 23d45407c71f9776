//! Higher-order chain rule combinatorics.
//!
//! Two enumerations drive everything here:
//!
//! - Univariate: the compact form of the n-th derivative of a composition
//!   sums over all `(k_1, ..., k_n)` with `sum i*k_i = n`, each weighted by
//!   the integer `n! / prod(k_i! * (i!)^k_i)`.
//! - Multivariate: for a multi-index `nu` (input side, `e` variables) and
//!   `lambda` (outer side, `d` variables), the sum runs over tuples of
//!   multi-indices `(k_1..k_s; l_1 < l_2 < ... < l_s)` with `sum k_j = lambda`
//!   and `sum |k_j| * l_j = nu`, where `<` orders first by total degree and
//!   then lexicographically. The weight is
//!   `nu! / prod_j (k_j! * (l_j!)^|k_j|)` with multi-index factorials taken
//!   componentwise.
//!
//! [`compose_derivative`] turns these enumerations plus two derivative
//! oracles into the exact derivative of a composition, generically over any
//! value type with ring operations (exact rationals, exp-monomial
//! expressions, or high-precision floats).

use crate::error::{MildError, Result};
use crate::hpreal::HPReal;
use crate::ratcalc::ExpPoly;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

// ---------------------------------------------------------------------------
// Multi-indices
// ---------------------------------------------------------------------------

/// A multi-index: a vector of nonnegative integer derivative orders.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(entries: Vec<usize>) -> Self {
        MultiIndex(entries)
    }

    pub fn zeros(len: usize) -> Self {
        MultiIndex(vec![0; len])
    }

    pub fn entries(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total order `|nu|`.
    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    /// The chain ordering: by total order first, then lexicographically.
    pub fn chain_cmp(&self, other: &Self) -> Ordering {
        self.order()
            .cmp(&other.order())
            .then_with(|| self.0.cmp(&other.0))
    }

    /// Componentwise `self <= other`.
    pub fn le_componentwise(&self, other: &Self) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    fn sub(&self, other: &Self) -> Self {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    fn scaled(&self, c: usize) -> Self {
        MultiIndex(self.0.iter().map(|a| a * c).collect())
    }

    /// Multi-index factorial `prod_i entries_i!`.
    pub fn factorial(&self) -> BigInt {
        self.0.iter().map(|&e| factorial(e)).product()
    }

    /// All multi-indices of the given length with `lo <= order <= hi`,
    /// in chain order.
    pub fn all_with_order_between(len: usize, lo: usize, hi: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut cur = vec![0usize; len];
        collect_with_order(&mut cur, 0, hi, &mut out);
        out.retain(|m| m.order() >= lo);
        out.sort_by(|a, b| a.chain_cmp(b));
        out
    }
}

fn collect_with_order(cur: &mut Vec<usize>, pos: usize, budget: usize, out: &mut Vec<MultiIndex>) {
    if pos == cur.len() {
        out.push(MultiIndex(cur.clone()));
        return;
    }
    for v in 0..=budget {
        cur[pos] = v;
        collect_with_order(cur, pos + 1, budget - v, out);
    }
    cur[pos] = 0;
}

/// `n!` as a big integer.
pub fn factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

// ---------------------------------------------------------------------------
// Univariate partitions
// ---------------------------------------------------------------------------

/// One univariate partition term: multiplicities `k_i` of part size `i`
/// with `sum i*k_i = n`, and its integer weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionTerm {
    /// Multiplicity vector `(k_1, ..., k_n)`.
    pub k: Vec<usize>,
    /// `n! / prod(k_i! * (i!)^k_i)`.
    pub coeff: BigInt,
    /// `sum k_i`, the order of the outer derivative this term feeds.
    pub k_total: usize,
}

fn univariate_cache() -> &'static Mutex<HashMap<usize, Arc<Vec<PartitionTerm>>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<PartitionTerm>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// All partition terms of `n >= 1`, memoized.
pub fn partitions_univariate(n: usize) -> Result<Arc<Vec<PartitionTerm>>> {
    if n == 0 {
        return Err(MildError::InvalidInput(
            "partition enumeration needs n >= 1 (the n = 0 sum is empty)".into(),
        ));
    }
    if let Some(v) = univariate_cache().lock().unwrap().get(&n) {
        return Ok(v.clone());
    }
    let mut terms = Vec::new();
    let mut k = vec![0usize; n];
    enumerate_partitions(n, n, &mut k, &mut terms);
    terms.sort_by(|a, b| a.k.cmp(&b.k));
    let terms = Arc::new(terms);
    univariate_cache().lock().unwrap().insert(n, terms.clone());
    Ok(terms)
}

/// Fill multiplicities for part sizes `1..=max_part` summing to `remaining`.
fn enumerate_partitions(
    remaining: usize,
    max_part: usize,
    k: &mut Vec<usize>,
    out: &mut Vec<PartitionTerm>,
) {
    if remaining == 0 {
        let n = k.len();
        let coeff = coefficient_of_partition(n, k).expect("constraint holds by construction");
        out.push(PartitionTerm { k: k.clone(), coeff, k_total: k.iter().sum() });
        return;
    }
    if max_part == 0 {
        return;
    }
    for count in 0..=(remaining / max_part) {
        k[max_part - 1] = count;
        enumerate_partitions(remaining - count * max_part, max_part - 1, k, out);
    }
    k[max_part - 1] = 0;
}

/// The integer weight `n! / prod(k_i! * (i!)^k_i)` of one partition term.
pub fn coefficient_of_partition(n: usize, k: &[usize]) -> Result<BigInt> {
    let weighted: usize = k.iter().enumerate().map(|(i, &ki)| (i + 1) * ki).sum();
    if weighted != n {
        return Err(MildError::InvalidInput(format!(
            "multiplicities weight to {weighted}, expected {n}"
        )));
    }
    let mut denom = BigInt::one();
    for (i, &ki) in k.iter().enumerate() {
        if ki == 0 {
            continue;
        }
        denom *= factorial(ki) * factorial(i + 1).pow(ki as u32);
    }
    let num = factorial(n);
    let (q, r) = num_integer::Integer::div_rem(&num, &denom);
    debug_assert!(r.is_zero(), "partition weight must divide n! exactly");
    Ok(q)
}

// ---------------------------------------------------------------------------
// Multivariate tuples
// ---------------------------------------------------------------------------

/// One multivariate chain-rule tuple `(k_1..k_s; l_1 < ... < l_s)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PSTuple {
    /// Chain length `s >= 1`.
    pub s: usize,
    /// Outer-side multiplicities, each with `|k_j| > 0`, summing to `lambda`.
    pub ks: Vec<MultiIndex>,
    /// Strictly chain-increasing inner derivative indices.
    pub ls: Vec<MultiIndex>,
    /// `nu! / prod_j (k_j! * (l_j!)^|k_j|)`.
    pub coeff: BigRational,
}

type PsKey = (Vec<usize>, Vec<usize>);

fn ps_cache() -> &'static Mutex<HashMap<PsKey, Arc<Vec<PSTuple>>>> {
    static CACHE: OnceLock<Mutex<HashMap<PsKey, Arc<Vec<PSTuple>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Enumerate all tuples for the pair `(nu, lambda)`, memoized.
///
/// Returns an empty list (not an error) when `|lambda| = 0` or
/// `|lambda| > |nu|`: the corresponding sum has no terms.
pub fn enumerate_ps(nu: &MultiIndex, lambda: &MultiIndex) -> Arc<Vec<PSTuple>> {
    let key: PsKey = (nu.entries().to_vec(), lambda.entries().to_vec());
    if let Some(v) = ps_cache().lock().unwrap().get(&key) {
        return v.clone();
    }
    let mut tuples = Vec::new();
    if lambda.order() >= 1 && lambda.order() <= nu.order() {
        // Candidate inner indices: every 0 < l <= nu componentwise, in
        // chain order, so DFS chains are strictly increasing by position.
        let candidates: Vec<MultiIndex> =
            MultiIndex::all_with_order_between(nu.len(), 1, nu.order())
                .into_iter()
                .filter(|l| l.le_componentwise(nu))
                .collect();
        let mut ks: Vec<MultiIndex> = Vec::new();
        let mut ls: Vec<MultiIndex> = Vec::new();
        dfs_chains(
            &candidates,
            0,
            nu,
            lambda,
            &nu.clone(),
            &lambda.clone(),
            &mut ks,
            &mut ls,
            &mut tuples,
        );
    }
    let tuples = Arc::new(tuples);
    ps_cache().lock().unwrap().insert(key, tuples.clone());
    tuples
}

#[allow(clippy::too_many_arguments)]
fn dfs_chains(
    candidates: &[MultiIndex],
    start: usize,
    nu: &MultiIndex,
    lambda: &MultiIndex,
    nu_rem: &MultiIndex,
    lambda_rem: &MultiIndex,
    ks: &mut Vec<MultiIndex>,
    ls: &mut Vec<MultiIndex>,
    out: &mut Vec<PSTuple>,
) {
    if lambda_rem.order() == 0 {
        if nu_rem.order() == 0 {
            out.push(make_tuple(nu, ks.clone(), ls.clone()));
        }
        return;
    }
    // Each remaining k contributes at least |l| >= 1 per unit of |k|.
    if nu_rem.order() < lambda_rem.order() {
        return;
    }
    for (i, l) in candidates.iter().enumerate().skip(start) {
        if !l.le_componentwise(nu_rem) {
            continue;
        }
        // Choose the multiplicity k attached to this l.
        let max_count = nu_rem
            .entries()
            .iter()
            .zip(l.entries())
            .filter(|(_, &le)| le > 0)
            .map(|(&ne, &le)| ne / le)
            .min()
            .unwrap_or(0)
            .min(lambda_rem.order());
        for k in k_choices(lambda_rem, max_count) {
            let used = l.scaled(k.order());
            if !used.le_componentwise(nu_rem) {
                continue;
            }
            ks.push(k.clone());
            ls.push(l.clone());
            dfs_chains(
                candidates,
                i + 1,
                nu,
                lambda,
                &nu_rem.sub(&used),
                &lambda_rem.sub(&k),
                ks,
                ls,
                out,
            );
            ks.pop();
            ls.pop();
        }
    }
}

/// All nonzero `k <= lambda_rem` componentwise with `|k| <= max_order`.
fn k_choices(lambda_rem: &MultiIndex, max_order: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; lambda_rem.len()];
    fn rec(
        lambda_rem: &[usize],
        pos: usize,
        cur: &mut Vec<usize>,
        max_order: usize,
        used: usize,
        out: &mut Vec<MultiIndex>,
    ) {
        if pos == lambda_rem.len() {
            if used > 0 {
                out.push(MultiIndex::new(cur.clone()));
            }
            return;
        }
        for v in 0..=lambda_rem[pos].min(max_order - used) {
            cur[pos] = v;
            rec(lambda_rem, pos + 1, cur, max_order, used + v, out);
        }
        cur[pos] = 0;
    }
    rec(lambda_rem.entries(), 0, &mut cur, max_order, 0, &mut out);
    out
}

fn make_tuple(nu: &MultiIndex, ks: Vec<MultiIndex>, ls: Vec<MultiIndex>) -> PSTuple {
    let mut denom = BigInt::one();
    for (k, l) in ks.iter().zip(&ls) {
        denom *= k.factorial() * l.factorial().pow(k.order() as u32);
    }
    PSTuple {
        s: ks.len(),
        coeff: BigRational::new(nu.factorial(), denom),
        ks,
        ls,
    }
}

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

/// Value algebra the composition sum is computed in.
pub trait ComposeValue: Clone {
    fn cv_add(&self, other: &Self) -> Result<Self>;
    fn cv_mul(&self, other: &Self) -> Result<Self>;
    fn cv_scale(&self, c: &BigRational) -> Self;
}

impl ComposeValue for BigRational {
    fn cv_add(&self, other: &Self) -> Result<Self> {
        Ok(self + other)
    }
    fn cv_mul(&self, other: &Self) -> Result<Self> {
        Ok(self * other)
    }
    fn cv_scale(&self, c: &BigRational) -> Self {
        self * c
    }
}

impl ComposeValue for HPReal {
    fn cv_add(&self, other: &Self) -> Result<Self> {
        Ok(self.add(other))
    }
    fn cv_mul(&self, other: &Self) -> Result<Self> {
        Ok(self.mul(other))
    }
    fn cv_scale(&self, c: &BigRational) -> Self {
        self.mul(&HPReal::from_ratio(c, self.precision()))
    }
}

impl ComposeValue for ExpPoly {
    fn cv_add(&self, other: &Self) -> Result<Self> {
        self.add(other)
    }
    fn cv_mul(&self, other: &Self) -> Result<Self> {
        self.mul(other)
    }
    fn cv_scale(&self, c: &BigRational) -> Self {
        self.scale(c)
    }
}

/// Source of exact derivatives of a (possibly vector-valued) function.
///
/// `derivative(c, index)` is the derivative of output component `c` at
/// multi-index `index` over `arity_in` input variables. Implementations are
/// deterministic; the zero index returns the component itself. For numeric
/// use the oracle is bound to its evaluation point at construction.
pub trait DerivativeOracle<V> {
    fn arity_in(&self) -> usize;
    fn arity_out(&self) -> usize;
    fn derivative(&self, component: usize, index: &MultiIndex) -> Result<V>;
}

/// Exact derivative of the composition `f(g(x))` at multi-index `nu`.
///
/// `f` is scalar-valued on `d = g.arity_out()` variables; its oracle must
/// yield the values of `f`'s derivatives already taken at `g(x)` (symbolic
/// instantiations return expressions in `x`). The zero index returns the
/// composition itself.
pub fn compose_derivative<V: ComposeValue>(
    f: &dyn DerivativeOracle<V>,
    g: &dyn DerivativeOracle<V>,
    nu: &MultiIndex,
) -> Result<V> {
    if f.arity_out() != 1 {
        return Err(MildError::InvalidInput(
            "outer function must be scalar-valued".into(),
        ));
    }
    let d = f.arity_in();
    if g.arity_out() != d {
        return Err(MildError::InvalidInput(format!(
            "inner function has {} components, outer expects {d}",
            g.arity_out()
        )));
    }
    if nu.len() != g.arity_in() {
        return Err(MildError::InvalidInput(format!(
            "index length {} does not match inner arity {}",
            nu.len(),
            g.arity_in()
        )));
    }
    let n = nu.order();
    if n == 0 {
        return f.derivative(0, &MultiIndex::zeros(d));
    }
    let mut total: Option<V> = None;
    for lambda in MultiIndex::all_with_order_between(d, 1, n) {
        let tuples = enumerate_ps(nu, &lambda);
        if tuples.is_empty() {
            continue;
        }
        let f_val = f.derivative(0, &lambda)?;
        let mut inner: Option<V> = None;
        for t in tuples.iter() {
            // prod_j prod_c g_c^(l_j) ^ k_{j,c}, scaled by the tuple weight.
            let mut prod: Option<V> = None;
            for (k, l) in t.ks.iter().zip(&t.ls) {
                for (c, &kc) in k.entries().iter().enumerate() {
                    if kc == 0 {
                        continue;
                    }
                    let gv = g.derivative(c, l)?;
                    for _ in 0..kc {
                        prod = Some(match prod {
                            None => gv.clone(),
                            Some(p) => p.cv_mul(&gv)?,
                        });
                    }
                }
            }
            let term = prod
                .expect("every tuple has at least one factor")
                .cv_scale(&t.coeff);
            inner = Some(match inner {
                None => term,
                Some(acc) => acc.cv_add(&term)?,
            });
        }
        if let Some(inner) = inner {
            let term = f_val.cv_mul(&inner)?;
            total = Some(match total {
                None => term,
                Some(acc) => acc.cv_add(&term)?,
            });
        }
    }
    total.ok_or_else(|| {
        MildError::InvalidInput("composition sum was unexpectedly empty".into())
    })
}

// ---------------------------------------------------------------------------
// Oracle implementations
// ---------------------------------------------------------------------------

/// Oracle over an exp-monomial expression: exact repeated differentiation,
/// memoized per multi-index.
pub struct ExpPolyOracle {
    base: ExpPoly,
    cache: Mutex<HashMap<Vec<usize>, ExpPoly>>,
}

impl ExpPolyOracle {
    pub fn new(base: ExpPoly) -> Self {
        ExpPolyOracle { base, cache: Mutex::new(HashMap::new()) }
    }
}

impl DerivativeOracle<ExpPoly> for ExpPolyOracle {
    fn arity_in(&self) -> usize {
        self.base.arity()
    }

    fn arity_out(&self) -> usize {
        1
    }

    fn derivative(&self, component: usize, index: &MultiIndex) -> Result<ExpPoly> {
        if component != 0 {
            return Err(MildError::InvalidInput("scalar oracle has one component".into()));
        }
        if let Some(p) = self.cache.lock().unwrap().get(index.entries()) {
            return Ok(p.clone());
        }
        let p = self.base.derivative_multi(index.entries())?;
        self.cache
            .lock()
            .unwrap()
            .insert(index.entries().to_vec(), p.clone());
        Ok(p)
    }
}

/// Oracle for an outer exponential: every derivative of `exp` at `g(x)` is
/// `exp(g(x))` itself, supplied as a fixed expression in `x`.
pub struct ExpOuterOracle {
    composed: ExpPoly,
    arity_in: usize,
}

impl ExpOuterOracle {
    /// `composed` is `exp(g(x))` as an expression in the inner variables.
    pub fn new(composed: ExpPoly, arity_in: usize) -> Self {
        ExpOuterOracle { composed, arity_in }
    }
}

impl DerivativeOracle<ExpPoly> for ExpOuterOracle {
    fn arity_in(&self) -> usize {
        self.arity_in
    }

    fn arity_out(&self) -> usize {
        1
    }

    fn derivative(&self, component: usize, _index: &MultiIndex) -> Result<ExpPoly> {
        if component != 0 {
            return Err(MildError::InvalidInput("scalar oracle has one component".into()));
        }
        Ok(self.composed.clone())
    }
}

/// Univariate scalar oracle backed by a closure from derivative order to
/// value (used for sequence-defined derivatives like generating functions).
pub struct SequenceOracle<V, F: Fn(usize) -> Result<V>> {
    f: F,
}

impl<V, F: Fn(usize) -> Result<V>> SequenceOracle<V, F> {
    pub fn new(f: F) -> Self {
        SequenceOracle { f }
    }
}

impl<V, F: Fn(usize) -> Result<V>> DerivativeOracle<V> for SequenceOracle<V, F> {
    fn arity_in(&self) -> usize {
        1
    }

    fn arity_out(&self) -> usize {
        1
    }

    fn derivative(&self, component: usize, index: &MultiIndex) -> Result<V> {
        if component != 0 {
            return Err(MildError::InvalidInput("scalar oracle has one component".into()));
        }
        (self.f)(index.order())
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
