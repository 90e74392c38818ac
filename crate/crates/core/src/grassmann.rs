//! Exact finite Grassmann algebra: products with sign bookkeeping, Berezin
//! integration, Gaussian (Wick) expectations, truncated expectations and the
//! Gram-Hadamard determinant bound.
//!
//! Generators are psi^-_i and psi^+_i for i = 0..n. Generator ids are
//! 2i (for psi^-_i) and 2i + 1 (for psi^+_i); a monomial is the product of its
//! generators in increasing id order and is stored as a bitmask.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};
use std::collections::BTreeMap;
use std::fmt;
use std::ops::Neg;

/// Coefficient field of the algebra.
pub trait Coeff: Clone + PartialEq + Num + Neg<Output = Self> + FromPrimitive + Send + Sync + fmt::Debug {
    /// Size used for pivot selection.
    fn magnitude(&self) -> f64;
}

impl Coeff for Complex64 {
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl Coeff for BigRational {
    fn magnitude(&self) -> f64 {
        self.abs().to_f64().unwrap_or(f64::INFINITY)
    }
}

/// Charge of a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Charge {
    Minus,
    Plus,
}

/// Generator id of psi^{charge}_index.
pub fn gen_id(index: usize, charge: Charge) -> usize {
    2 * index + usize::from(charge == Charge::Plus)
}

/// (index, charge) of a generator id.
pub fn gen_of(id: usize) -> (usize, Charge) {
    (id / 2, if id % 2 == 1 { Charge::Plus } else { Charge::Minus })
}

/// Sign of the product of two canonical monomials, or None if they share a generator.
pub fn monomial_product_sign(a: u64, b: u64) -> Option<bool> {
    if a & b != 0 {
        return None;
    }
    // Each generator of b must pass every larger generator of a.
    let mut swaps = 0u32;
    let mut rest = b;
    while rest != 0 {
        let bit = rest.trailing_zeros();
        rest &= rest - 1;
        let above = if bit >= 63 { 0 } else { a >> (bit + 1) };
        swaps += above.count_ones();
    }
    Some(swaps % 2 == 1)
}

/// Element of the finite Grassmann algebra over `T`.
#[derive(Clone, PartialEq)]
pub struct GrassmannPoly<T: Coeff> {
    pub terms: BTreeMap<u64, T>,
    /// Number of generator ids (twice the number of field indices).
    pub n_generators: usize,
}

impl<T: Coeff> fmt::Debug for GrassmannPoly<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl<T: Coeff> fmt::Display for GrassmannPoly<T> {
    /// Sorted term list: `coeff * [ids]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            let ids: Vec<usize> = (0..64).filter(|i| m >> i & 1 == 1).collect();
            write!(f, "({c:?})*{ids:?}")?;
        }
        Ok(())
    }
}

impl<T: Coeff> GrassmannPoly<T> {
    pub fn zero(n_generators: usize) -> Self {
        assert!(n_generators <= 64, "at most 64 generator ids are supported");
        GrassmannPoly { terms: BTreeMap::new(), n_generators }
    }

    pub fn scalar(n_generators: usize, c: T) -> Self {
        let mut p = Self::zero(n_generators);
        p.add_term(0, c);
        p
    }

    pub fn one(n_generators: usize) -> Self {
        Self::scalar(n_generators, T::one())
    }

    /// A single generator psi^{charge}_index.
    pub fn generator(n_generators: usize, index: usize, charge: Charge) -> Self {
        let id = gen_id(index, charge);
        assert!(id < n_generators);
        let mut p = Self::zero(n_generators);
        p.add_term(1u64 << id, T::one());
        p
    }

    /// c times the ordered product of the listed generator ids.
    pub fn product_of(n_generators: usize, ids: &[usize], c: T) -> Self {
        let mut p = Self::scalar(n_generators, c);
        for &id in ids {
            let (i, ch) = gen_of(id);
            p = p.mul(&Self::generator(n_generators, i, ch));
        }
        p
    }

    fn add_term(&mut self, m: u64, c: T) {
        if c.is_zero() {
            return;
        }
        let remove = match self.terms.get_mut(&m) {
            Some(v) => {
                *v = v.clone() + c;
                v.is_zero()
            }
            None => {
                self.terms.insert(m, c);
                false
            }
        };
        if remove {
            self.terms.remove(&m);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Scalar (degree-zero) part.
    pub fn scalar_part(&self) -> T {
        self.terms.get(&0).cloned().unwrap_or_else(T::zero)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(*m, c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&-T::one()))
    }

    pub fn scale(&self, c: &T) -> Self {
        let mut out = Self::zero(self.n_generators);
        for (m, v) in &self.terms {
            out.add_term(*m, v.clone() * c.clone());
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.n_generators.max(other.n_generators));
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                if let Some(neg) = monomial_product_sign(*ma, *mb) {
                    let c = ca.clone() * cb.clone();
                    out.add_term(ma | mb, if neg { -c } else { c });
                }
            }
        }
        out
    }

    /// True when every monomial has even degree.
    pub fn is_even(&self) -> bool {
        self.terms.keys().all(|m| m.count_ones() % 2 == 0)
    }

    /// Exponential sum_k X^k / k!, exact because the nilpotent part terminates.
    pub fn exp(&self) -> Self {
        let s = self.scalar_part();
        assert!(s.is_zero(), "exp is implemented for elements without scalar part");
        let mut out = Self::one(self.n_generators);
        let mut power = Self::one(self.n_generators);
        let mut k = 1u64;
        loop {
            power = power.mul(self);
            if power.is_zero() {
                break;
            }
            let inv = T::one() / T::from_u64(k).expect("factorial factor");
            power = power.scale(&inv);
            out = out.add(&power);
            k += 1;
        }
        out
    }

    /// Iterated Berezin integral  int d psi_{ids[0]} ... d psi_{ids[last]} p,
    /// with the rightmost differential applied first and int d psi psi = 1.
    pub fn berezin_integrate(&self, ids: &[usize]) -> Self {
        let mut cur = self.clone();
        for &id in ids.iter().rev() {
            let bit = 1u64 << id;
            let mut next = Self::zero(self.n_generators);
            for (m, c) in &cur.terms {
                if m & bit == 0 {
                    continue;
                }
                // Bring psi_id to the front of the canonical product.
                let before = (m & (bit - 1)).count_ones();
                let c = if before % 2 == 1 { -c.clone() } else { c.clone() };
                next.add_term(m & !bit, c);
            }
            cur = next;
        }
        cur
    }

    /// Substitutes psi^{+-}_i -> sum_j map[i][j] psi^{+-}_j into an algebra with `n_target` ids.
    pub fn substitute(&self, n_target: usize, map: &[Vec<usize>]) -> Self {
        let mut out = Self::zero(n_target);
        for (m, c) in &self.terms {
            let mut acc = Self::scalar(n_target, c.clone());
            for id in 0..64 {
                if m >> id & 1 == 0 {
                    continue;
                }
                let (i, ch) = gen_of(id);
                let mut sum = Self::zero(n_target);
                for &j in &map[i] {
                    sum = sum.add(&Self::generator(n_target, j, ch));
                }
                acc = acc.mul(&sum);
            }
            out = out.add(&acc);
        }
        out
    }
}

/// Measure ordering int prod_i d psi^+_i d psi^-_i over indices 0..n.
pub fn standard_measure(n_indices: usize) -> Vec<usize> {
    (0..n_indices).flat_map(|i| [gen_id(i, Charge::Plus), gen_id(i, Charge::Minus)]).collect()
}

/// The quadratic form -sum_{ij} psi^+_i m[i][j] psi^-_j.
pub fn quadratic_form<T: Coeff>(m: &[Vec<T>]) -> GrassmannPoly<T> {
    let n = m.len();
    let ng = 2 * n;
    let mut out = GrassmannPoly::zero(ng);
    for i in 0..n {
        for j in 0..n {
            let term = GrassmannPoly::product_of(ng, &[gen_id(i, Charge::Plus), gen_id(j, Charge::Minus)], -m[i][j].clone());
            out = out.add(&term);
        }
    }
    out
}

/// Gram factorization C[i][j] = <A_i, B_j> with conjugate-linear first slot.
#[derive(Debug, Clone, PartialEq)]
pub struct GramFactor {
    pub a: Vec<Vec<Complex64>>,
    pub b: Vec<Vec<Complex64>>,
}

/// Grassmann covariance E[psi^-_a psi^+_b] = matrix[a][b].
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance<T: Coeff> {
    pub matrix: Vec<Vec<T>>,
    pub gram: Option<GramFactor>,
}

impl<T: Coeff> Covariance<T> {
    pub fn new(matrix: Vec<Vec<T>>) -> Self {
        Covariance { matrix, gram: None }
    }

    pub fn dim(&self) -> usize {
        self.matrix.len()
    }
}

impl Covariance<Complex64> {
    /// Covariance built from a Gram factorization.
    pub fn from_gram(a: Vec<Vec<Complex64>>, b: Vec<Vec<Complex64>>) -> Self {
        let matrix = a
            .iter()
            .map(|ai| b.iter().map(|bj| ai.iter().zip(bj).map(|(x, y)| x.conj() * y).sum()).collect())
            .collect();
        Covariance { matrix, gram: Some(GramFactor { a, b }) }
    }
}

/// Determinant by Gaussian elimination with largest-magnitude pivoting.
pub fn determinant<T: Coeff>(m: &[Vec<T>]) -> T {
    let n = m.len();
    let mut a: Vec<Vec<T>> = m.to_vec();
    let mut det = T::one();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].magnitude().total_cmp(&a[j][col].magnitude())).unwrap();
        if a[piv][col].is_zero() {
            return T::zero();
        }
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        let p = a[col][col].clone();
        det = det * p.clone();
        for r in col + 1..n {
            if a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone() / p.clone();
            for c in col..n {
                let v = a[col][c].clone() * f.clone();
                a[r][c] = a[r][c].clone() - v;
            }
        }
    }
    det
}

/// Matrix inverse by Gauss-Jordan elimination.
pub fn inverse<T: Coeff>(m: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let n = m.len();
    let mut a: Vec<Vec<T>> = m.to_vec();
    let mut inv: Vec<Vec<T>> = (0..n).map(|i| (0..n).map(|j| if i == j { T::one() } else { T::zero() }).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].magnitude().total_cmp(&a[j][col].magnitude())).unwrap();
        if a[piv][col].is_zero() {
            return Err(Error::SingularCovariance);
        }
        a.swap(piv, col);
        inv.swap(piv, col);
        let p = a[col][col].clone();
        for c in 0..n {
            a[col][c] = a[col][c].clone() / p.clone();
            inv[col][c] = inv[col][c].clone() / p.clone();
        }
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone();
            for c in 0..n {
                let v = a[col][c].clone() * f.clone();
                a[r][c] = a[r][c].clone() - v;
                let w = inv[col][c].clone() * f.clone();
                inv[r][c] = inv[r][c].clone() - w;
            }
        }
    }
    Ok(inv)
}

/// Wick expectation of a canonical monomial (bitmask): reorder into
/// psi^-_{a1} psi^+_{b1} psi^-_{a2} psi^+_{b2} ... and take det cov[a_i][b_j].
pub fn monomial_expectation<T: Coeff>(cov: &Covariance<T>, m: u64) -> T {
    let ids: Vec<usize> = (0..64).filter(|i| m >> i & 1 == 1).collect();
    let minus: Vec<usize> = ids.iter().copied().filter(|i| i % 2 == 0).collect();
    let plus: Vec<usize> = ids.iter().copied().filter(|i| i % 2 == 1).collect();
    if minus.len() != plus.len() {
        return T::zero();
    }
    if minus.is_empty() {
        return T::one();
    }
    let target: Vec<usize> = minus.iter().zip(&plus).flat_map(|(a, b)| [*a, *b]).collect();
    let mut inversions = 0usize;
    for i in 0..target.len() {
        for j in i + 1..target.len() {
            if target[i] > target[j] {
                inversions += 1;
            }
        }
    }
    let sub: Vec<Vec<T>> = minus
        .iter()
        .map(|&a| plus.iter().map(|&b| cov.matrix[a / 2][b / 2].clone()).collect())
        .collect();
    let d = determinant(&sub);
    if inversions % 2 == 1 {
        -d
    } else {
        d
    }
}

/// Gaussian expectation of a polynomial, term by term with the Wick determinant.
pub fn gaussian_expectation<T: Coeff>(cov: &Covariance<T>, p: &GrassmannPoly<T>) -> T {
    let mut acc = T::zero();
    for (m, c) in &p.terms {
        let e = monomial_expectation(cov, *m);
        if !e.is_zero() {
            acc = acc + c.clone() * e;
        }
    }
    acc
}

/// Normalized Berezin route: int e^{-psi^+ K psi^-} X / det K with K = cov^{-1}.
pub fn berezin_expectation<T: Coeff>(cov: &Covariance<T>, p: &GrassmannPoly<T>) -> Result<T> {
    if determinant(&cov.matrix).is_zero() {
        return Err(Error::SingularCovariance);
    }
    let k = inverse(&cov.matrix)?;
    let n = cov.dim();
    let weight = quadratic_form(&k).exp();
    let integrand = weight.mul(p);
    let val = integrand.berezin_integrate(&standard_measure(n)).scalar_part();
    Ok(val / determinant(&k))
}

fn set_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out = vec![vec![]];
    for i in 0..n {
        let mut next = Vec::new();
        for p in &out {
            for b in 0..p.len() {
                let mut q: Vec<Vec<usize>> = p.clone();
                q[b].push(i);
                next.push(q);
            }
            let mut q = p.clone();
            q.push(vec![i]);
            next.push(q);
        }
        out = next;
    }
    out
}

/// Joint cumulant E^T(X_1, ..., X_p) by the Moebius sum over set partitions:
/// sum_pi (|pi| - 1)! (-1)^{|pi| - 1} prod_{B in pi} E(prod_{i in B} X_i).
pub fn truncated_expectation<T: Coeff>(cov: &Covariance<T>, xs: &[GrassmannPoly<T>]) -> T {
    let p = xs.len();
    assert!(p >= 1, "truncated expectation needs at least one argument");
    let mut cache: BTreeMap<Vec<usize>, T> = BTreeMap::new();
    let mut block_value = |block: &Vec<usize>| -> T {
        if let Some(v) = cache.get(block) {
            return v.clone();
        }
        let mut prod = GrassmannPoly::one(xs[0].n_generators);
        for &i in block {
            prod = prod.mul(&xs[i]);
        }
        let v = gaussian_expectation(cov, &prod);
        cache.insert(block.clone(), v.clone());
        v
    };
    let mut acc = T::zero();
    for part in set_partitions(p) {
        let k = part.len();
        let mut coef = T::one();
        for j in 1..k {
            coef = coef * T::from_usize(j).unwrap();
        }
        if (k - 1) % 2 == 1 {
            coef = -coef;
        }
        let mut prod = coef;
        for b in &part {
            prod = prod * block_value(b);
        }
        acc = acc + prod;
    }
    acc
}

/// Joint cumulant read off the log series: with M(S) = E(prod_{i in S} X_i), the
/// coefficient of t_1 ... t_p in log(1 + u), u = sum_{S nonempty} M(S) t^S, computed
/// in the ring of multilinear polynomials in t (t_i^2 = 0).
pub fn truncated_expectation_log_series<T: Coeff>(cov: &Covariance<T>, xs: &[GrassmannPoly<T>]) -> T {
    let p = xs.len();
    assert!((1..=16).contains(&p), "log series supports 1..=16 arguments");
    let full = (1usize << p) - 1;
    let mut u = vec![T::zero(); 1 << p];
    for s in 1..=full {
        let mut prod = GrassmannPoly::one(xs[0].n_generators);
        for (i, x) in xs.iter().enumerate() {
            if s >> i & 1 == 1 {
                prod = prod.mul(x);
            }
        }
        u[s] = gaussian_expectation(cov, &prod);
    }
    let mul = |a: &[T], b: &[T]| -> Vec<T> {
        let mut out = vec![T::zero(); a.len()];
        for (i, x) in a.iter().enumerate() {
            if x.is_zero() {
                continue;
            }
            let rest = full & !i;
            // Enumerate submasks of the complement of i.
            let mut j = rest;
            loop {
                if !b[j].is_zero() {
                    out[i | j] = out[i | j].clone() + x.clone() * b[j].clone();
                }
                if j == 0 {
                    break;
                }
                j = (j - 1) & rest;
            }
        }
        out
    };
    // log(1 + u) = sum_{k=1}^{p} (-1)^{k+1} u^k / k; u^k vanishes for k > p.
    let mut acc = T::zero();
    let mut power = u.clone();
    for k in 1..=p {
        let c = power[full].clone() / T::from_usize(k).unwrap();
        acc = if k % 2 == 1 { acc + c } else { acc - c };
        power = mul(&power, &u);
    }
    acc
}

/// Outcome of a Gram-Hadamard check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// |det C[rows, cols]| <= prod_i |A_{rows_i}| |B_{cols_i}|.
pub fn gram_hadamard_check(cov: &Covariance<Complex64>, rows: &[usize], cols: &[usize]) -> Result<BoundCheck> {
    let g = cov
        .gram
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("gram_hadamard_check needs a Gram factorization".into()))?;
    if rows.len() != cols.len() {
        return Err(Error::InvalidConfig("row and column subsets must have equal size".into()));
    }
    let n = rows.len();
    let sub = DMatrix::from_fn(n, n, |i, j| cov.matrix[rows[i]][cols[j]]);
    let lhs = sub.determinant().norm();
    let norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let rhs: f64 = rows.iter().map(|&i| norm(&g.a[i])).product::<f64>() * cols.iter().map(|&j| norm(&g.b[j])).product::<f64>();
    Ok(BoundCheck { lhs, rhs, ok: lhs <= rhs + 1e-12 })
}

/// Outcome of the addition-principle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditionCheck<T> {
    pub lhs: T,
    pub rhs: T,
    pub ok: bool,
}

/// E_{cov1} E_{cov2} F(psi_1 + psi_2) against E_{cov1 + cov2} F(psi).
pub fn addition_principle_check<T: Coeff>(cov1: &Covariance<T>, cov2: &Covariance<T>, f: &GrassmannPoly<T>, tol: f64) -> AdditionCheck<T> {
    let n = cov1.dim();
    assert_eq!(n, cov2.dim(), "covariances must have equal dimension");
    let map: Vec<Vec<usize>> = (0..n).map(|i| vec![i, n + i]).collect();
    let doubled = f.substitute(4 * n, &map);
    let block: Vec<Vec<T>> = (0..2 * n)
        .map(|i| {
            (0..2 * n)
                .map(|j| match (i < n, j < n) {
                    (true, true) => cov1.matrix[i][j].clone(),
                    (false, false) => cov2.matrix[i - n][j - n].clone(),
                    _ => T::zero(),
                })
                .collect()
        })
        .collect();
    let lhs = gaussian_expectation(&Covariance::new(block), &doubled);
    let sum: Vec<Vec<T>> = (0..n)
        .map(|i| (0..n).map(|j| cov1.matrix[i][j].clone() + cov2.matrix[i][j].clone()).collect())
        .collect();
    let rhs = gaussian_expectation(&Covariance::new(sum), f);
    let diff = (lhs.clone() - rhs.clone()).magnitude();
    let ok = diff <= tol * (1.0 + rhs.magnitude());
    AdditionCheck { lhs, rhs, ok }
}

/// Rational number p/q as a coefficient.
pub fn rational(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

/// Summary of the randomized self-test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SelfTestReport {
    pub samples: usize,
    pub seed: u64,
    /// max |Wick - Berezin| over random monomials.
    pub wick_berezin_max: f64,
    /// max |Moebius cumulant - log-series cumulant| over random even observables, p <= 3.
    pub cumulant_max: f64,
    pub gram_checked: usize,
    pub gram_violations: usize,
    /// max |det| / prod |A_i| |B_i| over the Gram samples.
    pub gram_worst_ratio: f64,
}

fn random_c64(rng: &mut impl rand::Rng) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// Well-conditioned random covariance: random entries scaled by 1/n plus the identity.
fn random_covariance(rng: &mut impl rand::Rng, n: usize) -> Covariance<Complex64> {
    let m = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| random_c64(rng) / n as f64 + if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
                .collect()
        })
        .collect();
    Covariance::new(m)
}

/// Random even polynomial: a few bilinears psi^-_a psi^+_b plus possibly one quartic term.
fn random_even(rng: &mut impl rand::Rng, n: usize) -> GrassmannPoly<Complex64> {
    let ng = 2 * n;
    let mut p = GrassmannPoly::zero(ng);
    for _ in 0..rng.gen_range(1..=3) {
        let ids = [gen_id(rng.gen_range(0..n), Charge::Minus), gen_id(rng.gen_range(0..n), Charge::Plus)];
        p = p.add(&GrassmannPoly::product_of(ng, &ids, random_c64(rng)));
    }
    if n >= 2 && rng.gen_bool(0.5) {
        let ids = [gen_id(0, Charge::Minus), gen_id(1, Charge::Plus), gen_id(1, Charge::Minus), gen_id(0, Charge::Plus)];
        p = p.add(&GrassmannPoly::product_of(ng, &ids, random_c64(rng)));
    }
    p
}

/// Randomized cross-checks: Wick against Berezin on monomials with at most 8 generators,
/// Moebius against log-series cumulants for p <= 3, and Gram-Hadamard on Gram matrices
/// of dimension at most 12. Deterministic for a given seed.
pub fn self_test(samples: usize, seed: u64) -> Result<SelfTestReport> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut wick_berezin_max: f64 = 0.0;
    for _ in 0..samples {
        let n = rng.gen_range(1..=4);
        let cov = random_covariance(&mut rng, n);
        let ids: Vec<usize> = (0..2 * n).filter(|_| rng.gen_bool(0.5)).collect();
        let mono = GrassmannPoly::product_of(2 * n, &ids, random_c64(&mut rng));
        let wick = gaussian_expectation(&cov, &mono);
        let ber = berezin_expectation(&cov, &mono)?;
        wick_berezin_max = wick_berezin_max.max((wick - ber).norm());
    }
    let mut cumulant_max: f64 = 0.0;
    for _ in 0..samples {
        let n = rng.gen_range(1..=3);
        let p = rng.gen_range(1..=3);
        let cov = random_covariance(&mut rng, n);
        let xs: Vec<_> = (0..p).map(|_| random_even(&mut rng, n)).collect();
        let a = truncated_expectation(&cov, &xs);
        let b = truncated_expectation_log_series(&cov, &xs);
        cumulant_max = cumulant_max.max((a - b).norm());
    }
    let mut gram_violations = 0;
    let mut gram_worst_ratio: f64 = 0.0;
    for _ in 0..samples {
        let n = rng.gen_range(1..=12);
        let m = rng.gen_range(1..=12);
        let mut vecs = |_: usize| -> Vec<Vec<Complex64>> { (0..n).map(|_| (0..m).map(|_| random_c64(&mut rng)).collect()).collect() };
        let (a, b) = (vecs(0), vecs(1));
        let cov = Covariance::from_gram(a, b);
        let idx: Vec<usize> = (0..n).collect();
        let c = gram_hadamard_check(&cov, &idx, &idx)?;
        if !c.ok {
            gram_violations += 1;
        }
        if c.rhs > 0.0 {
            gram_worst_ratio = gram_worst_ratio.max(c.lhs / c.rhs);
        }
    }
    Ok(SelfTestReport { samples, seed, wick_berezin_max, cumulant_max, gram_checked: samples, gram_violations, gram_worst_ratio })
}
