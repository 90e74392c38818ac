//! Low-order free-energy expansion of the interacting Dirichlet chain, the
//! first-order non-local tadpole with its bulk/boundary split, and boundary
//! scaling of the first-order free energy.
//!
//! With U = lambda V + nu N + varpi sum pi c+ c, the expansion reads
//!   f = f_0 + (1/L) <U> - (1/(2L)) int_0^beta dtau <U(tau) U>_c + O(U^3).
//! The second-order term is evaluated in the sine mode basis by summing all
//! linked Wick pairings; each pairing carries the exact time integral
//! int_0^beta e^{tau Delta} dtau, so no time grid is needed by default.

use crate::error::{Error, Result};
use crate::lattice;
use crate::numerics::linear_fit;
use crate::oracle::ManyBodyProblem;
use crate::propagator::fermi_occupation;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

/// Largest L accepted by the second-order evaluator.
pub const MAX_SITES_SECOND_ORDER: usize = 32;

/// rho(x,y) = <c+_x c_y> = -g(x,y; 0^-) of the free Dirichlet chain, via the sine basis.
/// beta may be infinite.
pub fn dirichlet_density(l: usize, mu: f64, beta: f64) -> DMatrix<f64> {
    let phi = lattice::sine_basis(l);
    let n = DVector::from_iterator(
        l,
        (1..=l).map(|j| fermi_occupation(lattice::dispersion(j as f64 * PI / (l as f64 + 1.0), mu), beta)),
    );
    &phi * DMatrix::from_diagonal(&n) * phi.transpose()
}

/// rho of the periodic box of `l` sites (momenta 2 pi n / l).
pub fn periodic_density(l: usize, mu: f64, beta: f64) -> DMatrix<f64> {
    let occ: Vec<f64> = (0..l).map(|n| fermi_occupation(lattice::dispersion(2.0 * PI * n as f64 / l as f64, mu), beta)).collect();
    let row: Vec<f64> = (0..l)
        .map(|d| (0..l).map(|n| (2.0 * PI * (n * d) as f64 / l as f64).cos() * occ[n]).sum::<f64>() / l as f64)
        .collect();
    DMatrix::from_fn(l, l, |x, y| row[(x + l - y) % l])
}

/// Translation-invariant periodic potential v(d) = (1/l) sum_k e^{-ikd} vhat(k) on a ring of l sites.
pub fn periodic_potential(l: usize, vhat: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let row: Vec<f64> = (0..l)
        .map(|d| (0..l).map(|n| {
            let k = 2.0 * PI * n as f64 / l as f64;
            (k * d as f64).cos() * vhat(k)
        }).sum::<f64>() / l as f64)
        .collect();
    DMatrix::from_fn(l, l, |x, y| row[(x + l - y) % l])
}

/// First-order coefficients: the value multiplying lambda, nu and varpi separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstOrder {
    pub lambda_part: f64,
    pub nu_part: f64,
    pub varpi_part: f64,
    pub total: f64,
}

/// (1/L) <U> from the equal-time density: lambda [sum v (rho_xx rho_yy - rho_xy^2) + sum v_xx rho_xx]
/// + nu sum rho_xx + varpi sum pi rho, all divided by L.
pub fn first_order_from_density(rho: &DMatrix<f64>, v: &DMatrix<f64>, lambda: f64, nu: f64, varpi: f64, pi: &DMatrix<f64>) -> FirstOrder {
    let l = rho.nrows();
    let mut inter = 0.0;
    for x in 0..l {
        for y in 0..l {
            let vxy = v[(x, y)];
            if vxy != 0.0 {
                inter += vxy * (rho[(x, x)] * rho[(y, y)] - rho[(x, y)] * rho[(y, x)]);
            }
        }
        inter += v[(x, x)] * rho[(x, x)];
    }
    let lf = l as f64;
    let lambda_part = lambda * inter / lf;
    let nu_part = nu * rho.trace() / lf;
    let varpi_part = varpi * pi.component_mul(&rho.transpose()).sum() / lf;
    FirstOrder { lambda_part, nu_part, varpi_part, total: lambda_part + nu_part + varpi_part }
}

/// First-order free energy per site of a problem, with its own mu encoded in the hopping.
pub fn first_order_free_energy(p: &ManyBodyProblem) -> FirstOrder {
    let rho = density_of(&p.hopping, p.beta);
    first_order_from_density(&rho, &p.v, p.lambda, p.nu, p.varpi, &p.pi)
}

/// rho(x,y) for an arbitrary real symmetric hopping matrix.
pub fn density_of(hopping: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    let eig = hopping.clone().symmetric_eigen();
    let n = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&e| fermi_occupation(e, beta)));
    &eig.eigenvectors * DMatrix::from_diagonal(&n) * eig.eigenvectors.transpose()
}

/// How the time integral of a pairing is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Quadrature {
    /// Closed form (e^{beta Delta} - 1)/Delta.
    Exact,
    /// Trapezoid rule on n_t intervals, checked against 2 n_t.
    Trapezoid { n_t: usize },
}

/// Normal-ordered operator string with a coefficient tensor over mode slots.
#[derive(Debug, Clone, PartialEq)]
pub struct OpTerm {
    /// (is_creation, slot) in operator order.
    pub ops: Vec<(bool, usize)>,
    pub n_slots: usize,
    /// Row-major tensor over L^{n_slots} mode assignments.
    pub coef: Vec<f64>,
}

impl OpTerm {
    /// sum_{k q} a[k][q] a+_k a_q.
    pub fn one_body(a: &DMatrix<f64>) -> Self {
        let l = a.nrows();
        let coef = (0..l * l).map(|i| a[(i / l, i % l)]).collect();
        OpTerm { ops: vec![(true, 0), (false, 1)], n_slots: 2, coef }
    }

    /// sum t[k1 k2 k3 k4] a+_k1 a_k2 a+_k3 a_k4.
    pub fn two_body(l: usize, t: Vec<f64>) -> Self {
        assert_eq!(t.len(), l * l * l * l);
        OpTerm { ops: vec![(true, 0), (false, 1), (true, 2), (false, 3)], n_slots: 4, coef: t }
    }

    fn index(&self, modes: &[usize], l: usize) -> usize {
        modes.iter().fold(0, |acc, &m| acc * l + m)
    }
}

/// Mode-basis representation of a one-body matrix: Phi^T m Phi.
pub fn to_modes(m: &DMatrix<f64>, phi: &DMatrix<f64>) -> DMatrix<f64> {
    phi.transpose() * m * phi
}

/// Mode-basis tensor of sum_{xy} w v(x,y) n_x n_y; column k of phi is mode k.
pub fn two_body_tensor(v: &DMatrix<f64>, w: f64, phi: &DMatrix<f64>) -> Vec<f64> {
    let l = v.nrows();
    // pair[x][(k1,k2)] = phi(x,k1) phi(x,k2)
    let pair = DMatrix::from_fn(l, l * l, |x, p| phi[(x, p / l)] * phi[(x, p % l)]);
    let t = pair.transpose() * v * &pair * w;
    let mut out = vec![0.0; l * l * l * l];
    for a in 0..l * l {
        for b in 0..l * l {
            out[a * l * l + b] = t[(a, b)];
        }
    }
    out
}

/// Orthonormal eigenbasis (columns) and energies of a real symmetric hopping matrix.
/// The Dirichlet chain uses the exact sine basis, which is its eigenbasis.
pub fn mode_basis(hopping: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let l = hopping.nrows();
    let sine = lattice::sine_basis(l);
    let d = to_modes(hopping, &sine);
    let diag: Vec<f64> = (0..l).map(|k| d[(k, k)]).collect();
    if (d - DMatrix::from_diagonal(&DVector::from_vec(diag.clone()))).amax() < 1e-12 {
        return (sine, diag);
    }
    let eig = hopping.clone().symmetric_eigen();
    (eig.eigenvectors, eig.eigenvalues.iter().copied().collect())
}

/// Perfect creation/annihilation matchings of an operator string with Wick signs.
fn matchings(ops: &[(bool, usize)]) -> Vec<(f64, Vec<(usize, usize)>)> {
    let cre: Vec<usize> = (0..ops.len()).filter(|&i| ops[i].0).collect();
    let ann: Vec<usize> = (0..ops.len()).filter(|&i| !ops[i].0).collect();
    if cre.len() != ann.len() {
        return vec![];
    }
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..ann.len()).collect();
    permute(&mut perm, 0, &mut |p| {
        let pairs: Vec<(usize, usize)> = cre.iter().zip(p).map(|(&c, &ai)| {
            let a = ann[ai];
            (c.min(a), c.max(a))
        }).collect();
        let mut crossings = 0;
        for i in 0..pairs.len() {
            for j in 0..pairs.len() {
                let (a, b) = pairs[i];
                let (c, d) = pairs[j];
                if a < c && c < b && b < d {
                    crossings += 1;
                }
            }
        }
        out.push((if crossings % 2 == 1 { -1.0 } else { 1.0 }, pairs));
    });
    out
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

fn time_integral(delta: f64, beta: f64, q: Quadrature) -> f64 {
    match q {
        Quadrature::Exact => {
            let x = beta * delta;
            if x.abs() < 1e-8 {
                beta * (1.0 + 0.5 * x + x * x / 6.0)
            } else {
                x.exp_m1() / delta
            }
        }
        Quadrature::Trapezoid { n_t } => {
            let h = beta / n_t as f64;
            let mut s = 0.5 * (1.0 + (beta * delta).exp());
            for j in 1..n_t {
                s += (j as f64 * h * delta).exp();
            }
            s * h
        }
    }
}

/// int_0^beta dtau <A(tau) B>_c summed over linked pairings, in the mode basis with energies e.
pub fn connected_correlator(a: &OpTerm, b: &OpTerm, energies: &[f64], beta: f64, q: Quadrature) -> f64 {
    let l = energies.len();
    let occ: Vec<f64> = energies.iter().map(|&e| fermi_occupation(e, beta)).collect();
    let na = a.ops.len();
    let ops: Vec<(bool, usize)> = a.ops.iter().copied().chain(b.ops.iter().map(|&(c, s)| (c, s + a.n_slots))).collect();
    let total_slots = a.n_slots + b.n_slots;
    matchings(&ops)
        .into_par_iter()
        .filter(|(_, pairs)| pairs.iter().any(|&(i, j)| i < na && j >= na))
        .map(|(sign, pairs)| {
            let np = pairs.len();
            let mut slot_pair = vec![0usize; total_slots];
            for (p, &(i, j)) in pairs.iter().enumerate() {
                slot_pair[ops[i].1] = p;
                slot_pair[ops[j].1] = p;
            }
            let mut modes = vec![0usize; np];
            let mut slots = vec![0usize; total_slots];
            let mut acc = 0.0;
            loop {
                for s in 0..total_slots {
                    slots[s] = modes[slot_pair[s]];
                }
                let ca = a.coef[a.index(&slots[..a.n_slots], l)];
                if ca != 0.0 {
                    let cb = b.coef[b.index(&slots[a.n_slots..], l)];
                    if cb != 0.0 {
                        let mut f = 1.0;
                        for (p, &(i, _)) in pairs.iter().enumerate() {
                            let k = modes[p];
                            f *= if ops[i].0 { occ[k] } else { 1.0 - occ[k] };
                        }
                        let mut delta = 0.0;
                        for &(cre, s) in &ops[..na] {
                            let e = energies[slots[s]];
                            delta += if cre { e } else { -e };
                        }
                        acc += ca * cb * f * time_integral(delta, beta, q);
                    }
                }
                // next mode assignment
                let mut d = 0;
                loop {
                    if d == np {
                        return sign * acc;
                    }
                    modes[d] += 1;
                    if modes[d] < l {
                        break;
                    }
                    modes[d] = 0;
                    d += 1;
                }
            }
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Second-order contributions by coupling pair (each already multiplied by its couplings).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrder {
    pub lambda_lambda: f64,
    pub lambda_nu: f64,
    pub nu_nu: f64,
    pub lambda_varpi: f64,
    pub nu_varpi: f64,
    pub varpi_varpi: f64,
    pub total: f64,
}

fn second_order_with(p: &ManyBodyProblem, q: Quadrature) -> Result<SecondOrder> {
    let l = p.l;
    if l > MAX_SITES_SECOND_ORDER {
        return Err(Error::DimensionTooLarge { l, max: MAX_SITES_SECOND_ORDER });
    }
    if p.beta.is_infinite() {
        return Err(Error::InvalidConfig("second-order evaluation needs finite beta".into()));
    }
    let (phi, energies) = mode_basis(&p.hopping);
    let terms: [Option<OpTerm>; 3] = [
        (p.lambda != 0.0).then(|| OpTerm::two_body(l, two_body_tensor(&p.v, p.lambda, &phi))),
        (p.nu != 0.0).then(|| OpTerm::one_body(&(DMatrix::identity(l, l) * p.nu))),
        (p.varpi != 0.0).then(|| OpTerm::one_body(&to_modes(&(&p.pi * p.varpi), &phi))),
    ];
    let pref = -1.0 / (2.0 * l as f64);
    let pair = |i: usize, j: usize| -> f64 {
        match (&terms[i], &terms[j]) {
            (Some(a), Some(b)) => pref * connected_correlator(a, b, &energies, p.beta, q),
            _ => 0.0,
        }
    };
    let ll = pair(0, 0);
    let ln = pair(0, 1) + pair(1, 0);
    let nn = pair(1, 1);
    let lw = pair(0, 2) + pair(2, 0);
    let nw = pair(1, 2) + pair(2, 1);
    let ww = pair(2, 2);
    Ok(SecondOrder { lambda_lambda: ll, lambda_nu: ln, nu_nu: nn, lambda_varpi: lw, nu_varpi: nw, varpi_varpi: ww, total: ll + ln + nn + lw + nw + ww })
}

/// Second-order free energy per site. With `Quadrature::Trapezoid` the result is
/// accepted only if doubling the time grid changes it by at most 1e-5.
pub fn second_order_free_energy(p: &ManyBodyProblem, q: Quadrature) -> Result<SecondOrder> {
    match q {
        Quadrature::Exact => second_order_with(p, q),
        Quadrature::Trapezoid { n_t } => {
            let a = second_order_with(p, q)?;
            let b = second_order_with(p, Quadrature::Trapezoid { n_t: 2 * n_t })?;
            let change = (a.total - b.total).abs();
            if change > 1e-5 {
                return Err(Error::QuadratureUnderResolved { change });
            }
            Ok(b)
        }
    }
}

/// Optional bulk/boundary decomposition of a quadratic kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSplit {
    /// Translation-invariant profile Wbar(d) on the ring, d = 0..2(L+1).
    pub w_bar: Vec<f64>,
    /// Wbar(x - y) over Lambda.
    pub w_diff: DMatrix<f64>,
    /// Wbar(x + y) over Lambda.
    pub w_reflected: DMatrix<f64>,
    /// W^d = Wbar(x - y) - Wbar(x + y).
    pub w_d: DMatrix<f64>,
    /// Hartree part of W2 - W^d.
    pub remainder_hartree: DMatrix<f64>,
    /// Exchange part of W2 - W^d.
    pub remainder_exchange: DMatrix<f64>,
}

impl KernelSplit {
    pub fn remainder(&self) -> DMatrix<f64> {
        &self.remainder_hartree + &self.remainder_exchange
    }
}

/// Quadratic kernel W2(x,y); the time structure is delta(x0 - y0), so only the
/// equal-time matrix is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPair {
    pub w2: DMatrix<f64>,
    pub hartree: DMatrix<f64>,
    pub exchange: DMatrix<f64>,
    pub order: u32,
    pub lambda: f64,
    pub split: Option<KernelSplit>,
}

/// First-order tadpole from an equal-time propagator matrix g(x,y;0^-):
/// W2(x,y) = 2 lambda [ -delta_xy sum_z v(x,z) g(z,z) + v(x,y) g(x,y) ].
pub fn tadpole_from(v: &DMatrix<f64>, g: &DMatrix<f64>, lambda: f64) -> KernelPair {
    let l = v.nrows();
    let gd = DVector::from_iterator(l, (0..l).map(|z| g[(z, z)]));
    let hartree = DMatrix::from_diagonal(&(v * gd)) * (-2.0 * lambda);
    let exchange = v.component_mul(g) * (2.0 * lambda);
    KernelPair { w2: &hartree + &exchange, hartree, exchange, order: 1, lambda, split: None }
}

/// Dirichlet non-local tadpole with g = -rho from the free chain at (mu, beta).
pub fn nonlocal_tadpole_kernel(l: usize, mu: f64, beta: f64, v: &DMatrix<f64>, lambda: f64) -> KernelPair {
    let g = -dirichlet_density(l, mu, beta);
    tadpole_from(v, &g, lambda)
}

/// Same construction on the periodic box of l sites.
pub fn periodic_tadpole_kernel(l: usize, mu: f64, beta: f64, v: &DMatrix<f64>, lambda: f64) -> KernelPair {
    let g = -periodic_density(l, mu, beta);
    tadpole_from(v, &g, lambda)
}

/// Sine-basis matrix Phi^T W Phi.
pub fn sine_transform(w: &DMatrix<f64>) -> DMatrix<f64> {
    to_modes(w, &lattice::sine_basis(w.nrows()))
}

/// Plane-wave matrix (1/l) sum_{xy} e^{i k1 x} W(x,y) e^{-i k2 y}, returned as modulus.
pub fn plane_wave_modulus(w: &DMatrix<f64>) -> DMatrix<f64> {
    let l = w.nrows();
    let mut out = DMatrix::zeros(l, l);
    for a in 0..l {
        for b in 0..l {
            let (mut re, mut im) = (0.0, 0.0);
            for x in 0..l {
                for y in 0..l {
                    let ph = 2.0 * PI * ((a * x) as f64 - (b * y) as f64) / l as f64;
                    re += w[(x, y)] * ph.cos();
                    im += w[(x, y)] * ph.sin();
                }
            }
            out[(a, b)] = (re * re + im * im).sqrt() / l as f64;
        }
    }
    out
}

/// Largest off-diagonal modulus of a square matrix.
pub fn max_off_diagonal(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                worst = worst.max(m[(i, j)].abs());
            }
        }
    }
    worst
}

/// Ring profile of a Dirichlet-property function: f_ring(d) = (1/N) sum_k e^{-ikd} fhat(k), N = 2(L+1).
pub fn ring_profile(l: usize, fhat: impl Fn(f64) -> f64) -> Vec<f64> {
    let den = l as i64 + 1;
    let n = 2 * den;
    let vals: Vec<f64> = (-den..den).map(|m| fhat(m as f64 * PI / den as f64)).collect();
    (0..n)
        .map(|d| {
            (-den..den)
                .zip(&vals)
                .map(|(m, v)| ((m * d).rem_euclid(2 * n) as f64 * PI / den as f64).cos() * v)
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// Bulk/boundary split of the first-order tadpole. The all-P kernel uses the ring
/// potential v_P and ring propagator g_P with the inner Hartree sum extended over the
/// full ring, which makes it translation invariant: Wbar(d).
pub fn bulk_boundary_split(kernel: &KernelPair, mu: f64, beta: f64, vhat: impl Fn(f64) -> f64) -> KernelPair {
    let l = kernel.w2.nrows();
    let n = 2 * (l + 1);
    let v_ring = ring_profile(l, &vhat);
    let g_ring: Vec<f64> = ring_profile(l, |k| -fermi_occupation(lattice::dispersion(k, mu), beta));
    // Hartree over the extended ring: sum_z v_P(x - z) g_P(0) = vhat(0) g_P(0).
    let hartree_bar = -2.0 * vhat(0.0) * g_ring[0];
    let lambda = kernel.lambda;
    let w_bar: Vec<f64> = (0..n)
        .map(|d| lambda * (if d == 0 { hartree_bar } else { 0.0 } + 2.0 * v_ring[d] * g_ring[d]))
        .collect();
    let at = |d: i64| w_bar[d.rem_euclid(n as i64) as usize];
    let w_diff = DMatrix::from_fn(l, l, |i, j| at(i as i64 - j as i64));
    let w_reflected = DMatrix::from_fn(l, l, |i, j| at(i as i64 + j as i64 + 2));
    let w_d = &w_diff - &w_reflected;
    // Split the remainder along the Hartree/exchange decomposition of W^d.
    let hb = DMatrix::from_fn(l, l, |i, j| if i == j { lambda * hartree_bar } else { 0.0 });
    let hr = DMatrix::from_fn(l, l, |i, j| if (i + j + 2) % n == 0 { lambda * hartree_bar } else { 0.0 });
    let wd_hartree = &hb - &hr;
    let wd_exchange = &w_d - &wd_hartree;
    let split = KernelSplit {
        w_bar,
        w_diff,
        w_reflected,
        remainder_hartree: &kernel.hartree - &wd_hartree,
        remainder_exchange: &kernel.exchange - &wd_exchange,
        w_d,
    };
    KernelPair { split: Some(split), ..kernel.clone() }
}

/// Inputs of a boundary-scaling experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingTemplate {
    pub mu: f64,
    /// Inverse temperature; infinity is allowed at first order.
    pub beta: f64,
    pub lambda: f64,
    pub order: u32,
}

/// One row of the boundary-scaling report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub l: usize,
    pub f_l: f64,
    pub diff: f64,
}

/// Result of a boundary-scaling fit of log|f_L - f_inf| against log L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScaling {
    pub template: ScalingTemplate,
    pub rows: Vec<ScalingRow>,
    pub f_inf: f64,
    pub slope: f64,
    pub rms: f64,
}

/// Residual threshold of the log-log fit.
pub const FIT_RMS_THRESHOLD: f64 = 0.25;

/// Dirichlet potential of the default transform on L sites.
fn default_potential(l: usize) -> DMatrix<f64> {
    crate::oracle::dirichlet_potential(l, crate::oracle::default_vhat)
}

/// Dirichlet free energy per site through `order` (free part excluded).
pub fn dirichlet_order_value(t: &ScalingTemplate, l: usize) -> Result<f64> {
    let v = default_potential(l);
    match t.order {
        1 => {
            let rho = dirichlet_density(l, t.mu, t.beta);
            Ok(first_order_from_density(&rho, &v, t.lambda, 0.0, 0.0, &DMatrix::zeros(l, l)).total)
        }
        2 => {
            let p = ManyBodyProblem {
                l,
                hopping: lattice::dirichlet_hopping(l, t.mu),
                lambda: t.lambda,
                v,
                nu: 0.0,
                varpi: 0.0,
                pi: DMatrix::zeros(l, l),
                beta: t.beta,
            };
            Ok(first_order_free_energy(&p).total + second_order_free_energy(&p, Quadrature::Exact)?.total)
        }
        o => Err(Error::InvalidConfig(format!("boundary scaling supports order 1 or 2 (got {o})"))),
    }
}

/// First-order value per site of the periodic box of n sites with the default potential,
/// via translation-invariant profiles: sum_d v(d) (n^2 - rho(d)^2) + v(0) n.
pub fn periodic_first_order(n_sites: usize, mu: f64, beta: f64, lambda: f64) -> f64 {
    let occ: Vec<f64> = (0..n_sites).map(|j| fermi_occupation(lattice::dispersion(2.0 * PI * j as f64 / n_sites as f64, mu), beta)).collect();
    let rho = |d: usize| -> f64 {
        (0..n_sites).map(|j| (2.0 * PI * (j * d) as f64 / n_sites as f64).cos() * occ[j]).sum::<f64>() / n_sites as f64
    };
    let n = rho(0);
    let r1 = rho(1);
    // The default transform cos k gives v(+-1) = 1/2 and zero elsewhere.
    lambda * (n * n - r1 * r1)
}

/// Infinite-volume estimate: Richardson extrapolation (1/L^2 correction) of two periodic boxes.
pub fn f_inf_estimate(t: &ScalingTemplate) -> Result<f64> {
    match t.order {
        1 => {
            let (l1, l2) = (4098usize, 8194usize);
            let f1 = periodic_first_order(l1, t.mu, t.beta, t.lambda);
            let f2 = periodic_first_order(l2, t.mu, t.beta, t.lambda);
            let (a, b) = ((l1 * l1) as f64, (l2 * l2) as f64);
            Ok((b * f2 - a * f1) / (b - a))
        }
        2 => {
            if t.beta.is_infinite() {
                return Err(Error::InvalidConfig("second-order scaling needs finite beta".into()));
            }
            let l = MAX_SITES_SECOND_ORDER;
            let hop = periodic_hopping(l, t.mu);
            let v = periodic_potential(l, crate::oracle::default_vhat);
            let p = ManyBodyProblem { l, hopping: hop, lambda: t.lambda, v, nu: 0.0, varpi: 0.0, pi: DMatrix::zeros(l, l), beta: t.beta };
            Ok(first_order_free_energy(&p).total + second_order_free_energy(&p, Quadrature::Exact)?.total)
        }
        o => Err(Error::InvalidConfig(format!("boundary scaling supports order 1 or 2 (got {o})"))),
    }
}

/// Closed-form first-order bulk value at zero temperature for the default potential:
/// lambda (n^2 - (sin p_F / pi)^2) with n = p_F / pi.
pub fn f_inf_closed_form(mu: f64, lambda: f64) -> f64 {
    let pf = (1.0 - mu).clamp(-1.0, 1.0).acos();
    let n = pf / PI;
    let r = pf.sin() / PI;
    lambda * (n * n - r * r)
}

/// Periodic ring hopping: diagonal 1 - mu, neighbours (with wrap) -1/2.
pub fn periodic_hopping(l: usize, mu: f64) -> DMatrix<f64> {
    DMatrix::from_fn(l, l, |i, j| {
        let d = (i + l - j) % l;
        if d == 0 {
            1.0 - mu
        } else if d == 1 || d == l - 1 {
            -0.5
        } else {
            0.0
        }
    })
}

/// Fits the decay of |f_L - f_inf| over the given sizes.
pub fn boundary_scaling(t: &ScalingTemplate, ls: &[usize]) -> Result<BoundaryScaling> {
    if ls.len() < 5 {
        return Err(Error::InvalidConfig(format!("boundary scaling needs at least 5 sizes (got {})", ls.len())));
    }
    let f_inf = f_inf_estimate(t)?;
    let vals: Vec<Result<f64>> = ls.par_iter().map(|&l| dirichlet_order_value(t, l)).collect();
    let mut rows = Vec::new();
    for (&l, v) in ls.iter().zip(vals) {
        let f_l = v?;
        rows.push(ScalingRow { l, f_l, diff: f_l - f_inf });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.l as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.diff.abs().ln()).collect();
    let fit = linear_fit(&xs, &ys);
    if !(fit.rms <= FIT_RMS_THRESHOLD) {
        return Err(Error::FitUnstable { residual: fit.rms, threshold: FIT_RMS_THRESHOLD });
    }
    Ok(BoundaryScaling { template: *t, rows, f_inf, slope: fit.slope, rms: fit.rms })
}

/// Free boundary energy: zero-temperature f_L - f_inf of the free chain against L.
pub fn free_boundary_scaling(mu: f64, ls: &[usize]) -> BoundaryScaling {
    let pf = (1.0 - mu).clamp(-1.0, 1.0).acos();
    // int_{-pF}^{pF} (dk / 2 pi) (1 - cos k - mu)
    let f_inf = ((1.0 - mu) * pf - pf.sin()) / PI;
    let rows: Vec<ScalingRow> = ls
        .iter()
        .map(|&l| {
            let f_l = (1..=l).map(|n| lattice::dispersion(n as f64 * PI / (l as f64 + 1.0), mu).min(0.0)).sum::<f64>() / l as f64;
            ScalingRow { l, f_l, diff: f_l - f_inf }
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| (r.l as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.diff.abs().ln()).collect();
    let fit = linear_fit(&xs, &ys);
    BoundaryScaling { template: ScalingTemplate { mu, beta: f64::INFINITY, lambda: 0.0, order: 0 }, rows, f_inf, slope: fit.slope, rms: fit.rms }
}

/// CSV: L, order, f_L, f_inf_est, diff, fitted_slope.
pub fn write_scaling_csv<W: Write>(mut w: W, s: &BoundaryScaling) -> std::io::Result<()> {
    writeln!(w, "L,order,f_L,f_inf_est,diff,fitted_slope")?;
    for r in &s.rows {
        writeln!(w, "{},{},{:.15e},{:.15e},{:.15e},{:.6}", r.l, s.template.order, r.f_l, s.f_inf, r.diff, s.slope)?;
    }
    Ok(())
}

/// One coupling of a perturbation-theory versus exact-diagonalization comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdRow {
    pub lambda: f64,
    pub f_exact: f64,
    pub f_pt: f64,
    pub residual: f64,
}

/// f_exact(lambda) against f_0 + lambda f_1 + lambda^2 f_2, with the log-log residual fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdComparison {
    pub l: usize,
    pub beta: f64,
    pub mu: f64,
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
    pub rows: Vec<EdRow>,
    pub slope: f64,
    pub rms: f64,
}

/// Compares exact free energies of the Dirichlet chain with the second-order expansion.
pub fn ed_comparison(l: usize, beta: f64, mu: f64, lambdas: &[f64]) -> Result<EdComparison> {
    if lambdas.len() < 2 {
        return Err(Error::InvalidConfig(format!("need at least two couplings (got {})", lambdas.len())));
    }
    if l > MAX_SITES_SECOND_ORDER {
        return Err(Error::DimensionTooLarge { l, max: MAX_SITES_SECOND_ORDER });
    }
    let base = ManyBodyProblem {
        l,
        hopping: lattice::dirichlet_hopping(l, mu),
        lambda: 1.0,
        v: default_potential(l),
        nu: 0.0,
        varpi: 0.0,
        pi: DMatrix::zeros(l, l),
        beta,
    };
    let f1 = first_order_free_energy(&base).total;
    let f2 = second_order_free_energy(&base, Quadrature::Exact)?.total;
    let f0 = crate::oracle::exact_free_energy(&ManyBodyProblem { lambda: 0.0, ..base.clone() })?;
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let f_exact = crate::oracle::exact_free_energy(&ManyBodyProblem { lambda, ..base.clone() })?;
        let f_pt = f0 + lambda * f1 + lambda * lambda * f2;
        rows.push(EdRow { lambda, f_exact, f_pt, residual: (f_exact - f_pt).abs() });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.lambda.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.residual.ln()).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(EdComparison { l, beta, mu, f0, f1, f2, rows, slope: fit.slope, rms: fit.rms })
}

/// CSV: lambda, f_exact, f_pt, residual.
pub fn write_ed_csv<W: Write>(mut w: W, c: &EdComparison) -> std::io::Result<()> {
    writeln!(w, "lambda,f_exact,f_pt,residual")?;
    for r in &c.rows {
        writeln!(w, "{:.17e},{:.17e},{:.17e},{:.17e}", r.lambda, r.f_exact, r.f_pt, r.residual)?;
    }
    Ok(())
}
