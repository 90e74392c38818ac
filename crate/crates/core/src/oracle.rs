//! Ground-truth engines: exact free-fermion thermodynamics and full many-body
//! exact diagonalization of the interacting Dirichlet chain at small L.
//!
//! The Hamiltonian is
//!   H = sum_{xy} t(x,y) c+_x c_y + nu N + varpi sum_{xy} pi(x,y) c+_x c_y
//!       + lambda sum_{xy} v(x,y) n_x n_y,
//! with t the Dirichlet hopping matrix. Fock states are occupation bit-sets with
//! the Jordan-Wigner ordering of sites 1..L on bits 0..L-1.

use crate::error::{Error, Result};
use crate::lattice::{self, LatticeSpec};
use crate::numerics::{log1p_exp, log_sum_exp};
use crate::propagator::fermi_occupation;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Largest chain handled by the many-body engine.
pub const MAX_SITES: usize = 14;
/// Largest chain for full-spectrum thermodynamics at finite beta.
pub const MAX_SITES_THERMAL: usize = 10;

/// Interacting Dirichlet problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ManyBodyProblem {
    pub l: usize,
    pub hopping: DMatrix<f64>,
    pub lambda: f64,
    pub v: DMatrix<f64>,
    pub nu: f64,
    pub varpi: f64,
    /// Real symmetric boundary kernel with sup_x sum_y |pi(x,y)| = 1 (or zero).
    pub pi: DMatrix<f64>,
    /// Inverse temperature; infinity selects the ground-state path.
    pub beta: f64,
}

impl ManyBodyProblem {
    /// Free problem for a Dirichlet spec: no interaction and no counterterms.
    pub fn free(spec: &LatticeSpec) -> Self {
        let l = spec.l;
        ManyBodyProblem {
            l,
            hopping: lattice::dirichlet_hopping(l, spec.mu),
            lambda: 0.0,
            v: DMatrix::zeros(l, l),
            nu: 0.0,
            varpi: 0.0,
            pi: DMatrix::zeros(l, l),
            beta: spec.beta,
        }
    }

    pub fn with_interaction(mut self, lambda: f64, v: DMatrix<f64>) -> Self {
        self.lambda = lambda;
        self.v = v;
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn with_varpi(mut self, varpi: f64, pi: DMatrix<f64>) -> Self {
        self.varpi = varpi;
        self.pi = pi;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    /// Checks symmetry of v, pi and the pi normalization.
    pub fn validate(&self) -> Result<()> {
        let l = self.l;
        if self.hopping.nrows() != l || self.v.nrows() != l || self.pi.nrows() != l {
            return Err(Error::InvalidConfig("matrix dimensions must equal L".into()));
        }
        if (&self.v - self.v.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidConfig("v must be symmetric".into()));
        }
        if (&self.pi - self.pi.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidConfig("pi must be real symmetric".into()));
        }
        let rows = max_row_sum(&self.pi);
        if rows != 0.0 && (rows - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidConfig(format!("pi must satisfy sup_x sum_y |pi(x,y)| = 1 (got {rows})")));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig("beta must be positive".into()));
        }
        Ok(())
    }

    /// One-body part t + nu 1 + varpi pi.
    pub fn one_body(&self) -> DMatrix<f64> {
        &self.hopping + DMatrix::identity(self.l, self.l) * self.nu + &self.pi * self.varpi
    }
}

/// sup_x sum_y |m(x,y)|.
pub fn max_row_sum(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Splits a kernel into (pi, strength) with sup_x sum_y |pi| = 1.
pub fn normalize_pi(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let s = max_row_sum(m);
    if s == 0.0 {
        (m.clone(), 0.0)
    } else {
        (m / s, s)
    }
}

/// v(x,y) = (2/(L+1)) sum_k sin(kx) sin(ky) vhat(k) over the Dirichlet momenta.
pub fn dirichlet_potential(l: usize, vhat: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let phi = lattice::sine_basis(l);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(l, (1..=l).map(|n| vhat(n as f64 * PI / (l as f64 + 1.0)))));
    &phi * d * phi.transpose()
}

/// Default potential transform vhat(k) = cos k, giving v = 1/2 on nearest neighbours.
pub fn default_vhat(k: f64) -> f64 {
    k.cos()
}

/// log prod_k (1 + e^{-beta e(k)}) over the Dirichlet momenta.
pub fn free_log_partition(spec: &LatticeSpec) -> f64 {
    lattice::dirichlet_momenta(spec.l).iter().map(|k| log1p_exp(-spec.beta * spec.dispersion(k.value()))).sum()
}

/// prod_k (1 + e^{-beta e(k)}).
pub fn free_partition(spec: &LatticeSpec) -> f64 {
    free_log_partition(spec).exp()
}

/// Free energy per site -(1/(L beta)) log Z of the free chain.
pub fn free_energy_free(spec: &LatticeSpec) -> f64 {
    -free_log_partition(spec) / (spec.l as f64 * spec.beta)
}

/// Ground-state energy per site of the free chain, (1/L) sum_{e(k) < 0} e(k).
pub fn free_ground_energy_density(spec: &LatticeSpec) -> f64 {
    lattice::dirichlet_momenta(spec.l).iter().map(|k| spec.dispersion(k.value()).min(0.0)).sum::<f64>() / spec.l as f64
}

/// Number-conserving block of the many-body Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct Sector {
    pub n: usize,
    pub basis: Vec<u32>,
    pub h: DMatrix<f64>,
}

/// Sign of c+_x c_y acting on `s` (x != y): parity of occupied sites strictly between them.
fn hop_sign(s: u32, x: usize, y: usize) -> f64 {
    let (lo, hi) = if x < y { (x, y) } else { (y, x) };
    let mask = if hi - lo <= 1 { 0 } else { ((1u32 << hi) - 1) & !((1u32 << (lo + 1)) - 1) };
    if (s & mask).count_ones() % 2 == 1 {
        -1.0
    } else {
        1.0
    }
}

fn sector_states(l: usize, n: usize) -> Vec<u32> {
    (0u32..1 << l).filter(|s| s.count_ones() as usize == n).collect()
}

/// Builds every particle-number block of H.
pub fn build_many_body(p: &ManyBodyProblem) -> Result<Vec<Sector>> {
    if p.l > MAX_SITES {
        return Err(Error::DimensionTooLarge { l: p.l, max: MAX_SITES });
    }
    p.validate()?;
    let t = p.one_body();
    let l = p.l;
    Ok((0..=l)
        .into_par_iter()
        .map(|n| {
            let basis = sector_states(l, n);
            let dim = basis.len();
            let mut h = DMatrix::zeros(dim, dim);
            for (i, &s) in basis.iter().enumerate() {
                let mut diag = 0.0;
                for x in 0..l {
                    if s >> x & 1 == 1 {
                        diag += t[(x, x)];
                        for y in 0..l {
                            if s >> y & 1 == 1 {
                                diag += p.lambda * p.v[(x, y)];
                            }
                        }
                    }
                }
                h[(i, i)] = diag;
                for y in 0..l {
                    if s >> y & 1 == 0 {
                        continue;
                    }
                    for x in 0..l {
                        if x == y || s >> x & 1 == 1 || t[(x, y)] == 0.0 {
                            continue;
                        }
                        let s2 = s ^ (1 << y) ^ (1 << x);
                        let j = basis.binary_search(&s2).expect("state in sector");
                        h[(j, i)] += t[(x, y)] * hop_sign(s, x, y);
                    }
                }
            }
            Sector { n, basis, h }
        })
        .collect())
}

/// Dense Hamiltonian over the full Fock space, for commutator checks at small L.
pub fn full_matrix(sectors: &[Sector], l: usize) -> DMatrix<f64> {
    let dim = 1usize << l;
    let mut h = DMatrix::zeros(dim, dim);
    for sec in sectors {
        for (i, &a) in sec.basis.iter().enumerate() {
            for (j, &b) in sec.basis.iter().enumerate() {
                h[(a as usize, b as usize)] = sec.h[(i, j)];
            }
        }
    }
    h
}

/// Total number operator as a diagonal matrix over the Fock space.
pub fn number_operator(l: usize) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(1 << l, (0u32..1 << l).map(|s| s.count_ones() as f64)))
}

/// Every eigenvalue of H.
pub fn spectrum(p: &ManyBodyProblem) -> Result<Vec<f64>> {
    let sectors = build_many_body(p)?;
    let mut out: Vec<f64> = sectors.par_iter().flat_map_iter(|s| s.h.clone().symmetric_eigenvalues().iter().copied().collect::<Vec<_>>()).collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Ground-state energy (lowest eigenvalue over all sectors).
pub fn ground_energy(p: &ManyBodyProblem) -> Result<f64> {
    if p.l > MAX_SITES {
        return Err(Error::DimensionTooLarge { l: p.l, max: MAX_SITES });
    }
    let sectors = build_many_body(p)?;
    Ok(sectors
        .par_iter()
        .map(|s| s.h.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min))
        .reduce(|| f64::INFINITY, f64::min))
}

/// Free energy per site -(1/(L beta)) log Tr e^{-beta H}; at beta = infinity the ground energy per site.
pub fn exact_free_energy(p: &ManyBodyProblem) -> Result<f64> {
    if p.beta.is_infinite() {
        return Ok(ground_energy(p)? / p.l as f64);
    }
    if p.l > MAX_SITES_THERMAL {
        return Err(Error::DimensionTooLarge { l: p.l, max: MAX_SITES_THERMAL });
    }
    let ev = spectrum(p)?;
    let logs: Vec<f64> = ev.iter().map(|e| -p.beta * e).collect();
    Ok(-log_sum_exp(&logs) / (p.l as f64 * p.beta))
}

/// log Tr e^{-beta H} by summing over the Fock space.
pub fn fock_log_trace(p: &ManyBodyProblem) -> Result<f64> {
    let ev = spectrum(p)?;
    let logs: Vec<f64> = ev.iter().map(|e| -p.beta * e).collect();
    Ok(log_sum_exp(&logs))
}

/// Free equal-time correlation rho(x,y) = <c+_x c_y> for a real symmetric one-body matrix.
pub fn free_correlation(one_body: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    let eig = one_body.clone().symmetric_eigen();
    let n = nalgebra::DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&e| fermi_occupation(e, beta)));
    &eig.eigenvectors * DMatrix::from_diagonal(&n) * eig.eigenvectors.transpose()
}

/// JSON record of one oracle evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    #[serde(rename = "L")]
    pub l: usize,
    pub beta: f64,
    pub lambda: f64,
    pub nu: f64,
    pub varpi: f64,
    pub f: f64,
    #[serde(rename = "E0")]
    pub e0: f64,
}

/// Evaluates f (at the problem's beta) and E0 for one problem.
pub fn evaluate(p: &ManyBodyProblem) -> Result<OracleRecord> {
    let f = exact_free_energy(p)?;
    let e0 = ground_energy(p)?;
    Ok(OracleRecord { l: p.l, beta: p.beta, lambda: p.lambda, nu: p.nu, varpi: p.varpi, f, e0 })
}
