//! Problem definitions: momentum and Matsubara grids, the dispersion relation,
//! the Dirichlet one-body Hamiltonian and Fermi-point snapping.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Boundary condition of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Translation-invariant ring of 2(L+1) sites.
    PeriodicExtended,
    /// Open segment {1..L} with fields vanishing at 0 and L+1.
    Dirichlet,
}

/// How the filling is specified when a spec is built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Filling {
    /// Chemical potential; p_F is snapped to the grid momentum nearest arccos(1 - mu).
    Mu(f64),
    /// Target Fermi momentum; snapped to the grid, then mu = 1 - cos p_F.
    FermiMomentum(f64),
}

/// Full parameter set of a finite-volume, finite-temperature problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub l: usize,
    pub beta: f64,
    /// Matsubara half-count; the frequency grid has 2M points.
    pub m: usize,
    pub mu: f64,
    pub gamma: f64,
    pub bc: Boundary,
    pub p_f: f64,
    /// Grid index n of p_F = n pi / (L+1).
    pub n_f: i64,
    pub kappa: f64,
}

pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_KAPPA: f64 = 0.1;

impl LatticeSpec {
    /// Builds and validates a spec with default gamma and kappa.
    pub fn new(l: usize, beta: f64, m: usize, filling: Filling, bc: Boundary) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidConfig("L must be a positive integer (got 0)".into()));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be positive and finite (got {beta})")));
        }
        if m == 0 {
            return Err(Error::InvalidConfig("M must be a positive integer (got 0)".into()));
        }
        let (mu, p_f, n_f) = match filling {
            Filling::FermiMomentum(target) => {
                if !(target > 0.0 && target < PI) {
                    return Err(Error::InvalidConfig(format!("pF must lie in (0, pi) (got {target})")));
                }
                let n = nearest_grid_index(l, target);
                let p = n as f64 * PI / (l as f64 + 1.0);
                (1.0 - p.cos(), p, n)
            }
            Filling::Mu(mu) => {
                if !(0.0..=2.0).contains(&mu) || !mu.is_finite() {
                    return Err(Error::InvalidConfig(format!("mu must lie in the band [0, 2] (got {mu})")));
                }
                let n = nearest_grid_index(l, (1.0 - mu).clamp(-1.0, 1.0).acos());
                (mu, n as f64 * PI / (l as f64 + 1.0), n)
            }
        };
        let mu = if bc == Boundary::PeriodicExtended { 1.0 - p_f.cos() } else { mu };
        let spec = LatticeSpec { l, beta, m, mu, gamma: DEFAULT_GAMMA, bc, p_f, n_f, kappa: DEFAULT_KAPPA };
        spec.validate()?;
        Ok(spec)
    }

    /// Dirichlet spec with p_F snapped from a target momentum.
    pub fn dirichlet(l: usize, beta: f64, m: usize, target_pf: f64) -> Result<Self> {
        Self::new(l, beta, m, Filling::FermiMomentum(target_pf), Boundary::Dirichlet)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.validate()?;
        Ok(self)
    }

    pub fn with_kappa(mut self, kappa: f64) -> Result<Self> {
        self.kappa = kappa;
        self.validate()?;
        Ok(self)
    }

    /// Switches the boundary condition; the periodic ring re-derives mu from p_F.
    pub fn with_bc(mut self, bc: Boundary) -> Result<Self> {
        self.bc = bc;
        if bc == Boundary::PeriodicExtended {
            self.mu = 1.0 - self.p_f.cos();
        }
        self.validate()?;
        Ok(self)
    }

    /// Checks every invariant; configurations outside the band interior are rejected.
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::InvalidConfig("L must be a positive integer (got 0)".into()));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be positive and finite (got {})", self.beta)));
        }
        if self.m == 0 {
            return Err(Error::InvalidConfig("M must be a positive integer (got 0)".into()));
        }
        if !(self.gamma.is_finite() && self.gamma > 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must exceed 1 (got {})", self.gamma)));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::InvalidConfig(format!("kappa must lie in (0, 1) (got {})", self.kappa)));
        }
        if self.mu < self.kappa || self.mu > 2.0 - self.kappa {
            return Err(Error::InvalidConfig(format!(
                "mu = {} violates the band-interior condition kappa <= mu <= 2 - kappa with kappa = {}",
                self.mu, self.kappa
            )));
        }
        let e_f = dispersion(self.p_f, self.mu);
        let bound = match self.bc {
            Boundary::PeriodicExtended => 1e-12,
            Boundary::Dirichlet => PI / (self.l as f64 + 1.0) + 1e-12,
        };
        if e_f.abs() > bound {
            return Err(Error::InvalidConfig(format!("|e(pF)| = {} exceeds the snapping bound {bound}", e_f.abs())));
        }
        Ok(())
    }

    /// Time regulator beta / sqrt(M).
    pub fn delta_m(&self) -> f64 {
        self.beta / (self.m as f64).sqrt()
    }

    /// Fermi velocity sin p_F.
    pub fn v0(&self) -> f64 {
        self.p_f.sin()
    }

    /// Number of sites 2(L+1) of the extended periodic ring.
    pub fn ring(&self) -> usize {
        2 * (self.l + 1)
    }

    pub fn dispersion(&self, k: f64) -> f64 {
        dispersion(k, self.mu)
    }
}

/// e(k) = 1 - cos k - mu.
pub fn dispersion(k: f64, mu: f64) -> f64 {
    1.0 - k.cos() - mu
}

/// Derivative of the dispersion, sin k.
pub fn dispersion_slope(k: f64) -> f64 {
    k.sin()
}

/// A momentum stored as n pi / den.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Momentum {
    pub n: i64,
    pub den: i64,
}

impl Momentum {
    pub fn value(&self) -> f64 {
        self.n as f64 * PI / self.den as f64
    }
}

/// Kind of momentum grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    /// k = n pi/(L+1), n = 1..L.
    Dirichlet,
    /// k = n pi/(L+1), n = -(L+1)..L.
    Extended2L2,
    /// Extended momenta shifted by -omega p_F and reduced to (-pi, pi].
    QuasiShifted(i8),
}

/// Space momenta paired with the fermionic Matsubara frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub kind: GridKind,
    pub space: Vec<Momentum>,
    pub matsubara: Vec<f64>,
}

impl FrequencyGrid {
    pub fn space_momenta(&self) -> Vec<f64> {
        self.space.iter().map(Momentum::value).collect()
    }
}

/// Fermionic frequencies k0 = 2(n + 1/2) pi / beta for n = -M..M-1.
pub fn matsubara(beta: f64, m: usize) -> Vec<f64> {
    let m = m as i64;
    (-m..m).map(|n| (2 * n + 1) as f64 * PI / beta).collect()
}

/// Dirichlet momenta n pi/(L+1), n = 1..L.
pub fn dirichlet_momenta(l: usize) -> Vec<Momentum> {
    let den = l as i64 + 1;
    (1..den).map(|n| Momentum { n, den }).collect()
}

/// Extended ring momenta n pi/(L+1), n = -(L+1)..L.
pub fn extended_momenta(l: usize) -> Vec<Momentum> {
    let den = l as i64 + 1;
    (-den..den).map(|n| Momentum { n, den }).collect()
}

/// Reduces n pi/den to the representative with n in (-den, den].
pub fn reduce(mut m: Momentum) -> Momentum {
    let period = 2 * m.den;
    m.n = m.n.rem_euclid(period);
    if m.n > m.den {
        m.n -= period;
    }
    m
}

/// The three grids of a spec: Dirichlet, extended ring, and both quasi-particle shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub dirichlet: FrequencyGrid,
    pub extended: FrequencyGrid,
    pub quasi_plus: FrequencyGrid,
    pub quasi_minus: FrequencyGrid,
}

pub fn build_grids(spec: &LatticeSpec) -> Grids {
    let freqs = matsubara(spec.beta, spec.m);
    let ext = extended_momenta(spec.l);
    let shifted = |omega: i8| {
        let space = ext
            .iter()
            .map(|k| reduce(Momentum { n: k.n - omega as i64 * spec.n_f, den: k.den }))
            .collect();
        FrequencyGrid { kind: GridKind::QuasiShifted(omega), space, matsubara: freqs.clone() }
    };
    Grids {
        dirichlet: FrequencyGrid { kind: GridKind::Dirichlet, space: dirichlet_momenta(spec.l), matsubara: freqs.clone() },
        extended: FrequencyGrid { kind: GridKind::Extended2L2, space: ext.clone(), matsubara: freqs.clone() },
        quasi_plus: shifted(1),
        quasi_minus: shifted(-1),
    }
}

/// Index n of the Dirichlet momentum n pi/(L+1) nearest the target; ties go to the smaller n.
pub fn nearest_grid_index(l: usize, target: f64) -> i64 {
    let den = l as f64 + 1.0;
    let mut best = 1i64;
    let mut best_dist = f64::INFINITY;
    for n in 1..=l as i64 {
        let d = (n as f64 * PI / den - target).abs();
        if d < best_dist - 1e-14 {
            best = n;
            best_dist = d;
        }
    }
    best
}

/// Snaps a target Fermi momentum to the Dirichlet grid and fixes mu so that e(p_F) = 0.
pub fn fix_fermi(l: usize, target_pf: f64) -> (f64, f64) {
    let n = nearest_grid_index(l, target_pf);
    let p = n as f64 * PI / (l as f64 + 1.0);
    (1.0 - p.cos(), p)
}

/// Tridiagonal Dirichlet hopping matrix: diagonal 1 - mu, off-diagonal -1/2.
pub fn one_body_hamiltonian(spec: &LatticeSpec) -> Result<DMatrix<f64>> {
    if spec.bc != Boundary::Dirichlet {
        return Err(Error::InvalidConfig("one_body_hamiltonian requires bc = Dirichlet".into()));
    }
    Ok(dirichlet_hopping(spec.l, spec.mu))
}

/// Dirichlet hopping matrix for given L and mu.
pub fn dirichlet_hopping(l: usize, mu: f64) -> DMatrix<f64> {
    DMatrix::from_fn(l, l, |i, j| {
        if i == j {
            1.0 - mu
        } else if i.abs_diff(j) == 1 {
            -0.5
        } else {
            0.0
        }
    })
}

/// Orthogonal sine basis: column k holds sqrt(2/(L+1)) sin(k x), rows x = 1..L.
pub fn sine_basis(l: usize) -> DMatrix<f64> {
    let norm = (2.0 / (l as f64 + 1.0)).sqrt();
    DMatrix::from_fn(l, l, |x, k| {
        let kk = (k + 1) as f64 * PI / (l as f64 + 1.0);
        norm * (kk * (x + 1) as f64).sin()
    })
}
