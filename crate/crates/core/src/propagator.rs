//! Free two-point functions at finite (L, beta, M): the Dirichlet propagator, the
//! extended-ring propagator, the reflection split g = g_P + g_R and the
//! quasi-particle components of the infrared propagator.
//!
//! Two evaluation routes are provided. `Evaluation::Matsubara` performs the
//! finite frequency sum over 2M fermionic frequencies with the regulator phase
//! e^{i delta_M k0}. `Evaluation::Exact` is the M -> infinity limit in closed
//! time-domain form, with dt = 0 read as 0^-.

use crate::error::{Error, Result};
use crate::lattice::{self, LatticeSpec};
use crate::multiscale::{self, CutoffSpec, Weight};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Frequency-sum route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Evaluation {
    Matsubara,
    Exact,
}

/// Scale tag of a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    Full,
    Infrared,
    Ultraviolet,
    Single(i32),
}

/// Reflection component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sigma {
    P,
    R,
}

/// Component tag of a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    Full,
    P,
    R,
    Quasi(Sigma, i8),
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scale::Full => write!(f, "full"),
            Scale::Infrared => write!(f, "ir"),
            Scale::Ultraviolet => write!(f, "uv"),
            Scale::Single(h) => write!(f, "h{h}"),
        }
    }
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Component::Full => write!(f, "full"),
            Component::P => write!(f, "P"),
            Component::R => write!(f, "R"),
            Component::Quasi(s, w) => {
                let s = if *s == Sigma::P { "P" } else { "R" };
                let w = if *w > 0 { "+" } else { "-" };
                write!(f, "{s}{w}")
            }
        }
    }
}

/// Closed-form single-mode propagator at energy e: for dt in (0, beta) it is
/// e^{-dt e}/(1+e^{-beta e}); for dt in (-beta, 0] it is -e^{-(dt+beta) e}/(1+e^{-beta e}).
pub fn fermi_time(e: f64, dt: f64, beta: f64) -> f64 {
    let (sign, tau) = if dt > 0.0 { (1.0, dt) } else { (-1.0, dt + beta) };
    // e^{-tau e}/(1+e^{-beta e}) evaluated without overflow.
    let v = if e >= 0.0 {
        (-tau * e).exp() / (1.0 + (-beta * e).exp())
    } else {
        ((beta - tau) * e).exp() / ((beta * e).exp() + 1.0)
    };
    sign * v
}

/// Fermi occupation 1/(1+e^{beta e}); the zero-temperature limit gives 1/2 at e = 0.
pub fn fermi_occupation(e: f64, beta: f64) -> f64 {
    if beta.is_infinite() {
        if e < 0.0 {
            1.0
        } else if e > 0.0 {
            0.0
        } else {
            0.5
        }
    } else if e >= 0.0 {
        let x = (-beta * e).exp();
        x / (1.0 + x)
    } else {
        1.0 / (1.0 + (beta * e).exp())
    }
}

/// (1/beta) sum_{k0} e^{i delta k0} e^{-i k0 dt} / (-i k0 + e) over the 2M fermionic
/// frequencies. Pairing k0 with -k0 makes the sum real.
pub fn matsubara_mode_sum(e: f64, dt: f64, beta: f64, m: usize, delta: f64) -> f64 {
    let tau = dt - delta;
    let mut acc = 0.0;
    for n in 0..m {
        let k0 = (2 * n + 1) as f64 * PI / beta;
        let (s, c) = (k0 * tau).sin_cos();
        acc += (e * c + k0 * s) / (k0 * k0 + e * e);
    }
    2.0 * acc / beta
}

/// Single-mode value under the chosen route.
pub fn mode_value(spec: &LatticeSpec, e: f64, dt: f64, eval: Evaluation) -> f64 {
    match eval {
        Evaluation::Matsubara => matsubara_mode_sum(e, dt, spec.beta, spec.m, spec.delta_m()),
        Evaluation::Exact => fermi_time(e, dt, spec.beta),
    }
}

/// Dirichlet propagator g(x, y; dt) by the finite Matsubara sum.
pub fn dbc_propagator(spec: &LatticeSpec, x: i64, y: i64, dt: f64) -> Complex64 {
    dbc_propagator_with(spec, x, y, dt, Evaluation::Matsubara)
}

/// Dirichlet propagator under the chosen route. Sites outside {1..L} are allowed;
/// the kernel vanishes at x = 0 and x = L+1.
pub fn dbc_propagator_with(spec: &LatticeSpec, x: i64, y: i64, dt: f64, eval: Evaluation) -> Complex64 {
    let den = spec.l as f64 + 1.0;
    let mut acc = 0.0;
    for n in 1..=spec.l {
        let k = n as f64 * PI / den;
        let e = spec.dispersion(k);
        acc += (k * x as f64).sin() * (k * y as f64).sin() * mode_value(spec, e, dt, eval);
    }
    Complex64::new(2.0 * acc / den, 0.0)
}

/// Extended-ring propagator g_{2(L+1)}(dx, dt) by the finite Matsubara sum.
pub fn extended_pbc_propagator(spec: &LatticeSpec, dx: i64, dt: f64) -> Complex64 {
    extended_pbc_propagator_with(spec, dx, dt, Evaluation::Matsubara)
}

/// Extended-ring propagator under the chosen route.
pub fn extended_pbc_propagator_with(spec: &LatticeSpec, dx: i64, dt: f64, eval: Evaluation) -> Complex64 {
    let den = spec.l as i64 + 1;
    let n_ring = 2 * den;
    let mut acc = Complex64::new(0.0, 0.0);
    for n in -den..den {
        let k = n as f64 * PI / den as f64;
        let e = spec.dispersion(k);
        // Phase reduced modulo the ring to keep the argument small.
        let ph = ((n * dx).rem_euclid(2 * n_ring)) as f64 * PI / den as f64;
        acc += Complex64::from_polar(1.0, -ph) * mode_value(spec, e, dt, eval);
    }
    acc / n_ring as f64
}

/// Uniform imaginary-time grid t_j = j beta / n_t, j = 0..n_t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub beta: f64,
    pub n_t: usize,
}

impl TimeGrid {
    pub fn new(beta: f64, n_t: usize) -> Self {
        TimeGrid { beta, n_t }
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.beta / self.n_t as f64
    }

    /// Time difference t_j - t_i, in (-beta, beta).
    pub fn diff(&self, j: usize, i: usize) -> f64 {
        (j as f64 - i as f64) * self.beta / self.n_t as f64
    }

    /// All 2 n_t - 1 distinct differences, ordered from -(n_t-1) to n_t-1 steps.
    pub fn differences(&self) -> Vec<f64> {
        let n = self.n_t as i64;
        (-(n - 1)..n).map(|d| d as f64 * self.beta / self.n_t as f64).collect()
    }
}

/// A sampled two-point function g[(x, t), (y, s)]. Storage uses time translation
/// invariance: values are kept per (x, y, t - s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeKernel {
    pub sites: Vec<i64>,
    pub grid: TimeGrid,
    pub scale: Scale,
    pub component: Component,
    pub spec: LatticeSpec,
    values: Vec<Complex64>,
}

impl SpaceTimeKernel {
    /// Builds a kernel by sampling f(x, y, dt) on every site pair and time difference.
    pub fn from_fn(
        spec: &LatticeSpec,
        sites: Vec<i64>,
        grid: TimeGrid,
        scale: Scale,
        component: Component,
        f: impl Fn(i64, i64, f64) -> Complex64 + Sync,
    ) -> Self {
        use rayon::prelude::*;
        let diffs = grid.differences();
        let n = sites.len();
        let values: Vec<Complex64> = (0..n * n)
            .into_par_iter()
            .flat_map_iter(|p| {
                let (ix, iy) = (p / n, p % n);
                let (x, y) = (sites[ix], sites[iy]);
                diffs.iter().map(move |&dt| (x, y, dt)).collect::<Vec<_>>()
            })
            .map(|(x, y, dt)| f(x, y, dt))
            .collect();
        SpaceTimeKernel { sites, grid, scale, component, spec: *spec, values }
    }

    fn n_diff(&self) -> usize {
        2 * self.grid.n_t - 1
    }

    /// Value at site indices (ix, iy) and time indices (j, i) of the grid.
    pub fn get(&self, ix: usize, j: usize, iy: usize, i: usize) -> Complex64 {
        let d = j + self.grid.n_t - 1 - i;
        self.values[(ix * self.sites.len() + iy) * self.n_diff() + d]
    }

    /// Equal-time value (the 0^- convention of the underlying evaluator).
    pub fn equal_time(&self, ix: usize, iy: usize) -> Complex64 {
        self.get(ix, 0, iy, 0)
    }

    /// Largest pointwise modulus difference against another kernel on the same grid.
    pub fn max_deviation(&self, other: &SpaceTimeKernel) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Pointwise sum of two kernels sharing sites and grid.
    pub fn add(&self, other: &SpaceTimeKernel, component: Component) -> SpaceTimeKernel {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        SpaceTimeKernel { values, component, ..self.clone() }
    }

    /// CSV dump with columns x, y, t_index, s_index, re, im, scale, component.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,t_index,s_index,re,im,scale,component")?;
        for (ix, &x) in self.sites.iter().enumerate() {
            for (iy, &y) in self.sites.iter().enumerate() {
                for j in 0..self.grid.n_t {
                    for i in 0..self.grid.n_t {
                        let v = self.get(ix, j, iy, i);
                        writeln!(w, "{x},{y},{j},{i},{:.15e},{:.15e},{},{}", v.re, v.im, self.scale, self.component)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Full Dirichlet kernel over sites 1..L on the given time grid.
pub fn dbc_kernel(spec: &LatticeSpec, grid: TimeGrid, eval: Evaluation) -> SpaceTimeKernel {
    let modes = dirichlet_modes(spec);
    let sites: Vec<i64> = (1..=spec.l as i64).collect();
    let den = spec.l as f64 + 1.0;
    let n_t = grid.n_t;
    // Mode values per time difference, shared by every site pair.
    let table: Vec<Vec<f64>> = grid
        .differences()
        .iter()
        .map(|&dt| modes.iter().map(|&(_, e)| mode_value(spec, e, dt, eval)).collect())
        .collect();
    SpaceTimeKernel::from_fn(spec, sites, grid, Scale::Full, Component::Full, |x, y, dt| {
        let row = &table[((dt * n_t as f64 / spec.beta).round() as i64 + n_t as i64 - 1) as usize];
        let mut acc = 0.0;
        for (&(k, _), gk) in modes.iter().zip(row) {
            acc += (k * x as f64).sin() * (k * y as f64).sin() * gk;
        }
        Complex64::new(2.0 * acc / den, 0.0)
    })
}

fn dirichlet_modes(spec: &LatticeSpec) -> Vec<(f64, f64)> {
    lattice::dirichlet_momenta(spec.l)
        .iter()
        .map(|m| {
            let k = m.value();
            (k, spec.dispersion(k))
        })
        .collect()
}

/// Extended-ring values g_{2(L+1)}(d, dt) for d = 0..2(L+1) and every grid difference.
/// Mode values are shared across d; the ring sum is real because e(k) is even.
fn ring_table(spec: &LatticeSpec, grid: TimeGrid, eval: Evaluation) -> Vec<Vec<f64>> {
    let den = spec.l as i64 + 1;
    let n_ring = (2 * den) as usize;
    let diffs = grid.differences();
    let modes: Vec<f64> = (-den..den).map(|n| spec.dispersion(n as f64 * PI / den as f64)).collect();
    diffs
        .iter()
        .map(|&dt| {
            let gk: Vec<f64> = modes.iter().map(|&e| mode_value(spec, e, dt, eval)).collect();
            (0..n_ring as i64)
                .map(|d| {
                    let mut acc = 0.0;
                    for (i, n) in (-den..den).enumerate() {
                        let ph = ((n * d).rem_euclid(2 * n_ring as i64)) as f64 * PI / den as f64;
                        acc += ph.cos() * gk[i];
                    }
                    acc / n_ring as f64
                })
                .collect()
        })
        .collect()
}

/// Splits the full Dirichlet kernel into g_P(x, y) = g_{2(L+1)}(x - y) and
/// g_R(x, y) = -g_{2(L+1)}(x + y), checking that the parts reproduce the input.
pub fn reflection_decompose(
    kernel: &SpaceTimeKernel,
    eval: Evaluation,
    tolerance: f64,
) -> Result<(SpaceTimeKernel, SpaceTimeKernel)> {
    if kernel.component != Component::Full {
        return Err(Error::InvalidConfig("reflection_decompose expects a full Dirichlet kernel".into()));
    }
    let spec = kernel.spec;
    let table = ring_table(&spec, kernel.grid, eval);
    let n_ring = spec.ring() as i64;
    let n_t = kernel.grid.n_t;
    let lookup = |d: i64, dt: f64| -> f64 {
        let row = ((dt * n_t as f64 / spec.beta).round() as i64 + n_t as i64 - 1) as usize;
        table[row][d.rem_euclid(n_ring) as usize]
    };
    let p = SpaceTimeKernel::from_fn(&spec, kernel.sites.clone(), kernel.grid, kernel.scale, Component::P, |x, y, dt| {
        Complex64::new(lookup(x - y, dt), 0.0)
    });
    let r = SpaceTimeKernel::from_fn(&spec, kernel.sites.clone(), kernel.grid, kernel.scale, Component::R, |x, y, dt| {
        Complex64::new(-lookup(x + y, dt), 0.0)
    });
    let sum = p.add(&r, Component::Full);
    let deviation = sum.max_deviation(kernel);
    if deviation > tolerance {
        return Err(Error::ReflectionMismatch { deviation, tolerance });
    }
    Ok((p, r))
}

/// Equal-time reflection check at all site pairs: returns max |g - (g_P + g_R)|.
/// Mode sums are computed once per momentum and reused for every pair.
pub fn reflection_residual_equal_time(spec: &LatticeSpec, eval: Evaluation) -> f64 {
    let l = spec.l as i64;
    let den = l + 1;
    let n_ring = 2 * den;
    let dir: Vec<(f64, f64)> = dirichlet_modes(spec)
        .into_iter()
        .map(|(k, e)| (k, mode_value(spec, e, 0.0, eval)))
        .collect();
    let ring: Vec<f64> = (-den..den)
        .map(|n| mode_value(spec, spec.dispersion(n as f64 * PI / den as f64), 0.0, eval))
        .collect();
    let g_ring = |d: i64| -> f64 {
        let mut acc = 0.0;
        for (i, n) in (-den..den).enumerate() {
            let ph = ((n * d).rem_euclid(2 * n_ring)) as f64 * PI / den as f64;
            acc += ph.cos() * ring[i];
        }
        acc / n_ring as f64
    };
    let ring_vals: Vec<f64> = (0..n_ring).map(g_ring).collect();
    let mut worst: f64 = 0.0;
    for x in 1..=l {
        for y in 1..=l {
            let mut g = 0.0;
            for &(k, gk) in &dir {
                g += (k * x as f64).sin() * (k * y as f64).sin() * gk;
            }
            g *= 2.0 / den as f64;
            let p = ring_vals[(x - y).rem_euclid(n_ring) as usize];
            let r = -ring_vals[(x + y).rem_euclid(n_ring) as usize];
            worst = worst.max((g - p - r).abs());
        }
    }
    worst
}

/// Momentum reduced to (-pi, pi].
pub fn wrap_angle(k: f64) -> f64 {
    let mut r = k.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Infrared Dirichlet propagator: sine sum weighted by chi(k - p_F) + chi(k + p_F).
pub fn dbc_infrared(spec: &LatticeSpec, cut: &CutoffSpec, x: i64, y: i64, dt: f64) -> Complex64 {
    multiscale::dirichlet_value(spec, cut, Weight::Below(0), x, y, dt)
}

/// Quasi-particle kernel g_{P,omega}(dx, dt): ring sum over k' = k - omega p_F weighted by chi(k').
pub fn quasi_p(spec: &LatticeSpec, cut: &CutoffSpec, omega: i8, dx: i64, dt: f64) -> Complex64 {
    multiscale::quasi_ring_value(spec, cut, Weight::Below(0), omega, dx, dt)
}

/// Quasi-particle remainder component g_{R,omega}(x, y; dt) = -g_{P,omega}(x + y; dt).
pub fn quasi_r(spec: &LatticeSpec, cut: &CutoffSpec, omega: i8, x: i64, y: i64, dt: f64) -> Complex64 {
    -quasi_p(spec, cut, omega, x + y, dt)
}

/// Quasi-particle kernel for sigma and omega over sites 1..L.
pub fn quasi_particle_split(
    spec: &LatticeSpec,
    cut: &CutoffSpec,
    grid: TimeGrid,
    sigma: Sigma,
    omega: i8,
) -> SpaceTimeKernel {
    let sites: Vec<i64> = (1..=spec.l as i64).collect();
    SpaceTimeKernel::from_fn(spec, sites, grid, Scale::Infrared, Component::Quasi(sigma, omega), |x, y, dt| {
        match sigma {
            Sigma::P => quasi_p(spec, cut, omega, x - y, dt),
            Sigma::R => quasi_r(spec, cut, omega, x, y, dt),
        }
    })
}

/// Reassembles the infrared Dirichlet kernel from its four quasi-particle parts with
/// phases e^{-i omega p_F (x - y)} (P) and e^{-i omega p_F (x + y)} (R).
pub fn quasi_reconstruct(spec: &LatticeSpec, cut: &CutoffSpec, x: i64, y: i64, dt: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for omega in [1i8, -1] {
        let w = omega as f64 * spec.p_f;
        acc += Complex64::from_polar(1.0, -w * (x - y) as f64) * quasi_p(spec, cut, omega, x - y, dt);
        acc += Complex64::from_polar(1.0, -w * (x + y) as f64) * quasi_r(spec, cut, omega, x, y, dt);
    }
    acc
}

/// Contraction rule between quasi-particle components: P keeps omega, R flips it.
pub fn contraction_allowed(sigma: Sigma, omega: i8, omega_prime: i8) -> bool {
    match sigma {
        Sigma::P => omega == omega_prime,
        Sigma::R => omega == -omega_prime,
    }
}

/// The regulator phase used by the Matsubara route, exposed for diagnostics.
pub fn regulator_phase(spec: &LatticeSpec, k0: f64) -> Complex64 {
    (I * spec.delta_m() * k0).exp()
}
