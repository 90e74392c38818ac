//! Localization, running couplings and the two counterterm fixed points.
//!
//! Scales run over h in [h_min, 1]. Scale 1 carries the bare couplings and the
//! step 1 -> 0 integrates nothing; every step h -> h-1 with h <= 0 integrates the
//! slice f_h. Beta functions are truncated: bulk terms come from single-scale
//! momentum sums (tadpole, tadpole with one nu insertion, sunrise, bubbles), the
//! boundary term from the reflected part of the single-scale propagator plus one
//! varpi insertion.

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::multiscale::{self, CutoffSpec, ScaleLadder, Weight};
use crate::oracle;
use crate::perturbation;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

/// Finite-volume localization constants for a momentum spacing pi/n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationCoeffs {
    pub n: usize,
    pub beta: f64,
    pub p_f: f64,
    pub a_l: f64,
    pub b_l: f64,
    /// (pi/n, eta pi/beta) for eta = +1, -1.
    pub k_eta: [(f64, f64); 2],
}

/// a = (pi/n)/sin(pi/n), b = cos(p_F)(cos(pi/n) - 1)(pi/n)/sin(pi/n).
/// For a Dirichlet box of L sites pass n = L + 1, the spacing of its momentum grid.
pub fn localization_coeffs(n: usize, beta: f64, p_f: f64) -> LocalizationCoeffs {
    let d = PI / n as f64;
    let a_l = d / d.sin();
    let b_l = p_f.cos() * (d.cos() - 1.0) * a_l;
    LocalizationCoeffs { n, beta, p_f, a_l, b_l, k_eta: [(d, PI / beta), (d, -PI / beta)] }
}

/// Local coefficients of a quadratic kernel: constant, -i k0 slope and e(k) slope.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalParts {
    pub n: f64,
    pub z: f64,
    pub a: f64,
}

/// Localizes w(k, k0) from the four nodes (p_F + xi pi/n, eta pi/beta).
/// A kernel equal to c + z (-i k0) + a e(k) is reproduced exactly.
pub fn localize_quadratic(w: impl Fn(f64, f64) -> Complex64, c: &LocalizationCoeffs) -> LocalParts {
    let d = PI / c.n as f64;
    let q0 = PI / c.beta;
    let v0 = c.p_f.sin();
    let at = |xi: f64, eta: f64| w(c.p_f + xi * d, eta * q0);
    let (pp, pm, mp, mm) = (at(1.0, 1.0), at(1.0, -1.0), at(-1.0, 1.0), at(-1.0, -1.0));
    let mean = (pp + pm + mp + mm) / 4.0;
    let a = c.a_l * ((pp + pm) - (mp + mm)).re / (4.0 * v0 * d);
    let z = (((pp - pm) + (mp - mm)) / Complex64::new(0.0, -4.0 * q0)).re;
    LocalParts { n: mean.re + a * c.b_l / c.a_l, z, a }
}

/// Single-scale support point on the ring grid: k = n pi/(L+1), k0 = (2 n0 + 1) pi/beta.
#[derive(Debug, Clone, Copy)]
struct Point {
    n: i64,
    n0: i64,
    g: Complex64,
}

/// Single-scale momentum-space propagator f_h/( -i k0 + e(k)) on the ring of 2(L+1) momenta.
struct ScaleSupport {
    den: i64,
    n0_lo: i64,
    n_freq: usize,
    points: Vec<Point>,
    dense: Vec<Complex64>,
}

impl ScaleSupport {
    fn new(spec: &LatticeSpec, cut: &CutoffSpec, h: i32) -> Self {
        let w = Weight::Slice(h);
        let den = spec.l as i64 + 1;
        let freqs = multiscale::frequency_support(spec, cut.support_radius(w));
        let n0_lo = freqs.first().map(|f| f.0).unwrap_or(0);
        let n_freq = freqs.len();
        let ring = 2 * den;
        let mut dense = vec![Complex64::new(0.0, 0.0); ring as usize * n_freq.max(1)];
        let mut points = Vec::new();
        for n in -den..den {
            let k = n as f64 * PI / den as f64;
            let e = spec.dispersion(k);
            for &(n0, k0) in &freqs {
                let wt = multiscale::full_weight(spec, cut, w, k, k0);
                if wt != 0.0 {
                    let g = wt / Complex64::new(e, -k0);
                    points.push(Point { n, n0, g });
                    dense[n.rem_euclid(ring) as usize * n_freq + (n0 - n0_lo) as usize] = g;
                }
            }
        }
        ScaleSupport { den, n0_lo, n_freq, points, dense }
    }

    fn get(&self, n: i64, n0: i64) -> Complex64 {
        let j = n0 - self.n0_lo;
        if j < 0 || j >= self.n_freq as i64 {
            return Complex64::new(0.0, 0.0);
        }
        self.dense[n.rem_euclid(2 * self.den) as usize * self.n_freq + j as usize]
    }

    fn momentum(&self, n: i64) -> f64 {
        n as f64 * PI / self.den as f64
    }
}

/// Per-scale coefficients of the truncated bulk beta functions (couplings factored out).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleTables {
    pub h: i32,
    /// Tadpole, multiplies lambda_h.
    pub tadpole: LocalParts,
    /// Tadpole with one nu insertion, multiplies lambda_h nu_h gamma^h.
    pub tadpole_nu: LocalParts,
    /// Sunrise, multiplies lambda_h^2.
    pub sunrise: LocalParts,
    /// Quartic coefficient, multiplies lambda_h^2.
    pub bubble: f64,
    pub support: usize,
}

fn scale_tables(spec: &LatticeSpec, cut: &CutoffSpec, h: i32, vhat: fn(f64) -> f64, coeffs: &LocalizationCoeffs) -> ScaleTables {
    let s = ScaleSupport::new(spec, cut, h);
    let norm = 1.0 / (spec.beta * 2.0 * s.den as f64);
    // Equal-time occupation of each ring momentum at this scale, and its nu derivative.
    let ring = 2 * s.den as usize;
    let mut d1 = vec![0.0; ring];
    let mut d2 = vec![0.0; ring];
    for p in &s.points {
        let i = p.n.rem_euclid(ring as i64) as usize;
        d1[i] -= p.g.re;
        d2[i] += (p.g * p.g).re;
    }
    let hartree_exchange = |occ: &[f64], k: f64| {
        let rho: f64 = occ.iter().sum::<f64>() * norm;
        let x: f64 = (0..ring).map(|i| vhat(k - s.momentum(i as i64)) * occ[i]).sum::<f64>() * norm;
        Complex64::new(2.0 * (vhat(0.0) * rho - x), 0.0)
    };
    let tadpole = localize_quadratic(|k, _| hartree_exchange(&d1, k), coeffs);
    let tadpole_nu = localize_quadratic(|k, _| hartree_exchange(&d2, k), coeffs);
    let sunrise = localize_quadratic(
        |k, k0| {
            let kn = (k / PI * s.den as f64).round() as i64;
            let kn0 = ((k0 * spec.beta / PI - 1.0) / 2.0).round() as i64;
            let kk = s.momentum(kn);
            let total: Complex64 = s
                .points
                .par_iter()
                .map(|a| {
                    let va = vhat(s.momentum(a.n) - kk);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for b in &s.points {
                        let g3 = s.get(a.n + b.n - kn, a.n0 + b.n0 - kn0);
                        if g3.re != 0.0 || g3.im != 0.0 {
                            let gv = 2.0 * (va - vhat(s.momentum(b.n) - kk));
                            acc += gv * gv * a.g * b.g * g3;
                        }
                    }
                    acc
                })
                .collect::<Vec<_>>()
                .iter()
                .sum();
            total * (0.5 * norm * norm)
        },
        coeffs,
    );
    // Each bubble pairs the two Fermi points once: particle-hole from q near -p_F to
    // q + 2 p_F, particle-particle from q near +p_F to -q.
    let two_pf = (2.0 * spec.p_f / PI * s.den as f64).round() as i64;
    let near_plus = |n: i64| {
        let k = s.momentum(n);
        crate::propagator::wrap_angle(k - spec.p_f).abs() < crate::propagator::wrap_angle(k + spec.p_f).abs()
    };
    let b: f64 = s
        .points
        .iter()
        .map(|p| {
            let partner = if near_plus(p.n) { s.get(-p.n, -p.n0 - 1) } else { s.get(p.n + two_pf, p.n0) };
            (p.g * partner).re
        })
        .sum::<f64>()
        * norm;
    let bubble = -2.0 * (vhat(0.0) - vhat(2.0 * spec.p_f)) * b;
    ScaleTables { h, tadpole, tadpole_nu, sunrise, bubble, support: s.points.len() }
}

/// Precomputed scale data of a flow problem.
#[derive(Debug, Clone)]
pub struct FlowSetup {
    pub spec: LatticeSpec,
    pub cut: CutoffSpec,
    pub ladder: ScaleLadder,
    pub coeffs: LocalizationCoeffs,
    pub vhat: fn(f64) -> f64,
    /// Tables for h = 0, -1, ..., h_min + 1.
    pub tables: Vec<ScaleTables>,
}

impl FlowSetup {
    pub fn new(spec: &LatticeSpec, vhat: fn(f64) -> f64) -> Self {
        let ladder = ScaleLadder::new(spec);
        let cut = CutoffSpec::new(spec, ladder.h_min());
        let coeffs = localization_coeffs(spec.l + 1, spec.beta, spec.p_f);
        let tables = (ladder.h_min() + 1..=0).rev().map(|h| scale_tables(spec, &cut, h, vhat, &coeffs)).collect();
        FlowSetup { spec: spec.clone(), cut, ladder, coeffs, vhat, tables }
    }

    pub fn h_min(&self) -> i32 {
        self.ladder.h_min()
    }

    /// Scales of the trajectory, top first: 1, 0, ..., h_min.
    pub fn scales(&self) -> Vec<i32> {
        (self.h_min()..=1).rev().collect()
    }

    fn table(&self, h: i32) -> Option<&ScaleTables> {
        if h > 0 || h <= self.h_min() {
            None
        } else {
            self.tables.get((-h) as usize)
        }
    }
}

/// Couplings entering one beta-function evaluation at scale h.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Couplings {
    pub lambda: f64,
    pub nu: f64,
    pub delta: f64,
    pub varpi: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BetaKind {
    Nu,
    Lambda,
    Delta,
    Z,
    Varpi,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BetaValue {
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

impl BetaValue {
    pub fn scalar(&self) -> f64 {
        match self {
            BetaValue::Scalar(v) => *v,
            BetaValue::Matrix(m) => m.iter().map(|v| v.abs()).fold(0.0, f64::max),
        }
    }
}

/// Lowest-order beta function of the step h -> h-1.
/// Z returns z_{h-1}; Varpi requires `c.varpi` and the boundary data of `b`.
pub fn beta_truncated(setup: &FlowSetup, boundary: Option<&BoundaryData>, h: i32, c: &Couplings, which: BetaKind) -> BetaValue {
    let g = setup.spec.gamma;
    let t = match setup.table(h) {
        Some(t) => t,
        None => {
            return match which {
                BetaKind::Varpi => BetaValue::Matrix(DMatrix::zeros(setup.spec.l, setup.spec.l)),
                _ => BetaValue::Scalar(0.0),
            }
        }
    };
    let (l, nu) = (c.lambda, c.nu);
    match which {
        BetaKind::Nu => {
            let n = l * t.tadpole.n + l * nu * g.powi(h) * t.tadpole_nu.n + l * l * t.sunrise.n;
            BetaValue::Scalar(g.powi(1 - h) * n)
        }
        BetaKind::Lambda => BetaValue::Scalar(l * l * t.bubble),
        BetaKind::Z => BetaValue::Scalar(l * l * t.sunrise.z),
        BetaKind::Delta => {
            let a = l * t.tadpole.a + l * nu * g.powi(h) * t.tadpole_nu.a + l * l * t.sunrise.a;
            BetaValue::Scalar(a - l * l * t.sunrise.z)
        }
        BetaKind::Varpi => {
            let b = boundary.expect("varpi beta needs boundary data");
            let zero = DMatrix::zeros(setup.spec.l, setup.spec.l);
            let varpi = c.varpi.as_ref().unwrap_or(&zero);
            BetaValue::Matrix(b.beta_varpi(h, l, varpi))
        }
    }
}

/// One scale of a trajectory. Identities hold as stored:
/// nu = (Z_h/Z_{h-1}) n, delta = (Z_h/Z_{h-1})(a - z), lambda = (Z_h/Z_{h-1})^2 l.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub h: i32,
    pub nu: f64,
    pub delta: f64,
    pub lambda: f64,
    pub z: f64,
    pub a: f64,
    pub n: f64,
    pub l: f64,
    #[serde(rename = "Z")]
    pub big_z: f64,
    /// Z_{h-1}, so every identity is checkable from one record.
    #[serde(rename = "Z_below")]
    pub big_z_below: f64,
    /// beta^h_nu, beta^h_lambda, beta^h_delta of the step h -> h-1 (zero at h_min).
    pub beta_nu: f64,
    pub beta_lambda: f64,
    pub beta_delta: f64,
}

/// Per-scale couplings, top scale first, plus the boundary matrices once solved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTrajectory {
    pub gamma: f64,
    pub records: Vec<ScaleRecord>,
    pub varpi: Vec<DMatrix<f64>>,
}

impl CouplingTrajectory {
    pub fn record(&self, h: i32) -> Option<&ScaleRecord> {
        self.records.iter().find(|r| r.h == h)
    }
}

/// Z_{h-1} = Z_h (1 + z_h).
pub fn dress_z(z_h_factor: f64, z_h: f64) -> f64 {
    z_h_factor * (1.0 + z_h)
}

/// Flow of lambda, delta and Z at fixed nu trajectory (nu enters only beta_nu and delta).
fn run_bulk(setup: &FlowSetup, lambda: f64, nu: &[f64]) -> CouplingTrajectory {
    let hs = setup.scales();
    let mut recs: Vec<ScaleRecord> = Vec::with_capacity(hs.len());
    // Scale 1: bare values, Z_1 = Z_0 = 1.
    let (mut lam, mut del, mut z_h, mut zf) = (lambda, 0.0, 0.0, 1.0);
    for (i, &h) in hs.iter().enumerate() {
        let zb = dress_z(zf, z_h);
        let r = zf / zb;
        let c = Couplings { lambda: lam, nu: nu[i], delta: del, varpi: None };
        let (bn, bl, bd, zn) = if h > setup.h_min() {
            (
                beta_truncated(setup, None, h, &c, BetaKind::Nu).scalar(),
                beta_truncated(setup, None, h, &c, BetaKind::Lambda).scalar(),
                beta_truncated(setup, None, h, &c, BetaKind::Delta).scalar(),
                beta_truncated(setup, None, h, &c, BetaKind::Z).scalar(),
            )
        } else {
            (0.0, 0.0, 0.0, 0.0)
        };
        recs.push(ScaleRecord {
            h,
            nu: nu[i],
            delta: del,
            lambda: lam,
            z: z_h,
            a: del / r + z_h,
            n: nu[i] / r,
            l: lam / (r * r),
            big_z: zf,
            big_z_below: zb,
            beta_nu: bn,
            beta_lambda: bl,
            beta_delta: bd,
        });
        lam += bl;
        del += bd;
        z_h = zn;
        zf = zb;
    }
    CouplingTrajectory { gamma: setup.spec.gamma, records: recs, varpi: Vec::new() }
}

/// Iteration controls shared by both solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub theta: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { theta: 0.5, max_iter: 200, tol: 1e-10 }
    }
}

/// Fixed point of the nu operator with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuSolution {
    pub trajectory: CouplingTrajectory,
    pub iterations: usize,
    /// ||T^{k+1} nu - T^k nu||_theta per iteration.
    pub differences: Vec<f64>,
    /// Successive-difference ratios.
    pub ratios: Vec<f64>,
}

/// ||nu||_theta = sup_h |nu_h| gamma^{-theta h / 2}.
pub fn nu_norm(nu: &[f64], hs: &[i32], gamma: f64, theta: f64) -> f64 {
    nu.iter().zip(hs).map(|(v, &h)| v.abs() * gamma.powf(-theta * h as f64 / 2.0)).fold(0.0, f64::max)
}

/// Applies (T nu)_h = -sum_{k = h_min+1}^{h} gamma^{k-h-1} beta^k_nu to a trajectory.
pub fn apply_t_nu(traj: &CouplingTrajectory) -> Vec<f64> {
    let g = traj.gamma;
    let n = traj.records.len();
    // records run top first; index n-1 is h_min with (T nu)_{h_min} = 0.
    let mut out = vec![0.0; n];
    for i in (0..n - 1).rev() {
        out[i] = (out[i + 1] - traj.records[i].beta_nu) / g;
    }
    out
}

/// Picard iteration from nu = 0. Fails with NoContraction if the successive-difference
/// ratio stays >= 1 for three iterations or the iteration budget runs out.
pub fn solve_nu(setup: &FlowSetup, lambda: f64, cfg: &SolverConfig) -> Result<NuSolution> {
    let hs = setup.scales();
    let g = setup.spec.gamma;
    let mut nu = vec![0.0; hs.len()];
    let mut traj = run_bulk(setup, lambda, &nu);
    let mut differences = Vec::new();
    let mut ratios = Vec::new();
    let mut bad = 0;
    for it in 1..=cfg.max_iter {
        let next = apply_t_nu(&traj);
        let diff: Vec<f64> = next.iter().zip(&nu).map(|(a, b)| a - b).collect();
        let d = nu_norm(&diff, &hs, g, cfg.theta);
        if let Some(&prev) = differences.last() {
            let r: f64 = if prev > 0.0 { d / prev } else { 0.0 };
            ratios.push(r);
            bad = if r >= 1.0 { bad + 1 } else { 0 };
            if bad >= 3 {
                return Err(Error::NoContraction { ratio: r });
            }
        }
        differences.push(d);
        // Keep the betas evaluated at the previous iterate so that the stored
        // trajectory satisfies nu_{h-1} - gamma nu_h = beta_nu^h exactly.
        let betas = traj.records.clone();
        nu = next;
        let mut fresh = run_bulk(setup, lambda, &nu);
        let done = d <= cfg.tol * (1.0 + nu_norm(&nu, &hs, g, cfg.theta));
        if done {
            for (r, old) in fresh.records.iter_mut().zip(&betas) {
                r.beta_nu = old.beta_nu;
            }
            return Ok(NuSolution { trajectory: fresh, iterations: it, differences, ratios });
        }
        traj = fresh;
    }
    Err(Error::NoContraction { ratio: ratios.last().copied().unwrap_or(1.0) })
}

/// Boundary data of the varpi flow on the Dirichlet box.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub l: usize,
    pub gamma: f64,
    pub v: DMatrix<f64>,
    pub basis: DMatrix<f64>,
    /// Per scale h = 0..h_min+1: reflected equal-time single-scale propagator g_R(x,y).
    pub g_r: Vec<DMatrix<f64>>,
    /// Per scale: M(k,k') = (1/beta) sum_{k0} ghat(k,k0) ghat(k',k0) on the sine modes.
    pub insertion: Vec<DMatrix<f64>>,
}

impl BoundaryData {
    pub fn new(setup: &FlowSetup) -> Self {
        let spec = &setup.spec;
        let l = spec.l;
        let cut = setup.cut;
        let v = oracle::dirichlet_potential(l, setup.vhat);
        let basis = crate::lattice::sine_basis(l);
        let den = l as f64 + 1.0;
        let (g_r, insertion): (Vec<_>, Vec<_>) = (setup.h_min() + 1..=0)
            .rev()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&h| {
                let w = Weight::Slice(h);
                let prof: Vec<f64> = (0..=2 * l as i64 + 2).map(|s| multiscale::full_ring_value(spec, &cut, w, s, 0.0).re).collect();
                let gr = DMatrix::from_fn(l, l, |i, j| -prof[i + j + 2]);
                let freqs = multiscale::frequency_support(spec, cut.support_radius(w));
                let amps: Vec<Vec<Complex64>> = (1..=l)
                    .map(|n| {
                        let k = n as f64 * PI / den;
                        let e = spec.dispersion(k);
                        freqs.iter().map(|&(_, k0)| multiscale::full_weight(spec, &cut, w, k, k0) / Complex64::new(e, -k0)).collect()
                    })
                    .collect();
                let m = DMatrix::from_fn(l, l, |a, b| amps[a].iter().zip(&amps[b]).map(|(x, y)| (x * y).re).sum::<f64>() / spec.beta);
                (gr, m)
            })
            .unzip();
        BoundaryData { l, gamma: spec.gamma, v, basis, g_r, insertion }
    }

    fn index(&self, h: i32) -> Option<usize> {
        let i = (-h) as usize;
        (h <= 0 && i < self.g_r.len()).then_some(i)
    }

    /// beta^h_varpi = gamma^{1-h} W2[g_R + Delta(varpi)], with Delta the line correction
    /// -gamma^h g varpi g integrated over the intermediate time.
    pub fn beta_varpi(&self, h: i32, lambda: f64, varpi: &DMatrix<f64>) -> DMatrix<f64> {
        let Some(i) = self.index(h) else {
            return DMatrix::zeros(self.l, self.l);
        };
        let modes = self.basis.transpose() * varpi * &self.basis;
        let delta = &self.basis * modes.component_mul(&self.insertion[i]) * self.basis.transpose() * (-self.gamma.powi(h));
        let g = &self.g_r[i] + delta;
        perturbation::tadpole_from(&self.v, &g, lambda).w2 * self.gamma.powi(1 - h)
    }
}

/// sup_x (1 + gamma^h d_L(x))^theta sum_y |varpi(x,y)|, sites x = 1..L, d_L(x) = min(x, |x - L|).
pub fn weighted_norm(varpi: &DMatrix<f64>, theta: f64, h: i32, gamma: f64) -> f64 {
    let l = varpi.nrows() as i64;
    let gh = gamma.powi(h);
    varpi
        .row_iter()
        .enumerate()
        .map(|(i, row)| {
            let x = i as i64 + 1;
            let d = x.min((x - l).abs()) as f64;
            (1.0 + gh * d).powf(theta) * row.iter().map(|v| v.abs()).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// gamma^{-h} times a time-integrated remainder kernel.
pub fn extract_pi(remainder: &DMatrix<f64>, h: i32, gamma: f64) -> DMatrix<f64> {
    remainder * gamma.powi(-h)
}

/// Fixed point of the varpi operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarpiSolution {
    /// varpi_h for h = 1, 0, ..., h_min.
    pub varpi: Vec<DMatrix<f64>>,
    /// pi = varpi_1 / strength with sup_x sum_y |pi| = 1.
    pub pi: DMatrix<f64>,
    pub strength: f64,
    pub iterations: usize,
    /// max_h of the weighted norm of each iterate.
    pub norms: Vec<f64>,
    pub differences: Vec<f64>,
    pub ball_radius: f64,
}

/// Picard iteration of (T varpi)_h = -sum_{k<=h} gamma^{k-h-1} beta^k_varpi from zero,
/// requiring every iterate to stay in the ball of radius ball_c |lambda|.
pub fn solve_varpi(setup: &FlowSetup, boundary: &BoundaryData, bulk: &CouplingTrajectory, theta_bar: f64, ball_c: f64, cfg: &SolverConfig) -> Result<VarpiSolution> {
    let hs = setup.scales();
    let g = setup.spec.gamma;
    let l = setup.spec.l;
    let lambda0 = bulk.records.first().map(|r| r.lambda).unwrap_or(0.0);
    let radius = ball_c * lambda0.abs();
    let mut cur: Vec<DMatrix<f64>> = vec![DMatrix::zeros(l, l); hs.len()];
    let mut norms = Vec::new();
    let mut differences = Vec::new();
    for it in 1..=cfg.max_iter {
        let betas: Vec<DMatrix<f64>> = hs
            .par_iter()
            .enumerate()
            .map(|(i, &h)| boundary.beta_varpi(h, bulk.records[i].lambda, &cur[i]))
            .collect();
        let n = hs.len();
        let mut next = vec![DMatrix::zeros(l, l); n];
        for i in (0..n - 1).rev() {
            next[i] = (&next[i + 1] - &betas[i]) / g;
        }
        let mut worst: f64 = 0.0;
        for (i, &h) in hs.iter().enumerate() {
            let nm = weighted_norm(&next[i], theta_bar, h, g);
            if nm > radius * (1.0 + 1e-12) {
                return Err(Error::BallEscape { h, norm: nm, radius });
            }
            worst = worst.max(nm);
        }
        let d = hs
            .iter()
            .enumerate()
            .map(|(i, &h)| weighted_norm(&(&next[i] - &cur[i]), theta_bar, h, g))
            .fold(0.0, f64::max);
        norms.push(worst);
        differences.push(d);
        cur = next;
        if d <= cfg.tol * (1.0 + worst) {
            let (pi, strength) = oracle::normalize_pi(&cur[0]);
            return Ok(VarpiSolution { varpi: cur, pi, strength, iterations: it, norms, differences, ball_radius: radius });
        }
    }
    let ratio = match differences.as_slice() {
        [.., a, b] if *a > 0.0 => b / a,
        _ => 1.0,
    };
    Err(Error::NoContraction { ratio })
}

/// Full flow: bulk trajectory with the nu fixed point, then the varpi fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub nu: NuSolution,
    pub varpi: VarpiSolution,
}

pub fn solve_flow(setup: &FlowSetup, lambda: f64, theta_bar: f64, ball_c: f64, cfg: &SolverConfig) -> Result<FlowResult> {
    let mut nu = solve_nu(setup, lambda, cfg)?;
    let boundary = BoundaryData::new(setup);
    let varpi = solve_varpi(setup, &boundary, &nu.trajectory, theta_bar, ball_c, cfg)?;
    nu.trajectory.varpi = varpi.varpi.clone();
    Ok(FlowResult { nu, varpi })
}

/// Summary numbers of a solved flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowDiagnostics {
    pub lambda: f64,
    pub nu_iterations: usize,
    /// Largest successive-difference ratio of the nu iteration (0 with fewer than two steps).
    pub nu_max_ratio: f64,
    /// Fitted c in |nu_h| <= c |lambda| gamma^{theta h / 2}.
    pub nu_c: f64,
    pub varpi_iterations: usize,
    /// max over iterates and scales of the weighted norm.
    pub varpi_max_norm: f64,
    pub ball_radius: f64,
    /// Fitted C in ||varpi_h|| <= C |lambda|.
    pub varpi_c: f64,
    /// Largest successive-difference ratio of the varpi iteration above the round-off floor.
    pub varpi_max_ratio: f64,
    /// Fitted C_theta of the pi row-sum profile.
    pub pi_profile_constant: f64,
}

/// Differences below this multiple of the iterate norm count as converged round-off.
const RATIO_FLOOR: f64 = 1e-13;

fn max_ratio(differences: &[f64], scale: f64) -> f64 {
    differences
        .windows(2)
        .filter(|w| w[0] > RATIO_FLOOR * (1.0 + scale) && w[1] > RATIO_FLOOR * (1.0 + scale))
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max)
}

pub fn flow_diagnostics(setup: &FlowSetup, flow: &FlowResult, lambda: f64, theta: f64, theta_bar: f64) -> FlowDiagnostics {
    let g = setup.spec.gamma;
    let hs = setup.scales();
    let nu: Vec<f64> = flow.nu.trajectory.records.iter().map(|r| r.nu).collect();
    let per_lambda = |x: f64| if lambda == 0.0 { 0.0 } else { x / lambda.abs() };
    let varpi_max_norm = flow.varpi.norms.iter().cloned().fold(0.0, f64::max);
    let nu_scale = nu_norm(&nu, &hs, g, theta);
    FlowDiagnostics {
        lambda,
        nu_iterations: flow.nu.iterations,
        nu_max_ratio: max_ratio(&flow.nu.differences, nu_scale),
        nu_c: per_lambda(nu_scale),
        varpi_iterations: flow.varpi.iterations,
        varpi_max_norm,
        ball_radius: flow.varpi.ball_radius,
        varpi_c: per_lambda(varpi_max_norm),
        varpi_max_ratio: max_ratio(&flow.varpi.differences, varpi_max_norm),
        pi_profile_constant: profile_constant(&flow.varpi.pi, theta_bar, 0, g),
    }
}

/// Row sums sum_y |m(x,y)| for x = 1..L.
pub fn row_sums(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum()).collect()
}

/// Fitted C_theta = max_x rowsum(x) (1 + gamma^{theta h} d_L(x)^theta).
pub fn profile_constant(m: &DMatrix<f64>, theta: f64, h: i32, gamma: f64) -> f64 {
    let l = m.nrows() as i64;
    row_sums(m)
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let x = i as i64 + 1;
            let d = x.min((x - l).abs()) as f64;
            s * (1.0 + gamma.powf(theta * h as f64) * d.powf(theta))
        })
        .fold(0.0, f64::max)
}

/// Writes rows h, x, row_sum for every stored varpi_h.
pub fn write_profiles<W: Write>(mut w: W, hs: &[i32], varpi: &[DMatrix<f64>]) -> std::io::Result<()> {
    writeln!(w, "h,x,row_sum")?;
    for (h, m) in hs.iter().zip(varpi) {
        for (i, s) in row_sums(m).iter().enumerate() {
            writeln!(w, "{},{},{:.17e}", h, i + 1, s)?;
        }
    }
    Ok(())
}

/// Weight kinds entering the gain lemma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightKind {
    Rho { n: u32 },
    Varpi { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightFunction {
    pub kind: WeightKind,
    pub h: i32,
    pub c: f64,
}

impl WeightFunction {
    /// w(x) with d_L(x) = min(|x|, |x - L|).
    pub fn eval(&self, x: i64, l: usize, gamma: f64) -> f64 {
        let d = x.abs().min((x - l as i64).abs()) as f64;
        match self.kind {
            WeightKind::Rho { n } => self.c / (1.0 + gamma.powi(self.h) * d).powi(n as i32),
            WeightKind::Varpi { theta } => self.c / (1.0 + gamma.powf(theta * self.h as f64) * d.powf(theta)),
        }
    }

    pub fn at_scale(&self, h: i32) -> Self {
        WeightFunction { h, ..*self }
    }

    /// 1 for Rho, theta for Varpi.
    pub fn alpha(&self) -> f64 {
        match self.kind {
            WeightKind::Rho { .. } => 1.0,
            WeightKind::Varpi { theta } => theta,
        }
    }
}

/// Outcome of the weighted-integration check at one (h, hbar).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCheck {
    pub h: i32,
    pub hbar: i32,
    pub xs: Vec<i64>,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub ok: bool,
}

/// A(d) = int_0^beta dt |g^{(hbar)}_{P,+}(d, t)| for every ring displacement d.
pub fn time_integrated_modulus(spec: &LatticeSpec, cut: &CutoffSpec, hbar: i32) -> Vec<f64> {
    let w = Weight::Slice(hbar);
    let n_t = multiscale::time_points_for(spec, cut.support_radius(w));
    let dt = spec.beta / n_t as f64;
    multiscale::stream_single_scale(spec, cut, w, 1, n_t, |_, g| g.iter().map(|v| v.norm()).sum::<f64>() * dt)
}

/// Ratios sum_y w_h(y) A(y - x) / (gamma^{-hbar} gamma^{alpha (hbar - h)} w_hbar(x)) at the given x;
/// `ok` iff every ratio is at most `c_theta`.
pub fn gain_lemma_check(spec: &LatticeSpec, a: &[f64], w: &WeightFunction, hbar: i32, xs: &[i64], c_theta: f64) -> GainCheck {
    let g = spec.gamma;
    let l = spec.l;
    let n = a.len() as i64;
    let wb = w.at_scale(hbar);
    let ratios: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let num: f64 = (1..=l as i64).map(|y| w.eval(y, l, g) * a[(y - x).rem_euclid(n) as usize]).sum();
            let den = g.powi(-hbar) * g.powf(w.alpha() * (hbar - w.h) as f64) * wb.eval(x, l, g);
            num / den
        })
        .collect();
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    GainCheck { h: w.h, hbar, xs: xs.to_vec(), ratios, max_ratio, ok: max_ratio <= c_theta }
}
