//! Smooth momentum cutoffs, single-scale propagators, norm and decay certificates,
//! and explicit Gram realizations of single-scale covariances.
//!
//! Single-scale kernels have compact support in (k', k0), so every kernel here is
//! an exact finite sum. Large lattices go through `scale_statistics`, which builds
//! G(x, k0) by an FFT over the ring momenta and streams an FFT over time per x.

use crate::lattice::{self, LatticeSpec, Momentum};
use crate::propagator::{Component, Scale, Sigma, SpaceTimeKernel, TimeGrid};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

/// Smooth radial cutoff data. The radius of (k', k0) is sqrt(k0^2 + v0^2 k'^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub gamma: f64,
    pub p_f: f64,
    pub v0: f64,
    pub h_min: i32,
}

/// Which cutoff weight multiplies the propagator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weight {
    /// chi(gamma^{-h} k'); h = 0 is the infrared cutoff itself.
    Below(i32),
    /// f_h(k') = chi(gamma^{-h} k') - chi(gamma^{-h+1} k').
    Slice(i32),
}

fn phi(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth step: 0 for t <= 0, 1 for t >= 1, C-infinity in between.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = phi(t);
        a / (a + phi(1.0 - t))
    }
}

impl CutoffSpec {
    pub fn new(spec: &LatticeSpec, h_min: i32) -> Self {
        CutoffSpec { gamma: spec.gamma, p_f: spec.p_f, v0: spec.v0(), h_min }
    }

    /// Anisotropic radius sqrt(k0^2 + v0^2 k'^2).
    pub fn radius(&self, kp: f64, k0: f64) -> f64 {
        (k0 * k0 + self.v0 * self.v0 * kp * kp).sqrt()
    }

    /// Radial profile: 1 for r <= p_F/(2 gamma), 0 for r >= p_F/2.
    pub fn chi_radial(&self, r: f64) -> f64 {
        let b = 0.5 * self.p_f;
        let a = b / self.gamma;
        if r <= a {
            1.0
        } else if r >= b {
            0.0
        } else {
            smooth_step((b - r) / (b - a))
        }
    }

    pub fn chi(&self, kp: f64, k0: f64) -> f64 {
        self.chi_radial(self.radius(kp, k0))
    }

    /// f_h at the given momentum.
    pub fn slice(&self, h: i32, kp: f64, k0: f64) -> f64 {
        let r = self.radius(kp, k0);
        self.chi_radial(self.gamma.powi(-h) * r) - self.chi_radial(self.gamma.powi(-h + 1) * r)
    }

    pub fn weight(&self, w: Weight, kp: f64, k0: f64) -> f64 {
        match w {
            Weight::Below(h) => self.chi_radial(self.gamma.powi(-h) * self.radius(kp, k0)),
            Weight::Slice(h) => self.slice(h, kp, k0),
        }
    }

    /// Radius beyond which the weight vanishes.
    pub fn support_radius(&self, w: Weight) -> f64 {
        let h = match w {
            Weight::Below(h) | Weight::Slice(h) => h,
        };
        self.gamma.powi(h) * 0.5 * self.p_f
    }

    /// Outer support radius p_F/2 of chi.
    pub fn outer_radius(&self) -> f64 {
        0.5 * self.p_f
    }
}

/// chi at (k', k0).
pub fn cutoff_chi(cut: &CutoffSpec, kp: f64, k0: f64) -> f64 {
    cut.chi(kp, k0)
}

/// f_h at (k', k0).
pub fn scale_slice(cut: &CutoffSpec, h: i32, kp: f64, k0: f64) -> f64 {
    cut.slice(h, kp, k0)
}

/// Infrared scale bounds of a finite problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleLadder {
    pub h_beta: i32,
    pub h_l: i32,
    pub scales: Vec<i32>,
}

impl ScaleLadder {
    /// Ladder from max(h_beta, h_L) up to 0.
    pub fn new(spec: &LatticeSpec) -> Self {
        let g = spec.gamma;
        let h_beta = ((PI / spec.beta).ln() / g.ln()).floor() as i32;
        let h_l = ((1.0 / (spec.l as f64 + 1.0)).ln() / g.ln()).floor() as i32;
        let lo = h_beta.max(h_l);
        ScaleLadder { h_beta, h_l, scales: (lo..=0).collect() }
    }

    pub fn h_min(&self) -> i32 {
        *self.scales.first().unwrap_or(&0)
    }
}

/// Frequencies k0 = (2n+1) pi / beta within radius kmax, as (n, k0), limited to the 2M grid.
pub fn frequency_support(spec: &LatticeSpec, kmax: f64) -> Vec<(i64, f64)> {
    let m = spec.m as i64;
    let nmax = ((kmax * spec.beta / PI - 1.0) / 2.0).floor() as i64;
    let hi = nmax.min(m - 1);
    (-(hi + 1)..=hi)
        .filter(|&n| n >= -m)
        .map(|n| (n, (2 * n + 1) as f64 * PI / spec.beta))
        .filter(|&(_, k0)| k0.abs() <= kmax)
        .collect()
}

/// Quasi-particle ring momenta: reduced n' with k' = n' pi/(L+1), |k'| <= kmax / v0.
fn quasi_support(spec: &LatticeSpec, cut: &CutoffSpec, kmax: f64) -> Vec<i64> {
    let den = spec.l as i64 + 1;
    let lim = kmax / cut.v0;
    (-den + 1..=den).filter(|&n| (n as f64 * PI / den as f64).abs() <= lim).collect()
}

/// Amplitudes F(n', n0) = w(k', k0) / (-i k0 + e(k' + omega p_F)) over the support.
pub fn quasi_amplitudes(spec: &LatticeSpec, cut: &CutoffSpec, w: Weight, omega: i8) -> Vec<(i64, f64, Complex64)> {
    let kmax = cut.support_radius(w);
    let den = spec.l as i64 + 1;
    let freqs = frequency_support(spec, kmax);
    let mut out = Vec::new();
    for n in quasi_support(spec, cut, kmax) {
        let kp = n as f64 * PI / den as f64;
        let e = spec.dispersion(kp + omega as f64 * spec.p_f);
        for &(_, k0) in &freqs {
            let wt = cut.weight(w, kp, k0);
            if wt != 0.0 {
                out.push((n, k0, wt / Complex64::new(e, -k0)));
            }
        }
    }
    out
}

/// Ring sum g_{omega}(dx, dt) = (1/(beta 2(L+1))) sum_{k'} e^{-i k' dx - i k0 dt} F(k', k0).
pub fn quasi_ring_value(spec: &LatticeSpec, cut: &CutoffSpec, w: Weight, omega: i8, dx: i64, dt: f64) -> Complex64 {
    let den = spec.l as i64 + 1;
    let n_ring = 2 * den;
    let mut acc = Complex64::new(0.0, 0.0);
    for (n, k0, amp) in quasi_amplitudes(spec, cut, w, omega) {
        let ph = ((n * dx).rem_euclid(2 * n_ring)) as f64 * PI / den as f64 + k0 * dt;
        acc += Complex64::from_polar(1.0, -ph) * amp;
    }
    acc / (spec.beta * n_ring as f64)
}

/// Both-omega weight on the unshifted momentum: w(k - p_F) + w(k + p_F).
pub fn full_weight(spec: &LatticeSpec, cut: &CutoffSpec, w: Weight, k: f64, k0: f64) -> f64 {
    let a = crate::propagator::wrap_angle(k - spec.p_f);
    let b = crate::propagator::wrap_angle(k + spec.p_f);
    cut.weight(w, a, k0) + cut.weight(w, b, k0)
}

/// Ring sum with the both-omega weight on unshifted momenta (the g_2 of the reflection split).
pub fn full_ring_value(spec: &LatticeSpec, cut: &CutoffSpec, w: Weight, d: i64, dt: f64) -> Complex64 {
    let den = spec.l as i64 + 1;
    let n_ring = 2 * den;
    let freqs = frequency_support(spec, cut.support_radius(w));
    let mut acc = Complex64::new(0.0, 0.0);
    for n in -den..den {
        let k = n as f64 * PI / den as f64;
        let e = spec.dispersion(k);
        let ph = ((n * d).rem_euclid(2 * n_ring)) as f64 * PI / den as f64;
        for &(_, k0) in &freqs {
            let wt = full_weight(spec, cut, w, k, k0);
            if wt != 0.0 {
                acc += Complex64::from_polar(1.0, -ph - k0 * dt) * wt / Complex64::new(e, -k0);
            }
        }
    }
    acc / (spec.beta * n_ring as f64)
}

/// Dirichlet sine sum with the both-omega weight.
pub fn dirichlet_value(spec: &LatticeSpec, cut: &CutoffSpec, w: Weight, x: i64, y: i64, dt: f64) -> Complex64 {
    let den = spec.l as f64 + 1.0;
    let freqs = frequency_support(spec, cut.support_radius(w));
    let mut acc = Complex64::new(0.0, 0.0);
    for n in 1..=spec.l {
        let k = n as f64 * PI / den;
        let e = spec.dispersion(k);
        let s = (k * x as f64).sin() * (k * y as f64).sin();
        for &(_, k0) in &freqs {
            let wt = full_weight(spec, cut, w, k, k0);
            if wt != 0.0 {
                acc += s * wt * Complex64::from_polar(1.0, -k0 * dt) / Complex64::new(e, -k0);
            }
        }
    }
    acc * 2.0 / (spec.beta * den)
}

/// Single-scale value g^{(h)}_{sigma, omega}(x, y; dt): P depends on x - y, R is -P at x + y.
pub fn single_scale_value(spec: &LatticeSpec, cut: &CutoffSpec, h: i32, sigma: Sigma, omega: i8, x: i64, y: i64, dt: f64) -> Complex64 {
    match sigma {
        Sigma::P => quasi_ring_value(spec, cut, Weight::Slice(h), omega, x - y, dt),
        Sigma::R => -quasi_ring_value(spec, cut, Weight::Slice(h), omega, x + y, dt),
    }
}

/// Single-scale kernel over sites 1..L.
pub fn single_scale_propagator(
    spec: &LatticeSpec,
    cut: &CutoffSpec,
    h: i32,
    sigma: Sigma,
    omega: i8,
    grid: TimeGrid,
) -> SpaceTimeKernel {
    let amps = quasi_amplitudes(spec, cut, Weight::Slice(h), omega);
    let den = spec.l as i64 + 1;
    let n_ring = 2 * den;
    let norm = 1.0 / (spec.beta * n_ring as f64);
    let ring = move |d: i64, dt: f64| -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for &(n, k0, amp) in &amps {
            let ph = ((n * d).rem_euclid(2 * n_ring)) as f64 * PI / den as f64 + k0 * dt;
            acc += Complex64::from_polar(1.0, -ph) * amp;
        }
        acc * norm
    };
    let sites: Vec<i64> = (1..=spec.l as i64).collect();
    let comp = Component::Quasi(sigma, omega);
    SpaceTimeKernel::from_fn(spec, sites, grid, Scale::Single(h), comp, |x, y, dt| match sigma {
        Sigma::P => ring(x - y, dt),
        Sigma::R => -ring(x + y, dt),
    })
}

/// Spatial displacement used for decay envelopes of a kernel entry.
fn displacement(component: Component, x: i64, y: i64) -> i64 {
    match component {
        Component::R | Component::Quasi(Sigma::R, _) => x + y,
        _ => x - y,
    }
}

/// Distance on the ring of n sites.
pub fn ring_distance(d: i64, n: i64) -> i64 {
    let r = d.rem_euclid(n);
    r.min(n - r)
}

/// Antiperiodic time distance min(|t|, beta - |t|).
pub fn time_distance(t: f64, beta: f64) -> f64 {
    let a = t.abs().rem_euclid(beta);
    a.min(beta - a)
}

/// Space-time distance sqrt(t^2 + (x/v0)^2).
pub fn spacetime_distance(dx: i64, t: f64, spec: &LatticeSpec) -> f64 {
    let xd = ring_distance(dx, spec.ring() as i64) as f64 / spec.v0();
    let td = time_distance(t, spec.beta);
    (td * td + xd * xd).sqrt()
}

/// Sup norm and normalized L1 norm (1/(2(L+1) beta)) sum_{x,y} int dt ds |g| of a sampled kernel.
pub fn kernel_norms(kernel: &SpaceTimeKernel) -> (f64, f64) {
    let n = kernel.sites.len();
    let nt = kernel.grid.n_t;
    let dt = kernel.grid.beta / nt as f64;
    let mut sup: f64 = 0.0;
    let mut sum = 0.0;
    for ix in 0..n {
        for iy in 0..n {
            for j in 0..nt {
                for i in 0..nt {
                    let a = kernel.get(ix, j, iy, i).norm();
                    sup = sup.max(a);
                    sum += a;
                }
            }
        }
    }
    let l1 = sum * dt * dt / (kernel.spec.ring() as f64 * kernel.spec.beta);
    (sup, l1)
}

/// Envelope constant for |g^{(h)}(x)| <= gamma^h C_N / (1 + (gamma^h |x|)^N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayCertificate {
    pub h: i32,
    pub n: u32,
    pub c_n_est: f64,
    pub max_violation: f64,
}

fn envelope_factor(gh: f64, dist: f64, n: u32) -> f64 {
    (1.0 + (gh * dist).powi(n as i32)) / gh
}

/// Smallest envelope constant over all samples of a single-scale kernel.
pub fn decay_certificate(kernel: &SpaceTimeKernel, h: i32, n: u32) -> DecayCertificate {
    let spec = &kernel.spec;
    let gh = spec.gamma.powi(h);
    let nt = kernel.grid.n_t;
    let mut samples = Vec::new();
    for (ix, &x) in kernel.sites.iter().enumerate() {
        for (iy, &y) in kernel.sites.iter().enumerate() {
            let d = displacement(kernel.component, x, y);
            for j in 0..nt {
                let t = kernel.grid.diff(j, 0);
                samples.push((kernel.get(ix, j, iy, 0).norm(), spacetime_distance(d, t, spec)));
            }
        }
    }
    let c = samples.iter().map(|&(a, r)| a * envelope_factor(gh, r, n)).fold(0.0, f64::max);
    let viol = samples.iter().map(|&(a, r)| a - c / envelope_factor(gh, r, n)).fold(f64::NEG_INFINITY, f64::max);
    DecayCertificate { h, n, c_n_est: c, max_violation: viol }
}

/// Distance-weight rho_h^{(N)}(x) = 1/(1 + gamma^h d_L(x))^N with d_L(x) = min(|x|, |x - L|).
pub fn rho_weight(spec: &LatticeSpec, h: i32, n: u32, x: i64) -> f64 {
    let d = x.abs().min((x - spec.l as i64).abs()) as f64;
    1.0 / (1.0 + spec.gamma.powi(h) * d).powi(n as i32)
}

/// Per-scale summary over the full ring and time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub h: i32,
    pub n_t: usize,
    pub sup: f64,
    pub l1_p: f64,
    pub l1_r: f64,
    /// C_N for N = 1..4.
    pub c_n: [f64; 4],
}

/// Time-grid size resolving the frequency support of scale h.
pub fn time_points_for(spec: &LatticeSpec, kmax: f64) -> usize {
    let n = (spec.beta * kmax / PI).ceil().max(1.0) as usize;
    (16 * n).next_power_of_two().max(64)
}

/// Streams g^{(h)}_{P, omega}(dx, t_j) for all ring displacements and time samples,
/// calling `visit(dx, samples)` once per displacement (in parallel).
pub fn stream_single_scale<T: Send>(
    spec: &LatticeSpec,
    cut: &CutoffSpec,
    w: Weight,
    omega: i8,
    n_t: usize,
    visit: impl Fn(i64, &[Complex64]) -> T + Sync,
) -> Vec<T> {
    let den = spec.l as i64 + 1;
    let n_ring = (2 * den) as usize;
    let kmax = cut.support_radius(w);
    let freqs = frequency_support(spec, kmax);
    let kps = quasi_support(spec, cut, kmax);
    let mut planner = FftPlanner::<f64>::new();
    let fft_x = planner.plan_fft_forward(n_ring);
    let fft_t = planner.plan_fft_forward(n_t);
    // table[f][dx] = sum_{k'} e^{-i k' dx} F(k', k0_f)
    let table: Vec<Vec<Complex64>> = freqs
        .par_iter()
        .map(|&(_, k0)| {
            let mut buf = vec![Complex64::new(0.0, 0.0); n_ring];
            for &n in &kps {
                let kp = n as f64 * PI / den as f64;
                let wt = cut.weight(w, kp, k0);
                if wt != 0.0 {
                    let e = spec.dispersion(kp + omega as f64 * spec.p_f);
                    buf[n.rem_euclid(n_ring as i64) as usize] += wt / Complex64::new(e, -k0);
                }
            }
            fft_x.process(&mut buf);
            buf
        })
        .collect();
    let norm = 1.0 / (spec.beta * n_ring as f64);
    let twiddle: Vec<Complex64> = (0..n_t).map(|j| Complex64::from_polar(norm, -PI * j as f64 / n_t as f64)).collect();
    (0..n_ring)
        .into_par_iter()
        .map(|dx| {
            let mut buf = vec![Complex64::new(0.0, 0.0); n_t];
            for (f, &(n0, _)) in freqs.iter().enumerate() {
                buf[n0.rem_euclid(n_t as i64) as usize] += table[f][dx];
            }
            fft_t.process(&mut buf);
            for (v, tw) in buf.iter_mut().zip(&twiddle) {
                *v *= tw;
            }
            visit(dx as i64, &buf)
        })
        .collect()
}

/// Pair multiplicity of x - y = d (mod ring) over x, y in 1..L.
pub fn pair_count_difference(l: i64, d: i64) -> i64 {
    let n = 2 * (l + 1);
    let r = d.rem_euclid(n);
    if r <= l - 1 {
        l - r
    } else if r >= n - (l - 1) {
        l - (n - r)
    } else {
        0
    }
}

/// Pair multiplicity of x + y = s over x, y in 1..L.
pub fn pair_count_sum(l: i64, s: i64) -> i64 {
    if (2..=2 * l).contains(&s) {
        (s - 1).min(2 * l + 1 - s)
    } else {
        0
    }
}

/// Sup norm, L1 norms of the P and R components and decay constants C_1..C_4 at scale h.
pub fn scale_statistics(spec: &LatticeSpec, cut: &CutoffSpec, h: i32, omega: i8) -> ScaleStats {
    let w = Weight::Slice(h);
    let n_t = time_points_for(spec, cut.support_radius(w));
    let gh = spec.gamma.powi(h);
    let l = spec.l as i64;
    let dt = spec.beta / n_t as f64;
    let parts = stream_single_scale(spec, cut, w, omega, n_t, |dx, g| {
        let mut sup: f64 = 0.0;
        let mut c = [0.0f64; 4];
        let mut integral = 0.0;
        for (j, v) in g.iter().enumerate() {
            let a = v.norm();
            sup = sup.max(a);
            integral += a * dt;
            let r = spacetime_distance(dx, j as f64 * dt, spec);
            for (n, cn) in c.iter_mut().enumerate() {
                *cn = cn.max(a * envelope_factor(gh, r, n as u32 + 1));
            }
        }
        let lp = pair_count_difference(l, dx) as f64 * integral;
        let lr = pair_count_sum(l, dx) as f64 * integral;
        (sup, lp, lr, c)
    });
    let n_ring = spec.ring() as f64;
    let mut out = ScaleStats { h, n_t, sup: 0.0, l1_p: 0.0, l1_r: 0.0, c_n: [0.0; 4] };
    for (sup, lp, lr, c) in parts {
        out.sup = out.sup.max(sup);
        out.l1_p += lp / n_ring;
        out.l1_r += lr / n_ring;
        for n in 0..4 {
            out.c_n[n] = out.c_n[n].max(c[n]);
        }
    }
    out
}

/// Scale statistics over a window of h with their log_gamma fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormScaling {
    pub stats: Vec<ScaleStats>,
    pub h_l: i32,
    pub sup_slope: f64,
    pub l1_p_slope: f64,
    /// max_h L1(g_R) / (L1(g_P) gamma^{h_L - h}).
    pub r_constant: f64,
    /// max_h C_N / min_h C_N for N = 1..4.
    pub c_n_spread: [f64; 4],
}

/// Runs `scale_statistics` (omega = +1) for every h in [h_lo, h_hi] and fits the slopes.
pub fn norm_scaling(spec: &LatticeSpec, h_lo: i32, h_hi: i32) -> NormScaling {
    let ladder = ScaleLadder::new(spec);
    let cut = CutoffSpec::new(spec, ladder.h_min());
    let stats: Vec<ScaleStats> = (h_lo..=h_hi).map(|h| scale_statistics(spec, &cut, h, 1)).collect();
    let g = spec.gamma;
    let hs: Vec<f64> = stats.iter().map(|s| s.h as f64).collect();
    let fit = |f: &dyn Fn(&ScaleStats) -> f64| {
        crate::numerics::linear_fit(&hs, &stats.iter().map(|s| f(s).ln() / g.ln()).collect::<Vec<_>>()).slope
    };
    let r_constant = stats
        .iter()
        .map(|s| s.l1_r / (s.l1_p * g.powi(ladder.h_l - s.h)))
        .fold(0.0, f64::max);
    let mut c_n_spread = [0.0; 4];
    for (n, spread) in c_n_spread.iter_mut().enumerate() {
        let hi = stats.iter().map(|s| s.c_n[n]).fold(0.0, f64::max);
        let lo = stats.iter().map(|s| s.c_n[n]).fold(f64::INFINITY, f64::min);
        *spread = hi / lo;
    }
    NormScaling { h_l: ladder.h_l, sup_slope: fit(&|s| s.sup), l1_p_slope: fit(&|s| s.l1_p), r_constant, c_n_spread, stats }
}

/// Writes the per-scale report: h, norm_kind, value, fitted_slope, C_N.
pub fn write_scale_report<W: Write>(mut w: W, stats: &[ScaleStats], gamma: f64) -> std::io::Result<()> {
    let hs: Vec<f64> = stats.iter().map(|s| s.h as f64).collect();
    let lg = |v: f64| v.ln() / gamma.ln();
    let slope = |f: &dyn Fn(&ScaleStats) -> f64| crate::numerics::linear_fit(&hs, &stats.iter().map(|s| lg(f(s))).collect::<Vec<_>>()).slope;
    let s_sup = slope(&|s| s.sup);
    let s_p = slope(&|s| s.l1_p);
    let s_r = slope(&|s| s.l1_r);
    writeln!(w, "h,norm_kind,value,fitted_slope,C_N")?;
    for s in stats {
        writeln!(w, "{},sup,{:.12e},{:.6},", s.h, s.sup, s_sup)?;
        writeln!(w, "{},l1_P,{:.12e},{:.6},", s.h, s.l1_p, s_p)?;
        writeln!(w, "{},l1_R,{:.12e},{:.6},", s.h, s.l1_r, s_r)?;
        for (i, c) in s.c_n.iter().enumerate() {
            writeln!(w, "{},decay_N{},{:.12e},,{:.6e}", s.h, i + 1, c, c)?;
        }
    }
    Ok(())
}

/// Explicit vector families whose inner products reproduce a covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GramVectors {
    pub a: Vec<Vec<Complex64>>,
    pub b: Vec<Vec<Complex64>>,
}

/// Which single-scale covariance the Gram vectors realize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GramVariant {
    /// g^{(h)}_{P, omega}(x - y) on the extended ring.
    Ring(i8),
    /// Dirichlet sine sum with both Fermi points.
    Dirichlet,
    /// Remainder g_R^{(h)}(x, y) = g^d(x, y) - g_2(x - y) = -g_2(x + y).
    Remainder,
}

/// Conjugate-linear inner product sum_k conj(a_k) b_k.
pub fn gram_inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn vector_norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Gram vectors at space-time points (x_i, t_i): <A_i, B_j> equals the chosen g^{(h)} at (i, j).
pub fn gram_vectors(spec: &LatticeSpec, cut: &CutoffSpec, h: i32, variant: GramVariant, points: &[(i64, f64)]) -> GramVectors {
    let w = Weight::Slice(h);
    let den = spec.l as i64 + 1;
    let n_ring = 2 * den;
    let freqs = frequency_support(spec, cut.support_radius(w));
    // Plane-wave modes: (n, k0, weight, e) over the ring.
    let ring_modes = |shift: Option<i8>| -> Vec<(i64, f64, f64, f64)> {
        let mut out = Vec::new();
        for n in -den + 1..=den {
            let k = n as f64 * PI / den as f64;
            for &(_, k0) in &freqs {
                let (wt, e) = match shift {
                    Some(om) => (cut.weight(w, k, k0), spec.dispersion(k + om as f64 * spec.p_f)),
                    None => (full_weight(spec, cut, w, k, k0), spec.dispersion(k)),
                };
                if wt != 0.0 {
                    out.push((n, k0, wt, e));
                }
            }
        }
        out
    };
    let plane = |modes: &[(i64, f64, f64, f64)]| -> GramVectors {
        let c = 1.0 / (spec.beta * n_ring as f64).sqrt();
        let mut a = Vec::with_capacity(points.len());
        let mut b = Vec::with_capacity(points.len());
        for &(x, t) in points {
            let mut av = Vec::with_capacity(modes.len());
            let mut bv = Vec::with_capacity(modes.len());
            for &(n, k0, wt, e) in modes {
                let ph = ((n * x).rem_euclid(2 * n_ring)) as f64 * PI / den as f64 + k0 * t;
                let s = wt.sqrt();
                let den2 = k0 * k0 + e * e;
                // conj(a) carries e^{-i k x} sqrt(f)/(k0^2+e^2); b carries e^{+i k y} sqrt(f)(i k0 + e).
                av.push(Complex64::from_polar(c * s / den2, ph));
                bv.push(Complex64::from_polar(c * s, ph) * Complex64::new(e, k0));
            }
            a.push(av);
            b.push(bv);
        }
        GramVectors { a, b }
    };
    let dirichlet = || -> GramVectors {
        let c = (2.0 / (spec.beta * den as f64)).sqrt();
        let mut modes = Vec::new();
        for n in 1..den {
            let k = n as f64 * PI / den as f64;
            for &(_, k0) in &freqs {
                let wt = full_weight(spec, cut, w, k, k0);
                if wt != 0.0 {
                    modes.push((k, k0, wt, spec.dispersion(k)));
                }
            }
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        for &(x, t) in points {
            let mut av = Vec::new();
            let mut bv = Vec::new();
            for &(k, k0, wt, e) in &modes {
                let s = wt.sqrt() * (k * x as f64).sin() * c;
                av.push(Complex64::from_polar(s / (k0 * k0 + e * e), k0 * t));
                bv.push(Complex64::from_polar(s, k0 * t) * Complex64::new(e, k0));
            }
            a.push(av);
            b.push(bv);
        }
        GramVectors { a, b }
    };
    match variant {
        GramVariant::Ring(om) => plane(&ring_modes(Some(om))),
        GramVariant::Dirichlet => dirichlet(),
        GramVariant::Remainder => {
            let d = dirichlet();
            let r = plane(&ring_modes(None));
            let i = Complex64::new(0.0, 1.0);
            let a = d.a.into_iter().zip(r.a).map(|(mut x, y)| {
                x.extend(y.into_iter().map(|z| z * i));
                x
            });
            let b = d.b.into_iter().zip(r.b).map(|(mut x, y)| {
                x.extend(y.into_iter().map(|z| -z * i));
                x
            });
            GramVectors { a: a.collect(), b: b.collect() }
        }
    }
}

/// Direct evaluation of the covariance realized by `gram_vectors`, for comparison.
pub fn gram_reference(spec: &LatticeSpec, cut: &CutoffSpec, h: i32, variant: GramVariant, p: (i64, f64), q: (i64, f64)) -> Complex64 {
    let w = Weight::Slice(h);
    let dt = p.1 - q.1;
    match variant {
        GramVariant::Ring(om) => quasi_ring_value(spec, cut, w, om, p.0 - q.0, dt),
        GramVariant::Dirichlet => dirichlet_value(spec, cut, w, p.0, q.0, dt),
        GramVariant::Remainder => -full_ring_value(spec, cut, w, p.0 + q.0, dt),
    }
}

/// Momentum on the quasi-particle grid for bookkeeping.
pub fn quasi_momentum(spec: &LatticeSpec, n: i64, omega: i8) -> Momentum {
    lattice::reduce(Momentum { n: n - omega as i64 * spec.n_f, den: spec.l as i64 + 1 })
}
