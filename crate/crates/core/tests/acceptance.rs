//! Acceptance harness: one PASS/FAIL line per criterion, tolerances pinned below.

use fermirg::cli::scan_summary;
use fermirg::grassmann;
use fermirg::numerics::linear_fit;
use fermirg::multiscale::{gram_inner, gram_reference, gram_vectors, norm_scaling, vector_norm, CutoffSpec, GramVariant, ScaleLadder};
use fermirg::oracle::{default_vhat, dirichlet_potential, fock_log_trace, free_log_partition, ManyBodyProblem};
use fermirg::perturbation::{
    boundary_scaling, ed_comparison, max_off_diagonal, nonlocal_tadpole_kernel, periodic_potential, periodic_tadpole_kernel,
    plane_wave_modulus, sine_transform, ScalingTemplate,
};
use fermirg::powercount::summability_scan;
use fermirg::propagator::{reflection_residual_equal_time, Evaluation};
use fermirg::rgflow::{
    flow_diagnostics, gain_lemma_check, solve_flow, time_integrated_modulus, FlowSetup, SolverConfig, WeightFunction, WeightKind,
};
use fermirg::{Boundary, Filling, LatticeSpec};
use std::f64::consts::PI;
use std::time::Instant;

const REFLECTION_TOL: f64 = 1e-10;
const REFLECTION_SECONDS: f64 = 10.0;
const SLOPE_TOL: f64 = 0.15;
const R_CONSTANT_MAX: f64 = 10.0;
const C_N_SPREAD_MAX: f64 = 2.0;
const WICK_TOL: f64 = 1e-12;
const CUMULANT_TOL: f64 = 1e-10;
const GRASSMANN_SAMPLES: usize = 1000;
const GRAM_TOL: f64 = 1e-10;
const GRAM_SPREAD_MAX: f64 = 10.0;
const FOCK_TOL: f64 = 1e-12;
const ED_SLOPE: f64 = 3.0;
const ED_SLOPE_TOL: f64 = 0.2;
const ED_SECONDS: f64 = 300.0;
const OFF_DIAGONAL_MIN: f64 = 1e-8;
const PERIODIC_DIAGONAL_TOL: f64 = 1e-10;
const BOUNDARY_EXPONENT: (f64, f64) = (-1.15, -0.80);
const NU_MAX_ITERATIONS: usize = 50;
const NU_CONTRACTION_MAX: f64 = 0.5;
const GAIN_GROWTH_MAX: f64 = 0.25;
const POWERCOUNT_SLOPE_TOL: f64 = 0.1;
const TAIL_SPREAD_MAX: f64 = 2.0;

struct Tally {
    passed: usize,
    total: usize,
}

impl Tally {
    fn report(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        self.total += 1;
        self.passed += pass as usize;
        println!("{} C{id:02} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn dirichlet(l: usize, beta: f64, m: usize) -> LatticeSpec {
    LatticeSpec::dirichlet(l, beta, m, PI / 3.0).unwrap()
}

fn mu_spec(l: usize, beta: f64, mu: f64) -> LatticeSpec {
    LatticeSpec::new(l, beta, 16, Filling::Mu(mu), Boundary::Dirichlet).unwrap()
}

fn c01_reflection(t: &mut Tally) {
    let start = Instant::now();
    let r = reflection_residual_equal_time(&dirichlet(16, 8.0, 4096), Evaluation::Matsubara);
    let secs = start.elapsed().as_secs_f64();
    t.report(1, "reflection identity", r < REFLECTION_TOL && secs < REFLECTION_SECONDS, format!("residual {r:.3e} (< {REFLECTION_TOL:e}), {secs:.2} s (< {REFLECTION_SECONDS} s)"));
}

fn c02_c03_norms(t: &mut Tally) {
    let s = LatticeSpec::dirichlet(4095, 8192.0, 1 << 20, PI / 3.0).unwrap().with_gamma(2f64.sqrt()).unwrap();
    let ns = norm_scaling(&s, -8, -2);
    let pass = (ns.sup_slope - 1.0).abs() <= SLOPE_TOL && (ns.l1_p_slope + 1.0).abs() <= SLOPE_TOL && ns.r_constant < R_CONSTANT_MAX;
    t.report(
        2,
        "norm scalings",
        pass,
        format!(
            "sup slope {:.4} (1 +- {SLOPE_TOL}), L1_P slope {:.4} (-1 +- {SLOPE_TOL}), L1_R constant {:.3} (< {R_CONSTANT_MAX})",
            ns.sup_slope, ns.l1_p_slope, ns.r_constant
        ),
    );
    let pass = ns.c_n_spread.iter().all(|s| s.is_finite() && *s < C_N_SPREAD_MAX);
    t.report(3, "decay certificates", pass, format!("C_N spreads {:.3?} (< {C_N_SPREAD_MAX})", ns.c_n_spread));
}

fn c04_grassmann(t: &mut Tally) {
    let r = grassmann::self_test(GRASSMANN_SAMPLES, 1).unwrap();
    let pass = r.wick_berezin_max < WICK_TOL && r.cumulant_max < CUMULANT_TOL && r.gram_violations == 0 && r.gram_checked >= GRASSMANN_SAMPLES;
    t.report(
        4,
        "grassmann exactness",
        pass,
        format!(
            "wick {:.2e} (< {WICK_TOL:e}), cumulant {:.2e} (< {CUMULANT_TOL:e}), gram violations {}/{}",
            r.wick_berezin_max, r.cumulant_max, r.gram_violations, r.gram_checked
        ),
    );
}

fn c05_gram(t: &mut Tally) {
    let s = LatticeSpec::dirichlet(64, 64.0, 4096, PI / 3.0).unwrap();
    let ladder = ScaleLadder::new(&s);
    let cut = CutoffSpec::new(&s, ladder.h_min());
    let pts: Vec<(i64, f64)> = vec![(1, 0.0), (5, 3.3), (17, 20.1), (40, 50.0), (64, 63.0), (32, 0.5)];
    let mut err: f64 = 0.0;
    let mut bounds = Vec::new();
    for h in ladder.h_min()..=0 {
        for v in [GramVariant::Ring(1), GramVariant::Ring(-1), GramVariant::Dirichlet, GramVariant::Remainder] {
            let g = gram_vectors(&s, &cut, h, v, &pts);
            let mut scale: f64 = 0.0;
            for (i, &p) in pts.iter().enumerate() {
                for (j, &q) in pts.iter().enumerate() {
                    let want = gram_reference(&s, &cut, h, v, p, q);
                    scale = scale.max(want.norm());
                    err = err.max((gram_inner(&g.a[i], &g.b[j]) - want).norm());
                }
            }
            // Scales without modes carry nothing to bound.
            if v == GramVariant::Remainder && scale > 0.0 {
                let prod = (0..pts.len()).map(|i| vector_norm(&g.a[i]) * vector_norm(&g.b[i])).fold(0.0, f64::max);
                bounds.push(prod / s.gamma.powi(h));
            }
        }
    }
    let c = bounds.iter().cloned().fold(0.0, f64::max);
    let lo = bounds.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = err < GRAM_TOL && !bounds.is_empty() && c.is_finite() && c / lo < GRAM_SPREAD_MAX;
    t.report(
        5,
        "gram representation",
        pass,
        format!("reconstruction {err:.2e} (< {GRAM_TOL:e}), |A_R||B_R|/gamma^h in [{lo:.3}, {c:.3}] over {} scales (spread < {GRAM_SPREAD_MAX})", bounds.len()),
    );
}

fn c06_oracle(t: &mut Tally) {
    let start = Instant::now();
    let mut fock: f64 = 0.0;
    for l in 1..=8 {
        let s = mu_spec(l, 32.0, 1.0);
        let trace = fock_log_trace(&ManyBodyProblem::free(&s)).unwrap();
        fock = fock.max((trace - free_log_partition(&s)).abs() / (1.0 + trace.abs()));
    }
    let lambdas: Vec<f64> = (0..9).map(|i| 10f64.powf(-3.0 + 2.0 * i as f64 / 8.0)).collect();
    let cmp = ed_comparison(6, 32.0, 1.0, &lambdas).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = fock < FOCK_TOL && (cmp.slope - ED_SLOPE).abs() <= ED_SLOPE_TOL && secs < ED_SECONDS;
    t.report(
        6,
        "oracle consistency",
        pass,
        format!("fock vs product {fock:.2e} (< {FOCK_TOL:e}), PT-vs-ED slope {:.4} ({ED_SLOPE} +- {ED_SLOPE_TOL}), {secs:.1} s", cmp.slope),
    );
}

fn c07_non_diagonality(t: &mut Tally) {
    let (l, beta) = (16usize, 16.0);
    let mu = 1.0 - (6.0 * PI / 17.0).cos();
    let w = nonlocal_tadpole_kernel(l, mu, beta, &dirichlet_potential(l, default_vhat), 0.1);
    let off = max_off_diagonal(&sine_transform(&w.w2));
    let wp = periodic_tadpole_kernel(18, mu, beta, &periodic_potential(18, default_vhat), 0.1);
    let per = max_off_diagonal(&plane_wave_modulus(&wp.w2));
    t.report(
        7,
        "non-diagonality",
        off > OFF_DIAGONAL_MIN && per < PERIODIC_DIAGONAL_TOL,
        format!("dirichlet off-diagonal {off:.3e} (> {OFF_DIAGONAL_MIN:e}), periodic {per:.2e} (< {PERIODIC_DIAGONAL_TOL:e})"),
    );
}

fn c08_boundary(t: &mut Tally) {
    let tpl = ScalingTemplate { mu: 1.0, beta: f64::INFINITY, lambda: 1.0, order: 1 };
    let s = boundary_scaling(&tpl, &[32, 64, 128, 256, 512]).unwrap();
    let (lo, hi) = BOUNDARY_EXPONENT;
    t.report(8, "boundary scaling", (lo..=hi).contains(&s.slope), format!("exponent {:.4} (in [{lo}, {hi}])", s.slope));
}

fn c09_c10_flow(t: &mut Tally) {
    let lambda = 0.05;
    let (theta, theta_bar) = (0.5, 0.5);
    let setup = FlowSetup::new(&dirichlet(128, 256.0, 4096), default_vhat);
    let solver = SolverConfig { theta, ..Default::default() };
    let flow = match solve_flow(&setup, lambda, theta_bar, 1.0, &solver) {
        Ok(f) => f,
        Err(e) => {
            t.report(9, "nu fixed point", false, format!("{e}"));
            t.report(10, "varpi fixed point", false, format!("{e}"));
            return;
        }
    };
    let d = flow_diagnostics(&setup, &flow, lambda, theta, theta_bar);
    let g = setup.spec.gamma;
    let bounded = flow
        .nu
        .trajectory
        .records
        .iter()
        .all(|r| r.nu.abs() <= d.nu_c * lambda * g.powf(theta * r.h as f64 / 2.0) * (1.0 + 1e-12));
    let pass = d.nu_iterations < NU_MAX_ITERATIONS && d.nu_max_ratio < NU_CONTRACTION_MAX && d.nu_c.is_finite() && bounded;
    t.report(
        9,
        "nu fixed point",
        pass,
        format!(
            "{} iterations (< {NU_MAX_ITERATIONS}), contraction {:.3e} (< {NU_CONTRACTION_MAX}), fitted c {:.4e}",
            d.nu_iterations, d.nu_max_ratio, d.nu_c
        ),
    );
    let pass = d.varpi_max_norm <= d.ball_radius && d.varpi_max_ratio < 1.0 && d.pi_profile_constant.is_finite();
    t.report(
        10,
        "varpi fixed point",
        pass,
        format!(
            "max norm {:.4e} (<= ball {:.2e}, fitted C {:.3}), difference ratio {:.3e} (< 1), pi profile C {:.4}",
            d.varpi_max_norm, d.ball_radius, d.varpi_c, d.varpi_max_ratio, d.pi_profile_constant
        ),
    );
}

fn c11_gain(t: &mut Tally) {
    let s = LatticeSpec::dirichlet(255, 512.0, 1 << 14, PI / 3.0).unwrap();
    let cut = CutoffSpec::new(&s, ScaleLadder::new(&s).h_min());
    let xs = [1i64, s.l as i64 / 4 + 1, s.l as i64 / 2 + 1];
    let hs = [-1, 0];
    let gaps = 1..=5;
    let moduli: Vec<(i32, Vec<f64>)> = (-6..=-1).map(|hb| (hb, time_integrated_modulus(&s, &cut, hb))).collect();
    let modulus = |hb: i32| &moduli.iter().find(|(h, _)| *h == hb).unwrap().1;
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [WeightKind::Rho { n: 2 }, WeightKind::Varpi { theta: 0.5 }] {
        let per_gap: Vec<f64> = gaps
            .clone()
            .map(|gap| {
                hs.iter()
                    .map(|&h| {
                        let w = WeightFunction { kind, h, c: 1.0 };
                        gain_lemma_check(&s, modulus(h - gap), &w, h - gap, &xs, f64::INFINITY).max_ratio
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        // One C_theta covers every gap; a missing gain would make the per-gap maxima grow
        // like gamma^{alpha gap}.
        let c = per_gap.iter().cloned().fold(0.0, f64::max);
        let xs: Vec<f64> = gaps.clone().map(f64::from).collect();
        let ys: Vec<f64> = per_gap.iter().map(|r| r.ln() / s.gamma.ln()).collect();
        let growth = linear_fit(&xs, &ys).slope;
        pass &= c.is_finite() && growth <= GAIN_GROWTH_MAX;
        parts.push(format!("{kind:?} C {c:.2}, growth {growth:.3} (<= {GAIN_GROWTH_MAX}), per-gap max {per_gap:.2?}"));
    }
    t.report(11, "gain lemma", pass, parts.join("; "));
}

fn c12_powercount(t: &mut Tally) {
    let (gamma, theta) = (2.0, 0.5);
    let rows = summability_scan(1, 2, theta, gamma, 12).unwrap();
    let s = scan_summary(&rows, gamma, theta);
    let pass = (s.naive_log_slope - 1.0).abs() <= POWERCOUNT_SLOPE_TOL && s.tail_spread.is_finite() && s.tail_spread < TAIL_SPREAD_MAX;
    t.report(
        12,
        "power counting",
        pass,
        format!(
            "naive log slope {:.4} (1 +- {POWERCOUNT_SLOPE_TOL}), renormalized sum {:.4}, tail constant spread {:.3} (< {TAIL_SPREAD_MAX})",
            s.naive_log_slope,
            rows.last().unwrap().renormalized_sum,
            s.tail_spread
        ),
    );
}

fn main() {
    let mut t = Tally { passed: 0, total: 0 };
    c01_reflection(&mut t);
    c02_c03_norms(&mut t);
    c04_grassmann(&mut t);
    c05_gram(&mut t);
    c06_oracle(&mut t);
    c07_non_diagonality(&mut t);
    c08_boundary(&mut t);
    c09_c10_flow(&mut t);
    c11_gain(&mut t);
    c12_powercount(&mut t);
    println!("acceptance: {}/{} criteria pass", t.passed, t.total);
}
