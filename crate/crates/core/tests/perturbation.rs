use fermirg::lattice::{dirichlet_hopping, dispersion};
use fermirg::oracle::{default_vhat, dirichlet_potential, exact_free_energy, normalize_pi, ManyBodyProblem};
use fermirg::perturbation::{
    boundary_scaling, bulk_boundary_split, dirichlet_density, ed_comparison, f_inf_closed_form, f_inf_estimate,
    first_order_free_energy, free_boundary_scaling, max_off_diagonal, nonlocal_tadpole_kernel, periodic_density,
    periodic_potential, periodic_tadpole_kernel, plane_wave_modulus, second_order_free_energy, sine_transform,
    Quadrature, ScalingTemplate, MAX_SITES_SECOND_ORDER,
};
use fermirg::propagator::fermi_occupation;
use fermirg::Error;
use nalgebra::DMatrix;
use std::f64::consts::PI;

fn problem(l: usize, beta: f64, mu: f64) -> ManyBodyProblem {
    ManyBodyProblem {
        l,
        hopping: dirichlet_hopping(l, mu),
        lambda: 0.0,
        v: dirichlet_potential(l, default_vhat),
        nu: 0.0,
        varpi: 0.0,
        pi: DMatrix::zeros(l, l),
        beta,
    }
}

fn boundary_pi(l: usize) -> DMatrix<f64> {
    normalize_pi(&DMatrix::from_fn(l, l, |i, j| if i == j && (i == 0 || i == l - 1) { 1.0 } else { 0.0 })).0
}

fn f_exact(p: &ManyBodyProblem) -> f64 {
    exact_free_energy(p).unwrap()
}

#[test]
fn first_order_matches_exact_derivative() {
    let base = problem(6, 64.0, 1.0);
    let h = 1e-4;
    let up = ManyBodyProblem { lambda: h, ..base.clone() };
    let dn = ManyBodyProblem { lambda: -h, ..base.clone() };
    let deriv = (f_exact(&up) - f_exact(&dn)) / (2.0 * h);
    let f1 = first_order_free_energy(&ManyBodyProblem { lambda: 1.0, ..base }).total;
    assert!((deriv - f1).abs() < 1e-4, "{deriv} vs {f1}");
}

#[test]
fn counterterm_first_order_terms() {
    let base = ManyBodyProblem { pi: boundary_pi(6), ..problem(6, 8.0, 0.9) };
    let h = 1e-5;
    let d_nu = (f_exact(&ManyBodyProblem { nu: h, ..base.clone() }) - f_exact(&ManyBodyProblem { nu: -h, ..base.clone() })) / (2.0 * h);
    let d_w = (f_exact(&ManyBodyProblem { varpi: h, ..base.clone() }) - f_exact(&ManyBodyProblem { varpi: -h, ..base.clone() })) / (2.0 * h);
    let fo = first_order_free_energy(&ManyBodyProblem { nu: 1.0, varpi: 1.0, ..base });
    assert!((d_nu - fo.nu_part).abs() < 1e-8);
    assert!((d_w - fo.varpi_part).abs() < 1e-8);
    assert!((fo.total - fo.nu_part - fo.varpi_part - fo.lambda_part).abs() < 1e-15);
}

#[test]
fn nu_squared_matches_closed_form() {
    let (l, beta, mu) = (7usize, 5.0, 0.8);
    let nu = 0.01;
    let p = ManyBodyProblem { nu, ..problem(l, beta, mu) };
    let so = second_order_free_energy(&p, Quadrature::Exact).unwrap();
    // d^2 f / d nu^2 = -(beta / L) sum_k n_k (1 - n_k).
    let curv: f64 = (1..=l)
        .map(|j| {
            let n = fermi_occupation(dispersion(j as f64 * PI / (l as f64 + 1.0), mu), beta);
            n * (1.0 - n)
        })
        .sum::<f64>()
        * (-beta / l as f64);
    assert!((so.nu_nu - 0.5 * curv * nu * nu).abs() < 1e-14);
    assert_eq!(so.lambda_lambda, 0.0);
}

#[test]
fn second_order_matches_exact_curvature() {
    let base = problem(6, 8.0, 1.0);
    let h = 2e-3;
    let f0 = f_exact(&base);
    let fp = f_exact(&ManyBodyProblem { lambda: h, ..base.clone() });
    let fm = f_exact(&ManyBodyProblem { lambda: -h, ..base.clone() });
    let curv = (fp + fm - 2.0 * f0) / (2.0 * h * h);
    let f2 = second_order_free_energy(&ManyBodyProblem { lambda: 1.0, ..base }, Quadrature::Exact).unwrap().lambda_lambda;
    assert!((curv - f2).abs() < 1e-4 * (1.0 + f2.abs()), "{curv} vs {f2}");
}

#[test]
fn mixed_second_order_matches_exact() {
    let base = ManyBodyProblem { pi: boundary_pi(5), ..problem(5, 6.0, 1.0) };
    let h = 1e-3;
    let f = |a: f64, b: f64| f_exact(&ManyBodyProblem { lambda: a, varpi: b, ..base.clone() });
    let mixed = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
    let so = second_order_free_energy(&ManyBodyProblem { lambda: 1.0, varpi: 1.0, ..base }, Quadrature::Exact).unwrap();
    assert!((mixed - so.lambda_varpi).abs() < 1e-5, "{mixed} vs {}", so.lambda_varpi);
}

#[test]
fn trapezoid_agrees_with_closed_form() {
    let p = ManyBodyProblem { lambda: 0.3, nu: 0.1, ..problem(5, 4.0, 1.0) };
    let exact = second_order_free_energy(&p, Quadrature::Exact).unwrap().total;
    let trap = second_order_free_energy(&p, Quadrature::Trapezoid { n_t: 512 }).unwrap().total;
    assert!((exact - trap).abs() < 1e-5);
    assert!(matches!(
        second_order_free_energy(&p, Quadrature::Trapezoid { n_t: 2 }),
        Err(Error::QuadratureUnderResolved { .. })
    ));
}

#[test]
fn second_order_preconditions() {
    let big = problem(MAX_SITES_SECOND_ORDER + 1, 4.0, 1.0);
    assert!(matches!(second_order_free_energy(&big, Quadrature::Exact), Err(Error::DimensionTooLarge { .. })));
    let cold = problem(4, f64::INFINITY, 1.0);
    assert!(matches!(second_order_free_energy(&cold, Quadrature::Exact), Err(Error::InvalidConfig(_))));
}

#[test]
fn perturbative_residual_is_cubic() {
    let lambdas: Vec<f64> = (0..9).map(|i| 10f64.powf(-3.0 + 2.0 * i as f64 / 8.0)).collect();
    let c = ed_comparison(6, 32.0, 1.0, &lambdas).unwrap();
    assert!((c.slope - 3.0).abs() <= 0.2, "slope {}", c.slope);
    assert!(ed_comparison(6, 32.0, 1.0, &[0.1]).is_err());
}

#[test]
fn dirichlet_tadpole_is_not_diagonal() {
    let (l, beta) = (16usize, 16.0);
    let mu = 1.0 - (6.0 * PI / 17.0).cos();
    let w = nonlocal_tadpole_kernel(l, mu, beta, &dirichlet_potential(l, default_vhat), 0.1);
    assert!(max_off_diagonal(&sine_transform(&w.w2)) > 1e-8);
    let n = 18;
    let wp = periodic_tadpole_kernel(n, mu, beta, &periodic_potential(n, default_vhat), 0.1);
    assert!(max_off_diagonal(&plane_wave_modulus(&wp.w2)) < 1e-10);
}

#[test]
fn bulk_boundary_split_recomposes() {
    let (l, beta, mu) = (12usize, 10.0, 0.8);
    let k = nonlocal_tadpole_kernel(l, mu, beta, &dirichlet_potential(l, default_vhat), 0.2);
    let s = bulk_boundary_split(&k, mu, beta, default_vhat);
    let split = s.split.as_ref().unwrap();
    assert!((&split.w_d + split.remainder() - &k.w2).amax() < 1e-14);
    assert!((&split.w_diff - &split.w_reflected - &split.w_d).amax() < 1e-15);
    // W^d is diagonal in the sine basis.
    assert!(max_off_diagonal(&sine_transform(&split.w_d)) < 1e-10);
    assert_eq!(split.w_bar.len(), 2 * (l + 1));
    assert!(split.remainder().amax() > 0.0);
}

#[test]
fn densities_have_physical_traces() {
    let rho = dirichlet_density(8, 1.0, f64::INFINITY);
    // mu = 1 fills the four modes with k < pi/2 on L = 8.
    assert!((rho.trace() - 4.0).abs() < 1e-12);
    let rho = periodic_density(10, 1.0, 40.0);
    assert!((rho.trace() - 5.0).abs() < 1e-6);
    assert!((&rho - rho.transpose()).amax() < 1e-15);
}

#[test]
fn free_boundary_energy_decays_like_inverse_length() {
    let ls = [32usize, 64, 128, 256, 512];
    let s = free_boundary_scaling(1.0, &ls);
    assert!((s.slope + 1.0).abs() < 0.15, "{}", s.slope);
    // Closed form of the bulk integral at mu = 1: -1/pi.
    assert!((s.f_inf + 1.0 / PI).abs() < 1e-15);
}

#[test]
fn bulk_first_order_matches_closed_form() {
    let est = |mu: f64| f_inf_estimate(&ScalingTemplate { mu, beta: f64::INFINITY, lambda: 0.7, order: 1 }).unwrap();
    // Commensurate filling: the periodic boxes carry no Fermi-sea discreteness error.
    assert!((est(1.0) - f_inf_closed_form(1.0, 0.7)).abs() < 1e-12);
    // Generic filling keeps an O(1/L) discreteness error at zero temperature.
    for mu in [0.5, 0.8, 1.3] {
        assert!((est(mu) - f_inf_closed_form(mu, 0.7)).abs() < 5e-4, "mu = {mu}");
    }
    // Half filling: lambda (1/4 - 1/pi^2).
    assert!((f_inf_closed_form(1.0, 1.0) - (0.25 - 1.0 / (PI * PI))).abs() < 1e-15);
}

#[test]
fn interacting_boundary_scaling() {
    let t = ScalingTemplate { mu: 1.0, beta: f64::INFINITY, lambda: 1.0, order: 1 };
    let s = boundary_scaling(&t, &[32, 64, 128, 256, 512]).unwrap();
    assert!((-1.15..=-0.80).contains(&s.slope), "{}", s.slope);
    assert!(boundary_scaling(&t, &[32, 64]).is_err());
    let bad = ScalingTemplate { order: 3, ..t };
    assert!(boundary_scaling(&bad, &[32, 64, 128, 256, 512]).is_err());
}
