use fermirg::lattice::dispersion;
use fermirg::oracle::{
    build_many_body, default_vhat, dirichlet_potential, evaluate, exact_free_energy, fock_log_trace, free_correlation,
    free_energy_free, free_ground_energy_density, free_log_partition, full_matrix, ground_energy, max_row_sum,
    normalize_pi, number_operator, spectrum, ManyBodyProblem, MAX_SITES,
};
use fermirg::{Boundary, Error, Filling, LatticeSpec};
use nalgebra::DMatrix;
use std::f64::consts::PI;

fn mu_spec(l: usize, beta: f64, mu: f64) -> LatticeSpec {
    LatticeSpec::new(l, beta, 16, Filling::Mu(mu), Boundary::Dirichlet).unwrap()
}

/// Thermal average of the particle number from the sector spectra.
fn mean_number(p: &ManyBodyProblem) -> f64 {
    let mut z = 0.0;
    let mut n = 0.0;
    let e0 = ground_energy(p).unwrap();
    for s in build_many_body(p).unwrap() {
        for e in s.h.clone().symmetric_eigenvalues().iter() {
            let w = (-p.beta * (e - e0)).exp();
            z += w;
            n += s.n as f64 * w;
        }
    }
    n / z
}

#[test]
fn single_site_partition() {
    let beta = 3.0;
    let s = mu_spec(1, beta, 0.7);
    let z: f64 = 1.0 + (-beta * 0.3f64).exp();
    assert!((free_log_partition(&s) - z.ln()).abs() < 1e-15);
    let f = exact_free_energy(&ManyBodyProblem::free(&s)).unwrap();
    assert!((f + z.ln() / beta).abs() < 1e-14);
}

#[test]
fn fock_trace_equals_product_formula() {
    let s = mu_spec(8, 4.0, 1.0);
    let p = ManyBodyProblem::free(&s);
    let a = fock_log_trace(&p).unwrap();
    let b = free_log_partition(&s);
    assert!((a - b).abs() < 1e-10 * b.abs());
    assert!((exact_free_energy(&p).unwrap() - free_energy_free(&s)).abs() < 1e-12);
}

#[test]
fn free_spectrum_is_subset_sums() {
    let l = 5;
    let mu = 0.9;
    let s = mu_spec(l, 2.0, mu);
    let modes: Vec<f64> = (1..=l).map(|n| dispersion(n as f64 * PI / (l as f64 + 1.0), mu)).collect();
    let mut want: Vec<f64> = (0u32..1 << l)
        .map(|m| (0..l).filter(|i| m >> i & 1 == 1).map(|i| modes[i]).sum())
        .collect();
    want.sort_by(f64::total_cmp);
    let got = spectrum(&ManyBodyProblem::free(&s)).unwrap();
    assert_eq!(got.len(), want.len());
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
    let e0 = ground_energy(&ManyBodyProblem::free(&s)).unwrap();
    assert!((e0 - free_ground_energy_density(&s) * l as f64).abs() < 1e-12);
}

#[test]
fn hamiltonian_conserves_particle_number() {
    let s = mu_spec(4, 2.0, 1.0);
    let v = dirichlet_potential(4, default_vhat);
    let pi = normalize_pi(&DMatrix::from_fn(4, 4, |i, j| if i == j && (i == 0 || i == 3) { 1.0 } else { 0.0 })).0;
    let p = ManyBodyProblem::free(&s).with_interaction(0.3, v).with_nu(0.1).with_varpi(0.05, pi);
    let h = full_matrix(&build_many_body(&p).unwrap(), 4);
    let n = number_operator(4);
    assert!((&h * &n - &n * &h).amax() < 1e-14);
    assert!((&h - h.transpose()).amax() < 1e-14);
}

#[test]
fn two_site_filled_sector() {
    let mu = 0.8;
    let lambda = 0.25;
    let s = mu_spec(2, 2.0, mu);
    let v = dirichlet_potential(2, default_vhat);
    let p = ManyBodyProblem::free(&s).with_interaction(lambda, v.clone());
    let sectors = build_many_body(&p).unwrap();
    let full = sectors.iter().find(|s| s.n == 2).unwrap();
    let want = 2.0 * (1.0 - mu) + lambda * v.sum();
    assert!((full.h[(0, 0)] - want).abs() < 1e-14);
    assert!((v[(0, 1)] - 0.5).abs() < 1e-14 && v[(0, 0)].abs() < 1e-14);
}

#[test]
fn number_derivative_matches_mean_occupation() {
    let s = mu_spec(5, 3.0, 1.0);
    let v = dirichlet_potential(5, default_vhat);
    let base = ManyBodyProblem::free(&s).with_interaction(0.2, v);
    let h = 1e-5;
    let fp = exact_free_energy(&base.clone().with_nu(h)).unwrap();
    let fm = exact_free_energy(&base.clone().with_nu(-h)).unwrap();
    let deriv = (fp - fm) / (2.0 * h);
    let want = mean_number(&base) / 5.0;
    assert!((deriv - want).abs() < 1e-8, "{deriv} vs {want}");
}

#[test]
fn free_correlation_matches_exact_density() {
    let s = mu_spec(6, 2.5, 1.1);
    let p = ManyBodyProblem::free(&s);
    let rho = free_correlation(&p.one_body(), s.beta);
    assert!((rho.trace() - mean_number(&p)).abs() < 1e-12);
}

#[test]
fn constant_transform_gives_contact_potential() {
    let v = dirichlet_potential(7, |_| 0.4);
    for i in 0..7 {
        for j in 0..7 {
            let want = if i == j { 0.4 } else { 0.0 };
            assert!((v[(i, j)] - want).abs() < 1e-14);
        }
    }
}

#[test]
fn boundary_kernel_normalization() {
    let m = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 0.5]);
    let (pi, strength) = normalize_pi(&m);
    assert!((strength - 3.0).abs() < 1e-15);
    assert!((max_row_sum(&pi) - 1.0).abs() < 1e-15);
    let s = mu_spec(2, 1.0, 1.0);
    let bad = ManyBodyProblem::free(&s).with_varpi(0.1, m);
    assert!(matches!(build_many_body(&bad), Err(Error::InvalidConfig(_))));
    let asym = ManyBodyProblem::free(&s).with_varpi(0.1, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
    assert!(build_many_body(&asym).is_err());
}

#[test]
fn oversized_chains_are_rejected() {
    let s = mu_spec(MAX_SITES + 1, 1.0, 1.0);
    match ground_energy(&ManyBodyProblem::free(&s)) {
        Err(Error::DimensionTooLarge { l, max }) => assert_eq!((l, max), (MAX_SITES + 1, MAX_SITES)),
        other => panic!("unexpected {other:?}"),
    }
    let s = mu_spec(12, 1.0, 1.0);
    assert!(matches!(exact_free_energy(&ManyBodyProblem::free(&s)), Err(Error::DimensionTooLarge { .. })));
}

#[test]
fn frozen_interacting_record() {
    let s = mu_spec(6, 32.0, 1.0);
    let p = ManyBodyProblem::free(&s).with_interaction(0.1, dirichlet_potential(6, default_vhat));
    let r = evaluate(&p).unwrap();
    assert_eq!(r.l, 6);
    assert!((r.f - FROZEN_F).abs() < 1e-12, "{:.17e}", r.f);
    assert!((r.e0 - FROZEN_E0).abs() < 1e-12, "{:.17e}", r.e0);
    // Zero temperature reduces to the ground energy per site.
    let g = exact_free_energy(&p.clone().with_beta(f64::INFINITY)).unwrap();
    assert!((g - r.e0 / 6.0).abs() < 1e-14);
}

#[test]
fn hellmann_feynman_at_zero_coupling() {
    let s = mu_spec(6, 1.0, 1.0);
    let v = dirichlet_potential(6, default_vhat);
    let free = ManyBodyProblem::free(&s);
    // The free ground state is non-degenerate: no Dirichlet mode sits at k = pi/2 on L = 6.
    let eig = full_matrix(&build_many_body(&free).unwrap(), 6).symmetric_eigen();
    let i0 = eig.eigenvalues.imin();
    let gs = eig.eigenvectors.column(i0);
    let mut want = 0.0;
    for st in 0..1usize << 6 {
        let occ: Vec<usize> = (0..6).filter(|x| st >> x & 1 == 1).collect();
        let vv: f64 = occ.iter().flat_map(|&x| occ.iter().map(move |&y| (x, y))).map(|(x, y)| v[(x, y)]).sum();
        want += gs[st] * gs[st] * vv;
    }
    let h = 1e-5;
    let e = |lam: f64| ground_energy(&free.clone().with_interaction(lam, v.clone())).unwrap();
    let deriv = (e(h) - e(-h)) / (2.0 * h);
    assert!((deriv - want).abs() < 1e-6, "{deriv} vs {want}");
}

#[test]
fn boundary_term_derivative_is_free_correlation() {
    let l = 6;
    let s = mu_spec(l, 3.0, 0.9);
    let raw = DMatrix::from_fn(l, l, |i, j| {
        let d = |x: usize| x.min(l - 1 - x) as f64;
        1.0 / ((1.0 + d(i)) * (1.0 + d(j)) * (1.0 + (i as f64 - j as f64).abs()))
    });
    let pi = normalize_pi(&raw).0;
    let free = ManyBodyProblem::free(&s);
    let rho = free_correlation(&free.one_body(), s.beta);
    let want = pi.component_mul(&rho).sum() / l as f64;
    let h = 1e-5;
    let f = |w: f64| exact_free_energy(&free.clone().with_varpi(w, pi.clone())).unwrap();
    let deriv = (f(h) - f(-h)) / (2.0 * h);
    assert!((deriv - want).abs() < 1e-8, "{deriv} vs {want}");
}

#[test]
fn half_filling_spectrum_is_particle_hole_symmetric() {
    let s = mu_spec(7, 1.0, 1.0);
    let spec = spectrum(&ManyBodyProblem::free(&s)).unwrap();
    let n = spec.len();
    for i in 0..n {
        assert!((spec[i] + spec[n - 1 - i]).abs() < 1e-12);
    }
}

const FROZEN_F: f64 = -2.81572011294338009e-1;
const FROZEN_E0: f64 = -1.68932135315939758e0;
