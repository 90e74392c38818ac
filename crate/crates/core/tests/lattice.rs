use fermirg::lattice::{
    build_grids, dirichlet_hopping, dispersion, fix_fermi, matsubara, nearest_grid_index, one_body_hamiltonian, reduce,
    sine_basis, Momentum,
};
use fermirg::{Boundary, Error, Filling, LatticeSpec};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use std::f64::consts::PI;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn three_site_dirichlet_grid() {
    let spec = LatticeSpec::dirichlet(3, 8.0, 4, PI / 2.0).unwrap();
    let g = build_grids(&spec);
    let ks = g.dirichlet.space_momenta();
    let want = [PI / 4.0, PI / 2.0, 3.0 * PI / 4.0];
    assert_eq!(ks.len(), 3);
    for (k, w) in ks.iter().zip(want) {
        assert!(close(*k, w, 1e-15));
    }
    assert_eq!(g.extended.space.len(), 8);
    assert_eq!(g.extended.matsubara.len(), 8);
}

#[test]
fn single_frequency_pair() {
    let f = matsubara(2.0 * PI, 1);
    assert_eq!(f.len(), 2);
    assert!(close(f[0], -0.5, 1e-15) && close(f[1], 0.5, 1e-15));
}

#[test]
fn fermi_snapping() {
    let (mu, p) = fix_fermi(7, PI / 2.0);
    assert!(close(mu, 1.0, 1e-15) && close(p, PI / 2.0, 1e-15));
    let (mu, p) = fix_fermi(3, 0.7);
    assert!(close(p, PI / 4.0, 1e-15));
    assert!(close(mu, 1.0 - (PI / 4.0).cos(), 1e-15));
    // Equidistant target between pi/4 and pi/2 on L = 3 resolves to the smaller index.
    assert_eq!(nearest_grid_index(3, 3.0 * PI / 8.0), 1);
}

#[test]
fn two_site_spectrum() {
    let mu = 0.8;
    let h = dirichlet_hopping(2, mu);
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    assert!(close(ev[0], 0.5 - mu, 1e-14));
    assert!(close(ev[1], 1.5 - mu, 1e-14));
}

#[test]
fn zero_sites_is_rejected_with_named_precondition() {
    let err = LatticeSpec::new(0, 1.0, 4, Filling::Mu(1.0), Boundary::Dirichlet).unwrap_err();
    match err {
        Error::InvalidConfig(msg) => assert!(msg.contains("L must be a positive integer"), "{msg}"),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn band_edge_filling_is_rejected() {
    assert!(LatticeSpec::new(8, 1.0, 4, Filling::Mu(0.01), Boundary::Dirichlet).is_err());
    assert!(LatticeSpec::new(8, 1.0, 4, Filling::Mu(1.99), Boundary::Dirichlet).is_err());
    assert!(LatticeSpec::new(8, 1.0, 4, Filling::Mu(1.0), Boundary::Dirichlet).is_ok());
}

#[test]
fn invalid_scale_parameters_are_rejected() {
    let spec = LatticeSpec::dirichlet(8, 4.0, 16, PI / 3.0).unwrap();
    assert!(spec.with_gamma(1.0).is_err());
    assert!(spec.with_kappa(1.0).is_err());
    assert!(LatticeSpec::dirichlet(8, 0.0, 16, PI / 3.0).is_err());
    assert!(LatticeSpec::dirichlet(8, 4.0, 0, PI / 3.0).is_err());
}

#[test]
fn periodic_ring_rederives_mu() {
    let spec = LatticeSpec::new(7, 4.0, 8, Filling::Mu(0.9), Boundary::Dirichlet).unwrap();
    let ring = spec.with_bc(Boundary::PeriodicExtended).unwrap();
    assert!(close(ring.dispersion(ring.p_f), 0.0, 1e-15));
    assert_eq!(ring.ring(), 16);
    assert!(one_body_hamiltonian(&ring).is_err());
}

#[test]
fn quasi_shift_moves_fermi_point_to_origin() {
    let spec = LatticeSpec::dirichlet(11, 4.0, 8, PI / 3.0).unwrap();
    let g = build_grids(&spec);
    assert!(g.quasi_plus.space.iter().any(|m| m.n == 0));
    for m in g.quasi_plus.space.iter().chain(&g.quasi_minus.space) {
        assert!(m.n > -m.den && m.n <= m.den);
    }
    let r = reduce(Momentum { n: 13, den: 6 });
    assert_eq!(r, Momentum { n: 1, den: 6 });
}

#[test]
fn regulator_scale() {
    let spec = LatticeSpec::dirichlet(8, 16.0, 64, PI / 3.0).unwrap();
    assert!(close(spec.delta_m(), 2.0, 1e-15));
    assert!(close(spec.v0(), (spec.p_f).sin(), 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sine_basis_is_orthonormal(l in 1usize..=64) {
        let s = sine_basis(l);
        let g = s.transpose() * &s;
        for i in 0..l {
            for j in 0..l {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_sizes(l in 1usize..=256, m in 1usize..=1024) {
        let spec = LatticeSpec::new(l, 3.0, m, Filling::Mu(1.0), Boundary::Dirichlet).unwrap();
        let g = build_grids(&spec);
        prop_assert_eq!(g.dirichlet.space.len(), l);
        prop_assert_eq!(g.extended.space.len(), 2 * l + 2);
        prop_assert_eq!(g.dirichlet.matsubara.len(), 2 * m);
        let ks = g.dirichlet.space_momenta();
        prop_assert!(ks.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ks.iter().all(|&k| k > 0.0 && k < PI));
    }

    #[test]
    fn hopping_spectrum_is_the_dispersion(l in 1usize..=40, mu in 0.2f64..1.8) {
        let h = dirichlet_hopping(l, mu);
        let mut ev: Vec<f64> = SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let mut want: Vec<f64> = (1..=l).map(|n| dispersion(n as f64 * PI / (l as f64 + 1.0), mu)).collect();
        want.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // The sine basis diagonalizes the hopping matrix.
        let s = sine_basis(l);
        let d = s.transpose() * h * &s;
        for i in 0..l {
            for j in 0..l {
                if i != j {
                    prop_assert!(d[(i, j)].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn snapped_fermi_point_is_on_shell(l in 2usize..=200, target in 0.3f64..2.8) {
        let (mu, p) = fix_fermi(l, target);
        prop_assert!(dispersion(p, mu).abs() < 1e-15);
        prop_assert!((p - target).abs() <= PI / (2.0 * (l as f64 + 1.0)) + 1e-12);
    }
}
