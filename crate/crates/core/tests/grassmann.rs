use fermirg::grassmann::{
    addition_principle_check, berezin_expectation, determinant, gaussian_expectation, gen_id, gram_hadamard_check,
    quadratic_form, rational, self_test, standard_measure, truncated_expectation, truncated_expectation_log_series,
    Charge, Covariance, GrassmannPoly,
};
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;

type Poly = GrassmannPoly<Complex64>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn minus(i: usize) -> usize {
    gen_id(i, Charge::Minus)
}

fn plus(i: usize) -> usize {
    gen_id(i, Charge::Plus)
}

/// Leibniz determinant over all permutations; independent of the elimination routine.
fn leibniz(m: &[Vec<Complex64>]) -> Complex64 {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }
    let n = m.len();
    let mut acc = Complex64::zero();
    for p in perms(n) {
        let mut inv = 0;
        for i in 0..n {
            for j in i + 1..n {
                if p[i] > p[j] {
                    inv += 1;
                }
            }
        }
        let mut term = if inv % 2 == 0 { c(1.0) } else { c(-1.0) };
        for (i, &pi) in p.iter().enumerate() {
            term *= m[i][pi];
        }
        acc += term;
    }
    acc
}

fn sample_cov() -> Covariance<Complex64> {
    Covariance::new(vec![
        vec![c(1.0), Complex64::new(0.3, 0.1), c(-0.2)],
        vec![c(0.25), Complex64::new(0.9, -0.2), c(0.4)],
        vec![c(-0.1), c(0.5), c(1.3)],
    ])
}

#[test]
fn generators_anticommute_and_square_to_zero() {
    let a = Poly::generator(6, 0, Charge::Minus);
    let b = Poly::generator(6, 2, Charge::Plus);
    assert!(a.mul(&b).add(&b.mul(&a)).is_zero());
    assert!(a.mul(&a).is_zero());
    assert!(b.mul(&b).is_zero());
}

#[test]
fn berezin_normalization() {
    let p = Poly::product_of(2, &[minus(0), plus(0)], c(1.0));
    let v = p.berezin_integrate(&standard_measure(1)).scalar_part();
    assert!((v - c(1.0)).norm() < 1e-15);
    assert!(Poly::one(2).berezin_integrate(&standard_measure(1)).scalar_part().norm() < 1e-15);
}

#[test]
fn gaussian_integral_is_determinant() {
    let m = vec![
        vec![c(2.0), c(0.5), Complex64::new(0.0, 0.3)],
        vec![c(-0.4), c(1.5), c(0.2)],
        vec![c(0.1), c(0.7), c(3.0)],
    ];
    let v = quadratic_form(&m).exp().berezin_integrate(&standard_measure(3)).scalar_part();
    let want = leibniz(&m);
    assert!((v - want).norm() < 1e-12, "{v} vs {want}");
    assert!((determinant(&m) - want).norm() < 1e-12);
}

#[test]
fn two_point_and_four_point_wick() {
    let cov = sample_cov();
    for a in 0..3 {
        for b in 0..3 {
            let p = Poly::product_of(6, &[minus(a), plus(b)], c(1.0));
            assert!((gaussian_expectation(&cov, &p) - cov.matrix[a][b]).norm() < 1e-14);
        }
    }
    let p = Poly::product_of(6, &[minus(0), plus(1), minus(2), plus(0)], c(1.0));
    let m = &cov.matrix;
    let want = m[0][1] * m[2][0] - m[0][0] * m[2][1];
    assert!((gaussian_expectation(&cov, &p) - want).norm() < 1e-14);
    let b = berezin_expectation(&cov, &p).unwrap();
    assert!((b - want).norm() < 1e-12);
}

#[test]
fn odd_monomials_vanish() {
    let cov = sample_cov();
    let p = Poly::product_of(6, &[minus(0), plus(1), minus(2)], c(1.0));
    assert_eq!(gaussian_expectation(&cov, &p), Complex64::zero());
}

#[test]
fn low_order_cumulants() {
    let cov = sample_cov();
    let x1 = Poly::product_of(6, &[minus(0), plus(1)], c(1.0));
    let x2 = Poly::product_of(6, &[minus(2), plus(0)], c(0.5));
    let e1 = gaussian_expectation(&cov, &x1);
    assert!((truncated_expectation(&cov, &[x1.clone()]) - e1).norm() < 1e-15);
    let e2 = gaussian_expectation(&cov, &x2);
    let e12 = gaussian_expectation(&cov, &x1.mul(&x2));
    let t = truncated_expectation(&cov, &[x1, x2]);
    assert!((t - (e12 - e1 * e2)).norm() < 1e-14);
}

#[test]
fn disconnected_blocks_have_zero_cumulant() {
    let z = c(0.0);
    let cov = Covariance::new(vec![
        vec![c(1.0), c(0.4), z, z],
        vec![c(0.2), c(0.8), z, z],
        vec![z, z, c(1.1), c(-0.3)],
        vec![z, z, c(0.6), c(0.9)],
    ]);
    let x1 = Poly::product_of(8, &[minus(0), plus(1)], c(1.0)).add(&Poly::product_of(8, &[minus(1), plus(0)], c(0.7)));
    let x2 = Poly::product_of(8, &[minus(2), plus(3)], c(1.0)).add(&Poly::product_of(8, &[minus(3), plus(2)], c(-0.2)));
    assert!(truncated_expectation(&cov, &[x1.clone(), x2.clone()]).norm() < 1e-15);
    assert!(truncated_expectation(&cov, &[x1.clone(), x2.clone(), x1]).norm() < 1e-14);
}

fn rmat(entries: &[[i64; 3]; 3], q: i64) -> Vec<Vec<BigRational>> {
    entries.iter().map(|r| r.iter().map(|&p| rational(p, q)).collect()).collect()
}

#[test]
fn third_cumulant_matches_exact_rational_log_series() {
    let cov_r = Covariance::new(rmat(&[[4, 1, -1], [2, 3, 1], [0, -2, 5]], 4));
    let cov_c = Covariance::new(
        cov_r.matrix.iter().map(|r| r.iter().map(|v| c(num_traits::ToPrimitive::to_f64(v).unwrap())).collect()).collect(),
    );
    let pairs = [(0usize, 1usize), (1, 2), (2, 0)];
    let xs_r: Vec<GrassmannPoly<BigRational>> = pairs
        .iter()
        .map(|&(a, b)| {
            GrassmannPoly::product_of(6, &[minus(a), plus(b)], BigRational::one())
                .add(&GrassmannPoly::product_of(6, &[minus(b), plus(b)], rational(1, 3)))
        })
        .collect();
    let xs_c: Vec<Poly> = pairs
        .iter()
        .map(|&(a, b)| Poly::product_of(6, &[minus(a), plus(b)], c(1.0)).add(&Poly::product_of(6, &[minus(b), plus(b)], c(1.0 / 3.0))))
        .collect();
    let exact = truncated_expectation_log_series(&cov_r, &xs_r);
    assert_eq!(exact, truncated_expectation(&cov_r, &xs_r));
    let approx = truncated_expectation(&cov_c, &xs_c);
    let exact_f = num_traits::ToPrimitive::to_f64(&exact).unwrap();
    assert!((approx - c(exact_f)).norm() < 1e-13, "{approx} vs {exact_f}");
}

#[test]
fn rational_berezin_route_is_exact() {
    let cov = Covariance::new(rmat(&[[3, 1, 0], [1, 2, -1], [0, 1, 4]], 3));
    let p = GrassmannPoly::product_of(6, &[minus(0), plus(2), minus(1), plus(0)], BigRational::one());
    assert_eq!(gaussian_expectation(&cov, &p), berezin_expectation(&cov, &p).unwrap());
    let m = &cov.matrix;
    let want = m[0][2].clone() * m[1][0].clone() - m[0][0].clone() * m[1][2].clone();
    assert_eq!(gaussian_expectation(&cov, &p), want);
}

#[test]
fn gram_hadamard_homogeneity() {
    let a = vec![vec![c(1.0), c(0.5)], vec![Complex64::new(0.2, 0.3), c(-0.7)], vec![c(0.0), c(1.2)]];
    let b = vec![vec![c(0.4), c(1.0)], vec![c(1.1), Complex64::new(0.0, -0.5)], vec![c(-0.3), c(0.8)]];
    let base = gram_hadamard_check(&Covariance::from_gram(a.clone(), b.clone()), &[0, 1], &[1, 2]).unwrap();
    assert!(base.ok);
    let s = 3.5;
    let scaled: Vec<Vec<Complex64>> = b.iter().map(|v| v.iter().map(|z| z * s).collect()).collect();
    let sc = gram_hadamard_check(&Covariance::from_gram(a, scaled), &[0, 1], &[1, 2]).unwrap();
    assert!(sc.ok);
    assert!((sc.lhs - s * s * base.lhs).abs() < 1e-12 * (1.0 + sc.lhs));
    assert!((sc.rhs - s * s * base.rhs).abs() < 1e-12 * (1.0 + sc.rhs));
}

#[test]
fn gram_without_factorization_is_rejected() {
    assert!(gram_hadamard_check(&sample_cov(), &[0], &[0]).is_err());
}

#[test]
fn addition_principle_quadratic_and_quartic() {
    let cov1 = sample_cov();
    let cov2 = Covariance::new(vec![
        vec![c(0.5), c(0.1), c(0.0)],
        vec![c(0.0), c(0.3), c(0.2)],
        vec![c(0.1), c(0.0), c(0.6)],
    ]);
    let quad = Poly::product_of(6, &[minus(0), plus(1)], c(1.0)).add(&Poly::product_of(6, &[minus(2), plus(2)], c(2.0)));
    let quart = quad.mul(&Poly::product_of(6, &[minus(1), plus(0)], c(-0.5)));
    for f in [quad, quart] {
        let r = addition_principle_check(&cov1, &cov2, &f, 1e-12);
        assert!(r.ok, "{:?} vs {:?}", r.lhs, r.rhs);
    }
    let zero = Covariance::new(vec![vec![c(0.0); 3]; 3]);
    let f = Poly::product_of(6, &[minus(0), plus(2), minus(1), plus(1)], c(1.0));
    let r = addition_principle_check(&cov1, &zero, &f, 1e-12);
    assert!(r.ok);
    assert!((r.rhs - gaussian_expectation(&cov1, &f)).norm() < 1e-14);
}

#[test]
fn self_test_is_clean_and_reproducible() {
    let a = self_test(200, 7).unwrap();
    let b = self_test(200, 7).unwrap();
    assert_eq!(a, b);
    assert!(a.wick_berezin_max < 1e-12);
    assert!(a.cumulant_max < 1e-12);
    assert_eq!(a.gram_violations, 0);
    assert!(a.gram_worst_ratio <= 1.0 + 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn product_is_antisymmetric_on_generators(i in 0usize..8, j in 0usize..8) {
        let a = Poly::product_of(8, &[i], c(1.0));
        let b = Poly::product_of(8, &[j], c(1.0));
        prop_assert!(a.mul(&b).add(&b.mul(&a)).is_zero());
    }

    #[test]
    fn wick_equals_berezin(ids in proptest::sample::subsequence((0usize..6).collect::<Vec<_>>(), 0..=6),
                           seed in proptest::collection::vec(-1.0f64..1.0, 9)) {
        let m: Vec<Vec<Complex64>> = (0..3)
            .map(|i| (0..3).map(|j| c(if i == j { 2.0 } else { 0.0 } + 0.5 * seed[3 * i + j])).collect())
            .collect();
        let cov = Covariance::new(m);
        let p = Poly::product_of(6, &ids, c(1.0));
        let w = gaussian_expectation(&cov, &p);
        let b = berezin_expectation(&cov, &p).unwrap();
        prop_assert!((w - b).norm() < 1e-12);
    }

    #[test]
    fn gram_hadamard_holds(entries in proptest::collection::vec(-1.0f64..1.0, 24)) {
        let a: Vec<Vec<Complex64>> = (0..3).map(|i| (0..4).map(|k| c(entries[4 * i + k])).collect()).collect();
        let b: Vec<Vec<Complex64>> = (0..3).map(|i| (0..4).map(|k| c(entries[12 + 4 * i + k])).collect()).collect();
        let r = gram_hadamard_check(&Covariance::from_gram(a, b), &[0, 1, 2], &[0, 1, 2]).unwrap();
        prop_assert!(r.ok);
    }
}
