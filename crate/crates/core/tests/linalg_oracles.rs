use looplab_core::linalg::{
    inverse, rank, resolvent_apply, spectral_radius, DenseMatrix, Rng, DEFAULT_RANK_TOL,
    DEFAULT_SPECTRAL_TOL,
};
use proptest::prelude::*;

fn random_square(rng: &mut Rng, n: usize) -> DenseMatrix {
    rng.normal_matrix(n, n, 1.0)
}

/// Matrix with prescribed spectrum, built as S B S⁻¹ where B is block
/// diagonal with real 1×1 blocks and rotation-scaling 2×2 blocks.
fn with_known_spectrum(rng: &mut Rng, reals: &[f64], pairs: &[(f64, f64)]) -> (DenseMatrix, f64) {
    let n = reals.len() + 2 * pairs.len();
    let mut b = DenseMatrix::zeros(n, n);
    let mut k = 0;
    let mut rho: f64 = 0.0;
    for &r in reals {
        b[(k, k)] = r;
        rho = rho.max(r.abs());
        k += 1;
    }
    for &(re, im) in pairs {
        b[(k, k)] = re;
        b[(k, k + 1)] = -im;
        b[(k + 1, k)] = im;
        b[(k + 1, k + 1)] = re;
        rho = rho.max(re.hypot(im));
        k += 2;
    }
    let s = DenseMatrix::identity(n)
        .add(&rng.normal_matrix(n, n, 0.3))
        .unwrap();
    let m = s.matmul(&b).unwrap().matmul(&inverse(&s).unwrap()).unwrap();
    (m, rho)
}

#[test]
fn spectral_radius_matches_constructed_spectrum() {
    let mut rng = Rng::new(11);
    for trial in 0..50 {
        let reals: Vec<f64> = (0..(trial % 4))
            .map(|_| rng.uniform_in(-2.0, 2.0))
            .collect();
        let pairs: Vec<(f64, f64)> = (0..(1 + trial % 3))
            .map(|_| (rng.uniform_in(-1.5, 1.5), rng.uniform_in(0.1, 1.5)))
            .collect();
        let (m, rho) = with_known_spectrum(&mut rng, &reals, &pairs);
        let got = spectral_radius(&m, DEFAULT_SPECTRAL_TOL).unwrap();
        assert!(
            (got - rho).abs() <= 1e-8 * rho.max(1.0),
            "trial {trial}: {got} vs {rho}"
        );
    }
}

#[test]
fn resolvent_matches_neumann_series() {
    let mut rng = Rng::new(5);
    for _ in 0..10 {
        let raw = random_square(&mut rng, 4);
        let rho = spectral_radius(&raw, DEFAULT_SPECTRAL_TOL).unwrap();
        let a = raw.scale(0.6 / rho);
        let b = rng.normal_matrix(4, 3, 1.0);

        // Σ_{k≤200} aᵏ b
        let mut term = b.clone();
        let mut sum = b.clone();
        for _ in 1..=200 {
            term = a.matmul(&term).unwrap();
            sum = sum.add(&term).unwrap();
        }
        let x = resolvent_apply(&a, &b).unwrap();
        let err = x.sub(&sum).unwrap().max_abs();
        assert!(err < 1e-9, "neumann mismatch {err}");
    }
}

fn det3(g: &DenseMatrix) -> f64 {
    g[(0, 0)] * (g[(1, 1)] * g[(2, 2)] - g[(1, 2)] * g[(2, 1)])
        - g[(0, 1)] * (g[(1, 0)] * g[(2, 2)] - g[(1, 2)] * g[(2, 0)])
        + g[(0, 2)] * (g[(1, 0)] * g[(2, 1)] - g[(1, 1)] * g[(2, 0)])
}

#[test]
fn rank_of_tall_random_matches_gram_determinant() {
    let mut rng = Rng::new(8);
    for _ in 0..20 {
        let x = rng.normal_matrix(6, 3, 1.0);
        let gram = x.transpose().matmul(&x).unwrap();
        let det = det3(&gram);
        assert!(det > 1e-6, "oracle says columns dependent: {det}");
        assert_eq!(rank(&x, DEFAULT_RANK_TOL), 3);
    }
}

fn matrix_strategy(n: usize) -> impl Strategy<Value = DenseMatrix> {
    proptest::collection::vec(-2.0f64..2.0, n * n)
        .prop_map(move |v| DenseMatrix::new(n, n, v).unwrap())
}

#[test]
fn spectral_radius_homogeneity_on_random_8x8() {
    let mut rng = Rng::new(21);
    for _ in 0..100 {
        let m = random_square(&mut rng, 8);
        let c = rng.uniform_in(-3.0, 3.0);
        let rho = spectral_radius(&m, DEFAULT_SPECTRAL_TOL).unwrap();
        let rho_c = spectral_radius(&m.scale(c), DEFAULT_SPECTRAL_TOL).unwrap();
        assert!((rho_c - c.abs() * rho).abs() <= 1e-8 * (c.abs() * rho));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectral_radius_of_powers(m in matrix_strategy(6)) {
        let rho = spectral_radius(&m, DEFAULT_SPECTRAL_TOL).unwrap();
        prop_assume!(rho > 1e-3);
        for k in [2u32, 3] {
            let rk = spectral_radius(&m.pow(k).unwrap(), DEFAULT_SPECTRAL_TOL).unwrap();
            prop_assert!((rk - rho.powi(k as i32)).abs() <= 1e-6 * rho.powi(k as i32));
        }
    }

    #[test]
    fn resolvent_residual(m in matrix_strategy(5), b in proptest::collection::vec(-3.0f64..3.0, 10)) {
        let rho = spectral_radius(&m, DEFAULT_SPECTRAL_TOL).unwrap();
        prop_assume!(rho > 1e-6);
        let a = m.scale(0.9 / rho);
        let b = DenseMatrix::new(5, 2, b).unwrap();
        let x = resolvent_apply(&a, &b).unwrap();
        let lhs = x.sub(&a.matmul(&x).unwrap()).unwrap();
        let res = lhs.sub(&b).unwrap().frobenius_norm();
        prop_assert!(res <= 1e-10 * b.frobenius_norm().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn rank_invariant_under_row_ops(
        u in proptest::collection::vec(-2.0f64..2.0, 5 * 2),
        v in proptest::collection::vec(-2.0f64..2.0, 2 * 4),
        scales in proptest::collection::vec(0.1f64..5.0, 5),
        swap in (0usize..5, 0usize..5),
    ) {
        // rank ≤ 2 by construction
        let u = DenseMatrix::new(5, 2, u).unwrap();
        let v = DenseMatrix::new(2, 4, v).unwrap();
        let m = u.matmul(&v).unwrap();
        let r = rank(&m, DEFAULT_RANK_TOL);
        let mut permuted = m.clone();
        for j in 0..4 {
            let t = permuted[(swap.0, j)];
            permuted[(swap.0, j)] = permuted[(swap.1, j)];
            permuted[(swap.1, j)] = t;
        }
        let scaled = DenseMatrix::from_fn(5, 4, |i, j| permuted[(i, j)] * scales[i]);
        prop_assert!(r <= 2);
        prop_assert_eq!(rank(&permuted, DEFAULT_RANK_TOL), r);
        prop_assert_eq!(rank(&scaled, DEFAULT_RANK_TOL), r);
    }
}
