use looplab_core::linalg::Rng;
use looplab_core::scalarlab::{
    anisotropy_sample, project_to_region, region_expression, run_anisotropy, ScalarPoint, Variant,
};
use proptest::prelude::*;

/// Nearest point on `{x·v = s}` by dense log-spaced sampling of both
/// branches followed by golden-section refinement in the log parameter.
fn sampled_hyperbola(px: f64, pv: f64, s: f64, samples: usize) -> (f64, f64, f64) {
    let dist = |sign: f64, t: f64| {
        let x = sign * t.exp();
        let v = s / x;
        ((x - px).hypot(v - pv), x, v)
    };
    let (lo, hi) = (-14.0, 14.0);
    let h = (hi - lo) / samples as f64;
    let mut best = (f64::INFINITY, 0.0, 0.0, 1.0, 0.0);
    for sign in [1.0, -1.0] {
        for k in 0..=samples {
            let t = lo + k as f64 * h;
            let (d, x, v) = dist(sign, t);
            if d < best.0 {
                best = (d, x, v, sign, t);
            }
        }
    }
    let (_, _, _, sign, t) = best;
    let (mut a, mut b) = (t - h, t + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if dist(sign, c).0 < dist(sign, d).0 {
            b = d;
        } else {
            a = c;
        }
    }
    dist(sign, 0.5 * (a + b))
}

fn oracle(variant: Variant, p: ScalarPoint, samples: usize) -> ScalarPoint {
    if region_expression(variant, p) <= 1.0 {
        return p;
    }
    let mut cands = Vec::new();
    match variant {
        Variant::Internal => {
            cands.push(ScalarPoint::new(p.jg, 0.0));
            cands.push(ScalarPoint::new(0.0, p.jh));
            let (_, x, y) = sampled_hyperbola(p.jg, p.jh, -2.0, samples);
            cands.push(ScalarPoint::new(x, y));
        }
        Variant::External => {
            for s in [1.0, -1.0] {
                let (_, x, u) = sampled_hyperbola(p.jg, 1.0 + p.jh, s, samples);
                cands.push(ScalarPoint::new(x, u - 1.0));
            }
        }
    }
    cands
        .into_iter()
        .min_by(|a, b| a.distance(p).total_cmp(&b.distance(p)))
        .unwrap()
}

#[test]
fn external_three_zero_matches_dense_sampling() {
    let p = ScalarPoint::new(3.0, 0.0);
    let q = project_to_region(Variant::External, p).unwrap();
    let o = oracle(Variant::External, p, 1_000_000);
    assert!(q.distance(o) < 1e-4, "{q:?} vs {o:?}");
    assert!((region_expression(Variant::External, q) - 1.0).abs() < 1e-9);
}

#[test]
fn projections_match_sampling_oracle() {
    let mut rng = Rng::new(41);
    for _ in 0..200 {
        let sigma = [0.5, 1.0, 2.0, 4.0, 10.0][rng.int_inclusive(0, 4) as usize];
        let p = ScalarPoint::new(sigma * rng.normal(), sigma * rng.normal());
        for v in Variant::ALL {
            let q = project_to_region(v, p).unwrap();
            let o = oracle(v, p, 100_000);
            // Distances agree to the oracle's resolution, and ours is never worse.
            assert!(
                q.distance(p) <= o.distance(p) + 1e-9,
                "{v} {p:?}: {q:?} vs {o:?}"
            );
            assert!((q.distance(p) - o.distance(p)).abs() < 1e-6, "{v} {p:?}");
        }
    }
}

#[test]
fn internal_projections_are_more_anisotropic() {
    let stats = run_anisotropy(&[0.5, 1.0, 2.0, 4.0], 10_000, 1e-8, 7).unwrap();
    for s in &stats {
        let (i, e) = (&s.internal, &s.external);
        assert!(
            i.mean_log_range >= 3.0 * e.mean_log_range,
            "sigma {}",
            s.sigma
        );
        assert!(i.mean_balance < e.mean_balance, "sigma {}", s.sigma);
        assert!(
            i.median_balance <= e.median_balance / 4.0,
            "sigma {}",
            s.sigma
        );
        for v in [i, e] {
            assert!((0.0..=1.0).contains(&v.mean_balance));
            assert!(v.median_log_range >= 0.0);
            assert!(v.se_log_range > 0.0);
        }
    }
}

#[test]
fn sampler_moments() {
    for (si, sigma) in [0.5, 4.0].into_iter().enumerate() {
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|k| {
                let mut rng = Rng::substream(7, &[si as u64, k as u64]);
                sigma * rng.normal()
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // SE of the mean is σ/√n; SE of the variance is σ²√(2/(n−1)).
        assert!(mean.abs() <= 3.0 * sigma / (n as f64).sqrt());
        assert!((var - sigma * sigma).abs() <= 3.0 * sigma * sigma * (2.0 / (n - 1) as f64).sqrt());
    }
}

#[test]
fn samples_are_order_independent() {
    let a = anisotropy_sample(2.0, 1e-8, 5, 1, 37).unwrap();
    let _ = anisotropy_sample(2.0, 1e-8, 5, 1, 36).unwrap();
    assert_eq!(a, anisotropy_sample(2.0, 1e-8, 5, 1, 37).unwrap());
}

proptest! {
    #[test]
    fn projection_is_idempotent_and_closed(
        jg in -50.0f64..50.0,
        jh in -50.0f64..50.0,
        internal in any::<bool>(),
    ) {
        let v = if internal { Variant::Internal } else { Variant::External };
        let q = project_to_region(v, ScalarPoint::new(jg, jh)).unwrap();
        prop_assert!(region_expression(v, q) <= 1.0 + 1e-6);
        let qq = project_to_region(v, q).unwrap();
        prop_assert!(qq.distance(q) <= 1e-9);
    }
}
