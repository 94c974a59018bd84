use crate::linalg::Rng;

use super::{project_to_region, ScalarError, ScalarPoint, Variant};

pub const DEFAULT_METRIC_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnisotropyMetrics {
    pub log_range: f64,
    pub balance: f64,
}

pub fn anisotropy_metrics(p: ScalarPoint, eps: f64) -> AnisotropyMetrics {
    let (a, b) = (p.jg.abs(), p.jh.abs());
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    AnisotropyMetrics {
        log_range: ((a + eps) / (b + eps)).ln().abs(),
        balance: (lo + eps) / (hi + eps),
    }
}

/// Metrics of one projected Gaussian draw, per variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnisotropySample {
    pub internal: AnisotropyMetrics,
    pub external: AnisotropyMetrics,
}

/// Draws sample `k` for the `sigma_index`-th standard deviation from its own
/// substream, so samples can be evaluated in any order.
pub fn anisotropy_sample(
    sigma: f64,
    eps: f64,
    seed: u64,
    sigma_index: usize,
    k: usize,
) -> Result<AnisotropySample, ScalarError> {
    let mut rng = Rng::substream(seed, &[sigma_index as u64, k as u64]);
    let p = ScalarPoint::new(sigma * rng.normal(), sigma * rng.normal());
    let m = |v| project_to_region(v, p).map(|q| anisotropy_metrics(q, eps));
    Ok(AnisotropySample {
        internal: m(Variant::Internal)?,
        external: m(Variant::External)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantStats {
    pub mean_log_range: f64,
    pub se_log_range: f64,
    pub median_log_range: f64,
    pub mean_balance: f64,
    pub se_balance: f64,
    pub median_balance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnisotropyStats {
    pub sigma: f64,
    pub n: usize,
    pub internal: VariantStats,
    pub external: VariantStats,
}

/// Mean, standard error (sample std over √n, 0 for a single value) and median.
fn summary(values: &mut [f64]) -> (f64, f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    values.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    (mean, se, median)
}

impl VariantStats {
    fn from_metrics(ms: impl Iterator<Item = AnisotropyMetrics>) -> Self {
        let (mut lr, mut bal): (Vec<f64>, Vec<f64>) = ms.map(|m| (m.log_range, m.balance)).unzip();
        let (mean_log_range, se_log_range, median_log_range) = summary(&mut lr);
        let (mean_balance, se_balance, median_balance) = summary(&mut bal);
        Self {
            mean_log_range,
            se_log_range,
            median_log_range,
            mean_balance,
            se_balance,
            median_balance,
        }
    }
}

impl AnisotropyStats {
    /// Aggregates per-sample metrics. Panics on an empty slice.
    pub fn from_samples(sigma: f64, samples: &[AnisotropySample]) -> Self {
        assert!(!samples.is_empty(), "need at least one sample");
        Self {
            sigma,
            n: samples.len(),
            internal: VariantStats::from_metrics(samples.iter().map(|s| s.internal)),
            external: VariantStats::from_metrics(samples.iter().map(|s| s.external)),
        }
    }

    pub fn variant(&self, v: Variant) -> &VariantStats {
        match v {
            Variant::Internal => &self.internal,
            Variant::External => &self.external,
        }
    }
}

/// Serial driver: `n` draws per standard deviation.
pub fn run_anisotropy(
    sigmas: &[f64],
    n: usize,
    eps: f64,
    seed: u64,
) -> Result<Vec<AnisotropyStats>, ScalarError> {
    assert!(n >= 1, "need at least one sample");
    sigmas
        .iter()
        .enumerate()
        .map(|(si, &sigma)| {
            let samples = (0..n)
                .map(|k| anisotropy_sample(sigma, eps, seed, si, k))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(AnisotropyStats::from_samples(sigma, &samples))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let m = anisotropy_metrics(ScalarPoint::new(0.7, 0.7), 1e-8);
        assert_eq!((m.log_range, m.balance), (0.0, 1.0));
        let m = anisotropy_metrics(ScalarPoint::new(-2.0, 2.0), 1e-8);
        assert_eq!((m.log_range, m.balance), (0.0, 1.0));
        let m = anisotropy_metrics(ScalarPoint::new(1.0, 0.0), 1e-8);
        assert!((m.log_range - 18.420680753).abs() < 1e-8);
        assert!((m.balance - 1e-8).abs() < 1e-15);
    }

    #[test]
    fn single_sample_has_zero_se() {
        let s = run_anisotropy(&[1.0], 1, 1e-8, 3).unwrap();
        assert_eq!(s[0].internal.se_log_range, 0.0);
        assert_eq!(s[0].external.se_balance, 0.0);
        assert_eq!(s[0].n, 1);
    }

    #[test]
    fn summary_median_even() {
        let (mean, se, med) = summary(&mut [4.0, 1.0, 3.0, 2.0]);
        assert_eq!((mean, med), (2.5, 2.5));
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
