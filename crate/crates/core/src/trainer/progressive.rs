use crate::linalg::Rng;

use super::TrainError;

/// Draws `(N, K)`: `N` uniform on `[0, T−2]`, then `K` uniform on `[1, T−1−N]`.
pub fn progressive_sample(t_max: usize, rng: &mut Rng) -> Result<(usize, usize), TrainError> {
    if t_max < 2 {
        return Err(TrainError::Precondition(format!(
            "loop budget T = {t_max} is below 2"
        )));
    }
    let t = t_max as u64;
    let n = rng.int_inclusive(0, t - 2);
    let k = rng.int_inclusive(1, t - 1 - n);
    Ok((n as usize, k as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_two_is_forced() {
        let mut rng = Rng::new(0);
        for _ in 0..50 {
            assert_eq!(progressive_sample(2, &mut rng).unwrap(), (0, 1));
        }
        assert!(progressive_sample(1, &mut rng).is_err());
    }

    #[test]
    fn ranges_at_thirty() {
        let mut rng = Rng::new(1);
        for _ in 0..10_000 {
            let (n, k) = progressive_sample(30, &mut rng).unwrap();
            assert!(n <= 28 && k >= 1 && n + k <= 29);
        }
    }
}
