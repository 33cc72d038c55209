use crate::error::{Error, Result};

pub const MIN_ESS_SAMPLES: usize = 10;

/// Effective sample size of one univariate series, `None` for a constant series.
///
/// Uses the biased (1/N) autocorrelation estimate and truncates the sum at
/// the last lag where consecutive pairs `ρ(2t-1) + ρ(2t)` are all positive
/// (Geyer's initial positive sequence). The result is clamped to `[1, N]`.
pub fn ess(series: &[f64]) -> Result<Option<f64>> {
    let n = series.len();
    if n < MIN_ESS_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_ESS_SAMPLES,
            got: n,
        });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let variance = centered.iter().map(|x| x * x).sum::<f64>();
    if variance == 0.0 {
        return Ok(None);
    }
    let rho = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / variance
    };
    let mut sum = 0.0;
    let mut t = 1;
    while 2 * t < n {
        let pair = rho(2 * t - 1) + rho(2 * t);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        t += 1;
    }
    let n = n as f64;
    Ok(Some((n / (1.0 + 2.0 * sum)).clamp(1.0, n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    #[test]
    fn constant_series_is_excluded() {
        assert_eq!(ess(&[3.0; 50]).unwrap(), None);
    }

    #[test]
    fn short_series_are_rejected() {
        assert!(matches!(ess(&[1.0, 2.0]), Err(Error::InsufficientData { needed: 10, got: 2 })));
    }

    #[test]
    fn iid_noise_is_worth_its_length() {
        let mean: f64 = (0..20)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
                ess(&x).unwrap().unwrap()
            })
            .sum::<f64>()
            / 20.0;
        assert!((9_000.0..=11_000.0).contains(&mean), "{mean}");
    }

    #[test]
    fn ar1_matches_analytic_ratio() {
        let x = ar1(0.9, 100_000, 7);
        let ratio = ess(&x).unwrap().unwrap() / 100_000.0;
        let expected = 0.1 / 1.9;
        assert!((ratio / expected - 1.0).abs() < 0.15, "{ratio}");
    }

    #[test]
    fn alternating_series_clamps_to_length() {
        let x: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        assert_eq!(ess(&x).unwrap(), Some(100.0));
    }

    #[test]
    fn rare_blip_looks_independent() {
        let mut x = vec![2.0; 500];
        x[250] = 3.0;
        let e = ess(&x).unwrap().unwrap();
        assert!(e > 400.0, "{e}");
    }

    proptest! {
        #[test]
        fn affine_invariance(seed in 0u64..1000, scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
            let x = ar1(0.5, 200, seed);
            let y: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
            let (a, b) = (ess(&x).unwrap().unwrap(), ess(&y).unwrap().unwrap());
            prop_assert!((a - b).abs() <= 1e-8 * a, "{} vs {}", a, b);
        }
    }
}
