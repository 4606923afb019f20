use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Monte-Carlo estimate of the mean and (unbiased) variance of `N1 − N2`
/// for independent `N1, N2 ~ Normal(mu, sigma²)`.
///
/// The difference of i.i.d. noise has mean 0 and variance `2σ²` whatever
/// `mu` is, which is what the subtractive fusion relies on.
pub fn so_noise_test(sigma: f64, mu: f64, trials: usize, seed: u64) -> Result<(f64, f64)> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be non-negative, got {sigma}")));
    }
    if trials < 2 {
        return Err(Error::InvalidArgument("need at least two trials".into()));
    }
    let dist = Normal::new(mu, sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Welford accumulation.
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for i in 0..trials {
        let n1: f64 = dist.sample(&mut rng);
        let n2: f64 = dist.sample(&mut rng);
        let d = n1 - n2;
        let delta = d - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (d - mean);
    }
    Ok((mean, m2 / (trials - 1) as f64))
}
