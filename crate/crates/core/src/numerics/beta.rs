//! Beta distribution used by the filter policy.

use rand::Rng;
use rand_distr::Distribution;

use super::special::{digamma, ln_beta};
use crate::error::{Error, Result};

/// Samples are clamped into `[BETA_EPS, 1 − BETA_EPS]` so their log-density stays finite.
pub const BETA_EPS: f64 = 1e-6;

pub fn beta_sample(alpha: f64, beta: f64, rng: &mut impl Rng) -> Result<f64> {
    let dist = rand_distr::Beta::new(alpha, beta)
        .map_err(|e| Error::Domain(format!("Beta({alpha}, {beta}): {e}")))?;
    Ok(dist.sample(rng).clamp(BETA_EPS, 1.0 - BETA_EPS))
}

pub fn beta_mean(alpha: f64, beta: f64) -> f64 {
    alpha / (alpha + beta)
}

/// Log-density of Beta(α, β) at `x` together with its partial derivatives
/// with respect to α and β.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaLogProb {
    pub log_prob: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
}

pub fn beta_log_prob(x: f64, alpha: f64, beta: f64) -> Result<BetaLogProb> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("Beta log-density needs x in (0,1), got {x}")));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Domain(format!("Beta parameters must be positive, got ({alpha}, {beta})")));
    }
    let lx = x.ln();
    let l1x = (-x).ln_1p();
    let log_prob = (alpha - 1.0) * lx + (beta - 1.0) * l1x - ln_beta(alpha, beta);
    let psi_sum = digamma(alpha + beta)?;
    Ok(BetaLogProb {
        log_prob,
        d_alpha: lx - digamma(alpha)? + psi_sum,
        d_beta: l1x - digamma(beta)? + psi_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::{RngStream, Stream};
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_density_is_one() {
        for &x in &[1e-3, 0.2, 0.5, 0.999] {
            assert_abs_diff_eq!(beta_log_prob(x, 1.0, 1.0).unwrap().log_prob, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn beta22_at_half() {
        let lp = beta_log_prob(0.5, 2.0, 2.0).unwrap().log_prob;
        assert_abs_diff_eq!(lp, 1.5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(lp, 0.405465, epsilon = 1e-6);
    }

    #[test]
    fn domain_errors() {
        assert!(beta_log_prob(0.0, 2.0, 2.0).is_err());
        assert!(beta_log_prob(1.0, 2.0, 2.0).is_err());
        assert!(beta_log_prob(0.5, 0.0, 2.0).is_err());
        let mut rng = RngStream::new(1, Stream::Beta, 0);
        assert!(beta_sample(-1.0, 2.0, &mut rng).is_err());
    }

    #[test]
    fn uniform_sample_mean() {
        let mut rng = RngStream::new(7, Stream::Beta, 0);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| beta_sample(1.0, 1.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn beta22_moments() {
        let mut rng = RngStream::new(11, Stream::Beta, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| beta_sample(2.0, 2.0, &mut rng).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        // αβ / ((α+β)²(α+β+1)) = 4 / (16 · 5)
        assert!((mean - 0.5).abs() < 0.01);
        assert!((var - 0.05).abs() < 0.005, "{var}");
    }

    #[test]
    fn same_seed_same_draws() {
        let mut a = RngStream::new(3, Stream::Beta, 2);
        let mut b = RngStream::new(3, Stream::Beta, 2);
        for _ in 0..100 {
            assert_eq!(
                beta_sample(1.7, 3.2, &mut a).unwrap().to_bits(),
                beta_sample(1.7, 3.2, &mut b).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn samples_are_clamped() {
        let mut rng = RngStream::new(5, Stream::Beta, 0);
        for _ in 0..10_000 {
            let x = beta_sample(1.0, 400.0, &mut rng).unwrap();
            assert!((BETA_EPS..=1.0 - BETA_EPS).contains(&x));
        }
    }
}
