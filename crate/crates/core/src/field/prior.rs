use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diff::softplus;

/// Diagonal Gaussian over the global latent, `sigma = softplus(scale_pre)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPrior {
    pub mean: Vec<f64>,
    pub scale_pre: Vec<f64>,
}

impl LatentPrior {
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale_pre: vec![inverse_softplus(1.0); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.scale_pre.iter().map(|s| softplus(*s)).collect()
    }

    /// `z = mean + sigma * eps`, `eps ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let sigma = self.sigma();
        (0..count)
            .map(|_| {
                self.mean
                    .iter()
                    .zip(&sigma)
                    .map(|(m, s)| {
                        let eps: f64 = rng.sample(StandardNormal);
                        m + s * eps
                    })
                    .collect()
            })
            .collect()
    }

    pub fn logpdf(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dim());
        z.iter()
            .zip(&self.mean)
            .zip(self.sigma())
            .map(|((z, m), s)| gaussian_logpdf(*z, *m, s))
            .sum()
    }

    /// Standardized coordinates `(z - mean) / sigma`.
    pub fn standardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(self.sigma())
            .map(|((z, m), s)| (z - m) / s)
            .collect()
    }
}

pub fn gaussian_logpdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let u = (x - mean) / sigma;
    -0.5 * u * u - sigma.ln() - 0.5 * (2.0 * PI).ln()
}

pub fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn collapsed_prior_returns_mean() {
        let prior = LatentPrior {
            mean: vec![0.5, -1.0, 2.0, 0.0],
            scale_pre: vec![-800.0; 4],
        };
        for z in prior.sample(5, &mut rng::from_seed(3)) {
            assert_eq!(z, prior.mean);
        }
    }

    #[test]
    fn sample_moments() {
        let prior = LatentPrior::standard(1);
        let xs: Vec<f64> = prior
            .sample(100_000, &mut rng::from_seed(11))
            .into_iter()
            .map(|z| z[0])
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn seeded_sampling_is_repeatable() {
        let prior = LatentPrior::standard(4);
        let a = prior.sample(8, &mut rng::from_seed(5));
        let b = prior.sample(8, &mut rng::from_seed(5));
        assert_eq!(a, b);
    }

    #[test]
    fn logpdf_closed_forms() {
        let ln2pi = (2.0 * PI).ln();
        let p1 = LatentPrior::standard(1);
        assert!((p1.logpdf(&[0.0]) + 0.918_938_533_204_672_7).abs() < 1e-12);
        let p4 = LatentPrior {
            mean: vec![0.3, -0.2, 1.0, 4.0],
            scale_pre: vec![inverse_softplus(1.0); 4],
        };
        assert!((p4.logpdf(&p4.mean.clone()) + 2.0 * ln2pi).abs() < 1e-12);
        let a = [0.7, -0.1, 0.4, 2.0];
        let plus: Vec<f64> = p4.mean.iter().zip(a).map(|(m, a)| m + a).collect();
        let minus: Vec<f64> = p4.mean.iter().zip(a).map(|(m, a)| m - a).collect();
        assert!((p4.logpdf(&plus) - p4.logpdf(&minus)).abs() < 1e-12);
    }
}
