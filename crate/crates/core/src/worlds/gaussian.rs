//! Isotropic Gaussian mixture worlds: the data-generating process behind the
//! controlled experiments. An observation `o` is drawn from a uniform mixture
//! of `m` Gaussians; the grade of `o` is the mixture component, so the grade
//! posterior given `o` is available in closed form.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::GradeHistogram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureWorld {
    dim: usize,
    centers: Vec<Vec<f64>>,
    weights: Vec<f64>,
    variance: f64,
}

impl GaussianMixtureWorld {
    pub fn new(centers: Vec<Vec<f64>>, weights: Vec<f64>, variance: f64) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::invalid("mixture needs at least 2 components"));
        }
        let dim = centers[0].len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(Error::invalid("centers must share a positive dimension"));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("centers must be finite"));
        }
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                if centers[i] == centers[j] {
                    return Err(Error::invalid(format!("centers {i} and {j} coincide")));
                }
            }
        }
        if weights.len() != centers.len() || weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("need one positive weight per center"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::invalid("variance must be positive"));
        }
        Ok(Self { dim, centers, weights, variance })
    }

    /// Samples a world with `m` centers drawn i.i.d. from `N(0, I/d)` (so each
    /// center has squared norm 1 in expectation), uniform weights, and unit
    /// observation variance.
    pub fn sample(d: usize, m: usize, seed: u64) -> Result<Self> {
        if d < 1 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if m < 2 {
            return Err(Error::invalid("need at least 2 mixture components"));
        }
        let mut rng = crate::util::stream_rng(seed, 0);
        let sd = (1.0 / d as f64).sqrt();
        let centers = (0..m)
            .map(|_| (0..d).map(|_| sd * standard_normal(&mut rng)).collect())
            .collect();
        Self::new(centers, vec![1.0 / m as f64; m], 1.0)
    }

    /// Same world with a different shared observation variance.
    pub fn with_variance(mut self, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::invalid("variance must be positive"));
        }
        self.variance = variance;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn component_count(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Posterior over mixture components given an observation:
    /// `q_l f_l(o) / sum_i q_i f_i(o)`.
    pub fn posterior(&self, o: &[f64]) -> Result<GradeHistogram> {
        let logs = self.log_component_scores(o)?;
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut mass: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = mass.iter().sum();
        for m in &mut mass {
            *m /= total;
        }
        GradeHistogram::new(mass)
    }

    /// Log of the (unnormalized) mixture density at `o`, up to a constant
    /// shared by all observations. Enough for conditional weights on a grid.
    pub fn log_marginal(&self, o: &[f64]) -> Result<f64> {
        let logs = self.log_component_scores(o)?;
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(max + logs.iter().map(|&l| (l - max).exp()).sum::<f64>().ln())
    }

    fn log_component_scores(&self, o: &[f64]) -> Result<Vec<f64>> {
        if o.len() != self.dim {
            return Err(Error::invalid(format!(
                "observation has dim {}, world has dim {}",
                o.len(),
                self.dim
            )));
        }
        if o.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation must be finite"));
        }
        Ok(self
            .centers
            .iter()
            .zip(&self.weights)
            .map(|(c, &q)| {
                let d2: f64 = o.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                q.ln() - d2 / (2.0 * self.variance)
            })
            .collect())
    }

    /// Draws one observation: pick a component by weight, add isotropic noise.
    pub fn sample_observation<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = self.centers.len() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = i;
                break;
            }
        }
        let sd = self.variance.sqrt();
        self.centers[comp]
            .iter()
            .map(|&c| c + sd * standard_normal(rng))
            .collect()
    }
}

/// The obscuring map of the synthetic worlds: componentwise absolute value.
pub fn obscure(o: &[f64]) -> Vec<f64> {
    o.iter().map(|v| v.abs()).collect()
}

/// Marsaglia polar method; two uniforms per pair of normals, deterministic
/// given the RNG stream.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = 2.0 * rng.random::<f64>() - 1.0;
        let v: f64 = 2.0 * rng.random::<f64>() - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn two_gaussian_1d() -> GaussianMixtureWorld {
        GaussianMixtureWorld::new(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5], 1.0).unwrap()
    }

    #[test]
    fn sampled_world_shapes() {
        let w = GaussianMixtureWorld::sample(3, 5, 42).unwrap();
        assert_eq!(w.dim(), 3);
        assert_eq!(w.component_count(), 5);
        assert_eq!(w.weights(), &[0.2; 5]);
        assert_eq!(w.variance(), 1.0);

        let w = GaussianMixtureWorld::sample(1, 2, 7).unwrap();
        assert_eq!(w.centers().len(), 2);
        assert_eq!(w.centers()[0].len(), 1);

        assert!(GaussianMixtureWorld::sample(3, 1, 0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = GaussianMixtureWorld::sample(4, 3, 99).unwrap();
        let b = GaussianMixtureWorld::sample(4, 3, 99).unwrap();
        assert_eq!(a, b);
        let c = GaussianMixtureWorld::sample(4, 3, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn center_norms_match_design() {
        // E||c||^2 = d * (1/d) = 1; check the empirical mean over many centers.
        let w = GaussianMixtureWorld::sample(3, 4000, 5).unwrap();
        let mean_sq: f64 = w
            .centers()
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / 4000.0;
        assert_abs_diff_eq!(mean_sq, 1.0, epsilon = 0.05);
    }

    #[test]
    fn posterior_closed_form_two_gaussians() {
        let w = two_gaussian_1d();

        let h = w.posterior(&[0.0]).unwrap();
        assert_abs_diff_eq!(h.mass()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(h.mass()[1], 0.5, epsilon = 1e-12);

        // class 2 mass is the logistic sigma(2o)
        let h = w.posterior(&[1.0]).unwrap();
        let expect = 1.0 / (1.0 + (-2.0f64).exp());
        assert_abs_diff_eq!(h.mass()[1], expect, epsilon = 1e-12);
        assert_abs_diff_eq!(h.mass()[0], 1.0 - expect, epsilon = 1e-12);

        let h = w.posterior(&[10.0]).unwrap();
        assert!(h.mass()[1] > 1.0 - 1e-8);

        assert!(w.posterior(&[f64::NAN]).is_err());
        assert!(w.posterior(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn posterior_is_logistic_for_random_points() {
        let w = two_gaussian_1d();
        let mut rng = crate::util::stream_rng(11, 0);
        for _ in 0..200 {
            let o = 6.0 * rng.random::<f64>() - 3.0;
            let h = w.posterior(&[o]).unwrap();
            let sigma = 1.0 / (1.0 + (-2.0 * o).exp());
            assert_abs_diff_eq!(h.mass()[1], sigma, epsilon = 1e-12);
            assert_abs_diff_eq!(h.mass().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn posterior_permutation_equivariant() {
        let w = GaussianMixtureWorld::new(
            vec![vec![-1.0, 0.5], vec![0.3, 0.2], vec![1.0, -0.7]],
            vec![0.2, 0.5, 0.3],
            0.8,
        )
        .unwrap();
        let swapped = GaussianMixtureWorld::new(
            vec![vec![1.0, -0.7], vec![0.3, 0.2], vec![-1.0, 0.5]],
            vec![0.3, 0.5, 0.2],
            0.8,
        )
        .unwrap();
        let o = [0.4, -0.1];
        let a = w.posterior(&o).unwrap();
        let b = swapped.posterior(&o).unwrap();
        assert_abs_diff_eq!(a.mass()[0], b.mass()[2], epsilon = 1e-12);
        assert_abs_diff_eq!(a.mass()[1], b.mass()[1], epsilon = 1e-12);
        assert_abs_diff_eq!(a.mass()[2], b.mass()[0], epsilon = 1e-12);
    }

    #[test]
    fn obscure_is_componentwise_abs_and_idempotent() {
        assert_eq!(obscure(&[-1.5, 2.0]), vec![1.5, 2.0]);
        assert_eq!(obscure(&[0.0]), vec![0.0]);
        let o = vec![-0.3, 0.7, -2.0];
        assert_eq!(obscure(&obscure(&o)), obscure(&o));
    }

    #[test]
    fn normals_have_unit_scale() {
        let mut rng = crate::util::stream_rng(3, 0);
        let n = 20000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let z = standard_normal(&mut rng);
            sum += z;
            sq += z * z;
        }
        assert_abs_diff_eq!(sum / n as f64, 0.0, epsilon = 0.03);
        assert_abs_diff_eq!(sq / n as f64, 1.0, epsilon = 0.05);
    }
}
