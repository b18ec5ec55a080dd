//! Finite worlds with an explicit joint table over (observation, grade) and a
//! many-to-one obscuring map. Everything about them — marginals, posteriors,
//! conditional preimages — is computable by enumeration, which is what makes
//! them usable as ground truth for the oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::{GradeHistogram, GradeScale};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteWorld {
    /// Normalized joint probabilities, `joint[o][y]`.
    joint: Vec<Vec<f64>>,
    /// Observation marginals, `p(o)`.
    obs_marginal: Vec<f64>,
    /// Dense map observation index -> obscured id in `0..x_count`.
    obscure_map: Vec<usize>,
    /// Preimage of each obscured id.
    preimages: Vec<Vec<usize>>,
    /// Marginals of the obscured variable, `p(x)`.
    x_marginal: Vec<f64>,
    scale: GradeScale,
}

/// On-disk form of a world: raw joint table (any nonnegative scale), obscure
/// map, optional grade values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteWorldFile {
    pub joint: Vec<Vec<f64>>,
    pub obscure_map: Vec<usize>,
    #[serde(default)]
    pub grades: Option<Vec<f64>>,
}

impl DiscreteWorld {
    /// Builds a world from a raw nonnegative table (normalized here) and an
    /// obscure map given as a total function table. Obscured ids may be any
    /// usize values; they are compacted to `0..x_count` in first-appearance
    /// order.
    pub fn build(
        joint_raw: Vec<Vec<f64>>,
        obscure_map_raw: Vec<usize>,
        scale: Option<GradeScale>,
    ) -> Result<Self> {
        let n_obs = joint_raw.len();
        if n_obs == 0 {
            return Err(Error::invalid("world needs at least one observation"));
        }
        let k = joint_raw[0].len();
        if k < 2 {
            return Err(Error::invalid("world needs at least 2 grades"));
        }
        if joint_raw.iter().any(|row| row.len() != k) {
            return Err(Error::invalid("joint table is not rectangular"));
        }
        if joint_raw.iter().flatten().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::invalid("joint entries must be finite and nonnegative"));
        }
        let total: f64 = joint_raw.iter().flatten().sum();
        if total <= 0.0 {
            return Err(Error::invalid("joint table is all zero"));
        }
        if obscure_map_raw.len() != n_obs {
            return Err(Error::invalid("obscure map must cover every observation"));
        }

        let joint: Vec<Vec<f64>> = joint_raw
            .into_iter()
            .map(|row| row.into_iter().map(|p| p / total).collect())
            .collect();
        let obs_marginal: Vec<f64> = joint.iter().map(|row| row.iter().sum()).collect();
        if obs_marginal.iter().any(|&p| p <= 0.0) {
            return Err(Error::invalid("every observation needs positive marginal mass"));
        }

        // compact x ids in first-appearance order
        let mut dense = Vec::new();
        let mut obscure_map = Vec::with_capacity(n_obs);
        for &x in &obscure_map_raw {
            let id = match dense.iter().position(|&d| d == x) {
                Some(i) => i,
                None => {
                    dense.push(x);
                    dense.len() - 1
                }
            };
            obscure_map.push(id);
        }
        let x_count = dense.len();
        let mut preimages = vec![Vec::new(); x_count];
        let mut x_marginal = vec![0.0; x_count];
        for (o, &x) in obscure_map.iter().enumerate() {
            preimages[x].push(o);
            x_marginal[x] += obs_marginal[o];
        }

        let scale = match scale {
            Some(s) => {
                if s.k() != k {
                    return Err(Error::invalid(format!(
                        "scale has {} grades, joint table has {k}",
                        s.k()
                    )));
                }
                s
            }
            None => GradeScale::uniform(k)?,
        };

        Ok(Self { joint, obs_marginal, obscure_map, preimages, x_marginal, scale })
    }

    /// Random world for oracle batteries: joint entries uniform in
    /// [0.05, 1.05] (normalized), obscure map surjective onto `0..x_count`.
    pub fn sample_random(n_obs: usize, k: usize, x_count: usize, seed: u64) -> Result<Self> {
        use rand::Rng;
        if x_count == 0 || x_count > n_obs {
            return Err(Error::invalid("need 1 <= x_count <= n_obs"));
        }
        let mut rng = crate::util::stream_rng(seed, 0);
        let joint: Vec<Vec<f64>> = (0..n_obs)
            .map(|_| (0..k).map(|_| 0.05 + rng.random::<f64>()).collect())
            .collect();
        // first x_count observations pin one preimage each, the rest land anywhere
        let obscure_map: Vec<usize> = (0..n_obs)
            .map(|o| if o < x_count { o } else { rng.random_range(0..x_count) })
            .collect();
        Self::build(joint, obscure_map, None)
    }

    /// The two-observation world where both observations collapse to one x
    /// and their posteriors are opposite point masses.
    pub fn two_point_collapse() -> Self {
        Self::build(vec![vec![0.5, 0.0], vec![0.0, 0.5]], vec![0, 0], None).unwrap()
    }

    pub fn from_file(file: DiscreteWorldFile) -> Result<Self> {
        let scale = match file.grades {
            Some(g) => Some(GradeScale::new(g, 0)?),
            None => None,
        };
        Self::build(file.joint, file.obscure_map, scale)
    }

    pub fn obs_count(&self) -> usize {
        self.joint.len()
    }

    pub fn k(&self) -> usize {
        self.scale.k()
    }

    pub fn x_count(&self) -> usize {
        self.preimages.len()
    }

    pub fn scale(&self) -> &GradeScale {
        &self.scale
    }

    pub fn joint(&self) -> &[Vec<f64>] {
        &self.joint
    }

    pub fn obs_marginal(&self, o: usize) -> f64 {
        self.obs_marginal[o]
    }

    pub fn x_marginal(&self, x: usize) -> f64 {
        self.x_marginal[x]
    }

    pub fn obscure(&self, o: usize) -> usize {
        self.obscure_map[o]
    }

    pub fn preimage(&self, x: usize) -> Result<&[usize]> {
        self.preimages
            .get(x)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("x={x} has empty preimage")))
    }

    /// Grade posterior `p(y | o)`.
    pub fn posterior(&self, o: usize) -> Result<GradeHistogram> {
        let row = self
            .joint
            .get(o)
            .ok_or_else(|| Error::invalid(format!("observation {o} out of range")))?;
        let p = self.obs_marginal[o];
        GradeHistogram::new(row.iter().map(|&j| j / p).collect())
    }

    /// Conditional weights `p(o | x)` over the preimage of `x`.
    pub fn cond_obs_given_x(&self, x: usize) -> Result<Vec<(usize, f64)>> {
        let pre = self.preimage(x)?;
        let px = self.x_marginal[x];
        Ok(pre.iter().map(|&o| (o, self.obs_marginal[o] / px)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn build_normalizes_and_validates() {
        let w = DiscreteWorld::build(vec![vec![2.0, 0.0], vec![0.0, 2.0]], vec![0, 1], None)
            .unwrap();
        assert_abs_diff_eq!(w.joint()[0][0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w.joint()[1][1], 0.5, epsilon = 1e-15);
        assert_eq!(w.x_count(), 2);

        assert!(DiscreteWorld::build(vec![vec![1.0, -0.1]], vec![0], None).is_err());
        assert!(DiscreteWorld::build(vec![vec![0.0, 0.0]], vec![0], None).is_err());
        assert!(DiscreteWorld::build(vec![vec![1.0, 1.0]], vec![0, 1], None).is_err());
        // zero-marginal observation
        assert!(
            DiscreteWorld::build(vec![vec![1.0, 1.0], vec![0.0, 0.0]], vec![0, 1], None).is_err()
        );
    }

    #[test]
    fn uniform_identity_world() {
        let w = DiscreteWorld::build(
            vec![vec![0.25, 0.25], vec![0.25, 0.25]],
            vec![0, 1],
            None,
        )
        .unwrap();
        assert_eq!(w.obs_count(), 2);
        assert_eq!(w.preimage(0).unwrap(), &[0]);
        let h = w.posterior(0).unwrap();
        assert_abs_diff_eq!(h.mass()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn conditionals_sum_to_one() {
        let w = DiscreteWorld::sample_random(7, 4, 3, 123).unwrap();
        for o in 0..w.obs_count() {
            let h = w.posterior(o).unwrap();
            assert_abs_diff_eq!(h.mass().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        for x in 0..w.x_count() {
            let cond = w.cond_obs_given_x(x).unwrap();
            let total: f64 = cond.iter().map(|(_, w)| w).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
        let total_x: f64 = (0..w.x_count()).map(|x| w.x_marginal(x)).sum();
        assert_abs_diff_eq!(total_x, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_point_collapse_shape() {
        let w = DiscreteWorld::two_point_collapse();
        assert_eq!(w.x_count(), 1);
        assert_eq!(w.preimage(0).unwrap(), &[0, 1]);
        assert_eq!(w.posterior(0).unwrap().mass(), &[1.0, 0.0]);
        assert_eq!(w.posterior(1).unwrap().mass(), &[0.0, 1.0]);
        assert!(w.preimage(1).is_err());
    }

    #[test]
    fn file_round_trip() {
        let w = DiscreteWorld::sample_random(5, 3, 2, 9).unwrap();
        let file = DiscreteWorldFile {
            joint: w.joint().to_vec(),
            obscure_map: (0..w.obs_count()).map(|o| w.obscure(o)).collect(),
            grades: Some(w.scale().grades().to_vec()),
        };
        let json = serde_json::to_string(&file).unwrap();
        let parsed: DiscreteWorldFile = serde_json::from_str(&json).unwrap();
        let w2 = DiscreteWorld::from_file(parsed).unwrap();
        assert_eq!(w, w2);
    }
}
