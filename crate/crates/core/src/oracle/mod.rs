//! Exact, enumeration-based computation of the two uncertainty predictors and
//! their bias on finite worlds.
//!
//! For an obscured value x with preimage {o_1, ..., o_r}:
//!   - the direct predictor is the conditional average of per-observation
//!     uncertainties,   h_dup(x) = sum_o U(E[Y|O=o]) p(o|x);
//!   - the classify-then-score predictor applies U to the averaged posterior,
//!     h_uvc(x) = U(sum_o E[Y|O=o] p(o|x)).
//! Averaging before a concave U can only increase the score, so h_uvc
//! overestimates; the bias has a closed form for the disagree and variance
//! scores, and both the sign and the closed form are checked here.

mod grid;
mod transport;

pub use grid::{discretize_gaussian_1d, DiscretizedWorld1d};
pub use transport::{
    brute_force_wasserstein, wasserstein_point_mass, TransportMetric, TransportPlan, MAX_SUPPORT,
};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::uncertainty::{u_score, GradeHistogram, UncertaintyKind};
use crate::worlds::DiscreteWorld;

/// Tolerance for the tower-rule identity.
pub const TOWER_TOL: f64 = 1e-12;
/// Tolerance for the bias closed-form equality.
pub const BIAS_FORMULA_TOL: f64 = 1e-10;

/// Exact direct predictor at `x` under an arbitrary uncertainty function.
pub fn exact_h_dup<F>(world: &DiscreteWorld, x: usize, u: F) -> Result<f64>
where
    F: Fn(&GradeHistogram) -> f64,
{
    let cond = world.cond_obs_given_x(x)?;
    let mut acc = 0.0;
    for (o, w) in cond {
        acc += w * u(&world.posterior(o)?);
    }
    Ok(acc)
}

/// Exact classify-then-score predictor at `x`.
pub fn exact_h_uvc<F>(world: &DiscreteWorld, x: usize, u: F) -> Result<f64>
where
    F: Fn(&GradeHistogram) -> f64,
{
    Ok(u(&expected_posterior(world, x)?))
}

/// The averaged posterior `E[Y | g(O) = x]`.
pub fn expected_posterior(world: &DiscreteWorld, x: usize) -> Result<GradeHistogram> {
    let cond = world.cond_obs_given_x(x)?;
    let mut mix = vec![0.0; world.k()];
    for (o, w) in cond {
        for (l, &p) in world.posterior(o)?.mass().iter().enumerate() {
            mix[l] += w * p;
        }
    }
    GradeHistogram::new(mix)
}

/// Per-x values of the two predictors.
#[derive(Debug, Clone, Serialize)]
pub struct BiasPerX {
    pub x: usize,
    pub h_dup: f64,
    pub h_uvc: f64,
}

/// The empirical bias `E[h_uvc - h_dup]` next to its closed form.
#[derive(Debug, Clone, Serialize)]
pub struct BiasReport {
    pub kind: UncertaintyKind,
    pub empirical_bias: f64,
    pub formula_bias: f64,
    pub per_x: Vec<BiasPerX>,
}

impl BiasReport {
    /// Numeric invariants the theory guarantees; any returned message is a
    /// genuine violation.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.empirical_bias < -TOWER_TOL {
            bad.push(format!("empirical bias {} is negative", self.empirical_bias));
        }
        let gap = (self.empirical_bias - self.formula_bias).abs();
        if gap > BIAS_FORMULA_TOL {
            bad.push(format!(
                "empirical bias {} differs from closed form {} by {gap}",
                self.empirical_bias, self.formula_bias
            ));
        }
        for p in &self.per_x {
            if p.h_uvc < p.h_dup - TOWER_TOL {
                bad.push(format!(
                    "x={}: h_uvc {} below h_dup {}",
                    p.x, p.h_uvc, p.h_dup
                ));
            }
        }
        bad
    }
}

/// Computes both predictors everywhere, the empirical bias, and the
/// closed-form bias for the disagree and variance scores. Also asserts the
/// tower identity: averaging h_dup over x reproduces the plain average of
/// U(posterior) over observations.
pub fn bias_report(world: &DiscreteWorld, kind: UncertaintyKind) -> Result<BiasReport> {
    if kind == UncertaintyKind::Entropy {
        return Err(Error::Undefined(
            "no closed-form bias implemented for entropy".into(),
        ));
    }
    let scale = world.scale();
    let u = |h: &GradeHistogram| u_score(kind, h, scale);

    let mut per_x = Vec::with_capacity(world.x_count());
    let mut empirical = 0.0;
    let mut formula = 0.0;
    let mut dup_avg = 0.0;
    for x in 0..world.x_count() {
        let cond = world.cond_obs_given_x(x)?;
        let posteriors: Vec<(f64, GradeHistogram)> = cond
            .iter()
            .map(|&(o, w)| Ok((w, world.posterior(o)?)))
            .collect::<Result<_>>()?;

        let mut h_dup = 0.0;
        for (w, post) in &posteriors {
            h_dup += w * u(post)?;
        }
        let h_uvc = u(&expected_posterior(world, x)?)?;

        let px = world.x_marginal(x);
        empirical += px * (h_uvc - h_dup);
        dup_avg += px * h_dup;
        formula += px * conditional_variance_term(kind, &posteriors, scale.grades());
        per_x.push(BiasPerX { x, h_dup, h_uvc });
    }

    // tower rule: E_x[h_dup] must equal E_o[U(posterior)]
    let mut obs_avg = 0.0;
    for o in 0..world.obs_count() {
        obs_avg += world.obs_marginal(o) * u(&world.posterior(o)?)?;
    }
    if (dup_avg - obs_avg).abs() > TOWER_TOL {
        return Err(Error::Invariant(format!(
            "tower rule violated: E_x[h_dup]={dup_avg} vs E_o[U]={obs_avg}"
        )));
    }

    Ok(BiasReport { kind, empirical_bias: empirical, formula_bias: formula, per_x })
}

/// The inner term of the bias closed form at one x: for the disagree score,
/// the summed conditional variance of each posterior coordinate; for the
/// variance score, the conditional variance of the posterior mean grade.
fn conditional_variance_term(
    kind: UncertaintyKind,
    posteriors: &[(f64, GradeHistogram)],
    grades: &[f64],
) -> f64 {
    match kind {
        UncertaintyKind::Disagree => {
            let k = grades.len();
            let mut total = 0.0;
            for l in 0..k {
                let mean: f64 = posteriors.iter().map(|(w, p)| w * p.mass()[l]).sum();
                let sq: f64 = posteriors
                    .iter()
                    .map(|(w, p)| w * p.mass()[l] * p.mass()[l])
                    .sum();
                total += sq - mean * mean;
            }
            total
        }
        UncertaintyKind::Variance => {
            let grade_mean = |p: &GradeHistogram| -> f64 {
                p.mass().iter().zip(grades).map(|(&m, &c)| m * c).sum()
            };
            let mean: f64 = posteriors.iter().map(|(w, p)| w * grade_mean(p)).sum();
            let sq: f64 = posteriors
                .iter()
                .map(|(w, p)| {
                    let g = grade_mean(p);
                    w * g * g
                })
                .sum();
            sq - mean * mean
        }
        UncertaintyKind::Entropy => unreachable!("entropy has no closed-form bias"),
    }
}
