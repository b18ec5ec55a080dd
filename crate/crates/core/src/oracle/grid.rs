//! Grid discretization of one-dimensional Gaussian mixture worlds, turning
//! the closed-form posterior story into a finite world the enumeration
//! oracles can chew on. The grid is symmetric around zero so the absolute-
//! value obscuring map folds pairs of grid points exactly.

use crate::error::{Error, Result};
use crate::uncertainty::GradeScale;
use crate::worlds::{DiscreteWorld, GaussianMixtureWorld};

/// A discretized 1-D world plus the grid geometry: `obs_values[o]` is the
/// observation value of grid point `o`, `x_values[x]` the absolute value
/// backing obscured id `x`.
#[derive(Debug, Clone)]
pub struct DiscretizedWorld1d {
    pub world: DiscreteWorld,
    pub obs_values: Vec<f64>,
    pub x_values: Vec<f64>,
}

/// Discretizes a 1-D mixture on the grid `{-half_width, ..., +half_width}`
/// with the given spacing; the obscuring map sends a grid point to its
/// absolute value.
pub fn discretize_gaussian_1d(
    world: &GaussianMixtureWorld,
    half_width: f64,
    step: f64,
) -> Result<DiscretizedWorld1d> {
    if world.dim() != 1 {
        return Err(Error::invalid("grid discretization needs a 1-D world"));
    }
    if !(step > 0.0) || !(half_width > 0.0) {
        return Err(Error::invalid("grid step and half-width must be positive"));
    }
    let n = (half_width / step).round() as i64;
    if n < 1 {
        return Err(Error::invalid("grid has no interior points"));
    }

    let m = world.component_count();
    let var = world.variance();
    let mut obs_values = Vec::with_capacity((2 * n + 1) as usize);
    let mut joint = Vec::with_capacity((2 * n + 1) as usize);
    let mut obscure_map = Vec::with_capacity((2 * n + 1) as usize);
    for i in -n..=n {
        // (i as f64) * step keeps the grid exactly sign-symmetric in floats
        let o = i as f64 * step;
        obs_values.push(o);
        let row: Vec<f64> = world
            .centers()
            .iter()
            .zip(world.weights())
            .map(|(c, &q)| {
                let d = o - c[0];
                q * (-d * d / (2.0 * var)).exp()
            })
            .collect();
        joint.push(row);
        obscure_map.push(i.unsigned_abs() as usize);
    }

    let world = DiscreteWorld::build(joint, obscure_map, Some(GradeScale::uniform(m)?))?;
    let mut x_values = vec![0.0; world.x_count()];
    for (o, &ov) in obs_values.iter().enumerate() {
        x_values[world.obscure(o)] = ov.abs();
    }
    Ok(DiscretizedWorld1d { world, obs_values, x_values })
}
