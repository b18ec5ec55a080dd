//! Wasserstein distances between grade histograms: the point-mass closed form
//! and an exact small-support min-cost transport solver used as its oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::{GradeHistogram, GradeScale};

/// Largest support size accepted by the brute-force solver.
pub const MAX_SUPPORT: usize = 12;

/// Ground metrics between grades.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMetric {
    /// Absolute grade-value difference.
    Abs,
    /// Squared grade-value difference; the reported distance is the square
    /// root of the optimal expected cost (2-Wasserstein).
    SquaredW2,
    /// 0/1 disagreement.
    Binary,
}

impl TransportMetric {
    pub const ALL: [TransportMetric; 3] =
        [TransportMetric::Abs, TransportMetric::SquaredW2, TransportMetric::Binary];

    pub fn name(self) -> &'static str {
        match self {
            TransportMetric::Abs => "abs",
            TransportMetric::SquaredW2 => "squared_w2",
            TransportMetric::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "abs" => Ok(TransportMetric::Abs),
            "squared_w2" | "w2" => Ok(TransportMetric::SquaredW2),
            "binary" => Ok(TransportMetric::Binary),
            other => Err(Error::invalid(format!("unknown transport metric {other:?}"))),
        }
    }

    fn ground_cost(self, scale: &GradeScale, r: usize, t: usize) -> f64 {
        match self {
            TransportMetric::Abs => (scale.grade(r) - scale.grade(t)).abs(),
            TransportMetric::SquaredW2 => {
                let d = scale.grade(r) - scale.grade(t);
                d * d
            }
            TransportMetric::Binary => {
                if r == t {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    fn finalize(self, expected_cost: f64) -> f64 {
        match self {
            TransportMetric::SquaredW2 => expected_cost.max(0.0).sqrt(),
            _ => expected_cost,
        }
    }
}

impl std::fmt::Display for TransportMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A transport plan between two histograms over the same scale; `plan[r][t]`
/// is the mass moved from grade r to grade t. `cost` is the reported distance
/// (square-rooted for [`TransportMetric::SquaredW2`]).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    pub plan: Vec<Vec<f64>>,
    pub cost: f64,
}

/// Wasserstein distance from a histogram to the point mass at grade `a`:
/// the expected ground distance of a histogram draw to `a`.
pub fn wasserstein_point_mass(
    h: &GradeHistogram,
    a: usize,
    metric: TransportMetric,
    scale: &GradeScale,
) -> Result<f64> {
    if h.k() != scale.k() {
        return Err(Error::invalid("histogram and scale disagree on grade count"));
    }
    if a >= scale.k() {
        return Err(Error::invalid(format!("grade {a} out of range")));
    }
    let value = match metric {
        TransportMetric::Binary => 1.0 - h.mass()[a],
        _ => {
            let expected: f64 = h
                .mass()
                .iter()
                .enumerate()
                .map(|(l, &p)| p * metric.ground_cost(scale, l, a))
                .sum();
            metric.finalize(expected)
        }
    };
    Ok(value)
}

/// Exact minimum-cost transport between two histograms by transportation
/// simplex on their supports. Only intended as a test oracle; supports are
/// capped at [`MAX_SUPPORT`] points each.
pub fn brute_force_wasserstein(
    h1: &GradeHistogram,
    h2: &GradeHistogram,
    metric: TransportMetric,
    scale: &GradeScale,
) -> Result<(f64, TransportPlan)> {
    if h1.k() != scale.k() || h2.k() != scale.k() {
        return Err(Error::invalid("histograms and scale disagree on grade count"));
    }
    let src: Vec<usize> = (0..h1.k()).filter(|&l| h1.mass()[l] > 0.0).collect();
    let dst: Vec<usize> = (0..h2.k()).filter(|&l| h2.mass()[l] > 0.0).collect();
    if src.len() > MAX_SUPPORT || dst.len() > MAX_SUPPORT {
        return Err(Error::invalid(format!(
            "support larger than {MAX_SUPPORT} points; brute force refused"
        )));
    }
    let supply: Vec<f64> = src.iter().map(|&l| h1.mass()[l]).collect();
    let demand: Vec<f64> = dst.iter().map(|&l| h2.mass()[l]).collect();
    let cost: Vec<Vec<f64>> = src
        .iter()
        .map(|&r| dst.iter().map(|&t| metric.ground_cost(scale, r, t)).collect())
        .collect();

    let flows = transportation_simplex(&supply, &demand, &cost)?;

    let mut plan = vec![vec![0.0; h2.k()]; h1.k()];
    let mut expected = 0.0;
    for (si, &r) in src.iter().enumerate() {
        for (di, &t) in dst.iter().enumerate() {
            let f = flows[si][di].max(0.0);
            plan[r][t] = f;
            expected += f * cost[si][di];
        }
    }
    let value = metric.finalize(expected);
    Ok((value, TransportPlan { plan, cost: value }))
}

/// Transportation simplex with a northwest-corner start and lowest-index
/// pivoting. Supplies and demands must sum to the same total.
fn transportation_simplex(
    supply: &[f64],
    demand: &[f64],
    cost: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let n = supply.len();
    let m = demand.len();
    if n == 0 || m == 0 {
        return Err(Error::invalid("empty support"));
    }

    // Northwest-corner initial basis: exactly n+m-1 cells, advancing one
    // index per step. Shipping the full row remainder in the last column (and
    // the full column remainder in the last row) keeps marginals exact.
    let mut basic: Vec<(usize, usize, f64)> = Vec::with_capacity(n + m - 1);
    let mut a_rem = supply.to_vec();
    let mut b_rem = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let flow = if j == m - 1 {
            a_rem[i]
        } else if i == n - 1 {
            b_rem[j]
        } else {
            a_rem[i].min(b_rem[j])
        };
        basic.push((i, j, flow));
        a_rem[i] -= flow;
        b_rem[j] -= flow;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if j == m - 1 {
            i += 1;
        } else if i == n - 1 {
            j += 1;
        } else if a_rem[i] <= b_rem[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    debug_assert_eq!(basic.len(), n + m - 1);

    let max_iters = 1000 * (n + m);
    for _ in 0..max_iters {
        // duals from the basis tree (nodes: rows 0..n, cols n..n+m)
        let mut u = vec![f64::NAN; n];
        let mut v = vec![f64::NAN; m];
        u[0] = 0.0;
        let mut settled = 1;
        while settled < n + m {
            let before = settled;
            for &(r, c, _) in &basic {
                if u[r].is_nan() && !v[c].is_nan() {
                    u[r] = cost[r][c] - v[c];
                    settled += 1;
                } else if !u[r].is_nan() && v[c].is_nan() {
                    v[c] = cost[r][c] - u[r];
                    settled += 1;
                }
            }
            if settled == before {
                return Err(Error::Invariant("transport basis is not a spanning tree".into()));
            }
        }

        // entering cell: first (row-major) with negative reduced cost
        let mut entering = None;
        'outer: for r in 0..n {
            for c in 0..m {
                if basic.iter().any(|&(br, bc, _)| br == r && bc == c) {
                    continue;
                }
                if cost[r][c] - u[r] - v[c] < -1e-12 {
                    entering = Some((r, c));
                    break 'outer;
                }
            }
        }
        let Some((er, ec)) = entering else {
            let mut flows = vec![vec![0.0; m]; n];
            for &(r, c, f) in &basic {
                flows[r][c] = f;
            }
            return Ok(flows);
        };

        // unique cycle: tree path from col node ec to row node er, then the
        // entering edge closes it. Path found by BFS over basis edges.
        let col = |c: usize| n + c;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n + m]; // node -> (prev node, basis idx)
        let mut visited = vec![false; n + m];
        let mut queue = std::collections::VecDeque::new();
        visited[col(ec)] = true;
        queue.push_back(col(ec));
        while let Some(node) = queue.pop_front() {
            if node == er {
                break;
            }
            for (bi, &(r, c, _)) in basic.iter().enumerate() {
                let (from, to) = (r, col(c));
                let next = if node == from {
                    to
                } else if node == to {
                    from
                } else {
                    continue;
                };
                if !visited[next] {
                    visited[next] = true;
                    parent[next] = Some((node, bi));
                    queue.push_back(next);
                }
            }
        }
        if !visited[er] {
            return Err(Error::Invariant("transport basis lost connectivity".into()));
        }
        // edges along the path from er back to ec; adjacent to the entering
        // edge's row end first, so signs alternate -, +, -, ... from there
        let mut path_edges = Vec::new();
        let mut node = er;
        while let Some((prev, bi)) = parent[node] {
            path_edges.push(bi);
            node = prev;
        }

        let mut delta = f64::INFINITY;
        let mut leaving = None;
        for (pos, &bi) in path_edges.iter().enumerate() {
            if pos % 2 == 0 {
                // negative position on the cycle
                let f = basic[bi].2;
                if f < delta {
                    delta = f;
                    leaving = Some(bi);
                }
            }
        }
        let leaving = leaving.ok_or_else(|| Error::Invariant("degenerate transport cycle".into()))?;

        for (pos, &bi) in path_edges.iter().enumerate() {
            if pos % 2 == 0 {
                basic[bi].2 -= delta;
            } else {
                basic[bi].2 += delta;
            }
        }
        basic[leaving] = (er, ec, delta);
    }
    Err(Error::Invariant("transportation simplex failed to converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scale5() -> GradeScale {
        GradeScale::clinical_5point()
    }

    #[test]
    fn point_mass_distance_examples() {
        let s = scale5();
        for metric in TransportMetric::ALL {
            let point = GradeHistogram::point_mass(5, 3).unwrap();
            assert_abs_diff_eq!(
                wasserstein_point_mass(&point, 3, metric, &s).unwrap(),
                0.0,
                epsilon = 1e-15
            );
        }

        let h = GradeHistogram::new(vec![0.5, 0.0, 0.5, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(
            wasserstein_point_mass(&h, 0, TransportMetric::Abs, &s).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            wasserstein_point_mass(&h, 0, TransportMetric::SquaredW2, &s).unwrap(),
            2.0f64.sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            wasserstein_point_mass(&h, 0, TransportMetric::Binary, &s).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn binary_point_mass_is_one_minus_mass() {
        let s = scale5();
        let h = GradeHistogram::new(vec![0.1, 0.2, 0.3, 0.25, 0.15]).unwrap();
        for a in 0..5 {
            assert_abs_diff_eq!(
                wasserstein_point_mass(&h, a, TransportMetric::Binary, &s).unwrap(),
                1.0 - h.mass()[a],
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn brute_force_matches_point_mass_and_plan_is_exact() {
        let s = scale5();
        let h1 = GradeHistogram::new(vec![0.25, 0.125, 0.375, 0.125, 0.125]).unwrap();
        let t0 = 1;
        let h2 = GradeHistogram::point_mass(5, t0).unwrap();
        for metric in TransportMetric::ALL {
            let closed = wasserstein_point_mass(&h1, t0, metric, &s).unwrap();
            let (lp, plan) = brute_force_wasserstein(&h1, &h2, metric, &s).unwrap();
            assert_abs_diff_eq!(closed, lp, epsilon = 1e-9);
            for r in 0..5 {
                for t in 0..5 {
                    let expect = if t == t0 { h1.mass()[r] } else { 0.0 };
                    assert_eq!(plan.plan[r][t], expect, "plan[{r}][{t}]");
                }
            }
        }
    }

    #[test]
    fn identical_histograms_have_zero_cost_diagonal_plan() {
        let s = scale5();
        let h = GradeHistogram::new(vec![0.2, 0.3, 0.1, 0.25, 0.15]).unwrap();
        for metric in TransportMetric::ALL {
            let (value, plan) = brute_force_wasserstein(&h, &h, metric, &s).unwrap();
            assert_abs_diff_eq!(value, 0.0, epsilon = 1e-12);
            for r in 0..5 {
                assert_abs_diff_eq!(plan.plan[r][r], h.mass()[r], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn plan_marginals_match() {
        let s = GradeScale::uniform(6).unwrap();
        let mut rng = crate::util::stream_rng(77, 0);
        for _ in 0..25 {
            let h1 = random_hist(6, &mut rng);
            let h2 = random_hist(6, &mut rng);
            let (_, plan) = brute_force_wasserstein(&h1, &h2, TransportMetric::Abs, &s).unwrap();
            for r in 0..6 {
                let row: f64 = plan.plan[r].iter().sum();
                assert_abs_diff_eq!(row, h1.mass()[r], epsilon = 1e-9);
            }
            for t in 0..6 {
                let col: f64 = plan.plan.iter().map(|row| row[t]).sum();
                assert_abs_diff_eq!(col, h2.mass()[t], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn symmetric_metrics_give_symmetric_values() {
        let s = scale5();
        let mut rng = crate::util::stream_rng(99, 0);
        for _ in 0..50 {
            let h1 = random_hist(5, &mut rng);
            let h2 = random_hist(5, &mut rng);
            for metric in TransportMetric::ALL {
                let (a, _) = brute_force_wasserstein(&h1, &h2, metric, &s).unwrap();
                let (b, _) = brute_force_wasserstein(&h2, &h1, metric, &s).unwrap();
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn abs_metric_equals_cdf_distance_on_unit_spaced_grades() {
        // On grades 1..k the abs-metric transport cost has the closed form
        // sum_t |CDF1(t) - CDF2(t)|, an independent check of the simplex.
        let s = scale5();
        let mut rng = crate::util::stream_rng(1234, 0);
        for _ in 0..40 {
            let h1 = random_hist(5, &mut rng);
            let h2 = random_hist(5, &mut rng);
            let (lp, _) = brute_force_wasserstein(&h1, &h2, TransportMetric::Abs, &s).unwrap();
            let mut cdf = 0.0;
            let mut total = 0.0;
            for l in 0..5 {
                cdf += h1.mass()[l] - h2.mass()[l];
                total += cdf.abs();
            }
            assert_abs_diff_eq!(lp, total, epsilon = 1e-9);
        }
    }

    #[test]
    fn oversize_support_is_rejected() {
        let s = GradeScale::uniform(13).unwrap();
        let h = GradeHistogram::uniform(13).unwrap();
        assert!(brute_force_wasserstein(&h, &h, TransportMetric::Abs, &s).is_err());
    }

    fn random_hist<R: rand::Rng>(k: usize, rng: &mut R) -> GradeHistogram {
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        GradeHistogram::new(raw.into_iter().map(|v| v / total).collect()).unwrap()
    }
}
