//! Grade histograms and the concave uncertainty scores computed from them.
//!
//! A grade histogram is the normalized count vector of the grades several
//! experts assigned to one instance. The scores measure its spread:
//! `u_disagree` is the probability two fresh draws disagree, `u_var` the
//! variance of the drawn grade value, `u_entropy` the Shannon entropy.
//! All three are concave in the histogram, which is what drives the
//! overestimation bias of classify-then-score pipelines (see
//! [`crate::oracle`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for histogram normalization checks.
pub const MASS_TOL: f64 = 1e-9;

/// An ordered scale of `k` distinct grade values, plus the index of the first
/// grade that counts as "referable" (clinically actionable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeScale {
    grades: Vec<f64>,
    referable_threshold: usize,
}

impl GradeScale {
    pub fn new(grades: Vec<f64>, referable_threshold: usize) -> Result<Self> {
        if grades.len() < 2 {
            return Err(Error::invalid("grade scale needs at least 2 grades"));
        }
        if grades.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("grades must be finite"));
        }
        if grades.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("grades must be strictly increasing"));
        }
        if referable_threshold >= grades.len() {
            return Err(Error::invalid(format!(
                "referable threshold {referable_threshold} out of range for {} grades",
                grades.len()
            )));
        }
        Ok(Self { grades, referable_threshold })
    }

    /// The clinical 5-point scale: grades 1..=5, referable at grade 3.
    pub fn clinical_5point() -> Self {
        Self::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], 2).unwrap()
    }

    /// Grades 1..=k with the referable cut at the midpoint, for worlds whose
    /// grades are just component indices.
    pub fn uniform(k: usize) -> Result<Self> {
        Self::new((1..=k).map(|g| g as f64).collect(), k / 2)
    }

    pub fn k(&self) -> usize {
        self.grades.len()
    }

    pub fn grades(&self) -> &[f64] {
        &self.grades
    }

    pub fn grade(&self, idx: usize) -> f64 {
        self.grades[idx]
    }

    pub fn referable_threshold(&self) -> usize {
        self.referable_threshold
    }

    /// Whether the grade at `idx` is at or above the referable cut.
    pub fn is_referable(&self, idx: usize) -> bool {
        idx >= self.referable_threshold
    }
}

/// A normalized probability vector over grades, optionally remembering how
/// many raw labels it summarizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeHistogram {
    mass: Vec<f64>,
    count: Option<usize>,
}

impl GradeHistogram {
    /// Validates and wraps a mass vector: entries nonnegative, sum 1 within
    /// [`MASS_TOL`].
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        Self::build(mass, None)
    }

    /// As [`GradeHistogram::new`], additionally checking every entry is an
    /// integer multiple of `1/count`.
    pub fn with_count(mass: Vec<f64>, count: usize) -> Result<Self> {
        Self::build(mass, Some(count))
    }

    fn build(mass: Vec<f64>, count: Option<usize>) -> Result<Self> {
        if mass.len() < 2 {
            return Err(Error::invalid("histogram needs at least 2 bins"));
        }
        if mass.iter().any(|&m| !m.is_finite() || m < 0.0) {
            return Err(Error::invalid("histogram mass must be finite and nonnegative"));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!("histogram mass sums to {total}, not 1")));
        }
        if let Some(n) = count {
            if n == 0 {
                return Err(Error::invalid("label count must be positive"));
            }
            for &m in &mass {
                let scaled = m * n as f64;
                if (scaled - scaled.round()).abs() > MASS_TOL * n as f64 {
                    return Err(Error::invalid(format!(
                        "mass {m} is not a multiple of 1/{n}"
                    )));
                }
            }
        }
        Ok(Self { mass, count })
    }

    /// All mass on a single grade.
    pub fn point_mass(k: usize, idx: usize) -> Result<Self> {
        if idx >= k {
            return Err(Error::invalid(format!("grade {idx} out of range for k={k}")));
        }
        let mut mass = vec![0.0; k];
        mass[idx] = 1.0;
        Self::new(mass)
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn count(&self) -> Option<usize> {
        self.count
    }

    pub fn k(&self) -> usize {
        self.mass.len()
    }

    /// Index of the largest mass; ties broken toward the lower grade.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.mass.iter().enumerate().skip(1) {
            if m > self.mass[best] {
                best = i;
            }
        }
        best
    }
}

/// The three uncertainty score families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyKind {
    Disagree,
    Variance,
    Entropy,
}

impl UncertaintyKind {
    pub const ALL: [UncertaintyKind; 3] =
        [UncertaintyKind::Disagree, UncertaintyKind::Variance, UncertaintyKind::Entropy];

    pub fn name(self) -> &'static str {
        match self {
            UncertaintyKind::Disagree => "disagree",
            UncertaintyKind::Variance => "variance",
            UncertaintyKind::Entropy => "entropy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "disagree" => Ok(UncertaintyKind::Disagree),
            "variance" | "var" => Ok(UncertaintyKind::Variance),
            "entropy" => Ok(UncertaintyKind::Entropy),
            other => Err(Error::invalid(format!("unknown uncertainty kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for UncertaintyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An uncertainty score family together with the cut used to binarize it
/// into a low/high label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySpec {
    pub kind: UncertaintyKind,
    pub threshold: f64,
}

impl UncertaintySpec {
    pub fn new(kind: UncertaintyKind, threshold: f64) -> Self {
        Self { kind, threshold }
    }

    /// Checks the threshold lies in the attainable range of the score under
    /// the given scale: disagree in [0, 1-1/k], variance in
    /// [0, ((c_k-c_1)/2)^2], entropy in [0, ln k].
    pub fn validate(&self, scale: &GradeScale) -> Result<()> {
        let k = scale.k() as f64;
        let max = match self.kind {
            UncertaintyKind::Disagree => 1.0 - 1.0 / k,
            UncertaintyKind::Variance => {
                let span = scale.grade(scale.k() - 1) - scale.grade(0);
                (span / 2.0) * (span / 2.0)
            }
            UncertaintyKind::Entropy => k.ln(),
        };
        if !self.threshold.is_finite() || self.threshold < 0.0 || self.threshold > max {
            return Err(Error::invalid(format!(
                "threshold {} outside attainable range [0, {max}] for {}",
                self.threshold, self.kind
            )));
        }
        Ok(())
    }
}

/// Builds the empirical histogram of a label multiset. Labels are 0-based
/// indices into the scale.
pub fn empirical_histogram(labels: &[usize], scale: &GradeScale) -> Result<GradeHistogram> {
    if labels.is_empty() {
        return Err(Error::invalid("no labels"));
    }
    let k = scale.k();
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l >= k {
            return Err(Error::invalid(format!("unknown grade {l}")));
        }
        counts[l] += 1;
    }
    let n = labels.len();
    let mass = counts.iter().map(|&c| c as f64 / n as f64).collect();
    GradeHistogram::with_count(mass, n)
}

/// Probability that two independent draws from the histogram disagree:
/// `1 - sum_l p_l^2`. Lies in [0, 1-1/k], maximal at the uniform histogram.
pub fn u_disagree(h: &GradeHistogram) -> f64 {
    1.0 - h.mass().iter().map(|&p| p * p).sum::<f64>()
}

/// Variance of the grade value drawn from the histogram:
/// `sum_l c_l^2 p_l - (sum_l c_l p_l)^2`.
pub fn u_var(h: &GradeHistogram, scale: &GradeScale) -> Result<f64> {
    if h.k() != scale.k() {
        return Err(Error::invalid(format!(
            "histogram has {} bins but scale has {} grades",
            h.k(),
            scale.k()
        )));
    }
    let mut mean = 0.0;
    let mut sq = 0.0;
    for (&p, &c) in h.mass().iter().zip(scale.grades()) {
        mean += c * p;
        sq += c * c * p;
    }
    Ok(sq - mean * mean)
}

/// Shannon entropy `-sum_l p_l ln p_l` in nats, with `0 ln 0 = 0`.
pub fn u_entropy(h: &GradeHistogram) -> f64 {
    -h.mass()
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum::<f64>()
}

/// Dispatches to the score named by `kind`.
pub fn u_score(kind: UncertaintyKind, h: &GradeHistogram, scale: &GradeScale) -> Result<f64> {
    match kind {
        UncertaintyKind::Disagree => Ok(u_disagree(h)),
        UncertaintyKind::Variance => u_var(h, scale),
        UncertaintyKind::Entropy => Ok(u_entropy(h)),
    }
}

/// Thresholds a score into a low/high uncertainty label. The cut is strict:
/// a score exactly equal to the threshold maps to low (false).
pub fn binarize(score: f64, spec: &UncertaintySpec) -> Result<bool> {
    if score.is_nan() {
        return Err(Error::invalid("cannot binarize NaN score"));
    }
    Ok(score > spec.threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scale5() -> GradeScale {
        GradeScale::clinical_5point()
    }

    #[test]
    fn empirical_histogram_counts() {
        let s = scale5();
        // three identical labels -> point mass
        let h = empirical_histogram(&[0, 0, 0], &s).unwrap();
        assert_eq!(h.mass(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(h.count(), Some(3));

        // two of the lowest grade, one of the next
        let h = empirical_histogram(&[0, 0, 1], &s).unwrap();
        assert_abs_diff_eq!(h.mass()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(h.mass()[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(&h.mass()[2..], &[0.0, 0.0, 0.0]);

        // one of each -> uniform
        let h = empirical_histogram(&[0, 1, 2, 3, 4], &s).unwrap();
        for &m in h.mass() {
            assert_abs_diff_eq!(m, 0.2, epsilon = 1e-15);
        }
        assert_eq!(h.count(), Some(5));
    }

    #[test]
    fn empirical_histogram_errors() {
        let s = scale5();
        assert!(matches!(empirical_histogram(&[], &s), Err(Error::InvalidInput(_))));
        assert!(matches!(empirical_histogram(&[5], &s), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn empirical_histogram_permutation_invariant() {
        let s = scale5();
        let a = empirical_histogram(&[1, 4, 1, 2, 2], &s).unwrap();
        let b = empirical_histogram(&[2, 1, 2, 4, 1], &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disagree_examples() {
        let point = GradeHistogram::point_mass(5, 2).unwrap();
        assert_eq!(u_disagree(&point), 0.0);

        let unif = GradeHistogram::uniform(5).unwrap();
        assert_abs_diff_eq!(u_disagree(&unif), 0.8, epsilon = 1e-15);

        // 1 - (4/9 + 1/9) = 4/9
        let h = GradeHistogram::new(vec![2.0 / 3.0, 1.0 / 3.0, 0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(u_disagree(&h), 4.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn variance_examples() {
        let s = scale5();
        for idx in 0..5 {
            let point = GradeHistogram::point_mass(5, idx).unwrap();
            assert_abs_diff_eq!(u_var(&point, &s).unwrap(), 0.0, epsilon = 1e-12);
        }

        // mass split between grades 1 and 5: E=3, E[c^2]=13
        let h = GradeHistogram::new(vec![0.5, 0.0, 0.0, 0.0, 0.5]).unwrap();
        assert_abs_diff_eq!(u_var(&h, &s).unwrap(), 4.0, epsilon = 1e-12);

        // grades 1 and 2: 2.5 - 1.5^2
        let h = GradeHistogram::new(vec![0.5, 0.5, 0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(u_var(&h, &s).unwrap(), 0.25, epsilon = 1e-12);

        let h3 = GradeHistogram::uniform(3).unwrap();
        assert!(matches!(u_var(&h3, &s), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn variance_translation_and_scale() {
        let h = GradeHistogram::new(vec![0.2, 0.3, 0.1, 0.25, 0.15]).unwrap();
        let base = GradeScale::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], 2).unwrap();
        let shifted = GradeScale::new(vec![11.0, 12.0, 13.0, 14.0, 15.0], 2).unwrap();
        let scaled = GradeScale::new(vec![3.0, 6.0, 9.0, 12.0, 15.0], 2).unwrap();

        let v = u_var(&h, &base).unwrap();
        assert_abs_diff_eq!(u_var(&h, &shifted).unwrap(), v, epsilon = 1e-9);
        assert_abs_diff_eq!(u_var(&h, &scaled).unwrap(), 9.0 * v, epsilon = 1e-9);
    }

    #[test]
    fn entropy_examples() {
        let point = GradeHistogram::point_mass(4, 1).unwrap();
        assert_eq!(u_entropy(&point), 0.0);

        let unif = GradeHistogram::uniform(7).unwrap();
        assert_abs_diff_eq!(u_entropy(&unif), (7.0f64).ln(), epsilon = 1e-12);

        let h = GradeHistogram::new(vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(u_entropy(&h), (2.0f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn binarize_rules() {
        let spec = UncertaintySpec::new(UncertaintyKind::Variance, 2.0 / 9.0);
        assert!(!binarize(0.0, &spec).unwrap());

        let spec = UncertaintySpec::new(UncertaintyKind::Disagree, 0.3);
        assert!(binarize(4.0 / 9.0, &spec).unwrap());
        // ties map to low
        assert!(!binarize(0.3, &spec).unwrap());
        assert!(binarize(f64::NAN, &spec).is_err());
    }

    #[test]
    fn spec_threshold_ranges() {
        let s = scale5();
        assert!(UncertaintySpec::new(UncertaintyKind::Disagree, 0.5).validate(&s).is_ok());
        assert!(UncertaintySpec::new(UncertaintyKind::Disagree, 0.9).validate(&s).is_err());
        assert!(UncertaintySpec::new(UncertaintyKind::Variance, 2.0 / 9.0).validate(&s).is_ok());
        assert!(UncertaintySpec::new(UncertaintyKind::Variance, 4.5).validate(&s).is_err());
        assert!(UncertaintySpec::new(UncertaintyKind::Entropy, 1.0).validate(&s).is_ok());
        assert!(UncertaintySpec::new(UncertaintyKind::Entropy, 1.7).validate(&s).is_err());
    }

    #[test]
    fn histogram_validation() {
        assert!(GradeHistogram::new(vec![0.5, 0.6]).is_err());
        assert!(GradeHistogram::new(vec![-0.1, 1.1]).is_err());
        assert!(GradeHistogram::new(vec![1.0]).is_err());
        // 0.5 is not a multiple of 1/3
        assert!(GradeHistogram::with_count(vec![0.5, 0.5], 3).is_err());
        assert!(GradeHistogram::with_count(vec![0.5, 0.5], 4).is_ok());
    }
}
