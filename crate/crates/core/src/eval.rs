//! Evaluation: rank-based metrics (AUC via the Mann-Whitney statistic,
//! Spearman correlation on midranks), grade aggregations against adjudicated
//! diagnoses, Wasserstein-based continuous disagreement, doctor subsampling,
//! and the train-size sweep.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::learner::{train, MlpModel, TrainConfig, TrainMode};
use crate::oracle::{wasserstein_point_mass, TransportMetric};
use crate::uncertainty::{empirical_histogram, GradeScale, UncertaintyKind};
use crate::util::{split_seed, stream_rng};
use crate::worlds::LabeledInstance;

/// Midranks of a vector: 1-based ranks with ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(score+ > score-) + P(tie)/2`, computed from midranks.
pub fn roc_auc(scores: &[f64], targets: &[bool]) -> Result<f64> {
    if scores.len() != targets.len() {
        return Err(Error::invalid("scores and targets must have equal length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores must not be NaN"));
    }
    let n_pos = targets.iter().filter(|&&t| t).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUC undefined: both classes must be present".into()));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(targets)
        .filter(|(_, &t)| t)
        .map(|(&r, _)| r)
        .sum();
    Ok((rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64)
}

/// ROC curve points `(fpr, tpr, threshold)`, one per distinct score, sweeping
/// thresholds from high to low; the classifier predicts positive when
/// `score >= threshold`.
pub fn roc_curve(scores: &[f64], targets: &[bool]) -> Result<Vec<(f64, f64, f64)>> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::invalid("scores and targets must be nonempty and equal length"));
    }
    let n_pos = targets.iter().filter(|&&t| t).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUC undefined: both classes must be present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut points = vec![(0.0, 0.0, f64::INFINITY)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if targets[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64, threshold));
    }
    Ok(points)
}

/// Spearman rank correlation: Pearson correlation of midranks (tie-robust).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("need two equal-length vectors of length >= 2"));
    }
    let ra = midranks(a);
    let rb = midranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        var_a += (x - mean) * (x - mean);
        var_b += (y - mean) * (y - mean);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::Undefined("correlation undefined for constant vector".into()));
    }
    Ok(cov / (var_a * var_b).sqrt())
}

/// Modal grade; ties break toward the lower grade.
pub fn aggregate_majority(labels: &[usize]) -> Result<usize> {
    if labels.is_empty() {
        return Err(Error::invalid("no labels"));
    }
    let max = *labels.iter().max().unwrap();
    let mut counts = vec![0usize; max + 1];
    for &l in labels {
        counts[l] += 1;
    }
    let best = counts.iter().max().unwrap();
    Ok(counts.iter().position(|c| c == best).unwrap())
}

/// Sorted middle grade; even counts take the lower middle.
pub fn aggregate_median(labels: &[usize]) -> Result<usize> {
    if labels.is_empty() {
        return Err(Error::invalid("no labels"));
    }
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    Ok(sorted[(sorted.len() - 1) / 2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Majority,
    Median,
}

impl Aggregation {
    pub fn apply(self, labels: &[usize]) -> Result<usize> {
        match self {
            Aggregation::Majority => aggregate_majority(labels),
            Aggregation::Median => aggregate_median(labels),
        }
    }
}

/// An instance of the adjudicated evaluation set: many individual grades plus
/// one consensus grade.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjudicatedInstance {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub adjudicated: usize,
}

/// Binary disagreement between the aggregated individual grades and the
/// adjudicated grade (1 = disagreement). With `referable_only`, grades are
/// first binarized at the referable cut.
pub fn agreement_labels(
    instances: &[AdjudicatedInstance],
    aggregation: Aggregation,
    referable_only: bool,
    scale: &GradeScale,
) -> Result<Vec<bool>> {
    if instances.is_empty() {
        return Err(Error::invalid("no instances"));
    }
    instances
        .iter()
        .map(|inst| {
            let agg = aggregation.apply(&inst.labels)?;
            Ok(if referable_only {
                scale.is_referable(agg) != scale.is_referable(inst.adjudicated)
            } else {
                agg != inst.adjudicated
            })
        })
        .collect()
}

/// Continuous disagreement: Wasserstein distance from each instance's
/// empirical histogram to the point mass at its adjudicated grade.
pub fn continuous_disagreement(
    instances: &[AdjudicatedInstance],
    metric: TransportMetric,
    scale: &GradeScale,
) -> Result<Vec<f64>> {
    if instances.is_empty() {
        return Err(Error::invalid("no instances"));
    }
    instances
        .iter()
        .map(|inst| {
            let h = empirical_histogram(&inst.labels, scale)?;
            wasserstein_point_mass(&h, inst.adjudicated, metric, scale)
        })
        .collect()
}

/// Mean Spearman correlation between the ground-truth ranking and the ranking
/// induced by `n_doctors` subsampled grades, over seeded repeats.
pub fn subsample_doctor_ranking(
    instances: &[AdjudicatedInstance],
    n_doctors: usize,
    metric: TransportMetric,
    ground_truth: &[f64],
    scale: &GradeScale,
    seed: u64,
    repeats: usize,
) -> Result<f64> {
    if n_doctors == 0 || repeats == 0 {
        return Err(Error::invalid("need n_doctors >= 1 and repeats >= 1"));
    }
    if ground_truth.len() != instances.len() {
        return Err(Error::invalid("ground truth must cover every instance"));
    }
    if instances.iter().any(|i| i.labels.len() < n_doctors) {
        return Err(Error::invalid(format!(
            "every instance needs at least {n_doctors} labels"
        )));
    }
    let mut total = 0.0;
    for rep in 0..repeats {
        let mut rng = stream_rng(seed, split_seed(0xD0C, rep as u64));
        let mut sub_scores = Vec::with_capacity(instances.len());
        for inst in instances {
            let mut pool = inst.labels.clone();
            for i in 0..n_doctors {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            let h = empirical_histogram(&pool[..n_doctors], scale)?;
            sub_scores.push(wasserstein_point_mass(&h, inst.adjudicated, metric, scale)?);
        }
        total += spearman(&sub_scores, ground_truth)?;
    }
    Ok(total / repeats as f64)
}

/// Paired score/target vectors with the applicable summary statistic.
#[derive(Debug, Clone, Serialize)]
pub struct RankingReport {
    pub scores: Vec<f64>,
    pub targets: Vec<f64>,
    pub n: usize,
    pub auc: Option<f64>,
    pub spearman: Option<f64>,
}

impl RankingReport {
    pub fn binary(scores: Vec<f64>, targets: &[bool]) -> Result<Self> {
        let auc = roc_auc(&scores, targets)?;
        Ok(Self {
            n: scores.len(),
            targets: targets.iter().map(|&t| t as u8 as f64).collect(),
            scores,
            auc: Some(auc),
            spearman: None,
        })
    }

    pub fn continuous(scores: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        let rho = spearman(&scores, &targets)?;
        Ok(Self { n: scores.len(), scores, targets, auc: None, spearman: Some(rho) })
    }
}

/// Model scores on a feature set: the high-uncertainty probability for DUP
/// models, the post-processed uncertainty of the predicted grade distribution
/// for UVC models.
pub fn score_features(
    model: &MlpModel,
    features: &[Vec<f64>],
    kind: UncertaintyKind,
    scale: &GradeScale,
) -> Result<Vec<f64>> {
    features
        .iter()
        .map(|x| match model.mode() {
            TrainMode::Dup => model.dup_score(x),
            TrainMode::Uvc => model.uvc_score(x, kind, scale),
        })
        .collect()
}

/// As [`score_features`], over labeled instances.
pub fn score_instances(
    model: &MlpModel,
    instances: &[LabeledInstance],
    kind: UncertaintyKind,
    scale: &GradeScale,
) -> Result<Vec<f64>> {
    instances
        .iter()
        .map(|inst| match model.mode() {
            TrainMode::Dup => model.dup_score(&inst.features),
            TrainMode::Uvc => model.uvc_score(&inst.features, kind, scale),
        })
        .collect()
}

/// One sweep cell: a training-set fraction and mode with AUC aggregated over
/// seeds.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub mode: TrainMode,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub runs: usize,
}

/// Trains both modes at each training-set fraction (group-respecting
/// subsample, one per seed) and evaluates AUC against the binarized target on
/// the fixed test split. Cells run in parallel; each owns its seed stream.
pub fn train_size_sweep(
    train_set: &[LabeledInstance],
    test_set: &[LabeledInstance],
    scale: &GradeScale,
    fractions: &[f64],
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::invalid("fractions must lie in (0, 1]"));
    }
    if train_set.is_empty() || test_set.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("need train data, test data, and seeds"));
    }
    let targets: Vec<bool> = test_set
        .iter()
        .map(|i| i.target(config.uncertainty))
        .collect::<Result<_>>()?;

    let cells: Vec<(f64, TrainMode, u64)> = fractions
        .iter()
        .flat_map(|&f| {
            seeds.iter().flat_map(move |&s| {
                [(f, TrainMode::Dup, s), (f, TrainMode::Uvc, s)]
            })
        })
        .collect();

    let aucs: Vec<Result<Option<f64>>> = cells
        .par_iter()
        .map(|&(fraction, mode, seed)| {
            let subset = subsample_groups(train_set, fraction, seed);
            let mut cfg = config.clone();
            cfg.mode = mode;
            cfg.seed = seed;
            if mode == TrainMode::Dup {
                let hot: Vec<bool> = subset
                    .iter()
                    .map(|i| i.target(cfg.uncertainty))
                    .collect::<Result<_>>()?;
                if hot.iter().all(|&t| t) || hot.iter().all(|&t| !t) {
                    log::warn!(
                        "fraction {fraction} seed {seed}: subsample is single pixel class, skipping"
                    );
                    return Ok(None);
                }
            }
            let report = train(&subset, &cfg)?;
            let scores = score_instances(&report.model, test_set, cfg.uncertainty, scale)?;
            roc_auc(&scores, &targets).map(Some)
        })
        .collect();

    let mut rows = Vec::new();
    for &fraction in fractions {
        for mode in [TrainMode::Dup, TrainMode::Uvc] {
            let mut values = Vec::new();
            for (cell, auc) in cells.iter().zip(&aucs) {
                if cell.0 == fraction && cell.1 == mode {
                    match auc {
                        Ok(Some(v)) => values.push(*v),
                        Ok(None) => {}
                        Err(e) => return Err(Error::data(format!("sweep cell failed: {e}"))),
                    }
                }
            }
            if values.is_empty() {
                continue;
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / values.len() as f64;
            rows.push(SweepRow {
                fraction,
                mode,
                mean_auc: mean,
                std_auc: var.sqrt(),
                runs: values.len(),
            });
        }
    }
    Ok(rows)
}

/// Group-respecting subsample: keeps the first `ceil(fraction * n_groups)`
/// groups of a seeded shuffle.
fn subsample_groups(instances: &[LabeledInstance], fraction: f64, seed: u64) -> Vec<LabeledInstance> {
    let mut groups: Vec<&str> = Vec::new();
    for inst in instances {
        if !groups.contains(&inst.group_id.as_str()) {
            groups.push(&inst.group_id);
        }
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut rng = stream_rng(seed, 0xFAAC);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let keep = ((fraction * groups.len() as f64).ceil() as usize).clamp(1, groups.len());
    let kept: std::collections::BTreeSet<&str> =
        order[..keep].iter().map(|&gi| groups[gi]).collect();
    instances
        .iter()
        .filter(|inst| kept.contains(inst.group_id.as_str()))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn auc_worked_example() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let targets = [false, false, true, true];
        assert_abs_diff_eq!(roc_auc(&scores, &targets).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn auc_extremes_and_errors() {
        let targets = [false, false, true, true];
        assert_abs_diff_eq!(
            roc_auc(&[0.0, 0.1, 0.8, 0.9], &targets).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            roc_auc(&[0.9, 0.8, 0.1, 0.0], &targets).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.2], &[true, false]).is_err());
    }

    #[test]
    fn auc_brute_force_agreement() {
        let mut rng = stream_rng(5, 0);
        for _ in 0..20 {
            let n = 50;
            let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 8.0).round() / 8.0).collect();
            let targets: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
            if targets.iter().all(|&t| t) || targets.iter().all(|&t| !t) {
                continue;
            }
            let fast = roc_auc(&scores, &targets).unwrap();
            // O(n^2) pair count
            let mut wins = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if targets[i] && !targets[j] {
                        pairs += 1.0;
                        if scores[i] > scores[j] {
                            wins += 1.0;
                        } else if scores[i] == scores[j] {
                            wins += 0.5;
                        }
                    }
                }
            }
            assert_abs_diff_eq!(fast, wins / pairs, epsilon = 1e-12);
        }
    }

    #[test]
    fn auc_complement_identity() {
        let mut rng = stream_rng(6, 0);
        let scores: Vec<f64> = (0..80).map(|_| rng.random()).collect();
        let targets: Vec<bool> = (0..80).map(|i| i % 3 == 0).collect();
        let a = roc_auc(&scores, &targets).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = roc_auc(&neg, &targets).unwrap();
        assert_abs_diff_eq!(a + b, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn roc_curve_endpoints() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let targets = [false, false, true, true];
        let curve = roc_curve(&scores, &targets).unwrap();
        assert_eq!(curve.first().unwrap().0, 0.0);
        assert_eq!(curve.first().unwrap().1, 0.0);
        assert_eq!(curve.last().unwrap().0, 1.0);
        assert_eq!(curve.last().unwrap().1, 1.0);
    }

    #[test]
    fn spearman_worked_examples() {
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 3.0], &[5.0, 1.0, -2.0]).unwrap(),
            -1.0,
            epsilon = 1e-15
        );
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_matches_displacement_formula_without_ties() {
        let mut rng = stream_rng(7, 0);
        for _ in 0..20 {
            let n = 30;
            let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let ra = midranks(&a);
            let rb = midranks(&b);
            let d2: f64 = ra.iter().zip(&rb).map(|(&x, &y)| (x - y) * (x - y)).sum();
            let n = n as f64;
            let formula = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
            assert_abs_diff_eq!(spearman(&a, &b).unwrap(), formula, epsilon = 1e-12);
        }
    }

    #[test]
    fn aggregation_rules() {
        assert_eq!(aggregate_majority(&[2, 2, 3]).unwrap(), 2);
        assert_eq!(aggregate_majority(&[2, 3]).unwrap(), 2); // tie -> lower
        assert_eq!(aggregate_majority(&[5, 5, 5, 1]).unwrap(), 5);

        assert_eq!(aggregate_median(&[1, 3, 5]).unwrap(), 3);
        assert_eq!(aggregate_median(&[2, 3, 4, 5]).unwrap(), 3); // lower middle
        assert_eq!(aggregate_median(&[4]).unwrap(), 4);
    }

    #[test]
    fn agreement_label_rules() {
        let scale = GradeScale::clinical_5point(); // referable at index 2
        let inst = |labels: Vec<usize>, adjudicated| AdjudicatedInstance {
            features: vec![0.0],
            labels,
            adjudicated,
        };
        let instances = vec![
            inst(vec![2, 2, 2], 2), // exact agreement
            inst(vec![1, 1, 2], 2), // median 1 vs adjudicated 2: both below cut
            inst(vec![1, 1, 1], 2), // median 1 (non-referable) vs 2 (referable)
            inst(vec![3, 3, 4], 4), // median 3 vs 4: both referable
        ];
        let plain =
            agreement_labels(&instances, Aggregation::Median, false, &scale).unwrap();
        assert_eq!(plain, vec![false, true, true, true]);
        let referable =
            agreement_labels(&instances, Aggregation::Median, true, &scale).unwrap();
        assert_eq!(referable, vec![false, false, true, false]);
    }

    #[test]
    fn continuous_disagreement_values() {
        let scale = GradeScale::clinical_5point();
        let instances = vec![
            AdjudicatedInstance { features: vec![], labels: vec![0, 0, 0], adjudicated: 0 },
            AdjudicatedInstance { features: vec![], labels: vec![0, 0, 2, 2], adjudicated: 0 },
        ];
        let d = continuous_disagreement(&instances, TransportMetric::Abs, &scale).unwrap();
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 1.0, epsilon = 1e-12);

        let d = continuous_disagreement(&instances, TransportMetric::Binary, &scale).unwrap();
        assert_abs_diff_eq!(d[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn full_subsample_reproduces_ground_truth() {
        let scale = GradeScale::clinical_5point();
        let world = crate::worlds::GaussianMixtureWorld::new(
            vec![vec![-1.0], vec![0.0], vec![1.0], vec![2.0], vec![-2.0]],
            vec![0.2; 5],
            1.0,
        )
        .unwrap();
        let instances = crate::worlds::gen_adjudicated_dataset(&world, 60, 8, 3).unwrap();
        let gt = continuous_disagreement(&instances, TransportMetric::Abs, &scale).unwrap();
        let rho = subsample_doctor_ranking(
            &instances,
            8,
            TransportMetric::Abs,
            &gt,
            &scale,
            11,
            5,
        )
        .unwrap();
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-12);

        assert!(subsample_doctor_ranking(
            &instances,
            9,
            TransportMetric::Abs,
            &gt,
            &scale,
            11,
            5
        )
        .is_err());
    }
}
