//! Sample weighting, stratified folds, bootstrapped cross-validation, grid
//! search, ROC analysis and threshold tuning.

mod cv;
mod roc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, AGE_BOUNDARY_MONTHS};
use crate::encoding::FeatureMatrix;
use crate::rng::rng_from;
use crate::{Error, Result};

pub use cv::{
    bootstrapped_cv, grid_search, percentile, CvReport, FnTrainer, GridEntry, GridResult,
    MetricSummary, ParamGrid, RoundResult, Trainer,
};
pub use roc::{roc, sens_spec_at, tune_threshold, RocCurve, RocPoint, TunedThreshold};

pub const DEFAULT_AGE_BOUNDARIES: [u8; 1] = [AGE_BOUNDARY_MONTHS];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellWeight {
    pub age_group: usize,
    pub label: Label,
    pub count: usize,
    pub weight: f64,
}

/// Per-sample weights equalising total weight over (age group, label) cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    /// Ascending; age group `g` holds ages in `[boundaries[g-1], boundaries[g])`.
    pub boundaries: Vec<u8>,
    pub cells: Vec<CellWeight>,
    pub weights: Vec<f64>,
}

pub fn age_group(age: u8, boundaries: &[u8]) -> usize {
    boundaries.iter().filter(|&&b| age >= b).count()
}

fn group_name(g: usize, boundaries: &[u8]) -> String {
    match (g.checked_sub(1).map(|i| boundaries[i]), boundaries.get(g)) {
        (None, None) => "all ages".into(),
        (None, Some(hi)) => format!("age <{hi}"),
        (Some(lo), None) => format!("age >={lo}"),
        (Some(lo), Some(hi)) => format!("age {lo}-{}", hi - 1),
    }
}

pub fn balance(ages: &[u8], labels: &[Label], boundaries: &[u8]) -> Result<WeightScheme> {
    if ages.len() != labels.len() {
        return Err(Error::Contract("ages and labels differ in length".into()));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter("age boundaries must be strictly ascending".into()));
    }
    let n_groups = boundaries.len() + 1;
    let cell = |i: usize| age_group(ages[i], boundaries) * 2 + labels[i].is_positive() as usize;
    let mut counts = vec![0usize; n_groups * 2];
    for i in 0..ages.len() {
        counts[cell(i)] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        let label = if empty % 2 == 1 { Label::Positive } else { Label::Negative };
        return Err(Error::Weighting(format!(
            "{} / {}",
            group_name(empty / 2, boundaries),
            label.as_str()
        )));
    }
    let per_cell = ages.len() as f64 / counts.len() as f64;
    let cell_weight: Vec<f64> = counts.iter().map(|&c| per_cell / c as f64).collect();
    Ok(WeightScheme {
        boundaries: boundaries.to_vec(),
        cells: counts
            .iter()
            .enumerate()
            .map(|(k, &count)| CellWeight {
                age_group: k / 2,
                label: Label::from_bool(k % 2 == 1),
                count,
                weight: cell_weight[k],
            })
            .collect(),
        weights: (0..ages.len()).map(|i| cell_weight[cell(i)]).collect(),
    })
}

pub fn balance_weights(data: &Dataset, boundaries: &[u8]) -> Result<WeightScheme> {
    let ages: Vec<u8> = data.sheets.iter().map(|s| s.age_months).collect();
    balance(&ages, &data.labels(), boundaries)
}

/// Replaces the matrix weights with balanced ones.
pub fn balance_matrix(m: &mut FeatureMatrix, boundaries: &[u8]) -> Result<WeightScheme> {
    let scheme = balance(&m.ages, &m.labels, boundaries)?;
    m.set_weights(scheme.weights.clone())?;
    Ok(scheme)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CVConfig {
    pub n_folds: usize,
    pub n_bootstrap_rounds: usize,
    pub seed: u64,
    /// Cut used for the reported sensitivity and specificity.
    pub decision_threshold: f64,
}

impl Default for CVConfig {
    fn default() -> Self {
        CVConfig {
            n_folds: 10,
            n_bootstrap_rounds: 20,
            seed: 0,
            decision_threshold: 0.5,
        }
    }
}

impl CVConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(Error::Parameter("n_folds must be at least 2".into()));
        }
        if self.n_bootstrap_rounds == 0 {
            return Err(Error::Parameter("n_bootstrap_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fold index per sample, stratified on the label. Each class is shuffled and
/// dealt round-robin; the dealing position carries over between classes so
/// fold sizes stay within one of each other.
pub fn stratified_folds(labels: &[Label], n_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if n_folds < 2 {
        return Err(Error::Parameter("n_folds must be at least 2".into()));
    }
    let mut rng = rng_from(seed);
    let mut folds = vec![0usize; labels.len()];
    let mut next = 0;
    for class in [Label::Negative, Label::Positive] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < n_folds {
            return Err(Error::Fold(format!(
                "{} {} samples for {n_folds} folds",
                members.len(),
                class.as_str()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = next % n_folds;
            next += 1;
        }
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_to_one_cells() {
        let s = balance(&[20, 20, 20, 20], &[Label::Positive, Label::Positive, Label::Positive, Label::Negative], &[])
            .unwrap();
        assert_eq!(s.weights, vec![2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 2.0]);
    }

    #[test]
    fn empty_cell_is_named() {
        let err = balance(&[20, 60], &[Label::Positive, Label::Negative], &[48]).unwrap_err();
        assert_eq!(err.to_string(), "weighting error: empty cell age <48 / negative");
    }

    #[test]
    fn folds_are_stratified_and_seeded() {
        let labels: Vec<Label> = (0..10).map(|i| Label::from_bool(i < 6)).collect();
        let f = stratified_folds(&labels, 2, 7).unwrap();
        for k in 0..2 {
            let pos = (0..10).filter(|&i| f[i] == k && labels[i].is_positive()).count();
            let neg = (0..10).filter(|&i| f[i] == k && !labels[i].is_positive()).count();
            assert_eq!((pos, neg), (3, 2));
        }
        assert_eq!(f, stratified_folds(&labels, 2, 7).unwrap());
        let one_class = vec![Label::Positive; 5];
        assert!(matches!(stratified_folds(&one_class, 5, 0), Err(Error::Fold(_))));
    }
}
