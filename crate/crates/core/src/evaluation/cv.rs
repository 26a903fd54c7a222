use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{roc, sens_spec_at, stratified_folds, CVConfig};
use crate::data::Label;
use crate::encoding::FeatureMatrix;
use crate::learners::{train_forest, FeaturesPerSplit, ForestParams};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Anything that can be fitted on one part of a matrix and score another.
pub trait Trainer: Sync {
    fn fit_predict(&self, train: &FeatureMatrix, test: &FeatureMatrix, seed: u64) -> Result<Vec<f64>>;
}

impl Trainer for ForestParams {
    fn fit_predict(&self, train: &FeatureMatrix, test: &FeatureMatrix, seed: u64) -> Result<Vec<f64>> {
        train_forest(train, &self.with_seed(seed))?.predict_matrix(test)
    }
}

/// Adapts a closure into a [`Trainer`].
pub struct FnTrainer<F>(pub F);

impl<F> Trainer for FnTrainer<F>
where
    F: Fn(&FeatureMatrix, &FeatureMatrix, u64) -> Result<Vec<f64>> + Sync,
{
    fn fit_predict(&self, train: &FeatureMatrix, test: &FeatureMatrix, seed: u64) -> Result<Vec<f64>> {
        (self.0)(train, test, seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> MetricSummary {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        MetricSummary {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            ci_low: percentile(&sorted, 2.5),
            ci_high: percentile(&sorted, 97.5),
        }
    }

    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// Linear-interpolation percentile of already sorted values, `q` in [0,100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    pub seed: u64,
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// Out-of-fold score per matrix row.
    pub oof_scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub config: CVConfig,
    pub auc: MetricSummary,
    pub sensitivity: MetricSummary,
    pub specificity: MetricSummary,
    pub failed_rounds: Vec<usize>,
    pub rounds: Vec<RoundResult>,
    pub labels: Vec<Label>,
    pub weights: Vec<f64>,
}

impl CvReport {
    /// Out-of-fold scores of every completed round, stacked; each round's
    /// copy of a sample carries `1/rounds` of its weight.
    pub fn pooled(&self) -> (Vec<f64>, Vec<Label>, Vec<f64>) {
        let r = self.rounds.len() as f64;
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        let mut weights = Vec::new();
        for round in &self.rounds {
            scores.extend_from_slice(&round.oof_scores);
            labels.extend_from_slice(&self.labels);
            weights.extend(self.weights.iter().map(|w| w / r));
        }
        (scores, labels, weights)
    }

    /// Per-sample out-of-fold score averaged over rounds.
    pub fn mean_oof(&self) -> Vec<f64> {
        let n = self.labels.len();
        let r = self.rounds.len() as f64;
        (0..n)
            .map(|i| self.rounds.iter().map(|x| x.oof_scores[i]).sum::<f64>() / r)
            .collect()
    }
}

/// Max share of rounds allowed to fail before the evaluation is abandoned.
const MAX_FAILED_ROUNDS: f64 = 0.10;

/// Repeated stratified k-fold CV; each round reshuffles the folds with its
/// own derived seed and scores every sample out of fold.
pub fn bootstrapped_cv(m: &FeatureMatrix, cfg: &CVConfig, trainer: &dyn Trainer) -> Result<CvReport> {
    cfg.validate()?;
    // fold feasibility does not depend on the seed, so fail fast
    stratified_folds(&m.labels, cfg.n_folds, cfg.seed)?;

    let outcomes: Vec<Result<RoundResult>> = (0..cfg.n_bootstrap_rounds)
        .into_par_iter()
        .map(|r| run_round(m, cfg, trainer, r))
        .collect();

    let mut rounds = Vec::new();
    let mut failed = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(round) => rounds.push(round),
            Err(e) => {
                log::warn!("cross-validation round {r} failed: {e}");
                failed.push(r);
            }
        }
    }
    if rounds.is_empty() || failed.len() as f64 > MAX_FAILED_ROUNDS * cfg.n_bootstrap_rounds as f64 {
        return Err(Error::Evaluation(format!(
            "{} of {} cross-validation rounds failed",
            failed.len(),
            cfg.n_bootstrap_rounds
        )));
    }
    let metric = |f: fn(&RoundResult) -> f64| MetricSummary::from_values(&rounds.iter().map(f).collect::<Vec<_>>());
    Ok(CvReport {
        config: cfg.clone(),
        auc: metric(|r| r.auc),
        sensitivity: metric(|r| r.sensitivity),
        specificity: metric(|r| r.specificity),
        failed_rounds: failed,
        rounds,
        labels: m.labels.clone(),
        weights: m.weights.clone(),
    })
}

fn run_round(m: &FeatureMatrix, cfg: &CVConfig, trainer: &dyn Trainer, r: usize) -> Result<RoundResult> {
    let seed = derive_seed(cfg.seed, r as u64);
    let folds = stratified_folds(&m.labels, cfg.n_folds, seed)?;
    let mut oof = vec![f64::NAN; m.n_rows()];
    for k in 0..cfg.n_folds {
        let (test_idx, train_idx): (Vec<usize>, Vec<usize>) = (0..m.n_rows()).partition(|&i| folds[i] == k);
        let train = m.select_rows(&train_idx);
        let test = m.select_rows(&test_idx);
        let scores = trainer.fit_predict(&train, &test, derive_seed(seed, k as u64))?;
        if scores.len() != test_idx.len() {
            return Err(Error::Contract(format!(
                "trainer returned {} scores for {} rows",
                scores.len(),
                test_idx.len()
            )));
        }
        for (&i, s) in test_idx.iter().zip(scores) {
            oof[i] = s;
        }
    }
    let curve = roc(&oof, &m.labels, &m.weights)?;
    let (sensitivity, specificity) = sens_spec_at(&oof, &m.labels, &m.weights, cfg.decision_threshold)?;
    Ok(RoundResult {
        round: r,
        seed,
        auc: curve.auc,
        sensitivity,
        specificity,
        oof_scores: oof,
    })
}

/// Forest settings to search; an empty axis keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_leaf: Vec<f64>,
    pub features_per_split: Vec<FeaturesPerSplit>,
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl ParamGrid {
    /// Cartesian product in axis order.
    pub fn points(&self, base: &ForestParams) -> Vec<ForestParams> {
        let mut out = Vec::new();
        for n_trees in axis(&self.n_trees, base.n_trees) {
            for max_depth in axis(&self.max_depth, base.max_depth) {
                for min_samples_leaf in axis(&self.min_samples_leaf, base.min_samples_leaf) {
                    for features_per_split in axis(&self.features_per_split, base.features_per_split) {
                        out.push(ForestParams {
                            n_trees,
                            max_depth,
                            min_samples_leaf,
                            features_per_split,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub params: ForestParams,
    pub auc: MetricSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: ForestParams,
    /// Every grid point, best first.
    pub leaderboard: Vec<GridEntry>,
}

/// Scores each grid point by bootstrapped CV mean AUC over the same folds.
/// Ties go to fewer trees, then to the lexicographically smaller settings.
pub fn grid_search(m: &FeatureMatrix, grid: &ParamGrid, base: &ForestParams, cfg: &CVConfig) -> Result<GridResult> {
    let points = grid.points(base);
    let mut leaderboard = Vec::with_capacity(points.len());
    for params in points {
        params.validate()?;
        let report = bootstrapped_cv(m, cfg, &params)?;
        log::info!("grid point {} -> AUC {:.4}", serde_json::to_string(&params)?, report.auc.mean);
        leaderboard.push(GridEntry { params, auc: report.auc });
    }
    let key = |e: &GridEntry| serde_json::to_string(&e.params).unwrap_or_default();
    leaderboard.sort_by(|a, b| {
        b.auc
            .mean
            .total_cmp(&a.auc.mean)
            .then(a.params.n_trees.cmp(&b.params.n_trees))
            .then_with(|| key(a).cmp(&key(b)))
    });
    Ok(GridResult {
        best: leaderboard[0].params.clone(),
        leaderboard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 100.0), 5.0);
        assert_eq!(percentile(&v, 12.5), 1.5);
    }

    #[test]
    fn grid_axes_default_to_base() {
        let grid = ParamGrid {
            n_trees: vec![10, 20],
            max_depth: vec![None, Some(3)],
            ..Default::default()
        };
        let points = grid.points(&ForestParams::default());
        assert_eq!(points.len(), 4);
        assert!(points.iter().all(|p| p.min_samples_leaf == 0.01));
    }
}
