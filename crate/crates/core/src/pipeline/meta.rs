//! Inconclusive outputs from a misclassification predictor: a first forest is
//! cross-validated, a second learns to predict where the first one errs
//! (its positive calls become "inconclusive"), and a third is trained only
//! on the samples the second lets through.

use serde::{Deserialize, Serialize};

use super::band::{band_outcome, calibrate_band, BandCalibration, Decision, DecisionBand};
use crate::data::Label;
use crate::encoding::FeatureMatrix;
use crate::evaluation::{bootstrapped_cv, CVConfig};
use crate::learners::{train_forest, ForestModel, ForestParams};
use crate::rng::derive_seed;
use crate::Result;

/// Runtime half of the three-model pipeline: the gate decides whether to
/// answer, the decider answers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaStages {
    pub gate: ForestModel,
    /// Gate scores above this are inconclusive.
    pub gate_threshold: f64,
    pub decider: ForestModel,
    pub decider_threshold: f64,
}

impl MetaStages {
    pub fn decide(&self, row: &[u8]) -> Result<(f64, Decision)> {
        let score = self.decider.predict_score(row)?;
        if self.gate.predict_score(row)? > self.gate_threshold {
            return Ok((score, Decision::Inconclusive));
        }
        Ok((score, DecisionBand::binary(self.decider_threshold).decide(score)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MetaOutcome {
    Stages {
        stages: MetaStages,
        /// Out-of-fold weighted inconclusive rate of the gate.
        inconclusive_rate: f64,
        /// Out-of-fold weighted accuracy of the decider on what the gate passes.
        conclusive_accuracy: f64,
    },
    /// Second-stage labels were unusable; a cutoff range was calibrated instead.
    Fallback {
        calibration: BandCalibration,
        warning: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaResult {
    pub screener: ForestModel,
    pub screener_threshold: f64,
    /// Out-of-fold weighted accuracy of the first forest at its threshold.
    pub screener_accuracy: f64,
    pub outcome: MetaOutcome,
}

fn best_threshold(scores: &[f64], labels: &[Label], weights: &[f64]) -> Result<f64> {
    Ok(calibrate_band(scores, labels, weights, 0.0)?.band.low)
}

fn class_counts(labels: &[Label]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    (pos, labels.len() - pos)
}

/// Smallest gate threshold (among observed gate scores) whose weighted
/// inconclusive rate, counting scores strictly above it, is within `cap`.
fn gate_threshold(gate: &[f64], weights: &[f64], cap: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    let mut order: Vec<usize> = (0..gate.len()).collect();
    order.sort_by(|&a, &b| gate[b].total_cmp(&gate[a]));
    // walk down from the top; `above` is the weight strictly above `t`
    let mut above = 0.0;
    let mut best = gate[order[0]];
    let mut k = 0;
    while k < order.len() {
        let t = gate[order[k]];
        if above / total > cap + 1e-12 {
            break;
        }
        best = t;
        while k < order.len() && gate[order[k]] == t {
            above += weights[order[k]];
            k += 1;
        }
    }
    best
}

pub fn meta_inconclusive(
    m: &FeatureMatrix,
    forest: &ForestParams,
    cv: &CVConfig,
    max_inconclusive_rate: f64,
) -> Result<MetaResult> {
    let trainer = forest;
    let first = bootstrapped_cv(m, cv, trainer)?;
    let s1 = first.mean_oof();
    let t1 = best_threshold(&s1, &m.labels, &m.weights)?;
    let screener = train_forest(m, forest)?;
    let first_outcome = band_outcome(&DecisionBand::binary(t1), &s1, &m.labels, &m.weights);

    let fallback = |why: &str| -> Result<MetaOutcome> {
        let warning = format!("{why}; using a calibrated cutoff range instead");
        log::warn!("{warning}");
        let (scores, labels, weights) = first.pooled();
        Ok(MetaOutcome::Fallback {
            calibration: calibrate_band(&scores, &labels, &weights, max_inconclusive_rate)?,
            warning,
        })
    };

    let wrong: Vec<Label> = s1
        .iter()
        .zip(&m.labels)
        .map(|(&s, l)| Label::from_bool((s >= t1) != l.is_positive()))
        .collect();
    let (n_wrong, n_right) = class_counts(&wrong);
    let outcome = if n_wrong < cv.n_folds || n_right < cv.n_folds {
        fallback("first classifier errors too few to learn from")?
    } else {
        let mut gate_m = m.clone();
        gate_m.labels = wrong;
        let gate_cv = CVConfig {
            seed: derive_seed(cv.seed, 1),
            ..cv.clone()
        };
        let g = bootstrapped_cv(&gate_m, &gate_cv, trainer)?.mean_oof();
        let tau = gate_threshold(&g, &m.weights, max_inconclusive_rate);
        let kept: Vec<usize> = (0..m.n_rows()).filter(|&i| g[i] <= tau).collect();
        let conclusive = m.select_rows(&kept);
        let (p, n) = class_counts(&conclusive.labels);
        if p < cv.n_folds || n < cv.n_folds {
            fallback("gate leaves too few samples of one class")?
        } else {
            let decider_cv = CVConfig {
                seed: derive_seed(cv.seed, 2),
                ..cv.clone()
            };
            let s3 = bootstrapped_cv(&conclusive, &decider_cv, trainer)?.mean_oof();
            let t3 = best_threshold(&s3, &conclusive.labels, &conclusive.weights)?;
            let o3 = band_outcome(&DecisionBand::binary(t3), &s3, &conclusive.labels, &conclusive.weights);
            let total = m.total_weight();
            MetaOutcome::Stages {
                stages: MetaStages {
                    gate: train_forest(&gate_m, &forest.with_seed(derive_seed(forest.seed, 1)))?,
                    gate_threshold: tau,
                    decider: train_forest(&conclusive, &forest.with_seed(derive_seed(forest.seed, 2)))?,
                    decider_threshold: t3,
                },
                inconclusive_rate: (total - conclusive.total_weight()) / total,
                conclusive_accuracy: o3.accuracy(),
            }
        }
    };
    Ok(MetaResult {
        screener,
        screener_threshold: t1,
        screener_accuracy: first_outcome.accuracy(),
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_threshold_respects_cap() {
        let g = [0.9, 0.8, 0.7, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        let w = [1.0; 10];
        assert_eq!(gate_threshold(&g, &w, 0.25), 0.7);
        assert_eq!(gate_threshold(&g, &w, 0.0), 0.9);
        assert_eq!(gate_threshold(&g, &w, 0.3), 0.1);
    }
}
