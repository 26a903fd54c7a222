//! Feature selection: a single importance ranking, the two-step bootstrapped
//! tally, and progressive sampling over training-set size.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::encoding::FeatureMatrix;
use crate::evaluation::{bootstrapped_cv, CVConfig, Trainer};
use crate::learners::{train_forest, ForestParams};
use crate::rng::{derive_path, derive_seed, rng_from};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub n_bootstrap: usize,
    pub sample_fraction: f64,
    pub per_iteration_top_k: usize,
    pub candidate_pool: usize,
    pub final_k: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            n_bootstrap: 100,
            sample_fraction: 0.9,
            per_iteration_top_k: 20,
            candidate_pool: 30,
            final_k: 20,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    /// Defaults for the video screener, which keeps ten features.
    pub fn video() -> Self {
        SelectionConfig {
            final_k: 10,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bootstrap == 0 || self.per_iteration_top_k == 0 || self.final_k == 0 {
            return Err(Error::Parameter(
                "n_bootstrap, per_iteration_top_k and final_k must be positive".into(),
            ));
        }
        if self.final_k > self.candidate_pool {
            return Err(Error::Parameter(format!(
                "final_k {} exceeds candidate_pool {}",
                self.final_k, self.candidate_pool
            )));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::Parameter(format!(
                "sample_fraction {} not in (0,1]",
                self.sample_fraction
            )));
        }
        Ok(())
    }
}

/// Top `k` features of one forest fit, most important first.
pub fn naive_select(m: &FeatureMatrix, k: usize, params: &ForestParams) -> Result<Vec<String>> {
    if k == 0 || k > m.n_features() {
        return Err(Error::Parameter(format!(
            "cannot select {k} of {} features",
            m.n_features()
        )));
    }
    let model = train_forest(m, params)?;
    Ok(model.feature_importance().into_iter().take(k).map(|(n, _)| n).collect())
}

/// Row indices of a label-stratified subsample without replacement, in
/// ascending order. Each class keeps `round(fraction * count)` rows.
pub fn stratified_subsample(labels: &[Label], fraction: f64, seed: u64) -> Vec<usize> {
    let mut rng = rng_from(seed);
    let mut out = Vec::new();
    for class in [Label::Negative, Label::Positive] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let take = (fraction * members.len() as f64).round() as usize;
        if take < members.len() {
            members.shuffle(&mut rng);
        }
        out.extend_from_slice(&members[..take]);
    }
    out.sort_unstable();
    out
}

/// Seed of a bootstrap iteration; later attempts after a degenerate draw
/// branch off it.
pub fn iteration_seed(seed: u64, iteration: usize, attempt: usize) -> u64 {
    if attempt == 0 {
        derive_seed(seed, iteration as u64)
    } else {
        derive_path(seed, &[iteration as u64, attempt as u64])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub seed: u64,
    pub redraws: usize,
    pub top: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub config: SelectionConfig,
    /// Features that made some iteration's top list, with their counts.
    pub tally: BTreeMap<String, usize>,
    pub candidates: Vec<String>,
    pub selected: Vec<String>,
    /// Questions behind the selected features.
    pub questions: Vec<String>,
    pub redraws: usize,
    pub iterations: Vec<IterationLog>,
}

/// Attempts per iteration before giving up on a degenerate subsample.
const MAX_ATTEMPTS: usize = 8;

/// Two-step selection: tally each bootstrap iteration's top features
/// (rank ignored), keep the most frequent `candidate_pool`, then rank once
/// more on the candidates alone.
pub fn robust_select(m: &FeatureMatrix, cfg: &SelectionConfig, params: &ForestParams) -> Result<SelectionReport> {
    cfg.validate()?;
    params.validate()?;
    let p = m.n_features();
    if cfg.final_k > p {
        return Err(Error::Parameter(format!("cannot select {} of {p} features", cfg.final_k)));
    }
    let top_k = cfg.per_iteration_top_k.min(p);

    let iterations: Vec<IterationLog> = (0..cfg.n_bootstrap)
        .into_par_iter()
        .map(|i| run_iteration(m, cfg, params, i, top_k))
        .collect::<Result<_>>()?;

    let redraws: usize = iterations.iter().map(|it| it.redraws).sum();
    if redraws as f64 > 0.2 * cfg.n_bootstrap as f64 {
        return Err(Error::Selection(format!(
            "{redraws} degenerate subsamples in {} iterations",
            cfg.n_bootstrap
        )));
    }

    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for it in &iterations {
        for f in &it.top {
            *tally.entry(f.clone()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&String, usize)> = m
        .feature_names
        .iter()
        .map(|f| (f, tally.get(f).copied().unwrap_or(0)))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let candidates: Vec<String> = ranked
        .iter()
        .take(cfg.candidate_pool.min(p))
        .map(|(f, _)| (*f).clone())
        .collect();

    let restricted = m.select_features(&candidates)?;
    let selected = naive_select(&restricted, cfg.final_k, &params.with_seed(cfg.seed))?;
    Ok(SelectionReport {
        config: cfg.clone(),
        questions: m.backing_questions(&selected),
        tally,
        candidates,
        selected,
        redraws,
        iterations,
    })
}

fn run_iteration(
    m: &FeatureMatrix,
    cfg: &SelectionConfig,
    params: &ForestParams,
    i: usize,
    top_k: usize,
) -> Result<IterationLog> {
    for attempt in 0..MAX_ATTEMPTS {
        let seed = iteration_seed(cfg.seed, i, attempt);
        let rows = stratified_subsample(&m.labels, cfg.sample_fraction, seed);
        let sub = m.select_rows(&rows);
        let model = match train_forest(&sub, &params.with_seed(seed)) {
            Ok(model) => model,
            Err(Error::Training(msg)) => {
                log::warn!("selection iteration {i}: degenerate subsample ({msg}), redrawing");
                continue;
            }
            Err(e) => return Err(e),
        };
        return Ok(IterationLog {
            iteration: i,
            seed,
            redraws: attempt,
            top: model
                .feature_importance()
                .into_iter()
                .take(top_k)
                .map(|(n, _)| n)
                .collect(),
        });
    }
    Err(Error::Selection(format!(
        "iteration {i}: no usable subsample after {MAX_ATTEMPTS} draws"
    )))
}

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.125, 0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub n_samples: usize,
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressiveCurve {
    pub points: Vec<CurvePoint>,
    /// Fractions too small to stratify into the configured folds.
    pub skipped: Vec<f64>,
}

impl ProgressiveCurve {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["fraction", "auc", "ci_low", "ci_high"])?;
        for p in &self.points {
            w.write_record([
                p.fraction.to_string(),
                p.auc.to_string(),
                p.ci_low.to_string(),
                p.ci_high.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bootstrapped CV AUC of `trainer` on growing stratified subsamples.
pub fn progressive_sampling(
    m: &FeatureMatrix,
    fractions: &[f64],
    cv: &CVConfig,
    trainer: &dyn Trainer,
) -> Result<ProgressiveCurve> {
    if fractions.is_empty() {
        return Err(Error::Parameter("no sampling fractions".into()));
    }
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) || fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter("fractions must be ascending in (0,1]".into()));
    }
    let mut curve = ProgressiveCurve {
        points: Vec::new(),
        skipped: Vec::new(),
    };
    for (k, &fraction) in fractions.iter().enumerate() {
        let rows = stratified_subsample(&m.labels, fraction, derive_seed(cv.seed, k as u64));
        let sub = m.select_rows(&rows);
        let smallest = [Label::Negative, Label::Positive]
            .iter()
            .map(|&c| sub.labels.iter().filter(|&&l| l == c).count())
            .min()
            .unwrap_or(0);
        if smallest < cv.n_folds {
            log::warn!("fraction {fraction}: {smallest} samples in the smaller class, skipped");
            curve.skipped.push(fraction);
            continue;
        }
        let report = bootstrapped_cv(&sub, cv, trainer)?;
        log::info!("fraction {fraction}: AUC {:.4}", report.auc.mean);
        curve.points.push(CurvePoint {
            fraction,
            n_samples: sub.n_rows(),
            auc: report.auc.mean,
            ci_low: report.auc.ci_low,
            ci_high: report.auc.ci_high,
        });
    }
    Ok(curve)
}

/// |a ∩ b| / |a ∪ b|.
pub fn jaccard<S: AsRef<str> + Ord>(a: &[S], b: &[S]) -> f64 {
    let a: std::collections::BTreeSet<&str> = a.iter().map(|s| s.as_ref()).collect();
    let b: std::collections::BTreeSet<&str> = b.iter().map(|s| s.as_ref()).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_is_stratified() {
        let labels: Vec<Label> = (0..100).map(|i| Label::from_bool(i % 4 == 0)).collect();
        let rows = stratified_subsample(&labels, 0.9, 1);
        let pos = rows.iter().filter(|&&i| labels[i].is_positive()).count();
        assert_eq!(pos, 23);
        assert_eq!(rows.len() - pos, 68);
        assert!(rows.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(stratified_subsample(&labels, 1.0, 9), (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn config_checks() {
        assert!(SelectionConfig { final_k: 40, ..Default::default() }.validate().is_err());
        assert!(SelectionConfig { sample_fraction: 0.0, ..Default::default() }.validate().is_err());
        SelectionConfig::video().validate().unwrap();
    }

    #[test]
    fn jaccard_basics() {
        assert_eq!(jaccard(&["a", "b"], &["b", "c"]), 1.0 / 3.0);
        assert_eq!(jaccard(&["a"], &["a"]), 1.0);
    }
}
