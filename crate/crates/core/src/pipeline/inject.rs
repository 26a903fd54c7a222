//! Training-set augmentation that makes a zero presence value carry no class
//! information.
//!
//! Every sample gets one duplicate. In the duplicates, some 1 values are
//! flipped to 0, chosen per feature so that among zero-valued rows the
//! positive share of weight lands on the target. Originals and duplicates
//! each carry half the original weight, so class totals are unchanged.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoding::{FeatureMatrix, FeatureSource};
use crate::rng::{derive_seed, rng_from};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionConfig {
    /// Wanted positive share of weight among rows where a feature is 0.
    pub target_zero_balance: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        InjectionConfig {
            target_zero_balance: 0.5,
            tolerance: 0.05,
            seed: 0,
        }
    }
}

impl InjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_zero_balance > 0.0 && self.target_zero_balance < 1.0) {
            return Err(Error::Parameter(format!(
                "target_zero_balance {} not in (0,1)",
                self.target_zero_balance
            )));
        }
        if !(self.tolerance >= 0.0 && self.tolerance < 0.5) {
            return Err(Error::Parameter(format!("tolerance {} not in [0,0.5)", self.tolerance)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum InjectionStatus {
    /// Zero-value share already on target.
    Balanced,
    Injected {
        flips: usize,
        /// Weight moved to the zero side, in final (halved) units.
        added_weight: f64,
    },
    Skipped { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureInjection {
    pub feature: String,
    pub zero_share_before: Option<f64>,
    pub zero_share_after: Option<f64>,
    pub status: InjectionStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Injection {
    pub matrix: FeatureMatrix,
    pub features: Vec<FeatureInjection>,
}

/// Positive share of weight among rows where column `j` is 0.
pub fn zero_share(m: &FeatureMatrix, j: usize) -> Option<f64> {
    let (mut p, mut t) = (0.0, 0.0);
    for i in 0..m.n_rows() {
        if m.value(i, j) == 0 {
            t += m.weights[i];
            if m.labels[i].is_positive() {
                p += m.weights[i];
            }
        }
    }
    (t > 0.0).then(|| p / t)
}

/// Class purity of the zero branch of a one-feature stump.
pub fn zero_branch_purity(m: &FeatureMatrix, j: usize) -> Option<f64> {
    zero_share(m, j).map(|s| s.max(1.0 - s))
}

pub fn inject_missing(m: &FeatureMatrix, cfg: &InjectionConfig) -> Result<Injection> {
    cfg.validate()?;
    let targets: Vec<usize> = (0..m.n_features())
        .filter(|&j| matches!(m.sources[j], FeatureSource::Question(_)))
        .collect();
    for &j in &targets {
        if (0..m.n_rows()).any(|i| m.value(i, j) > 1) {
            return Err(Error::Encoding(format!(
                "`{}` is not a binary presence feature",
                m.feature_names[j]
            )));
        }
    }
    let n = m.n_rows();
    let tau = cfg.target_zero_balance;

    // duplicate rows, initially identical to the originals
    let mut dup: Vec<Vec<u8>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut plans = Vec::with_capacity(targets.len());
    for &j in &targets {
        let (mut p0, mut n0, mut p1, mut n1) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let w = m.weights[i];
            match (m.value(i, j), m.labels[i].is_positive()) {
                (0, true) => p0 += w,
                (0, false) => n0 += w,
                (_, true) => p1 += w,
                (_, false) => n1 += w,
            }
        }
        let before = (p0 + n0 > 0.0).then(|| p0 / (p0 + n0));
        // with every row duplicated the zero side holds 2*p0, 2*n0 before
        // flips; find the duplicate weight to move so the share hits tau
        let (flip_positive, need, available) = match before {
            None => {
                let reason = "feature is never 0".to_string();
                log::info!("injection skips {}: {reason}", m.feature_names[j]);
                plans.push((j, before, InjectionStatus::Skipped { reason }, Vec::new()));
                continue;
            }
            Some(s) if (s - tau).abs() <= 1e-12 => {
                plans.push((j, before, InjectionStatus::Balanced, Vec::new()));
                continue;
            }
            Some(s) if s < tau => (true, tau * 2.0 * n0 / (1.0 - tau) - 2.0 * p0, p1),
            Some(_) => (false, (1.0 - tau) * 2.0 * p0 / tau - 2.0 * n0, n1),
        };
        if need > available + 1e-9 {
            let class = if flip_positive { "positive" } else { "negative" };
            let reason = format!(
                "needs {need:.3} {class} weight with value 1, only {available:.3} available"
            );
            log::info!("injection skips {}: {reason}", m.feature_names[j]);
            plans.push((j, before, InjectionStatus::Skipped { reason }, Vec::new()));
            continue;
        }
        let mut candidates: Vec<usize> = (0..n)
            .filter(|&i| m.value(i, j) == 1 && m.labels[i].is_positive() == flip_positive)
            .collect();
        candidates.shuffle(&mut rng_from(derive_seed(cfg.seed, j as u64)));
        let mut flipped = Vec::new();
        let mut added = 0.0;
        for i in candidates {
            if added >= need {
                break;
            }
            let w = m.weights[i];
            // stop short when taking this row would overshoot more than it helps
            if added + w - need > need - added {
                break;
            }
            added += w;
            flipped.push(i);
        }
        for &i in &flipped {
            dup[i][j] = 0;
        }
        let status = InjectionStatus::Injected {
            flips: flipped.len(),
            added_weight: added / 2.0,
        };
        plans.push((j, before, status, flipped));
    }

    let mut out = m.clone();
    for w in out.weights.iter_mut() {
        *w /= 2.0;
    }
    for (i, row) in dup.iter().enumerate() {
        out.push_row(
            format!("{}~dup", m.subject_ids[i]),
            m.ages[i],
            row,
            m.weights[i] / 2.0,
            m.labels[i],
        );
    }

    // audit: a feature still off target is reverted and reported as skipped
    let mut features = Vec::with_capacity(plans.len());
    for (j, before, mut status, flipped) in plans {
        let mut after = zero_share(&out, j);
        if matches!(status, InjectionStatus::Injected { .. })
            && !after.is_some_and(|s| (s - tau).abs() <= cfg.tolerance)
        {
            for &i in &flipped {
                out.set_value(n + i, j, m.value(i, j));
            }
            let reason = format!("zero share {after:?} outside tolerance after flips; reverted");
            log::info!("injection skips {}: {reason}", m.feature_names[j]);
            status = InjectionStatus::Skipped { reason };
            after = zero_share(&out, j);
        }
        features.push(FeatureInjection {
            feature: m.feature_names[j].clone(),
            zero_share_before: before,
            zero_share_after: after,
            status,
        });
    }
    Ok(Injection { matrix: out, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;

    fn one_feature(values: &[u8], labels: &[bool]) -> FeatureMatrix {
        FeatureMatrix::new(
            vec!["q1.observed".into()],
            vec![FeatureSource::Question("1".into())],
            (0..values.len()).map(|i| format!("s{i}")).collect(),
            vec![30; values.len()],
            values.to_vec(),
            labels.iter().map(|&b| Label::from_bool(b)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ten_thirty_becomes_thirty_thirty() {
        // zero side: 10 positive, 30 negative; one side: 40 positive, 10 negative
        let mut values = vec![0u8; 40];
        values.extend(vec![1u8; 50]);
        let mut labels = vec![true; 10];
        labels.extend(vec![false; 30]);
        labels.extend(vec![true; 40]);
        labels.extend(vec![false; 10]);
        let m = one_feature(&values, &labels);
        let out = inject_missing(&m, &InjectionConfig::default()).unwrap();
        assert_eq!(
            out.features[0].status,
            InjectionStatus::Injected { flips: 40, added_weight: 20.0 }
        );
        assert_eq!(zero_share(&out.matrix, 0), Some(0.5));
        assert_eq!(out.matrix.total_weight(), 90.0);
        // originals keep their values
        for i in 0..90 {
            assert_eq!(out.matrix.value(i, 0), values[i]);
        }
    }

    #[test]
    fn balanced_feature_is_left_alone() {
        let m = one_feature(&[0, 0, 1, 1], &[true, false, true, false]);
        let out = inject_missing(&m, &InjectionConfig::default()).unwrap();
        assert_eq!(out.features[0].status, InjectionStatus::Balanced);
    }

    #[test]
    fn infeasible_feature_is_skipped() {
        // zero side all negative and no positive has the feature
        let m = one_feature(&[0, 0, 0, 1], &[false, false, true, false]);
        let out = inject_missing(&m, &InjectionConfig::default()).unwrap();
        assert!(matches!(out.features[0].status, InjectionStatus::Skipped { .. }));
    }
}
