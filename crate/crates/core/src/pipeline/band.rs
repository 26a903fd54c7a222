use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::evaluation::roc;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Negative,
    Inconclusive,
    Positive,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Negative => "negative",
            Decision::Inconclusive => "inconclusive",
            Decision::Positive => "positive",
        }
    }
}

/// Score interval mapped to "inconclusive". With `low == high` it is a plain
/// threshold: `score >= low` is positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionBand {
    pub low: f64,
    pub high: f64,
}

impl DecisionBand {
    pub fn binary(threshold: f64) -> Self {
        DecisionBand {
            low: threshold,
            high: threshold,
        }
    }

    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low <= high) {
            return Err(Error::Parameter(format!("band low {low} above high {high}")));
        }
        Ok(DecisionBand { low, high })
    }

    pub fn is_binary(&self) -> bool {
        self.low == self.high
    }

    pub fn decide(&self, score: f64) -> Decision {
        if self.is_binary() {
            if score >= self.low {
                Decision::Positive
            } else {
                Decision::Negative
            }
        } else if score < self.low {
            Decision::Negative
        } else if score > self.high {
            Decision::Positive
        } else {
            Decision::Inconclusive
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandCalibration {
    pub band: DecisionBand,
    pub max_inconclusive_rate: f64,
    /// Weighted balanced accuracy over conclusive samples.
    pub conclusive_balanced_accuracy: f64,
    pub inconclusive_rate: f64,
    pub warning: Option<String>,
}

/// Weighted outcome tallies of a band over scored samples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BandOutcome {
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    pub fn_: f64,
    pub inconclusive: f64,
}

impl BandOutcome {
    pub fn total(&self) -> f64 {
        self.tp + self.tn + self.fp + self.fn_ + self.inconclusive
    }

    pub fn inconclusive_rate(&self) -> f64 {
        self.inconclusive / self.total()
    }

    /// Weighted accuracy over conclusive samples.
    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) / (self.tp + self.tn + self.fp + self.fn_)
    }

    /// Mean of sensitivity and specificity over conclusive samples; `None`
    /// when a class has no conclusive weight.
    pub fn balanced_accuracy(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        let n = self.tn + self.fp;
        (p > 0.0 && n > 0.0).then(|| (self.tp / p + self.tn / n) / 2.0)
    }
}

pub fn band_outcome(band: &DecisionBand, scores: &[f64], labels: &[Label], weights: &[f64]) -> BandOutcome {
    let mut o = BandOutcome::default();
    for ((&s, l), &w) in scores.iter().zip(labels).zip(weights) {
        match (band.decide(s), l.is_positive()) {
            (Decision::Inconclusive, _) => o.inconclusive += w,
            (Decision::Positive, true) => o.tp += w,
            (Decision::Positive, false) => o.fp += w,
            (Decision::Negative, true) => o.fn_ += w,
            (Decision::Negative, false) => o.tn += w,
        }
    }
    o
}

/// Nearest-rank quantiles of `sorted` at every whole percent, deduplicated.
pub fn quantile_grid(sorted: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    let mut grid: Vec<f64> = (0..=100)
        .map(|k| {
            let rank = ((k as f64 / 100.0) * n as f64).ceil() as usize;
            sorted[rank.clamp(1, n) - 1]
        })
        .collect();
    grid.dedup();
    grid
}

const SCORE_EPS: f64 = 1e-12;

/// Searches (low, high) pairs on the score quantile grid, maximising
/// weighted balanced accuracy over conclusive samples while keeping the
/// weighted inconclusive rate within `max_inconclusive_rate`. Ties go to the
/// narrower band, then the lower centre. Plain thresholds (`low == high`)
/// are always candidates, so a zero cap yields the best binary cut.
pub fn calibrate_band(
    scores: &[f64],
    labels: &[Label],
    weights: &[f64],
    max_inconclusive_rate: f64,
) -> Result<BandCalibration> {
    if !(0.0..1.0).contains(&max_inconclusive_rate) {
        return Err(Error::Parameter(format!(
            "max_inconclusive_rate {max_inconclusive_rate} not in [0,1)"
        )));
    }
    // validates lengths, NaNs and that both classes are present
    roc(scores, labels, weights)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    // prefix[k] = (positive, negative) weight of the k lowest scores
    let mut prefix = vec![(0.0, 0.0); sorted.len() + 1];
    for (k, &i) in order.iter().enumerate() {
        let (p, n) = prefix[k];
        prefix[k + 1] = if labels[i].is_positive() {
            (p + weights[i], n)
        } else {
            (p, n + weights[i])
        };
    }
    let (pos, neg) = prefix[sorted.len()];
    let total = pos + neg;
    let below = |v: f64| prefix[sorted.partition_point(|&s| s < v)];
    let at_or_below = |v: f64| prefix[sorted.partition_point(|&s| s <= v)];

    let grid = quantile_grid(&sorted);
    let mut best: Option<(f64, f64, DecisionBand, f64)> = None; // (ba, width, band, rate)
    for (a, &low) in grid.iter().enumerate() {
        for &high in &grid[a..] {
            let (fn_, tn) = below(low);
            let (tp, fp) = if low == high {
                (pos - fn_, neg - tn)
            } else {
                let (p, n) = at_or_below(high);
                (pos - p, neg - n)
            };
            let conclusive = tp + tn + fp + fn_;
            let rate = (total - conclusive) / total;
            if rate > max_inconclusive_rate + SCORE_EPS {
                continue;
            }
            let outcome = BandOutcome { tp, tn, fp, fn_, inconclusive: total - conclusive };
            let Some(ba) = outcome.balanced_accuracy() else { continue };
            let width = high - low;
            let better = match &best {
                None => true,
                Some((bba, bw, bb, _)) => {
                    if ba > bba + SCORE_EPS {
                        true
                    } else if ba < bba - SCORE_EPS {
                        false
                    } else if width < bw - SCORE_EPS {
                        true
                    } else if width > bw + SCORE_EPS {
                        false
                    } else {
                        low + high < bb.low + bb.high
                    }
                }
            };
            if better {
                best = Some((ba, width, DecisionBand { low, high }, rate));
            }
        }
    }
    Ok(match best {
        Some((ba, _, band, rate)) => BandCalibration {
            band,
            max_inconclusive_rate,
            conclusive_balanced_accuracy: ba,
            inconclusive_rate: rate,
            warning: None,
        },
        None => {
            let msg = "no feasible band; falling back to a 0.5 threshold".to_string();
            log::warn!("{msg}");
            let band = DecisionBand::binary(0.5);
            let o = band_outcome(&band, scores, labels, weights);
            BandCalibration {
                band,
                max_inconclusive_rate,
                conclusive_balanced_accuracy: o.balanced_accuracy().unwrap_or(0.5),
                inconclusive_rate: 0.0,
                warning: Some(msg),
            }
        }
    })
}
