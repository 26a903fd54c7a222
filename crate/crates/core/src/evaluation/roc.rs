use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::{Error, Result};

/// One operating point. A sample is called positive when `score >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Points ordered by ascending threshold; the last one is `+inf`
/// (nothing called positive).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// JSON has no infinity; the open end of the curve is written as "inf".
mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Num(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold `{t}`"))),
        }
    }
}

pub(crate) fn check_scored(scores: &[f64], labels: &[Label], weights: &[f64]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() || scores.len() != weights.len() {
        return Err(Error::Contract("scores, labels and weights differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Parameter("weights must be finite and non-negative".into()));
    }
    let mut pos = 0.0;
    let mut neg = 0.0;
    for (l, w) in labels.iter().zip(weights) {
        if l.is_positive() {
            pos += w;
        } else {
            neg += w;
        }
    }
    Ok((pos, neg))
}

/// Weighted ROC over every distinct score. The trapezoidal area equals the
/// weighted probability that a positive outscores a negative, ties counting
/// one half.
pub fn roc(scores: &[f64], labels: &[Label], weights: &[f64]) -> Result<RocCurve> {
    let (pos, neg) = check_scored(scores, labels, weights)?;
    if pos <= 0.0 || neg <= 0.0 {
        return Err(Error::UndefinedAuc(
            "ROC needs positive weight in both classes".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // sweep from the highest score down; tp/fp are weights at score >= t
    let mut desc: Vec<(f64, f64, f64)> = vec![(f64::INFINITY, 0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut area = 0.0;
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        let (mut dp, mut dn) = (0.0, 0.0);
        while k < order.len() && scores[order[k]] == t {
            let i = order[k];
            if labels[i].is_positive() {
                dp += weights[i];
            } else {
                dn += weights[i];
            }
            k += 1;
        }
        area += dn * (tp + dp / 2.0);
        tp += dp;
        fp += dn;
        desc.push((t, tp, fp));
    }
    // the sweep totals are the exact denominators at the lowest threshold
    let (pos, neg) = (tp, fp);
    let points = desc
        .iter()
        .rev()
        .map(|&(threshold, tp, fp)| RocPoint {
            threshold,
            sensitivity: tp / pos,
            specificity: (neg - fp) / neg,
        })
        .collect();
    Ok(RocCurve {
        points,
        auc: area / (pos * neg),
    })
}

/// Weighted sensitivity and specificity with `score >= threshold` positive.
pub fn sens_spec_at(scores: &[f64], labels: &[Label], weights: &[f64], threshold: f64) -> Result<(f64, f64)> {
    let (pos, neg) = check_scored(scores, labels, weights)?;
    if pos <= 0.0 || neg <= 0.0 {
        return Err(Error::UndefinedAuc("both classes needed".into()));
    }
    let mut tp = 0.0;
    let mut tn = 0.0;
    for ((s, l), w) in scores.iter().zip(labels).zip(weights) {
        match (l.is_positive(), *s >= threshold) {
            (true, true) => tp += w,
            (false, false) => tn += w,
            _ => {}
        }
    }
    Ok((tp / pos, tn / neg))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedThreshold {
    pub threshold: f64,
    pub target_sensitivity: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Largest threshold whose sensitivity reaches `target`.
pub fn tune_threshold(curve: &RocCurve, target: f64) -> Result<TunedThreshold> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Parameter(format!("target sensitivity {target} not in (0,1]")));
    }
    curve
        .points
        .iter()
        .rev()
        .find(|p| p.sensitivity >= target)
        .map(|p| TunedThreshold {
            threshold: p.threshold,
            target_sensitivity: target,
            sensitivity: p.sensitivity,
            specificity: p.specificity,
        })
        .ok_or_else(|| {
            let best = curve.points.first().map_or(0.0, |p| p.sensitivity);
            Error::Tuning(format!("sensitivity {target} unreachable (max {best})"))
        })
}

impl RocCurve {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["threshold", "sensitivity", "specificity"])?;
        for p in &self.points {
            let t = if p.threshold.is_infinite() {
                "inf".to_string()
            } else {
                p.threshold.to_string()
            };
            w.write_record([t, p.sensitivity.to_string(), p.specificity.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(bits: &[u8]) -> Vec<Label> {
        bits.iter().map(|&b| Label::from_bool(b == 1)).collect()
    }

    #[test]
    fn four_sample_case() {
        let c = roc(&[0.9, 0.8, 0.3, 0.1], &labels(&[1, 0, 1, 0]), &[1.0; 4]).unwrap();
        assert_eq!(c.auc, 0.75);
        assert_eq!(c.points.len(), 5);
        assert!(c.points.last().unwrap().threshold.is_infinite());
        assert_eq!(c.points[0].sensitivity, 1.0);
        assert_eq!(c.points[0].specificity, 0.0);
    }

    #[test]
    fn perfect_and_tied_scores() {
        let l = labels(&[1, 0, 1, 0]);
        let perfect = roc(&[1.0, 0.0, 1.0, 0.0], &l, &[1.0; 4]).unwrap();
        assert_eq!(perfect.auc, 1.0);
        let flat = roc(&[0.4; 4], &l, &[1.0; 4]).unwrap();
        assert_eq!(flat.auc, 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            roc(&[0.1, 0.2], &labels(&[1, 1]), &[1.0, 1.0]),
            Err(Error::UndefinedAuc(_))
        ));
    }

    #[test]
    fn tuning_picks_largest_qualifying_threshold() {
        let scores = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05];
        let l = labels(&[1, 1, 0, 1, 1, 0, 1, 0, 0, 0]);
        let c = roc(&scores, &l, &[1.0; 10]).unwrap();
        let t = tune_threshold(&c, 0.8).unwrap();
        assert_eq!(t.threshold, 0.5);
        assert_eq!(t.sensitivity, 0.8);
        assert_eq!(t.specificity, 0.8);
        let all = tune_threshold(&c, 1.0).unwrap();
        assert_eq!(all.threshold, 0.3);
        assert!(tune_threshold(&c, 0.0).is_err());
    }

    #[test]
    fn perfect_ranker_tunes_to_full_specificity() {
        let c = roc(&[0.9, 0.8, 0.2, 0.1], &labels(&[1, 1, 0, 0]), &[1.0; 4]).unwrap();
        assert_eq!(tune_threshold(&c, 0.8).unwrap().specificity, 1.0);
    }

    #[test]
    fn curve_json_round_trips_infinity() {
        let c = roc(&[0.9, 0.1], &labels(&[1, 0]), &[1.0; 2]).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"inf\""));
        let back: RocCurve = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
