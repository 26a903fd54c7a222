use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::{Error, Result};

/// Where an encoded column comes from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Question(String),
    Age,
    Gender,
    Aggregate,
}

/// Raw aggregate severity values for one sample, kept for inspection next to
/// their binarised columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateValues {
    pub min: Option<u8>,
    pub max: Option<u8>,
    pub mean: Option<f64>,
    pub level_counts: Vec<u16>,
    pub other_count: u16,
}

impl AggregateValues {
    pub fn is_defined(&self) -> bool {
        self.max.is_some()
    }
}

/// Encoded samples: small unsigned values (binary flags plus integer columns
/// such as age), per-sample weights and labels. Stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub feature_names: Vec<String>,
    pub sources: Vec<FeatureSource>,
    pub subject_ids: Vec<String>,
    pub ages: Vec<u8>,
    values: Vec<u8>,
    pub weights: Vec<f64>,
    pub labels: Vec<Label>,
    /// Constant columns dropped during encoding.
    pub pruned: Vec<String>,
    /// Empty unless aggregate columns were built for these rows.
    pub aggregate_values: Vec<AggregateValues>,
}

impl FeatureMatrix {
    pub fn new(
        feature_names: Vec<String>,
        sources: Vec<FeatureSource>,
        subject_ids: Vec<String>,
        ages: Vec<u8>,
        values: Vec<u8>,
        labels: Vec<Label>,
    ) -> Result<Self> {
        let n = subject_ids.len();
        let p = feature_names.len();
        if sources.len() != p || ages.len() != n || labels.len() != n || values.len() != n * p {
            return Err(Error::Contract(format!(
                "matrix shape mismatch: {n} rows, {p} names, {} sources, {} values",
                sources.len(),
                values.len()
            )));
        }
        let distinct: BTreeSet<&String> = feature_names.iter().collect();
        if distinct.len() != p {
            return Err(Error::Contract("duplicate feature names".into()));
        }
        Ok(FeatureMatrix {
            feature_names,
            sources,
            subject_ids,
            ages,
            values,
            weights: vec![1.0; n],
            labels,
            pruned: Vec::new(),
            aggregate_values: Vec::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let p = self.n_features();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn value(&self, i: usize, j: usize) -> u8 {
        self.values[i * self.n_features() + j]
    }

    pub fn column(&self, j: usize) -> Vec<u8> {
        (0..self.n_rows()).map(|i| self.value(i, j)).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn positives(&self) -> Vec<bool> {
        self.labels.iter().map(|l| l.is_positive()).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.n_rows() {
            return Err(Error::Contract(format!(
                "{} weights for {} rows",
                weights.len(),
                self.n_rows()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Parameter(format!("sample weight {w} is not positive")));
        }
        self.weights = weights;
        Ok(())
    }

    /// Rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let p = self.n_features();
        let mut values = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            sources: self.sources.clone(),
            subject_ids: indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            ages: indices.iter().map(|&i| self.ages[i]).collect(),
            values,
            weights: indices.iter().map(|&i| self.weights[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            pruned: self.pruned.clone(),
            aggregate_values: if self.aggregate_values.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.aggregate_values[i].clone()).collect()
            },
        }
    }

    /// Columns named in `names`, in that order.
    pub fn select_features<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureMatrix> {
        let lookup: HashMap<&str, usize> = self
            .feature_names
            .iter()
            .enumerate()
            .map(|(j, n)| (n.as_str(), j))
            .collect();
        let cols = names
            .iter()
            .map(|n| {
                lookup
                    .get(n.as_ref())
                    .copied()
                    .ok_or_else(|| Error::Parameter(format!("unknown feature `{}`", n.as_ref())))
            })
            .collect::<Result<Vec<usize>>>()?;
        Ok(self.select_columns(&cols))
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(self.n_rows() * cols.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            values.extend(cols.iter().map(|&j| row[j]));
        }
        FeatureMatrix {
            feature_names: cols.iter().map(|&j| self.feature_names[j].clone()).collect(),
            sources: cols.iter().map(|&j| self.sources[j].clone()).collect(),
            values,
            ..self.clone_without_values()
        }
    }

    fn clone_without_values(&self) -> FeatureMatrix {
        FeatureMatrix {
            feature_names: Vec::new(),
            sources: Vec::new(),
            subject_ids: self.subject_ids.clone(),
            ages: self.ages.clone(),
            values: Vec::new(),
            weights: self.weights.clone(),
            labels: self.labels.clone(),
            pruned: self.pruned.clone(),
            aggregate_values: self.aggregate_values.clone(),
        }
    }

    /// Appends the columns of `other`, which must describe the same rows.
    pub fn hstack(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.subject_ids != other.subject_ids {
            return Err(Error::Contract("hstack over different rows".into()));
        }
        let mut names = self.feature_names.clone();
        names.extend(other.feature_names.iter().cloned());
        let mut sources = self.sources.clone();
        sources.extend(other.sources.iter().cloned());
        let mut values = Vec::with_capacity(self.values.len() + other.values.len());
        for i in 0..self.n_rows() {
            values.extend_from_slice(self.row(i));
            values.extend_from_slice(other.row(i));
        }
        let mut out = FeatureMatrix::new(
            names,
            sources,
            self.subject_ids.clone(),
            self.ages.clone(),
            values,
            self.labels.clone(),
        )?;
        out.weights = self.weights.clone();
        out.pruned = self.pruned.iter().chain(&other.pruned).cloned().collect();
        out.aggregate_values = if other.aggregate_values.is_empty() {
            self.aggregate_values.clone()
        } else {
            other.aggregate_values.clone()
        };
        Ok(out)
    }

    /// Appends rows given as raw values; used by training-set augmentation.
    pub(crate) fn push_row(&mut self, subject_id: String, age: u8, row: &[u8], weight: f64, label: Label) {
        debug_assert_eq!(row.len(), self.n_features());
        self.subject_ids.push(subject_id);
        self.ages.push(age);
        self.values.extend_from_slice(row);
        self.weights.push(weight);
        self.labels.push(label);
        self.aggregate_values.clear();
    }

    pub(crate) fn set_value(&mut self, i: usize, j: usize, v: u8) {
        let p = self.n_features();
        self.values[i * p + j] = v;
    }

    /// Drops every column whose value is the same in all rows; returns the
    /// dropped names (also recorded in `pruned`).
    pub fn prune_constant(&mut self) -> Vec<String> {
        if self.n_rows() == 0 {
            return Vec::new();
        }
        let keep: Vec<usize> = (0..self.n_features())
            .filter(|&j| {
                let first = self.value(0, j);
                (1..self.n_rows()).any(|i| self.value(i, j) != first)
            })
            .collect();
        if keep.len() == self.n_features() {
            return Vec::new();
        }
        let dropped: Vec<String> = (0..self.n_features())
            .filter(|j| !keep.contains(j))
            .map(|j| self.feature_names[j].clone())
            .collect();
        let mut out = self.select_columns(&keep);
        out.pruned.extend(dropped.iter().cloned());
        *self = out;
        dropped
    }

    /// Questions backing `names`, deduplicated, in first-appearance order.
    pub fn backing_questions<S: AsRef<str>>(&self, names: &[S]) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for n in names {
            if let Some(j) = self.feature_index(n.as_ref()) {
                if let FeatureSource::Question(q) = &self.sources[j] {
                    if !out.contains(q) {
                        out.push(q.clone());
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FeatureMatrix {
        FeatureMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                FeatureSource::Question("1".into()),
                FeatureSource::Question("1".into()),
                FeatureSource::Age,
            ],
            vec!["x".into(), "y".into()],
            vec![20, 50],
            vec![1, 0, 20, 1, 1, 50],
            vec![Label::Positive, Label::Negative],
        )
        .unwrap()
    }

    #[test]
    fn constant_columns_are_pruned_and_logged() {
        let mut m = small();
        let dropped = m.prune_constant();
        assert_eq!(dropped, vec!["a".to_string()]);
        assert_eq!(m.feature_names, vec!["b", "c"]);
        assert_eq!(m.row(1), &[1, 50]);
        assert_eq!(m.pruned, vec!["a"]);
    }

    #[test]
    fn column_and_row_selection() {
        let m = small();
        let s = m.select_features(&["c", "a"]).unwrap();
        assert_eq!(s.row(0), &[20, 1]);
        let r = m.select_rows(&[1]);
        assert_eq!(r.row(0), &[1, 1, 50]);
        assert!(m.select_features(&["zzz"]).is_err());
        assert_eq!(m.backing_questions(&["c", "b", "a"]), vec!["1"]);
    }

    #[test]
    fn weights_must_be_positive() {
        let mut m = small();
        assert!(m.set_weights(vec![1.0, 0.0]).is_err());
        assert!(m.set_weights(vec![1.0]).is_err());
        m.set_weights(vec![2.0, 0.5]).unwrap();
        assert_eq!(m.total_weight(), 2.5);
    }
}
