//! Weighted random forest over small unsigned feature values.
//!
//! Identical rows (same values and label) are merged into one weighted row
//! before anything else happens, so duplicating a row and doubling its
//! weight produce the same forest for a given seed. Bootstrap draws are
//! weight-proportional over the merged rows.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::FeatureMatrix;
use crate::rng::{derive_seed, rng_from, Rng};
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// How many features a split considers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum FeaturesPerSplit {
    Sqrt,
    Fraction(f64),
    All,
}

impl FeaturesPerSplit {
    pub fn count(self, n_features: usize) -> usize {
        let k = match self {
            FeaturesPerSplit::Sqrt => (n_features as f64).sqrt().floor() as usize,
            FeaturesPerSplit::Fraction(f) => (f * n_features as f64).round() as usize,
            FeaturesPerSplit::All => n_features,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until the leaf-size or purity limits stop it.
    pub max_depth: Option<usize>,
    /// Minimum leaf weight, as a fraction of the total training weight.
    pub min_samples_leaf: f64,
    pub features_per_split: FeaturesPerSplit,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 400,
            max_depth: None,
            min_samples_leaf: 0.01,
            features_per_split: FeaturesPerSplit::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Parameter("n_trees must be at least 1".into()));
        }
        if !(self.min_samples_leaf > 0.0 && self.min_samples_leaf < 1.0) {
            return Err(Error::Parameter(format!(
                "min_samples_leaf {} not in (0,1)",
                self.min_samples_leaf
            )));
        }
        if self.max_depth == Some(0) {
            return Err(Error::Parameter("max_depth must be at least 1".into()));
        }
        if let FeaturesPerSplit::Fraction(f) = self.features_per_split {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Parameter(format!("features_per_split fraction {f} not in (0,1]")));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ForestParams { seed, ..self.clone() }
    }
}

/// A decision-tree node. Rows with `value <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        /// Weighted share of positives reaching this leaf.
        positive: f64,
        weight: f64,
    },
}

impl Node {
    pub fn leaf_positive(&self, row: &[u8]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { positive, .. } => return *positive,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if f64::from(row[*feature]) <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    fn visit_splits(&self, f: &mut impl FnMut(usize)) {
        if let Node::Split {
            feature, left, right, ..
        } = self
        {
            f(*feature);
            left.visit_splits(f);
            right.visit_splits(f);
        }
    }

    fn visit_leaves(&self, f: &mut impl FnMut(f64)) {
        match self {
            Node::Leaf { positive, .. } => f(*positive),
            Node::Split { left, right, .. } => {
                left.visit_leaves(f);
                right.visit_leaves(f);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    /// Normalised impurity-decrease importance per feature.
    pub importances: Vec<f64>,
    pub trees: Vec<Node>,
}

impl ForestModel {
    /// Checks the structural invariants (valid split indices, leaf shares in
    /// [0,1], importances normalised); used after deserialisation.
    pub fn check(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Contract(format!(
                "unsupported model format version {}",
                self.format_version
            )));
        }
        let p = self.feature_names.len();
        if self.importances.len() != p {
            return Err(Error::Contract("importance vector length mismatch".into()));
        }
        let mut bad = None;
        for tree in &self.trees {
            tree.visit_splits(&mut |f| {
                if f >= p {
                    bad = Some(format!("split on feature {f} of {p}"));
                }
            });
            tree.visit_leaves(&mut |v| {
                if !(0.0..=1.0).contains(&v) {
                    bad = Some(format!("leaf share {v} outside [0,1]"));
                }
            });
        }
        match bad {
            Some(m) => Err(Error::Contract(m)),
            None => Ok(()),
        }
    }

    /// Mean leaf positive share across trees.
    pub fn predict_score(&self, row: &[u8]) -> Result<f64> {
        if row.len() != self.feature_names.len() {
            return Err(Error::Contract(format!(
                "row has {} values, model expects {}",
                row.len(),
                self.feature_names.len()
            )));
        }
        Ok(self.score_unchecked(row))
    }

    fn score_unchecked(&self, row: &[u8]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.leaf_positive(row)).sum();
        sum / self.trees.len() as f64
    }

    /// Scores every row of `m`, matching columns by name.
    pub fn predict_matrix(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        let aligned;
        let m = if m.feature_names == self.feature_names {
            m
        } else {
            aligned = m.select_features(&self.feature_names)?;
            &aligned
        };
        Ok((0..m.n_rows()).map(|i| self.score_unchecked(m.row(i))).collect())
    }

    /// Features ranked by importance, ties broken by name.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        rank_importances(&self.feature_names, &self.importances)
    }
}

pub fn rank_importances(names: &[String], importances: &[f64]) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = names.iter().cloned().zip(importances.iter().copied()).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Training rows after merging duplicates, stored column-major.
struct Compact {
    columns: Vec<Vec<u8>>,
    positive: Vec<bool>,
    weight: Vec<f64>,
    cardinality: Vec<usize>,
}

fn compact(m: &FeatureMatrix) -> Compact {
    let mut index: HashMap<(&[u8], bool), usize> = HashMap::with_capacity(m.n_rows());
    let mut rows: Vec<usize> = Vec::new();
    let mut weight: Vec<f64> = Vec::new();
    for i in 0..m.n_rows() {
        let key = (m.row(i), m.labels[i].is_positive());
        match index.get(&key) {
            Some(&u) => weight[u] += m.weights[i],
            None => {
                index.insert(key, rows.len());
                rows.push(i);
                weight.push(m.weights[i]);
            }
        }
    }
    let p = m.n_features();
    let columns: Vec<Vec<u8>> = (0..p).map(|j| rows.iter().map(|&i| m.value(i, j)).collect()).collect();
    let cardinality = columns
        .iter()
        .map(|c| c.iter().copied().max().map_or(1, |v| v as usize + 1))
        .collect();
    Compact {
        columns,
        positive: rows.iter().map(|&i| m.labels[i].is_positive()).collect(),
        weight,
        cardinality,
    }
}

pub fn train_forest(m: &FeatureMatrix, params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    if m.n_features() == 0 {
        return Err(Error::Training("no features".into()));
    }
    if m.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Parameter("sample weights must be finite and non-negative".into()));
    }
    let total: f64 = m.weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Parameter("total sample weight is zero".into()));
    }
    let pos: f64 = m
        .weights
        .iter()
        .zip(&m.labels)
        .filter(|(_, l)| l.is_positive())
        .map(|(w, _)| w)
        .sum();
    if pos <= 0.0 || pos >= total {
        return Err(Error::Training("training data must contain both classes".into()));
    }

    let data = compact(m);
    let p = m.n_features();
    let trees: Vec<(Node, Vec<f64>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(&data, params, derive_seed(params.seed, t as u64)))
        .collect();

    let mut importances = vec![0.0; p];
    let mut contributing = 0usize;
    for (_, imp) in &trees {
        let s: f64 = imp.iter().sum();
        if s > 0.0 {
            contributing += 1;
            for (acc, v) in importances.iter_mut().zip(imp) {
                *acc += v / s;
            }
        }
    }
    if contributing == 0 {
        // no tree ever split: nothing distinguishes the features
        importances.iter_mut().for_each(|v| *v = 1.0 / p as f64);
    } else {
        let s: f64 = importances.iter().sum();
        importances.iter_mut().for_each(|v| *v /= s);
    }

    Ok(ForestModel {
        format_version: MODEL_FORMAT_VERSION,
        params: params.clone(),
        feature_names: m.feature_names.clone(),
        importances,
        trees: trees.into_iter().map(|(t, _)| t).collect(),
    })
}

struct Grower<'a> {
    data: &'a Compact,
    /// Per-row weight in this tree (bootstrap multiplicity × unit weight).
    weight: Vec<f64>,
    min_leaf: f64,
    max_depth: usize,
    mtry: usize,
    features: Vec<usize>,
    importance: Vec<f64>,
    hist_pos: Vec<f64>,
    hist_tot: Vec<f64>,
    rng: Rng,
}

const MIN_GAIN: f64 = 1e-12;

fn grow_tree(data: &Compact, params: &ForestParams, seed: u64) -> (Node, Vec<f64>) {
    let mut rng = rng_from(seed);
    let n = data.weight.len();
    let total: f64 = data.weight.iter().sum();
    let weight = if params.bootstrap {
        let dist = WeightedIndex::new(&data.weight).expect("positive total weight");
        let mut counts = vec![0u32; n];
        for _ in 0..n {
            counts[dist.sample(&mut rng)] += 1;
        }
        let unit = total / n as f64;
        counts.iter().map(|&c| c as f64 * unit).collect()
    } else {
        data.weight.clone()
    };
    let mut rows: Vec<usize> = (0..n).filter(|&i| weight[i] > 0.0).collect();
    let p = data.columns.len();
    let max_card = data.cardinality.iter().copied().max().unwrap_or(1);
    let mut g = Grower {
        data,
        weight,
        min_leaf: params.min_samples_leaf * total,
        max_depth: params.max_depth.unwrap_or(usize::MAX),
        mtry: params.features_per_split.count(p),
        features: (0..p).collect(),
        importance: vec![0.0; p],
        hist_pos: vec![0.0; max_card],
        hist_tot: vec![0.0; max_card],
        rng,
    };
    let root = g.build(&mut rows, 0);
    (root, g.importance)
}

struct BestSplit {
    feature: usize,
    /// Largest value sent left.
    cut: u8,
    threshold: f64,
    gain: f64,
}

#[inline]
fn node_impurity(pos: f64, tot: f64) -> f64 {
    // weighted Gini: tot * 2 p (1-p)
    if tot <= 0.0 {
        0.0
    } else {
        2.0 * pos * (tot - pos) / tot
    }
}

impl Grower<'_> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> Node {
        let (mut pos, mut tot) = (0.0, 0.0);
        for &i in rows.iter() {
            let w = self.weight[i];
            tot += w;
            if self.data.positive[i] {
                pos += w;
            }
        }
        let leaf = Node::Leaf {
            positive: if tot > 0.0 { (pos / tot).clamp(0.0, 1.0) } else { 0.0 },
            weight: tot,
        };
        if depth >= self.max_depth || pos <= 0.0 || pos >= tot || tot < 2.0 * self.min_leaf {
            return leaf;
        }
        let Some(best) = self.find_split(rows, pos, tot) else {
            return leaf;
        };
        self.importance[best.feature] += best.gain;

        let column = &self.data.columns[best.feature];
        let mut mid = 0;
        for k in 0..rows.len() {
            if column[rows[k]] <= best.cut {
                rows.swap(k, mid);
                mid += 1;
            }
        }
        let (l, r) = rows.split_at_mut(mid);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn find_split(&mut self, rows: &[usize], pos: f64, tot: f64) -> Option<BestSplit> {
        let parent = node_impurity(pos, tot);
        let p = self.features.len();
        let mut best: Option<BestSplit> = None;
        let mut visited = 0;
        let mut k = 0;
        // partial Fisher-Yates: draw features until `mtry` non-constant ones
        // have been evaluated or every feature has been tried
        while k < p && visited < self.mtry {
            let pick = self.rng_index(k, p);
            self.features.swap(k, pick);
            let f = self.features[k];
            k += 1;

            let card = self.data.cardinality[f];
            if card < 2 {
                continue;
            }
            let column = &self.data.columns[f];
            self.hist_pos[..card].iter_mut().for_each(|v| *v = 0.0);
            self.hist_tot[..card].iter_mut().for_each(|v| *v = 0.0);
            for &i in rows {
                let v = column[i] as usize;
                let w = self.weight[i];
                self.hist_tot[v] += w;
                if self.data.positive[i] {
                    self.hist_pos[v] += w;
                }
            }
            let present = self.hist_tot[..card].iter().filter(|&&w| w > 0.0).count();
            if present < 2 {
                continue;
            }
            visited += 1;

            let (mut lp, mut lt) = (0.0, 0.0);
            let mut prev: Option<usize> = None;
            for v in 0..card {
                if self.hist_tot[v] <= 0.0 {
                    continue;
                }
                if let Some(u) = prev {
                    let rt = tot - lt;
                    if lt >= self.min_leaf && rt >= self.min_leaf {
                        let gain = parent - node_impurity(lp, lt) - node_impurity(pos - lp, rt);
                        if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                            best = Some(BestSplit {
                                feature: f,
                                cut: u as u8,
                                threshold: (u as f64 + v as f64) / 2.0,
                                gain,
                            });
                        }
                    }
                }
                lp += self.hist_pos[v];
                lt += self.hist_tot[v];
                prev = Some(v);
            }
        }
        best
    }

    fn rng_index(&mut self, lo: usize, hi: usize) -> usize {
        use rand::Rng as _;
        self.rng.gen_range(lo..hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;
    use crate::encoding::FeatureSource;

    pub(crate) fn matrix(rows: &[Vec<u8>], labels: &[bool]) -> FeatureMatrix {
        let p = rows[0].len();
        FeatureMatrix::new(
            (0..p).map(|j| format!("f{j}")).collect(),
            vec![FeatureSource::Aggregate; p],
            (0..rows.len()).map(|i| format!("s{i}")).collect(),
            vec![30; rows.len()],
            rows.concat(),
            labels.iter().map(|&b| Label::from_bool(b)).collect(),
        )
        .unwrap()
    }

    fn separable() -> FeatureMatrix {
        let rows: Vec<Vec<u8>> = (0..40).map(|i| vec![(i % 2) as u8, ((i / 3) % 2) as u8, (i % 5) as u8]).collect();
        let labels: Vec<bool> = (0..40).map(|i| i % 2 == 1).collect();
        matrix(&rows, &labels)
    }

    #[test]
    fn forced_stump_separates_and_owns_importance() {
        let m = separable();
        let params = ForestParams {
            n_trees: 1,
            max_depth: Some(1),
            features_per_split: FeaturesPerSplit::All,
            ..Default::default()
        };
        let model = train_forest(&m, &params).unwrap();
        let scores = model.predict_matrix(&m).unwrap();
        let correct = scores
            .iter()
            .zip(&m.labels)
            .filter(|(s, l)| (**s >= 0.5) == l.is_positive())
            .count();
        assert_eq!(correct, 40);
        let ranked = model.feature_importance();
        assert_eq!(ranked[0], ("f0".to_string(), 1.0));
    }

    #[test]
    fn single_class_and_zero_weight_are_rejected() {
        let mut m = separable();
        let params = ForestParams { n_trees: 2, ..Default::default() };
        let mut one = m.clone();
        one.labels = vec![Label::Positive; 40];
        assert!(matches!(train_forest(&one, &params), Err(Error::Training(_))));
        m.weights = vec![0.0; 40];
        assert!(matches!(train_forest(&m, &params), Err(Error::Parameter(_))));
    }

    #[test]
    fn params_are_validated() {
        let m = separable();
        for bad in [
            ForestParams { n_trees: 0, ..Default::default() },
            ForestParams { min_samples_leaf: 0.0, ..Default::default() },
            ForestParams { max_depth: Some(0), ..Default::default() },
            ForestParams { features_per_split: FeaturesPerSplit::Fraction(1.5), ..Default::default() },
        ] {
            assert!(matches!(train_forest(&m, &bad), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn leaf_share_is_the_score() {
        let tree = Node::Leaf { positive: 0.25, weight: 4.0 };
        let model = ForestModel {
            format_version: MODEL_FORMAT_VERSION,
            params: ForestParams::default(),
            feature_names: vec!["a".into()],
            importances: vec![1.0],
            trees: vec![tree],
        };
        assert_eq!(model.predict_score(&[0]).unwrap(), 0.25);
        assert!(matches!(model.predict_score(&[0, 1]), Err(Error::Contract(_))));
    }

    #[test]
    fn all_positive_leaves_score_one() {
        let leaf = || Box::new(Node::Leaf { positive: 1.0, weight: 1.0 });
        let model = ForestModel {
            format_version: MODEL_FORMAT_VERSION,
            params: ForestParams::default(),
            feature_names: vec!["a".into()],
            importances: vec![1.0],
            trees: vec![
                Node::Split { feature: 0, threshold: 0.5, left: leaf(), right: leaf() },
                Node::Leaf { positive: 1.0, weight: 2.0 },
            ],
        };
        assert_eq!(model.predict_score(&[1]).unwrap(), 1.0);
        model.check().unwrap();
    }

    #[test]
    fn score_ignores_tree_order() {
        let m = separable();
        let model = train_forest(&m, &ForestParams { n_trees: 25, seed: 3, ..Default::default() }).unwrap();
        let mut reversed = model.clone();
        reversed.trees.reverse();
        for i in 0..m.n_rows() {
            let a = model.predict_score(m.row(i)).unwrap();
            let b = reversed.predict_score(m.row(i)).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn importances_are_normalised_and_ranked() {
        let m = separable();
        let model = train_forest(&m, &ForestParams { n_trees: 30, ..Default::default() }).unwrap();
        let s: f64 = model.importances.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        let ranked = model.feature_importance();
        assert!(ranked.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn age_like_columns_split_at_midpoints() {
        let rows: Vec<Vec<u8>> = (0..60).map(|i| vec![20 + i as u8]).collect();
        let labels: Vec<bool> = (0..60).map(|i| 20 + i >= 48).collect();
        let m = matrix(&rows, &labels);
        let params = ForestParams { n_trees: 1, max_depth: Some(1), bootstrap: false, ..Default::default() };
        let model = train_forest(&m, &params).unwrap();
        match &model.trees[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 47.5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let m = separable();
        let model = train_forest(&m, &ForestParams { n_trees: 10, seed: 5, ..Default::default() }).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: ForestModel = serde_json::from_str(&text).unwrap();
        back.check().unwrap();
        assert_eq!(back, model);
        let a = model.predict_matrix(&m).unwrap();
        let b = back.predict_matrix(&m).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
