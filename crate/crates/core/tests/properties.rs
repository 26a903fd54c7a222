use proptest::prelude::*;

use screener_core::data::Label;
use screener_core::encoding::{encode_responses, question_feature_names, EncodingMode, EncodingSpec, FeatureMatrix, FeatureSource, QuestionSpec, Responses};
use screener_core::evaluation::{balance, roc, stratified_folds};
use screener_core::learners::{train_forest, ForestParams, LogisticObjective};
use screener_core::pipeline::{band_outcome, calibrate_band};
use screener_core::selection::{robust_select, SelectionConfig};

fn labels_of(bits: &[bool]) -> Vec<Label> {
    bits.iter().map(|&b| Label::from_bool(b)).collect()
}

/// Weighted concordance over every positive/negative pair, ties counting half.
fn brute_auc(scores: &[f64], labels: &[Label], weights: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        if !labels[i].is_positive() {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j].is_positive() {
                continue;
            }
            let w = weights[i] * weights[j];
            den += w;
            if scores[i] > scores[j] {
                num += w;
            } else if scores[i] == scores[j] {
                num += 0.5 * w;
            }
        }
    }
    num / den
}

/// Scores drawn from a small grid so ties are common, with both classes present.
fn scored_sample() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<f64>)> {
    (4usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..12).prop_map(|k| k as f64 / 11.0), n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(0.1f64..5.0, n),
        )
            .prop_filter("both classes", |(_, l, _)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weighted_auc_matches_pair_count((s, l, w) in scored_sample()) {
        let labels = labels_of(&l);
        let auc = roc(&s, &labels, &w).unwrap().auc;
        prop_assert!((auc - brute_auc(&s, &labels, &w)).abs() <= 1e-9);
    }

    #[test]
    fn auc_ignores_monotone_transforms((s, l, w) in scored_sample()) {
        let labels = labels_of(&l);
        let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
        let a = roc(&s, &labels, &w).unwrap().auc;
        let b = roc(&t, &labels, &w).unwrap().auc;
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn integer_weight_equals_duplication(
        (s, l, _) in scored_sample(),
        reps in prop::collection::vec(1usize..4, 40),
    ) {
        let labels = labels_of(&l);
        let w: Vec<f64> = (0..s.len()).map(|i| reps[i] as f64).collect();
        let (mut ds, mut dl) = (Vec::new(), Vec::new());
        for i in 0..s.len() {
            for _ in 0..reps[i] {
                ds.push(s[i]);
                dl.push(labels[i]);
            }
        }
        let a = roc(&s, &labels, &w).unwrap().auc;
        let b = roc(&ds, &dl, &vec![1.0; ds.len()]).unwrap().auc;
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn folds_partition_and_stratify(
        n_pos in 5usize..40,
        n_neg in 5usize..40,
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        let mut l = vec![true; n_pos];
        l.extend(vec![false; n_neg]);
        let labels = labels_of(&l);
        let folds = stratified_folds(&labels, k, seed).unwrap();
        prop_assert_eq!(folds.len(), labels.len());
        for class in [true, false] {
            let mut counts = vec![0usize; k];
            for (f, &b) in folds.iter().zip(&l) {
                prop_assert!(*f < k);
                if b == class {
                    counts[*f] += 1;
                }
            }
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn balanced_cells_have_equal_totals(
        cells in prop::collection::vec(1usize..30, 4),
    ) {
        // cells: young positive, young negative, old positive, old negative
        let mut ages = Vec::new();
        let mut labels = Vec::new();
        for (c, &n) in cells.iter().enumerate() {
            for _ in 0..n {
                ages.push(if c < 2 { 30 } else { 60 });
                labels.push(Label::from_bool(c % 2 == 0));
            }
        }
        let scheme = balance(&ages, &labels, &[48]).unwrap();
        let mut totals = [0.0; 4];
        for i in 0..ages.len() {
            let c = usize::from(ages[i] >= 48) * 2 + usize::from(!labels[i].is_positive());
            totals[c] += scheme.weights[i];
        }
        for t in &totals[1..] {
            prop_assert!((t - totals[0]).abs() <= 1e-9 * totals[0]);
        }
    }

    #[test]
    fn looser_cap_never_hurts((s, l, w) in scored_sample(), a in 0.0f64..0.5, b in 0.0f64..0.5) {
        let labels = labels_of(&l);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let tight = calibrate_band(&s, &labels, &w, lo).unwrap();
        let loose = calibrate_band(&s, &labels, &w, hi).unwrap();
        prop_assert!(loose.conclusive_balanced_accuracy >= tight.conclusive_balanced_accuracy - 1e-12);
        for c in [&tight, &loose] {
            prop_assert!(c.inconclusive_rate <= c.max_inconclusive_rate + 1e-12);
            let o = band_outcome(&c.band, &s, &labels, &w);
            prop_assert!((o.inconclusive_rate() - c.inconclusive_rate).abs() <= 1e-12);
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences(
        rows in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, any::<bool>(), 0.2f64..3.0), 6..30),
        beta in prop::collection::vec(-1.5f64..1.5, 3),
        l2 in 0.0f64..0.5,
    ) {
        let inputs: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
        let mut positive: Vec<bool> = rows.iter().map(|r| r.2).collect();
        positive[0] = true;
        positive[1] = false;
        let weights: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let obj = LogisticObjective::new(&inputs, &positive, &weights, l2).unwrap();
        let g = obj.gradient(&beta);
        let h = 1e-5;
        for k in 0..beta.len() {
            let mut up = beta.clone();
            let mut down = beta.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (obj.value(&up) - obj.value(&down)) / (2.0 * h);
            let rel = (fd - g[k]).abs() / g[k].abs().max(1.0);
            prop_assert!(rel <= 1e-6, "component {}: analytic {} vs fd {}", k, g[k], fd);
        }
    }

    #[test]
    fn severity_features_nest_along_the_chain(a in 0usize..4, b in 0usize..4) {
        let mut questions = indexmap::IndexMap::new();
        questions.insert("37".to_string(), QuestionSpec::standard(EncodingMode::Severity));
        let spec = EncodingSpec::new(questions).unwrap();
        let names = question_feature_names("37", &spec.questions["37"]);
        let bits = |code: u8| {
            let r = Responses {
                answers: [("37".to_string(), code)].into_iter().collect(),
                age_months: 30,
                gender: screener_core::data::Gender::Female,
            };
            encode_responses(&r, &spec, &[], &names).unwrap()
        };
        let (lo, hi) = if a <= b { (a as u8, b as u8) } else { (b as u8, a as u8) };
        // the `==0` column is the base indicator; the rest of the chain nests
        let (x, y) = (bits(lo), bits(hi));
        for j in 1..4 {
            prop_assert!(x[j] <= y[j]);
        }
    }
}

fn random_matrix(n: usize, p: usize, seed: u64) -> FeatureMatrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2 == 0;
        for j in 0..p {
            let signal = j < 3 && rng.gen_bool(0.7);
            values.push(if signal { u8::from(y) } else { rng.gen_range(0..2) });
        }
        labels.push(Label::from_bool(y));
    }
    FeatureMatrix::new(
        (0..p).map(|j| format!("q{j}==1")).collect(),
        (0..p).map(|j| FeatureSource::Question(j.to_string())).collect(),
        (0..n).map(|i| format!("s{i}")).collect(),
        vec![30; n],
        values,
        labels,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn duplicated_rows_train_like_doubled_weights(seed in any::<u64>(), dup in prop::collection::vec(any::<bool>(), 60)) {
        let m = random_matrix(60, 8, seed);
        let params = ForestParams { n_trees: 15, seed, ..ForestParams::default() };
        let mut idx = Vec::new();
        let mut weights = Vec::new();
        for i in 0..60 {
            idx.push(i);
            weights.push(if dup[i] { 2.0 } else { 1.0 });
            if dup[i] {
                idx.push(i);
            }
        }
        let duplicated = m.select_rows(&idx);
        let mut weighted = m.clone();
        weighted.set_weights(weights).unwrap();
        let a = train_forest(&duplicated, &params).unwrap();
        let b = train_forest(&weighted, &params).unwrap();
        let pa = a.predict_matrix(&m).unwrap();
        let pb = b.predict_matrix(&m).unwrap();
        prop_assert_eq!(pa.clone(), pb);
        prop_assert!(pa.iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn tally_is_conserved_and_candidates_dominate(seed in any::<u64>()) {
        let m = random_matrix(80, 12, seed);
        let cfg = SelectionConfig {
            n_bootstrap: 6,
            per_iteration_top_k: 4,
            candidate_pool: 6,
            final_k: 3,
            seed,
            ..SelectionConfig::default()
        };
        let params = ForestParams { n_trees: 10, ..ForestParams::default() };
        let r = robust_select(&m, &cfg, &params).unwrap();
        prop_assert_eq!(r.tally.values().sum::<usize>(), 6 * 4);
        let count = |f: &str| r.tally.get(f).copied().unwrap_or(0);
        let min_candidate = r.candidates.iter().map(|c| count(c)).min().unwrap();
        for name in &m.feature_names {
            if !r.candidates.contains(name) {
                prop_assert!(count(name) <= min_candidate);
            }
        }
        prop_assert!(r.selected.iter().all(|s| r.candidates.contains(s)));
        prop_assert_eq!(r.selected.len(), 3);
    }
}
