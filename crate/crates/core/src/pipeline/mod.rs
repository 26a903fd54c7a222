//! Screener assembly: age silos, the cumulative questionnaire variants,
//! inconclusive calibration, presence-feature augmentation and score fusion.

mod artifact;
mod band;
mod combine;
mod inject;
mod meta;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use artifact::{DecisionRecord, ScreenerArtifact, ScreenerBundle, TrainingMetadata, ARTIFACT_FORMAT_VERSION};
pub use band::{
    band_outcome, calibrate_band, quantile_grid, BandCalibration, BandOutcome, Decision, DecisionBand,
};
pub use combine::{
    combine, fusion_cv, screen, train_combined, CombineOutcome, CombinedScreener, CombinedSilo, FusionConfig,
    FusionMetrics, ScreeningRequest, VideoRoute, FUSION_INPUTS,
};
pub use inject::{
    inject_missing, zero_branch_purity, zero_share, FeatureInjection, Injection, InjectionConfig, InjectionStatus,
};
pub use meta::{meta_inconclusive, MetaOutcome, MetaResult, MetaStages};

use crate::data::{Dataset, MAX_AGE_MONTHS, MIN_AGE_MONTHS};
use crate::encoding::{aggregates, encode, EncodingMode, EncodingSpec, FeatureMatrix};
use crate::evaluation::{
    balance_weights, bootstrapped_cv, roc, tune_threshold, CVConfig, CvReport, MetricSummary, Trainer,
    DEFAULT_AGE_BOUNDARIES,
};
use crate::learners::{train_forest, ForestParams};
use crate::selection::{naive_select, robust_select, SelectionConfig, SelectionReport};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Silo {
    /// One model for every age.
    All,
    Young,
    Old,
}

impl Silo {
    pub fn as_str(self) -> &'static str {
        match self {
            Silo::All => "all",
            Silo::Young => "young",
            Silo::Old => "old",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiloConfig {
    pub boundary_months: u8,
}

impl Default for SiloConfig {
    fn default() -> Self {
        SiloConfig {
            boundary_months: crate::data::AGE_BOUNDARY_MONTHS,
        }
    }
}

impl SiloConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_AGE_MONTHS < self.boundary_months && self.boundary_months <= MAX_AGE_MONTHS) {
            return Err(Error::Parameter(format!(
                "silo boundary {} outside the {MIN_AGE_MONTHS}-{MAX_AGE_MONTHS} month range",
                self.boundary_months
            )));
        }
        Ok(())
    }

    pub fn silo_of(&self, age_months: u8) -> Silo {
        if age_months < self.boundary_months {
            Silo::Young
        } else {
            Silo::Old
        }
    }

    /// Silo for a runtime age, with a warning when the age is outside the
    /// trained range (the nearest silo is used).
    pub fn route(&self, age_months: u8) -> (Silo, Option<String>) {
        let warning = (!(MIN_AGE_MONTHS..=MAX_AGE_MONTHS).contains(&age_months)).then(|| {
            format!("age {age_months} months outside {MIN_AGE_MONTHS}-{MAX_AGE_MONTHS}; using the nearest silo")
        });
        (self.silo_of(age_months), warning)
    }
}

/// Partitions by `age_months < boundary`.
pub fn silo_split(data: &Dataset, cfg: &SiloConfig) -> Result<BTreeMap<Silo, Dataset>> {
    cfg.validate()?;
    let mut out = BTreeMap::new();
    for silo in [Silo::Young, Silo::Old] {
        let part = data.filter(|s| cfg.silo_of(s.age_months) == silo);
        if part.is_empty() {
            return Err(Error::Training(format!("{} silo is empty", silo.as_str())));
        }
        out.insert(silo, part);
    }
    Ok(out)
}

/// Cumulative questionnaire variants, each adding one idea to the previous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One-hot encoding, top features of a single forest.
    Baseline,
    /// Bootstrapped two-step selection.
    Robust,
    /// Separate screeners per age silo.
    Siloed,
    /// Severity encoding in place of one-hot.
    Severity,
    /// Aggregate severity columns over the selected questions.
    Aggregate,
    /// Inconclusive band on top.
    Inconclusive,
}

impl Variant {
    pub const LADDER: [Variant; 6] = [
        Variant::Baseline,
        Variant::Robust,
        Variant::Siloed,
        Variant::Severity,
        Variant::Aggregate,
        Variant::Inconclusive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Robust => "robust",
            Variant::Siloed => "siloed",
            Variant::Severity => "severity",
            Variant::Aggregate => "aggregate",
            Variant::Inconclusive => "inconclusive",
        }
    }

    pub fn robust(self) -> bool {
        self >= Variant::Robust
    }

    pub fn siloed(self) -> bool {
        self >= Variant::Siloed
    }

    pub fn severity(self) -> bool {
        self >= Variant::Severity
    }

    pub fn aggregates(self) -> bool {
        self >= Variant::Aggregate
    }

    pub fn inconclusive(self) -> bool {
        self >= Variant::Inconclusive
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::LADDER
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InconclusiveMethod {
    /// Score interval tuned on out-of-fold scores.
    CutoffRange,
    /// Gate model predicting the screener's mistakes.
    MetaClassifier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InconclusiveConfig {
    pub method: InconclusiveMethod,
    pub max_inconclusive_rate: f64,
}

impl Default for InconclusiveConfig {
    fn default() -> Self {
        InconclusiveConfig {
            method: InconclusiveMethod::CutoffRange,
            max_inconclusive_rate: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub forest: ForestParams,
    pub selection: SelectionConfig,
    pub cv: CVConfig,
    pub silo: SiloConfig,
    pub inconclusive: InconclusiveConfig,
    /// Applied to presence-encoded (video) training sets; `None` disables it.
    pub injection: Option<InjectionConfig>,
    /// Tune binary thresholds to this out-of-fold sensitivity instead of
    /// maximising balanced accuracy.
    pub target_sensitivity: Option<f64>,
    /// Age boundaries of the (age group, label) weighting cells.
    pub weight_boundaries: Vec<u8>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Aggregate,
            forest: ForestParams::default(),
            selection: SelectionConfig::default(),
            cv: CVConfig::default(),
            silo: SiloConfig::default(),
            inconclusive: InconclusiveConfig::default(),
            injection: Some(InjectionConfig::default()),
            target_sensitivity: None,
            weight_boundaries: DEFAULT_AGE_BOUNDARIES.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        TrainConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.forest.validate()?;
        self.selection.validate()?;
        self.cv.validate()?;
        self.silo.validate()?;
        if let Some(inj) = &self.injection {
            inj.validate()?;
        }
        if !(0.0..1.0).contains(&self.inconclusive.max_inconclusive_rate) {
            return Err(Error::Parameter("max_inconclusive_rate not in [0,1)".into()));
        }
        if let Some(t) = self.target_sensitivity {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Parameter(format!("target sensitivity {t} not in (0,1]")));
            }
        }
        Ok(())
    }
}

/// Forest trainer that augments each training fold with [`inject_missing`].
pub struct InjectedForest {
    pub forest: ForestParams,
    pub injection: InjectionConfig,
}

impl Trainer for InjectedForest {
    fn fit_predict(&self, train: &FeatureMatrix, test: &FeatureMatrix, seed: u64) -> Result<Vec<f64>> {
        let augmented = inject_missing(train, &self.injection)?.matrix;
        train_forest(&augmented, &self.forest.with_seed(seed))?.predict_matrix(test)
    }
}

/// Forest trainer that first picks its top `k` features on the training fold
/// alone, so selection never sees the held-out fold.
pub struct SelectingForest {
    pub forest: ForestParams,
    pub k: usize,
}

impl Trainer for SelectingForest {
    fn fit_predict(&self, train: &FeatureMatrix, test: &FeatureMatrix, seed: u64) -> Result<Vec<f64>> {
        let params = self.forest.with_seed(seed);
        let selected = naive_select(train, self.k.min(train.n_features()), &params)?;
        let train = train.select_features(&selected)?;
        train_forest(&train, &params)?.predict_matrix(test)
    }
}

/// What one silo's training produced besides its artifact.
#[derive(Clone, Debug)]
pub struct SiloRun {
    pub silo: Silo,
    pub subject_ids: Vec<String>,
    pub cv: CvReport,
    pub selection: Option<SelectionReport>,
}

#[derive(Clone, Debug)]
pub struct VariantResult {
    pub variant: Variant,
    pub bundle: ScreenerBundle,
    pub runs: Vec<SiloRun>,
    /// Per-round AUC over out-of-fold scores pooled across silos.
    pub auc: MetricSummary,
}

/// Encoding a variant uses for `spec`: presence for video instruments,
/// otherwise one-hot or severity by variant.
pub fn variant_spec(spec: &EncodingSpec, variant: Variant, instrument: crate::data::Instrument) -> Result<EncodingSpec> {
    if instrument.is_video() {
        spec.with_mode(EncodingMode::Presence)
    } else if variant.severity() {
        spec.with_mode(EncodingMode::Severity)
    } else {
        spec.with_mode(EncodingMode::OneHot)
    }
}

/// Trains the screener(s) of one variant. Weights balance (age group, label)
/// cells over the whole dataset; each silo keeps its samples' weights.
pub fn train_variant(data: &Dataset, spec: &EncodingSpec, cfg: &TrainConfig) -> Result<VariantResult> {
    cfg.validate()?;
    let spec = variant_spec(spec, cfg.variant, data.instrument)?;
    let weights = balance_weights(data, &cfg.weight_boundaries)?.weights;

    let parts: Vec<(Silo, Vec<usize>)> = if cfg.variant.siloed() {
        silo_split(data, &cfg.silo)?;
        [Silo::Young, Silo::Old]
            .into_iter()
            .map(|s| {
                let idx = (0..data.len())
                    .filter(|&i| cfg.silo.silo_of(data.sheets[i].age_months) == s)
                    .collect();
                (s, idx)
            })
            .collect()
    } else {
        vec![(Silo::All, (0..data.len()).collect())]
    };

    let mut artifacts = Vec::new();
    let mut runs = Vec::new();
    for (silo, idx) in parts {
        let part = data.subset(&idx);
        let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
        let (artifact, run) = train_silo(&part, &w, &spec, silo, cfg)?;
        log::info!(
            "{} / {}: CV AUC {:.4}",
            cfg.variant.as_str(),
            silo.as_str(),
            run.cv.auc.mean
        );
        artifacts.push(artifact);
        runs.push(run);
    }
    let auc = pooled_auc(&runs)?;
    Ok(VariantResult {
        variant: cfg.variant,
        bundle: ScreenerBundle::new(data.instrument, cfg.variant, cfg.silo.clone(), artifacts),
        runs,
        auc,
    })
}

/// AUC per round over the union of every silo's out-of-fold scores.
fn pooled_auc(runs: &[SiloRun]) -> Result<MetricSummary> {
    let mut aucs = Vec::new();
    let n_rounds = runs[0].cv.config.n_bootstrap_rounds;
    for r in 0..n_rounds {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        let mut weights = Vec::new();
        let mut complete = true;
        for run in runs {
            match run.cv.rounds.iter().find(|x| x.round == r) {
                Some(round) => {
                    scores.extend_from_slice(&round.oof_scores);
                    labels.extend_from_slice(&run.cv.labels);
                    weights.extend_from_slice(&run.cv.weights);
                }
                None => complete = false,
            }
        }
        if complete {
            aucs.push(roc(&scores, &labels, &weights)?.auc);
        }
    }
    if aucs.is_empty() {
        return Err(Error::Evaluation("no round completed in every silo".into()));
    }
    Ok(MetricSummary::from_values(&aucs))
}

fn train_silo(
    data: &Dataset,
    weights: &[f64],
    spec: &EncodingSpec,
    silo: Silo,
    cfg: &TrainConfig,
) -> Result<(ScreenerArtifact, SiloRun)> {
    let mut m = encode(data, spec)?;
    m.set_weights(weights.to_vec())?;
    let k = cfg.selection.final_k.min(m.n_features());

    let (selected, selection) = if cfg.variant.robust() {
        let sel = SelectionConfig { final_k: k, ..cfg.selection.clone() };
        let report = robust_select(&m, &sel, &cfg.forest)?;
        (report.selected.clone(), Some(report))
    } else {
        (naive_select(&m, k, &cfg.forest.with_seed(cfg.selection.seed))?, None)
    };
    let questions = m.backing_questions(&selected);
    let mut model_m = m.select_features(&selected)?;
    let aggregate_questions = if cfg.variant.aggregates() && !questions.is_empty() {
        let agg = aggregates(data, &questions, spec)?;
        model_m = model_m.hstack(&agg)?;
        questions.clone()
    } else {
        Vec::new()
    };

    let presence = spec.uniform_mode() == Some(EncodingMode::Presence);
    let injection = cfg.injection.clone().filter(|_| presence);
    let injected;
    let trainer: &dyn Trainer = match &injection {
        Some(inj) => {
            injected = InjectedForest {
                forest: cfg.forest.clone(),
                injection: inj.clone(),
            };
            &injected
        }
        None => &cfg.forest,
    };
    let cv = bootstrapped_cv(&model_m, &cfg.cv, trainer)?;

    let mut injection_report = None;
    let fit_m = match &injection {
        Some(inj) => {
            let out = inject_missing(&model_m, inj)?;
            injection_report = Some(out.features);
            out.matrix
        }
        None => model_m.clone(),
    };
    let model = train_forest(&fit_m, &cfg.forest)?;

    let (scores, labels, pooled_w) = cv.pooled();
    let mut calibration = None;
    let mut meta = None;
    let mut notes = Vec::new();
    let band = if cfg.variant.inconclusive() {
        match cfg.inconclusive.method {
            InconclusiveMethod::CutoffRange => {
                let c = calibrate_band(&scores, &labels, &pooled_w, cfg.inconclusive.max_inconclusive_rate)?;
                let band = c.band;
                calibration = Some(c);
                band
            }
            InconclusiveMethod::MetaClassifier => {
                let r = meta_inconclusive(&model_m, &cfg.forest, &cfg.cv, cfg.inconclusive.max_inconclusive_rate)?;
                match r.outcome {
                    MetaOutcome::Stages { stages, .. } => {
                        meta = Some(stages);
                        DecisionBand::binary(r.screener_threshold)
                    }
                    MetaOutcome::Fallback { calibration: c, warning } => {
                        notes.push(warning);
                        let band = c.band;
                        calibration = Some(c);
                        band
                    }
                }
            }
        }
    } else if let Some(target) = cfg.target_sensitivity {
        let t = tune_threshold(&roc(&scores, &labels, &pooled_w)?, target)?;
        DecisionBand::binary(t.threshold)
    } else {
        calibrate_band(&scores, &labels, &pooled_w, 0.0)?.band
    };
    if injection.is_some() {
        notes.push("zero-value balance read as a 50% positive weight share among zero-valued rows".into());
    }

    let mut needed = questions.clone();
    needed.extend(aggregate_questions.iter().cloned());
    needed.sort();
    needed.dedup();
    let artifact = ScreenerArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        silo,
        instrument: data.instrument,
        variant: cfg.variant,
        encoding: spec.restrict(&needed)?,
        selected_features: selected,
        questions,
        aggregate_questions,
        model,
        band,
        meta,
        metadata: TrainingMetadata {
            n_samples: data.len(),
            forest: cfg.forest.clone(),
            selection: cfg.variant.robust().then(|| cfg.selection.clone()),
            cv: cfg.cv.clone(),
            cv_auc: cv.auc,
            cv_sensitivity: cv.sensitivity,
            cv_specificity: cv.specificity,
            calibration,
            injection: injection_report,
            notes,
        },
    };
    let run = SiloRun {
        silo,
        subject_ids: data.sheets.iter().map(|s| s.subject_id.clone()).collect(),
        cv,
        selection,
    };
    Ok((artifact, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Gender, Instrument, Label, ScoreSheet};

    fn sheets(ages: &[u8]) -> Dataset {
        let sheets = ages
            .iter()
            .enumerate()
            .map(|(i, &a)| ScoreSheet {
                subject_id: format!("s{i}"),
                age_months: a,
                gender: Gender::Female,
                answers: BTreeMap::new(),
                label: Label::from_bool(i % 2 == 0),
            })
            .collect();
        Dataset::new(sheets, Instrument::AdirLike, "test").unwrap()
    }

    #[test]
    fn silos_split_at_the_boundary() {
        let d = sheets(&[24, 47, 48, 60]);
        let parts = silo_split(&d, &SiloConfig::default()).unwrap();
        let ages = |s: Silo| parts[&s].sheets.iter().map(|x| x.age_months).collect::<Vec<_>>();
        assert_eq!(ages(Silo::Young), vec![24, 47]);
        assert_eq!(ages(Silo::Old), vec![48, 60]);
    }

    #[test]
    fn empty_silo_is_an_error() {
        let d = sheets(&[24, 30, 40]);
        assert!(matches!(silo_split(&d, &SiloConfig::default()), Err(Error::Training(_))));
    }

    #[test]
    fn out_of_range_age_routes_with_warning() {
        let cfg = SiloConfig::default();
        assert_eq!(cfg.route(30), (Silo::Young, None));
        let (silo, warning) = cfg.route(90);
        assert_eq!(silo, Silo::Old);
        assert!(warning.is_some());
    }

    #[test]
    fn variant_flags_accumulate() {
        assert!(!Variant::Baseline.robust());
        assert!(Variant::Aggregate.siloed() && Variant::Aggregate.severity());
        assert!(!Variant::Aggregate.inconclusive());
        assert_eq!("severity".parse::<Variant>().unwrap(), Variant::Severity);
    }
}
