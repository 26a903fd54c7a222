use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use screener_core::data::{self, Dataset, Instrument, Label};
use screener_core::encoding::{encode, EncodingSpec, Responses};
use screener_core::evaluation::{
    balance_matrix, balance_weights, roc, tune_threshold, CVConfig, MetricSummary, TunedThreshold,
};
use screener_core::learners::ForestParams;
use screener_core::pipeline::{
    calibrate_band, screen, train_combined, train_variant, variant_spec, BandCalibration,
    CombinedScreener, Decision, DecisionRecord, FusionMetrics, ScreenerBundle, ScreeningRequest, SelectingForest,
    Silo, TrainConfig, Variant, VariantResult,
};
use screener_core::selection::{naive_select, progressive_sampling, robust_select, ProgressiveCurve, SelectionReport};
use screener_core::{Error, Result};

use crate::config::{check_fraction, default_video_spec, RunConfig, SelectMethod};
use crate::run::RunDir;
use crate::{
    CalibrateArgs, Cli, CombineArgs, Command, CvArgs, DataArgs, EvaluateArgs, ForestArgs, GenerateArgs,
    ProgressiveArgs, ScreenArgs, SelectArgs, SelectionArgs, TrainArgs, ValidateArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    match &cli.command {
        Command::Generate(a) => generate(a, cfg),
        Command::Validate(a) => validate(a, cfg),
        Command::Select(a) => select(a, cfg),
        Command::Train(a) => train(a, cfg),
        Command::Calibrate(a) => calibrate(a, cfg),
        Command::Evaluate(a) => evaluate(a, cfg),
        Command::Progressive(a) => progressive(a, cfg),
        Command::Screen(a) => screen_cmd(a, cfg),
        Command::Combine(a) => combine(a, cfg),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_forest(p: &mut ForestParams, a: &ForestArgs) {
    set(&mut p.n_trees, a.n_trees);
    if a.max_depth.is_some() {
        p.max_depth = a.max_depth;
    }
    set(&mut p.min_samples_leaf, a.min_samples_leaf);
}

fn apply_cv(c: &mut CVConfig, a: &CvArgs) {
    set(&mut c.n_bootstrap_rounds, a.cv_rounds);
    set(&mut c.n_folds, a.cv_folds);
}

fn apply_selection(s: &mut screener_core::selection::SelectionConfig, a: &SelectionArgs) {
    set(&mut s.n_bootstrap, a.n_bootstrap);
    set(&mut s.final_k, a.final_k);
    set(&mut s.candidate_pool, a.candidate_pool);
    set(&mut s.per_iteration_top_k, a.per_iteration_top_k);
}

fn load_data(run: &mut RunDir, a: &DataArgs) -> Result<(Dataset, EncodingSpec)> {
    run.input(&a.encoding)?;
    run.input(&a.data)?;
    let spec = EncodingSpec::load(&a.encoding)?;
    let data = data::load_csv(&a.data, a.instrument, &spec)?;
    Ok((data, spec))
}

fn csv_bytes<'a>(data: &'a Dataset, spec: &'a EncodingSpec) -> impl FnOnce(&mut Vec<u8>) -> Result<()> + 'a {
    move |buf| data::write_csv_to(data, spec, buf)
}

// ---------------------------------------------------------------------------

fn generate(a: &GenerateArgs, mut cfg: RunConfig) -> Result<()> {
    let g = &mut cfg.generate;
    let q = &mut g.questionnaire;
    set(&mut q.instrument, a.instrument);
    set(&mut q.n_questions, a.n_questions);
    set(&mut q.n_informative, a.n_informative);
    set(&mut q.n_samples, a.n_samples);
    set(&mut q.positive_fraction, a.positive_fraction);
    set(&mut q.age_signal_shift, a.age_signal_shift);
    set(&mut q.noise_rate, a.noise_rate);
    if a.with_video && g.video.is_none() {
        g.video = Some(default_video_spec());
    }
    if let Some(v) = &mut g.video {
        set(&mut v.n_questions, a.video_questions);
        set(&mut v.n_informative, a.video_informative);
    }
    if a.holdout_fraction.is_some() {
        g.holdout_fraction = a.holdout_fraction;
    }
    cfg.apply_seed();
    let g = &cfg.generate;
    if let Some(f) = g.holdout_fraction {
        check_fraction("holdout fraction", f)?;
    }
    g.questionnaire.validate()?;
    if let Some(v) = &g.video {
        v.validate()?;
    }

    let mut run = RunDir::new(Some(&a.out))?;
    let q = data::generate_synthetic(&g.questionnaire)?;
    let split = match g.holdout_fraction {
        Some(f) => Some(data::split_holdout(&q.dataset, f, g.questionnaire.seed)?),
        None => None,
    };
    write_split(&mut run, "", &q.dataset, &q.spec, split.as_ref())?;
    run.write_json("truth.json", &q.truth)?;
    if let Some(vspec) = &g.video {
        if !vspec.instrument.is_video() {
            return Err(Error::Parameter(format!(
                "video instrument must be an observation module, not {}",
                vspec.instrument.as_str()
            )));
        }
        let v = data::generate_companion(vspec, &q.dataset)?;
        let vsplit = split.as_ref().map(|(train, hold)| {
            let ids = |d: &Dataset| d.sheets.iter().map(|s| s.subject_id.clone()).collect::<BTreeSet<_>>();
            let (tr, ho) = (ids(train), ids(hold));
            (
                v.dataset.filter(|s| tr.contains(&s.subject_id)),
                v.dataset.filter(|s| ho.contains(&s.subject_id)),
            )
        });
        write_split(&mut run, "video_", &v.dataset, &v.spec, vsplit.as_ref())?;
        run.write_json("video_truth.json", &v.truth)?;
    }
    run.finish("generate", a, &cfg)
}

fn write_split(
    run: &mut RunDir,
    prefix: &str,
    data: &Dataset,
    spec: &EncodingSpec,
    split: Option<&(Dataset, Dataset)>,
) -> Result<()> {
    run.write_json(&format!("{prefix}encoding.json"), spec)?;
    match split {
        Some((train, hold)) => {
            run.write_with(&format!("{prefix}data.csv"), csv_bytes(train, spec))?;
            run.write_with(&format!("{prefix}holdout.csv"), csv_bytes(hold, spec))
        }
        None => run.write_with(&format!("{prefix}data.csv"), csv_bytes(data, spec)),
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ValidationSummary {
    instrument: &'static str,
    n_samples: usize,
    n_positive: usize,
    n_negative: usize,
    n_questions: usize,
    /// Samples per (age group, label) cell.
    cells: BTreeMap<String, usize>,
}

fn validate(a: &ValidateArgs, cfg: RunConfig) -> Result<()> {
    let mut run = RunDir::new(a.out.as_deref())?;
    let (data, spec) = load_data(&mut run, &a.data)?;
    let mut cells = BTreeMap::new();
    for s in &data.sheets {
        let group = if s.age_months < data::AGE_BOUNDARY_MONTHS { "young" } else { "old" };
        *cells.entry(format!("{group}/{}", s.label.as_str())).or_insert(0) += 1;
    }
    let summary = ValidationSummary {
        instrument: data.instrument.as_str(),
        n_samples: data.len(),
        n_positive: data.count(Label::Positive),
        n_negative: data.count(Label::Negative),
        n_questions: spec.len(),
        cells,
    };
    println!("{}", serde_json::to_string(&summary)?);
    run.write_json("validation.json", &summary)?;
    run.finish("validate", a, &cfg)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SelectionOutput {
    method: SelectMethod,
    selected: Vec<String>,
    questions: Vec<String>,
    report: Option<SelectionReport>,
}

fn select(a: &SelectArgs, mut cfg: RunConfig) -> Result<()> {
    let s = &mut cfg.select;
    set(&mut s.method, a.method);
    if a.mode.is_some() {
        s.mode = a.mode;
    }
    apply_forest(&mut s.forest, &a.forest);
    apply_selection(&mut s.selection, &a.selection);
    cfg.apply_seed();
    let s = &cfg.select;
    s.forest.validate()?;
    s.selection.validate()?;

    let mut run = RunDir::new(Some(&a.out))?;
    let (data, spec) = load_data(&mut run, &a.data)?;
    let spec = match s.mode {
        Some(mode) => spec.with_mode(mode)?,
        None => spec,
    };
    let mut m = encode(&data, &spec)?;
    balance_matrix(&mut m, &s.weight_boundaries)?;
    let k = s.selection.final_k.min(m.n_features());
    let (selected, report) = match s.method {
        SelectMethod::Naive => (naive_select(&m, k, &s.forest.with_seed(s.selection.seed))?, None),
        SelectMethod::Robust => {
            let sel = screener_core::selection::SelectionConfig {
                final_k: k,
                ..s.selection.clone()
            };
            let r = robust_select(&m, &sel, &s.forest)?;
            (r.selected.clone(), Some(r))
        }
    };
    let out = SelectionOutput {
        method: s.method,
        questions: m.backing_questions(&selected),
        selected,
        report,
    };
    run.write_json("selection.json", &out)?;
    run.finish("select", a, &cfg)
}

// ---------------------------------------------------------------------------

/// Out-of-fold scores of one silo, every bootstrap round.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SiloOof {
    pub silo: Silo,
    pub subject_ids: Vec<String>,
    pub labels: Vec<Label>,
    pub weights: Vec<f64>,
    pub rounds: Vec<Vec<f64>>,
}

impl SiloOof {
    /// Scores of all rounds stacked, each round carrying 1/R of the weight.
    fn pooled(&self) -> (Vec<f64>, Vec<Label>, Vec<f64>) {
        let r = self.rounds.len() as f64;
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        let mut weights = Vec::new();
        for round in &self.rounds {
            scores.extend_from_slice(round);
            labels.extend_from_slice(&self.labels);
            weights.extend(self.weights.iter().map(|w| w / r));
        }
        (scores, labels, weights)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OofFile {
    pub variant: Variant,
    pub silos: Vec<SiloOof>,
}

fn oof_of(result: &VariantResult) -> OofFile {
    OofFile {
        variant: result.variant,
        silos: result
            .runs
            .iter()
            .map(|r| SiloOof {
                silo: r.silo,
                subject_ids: r.subject_ids.clone(),
                labels: r.cv.labels.clone(),
                weights: r.cv.weights.clone(),
                rounds: r.cv.rounds.iter().map(|x| x.oof_scores.clone()).collect(),
            })
            .collect(),
    }
}

#[derive(Serialize)]
struct SiloMetrics<'a> {
    silo: Silo,
    n_samples: usize,
    cv_auc: &'a MetricSummary,
    cv_sensitivity: &'a MetricSummary,
    cv_specificity: &'a MetricSummary,
    failed_rounds: &'a [usize],
    selected_features: &'a [String],
    band: [f64; 2],
    calibration: &'a Option<BandCalibration>,
    selection: &'a Option<SelectionReport>,
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    variant: Variant,
    /// Per-round AUC over out-of-fold scores of all silos together.
    auc: &'a MetricSummary,
    silos: Vec<SiloMetrics<'a>>,
}

fn write_training(run: &mut RunDir, prefix: &str, result: &VariantResult) -> Result<()> {
    run.write_json(&format!("{prefix}bundle.json"), &result.bundle)?;
    run.write_json(&format!("{prefix}oof.json"), &oof_of(result))?;
    let metrics = TrainMetrics {
        variant: result.variant,
        auc: &result.auc,
        silos: result
            .bundle
            .artifacts
            .iter()
            .zip(&result.runs)
            .map(|(art, r)| SiloMetrics {
                silo: art.silo,
                n_samples: art.metadata.n_samples,
                cv_auc: &r.cv.auc,
                cv_sensitivity: &r.cv.sensitivity,
                cv_specificity: &r.cv.specificity,
                failed_rounds: &r.cv.failed_rounds,
                selected_features: &art.selected_features,
                band: [art.band.low, art.band.high],
                calibration: &art.metadata.calibration,
                selection: &r.selection,
            })
            .collect(),
    };
    run.write_json(&format!("{prefix}metrics.json"), &metrics)
}

fn apply_train(t: &mut TrainConfig, forest: &ForestArgs, selection: &SelectionArgs, cv: &CvArgs) {
    apply_forest(&mut t.forest, forest);
    apply_selection(&mut t.selection, selection);
    apply_cv(&mut t.cv, cv);
}

fn train(a: &TrainArgs, mut cfg: RunConfig) -> Result<()> {
    let t = &mut cfg.train;
    set(&mut t.variant, a.variant);
    apply_train(t, &a.forest, &a.selection, &a.cv);
    set(&mut t.inconclusive.max_inconclusive_rate, a.max_inconclusive_rate);
    set(&mut t.inconclusive.method, a.inconclusive_method);
    if a.target_sensitivity.is_some() {
        t.target_sensitivity = a.target_sensitivity;
    }
    cfg.apply_seed();

    let mut run = RunDir::new(Some(&a.out))?;
    let (data, spec) = load_data(&mut run, &a.data)?;
    let result = train_variant(&data, &spec, &cfg.train)?;
    write_training(&mut run, "", &result)?;
    run.finish("train", a, &cfg)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SiloCalibration {
    silo: Silo,
    calibration: BandCalibration,
}

fn calibrate(a: &CalibrateArgs, mut cfg: RunConfig) -> Result<()> {
    set(&mut cfg.calibrate.max_inconclusive_rate, a.max_inconclusive_rate);
    cfg.apply_seed();
    let cap = cfg.calibrate.max_inconclusive_rate;
    if !(0.0..1.0).contains(&cap) {
        return Err(Error::Parameter(format!("max_inconclusive_rate {cap} not in [0,1)")));
    }

    let mut run = RunDir::new(Some(&a.out))?;
    run.input(&a.bundle)?;
    run.input(&a.oof)?;
    let mut bundle = ScreenerBundle::load(&a.bundle)?;
    let oof: OofFile = serde_json::from_str(&std::fs::read_to_string(&a.oof)?)?;
    let mut report = Vec::new();
    for art in &mut bundle.artifacts {
        let silo = oof
            .silos
            .iter()
            .find(|s| s.silo == art.silo)
            .ok_or_else(|| Error::Contract(format!("no out-of-fold scores for the {} silo", art.silo.as_str())))?;
        let (scores, labels, weights) = silo.pooled();
        let c = calibrate_band(&scores, &labels, &weights, cap)?;
        art.band = c.band;
        art.meta = None;
        art.metadata.calibration = Some(c.clone());
        report.push(SiloCalibration {
            silo: art.silo,
            calibration: c,
        });
    }
    run.write_json("bundle.json", &bundle)?;
    run.write_json("calibration.json", &report)?;
    run.finish("calibrate", a, &cfg)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ScoredRow {
    subject_id: String,
    label: &'static str,
    weight: f64,
    score: f64,
    decision: Option<&'static str>,
}

#[derive(Serialize)]
struct BandSummary {
    inconclusive_rate: f64,
    /// Weighted accuracy over conclusive decisions.
    conclusive_accuracy: f64,
}

#[derive(Serialize)]
struct EvaluationReport {
    name: String,
    source: &'static str,
    n_samples: usize,
    weighting: &'static str,
    auc: f64,
    tuned: TunedThreshold,
    band: Option<BandSummary>,
}

fn evaluate(a: &EvaluateArgs, mut cfg: RunConfig) -> Result<()> {
    set(&mut cfg.evaluate.target_sensitivity, a.target_sensitivity);
    cfg.apply_seed();
    let target = cfg.evaluate.target_sensitivity;
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Parameter(format!("target sensitivity {target} not in (0,1]")));
    }
    let mut run = RunDir::new(Some(&a.out))?;

    let (rows, source, weighting, default_name) = if let Some(oof_path) = &a.oof {
        run.input(oof_path)?;
        let oof: OofFile = serde_json::from_str(&std::fs::read_to_string(oof_path)?)?;
        let mut rows = Vec::new();
        for silo in &oof.silos {
            let (scores, labels, weights) = silo.pooled();
            for (i, ((s, l), w)) in scores.iter().zip(&labels).zip(&weights).enumerate() {
                rows.push(ScoredRow {
                    subject_id: silo.subject_ids[i % silo.subject_ids.len()].clone(),
                    label: l.as_str(),
                    weight: *w,
                    score: *s,
                    decision: None,
                });
            }
        }
        (rows, "out_of_fold", "training", oof.variant.as_str().to_string())
    } else {
        let (Some(bundle_path), Some(data_path), Some(enc_path)) = (&a.bundle, &a.data, &a.encoding) else {
            return Err(Error::Parameter("evaluate needs --oof, or --bundle with --data and --encoding".into()));
        };
        run.input(bundle_path)?;
        let bundle = ScreenerBundle::load(bundle_path)?;
        let (data, _) = load_data(
            &mut run,
            &DataArgs {
                data: data_path.clone(),
                encoding: enc_path.clone(),
                instrument: a.instrument,
            },
        )?;
        let (weights, weighting) = match balance_weights(&data, &cfg.evaluate.weight_boundaries) {
            Ok(scheme) => (scheme.weights, "balanced"),
            Err(Error::Weighting(cell)) => {
                log::warn!("empty weighting cell {cell}; evaluating with unit weights");
                (vec![1.0; data.len()], "unit")
            }
            Err(e) => return Err(e),
        };
        let mut rows = Vec::with_capacity(data.len());
        for (sheet, w) in data.sheets.iter().zip(weights) {
            let record = bundle.screen(&Responses {
                answers: sheet.answers.clone(),
                age_months: sheet.age_months,
                gender: sheet.gender,
            })?;
            rows.push(ScoredRow {
                subject_id: sheet.subject_id.clone(),
                label: sheet.label.as_str(),
                weight: w,
                score: record.score,
                decision: Some(record.decision.as_str()),
            });
        }
        (rows, "holdout", weighting, bundle.variant.as_str().to_string())
    };

    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let labels: Vec<Label> = rows.iter().map(|r| r.label.parse()).collect::<Result<_>>()?;
    let weights: Vec<f64> = rows.iter().map(|r| r.weight).collect();
    let curve = roc(&scores, &labels, &weights)?;
    let tuned = tune_threshold(&curve, target)?;

    let band = rows.iter().all(|r| r.decision.is_some()).then(|| {
        let (mut inc, mut right, mut total) = (0.0, 0.0, 0.0);
        for (r, l) in rows.iter().zip(&labels) {
            total += r.weight;
            match r.decision {
                Some("inconclusive") => inc += r.weight,
                Some(d) if (d == Decision::Positive.as_str()) == l.is_positive() => right += r.weight,
                _ => {}
            }
        }
        BandSummary {
            inconclusive_rate: inc / total,
            conclusive_accuracy: if total > inc { right / (total - inc) } else { 0.0 },
        }
    });

    let name = a.name.clone().unwrap_or(default_name);
    let report = EvaluationReport {
        name: name.clone(),
        source,
        n_samples: rows.len(),
        weighting,
        auc: curve.auc,
        tuned,
        band,
    };

    run.write_with("scores.csv", |buf| {
        let mut w = csv_writer(buf);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })?;
    run.write_with("roc.csv", |buf| curve.write_csv_to(buf))?;
    run.write_with("table.csv", |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["screener", "n", "auc", "target_sensitivity", "threshold", "sensitivity", "specificity"])?;
        w.write_record([
            name,
            rows.len().to_string(),
            format!("{:.4}", curve.auc),
            format!("{:.2}", tuned.target_sensitivity),
            tuned.threshold.to_string(),
            format!("{:.4}", tuned.sensitivity),
            format!("{:.4}", tuned.specificity),
        ])?;
        w.flush()?;
        Ok(())
    })?;
    run.write_json("metrics.json", &report)?;
    run.finish("evaluate", a, &cfg)
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::Writer::from_writer(buf)
}

// ---------------------------------------------------------------------------

fn progressive(a: &ProgressiveArgs, mut cfg: RunConfig) -> Result<()> {
    let p = &mut cfg.progressive;
    set(&mut p.fractions, a.fractions.clone());
    set(&mut p.variant, a.variant);
    set(&mut p.k, a.k);
    apply_forest(&mut p.forest, &a.forest);
    apply_cv(&mut p.cv, &a.cv);
    cfg.apply_seed();
    let p = &cfg.progressive;
    p.forest.validate()?;
    if p.k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }

    let mut run = RunDir::new(Some(&a.out))?;
    let (data, spec) = load_data(&mut run, &a.data)?;
    let spec = variant_spec(&spec, p.variant, data.instrument)?;
    let mut m = encode(&data, &spec)?;
    balance_matrix(&mut m, &p.weight_boundaries)?;
    let trainer = SelectingForest {
        forest: p.forest.clone(),
        k: p.k,
    };
    let curve: ProgressiveCurve = progressive_sampling(&m, &p.fractions, &p.cv, &trainer)?;
    run.write_json("curve.json", &curve)?;
    run.write_with("curve.csv", |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["fraction", "auc", "ci_low", "ci_high"])?;
        for pt in &curve.points {
            w.write_record([
                pt.fraction.to_string(),
                pt.auc.to_string(),
                pt.ci_low.to_string(),
                pt.ci_high.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    run.finish("progressive", a, &cfg)
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct RequestEntry {
    #[serde(default)]
    subject_id: Option<String>,
    #[serde(flatten)]
    request: ScreeningRequest,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RequestFile {
    Many(Vec<RequestEntry>),
    One(Box<RequestEntry>),
}

#[derive(Serialize)]
struct ScreenedEntry {
    subject_id: Option<String>,
    #[serde(flatten)]
    record: DecisionRecord,
}

/// CSV responses: `age_months`, optional `subject_id`, `gender` and
/// `verbal`, questionnaire answers in `q_<id>` and video answers in `v_<id>`
/// columns. Empty cells are unanswered.
fn read_request_csv(path: &Path) -> Result<Vec<RequestEntry>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let age_col = col("age_months").ok_or_else(|| Error::Schema("missing required column `age_months`".into()))?;
    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let bad = |what: &str, raw: &str| Error::Schema(format!("row {}: unparsable {what} `{raw}`", row + 1));
        let get = |i: Option<usize>| i.and_then(|i| record.get(i)).filter(|s| !s.is_empty());
        let raw_age = record.get(age_col).unwrap_or("");
        let age_months = raw_age.parse::<u8>().map_err(|_| bad("age_months", raw_age))?;
        let gender = match get(col("gender")) {
            Some(g) => g.parse()?,
            None => data::Gender::Unknown,
        };
        let verbal = match get(col("verbal")) {
            Some(v) => Some(v.parse::<bool>().map_err(|_| bad("verbal", v))?),
            None => None,
        };
        let mut questionnaire = BTreeMap::new();
        let mut video = BTreeMap::new();
        for (i, h) in headers.iter().enumerate() {
            let Some(raw) = get(Some(i)) else { continue };
            let target = if let Some(id) = h.strip_prefix("q_") {
                Some((&mut questionnaire, id))
            } else {
                h.strip_prefix("v_").map(|id| (&mut video, id))
            };
            if let Some((map, id)) = target {
                map.insert(id.to_string(), raw.parse::<u8>().map_err(|_| bad(h, raw))?);
            }
        }
        out.push(RequestEntry {
            subject_id: get(col("subject_id")).map(str::to_string),
            request: ScreeningRequest {
                age_months,
                gender,
                questionnaire,
                video: (!video.is_empty()).then_some(video),
                verbal,
            },
        });
    }
    Ok(out)
}

fn screen_cmd(a: &ScreenArgs, cfg: RunConfig) -> Result<()> {
    let mut run = RunDir::new(a.out.as_deref())?;
    run.input(&a.responses)?;
    let is_csv = a.responses.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let (entries, single) = if is_csv {
        (read_request_csv(&a.responses)?, false)
    } else {
        match serde_json::from_str(&std::fs::read_to_string(&a.responses)?)? {
            RequestFile::Many(v) => (v, false),
            RequestFile::One(e) => (vec![*e], true),
        }
    };

    let screen_one: Box<dyn Fn(&ScreeningRequest) -> Result<DecisionRecord>> = match (&a.bundle, &a.combined) {
        (Some(path), _) => {
            run.input(path)?;
            let bundle = ScreenerBundle::load(path)?;
            Box::new(move |req| {
                let mut record = bundle.screen(&Responses {
                    answers: req.questionnaire.clone(),
                    age_months: req.age_months,
                    gender: req.gender,
                })?;
                if req.video.is_some() {
                    record
                        .warnings
                        .push("video answers ignored: the bundle has no video screener".into());
                }
                Ok(record)
            })
        }
        (None, Some(path)) => {
            run.input(path)?;
            let combined = CombinedScreener::load(path)?;
            Box::new(move |req| screen(req, &combined))
        }
        (None, None) => return Err(Error::Parameter("screen needs --bundle or --combined".into())),
    };

    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let record = screen_one(&e.request)?;
        out.push(ScreenedEntry {
            subject_id: e.subject_id,
            record,
        });
    }
    let text = if single {
        serde_json::to_string_pretty(&out[0])?
    } else {
        serde_json::to_string_pretty(&out)?
    };
    println!("{text}");
    if single {
        run.write_json("decisions.json", &out[0])?;
    } else {
        run.write_json("decisions.json", &out)?;
    }
    run.finish("screen", a, &cfg)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FusionReport<'a> {
    silo: Silo,
    module: Instrument,
    metrics: &'a FusionMetrics,
}

fn combine(a: &CombineArgs, mut cfg: RunConfig) -> Result<()> {
    if a.video_data.len() != a.video_encoding.len() {
        return Err(Error::Parameter("each --video-data needs one --video-encoding".into()));
    }
    if !a.video_instrument.is_empty() && a.video_instrument.len() != a.video_data.len() {
        return Err(Error::Parameter("give --video-instrument once per --video-data or not at all".into()));
    }
    set(&mut cfg.train.variant, a.variant);
    apply_train(&mut cfg.train, &a.forest, &a.selection, &a.cv);
    apply_forest(&mut cfg.video_train.forest, &a.forest);
    apply_cv(&mut cfg.video_train.cv, &a.cv);
    set(&mut cfg.video_train.selection.n_bootstrap, a.selection.n_bootstrap);
    apply_cv(&mut cfg.fusion.cv, &a.cv);
    set(&mut cfg.fusion.max_inconclusive_rate, a.max_inconclusive_rate);
    cfg.apply_seed();

    let mut run = RunDir::new(Some(&a.out))?;
    let (q_data, q_spec) = load_data(&mut run, &a.data)?;
    let questionnaire = train_variant(&q_data, &q_spec, &cfg.train)?;
    write_training(&mut run, "questionnaire_", &questionnaire)?;

    let mut videos = Vec::new();
    for (k, (data_path, enc_path)) in a.video_data.iter().zip(&a.video_encoding).enumerate() {
        let instrument = a.video_instrument.get(k).copied().unwrap_or(Instrument::AdosModule1Like);
        let (v_data, v_spec) = load_data(
            &mut run,
            &DataArgs {
                data: data_path.clone(),
                encoding: enc_path.clone(),
                instrument,
            },
        )?;
        let v = train_variant(&v_data, &v_spec, &cfg.video_train)?;
        write_training(&mut run, &format!("video_{}_", instrument.as_str()), &v)?;
        videos.push(v);
    }
    let combined = train_combined(&questionnaire, &videos, &cfg.fusion)?;
    let report: Vec<FusionReport> = combined
        .silos
        .iter()
        .flat_map(|s| {
            s.routes.iter().map(move |r| FusionReport {
                silo: s.silo,
                module: r.module,
                metrics: &r.metrics,
            })
        })
        .collect();
    run.write_json("combined.json", &combined)?;
    run.write_json("fusion.json", &report)?;
    run.finish("combine", a, &cfg)
}
