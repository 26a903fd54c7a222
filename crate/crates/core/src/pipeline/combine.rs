//! Logistic fusion of questionnaire and video screener scores, per silo.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::artifact::{DecisionRecord, ScreenerArtifact, ARTIFACT_FORMAT_VERSION};
use super::band::{calibrate_band, BandCalibration, Decision, DecisionBand};
use super::{Silo, SiloConfig, SiloRun, VariantResult};
use crate::data::{Gender, Instrument, Label};
use crate::encoding::Responses;
use crate::evaluation::{roc, stratified_folds, CVConfig, MetricSummary};
use crate::learners::{train_logistic, LogisticModel, LogisticParams};
use crate::rng::derive_seed;
use crate::{Error, Result};

pub const FUSION_INPUTS: [&str; 2] = ["questionnaire_score", "video_score"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub cv: CVConfig,
    pub logistic: LogisticParams,
    /// Cap for the combined band; 0 gives a plain threshold.
    pub max_inconclusive_rate: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            cv: CVConfig::default(),
            logistic: LogisticParams::default(),
            max_inconclusive_rate: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionMetrics {
    pub n_paired: usize,
    /// AUCs of the out-of-fold input scores over the paired subjects.
    pub questionnaire_auc: f64,
    pub video_auc: f64,
    pub fused_auc: MetricSummary,
    pub calibration: BandCalibration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRoute {
    pub module: Instrument,
    pub video: ScreenerArtifact,
    pub fusion: LogisticModel,
    pub band: DecisionBand,
    pub metrics: FusionMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedSilo {
    pub silo: Silo,
    pub questionnaire: ScreenerArtifact,
    pub routes: Vec<VideoRoute>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedScreener {
    pub format_version: u32,
    pub silo_config: SiloConfig,
    pub silos: Vec<CombinedSilo>,
}

/// Out-of-fold fused scores: per round, k-fold logistic fits over the paired
/// input scores.
pub struct FusionCv {
    pub auc: MetricSummary,
    pub rounds: Vec<Vec<f64>>,
}

pub fn fusion_cv(
    inputs: &[Vec<f64>],
    labels: &[Label],
    weights: &[f64],
    cfg: &FusionConfig,
) -> Result<FusionCv> {
    cfg.cv.validate()?;
    let names: Vec<String> = FUSION_INPUTS.iter().map(|s| s.to_string()).collect();
    let positive: Vec<bool> = labels.iter().map(|l| l.is_positive()).collect();
    let mut aucs = Vec::new();
    let mut rounds = Vec::new();
    for r in 0..cfg.cv.n_bootstrap_rounds {
        let folds = stratified_folds(labels, cfg.cv.n_folds, derive_seed(cfg.cv.seed, r as u64))?;
        let mut oof = vec![0.0; inputs.len()];
        for k in 0..cfg.cv.n_folds {
            let train: Vec<usize> = (0..inputs.len()).filter(|&i| folds[i] != k).collect();
            let pick = |v: &dyn Fn(usize) -> f64| train.iter().map(|&i| v(i)).collect::<Vec<f64>>();
            let model = train_logistic(
                &names,
                &train.iter().map(|&i| inputs[i].clone()).collect::<Vec<_>>(),
                &train.iter().map(|&i| positive[i]).collect::<Vec<_>>(),
                &pick(&|i| weights[i]),
                &cfg.logistic,
            )?;
            for i in (0..inputs.len()).filter(|&i| folds[i] == k) {
                oof[i] = model.predict(&inputs[i])?;
            }
        }
        aucs.push(roc(&oof, labels, weights)?.auc);
        rounds.push(oof);
    }
    Ok(FusionCv {
        auc: MetricSummary::from_values(&aucs),
        rounds,
    })
}

fn find_run(result: &VariantResult, silo: Silo) -> Option<(&ScreenerArtifact, &SiloRun)> {
    let pick = |s: Silo| {
        result
            .bundle
            .artifacts
            .iter()
            .zip(&result.runs)
            .find(|(a, _)| a.silo == s)
    };
    pick(silo).or_else(|| pick(Silo::All))
}

/// Fits a fusion model and combined band per silo and video module, on the
/// screeners' out-of-fold scores for subjects present in both datasets.
pub fn train_combined(
    questionnaire: &VariantResult,
    videos: &[VariantResult],
    cfg: &FusionConfig,
) -> Result<CombinedScreener> {
    if videos.is_empty() {
        return Err(Error::Parameter("no video screener to combine".into()));
    }
    let names: Vec<String> = FUSION_INPUTS.iter().map(|s| s.to_string()).collect();
    let mut silos = Vec::new();
    for (q_art, q_run) in questionnaire.bundle.artifacts.iter().zip(&questionnaire.runs) {
        let q_oof = q_run.cv.mean_oof();
        let mut routes = Vec::new();
        for video in videos {
            let (v_art, v_run) = find_run(video, q_art.silo).ok_or_else(|| {
                Error::Contract(format!("video screener has no {} silo", q_art.silo.as_str()))
            })?;
            let v_oof = v_run.cv.mean_oof();
            let v_index: HashMap<&str, usize> =
                v_run.subject_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
            let mut inputs = Vec::new();
            let mut labels = Vec::new();
            let mut weights = Vec::new();
            for (i, id) in q_run.subject_ids.iter().enumerate() {
                if let Some(&j) = v_index.get(id.as_str()) {
                    inputs.push(vec![q_oof[i], v_oof[j]]);
                    labels.push(q_run.cv.labels[i]);
                    weights.push(q_run.cv.weights[i]);
                }
            }
            let fcv = fusion_cv(&inputs, &labels, &weights, cfg).map_err(|e| match e {
                Error::Fold(m) => Error::Training(format!(
                    "{} silo: too few paired subjects to fuse ({m})",
                    q_art.silo.as_str()
                )),
                other => other,
            })?;
            let r = fcv.rounds.len() as f64;
            let pooled_scores: Vec<f64> = fcv.rounds.concat();
            let pooled_labels: Vec<Label> = fcv.rounds.iter().flat_map(|_| labels.iter().copied()).collect();
            let pooled_weights: Vec<f64> = fcv.rounds.iter().flat_map(|_| weights.iter().map(|w| w / r)).collect();
            let calibration = calibrate_band(&pooled_scores, &pooled_labels, &pooled_weights, cfg.max_inconclusive_rate)?;
            let positive: Vec<bool> = labels.iter().map(|l| l.is_positive()).collect();
            let fusion = train_logistic(&names, &inputs, &positive, &weights, &cfg.logistic)?;
            let column = |c: usize| inputs.iter().map(|x| x[c]).collect::<Vec<f64>>();
            let metrics = FusionMetrics {
                n_paired: inputs.len(),
                questionnaire_auc: roc(&column(0), &labels, &weights)?.auc,
                video_auc: roc(&column(1), &labels, &weights)?.auc,
                fused_auc: fcv.auc,
                calibration: calibration.clone(),
            };
            log::info!(
                "{} silo fusion: questionnaire {:.4}, video {:.4}, fused {:.4}",
                q_art.silo.as_str(),
                metrics.questionnaire_auc,
                metrics.video_auc,
                metrics.fused_auc.mean
            );
            let mut video_artifact = v_art.clone();
            video_artifact.silo = q_art.silo;
            routes.push(VideoRoute {
                module: v_art.instrument,
                video: video_artifact,
                fusion,
                band: calibration.band,
                metrics,
            });
        }
        silos.push(CombinedSilo {
            silo: q_art.silo,
            questionnaire: q_art.clone(),
            routes,
        });
    }
    Ok(CombinedScreener {
        format_version: ARTIFACT_FORMAT_VERSION,
        silo_config: questionnaire.bundle.silo_config.clone(),
        silos,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombineOutcome {
    pub decision: Decision,
    pub fused_score: Option<f64>,
    pub questionnaire_only: bool,
}

/// Fuses two screener scores and applies the combined band. Without a video
/// score the questionnaire's own band decides and the outcome is flagged.
pub fn combine(
    questionnaire_score: f64,
    video_score: Option<f64>,
    fusion: &LogisticModel,
    band: &DecisionBand,
    questionnaire_band: &DecisionBand,
) -> Result<CombineOutcome> {
    Ok(match video_score {
        Some(v) => {
            let fused = fusion.predict(&[questionnaire_score, v])?;
            CombineOutcome {
                decision: band.decide(fused),
                fused_score: Some(fused),
                questionnaire_only: false,
            }
        }
        None => CombineOutcome {
            decision: questionnaire_band.decide(questionnaire_score),
            fused_score: None,
            questionnaire_only: true,
        },
    })
}

/// A screening request: questionnaire answers plus optional analyst answers
/// from the video review.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningRequest {
    pub age_months: u8,
    #[serde(default = "unknown_gender")]
    pub gender: Gender,
    pub questionnaire: BTreeMap<String, u8>,
    #[serde(default)]
    pub video: Option<BTreeMap<String, u8>>,
    /// Selects the video module: phrased speech (true) or pre-verbal (false).
    #[serde(default)]
    pub verbal: Option<bool>,
}

fn unknown_gender() -> Gender {
    Gender::Unknown
}

impl CombinedScreener {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c: CombinedScreener = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if c.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(Error::Contract(format!(
                "unsupported artifact format version {}",
                c.format_version
            )));
        }
        Ok(c)
    }
}

fn pick_route<'a>(silo: &'a CombinedSilo, verbal: Option<bool>, warnings: &mut Vec<String>) -> Result<&'a VideoRoute> {
    let first = silo
        .routes
        .first()
        .ok_or_else(|| Error::Contract(format!("{} silo has no video screener", silo.silo.as_str())))?;
    let Some(verbal) = verbal else { return Ok(first) };
    let wanted = if verbal {
        Instrument::AdosModule2Like
    } else {
        Instrument::AdosModule1Like
    };
    Ok(silo.routes.iter().find(|r| r.module == wanted).unwrap_or_else(|| {
        warnings.push(format!(
            "no {} video screener; using {}",
            wanted.as_str(),
            first.module.as_str()
        ));
        first
    }))
}

pub fn screen(request: &ScreeningRequest, combined: &CombinedScreener) -> Result<DecisionRecord> {
    let (silo_id, warning) = combined.silo_config.route(request.age_months);
    let mut warnings: Vec<String> = warning.into_iter().collect();
    let silo = combined
        .silos
        .iter()
        .find(|s| s.silo == Silo::All)
        .or_else(|| combined.silos.iter().find(|s| s.silo == silo_id))
        .ok_or_else(|| Error::Contract(format!("no {} silo in the screener", silo_id.as_str())))?;
    let responses = |answers: &BTreeMap<String, u8>| Responses {
        answers: answers.clone(),
        age_months: request.age_months,
        gender: request.gender,
    };
    let (q_score, q_decision) = silo.questionnaire.assess(&responses(&request.questionnaire))?;
    let route = pick_route(silo, request.verbal, &mut warnings)?;

    let record = |decision, score, video_score, fused_score, video_module, questionnaire_only, warnings| DecisionRecord {
        decision,
        score,
        questionnaire_score: q_score,
        video_score,
        fused_score,
        silo: silo.silo,
        video_module,
        questionnaire_only,
        warnings,
        artifact_version: combined.format_version,
    };
    match &request.video {
        Some(answers) => {
            let v_score = route.video.score(&responses(answers))?;
            let out = combine(q_score, Some(v_score), &route.fusion, &route.band, &silo.questionnaire.band)?;
            let fused = out.fused_score.unwrap_or(q_score);
            Ok(record(out.decision, fused, Some(v_score), out.fused_score, Some(route.module), false, warnings))
        }
        None => {
            warnings.push("no video answers; questionnaire-only decision".into());
            Ok(record(q_decision, q_score, None, None, None, true, warnings))
        }
    }
}
