use std::path::Path;

use serde::{Deserialize, Serialize};

use super::band::{BandCalibration, Decision, DecisionBand};
use super::inject::FeatureInjection;
use super::meta::MetaStages;
use super::{Silo, SiloConfig, Variant};
use crate::data::Instrument;
use crate::encoding::{encode_for_screening, EncodingSpec, Responses};
use crate::evaluation::{CVConfig, MetricSummary};
use crate::learners::{ForestModel, ForestParams};
use crate::selection::SelectionConfig;
use crate::{Error, Result};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub n_samples: usize,
    pub forest: ForestParams,
    pub selection: Option<SelectionConfig>,
    pub cv: CVConfig,
    pub cv_auc: MetricSummary,
    pub cv_sensitivity: MetricSummary,
    pub cv_specificity: MetricSummary,
    pub calibration: Option<BandCalibration>,
    pub injection: Option<Vec<FeatureInjection>>,
    pub notes: Vec<String>,
}

/// Deployable screener for one silo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenerArtifact {
    pub format_version: u32,
    pub silo: Silo,
    pub instrument: Instrument,
    pub variant: Variant,
    /// Encoder for exactly the questions the model reads.
    pub encoding: EncodingSpec,
    pub selected_features: Vec<String>,
    pub questions: Vec<String>,
    /// Questions the aggregate columns run over; empty without aggregates.
    pub aggregate_questions: Vec<String>,
    pub model: ForestModel,
    pub band: DecisionBand,
    /// Gate and decider when inconclusives come from a misclassification model.
    pub meta: Option<MetaStages>,
    pub metadata: TrainingMetadata,
}

impl ScreenerArtifact {
    pub fn score(&self, responses: &Responses) -> Result<f64> {
        let row = encode_for_screening(responses, self)?;
        self.model.predict_score(&row)
    }

    /// Raw model score and this screener's own decision.
    pub fn assess(&self, responses: &Responses) -> Result<(f64, Decision)> {
        let row = encode_for_screening(responses, self)?;
        let score = self.model.predict_score(&row)?;
        let decision = match &self.meta {
            Some(stages) => stages.decide(&row)?.1,
            None => self.band.decide(score),
        };
        Ok((score, decision))
    }
}

/// Output of one subject's screening.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub decision: Decision,
    /// Fused score, or the questionnaire score when fusion was not possible.
    pub score: f64,
    pub questionnaire_score: f64,
    pub video_score: Option<f64>,
    pub fused_score: Option<f64>,
    pub silo: Silo,
    pub video_module: Option<Instrument>,
    /// Decided by the questionnaire alone because no video answers came in.
    pub questionnaire_only: bool,
    pub warnings: Vec<String>,
    pub artifact_version: u32,
}

/// The artifacts produced by one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenerBundle {
    pub format_version: u32,
    pub instrument: Instrument,
    pub variant: Variant,
    pub silo_config: SiloConfig,
    pub artifacts: Vec<ScreenerArtifact>,
}

impl ScreenerBundle {
    pub fn new(instrument: Instrument, variant: Variant, silo_config: SiloConfig, artifacts: Vec<ScreenerArtifact>) -> Self {
        ScreenerBundle {
            format_version: ARTIFACT_FORMAT_VERSION,
            instrument,
            variant,
            silo_config,
            artifacts,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bundle: ScreenerBundle = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        bundle.check()?;
        Ok(bundle)
    }

    pub fn check(&self) -> Result<()> {
        if self.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(Error::Contract(format!(
                "unsupported artifact format version {}",
                self.format_version
            )));
        }
        if self.artifacts.is_empty() {
            return Err(Error::Contract("bundle has no artifacts".into()));
        }
        for a in &self.artifacts {
            a.model.check()?;
        }
        Ok(())
    }

    /// Artifact serving `age_months`, with a routing warning if any.
    pub fn artifact_for(&self, age_months: u8) -> Result<(&ScreenerArtifact, Option<String>)> {
        let (silo, warning) = self.silo_config.route(age_months);
        let found = self
            .artifacts
            .iter()
            .find(|a| a.silo == Silo::All)
            .or_else(|| self.artifacts.iter().find(|a| a.silo == silo))
            .ok_or_else(|| Error::Contract(format!("no artifact for the {} silo", silo.as_str())))?;
        Ok((found, warning))
    }

    pub fn screen(&self, responses: &Responses) -> Result<DecisionRecord> {
        let (artifact, warning) = self.artifact_for(responses.age_months)?;
        let (score, decision) = artifact.assess(responses)?;
        Ok(DecisionRecord {
            decision,
            score,
            questionnaire_score: score,
            video_score: None,
            fused_score: None,
            silo: artifact.silo,
            video_module: None,
            questionnaire_only: true,
            warnings: warning.into_iter().collect(),
            artifact_version: self.format_version,
        })
    }
}
