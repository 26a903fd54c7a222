use std::path::Path;

use serde::{Deserialize, Serialize};

use screener_core::data::{Instrument, SyntheticSpec};
use screener_core::encoding::EncodingMode;
use screener_core::evaluation::CVConfig;
use screener_core::learners::ForestParams;
use screener_core::pipeline::{FusionConfig, TrainConfig, Variant};
use screener_core::rng::derive_seed;
use screener_core::selection::{SelectionConfig, DEFAULT_FRACTIONS};
use screener_core::{Error, Result};

/// Everything a run reads besides its input files. Loaded from the optional
/// `--config` file, then overridden by command-line flags.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Replaces every seed below when set.
    pub seed: Option<u64>,
    pub generate: GenerateConfig,
    pub select: SelectConfig,
    pub train: TrainConfig,
    /// Training of video screeners inside `combine`.
    pub video_train: TrainConfig,
    pub fusion: FusionConfig,
    pub calibrate: CalibrateConfig,
    pub evaluate: EvaluateConfig,
    pub progressive: ProgressiveConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            generate: GenerateConfig::default(),
            select: SelectConfig::default(),
            train: TrainConfig::default(),
            video_train: TrainConfig {
                variant: Variant::Siloed,
                selection: SelectionConfig::video(),
                ..TrainConfig::default()
            },
            fusion: FusionConfig::default(),
            calibrate: CalibrateConfig::default(),
            evaluate: EvaluateConfig::default(),
            progressive: ProgressiveConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub questionnaire: SyntheticSpec,
    /// Companion video score sheets for the same subjects.
    pub video: Option<SyntheticSpec>,
    /// Share of subjects written to a separate holdout file.
    pub holdout_fraction: Option<f64>,
}

pub fn default_video_spec() -> SyntheticSpec {
    SyntheticSpec {
        instrument: Instrument::AdosModule1Like,
        n_questions: 29,
        n_informative: 8,
        seed: 1,
        ..SyntheticSpec::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SelectMethod {
    Naive,
    Robust,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub method: SelectMethod,
    /// Encoding to select over; the spec's own modes when unset.
    pub mode: Option<EncodingMode>,
    pub forest: ForestParams,
    pub selection: SelectionConfig,
    pub weight_boundaries: Vec<u8>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            method: SelectMethod::Robust,
            mode: None,
            forest: ForestParams::default(),
            selection: SelectionConfig::default(),
            weight_boundaries: vec![screener_core::data::AGE_BOUNDARY_MONTHS],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub max_inconclusive_rate: f64,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig { max_inconclusive_rate: 0.25 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub target_sensitivity: f64,
    /// Age boundaries for balancing the evaluated samples; unit weights if a
    /// cell is empty.
    pub weight_boundaries: Vec<u8>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            target_sensitivity: 0.8,
            weight_boundaries: vec![screener_core::data::AGE_BOUNDARY_MONTHS],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProgressiveConfig {
    pub fractions: Vec<f64>,
    /// Only the encoding of the variant is used.
    pub variant: Variant,
    pub forest: ForestParams,
    /// Features kept by the in-fold selection.
    pub k: usize,
    pub cv: CVConfig,
    pub weight_boundaries: Vec<u8>,
}

impl Default for ProgressiveConfig {
    fn default() -> Self {
        ProgressiveConfig {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            variant: Variant::Severity,
            forest: ForestParams::default(),
            k: 20,
            cv: CVConfig::default(),
            weight_boundaries: vec![screener_core::data::AGE_BOUNDARY_MONTHS],
        }
    }
}

fn reseed_train(t: &mut TrainConfig, seed: u64) {
    t.forest.seed = seed;
    t.selection.seed = seed;
    t.cv.seed = seed;
    if let Some(inj) = &mut t.injection {
        inj.seed = seed;
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Pushes the global seed into every component; the video generator
    /// gets a derived one so its signal stays independent.
    pub fn apply_seed(&mut self) {
        let Some(seed) = self.seed else { return };
        self.generate.questionnaire.seed = seed;
        if let Some(v) = &mut self.generate.video {
            v.seed = derive_seed(seed, 1);
        }
        self.select.forest.seed = seed;
        self.select.selection.seed = seed;
        reseed_train(&mut self.train, seed);
        reseed_train(&mut self.video_train, seed);
        self.fusion.cv.seed = seed;
        self.progressive.forest.seed = seed;
        self.progressive.cv.seed = seed;
    }
}

pub fn check_fraction(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} {v} not in (0,1)")))
    }
}
