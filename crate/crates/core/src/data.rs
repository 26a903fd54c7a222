//! Score sheets, datasets, CSV ingestion and the synthetic score-sheet
//! generator.
//!
//! Missing answers are never absent map keys: every question carries an
//! explicit code, with "no answer" declared per question as a null code in
//! the [`EncodingSpec`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::encoding::EncodingSpec;
use crate::rng::{derive_seed, rng_from, Rng};
use crate::{Error, Result};

pub const MIN_AGE_MONTHS: u8 = 18;
pub const MAX_AGE_MONTHS: u8 = 84;
/// Boundary between the pre-phrasal and phrasal age groups.
pub const AGE_BOUNDARY_MONTHS: u8 = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        }
    }
}

impl std::str::FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Gender::Male),
            "female" | "f" => Ok(Gender::Female),
            "unknown" | "" => Ok(Gender::Unknown),
            other => Err(Error::Parameter(format!("unknown gender `{other}`"))),
        }
    }
}

/// Clinical diagnosis. `Negative` covers neurotypical children and children
/// with non-autism delays alike.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            other => Err(Error::Parameter(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instrument {
    AdirLike,
    AdosModule1Like,
    AdosModule2Like,
}

impl Instrument {
    pub fn as_str(self) -> &'static str {
        match self {
            Instrument::AdirLike => "adir_like",
            Instrument::AdosModule1Like => "ados_module1_like",
            Instrument::AdosModule2Like => "ados_module2_like",
        }
    }

    pub fn is_video(self) -> bool {
        !matches!(self, Instrument::AdirLike)
    }
}

impl std::str::FromStr for Instrument {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adir_like" => Ok(Instrument::AdirLike),
            "ados_module1_like" => Ok(Instrument::AdosModule1Like),
            "ados_module2_like" => Ok(Instrument::AdosModule2Like),
            other => Err(Error::Parameter(format!("unknown instrument `{other}`"))),
        }
    }
}

/// One subject's instrument record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSheet {
    pub subject_id: String,
    pub age_months: u8,
    pub gender: Gender,
    pub answers: BTreeMap<String, u8>,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub sheets: Vec<ScoreSheet>,
    pub instrument: Instrument,
    pub provenance: String,
}

impl Dataset {
    pub fn new(sheets: Vec<ScoreSheet>, instrument: Instrument, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &sheets {
            if !seen.insert(s.subject_id.as_str()) {
                return Err(Error::Schema(format!("duplicate subject_id `{}`", s.subject_id)));
            }
        }
        Ok(Dataset {
            sheets,
            instrument,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.sheets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sheets.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.sheets.iter().map(|s| s.label).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.sheets.iter().filter(|s| s.label == label).count()
    }

    /// Sheets at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            sheets: indices.iter().map(|&i| self.sheets[i].clone()).collect(),
            instrument: self.instrument,
            provenance: self.provenance.clone(),
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(&ScoreSheet) -> bool) -> Dataset {
        Dataset {
            sheets: self.sheets.iter().filter(|s| keep(s)).cloned().collect(),
            instrument: self.instrument,
            provenance: self.provenance.clone(),
        }
    }

    /// Checks every sheet against `spec` and the age bounds.
    pub fn validate(&self, spec: &EncodingSpec) -> Result<()> {
        let mut report = ValidationReport::default();
        for (row, sheet) in self.sheets.iter().enumerate() {
            check_sheet(row + 1, sheet, spec, &mut report);
        }
        report.into_result()
    }
}

fn check_sheet(row: usize, sheet: &ScoreSheet, spec: &EncodingSpec, report: &mut ValidationReport) {
    if !(MIN_AGE_MONTHS..=MAX_AGE_MONTHS).contains(&sheet.age_months) {
        report.push(RowIssue {
            row,
            subject_id: sheet.subject_id.clone(),
            question: None,
            code: None,
            message: format!(
                "age_months {} outside {MIN_AGE_MONTHS}..={MAX_AGE_MONTHS}",
                sheet.age_months
            ),
        });
    }
    for (id, q) in &spec.questions {
        match sheet.answers.get(id) {
            None => report.push(RowIssue {
                row,
                subject_id: sheet.subject_id.clone(),
                question: Some(id.clone()),
                code: None,
                message: "missing answer (declare an explicit no-answer code)".into(),
            }),
            Some(&code) if !q.is_declared(code) => report.push(RowIssue {
                row,
                subject_id: sheet.subject_id.clone(),
                question: Some(id.clone()),
                code: Some(code),
                message: format!("undeclared answer code {code}"),
            }),
            Some(_) => {}
        }
    }
    for id in sheet.answers.keys() {
        if spec.get(id).is_none() {
            report.push(RowIssue {
                row,
                subject_id: sheet.subject_id.clone(),
                question: Some(id.clone()),
                code: None,
                message: "question not in encoding spec".into(),
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub subject_id: String,
    pub question: Option<String>,
    pub code: Option<u8>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<RowIssue>,
}

impl ValidationReport {
    fn push(&mut self, issue: RowIssue) {
        self.issues.push(issue);
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} issue(s)", self.issues.len())?;
        for issue in self.issues.iter().take(10) {
            write!(f, "; row {} ({})", issue.row, issue.subject_id)?;
            if let Some(q) = &issue.question {
                write!(f, " question {q}")?;
            }
            if let Some(c) = issue.code {
                write!(f, " code {c}")?;
            }
            write!(f, ": {}", issue.message)?;
        }
        if self.issues.len() > 10 {
            write!(f, "; ...")?;
        }
        Ok(())
    }
}

const REQUIRED_COLUMNS: [&str; 4] = ["subject_id", "age_months", "gender", "label"];

pub fn question_column(id: &str) -> String {
    format!("q_{id}")
}

/// Loads and validates a score-sheet CSV. Rows that break code or age
/// constraints are reported together in one [`Error::Validation`].
pub fn load_csv(path: impl AsRef<Path>, instrument: Instrument, spec: &EncodingSpec) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_csv(file, instrument, spec, path.display().to_string())
}

pub fn read_csv<R: Read>(reader: R, instrument: Instrument, spec: &EncodingSpec, provenance: String) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);

    let mut fixed = [0usize; 4];
    for (slot, name) in fixed.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = position(name).ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))?;
    }
    let mut question_cols = Vec::with_capacity(spec.len());
    for id in spec.question_ids() {
        let col = question_column(id);
        let idx = position(&col).ok_or_else(|| Error::Schema(format!("missing question column `{col}`")))?;
        question_cols.push((id.to_string(), idx));
    }
    for h in headers.iter() {
        if let Some(id) = h.strip_prefix("q_") {
            if spec.get(id).is_none() {
                return Err(Error::Schema(format!("column `{h}` is not in the encoding spec")));
            }
        }
    }

    let mut report = ValidationReport::default();
    let mut sheets = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let subject_id = record.get(fixed[0]).unwrap_or("").to_string();
        let mut issue = |question: Option<String>, code: Option<u8>, message: String| {
            report.push(RowIssue {
                row,
                subject_id: subject_id.clone(),
                question,
                code,
                message,
            })
        };
        if subject_id.is_empty() {
            issue(None, None, "empty subject_id".into());
        } else if !seen.insert(subject_id.clone()) {
            issue(None, None, "duplicate subject_id".into());
        }
        let age_months = match record.get(fixed[1]).unwrap_or("").parse::<u16>() {
            Ok(a) if (MIN_AGE_MONTHS as u16..=MAX_AGE_MONTHS as u16).contains(&a) => a as u8,
            Ok(a) => {
                issue(
                    None,
                    None,
                    format!("age_months {a} outside {MIN_AGE_MONTHS}..={MAX_AGE_MONTHS}"),
                );
                continue;
            }
            Err(_) => {
                issue(None, None, "age_months is not an integer".into());
                continue;
            }
        };
        let gender = match record.get(fixed[2]).unwrap_or("").parse::<Gender>() {
            Ok(g) => g,
            Err(e) => {
                issue(None, None, e.to_string());
                continue;
            }
        };
        let label = match record.get(fixed[3]).unwrap_or("").parse::<Label>() {
            Ok(l) => l,
            Err(e) => {
                issue(None, None, e.to_string());
                continue;
            }
        };
        let mut answers = BTreeMap::new();
        let mut row_ok = true;
        for (id, col) in &question_cols {
            let raw = record.get(*col).unwrap_or("");
            match raw.parse::<u8>() {
                Ok(code) if spec.questions[id.as_str()].is_declared(code) => {
                    answers.insert(id.clone(), code);
                }
                Ok(code) => {
                    row_ok = false;
                    issue(Some(id.clone()), Some(code), format!("undeclared answer code {code}"));
                }
                Err(_) => {
                    row_ok = false;
                    issue(Some(id.clone()), None, format!("unparsable answer `{raw}`"));
                }
            }
        }
        if row_ok {
            sheets.push(ScoreSheet {
                subject_id,
                age_months,
                gender,
                answers,
                label,
            });
        }
    }
    report.into_result()?;
    Dataset::new(sheets, instrument, provenance)
}

pub fn write_csv(data: &Dataset, spec: &EncodingSpec, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_csv_to(data, spec, file)
}

pub fn write_csv_to<W: Write>(data: &Dataset, spec: &EncodingSpec, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = REQUIRED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(spec.question_ids().map(question_column));
    wtr.write_record(&header)?;
    for sheet in &data.sheets {
        let mut record = vec![
            sheet.subject_id.clone(),
            sheet.age_months.to_string(),
            sheet.gender.as_str().to_string(),
            sheet.label.as_str().to_string(),
        ];
        for id in spec.question_ids() {
            let code = sheet.answers.get(id).ok_or_else(|| {
                Error::Contract(format!("subject {} has no answer for question {id}", sheet.subject_id))
            })?;
            record.push(code.to_string());
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Label-stratified split into `(train, holdout)`; both keep the original
/// sheet order.
pub fn split_holdout(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!("holdout fraction {fraction} not in (0,1)")));
    }
    let mut rng = rng_from(seed);
    let mut holdout = vec![false; data.len()];
    for label in [Label::Negative, Label::Positive] {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.sheets[i].label == label).collect();
        if members.len() < 2 {
            return Err(Error::Stratification(format!(
                "class {} has {} member(s); need at least 2",
                label.as_str(),
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let take = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len() - 1);
        for &i in &members[..take] {
            holdout[i] = true;
        }
    }
    let (hold, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| holdout[i]);
    Ok((data.subset(&train), data.subset(&hold)))
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// Parameters of the planted-signal score-sheet generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub instrument: Instrument,
    pub n_questions: usize,
    pub n_informative: usize,
    pub n_samples: usize,
    pub positive_fraction: f64,
    /// Share of informative questions (0..=1) whose signal is confined to a
    /// single age group: a third of that share goes to each group.
    pub age_signal_shift: f64,
    /// Probability that an informative answer is replaced by a
    /// label-independent background draw.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            instrument: Instrument::AdirLike,
            n_questions: 155,
            n_informative: 15,
            n_samples: 2000,
            positive_fraction: 0.5,
            age_signal_shift: 0.0,
            noise_rate: 0.6,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.n_questions == 0 {
            return bad("n_questions must be positive".into());
        }
        if self.n_informative > self.n_questions {
            return bad(format!(
                "n_informative {} exceeds n_questions {}",
                self.n_informative, self.n_questions
            ));
        }
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2".into());
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return bad(format!("positive_fraction {} not in (0,1)", self.positive_fraction));
        }
        if !(0.0..=1.0).contains(&self.age_signal_shift) {
            return bad(format!("age_signal_shift {} not in [0,1]", self.age_signal_shift));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} not in [0,1)", self.noise_rate));
        }
        Ok(())
    }
}

/// Which questions carry signal, and for which age group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub informative: Vec<String>,
    pub shared: Vec<String>,
    pub young_only: Vec<String>,
    pub old_only: Vec<String>,
    pub age_boundary_months: u8,
}

impl GroundTruth {
    pub fn is_informative(&self, id: &str) -> bool {
        self.informative.iter().any(|q| q == id)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub spec: EncodingSpec,
    pub truth: GroundTruth,
}

const CODES: [u8; 7] = [0, 1, 2, 3, 7, 8, 9];
// Per-label code distributions over CODES.
const CLEAN_POSITIVE: [f64; 7] = [0.00, 0.03, 0.42, 0.49, 0.03, 0.02, 0.01];
const CLEAN_NEGATIVE: [f64; 7] = [0.62, 0.32, 0.02, 0.00, 0.02, 0.01, 0.01];
const BACKGROUND: [f64; 7] = [0.40, 0.25, 0.15, 0.10, 0.04, 0.03, 0.03];

fn draw_code(rng: &mut Rng, probs: &[f64; 7]) -> u8 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (code, p) in CODES.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *code;
        }
    }
    CODES[CODES.len() - 1]
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Planted {
    None,
    Shared,
    YoungOnly,
    OldOnly,
}

struct Subject {
    id: String,
    age_months: u8,
    gender: Gender,
    label: Label,
}

/// Generates a dataset with planted, optionally age-dependent signal.
///
/// Informative questions draw from label-specific code distributions
/// (higher severities for positives) with probability `1 - noise_rate`;
/// everything else draws from one label-independent background distribution.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = rng_from(derive_seed(spec.seed, 0));
    let n_pos = ((spec.n_samples as f64) * spec.positive_fraction).round() as usize;
    let n_pos = n_pos.clamp(1, spec.n_samples - 1);
    let mut labels: Vec<Label> = (0..spec.n_samples)
        .map(|i| Label::from_bool(i < n_pos))
        .collect();
    labels.shuffle(&mut rng);
    let subjects: Vec<Subject> = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let age_months = rng.gen_range(MIN_AGE_MONTHS..=MAX_AGE_MONTHS);
            let g: f64 = rng.gen();
            let gender = if g < 0.02 {
                Gender::Unknown
            } else if g < 0.51 {
                Gender::Male
            } else {
                Gender::Female
            };
            Subject {
                id: format!("S{i:05}"),
                age_months,
                gender,
                label,
            }
        })
        .collect();
    generate_answers(spec, &subjects, "synthetic")
}

/// Draws a second instrument for the subjects of `template` (same ids, ages,
/// genders, labels) with its own independent planted signal. Used to build
/// paired questionnaire/video data for fusion.
pub fn generate_companion(spec: &SyntheticSpec, template: &Dataset) -> Result<SyntheticDataset> {
    let mut spec = spec.clone();
    spec.n_samples = template.len().max(2);
    spec.validate()?;
    let subjects: Vec<Subject> = template
        .sheets
        .iter()
        .map(|s| Subject {
            id: s.subject_id.clone(),
            age_months: s.age_months,
            gender: s.gender,
            label: s.label,
        })
        .collect();
    generate_answers(&spec, &subjects, "synthetic-companion")
}

fn generate_answers(spec: &SyntheticSpec, subjects: &[Subject], provenance: &str) -> Result<SyntheticDataset> {
    let enc = EncodingSpec::standard(spec.instrument, spec.n_questions);
    let ids: Vec<String> = enc.question_ids().map(str::to_string).collect();

    let mut rng = rng_from(derive_seed(spec.seed, 1));
    let mut order: Vec<usize> = (0..spec.n_questions).collect();
    order.shuffle(&mut rng);
    let per_group = ((spec.age_signal_shift * spec.n_informative as f64) / 3.0).floor() as usize;
    let mut planted = vec![Planted::None; spec.n_questions];
    for (rank, &q) in order.iter().take(spec.n_informative).enumerate() {
        planted[q] = if rank < per_group {
            Planted::YoungOnly
        } else if rank < 2 * per_group {
            Planted::OldOnly
        } else {
            Planted::Shared
        };
    }
    let collect = |kind: Planted| -> Vec<String> {
        (0..spec.n_questions)
            .filter(|&q| planted[q] == kind)
            .map(|q| ids[q].clone())
            .collect()
    };
    let truth = GroundTruth {
        seed: spec.seed,
        informative: (0..spec.n_questions)
            .filter(|&q| planted[q] != Planted::None)
            .map(|q| ids[q].clone())
            .collect(),
        shared: collect(Planted::Shared),
        young_only: collect(Planted::YoungOnly),
        old_only: collect(Planted::OldOnly),
        age_boundary_months: AGE_BOUNDARY_MONTHS,
    };

    let mut rng = rng_from(derive_seed(spec.seed, 2));
    let sheets = subjects
        .iter()
        .map(|subj| {
            let young = subj.age_months < AGE_BOUNDARY_MONTHS;
            let answers = ids
                .iter()
                .enumerate()
                .map(|(q, id)| {
                    let active = match planted[q] {
                        Planted::None => false,
                        Planted::Shared => true,
                        Planted::YoungOnly => young,
                        Planted::OldOnly => !young,
                    };
                    let noisy = rng.gen::<f64>() < spec.noise_rate;
                    let probs = if active && !noisy {
                        if subj.label.is_positive() {
                            &CLEAN_POSITIVE
                        } else {
                            &CLEAN_NEGATIVE
                        }
                    } else {
                        &BACKGROUND
                    };
                    (id.clone(), draw_code(&mut rng, probs))
                })
                .collect();
            ScoreSheet {
                subject_id: subj.id.clone(),
                age_months: subj.age_months,
                gender: subj.gender,
                answers,
                label: subj.label,
            }
        })
        .collect();
    let dataset = Dataset::new(sheets, spec.instrument, format!("{provenance}:seed={}", spec.seed))?;
    Ok(SyntheticDataset {
        dataset,
        spec: enc,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> EncodingSpec {
        EncodingSpec::standard(Instrument::AdirLike, 3)
    }

    fn sheet(id: &str, age: u8, label: Label, codes: [u8; 3]) -> ScoreSheet {
        ScoreSheet {
            subject_id: id.into(),
            age_months: age,
            gender: Gender::Male,
            answers: [("1", codes[0]), ("2", codes[1]), ("3", codes[2])]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            label,
        }
    }

    fn csv_text(rows: &[&str]) -> String {
        let mut s = String::from("subject_id,age_months,gender,label,q_1,q_2,q_3\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn well_formed_file_loads_every_row() {
        let rows: Vec<String> = (0..10)
            .map(|i| format!("S{i},{},male,{},0,1,2", 20 + i, if i % 2 == 0 { "positive" } else { "negative" }))
            .collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let data = read_csv(csv_text(&refs).as_bytes(), Instrument::AdirLike, &tiny_spec(), "t".into()).unwrap();
        assert_eq!(data.len(), 10);
        assert_eq!(data.sheets[3].answers["3"], 2);
    }

    #[test]
    fn underage_row_is_reported() {
        let text = csv_text(&["A,30,male,positive,0,1,2", "B,12,female,negative,0,0,0"]);
        match read_csv(text.as_bytes(), Instrument::AdirLike, &tiny_spec(), "t".into()) {
            Err(Error::Validation(r)) => {
                assert_eq!(r.issues.len(), 1);
                assert_eq!(r.issues[0].row, 2);
                assert_eq!(r.issues[0].subject_id, "B");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn undeclared_code_names_row_question_and_code() {
        let text = csv_text(&["A,30,male,positive,0,5,2"]);
        match read_csv(text.as_bytes(), Instrument::AdirLike, &tiny_spec(), "t".into()) {
            Err(Error::Validation(r)) => {
                let issue = &r.issues[0];
                assert_eq!((issue.row, issue.question.as_deref(), issue.code), (1, Some("2"), Some(5)));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn missing_required_column_is_a_schema_error() {
        let text = "subject_id,age_months,label,q_1,q_2,q_3\nA,30,positive,0,0,0\n";
        assert!(matches!(
            read_csv(text.as_bytes(), Instrument::AdirLike, &tiny_spec(), "t".into()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let data = Dataset::new(
            vec![
                sheet("A", 30, Label::Positive, [0, 1, 9]),
                sheet("B", 60, Label::Negative, [7, 3, 8]),
            ],
            Instrument::AdirLike,
            "x",
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv_to(&data, &tiny_spec(), &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), Instrument::AdirLike, &tiny_spec(), "x".into()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn duplicate_subjects_are_rejected() {
        let r = Dataset::new(
            vec![sheet("A", 30, Label::Positive, [0, 0, 0]), sheet("A", 31, Label::Negative, [0, 0, 0])],
            Instrument::AdirLike,
            "x",
        );
        assert!(r.is_err());
    }

    fn balanced(n_pos: usize, n_neg: usize) -> Dataset {
        let sheets = (0..n_pos + n_neg)
            .map(|i| sheet(&format!("S{i}"), 30, Label::from_bool(i < n_pos), [0, 0, 0]))
            .collect();
        Dataset::new(sheets, Instrument::AdirLike, "x").unwrap()
    }

    #[test]
    fn holdout_is_exactly_stratified() {
        let (train, hold) = split_holdout(&balanced(50, 50), 0.2, 3).unwrap();
        assert_eq!(hold.count(Label::Positive), 10);
        assert_eq!(hold.count(Label::Negative), 10);
        assert_eq!(train.len(), 80);
        let (train, hold) = split_holdout(&balanced(2, 2), 0.5, 3).unwrap();
        assert_eq!((train.count(Label::Positive), hold.count(Label::Positive)), (1, 1));
        assert_eq!((train.count(Label::Negative), hold.count(Label::Negative)), (1, 1));
    }

    #[test]
    fn holdout_partitions_and_is_deterministic() {
        let data = balanced(17, 23);
        let (a1, b1) = split_holdout(&data, 0.3, 9).unwrap();
        let (a2, b2) = split_holdout(&data, 0.3, 9).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        let mut ids: Vec<&str> = a1.sheets.iter().chain(&b1.sheets).map(|s| s.subject_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 40);
    }

    #[test]
    fn holdout_needs_two_per_class() {
        assert!(matches!(split_holdout(&balanced(1, 5), 0.5, 0), Err(Error::Stratification(_))));
        assert!(split_holdout(&balanced(5, 5), 1.0, 0).is_err());
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = SyntheticSpec {
            n_samples: 200,
            seed: 7,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        let mut wa = Vec::new();
        let mut wb = Vec::new();
        write_csv_to(&a.dataset, &a.spec, &mut wa).unwrap();
        write_csv_to(&b.dataset, &b.spec, &mut wb).unwrap();
        assert_eq!(wa, wb);
        assert_eq!(a.truth, b.truth);
        a.dataset.validate(&a.spec).unwrap();
    }

    #[test]
    fn generator_rejects_bad_specs() {
        for spec in [
            SyntheticSpec { n_informative: 200, ..Default::default() },
            SyntheticSpec { positive_fraction: 1.0, ..Default::default() },
            SyntheticSpec { noise_rate: 1.0, ..Default::default() },
            SyntheticSpec { age_signal_shift: -0.1, ..Default::default() },
        ] {
            assert!(matches!(generate_synthetic(&spec), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn positive_fraction_is_honoured() {
        let spec = SyntheticSpec {
            n_samples: 1000,
            positive_fraction: 0.37,
            n_questions: 5,
            n_informative: 1,
            ..Default::default()
        };
        let d = generate_synthetic(&spec).unwrap().dataset;
        let frac = d.count(Label::Positive) as f64 / d.len() as f64;
        assert!((frac - 0.37).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn age_shift_splits_planted_questions() {
        let spec = SyntheticSpec {
            n_samples: 10,
            age_signal_shift: 1.0,
            ..Default::default()
        };
        let t = generate_synthetic(&spec).unwrap().truth;
        assert_eq!((t.young_only.len(), t.old_only.len(), t.shared.len()), (5, 5, 5));
        assert_eq!(t.informative.len(), 15);
    }

    #[test]
    fn companion_shares_subjects() {
        let base = generate_synthetic(&SyntheticSpec { n_samples: 50, ..Default::default() }).unwrap();
        let video = generate_companion(
            &SyntheticSpec {
                instrument: Instrument::AdosModule1Like,
                n_questions: 29,
                n_informative: 5,
                seed: 99,
                ..Default::default()
            },
            &base.dataset,
        )
        .unwrap();
        assert_eq!(video.dataset.len(), 50);
        for (a, b) in base.dataset.sheets.iter().zip(&video.dataset.sheets) {
            assert_eq!((&a.subject_id, a.age_months, a.label), (&b.subject_id, b.age_months, b.label));
        }
    }
}
