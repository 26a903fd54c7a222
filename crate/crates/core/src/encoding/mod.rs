//! Answer-code encoders.
//!
//! Three schemes turn instrument answers into binary columns:
//!
//! * one-hot: one column `q<id>==<code>` per declared code;
//! * severity: cumulative `q<id>>=<code>` columns along the severity chain,
//!   `q<id>==<base>` for the least-severe code, `q<id>==<code>` for
//!   standalone codes and nothing at all for null codes;
//! * presence: one column `q<id>.observed`, set iff the answer is one of the
//!   codes meaning the behaviour was seen (whether typical or atypical).
//!
//! Every encoder appends `age_months` (integer) and `gender.male`, then
//! prunes constant columns.

mod matrix;
mod spec;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use matrix::{AggregateValues, FeatureMatrix, FeatureSource};
pub use spec::{EncodingMode, EncodingSpec, QuestionSpec};

use crate::data::{Dataset, Gender, ScoreSheet};
use crate::pipeline::ScreenerArtifact;
use crate::{Error, Result};

pub const AGE_FEATURE: &str = "age_months";
pub const GENDER_FEATURE: &str = "gender.male";

/// Column names produced for one question under its mode.
pub fn question_feature_names(id: &str, q: &QuestionSpec) -> Vec<String> {
    match q.mode {
        EncodingMode::OneHot => q.declared_codes().iter().map(|c| format!("q{id}=={c}")).collect(),
        EncodingMode::Severity => {
            let mut names = vec![format!("q{id}=={}", q.chain[0])];
            names.extend(q.chain[1..].iter().map(|c| format!("q{id}>={c}")));
            names.extend(q.extra_equality_codes().iter().map(|c| format!("q{id}=={c}")));
            names
        }
        EncodingMode::Presence => vec![format!("q{id}.observed")],
    }
}

/// Pushes the encoded bits of one answer, in [`question_feature_names`] order.
fn encode_answer(id: &str, q: &QuestionSpec, code: u8, out: &mut Vec<u8>) -> Result<()> {
    if !q.is_declared(code) {
        return Err(Error::Encoding(format!("question {id}: undeclared code {code}")));
    }
    match q.mode {
        EncodingMode::OneHot => out.extend(q.declared_codes().iter().map(|&c| u8::from(c == code))),
        EncodingMode::Severity => {
            let level = q.severity_level(code);
            out.push(u8::from(level == Some(0)));
            for j in 1..q.chain.len() {
                out.push(u8::from(level.is_some_and(|l| l >= j)));
            }
            out.extend(q.extra_equality_codes().iter().map(|&c| u8::from(c == code)));
        }
        EncodingMode::Presence => out.push(u8::from(q.is_observed(code))),
    }
    Ok(())
}

struct Encoded {
    names: Vec<String>,
    sources: Vec<FeatureSource>,
    values: Vec<u8>,
}

fn encode_sheets(sheets: &[&ScoreSheet], spec: &EncodingSpec) -> Result<Encoded> {
    let mut names = Vec::new();
    let mut sources = Vec::new();
    for (id, q) in &spec.questions {
        for name in question_feature_names(id, q) {
            names.push(name);
            sources.push(FeatureSource::Question(id.clone()));
        }
    }
    names.push(AGE_FEATURE.to_string());
    sources.push(FeatureSource::Age);
    names.push(GENDER_FEATURE.to_string());
    sources.push(FeatureSource::Gender);

    let mut values = Vec::with_capacity(sheets.len() * names.len());
    for sheet in sheets {
        for (id, q) in &spec.questions {
            let code = *sheet.answers.get(id).ok_or_else(|| {
                Error::Encoding(format!("subject {}: no answer for question {id}", sheet.subject_id))
            })?;
            encode_answer(id, q, code, &mut values)?;
        }
        values.push(sheet.age_months);
        values.push(u8::from(sheet.gender == Gender::Male));
    }
    Ok(Encoded { names, sources, values })
}

/// Encodes each question under its own declared mode.
pub fn encode(data: &Dataset, spec: &EncodingSpec) -> Result<FeatureMatrix> {
    let sheets: Vec<&ScoreSheet> = data.sheets.iter().collect();
    let enc = encode_sheets(&sheets, spec)?;
    let mut m = FeatureMatrix::new(
        enc.names,
        enc.sources,
        data.sheets.iter().map(|s| s.subject_id.clone()).collect(),
        data.sheets.iter().map(|s| s.age_months).collect(),
        enc.values,
        data.labels(),
    )?;
    let dropped = m.prune_constant();
    if !dropped.is_empty() {
        log::info!("pruned {} constant column(s)", dropped.len());
        log::debug!("pruned columns: {dropped:?}");
    }
    Ok(m)
}

fn require_mode(spec: &EncodingSpec, mode: EncodingMode) -> Result<()> {
    match spec.questions.iter().find(|(_, q)| q.mode != mode) {
        Some((id, q)) => Err(Error::Encoding(format!(
            "question {id} is in {} mode, expected {}",
            q.mode.as_str(),
            mode.as_str()
        ))),
        None => Ok(()),
    }
}

pub fn one_hot_encode(data: &Dataset, spec: &EncodingSpec) -> Result<FeatureMatrix> {
    require_mode(spec, EncodingMode::OneHot)?;
    encode(data, spec)
}

pub fn severity_encode(data: &Dataset, spec: &EncodingSpec) -> Result<FeatureMatrix> {
    require_mode(spec, EncodingMode::Severity)?;
    encode(data, spec)
}

pub fn presence_encode(data: &Dataset, spec: &EncodingSpec) -> Result<FeatureMatrix> {
    require_mode(spec, EncodingMode::Presence)?;
    encode(data, spec)
}

// ---------------------------------------------------------------------------
// Aggregates
// ---------------------------------------------------------------------------

/// Aggregate column names for a question set whose deepest chain has
/// `max_level` levels above the base.
pub fn aggregate_feature_names(max_level: usize) -> Vec<String> {
    let mut names = Vec::new();
    for stat in ["min", "max", "mean"] {
        names.extend((1..=max_level).map(|k| format!("agg.{stat}_severity>={k}")));
    }
    names.extend((0..=max_level).map(|k| format!("agg.count_level{k}")));
    names.push("agg.count_other".to_string());
    names
}

fn aggregate_questions<'a>(spec: &'a EncodingSpec, questions: &[String]) -> Result<Vec<(&'a str, &'a QuestionSpec)>> {
    if questions.is_empty() {
        return Err(Error::Parameter("aggregates need at least one question".into()));
    }
    questions
        .iter()
        .map(|id| {
            let (key, q) = spec
                .questions
                .get_key_value(id)
                .ok_or_else(|| Error::Parameter(format!("unknown question `{id}`")))?;
            if q.chain.len() < 2 {
                return Err(Error::Parameter(format!("question {id} has no severity chain")));
            }
            Ok((key.as_str(), q))
        })
        .collect()
}

/// Min/max/mean severity level and per-level counts over `questions` for one
/// sheet. Null codes are ignored; standalone (non-chain) codes only count
/// towards `other_count`.
pub fn aggregate_values(sheet: &ScoreSheet, qs: &[(&str, &QuestionSpec)], max_level: usize) -> Result<AggregateValues> {
    let mut levels = Vec::with_capacity(qs.len());
    let mut other = 0u16;
    for (id, q) in qs {
        let code = *sheet
            .answers
            .get(*id)
            .ok_or_else(|| Error::MissingAnswers(vec![id.to_string()]))?;
        if !q.is_declared(code) {
            return Err(Error::Encoding(format!("question {id}: undeclared code {code}")));
        }
        match q.severity_level(code) {
            Some(l) => levels.push(l as u8),
            None if q.is_null(code) => {}
            None => other = other.saturating_add(1),
        }
    }
    let mut level_counts = vec![0u16; max_level + 1];
    for &l in &levels {
        level_counts[l as usize] += 1;
    }
    let mean = (!levels.is_empty()).then(|| levels.iter().map(|&l| l as f64).sum::<f64>() / levels.len() as f64);
    Ok(AggregateValues {
        min: levels.iter().copied().min(),
        max: levels.iter().copied().max(),
        mean,
        level_counts,
        other_count: other,
    })
}

fn push_aggregate_bits(v: &AggregateValues, max_level: usize, out: &mut Vec<u8>) {
    for stat in [v.min.map(f64::from), v.max.map(f64::from), v.mean] {
        for k in 1..=max_level {
            out.push(u8::from(stat.is_some_and(|s| s >= k as f64)));
        }
    }
    out.extend(v.level_counts.iter().map(|&c| c.min(u8::MAX as u16) as u8));
    out.push(v.other_count.min(u8::MAX as u16) as u8);
}

fn max_level_of(qs: &[(&str, &QuestionSpec)]) -> usize {
    qs.iter().map(|(_, q)| q.chain.len() - 1).max().unwrap_or(0)
}

/// Aggregate severity columns over `questions`, for every sheet of `data`.
/// The result has the same rows as the dataset's encoded matrix and is meant
/// to be joined with [`FeatureMatrix::hstack`]; raw values are kept in
/// `aggregate_values`.
pub fn aggregates(data: &Dataset, questions: &[String], spec: &EncodingSpec) -> Result<FeatureMatrix> {
    let qs = aggregate_questions(spec, questions)?;
    let max_level = max_level_of(&qs);
    let names = aggregate_feature_names(max_level);
    let mut values = Vec::with_capacity(names.len() * data.len());
    let mut raw = Vec::with_capacity(data.len());
    for sheet in &data.sheets {
        let v = aggregate_values(sheet, &qs, max_level)?;
        push_aggregate_bits(&v, max_level, &mut values);
        raw.push(v);
    }
    let mut m = FeatureMatrix::new(
        names.clone(),
        vec![FeatureSource::Aggregate; names.len()],
        data.sheets.iter().map(|s| s.subject_id.clone()).collect(),
        data.sheets.iter().map(|s| s.age_months).collect(),
        values,
        data.labels(),
    )?;
    m.aggregate_values = raw;
    m.prune_constant();
    Ok(m)
}

// ---------------------------------------------------------------------------
// Runtime encoding
// ---------------------------------------------------------------------------

/// Answers collected for one subject at screening time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Responses {
    pub answers: BTreeMap<String, u8>,
    pub age_months: u8,
    pub gender: Gender,
}

/// Encodes `responses` into exactly `feature_names`, in order. `spec` must
/// cover every question the features depend on; `aggregate_over` lists the
/// questions aggregates are computed across (empty when the model has none).
pub fn encode_responses(
    responses: &Responses,
    spec: &EncodingSpec,
    aggregate_over: &[String],
    feature_names: &[String],
) -> Result<Vec<u8>> {
    let missing: Vec<String> = spec
        .question_ids()
        .filter(|id| !responses.answers.contains_key(*id))
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAnswers(missing));
    }
    let sheet = ScoreSheet {
        subject_id: String::new(),
        age_months: responses.age_months,
        gender: responses.gender,
        answers: spec
            .question_ids()
            .map(|id| (id.to_string(), responses.answers[id]))
            .collect(),
        label: crate::data::Label::Negative,
    };
    let enc = encode_sheets(&[&sheet], spec)?;
    let mut by_name: BTreeMap<&str, u8> = enc.names.iter().map(String::as_str).zip(enc.values.iter().copied()).collect();

    let agg_names;
    let mut agg_bits = Vec::new();
    if !aggregate_over.is_empty() {
        let qs = aggregate_questions(spec, aggregate_over)?;
        let max_level = max_level_of(&qs);
        agg_names = aggregate_feature_names(max_level);
        let v = aggregate_values(&sheet, &qs, max_level)?;
        push_aggregate_bits(&v, max_level, &mut agg_bits);
        by_name.extend(agg_names.iter().map(String::as_str).zip(agg_bits.iter().copied()));
    }

    feature_names
        .iter()
        .map(|name| {
            by_name
                .get(name.as_str())
                .copied()
                .ok_or_else(|| Error::Contract(format!("feature `{name}` cannot be produced from the artifact's encoder")))
        })
        .collect()
}

/// Runtime feature row for a trained screener.
pub fn encode_for_screening(responses: &Responses, artifact: &ScreenerArtifact) -> Result<Vec<u8>> {
    encode_responses(
        responses,
        &artifact.encoding,
        &artifact.aggregate_questions,
        &artifact.model.feature_names,
    )
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::data::{Instrument, Label};

    fn q37_spec(mode: EncodingMode) -> EncodingSpec {
        let mut questions = indexmap::IndexMap::new();
        questions.insert("37".to_string(), QuestionSpec::standard(mode));
        questions.insert("5".to_string(), QuestionSpec::standard(mode));
        EncodingSpec::new(questions).unwrap()
    }

    fn data(rows: &[(u8, u8)]) -> Dataset {
        let sheets = rows
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| ScoreSheet {
                subject_id: format!("S{i}"),
                age_months: 20 + i as u8,
                gender: if i % 2 == 0 { Gender::Male } else { Gender::Female },
                answers: BTreeMap::from([("37".to_string(), a), ("5".to_string(), b)]),
                label: Label::from_bool(i % 2 == 0),
            })
            .collect();
        Dataset::new(sheets, Instrument::AdirLike, "t").unwrap()
    }

    fn features_of(m: &FeatureMatrix, i: usize, prefix: &str) -> BTreeMap<String, u8> {
        m.feature_names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with(prefix))
            .map(|(j, n)| (n.clone(), m.value(i, j)))
            .collect()
    }

    #[test]
    fn one_hot_sets_exactly_one_column() {
        let m = one_hot_encode(&data(&[(2, 0), (0, 1), (9, 3)]), &q37_spec(EncodingMode::OneHot)).unwrap();
        let f = features_of(&m, 0, "q37");
        assert_eq!(f["q37==2"], 1);
        assert_eq!(f.values().map(|&v| v as u32).sum::<u32>(), 1);
        assert!(m.feature_names.contains(&AGE_FEATURE.to_string()));
        assert!(m.feature_names.contains(&GENDER_FEATURE.to_string()));
    }

    #[test]
    fn one_hot_prunes_question_answered_identically() {
        let m = one_hot_encode(&data(&[(2, 0), (1, 0), (3, 0)]), &q37_spec(EncodingMode::OneHot)).unwrap();
        assert!(m.feature_names.iter().all(|n| !n.starts_with("q5")));
        assert!(m.pruned.contains(&"q5==0".to_string()));
        assert!(m.pruned.contains(&"q5==9".to_string()));
    }

    #[test]
    fn one_hot_column_count_is_in_the_thousand_range() {
        let spec = EncodingSpec::standard(Instrument::AdirLike, 155)
            .with_mode(EncodingMode::OneHot)
            .unwrap();
        let n: usize = spec.questions.iter().map(|(id, q)| question_feature_names(id, q).len()).sum();
        assert_eq!(n, 155 * 7);
    }

    #[test]
    fn wrong_mode_is_rejected() {
        let d = data(&[(2, 0), (0, 1)]);
        assert!(matches!(
            one_hot_encode(&d, &q37_spec(EncodingMode::Severity)),
            Err(Error::Encoding(_))
        ));
    }

    #[test]
    fn undeclared_code_is_an_encoding_error() {
        let d = data(&[(5, 0), (0, 1)]);
        assert!(matches!(
            severity_encode(&d, &q37_spec(EncodingMode::Severity)),
            Err(Error::Encoding(_))
        ));
    }

    #[test]
    fn severity_names_follow_the_chain() {
        let q = QuestionSpec::standard(EncodingMode::Severity);
        assert_eq!(
            question_feature_names("37", &q),
            vec!["q37==0", "q37>=1", "q37>=2", "q37>=3", "q37==7"]
        );
    }

    fn bits(code: u8) -> Vec<u8> {
        let mut out = Vec::new();
        encode_answer("37", &QuestionSpec::standard(EncodingMode::Severity), code, &mut out).unwrap();
        out
    }

    #[test]
    fn severity_bits_for_each_code() {
        // order: ==0, >=1, >=2, >=3, ==7
        assert_eq!(bits(0), [1, 0, 0, 0, 0]);
        assert_eq!(bits(1), [0, 1, 0, 0, 0]);
        assert_eq!(bits(2), [0, 1, 1, 0, 0]);
        assert_eq!(bits(3), [0, 1, 1, 1, 0]);
        assert_eq!(bits(7), [0, 0, 0, 0, 1]);
        assert_eq!(bits(8), [0, 0, 0, 0, 0]);
        assert_eq!(bits(9), [0, 0, 0, 0, 0]);
    }

    #[test]
    fn presence_marks_observed_codes_only() {
        let q = QuestionSpec::standard(EncodingMode::Presence);
        for (code, expected) in [(0, 0), (1, 1), (2, 1), (3, 1), (7, 1), (8, 0), (9, 0)] {
            let mut out = Vec::new();
            encode_answer("1", &q, code, &mut out).unwrap();
            assert_eq!(out, vec![expected], "code {code}");
        }
    }

    #[test]
    fn presence_matrix_of_absent_rows_is_zero() {
        let m = presence_encode(&data(&[(0, 0), (8, 9), (3, 0)]), &q37_spec(EncodingMode::Presence)).unwrap();
        let j = m.feature_index("q37.observed").unwrap();
        assert_eq!(m.column(j), vec![0, 0, 1]);
        assert!(m.feature_index("q5.observed").is_none(), "all-zero column pruned");
    }

    fn agg_spec(n: usize) -> EncodingSpec {
        EncodingSpec::standard(Instrument::AdirLike, n)
    }

    fn one_sheet(codes: &[u8]) -> ScoreSheet {
        ScoreSheet {
            subject_id: "A".into(),
            age_months: 30,
            gender: Gender::Female,
            answers: codes.iter().enumerate().map(|(i, &c)| ((i + 1).to_string(), c)).collect(),
            label: Label::Positive,
        }
    }

    #[test]
    fn aggregate_arithmetic() {
        let spec = agg_spec(4);
        let ids: Vec<String> = spec.question_ids().map(str::to_string).collect();
        let qs = aggregate_questions(&spec, &ids).unwrap();
        let v = aggregate_values(&one_sheet(&[2, 0, 3, 1]), &qs, 3).unwrap();
        assert_eq!((v.min, v.max, v.mean), (Some(0), Some(3), Some(1.5)));
        assert_eq!(v.level_counts, vec![1, 1, 1, 1]);
        assert_eq!(v.other_count, 0);
        let mut bits = Vec::new();
        push_aggregate_bits(&v, 3, &mut bits);
        let names = aggregate_feature_names(3);
        let by: BTreeMap<&str, u8> = names.iter().map(String::as_str).zip(bits).collect();
        assert_eq!(by["agg.min_severity>=1"], 0);
        assert_eq!(by["agg.max_severity>=3"], 1);
        assert_eq!(by["agg.mean_severity>=1"], 1);
        assert_eq!(by["agg.mean_severity>=2"], 0);
    }

    #[test]
    fn aggregates_of_null_answers_are_undefined_and_false() {
        let spec = agg_spec(3);
        let ids: Vec<String> = spec.question_ids().map(str::to_string).collect();
        let qs = aggregate_questions(&spec, &ids).unwrap();
        let v = aggregate_values(&one_sheet(&[8, 9, 7]), &qs, 3).unwrap();
        assert!(!v.is_defined());
        assert_eq!(v.other_count, 1);
        let mut bits = Vec::new();
        push_aggregate_bits(&v, 3, &mut bits);
        assert!(bits[..9].iter().all(|&b| b == 0));
    }

    #[test]
    fn aggregates_need_questions() {
        let spec = agg_spec(3);
        let d = Dataset::new(vec![one_sheet(&[1, 2, 3])], Instrument::AdirLike, "t").unwrap();
        assert!(matches!(aggregates(&d, &[], &spec), Err(Error::Parameter(_))));
    }

    #[test]
    fn runtime_row_matches_training_row_and_ignores_order() {
        let spec = q37_spec(EncodingMode::Severity);
        let d = data(&[(2, 0), (0, 3), (7, 1), (9, 2)]);
        let m = severity_encode(&d, &spec).unwrap();
        let agg = aggregates(&d, &["37".to_string(), "5".to_string()], &spec).unwrap();
        let full = m.hstack(&agg).unwrap();
        for i in 0..d.len() {
            let s = &d.sheets[i];
            let r = Responses {
                answers: s.answers.clone(),
                age_months: s.age_months,
                gender: s.gender,
            };
            let row = encode_responses(&r, &spec, &["37".to_string(), "5".to_string()], &full.feature_names).unwrap();
            assert_eq!(row.as_slice(), full.row(i));
            let reversed = encode_responses(&r, &spec, &["5".to_string(), "37".to_string()], &full.feature_names).unwrap();
            assert_eq!(row, reversed);
        }
    }

    #[test]
    fn runtime_encoding_lists_missing_questions() {
        let spec = q37_spec(EncodingMode::Severity);
        let r = Responses {
            answers: BTreeMap::from([("5".to_string(), 1)]),
            age_months: 30,
            gender: Gender::Male,
        };
        match encode_responses(&r, &spec, &[], &["q5>=1".to_string()]) {
            Err(Error::MissingAnswers(m)) => assert_eq!(m, vec!["37"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn runtime_null_answers_give_all_false() {
        let spec = q37_spec(EncodingMode::Severity);
        let r = Responses {
            answers: BTreeMap::from([("5".to_string(), 9), ("37".to_string(), 8)]),
            age_months: 30,
            gender: Gender::Male,
        };
        let names: Vec<String> = ["q37>=1", "q37==0", "q5==7", "q5>=3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(encode_responses(&r, &spec, &[], &names).unwrap(), vec![0, 0, 0, 0]);
    }
}
