use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::Instrument;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    OneHot,
    Severity,
    Presence,
}

impl EncodingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EncodingMode::OneHot => "one_hot",
            EncodingMode::Severity => "severity",
            EncodingMode::Presence => "presence",
        }
    }
}

impl std::str::FromStr for EncodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_hot" | "one-hot" | "onehot" => Ok(EncodingMode::OneHot),
            "severity" => Ok(EncodingMode::Severity),
            "presence" => Ok(EncodingMode::Presence),
            other => Err(Error::Parameter(format!("unknown encoding mode `{other}`"))),
        }
    }
}

/// Per-question coding rules.
///
/// A question carries enough information to be encoded under any mode it has
/// data for: `chain`/`equality`/`null_codes` drive severity encoding and
/// `observed_codes` drives presence encoding. `codes` lists the declared
/// answer codes; when omitted it is the union of the other sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub mode: EncodingMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub codes: Vec<u8>,
    /// Severity chain, least severe first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chain: Vec<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub equality: Vec<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub null_codes: Vec<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observed_codes: Vec<u8>,
}

impl QuestionSpec {
    /// The ADI-R item-37 style layout: chain 0<1<2<3, `7` as a standalone
    /// code, `8`/`9` as not-applicable / no-answer.
    pub fn standard(mode: EncodingMode) -> Self {
        QuestionSpec {
            mode,
            codes: vec![0, 1, 2, 3, 7, 8, 9],
            chain: vec![0, 1, 2, 3],
            equality: vec![7],
            null_codes: vec![8, 9],
            observed_codes: vec![1, 2, 3, 7],
        }
    }

    pub fn declared_codes(&self) -> BTreeSet<u8> {
        if !self.codes.is_empty() {
            return self.codes.iter().copied().collect();
        }
        self.chain
            .iter()
            .chain(&self.equality)
            .chain(&self.null_codes)
            .chain(&self.observed_codes)
            .copied()
            .collect()
    }

    pub fn is_declared(&self, code: u8) -> bool {
        self.declared_codes().contains(&code)
    }

    /// Equality codes other than the chain base (the base always gets its
    /// own `==` feature since `>=base` would be vacuous).
    pub fn extra_equality_codes(&self) -> Vec<u8> {
        let base = self.chain.first().copied();
        let mut out: Vec<u8> = self
            .equality
            .iter()
            .copied()
            .filter(|c| Some(*c) != base)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Position of `code` in the severity chain.
    pub fn severity_level(&self, code: u8) -> Option<usize> {
        self.chain.iter().position(|&c| c == code)
    }

    pub fn is_null(&self, code: u8) -> bool {
        self.null_codes.contains(&code)
    }

    pub fn is_observed(&self, code: u8) -> bool {
        self.observed_codes.contains(&code)
    }

    fn validate(&self, id: &str) -> Result<()> {
        let declared = self.declared_codes();
        if declared.is_empty() {
            return Err(Error::Schema(format!("question {id}: no declared codes")));
        }
        match self.mode {
            EncodingMode::OneHot => Ok(()),
            EncodingMode::Presence => {
                if let Some(c) = self.observed_codes.iter().find(|c| !declared.contains(c)) {
                    return Err(Error::Schema(format!(
                        "question {id}: observed code {c} is not declared"
                    )));
                }
                Ok(())
            }
            EncodingMode::Severity => self.validate_severity(id, &declared),
        }
    }

    fn validate_severity(&self, id: &str, declared: &BTreeSet<u8>) -> Result<()> {
        if self.chain.len() < 2 {
            return Err(Error::Schema(format!(
                "question {id}: severity chain needs at least 2 levels"
            )));
        }
        let chain: BTreeSet<u8> = self.chain.iter().copied().collect();
        if chain.len() != self.chain.len() {
            return Err(Error::Schema(format!(
                "question {id}: severity chain repeats a code"
            )));
        }
        let base = self.chain[0];
        let equality: BTreeSet<u8> = self.extra_equality_codes().into_iter().collect();
        let null: BTreeSet<u8> = self.null_codes.iter().copied().collect();
        for &code in declared {
            let hits = [chain.contains(&code), equality.contains(&code), null.contains(&code)]
                .iter()
                .filter(|&&b| b)
                .count();
            if hits != 1 {
                return Err(Error::Schema(format!(
                    "question {id}: code {code} must belong to exactly one of chain, equality, null \
                     (chain base {base} may additionally be listed as equality)"
                )));
            }
        }
        let union: BTreeSet<u8> = chain.union(&equality).chain(null.iter()).copied().collect();
        if let Some(c) = union.iter().find(|c| !declared.contains(c)) {
            return Err(Error::Schema(format!(
                "question {id}: code {c} is used but not declared"
            )));
        }
        Ok(())
    }
}

/// Question id → coding rules, in instrument order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncodingSpec {
    pub questions: IndexMap<String, QuestionSpec>,
}

impl EncodingSpec {
    pub fn new(questions: IndexMap<String, QuestionSpec>) -> Result<Self> {
        let spec = EncodingSpec { questions };
        spec.validate()?;
        Ok(spec)
    }

    /// Standard layout for `n_questions` questions numbered from 1, in the
    /// mode the instrument is normally encoded with.
    pub fn standard(instrument: Instrument, n_questions: usize) -> Self {
        let mode = match instrument {
            Instrument::AdirLike => EncodingMode::Severity,
            Instrument::AdosModule1Like | Instrument::AdosModule2Like => EncodingMode::Presence,
        };
        let questions = (1..=n_questions)
            .map(|i| (i.to_string(), QuestionSpec::standard(mode)))
            .collect();
        EncodingSpec { questions }
    }

    pub fn validate(&self) -> Result<()> {
        if self.questions.is_empty() {
            return Err(Error::Schema("encoding spec declares no questions".into()));
        }
        for (id, q) in &self.questions {
            if id.is_empty() {
                return Err(Error::Schema("empty question id".into()));
            }
            q.validate(id)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let spec: EncodingSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn question_ids(&self) -> impl Iterator<Item = &str> {
        self.questions.keys().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Option<&QuestionSpec> {
        self.questions.get(id)
    }

    /// Same questions, all switched to `mode`.
    pub fn with_mode(&self, mode: EncodingMode) -> Result<Self> {
        let questions = self
            .questions
            .iter()
            .map(|(id, q)| {
                let mut q = q.clone();
                q.mode = mode;
                (id.clone(), q)
            })
            .collect();
        EncodingSpec::new(questions)
    }

    /// Sub-spec over `ids`, kept in instrument order.
    pub fn restrict<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let wanted: BTreeSet<&str> = ids.iter().map(AsRef::as_ref).collect();
        for id in &wanted {
            if !self.questions.contains_key(*id) {
                return Err(Error::Parameter(format!("unknown question `{id}`")));
            }
        }
        let questions = self
            .questions
            .iter()
            .filter(|(id, _)| wanted.contains(id.as_str()))
            .map(|(id, q)| (id.clone(), q.clone()))
            .collect();
        Ok(EncodingSpec { questions })
    }

    /// The single mode shared by every question, if there is one.
    pub fn uniform_mode(&self) -> Option<EncodingMode> {
        let mut modes = self.questions.values().map(|q| q.mode);
        let first = modes.next()?;
        modes.all(|m| m == first).then_some(first)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q37() -> QuestionSpec {
        QuestionSpec::standard(EncodingMode::Severity)
    }

    #[test]
    fn standard_question_validates_in_every_mode() {
        for mode in [EncodingMode::OneHot, EncodingMode::Severity, EncodingMode::Presence] {
            let mut q = q37();
            q.mode = mode;
            q.validate("37").unwrap();
        }
    }

    #[test]
    fn chain_base_may_be_listed_as_equality() {
        let mut q = q37();
        q.equality = vec![0, 7];
        q.validate("37").unwrap();
        assert_eq!(q.extra_equality_codes(), vec![7]);
    }

    #[test]
    fn overlapping_partition_is_rejected() {
        let mut q = q37();
        q.null_codes = vec![7, 8, 9];
        assert!(matches!(q.validate("37"), Err(Error::Schema(_))));
    }

    #[test]
    fn one_level_chain_is_rejected() {
        let mut q = q37();
        q.chain = vec![0];
        q.codes = vec![0, 7, 8, 9];
        assert!(q.validate("37").is_err());
    }

    #[test]
    fn undeclared_code_in_partition_is_rejected() {
        let mut q = q37();
        q.codes = vec![0, 1, 2, 3, 7, 8];
        assert!(q.validate("37").is_err());
    }

    #[test]
    fn json_round_trip_keeps_question_order() {
        let spec = EncodingSpec::standard(Instrument::AdirLike, 12);
        let text = serde_json::to_string(&spec).unwrap();
        let back: EncodingSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
        let ids: Vec<&str> = back.question_ids().collect();
        assert_eq!(ids[..3], ["1", "2", "3"]);
        assert_eq!(ids[11], "12");
    }

    #[test]
    fn with_mode_switches_every_question() {
        let spec = EncodingSpec::standard(Instrument::AdirLike, 3);
        let oh = spec.with_mode(EncodingMode::OneHot).unwrap();
        assert_eq!(oh.uniform_mode(), Some(EncodingMode::OneHot));
    }
}
