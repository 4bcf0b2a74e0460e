//! JSONL record types shared by the pipeline stages.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{self, AbstractionError, AbstractionMap, IdiomVocabulary};
use crate::corpus::MethodPair;
use crate::eval::EvalExample;
use crate::syntax::{self, Bucket, ClassifiedToken, MethodUnit, SyntaxClass};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub text: String,
    pub class: SyntaxClass,
}

impl From<&ClassifiedToken> for TokenRecord {
    fn from(t: &ClassifiedToken) -> Self {
        TokenRecord {
            text: t.text.clone(),
            class: t.class,
        }
    }
}

impl TokenRecord {
    pub fn to_classified(&self) -> ClassifiedToken {
        ClassifiedToken {
            text: self.text.clone(),
            class: self.class,
            byte_start: 0,
            byte_end: 0,
            line: 0,
            col: 0,
        }
    }
}

pub fn token_texts(tokens: &[TokenRecord]) -> Vec<String> {
    tokens.iter().map(|t| t.text.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub id: String,
    pub bucket: Bucket,
    pub tokens: Vec<TokenRecord>,
}

impl MethodRecord {
    pub fn from_unit(id: String, unit: &MethodUnit) -> Self {
        let tokens: Vec<TokenRecord> = syntax::normalize(unit).iter().map(TokenRecord::from).collect();
        MethodRecord {
            id,
            bucket: Bucket::from_count(tokens.len()),
            tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub bucket: Bucket,
    pub buggy_tokens: Vec<TokenRecord>,
    pub fixed_tokens: Vec<TokenRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstract_buggy: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstract_fixed: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstraction_map: Option<AbstractionMap>,
}

impl PairRecord {
    pub fn from_method_pair(pair: &MethodPair) -> Self {
        let buggy: Vec<TokenRecord> = syntax::normalize(&pair.buggy).iter().map(TokenRecord::from).collect();
        let fixed: Vec<TokenRecord> = syntax::normalize(&pair.fixed).iter().map(TokenRecord::from).collect();
        PairRecord {
            id: pair.id.clone(),
            bucket: Bucket::from_count(buggy.len().max(fixed.len())),
            buggy_tokens: buggy,
            fixed_tokens: fixed,
            abstract_buggy: None,
            abstract_fixed: None,
            abstraction_map: None,
        }
    }

    /// Fills the abstract fields in place.
    pub fn abstract_with(&mut self, idioms: &IdiomVocabulary) -> Result<()> {
        let buggy: Vec<ClassifiedToken> = self.buggy_tokens.iter().map(TokenRecord::to_classified).collect();
        let fixed: Vec<ClassifiedToken> = self.fixed_tokens.iter().map(TokenRecord::to_classified).collect();
        let pair = abstraction::abstract_pair(&buggy, &fixed, idioms)?;
        self.abstract_buggy = Some(pair.buggy.tokens);
        self.abstract_fixed = Some(pair.fixed.tokens);
        self.abstraction_map = Some(pair.map);
        Ok(())
    }

    pub fn is_abstracted(&self) -> bool {
        self.abstract_buggy.is_some() && self.abstract_fixed.is_some() && self.abstraction_map.is_some()
    }

    pub fn eval_example(&self) -> EvalExample {
        EvalExample {
            id: self.id.clone(),
            bucket: self.bucket,
            buggy: token_texts(&self.buggy_tokens),
            fixed: token_texts(&self.fixed_tokens),
        }
    }

    pub fn buggy_units(&self) -> Vec<ClassifiedToken> {
        self.buggy_tokens.iter().map(TokenRecord::to_classified).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tokens: Vec<String>,
    pub score: f64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Candidate>>,
}

pub fn read_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| DatasetError::Json { line: i + 1, source }))
        .collect()
}

pub fn write_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record types serialize infallibly"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::extract_methods;

    #[test]
    fn pair_record_roundtrip() {
        let b = &extract_methods("class A { int f(int x) { return x; } }").unwrap()[0];
        let f = &extract_methods("class A { int f(int x) { return x + 1; } }").unwrap()[0];
        let pair = MethodPair {
            id: "0:A.java:A.f(int)".into(),
            qualified_name: b.qualified_name.clone(),
            buggy: b.clone(),
            fixed: f.clone(),
        };
        let mut rec = PairRecord::from_method_pair(&pair);
        let plain = write_jsonl(std::slice::from_ref(&rec));
        assert!(!plain.contains("abstract_buggy"));
        assert!(plain.contains(r#"{"text":"int","class":"OTHER"}"#), "{plain}");
        rec.abstract_with(&IdiomVocabulary::empty()).unwrap();
        let text = write_jsonl(std::slice::from_ref(&rec));
        assert!(text.contains(r#""abstraction_map":{"METHOD_1":"f","VARIABLE_1":"x","NUM_LIT_1":"1"}"#), "{text}");
        let back: Vec<PairRecord> = read_jsonl(&text).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn bad_line_reports_position() {
        let err = read_jsonl::<PretrainRecord>("{\"input_ids\":[],\"target_ids\":[],\"seed\":1}\n\nnope\n").unwrap_err();
        assert!(err.to_string().starts_with("line 3:"), "{err}");
    }
}
