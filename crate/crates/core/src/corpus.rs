//! Snippets, per-token log-probabilities, embeddings and labeled datasets.
//!
//! Every record type travels as one JSON object per line. Loading validates
//! record invariants and reports the offending line and field. All logarithms
//! in this crate are natural logarithms.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a generator, reference model or feature extractor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelId(String);

impl ModelId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::field("model_id", "must be non-empty"));
        }
        if id.chars().any(char::is_whitespace) {
            return Err(Error::field(
                "model_id",
                format!("`{id}` must not contain whitespace"),
            ));
        }
        Ok(ModelId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ModelId {
    type Error = String;

    fn try_from(value: String) -> std::result::Result<Self, String> {
        ModelId::new(value).map_err(|e| e.to_string())
    }
}

impl From<ModelId> for String {
    fn from(id: ModelId) -> String {
        id.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::new(s)
    }
}

/// Who wrote a snippet. Serialized as `human`, `model:<id>` or `unknown`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Origin {
    Human,
    Model(ModelId),
    Unknown,
}

impl Origin {
    pub fn model(&self) -> Option<&ModelId> {
        match self {
            Origin::Model(id) => Some(id),
            _ => None,
        }
    }
}

impl TryFrom<String> for Origin {
    type Error = String;

    fn try_from(value: String) -> std::result::Result<Self, String> {
        match value.as_str() {
            "human" => Ok(Origin::Human),
            "unknown" => Ok(Origin::Unknown),
            other => match other.strip_prefix("model:") {
                Some(id) => ModelId::new(id)
                    .map(Origin::Model)
                    .map_err(|e| e.to_string()),
                None => Err(format!(
                    "origin `{other}` is not one of human, model:<id>, unknown"
                )),
            },
        }
    }
}

impl From<Origin> for String {
    fn from(origin: Origin) -> String {
        origin.to_string()
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Human => f.write_str("human"),
            Origin::Model(id) => write!(f, "model:{id}"),
            Origin::Unknown => f.write_str("unknown"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSnippet {
    pub snippet_id: String,
    pub language: String,
    pub text: String,
    pub origin: Origin,
    pub prompt_id: String,
}

/// A tokenized snippet over a vocabulary of `vocab_size` ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub vocab_size: usize,
    pub tokens: Vec<usize>,
}

impl TokenSequence {
    pub fn new(vocab_size: usize, tokens: Vec<usize>) -> Result<Self> {
        let seq = TokenSequence { vocab_size, tokens };
        seq.check()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::field("vocab_size", "must be positive"));
        }
        if self.tokens.is_empty() {
            return Err(Error::field(
                "tokens",
                "sequence must hold at least one token",
            ));
        }
        if let Some((pos, tok)) = self
            .tokens
            .iter()
            .enumerate()
            .find(|(_, &t)| t >= self.vocab_size)
        {
            return Err(Error::field(
                "tokens",
                format!(
                    "token id {tok} at position {pos} is outside [0, {})",
                    self.vocab_size
                ),
            ));
        }
        Ok(())
    }
}

/// A token sequence keyed by the snippet it encodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub snippet_id: String,
    #[serde(flatten)]
    pub sequence: TokenSequence,
}

/// Per-token natural-log probabilities a model assigns to a snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbRecord {
    pub snippet_id: String,
    pub model_id: ModelId,
    pub token_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub snippet_id: String,
    pub extractor_id: ModelId,
    pub vector: Vec<f64>,
}

/// Ground-truth training-set membership of a snippet, for audits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipLabel {
    pub snippet_id: String,
    pub member: bool,
}

/// A line-delimited record type.
pub trait Record: Serialize + DeserializeOwned {
    const KIND: &'static str;

    fn snippet_id(&self) -> &str;

    fn validate(&self) -> Result<()>;
}

impl Record for CodeSnippet {
    const KIND: &'static str = "snippet";

    fn snippet_id(&self) -> &str {
        &self.snippet_id
    }

    fn validate(&self) -> Result<()> {
        if self.snippet_id.is_empty() {
            return Err(Error::field("snippet_id", "must be non-empty"));
        }
        if self.text.is_empty() {
            return Err(Error::field("text", "must be non-empty"));
        }
        Ok(())
    }
}

impl Record for SequenceRecord {
    const KIND: &'static str = "sequence";

    fn snippet_id(&self) -> &str {
        &self.snippet_id
    }

    fn validate(&self) -> Result<()> {
        self.sequence.check()
    }
}

impl Record for LogProbRecord {
    const KIND: &'static str = "logprob";

    fn snippet_id(&self) -> &str {
        &self.snippet_id
    }

    fn validate(&self) -> Result<()> {
        if self.token_logprobs.is_empty() {
            return Err(Error::field(
                "token_logprobs",
                "must hold at least one entry",
            ));
        }
        if let Some((i, v)) = self
            .token_logprobs
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v > 0.0)
        {
            return Err(Error::field(
                "token_logprobs",
                format!("entry {i} = {v} must be finite and <= 0"),
            ));
        }
        Ok(())
    }
}

impl Record for EmbeddingRecord {
    const KIND: &'static str = "embedding";

    fn snippet_id(&self) -> &str {
        &self.snippet_id
    }

    fn validate(&self) -> Result<()> {
        if self.vector.is_empty() {
            return Err(Error::field("vector", "must be non-empty"));
        }
        if let Some(i) = self.vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::field("vector", format!("entry {i} is not finite")));
        }
        Ok(())
    }
}

impl Record for MembershipLabel {
    const KIND: &'static str = "membership";

    fn snippet_id(&self) -> &str {
        &self.snippet_id
    }

    fn validate(&self) -> Result<()> {
        if self.snippet_id.is_empty() {
            return Err(Error::field("snippet_id", "must be non-empty"));
        }
        Ok(())
    }
}

fn at_line(err: Error, line: usize) -> Error {
    match err {
        Error::Validation { field, reason, .. } => Error::Validation {
            line: Some(line),
            field,
            reason,
        },
        other => other,
    }
}

/// Parses records from any buffered reader; lines are numbered from 1.
pub fn read_jsonl<R: Record>(reader: impl BufRead) -> Result<Vec<R>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: R = serde_json::from_str(&line).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => Error::Validation {
                line: Some(lineno),
                field: R::KIND.to_string(),
                reason: e.to_string(),
            },
            _ => Error::Parse {
                line: lineno,
                reason: e.to_string(),
            },
        })?;
        record.validate().map_err(|e| at_line(e, lineno))?;
        out.push(record);
    }
    Ok(out)
}

/// Loads a line-delimited record file, validating every record.
pub fn load_jsonl<R: Record>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_jsonl(BufReader::new(file))
}

pub fn write_jsonl<R: Record>(mut writer: impl Write, records: &[R]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)
            .map_err(|e| Error::Data(format!("serializing {} record: {e}", R::KIND)))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_jsonl<R: Record>(path: impl AsRef<Path>, records: &[R]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_jsonl(BufWriter::new(file), records)
}

/// Deterministic train/test partition of a set of ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub seed: u64,
}

/// Shuffles `ids` with `seed` and puts the first `round(ratio * len)` into train.
pub fn split_dataset(ids: &[String], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Argument(format!(
            "split ratio {ratio} outside (0, 1)"
        )));
    }
    if ids.is_empty() {
        return Err(Error::Argument("cannot split an empty id list".into()));
    }
    let mut seen = HashSet::with_capacity(ids.len());
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::Argument(format!("duplicate id `{dup}`")));
    }
    // Sort first so the split depends on the id set, not the caller's order.
    let mut shuffled: Vec<&String> = ids.iter().collect();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * ids.len() as f64).round() as usize;
    let (train, test) = shuffled.split_at(n_train);
    Ok(DatasetSplit {
        train_ids: train.iter().map(|s| s.to_string()).collect(),
        test_ids: test.iter().map(|s| s.to_string()).collect(),
        seed,
    })
}

/// How snippet origins become class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelTask {
    /// human = 0, any model = 1.
    HumanVsModel,
    /// One class per generator. `None` orders the classes by sorted model id.
    ByModel(Option<Vec<ModelId>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example<F> {
    pub features: F,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<F> {
    pub examples: Vec<Example<F>>,
    pub class_count: usize,
    /// Human-readable class names, indexed by label.
    pub class_names: Vec<String>,
}

impl<F> LabeledDataset<F> {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    /// Feature view with labels stripped, for scoring.
    pub fn features(&self) -> Vec<&F> {
        self.examples.iter().map(|e| &e.features).collect()
    }

    pub fn filter(&self, mut keep: impl FnMut(&Example<F>) -> bool) -> Self
    where
        F: Clone,
    {
        LabeledDataset {
            examples: self.examples.iter().filter(|e| keep(e)).cloned().collect(),
            class_count: self.class_count,
            class_names: self.class_names.clone(),
        }
    }
}

impl LabeledDataset<EmbeddingRecord> {
    pub fn dimension(&self) -> Option<usize> {
        self.examples.first().map(|e| e.features.vector.len())
    }
}

/// Attaches labels from snippet origins to feature records.
pub fn join<F: Record + Clone>(
    snippets: &[CodeSnippet],
    features: &[F],
    task: &LabelTask,
) -> Result<LabeledDataset<F>> {
    let mut by_id: BTreeMap<&str, &CodeSnippet> = BTreeMap::new();
    for s in snippets {
        if by_id.insert(s.snippet_id.as_str(), s).is_some() {
            return Err(Error::field(
                "snippet_id",
                format!("duplicate snippet id `{}`", s.snippet_id),
            ));
        }
    }
    let missing: Vec<String> = features
        .iter()
        .filter(|f| !by_id.contains_key(f.snippet_id()))
        .map(|f| f.snippet_id().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Join { missing });
    }

    let class_names: Vec<String> = match task {
        LabelTask::HumanVsModel => vec!["human".into(), "model".into()],
        LabelTask::ByModel(Some(order)) => order.iter().map(ToString::to_string).collect(),
        LabelTask::ByModel(None) => features
            .iter()
            .filter_map(|f| by_id[f.snippet_id()].origin.model().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|id| id.to_string())
            .collect(),
    };
    let class_index: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut examples = Vec::with_capacity(features.len());
    for f in features {
        let snippet = by_id[f.snippet_id()];
        let label = match (&snippet.origin, task) {
            (Origin::Unknown, _) => {
                return Err(Error::Data(format!(
                    "snippet `{}` has unknown origin and cannot be used for training",
                    snippet.snippet_id
                )))
            }
            (Origin::Human, LabelTask::HumanVsModel) => 0,
            (Origin::Model(_), LabelTask::HumanVsModel) => 1,
            (Origin::Human, LabelTask::ByModel(_)) => {
                return Err(Error::Data(format!(
                    "snippet `{}` is human-written; model attribution needs model origins",
                    snippet.snippet_id
                )))
            }
            (Origin::Model(id), LabelTask::ByModel(_)) => *class_index
                .get(id.as_str())
                .ok_or_else(|| Error::Data(format!("model `{id}` is not in the class registry")))?,
        };
        examples.push(Example {
            features: f.clone(),
            label,
        });
    }
    Ok(LabeledDataset {
        class_count: class_names.len(),
        examples,
        class_names,
    })
}

/// Drops examples so that every present class keeps the same count, chosen by seed.
pub fn balance_classes<F: Clone>(data: &LabeledDataset<F>, seed: u64) -> LabeledDataset<F> {
    let counts = data.class_counts();
    let target = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; data.len()];
    for class in 0..data.class_count {
        let mut idx: Vec<usize> = (0..data.len())
            .filter(|&i| data.examples[i].label == class)
            .collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(target) {
            keep[i] = true;
        }
    }
    LabeledDataset {
        examples: data
            .examples
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(e, _)| e.clone())
            .collect(),
        class_count: data.class_count,
        class_names: data.class_names.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn snippet(id: &str, origin: &str) -> CodeSnippet {
        CodeSnippet {
            snippet_id: id.into(),
            language: "python".into(),
            text: "def f(): pass".into(),
            origin: Origin::try_from(origin.to_string()).unwrap(),
            prompt_id: "p0".into(),
        }
    }

    fn embedding(id: &str) -> EmbeddingRecord {
        EmbeddingRecord {
            snippet_id: id.into(),
            extractor_id: ModelId::new("enc").unwrap(),
            vector: vec![0.0, 1.0],
        }
    }

    #[test]
    fn empty_input_loads_nothing() {
        let recs: Vec<CodeSnippet> = read_jsonl(Cursor::new("")).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn snippets_load_in_file_order() {
        let text = [
            r#"{"snippet_id":"a","language":"py","text":"x=1","origin":"human","prompt_id":"p"}"#,
            r#"{"snippet_id":"b","language":"py","text":"x=2","origin":"model:toy-A","prompt_id":"p"}"#,
            r#"{"snippet_id":"c","language":"py","text":"x=3","origin":"unknown","prompt_id":"q"}"#,
        ]
        .join("\n");
        let recs: Vec<CodeSnippet> = read_jsonl(Cursor::new(text)).unwrap();
        let ids: Vec<_> = recs.iter().map(|r| r.snippet_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(
            recs[1].origin,
            Origin::Model(ModelId::new("toy-A").unwrap())
        );
        assert_eq!(recs[2].origin, Origin::Unknown);
    }

    #[test]
    fn out_of_vocabulary_token_fails_at_its_line() {
        let text = concat!(
            r#"{"snippet_id":"a","vocab_size":4,"tokens":[0,1,3]}"#,
            "\n",
            r#"{"snippet_id":"b","vocab_size":4,"tokens":[0,4]}"#
        );
        let err = read_jsonl::<SequenceRecord>(Cursor::new(text)).unwrap_err();
        match err {
            Error::Validation { line, field, .. } => {
                assert_eq!(line, Some(2));
                assert_eq!(field, "tokens");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_parse_error() {
        let text = "{\"snippet_id\":\"a\",\n";
        match read_jsonl::<LogProbRecord>(Cursor::new(text)).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn positive_logprob_is_rejected() {
        let text = r#"{"snippet_id":"a","model_id":"m","token_logprobs":[-0.5,0.25]}"#;
        match read_jsonl::<LogProbRecord>(Cursor::new(text)).unwrap_err() {
            Error::Validation { field, .. } => assert_eq!(field, "token_logprobs"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_origin_and_model_id_are_validation_errors() {
        let text =
            r#"{"snippet_id":"a","language":"py","text":"x","origin":"robot","prompt_id":"p"}"#;
        assert!(matches!(
            read_jsonl::<CodeSnippet>(Cursor::new(text)),
            Err(Error::Validation { .. })
        ));
        assert!(ModelId::new("").is_err());
        assert!(ModelId::new("codegen 6b").is_err());
    }

    #[test]
    fn split_cardinalities() {
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let split = split_dataset(&ids, 0.8, 7).unwrap();
        assert_eq!(split.train_ids.len(), 8);
        assert_eq!(split.test_ids.len(), 2);
        assert!(split.train_ids.is_disjoint(&split.test_ids));
        assert_eq!(split, split_dataset(&ids, 0.8, 7).unwrap());

        let ids: Vec<String> = (0..974).map(|i| format!("s{i}")).collect();
        let split = split_dataset(&ids, 0.8, 1).unwrap();
        // round(0.8 * 974) = round(779.2)
        assert_eq!(split.train_ids.len(), 779);
        assert_eq!(split.test_ids.len(), 195);
    }

    #[test]
    fn split_rejects_bad_ratio() {
        let ids = vec!["a".to_string()];
        assert!(matches!(
            split_dataset(&ids, 0.0, 1),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            split_dataset(&ids, 1.0, 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn binary_join_labels() {
        let snippets = vec![
            snippet("h1", "human"),
            snippet("h2", "human"),
            snippet("m1", "model:toy-A"),
            snippet("m2", "model:toy-B"),
        ];
        let feats: Vec<_> = ["h1", "h2", "m1", "m2"]
            .iter()
            .map(|id| embedding(id))
            .collect();
        let data = join(&snippets, &feats, &LabelTask::HumanVsModel).unwrap();
        assert_eq!(data.labels(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn model_join_uses_sorted_ids() {
        let snippets = vec![
            snippet("c", "model:toy-C"),
            snippet("a", "model:toy-A"),
            snippet("b", "model:toy-B"),
        ];
        let feats: Vec<_> = ["a", "b", "c"].iter().map(|id| embedding(id)).collect();
        let data = join(&snippets, &feats, &LabelTask::ByModel(None)).unwrap();
        assert_eq!(data.labels(), vec![0, 1, 2]);
        assert_eq!(data.class_names, ["toy-A", "toy-B", "toy-C"]);

        let order = vec![
            ModelId::new("toy-C").unwrap(),
            ModelId::new("toy-B").unwrap(),
            ModelId::new("toy-A").unwrap(),
        ];
        let data = join(&snippets, &feats, &LabelTask::ByModel(Some(order))).unwrap();
        assert_eq!(data.labels(), vec![2, 1, 0]);
    }

    #[test]
    fn dangling_feature_is_a_join_error() {
        let snippets = vec![snippet("a", "human")];
        let feats = vec![embedding("a"), embedding("ghost")];
        match join(&snippets, &feats, &LabelTask::HumanVsModel).unwrap_err() {
            Error::Join { missing } => assert_eq!(missing, vec!["ghost".to_string()]),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_origin_is_rejected_by_training_join() {
        let snippets = vec![snippet("a", "unknown")];
        let feats = vec![embedding("a")];
        assert!(matches!(
            join(&snippets, &feats, &LabelTask::HumanVsModel),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn balancing_equalizes_counts() {
        let mut snippets: Vec<_> = (0..5).map(|i| snippet(&format!("h{i}"), "human")).collect();
        snippets.extend((0..3).map(|i| snippet(&format!("m{i}"), "model:x")));
        let feats: Vec<_> = snippets.iter().map(|s| embedding(&s.snippet_id)).collect();
        let data = join(&snippets, &feats, &LabelTask::HumanVsModel).unwrap();
        let balanced = balance_classes(&data, 3);
        assert_eq!(balanced.class_counts(), vec![3, 3]);
    }
}
