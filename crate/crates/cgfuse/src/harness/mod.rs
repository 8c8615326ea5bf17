//! Dataset ingestion, synthetic corpus generation, and experiment
//! orchestration: baseline vs fused variants trained on the same data in the
//! same order, evaluated with teacher forcing on gold graphs and with free
//! decoding on causally rebuilt prefix graphs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::parse_source;
use crate::fusion::{FusedExample, FusionError};
use crate::gnn::GnnError;
use crate::graph::{align_terminals, build_code_graph, GraphError};
use crate::metrics::MetricsError;
use crate::plm::PlmError;
use crate::tensor::TensorError;
use crate::tokenizer::{encode, Vocab, VocabError};

mod experiment;
mod synth;

pub use experiment::{
    eval_checkpoint, run_experiment, train_single, CorpusSpec, ExperimentResult, ExperimentSpec,
    TrainSpec, VariantResult, VariantSpec,
};
pub use synth::generate_synthetic;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {what}")]
    Format { path: PathBuf, line: usize, what: String },
    #[error("invalid experiment spec: {0}")]
    Config(String),
    #[error("variant {variant}: {source}")]
    Variant { variant: String, source: Box<HarnessError> },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Plm(#[from] PlmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl HarnessError {
    fn in_variant(self, name: &str) -> HarnessError {
        HarnessError::Variant { variant: name.to_string(), source: Box::new(self) }
    }

    /// Process exit code: 1 for configuration problems the caller can fix, 2
    /// for unreadable or malformed data, 3 for internal invariant failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Fusion(FusionError::Config(_))
            | HarnessError::Gnn(GnnError::Config(_))
            | HarnessError::Plm(PlmError::Config(_)) => 1,
            HarnessError::Io { .. } | HarnessError::Format { .. } => 2,
            HarnessError::Vocab(_) | HarnessError::Graph(_) => 2,
            HarnessError::Gnn(GnnError::EmptyCorpus) => 2,
            HarnessError::Variant { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

/// One intent/target pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub nl: String,
    pub code: String,
}

/// Loads a line-delimited corpus where each line is a JSON record with `nl`
/// and `code` fields. Order-preserving; blank lines are allowed.
pub fn load_corpus(path: &Path) -> Result<Vec<Example>, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(line).map_err(|e| HarnessError::Format {
            path: path.to_path_buf(),
            line: i + 1,
            what: e.to_string(),
        })?;
        if ex.nl.is_empty() || ex.code.is_empty() {
            return Err(HarnessError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                what: "nl and code must both be nonempty".to_string(),
            });
        }
        out.push(ex);
    }
    Ok(out)
}

/// Writes a corpus in the format `load_corpus` reads.
pub fn save_corpus(path: &Path, examples: &[Example]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for ex in examples {
        text.push_str(&serde_json::to_string(ex).expect("two string fields always serialize"));
        text.push('\n');
    }
    std::fs::write(path, text)
        .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

/// Tokenizes every example and extracts its code graph. Entries whose code
/// fails strict parsing or terminal alignment keep `graph: None` and are
/// counted in the second return value; they still train and evaluate, just
/// without a graph signal.
pub fn prepare_examples(examples: &[Example], vocab: &Vocab) -> (Vec<FusedExample>, usize) {
    let mut out = Vec::with_capacity(examples.len());
    let mut skipped = 0;
    for (i, ex) in examples.iter().enumerate() {
        let pieces = encode(&ex.code, vocab, true);
        let code_ids: Vec<usize> = pieces.iter().map(|p| p.0).collect();
        let graph = parse_source(&ex.code, false).ok().and_then(|ast| {
            let g = build_code_graph(&ast);
            let origins: Vec<Option<usize>> = pieces.iter().map(|p| p.1).collect();
            align_terminals(&g, &origins).ok().map(|align| (g, align))
        });
        if graph.is_none() {
            skipped += 1;
        }
        out.push(FusedExample {
            id: format!("ex{i}"),
            nl_ids: encode(&ex.nl, vocab, false).into_iter().map(|p| p.0).collect(),
            code_ids,
            graph,
        });
    }
    (out, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Relation;
    use crate::tokenizer::train_vocab;
    use std::io::Write;

    #[test]
    fn corpus_round_trips_and_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let examples = vec![
            Example { nl: "first".into(), code: "int a ;".into() },
            Example { nl: "second".into(), code: "int b = a ;".into() },
        ];
        save_corpus(&path, &examples).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), examples);
    }

    #[test]
    fn empty_file_loads_as_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_corpus(&path).unwrap().is_empty());
    }

    #[test]
    fn malformed_lines_are_reported_with_their_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "{}", r#"{"nl": "ok", "code": "int a ;"}"#).unwrap();
        writeln!(f, "not json").unwrap();
        drop(f);
        match load_corpus(&path) {
            Err(HarnessError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
        let empty_field = dir.path().join("empty_field.jsonl");
        std::fs::write(&empty_field, r#"{"nl": "", "code": "int a ;"}"#).unwrap();
        match load_corpus(&empty_field) {
            Err(HarnessError::Format { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(matches!(
            load_corpus(Path::new("/nonexistent/corpus.jsonl")),
            Err(HarnessError::Io { .. })
        ));
    }

    #[test]
    fn preparation_counts_unparsable_entries_but_keeps_them() {
        let examples = vec![
            Example { nl: "good".into(), code: "int a = b ; return a ;".into() },
            Example { nl: "bad".into(), code: "int a = = ;".into() },
        ];
        let texts: Vec<String> =
            examples.iter().flat_map(|e| [e.nl.clone(), e.code.clone()]).collect();
        let vocab = train_vocab(&texts, 300).unwrap();
        let (prepared, skipped) = prepare_examples(&examples, &vocab);
        assert_eq!(prepared.len(), 2);
        assert_eq!(skipped, 1);
        assert!(prepared[0].graph.is_some());
        assert!(prepared[1].graph.is_none());
        assert!(!prepared[1].code_ids.is_empty(), "tokens survive for n-gram training");
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_parses() {
        let a = generate_synthetic(50, 3);
        let b = generate_synthetic(50, 3);
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(50, 4));
        for ex in &a {
            assert!(!ex.nl.is_empty() && !ex.code.is_empty());
            parse_source(&ex.code, false).unwrap_or_else(|e| panic!("{}: {e}", ex.code));
        }
    }

    #[test]
    fn most_synthetic_examples_carry_dataflow() {
        let corpus = generate_synthetic(1000, 9);
        let with_edges = corpus
            .iter()
            .filter(|ex| {
                let ast = parse_source(&ex.code, false).unwrap();
                build_code_graph(&ast).edges.iter().any(|e| e.rel != Relation::Parent)
            })
            .count();
        assert!(with_edges * 2 >= corpus.len(), "{with_edges} of {}", corpus.len());
    }

    #[test]
    fn exit_codes_separate_usage_data_and_internal_failures() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 1);
        let io = HarnessError::Io {
            path: "p".into(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "gone"),
        };
        assert_eq!(io.exit_code(), 2);
        assert_eq!(HarnessError::Tensor(TensorError::NotScalar(vec![2, 2])).exit_code(), 3);
        let wrapped = HarnessError::Config("x".into()).in_variant("gin1");
        assert_eq!(wrapped.exit_code(), 1);
        assert!(wrapped.to_string().contains("gin1"));
    }
}
