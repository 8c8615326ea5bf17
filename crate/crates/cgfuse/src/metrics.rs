//! Evaluation metrics for generated code: exact match, corpus BLEU, and a
//! four-component CodeBLEU (plain n-grams, keyword-weighted n-grams, AST
//! shape match, dataflow edge match), each averaged with equal weight.
//!
//! BLEU is corpus-level with clipped counts and a brevity penalty. When any
//! n-gram order has zero matches over the corpus, every order above 1 gets
//! add-one smoothing; order 1 is never smoothed, so an empty overlap still
//! scores 0.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{parse_source, tokenize, Ast, KEYWORDS};
use crate::graph::{dataflow_edges, Relation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{hyps} hypotheses against {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
}

const MAX_N: usize = 4;
const KEYWORD_WEIGHT: f64 = 5.0;

fn check_lengths<A, B>(hyps: &[A], refs: &[B]) -> Result<(), MetricsError> {
    if hyps.len() == refs.len() {
        Ok(())
    } else {
        Err(MetricsError::LengthMismatch { hyps: hyps.len(), refs: refs.len() })
    }
}

/// Code tokens of `text`; falls back to whitespace splitting when the text
/// does not lex.
pub fn code_tokens(text: &str) -> Vec<String> {
    match tokenize(text) {
        Ok(toks) => toks.into_iter().map(|t| t.text).collect(),
        Err(_) => text.split_whitespace().map(str::to_string).collect(),
    }
}

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Percentage of hypotheses equal to their reference after whitespace
/// normalization.
pub fn exact_match(hyps: &[String], refs: &[String]) -> Result<f64, MetricsError> {
    check_lengths(hyps, refs)?;
    if hyps.is_empty() {
        return Ok(0.0);
    }
    let hits = hyps
        .iter()
        .zip(refs)
        .filter(|(h, r)| normalize_ws(h) == normalize_ws(r))
        .count();
    Ok(100.0 * hits as f64 / hyps.len() as f64)
}

/// Clipped matches and hypothesis totals for one order, both weighted.
fn ngram_stats(
    hyp: &[String],
    rf: &[String],
    n: usize,
    weight: &dyn Fn(&[String]) -> f64,
) -> (f64, f64) {
    if hyp.len() < n {
        return (0.0, 0.0);
    }
    let mut ref_counts: BTreeMap<&[String], usize> = BTreeMap::new();
    if rf.len() >= n {
        for w in rf.windows(n) {
            *ref_counts.entry(w).or_default() += 1;
        }
    }
    let mut hyp_counts: BTreeMap<&[String], usize> = BTreeMap::new();
    for w in hyp.windows(n) {
        *hyp_counts.entry(w).or_default() += 1;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (gram, &count) in &hyp_counts {
        let w = weight(gram);
        den += w * count as f64;
        let clipped = count.min(ref_counts.get(gram).copied().unwrap_or(0));
        num += w * clipped as f64;
    }
    (num, den)
}

fn bleu_core(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
    weight: &dyn Fn(&[String]) -> f64,
) -> f64 {
    let mut num = [0.0f64; MAX_N];
    let mut den = [0.0f64; MAX_N];
    let (mut c, mut r) = (0usize, 0usize);
    for (hyp, rf) in hyps.iter().zip(refs) {
        c += hyp.len();
        r += rf.len();
        for (i, (nn, dd)) in num.iter_mut().zip(&mut den).enumerate() {
            let (a, b) = ngram_stats(hyp, rf, i + 1, weight);
            *nn += a;
            *dd += b;
        }
    }
    if c == 0 || num[0] == 0.0 {
        return 0.0;
    }
    let smooth = num.iter().any(|&x| x == 0.0);
    let mut log_sum = (num[0] / den[0]).ln();
    for i in 1..MAX_N {
        let p = if smooth { (num[i] + 1.0) / (den[i] + 1.0) } else { num[i] / den[i] };
        log_sum += p.ln();
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * (log_sum / MAX_N as f64).exp()
}

/// Corpus BLEU over code tokens, max order 4.
pub fn bleu(hyps: &[String], refs: &[String]) -> Result<f64, MetricsError> {
    check_lengths(hyps, refs)?;
    let h: Vec<Vec<String>> = hyps.iter().map(|s| code_tokens(s)).collect();
    let r: Vec<Vec<String>> = refs.iter().map(|s| code_tokens(s)).collect();
    Ok(bleu_core(&h, &r, &|_| 1.0))
}

fn keyword_weight(gram: &[String]) -> f64 {
    if gram.iter().any(|t| KEYWORDS.contains(&t.as_str())) {
        KEYWORD_WEIGHT
    } else {
        1.0
    }
}

/// Serialized kind-labeled shape of the subtree at `node`, truncated to
/// `depth` levels.
fn shape(ast: &Ast, node: usize, depth: usize) -> String {
    let n = &ast.nodes[node];
    if depth <= 1 || n.children.is_empty() {
        return n.kind.as_str().to_string();
    }
    let inner: Vec<String> = n.children.iter().map(|&c| shape(ast, c, depth - 1)).collect();
    format!("{}({})", n.kind.as_str(), inner.join(" "))
}

/// Multiset of every node's shape at truncation depths 1 through 3.
fn shape_counts(ast: &Ast) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for id in 0..ast.nodes.len() {
        for depth in 1..=3 {
            *out.entry(shape(ast, id, depth)).or_default() += 1;
        }
    }
    out
}

fn multiset_overlap(
    hyp: &BTreeMap<String, usize>,
    rf: &BTreeMap<String, usize>,
) -> (usize, usize) {
    let total: usize = rf.values().sum();
    let mut matched = 0;
    for (key, &rc) in rf {
        matched += rc.min(hyp.get(key).copied().unwrap_or(0));
    }
    (matched, total)
}

/// Dataflow edges keyed by (source name, destination name, relation).
fn edge_names(ast: &Ast) -> BTreeMap<(String, String, Relation), usize> {
    let mut out = BTreeMap::new();
    let text = |id: usize| {
        ast.nodes[id].token.as_ref().expect("dataflow endpoints are terminals").text.clone()
    };
    for e in dataflow_edges(ast).edges {
        *out.entry((text(e.src), text(e.dst), e.rel)).or_default() += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleu {
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub syntax: f64,
    pub dataflow: f64,
}

impl CodeBleu {
    pub fn score(&self) -> f64 {
        0.25 * (self.ngram + self.weighted_ngram + self.syntax + self.dataflow)
    }
}

/// Four-component CodeBLEU. Syntax and dataflow components pool matched and
/// reference counts across the corpus; a hypothesis that fails to lex simply
/// contributes no matches. References with no dataflow edges at all score 100
/// on that component by convention.
pub fn codebleu(hyps: &[String], refs: &[String]) -> Result<CodeBleu, MetricsError> {
    check_lengths(hyps, refs)?;
    let h: Vec<Vec<String>> = hyps.iter().map(|s| code_tokens(s)).collect();
    let r: Vec<Vec<String>> = refs.iter().map(|s| code_tokens(s)).collect();
    let ngram = bleu_core(&h, &r, &|_| 1.0);
    let weighted_ngram = bleu_core(&h, &r, &keyword_weight);

    let (mut syn_match, mut syn_total) = (0usize, 0usize);
    let (mut df_match, mut df_total) = (0usize, 0usize);
    for (hyp, rf) in hyps.iter().zip(refs) {
        let is = per_example_structure(hyp, rf);
        syn_match += is.syn.0;
        syn_total += is.syn.1;
        df_match += is.df.0;
        df_total += is.df.1;
    }
    let ratio = |m: usize, t: usize| if t == 0 { 100.0 } else { 100.0 * m as f64 / t as f64 };
    Ok(CodeBleu {
        ngram,
        weighted_ngram,
        syntax: ratio(syn_match, syn_total),
        dataflow: ratio(df_match, df_total),
    })
}

struct StructureOverlap {
    syn: (usize, usize),
    df: (usize, usize),
}

fn per_example_structure(hyp: &str, rf: &str) -> StructureOverlap {
    let ref_ast = parse_source(rf, true).ok();
    let hyp_ast = parse_source(hyp, true).ok();
    let syn = match (&hyp_ast, &ref_ast) {
        (_, None) => (0, 0),
        (None, Some(r)) => (0, shape_counts(r).values().sum()),
        (Some(h), Some(r)) => multiset_overlap(&shape_counts(h), &shape_counts(r)),
    };
    let df = match (&hyp_ast, &ref_ast) {
        (_, None) => (0, 0),
        (None, Some(r)) => (0, edge_names(r).values().sum()),
        (Some(h), Some(r)) => {
            let (he, re) = (edge_names(h), edge_names(r));
            let total = re.values().sum();
            let mut matched = 0;
            for (key, &rc) in &re {
                matched += rc.min(he.get(key).copied().unwrap_or(0));
            }
            (matched, total)
        }
    };
    StructureOverlap { syn, df }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub index: usize,
    pub em: bool,
    /// Single-pair BLEU under the corpus formula.
    pub bleu: f64,
    pub syntax: f64,
    pub dataflow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub codebleu: f64,
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub syntax: f64,
    pub dataflow: f64,
    pub em: f64,
    pub examples: Vec<ExampleScore>,
}

/// All metrics over one hypothesis/reference corpus.
pub fn evaluate(hyps: &[String], refs: &[String]) -> Result<EvalReport, MetricsError> {
    check_lengths(hyps, refs)?;
    let parts = codebleu(hyps, refs)?;
    let em = exact_match(hyps, refs)?;
    let corpus_bleu = bleu(hyps, refs)?;
    let ratio = |m: usize, t: usize| if t == 0 { 100.0 } else { 100.0 * m as f64 / t as f64 };
    let examples = hyps
        .iter()
        .zip(refs)
        .enumerate()
        .map(|(index, (h, r))| {
            let s = per_example_structure(h, r);
            ExampleScore {
                index,
                em: normalize_ws(h) == normalize_ws(r),
                bleu: bleu(std::slice::from_ref(h), std::slice::from_ref(r)).unwrap(),
                syntax: ratio(s.syn.0, s.syn.1),
                dataflow: ratio(s.df.0, s.df.1),
            }
        })
        .collect();
    Ok(EvalReport {
        bleu: corpus_bleu,
        codebleu: parts.score(),
        ngram: parts.ngram,
        weighted_ngram: parts.weighted_ngram,
        syntax: parts.syntax,
        dataflow: parts.dataflow,
        em,
        examples,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>10} {:>10}", "BLEU", "CodeBLEU", "EM")?;
        writeln!(f, "{:<10.4} {:>10.4} {:>10.4}", self.bleu, self.codebleu, self.em)?;
        writeln!(
            f,
            "  ngram {:.4}  weighted {:.4}  syntax {:.4}  dataflow {:.4}",
            self.ngram, self.weighted_ngram, self.syntax, self.dataflow
        )?;
        write!(f, "  examples: {}", self.examples.len())
    }
}
