//! Experiment orchestration: one spec describes the corpus, the transformer,
//! the training loop, and a list of variants (one plain baseline plus fused
//! configurations). Every variant sees the same data in the same order with
//! the same seeds, so rows are directly comparable and a lambda = 0 variant
//! reproduces the baseline row exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fusion::{
    fused_generate, fused_train, teacher_forced_predict, FusedExample, FusedTrainStats,
    FusionMode, FusionPlan,
};
use crate::gnn::{init_gnn_params, pretrain_nodes, GnnArch, GnnConfig, PretrainReport};
use crate::graph::CodeGraph;
use crate::metrics::{evaluate, EvalReport};
use crate::plm::{generate, init_plm_params, save_checkpoint, DecodeMode, HookSite, PlmConfig};
use crate::tensor::AdamConfig;
use crate::tokenizer::{decode, train_vocab, Vocab};

use super::{
    generate_synthetic, load_corpus, prepare_examples, Example, HarnessError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Line-delimited nl/code records for training.
    #[serde(default)]
    pub train: Option<PathBuf>,
    /// Held-out records for evaluation.
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Alternative to files: sizes of a generated corpus, drawn from one
    /// pool so the splits are disjoint.
    #[serde(default)]
    pub synthetic_train: Option<usize>,
    #[serde(default)]
    pub synthetic_test: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    /// Joint-phase epochs; warmup comes from each variant.
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_mask_ratio")]
    pub mask_ratio: f32,
}

fn default_pretrain_epochs() -> usize {
    3
}

fn default_mask_ratio() -> f32 {
    0.15
}

/// One table row to train. A missing `lambda` marks the plain baseline; the
/// remaining fields only apply to fused variants and default to a 1-layer
/// GIN at the last decoder layer with two warmup epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    #[serde(default)]
    pub lambda: Option<f32>,
    #[serde(default)]
    pub arch: Option<GnnArch>,
    #[serde(default)]
    pub layers: Option<usize>,
    /// Decoder layer indices receiving the graph signal.
    #[serde(default)]
    pub sites: Option<Vec<usize>>,
    #[serde(default)]
    pub warmup_epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub out_dir: PathBuf,
    /// Run independent variants on worker threads. Results are identical to
    /// a sequential run; only wall-clock time changes.
    #[serde(default)]
    pub parallel: bool,
    pub corpus: CorpusSpec,
    pub model: PlmConfig,
    pub train: TrainSpec,
    pub variants: Vec<VariantSpec>,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
        let spec: ExperimentSpec = toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.variants.is_empty() {
            return bad("no variants".into());
        }
        let baselines = self.variants.iter().filter(|v| v.lambda.is_none()).count();
        if baselines != 1 {
            return bad(format!("exactly one baseline (no lambda) required, found {baselines}"));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if v.name.is_empty() {
                return bad(format!("variant {i} has an empty name"));
            }
            if self.variants[..i].iter().any(|w| w.name == v.name) {
                return bad(format!("duplicate variant name {:?}", v.name));
            }
            if let Some(l) = v.lambda {
                if !l.is_finite() || l < 0.0 {
                    return bad(format!("variant {:?}: lambda {l} not in [0, inf)", v.name));
                }
            }
        }
        let c = &self.corpus;
        let files = c.train.is_some() || c.test.is_some();
        let synth = c.synthetic_train.is_some() || c.synthetic_test.is_some();
        match (files, synth) {
            (true, false) if c.train.is_some() && c.test.is_some() => {}
            (false, true)
                if c.synthetic_train.is_some_and(|n| n >= 1)
                    && c.synthetic_test.is_some_and(|n| n >= 1) => {}
            _ => {
                return bad(
                    "corpus needs either train+test files or synthetic_train+synthetic_test \
                     counts of at least 1"
                        .into(),
                )
            }
        }
        self.model.validate().map_err(HarnessError::Plm)?;
        if self.model.vocab < 300 {
            return bad(format!("model.vocab {} below the tokenizer minimum of 300", self.model.vocab));
        }
        if self.train.batch == 0 {
            return bad("train.batch must be at least 1".into());
        }
        if !self.train.lr.is_finite() || self.train.lr <= 0.0 {
            return bad(format!("train.lr {} not in (0, inf)", self.train.lr));
        }
        for v in &self.variants {
            plan_for(v, &self.model)
                .validate(&self.model)
                .map_err(|e| HarnessError::Fusion(e).in_variant(&v.name))?;
        }
        Ok(())
    }
}

/// Concrete fusion settings for one variant. The baseline maps to lambda 0
/// with no sites and no warmup, which trains and decodes as the plain model.
fn plan_for(v: &VariantSpec, model: &PlmConfig) -> FusionPlan {
    let gnn = GnnConfig {
        arch: v.arch.unwrap_or(GnnArch::Gin),
        layers: v.layers.unwrap_or(1),
        hidden: model.hidden,
        ..GnnConfig::default()
    };
    let sites = match (&v.lambda, &v.sites) {
        (None, _) => Vec::new(),
        (Some(_), Some(ix)) => ix.iter().map(|&i| HookSite::DecoderLayerOut(i)).collect(),
        (Some(_), None) => vec![HookSite::DecoderLayerOut(model.dec_layers.saturating_sub(1))],
    };
    FusionPlan {
        lambda: v.lambda.unwrap_or(0.0),
        sites,
        gnn,
        mode: FusionMode::GoldFullGraph,
        warmup_epochs: match v.lambda {
            None => 0,
            Some(_) => v.warmup_epochs.unwrap_or(2),
        },
        stride: 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub lambda: Option<f32>,
    pub arch: Option<GnnArch>,
    pub layers: Option<usize>,
    pub pretrain: Option<PretrainReport>,
    pub train: FusedTrainStats,
    /// Teacher-forced scoring with the full target graph fused.
    pub gold: EvalReport,
    /// Free greedy decoding with graphs rebuilt from each partial hypothesis.
    pub causal: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub skipped_train_graphs: usize,
    pub skipped_test_graphs: usize,
    pub rows: Vec<VariantResult>,
}

impl ExperimentResult {
    /// Aligned table, one row per variant. Fusion columns only appear when a
    /// fused variant is present.
    pub fn table(&self) -> String {
        let fused = self.rows.iter().any(|r| r.lambda.is_some());
        let mut out = String::new();
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
        write!(out, "{:<name_w$}", "variant").unwrap();
        if fused {
            write!(out, " {:>7} {:>5} {:>6}", "lambda", "arch", "layers").unwrap();
        }
        for col in ["tf-bleu", "tf-cbleu", "tf-em", "fd-bleu", "fd-cbleu", "fd-em"] {
            write!(out, " {col:>9}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{:<name_w$}", r.name).unwrap();
            if fused {
                match r.lambda {
                    Some(l) => write!(out, " {l:>7.2}").unwrap(),
                    None => write!(out, " {:>7}", "-").unwrap(),
                }
                match r.arch {
                    Some(a) => write!(out, " {a:>5}").unwrap(),
                    None => write!(out, " {:>5}", "-").unwrap(),
                }
                match r.layers {
                    Some(l) => write!(out, " {l:>6}").unwrap(),
                    None => write!(out, " {:>6}", "-").unwrap(),
                }
            }
            for v in [
                r.gold.bleu,
                r.gold.codebleu,
                r.gold.em,
                r.causal.bleu,
                r.causal.codebleu,
                r.causal.em,
            ] {
                write!(out, " {v:>9.4}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn load_corpora(spec: &ExperimentSpec) -> Result<(Vec<Example>, Vec<Example>), HarnessError> {
    let c = &spec.corpus;
    match (&c.train, &c.test, c.synthetic_train, c.synthetic_test) {
        (Some(tr), Some(te), _, _) => Ok((load_corpus(tr)?, load_corpus(te)?)),
        (_, _, Some(n), Some(m)) => {
            let mut pool = generate_synthetic(n + m, spec.train.seed);
            let test = pool.split_off(n);
            Ok((pool, test))
        }
        _ => unreachable!("validate() enforces the corpus shape"),
    }
}

struct Prepared<'a> {
    model: PlmConfig,
    vocab: &'a Vocab,
    train: &'a [FusedExample],
    train_graphs: &'a [CodeGraph],
    test: &'a [FusedExample],
    refs: &'a [String],
}

struct PreparedOwned {
    model: PlmConfig,
    vocab: Vocab,
    train: Vec<FusedExample>,
    train_graphs: Vec<CodeGraph>,
    test: Vec<FusedExample>,
    refs: Vec<String>,
    skipped_train_graphs: usize,
    skipped_test_graphs: usize,
}

impl PreparedOwned {
    fn view(&self) -> Prepared<'_> {
        Prepared {
            model: self.model,
            vocab: &self.vocab,
            train: &self.train,
            train_graphs: &self.train_graphs,
            test: &self.test,
            refs: &self.refs,
        }
    }
}

/// Loads the corpora, trains the tokenizer on the training split, and
/// extracts graphs; shared by full experiments and single-variant runs.
fn prepare(spec: &ExperimentSpec) -> Result<PreparedOwned, HarnessError> {
    let (train_ex, test_ex) = load_corpora(spec)?;
    if train_ex.is_empty() || test_ex.is_empty() {
        return Err(HarnessError::Config("empty corpus split".into()));
    }
    let texts: Vec<String> =
        train_ex.iter().flat_map(|e| [e.nl.clone(), e.code.clone()]).collect();
    let vocab = train_vocab(&texts, spec.model.vocab)?;
    let model = PlmConfig { vocab: vocab.size(), ..spec.model };
    let (train, skipped_train_graphs) = prepare_examples(&train_ex, &vocab);
    let (test, skipped_test_graphs) = prepare_examples(&test_ex, &vocab);
    for ex in train.iter().chain(&test) {
        if ex.nl_ids.len() > model.max_len || ex.code_ids.len() + 1 > model.max_len {
            return Err(HarnessError::Config(format!(
                "example {} exceeds max_len {}; raise model.max_len",
                ex.id, model.max_len
            )));
        }
    }
    let train_graphs =
        train.iter().filter_map(|e| e.graph.as_ref().map(|(g, _)| g.clone())).collect();
    let refs = test_ex.iter().map(|e| e.code.clone()).collect();
    Ok(PreparedOwned {
        model,
        vocab,
        train,
        train_graphs,
        test,
        refs,
        skipped_train_graphs,
        skipped_test_graphs,
    })
}

fn run_variant(
    v: &VariantSpec,
    spec: &ExperimentSpec,
    p: &Prepared<'_>,
    out_dir: &Path,
) -> Result<VariantResult, HarnessError> {
    let seed = spec.train.seed;
    let opt = AdamConfig { lr: spec.train.lr, ..AdamConfig::default() };
    let plan = plan_for(v, &p.model);
    let mut store = init_plm_params(&p.model, seed)?;
    let pretrain = if v.lambda.is_some() {
        store.merge(init_gnn_params(&plan.gnn, seed)?);
        Some(pretrain_nodes(
            p.train_graphs,
            &plan.gnn,
            p.vocab,
            &mut store,
            spec.train.mask_ratio,
            spec.train.pretrain_epochs,
            seed,
            &opt,
        )?)
    } else {
        None
    };
    let train = fused_train(
        p.train,
        &mut store,
        &p.model,
        &plan,
        p.vocab,
        spec.train.epochs,
        seed,
        &opt,
        spec.train.batch,
    )?;

    let gold_plan = v.lambda.is_some().then(|| plan.clone());
    let mut gold_hyps = Vec::with_capacity(p.test.len());
    for ex in p.test {
        let ids = teacher_forced_predict(&store, &p.model, gold_plan.as_ref(), p.vocab, ex)?;
        gold_hyps.push(decode(&ids, p.vocab));
    }
    let gold = evaluate(&gold_hyps, p.refs)?;

    let max_steps = p.model.max_len - 1;
    let causal_plan = FusionPlan { mode: FusionMode::CausalPrefix, ..plan };
    let mut causal_hyps = Vec::with_capacity(p.test.len());
    for ex in p.test {
        let ids = if v.lambda.is_some() {
            fused_generate(
                &store,
                &p.model,
                &causal_plan,
                p.vocab,
                &ex.nl_ids,
                DecodeMode::Greedy,
                max_steps,
            )?
        } else {
            generate(&store, &p.model, &ex.nl_ids, DecodeMode::Greedy, max_steps, None)?
        };
        causal_hyps.push(decode(&ids, p.vocab));
    }
    let causal = evaluate(&causal_hyps, p.refs)?;

    save_checkpoint(&out_dir.join(format!("{}.ckpt", v.name)), &store, &p.model)?;
    Ok(VariantResult {
        name: v.name.clone(),
        lambda: v.lambda,
        arch: v.lambda.is_some().then(|| plan_for(v, &p.model).gnn.arch),
        layers: v.lambda.is_some().then(|| plan_for(v, &p.model).gnn.layers),
        pretrain,
        train,
        gold,
        causal,
    })
}

/// Trains and evaluates every variant, writes `results.json`, `results.txt`,
/// `vocab.txt`, and one checkpoint per variant under the spec's output
/// directory, and returns the collected rows. Reruns of the same spec
/// produce byte-identical outputs.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, HarnessError> {
    spec.validate()?;
    let owned = prepare(spec)?;
    std::fs::create_dir_all(&spec.out_dir)
        .map_err(|source| HarnessError::Io { path: spec.out_dir.clone(), source })?;
    owned.vocab.save(&spec.out_dir.join("vocab.txt"))?;

    let prepared = owned.view();
    let rows: Vec<VariantResult> = if spec.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = spec
                .variants
                .iter()
                .map(|v| scope.spawn(|| run_variant(v, spec, &prepared, &spec.out_dir)))
                .collect();
            handles
                .into_iter()
                .zip(&spec.variants)
                .map(|(h, v)| h.join().expect("variant worker").map_err(|e| e.in_variant(&v.name)))
                .collect::<Result<_, _>>()
        })?
    } else {
        spec.variants
            .iter()
            .map(|v| run_variant(v, spec, &prepared, &spec.out_dir).map_err(|e| e.in_variant(&v.name)))
            .collect::<Result<_, _>>()?
    };

    let result = ExperimentResult {
        skipped_train_graphs: owned.skipped_train_graphs,
        skipped_test_graphs: owned.skipped_test_graphs,
        rows,
    };
    let json =
        serde_json::to_string_pretty(&result).expect("result types serialize infallibly");
    let json_path = spec.out_dir.join("results.json");
    std::fs::write(&json_path, json)
        .map_err(|source| HarnessError::Io { path: json_path, source })?;
    let txt_path = spec.out_dir.join("results.txt");
    std::fs::write(&txt_path, result.table())
        .map_err(|source| HarnessError::Io { path: txt_path, source })?;
    Ok(result)
}

fn find_variant<'a>(
    spec: &'a ExperimentSpec,
    name: Option<&str>,
) -> Result<&'a VariantSpec, HarnessError> {
    match name {
        None => Ok(&spec.variants[0]),
        Some(n) => spec.variants.iter().find(|v| v.name == n).ok_or_else(|| {
            HarnessError::Config(format!(
                "no variant named {n:?}; spec has {:?}",
                spec.variants.iter().map(|v| v.name.as_str()).collect::<Vec<_>>()
            ))
        }),
    }
}

/// Trains a single variant from the spec (default: the first) and writes its
/// checkpoint under the spec's output directory.
pub fn train_single(
    spec: &ExperimentSpec,
    variant: Option<&str>,
) -> Result<VariantResult, HarnessError> {
    spec.validate()?;
    let v = find_variant(spec, variant)?;
    let owned = prepare(spec)?;
    std::fs::create_dir_all(&spec.out_dir)
        .map_err(|source| HarnessError::Io { path: spec.out_dir.clone(), source })?;
    owned.vocab.save(&spec.out_dir.join("vocab.txt"))?;
    run_variant(v, spec, &owned.view(), &spec.out_dir).map_err(|e| e.in_variant(&v.name))
}

/// Scores an existing checkpoint on the spec's test split under the named
/// variant's fusion settings (default: the baseline's, i.e. no fusion).
/// Returns the teacher-forced and free-decoding reports.
pub fn eval_checkpoint(
    spec: &ExperimentSpec,
    ckpt: &Path,
    variant: Option<&str>,
) -> Result<(EvalReport, EvalReport), HarnessError> {
    spec.validate()?;
    let v = find_variant(spec, variant)?;
    let owned = prepare(spec)?;
    let (store, model) = crate::plm::load_checkpoint(ckpt)?;
    if model != owned.model {
        return Err(HarnessError::Config(format!(
            "checkpoint model {model:?} does not match the spec's {:?}",
            owned.model
        )));
    }
    let plan = plan_for(v, &model);
    if plan.lambda > 0.0 && !store.contains("gnn.kind_embed") {
        return Err(HarnessError::Config(
            "checkpoint has no expert parameters; train a fused variant first".into(),
        ));
    }
    let gold_plan = v.lambda.is_some().then(|| plan.clone());
    let mut gold_hyps = Vec::with_capacity(owned.test.len());
    for ex in &owned.test {
        let ids = teacher_forced_predict(&store, &model, gold_plan.as_ref(), &owned.vocab, ex)?;
        gold_hyps.push(decode(&ids, &owned.vocab));
    }
    let gold = evaluate(&gold_hyps, &owned.refs)?;

    let max_steps = model.max_len - 1;
    let causal_plan = FusionPlan { mode: FusionMode::CausalPrefix, ..plan };
    let mut causal_hyps = Vec::with_capacity(owned.test.len());
    for ex in &owned.test {
        let ids = if v.lambda.is_some() {
            fused_generate(
                &store,
                &model,
                &causal_plan,
                &owned.vocab,
                &ex.nl_ids,
                DecodeMode::Greedy,
                max_steps,
            )?
        } else {
            generate(&store, &model, &ex.nl_ids, DecodeMode::Greedy, max_steps, None)?
        };
        causal_hyps.push(decode(&ids, &owned.vocab));
    }
    let causal = evaluate(&causal_hyps, &owned.refs)?;
    Ok((gold, causal))
}
