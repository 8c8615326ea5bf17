//! Command-line front end: graph extraction, tokenizer training, expert
//! pretraining, model training, evaluation, decoding, and full experiment
//! runs, all driven by one sectioned config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use cgfuse::frontend::parse_source;
use cgfuse::fusion::{fused_generate, FusionMode, FusionPlan};
use cgfuse::graph::{build_code_graph, serialize};
use cgfuse::gnn::{init_gnn_params, pretrain_nodes, GnnArch, GnnConfig};
use cgfuse::harness::{
    eval_checkpoint, load_corpus, run_experiment, train_single, ExperimentSpec, HarnessError,
};
use cgfuse::metrics::code_tokens;
use cgfuse::plm::{
    generate, init_plm_params, load_checkpoint, save_checkpoint, DecodeMode, HookSite,
};
use cgfuse::tensor::AdamConfig;
use cgfuse::tokenizer::{decode, encode, train_vocab, Vocab};

#[derive(Parser)]
#[command(name = "cgfuse", version, about = "Graph-fused code generation toolkit")]
struct Cli {
    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config file (sectioned plain text).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's out_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Code graph operations.
    Graph {
        #[command(subcommand)]
        cmd: GraphCmd,
    },
    /// Subword vocabulary operations.
    Tokenizer {
        #[command(subcommand)]
        cmd: TokenizerCmd,
    },
    /// Graph expert operations.
    Gnn {
        #[command(subcommand)]
        cmd: GnnCmd,
    },
    /// Train one variant from the config and checkpoint it.
    Train {
        /// Variant name; defaults to the first in the config.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Score an existing checkpoint on the config's test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Variant whose fusion settings to evaluate under.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Decode code from a natural-language intent.
    Generate(GenerateArgs),
    /// Experiment orchestration.
    Experiment {
        #[command(subcommand)]
        cmd: ExperimentCmd,
    },
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Parse a corpus and write one graph (or null) per line.
    Extract {
        /// Line-delimited nl/code corpus.
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum TokenizerCmd {
    /// Learn a subword vocabulary from a corpus.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        /// Maximum vocabulary size (at least 300).
        #[arg(long, default_value_t = 512)]
        size: usize,
    },
}

#[derive(Subcommand)]
enum GnnCmd {
    /// Pretrain the graph expert on masked node kinds and checkpoint it.
    Pretrain {
        /// Variant whose expert settings to use; defaults to the first
        /// fused variant.
        #[arg(long)]
        variant: Option<String>,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Train and evaluate every variant in the config.
    Run {
        /// Run variants on worker threads (same results, less wall clock).
        #[arg(long)]
        parallel: bool,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Vocabulary file written at training time.
    #[arg(long)]
    vocab: PathBuf,
    /// The intent to decode.
    #[arg(long)]
    nl: String,
    /// Fusion strength; 0 decodes with the plain model.
    #[arg(long, default_value_t = 0.0)]
    lambda: f32,
    #[arg(long, value_enum, default_value_t = ArchArg::Gin)]
    arch: ArchArg,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    max_steps: usize,
    /// Beam width; 1 is greedy.
    #[arg(long, default_value_t = 1)]
    beam: usize,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ArchArg {
    Rgcn,
    Sage,
    Gin,
}

impl From<ArchArg> for GnnArch {
    fn from(a: ArchArg) -> GnnArch {
        match a {
            ArchArg::Rgcn => GnnArch::Rgcn,
            ArchArg::Sage => GnnArch::Sage,
            ArchArg::Gin => GnnArch::Gin,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_spec(cli: &Cli) -> Result<ExperimentSpec, HarnessError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config("this command needs --config <path>".into()))?;
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(seed) = cli.seed {
        spec.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        spec.out_dir = out.clone();
    }
    Ok(spec)
}

fn out_dir(cli: &Cli) -> Result<PathBuf, HarnessError> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|source| HarnessError::Io { path: dir.clone(), source })?;
    Ok(dir)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match &cli.cmd {
        Cmd::Graph { cmd: GraphCmd::Extract { input } } => {
            let corpus = load_corpus(input)?;
            let mut lines = String::new();
            let mut skipped = 0usize;
            for ex in &corpus {
                match parse_source(&ex.code, false) {
                    Ok(ast) => {
                        let bytes = serialize(&build_code_graph(&ast));
                        lines.push_str(std::str::from_utf8(&bytes).expect("graphs are JSON"));
                    }
                    Err(_) => {
                        skipped += 1;
                        lines.push_str("null");
                    }
                }
                lines.push('\n');
            }
            // --out may name the output file itself or a directory to put
            // graphs.jsonl in.
            let path = match &cli.out {
                Some(p) if p.extension().is_some_and(|e| e == "jsonl") => p.clone(),
                _ => out_dir(&cli)?.join("graphs.jsonl"),
            };
            std::fs::write(&path, lines)
                .map_err(|source| HarnessError::Io { path: path.clone(), source })?;
            println!(
                "extracted {} graphs ({skipped} skipped) to {}",
                corpus.len() - skipped,
                path.display()
            );
            Ok(())
        }
        Cmd::Tokenizer { cmd: TokenizerCmd::Train { input, size } } => {
            if *size < 300 {
                return Err(HarnessError::Config(format!(
                    "--size {size} below the tokenizer minimum of 300"
                )));
            }
            let corpus = load_corpus(input)?;
            let texts: Vec<String> =
                corpus.iter().flat_map(|e| [e.nl.clone(), e.code.clone()]).collect();
            let vocab = train_vocab(&texts, *size)?;
            let dir = out_dir(&cli)?;
            let path = dir.join("vocab.txt");
            vocab.save(&path)?;
            println!("trained {} subwords to {}", vocab.size(), path.display());
            Ok(())
        }
        Cmd::Gnn { cmd: GnnCmd::Pretrain { variant } } => {
            let spec = load_spec(&cli)?;
            let v = match variant {
                Some(n) => spec
                    .variants
                    .iter()
                    .find(|v| &v.name == n)
                    .ok_or_else(|| HarnessError::Config(format!("no variant named {n:?}")))?,
                None => spec.variants.iter().find(|v| v.lambda.is_some()).ok_or_else(|| {
                    HarnessError::Config("config has no fused variant to pretrain".into())
                })?,
            };
            let corpus = synthesize_or_load(&spec)?;
            let texts: Vec<String> =
                corpus.iter().flat_map(|e| [e.nl.clone(), e.code.clone()]).collect();
            let vocab = train_vocab(&texts, spec.model.vocab)?;
            let graphs: Vec<_> = corpus
                .iter()
                .filter_map(|e| parse_source(&e.code, false).ok())
                .map(|ast| build_code_graph(&ast))
                .collect();
            let gnn = GnnConfig {
                arch: v.arch.unwrap_or(GnnArch::Gin),
                layers: v.layers.unwrap_or(1),
                hidden: spec.model.hidden,
                ..GnnConfig::default()
            };
            let model = cgfuse::plm::PlmConfig { vocab: vocab.size(), ..spec.model };
            let mut store = init_plm_params(&model, spec.train.seed)?;
            store.merge(init_gnn_params(&gnn, spec.train.seed)?);
            let report = pretrain_nodes(
                &graphs,
                &gnn,
                &vocab,
                &mut store,
                spec.train.mask_ratio,
                spec.train.pretrain_epochs,
                spec.train.seed,
                &AdamConfig { lr: spec.train.lr, ..AdamConfig::default() },
            )?;
            std::fs::create_dir_all(&spec.out_dir)
                .map_err(|source| HarnessError::Io { path: spec.out_dir.clone(), source })?;
            let path = spec.out_dir.join("gnn.ckpt");
            save_checkpoint(&path, &store, &model)?;
            vocab.save(&spec.out_dir.join("vocab.txt"))?;
            println!("{report}");
            println!("checkpoint written to {}", path.display());
            Ok(())
        }
        Cmd::Train { variant } => {
            let spec = load_spec(&cli)?;
            let result = train_single(&spec, variant.as_deref())?;
            println!("{}", result.train);
            if let Some(report) = &result.pretrain {
                println!("{report}");
            }
            println!(
                "teacher-forced: BLEU {:.4}  CodeBLEU {:.4}  EM {:.4}",
                result.gold.bleu, result.gold.codebleu, result.gold.em
            );
            println!(
                "free decoding:  BLEU {:.4}  CodeBLEU {:.4}  EM {:.4}",
                result.causal.bleu, result.causal.codebleu, result.causal.em
            );
            println!(
                "checkpoint written to {}",
                spec.out_dir.join(format!("{}.ckpt", result.name)).display()
            );
            Ok(())
        }
        Cmd::Eval { ckpt, variant } => {
            let spec = load_spec(&cli)?;
            let (gold, causal) = eval_checkpoint(&spec, ckpt, variant.as_deref())?;
            println!("teacher-forced, gold graph:\n{gold}");
            println!("free decoding, prefix graph:\n{causal}");
            Ok(())
        }
        Cmd::Generate(args) => {
            let (store, model) = load_checkpoint(&args.ckpt)?;
            let vocab = Vocab::load(&args.vocab)?;
            if vocab.size() != model.vocab {
                return Err(HarnessError::Config(format!(
                    "vocabulary has {} entries, checkpoint expects {}",
                    vocab.size(),
                    model.vocab
                )));
            }
            let nl_ids: Vec<usize> =
                encode(&args.nl, &vocab, false).into_iter().map(|p| p.0).collect();
            let mode = if args.beam <= 1 { DecodeMode::Greedy } else { DecodeMode::Beam(args.beam) };
            let ids = if args.lambda > 0.0 {
                if !store.contains("gnn.kind_embed") {
                    return Err(HarnessError::Config(
                        "checkpoint has no expert parameters; use --lambda 0 or a fused \
                         checkpoint"
                            .into(),
                    ));
                }
                let plan = FusionPlan {
                    lambda: args.lambda,
                    sites: vec![HookSite::DecoderLayerOut(model.dec_layers - 1)],
                    gnn: GnnConfig {
                        arch: args.arch.into(),
                        layers: args.layers,
                        hidden: model.hidden,
                        ..GnnConfig::default()
                    },
                    mode: FusionMode::CausalPrefix,
                    warmup_epochs: 0,
                    stride: 1,
                };
                fused_generate(&store, &model, &plan, &vocab, &nl_ids, mode, args.max_steps)?
            } else {
                generate(&store, &model, &nl_ids, mode, args.max_steps, None)?
            };
            let text = decode(&ids, &vocab);
            println!("{}", code_tokens(&text).join(" "));
            Ok(())
        }
        Cmd::Experiment { cmd: ExperimentCmd::Run { parallel } } => {
            let mut spec = load_spec(&cli)?;
            if *parallel {
                spec.parallel = true;
            }
            let result = run_experiment(&spec)?;
            print!("{}", result.table());
            if result.skipped_train_graphs + result.skipped_test_graphs > 0 {
                println!(
                    "graph extraction skipped {} train / {} test entries",
                    result.skipped_train_graphs, result.skipped_test_graphs
                );
            }
            println!("results written to {}", spec.out_dir.display());
            Ok(())
        }
    }
}

fn synthesize_or_load(spec: &ExperimentSpec) -> Result<Vec<cgfuse::harness::Example>, HarnessError> {
    match (&spec.corpus.train, spec.corpus.synthetic_train) {
        (Some(path), _) => load_corpus(path),
        (None, Some(n)) => Ok(cgfuse::harness::generate_synthetic(n, spec.train.seed)),
        (None, None) => Err(HarnessError::Config("config has no training corpus".into())),
    }
}
