//! Pretrain a graph expert to name masked node kinds from structure alone.
//!
//! Run with: cargo run --example gnn_pretrain

use cgfuse::frontend::parse_source;
use cgfuse::gnn::{init_gnn_params, pretrain_nodes, GnnArch, GnnConfig};
use cgfuse::graph::build_code_graph;
use cgfuse::harness::generate_synthetic;
use cgfuse::tensor::{AdamConfig, Rng, Tensor};
use cgfuse::tokenizer::train_vocab;

fn main() {
    let corpus = generate_synthetic(300, 42);
    let graphs: Vec<_> = corpus
        .iter()
        .map(|ex| build_code_graph(&parse_source(&ex.code, false).unwrap()))
        .collect();
    let texts: Vec<String> = corpus.iter().map(|ex| ex.code.clone()).collect();
    let vocab = train_vocab(&texts, 300).unwrap();
    println!("{} graphs, {} vocabulary entries", graphs.len(), vocab.size());

    // The task: hide a node's kind embedding, let messages from neighbors
    // flow, and ask the head which of the node kinds was hidden. Structure
    // makes this learnable, for example only Expr nodes sit under a
    // Condition parent between parens.
    for arch in [GnnArch::Gin, GnnArch::Sage, GnnArch::Rgcn] {
        let cfg = GnnConfig { arch, layers: 1, hidden: 32, ..GnnConfig::default() };
        let mut store = init_gnn_params(&cfg, 9).unwrap();
        // Terminal nodes start from subword embeddings; in the full model
        // this table is the transformer's own, so pretraining expects it in
        // the store (frozen, not part of the gnn.* update set).
        let mut rng = Rng::seeded(9, "example.embed");
        store.insert(
            "plm.tok_embed",
            Tensor::randn(vec![vocab.size(), cfg.hidden], 0.05, &mut rng),
        );
        let report = pretrain_nodes(
            &graphs,
            &cfg,
            &vocab,
            &mut store,
            0.15,
            3,
            9,
            &AdamConfig::default(),
        )
        .unwrap();
        println!(
            "{arch:>4}: masked-kind accuracy {:.3} after {} epochs",
            report.final_masked_accuracy,
            report.epochs.len()
        );
    }
}
