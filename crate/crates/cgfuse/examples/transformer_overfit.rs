//! Overfit the toy encoder-decoder on four pairs, then decode them back.
//!
//! Run with: cargo run --example transformer_overfit

use cgfuse::fusion::{fused_train, FusedExample, FusionPlan};
use cgfuse::gnn::GnnConfig;
use cgfuse::plm::{generate, init_plm_params, DecodeMode, PlmConfig};
use cgfuse::tensor::AdamConfig;
use cgfuse::tokenizer::{decode, encode, train_vocab};

fn main() {
    let pairs = [
        ("get the count value", "int result = countValue ; return result ;"),
        ("get the size limit", "int result = sizeLimit ; return result ;"),
        ("get the width offset", "int result = widthOffset ; return result ;"),
        ("get the depth index", "int result = depthIndex ; return result ;"),
    ];

    let texts: Vec<String> =
        pairs.iter().flat_map(|(nl, code)| [nl.to_string(), code.to_string()]).collect();
    let vocab = train_vocab(&texts, 300).unwrap();

    let cfg = PlmConfig {
        enc_layers: 1,
        dec_layers: 1,
        hidden: 32,
        heads: 2,
        ffn: 64,
        max_len: 64,
        vocab: vocab.size(),
        dropout: 0.0,
    };
    // A plan with lambda 0 and no hook sites trains the transformer alone;
    // examples without graphs never touch the graph path anyway.
    let plan = FusionPlan {
        lambda: 0.0,
        sites: vec![],
        warmup_epochs: 0,
        ..FusionPlan::new(GnnConfig { hidden: cfg.hidden, ..GnnConfig::default() }, &cfg)
    };

    let ids_of = |text: &str| -> Vec<usize> {
        encode(text, &vocab, false).into_iter().map(|p| p.0).collect()
    };
    let examples: Vec<FusedExample> = pairs
        .iter()
        .enumerate()
        .map(|(i, (nl, code))| FusedExample {
            id: format!("pair{i}"),
            nl_ids: ids_of(nl),
            code_ids: ids_of(code),
            graph: None,
        })
        .collect();

    let mut store = init_plm_params(&cfg, 7).unwrap();
    let stats = fused_train(
        &examples,
        &mut store,
        &cfg,
        &plan,
        &vocab,
        150,
        7,
        &AdamConfig { lr: 3e-3, ..AdamConfig::default() },
        4,
    )
    .unwrap();
    for e in stats.epochs.iter().step_by(25) {
        println!("{} epoch {}: mean loss {:.4}", e.phase, e.epoch, e.mean_loss);
    }

    println!();
    let mut exact = 0;
    for (nl, code) in &pairs {
        let out = generate(&store, &cfg, &ids_of(nl), DecodeMode::Greedy, 40, None).unwrap();
        let text = decode(&out, &vocab);
        let ok = text.trim() == *code;
        exact += ok as usize;
        println!("{nl:<22} -> {}", text.trim());
    }
    println!("\n{exact}/{} reproduced exactly", pairs.len());
}
