//! Show that fusion at lambda 0 is the plain model bit for bit, and that the
//! graph contribution scales exactly linearly in lambda.
//!
//! Run with: cargo run --example fusion_identity

use cgfuse::frontend::parse_source;
use cgfuse::fusion::{graph_contribution, teacher_forced_logits, FusedExample, FusionPlan};
use cgfuse::gnn::{init_gnn_params, GnnConfig};
use cgfuse::graph::{align_terminals, build_code_graph};
use cgfuse::plm::{init_plm_params, PlmConfig};
use cgfuse::tensor::Tape;
use cgfuse::tokenizer::{encode, train_vocab};

fn main() {
    let nl = "cap the total value at the step limit";
    let code = "int capped = totalValue ; if ( stepLimit < capped ) { capped = stepLimit ; } return capped ;";
    let vocab = train_vocab(&[nl.to_string(), code.to_string()], 300).unwrap();

    let cfg = PlmConfig {
        enc_layers: 1,
        dec_layers: 2,
        hidden: 32,
        heads: 2,
        ffn: 64,
        max_len: 64,
        vocab: vocab.size(),
        dropout: 0.0,
    };
    let gnn = GnnConfig { hidden: cfg.hidden, ..GnnConfig::default() };

    let mut store = init_plm_params(&cfg, 3).unwrap();
    store.merge(init_gnn_params(&gnn, 4).unwrap());

    let pieces = encode(code, &vocab, true);
    let ast = parse_source(code, false).unwrap();
    let graph = build_code_graph(&ast);
    let origins: Vec<Option<usize>> = pieces.iter().map(|p| p.1).collect();
    let align = align_terminals(&graph, &origins).unwrap();
    let ex = FusedExample {
        id: "demo".into(),
        nl_ids: encode(nl, &vocab, false).into_iter().map(|p| p.0).collect(),
        code_ids: pieces.iter().map(|p| p.0).collect(),
        graph: Some((graph, align)),
    };

    let logits_at = |lambda: f32| {
        let plan = FusionPlan { lambda, ..FusionPlan::new(gnn, &cfg) };
        teacher_forced_logits(&store, &cfg, Some(&plan), &vocab, &ex).unwrap()
    };

    let plain = teacher_forced_logits(&store, &cfg, None, &vocab, &ex).unwrap();
    let at0 = logits_at(0.0);
    assert_eq!(plain.data(), at0.data());
    println!("lambda 0: {} logits identical to the plain model", plain.data().len());

    // The claim is exact at the hidden-state level: the lambda scale is the
    // last op applied to the contribution, so contribution(L) is bitwise
    // L * contribution(1).
    let (g, align) = ex.graph.as_ref().unwrap();
    let contribution_at = |lambda: f32| -> Vec<f32> {
        let plan = FusionPlan { lambda, ..FusionPlan::new(gnn, &cfg) };
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let c = graph_contribution(&mut tape, &bound, &plan, g, &vocab, align, ex.code_ids.len())
            .unwrap()
            .expect("lambda > 0 with a graph yields a contribution");
        tape.value(c).data().to_vec()
    };
    let c1 = contribution_at(1.0);
    let c3 = contribution_at(3.0);
    assert!(c1.iter().zip(&c3).all(|(a, b)| *b == 3.0 * *a));
    println!("contribution at lambda 3 is exactly 3x the lambda-1 contribution");

    // Downstream of the hook the head is nonlinear, but more graph signal
    // still moves the logits further.
    let d1 = max_shift(&plain, &logits_at(1.0));
    let d2 = max_shift(&plain, &logits_at(2.0));
    assert!(d1 > 0.0 && d2 > d1);
    println!("max logit shift grows with lambda: 0 < {d1:.4} < {d2:.4}");
}

fn max_shift(a: &cgfuse::tensor::Tensor, b: &cgfuse::tensor::Tensor) -> f32 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}
