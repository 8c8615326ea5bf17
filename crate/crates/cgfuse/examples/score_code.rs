//! Score candidate code against references and unpack the sub-scores.
//!
//! Run with: cargo run --example score_code

use cgfuse::metrics::{bleu, evaluate};

fn main() {
    let refs = vec![
        "int total = base ; return total ;".to_string(),
        "int capped = value ; if ( limit < capped ) { capped = limit ; } return capped ;".to_string(),
        "int rest = size ; while ( step < rest ) { rest = rest - step ; } return rest ;".to_string(),
    ];
    let hyps = vec![
        // Exact match.
        refs[0].clone(),
        // Same shape, one identifier renamed consistently: n-gram overlap
        // drops but the syntax and dataflow structure still line up.
        "int capped = value ; if ( bound < capped ) { capped = bound ; } return capped ;".to_string(),
        // Right tokens, broken dataflow: the loop updates the wrong variable.
        "int rest = size ; while ( step < rest ) { step = rest - step ; } return rest ;".to_string(),
    ];

    let report = evaluate(&hyps, &refs).unwrap();
    println!("{report}");

    println!("\nper example:");
    for ex in &report.examples {
        println!(
            "  #{}: em {:>5}  bleu {:>8.4}  syntax {:>8.4}  dataflow {:>8.4}",
            ex.index, ex.em, ex.bleu, ex.syntax, ex.dataflow
        );
    }

    // The weighted n-gram channel counts keyword-bearing n-grams five times,
    // so a wrong identifier inside a keyword's context window costs more
    // than the same miss far away from any keyword.
    let rf = vec!["int a = b ;".to_string()];
    let near = vec!["int c = b ;".to_string()];
    let far = vec!["int a = c ;".to_string()];
    println!(
        "\nplain bleu can't tell the misses apart: {:.4} vs {:.4}",
        bleu(&near, &rf).unwrap(),
        bleu(&far, &rf).unwrap()
    );
    let near_r = evaluate(&near, &rf).unwrap();
    let far_r = evaluate(&far, &rf).unwrap();
    println!(
        "weighted channel punishes the miss next to the keyword: {:.4} vs {:.4}",
        near_r.weighted_ngram, far_r.weighted_ngram
    );
}
