//! Train a subword vocabulary, encode with provenance, and round-trip back.
//!
//! Run with: cargo run --example tokenize

use cgfuse::tokenizer::{decode, encode, train_vocab};

fn main() {
    let corpus = vec![
        "int maxCount = limit ; return maxCount ;".to_string(),
        "int minCount = offset ; return minCount ;".to_string(),
        "set the max count from the limit".to_string(),
        "set the min count from the offset".to_string(),
    ];
    let vocab = train_vocab(&corpus, 300).expect("corpus is non-empty");
    println!("learned {} vocabulary entries", vocab.size());

    let source = "int maxCount = limit ;";
    let pieces = encode(source, &vocab, true);
    println!("\nencoding {source:?}:");
    for (id, origin) in &pieces {
        let token = vocab.token(*id);
        match origin {
            // Provenance says which word of the original text a subword came
            // from; whitespace runs carry none.
            Some(w) => println!("  {id:>4} {token:?} from word {w}"),
            None => println!("  {id:>4} {token:?}"),
        }
    }

    // Decoding concatenates the stored pieces, so whitespace survives exactly
    // and any prefix of the ids re-lexes as code.
    let ids: Vec<usize> = pieces.iter().map(|p| p.0).collect();
    let back = decode(&ids, &vocab);
    println!("\nround trip: {back:?}");
    assert_eq!(back, source);

    // camelCase splits at the case boundary, so related identifiers share
    // subwords instead of each burning a whole-word entry.
    for word in ["maxCount", "minCount", "maxWidth"] {
        let ids: Vec<usize> = encode(word, &vocab, false).iter().map(|p| p.0).collect();
        let parts: Vec<&str> = ids.iter().map(|&i| vocab.token(i)).collect();
        println!("{word} -> {parts:?}");
    }
}
