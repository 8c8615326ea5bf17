//! Template-based synthetic corpus: short English intents paired with
//! mini-language snippets whose identifiers vary systematically, so the
//! intent-to-code mapping is learnable at desk scale. Every template declares
//! before it reads, which keeps the extracted dataflow nonempty.

use crate::tensor::Rng;

use super::Example;

const NOUNS: &[&str] = &[
    "count", "total", "size", "value", "index", "limit", "offset", "width", "height", "depth",
    "weight", "speed",
];

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn camel(a: &str, b: &str) -> String {
    format!("{a}{}", capitalize(b))
}

/// Deterministic corpus of `n` examples drawn from four template families:
/// getters, accumulators, conditional caps, and subtraction loops.
pub fn generate_synthetic(n: usize, seed: u64) -> Vec<Example> {
    let root = Rng::seeded(seed, "synthetic");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = root.derive(&format!("ex{i}"));
        let a = *rng.pick(NOUNS);
        let b = *rng.pick(NOUNS);
        let c = *rng.pick(NOUNS);
        let d = *rng.pick(NOUNS);
        let ab = camel(a, b);
        let cd = camel(c, d);
        let (nl, code) = match rng.below(4) {
            0 => (
                format!("get the {a} {b}"),
                format!("int result = {ab} ; return result ;"),
            ),
            1 => (
                format!("increase {a} {b} by {c} {d}"),
                format!("int total = {ab} ; total = total + {cd} ; return total ;"),
            ),
            2 => (
                format!("cap {a} {b} at {c} {d}"),
                format!(
                    "int capped = {ab} ; if ( {cd} < capped ) {{ capped = {cd} ; }} return capped ;"
                ),
            ),
            _ => (
                format!("reduce {a} {b} by {c} {d}"),
                format!(
                    "int rest = {ab} ; while ( {cd} < rest ) {{ rest = rest - {cd} ; }} return rest ;"
                ),
            ),
        };
        out.push(Example { nl, code });
    }
    out
}
