//! Reverse-mode gradients on the tape, checked by hand and by descent.
//!
//! Run with: cargo run --example autograd

use std::collections::BTreeMap;

use cgfuse::tensor::{Adam, AdamConfig, ParamStore, Tape, Tensor};

fn main() {
    // loss = mean(relu(x W)) for a hand-checkable 1x2 * 2x2 case.
    let mut tape = Tape::new();
    let x = tape.input(Tensor::new(vec![1, 2], vec![1.0, 2.0]));
    let w = tape.param(Tensor::new(vec![2, 2], vec![0.5, -1.0, 0.25, 3.0]));
    let h = tape.matmul(x, w).unwrap();
    let a = tape.relu(h);
    let loss = tape.mean(a);

    // Forward: xW = [1.0, 5.0], relu keeps both, mean = 3.0.
    println!("loss = {}", tape.value(loss).data()[0]);

    // Backward: d loss / d W = outer(x, relu'(h)) / 2 = [[.5, .5], [1, 1]].
    let grads = tape.backward(loss).unwrap();
    println!("dL/dW = {:?}", grads[&w].data());
    assert_eq!(grads[&w].data(), &[0.5, 0.5, 1.0, 1.0]);

    // The same machinery drives training: fit a linear layer until the input
    // [1, 2] lands on class 2 of 4.
    let mut store = ParamStore::default();
    store.insert("w", Tensor::new(vec![2, 4], vec![0.01; 8]));
    let mut adam = Adam::new();
    let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };

    for step in 0..=200 {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![1, 2], vec![1.0, 2.0]));
        let w = tape.param(store.get("w").clone());
        let logits = tape.matmul(x, w).unwrap();
        let loss = tape.cross_entropy(logits, &[2], None).unwrap();

        if step % 50 == 0 {
            println!("step {step:>3}: loss {:.6}", tape.value(loss).data()[0]);
        }
        let grads = tape.backward(loss).unwrap();
        let named: BTreeMap<String, Tensor> = [("w".to_string(), grads[&w].clone())].into();
        adam.apply(&mut store, &named, &cfg);
    }

    let mut tape = Tape::new();
    let x = tape.input(Tensor::new(vec![1, 2], vec![1.0, 2.0]));
    let w = tape.param(store.get("w").clone());
    let logits = tape.matmul(x, w).unwrap();
    let out = tape.value(logits).data().to_vec();
    let best = (0..4).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap();
    println!("logits {out:?} -> class {best}");
    assert_eq!(best, 2);
}
