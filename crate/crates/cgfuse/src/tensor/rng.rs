//! Named counter-based random streams (SplitMix64 over a keyed counter).
//!
//! Every consumer derives its own stream from `(seed, name)`, so adding or
//! removing one draw site never shifts the values another site sees.

/// Deterministic random stream: output `i` is a pure function of
/// `(seed, name, i)`.
#[derive(Debug, Clone)]
pub struct Rng {
    key: u64,
    counter: u64,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Rng {
    pub fn seeded(seed: u64, name: &str) -> Self {
        Rng { key: mix(seed ^ fnv1a(name.as_bytes())), counter: 0 }
    }

    /// Child stream; `Rng::seeded(s, a).derive(b)` differs from
    /// `Rng::seeded(s, b).derive(a)`.
    pub fn derive(&self, name: &str) -> Self {
        Rng { key: mix(self.key ^ fnv1a(name.as_bytes()).rotate_left(17)), counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let i = self.counter;
        self.counter += 1;
        mix(self.key.wrapping_add(i.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f32 {
        let u1 = (self.uniform() as f64).max(1e-12);
        let u2 = self.uniform() as f64;
        ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
    }

    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices out of `0..n`, in shuffled order.
    pub fn choose_k(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx.truncate(k.min(n));
        idx
    }

    pub fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.below(xs.len())]
    }
}
