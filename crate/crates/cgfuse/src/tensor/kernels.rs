//! Dense `f32` kernels. The inner loops run over contiguous rows so LLVM can
//! vectorize them while keeping the per-element accumulation order fixed
//! (ascending `k` for every output element).

/// `c += a * b` for `a: [m,k]`, `b: [k,n]`, `c: [m,n]`.
pub fn matmul_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// `c += a * b^T` for `a: [m,k]`, `b: [n,k]`, `c: [m,n]`.
pub fn matmul_nt_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for kk in 0..k {
                acc += arow[kk] * brow[kk];
            }
            crow[j] += acc;
        }
    }
}

/// `c += a^T * b` for `a: [m,k]`, `b: [m,n]`, `c: [k,n]`.
pub fn matmul_tn_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for row in 0..m {
        let arow = &a[row * k..(row + 1) * k];
        let brow = &b[row * n..(row + 1) * n];
        for i in 0..k {
            let av = arow[i];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

pub fn gelu(x: f32) -> f32 {
    // tanh approximation
    const C: f32 = 0.797_884_56; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f32) -> f32 {
    const C: f32 = 0.797_884_56;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Row-wise softmax in place over `[rows, cols]`, max-subtracted for
/// stability. Masked entries at `-1e9` or below underflow to exactly zero.
pub fn softmax_rows(data: &mut [f32], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        let mut mx = f32::NEG_INFINITY;
        for &v in row.iter() {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_product() {
        // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1., 2., 3., 4.];
        let b = [5., 6., 7., 8.];
        let mut c = [0.0f32; 4];
        matmul_acc(&a, &b, &mut c, 2, 2, 2);
        assert_eq!(c, [19., 22., 43., 50.]);
    }

    #[test]
    fn transposed_variants_agree_with_plain() {
        let a = [1., -2., 0.5, 3., 4., -1.];
        let b = [2., 1., 0., -1., 1.5, 2.];
        // a: [2,3], b: [3,2]
        let mut c = [0.0f32; 4];
        matmul_acc(&a, &b, &mut c, 2, 3, 2);

        // b^T is [2,3]; matmul_nt with that recovers the same product
        let bt = [2., 0., 1.5, 1., -1., 2.];
        let mut c_nt = [0.0f32; 4];
        matmul_nt_acc(&a, &bt, &mut c_nt, 2, 3, 2);
        for (x, y) in c.iter().zip(c_nt.iter()) {
            assert!((x - y).abs() < 1e-6);
        }

        // a^T is [3,2]; matmul_tn with the original a recovers a^T * b2
        let b2 = [1., 0., 0., 1.]; // [2,2] identity
        let mut c_tn = [0.0f32; 6];
        matmul_tn_acc(&a, &b2, &mut c_tn, 2, 3, 2);
        assert_eq!(c_tn, [1., 3., -2., 4., 0.5, -1.]); // = a^T
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask_underflows() {
        let mut x = vec![1.0, 2.0, 3.0, -1e9, 0.5, 0.25];
        softmax_rows(&mut x, 2, 3);
        for r in 0..2 {
            let s: f32 = x[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert_eq!(x[3], 0.0); // masked weight is exactly zero
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-3.0f32, -1.0, -0.2, 0.0, 0.4, 1.7, 3.5] {
            let e = 1e-3;
            let fd = (gelu(x + e) - gelu(x - e)) / (2.0 * e);
            assert!((fd - gelu_grad(x)).abs() < 1e-3, "x={x} fd={fd} an={}", gelu_grad(x));
        }
    }
}
