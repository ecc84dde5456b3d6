//! Raw slice kernels. Every output element is reduced in a fixed order, so
//! the sequential and parallel variants agree bit for bit.

use super::tensor::Scalar;
use crate::par;

/// `sqrt(2/pi)` used by the tanh GELU approximation.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh GELU approximation.
pub const GELU_CUBIC: f64 = 0.044_715;

#[inline]
fn matmul_row<T: Scalar>(a_row: &[T], b: &[T], q: usize, out: &mut [T]) {
    out.iter_mut().for_each(|o| *o = T::zero());
    for (k, &a) in a_row.iter().enumerate() {
        if a == T::zero() {
            continue;
        }
        let b_row = &b[k * q..(k + 1) * q];
        for (o, &bv) in out.iter_mut().zip(b_row) {
            *o = *o + a * bv;
        }
    }
}

/// `a[n×p] · b[p×q]` on the calling thread.
pub fn matmul_seq<T: Scalar>(a: &[T], b: &[T], n: usize, p: usize, q: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * q];
    if q == 0 {
        return out;
    }
    for (i, row) in out.chunks_mut(q).enumerate() {
        matmul_row(&a[i * p..(i + 1) * p], b, q, row);
    }
    out
}

/// `a[n×p] · b[p×q]` split by output rows over the rayon pool.
#[cfg(feature = "parallel")]
pub fn matmul_par<T: Scalar>(a: &[T], b: &[T], n: usize, p: usize, q: usize) -> Vec<T> {
    use rayon::prelude::*;
    let mut out = vec![T::zero(); n * q];
    if q == 0 {
        return out;
    }
    out.par_chunks_mut(q)
        .enumerate()
        .for_each(|(i, row)| matmul_row(&a[i * p..(i + 1) * p], b, q, row));
    out
}

/// Dispatching matmul: parallel when the feature is on and the product is
/// large enough to amortize the fork.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], n: usize, p: usize, q: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * p);
    debug_assert_eq!(b.len(), p * q);
    let mut out = vec![T::zero(); n * q];
    par::for_each_row(&mut out, q, n * p * q, |i, row| {
        matmul_row(&a[i * p..(i + 1) * p], b, q, row)
    });
    out
}

pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// `aᵀ · b` for `a[n×p]`, `b[n×q]`, giving `p×q`.
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], n: usize, p: usize, q: usize) -> Vec<T> {
    let at = transpose(a, n, p);
    matmul(&at, b, p, n, q)
}

/// `a · bᵀ` for `a[n×q]`, `b[p×q]`, giving `n×p`.
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], n: usize, q: usize, p: usize) -> Vec<T> {
    let bt = transpose(b, p, q);
    matmul(a, &bt, n, q, p)
}

/// Stabilized softmax over the kept entries of one row. Masked entries are
/// written as exact zeros. Returns `false` when no entry is kept.
pub fn softmax_masked_row<T: Scalar>(scores: &[T], keep: &[bool], out: &mut [T]) -> bool {
    let mut max = T::neg_infinity();
    for (&s, &k) in scores.iter().zip(keep) {
        if k && s > max {
            max = s;
        }
    }
    if max == T::neg_infinity() {
        return false;
    }
    let mut sum = T::zero();
    for ((o, &s), &k) in out.iter_mut().zip(scores).zip(keep) {
        if k {
            let e = (s - max).exp();
            *o = e;
            sum = sum + e;
        } else {
            *o = T::zero();
        }
    }
    for (o, &k) in out.iter_mut().zip(keep) {
        if k {
            *o = *o / sum;
        }
    }
    true
}

#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_SQRT_2_OVER_PI);
    let a = T::of(GELU_CUBIC);
    let half = T::of(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_SQRT_2_OVER_PI);
    let a = T::of(GELU_CUBIC);
    let half = T::of(0.5);
    let three = T::of(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &[f64], b: &[f64], n: usize, p: usize, q: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * q];
        for i in 0..n {
            for j in 0..q {
                for k in 0..p {
                    out[i * q + j] += a[i * p + k] * b[k * q + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_variants_agree_with_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, p, q) = (37, 19, 23);
        let a: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..p * q).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expect = naive(&a, &b, n, p, q);
        let seq = matmul_seq(&a, &b, n, p, q);
        for (x, y) in seq.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(matmul(&a, &b, n, p, q), seq);
        #[cfg(feature = "parallel")]
        assert_eq!(matmul_par(&a, &b, n, p, q), seq);
    }

    #[test]
    fn transposed_products() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0]; // 2x2
        // aᵀ b = 3x2
        assert_eq!(matmul_tn(&a, &b, 2, 3, 2), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        // a aᵀ = 2x2
        assert_eq!(matmul_nt(&a, &a, 2, 3, 2), vec![14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn gelu_reference_point() {
        // Independent evaluation of 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))) at x = 1.
        let inner = (2.0f64 / std::f64::consts::PI).sqrt() * (1.0 + 0.044715);
        let expect = 0.5 * (1.0 + inner.tanh());
        assert!((gelu(1.0f64) - expect).abs() < 1e-12);
        assert!((gelu(1.0f32) - 0.8412).abs() < 1e-3);
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(10.0f64) - 10.0).abs() < 1e-9);
        assert!(gelu(-10.0f64).abs() < 1e-9);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-8, "x={x}");
        }
    }
}
