//! Order-fixed summation.
//!
//! Every reduction in the crate goes through these helpers so that results
//! do not depend on how work is scheduled.

const BLOCK: usize = 128;
pub(crate) const LANES: usize = 8;

/// Fixed-order sum of independent lanes, letting the compiler vectorise the
/// leaves without changing results between runs.
#[inline]
pub(crate) fn lane_sum(xs: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let mut chunks = xs.chunks_exact(LANES);
    for c in &mut chunks {
        for (a, x) in acc.iter_mut().zip(c) {
            *a += x;
        }
    }
    for (a, x) in acc.iter_mut().zip(chunks.remainder()) {
        *a += x;
    }
    fold_lanes(&acc)
}

#[inline]
pub(crate) fn fold_lanes(acc: &[f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

#[inline]
fn lane_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for ((s, x), y) in acc.iter_mut().zip(x).zip(y) {
            *s += x * y;
        }
    }
    for ((s, x), y) in acc.iter_mut().zip(ca.remainder()).zip(cb.remainder()) {
        *s += x * y;
    }
    fold_lanes(&acc)
}

/// Pairwise (tree) summation with leaves of `BLOCK` elements.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= BLOCK {
        return lane_sum(xs);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise sum of `a[i] * b[i]`.
pub fn pairwise_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= BLOCK {
        return lane_dot(a, b);
    }
    let mid = a.len() / 2;
    pairwise_dot(&a[..mid], &b[..mid]) + pairwise_dot(&a[mid..], &b[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_and_empty() {
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0]), 6.0);
    }

    #[test]
    fn more_accurate_than_naive_on_ill_conditioned_input() {
        let xs: Vec<f64> = (0..1_000_000)
            .map(|i| 0.1 + (i % 3) as f64 * 1e-9)
            .collect();
        let exact = 100_000.0 + 1e-9 * (333_333.0 + 2.0 * 333_333.0);
        assert!((pairwise_sum(&xs) - exact).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn agrees_with_naive(xs in proptest::collection::vec(-1e3f64..1e3, 0..2000)) {
            let naive: f64 = xs.iter().sum();
            prop_assert!((pairwise_sum(&xs) - naive).abs() < 1e-8 * (1.0 + xs.len() as f64));
            let dot = pairwise_dot(&xs, &xs);
            let naive_dot: f64 = xs.iter().map(|x| x * x).sum();
            prop_assert!((dot - naive_dot).abs() <= 1e-10 * naive_dot.max(1.0));
        }
    }
}
