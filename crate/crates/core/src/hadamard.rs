//! Sylvester Hadamard bases, the fast Walsh-Hadamard transform and the
//! differential (positive/negative) mask encoding used on binary modulators.
//!
//! Rows are kept in natural (Sylvester) order. Entry `(n, m)` of the order-N
//! matrix is `(-1)^popcount(n & m)`, so row 0 is the all-ones row.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sylvester-construction Hadamard matrix of power-of-two order.
///
/// Rows are evaluated on demand; nothing of size N² is stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HadamardBasis {
    order: usize,
}

impl HadamardBasis {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || !order.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(order));
        }
        Ok(HadamardBasis { order })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Sign of entry `(row, col)`: `+1` or `-1`.
    #[inline]
    pub fn entry(&self, row: usize, col: usize) -> i8 {
        sign(row, col)
    }

    /// Whether entry `(row, col)` is `+1`.
    #[inline]
    pub fn is_positive(&self, row: usize, col: usize) -> bool {
        (row & col).count_ones() % 2 == 0
    }

    pub fn row(&self, row: usize) -> Vec<i8> {
        (0..self.order).map(|c| sign(row, c)).collect()
    }

    /// Dense N×N matrix. Only sensible for small orders.
    pub fn to_dense(&self) -> Vec<Vec<i8>> {
        (0..self.order).map(|r| self.row(r)).collect()
    }
}

#[inline]
fn sign(row: usize, col: usize) -> i8 {
    if (row & col).count_ones() % 2 == 0 {
        1
    } else {
        -1
    }
}

pub fn build_basis(order: usize) -> Result<HadamardBasis> {
    HadamardBasis::new(order)
}

/// In-place unnormalized FWHT: `v <- H·v` with `H` the Sylvester matrix.
pub fn fwht_in_place(v: &mut [f64]) -> Result<()> {
    let n = v.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut h = 1;
    while h < n {
        for block in v.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    Ok(())
}

pub fn fwht(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    fwht_in_place(&mut out)?;
    Ok(out)
}

/// A ±1 mask split into two complementary {1,0} masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifferentialPatternPair {
    pub positive: Vec<u8>,
    pub negative: Vec<u8>,
}

impl DifferentialPatternPair {
    /// `positive - negative`, which reproduces the original sign mask.
    pub fn signed(&self) -> Vec<i8> {
        self.positive
            .iter()
            .zip(&self.negative)
            .map(|(&p, &n)| p as i8 - n as i8)
            .collect()
    }
}

pub fn to_differential(mask: &[i8]) -> Result<DifferentialPatternPair> {
    let mut positive = Vec::with_capacity(mask.len());
    let mut negative = Vec::with_capacity(mask.len());
    for (index, &value) in mask.iter().enumerate() {
        match value {
            1 => {
                positive.push(1);
                negative.push(0);
            }
            -1 => {
                positive.push(0);
                negative.push(1);
            }
            _ => return Err(Error::InvalidMaskEntry { index, value }),
        }
    }
    Ok(DifferentialPatternPair { positive, negative })
}

#[inline]
pub fn differential_decode(i_pos: f64, i_neg: f64) -> f64 {
    i_pos - i_neg
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_apply(order: usize, v: &[f64]) -> Vec<f64> {
        (0..order)
            .map(|r| {
                (0..order)
                    .map(|c| if (r & c).count_ones() % 2 == 0 { v[c] } else { -v[c] })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn small_bases() {
        assert_eq!(build_basis(1).unwrap().to_dense(), vec![vec![1]]);
        assert_eq!(
            build_basis(2).unwrap().to_dense(),
            vec![vec![1, 1], vec![1, -1]]
        );
    }

    #[test]
    fn rejects_non_power_of_two() {
        for n in [0, 3, 6, 12, 1000, 1368] {
            assert!(matches!(build_basis(n), Err(Error::NotPowerOfTwo(_))));
        }
        assert!(fwht(&[1.0, 2.0, 3.0]).is_err());
        assert!(fwht(&[]).is_err());
    }

    #[test]
    fn rows_are_orthogonal_in_integers() {
        for k in 0..=7 {
            let h = build_basis(1 << k).unwrap();
            let n = h.order();
            let dense = h.to_dense();
            assert!(dense[0].iter().all(|&e| e == 1));
            for a in 0..n {
                for b in 0..n {
                    let dot: i64 = dense[a]
                        .iter()
                        .zip(&dense[b])
                        .map(|(&x, &y)| x as i64 * y as i64)
                        .sum();
                    assert_eq!(dot, if a == b { n as i64 } else { 0 });
                }
            }
        }
    }

    #[test]
    fn full_1024_basis_rows_are_balanced() {
        let h = build_basis(1024).unwrap();
        for r in 1..1024 {
            let s: i64 = h.row(r).iter().map(|&e| e as i64).sum();
            assert_eq!(s, 0);
        }
    }

    #[test]
    fn delta_input_gives_basis_row() {
        assert_eq!(fwht(&[1.0, 0.0, 0.0, 0.0]).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn fwht_matches_dense_at_64() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let v: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = fwht(&v).unwrap();
        let dense = dense_apply(64, &v);
        for (a, b) in fast.iter().zip(&dense) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn differential_examples() {
        let pair = to_differential(&[1, -1]).unwrap();
        assert_eq!(pair.positive, vec![1, 0]);
        assert_eq!(pair.negative, vec![0, 1]);
        let ones = to_differential(&[1; 8]).unwrap();
        assert_eq!(ones.positive, vec![1; 8]);
        assert_eq!(ones.negative, vec![0; 8]);
        assert!(matches!(
            to_differential(&[1, 0, -1]),
            Err(Error::InvalidMaskEntry { index: 1, value: 0 })
        ));
        let h = build_basis(8).unwrap();
        for r in 0..8 {
            let row = h.row(r);
            let pair = to_differential(&row).unwrap();
            assert_eq!(pair.signed(), row);
            assert!(pair
                .positive
                .iter()
                .zip(&pair.negative)
                .all(|(p, n)| p + n == 1));
        }
        assert_eq!(differential_decode(5.0, 2.0), 3.0);
        assert_eq!(differential_decode(0.7, 0.7), 0.0);
    }

    #[test]
    fn differential_decode_equals_signed_dot() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        // Quarter-integer intensities keep every partial sum exact.
        let scene: Vec<f64> = (0..16).map(|_| rng.random_range(0..4) as f64 / 4.0).collect();
        let h = build_basis(16).unwrap();
        for r in 0..16 {
            let row = h.row(r);
            let pair = to_differential(&row).unwrap();
            let ip: f64 = pair.positive.iter().zip(&scene).map(|(&m, &o)| m as f64 * o).sum();
            let ineg: f64 = pair.negative.iter().zip(&scene).map(|(&m, &o)| m as f64 * o).sum();
            let dot: f64 = row.iter().zip(&scene).map(|(&m, &o)| m as f64 * o).sum();
            assert_eq!(differential_decode(ip, ineg), dot);
        }
    }

    proptest! {
        #[test]
        fn fwht_agrees_with_dense(k in 0u32..=8, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let n = 1usize << k;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let fast = fwht(&v).unwrap();
            let dense = dense_apply(n, &v);
            for (a, b) in fast.iter().zip(&dense) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
            let back = fwht(&fast).unwrap();
            for (a, b) in back.iter().zip(&v) {
                prop_assert!((a / n as f64 - b).abs() <= 1e-10);
            }
        }
    }
}
