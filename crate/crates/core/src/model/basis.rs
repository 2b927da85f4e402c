//! Truncated Fock (x) `J_z` product basis.

use crate::model::params::{ModelParams, Parity};
use crate::scalar::Real;

/// One product state `|n> (x) |j, m>`. `m` is stored doubled so half-integer
/// spins stay exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BasisState {
    pub n: u32,
    pub two_m: i32,
    /// Position in the (block) ordering.
    pub index: usize,
}

impl BasisState {
    pub fn m<T: Real>(&self) -> T {
        T::lit(self.two_m as f64 * 0.5)
    }

    /// `(-1)^(n + m + j)`, always `+1` or `-1`.
    pub fn parity(&self, two_j: u32) -> i32 {
        let k = (self.two_m + two_j as i32) / 2;
        if (self.n as i64 + k as i64) % 2 == 0 {
            1
        } else {
            -1
        }
    }
}

/// Ordered product basis of one parity block (or of the full space).
///
/// Ordering is n-major, m-minor with `m` ascending from `-j`.
#[derive(Clone, Debug)]
pub struct FockBasis {
    two_j: u32,
    n_max: u32,
    states: Vec<BasisState>,
    // product-space slot -> block index
    lookup: Vec<Option<usize>>,
}

impl FockBasis {
    pub fn new<T: Real>(params: &ModelParams<T>, parity: Parity) -> Self {
        let two_j = params.two_j();
        let n_max = params.n_max;
        let width = two_j as usize + 1;
        let mut states = Vec::new();
        let mut lookup = vec![None; (n_max as usize + 1) * width];
        for n in 0..=n_max {
            for k in 0..=two_j {
                let two_m = 2 * k as i32 - two_j as i32;
                let probe = BasisState { n, two_m, index: 0 };
                if let Some(s) = parity.sign() {
                    if probe.parity(two_j) != s {
                        continue;
                    }
                }
                let index = states.len();
                lookup[n as usize * width + k as usize] = Some(index);
                states.push(BasisState { n, two_m, index });
            }
        }
        Self { two_j, n_max, states, lookup }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[BasisState] {
        &self.states
    }

    pub fn two_j(&self) -> u32 {
        self.two_j
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    /// Index of `(n, m)` in this block, if present.
    pub fn index_of(&self, n: u32, two_m: i32) -> Option<usize> {
        if n > self.n_max || two_m.abs() > self.two_j as i32 || (two_m + self.two_j as i32) % 2 != 0 {
            return None;
        }
        let k = ((two_m + self.two_j as i32) / 2) as usize;
        self.lookup[n as usize * (self.two_j as usize + 1) + k]
    }

    /// Position of `(n, m)` in the full product ordering.
    pub fn product_slot(&self, state: &BasisState) -> usize {
        let k = ((state.two_m + self.two_j as i32) / 2) as usize;
        state.n as usize * (self.two_j as usize + 1) + k
    }
}

/// Enumerates the product basis of one parity block, or the full space.
pub fn build_basis<T: Real>(params: &ModelParams<T>, parity: Parity) -> FockBasis {
    FockBasis::new(params, parity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(b: &FockBasis) -> Vec<(u32, i32)> {
        b.states().iter().map(|s| (s.n, s.two_m)).collect()
    }

    #[test]
    fn spin_half_full_space() {
        let p = ModelParams::<f64>::standard(0.5, 1).unwrap();
        let b = build_basis(&p, Parity::Both);
        assert_eq!(pairs(&b), vec![(0, -1), (0, 1), (1, -1), (1, 1)]);
    }

    #[test]
    fn spin_one_counts() {
        let p = ModelParams::<f64>::standard(1.0, 2).unwrap();
        assert_eq!(build_basis(&p, Parity::Both).len(), 9);
    }

    #[test]
    fn spin_half_positive_block() {
        let p = ModelParams::<f64>::standard(0.5, 1).unwrap();
        let b = build_basis(&p, Parity::Positive);
        assert_eq!(pairs(&b), vec![(0, -1), (1, 1)]);
        let neg = build_basis(&p, Parity::Negative);
        assert_eq!(pairs(&neg), vec![(0, 1), (1, -1)]);
    }

    #[test]
    fn blocks_partition_the_product_space() {
        for two_j in 1..6u32 {
            for n_max in 1..5u32 {
                let p = ModelParams::<f64>::with_two_j(1.0, 1.0, 1.0, two_j, n_max).unwrap();
                let full = build_basis(&p, Parity::Both);
                let pos = build_basis(&p, Parity::Positive);
                let neg = build_basis(&p, Parity::Negative);
                assert_eq!(full.len(), p.full_dim());
                assert_eq!(pos.len() + neg.len(), full.len());
                for s in full.states() {
                    assert_eq!(full.index_of(s.n, s.two_m), Some(s.index));
                    let in_pos = pos.index_of(s.n, s.two_m).is_some();
                    let in_neg = neg.index_of(s.n, s.two_m).is_some();
                    assert!(in_pos ^ in_neg);
                    assert_eq!(in_pos, s.parity(two_j) == 1);
                }
                for (i, s) in pos.states().iter().enumerate() {
                    assert_eq!(s.index, i);
                }
            }
        }
    }
}
