//! splitmix64 generator with a draw counter.
//!
//! Portable by construction: the update is pure 64-bit integer arithmetic, so
//! a seed produces the same sequence on every platform.

use crate::tensor::{Scalar, Tensor, TensorError};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
    counter: u64,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed,
            counter: 0,
        }
    }

    /// Independent stream keyed by `(seed, id)`. Used to give every sample,
    /// iteration, or subsystem its own sequence so that draw order in one
    /// place never perturbs another.
    pub fn stream(seed: u64, id: u64) -> Self {
        Self::new(mix(seed ^ mix(id.wrapping_add(GOLDEN))))
    }

    pub fn from_parts(state: u64, counter: u64) -> Self {
        Self { state, counter }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        self.counter += 1;
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift with rejection.
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `n` draws in `[lo, hi)`.
    pub fn uniform<T: Scalar>(&mut self, lo: f64, hi: f64, n: usize) -> Result<Tensor<T>, TensorError> {
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return Err(TensorError::BadRange { lo, hi });
        }
        let (lo_t, hi_t) = (T::from_f64(lo), T::from_f64(hi));
        let data = (0..n)
            .map(|_| {
                let v = T::from_f64(lo + (hi - lo) * self.next_f64());
                // rounding to T can land on `hi`
                if v >= hi_t {
                    hi_t.next_below().max(lo_t)
                } else {
                    v.max(lo_t)
                }
            })
            .collect();
        Tensor::from_vec(&[n], data)
    }
}
