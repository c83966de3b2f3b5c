//! Keyed random streams.
//!
//! A [`Seed`] is split into children by mixing in integer keys, so that the
//! stream for e.g. `(master, replication, group, kind)` does not depend on how
//! many other streams were drawn before it or on which thread runs it.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(pub u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seed {
    pub fn child(self, key: u64) -> Seed {
        Seed(splitmix64(
            splitmix64(self.0) ^ key.wrapping_mul(0xD1B5_4A32_D192_ED03),
        ))
    }

    pub fn path(self, keys: &[u64]) -> Seed {
        keys.iter().fold(self, |s, &k| s.child(k))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Standard normal vector of length `n`.
pub fn normal_vector<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// `rows x cols` matrix of independent standard normals, filled row by row.
pub fn normal_matrix<R: rand::Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}
