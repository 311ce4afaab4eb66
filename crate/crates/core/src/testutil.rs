//! Seeded random matrix helpers for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{C64, CMatrix, CVector, HermitianMatrix};

pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_c64(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

pub fn rand_cvector(rng: &mut ChaCha8Rng, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| rand_c64(rng))
}

pub fn rand_hermitian(rng: &mut ChaCha8Rng, n: usize) -> HermitianMatrix {
    let a = CMatrix::from_fn(n, n, |_, _| rand_c64(rng));
    HermitianMatrix::enforce(&a + a.adjoint())
}

/// Random Hermitian positive definite matrix, comfortably conditioned.
pub fn rand_hpd(rng: &mut ChaCha8Rng, n: usize) -> HermitianMatrix {
    let a = CMatrix::from_fn(n, n, |_, _| rand_c64(rng));
    let g = &a * a.adjoint();
    HermitianMatrix::enforce(g + CMatrix::identity(n, n).scale(0.5))
}
