//! Per-trial seed derivation for Monte Carlo sweeps.

/// Derives a child seed from a base seed and a stream index (splitmix64
/// finalizer). Trials seeded this way are decorrelated and reproducible
/// independent of execution order.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
