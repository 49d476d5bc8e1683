//! Seeded sampling helpers shared across the crate.

use rand::Rng;
use std::f64::consts::TAU;

/// Standard normal draw via Box-Muller; consumes exactly two uniforms, so
/// draw sequences stay reproducible across call sites.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Derives a stream-specific seed from a base seed and a stream tag.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream)
        .rotate_left(17)
}
