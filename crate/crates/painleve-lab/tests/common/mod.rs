#![allow(dead_code)]

use num_complex::Complex64;
use painleve_lab::algebra::{c, ComplexScalar};
use painleve_lab::painleve::{CanonicalState, ThetaParams, Variant};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_c(rng: &mut ChaCha8Rng) -> ComplexScalar {
    c(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5))
}

/// Random canonical state with u bounded away from 0.
pub fn rand_state(rng: &mut ChaCha8Rng, t: ComplexScalar) -> CanonicalState {
    CanonicalState {
        q1: rand_c(rng),
        p1: rand_c(rng),
        q2: rand_c(rng),
        p2: rand_c(rng),
        u: c(1.0, 0.2) + rand_c(rng) * 0.2,
        t,
    }
}

/// Random exponents for a variant (remaining one fixed by the residue-sum
/// constraint).
pub fn rand_theta(rng: &mut ChaCha8Rng, variant: Variant) -> ThetaParams {
    let (f0, f1, ft, fi1) = variant.theta_fields();
    let n = [f0, f1, ft, fi1].iter().filter(|&&b| b).count();
    let vals: Vec<Complex64> = (0..n).map(|_| rand_c(rng)).collect();
    let thi2 = rand_c(rng);
    ThetaParams::for_variant(variant, &vals, thi2)
}

/// Base time used for each variant's checks (away from fixed singularities).
pub fn base_time(variant: Variant) -> ComplexScalar {
    match variant {
        Variant::V6 => c(0.37, 0.21),
        _ => c(1.3, 0.4),
    }
}
