//! Deterministic randomness.  Each sample gets its own ChaCha stream keyed by
//! (seed, purpose, index), so results never depend on evaluation order.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::spaces::DomainBox;

/// Stream purposes; distinct tags keep unrelated draws independent.
pub mod tag {
    pub const SELECTION: u64 = 1;
    pub const AGENT_NORM: u64 = 2;
    pub const FUSION_NORM: u64 = 3;
    pub const MULTI_NORM: u64 = 4;
    pub const DOWNLOAD_NORM: u64 = 5;
    pub const UNIFORM: u64 = 6;
    pub const PERTURBATION: u64 = 7;
    pub const EQUICONTINUITY: u64 = 8;
    pub const DATA: u64 = 9;
    pub const C_D: u64 = 10;
}

pub fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// Restriction of the sampled set to a slice of the feasible region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Slice {
    #[default]
    Full,
    /// Agent sets: y = 0 (function part only).
    PsiZero,
    /// Fusion set: second agent's coefficients zero.
    FirstAgentOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub samples: usize,
    /// Number of best candidates handed to coordinate ascent.
    pub refine_top: usize,
    /// Maximum ascent sweeps per candidate.
    pub refine_iters: usize,
    pub seed: u64,
    pub slice: Slice,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { samples: 2000, refine_top: 4, refine_iters: 60, seed: 0, slice: Slice::Full }
    }
}

impl SamplingConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

pub fn unit_sphere(rng: &mut impl Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = v.norm();
        if n > 1e-300 {
            return v / n;
        }
    }
}

pub fn uniform_in(rng: &mut impl Rng, domain: &DomainBox) -> Vec<f64> {
    domain.lower.iter().zip(&domain.upper).map(|(&a, &b)| a + (b - a) * rng.random::<f64>()).collect()
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Halton point `index` (1-based to avoid the origin) mapped into the box.
pub fn halton(index: u64, domain: &DomainBox) -> Vec<f64> {
    domain
        .lower
        .iter()
        .zip(&domain.upper)
        .enumerate()
        .map(|(d, (&a, &b))| a + (b - a) * radical_inverse(index, PRIMES[d % PRIMES.len()]))
        .collect()
}

/// Coordinate ascent on `params` with per-coordinate starting steps.
/// `eval` may renormalize internally; it must return the objective for any
/// parameter vector.  Steps halve after a sweep without improvement.
/// Returns (best value, sweeps performed).
pub fn coordinate_ascent(params: &mut [f64], steps: &[f64], max_sweeps: usize, eval: impl Fn(&[f64]) -> f64) -> (f64, usize) {
    let mut best = eval(params);
    let mut scale = 1.0;
    let mut sweeps = 0;
    while sweeps < max_sweeps && scale > 1e-9 {
        sweeps += 1;
        let mut improved = false;
        for k in 0..params.len() {
            for dir in [1.0, -1.0] {
                let old = params[k];
                params[k] = old + dir * scale * steps[k];
                let v = eval(params);
                if v > best {
                    best = v;
                    improved = true;
                    break;
                }
                params[k] = old;
            }
        }
        if !improved {
            scale *= 0.5;
        }
    }
    (best, sweeps)
}
