//! Seeded random streams.
//!
//! One root seed fans out into independent ChaCha8 streams addressed by
//! `(replica, purpose)`, so a replica's randomness depends only on the root
//! seed and its index, never on scheduling or on how many other replicas run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// What a stream is used for. Separate purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Component index sampling in the SVRG-LD inner loop.
    Indices = 0,
    /// Gaussian injections / Brownian increments.
    Gaussians = 1,
    /// Anything else (test-point sampling, projections, subsampling).
    Auxiliary = 2,
}

const PURPOSES: u64 = 3;

/// Independent stream for `(root, replica, purpose)`.
pub fn stream(root: u64, replica: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(replica.wrapping_mul(PURPOSES).wrapping_add(purpose as u64));
    rng
}

/// The two streams one SVRG-LD / SDDE replica consumes.
#[derive(Debug, Clone)]
pub struct ReplicaStreams {
    pub indices: ChaCha8Rng,
    pub gaussians: ChaCha8Rng,
}

impl ReplicaStreams {
    pub fn new(root: u64, replica: u64) -> Self {
        Self {
            indices: stream(root, replica, Purpose::Indices),
            gaussians: stream(root, replica, Purpose::Gaussians),
        }
    }
}

/// Derives an unrelated root seed (splitmix64 finaliser), e.g. to decouple
/// the SDDE ensemble from the algorithm ensemble.
pub fn derive_seed(root: u64, salt: u64) -> u64 {
    let mut z = root ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fills `out` with i.i.d. standard normals.
#[inline]
pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out {
        *v = rng.sample(StandardNormal);
    }
}

/// Uniform point on the unit sphere in `R^d`.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; d];
        fill_normal(rng, &mut v);
        let n = crate::linalg::norm(&v);
        if n > 1e-300 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// Uniform point in the Euclidean ball of the given radius.
pub fn in_ball<R: Rng + ?Sized>(rng: &mut R, d: usize, radius: f64) -> Vec<f64> {
    let dir = unit_vector(rng, d);
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / d as f64);
    dir.into_iter().map(|x| x * r).collect()
}
