//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, trial, lane, particle, step)`.
//! A small generator is seeded from a hash of that tuple, so results do not
//! depend on the order in which particles or trials are processed.

use nalgebra::DVector;
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::scalar::{lit, Real};

/// What a stream of draws is used for. Distinct lanes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lane {
    /// Draws from the initial prior.
    Initial,
    /// Process noise of the simulated ground truth.
    Truth,
    /// Measurement noise of the simulated observation record.
    Observation,
    /// Process noise of particle trajectories for the window (or SIR
    /// update) that ends at the given grid index.
    Window(usize),
    /// Uniforms for the resampling event performed at the given grid index.
    Resample(usize),
    /// Rollouts of the path-integral control estimator launched at a grid index.
    Estimator(usize),
    /// Free lane for tests and auxiliary experiments.
    Aux(u64),
}

impl Lane {
    fn code(self) -> u64 {
        let (tag, idx) = match self {
            Lane::Initial => (1u64, 0u64),
            Lane::Truth => (2, 0),
            Lane::Observation => (3, 0),
            Lane::Window(j) => (4, j as u64),
            Lane::Resample(j) => (5, j as u64),
            Lane::Estimator(j) => (6, j as u64),
            Lane::Aux(k) => (7, k),
        };
        (tag << 56) ^ idx
    }
}

/// Identifies one independent experiment: a base seed and a trial number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stream {
    pub seed: u64,
    pub trial: u64,
}

impl Stream {
    pub fn new(seed: u64, trial: u64) -> Self {
        Self { seed, trial }
    }

    /// Key for one particle on one lane.
    pub fn key(self, lane: Lane, particle: usize) -> StreamKey {
        StreamKey {
            seed: self.seed,
            trial: self.trial,
            lane,
            particle: particle as u64,
        }
    }
}

/// Full key of a per-particle stream; individual draws are further keyed by step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub trial: u64,
    pub lane: Lane,
    pub particle: u64,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StreamKey {
    fn hash(&self, step: u64) -> u64 {
        let mut h = splitmix(self.seed);
        for word in [self.trial, self.lane.code(), self.particle, step] {
            h = splitmix(h ^ word);
        }
        h
    }

    /// Generator dedicated to draws at `step`.
    pub fn rng(&self, step: usize) -> SmallRng {
        SmallRng::seed_from_u64(self.hash(step as u64))
    }

    /// Fills `out` with i.i.d. `N(0, scale²)` draws for `step`.
    pub fn fill_normals<T: Real>(&self, step: usize, scale: T, out: &mut DVector<T>) {
        let mut rng = self.rng(step);
        for v in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = lit::<T>(z) * scale;
        }
    }

    pub fn normals<T: Real>(&self, step: usize, dim: usize, scale: T) -> DVector<T> {
        let mut out = DVector::zeros(dim);
        self.fill_normals(step, scale, &mut out);
        out
    }

    /// One uniform draw in `[0, 1)` for `step`.
    pub fn uniform(&self, step: usize) -> f64 {
        self.rng(step).random::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_pure_functions_of_the_key() {
        let s = Stream::new(7, 3);
        let a: DVector<f64> = s.key(Lane::Window(4), 11).normals(2, 3, 1.0);
        let b: DVector<f64> = s.key(Lane::Window(4), 11).normals(2, 3, 1.0);
        assert_eq!(a, b);
        let c: DVector<f64> = s.key(Lane::Window(5), 11).normals(2, 3, 1.0);
        assert_ne!(a, c);
        let d: DVector<f64> = s.key(Lane::Window(4), 12).normals(2, 3, 1.0);
        assert_ne!(a, d);
        let e: DVector<f64> = Stream::new(7, 4).key(Lane::Window(4), 11).normals(2, 3, 1.0);
        assert_ne!(a, e);
    }

    #[test]
    fn lanes_do_not_collide() {
        let codes = [
            Lane::Initial.code(),
            Lane::Truth.code(),
            Lane::Observation.code(),
            Lane::Window(0).code(),
            Lane::Resample(0).code(),
            Lane::Estimator(0).code(),
            Lane::Aux(0).code(),
        ];
        for i in 0..codes.len() {
            for j in i + 1..codes.len() {
                assert_ne!(codes[i], codes[j]);
            }
        }
    }

    #[test]
    fn uniforms_lie_in_unit_interval() {
        let key = Stream::new(1, 0).key(Lane::Resample(3), 0);
        for step in 0..1000 {
            let u = key.uniform(step);
            assert!((0.0..1.0).contains(&u));
        }
    }
}
