//! Independent reference implementations used to validate the fast paths:
//! adaptive Simpson quadrature for one-dimensional Gaussian integrals, and
//! seeded Monte Carlo estimators for transport costs and event
//! probabilities.
//!
//! Nothing here is consumed by the production pipeline except as an
//! optional post-hoc check; the point is that these estimators share no
//! code with the closed forms they validate (quadrature instead of erfc
//! differences, sampling instead of cell algebra).

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::distributions::{DiscreteDistribution, GaussianMixture};
use crate::error::{Error, Result};
use crate::special::std_normal_pdf;

/// Absolute tolerance for the adaptive quadrature used in tests.
pub const QUAD_TOL: f64 = 1e-11;
/// Gaussian integrands are truncated at this many standard deviations.
pub const QUAD_CUTOFF: f64 = 12.0;
/// Samples are drawn in fixed-size blocks, one RNG stream per block, so an
/// estimate depends only on (seed, sample count), never on batching.
const SAMPLE_BLOCK: usize = 4096;
/// Minimum sample count accepted by the Monte Carlo estimators.
pub const MC_MIN_SAMPLES: usize = 1000;

use crate::numeric::integrate;

fn clip_to_cutoff(x: f64) -> f64 {
    x.clamp(-QUAD_CUTOFF, QUAD_CUTOFF)
}

/// `P(a < X <= b)` for standard normal `X`, by quadrature of the density.
pub fn quadrature_cell_prob(a: f64, b: f64) -> f64 {
    let lo = clip_to_cutoff(a);
    let hi = clip_to_cutoff(b);
    integrate(&std_normal_pdf, lo, hi, QUAD_TOL)
}

/// `E[(X - c)^2; a < X <= b]` for standard normal `X`, by quadrature.
pub fn quadrature_cell_cost(a: f64, b: f64, c: f64) -> f64 {
    let lo = clip_to_cutoff(a);
    let hi = clip_to_cutoff(b);
    let f = move |x: f64| (x - c) * (x - c) * std_normal_pdf(x);
    integrate(&f, lo, hi, QUAD_TOL)
}

/// A Monte Carlo estimate with its standard error and provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Reproducible sampler for a Gaussian mixture.
///
/// Sample `i` is a deterministic function of `(seed, i)`: samples are laid
/// out in fixed blocks, each block drawn from its own ChaCha stream, and
/// every sample consumes a fixed number of RNG words. Standard normals come
/// from Box-Muller pairs; covariance square roots come from the spectral
/// decomposition, so rank-deficient components sample exactly on their
/// support.
pub struct MixtureSampler {
    cum_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    transforms: Vec<DMatrix<f64>>,
    dim: usize,
    seed: u64,
}

impl MixtureSampler {
    pub fn new(mixture: &GaussianMixture, seed: u64) -> Self {
        let mut cum_weights = Vec::with_capacity(mixture.len());
        let mut acc = 0.0;
        for w in mixture.weights() {
            acc += w;
            cum_weights.push(acc);
        }
        if let Some(last) = cum_weights.last_mut() {
            *last = 1.0;
        }
        MixtureSampler {
            cum_weights,
            means: mixture.components().iter().map(|c| c.mean().clone()).collect(),
            transforms: mixture
                .components()
                .iter()
                .map(|c| c.spectral().sqrt_transform())
                .collect(),
            dim: mixture.dim(),
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Visit samples `0..samples` in order.
    pub fn for_each<F: FnMut(usize, &DVector<f64>)>(&self, samples: usize, mut f: F) {
        let d = self.dim;
        let pairs = d.div_ceil(2);
        let mut z = DVector::zeros(d);
        let mut x = DVector::zeros(d);
        let mut index = 0;
        let blocks = samples.div_ceil(SAMPLE_BLOCK);
        for block in 0..blocks {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(block as u64);
            let in_block = SAMPLE_BLOCK.min(samples - block * SAMPLE_BLOCK);
            for _ in 0..in_block {
                let u = unit_open(rng.next_u64());
                let k = self.cum_weights.partition_point(|c| *c < u);
                let k = k.min(self.cum_weights.len() - 1);
                for p in 0..pairs {
                    let (z1, z2) = box_muller(&mut rng);
                    z[2 * p] = z1;
                    if 2 * p + 1 < d {
                        z[2 * p + 1] = z2;
                    }
                }
                self.transforms[k].mul_to(&z, &mut x);
                x += &self.means[k];
                f(index, &x);
                index += 1;
            }
        }
    }
}

/// Uniform in `(0, 1]`: never zero, so logs are safe.
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

fn box_muller(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1 = unit_open(rng.next_u64());
    let u2 = unit_open(rng.next_u64());
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < MC_MIN_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "need at least {MC_MIN_SAMPLES} samples, got {samples}"
        )));
    }
    Ok(())
}

/// Monte Carlo mean of an arbitrary functional of the mixture.
pub fn mc_mean<F: FnMut(&DVector<f64>) -> f64>(
    mixture: &GaussianMixture,
    samples: usize,
    seed: u64,
    mut f: F,
) -> Result<McEstimate> {
    check_samples(samples)?;
    let sampler = MixtureSampler::new(mixture, seed);
    // Welford keeps the variance accumulation stable for large counts.
    let mut mean = 0.0_f64;
    let mut m2 = 0.0_f64;
    let mut count = 0usize;
    sampler.for_each(samples, |_, x| {
        count += 1;
        let v = f(x);
        let d1 = v - mean;
        mean += d1 / count as f64;
        m2 += d1 * (v - mean);
    });
    let var = m2 / (count as f64 - 1.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / count as f64).sqrt(),
        samples,
        seed,
    })
}

/// Monte Carlo estimate of the nearest-atom coupling distance
/// `E[min_k ||X - c_k||^2]^(1/2)` between a mixture and a discrete support.
///
/// When the discrete probabilities equal the Voronoi masses of its support
/// the squared value is an unbiased estimate of the squared 2-Wasserstein
/// distance; otherwise it estimates a lower bound. The standard error is
/// propagated through the square root by the delta method.
pub fn mc_coupling_cost(
    mixture: &GaussianMixture,
    discrete: &DiscreteDistribution,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    root_estimate(mc_sq_coupling_cost(mixture, discrete, samples, seed)?)
}

fn root_estimate(sq: McEstimate) -> Result<McEstimate> {
    let value = sq.value.max(0.0).sqrt();
    let std_error = if value > 0.0 {
        sq.std_error / (2.0 * value)
    } else {
        sq.std_error.sqrt()
    };
    Ok(McEstimate {
        value,
        std_error,
        samples: sq.samples,
        seed: sq.seed,
    })
}

fn mc_sq_coupling_cost(
    mixture: &GaussianMixture,
    discrete: &DiscreteDistribution,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if mixture.dim() != discrete.dim() {
        return Err(Error::DimensionMismatch(format!(
            "mixture dimension {} vs discrete dimension {}",
            mixture.dim(),
            discrete.dim()
        )));
    }
    if mixture.dim() == 1 {
        // Sorted scan: nearest of a sorted scalar support by binary search.
        let mut vals: Vec<f64> = discrete.locations().iter().map(|l| l[0]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).expect("finite support"));
        return mc_mean(mixture, samples, seed, move |x| {
            let t = x[0];
            let i = vals.partition_point(|v| *v <= t);
            let mut best = f64::INFINITY;
            if i < vals.len() {
                best = (vals[i] - t) * (vals[i] - t);
            }
            if i > 0 {
                let d = (vals[i - 1] - t) * (vals[i - 1] - t);
                if d < best {
                    best = d;
                }
            }
            best
        });
    }
    let locs: Vec<DVector<f64>> = discrete.locations().to_vec();
    mc_mean(mixture, samples, seed, move |x| {
        let mut best = f64::INFINITY;
        for l in &locs {
            let mut acc = 0.0;
            for j in 0..l.len() {
                let d = x[j] - l[j];
                acc += d * d;
                if acc >= best {
                    break;
                }
            }
            if acc < best {
                best = acc;
            }
        }
        best
    })
}

/// Monte Carlo probability of an arbitrary event.
pub fn mc_event_prob<F: FnMut(&DVector<f64>) -> bool>(
    mixture: &GaussianMixture,
    samples: usize,
    seed: u64,
    mut event: F,
) -> Result<McEstimate> {
    mc_mean(mixture, samples, seed, move |x| {
        if event(x) {
            1.0
        } else {
            0.0
        }
    })
}
