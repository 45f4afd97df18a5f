//! Shared fixtures for the integration suites.

#![allow(dead_code)] // each test binary uses its own subset

use std::sync::OnceLock;

use gmq_core::{GaussianComponent, GaussianMixture, LookupTable1D, Scheme, SchemeSet};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One lazily filled table shared by every test in a binary.
pub fn table() -> &'static LookupTable1D {
    static TABLE: OnceLock<LookupTable1D> = OnceLock::new();
    TABLE.get_or_init(LookupTable1D::new)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The running example mixture: three diagonal components in the plane,
/// one isolated and two overlapping into a shared density mode.
pub fn example_mixture() -> GaussianMixture {
    let comp = |mx: f64, my: f64, vx: f64, vy: f64| {
        GaussianComponent::new(
            DVector::from_vec(vec![mx, my]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![vx, vy])),
        )
        .unwrap()
    };
    GaussianMixture::new(
        vec![0.5, 0.25, 0.25],
        vec![
            comp(1.0, 1.0, 0.5, 0.6),
            comp(-1.1, -1.3, 0.4, 0.8),
            comp(-0.9, -0.8, 0.5, 0.8),
        ],
    )
    .unwrap()
}

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            let v: f64 = rng.gen();
            return (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos();
        }
    }
}

/// Haar-like random orthogonal matrix: QR of a Gaussian matrix with the
/// sign fixed so R has a positive diagonal.
pub fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| standard_normal(rng));
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Random SPD matrix with eigenvalues log-uniform in `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = random_rotation(rng, d);
    let eigs = DVector::from_fn(d, |_, _| {
        let t: f64 = rng.gen();
        lo * (hi / lo).powf(t)
    });
    let m = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
    // Symmetrize away the roundoff so constructors accept it.
    0.5 * (&m + m.transpose())
}

pub fn random_mixture(rng: &mut ChaCha8Rng, d: usize, m: usize, spread: f64) -> GaussianMixture {
    let mut weights = Vec::with_capacity(m);
    for _ in 0..m {
        weights.push(rng.gen::<f64>() + 0.1);
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    let components = (0..m)
        .map(|_| {
            GaussianComponent::new(
                DVector::from_fn(d, |_, _| spread * standard_normal(rng)),
                random_spd(rng, d, 0.2, 2.0),
            )
            .unwrap()
        })
        .collect();
    GaussianMixture::new(weights, components).unwrap()
}

/// Four components in d = 10 whose covariances share a rank-3 range, so
/// every atom must stay on each component's affine subspace.
pub fn rank_deficient_mixture(seed: u64) -> GaussianMixture {
    let mut r = rng(seed);
    let d = 10;
    let rank = 3;
    let q = random_rotation(&mut r, d);
    let basis = q.columns(0, rank).into_owned();
    let components = (0..4)
        .map(|_| {
            let eigs = DVector::from_fn(rank, |_, _| 0.3 + 1.5 * r.gen::<f64>());
            let cov = &basis * DMatrix::from_diagonal(&eigs) * basis.transpose();
            let cov = 0.5 * (&cov + cov.transpose());
            let mean = DVector::from_fn(d, |_, _| 2.0 * standard_normal(&mut r));
            GaussianComponent::new(mean, cov).unwrap()
        })
        .collect();
    GaussianMixture::new(vec![0.3, 0.3, 0.2, 0.2], components).unwrap()
}

pub fn rotate_mixture(mixture: &GaussianMixture, q: &DMatrix<f64>) -> GaussianMixture {
    let components = mixture
        .components()
        .iter()
        .map(|c| {
            let cov = q * c.cov() * q.transpose();
            GaussianComponent::new(q * c.mean(), 0.5 * (&cov + cov.transpose())).unwrap()
        })
        .collect();
    GaussianMixture::new(mixture.weights().to_vec(), components).unwrap()
}

pub fn rotate_scheme(scheme: &Scheme, q: &DMatrix<f64>) -> Scheme {
    use gmq_core::{Axes, CrossScheme, GridScheme};
    let axes = scheme.axes();
    let rotated = Axes::new(
        q * axes.rotation(),
        axes.scales().clone(),
        q * axes.offset(),
    )
    .unwrap();
    match scheme {
        Scheme::Grid(g) => {
            Scheme::Grid(GridScheme::new(rotated, g.points_per_dim().to_vec()).unwrap())
        }
        Scheme::Cross(c) => Scheme::Cross(
            CrossScheme::new(
                rotated,
                c.thresholds().to_vec(),
                c.include_center(),
                c.sector_axes(),
            )
            .unwrap(),
        ),
    }
}

pub fn rotate_set(set: &SchemeSet, q: &DMatrix<f64>) -> SchemeSet {
    use gmq_core::SchemeSetEntry;
    let entries = set
        .entries()
        .iter()
        .map(|e| SchemeSetEntry {
            scheme: rotate_scheme(&e.scheme, q),
            members: e.members.clone(),
            anchor: e.anchor.as_ref().map(|a| q * a),
            budget: e.budget,
        })
        .collect();
    SchemeSet::new(entries, set.n_components()).unwrap()
}
