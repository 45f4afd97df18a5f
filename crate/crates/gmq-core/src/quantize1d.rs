//! Optimal quantization of the standard normal on the line.
//!
//! An n-point quantizer is the set of locations minimizing
//! `E min_i (X - c_i)^2` for `X ~ N(0, 1)`. For log-concave densities the
//! stationary point is unique, so Lloyd iteration from any sorted start
//! converges to the global optimum. Lloyd alone slows down badly for large
//! n (its contraction rate degrades as n grows), so after a short warm-up
//! we switch to a damped Newton solve on the stationarity residual; the
//! Hessian is symmetric tridiagonal and solves in O(n).
//!
//! Everything downstream consumes quantizers through [`LookupTable1D`],
//! which memoizes by size and can persist to JSON.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::special::{std_normal_cdf, std_normal_pdf, std_normal_quantile};

/// Convergence tolerance on the largest per-iteration location movement.
pub const LOCATION_TOL: f64 = 1e-12;
/// Hard iteration cap; hitting it is a [`Error::NonConvergence`].
pub const MAX_ITERS: usize = 100_000;
/// Leading coefficient of the large-n law `delta(n) ~ C / n^2` for the
/// standard normal (`pi * sqrt(3) / 2`).
pub const ZADOR_COEFF: f64 = 2.7206990463513265;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
/// Lloyd iterations before Newton is allowed to take over.
const NEWTON_MIN_WARMUP: usize = 10;
/// Movement threshold at which Newton takes over from Lloyd.
const NEWTON_SWITCH_MOVEMENT: f64 = 1e-3;
/// Newton takes over unconditionally after this many Lloyd iterations.
const NEWTON_FORCE_ITER: usize = 200;
/// Halvings of the Newton step before falling back to a Lloyd step.
const NEWTON_MAX_DAMPING: usize = 12;
/// Stationarity residual accepted when validating a loaded table entry.
const LOAD_RESIDUAL_TOL: f64 = 1e-8;
/// Relative mismatch accepted between stored and recomputed distortion.
const LOAD_DISTORTION_TOL: f64 = 1e-9;
/// Guard against absurd table requests.
const TABLE_MAX_N: usize = 1_000_000;

/// `P(a < X <= b)` for standard normal `X`, stable in both tails.
///
/// Endpoints may be infinite. Errors when `a > b` or an endpoint is NaN.
pub fn cell_prob(a: f64, b: f64) -> Result<f64> {
    check_interval(a, b)?;
    Ok(prob_between(a, b))
}

/// `E[(X - c)^2; a < X <= b]` in closed form:
/// `(1 + c^2) P + (a - 2c) phi(a) - (b - 2c) phi(b)`.
pub fn cell_cost(a: f64, b: f64, c: f64) -> Result<f64> {
    check_interval(a, b)?;
    if !c.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cell cost needs a finite center, got {c}"
        )));
    }
    Ok(cost_between(a, b, c))
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if a.is_nan() || b.is_nan() || a > b {
        return Err(Error::InvalidInterval { a, b });
    }
    Ok(())
}

fn prob_between(a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    if a >= 0.0 {
        // Same-side differences of the small tail keep relative accuracy.
        0.5 * (erfc_scaled(a) - erfc_scaled(b))
    } else if b <= 0.0 {
        0.5 * (erfc_scaled(-b) - erfc_scaled(-a))
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

fn erfc_scaled(x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else {
        crate::special::erfc(x / SQRT_2)
    }
}

fn cost_between(a: f64, b: f64, c: f64) -> f64 {
    let p = prob_between(a, b);
    let lo = edge_term(a, c);
    let hi = edge_term(b, c);
    ((1.0 + c * c) * p + lo - hi).max(0.0)
}

/// `(x - 2c) phi(x)` with the convention that it vanishes at infinity.
fn edge_term(x: f64, c: f64) -> f64 {
    if x.is_finite() {
        (x - 2.0 * c) * std_normal_pdf(x)
    } else {
        0.0
    }
}

/// Optimal n-point quantizer of the standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer1D {
    locations: Vec<f64>,
    edges: Vec<f64>,
    distortion: f64,
    iterations: usize,
}

impl Quantizer1D {
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Strictly increasing, antisymmetric about zero.
    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    /// `n + 1` cell boundaries including the infinite outer ones; interior
    /// edges are location midpoints.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Quantization error `E min_i (X - c_i)^2`.
    pub fn distortion(&self) -> f64 {
        self.distortion
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Index of the cell containing `x` (nearest location). Points exactly
    /// on an interior edge go to the right cell.
    pub fn quantize(&self, x: f64) -> usize {
        // Interior edges are self.edges[1..n]; count how many are <= x.
        let interior = &self.edges[1..self.len()];
        interior.partition_point(|e| *e <= x)
    }

    /// Probability of cell `i` under the standard normal.
    pub fn cell_probability(&self, i: usize) -> f64 {
        prob_between(self.edges[i], self.edges[i + 1])
    }

    /// Largest absolute stationarity residual `2 (c_i P_i - dphi_i)`; zero
    /// at the exact optimum.
    pub fn residual(&self) -> f64 {
        let (p, dphi, _) = cell_stats(&self.locations);
        self.locations
            .iter()
            .zip(p.iter().zip(&dphi))
            .map(|(c, (p, d))| (2.0 * (c * p - d)).abs())
            .fold(0.0, f64::max)
    }
}

fn edges_of(locations: &[f64]) -> Vec<f64> {
    let n = locations.len();
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(f64::NEG_INFINITY);
    for i in 0..n - 1 {
        edges.push(0.5 * (locations[i] + locations[i + 1]));
    }
    edges.push(f64::INFINITY);
    edges
}

/// Per-cell probabilities and `phi(lo) - phi(hi)` differences.
fn cell_stats(locations: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = locations.len();
    let edges = edges_of(locations);
    let pdfs: Vec<f64> = edges
        .iter()
        .map(|e| if e.is_finite() { std_normal_pdf(*e) } else { 0.0 })
        .collect();
    let mut p = Vec::with_capacity(n);
    let mut dphi = Vec::with_capacity(n);
    for i in 0..n {
        p.push(prob_between(edges[i], edges[i + 1]));
        dphi.push(pdfs[i] - pdfs[i + 1]);
    }
    (p, dphi, edges)
}

/// Exact antisymmetry: the optimum is symmetric, so average each location
/// against its mirrored partner. Keeps the middle of an odd quantizer at
/// exactly zero and removes accumulated asymmetric roundoff.
fn symmetrize(locations: &mut [f64]) {
    let n = locations.len();
    for i in 0..n / 2 {
        let v = 0.5 * (locations[i] - locations[n - 1 - i]);
        locations[i] = v;
        locations[n - 1 - i] = -v;
    }
    if n % 2 == 1 {
        locations[n / 2] = 0.0;
    }
}

fn residual_linf(locations: &[f64]) -> f64 {
    let (p, dphi, _) = cell_stats(locations);
    locations
        .iter()
        .zip(p.iter().zip(&dphi))
        .map(|(c, (p, d))| (2.0 * (c * p - d)).abs())
        .fold(0.0, f64::max)
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Solve the symmetric tridiagonal system `H x = rhs` (Thomas algorithm).
/// Returns None on a vanishing pivot.
fn solve_sym_tridiag(diag: &[f64], off: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    let mut denom = diag[0];
    if denom.abs() < 1e-300 {
        return None;
    }
    if n > 1 {
        c_prime[0] = off[0] / denom;
    }
    d_prime[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - off[i - 1] * c_prime[i - 1];
        if denom.abs() < 1e-300 {
            return None;
        }
        if i < n - 1 {
            c_prime[i] = off[i] / denom;
        }
        d_prime[i] = (rhs[i] - off[i - 1] * d_prime[i - 1]) / denom;
    }
    let mut x = d_prime;
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= c_prime[i] * next;
    }
    Some(x)
}

/// Compute the optimal n-point quantizer.
pub fn optimal_quantizer(n: usize) -> Result<Quantizer1D> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "quantizer size must be at least 1".into(),
        ));
    }
    if n > TABLE_MAX_N {
        return Err(Error::InvalidParameter(format!(
            "quantizer size {n} exceeds the supported maximum {TABLE_MAX_N}"
        )));
    }
    if n == 1 {
        return Ok(Quantizer1D {
            locations: vec![0.0],
            edges: vec![f64::NEG_INFINITY, f64::INFINITY],
            distortion: 1.0,
            iterations: 0,
        });
    }

    // Quantile seeding: already close to optimal and exactly symmetric.
    let mut c: Vec<f64> = (0..n)
        .map(|i| std_normal_quantile((i as f64 + 0.5) / n as f64))
        .collect();
    symmetrize(&mut c);

    let mut iterations = 0usize;
    let mut newton = false;
    loop {
        if iterations >= MAX_ITERS {
            return Err(Error::NonConvergence(iterations));
        }
        iterations += 1;
        let (p, dphi, edges) = cell_stats(&c);

        let movement = if !newton {
            let mut movement = 0.0_f64;
            for i in 0..n {
                if p[i] > 0.0 && p[i].is_finite() {
                    let next = dphi[i] / p[i];
                    movement = movement.max((next - c[i]).abs());
                    c[i] = next;
                }
            }
            symmetrize(&mut c);
            if iterations >= NEWTON_MIN_WARMUP
                && (movement < NEWTON_SWITCH_MOVEMENT || iterations >= NEWTON_FORCE_ITER)
            {
                newton = true;
            }
            movement
        } else {
            newton_step(&mut c, &p, &dphi, &edges)
        };

        if movement <= LOCATION_TOL {
            break;
        }
    }

    let edges = edges_of(&c);
    let costs: Vec<f64> = (0..n)
        .map(|i| cost_between(edges[i], edges[i + 1], c[i]))
        .collect();
    let distortion = pairwise_sum(&costs);
    Ok(Quantizer1D {
        locations: c,
        edges,
        distortion,
        iterations,
    })
}

/// One damped Newton step on the stationarity residual; falls back to a
/// Lloyd step when no damping level improves the residual. Returns the
/// location movement.
fn newton_step(c: &mut Vec<f64>, p: &[f64], dphi: &[f64], edges: &[f64]) -> f64 {
    let n = c.len();
    let g: Vec<f64> = (0..n).map(|i| 2.0 * (c[i] * p[i] - dphi[i])).collect();
    let g_max = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if g_max == 0.0 {
        return 0.0;
    }
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    for i in 0..n {
        let mut h = 2.0 * p[i];
        let lo = edges[i];
        let hi = edges[i + 1];
        if hi.is_finite() {
            h -= std_normal_pdf(hi) * (hi - c[i]);
        }
        if lo.is_finite() {
            h -= std_normal_pdf(lo) * (c[i] - lo);
        }
        diag[i] = h;
    }
    for i in 0..n - 1 {
        let e = edges[i + 1];
        off[i] = -std_normal_pdf(e) * (e - c[i]);
    }

    if let Some(delta) = solve_sym_tridiag(&diag, &off, &g) {
        let mut scale = 1.0;
        for _ in 0..NEWTON_MAX_DAMPING {
            let candidate: Vec<f64> = (0..n).map(|i| c[i] - scale * delta[i]).collect();
            if strictly_increasing(&candidate) && residual_linf(&candidate) < g_max {
                let movement = (0..n)
                    .map(|i| (candidate[i] - c[i]).abs())
                    .fold(0.0, f64::max);
                *c = candidate;
                symmetrize(c);
                return movement;
            }
            scale *= 0.5;
        }
    }

    // Lloyd fallback keeps making monotone progress when Newton misfires.
    let mut movement = 0.0_f64;
    for i in 0..n {
        if p[i] > 0.0 && p[i].is_finite() {
            let next = dphi[i] / p[i];
            movement = movement.max((next - c[i]).abs());
            c[i] = next;
        }
    }
    symmetrize(c);
    movement
}

// ---------------------------------------------------------------------------
// Memoizing table
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TableFile {
    version: u32,
    tolerance: f64,
    entries: BTreeMap<usize, TableEntry>,
}

#[derive(Serialize, Deserialize)]
struct TableEntry {
    locations: Vec<f64>,
    distortion: f64,
}

/// Size-indexed cache of optimal quantizers, shareable across threads.
///
/// `get` computes on demand and memoizes; `save`/`load` persist the table
/// as JSON (locations and distortion only; edges are midpoints and are
/// rebuilt on load). Loading revalidates every entry: monotone locations,
/// near-zero stationarity residual, and a distortion that matches a fresh
/// closed-form evaluation.
#[derive(Debug)]
pub struct LookupTable1D {
    entries: RwLock<BTreeMap<usize, Arc<Quantizer1D>>>,
}

impl Default for LookupTable1D {
    fn default() -> Self {
        Self::new()
    }
}

impl LookupTable1D {
    pub fn new() -> Self {
        LookupTable1D {
            entries: RwLock::new(BTreeMap::new()),
        }
    }

    /// Quantizer of size `n`, computed and cached on first use.
    pub fn get(&self, n: usize) -> Result<Arc<Quantizer1D>> {
        if let Some(q) = self.entries.read().expect("table lock").get(&n) {
            return Ok(q.clone());
        }
        let q = Arc::new(optimal_quantizer(n)?);
        let mut w = self.entries.write().expect("table lock");
        Ok(w.entry(n).or_insert(q).clone())
    }

    /// Quantization error of the optimal n-point quantizer.
    pub fn distortion(&self, n: usize) -> Result<f64> {
        Ok(self.get(n)?.distortion())
    }

    /// Number of cached sizes.
    pub fn len(&self) -> usize {
        self.entries.read().expect("table lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest cached size, if any.
    pub fn max_n(&self) -> Option<usize> {
        self.entries
            .read()
            .expect("table lock")
            .keys()
            .next_back()
            .copied()
    }

    /// Compute and cache every size in `sizes`.
    pub fn prewarm<I: IntoIterator<Item = usize>>(&self, sizes: I) -> Result<()> {
        for n in sizes {
            self.get(n)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries = self.entries.read().expect("table lock");
        let file = TableFile {
            version: 1,
            tolerance: LOCATION_TOL,
            entries: entries
                .iter()
                .map(|(n, q)| {
                    (
                        *n,
                        TableEntry {
                            locations: q.locations.clone(),
                            distortion: q.distortion,
                        },
                    )
                })
                .collect(),
        };
        let json = serde_json::to_string(&file)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: TableFile = serde_json::from_str(&text)?;
        if file.version != 1 {
            return Err(Error::CorruptTable(format!(
                "unsupported table version {}",
                file.version
            )));
        }
        let mut entries = BTreeMap::new();
        for (n, entry) in file.entries {
            let q = validate_entry(n, entry)?;
            entries.insert(n, Arc::new(q));
        }
        Ok(LookupTable1D {
            entries: RwLock::new(entries),
        })
    }
}

fn validate_entry(n: usize, entry: TableEntry) -> Result<Quantizer1D> {
    if n == 0 || entry.locations.len() != n {
        return Err(Error::CorruptTable(format!(
            "entry {n} has {} locations",
            entry.locations.len()
        )));
    }
    if entry.locations.iter().any(|v| !v.is_finite()) {
        return Err(Error::CorruptTable(format!(
            "entry {n} has a non-finite location"
        )));
    }
    if !strictly_increasing(&entry.locations) {
        return Err(Error::CorruptTable(format!(
            "entry {n} locations are not strictly increasing"
        )));
    }
    let residual = residual_linf(&entry.locations);
    if residual > LOAD_RESIDUAL_TOL {
        return Err(Error::CorruptTable(format!(
            "entry {n} stationarity residual {residual:.3e} is too large"
        )));
    }
    let edges = edges_of(&entry.locations);
    let costs: Vec<f64> = (0..n)
        .map(|i| cost_between(edges[i], edges[i + 1], entry.locations[i]))
        .collect();
    let recomputed = pairwise_sum(&costs);
    if (recomputed - entry.distortion).abs() > LOAD_DISTORTION_TOL * recomputed.max(1e-30) {
        return Err(Error::CorruptTable(format!(
            "entry {n} distortion {} does not match recomputed {recomputed}",
            entry.distortion
        )));
    }
    Ok(Quantizer1D {
        locations: entry.locations,
        edges,
        distortion: entry.distortion,
        iterations: 0,
    })
}
