//! Automatic scheme construction.
//!
//! Two layers: picking an optimal grid layout for a single Gaussian
//! (factor the point budget across axes to minimize the predicted squared
//! transport error), and assembling a scheme set for a mixture (cluster
//! components by mode, allocate the budget across clusters by weight, and
//! approximate each multi-component mode with a local Gaussian).

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::distributions::{GaussianComponent, GaussianMixture};
use crate::error::{Error, Result};
use crate::quantize1d::LookupTable1D;
use crate::schemes::{Axes, CrossScheme, GridScheme, Scheme, SchemeSet, SchemeSetEntry};
use crate::special::chi_square_quantile;
use crate::spectral::SpectralDecomposition;

/// Largest problem the exhaustive layout search takes on; beyond this the
/// greedy allocator (with exchange repair) runs instead.
const EXACT_MAX_DIMS: usize = 4;
const EXACT_MAX_BUDGET: usize = 10_000;
/// Above this size the layout search scores candidates with a scaled
/// asymptotic tail anchored at the last tabulated distortion; the chosen
/// layout's reported error is always recomputed from the real table.
const SEARCH_TABLE_MAX: usize = 1024;
/// Exchange repair scans reductions of one axis down to at most this many
/// alternative sizes (plus the single-step reduction).
const REPAIR_SCAN_MAX: usize = 32;
const REPAIR_MAX_PASSES: usize = 100;

/// Fixed-point tolerance and cap for the mode-seeking iteration.
const MEAN_SHIFT_TOL: f64 = 1e-8;
const MEAN_SHIFT_MAX_ITERS: usize = 500;
/// Default relative commutator tolerance for calling a set of covariances
/// simultaneously diagonalizable.
pub const DEFAULT_HOMOGENEITY_TOL: f64 = 1e-9;
/// Per-component budgets round to coarse grid products, so the layout for
/// an individually quantized component may spend up to this factor over
/// its proportional share. Mode-level budgets are never slackened: the
/// requested total is a hard cap there.
pub const COMPONENT_BUDGET_SLACK: f64 = 1.5;

// ---------------------------------------------------------------------------
// Layout selection
// ---------------------------------------------------------------------------

/// A per-axis point allocation together with its predicted squared
/// transport error `sum_j lambda_j * distortion(n_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutCandidate {
    /// Points per axis, aligned with the input eigenvalue order.
    pub sizes_per_dim: Vec<usize>,
    pub predicted_sq_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutStrategy {
    /// Exhaustive for small problems, greedy otherwise.
    Auto,
    /// Enumerate every non-increasing factor tuple with product within the
    /// budget. Exponential in the number of axes; intended for few axes
    /// and moderate budgets.
    Exact,
    /// Repeated best-marginal-gain increments, then exchange repair.
    Greedy,
}

/// Choose how many points each axis receives.
///
/// `eigenvalues` are the per-axis variances, sorted in descending order;
/// zero entries (degenerate axes) are forced to a single point. The result
/// minimizes the predicted squared error among layouts whose total point
/// count stays within `budget`.
pub fn select_layout(
    eigenvalues: &[f64],
    budget: usize,
    table: &LookupTable1D,
) -> Result<LayoutCandidate> {
    select_layout_with(eigenvalues, budget, table, LayoutStrategy::Auto)
}

pub fn select_layout_with(
    eigenvalues: &[f64],
    budget: usize,
    table: &LookupTable1D,
    strategy: LayoutStrategy,
) -> Result<LayoutCandidate> {
    if budget == 0 {
        return Err(Error::BudgetTooSmall(
            "layout selection needs a budget of at least one point".into(),
        ));
    }
    if eigenvalues.is_empty() {
        return Err(Error::InvalidParameter("no eigenvalues given".into()));
    }
    if eigenvalues.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidParameter(
            "eigenvalues must be finite and nonnegative".into(),
        ));
    }
    if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter(
            "eigenvalues must be sorted in descending order".into(),
        ));
    }
    let positive = eigenvalues.iter().take_while(|l| **l > 0.0).count();
    let d = eigenvalues.len();
    let mut sizes = vec![1usize; d];
    if positive == 0 {
        return Ok(LayoutCandidate {
            sizes_per_dim: sizes,
            predicted_sq_error: 0.0,
        });
    }
    let lambda = &eigenvalues[..positive];
    let chosen = if positive == 1 {
        vec![budget]
    } else {
        let exact = match strategy {
            LayoutStrategy::Exact => true,
            LayoutStrategy::Greedy => false,
            LayoutStrategy::Auto => positive <= EXACT_MAX_DIMS && budget <= EXACT_MAX_BUDGET,
        };
        if exact {
            exact_layout(lambda, budget, table)?
        } else {
            greedy_layout(lambda, budget, table)?
        }
    };
    sizes[..positive].copy_from_slice(&chosen);
    // Report the error from the real table even where the search used the
    // asymptotic tail, so the prediction matches the later certificate.
    let mut predicted = 0.0;
    for (l, n) in lambda.iter().zip(&chosen) {
        predicted += l * table.distortion(*n)?;
    }
    Ok(LayoutCandidate {
        sizes_per_dim: sizes,
        predicted_sq_error: predicted,
    })
}

/// Distortion used while searching: exact table up to
/// [`SEARCH_TABLE_MAX`], then the `1/n^2` tail anchored at the boundary so
/// the score stays continuous and strictly decreasing.
fn search_distortion(n: usize, table: &LookupTable1D) -> Result<f64> {
    if n <= SEARCH_TABLE_MAX {
        table.distortion(n)
    } else {
        let anchor = table.distortion(SEARCH_TABLE_MAX)?;
        let ratio = SEARCH_TABLE_MAX as f64 / n as f64;
        Ok(anchor * ratio * ratio)
    }
}

/// `true` if `candidate` beats `best` under the tie rules: lower cost,
/// then larger total product, then lexicographically larger sizes.
fn layout_improves(
    candidate: (f64, u128, &[usize]),
    best: &Option<(f64, u128, Vec<usize>)>,
) -> bool {
    match best {
        None => true,
        Some((c0, p0, s0)) => {
            let (c, p, s) = candidate;
            c < *c0 || (c == *c0 && (p > *p0 || (p == *p0 && s > s0.as_slice())))
        }
    }
}

fn exact_layout(lambda: &[f64], budget: usize, table: &LookupTable1D) -> Result<Vec<usize>> {
    let p = lambda.len();
    let mut sizes = vec![1usize; p];
    let mut best: Option<(f64, u128, Vec<usize>)> = None;
    // Assign axes from the smallest-eigenvalue end; the first axis then
    // takes the largest factor that still fits, which makes every
    // enumerated tuple maximal.
    fn descend(
        lambda: &[f64],
        budget: u128,
        table: &LookupTable1D,
        axis: usize,
        tail_product: u128,
        sizes: &mut Vec<usize>,
        best: &mut Option<(f64, u128, Vec<usize>)>,
    ) -> Result<()> {
        if axis == 0 {
            sizes[0] = (budget / tail_product) as usize;
            let mut cost = 0.0;
            let mut product: u128 = 1;
            for (l, n) in lambda.iter().zip(sizes.iter()) {
                cost += l * table.distortion(*n)?;
                product *= *n as u128;
            }
            if layout_improves((cost, product, sizes), best) {
                *best = Some((cost, product, sizes.clone()));
            }
            return Ok(());
        }
        let lower = if axis + 1 < sizes.len() { sizes[axis + 1] } else { 1 };
        let mut v = lower;
        // Axes 0..=axis all need at least v points each.
        while (v as u128).pow(axis as u32 + 1) * tail_product <= budget {
            sizes[axis] = v;
            descend(lambda, budget, table, axis - 1, tail_product * v as u128, sizes, best)?;
            v += 1;
        }
        sizes[axis] = lower;
        Ok(())
    }
    descend(lambda, budget as u128, table, p - 1, 1, &mut sizes, &mut best)?;
    Ok(best.expect("at least the all-ones layout is feasible").2)
}

fn greedy_layout(lambda: &[f64], budget: usize, table: &LookupTable1D) -> Result<Vec<usize>> {
    let p = lambda.len();
    let mut memo: HashMap<usize, f64> = HashMap::new();
    let mut sizes = vec![1usize; p];
    greedy_fill(&mut sizes, None, lambda, budget as u128, table, &mut memo)?;
    let mut cost = search_cost(&sizes, lambda, table, &mut memo)?;

    // Exchange repair: the increment order can lock small factors in place
    // (committing to 2 points on a weak axis may forbid far better
    // refinements of the others). Shrink one axis to a candidate size,
    // greedily refill the freed budget across all axes, and keep the best
    // strictly improving outcome. Repeat until no move helps.
    for _ in 0..REPAIR_MAX_PASSES {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for j in 0..p {
            if sizes[j] < 2 {
                continue;
            }
            // Wide axes get a sparse candidate set to bound the scan.
            let candidates: Vec<usize> = if p <= 2 * EXACT_MAX_DIMS {
                let mut c: Vec<usize> = (1..sizes[j]).take(REPAIR_SCAN_MAX).collect();
                if *c.last().expect("sizes[j] >= 2") < sizes[j] - 1 {
                    c.push(sizes[j] - 1);
                }
                c
            } else {
                let mut c = vec![1, sizes[j] / 2, sizes[j] - 1];
                c.dedup();
                c.retain(|m| *m >= 1 && *m < sizes[j]);
                c
            };
            // Raise targets: every other axis on small problems, the
            // strongest few on wide ones (lambda is descending).
            let raise_limit = if p <= 2 * EXACT_MAX_DIMS { p } else { 4 };
            for m in candidates {
                let mut reduced = sizes.clone();
                reduced[j] = m;
                // Plain variant: refill the freed budget step by step. The
                // shrunk axis is pinned, or the fill would immediately walk
                // back into the configuration being escaped.
                let mut trial = reduced.clone();
                greedy_fill(&mut trial, Some(j), lambda, budget as u128, table, &mut memo)?;
                let c = search_cost(&trial, lambda, table, &mut memo)?;
                if c < cost && best.as_ref().map_or(true, |(bc, _)| c < *bc) {
                    best = Some((c, trial));
                }
                // Lopsided variants: push one axis as far as it goes first.
                // Marginal gains cannot see such jumps (a long run of small
                // per-step gains loses every pairwise comparison yet wins
                // in aggregate), so they get their own move family.
                for i in (0..raise_limit).filter(|i| *i != j) {
                    let mut trial = reduced.clone();
                    let base: u128 = trial
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != i)
                        .map(|(_, n)| *n as u128)
                        .product();
                    let v = (budget as u128 / base) as usize;
                    if v <= trial[i] {
                        continue;
                    }
                    trial[i] = v;
                    greedy_fill(&mut trial, Some(j), lambda, budget as u128, table, &mut memo)?;
                    let c = search_cost(&trial, lambda, table, &mut memo)?;
                    if c < cost && best.as_ref().map_or(true, |(bc, _)| c < *bc) {
                        best = Some((c, trial));
                    }
                }
            }
        }
        let Some((_, s)) = best else { break };
        sizes = s;
        // The accepted trial held its shrunk axis frozen; top off any slack
        // that axis can now reclaim (a pure gain, so cost keeps falling).
        greedy_fill(&mut sizes, None, lambda, budget as u128, table, &mut memo)?;
        cost = search_cost(&sizes, lambda, table, &mut memo)?;
    }
    Ok(sizes)
}

/// Repeatedly add a point to the axis with the best marginal gain until no
/// axis fits inside the budget. `frozen` exempts one axis from growth.
fn greedy_fill(
    sizes: &mut [usize],
    frozen: Option<usize>,
    lambda: &[f64],
    budget: u128,
    table: &LookupTable1D,
    memo: &mut HashMap<usize, f64>,
) -> Result<()> {
    let p = sizes.len();
    let mut product: u128 = sizes.iter().map(|n| *n as u128).product();
    loop {
        let mut pick: Option<(usize, f64)> = None;
        for j in 0..p {
            if frozen == Some(j) {
                continue;
            }
            let n = sizes[j] as u128;
            if product / n * (n + 1) > budget {
                continue;
            }
            let gain = lambda[j]
                * (memo_distortion(sizes[j], table, memo)?
                    - memo_distortion(sizes[j] + 1, table, memo)?);
            if pick.map_or(true, |(_, g)| gain > g) {
                pick = Some((j, gain));
            }
        }
        let Some((j, _)) = pick else { return Ok(()) };
        product = product / sizes[j] as u128 * (sizes[j] as u128 + 1);
        sizes[j] += 1;
    }
}

fn search_cost(
    sizes: &[usize],
    lambda: &[f64],
    table: &LookupTable1D,
    memo: &mut HashMap<usize, f64>,
) -> Result<f64> {
    let mut cost = 0.0;
    for (l, n) in lambda.iter().zip(sizes) {
        cost += l * memo_distortion(*n, table, memo)?;
    }
    Ok(cost)
}

fn memo_distortion(n: usize, table: &LookupTable1D, memo: &mut HashMap<usize, f64>) -> Result<f64> {
    if let Some(d) = memo.get(&n) {
        return Ok(*d);
    }
    let d = search_distortion(n, table)?;
    memo.insert(n, d);
    Ok(d)
}

// ---------------------------------------------------------------------------
// Single-Gaussian schemes
// ---------------------------------------------------------------------------

/// Which point pattern a generated scheme uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Grid,
    Cross,
}

/// Build a scheme for one Gaussian: frame from its spectral decomposition
/// (unit marginals on the nondegenerate axes), points from the budget.
pub fn generate_scheme_gaussian(
    component: &GaussianComponent,
    budget: usize,
    pattern: Pattern,
    table: &LookupTable1D,
) -> Result<Scheme> {
    if budget == 0 {
        return Err(Error::BudgetTooSmall(
            "scheme generation needs a budget of at least one point".into(),
        ));
    }
    let spectral = component.spectral();
    let d = component.dim();
    let mut scales = DVector::from_element(d, 1.0);
    for j in 0..spectral.rank() {
        scales[j] = spectral.eigenvalues()[j].sqrt();
    }
    let axes = Axes::new(spectral.basis().clone(), scales, component.mean().clone())?;
    match pattern {
        Pattern::Grid => {
            let layout = select_layout(spectral.eigenvalues().as_slice(), budget, table)?;
            Ok(Scheme::Grid(GridScheme::new(axes, layout.sizes_per_dim)?))
        }
        Pattern::Cross => {
            let nu = spectral.rank();
            if nu == 0 {
                return Err(Error::InvalidDistribution(
                    "a cross scheme needs at least one nondegenerate direction".into(),
                ));
            }
            let shells = budget / (2 * nu);
            if shells == 0 {
                return Err(Error::BudgetTooSmall(format!(
                    "a cross over {nu} axes needs at least {} points",
                    2 * nu
                )));
            }
            let include_center = budget - 2 * nu * shells >= 1;
            // Equal-mass radial bands: thresholds at quantiles of the
            // squared-radius distribution.
            let bands = shells + usize::from(include_center);
            let thresholds: Vec<f64> = (1..bands)
                .map(|k| chi_square_quantile(k as f64 / bands as f64, nu))
                .collect();
            Ok(Scheme::Cross(CrossScheme::new(
                axes,
                thresholds,
                include_center,
                nu,
            )?))
        }
    }
}

// ---------------------------------------------------------------------------
// Mode clustering
// ---------------------------------------------------------------------------

/// A group of mixture components sharing one density mode.
#[derive(Debug, Clone)]
pub struct ModeCluster {
    /// Location of the shared mode (a weighted mean under the degenerate
    /// fallback).
    pub mode: DVector<f64>,
    /// Component indices, sorted.
    pub members: Vec<usize>,
    /// Total mixture weight of the members.
    pub weight: f64,
    /// Whether the member covariances commute pairwise (checked with
    /// [`DEFAULT_HOMOGENEITY_TOL`]).
    pub homogeneous: bool,
    /// Eigenbasis of the weight-averaged member covariance when
    /// homogeneous.
    pub shared_basis: Option<DMatrix<f64>>,
}

/// Default merge distance: 1% of the root mean eigenvalue of the mixture
/// covariance, so the scale follows the data.
pub fn default_mode_merge_tol(mixture: &GaussianMixture) -> f64 {
    let cov = mixture.covariance();
    let d = cov.nrows() as f64;
    1e-2 * (cov.trace() / d).max(0.0).sqrt()
}

/// Group components by the density mode their means climb to.
///
/// Each component mean runs the fixed-point iteration
/// `x <- (sum_i w_i(x) P_i)^{-1} sum_i w_i(x) P_i mu_i` with
/// `w_i(x) = pi_i N(x; mu_i, Sigma_i)` and `P_i` the precisions, until the
/// step is below 1e-8 (capped at 500 iterations). Converged points within
/// `merge_tol` of each other (single linkage) share a cluster. Mixtures
/// with degenerate components fall back to single-linkage clustering of
/// the means themselves.
pub fn cluster_modes(mixture: &GaussianMixture, merge_tol: f64) -> Vec<ModeCluster> {
    let m = mixture.len();
    let points: Vec<DVector<f64>> = if mixture.has_degenerate_component() {
        mixture.components().iter().map(|c| c.mean().clone()).collect()
    } else {
        let precisions: Vec<DMatrix<f64>> = mixture
            .components()
            .iter()
            .map(|c| c.precision().expect("nondegenerate component"))
            .collect();
        mixture
            .components()
            .iter()
            .map(|c| mean_shift(mixture, &precisions, c.mean().clone()))
            .collect()
    };

    // Single-linkage merge of the converged points.
    let mut cluster_of: Vec<usize> = (0..m).collect();
    for i in 0..m {
        for j in i + 1..m {
            if (&points[i] - &points[j]).norm() <= merge_tol {
                let (a, b) = (cluster_of[i], cluster_of[j]);
                if a != b {
                    let target = a.min(b);
                    let from = a.max(b);
                    for c in cluster_of.iter_mut() {
                        if *c == from {
                            *c = target;
                        }
                    }
                }
            }
        }
    }

    let mut labels: Vec<usize> = cluster_of.clone();
    labels.sort_unstable();
    labels.dedup();
    labels
        .into_iter()
        .map(|label| {
            let members: Vec<usize> =
                (0..m).filter(|i| cluster_of[*i] == label).collect();
            let weight: f64 = members.iter().map(|&i| mixture.weights()[i]).sum();
            // The cluster's mode is the converged point with the highest
            // mixture density among its members.
            let mode = members
                .iter()
                .map(|&i| &points[i])
                .max_by(|a, b| {
                    let da = mixture.log_density(a).unwrap_or(f64::NEG_INFINITY);
                    let db = mixture.log_density(b).unwrap_or(f64::NEG_INFINITY);
                    da.partial_cmp(&db).expect("comparable densities")
                })
                .expect("nonempty cluster")
                .clone();
            let member_components: Vec<GaussianComponent> = members
                .iter()
                .map(|&i| mixture.component(i).clone())
                .collect();
            let member_weights: Vec<f64> = members
                .iter()
                .map(|&i| mixture.weights()[i] / weight)
                .collect();
            let (homogeneous, shared_basis) = homogeneity_check(
                &member_components,
                &member_weights,
                DEFAULT_HOMOGENEITY_TOL,
            );
            ModeCluster {
                mode,
                members,
                weight,
                homogeneous,
                shared_basis,
            }
        })
        .collect()
}

fn mean_shift(
    mixture: &GaussianMixture,
    precisions: &[DMatrix<f64>],
    start: DVector<f64>,
) -> DVector<f64> {
    let d = start.len();
    let mut x = start;
    for _ in 0..MEAN_SHIFT_MAX_ITERS {
        let (_, resp) = mixture
            .log_density_and_responsibilities(&x)
            .expect("nondegenerate components");
        let mut a = DMatrix::<f64>::zeros(d, d);
        let mut b = DVector::<f64>::zeros(d);
        for ((r, prec), comp) in resp.iter().zip(precisions).zip(mixture.components()) {
            if *r == 0.0 {
                continue;
            }
            a += prec.scale(*r);
            b += prec.scale(*r) * comp.mean();
        }
        let Some(chol) = Cholesky::new(a) else { break };
        let next = chol.solve(&b);
        let step = (&next - &x).norm();
        x = next;
        if step < MEAN_SHIFT_TOL {
            break;
        }
    }
    x
}

/// Check whether covariances commute pairwise (relative Frobenius
/// tolerance), i.e. share an orthogonal eigenbasis. On success the second
/// value is the eigenbasis of their weighted average.
pub fn homogeneity_check(
    components: &[GaussianComponent],
    weights: &[f64],
    tol: f64,
) -> (bool, Option<DMatrix<f64>>) {
    if components.is_empty() {
        return (true, None);
    }
    let norms: Vec<f64> = components.iter().map(|c| c.cov().norm()).collect();
    for i in 0..components.len() {
        for j in i + 1..components.len() {
            let (si, sj) = (components[i].cov(), components[j].cov());
            let commutator = si * sj - sj * si;
            if commutator.norm() > tol * norms[i] * norms[j] {
                return (false, None);
            }
        }
    }
    let d = components[0].dim();
    let mut avg = DMatrix::<f64>::zeros(d, d);
    for (c, w) in components.iter().zip(weights) {
        avg += c.cov().scale(*w);
    }
    match SpectralDecomposition::new(&avg) {
        Ok(s) => {
            let basis = s.basis().clone();
            (true, Some(basis))
        }
        Err(_) => (false, None),
    }
}

/// Local Gaussian for a cluster: the component itself when there is only
/// one; otherwise a curvature fit at the mode (inverse negative Hessian of
/// the log density), diagonalized in the cluster's shared basis, with the
/// weighted average of member covariances as fallback when the mode
/// curvature is not usable.
fn local_gaussian(mixture: &GaussianMixture, cluster: &ModeCluster) -> Result<GaussianComponent> {
    if cluster.members.len() == 1 {
        return Ok(mixture.component(cluster.members[0]).clone());
    }
    let d = mixture.dim();
    let curvature_cov = if mixture.has_degenerate_component() {
        None
    } else {
        mixture
            .log_density_grad_hess(&cluster.mode)
            .ok()
            .and_then(|(_, _, hess)| {
                let neg = -hess;
                let s = SpectralDecomposition::new(&neg).ok()?;
                if s.rank() < d {
                    return None;
                }
                let mut cov = DMatrix::<f64>::zeros(d, d);
                for j in 0..d {
                    let col = s.basis().column(j);
                    cov += (col * col.transpose()).scale(1.0 / s.eigenvalues()[j]);
                }
                Some(cov)
            })
    };
    let cov = curvature_cov.unwrap_or_else(|| {
        let mut avg = DMatrix::<f64>::zeros(d, d);
        for &i in &cluster.members {
            avg += mixture.component(i).cov().scale(mixture.weights()[i] / cluster.weight);
        }
        avg
    });
    // Align exactly with the members: drop the off-diagonal remainder in
    // the shared basis so every member's covariance is diagonal in the
    // generated frame.
    let cov = match &cluster.shared_basis {
        Some(b) => {
            let local = b.transpose() * &cov * b;
            let mut diag = DMatrix::<f64>::zeros(d, d);
            for j in 0..d {
                diag[(j, j)] = local[(j, j)].max(0.0);
            }
            b * diag * b.transpose()
        }
        None => cov,
    };
    GaussianComponent::new(cluster.mode.clone(), cov)
}

// ---------------------------------------------------------------------------
// Mixture schemes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct GenerateOptions {
    pub pattern: Pattern,
    /// `true`: one scheme per density mode (hard budget cap). `false`: one
    /// scheme per component, each sized proportionally to its weight with
    /// [`COMPONENT_BUDGET_SLACK`] layout headroom.
    pub per_mode: bool,
    /// Mode merge distance; `None` uses [`default_mode_merge_tol`].
    pub mode_merge_tol: Option<f64>,
    pub homogeneity_tol: f64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            pattern: Pattern::Grid,
            per_mode: true,
            mode_merge_tol: None,
            homogeneity_tol: DEFAULT_HOMOGENEITY_TOL,
        }
    }
}

/// Build a scheme set for a mixture.
///
/// Per-mode: components are clustered by mode, each cluster receives a
/// share of the budget (largest remainder, at least one point), and a
/// homogeneous cluster is covered by a single grid built from its local
/// Gaussian; heterogeneous or cross clusters fall back to per-component
/// schemes inside the cluster budget. The total support never exceeds the
/// requested budget. Per-component: every component gets its own scheme
/// with proportional sizing and layout headroom, so the total can exceed
/// the request by design.
pub fn generate_scheme_mixture(
    mixture: &GaussianMixture,
    budget: usize,
    opts: &GenerateOptions,
    table: &LookupTable1D,
) -> Result<SchemeSet> {
    let m = mixture.len();
    if !opts.per_mode {
        if budget < m {
            return Err(Error::BudgetTooSmall(format!(
                "budget {budget} cannot give {m} components a point each"
            )));
        }
        let shares = largest_remainder(mixture.weights(), budget);
        let mut entries = Vec::with_capacity(m);
        for (i, share) in shares.iter().enumerate() {
            let window = ((*share as f64) * COMPONENT_BUDGET_SLACK).floor() as usize;
            let comp = mixture.component(i);
            entries.push(SchemeSetEntry {
                scheme: generate_scheme_gaussian(comp, window.max(1), opts.pattern, table)?,
                members: vec![i],
                anchor: Some(comp.mean().clone()),
                budget: Some(*share),
            });
        }
        return SchemeSet::new(entries, m);
    }

    let merge_tol = opts
        .mode_merge_tol
        .unwrap_or_else(|| default_mode_merge_tol(mixture));
    let mut clusters = cluster_modes(mixture, merge_tol);
    if opts.homogeneity_tol != DEFAULT_HOMOGENEITY_TOL {
        for cluster in clusters.iter_mut() {
            let comps: Vec<GaussianComponent> = cluster
                .members
                .iter()
                .map(|&i| mixture.component(i).clone())
                .collect();
            let w: Vec<f64> = cluster
                .members
                .iter()
                .map(|&i| mixture.weights()[i] / cluster.weight)
                .collect();
            let (h, basis) = homogeneity_check(&comps, &w, opts.homogeneity_tol);
            cluster.homogeneous = h;
            cluster.shared_basis = basis;
        }
    }
    if budget < clusters.len() {
        return Err(Error::BudgetTooSmall(format!(
            "budget {budget} cannot give {} modes a point each",
            clusters.len()
        )));
    }
    let cluster_weights: Vec<f64> = clusters.iter().map(|c| c.weight).collect();
    let shares = largest_remainder(&cluster_weights, budget);

    let mut entries = Vec::new();
    for (cluster, share) in clusters.iter().zip(&shares) {
        if opts.pattern == Pattern::Grid && cluster.homogeneous {
            let local = local_gaussian(mixture, cluster)?;
            entries.push(SchemeSetEntry {
                scheme: generate_scheme_gaussian(&local, *share, Pattern::Grid, table)?,
                members: cluster.members.clone(),
                anchor: Some(cluster.mode.clone()),
                budget: Some(*share),
            });
            continue;
        }
        // Heterogeneous (or cross): per-component schemes inside the
        // cluster's share, still under the hard cap.
        if *share < cluster.members.len() {
            return Err(Error::BudgetTooSmall(format!(
                "mode share {share} cannot give {} member components a point each",
                cluster.members.len()
            )));
        }
        let member_weights: Vec<f64> = cluster
            .members
            .iter()
            .map(|&i| mixture.weights()[i] / cluster.weight)
            .collect();
        let member_shares = largest_remainder(&member_weights, *share);
        for (&i, &ni) in cluster.members.iter().zip(&member_shares) {
            let comp = mixture.component(i);
            entries.push(SchemeSetEntry {
                scheme: generate_scheme_gaussian(comp, ni, opts.pattern, table)?,
                members: vec![i],
                anchor: Some(cluster.mode.clone()),
                budget: Some(ni),
            });
        }
    }
    SchemeSet::new(entries, m)
}

/// Apportion `total` into integer parts proportional to `weights`, each
/// part at least 1, parts summing to `total` exactly. Remainders are
/// served largest first (ties to the earlier index).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let n = weights.len();
    debug_assert!(total >= n, "caller checks feasibility");
    let sum: f64 = weights.iter().sum();
    let mut parts = Vec::with_capacity(n);
    let mut fracs = Vec::with_capacity(n);
    let mut used = 0usize;
    for w in weights {
        let target = total as f64 * w / sum;
        let base = target.floor() as usize;
        parts.push(base);
        fracs.push(target - base as f64);
        used += base;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fracs[b].partial_cmp(&fracs[a]).expect("finite").then(a.cmp(&b)));
    for &i in order.iter().take(total - used) {
        parts[i] += 1;
    }
    // Floor of one point, funded by the largest allocations.
    loop {
        let Some(zero) = parts.iter().position(|p| *p == 0) else {
            return parts;
        };
        let donor = (0..n)
            .max_by(|&a, &b| parts[a].cmp(&parts[b]).then(b.cmp(&a)))
            .expect("nonempty");
        parts[donor] -= 1;
        parts[zero] += 1;
    }
}
