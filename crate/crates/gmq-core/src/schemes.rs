//! Quantization schemes: a local frame (orthogonal rotation, per-axis
//! scales, offset) plus a point layout, either a product grid of 1D
//! quantizer locations or a radial cross pattern of shells and axis atoms.
//!
//! Schemes are pure geometry: they say where support points go, never how
//! much mass they get. Mass assignment and certificates live in
//! [`crate::discretize`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::special::{chi_square_cdf, ln_gamma, reg_lower_gamma};

/// Max-abs-entry tolerance for accepting a rotation matrix as orthogonal.
pub const ORTHO_TOL: f64 = 1e-8;

/// Local frame: `world = rotation * diag(scales) * local + offset`.
///
/// The rotation must be orthogonal (reflections are fine) and the scales
/// strictly positive, so the map is always invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct Axes {
    rotation: DMatrix<f64>,
    scales: DVector<f64>,
    offset: DVector<f64>,
}

impl Axes {
    pub fn new(rotation: DMatrix<f64>, scales: DVector<f64>, offset: DVector<f64>) -> Result<Self> {
        let d = offset.len();
        if d == 0 {
            return Err(Error::InvalidAxes("zero-dimensional frame".into()));
        }
        if rotation.nrows() != d || rotation.ncols() != d || scales.len() != d {
            return Err(Error::InvalidAxes(format!(
                "dimension mismatch: rotation {}x{}, {} scales, offset dimension {d}",
                rotation.nrows(),
                rotation.ncols(),
                scales.len()
            )));
        }
        if rotation.iter().any(|v| !v.is_finite())
            || scales.iter().any(|v| !v.is_finite())
            || offset.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidAxes("non-finite frame entry".into()));
        }
        if scales.iter().any(|s| *s <= 0.0) {
            return Err(Error::InvalidAxes("scales must be strictly positive".into()));
        }
        let gram = rotation.transpose() * &rotation;
        let worst = (0..d)
            .flat_map(|r| (0..d).map(move |c| (r, c)))
            .map(|(r, c)| {
                let want = if r == c { 1.0 } else { 0.0 };
                (gram[(r, c)] - want).abs()
            })
            .fold(0.0, f64::max);
        if worst > ORTHO_TOL {
            return Err(Error::InvalidAxes(format!(
                "rotation is not orthogonal: max deviation {worst:.3e}"
            )));
        }
        Ok(Axes {
            rotation,
            scales,
            offset,
        })
    }

    /// Standard frame: identity rotation, unit scales, zero offset.
    pub fn standard(dim: usize) -> Self {
        Axes {
            rotation: DMatrix::identity(dim, dim),
            scales: DVector::from_element(dim, 1.0),
            offset: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn scales(&self) -> &DVector<f64> {
        &self.scales
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn to_world(&self, local: &DVector<f64>) -> DVector<f64> {
        let scaled = DVector::from_fn(self.dim(), |j, _| local[j] * self.scales[j]);
        &self.rotation * scaled + &self.offset
    }

    pub fn to_local(&self, world: &DVector<f64>) -> DVector<f64> {
        let centered = self.rotation.transpose() * (world - &self.offset);
        DVector::from_fn(self.dim(), |j, _| centered[j] / self.scales[j])
    }

    /// Mean and covariance of a Gaussian expressed in local coordinates.
    pub fn local_moments(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let m = self.to_local(mean);
        let rt_cov_r = self.rotation.transpose() * cov * &self.rotation;
        let c = DMatrix::from_fn(d, d, |r, cidx| {
            rt_cov_r[(r, cidx)] / (self.scales[r] * self.scales[cidx])
        });
        (m, c)
    }
}

/// Product grid: axis `j` carries the optimal `points_per_dim[j]`-point
/// quantizer locations in local coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GridScheme {
    axes: Axes,
    points_per_dim: Vec<usize>,
}

impl GridScheme {
    pub fn new(axes: Axes, points_per_dim: Vec<usize>) -> Result<Self> {
        if points_per_dim.len() != axes.dim() {
            return Err(Error::InvalidParameter(format!(
                "{} axis sizes for a {}-dimensional frame",
                points_per_dim.len(),
                axes.dim()
            )));
        }
        if points_per_dim.iter().any(|n| *n == 0) {
            return Err(Error::InvalidParameter(
                "every axis needs at least one point".into(),
            ));
        }
        let mut size = 1usize;
        for n in &points_per_dim {
            size = size.checked_mul(*n).ok_or_else(|| {
                Error::InvalidParameter("grid size overflows".into())
            })?;
        }
        Ok(GridScheme {
            axes,
            points_per_dim,
        })
    }

    pub fn axes(&self) -> &Axes {
        &self.axes
    }

    pub fn points_per_dim(&self) -> &[usize] {
        &self.points_per_dim
    }

    pub fn dim(&self) -> usize {
        self.axes.dim()
    }

    pub fn support_size(&self) -> usize {
        self.points_per_dim.iter().product()
    }
}

/// Per-band geometry of a cross scheme: probability mass and conditional
/// mean radius of each radial band under the design distribution (standard
/// normal on the sector axes).
#[derive(Debug, Clone)]
pub struct CrossBandStats {
    pub masses: Vec<f64>,
    pub radii: Vec<f64>,
}

/// Radial cross pattern: concentric bands split by squared-radius
/// thresholds, each band represented by atoms on the (signed) sector axes
/// at the band's conditional mean radius. With `include_center` the
/// innermost band collapses to a single atom at the local origin.
///
/// Sectors live on the first `sector_axes` local axes only; a scheme built
/// for a rank-deficient Gaussian keeps its flat directions atom-free.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossScheme {
    axes: Axes,
    thresholds: Vec<f64>,
    include_center: bool,
    sector_axes: usize,
}

impl CrossScheme {
    pub fn new(
        axes: Axes,
        thresholds: Vec<f64>,
        include_center: bool,
        sector_axes: usize,
    ) -> Result<Self> {
        if sector_axes == 0 || sector_axes > axes.dim() {
            return Err(Error::InvalidParameter(format!(
                "sector axes {sector_axes} out of range for dimension {}",
                axes.dim()
            )));
        }
        if thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidThresholds(
                "thresholds must be finite and positive".into(),
            ));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidThresholds(
                "thresholds must be strictly increasing".into(),
            ));
        }
        if include_center && thresholds.is_empty() {
            return Err(Error::InvalidThresholds(
                "a center atom needs at least one threshold around it".into(),
            ));
        }
        Ok(CrossScheme {
            axes,
            thresholds,
            include_center,
            sector_axes,
        })
    }

    pub fn axes(&self) -> &Axes {
        &self.axes
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn include_center(&self) -> bool {
        self.include_center
    }

    pub fn sector_axes(&self) -> usize {
        self.sector_axes
    }

    pub fn dim(&self) -> usize {
        self.axes.dim()
    }

    pub fn bands(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn support_size(&self) -> usize {
        let shells = self.bands() - usize::from(self.include_center);
        shells * 2 * self.sector_axes + usize::from(self.include_center)
    }

    /// Band masses and conditional mean radii under the design
    /// distribution: `R^2` is chi-square with `sector_axes` degrees of
    /// freedom, so masses come from the chi-square CDF and radii from
    /// regularized incomplete gamma ratios.
    pub fn band_stats(&self) -> CrossBandStats {
        let nu = self.sector_axes as f64;
        let bands = self.bands();
        let mut masses = Vec::with_capacity(bands);
        let mut radii = Vec::with_capacity(bands);
        // E[R] scaling factor sqrt(2) Gamma((nu+1)/2) / Gamma(nu/2).
        let mean_r = std::f64::consts::SQRT_2
            * (ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0)).exp();
        for k in 0..bands {
            let lo = if k == 0 { 0.0 } else { self.thresholds[k - 1] };
            let hi = if k == bands - 1 {
                f64::INFINITY
            } else {
                self.thresholds[k]
            };
            let mass = chi_square_cdf(hi, self.sector_axes) - chi_square_cdf(lo, self.sector_axes);
            let num = partial_gamma(nu / 2.0 + 0.5, lo / 2.0, hi / 2.0);
            let radius = if mass > 1e-300 {
                mean_r * num / mass
            } else {
                // Massless band: pick a representable radius, the atom gets
                // zero probability anyway.
                lo.sqrt()
            };
            masses.push(mass.max(0.0));
            radii.push(radius);
        }
        CrossBandStats { masses, radii }
    }

    /// Atom locations in local coordinates, paired with their design
    /// probabilities. Shell band mass splits uniformly over the
    /// `2 * sector_axes` signed axis atoms of that band; the order is
    /// band-major, then axis, then sign (+ before -).
    pub fn atoms_local(&self) -> Vec<(DVector<f64>, f64)> {
        let stats = self.band_stats();
        let d = self.dim();
        let sectors = 2 * self.sector_axes;
        let mut out = Vec::with_capacity(self.support_size());
        for (k, (mass, radius)) in stats.masses.iter().zip(&stats.radii).enumerate() {
            if k == 0 && self.include_center {
                out.push((DVector::zeros(d), *mass));
                continue;
            }
            let p = mass / sectors as f64;
            for axis in 0..self.sector_axes {
                for sign in [1.0, -1.0] {
                    let mut loc = DVector::zeros(d);
                    loc[axis] = sign * radius;
                    out.push((loc, p));
                }
            }
        }
        out
    }
}

/// `P(lo < G <= hi)` for `G ~ Gamma(a, 1)` via the regularized CDF.
fn partial_gamma(a: f64, lo: f64, hi: f64) -> f64 {
    let upper = if hi.is_finite() {
        reg_lower_gamma(a, hi)
    } else {
        1.0
    };
    (upper - reg_lower_gamma(a, lo)).max(0.0)
}

/// A frame with a layout.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    Grid(GridScheme),
    Cross(CrossScheme),
}

impl Scheme {
    pub fn dim(&self) -> usize {
        match self {
            Scheme::Grid(g) => g.dim(),
            Scheme::Cross(c) => c.dim(),
        }
    }

    pub fn axes(&self) -> &Axes {
        match self {
            Scheme::Grid(g) => g.axes(),
            Scheme::Cross(c) => c.axes(),
        }
    }

    pub fn support_size(&self) -> usize {
        match self {
            Scheme::Grid(g) => g.support_size(),
            Scheme::Cross(c) => c.support_size(),
        }
    }
}

/// One scheme covering a subset of mixture components.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSetEntry {
    pub scheme: Scheme,
    /// Component indices this entry quantizes, sorted ascending.
    pub members: Vec<usize>,
    /// World point the scheme is organized around (mode location or
    /// component mean); informational.
    pub anchor: Option<DVector<f64>>,
    /// Support budget the generator allotted this entry; informational.
    pub budget: Option<usize>,
}

/// A partition of a mixture's components into scheme entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSet {
    entries: Vec<SchemeSetEntry>,
}

impl SchemeSet {
    /// Entries must be non-empty, agree on dimension, and their member
    /// lists must partition `0..n_components` with no overlap or gap.
    pub fn new(mut entries: Vec<SchemeSetEntry>, n_components: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptySchemeSet);
        }
        let dim = entries[0].scheme.dim();
        if entries.iter().any(|e| e.scheme.dim() != dim) {
            return Err(Error::DimensionMismatch(
                "scheme entries have mixed dimensions".into(),
            ));
        }
        let mut seen = vec![false; n_components];
        for entry in entries.iter_mut() {
            entry.members.sort_unstable();
            if entry.members.is_empty() {
                return Err(Error::InvalidDistribution(
                    "scheme entry with no members".into(),
                ));
            }
            for &m in &entry.members {
                if m >= n_components {
                    return Err(Error::InvalidDistribution(format!(
                        "member index {m} out of range for {n_components} components"
                    )));
                }
                if seen[m] {
                    return Err(Error::InvalidDistribution(format!(
                        "component {m} appears in more than one entry"
                    )));
                }
                seen[m] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDistribution(format!(
                "component {missing} is not covered by any entry"
            )));
        }
        Ok(SchemeSet { entries })
    }

    /// Wrap a single scheme as the lone entry covering every component.
    pub fn shared(scheme: Scheme, n_components: usize) -> Result<Self> {
        SchemeSet::new(
            vec![SchemeSetEntry {
                scheme,
                members: (0..n_components).collect(),
                anchor: None,
                budget: None,
            }],
            n_components,
        )
    }

    pub fn entries(&self) -> &[SchemeSetEntry] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries[0].scheme.dim()
    }

    pub fn support_size(&self) -> usize {
        self.entries.iter().map(|e| e.scheme.support_size()).sum()
    }

    pub fn n_components(&self) -> usize {
        self.entries.iter().map(|e| e.members.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn swap_axes_2d() -> Axes {
        Axes::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            DVector::from_vec(vec![0.5, 1.3]),
            DVector::from_vec(vec![-0.2, 0.2]),
        )
        .unwrap()
    }

    #[test]
    fn axes_validation() {
        let bad_rot = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(
            Axes::new(bad_rot, DVector::from_vec(vec![1.0, 1.0]), DVector::zeros(2)),
            Err(Error::InvalidAxes(_))
        ));
        let id = DMatrix::identity(2, 2);
        assert!(Axes::new(id.clone(), DVector::from_vec(vec![1.0, 0.0]), DVector::zeros(2)).is_err());
        assert!(Axes::new(id, DVector::from_vec(vec![1.0, -1.0]), DVector::zeros(2)).is_err());
    }

    #[test]
    fn world_local_roundtrip() {
        let axes = swap_axes_2d();
        let local = DVector::from_vec(vec![-0.6, -0.5]);
        let world = axes.to_world(&local);
        // rotation swaps coordinates: world = o + (s2*l2, s1*l1).
        assert!((world[0] - (-0.2 + 1.3 * -0.5)).abs() < 1e-15);
        assert!((world[1] - (0.2 + 0.5 * -0.6)).abs() < 1e-15);
        let back = axes.to_local(&world);
        assert!((back - local).norm() < 1e-14);
    }

    #[test]
    fn local_moments_standardize_matching_gaussian() {
        // A Gaussian whose eigenbasis matches the frame becomes standard.
        let axes = swap_axes_2d();
        let mean = axes.offset().clone();
        // cov = R diag(s^2) R^T with s = (0.5, 1.3) and swapped axes.
        let cov = DMatrix::from_row_slice(2, 2, &[1.69, 0.0, 0.0, 0.25]);
        let (m, c) = axes.local_moments(&mean, &cov);
        assert!(m.norm() < 1e-15);
        assert!((c - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn grid_support_and_validation() {
        let g = GridScheme::new(Axes::standard(3), vec![4, 3, 2]).unwrap();
        assert_eq!(g.support_size(), 24);
        assert!(GridScheme::new(Axes::standard(2), vec![4]).is_err());
        assert!(GridScheme::new(Axes::standard(2), vec![4, 0]).is_err());
        assert!(GridScheme::new(Axes::standard(2), vec![usize::MAX, 2]).is_err());
    }

    #[test]
    fn cross_support_sizes() {
        let axes = Axes::standard(2);
        let c = CrossScheme::new(axes.clone(), vec![1.0, 2.5], false, 2).unwrap();
        // 3 bands, 4 sectors each.
        assert_eq!(c.support_size(), 12);
        let c2 = CrossScheme::new(axes.clone(), vec![1.0, 2.5], true, 2).unwrap();
        // center atom + 2 shell bands.
        assert_eq!(c2.support_size(), 9);
        assert!(CrossScheme::new(axes.clone(), vec![], true, 2).is_err());
        assert!(CrossScheme::new(axes.clone(), vec![2.0, 1.0], false, 2).is_err());
        assert!(CrossScheme::new(axes, vec![1.0], false, 3).is_err());
    }

    #[test]
    fn cross_band_stats_partition_mass() {
        use crate::special::chi_square_quantile;
        // Equal-mass thresholds by construction.
        let m = 3usize;
        let thresholds: Vec<f64> = (1..=m)
            .map(|k| chi_square_quantile(k as f64 / (m + 1) as f64, 2))
            .collect();
        let c = CrossScheme::new(Axes::standard(2), thresholds, false, 2).unwrap();
        let stats = c.band_stats();
        assert_eq!(stats.masses.len(), 4);
        for mass in &stats.masses {
            assert!((mass - 0.25).abs() < 1e-10, "band mass {mass}");
        }
        // Radii strictly increase outward.
        for w in stats.radii.windows(2) {
            assert!(w[0] < w[1]);
        }
        // Overall mean radius recovers E[R] for chi(2): sqrt(pi/2).
        let mean_r: f64 = stats
            .masses
            .iter()
            .zip(&stats.radii)
            .map(|(m, r)| m * r)
            .sum();
        assert!((mean_r - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn cross_atoms_sum_to_one_and_sit_on_axes() {
        let c = CrossScheme::new(Axes::standard(3), vec![1.5, 4.0], true, 2).unwrap();
        let atoms = c.atoms_local();
        assert_eq!(atoms.len(), c.support_size());
        let total: f64 = atoms.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Center atom first with the inner band's mass.
        assert_eq!(atoms[0].0, DVector::zeros(3));
        // Sector axes only: coordinate 2 never carries an atom.
        for (loc, _) in &atoms {
            assert_eq!(loc[2], 0.0);
        }
    }

    #[test]
    fn scheme_set_partition_rules() {
        let scheme = |n| Scheme::Grid(GridScheme::new(Axes::standard(2), vec![n, 1]).unwrap());
        let entry = |s, members: Vec<usize>| SchemeSetEntry {
            scheme: s,
            members,
            anchor: None,
            budget: None,
        };
        let ok = SchemeSet::new(
            vec![entry(scheme(2), vec![0, 2]), entry(scheme(3), vec![1])],
            3,
        )
        .unwrap();
        assert_eq!(ok.support_size(), 5);
        assert_eq!(ok.n_components(), 3);
        // Overlap.
        assert!(SchemeSet::new(
            vec![entry(scheme(2), vec![0, 1]), entry(scheme(3), vec![1])],
            2
        )
        .is_err());
        // Gap.
        assert!(SchemeSet::new(vec![entry(scheme(2), vec![0])], 2).is_err());
        // Empty.
        assert!(SchemeSet::new(vec![], 1).is_err());
    }
}
