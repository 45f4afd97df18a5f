//! File formats.
//!
//! Everything is JSON with decimal doubles; emission uses shortest
//! round-trip formatting and parsing restores the exact bits, so
//! `parse(emit(x)) == x` holds for every number. Formats:
//!
//! - mixture: `{"weights":[...], "components":[{"mean":[...], "cov":[[...],...]},...]}`
//! - discrete distribution: `{"locations":[[...],...], "probs":[...]}`
//! - scheme: `{"type":"grid"|"cross", "axes":{"rotation":[[...],...], "scales":[...], "offset":[...]}, ...}`
//!   with `points_per_dim` for grids and `thresholds`/`include_center`/
//!   `sector_axes` for crosses
//! - scheme set: a JSON array of scheme objects, each optionally carrying
//!   `members` (component indices), `anchor`, and `budget`
//!
//! A scheme file may hold either a single scheme object (shared by every
//! component) or an array. Entries without explicit `members` receive
//! components by nearest anchor (ties to the lowest entry index), with the
//! frame offset standing in for a missing anchor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{DiscreteDistribution, GaussianComponent, GaussianMixture};
use crate::error::{Error, Result};
use crate::schemes::{Axes, CrossScheme, GridScheme, Scheme, SchemeSet, SchemeSetEntry};

#[derive(Serialize, Deserialize)]
struct MixtureFile {
    weights: Vec<f64>,
    components: Vec<ComponentFile>,
}

#[derive(Serialize, Deserialize)]
struct ComponentFile {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DiscreteFile {
    locations: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AxesFile {
    rotation: Vec<Vec<f64>>,
    scales: Vec<f64>,
    offset: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SchemeFile {
    Grid {
        axes: AxesFile,
        points_per_dim: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        members: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchor: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<usize>,
    },
    Cross {
        axes: AxesFile,
        thresholds: Vec<f64>,
        include_center: bool,
        sector_axes: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        members: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchor: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<usize>,
    },
}

// ---------------------------------------------------------------------------
// Matrix helpers
// ---------------------------------------------------------------------------

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidDistribution(format!("empty {what} matrix")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidDistribution(format!(
            "ragged rows in {what} matrix"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(n, cols, &flat))
}

// ---------------------------------------------------------------------------
// Mixtures
// ---------------------------------------------------------------------------

pub fn mixture_to_json(mixture: &GaussianMixture) -> String {
    let file = MixtureFile {
        weights: mixture.weights().to_vec(),
        components: mixture
            .components()
            .iter()
            .map(|c| ComponentFile {
                mean: c.mean().iter().copied().collect(),
                cov: matrix_to_rows(c.cov()),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("plain data serializes")
}

pub fn mixture_from_json(text: &str) -> Result<GaussianMixture> {
    let file: MixtureFile = serde_json::from_str(text)?;
    let components = file
        .components
        .into_iter()
        .map(|c| {
            GaussianComponent::new(
                DVector::from_vec(c.mean),
                rows_to_matrix(&c.cov, "covariance")?,
            )
            .map_err(reject_input)
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(file.weights, components).map_err(reject_input)
}

/// Whatever goes wrong while constructing a distribution read from a file
/// is the file's fault, even when the underlying check is numerical (an
/// indefinite covariance, say).
fn reject_input(e: Error) -> Error {
    if e.is_input_error() {
        e
    } else {
        Error::InvalidDistribution(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Discrete distributions
// ---------------------------------------------------------------------------

pub fn discrete_to_json(discrete: &DiscreteDistribution) -> String {
    let file = DiscreteFile {
        locations: discrete
            .locations()
            .iter()
            .map(|l| l.iter().copied().collect())
            .collect(),
        probs: discrete.probs().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("plain data serializes")
}

pub fn discrete_from_json(text: &str) -> Result<DiscreteDistribution> {
    let file: DiscreteFile = serde_json::from_str(text)?;
    let dim = file.locations.first().map_or(0, |l| l.len());
    if file.locations.iter().any(|l| l.len() != dim) {
        return Err(Error::InvalidDistribution(
            "support points of mixed dimension".into(),
        ));
    }
    DiscreteDistribution::new(
        file.locations.into_iter().map(DVector::from_vec).collect(),
        file.probs,
    )
}

// ---------------------------------------------------------------------------
// Schemes
// ---------------------------------------------------------------------------

fn axes_to_file(axes: &Axes) -> AxesFile {
    AxesFile {
        rotation: matrix_to_rows(axes.rotation()),
        scales: axes.scales().iter().copied().collect(),
        offset: axes.offset().iter().copied().collect(),
    }
}

fn axes_from_file(file: &AxesFile) -> Result<Axes> {
    Axes::new(
        rows_to_matrix(&file.rotation, "rotation")?,
        DVector::from_vec(file.scales.clone()),
        DVector::from_vec(file.offset.clone()),
    )
}

fn scheme_to_file(scheme: &Scheme, entry: Option<&SchemeSetEntry>) -> SchemeFile {
    let members = entry.map(|e| e.members.clone());
    let anchor = entry.and_then(|e| e.anchor.as_ref().map(|a| a.iter().copied().collect()));
    let budget = entry.and_then(|e| e.budget);
    match scheme {
        Scheme::Grid(g) => SchemeFile::Grid {
            axes: axes_to_file(g.axes()),
            points_per_dim: g.points_per_dim().to_vec(),
            members,
            anchor,
            budget,
        },
        Scheme::Cross(c) => SchemeFile::Cross {
            axes: axes_to_file(c.axes()),
            thresholds: c.thresholds().to_vec(),
            include_center: c.include_center(),
            sector_axes: c.sector_axes(),
            members,
            anchor,
            budget,
        },
    }
}

fn scheme_from_file(file: SchemeFile) -> Result<(Scheme, Option<Vec<usize>>, Option<DVector<f64>>, Option<usize>)> {
    match file {
        SchemeFile::Grid {
            axes,
            points_per_dim,
            members,
            anchor,
            budget,
        } => Ok((
            Scheme::Grid(GridScheme::new(axes_from_file(&axes)?, points_per_dim)?),
            members,
            anchor.map(DVector::from_vec),
            budget,
        )),
        SchemeFile::Cross {
            axes,
            thresholds,
            include_center,
            sector_axes,
            members,
            anchor,
            budget,
        } => Ok((
            Scheme::Cross(CrossScheme::new(
                axes_from_file(&axes)?,
                thresholds,
                include_center,
                sector_axes,
            )?),
            members,
            anchor.map(DVector::from_vec),
            budget,
        )),
    }
}

pub fn scheme_to_json(scheme: &Scheme) -> String {
    serde_json::to_string_pretty(&scheme_to_file(scheme, None)).expect("plain data serializes")
}

pub fn scheme_set_to_json(set: &SchemeSet) -> String {
    let files: Vec<SchemeFile> = set
        .entries()
        .iter()
        .map(|e| scheme_to_file(&e.scheme, Some(e)))
        .collect();
    serde_json::to_string_pretty(&files).expect("plain data serializes")
}

/// A parsed scheme file before component assignment: one or more schemes,
/// each with optional membership metadata.
pub struct SchemeDraft {
    entries: Vec<(Scheme, Option<Vec<usize>>, Option<DVector<f64>>, Option<usize>)>,
}

impl SchemeDraft {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The scheme itself when the file holds exactly one.
    pub fn single(&self) -> Option<&Scheme> {
        match self.entries.as_slice() {
            [(scheme, ..)] => Some(scheme),
            _ => None,
        }
    }

    /// Bind the draft to a mixture: explicit member lists are honored,
    /// remaining components go to the entry with the nearest anchor (frame
    /// offset when no anchor was stored; ties to the lowest entry index).
    pub fn resolve(self, mixture: &GaussianMixture) -> Result<SchemeSet> {
        let m = mixture.len();
        let mut assigned: Vec<Option<usize>> = vec![None; m];
        for (e, (_, members, _, _)) in self.entries.iter().enumerate() {
            if let Some(members) = members {
                for &i in members {
                    if i >= m {
                        return Err(Error::InvalidDistribution(format!(
                            "scheme entry {e} names component {i}, mixture has {m}"
                        )));
                    }
                    if assigned[i].is_some() {
                        return Err(Error::InvalidDistribution(format!(
                            "component {i} claimed by two scheme entries"
                        )));
                    }
                    assigned[i] = Some(e);
                }
            }
        }
        for (i, slot) in assigned.iter_mut().enumerate() {
            if slot.is_some() {
                continue;
            }
            let mean = mixture.component(i).mean();
            let mut best: Option<(usize, f64)> = None;
            for (e, (scheme, members, anchor, _)) in self.entries.iter().enumerate() {
                if members.is_some() {
                    continue; // explicit lists are closed
                }
                let center = anchor.as_ref().unwrap_or_else(|| scheme.axes().offset());
                let dist = (mean - center).norm();
                if best.map_or(true, |(_, d)| dist < d) {
                    best = Some((e, dist));
                }
            }
            match best {
                Some((e, _)) => *slot = Some(e),
                None => {
                    return Err(Error::InvalidDistribution(format!(
                        "component {i} is not covered by any scheme entry"
                    )))
                }
            }
        }
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); self.entries.len()];
        for (i, slot) in assigned.iter().enumerate() {
            buckets[slot.expect("every component assigned")].push(i);
        }
        let entries: Vec<SchemeSetEntry> = self
            .entries
            .into_iter()
            .zip(buckets)
            .map(|((scheme, _, anchor, budget), members)| SchemeSetEntry {
                scheme,
                members,
                anchor,
                budget,
            })
            .collect();
        SchemeSet::new(entries, m)
    }
}

/// Parse a scheme file holding either one scheme object or an array.
pub fn scheme_draft_from_json(text: &str) -> Result<SchemeDraft> {
    let entries = if text.trim_start().starts_with('[') {
        let files: Vec<SchemeFile> = serde_json::from_str(text)?;
        if files.is_empty() {
            return Err(Error::EmptySchemeSet);
        }
        files
            .into_iter()
            .map(scheme_from_file)
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![scheme_from_file(serde_json::from_str(text)?)?]
    };
    Ok(SchemeDraft { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn awkward_mixture() -> GaussianMixture {
        // Weights and moments chosen to have no short decimal form.
        let w0 = 0.1 + 0.2;
        GaussianMixture::new(
            vec![w0, 1.0 - w0],
            vec![
                GaussianComponent::new(
                    DVector::from_vec(vec![std::f64::consts::PI, -1e-137]),
                    DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 0.1, 0.1, 2.0 / 7.0]),
                )
                .unwrap(),
                GaussianComponent::new(
                    DVector::from_vec(vec![6.02e23, 2.0_f64.sqrt()]),
                    DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, 0.7]),
                )
                .unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn mixture_roundtrip_is_bit_exact() {
        let mix = awkward_mixture();
        let restored = mixture_from_json(&mixture_to_json(&mix)).unwrap();
        assert_eq!(mix.weights(), restored.weights());
        for (a, b) in mix.components().iter().zip(restored.components()) {
            assert_eq!(a.mean(), b.mean());
            assert_eq!(a.cov(), b.cov());
        }
    }

    #[test]
    fn discrete_roundtrip_is_bit_exact() {
        let d = DiscreteDistribution::new(
            vec![
                DVector::from_vec(vec![0.1, 0.2]),
                DVector::from_vec(vec![-1.0 / 3.0, 1e-200]),
            ],
            vec![0.3, 0.7],
        )
        .unwrap();
        let restored = discrete_from_json(&discrete_to_json(&d)).unwrap();
        assert_eq!(d, restored);
    }

    #[test]
    fn grid_scheme_roundtrip() {
        let axes = Axes::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            DVector::from_vec(vec![0.5, 1.3]),
            DVector::from_vec(vec![-0.2, 0.2]),
        )
        .unwrap();
        let scheme = Scheme::Grid(GridScheme::new(axes, vec![3, 2]).unwrap());
        let text = scheme_to_json(&scheme);
        assert!(text.contains("\"type\": \"grid\""));
        let draft = scheme_draft_from_json(&text).unwrap();
        assert_eq!(draft.single(), Some(&scheme));
    }

    #[test]
    fn cross_scheme_roundtrip() {
        let scheme = Scheme::Cross(
            CrossScheme::new(Axes::standard(3), vec![0.9, 2.2], true, 2).unwrap(),
        );
        let text = scheme_to_json(&scheme);
        let draft = scheme_draft_from_json(&text).unwrap();
        assert_eq!(draft.single(), Some(&scheme));
    }

    #[test]
    fn scheme_set_roundtrip_keeps_members() {
        let mk = |x: f64, n: usize| {
            Scheme::Grid(
                GridScheme::new(
                    Axes::new(
                        DMatrix::identity(2, 2),
                        DVector::from_vec(vec![1.0, 1.0]),
                        DVector::from_vec(vec![x, 0.0]),
                    )
                    .unwrap(),
                    vec![n, n],
                )
                .unwrap(),
            )
        };
        let set = SchemeSet::new(
            vec![
                SchemeSetEntry {
                    scheme: mk(-2.0, 2),
                    members: vec![0, 2],
                    anchor: Some(DVector::from_vec(vec![-2.0, 0.0])),
                    budget: Some(4),
                },
                SchemeSetEntry {
                    scheme: mk(2.0, 3),
                    members: vec![1],
                    anchor: None,
                    budget: None,
                },
            ],
            3,
        )
        .unwrap();
        let text = scheme_set_to_json(&set);
        let mix = GaussianMixture::new(
            vec![0.4, 0.3, 0.3],
            vec![
                GaussianComponent::new(DVector::from_vec(vec![-2.0, 0.0]), DMatrix::identity(2, 2)).unwrap(),
                GaussianComponent::new(DVector::from_vec(vec![2.0, 0.0]), DMatrix::identity(2, 2)).unwrap(),
                GaussianComponent::new(DVector::from_vec(vec![-1.9, 0.1]), DMatrix::identity(2, 2)).unwrap(),
            ],
        )
        .unwrap();
        let restored = scheme_draft_from_json(&text).unwrap().resolve(&mix).unwrap();
        assert_eq!(restored.entries().len(), 2);
        assert_eq!(restored.entries()[0].members, vec![0, 2]);
        assert_eq!(restored.entries()[1].members, vec![1]);
        assert_eq!(restored.entries()[0].budget, Some(4));
    }

    #[test]
    fn missing_members_assign_by_nearest_anchor() {
        let mk = |x: f64| SchemeFile::Grid {
            axes: AxesFile {
                rotation: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                scales: vec![1.0, 1.0],
                offset: vec![x, 0.0],
            },
            points_per_dim: vec![2, 2],
            members: None,
            anchor: None,
            budget: None,
        };
        let text = serde_json::to_string(&vec![mk(-3.0), mk(3.0)]).unwrap();
        let mix = GaussianMixture::new(
            vec![0.5, 0.25, 0.25],
            vec![
                GaussianComponent::new(DVector::from_vec(vec![2.5, 0.0]), DMatrix::identity(2, 2)).unwrap(),
                GaussianComponent::new(DVector::from_vec(vec![-3.5, 1.0]), DMatrix::identity(2, 2)).unwrap(),
                GaussianComponent::new(DVector::from_vec(vec![4.0, 0.0]), DMatrix::identity(2, 2)).unwrap(),
            ],
        )
        .unwrap();
        let set = scheme_draft_from_json(&text).unwrap().resolve(&mix).unwrap();
        assert_eq!(set.entries()[0].members, vec![1]);
        assert_eq!(set.entries()[1].members, vec![0, 2]);
    }

    #[test]
    fn unclaimed_entry_is_rejected() {
        let text = scheme_to_json(&Scheme::Grid(
            GridScheme::new(Axes::standard(1), vec![2]).unwrap(),
        ));
        // Two identical single-scheme entries, one component: the second
        // entry cannot receive anything.
        let doubled = format!("[{text},{text}]");
        let mix = GaussianMixture::gaussian(
            GaussianComponent::new(DVector::from_vec(vec![0.0]), DMatrix::identity(1, 1)).unwrap(),
        );
        assert!(scheme_draft_from_json(&doubled).unwrap().resolve(&mix).is_err());
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(
            mixture_from_json("{\"weights\": [0.5,"),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            scheme_draft_from_json("{\"type\": \"hexagonal\"}"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn ragged_matrices_are_rejected() {
        let text = r#"{"weights":[1.0],"components":[{"mean":[0,0],"cov":[[1,0],[0]]}]}"#;
        assert!(matches!(
            mixture_from_json(text),
            Err(Error::InvalidDistribution(_))
        ));
    }
}
