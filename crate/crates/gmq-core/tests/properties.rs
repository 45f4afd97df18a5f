//! Randomized invariant checks across the pipeline. Every test is seeded,
//! so failures replay deterministically.

mod common;

use common::*;
use gmq_core::discretize::{discretize_gaussian, discretize_mixture, DiscretizeOptions};
use gmq_core::oracle;
use gmq_core::scheme_gen::{
    generate_scheme_gaussian, generate_scheme_mixture, select_layout_with, GenerateOptions,
    LayoutStrategy, Pattern,
};
use gmq_core::wire;
use gmq_core::{Error, GaussianComponent, GaussianMixture, Scheme};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[test]
fn greedy_layout_matches_exact_enumeration() {
    let t = table();
    let mut r = rng(101);
    for trial in 0..1000 {
        let d = 1 + (r.gen::<u32>() as usize) % 3;
        let budget = 1 + (r.gen::<u32>() as usize) % 200;
        let mut eigs: Vec<f64> = (0..d)
            .map(|_| 10f64.powf(r.gen::<f64>() * 4.0 - 2.0))
            .collect();
        eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if r.gen::<f64>() < 0.2 {
            // Degenerate tail of zero eigenvalues.
            let z = 1 + (r.gen::<u32>() as usize) % d;
            for e in eigs.iter_mut().rev().take(z) {
                *e = 0.0;
            }
        }
        let exact = select_layout_with(&eigs, budget, t, LayoutStrategy::Exact).unwrap();
        let greedy = select_layout_with(&eigs, budget, t, LayoutStrategy::Greedy).unwrap();
        let product: usize = greedy.sizes_per_dim.iter().product();
        assert!(product <= budget, "trial {trial}: greedy exceeds budget");
        let tol = 1e-9 * exact.predicted_sq_error.max(1e-12);
        assert!(
            (greedy.predicted_sq_error - exact.predicted_sq_error).abs() <= tol,
            "trial {trial}: eigs {eigs:?} budget {budget}: greedy {:?} ({:.12}) vs exact {:?} ({:.12})",
            greedy.sizes_per_dim,
            greedy.predicted_sq_error,
            exact.sizes_per_dim,
            exact.predicted_sq_error,
        );
    }
}

#[test]
fn layout_prediction_matches_certificate() {
    let t = table();
    let mut r = rng(202);
    for trial in 0..200 {
        let d = 1 + (r.gen::<u32>() as usize) % 3;
        let budget = 1 + (r.gen::<u32>() as usize) % 64;
        let comp = GaussianComponent::new(
            DVector::from_fn(d, |_, _| 2.0 * standard_normal(&mut r)),
            random_spd(&mut r, d, 0.05, 5.0),
        )
        .unwrap();
        let scheme = match generate_scheme_gaussian(&comp, budget, Pattern::Grid, t) {
            Ok(s) => s,
            Err(e) => panic!("trial {trial}: generation failed: {e}"),
        };
        let res = discretize_gaussian(&comp, &scheme, t, &DiscretizeOptions::default()).unwrap();
        assert!(
            res.certificate.is_exact(),
            "trial {trial}: aligned grid must be exact"
        );
        // Reconstruct the predicted error from the scheme's own frame:
        // scales store sqrt(eigenvalue), already in layout order.
        let Scheme::Grid(g) = &scheme else {
            panic!("grid requested")
        };
        let predicted: f64 = g
            .axes()
            .scales()
            .iter()
            .zip(g.points_per_dim())
            .map(|(s, n)| s * s * t.distortion(*n).unwrap())
            .sum();
        let got = res.certificate.value().unwrap().powi(2);
        assert!(
            (got - predicted).abs() <= 1e-9 * predicted.max(1e-12),
            "trial {trial}: certificate^2 {got} vs layout prediction {predicted}"
        );
    }
}

#[test]
fn probability_closure_across_patterns() {
    let t = table();
    let mut r = rng(707);
    let mut ran = 0usize;
    let mut skipped = 0usize;
    for trial in 0..160 {
        let d = 1 + (r.gen::<u32>() as usize) % 3;
        let m = 1 + (r.gen::<u32>() as usize) % 4;
        let mixture = random_mixture(&mut r, d, m, 1.5);
        let opts = GenerateOptions {
            pattern: if trial % 2 == 0 {
                Pattern::Grid
            } else {
                Pattern::Cross
            },
            per_mode: (trial / 2) % 2 == 0,
            ..Default::default()
        };
        let budget = m * (2 * d + 2) + (r.gen::<u32>() as usize) % 40;
        let set = match generate_scheme_mixture(&mixture, budget, &opts, t) {
            Ok(s) => s,
            // A slim proportional share can be too small for a cross
            // pattern; that is a contract error, not a bug.
            Err(Error::BudgetTooSmall(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => panic!("trial {trial}: generation failed: {e}"),
        };
        let res = discretize_mixture(&mixture, &set, t, &DiscretizeOptions::default()).unwrap();
        let total: f64 = res.discrete.probs().iter().sum();
        assert!(
            (total - 1.0).abs() <= 1e-9,
            "trial {trial}: probabilities sum to {total}"
        );
        assert!(res.discrete.probs().iter().all(|p| *p >= 0.0));
        assert_eq!(res.per_component_sq_errors.len(), m);
        let v = res.certificate.value().unwrap();
        assert!(v.is_finite() && v >= 0.0, "trial {trial}: certificate {v}");
        ran += 1;
    }
    assert!(ran >= 100, "only {ran} trials ran ({skipped} skipped)");
}

#[test]
fn rotation_equivariance_of_probabilities_and_certificate() {
    let t = table();
    let mut r = rng(303);
    let mut ran = 0usize;
    for trial in 0..50 {
        let d = 1 + (r.gen::<u32>() as usize) % 3;
        let m = 1 + (r.gen::<u32>() as usize) % 3;
        let mixture = random_mixture(&mut r, d, m, 1.2);
        let opts = GenerateOptions {
            pattern: if trial % 3 == 0 {
                Pattern::Cross
            } else {
                Pattern::Grid
            },
            per_mode: trial % 2 == 0,
            ..Default::default()
        };
        let budget = m * (2 * d + 2) + (r.gen::<u32>() as usize) % 30;
        let set = match generate_scheme_mixture(&mixture, budget, &opts, t) {
            Ok(s) => s,
            Err(Error::BudgetTooSmall(_)) => continue,
            Err(e) => panic!("trial {trial}: generation failed: {e}"),
        };
        let q = random_rotation(&mut r, d);
        let base = discretize_mixture(&mixture, &set, t, &DiscretizeOptions::default()).unwrap();
        let rotated = discretize_mixture(
            &rotate_mixture(&mixture, &q),
            &rotate_set(&set, &q),
            t,
            &DiscretizeOptions::default(),
        )
        .unwrap();
        assert_eq!(base.discrete.len(), rotated.discrete.len());
        for (i, (a, b)) in base
            .discrete
            .probs()
            .iter()
            .zip(rotated.discrete.probs())
            .enumerate()
        {
            assert!(
                (a - b).abs() <= 1e-10,
                "trial {trial}: probability {i} moved {a} -> {b}"
            );
        }
        let (va, vb) = (
            base.certificate.value().unwrap(),
            rotated.certificate.value().unwrap(),
        );
        assert!(
            (va - vb).abs() <= 1e-10 * va.max(1.0),
            "trial {trial}: certificate moved {va} -> {vb}"
        );
        ran += 1;
    }
    assert!(ran >= 35, "only {ran} trials ran");
}

#[test]
fn certificate_dominates_mc_coupling() {
    let t = table();
    let mut r = rng(404);
    let mut ran = 0usize;
    for trial in 0..30 {
        let d = 1 + (r.gen::<u32>() as usize) % 3;
        let m = 1 + (r.gen::<u32>() as usize) % 3;
        let mixture = random_mixture(&mut r, d, m, 1.5);
        let opts = GenerateOptions {
            pattern: Pattern::Grid,
            per_mode: trial % 2 == 0,
            ..Default::default()
        };
        let budget = m + (r.gen::<u32>() as usize) % 40;
        let set = match generate_scheme_mixture(&mixture, budget, &opts, t) {
            Ok(s) => s,
            Err(Error::BudgetTooSmall(_)) => continue,
            Err(e) => panic!("trial {trial}: generation failed: {e}"),
        };
        let res = discretize_mixture(&mixture, &set, t, &DiscretizeOptions::default()).unwrap();
        let est = oracle::mc_coupling_cost(&mixture, &res.discrete, 20_000, 1000 + trial).unwrap();
        let cert = res.certificate.value().unwrap();
        assert!(
            est.value <= cert + 4.0 * est.std_error,
            "trial {trial}: MC {} +- {} above certificate {cert}",
            est.value,
            est.std_error
        );
        ran += 1;
    }
    assert!(ran >= 25, "only {ran} trials ran");
}

#[test]
fn compression_never_decreases_certificate() {
    let t = table();
    let mut r = rng(505);
    for trial in 0..20 {
        let d = 1 + (r.gen::<u32>() as usize) % 3;
        let m = 1 + (r.gen::<u32>() as usize) % 3;
        let mixture = random_mixture(&mut r, d, m, 1.0);
        let set = generate_scheme_mixture(
            &mixture,
            m * 12,
            &GenerateOptions::default(),
            t,
        )
        .unwrap();
        let base = discretize_mixture(&mixture, &set, t, &DiscretizeOptions::default()).unwrap();
        for k in [1usize, 3, 7] {
            let opts = DiscretizeOptions {
                compress: Some(k),
                ..Default::default()
            };
            let res = discretize_mixture(&mixture, &set, t, &opts).unwrap();
            assert!(res.discrete.len() <= k);
            let total: f64 = res.discrete.probs().iter().sum();
            assert!(
                (total - 1.0).abs() <= 1e-9,
                "trial {trial} k {k}: total probability {total}"
            );
            assert!(
                res.certificate.value().unwrap() >= base.certificate.value().unwrap() - 1e-12,
                "trial {trial} k {k}: compression tightened the certificate"
            );
        }
    }
}

#[test]
fn grid_regions_partition_space() {
    let t = table();
    let mut r = rng(606);
    for trial in 0..3 {
        let d = 1 + trial % 3;
        let comp = GaussianComponent::new(
            DVector::from_fn(d, |_, _| standard_normal(&mut r)),
            random_spd(&mut r, d, 0.3, 3.0),
        )
        .unwrap();
        let scheme = generate_scheme_gaussian(&comp, 24, Pattern::Grid, t).unwrap();
        let res = discretize_gaussian(&comp, &scheme, t, &DiscretizeOptions::default()).unwrap();
        let grid = res.grid.expect("grid output");
        // Per-axis half-open interval edges (midpoints, infinite ends).
        let edges: Vec<Vec<f64>> = grid
            .axis_locations()
            .iter()
            .map(|locs| {
                let mut e = vec![f64::NEG_INFINITY];
                for w in locs.windows(2) {
                    e.push(0.5 * (w[0] + w[1]));
                }
                e.push(f64::INFINITY);
                e
            })
            .collect();
        let sizes = grid.points_per_dim();
        let cells = grid.len();
        for _ in 0..30_000 {
            let world = DVector::from_fn(d, |_, _| 3.0 * standard_normal(&mut r));
            let local = grid.axes().to_local(&world);
            let mut claims = 0usize;
            for flat in 0..cells {
                // Decode the odometer index, last axis fastest.
                let mut rest = flat;
                let mut inside = true;
                for j in (0..d).rev() {
                    let i = rest % sizes[j];
                    rest /= sizes[j];
                    if !(local[j] > edges[j][i] && local[j] <= edges[j][i + 1]) {
                        inside = false;
                        break;
                    }
                }
                claims += inside as usize;
            }
            assert_eq!(claims, 1, "trial {trial}: point claimed by {claims} cells");
        }
    }
}

#[test]
fn cross_regions_partition_space() {
    let t = table();
    let mut r = rng(909);
    for (trial, (d, nu)) in [(2usize, 2usize), (3, 3), (3, 2)].into_iter().enumerate() {
        let comp = GaussianComponent::new(
            DVector::from_fn(d, |_, _| standard_normal(&mut r)),
            random_spd(&mut r, d, 0.5, 2.0),
        )
        .unwrap();
        // Generated cross for the full-rank case; hand-built bands when the
        // sectors live on fewer axes than the ambient dimension.
        let scheme = if nu == d {
            match generate_scheme_gaussian(&comp, 4 * nu + 1, Pattern::Cross, t) {
                Ok(Scheme::Cross(c)) => c,
                other => panic!("trial {trial}: expected a cross, got {other:?}"),
            }
        } else {
            let thresholds = vec![
                gmq_core::special::chi_square_quantile(1.0 / 3.0, nu),
                gmq_core::special::chi_square_quantile(2.0 / 3.0, nu),
            ];
            gmq_core::CrossScheme::new(gmq_core::Axes::standard(d), thresholds, true, nu).unwrap()
        };
        let nu = scheme.sector_axes();
        let thresholds = scheme.thresholds().to_vec();
        let include_center = scheme.include_center();
        let bands = thresholds.len() + 1;
        for _ in 0..30_000 {
            let world = DVector::from_fn(d, |_, _| 2.5 * standard_normal(&mut r));
            let local = scheme.axes().to_local(&world);
            let r2: f64 = (0..nu).map(|j| local[j] * local[j]).sum();
            let mut claims = 0usize;
            for band in 0..bands {
                let lo = if band == 0 { 0.0 } else { thresholds[band - 1] };
                let hi = if band + 1 == bands {
                    f64::INFINITY
                } else {
                    thresholds[band]
                };
                let in_band = r2 >= lo && r2 < hi;
                if band == 0 && include_center {
                    claims += in_band as usize;
                    continue;
                }
                for axis in 0..nu {
                    let dominant =
                        (0..nu).all(|j| j == axis || local[axis].abs() > local[j].abs());
                    for sign in [1.0f64, -1.0] {
                        let member = in_band && dominant && local[axis] * sign > 0.0;
                        claims += member as usize;
                    }
                }
            }
            assert_eq!(claims, 1, "trial {trial}: point claimed by {claims} regions");
        }
    }
}

#[test]
fn table_distortion_monotone_and_bounded() {
    let t = table();
    let zador = std::f64::consts::PI * 3f64.sqrt() / 2.0;
    let mut prev = t.distortion(1).unwrap();
    assert_eq!(prev, 1.0);
    let mut prev_scaled = prev;
    for n in 2..=128usize {
        let d = t.distortion(n).unwrap();
        assert!(d < prev, "distortion({n}) = {d} not below {prev}");
        let scaled = (n * n) as f64 * d;
        assert!(
            scaled < zador,
            "n^2 distortion({n}) = {scaled} exceeds the asymptote {zador}"
        );
        assert!(
            scaled > prev_scaled,
            "n^2 distortion({n}) = {scaled} not approaching the asymptote from below"
        );
        prev = d;
        prev_scaled = scaled;
    }
}

#[test]
fn budget_apportionment_is_exhaustive_with_floors() {
    let t = table();
    let mut r = rng(808);
    for trial in 0..20 {
        let d = 1 + (r.gen::<u32>() as usize) % 3;
        let m = 2 + (r.gen::<u32>() as usize) % 4;
        let mixture = random_mixture(&mut r, d, m, 2.0);
        let budget = m + (r.gen::<u32>() as usize) % 60;

        let per_mode = generate_scheme_mixture(&mixture, budget, &GenerateOptions::default(), t);
        if let Ok(set) = per_mode {
            let support: usize = set.entries().iter().map(|e| e.scheme.support_size()).sum();
            assert!(support <= budget, "trial {trial}: per-mode support {support} over {budget}");
            let allotted: usize = set.entries().iter().map(|e| e.budget.unwrap()).sum();
            assert!(allotted <= budget);
            assert!(set.entries().iter().all(|e| e.budget.unwrap() >= 1));
        }

        let per_comp = generate_scheme_mixture(
            &mixture,
            budget,
            &GenerateOptions {
                per_mode: false,
                ..Default::default()
            },
            t,
        )
        .unwrap();
        assert_eq!(per_comp.entries().len(), m);
        let allotted: usize = per_comp.entries().iter().map(|e| e.budget.unwrap()).sum();
        assert_eq!(allotted, budget, "trial {trial}: shares must sum to the request");
        assert!(per_comp.entries().iter().all(|e| e.budget.unwrap() >= 1));
    }
}

#[test]
fn cluster_count_is_permutation_and_translation_invariant() {
    use gmq_core::scheme_gen::cluster_modes;
    let mut r = rng(111);
    for _ in 0..15 {
        let d = 1 + (r.gen::<u32>() as usize) % 3;
        let m = 2 + (r.gen::<u32>() as usize) % 4;
        let mixture = random_mixture(&mut r, d, m, 1.2);
        let tol = gmq_core::scheme_gen::default_mode_merge_tol(&mixture);
        let base = cluster_modes(&mixture, tol).len();

        // Reverse the component order.
        let perm = GaussianMixture::new(
            mixture.weights().iter().rev().copied().collect(),
            mixture.components().iter().rev().cloned().collect(),
        )
        .unwrap();
        assert_eq!(cluster_modes(&perm, tol).len(), base);

        // Translate every mean by the same vector.
        let shift = DVector::from_fn(d, |_, _| 5.0 * standard_normal(&mut r));
        let moved = GaussianMixture::new(
            mixture.weights().to_vec(),
            mixture
                .components()
                .iter()
                .map(|c| GaussianComponent::new(c.mean() + &shift, c.cov().clone()).unwrap())
                .collect(),
        )
        .unwrap();
        assert_eq!(cluster_modes(&moved, tol).len(), base);
    }
}

#[test]
fn sampler_moments_match_mixture_moments() {
    let mixture = example_mixture();
    let sampler = oracle::MixtureSampler::new(&mixture, 2024);
    let n = 1_000_000usize;
    let d = mixture.dim();
    let mut mean = DVector::<f64>::zeros(d);
    let mut m2 = DMatrix::<f64>::zeros(d, d);
    let mut count = 0.0f64;
    sampler.for_each(n, |_, x| {
        count += 1.0;
        let delta = x - &mean;
        mean += &delta / count;
        let delta2 = x - &mean;
        m2 += delta * delta2.transpose();
    });
    let sample_cov = &m2 / (count - 1.0);
    let want_mean = mixture.mean();
    let want_cov = mixture.covariance();
    for j in 0..d {
        let se = (want_cov[(j, j)] / count).sqrt();
        assert!(
            (mean[j] - want_mean[j]).abs() <= 4.0 * se,
            "mean[{j}] {} vs {}",
            mean[j],
            want_mean[j]
        );
    }
    for i in 0..d {
        for j in 0..d {
            let se = ((want_cov[(i, i)] * want_cov[(j, j)] + want_cov[(i, j)].powi(2)) / count)
                .sqrt();
            assert!(
                (sample_cov[(i, j)] - want_cov[(i, j)]).abs() <= 4.0 * se,
                "cov[{i},{j}] {} vs {}",
                sample_cov[(i, j)],
                want_cov[(i, j)]
            );
        }
    }
}

#[test]
fn mc_estimates_replay_bit_identically() {
    let mixture = example_mixture();
    let atoms = gmq_core::DiscreteDistribution::new(
        vec![
            DVector::from_vec(vec![1.0, 1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
        ],
        vec![0.5, 0.5],
    )
    .unwrap();
    let a = oracle::mc_coupling_cost(&mixture, &atoms, 50_000, 9).unwrap();
    let b = oracle::mc_coupling_cost(&mixture, &atoms, 50_000, 9).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
}

#[test]
fn wire_formats_roundtrip_bit_exactly() {
    let t = table();
    let mut r = rng(1212);
    for trial in 0..50 {
        let d = 1 + (r.gen::<u32>() as usize) % 4;
        let m = 1 + (r.gen::<u32>() as usize) % 4;
        let mixture = random_mixture(&mut r, d, m, 1.3);
        let restored = wire::mixture_from_json(&wire::mixture_to_json(&mixture)).unwrap();
        assert_eq!(mixture.weights(), restored.weights(), "trial {trial}");
        for (a, b) in mixture.components().iter().zip(restored.components()) {
            assert_eq!(a.mean(), b.mean());
            assert_eq!(a.cov(), b.cov());
        }

        let pattern = if trial % 2 == 0 {
            Pattern::Grid
        } else {
            Pattern::Cross
        };
        let budget = m * (2 * d + 2) + (r.gen::<u32>() as usize) % 20;
        let set = match generate_scheme_mixture(
            &mixture,
            budget,
            &GenerateOptions {
                pattern,
                per_mode: false,
                ..Default::default()
            },
            t,
        ) {
            Ok(s) => s,
            Err(Error::BudgetTooSmall(_)) => continue,
            Err(e) => panic!("trial {trial}: {e}"),
        };
        let text = wire::scheme_set_to_json(&set);
        let restored_set = wire::scheme_draft_from_json(&text)
            .unwrap()
            .resolve(&mixture)
            .unwrap();
        assert_eq!(set, restored_set, "trial {trial}: scheme set drifted");

        let res = discretize_mixture(&mixture, &set, t, &DiscretizeOptions::default()).unwrap();
        let text = wire::discrete_to_json(&res.discrete);
        let restored_d = wire::discrete_from_json(&text).unwrap();
        assert_eq!(res.discrete, restored_d, "trial {trial}: discrete drifted");
    }
}

#[test]
fn scheme_sets_survive_reassignment_without_members() {
    // Dropping the member lists and re-resolving by nearest anchor must
    // reproduce the generator's assignment when anchors are distinct.
    let t = table();
    let mixture = example_mixture();
    let set = generate_scheme_mixture(&mixture, 20, &GenerateOptions::default(), t).unwrap();
    let mut value: serde_json::Value =
        serde_json::from_str(&wire::scheme_set_to_json(&set)).unwrap();
    for entry in value.as_array_mut().unwrap() {
        entry.as_object_mut().unwrap().remove("members");
    }
    let text = serde_json::to_string(&value).unwrap();
    let resolved = wire::scheme_draft_from_json(&text)
        .unwrap()
        .resolve(&mixture)
        .unwrap();
    let got: Vec<_> = resolved.entries().iter().map(|e| e.members.clone()).collect();
    let want: Vec<_> = set.entries().iter().map(|e| e.members.clone()).collect();
    assert_eq!(got, want);
}
