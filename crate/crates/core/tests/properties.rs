use proptest::prelude::*;

use splinediff::diffusion::{forward_marginal, make_schedule};
use splinediff::metrics::{
    depth_fidelity, fit_gaussian_stats, frechet_distance, GaussianStats,
};
use splinediff::numerics::{Rng, Tensor};
use splinediff::pda::{align, partition_params, AlignmentParams, Stage, StageConfig};
use splinediff::spline::{GridSpec, KnotGrid};

fn default_grid() -> KnotGrid {
    KnotGrid::try_from(GridSpec::default()).unwrap()
}

#[test]
fn partition_of_unity_on_a_thousand_points() {
    let grid = default_grid();
    let mut rng = Rng::new(99);
    for _ in 0..1000 {
        let x = rng.uniform_range(grid.lo(), grid.hi());
        let a = grid.active(x).unwrap();
        let s: f64 = a.values[..a.len].iter().sum();
        let ds: f64 = a.derivs[..a.len].iter().sum();
        assert!((s - 1.0).abs() <= 1e-12, "sum {s} at {x}");
        assert!(ds.abs() <= 1e-10, "derivative sum {ds} at {x}");
    }
}

#[test]
fn cardinal_cubic_values_at_every_knot() {
    let grid = default_grid();
    for j in 0..=grid.intervals() {
        let x = grid.lo() + j as f64 * grid.step();
        let a = grid.active(x).unwrap();
        let mut nz: Vec<f64> = a.values[..a.len].iter().copied().filter(|v| *v > 1e-15).collect();
        nz.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(nz.len(), 3, "x = {x}");
        assert!((nz[0] - 2.0 / 3.0).abs() <= 1e-12);
        assert!((nz[1] - 1.0 / 6.0).abs() <= 1e-12);
        assert!((nz[2] - 1.0 / 6.0).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn spline_identities_hold_for_any_grid(
        lo in -5.0f64..0.0,
        width in 0.5f64..10.0,
        intervals in 1usize..16,
        order in 1usize..5,
        u in 0.0f64..1.0,
    ) {
        let grid = KnotGrid::new(lo, lo + width, intervals, order).unwrap();
        let x = lo + u * width;
        let a = grid.active(x).unwrap();
        let s: f64 = a.values[..a.len].iter().sum();
        let ds: f64 = a.derivs[..a.len].iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
        prop_assert!(ds.abs() <= 1e-10 * (1.0 + 1.0 / grid.step()));
        prop_assert!(a.values[..a.len].iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn forward_process_moments() {
    let sched = make_schedule(100, 1e-3, 0.1).unwrap();
    let n = 100_000;
    let z0 = Tensor::full(&[n], 1.0);
    let mut rng = Rng::new(2024);
    for t in [1, 10, 40, 75, 100] {
        let (zt, _) = forward_marginal(&sched, &z0, t, &mut rng).unwrap();
        let ab = sched.alpha_bar(t);
        let mean = zt.mean();
        let var = zt.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - ab.sqrt()).abs() <= 0.01, "t={t} mean {mean} vs {}", ab.sqrt());
        assert!((var / (1.0 - ab) - 1.0).abs() <= 0.01, "t={t} var {var} vs {}", 1.0 - ab);
    }
    for t in 2..=100 {
        let r = sched.alpha_bar(t) / sched.alpha_bar(t - 1);
        assert!((r - (1.0 - sched.beta(t))).abs() <= 1e-12);
    }
}

fn random_stats(rng: &mut Rng, d: usize, seed: u64) -> GaussianStats {
    let mean: Vec<f64> = (0..d).map(|_| 2.0 * rng.gaussian()).collect();
    let a: Vec<f64> = (0..d * d).map(|_| rng.gaussian()).collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum::<f64>()
                + if i == j { 1e-2 } else { 0.0 };
        }
    }
    GaussianStats {
        mean: Tensor::new(vec![d], mean).unwrap(),
        cov: Tensor::new(vec![d, d], cov).unwrap(),
        n: 100,
        projection_seed: seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn frechet_symmetric_and_nonnegative(seed in any::<u64>(), d in 1usize..7) {
        let mut rng = Rng::new(seed);
        let a = random_stats(&mut rng, d, 7);
        let b = random_stats(&mut rng, d, 7);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0 && ba >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-8, "{ab} vs {ba}");
        prop_assert!(frechet_distance(&a, &a).unwrap() <= 1e-8);
    }

    #[test]
    fn translating_features_adds_squared_norm(seed in any::<u64>(), r in 0.0f64..5.0) {
        let mut rng = Rng::new(seed);
        let d = 4;
        let feats: Vec<Vec<f64>> = (0..40).map(|_| (0..d).map(|_| rng.gaussian()).collect()).collect();
        let dir: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let shifted: Vec<Vec<f64>> = feats
            .iter()
            .map(|f| f.iter().zip(&dir).map(|(x, u)| x + r * u / norm).collect())
            .collect();
        let a = GaussianStats::from_features(&feats, 0).unwrap();
        let b = GaussianStats::from_features(&shifted, 0).unwrap();
        let fd = frechet_distance(&a, &b).unwrap();
        prop_assert!((fd - r * r).abs() <= 1e-6, "{fd} vs {}", r * r);
    }

    #[test]
    fn fidelity_is_a_correlation(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let g = Tensor::from_fn(&[2, 1, 4, 4], |_| rng.uniform());
        let d = Tensor::from_fn(&[2, 1, 4, 4], |_| rng.uniform());
        let f = depth_fidelity(&g, &d).unwrap();
        prop_assert!((-1.0..=1.0).contains(&f.value));
        prop_assert!(!f.degenerate);
    }

    #[test]
    fn alignment_normalizes_backbone_moments(seed in any::<u64>(), g in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        let c = 3;
        let z = Tensor::from_fn(&[2, c, 4, 4], |_| 0.5 + 2.0 * rng.gaussian());
        let params = AlignmentParams {
            gamma: Tensor::full(&[c], g),
            align_eps: 1e-5,
        };
        let out = align(&z, &z, &params).unwrap();
        for ch in 0..c {
            let vals: Vec<f64> = (0..2)
                .flat_map(|a| {
                    let o = &out;
                    (0..16).map(move |i| o.data()[(a * c + ch) * 16 + i])
                })
                .collect();
            let src: Vec<f64> = (0..2)
                .flat_map(|a| {
                    let z = &z;
                    (0..16).map(move |i| z.data()[(a * c + ch) * 16 + i])
                })
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt();
            let sm = src.iter().sum::<f64>() / src.len() as f64;
            let var = src.iter().map(|v| (v - sm) * (v - sm)).sum::<f64>() / src.len() as f64;
            prop_assert!(m.abs() <= 1e-6);
            prop_assert!((sd - g.abs() * var.sqrt() / (var + 1e-5).sqrt()).abs() <= 1e-9);
            if var.sqrt() >= 0.1 {
                prop_assert!((sd - g.abs()).abs() <= 1e-3 * g.abs().max(1.0));
            }
        }
        let zero = AlignmentParams { gamma: Tensor::zeros(&[c]), align_eps: 1e-5 };
        prop_assert!(align(&z, &z, &zero).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stage_partition_is_a_partition(
        picks in prop::collection::vec((0usize..9, 0usize..50), 1..40),
        train_enc in any::<bool>(),
        injection in any::<bool>(),
    ) {
        const PREFIXES: [&str; 9] = [
            "asd.layer0.edge1.2.c", "asd.layer2.mlp.w1", "spatial.", "temporal.", "film.",
            "depth_encoder.conv1.", "align.gamma", "style.proj.", "head.",
        ];
        let mut names: Vec<String> = picks.iter().map(|(p, k)| format!("{}{k}", PREFIXES[*p])).collect();
        names.sort();
        names.dedup();
        let mut sc = StageConfig::new(if injection { Stage::Injection } else { Stage::Warmup });
        sc.train_depth_encoder = train_enc;
        let (tr, fr) = partition_params(names.iter().map(String::as_str), &sc);
        prop_assert_eq!(tr.len() + fr.len(), names.len());
        let mut all: Vec<String> = tr.iter().chain(&fr).cloned().collect();
        all.sort();
        prop_assert_eq!(&all, &names);
        prop_assert!(tr.iter().all(|n| !fr.contains(n)));
        if injection {
            prop_assert!(fr.iter().all(|n| !n.starts_with("asd.")));
            prop_assert!(tr.iter().all(|n| !n.starts_with("spatial.") && !n.starts_with("head.")));
        }
    }
}

#[test]
fn stats_are_order_invariant_and_reproducible() {
    let mut rng = Rng::new(5);
    let clips: Vec<Tensor> = (0..12).map(|_| Tensor::from_fn(&[2, 1, 4, 4], |_| rng.uniform())).collect();
    let a = fit_gaussian_stats(&clips, 11).unwrap();
    assert_eq!(a, fit_gaussian_stats(&clips, 11).unwrap());
    let mut shuffled = clips.clone();
    shuffled.reverse();
    shuffled.swap(0, 5);
    let b = fit_gaussian_stats(&shuffled, 11).unwrap();
    assert!(a.mean.max_abs_diff(&b.mean) <= 1e-9);
    assert!(a.cov.max_abs_diff(&b.cov) <= 1e-9);
    assert!(frechet_distance(&a, &b).unwrap() <= 1e-6);
}

#[test]
fn repeated_clip_leaves_only_shrinkage() {
    let c = Tensor::from_fn(&[2, 1, 4, 4], |i| i as f64 / 32.0);
    let s = fit_gaussian_stats(&vec![c; 6], 3).unwrap();
    let d = s.dim();
    for i in 0..d {
        for j in 0..d {
            let want = if i == j { 1e-6 } else { 0.0 };
            assert!((s.cov.data()[i * d + j] - want).abs() <= 1e-15);
        }
    }
}
