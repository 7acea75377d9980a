mod common;

use pcc_core::cloud::{dist2, normalize_to_unit_sphere, norm, seeded_rng, Point3, PointCloud, SymPlane};
use pcc_core::data::io::{parse_ply, ply_bytes};
use pcc_core::metrics::{chamfer_l1, chamfer_l2, emd, f_score};
use pcc_core::networks::{Model, NetworkSpec};
use pcc_core::nn::{lr_at, LR_DECAY, LR_DECAY_EVERY};
use pcc_core::pipeline::complete;
use pcc_core::spatial::{fps_from, outlier_mask, reflect_points};
use pcc_core::PipelineConfig;
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Point3> {
    [-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64]
}

fn cloud(lo: usize, hi: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(point(), lo..hi)
}

fn plane() -> impl Strategy<Value = SymPlane> {
    (point(), -3.0..3.0f64)
        .prop_filter("non-degenerate normal", |(n, _)| norm(*n) > 1e-3)
        .prop_map(|(n, d)| SymPlane::new(n, d).unwrap())
}

fn pc(points: &[Point3]) -> PointCloud {
    PointCloud::new(points.to_vec()).unwrap()
}

/// Deterministic permutation of `0..n` from `key`.
fn permutation(n: usize, key: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by_key(|&i| (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ key);
    idx
}

proptest! {
    #[test]
    fn reflection_involution_and_isometry(pl in plane(), p in point(), q in point()) {
        let back = pl.reflect(pl.reflect(p));
        prop_assert!(dist2(back, p).sqrt() <= 1e-12);
        let d0 = dist2(p, q).sqrt();
        let d1 = dist2(pl.reflect(p), pl.reflect(q)).sqrt();
        prop_assert!((d0 - d1).abs() <= 1e-12);
        // Signed distance flips; the normalized plane reflects identically.
        prop_assert!((pl.signed_distance(pl.reflect(p)) + pl.signed_distance(p)).abs() <= 1e-12);
        prop_assert!(dist2(pl.normalized().unwrap().reflect(p), pl.reflect(p)).sqrt() <= 1e-12);
    }

    #[test]
    fn reflect_points_keeps_order(pts in cloud(1, 40), pl in plane()) {
        let out = reflect_points(&pc(&pts), &pl).unwrap();
        for (a, b) in pts.iter().zip(out.points()) {
            prop_assert_eq!(pl.reflect(*a), *b);
        }
    }

    #[test]
    fn chamfer_is_symmetric_and_permutation_invariant(a in cloud(1, 60), b in cloud(1, 60), key in any::<u64>()) {
        let (ca, cb) = (pc(&a), pc(&b));
        let perm = permutation(a.len(), key);
        let pa = pc(&perm.iter().map(|&i| a[i]).collect::<Vec<_>>());
        for f in [chamfer_l1, chamfer_l2] {
            let ab = f(&ca, &cb).unwrap();
            prop_assert!((ab - f(&cb, &ca).unwrap()).abs() <= 1e-12);
            prop_assert!((ab - f(&pa, &cb).unwrap()).abs() <= 1e-12);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(f(&ca, &ca).unwrap(), 0.0);
        }
    }

    #[test]
    fn emd_is_a_symmetric_bijection_bound(a in cloud(1, 24), b in cloud(24, 25), key in any::<u64>()) {
        let b = &b[..a.len()];
        let (ca, cb) = (pc(&a), pc(b));
        let (ab, asg) = emd(&ca, &cb).unwrap();
        let (ba, _) = emd(&cb, &ca).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9);
        let mut seen = asg.perm.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..a.len()).collect::<Vec<_>>());
        // The optimal matching costs no more than the identity matching, and
        // no less than either directional nearest-neighbour mean.
        let identity: f64 = a.iter().zip(b).map(|(p, q)| dist2(*p, *q).sqrt()).sum::<f64>() / a.len() as f64;
        prop_assert!(ab <= identity + 1e-12);
        prop_assert!(ab + 1e-12 >= chamfer_l1(&ca, &cb).unwrap() / 2.0);
        let perm = permutation(a.len(), key);
        let pa = pc(&perm.iter().map(|&i| a[i]).collect::<Vec<_>>());
        prop_assert!(emd(&pa, &ca).unwrap().0 <= 1e-12);
    }

    #[test]
    fn f_score_is_one_on_identical_clouds(a in cloud(1, 60), t in 1e-3..1.0f64) {
        prop_assert_eq!(f_score(&pc(&a), &pc(&a), t).unwrap(), 1.0);
    }

    #[test]
    fn fps_is_distinct_and_prefix_stable(a in cloud(2, 80), first in any::<prop::sample::Index>(), frac in 0.0..1.0f64) {
        let first = first.index(a.len());
        let k = 1 + ((a.len() - 1) as f64 * frac) as usize;
        let long = fps_from(&a, a.len(), first).unwrap();
        let short = fps_from(&a, k, first).unwrap();
        prop_assert_eq!(&long[..k], &short[..]);
        let mut s = long.clone();
        s.sort_unstable();
        s.dedup();
        prop_assert_eq!(s.len(), a.len());
        prop_assert_eq!(long[0], first);
    }

    #[test]
    fn outlier_survivors_shrink_with_gamma(a in cloud(1, 120), r in 0.05..1.5f64, gamma in 0usize..6) {
        let lo = outlier_mask(&a, r, gamma);
        let hi = outlier_mask(&a, r, gamma + 1);
        for (l, h) in lo.iter().zip(&hi) {
            prop_assert!(!h || *l);
        }
        prop_assert!(outlier_mask(&a, r, 0).iter().all(|&k| k));
    }

    #[test]
    fn normalization_round_trips(a in cloud(2, 60)) {
        let ca = pc(&a);
        prop_assume!(ca.bbox_diagonal() > 1e-6);
        let (n, t) = normalize_to_unit_sphere(&ca).unwrap();
        let c = n.centroid().unwrap();
        prop_assert!(norm(c) <= 1e-9);
        let far = n.points().iter().map(|&p| norm(p)).fold(0.0, f64::max);
        prop_assert!((far - 1.0).abs() <= 1e-9);
        for (p, q) in t.invert_cloud(&n).points().iter().zip(&a) {
            prop_assert!(dist2(*p, *q).sqrt() <= 1e-9);
        }
    }

    #[test]
    fn ply_round_trip_is_exact_in_f32(a in cloud(1, 50)) {
        let path = std::path::Path::new("mem.ply");
        let back = parse_ply(path, &ply_bytes(&pc(&a))).unwrap();
        let rounded: Vec<Point3> = a.iter().map(|p| p.map(|c| c as f32 as f64)).collect();
        prop_assert_eq!(back.points(), &rounded[..]);
        prop_assert_eq!(parse_ply(path, &ply_bytes(&back)).unwrap(), back);
    }

    #[test]
    fn lr_schedule_decays_stepwise(base in 1e-5..1.0f64, step in 0u64..20_000) {
        let want = base * LR_DECAY.powi((step / LR_DECAY_EVERY) as i32);
        prop_assert!((lr_at(base, step) - want).abs() <= 1e-15 * base.max(1.0));
    }
}

fn small_config() -> PipelineConfig {
    PipelineConfig {
        n_sparse: 32,
        n_dense: 256,
        n_refine: 96,
        patch_k: 16,
        up_ratio: 4,
        patches_test: 8,
        nets: NetworkSpec::tiny(),
        ..PipelineConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sparse_completion_ignores_point_order(a in cloud(16, 64), key in any::<u64>()) {
        let cfg = small_config();
        let model = Model::from_config(&cfg, 1).unwrap();
        let perm = permutation(a.len(), key);
        let pa = pc(&perm.iter().map(|&i| a[i]).collect::<Vec<_>>());
        prop_assert_eq!(model.sparse_complete(&pc(&a)).unwrap(), model.sparse_complete(&pa).unwrap());
    }

    #[test]
    fn completion_has_the_configured_size(a in cloud(16, 200), seed in 0u64..1000) {
        let mut cfg = small_config();
        cfg.seed = seed;
        let mut model = Model::from_config(&cfg, seed).unwrap();
        model.perturb(0.05, &mut seeded_rng(seed));
        let out = complete(&model, &pc(&a), &cfg);
        // A stage may legitimately empty the cloud; it must then say which.
        match out {
            Ok(r) => {
                prop_assert_eq!(r.dense.len(), cfg.n_dense);
                prop_assert!(r.sparse.len() <= cfg.n_sparse);
            }
            Err(pcc_core::Error::Stage { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}
