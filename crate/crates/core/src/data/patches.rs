//! Training patch pairs: a sparse-domain patch and the ground-truth dense
//! patch around the same seed.

use crate::cloud::{dist2, seeded_rng, Point3, PointCloud, Rng, PipelineConfig};
use crate::error::{Error, Result};
use crate::spatial::{ball_query, fps, SpatialIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub seed: Point3,
    /// `patch_k` points, framed as `(p - seed) / r_patch`.
    pub sparse: PointCloud,
    /// `patch_k · up_ratio` points in the same frame.
    pub dense: PointCloud,
    /// Radius of the region the sparse side was drawn from (unframed).
    pub sparse_radius: f64,
    /// Radius of the region the dense side was drawn from (unframed).
    pub dense_radius: f64,
}

/// Maps points into the seed-centred frame scaled by `1 / r`.
pub fn frame_points(points: &[Point3], seed: Point3, r: f64) -> Vec<Point3> {
    points
        .iter()
        .map(|p| [(p[0] - seed[0]) / r, (p[1] - seed[1]) / r, (p[2] - seed[2]) / r])
        .collect()
}

/// Inverse of [`frame_points`].
pub fn unframe_points(points: &[Point3], seed: Point3, r: f64) -> Vec<Point3> {
    points
        .iter()
        .map(|p| [p[0] * r + seed[0], p[1] * r + seed[1], p[2] * r + seed[2]])
        .collect()
}

/// Fixed-size neighbourhood of `seed`: a ball query, or the `count` nearest
/// points in k-NN mode. Returns the indices and the radius of the region.
pub fn neighbourhood(
    index: &SpatialIndex,
    seed: Point3,
    r: f64,
    count: usize,
    knn_mode: bool,
    rng: &mut Rng,
) -> Result<(Vec<usize>, f64)> {
    if knn_mode {
        let k = count.min(index.len());
        let mut idx = index.knn(seed, k)?;
        let radius = idx
            .last()
            .map_or(0.0, |&j| dist2(index.points()[j], seed).sqrt());
        // Pad by repetition when the cloud is smaller than `count`.
        let n = idx.len();
        for i in 0..count.saturating_sub(n) {
            idx.push(idx[i % n]);
        }
        Ok((idx, radius))
    } else {
        Ok((ball_query(index, seed, r, count, rng)?.indices, r))
    }
}

/// Patch pairs seeded by FPS over `gt_dense`. Seeds whose sparse side is
/// empty are skipped; fewer than `n_pairs / 2` usable pairs is an error.
pub fn make_patch_pairs(
    sparse_domain: &PointCloud,
    gt_dense: &PointCloud,
    n_pairs: usize,
    cfg: &PipelineConfig,
    rng: &mut Rng,
) -> Result<Vec<PatchPair>> {
    sparse_domain.ensure_non_empty("sparse domain")?;
    gt_dense.ensure_non_empty("dense ground truth")?;
    let n_seeds = n_pairs.min(gt_dense.len());
    let seeds = fps(gt_dense.points(), n_seeds, rng)?;
    let sparse_index = SpatialIndex::from_cloud(sparse_domain);
    let dense_index = SpatialIndex::from_cloud(gt_dense);
    let r = cfg.r_patch;
    let knn_mode = cfg.ablation.knn_patches;
    let mut pairs = Vec::with_capacity(n_seeds);
    for s in seeds {
        let seed = gt_dense.points()[s];
        let (sparse_idx, sparse_radius) =
            match neighbourhood(&sparse_index, seed, r, cfg.patch_k, knn_mode, rng) {
                Ok(v) => v,
                Err(Error::EmptyPatch { .. }) => continue,
                Err(e) => return Err(e),
            };
        let (dense_idx, dense_radius) =
            neighbourhood(&dense_index, seed, r, cfg.patch_k * cfg.up_ratio, knn_mode, rng)?;
        let sp: Vec<Point3> = sparse_idx.iter().map(|&i| sparse_domain.points()[i]).collect();
        let dp: Vec<Point3> = dense_idx.iter().map(|&i| gt_dense.points()[i]).collect();
        pairs.push(PatchPair {
            seed,
            sparse: PointCloud::new(frame_points(&sp, seed, r))?,
            dense: PointCloud::new(frame_points(&dp, seed, r))?,
            sparse_radius,
            dense_radius,
        });
    }
    if pairs.len() * 2 < n_pairs {
        return Err(Error::Data(format!(
            "only {} of {n_pairs} patch pairs have a non-empty sparse side",
            pairs.len()
        )));
    }
    Ok(pairs)
}

/// Overlap of the two regions a pair was cut from, measured on ground-truth
/// points: both regions are balls around the seed, so the intersection is
/// the smaller ball and the union the larger.
pub fn pair_iou(pair: &PatchPair, gt_index: &SpatialIndex) -> f64 {
    let (lo, hi) = if pair.sparse_radius <= pair.dense_radius {
        (pair.sparse_radius, pair.dense_radius)
    } else {
        (pair.dense_radius, pair.sparse_radius)
    };
    let union = gt_index.radius(pair.seed, hi).len();
    if union == 0 {
        return 1.0;
    }
    gt_index.radius(pair.seed, lo).len() as f64 / union as f64
}

/// Mean [`pair_iou`] over `pairs`.
pub fn mean_pair_iou(pairs: &[PatchPair], gt_dense: &PointCloud) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let index = SpatialIndex::from_cloud(gt_dense);
    pairs.iter().map(|p| pair_iou(p, &index)).sum::<f64>() / pairs.len() as f64
}

/// Deterministic helper for callers without an RNG at hand.
pub fn make_patch_pairs_seeded(
    sparse_domain: &PointCloud,
    gt_dense: &PointCloud,
    n_pairs: usize,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<PatchPair>> {
    make_patch_pairs(sparse_domain, gt_dense, n_pairs, cfg, &mut seeded_rng(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn sphere(n: usize, seed: u64) -> PointCloud {
        let mut rng = seeded_rng(seed);
        let pts = (0..n)
            .map(|_| {
                let z: f64 = rng.gen_range(-1.0..1.0);
                let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = (1.0 - z * z).sqrt();
                [r * a.cos(), r * a.sin(), z]
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn ball_pairs_from_subsample_have_unit_iou() {
        let dense = sphere(2048, 1);
        let idx: Vec<usize> = (0..2048).step_by(8).collect();
        let sparse = dense.select(&idx);
        let cfg = PipelineConfig::default();
        let pairs = make_patch_pairs_seeded(&sparse, &dense, 24, &cfg, 0).unwrap();
        assert_eq!(pairs.len(), 24);
        assert_eq!(mean_pair_iou(&pairs, &dense), 1.0);
        for p in &pairs {
            assert_eq!(p.sparse.len(), cfg.patch_k);
            assert_eq!(p.dense.len(), cfg.patch_k * cfg.up_ratio);
            for q in p.sparse.points().iter().chain(p.dense.points()) {
                assert!(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn knn_pairs_on_nonuniform_domain_overlap_less() {
        let dense = sphere(2048, 2);
        // Sparse domain crowded on one hemisphere.
        let idx: Vec<usize> = (0..2048)
            .filter(|&i| {
                let p = dense.points()[i];
                if p[2] > 0.0 { i % 3 == 0 } else { i % 24 == 0 }
            })
            .collect();
        let sparse = dense.select(&idx);
        let mut cfg = PipelineConfig::default();
        let ball = make_patch_pairs_seeded(&sparse, &dense, 24, &cfg, 0).unwrap();
        cfg.ablation.knn_patches = true;
        let knn = make_patch_pairs_seeded(&sparse, &dense, 24, &cfg, 0).unwrap();
        assert!(mean_pair_iou(&knn, &dense) < mean_pair_iou(&ball, &dense));
    }

    #[test]
    fn framing_round_trip() {
        let pts = vec![[0.3, -0.2, 0.9], [1.0, 1.0, 1.0]];
        let seed = [0.1, 0.2, 0.3];
        let back = unframe_points(&frame_points(&pts, seed, 0.35), seed, 0.35);
        for (a, b) in back.iter().zip(&pts) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn too_few_pairs_is_data_error() {
        let dense = sphere(512, 3);
        let far = PointCloud::new(vec![[50.0, 0.0, 0.0]]).unwrap();
        let cfg = PipelineConfig::default();
        assert!(matches!(
            make_patch_pairs_seeded(&far, &dense, 8, &cfg, 0),
            Err(Error::Data(_))
        ));
    }
}
