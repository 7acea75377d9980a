//! End-to-end inference: sparse completion, symmetry, refinement, patch-wise
//! upsampling, outlier filtering and input preservation.

use std::time::Instant;

use serde::Serialize;

use crate::cloud::{denormalize, normalize_to_unit_sphere, stage_rng, PipelineConfig, Point3, PointCloud, Rng, SymPlane};
use crate::data::patches::{frame_points, neighbourhood, unframe_points};
use crate::error::{Error, Result};
use crate::networks::{symmetry_gate, Model};
use crate::spatial::{fps, radius_outlier_removal, random_downsample_indices, SpatialIndex};

/// Wall time of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompletionResult {
    /// Refined sparse completion, in the input frame.
    #[serde(skip)]
    pub sparse: PointCloud,
    /// Exactly `n_dense` points, in the input frame.
    #[serde(skip)]
    pub dense: PointCloud,
    /// Predicted plane in the input frame; `None` when SymNet is disabled.
    pub plane: Option<SymPlane>,
    pub gate_passed: bool,
    pub timings: Vec<StageTiming>,
}

impl CompletionResult {
    /// Equality of everything except timings.
    pub fn same_output(&self, other: &CompletionResult) -> bool {
        self.sparse == other.sparse
            && self.dense == other.dense
            && self.plane == other.plane
            && self.gate_passed == other.gate_passed
    }
}

/// Ball-query patches around FPS seeds of `seed_source`, framed as
/// `(p - seed) / r`. Seeds with empty balls are skipped and the next FPS
/// seed is tried; fewer than half of `n_patches` is a coverage error.
pub fn extract_patches(
    cloud: &PointCloud,
    seed_source: &PointCloud,
    n_patches: usize,
    r: f64,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<(Point3, PointCloud)>> {
    extract_patches_with(cloud, seed_source, n_patches, r, k, false, rng)
}

/// [`extract_patches`], or with `knn_mode` the `k` nearest points of each
/// seed (still framed by `r`).
pub fn extract_patches_with(
    cloud: &PointCloud,
    seed_source: &PointCloud,
    n_patches: usize,
    r: f64,
    k: usize,
    knn_mode: bool,
    rng: &mut Rng,
) -> Result<Vec<(Point3, PointCloud)>> {
    if n_patches == 0 {
        return Err(Error::Config("n_patches must be at least 1".into()));
    }
    cloud.ensure_non_empty("patch cloud")?;
    seed_source.ensure_non_empty("seed source")?;
    // A full FPS ordering: its prefix is the plain n_patches FPS and the tail
    // supplies replacement seeds.
    let order = fps(seed_source.points(), seed_source.len(), rng)?;
    let index = SpatialIndex::from_cloud(cloud);
    let mut out = Vec::with_capacity(n_patches);
    for i in order {
        if out.len() == n_patches {
            break;
        }
        let seed = seed_source.points()[i];
        let idx = match neighbourhood(&index, seed, r, k, knn_mode, rng) {
            Ok((idx, _)) => idx,
            Err(Error::EmptyPatch { .. }) => continue,
            Err(e) => return Err(e),
        };
        let pts: Vec<Point3> = idx.iter().map(|&j| cloud.points()[j]).collect();
        out.push((seed, PointCloud::new(frame_points(&pts, seed, r))?));
    }
    if out.len() * 2 < n_patches {
        return Err(Error::Coverage(format!(
            "only {} of {n_patches} patches are non-empty at radius {r}",
            out.len()
        )));
    }
    Ok(out)
}

/// Maps framed patches back (`p · r + seed`) and concatenates them in order.
pub fn merge_patches(patches: &[(Point3, PointCloud)], r: f64) -> PointCloud {
    let mut pts = Vec::with_capacity(patches.iter().map(|(_, p)| p.len()).sum());
    for (seed, patch) in patches {
        pts.extend(unframe_points(patch.points(), *seed, r));
    }
    PointCloud::from_points_unchecked(pts)
}

/// `fps(dense ∪ partial ∪ mirrored, n)`.
pub fn preserve_input(
    dense: &PointCloud,
    partial: &PointCloud,
    mirrored: &PointCloud,
    n: usize,
    rng: &mut Rng,
) -> Result<PointCloud> {
    let union = dense.concat(partial).concat(mirrored);
    if n > union.len() {
        return Err(Error::Cardinality(format!(
            "cannot keep {n} points from a union of {}",
            union.len()
        )));
    }
    Ok(union.select(&fps(union.points(), n, rng)?))
}

/// FPS down to `n`, or every point plus random duplicates when short.
fn resample_to(cloud: &PointCloud, n: usize, rng: &mut Rng) -> Result<PointCloud> {
    if cloud.len() >= n {
        return Ok(cloud.select(&fps(cloud.points(), n, rng)?));
    }
    cloud.ensure_non_empty("dense cloud")?;
    let mut idx: Vec<usize> = (0..cloud.len()).collect();
    idx.extend(random_downsample_indices(cloud.len(), n - cloud.len(), rng));
    Ok(cloud.select(&idx))
}

// Stream ids of the per-stage RNGs.
const RNG_REFINE: u64 = 1;
const RNG_PATCHES: u64 = 2;
const RNG_PRESERVE: u64 = 3;

struct Clock {
    timings: Vec<StageTiming>,
    last: Instant,
}

impl Clock {
    fn new() -> Self {
        Clock {
            timings: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage,
            ms: (now - self.last).as_secs_f64() * 1e3,
        });
        self.last = now;
    }
}

fn filter_stage(cloud: &PointCloud, r: f64, gamma: usize, stage: &'static str) -> Result<PointCloud> {
    let kept = radius_outlier_removal(cloud, r, gamma);
    if kept.is_empty() {
        return Err(Error::Stage {
            stage,
            msg: format!("outlier removal (r = {r}, gamma = {gamma}) removed all {} points", cloud.len()),
        });
    }
    Ok(kept)
}

/// Completes `partial` into `cfg.n_dense` points. Every random choice is
/// drawn from streams of `cfg.seed`, so equal inputs give equal outputs.
pub fn complete(model: &Model, partial: &PointCloud, cfg: &PipelineConfig) -> Result<CompletionResult> {
    cfg.validate()?;
    if model.n_sparse != cfg.n_sparse || model.patch_k != cfg.patch_k || model.up_ratio != cfg.up_ratio {
        return Err(Error::Config(format!(
            "model is sized for n_sparse {}, patch_k {}, up_ratio {} but the configuration asks for {}, {}, {}",
            model.n_sparse, model.patch_k, model.up_ratio, cfg.n_sparse, cfg.patch_k, cfg.up_ratio
        )));
    }
    partial.ensure_non_empty("partial cloud")?;
    let ab = cfg.ablation;
    let mut clock = Clock::new();

    let (p, t) = normalize_to_unit_sphere(partial).map_err(|e| Error::stage("normalize", e))?;
    clock.lap("normalize");

    let mut s = model.sparse_complete(&p).map_err(|e| Error::stage("sparse_complete", e))?;
    clock.lap("sparse_complete");

    // P′ is P itself when SymNet is off or the gate rejects the plane.
    let mut plane = None;
    let mut gate_passed = false;
    let mut mirrored = p.clone();
    if !ab.disable_symnet {
        let pl = model.symnet_predict(&s).map_err(|e| Error::stage("symnet", e))?;
        let (m, passed) = symmetry_gate(&s, &pl, &p, cfg.tau).map_err(|e| Error::stage("symnet", e))?;
        mirrored = m;
        gate_passed = passed;
        plane = Some(pl);
    }
    clock.lap("symnet");

    if !ab.disable_resnet {
        let mut rng = stage_rng(cfg.seed, RNG_REFINE);
        s = model
            .refine_iterative(&s, &p, &mirrored, cfg.refine_iters, cfg.n_refine, &mut rng)
            .map_err(|e| Error::stage("refine", e))?;
    }
    clock.lap("refine");

    if !ab.disable_outlier_removal {
        s = filter_stage(&s, cfg.r_outlier_sparse, cfg.gamma, "sparse_outliers")?;
    }
    clock.lap("sparse_outliers");

    let mut rng = stage_rng(cfg.seed, RNG_PATCHES);
    let patches = extract_patches_with(&s, &s, cfg.patches_test, cfg.r_patch, cfg.patch_k, ab.knn_patches, &mut rng)
        .map_err(|e| Error::stage("extract_patches", e))?;
    clock.lap("extract_patches");

    let up: Vec<(Point3, PointCloud)> = patches
        .iter()
        .map(|(seed, patch)| Ok((*seed, model.upsample_patch(patch)?)))
        .collect::<Result<_>>()
        .map_err(|e| Error::stage("upsample", e))?;
    let mut dense = merge_patches(&up, cfg.r_patch);
    clock.lap("upsample");

    if !ab.disable_outlier_removal {
        dense = filter_stage(&dense, cfg.r_outlier, cfg.gamma, "dense_outliers")?;
    }
    clock.lap("dense_outliers");

    let mut rng = stage_rng(cfg.seed, RNG_PRESERVE);
    let pool = if ab.disable_input_preservation {
        dense
    } else {
        dense.concat(&p).concat(&mirrored)
    };
    let dense = resample_to(&pool, cfg.n_dense, &mut rng).map_err(|e| Error::stage("preserve_input", e))?;
    clock.lap("preserve_input");

    let result_dense = denormalize(&dense, &t);
    let result_sparse = denormalize(&s, &t);
    let plane = plane.map(|pl| t.invert_plane(&pl));
    clock.lap("denormalize");

    Ok(CompletionResult {
        sparse: result_sparse,
        dense: result_dense,
        plane,
        gate_passed,
        timings: clock.timings,
    })
}
