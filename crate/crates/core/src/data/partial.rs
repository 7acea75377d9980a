//! Single-viewpoint partial scans simulated by depth culling in image space.

use rand::Rng as _;
use std::collections::HashSet;

use crate::cloud::{cross, dot, norm, scale, sub, Point3, PointCloud, Rng};
use crate::error::{Error, Result};
use crate::spatial::{random_downsample, SpatialIndex};

pub const VIEW_RADIUS: f64 = 3.0;
/// Image-space neighbourhood size of the visibility test.
pub const VIS_NEIGHBORS: usize = 16;
/// The neighbourhood is a disc expected to hold this many times
/// [`VIS_NEIGHBORS`] points, so that both surface layers show up in it.
pub const VIS_RADIUS_FACTOR: f64 = 4.0;
/// A point is visible when its depth is within this fraction of its
/// neighbourhood's depth range from the nearest neighbour depth.
pub const VIS_FRACTION: f64 = 0.6;
/// Depth slack below which a neighbourhood counts as a single surface.
pub const VIS_SLACK: f64 = 0.1;
pub const COVERAGE_GRID: usize = 8;
pub const COVERAGE_MIN: f64 = 0.3;
pub const COVERAGE_MAX: f64 = 0.7;
pub const MAX_VIEW_RETRIES: usize = 20;

/// Uniform direction on the sphere of radius [`VIEW_RADIUS`].
pub fn random_viewpoint(rng: &mut Rng) -> Point3 {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    [VIEW_RADIUS * r * a.cos(), VIEW_RADIUS * r * a.sin(), VIEW_RADIUS * z]
}

/// Indices of the points of `dense` visible from `viewpoint` (looking at
/// the origin), in increasing order.
pub fn visible_indices(dense: &PointCloud, viewpoint: Point3) -> Result<Vec<usize>> {
    dense.ensure_non_empty("dense cloud")?;
    let vlen = norm(viewpoint);
    if !(vlen > 0.0) {
        return Err(Error::Generation("viewpoint at the origin".into()));
    }
    let dir = scale(viewpoint, -1.0 / vlen);
    let helper = if dir[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = {
        let c = cross(dir, helper);
        scale(c, 1.0 / norm(c))
    };
    let e2 = cross(dir, e1);

    let mut depth = Vec::with_capacity(dense.len());
    let mut image = Vec::with_capacity(dense.len());
    for &p in dense.points() {
        let w = sub(p, viewpoint);
        let z = dot(w, dir);
        if z <= 1e-9 {
            return Err(Error::Generation("point behind the viewpoint".into()));
        }
        depth.push(z);
        image.push([dot(w, e1) / z, dot(w, e2) / z, 0.0]);
    }
    let index = SpatialIndex::new(&image);
    let k = VIS_NEIGHBORS.min(dense.len());
    let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for q in &image {
        lo_u = lo_u.min(q[0]);
        hi_u = hi_u.max(q[0]);
        lo_v = lo_v.min(q[1]);
        hi_v = hi_v.max(q[1]);
    }
    let area = (hi_u - lo_u) * (hi_v - lo_v);
    let rho = (VIS_RADIUS_FACTOR * k as f64 * area / (std::f64::consts::PI * dense.len() as f64)).sqrt();
    let mut keep = Vec::new();
    for (i, &q) in image.iter().enumerate() {
        let mut nbrs = index.radius(q, rho);
        if nbrs.len() < k {
            nbrs = index.knn(q, k)?;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &j in &nbrs {
            lo = lo.min(depth[j]);
            hi = hi.max(depth[j]);
        }
        if depth[i] <= lo + (VIS_FRACTION * (hi - lo)).max(VIS_SLACK) {
            keep.push(i);
        }
    }
    Ok(keep)
}

/// Fraction of the dense cloud's occupied voxels (8³ grid over its bounding
/// box) that also hold a point of `part`.
pub fn voxel_coverage(dense: &PointCloud, part: &[Point3]) -> f64 {
    let Some((lo, hi)) = dense.bounding_box() else {
        return 0.0;
    };
    let g = COVERAGE_GRID as f64;
    let cell = |p: Point3| -> [usize; 3] {
        let mut c = [0usize; 3];
        for k in 0..3 {
            let ext = hi[k] - lo[k];
            let t = if ext > 0.0 { (p[k] - lo[k]) / ext } else { 0.0 };
            c[k] = ((t * g).floor() as isize).clamp(0, COVERAGE_GRID as isize - 1) as usize;
        }
        c
    };
    let full: HashSet<[usize; 3]> = dense.points().iter().map(|&p| cell(p)).collect();
    let seen: HashSet<[usize; 3]> = part.iter().map(|&p| cell(p)).collect();
    seen.intersection(&full).count() as f64 / full.len() as f64
}

/// Partial scan of `dense`: cull from random viewpoints until the visible set
/// covers 30-70% of the occupied volume, then downsample (or pad by
/// duplication) to `n_partial` points.
pub fn simulate_partial(dense: &PointCloud, n_partial: usize, rng: &mut Rng) -> Result<PointCloud> {
    Ok(simulate_partial_with_view(dense, n_partial, rng)?.0)
}

/// Like [`simulate_partial`], also returning the accepted viewpoint.
pub fn simulate_partial_with_view(dense: &PointCloud, n_partial: usize, rng: &mut Rng) -> Result<(PointCloud, Point3)> {
    if n_partial == 0 {
        return Err(Error::Generation("n_partial must be positive".into()));
    }
    let mut last = 0.0;
    for _ in 0..MAX_VIEW_RETRIES {
        let view = random_viewpoint(rng);
        let vis = visible_indices(dense, view)?;
        let visible = dense.select(&vis);
        last = voxel_coverage(dense, visible.points());
        if (COVERAGE_MIN..=COVERAGE_MAX).contains(&last) {
            return Ok((random_downsample(&visible, n_partial, rng), view));
        }
    }
    Err(Error::Generation(format!(
        "no viewpoint reached the coverage band [{COVERAGE_MIN}, {COVERAGE_MAX}] in {MAX_VIEW_RETRIES} tries (last {last:.3})"
    )))
}

/// Partials from a viewpoint orbiting the vertical axis by `step_deg` per frame.
pub fn simulate_partial_sequence(
    dense: &PointCloud,
    frames: usize,
    step_deg: f64,
    n_partial: usize,
    rng: &mut Rng,
) -> Result<Vec<PointCloud>> {
    let (first, view) = simulate_partial_with_view(dense, n_partial, rng)?;
    let mut out = vec![first];
    for f in 1..frames {
        let (s, c) = (step_deg * f as f64).to_radians().sin_cos();
        let v = [c * view[0] + s * view[2], view[1], -s * view[0] + c * view[2]];
        let vis = visible_indices(dense, v)?;
        if vis.is_empty() {
            return Err(Error::Generation(format!("frame {f} sees no points")));
        }
        out.push(random_downsample(&dense.select(&vis), n_partial, rng));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::seeded_rng;

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
    fn sphere_from_plus_x_keeps_near_side() {
        for seed in 0..10 {
            let s = sphere(2048, seed);
            let vis = visible_indices(&s, [VIEW_RADIUS, 0.0, 0.0]).unwrap();
            assert!(vis.len() > 500);
            for &i in &vis {
                assert!(s.points()[i][0] >= -0.2, "{:?}", s.points()[i]);
            }
        }
    }

    #[test]
    fn partial_is_subset_of_dense() {
        let s = sphere(2048, 2);
        let p = simulate_partial(&s, 256, &mut seeded_rng(3)).unwrap();
        assert_eq!(p.len(), 256);
        for q in p.points() {
            assert!(s.points().contains(q));
        }
    }

    #[test]
    fn different_seeds_give_different_partials() {
        let s = sphere(2048, 4);
        let differ = (0..20)
            .filter(|&t| {
                let a = simulate_partial(&s, 256, &mut seeded_rng(2 * t)).unwrap();
                let b = simulate_partial(&s, 256, &mut seeded_rng(2 * t + 1)).unwrap();
                crate::metrics::chamfer_l1(&a, &b).unwrap() > 0.0
            })
            .count();
        assert!(differ >= 19, "{differ}");
    }

    #[test]
    fn coverage_of_full_cloud_is_one() {
        let s = sphere(500, 5);
        assert_eq!(voxel_coverage(&s, s.points()), 1.0);
        assert_eq!(voxel_coverage(&s, &[]), 0.0);
    }
}
