//! Spatial index and the sampling/filtering kernels built on it.
//!
//! Every query breaks distance ties by the lower point index, so results are
//! identical to a brute-force scan over the same cloud.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::cloud::{dist2, Point3, PointCloud, Rng, SymPlane};
use crate::error::{Error, Result};

/// Below this many points queries scan linearly.
pub const BRUTE_FORCE_BELOW: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    d2: f64,
    idx: usize,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then_with(|| self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct Grid {
    origin: Point3,
    cell: f64,
    dims: [usize; 3],
    /// CSR layout: points of cell `c` are `items[starts[c]..starts[c + 1]]`.
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl Grid {
    fn build(points: &[Point3], cell: f64) -> Grid {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        // Keep the cell count bounded for tiny cells on a large cloud.
        let mut cell = cell;
        let max_cells = (points.len() * 8).max(64) as f64;
        loop {
            let count: f64 = (0..3)
                .map(|k| ((hi[k] - lo[k]) / cell).floor() + 1.0)
                .product();
            if count <= max_cells {
                break;
            }
            cell *= 1.5;
        }
        let dims = [0, 1, 2].map(|k| ((hi[k] - lo[k]) / cell).floor() as usize + 1);
        let total = dims[0] * dims[1] * dims[2];
        let mut grid = Grid {
            origin: lo,
            cell,
            dims,
            starts: vec![0; total + 1],
            items: vec![0; points.len()],
        };
        let ids: Vec<usize> = points.iter().map(|&p| grid.flat(grid.cell_of(p))).collect();
        for &c in &ids {
            grid.starts[c + 1] += 1;
        }
        for c in 0..total {
            grid.starts[c + 1] += grid.starts[c];
        }
        let mut fill = grid.starts.clone();
        for (i, &c) in ids.iter().enumerate() {
            grid.items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        grid
    }

    #[inline]
    fn coord(&self, v: f64, k: usize) -> isize {
        ((v - self.origin[k]) / self.cell).floor() as isize
    }

    #[inline]
    fn cell_of(&self, p: Point3) -> [usize; 3] {
        [0, 1, 2].map(|k| self.coord(p[k], k).clamp(0, self.dims[k] as isize - 1) as usize)
    }

    #[inline]
    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    #[inline]
    fn cell_items(&self, c: [usize; 3]) -> &[u32] {
        let f = self.flat(c);
        &self.items[self.starts[f] as usize..self.starts[f + 1] as usize]
    }

    /// Visit every cell overlapping the axis-aligned cube of half-width `r`.
    fn for_cells_in_box(&self, center: Point3, r: f64, mut f: impl FnMut(&[u32])) {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for k in 0..3 {
            let a = self.coord(center[k] - r, k);
            let b = self.coord(center[k] + r, k);
            if b < 0 || a >= self.dims[k] as isize {
                return;
            }
            lo[k] = a.max(0) as usize;
            hi[k] = b.min(self.dims[k] as isize - 1) as usize;
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    f(self.cell_items([x, y, z]));
                }
            }
        }
    }
}

/// Immutable neighbour-query structure over a fixed set of points.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    grid: Option<Grid>,
}

impl SpatialIndex {
    /// Index with a cell size derived from the cloud's extent and size.
    pub fn new(points: &[Point3]) -> Self {
        if points.len() < BRUTE_FORCE_BELOW {
            return SpatialIndex {
                points: points.to_vec(),
                grid: None,
            };
        }
        let diag = PointCloud::from_points_unchecked(points.to_vec()).bbox_diagonal();
        let cell = (diag / (points.len() as f64).cbrt()).max(1e-9);
        Self::with_cell(points, cell)
    }

    /// Index whose cell edge equals the typical query radius.
    pub fn with_cell(points: &[Point3], cell: f64) -> Self {
        let grid = if points.len() < BRUTE_FORCE_BELOW || !(cell > 0.0) {
            None
        } else {
            Some(Grid::build(points, cell))
        };
        SpatialIndex {
            points: points.to_vec(),
            grid,
        }
    }

    pub fn from_cloud(cloud: &PointCloud) -> Self {
        Self::new(cloud.points())
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn collect_radius(&self, center: Point3, r: f64, inclusive: bool) -> Vec<Cand> {
        let r2 = r * r;
        let keep = |d2: f64| if inclusive { d2 <= r2 } else { d2 < r2 };
        let mut out = Vec::new();
        match &self.grid {
            None => {
                for (i, &p) in self.points.iter().enumerate() {
                    let d2 = dist2(p, center);
                    if keep(d2) {
                        out.push(Cand { d2, idx: i });
                    }
                }
            }
            Some(grid) => grid.for_cells_in_box(center, r, |items| {
                for &i in items {
                    let d2 = dist2(self.points[i as usize], center);
                    if keep(d2) {
                        out.push(Cand {
                            d2,
                            idx: i as usize,
                        });
                    }
                }
            }),
        }
        out.sort_unstable();
        out
    }

    /// Whether at least `count` points other than `exclude` lie strictly
    /// within `r` of `center`. Stops scanning once the answer is known.
    pub fn has_strict_neighbours(&self, center: Point3, r: f64, count: usize, exclude: usize) -> bool {
        if count == 0 {
            return true;
        }
        let r2 = r * r;
        let mut found = 0;
        match &self.grid {
            None => {
                for (i, &p) in self.points.iter().enumerate() {
                    if i != exclude && dist2(p, center) < r2 {
                        found += 1;
                        if found >= count {
                            return true;
                        }
                    }
                }
            }
            Some(grid) => grid.for_cells_in_box(center, r, |items| {
                if found >= count {
                    return;
                }
                for &i in items {
                    if i as usize != exclude && dist2(self.points[i as usize], center) < r2 {
                        found += 1;
                        if found >= count {
                            return;
                        }
                    }
                }
            }),
        }
        found >= count
    }

    /// Indices with `‖p − center‖ ≤ r`, nearest first.
    pub fn radius(&self, center: Point3, r: f64) -> Vec<usize> {
        self.collect_radius(center, r, true)
            .into_iter()
            .map(|c| c.idx)
            .collect()
    }

    /// Indices with `‖p − center‖ < r`, nearest first.
    pub fn radius_strict(&self, center: Point3, r: f64) -> Vec<usize> {
        self.collect_radius(center, r, false)
            .into_iter()
            .map(|c| c.idx)
            .collect()
    }

    /// The `k` nearest indices, nearest first.
    pub fn knn(&self, center: Point3, k: usize) -> Result<Vec<usize>> {
        if k > self.points.len() {
            return Err(Error::Cardinality(format!(
                "knn asked for {k} neighbours of a {}-point cloud",
                self.points.len()
            )));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let grid = match &self.grid {
            Some(g) if k * 4 < self.points.len() => g,
            _ => {
                let mut all: Vec<Cand> = self
                    .points
                    .iter()
                    .enumerate()
                    .map(|(idx, &p)| Cand {
                        d2: dist2(p, center),
                        idx,
                    })
                    .collect();
                all.sort_unstable();
                return Ok(all.into_iter().take(k).map(|c| c.idx).collect());
            }
        };

        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        let c = grid.cell_of(center);
        let max_ring = (0..3)
            .map(|a| c[a].max(grid.dims[a] - 1 - c[a]))
            .max()
            .unwrap_or(0);
        for ring in 0..=max_ring {
            self.visit_ring(grid, c, ring, |i| {
                let cand = Cand {
                    d2: dist2(self.points[i], center),
                    idx: i,
                };
                if heap.len() < k {
                    heap.push(cand);
                } else if cand < *heap.peek().expect("non-empty heap") {
                    heap.pop();
                    heap.push(cand);
                }
            });
            if heap.len() == k {
                match ring_lower_bound(grid, c, ring, center) {
                    None => break,
                    Some(lb) => {
                        if heap.peek().expect("non-empty heap").d2 < lb * lb {
                            break;
                        }
                    }
                }
            }
        }
        let mut out = heap.into_vec();
        out.sort_unstable();
        Ok(out.into_iter().map(|c| c.idx).collect())
    }

    /// Nearest index and its squared distance.
    pub fn nearest(&self, center: Point3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let idx = self.knn(center, 1).ok()?[0];
        Some((idx, dist2(self.points[idx], center)))
    }

    fn visit_ring(&self, grid: &Grid, c: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as isize;
        let lo: [isize; 3] = [0, 1, 2].map(|k| (c[k] as isize - r).max(0));
        let hi: [isize; 3] = [0, 1, 2].map(|k| (c[k] as isize + r).min(grid.dims[k] as isize - 1));
        for z in lo[2]..=hi[2] {
            let dz = (z - c[2] as isize).abs();
            for y in lo[1]..=hi[1] {
                let dy = (y - c[1] as isize).abs();
                let shell = dz == r || dy == r;
                let mut visit_x = |x: isize| {
                    for &i in grid.cell_items([x as usize, y as usize, z as usize]) {
                        f(i as usize);
                    }
                };
                if shell {
                    for x in lo[0]..=hi[0] {
                        visit_x(x);
                    }
                } else {
                    let x0 = c[0] as isize - r;
                    let x1 = c[0] as isize + r;
                    if x0 >= 0 {
                        visit_x(x0);
                    }
                    if x1 != x0 && x1 < grid.dims[0] as isize {
                        visit_x(x1);
                    }
                }
            }
        }
    }
}

/// Lower bound on the distance from `q` to any cell outside the ring box, or
/// `None` when the box already spans the whole grid.
fn ring_lower_bound(grid: &Grid, c: [usize; 3], ring: usize, q: Point3) -> Option<f64> {
    let mut lb = f64::INFINITY;
    for k in 0..3 {
        if c[k] >= ring + 1 {
            let lo = grid.origin[k] + (c[k] - ring) as f64 * grid.cell;
            lb = lb.min((q[k] - lo).max(0.0));
        }
        if c[k] + ring + 1 < grid.dims[k] {
            let hi = grid.origin[k] + (c[k] + ring + 1) as f64 * grid.cell;
            lb = lb.min((hi - q[k]).max(0.0));
        }
    }
    lb.is_finite().then_some(lb)
}

/// Mirror every point across `plane`; order and labels are preserved.
pub fn reflect_points(cloud: &PointCloud, plane: &SymPlane) -> Result<PointCloud> {
    plane.validate()?;
    Ok(cloud.map_points(|p| plane.reflect(p)))
}

/// Farthest-point sampling with a random first pick.
pub fn fps(points: &[Point3], k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if points.is_empty() || k > points.len() {
        return Err(Error::Cardinality(format!(
            "fps asked for {k} of {} points",
            points.len()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let first = rng.gen_range(0..points.len());
    fps_from(points, k, first)
}

/// Farthest-point sampling starting from a fixed index. Ties in the
/// max-min distance go to the lowest index.
pub fn fps_from(points: &[Point3], k: usize, first: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k > n || first >= n {
        return Err(Error::Cardinality(format!("fps asked for {k} of {n} points")));
    }
    let mut chosen = Vec::with_capacity(k);
    if k == 0 {
        return Ok(chosen);
    }
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = first;
    for _ in 0..k {
        chosen.push(current);
        min_d2[current] = -1.0;
        let cp = points[current];
        let mut best = usize::MAX;
        let mut best_d2 = -1.0;
        for (i, p) in points.iter().enumerate() {
            let m = &mut min_d2[i];
            if *m < 0.0 {
                continue;
            }
            let d2 = dist2(*p, cp);
            if d2 < *m {
                *m = d2;
            }
            if *m > best_d2 {
                best_d2 = *m;
                best = i;
            }
        }
        if best == usize::MAX {
            break;
        }
        current = best;
    }
    Ok(chosen)
}

/// Result of a fixed-size ball query.
#[derive(Debug, Clone, PartialEq)]
pub struct BallQuery {
    pub indices: Vec<usize>,
    /// Number of distinct qualifying points before padding.
    pub unique: usize,
    pub padded: bool,
}

/// Fixed-size neighbourhood of all points within `radius` (inclusive).
/// Oversized neighbourhoods are subsampled uniformly; undersized ones are
/// padded by repeating random members.
pub fn ball_query(
    index: &SpatialIndex,
    center: Point3,
    radius: f64,
    cap: usize,
    rng: &mut Rng,
) -> Result<BallQuery> {
    if !(radius > 0.0) || cap == 0 {
        return Err(Error::Config(format!(
            "ball query needs radius > 0 and cap >= 1 (got {radius}, {cap})"
        )));
    }
    let members = index.radius(center, radius);
    if members.is_empty() {
        return Err(Error::EmptyPatch { radius });
    }
    let unique = members.len();
    if unique >= cap {
        let mut picks = sample(rng, unique, cap).into_vec();
        picks.sort_unstable();
        return Ok(BallQuery {
            indices: picks.into_iter().map(|j| members[j]).collect(),
            unique: cap,
            padded: false,
        });
    }
    let mut indices = members.clone();
    while indices.len() < cap {
        indices.push(members[rng.gen_range(0..unique)]);
    }
    Ok(BallQuery {
        indices,
        unique,
        padded: true,
    })
}

/// The `k` nearest points to `center`.
pub fn knn(index: &SpatialIndex, center: Point3, k: usize) -> Result<Vec<usize>> {
    index.knn(center, k)
}

/// Keep points with at least `gamma` other points strictly closer than `r`.
/// Classification is done against the input cloud in one pass.
pub fn radius_outlier_removal(cloud: &PointCloud, r: f64, gamma: usize) -> PointCloud {
    let keep = outlier_mask(cloud.points(), r, gamma);
    let idx: Vec<usize> = (0..cloud.len()).filter(|&i| keep[i]).collect();
    cloud.select(&idx)
}

/// Per-point survival flags for [`radius_outlier_removal`].
pub fn outlier_mask(points: &[Point3], r: f64, gamma: usize) -> Vec<bool> {
    if gamma == 0 {
        return vec![true; points.len()];
    }
    let index = SpatialIndex::with_cell(points, r);
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| index.has_strict_neighbours(p, r, gamma, i))
        .collect()
}

/// Indices for a random downsample: distinct when `k <= n`, otherwise every
/// index once plus uniform draws with replacement.
pub fn random_downsample_indices(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    if k <= n {
        return sample(rng, n, k).into_vec();
    }
    let mut idx = sample(rng, n, n).into_vec();
    while idx.len() < k {
        idx.push(rng.gen_range(0..n));
    }
    idx
}

pub fn random_downsample(cloud: &PointCloud, k: usize, rng: &mut Rng) -> PointCloud {
    let idx = random_downsample_indices(cloud.len(), k, rng);
    cloud.select(&idx)
}
