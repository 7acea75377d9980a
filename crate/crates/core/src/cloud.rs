//! Domain types shared by every stage: point clouds, symmetry planes,
//! pipeline configuration, normalization and seeded randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::NetworkSpec;

pub type Point3 = [f64; 3];

/// Random source used by every stochastic operation in the crate.
pub type Rng = ChaCha8Rng;

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

/// Squared Euclidean distance. Every spatial query and oracle goes through
/// this one function so tie-breaking compares bit-identical values.
#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Seeded random source. Same seed, same stream.
pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for one stage of a seeded run, so that switching a
/// stage on or off does not shift the draws seen by the others.
pub fn stage_rng(seed: u64, stage: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage.wrapping_add(1));
    rng
}

/// Ordered 3D points with an optional scalar label per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
    labels: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidCloud(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud {
            points,
            labels: None,
        })
    }

    pub fn with_labels(points: Vec<Point3>, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::InvalidCloud(format!(
                "{} labels for {} points",
                labels.len(),
                points.len()
            )));
        }
        let mut cloud = PointCloud::new(points)?;
        cloud.labels = Some(labels);
        Ok(cloud)
    }

    /// Constructor for internal paths whose points are finite by construction.
    pub(crate) fn from_points_unchecked(points: Vec<Point3>) -> Self {
        debug_assert!(points.iter().all(|p| p.iter().all(|c| c.is_finite())));
        PointCloud {
            points,
            labels: None,
        }
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// Gather points (and labels) by index, in index order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Concatenation; labels survive only if both sides carry them.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        PointCloud { points, labels }
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let mut c = [0.0; 3];
        for p in &self.points {
            c = add(c, *p);
        }
        Some(scale(c, 1.0 / self.points.len() as f64))
    }

    pub fn bounding_box(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        let (mut lo, mut hi) = (first, first);
        for p in &self.points[1..] {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Some((lo, hi))
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bounding_box().map(|(lo, hi)| norm(sub(hi, lo))).unwrap_or(0.0)
    }

    pub fn map_points(&self, f: impl Fn(Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| f(p)).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub(crate) fn ensure_non_empty(&self, what: &str) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::Cardinality(format!("{what} is empty")))
        } else {
            Ok(())
        }
    }
}

/// Implicit plane `n·x + d = 0`. The normal need not be unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymPlane {
    pub n: Point3,
    pub d: f64,
}

impl SymPlane {
    pub fn new(n: Point3, d: f64) -> Result<Self> {
        let plane = SymPlane { n, d };
        plane.validate()?;
        Ok(plane)
    }

    pub fn validate(&self) -> Result<()> {
        let nn = dot(self.n, self.n);
        if !(nn > 0.0) || !nn.is_finite() || !self.d.is_finite() {
            return Err(Error::DegeneratePlane);
        }
        Ok(())
    }

    /// Same plane with a unit normal.
    pub fn normalized(&self) -> Result<SymPlane> {
        self.validate()?;
        let len = norm(self.n);
        Ok(SymPlane {
            n: scale(self.n, 1.0 / len),
            d: self.d / len,
        })
    }

    /// Mirror one point across the plane.
    #[inline]
    pub fn reflect(&self, p: Point3) -> Point3 {
        let nn = dot(self.n, self.n);
        let k = 2.0 * (dot(p, self.n) + self.d) / nn;
        sub(p, scale(self.n, k))
    }

    pub fn signed_distance(&self, p: Point3) -> f64 {
        (dot(p, self.n) + self.d) / norm(self.n)
    }

    /// Angle in degrees between the two plane normals, ignoring orientation.
    pub fn normal_angle_deg(&self, other: &SymPlane) -> f64 {
        let c = (dot(self.n, other.n) / (norm(self.n) * norm(other.n))).abs();
        c.min(1.0).acos().to_degrees()
    }
}

/// Uniform rescaling that moves a cloud's centroid to the origin and its
/// farthest point onto the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: Point3,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    #[inline]
    pub fn apply(&self, p: Point3) -> Point3 {
        scale(sub(p, self.center), 1.0 / self.scale)
    }

    #[inline]
    pub fn invert(&self, p: Point3) -> Point3 {
        add(scale(p, self.scale), self.center)
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_points(|p| self.apply(p))
    }

    pub fn invert_cloud(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_points(|p| self.invert(p))
    }

    pub fn apply_plane(&self, plane: &SymPlane) -> SymPlane {
        SymPlane {
            n: plane.n,
            d: (plane.d + dot(plane.n, self.center)) / self.scale,
        }
    }

    pub fn invert_plane(&self, plane: &SymPlane) -> SymPlane {
        SymPlane {
            n: plane.n,
            d: plane.d * self.scale - dot(plane.n, self.center),
        }
    }
}

/// Center on the centroid and scale so the farthest point has norm 1.
pub fn normalize_to_unit_sphere(cloud: &PointCloud) -> Result<(PointCloud, Normalization)> {
    let center = cloud
        .centroid()
        .ok_or_else(|| Error::Cardinality("cannot normalize an empty cloud".into()))?;
    let radius = cloud
        .points()
        .iter()
        .map(|&p| norm(sub(p, center)))
        .fold(0.0_f64, f64::max);
    let magnitude = norm(center).max(1.0);
    if !(radius > 1e-12 * magnitude) {
        return Err(Error::DegenerateInput(
            "all points coincide; scale is zero".into(),
        ));
    }
    let t = Normalization {
        center,
        scale: radius,
    };
    Ok((t.apply_cloud(cloud), t))
}

pub fn denormalize(cloud: &PointCloud, t: &Normalization) -> PointCloud {
    t.invert_cloud(cloud)
}

/// Which pipeline stages run. All `false` is the full method.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub disable_symnet: bool,
    pub disable_resnet: bool,
    pub disable_outlier_removal: bool,
    pub disable_input_preservation: bool,
    pub knn_patches: bool,
}

impl Ablation {
    pub fn baseline() -> Self {
        Ablation {
            disable_symnet: true,
            disable_resnet: true,
            disable_outlier_removal: true,
            disable_input_preservation: true,
            knn_patches: false,
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.disable_symnet {
            v.push("disable_symnet");
        }
        if self.disable_resnet {
            v.push("disable_resnet");
        }
        if self.disable_outlier_removal {
            v.push("disable_outlier_removal");
        }
        if self.disable_input_preservation {
            v.push("disable_input_preservation");
        }
        if self.knn_patches {
            v.push("knn_patches");
        }
        v
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        match name {
            "disable_symnet" => self.disable_symnet = on,
            "disable_resnet" => self.disable_resnet = on,
            "disable_outlier_removal" => self.disable_outlier_removal = on,
            "disable_input_preservation" => self.disable_input_preservation = on,
            "knn_patches" => self.knn_patches = on,
            other => return Err(Error::Config(format!("unknown ablation switch `{other}`"))),
        }
        Ok(())
    }
}

/// Every hyperparameter of the completion pipeline. Radii are in
/// unit-sphere-normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Asymmetry gate on the self-reflection CD₂ of the sparse completion.
    pub tau: f64,
    /// Ball-query radius for patch extraction.
    pub r_patch: f64,
    /// Points per sparse patch.
    pub patch_k: usize,
    /// Outlier-removal radius on the dense cloud.
    pub r_outlier: f64,
    /// Outlier-removal radius on the refined sparse cloud.
    pub r_outlier_sparse: f64,
    /// Minimum neighbour count to survive outlier removal.
    pub gamma: usize,
    pub refine_iters: usize,
    pub n_sparse: usize,
    pub n_dense: usize,
    /// Cap on the number of points fed to the refiner (sparse + context).
    pub n_refine: usize,
    pub patches_train: usize,
    pub patches_test: usize,
    pub up_ratio: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// Layer widths of every network.
    pub nets: NetworkSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tau: 0.012,
            r_patch: 0.65,
            patch_k: 32,
            r_outlier: 0.08,
            r_outlier_sparse: 0.25,
            gamma: 4,
            refine_iters: 2,
            n_sparse: 256,
            n_dense: 2048,
            n_refine: 512,
            patches_train: 24,
            patches_test: 16,
            up_ratio: 8,
            seed: 0,
            ablation: Ablation::default(),
            nets: NetworkSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("patch_k", self.patch_k),
            ("refine_iters", self.refine_iters),
            ("n_sparse", self.n_sparse),
            ("n_dense", self.n_dense),
            ("n_refine", self.n_refine),
            ("patches_train", self.patches_train),
            ("patches_test", self.patches_test),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let radii = [
            ("tau", self.tau),
            ("r_patch", self.r_patch),
            ("r_outlier", self.r_outlier),
            ("r_outlier_sparse", self.r_outlier_sparse),
        ];
        for (name, v) in radii {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.up_ratio < 2 {
            return Err(Error::Config("up_ratio must be at least 2".into()));
        }
        if self.n_refine < self.n_sparse {
            return Err(Error::Config("n_refine must be at least n_sparse".into()));
        }
        self.nets.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn normalize_symmetric_pair() {
        let cloud = PointCloud::new(vec![[2.0, 0.0, 0.0], [4.0, 0.0, 0.0]]).unwrap();
        let (n, t) = normalize_to_unit_sphere(&cloud).unwrap();
        assert_eq!(n.points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(t.center, [3.0, 0.0, 0.0]);
        assert_eq!(t.scale, 1.0);
    }

    #[test]
    fn normalize_is_idempotent_on_normalized_cloud() {
        let cloud = PointCloud::new(vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 0.5, 0.0],
            [0.0, -0.5, 0.0],
        ])
        .unwrap();
        let (n, t) = normalize_to_unit_sphere(&cloud).unwrap();
        assert_eq!(t.center, [0.0; 3]);
        assert_eq!(t.scale, 1.0);
        assert_eq!(n, cloud);
    }

    #[test]
    fn normalize_round_trip() {
        let mut rng = seeded_rng(7);
        let pts: Vec<Point3> = (0..50)
            .map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(0.0..3.0), rng.gen_range(-1.0..9.0)])
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let (n, t) = normalize_to_unit_sphere(&cloud).unwrap();
        let max_norm = n.points().iter().map(|&p| norm(p)).fold(0.0, f64::max);
        assert!((max_norm - 1.0).abs() < 1e-12);
        let c = n.centroid().unwrap();
        assert!(norm(c) < 1e-12);
        let back = denormalize(&n, &t);
        for (a, b) in back.points().iter().zip(cloud.points()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_rejects_identical_points() {
        let cloud = PointCloud::new(vec![[0.1, 0.2, 0.3]; 3]).unwrap();
        assert!(matches!(
            normalize_to_unit_sphere(&cloud),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn plane_transform_follows_points() {
        let plane = SymPlane::new([1.0, 2.0, -0.5], 0.7).unwrap();
        let t = Normalization {
            center: [0.3, -1.0, 2.0],
            scale: 2.5,
        };
        let p = [1.0, 0.4, -0.2];
        let mirrored = plane.reflect(p);
        let local = t.apply_plane(&plane);
        let m2 = local.reflect(t.apply(p));
        let back = t.invert(m2);
        for k in 0..3 {
            assert!((back[k] - mirrored[k]).abs() < 1e-12);
        }
        let round = t.invert_plane(&local);
        assert!((round.d - plane.d).abs() < 1e-12);
    }

    #[test]
    fn rng_streams() {
        let mut a = seeded_rng(0);
        let mut b = seeded_rng(0);
        let xs: Vec<u64> = (0..1000).map(|_| a.gen()).collect();
        let ys: Vec<u64> = (0..1000).map(|_| b.gen()).collect();
        assert_eq!(xs, ys);
        let mut c = seeded_rng(1);
        let zs: Vec<u64> = (0..10).map(|_| c.gen()).collect();
        assert_ne!(&xs[..10], &zs[..]);
        let mut s1 = stage_rng(0, 1);
        let mut s2 = stage_rng(0, 2);
        assert_ne!(s1.gen::<u64>(), s2.gen::<u64>());
    }

    #[test]
    fn cloud_invariants() {
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
        assert!(PointCloud::with_labels(vec![[0.0; 3]], vec![0.0, 1.0]).is_err());
        assert!(SymPlane::new([0.0; 3], 1.0).is_err());
    }

    #[test]
    fn default_config_is_valid() {
        PipelineConfig::default().validate().unwrap();
        let bad = PipelineConfig {
            up_ratio: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
