//! Point-set distances and evaluation scores.
//!
//! Chamfer convention: the SUM of the two directional means, with no 0.5
//! factor. `chamfer_l1` averages Euclidean nearest-neighbour distances,
//! `chamfer_l2` averages their squares.

use std::fmt::Write as _;

use crate::assignment::{auction, hungarian};
use crate::cloud::{dist2, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;

/// Clouds up to this size get an exact EMD.
pub const EMD_EXACT_MAX: usize = 512;
/// Relative slack of the auction solver used above [`EMD_EXACT_MAX`].
pub const EMD_AUCTION_REL_EPS: f64 = 0.01;

/// Optimal matching between two equal-size clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `perm[i]` is the index in the second cloud matched to point `i`.
    pub perm: Vec<usize>,
    /// Sum of matched Euclidean distances.
    pub total_cost: f64,
}

fn non_empty(a: &PointCloud, b: &PointCloud) -> Result<()> {
    a.ensure_non_empty("first cloud")?;
    b.ensure_non_empty("second cloud")
}

/// For each point of `from`, the index and squared distance of its nearest
/// neighbour in `to`.
pub fn nearest_neighbors(from: &[Point3], to: &[Point3]) -> Vec<(usize, f64)> {
    let index = SpatialIndex::new(to);
    from.iter()
        .map(|&p| index.nearest(p).expect("target cloud is non-empty"))
        .collect()
}

fn directional_mean(from: &[Point3], to: &[Point3], squared: bool) -> f64 {
    let sum: f64 = nearest_neighbors(from, to)
        .into_iter()
        .map(|(_, d2)| if squared { d2 } else { d2.sqrt() })
        .sum();
    sum / from.len() as f64
}

pub fn chamfer_l1(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    non_empty(a, b)?;
    Ok(directional_mean(a.points(), b.points(), false)
        + directional_mean(b.points(), a.points(), false))
}

pub fn chamfer_l2(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    non_empty(a, b)?;
    Ok(directional_mean(a.points(), b.points(), true)
        + directional_mean(b.points(), a.points(), true))
}

/// Row-major matrix of Euclidean distances.
pub(crate) fn distance_matrix(a: &[Point3], b: &[Point3]) -> Vec<f64> {
    let mut m = Vec::with_capacity(a.len() * b.len());
    for &p in a {
        for &q in b {
            m.push(dist2(p, q).sqrt());
        }
    }
    m
}

/// Mean matched distance under the optimal bijection.
pub fn emd(a: &PointCloud, b: &PointCloud) -> Result<(f64, Assignment)> {
    non_empty(a, b)?;
    if a.len() != b.len() {
        return Err(Error::Cardinality(format!(
            "EMD needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let costs = distance_matrix(a.points(), b.points());
    let perm = if n <= EMD_EXACT_MAX {
        hungarian(&costs, n)
    } else {
        auction(&costs, n, EMD_AUCTION_REL_EPS)
    };
    let total_cost: f64 = perm.iter().enumerate().map(|(i, &j)| costs[i * n + j]).sum();
    Ok((total_cost / n as f64, Assignment { perm, total_cost }))
}

/// F-score at a fixed distance threshold (strict `<`).
pub fn f_score(pred: &PointCloud, gt: &PointCloud, threshold: f64) -> Result<f64> {
    non_empty(pred, gt)?;
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("f-score threshold must be positive, got {threshold}")));
    }
    let t2 = threshold * threshold;
    let hits = |from: &[Point3], to: &[Point3]| {
        nearest_neighbors(from, to)
            .into_iter()
            .filter(|&(_, d2)| d2 < t2)
            .count() as f64
            / from.len() as f64
    };
    let precision = hits(pred.points(), gt.points());
    let recall = hits(gt.points(), pred.points());
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Threshold for F-Score@1%: 1% of the ground truth's bounding-box diagonal.
pub fn f_score_threshold_1pct(gt: &PointCloud) -> f64 {
    0.01 * gt.bbox_diagonal()
}

pub fn f_score_1pct(pred: &PointCloud, gt: &PointCloud) -> Result<f64> {
    f_score(pred, gt, f_score_threshold_1pct(gt))
}

/// Mean distance from each input point to its nearest completed point.
pub fn fidelity(input_partial: &PointCloud, completed: &PointCloud) -> Result<f64> {
    non_empty(input_partial, completed)?;
    Ok(directional_mean(input_partial.points(), completed.points(), false))
}

/// Lowest Chamfer-L1 between the completion and any reference shape.
pub fn mmd(completed: &PointCloud, references: &[PointCloud]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Config("MMD needs at least one reference cloud".into()));
    }
    let mut best = f64::INFINITY;
    for r in references {
        best = best.min(chamfer_l1(completed, r)?);
    }
    Ok(best)
}

/// Mean Chamfer-L1 between consecutive clouds of a sequence.
pub fn consistency(sequence: &[PointCloud]) -> Result<f64> {
    if sequence.len() < 2 {
        return Err(Error::Cardinality(format!(
            "consistency needs at least 2 clouds, got {}",
            sequence.len()
        )));
    }
    let mut sum = 0.0;
    for w in sequence.windows(2) {
        sum += chamfer_l1(&w[0], &w[1])?;
    }
    Ok(sum / (sequence.len() - 1) as f64)
}

/// Decimal rendering with 9 significant digits.
pub fn format_sig9(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0.00000000".to_string();
    }
    let mut exp = v.abs().log10().floor() as i32;
    let mut s = format!("{:.*}", (8 - exp).max(0) as usize, v);
    // Rounding can carry into a new leading digit (9.99999999951 -> 10.0...).
    let digits = s.trim_start_matches('-').split('.').next().unwrap_or("").len() as i32;
    if exp >= 0 && digits > exp + 1 {
        exp += 1;
        s = format!("{:.*}", (8 - exp).max(0) as usize, v);
    }
    s
}

/// One `shape_id,metric_name,value` CSV row per metric.
pub fn csv_rows(shape_id: &str, metrics: &[(&str, f64)]) -> String {
    let mut out = String::new();
    for (name, value) in metrics {
        let _ = writeln!(out, "{shape_id},{name},{}", format_sig9(*value));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(points: Vec<Point3>) -> PointCloud {
        PointCloud::new(points).unwrap()
    }

    #[test]
    fn chamfer_examples() {
        let a = c(vec![[0.0; 3]]);
        let b = c(vec![[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer_l1(&a, &b).unwrap(), 2.0);
        assert_eq!(chamfer_l1(&a, &a).unwrap(), 0.0);
        let b2 = c(vec![[2.0, 0.0, 0.0]]);
        assert_eq!(chamfer_l2(&a, &b2).unwrap(), 8.0);
        assert!(chamfer_l1(&a, &PointCloud::default()).is_err());
    }

    #[test]
    fn emd_examples() {
        let a = c(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let (v, asg) = emd(&a, &a).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(asg.perm, vec![0, 1]);
        let b = c(vec![[1.0, 0.0, 0.0], [0.0; 3]]);
        let (v, asg) = emd(&a, &b).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(asg.perm, vec![1, 0]);
        assert!(emd(&a, &c(vec![[0.0; 3]])).is_err());
    }

    #[test]
    fn f_score_examples() {
        let gt = c(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        assert_eq!(f_score(&gt, &gt, 0.1).unwrap(), 1.0);
        let far = c(vec![[100.0, 0.0, 0.0]]);
        assert_eq!(f_score(&far, &gt, 0.1).unwrap(), 0.0);
        // Two pred points sit on the gt, two are far away: P = 0.5, R = 1.
        let pred = c(vec![
            [0.0; 3],
            [1.0, 0.0, 0.0],
            [0.0, 50.0, 0.0],
            [0.0, 0.0, 50.0],
        ]);
        let f = f_score(&pred, &gt, 0.1).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fidelity_examples() {
        let input = c(vec![[0.0; 3]]);
        assert_eq!(fidelity(&input, &c(vec![[3.0, 4.0, 0.0]])).unwrap(), 5.0);
        let completion = c(vec![[9.0, 9.0, 9.0], [0.0; 3]]);
        assert_eq!(fidelity(&input, &completion).unwrap(), 0.0);
    }

    #[test]
    fn mmd_and_consistency_examples() {
        let a = c(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let b = c(vec![[0.0, 1.0, 0.0]]);
        assert_eq!(mmd(&a, &[b.clone(), a.clone()]).unwrap(), 0.0);
        assert_eq!(mmd(&a, &[b.clone()]).unwrap(), chamfer_l1(&a, &b).unwrap());
        assert!(mmd(&a, &[]).is_err());
        assert_eq!(consistency(&[a.clone(), a.clone(), a.clone()]).unwrap(), 0.0);
        assert_eq!(
            consistency(&[a.clone(), b.clone()]).unwrap(),
            chamfer_l1(&a, &b).unwrap()
        );
        assert!(consistency(&[a]).is_err());
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(1.0), "1.00000000");
        assert_eq!(format_sig9(0.001234567891), "0.00123456789");
        assert_eq!(format_sig9(-12345.678912345), "-12345.6789");
        assert_eq!(format_sig9(9.9999999999), "10.0000000");
        assert_eq!(format_sig9(0.0), "0.00000000");
    }
}
