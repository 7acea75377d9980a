//! Timing of the spatial kernels against brute-force scans.

use std::time::Instant;

use pcc_core::cloud::{dist2, seeded_rng, Point3};
use pcc_core::spatial::{outlier_mask, SpatialIndex};
use rand::Rng;

pub struct BenchRow {
    pub kernel: &'static str,
    pub n: usize,
    pub indexed_ms: f64,
    pub brute_ms: f64,
    pub agree: bool,
}

fn brute_knn(points: &[Point3], q: Point3, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, &p)| (dist2(p, q), i)).collect();
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    d.into_iter().take(k).map(|(_, i)| i).collect()
}

fn brute_radius(points: &[Point3], q: Point3, r: f64) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, &p)| (dist2(p, q), i))
        .filter(|(d, _)| *d <= r * r)
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    d.into_iter().map(|(_, i)| i).collect()
}

fn brute_outliers(points: &[Point3], r: f64, gamma: usize) -> Vec<bool> {
    (0..points.len())
        .map(|i| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, &p)| j != i && dist2(p, points[i]) < r * r)
                .count()
                >= gamma
        })
        .collect()
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn run(sizes: &[usize], queries: usize, seed: u64) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for &n in sizes {
        let mut rng = seeded_rng(seed ^ n as u64);
        let pts: Vec<Point3> = (0..n)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let qs: Vec<Point3> = (0..queries)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let k = 16.min(n);
        let r = 0.1;

        let t = Instant::now();
        let index = SpatialIndex::new(&pts);
        let fast: Vec<Vec<usize>> = qs.iter().map(|&q| index.knn(q, k).expect("k <= n")).collect();
        let indexed_ms = ms(t);
        let t = Instant::now();
        let slow: Vec<Vec<usize>> = qs.iter().map(|&q| brute_knn(&pts, q, k)).collect();
        rows.push(BenchRow {
            kernel: "knn16",
            n,
            indexed_ms,
            brute_ms: ms(t),
            agree: fast == slow,
        });

        let t = Instant::now();
        let index = SpatialIndex::with_cell(&pts, r);
        let fast: Vec<Vec<usize>> = qs.iter().map(|&q| index.radius(q, r)).collect();
        let indexed_ms = ms(t);
        let t = Instant::now();
        let slow: Vec<Vec<usize>> = qs.iter().map(|&q| brute_radius(&pts, q, r)).collect();
        rows.push(BenchRow {
            kernel: "radius",
            n,
            indexed_ms,
            brute_ms: ms(t),
            agree: fast == slow,
        });

        let t = Instant::now();
        let fast = outlier_mask(&pts, r, 4);
        let indexed_ms = ms(t);
        let t = Instant::now();
        let slow = brute_outliers(&pts, r, 4);
        rows.push(BenchRow {
            kernel: "outliers",
            n,
            indexed_ms,
            brute_ms: ms(t),
            agree: fast == slow,
        });
    }
    rows
}

pub fn table(rows: &[BenchRow]) -> String {
    let mut s = format!("{:<10} {:>7} {:>12} {:>12} {:>8} {:>6}\n", "kernel", "n", "indexed_ms", "brute_ms", "speedup", "agree");
    for r in rows {
        s.push_str(&format!(
            "{:<10} {:>7} {:>12.3} {:>12.3} {:>8.1} {:>6}\n",
            r.kernel,
            r.n,
            r.indexed_ms,
            r.brute_ms,
            r.brute_ms / r.indexed_ms.max(1e-9),
            r.agree
        ));
    }
    s
}
