//! Brute-force reference implementations and random instance builders shared
//! by the integration tests.

#![allow(dead_code)]

pub mod suites;

use pcc_core::cloud::{dist2, seeded_rng, Point3, Rng};
use pcc_core::networks::Model;
use pcc_core::nn::NetParams;
use rand::Rng as _;

pub fn random_points(n: usize, rng: &mut Rng) -> Vec<Point3> {
    (0..n)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect()
}

/// Points on a coarse lattice, so equal distances (ties) are common.
pub fn lattice_points(n: usize, rng: &mut Rng) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-4i32..=4) as f64 * 0.25,
                rng.gen_range(-4i32..=4) as f64 * 0.25,
                rng.gen_range(-4i32..=4) as f64 * 0.25,
            ]
        })
        .collect()
}

/// Either kind of cloud, chosen at random, with a random size in `lo..=hi`.
pub fn instance(lo: usize, hi: usize, rng: &mut Rng) -> Vec<Point3> {
    let n = rng.gen_range(lo..=hi);
    if rng.gen_bool(0.3) {
        lattice_points(n, rng)
    } else {
        random_points(n, rng)
    }
}

fn by_distance(points: &[Point3], q: Point3) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, &p)| (dist2(p, q), i)).collect();
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    d
}

/// Nearest first, ties broken by index.
pub fn brute_knn(points: &[Point3], q: Point3, k: usize) -> Vec<usize> {
    by_distance(points, q).into_iter().take(k).map(|(_, i)| i).collect()
}

/// Inclusive radius, nearest first, ties broken by index.
pub fn brute_radius(points: &[Point3], q: Point3, r: f64) -> Vec<usize> {
    by_distance(points, q)
        .into_iter()
        .filter(|&(d, _)| d <= r * r)
        .map(|(_, i)| i)
        .collect()
}

/// Survival flags: at least `gamma` other points strictly within `r`.
pub fn brute_outliers(points: &[Point3], r: f64, gamma: usize) -> Vec<bool> {
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

/// Greedy max-min selection, recomputing every distance to the chosen set.
/// Ties go to the lowest index.
pub fn brute_fps(points: &[Point3], k: usize, first: usize) -> Vec<usize> {
    let mut chosen = vec![first];
    while chosen.len() < k {
        let mut best = None;
        let mut best_d = -1.0;
        for (i, &p) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|&c| dist2(p, points[c])).fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        chosen.push(best.expect("k <= n"));
    }
    chosen
}

fn directional(from: &[Point3], to: &[Point3], squared: bool) -> f64 {
    from.iter()
        .map(|&p| {
            let d2 = to.iter().map(|&q| dist2(p, q)).fold(f64::INFINITY, f64::min);
            if squared {
                d2
            } else {
                d2.sqrt()
            }
        })
        .sum::<f64>()
        / from.len() as f64
}

pub fn brute_chamfer(a: &[Point3], b: &[Point3], squared: bool) -> f64 {
    directional(a, b, squared) + directional(b, a, squared)
}

/// Mean matched distance of the optimal bijection, as a min-cost flow of `n`
/// units (source → left → right → sink) found by successive shortest paths
/// with Dijkstra on Johnson-reduced costs over a dense residual graph.
pub fn oracle_emd(a: &[Point3], b: &[Point3]) -> f64 {
    let n = a.len();
    let v = 2 * n + 2;
    let (s, t) = (2 * n, 2 * n + 1);
    let mut cap = vec![vec![0i32; v]; v];
    let mut cost = vec![vec![0.0f64; v]; v];
    for i in 0..n {
        cap[s][i] = 1;
        cap[n + i][t] = 1;
        for j in 0..n {
            let c = dist2(a[i], b[j]).sqrt();
            cap[i][n + j] = 1;
            cost[i][n + j] = c;
            cost[n + j][i] = -c;
        }
    }
    let mut pot = vec![0.0; v];
    let mut total = 0.0;
    for _ in 0..n {
        let mut dist = vec![f64::INFINITY; v];
        let mut prev = vec![usize::MAX; v];
        let mut done = vec![false; v];
        dist[s] = 0.0;
        loop {
            let u = (0..v)
                .filter(|&u| !done[u] && dist[u].is_finite())
                .min_by(|&x, &y| dist[x].partial_cmp(&dist[y]).expect("finite"));
            let Some(u) = u else { break };
            done[u] = true;
            for w in 0..v {
                if cap[u][w] > 0 && !done[w] {
                    // Reduced costs are non-negative up to rounding.
                    let d = dist[u] + (cost[u][w] + pot[u] - pot[w]).max(0.0);
                    if d < dist[w] {
                        dist[w] = d;
                        prev[w] = u;
                    }
                }
            }
        }
        for u in 0..v {
            if dist[u].is_finite() {
                pot[u] += dist[u];
            }
        }
        let mut w = t;
        while w != s {
            let u = prev[w];
            cap[u][w] -= 1;
            cap[w][u] += 1;
            total += cost[u][w];
            w = u;
        }
    }
    total / n as f64
}

/// Exhaustive EMD for tiny clouds.
pub fn exhaustive_emd(a: &[Point3], b: &[Point3]) -> f64 {
    fn go(a: &[Point3], b: &[Point3], i: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if i == a.len() {
            *best = acc;
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                go(a, b, i + 1, used, acc + dist2(a[i], b[j]).sqrt(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(a, b, 0, &mut vec![false; b.len()], 0.0, &mut best);
    best / a.len() as f64
}

/// `model` with its parameters replaced by `params`.
pub fn with_params(model: &Model, params: &NetParams) -> Model {
    let mut m = model.clone();
    m.params = params.clone();
    m
}

pub fn rng(seed: u64) -> Rng {
    seeded_rng(seed)
}
