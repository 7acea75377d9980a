//! Linear assignment solvers backing the Earth Mover's Distance.
//!
//! `hungarian` is exact, O(n³). `auction` is an ε-scaling forward auction
//! whose final ε is chosen so the returned cost is within a relative factor
//! of the optimum.

/// Exact minimum-cost perfect matching on a dense square cost matrix stored
/// row-major. Returns `perm` with row `i` matched to column `perm[i]`.
pub fn hungarian(costs: &[f64], n: usize) -> Vec<usize> {
    debug_assert_eq!(costs.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|m| *m = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &costs[(i0 - 1) * n..i0 * n];
            let ui0 = u[i0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    perm
}

/// Forward auction with ε-scaling. With non-negative costs the result's
/// total cost is at most `(1 + rel_eps)` times the optimum.
pub fn auction(costs: &[f64], n: usize, rel_eps: f64) -> Vec<usize> {
    debug_assert_eq!(costs.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    // Σ_i min_j c_ij bounds the optimum from below, so a final ε of
    // rel_eps·LB/n keeps the additive n·ε slack under rel_eps·OPT.
    let lower_bound: f64 = (0..n)
        .map(|i| costs[i * n..(i + 1) * n].iter().copied().fold(f64::INFINITY, f64::min))
        .sum();
    let max_cost = costs.iter().copied().fold(0.0_f64, f64::max);
    let final_eps = if lower_bound > 0.0 {
        rel_eps * lower_bound / n as f64
    } else {
        (max_cost * 1e-12).max(f64::MIN_POSITIVE)
    };
    let mut eps = (max_cost / 4.0).max(final_eps);

    let mut prices = vec![0.0; n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    loop {
        owner.iter_mut().for_each(|o| *o = None);
        assigned.iter_mut().for_each(|a| *a = None);
        let mut queue: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = queue.pop() {
            let row = &costs[i * n..(i + 1) * n];
            let mut best = usize::MAX;
            let mut best_val = f64::NEG_INFINITY;
            let mut second_val = f64::NEG_INFINITY;
            for j in 0..n {
                let val = -row[j] - prices[j];
                if val > best_val {
                    second_val = best_val;
                    best_val = val;
                    best = j;
                } else if val > second_val {
                    second_val = val;
                }
            }
            let increment = if second_val.is_finite() {
                best_val - second_val + eps
            } else {
                eps
            };
            prices[best] += increment;
            if let Some(prev) = owner[best] {
                assigned[prev] = None;
                queue.push(prev);
            }
            owner[best] = Some(i);
            assigned[i] = Some(best);
        }
        if eps <= final_eps {
            break;
        }
        eps = (eps / 5.0).max(final_eps);
    }
    assigned
        .into_iter()
        .map(|a| a.expect("auction leaves every row assigned"))
        .collect()
}
