//! Check suites used both by the focused integration tests and by the
//! acceptance report.

use std::collections::HashSet;

use pcc_core::cloud::{dist2, norm, seeded_rng, stage_rng, sub, Point3, PointCloud, SymPlane};
use pcc_core::metrics::{chamfer_l1, chamfer_l2, consistency, emd, fidelity, mmd};
use pcc_core::networks::{Model, NetworkSpec};
use pcc_core::nn::{grad_check, GradCheckOptions, GradCheckReport, Graph, NetParams, Var};
use pcc_core::spatial::{ball_query, fps_from, outlier_mask, SpatialIndex};
use pcc_core::training::{loss_total, Outputs};
use pcc_core::{Error, Result};
use rand::Rng as _;

use super::*;

/// Outcome of one kernel against its oracle.
#[derive(Debug, Clone)]
pub struct KernelReport {
    pub kernel: &'static str,
    pub instances: usize,
    /// Largest absolute difference of a scalar result.
    pub max_abs_err: f64,
    /// Instances whose index sets differ from the oracle's.
    pub mismatches: usize,
}

impl KernelReport {
    fn new(kernel: &'static str) -> Self {
        KernelReport {
            kernel,
            instances: 0,
            max_abs_err: 0.0,
            mismatches: 0,
        }
    }

    pub fn ok(&self, tol: f64) -> bool {
        self.mismatches == 0 && self.max_abs_err <= tol
    }
}

/// Every spatial and metric kernel on `instances` random clouds each (up to
/// `max_n` points, 64 for EMD).
pub fn kernel_suite(instances: usize, max_n: usize, seed: u64) -> Vec<KernelReport> {
    let mut rng = seeded_rng(seed);
    let mut out = Vec::new();

    let mut r = KernelReport::new("fps");
    for _ in 0..instances {
        let pts = instance(1, max_n, &mut rng);
        let k = rng.gen_range(1..=pts.len().min(48));
        let first = rng.gen_range(0..pts.len());
        if fps_from(&pts, k, first).unwrap() != brute_fps(&pts, k, first) {
            r.mismatches += 1;
        }
        r.instances += 1;
    }
    out.push(r);

    let mut r = KernelReport::new("knn");
    for _ in 0..instances {
        let pts = instance(1, max_n, &mut rng);
        let index = SpatialIndex::new(&pts);
        let mut bad = false;
        for q in 0..4 {
            let center = if q % 2 == 0 { pts[rng.gen_range(0..pts.len())] } else { random_points(1, &mut rng)[0] };
            let k = rng.gen_range(1..=pts.len().min(40));
            bad |= index.knn(center, k).unwrap() != brute_knn(&pts, center, k);
        }
        r.mismatches += bad as usize;
        r.instances += 1;
    }
    out.push(r);

    let mut r = KernelReport::new("ball_query");
    for _ in 0..instances {
        let pts = instance(1, max_n, &mut rng);
        let index = SpatialIndex::new(&pts);
        let mut bad = false;
        for _ in 0..4 {
            let center = random_points(1, &mut rng)[0];
            let radius = rng.gen_range(0.05..0.8);
            let cap = rng.gen_range(1..=64);
            let want = brute_radius(&pts, center, radius);
            bad |= index.radius(center, radius) != want;
            match ball_query(&index, center, radius, cap, &mut rng) {
                Err(Error::EmptyPatch { .. }) => bad |= !want.is_empty(),
                Err(e) => panic!("ball query failed: {e}"),
                Ok(b) => {
                    let got: HashSet<usize> = b.indices.iter().copied().collect();
                    let members: HashSet<usize> = want.iter().copied().collect();
                    bad |= b.indices.len() != cap;
                    if want.len() >= cap {
                        bad |= got.len() != cap || !got.is_subset(&members) || b.padded;
                    } else {
                        bad |= b.indices[..want.len()] != want[..] || got != members || !b.padded || b.unique != want.len();
                    }
                }
            }
        }
        r.mismatches += bad as usize;
        r.instances += 1;
    }
    out.push(r);

    let mut r = KernelReport::new("outliers");
    for _ in 0..instances {
        let pts = instance(1, max_n, &mut rng);
        let radius = rng.gen_range(0.02..0.5);
        let gamma = rng.gen_range(0..=8);
        if outlier_mask(&pts, radius, gamma) != brute_outliers(&pts, radius, gamma) {
            r.mismatches += 1;
        }
        r.instances += 1;
    }
    out.push(r);

    let mut cd1 = KernelReport::new("cd1");
    let mut cd2 = KernelReport::new("cd2");
    for _ in 0..instances {
        let a = instance(1, max_n, &mut rng);
        let b = instance(1, max_n, &mut rng);
        let (ca, cb) = (PointCloud::new(a.clone()).unwrap(), PointCloud::new(b.clone()).unwrap());
        cd1.max_abs_err = cd1.max_abs_err.max((chamfer_l1(&ca, &cb).unwrap() - brute_chamfer(&a, &b, false)).abs());
        cd2.max_abs_err = cd2.max_abs_err.max((chamfer_l2(&ca, &cb).unwrap() - brute_chamfer(&a, &b, true)).abs());
        cd1.instances += 1;
        cd2.instances += 1;
    }
    out.push(cd1);
    out.push(cd2);

    let mut r = KernelReport::new("emd");
    for i in 0..instances {
        let n = if i % 4 == 0 { rng.gen_range(1..=7) } else { rng.gen_range(1..=64) };
        let (a, b) = if rng.gen_bool(0.3) {
            (lattice_points(n, &mut rng), lattice_points(n, &mut rng))
        } else {
            (random_points(n, &mut rng), random_points(n, &mut rng))
        };
        let (got, assignment) = emd(&PointCloud::new(a.clone()).unwrap(), &PointCloud::new(b.clone()).unwrap()).unwrap();
        let want = if n <= 7 { exhaustive_emd(&a, &b) } else { oracle_emd(&a, &b) };
        r.max_abs_err = r.max_abs_err.max((got - want).abs());
        let mut seen = assignment.perm.clone();
        seen.sort_unstable();
        if seen != (0..n).collect::<Vec<_>>() {
            r.mismatches += 1;
        }
        r.instances += 1;
    }
    out.push(r);
    out
}

/// Largest involution and isometry errors of [`SymPlane::reflect`] (and of
/// the taped reflection) over `pairs` random point/plane pairs whose normals
/// have lengths between 0.1 and 10.
pub fn reflection_suite(pairs: usize, seed: u64) -> (f64, f64) {
    let mut rng = seeded_rng(seed);
    let (mut inv, mut iso) = (0.0f64, 0.0f64);
    for _ in 0..pairs {
        let dir = random_points(1, &mut rng)[0];
        if norm(dir) < 1e-3 {
            continue;
        }
        let len = rng.gen_range(0.1..10.0);
        let n = [dir[0] * len / norm(dir), dir[1] * len / norm(dir), dir[2] * len / norm(dir)];
        let plane = SymPlane::new(n, rng.gen_range(-2.0..2.0)).unwrap();
        let p = random_points(1, &mut rng)[0];
        let q = random_points(1, &mut rng)[0];
        let rp = plane.reflect(p);
        inv = inv.max(norm(sub(plane.reflect(rp), p)));
        let before = dist2(p, q).sqrt();
        iso = iso.max((dist2(rp, plane.reflect(q)).sqrt() - before).abs());

        let mut g = Graph::new();
        let x = g.input_points(&[p]);
        let pl = g.input(1, 4, vec![n[0], n[1], n[2], plane.d]).unwrap();
        let once = g.reflect(x, pl).unwrap();
        let twice = g.reflect(once, pl).unwrap();
        let taped = g.points(once).unwrap()[0];
        inv = inv.max(norm(sub(g.points(twice).unwrap()[0], p)));
        inv = inv.max(norm(sub(taped, rp)));
    }
    (inv, iso)
}

/// Sizes for gradient checks: 16 sparse points, patches of 8 upsampled ×4.
pub const GC_SPARSE: usize = 16;
pub const GC_PATCH: usize = 8;
pub const GC_RATIO: usize = 4;

/// Tiny model with every weight nudged off its initial value, so that the
/// zero-initialised heads pass gradient to the layers below them.
pub fn gc_model(seed: u64) -> Model {
    let mut m = Model::new(&NetworkSpec::tiny(), GC_SPARSE, GC_PATCH, GC_RATIO, seed).unwrap();
    m.perturb(0.1, &mut seeded_rng(seed + 100));
    m
}

fn cloud(points: Vec<Point3>) -> PointCloud {
    PointCloud::new(points).unwrap()
}

fn check<F>(model: &Model, fault: Option<f64>, forward: F) -> Result<GradCheckReport>
where
    F: Fn(&Model, &mut Graph) -> Result<Var>,
{
    let mut params: NetParams = model.params.clone();
    let opts = GradCheckOptions::default();
    grad_check(&mut params, opts, |g, p| {
        if let Some(f) = fault {
            g.inject_backward_fault(f);
        }
        forward(&with_params(model, p), g)
    })
}

/// Gradient checks for each network with its loss node, the combined
/// objective, and (last) the corrupted-backward control.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let model = gc_model(seed);
    let mut rng = stage_rng(seed, 7);
    let partial = cloud(random_points(24, &mut rng));
    let target = cloud(random_points(GC_SPARSE, &mut rng));
    let s0 = random_points(GC_SPARSE, &mut rng);
    let context = random_points(12, &mut rng);
    let patch: Vec<Point3> = random_points(GC_PATCH, &mut rng);
    let patch_gt = cloud(random_points(GC_PATCH * GC_RATIO, &mut rng));

    let sparse = |m: &Model, g: &mut Graph| -> Result<Var> {
        let s = m.sparse_forward(g, partial.points())?;
        let a = g.chamfer_l1(s, &target)?;
        let b = g.emd(s, &target)?;
        g.add(a, b)
    };
    let sym = |m: &Model, g: &mut Graph| -> Result<Var> {
        let q = m.symnet_reflect(g, &s0)?;
        g.chamfer_l2(q, &target)
    };
    let refine = |m: &Model, g: &mut Graph| -> Result<Var> {
        let mut cur = g.input_points(&s0);
        for _ in 0..2 {
            cur = m.refine_forward(g, cur, &context)?;
        }
        g.chamfer_l1(cur, &target)
    };
    let up = |m: &Model, g: &mut Graph| -> Result<Var> {
        let v = m.upsample_forward(g, &patch)?;
        g.chamfer_l1(v, &patch_gt)
    };
    // The objective as assembled in training; SymNet and the refiner see a
    // constant sparse cloud there too.
    let total = |m: &Model, g: &mut Graph| -> Result<Var> {
        let s = m.sparse_forward(g, partial.points())?;
        let q = m.symnet_reflect(g, &s0)?;
        let mut cur = g.input_points(&s0);
        for _ in 0..2 {
            cur = m.refine_forward(g, cur, &context)?;
        }
        let v = m.upsample_forward(g, &patch)?;
        let out = Outputs {
            s,
            q: Some(q),
            s_refined: Some(cur),
            up: vec![(v, patch_gt.clone())],
        };
        Ok(loss_total(g, &out, &target)?.0)
    };

    vec![
        ("sparse completion + CD1 + EMD", check(&model, None, sparse).unwrap()),
        ("SymNet + CD2", check(&model, None, sym).unwrap()),
        ("refiner x2 + CD1", check(&model, None, refine).unwrap()),
        ("upsampler + CD1", check(&model, None, up).unwrap()),
        ("total objective", check(&model, None, total).unwrap()),
        ("corrupted backward (control)", check(&model, Some(1.1), up).unwrap()),
    ]
}

/// The three exact metric identities: fidelity of a completion containing
/// its input, consistency of a constant sequence, MMD against itself.
pub fn metric_identities(seed: u64) -> [(&'static str, f64); 3] {
    let mut rng = seeded_rng(seed);
    let input = cloud(random_points(200, &mut rng));
    let extra = cloud(random_points(500, &mut rng));
    let completed = extra.concat(&input);
    let refs = vec![cloud(random_points(300, &mut rng)), completed.clone(), cloud(random_points(100, &mut rng))];
    [
        ("fidelity", fidelity(&input, &completed).unwrap()),
        ("consistency", consistency(&vec![completed.clone(); 5]).unwrap()),
        ("mmd", mmd(&completed, &refs).unwrap()),
    ]
}
