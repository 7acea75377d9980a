//! The four learned components: sparse completion (encoder + decoder),
//! SymNet, the residual refiner and the patch upsampler.
//!
//! Every network registers its tensors in one shared [`NetParams`] under a
//! reserved prefix (`enc/`, `dec/`, `sym/`, `res/`, `up/`).

use serde::{Deserialize, Serialize};

use crate::cloud::{seeded_rng, PipelineConfig, Point3, PointCloud, Rng, SymPlane};
use crate::error::{Error, Result};
use crate::metrics::chamfer_l2;
use crate::nn::{Dense, Graph, NetParams, SharedMlp, Tensor, Var};
use crate::spatial::{random_downsample_indices, reflect_points};

/// Scale of every coordinate-producing tanh.
pub const TANH_SCALE: f64 = 1.2;

/// Layer widths. Input and output widths are implied by the pipeline
/// configuration and are not listed here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    /// Shared-MLP widths after the 3 input channels; the last is the global feature.
    pub encoder: Vec<usize>,
    /// Hidden decoder widths; a final layer maps to 3·n_sparse.
    pub decoder: Vec<usize>,
    /// Decoder output is `decoder_scale · tanh(·)`.
    pub decoder_scale: f64,
    pub sym_point: Vec<usize>,
    pub sym_head: Vec<usize>,
    pub res_point: Vec<usize>,
    pub res_head: Vec<usize>,
    /// Residuals are `res_scale · 1.2 · tanh(·)`.
    pub res_scale: f64,
    pub up_point: Vec<usize>,
    pub up_mix: usize,
    pub up_fold: Vec<usize>,
    pub up_refine_point: Vec<usize>,
    pub up_refine_head: Vec<usize>,
    /// Final upsampler correction is `up_refine_scale · tanh(·)`.
    pub up_refine_scale: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            encoder: vec![64, 128, 256],
            decoder: vec![256, 256, 256, 512],
            decoder_scale: 1.5,
            sym_point: vec![64, 128],
            sym_head: vec![64, 32],
            res_point: vec![32, 64],
            res_head: vec![64, 32],
            res_scale: 0.25,
            up_point: vec![32, 64],
            up_mix: 64,
            up_fold: vec![48, 48],
            up_refine_point: vec![16, 32],
            up_refine_head: vec![32],
            up_refine_scale: 0.1,
        }
    }
}

impl NetworkSpec {
    /// Small widths (≤ 16) for gradient checks and quick tests.
    pub fn tiny() -> Self {
        NetworkSpec {
            encoder: vec![8, 16],
            decoder: vec![16, 16],
            sym_point: vec![8, 16],
            sym_head: vec![8],
            res_point: vec![8, 16],
            res_head: vec![8],
            up_point: vec![8, 16],
            up_mix: 16,
            up_fold: vec![8, 8],
            up_refine_point: vec![8],
            up_refine_head: vec![8],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("encoder", &self.encoder),
            ("decoder", &self.decoder),
            ("sym_point", &self.sym_point),
            ("sym_head", &self.sym_head),
            ("res_point", &self.res_point),
            ("res_head", &self.res_head),
            ("up_point", &self.up_point),
            ("up_fold", &self.up_fold),
            ("up_refine_point", &self.up_refine_point),
            ("up_refine_head", &self.up_refine_head),
        ];
        for (name, widths) in lists {
            if widths.is_empty() || widths.contains(&0) {
                return Err(Error::Config(format!("nets.{name} needs non-empty, positive widths")));
            }
        }
        if self.up_mix == 0 {
            return Err(Error::Config("nets.up_mix must be positive".into()));
        }
        for (name, v) in [
            ("decoder_scale", self.decoder_scale),
            ("res_scale", self.res_scale),
            ("up_refine_scale", self.up_refine_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("nets.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

fn widths(input: usize, hidden: &[usize], output: Option<usize>) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.extend(output);
    w
}

/// 2-D folding codes on a regular grid in [-1, 1]², as close to square as
/// `count` allows.
pub fn fold_grid(count: usize) -> Vec<[f64; 2]> {
    let mut rows = (count as f64).sqrt().floor() as usize;
    while rows > 1 && count % rows != 0 {
        rows -= 1;
    }
    let rows = rows.max(1);
    let cols = count / rows;
    let lin = |i: usize, n: usize| if n == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 };
    let mut out = Vec::with_capacity(count);
    for r in 0..rows {
        for c in 0..cols {
            out.push([lin(r, rows), lin(c, cols)]);
        }
    }
    out
}

/// Bounding-box centre. Unlike the mean it does not depend on point order,
/// which keeps SymNet exactly permutation invariant.
fn box_center(points: &[Point3]) -> Point3 {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])]
}

/// Parameters plus the layer handles that address them.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: NetworkSpec,
    pub n_sparse: usize,
    pub patch_k: usize,
    pub up_ratio: usize,
    pub params: NetParams,
    encoder: SharedMlp,
    decoder: SharedMlp,
    sym_point: SharedMlp,
    sym_head: SharedMlp,
    res_point: SharedMlp,
    res_head: SharedMlp,
    up_point: SharedMlp,
    up_mix: Dense,
    up_fold: SharedMlp,
    up_refine_point: SharedMlp,
    up_refine_head: SharedMlp,
}

impl Model {
    /// Fresh weights drawn from `seed`. Residual-style output layers (refiner
    /// head, upsampler offset and correction heads) start at zero so the
    /// untrained refiner is the identity.
    pub fn new(spec: &NetworkSpec, n_sparse: usize, patch_k: usize, up_ratio: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if n_sparse == 0 || patch_k == 0 || up_ratio == 0 {
            return Err(Error::Config("n_sparse, patch_k and up_ratio must be positive".into()));
        }
        let mut rng = seeded_rng(seed);
        let mut params = NetParams::new();
        let p = &mut params;
        let r = &mut rng;
        let enc_out = *spec.encoder.last().expect("validated");
        let encoder = SharedMlp::new(p, "enc", &widths(3, &spec.encoder, None), r)?;
        let decoder = SharedMlp::new(p, "dec", &widths(enc_out, &spec.decoder, Some(3 * n_sparse)), r)?;
        let sym_feat = *spec.sym_point.last().expect("validated");
        let sym_point = SharedMlp::new(p, "sym/point", &widths(3, &spec.sym_point, None), r)?;
        let sym_head = SharedMlp::new(p, "sym/head", &widths(sym_feat, &spec.sym_head, Some(4)), r)?;
        let res_feat = *spec.res_point.last().expect("validated");
        let res_point = SharedMlp::new(p, "res/point", &widths(4, &spec.res_point, None), r)?;
        let res_head = SharedMlp::new(p, "res/head", &widths(2 * res_feat, &spec.res_head, Some(3)), r)?;
        let up_feat = *spec.up_point.last().expect("validated");
        let up_point = SharedMlp::new(p, "up/point", &widths(3, &spec.up_point, None), r)?;
        let up_mix = Dense::new(p, "up/mix", 2 * up_feat, spec.up_mix, r)?;
        let up_fold = SharedMlp::new(p, "up/fold", &widths(spec.up_mix + 2, &spec.up_fold, Some(3)), r)?;
        let ref_feat = *spec.up_refine_point.last().expect("validated");
        let up_refine_point = SharedMlp::new(p, "up/refine_point", &widths(3, &spec.up_refine_point, None), r)?;
        let up_refine_head = SharedMlp::new(p, "up/refine_head", &widths(2 * ref_feat, &spec.up_refine_head, Some(3)), r)?;

        for head in [&res_head, &up_fold, &up_refine_head] {
            head.layers.last().expect("non-empty").zero(p);
        }
        Ok(Model {
            spec: spec.clone(),
            n_sparse,
            patch_k,
            up_ratio,
            params,
            encoder,
            decoder,
            sym_point,
            sym_head,
            res_point,
            res_head,
            up_point,
            up_mix,
            up_fold,
            up_refine_point,
            up_refine_head,
        })
    }

    /// Fresh model sized by a pipeline configuration.
    pub fn from_config(cfg: &PipelineConfig, seed: u64) -> Result<Self> {
        Model::new(&cfg.nets, cfg.n_sparse, cfg.patch_k, cfg.up_ratio, seed)
    }

    /// Replaces every parameter value with the same-named tensor of `loaded`.
    /// All names must be present with matching shapes.
    pub fn load_from(&mut self, loaded: &NetParams) -> Result<()> {
        for (name, t) in self.params.iter() {
            match loaded.by_name(name) {
                Some(src) if src.shape == t.shape => {}
                Some(src) => {
                    return Err(Error::Shape(format!(
                        "checkpoint tensor `{name}` has shape {:?}, expected {:?}",
                        src.shape, t.shape
                    )))
                }
                None => return Err(Error::Data(format!("checkpoint is missing tensor `{name}`"))),
            }
        }
        self.params.copy_matching(loaded)?;
        Ok(())
    }

    /// Zeroes the refiner's output layer.
    pub fn zero_residual_head(&mut self) {
        self.res_head.layers.last().expect("non-empty").zero(&mut self.params);
    }

    fn pool_concat(&self, g: &mut Graph, feat: Var) -> Result<Var> {
        let rows = g.shape(feat).0;
        let global = g.max_pool_rows(feat)?;
        let tiled = g.tile_rows(global, rows);
        g.concat_cols(feat, tiled)
    }

    /// Global feature of a point set, `[1, encoder_out]`.
    pub fn encode(&self, g: &mut Graph, points: Var) -> Result<Var> {
        let h = self.encoder.forward(g, &self.params, points, true)?;
        g.max_pool_rows(h)
    }

    /// Sparse completion `[n_sparse, 3]` from partial points.
    pub fn sparse_forward(&self, g: &mut Graph, partial: &[Point3]) -> Result<Var> {
        if partial.is_empty() {
            return Err(Error::InvalidCloud("partial cloud is empty".into()));
        }
        let x = g.input_points(partial);
        let feat = self.encode(g, x)?;
        let out = self.decoder.forward(g, &self.params, feat, false)?;
        let out = g.tanh(out);
        let out = g.scale(out, self.spec.decoder_scale);
        g.reshape(out, self.n_sparse, 3)
    }

    pub fn sparse_complete(&self, partial: &PointCloud) -> Result<PointCloud> {
        let mut g = Graph::new();
        let s = self.sparse_forward(&mut g, partial.points())?;
        PointCloud::new(g.points(s)?)
    }

    /// Raw SymNet output `[1, 4]` for points centred on their bounding box.
    fn symnet_raw(&self, g: &mut Graph, s: &[Point3]) -> Result<(Var, Point3)> {
        if s.is_empty() {
            return Err(Error::InvalidCloud("SymNet input is empty".into()));
        }
        let c = box_center(s);
        let centred: Vec<Point3> = s.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect();
        let x = g.input_points(&centred);
        let h = self.sym_point.forward(g, &self.params, x, true)?;
        let pooled = g.max_pool_rows(h)?;
        let raw = self.sym_head.forward(g, &self.params, pooled, false)?;
        Ok((raw, c))
    }

    /// Mirror image `Q` of `s` across the predicted plane, built on the tape.
    /// `s` enters as a constant, so only SymNet receives gradients.
    pub fn symnet_reflect(&self, g: &mut Graph, s: &[Point3]) -> Result<Var> {
        let (raw, c) = self.symnet_raw(g, s)?;
        let centred: Vec<Point3> = s.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect();
        let x = g.input_points(&centred);
        let q = g.reflect(x, raw)?;
        let shift = g.input(1, 3, c.to_vec())?;
        g.add_row(q, shift)
    }

    /// Unit-normal plane in the frame of `s`.
    pub fn symnet_predict(&self, s: &PointCloud) -> Result<SymPlane> {
        let mut g = Graph::new();
        let (raw, c) = self.symnet_raw(&mut g, s.points())?;
        let v = g.value(raw);
        let mut n = [v[0], v[1], v[2]];
        if n == [0.0; 3] {
            n = [1.0, 0.0, 0.0];
        }
        let d = v[3] - (n[0] * c[0] + n[1] * c[1] + n[2] * c[2]);
        SymPlane::new(n, d)?.normalized()
    }

    /// One residual step on the tape. The first `n` rows of the refiner input
    /// are the points of `s` (label 0); `context` rows (label 1) only inform
    /// the global feature.
    pub fn refine_forward(&self, g: &mut Graph, s: Var, context: &[Point3]) -> Result<Var> {
        let (n, cols) = g.shape(s);
        if cols != 3 {
            return Err(Error::Shape(format!("refiner expects [n, 3], got [{n}, {cols}]")));
        }
        let zeros = g.input(n, 1, vec![0.0; n])?;
        let labelled = g.concat_cols(s, zeros)?;
        let x = if context.is_empty() {
            labelled
        } else {
            let ctx: Vec<f64> = context.iter().flat_map(|p| [p[0], p[1], p[2], 1.0]).collect();
            let ctx = g.input(context.len(), 4, ctx)?;
            g.concat_rows(labelled, ctx)?
        };
        let feat = self.res_point.forward(g, &self.params, x, true)?;
        let h = self.pool_concat(g, feat)?;
        let out = self.res_head.forward(g, &self.params, h, false)?;
        let out = g.head_rows(out, n)?;
        let out = g.tanh(out);
        let residual = g.scale(out, self.spec.res_scale * TANH_SCALE);
        g.add(s, residual)
    }

    /// Context for the refiner: `partial ∪ mirrored`, randomly downsampled so
    /// that, with the sparse points, at most `n_refine` rows are fed.
    pub fn refine_context(
        partial: &PointCloud,
        mirrored: &PointCloud,
        n_sparse: usize,
        n_refine: usize,
        rng: &mut Rng,
    ) -> Vec<Point3> {
        let all: Vec<Point3> = partial.points().iter().chain(mirrored.points()).copied().collect();
        let budget = n_refine.saturating_sub(n_sparse);
        if all.len() <= budget {
            return all;
        }
        random_downsample_indices(all.len(), budget, rng)
            .into_iter()
            .map(|i| all[i])
            .collect()
    }

    pub fn refine_once(
        &self,
        s: &PointCloud,
        partial: &PointCloud,
        mirrored: &PointCloud,
        n_refine: usize,
        rng: &mut Rng,
    ) -> Result<PointCloud> {
        let context = Self::refine_context(partial, mirrored, s.len(), n_refine, rng);
        let mut g = Graph::new();
        let sv = g.input_points(s.points());
        let out = self.refine_forward(&mut g, sv, &context)?;
        PointCloud::new(g.points(out)?)
    }

    /// `iters` weight-tied refinement steps.
    pub fn refine_iterative(
        &self,
        s: &PointCloud,
        partial: &PointCloud,
        mirrored: &PointCloud,
        iters: usize,
        n_refine: usize,
        rng: &mut Rng,
    ) -> Result<PointCloud> {
        if iters == 0 {
            return Err(Error::Config("refine_iters must be at least 1".into()));
        }
        let mut cur = s.clone();
        for _ in 0..iters {
            cur = self.refine_once(&cur, partial, mirrored, n_refine, rng)?;
        }
        Ok(cur)
    }

    /// Upsampled patch `[patch_k · up_ratio, 3]` from a framed `[patch_k, 3]` patch.
    pub fn upsample_forward(&self, g: &mut Graph, patch: &[Point3]) -> Result<Var> {
        if patch.len() != self.patch_k {
            return Err(Error::Cardinality(format!(
                "upsampler expects {} points, got {}",
                self.patch_k,
                patch.len()
            )));
        }
        let r = self.up_ratio;
        let x = g.input_points(patch);
        let feat = self.up_point.forward(g, &self.params, x, true)?;
        let h = self.pool_concat(g, feat)?;
        let h = self.up_mix.forward(g, &self.params, h)?;
        let h = g.leaky_relu(h);
        let dup = g.repeat_each_row(h, r);
        let codes: Vec<f64> = fold_grid(r).into_iter().flatten().collect();
        let codes = g.input(r, 2, codes)?;
        let codes = g.tile_rows(codes, patch.len());
        let folded = g.concat_cols(dup, codes)?;
        let off = self.up_fold.forward(g, &self.params, folded, false)?;
        let off = g.tanh(off);
        let off = g.scale(off, TANH_SCALE);
        let base = g.repeat_each_row(x, r);
        let coarse = g.add(base, off)?;

        let rf = self.up_refine_point.forward(g, &self.params, coarse, true)?;
        let rh = self.pool_concat(g, rf)?;
        let corr = self.up_refine_head.forward(g, &self.params, rh, false)?;
        let corr = g.tanh(corr);
        let corr = g.scale(corr, self.spec.up_refine_scale);
        g.add(coarse, corr)
    }

    pub fn upsample_patch(&self, patch: &PointCloud) -> Result<PointCloud> {
        let mut g = Graph::new();
        let out = self.upsample_forward(&mut g, patch.points())?;
        PointCloud::new(g.points(out)?)
    }

    /// Names of all tensors with the given prefix.
    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(n, _)| n.to_string())
            .collect()
    }

    /// Adds uniform noise in `[-amount, amount]` to every parameter value.
    pub fn perturb(&mut self, amount: f64, rng: &mut Rng) {
        use rand::Rng as _;
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            let t: &mut Tensor = self.params.get_mut(id);
            for v in &mut t.values {
                *v += rng.gen_range(-amount..=amount);
            }
        }
    }
}

/// `(P′, passed)`: `P′` is the mirrored partial when the self-reflection
/// CD₂ of `s` is at most `tau`, otherwise the partial itself.
pub fn symmetry_gate(s: &PointCloud, plane: &SymPlane, partial: &PointCloud, tau: f64) -> Result<(PointCloud, bool)> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    let loss = self_reflection_loss(s, plane)?;
    if loss <= tau {
        Ok((reflect_points(partial, plane)?, true))
    } else {
        Ok((partial.clone(), false))
    }
}

/// CD₂ between `s` and its mirror image.
pub fn self_reflection_loss(s: &PointCloud, plane: &SymPlane) -> Result<f64> {
    chamfer_l2(&reflect_points(s, plane)?, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::seeded_rng;
    use rand::Rng as _;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = seeded_rng(seed);
        PointCloud::new((0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect())
            .unwrap()
    }

    fn tiny_model() -> Model {
        Model::new(&NetworkSpec::tiny(), 16, 8, 4, 3).unwrap()
    }

    #[test]
    fn fold_grid_shapes() {
        assert_eq!(fold_grid(4), vec![[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]);
        assert_eq!(fold_grid(8).len(), 8);
        assert_eq!(fold_grid(7).len(), 7);
        assert_eq!(fold_grid(1), vec![[0.0, 0.0]]);
    }

    #[test]
    fn sparse_completion_is_deterministic_and_permutation_invariant() {
        let m = tiny_model();
        let p = random_cloud(20, 1);
        let a = m.sparse_complete(&p).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, m.sparse_complete(&p).unwrap());
        let mut rev = p.points().to_vec();
        rev.reverse();
        assert_eq!(a, m.sparse_complete(&PointCloud::new(rev).unwrap()).unwrap());
    }

    #[test]
    fn symnet_permutation_invariant_and_unit() {
        let m = tiny_model();
        let s = random_cloud(30, 2);
        let plane = m.symnet_predict(&s).unwrap();
        assert!((crate::cloud::norm(plane.n) - 1.0).abs() < 1e-12);
        let mut rev = s.points().to_vec();
        rev.reverse();
        let plane2 = m.symnet_predict(&PointCloud::new(rev).unwrap()).unwrap();
        assert_eq!(plane.n, plane2.n);
        assert!((plane.d - plane2.d).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_is_identity() {
        let m = tiny_model();
        let s = random_cloud(16, 3);
        let p = random_cloud(10, 4);
        let mut rng = seeded_rng(0);
        assert_eq!(m.refine_iterative(&s, &p, &p, 5, 64, &mut rng).unwrap(), s);
    }

    #[test]
    fn residuals_bounded() {
        let mut m = tiny_model();
        m.perturb(2.0, &mut seeded_rng(9));
        let s = random_cloud(16, 3);
        let p = random_cloud(10, 4);
        let out = m.refine_once(&s, &p, &p, 64, &mut seeded_rng(0)).unwrap();
        let bound = 0.25 * 1.2;
        for (a, b) in out.points().iter().zip(s.points()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn upsample_cardinality_and_padding() {
        let mut m = tiny_model();
        m.perturb(0.5, &mut seeded_rng(1));
        let patch = PointCloud::new(vec![[0.1, 0.2, 0.3]; 8]).unwrap();
        let out = m.upsample_patch(&patch).unwrap();
        assert_eq!(out.len(), 32);
        assert!(m.upsample_patch(&random_cloud(7, 1)).is_err());
    }

    #[test]
    fn gate_examples() {
        let s = PointCloud::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [-0.5, 1.0, 0.0]]).unwrap();
        let plane = SymPlane::new([1.0, 0.0, 0.0], 0.0).unwrap();
        let partial = PointCloud::new(vec![[0.3, 0.1, 0.2]]).unwrap();
        let (mirrored, passed) = symmetry_gate(&s, &plane, &partial, 1e-9).unwrap();
        assert!(passed);
        assert_eq!(mirrored.points(), &[[-0.3, 0.1, 0.2]]);
        let tilted = SymPlane::new([0.0, 1.0, 0.0], 0.0).unwrap();
        let (same, passed) = symmetry_gate(&s, &tilted, &partial, 1e-3).unwrap();
        assert!(!passed);
        assert_eq!(same, partial);
        let (_, passed) = symmetry_gate(&s, &tilted, &partial, f64::INFINITY).unwrap();
        assert!(passed);
    }

    #[test]
    fn checkpoint_load_checks_names() {
        let mut m = tiny_model();
        let other = Model::new(&NetworkSpec::tiny(), 16, 8, 4, 99).unwrap();
        m.load_from(&other.params).unwrap();
        assert_eq!(m.params, other.params);
        let bigger = Model::new(&NetworkSpec::tiny(), 32, 8, 4, 0).unwrap();
        assert!(m.load_from(&bigger.params).is_err());
    }
}
