//! Joint optimisation of all networks, validation, checkpoints and evaluation.
//!
//! Each loss term reaches only its own network: SymNet and the refiner see a
//! detached sparse completion, and patch pairs are cut from a detached
//! refined cloud.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cloud::{normalize_to_unit_sphere, stage_rng, PipelineConfig, PointCloud, Rng, SymPlane};
use crate::data::dataset::{Dataset, Sample, Split};
use crate::data::patches::make_patch_pairs;
use crate::error::{Error, Result};
use crate::metrics::{chamfer_l1, chamfer_l2, consistency, f_score_1pct, fidelity, format_sig9, mmd};
use crate::networks::{symmetry_gate, Model};
use crate::nn::{adam_step, load_params, lr_at, params_from_bytes, params_to_bytes, save_params, AdamState, Graph, NetParams, Tensor, Var};
use crate::pipeline::complete;
use crate::spatial::radius_outlier_removal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    /// Initial learning rate, decayed ×0.8 every 3000 steps.
    pub lr: f64,
    /// Shapes per step; their gradients are averaged.
    pub batch: usize,
    pub pairs_per_shape: usize,
    /// Validation period in steps (validation also runs at step 0 and at the end).
    pub eval_every: u64,
    /// Validation shapes used during training (the first ones of the split).
    pub val_shapes: usize,
    /// Steps during which patch pairs come from the ground-truth sparse cloud
    /// before switching to the network's own refined output.
    pub curriculum_steps: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            lr: 1e-3,
            batch: 4,
            pairs_per_shape: 24,
            eval_every: 250,
            val_shapes: 16,
            curriculum_steps: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch < 1 || self.pairs_per_shape < 1 || self.eval_every < 1 || self.val_shapes < 1 {
            return Err(Error::Config(
                "batch, pairs_per_shape, eval_every and val_shapes must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A sample in the frame of its own normalized partial, as the pipeline
/// sees it.
#[derive(Debug, Clone)]
pub struct TrainShape {
    pub id: String,
    pub partial: PointCloud,
    pub gt_sparse: PointCloud,
    pub gt_dense: PointCloud,
    pub plane: Option<SymPlane>,
}

impl TrainShape {
    pub fn from_sample(s: &Sample) -> Result<Self> {
        let (partial, t) = normalize_to_unit_sphere(&s.partial)?;
        Ok(TrainShape {
            id: s.meta.id.clone(),
            partial,
            gt_sparse: t.apply_cloud(&s.gt_sparse),
            gt_dense: t.apply_cloud(&s.gt_dense),
            plane: s.meta.plane.map(|p| t.apply_plane(&p)),
        })
    }
}

/// The four terms of the overall objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub sparse: f64,
    pub sym: f64,
    pub refine: f64,
    pub up: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.sparse + self.sym + self.refine + self.up
    }

    fn add(&mut self, o: &LossParts, w: f64) {
        self.sparse += w * o.sparse;
        self.sym += w * o.sym;
        self.refine += w * o.refine;
        self.up += w * o.up;
    }

    fn is_finite(&self) -> bool {
        [self.sparse, self.sym, self.refine, self.up].iter().all(|v| v.is_finite())
    }
}

/// Network outputs on one graph. `up` pairs each upsampled patch with its
/// ground-truth dense patch.
pub struct Outputs {
    pub s: Var,
    pub q: Option<Var>,
    pub s_refined: Option<Var>,
    pub up: Vec<(Var, PointCloud)>,
}

/// `L = CD₁(S,Ŝ) + EMD(S,Ŝ) + CD₂(Q,Ŝ) + CD₁(S̃,Ŝ) + L_up`, where `L_up` is
/// the mean patch-local CD₁. Missing outputs contribute zero.
pub fn loss_total(g: &mut Graph, out: &Outputs, gt_sparse: &PointCloud) -> Result<(Var, LossParts)> {
    let (n, _) = g.shape(out.s);
    if n != gt_sparse.len() {
        return Err(Error::Cardinality(format!(
            "EMD needs equal sizes: sparse output has {n} points, ground truth {}",
            gt_sparse.len()
        )));
    }
    let mut parts = LossParts::default();
    let cd = g.chamfer_l1(out.s, gt_sparse)?;
    let em = g.emd(out.s, gt_sparse)?;
    let mut total = g.add(cd, em)?;
    parts.sparse = g.scalar(total);
    if let Some(q) = out.q {
        let l = g.chamfer_l2(q, gt_sparse)?;
        parts.sym = g.scalar(l);
        total = g.add(total, l)?;
    }
    if let Some(r) = out.s_refined {
        let l = g.chamfer_l1(r, gt_sparse)?;
        parts.refine = g.scalar(l);
        total = g.add(total, l)?;
    }
    if !out.up.is_empty() {
        let mut acc: Option<Var> = None;
        for (v, target) in &out.up {
            let l = g.chamfer_l1(*v, target)?;
            acc = Some(match acc {
                Some(a) => g.add(a, l)?,
                None => l,
            });
        }
        let l = g.scale(acc.expect("non-empty"), 1.0 / out.up.len() as f64);
        parts.up = g.scalar(l);
        total = g.add(total, l)?;
    }
    Ok((total, parts))
}

/// Forward pass of every stage used in training for one shape.
/// `gt_patches` selects the ground-truth sparse cloud as the patch domain.
pub fn forward_shape(
    model: &Model,
    g: &mut Graph,
    shape: &TrainShape,
    cfg: &PipelineConfig,
    pairs: usize,
    gt_patches: bool,
    rng: &mut Rng,
) -> Result<Outputs> {
    let ab = cfg.ablation;
    let s = model.sparse_forward(g, shape.partial.points())?;
    let s_pts = PointCloud::new(g.points(s)?)?;

    let mut q = None;
    let mut mirrored = shape.partial.clone();
    if !ab.disable_symnet {
        q = Some(model.symnet_reflect(g, s_pts.points())?);
        let plane = model.symnet_predict(&s_pts)?;
        mirrored = symmetry_gate(&s_pts, &plane, &shape.partial, cfg.tau)?.0;
    }

    let mut s_refined = None;
    let mut refined_pts = s_pts.clone();
    if !ab.disable_resnet {
        let mut cur = g.input_points(s_pts.points());
        for _ in 0..cfg.refine_iters {
            let ctx = Model::refine_context(&shape.partial, &mirrored, cfg.n_sparse, cfg.n_refine, rng);
            cur = model.refine_forward(g, cur, &ctx)?;
        }
        refined_pts = PointCloud::new(g.points(cur)?)?;
        s_refined = Some(cur);
    }
    if !ab.disable_outlier_removal {
        let kept = radius_outlier_removal(&refined_pts, cfg.r_outlier_sparse, cfg.gamma);
        if !kept.is_empty() {
            refined_pts = kept;
        }
    }

    let domain = if gt_patches { &shape.gt_sparse } else { &refined_pts };
    let patch_pairs = match make_patch_pairs(domain, &shape.gt_dense, pairs, cfg, rng) {
        Ok(p) => p,
        // An untrained decoder can land far from the shape; fall back to the
        // ground-truth domain rather than skip the upsampler.
        Err(Error::Data(_)) if !gt_patches => make_patch_pairs(&shape.gt_sparse, &shape.gt_dense, pairs, cfg, rng)?,
        Err(e) => return Err(e),
    };
    let mut up = Vec::with_capacity(patch_pairs.len());
    for pair in patch_pairs {
        let v = model.upsample_forward(g, pair.sparse.points())?;
        up.push((v, pair.dense));
    }
    Ok(Outputs { s, q, s_refined, up })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub loss: LossParts,
    pub val: Option<(f64, f64)>,
}

pub const LOG_HEADER: &str = "step,lr,l_sparse,l_sym,l_refine,l_up,val_cd1,val_fscore";

impl LogRow {
    pub fn csv(&self) -> String {
        let (vc, vf) = match self.val {
            Some((c, f)) => (format_sig9(c), format_sig9(f)),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{vc},{vf}",
            self.step,
            format_sig9(self.lr),
            format_sig9(self.loss.sparse),
            format_sig9(self.loss.sym),
            format_sig9(self.loss.refine),
            format_sig9(self.loss.up),
        )
    }
}

/// Mean dense CD₁ and F-score@1% of the pipeline over `samples`.
pub fn validate(model: &Model, samples: &[Sample], cfg: &PipelineConfig) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Data("no validation samples".into()));
    }
    let (mut cd, mut fs) = (0.0, 0.0);
    for s in samples {
        let r = complete(model, &s.partial, cfg)?;
        cd += chamfer_l1(&r.dense, &s.gt_dense)?;
        fs += f_score_1pct(&r.dense, &s.gt_dense)?;
    }
    let n = samples.len() as f64;
    Ok((cd / n, fs / n))
}

/// Files written into a training output directory.
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn best(&self) -> PathBuf {
        self.dir.join("best.pcck")
    }
    pub fn last(&self) -> PathBuf {
        self.dir.join("last.pcck")
    }
    pub fn optim(&self) -> PathBuf {
        self.dir.join("optim.pcck")
    }
    pub fn state(&self) -> PathBuf {
        self.dir.join("state.json")
    }
    pub fn log(&self) -> PathBuf {
        self.dir.join("log.csv")
    }
    pub fn meta(&self) -> PathBuf {
        self.dir.join("run.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResumeState {
    step: u64,
    best_step: u64,
    best_val_cd1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMeta<'a> {
    pub train: &'a TrainConfig,
    pub pipeline: &'a PipelineConfig,
    pub ablation: Vec<&'static str>,
    pub lr_schedule: &'static str,
    pub dataset_hash: Option<&'a str>,
    pub version: &'static str,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn optim_to_params(model: &Model, st: &AdamState) -> Result<NetParams> {
    let mut p = NetParams::new();
    for (i, (name, t)) in model.params.iter().enumerate() {
        p.insert(&format!("m/{name}"), Tensor::new(t.shape.clone(), st.m[i].clone())?)?;
        p.insert(&format!("v/{name}"), Tensor::new(t.shape.clone(), st.v[i].clone())?)?;
    }
    Ok(p)
}

fn optim_from_params(model: &Model, p: &NetParams, st: &mut AdamState) -> Result<()> {
    for (i, (name, t)) in model.params.iter().enumerate() {
        for (prefix, dst) in [("m", &mut st.m[i]), ("v", &mut st.v[i])] {
            let key = format!("{prefix}/{name}");
            let src = p
                .by_name(&key)
                .ok_or_else(|| Error::Data(format!("optimizer state is missing `{key}`")))?;
            if src.shape != t.shape {
                return Err(Error::Shape(format!("optimizer tensor `{key}` has the wrong shape")));
            }
            dst.copy_from_slice(&src.values);
        }
    }
    Ok(())
}

/// Result of a training run.
pub struct TrainOutcome {
    /// Parameters with the best validation CD₁ seen.
    pub best: Model,
    /// Parameters after the last step.
    pub last: Model,
    pub log: Vec<LogRow>,
    pub best_step: u64,
    pub best_val_cd1: f64,
}

/// Trains from scratch, or resumes from `out_dir` when `resume` is set.
/// With `out_dir`, checkpoints, the CSV log and run metadata are written
/// there after every validation.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    tc: &TrainConfig,
    pc: &PipelineConfig,
    out_dir: Option<&Path>,
    resume: bool,
    dataset_hash: Option<&str>,
) -> Result<TrainOutcome> {
    tc.validate()?;
    pc.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let shapes: Vec<TrainShape> = train_set.iter().map(TrainShape::from_sample).collect::<Result<_>>()?;
    if let Some(bad) = shapes.iter().find(|s| s.gt_sparse.len() != pc.n_sparse) {
        return Err(Error::Cardinality(format!(
            "sample {} has {} ground-truth sparse points, configuration expects {}",
            bad.id,
            bad.gt_sparse.len(),
            pc.n_sparse
        )));
    }
    let val = &val_set[..tc.val_shapes.min(val_set.len())];
    let files = out_dir.map(|d| RunFiles { dir: d.to_path_buf() });
    if let Some(f) = &files {
        std::fs::create_dir_all(&f.dir).map_err(|e| Error::io(&f.dir, e))?;
    }

    let mut model = Model::from_config(pc, tc.seed)?;
    let mut adam = AdamState::new(&model.params, tc.lr);
    let mut log: Vec<LogRow> = Vec::new();
    let mut best = model.clone();
    let mut best_step = 0;
    let mut best_val = f64::INFINITY;
    let mut start = 0u64;

    if resume {
        let f = files
            .as_ref()
            .ok_or_else(|| Error::Config("resume needs an output directory".into()))?;
        let text = std::fs::read_to_string(f.state()).map_err(|e| Error::io(f.state(), e))?;
        let st: ResumeState = serde_json::from_str(&text).map_err(|e| Error::Data(format!("state.json: {e}")))?;
        model.load_from(&load_params(&f.last())?)?;
        best.load_from(&load_params(&f.best())?)?;
        let bytes = std::fs::read(f.optim()).map_err(|e| Error::io(f.optim(), e))?;
        optim_from_params(&model, &params_from_bytes(&bytes)?, &mut adam)?;
        adam.step = st.step;
        start = st.step;
        best_step = st.best_step;
        best_val = st.best_val_cd1;
        log = read_log(&f.log())?.into_iter().filter(|r| r.step <= start).collect();
    }

    let save = |model: &Model, best: &Model, adam: &AdamState, log: &[LogRow], step: u64, best_step: u64, best_val: f64| -> Result<()> {
        let Some(f) = &files else { return Ok(()) };
        save_params(&model.params, &f.last())?;
        save_params(&best.params, &f.best())?;
        let optim = f.optim();
        std::fs::write(&optim, params_to_bytes(&optim_to_params(model, adam)?)).map_err(|e| Error::io(&optim, e))?;
        let st = ResumeState {
            step,
            best_step,
            best_val_cd1: best_val,
        };
        write_text(&f.state(), &serde_json::to_string_pretty(&st)?)?;
        let mut csv = String::from(LOG_HEADER);
        csv.push('\n');
        for r in log {
            csv.push_str(&r.csv());
            csv.push('\n');
        }
        write_text(&f.log(), &csv)?;
        let meta = RunMeta {
            train: tc,
            pipeline: pc,
            ablation: pc.ablation.names(),
            lr_schedule: "multiplicative: lr * 0.8^floor(step / 3000)",
            dataset_hash,
            version: env!("CARGO_PKG_VERSION"),
        };
        write_text(&f.meta(), &serde_json::to_string_pretty(&meta)?)
    };

    let mut pending_val = None;
    if start == 0 {
        let v = validate(&model, val, pc)?;
        best_val = v.0;
        best = model.clone();
        pending_val = Some(v);
    }

    for step in start..tc.steps {
        let mut rng = stage_rng(tc.seed, 1000 + step);
        model.params.zero_grads();
        let mut parts = LossParts::default();
        let w = 1.0 / tc.batch as f64;
        for _ in 0..tc.batch {
            let shape = &shapes[rng.gen_range(0..shapes.len())];
            let mut g = Graph::new();
            let out = forward_shape(&model, &mut g, shape, pc, tc.pairs_per_shape, step < tc.curriculum_steps, &mut rng)?;
            let (loss, p) = loss_total(&mut g, &out, &shape.gt_sparse)?;
            if !p.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at step {step} on {}: sparse {}, sym {}, refine {}, up {}",
                    shape.id, p.sparse, p.sym, p.refine, p.up
                )));
            }
            let scaled = g.scale(loss, w);
            g.backward(scaled, &mut model.params)?;
            parts.add(&p, w);
        }
        adam_step(&mut model.params, &mut adam)
            .map_err(|e| Error::Numeric(format!("optimizer failed at step {step}: {e}")))?;

        let done = step + 1;
        let mut row = LogRow {
            step,
            lr: lr_at(tc.lr, step),
            loss: parts,
            val: pending_val.take(),
        };
        if done % tc.eval_every == 0 || done == tc.steps {
            snap_f32(&mut model.params, &mut adam);
            let v = validate(&model, val, pc)?;
            if v.0 < best_val {
                best_val = v.0;
                best_step = done;
                best = model.clone();
            }
            log.push(row);
            row = LogRow {
                step: done,
                lr: lr_at(tc.lr, done),
                loss: LossParts::default(),
                val: Some(v),
            };
            // Validation-only rows carry no loss; keep them distinct.
            row.loss = LossParts {
                sparse: f64::NAN,
                sym: f64::NAN,
                refine: f64::NAN,
                up: f64::NAN,
            };
            log.push(row);
            save(&model, &best, &adam, &log, done, best_step, best_val)?;
        } else {
            log.push(row);
        }
    }

    Ok(TrainOutcome {
        best,
        last: model,
        log,
        best_step,
        best_val_cd1: best_val,
    })
}

/// Rounds weights and optimizer moments to f32 so that the in-memory run
/// equals one resumed from the (f32) files written at this point.
fn snap_f32(params: &mut NetParams, adam: &mut AdamState) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for v in &mut params.get_mut(id).values {
            *v = *v as f32 as f64;
        }
    }
    for buf in adam.m.iter_mut().chain(adam.v.iter_mut()) {
        for v in buf.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}

fn parse_opt(s: &str) -> Option<f64> {
    if s.is_empty() {
        None
    } else {
        s.parse().ok()
    }
}

/// Reads a log written by [`train`].
pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: "malformed log row".into(),
        };
        if f.len() != 8 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let val = match (parse_opt(f[6]), parse_opt(f[7])) {
            (Some(c), Some(s)) => Some((c, s)),
            _ => None,
        };
        rows.push(LogRow {
            step: f[0].parse().map_err(|_| bad())?,
            lr: num(f[1])?,
            loss: LossParts {
                sparse: num(f[2])?,
                sym: num(f[3])?,
                refine: num(f[4])?,
                up: num(f[5])?,
            },
            val,
        });
    }
    Ok(rows)
}

/// Loads the train and val splits and trains on them.
pub fn train_dataset(
    ds: &Dataset,
    tc: &TrainConfig,
    pc: &PipelineConfig,
    out_dir: Option<&Path>,
    resume: bool,
) -> Result<TrainOutcome> {
    let train_set = ds.load_split(Split::Train)?;
    let val_set = ds.load_split(Split::Val)?;
    train(&train_set, &val_set, tc, pc, out_dir, resume, Some(&ds.manifest.hash))
}

/// Loads a model sized by `cfg` from a checkpoint file.
pub fn load_model(path: &Path, cfg: &PipelineConfig) -> Result<Model> {
    let mut model = Model::from_config(cfg, 0)?;
    model.load_from(&load_params(path)?)?;
    Ok(model)
}

/// Where evaluated dense clouds come from.
#[derive(Clone, Copy)]
pub enum EvalSource<'a> {
    Model(&'a Model),
    /// The ground-truth dense cloud itself; checks the metric plumbing.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub family: String,
    pub metrics: Vec<(&'static str, f64)>,
}

/// Per-shape CD₁, CD₂ and F-score@1% of the dense completion.
pub fn evaluate(source: EvalSource<'_>, samples: &[Sample], cfg: &PipelineConfig) -> Result<Vec<EvalRow>> {
    samples
        .iter()
        .map(|s| {
            let dense = match source {
                EvalSource::Model(m) => complete(m, &s.partial, cfg)?.dense,
                EvalSource::GroundTruth => s.gt_dense.clone(),
            };
            Ok(EvalRow {
                id: s.meta.id.clone(),
                family: s.meta.family.to_string(),
                metrics: vec![
                    ("cd1", chamfer_l1(&dense, &s.gt_dense)?),
                    ("cd2", chamfer_l2(&dense, &s.gt_dense)?),
                    ("fscore", f_score_1pct(&dense, &s.gt_dense)?),
                ],
            })
        })
        .collect()
}

/// Fidelity (mean over frames), MMD against `library` (mean over frames)
/// and Consistency of the completions of a frame sequence.
pub fn evaluate_sequence(
    model: &Model,
    frames: &[PointCloud],
    library: &[PointCloud],
    cfg: &PipelineConfig,
) -> Result<Vec<(&'static str, f64)>> {
    if frames.len() < 2 {
        return Err(Error::Data("a sequence needs at least 2 frames".into()));
    }
    let completions: Vec<PointCloud> = frames
        .iter()
        .map(|f| Ok(complete(model, f, cfg)?.dense))
        .collect::<Result<_>>()?;
    let n = frames.len() as f64;
    let mut fid = 0.0;
    let mut m = 0.0;
    for (f, c) in frames.iter().zip(&completions) {
        fid += fidelity(f, c)?;
        m += mmd(c, library)?;
    }
    Ok(vec![("fidelity", fid / n), ("mmd", m / n), ("consistency", consistency(&completions)?)])
}

/// Long-format CSV (`shape_id,metric,value`) with per-family means
/// (`mean:<family>`) and an overall `mean` summary.
pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("shape_id,metric,value\n");
    for r in rows {
        for (name, v) in &r.metrics {
            let _ = writeln!(out, "{},{name},{}", r.id, format_sig9(*v));
        }
    }
    let mut groups: BTreeMap<String, Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(format!("mean:{}", r.family)).or_default().push(r);
    }
    groups.insert("mean".into(), rows.iter().collect());
    for (label, members) in &groups {
        if members.is_empty() {
            continue;
        }
        for (k, (name, _)) in members[0].metrics.iter().enumerate() {
            let mean = members.iter().map(|r| r.metrics[k].1).sum::<f64>() / members.len() as f64;
            let _ = writeln!(out, "{label},{name},{}", format_sig9(mean));
        }
    }
    out
}

/// Mean of `metric` over rows.
pub fn mean_metric(rows: &[EvalRow], metric: &str) -> f64 {
    let vals: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.metrics.iter().find(|(n, _)| *n == metric).map(|m| m.1))
        .collect();
    vals.iter().sum::<f64>() / vals.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::seeded_rng;
    use crate::data::dataset::{generate_sample, GenConfig};
    use crate::metrics::emd;
    use crate::networks::NetworkSpec;

    fn small() -> (PipelineConfig, GenConfig) {
        let pc = PipelineConfig {
            n_sparse: 32,
            n_dense: 256,
            n_refine: 96,
            patch_k: 8,
            up_ratio: 4,
            patches_test: 4,
            nets: NetworkSpec::tiny(),
            ..PipelineConfig::default()
        };
        let gc = GenConfig {
            count: 8,
            n_dense: 256,
            n_sparse: 32,
            n_partial: 64,
            ..GenConfig::default()
        };
        (pc, gc)
    }

    fn samples(gc: &GenConfig, range: std::ops::Range<usize>) -> Vec<Sample> {
        range.map(|i| generate_sample(i, gc).unwrap()).collect()
    }

    #[test]
    fn perfect_outputs_give_zero_loss() {
        let (_, gc) = small();
        let s = &samples(&gc, 0..1)[0];
        let mut g = Graph::new();
        let sv = g.input_points(s.gt_sparse.points());
        let patch = s.gt_dense.select(&(0..16).collect::<Vec<_>>());
        let pv = g.input_points(patch.points());
        let out = Outputs {
            s: sv,
            q: Some(sv),
            s_refined: Some(sv),
            up: vec![(pv, patch)],
        };
        let (l, parts) = loss_total(&mut g, &out, &s.gt_sparse).unwrap();
        assert_eq!(g.scalar(l), 0.0);
        assert_eq!(parts.total(), 0.0);
    }

    #[test]
    fn loss_components_match_metrics() {
        let (pc, gc) = small();
        let s = &samples(&gc, 0..1)[0];
        let shape = TrainShape::from_sample(s).unwrap();
        let model = Model::from_config(&pc, 3).unwrap();
        let mut g = Graph::new();
        let out = forward_shape(&model, &mut g, &shape, &pc, 6, true, &mut seeded_rng(0)).unwrap();
        let (l, parts) = loss_total(&mut g, &out, &shape.gt_sparse).unwrap();
        assert!((g.scalar(l) - parts.total()).abs() <= 1e-12);

        let cloud = |v: Var| PointCloud::new(g.points(v).unwrap()).unwrap();
        let s_c = cloud(out.s);
        let want_sparse = chamfer_l1(&s_c, &shape.gt_sparse).unwrap() + emd(&s_c, &shape.gt_sparse).unwrap().0;
        assert!((parts.sparse - want_sparse).abs() < 1e-9);
        let want_sym = chamfer_l2(&cloud(out.q.unwrap()), &shape.gt_sparse).unwrap();
        assert!((parts.sym - want_sym).abs() < 1e-9);
        let want_ref = chamfer_l1(&cloud(out.s_refined.unwrap()), &shape.gt_sparse).unwrap();
        assert!((parts.refine - want_ref).abs() < 1e-9);
        let want_up = out
            .up
            .iter()
            .map(|(v, t)| chamfer_l1(&cloud(*v), t).unwrap())
            .sum::<f64>()
            / out.up.len() as f64;
        assert!((parts.up - want_up).abs() < 1e-9);
    }

    #[test]
    fn ablations_drop_their_terms() {
        let (mut pc, gc) = small();
        pc.ablation.disable_symnet = true;
        pc.ablation.disable_resnet = true;
        let shape = TrainShape::from_sample(&samples(&gc, 0..1)[0]).unwrap();
        let model = Model::from_config(&pc, 3).unwrap();
        let mut g = Graph::new();
        let out = forward_shape(&model, &mut g, &shape, &pc, 6, false, &mut seeded_rng(0)).unwrap();
        assert!(out.q.is_none() && out.s_refined.is_none());
        let (_, parts) = loss_total(&mut g, &out, &shape.gt_sparse).unwrap();
        assert_eq!((parts.sym, parts.refine), (0.0, 0.0));
    }

    #[test]
    fn emd_size_mismatch_is_cardinality_error() {
        let mut g = Graph::new();
        let sv = g.input_points(&[[0.0; 3]; 3]);
        let out = Outputs {
            s: sv,
            q: None,
            s_refined: None,
            up: vec![],
        };
        let t = PointCloud::new(vec![[0.0; 3]; 4]).unwrap();
        assert!(matches!(loss_total(&mut g, &out, &t), Err(Error::Cardinality(_))));
    }

    fn tc() -> TrainConfig {
        TrainConfig {
            steps: 6,
            batch: 2,
            pairs_per_shape: 4,
            eval_every: 3,
            val_shapes: 2,
            curriculum_steps: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let (pc, gc) = small();
        let tr = samples(&gc, 0..5);
        let va = samples(&gc, 5..7);
        let a = train(&tr, &va, &tc(), &pc, None, false, None).unwrap();
        let b = train(&tr, &va, &tc(), &pc, None, false, None).unwrap();
        assert_eq!(a.log.len(), b.log.len());
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!(x.csv(), y.csv());
        }

        let dir = tempfile::tempdir().unwrap();
        let short = TrainConfig { steps: 3, ..tc() };
        train(&tr, &va, &short, &pc, Some(dir.path()), false, None).unwrap();
        let resumed = train(&tr, &va, &tc(), &pc, Some(dir.path()), true, None).unwrap();
        for (x, y) in resumed.last.params.iter().zip(a.last.params.iter()) {
            assert_eq!(x.1.values, y.1.values, "{}", x.0);
        }
        let rows = read_log(&dir.path().join("log.csv")).unwrap();
        let full: Vec<String> = a.log.iter().map(LogRow::csv).collect();
        let got: Vec<String> = rows.iter().map(LogRow::csv).collect();
        assert_eq!(got, full);
        let meta = std::fs::read_to_string(dir.path().join("run.json")).unwrap();
        assert!(meta.contains("lr_schedule"));
    }

    #[test]
    fn ablation_recorded_in_run_metadata() {
        let (mut pc, gc) = small();
        pc.ablation.disable_symnet = true;
        let dir = tempfile::tempdir().unwrap();
        let t = TrainConfig { steps: 1, eval_every: 1, ..tc() };
        train(&samples(&gc, 0..3), &samples(&gc, 3..4), &t, &pc, Some(dir.path()), false, None).unwrap();
        let meta = std::fs::read_to_string(dir.path().join("run.json")).unwrap();
        assert!(meta.contains("\"disable_symnet\""));
    }

    #[test]
    fn gt_passthrough_is_perfect() {
        let (pc, gc) = small();
        let s = samples(&gc, 0..3);
        let rows = evaluate(EvalSource::GroundTruth, &s, &pc).unwrap();
        for r in &rows {
            assert_eq!(r.metrics[0].1, 0.0);
            assert_eq!(r.metrics[1].1, 0.0);
            assert_eq!(r.metrics[2].1, 1.0);
        }
        let csv = eval_csv(&rows);
        assert!(csv.starts_with("shape_id,metric,value\n"));
        assert!(csv.contains("\nmean,cd1,0.00000000\n"));
    }

    #[test]
    fn evaluation_is_repeatable() {
        let (pc, gc) = small();
        let s = samples(&gc, 0..2);
        let model = Model::from_config(&pc, 1).unwrap();
        let a = eval_csv(&evaluate(EvalSource::Model(&model), &s, &pc).unwrap());
        let b = eval_csv(&evaluate(EvalSource::Model(&model), &s, &pc).unwrap());
        assert_eq!(a, b);
    }
}
