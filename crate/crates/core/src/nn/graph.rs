use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::Hasher;

use super::tensor::{NetParams, ParamId};
use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::metrics::{self, nearest_neighbors};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var),
    Tanh(Var),
    MaxPool { src: Var, argmax: Vec<usize> },
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    TileRows(Var),
    RepeatEachRow(Var, usize),
    SliceRows(Var, usize),
    Reshape(Var),
    Reflect(Var, Var),
    Sum(Var),
    /// Scalar loss of `src`; `local` is d(loss)/d(src) captured at forward time.
    Loss { src: Var, local: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// A single-use tape. Build the forward pass with the op methods, then call
/// [`Graph::backward`] on a scalar node.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    track_decisions: bool,
    decisions: DefaultHasher,
    fault: Option<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Eight independent partial sums let the compiler keep this in SIMD lanes.
    let mut acc = [0.0; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for k in chunks * 8..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records every discrete forward decision (rectifier signs, pooling
    /// winners, nearest-neighbour and assignment choices) into a hash.
    pub fn with_decision_tracking() -> Self {
        Graph {
            track_decisions: true,
            ..Self::default()
        }
    }

    pub fn decision_fingerprint(&self) -> u64 {
        self.decisions.finish()
    }

    /// Scales the weight gradient of every matmul by `factor`. Only used to
    /// check that the gradient checker notices a broken backward pass.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, factor: f64) {
        self.fault = Some(factor);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn record(&mut self, bits: impl IntoIterator<Item = bool>) {
        if !self.track_decisions {
            return;
        }
        let mut word = 0u64;
        let mut n = 0;
        for b in bits {
            word = (word << 1) | b as u64;
            n += 1;
            if n == 64 {
                self.decisions.write_u64(word);
                word = 0;
                n = 0;
            }
        }
        self.decisions.write_u64(word);
        self.decisions.write_usize(n);
    }

    fn record_indices(&mut self, idx: impl IntoIterator<Item = usize>) {
        if !self.track_decisions {
            return;
        }
        for i in idx {
            self.decisions.write_usize(i);
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    /// Reads an `[n, 3]` node as points.
    pub fn points(&self, v: Var) -> Result<Vec<Point3>> {
        let n = self.node(v);
        if n.cols != 3 {
            return Err(Error::Shape(format!("expected [n, 3], got [{}, {}]", n.rows, n.cols)));
        }
        Ok(n.value.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Constant input; gradients do not flow into it.
    pub fn input(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(Error::Shape(format!(
                "input [{rows}, {cols}] needs {} values, got {}",
                rows * cols,
                value.len()
            )));
        }
        Ok(self.push(rows, cols, value, Op::Leaf, false))
    }

    pub fn input_points(&mut self, points: &[Point3]) -> Var {
        let flat = points.iter().flat_map(|p| p.iter().copied()).collect();
        self.push(points.len(), 3, flat, Op::Leaf, false)
    }

    /// Copy of `v`'s value with no gradient path back.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = self.node(v);
        let (rows, cols, value) = (n.rows, n.cols, n.value.clone());
        self.push(rows, cols, value, Op::Leaf, false)
    }

    /// Binds a parameter tensor. Binding the same id twice returns the same
    /// node, so weights reused across calls share one gradient.
    pub fn param(&mut self, params: &NetParams, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let t = params.get(id);
        let (rows, cols) = t.matrix_dims();
        let v = self.push(rows, cols, t.values.clone(), Op::Param(id), true);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul [{n}, {k}] x [{k2}, {m}]")));
        }
        let mut out = vec![0.0; n * m];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..n {
                let crow = &mut out[i * m..(i + 1) * m];
                for kk in 0..k {
                    let aik = av[i * k + kk];
                    if aik != 0.0 {
                        axpy(crow, aik, &bv[kk * m..(kk + 1) * m]);
                    }
                }
            }
        }
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(n, m, out, Op::MatMul(a, b), rg))
    }

    /// Adds a `[1, m]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if self.shape(row) != (1, m) {
            return Err(Error::Shape(format!("add_row [{n}, {m}] + {:?}", self.shape(row))));
        }
        let r = self.value(row).to_vec();
        let mut out = self.value(a).to_vec();
        for chunk in out.chunks_exact_mut(m.max(1)) {
            chunk.iter_mut().zip(&r).for_each(|(o, b)| *o += b);
        }
        let rg = self.node(a).requires_grad || self.node(row).requires_grad;
        Ok(self.push(n, m, out, Op::AddRow(a, row), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("add {:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let (n, m) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(n, m, out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (n, m) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * s).collect();
        let rg = self.node(a).requires_grad;
        self.push(n, m, out, Op::Scale(a, s), rg)
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        let (n, m) = self.shape(a);
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .map(|&x| if x > 0.0 { x } else { LEAKY_SLOPE * x })
            .collect();
        if self.track_decisions {
            let signs: Vec<bool> = self.value(a).iter().map(|&x| x > 0.0).collect();
            self.record(signs);
        }
        let rg = self.node(a).requires_grad;
        self.push(n, m, out, Op::LeakyRelu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (n, m) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        let rg = self.node(a).requires_grad;
        self.push(n, m, out, Op::Tanh(a), rg)
    }

    /// Column-wise max over rows, `[n, m] -> [1, m]`. Ties go to the first row.
    pub fn max_pool_rows(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if n == 0 {
            return Err(Error::Shape("max pool over zero rows".into()));
        }
        let av = self.value(a);
        let mut out = av[..m].to_vec();
        let mut argmax = vec![0usize; m];
        for i in 1..n {
            let row = &av[i * m..(i + 1) * m];
            for j in 0..m {
                if row[j] > out[j] {
                    out[j] = row[j];
                    argmax[j] = i;
                }
            }
        }
        self.record_indices(argmax.clone());
        let rg = self.node(a).requires_grad;
        Ok(self.push(1, m, out, Op::MaxPool { src: a, argmax }, rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ma) = self.shape(a);
        let (n2, mb) = self.shape(b);
        if n != n2 {
            return Err(Error::Shape(format!("concat_cols rows {n} vs {n2}")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(n * (ma + mb));
        for i in 0..n {
            out.extend_from_slice(&av[i * ma..(i + 1) * ma]);
            out.extend_from_slice(&bv[i * mb..(i + 1) * mb]);
        }
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(n, ma + mb, out, Op::ConcatCols(a, b), rg))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, m) = self.shape(a);
        let (nb, m2) = self.shape(b);
        if m != m2 {
            return Err(Error::Shape(format!("concat_rows cols {m} vs {m2}")));
        }
        let mut out = self.value(a).to_vec();
        out.extend_from_slice(self.value(b));
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(na + nb, m, out, Op::ConcatRows(a, b), rg))
    }

    /// Stacks `times` copies of the whole matrix.
    pub fn tile_rows(&mut self, a: Var, times: usize) -> Var {
        let (n, m) = self.shape(a);
        let out = self.value(a).repeat(times);
        let rg = self.node(a).requires_grad;
        self.push(n * times, m, out, Op::TileRows(a), rg)
    }

    /// Repeats each row `times` times in place (row i becomes rows i·t..(i+1)·t).
    pub fn repeat_each_row(&mut self, a: Var, times: usize) -> Var {
        let (n, m) = self.shape(a);
        let av = self.value(a);
        let mut out = Vec::with_capacity(n * m * times);
        for i in 0..n {
            for _ in 0..times {
                out.extend_from_slice(&av[i * m..(i + 1) * m]);
            }
        }
        let rg = self.node(a).requires_grad;
        self.push(n * times, m, out, Op::RepeatEachRow(a, times), rg)
    }

    /// First `count` rows.
    pub fn head_rows(&mut self, a: Var, count: usize) -> Result<Var> {
        let (n, m) = self.shape(a);
        if count > n {
            return Err(Error::Shape(format!("head_rows {count} of {n}")));
        }
        let out = self.value(a)[..count * m].to_vec();
        let rg = self.node(a).requires_grad;
        Ok(self.push(count, m, out, Op::SliceRows(a, count), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (n, m) = self.shape(a);
        if n * m != rows * cols {
            return Err(Error::Shape(format!("reshape [{n}, {m}] to [{rows}, {cols}]")));
        }
        let out = self.value(a).to_vec();
        let rg = self.node(a).requires_grad;
        Ok(self.push(rows, cols, out, Op::Reshape(a), rg))
    }

    /// Mirrors `[n, 3]` points across the plane `[1, 4] = (a, b, c, d)`.
    /// The normal need not be unit length.
    pub fn reflect(&mut self, points: Var, plane: Var) -> Result<Var> {
        let (n, m) = self.shape(points);
        if m != 3 || self.shape(plane) != (1, 4) {
            return Err(Error::Shape(format!(
                "reflect needs [n, 3] and [1, 4], got [{n}, {m}] and {:?}",
                self.shape(plane)
            )));
        }
        let pl = self.value(plane);
        let nv = [pl[0], pl[1], pl[2]];
        let d = pl[3];
        let nn = nv[0] * nv[0] + nv[1] * nv[1] + nv[2] * nv[2];
        if nn == 0.0 {
            return Err(Error::DegeneratePlane);
        }
        let pv = self.value(points);
        let mut out = Vec::with_capacity(n * 3);
        for p in pv.chunks_exact(3) {
            let s = p[0] * nv[0] + p[1] * nv[1] + p[2] * nv[2] + d;
            let f = 2.0 * s / nn;
            out.extend_from_slice(&[p[0] - f * nv[0], p[1] - f * nv[1], p[2] - f * nv[2]]);
        }
        let rg = self.node(points).requires_grad || self.node(plane).requires_grad;
        Ok(self.push(n, 3, out, Op::Reflect(points, plane), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.node(a).requires_grad;
        self.push(1, 1, vec![s], Op::Sum(a), rg)
    }

    fn pred_and_target(&self, pred: Var, target: &PointCloud) -> Result<Vec<Point3>> {
        let p = self.points(pred)?;
        if p.is_empty() {
            return Err(Error::InvalidCloud("prediction has no points".into()));
        }
        target.ensure_non_empty("loss target")?;
        Ok(p)
    }

    fn chamfer(&mut self, pred: Var, target: &PointCloud, squared: bool) -> Result<Var> {
        let p = self.pred_and_target(pred, target)?;
        let t = target.points();
        let fwd = nearest_neighbors(&p, t);
        let bwd = nearest_neighbors(t, &p);
        self.record_indices(fwd.iter().chain(&bwd).map(|&(i, _)| i));

        let (n, m) = (p.len() as f64, t.len() as f64);
        let dist = |d2: f64| if squared { d2 } else { d2.sqrt() };
        let mut sum_f = 0.0;
        for &(_, d2) in &fwd {
            sum_f += dist(d2);
        }
        let mut sum_b = 0.0;
        for &(_, d2) in &bwd {
            sum_b += dist(d2);
        }
        let loss = sum_f / n + sum_b / m;

        // d|x|/dx = x/|x| (zero at the origin); d|x|²/dx = 2x.
        let coef = |diff: [f64; 3], d2: f64, w: f64| -> [f64; 3] {
            let f = if squared {
                2.0 * w
            } else if d2 > 0.0 {
                w / d2.sqrt()
            } else {
                0.0
            };
            [diff[0] * f, diff[1] * f, diff[2] * f]
        };
        let mut local = vec![0.0; p.len() * 3];
        for (i, &(j, d2)) in fwd.iter().enumerate() {
            let diff = [p[i][0] - t[j][0], p[i][1] - t[j][1], p[i][2] - t[j][2]];
            let g = coef(diff, d2, 1.0 / n);
            local[i * 3..i * 3 + 3].iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        for (j, &(i, d2)) in bwd.iter().enumerate() {
            let diff = [p[i][0] - t[j][0], p[i][1] - t[j][1], p[i][2] - t[j][2]];
            let g = coef(diff, d2, 1.0 / m);
            local[i * 3..i * 3 + 3].iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let rg = self.node(pred).requires_grad;
        Ok(self.push(1, 1, vec![loss], Op::Loss { src: pred, local }, rg))
    }

    /// Chamfer-L1 between predicted `[n, 3]` points and a fixed target.
    pub fn chamfer_l1(&mut self, pred: Var, target: &PointCloud) -> Result<Var> {
        self.chamfer(pred, target, false)
    }

    /// Chamfer-L2 (squared distances) between predicted points and a target.
    pub fn chamfer_l2(&mut self, pred: Var, target: &PointCloud) -> Result<Var> {
        self.chamfer(pred, target, true)
    }

    /// EMD with the optimal assignment held fixed for the backward pass.
    pub fn emd(&mut self, pred: Var, target: &PointCloud) -> Result<Var> {
        let p = self.pred_and_target(pred, target)?;
        let pc = PointCloud::from_points_unchecked(p);
        let (loss, assignment) = metrics::emd(&pc, target)?;
        self.record_indices(assignment.perm.iter().copied());
        let (p, t) = (pc.points(), target.points());
        let n = p.len() as f64;
        let mut local = vec![0.0; p.len() * 3];
        for (i, &j) in assignment.perm.iter().enumerate() {
            let diff = [p[i][0] - t[j][0], p[i][1] - t[j][1], p[i][2] - t[j][2]];
            let d = (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
            if d > 0.0 {
                for k in 0..3 {
                    local[i * 3 + k] = diff[k] / (d * n);
                }
            }
        }
        let rg = self.node(pred).requires_grad;
        Ok(self.push(1, 1, vec![loss], Op::Loss { src: pred, local }, rg))
    }

    /// Back-propagates from the scalar `loss` and accumulates gradients into
    /// every bound parameter.
    pub fn backward(&self, loss: Var, params: &mut NetParams) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let (rows, cols) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => params.accumulate_grad(*id, &g),
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (n, k) = self.shape(a);
                    let m = cols;
                    let (av, bv) = (self.value(a), self.value(b));
                    if self.node(a).requires_grad {
                        let ga = acc(&mut grads, a, n * k);
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            for kk in 0..k {
                                ga[i * k + kk] += dot(grow, &bv[kk * m..(kk + 1) * m]);
                            }
                        }
                    }
                    if self.node(b).requires_grad {
                        let fault = self.fault.unwrap_or(1.0);
                        let gb = acc(&mut grads, b, k * m);
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            for kk in 0..k {
                                let aik = av[i * k + kk] * fault;
                                if aik != 0.0 {
                                    axpy(&mut gb[kk * m..(kk + 1) * m], aik, grow);
                                }
                            }
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    if self.node(a).requires_grad {
                        acc(&mut grads, a, g.len()).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                    if self.node(row).requires_grad {
                        let gr = acc(&mut grads, row, cols);
                        for chunk in g.chunks_exact(cols.max(1)) {
                            gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.node(v).requires_grad {
                            acc(&mut grads, v, g.len()).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(&mut grads, *a, g.len()).iter_mut().zip(&g).for_each(|(x, y)| *x += s * y);
                }
                Op::LeakyRelu(a) => {
                    let a = *a;
                    let ga = acc(&mut grads, a, g.len());
                    for ((x, gi), inp) in ga.iter_mut().zip(&g).zip(&self.nodes[a.0].value) {
                        *x += if *inp > 0.0 { *gi } else { LEAKY_SLOPE * gi };
                    }
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for ((x, gi), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        *x += gi * (1.0 - y * y);
                    }
                }
                Op::MaxPool { src, argmax } => {
                    let len = self.value(*src).len();
                    let ga = acc(&mut grads, *src, len);
                    for (j, &i) in argmax.iter().enumerate() {
                        ga[i * cols + j] += g[j];
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let ma = self.shape(a).1;
                    let mb = self.shape(b).1;
                    if self.node(a).requires_grad {
                        let ga = acc(&mut grads, a, rows * ma);
                        for i in 0..rows {
                            ga[i * ma..(i + 1) * ma]
                                .iter_mut()
                                .zip(&g[i * cols..i * cols + ma])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    if self.node(b).requires_grad {
                        let gb = acc(&mut grads, b, rows * mb);
                        for i in 0..rows {
                            gb[i * mb..(i + 1) * mb]
                                .iter_mut()
                                .zip(&g[i * cols + ma..(i + 1) * cols])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::ConcatRows(a, b) => {
                    let (a, b) = (*a, *b);
                    let la = self.value(a).len();
                    if self.node(a).requires_grad {
                        acc(&mut grads, a, la).iter_mut().zip(&g[..la]).for_each(|(x, y)| *x += y);
                    }
                    if self.node(b).requires_grad {
                        let lb = g.len() - la;
                        acc(&mut grads, b, lb).iter_mut().zip(&g[la..]).for_each(|(x, y)| *x += y);
                    }
                }
                Op::TileRows(a) => {
                    let len = self.value(*a).len();
                    let ga = acc(&mut grads, *a, len);
                    for chunk in g.chunks_exact(len.max(1)) {
                        ga.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
                Op::RepeatEachRow(a, times) => {
                    let (n, m) = self.shape(*a);
                    let ga = acc(&mut grads, *a, n * m);
                    for i in 0..n {
                        for t in 0..*times {
                            let r = i * times + t;
                            ga[i * m..(i + 1) * m]
                                .iter_mut()
                                .zip(&g[r * m..(r + 1) * m])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::SliceRows(a, count) => {
                    let len = self.value(*a).len();
                    let ga = acc(&mut grads, *a, len);
                    ga[..count * cols].iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                }
                Op::Reshape(a) => {
                    acc(&mut grads, *a, g.len()).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                }
                Op::Reflect(points, plane) => {
                    let (points, plane) = (*points, *plane);
                    let pl = self.value(plane);
                    let nv = [pl[0], pl[1], pl[2]];
                    let d = pl[3];
                    let mm = nv[0] * nv[0] + nv[1] * nv[1] + nv[2] * nv[2];
                    let pv = self.value(points).to_vec();
                    // y = p - 2 s n / m with s = p·n + d, m = |n|².
                    if self.node(points).requires_grad {
                        let gp = acc(&mut grads, points, pv.len());
                        for (gi, gp) in g.chunks_exact(3).zip(gp.chunks_exact_mut(3)) {
                            let ng = nv[0] * gi[0] + nv[1] * gi[1] + nv[2] * gi[2];
                            for k in 0..3 {
                                gp[k] += gi[k] - 2.0 * nv[k] * ng / mm;
                            }
                        }
                    }
                    if self.node(plane).requires_grad {
                        let mut gpl = [0.0; 4];
                        for (gi, p) in g.chunks_exact(3).zip(pv.chunks_exact(3)) {
                            let s = p[0] * nv[0] + p[1] * nv[1] + p[2] * nv[2] + d;
                            let ng = nv[0] * gi[0] + nv[1] * gi[1] + nv[2] * gi[2];
                            for j in 0..3 {
                                gpl[j] -= 2.0
                                    * (p[j] * ng / mm + s * gi[j] / mm - 2.0 * s * ng * nv[j] / (mm * mm));
                            }
                            gpl[3] -= 2.0 * ng / mm;
                        }
                        acc(&mut grads, plane, 4).iter_mut().zip(gpl).for_each(|(x, y)| *x += y);
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    acc(&mut grads, *a, len).iter_mut().for_each(|x| *x += g[0]);
                }
                Op::Loss { src, local } => {
                    let gs = g[0];
                    acc(&mut grads, *src, local.len())
                        .iter_mut()
                        .zip(local)
                        .for_each(|(x, l)| *x += gs * l);
                }
            }
        }
        Ok(())
    }
}
