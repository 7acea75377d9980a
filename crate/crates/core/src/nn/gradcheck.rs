use rand::seq::index::sample;

use super::graph::{Graph, Var};
use super::tensor::{NetParams, ParamId};
use crate::cloud::seeded_rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Check at most this many randomly chosen coordinates.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±h perturbation flips a discrete decision (rectifier
    /// sign, pooling winner, neighbour or assignment choice).
    pub skipped: usize,
}

/// Relative error with a small floor on the denominator.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn evaluate<F>(forward: &F, params: &NetParams) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph, &NetParams) -> Result<Var>,
{
    let mut g = Graph::with_decision_tracking();
    let out = forward(&mut g, params)?;
    let v = g.scalar(out);
    if !v.is_finite() {
        return Err(Error::Numeric(format!("forward produced {v}")));
    }
    Ok((v, g.decision_fingerprint()))
}

/// Compares backward gradients with central differences, coordinate by
/// coordinate, over every parameter in `params`.
///
/// `forward` must build a scalar. The closure may configure the graph it is
/// handed; only the first (analytic) graph is back-propagated.
pub fn grad_check<F>(params: &mut NetParams, opts: GradCheckOptions, forward: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &NetParams) -> Result<Var>,
{
    params.zero_grads();
    let mut g = Graph::with_decision_tracking();
    let out = forward(&mut g, params)?;
    if g.shape(out) != (1, 1) {
        return Err(Error::Shape("grad_check needs a scalar output".into()));
    }
    if !g.scalar(out).is_finite() {
        return Err(Error::Numeric("forward produced a non-finite value".into()));
    }
    let base_fp = g.decision_fingerprint();
    g.backward(out, params)?;

    let coords: Vec<(ParamId, usize)> = params
        .ids()
        .flat_map(|id| (0..params.get(id).len()).map(move |k| (id, k)))
        .collect();
    let chosen: Vec<usize> = match opts.max_coords {
        Some(max) if max < coords.len() => {
            let mut idx = sample(&mut seeded_rng(opts.seed), coords.len(), max).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..coords.len()).collect(),
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for ci in chosen {
        let (id, k) = coords[ci];
        let analytic = params.get(id).grad.as_ref().expect("zeroed above")[k];
        let orig = params.get(id).values[k];
        params.get_mut(id).values[k] = orig + opts.h;
        let plus = evaluate(&forward, params);
        params.get_mut(id).values[k] = orig - opts.h;
        let minus = evaluate(&forward, params);
        params.get_mut(id).values[k] = orig;
        let ((fp, fpp), (fm, fpm)) = (plus?, minus?);
        if fpp != base_fp || fpm != base_fp {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * opts.h);
        report.max_rel_error = report.max_rel_error.max(rel_error(analytic, numeric));
        report.checked += 1;
    }
    Ok(report)
}
