use super::graph::{Graph, Var};
use super::tensor::{NetParams, ParamId, Tensor};
use crate::cloud::Rng;
use crate::error::Result;

/// `y = xW + b` applied to every row of `x`.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    /// Registers `{name}/w` (Glorot uniform) and `{name}/b` (zeros).
    pub fn new(params: &mut NetParams, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Self> {
        let w = params.insert_glorot(&format!("{name}/w"), fan_in, fan_out, rng)?;
        let b = params.insert(&format!("{name}/b"), Tensor::zeros(vec![fan_out]))?;
        Ok(Dense { w, b, fan_in, fan_out })
    }

    /// Zeroes the weights and bias, making the layer output exactly zero.
    pub fn zero(&self, params: &mut NetParams) {
        params.get_mut(self.w).values.iter_mut().for_each(|v| *v = 0.0);
        params.get_mut(self.b).values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn forward(&self, g: &mut Graph, params: &NetParams, x: Var) -> Result<Var> {
        let w = g.param(params, self.w);
        let b = g.param(params, self.b);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// Stack of dense layers with leaky-rectifier activations, applied with the
/// same weights to every point row.
#[derive(Debug, Clone)]
pub struct SharedMlp {
    pub layers: Vec<Dense>,
}

impl SharedMlp {
    /// `widths = [in, h1, ..., out]`; layers are named `{prefix}/{i}`.
    pub fn new(params: &mut NetParams, prefix: &str, widths: &[usize], rng: &mut Rng) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(params, &format!("{prefix}/{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(SharedMlp { layers })
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    /// With `activate_last = false` the final layer stays linear.
    pub fn forward(&self, g: &mut Graph, params: &NetParams, x: Var, activate_last: bool) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, params, h)?;
            if i < last || activate_last {
                h = g.leaky_relu(h);
            }
        }
        Ok(h)
    }
}
