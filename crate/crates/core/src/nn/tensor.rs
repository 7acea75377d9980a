use std::collections::HashMap;

use rand::Rng as _;

use crate::cloud::Rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows and columns when viewed as a matrix; rank-1 tensors are one row.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [c] => (1, *c),
            [r, rest @ ..] => (*r, rest.iter().product()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors. A tensor keeps its `ParamId` for the lifetime of
/// the set, so optimizer state can be keyed by position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl NetParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.tensors.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    /// Glorot-uniform weight matrix `[fan_in, fan_out]`.
    pub fn insert_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], values)?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Sets every gradient to an explicit zero buffer.
    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            match &mut t.grad {
                Some(g) => g.iter_mut().for_each(|x| *x = 0.0),
                None => t.grad = Some(vec![0.0; t.values.len()]),
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    pub fn scale_grads(&mut self, s: f64) {
        for t in &mut self.tensors {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }

    /// Parameters whose names start with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.names
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) {
        let t = &mut self.tensors[id.0];
        match &mut t.grad {
            Some(g) => g.iter_mut().zip(grad).for_each(|(a, b)| *a += b),
            None => t.grad = Some(grad.to_vec()),
        }
    }

    /// Copies values of same-named, same-shaped tensors from `other`.
    /// Returns the number of tensors copied.
    pub fn copy_matching(&mut self, other: &NetParams) -> Result<usize> {
        let mut copied = 0;
        for (name, src) in other.iter() {
            if let Some(id) = self.id(name) {
                let dst = self.get_mut(id);
                if dst.shape != src.shape {
                    return Err(Error::Shape(format!(
                        "parameter `{name}`: expected shape {:?}, checkpoint has {:?}",
                        dst.shape, src.shape
                    )));
                }
                dst.values.copy_from_slice(&src.values);
                copied += 1;
            }
        }
        Ok(copied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::seeded_rng;

    #[test]
    fn tensor_shape_checked() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap().matrix_dims(), (2, 3));
        assert_eq!(Tensor::zeros(vec![4]).matrix_dims(), (1, 4));
    }

    #[test]
    fn names_unique() {
        let mut p = NetParams::new();
        p.insert("a", Tensor::zeros(vec![1])).unwrap();
        assert!(p.insert("a", Tensor::zeros(vec![1])).is_err());
        assert_eq!(p.id("a"), Some(ParamId(0)));
    }

    #[test]
    fn glorot_bounds() {
        let mut p = NetParams::new();
        let id = p.insert_glorot("w", 10, 20, &mut seeded_rng(0)).unwrap();
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(p.get(id).values.iter().all(|v| v.abs() <= limit));
    }
}
