use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensorgrad::{Graph, Tensor, Var};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params(BTreeMap<String, Tensor>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.0.values().map(Tensor::numel).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec())))
                .collect(),
        )
    }

    /// Same names and shapes as `other`.
    pub fn check_layout(&self, other: &Params) -> Result<()> {
        for (name, t) in &other.0 {
            match self.0.get(name) {
                None => return Err(Error::Input(format!("missing parameter `{name}`"))),
                Some(mine) if mine.shape() != t.shape() => {
                    return Err(Error::dim(
                        "params",
                        format!(
                            "`{name}` has shape {:?}, expected {:?}",
                            mine.shape(),
                            t.shape()
                        ),
                    ))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.0.keys().find(|k| !other.0.contains_key(*k)) {
            return Err(Error::Input(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    /// Registers every tensor as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), g.leaf(v.clone(), trainable)))
                .collect(),
        )
    }

    /// In-place `self += other`; layouts must match.
    pub fn add_assign(&mut self, other: &Params) {
        for (name, t) in &mut self.0 {
            let o = &other.0[name];
            for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.0.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(Tensor::all_finite)
    }
}

/// Graph handles for a bound [`Params`].
#[derive(Clone, Debug)]
pub struct Bound(BTreeMap<String, Var>);

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::State(format!("parameter `{name}` is not bound")))
    }

    /// Gradients accumulated on the bound leaves; unreached leaves get zeros.
    pub fn grads(&self, g: &Graph) -> Params {
        Params(
            self.0
                .iter()
                .map(|(k, &v)| {
                    let grad = g
                        .grad(v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(g.shape(v).to_vec()));
                    (k.clone(), grad)
                })
                .collect(),
        )
    }
}
