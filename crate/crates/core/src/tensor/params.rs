use indexmap::IndexMap;

use super::{Gradients, Graph, GraphError, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
struct Param {
    value: Tensor,
    trainable: bool,
}

/// Named parameter tensors in insertion order.
///
/// The order is part of the checkpoint format, so it must not depend on
/// hashing. Frozen entries (e.g. per-channel scale constants) travel with the
/// model but are skipped by the optimizer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a trainable parameter.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(
            name.into(),
            Param {
                value,
                trainable: true,
            },
        );
    }

    pub fn insert_frozen(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(
            name.into(),
            Param {
                value,
                trainable: false,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    /// Panics when `name` is missing; for model code that created the entry.
    pub fn tensor(&self, name: &str) -> &Tensor {
        self.get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.params.get(name).is_some_and(|p| p.trainable)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        if let Some(p) = self.params.get_mut(name) {
            p.trainable = trainable;
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params
            .iter_mut()
            .map(|(k, p)| (k.as_str(), &mut p.value))
    }

    /// Total number of scalar coordinates.
    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Places every parameter on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), g.leaf(p.value.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Copies the entries of `other` whose names start with `prefix`.
    pub fn copy_prefixed_from(&mut self, other: &ParamStore, prefix: &str) {
        for (k, p) in &other.params {
            if k.starts_with(prefix) {
                self.params.insert(k.clone(), p.clone());
            }
        }
    }
}

/// Graph handles of a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Per-parameter gradients mirroring a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    grads: IndexMap<String, Tensor>,
}

impl GradientSet {
    pub fn collect(params: &ParamStore, bound: &BoundParams, grads: &Gradients) -> Self {
        let grads = params
            .iter()
            .map(|(k, t)| (k.to_string(), grads.get_or_zeros(bound.var(k), t)))
            .collect();
        Self { grads }
    }

    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            grads: params
                .iter()
                .map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.grads.insert(name.into(), grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, t)| (k.as_str(), t))
    }

    /// Flattened gradient in store order.
    pub fn flatten(&self) -> Vec<f64> {
        self.grads
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .values()
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }

    /// `self += alpha·other`
    pub fn axpy(&mut self, alpha: f64, other: &GradientSet) {
        for (k, t) in &mut self.grads {
            if let Some(o) = other.grads.get(k) {
                t.axpy(alpha, o);
            }
        }
    }

    /// Keeps only the listed parameters.
    pub fn retain(&mut self, keep: impl Fn(&str) -> bool) {
        self.grads.retain(|k, _| keep(k));
    }
}

/// Runs `loss_fn` once for analytic gradients, then compares every
/// coordinate against a central difference with the given step.
///
/// Returns `max |analytic − numeric| / max(1, |analytic|)` over every
/// coordinate of every trainable parameter. Frozen entries are treated as
/// constants and skipped.
pub fn finite_diff_check<F>(loss_fn: F, params: &ParamStore, step: f64) -> Result<f64, GraphError>
where
    F: Fn(&mut Graph, &BoundParams) -> Var,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let loss = loss_fn(&mut g, &bound);
    let grads = g.backward(loss)?;
    let analytic = GradientSet::collect(params, &bound, &grads);

    let eval = |p: &ParamStore| {
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let l = loss_fn(&mut g, &b);
        g.value(l).item()
    };

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    let names: Vec<String> = params
        .names()
        .filter(|n| params.is_trainable(n))
        .map(str::to_string)
        .collect();
    for name in &names {
        let n = params.tensor(name).len();
        for i in 0..n {
            let orig = params.tensor(name).data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + step;
            let up = eval(&probe);
            probe.get_mut(name).unwrap().data_mut()[i] = orig - step;
            let down = eval(&probe);
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(name).unwrap().data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
