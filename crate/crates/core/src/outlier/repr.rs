//! Triplet-loss projector: one rectified hidden layer, then linear down to
//! the output dimension. Distances are cosine distances.

use rand::Rng;

use crate::network::glorot;
use crate::rng::{self, Prng};
use crate::tensor::{
    cosine, Adam, AdamConfig, BoundParams, GradientSet, Graph, GraphError, ParamStore, Tensor, Var,
};

use super::OutlierError;

/// `1 − cos(a, b)`; a zero vector has distance 1.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - cosine(a, b)
}

pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    (cosine_distance(a, p) - cosine_distance(a, n) + margin).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReprConfig {
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ReprConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            output_dim: 128,
            margin: 0.5,
            epochs: 10,
            batch_size: 64,
            steps_per_epoch: 50,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Members of one type (positives) and everything else (negatives), as
/// row indices into the input matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeSets {
    pub type_id: String,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

pub type Triplet = (usize, usize, usize);

/// Types with at least two positives and one negative.
pub fn eligible(sets: &[TypeSets]) -> Vec<&TypeSets> {
    sets.iter()
        .filter(|s| s.positives.len() >= 2 && !s.negatives.is_empty())
        .collect()
}

/// Uniform type, distinct anchor/positive from its members, uniform negative.
pub fn sample_triplets(sets: &[&TypeSets], count: usize, rng: &mut Prng) -> Vec<Triplet> {
    if sets.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let s = sets[rng.random_range(0..sets.len())];
            let ap = rng::sample_indices(s.positives.len(), 2, rng);
            let (a, p) = if rng.random_bool(0.5) {
                (ap[0], ap[1])
            } else {
                (ap[1], ap[0])
            };
            let n = s.negatives[rng.random_range(0..s.negatives.len())];
            (s.positives[a], s.positives[p], n)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ReprNet {
    pub params: ParamStore,
    pub margin: f64,
    pub epoch_losses: Vec<f64>,
    /// Types left out of triplet sampling.
    pub excluded: Vec<String>,
}

fn rows(inputs: &Tensor, idx: impl Iterator<Item = usize>) -> Tensor {
    let d = inputs.cols();
    let mut data = Vec::new();
    let mut n = 0;
    for i in idx {
        data.extend_from_slice(inputs.row_slice(i));
        n += 1;
    }
    Tensor::new(vec![n, d], data).expect("shape")
}

impl ReprNet {
    pub fn new(input_dim: usize, cfg: &ReprConfig) -> Result<Self, OutlierError> {
        if cfg.output_dim == 0 || cfg.output_dim >= input_dim {
            return Err(OutlierError::Config(format!(
                "output_dim {} must be positive and below input_dim {input_dim}",
                cfg.output_dim
            )));
        }
        if !(cfg.margin > 0.0) || cfg.hidden_dim == 0 {
            return Err(OutlierError::Config(
                "margin and hidden_dim must be positive".into(),
            ));
        }
        let mut r = rng::stream(cfg.seed, rng::streams::INIT);
        let mut params = ParamStore::new();
        params.insert("repr.w1", glorot(&mut r, input_dim, cfg.hidden_dim));
        params.insert("repr.b1", Tensor::row(vec![0.0; cfg.hidden_dim]));
        params.insert("repr.w2", glorot(&mut r, cfg.hidden_dim, cfg.output_dim));
        params.insert("repr.b2", Tensor::row(vec![0.0; cfg.output_dim]));
        Ok(Self {
            params,
            margin: cfg.margin,
            epoch_losses: Vec::new(),
            excluded: Vec::new(),
        })
    }

    fn forward(g: &mut Graph, b: &BoundParams, x: Var) -> Var {
        let h = g.matmul(x, b.var("repr.w1"));
        let h = g.add_bias(h, b.var("repr.b1"));
        let h = g.relu(h);
        let o = g.matmul(h, b.var("repr.w2"));
        g.add_bias(o, b.var("repr.b2"))
    }

    /// Mean hinge loss of a triplet batch recorded on `g`.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        b: &BoundParams,
        inputs: &Tensor,
        triplets: &[Triplet],
    ) -> Var {
        let xa = g.leaf(rows(inputs, triplets.iter().map(|t| t.0)));
        let xp = g.leaf(rows(inputs, triplets.iter().map(|t| t.1)));
        let xn = g.leaf(rows(inputs, triplets.iter().map(|t| t.2)));
        let a = Self::forward(g, b, xa);
        let p = Self::forward(g, b, xp);
        let n = Self::forward(g, b, xn);
        let cap = g.row_cosine(a, p);
        let can = g.row_cosine(a, n);
        let gap = g.sub(can, cap);
        let shifted = g.add_const(gap, self.margin);
        let hinge = g.relu(shifted);
        let s = g.sum(hinge);
        g.scale(s, 1.0 / triplets.len().max(1) as f64)
    }

    pub fn project(&self, inputs: &Tensor) -> Vec<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let x = g.leaf(inputs.clone());
        let o = Self::forward(&mut g, &b, x);
        let t = g.value(o);
        (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
    }

    /// Fraction of triplets with `d(a, p) < d(a, n)` after projection.
    pub fn satisfaction(&self, inputs: &Tensor, triplets: &[Triplet]) -> f64 {
        if triplets.is_empty() {
            return 0.0;
        }
        let z = self.project(inputs);
        let ok = triplets
            .iter()
            .filter(|&&(a, p, n)| cosine_distance(&z[a], &z[p]) < cosine_distance(&z[a], &z[n]))
            .count();
        ok as f64 / triplets.len() as f64
    }
}

/// Trains the projector on triplets drawn from `sets`. With zero epochs the
/// returned parameters are the seeded initialization.
pub fn train_repr(
    inputs: &Tensor,
    sets: &[TypeSets],
    cfg: &ReprConfig,
) -> Result<ReprNet, OutlierError> {
    let mut net = ReprNet::new(inputs.cols(), cfg)?;
    let usable = eligible(sets);
    for s in sets {
        if !usable.iter().any(|u| u.type_id == s.type_id) {
            log::info!("type {} excluded from triplet sampling", s.type_id);
            net.excluded.push(s.type_id.clone());
        }
    }
    if usable.is_empty() {
        return Ok(net);
    }
    let mut r = rng::stream(cfg.seed, rng::streams::TRIPLETS);
    let mut adam = Adam::new(AdamConfig::default());
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for _ in 0..cfg.steps_per_epoch.max(1) {
            let triplets = sample_triplets(&usable, cfg.batch_size.max(1), &mut r);
            let mut g = Graph::new();
            let b = net.params.bind(&mut g);
            let loss = net.batch_loss(&mut g, &b, inputs, &triplets);
            total += g.value(loss).item();
            let grads = g
                .backward(loss)
                .map_err(|e: GraphError| OutlierError::Numeric(e.to_string()))?;
            let gs = GradientSet::collect(&net.params, &b, &grads);
            adam.step(&mut net.params, &gs, cfg.lr)
                .map_err(|e| OutlierError::Numeric(e.to_string()))?;
        }
        net.epoch_losses
            .push(total / cfg.steps_per_epoch.max(1) as f64);
    }
    Ok(net)
}
