//! Per-channel pre-training with a throwaway two-layer head, and the
//! unit-RMS channel scaling applied when the encoders are exported.

use std::rc::Rc;

use crate::rng::{self, shuffle};
use crate::tensor::{Adam, AdamConfig, BoundParams, GradientSet, Graph, ParamStore, Tensor, Var};

use super::{glorot, Channel, NetworkError, TypingNetwork};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOutcome {
    pub channel: Channel,
    pub epoch_losses: Vec<f64>,
    /// Top-1 accuracy of the throwaway head on the dev pairs.
    pub dev_accuracy: Option<f64>,
    /// Accuracy of always predicting the most frequent training type.
    pub majority_baseline: Option<f64>,
}

fn head_forward(
    net: &TypingNetwork,
    g: &mut Graph,
    b: &BoundParams,
    ch: Channel,
    items: &[usize],
) -> Var {
    let x = net.encode_channel(g, b, ch, items);
    let h = g.matmul(x, b.var("pre.h.w"));
    let h = g.add_bias(h, b.var("pre.h.b"));
    let h = g.relu(h);
    let o = g.matmul(h, b.var("pre.o.w"));
    g.add_bias(o, b.var("pre.o.b"))
}

/// Trains one channel's encoder on `(entity, type)` pairs with one-hot
/// targets, then copies the encoder weights back into `net`. The head is
/// discarded. With zero epochs the encoder is left untouched.
pub fn pretrain_component(
    net: &mut TypingNetwork,
    ch: Channel,
    train: &[(usize, usize)],
    dev: &[(usize, usize)],
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome, NetworkError> {
    let t = net.config.n_types;
    let dim = net.config.channel_dim(ch);
    let hidden = net.config.classifier_hidden;
    let mut init = rng::stream(cfg.seed ^ 0x5052_4554, rng::streams::INIT);
    let mut local = ParamStore::new();
    local.copy_prefixed_from(&net.params, ch.prefix());
    local.insert("pre.h.w", glorot(&mut init, dim, hidden));
    local.insert("pre.h.b", Tensor::row(vec![0.0; hidden]));
    local.insert("pre.o.w", glorot(&mut init, hidden, t));
    local.insert("pre.o.b", Tensor::row(vec![0.0; t]));
    let saved_ablation = net.ablation.take();

    let mut adam = Adam::new(AdamConfig::default());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batches = rng::stream(cfg.seed, rng::streams::BATCHES);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let bs = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        shuffle(&mut order, &mut batches);
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let items: Vec<usize> = chunk.iter().map(|&k| train[k].0).collect();
            let mut targets = vec![0.0; chunk.len() * t];
            for (r, &k) in chunk.iter().enumerate() {
                targets[r * t + train[k].1] = 1.0;
            }
            let weights = Tensor::filled(&[chunk.len(), t], 1.0 / chunk.len() as f64);
            let mut g = Graph::new();
            let b = local.bind(&mut g);
            let logits = head_forward(net, &mut g, &b, ch, &items);
            let targets = Tensor::new(vec![chunk.len(), t], targets).expect("shape");
            let loss = g.bce_logits(logits, Rc::new(targets), Rc::new(weights));
            g.check_finite()?;
            total += g.value(loss).item() * chunk.len() as f64;
            let grads = g.backward(loss)?;
            let gs = GradientSet::collect(&local, &b, &grads);
            adam.step(&mut local, &gs, cfg.lr)?;
        }
        epoch_losses.push(total / train.len().max(1) as f64);
    }

    let (dev_accuracy, majority_baseline) = if dev.is_empty() {
        (None, None)
    } else {
        let mut freq = vec![0usize; t];
        train.iter().for_each(|&(_, y)| freq[y] += 1);
        let majority = (0..t)
            .max_by_key(|&k| (freq[k], std::cmp::Reverse(k)))
            .unwrap_or(0);
        let items: Vec<usize> = dev.iter().map(|p| p.0).collect();
        let mut g = Graph::new();
        let b = local.bind(&mut g);
        let logits = head_forward(net, &mut g, &b, ch, &items);
        let lv = g.value(logits);
        let mut hits = 0usize;
        for (r, &(_, y)) in dev.iter().enumerate() {
            let row = lv.row_slice(r);
            let best = (0..t).fold(0, |a, k| if row[k] > row[a] { k } else { a });
            hits += usize::from(best == y);
        }
        let base = dev.iter().filter(|p| p.1 == majority).count();
        (
            Some(hits as f64 / dev.len() as f64),
            Some(base as f64 / dev.len() as f64),
        )
    };

    net.ablation = saved_ablation;
    net.params.copy_prefixed_from(&local, ch.prefix());
    Ok(PretrainOutcome {
        channel: ch,
        epoch_losses,
        dev_accuracy,
        majority_baseline,
    })
}

/// Sets each channel's frozen scale to `1/RMS` of its raw output over the
/// given entities, so every channel enters `e` at unit RMS.
pub fn calibrate_channel_scales(net: &mut TypingNetwork, items: &[usize]) {
    if items.is_empty() {
        return;
    }
    let saved_ablation = net.ablation.take();
    for ch in Channel::ALL {
        net.params
            .get_mut(ch.scale_param())
            .expect("scale")
            .data_mut()[0] = 1.0;
        let mut sq = 0.0;
        let mut count = 0usize;
        for chunk in items.chunks(512) {
            let mut g = Graph::new();
            let b = net.params.bind(&mut g);
            let v = net.encode_channel(&mut g, &b, ch, chunk);
            let t = g.value(v);
            sq += t.data().iter().map(|x| x * x).sum::<f64>();
            count += t.len();
        }
        let rms = (sq / count.max(1) as f64).sqrt();
        let scale = if rms > 1e-12 { 1.0 / rms } else { 1.0 };
        net.params
            .get_mut(ch.scale_param())
            .expect("scale")
            .data_mut()[0] = scale;
    }
    net.ablation = saved_ablation;
}
