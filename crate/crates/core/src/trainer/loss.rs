//! Combined objective over a batch that mixes noisy and gold assertions.
//!
//! Noisy items: `w·BCE(Pr(y|e), onehot(type))` where `w` is the dynamic
//! weight. Gold items: `BCE(Pr(z|e), target)` with the target one-hot on the
//! confirmed or supplied true type; an error verdict without a true type
//! only pushes the queried type towards 0. Every item adds the smoothing
//! term. Everything is averaged over the batch.

use std::rc::Rc;

use crate::ingest::Verdict;
use crate::network::TypingModel;
use crate::rng::Prng;
use crate::tensor::{BoundParams, Graph, GraphError, Tensor, Var};
use crate::vat::{adversarial_direction, penalty_on_graph, VatConfig};

/// Verified label of an assertion.
#[derive(Clone, Debug, PartialEq)]
pub struct GoldLabel {
    pub verdict: Verdict,
    /// Index of the correct type when known.
    pub true_type: Option<usize>,
}

impl GoldLabel {
    pub fn new(verdict: Verdict, true_type: Option<usize>, queried: usize) -> Self {
        let true_type = match verdict {
            Verdict::Correct => Some(queried),
            Verdict::Error => true_type.filter(|&t| t != queried),
        };
        Self { verdict, true_type }
    }
}

/// An assertion resolved against the model's feature and label indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub entity_id: String,
    pub type_id: String,
    pub entity: usize,
    pub type_idx: usize,
    pub gold: Option<GoldLabel>,
    /// Dynamic weight applied while the item is noisy.
    pub weight: f64,
}

impl TrainItem {
    pub fn noisy(
        entity_id: impl Into<String>,
        type_id: impl Into<String>,
        entity: usize,
        type_idx: usize,
    ) -> Self {
        Self {
            entity_id: entity_id.into(),
            type_id: type_id.into(),
            entity,
            type_idx,
            gold: None,
            weight: 1.0,
        }
    }

    pub fn is_gold(&self) -> bool {
        self.gold.is_some()
    }
}

/// Which pieces of the objective are active.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub use_dynamic_lr: bool,
}

pub enum VatInput<'a> {
    Off,
    /// Find the perturbation by power iteration.
    Compute {
        cfg: &'a VatConfig,
        rng: &'a mut Prng,
    },
    /// Use a given perturbation with the given loss weight.
    Fixed {
        weight: f64,
        r: &'a Tensor,
    },
}

#[derive(Clone, Debug)]
pub struct LossParts {
    pub total: Var,
    pub noisy: Var,
    pub gold: Var,
    pub vat: Option<Var>,
    /// Perturbation used for the smoothing term.
    pub r: Option<Tensor>,
}

/// Per-row targets and weights for the noisy and gold parts.
pub fn loss_targets(items: &[&TrainItem], t: usize, opts: LossOptions) -> [(Tensor, Tensor); 2] {
    let n = items.len();
    let inv = 1.0 / n.max(1) as f64;
    let mut nt = vec![0.0; n * t];
    let mut nw = vec![0.0; n * t];
    let mut gt = vec![0.0; n * t];
    let mut gw = vec![0.0; n * t];
    for (r, it) in items.iter().enumerate() {
        let row = r * t..(r + 1) * t;
        match &it.gold {
            None => {
                let w = if opts.use_dynamic_lr {
                    it.weight * inv
                } else {
                    inv
                };
                nw[row].fill(w);
                nt[r * t + it.type_idx] = 1.0;
            }
            Some(GoldLabel {
                true_type: Some(k), ..
            }) => {
                gw[row].fill(inv);
                gt[r * t + k] = 1.0;
            }
            Some(GoldLabel {
                true_type: None, ..
            }) => {
                gw[r * t + it.type_idx] = inv;
            }
        }
    }
    let mk = |d| Tensor::new(vec![n, t], d).expect("shape");
    [(mk(nt), mk(nw)), (mk(gt), mk(gw))]
}

pub fn combined_loss<M: TypingModel + ?Sized>(
    model: &M,
    g: &mut Graph,
    b: &BoundParams,
    items: &[&TrainItem],
    opts: LossOptions,
    vat: VatInput<'_>,
) -> Result<LossParts, GraphError> {
    let entities: Vec<usize> = items.iter().map(|i| i.entity).collect();
    let e = model.embed(g, b, &entities);
    let out = model.head(g, b, e);
    let [(nt, nw), (gt, gw)] = loss_targets(items, model.n_types(), opts);
    let noisy = g.bce_prob(out.y, Rc::new(nt), Rc::new(nw));
    let gold = g.bce_logits(out.logits, Rc::new(gt), Rc::new(gw));
    let mut total = g.add(noisy, gold);
    let inv = vec![1.0 / items.len().max(1) as f64; items.len()];
    let (vat_var, r) = match vat {
        VatInput::Off => (None, None),
        VatInput::Compute { cfg, rng } => {
            let ev = g.value(e).clone();
            let r = adversarial_direction(model, &ev, cfg, rng)?;
            let pen = penalty_on_graph(model, g, b, e, out.y, &r, &inv);
            (Some((pen, cfg.loss_weight())), Some(r))
        }
        VatInput::Fixed { weight, r } => {
            let pen = penalty_on_graph(model, g, b, e, out.y, r, &inv);
            (Some((pen, weight)), Some(r.clone()))
        }
    };
    let vat_var = vat_var.map(|(pen, w)| {
        let s = g.scale(pen, w);
        total = g.add(total, s);
        pen
    });
    Ok(LossParts {
        total,
        noisy,
        gold,
        vat: vat_var,
        r,
    })
}
