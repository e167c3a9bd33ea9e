//! Virtual adversarial smoothing in entity-embedding space: a worst-case
//! perturbation `r` with `‖r‖₂ = ε` found by power iteration, and the
//! penalty `KL[Pr(y|e) ‖ Pr(y|e + r)]`.

use std::rc::Rc;

use rand::Rng;

use crate::network::TypingModel;
use crate::rng::{normal, Prng};
use crate::tensor::{BoundParams, Graph, GraphError, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VatConfig {
    pub epsilon: f64,
    pub lambda: f64,
    pub power_iters: usize,
    /// Finite-difference scale of the power iteration, relative to the row
    /// norm of the embedding.
    pub xi: f64,
    /// Subtract the smoothing term instead of adding it.
    pub paper_sign: bool,
}

impl Default for VatConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            lambda: 0.1,
            power_iters: 1,
            xi: 1e-6,
            paper_sign: false,
        }
    }
}

impl VatConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(format!(
                "vat.epsilon must be positive, got {}",
                self.epsilon
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(format!(
                "vat.lambda must be non-negative, got {}",
                self.lambda
            ));
        }
        if self.power_iters == 0 {
            return Err("vat.power_iters must be at least 1".into());
        }
        if !(self.xi > 0.0) {
            return Err("vat.xi must be positive".into());
        }
        Ok(())
    }

    /// Coefficient of `Δ_KL` in the training loss.
    pub fn loss_weight(&self) -> f64 {
        if self.paper_sign {
            -self.lambda
        } else {
            self.lambda
        }
    }
}

const CLAMP: f64 = 1e-12;

/// Sum over types of the binary KL divergence.
pub fn multilabel_kl(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    p.iter()
        .zip(q)
        .map(|(&p, &q)| {
            let p = p.clamp(CLAMP, 1.0 - CLAMP);
            let q = q.clamp(CLAMP, 1.0 - CLAMP);
            p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
        })
        .sum()
}

fn random_unit(rng: &mut Prng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Output distribution `Pr(y|·)` of the head for the given embedding rows.
fn head_probs<M: TypingModel + ?Sized>(model: &M, e: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let b = model.params().bind(&mut g);
    let x = g.leaf(e.clone());
    let out = model.head(&mut g, &b, x);
    g.value(out.y).clone()
}

/// Per-row adversarial perturbations, each of L2 norm `ε`. The clean
/// distribution is held constant.
pub fn adversarial_direction<M: TypingModel + ?Sized>(
    model: &M,
    e: &Tensor,
    cfg: &VatConfig,
    rng: &mut Prng,
) -> Result<Tensor, GraphError> {
    let (n, dim) = (e.rows(), e.cols());
    let reference = Rc::new(head_probs(model, e));
    let mut d: Vec<Vec<f64>> = (0..n).map(|_| random_unit(rng, dim)).collect();
    let xi: Vec<f64> = (0..n)
        .map(|r| {
            cfg.xi
                * e.row_slice(r)
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
                    .max(1.0)
        })
        .collect();
    let ones = Rc::new(Tensor::filled(reference.shape(), 1.0));
    for _ in 0..cfg.power_iters {
        let mut data = e.data().to_vec();
        for r in 0..n {
            for c in 0..dim {
                data[r * dim + c] += xi[r] * d[r][c];
            }
        }
        let mut g = Graph::new();
        let b = model.params().bind(&mut g);
        let x = g.leaf(Tensor::new(vec![n, dim], data).expect("shape"));
        let q = model.head(&mut g, &b, x).y;
        let p = g.leaf((*reference).clone());
        let kl = g.binary_kl(p, q, ones.clone());
        let grads = g.backward(kl)?;
        let grad = grads.get_or_zeros(x, e);
        for (r, dr) in d.iter_mut().enumerate() {
            let row = grad.row_slice(r);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                *dr = row.iter().map(|x| x / norm).collect();
            } else {
                log::debug!("zero adversarial gradient for row {r}; using a random direction");
                *dr = random_unit(rng, dim);
            }
        }
    }
    let data = d.into_iter().flatten().map(|x| cfg.epsilon * x).collect();
    Ok(Tensor::new(vec![n, dim], data).expect("shape"))
}

/// Records `Σ_rows w·Δ_KL(Pr(y|e) ‖ Pr(y|e + r))` on `g` with `r` held fixed.
/// Gradients flow into both distributions.
pub fn penalty_on_graph<M: TypingModel + ?Sized>(
    model: &M,
    g: &mut Graph,
    b: &BoundParams,
    e: Var,
    clean: Var,
    r: &Tensor,
    row_weights: &[f64],
) -> Var {
    let rv = g.leaf(r.clone());
    let shifted = g.add(e, rv);
    let q = model.head(g, b, shifted).y;
    let t = model.n_types();
    let w: Vec<f64> = row_weights
        .iter()
        .flat_map(|&w| std::iter::repeat_n(w, t))
        .collect();
    let w = Tensor::new(vec![row_weights.len(), t], w).expect("shape");
    g.binary_kl(clean, q, Rc::new(w))
}

/// Mean per-row penalty for a batch of embeddings.
pub fn vat_penalty<M: TypingModel + ?Sized>(
    model: &M,
    e: &Tensor,
    cfg: &VatConfig,
    rng: &mut Prng,
) -> Result<f64, GraphError> {
    if e.rows() == 0 {
        return Ok(0.0);
    }
    let r = adversarial_direction(model, e, cfg, rng)?;
    let p = head_probs(model, e);
    let mut shifted = e.clone();
    shifted.add_assign(&r);
    let q = head_probs(model, &shifted);
    let total: f64 = (0..e.rows())
        .map(|i| multilabel_kl(p.row_slice(i), q.row_slice(i)))
        .sum();
    Ok(total / e.rows() as f64)
}

/// Random embedding rows for property sweeps.
pub fn random_embeddings(rng: &mut Prng, n: usize, d: usize, scale: f64) -> Tensor {
    let data = (0..n * d)
        .map(|_| scale * rng.random_range(-1.0..1.0))
        .collect();
    Tensor::new(vec![n, d], data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LinearProbe;
    use crate::rng::stream;
    use crate::tensor::{cosine, finite_diff_check};
    use proptest::prelude::*;

    fn probe(d: usize, t: usize, seed: u64, noise: bool) -> LinearProbe {
        let mut rng = stream(seed, 11);
        let inputs = random_embeddings(&mut rng, 8, d, 1.0);
        let mut m = LinearProbe::new(inputs, t, false, noise, seed);
        if noise {
            let p = m.params.get_mut(crate::noise::NOISE_PARAM).unwrap();
            p.data_mut().iter_mut().for_each(|v| *v = 0.85);
        }
        m
    }

    #[test]
    fn kl_examples() {
        assert_eq!(multilabel_kl(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        let want = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        assert!((multilabel_kl(&[0.9], &[0.5]) - want).abs() < 1e-12);
        assert!((want - 0.3681).abs() < 1e-4);
    }

    #[test]
    fn direction_has_norm_epsilon_and_scales() {
        let m = probe(5, 3, 1, true);
        let e = m.inputs.clone();
        for eps in [0.5, 1.0, 2.0] {
            let cfg = VatConfig {
                epsilon: eps,
                ..Default::default()
            };
            let r = adversarial_direction(&m, &e, &cfg, &mut stream(3, 4)).unwrap();
            for i in 0..e.rows() {
                let n = r.row_slice(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - eps).abs() < 1e-9);
            }
        }
        let r1 = adversarial_direction(&m, &e, &VatConfig::default(), &mut stream(3, 4)).unwrap();
        let cfg2 = VatConfig {
            epsilon: 2.0,
            ..Default::default()
        };
        let r2 = adversarial_direction(&m, &e, &cfg2, &mut stream(3, 4)).unwrap();
        for (a, b) in r1.data().iter().zip(r2.data()) {
            assert!((2.0 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_model_direction_aligns_with_weights() {
        for seed in 0..20 {
            let m = probe(6, 1, seed, false);
            let r =
                adversarial_direction(&m, &m.inputs, &VatConfig::default(), &mut stream(seed, 4))
                    .unwrap();
            let w = m.params.tensor("head.w").data().to_vec();
            for i in 0..m.inputs.rows() {
                assert!(cosine(r.row_slice(i), &w).abs() > 0.99);
            }
        }
    }

    #[test]
    fn constant_model_and_tiny_epsilon() {
        let mut m = probe(4, 2, 2, false);
        m.params
            .get_mut("head.w")
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let p = vat_penalty(&m, &m.inputs, &VatConfig::default(), &mut stream(0, 4)).unwrap();
        assert!(p.abs() < 1e-15);
        let m = probe(4, 2, 2, true);
        let cfg = VatConfig {
            epsilon: 1e-6,
            ..Default::default()
        };
        assert!(vat_penalty(&m, &m.inputs, &cfg, &mut stream(0, 4)).unwrap() < 1e-6);
    }

    #[test]
    fn penalty_gradient_passes_finite_differences() {
        let m = probe(4, 3, 5, true);
        let items: Vec<usize> = (0..8).collect();
        let r =
            adversarial_direction(&m, &m.inputs, &VatConfig::default(), &mut stream(1, 4)).unwrap();
        let err = finite_diff_check(
            |g, b| {
                let e = m.embed(g, b, &items);
                let clean = m.head(g, b, e).y;
                penalty_on_graph(&m, g, b, e, clean, &r, &[0.125; 8])
            },
            &m.params,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn paper_sign_flips_weight() {
        let cfg = VatConfig {
            paper_sign: true,
            ..Default::default()
        };
        assert_eq!(cfg.loss_weight(), -0.1);
        assert_eq!(VatConfig::default().loss_weight(), 0.1);
        assert!(VatConfig {
            power_iters: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(VatConfig {
            epsilon: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn penalty_is_non_negative(seed in 0u64..10_000) {
            let m = probe(3, 2, seed, seed % 2 == 0);
            let e = random_embeddings(&mut stream(seed, 12), 4, 3, 3.0);
            let p = vat_penalty(&m, &e, &VatConfig::default(), &mut stream(seed, 4)).unwrap();
            prop_assert!(p >= 0.0);
        }
    }
}
