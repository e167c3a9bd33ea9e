//! Word-embedding prior on whether an entity name fits a type label, used
//! to scale the per-sample weight of noisy assertions.

use crate::ingest::VectorTable;
use crate::network::features::tokenize;
use crate::tensor::cosine;

/// Weight factor `0.5 + 0.5·cos`, clamped to `[0.5, 1.5]`.
pub fn dynamic_lr_factor(cos: f64) -> f64 {
    (0.5 + 0.5 * cos).clamp(0.5, 1.5)
}

pub fn dynamic_lr(base_lr: f64, cos: f64) -> f64 {
    dynamic_lr_factor(cos) * base_lr
}

/// `CamelCase` and punctuation split into lowercase tokens.
pub fn label_tokens(label: &str) -> Vec<String> {
    let local = label.rsplit(['/', '#', ':']).next().unwrap_or(label);
    let mut spaced = String::with_capacity(local.len() + 8);
    let mut prev_lower = false;
    for c in local.chars() {
        if c.is_uppercase() && prev_lower {
            spaced.push(' ');
        }
        prev_lower = c.is_lowercase() || c.is_ascii_digit();
        spaced.push(c);
    }
    tokenize(&spaced)
}

#[derive(Clone, Debug)]
pub struct PriorBelief {
    words: VectorTable,
    /// Used when either side has no in-vocabulary token.
    pub fallback: f64,
}

impl PriorBelief {
    pub fn new(words: VectorTable) -> Self {
        Self {
            words,
            fallback: 0.0,
        }
    }

    fn average(&self, tokens: &[String]) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.words.dim()];
        let mut n = 0usize;
        for t in tokens {
            if let Some(v) = self.words.get(t) {
                acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                n += 1;
            }
        }
        (n > 0).then(|| acc.into_iter().map(|x| x / n as f64).collect())
    }

    /// Mean vector of the in-vocabulary tokens of an entity name.
    pub fn entity_vector(&self, name: &str) -> Option<Vec<f64>> {
        self.average(&tokenize(name))
    }

    /// The whole lowercased local name if it is a word, else the mean of its
    /// `CamelCase` parts.
    pub fn type_vector(&self, label: &str) -> Option<Vec<f64>> {
        let toks = label_tokens(label);
        let joined = toks.concat();
        if let Some(v) = self.words.get(&joined) {
            return Some(v.to_vec());
        }
        self.average(&toks)
    }

    pub fn similarity(&self, entity_name: &str, type_label: &str) -> Option<f64> {
        let e = self.entity_vector(entity_name)?;
        let t = self.type_vector(type_label)?;
        Some(cosine(&e, &t).clamp(-1.0, 1.0))
    }

    /// Sets the fallback to the mean similarity over pairs where both sides
    /// are covered (0 when none are).
    pub fn fit_fallback<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) {
        let (mut sum, mut n) = (0.0, 0usize);
        for (e, t) in pairs {
            if let Some(c) = self.similarity(e, t) {
                sum += c;
                n += 1;
            }
        }
        self.fallback = if n > 0 { sum / n as f64 } else { 0.0 };
    }

    pub fn prior(&self, entity_name: &str, type_label: &str) -> f64 {
        self.similarity(entity_name, type_label)
            .unwrap_or(self.fallback)
    }

    pub fn factor(&self, entity_name: &str, type_label: &str) -> f64 {
        dynamic_lr_factor(self.prior(entity_name, type_label))
    }
}
