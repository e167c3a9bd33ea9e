//! Entity typing network: three input channels (description, character-level
//! surface form, relation bag) concatenated into `e`, then
//! `o = ReLU(Wᵀe + b)`, `z = σ(o)` and the noise channel `y`.

pub mod features;
mod pretrain;
pub mod probe;

use std::rc::Rc;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::doc::KvDoc;
use crate::noise::{init_noise_params, NOISE_PARAM};
use crate::rng::{self, Prng};
use crate::tensor::{BoundParams, Checkpoint, Graph, ParamStore, Tensor, Var};

pub use features::{DescFeature, EntityFeatures, FeatureSet, RelationVocab, ALPHABET};
pub use pretrain::{calibrate_channel_scales, pretrain_component, PretrainConfig, PretrainOutcome};
pub use probe::LinearProbe;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Graph(#[from] crate::tensor::GraphError),
    #[error(transparent)]
    Optim(#[from] crate::tensor::OptimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Description,
    Surface,
    Relations,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Description, Channel::Surface, Channel::Relations];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Description => "description",
            Channel::Surface => "surface",
            Channel::Relations => "relations",
        }
    }

    pub fn scale_param(self) -> &'static str {
        match self {
            Channel::Description => "scale.description",
            Channel::Surface => "scale.surface",
            Channel::Relations => "scale.relations",
        }
    }

    /// Parameter-name prefix of the channel's encoder.
    pub fn prefix(self) -> &'static str {
        match self {
            Channel::Description => "desc.",
            Channel::Surface => "surface.",
            Channel::Relations => "relations.",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "description" => Ok(Channel::Description),
            "surface" => Ok(Channel::Surface),
            "relations" => Ok(Channel::Relations),
            _ => Err(format!("unknown channel {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DescriptionEncoder {
    /// Precomputed vectors read from a file.
    FileVector { dim: usize },
    /// Mean of learned embeddings of hashed description tokens.
    HashedTokens { hash_dim: usize, embed_dim: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CellKind {
    /// `h ← tanh(x·Wx + h·Wh + b)`
    Elman,
    /// `h ← (1 − α)·h + α·tanh(x·Wx + h·Wh + b)`
    Leaky(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub description: DescriptionEncoder,
    pub surface_hidden: usize,
    pub relation_embed_dim: usize,
    /// Relations must occur more than this many times to enter the vocabulary.
    pub relation_min_count: u64,
    /// Hidden width of the throwaway head used while pre-training a channel.
    pub classifier_hidden: usize,
    pub n_types: usize,
    /// Apply the rectifier before the sigmoid (bounds `z` below at 0.5).
    pub use_relu: bool,
    pub cell: CellKind,
    pub max_name_chars: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            description: DescriptionEncoder::FileVector { dim: 100 },
            surface_hidden: 64,
            relation_embed_dim: 256,
            relation_min_count: 20,
            classifier_hidden: 512,
            n_types: 2,
            use_relu: true,
            cell: CellKind::Elman,
            max_name_chars: 48,
        }
    }
}

impl EncoderConfig {
    pub fn description_dim(&self) -> usize {
        match self.description {
            DescriptionEncoder::FileVector { dim } => dim,
            DescriptionEncoder::HashedTokens { embed_dim, .. } => embed_dim,
        }
    }

    pub fn channel_dim(&self, ch: Channel) -> usize {
        match ch {
            Channel::Description => self.description_dim(),
            Channel::Surface => self.surface_hidden,
            Channel::Relations => self.relation_embed_dim,
        }
    }

    pub fn embed_dim(&self) -> usize {
        Channel::ALL.iter().map(|&c| self.channel_dim(c)).sum()
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let dims = [
            self.description_dim(),
            self.surface_hidden,
            self.relation_embed_dim,
            self.classifier_hidden,
            self.n_types,
            self.max_name_chars,
        ];
        if dims.contains(&0) {
            return Err(NetworkError::Config(
                "all dimensions must be at least 1".into(),
            ));
        }
        if let DescriptionEncoder::HashedTokens { hash_dim: 0, .. } = self.description {
            return Err(NetworkError::Config("hash_dim must be at least 1".into()));
        }
        if let CellKind::Leaky(a) = self.cell {
            if !(a > 0.0 && a <= 1.0) {
                return Err(NetworkError::Config(
                    "leaky cell rate must lie in (0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn describe(&self, doc: &mut KvDoc, prefix: &str) {
        match self.description {
            DescriptionEncoder::FileVector { dim } => {
                doc.set(format!("{prefix}description"), "file_vector");
                doc.set(format!("{prefix}description_dim"), dim);
            }
            DescriptionEncoder::HashedTokens {
                hash_dim,
                embed_dim,
            } => {
                doc.set(format!("{prefix}description"), "hashed_tokens");
                doc.set(format!("{prefix}hash_dim"), hash_dim);
                doc.set(format!("{prefix}description_dim"), embed_dim);
            }
        }
        doc.set(format!("{prefix}surface_hidden"), self.surface_hidden);
        doc.set(
            format!("{prefix}relation_embed_dim"),
            self.relation_embed_dim,
        );
        doc.set(
            format!("{prefix}relation_min_count"),
            self.relation_min_count,
        );
        doc.set(format!("{prefix}classifier_hidden"), self.classifier_hidden);
        doc.set(format!("{prefix}n_types"), self.n_types);
        doc.set(format!("{prefix}use_relu"), self.use_relu);
        match self.cell {
            CellKind::Elman => doc.set(format!("{prefix}cell"), "elman"),
            CellKind::Leaky(a) => doc.set(format!("{prefix}cell"), format!("leaky:{a}")),
        };
        doc.set(format!("{prefix}max_name_chars"), self.max_name_chars);
    }

    pub fn from_doc(doc: &KvDoc, prefix: &str) -> Result<Self, NetworkError> {
        let err = |e: crate::doc::DocError| NetworkError::Checkpoint(e.to_string());
        let key = |k: &str| format!("{prefix}{k}");
        let dim: usize = doc.parse_value(&key("description_dim")).map_err(err)?;
        let description = match doc.require(&key("description")).map_err(err)? {
            "file_vector" => DescriptionEncoder::FileVector { dim },
            "hashed_tokens" => DescriptionEncoder::HashedTokens {
                hash_dim: doc.parse_value(&key("hash_dim")).map_err(err)?,
                embed_dim: dim,
            },
            other => {
                return Err(NetworkError::Checkpoint(format!(
                    "unknown description encoder {other}"
                )))
            }
        };
        let cell = match doc.require(&key("cell")).map_err(err)? {
            "elman" => CellKind::Elman,
            s => match s.strip_prefix("leaky:").and_then(|a| a.parse().ok()) {
                Some(a) => CellKind::Leaky(a),
                None => return Err(NetworkError::Checkpoint(format!("unknown cell {s}"))),
            },
        };
        let cfg = Self {
            description,
            surface_hidden: doc.parse_value(&key("surface_hidden")).map_err(err)?,
            relation_embed_dim: doc.parse_value(&key("relation_embed_dim")).map_err(err)?,
            relation_min_count: doc.parse_value(&key("relation_min_count")).map_err(err)?,
            classifier_hidden: doc.parse_value(&key("classifier_hidden")).map_err(err)?,
            n_types: doc.parse_value(&key("n_types")).map_err(err)?,
            use_relu: doc.parse_value(&key("use_relu")).map_err(err)?,
            cell,
            max_name_chars: doc.parse_value(&key("max_name_chars")).map_err(err)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Graph handles produced by a typing head.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// `o`, the logit of `z` (post-rectifier when enabled).
    pub logits: Var,
    /// `Pr(z_i | e)`
    pub z: Var,
    /// `Pr(y_i | e)`; equals `z` when the model has no noise layer.
    pub y: Var,
}

/// What training, adversarial perturbation and sample selection need from a
/// model: an embedding of a batch of items and a head on top of it.
pub trait TypingModel: Sync {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn n_types(&self) -> usize;
    fn embed_dim(&self) -> usize;
    /// `n×D` embedding of the given items.
    fn embed(&self, g: &mut Graph, b: &BoundParams, items: &[usize]) -> Var;
    fn head(&self, g: &mut Graph, b: &BoundParams, e: Var) -> HeadOutput;

    fn has_noise_layer(&self) -> bool {
        self.params().contains(NOISE_PARAM)
    }
}

/// Shared head used by every model: affine map, optional rectifier, sigmoid,
/// optional noise channel.
pub fn affine_head(g: &mut Graph, b: &BoundParams, e: Var, use_relu: bool) -> HeadOutput {
    let m = g.matmul(e, b.var("head.w"));
    let pre = g.add_bias(m, b.var("head.b"));
    let logits = if use_relu { g.relu(pre) } else { pre };
    let z = g.sigmoid(logits);
    let y = match b.get(NOISE_PARAM) {
        Some(p) => g.noise_channel(z, p),
        None => z,
    };
    HeadOutput { logits, z, y }
}

/// Scalar form of the head for a single embedding, used as an independent
/// check of the graph version.
#[derive(Clone, Debug, PartialEq)]
pub struct TypingOutput {
    pub o: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn type_scores(e: &[f64], w: &Tensor, b: &[f64], use_relu: bool) -> TypingOutput {
    let (d, t) = (w.rows(), w.cols());
    assert_eq!(e.len(), d);
    assert_eq!(b.len(), t);
    let mut o = b.to_vec();
    for (i, &ei) in e.iter().enumerate() {
        for (j, oj) in o.iter_mut().enumerate() {
            *oj += ei * w.get(i, j);
        }
    }
    if use_relu {
        o.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let z = o.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
    TypingOutput { o, z }
}

/// Uniform Glorot initialization, `U(−a, a)` with `a = √(6/(fan_in + fan_out))`.
pub fn glorot(rng: &mut Prng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ablation {
    pub channel: Channel,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct TypingNetwork {
    pub config: EncoderConfig,
    pub labels: Vec<String>,
    pub relations: RelationVocab,
    pub params: ParamStore,
    /// Replace one channel's output with uniform `[0, 1)` noise (fixed per
    /// entity).
    pub ablation: Option<Ablation>,
    features: Arc<FeatureSet>,
}

impl TypingNetwork {
    pub fn new(
        config: EncoderConfig,
        labels: Vec<String>,
        relations: RelationVocab,
        use_noise: bool,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        config.validate()?;
        if labels.len() != config.n_types {
            return Err(NetworkError::Config(format!(
                "{} labels for {} types",
                labels.len(),
                config.n_types
            )));
        }
        let mut rng = rng::stream(seed, rng::streams::INIT);
        let mut p = ParamStore::new();
        if let DescriptionEncoder::HashedTokens {
            hash_dim,
            embed_dim,
        } = config.description
        {
            p.insert("desc.table", glorot(&mut rng, hash_dim, embed_dim));
        }
        let h = config.surface_hidden;
        p.insert("surface.wx", glorot(&mut rng, ALPHABET, h));
        p.insert("surface.wh", glorot(&mut rng, h, h));
        p.insert("surface.b", Tensor::row(vec![0.0; h]));
        p.insert(
            "relations.table",
            glorot(&mut rng, relations.len().max(1), config.relation_embed_dim),
        );
        for ch in Channel::ALL {
            p.insert_frozen(ch.scale_param(), Tensor::scalar(1.0));
        }
        p.insert(
            "head.w",
            glorot(&mut rng, config.embed_dim(), config.n_types),
        );
        p.insert("head.b", Tensor::row(vec![0.0; config.n_types]));
        if use_noise {
            init_noise_params(&mut p, config.n_types);
        }
        Ok(Self {
            config,
            labels,
            relations,
            params: p,
            ablation: None,
            features: Arc::new(FeatureSet::default()),
        })
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn set_features(&mut self, features: Arc<FeatureSet>) {
        self.features = features;
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn ablation_noise(&self, ab: Ablation, items: &[usize], dim: usize) -> Tensor {
        let mut data = Vec::with_capacity(items.len() * dim);
        for &i in items {
            let mut r = rng::stream(
                ab.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                rng::streams::FEATURES,
            );
            data.extend((0..dim).map(|_| r.random::<f64>()));
        }
        Tensor::new(vec![items.len(), dim], data).expect("shape")
    }

    /// Output of one channel (after its frozen scale) for a batch.
    pub fn encode_channel(
        &self,
        g: &mut Graph,
        b: &BoundParams,
        ch: Channel,
        items: &[usize],
    ) -> Var {
        let dim = self.config.channel_dim(ch);
        if let Some(ab) = self.ablation.filter(|a| a.channel == ch) {
            return g.leaf(self.ablation_noise(ab, items, dim));
        }
        let raw = match ch {
            Channel::Description => self.encode_description(g, b, items),
            Channel::Surface => self.encode_surface(g, b, items),
            Channel::Relations => self.encode_relations(g, b, items),
        };
        let scale = self.params.tensor(ch.scale_param()).item();
        if scale == 1.0 {
            raw
        } else {
            g.scale(raw, scale)
        }
    }

    fn feats(&self, i: usize) -> &EntityFeatures {
        &self.features.entities[i]
    }

    fn encode_description(&self, g: &mut Graph, b: &BoundParams, items: &[usize]) -> Var {
        match self.config.description {
            DescriptionEncoder::FileVector { dim } => {
                let mut data = vec![0.0; items.len() * dim];
                for (r, &i) in items.iter().enumerate() {
                    if let DescFeature::Vector(v) = &self.feats(i).description {
                        data[r * dim..(r + 1) * dim].copy_from_slice(v);
                    }
                }
                g.leaf(Tensor::new(vec![items.len(), dim], data).expect("shape"))
            }
            DescriptionEncoder::HashedTokens { .. } => {
                let rows = items
                    .iter()
                    .map(|&i| match &self.feats(i).description {
                        DescFeature::Tokens(t) => {
                            let w = 1.0 / t.len() as f64;
                            t.iter().map(|&k| (k, w)).collect()
                        }
                        _ => Vec::new(),
                    })
                    .collect();
                g.bag(b.var("desc.table"), Rc::new(rows))
            }
        }
    }

    fn encode_surface(&self, g: &mut Graph, b: &BoundParams, items: &[usize]) -> Var {
        let h_dim = self.config.surface_hidden;
        let n = items.len();
        let max_len = items
            .iter()
            .map(|&i| self.feats(i).chars.len())
            .max()
            .unwrap_or(0);
        let mut h = g.leaf(Tensor::zeros(&[n, h_dim]));
        let rate = match self.config.cell {
            CellKind::Elman => 1.0,
            CellKind::Leaky(a) => a,
        };
        for t in 0..max_len {
            let mut rows = Vec::with_capacity(n);
            let mut mask = Vec::with_capacity(n);
            for &i in items {
                match self.feats(i).chars.get(t) {
                    Some(&c) => {
                        rows.push(vec![(c as usize, 1.0)]);
                        mask.push(rate);
                    }
                    None => {
                        rows.push(Vec::new());
                        mask.push(0.0);
                    }
                }
            }
            let x = g.bag(b.var("surface.wx"), Rc::new(rows));
            let rec = g.matmul(h, b.var("surface.wh"));
            let s = g.add(x, rec);
            let pre = g.add_bias(s, b.var("surface.b"));
            let hn = g.tanh(pre);
            h = g.blend(hn, h, Rc::new(mask));
        }
        h
    }

    fn encode_relations(&self, g: &mut Graph, b: &BoundParams, items: &[usize]) -> Var {
        let rows = items
            .iter()
            .map(|&i| self.feats(i).relations.clone())
            .collect();
        g.bag(b.var("relations.table"), Rc::new(rows))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut doc = KvDoc::new("meta", 1);
        self.config.describe(&mut doc, "encoder.");
        let mut ckpt = Checkpoint::new(self.params.clone());
        for (k, v) in doc.iter() {
            ckpt.meta.insert(k.to_string(), v.to_string());
        }
        ckpt.meta.insert("model".into(), "typing-network".into());
        ckpt.meta.insert(
            "labels".into(),
            serde_json::to_string(&self.labels).expect("json"),
        );
        ckpt.meta.insert(
            "relations".into(),
            serde_json::to_string(&self.relations).expect("json"),
        );
        ckpt
    }

    /// Restores parameters and vocabularies; features must be attached with
    /// [`TypingNetwork::set_features`] before use.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, NetworkError> {
        if ckpt.meta.get("model").map(String::as_str) != Some("typing-network") {
            return Err(NetworkError::Checkpoint(
                "not a typing-network checkpoint".into(),
            ));
        }
        let mut doc = KvDoc::new("meta", 1);
        for (k, v) in &ckpt.meta {
            doc.set(k.clone(), v);
        }
        let config = EncoderConfig::from_doc(&doc, "encoder.")?;
        let parse_err = |e: serde_json::Error| NetworkError::Checkpoint(e.to_string());
        let labels: Vec<String> =
            serde_json::from_str(doc.get("labels").unwrap_or("[]")).map_err(parse_err)?;
        let relations: RelationVocab =
            serde_json::from_str(doc.get("relations").unwrap_or("{}")).map_err(parse_err)?;
        if labels.len() != config.n_types {
            return Err(NetworkError::Checkpoint(
                "label count does not match n_types".into(),
            ));
        }
        Ok(Self {
            config,
            labels,
            relations,
            params: ckpt.params.clone(),
            ablation: None,
            features: Arc::new(FeatureSet::default()),
        })
    }
}

impl TypingModel for TypingNetwork {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn n_types(&self) -> usize {
        self.config.n_types
    }

    fn embed_dim(&self) -> usize {
        self.config.embed_dim()
    }

    fn embed(&self, g: &mut Graph, b: &BoundParams, items: &[usize]) -> Var {
        let parts: Vec<Var> = Channel::ALL
            .iter()
            .map(|&ch| self.encode_channel(g, b, ch, items))
            .collect();
        g.concat(&parts)
    }

    fn head(&self, g: &mut Graph, b: &BoundParams, e: Var) -> HeadOutput {
        affine_head(g, b, e, self.config.use_relu)
    }
}

/// Forward-only outputs for a set of items.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    pub z: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

/// Evaluates the model in chunks (in parallel when a pool is available);
/// results are gathered in item order.
pub fn predict<M: TypingModel + ?Sized>(model: &M, items: &[usize]) -> Predictions {
    const CHUNK: usize = 256;
    let parts: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = Graph::new();
            let b = model.params().bind(&mut g);
            let e = model.embed(&mut g, &b, chunk);
            let out = model.head(&mut g, &b, e);
            let rows = |v: Var| {
                let t = g.value(v);
                (0..t.rows())
                    .map(|r| t.row_slice(r).to_vec())
                    .collect::<Vec<_>>()
            };
            (rows(out.z), rows(out.y))
        })
        .collect();
    let mut p = Predictions::default();
    for (z, y) in parts {
        p.z.extend(z);
        p.y.extend(y);
    }
    p
}

/// Embeddings `e` of the given items as rows.
pub fn embeddings<M: TypingModel + ?Sized>(model: &M, items: &[usize]) -> Vec<Vec<f64>> {
    items
        .par_chunks(256)
        .map(|chunk| {
            let mut g = Graph::new();
            let b = model.params().bind(&mut g);
            let e = model.embed(&mut g, &b, chunk);
            let t = g.value(e);
            (0..t.rows())
                .map(|r| t.row_slice(r).to_vec())
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat()
}

#[cfg(test)]
mod tests;
