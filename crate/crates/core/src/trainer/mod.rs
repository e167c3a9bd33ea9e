//! Semi-supervised training loop: batches over `S ∪ Ŝ`, periodic annotation
//! rounds that move assertions from `S` to `Ŝ`, optional fine-tuning on the
//! gold set, and threshold calibration for error detection.

pub mod annotator;
pub mod detect;
pub mod loss;
pub mod prior;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::active::{
    run_selection_round, AnnotationRecord, AnnotationState, ErrExpectation, SelectionRequest,
    Strategy,
};
use crate::doc::KvDoc;
use crate::eval::{prf1, DetectionMetrics, EvalError};
use crate::ingest::{GroundTruth, Verdict};
use crate::network::TypingModel;
use crate::noise::{project_store, NOISE_PARAM};
use crate::rng::{self, Prng};
use crate::tensor::{Adam, AdamConfig, GradientSet, Graph};
use crate::vat::VatConfig;

pub use annotator::{Annotator, AnnotatorError, NullAnnotator, OracleAnnotator, Query, Response};
pub use detect::{calibrate_threshold, decide, detect_errors, Decision, DetectionInput};
pub use loss::{combined_loss, GoldLabel, LossOptions, LossParts, TrainItem, VatInput};
pub use prior::{dynamic_lr, dynamic_lr_factor, PriorBelief};

pub const RUN_REPORT_KIND: &str = "kgtyper-run-report";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Annotator(#[from] AnnotatorError),
    #[error("recording annotations failed: {0}")]
    Sink(String),
}

/// Called once per committed annotation, in commit order.
pub type CommitSink = Box<dyn FnMut(&AnnotationRecord) -> Result<(), String> + Send>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    /// Maximize F1 on the calibration set (or the gold set without one).
    Auto,
}

impl FromStr for Threshold {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Threshold::Auto);
        }
        s.parse::<f64>()
            .ok()
            .filter(|t| (0.0..=1.0).contains(t))
            .map(Threshold::Fixed)
            .ok_or_else(|| format!("threshold must be 'auto' or a number in [0, 1], got {s:?}"))
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Fixed(t) => write!(f, "{t}"),
            Threshold::Auto => f.write_str("auto"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub epochs: usize,
    /// Assertions requested per annotation round.
    pub annotations_per_round: usize,
    pub rounds_every_iters: u64,
    /// Total annotations committed over the run.
    pub annotation_budget: usize,
    pub threshold: Threshold,
    pub use_noise_model: bool,
    pub use_vat: bool,
    pub use_dynamic_lr: bool,
    pub finetune_on_gold: bool,
    pub finetune_epochs: usize,
    /// Spend the whole budget on random assertions up front and train on the
    /// gold set alone.
    pub gold_only: bool,
    pub strategy: Strategy,
    pub err_pool_subsample: usize,
    pub err_batch_len: usize,
    pub err_expectation: ErrExpectation,
    pub vat: VatConfig,
    /// Cumulative annotation counts at which the evaluation set is scored.
    pub eval_at: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            base_lr: 1e-3,
            epochs: 10,
            annotations_per_round: 20,
            rounds_every_iters: 400,
            annotation_budget: 100,
            threshold: Threshold::Fixed(0.5),
            use_noise_model: true,
            use_vat: true,
            use_dynamic_lr: true,
            finetune_on_gold: false,
            finetune_epochs: 3,
            gold_only: false,
            strategy: Strategy::Us,
            err_pool_subsample: 256,
            err_batch_len: 64,
            err_expectation: ErrExpectation::Model,
            vat: VatConfig::default(),
            eval_at: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad(format!(
                "base_lr must be non-negative, got {}",
                self.base_lr
            ));
        }
        if self.rounds_every_iters == 0 {
            return bad("rounds_every_iters must be at least 1".into());
        }
        if let Threshold::Fixed(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("threshold must lie in [0, 1], got {t}"));
            }
        }
        if self.use_vat {
            self.vat.validate().map_err(TrainError::Config)?;
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            use_dynamic_lr: self.use_dynamic_lr,
        }
    }

    pub fn describe(&self, doc: &mut KvDoc, prefix: &str) {
        let k = |s: &str| format!("{prefix}{s}");
        doc.set(k("batch_size"), self.batch_size);
        doc.set(k("base_lr"), self.base_lr);
        doc.set(k("epochs"), self.epochs);
        doc.set(k("annotations_per_round"), self.annotations_per_round);
        doc.set(k("rounds_every_iters"), self.rounds_every_iters);
        doc.set(k("annotation_budget"), self.annotation_budget);
        doc.set(k("threshold"), self.threshold);
        doc.set(k("use_noise_model"), self.use_noise_model);
        doc.set(k("use_vat"), self.use_vat);
        doc.set(k("use_dynamic_lr"), self.use_dynamic_lr);
        doc.set(k("finetune_on_gold"), self.finetune_on_gold);
        doc.set(k("finetune_epochs"), self.finetune_epochs);
        doc.set(k("gold_only"), self.gold_only);
        doc.set(k("strategy"), self.strategy);
        doc.set(k("err.pool_subsample"), self.err_pool_subsample);
        doc.set(k("err.batch_len"), self.err_batch_len);
        doc.set(k("err.expectation"), self.err_expectation);
        doc.set(k("vat.epsilon"), self.vat.epsilon);
        doc.set(k("vat.lambda"), self.vat.lambda);
        doc.set(k("vat.power_iters"), self.vat.power_iters);
        doc.set(k("vat.xi"), self.vat.xi);
        doc.set(k("vat.paper_sign"), self.vat.paper_sign);
        let at: Vec<String> = self.eval_at.iter().map(ToString::to_string).collect();
        doc.set(k("eval_at"), at.join(","));
        doc.set(k("seed"), self.seed);
    }

    /// Sets one field from its `describe` key (without prefix).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
            value
                .trim()
                .parse()
                .map_err(|_| TrainError::Config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "base_lr" => self.base_lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "annotations_per_round" => self.annotations_per_round = parse(key, value)?,
            "rounds_every_iters" => self.rounds_every_iters = parse(key, value)?,
            "annotation_budget" => self.annotation_budget = parse(key, value)?,
            "threshold" => self.threshold = value.trim().parse().map_err(TrainError::Config)?,
            "use_noise_model" => self.use_noise_model = parse(key, value)?,
            "use_vat" => self.use_vat = parse(key, value)?,
            "use_dynamic_lr" => self.use_dynamic_lr = parse(key, value)?,
            "finetune_on_gold" => self.finetune_on_gold = parse(key, value)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, value)?,
            "gold_only" => self.gold_only = parse(key, value)?,
            "strategy" => self.strategy = value.trim().parse().map_err(TrainError::Config)?,
            "err.pool_subsample" => self.err_pool_subsample = parse(key, value)?,
            "err.batch_len" => self.err_batch_len = parse(key, value)?,
            "err.expectation" => {
                self.err_expectation = value.trim().parse().map_err(TrainError::Config)?
            }
            "vat.epsilon" => self.vat.epsilon = parse(key, value)?,
            "vat.lambda" => self.vat.lambda = parse(key, value)?,
            "vat.power_iters" => self.vat.power_iters = parse(key, value)?,
            "vat.xi" => self.vat.xi = parse(key, value)?,
            "vat.paper_sign" => self.vat.paper_sign = parse(key, value)?,
            "eval_at" => {
                self.eval_at = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_, _>>()?
            }
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(TrainError::Config(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }

    /// Reads every key under `prefix`; unknown keys are errors.
    pub fn from_doc(doc: &KvDoc, prefix: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (k, v) in doc.iter() {
            if let Some(key) = k.strip_prefix(prefix) {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

/// Assertions scored against hidden truth during and after training.
#[derive(Clone, Debug, Default)]
pub struct EvalSet {
    pub inputs: Vec<DetectionInput>,
    pub truth: GroundTruth,
}

impl EvalSet {
    pub fn scored<M: TypingModel + ?Sized>(&self, model: &M) -> Vec<(f64, bool)> {
        detect_errors(model, &self.inputs, 0.5)
            .into_iter()
            .filter_map(|d| {
                let v = self.truth.verdict(&d.entity, &d.type_id)?;
                Some((d.score, v.is_error()))
            })
            .collect()
    }

    pub fn evaluate<M: TypingModel + ?Sized>(
        &self,
        model: &M,
        threshold: f64,
    ) -> Result<DetectionMetrics, EvalError> {
        let decisions = detect_errors(model, &self.inputs, threshold);
        prf1(
            decisions
                .iter()
                .map(|d| (d.entity.as_str(), d.type_id.as_str(), d.verdict)),
            &self.truth,
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub iterations: u64,
    pub loss: f64,
    pub noisy_loss: f64,
    pub gold_loss: f64,
    pub vat: f64,
    pub skipped_steps: usize,
    pub noisy_len: usize,
    pub gold_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundLog {
    pub iteration: u64,
    pub queried: usize,
    pub committed: usize,
    pub skipped: usize,
    pub timed_out: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetEval {
    pub annotations: usize,
    pub threshold: f64,
    pub metrics: DetectionMetrics,
}

pub struct Trainer<M: TypingModel> {
    pub model: M,
    pub cfg: TrainConfig,
    pub state: AnnotationState,
    pub eval: Option<EvalSet>,
    /// Assertions with known verdicts for threshold calibration.
    pub calibration: Option<EvalSet>,
    pub iteration: u64,
    pub history: Vec<EpochMetrics>,
    pub rounds: Vec<RoundLog>,
    pub annotations: Vec<AnnotationRecord>,
    pub budget_evals: Vec<BudgetEval>,
    adam: Adam,
    batch_rng: Prng,
    vat_rng: Prng,
    select_rng: Prng,
    pending_evals: Vec<usize>,
    sink: Option<CommitSink>,
    sink_error: Option<String>,
}

impl<M: TypingModel> Trainer<M> {
    pub fn new(mut model: M, cfg: TrainConfig, state: AnnotationState) -> Result<Self, TrainError> {
        cfg.validate()?;
        if !cfg.use_noise_model && model.params().contains(NOISE_PARAM) {
            model.params_mut().set_trainable(NOISE_PARAM, false);
        }
        let mut pending_evals = cfg.eval_at.clone();
        pending_evals.sort_unstable();
        pending_evals.dedup();
        Ok(Self {
            batch_rng: rng::stream(cfg.seed, rng::streams::BATCHES),
            vat_rng: rng::stream(cfg.seed, rng::streams::VAT),
            select_rng: rng::stream(cfg.seed, rng::streams::SELECTION),
            model,
            cfg,
            state,
            eval: None,
            calibration: None,
            iteration: 0,
            history: Vec::new(),
            rounds: Vec::new(),
            annotations: Vec::new(),
            budget_evals: Vec::new(),
            adam: Adam::new(AdamConfig::default()),
            pending_evals,
            sink: None,
            sink_error: None,
        })
    }

    pub fn with_eval(mut self, eval: Option<EvalSet>, calibration: Option<EvalSet>) -> Self {
        self.eval = eval;
        self.calibration = calibration;
        self
    }

    pub fn with_sink(mut self, sink: CommitSink) -> Self {
        self.sink = Some(sink);
        self
    }

    fn budget_left(&self) -> usize {
        self.cfg
            .annotation_budget
            .saturating_sub(self.annotations.len())
    }

    fn vat_active(&self) -> bool {
        self.cfg.use_vat && self.cfg.vat.lambda != 0.0
    }

    /// One optimizer step on the given items. Returns (total, noisy, gold,
    /// smoothing) loss values, or `None` when the step was skipped.
    fn step(&mut self, idx: &[usize], lr: f64, use_vat: bool) -> Option<[f64; 4]> {
        let items: Vec<&TrainItem> = idx.iter().map(|&i| &self.state.items[i]).collect();
        let mut g = Graph::new();
        let b = self.model.params().bind(&mut g);
        let vat = if use_vat {
            VatInput::Compute {
                cfg: &self.cfg.vat,
                rng: &mut self.vat_rng,
            }
        } else {
            VatInput::Off
        };
        let parts = match combined_loss(
            &self.model,
            &mut g,
            &b,
            &items,
            self.cfg.loss_options(),
            vat,
        ) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("iteration {}: {e}; step skipped", self.iteration);
                return None;
            }
        };
        let values = [
            g.value(parts.total).item(),
            g.value(parts.noisy).item(),
            g.value(parts.gold).item(),
            parts.vat.map_or(0.0, |v| g.value(v).item()),
        ];
        let outcome = g
            .backward(parts.total)
            .map_err(|e| e.to_string())
            .and_then(|grads| {
                let gs = GradientSet::collect(self.model.params(), &b, &grads);
                self.adam
                    .step(self.model.params_mut(), &gs, lr)
                    .map_err(|e| e.to_string())
            });
        if let Err(e) = outcome {
            log::warn!("iteration {}: {e}; step skipped", self.iteration);
            return None;
        }
        project_store(self.model.params_mut());
        Some(values)
    }

    fn selection_request(&self, k: usize) -> SelectionRequest {
        SelectionRequest {
            k,
            strategy: self.cfg.strategy,
            err_pool_subsample: self.cfg.err_pool_subsample,
            err_batch_len: self.cfg.err_batch_len,
            err_expectation: self.cfg.err_expectation,
            loss: self.cfg.loss_options(),
        }
    }

    /// Requests up to one round of annotations with the given strategy.
    pub fn annotation_round<A: Annotator + ?Sized>(
        &mut self,
        annotator: &mut A,
        strategy: Strategy,
    ) -> RoundLog {
        let k = self.cfg.annotations_per_round.min(self.budget_left());
        let mut req = self.selection_request(k);
        req.strategy = strategy;
        let mut log = RoundLog {
            iteration: self.iteration,
            queried: 0,
            committed: 0,
            skipped: 0,
            timed_out: false,
        };
        if k > 0 {
            match run_selection_round(
                &self.model,
                &mut self.state,
                &req,
                annotator,
                &mut self.select_rng,
            ) {
                Ok(out) => {
                    log.queried = out.queried.len();
                    log.committed = out.committed.len();
                    log.skipped = out.skipped;
                    if let Some(sink) = self.sink.as_mut() {
                        for rec in &out.committed {
                            if let Err(e) = sink(rec) {
                                self.sink_error.get_or_insert(e);
                            }
                        }
                    }
                    self.annotations.extend(out.committed);
                }
                Err(e) => {
                    log::warn!(
                        "annotation round at iteration {} skipped: {e}",
                        self.iteration
                    );
                    log.timed_out = true;
                }
            }
        }
        self.rounds.push(log.clone());
        self.evaluate_budgets();
        log
    }

    fn evaluate_budgets(&mut self) {
        while let Some(&b) = self.pending_evals.first() {
            if self.annotations.len() < b {
                break;
            }
            self.pending_evals.remove(0);
            if let Some(eval) = &self.eval {
                let t = self.threshold();
                match eval.evaluate(&self.model, t) {
                    Ok(metrics) => self.budget_evals.push(BudgetEval {
                        annotations: b,
                        threshold: t,
                        metrics,
                    }),
                    Err(e) => log::warn!("evaluation at {b} annotations failed: {e}"),
                }
            }
        }
    }

    /// One pass over the batch order. With `gold_only` set, only `Ŝ` is used.
    pub fn run_epoch<A: Annotator + ?Sized>(&mut self, annotator: &mut A) -> EpochMetrics {
        let mut order: Vec<usize> = if self.cfg.gold_only {
            self.state.annotated.clone()
        } else {
            (0..self.state.items.len()).collect()
        };
        rng::shuffle(&mut order, &mut self.batch_rng);
        let mut m = EpochMetrics {
            epoch: self.history.len() + 1,
            ..Default::default()
        };
        let mut weight = 0usize;
        let use_vat = self.vat_active();
        for chunk in order.chunks(self.cfg.batch_size) {
            self.iteration += 1;
            match self.step(chunk, self.cfg.base_lr, use_vat) {
                Some([t, n, g, v]) => {
                    let w = chunk.len();
                    m.loss += t * w as f64;
                    m.noisy_loss += n * w as f64;
                    m.gold_loss += g * w as f64;
                    m.vat += v * w as f64;
                    weight += w;
                }
                None => m.skipped_steps += 1,
            }
            if !self.cfg.gold_only
                && self.iteration.is_multiple_of(self.cfg.rounds_every_iters)
                && self.budget_left() > 0
            {
                self.annotation_round(annotator, self.cfg.strategy);
            }
        }
        if weight > 0 {
            let w = weight as f64;
            m.loss /= w;
            m.noisy_loss /= w;
            m.gold_loss /= w;
            m.vat /= w;
        }
        m.iterations = self.iteration;
        m.noisy_len = self.state.noisy_len();
        m.gold_len = self.state.gold_len();
        self.history.push(m.clone());
        m
    }

    /// Gold-set pass at a tenth of the base rate, without smoothing.
    pub fn finetune(&mut self) {
        let lr = self.cfg.base_lr / 10.0;
        for _ in 0..self.cfg.finetune_epochs {
            let mut order = self.state.annotated.clone();
            rng::shuffle(&mut order, &mut self.batch_rng);
            for chunk in order.chunks(self.cfg.batch_size) {
                self.iteration += 1;
                self.step(chunk, lr, false);
            }
        }
    }

    /// The full schedule: epochs with annotation rounds, optional
    /// fine-tuning, and any remaining budget evaluations.
    pub fn run<A: Annotator + ?Sized>(&mut self, annotator: &mut A) -> Result<(), TrainError> {
        if self.cfg.gold_only {
            while self.budget_left() > 0 {
                let before = self.annotations.len();
                let log = self.annotation_round(annotator, Strategy::Random);
                if log.timed_out || self.annotations.len() == before && log.queried == 0 {
                    break;
                }
            }
        }
        self.check_sink()?;
        for _ in 0..self.cfg.epochs {
            self.run_epoch(annotator);
            self.check_sink()?;
        }
        if self.cfg.finetune_on_gold {
            self.finetune();
        }
        self.evaluate_budgets();
        Ok(())
    }

    fn check_sink(&mut self) -> Result<(), TrainError> {
        match self.sink_error.take() {
            Some(e) => Err(TrainError::Sink(e)),
            None => Ok(()),
        }
    }

    /// Detection threshold: fixed, or calibrated on the calibration set
    /// (falling back to the gold set, then to 0.5).
    pub fn threshold(&self) -> f64 {
        match self.cfg.threshold {
            Threshold::Fixed(t) => t,
            Threshold::Auto => self.calibrated_threshold().unwrap_or(0.5),
        }
    }

    pub fn calibrated_threshold(&self) -> Option<f64> {
        if let Some(c) = &self.calibration {
            if let Some(t) = calibrate_threshold(&c.scored(&self.model)) {
                return Some(t);
            }
        }
        let gold: Vec<&TrainItem> = self
            .state
            .annotated
            .iter()
            .map(|&i| &self.state.items[i])
            .collect();
        if gold.is_empty() {
            return None;
        }
        let ents: Vec<usize> = gold.iter().map(|it| it.entity).collect();
        let z = crate::network::predict(&self.model, &ents).z;
        let scored: Vec<(f64, bool)> = gold
            .iter()
            .zip(&z)
            .map(|(it, z)| {
                (
                    z[it.type_idx],
                    it.gold
                        .as_ref()
                        .is_some_and(|g| g.verdict == Verdict::Error),
                )
            })
            .collect();
        calibrate_threshold(&scored)
    }

    pub fn evaluate(&self) -> Option<DetectionMetrics> {
        self.eval
            .as_ref()
            .and_then(|e| e.evaluate(&self.model, self.threshold()).ok())
    }

    pub fn noise_table(&self) -> Vec<(String, f64)> {
        match self.model.params().get(NOISE_PARAM) {
            Some(p) => self
                .state
                .labels
                .iter()
                .cloned()
                .zip(p.data().iter().copied())
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn report(&self) -> KvDoc {
        let mut doc = KvDoc::new(RUN_REPORT_KIND, 1);
        self.cfg.describe(&mut doc, "config.");
        doc.set("iterations", self.iteration);
        doc.set("annotations.committed", self.annotations.len());
        doc.set("annotations.budget", self.cfg.annotation_budget);
        doc.set("pool.noisy", self.state.noisy_len());
        doc.set("pool.gold", self.state.gold_len());
        for m in &self.history {
            let k = |s: &str| format!("epoch.{}.{s}", m.epoch);
            doc.set(k("loss"), m.loss);
            doc.set(k("noisy_loss"), m.noisy_loss);
            doc.set(k("gold_loss"), m.gold_loss);
            doc.set(k("vat"), m.vat);
            doc.set(k("skipped_steps"), m.skipped_steps);
            doc.set(k("noisy"), m.noisy_len);
            doc.set(k("gold"), m.gold_len);
        }
        for (i, r) in self.rounds.iter().enumerate() {
            let k = |s: &str| format!("round.{}.{s}", i + 1);
            doc.set(k("iteration"), r.iteration);
            doc.set(k("queried"), r.queried);
            doc.set(k("committed"), r.committed);
            doc.set(k("skipped"), r.skipped);
            doc.set(k("timed_out"), r.timed_out);
        }
        for (label, p) in self.noise_table() {
            doc.set(format!("noise.p.{label}"), p);
        }
        if let Some(t) = self.calibrated_threshold() {
            doc.set("threshold.calibrated", t);
        }
        doc.set("threshold.used", self.threshold());
        for be in &self.budget_evals {
            let k = |s: &str| format!("eval.at.{}.{s}", be.annotations);
            doc.set(k("threshold"), be.threshold);
            doc.set(k("precision"), be.metrics.micro.precision);
            doc.set(k("recall"), be.metrics.micro.recall);
            doc.set(k("f1"), be.metrics.micro.f1);
        }
        if let Some(m) = self.evaluate() {
            describe_metrics(&mut doc, "eval.final.", &m);
        }
        doc
    }
}

pub fn describe_metrics(doc: &mut KvDoc, prefix: &str, m: &DetectionMetrics) {
    let k = |s: &str| format!("{prefix}{s}");
    doc.set(k("tp"), m.counts.tp);
    doc.set(k("fp"), m.counts.fp);
    doc.set(k("tn"), m.counts.tn);
    doc.set(k("fn"), m.counts.fn_);
    doc.set(k("micro.precision"), m.micro.precision);
    doc.set(k("micro.recall"), m.micro.recall);
    doc.set(k("micro.f1"), m.micro.f1);
    doc.set(k("macro.precision"), m.macro_avg.precision);
    doc.set(k("macro.recall"), m.macro_avg.recall);
    doc.set(k("macro.f1"), m.macro_avg.f1);
}

#[cfg(test)]
mod tests;
