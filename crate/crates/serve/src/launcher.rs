//! How a session turns into a training run.

use std::collections::BTreeMap;
use std::sync::Arc;

use kgtyper_core::active::{AnnotationRecord, AnnotationState};
use kgtyper_core::doc::KvDoc;
use kgtyper_core::ingest::Bundle;
use kgtyper_core::network::TypingNetwork;
use kgtyper_core::pipeline::annotation_state;
use kgtyper_core::trainer::{Annotator, EvalSet, PriorBelief, TrainConfig, Trainer};

/// What a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: KvDoc,
    pub checkpoint: Vec<u8>,
}

/// A prepared run, moved onto its own thread by the service.
pub trait TrainingRun: Send {
    /// Total annotation budget, including replayed labels.
    fn budget(&self) -> usize;
    /// `(|S|, |Ŝ|)` after replay.
    fn pool(&self) -> (usize, usize);
    fn run(self: Box<Self>, annotator: &mut dyn Annotator) -> Result<RunOutput, String>;
}

pub trait Launcher: Send + Sync {
    /// Builds the run for `session` with `overrides` applied and the
    /// `resume` labels already moved into the gold set.
    fn prepare(
        &self,
        session: &str,
        overrides: &BTreeMap<String, String>,
        resume: &[AnnotationRecord],
    ) -> Result<Box<dyn TrainingRun>, String>;
}

/// Trains a copy of `network` on the bundle's split.
#[derive(Clone)]
pub struct TrainerLauncher {
    pub bundle: Arc<Bundle>,
    pub network: TypingNetwork,
    pub prior: Option<PriorBelief>,
    pub train: TrainConfig,
    pub eval: Option<EvalSet>,
    pub calibration: Option<EvalSet>,
}

impl TrainerLauncher {
    /// The state a session starts from before replay.
    pub fn initial_state(&self) -> AnnotationState {
        annotation_state(&self.bundle, &self.network, self.prior.as_ref())
    }
}

struct TrainerRun {
    trainer: Trainer<TypingNetwork>,
    budget: usize,
}

impl TrainingRun for TrainerRun {
    fn budget(&self) -> usize {
        self.budget
    }

    fn pool(&self) -> (usize, usize) {
        (
            self.trainer.state.noisy_len(),
            self.trainer.state.gold_len(),
        )
    }

    fn run(mut self: Box<Self>, annotator: &mut dyn Annotator) -> Result<RunOutput, String> {
        self.trainer.run(annotator).map_err(|e| e.to_string())?;
        let checkpoint = self
            .trainer
            .model
            .to_checkpoint()
            .to_bytes()
            .map_err(|e| e.to_string())?;
        Ok(RunOutput {
            report: self.trainer.report(),
            checkpoint,
        })
    }
}

impl Launcher for TrainerLauncher {
    fn prepare(
        &self,
        _session: &str,
        overrides: &BTreeMap<String, String>,
        resume: &[AnnotationRecord],
    ) -> Result<Box<dyn TrainingRun>, String> {
        let mut cfg = self.train.clone();
        for (k, v) in overrides {
            cfg.set(k, v).map_err(|e| e.to_string())?;
        }
        let mut state = self.initial_state();
        let mut replayed = 0;
        for rec in resume {
            if state.apply(rec) {
                replayed += 1;
            }
        }
        let budget = cfg.annotation_budget;
        cfg.annotation_budget = budget.saturating_sub(replayed);
        let trainer = Trainer::new(self.network.clone(), cfg, state)
            .map_err(|e| e.to_string())?
            .with_eval(self.eval.clone(), self.calibration.clone());
        Ok(Box::new(TrainerRun { trainer, budget }))
    }
}
