//! Model subcommands: `pretrain`, `train`, `detect`, `evaluate`,
//! `grad-check`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use kgtyper_core::doc::KvDoc;
use kgtyper_core::eval::prf1;
use kgtyper_core::gradcheck::{full_model_grad_check, GradCheckConfig};
use kgtyper_core::ingest::bundle::TRUTH_FILE;
use kgtyper_core::ingest::dataset::SECTIONS;
use kgtyper_core::ingest::{GroundTruth, TypeAssertion, Verdict};
use kgtyper_core::ledger::{Clock, LedgerWriter};
use kgtyper_core::network::{Channel, PretrainConfig};
use kgtyper_core::pipeline::{
    ablation_study, annotation_state, detection_inputs, eval_set, pretrain_channels, prior_belief,
};
use kgtyper_core::trainer::{
    calibrate_threshold, describe_metrics, detect_errors, Annotator, NullAnnotator,
    OracleAnnotator, Trainer,
};
use rayon::prelude::*;

use super::{
    encoder_defaults, network, read_bundle, train_config, train_defaults, write_doc, ENCODER_KEYS,
    TRAIN_KEYS,
};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::settings::{Key, Settings, Spec};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LEDGER_FILE: &str = "annotations.jsonl";
pub const DETECTIONS_FILE: &str = "detections.tsv";

const PRETRAIN_KEYS: &[Key] = &[
    Key::new("bundle", "Dataset bundle directory"),
    Key::new("use_noise_model", "Give the network a noise layer"),
    Key::new("pretrain.epochs", "Epochs per channel"),
    Key::new("pretrain.batch_size", "Minibatch size"),
    Key::new("pretrain.lr", "Adam learning rate"),
    Key::new(
        "ablation.epochs",
        "Classifier epochs per ablation variant; 0 skips the study",
    ),
    Key::new("ablation.lr", "Adam learning rate of the ablation runs"),
];

pub fn pretrain_spec() -> Spec {
    let d = PretrainConfig::default();
    let mut s = Spec::new(
        "pretrain",
        "Pre-train the three channel encoders and report the channel ablation",
    );
    s.add(
        PRETRAIN_KEYS,
        &[
            ("use_noise_model", "true".to_string()),
            ("pretrain.epochs", d.epochs.to_string()),
            ("pretrain.batch_size", d.batch_size.to_string()),
            ("pretrain.lr", d.lr.to_string()),
            ("ablation.epochs", "10".to_string()),
            ("ablation.lr", "0.01".to_string()),
        ],
    );
    s.add_doc(ENCODER_KEYS, &encoder_defaults());
    s
}

pub fn pretrain(s: &Settings, m: &mut RunManifest) -> Result<(), CliError> {
    let bundle = read_bundle(s, "bundle", m)?;
    let seed = s.seed()?;
    let cfg = PretrainConfig {
        epochs: s.parse("pretrain.epochs")?,
        batch_size: s.parse("pretrain.batch_size")?,
        lr: s.parse("pretrain.lr")?,
        seed,
    };
    let enc = super::encoder_config(s, &bundle)?;
    let mut net =
        kgtyper_core::pipeline::build_network(&bundle, enc, s.parse("use_noise_model")?, seed)?;
    let start = std::time::Instant::now();
    let outcomes = pretrain_channels(&mut net, &bundle, &cfg)?;
    m.phase("pretrain", start);
    let start = std::time::Instant::now();
    let ablation = ablation_study(
        &net,
        &bundle,
        s.parse("ablation.epochs")?,
        s.parse("ablation.lr")?,
        seed,
    )?;
    m.phase("ablation", start);

    let mut report = KvDoc::new("kgtyper-pretrain-report", 1);
    net.config.describe(&mut report, "encoder.");
    for o in &outcomes {
        let k = |x: &str| format!("channel.{}.{x}", o.channel.name());
        for (i, l) in o.epoch_losses.iter().enumerate() {
            report.set(k(&format!("epoch.{}.loss", i + 1)), l);
        }
        if let Some(a) = o.dev_accuracy {
            report.set(k("dev_accuracy"), a);
        }
        if let Some(a) = o.majority_baseline {
            report.set(k("majority_baseline"), a);
        }
    }
    for row in &ablation {
        let name = row.channel.map_or("none", Channel::name);
        report.set(format!("ablation.{name}.dev_accuracy"), row.dev_accuracy);
    }
    let out = s.out();
    std::fs::create_dir_all(&out)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    std::fs::write(
        &ckpt,
        net.to_checkpoint()
            .to_bytes()
            .map_err(|e| CliError::Run(e.to_string()))?,
    )?;
    let rpath = out.join("pretrain.report");
    write_doc(&rpath, &report)?;
    m.output("checkpoint", &ckpt);
    m.output("report", &rpath);
    if let Some(full) = ablation.iter().find(|r| r.channel.is_none()) {
        m.result("dev_accuracy", full.dev_accuracy);
    }
    Ok(())
}

const TRAIN_IO_KEYS: &[Key] = &[
    Key::new("bundle", "Dataset bundle directory"),
    Key::new(
        "checkpoint",
        "Start from this checkpoint; otherwise from a fresh network",
    ),
    Key::new(
        "annotator",
        "oracle (answers from the bundle truth) or none",
    ),
    Key::new(
        "supply_true_type",
        "Oracle gives the true type with each error verdict",
    ),
    Key::new("prior", "Weight noisy items by the name-suffix prior"),
];

pub fn train_spec() -> Spec {
    let mut s = Spec::new(
        "train",
        "Train with the noise layer, adversarial smoothing and active learning",
    );
    s.add(
        TRAIN_IO_KEYS,
        &[
            ("annotator", "oracle"),
            ("supply_true_type", "true"),
            ("prior", "true"),
        ],
    );
    s.add_doc(TRAIN_KEYS, &train_defaults());
    s.add_doc(ENCODER_KEYS, &encoder_defaults());
    s
}

/// Replaces an output file left by an earlier run of the same command.
fn fresh(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        log::info!("replacing {}", path.display());
        std::fs::remove_file(path)?;
    }
    Ok(())
}

pub fn train(s: &Settings, m: &mut RunManifest) -> Result<(), CliError> {
    let cfg = train_config(s)?;
    let bundle = read_bundle(s, "bundle", m)?;
    let net = network(s, &bundle, cfg.use_noise_model, m)?;
    let mut annotator: Box<dyn Annotator> = match s.get("annotator") {
        "none" => Box::new(NullAnnotator),
        "oracle" => {
            let truth = bundle.truth.clone().ok_or_else(|| {
                CliError::Usage("--annotator oracle needs a bundle with truth".into())
            })?;
            Box::new(OracleAnnotator::new(truth, s.parse("supply_true_type")?))
        }
        other => {
            return Err(CliError::Usage(format!(
                "--annotator: expected oracle or none, got {other:?}"
            )))
        }
    };
    let prior = if s.parse("prior")? {
        prior_belief(&bundle)
    } else {
        None
    };
    let state = annotation_state(&bundle, &net, prior.as_ref());
    let eval = eval_set(&net, &bundle.split.test, bundle.truth.as_ref());
    let calibration = eval_set(&net, &bundle.split.dev, bundle.truth.as_ref());

    let out = s.out();
    std::fs::create_dir_all(&out)?;
    let ledger_path = out.join(LEDGER_FILE);
    fresh(&ledger_path)?;
    let mut ledger = LedgerWriter::create(&ledger_path, &bundle.digest(), Clock::Logical)
        .map_err(|e| CliError::Io(e.to_string()))?;
    let mut trainer = Trainer::new(net, cfg, state)
        .map_err(|e| CliError::Usage(e.to_string()))?
        .with_eval(eval, calibration)
        .with_sink(Box::new(move |rec| {
            ledger.append(rec).map(|_| ()).map_err(|e| e.to_string())
        }));
    let start = std::time::Instant::now();
    trainer
        .run(annotator.as_mut())
        .map_err(|e| CliError::Run(e.to_string()))?;
    m.phase("train", start);

    let ckpt = out.join(CHECKPOINT_FILE);
    let bytes = trainer
        .model
        .to_checkpoint()
        .to_bytes()
        .map_err(|e| CliError::Run(e.to_string()))?;
    std::fs::write(&ckpt, bytes)?;
    let report = trainer.report();
    let rpath = out.join("train.report");
    write_doc(&rpath, &report)?;
    m.output("checkpoint", &ckpt);
    m.output("report", &rpath);
    m.output("ledger", &ledger_path);
    m.result("annotations", trainer.annotations.len());
    m.result("threshold", trainer.threshold());
    if let Some(f1) = report.get("eval.final.micro.f1") {
        m.result("test_f1", f1);
    }
    Ok(())
}

const DETECT_KEYS: &[Key] = &[
    Key::new("bundle", "Dataset bundle directory"),
    Key::new("checkpoint", "Trained checkpoint"),
    Key::new(
        "section",
        "Split section to score: noisy_train, gold_pool, dev, test or all",
    ),
    Key::new(
        "threshold",
        "Flag assertions with Pr(z) below this; auto calibrates on dev",
    ),
];

pub fn detect_spec() -> Spec {
    let mut s = Spec::new(
        "detect",
        "Flag type assertions whose score falls below the threshold",
    );
    s.add(DETECT_KEYS, &[("section", "test"), ("threshold", "0.5")]);
    s
}

pub fn detect(s: &Settings, m: &mut RunManifest) -> Result<(), CliError> {
    let section = s.get("section").to_string();
    if section != "all" && !SECTIONS.contains(&section.as_str()) {
        return Err(CliError::Usage(format!(
            "--section: unknown section {section:?}"
        )));
    }
    s.input("checkpoint")?;
    let bundle = read_bundle(s, "bundle", m)?;
    let net = network(s, &bundle, true, m)?;
    let threshold = match s.get("threshold") {
        "auto" => {
            let cal =
                eval_set(&net, &bundle.split.dev, bundle.truth.as_ref()).ok_or_else(|| {
                    CliError::Data("threshold auto needs dev assertions with known verdicts".into())
                })?;
            calibrate_threshold(&cal.scored(&net))
                .ok_or_else(|| CliError::Data("dev set has no errors to calibrate on".into()))?
        }
        _ => {
            let t: f64 = s.parse("threshold")?;
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Usage(format!(
                    "--threshold must lie in [0, 1], got {t}"
                )));
            }
            t
        }
    };
    let assertions: Vec<TypeAssertion> = if section == "all" {
        bundle.split.all().cloned().collect()
    } else {
        bundle.split.section(&section).to_vec()
    };
    let decisions = detect_errors(&net, &detection_inputs(&net, &assertions), threshold);
    let out = s.out();
    std::fs::create_dir_all(&out)?;
    let path = out.join(DETECTIONS_FILE);
    let mut w = BufWriter::new(File::create(&path)?);
    for d in &decisions {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            d.entity,
            d.type_id,
            d.score,
            d.verdict.as_str()
        )?;
    }
    w.flush()?;
    m.output("detections", &path);
    m.result("threshold", threshold);
    m.result("assertions", decisions.len());
    m.result(
        "flagged",
        decisions.iter().filter(|d| d.verdict.is_error()).count(),
    );
    Ok(())
}

/// `(entity, type, verdict)` rows of a detections file.
pub fn read_detections(path: &Path) -> Result<Vec<(String, String, Verdict)>, CliError> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let verdict = match f.as_slice() {
            [_, _, _, v] => Verdict::parse(v),
            _ => None,
        }
        .ok_or_else(|| {
            CliError::Data(format!(
                "{}:{}: expected entity, type, score, verdict",
                path.display(),
                i + 1
            ))
        })?;
        rows.push((f[0].to_string(), f[1].to_string(), verdict));
    }
    Ok(rows)
}

const EVALUATE_KEYS: &[Key] = &[
    Key::new("detections", "Detections file written by detect"),
    Key::new("truth", "Truth table, or a bundle directory holding one"),
];

pub fn evaluate_spec() -> Spec {
    let mut s = Spec::new("evaluate", "Score detections against hidden truth");
    s.add::<&str>(EVALUATE_KEYS, &[]);
    s
}

pub fn evaluate(s: &Settings, m: &mut RunManifest) -> Result<(), CliError> {
    let dpath = s.input("detections")?;
    let mut tpath = s.input("truth")?;
    if tpath.is_dir() {
        tpath = tpath.join(TRUTH_FILE);
        if !tpath.exists() {
            return Err(CliError::Usage(format!(
                "{} does not exist",
                tpath.display()
            )));
        }
    }
    m.input("detections", &dpath);
    m.input("truth", &tpath);
    let rows = read_detections(&dpath)?;
    let truth = GroundTruth::read(BufReader::new(File::open(&tpath)?))?;
    let metrics = prf1(
        rows.iter().map(|(e, t, v)| (e.as_str(), t.as_str(), *v)),
        &truth,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    let mut doc = KvDoc::new("kgtyper-metrics", 1);
    describe_metrics(&mut doc, "", &metrics);
    for (t, c) in &metrics.per_type {
        doc.set(format!("type.{t}.precision"), c.precision());
        doc.set(format!("type.{t}.recall"), c.recall());
        doc.set(format!("type.{t}.f1"), c.f1());
    }
    let out = s.out();
    std::fs::create_dir_all(&out)?;
    let path = out.join("metrics.report");
    write_doc(&path, &doc)?;
    m.output("metrics", &path);
    m.result("micro.f1", metrics.micro.f1);
    println!(
        "precision {:.4}  recall {:.4}  f1 {:.4}  ({} assertions)",
        metrics.micro.precision,
        metrics.micro.recall,
        metrics.micro.f1,
        metrics.counts.total()
    );
    Ok(())
}

const GRAD_KEYS: &[Key] = &[
    Key::new("seeds", "Number of seeds checked, starting at --seed"),
    Key::flag(
        "n_entities",
        "entities",
        "Entities in each synthetic check graph",
    ),
    Key::new("batch", "Items in the loss batch"),
    Key::new("use_relu", "Rectify logits before the sigmoid"),
    Key::new("step", "Central-difference step"),
    Key::new("tolerance", "Largest acceptable relative error"),
];

pub fn grad_check_spec() -> Spec {
    let d = GradCheckConfig::default();
    let mut s = Spec::new(
        "grad-check",
        "Compare analytic gradients of the full objective with finite differences",
    );
    s.add(
        GRAD_KEYS,
        &[
            ("seeds", "100".to_string()),
            ("n_entities", d.n_entities.to_string()),
            ("batch", d.batch.to_string()),
            ("use_relu", d.use_relu.to_string()),
            ("step", d.step.to_string()),
            ("tolerance", "1e-4".to_string()),
        ],
    );
    s
}

pub fn grad_check(s: &Settings, m: &mut RunManifest) -> Result<(), CliError> {
    let cfg = GradCheckConfig {
        n_entities: s.parse("n_entities")?,
        batch: s.parse("batch")?,
        use_relu: s.parse("use_relu")?,
        step: s.parse("step")?,
        ..Default::default()
    };
    let first = s.seed()?;
    let n: u64 = s.parse("seeds")?;
    let tol: f64 = s.parse("tolerance")?;
    let errs: Vec<(u64, f64)> = (first..first + n)
        .into_par_iter()
        .map(|seed| full_model_grad_check(seed, &cfg).map(|e| (seed, e)))
        .collect::<Result<_, _>>()?;
    let (worst_seed, worst) =
        errs.iter()
            .copied()
            .fold((first, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let ok = worst < tol;
    m.result("max_relative_error", worst);
    m.result("worst_seed", worst_seed);
    m.result("passed", ok);
    println!(
        "max relative error {worst:.3e} over {n} seeds (worst seed {worst_seed}, tolerance {tol:e}): {}",
        if ok { "ok" } else { "FAILED" }
    );
    if ok {
        Ok(())
    } else {
        Err(CliError::Run(format!(
            "gradient check failed: {worst:e} >= {tol:e}"
        )))
    }
}
