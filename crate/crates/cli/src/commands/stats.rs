//! `outliers` (per-type outlier baselines) and `estimate-error-rate`
//! (binomial interval for an audited error rate).

use std::fs::File;
use std::io::{BufWriter, Write};

use kgtyper_core::doc::KvDoc;
use kgtyper_core::eval::{error_rate_ci, implied_sample_size, IntervalMethod};
use kgtyper_core::outlier::{write_scores_tsv, OutlierConfig, ReprConfig};
use kgtyper_core::pipeline::{run_outliers, OutlierPipelineConfig};

use super::{read_bundle, write_doc};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::settings::{Key, Settings, Spec};

const OUTLIER_KEYS: &[Key] = &[
    Key::new("bundle", "Dataset bundle with text and graph embeddings"),
    Key::new(
        "method",
        "if (isolation forest) or lof (local outlier factor)",
    ),
    Key::new("k", "LOF neighbours"),
    Key::new("n_trees", "Isolation trees"),
    Key::new("subsample", "Points per isolation tree"),
    Key::new(
        "contamination",
        "Fraction flagged per type; score thresholds when unset",
    ),
    Key::new(
        "lof_threshold",
        "LOF score above which an entity is flagged",
    ),
    Key::new(
        "if_threshold",
        "Isolation score above which an entity is flagged",
    ),
    Key::new("min_entities", "Types with fewer entities are skipped"),
    Key::new("use_repr", "Learn a triplet projection before scoring"),
    Key::new("repr.hidden_dim", "Projection hidden width"),
    Key::new("repr.output_dim", "Projection output width"),
    Key::new("repr.margin", "Triplet margin"),
    Key::new("repr.epochs", "Projection epochs"),
    Key::new("repr.batch_size", "Triplets per step"),
    Key::new("repr.steps_per_epoch", "Steps per epoch"),
    Key::new("repr.lr", "Adam learning rate"),
];

pub fn outliers_spec() -> Spec {
    let d = OutlierConfig::default();
    let r = ReprConfig::default();
    let mut s = Spec::new(
        "outliers",
        "Score each type's members with isolation forest or LOF",
    );
    s.add(
        OUTLIER_KEYS,
        &[
            ("method", d.method.to_string()),
            ("k", d.k.to_string()),
            ("n_trees", d.n_trees.to_string()),
            ("subsample", d.subsample.to_string()),
            ("lof_threshold", d.lof_threshold.to_string()),
            ("if_threshold", d.if_threshold.to_string()),
            ("min_entities", d.min_entities.to_string()),
            ("use_repr", "true".to_string()),
            ("repr.hidden_dim", r.hidden_dim.to_string()),
            ("repr.output_dim", r.output_dim.to_string()),
            ("repr.margin", r.margin.to_string()),
            ("repr.epochs", r.epochs.to_string()),
            ("repr.batch_size", r.batch_size.to_string()),
            ("repr.steps_per_epoch", r.steps_per_epoch.to_string()),
            ("repr.lr", r.lr.to_string()),
        ],
    );
    s
}

pub fn outliers(s: &Settings, m: &mut RunManifest) -> Result<(), CliError> {
    let seed = s.seed()?;
    let cfg = OutlierPipelineConfig {
        use_repr: s.parse("use_repr")?,
        repr: ReprConfig {
            hidden_dim: s.parse("repr.hidden_dim")?,
            output_dim: s.parse("repr.output_dim")?,
            margin: s.parse("repr.margin")?,
            epochs: s.parse("repr.epochs")?,
            batch_size: s.parse("repr.batch_size")?,
            steps_per_epoch: s.parse("repr.steps_per_epoch")?,
            lr: s.parse("repr.lr")?,
            seed,
        },
        detect: OutlierConfig {
            method: s.get("method").parse().map_err(CliError::Usage)?,
            k: s.parse("k")?,
            n_trees: s.parse("n_trees")?,
            subsample: s.parse("subsample")?,
            contamination: s.optional("contamination")?,
            lof_threshold: s.parse("lof_threshold")?,
            if_threshold: s.parse("if_threshold")?,
            min_entities: s.parse("min_entities")?,
            seed,
        },
    };
    let bundle = read_bundle(s, "bundle", m)?;
    let start = std::time::Instant::now();
    let run = run_outliers(&bundle, &cfg)?;
    m.phase("outliers", start);

    let out = s.out();
    std::fs::create_dir_all(&out)?;
    let scores = out.join("outliers.tsv");
    let mut w = BufWriter::new(File::create(&scores)?);
    write_scores_tsv(&run.scores, &mut w)?;
    w.flush()?;
    let mut doc = KvDoc::new("kgtyper-outlier-report", 1);
    doc.set("method", cfg.detect.method);
    doc.set("input_dim", run.input_dim);
    for (i, l) in run.repr_losses.iter().enumerate() {
        doc.set(format!("repr.epoch.{}.loss", i + 1), l);
    }
    for (t, ap) in &run.per_type_ap {
        doc.set(
            format!("ap.{t}"),
            ap.map_or("none".to_string(), |a| a.to_string()),
        );
    }
    if let Some(map) = run.map {
        doc.set("map", map);
        m.result("map", map);
    }
    doc.set("skipped_types", run.skipped_types.join(","));
    let report = out.join("outliers.report");
    write_doc(&report, &doc)?;
    m.output("scores", &scores);
    m.output("report", &report);
    Ok(())
}

const RATE_KEYS: &[Key] = &[
    Key::new("errors", "Errors found in the audited sample"),
    Key::new("n", "Audited sample size"),
    Key::new(
        "rate",
        "Error rate for the sample-size question (instead of errors/n)",
    ),
    Key::new(
        "halfwidth",
        "Target halfwidth; prints the sample size that achieves it",
    ),
    Key::new("confidence", "Two-sided confidence level"),
    Key::new("method", "normal or wilson"),
];

pub fn error_rate_spec() -> Spec {
    let mut s = Spec::new(
        "estimate-error-rate",
        "Error rate with a binomial confidence interval, or the sample size for a target width",
    );
    s.add(RATE_KEYS, &[("confidence", "0.95"), ("method", "normal")]);
    s
}

pub fn error_rate(s: &Settings, m: &mut RunManifest) -> Result<(), CliError> {
    let confidence: f64 = s.parse("confidence")?;
    let method = match s.get("method") {
        "normal" => IntervalMethod::Normal,
        "wilson" => IntervalMethod::Wilson,
        other => {
            return Err(CliError::Usage(format!(
                "--method: expected normal or wilson, got {other:?}"
            )))
        }
    };
    let usage = |e: kgtyper_core::eval::EvalError| CliError::Usage(e.to_string());
    if s.is_set("halfwidth") {
        let hw: f64 = s.parse("halfwidth")?;
        let p: f64 = match (
            s.optional::<f64>("rate")?,
            s.optional::<u64>("errors")?,
            s.optional::<u64>("n")?,
        ) {
            (Some(p), _, _) => p,
            (None, Some(k), Some(n)) if n > 0 => k as f64 / n as f64,
            _ => {
                return Err(CliError::Usage(
                    "--halfwidth needs --rate, or --errors with --n".into(),
                ))
            }
        };
        if !(hw > 0.0) || !(0.0..=1.0).contains(&p) {
            return Err(CliError::Usage(
                "--halfwidth must be positive and --rate in [0, 1]".into(),
            ));
        }
        let n = implied_sample_size(p, hw, confidence).map_err(usage)?;
        m.result("rate", p);
        m.result("sample_size", n);
        println!("n = {n:.1} (at least {} assertions)", n.ceil());
        return Ok(());
    }
    let k: u64 = s
        .optional("errors")?
        .ok_or_else(|| CliError::Usage("missing --errors".into()))?;
    let n: u64 = s
        .optional("n")?
        .ok_or_else(|| CliError::Usage("missing --n".into()))?;
    let est = error_rate_ci(k, n, confidence, method).map_err(usage)?;
    m.result("rate", est.p_hat);
    m.result("halfwidth", est.halfwidth);
    m.result("lower", est.lower);
    m.result("upper", est.upper);
    println!("{:.4} ± {:.4}", est.p_hat, est.halfwidth);
    println!(
        "interval [{:.4}, {:.4}] at {}% ({})",
        est.lower,
        est.upper,
        confidence * 100.0,
        s.get("method")
    );
    Ok(())
}
