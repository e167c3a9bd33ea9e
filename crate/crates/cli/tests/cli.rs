use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn kgtyper(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgtyper"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run kgtyper")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = kgtyper(args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn value(doc: &str, key: &str) -> String {
    doc.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key}"))
        .to_string()
}

fn synth(dir: &Path, seed: &str) -> String {
    let out = dir.join(format!("data{seed}"));
    let out = out.to_str().unwrap().to_string();
    ok(&[
        "synth",
        "--entities",
        "600",
        "--types",
        "3",
        "--noise",
        "0.2",
        "--seed",
        seed,
        "--out",
        &out,
    ]);
    out
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "7");
    let b = dir.path().join("again");
    ok(&[
        "synth",
        "--config",
        &format!("{a}/synth.manifest"),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(
        read(&Path::new(&a).join("dataset.manifest")),
        read(&b.join("dataset.manifest"))
    );
    let c = synth(dir.path(), "8");
    assert_ne!(
        read(&Path::new(&a).join("dataset.manifest")),
        read(&Path::new(&c).join("dataset.manifest"))
    );
    let m = read(&Path::new(&a).join("synth.manifest"));
    assert_eq!(value(&m, "command"), "synth");
    assert_eq!(value(&m, "config.n_entities"), "600");
    assert_eq!(value(&m, "result.status"), "ok");
    assert_eq!(value(&m, "result.flips"), "120");
}

#[test]
fn flags_override_config_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rate.conf");
    std::fs::write(&cfg, "errors=163\nn=600\nunknown_key=1\n").unwrap();
    let out = dir.path().to_str().unwrap();
    let c = cfg.to_str().unwrap();
    assert!(
        ok(&["estimate-error-rate", "--config", c, "--out", out]).starts_with("0.2717 ± 0.0356")
    );
    assert!(ok(&[
        "estimate-error-rate",
        "--config",
        c,
        "--n",
        "326",
        "--out",
        out
    ])
    .starts_with("0.5000 ± 0.0543"));
    let m = read(&dir.path().join("estimate-error-rate.manifest"));
    assert_eq!(value(&m, "config.n"), "326");
    assert!(!m.contains("unknown_key"));
}

#[test]
fn error_rate_and_sample_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let text = ok(&[
        "estimate-error-rate",
        "--errors",
        "163",
        "--n",
        "600",
        "--out",
        out,
    ]);
    assert_eq!(text.lines().next().unwrap(), "0.2717 ± 0.0356");
    assert!(
        text.contains("interval [0.2361, 0.3073] at 95% (normal)"),
        "{text}"
    );
    let text = ok(&[
        "estimate-error-rate",
        "--rate",
        "0.272",
        "--halfwidth",
        "0.0355",
        "--out",
        out,
    ]);
    assert!(text.starts_with("n = 603.6"), "{text}");
    let wilson = ok(&[
        "estimate-error-rate",
        "--errors",
        "0",
        "--n",
        "20",
        "--method",
        "wilson",
        "--out",
        out,
    ]);
    assert!(wilson.contains("interval [0.0000"), "{wilson}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    assert_eq!(kgtyper(&["--help"]).status.code(), Some(0));
    assert_eq!(kgtyper(&["synth", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(
        kgtyper(&["synth", "--noise", "abc", "--out", o])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(kgtyper(&["train", "--out", o]).status.code(), Some(2));
    assert_eq!(
        kgtyper(&["train", "--bundle", "/no/such/dir", "--out", o])
            .status
            .code(),
        Some(2)
    );
    // usage errors leave no manifest behind
    assert!(!out.join("train.manifest").exists());

    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "a\tb\tc\nonly two\tfields\n").unwrap();
    let r = kgtyper(&[
        "ingest",
        "--triples",
        bad.to_str().unwrap(),
        "--on-malformed",
        "abort",
        "--out",
        o,
    ]);
    assert_eq!(r.status.code(), Some(3));
    assert_eq!(
        value(&read(&out.join("ingest.manifest")), "result.status"),
        "failed (3)"
    );

    let r = kgtyper(&["grad-check", "--seeds", "2", "--tolerance", "0", "--out", o]);
    assert_eq!(r.status.code(), Some(4));
    assert!(stdout(&r).contains("FAILED"));
}

#[test]
fn ingest_reports_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let triples = dir.path().join("kg.tsv");
    std::fs::write(
        &triples,
        "dbr:Canada\tdbo:capital\tdbr:Ottawa\n\
         dbr:Canada\tisA\tdbo:Country\n\
         dbr:Ottawa\tisA\tdbo:City\n\
         broken line\n\
         dbr:Ottawa\tdbo:country\tdbr:Canada\n",
    )
    .unwrap();
    let names = dir.path().join("names.tsv");
    std::fs::write(&names, "dbr:Canada\tCanada\ndbr:Ottawa\tOttawa\n").unwrap();
    let out = dir.path().join("bundle");
    ok(&[
        "ingest",
        "--triples",
        triples.to_str().unwrap(),
        "--typing-relation",
        "isA",
        "--names",
        names.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let m = read(&out.join("ingest.manifest"));
    assert_eq!(value(&m, "result.triples"), "4");
    assert_eq!(value(&m, "result.diagnostics"), "1");
    assert_eq!(value(&m, "result.entities"), "2");
    let diag = read(&out.join("diagnostics.tsv"));
    assert!(diag.starts_with("4\t"), "{diag}");
    let ds = read(&out.join("dataset.manifest"));
    assert_eq!(value(&ds, "type_assertions"), "2");
}

#[test]
fn train_detect_and_evaluate_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "1");
    let model = dir.path().join("model");
    let m = model.to_str().unwrap();
    ok(&[
        "train",
        "--bundle",
        &data,
        "--epochs",
        "3",
        "--batch-size",
        "32",
        "--rounds-every-iters",
        "2",
        "--annotation-budget",
        "40",
        "--threshold",
        "auto",
        "--out",
        m,
    ]);
    let train = read(&model.join("train.manifest"));
    assert_eq!(value(&train, "result.annotations"), "40");
    let threshold = value(&train, "result.threshold");
    let ledger = read(&model.join("annotations.jsonl"));
    assert_eq!(
        ledger.lines().count(),
        41,
        "header plus one line per annotation"
    );

    ok(&[
        "detect",
        "--bundle",
        &data,
        "--checkpoint",
        &format!("{m}/model.ckpt"),
        "--threshold",
        &threshold,
        "--out",
        m,
    ]);
    let rows = read(&model.join("detections.tsv"));
    assert!(rows.lines().all(|l| l.split('\t').count() == 4));
    let text = ok(&[
        "evaluate",
        "--detections",
        &format!("{m}/detections.tsv"),
        "--truth",
        &data,
        "--out",
        m,
    ]);
    assert!(text.starts_with("precision "), "{text}");
    let got: f64 = value(&read(&model.join("evaluate.manifest")), "result.micro.f1")
        .parse()
        .unwrap();
    let want: f64 = value(&read(&model.join("train.report")), "eval.final.micro.f1")
        .parse()
        .unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn err_strategy_spends_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "2");
    for strategy in ["us", "err"] {
        let out = dir.path().join(strategy);
        ok(&[
            "train",
            "--bundle",
            &data,
            "--epochs",
            "2",
            "--batch-size",
            "32",
            "--rounds-every-iters",
            "2",
            "--annotation-budget",
            "20",
            "--strategy",
            strategy,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(
            value(&read(&out.join("train.manifest")), "result.annotations"),
            "20"
        );
    }
    assert_ne!(
        read(&dir.path().join("us/annotations.jsonl")),
        read(&dir.path().join("err/annotations.jsonl"))
    );
}

#[test]
fn pretrain_then_train_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "3");
    let pre = dir.path().join("pre");
    ok(&[
        "pretrain",
        "--bundle",
        &data,
        "--pretrain-epochs",
        "1",
        "--out",
        pre.to_str().unwrap(),
    ]);
    let report = read(&pre.join("pretrain.report"));
    for c in ["none", "surface", "relations", "description"] {
        assert!(
            report.contains(&format!("ablation.{c}.dev_accuracy=")),
            "{report}"
        );
    }
    let out = dir.path().join("train");
    ok(&[
        "train",
        "--bundle",
        &data,
        "--checkpoint",
        &format!("{}/model.ckpt", pre.display()),
        "--epochs",
        "1",
        "--annotation-budget",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(out.join("model.ckpt").is_file());
}

#[test]
fn outliers_score_every_typed_entity() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "4");
    let out = dir.path().join("out");
    ok(&[
        "outliers",
        "--bundle",
        &data,
        "--method",
        "lof",
        "--use-repr",
        "false",
        "--out",
        out.to_str().unwrap(),
    ]);
    let rows = read(&out.join("outliers.tsv"));
    assert_eq!(rows.lines().count(), 601, "header plus one row per entity");
    let map: f64 = value(&read(&out.join("outliers.report")), "map")
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&map));
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&[
        "grad-check",
        "--seeds",
        "10",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(text.trim_end().ends_with(": ok"), "{text}");
}

#[test]
fn served_session_with_scripted_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "5");
    let served = dir.path().join("served");
    let mut server = Command::new(env!("CARGO_BIN_EXE_kgtyper"))
        .args([
            "annotate-serve",
            "--bundle",
            &data,
            "--addr",
            "127.0.0.1:0",
            "--epochs",
            "2",
            "--annotation-budget",
            "40",
            "--batch-size",
            "32",
            "--rounds-every-iters",
            "5",
            "--clock",
            "logical",
            "--out",
            served.to_str().unwrap(),
        ])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .expect("address line")
        .to_string();

    let o = dir.path().join("oracle");
    let text = kgtyper(&[
        "annotate-oracle",
        "--url",
        &url,
        "--bundle",
        &data,
        "--session",
        "s1",
        "--out",
        o.to_str().unwrap(),
    ]);
    // the session finishes training and saves after its last round
    let ckpt = served.join("sessions/s1/model.ckpt");
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(60);
    while !served.join("sessions/s1/train.report").is_file() && std::time::Instant::now() < deadline
    {
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    server.kill().unwrap();
    server.wait().unwrap();
    assert!(
        text.status.success(),
        "{}",
        String::from_utf8_lossy(&text.stderr)
    );
    assert!(
        stdout(&text).starts_with("session s1: 40 labels"),
        "{}",
        stdout(&text)
    );
    let m = read(&o.join("annotate-oracle.manifest"));
    assert_eq!(value(&m, "result.committed"), "40");
    assert_eq!(value(&m, "result.skipped"), "0");
    let ledger = read(&served.join("ledgers/s1.jsonl"));
    assert_eq!(ledger.lines().count(), 41);
    assert!(ckpt.is_file());
    assert!(served.join("sessions/s1/train.report").is_file());
}
