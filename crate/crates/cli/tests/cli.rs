use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "simulation.rx_grid=[2,2]",
    "--set",
    "simulation.max_reflections=2",
    "--set",
    "scene.spheres_per_scene=2",
    "--set",
    "scene.materials=[\"metal\",\"glass\",\"wood\"]",
    "--set",
    "model.hidden_dim=8",
    "--set",
    "model.heads=2",
    "--set",
    "model.ff_dim=8",
    "--set",
    "model.encoder_layers=1",
    "--set",
    "model.decoder_layers=1",
    "--set",
    "model.n_queries=4",
    "--set",
    "model.batch_size=4",
    "--set",
    "model.epochs=2",
];

fn rfsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfsplat")).args(args).output().expect("binary runs")
}

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL.iter().copied()).collect()
}

fn summary(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout);
    stdout.lines().find(|l| l.starts_with("summary ")).unwrap_or_default().to_string()
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace().find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn staged_pipeline_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let (scenes, sim, feats) = (p(dir.path(), "scenes.json"), p(dir.path(), "sim.json"), p(dir.path(), "features.json"));

    let out = rfsplat(&with_small(&["gen-scenes", "--count", "3", "--out", &scenes]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(field(&summary(&out), "scenes"), Some("3"));
    assert!(dir.path().join("config.json").exists());

    let out = rfsplat(&with_small(&["simulate", "--scenes", &scenes, "--out", &sim]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(field(&summary(&out), "paths").unwrap().parse::<usize>().unwrap() > 0);

    let out = rfsplat(&with_small(&["extract-features", "--sim", &sim, "--out", &feats]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(field(&summary(&out), "maps"), Some("3"));

    // same seed, same bytes
    let again = p(dir.path(), "scenes2.json");
    assert!(rfsplat(&with_small(&["gen-scenes", "--count", "3", "--out", &again])).status.success());
    assert_eq!(std::fs::read(&scenes).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn dataset_train_eval_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let ds = p(dir.path(), "ds");
    let out = rfsplat(&with_small(&["build-dataset", "--count", "10", "--out", &ds]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!((field(&s, "train"), field(&s, "val"), field(&s, "test")), (Some("8"), Some("1"), Some("1")));

    let weights = p(dir.path(), "model/weights.bin");
    let (train, val, test) = (p(dir.path(), "ds/train.ds"), p(dir.path(), "ds/val.ds"), p(dir.path(), "ds/test.ds"));
    let out = rfsplat(&with_small(&["train", "--dataset", &train, "--val", &val, "--out", &weights]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(field(&summary(&out), "epochs"), Some("2"));
    let curve = std::fs::read_to_string(dir.path().join("model/loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);

    let eval = p(dir.path(), "eval");
    let out = rfsplat(&["eval", "--dataset", &test, "--weights", &weights, "--out", &eval]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(field(&s, "scenes"), Some("1"));
    let acc: f64 = field(&s, "accuracy").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(std::fs::read_dir(&eval).unwrap().count() > 0);

    let ply = p(dir.path(), "scene.ply");
    let out = rfsplat(&["reconstruct", "--dataset", &test, "--weights", &weights, "--tau", "0", "--out", &ply]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&ply).unwrap().starts_with("ply"));

    let out = rfsplat(&["reconstruct", "--dataset", &test, "--weights", &weights, "--scene", "5", "--out", &ply]);
    assert_eq!(out.status.code(), Some(6));
    assert_eq!(field(&summary(&out), "kind"), Some("incomplete-input"));

    // a dataset written for other materials is refused
    let mut args = with_small(&["train", "--dataset", &train, "--out", &weights]);
    args.extend(["--set", "scene.materials=[\"metal\",\"wood\"]"]);
    let out = rfsplat(&args);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = p(dir.path(), "nope.ds");
    let w = p(dir.path(), "w.bin");
    let out = rfsplat(&["eval", "--dataset", &missing, "--weights", &w]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(summary(&out), "summary status=error kind=io");

    let junk = p(dir.path(), "junk.ds");
    std::fs::write(&junk, b"definitely not a dataset").unwrap();
    let out = rfsplat(&["train", "--dataset", &junk, "--out", &w]);
    assert_eq!(out.status.code(), Some(5));

    let out = rfsplat(&["gen-scenes", "--set", "model.no_such_field=1", "--out", &p(dir.path(), "s.json")]);
    assert_eq!(out.status.code(), Some(3));

    let out = rfsplat(&["gen-scenes", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn checks_report_in_summary() {
    let out = rfsplat(&["oracle-check", "--pairs", "5", "--samples", "20000", "--seed", "3"]);
    assert!(out.status.success());
    assert_eq!(field(&summary(&out), "pairs"), Some("5"));

    let out = rfsplat(&["grad-check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let err: f64 = field(&summary(&out), "max_rel_error").unwrap().parse().unwrap();
    assert!(err < 1e-3, "{err}");
}
