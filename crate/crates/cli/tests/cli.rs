use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use facelift_cli::manifest::RunManifest;

fn facelift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facelift"))
        .args(args)
        .env("FACELIFT_THREADS", "1")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_DUAL: [&str; 12] = [
    "--set",
    "model.mu=0.06",
    "--set",
    "model.sigma=0.2",
    "--set",
    "dual.horizons=0.1,0.05",
    "--set",
    "dual.z=2",
    "--set",
    "dual.n_paths=4000",
    "--set",
    "dual.pilot_paths=1000",
];

#[test]
fn facelift_table_has_the_benchmark_row() {
    let tmp = tempfile::tempdir().unwrap();
    let o = facelift(&[
        "facelift",
        "--utility",
        "power:0.5",
        "--phi",
        "1",
        "--psi",
        "0",
        "--z-grid",
        "0.1:4:40",
        "--out",
        path(tmp.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("facelift.csv")).unwrap();
    assert!(csv.starts_with("z,naive,facelift\n"));
    assert!(
        csv.contains("\n2.0000000000000000e0,2.5000000000000000e0,2.0000000000000000e0\n"),
        "{csv}"
    );
    let m = RunManifest::read(tmp.path()).unwrap();
    assert!(m.config.contains("facelift.z_grid = 0.1:4:40"));
}

#[test]
fn missing_sigma_exits_2_and_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = facelift(&["dual-mc", "--set", "model.mu=0.1", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.sigma"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn config_errors_carry_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.conf");
    fs::write(
        &cfg,
        "model.mu = 0.1\nmodel.sigma = 0.2\nmodel.sigam = 0.3\n",
    )
    .unwrap();
    let o = facelift(&["dual-mc", "--config", path(&cfg), "--out", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let o = facelift(&[
        "germ",
        "--set",
        "germ.n_paths=-5",
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("germ.n_paths"));
}

#[test]
fn invalid_values_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    // horizons must decrease
    let mut args = vec!["dual-mc", "--out", path(tmp.path())];
    args.extend(SMALL_DUAL);
    args.extend(["--set", "dual.horizons=0.05,0.1"]);
    assert_eq!(facelift(&args).status.code(), Some(2));
    let o = facelift(&[
        "facelift",
        "--phi",
        "0",
        "--psi",
        "1",
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_facelift"))
        .args(["facelift", "--out", path(tmp.path())])
        .env("FACELIFT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn same_config_and_seed_give_same_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let mut args = vec!["dual-mc", "--out", path(dir)];
        args.extend(SMALL_DUAL);
        let o = facelift(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (ma, mb) = (
        RunManifest::read(&a).unwrap(),
        RunManifest::read(&b).unwrap(),
    );
    assert_eq!(ma.outputs, mb.outputs);
    assert_eq!(ma.config, mb.config);
    assert_eq!(ma.seed, 7);
}

#[test]
fn report_restates_a_dual_run_and_rejects_conflicts() {
    let tmp = tempfile::tempdir().unwrap();
    let dual = tmp.path().join("dual");
    let mut args = vec!["dual-mc", "--out", path(&dual)];
    args.extend(SMALL_DUAL);
    assert!(facelift(&args).status.success());
    let o = facelift(&["report", path(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let merged = fs::read_to_string(tmp.path().join("report/convergence.csv")).unwrap();
    assert_eq!(merged.lines().count(), 3);
    assert!(merged.lines().skip(1).all(|l| l.starts_with("dual,")));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("report/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 1);

    // a second run with another endowment cannot be merged
    let other = tmp.path().join("other");
    let o = facelift(&["facelift", "--set", "endowment.c1=1", "--out", path(&other)]);
    assert!(o.status.success());
    let o = facelift(&["report", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("endowment.c1"), "{}", stderr(&o));
}

#[test]
fn report_on_an_empty_directory_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = facelift(&["report", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    let missing = tmp.path().join("missing");
    let o = facelift(&["report", path(&missing)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tampered_outputs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("f");
    assert!(facelift(&["facelift", "--out", path(&run)])
        .status
        .success());
    fs::write(run.join("facelift.csv"), "z,naive,facelift\n").unwrap();
    let o = facelift(&["report", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checksum"));
}
