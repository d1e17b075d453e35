use std::path::Path;
use std::process::{Command, Output};

use difflab_cli::RunManifest;

fn difflab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_difflab")).args(args).env_remove("DIFFLAB_THREADS").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const DIRAC: &str = r#"{
    "generator": {"kind": "integer_lattice", "dim": 2},
    "model": {"variant": "iid", "dist": {"family": "dirac0", "dim": 2}},
    "frequencies": {"kind": "dual_lattice", "max_norm": 1.5},
    "r_schedule": [50],
    "analyses": ["recover"]
}"#;

#[test]
fn dirac_recovery_returns_the_measurement() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", DIRAC);
    let out = dir.path().join("out");
    let o = difflab(&["verify", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("recovered_seed0.csv")).unwrap();
    let h = rdr.headers().unwrap().clone();
    let col = |n: &str| h.iter().position(|x| x == n).unwrap();
    let mut rows = 0;
    for r in rdr.records() {
        let r = r.unwrap();
        assert_eq!(r[col("measured_re")], r[col("recovered_re")]);
        assert_eq!(r[col("measured_im")], r[col("recovered_im")]);
        assert_eq!(r[col("phi_re")].parse::<f64>().unwrap(), 1.0);
        rows += 1;
    }
    // Dual points of Z^2 with norm at most 1.5: 0, 4 axis and 4 diagonal.
    assert_eq!(rows, 9);
    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert!(m.success());
    assert_eq!(m.outputs["recover"].len(), 1);
}

#[test]
fn missing_generator_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = DIRAC.replace(r#""generator": {"kind": "integer_lattice", "dim": 2},"#, "");
    let cfg = write(dir.path(), "c.json", &text);
    let o = difflab(&["recover", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("generator"), "{err}");
}

#[test]
fn failed_check_gives_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let text = DIRAC
        .replace(r#""family": "dirac0", "dim": 2"#, r#""family": "gaussian_iso", "dim": 2, "sigma": 0.1"#)
        .replace(r#""r_schedule""#, r#""seeds": [3], "tolerances": {"recover_relative": 1e-9}, "r_schedule""#);
    let cfg = write(dir.path(), "c.json", &text);
    let out = dir.path().join("out");
    let o = difflab(&["verify", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert!(!m.checks[0].passed);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        let out = dir.path().join(format!("t{threads}"));
        let o = difflab(&["spectrum", "--preset", "13", "--threads", threads, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let m = RunManifest::read(&out.join("manifest.json")).unwrap();
        m.outputs["spectrum"].iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect::<Vec<_>>()
    };
    let one = run("1");
    assert!(!one.is_empty() && !one[0].is_empty());
    assert_eq!(one, run("8"));
}

#[test]
fn manifest_hash_tracks_semantic_content() {
    let dir = tempfile::tempdir().unwrap();
    let hash = |name: &str, text: &str| {
        let cfg = write(dir.path(), name, text);
        let out = dir.path().join(name.replace(".json", ""));
        let o = difflab(&["recover", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        RunManifest::read(&out.join("manifest.json")).unwrap().config_hash
    };
    let reordered = r#"{
        "analyses": ["recover"],
        "r_schedule": [50.0],
        "model": {"dist": {"dim": 2, "family": "dirac0"}, "variant": "iid"},
        "frequencies": {"max_norm": 1.5, "kind": "dual_lattice"},
        "generator": {"dim": 2, "kind": "integer_lattice"}
    }"#;
    let a = hash("a.json", DIRAC);
    assert_eq!(a, hash("b.json", reordered));
    assert_ne!(a, hash("c.json", &DIRAC.replace("[50]", "[40]")));
}

#[test]
fn plot_renders_outputs_and_empty_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", DIRAC);
    let out = dir.path().join("out");
    assert!(difflab(&["spectrum", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let o = difflab(&["plot", out.join("manifest.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let svg = std::fs::read_to_string(out.join("spectrum_seed0.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    let empty = write(dir.path(), "empty.csv", "");
    assert!(difflab(&["plot", &empty]).status.success());
    assert!(dir.path().join("empty.svg").exists());

    let missing = difflab(&["plot", dir.path().join("absent.csv").to_str().unwrap()]);
    assert!(!missing.status.success());
}
