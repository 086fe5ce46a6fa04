use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use obbo_harness::config::HarnessConfig;
use obbo_harness::run::{Manifest, RunStatus};
use sha2::{Digest, Sha256};

fn obbo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obbo"))
        .args(args)
        .env_remove("OBBO_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path
}

fn shipped_configs() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut out: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

const SMALL: &str = r#"
[[experiment]]
name = "small"
seeds = [3, 4]

[experiment.stream]
kind = "quadratic"
d1 = 2
d2 = 3
horizon = 40
drift = { kind = "sublinear", rate = 0.5 }

[experiment.optimizer]
kind = "obbo"
window = 5
inner_steps = 10
"#;

#[test]
fn shipped_configs_round_trip_and_validate() {
    for path in shipped_configs() {
        let cfg = HarnessConfig::load(&path).unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(HarnessConfig::parse(&text).unwrap(), cfg, "{}", path.display());
        let out = obbo(&["validate", "--config", path.to_str().unwrap()]);
        assert!(out.status.success());
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(!stdout.contains("error:"), "{}: {stdout}", path.display());
    }
}

#[test]
fn empty_experiment_list_writes_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out_dir = tmp.path().join("out");
    let out = obbo(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = Manifest::load(&out_dir).unwrap();
    assert!(manifest.runs.is_empty());
    assert!(manifest.files.is_empty());
    assert_eq!(manifest.config_format, "toml");
}

#[test]
fn reruns_are_byte_identical_and_manifest_hashes_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for (d, jobs) in dirs.iter().zip(["1", "4"]) {
        let out = obbo(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            d.to_str().unwrap(),
            "--jobs",
            jobs,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let manifest = Manifest::load(&dirs[0]).unwrap();
    assert_eq!(manifest.runs.len(), 2);
    for f in &manifest.files {
        let a = fs::read(dirs[0].join(&f.path)).unwrap();
        let b = fs::read(dirs[1].join(&f.path)).unwrap();
        assert_eq!(a, b, "{}", f.path);
        assert_eq!(hex::encode(Sha256::digest(&a)), f.sha256);
    }
    assert_eq!(
        fs::read(dirs[0].join("manifest.json")).unwrap(),
        fs::read(dirs[1].join("manifest.json")).unwrap()
    );
    let csvs = fs::read_dir(&dirs[0])
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, manifest.files.len());

    let text = fs::read_to_string(dirs[0].join("small-s3.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# obbo-trace v1"));
    assert!(lines
        .next()
        .unwrap()
        .starts_with("run_id,t,lambda_0,lambda_1,blr_term,"));
    assert_eq!(lines.count(), 40);
    assert!(!text.contains('\r'));
}

#[test]
fn seeds_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let d = tmp.path().join("o");
    let out = obbo(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        d.to_str().unwrap(),
        "--seeds",
        "7,8,9",
    ]);
    assert!(out.status.success());
    let seeds: Vec<u64> = Manifest::load(&d).unwrap().runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![7, 8, 9]);
}

#[test]
fn diverging_run_is_isolated() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{SMALL}\n{}",
        r#"
[[experiment]]
name = "blowup"

[experiment.stream]
kind = "quadratic"
d1 = 2
d2 = 3
horizon = 300

[experiment.optimizer]
kind = "obbo"
alpha = 1.0e6
"#
    );
    let cfg = write_config(tmp.path(), &text);
    let d = tmp.path().join("o");
    let out = obbo(&["run", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let manifest = Manifest::load(&d).unwrap();
    let failed: Vec<_> = manifest.runs.iter().filter(|r| r.status == RunStatus::Failed).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].experiment, "blowup");
    assert!(failed[0].error.as_deref().unwrap().contains("step"));
    assert!(!d.join("blowup-s0.csv").exists());
    assert!(d.join("small-s3.csv").exists() && d.join("small-s4.csv").exists());

    let report = obbo(&["report", "--dir", d.to_str().unwrap()]);
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stderr).contains("blowup-s0"));
    assert!(d.join("report/small-regret.csv").exists());
}

#[test]
fn parse_errors_are_line_anchored() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[[experiment]]\nname = \"x\"\nseeds = [1, \"two\"]\n");
    let out = obbo(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

fn findings(text: &str) -> String {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), text);
    let out = obbo(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn validate_flags_large_inner_step() {
    let out = findings(
        r#"
[[experiment]]
name = "bad-eta"
stream = { kind = "quadratic", d1 = 2, d2 = 2, horizon = 50 }
optimizer = { kind = "obbo", eta = 2.0, inner_steps = 10 }
"#,
    );
    assert!(out.contains("warning") && out.contains("eta < 1/mu_g"), "{out}");
}

#[test]
fn validate_accepts_conforming_config() {
    let out = findings(
        r#"
[[experiment]]
name = "good"
stream = { kind = "quadratic", d1 = 2, d2 = 2, horizon = 50 }
optimizer = { kind = "obbo", inner_steps = 10 }
"#,
    );
    assert_eq!(out.trim(), "no findings");
}

#[test]
fn validate_notes_batch_differing_from_window() {
    let out = findings(
        r#"
[[experiment]]
name = "sobbo"
stream = { kind = "quadratic", d1 = 2, d2 = 2, horizon = 50 }
optimizer = { kind = "sobbo", batch_size = 3, obbo = { window = 5 } }
"#,
    );
    assert!(out.contains("note") && out.contains("s = w"), "{out}");
    assert!(!out.contains("warning"), "{out}");
}
