use std::path::Path;
use std::process::{Command, Output};

use friedrichs::run::{RunReport, Status, OUTPUT_DIR_ENV, REPORT_FILE};

const SEPARABLE: &str = r#"
[interval]
a = 0.0
b = 1.0

[grid]
sizes = [41, 61]

[kernel]
family = "separable"

[checks]
suites = ["spectrum", "tkernel", "smatrix", "waveop", "refinement"]

# coarse grids
[tolerances]
scattering_identity = 1e-2
regularized = 5e-3

[output]
directory = "out"
seed = 3
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_friedrichs"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run_in(dir: &Path, config: &Path, out: &Path) -> Output {
    bin()
        .current_dir(dir)
        .env(OUTPUT_DIR_ENV, out)
        .arg("run")
        .arg(config)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_good_and_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "good.toml", SEPARABLE);
    let o = bin().arg("validate").arg(&good).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("separable"));

    let bad = write_config(dir.path(), "bad.toml", &SEPARABLE.replace("b = 1.0", "b = -1.0"));
    let o = bin().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("interval.a") && err.contains("interval.b"), "{err}");

    let unknown = write_config(
        dir.path(),
        "suite.toml",
        &SEPARABLE.replace("\"refinement\"", "\"bogus\""),
    );
    let o = bin().arg("validate").arg(&unknown).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus") && stderr(&o).contains("waveop"));
}

#[test]
fn run_writes_reports_and_export_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sep.toml", SEPARABLE);
    let out = dir.path().join("override");
    let o = run_in(dir.path(), &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS waveop"));
    // the environment variable wins over the directory in the file
    assert!(!dir.path().join("out").exists());
    for f in [REPORT_FILE, "smatrix.csv", "ksvd.csv", "refinement.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let report = RunReport::read_json(&out.join(REPORT_FILE)).unwrap();
    assert!(report.all_passed());
    assert_eq!(report.checks.len(), 5);
    assert!(report.checks.values().all(|c| c.status == Status::Pass));
    for rows in report.refinement.values() {
        assert_eq!(rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![41, 61]);
    }

    let ksvd = out.join("k.csv");
    let o = bin()
        .args(["export", "--kind", "ksvd", "-o"])
        .arg(&ksvd)
        .arg(out.join(REPORT_FILE))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(&ksvd).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["index", "sigma"]);
    let sigma: Vec<f64> = rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert!(!sigma.is_empty());
    assert!(sigma.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(
        std::fs::read_to_string(&ksvd).unwrap(),
        std::fs::read_to_string(out.join("ksvd.csv")).unwrap()
    );

    let o = bin()
        .args(["export", "--kind", "smatrix"])
        .arg(out.join(REPORT_FILE))
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("lambda,re_s_11,im_s_11,re_s_12"));
    assert_eq!(text.lines().count(), 1 + 61);
}

#[test]
fn failing_check_gives_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = SEPARABLE.replace("[tolerances]", "[tolerances]\nunitarity = 1e-20");
    let cfg = write_config(dir.path(), "strict.toml", &text);
    let o = run_in(dir.path(), &cfg, &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL smatrix"));
}

#[test]
fn export_without_data_names_the_suite() {
    let dir = tempfile::tempdir().unwrap();
    let text = SEPARABLE.replace(
        "suites = [\"spectrum\", \"tkernel\", \"smatrix\", \"waveop\", \"refinement\"]",
        "suites = [\"spectrum\"]",
    );
    let cfg = write_config(dir.path(), "spec.toml", &text);
    let out = dir.path().join("o");
    assert_eq!(run_in(dir.path(), &cfg, &out).status.code(), Some(0));
    let o = bin()
        .args(["export", "--kind", "ksvd"])
        .arg(out.join(REPORT_FILE))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("waveop"));
}
