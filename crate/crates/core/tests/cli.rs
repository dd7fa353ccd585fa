use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn glset(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_glset"));
    cmd.args(args).env_remove("GLSET_THREADS");
    if let Some(t) = threads {
        cmd.env("GLSET_THREADS", t);
    }
    cmd.output().expect("spawn glset")
}

fn write_config(dir: &Path, out: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    let text = format!("output_dir = {:?}\n{body}", out.to_str().unwrap());
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const ALL_KINDS: &str = r#"
[model]
kind = "iid_gaussian"
dim = 3

[functionals]
R = "norm2()"
f = "exp(-norm2())"

[[jobs]]
name = "dens"
kind = "density"
g = "xi(1)"
r_grid = { from = -1, to = 1, points = 5 }
n = 40000
seed = 3

[[jobs]]
name = "surf"
kind = "surface"
g = "R"
phis = ["1", "f"]
r_grid = [2.0, 3.0]
n = 40000
traces = true

[[jobs]]
name = "parts"
kind = "ibp"
g = "R"
phis = ["f"]
k = [1, 3]
r_grid = [2.0]
n = 40000

[[jobs]]
name = "bins"
kind = "disintegrate"
g = "R"
phis = ["xi(1)^2"]
bins = 20
r_grid = [2.0]
n = 40000

[[jobs]]
name = "haus"
kind = "hausdorff"
g = "R"
r_grid = [2.0]
n = 40000
"#;

#[test]
fn grammar_prints_productions() {
    let out = glset(&["grammar"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("expr"));
    assert!(text.contains("norm2"));
}

#[test]
fn run_writes_every_job_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), &out_dir, ALL_KINDS);
    let out = glset(&["run", &cfg], Some("2"));
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    for f in [
        "dens.csv",
        "dens.json",
        "surf.csv",
        "surf_integrals.csv",
        "surf.json",
        "parts.csv",
        "parts.json",
        "bins.csv",
        "bins.json",
        "haus.csv",
        "haus.json",
        "manifest.json",
    ] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let header = fs::read_to_string(out_dir.join("dens.csv")).unwrap();
    assert!(header.starts_with("r,estimate,stderr,estimator,excluded_fraction\n"));

    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["tool"], "glset");
    assert_eq!(m["threads"], 2);
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    let jobs = m["jobs"].as_array().unwrap();
    assert_eq!(jobs.len(), 5);
    assert_eq!(jobs[0]["seed"], 3);
    assert_eq!(jobs[0]["n"], 40000);
}

#[test]
fn csv_bodies_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg_a = write_config(dir.path(), &a, ALL_KINDS);
    assert!(glset(&["run", &cfg_a], Some("1")).status.success());
    let cfg_b = write_config(dir.path(), &b, ALL_KINDS);
    assert!(glset(&["run", &cfg_b], Some("4")).status.success());
    for f in [
        "dens.csv",
        "surf.csv",
        "surf_integrals.csv",
        "parts.csv",
        "bins.csv",
        "haus.csv",
        "bins.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn empty_grid_is_a_fault() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let body = "[model]\nkind = \"iid_gaussian\"\ndim = 2\n[[jobs]]\nkind = \"density\"\ng = \"xi(1)\"\nr_grid = []\n";
    let cfg = write_config(dir.path(), &out_dir, body);
    let out = glset(&["run", &cfg], None);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("jobs[0].r_grid"), "{err}");
    assert!(!out_dir.exists());
}

#[test]
fn missing_config_is_a_fault() {
    let out = glset(&["run", "/nonexistent/glset.toml"], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_thread_count_is_a_fault() {
    let out = glset(&["grammar"], Some("zero"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn selftest_job_records_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let body = "[model]\nkind = \"iid_gaussian\"\ndim = 1\n[[jobs]]\nname = \"st\"\nkind = \"selftest\"\ncriteria = [5]\n";
    let cfg = write_config(dir.path(), &out_dir, body);
    let out = glset(&["run", &cfg], None);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("criterion  5 PASS"), "{stdout}");
    let csv = fs::read_to_string(out_dir.join("st.csv")).unwrap();
    assert!(csv.starts_with("criterion,title,check,"));
}

#[test]
fn selftest_subcommand_filters_criteria() {
    let out = glset(&["selftest", "--criteria", "5"], None);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
}
