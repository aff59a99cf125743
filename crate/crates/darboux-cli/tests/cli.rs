use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn darboux(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_darboux")).args(args).output().expect("binary runs")
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, format!("{body}\n[output]\ndir = \"{}\"\n", dir.join("runs").display())).unwrap();
    p
}

const FLAT: &str = "[metric]\ng11 = \"1\"\ng12 = \"0\"\ng22 = \"1\"\nresolution = 33\n";

fn run_dirs(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn flat_verify_succeeds_and_writes_artifacts() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), FLAT);
    let o = darboux(&["verify", "--config", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("completed: curvature seed regions solve develop verify"));
    let dirs = run_dirs(t.path());
    assert_eq!(dirs.len(), 1);
    for f in ["report.json", "mesh.obj", "isometry_error.csv", "z0.txt"] {
        assert!(dirs[0].join(f).exists(), "{f}");
    }
}

#[test]
fn stage_flag_and_subcommand_agree() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), FLAT);
    let c = c.to_str().unwrap();
    let a = darboux(&["--config", c, "--stage", "curvature"]);
    assert_eq!(a.status.code(), Some(0));
    let dir = &run_dirs(t.path())[0];
    assert!(dir.join("curvature.dump").exists());
    assert!(!dir.join("z0.txt").exists());
    let b = darboux(&["curvature", "--config", c]);
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    let clash = darboux(&["seed", "--config", c, "--stage", "curvature"]);
    assert_eq!(clash.status.code(), Some(2));
}

#[test]
fn overrides_change_the_run_directory() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), FLAT);
    let c = c.to_str().unwrap();
    assert_eq!(darboux(&["curvature", "--config", c]).status.code(), Some(0));
    assert_eq!(darboux(&["curvature", "--config", c, "--resolution", "17"]).status.code(), Some(0));
    assert_eq!(darboux(&["curvature", "--config", c, "--epsilon", "0.04", "--max-iter", "3"]).status.code(), Some(0));
    assert_eq!(run_dirs(t.path()).len(), 3);
    let out = t.path().join("elsewhere");
    assert_eq!(darboux(&["curvature", "--config", c, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 1);
}

#[test]
fn config_errors_exit_with_2() {
    let t = tempfile::tempdir().unwrap();
    let missing = darboux(&["verify", "--config", t.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    let c = config(t.path(), "[metric]\ngraph = \"sin(u\"\n");
    let o = darboux(&["verify", "--config", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("offset 5"), "{}", String::from_utf8_lossy(&o.stderr));
    let o = darboux(&["verify", "--config", c.to_str().unwrap(), "--resolution", "64"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(darboux(&["verify"]).status.code(), Some(2));
    assert_eq!(darboux(&["--config", "x.toml", "--stage", "bogus"]).status.code(), Some(2));
}

#[test]
fn hyperbolic_origin_exits_with_3() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), "[metric]\ngraph = \"u*v\"\nresolution = 33\n");
    let o = darboux(&["verify", "--config", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(run_dirs(t.path())[0].join("report.json").exists());
}

#[test]
fn failed_check_exits_with_4() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), &format!("{FLAT}[solver]\nflat_residual_tol = 1e-300\n"));
    let o = darboux(&["verify", "--config", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stdout(&o));
    assert!(stdout(&o).contains("[FAIL] seed residual"));
}

#[test]
fn patch_failure_exits_with_5() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), "[metric]\ngraph = \"u^2/2 + u*v^3/6\"\nresolution = 33\n[schedule]\nmax_iter = 2\n[solver]\npatch_c = 1e-300\n");
    let o = darboux(&["solve", "--config", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let dir = &run_dirs(t.path())[0];
    // Logs of the solve are kept even though patching failed.
    for f in ["convergence_E1.csv", "convergence_H1.csv", "layers_H2.csv", "interfaces.csv", "report.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
}

#[test]
fn identical_configs_give_identical_outputs() {
    let t = tempfile::tempdir().unwrap();
    let c = config(t.path(), FLAT);
    let c = c.to_str().unwrap();
    let dir = {
        assert_eq!(darboux(&["develop", "--config", c]).status.code(), Some(0));
        run_dirs(t.path())[0].clone()
    };
    let mesh = std::fs::read(dir.join("mesh.obj")).unwrap();
    let report = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("report.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timings");
        v
    };
    let first = report(&dir);
    assert_eq!(darboux(&["develop", "--config", c]).status.code(), Some(0));
    assert_eq!(std::fs::read(dir.join("mesh.obj")).unwrap(), mesh);
    assert_eq!(report(&dir), first);
}
