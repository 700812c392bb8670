use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn choquard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_choquard")).args(args).env_remove("CHOQUARD_WORKERS").output().expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

fn check_dat(text: &str) {
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with('#'));
    for line in lines {
        let cols: Vec<f64> = line.split_whitespace().map(|c| c.parse().unwrap()).collect();
        assert!((2..=3).contains(&cols.len()), "{line}");
    }
}

fn check_csv(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    let width = lines.next().unwrap().split(',').count();
    lines
        .map(|l| {
            let cells: Vec<String> = l.split(',').map(String::from).collect();
            assert_eq!(cells.len(), width, "{l}");
            cells
        })
        .collect()
}

const SWEEP_2D: &[&str] = &["--dim", "2", "--n", "32", "--L", "24", "--potential", "ion_atom:b=1", "--g-range", "3:7:5"];

#[test]
fn selftest_is_green() {
    let dir = tempfile::tempdir().unwrap();
    let out = choquard(&["selftest", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let suites = json(dir.path(), "selftest.json");
    assert!(suites.as_array().unwrap().iter().all(|s| s["passed"] == true));
    assert_eq!(json(dir.path(), "manifest.json")["verdicts"]["green"], true);
}

#[test]
fn malformed_key_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "[grid]\ndim = 2\nresolution = 64\n").unwrap();
    let out = choquard(&["groundstate", "--config", cfg.to_str().unwrap(), "--g", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.resolution"));
    let out = choquard(&["groundstate", "--potential", "ion_atom:c=1", "--g", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = choquard(&["groundstate", "--n", "48", "--g", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn computation_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = choquard(&["pokhozaev", "--out", d, "--dim", "1", "--n", "64", "--L", "32", "--potential", "step_1d:eps=0.1", "--g", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn groundstate_artifacts_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = choquard(&["groundstate", "--out", dir.path().to_str().unwrap(), "--dim", "2", "--n", "32", "--L", "16", "--potential", "ion_atom:b=1", "--g", "9", "--seed", "3"]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(read(a.path(), "groundstate.json"), read(b.path(), "groundstate.json"));
    assert_eq!(fs::read(a.path().join("state.chqf")).unwrap(), fs::read(b.path().join("state.chqf")).unwrap());
    check_dat(&read(a.path(), "profile.dat"));
    let report = json(a.path(), "groundstate.json");
    assert_eq!(report["result"]["status"], "converged");
    let manifest = json(a.path(), "manifest.json");
    assert_eq!(manifest["completed"], true);
    assert_eq!(manifest["config"]["run.g"], "9");
}

#[test]
fn pokhozaev_and_spectrum_from_dump() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let common = ["--dim", "2", "--n", "128", "--L", "32", "--potential", "ion_atom:b=1", "--g", "9"];
    let gs = dir.path().join("gs");
    let mut args = vec!["groundstate", "--out", gs.to_str().unwrap()];
    args.extend(common);
    assert_eq!(choquard(&args).status.code(), Some(0));
    let state = gs.join("state.chqf");
    for sub in ["pokhozaev", "spectrum"] {
        let out_dir = format!("{d}/{sub}");
        let mut args = vec![sub, "--out", &out_dir, "--input", state.to_str().unwrap()];
        args.extend(common);
        let out = choquard(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let p = json(&dir.path().join("pokhozaev"), "pokhozaev.json");
    assert!(p["identity"]["relative_residual"].as_f64().unwrap() < 1e-4);
    check_dat(&read(&dir.path().join("pokhozaev"), "autocorrelation.dat"));
    let s = json(&dir.path().join("spectrum"), "spectrum.json");
    assert_eq!(s["holds"], true);
}

#[test]
fn sweep_resume_matches_uninterrupted() {
    let full = tempfile::tempdir().unwrap();
    let part = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--out", full.path().to_str().unwrap()];
    args.extend(SWEEP_2D);
    assert_eq!(choquard(&args).status.code(), Some(0));

    let cfg = part.path().join("stop.cfg");
    fs::write(&cfg, "[sweep]\nmax_probes = 2\n").unwrap();
    let out_dir = part.path().join("run");
    let mut args = vec!["sweep", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
    args.extend(SWEEP_2D);
    assert_eq!(choquard(&args).status.code(), Some(0));
    assert_eq!(json(&out_dir, "manifest.json")["completed"], false);
    assert!(!out_dir.join("sweep.csv").exists());

    let out = choquard(&["resume", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(read(full.path(), "sweep.csv"), read(&out_dir, "sweep.csv"));
    assert_eq!(json(&out_dir, "manifest.json")["completed"], true);
    let rows = check_csv(&read(&out_dir, "sweep.csv"));
    assert_eq!(rows.len(), 5);
    check_dat(&read(&out_dir, "sweep.dat"));

    // completed run: no-op
    let before = read(&out_dir, "manifest.json");
    assert_eq!(choquard(&["resume", out_dir.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(before, read(&out_dir, "manifest.json"));
}

#[test]
fn corrupted_dump_is_a_checksum_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("stop.cfg");
    fs::write(&cfg, "[sweep]\nmax_probes = 4\n").unwrap();
    let out_dir = dir.path().join("run");
    let mut args = vec!["sweep", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
    args.extend(SWEEP_2D);
    assert_eq!(choquard(&args).status.code(), Some(0));
    let dump = out_dir.join("sweep_warm.chqf");
    let mut bytes = fs::read(&dump).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    fs::write(&dump, bytes).unwrap();
    let out = choquard(&["resume", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn table_mode_is_worker_independent() {
    let one = tempfile::tempdir().unwrap();
    let two = tempfile::tempdir().unwrap();
    for (dir, w) in [(&one, "1"), (&two, "3")] {
        let mut args = vec!["sweep", "--mode", "table", "--workers", w, "--out", dir.path().to_str().unwrap()];
        args.extend(SWEEP_2D);
        assert_eq!(choquard(&args).status.code(), Some(0));
    }
    assert_eq!(read(one.path(), "sweep.csv"), read(two.path(), "sweep.csv"));
}

#[test]
fn gstar_brackets_with_monotone_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = choquard(&["gstar", "--out", dir.path().to_str().unwrap(), "--dim", "3", "--n", "32", "--L", "24", "--potential", "ion_atom:b=1", "--m", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let g = json(dir.path(), "gstar.json");
    let (lo, hi, gs) = (g["lo"].as_f64().unwrap(), g["hi"].as_f64().unwrap(), g["g_star"].as_f64().unwrap());
    assert!(lo < gs && gs < hi && hi - lo <= 1e-3 * hi, "{g}");
    assert_eq!(g["monotone"], true);
    check_csv(&read(dir.path(), "gstar_trace.csv"));
    check_dat(&read(dir.path(), "gstar.dat"));
}

#[test]
fn classify_resume_after_bisection() {
    let full = tempfile::tempdir().unwrap();
    let part = tempfile::tempdir().unwrap();
    let common = ["--dim", "2", "--n", "64", "--L", "40", "--potential", "ion_atom:b=1"];
    let mut args = vec!["classify", "--out", full.path().to_str().unwrap()];
    args.extend(common);
    let out = choquard(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = part.path().join("stop.cfg");
    fs::write(&cfg, "[transition]\nstop_after = gstar\n").unwrap();
    let out_dir = part.path().join("run");
    let mut args = vec!["classify", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
    args.extend(common);
    assert_eq!(choquard(&args).status.code(), Some(0));
    assert!(!out_dir.join("classify.json").exists());
    assert_eq!(choquard(&["resume", out_dir.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(json(full.path(), "classify.json"), json(&out_dir, "classify.json"));
    assert_eq!(json(&out_dir, "classify.json")["order"], "second");
    check_csv(&read(&out_dir, "classify_trace.csv"));
    check_dat(&read(&out_dir, "classify_l4.dat"));
}

#[test]
fn metastable_threshold_modes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = choquard(&["metastable", "--mode", "g2", "--out", d, "--dim", "3", "--n", "16", "--L", "16", "--potential", "ion_atom:b=1"]);
    assert_eq!(out.status.code(), Some(0));
    let g2 = json(dir.path(), "metastable.json")["g2"].as_f64().unwrap();
    assert!(g2 > 0.0 && g2.is_finite());
    let out = choquard(&["metastable", "--mode", "rho0", "--out", d, "--dim", "3", "--n", "32", "--L", "24", "--potential", "ion_atom:b=1", "--g", "18"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(dir.path(), "metastable.json");
    assert!(r["rho0"]["rho0"].as_f64().unwrap() > 0.0);
    let out = choquard(&["metastable", "--mode", "bogus", "--out", d]);
    assert_eq!(out.status.code(), Some(2));
}
