use std::path::PathBuf;
use std::process::Command;

fn outdir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("vnls-bin-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn vnls(dir: &PathBuf, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_vnls"))
        .arg("--output-dir")
        .arg(dir)
        .args(args)
        .env("VNLS_LOG", "quiet")
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn soliton_csv_matches_sech_modulus() {
    let d = outdir("soliton");
    let (code, _) = vnls(&d, &["soliton", "--n-comp", "1", "--kappa", "-1", "--poles", "mu:0,1;C:1,0,1,0", "--grid", "-20,20,0.05,0,0,0.1"]);
    assert_eq!(code, 0);
    let g = vnls::cli::import_grid(&d.join("soliton.csv")).unwrap();
    assert_eq!(g.kappa, -1);
    for ix in 0..g.grid.nx {
        let u = g.grid.at(0, ix)[0];
        assert!((u.norm() - 1.0 / g.grid.x(ix).cosh()).abs() < 1e-13);
    }
}

#[test]
fn glm_calibration_passes() {
    let d = outdir("glm");
    let (code, stdout) = vnls(&d, &["glm-check", "--terms", "1", "--calibrate"]);
    assert_eq!(code, 0, "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.contains("PASS")).count(), 3);
}

#[test]
fn long_lattice_run_reports_failure_honestly() {
    let d = outdir("lattice");
    let (code, stdout) = vnls(&d, &["lattice", "--sites", "32", "--defect-site", "16", "--T", "10"]);
    assert_eq!(code, 1);
    assert!(stdout.contains("blew up"));
    let drift: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("drift.json")).unwrap()).unwrap();
    assert!(drift["blowup_time"].is_number());
}

#[test]
fn short_lattice_run_passes() {
    let d = outdir("short");
    let (code, stdout) = vnls(&d, &["lattice", "--sites", "32", "--defect-site", "16", "--T", "0.5"]);
    assert_eq!(code, 0, "{stdout}");
}

#[test]
fn bad_flags_exit_2() {
    let d = outdir("bad");
    assert_eq!(vnls(&d, &["bt-check", "--branch", "sideways"]).0, 2);
    assert_eq!(vnls(&d, &["soliton", "--grid", "1,2"]).0, 2);
    assert_eq!(vnls(&d, &["suite", "--criteria", "13"]).0, 2);
}
