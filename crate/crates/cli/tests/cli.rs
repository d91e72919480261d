use std::process::Command;

fn fraclod() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fraclod"))
}

#[test]
fn converge_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("conv.csv");
    let status = fraclod()
        .args(["converge", "--s", "0.4", "--H-list", "2^-1,2^-2", "--h", "2^-4", "--k", "full", "--boundary-mode", "global"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "study,s,d,H,h,k,T,boundary_mode,coeff,value,eoc");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("converge,0.4,1,0.5,0.0625,full,1,global,constant:1,"));
    assert!(lines[1].ends_with(','));
    assert!(lines[3].starts_with("converge_fit,"));
}

#[test]
fn config_file_and_overrides_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.cfg");
    std::fs::write(&cfg, "# decay study\ns = 0.5\nH = 2^-2\nh = 2^-4\nk_max = 3\ncoeff = logrand:100:1\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = fraclod().arg("decay").arg("--config").arg(&cfg).args(["--seed", "4"]).arg("--out").arg(&out).status().unwrap();
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("logrand:100:4"));
    assert_eq!(text.lines().filter(|l| l.starts_with("decay,")).count(), 3);
}

#[test]
fn oracle_reports_extension_constant() {
    let out = fraclod()
        .args(["oracle", "--s", "0.5", "--set", "oracle_h=2^-2,2^-3", "--set", "n_modes=8"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("oracle_cs,0.5,"));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("c_s=1.000000000000000e0"), "{stderr}");
}

#[test]
fn solve_dumps_nodal_values() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("u.txt");
    let out = fraclod()
        .args(["solve", "--s", "0.3", "--H-list", "2^-2", "--h", "2^-3", "--k", "1"])
        .arg("--set")
        .arg(format!("dump={}", dump.display()))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("solve_energy"));
    assert_eq!(std::fs::read_to_string(dump).unwrap().lines().count(), 1 + 9 * 9);
}

#[test]
fn configuration_errors_exit_with_2() {
    let cases: [&[&str]; 5] = [
        &["converge", "--s", "1.5"],
        &["converge", "--H-list", "2^-3", "--h", "2^-2"],
        &["oracle", "--coeff", "logrand:10:1"],
        &["decay", "--boundary-mode", "sideways"],
        &["converge", "--config", "/nonexistent/study.cfg"],
    ];
    for args in cases {
        let status = fraclod().args(args).status().unwrap();
        assert_eq!(status.code(), Some(2), "{args:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let raster = dir.path().join("bad.txt");
    std::fs::write(&raster, "4\n1 2 3\n").unwrap();
    let status = fraclod().arg("converge").arg("--coeff").arg(format!("raster:{}", raster.display())).status().unwrap();
    assert_eq!(status.code(), Some(2));
}
