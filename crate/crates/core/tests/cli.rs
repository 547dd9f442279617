use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

const DEMO: &str = "# two atoms, mixed sign\n2 2\n1.0 0.1 0.2\n-2.0 0.35 0.65\n";

fn algphase(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_algphase"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn pipeline_round_trip_exits_zero() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("demo.txt"), DEMO).unwrap();
    let o = algphase(&["pipeline", "demo.txt", "--out-dir", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["intensities.txt", "basis.txt", "reconstructed.txt", "patterson.txt", "solution_1.txt", "report.txt"] {
        assert!(dir.path().join("out").join(f).exists(), "{f} missing");
    }
    let report = fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    assert!(report.contains("match error"), "{report}");
}

#[test]
fn tiny_window_exits_two() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("demo.txt"), DEMO).unwrap();
    let o = algphase(&["pipeline", "demo.txt", "--window", "1,1"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn malformed_input_exits_one() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("bad.txt"), "2 2\n1.0 0.1\n").unwrap();
    let o = algphase(&["pipeline", "bad.txt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn pipeline_output_is_deterministic() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("demo.txt"), DEMO).unwrap();
    for out in ["a", "b"] {
        let o = algphase(&["pipeline", "demo.txt", "--out-dir", out], dir.path());
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["basis.txt", "reconstructed.txt", "patterson.txt", "report.txt"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
}

#[test]
fn stepwise_commands_chain() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let o = algphase(&["--seed", "7", "gen", "--n-atoms", "2", "-o", "s.txt"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = algphase(&["--window", "12,12", "synth", "s.txt", "-o", "i.txt"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = algphase(&["basis", "i.txt", "-o", "b.txt"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = algphase(&["--window", "12,12", "reconstruct", "--basis", "b.txt", "i.txt", "-o", "r.txt"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = fs::read_to_string(d.join("s.txt")).unwrap();
    let charges: Vec<String> = s
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .filter_map(|l| l.split_whitespace().next().map(str::to_string))
        .collect();
    let o = algphase(
        &["invert", "i.txt", "--basis", "b.txt", "--charges", &charges.join(","), "--out-dir", "inv"],
        d,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(d.join("inv/solution_1.txt").exists());
}

#[test]
fn verify_det_reports_agreement() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("demo.txt"), DEMO).unwrap();
    let o = algphase(&["patterson", "demo.txt", "-o", "p.txt"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let o = algphase(&["verify-det", "p.txt"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("det KH closed form"), "{out}");
}
