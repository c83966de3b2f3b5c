use std::path::Path;
use std::process::{Command, Output};

fn tracefda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tracefda"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

fn read_matrix(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn simulate_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = tracefda(&[
            "simulate",
            "--scenario",
            "I",
            "--seed",
            "7",
            "--replications",
            "2",
            "--eps",
            "0,0.1",
            "--methods",
            "cTR,rFDA,tQDA",
            "--out",
            &out_arg(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["records.csv", "summary.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn reduce_scenario_one_tr() {
    let dir = tempfile::tempdir().unwrap();
    let pair = tracefda(&["scatter", "--scenario", "I", "--out", &out_arg(dir.path())]);
    assert!(pair.status.success());
    let o = tracefda(&[
        "reduce",
        "--pair",
        dir.path().join("pair.json").to_str().unwrap(),
        "--method",
        "tr",
        "--k",
        "2",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_matrix(&dir.path().join("projection.csv"));
    // column-orthonormal TR solution spans e1 and (0, 0.757, 0.654)
    let col = |j: usize| -> Vec<f64> {
        let c: Vec<f64> = v.iter().map(|r| r[j]).collect();
        let big = c
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        c.iter().map(|x| x / big).collect()
    };
    let expect = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.654 / 0.757]];
    for (j, e) in expect.iter().enumerate() {
        for (a, b) in col(j).iter().zip(e) {
            assert!((a - b).abs() < 5e-3, "column {j}: {:?}", col(j));
        }
    }
    let profile = std::fs::read_to_string(dir.path().join("profile.csv")).unwrap();
    assert_eq!(profile.lines().count(), 3);
}

#[test]
fn bound_check_rows_are_within_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = tracefda(&[
        "bound-check",
        "--scenario",
        "I",
        "--eps",
        "1e-4,1e-3",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("bound.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ends_with(",true")), "{text}");
}

#[test]
fn validation_error_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = tracefda(&[
        "reduce",
        "--scenario",
        "I",
        "--k",
        "9",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "validation");
    assert_eq!(err["exit_code"], 1);
}

#[test]
fn numerical_error_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let pair = dir.path().join("p.json");
    std::fs::write(&pair, r#"{"b": [[1, 0], [0, 1]], "w": [[1, 1], [1, 1]]}"#).unwrap();
    let o = tracefda(&[
        "reduce",
        "--pair",
        pair.to_str().unwrap(),
        "--method",
        "fda",
        "--k",
        "1",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "numerical");
}

#[test]
fn missing_input_file_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = tracefda(&[
        "crossval",
        "--data",
        "/nonexistent.csv",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn crossval_command_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let mut text = String::from("a,b,class\n");
    for i in 0..40 {
        let g = i % 2;
        let shift = if g == 0 { 0.0 } else { 30.0 };
        text.push_str(&format!(
            "{},{},{}\n",
            shift + (i as f64 * 0.37).sin(),
            (i as f64 * 1.3).cos(),
            g
        ));
    }
    std::fs::write(&csv, text).unwrap();
    let o = tracefda(&[
        "crossval",
        "--data",
        csv.to_str().unwrap(),
        "--folds",
        "5",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("crossval.csv")).unwrap();
    assert_eq!(
        table,
        "k,median_accuracy,folds_ok,folds_failed\nrLDA,1,5,0\n1,1,5,0\n"
    );
}

#[test]
fn scan_conjecture_writes_profile_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = tracefda(&[
        "scan-conjecture",
        "--pencils",
        "3",
        "--k-max",
        "4",
        "--seed",
        "2",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("conjecture.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 4);
}
