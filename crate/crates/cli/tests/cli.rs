use std::path::PathBuf;
use std::process::{Command, Output};

use qrd::io;

fn qrd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrd"))
        .args(args)
        .current_dir(workspace_root())
        .output()
        .expect("binary runs")
}

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8 output")
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).expect("utf-8 output")
}

#[test]
fn ki_prints_block_table_and_blind_rate() {
    let o = qrd(&["ki", "--ensemble", "fixtures/blind_pair.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("S(CQ) = 0.600876037"), "{out}");
    assert!(out.lines().nth(1).unwrap().starts_with("0\t2\t1"), "{out}");
}

#[test]
fn ki_json_export_parses() {
    let dir = std::env::temp_dir().join(format!("qrd-ki-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("ki.json");
    let o = qrd(&["ki", "--ensemble", "fixtures/redundant_product.json", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["blocks"][0]["dimN"], 2);
    assert_eq!(v["blocks"][0]["dimQ"], 2);
}

#[test]
fn rd_ea_classical_pair_curve() {
    let o = qrd(&["rd-ea", "--ensemble", "fixtures/classical_pair.json", "--dgrid", "0:0.6:13"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(io::csv_seed(&text), Some(0));
    let rows = io::rates_from_csv(&text).unwrap();
    assert_eq!(rows.len(), 13);
    assert!((rows[0].rate_bits - 0.5).abs() < 0.02);
    for r in rows.iter().filter(|r| r.d >= 0.5) {
        assert!(r.rate_bits <= 1e-3, "{r:?}");
    }
}

#[test]
fn identical_arguments_give_identical_bytes() {
    let args = ["rd-ea", "--ensemble", "fixtures/nonorthogonal_pair.json", "--dgrid", "0.05:0.3:3", "--seed", "9"];
    let (a, b) = (qrd(&args), qrd(&args));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("# seed=9\n"));
}

#[test]
fn csv_rows_round_trip_through_importer() {
    let o = qrd(&["rd-ua", "--ensemble", "fixtures/classical_pair.json", "--dgrid", "0.3:0.6:2", "--restarts", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let rows = io::rates_from_csv(&text).unwrap();
    assert!(rows.iter().all(|r| r.upper.is_some() && r.lower.is_some()));
    assert_eq!(io::rates_to_csv(&rows, 0), text);
}

#[test]
fn json_output_carries_seed_and_rows() {
    let o = qrd(&["rd-ea", "--ensemble", "fixtures/single_pure.json", "--dgrid", "0:0.2:2", "--format", "json", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["seed"], 3);
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn ep_of_identity_on_classical_pair_is_one_bit() {
    let o = qrd(&["ep", "--ensemble", "fixtures/classical_pair.json", "--restarts", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = io::rates_from_csv(&stdout(&o)).unwrap();
    assert!((rows[0].rate_bits - 1.0).abs() < 1e-6, "{rows:?}");
}

#[test]
fn region_contains_classical_corner() {
    let o = qrd(&["region", "--ensemble", "fixtures/classical_pair.json", "--dgrid", "0:0:1", "--random-lambdas", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let rows = io::regions_from_csv(&text).unwrap();
    assert!(rows.iter().any(|r| r.r_min <= 0.5 + 0.02 && r.sum_min <= 1.0 + 0.02), "{text}");
    assert_eq!(io::regions_to_csv(&rows, 0), text);
}

#[test]
fn verify_suite_passes() {
    let o = qrd(&["verify", "--suite", "channels", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().skip(1).all(|l| l.starts_with("PASS ")), "{out}");
}

#[test]
fn verify_json_is_machine_readable() {
    let o = qrd(&["verify", "--suite", "entropy", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 4);
}

#[test]
fn validation_errors_exit_one_and_name_the_input() {
    let o = qrd(&["rd-ea", "--ensemble", "missing.json", "--dgrid", "0:1:2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--ensemble missing.json"));

    let o = qrd(&["rd-ea", "--ensemble", "fixtures/classical_pair.json", "--dgrid", "1:0:2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--dgrid"));

    let o = qrd(&["verify", "--suite", "nope"]);
    assert_eq!(o.status.code(), Some(1));

    let o = qrd(&["rd-ua", "--ensemble", "fixtures/classical_pair.json", "--dgrid", "0:0:1", "--k", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--k"));
}

#[test]
fn bad_item_is_cited() {
    let dir = std::env::temp_dir().join(format!("qrd-bad-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.json");
    std::fs::write(
        &path,
        r#"{"dimA": 2, "items": [{"p": 0.5, "rho": [[[1,0],[0,0]],[[0,0],[0,0]]]}, {"p": 0.5, "rho": [[[2,0],[0,0]],[[0,0],[0,0]]]}]}"#,
    )
    .unwrap();
    let o = qrd(&["ki", "--ensemble", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("item 1"), "{}", stderr(&o));
}

#[test]
fn strict_flags_non_convergence() {
    let o = qrd(&[
        "rd-ea",
        "--ensemble",
        "fixtures/nonorthogonal_pair.json",
        "--dgrid",
        "0.1:0.1:1",
        "--max-iters",
        "1",
        "--restarts",
        "1",
        "--strict",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
}

#[test]
fn thread_cap_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_qrd"))
        .args(["verify", "--suite", "entropy"])
        .env("QRD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("QRD_THREADS"));
}
