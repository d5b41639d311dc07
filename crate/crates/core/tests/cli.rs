use std::path::Path;
use std::process::{Command, Output};

use kextract::tables::Backend;
use kextract::{BalancedTable, TableParams};

fn kextract(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kextract"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn check_condition_feasible_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = kextract(
        &[
            "check-condition",
            "--n-exp",
            "10",
            "--m-exp",
            "4",
            "--s-exp",
            "8",
            "--d-exp",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["holds"], true);
    assert_eq!(v["lhs"], "65536");
    assert!((v["rhs_approx"].as_f64().unwrap() - 7411.967).abs() < 1e-3);
}

#[test]
fn constant_table_fails_at_d4_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let params = TableParams::new(3, 2, 2, 2).unwrap();
    BalancedTable::from_cells(params, Backend::ExplicitCanonical, &[0; 64])
        .unwrap()
        .save(dir.path().join("c.btab"))
        .unwrap();
    let out = kextract(
        &["verify-table", "--table", "c.btab", "--report", "r.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
    assert_eq!(report["witness"]["colors"], serde_json::json!([0]));
    // D = 2 meets the bound with equality
    let out = kextract(
        &["verify-table", "--table", "c.btab", "--d-exp", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn extract_rejects_unequal_lengths() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x"), [0xA5, 0x10]).unwrap();
    std::fs::write(dir.path().join("y"), [0x3C]).unwrap();
    let out = kextract(
        &[
            "extract", "--x", "x", "--y", "y", "--sigma", "1/2", "--alpha", "1/8", "--out", "z",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error kind=invalid_params"));
}

#[test]
fn extract_with_bits_truncation() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x"), [0x00, 0x10]).unwrap();
    std::fs::write(dir.path().join("y"), [0x80, 0x00]).unwrap();
    let out = kextract(
        &[
            "extract",
            "--x",
            "x",
            "--y",
            "y",
            "--sigma",
            "1/2",
            "--alpha",
            "1/8",
            "--seed",
            "7",
            "--backend",
            "random",
            "--bits",
            "12",
            "--out",
            "z",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["bits"], 8);
    assert_eq!(std::fs::read(dir.path().join("z")).unwrap().len(), 1);
    // strict parameters reject this regime
    let out = kextract(
        &[
            "--strict", "extract", "--x", "x", "--y", "y", "--sigma", "1/2", "--alpha", "1/8",
            "--bits", "12", "--out", "z",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn extract_cond_and_transform() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x"), vec![0x5A; 128]).unwrap();
    std::fs::write(dir.path().join("y"), vec![0xC3; 128]).unwrap();
    let out = kextract(
        &[
            "extract-cond",
            "--x",
            "x",
            "--y",
            "y",
            "--s",
            "512",
            "--alpha",
            "32",
            "--out",
            "z",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["bits"], 186);

    let out = kextract(
        &[
            "transform",
            "--x",
            "x",
            "--y",
            "rand:5",
            "--tau",
            "1/2",
            "--delta",
            "1/2",
            "--out-bits",
            "11",
            "--out",
            "t",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["last_block"], 4);
    assert_eq!(v["input_bits_read"], 60);

    // block 5 needs more input than a 16-bit file holds
    let out = kextract(
        &[
            "transform",
            "--x",
            "x",
            "--y",
            "y",
            "--bits",
            "16",
            "--tau",
            "1/2",
            "--delta",
            "1/2",
            "--out-bits",
            "12",
            "--out",
            "t",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let out = kextract(
        &[
            "transform",
            "--x",
            "rand:1",
            "--y",
            "rand:2",
            "--tau",
            "1/2",
            "--delta",
            "1/2",
            "--out-bits",
            "12",
            "--no-keyed",
            "--out",
            "t",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("kind=block_too_large"));
}

#[test]
fn experiment_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = kextract(
        &[
            "experiment",
            "--n",
            "12",
            "--sigma",
            "1/2",
            "--alpha",
            "0",
            "--trials",
            "50",
            "--csv",
            "e.csv",
            "--summary",
            "e.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert!(csv.starts_with("trial,seed,dep_planted,dep_hat,z_hex\n"));
    assert_eq!(csv.lines().count(), 51);
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(v["m_exp"], 8);
    assert_eq!(v["insufficient_sampling"], true);
}

#[test]
fn io_and_format_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = kextract(&["verify-table", "--table", "missing.btab"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    std::fs::write(
        dir.path().join("bad.btab"),
        b"not a table at all, really not one",
    )
    .unwrap();
    let out = kextract(&["verify-table", "--table", "bad.btab"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .starts_with("error kind=format"));
}

#[test]
fn gen_table_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = kextract(
        &[
            "gen-table",
            "--n-exp",
            "4",
            "--m-exp",
            "3",
            "--s-exp",
            "2",
            "--d-exp",
            "1",
            "--seed",
            "2",
            "--out",
            "t.btab",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let t = BalancedTable::load(dir.path().join("t.btab")).unwrap();
    assert_eq!(stdout_json(&out)["digest"], t.digest());
    assert_eq!(t.backend(), Backend::ExplicitRandom { seed: 2 });
    let out = kextract(
        &[
            "gen-table",
            "--n-exp",
            "20",
            "--m-exp",
            "3",
            "--s-exp",
            "2",
            "--d-exp",
            "1",
            "--out",
            "t.btab",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_documents_formats() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, needle) in [
        ("gen-table", "BTAB"),
        ("verify-table", "worst_ratio"),
        ("check-condition", "--d-exp"),
        ("extract", "most significant bit first"),
        ("extract-cond", "most significant bit first"),
        ("transform", "rand:SEED"),
        ("experiment", "z_hex"),
    ] {
        let out = kextract(&[cmd, "--help"], dir.path());
        assert_eq!(out.status.code(), Some(0), "{cmd}");
        assert!(
            String::from_utf8(out.stdout).unwrap().contains(needle),
            "{cmd} help lacks {needle}"
        );
    }
}
