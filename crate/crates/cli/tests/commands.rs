//! The `deepmap` binary, each run with its own in-process server.

use std::path::Path;
use std::process::{Command, Output};

fn deepmap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepmap"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = deepmap(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).expect("json output")
}

const MODEL: [&str; 6] = ["--shared", "16", "--epochs", "10", "--batch-size", "128"];

fn gen(dir: &Path, out: &str, seed: &str) {
    let summary = json(&ok(
        dir,
        &[
            "gen",
            "--rows",
            "2000",
            "--columns",
            "2",
            "--cardinality",
            "5",
            "--period",
            "16",
            "--seed",
            seed,
            "--out",
            out,
        ],
    ));
    assert_eq!(summary["rows"], 2000);
}

#[test]
fn gen_build_query_bench_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir, "rel.bin", "1");

    for (repr, out) in [("dm", "dm"), ("abc-z", "abc")] {
        let mut args = vec![
            "build",
            "--data",
            "rel.bin",
            "--repr",
            repr,
            "--partition-bytes",
            "4096",
            "--out",
            out,
        ];
        args.extend(MODEL);
        let summary = json(&ok(dir, &args));
        assert_eq!(summary["rows"], 2000);
    }

    std::fs::write(dir.join("keys.csv"), "id\n4\n1999\n2000\n").unwrap();
    let out = deepmap(
        dir,
        &[
            "query",
            "--store",
            "dm",
            "--keys-file",
            "keys.csv",
            "--verify",
            "rel.bin",
        ],
    );
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "id,found,c0,c1");
    assert!(lines[1].starts_with("4,true,v"));
    assert!(lines[2].starts_with("1999,true,v"));
    assert_eq!(lines[3], "2000,false,,");
    assert!(String::from_utf8_lossy(&out.stderr).contains("verified"));

    let random = ok(
        dir,
        &["query", "--store", "abc", "--random", "25", "--verify", "rel.bin"],
    );
    assert_eq!(random.lines().count(), 26);

    for store in ["dm", "abc"] {
        let report = format!("{store}.json");
        ok(
            dir,
            &[
                "bench",
                "--store",
                store,
                "--data",
                "rel.bin",
                "--batch-size",
                "100",
                "--batches",
                "2",
                "--repeats",
                "2",
                "--absent-fraction",
                "0.2",
                "--out",
                &report,
            ],
        );
        assert_eq!(json(&std::fs::read_to_string(dir.join(&report)).unwrap())["rows"], 2000);
    }
    let csv = ok(dir, &["report", "dm.json", "abc.json", "--format", "csv"]);
    assert!(csv.lines().count() >= 3, "{csv}");
    assert!(csv.contains("dm-z") && csv.contains("abc-z"));
    let table = ok(dir, &["report", "dm.json", "abc.json"]);
    assert!(table.contains("dm-z"));
}

#[test]
fn mutations_from_csv_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir, "rel.bin", "2");
    let mut args = vec!["build", "--data", "rel.bin", "--repr", "dm-l", "--out", "s"];
    args.extend(MODEL);
    ok(dir, &args);

    std::fs::write(dir.join("del.csv"), "id\n3\n").unwrap();
    std::fs::write(dir.join("ins.csv"), "c1,id,c0\nv0,3,fresh\n").unwrap();
    assert_eq!(
        json(&ok(dir, &["delete", "--store", "s", "--rows-file", "del.csv"]))["rows_total"],
        1999
    );
    assert_eq!(
        json(&ok(dir, &["insert", "--store", "s", "--rows-file", "ins.csv"]))["rows_total"],
        2000
    );
    assert_eq!(json(&ok(dir, &["compact", "--store", "s"]))["rows_total"], 2000);

    std::fs::write(dir.join("k.csv"), "id\n3\n").unwrap();
    let csv = ok(dir, &["query", "--store", "s", "--keys-file", "k.csv"]);
    assert_eq!(csv.lines().nth(1), Some("3,true,fresh,v0"));

    // Inserting an existing key fails without touching the store.
    let out = deepmap(dir, &["insert", "--store", "s", "--rows-file", "ins.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_mismatch_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir, "a.bin", "3");
    gen(dir, "b.bin", "4");
    ok(dir, &["build", "--data", "a.bin", "--repr", "ab", "--out", "s"]);
    let out = deepmap(dir, &["query", "--store", "s", "--random", "100", "--verify", "b.bin"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let out = deepmap(dir, &["query", "--store", "missing", "--random", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("deepmap.conf"),
        "# shared settings\nrows = 300\ncardinality = 3\nout = from-config.bin\nbudget-bytes = 1024\n",
    )
    .unwrap();
    let summary = json(&ok(dir, &["--config", "deepmap.conf", "gen", "--out", "flag.bin"]));
    assert_eq!(summary["rows"], 300);
    assert!(dir.join("flag.bin").exists() && !dir.join("from-config.bin").exists());

    let summary = json(&ok(dir, &["gen", "--rows", "7", "--config=deepmap.conf"]));
    assert_eq!(summary["rows"], 7);
    assert!(dir.join("from-config.bin").exists());

    std::fs::write(dir.join("bad.conf"), "no-such-flag = 1\n").unwrap();
    let out = deepmap(dir, &["--config", "bad.conf", "gen", "--rows", "1", "--out", "x.bin"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-flag"));
}

#[test]
fn remote_server_flag_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    // Nothing listens here, so the request must fail rather than fall back.
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let url = format!("http://127.0.0.1:{port}");
    let out = deepmap(tmp.path(), &["--server", &url, "gen", "--rows", "10", "--out", "r.bin"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("r.bin").exists());
}
