use std::path::Path;
use std::process::{Command, Output};

fn kpuf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpuf"))
        .args(args)
        .current_dir(dir)
        .env("KPUF_THREADS", "2")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn encrypt_decrypt_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(kpuf(&["genpuf", "--seed", "5", "--out", "puf.csv"], d).status.success());
    assert!(d.join("puf.meta").exists());
    std::fs::write(d.join("pw.hex"), "0f".repeat(64)).unwrap();
    std::fs::write(d.join("msg.txt"), b"The quick brown fox jumps over the lazy dog.\n").unwrap();
    let o = kpuf(
        &["encrypt", "msg.txt", "--puf", "puf.csv", "--password-file", "pw.hex", "--out", "msg.kpuf"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = kpuf(
        &["decrypt", "msg.kpuf", "--puf", "puf.csv", "--password-file", "pw.hex", "--out", "back.txt"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(d.join("back.txt")).unwrap(), std::fs::read(d.join("msg.txt")).unwrap());

    // tampering is a domain error with a categorized message
    let mut ct = std::fs::read(d.join("msg.kpuf")).unwrap();
    let last = ct.len() - 1;
    ct[last] ^= 0x40;
    std::fs::write(d.join("bad.kpuf"), ct).unwrap();
    let o = kpuf(
        &["decrypt", "bad.kpuf", "--puf", "puf.csv", "--password-file", "pw.hex", "--out", "x"],
        d,
    );
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.starts_with("ERROR:tamper:") || e.starts_with("ERROR:decodability:"), "{e}");
}

#[test]
fn experiment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        let o = kpuf(&["experiment", "--runs", "100", "--chars", "240", "--seed", "3", "--out", out], d);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read_to_string(d.join("a/visits.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(d.join("b/visits.csv")).unwrap());
    assert_eq!(
        std::fs::read(d.join("a/histogram.csv")).unwrap(),
        std::fs::read(d.join("b/histogram.csv")).unwrap()
    );
    let records: Vec<&str> = a.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(records.len(), 102_400);
    let mut per_run = vec![0u32; 101];
    for l in records {
        let f: Vec<u32> = l.split(',').map(|x| x.parse().unwrap()).collect();
        per_run[f[0] as usize] += f[2];
    }
    assert!(per_run[1..].iter().all(|&s| s == 480));
}

#[test]
fn usage_and_domain_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = kpuf(&["experiment", "--no-such-flag"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("ERROR:usage:"));
    let o = kpuf(&["fit", "missing.csv"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR:io:"), "{}", stderr(&o));
    let o = kpuf(&["experiment", "--runs", "1", "--chars", "964", "--out", "x"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR:capacity:"), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_kpuf"))
        .arg("selftest")
        .env("KPUF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR:environment:"));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = kpuf(&["selftest"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn attack_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = kpuf(&["attack", "--runs", "5", "--seed", "2", "--out", "atk"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["baseline.csv", "protocol.csv", "report.txt"] {
        assert!(d.join("atk").join(f).exists());
    }
    let csv = std::fs::read_to_string(d.join("atk/baseline.csv")).unwrap();
    assert!(csv.starts_with("rank,symbol,count,decoded_as\n"));
}

#[test]
fn small_fit_compare_and_screen() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(kpuf(&["experiment", "--runs", "20", "--seed", "4", "--out", "exp"], d).status.success());
    let o = kpuf(&["fit", "exp/visits.csv", "--model", "none", "--iters", "6000", "--chains", "2", "--out", "post.csv"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let post = std::fs::read_to_string(d.join("post.csv")).unwrap();
    assert!(post.starts_with("param,median,lo95,hi95,lo80,hi80,rhat,ess\na_bar,"));
    let o = kpuf(&["fit", "exp/visits.csv", "--iters", "200"], d);
    assert_eq!(o.status.code(), Some(1));
    let o = kpuf(&["screen", "exp/visits.csv", "--model", "none"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR:domain:"));
}
