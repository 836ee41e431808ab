use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stegan_core::evalbench::{synthetic_cover, write_fixture_dataset};
use stegan_core::media::save_image;
use stegan_core::trainer::read_trace_csv;

fn stegan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stegan")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_error(o: &Output, code: i32, kind: &str) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error: {kind}: ")), "{err}");
}

fn cover(dir: &Path, name: &str, w: usize, h: usize) -> PathBuf {
    let p = dir.join(name);
    save_image(&synthetic_cover(w, h, 3, 3, 0).unwrap(), &p).unwrap();
    p
}

fn tiny_config(dir: &Path, dataset: &Path, extra: &str) -> PathBuf {
    let p = dir.join("train.cfg");
    let text = format!(
        "dataset = {}\ncrop = 16\nbatch = 2\nsteps = 1\ngen_width = 2\ndisc_width = 2\next_width = 2\nfeat_width = 2\n{extra}",
        dataset.display()
    );
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn lsb_and_dct_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let c = cover(dir.path(), "cover.png", 64, 48);
    let payload = dir.path().join("secret.bin");
    std::fs::write(&payload, b"meet me at the usual place").unwrap();
    for (method, extra) in [("lsb", ["--k", "1"]), ("lsb", ["--k", "3"]), ("dct", ["--delta", "12"])] {
        let stego = dir.path().join("stego.png");
        let back = dir.path().join("back.bin");
        let mut args = vec!["embed", "--cover", s(&c), "--payload", s(&payload), "--method", method, "--out", s(&stego)];
        args.extend(extra);
        let o = stegan(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        assert!(out.contains("capacity: ") && out.contains("psnr="), "{out}");
        let mut args = vec!["extract", "--stego", s(&stego), "--method", method, "--out", s(&back)];
        args.extend(extra);
        let o = stegan(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(std::fs::read(&back).unwrap(), std::fs::read(&payload).unwrap());
    }
}

#[test]
fn oversized_payload_exits_2_with_both_counts_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let c = cover(dir.path(), "cover.png", 8, 8);
    let payload = dir.path().join("big.bin");
    std::fs::write(&payload, vec![7u8; 100]).unwrap();
    let out = dir.path().join("stego.png");
    let o = stegan(&["embed", "--cover", s(&c), "--payload", s(&payload), "--out", s(&out)]);
    assert_error(&o, 2, "capacity");
    let err = stderr(&o);
    assert!(err.contains("832") && err.contains("192"), "{err}");
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn flag_errors_exit_4_before_io() {
    let o = stegan(&["embed", "--cover", "/nope.png", "--payload", "/nope", "--method", "gan", "--out", "/tmp/x.png"]);
    assert_error(&o, 4, "flags");
    let o = stegan(&["embed", "--cover", "/nope.png", "--payload", "/nope", "--k", "9", "--out", "/tmp/x.png"]);
    assert_error(&o, 4, "flags");
    let o = stegan(&["embed", "--cover", "/nope.png", "--payload", "/nope", "--method", "dct", "--k", "2", "--out", "/tmp/x.png"]);
    assert_error(&o, 4, "flags");
    let o = stegan(&["embed", "--cover", "/nope.png"]);
    assert_error(&o, 4, "flags");
    let o = stegan(&["frobnicate"]);
    assert_error(&o, 4, "flags");
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let payload = dir.path().join("p.bin");
    std::fs::write(&payload, b"x").unwrap();
    let o = stegan(&["embed", "--cover", s(&dir.path().join("none.png")), "--payload", s(&payload), "--out", s(&dir.path().join("o.png"))]);
    assert_error(&o, 3, "io");
    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    let o = stegan(&["metrics", s(&junk), s(&junk)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn metrics_of_identical_images() {
    let dir = tempfile::tempdir().unwrap();
    let c = cover(dir.path(), "a.png", 32, 32);
    let o = stegan(&["metrics", s(&c), s(&c)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "psnr=inf\nssim=1\nrmse=0\nmae=0\n");
    let d = cover(dir.path(), "b.png", 32, 24);
    assert_error(&stegan(&["metrics", s(&c), s(&d)]), 4, "dimension");
}

#[test]
fn train_smoke_resume_guard_and_gan_embed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture_dataset(&data, 3, 16, 16, 3, 1).unwrap();
    let cfg = tiny_config(dir.path(), &data, "");
    let out = dir.path().join("run");
    let o = stegan(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_trace_csv(out.join("trace.csv")).unwrap().len(), 1);
    let ck = out.join("final.sgf");
    assert!(ck.exists());

    let other = dir.path().join("other.cfg");
    std::fs::write(&other, std::fs::read_to_string(&cfg).unwrap() + "lambda_rec = 3\n").unwrap();
    let o = stegan(&["train", "--config", s(&other), "--resume", s(&ck), "--out", s(&dir.path().join("r2"))]);
    assert_error(&o, 4, "config_hash");
    assert!(stderr(&o).matches(|c: char| c.is_ascii_hexdigit()).count() >= 128);

    let c = cover(dir.path(), "cover.png", 24, 20);
    let payload = dir.path().join("p.bin");
    std::fs::write(&payload, b"hi").unwrap();
    let stego = dir.path().join("stego.png");
    let o = stegan(&["embed", "--cover", s(&c), "--payload", s(&payload), "--method", "gan", "--checkpoint", s(&ck), "--out", s(&stego)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = stegan(&["embed", "--cover", s(&c), "--payload", s(&payload), "--method", "gan", "--checkpoint", s(&ck), "--bpp", "2", "--out", s(&stego)]);
    assert_error(&o, 4, "flags");
}

#[test]
fn train_on_missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), &dir.path().join("absent"), "");
    let o = stegan(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_error(&o, 3, "io");
}

#[test]
fn evaluate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_fixture_dataset(&data, 3, 32, 32, 3, 2).unwrap();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = stegan(&["evaluate", "--dataset", s(&data), "--method", "lsb", "--method", "dct", "--k", "2", "--out", s(&out), "--seed", "9"]);
        assert!(o.status.success(), "{}", stderr(&o));
        reports.push((std::fs::read(out.join("report.csv")).unwrap(), std::fs::read(out.join("report.json")).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
    let csv = String::from_utf8(reports[0].0.clone()).unwrap();
    assert!(csv.contains("lsb(k=2)") && csv.contains("paper-reported, not reproduced"));

    let out = dir.path().join("c");
    let o = stegan(&["evaluate", "--dataset", s(&data), "--method", "lsb", "--format", "json", "--no-reference", "--out", s(&out)]);
    assert!(o.status.success());
    assert!(out.join("report.json").exists() && !out.join("report.csv").exists());
    let o = stegan(&["evaluate", "--dataset", s(&dir.path().join("none")), "--method", "lsb", "--out", s(&out)]);
    assert_error(&o, 3, "io");
}
