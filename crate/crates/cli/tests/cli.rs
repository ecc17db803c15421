use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn hkgm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hkgm"))
        .args(args)
        .output()
        .expect("spawn hkgm")
}

fn ok(args: &[&str]) -> Output {
    let out = hkgm(args);
    assert!(
        out.status.success(),
        "hkgm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Small phantom, mask and model shared by several tests.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let d = dir.path();
        ok(&[
            "phantom",
            "--nx",
            "16",
            "--ny",
            "16",
            "--nc",
            "2",
            "--out",
            &path(d, "k.kspc"),
        ]);
        ok(&[
            "mask",
            "--pattern",
            "poisson",
            "--R",
            "3",
            "--like",
            &path(d, "k.kspc"),
            "--out",
            &path(d, "m.mask"),
        ]);
        ok(&[
            "train",
            "--kspace",
            &path(d, "k.kspc"),
            "--window",
            "4",
            "--patch",
            "8",
            "--npatch",
            "6",
            "--epochs",
            "1",
            "--levels",
            "10",
            "--out",
            &path(d, "model.hkgm"),
        ]);
        Fixture { dir }
    }

    fn p(&self, name: &str) -> String {
        path(self.dir.path(), name)
    }

    fn recon_hkgm(&self, tag: &str) -> [PathBuf; 3] {
        let outs = [
            format!("{tag}.png"),
            format!("{tag}.kspc"),
            format!("{tag}.csv"),
        ];
        ok(&[
            "recon",
            "--method",
            "hkgm",
            "--kspace",
            &self.p("k.kspc"),
            "--mask",
            &self.p("m.mask"),
            "--model",
            &self.p("model.hkgm"),
            "--N",
            "4",
            "--window",
            "4",
            "--ref",
            &self.p("k.kspc"),
            "--trace",
            &self.p(&outs[2]),
            "--out",
            &self.p(&outs[0]),
            "--out-kspace",
            &self.p(&outs[1]),
        ]);
        outs.map(|o| self.dir.path().join(o))
    }
}

#[test]
fn reconstruction_is_reproducible() {
    let f = Fixture::new();
    let a = f.recon_hkgm("a");
    let b = f.recon_hkgm("b");
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(
            fs::read(x).unwrap(),
            fs::read(y).unwrap(),
            "{}",
            x.display()
        );
    }
    let csv = fs::read_to_string(&a[2]).unwrap();
    assert_eq!(csv.lines().next(), Some("iter,psnr,ssim,residual"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn eval_of_the_reference_hits_the_cap() {
    let f = Fixture::new();
    let out = ok(&["eval", "--recon", &f.p("k.kspc"), "--ref", &f.p("k.kspc")]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("method,pattern,R,window,thresh,npatch,psnr,ssim")
    );
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(fields[6].parse::<f64>().unwrap(), 99.0);
    assert!((fields[7].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn eval_appends_to_a_report() {
    let f = Fixture::new();
    ok(&[
        "recon",
        "--method",
        "zerofill",
        "--kspace",
        &f.p("k.kspc"),
        "--mask",
        &f.p("m.mask"),
        "--out",
        &f.p("zf.png"),
    ]);
    ok(&[
        "recon",
        "--method",
        "sake",
        "--kspace",
        &f.p("k.kspc"),
        "--mask",
        &f.p("m.mask"),
        "--window",
        "4",
        "--iters",
        "5",
        "--out",
        &f.p("sake.png"),
    ]);
    let report = f.p("report.csv");
    for (img, method) in [("zf.png", "zerofill"), ("sake.png", "sake")] {
        ok(&[
            "eval",
            "--recon",
            &f.p(img),
            "--ref",
            &f.p("k.kspc"),
            "--method",
            method,
            "--report",
            &report,
        ]);
    }
    let text = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("zerofill,") && lines[2].starts_with("sake,"));
}

#[test]
fn sweeps_emit_the_standard_grids() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let common = [
        "--nx", "16", "--ny", "16", "--nc", "2", "--N", "2", "--patch", "8", "--npatch", "4",
        "--epochs", "1",
    ];
    for (axis, stage, rows) in [
        ("window", "train", 3),
        ("window", "recon", 5),
        ("thresh", "recon", 5),
    ] {
        let report = path(d, &format!("{axis}-{stage}.csv"));
        let mut args = vec![
            "sweep", "--axis", axis, "--stage", stage, "--report", &report,
        ];
        args.extend_from_slice(&common);
        ok(&args);
        let text = fs::read_to_string(&report).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "method,pattern,R,window,thresh,npatch,psnr,ssim");
        assert_eq!(lines.len(), rows + 1, "{axis} {stage}");
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 8));
    }
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = TempDir::new().unwrap();
    let missing = path(dir.path(), "missing.kspc");
    let cases: Vec<Vec<&str>> = vec![
        vec![
            "recon", "--method", "zerofill", "--kspace", &missing, "--mask", &missing,
        ],
        vec![
            "mask",
            "--pattern",
            "poisson",
            "--R",
            "0.5",
            "--out",
            &missing,
        ],
        vec!["phantom", "--nx", "0", "--out", &missing],
        vec!["sweep", "--axis", "npatch", "--report", &missing],
    ];
    for args in cases {
        let out = hkgm(&args);
        assert!(!out.status.success(), "{args:?}");
        assert!(
            String::from_utf8_lossy(&out.stderr).contains("error"),
            "{args:?}"
        );
    }
    let f = Fixture::new();
    let out = hkgm(&[
        "recon",
        "--method",
        "hkgm",
        "--kspace",
        &f.p("k.kspc"),
        "--mask",
        &f.p("m.mask"),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
    fs::write(f.p("bad.hkgm"), b"HKGM junk").unwrap();
    let out = hkgm(&[
        "recon",
        "--method",
        "hkgm",
        "--kspace",
        &f.p("k.kspc"),
        "--mask",
        &f.p("m.mask"),
        "--model",
        &f.p("bad.hkgm"),
    ]);
    assert!(!out.status.success());
}

#[test]
fn thread_count_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_hkgm"))
        .args([
            "phantom",
            "--nx",
            "8",
            "--ny",
            "8",
            "--nc",
            "1",
            "--out",
            "/dev/null",
        ])
        .env("HKGM_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
}
