use std::path::Path;
use std::process::{Command, Output};

fn advmri(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advmri")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = advmri(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn single_step_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = d.to_str().unwrap();
    ok(&["phantom", "--ny", "48", "--nx", "48", "--nc", "4", "--out", out]);
    assert!(d.join("phantom.png").exists() && d.join("kspace.cfl").exists());
    assert!(ok(&["mask", "--ny", "48", "-r", "4", "--acs", "24", "--out", out]).contains("lines sampled"));

    let (k, m, coils) = (p(d, "kspace"), p(d, "mask.json"), p(d, "coils"));
    ok(&["maps", "--kspace", &k, "--mask", &m, "--out", out]);
    assert!(d.join("maps.cfl").exists());

    for method in ["cgsense", "cs"] {
        let sub = d.join(method);
        ok(&["recon", method, "--kspace", &k, "--mask", &m, "--maps", &coils, "--out", sub.to_str().unwrap()]);
        assert!(sub.join("recon.cfl").exists() && sub.join("recon.png").exists());
    }
    let g = d.join("grappa");
    ok(&["recon", "grappa", "--kspace", &k, "--mask", &m, "--out", g.to_str().unwrap()]);
    assert!(g.join("grappa_weights.toml").exists());

    let a = d.join("attack");
    let stdout = ok(&["attack", "--kspace", &k, "--mask", &m, "--maps", &coils, "--lift", "--out", a.to_str().unwrap()]);
    assert!(stdout.contains("epsilon"));
    assert!(a.join("fgsm.cfl").exists() && a.join("fgsm_kspace.cfl").exists() && a.join("random.json").exists());

    let l = d.join("lift");
    ok(&["lift", "--perturbation", &p(&a, "fgsm"), "--mask", &m, "--maps", &coils, "--out", l.to_str().unwrap()]);
    assert!(l.join("lift.cfl").exists());

    let ga = d.join("grappa_attacked");
    ok(&[
        "recon", "grappa", "--kspace", &k, "--mask", &m, "--kspace-perturbation", &p(&a, "fgsm_kspace"),
        "--out", ga.to_str().unwrap(),
    ]);
    let ca = d.join("cgsense_attacked");
    ok(&[
        "recon", "cgsense", "--kspace", &k, "--mask", &m, "--maps", &coils, "--perturbation", &p(&a, "fgsm"),
        "--out", ca.to_str().unwrap(),
    ]);
}

#[test]
fn train_then_unrolled_recon_and_attack() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = d.join("train.toml");
    std::fs::write(
        &cfg,
        "epochs = 3\nunrolls = 2\n[dataset]\nsamples = 1\nny = 32\nnx = 32\nnc = 4\nacs = 16\n",
    )
    .unwrap();
    let out = d.to_str().unwrap();
    assert!(ok(&["train", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", out]).contains("loss"));
    assert!(d.join("weights/manifest.json").exists());
    ok(&["phantom", "--ny", "32", "--nx", "32", "--nc", "4", "--out", out]);
    ok(&["mask", "--ny", "32", "--acs", "16", "--out", out]);
    let (k, m, coils, w) = (p(d, "kspace"), p(d, "mask.json"), p(d, "coils"), p(d, "weights"));
    let r = d.join("net");
    ok(&["recon", "unrolled", "--kspace", &k, "--mask", &m, "--maps", &coils, "--weights", &w, "--out", r.to_str().unwrap()]);
    let a = d.join("net_attack");
    let stdout = ok(&["attack", "--kspace", &k, "--mask", &m, "--maps", &coils, "--network", &w, "--out", a.to_str().unwrap()]);
    assert!(stdout.contains("d_dc"));
    assert!(a.join("unitwise.json").exists());
}

#[test]
fn experiment_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = d.join("exp.toml");
    std::fs::write(
        &cfg,
        r#"
name = "cli"
source = { kind = "shepp_logan", ny = 48, nx = 48 }
coils = { kind = "simulated", nc = 4 }

[[masks]]
acs = 24

[[recon]]
method = "cgsense"

[[recon]]
method = "grappa"
"#,
    )
    .unwrap();
    let out = d.join("run");
    let stdout = ok(&["experiment", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("grappa"));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(out.join("summary.json").exists());
    assert!(ok(&["report", "--out", out.to_str().unwrap()]).contains("cgsense"));
}

#[test]
fn failures_exit_nonzero_with_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let r = advmri(&["recon", "cgsense", "--kspace", "/no/such", "--mask", "/no/mask.json", "--out", out]);
    assert!(!r.status.success());
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.starts_with("error: recon"), "{err}");

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[[recon]]\nmethod = \"nope\"\n").unwrap();
    let r = advmri(&["experiment", "--config", bad.to_str().unwrap(), "--out", out]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("experiment"));

    assert!(!advmri(&["report", "--out", out]).status.success());
}
