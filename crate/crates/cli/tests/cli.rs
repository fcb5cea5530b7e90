use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_respscreen"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, n_dev: &str, n_test: &str) -> PathBuf {
    let o = run(&[
        "synth", "--seed", "5", "--n_dev", n_dev, "--n_test", n_test, "--positive_rate", "0.3", "--out",
        p(dir),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = PathBuf::from(stdout(&o).trim());
    assert!(manifest.exists());
    manifest
}

const FAST: &[&str] = &["--num_iterations", "60", "--early_stopping_rounds", "20", "--ci_runs", "0"];

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["run", "--no-such-flag", "x"])), 1);
    assert_eq!(code(&run(&["run", "--rho", "abc"])), 1);
    assert_eq!(code(&run(&["features", "--manifest", "m.csv", "--frontend", "fft", "--out", "x"])), 1);
    assert_eq!(code(&run(&["sweep", "--manifest", "m", "--out_dir", "o", "--m_grid", "2,x"])), 1);
}

#[test]
fn help_and_version_exit_0() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    for sub in ["synth", "features", "embed", "import-embeddings", "run", "sweep", "evaluate"] {
        assert!(stdout(&o).contains(sub), "{sub} missing from help");
    }
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn every_config_key_is_a_flag() {
    let help = stdout(&run(&["run", "--help"]));
    for k in respscreen_core::pipeline::CONFIG_KEYS {
        assert!(help.contains(&format!("--{k} ")), "--{k} missing");
    }
}

#[test]
fn data_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&["run", "--manifest", p(&missing), "--out_dir", p(&out)])), 2);

    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "rho = 2.5\n").unwrap();
    let o = run(&["run", "--config", p(&cfg)]);
    assert_eq!(code(&o), 2);

    let emb = tmp.path().join("bad.csv");
    fs::write(&emb, "subject_id,modality,source,dim,v0\ns1,cough,x,1,notanumber\n").unwrap();
    let manifest = tmp.path().join("m.csv");
    fs::write(&manifest, "subject_id,modality,path,label,split\n").unwrap();
    let o = run(&["import-embeddings", "--manifest", p(&manifest), "--out_dir", p(&out), p(&emb)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn features_then_rerun_skips() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("corpus"), "2", "1");
    let dumps = tmp.path().join("dumps");
    let o = run(&["features", "--manifest", p(&manifest), "--frontend", "gammatone", "--out", p(&dumps)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("written=9 skipped=0 failed=0"), "{}", stdout(&o));
    let o = run(&["features", "--manifest", p(&manifest), "--frontend", "gammatone", "--out", p(&dumps)]);
    assert!(stdout(&o).contains("written=0 skipped=9 failed=0"), "{}", stdout(&o));
}

#[test]
fn config_file_run_with_flag_override_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("corpus"), "24", "12");
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "# desk run\ntrack = cough\nrho = 0.1\nseed = 3\nmanifest = {}\nout_dir = out\n",
            manifest.display()
        ),
    )
    .unwrap();
    let mut args = vec!["run", "--config", p(&cfg), "--rho", "0.25", "--oversample_m", "2"];
    args.extend_from_slice(FAST);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("rho=0.25\n"), "{text}");
    assert!(text.contains("oversample_m=2\n"));
    assert!(text.contains("track=cough\n"));

    let out = tmp.path().join("out");
    for f in ["report.json", "report.txt", "model.txt", "mask_cough.csv", "predictions.csv", "repro.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"auc\""));

    let preds = out.join("predictions.csv");
    let json = tmp.path().join("eval.json");
    let o = run(&["evaluate", "--predictions", p(&preds), "--ci_runs", "0", "--out", p(&json)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("auc="));
    // Scores saved by the run give back the run's own AUC.
    let line = |s: &str| s.lines().find(|l| l.trim_start().starts_with("\"auc\"")).map(str::to_string);
    assert_eq!(line(&fs::read_to_string(&json).unwrap()), line(&report));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("corpus"), "24", "12");
    let out = tmp.path().join("sweep");
    let mut args = vec![
        "sweep", "--manifest", p(&manifest), "--out_dir", p(&out), "--track", "breathing", "--rho_grid", "0,0.5",
        "--m_grid", "none,2",
    ];
    args.extend_from_slice(FAST);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}
