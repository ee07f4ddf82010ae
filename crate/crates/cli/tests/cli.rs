use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn underfit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_underfit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL_SYNTH: &str = "seed = 3\nsamples_per_campaign = 60\n";
const QUICK_TRAIN: &str = "seed = 3\nbatch_size = 8\nbase_lr = 0.3\nwarmup_start_lr = 0.03\n\
max_grad_norm = 1.0\nmax_epochs = 1\n[model]\ninit_scale = 0.3\n";

fn dataset(dir: &Path) -> PathBuf {
    write(dir, "synth.toml", SMALL_SYNTH);
    let o = underfit(
        &["gen-data", "--config", "synth.toml", "--out", "data.jsonl"],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("data.jsonl")
}

#[test]
fn help_lists_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = underfit(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in [
        "gen-data",
        "train",
        "eval",
        "keywords",
        "lipschitz",
        "probe",
        "report",
        "--jobs",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn gen_data_is_deterministic_and_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let first = std::fs::read(dataset(dir.path())).unwrap();
    let o = underfit(
        &["gen-data", "--config", "synth.toml", "--out", "again.jsonl"],
        dir.path(),
    );
    assert!(
        stdout(&o).contains("3 campaigns, 180 samples, 2 classes"),
        "{}",
        stdout(&o)
    );
    assert_eq!(
        first,
        std::fs::read(dir.path().join("again.jsonl")).unwrap()
    );
}

#[test]
fn missing_seed_is_a_runtime_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.toml", "num_campaigns = 2\n");
    let o = underfit(
        &["gen-data", "--config", "bad.toml", "--out", "x.jsonl"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    assert!(!dir.path().join("x.jsonl").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(underfit(&["frobnicate"], dir.path()).status.code(), Some(1));
    let o = underfit(
        &[
            "train", "--data", "d.jsonl", "--config", "t.toml", "--mode", "bogus", "--out", "r",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for m in ["plain_ft", "mask_only", "smooth_only", "ufit"] {
        assert!(err.contains(m), "valid mode {m} not listed: {err}");
    }
}

#[test]
fn train_writes_artifacts_per_mode_and_inspection_commands_read_them() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d);
    write(d, "train.toml", QUICK_TRAIN);

    let o = underfit(
        &[
            "train",
            "--data",
            "data.jsonl",
            "--config",
            "train.toml",
            "--mode",
            "plain_ft",
            "--out",
            "plain",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpts = |run: &str| {
        let mut v: Vec<String> = std::fs::read_dir(d.join(run))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".ckpt"))
            .collect();
        v.sort();
        v
    };
    assert_eq!(ckpts("plain"), ["stage1.ckpt"]);

    let o = underfit(
        &[
            "train",
            "--data",
            "data.jsonl",
            "--config",
            "train.toml",
            "--mode",
            "ufit",
            "--out",
            "ufit",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(ckpts("ufit"), ["stage1.ckpt", "stage2.ckpt", "stage3.ckpt"]);
    for f in [
        "keywords.tsv",
        "proxies.json",
        "train_log.jsonl",
        "config.resolved.toml",
    ] {
        assert!(d.join("ufit").join(f).exists(), "{f}");
    }

    let o = underfit(&["keywords", "--run", "ufit", "--top", "10"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("proxy 0"));

    let o = underfit(&["probe", "--run", "ufit", "--data", "data.jsonl"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("masked"));

    let o = underfit(
        &[
            "lipschitz",
            "--run",
            "plain",
            "--data",
            "data.jsonl",
            "--train-data",
            "data.jsonl",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("L-score"));
}

#[test]
fn eval_writes_report_and_csv_and_report_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d);
    write(d, "train.toml", QUICK_TRAIN);
    let o = underfit(
        &[
            "--jobs",
            "2",
            "eval",
            "--data",
            "data.jsonl",
            "--config",
            "train.toml",
            "--protocol",
            "pairwise",
            "--runs",
            "3",
            "--modes",
            "plain_ft,ufit",
            "--out",
            "rep.json",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("rep.json")).unwrap()).unwrap();
    assert_eq!(json["protocol"], "pairwise");
    assert_eq!(json["seeds"].as_array().unwrap().len(), 3);
    assert_eq!(json["audit"]["violations"], 0);
    let csv = std::fs::read_to_string(d.join("rep.csv")).unwrap();
    assert!(csv.starts_with("mode,k,seed,split,accuracy\n"));

    let o = underfit(&["report", "--report", "rep.json"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("ufit"));
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = underfit(
        &["probe", "--run", "nowhere", "--data", "none.jsonl"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}
