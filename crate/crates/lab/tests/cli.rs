mod common;

use std::path::Path;
use std::process::{Command, Output};

fn sparc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train_tiny(dir: &Path, method: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--method", method, "--name", method, "--deterministic"];
    for s in common::TINY.iter().chain(extra) {
        args.push("--set");
        args.push(s);
    }
    sparc(dir, &args)
}

#[test]
fn train_writes_the_run_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let o = train_tiny(tmp.path(), "sparc", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = tmp.path().join("runs/sparc/0");
    for f in ["manifest.toml", "train.jsonl", "telemetry.jsonl", "checkpoints/scores.jsonl", "checkpoints/selected.ckpt"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let ckpts = std::fs::read_dir(run.join("checkpoints"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("step_"))
        .count();
    assert!(ckpts >= 1);

    let again = train_tiny(tmp.path(), "sparc", &[]);
    assert_eq!(code(&again), 2, "{}", stderr(&again));
    assert!(stderr(&again).contains("--force"));
}

#[test]
fn manifest_reloads_as_the_same_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = train_tiny(tmp.path(), "oracle", &["run.seed=4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = std::fs::read_to_string(tmp.path().join("runs/oracle/4/manifest.toml")).unwrap();
    let o = sparc(
        tmp.path(),
        &["train", "--config", "runs/oracle/4/manifest.toml", "--out", "again"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let second = std::fs::read_to_string(tmp.path().join("again/oracle/4/manifest.toml")).unwrap();
    let strip = |s: &str| -> String {
        s.lines()
            .filter(|l| !l.starts_with("start_time_unix"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&first), strip(&second));
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let o = train_tiny(tmp.path(), "sparc", &["hyper.batch_size=0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hyper.batch_size"), "{}", stderr(&o));

    let o = train_tiny(tmp.path(), "sparc", &["hyper.no_such_key=1"]);
    assert_eq!(code(&o), 2);

    let o = train_tiny(tmp.path(), "not_a_method", &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_rejects_missing_checkpoints_and_withheld_context() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sparc(tmp.path(), &["eval", "--checkpoint", "nope.ckpt"]);
    assert_eq!(code(&o), 2);

    let o = train_tiny(tmp.path(), "oracle", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = sparc(
        tmp.path(),
        &["eval", "--checkpoint", "runs/oracle/0/checkpoints/selected.ckpt", "--withhold-context"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn eval_covers_the_full_grid_and_compare_is_antisymmetric() {
    let tmp = tempfile::tempdir().unwrap();
    let o = train_tiny(tmp.path(), "sparc", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = "runs/sparc/0/checkpoints/selected.ckpt";
    let o = sparc(tmp.path(), &["eval", "--checkpoint", ckpt, "--seeds", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let grid = tmp.path().join("runs/sparc/0/eval/selected/grid.csv");
    let text = std::fs::read_to_string(&grid).unwrap();
    assert_eq!(text.lines().count(), 1 + 21 * 21);
    assert!(tmp.path().join("runs/sparc/0/eval/selected/summary.json").is_file());

    let o = sparc(
        tmp.path(),
        &["eval", "--checkpoint", ckpt, "--seeds", "0", "--perturb-dynamics", "2"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let perturbed = tmp.path().join("runs/sparc/0/eval/selected_perturb_2/grid.csv");
    assert_ne!(text, std::fs::read_to_string(&perturbed).unwrap());

    let g = grid.to_str().unwrap();
    let p = perturbed.to_str().unwrap();
    let same = sparc(tmp.path(), &["compare", g, g]);
    assert_eq!(code(&same), 0, "{}", stderr(&same));
    let same = String::from_utf8(same.stdout).unwrap();
    for line in same.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let delta: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!(delta == 0.0 || delta.is_nan(), "{line}");
    }

    let ab = String::from_utf8(sparc(tmp.path(), &["compare", g, p]).stdout).unwrap();
    let ba = String::from_utf8(sparc(tmp.path(), &["compare", p, g]).stdout).unwrap();
    assert!(ab.contains(&sparc_lab::harness::sha256_hex(text.as_bytes())));
    let rows = |s: &str| -> Vec<f64> {
        s.lines()
            .filter(|l| !l.starts_with('#'))
            .skip(1)
            .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
            .collect()
    };
    for (x, y) in rows(&ab).iter().zip(rows(&ba)) {
        assert!((x + y).abs() < 1e-12 || (x.is_nan() && y.is_nan()));
    }

    std::fs::write(tmp.path().join("bad.csv"), "a,b\n1,2\n").unwrap();
    let o = sparc(tmp.path(), &["compare", g, "bad.csv"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn unknown_study_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sparc(tmp.path(), &["reproduce", "nonsense"]);
    assert_eq!(code(&o), 2);
}
