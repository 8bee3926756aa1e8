use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use meal::checkpoint::CheckpointBundle;
use meal::trainer::MetricsRecord;

pub const CONFIG: &str = r#"
name = "smoke"
output_dir = "runs/teacher"

[dataset]
kind = "synthetic"
val_samples_per_class = 10

[dataset.synthetic]
num_classes = 4
samples_per_class = 16
noise = 0.05
distractor_prob = 0.0

[model]
capacity_tier = "student-tiny"

[pretrain]
epochs = 2
batch_size = 16

[distill]
total_epochs = 3
lr_milestones = [2]
batch_size = 16
train_eval_samples = 32
init_mode = "hard-label-pretrained"

[ensemble]
teachers = ["runs/teacher/checkpoints/latest.json", "runs/teacher2/checkpoints/latest.json"]

[transfer]
epochs = 2
batch_size = 16
"#;

pub fn meal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meal"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn meal")
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = meal(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn metrics(path: &Path) -> Vec<MetricsRecord> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<MetricsRecord>(l).unwrap().without_timing())
        .collect()
}

fn csv_rows(path: &Path) -> usize {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let width = lines.next().expect("header").split(',').count();
    lines
        .map(|l| assert_eq!(l.split(',').count(), width, "{}: {l}", path.display()))
        .count()
}

/// Pretrain two teachers and a student init, distill, resume from epoch 1 in a
/// copy of the run, then evaluate, analyze and probe. Panics on any mismatch;
/// returns the wall time.
pub fn end_to_end(dir: &Path) -> Duration {
    let start = Instant::now();
    fs::write(dir.join("run.toml"), CONFIG).unwrap();
    let c = ["--config", "run.toml"];

    ok(dir, &["pretrain", c[0], c[1]]);
    ok(
        dir,
        &["pretrain", c[0], c[1], "--set", "output_dir=runs/teacher2", "--set", "model.seed=1"],
    );
    ok(
        dir,
        &["pretrain", c[0], c[1], "--set", "output_dir=runs/init", "--set", "model.seed=2"],
    );
    let refused = meal(dir, &["pretrain", c[0], c[1]]);
    assert!(!refused.status.success());
    assert_eq!(String::from_utf8_lossy(&refused.stderr).lines().count(), 1);

    let student = [
        "--set",
        "output_dir=runs/student",
        "--set",
        "student_init=\"runs/init/checkpoints/latest.json\"",
    ];
    let mut args = vec!["distill", c[0], c[1], "--deterministic"];
    args.extend(student);
    ok(dir, &args);

    let run = dir.join("runs/student");
    let full = metrics(&run.join("metrics.jsonl"));
    assert_eq!(full.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(full.iter().all(|r| r.loss_kl.is_some() && r.disc_accuracy.is_some()));
    for e in 0..=3 {
        assert!(run.join(format!("checkpoints/epoch-{e:04}.json")).is_file());
    }
    assert_eq!(csv_rows(&run.join("analysis/percentiles.csv")), 4);

    // resume from epoch 1 in a copy of the run
    let copy = dir.join("runs/resumed");
    fs::create_dir_all(copy.join("checkpoints")).unwrap();
    fs::create_dir_all(copy.join("analysis")).unwrap();
    for f in [
        "config.toml",
        "metrics.jsonl",
        "analysis/percentiles.csv",
        "checkpoints/epoch-0000.json",
        "checkpoints/epoch-0001.json",
    ] {
        fs::copy(run.join(f), copy.join(f)).unwrap();
    }
    fs::copy(run.join("checkpoints/epoch-0001.json"), copy.join("checkpoints/latest.json")).unwrap();
    let mut args = vec!["distill", c[0], c[1], "--resume", "--set", "output_dir=runs/resumed"];
    args.extend(&student[2..]);
    ok(dir, &args);
    assert_eq!(metrics(&copy.join("metrics.jsonl")), full);
    let a = CheckpointBundle::load(&run.join("checkpoints/latest.json")).unwrap();
    let b = CheckpointBundle::load(&copy.join("checkpoints/latest.json")).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.optimizer, b.optimizer);
    assert_eq!(a.discriminator, b.discriminator);
    assert_eq!(
        fs::read_to_string(run.join("analysis/percentiles.csv")).unwrap(),
        fs::read_to_string(copy.join("analysis/percentiles.csv")).unwrap()
    );

    let eval: serde_json::Value = serde_json::from_str(&ok(dir, &["eval", c[0], c[1], "--set", "output_dir=runs/student"])).unwrap();
    assert!(eval["top1"].as_f64().unwrap() >= 0.0);

    for sub in ["classwise", "supervision", "embeddings", "histogram", "percentiles"] {
        ok(dir, &["analyze", sub, "--run", "runs/student"]);
    }
    ok(dir, &["analyze", "compare", "--a", "runs/student", "--b", "runs/init"]);
    for f in [
        "classwise.csv",
        "pairs.csv",
        "supervision.csv",
        "embeddings.csv",
        "separability.csv",
        "histogram.csv",
        "compare.csv",
        "gaps.csv",
    ] {
        assert!(csv_rows(&run.join("analysis").join(f)) > 0, "{f}");
    }
    assert_eq!(csv_rows(&run.join("analysis/percentiles.csv")), 4);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("analysis/compare_summary.json")).unwrap()).unwrap();
    assert!(summary.is_object());

    ok(
        dir,
        &[
            "transfer",
            c[0],
            c[1],
            "--set",
            "output_dir=runs/probe",
            "--mode",
            "linear-probe",
            "--init",
            "runs/student/checkpoints/latest.json",
        ],
    );
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("runs/probe/analysis/transfer.json")).unwrap()).unwrap();
    assert!(t["final_score"].is_number());

    start.elapsed()
}
