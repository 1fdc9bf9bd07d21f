use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "image_size = 32\nepochs = 2\ntrain_samples = 8\nval_samples = 4\ntest_samples = 4\neval_every = 1\n";

fn spiralx(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spiralx"))
        .current_dir(dir)
        .env_remove("SPIRALX_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

fn config_line(path: &Path, key: &str) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .find(|l| l.starts_with(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing from {}", path.display()))
        .to_string()
}

#[test]
fn gen_data_writes_manifest_and_prints_its_path() {
    let ws = workspace();
    let out = spiralx(
        ws.path(),
        &["gen-data", "--config", "tiny.cfg", "--out", "data"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        stdout(&out).trim(),
        Path::new("data").join("manifest.csv").display().to_string()
    );
    let manifest = fs::read_to_string(ws.path().join("data/manifest.csv")).unwrap();
    assert!(manifest.lines().count() > 16);
    assert_eq!(
        config_line(&ws.path().join("data/config.cfg"), "seed"),
        "seed = 7"
    );

    let again = spiralx(
        ws.path(),
        &["gen-data", "--config", "tiny.cfg", "--out", "data2"],
    );
    assert_eq!(code(&again), 0);
    assert_eq!(
        manifest,
        fs::read_to_string(ws.path().join("data2/manifest.csv")).unwrap()
    );
}

#[test]
fn train_evaluate_and_robustness_share_a_checkpoint() {
    let ws = workspace();
    let gen = spiralx(
        ws.path(),
        &["gen-data", "--config", "tiny.cfg", "--out", "data"],
    );
    assert_eq!(code(&gen), 0);
    let train = spiralx(
        ws.path(),
        &[
            "train", "--config", "tiny.cfg", "--data", "data", "--out", "run",
        ],
    );
    assert_eq!(
        code(&train),
        0,
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    let run = ws.path().join("run");
    for f in [
        "config.cfg",
        "episodes.csv",
        "metrics_epoch.csv",
        "metrics.csv",
        "confusion.csv",
    ] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    assert!(run.join("checkpoint/model.spfm").is_file());
    assert_eq!(
        fs::read_to_string(run.join("episodes.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let eval = spiralx(
        ws.path(),
        &[
            "evaluate",
            "--checkpoint",
            "run/checkpoint",
            "--split",
            "test",
            "--out",
            "ev",
        ],
    );
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let csv = stdout(&eval);
    assert_eq!(csv.lines().next(), Some("metric,class,threshold,value"));
    let thresholds: Vec<&str> = csv
        .lines()
        .filter(|l| l.starts_with("ap_at,all,"))
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(thresholds.len(), 10, "{csv}");
    assert_eq!(thresholds.first(), Some(&"0.50"));
    assert_eq!(thresholds.last(), Some(&"0.95"));
    assert_eq!(
        csv,
        fs::read_to_string(ws.path().join("ev/metrics.csv")).unwrap()
    );
    assert!(ws.path().join("ev/confusion.csv").is_file());
    assert!(ws.path().join("ev/config.cfg").is_file());

    let rob = |out: &str| {
        spiralx(
            ws.path(),
            &[
                "robustness",
                "--checkpoint",
                "run/checkpoint",
                "--levels",
                "low,high",
                "--out",
                out,
            ],
        )
    };
    assert_eq!(code(&rob("rob")), 0);
    let files: Vec<String> = fs::read_dir(ws.path().join("rob"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("robustness_"))
        .collect();
    assert_eq!(files.len(), 8, "{files:?}");
    assert_eq!(code(&rob("rob2")), 0);
    let long = fs::read(ws.path().join("rob/robustness.csv")).unwrap();
    assert_eq!(
        long,
        fs::read(ws.path().join("rob2/robustness.csv")).unwrap()
    );
}

#[test]
fn evaluate_scores_trained_and_untrained_splits() {
    let ws = workspace();
    assert_eq!(
        code(&spiralx(
            ws.path(),
            &["train", "--config", "tiny.cfg", "--out", "run"]
        )),
        0
    );
    for split in ["train", "val", "test"] {
        let out = spiralx(
            ws.path(),
            &[
                "evaluate",
                "--checkpoint",
                "run/checkpoint",
                "--split",
                split,
            ],
        );
        assert_eq!(code(&out), 0, "{split}");
    }
    let bad = spiralx(
        ws.path(),
        &[
            "evaluate",
            "--checkpoint",
            "run/checkpoint",
            "--split",
            "holdout",
        ],
    );
    assert_eq!(code(&bad), 3);
}

#[test]
fn single_threaded_runs_are_byte_identical_and_threads_agree() {
    let ws = workspace();
    let train = |out: &str, threads: &str| {
        let o = spiralx(
            ws.path(),
            &[
                "train",
                "--config",
                "tiny.cfg",
                "--out",
                out,
                "--threads",
                threads,
            ],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    train("a", "1");
    train("b", "1");
    train("c", "4");
    for f in [
        "config.cfg",
        "episodes.csv",
        "metrics_epoch.csv",
        "metrics.csv",
        "confusion.csv",
        "checkpoint/model.spfm",
    ] {
        let a = fs::read(ws.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(ws.path().join("b").join(f)).unwrap(), "{f}");
        assert_eq!(
            a,
            fs::read(ws.path().join("c").join(f)).unwrap(),
            "{f} with 4 threads"
        );
    }
}

#[test]
fn rerunning_from_the_echoed_config_reproduces_the_run() {
    let ws = workspace();
    assert_eq!(
        code(&spiralx(
            ws.path(),
            &["train", "--config", "tiny.cfg", "--seed", "5", "--out", "a"]
        )),
        0
    );
    let echoed = ws.path().join("a/config.cfg").display().to_string();
    assert_eq!(
        code(&spiralx(
            ws.path(),
            &["train", "--config", &echoed, "--out", "b"]
        )),
        0
    );
    for f in ["config.cfg", "metrics.csv", "episodes.csv"] {
        assert_eq!(
            fs::read(ws.path().join("a").join(f)).unwrap(),
            fs::read(ws.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_comes_from_flag_then_environment_then_config() {
    let ws = workspace();
    let run = |env: Option<&str>, extra: &[&str], out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_spiralx"));
        cmd.current_dir(ws.path()).env_remove("SPIRALX_SEED");
        if let Some(v) = env {
            cmd.env("SPIRALX_SEED", v);
        }
        let mut args = vec!["gen-data", "--config", "tiny.cfg", "--out", out];
        args.extend_from_slice(extra);
        let o = cmd.args(&args).output().unwrap();
        (code(&o), ws.path().join(out).join("config.cfg"))
    };
    let (c, cfg) = run(None, &[], "plain");
    assert_eq!((c, config_line(&cfg, "seed")), (0, "seed = 7".into()));
    let (c, cfg) = run(Some("11"), &[], "env");
    assert_eq!((c, config_line(&cfg, "seed")), (0, "seed = 11".into()));
    let (c, cfg) = run(Some("11"), &["--seed", "9"], "flag");
    assert_eq!((c, config_line(&cfg, "seed")), (0, "seed = 9".into()));
    assert_eq!(run(Some("seven"), &[], "bad").0, 3);
}

#[test]
fn ablations_are_tagged_and_switch_components_off() {
    let ws = workspace();
    let stem = spiralx(
        ws.path(),
        &[
            "train", "--config", "tiny.cfg", "--ablate", "stem", "--out", "sb",
        ],
    );
    assert_eq!(code(&stem), 0);
    assert!(
        stdout(&stem).starts_with("DetectorX-SB:"),
        "{}",
        stdout(&stem)
    );
    assert_eq!(
        config_line(&ws.path().join("sb/config.cfg"), "stem_block"),
        "stem_block = off"
    );

    let spiral = spiralx(
        ws.path(),
        &[
            "train", "--config", "tiny.cfg", "--ablate", "spiral", "--out", "sp",
        ],
    );
    assert_eq!(code(&spiral), 0);
    assert!(
        stdout(&spiral).starts_with("DetectorX-SP:"),
        "{}",
        stdout(&spiral)
    );
    assert_eq!(
        config_line(&ws.path().join("sp/config.cfg"), "spiral_pool"),
        "spiral_pool = off"
    );

    let compare = spiralx(
        ws.path(),
        &["train", "--config", "tiny.cfg", "--compare", "--out", "cmp"],
    );
    assert_eq!(code(&compare), 0);
    let table = fs::read_to_string(ws.path().join("cmp/ablation.csv")).unwrap();
    let models: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(models, ["DetectorX", "DetectorX-SB", "DetectorX-SP"]);
    assert_eq!(
        table.lines().next(),
        Some("model,precision,recall,f1,ap,map,mar")
    );
}

#[test]
fn spiral_bench_reports_zero_allocations() {
    let ws = workspace();
    let out = spiralx(
        ws.path(),
        &[
            "spiral-bench",
            "--shapes",
            "1x1,8x8,3x17",
            "--min-time-ms",
            "2",
            "--out",
            "bench/spiral.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = stdout(&out);
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][..3], ["1", "1", "1"]);
    assert!(rows.iter().all(|r| r[6] == "0"), "{csv}");
    assert_eq!(
        csv,
        fs::read_to_string(ws.path().join("bench/spiral.csv")).unwrap()
    );

    assert_eq!(
        code(&spiralx(ws.path(), &["spiral-bench", "--shapes", "0x4"])),
        3
    );
    assert_eq!(
        code(&spiralx(ws.path(), &["spiral-bench", "--shapes", "wide"])),
        3
    );
}

#[test]
fn exit_codes_separate_input_and_numerical_failures() {
    let ws = workspace();
    assert_eq!(
        code(&spiralx(ws.path(), &["train", "--config", "absent.cfg"])),
        3
    );
    assert_eq!(
        code(&spiralx(
            ws.path(),
            &["train", "--config", "tiny.cfg", "--data", "nowhere"]
        )),
        3
    );
    assert_eq!(
        code(&spiralx(
            ws.path(),
            &["evaluate", "--checkpoint", "nowhere"]
        )),
        3
    );
    assert_eq!(code(&spiralx(ws.path(), &["frobnicate"])), 3);
    assert_eq!(code(&spiralx(ws.path(), &["--help"])), 0);

    fs::write(ws.path().join("typo.cfg"), "epochz = 3\n").unwrap();
    let typo = spiralx(ws.path(), &["train", "--config", "typo.cfg"]);
    assert_eq!(code(&typo), 3);
    assert!(String::from_utf8_lossy(&typo.stderr).contains("unknown key"));

    assert_eq!(
        code(&spiralx(
            ws.path(),
            &["train", "--config", "tiny.cfg", "--out", "run"]
        )),
        0
    );
    let bad_level = spiralx(
        ws.path(),
        &[
            "robustness",
            "--checkpoint",
            "run/checkpoint",
            "--levels",
            "severe",
            "--out",
            "r",
        ],
    );
    assert_eq!(code(&bad_level), 3);

    fs::write(
        ws.path().join("boom.cfg"),
        format!("{TINY}detector_lr = 1e30\npredictor_lr = 1e30\n"),
    )
    .unwrap();
    let boom = spiralx(
        ws.path(),
        &["train", "--config", "boom.cfg", "--out", "boom"],
    );
    assert_eq!(code(&boom), 2, "{}", String::from_utf8_lossy(&boom.stderr));
    assert!(String::from_utf8_lossy(&boom.stderr).contains("non-finite"));
}
