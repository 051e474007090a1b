use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gpnn::graph_file::read_graph_file;
use gpnn::RunConfig;

const TINY: &str = r#"
task = "spatial-detection"
seed = 3

[model]
iterations = 2
link_widths = [6, 1]

[optim]
kind = "adam"
lr = 0.01
batch_size = 4
epochs = 3

[loss]
hinge_margin = 0.8

[data]
test_scenes = 6

[synth]
scenes = 10
node_dim = 5
edge_dim = 4
classes = 3

[ablation]
variants = ["full", "w/o graph"]
seeds = 2
"#;

fn gpnn(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gpnn"));
    cmd.args(args);
    match workers {
        Some(w) => cmd.env("GPNN_WORKERS", w),
        None => cmd.env_remove("GPNN_WORKERS"),
    };
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&gpnn(&["--help"], None)), 0);
    assert_eq!(code(&gpnn(&["--version"], None)), 0);
    assert_eq!(code(&gpnn(&[], None)), 1);
    assert_eq!(code(&gpnn(&["frobnicate"], None)), 1);
    assert_eq!(code(&gpnn(&["train"], None)), 1, "missing --out");
    assert_eq!(
        code(&gpnn(&["gen", "--out", "x", "--seed", "abc"], None)),
        1
    );
}

#[test]
fn every_subcommand_takes_config_seed_and_out() {
    for sub in [
        "gen",
        "train",
        "eval",
        "ablate",
        "gradcheck",
        "dump-adjacency",
    ] {
        let o = gpnn(&[sub, "--help"], None);
        assert_eq!(code(&o), 0);
        let help = String::from_utf8_lossy(&o.stdout);
        for flag in ["--config", "--seed", "--out"] {
            assert!(help.contains(flag), "{sub} lacks {flag}");
        }
    }
}

#[test]
fn runtime_errors_exit_two_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();

    let o = gpnn(
        &["train", "--config", "/nonexistent.toml", "--out", out],
        None,
    );
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: kind="), "{err}");

    let bad = write_config(dir.path(), "[model]\niterations = 0\n");
    let o = gpnn(&["train", "--config", &bad, "--out", out], None);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("error: kind=config"));

    let unknown = write_config(dir.path(), "[model]\nwidth = 3\n");
    assert_eq!(
        code(&gpnn(&["gen", "--config", &unknown, "--out", out], None)),
        2
    );

    let o = gpnn(
        &["eval", "--checkpoint", "/nonexistent.bin", "--out", out],
        None,
    );
    assert_eq!(code(&o), 2);

    let o = gpnn(&["gradcheck", "--out", out], Some("0"));
    assert_eq!(code(&o), 2);
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = gpnn(
        &[
            "train",
            "--config",
            &cfg,
            "--seed",
            "42",
            "--out",
            "unused",
            "--print-config",
        ],
        None,
    );
    assert_eq!(code(&o), 0);
    let printed = RunConfig::from_toml(&String::from_utf8(o.stdout).unwrap()).unwrap();
    let mut want = RunConfig::from_toml(TINY).unwrap();
    want.seed = 42;
    assert_eq!(printed, want);
    assert!(!Path::new("unused").exists());
}

#[test]
fn gen_train_eval_dump_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, TINY);
    let s = |p: &str| d.join(p).to_str().unwrap().to_string();

    let o = gpnn(
        &[
            "gen",
            "--config",
            &cfg,
            "--seed",
            "8",
            "--out",
            &s("data/train.bin"),
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let data = read_graph_file(d.join("data/train.bin")).unwrap();
    assert_eq!(data.scene_count(), 10);
    assert_eq!(data.spec.as_ref().unwrap().seed, 8);

    let o = gpnn(&["train", "--config", &cfg, "--out", &s("run")], Some("2"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    assert!(d.join("run/checkpoint.bin").is_file());
    assert_eq!(
        RunConfig::load(d.join("run/config.toml")).unwrap(),
        RunConfig::load(&cfg).unwrap()
    );

    let ckpt = s("run/checkpoint.bin");
    let o = gpnn(
        &[
            "eval",
            "--config",
            &cfg,
            "--checkpoint",
            &ckpt,
            "--out",
            &s("eval"),
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(d.join("eval/report.csv")).unwrap();
    assert!(report.starts_with("section,name,class,value\nsummary,primary,,"));
    assert!(report.contains("map,full,,"));
    let records = fs::read_to_string(d.join("eval/detections.csv")).unwrap();
    assert!(gpnn::eval::parse_records(&records).is_ok());

    let o = gpnn(
        &[
            "dump-adjacency",
            "--config",
            &cfg,
            "--checkpoint",
            &ckpt,
            "--scene",
            "2",
            "--out",
            &s("adj"),
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for stem in ["adjacency", "adjacency_s1", "adjacency_s2", "adjacency_gt"] {
        assert!(d.join(format!("adj/{stem}.csv")).is_file(), "{stem}");
        let pgm = fs::read(d.join(format!("adj/{stem}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n"));
    }
    let o = gpnn(
        &[
            "dump-adjacency",
            "--config",
            &cfg,
            "--checkpoint",
            &ckpt,
            "--scene",
            "999",
            "--out",
            &s("adj"),
        ],
        None,
    );
    assert_eq!(code(&o), 2);

    // A checkpoint trained on other widths is rejected.
    let other = write_config(d, &TINY.replace("node_dim = 5", "node_dim = 7"));
    let o = gpnn(
        &[
            "eval",
            "--config",
            &other,
            "--checkpoint",
            &ckpt,
            "--out",
            &s("eval2"),
        ],
        None,
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn training_output_is_independent_of_worker_count_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, TINY);
    let s = |p: &str| d.join(p).to_str().unwrap().to_string();

    assert_eq!(
        code(&gpnn(
            &["train", "--config", &cfg, "--out", &s("a")],
            Some("1")
        )),
        0
    );
    assert_eq!(
        code(&gpnn(
            &["train", "--config", &cfg, "--out", &s("b")],
            Some("3")
        )),
        0
    );
    let a = fs::read(d.join("a/metrics.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b/metrics.csv")).unwrap());
    assert_eq!(
        fs::read(d.join("a/checkpoint.bin")).unwrap(),
        fs::read(d.join("b/checkpoint.bin")).unwrap()
    );

    // Train one epoch, then resume to the configured three.
    let short = write_config(d, &TINY.replace("epochs = 3", "epochs = 1"));
    assert_eq!(
        code(&gpnn(
            &["train", "--config", &short, "--out", &s("c")],
            None
        )),
        0
    );
    let cfg = write_config(d, TINY);
    let o = gpnn(
        &[
            "train",
            "--config",
            &cfg,
            "--resume",
            &s("c/checkpoint.bin"),
            "--out",
            &s("c"),
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(d.join("c/metrics.csv")).unwrap(), a);
    assert_eq!(
        fs::read(d.join("c/checkpoint.bin")).unwrap(),
        fs::read(d.join("a/checkpoint.bin")).unwrap()
    );
}

#[test]
fn ablate_and_gradcheck_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, TINY);
    let out = d.join("abl.csv");
    let o = gpnn(
        &["ablate", "--config", &cfg, "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(&out).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), table);

    let out = d.join("grad.csv");
    let o = gpnn(
        &["gradcheck", "--seed", "5", "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.matches(" pass").count(), 2, "{stdout}");
    assert!(fs::read_to_string(&out)
        .unwrap()
        .starts_with("case,block,entries,max_abs_err,max_rel_err\n"));

    // An impossible tolerance fails the check with a runtime exit code.
    let strict = write_config(d, "[gradcheck]\ntolerance = 1e-14\n");
    let o = gpnn(
        &[
            "gradcheck",
            "--config",
            &strict,
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("error: kind=check"));
}
