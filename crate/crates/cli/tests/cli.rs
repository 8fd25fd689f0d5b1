use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gwdial::trainer::{Trainer, TrainerConfig, METRICS_HEADER};
use gwdial_cli::analyze::{run_analysis, AnalyzeOptions};
use gwdial_cli::config::{parse_config, ConfigFlags, RunConfig, SigmaSetting};
use gwdial_cli::play::{cmd_play, PlayOptions};
use gwdial_cli::train::{cmd_resume, cmd_train, read_metrics, AGGREGATE_FILE, CHECKPOINT_FILE, METRICS_FILE};
use gwdial_cli::CliError;
use tempfile::TempDir;

fn tiny() -> TrainerConfig {
    TrainerConfig {
        epochs: 6,
        batch_size: 4,
        eval_every: 3,
        eval_episodes: 20,
        pool_count: 8,
        image_hidden: 8,
        embed_width: 8,
        gru_width: 16,
        head_hidden: 16,
        ..TrainerConfig::default()
    }
}

fn tiny_run(out: &Path) -> RunConfig {
    RunConfig {
        trainer: tiny(),
        out_dir: out.display().to_string(),
        ..RunConfig::default()
    }
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwdial"))
        .args(args)
        .env_remove("GWDIAL_SEED")
        .output()
        .unwrap()
}

fn trained_checkpoint(dir: &Path, cfg: TrainerConfig) -> PathBuf {
    let mut t = Trainer::new(cfg).unwrap();
    while !t.is_done() {
        t.train_epoch().unwrap();
    }
    let path = dir.join(CHECKPOINT_FILE);
    t.checkpoint().save(&path).unwrap();
    path
}

#[test]
fn defaults_without_file_or_flags() {
    let cfg = parse_config(None, &ConfigFlags::default(), None).unwrap();
    assert_eq!(cfg.trainer, TrainerConfig::default());
    assert_eq!(cfg.out_dir, "runs");
    assert!(cfg.sigma_grid.is_empty() && !cfg.ablation_grid);
}

#[test]
fn flags_beat_file_beats_env_default() {
    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("c.json");
    fs::write(&file, r#"{"epochs": 7, "learning_rate": 0.01, "sigma_grid": [0.5, "schedule"]}"#).unwrap();
    let flags = ConfigFlags {
        epochs: Some(9),
        ..Default::default()
    };
    let cfg = parse_config(Some(&file), &flags, Some(5)).unwrap();
    assert_eq!(cfg.trainer.epochs, 9);
    assert_eq!(cfg.trainer.learning_rate, 0.01);
    assert_eq!(cfg.trainer.seed, 5);
    assert_eq!(cfg.sigma_grid, vec![SigmaSetting::Constant(0.5), SigmaSetting::Schedule]);

    fs::write(&file, r#"{"seed": 11}"#).unwrap();
    assert_eq!(parse_config(Some(&file), &ConfigFlags::default(), Some(5)).unwrap().trainer.seed, 11);
    let flags = ConfigFlags {
        seed: Some(12),
        ..Default::default()
    };
    assert_eq!(parse_config(Some(&file), &flags, Some(5)).unwrap().trainer.seed, 12);
}

#[test]
fn bad_config_is_a_usage_error_naming_the_key() {
    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("c.json");
    for (text, key) in [
        (r#"{"sigmaa": 1.0}"#, "sigmaa"),
        (r#"{"epochs": "many"}"#, "epochs"),
        (r#"{"epsilon": 2.0}"#, "epsilon"),
        (r#"{"analyses": ["bogus"]}"#, "analyses"),
    ] {
        fs::write(&file, text).unwrap();
        match parse_config(Some(&file), &ConfigFlags::default(), None) {
            Err(CliError::Usage(msg)) => assert!(msg.contains(key), "{msg}"),
            other => panic!("{text}: {other:?}"),
        }
    }
    fs::write(&file, r#"{"sigma_grid": [1.0], "ablation_grid": true}"#).unwrap();
    assert!(matches!(
        parse_config(Some(&file), &ConfigFlags::default(), None),
        Err(CliError::Usage(_))
    ));
}

#[test]
fn two_seeds_write_two_runs_and_an_aggregate() {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig {
        seeds: vec![1, 2],
        ..tiny_run(tmp.path())
    };
    let runs = cmd_train(&cfg, &mut Vec::new()).unwrap();
    assert_eq!(runs.len(), 2);
    let a = read_metrics(&tmp.path().join("seed-1").join(METRICS_FILE)).unwrap();
    let b = read_metrics(&tmp.path().join("seed-2").join(METRICS_FILE)).unwrap();
    assert_eq!((a.len(), b.len()), (6, 6));
    assert!(tmp.path().join("seed-1").join(CHECKPOINT_FILE).exists());
    let agg = fs::read_to_string(tmp.path().join(AGGREGATE_FILE)).unwrap();
    let lines: Vec<&str> = agg.lines().collect();
    assert_eq!(lines.len(), 7);
    let cols: Vec<&str> = lines[3].split(',').collect();
    assert_eq!(cols[0], "2");
    assert_eq!(cols[1], "2");
    let mean = (a[2].train_loss + b[2].train_loss) / 2.0;
    let se = (a[2].train_loss - b[2].train_loss).abs() / 2.0;
    assert!((cols[3].parse::<f64>().unwrap() - mean).abs() < 1e-12);
    assert!((cols[4].parse::<f64>().unwrap() - se).abs() < 1e-12);
    let eval_mean = (a[2].eval_reward_mean.unwrap() + b[2].eval_reward_mean.unwrap()) / 2.0;
    assert!((cols[5].parse::<f64>().unwrap() - eval_mean).abs() < 1e-12);
    assert_eq!(lines[1].split(',').nth(5), Some(""));
}

#[test]
fn sigma_grid_gets_one_directory_per_setting() {
    let tmp = TempDir::new().unwrap();
    let grid = vec![
        SigmaSetting::Constant(0.0),
        SigmaSetting::Constant(0.5),
        SigmaSetting::Constant(1.0),
        SigmaSetting::Constant(2.0),
        SigmaSetting::Schedule,
    ];
    let cfg = RunConfig {
        sigma_grid: grid.clone(),
        trainer: TrainerConfig { epochs: 3, ..tiny() },
        ..tiny_run(tmp.path())
    };
    cmd_train(&cfg, &mut Vec::new()).unwrap();
    for s in grid {
        let rows = read_metrics(&tmp.path().join(s.label()).join("seed-0").join(METRICS_FILE)).unwrap();
        match s {
            SigmaSetting::Constant(v) => assert!(rows.iter().all(|r| r.sigma == v)),
            SigmaSetting::Schedule => {
                assert_eq!(rows[0].sigma, 0.1);
                assert_eq!(rows[2].sigma, 1.0);
            }
        }
    }
}

#[test]
fn resume_drops_rows_past_the_checkpoint_and_matches_a_straight_run() {
    let tmp = TempDir::new().unwrap();
    let straight = tmp.path().join("straight");
    cmd_train(&tiny_run(&straight), &mut Vec::new()).unwrap();

    let cut = tmp.path().join("cut");
    fs::create_dir_all(&cut).unwrap();
    let mut t = Trainer::new(tiny()).unwrap();
    let mut csv = format!("{METRICS_HEADER}\n");
    for _ in 0..3 {
        csv += &(t.train_epoch().unwrap().to_csv() + "\n");
    }
    t.checkpoint().save(&cut.join(CHECKPOINT_FILE)).unwrap();
    // rows written after the last checkpoint, as if the process died
    let mut extra = Trainer::resume(t.checkpoint(), t.pool().clone()).unwrap();
    csv += &(extra.train_epoch().unwrap().to_csv() + "\n");
    fs::write(cut.join(METRICS_FILE), csv).unwrap();

    cmd_resume(&cut.join(CHECKPOINT_FILE), &mut Vec::new()).unwrap();
    assert_eq!(
        fs::read(straight.join(METRICS_FILE)).unwrap(),
        fs::read(cut.join(METRICS_FILE)).unwrap()
    );
    assert_eq!(
        fs::read(straight.join(CHECKPOINT_FILE)).unwrap(),
        fs::read(cut.join(CHECKPOINT_FILE)).unwrap()
    );
}

#[test]
fn analyses_write_their_artifacts() {
    let tmp = TempDir::new().unwrap();
    let ck = trained_checkpoint(tmp.path(), TrainerConfig { epochs: 2, ..tiny() });
    let opts = AnalyzeOptions {
        count: 10,
        contexts: 10,
        perplexity: 2.0,
        ..Default::default()
    };
    let files = run_analysis(&ck, "partition", &opts, None, &mut Vec::new()).unwrap();
    assert_eq!(files, vec![tmp.path().join("answers.csv"), tmp.path().join("partition.json")]);
    let answers = fs::read_to_string(&files[0]).unwrap();
    assert!(answers.starts_with("image,A,B,C,D\n"));
    assert_eq!(answers.lines().count(), 9);
    let part: serde_json::Value = serde_json::from_str(&fs::read_to_string(&files[1]).unwrap()).unwrap();
    assert_eq!(part["contexts"].as_array().unwrap().len(), 4);
    let total: usize = part["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["images"].as_array().unwrap().len())
        .sum();
    assert_eq!(total, 8);

    let out = tmp.path().join("a");
    let files = run_analysis(&ck, "embed", &opts, Some(&out), &mut Vec::new()).unwrap();
    let emb = fs::read_to_string(&files[0]).unwrap();
    assert_eq!(emb.lines().count(), 9);
    let files = run_analysis(&ck, "protocols", &opts, Some(&out), &mut Vec::new()).unwrap();
    assert_eq!(fs::read_to_string(&files[0]).unwrap().lines().count(), 11);
    run_analysis(&ck, "distances", &opts, Some(&out), &mut Vec::new()).unwrap();

    // a single question round has no second-round words to compare
    assert!(matches!(
        run_analysis(&ck, "homograph", &opts, Some(&out), &mut Vec::new()),
        Err(CliError::Runtime(_))
    ));
    assert!(matches!(
        run_analysis(&ck, "nope", &opts, Some(&out), &mut Vec::new()),
        Err(CliError::Usage(_))
    ));

    let ck4 = trained_checkpoint(&out, TrainerConfig { epochs: 1, n_images: 4, ..tiny() });
    let files = run_analysis(&ck4, "homograph", &opts, Some(&out), &mut Vec::new()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&files[0]).unwrap()).unwrap();
    let rate = v["rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
}

fn play(ck: &Path, seed: u64, slot: Option<usize>, input: &str) -> (Option<gwdial_cli::play::PlayOutcome>, String) {
    let opts = PlayOptions {
        seed,
        slot,
        export: None,
        color: false,
    };
    let mut out = Vec::new();
    let r = cmd_play(ck, opts, &mut Cursor::new(input.as_bytes().to_vec()), &mut out).unwrap();
    (r, String::from_utf8(out).unwrap())
}

#[test]
fn play_reprompts_replays_and_leaves_the_checkpoint_alone() {
    let tmp = TempDir::new().unwrap();
    let ck = trained_checkpoint(tmp.path(), TrainerConfig { epochs: 1, n_images: 4, ..tiny() });
    let before = fs::read(&ck).unwrap();

    let script = "9\n2\nx\ny\nmaybe\nN\n";
    let (a, ta) = play(&ck, 3, None, script);
    let (b, tb) = play(&ck, 3, None, script);
    assert_eq!(ta, tb);
    assert_eq!(a, b);
    let a = a.unwrap();
    assert_eq!(a.slot, 1);
    assert_eq!(a.answers, vec![0, 1]);
    assert_eq!(a.questions.len(), 2);
    assert_eq!(a.reward, u8::from(a.guess == 1));
    assert_eq!(ta.matches("Please enter a slot number.").count(), 1);
    assert_eq!(ta.matches("Please answer y or n.").count(), 2);
    for k in 1..=4 {
        assert!(tmp.path().join("checkpoint-play").join(format!("slot-{k}.ppm")).exists());
    }

    let (c, tc) = play(&ck, 3, Some(2), "y\n");
    assert!(c.is_none());
    assert!(tc.contains("game aborted"));
    assert_eq!(fs::read(&ck).unwrap(), before);

    let opts = PlayOptions {
        seed: 0,
        slot: Some(7),
        export: None,
        color: false,
    };
    assert!(matches!(
        cmd_play(&ck, opts, &mut Cursor::new(Vec::new()), &mut Vec::new()),
        Err(CliError::Usage(_))
    ));
}

#[test]
fn bound_subcommand_prints_exact_values_and_csv() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("b.csv");
    let out = bin(&["bound", "--pool", "24", "--words", "2", "--held", "2,4", "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("41/46") && text.contains("1261/1771"));
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(
        rows,
        "pool,cells,held,exact,decimal,mc_mean,mc_stderr\n24,4,2,41/46,0.891304,,\n24,4,4,1261/1771,0.712027,,\n"
    );
}

#[test]
fn gendata_is_deterministic_and_bounded() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert!(bin(&["gendata", "--count", "24", "--seed", "4", "--out", d.to_str().unwrap()])
            .status
            .success());
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 25);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap());
    }
    let out = bin(&["gendata", "--count", "33", "--out", tmp.path().join("c").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&["--version"]).status.code(), Some(0));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    let file = tmp.path().join("c.json");
    fs::write(&file, r#"{"learning_rat": 1}"#).unwrap();
    let out = bin(&["train", "--config", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("learning_rat"));
    let out = bin(&["eval", "--checkpoint", tmp.path().join("none.gwd").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_gwdial"))
        .args(["train", "--epochs", "1", "--out-dir", tmp.path().join("r").to_str().unwrap()])
        .env("GWDIAL_SEED", "x")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
