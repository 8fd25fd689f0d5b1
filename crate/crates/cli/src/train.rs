use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use gwdial::trainer::{build_pool, Checkpoint, MetricsRow, Trainer, TrainerConfig, METRICS_HEADER};

use crate::analyze::{run_analysis, AnalyzeOptions};
use crate::config::{RunConfig, SigmaSetting};
use crate::error::{io_err, runtime, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.gwd";
pub const CONFIG_FILE: &str = "config.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const AGGREGATE_HEADER: &str =
    "epoch,runs,sigma,train_loss_mean,train_loss_stderr,eval_reward_mean,eval_reward_stderr";

/// One training run's location and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub seed: u64,
    pub arm: Option<String>,
    pub last: Option<MetricsRow>,
}

struct Arm {
    label: Option<String>,
    trainer: TrainerConfig,
}

fn arms(cfg: &RunConfig) -> Vec<Arm> {
    if !cfg.sigma_grid.is_empty() {
        return cfg
            .sigma_grid
            .iter()
            .map(|s| {
                let mut t = cfg.trainer.clone();
                if let SigmaSetting::Constant(v) = s {
                    t.sigma_start = *v;
                    t.sigma_end = *v;
                }
                Arm { label: Some(s.label()), trainer: t }
            })
            .collect();
    }
    if cfg.ablation_grid {
        return [false, true]
            .into_iter()
            .map(|on| Arm {
                label: Some(if on { "ablation-on" } else { "ablation-off" }.into()),
                trainer: TrainerConfig { zero_answerer_state: on, ..cfg.trainer.clone() },
            })
            .collect();
    }
    vec![Arm { label: None, trainer: cfg.trainer.clone() }]
}

fn append_line(f: &mut File, path: &Path, line: &str) -> Result<()> {
    // one write per row, so a file never ends mid-row
    f.write_all(format!("{line}\n").as_bytes()).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

fn single_run_config(base: &RunConfig, trainer: TrainerConfig, dir: &Path) -> RunConfig {
    RunConfig {
        trainer,
        out_dir: dir.display().to_string(),
        seeds: Vec::new(),
        sigma_grid: Vec::new(),
        ablation_grid: false,
        ..base.clone()
    }
}

fn drive(mut t: Trainer, dir: &Path, every: usize, metrics: &mut File, log: &mut dyn Write) -> Result<Option<MetricsRow>> {
    let mpath = dir.join(METRICS_FILE);
    let cpath = dir.join(CHECKPOINT_FILE);
    let mut last = None;
    while !t.is_done() {
        let row = t.train_epoch().map_err(runtime)?;
        append_line(metrics, &mpath, &row.to_csv())?;
        if let Some(m) = row.eval_reward_mean {
            let _ = writeln!(
                log,
                "{} epoch {} sigma {:.3} loss {:.5} eval {m:.4} ± {:.4}",
                dir.display(),
                row.epoch,
                row.sigma,
                row.train_loss,
                row.eval_reward_stderr.unwrap_or(0.0)
            );
        }
        if every > 0 && (row.epoch + 1) % every == 0 {
            t.checkpoint().save(&cpath).map_err(runtime)?;
        }
        last = Some(row);
    }
    t.checkpoint().save(&cpath).map_err(runtime)?;
    Ok(last)
}

/// Trains every (arm, seed) pair of the config into its own directory.
pub fn cmd_train(cfg: &RunConfig, log: &mut dyn Write) -> Result<Vec<RunOutcome>> {
    let base = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&base).map_err(io_err(&base))?;
    fs::write(base.join(CONFIG_FILE), cfg.to_json()).map_err(io_err(&base))?;
    let seeds = cfg.seed_list();
    let nested = seeds.len() > 1 || !cfg.sigma_grid.is_empty() || cfg.ablation_grid;
    let mut outcomes = Vec::new();
    for arm in arms(cfg) {
        let arm_dir = match &arm.label {
            Some(l) => base.join(l),
            None => base.clone(),
        };
        let mut arm_runs = Vec::new();
        for &seed in &seeds {
            let dir = if nested { arm_dir.join(format!("seed-{seed}")) } else { base.clone() };
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let trainer = TrainerConfig { seed, ..arm.trainer.clone() };
            let run_cfg = single_run_config(cfg, trainer.clone(), &dir);
            fs::write(dir.join(CONFIG_FILE), run_cfg.to_json()).map_err(io_err(&dir))?;
            let mpath = dir.join(METRICS_FILE);
            let mut metrics = File::create(&mpath).map_err(io_err(&mpath))?;
            append_line(&mut metrics, &mpath, METRICS_HEADER)?;
            let t = Trainer::new(trainer).map_err(runtime)?;
            let last = drive(t, &dir, cfg.checkpoint_every, &mut metrics, log)?;
            for which in &cfg.analyses {
                run_analysis(&dir.join(CHECKPOINT_FILE), which, &AnalyzeOptions::default(), Some(&dir), log)?;
            }
            arm_runs.push(dir.clone());
            outcomes.push(RunOutcome { dir, seed, arm: arm.label.clone(), last });
        }
        if arm_runs.len() > 1 {
            write_aggregate(&arm_runs, &arm_dir.join(AGGREGATE_FILE))?;
        }
    }
    Ok(outcomes)
}

/// Continues the run a checkpoint belongs to, in the checkpoint's directory.
/// Metric rows at or past the checkpoint's epoch are dropped first.
pub fn cmd_resume(checkpoint: &Path, log: &mut dyn Write) -> Result<RunOutcome> {
    let ck = Checkpoint::load(checkpoint).map_err(runtime)?;
    let dir = checkpoint.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let epoch = ck.epoch;
    let seed = ck.config.seed;
    let pool = build_pool(&ck.config).map_err(runtime)?;
    let t = Trainer::resume(ck, pool).map_err(runtime)?;
    let mpath = dir.join(METRICS_FILE);
    let kept: Vec<String> = match File::open(&mpath) {
        Ok(f) => BufReader::new(f)
            .lines()
            .skip(1)
            .map_while(|l| l.ok())
            .filter(|l| MetricsRow::parse(l).is_ok_and(|r| r.epoch < epoch))
            .collect(),
        Err(_) => Vec::new(),
    };
    let mut metrics = File::create(&mpath).map_err(io_err(&mpath))?;
    append_line(&mut metrics, &mpath, METRICS_HEADER)?;
    for l in &kept {
        append_line(&mut metrics, &mpath, l)?;
    }
    drop(metrics);
    let mut metrics = OpenOptions::new().append(true).open(&mpath).map_err(io_err(&mpath))?;
    let last = drive(t, &dir, 0, &mut metrics, log)?;
    Ok(RunOutcome { dir, seed, arm: None, last })
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(runtime(format!("{}: missing metrics header", path.display())));
    }
    lines.map(|l| MetricsRow::parse(l).map_err(runtime)).collect()
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-epoch mean and standard error across runs.
pub fn write_aggregate(runs: &[PathBuf], out: &Path) -> Result<()> {
    let all = runs
        .iter()
        .map(|d| read_metrics(&d.join(METRICS_FILE)))
        .collect::<Result<Vec<_>>>()?;
    let epochs = all.iter().map(Vec::len).min().unwrap_or(0);
    let mut s = format!("{AGGREGATE_HEADER}\n");
    for e in 0..epochs {
        let rows: Vec<&MetricsRow> = all.iter().map(|r| &r[e]).collect();
        let (lm, ls) = mean_se(&rows.iter().map(|r| r.train_loss).collect::<Vec<_>>());
        let evals: Option<Vec<f64>> = rows.iter().map(|r| r.eval_reward_mean).collect();
        let (em, es) = match evals {
            Some(v) => {
                let (m, se) = mean_se(&v);
                (m.to_string(), se.to_string())
            }
            None => (String::new(), String::new()),
        };
        s.push_str(&format!("{},{},{},{lm},{ls},{em},{es}\n", rows[0].epoch, rows.len(), rows[0].sigma));
    }
    fs::write(out, s).map_err(io_err(out))
}
