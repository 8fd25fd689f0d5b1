use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gwdial::analysis::{
    answer_partition, distance_matrix, homograph_rate, record_protocols, tsne_embed, ProtocolRecord, TsneParams,
};
use gwdial::trainer::{build_pool, Checkpoint, NeuralPolicy};
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use crate::config::ANALYSES;
use crate::error::{io_err, runtime, CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOptions {
    pub count: usize,
    pub contexts: usize,
    pub seed: u64,
    pub perplexity: f64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            count: 100,
            contexts: 1000,
            seed: 0,
            perplexity: TsneParams::default().perplexity,
        }
    }
}

fn write(path: PathBuf, text: String, out: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).map_err(io_err(&path))?;
    out.push(path);
    Ok(())
}

/// Runs one analysis on a checkpoint and writes its artifacts into `out`
/// (default: beside the checkpoint). Returns the files written.
pub fn run_analysis(
    checkpoint: &Path,
    which: &str,
    opts: &AnalyzeOptions,
    out: Option<&Path>,
    log: &mut dyn Write,
) -> Result<Vec<PathBuf>> {
    if !ANALYSES.contains(&which) {
        return Err(CliError::Usage(format!("unknown analysis {which:?}; one of {}", ANALYSES.join(", "))));
    }
    let ck = Checkpoint::load(checkpoint).map_err(runtime)?;
    let pool = build_pool(&ck.config).map_err(runtime)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| checkpoint.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let zero = ck.config.zero_answerer_state;
    let mut rng = SplitMix64::seed_from_u64(opts.seed);
    let mut written = Vec::new();
    match which {
        "protocols" => {
            let recs = record_protocols(
                &mut NeuralPolicy::new(&ck.asker),
                &mut NeuralPolicy::new(&ck.answerer).with_zero_state(zero),
                &pool,
                ck.config.n_images,
                opts.count,
                &mut rng,
            )
            .map_err(runtime)?;
            let mut s = format!("{}\n", ProtocolRecord::CSV_HEADER);
            for r in &recs {
                s.push_str(&r.to_csv());
                s.push('\n');
            }
            let wins = recs.iter().filter(|r| r.reward == 1).count();
            let _ = writeln!(log, "protocols: {} games, {wins} won", recs.len());
            write(dir.join("protocols.csv"), s, &mut written)?;
        }
        "partition" | "distances" | "embed" => {
            let m = answer_partition(&mut NeuralPolicy::new(&ck.answerer), &pool, ck.config.ask_vocab).map_err(runtime)?;
            match which {
                "partition" => {
                    let _ = writeln!(log, "partition: {} cells", m.cells().len());
                    write(dir.join("answers.csv"), m.to_csv(), &mut written)?;
                    write(dir.join("partition.json"), m.partition_json() + "\n", &mut written)?;
                }
                "distances" => {
                    let d = distance_matrix(&m).map_err(runtime)?;
                    write(dir.join("distances.csv"), d.to_csv(), &mut written)?;
                }
                _ => {
                    let d = distance_matrix(&m).map_err(runtime)?;
                    let params = TsneParams { perplexity: opts.perplexity, ..Default::default() };
                    let e = tsne_embed(&d, params, &mut rng).map_err(runtime)?;
                    let _ = writeln!(
                        log,
                        "embed: KL {:.4} -> {:.4} ({} saturated rows)",
                        e.initial_kl, e.final_kl, e.saturated_rows
                    );
                    write(dir.join("embedding.csv"), e.to_csv(), &mut written)?;
                }
            }
        }
        _ => {
            let rate = homograph_rate(&mut NeuralPolicy::new(&ck.asker), &pool, ck.config.n_images, opts.contexts, &mut rng)
                .map_err(runtime)?;
            let _ = writeln!(log, "homograph rate: {rate}");
            let json = serde_json::json!({ "contexts": opts.contexts, "rate": rate });
            write(dir.join("homograph.json"), format!("{json:#}\n"), &mut written)?;
        }
    }
    Ok(written)
}
