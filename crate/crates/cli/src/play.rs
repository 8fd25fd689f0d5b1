use std::io::{BufRead, Write};
use std::path::PathBuf;

use gwdial::analysis::word_letter;
use gwdial::game::{new_episode, ppm, ImagePool, Speaker, Split};
use gwdial::trainer::{Checkpoint, NeuralPolicy, Policy, TurnInput, NO, YES};
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use crate::error::{io_err, runtime, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlayOptions {
    pub seed: u64,
    /// 1-based slot the human holds; asked interactively when absent.
    pub slot: Option<usize>,
    pub export: Option<PathBuf>,
    pub color: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlayOutcome {
    pub held: Vec<usize>,
    /// 0-based slot the human chose.
    pub slot: usize,
    pub questions: Vec<usize>,
    pub answers: Vec<usize>,
    pub guess: usize,
    pub reward: u8,
}

/// Terminal rendering: each cell is two spaces on a 24-bit background.
pub fn color_blocks(pool: &ImagePool, id: usize, cells: usize) -> String {
    let side = pool.side();
    let img = pool.image(id);
    let mut s = String::new();
    for r in 0..cells {
        for c in 0..cells {
            let (y0, y1) = (r * side / cells, ((r + 1) * side / cells).max(r * side / cells + 1));
            let (x0, x1) = (c * side / cells, ((c + 1) * side / cells).max(c * side / cells + 1));
            let mut acc = [0.0f32; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    for (k, a) in acc.iter_mut().enumerate() {
                        *a += img[(y * side + x) * 3 + k];
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f32;
            let px = acc.map(|v| ((v / n).clamp(0.0, 1.0) * 255.0).round() as u8);
            s.push_str(&format!("\x1b[48;2;{};{};{}m  ", px[0], px[1], px[2]));
        }
        s.push_str("\x1b[0m\n");
    }
    s
}

/// Reads one trimmed line; `None` at end of input.
fn read_line(input: &mut dyn BufRead) -> Result<Option<String>> {
    let mut line = String::new();
    let n = input.read_line(&mut line).map_err(runtime)?;
    Ok((n > 0).then(|| line.trim().to_string()))
}

fn prompt<T>(
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    text: &str,
    retry: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Option<T>> {
    loop {
        let _ = write!(out, "{text}");
        let _ = out.flush();
        let Some(line) = read_line(input)? else {
            let _ = writeln!(out, "\nInput ended; game aborted.");
            return Ok(None);
        };
        match parse(&line) {
            Some(v) => return Ok(Some(v)),
            None => {
                let _ = writeln!(out, "{retry}");
            }
        }
    }
}

fn parse_answer(s: &str) -> Option<usize> {
    match s.to_ascii_lowercase().as_str() {
        "y" | "yes" => Some(YES),
        "n" | "no" => Some(NO),
        _ => None,
    }
}

/// The human stands in for the answering agent. Returns `None` if input
/// ends before the game does.
pub fn play_session(
    ck: &Checkpoint,
    pool: &ImagePool,
    opts: &PlayOptions,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<Option<PlayOutcome>> {
    let n = ck.config.n_images;
    let mut rng = SplitMix64::seed_from_u64(opts.seed);
    let mut episode = new_episode(pool, n, &mut rng, Split::Eval).map_err(runtime)?;

    let _ = writeln!(out, "The asker holds {n} images:");
    for (k, &id) in episode.held.iter().enumerate() {
        let _ = writeln!(out, "slot {}: {}", k + 1, pool.name(id));
        if opts.color {
            let _ = write!(out, "{}", color_blocks(pool, id, 8));
        }
    }
    if let Some(dir) = &opts.export {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (k, &id) in episode.held.iter().enumerate() {
            let path = dir.join(format!("slot-{}.ppm", k + 1));
            ppm::write(&path, pool.side(), pool.side(), pool.image(id)).map_err(runtime)?;
        }
        let _ = writeln!(out, "Images written to {}", dir.display());
    }

    let slot = match opts.slot {
        Some(s) if (1..=n).contains(&s) => s - 1,
        Some(s) => return Err(crate::error::CliError::Usage(format!("slot {s} outside 1..={n}"))),
        None => {
            let text = format!("Pick the image you hold (1-{n}); the asker will not see it: ");
            match prompt(input, out, &text, "Please enter a slot number.", |s| {
                s.parse::<usize>().ok().filter(|v| (1..=n).contains(v))
            })? {
                Some(s) => s - 1,
                None => return Ok(None),
            }
        }
    };
    episode.target = slot;

    let mut asker = NeuralPolicy::new(&ck.asker);
    asker.reset(1).map_err(runtime)?;
    let episodes = std::slice::from_ref(&episode);
    let schedule = episode.schedule.clone();
    let (mut questions, mut answers) = (Vec::new(), Vec::new());
    let mut last_answer: Option<usize> = None;
    let mut guess = 0;
    for (t, &speaker) in schedule.speakers.iter().enumerate() {
        match speaker {
            Speaker::Answerer => {
                let q = *questions.last().expect("a question precedes every answer");
                let text = format!("Question {}: {}? (y/n) ", questions.len(), word_letter(q));
                match prompt(input, out, &text, "Please answer y or n.", parse_answer)? {
                    Some(a) => {
                        answers.push(a);
                        last_answer = Some(a);
                    }
                    None => return Ok(None),
                }
            }
            _ => {
                let words = last_answer.map(|a| vec![a]);
                let o = asker
                    .act(&TurnInput {
                        t,
                        speaker,
                        pool,
                        episodes,
                        incoming: words.as_deref(),
                    })
                    .map_err(runtime)?;
                if speaker == Speaker::Asker {
                    questions.push(o.words[0]);
                } else {
                    guess = o.actions[0];
                }
            }
        }
    }
    let reward = episode.score_guess(guess).map_err(runtime)?;
    let _ = writeln!(out, "The asker guesses slot {}.", guess + 1);
    if reward == 1 {
        let _ = writeln!(out, "Correct! Reward 1.");
    } else {
        let _ = writeln!(out, "Wrong, you held slot {}. Reward 0.", slot + 1);
    }
    Ok(Some(PlayOutcome {
        held: episode.held.clone(),
        slot,
        questions,
        answers,
        guess,
        reward,
    }))
}

/// Loads a checkpoint read-only and runs one game on stdin/stdout-like
/// streams. Images are exported beside the checkpoint unless `export` is set.
pub fn cmd_play(
    checkpoint: &std::path::Path,
    mut opts: PlayOptions,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<Option<PlayOutcome>> {
    let ck = Checkpoint::load(checkpoint).map_err(runtime)?;
    let pool = gwdial::trainer::build_pool(&ck.config).map_err(runtime)?;
    if opts.export.is_none() {
        let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
        let parent = checkpoint.parent().unwrap_or_else(|| std::path::Path::new("."));
        opts.export = Some(parent.join(format!("{stem}-play")));
    }
    play_session(&ck, &pool, &opts, input, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gwdial::game::generate_synthetic_pool;

    #[test]
    fn answers_accept_common_spellings() {
        assert_eq!(parse_answer("Y"), Some(YES));
        assert_eq!(parse_answer("no"), Some(NO));
        assert_eq!(parse_answer("x"), None);
        assert_eq!(parse_answer(""), None);
    }

    #[test]
    fn colour_blocks_have_one_cell_per_position() {
        let pool = generate_synthetic_pool(2, 0).unwrap();
        let s = color_blocks(&pool, 0, 4);
        assert_eq!(s.lines().count(), 4);
        assert_eq!(s.matches("\x1b[48;2;").count(), 16);
        assert!(s.lines().all(|l| l.ends_with("\x1b[0m")));
    }
}
