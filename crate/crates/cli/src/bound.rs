use std::io::Write;
use std::path::Path;

use gwdial::bounds::{cells_from_vocab, exact_bound, monte_carlo_bound, BoundQuery};
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub query: BoundQuery,
    pub exact: String,
    pub decimal: String,
    pub monte_carlo: Option<(f64, f64)>,
}

pub const BOUND_HEADER: &str = "pool,cells,held,exact,decimal,mc_mean,mc_stderr";

impl BoundRow {
    pub fn to_csv(&self) -> String {
        let (m, s) = self
            .monte_carlo
            .map(|(m, s)| (m.to_string(), s.to_string()))
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{m},{s}",
            self.query.pool, self.query.cells, self.query.held, self.exact, self.decimal
        )
    }
}

/// Every combination of `cells x held`, optionally with a simulated column.
pub fn cmd_bound(pool: u64, cells: &[u64], held: &[u64], verify: Option<u64>, seed: u64) -> Result<Vec<BoundRow>> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &k in cells {
        for &n in held {
            let q = BoundQuery::new(pool, k, n).map_err(|e| CliError::Usage(e.to_string()))?;
            let r = exact_bound(q).map_err(|e| CliError::Usage(e.to_string()))?;
            let monte_carlo = match verify {
                Some(trials) => {
                    let mc = monte_carlo_bound(q, trials, &mut rng).map_err(|e| CliError::Usage(e.to_string()))?;
                    Some((mc.mean, mc.stderr))
                }
                None => None,
            };
            rows.push(BoundRow {
                query: q,
                exact: r.to_string(),
                decimal: r.decimal(6),
                monte_carlo,
            });
        }
    }
    Ok(rows)
}

pub fn cells_for(words: &[u32]) -> Vec<u64> {
    words.iter().map(|&w| cells_from_vocab(w)).collect()
}

pub fn print_table(rows: &[BoundRow], out: &mut dyn Write) {
    let verify = rows.iter().any(|r| r.monte_carlo.is_some());
    let _ = write!(out, "{:>6} {:>6} {:>5}  {:>14}  {:>9}", "pool", "cells", "held", "exact", "decimal");
    let _ = writeln!(out, "{}", if verify { "  monte-carlo" } else { "" });
    for r in rows {
        let _ = write!(
            out,
            "{:>6} {:>6} {:>5}  {:>14}  {:>9}",
            r.query.pool, r.query.cells, r.query.held, r.exact, r.decimal
        );
        match r.monte_carlo {
            Some((m, s)) => {
                let _ = writeln!(out, "  {m:.6} ± {s:.6}");
            }
            None => {
                let _ = writeln!(out);
            }
        }
    }
}

pub fn write_csv(rows: &[BoundRow], path: &Path) -> Result<()> {
    let mut s = format!("{BOUND_HEADER}\n");
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    std::fs::write(path, s).map_err(io_err(path))
}
