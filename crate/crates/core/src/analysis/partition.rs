use std::collections::BTreeMap;

use serde::Serialize;

use super::protocols::word_letter;
use super::{AnalysisError, Result};
use crate::game::{schedule_for, Episode, ImagePool, Speaker, Transcript};
use crate::trainer::{Policy, TurnInput, YES};

/// Answer given to each probe question, for every pool image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerMatrix {
    /// Probe labels, one per column (the question letter).
    pub contexts: Vec<String>,
    /// `rows[image][context]` is the answer word.
    pub rows: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionCell {
    /// Answer pattern, one `Y`/`N` per probe.
    pub answers: String,
    pub images: Vec<usize>,
}

impl AnswerMatrix {
    pub fn pattern(&self, image: usize) -> String {
        self.rows[image].iter().map(|&a| if a == YES { 'Y' } else { 'N' }).collect()
    }

    /// Images grouped by identical answer tuples, ordered by pattern.
    pub fn cells(&self) -> Vec<PartitionCell> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for i in 0..self.rows.len() {
            groups.entry(self.pattern(i)).or_default().push(i);
        }
        groups
            .into_iter()
            .map(|(answers, images)| PartitionCell { answers, images })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("image,{}\n", self.contexts.join(","));
        for i in 0..self.rows.len() {
            let cols: Vec<String> = self.pattern(i).chars().map(String::from).collect();
            s.push_str(&format!("{i},{}\n", cols.join(",")));
        }
        s
    }

    pub fn partition_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            contexts: &'a [String],
            cells: Vec<PartitionCell>,
        }
        serde_json::to_string_pretty(&Summary {
            contexts: &self.contexts,
            cells: self.cells(),
        })
        .expect("plain data serializes")
    }
}

/// Poses each question word as the opening question to the answerer
/// holding each pool image, from a fresh state.
pub fn answer_partition(answerer: &mut dyn Policy, pool: &ImagePool, ask_vocab: usize) -> Result<AnswerMatrix> {
    if pool.is_empty() || ask_vocab == 0 {
        return Err(AnalysisError::Shape("empty pool or vocabulary".into()));
    }
    let schedule = schedule_for(2)?;
    let probes: Vec<Episode> = (0..pool.len())
        .map(|id| Episode {
            held: vec![id],
            target: 0,
            schedule: schedule.clone(),
            transcript: Transcript::default(),
        })
        .collect();
    let mut rows = vec![Vec::with_capacity(ask_vocab); pool.len()];
    for w in 0..ask_vocab {
        answerer.reset(probes.len())?;
        let words = vec![w; probes.len()];
        let out = answerer.act(&TurnInput {
            t: 1,
            speaker: Speaker::Answerer,
            pool,
            episodes: &probes,
            incoming: Some(&words),
        })?;
        for (row, a) in rows.iter_mut().zip(out.words) {
            row.push(a);
        }
    }
    Ok(AnswerMatrix {
        contexts: (0..ask_vocab).map(word_letter).collect(),
        rows,
    })
}

/// Symmetric `N x N` dissimilarities with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = f(i, j);
            }
        }
        let d = Self { n, data };
        d.check()?;
        Ok(d)
    }

    fn check(&self) -> Result<()> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(AnalysisError::Shape(format!("nonzero diagonal at {i}")));
            }
            for j in 0..self.n {
                let v = self.get(i, j);
                if !v.is_finite() || v < 0.0 || v != self.get(j, i) {
                    return Err(AnalysisError::Shape(format!("entry ({i}, {j}) = {v} breaks symmetry or range")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,distance\n");
        for i in 0..self.n {
            for j in 0..self.n {
                s.push_str(&format!("{i},{j},{}\n", self.get(i, j)));
            }
        }
        s
    }
}

/// Fraction of probe contexts whose answers differ between two images.
pub fn distance_matrix(m: &AnswerMatrix) -> Result<DistanceMatrix> {
    let width = m.contexts.len();
    if width == 0 || m.rows.iter().any(|r| r.len() != width) {
        return Err(AnalysisError::Shape("answer matrix is incomplete".into()));
    }
    DistanceMatrix::from_fn(m.rows.len(), |i, j| {
        let differ = m.rows[i].iter().zip(&m.rows[j]).filter(|(a, b)| a != b).count();
        differ as f64 / width as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::NO;

    fn matrix(rows: Vec<Vec<usize>>) -> AnswerMatrix {
        AnswerMatrix {
            contexts: (0..rows[0].len()).map(word_letter).collect(),
            rows,
        }
    }

    #[test]
    fn three_by_two_distances() {
        let m = matrix(vec![vec![YES, YES], vec![YES, NO], vec![NO, NO]]);
        let d = distance_matrix(&m).unwrap();
        assert_eq!(d.get(0, 1), 0.5);
        assert_eq!(d.get(0, 2), 1.0);
        assert_eq!(d.get(1, 2), 0.5);
        for i in 0..3 {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(d.get(i, j), d.get(j, i));
                for k in 0..3 {
                    assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k));
                }
            }
        }
    }

    #[test]
    fn cells_group_identical_rows() {
        let m = matrix(vec![vec![YES, NO], vec![NO, NO], vec![YES, NO]]);
        let cells = m.cells();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0], PartitionCell { answers: "NN".into(), images: vec![1] });
        assert_eq!(cells[1].images, vec![0, 2]);
        assert!(m.partition_json().contains("\"YN\""));
        assert!(m.to_csv().starts_with("image,A,B\n0,Y,N\n"));
    }

    #[test]
    fn incomplete_matrix_is_rejected() {
        let m = AnswerMatrix {
            contexts: vec!["A".into(), "B".into()],
            rows: vec![vec![YES, NO], vec![YES]],
        };
        assert!(distance_matrix(&m).is_err());
    }
}
