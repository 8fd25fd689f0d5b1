use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use super::{CheckpointError, Result, TrainError, TrainerConfig};
use crate::agent::{build_agent, AgentModel, Role};
use crate::tensor::optim::RmsProp;

pub const MAGIC: &[u8; 4] = b"GWD1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: TrainerConfig,
    image_pixels: usize,
    epoch: usize,
    rng: SplitMix64,
    tensors: Vec<TensorEntry>,
}

/// Complete training state: enough to resume a run bit-exactly.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainerConfig,
    pub image_pixels: usize,
    /// Next epoch to run.
    pub epoch: usize,
    pub rng: SplitMix64,
    pub asker: AgentModel<f32>,
    pub answerer: AgentModel<f32>,
    pub target_asker: AgentModel<f32>,
    pub target_answerer: AgentModel<f32>,
    pub opt_asker: RmsProp<f32>,
    pub opt_answerer: RmsProp<f32>,
}

/// Fresh models with the layout `config` implies. Values are placeholders.
pub fn skeleton(config: &TrainerConfig, image_pixels: usize) -> Result<(AgentModel<f32>, AgentModel<f32>)> {
    let mut rng = SplitMix64::seed_from_u64(0);
    let a = build_agent(
        Role::Asker,
        config.n_images,
        image_pixels,
        config.ask_vocab,
        config.answer_vocab,
        config.arch(),
        &mut rng,
    )?;
    let b = build_agent(
        Role::Answerer,
        config.n_images,
        image_pixels,
        config.ask_vocab,
        config.answer_vocab,
        config.arch(),
        &mut rng,
    )?;
    Ok((a, b))
}

type Block<'a> = (String, Vec<usize>, &'a [f32]);

impl Checkpoint {
    fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = Vec::new();
        for (prefix, model) in [
            ("asker", &self.asker),
            ("answerer", &self.answerer),
            ("target_asker", &self.target_asker),
            ("target_answerer", &self.target_answerer),
        ] {
            for e in model.store().entries() {
                out.push((format!("{prefix}/{}", e.name), e.tensor.shape().to_vec(), e.tensor.data()));
            }
        }
        for (prefix, model, opt) in [
            ("opt_asker", &self.asker, &self.opt_asker),
            ("opt_answerer", &self.answerer, &self.opt_answerer),
        ] {
            for (e, acc) in model.store().entries().iter().zip(opt.accumulators()) {
                if e.trainable {
                    out.push((format!("{prefix}/{}", e.name), e.tensor.shape().to_vec(), acc.as_slice()));
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let blocks = self.blocks();
        let mut tensors = Vec::with_capacity(blocks.len());
        let mut offset = 0;
        for (name, shape, data) in &blocks {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
            });
            offset += data.len() * 4;
        }
        let header = Header {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            image_pixels: self.image_pixels,
            epoch: self.epoch,
            rng: self.rng.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut out = Vec::with_capacity(8 + json.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data) in &blocks {
            for v in *data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(CheckpointError::Truncated.into());
        }
        if &bytes[..4] != MAGIC {
            if &bytes[..3] == b"GWD" {
                return Err(CheckpointError::Version(format!("magic {:?}", String::from_utf8_lossy(&bytes[..4]))).into());
            }
            return Err(CheckpointError::NotACheckpoint.into());
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let payload_start = 8 + hlen;
        if bytes.len() < payload_start {
            return Err(CheckpointError::Truncated.into());
        }
        let header: Header = serde_json::from_slice(&bytes[8..payload_start]).map_err(|e| {
            if e.is_eof() {
                CheckpointError::Truncated
            } else {
                CheckpointError::Header(e.to_string())
            }
        })?;
        if header.version != FORMAT_VERSION {
            return Err(CheckpointError::Version(format!("format {}", header.version)).into());
        }
        let payload = &bytes[payload_start..];

        let (asker, answerer) = skeleton(&header.config, header.image_pixels)?;
        let mut ck = Checkpoint {
            opt_asker: RmsProp::new(asker.store(), header.config.learning_rate),
            opt_answerer: RmsProp::new(answerer.store(), header.config.learning_rate),
            target_asker: asker.clone(),
            target_answerer: answerer.clone(),
            asker,
            answerer,
            config: header.config,
            image_pixels: header.image_pixels,
            epoch: header.epoch,
            rng: header.rng,
        };
        let expected: Vec<(String, Vec<usize>)> = ck.blocks().into_iter().map(|(n, s, _)| (n, s)).collect();
        if expected.len() != header.tensors.len() {
            return Err(CheckpointError::ShapeMismatch {
                name: "tensor table".into(),
                expected: vec![expected.len()],
                found: vec![header.tensors.len()],
            }
            .into());
        }
        let mut values = Vec::with_capacity(expected.len());
        for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
            if *name != entry.name || *shape != entry.shape {
                return Err(CheckpointError::ShapeMismatch {
                    name: entry.name.clone(),
                    expected: shape.clone(),
                    found: entry.shape.clone(),
                }
                .into());
            }
            let len: usize = shape.iter().product();
            let end = entry.offset + 4 * len;
            let raw = payload.get(entry.offset..end).ok_or(CheckpointError::Truncated)?;
            values.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect::<Vec<f32>>(),
            );
        }
        let mut values = values.into_iter();
        for model in [
            &mut ck.asker,
            &mut ck.answerer,
            &mut ck.target_asker,
            &mut ck.target_answerer,
        ] {
            for e in model.store_mut().entries_mut() {
                e.tensor.data_mut().copy_from_slice(&values.next().expect("counted"));
            }
        }
        for (model, opt) in [(&ck.asker, &mut ck.opt_asker), (&ck.answerer, &mut ck.opt_answerer)] {
            for (e, acc) in model.store().entries().iter().zip(opt.accumulators_mut()) {
                if e.trainable {
                    *acc = values.next().expect("counted");
                }
            }
        }
        Ok(ck)
    }

    /// Writes via a sibling temp file and a rename, so readers never see a
    /// partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let io = |e: std::io::Error| TrainError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }

    /// Checks that this checkpoint fits models built from `config`.
    pub fn check_compatible(&self, config: &TrainerConfig, image_pixels: usize) -> Result<()> {
        let (a, b) = skeleton(config, image_pixels)?;
        for (mine, theirs) in [(&self.asker, &a), (&self.answerer, &b)] {
            for (x, y) in mine.store().entries().iter().zip(theirs.store().entries()) {
                if x.tensor.shape() != y.tensor.shape() {
                    return Err(CheckpointError::ShapeMismatch {
                        name: x.name.clone(),
                        expected: y.tensor.shape().to_vec(),
                        found: x.tensor.shape().to_vec(),
                    }
                    .into());
                }
            }
        }
        Ok(())
    }
}
