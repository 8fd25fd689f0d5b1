use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentError, Result};
use crate::tensor::nn::{uniform, BatchNorm, Bound, GruCell, Linear, ParamId, ParamStore, StatUpdate};
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Asker,
    Answerer,
}

/// Layer widths. Defaults follow the published architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub image_hidden: usize,
    /// Width of every input embedding (and therefore of the GRU input).
    pub embed: usize,
    pub gru: usize,
    pub head_hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            image_hidden: 128,
            embed: 256,
            gru: 256,
            head_hidden: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One agent's parameters. Nothing here is shared with any other model.
#[derive(Debug, Clone)]
pub struct AgentModel<T> {
    pub role: Role,
    pub arch: Architecture,
    pub n_actions: usize,
    pub out_vocab: usize,
    pub in_vocab: usize,
    pub image_inputs: usize,
    store: ParamStore<T>,
    image_l1: Linear,
    image_bn: BatchNorm,
    image_l2: Linear,
    action_table: ParamId,
    message_bn: BatchNorm,
    message_l1: Linear,
    gru1: GruCell,
    gru2: GruCell,
    head_l1: Linear,
    head_l2: Linear,
}

/// Recurrent state for a batch of episodes, living on one graph.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub h1: Var,
    pub h2: Var,
    /// `None` encodes "no previous action" and embeds to zero.
    pub prev_action: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    /// `B x |u|`
    pub q: Var,
    /// `B x |m|` message logits
    pub m: Var,
    /// GRU states after the step; `prev_action` is left for the caller to set.
    pub state: AgentState,
    /// Running-statistic updates from training-mode batch norm.
    pub stats: Vec<StatUpdate<T>>,
}

/// Builds either role.
///
/// The asker holds `n_images` images (flattened and concatenated in slot
/// order), guesses among them, and speaks `ask_vocab` words. The answerer
/// sees one image, has a single no-op action, and speaks `answer_vocab`
/// (yes/no) words.
pub fn build_agent<T: Real>(
    role: Role,
    n_images: usize,
    image_pixels: usize,
    ask_vocab: usize,
    answer_vocab: usize,
    arch: Architecture,
    rng: &mut impl Rng,
) -> Result<AgentModel<T>> {
    if ask_vocab < 2 {
        return Err(AgentError::Config(format!("question vocabulary must be >= 2, got {ask_vocab}")));
    }
    if answer_vocab != 2 {
        return Err(AgentError::Config(format!("answers are yes/no, got vocabulary {answer_vocab}")));
    }
    if ask_vocab > 64 {
        return Err(AgentError::Config(format!("question vocabulary above 64 ({ask_vocab})")));
    }
    if image_pixels == 0 || [arch.image_hidden, arch.embed, arch.gru, arch.head_hidden].contains(&0) {
        return Err(AgentError::Config("layer widths must be positive".into()));
    }
    let (n_actions, out_vocab, in_vocab, image_inputs) = match role {
        Role::Asker => {
            if n_images < 2 {
                return Err(AgentError::Config(format!("the asker needs >= 2 images, got {n_images}")));
            }
            (n_images, ask_vocab, answer_vocab, n_images * image_pixels)
        }
        Role::Answerer => (1, answer_vocab, ask_vocab, image_pixels),
    };
    let mut store = ParamStore::new();
    let image_l1 = Linear::new(&mut store, "image.l1", image_inputs, arch.image_hidden, rng);
    let image_bn = BatchNorm::new(&mut store, "image.bn", arch.image_hidden);
    let image_l2 = Linear::new(&mut store, "image.l2", arch.image_hidden, arch.embed, rng);
    let action_table = store.add("action.table", uniform(vec![n_actions, arch.embed], 0.05, rng), true);
    let message_bn = BatchNorm::new(&mut store, "message.bn", in_vocab);
    let message_l1 = Linear::new(&mut store, "message.l1", in_vocab, arch.embed, rng);
    let gru1 = GruCell::new(&mut store, "gru1", arch.embed, arch.gru, rng);
    let gru2 = GruCell::new(&mut store, "gru2", arch.gru, arch.gru, rng);
    let head_l1 = Linear::new(&mut store, "head.l1", arch.gru, arch.head_hidden, rng);
    let head_l2 = Linear::new(&mut store, "head.l2", arch.head_hidden, n_actions + out_vocab, rng);
    Ok(AgentModel {
        role,
        arch,
        n_actions,
        out_vocab,
        in_vocab,
        image_inputs,
        store,
        image_l1,
        image_bn,
        image_l2,
        action_table,
        message_bn,
        message_l1,
        gru1,
        gru2,
        head_l1,
        head_l2,
    })
}

impl<T: Real> AgentModel<T> {
    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn head_width(&self) -> usize {
        self.n_actions + self.out_vocab
    }

    pub fn cast<U: Real>(&self) -> AgentModel<U> {
        AgentModel {
            role: self.role,
            arch: self.arch,
            n_actions: self.n_actions,
            out_vocab: self.out_vocab,
            in_vocab: self.in_vocab,
            image_inputs: self.image_inputs,
            store: self.store.cast(),
            image_l1: self.image_l1,
            image_bn: self.image_bn,
            image_l2: self.image_l2,
            action_table: self.action_table,
            message_bn: self.message_bn,
            message_l1: self.message_l1,
            gru1: self.gru1,
            gru2: self.gru2,
            head_l1: self.head_l1,
            head_l2: self.head_l2,
        }
    }

    /// All-zero hidden states and no previous action.
    pub fn fresh_state(&self, g: &mut Graph<T>, batch: usize) -> Result<AgentState> {
        let h1 = g.constant_owned(Tensor::zeros(vec![batch, self.arch.gru]))?;
        let h2 = g.constant_owned(Tensor::zeros(vec![batch, self.arch.gru]))?;
        Ok(AgentState {
            h1,
            h2,
            prev_action: vec![None; batch],
        })
    }

    /// One recurrent step.
    ///
    /// `observation` is `B x image_inputs`; `incoming` is the counterpart's
    /// transmitted message `B x in_vocab`, or `None` before any message
    /// exists (equivalent to a zero message embedding). The image, message,
    /// and previous-action embeddings are summed, fed through the 2-layer
    /// GRU, and the head maps the top state to `(Q, m)`.
    pub fn step(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        state: &AgentState,
        observation: Var,
        incoming: Option<Var>,
        mode: Mode,
    ) -> Result<StepOutput<T>> {
        let train = mode == Mode::Train;
        let obs = g.value(observation);
        if obs.cols() != self.image_inputs {
            return Err(AgentError::Config(format!(
                "observation has {} values per row, the image embedder takes {}",
                obs.cols(),
                self.image_inputs
            )));
        }
        let batch = obs.rows();
        let mut stats = Vec::new();

        let x = self.image_l1.forward(g, bound, observation)?;
        let (x, upd) = self.image_bn.forward(g, &self.store, bound, x, train)?;
        stats.extend(upd);
        let x = g.relu(x)?;
        let mut z = self.image_l2.forward(g, bound, x)?;

        if let Some(msg) = incoming {
            let mv = g.value(msg);
            if mv.cols() != self.in_vocab || mv.rows() != batch {
                return Err(AgentError::Config(format!(
                    "incoming message is {:?}, expected {batch} x {}",
                    mv.shape(),
                    self.in_vocab
                )));
            }
            let (mn, upd) = self.message_bn.forward(g, &self.store, bound, msg, train)?;
            stats.extend(upd);
            let me = self.message_l1.forward(g, bound, mn)?;
            z = g.add(z, me)?;
        }

        if state.prev_action.len() != batch {
            return Err(AgentError::Config("previous actions do not match the batch".into()));
        }
        if state.prev_action.iter().any(|a| a.is_some()) {
            let ae = g.embedding(bound.var(self.action_table), &state.prev_action)?;
            z = g.add(z, ae)?;
        }

        let h1 = self.gru1.forward(g, bound, z, state.h1)?;
        let h2 = self.gru2.forward(g, bound, h1, state.h2)?;
        let y = self.head_l1.forward(g, bound, h2)?;
        let y = g.relu(y)?;
        let out = self.head_l2.forward(g, bound, y)?;
        let q = g.slice_cols(out, 0, self.n_actions)?;
        let m = g.slice_cols(out, self.n_actions, self.out_vocab)?;
        Ok(StepOutput {
            q,
            m,
            state: AgentState {
                h1,
                h2,
                prev_action: state.prev_action.clone(),
            },
            stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::gradcheck;
    use rand::SeedableRng;
    use rand_xoshiro::SplitMix64;

    fn rng() -> SplitMix64 {
        SplitMix64::seed_from_u64(99)
    }

    #[test]
    fn output_widths_follow_roles() {
        let a: AgentModel<f32> = build_agent(Role::Asker, 2, 32 * 32 * 3, 2, 2, Architecture::default(), &mut rng()).unwrap();
        assert_eq!(a.image_inputs, 6144);
        assert_eq!(a.head_width(), 4);
        let b: AgentModel<f32> = build_agent(Role::Answerer, 2, 3072, 2, 2, Architecture::default(), &mut rng()).unwrap();
        assert_eq!(b.head_width(), 3);
        assert_eq!(b.image_inputs, 3072);
        let c: AgentModel<f32> = build_agent(Role::Asker, 4, 3072, 8, 2, Architecture::default(), &mut rng()).unwrap();
        assert_eq!(c.head_width(), 12);
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        let arch = Architecture::default();
        assert!(build_agent::<f32>(Role::Asker, 1, 3072, 2, 2, arch, &mut rng()).is_err());
        assert!(build_agent::<f32>(Role::Asker, 2, 3072, 1, 2, arch, &mut rng()).is_err());
        assert!(build_agent::<f32>(Role::Answerer, 2, 3072, 2, 3, arch, &mut rng()).is_err());
    }

    #[test]
    fn models_share_no_storage() {
        let arch = Architecture::default();
        let a: AgentModel<f32> = build_agent(Role::Asker, 2, 3072, 2, 2, arch, &mut rng()).unwrap();
        let b = a.clone();
        let c: AgentModel<f32> = build_agent(Role::Answerer, 2, 3072, 2, 2, arch, &mut rng()).unwrap();
        for x in a.store().entries() {
            for other in [&b, &c] {
                for y in other.store().entries() {
                    assert_ne!(x.tensor.data().as_ptr(), y.tensor.data().as_ptr());
                }
            }
        }
    }

    #[test]
    fn zero_model_gives_zero_outputs() {
        let arch = Architecture {
            image_hidden: 8,
            embed: 16,
            gru: 16,
            head_hidden: 16,
        };
        let mut model: AgentModel<f64> = build_agent(Role::Asker, 2, 12, 3, 2, arch, &mut rng()).unwrap();
        for e in model.store_mut().entries_mut() {
            e.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let bound = model.store().bind(&mut g).unwrap();
        let state = model.fresh_state(&mut g, 2).unwrap();
        let obs = g.constant(&Tensor::zeros(vec![2, 24])).unwrap();
        let msg = g.constant(&Tensor::zeros(vec![2, 2])).unwrap();
        let out = model.step(&mut g, &bound, &state, obs, Some(msg), Mode::Train).unwrap();
        assert!(g.value(out.q).data().iter().all(|&v| v == 0.0));
        assert!(g.value(out.m).data().iter().all(|&v| v == 0.0));
        assert_eq!(g.value(out.q).shape(), &[2, 2]);
        assert_eq!(g.value(out.m).shape(), &[2, 3]);
    }

    #[test]
    fn eval_steps_are_bit_identical() {
        let model: AgentModel<f32> = build_agent(Role::Answerer, 2, 12, 3, 2, Architecture::default(), &mut rng()).unwrap();
        let obs = Tensor::from_fn(vec![1, 12], |i| i as f32 / 12.0);
        let msg = Tensor::matrix(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let run = || {
            let mut g = Graph::new();
            let bound = model.store().bind(&mut g).unwrap();
            let mut state = model.fresh_state(&mut g, 1).unwrap();
            state.prev_action = vec![Some(0)];
            let o = g.constant(&obs).unwrap();
            let m = g.constant(&msg).unwrap();
            let out = model.step(&mut g, &bound, &state, o, Some(m), Mode::Eval).unwrap();
            assert!(out.stats.is_empty());
            (g.value(out.q).clone(), g.value(out.m).clone())
        };
        let (q1, m1) = run();
        let (q2, m2) = run();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&q1), bits(&q2));
        assert_eq!(bits(&m1), bits(&m2));
    }

    #[test]
    fn q_depends_on_pixels() {
        // the observation is registered as a trainable tensor so the
        // gradcheck harness reports its gradient
        let arch = Architecture {
            image_hidden: 6,
            embed: 8,
            gru: 8,
            head_hidden: 8,
        };
        let model: AgentModel<f64> = build_agent(Role::Asker, 2, 6, 2, 2, arch, &mut rng()).unwrap();
        let mut pixels = ParamStore::new();
        let mut r = rng();
        let id = pixels.add("pixels", uniform(vec![3, 12], 1.0, &mut r), true);
        let report = gradcheck(&[("", &pixels)], 64, |g, bs| {
            let b = &bs[0];
            let mb = model.store().bind_frozen(g)?;
            let state = model.fresh_state(g, 3).map_err(|e| crate::tensor::TensorError::Invalid(e.to_string()))?;
            let out = model
                .step(g, &mb, &state, b.var(id), None, Mode::Train)
                .map_err(|e| crate::tensor::TensorError::Invalid(e.to_string()))?;
            let q = g.mul(out.q, out.q)?;
            g.sum_all(q)
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
        assert!(report.group("pixels").unwrap().max_abs_grad > 0.0);
    }
}
