//! Cross-sample message passing via multi-head attention.
//!
//! Pooled fingerprint features of a batch form the nodes. Each round every
//! sample attends to every sample of the batch, the head outputs are
//! concatenated and mixed by an output matrix, added back residually and
//! layer-normalized. Rounds carry independent weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{train, ExtractorConfig, Network, NetworkConfig, TrainConfig, TrainOutcome};
use crate::signal::SplitDataset;
use crate::tensor::{finite_difference_check, GradCheck, Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessagePassingConfig {
    pub heads: usize,
    pub rounds: usize,
}

impl Default for MessagePassingConfig {
    fn default() -> Self {
        Self { heads: 4, rounds: 2 }
    }
}

impl MessagePassingConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.heads == 0 || self.rounds == 0 {
            return Err(Error::InvalidConfig("message passing needs at least one head and one round".into()));
        }
        if !dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "feature dimension {dim} is not divisible by {} heads",
                self.heads
            )));
        }
        Ok(())
    }

    /// Learnable values added per network: per round `3 D^2` for the head
    /// projections plus `D^2` for the output matrix.
    pub fn num_params(&self, dim: usize) -> usize {
        self.rounds * 4 * dim * dim
    }
}

/// Weights of one round. Each projection is stored `D/Z x D` so that a
/// linear map takes `B x D` features to `B x D/Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundParams {
    pub query: Vec<ParamId>,
    pub key: Vec<ParamId>,
    pub value: Vec<ParamId>,
    pub out: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MessagePassingParams {
    pub dim: usize,
    pub heads: usize,
    pub rounds: Vec<RoundParams>,
}

fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("shape product")
}

impl MessagePassingParams {
    /// Registers the weights in `store` under `prefix`, initialized uniformly
    /// in `±1/sqrt(D)`.
    pub fn build<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        cfg: &MessagePassingConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate(dim)?;
        let hd = dim / cfg.heads;
        let bound = 1.0 / (dim as f64).sqrt();
        let mut rounds = Vec::with_capacity(cfg.rounds);
        for r in 0..cfg.rounds {
            let mut proj = |kind: &str| -> Result<Vec<ParamId>> {
                (0..cfg.heads)
                    .map(|z| store.add(format!("{prefix}.round{r}.head{z}.{kind}"), uniform(rng, &[hd, dim], bound), true))
                    .collect()
            };
            let query = proj("query")?;
            let key = proj("key")?;
            let value = proj("value")?;
            let out = store.add(format!("{prefix}.round{r}.out"), uniform(rng, &[dim, dim], bound), true)?;
            rounds.push(RoundParams { query, key, value, out });
        }
        Ok(Self { dim, heads: cfg.heads, rounds })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn num_params<T: Real>(&self, store: &ParamStore<T>) -> usize {
        self.rounds
            .iter()
            .flat_map(|r| r.query.iter().chain(&r.key).chain(&r.value).chain(std::iter::once(&r.out)))
            .map(|&id| store.get(id).numel())
            .sum()
    }
}

/// Per-head query, key and value projections of `B x D` features.
pub fn project_qkv<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    round: &RoundParams,
    x: Var,
    head: usize,
) -> Result<(Var, Var, Var)> {
    let mut proj = |id: ParamId| -> Result<Var> {
        let w = g.param(store, id);
        g.linear(x, w, None)
    };
    Ok((proj(round.query[head])?, proj(round.key[head])?, proj(round.value[head])?))
}

/// Row-stochastic `B x B` attention: `softmax_j(u_i . r_j / sqrt(head_dim))`.
pub fn attention_scores<T: Real>(g: &mut Graph<T>, u: Var, r: Var) -> Result<Var> {
    let hd = g.shape(u)[1];
    let s = g.matmul(u, r, true)?;
    let s = g.scale(s, T::from_f64(1.0 / (hd as f64).sqrt()));
    g.softmax_rows(s)
}

/// One round: `LN(x + W_O [A_1 V_1, ..., A_Z V_Z])`.
pub fn message_passing_round<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    round: &RoundParams,
    x: Var,
) -> Result<Var> {
    let mut messages = Vec::with_capacity(round.query.len());
    for z in 0..round.query.len() {
        let (u, r, v) = project_qkv(g, store, round, x, z)?;
        let a = attention_scores(g, u, r)?;
        messages.push(g.matmul(a, v, false)?);
    }
    let cat = g.concat_cols(&messages)?;
    let wo = g.param(store, round.out);
    let mixed = g.linear(cat, wo, None)?;
    let res = g.add(x, mixed)?;
    g.layer_norm(res, T::from_f64(LN_EPS))
}

/// All rounds in sequence; output shape equals input shape `B x D`.
pub fn message_passing_layer<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    params: &MessagePassingParams,
    x: Var,
) -> Result<Var> {
    let s = g.shape(x);
    if s.len() != 2 || s[1] != params.dim || s[0] == 0 {
        return Err(Error::Dimension(format!(
            "message passing expects B x {} features, got {s:?}",
            params.dim
        )));
    }
    params
        .rounds
        .iter()
        .try_fold(x, |h, round| message_passing_round(g, store, round, h))
}

/// Finite-difference check of the full layer (all rounds) on random
/// `batch x dim` features, covering both the weights and the input.
pub fn gradient_check_layer(batch: usize, dim: usize, cfg: &MessagePassingConfig, seed: u64, eps: f64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let params = MessagePassingParams::build(&mut store, "mp", dim, cfg, &mut rng)?;
    let x = store.add("input", uniform(&mut rng, &[batch, dim], 1.5), true)?;
    let target = uniform::<f64, _>(&mut rng, &[batch, dim], 1.0);
    finite_difference_check(&mut store, eps, |s, g| {
        let xv = g.param(s, x);
        let y = message_passing_layer(g, s, &params, xv)?;
        let t = g.input(target.clone());
        let d = g.sub(y, t)?;
        let p = g.sigmoid(d);
        Ok(g.mean(p))
    })
}

/// Enhanced network: the extractor trunk with message passing spliced in
/// between pooling and the fully connected layer.
pub fn build_ismei(cfg: ExtractorConfig, mp: MessagePassingConfig, seed: u64) -> Result<Network> {
    Network::new(NetworkConfig::ismei(cfg, mp), seed)
}

/// Joint training of trunk and message-passing weights.
pub fn train_ismei(
    cfg: ExtractorConfig,
    mp: MessagePassingConfig,
    data: &SplitDataset,
    hyper: &TrainConfig,
) -> Result<TrainOutcome> {
    let net = build_ismei(cfg, mp, hyper.seed)?;
    train(net, data, hyper)
}

/// Predictions for `x` processed in fixed-order batches of `batch_size`;
/// the last batch may be short. Results depend on batch composition.
pub fn infer_ismei(net: &Network, x: &[f32], batch_size: usize, threshold: f64) -> Result<Vec<Vec<u8>>> {
    net.predict_labels(x, batch_size, threshold)
}
