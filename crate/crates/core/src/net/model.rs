use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{detect, ModelKind, NetworkConfig};
use crate::error::{Error, Result};
use crate::msgpass::{message_passing_layer, MessagePassingParams};
use crate::signal::label_from_class;
use crate::tensor::{finite_difference_check, BatchStats, GradCheck, Graph, ParamId, ParamStore, Real, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct BatchNormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ResidualBlock {
    pub conv1: ParamId,
    pub bn1: BatchNormIds,
    pub conv2: ParamId,
    pub bn2: BatchNormIds,
    pub skip: ParamId,
    pub skip_bn: BatchNormIds,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    pub stem: ParamId,
    pub stem_bn: BatchNormIds,
    pub blocks: Vec<ResidualBlock>,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub mp: Option<MessagePassingParams>,
}

/// Whether batch norm uses batch statistics (and reports them) or running
/// estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward<T: Real> {
    pub logits: Var,
    /// Post-FC, post-relu activations (the `D`-wide fingerprint features).
    pub features: Var,
    pub(crate) bn_updates: Vec<(BatchNormIds, BatchStats<T>)>,
}

/// Extractor trunk plus head, generic over the scalar type so that the same
/// model can be gradient-checked in `f64`.
#[derive(Clone, Debug)]
pub struct Network<T: Real = f32> {
    config: NetworkConfig,
    store: ParamStore<T>,
    layout: Layout,
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("shape product")
}

fn add_bn<T: Real>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<BatchNormIds> {
    Ok(BatchNormIds {
        gamma: store.add(format!("{name}.weight"), Tensor::full(&[c], T::one()), true)?,
        beta: store.add(format!("{name}.bias"), Tensor::zeros(&[c]), true)?,
        mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[c]), false)?,
        var: store.add(format!("{name}.running_var"), Tensor::full(&[c], T::one()), false)?,
    })
}

impl<T: Real> Network<T> {
    /// Builds a freshly initialized network. Convolution and linear weights
    /// are uniform in `±1/sqrt(fan_in)`; convolutions feeding batch norm have
    /// no bias.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let e = config.extractor;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c0 = e.base_channels;
        let stem = store.add("stem.conv.weight", uniform(&mut rng, &[c0, 2, 7], 2 * 7), true)?;
        let stem_bn = add_bn(&mut store, "stem.bn", c0)?;
        let mut blocks = Vec::with_capacity(e.num_blocks);
        let mut cin = c0;
        for i in 0..e.num_blocks {
            let cout = cin * 2;
            let p = format!("block{i}");
            let conv1 = store.add(format!("{p}.conv1.weight"), uniform(&mut rng, &[cout, cin, 3], cin * 3), true)?;
            let bn1 = add_bn(&mut store, &format!("{p}.bn1"), cout)?;
            let conv2 = store.add(format!("{p}.conv2.weight"), uniform(&mut rng, &[cout, cout, 3], cout * 3), true)?;
            let bn2 = add_bn(&mut store, &format!("{p}.bn2"), cout)?;
            let skip = store.add(format!("{p}.skip.weight"), uniform(&mut rng, &[cout, cin, 1], cin), true)?;
            let skip_bn = add_bn(&mut store, &format!("{p}.skip_bn"), cout)?;
            blocks.push(ResidualBlock { conv1, bn1, conv2, bn2, skip, skip_bn });
            cin = cout;
        }
        let mp = match config.message_passing {
            Some(mp) => Some(MessagePassingParams::build(&mut store, "mp", cin, &mp, &mut rng)?),
            None => None,
        };
        let d = e.hidden;
        let fc_w = store.add("fc.weight", uniform(&mut rng, &[d, cin], cin), true)?;
        let fc_b = store.add("fc.bias", uniform(&mut rng, &[d], cin), true)?;
        let out = e.output_dim(config.kind);
        let head_w = store.add("head.weight", uniform(&mut rng, &[out, d], d), true)?;
        let head_b = store.add("head.bias", uniform(&mut rng, &[out], d), true)?;
        let layout = Layout { stem, stem_bn, blocks, fc_w, fc_b, head_w, head_b, mp };
        Ok(Self { config, store, layout })
    }

    /// Rebuilds a network from a configuration and stored tensors, matched
    /// by name and shape.
    pub fn from_store(config: NetworkConfig, store: ParamStore<T>) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        if store.len() != net.store.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model needs {}",
                store.len(),
                net.store.len()
            )));
        }
        for id in net.store.ids().collect::<Vec<_>>() {
            let name = net.store.name(id).to_string();
            let src = store
                .find(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing {name}")))?;
            if store.get(src).shape() != net.store.get(id).shape() {
                return Err(Error::Format(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    store.get(src).shape(),
                    net.store.get(id).shape()
                )));
            }
            net.store.set_data(id, store.get(src).data())?;
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Trainable parameter count.
    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    /// Parameters of the final linear layer.
    pub fn head_params(&self) -> usize {
        self.store.get(self.layout.head_w).numel() + self.store.get(self.layout.head_b).numel()
    }

    fn batch_norm(
        store: &ParamStore<T>,
        g: &mut Graph<T>,
        x: Var,
        bn: BatchNormIds,
        mode: Mode,
        updates: &mut Vec<(BatchNormIds, BatchStats<T>)>,
    ) -> Result<Var> {
        let gamma = g.param(store, bn.gamma);
        let beta = g.param(store, bn.beta);
        let eps = T::from_f64(BN_EPS);
        match mode {
            Mode::Train => {
                let (y, stats) = g.batch_norm_train(x, gamma, beta, eps)?;
                updates.push((bn, stats));
                Ok(y)
            }
            Mode::Eval => {
                let mean = store.get(bn.mean).data();
                let var = store.get(bn.var).data();
                g.batch_norm_eval(x, gamma, beta, mean, var, eps)
            }
        }
    }

    /// Forward pass on a `B x 2 x T` input node.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Forward<T>> {
        self.forward_with(&self.store, g, x, mode)
    }

    /// Forward pass reading weights from `store`, which must share this
    /// network's layout (e.g. a perturbed copy during gradient checks).
    pub fn forward_with(&self, store: &ParamStore<T>, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Forward<T>> {
        let e = &self.config.extractor;
        let s = g.shape(x);
        if s != [s[0], 2, e.input_len] || s[0] == 0 {
            return Err(Error::Dimension(format!(
                "expected B x 2 x {} input, got {s:?}",
                e.input_len
            )));
        }
        let mut updates = Vec::new();
        let w = g.param(store, self.layout.stem);
        let h = g.conv1d(x, w, None, 1, 3)?;
        let h = Self::batch_norm(store, g, h, self.layout.stem_bn, mode, &mut updates)?;
        let mut h = g.relu(h);
        for blk in &self.layout.blocks {
            let w1 = g.param(store, blk.conv1);
            let a = g.conv1d(h, w1, None, 2, 1)?;
            let a = Self::batch_norm(store, g, a, blk.bn1, mode, &mut updates)?;
            let a = g.relu(a);
            let w2 = g.param(store, blk.conv2);
            let a = g.conv1d(a, w2, None, 1, 1)?;
            let a = Self::batch_norm(store, g, a, blk.bn2, mode, &mut updates)?;
            let ws = g.param(store, blk.skip);
            let sk = g.conv1d(h, ws, None, 2, 0)?;
            let sk = Self::batch_norm(store, g, sk, blk.skip_bn, mode, &mut updates)?;
            let sum = g.add(a, sk)?;
            h = g.relu(sum);
        }
        let mut pooled = g.global_avg_pool(h)?;
        if let Some(mp) = &self.layout.mp {
            pooled = message_passing_layer(g, store, mp, pooled)?;
        }
        let fw = g.param(store, self.layout.fc_w);
        let fb = g.param(store, self.layout.fc_b);
        let f = g.linear(pooled, fw, Some(fb))?;
        let features = g.relu(f);
        let hw = g.param(store, self.layout.head_w);
        let hb = g.param(store, self.layout.head_b);
        let logits = g.linear(features, hw, Some(hb))?;
        Ok(Forward { logits, features, bn_updates: updates })
    }

    /// Folds training batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, fwd: &Forward<T>) {
        let m = T::from_f64(BN_MOMENTUM);
        let keep = T::one() - m;
        for (ids, stats) in &fwd.bn_updates {
            for (slot, batch) in [(ids.mean, &stats.mean), (ids.var, &stats.var)] {
                let t = self.store.get_mut(slot).data_mut();
                t.iter_mut().zip(batch).for_each(|(r, &b)| *r = keep * *r + m * b);
            }
        }
    }

    fn input_tensor(&self, x: &[f32]) -> Result<(Tensor<T>, usize)> {
        let per = 2 * self.config.extractor.input_len;
        if x.is_empty() || !x.len().is_multiple_of(per) {
            return Err(Error::Dimension(format!(
                "input of {} values is not a whole number of {per}-value frames",
                x.len()
            )));
        }
        let b = x.len() / per;
        let data = x.iter().map(|&v| T::from_f64(v as f64)).collect();
        Ok((Tensor::new(&[b, 2, self.config.extractor.input_len], data)?, b))
    }

    /// Eval-mode outputs for frames `x` (`N x 2T` values) processed in
    /// consecutive batches of `batch_size`. Returns `(logits, features)`
    /// row-major.
    pub fn infer(&self, x: &[f32], batch_size: usize) -> Result<(Vec<T>, Vec<T>)> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        let per = 2 * self.config.extractor.input_len;
        let mut logits = Vec::new();
        let mut features = Vec::new();
        for chunk in x.chunks(batch_size * per) {
            let (t, _) = self.input_tensor(chunk)?;
            let mut g = Graph::new();
            let xv = g.input(t);
            let out = self.forward(&mut g, xv, Mode::Eval)?;
            logits.extend_from_slice(g.data(out.logits));
            features.extend_from_slice(g.data(out.features));
        }
        Ok((logits, features))
    }

    /// Predicted label vectors: thresholded sigmoids for multi-label heads,
    /// the decoded argmax class for the multiclass baseline.
    pub fn predict_labels(&self, x: &[f32], batch_size: usize, threshold: f64) -> Result<Vec<Vec<u8>>> {
        let (logits, _) = self.infer(x, batch_size)?;
        let k = self.config.extractor.num_emitters;
        let out = self.config.extractor.output_dim(self.config.kind);
        let rows = logits.chunks(out);
        Ok(match self.config.kind {
            ModelKind::Multiclass => rows
                .map(|r| {
                    let best = r
                        .iter()
                        .enumerate()
                        .fold((0, T::neg_infinity()), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
                    label_from_class(best.0, k)
                })
                .collect(),
            _ => {
                let mut res = Vec::with_capacity(logits.len() / out);
                for r in rows {
                    let eta: Vec<f64> = r.iter().map(|v| v.as_f64()).collect();
                    res.push(detect(&eta, threshold)?.label());
                }
                res
            }
        })
    }

    /// Compares backward-pass gradients of the training-mode BCE (or
    /// cross-entropy) loss on `x` against central differences.
    pub fn gradient_check(&self, x: &[f32], labels: &[Vec<u8>], eps: f64) -> Result<GradCheck> {
        let net = self.cast::<f64>();
        let (xt, _) = net.input_tensor(x)?;
        let mut store = net.store.clone();
        finite_difference_check(&mut store, eps, |s, g| {
            let xv = g.input(xt.clone());
            let out = net.forward_with(s, g, xv, Mode::Train)?;
            match net.config.kind {
                ModelKind::Multiclass => {
                    let t: Vec<usize> = labels.iter().map(|l| crate::signal::class_from_label(l)).collect();
                    g.softmax_cross_entropy(out.logits, &t)
                }
                _ => {
                    let flat: Vec<f64> = labels.iter().flatten().map(|&b| b as f64).collect();
                    g.bce_with_logits(out.logits, &flat)
                }
            }
        })
    }

    /// Element-type conversion (e.g. to `f64` for gradient checks).
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config,
            store: self.store.cast(),
            layout: self.layout.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ExtractorConfig;

    fn small(kind: ModelKind, k: usize) -> NetworkConfig {
        let mut c = NetworkConfig::reference(kind, k, 32);
        c.extractor.base_channels = 4;
        c.extractor.hidden = 16;
        if let Some(mp) = c.message_passing.as_mut() {
            mp.heads = 4;
        }
        c
    }

    fn frames(b: usize, t: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..b * 2 * t).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn head_parameter_deltas() {
        let count = |kind, k| Network::<f32>::new(NetworkConfig::reference(kind, k, 64), 0).unwrap();
        for kind in [ModelKind::Smei, ModelKind::Multiclass] {
            let n2 = count(kind, 2);
            let n5 = count(kind, 5);
            assert_eq!(n5.num_params() - n2.num_params(), n5.head_params() - n2.head_params());
        }
        assert_eq!(count(ModelKind::Smei, 5).num_params() - count(ModelKind::Smei, 2).num_params(), 771);
        assert_eq!(
            count(ModelKind::Multiclass, 5).num_params() - count(ModelKind::Multiclass, 2).num_params(),
            7196
        );
        assert_eq!(count(ModelKind::Multiclass, 3).head_params(), 7 * 257);
    }

    #[test]
    fn ismei_adds_message_passing_params_exactly() {
        let s = Network::<f32>::new(NetworkConfig::reference(ModelKind::Smei, 3, 64), 0).unwrap();
        let i = Network::<f32>::new(NetworkConfig::reference(ModelKind::Ismei, 3, 64), 0).unwrap();
        assert_eq!(i.num_params() - s.num_params(), 2 * (4 * 3 * 256 * 64 + 256 * 256));
    }

    #[test]
    fn logits_shape_and_batch_independence() {
        let net = Network::<f32>::new(small(ModelKind::Smei, 3), 1).unwrap();
        let x = frames(4, 32, 2);
        let (logits, feats) = net.infer(&x, 4).unwrap();
        assert_eq!(logits.len(), 4 * 3);
        assert_eq!(feats.len(), 4 * 16);
        let (single, _) = net.infer(&x, 1).unwrap();
        for (a, b) in logits.iter().zip(&single) {
            assert!((a - b).abs() < 1e-5);
        }
        let mut swapped = x[64..128].to_vec();
        swapped.extend_from_slice(&x[..64]);
        let (sw, _) = net.infer(&swapped, 2).unwrap();
        assert_eq!(&sw[..3], &logits[3..6]);
    }

    #[test]
    fn reference_forward_shape() {
        let net = Network::<f32>::new(NetworkConfig::reference(ModelKind::Smei, 3, 1024), 1).unwrap();
        let (logits, _) = net.infer(&frames(4, 1024, 3), 4).unwrap();
        assert_eq!(logits.len(), 12);
    }

    #[test]
    fn wrong_input_rejected() {
        let net = Network::<f32>::new(small(ModelKind::Smei, 3), 1).unwrap();
        assert!(net.infer(&[0.0; 63], 4).is_err());
    }

    #[test]
    fn trunk_gradients_match_finite_differences() {
        let cfg = NetworkConfig::smei(ExtractorConfig { num_emitters: 3, base_channels: 4, num_blocks: 3, hidden: 16, input_len: 32 });
        let net = Network::<f32>::new(cfg, 5).unwrap();
        let labels = vec![vec![1, 0, 1], vec![0, 1, 1], vec![1, 0, 0], vec![1, 1, 1]];
        let r = net.gradient_check(&frames(4, 32, 6), &labels, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }
}
