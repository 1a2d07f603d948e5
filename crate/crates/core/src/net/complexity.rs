use serde::Serialize;

use super::{ModelKind, Network, NetworkConfig};
use crate::error::Result;
use crate::tensor::Real;

/// Trainable parameters actually allocated in `net`.
pub fn count_params<T: Real>(net: &Network<T>) -> usize {
    net.num_params()
}

/// Floating-point operations of one forward pass on one frame, counting
/// two per multiply-add in convolutions and linear maps. Batch-dependent
/// attention score products are excluded.
pub fn count_flops(cfg: &NetworkConfig) -> u64 {
    let e = &cfg.extractor;
    let lens = e.stage_lengths();
    let mut macs = (e.base_channels * 2 * 7 * lens[0]) as u64;
    let mut cin = e.base_channels;
    for &l in &lens[1..] {
        let cout = cin * 2;
        macs += (cout * cin * 3 * l) as u64;
        macs += (cout * cout * 3 * l) as u64;
        macs += (cout * cin * l) as u64;
        cin = cout;
    }
    if let Some(mp) = &cfg.message_passing {
        macs += mp.num_params(cin) as u64;
    }
    macs += (cin * e.hidden) as u64;
    macs += head_macs(cfg);
    2 * macs
}

fn head_macs(cfg: &NetworkConfig) -> u64 {
    (cfg.extractor.hidden * cfg.extractor.output_dim(cfg.kind)) as u64
}

/// One line of a complexity table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityRow {
    pub kind: ModelKind,
    pub num_emitters: usize,
    pub params: usize,
    pub head_params: usize,
    pub flops: u64,
    pub head_flops: u64,
}

impl ComplexityRow {
    pub fn measure(cfg: NetworkConfig) -> Result<Self> {
        let net = Network::<f32>::new(cfg, 0)?;
        Ok(Self {
            kind: cfg.kind,
            num_emitters: cfg.extractor.num_emitters,
            params: count_params(&net),
            head_params: net.head_params(),
            flops: count_flops(&cfg),
            head_flops: 2 * head_macs(&cfg),
        })
    }
}
