//! A small multi-resolution fusion network with pluggable reassembly operators.
//!
//! Streams run at scales `1, 1/2, …, 1/2^(n−1)` with a uniform channel count.
//! Stream `i > 0` is created from the stem output by a downsampling operator
//! with `t = i`. Each fusion block applies a 3×3 conv + ReLU per stream and
//! then sums, into every stream `j`, the reassembled outputs of every other
//! stream `i` (an operator with `t = |i − j|`). The last block only fuses into
//! the full-resolution stream, which feeds a 1×1 classification head with one
//! logit per class.

pub mod checkpoint;
pub mod loss;
pub mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{config_err, shape_err, Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::rf::config::{DEFAULT_ALPHA, DEFAULT_PATCH, DEFAULT_REDUCTION};
use crate::rf::{Direction, M2mrfConfig, RfKind, RfOperator, SampleRate};
use crate::tensor::Tensor;

pub use loss::{dice_loss, dice_loss_value, DICE_EPS};
pub use train::{train, HistoryEntry, TrainConfig, LOSS_SMOOTHING_WINDOW, TOY_BASE_LR};

/// Standard deviation for the classifier head initialization.
pub const HEAD_INIT_STD: f64 = 0.01;

/// Channel statistics of the synthetic fundus images.
pub const INPUT_MEAN: [f64; 3] = [0.57, 0.30, 0.15];
pub const INPUT_STD: [f64; 3] = [0.08, 0.10, 0.07];

/// Patch/reduction/bottleneck settings shared by every M2MRF operator in a net.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct M2mrfHyper {
    pub patch_h: usize,
    pub patch_w: usize,
    pub reduction: usize,
    pub alpha: usize,
}

impl Default for M2mrfHyper {
    fn default() -> Self {
        Self {
            patch_h: DEFAULT_PATCH,
            patch_w: DEFAULT_PATCH,
            reduction: DEFAULT_REDUCTION,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl M2mrfHyper {
    pub fn config(&self, channels: usize) -> M2mrfConfig {
        M2mrfConfig {
            patch_h: self.patch_h,
            patch_w: self.patch_w,
            reduction: self.reduction,
            alpha: self.alpha,
            rate: SampleRate::ONE,
            channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub num_classes: usize,
    pub stem_channels: usize,
    pub num_streams: usize,
    pub num_fusion_blocks: usize,
    pub down: RfKind,
    pub up: RfKind,
    pub m2mrf: M2mrfHyper,
    /// Per-channel standardization `(x − mean) / std` applied to the image.
    pub input_mean: [f64; 3],
    pub input_std: [f64; 3],
}

impl Default for NetConfig {
    fn default() -> Self {
        Variant::A.net_config()
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_streams < 2 {
            return config_err("a fusion network needs at least two streams");
        }
        if self.num_classes == 0 || self.stem_channels == 0 || self.num_fusion_blocks == 0 {
            return config_err("classes, channels and fusion blocks must be positive");
        }
        if self.input_std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.input_mean.iter().any(|m| !m.is_finite()) {
            return config_err("input standardization needs finite means and positive deviations");
        }
        if !self.down.supports(Direction::Down) || self.down == RfKind::Unpool {
            return config_err(format!("{} cannot downsample inside the fusion network", self.down));
        }
        if !self.up.supports(Direction::Up) || self.up == RfKind::Unpool {
            return config_err(format!("{} cannot upsample inside the fusion network", self.up));
        }
        for kind in [self.down, self.up] {
            if kind.is_m2mrf() {
                let base = self.m2mrf.config(self.stem_channels);
                let max_t = (self.num_streams - 1) as u32;
                let rates: Vec<u32> = match kind {
                    RfKind::M2mrfOneStep => (1..=max_t).collect(),
                    _ => vec![1],
                };
                for t in rates {
                    base.with_rate(SampleRate::down(t)).validate()?;
                }
            }
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn alignment(&self) -> usize {
        1 << (self.num_streams - 1)
    }
}

/// Named down/up operator pairings selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
    C,
    D,
    /// Strided convolution down, bilinear up.
    #[serde(rename = "baseline-sc-bl")]
    BaselineScBl,
    /// Max-pool down, bilinear up.
    #[serde(rename = "baseline-mp")]
    BaselineMp,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::A,
        Variant::B,
        Variant::C,
        Variant::D,
        Variant::BaselineScBl,
        Variant::BaselineMp,
    ];

    pub fn kinds(self) -> (RfKind, RfKind) {
        use crate::rf::PairedVariant as P;
        let paired = |p: P| (p.down().kind(), p.up().kind());
        match self {
            Variant::A => paired(P::A),
            Variant::B => paired(P::B),
            Variant::C => paired(P::C),
            Variant::D => paired(P::D),
            Variant::BaselineScBl => (RfKind::StrideConv, RfKind::Bilinear),
            Variant::BaselineMp => (RfKind::MaxPool, RfKind::Bilinear),
        }
    }

    pub fn net_config(self) -> NetConfig {
        let (down, up) = self.kinds();
        NetConfig {
            num_classes: 4,
            stem_channels: 16,
            num_streams: 3,
            num_fusion_blocks: 2,
            down,
            up,
            m2mrf: M2mrfHyper::default(),
            input_mean: INPUT_MEAN,
            input_std: INPUT_STD,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::D => "D",
            Variant::BaselineScBl => "baseline-sc-bl",
            Variant::BaselineMp => "baseline-mp",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug)]
struct Fusion {
    from: usize,
    to: usize,
    op: RfOperator,
}

#[derive(Clone, Debug)]
struct FusionBlock {
    convs: Vec<ParamId>,
    fusions: Vec<Fusion>,
}

#[derive(Clone, Debug)]
pub struct MiniFusionNet {
    config: NetConfig,
    store: ParamStore,
    stem: ParamId,
    transitions: Vec<RfOperator>,
    blocks: Vec<FusionBlock>,
    head: ParamId,
}

fn kaiming(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let fan_in = shape[0] * shape[1] * shape[2];
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

impl MiniFusionNet {
    /// Deterministic construction from `seed`.
    pub fn build(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.stem_channels;
        let m2mrf = config.m2mrf.config(c);

        let stem = store.add("stem.kernel", kaiming(&[3, 3, 3, c], &mut rng));
        let transitions = (1..config.num_streams)
            .map(|i| {
                RfOperator::build(
                    config.down,
                    Direction::Down,
                    i as u32,
                    c,
                    Some(&m2mrf),
                    &mut store,
                    &format!("fuse.transition{i}"),
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let mut blocks = Vec::with_capacity(config.num_fusion_blocks);
        for b in 0..config.num_fusion_blocks {
            let convs = (0..config.num_streams)
                .map(|i| store.add(format!("block{b}.conv{i}"), kaiming(&[3, 3, c, c], &mut rng)))
                .collect();
            let last = b + 1 == config.num_fusion_blocks;
            let targets = if last { 1 } else { config.num_streams };
            let mut fusions = Vec::new();
            for to in 0..targets {
                for from in (0..config.num_streams).filter(|&i| i != to) {
                    let (kind, direction) = if from < to {
                        (config.down, Direction::Down)
                    } else {
                        (config.up, Direction::Up)
                    };
                    let t = from.abs_diff(to) as u32;
                    let op = RfOperator::build(
                        kind,
                        direction,
                        t,
                        c,
                        Some(&m2mrf),
                        &mut store,
                        &format!("fuse.block{b}.{from}to{to}"),
                        &mut rng,
                    )?;
                    fusions.push(Fusion { from, to, op });
                }
            }
            blocks.push(FusionBlock { convs, fusions });
        }
        let head = store.add(
            "head.kernel",
            Tensor::randn(&[1, 1, c, config.num_classes], HEAD_INIT_STD, &mut rng),
        );
        Ok(Self {
            config,
            store,
            stem,
            transitions,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    pub fn stem_param(&self) -> ParamId {
        self.stem
    }

    pub fn head_param(&self) -> ParamId {
        self.head
    }

    /// Every reassembly operator: transitions first, then block fusions.
    pub fn fusion_operators(&self) -> impl Iterator<Item = &RfOperator> {
        self.transitions
            .iter()
            .chain(self.blocks.iter().flat_map(|b| b.fusions.iter().map(|f| &f.op)))
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let a = self.config.alignment();
        match shape {
            [h, w, 3] if h % a == 0 && w % a == 0 => Ok(()),
            _ => shape_err(format!(
                "network input must be (H, W, 3) with H and W multiples of {a}, got {shape:?}"
            )),
        }
    }

    /// Per-class logits `(H, W, K)`; no sigmoid.
    pub fn forward(&self, tape: &mut Tape, image: Var) -> Result<Var> {
        self.check_input(tape.shape(image))?;
        let (h, w, _) = tape.value(image).hwc()?;
        let per_pixel = |v: [f64; 3]| Tensor::new(&[h, w, 3], v.repeat(h * w)).expect("shape matches");
        let mean = tape.leaf(per_pixel(self.config.input_mean));
        let inv_std = tape.leaf(per_pixel(self.config.input_std.map(|s| 1.0 / s)));
        let centred = tape.sub(image, mean)?;
        let image = tape.mul(centred, inv_std)?;

        let store = &self.store;
        let stem_k = tape.param(store, self.stem);
        let stem = tape.conv2d(image, stem_k, 1, 1)?;
        let stem = tape.relu(stem);

        let mut streams = vec![stem];
        for op in &self.transitions {
            streams.push(op.forward(tape, store, stem)?);
        }

        for block in &self.blocks {
            let mut convolved = Vec::with_capacity(streams.len());
            for (s, &k) in streams.iter().zip(&block.convs) {
                let k = tape.param(store, k);
                let y = tape.conv2d(*s, k, 1, 1)?;
                convolved.push(tape.relu(y));
            }
            let targets = block.fusions.iter().map(|f| f.to).max().unwrap_or(0) + 1;
            let mut fused: Vec<Var> = convolved[..targets].to_vec();
            for f in &block.fusions {
                let y = f.op.forward(tape, store, convolved[f.from])?;
                fused[f.to] = tape.add(fused[f.to], y)?;
            }
            streams = fused;
        }

        let head = tape.param(store, self.head);
        tape.conv2d(streams[0], head, 1, 0)
    }

    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(image.clone());
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    /// Per-class probability maps, `sigmoid(logits)`.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.logits(image)?.map(crate::kernels::sigmoid))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: Variant) -> NetConfig {
        NetConfig {
            stem_channels: 8,
            m2mrf: M2mrfHyper {
                patch_h: 4,
                patch_w: 4,
                reduction: 2,
                alpha: 4,
            },
            ..variant.net_config()
        }
    }

    #[test]
    fn shapes_for_every_variant() {
        for v in Variant::ALL {
            let net = MiniFusionNet::build(small(v), 0).unwrap();
            let img = Tensor::full(&[16, 16, 3], 0.3);
            let y = net.logits(&img).unwrap();
            assert_eq!(y.shape(), &[16, 16, 4], "variant {v}");
        }
    }

    #[test]
    fn misaligned_input_is_rejected() {
        let net = MiniFusionNet::build(small(Variant::A), 0).unwrap();
        assert!(matches!(net.logits(&Tensor::zeros(&[18, 16, 3])), Err(Error::Shape(_))));
        assert!(net.logits(&Tensor::zeros(&[16, 16, 2])).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = MiniFusionNet::build(small(Variant::D), 5).unwrap();
        let b = MiniFusionNet::build(small(Variant::D), 5).unwrap();
        assert_eq!(a.store(), b.store());
        let c = MiniFusionNet::build(small(Variant::D), 6).unwrap();
        assert_ne!(a.store(), c.store());
    }

    #[test]
    fn zero_image_zero_head_gives_zero_logits() {
        let mut net = MiniFusionNet::build(small(Variant::A), 0).unwrap();
        let head = net.head_param();
        let shape = net.store().value(head).shape().to_vec();
        net.store_mut().set_value(head, Tensor::zeros(&shape)).unwrap();
        let y = net.logits(&Tensor::zeros(&[16, 16, 3])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let p = net.predict(&Tensor::zeros(&[16, 16, 3])).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn unpool_and_bad_kinds_are_rejected() {
        let cfg = NetConfig {
            up: RfKind::Unpool,
            ..small(Variant::BaselineMp)
        };
        assert!(MiniFusionNet::build(cfg, 0).is_err());
        let cfg = NetConfig {
            down: RfKind::Bilinear,
            ..small(Variant::A)
        };
        assert!(MiniFusionNet::build(cfg, 0).is_err());
        assert!("E".parse::<Variant>().is_err());
        assert_eq!("baseline-sc-bl".parse::<Variant>().unwrap(), Variant::BaselineScBl);
    }
}
