//! Feature reassembly (RF) operators: the many-to-many M2MRF operator in
//! one-step and cascade form, and the classical many-to-one baselines
//! (strided convolution, max-pooling, bilinear interpolation, deconvolution,
//! unpooling).

pub mod config;
pub mod m2mrf;
pub mod patches;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{config_err, contract_err, Error, Result};
use crate::kernels::IndexMap;
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub use config::{M2mrfConfig, SampleRate};
pub use m2mrf::M2mrfOperator;
pub use patches::{merge_patches, partition_patches};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Down,
    Up,
}

impl Direction {
    /// Overall rate `2^-t` or `2^t`.
    pub fn rate(self, t: u32) -> SampleRate {
        match self {
            Direction::Down => SampleRate::down(t),
            Direction::Up => SampleRate::up(t),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RfKind {
    M2mrfOneStep,
    M2mrfCascade,
    StrideConv,
    MaxPool,
    Bilinear,
    Deconv,
    Unpool,
}

impl RfKind {
    pub const ALL: [RfKind; 7] = [
        RfKind::M2mrfOneStep,
        RfKind::M2mrfCascade,
        RfKind::StrideConv,
        RfKind::MaxPool,
        RfKind::Bilinear,
        RfKind::Deconv,
        RfKind::Unpool,
    ];

    pub fn is_m2mrf(self) -> bool {
        matches!(self, RfKind::M2mrfOneStep | RfKind::M2mrfCascade)
    }

    pub fn supports(self, direction: Direction) -> bool {
        match self {
            RfKind::M2mrfOneStep | RfKind::M2mrfCascade => true,
            RfKind::StrideConv | RfKind::MaxPool => direction == Direction::Down,
            RfKind::Bilinear | RfKind::Deconv | RfKind::Unpool => direction == Direction::Up,
        }
    }

    /// Whether the operator is a fixed linear map of its input.
    pub fn is_linear(self) -> bool {
        !matches!(self, RfKind::MaxPool | RfKind::Unpool)
    }

    pub fn name(self) -> &'static str {
        match self {
            RfKind::M2mrfOneStep => "m2mrf-one-step",
            RfKind::M2mrfCascade => "m2mrf-cascade",
            RfKind::StrideConv => "stride-conv",
            RfKind::MaxPool => "max-pool",
            RfKind::Bilinear => "bilinear",
            RfKind::Deconv => "deconv",
            RfKind::Unpool => "unpool",
        }
    }
}

impl fmt::Display for RfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RfKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RfKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown operator kind {s:?}")))
    }
}

/// How the M2MRF stages are arranged on each side of a paired operator set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arrangement {
    OneStep,
    Cascade,
}

impl Arrangement {
    pub fn kind(self) -> RfKind {
        match self {
            Arrangement::OneStep => RfKind::M2mrfOneStep,
            Arrangement::Cascade => RfKind::M2mrfCascade,
        }
    }
}

/// The four down/up pairings of M2MRF.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairedVariant {
    /// one-step down, one-step up
    A,
    /// one-step down, cascade up
    B,
    /// cascade down, one-step up
    C,
    /// cascade down, cascade up
    D,
}

impl PairedVariant {
    pub const ALL: [PairedVariant; 4] = [PairedVariant::A, PairedVariant::B, PairedVariant::C, PairedVariant::D];

    pub fn down(self) -> Arrangement {
        match self {
            PairedVariant::A | PairedVariant::B => Arrangement::OneStep,
            PairedVariant::C | PairedVariant::D => Arrangement::Cascade,
        }
    }

    pub fn up(self) -> Arrangement {
        match self {
            PairedVariant::A | PairedVariant::C => Arrangement::OneStep,
            PairedVariant::B | PairedVariant::D => Arrangement::Cascade,
        }
    }
}

/// Serializable description of an operator; enough to rebuild its weights' shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorDescriptor {
    pub kind: RfKind,
    pub direction: Direction,
    pub t: u32,
    #[serde(rename = "S_h")]
    pub patch_h: Option<usize>,
    #[serde(rename = "S_w")]
    pub patch_w: Option<usize>,
    pub r: Option<usize>,
    pub alpha: Option<usize>,
    #[serde(rename = "C")]
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Stage {
    M2mrf(M2mrfOperator),
    Conv(ParamId),
    Deconv(ParamId),
    MaxPool,
    Bilinear(usize),
    Unpool,
}

/// A reassembly operator with overall rate `2^±t` on `C`-channel maps.
#[derive(Clone, Debug, PartialEq)]
pub struct RfOperator {
    kind: RfKind,
    direction: Direction,
    t: u32,
    channels: usize,
    m2mrf_base: Option<M2mrfConfig>,
    stages: Vec<Stage>,
}

const BASELINE_KERNEL: usize = 3;
const DECONV_KERNEL: usize = 4;

fn kaiming_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// One M2MRF operator with `δ = 2^±t`.
pub fn build_one_step<R: Rng + ?Sized>(
    direction: Direction,
    t: u32,
    base: &M2mrfConfig,
    store: &mut ParamStore,
    prefix: &str,
    rng: &mut R,
) -> Result<RfOperator> {
    if t == 0 {
        return config_err("one-step M2MRF needs t >= 1");
    }
    let cfg = base.with_rate(direction.rate(t));
    let op = M2mrfOperator::new(cfg, store, &format!("{prefix}.s0"), rng)?;
    Ok(RfOperator {
        kind: RfKind::M2mrfOneStep,
        direction,
        t,
        channels: base.channels,
        m2mrf_base: Some(*base),
        stages: vec![Stage::M2mrf(op)],
    })
}

/// `t` chained M2MRF operators with `δ = 2^±1` and independent weights.
pub fn build_cascade<R: Rng + ?Sized>(
    direction: Direction,
    t: u32,
    base: &M2mrfConfig,
    store: &mut ParamStore,
    prefix: &str,
    rng: &mut R,
) -> Result<RfOperator> {
    if t == 0 {
        return config_err("cascade M2MRF needs t >= 1");
    }
    let cfg = base.with_rate(direction.rate(1));
    cfg.validate()?;
    let stages = (0..t)
        .map(|i| M2mrfOperator::new(cfg, store, &format!("{prefix}.s{i}"), rng).map(Stage::M2mrf))
        .collect::<Result<Vec<_>>>()?;
    Ok(RfOperator {
        kind: RfKind::M2mrfCascade,
        direction,
        t,
        channels: base.channels,
        m2mrf_base: Some(*base),
        stages,
    })
}

/// Many-to-one baselines: `t` stacked 3×3/stride-2/pad-1 convolutions or
/// max-pools, one bilinear resize by `2^t`, `t` stacked 4×4/stride-2/pad-1
/// deconvolutions, or `t` unpooling steps.
pub fn build_baseline<R: Rng + ?Sized>(
    kind: RfKind,
    direction: Direction,
    t: u32,
    channels: usize,
    store: &mut ParamStore,
    prefix: &str,
    rng: &mut R,
) -> Result<RfOperator> {
    if kind.is_m2mrf() {
        return config_err(format!("{kind} is not a baseline operator"));
    }
    if !kind.supports(direction) {
        return config_err(format!("{kind} cannot be used for {direction:?}sampling"));
    }
    if t == 0 || channels == 0 {
        return config_err("baseline operators need t >= 1 and at least one channel");
    }
    let c = channels;
    let stages = match kind {
        RfKind::StrideConv => (0..t)
            .map(|i| {
                let std = kaiming_std(BASELINE_KERNEL * BASELINE_KERNEL * c);
                let k = Tensor::randn(&[BASELINE_KERNEL, BASELINE_KERNEL, c, c], std, rng);
                Stage::Conv(store.add(format!("{prefix}.s{i}.kernel"), k))
            })
            .collect(),
        RfKind::Deconv => (0..t)
            .map(|i| {
                let std = kaiming_std(DECONV_KERNEL * DECONV_KERNEL * c / 4);
                let k = Tensor::randn(&[DECONV_KERNEL, DECONV_KERNEL, c, c], std, rng);
                Stage::Deconv(store.add(format!("{prefix}.s{i}.kernel"), k))
            })
            .collect(),
        RfKind::MaxPool => vec![Stage::MaxPool; t as usize],
        RfKind::Unpool => vec![Stage::Unpool; t as usize],
        RfKind::Bilinear => vec![Stage::Bilinear(1 << t)],
        RfKind::M2mrfOneStep | RfKind::M2mrfCascade => unreachable!(),
    };
    Ok(RfOperator {
        kind,
        direction,
        t,
        channels,
        m2mrf_base: None,
        stages,
    })
}

impl RfOperator {
    /// Builds any kind; `m2mrf` supplies patch/reduction/bottleneck for the M2MRF kinds.
    #[allow(clippy::too_many_arguments)]
    pub fn build<R: Rng + ?Sized>(
        kind: RfKind,
        direction: Direction,
        t: u32,
        channels: usize,
        m2mrf: Option<&M2mrfConfig>,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<RfOperator> {
        match kind {
            RfKind::M2mrfOneStep | RfKind::M2mrfCascade => {
                let base = m2mrf
                    .copied()
                    .ok_or_else(|| Error::Config(format!("{kind} needs an M2MRF configuration")))?;
                let base = M2mrfConfig { channels, ..base };
                if kind == RfKind::M2mrfOneStep {
                    build_one_step(direction, t, &base, store, prefix, rng)
                } else {
                    build_cascade(direction, t, &base, store, prefix, rng)
                }
            }
            _ => build_baseline(kind, direction, t, channels, store, prefix, rng),
        }
    }

    pub fn from_descriptor<R: Rng + ?Sized>(desc: &OperatorDescriptor, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<RfOperator> {
        let m2mrf = match (desc.patch_h, desc.patch_w, desc.r, desc.alpha) {
            (Some(patch_h), Some(patch_w), Some(reduction), Some(alpha)) => Some(M2mrfConfig {
                patch_h,
                patch_w,
                reduction,
                alpha,
                rate: SampleRate::ONE,
                channels: desc.channels,
            }),
            _ => None,
        };
        Self::build(desc.kind, desc.direction, desc.t, desc.channels, m2mrf.as_ref(), store, prefix, rng)
    }

    pub fn descriptor(&self) -> OperatorDescriptor {
        let base = self.m2mrf_base;
        OperatorDescriptor {
            kind: self.kind,
            direction: self.direction,
            t: self.t,
            patch_h: base.map(|b| b.patch_h),
            patch_w: base.map(|b| b.patch_w),
            r: base.map(|b| b.reduction),
            alpha: base.map(|b| b.alpha),
            channels: self.channels,
        }
    }

    pub fn kind(&self) -> RfKind {
        self.kind
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rate(&self) -> SampleRate {
        self.direction.rate(self.t)
    }

    /// The M2MRF stages in application order (empty for baselines).
    pub fn m2mrf_stages(&self) -> Vec<&M2mrfOperator> {
        self.stages
            .iter()
            .filter_map(|s| match s {
                Stage::M2mrf(op) => Some(op),
                _ => None,
            })
            .collect()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.stages
            .iter()
            .flat_map(|s| match s {
                Stage::M2mrf(op) => op.param_ids().to_vec(),
                Stage::Conv(k) | Stage::Deconv(k) => vec![*k],
                _ => vec![],
            })
            .collect()
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| match s {
                Stage::M2mrf(op) => op.param_count(),
                Stage::Conv(_) => BASELINE_KERNEL * BASELINE_KERNEL * self.channels * self.channels,
                Stage::Deconv(_) => DECONV_KERNEL * DECONV_KERNEL * self.channels * self.channels,
                _ => 0,
            })
            .sum()
    }

    /// Forward on the tape. Unpooling needs [`RfOperator::forward_unpool`].
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.forward_recording(tape, store, x).map(|(v, _)| v)
    }

    /// Forward that also returns the winner maps of every max-pool stage.
    pub fn forward_recording(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Vec<IndexMap>)> {
        let mut maps = Vec::new();
        let mut cur = x;
        for stage in &self.stages {
            cur = match stage {
                Stage::M2mrf(op) => op.forward(tape, store, cur)?,
                Stage::Conv(k) => {
                    let k = tape.param(store, *k);
                    tape.conv2d(cur, k, 2, 1)?
                }
                Stage::Deconv(k) => {
                    let k = tape.param(store, *k);
                    tape.conv2d_transpose(cur, k, 2, 1)?
                }
                Stage::MaxPool => {
                    let (v, map) = tape.maxpool2d(cur, BASELINE_KERNEL, BASELINE_KERNEL, 2, 1)?;
                    maps.push(map);
                    v
                }
                Stage::Bilinear(factor) => {
                    let (h, w, _) = tape.value(cur).hwc()?;
                    tape.bilinear_resize(cur, h * factor, w * factor)?
                }
                Stage::Unpool => {
                    return contract_err("unpooling needs the index maps of a paired max-pool");
                }
            };
        }
        Ok((cur, maps))
    }

    /// Unpooling by the maps a paired max-pool recorded, consumed last-first.
    pub fn forward_unpool(&self, tape: &mut Tape, x: Var, maps: &[IndexMap]) -> Result<Var> {
        if self.kind != RfKind::Unpool {
            return contract_err(format!("{} is not an unpooling operator", self.kind));
        }
        if maps.len() != self.stages.len() {
            return contract_err(format!(
                "unpooling with t = {} needs {} index maps, got {}",
                self.t,
                self.stages.len(),
                maps.len()
            ));
        }
        maps.iter().rev().try_fold(x, |cur, map| tape.unpool(cur, map))
    }

    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = self.forward(&mut tape, store, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Writes `descriptor.json` and one `M2MT` file per weight into `dir`.
    pub fn save(&self, store: &ParamStore, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("descriptor.json"), serde_json::to_string_pretty(&self.descriptor())?)?;
        for id in self.param_ids() {
            let p = store.get(id);
            p.value.save(dir.join(format!("{}.m2mt", p.name)))?;
        }
        Ok(())
    }

    /// Inverse of [`RfOperator::save`]; returns the operator with its own store.
    pub fn load(dir: impl AsRef<Path>, prefix: &str) -> Result<(RfOperator, ParamStore)> {
        let dir = dir.as_ref();
        let desc: OperatorDescriptor = serde_json::from_slice(&std::fs::read(dir.join("descriptor.json"))?)?;
        let mut store = ParamStore::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let op = RfOperator::from_descriptor(&desc, &mut store, prefix, &mut rng)?;
        store.load_dir(dir)?;
        Ok((op, store))
    }
}

/// Dense matrix of a linear operator on `(h, w, c)` inputs: column `j` is the
/// flattened response to the `j`-th basis tensor.
pub fn materialize_linear_map(op: &RfOperator, store: &ParamStore, h: usize, w: usize, c: usize) -> Result<Tensor> {
    if !op.kind().is_linear() {
        return contract_err(format!("{} is not a linear operator", op.kind()));
    }
    let n = h * w * c;
    if n > 4096 {
        return contract_err(format!("materializing {n} basis responses exceeds the 4096 limit"));
    }
    let mut columns = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = Tensor::zeros(&[h, w, c]);
        e.data_mut()[j] = 1.0;
        columns.push(op.apply(store, &e)?.into_data());
    }
    let rows = columns[0].len();
    let mut m = vec![0.0; rows * n];
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            m[i * n + j] = *v;
        }
    }
    Tensor::new(&[rows, n], m)
}
