//! Many-to-many reassembly of features.
//!
//! Pipeline for an `(H, W, C)` input:
//!
//! 1. channel compressor, a bias-free 1×1 convolution `C → C/r`;
//! 2. zero-pad to whole `S_h × S_w` patches and flatten each patch to a row `p`;
//! 3. `q = (p · W′) · W″` for every patch with one shared pair of matrices,
//!    `W′: (N·C/r) × (N·C/(α·r))` and `W″: (N·C/(α·r)) × (M·C/r)`;
//! 4. lay the `δS_h × δS_w` output patches back on the grid and crop to
//!    `round(δH) × round(δW)`;
//! 5. channel recover, a bias-free 1×1 convolution `C/r → C`.
//!
//! There is no nonlinearity anywhere, so the whole operator is a linear map.

use rand::Rng;

use super::config::M2mrfConfig;
use super::patches::{grid_len, merge_index, partition_index};
use crate::autograd::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Standard deviation of the Gaussian initialization of every M2MRF weight.
pub const INIT_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct M2mrfOperator {
    pub config: M2mrfConfig,
    pub compressor: ParamId,
    pub w_prime: ParamId,
    pub w_dprime: ParamId,
    pub recover: ParamId,
}

impl M2mrfOperator {
    /// Registers the four weights under `prefix` with N(0, 0.01²) values.
    pub fn new<R: Rng + ?Sized>(config: M2mrfConfig, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let [a, b, c, d] = Self::weight_shapes(&config);
        Ok(Self {
            config,
            compressor: store.add(format!("{prefix}.compressor"), Tensor::randn(&a, INIT_STD, rng)),
            w_prime: store.add(format!("{prefix}.w_prime"), Tensor::randn(&b, INIT_STD, rng)),
            w_dprime: store.add(format!("{prefix}.w_dprime"), Tensor::randn(&c, INIT_STD, rng)),
            recover: store.add(format!("{prefix}.recover"), Tensor::randn(&d, INIT_STD, rng)),
        })
    }

    /// Shapes of compressor, `W′`, `W″` and recover.
    pub fn weight_shapes(config: &M2mrfConfig) -> [Vec<usize>; 4] {
        let (c, cr) = (config.channels, config.compressed());
        [
            vec![1, 1, c, cr],
            vec![config.patch_len(), config.bottleneck()],
            vec![config.bottleneck(), config.out_patch_len()],
            vec![1, 1, cr, c],
        ]
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.compressor, self.w_prime, self.w_dprime, self.recover]
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    /// Spatial output size for an `h × w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (self.config.rate.scale_round(h), self.config.rate.scale_round(w))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let cfg = &self.config;
        let (h, w, c) = tape.value(x).hwc()?;
        if c != cfg.channels {
            return shape_err(format!(
                "M2MRF built for {} channels got input {:?}",
                cfg.channels,
                tape.shape(x)
            ));
        }
        let cr = cfg.compressed();
        let compressor = tape.param(store, self.compressor);
        let xc = tape.conv2d(x, compressor, 1, 0)?;

        let (rows_shape, rows_index) = partition_index(h, w, cr, cfg.patch_h, cfg.patch_w);
        let p = tape.gather(xc, &rows_shape, rows_index)?;
        let w1 = tape.param(store, self.w_prime);
        let w2 = tape.param(store, self.w_dprime);
        let z = tape.matmul(p, w1)?;
        let q = tape.matmul(z, w2)?;

        let (gh, gw) = (grid_len(h, cfg.patch_h), grid_len(w, cfg.patch_w));
        let (out_h, out_w) = self.output_hw(h, w);
        if out_h == 0 || out_w == 0 {
            return shape_err(format!("M2MRF at rate {} maps {h}x{w} to an empty map", cfg.rate));
        }
        let index = merge_index(gh, gw, cfg.out_patch_h(), cfg.out_patch_w(), cr, out_h, out_w)?;
        let yc = tape.gather(q, &[out_h, out_w, cr], index)?;

        let recover = tape.param(store, self.recover);
        tape.conv2d(yc, recover, 1, 0)
    }

    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = self.forward(&mut tape, store, xv)?;
        Ok(tape.value(y).clone())
    }

    /// The implicit dense per-patch matrix `W′·W″`.
    pub fn patch_matrix(&self, store: &ParamStore) -> Result<Tensor> {
        crate::kernels::matmul(store.value(self.w_prime), store.value(self.w_dprime))
    }
}
