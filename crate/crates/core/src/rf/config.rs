use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// A rational spatial sample rate; `< 1` downsamples, `> 1` upsamples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleRate {
    pub num: usize,
    pub den: usize,
}

impl SampleRate {
    pub const ONE: SampleRate = SampleRate { num: 1, den: 1 };

    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 {
            return config_err(format!("sample rate {num}/{den} must be positive"));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// `2^-t`.
    pub fn down(t: u32) -> Self {
        Self { num: 1, den: 1 << t }
    }

    /// `2^t`.
    pub fn up(t: u32) -> Self {
        Self { num: 1 << t, den: 1 }
    }

    /// `rate · n` when it is an integer.
    pub fn scale_exact(self, n: usize) -> Option<usize> {
        (n * self.num).is_multiple_of(self.den).then(|| n * self.num / self.den)
    }

    /// `round(rate · n)`, halves rounding up.
    pub fn scale_round(self, n: usize) -> usize {
        (2 * n * self.num + self.den) / (2 * self.den)
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn compose(self, other: SampleRate) -> SampleRate {
        SampleRate::new(self.num * other.num, self.den * other.den).expect("positive")
    }
}

impl fmt::Display for SampleRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub const DEFAULT_PATCH: usize = 8;
pub const DEFAULT_REDUCTION: usize = 4;
pub const DEFAULT_ALPHA: usize = 64;

/// Shape hyper-parameters of one M2MRF operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct M2mrfConfig {
    /// Patch height `S_h` in input cells.
    pub patch_h: usize,
    /// Patch width `S_w` in input cells.
    pub patch_w: usize,
    /// Channel reduction `r` of the compressor.
    pub reduction: usize,
    /// Bottleneck factor `α` of the factorized projection.
    pub alpha: usize,
    pub rate: SampleRate,
    pub channels: usize,
}

impl M2mrfConfig {
    /// Defaults `S_h = S_w = 8`, `r = 4`, `α = 64`.
    pub fn with_defaults(channels: usize, rate: SampleRate) -> Self {
        Self {
            patch_h: DEFAULT_PATCH,
            patch_w: DEFAULT_PATCH,
            reduction: DEFAULT_REDUCTION,
            alpha: DEFAULT_ALPHA,
            rate,
            channels,
        }
    }

    pub fn with_rate(self, rate: SampleRate) -> Self {
        Self { rate, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            patch_h,
            patch_w,
            reduction,
            alpha,
            rate,
            channels,
        } = *self;
        if patch_h == 0 || patch_w == 0 || reduction == 0 || alpha == 0 || channels == 0 {
            return config_err(format!("M2MRF sizes must be positive: {self:?}"));
        }
        if channels % reduction != 0 {
            return config_err(format!("channels {channels} not divisible by r = {reduction}"));
        }
        if (patch_h * patch_w * channels) % (alpha * reduction) != 0 {
            return config_err(format!(
                "bottleneck width S_h·S_w·C/(α·r) = {}·{}·{}/({}·{}) is not an integer",
                patch_h, patch_w, channels, alpha, reduction
            ));
        }
        for side in [patch_h, patch_w] {
            match rate.scale_exact(side) {
                Some(n) if n > 0 => {}
                _ => {
                    return config_err(format!(
                        "rate {rate} times patch side {side} is not a positive integer"
                    ))
                }
            }
        }
        Ok(())
    }

    /// Channels after the compressor, `C / r`.
    pub fn compressed(&self) -> usize {
        self.channels / self.reduction
    }

    /// Input cells per patch, `N = S_h·S_w`.
    pub fn n(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn out_patch_h(&self) -> usize {
        self.rate.scale_exact(self.patch_h).expect("validated")
    }

    pub fn out_patch_w(&self) -> usize {
        self.rate.scale_exact(self.patch_w).expect("validated")
    }

    /// Output cells per patch, `M = δS_h·δS_w`.
    pub fn m(&self) -> usize {
        self.out_patch_h() * self.out_patch_w()
    }

    /// Inner width of the factorized projection, `N·C/(α·r)`.
    pub fn bottleneck(&self) -> usize {
        self.n() * self.channels / (self.alpha * self.reduction)
    }

    /// Rows of the projection input, `N·C/r`.
    pub fn patch_len(&self) -> usize {
        self.n() * self.compressed()
    }

    /// Columns of the projection output, `M·C/r`.
    pub fn out_patch_len(&self) -> usize {
        self.m() * self.compressed()
    }

    /// `C·(C/r) + (N·C/r)·(N·C/(α·r)) + (N·C/(α·r))·(M·C/r) + (C/r)·C`.
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let cr = self.compressed();
        c * cr + self.patch_len() * self.bottleneck() + self.bottleneck() * self.out_patch_len() + cr * c
    }

    /// Entries of the dense per-patch matrix the factorization replaces.
    pub fn dense_core_count(&self) -> usize {
        self.patch_len() * self.out_patch_len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_arithmetic() {
        let half = SampleRate::down(1);
        assert_eq!(half.scale_exact(8), Some(4));
        assert_eq!(half.scale_exact(7), None);
        assert_eq!(half.scale_round(7), 4);
        assert_eq!(SampleRate::up(2).scale_exact(3), Some(12));
        assert_eq!(SampleRate::new(2, 4).unwrap(), half);
        assert_eq!(half.compose(half), SampleRate::down(2));
        assert_eq!(half.to_string(), "1/2");
    }

    #[test]
    fn default_dimension_algebra() {
        let cfg = M2mrfConfig::with_defaults(32, SampleRate::down(1));
        cfg.validate().unwrap();
        assert_eq!(cfg.compressed(), 8);
        assert_eq!(cfg.n(), 64);
        assert_eq!(cfg.m(), 16);
        assert_eq!(cfg.patch_len(), 512);
        assert_eq!(cfg.bottleneck(), 8);
        assert_eq!(cfg.out_patch_len(), 128);
        assert_eq!(cfg.param_count(), 5632);
        assert_eq!(cfg.with_rate(SampleRate::down(2)).param_count(), 4864);
    }

    #[test]
    fn rejects_invalid_configs() {
        let base = M2mrfConfig::with_defaults(32, SampleRate::down(1));
        assert!(M2mrfConfig { channels: 30, ..base }.validate().is_err());
        assert!(M2mrfConfig { alpha: 3, ..base }.validate().is_err());
        assert!(M2mrfConfig { alpha: 0, ..base }.validate().is_err());
        assert!(base.with_rate(SampleRate::down(4)).validate().is_err());
        assert!(M2mrfConfig { patch_h: 3, ..base }.validate().is_err());
    }
}
