use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spatial isometries; rotations are counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentOp {
    Identity,
    HFlip,
    VFlip,
    Rot90,
    Rot180,
    Rot270,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 6] = [
        AugmentOp::Identity,
        AugmentOp::HFlip,
        AugmentOp::VFlip,
        AugmentOp::Rot90,
        AugmentOp::Rot180,
        AugmentOp::Rot270,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentOp::Identity => "identity",
            AugmentOp::HFlip => "hflip",
            AugmentOp::VFlip => "vflip",
            AugmentOp::Rot90 => "rot90",
            AugmentOp::Rot180 => "rot180",
            AugmentOp::Rot270 => "rot270",
        }
    }

    /// Applies the map to an `(H, W, C)` tensor.
    pub fn apply(self, t: &Tensor) -> Result<Tensor> {
        let (h, w, c) = t.hwc()?;
        let (oh, ow) = match self {
            AugmentOp::Rot90 | AugmentOp::Rot270 => (w, h),
            _ => (h, w),
        };
        let src = |i: usize, j: usize| -> (usize, usize) {
            match self {
                AugmentOp::Identity => (i, j),
                AugmentOp::HFlip => (i, w - 1 - j),
                AugmentOp::VFlip => (h - 1 - i, j),
                AugmentOp::Rot90 => (j, w - 1 - i),
                AugmentOp::Rot180 => (h - 1 - i, w - 1 - j),
                AugmentOp::Rot270 => (h - 1 - j, i),
            }
        };
        let d = t.data();
        let mut out = Vec::with_capacity(d.len());
        for i in 0..oh {
            for j in 0..ow {
                let (y, x) = src(i, j);
                out.extend_from_slice(&d[(y * w + x) * c..][..c]);
            }
        }
        Tensor::new(&[oh, ow, c], out)
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation {s:?}")))
    }
}

/// Transforms image and masks with the same spatial map.
pub fn augment(sample: &Sample, op: AugmentOp) -> Result<Sample> {
    Ok(Sample {
        image: op.apply(&sample.image)?,
        masks: op.apply(&sample.masks)?,
        seed: sample.seed,
        index: sample.index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor {
        Tensor::new(&[h, w, 1], (0..h * w).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn rot90_moves_top_right_to_top_left() {
        let x = ramp(2, 3);
        let y = AugmentOp::Rot90.apply(&x).unwrap();
        assert_eq!(y.shape(), &[3, 2, 1]);
        assert_eq!(y.data(), &[2.0, 5.0, 1.0, 4.0, 0.0, 3.0]);
    }

    #[test]
    fn group_laws() {
        let x = ramp(3, 5);
        let r = |op: AugmentOp, t: &Tensor| op.apply(t).unwrap();
        assert_eq!(r(AugmentOp::HFlip, &r(AugmentOp::HFlip, &x)), x);
        assert_eq!(r(AugmentOp::VFlip, &r(AugmentOp::VFlip, &x)), x);
        let mut y = x.clone();
        for _ in 0..4 {
            y = r(AugmentOp::Rot90, &y);
        }
        assert_eq!(y, x);
        assert_eq!(r(AugmentOp::Rot270, &r(AugmentOp::Rot90, &x)), x);
        assert_eq!(r(AugmentOp::Rot90, &r(AugmentOp::Rot90, &x)), r(AugmentOp::Rot180, &x));
    }

    #[test]
    fn parse() {
        assert_eq!("rot270".parse::<AugmentOp>().unwrap(), AugmentOp::Rot270);
        assert!("shear".parse::<AugmentOp>().is_err());
    }
}
