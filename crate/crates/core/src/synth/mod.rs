//! Deterministic synthetic tiny-lesion segmentation data.
//!
//! Each sample is an RGB image in `[0, 1]` with one binary mask per lesion
//! class. Lesions are disks drawn as soft Gaussian bumps whose half-maximum
//! contour is exactly the mask boundary. Distinct lesions never touch, even
//! diagonally, so every lesion is one 4-connected mask component.

pub mod augment;
pub mod components;
pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

pub use augment::{augment, AugmentOp};
pub use components::{label_components, Components};
pub use io::{load_dataset, load_sample, save_dataset, save_sample, Manifest};

/// Area threshold (pixels) below which a component counts as tiny.
pub const TINY_AREA: usize = 16;

/// Attempts to place a lesion before giving up on it.
const PLACEMENT_ATTEMPTS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LesionClass {
    EX,
    HE,
    SE,
    MA,
}

impl LesionClass {
    /// Mask channel order.
    pub const ALL: [LesionClass; 4] = [LesionClass::EX, LesionClass::HE, LesionClass::SE, LesionClass::MA];

    pub fn channel(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LesionClass::EX => "EX",
            LesionClass::HE => "HE",
            LesionClass::SE => "SE",
            LesionClass::MA => "MA",
        }
    }
}

pub fn class_names() -> Vec<&'static str> {
    LesionClass::ALL.iter().map(|c| c.name()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub class: LesionClass,
    /// Disk radius bounds in pixels; small radii are favoured.
    pub radius_range: (f64, f64),
    /// Inclusive bounds on lesions per image.
    pub count_range: (usize, usize),
    /// Chance a lesion is placed next to an already placed one.
    pub cluster_probability: f64,
    pub tint: [f64; 3],
    /// Blend weight of the tint at the bump centre.
    pub amplitude: f64,
}

impl LesionSpec {
    pub fn validate(&self) -> Result<()> {
        let (r0, r1) = self.radius_range;
        let (c0, c1) = self.count_range;
        if !(r0 >= 1.0 && r0 <= r1) {
            return config_err(format!("{}: bad radius range {r0}..{r1}", self.class.name()));
        }
        if c0 > c1 {
            return config_err(format!("{}: bad count range {c0}..{c1}", self.class.name()));
        }
        if !(0.0..=1.0).contains(&self.cluster_probability) || !(0.0..=1.0).contains(&self.amplitude) {
            return config_err(format!("{}: probabilities must lie in [0, 1]", self.class.name()));
        }
        Ok(())
    }
}

/// Tiny-heavy defaults, one spec per class in mask-channel order.
pub fn default_specs() -> Vec<LesionSpec> {
    vec![
        LesionSpec {
            class: LesionClass::EX,
            radius_range: (1.0, 5.0),
            count_range: (2, 8),
            cluster_probability: 0.5,
            tint: [0.95, 0.85, 0.35],
            amplitude: 0.9,
        },
        LesionSpec {
            class: LesionClass::HE,
            radius_range: (1.5, 6.0),
            count_range: (1, 4),
            cluster_probability: 0.3,
            tint: [0.75, 0.06, 0.05],
            amplitude: 0.9,
        },
        LesionSpec {
            class: LesionClass::SE,
            radius_range: (3.0, 7.0),
            count_range: (1, 2),
            cluster_probability: 0.0,
            tint: [0.92, 0.88, 0.80],
            amplitude: 0.8,
        },
        LesionSpec {
            class: LesionClass::MA,
            radius_range: (1.0, 2.2),
            count_range: (2, 6),
            cluster_probability: 0.4,
            tint: [0.30, 0.04, 0.03],
            amplitude: 0.9,
        },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `(H, W, 3)` in `[0, 1]`.
    pub image: Tensor,
    /// `(H, W, 4)` binary, channels in [`LesionClass::ALL`] order.
    pub masks: Tensor,
    pub seed: u64,
    pub index: usize,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }
}

/// Random stream for sample `index` of the dataset generated from `seed`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Clone, Copy, Debug)]
struct Placed {
    cy: usize,
    cx: usize,
    radius: f64,
}

fn disk_offsets(radius: f64) -> Vec<(isize, isize)> {
    let k = radius.floor() as isize;
    let r2 = radius * radius;
    let mut out = Vec::new();
    for dy in -k..=k {
        for dx in -k..=k {
            if ((dy * dy + dx * dx) as f64) <= r2 {
                out.push((dy, dx));
            }
        }
    }
    out
}

fn background(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = [0.55, 0.27, 0.13];
    let waves: Vec<([f64; 3], f64, f64, f64)> = (0..3)
        .map(|_| {
            let amp = [
                rng.random_range(0.02..0.06),
                rng.random_range(0.01..0.04),
                rng.random_range(0.005..0.02),
            ];
            let fy = rng.random_range(0.5..2.0) * std::f64::consts::TAU / h as f64;
            let fx = rng.random_range(0.5..2.0) * std::f64::consts::TAU / w as f64;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (amp, fy, fx, phase)
        })
        .collect();
    let mut img = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v: f64 = waves
                    .iter()
                    .map(|(a, fy, fx, ph)| a[ch] * (fy * y as f64 + fx * x as f64 + ph).cos())
                    .sum();
                img[(y * w + x) * 3 + ch] = base[ch] + v;
            }
        }
    }
    img
}

fn sample_radius(spec: &LesionSpec, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = spec.radius_range;
    let u: f64 = rng.random();
    lo + (hi - lo) * u * u
}

fn propose_centre(
    spec: &LesionSpec,
    radius: f64,
    placed: &[Placed],
    h: usize,
    w: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, usize)> {
    let margin = radius.floor() as usize;
    if 2 * margin >= h || 2 * margin >= w {
        return None;
    }
    if !placed.is_empty() && rng.random::<f64>() < spec.cluster_probability {
        let anchor = placed[rng.random_range(0..placed.len())];
        let dist = anchor.radius + radius + 2.0 + rng.random_range(0.0..3.0);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let cy = (anchor.cy as f64 + dist * theta.sin()).round();
        let cx = (anchor.cx as f64 + dist * theta.cos()).round();
        let inside = |v: f64, n: usize| v >= margin as f64 && v < (n - margin) as f64;
        return (inside(cy, h) && inside(cx, w)).then_some((cy as usize, cx as usize));
    }
    Some((
        rng.random_range(margin..h - margin),
        rng.random_range(margin..w - margin),
    ))
}

/// Generates one sample from its own random stream.
pub fn generate_sample(h: usize, w: usize, specs: &[LesionSpec], seed: u64, index: usize) -> Result<Sample> {
    if h == 0 || w == 0 || !h.is_multiple_of(4) || !w.is_multiple_of(4) {
        return config_err(format!("image sides must be positive multiples of 4, got {h}x{w}"));
    }
    for s in specs {
        s.validate()?;
    }
    let mut rng = sample_rng(seed, index);
    let mut img = background(h, w, &mut rng);
    let mut masks = vec![0.0; h * w * LesionClass::ALL.len()];
    // 0 = free; occupied pixels block their 8-neighbourhood for new lesions
    let mut occupied = vec![false; h * w];
    let mut placed: Vec<Placed> = Vec::new();

    for spec in specs {
        let count = rng.random_range(spec.count_range.0..=spec.count_range.1);
        for _ in 0..count {
            let radius = sample_radius(spec, &mut rng);
            let offsets = disk_offsets(radius);
            let mut centre = None;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let Some((cy, cx)) = propose_centre(spec, radius, &placed, h, w, &mut rng) else {
                    continue;
                };
                let clear = offsets.iter().all(|&(dy, dx)| {
                    let (y, x) = (cy as isize + dy, cx as isize + dx);
                    (-1..=1).all(|ny| {
                        (-1..=1).all(|nx| {
                            let (yy, xx) = (y + ny, x + nx);
                            yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize || !occupied[yy as usize * w + xx as usize]
                        })
                    })
                });
                if clear {
                    centre = Some((cy, cx));
                    break;
                }
            }
            let Some((cy, cx)) = centre else { continue };
            for &(dy, dx) in &offsets {
                let (y, x) = ((cy as isize + dy) as usize, (cx as isize + dx) as usize);
                occupied[y * w + x] = true;
                masks[(y * w + x) * 4 + spec.class.channel()] = 1.0;
            }
            draw_bump(&mut img, h, w, cy, cx, radius, spec);
            placed.push(Placed { cy, cx, radius });
        }
    }
    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(Sample {
        image: Tensor::new(&[h, w, 3], img)?,
        masks: Tensor::new(&[h, w, 4], masks)?,
        seed,
        index,
    })
}

/// Blends the tint with weight `amplitude · 2^(−(d/r)²)`, which is half the
/// peak weight exactly on the mask boundary.
fn draw_bump(img: &mut [f64], h: usize, w: usize, cy: usize, cx: usize, radius: f64, spec: &LesionSpec) {
    let reach = (2.0 * radius).ceil() as isize;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let (y, x) = (cy as isize + dy, cx as isize + dx);
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                continue;
            }
            let d2 = (dy * dy + dx * dx) as f64 / (radius * radius);
            let a = spec.amplitude * (-d2).exp2();
            let px = &mut img[(y as usize * w + x as usize) * 3..][..3];
            for (v, t) in px.iter_mut().zip(spec.tint) {
                *v = *v * (1.0 - a) + t * a;
            }
        }
    }
}

pub fn generate_dataset(n: usize, h: usize, w: usize, specs: &[LesionSpec], seed: u64) -> Result<Vec<Sample>> {
    (0..n).map(|i| generate_sample(h, w, specs, seed, i)).collect()
}
