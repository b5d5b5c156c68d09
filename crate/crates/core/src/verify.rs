//! Self-checks of the operator algebra, gradients and shapes, returned as
//! named pass/fail records.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::gradcheck::{grad_check, grad_check_param, DEFAULT_EPS};
use crate::kernels::{matmul, maxpool2d_argmax};
use crate::net::{dice_loss, MiniFusionNet, Variant};
use crate::param::ParamStore;
use crate::rf::config::SampleRate;
use crate::rf::{build_cascade, build_one_step, materialize_linear_map, Direction, M2mrfConfig, M2mrfOperator, RfKind, RfOperator};
use crate::tensor::Tensor;

/// Maximum relative error accepted by the gradient suite.
pub const GRADCHECK_TOL: f64 = 1e-6;
/// Maximum absolute error between the operator and its materialized matrix.
pub const ORACLE_TOL: f64 = 1e-10;
/// Maximum absolute error of the identity configuration.
pub const IDENTITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

/// Parameter counts at the default patch/reduction/bottleneck with C = 32,
/// compared against the number of stored weights.
pub fn param_checks() -> Result<Vec<Check>> {
    let base = M2mrfConfig::with_defaults(32, SampleRate::ONE);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cases = [
        ("one-step δ=1/2", RfKind::M2mrfOneStep, 1, 5632),
        ("one-step δ=1/4", RfKind::M2mrfOneStep, 2, 4864),
        ("cascade t=2", RfKind::M2mrfCascade, 2, 11264),
    ];
    let mut out = Vec::new();
    for (name, kind, t, expected) in cases {
        let mut store = ParamStore::new();
        let op = RfOperator::build(kind, Direction::Down, t, 32, Some(&base), &mut store, "op", &mut rng)?;
        let formula = op.param_count();
        let stored = store.numel();
        out.push(Check::new(
            format!("params {name}"),
            formula == expected && stored == expected,
            format!("{formula} (stored {stored}, expected {expected})"),
        ));
    }
    Ok(out)
}

/// Configuration of the materialized-matrix oracle: 8×8×2 input, 4×4
/// patches, no compression, halving.
pub fn oracle_config() -> M2mrfConfig {
    M2mrfConfig {
        patch_h: 4,
        patch_w: 4,
        reduction: 1,
        alpha: 1,
        rate: SampleRate::down(1),
        channels: 2,
    }
}

/// Applies the operator to `inputs` random tensors and compares with the
/// dense matrix built from basis responses.
pub fn oracle_check(inputs: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = oracle_config();
    let mut store = ParamStore::new();
    let op = RfOperator::build(RfKind::M2mrfOneStep, Direction::Down, 1, 2, Some(&cfg), &mut store, "oracle", &mut rng)?;
    let m = materialize_linear_map(&op, &store, 8, 8, 2)?;
    let mut worst: f64 = 0.0;
    for _ in 0..inputs {
        let x = Tensor::uniform(&[8, 8, 2], -1.0, 1.0, &mut rng);
        let y = op.apply(&store, &x)?;
        let col = x.reshape(&[128, 1])?;
        let via_matrix = matmul(&m, &col)?;
        worst = worst.max(y.reshape(&[32, 1])?.max_abs_diff(&via_matrix));
    }
    Ok(Check::new(
        "linear-map oracle",
        m.shape() == [32, 128] && worst < ORACLE_TOL,
        format!("matrix {:?}, max abs diff {worst:.3e} over {inputs} inputs", m.shape()),
    ))
}

/// Rate 1 with identity compressor, recover and patch matrices.
pub fn identity_check(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = M2mrfConfig {
        patch_h: 4,
        patch_w: 4,
        reduction: 1,
        alpha: 1,
        rate: SampleRate::ONE,
        channels: 3,
    };
    let mut store = ParamStore::new();
    let op = M2mrfOperator::new(cfg, &mut store, "id", &mut rng)?;
    let eye = Tensor::eye(3).reshape(&[1, 1, 3, 3])?;
    store.set_value(op.compressor, eye.clone())?;
    store.set_value(op.recover, eye)?;
    store.set_value(op.w_prime, Tensor::eye(cfg.patch_len()))?;
    store.set_value(op.w_dprime, Tensor::eye(cfg.patch_len()))?;
    let mut worst: f64 = 0.0;
    for (h, w) in [(8, 8), (12, 20), (7, 5)] {
        let x = Tensor::uniform(&[h, w, 3], -100.0, 100.0, &mut rng);
        worst = worst.max(op.apply(&store, &x)?.max_abs_diff(&x));
    }
    Ok(Check::new(
        "identity configuration",
        worst < IDENTITY_TOL,
        format!("max abs diff {worst:.3e}"),
    ))
}

/// Perturbs every input pixel outside one patch and requires the matching
/// output patch to stay bit-identical.
pub fn locality_check(trials: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = M2mrfConfig {
        patch_h: 4,
        patch_w: 4,
        reduction: 2,
        alpha: 2,
        rate: SampleRate::down(1),
        channels: 4,
    };
    let mut store = ParamStore::new();
    let op = M2mrfOperator::new(cfg, &mut store, "loc", &mut rng)?;
    let (h, w, c) = (16, 12, 4);
    let (gw, oph, opw) = (w / 4, cfg.out_patch_h(), cfg.out_patch_w());
    let mut max_change: f64 = 0.0;
    for _ in 0..trials {
        let x = Tensor::uniform(&[h, w, c], -1.0, 1.0, &mut rng);
        let l = rng.random_range(0..(h / 4) * gw);
        let (py, px) = (l / gw, l % gw);
        let mut xp = x.clone();
        for y in 0..h {
            for xx in 0..w {
                if y / 4 == py && xx / 4 == px {
                    continue;
                }
                for ch in 0..c {
                    xp.data_mut()[(y * w + xx) * c + ch] += rng.random_range(-10.0..10.0);
                }
            }
        }
        let (a, b) = (op.apply(&store, &x)?, op.apply(&store, &xp)?);
        let ow = a.shape()[1];
        for y in py * oph..(py + 1) * oph {
            for xx in px * opw..(px + 1) * opw {
                for ch in 0..c {
                    let i = (y * ow + xx) * c + ch;
                    max_change = max_change.max((a.data()[i] - b.data()[i]).abs());
                }
            }
        }
    }
    Ok(Check::new(
        "patch locality",
        max_change == 0.0,
        format!("max change inside the untouched patch {max_change:e} over {trials} trials"),
    ))
}

type ScalarFn = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

/// `Σ y ⊙ r` for a fixed random `r`, turning any map into a scalar.
fn probe(tape: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let rv = tape.leaf(r.clone());
    let p = tape.mul(y, rv)?;
    Ok(tape.sum(p))
}

fn away_from_zero(t: Tensor, margin: f64) -> Tensor {
    t.map(|v| if v.abs() < margin { v.signum() * margin + v } else { v })
}

fn distinct_values(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - n as f64 * 0.05).collect();
    vals.shuffle(rng);
    Tensor::new(shape, vals).expect("shape matches")
}

fn input_cases(rng: &mut ChaCha8Rng) -> Result<Vec<(&'static str, Tensor, ScalarFn)>> {
    let mut cases: Vec<(&'static str, Tensor, ScalarFn)> = Vec::new();
    let u = |shape: &[usize], rng: &mut ChaCha8Rng| Tensor::uniform(shape, -1.0, 1.0, rng);

    let other = u(&[3, 4, 2], rng);
    let r = u(&[3, 4, 2], rng);
    let positive = Tensor::uniform(&[3, 4, 2], 1.0, 2.0, rng);
    macro_rules! binary {
        ($name:literal, $x:expr, $body:expr) => {{
            let (o, r) = (other.clone(), r.clone());
            let p = positive.clone();
            #[allow(clippy::redundant_closure_call)]
            let f: ScalarFn = Box::new(move |t, x| {
                let ov = t.leaf(o.clone());
                let pv = t.leaf(p.clone());
                let y = ($body)(t, x, ov, pv)?;
                probe(t, y, &r)
            });
            cases.push(($name, $x, f));
        }};
    }
    let x = u(&[3, 4, 2], rng);
    binary!("add (left)", x.clone(), |t: &mut Tape, x, o, _| t.add(x, o));
    binary!("add (right)", x.clone(), |t: &mut Tape, x, o, _| t.add(o, x));
    binary!("sub (left)", x.clone(), |t: &mut Tape, x, o, _| t.sub(x, o));
    binary!("sub (right)", x.clone(), |t: &mut Tape, x, o, _| t.sub(o, x));
    binary!("mul (left)", x.clone(), |t: &mut Tape, x, o, _| t.mul(x, o));
    binary!("mul (right)", x.clone(), |t: &mut Tape, x, o, _| t.mul(o, x));
    binary!("div (numerator)", x.clone(), |t: &mut Tape, x, _, p| t.div(x, p));
    binary!("div (denominator)", positive.clone(), |t: &mut Tape, x, o, _| t.div(o, x));
    binary!("scale", x.clone(), |t: &mut Tape, x, _, _| Ok::<_, crate::Error>(t.scale(x, -1.7)));
    binary!("add_scalar", x.clone(), |t: &mut Tape, x, _, _| Ok::<_, crate::Error>(t.add_scalar(x, 0.3)));
    binary!("sigmoid", x.clone(), |t: &mut Tape, x, _, _| Ok::<_, crate::Error>(t.sigmoid(x)));
    binary!("relu", away_from_zero(x.clone(), 0.05), |t: &mut Tape, x, _, _| Ok::<_, crate::Error>(t.relu(x)));
    binary!("reshape", x.clone(), |t: &mut Tape, x, _, _| {
        let y = t.reshape(x, &[4, 3, 2])?;
        t.reshape(y, &[3, 4, 2])
    });

    let fixed = |f: ScalarFn| f;
    cases.push(("sum", x.clone(), fixed(Box::new(|t, x| Ok(t.sum(x))))));
    cases.push((
        "mean",
        x.clone(),
        fixed(Box::new(|t, x| {
            let s = t.sigmoid(x);
            Ok(t.mean(s))
        })),
    ));
    let rk = u(&[2], rng);
    cases.push((
        "channel_sum",
        x.clone(),
        fixed(Box::new(move |t, x| {
            let y = t.channel_sum(x);
            probe(t, y, &rk)
        })),
    ));
    let index: Vec<Option<usize>> = (0..30).map(|i| (i % 7 != 3).then_some((i * 5) % 24)).collect();
    let rg = u(&[5, 6], rng);
    cases.push((
        "gather",
        x.clone(),
        fixed(Box::new(move |t, x| {
            let y = t.gather(x, &[5, 6], index.clone())?;
            probe(t, y, &rg)
        })),
    ));

    let b = u(&[4, 3], rng);
    let rm = u(&[5, 3], rng);
    cases.push((
        "matmul (left)",
        u(&[5, 4], rng),
        fixed(Box::new(move |t, x| {
            let bv = t.leaf(b.clone());
            let y = t.matmul(x, bv)?;
            probe(t, y, &rm)
        })),
    ));
    let a = u(&[5, 4], rng);
    let rm = u(&[5, 3], rng);
    cases.push((
        "matmul (right)",
        u(&[4, 3], rng),
        fixed(Box::new(move |t, x| {
            let av = t.leaf(a.clone());
            let y = t.matmul(av, x)?;
            probe(t, y, &rm)
        })),
    ));

    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let k = u(&[3, 3, 2, 3], rng);
        let x = u(&[5, 6, 2], rng);
        let out = crate::kernels::conv2d(&x, &k, stride, pad)?;
        let rc = u(out.shape(), rng);
        let (k2, rc2) = (k.clone(), rc.clone());
        cases.push((
            if stride == 1 && pad == 1 {
                "conv2d input (s1 p1)"
            } else if stride == 2 {
                "conv2d input (s2 p1)"
            } else {
                "conv2d input (s1 p0)"
            },
            x.clone(),
            fixed(Box::new(move |t, x| {
                let kv = t.leaf(k2.clone());
                let y = t.conv2d(x, kv, stride, pad)?;
                probe(t, y, &rc2)
            })),
        ));
        cases.push((
            if stride == 1 && pad == 1 {
                "conv2d kernel (s1 p1)"
            } else if stride == 2 {
                "conv2d kernel (s2 p1)"
            } else {
                "conv2d kernel (s1 p0)"
            },
            k,
            fixed(Box::new(move |t, k| {
                let xv = t.leaf(x.clone());
                let y = t.conv2d(xv, k, stride, pad)?;
                probe(t, y, &rc)
            })),
        ));
    }

    let k = u(&[4, 4, 2, 3], rng);
    let x = u(&[3, 4, 2], rng);
    let rc = u(crate::kernels::conv2d_transpose(&x, &k, 2, 1)?.shape(), rng);
    let (k2, rc2) = (k.clone(), rc.clone());
    cases.push((
        "conv2d_transpose input",
        x.clone(),
        fixed(Box::new(move |t, x| {
            let kv = t.leaf(k2.clone());
            let y = t.conv2d_transpose(x, kv, 2, 1)?;
            probe(t, y, &rc2)
        })),
    ));
    cases.push((
        "conv2d_transpose kernel",
        k,
        fixed(Box::new(move |t, k| {
            let xv = t.leaf(x.clone());
            let y = t.conv2d_transpose(xv, k, 2, 1)?;
            probe(t, y, &rc)
        })),
    ));

    let xp = distinct_values(&[5, 6, 2], rng);
    let rp = u(maxpool2d_argmax(&xp, 3, 3, 2, 1)?.0.shape(), rng);
    cases.push((
        "maxpool2d",
        xp.clone(),
        fixed(Box::new(move |t, x| {
            let (y, _) = t.maxpool2d(x, 3, 3, 2, 1)?;
            probe(t, y, &rp)
        })),
    ));
    let (pooled, map) = maxpool2d_argmax(&xp, 3, 3, 2, 1)?;
    let ru = u(&[5, 6, 2], rng);
    cases.push((
        "unpool",
        u(pooled.shape(), rng),
        fixed(Box::new(move |t, x| {
            let y = t.unpool(x, &map)?;
            probe(t, y, &ru)
        })),
    ));

    for (oh, ow, name) in [(8, 12, "bilinear up"), (2, 3, "bilinear down"), (5, 7, "bilinear ragged")] {
        let rb = u(&[oh, ow, 2], rng);
        cases.push((
            name,
            u(&[4, 6, 2], rng),
            fixed(Box::new(move |t, x| {
                let y = t.bilinear_resize(x, oh, ow)?;
                probe(t, y, &rb)
            })),
        ));
    }

    let gt = Tensor::new(&[4, 4, 2], (0..32).map(|i| f64::from(i % 3 == 0)).collect())?;
    cases.push((
        "dice_loss",
        Tensor::uniform(&[4, 4, 2], 0.1, 0.9, rng),
        fixed(Box::new(move |t, p| {
            let g = t.leaf(gt.clone());
            dice_loss(t, p, g)
        })),
    ));
    Ok(cases)
}

fn small_m2mrf(patch: usize) -> M2mrfConfig {
    M2mrfConfig {
        patch_h: patch,
        patch_w: patch,
        reduction: 2,
        alpha: 2,
        rate: SampleRate::ONE,
        channels: 4,
    }
}

/// Positive weights, inputs and probe vectors keep every gradient entry away
/// from accidental cancellation, where central differences lose all relative
/// precision to roundoff.
fn positive_params(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, Tensor::uniform(&shape, 0.1, 1.0, rng))?;
    }
    Ok(())
}

/// Central-difference checks of every differentiable primitive and of the
/// M2MRF operator with respect to its input and all weights.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut record = |name: String, err: f64| {
        out.push(Check::new(name, err < GRADCHECK_TOL, format!("max rel err {err:.3e}")));
    };
    for (name, x, f) in input_cases(&mut rng)? {
        record(name.to_string(), grad_check(f, &x, DEFAULT_EPS)?);
    }

    let operators = [
        ("m2mrf down", Direction::Down, 1, false, 4, 8),
        ("m2mrf up", Direction::Up, 1, false, 4, 4),
        ("m2mrf ragged down", Direction::Down, 1, false, 4, 6),
        ("m2mrf cascade down t=2", Direction::Down, 2, true, 4, 8),
        ("m2mrf one-step down t=2", Direction::Down, 2, false, 4, 8),
        ("m2mrf one-step up t=2", Direction::Up, 2, false, 2, 4),
    ];
    for (name, direction, t, cascade, patch, side) in operators {
        let mut store = ParamStore::new();
        let base = small_m2mrf(patch);
        let op = if cascade {
            build_cascade(direction, t, &base, &mut store, "g", &mut rng)?
        } else {
            build_one_step(direction, t, &base, &mut store, "g", &mut rng)?
        };
        positive_params(&mut store, &mut rng)?;
        let x = Tensor::uniform(&[side, side + 4, 4], 0.1, 1.0, &mut rng);
        let y_shape = op.apply(&store, &x)?.shape().to_vec();
        let r = Tensor::uniform(&y_shape, 0.1, 1.0, &mut rng);
        let err = grad_check(
            |t, x| {
                let y = op.forward(t, &store, x)?;
                probe(t, y, &r)
            },
            &x,
            DEFAULT_EPS,
        )?;
        record(format!("{name} input"), err);
        for id in op.param_ids() {
            let xc = x.clone();
            let err = grad_check_param(
                |t, s| {
                    let xv = t.leaf(xc.clone());
                    let y = op.forward(t, s, xv)?;
                    probe(t, y, &r)
                },
                &store,
                id,
                None,
                DEFAULT_EPS,
            )?;
            record(format!("{name} {}", store.get(id).name), err);
        }
    }
    Ok(out)
}

/// Output shapes of one-step and cascade builds for `t ∈ {1, 2, 3}` on
/// random aligned sizes, and network logits for every variant.
pub fn shape_checks(sizes: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let base = M2mrfConfig::with_defaults(16, SampleRate::ONE);
    for t in 1..=3u32 {
        let mut store = ParamStore::new();
        let mut mismatches = Vec::new();
        let ops: Vec<(Direction, RfOperator, RfOperator)> = [Direction::Down, Direction::Up]
            .into_iter()
            .map(|d| {
                Ok((
                    d,
                    build_one_step(d, t, &base, &mut store, "one", &mut rng)?,
                    build_cascade(d, t, &base, &mut store, "cas", &mut rng)?,
                ))
            })
            .collect::<Result<_>>()?;
        for _ in 0..sizes {
            let unit = 1usize << t;
            let (h, w) = (unit * rng.random_range(1..=6usize), unit * rng.random_range(1..=6usize));
            for (d, one, cas) in &ops {
                let (h0, w0) = match d {
                    Direction::Down => (h, w),
                    Direction::Up => (h / unit, w / unit),
                };
                let x = Tensor::uniform(&[h0, w0, 16], -1.0, 1.0, &mut rng);
                let a = one.apply(&store, &x)?;
                let b = cas.apply(&store, &x)?;
                let expected = match d {
                    Direction::Down => [h / unit, w / unit, 16],
                    Direction::Up => [h, w, 16],
                };
                if a.shape() != expected || b.shape() != expected {
                    mismatches.push(format!("{d:?} {h0}x{w0}: {:?} vs {:?}", a.shape(), b.shape()));
                }
            }
        }
        out.push(Check::new(
            format!("one-step vs cascade shapes t={t}"),
            mismatches.is_empty(),
            if mismatches.is_empty() {
                format!("{sizes} sizes, both directions agree")
            } else {
                mismatches.join("; ")
            },
        ));
    }
    let image = Tensor::uniform(&[32, 32, 3], 0.0, 1.0, &mut rng);
    for v in Variant::ALL {
        let net = MiniFusionNet::build(v.net_config(), seed)?;
        let y = net.logits(&image)?;
        out.push(Check::new(
            format!("network logits variant {v}"),
            y.shape() == [32, 32, 4],
            format!("{:?}", y.shape()),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_pass() {
        assert!(all_passed(&param_checks().unwrap()));
    }

    #[test]
    fn display_format() {
        let c = Check::new("x", false, "y");
        assert_eq!(c.to_string(), "FAIL x: y");
    }
}
