//! Pure forward and backward kernels on [`Tensor`]s.
//!
//! These know nothing about the tape; [`crate::autograd`] wires them together.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape()[..] {
        [m, n] => Ok((m, n)),
        _ => shape_err(format!("{what}: expected a matrix, got {:?}", t.shape())),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2(a, "matmul lhs")?;
    let (k2, n) = dims2(b, "matmul rhs")?;
    if k != k2 {
        return shape_err(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            for (o, bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = dims2(a, "transpose")?;
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::new(&[n, m], out)
}

fn kernel_dims(k: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match k.shape()[..] {
        [kh, kw, ci, co] => Ok((kh, kw, ci, co)),
        _ => shape_err(format!("expected a (kh, kw, Cin, Cout) kernel, got {:?}", k.shape())),
    }
}

/// Sliding-window geometry shared by convolution and its transpose.
///
/// The "fine" map is the one addressed as `coarse * stride + tap - pad`:
/// the input of a convolution, the output of a transposed convolution.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    coarse_h: usize,
    coarse_w: usize,
    fine_h: usize,
    fine_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    /// Calls `f(fine_site, coarse_site, tap)` for every in-bounds tap.
    #[inline]
    fn taps(&self, mut f: impl FnMut(usize, usize, usize)) {
        for cy in 0..self.coarse_h {
            for cx in 0..self.coarse_w {
                let coarse = cy * self.coarse_w + cx;
                for ky in 0..self.kh {
                    let fy = (cy * self.stride + ky) as isize - self.pad as isize;
                    if fy < 0 || fy >= self.fine_h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let fx = (cx * self.stride + kx) as isize - self.pad as isize;
                        if fx < 0 || fx >= self.fine_w as isize {
                            continue;
                        }
                        let fine = fy as usize * self.fine_w + fx as usize;
                        f(fine, coarse, ky * self.kw + kx);
                    }
                }
            }
        }
    }
}

/// `dst[dst_site, :] += src[src_site, :] · k[tap]` with `k[tap]` a `ci × co` block.
#[inline]
#[allow(clippy::too_many_arguments)]
fn spread(dst: &mut [f64], src: &[f64], k: &[f64], dst_site: usize, src_site: usize, tap: usize, ci: usize, co: usize) {
    let s = &src[src_site * ci..(src_site + 1) * ci];
    let d = &mut dst[dst_site * co..(dst_site + 1) * co];
    let kt = &k[tap * ci * co..(tap + 1) * ci * co];
    for (c, &sv) in s.iter().enumerate() {
        for (o, kv) in d.iter_mut().zip(&kt[c * co..(c + 1) * co]) {
            *o += sv * kv;
        }
    }
}

/// `dsrc[src_site, c] += Σ_o ddst[dst_site, o] · k[tap, c, o]`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn gather_back(dsrc: &mut [f64], ddst: &[f64], k: &[f64], dst_site: usize, src_site: usize, tap: usize, ci: usize, co: usize) {
    let g = &ddst[dst_site * co..(dst_site + 1) * co];
    let kt = &k[tap * ci * co..(tap + 1) * ci * co];
    let ds = &mut dsrc[src_site * ci..(src_site + 1) * ci];
    for (c, out) in ds.iter_mut().enumerate() {
        *out += kt[c * co..(c + 1) * co]
            .iter()
            .zip(g)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    }
}

/// `dk[tap, c, :] += src[src_site, c] · ddst[dst_site, :]`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn outer_acc(dk: &mut [f64], src: &[f64], ddst: &[f64], dst_site: usize, src_site: usize, tap: usize, ci: usize, co: usize) {
    let s = &src[src_site * ci..(src_site + 1) * ci];
    let g = &ddst[dst_site * co..(dst_site + 1) * co];
    let kt = &mut dk[tap * ci * co..(tap + 1) * ci * co];
    for (c, &sv) in s.iter().enumerate() {
        for (o, gv) in kt[c * co..(c + 1) * co].iter_mut().zip(g) {
            *o += sv * gv;
        }
    }
}

fn conv_geometry(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<(Geometry, usize, usize)> {
    let (h, w, c) = x.hwc()?;
    let (kh, kw, ci, co) = kernel_dims(k)?;
    if ci != c {
        return shape_err(format!(
            "conv2d channel mismatch: input {:?}, kernel {:?}",
            x.shape(),
            k.shape()
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return shape_err(format!("conv2d needs odd kernel sides, got {kh}x{kw}"));
    }
    if stride == 0 {
        return shape_err("conv2d stride must be at least 1");
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return shape_err(format!(
            "conv2d output would be empty: input {h}x{w}, kernel {kh}x{kw}, pad {pad}"
        ));
    }
    let geo = Geometry {
        coarse_h: (h + 2 * pad - kh) / stride + 1,
        coarse_w: (w + 2 * pad - kw) / stride + 1,
        fine_h: h,
        fine_w: w,
        kh,
        kw,
        stride,
        pad,
    };
    Ok((geo, ci, co))
}

/// Cross-correlation with zero padding, no bias.
pub fn conv2d(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (g, ci, co) = conv_geometry(x, k, stride, pad)?;
    let mut out = vec![0.0; g.coarse_h * g.coarse_w * co];
    let (xd, kd) = (x.data(), k.data());
    g.taps(|fine, coarse, tap| spread(&mut out, xd, kd, coarse, fine, tap, ci, co));
    Tensor::new(&[g.coarse_h, g.coarse_w, co], out)
}

pub fn conv2d_grad_input(dout: &Tensor, x_shape: &[usize], k: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let x = Tensor::zeros(x_shape);
    let (g, ci, co) = conv_geometry(&x, k, stride, pad)?;
    let mut dx = x.into_data();
    let (gd, kd) = (dout.data(), k.data());
    g.taps(|fine, coarse, tap| gather_back(&mut dx, gd, kd, coarse, fine, tap, ci, co));
    Tensor::new(x_shape, dx)
}

pub fn conv2d_grad_kernel(x: &Tensor, dout: &Tensor, k_shape: &[usize], stride: usize, pad: usize) -> Result<Tensor> {
    let k = Tensor::zeros(k_shape);
    let (g, ci, co) = conv_geometry(x, &k, stride, pad)?;
    let mut dk = k.into_data();
    let (xd, gd) = (x.data(), dout.data());
    g.taps(|fine, coarse, tap| outer_acc(&mut dk, xd, gd, coarse, fine, tap, ci, co));
    Tensor::new(k_shape, dk)
}

fn transpose_geometry(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<(Geometry, usize, usize)> {
    let (h, w, c) = x.hwc()?;
    let (kh, kw, ci, co) = kernel_dims(k)?;
    if ci != c {
        return shape_err(format!(
            "conv2d_transpose channel mismatch: input {:?}, kernel {:?}",
            x.shape(),
            k.shape()
        ));
    }
    if stride == 0 {
        return shape_err("conv2d_transpose stride must be at least 1");
    }
    let oh = (stride * (h - 1) + kh) as isize - 2 * pad as isize;
    let ow = (stride * (w - 1) + kw) as isize - 2 * pad as isize;
    if oh < 1 || ow < 1 {
        return shape_err(format!(
            "conv2d_transpose output would be empty: input {h}x{w}, kernel {kh}x{kw}, pad {pad}"
        ));
    }
    let geo = Geometry {
        coarse_h: h,
        coarse_w: w,
        fine_h: oh as usize,
        fine_w: ow as usize,
        kh,
        kw,
        stride,
        pad,
    };
    Ok((geo, ci, co))
}

/// Transposed convolution: output size `stride·(H−1) + kh − 2·pad`.
pub fn conv2d_transpose(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (g, ci, co) = transpose_geometry(x, k, stride, pad)?;
    let mut out = vec![0.0; g.fine_h * g.fine_w * co];
    let (xd, kd) = (x.data(), k.data());
    g.taps(|fine, coarse, tap| spread(&mut out, xd, kd, fine, coarse, tap, ci, co));
    Tensor::new(&[g.fine_h, g.fine_w, co], out)
}

pub fn conv2d_transpose_grad_input(dout: &Tensor, x_shape: &[usize], k: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let x = Tensor::zeros(x_shape);
    let (g, ci, co) = transpose_geometry(&x, k, stride, pad)?;
    let mut dx = x.into_data();
    let (gd, kd) = (dout.data(), k.data());
    g.taps(|fine, coarse, tap| gather_back(&mut dx, gd, kd, fine, coarse, tap, ci, co));
    Tensor::new(x_shape, dx)
}

pub fn conv2d_transpose_grad_kernel(x: &Tensor, dout: &Tensor, k_shape: &[usize], stride: usize, pad: usize) -> Result<Tensor> {
    let k = Tensor::zeros(k_shape);
    let (g, ci, co) = transpose_geometry(x, &k, stride, pad)?;
    let mut dk = k.into_data();
    let (xd, gd) = (x.data(), dout.data());
    g.taps(|fine, coarse, tap| outer_acc(&mut dk, xd, gd, fine, coarse, tap, ci, co));
    Tensor::new(k_shape, dk)
}

/// Flat winner positions recorded by max-pooling, reusable for unpooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexMap {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// For every output element, the flat index into the input it came from.
    pub indices: Vec<usize>,
}

/// Channelwise max-pool. Ties resolve to the first cell in row-major window
/// order; padded cells never win.
pub fn maxpool2d_argmax(x: &Tensor, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<(Tensor, IndexMap)> {
    let (h, w, c) = x.hwc()?;
    if stride == 0 || kh == 0 || kw == 0 {
        return shape_err("max-pool window and stride must be positive");
    }
    if h + 2 * pad < kh || w + 2 * pad < kw || pad >= kh || pad >= kw {
        return shape_err(format!(
            "max-pool window {kh}x{kw} (pad {pad}) does not fit a {h}x{w} input"
        ));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let xd = x.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut indices = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best: Option<(f64, usize)> = None;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = (iy as usize * w + ix as usize) * c + ch;
                        if best.is_none_or(|(v, _)| xd[idx] > v) {
                            best = Some((xd[idx], idx));
                        }
                    }
                }
                let (v, idx) = best.expect("every window overlaps the input");
                out.push(v);
                indices.push(idx);
            }
        }
    }
    let out = Tensor::new(&[oh, ow, c], out)?;
    let map = IndexMap {
        input_shape: x.shape().to_vec(),
        output_shape: out.shape().to_vec(),
        indices,
    };
    Ok((out, map))
}

/// Scatters `x` back to the recorded winner positions; everything else is zero.
/// Values landing on the same site add up.
pub fn unpool(x: &Tensor, map: &IndexMap) -> Result<Tensor> {
    if x.shape() != map.output_shape.as_slice() {
        return shape_err(format!(
            "unpool input {:?} does not match pooled shape {:?}",
            x.shape(),
            map.output_shape
        ));
    }
    let mut out = Tensor::zeros(&map.input_shape);
    let od = out.data_mut();
    for (&idx, &v) in map.indices.iter().zip(x.data()) {
        od[idx] += v;
    }
    Ok(out)
}

/// Linear-interpolation taps `(lo, hi, weight_of_hi)` for resizing `n_in` cells
/// to `n_out` with half-pixel centres and edge clamping.
fn linear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = x.hwc()?;
    if out_h == 0 || out_w == 0 {
        return shape_err("bilinear_resize target must be at least 1x1");
    }
    let (ty, tx) = (linear_taps(h, out_h), linear_taps(w, out_w));
    let xd = x.data();
    let mut out = vec![0.0; out_h * out_w * c];
    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
            let o = &mut out[(oy * out_w + ox) * c..][..c];
            for (yy, fy) in [(y0, 1.0 - wy), (y1, wy)] {
                for (xx, fx) in [(x0, 1.0 - wx), (x1, wx)] {
                    let f = fy * fx;
                    if f == 0.0 {
                        continue;
                    }
                    let src = &xd[(yy * w + xx) * c..][..c];
                    for (ov, sv) in o.iter_mut().zip(src) {
                        *ov += f * sv;
                    }
                }
            }
        }
    }
    Tensor::new(&[out_h, out_w, c], out)
}

pub fn bilinear_resize_grad(dout: &Tensor, x_shape: &[usize]) -> Result<Tensor> {
    let (out_h, out_w, c) = dout.hwc()?;
    let (h, w) = (x_shape[0], x_shape[1]);
    let (ty, tx) = (linear_taps(h, out_h), linear_taps(w, out_w));
    let gd = dout.data();
    let mut dx = vec![0.0; h * w * c];
    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
            let g = &gd[(oy * out_w + ox) * c..][..c];
            for (yy, fy) in [(y0, 1.0 - wy), (y1, wy)] {
                for (xx, fx) in [(x0, 1.0 - wx), (x1, wx)] {
                    let f = fy * fx;
                    if f == 0.0 {
                        continue;
                    }
                    let d = &mut dx[(yy * w + xx) * c..][..c];
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv += f * gv;
                    }
                }
            }
        }
    }
    Tensor::new(x_shape, dx)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_small_cases() {
        let id = Tensor::eye(2);
        let m = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(matmul(&id, &m).unwrap(), m);
        let dot = matmul(&t(&[1, 2], &[1., 2.]), &t(&[2, 1], &[3., 4.])).unwrap();
        assert_eq!(dot.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[4, 2], -1.0, 1.0, &mut rng);
        let got = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a.data()[i * 4 + p] * b.data()[p * 2 + j];
                }
                assert!((got.data()[i * 2 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(&[5, 4, 3], -1.0, 1.0, &mut rng);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        for c in 0..3 {
            k.data_mut()[c * 3 + c] = 1.0;
        }
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn conv_all_ones_stride2_local_sums() {
        let x = t(&[4, 4, 1], &(0..16).map(|v| v as f64).collect::<Vec<_>>());
        let k = Tensor::full(&[3, 3, 1, 1], 1.0);
        let y = conv2d(&x, &k, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        // sliding-window oracle over the zero-padded input
        let at = |r: isize, c: isize| {
            if (0..4).contains(&r) && (0..4).contains(&c) {
                (r * 4 + c) as f64
            } else {
                0.0
            }
        };
        for oy in 0..2 {
            for ox in 0..2 {
                let mut s = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        s += at(oy * 2 + dy, ox * 2 + dx);
                    }
                }
                assert_eq!(y.at3(oy as usize, ox as usize, 0), s);
            }
        }
        assert_eq!(y.data(), &[10.0, 24.0, 51.0, 90.0]);
    }

    #[test]
    fn conv_delta_kernel_samples_even_sites() {
        let x = t(&[4, 4, 1], &(0..16).map(|v| v as f64).collect::<Vec<_>>());
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        k.data_mut()[4] = 1.0;
        let y = conv2d(&x, &k, 2, 1).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn conv_rejects_empty_output_and_even_kernel() {
        let x = Tensor::zeros(&[2, 2, 1]);
        assert!(conv2d(&x, &Tensor::zeros(&[5, 5, 1, 1]), 1, 0).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[2, 2, 1, 1]), 1, 0).is_err());
    }

    #[test]
    fn transpose_single_site_spread() {
        let x = t(&[1, 1, 1], &[3.0]);
        let k = Tensor::full(&[2, 2, 1, 1], 0.5);
        let y = conv2d_transpose(&x, &k, 2, 0).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(y.data(), &[1.5; 4]);
        let z = conv2d_transpose(&Tensor::zeros(&[3, 3, 2]), &Tensor::full(&[4, 4, 2, 3], 1.0), 2, 1).unwrap();
        assert_eq!(z.shape(), &[6, 6, 3]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maxpool_single_window_and_ties() {
        let x = t(&[2, 2, 1], &[1., 2., 3., 4.]);
        let (y, map) = maxpool2d_argmax(&x, 2, 2, 2, 0).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(map.indices, vec![3]);

        let c = Tensor::full(&[4, 4, 1], 2.0);
        let (y, map) = maxpool2d_argmax(&c, 2, 2, 2, 0).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.0));
        assert_eq!(map.indices, vec![0, 2, 8, 10]);
    }

    #[test]
    fn maxpool_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(&[6, 6, 2], -1.0, 1.0, &mut rng);
        let (y, map) = maxpool2d_argmax(&x, 3, 3, 2, 1).unwrap();
        assert_eq!(y.shape(), &[3, 3, 2]);
        for oy in 0..3usize {
            for ox in 0..3usize {
                for c in 0..2 {
                    let mut best = f64::NEG_INFINITY;
                    for iy in (oy * 2).saturating_sub(1)..(oy * 2 + 2).min(6) {
                        for ix in (ox * 2).saturating_sub(1)..(ox * 2 + 2).min(6) {
                            best = best.max(x.at3(iy, ix, c));
                        }
                    }
                    let o = (oy * 3 + ox) * 2 + c;
                    assert_eq!(y.data()[o], best);
                    assert_eq!(x.data()[map.indices[o]], best);
                }
            }
        }
    }

    #[test]
    fn unpool_places_values_at_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::uniform(&[4, 4, 3], -1.0, 1.0, &mut rng);
        let (y, map) = maxpool2d_argmax(&x, 2, 2, 2, 0).unwrap();
        let u = unpool(&y, &map).unwrap();
        for (o, &idx) in map.indices.iter().enumerate() {
            assert_eq!(u.data()[idx], y.data()[o]);
        }
        let nonzero = u.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, y.len());
    }

    #[test]
    fn bilinear_cases() {
        let row = t(&[1, 2, 1], &[0.0, 1.0]);
        let r = bilinear_resize(&row, 1, 4).unwrap();
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::uniform(&[3, 5, 2], -1.0, 1.0, &mut rng);
        assert_eq!(bilinear_resize(&x, 3, 5).unwrap(), x);

        let c = Tensor::full(&[3, 3, 2], 0.7);
        let r = bilinear_resize(&c, 7, 11).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn bilinear_exact_on_interior_ramps() {
        // f(y, x) = 2y - 3x + 1 sampled at cell centres
        let (h, w) = (4, 4);
        let data: Vec<f64> = (0..h * w)
            .map(|i| 2.0 * (i / w) as f64 - 3.0 * (i % w) as f64 + 1.0)
            .collect();
        let x = t(&[h, w, 1], &data);
        let y = bilinear_resize(&x, 8, 8).unwrap();
        for oy in 1..7 {
            for ox in 1..7 {
                let sy = (oy as f64 + 0.5) * 0.5 - 0.5;
                let sx = (ox as f64 + 0.5) * 0.5 - 0.5;
                let expected = 2.0 * sy - 3.0 * sx + 1.0;
                assert!((y.at3(oy, ox, 0) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
        let mut prev = 1.0;
        for v in [-1.0, -10.0, -50.0, -100.0] {
            let s = sigmoid(v);
            assert!(s < prev);
            prev = s;
        }
    }
}
