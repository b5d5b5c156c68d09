//! Non-overlapping patch partition and merge.
//!
//! Patches are enumerated in row-major grid order and flattened in
//! `(row, col, channel)` order. Inputs whose sides are not multiples of the
//! patch size are zero-padded on the bottom and right.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Number of patches along a side of length `n` (ceil semantics).
pub fn grid_len(n: usize, patch: usize) -> usize {
    n.div_ceil(patch)
}

/// Gather indices turning an `(h, w, c)` map into the `(L, sh·sw·c)` patch
/// matrix. `None` marks zero padding.
pub fn partition_index(h: usize, w: usize, c: usize, sh: usize, sw: usize) -> (Vec<usize>, Vec<Option<usize>>) {
    let (gh, gw) = (grid_len(h, sh), grid_len(w, sw));
    let mut index = Vec::with_capacity(gh * gw * sh * sw * c);
    for py in 0..gh {
        for px in 0..gw {
            for dy in 0..sh {
                for dx in 0..sw {
                    let (y, x) = (py * sh + dy, px * sw + dx);
                    for ch in 0..c {
                        index.push((y < h && x < w).then(|| (y * w + x) * c + ch));
                    }
                }
            }
        }
    }
    (vec![gh * gw, sh * sw * c], index)
}

/// Gather indices turning an `(L, ph·pw·c)` patch matrix laid out on a
/// `grid_h × grid_w` grid into an `(out_h, out_w, c)` map, cropping the
/// bottom/right when the output is smaller than the full grid.
pub fn merge_index(grid_h: usize, grid_w: usize, ph: usize, pw: usize, c: usize, out_h: usize, out_w: usize) -> Result<Vec<Option<usize>>> {
    if out_h > grid_h * ph || out_w > grid_w * pw {
        return shape_err(format!(
            "merge target {out_h}x{out_w} exceeds the {}x{} patch grid",
            grid_h * ph,
            grid_w * pw
        ));
    }
    let row_len = ph * pw * c;
    let mut index = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        for x in 0..out_w {
            let patch = (y / ph) * grid_w + x / pw;
            let within = ((y % ph) * pw + x % pw) * c;
            for ch in 0..c {
                index.push(Some(patch * row_len + within + ch));
            }
        }
    }
    Ok(index)
}

/// Splits an `(H, W, C)` map into `(sh, sw, C)` patches, padding with zeros
/// to the next multiple of the patch size.
pub fn partition_patches(x: &Tensor, sh: usize, sw: usize) -> Result<Vec<Tensor>> {
    let (h, w, c) = x.hwc()?;
    if sh == 0 || sw == 0 {
        return shape_err("patch sides must be positive");
    }
    let (_, index) = partition_index(h, w, c, sh, sw);
    let xd = x.data();
    index
        .chunks(sh * sw * c)
        .map(|chunk| {
            let data = chunk.iter().map(|i| i.map_or(0.0, |i| xd[i])).collect();
            Tensor::new(&[sh, sw, c], data)
        })
        .collect()
}

/// Inverse of [`partition_patches`] for `(ph, pw, C)` patches on a
/// `grid_h × grid_w` grid.
pub fn merge_patches(patches: &[Tensor], grid_h: usize, grid_w: usize, ph: usize, pw: usize) -> Result<Tensor> {
    if patches.len() != grid_h * grid_w {
        return shape_err(format!(
            "merge expects {} patches for a {grid_h}x{grid_w} grid, got {}",
            grid_h * grid_w,
            patches.len()
        ));
    }
    let c = patches.first().map(|p| *p.shape().last().unwrap()).unwrap_or(1);
    if let Some(bad) = patches.iter().find(|p| p.shape() != [ph, pw, c]) {
        return shape_err(format!("patch {:?} is not {ph}x{pw}x{c}", bad.shape()));
    }
    let flat: Vec<f64> = patches.iter().flat_map(|p| p.data().iter().copied()).collect();
    let index = merge_index(grid_h, grid_w, ph, pw, c, grid_h * ph, grid_w * pw)?;
    let data = index.iter().map(|i| flat[i.expect("merge never pads")]).collect();
    Tensor::new(&[grid_h * ph, grid_w * pw, c], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize, c: usize) -> Tensor {
        Tensor::new(&[h, w, c], (0..h * w * c).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn single_patch_is_input() {
        let x = ramp(8, 8, 2);
        let p = partition_patches(&x, 8, 8).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0], x);
        assert_eq!(merge_patches(&p, 1, 1, 8, 8).unwrap(), x);
    }

    #[test]
    fn two_by_two_tiling_order() {
        let x = ramp(16, 16, 1);
        let p = partition_patches(&x, 8, 8).unwrap();
        assert_eq!(p.len(), 4);
        // top-left corners of TL, TR, BL, BR
        let corners: Vec<f64> = p.iter().map(|t| t.data()[0]).collect();
        assert_eq!(corners, vec![0.0, 8.0, 128.0, 136.0]);
        // (row, col, channel) flattening inside a patch
        assert_eq!(p[1].data()[1], 9.0);
        assert_eq!(p[1].data()[8], 24.0);
        assert_eq!(merge_patches(&p, 2, 2, 8, 8).unwrap(), x);
    }

    #[test]
    fn ragged_input_is_zero_padded() {
        let x = Tensor::full(&[5, 3, 1], 1.0);
        let p = partition_patches(&x, 4, 4).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].sum(), 12.0);
        assert_eq!(p[1].sum(), 3.0);
    }

    #[test]
    fn merge_count_mismatch() {
        let p = vec![Tensor::zeros(&[2, 2, 1]); 3];
        assert!(merge_patches(&p, 2, 2, 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(gh in 1usize..4, gw in 1usize..4, sh in 1usize..5, sw in 1usize..5, c in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::uniform(&[gh * sh, gw * sw, c], -1.0, 1.0, &mut rng);
            let p = partition_patches(&x, sh, sw).unwrap();
            prop_assert_eq!(p.len(), gh * gw);
            prop_assert_eq!(merge_patches(&p, gh, gw, sh, sw).unwrap(), x);
        }
    }
}
