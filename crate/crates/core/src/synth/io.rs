//! On-disk layout.
//!
//! A sample directory holds `image.m2mt`, `masks.m2mt`, `meta.json` and one
//! `mask_<CLASS>.pgm` per class for inspection. A dataset directory holds
//! `manifest.json` and one `sample_NNNN` directory per sample.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LesionClass, LesionSpec, Sample};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub seed: u64,
    pub specs: Vec<LesionSpec>,
    /// Sample directories relative to the dataset root.
    pub files: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SampleMeta {
    seed: u64,
    index: usize,
    classes: Vec<String>,
}

/// Binary PGM (`P5`, maxval 255) of an `(H, W, 1)` map; values are clamped
/// to `[0, 1]` and scaled.
pub fn pgm_bytes(plane: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = plane.hwc()?;
    if c != 1 {
        return shape_err(format!("PGM needs a single channel, got {:?}", plane.shape()));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(plane.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Parses a `P5` file written by [`pgm_bytes`] into `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let fail = |offset: usize, msg: &str| Error::Format {
        offset,
        msg: msg.to_string(),
    };
    if !bytes.starts_with(b"P5") {
        return Err(fail(0, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail(start, "expected a decimal header field"))?;
    }
    if fields[2] != 255 {
        return Err(fail(pos, "only maxval 255 is supported"));
    }
    if bytes.get(pos).is_none_or(|b| !b.is_ascii_whitespace()) {
        return Err(fail(pos, "missing whitespace after header"));
    }
    pos += 1;
    let [w, h, _] = fields;
    let data = &bytes[pos..];
    if data.len() != w * h {
        return Err(fail(bytes.len(), &format!("expected {} pixel bytes, found {}", w * h, data.len())));
    }
    Ok((w, h, data.to_vec()))
}

fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    Tensor::from_m2mt_bytes(&bytes)
}

pub fn save_sample(sample: &Sample, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    sample.image.save(dir.join("image.m2mt"))?;
    sample.masks.save(dir.join("masks.m2mt"))?;
    let meta = SampleMeta {
        seed: sample.seed,
        index: sample.index,
        classes: LesionClass::ALL.iter().map(|c| c.name().to_string()).collect(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    for class in LesionClass::ALL {
        let plane = sample.masks.channel(class.channel())?;
        fs::write(dir.join(format!("mask_{}.pgm", class.name())), pgm_bytes(&plane)?)?;
    }
    Ok(())
}

/// Reads a sample; any malformed part fails the whole load.
pub fn load_sample(dir: impl AsRef<Path>) -> Result<Sample> {
    let dir = dir.as_ref();
    let image = read_tensor(&dir.join("image.m2mt"))?;
    let masks = read_tensor(&dir.join("masks.m2mt"))?;
    let meta: SampleMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    let (h, w, c) = image.hwc()?;
    if c != 3 || masks.shape() != [h, w, LesionClass::ALL.len()] {
        return shape_err(format!(
            "sample {}: image {:?} and masks {:?} disagree",
            dir.display(),
            image.shape(),
            masks.shape()
        ));
    }
    Ok(Sample {
        image,
        masks,
        seed: meta.seed,
        index: meta.index,
    })
}

pub fn sample_dir_name(index: usize) -> String {
    format!("sample_{index:04}")
}

pub fn save_dataset(samples: &[Sample], specs: &[LesionSpec], seed: u64, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (height, width) = samples.first().map_or((0, 0), |s| (s.height(), s.width()));
    let mut files = Vec::with_capacity(samples.len());
    for s in samples {
        let name = sample_dir_name(s.index);
        save_sample(s, dir.join(&name))?;
        files.push(name);
    }
    let manifest = Manifest {
        n: samples.len(),
        height,
        width,
        seed,
        specs: specs.to_vec(),
        files,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Manifest, Vec<Sample>)> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let samples = manifest
        .files
        .iter()
        .map(|f| load_sample(dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = samples
        .iter()
        .find(|s| s.height() != manifest.height || s.width() != manifest.width)
    {
        return shape_err(format!(
            "sample {} is {}x{}, manifest says {}x{}",
            bad.index,
            bad.height(),
            bad.width(),
            manifest.height,
            manifest.width
        ));
    }
    Ok((manifest, samples))
}
