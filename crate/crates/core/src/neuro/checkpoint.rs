use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Discriminator, Generator, Network, NetworkSpec};
use super::Tensor;
use crate::error::{Error, Result};
use crate::imgio::{resize_and_pad_region, resize_bilinear, Image};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSMKCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Section {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    step: u64,
    epoch: usize,
    sections: Vec<Section>,
}

/// Network spec, generator and discriminator weights, batch norm running
/// statistics and the optimizer step counter.
///
/// On disk: the magic bytes, a little-endian `u32` version and `u64` header
/// length, a JSON header listing every section, then each section's values
/// as little-endian `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub step: u64,
    pub epoch: usize,
    pub generator: Vec<Vec<f32>>,
    pub generator_running: Vec<Vec<f32>>,
    pub discriminator: Vec<Vec<f32>>,
    pub discriminator_running: Vec<Vec<f32>>,
}

fn to_f32<T: Scalar>(v: &[T]) -> Vec<f32> {
    v.iter().map(|x| x.as_f64() as f32).collect()
}

fn copy_into<T: Scalar>(dst: &mut [T], src: &[f32], what: &str) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Shape(format!(
            "checkpoint {} holds {} values, network expects {}",
            what,
            src.len(),
            dst.len()
        )));
    }
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = T::lit(s as f64);
    }
    Ok(())
}

fn restore<T: Scalar, N: Network<T>>(net: &mut N, params: &[Vec<f32>], running: &[Vec<f32>], what: &str) -> Result<()> {
    let mut dst = net.params_mut();
    if dst.len() != params.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {} {} parameter tensors, network has {}",
            params.len(),
            what,
            dst.len()
        )));
    }
    for (d, s) in dst.iter_mut().zip(params) {
        copy_into(d.data_mut(), s, what)?;
    }
    let mut stats = net.running_stats_mut();
    if stats.len() != running.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {} {} running statistics, network has {}",
            running.len(),
            what,
            stats.len()
        )));
    }
    for (d, s) in stats.iter_mut().zip(running) {
        copy_into(d, s, what)?;
    }
    Ok(())
}

impl Checkpoint {
    pub fn capture<T: Scalar>(generator: &Generator<T>, discriminator: &Discriminator<T>, step: u64, epoch: usize) -> Self {
        Self {
            spec: generator.spec().clone(),
            step,
            epoch,
            generator: generator.params().iter().map(|p| to_f32(p.data())).collect(),
            generator_running: generator.running_stats().iter().map(|v| to_f32(v)).collect(),
            discriminator: discriminator.params().iter().map(|p| to_f32(p.data())).collect(),
            discriminator_running: discriminator.running_stats().iter().map(|v| to_f32(v)).collect(),
        }
    }

    pub fn generator<T: Scalar>(&self) -> Result<Generator<T>> {
        let mut g = Generator::new(&self.spec, 0)?;
        restore(&mut g, &self.generator, &self.generator_running, "generator")?;
        Ok(g)
    }

    pub fn discriminator<T: Scalar>(&self) -> Result<Discriminator<T>> {
        let mut d = Discriminator::new(&self.spec, 0)?;
        restore(&mut d, &self.discriminator, &self.discriminator_running, "discriminator")?;
        Ok(d)
    }

    fn groups(&self) -> [(&'static str, &Vec<Vec<f32>>); 4] {
        [
            ("generator.param", &self.generator),
            ("generator.running", &self.generator_running),
            ("discriminator.param", &self.discriminator),
            ("discriminator.running", &self.discriminator_running),
        ]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut sections = Vec::new();
        for (prefix, group) in self.groups() {
            for (i, v) in group.iter().enumerate() {
                sections.push(Section {
                    name: format!("{}.{}", prefix, i),
                    len: v.len(),
                });
            }
        }
        let header = Header {
            spec: self.spec.clone(),
            step: self.step,
            epoch: self.epoch,
            sections,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Argument(format!("checkpoint header: {}", e)))?;
        let values: usize = header.sections.iter().map(|s| s.len).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 4 * values);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, group) in self.groups() {
            for v in group {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::parse(bytes, Path::new("<memory>"))
    }

    fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, format!("checkpoint: {}", msg));
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {}", version)));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20usize.saturating_add(header_len)).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let mut data = &bytes[20 + header_len..];

        let mut groups: [Vec<Vec<f32>>; 4] = Default::default();
        let prefixes = ["generator.param", "generator.running", "discriminator.param", "discriminator.running"];
        for section in &header.sections {
            let (prefix, _) = section.name.rsplit_once('.').ok_or_else(|| bad("malformed section name"))?;
            let g = prefixes
                .iter()
                .position(|&p| p == prefix)
                .ok_or_else(|| bad(&format!("unknown section {}", section.name)))?;
            let nbytes = section.len.checked_mul(4).ok_or_else(|| bad("section too large"))?;
            if data.len() < nbytes {
                return Err(bad(&format!("truncated section {}", section.name)));
            }
            let (head, rest) = data.split_at(nbytes);
            let values: Vec<f32> = head
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad(&format!("non-finite value in {}", section.name)));
            }
            groups[g].push(values);
            data = rest;
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let [generator, generator_running, discriminator, discriminator_running] = groups;
        let ckpt = Self {
            spec: header.spec,
            step: header.step,
            epoch: header.epoch,
            generator,
            generator_running,
            discriminator,
            discriminator_running,
        };
        // reject checkpoints whose tensors do not fit their own spec
        ckpt.generator::<f32>()?;
        ckpt.discriminator::<f32>()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes, path)
    }
}

/// A generator restored for inference.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    generator: Generator<T>,
}

impl<T: Scalar> Model<T> {
    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        Ok(Self {
            generator: checkpoint.generator()?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.generator.spec()
    }

    /// Resizes and pads to the network size, runs the generator in eval
    /// mode, crops the padding and resizes back to the input size.
    pub fn predict(&self, img: &Image<T>) -> Result<Image<T>> {
        let spec = self.generator.spec();
        if img.channels() != spec.image_channels {
            return Err(Error::Shape(format!(
                "model expects {}-channel images, got {}",
                spec.image_channels,
                img.channels()
            )));
        }
        let (padded, region) = resize_and_pad_region(img, spec.image_size, spec.image_size)?;
        let y = self.generator.predict(&Tensor::from_images(&[&padded])?)?;
        let out = y.to_image(0)?.crop(region)?;
        if out.width() == img.width() && out.height() == img.height() {
            Ok(out)
        } else {
            resize_bilinear(&out, img.width(), img.height())
        }
    }
}

/// Single eval-mode generator pass over one image.
pub fn infer<T: Scalar>(checkpoint: &Checkpoint, img: &Image<T>) -> Result<Image<T>> {
    Model::from_checkpoint(checkpoint)?.predict(img)
}
