//! Versioned binary checkpoints: magic `VLAE`, format version, the canonical
//! config echo, RNG state, training progress, and named f64 tensor records
//! (little-endian). Loading a checkpoint and saving it again reproduces the
//! file byte for byte.

use std::io::{Read, Write};
use std::path::Path;

use vlae_core::error::{Error, Result};
use vlae_core::linalg::{DenseMatrix, DenseVector};
use vlae_core::network::{AdamState, GradBundle, Head, Layer, MlpParams};

pub const MAGIC: &[u8; 4] = b"VLAE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn scalar(name: &str, v: f64) -> Self {
        Tensor {
            name: name.into(),
            dims: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(name: &str, v: &DenseVector) -> Self {
        Tensor {
            name: name.into(),
            dims: vec![v.dim()],
            data: v.as_slice().to_vec(),
        }
    }

    pub fn matrix(name: &str, m: &DenseMatrix) -> Self {
        Tensor {
            name: name.into(),
            dims: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Canonical config text of the run that produced this checkpoint.
    pub config_text: String,
    pub rng_key: u64,
    pub rng_counter: u64,
    /// Number of completed epochs.
    pub epochs_done: u32,
    pub best_epoch: u32,
    pub best_val_elbo: f64,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Io(format!("checkpoint is missing tensor '{name}'")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.tensor(name)?;
        if t.data.len() != 1 {
            return Err(Error::Io(format!("tensor '{name}' is not a scalar")));
        }
        Ok(t.data[0])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = self.config_text.as_bytes();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg);
        out.extend_from_slice(&self.rng_key.to_le_bytes());
        out.extend_from_slice(&self.rng_counter.to_le_bytes());
        out.extend_from_slice(&self.epochs_done.to_le_bytes());
        out.extend_from_slice(&self.best_epoch.to_le_bytes());
        out.extend_from_slice(&self.best_val_elbo.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Io(format!(
                "not a checkpoint (magic {:02x?})",
                &magic[..4.min(magic.len())]
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Io(format!(
                "unsupported checkpoint version {version} (this build reads {VERSION})"
            )));
        }
        let cfg_len = r.u32()? as usize;
        let config_text = String::from_utf8(r.take(cfg_len)?.to_vec())
            .map_err(|_| Error::Io("config echo is not UTF-8".into()))?;
        let rng_key = r.u64()?;
        let rng_counter = r.u64()?;
        let epochs_done = r.u32()?;
        let best_epoch = r.u32()?;
        let best_val_elbo = r.f64()?;
        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Io("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32()? as usize);
            }
            let count: usize = dims.iter().product();
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(r.f64()?);
            }
            tensors.push(Tensor { name, dims, data });
        }
        Ok(Checkpoint {
            config_text,
            rng_key,
            rng_counter,
            epochs_done,
            best_epoch,
            best_val_elbo,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::TruncatedFile {
                expected: self.at + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Tensor records of one network under a name prefix.
pub fn pack_mlp(prefix: &str, p: &MlpParams, out: &mut Vec<Tensor>) {
    for (i, l) in p.layers.iter().enumerate() {
        out.push(Tensor::matrix(&format!("{prefix}.layer{i}.weight"), &l.weight));
        out.push(Tensor::vector(&format!("{prefix}.layer{i}.bias"), &l.bias));
    }
    if let Head::Gaussian { log_sigma2 } = p.head {
        out.push(Tensor::scalar(&format!("{prefix}.log_sigma2"), log_sigma2));
    }
}

/// Rebuild a network whose head/shape comes from the run config.
pub fn unpack_mlp(ckpt: &Checkpoint, prefix: &str, n_layers: usize, head: Head) -> Result<MlpParams> {
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let w = ckpt.tensor(&format!("{prefix}.layer{i}.weight"))?;
        if w.dims.len() != 2 {
            return Err(Error::Io(format!("{prefix}.layer{i}.weight is not a matrix")));
        }
        let b = ckpt.tensor(&format!("{prefix}.layer{i}.bias"))?;
        layers.push(Layer {
            weight: DenseMatrix::new(w.dims[0], w.dims[1], w.data.clone()),
            bias: DenseVector::new(b.data.clone()),
        });
    }
    let head = match head {
        Head::Gaussian { .. } => Head::Gaussian {
            log_sigma2: ckpt.scalar(&format!("{prefix}.log_sigma2"))?,
        },
        other => other,
    };
    Ok(MlpParams::new(layers, head))
}

/// ADAM moments under `{prefix}.m` / `{prefix}.v` plus the step counter.
pub fn pack_adam(prefix: &str, st: &AdamState, out: &mut Vec<Tensor>) {
    let (m, v, step) = st.raw();
    pack_bundle(&format!("{prefix}.m"), m, out);
    pack_bundle(&format!("{prefix}.v"), v, out);
    out.push(Tensor::scalar(&format!("{prefix}.step"), step as f64));
}

fn pack_bundle(prefix: &str, g: &GradBundle, out: &mut Vec<Tensor>) {
    for (i, l) in g.layers.iter().enumerate() {
        out.push(Tensor::matrix(&format!("{prefix}.layer{i}.weight"), &l.weight));
        out.push(Tensor::vector(&format!("{prefix}.layer{i}.bias"), &l.bias));
    }
    out.push(Tensor::scalar(&format!("{prefix}.log_sigma2"), g.log_sigma2));
}

pub fn unpack_adam(ckpt: &Checkpoint, prefix: &str, shape: &MlpParams) -> Result<AdamState> {
    let m = unpack_bundle(ckpt, &format!("{prefix}.m"), shape)?;
    let v = unpack_bundle(ckpt, &format!("{prefix}.v"), shape)?;
    let step = ckpt.scalar(&format!("{prefix}.step"))? as u64;
    Ok(AdamState::restore(m, v, step))
}

fn unpack_bundle(ckpt: &Checkpoint, prefix: &str, shape: &MlpParams) -> Result<GradBundle> {
    let mut g = GradBundle::zeros_like(shape);
    for i in 0..shape.layers.len() {
        let w = ckpt.tensor(&format!("{prefix}.layer{i}.weight"))?;
        let b = ckpt.tensor(&format!("{prefix}.layer{i}.bias"))?;
        g.layers[i].weight = DenseMatrix::new(w.dims[0], w.dims[1], w.data.clone());
        g.layers[i].bias = DenseVector::new(b.data.clone());
    }
    g.log_sigma2 = ckpt.scalar(&format!("{prefix}.log_sigma2"))?;
    Ok(g)
}
