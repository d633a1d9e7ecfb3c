//! Dataset generation, IDX ingestion, dynamic binarization, and the
//! mean/scale normalization that puts the initial reconstruction loss near
//! one per dimension.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{sample_standard_normal, DenseMatrix, DenseVector, Rng};

/// Items is `n x features`, ordered `[train | val | test]` with the split
/// boundaries recorded. Normalization statistics are attached once
/// [`normalize`] has run.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: DenseMatrix,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub feature_mean: Option<DenseVector>,
    pub feature_scale: Option<f64>,
    /// Set when normalization hit all-constant data and fell back to scale 1.
    pub degenerate_scale: bool,
}

impl Dataset {
    pub fn from_items(items: DenseMatrix, n_train: usize, n_val: usize, n_test: usize) -> Self {
        assert_eq!(items.rows(), n_train + n_val + n_test, "split sizes must partition items");
        Dataset {
            items,
            n_train,
            n_val,
            n_test,
            feature_mean: None,
            feature_scale: None,
            degenerate_scale: false,
        }
    }

    /// 80/10/10 carve in item order (generators produce i.i.d. rows).
    pub fn with_default_splits(items: DenseMatrix) -> Self {
        let n = items.rows();
        let n_train = n * 8 / 10;
        let n_val = n / 10;
        let n_test = n - n_train - n_val;
        Self::from_items(items, n_train, n_val, n_test)
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    pub fn n_features(&self) -> usize {
        self.items.cols()
    }

    pub fn split_rows(&self, split: Split) -> Vec<DenseVector> {
        let (start, len) = match split {
            Split::Train => (0, self.n_train),
            Split::Val => (self.n_train, self.n_val),
            Split::Test => (self.n_train + self.n_val, self.n_test),
        };
        (start..start + len)
            .map(|i| DenseVector::from_slice(self.items.row(i)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Ancestral samples of the linear Gaussian generator:
/// `z ~ N(0, I)`, `x = W z + b + sigma * eps`.
pub fn gen_ppca(
    w: &DenseMatrix,
    b: &DenseVector,
    sigma2: f64,
    n: usize,
    rng: &mut Rng,
) -> Dataset {
    assert!(n >= 1);
    assert!(sigma2 >= 0.0);
    assert_eq!(w.rows(), b.dim());
    let (p, d) = (w.rows(), w.cols());
    let sigma = sigma2.sqrt();
    let mut items = DenseMatrix::zeros(n, p);
    for i in 0..n {
        let z = sample_standard_normal(rng, d);
        let mut x = w.matvec(&z);
        x.add_scaled(1.0, b);
        if sigma > 0.0 {
            x.add_scaled(sigma, &sample_standard_normal(rng, p));
        }
        items.row_mut(i).copy_from_slice(x.as_slice());
    }
    Dataset::with_default_splits(items)
}

/// Smooth 1-D manifold in the plane: `t ~ U[-2, 2]`,
/// `x = (t, sin(1.5 t)) + noise_sigma * eps`.
pub fn gen_toy_curve(n: usize, noise_sigma: f64, rng: &mut Rng) -> Dataset {
    assert!(n >= 1);
    assert!(noise_sigma >= 0.0);
    let mut items = DenseMatrix::zeros(n, 2);
    for i in 0..n {
        let t = -2.0 + 4.0 * rng.uniform();
        let mut x = [t, (1.5 * t).sin()];
        if noise_sigma > 0.0 {
            x[0] += noise_sigma * rng.normal();
            x[1] += noise_sigma * rng.normal();
        }
        items.row_mut(i).copy_from_slice(&x);
    }
    Dataset::with_default_splits(items)
}

const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
const IDX_MAGIC_LABELS: u32 = 0x0000_0801;
/// Guard against absurd headers before allocating.
const IDX_MAX_ELEMENTS: usize = 1 << 31;

/// Parsed IDX payload: unsigned bytes with its dimension header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Idx {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl Idx {
    /// Image tensor flattened to `n x pixels`, scaled to `[0, 1]` by 255.
    pub fn to_images(&self) -> DenseMatrix {
        assert_eq!(self.magic, IDX_MAGIC_IMAGES, "not an image IDX");
        let n = self.dims[0];
        let pixels: usize = self.dims[1..].iter().product();
        let data: Vec<f64> = self.bytes.iter().map(|&b| b as f64 / 255.0).collect();
        DenseMatrix::new(n, pixels, data)
    }

    pub fn to_labels(&self) -> &[u8] {
        assert_eq!(self.magic, IDX_MAGIC_LABELS, "not a label IDX");
        &self.bytes
    }
}

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32> {
    if at + 4 > bytes.len() {
        return Err(Error::TruncatedFile {
            expected: at + 4,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]))
}

/// Parse IDX bytes: big-endian magic (`0x00000803` images, `0x00000801`
/// labels), one big-endian `u32` per dimension, then the raw payload.
pub fn parse_idx(bytes: &[u8]) -> Result<Idx> {
    let magic = read_u32_be(bytes, 0)?;
    let ndim = match magic {
        IDX_MAGIC_IMAGES => 3,
        IDX_MAGIC_LABELS => 1,
        other => return Err(Error::BadMagic(other)),
    };
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        dims.push(read_u32_be(bytes, 4 + 4 * i)? as usize);
    }
    let total = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&t| t <= IDX_MAX_ELEMENTS)
        .ok_or_else(|| Error::DimOverflow(dims.clone()))?;
    let header = 4 + 4 * ndim;
    let found = bytes.len() - header.min(bytes.len());
    if found < total {
        return Err(Error::TruncatedFile {
            expected: total,
            found,
        });
    }
    Ok(Idx {
        magic,
        dims,
        bytes: bytes[header..header + total].to_vec(),
    })
}

pub fn load_idx(path: &Path) -> Result<Idx> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_idx(&bytes)
}

/// Serialize back to IDX bytes; inverse of [`parse_idx`].
pub fn idx_to_bytes(idx: &Idx) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * idx.dims.len() + idx.bytes.len());
    out.extend_from_slice(&idx.magic.to_be_bytes());
    for &d in &idx.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&idx.bytes);
    out
}

pub fn write_idx(idx: &Idx, path: &Path) -> Result<()> {
    std::fs::write(path, idx_to_bytes(idx))?;
    Ok(())
}

/// Independent Bernoulli draw per pixel with success probability equal to
/// the intensity; redrawn every epoch by the training loop.
pub fn dynamic_binarize(image: &DenseVector, rng: &mut Rng) -> DenseVector {
    debug_assert!(image.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    DenseVector::new(
        image
            .as_slice()
            .iter()
            .map(|&p| if rng.uniform() < p { 1.0 } else { 0.0 })
            .collect(),
    )
}

/// Subtract the per-feature train mean, then divide every feature by the one
/// scalar that makes the mean per-dimension squared norm of the train split
/// equal one (so a unit-variance initial model sees a reconstruction term of
/// about one per dimension). Statistics are recorded for denormalization.
/// All-constant data falls back to scale 1 and sets the degenerate flag.
pub fn normalize(dataset: &mut Dataset) {
    assert!(dataset.n_train > 0, "normalize requires a train split");
    let p = dataset.n_features();
    let n_train = dataset.n_train;
    let mut mean = DenseVector::zeros(p);
    for i in 0..n_train {
        let row = dataset.items.row(i);
        for j in 0..p {
            mean[j] += row[j];
        }
    }
    for j in 0..p {
        mean[j] /= n_train as f64;
    }
    let mut sumsq = 0.0;
    for i in 0..n_train {
        let row = dataset.items.row(i);
        for j in 0..p {
            let c = row[j] - mean[j];
            sumsq += c * c;
        }
    }
    let msq = sumsq / (n_train * p) as f64;
    let (scale, degenerate) = if msq > 0.0 {
        (msq.sqrt(), false)
    } else {
        (1.0, true)
    };
    for i in 0..dataset.n_items() {
        let row = dataset.items.row_mut(i);
        for j in 0..p {
            row[j] = (row[j] - mean[j]) / scale;
        }
    }
    dataset.feature_mean = Some(mean);
    dataset.feature_scale = Some(scale);
    dataset.degenerate_scale = degenerate;
}

/// Undo [`normalize`] using the recorded statistics.
pub fn denormalize(dataset: &mut Dataset) {
    let mean = dataset.feature_mean.take().expect("dataset was not normalized");
    let scale = dataset.feature_scale.take().expect("dataset was not normalized");
    let p = dataset.n_features();
    for i in 0..dataset.n_items() {
        let row = dataset.items.row_mut(i);
        for j in 0..p {
            row[j] = row[j] * scale + mean[j];
        }
    }
    dataset.degenerate_scale = false;
}
