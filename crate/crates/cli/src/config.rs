//! Flat `key = value` run configuration with `#` comments. Unknown keys are
//! rejected before any compute, and the canonical serialization is embedded
//! in checkpoints so a resumed run can prove it matches its original config.

use std::path::{Path, PathBuf};

use vlae_core::error::{Error, Result};
use vlae_core::models::{DecayKind, HeadKind, ModelKind, TrainConfig};

/// Where the items of a run come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// `(t, sin(1.5 t))` plus isotropic noise.
    Toy { n_items: usize, noise_sigma: f64 },
    /// Ancestral samples of a seeded random linear Gaussian generator.
    Ppca {
        n_items: usize,
        data_dim: usize,
        latent_dim: usize,
        sigma2: f64,
    },
    /// Flat binary file written by `gen-data`.
    File { path: PathBuf },
    /// IDX image file; optional separate test file, optional item cap.
    Idx {
        path: PathBuf,
        test_path: Option<PathBuf>,
        n_take: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub out_dir: Option<PathBuf>,
    /// Additionally checkpoint every N epochs (0: best/last only).
    pub ckpt_every: usize,
}

pub const OUT_DIR_ENV: &str = "VLAE_OUT_DIR";

impl RunConfig {
    pub fn out_dir(&self) -> PathBuf {
        if let Some(d) = &self.out_dir {
            return d.clone();
        }
        if let Ok(d) = std::env::var(OUT_DIR_ENV) {
            if !d.is_empty() {
                return PathBuf::from(d);
            }
        }
        PathBuf::from(".")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RawConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            c.set(key.trim(), value.trim())?;
        }
        c.build()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical serialization: every key in fixed order. Parsing this text
    /// reproduces the config exactly; checkpoints embed it.
    pub fn canonical_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("model", t.kind.as_str().to_string());
        kv("head", t.head.as_str().to_string());
        kv("latent_dim", t.latent_dim.to_string());
        kv(
            "hidden_dims",
            t.hidden_dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("t_steps", t.steps.to_string());
        kv("decay", t.decay.as_str().to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("lr", format!("{}", t.lr));
        kv("epochs", t.epochs.to_string());
        kv("seed", t.seed.to_string());
        kv("iwae_k", t.iwae_k.to_string());
        kv("savae_alpha", format!("{}", t.savae_alpha));
        kv("savae_clip", format!("{}", t.savae_clip));
        kv("patience", t.patience.to_string());
        kv("binarize", t.binarize.to_string());
        match &self.dataset {
            DatasetSpec::Toy {
                n_items,
                noise_sigma,
            } => {
                kv("dataset", "toy".into());
                kv("n_items", n_items.to_string());
                kv("noise_sigma", format!("{noise_sigma}"));
            }
            DatasetSpec::Ppca {
                n_items,
                data_dim,
                latent_dim,
                sigma2,
            } => {
                kv("dataset", "ppca".into());
                kv("n_items", n_items.to_string());
                kv("ppca_data_dim", data_dim.to_string());
                kv("ppca_latent_dim", latent_dim.to_string());
                kv("ppca_sigma2", format!("{sigma2}"));
            }
            DatasetSpec::File { path } => {
                kv("dataset", "file".into());
                kv("data_path", path.display().to_string());
            }
            DatasetSpec::Idx {
                path,
                test_path,
                n_take,
            } => {
                kv("dataset", "idx".into());
                kv("data_path", path.display().to_string());
                if let Some(tp) = test_path {
                    kv("data_path_test", tp.display().to_string());
                }
                if *n_take > 0 {
                    kv("n_take", n_take.to_string());
                }
            }
        }
        if let Some(d) = &self.out_dir {
            kv("out_dir", d.display().to_string());
        }
        kv("ckpt_every", self.ckpt_every.to_string());
        s
    }

    /// The keys that pin the deterministic run: everything except the
    /// control knobs (`epochs`, `patience`, `out_dir`, `ckpt_every`).
    /// Resuming requires this projection to match the checkpoint's; raising
    /// `epochs` or moving the output directory does not.
    pub fn identity_text(&self) -> String {
        self.canonical_text()
            .lines()
            .filter(|l| {
                !(l.starts_with("epochs =")
                    || l.starts_with("patience =")
                    || l.starts_with("out_dir =")
                    || l.starts_with("ckpt_every ="))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Default)]
struct RawConfig {
    model: Option<String>,
    head: Option<String>,
    latent_dim: Option<usize>,
    hidden_dims: Option<Vec<usize>>,
    t_steps: Option<usize>,
    decay: Option<String>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    epochs: Option<usize>,
    seed: Option<u64>,
    iwae_k: Option<usize>,
    savae_alpha: Option<f64>,
    savae_clip: Option<f64>,
    patience: Option<usize>,
    binarize: Option<bool>,
    dataset: Option<String>,
    n_items: Option<usize>,
    noise_sigma: Option<f64>,
    ppca_data_dim: Option<usize>,
    ppca_latent_dim: Option<usize>,
    ppca_sigma2: Option<f64>,
    data_path: Option<PathBuf>,
    data_path_test: Option<PathBuf>,
    n_take: Option<usize>,
    out_dir: Option<PathBuf>,
    ckpt_every: Option<usize>,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value '{v}' for {key}")))
}

impl RawConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model" => self.model = Some(value.to_string()),
            "head" => self.head = Some(value.to_string()),
            "latent_dim" => self.latent_dim = Some(parse_num(key, value)?),
            "hidden_dims" => {
                // empty value: no hidden layers (a globally linear decoder)
                let dims = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|p| parse_num::<usize>(key, p.trim()))
                        .collect::<Result<Vec<_>>>()?
                };
                self.hidden_dims = Some(dims);
            }
            "t_steps" => self.t_steps = Some(parse_num(key, value)?),
            "decay" => self.decay = Some(value.to_string()),
            "batch_size" => self.batch_size = Some(parse_num(key, value)?),
            "lr" => self.lr = Some(parse_num(key, value)?),
            "epochs" => self.epochs = Some(parse_num(key, value)?),
            "seed" => self.seed = Some(parse_num(key, value)?),
            "iwae_k" => self.iwae_k = Some(parse_num(key, value)?),
            "savae_alpha" => self.savae_alpha = Some(parse_num(key, value)?),
            "savae_clip" => self.savae_clip = Some(parse_num(key, value)?),
            "patience" => self.patience = Some(parse_num(key, value)?),
            "binarize" => {
                self.binarize = Some(match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(Error::InvalidConfig(format!("bad value '{value}' for binarize"))),
                })
            }
            "dataset" => self.dataset = Some(value.to_string()),
            "n_items" => self.n_items = Some(parse_num(key, value)?),
            "noise_sigma" => self.noise_sigma = Some(parse_num(key, value)?),
            "ppca_data_dim" => self.ppca_data_dim = Some(parse_num(key, value)?),
            "ppca_latent_dim" => self.ppca_latent_dim = Some(parse_num(key, value)?),
            "ppca_sigma2" => self.ppca_sigma2 = Some(parse_num(key, value)?),
            "data_path" => self.data_path = Some(PathBuf::from(value)),
            "data_path_test" => self.data_path_test = Some(PathBuf::from(value)),
            "n_take" => self.n_take = Some(parse_num(key, value)?),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "ckpt_every" => self.ckpt_every = Some(parse_num(key, value)?),
            other => {
                return Err(Error::InvalidConfig(format!("unknown key '{other}'")));
            }
        }
        Ok(())
    }

    fn build(self) -> Result<RunConfig> {
        let head = HeadKind::parse(self.head.as_deref().unwrap_or("gaussian"))?;
        let train = TrainConfig {
            kind: ModelKind::parse(self.model.as_deref().unwrap_or("vlae"))?,
            head,
            latent_dim: self.latent_dim.unwrap_or(8),
            hidden_dims: self.hidden_dims.unwrap_or_else(|| vec![64]),
            steps: self.t_steps.unwrap_or(4),
            decay: DecayKind::parse(self.decay.as_deref().unwrap_or("harmonic"))?,
            batch_size: self.batch_size.unwrap_or(128),
            lr: self.lr.unwrap_or(5e-4),
            epochs: self.epochs.unwrap_or(100),
            seed: self.seed.unwrap_or(0),
            iwae_k: self.iwae_k.unwrap_or(100),
            savae_alpha: self.savae_alpha.unwrap_or(5e-4),
            savae_clip: self.savae_clip.unwrap_or(5.0),
            patience: self.patience.unwrap_or(0),
            binarize: self.binarize.unwrap_or(head == HeadKind::Bernoulli),
        };
        train.validate()?;
        let dataset = match self.dataset.as_deref().unwrap_or("toy") {
            "toy" => DatasetSpec::Toy {
                n_items: self.n_items.unwrap_or(2500),
                noise_sigma: self.noise_sigma.unwrap_or(0.05),
            },
            "ppca" => DatasetSpec::Ppca {
                n_items: self.n_items.unwrap_or(2500),
                data_dim: self.ppca_data_dim.unwrap_or(8),
                latent_dim: self.ppca_latent_dim.unwrap_or(2),
                sigma2: self.ppca_sigma2.unwrap_or(0.25),
            },
            "file" => DatasetSpec::File {
                path: self
                    .data_path
                    .ok_or_else(|| Error::InvalidConfig("dataset = file needs data_path".into()))?,
            },
            "idx" => DatasetSpec::Idx {
                path: self
                    .data_path
                    .ok_or_else(|| Error::InvalidConfig("dataset = idx needs data_path".into()))?,
                test_path: self.data_path_test,
                n_take: self.n_take.unwrap_or(0),
            },
            other => {
                return Err(Error::InvalidConfig(format!("unknown dataset kind '{other}'")))
            }
        };
        if matches!(dataset, DatasetSpec::Toy { .. } | DatasetSpec::Ppca { .. })
            && train.head == HeadKind::Bernoulli
        {
            return Err(Error::InvalidConfig(
                "Bernoulli head requires image data in [0, 1] (dataset = idx or file)".into(),
            ));
        }
        if let DatasetSpec::Toy { n_items, .. } | DatasetSpec::Ppca { n_items, .. } = dataset {
            if n_items < 10 {
                return Err(Error::InvalidConfig("n_items must be at least 10".into()));
            }
        }
        Ok(RunConfig {
            train,
            dataset,
            out_dir: self.out_dir,
            ckpt_every: self.ckpt_every.unwrap_or(0),
        })
    }
}
