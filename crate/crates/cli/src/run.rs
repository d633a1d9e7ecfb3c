//! Subcommand drivers: dataset materialization, the training loop with
//! checkpointing and resume, evaluation, and data generation.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use vlae_core::data::{self, Dataset, Split};
use vlae_core::error::{Error, Result};
use vlae_core::linalg::{sample_standard_normal, DenseMatrix, DenseVector, Rng};
use vlae_core::models::{
    eval_stream, evaluate, init_models, init_stream, train_epoch, train_stream, HeadKind, Metrics,
    TrainState,
};
use vlae_core::network::Head;

use crate::checkpoint::{pack_adam, pack_mlp, unpack_adam, unpack_mlp, Checkpoint};
use crate::config::{DatasetSpec, RunConfig};
use crate::csvout::{metrics_row, timing_row, METRICS_HEADER, TIMING_HEADER};

/// Substream for drawing synthetic dataset contents and generator parameters.
pub fn data_stream() -> u64 {
    0x3000_0000
}

/// The seeded random linear generator behind `dataset = ppca`. The returned
/// `Rng` continues the stream the items are then drawn from.
pub fn ppca_generator(
    seed: u64,
    data_dim: usize,
    latent_dim: usize,
) -> (DenseMatrix, DenseVector, Rng) {
    let mut rng = Rng::with_stream(seed, data_stream());
    let w = DenseMatrix::from_fn(data_dim, latent_dim, |_, _| rng.normal());
    let b = sample_standard_normal(&mut rng, data_dim);
    (w, b, rng)
}

/// Substream for final test-split evaluation at a given epoch.
fn test_stream(epoch: usize) -> u64 {
    0x4000_0000 + epoch as u64
}

pub const DATA_MAGIC: &[u8; 4] = b"VDAT";
pub const DATA_VERSION: u32 = 1;

/// Flat binary dataset: magic, version, n, p, row-major little-endian f64.
pub fn write_data_file(items: &DenseMatrix, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + items.as_slice().len() * 8);
    out.extend_from_slice(DATA_MAGIC);
    out.extend_from_slice(&DATA_VERSION.to_le_bytes());
    out.extend_from_slice(&(items.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(items.cols() as u32).to_le_bytes());
    for &v in items.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
        .write_all(&out)?;
    Ok(())
}

pub fn read_data_file(path: &Path) -> Result<DenseMatrix> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != DATA_MAGIC {
        return Err(Error::Io(format!("{}: not a data file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != DATA_VERSION {
        return Err(Error::Io(format!("unsupported data file version {version}")));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let p = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + n * p * 8;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(n * p);
    for i in 0..n * p {
        let at = 16 + i * 8;
        data.push(f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()));
    }
    Ok(DenseMatrix::new(n, p, data))
}

/// Materialize the configured dataset. Gaussian-head runs are normalized;
/// Bernoulli-head runs keep raw [0, 1] intensities for binarization.
pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let seed = cfg.train.seed;
    let mut ds = match &cfg.dataset {
        DatasetSpec::Toy {
            n_items,
            noise_sigma,
        } => {
            let mut rng = Rng::with_stream(seed, data_stream());
            data::gen_toy_curve(*n_items, *noise_sigma, &mut rng)
        }
        DatasetSpec::Ppca {
            n_items,
            data_dim,
            latent_dim,
            sigma2,
        } => {
            let (w, b, mut rng) = ppca_generator(seed, *data_dim, *latent_dim);
            data::gen_ppca(&w, &b, *sigma2, *n_items, &mut rng)
        }
        DatasetSpec::File { path } => Dataset::with_default_splits(read_data_file(path)?),
        DatasetSpec::Idx {
            path,
            test_path,
            n_take,
        } => {
            let idx = data::load_idx(path)?;
            let mut images = idx.to_images();
            if *n_take > 0 && *n_take < images.rows() {
                let p = images.cols();
                let data = images.as_slice()[..n_take * p].to_vec();
                images = DenseMatrix::new(*n_take, p, data);
            }
            match test_path {
                Some(tp) => {
                    let test = data::load_idx(tp)?.to_images();
                    assert_eq!(test.cols(), images.cols(), "train/test feature mismatch");
                    let n = images.rows();
                    // canonical 50k/10k carve for the full MNIST train file
                    let n_val = if n == 60_000 { 10_000 } else { n / 10 };
                    let n_train = n - n_val;
                    let mut all = images.as_slice().to_vec();
                    all.extend_from_slice(test.as_slice());
                    let items = DenseMatrix::new(n + test.rows(), images.cols(), all);
                    Dataset::from_items(items, n_train, n_val, test.rows())
                }
                None => Dataset::with_default_splits(images),
            }
        }
    };
    if cfg.train.head == HeadKind::Gaussian {
        data::normalize(&mut ds);
    }
    Ok(ds)
}

fn epoch_items(rows: &[DenseVector], binarize: bool, rng: &mut Rng) -> Vec<DenseVector> {
    if binarize {
        rows.iter().map(|r| data::dynamic_binarize(r, rng)).collect()
    } else {
        rows.to_vec()
    }
}

fn build_checkpoint(
    cfg: &RunConfig,
    state: &TrainState,
    ds: &Dataset,
    init_rng: &Rng,
    epochs_done: usize,
    best_epoch: usize,
    best_val_elbo: f64,
) -> Checkpoint {
    let mut tensors = Vec::new();
    pack_mlp("decoder", &state.decoder, &mut tensors);
    pack_mlp("encoder", &state.encoder, &mut tensors);
    pack_adam("opt.dec", &state.dec_opt, &mut tensors);
    pack_adam("opt.enc", &state.enc_opt, &mut tensors);
    if let (Some(mean), Some(scale)) = (&ds.feature_mean, ds.feature_scale) {
        tensors.push(crate::checkpoint::Tensor::vector("data.feature_mean", mean));
        tensors.push(crate::checkpoint::Tensor::scalar("data.feature_scale", scale));
    }
    let (rng_key, rng_counter) = init_rng.state();
    Checkpoint {
        config_text: cfg.canonical_text(),
        rng_key,
        rng_counter,
        epochs_done: epochs_done as u32,
        best_epoch: best_epoch as u32,
        best_val_elbo,
        tensors,
    }
}

fn restore_state(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<TrainState> {
    let t = &cfg.train;
    let n_dec_layers = t.hidden_dims.len() + 1;
    let dec_head = match t.head {
        HeadKind::Gaussian => Head::Gaussian { log_sigma2: 0.0 },
        HeadKind::Bernoulli => Head::Bernoulli,
    };
    let decoder = unpack_mlp(ckpt, "decoder", n_dec_layers, dec_head)?;
    let encoder = unpack_mlp(ckpt, "encoder", n_dec_layers, Head::Linear)?;
    let dec_opt = unpack_adam(ckpt, "opt.dec", &decoder)?;
    let enc_opt = unpack_adam(ckpt, "opt.enc", &encoder)?;
    Ok(TrainState {
        decoder,
        encoder,
        dec_opt,
        enc_opt,
    })
}

pub struct TrainOutcome {
    pub metrics: Vec<Metrics>,
    pub best_epoch: usize,
    pub best_val_elbo: f64,
    pub out_dir: PathBuf,
    pub best_ckpt: PathBuf,
}

/// Run (or resume) training: one metrics row per epoch into `metrics.csv`,
/// wall-clock into `timing.log`, best-validation and last checkpoints into
/// the output directory.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.train.validate()?;
    let out_dir = cfg.out_dir();
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", out_dir.display())))?;

    let ds = build_dataset(cfg)?;
    let train_rows = ds.split_rows(Split::Train);
    let val_rows = ds.split_rows(Split::Val);
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(Error::InvalidConfig(
            "dataset too small to carve train/val splits".into(),
        ));
    }

    let t = &cfg.train;
    let mut init_rng = Rng::with_stream(t.seed, init_stream());
    let mut state = init_models(t, ds.n_features(), &mut init_rng);
    let mut start_epoch = 0usize;
    let mut best_epoch = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut metrics_rows: Vec<String> = Vec::new();
    let mut timing_rows: Vec<String> = Vec::new();
    let mut all_metrics: Vec<Metrics> = Vec::new();

    if let Some(ckpt_path) = resume {
        let ckpt = Checkpoint::load(ckpt_path)?;
        let ckpt_cfg = RunConfig::parse(&ckpt.config_text)?;
        if ckpt_cfg.identity_text() != cfg.identity_text() {
            return Err(Error::InvalidConfig(
                "checkpoint was produced by a different config".into(),
            ));
        }
        state = restore_state(cfg, &ckpt)?;
        init_rng = Rng::restore(ckpt.rng_key, ckpt.rng_counter);
        start_epoch = ckpt.epochs_done as usize;
        best_epoch = ckpt.best_epoch as usize;
        best_val = ckpt.best_val_elbo;
        // keep previously written metric rows intact on resume
        if let Ok(existing) = std::fs::read_to_string(out_dir.join("metrics.csv")) {
            for line in existing.lines().skip(1).take(start_epoch) {
                metrics_rows.push(line.to_string());
            }
        }
    }

    let best_ckpt = out_dir.join("best.ckpt");
    let last_ckpt = out_dir.join("last.ckpt");
    let mut stale_epochs = 0usize;

    for epoch in start_epoch..t.epochs {
        let clock = Instant::now();
        let mut erng = Rng::with_stream(t.seed, train_stream(epoch));
        let items = epoch_items(&train_rows, t.binarize, &mut erng);
        let train_elbo = train_epoch(&mut state, &items, t, &mut erng)?;

        let mut vrng = Rng::with_stream(t.seed, eval_stream(epoch));
        let val_items = epoch_items(&val_rows, t.binarize, &mut vrng);
        let summary = evaluate(&state, &val_items, t, &mut vrng)?;

        let m = Metrics {
            epoch,
            train_elbo,
            val_elbo: summary.elbo,
            val_iwae: summary.iwae,
            sigma2: match t.head {
                HeadKind::Gaussian => state.decoder.sigma2(),
                HeadKind::Bernoulli => f64::NAN,
            },
            wall_clock_seconds: clock.elapsed().as_secs_f64(),
        };
        metrics_rows.push(metrics_row(&m));
        timing_rows.push(timing_row(&m));
        all_metrics.push(m.clone());

        let improved = summary.elbo > best_val;
        if improved {
            best_val = summary.elbo;
            best_epoch = epoch;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
        }
        let ckpt = build_checkpoint(cfg, &state, &ds, &init_rng, epoch + 1, best_epoch, best_val);
        ckpt.save(&last_ckpt)?;
        if improved {
            ckpt.save(&best_ckpt)?;
        }
        if cfg.ckpt_every > 0 && (epoch + 1) % cfg.ckpt_every == 0 {
            ckpt.save(&out_dir.join(format!("epoch{:04}.ckpt", epoch + 1)))?;
        }
        if t.patience > 0 && stale_epochs >= t.patience {
            break;
        }
    }

    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for row in &metrics_rows {
        csv.push_str(row);
        csv.push('\n');
    }
    std::fs::write(out_dir.join("metrics.csv"), csv)?;
    let mut log = String::from(TIMING_HEADER);
    log.push('\n');
    for row in &timing_rows {
        log.push_str(row);
        log.push('\n');
    }
    std::fs::write(out_dir.join("timing.log"), log)?;

    Ok(TrainOutcome {
        metrics: all_metrics,
        best_epoch,
        best_val_elbo: best_val,
        out_dir,
        best_ckpt,
    })
}

pub struct EvalReport {
    pub split: Split,
    pub elbo: f64,
    pub iwae: f64,
    pub iwae_k: usize,
    pub epochs_done: usize,
    pub best_epoch: usize,
}

/// Evaluate a checkpoint on a split of its configured dataset (or an
/// override data file). Uses the evaluation stream of the checkpoint's best
/// epoch, so re-evaluating the best checkpoint on the validation split
/// reproduces its recorded score exactly.
pub fn cmd_eval(
    ckpt_path: &Path,
    data_override: Option<&Path>,
    iwae_k: Option<usize>,
    split: Split,
) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let mut cfg = RunConfig::parse(&ckpt.config_text)?;
    if let Some(p) = data_override {
        cfg.dataset = DatasetSpec::File { path: p.to_path_buf() };
    }
    if let Some(k) = iwae_k {
        if k == 0 {
            return Err(Error::InvalidConfig("iwae_k must be positive".into()));
        }
        cfg.train.iwae_k = k;
    }
    let ds = build_dataset(&cfg)?;
    let state = restore_state(&cfg, &ckpt)?;
    let rows = ds.split_rows(split);
    if rows.is_empty() {
        return Err(Error::InvalidConfig("requested split is empty".into()));
    }
    let epoch = ckpt.best_epoch as usize;
    let stream = match split {
        Split::Val => eval_stream(epoch),
        _ => test_stream(epoch),
    };
    let mut rng = Rng::with_stream(cfg.train.seed, stream);
    let items = epoch_items(&rows, cfg.train.binarize, &mut rng);
    let summary = evaluate(&state, &items, &cfg.train, &mut rng)?;
    Ok(EvalReport {
        split,
        elbo: summary.elbo,
        iwae: summary.iwae,
        iwae_k: cfg.train.iwae_k,
        epochs_done: ckpt.epochs_done as usize,
        best_epoch: epoch,
    })
}

/// Write an eval report CSV next to stdout reporting.
pub fn write_eval_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let split = match report.split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    };
    let text = format!(
        "split,elbo,iwae,iwae_k\n{split},{},{},{}\n",
        report.elbo, report.iwae, report.iwae_k
    );
    std::fs::write(path, text)?;
    Ok(())
}

pub struct GenDataArgs {
    pub kind: String,
    pub out: PathBuf,
    pub n_items: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub data_dim: usize,
    pub latent_dim: usize,
    pub sigma2: f64,
}

/// Generate a synthetic dataset as a flat binary file plus a text sidecar
/// recording the generator and seed.
pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    if args.n_items == 0 {
        return Err(Error::InvalidConfig("n must be positive".into()));
    }
    let mut rng = Rng::with_stream(args.seed, data_stream());
    let (ds, meta_extra) = match args.kind.as_str() {
        "toy" => (
            data::gen_toy_curve(args.n_items, args.noise_sigma, &mut rng),
            format!("noise_sigma = {}\n", args.noise_sigma),
        ),
        "ppca" => {
            let w = DenseMatrix::from_fn(args.data_dim, args.latent_dim, |_, _| rng.normal());
            let b = sample_standard_normal(&mut rng, args.data_dim);
            (
                data::gen_ppca(&w, &b, args.sigma2, args.n_items, &mut rng),
                format!(
                    "data_dim = {}\nlatent_dim = {}\nsigma2 = {}\n",
                    args.data_dim, args.latent_dim, args.sigma2
                ),
            )
        }
        other => {
            return Err(Error::InvalidConfig(format!("unknown data kind '{other}'")));
        }
    };
    write_data_file(&ds.items, &args.out)?;
    let meta = format!(
        "kind = {}\nseed = {}\nn_items = {}\n{}",
        args.kind, args.seed, args.n_items, meta_extra
    );
    let meta_path = args.out.with_extension("meta");
    std::fs::write(&meta_path, meta)?;
    Ok(())
}

/// IWAE on the test split with a caller-chosen seed stream; exposed for the
/// model-comparison harness.
pub fn test_iwae(cfg: &RunConfig, state: &TrainState, ds: &Dataset, epoch: usize) -> Result<f64> {
    let rows = ds.split_rows(Split::Test);
    let mut rng = Rng::with_stream(cfg.train.seed, test_stream(epoch));
    let items = epoch_items(&rows, cfg.train.binarize, &mut rng);
    Ok(evaluate(state, &items, &cfg.train, &mut rng)?.iwae)
}

/// Load a checkpoint into usable state (config, networks, dataset).
pub fn load_run(ckpt_path: &Path) -> Result<(RunConfig, TrainState, Dataset, Checkpoint)> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let cfg = RunConfig::parse(&ckpt.config_text)?;
    let ds = build_dataset(&cfg)?;
    let state = restore_state(&cfg, &ckpt)?;
    Ok((cfg, state, ds, ckpt))
}
