//! Mini-batch training with a held-out validation split, best-checkpoint
//! retention and early stopping, plus the binary checkpoint format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{clip_global_norm, AdamConfig, AdamState};
use crate::scalar::{lit, Real};
use crate::vae::{kl_divergence, mean_squared_error, mse_gradient, ortho_batch_mse, ArchDescriptor, Autoencoder, LATENT_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without a new best validation loss before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Global gradient-norm cap; non-positive or infinite disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 2000,
            patience: 100,
            validation_fraction: 0.2,
            seed: 0,
            adam: AdamConfig::default(),
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be >= 1".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite() && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("bad Adam hyperparameters {a:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mse: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Reconstruction MSE of the training split with `ζ = 0` before any update.
    pub initial_mse: f64,
    pub stop_reason: StopReason,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub wall_seconds: f64,
}

/// Wall time is ignored.
impl PartialEq for TrainHistory {
    fn eq(&self, o: &Self) -> bool {
        self.epochs == o.epochs
            && self.best_epoch == o.best_epoch
            && self.best_val_loss.to_bits() == o.best_val_loss.to_bits()
            && self.initial_mse.to_bits() == o.initial_mse.to_bits()
            && self.stop_reason == o.stop_reason
            && self.train_indices == o.train_indices
            && self.val_indices == o.val_indices
    }
}

impl TrainHistory {
    /// `epoch,train_loss,train_mse,val_loss,best` with one row per executed epoch.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_mse,val_loss,best\n");
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{}",
                r.epoch,
                r.train_loss,
                r.train_mse,
                r.val_loss,
                (r.epoch == self.best_epoch) as u8
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Mean loss parts over `windows` with `ζ = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub mse: f64,
    pub kl: f64,
}

/// Deterministic evaluation (`ζ = 0`); with the orthogonal loss enabled the
/// reconstruction term is computed per mini-batch of `batch_size`.
pub fn evaluate<T: Real, M: Autoencoder<T>>(model: &M, windows: &[Matrix<T>], batch_size: usize) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(Error::Empty("evaluation windows"));
    }
    let idx: Vec<usize> = (0..windows.len()).collect();
    let zeros = vec![[T::zero(); LATENT_DIM]; windows.len()];
    let mut mse = 0.0;
    let mut kl = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (b_mse, b_kl) = batch_terms(model, windows, chunk, &zeros[..chunk.len()], false)?.0;
        mse += b_mse * chunk.len() as f64;
        kl += b_kl * chunk.len() as f64;
    }
    let n = windows.len() as f64;
    let beta = model.beta().to_f64_lossy();
    Ok(Evaluation {
        loss: (mse + beta * kl) / n,
        mse: mse / n,
        kl: kl / n,
    })
}

type BatchTerms<M> = ((f64, f64), Option<M>);

/// Mean reconstruction and KL terms of one batch, with the summed parameter
/// gradient of `mse + β·KL` when `with_grad` is set.
fn batch_terms<T: Real, M: Autoencoder<T>>(
    model: &M,
    windows: &[Matrix<T>],
    batch: &[usize],
    zetas: &[[T; LATENT_DIM]],
    with_grad: bool,
) -> Result<BatchTerms<M>> {
    let passes = batch
        .par_iter()
        .zip(zetas.par_iter())
        .map(|(&i, &z)| model.forward(&windows[i], z))
        .collect::<Result<Vec<_>>>()?;
    let b = batch.len();
    let inv_b = lit::<T>(1.0 / b as f64);
    let kl: T = passes.iter().map(|p| kl_divergence(&p.1)).sum::<T>() * inv_b;
    let (mse, d_outputs): (T, Vec<Matrix<T>>) = if model.ortho_in_loss() {
        let (k, f) = (model.window(), model.features());
        let targets = Matrix::from_fn(b, k * f, |r, c| windows[batch[r]].as_slice()[c]);
        let outputs = Matrix::from_fn(b, k * f, |r, c| passes[r].0.as_slice()[c]);
        let (mse, d) = ortho_batch_mse(&targets, &outputs)?;
        let rows = (0..b)
            .map(|r| Matrix::from_vec(k, f, d.row(r).to_vec()).expect("window shape"))
            .collect();
        (mse, rows)
    } else {
        let mut mse = T::zero();
        let mut rows = Vec::with_capacity(b);
        for (p, &i) in passes.iter().zip(batch) {
            mse += mean_squared_error(&windows[i], &p.0);
            if with_grad {
                let mut g = mse_gradient(&windows[i], &p.0);
                g.scale(inv_b);
                rows.push(g);
            }
        }
        (mse * inv_b, rows)
    };
    let terms = (mse.to_f64_lossy(), kl.to_f64_lossy());
    if !(terms.0.is_finite() && terms.1.is_finite()) {
        return Err(Error::NonFinite(format!("batch loss terms mse={} kl={}", terms.0, terms.1)));
    }
    if !with_grad {
        return Ok((terms, None));
    }
    let kl_weight = model.beta() * inv_b;
    let mut total = model.zeros_like();
    // Bounded memory; summation order is always sample order.
    let chunk = 2 * rayon::current_num_threads().max(1);
    for (cs, ds) in passes.chunks(chunk).zip(d_outputs.chunks(chunk)) {
        let grads: Vec<M> = cs
            .par_iter()
            .zip(ds.par_iter())
            .map(|(p, d)| model.backward(&p.2, d, kl_weight))
            .collect();
        for g in &grads {
            total.add_scaled(g, T::one());
        }
    }
    Ok((terms, Some(total)))
}

/// Seeded split of `n` indices into (train, validation).
pub fn split_indices(n: usize, validation_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_val = (n as f64 * validation_fraction).round() as usize;
    let n_val = n_val.max(1);
    if n < 2 || n_val >= n {
        return Err(Error::Empty("train/validation split"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

/// Trains `model` and returns the parameters with the lowest validation loss.
pub fn train<T: Real, M: Autoencoder<T>>(model: M, windows: &[Matrix<T>], cfg: &TrainConfig) -> Result<(M, TrainHistory)> {
    cfg.validate()?;
    if windows.len() < 2 {
        return Err(Error::Empty("training needs at least 2 windows"));
    }
    for w in windows {
        model.check_window(w)?;
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_idx, val_idx) = split_indices(windows.len(), cfg.validation_fraction, &mut rng)?;
    let train_set: Vec<Matrix<T>> = train_idx.iter().map(|&i| windows[i].clone()).collect();
    let val_set: Vec<Matrix<T>> = val_idx.iter().map(|&i| windows[i].clone()).collect();

    let initial_mse = evaluate(&model, &train_set, cfg.batch_size)?.mse;
    let mut model = model;
    let mut adam = AdamState::new(&model, cfg.adam);
    let clip = (cfg.clip_norm > 0.0 && cfg.clip_norm.is_finite()).then(|| lit::<T>(cfg.clip_norm));

    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut mse_sum = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let zetas: Vec<[T; LATENT_DIM]> = batch
                .iter()
                .map(|_| {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    [lit(a), lit(b)]
                })
                .collect();
            let ((mse, kl), grad) = batch_terms(&model, &train_set, batch, &zetas, true).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, batch {bi}: {m}")),
                other => other,
            })?;
            let mut grad = grad.expect("gradient requested");
            if let Some(c) = clip {
                clip_global_norm(&mut grad, c);
            }
            adam.update(&mut model, &grad)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {bi}: {e}")))?;
            let n = batch.len() as f64;
            loss_sum += (mse + model.beta().to_f64_lossy() * kl) * n;
            mse_sum += mse * n;
        }
        let val = evaluate(&model, &val_set, cfg.batch_size)?;
        if !val.loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let n = train_set.len() as f64;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_mse: mse_sum / n,
            val_loss: val.loss,
        });
        if val.loss < best_val {
            best_val = val.loss;
            best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    let history = TrainHistory {
        epochs: records,
        best_epoch,
        best_val_loss: best_val,
        initial_mse,
        stop_reason,
        train_indices: train_idx,
        val_indices: val_idx,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((best, history))
}

const MAGIC: &[u8; 4] = b"BLVW";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Layout (little-endian): magic, version, kind, ints (count then values),
/// reals as f64 (count then values), tensor count, then per tensor its rank,
/// dims and row-major f64 data in the model's traversal order, then a CRC32
/// of everything before it.
pub fn checkpoint_bytes<T: Real, M: Autoencoder<T>>(model: &M) -> Vec<u8> {
    let desc = model.descriptor();
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    b.extend_from_slice(&desc.kind.to_le_bytes());
    b.extend_from_slice(&(desc.ints.len() as u32).to_le_bytes());
    for v in &desc.ints {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&(desc.reals.len() as u32).to_le_bytes());
    for v in &desc.reals {
        b.extend_from_slice(&v.to_le_bytes());
    }
    let tensors = model.tensors();
    b.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        b.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data {
            b.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    b
}

pub fn save_checkpoint<T: Real, M: Autoencoder<T>>(model: &M, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let n = self.u32()? as usize;
        if n > self.buf.len() {
            return Err(Error::Checkpoint(format!("implausible {what} count {n}")));
        }
        Ok(n)
    }
}

/// Parses only the architecture header of a checkpoint.
pub fn read_descriptor(bytes: &[u8]) -> Result<ArchDescriptor> {
    Ok(parse(bytes)?.0)
}

type Parsed = (ArchDescriptor, Vec<(Vec<usize>, Vec<f64>)>);

fn parse(bytes: &[u8]) -> Result<Parsed> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { buf: payload, pos: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != stored {
        return Err(Error::Checkpoint("CRC mismatch (corrupt or truncated file)".into()));
    }
    let kind = r.u32()?;
    let n = r.count("ints")?;
    let ints = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let n = r.count("reals")?;
    let reals = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let n = r.count("tensors")?;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let rank = r.count("rank")?;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = dims.iter().product();
        if len > payload.len() / 8 {
            return Err(Error::Checkpoint(format!("tensor dims {dims:?} exceed file size")));
        }
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push((dims, data));
    }
    if r.pos != payload.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", payload.len() - r.pos)));
    }
    Ok((ArchDescriptor { kind, ints, reals }, tensors))
}

/// Rebuilds a model from checkpoint bytes; nothing is returned unless every tensor matches.
pub fn checkpoint_from_bytes<T: Real, M: Autoencoder<T>>(bytes: &[u8]) -> Result<M> {
    let (desc, tensors) = parse(bytes)?;
    let mut model = M::from_descriptor(&desc)?;
    let shapes: Vec<Vec<usize>> = model.tensors().iter().map(|t| t.dims.clone()).collect();
    if shapes.len() != tensors.len() {
        return Err(Error::ArchitectureMismatch(format!(
            "checkpoint has {} tensors, architecture expects {}",
            tensors.len(),
            shapes.len()
        )));
    }
    for (i, (want, (dims, _))) in shapes.iter().zip(&tensors).enumerate() {
        if want != dims {
            return Err(Error::ArchitectureMismatch(format!("tensor {i}: checkpoint {dims:?}, expected {want:?}")));
        }
    }
    for (dst, (_, data)) in model.tensors_mut().into_iter().zip(&tensors) {
        for (d, &v) in dst.iter_mut().zip(data) {
            *d = lit(v);
        }
    }
    Ok(model)
}

pub fn load_checkpoint<T: Real, M: Autoencoder<T>>(path: &Path) -> Result<M> {
    checkpoint_from_bytes(&fs::read(path)?)
}

/// Loads a checkpoint and requires its architecture to equal `expected`.
pub fn load_checkpoint_expecting<T: Real, M: Autoencoder<T>>(path: &Path, expected: &ArchDescriptor) -> Result<M> {
    let bytes = fs::read(path)?;
    let found = read_descriptor(&bytes)?;
    if &found != expected {
        return Err(Error::ArchitectureMismatch(format!("checkpoint is {found:?}, expected {expected:?}")));
    }
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::{ArchConfig, BiLstmVae};

    fn tiny(seed: u64) -> BiLstmVae<f64> {
        let mut cfg = ArchConfig::standard(3, 2);
        cfg.encoder_hidden = [3, 2];
        cfg.encoder_dense = 4;
        cfg.decoder_hidden = [2, 3];
        cfg.decoder_dense = 4;
        BiLstmVae::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = split_indices(10, 0.2, &mut r).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(split_indices(1, 0.5, &mut r).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.validation_fraction = 1.0;
        assert!(c.validate().is_err());
        c = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(c.validate().is_err());
        c = TrainConfig { patience: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn checkpoint_bytes_roundtrip() {
        let m = tiny(3);
        let b = checkpoint_bytes(&m);
        let back: BiLstmVae<f64> = checkpoint_from_bytes(&b).unwrap();
        assert_eq!(back, m);
        let mut bad = b.clone();
        bad[20] ^= 1;
        assert!(matches!(checkpoint_from_bytes::<f64, BiLstmVae<f64>>(&bad), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn history_csv_marks_best() {
        let h = TrainHistory {
            epochs: vec![
                EpochRecord { epoch: 1, train_loss: 2.0, train_mse: 1.0, val_loss: 3.0 },
                EpochRecord { epoch: 2, train_loss: 1.0, train_mse: 0.5, val_loss: 2.0 },
            ],
            best_epoch: 2,
            best_val_loss: 2.0,
            initial_mse: 4.0,
            stop_reason: StopReason::MaxEpochs,
            train_indices: vec![],
            val_indices: vec![],
            wall_seconds: 0.0,
        };
        let csv = h.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().ends_with(",1"));
    }
}
