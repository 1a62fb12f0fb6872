//! Synthetic ring-coupled oscillator datasets.
//!
//! Each present node is a Stuart–Landau unit `dz/dt = (1 + iω − |z|²) z`
//! diffusively coupled to its present ring neighbours. Missing nodes break the
//! ring and their feature columns carry low-level Gaussian noise, so the
//! feature layout is identical across configurations.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Standard deviation below which a feature is treated as constant.
pub const STD_EPS: f64 = 1e-8;
/// Standard deviation of the noise emitted by missing nodes (variance 1e-4).
pub const MISSING_NOISE_STD: f64 = 1e-2;
/// Mean level of a present node's sensors, in units of the oscillation amplitude.
pub const SENSOR_BASELINE: f64 = 5.0;
/// Fraction of integrated steps discarded as transient.
pub const TRANSIENT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingConfig {
    pub n_nodes: usize,
    pub missing: BTreeSet<usize>,
    pub coupling_strength: f64,
    /// Natural frequency in Hz, one entry per node.
    pub natural_freq: Vec<f64>,
    pub n_sensors_per_node: usize,
    pub n_vars_per_sensor: usize,
    pub sample_rate: f64,
    pub duration: f64,
    pub seed: u64,
    pub mode_label: String,
}

impl RingConfig {
    /// Desk-scale default: 8 nodes × 3 sensors × 2 variables + time, 4000 steps at 200 Hz.
    pub fn desk_default(mode_label: &str, missing: &[usize], seed: u64) -> Self {
        Self {
            n_nodes: 8,
            missing: missing.iter().copied().collect(),
            coupling_strength: 0.5,
            natural_freq: vec![2.0; 8],
            n_sensors_per_node: 3,
            n_vars_per_sensor: 2,
            sample_rate: 200.0,
            duration: 20.0,
            seed,
            mode_label: mode_label.to_string(),
        }
    }

    /// Number of columns including the trailing time column.
    pub fn feature_count(&self) -> usize {
        self.n_nodes * self.n_sensors_per_node * self.n_vars_per_sensor + 1
    }

    pub fn n_steps(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    /// Column indices carrying node `node`'s sensors, sensor-major.
    pub fn node_columns(&self, node: usize) -> std::ops::Range<usize> {
        let per = self.n_sensors_per_node * self.n_vars_per_sensor;
        node * per..(node + 1) * per
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_nodes == 0 || self.n_sensors_per_node == 0 || self.n_vars_per_sensor == 0 {
            return bad("node, sensor and variable counts must be >= 1".into());
        }
        if let Some(&m) = self.missing.iter().find(|&&m| m >= self.n_nodes) {
            return bad(format!("missing node {m} outside 0..{}", self.n_nodes));
        }
        if self.missing.len() >= self.n_nodes {
            return bad("all nodes missing".into());
        }
        if self.natural_freq.len() != self.n_nodes {
            return bad(format!(
                "natural_freq has {} entries for {} nodes",
                self.natural_freq.len(),
                self.n_nodes
            ));
        }
        let finite = [self.coupling_strength, self.sample_rate, self.duration]
            .iter()
            .chain(&self.natural_freq)
            .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite configuration value".into());
        }
        if self.coupling_strength < 0.0 {
            return bad("coupling_strength must be >= 0".into());
        }
        if self.sample_rate <= 0.0 || self.duration <= 0.0 {
            return bad("sample_rate and duration must be > 0".into());
        }
        if self.n_steps() < 2 {
            return bad("duration * sample_rate must give at least 2 steps".into());
        }
        Ok(())
    }
}

/// Labeled multivariate time series, rows = steps, last column = time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub features: Matrix<f64>,
    pub label: String,
    pub meta: RingConfig,
}

impl TimeSeriesDataset {
    pub fn n_steps(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn time_column(&self) -> usize {
        self.features.cols() - 1
    }

    /// Rows `start..end` as a new dataset sharing metadata.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let cols = self.n_features();
        let data = self.features.as_slice()[start * cols..end * cols].to_vec();
        Self {
            features: Matrix::from_vec(end - start, cols, data).expect("row slice"),
            label: self.label.clone(),
            meta: self.meta.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWindow {
    pub data: Matrix<f64>,
    pub start_index: usize,
}

fn ring_neighbours(cfg: &RingConfig) -> Vec<Vec<usize>> {
    let n = cfg.n_nodes;
    (0..n)
        .map(|j| {
            if cfg.missing.contains(&j) || n == 1 {
                return Vec::new();
            }
            let mut nb: Vec<usize> = [(j + n - 1) % n, (j + 1) % n]
                .into_iter()
                .filter(|&m| m != j && !cfg.missing.contains(&m))
                .collect();
            nb.dedup();
            nb
        })
        .collect()
}

type State = Vec<(f64, f64)>;

fn derivative(z: &State, omega: &[f64], present: &[bool], nb: &[Vec<usize>], k: f64, out: &mut State) {
    for j in 0..z.len() {
        if !present[j] {
            out[j] = (0.0, 0.0);
            continue;
        }
        let (x, y) = z[j];
        let r2 = x * x + y * y;
        let a = 1.0 - r2;
        let mut dx = a * x - omega[j] * y;
        let mut dy = omega[j] * x + a * y;
        for &m in &nb[j] {
            dx += k * (z[m].0 - x);
            dy += k * (z[m].1 - y);
        }
        out[j] = (dx, dy);
    }
}

fn rk4_step(z: &mut State, dt: f64, omega: &[f64], present: &[bool], nb: &[Vec<usize>], k: f64) {
    let n = z.len();
    let mut k1 = vec![(0.0, 0.0); n];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = z.clone();
    derivative(z, omega, present, nb, k, &mut k1);
    for j in 0..n {
        tmp[j] = (z[j].0 + 0.5 * dt * k1[j].0, z[j].1 + 0.5 * dt * k1[j].1);
    }
    derivative(&tmp, omega, present, nb, k, &mut k2);
    for j in 0..n {
        tmp[j] = (z[j].0 + 0.5 * dt * k2[j].0, z[j].1 + 0.5 * dt * k2[j].1);
    }
    derivative(&tmp, omega, present, nb, k, &mut k3);
    for j in 0..n {
        tmp[j] = (z[j].0 + dt * k3[j].0, z[j].1 + dt * k3[j].1);
    }
    derivative(&tmp, omega, present, nb, k, &mut k4);
    for j in 0..n {
        z[j].0 += dt / 6.0 * (k1[j].0 + 2.0 * k2[j].0 + 2.0 * k3[j].0 + k4[j].0);
        z[j].1 += dt / 6.0 * (k1[j].1 + 2.0 * k2[j].1 + 2.0 * k3[j].1 + k4[j].1);
    }
}

/// Sensor reading of a node in state `(x, y)`: a phase-lagged, damped copy of
/// the oscillator with variable-specific rotation and second-harmonic content.
fn sensor_value(x: f64, y: f64, sensor: usize, var: usize) -> f64 {
    let lag = 0.35 * sensor as f64;
    let amp = 1.0 / (1.0 + 0.25 * sensor as f64);
    // w = z e^{-i lag}
    let (c, s) = (lag.cos(), lag.sin());
    let (wx, wy) = (x * c + y * s, y * c - x * s);
    let rot = var as f64 * PI / 4.0;
    let fundamental = wx * rot.cos() + wy * rot.sin();
    let second = wx * wx - wy * wy;
    amp * (SENSOR_BASELINE + fundamental + 0.2 * var as f64 * second)
}

/// Integrates the ring and samples its sensors.
pub fn simulate_ring(config: &RingConfig) -> Result<TimeSeriesDataset> {
    config.validate()?;
    let n = config.n_nodes;
    let n_out = config.n_steps();
    let n_transient = ((n_out as f64) * TRANSIENT_FRACTION / (1.0 - TRANSIENT_FRACTION)).round() as usize;
    let dt = 1.0 / config.sample_rate;
    let omega: Vec<f64> = config.natural_freq.iter().map(|f| 2.0 * PI * f).collect();
    let present: Vec<bool> = (0..n).map(|j| !config.missing.contains(&j)).collect();
    let nb = ring_neighbours(config);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut z: State = (0..n)
        .map(|j| {
            let r = rng.random_range(0.2..1.2);
            let th = rng.random_range(0.0..2.0 * PI);
            if present[j] {
                (r * th.cos(), r * th.sin())
            } else {
                (0.0, 0.0)
            }
        })
        .collect();
    let noise = Normal::new(0.0, MISSING_NOISE_STD).expect("valid normal");

    for _ in 0..n_transient {
        rk4_step(&mut z, dt, &omega, &present, &nb, config.coupling_strength);
    }

    let f = config.feature_count();
    let (ns, nv) = (config.n_sensors_per_node, config.n_vars_per_sensor);
    let mut data = Vec::with_capacity(n_out * f);
    for step in 0..n_out {
        for j in 0..n {
            for s in 0..ns {
                for v in 0..nv {
                    let val = if present[j] {
                        sensor_value(z[j].0, z[j].1, s, v)
                    } else {
                        noise.sample(&mut rng)
                    };
                    data.push(val);
                }
            }
        }
        data.push(step as f64 * dt);
        rk4_step(&mut z, dt, &omega, &present, &nb, config.coupling_strength);
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("oscillator integration diverged".into()));
    }
    Ok(TimeSeriesDataset {
        features: Matrix::from_vec(n_out, f, data)?,
        label: config.mode_label.clone(),
        meta: config.clone(),
    })
}

/// Slices `ds` into length-`k` windows starting every `stride` rows.
pub fn make_windows(ds: &TimeSeriesDataset, k: usize, stride: usize) -> Result<Vec<SequenceWindow>> {
    let n = ds.n_steps();
    if k == 0 || stride == 0 {
        return Err(Error::InvalidConfig("window length and stride must be >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidConfig(format!("window length {k} exceeds {n} steps")));
    }
    let cols = ds.n_features();
    let count = (n - k) / stride + 1;
    Ok((0..count)
        .map(|w| {
            let start = w * stride;
            let data = ds.features.as_slice()[start * cols..(start + k) * cols].to_vec();
            SequenceWindow {
                data: Matrix::from_vec(k, cols, data).expect("window slice"),
                start_index: start,
            }
        })
        .collect())
}

/// Interleaved held-out split. The windows are cut into `blocks` runs of
/// consecutive windows; even runs form the reference part, odd runs the
/// held-out part. Windows sharing rows with the previous run are dropped, so
/// no sample appears on both sides.
pub fn interleaved_split(windows: &[SequenceWindow], blocks: usize) -> Result<(Vec<SequenceWindow>, Vec<SequenceWindow>)> {
    if blocks < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 blocks, got {blocks}")));
    }
    let per = windows.len() / blocks;
    if per == 0 {
        return Err(Error::InvalidConfig(format!("{} windows cannot fill {blocks} blocks", windows.len())));
    }
    let k = windows[0].data.rows();
    let (mut reference, mut held_out) = (Vec::new(), Vec::new());
    for b in 0..blocks {
        let end = if b + 1 == blocks { windows.len() } else { (b + 1) * per };
        let mut start = b * per;
        if b > 0 {
            let last_row = windows[start - 1].start_index + k;
            while start < end && windows[start].start_index < last_row {
                start += 1;
            }
        }
        if start == end {
            return Err(Error::InvalidConfig(format!("block {b} is empty after removing overlapping windows")));
        }
        let side = if b % 2 == 0 { &mut reference } else { &mut held_out };
        side.extend_from_slice(&windows[start..end]);
    }
    Ok((reference, held_out))
}

/// Per-column affine normalization. Feature columns are z-scored, the
/// time column is min-max scaled (`mean` holds its minimum, `std` its range).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Fits pooled statistics over all rows of `datasets`, which must share a layout.
    pub fn fit(datasets: &[&TimeSeriesDataset]) -> Result<Self> {
        let first = datasets.first().ok_or(Error::Empty("normalization datasets"))?;
        let f = first.n_features();
        if let Some(d) = datasets.iter().find(|d| d.n_features() != f) {
            return Err(Error::dims("NormalizationStats::fit", f, d.n_features()));
        }
        let total: usize = datasets.iter().map(|d| d.n_steps()).sum();
        if total < 2 {
            return Err(Error::Empty("normalization needs at least 2 rows"));
        }
        let time = f - 1;
        let mut mean = vec![0.0; f];
        for d in datasets {
            for row in d.features.row_iter() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= total as f64);
        let mut var = vec![0.0; f];
        let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for d in datasets {
            for row in d.features.row_iter() {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
                tmin = tmin.min(row[time]);
                tmax = tmax.max(row[time]);
            }
        }
        let mut std: Vec<f64> = var.iter().map(|s| (s / total as f64).sqrt()).collect();
        mean[time] = tmin;
        std[time] = tmax - tmin;
        Ok(Self { mean, std })
    }

    pub fn apply(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        if ds.n_features() != self.mean.len() {
            return Err(Error::dims("NormalizationStats::apply", self.mean.len(), ds.n_features()));
        }
        let mut out = ds.clone();
        let cols = ds.n_features();
        for (i, v) in out.features.as_mut_slice().iter_mut().enumerate() {
            let c = i % cols;
            *v = if self.std[c] < STD_EPS {
                0.0
            } else {
                (*v - self.mean[c]) / self.std[c]
            };
        }
        Ok(out)
    }

    pub fn invert(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        if ds.n_features() != self.mean.len() {
            return Err(Error::dims("NormalizationStats::invert", self.mean.len(), ds.n_features()));
        }
        let mut out = ds.clone();
        let cols = ds.n_features();
        for (i, v) in out.features.as_mut_slice().iter_mut().enumerate() {
            let c = i % cols;
            *v = if self.std[c] < STD_EPS {
                self.mean[c]
            } else {
                *v * self.std[c] + self.mean[c]
            };
        }
        Ok(out)
    }
}

/// Fits statistics on `ds` alone and applies them.
pub fn normalize_features(ds: &TimeSeriesDataset) -> Result<(TimeSeriesDataset, NormalizationStats)> {
    let stats = NormalizationStats::fit(&[ds])?;
    Ok((stats.apply(ds)?, stats))
}

/// Path of the metadata sidecar for a dataset CSV.
pub fn meta_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv.with_file_name(format!("{stem}.meta.json"))
}

/// Writes `t,f000,…` CSV with 17 significant digits plus the `.meta.json` sidecar.
pub fn write_dataset(ds: &TimeSeriesDataset, csv: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(csv)?);
    let time = ds.time_column();
    let mut header = String::from("t");
    for c in 0..time {
        header.push_str(&format!(",f{c:03}"));
    }
    writeln!(w, "{header}")?;
    for row in ds.features.row_iter() {
        let mut line = fmt17(row[time]);
        for v in &row[..time] {
            line.push(',');
            line.push_str(&fmt17(*v));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    let meta = serde_json::to_string_pretty(&ds.meta).map_err(|e| Error::Format {
        path: csv.display().to_string(),
        reason: e.to_string(),
    })?;
    fs::write(meta_path(csv), meta + "\n")?;
    Ok(())
}

pub fn read_dataset(csv: &Path) -> Result<TimeSeriesDataset> {
    let fmt_err = |reason: String| Error::Format {
        path: csv.display().to_string(),
        reason,
    };
    let meta_file = meta_path(csv);
    let meta: RingConfig = serde_json::from_str(&fs::read_to_string(&meta_file)?)
        .map_err(|e| fmt_err(format!("metadata {}: {e}", meta_file.display())))?;
    let reader = BufReader::new(fs::File::open(csv)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| fmt_err("empty file".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t") {
        return Err(fmt_err("header must start with `t`".into()));
    }
    let f = cols.len();
    if f != meta.feature_count() {
        return Err(fmt_err(format!("{} columns but metadata implies {}", f, meta.feature_count())));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fmt_err(format!("line {}: {e}", i + 2)))?;
        if vals.len() != f {
            return Err(fmt_err(format!("line {}: expected {f} fields, got {}", i + 2, vals.len())));
        }
        data.extend_from_slice(&vals[1..]);
        data.push(vals[0]);
        rows += 1;
    }
    Ok(TimeSeriesDataset {
        features: Matrix::from_vec(rows, f, data)?,
        label: meta.mode_label.clone(),
        meta,
    })
}

/// Shortest round-trippable scientific representation with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
