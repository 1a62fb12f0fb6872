//! One function per CLI verb. Each writes its outputs plus a
//! `<name>.manifest.json` listing input and output digests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use oscmode::baselines::{MlpVae, PcaModel};
use oscmode::latent::{embed_dataset, gkde, hull_overlap_area, read_trajectory_csv, Frame, GridDistribution, Point};
use oscmode::linalg::Matrix;
use oscmode::synth::{
    interleaved_split, make_windows, meta_path, read_dataset, simulate_ring, write_dataset, NormalizationStats,
    SequenceWindow, TimeSeriesDataset,
};
use oscmode::trainer::{evaluate, load_checkpoint, read_descriptor, save_checkpoint, train, TrainHistory};
use oscmode::vae::{Autoencoder, BiLstmVae, KIND_BILSTM, KIND_MLP};
use oscmode::wasserstein::{wd_matrix, Benchmark, WdMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::manifest::RunManifest;
use crate::svg::{self, Series};
use crate::CliError;

/// Parsed configuration plus where it came from.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: Config,
    pub config_path: Option<PathBuf>,
}

impl Context {
    /// Loads `config_path` (or the defaults); `seed` overrides the file's seed.
    pub fn new(config_path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut config = match config_path {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(s) = seed {
            config.seed = s;
        }
        Ok(Self {
            config,
            config_path: config_path.map(Path::to_path_buf),
        })
    }

    pub fn from_config(config: Config) -> Self {
        Self {
            config,
            config_path: None,
        }
    }

    fn manifest(&self, command: &str, inputs: &[PathBuf], outputs: &[PathBuf], at: &Path) -> Result<(), CliError> {
        RunManifest::new(command, self.config_path.as_deref(), self.config.seed, inputs, outputs)?.write(at)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Bilstm,
    Mlp,
    Pca,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bilstm => "bilstm",
            Method::Mlp => "mlp",
            Method::Pca => "pca",
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

/// Sorted files matching `pattern`; an empty match is an error.
pub fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>, CliError> {
    let paths = glob::glob(pattern).map_err(|e| CliError::Config(format!("bad glob {pattern:?}: {e}")))?;
    let mut out: Vec<PathBuf> = paths.filter_map(|p| p.ok()).filter(|p| p.is_file()).collect();
    out.sort();
    if out.is_empty() {
        return Err(CliError::Config(format!("no files match {pattern:?}")));
    }
    Ok(out)
}

/// File name up to its first dot.
fn base_label(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name.split('.').next().unwrap_or_default().to_string()
}

/// Name without its final extension, e.g. `full.benchmark` for `full.benchmark.csv`.
fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_file_name(format!("{}.{suffix}", stem(path)))
}

/// Normalization statistics stored next to a model file.
pub fn norm_path(model: &Path) -> PathBuf {
    sibling(model, "norm.json")
}

pub fn cmd_simulate(ctx: &Context, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out_dir)?;
    let cfg = &ctx.config;
    let mut outputs = Vec::new();
    for (i, mode) in cfg.simulate.modes.iter().enumerate() {
        let ds = simulate_ring(&cfg.ring(mode, i))?;
        let csv = out_dir.join(format!("{}.csv", mode.label));
        write_dataset(&ds, &csv)?;
        outputs.push(csv.clone());
        outputs.push(meta_path(&csv));
    }
    ctx.manifest("simulate", &[], &outputs, &out_dir.join("simulate.manifest.json"))?;
    Ok(outputs)
}

/// Datasets matching `pattern`, skipping metadata sidecars.
fn load_datasets(pattern: &str) -> Result<Vec<(PathBuf, TimeSeriesDataset)>, CliError> {
    let paths: Vec<PathBuf> = expand_glob(pattern)?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    if paths.is_empty() {
        return Err(CliError::Config(format!("no dataset CSVs match {pattern:?}")));
    }
    paths
        .into_iter()
        .map(|p| {
            require(&meta_path(&p))?;
            let ds = read_dataset(&p)?;
            Ok((p, ds))
        })
        .collect()
}

/// Reference and held-out windows of one normalized dataset.
pub struct Split {
    pub label: String,
    pub reference: Vec<SequenceWindow>,
    pub held_out: Vec<SequenceWindow>,
}

pub fn split_dataset(cfg: &Config, ds: &TimeSeriesDataset, stats: &NormalizationStats) -> Result<Split, CliError> {
    let norm = stats.apply(ds)?;
    let windows = make_windows(&norm, cfg.windows.length, cfg.windows.stride)?;
    let (reference, held_out) = interleaved_split(&windows, cfg.windows.blocks)?;
    Ok(Split {
        label: ds.label.clone(),
        reference,
        held_out,
    })
}

fn matrices(ws: &[SequenceWindow]) -> Vec<Matrix<f64>> {
    ws.iter().map(|w| w.data.clone()).collect()
}

/// Windows flattened row-major into one row each, the PCA input.
pub fn flatten(ws: &[Matrix<f64>]) -> Result<Matrix<f64>, CliError> {
    let first = ws.first().ok_or_else(|| CliError::Config("no windows".into()))?;
    let n = first.as_slice().len();
    let data: Vec<f64> = ws.iter().flat_map(|w| w.as_slice().iter().copied()).collect();
    Ok(Matrix::from_vec(ws.len(), n, data)?)
}

fn write_history(history: &TrainHistory, model: &Path, title: &str) -> Result<Vec<PathBuf>, CliError> {
    let csv = sibling(model, "history.csv");
    history.write_csv(&csv)?;
    let series = |f: fn(&oscmode::trainer::EpochRecord) -> f64| -> Vec<Point> {
        history.epochs.iter().map(|r| [r.epoch as f64, f(r)]).collect()
    };
    let (tr, va) = (series(|r| r.train_loss), series(|r| r.val_loss));
    let figure = svg::lines(
        &format!("{title} (best epoch {})", history.best_epoch),
        "epoch",
        "loss",
        &[
            Series {
                label: "train",
                points: &tr,
            },
            Series {
                label: "validation",
                points: &va,
            },
        ],
        true,
    );
    let svg_path = sibling(model, "loss.svg");
    write_text(&svg_path, &figure)?;
    Ok(vec![csv, svg_path])
}

/// Summary of a training command.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub outputs: Vec<PathBuf>,
    pub history: Option<TrainHistory>,
}

/// Fits `method` on the reference windows pooled over every dataset
/// matching `data`. Writes the model to `out`, plus normalization
/// statistics and, for the autoencoders, history CSV and loss curve.
pub fn cmd_train(ctx: &Context, data: &str, method: Method, out: &Path) -> Result<TrainOutcome, CliError> {
    let cfg = &ctx.config;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let sets = load_datasets(data)?;
    let inputs: Vec<PathBuf> = sets.iter().map(|(p, _)| p.clone()).collect();
    let refs: Vec<&TimeSeriesDataset> = sets.iter().map(|(_, d)| d).collect();
    let stats = NormalizationStats::fit(&refs)?;
    let mut windows = Vec::new();
    for (_, ds) in &sets {
        windows.extend(matrices(&split_dataset(cfg, ds, &stats)?.reference));
    }
    let features = refs[0].n_features();
    let norm = norm_path(out);
    write_text(&norm, &(serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n"))?;
    let mut outputs = vec![out.to_path_buf(), norm];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tc = cfg.train_config();
    let history = match method {
        Method::Bilstm => {
            let model = BiLstmVae::<f64>::init(cfg.arch(features), &mut rng)?;
            let (model, h) = train(model, &windows, &tc)?;
            save_checkpoint(&model, out)?;
            outputs.extend(write_history(&h, out, "Bi-LSTM VAE loss")?);
            Some(h)
        }
        Method::Mlp => {
            let model = MlpVae::<f64>::init(features, cfg.windows.length, cfg.model.mlp_hidden, cfg.model.beta, &mut rng)?;
            let (model, h) = train(model, &windows, &tc)?;
            save_checkpoint(&model, out)?;
            outputs.extend(write_history(&h, out, "MLP VAE loss")?);
            Some(h)
        }
        Method::Pca => {
            let model = oscmode::baselines::pca_fit(&flatten(&windows)?)?;
            model.write_csv(out)?;
            None
        }
    };
    ctx.manifest("train", &inputs, &outputs, &sibling(out, "manifest.json"))?;
    Ok(TrainOutcome { outputs, history })
}

/// A trained reducer loaded from disk.
pub enum Reducer {
    Bilstm(BiLstmVae<f64>),
    Mlp(MlpVae<f64>),
    Pca(PcaModel<f64>),
}

impl Reducer {
    /// Checkpoints are recognized by content, everything else is read as a PCA model.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        require(path)?;
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        if bytes.starts_with(b"BLVW") {
            return match read_descriptor(&bytes)?.kind {
                KIND_BILSTM => Ok(Reducer::Bilstm(load_checkpoint(path)?)),
                KIND_MLP => Ok(Reducer::Mlp(load_checkpoint(path)?)),
                k => Err(CliError::Config(format!("{}: unknown model kind {k}", path.display()))),
            };
        }
        Ok(Reducer::Pca(PcaModel::read_csv(path)?))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Reducer::Bilstm(_) => "bilstm",
            Reducer::Mlp(_) => "mlp",
            Reducer::Pca(_) => "pca",
        }
    }

    fn check_layout(&self, window: usize, features: usize) -> Result<(), CliError> {
        let (w, f) = match self {
            Reducer::Bilstm(m) => (m.window(), m.features()),
            Reducer::Mlp(m) => (m.window(), m.features()),
            Reducer::Pca(m) => return (m.features() == window * features)
                .then_some(())
                .ok_or_else(|| CliError::Config(format!("PCA model expects {} inputs, windows have {}", m.features(), window * features))),
        };
        if (w, f) != (window, features) {
            return Err(CliError::Config(format!(
                "model expects {w}x{f} windows, data gives {window}x{features}"
            )));
        }
        Ok(())
    }

    pub fn embed(&self, windows: &[SequenceWindow], label: &str) -> Result<Vec<Point>, CliError> {
        Ok(match self {
            Reducer::Bilstm(m) => embed_dataset(m, windows, label)?.points_f64(),
            Reducer::Mlp(m) => embed_dataset(m, windows, label)?.points_f64(),
            Reducer::Pca(m) => {
                let s = m.transform(&flatten(&matrices(windows))?)?;
                (0..s.rows()).map(|r| [s[(r, 0)], s[(r, 1)]]).collect()
            }
        })
    }

    /// Reconstruction MSE with `ζ = 0`.
    pub fn mse(&self, windows: &[Matrix<f64>]) -> Result<f64, CliError> {
        Ok(match self {
            Reducer::Bilstm(m) => evaluate(m, windows, 64)?.mse,
            Reducer::Mlp(m) => evaluate(m, windows, 64)?.mse,
            Reducer::Pca(m) => m.reconstruction_mse(&flatten(windows)?)?,
        })
    }
}

fn load_stats(model: &Path) -> Result<NormalizationStats, CliError> {
    let p = norm_path(model);
    require(&p)?;
    let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
}

fn splits_for(ctx: &Context, model: &Path, data: &str) -> Result<(Reducer, Vec<PathBuf>, Vec<Split>), CliError> {
    let reducer = Reducer::load(model)?;
    let stats = load_stats(model)?;
    let sets = load_datasets(data)?;
    let mut inputs = vec![model.to_path_buf(), norm_path(model)];
    let mut splits = Vec::new();
    for (p, ds) in &sets {
        reducer.check_layout(ctx.config.windows.length, ds.n_features())?;
        if stats.mean.len() != ds.n_features() {
            return Err(CliError::Config(format!(
                "{}: {} features, normalization has {}",
                p.display(),
                ds.n_features(),
                stats.mean.len()
            )));
        }
        splits.push(split_dataset(&ctx.config, ds, &stats)?);
        inputs.push(p.clone());
    }
    Ok((reducer, inputs, splits))
}

fn trajectory_csv(points: &[Point]) -> String {
    let mut s = String::from("idx,z1,z2\n");
    for (i, p) in points.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{}", oscmode::synth::fmt17(p[0]), oscmode::synth::fmt17(p[1]));
    }
    s
}

/// Writes `<label>.benchmark.csv` (reference windows) and `<label>.test.csv`
/// (held-out windows) per dataset, and a scatter of all points.
pub fn cmd_embed(ctx: &Context, model: &Path, data: &str, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out_dir)?;
    let (reducer, inputs, splits) = splits_for(ctx, model, data)?;
    let mut outputs = Vec::new();
    let mut named: Vec<(String, Vec<Point>)> = Vec::new();
    for s in &splits {
        for (part, ws) in [("benchmark", &s.reference), ("test", &s.held_out)] {
            let pts = reducer.embed(ws, &s.label)?;
            let path = out_dir.join(format!("{}.{part}.csv", s.label));
            write_text(&path, &trajectory_csv(&pts))?;
            outputs.push(path);
            named.push((format!("{}.{part}", s.label), pts));
        }
    }
    let series: Vec<Series> = named
        .iter()
        .map(|(l, p)| Series {
            label: l,
            points: p,
        })
        .collect();
    let figure = svg::scatter(&format!("Latent plane ({})", reducer.kind()), "Z1", "Z2", &series);
    let fig = out_dir.join("latent.svg");
    write_text(&fig, &figure)?;
    outputs.push(fig);
    ctx.manifest("embed", &inputs, &outputs, &out_dir.join("embed.manifest.json"))?;
    Ok(outputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    min: Point,
    max: Point,
}

/// Maps every matched trajectory into one joint `[0,1]²` frame and writes a
/// `<name>.grid.csv` density grid and heat map for each, plus `frame.json`.
pub fn cmd_kde(ctx: &Context, trajectories: &str, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out_dir)?;
    let inputs = expand_glob(trajectories)?;
    let sets = inputs
        .iter()
        .map(|p| Ok(read_trajectory_csv(p, &stem(p))?.points))
        .collect::<Result<Vec<Vec<Point>>, CliError>>()?;
    let refs: Vec<&[Point]> = sets.iter().map(|s| s.as_slice()).collect();
    let frame = Frame::fit(&refs)?;
    let kc = ctx.config.kde_config();
    let mut outputs = Vec::new();
    for (p, pts) in inputs.iter().zip(&sets) {
        let mapped: Vec<Point> = pts.iter().map(|&x| frame.apply(x)).collect();
        let grid = gkde(&mapped, &kc)?;
        let name = stem(p);
        let csv = out_dir.join(format!("{name}.grid.csv"));
        grid.write_csv(&csv)?;
        let (r, c) = grid.shape();
        let figure = svg::heatmap(&format!("Density {name}"), grid.masses.as_slice(), r, c, &[], &[], true, false);
        let fig = out_dir.join(format!("{name}.grid.svg"));
        write_text(&fig, &figure)?;
        outputs.push(csv);
        outputs.push(fig);
    }
    let fp = out_dir.join("frame.json");
    let rec = FrameRecord {
        min: frame.min,
        max: frame.max,
    };
    write_text(&fp, &(serde_json::to_string_pretty(&rec).expect("frame serializes") + "\n"))?;
    outputs.push(fp);
    ctx.manifest("kde", &inputs, &outputs, &out_dir.join("kde.manifest.json"))?;
    Ok(outputs)
}

fn frame_of(grid: &Path) -> Result<(PathBuf, FrameRecord), CliError> {
    let p = grid.with_file_name("frame.json");
    require(&p)?;
    let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
    let rec = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
    Ok((p, rec))
}

fn load_grids(pattern: &str) -> Result<(Vec<Benchmark>, Vec<PathBuf>, FrameRecord), CliError> {
    let paths = expand_glob(pattern)?;
    let mut frame: Option<(PathBuf, FrameRecord)> = None;
    let mut out = Vec::new();
    for p in &paths {
        let f = frame_of(p)?;
        match &frame {
            Some((fp, rec)) if *rec != f.1 => {
                return Err(CliError::Config(format!(
                    "frame mismatch: {} and {}",
                    fp.display(),
                    f.0.display()
                )))
            }
            Some(_) => {}
            None => frame = Some(f),
        }
        out.push(Benchmark {
            label: base_label(p),
            grid: GridDistribution::read_csv(p)?,
        });
    }
    let (fp, rec) = frame.expect("glob is non-empty");
    let mut inputs = paths;
    inputs.push(fp);
    Ok((out, inputs, rec))
}

/// Result of a classification command.
#[derive(Debug, Clone)]
pub struct ClassifyOutcome {
    pub matrix: WdMatrix,
    pub predicted: Vec<String>,
    pub outputs: Vec<PathBuf>,
}

/// Distances from every benchmark grid to every test grid, and the nearest
/// benchmark label per test.
pub fn cmd_classify(ctx: &Context, benchmarks: &str, tests: &str, out_dir: &Path) -> Result<ClassifyOutcome, CliError> {
    create_dir(out_dir)?;
    let (bench, mut inputs, fb) = load_grids(benchmarks)?;
    let (test, test_inputs, ft) = load_grids(tests)?;
    if fb != ft {
        return Err(CliError::Config("frame mismatch between benchmark and test grids".into()));
    }
    inputs.extend(test_inputs);
    inputs.dedup();
    let matrix = wd_matrix(&bench, &test, ctx.config.backend())?;
    let predicted: Vec<String> = matrix.predictions().iter().map(|&i| matrix.benchmark_labels[i].clone()).collect();
    let csv = out_dir.join("wd.csv");
    matrix.write_csv(&csv)?;
    let (nb, nt) = (bench.len(), test.len());
    // rows = tests, columns = benchmarks
    let transposed: Vec<f64> = (0..nt).flat_map(|t| (0..nb).map(move |b| (b, t))).map(|(b, t)| matrix.values[(b, t)]).collect();
    let figure = svg::heatmap(
        "Wasserstein distance (rows: test, columns: benchmark)",
        &transposed,
        nt,
        nb,
        &matrix.test_labels,
        &matrix.benchmark_labels,
        false,
        true,
    );
    let fig = out_dir.join("wd.svg");
    write_text(&fig, &figure)?;
    let mut pred = String::from("test,predicted,distance\n");
    for (t, label) in predicted.iter().enumerate() {
        let b = matrix.predictions()[t];
        let _ = writeln!(pred, "{},{label},{}", matrix.test_labels[t], oscmode::synth::fmt17(matrix.values[(b, t)]));
    }
    let pp = out_dir.join("predictions.csv");
    write_text(&pp, &pred)?;
    let outputs = vec![csv, fig, pp];
    ctx.manifest("classify", &inputs, &outputs, &out_dir.join("classify.manifest.json"))?;
    Ok(ClassifyOutcome {
        matrix,
        predicted,
        outputs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodScore {
    pub name: String,
    pub kind: &'static str,
    pub reference_mse: f64,
    pub held_out_mse: f64,
}

/// Reconstruction error of each model on the pooled reference and held-out
/// windows, as `report.csv` and a markdown table.
pub fn cmd_report(ctx: &Context, data: &str, models: &[PathBuf], out_dir: &Path) -> Result<Vec<MethodScore>, CliError> {
    create_dir(out_dir)?;
    if models.is_empty() {
        return Err(CliError::Config("report needs at least one model".into()));
    }
    let mut scores = Vec::new();
    let mut inputs = Vec::new();
    for m in models {
        let (reducer, ins, splits) = splits_for(ctx, m, data)?;
        let pooled = |f: fn(&Split) -> &Vec<SequenceWindow>| splits.iter().flat_map(|s| matrices(f(s))).collect::<Vec<_>>();
        scores.push(MethodScore {
            name: stem(m),
            kind: reducer.kind(),
            reference_mse: reducer.mse(&pooled(|s| &s.reference))?,
            held_out_mse: reducer.mse(&pooled(|s| &s.held_out))?,
        });
        inputs.extend(ins);
    }
    inputs.sort();
    inputs.dedup();
    let mut csv = String::from("method,kind,reference_mse,held_out_mse\n");
    let mut md = String::from("| method | kind | reference MSE | held-out MSE |\n|---|---|---|---|\n");
    for s in &scores {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            s.name,
            s.kind,
            oscmode::synth::fmt17(s.reference_mse),
            oscmode::synth::fmt17(s.held_out_mse)
        );
        let _ = writeln!(md, "| {} | {} | {:.5} | {:.5} |", s.name, s.kind, s.reference_mse, s.held_out_mse);
    }
    let (cp, mp) = (out_dir.join("report.csv"), out_dir.join("report.md"));
    write_text(&cp, &csv)?;
    write_text(&mp, &md)?;
    ctx.manifest("report", &inputs, &[cp, mp], &out_dir.join("report.manifest.json"))?;
    Ok(scores)
}

/// Pairwise intersection areas of the modes' latent hulls in a joint frame,
/// each mode pooling its benchmark and test trajectories. Rows follow `labels`.
pub fn hull_overlaps(latent_dir: &Path, labels: &[String]) -> Result<Vec<Vec<f64>>, CliError> {
    let sets = labels
        .iter()
        .map(|l| {
            let mut pts = Vec::new();
            for part in ["benchmark", "test"] {
                let p = latent_dir.join(format!("{l}.{part}.csv"));
                require(&p)?;
                pts.extend(read_trajectory_csv(&p, l)?.points);
            }
            Ok(pts)
        })
        .collect::<Result<Vec<Vec<Point>>, CliError>>()?;
    let refs: Vec<&[Point]> = sets.iter().map(|s| s.as_slice()).collect();
    let frame = Frame::fit(&refs)?;
    let mapped: Vec<Vec<Point>> = sets.iter().map(|s| s.iter().map(|&p| frame.apply(p)).collect()).collect();
    let n = labels.len();
    let mut out = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            if a != b {
                out[a][b] = hull_overlap_area(&mapped[a], &mapped[b]);
            }
        }
    }
    Ok(out)
}
