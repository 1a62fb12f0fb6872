//! The whole chain of commands under one output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use glob::Pattern;
use oscmode::trainer::TrainHistory;
use oscmode::wasserstein::WdMatrix;

use crate::commands::{self, Context, Method, MethodScore};
use crate::CliError;

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub labels: Vec<String>,
    pub matrix: WdMatrix,
    pub predicted: Vec<String>,
    pub scores: Vec<MethodScore>,
    /// `overlaps[a][b]`: intersection area of the latent hulls of modes `a` and `b`.
    pub overlaps: Vec<Vec<f64>>,
    pub history: TrainHistory,
    pub seconds: f64,
}

impl PipelineReport {
    pub fn correct(&self) -> usize {
        self.predicted.iter().zip(&self.matrix.test_labels).filter(|(p, t)| p == t).count()
    }

    pub fn disjoint_pairs(&self) -> (usize, usize) {
        let n = self.labels.len();
        let mut ok = 0;
        for a in 0..n {
            for b in a + 1..n {
                if self.overlaps[a][b] == 0.0 {
                    ok += 1;
                }
            }
        }
        (ok, n * (n - 1) / 2)
    }
}

fn pattern(dir: &Path, tail: &str) -> String {
    format!("{}/{tail}", Pattern::escape(&dir.display().to_string()))
}

/// simulate → train (Bi-LSTM VAE, MLP VAE, PCA) → embed → kde → classify → report.
pub fn run_pipeline(ctx: &Context, out: &Path) -> Result<PipelineReport, CliError> {
    let start = Instant::now();
    let (data, models, latent, kde, classify, report) = (
        out.join("data"),
        out.join("models"),
        out.join("latent"),
        out.join("kde"),
        out.join("classify"),
        out.join("report"),
    );
    commands::cmd_simulate(ctx, &data)?;
    let data_glob = pattern(&data, "*.csv");
    let paths: Vec<PathBuf> = [Method::Bilstm, Method::Mlp, Method::Pca]
        .iter()
        .map(|m| models.join(if *m == Method::Pca { "pca.csv".to_string() } else { format!("{}.blvw", m.name()) }))
        .collect();
    let mut history = None;
    for (m, p) in [Method::Bilstm, Method::Mlp, Method::Pca].into_iter().zip(&paths) {
        let outcome = commands::cmd_train(ctx, &data_glob, m, p)?;
        if m == Method::Bilstm {
            history = outcome.history;
        }
    }
    commands::cmd_embed(ctx, &paths[0], &data_glob, &latent)?;
    commands::cmd_kde(ctx, &pattern(&latent, "*.csv"), &kde)?;
    let c = commands::cmd_classify(
        ctx,
        &pattern(&kde, "*.benchmark.grid.csv"),
        &pattern(&kde, "*.test.grid.csv"),
        &classify,
    )?;
    let scores = commands::cmd_report(ctx, &data_glob, &paths, &report)?;
    let labels = c.matrix.benchmark_labels.clone();
    let overlaps = commands::hull_overlaps(&latent, &labels)?;
    let mut csv = String::from("mode_a,mode_b,overlap_area\n");
    for a in 0..labels.len() {
        for b in a + 1..labels.len() {
            let _ = writeln!(csv, "{},{},{}", labels[a], labels[b], oscmode::synth::fmt17(overlaps[a][b]));
        }
    }
    let sp = report.join("separation.csv");
    fs::write(&sp, csv).map_err(|e| CliError::io(&sp, e))?;
    Ok(PipelineReport {
        labels,
        matrix: c.matrix,
        predicted: c.predicted,
        scores,
        overlaps,
        history: history.expect("Bi-LSTM training returns a history"),
        seconds: start.elapsed().as_secs_f64(),
    })
}
