//! Earth Mover's Distance between grid distributions under the Euclidean
//! ground metric, and nearest-benchmark classification.
//!
//! Two backends: an exact transportation solver (successive shortest paths
//! on the mass supports) for small grids, and a multiscale log-stabilized
//! Sinkhorn solver with a truncated sparse kernel for full-size grids.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::latent::{GridDistribution, Point};
use crate::linalg::Matrix;
use crate::synth::fmt17;

/// Cells with at most this much mass are dropped before solving.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;
/// Largest support (per side) accepted by [`emd_exact`].
pub const EXACT_CELL_CAP: usize = 64 * 64;
pub const MASS_MISMATCH_TOL: f64 = 1e-9;

/// Euclidean distances between the cell centres of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSpec {
    pub rows: usize,
    pub cols: usize,
    pub origin: Point,
    /// Cell widths along (z1, z2).
    pub cell: [f64; 2],
}

impl CostSpec {
    pub fn of(g: &GridDistribution) -> Self {
        let (rows, cols) = g.shape();
        Self {
            rows,
            cols,
            origin: [g.bounds[0][0], g.bounds[1][0]],
            cell: g.cell_size(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Centre of flat cell index `a = row·cols + col`.
    pub fn center(&self, a: usize) -> Point {
        let (i, j) = (a / self.cols, a % self.cols);
        [
            self.origin[0] + (j as f64 + 0.5) * self.cell[0],
            self.origin[1] + (i as f64 + 0.5) * self.cell[1],
        ]
    }

    pub fn cost(&self, a: usize, b: usize) -> f64 {
        euclid(self.center(a), self.center(b))
    }
}

fn euclid(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flow {
    /// Flat cell index in the first distribution.
    pub source: usize,
    /// Flat cell index in the second distribution.
    pub target: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub flows: Vec<Flow>,
    pub cost: f64,
}

impl TransportPlan {
    /// (source marginal, target marginal) over `n_cells` cells.
    pub fn marginals(&self, n_cells: usize) -> (Vec<f64>, Vec<f64>) {
        let mut r = vec![0.0; n_cells];
        let mut c = vec![0.0; n_cells];
        for f in &self.flows {
            r[f.source] += f.mass;
            c[f.target] += f.mass;
        }
        (r, c)
    }
}

fn check_pair(p: &GridDistribution, q: &GridDistribution) -> Result<()> {
    if !p.same_frame(q) {
        return Err(Error::InvalidConfig(format!(
            "grid mismatch: {:?} {:?} vs {:?} {:?}",
            p.shape(),
            p.bounds,
            q.shape(),
            q.bounds
        )));
    }
    let sp: f64 = p.masses.as_slice().iter().sum();
    let sq: f64 = q.masses.as_slice().iter().sum();
    if (sp - sq).abs() > MASS_MISMATCH_TOL {
        return Err(Error::InvalidConfig(format!("total masses differ: {sp} vs {sq}")));
    }
    Ok(())
}

/// Fixed argument order so that swapped calls run the identical computation.
fn canonical<'a>(p: &'a GridDistribution, q: &'a GridDistribution) -> (&'a GridDistribution, &'a GridDistribution, bool) {
    let ord = p
        .masses
        .as_slice()
        .iter()
        .zip(q.masses.as_slice())
        .map(|(a, b)| a.total_cmp(b))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal);
    if ord == Ordering::Greater {
        (q, p, true)
    } else {
        (p, q, false)
    }
}

fn support(g: &GridDistribution) -> (Vec<usize>, Vec<f64>) {
    g.masses
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > SUPPORT_THRESHOLD)
        .map(|(i, &m)| (i, m))
        .unzip()
}

/// Exact optimal transport cost and plan.
pub fn emd_exact(p: &GridDistribution, q: &GridDistribution) -> Result<(f64, TransportPlan)> {
    check_pair(p, q)?;
    let (a, b, swapped) = canonical(p, q);
    let spec = CostSpec::of(a);
    let (ia, ma) = support(a);
    let (ib, mb) = support(b);
    if ia.len() > EXACT_CELL_CAP || ib.len() > EXACT_CELL_CAP {
        return Err(Error::InvalidConfig(format!(
            "support of {}/{} cells exceeds the exact-solver cap of {EXACT_CELL_CAP}",
            ia.len(),
            ib.len()
        )));
    }
    let cost = Matrix::from_fn(ia.len(), ib.len(), |r, c| spec.cost(ia[r], ib[c]));
    let flow = transport_ssp(&ma, &mb, &cost);
    let mut flows = Vec::new();
    let mut total = 0.0;
    for r in 0..ia.len() {
        for c in 0..ib.len() {
            let f = flow[(r, c)];
            if f > 0.0 {
                total += f * cost[(r, c)];
                let (source, target) = if swapped { (ib[c], ia[r]) } else { (ia[r], ib[c]) };
                flows.push(Flow { source, target, mass: f });
            }
        }
    }
    flows.sort_by_key(|f| (f.source, f.target));
    Ok((total, TransportPlan { flows, cost: total }))
}

/// Min-cost flow between supplies `a` and demands `b` by successive shortest
/// paths with Dijkstra on reduced costs. Dense, `O((n+m)²)` per augmentation.
fn transport_ssp(a: &[f64], b: &[f64], cost: &Matrix<f64>) -> Matrix<f64> {
    let (n, m) = (a.len(), b.len());
    let mut flow = Matrix::zeros(n, m);
    let mut ra = a.to_vec();
    let mut rb = b.to_vec();
    // node ids: supplies 0..n, demands n..n+m, sink n+m; the source is implicit
    let v = n + m + 1;
    let t = n + m;
    let mut pot = vec![0.0f64; v];
    let pot_s = 0.0f64;
    let mut dist = vec![f64::INFINITY; v];
    let mut parent = vec![usize::MAX; v];
    let mut done = vec![false; v];
    const FROM_SOURCE: usize = usize::MAX - 1;
    loop {
        if !ra.iter().any(|&x| x > 0.0) || !rb.iter().any(|&x| x > 0.0) {
            break;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        for i in 0..n {
            if ra[i] > 0.0 {
                dist[i] = (pot_s - pot[i]).max(0.0);
                parent[i] = FROM_SOURCE;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for (k, &d) in dist.iter().enumerate() {
                if !done[k] && d < best {
                    best = d;
                    u = k;
                }
            }
            if u == usize::MAX || u == t {
                break;
            }
            done[u] = true;
            if u < n {
                let row = cost.row(u);
                for j in 0..m {
                    let w = n + j;
                    if done[w] {
                        continue;
                    }
                    let nd = best + (row[j] + pot[u] - pot[w]).max(0.0);
                    if nd < dist[w] {
                        dist[w] = nd;
                        parent[w] = u;
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if done[i] || flow[(i, j)] <= 0.0 {
                        continue;
                    }
                    let nd = best + (-cost[(i, j)] + pot[u] - pot[i]).max(0.0);
                    if nd < dist[i] {
                        dist[i] = nd;
                        parent[i] = u;
                    }
                }
                if rb[j] > 0.0 && !done[t] {
                    let nd = best + (pot[u] - pot[t]).max(0.0);
                    if nd < dist[t] {
                        dist[t] = nd;
                        parent[t] = u;
                    }
                }
            }
        }
        let dt = dist[t];
        if !dt.is_finite() {
            break;
        }
        for k in 0..v {
            pot[k] += dist[k].min(dt);
        }
        let last_demand = parent[t];
        let mut amount = rb[last_demand - n];
        let mut w = last_demand;
        loop {
            let p = parent[w];
            if p == FROM_SOURCE {
                amount = amount.min(ra[w]);
                break;
            }
            if w < n {
                // backward edge p(demand) -> w(supply)
                amount = amount.min(flow[(w, p - n)]);
            }
            w = p;
        }
        // augment
        rb[last_demand - n] -= amount;
        w = last_demand;
        loop {
            let p = parent[w];
            if p == FROM_SOURCE {
                ra[w] -= amount;
                break;
            }
            if w < n {
                let f = &mut flow.as_mut_slice()[w * m + (p - n)];
                *f -= amount;
                if *f < 0.0 {
                    *f = 0.0;
                }
            } else {
                flow.as_mut_slice()[p * m + (w - n)] += amount;
            }
            w = p;
        }
    }
    flow
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Final regularization, in the grid's coordinate units.
    pub epsilon: f64,
    pub epsilon_start: f64,
    pub max_iter: usize,
    /// Euclidean norm of the marginal violation required at the final stage.
    pub tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            epsilon_start: 0.1,
            max_iter: 100_000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornResult {
    /// Transport cost of the regularized plan (no entropy term, no debiasing).
    pub value: f64,
    pub violation: f64,
    pub iterations: usize,
}

/// Entropic transport cost with the default schedule and tolerance.
pub fn emd_sinkhorn(p: &GridDistribution, q: &GridDistribution, epsilon: f64, max_iter: usize) -> Result<f64> {
    let cfg = SinkhornConfig {
        epsilon,
        max_iter,
        ..Default::default()
    };
    Ok(sinkhorn(p, q, &cfg)?.value)
}

/// Looser tolerance for the intermediate stages of the ε schedule.
const STAGE_TOLERANCE: f64 = 1e-4;
/// Kernel entries more than this many nats below their row and column maxima are dropped.
const TRUNCATION: f64 = 30.0;
/// Scalings are absorbed into the potentials past `e^ABSORB`.
const ABSORB: f64 = 8.0;
/// A stage runs on the coarsest level whose cell size is at most `LEVEL_RATIO·ε`.
const LEVEL_RATIO: f64 = 1.6;

struct Level {
    rows: usize,
    cols: usize,
    /// Size of this level's cells.
    scale: f64,
    centers: Vec<Point>,
    cells_a: Vec<usize>,
    mass_a: Vec<f64>,
    cells_b: Vec<usize>,
    mass_b: Vec<f64>,
}

fn pool(m: &Matrix<f64>) -> Matrix<f64> {
    let r = m.rows().div_ceil(2);
    let c = m.cols().div_ceil(2);
    let mut out = Matrix::zeros(r, c);
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            out.as_mut_slice()[(i / 2) * c + j / 2] += m[(i, j)];
        }
    }
    out
}

fn build_levels(a: &GridDistribution, b: &GridDistribution) -> Vec<Level> {
    let spec = CostSpec::of(a);
    let (r0, c0) = a.shape();
    let mut levels = Vec::new();
    let mut ma = a.masses.clone();
    let mut mb = b.masses.clone();
    let mut shift = 0u32;
    loop {
        let (rows, cols) = ma.shape();
        let span = 1usize << shift;
        let axis_centers = |n0: usize, n: usize, origin: f64, w: f64| -> Vec<f64> {
            (0..n)
                .map(|k| {
                    let lo = k * span;
                    let hi = ((k + 1) * span).min(n0);
                    origin + w * (lo + hi) as f64 / 2.0
                })
                .collect()
        };
        let xs = axis_centers(c0, cols, spec.origin[0], spec.cell[0]);
        let ys = axis_centers(r0, rows, spec.origin[1], spec.cell[1]);
        let centers = (0..rows * cols).map(|k| [xs[k % cols], ys[k / cols]]).collect();
        let sa = sparse(&ma);
        let sb = sparse(&mb);
        levels.push(Level {
            rows,
            cols,
            scale: spec.cell[0].max(spec.cell[1]) * span as f64,
            centers,
            cells_a: sa.0,
            mass_a: sa.1,
            cells_b: sb.0,
            mass_b: sb.1,
        });
        if rows <= 2 && cols <= 2 {
            break;
        }
        ma = pool(&ma);
        mb = pool(&mb);
        shift += 1;
    }
    levels
}

fn sparse(m: &Matrix<f64>) -> (Vec<usize>, Vec<f64>) {
    m.as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > SUPPORT_THRESHOLD)
        .map(|(i, &v)| (i, v))
        .unzip()
}

/// Row-compressed `exp((φ_i + ψ_j − C_ij)/ε)` keeping entries near their row or column maximum.
struct Kernel {
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
    cost: Vec<f64>,
}

impl Kernel {
    fn build(xa: &[Point], xb: &[Point], phi: &[f64], psi: &[f64], eps: f64) -> Self {
        let (n, m) = (xa.len(), xb.len());
        let mut row_max = vec![f64::NEG_INFINITY; n];
        let mut col_max = vec![f64::NEG_INFINITY; m];
        for i in 0..n {
            for j in 0..m {
                let s = (phi[i] + psi[j] - euclid(xa[i], xb[j])) / eps;
                if s > row_max[i] {
                    row_max[i] = s;
                }
                if s > col_max[j] {
                    col_max[j] = s;
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        let mut cost = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..m {
                let c = euclid(xa[i], xb[j]);
                let s = (phi[i] + psi[j] - c) / eps;
                if s >= row_max[i] - TRUNCATION || s >= col_max[j] - TRUNCATION {
                    col.push(j as u32);
                    val.push(s.exp());
                    cost.push(c);
                }
            }
            row_ptr.push(col.len());
        }
        Self { row_ptr, col, val, cost }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            *o = self.col[r.clone()].iter().zip(&self.val[r]).map(|(&j, &k)| k * v[j as usize]).sum();
        }
    }

    fn apply_t(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &ui) in u.iter().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            for (&j, &k) in self.col[r.clone()].iter().zip(&self.val[r]) {
                out[j as usize] += k * ui;
            }
        }
    }

    fn transport_cost(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, &ui) in u.iter().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            let row: f64 = self.col[r.clone()]
                .iter()
                .zip(&self.val[r.clone()])
                .zip(&self.cost[r])
                .map(|((&j, &k), &c)| k * v[j as usize] * c)
                .sum();
            total += ui * row;
        }
        total
    }
}

/// Over-relaxation factor, applied after the first few plain iterations of a stage.
const OMEGA: f64 = 1.8;
const PLAIN_ITERATIONS: usize = 10;

fn relax(it: usize) -> f64 {
    if it < PLAIN_ITERATIONS {
        1.0
    } else {
        OMEGA
    }
}

/// `old^{1−ω} · new^ω`
fn over_relax(old: f64, new: f64, w: f64) -> f64 {
    if w == 1.0 {
        new
    } else {
        old.powf(1.0 - w) * new.powf(w)
    }
}

struct StageOutcome {
    violation: f64,
    iterations: usize,
    value: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    xa: &[Point],
    xb: &[Point],
    a: &[f64],
    b: &[f64],
    phi: &mut [f64],
    psi: &mut [f64],
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<StageOutcome> {
    let (n, m) = (a.len(), b.len());
    let mut kernel = Kernel::build(xa, xb, phi, psi, eps);
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut kv = vec![0.0; n];
    let mut ktu = vec![0.0; m];
    let mut violation = f64::INFINITY;
    let mut it = 0;
    // iterations since the last absorption; over-relaxation restarts after each one
    let mut since_absorb = 0;
    let (mut u_prev, mut v_prev) = (u.clone(), v.clone());
    // `ktu` holds `K̃ᵀu` for the current `u` whenever `fresh` is set
    let mut fresh = false;
    while it < max_iter {
        kernel.apply(&v, &mut kv);
        if fresh {
            let rows: f64 = u.iter().zip(&kv).zip(a).map(|((&ui, &k), &ai)| (ui * k - ai).powi(2)).sum();
            let cols: f64 = v.iter().zip(&ktu).zip(b).map(|((&vj, &k), &bj)| (vj * k - bj).powi(2)).sum();
            violation = (rows + cols).sqrt();
            if violation < tol {
                break;
            }
        }
        u_prev.copy_from_slice(&u);
        v_prev.copy_from_slice(&v);
        let w = relax(since_absorb);
        for i in 0..n {
            u[i] = over_relax(u[i], a[i] / kv[i], w);
        }
        kernel.apply_t(&u, &mut ktu);
        for j in 0..m {
            v[j] = over_relax(v[j], b[j] / ktu[j], w);
        }
        fresh = true;
        it += 1;
        since_absorb += 1;
        let usable = |x: &f64| x.is_finite() && *x > 0.0;
        let blown = !u.iter().chain(&v).all(usable);
        if blown {
            if since_absorb == 1 {
                return Err(Error::NonFinite(format!("Sinkhorn scaling at eps={eps:e}, iteration {it}")));
            }
            // step back to the last finite scalings and absorb those instead
            u.copy_from_slice(&u_prev);
            v.copy_from_slice(&v_prev);
        }
        if blown || u.iter().chain(&v).any(|x| x.ln().abs() > ABSORB) {
            for i in 0..n {
                phi[i] += eps * u[i].ln();
                u[i] = 1.0;
            }
            for j in 0..m {
                psi[j] += eps * v[j].ln();
                v[j] = 1.0;
            }
            kernel = Kernel::build(xa, xb, phi, psi, eps);
            fresh = false;
            since_absorb = 0;
        }
    }
    let value = kernel.transport_cost(&u, &v);
    for i in 0..n {
        phi[i] += eps * u[i].ln();
    }
    for j in 0..m {
        psi[j] += eps * v[j].ln();
    }
    Ok(StageOutcome {
        violation,
        iterations: it,
        value,
    })
}

fn epsilon_schedule(cfg: &SinkhornConfig) -> Vec<f64> {
    let mut out = Vec::new();
    let mut e = cfg.epsilon_start;
    while e > cfg.epsilon {
        out.push(e);
        e /= 2.0;
    }
    out.push(cfg.epsilon);
    out
}

/// Entropic transport with ε halved from `epsilon_start` to `epsilon`;
/// early stages run on pooled copies of the grids.
pub fn sinkhorn(p: &GridDistribution, q: &GridDistribution, cfg: &SinkhornConfig) -> Result<SinkhornResult> {
    check_pair(p, q)?;
    if !(cfg.epsilon > 0.0 && cfg.epsilon.is_finite() && cfg.epsilon_start > 0.0) {
        return Err(Error::InvalidConfig(format!("Sinkhorn epsilon must be > 0, got {}", cfg.epsilon)));
    }
    if cfg.max_iter == 0 {
        return Err(Error::InvalidConfig("Sinkhorn max_iter must be >= 1".into()));
    }
    let (a, b, _) = canonical(p, q);
    let levels = build_levels(a, b);
    let schedule = epsilon_schedule(cfg);
    let mut current: Option<usize> = None;
    let mut phi: Vec<f64> = Vec::new();
    let mut psi: Vec<f64> = Vec::new();
    let mut total_iter = 0;
    let last = schedule.len() - 1;
    for (s, &eps) in schedule.iter().enumerate() {
        let lvl = if s == last {
            0
        } else {
            (0..levels.len())
                .rev()
                .find(|&l| levels[l].scale <= LEVEL_RATIO * eps)
                .unwrap_or(0)
        };
        let lvl = current.map_or(lvl, |c| lvl.min(c));
        if current != Some(lvl) {
            let target = &levels[lvl];
            match current {
                None => {
                    phi = vec![0.0; target.cells_a.len()];
                    psi = vec![0.0; target.cells_b.len()];
                }
                Some(c) => {
                    let src = &levels[c];
                    phi = lift(src, target, &src.cells_a, &phi, &target.cells_a, c - lvl);
                    psi = lift(src, target, &src.cells_b, &psi, &target.cells_b, c - lvl);
                }
            }
            current = Some(lvl);
        }
        let level = &levels[lvl];
        let xa: Vec<Point> = level.cells_a.iter().map(|&k| level.centers[k]).collect();
        let xb: Vec<Point> = level.cells_b.iter().map(|&k| level.centers[k]).collect();
        let tol = if s == last { cfg.tolerance } else { STAGE_TOLERANCE.max(cfg.tolerance) };
        let out = run_stage(&xa, &xb, &level.mass_a, &level.mass_b, &mut phi, &mut psi, eps, tol, cfg.max_iter)?;
        total_iter += out.iterations;
        if s == last {
            if !(out.violation < cfg.tolerance) {
                return Err(Error::NotConverged {
                    iterations: out.iterations,
                    violation: out.violation,
                });
            }
            return Ok(SinkhornResult {
                value: out.value,
                violation: out.violation,
                iterations: total_iter,
            });
        }
    }
    unreachable!("schedule is never empty")
}

/// Copies each coarse cell's potential to its descendants `depth` levels down.
fn lift(src: &Level, dst: &Level, src_cells: &[usize], values: &[f64], dst_cells: &[usize], depth: usize) -> Vec<f64> {
    let mut lookup = vec![f64::NAN; src.rows * src.cols];
    for (&c, &v) in src_cells.iter().zip(values) {
        lookup[c] = v;
    }
    dst_cells
        .iter()
        .map(|&k| {
            let (i, j) = (k / dst.cols, k % dst.cols);
            let v = lookup[(i >> depth) * src.cols + (j >> depth)];
            if v.is_nan() {
                0.0
            } else {
                v
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Backend {
    Exact,
    #[default]
    Sinkhorn,
    SinkhornWith(SinkhornConfig),
}

/// Distance between two grids with the chosen backend.
pub fn distance(p: &GridDistribution, q: &GridDistribution, backend: Backend) -> Result<f64> {
    match backend {
        Backend::Exact => Ok(emd_exact(p, q)?.0),
        Backend::Sinkhorn => Ok(sinkhorn(p, q, &SinkhornConfig::default())?.value),
        Backend::SinkhornWith(cfg) => Ok(sinkhorn(p, q, &cfg)?.value),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub label: String,
    pub grid: GridDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub index: usize,
    pub label: String,
    pub distances: Vec<f64>,
}

/// Label of the nearest benchmark; ties go to the lowest index.
pub fn classify(test: &GridDistribution, benchmarks: &[Benchmark], backend: Backend) -> Result<Classification> {
    if benchmarks.is_empty() {
        return Err(Error::Empty("benchmark list"));
    }
    let distances = benchmarks
        .par_iter()
        .map(|b| distance(&b.grid, test, backend))
        .collect::<Result<Vec<_>>>()?;
    let index = argmin(&distances);
    Ok(Classification {
        index,
        label: benchmarks[index].label.clone(),
        distances,
    })
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// `values[(i, j)] = WD(benchmark_i, test_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WdMatrix {
    pub values: Matrix<f64>,
    pub benchmark_labels: Vec<String>,
    pub test_labels: Vec<String>,
}

impl WdMatrix {
    /// Predicted benchmark index for every test column.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.values.cols()).map(|j| argmin(&self.values.column(j))).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("benchmark");
        for t in &self.test_labels {
            s.push(',');
            s += t;
        }
        s.push('\n');
        for (i, b) in self.benchmark_labels.iter().enumerate() {
            s += b;
            for &v in self.values.row(i) {
                let _ = write!(s, ",{}", fmt17(v));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let err = |reason: String| Error::Format {
            path: path.display().to_string(),
            reason,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err("empty file".into()))?;
        let mut head = header.split(',');
        if head.next() != Some("benchmark") {
            return Err(err("header must start with `benchmark`".into()));
        }
        let test_labels: Vec<String> = head.map(str::to_string).collect();
        let mut benchmark_labels = Vec::new();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let mut f = line.split(',');
            benchmark_labels.push(f.next().unwrap_or_default().to_string());
            let r = f
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(format!("line {}: {e}", n + 2)))?;
            if r.len() != test_labels.len() {
                return Err(err(format!("line {}: expected {} values", n + 2, test_labels.len())));
            }
            rows.push(r);
        }
        Ok(Self {
            values: Matrix::from_rows(&rows).map_err(|e| err(e.to_string()))?,
            benchmark_labels,
            test_labels,
        })
    }
}

pub fn wd_matrix(benchmarks: &[Benchmark], tests: &[Benchmark], backend: Backend) -> Result<WdMatrix> {
    if benchmarks.is_empty() || tests.is_empty() {
        return Err(Error::Empty("wd_matrix inputs"));
    }
    let pairs: Vec<(usize, usize)> = (0..benchmarks.len())
        .flat_map(|i| (0..tests.len()).map(move |j| (i, j)))
        .collect();
    let vals = pairs
        .par_iter()
        .map(|&(i, j)| distance(&benchmarks[i].grid, &tests[j].grid, backend))
        .collect::<Result<Vec<_>>>()?;
    Ok(WdMatrix {
        values: Matrix::from_vec(benchmarks.len(), tests.len(), vals)?,
        benchmark_labels: benchmarks.iter().map(|b| b.label.clone()).collect(),
        test_labels: tests.iter().map(|b| b.label.clone()).collect(),
    })
}
