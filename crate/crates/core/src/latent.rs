//! Latent phase points, their shared normalization, Gaussian KDE grids and
//! convex-hull separation checks.
//!
//! Everything after the embedding runs in `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{sym2_sqrt, Matrix};
use crate::scalar::Real;
use crate::synth::{fmt17, SequenceWindow};
use crate::vae::Autoencoder;

pub type Point = [f64; 2];

/// Encoder means of consecutive windows from one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory<T> {
    pub points: Vec<[T; 2]>,
    pub label: String,
    /// First row of each window in its source dataset.
    pub start_indices: Vec<usize>,
}

impl<T: Real> LatentTrajectory<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points_f64(&self) -> Vec<Point> {
        self.points.iter().map(|p| [p[0].to_f64_lossy(), p[1].to_f64_lossy()]).collect()
    }

    /// Largest pairwise distance between points.
    pub fn diameter(&self) -> f64 {
        let p = self.points_f64();
        let mut d: f64 = 0.0;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                d = d.max(dist(p[i], p[j]));
            }
        }
        d
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("idx,z1,z2\n");
        for (i, p) in self.points_f64().iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", i, fmt17(p[0]), fmt17(p[1]));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Reads `idx,z1,z2`; indices must count up from 0.
pub fn read_trajectory_csv(path: &Path, label: &str) -> Result<LatentTrajectory<f64>> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, reason: &str| Error::Format {
        path: path.display().to_string(),
        reason: format!("line {line}: {reason}"),
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("idx,z1,z2") {
        return Err(err(1, "expected header `idx,z1,z2`"));
    }
    let mut points = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(err(n + 2, "expected 3 fields"));
        }
        let idx: usize = f[0].trim().parse().map_err(|_| err(n + 2, "bad index"))?;
        if idx != points.len() {
            return Err(err(n + 2, "indices must be consecutive"));
        }
        let z1: f64 = f[1].trim().parse().map_err(|_| err(n + 2, "bad z1"))?;
        let z2: f64 = f[2].trim().parse().map_err(|_| err(n + 2, "bad z2"))?;
        points.push([z1, z2]);
    }
    let start_indices = (0..points.len()).collect();
    Ok(LatentTrajectory {
        points,
        label: label.to_string(),
        start_indices,
    })
}

/// One phase point (the encoder mean) per window, in window order.
pub fn embed_dataset<T: Real, M: Autoencoder<T>>(
    model: &M,
    windows: &[SequenceWindow],
    label: &str,
) -> Result<LatentTrajectory<T>> {
    let points = windows
        .par_iter()
        .map(|w| model.encode(&w.data.cast::<T>()).map(|g| g.mu))
        .collect::<Result<Vec<_>>>()?;
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent embedding".into()));
    }
    Ok(LatentTrajectory {
        points,
        label: label.to_string(),
        start_indices: windows.iter().map(|w| w.start_index).collect(),
    })
}

/// Affine map from latent coordinates into `[0, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub min: Point,
    pub max: Point,
}

impl Frame {
    pub fn fit(sets: &[&[Point]]) -> Result<Self> {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        let mut any = false;
        for p in sets.iter().flat_map(|s| s.iter()) {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::NonFinite("point passed to normalization".into()));
            }
            any = true;
            for a in 0..2 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        if !any {
            return Err(Error::Empty("normalize_joint: union of point sets"));
        }
        Ok(Self { min, max })
    }

    /// Zero-extent axes map to 0.5.
    pub fn apply(&self, p: Point) -> Point {
        let mut o = [0.5; 2];
        for a in 0..2 {
            let ext = self.max[a] - self.min[a];
            if ext > 0.0 {
                o[a] = (p[a] - self.min[a]) / ext;
            }
        }
        o
    }
}

/// Min-max normalization over the union of `sets`, applied identically to each.
pub fn normalize_joint(sets: &[Vec<Point>]) -> Result<(Vec<Vec<Point>>, Frame)> {
    let refs: Vec<&[Point]> = sets.iter().map(|s| s.as_slice()).collect();
    let frame = Frame::fit(&refs)?;
    let out = sets.iter().map(|s| s.iter().map(|&p| frame.apply(p)).collect()).collect();
    Ok((out, frame))
}

pub type Mat2 = [[f64; 2]; 2];

/// Sample covariance (divisor `n − 1`).
pub fn covariance(points: &[Point]) -> Result<Mat2> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidConfig(format!("covariance needs n >= 2 points, got {n}")));
    }
    let mut m = [0.0; 2];
    for p in points {
        m[0] += p[0];
        m[1] += p[1];
    }
    m[0] /= n as f64;
    m[1] /= n as f64;
    let mut c = [[0.0; 2]; 2];
    for p in points {
        let d = [p[0] - m[0], p[1] - m[1]];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += d[i] * d[j];
            }
        }
    }
    for row in &mut c {
        for v in row {
            *v /= (n - 1) as f64;
        }
    }
    Ok(c)
}

pub const SCOTT_REG: f64 = 1e-12;

/// `h = n^{-1/6} · cov^{1/2}` with `10⁻¹²·trace` added to the covariance diagonal.
pub fn scott_bandwidth(points: &[Point]) -> Result<Mat2> {
    let mut c = covariance(points)?;
    let tr = c[0][0] + c[1][1];
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(Error::InvalidConfig("bandwidth of a point set with zero spread".into()));
    }
    c[0][0] += SCOTT_REG * tr;
    c[1][1] += SCOTT_REG * tr;
    let f = (points.len() as f64).powf(-1.0 / 6.0);
    let s = sym2_sqrt(c);
    Ok([[f * s[0][0], f * s[0][1]], [f * s[1][0], f * s[1][1]]])
}

/// How the bandwidth matrix enters the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelForm {
    /// Multivariate normal with covariance `h hᵀ`.
    #[default]
    FullCovariance,
    /// Isotropic normal with scalar bandwidth `det(h)^{1/2}`.
    Isotropic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdeConfig {
    pub grid: usize,
    pub bandwidth: Option<Mat2>,
    pub kernel: KernelForm,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self {
            grid: 100,
            bandwidth: None,
            kernel: KernelForm::FullCovariance,
        }
    }
}

/// A Gaussian kernel density estimate ready for evaluation.
#[derive(Debug, Clone)]
pub struct Kde {
    points: Vec<Point>,
    /// Inverse kernel covariance.
    precision: Mat2,
    log_norm: f64,
}

impl Kde {
    pub fn new(points: &[Point], bandwidth: Option<Mat2>, kernel: KernelForm) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidConfig(format!("KDE needs n >= 2 points, got {}", points.len())));
        }
        let h = match bandwidth {
            Some(h) => h,
            None => scott_bandwidth(points)?,
        };
        let det_h = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if !(det_h.abs() > 0.0 && det_h.is_finite()) {
            return Err(Error::InvalidConfig("singular KDE bandwidth".into()));
        }
        let cov = match kernel {
            KernelForm::FullCovariance => {
                let mut c = [[0.0; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        c[i][j] = h[i][0] * h[j][0] + h[i][1] * h[j][1];
                    }
                }
                c
            }
            KernelForm::Isotropic => {
                let s2 = det_h.abs();
                [[s2, 0.0], [0.0, s2]]
            }
        };
        let det_c = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let precision = [[cov[1][1] / det_c, -cov[0][1] / det_c], [-cov[1][0] / det_c, cov[0][0] / det_c]];
        Ok(Self {
            points: points.to_vec(),
            precision,
            log_norm: -(2.0 * std::f64::consts::PI * det_c.sqrt()).ln(),
        })
    }

    pub fn density(&self, z: Point) -> f64 {
        self.log_density(z).exp()
    }

    /// Log-sum-exp over the kernels, so far-off points do not underflow to `-inf`.
    pub fn log_density(&self, z: Point) -> f64 {
        let p = &self.precision;
        let terms: Vec<f64> = self
            .points
            .iter()
            .map(|q| {
                let u = [z[0] - q[0], z[1] - q[1]];
                -0.5 * (p[0][0] * u[0] * u[0] + (p[0][1] + p[1][0]) * u[0] * u[1] + p[1][1] * u[1] * u[1])
            })
            .collect();
        let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = terms.iter().map(|t| (t - top).exp()).sum();
        self.log_norm + top + (s / self.points.len() as f64).ln()
    }
}

/// Nonnegative masses on a `rows × cols` grid that sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDistribution {
    /// Row `i` is the second-axis bin, column `j` the first-axis bin.
    pub masses: Matrix<f64>,
    /// `[[z1_min, z1_max], [z2_min, z2_max]]`
    pub bounds: [[f64; 2]; 2],
}

pub const MASS_TOL: f64 = 1e-12;

impl GridDistribution {
    pub fn new(masses: Matrix<f64>, bounds: [[f64; 2]; 2]) -> Result<Self> {
        if masses.rows() == 0 || masses.cols() == 0 {
            return Err(Error::Empty("grid distribution"));
        }
        if let Some(v) = masses.as_slice().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NonFinite(format!("grid mass {v}")));
        }
        let total: f64 = masses.as_slice().iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidConfig(format!("grid masses sum to {total}, not 1")));
        }
        if !(bounds[0][1] > bounds[0][0] && bounds[1][1] > bounds[1][0]) {
            return Err(Error::InvalidConfig(format!("bad grid bounds {bounds:?}")));
        }
        Ok(Self { masses, bounds })
    }

    /// Divides by the total first; fails on zero or non-finite totals.
    pub fn normalized(mut masses: Matrix<f64>, bounds: [[f64; 2]; 2]) -> Result<Self> {
        let total: f64 = masses.as_slice().iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::NonFinite(format!("grid total mass {total}")));
        }
        masses.as_mut_slice().iter_mut().for_each(|v| *v /= total);
        Self::new(masses, bounds)
    }

    pub fn unit(masses: Matrix<f64>) -> Result<Self> {
        Self::new(masses, [[0.0, 1.0], [0.0, 1.0]])
    }

    pub fn shape(&self) -> (usize, usize) {
        self.masses.shape()
    }

    /// Cell widths along (z1, z2).
    pub fn cell_size(&self) -> [f64; 2] {
        let (r, c) = self.shape();
        [
            (self.bounds[0][1] - self.bounds[0][0]) / c as f64,
            (self.bounds[1][1] - self.bounds[1][0]) / r as f64,
        ]
    }

    /// Centre of cell (row `i`, column `j`) as (z1, z2).
    pub fn center(&self, i: usize, j: usize) -> Point {
        let w = self.cell_size();
        [
            self.bounds[0][0] + (j as f64 + 0.5) * w[0],
            self.bounds[1][0] + (i as f64 + 0.5) * w[1],
        ]
    }

    pub fn same_frame(&self, other: &Self) -> bool {
        self.shape() == other.shape() && self.bounds == other.bounds
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in self.masses.row_iter() {
            let line: Vec<String> = r.iter().map(|&v| fmt17(v)).collect();
            s += &line.join(",");
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Reads a grid written by [`Self::write_csv`] on the unit frame and revalidates it.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format {
                    path: path.display().to_string(),
                    reason: format!("line {}: {e}", n + 1),
                })?;
            rows.push(r);
        }
        let m = Matrix::from_rows(&rows).map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::unit(m)
    }
}

/// KDE evaluated at the `G × G` cell centres of `[0, 1]²`, renormalized to unit mass.
pub fn gkde(points: &[Point], cfg: &KdeConfig) -> Result<GridDistribution> {
    if cfg.grid < 2 {
        return Err(Error::InvalidConfig(format!("grid size must be >= 2, got {}", cfg.grid)));
    }
    let kde = Kde::new(points, cfg.bandwidth, cfg.kernel)?;
    let g = cfg.grid;
    let rows: Vec<Vec<f64>> = (0..g)
        .into_par_iter()
        .map(|i| {
            let y = (i as f64 + 0.5) / g as f64;
            (0..g).map(|j| kde.log_density([(j as f64 + 0.5) / g as f64, y])).collect()
        })
        .collect();
    // shift by the largest cell before exponentiating; renormalization removes it again
    let top = rows.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|l| (l - top).exp()).collect()).collect();
    let m = Matrix::from_rows(&rows)?;
    GridDistribution::normalized(m, [[0.0, 1.0], [0.0, 1.0]])
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise hull without collinear vertices (monotone chain).
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut p: Vec<Point> = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        // all collinear: keep the two extremes
        return vec![p[0], p[p.len() - 1]];
    }
    hull
}

pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a.abs()
}

/// Area of the intersection of two convex CCW polygons.
pub fn convex_overlap_area(a: &[Point], b: &[Point]) -> f64 {
    if a.len() < 3 || b.len() < 3 {
        return 0.0;
    }
    let mut out: Vec<Point> = a.to_vec();
    for i in 0..b.len() {
        let (e0, e1) = (b[i], b[(i + 1) % b.len()]);
        let input = std::mem::take(&mut out);
        if input.is_empty() {
            break;
        }
        for k in 0..input.len() {
            let cur = input[k];
            let prev = input[(k + input.len() - 1) % input.len()];
            let cin = cross(e0, e1, cur) >= 0.0;
            let pin = cross(e0, e1, prev) >= 0.0;
            if cin != pin {
                out.push(segment_line_intersection(prev, cur, e0, e1));
            }
            if cin {
                out.push(cur);
            }
        }
    }
    polygon_area(&out)
}

fn segment_line_intersection(p: Point, q: Point, a: Point, b: Point) -> Point {
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let t = d1 / (d1 - d2);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn candidate_axes(h: &[Point]) -> Vec<Point> {
    let mut axes = Vec::new();
    for i in 0..h.len() {
        let (p, q) = (h[i], h[(i + 1) % h.len()]);
        if p == q {
            continue;
        }
        axes.push([-(q[1] - p[1]), q[0] - p[0]]);
        if h.len() == 2 {
            axes.push([q[0] - p[0], q[1] - p[1]]);
        }
    }
    axes
}

fn project(h: &[Point], axis: Point) -> (f64, f64) {
    h.iter().map(|p| p[0] * axis[0] + p[1] * axis[1]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// True when the convex hulls of `a` and `b` have no point in common.
pub fn hulls_disjoint(a: &[Point], b: &[Point]) -> bool {
    let ha = convex_hull(a);
    let hb = convex_hull(b);
    if ha.is_empty() || hb.is_empty() {
        return true;
    }
    let mut axes = candidate_axes(&ha);
    axes.extend(candidate_axes(&hb));
    if ha.len() == 1 && hb.len() == 1 {
        axes.push([hb[0][0] - ha[0][0], hb[0][1] - ha[0][1]]);
    }
    axes.iter().any(|&ax| {
        let (a0, a1) = project(&ha, ax);
        let (b0, b1) = project(&hb, ax);
        a1 < b0 || b1 < a0
    })
}

/// Intersection area of the convex hulls of two point sets.
pub fn hull_overlap_area(a: &[Point], b: &[Point]) -> f64 {
    convex_overlap_area(&convex_hull(a), &convex_hull(b))
}
