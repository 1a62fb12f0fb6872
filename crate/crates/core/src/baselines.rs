//! Comparison methods: a fully connected VAE on flattened windows and
//! two-component PCA on per-step feature vectors.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix};
use crate::nn::{Activation, Dense, Parameters, TensorView};
use crate::scalar::{lit, Real};
use crate::vae::{
    ArchDescriptor, Autoencoder, GaussianHead, HeadCache, LatentGaussian, NoiseScale, KIND_MLP, LATENT_DIM,
};

pub const MLP_HIDDEN: usize = 256;

/// `k·F → hidden (tanh) → μ/logvar → hidden (tanh) → k·F`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpVae<T> {
    pub window: usize,
    pub features: usize,
    pub beta: f64,
    pub noise_scale: NoiseScale,
    pub encoder: Dense<T>,
    pub head: GaussianHead<T>,
    pub decoder: Dense<T>,
    pub output: Dense<T>,
}

pub struct MlpVaeCache<T> {
    input: Vec<T>,
    hidden: Vec<T>,
    head: HeadCache<T>,
    z: Vec<T>,
    dec_hidden: Vec<T>,
}

impl<T: Real> MlpVae<T> {
    pub fn init<R: Rng>(features: usize, window: usize, hidden: usize, beta: f64, rng: &mut R) -> Result<Self> {
        Self::check(features, window, hidden, beta)?;
        let n = features * window;
        Ok(Self {
            window,
            features,
            beta,
            noise_scale: NoiseScale::StdDev,
            encoder: Dense::init(n, hidden, rng),
            head: GaussianHead::init(hidden, rng),
            decoder: Dense::init(LATENT_DIM, hidden, rng),
            output: Dense::init(hidden, n, rng),
        })
    }

    pub fn zeros(features: usize, window: usize, hidden: usize, beta: f64) -> Result<Self> {
        Self::check(features, window, hidden, beta)?;
        let n = features * window;
        Ok(Self {
            window,
            features,
            beta,
            noise_scale: NoiseScale::StdDev,
            encoder: Dense::zeros(n, hidden),
            head: GaussianHead::zeros(hidden),
            decoder: Dense::zeros(LATENT_DIM, hidden),
            output: Dense::zeros(hidden, n),
        })
    }

    fn check(features: usize, window: usize, hidden: usize, beta: f64) -> Result<()> {
        if features == 0 || window == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("MLP VAE sizes must be >= 1".into()));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidConfig("beta must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn hidden_size(&self) -> usize {
        self.encoder.output_size()
    }

    fn decode_inner(&self, z: &[T]) -> (Matrix<T>, Vec<T>) {
        let h = self.decoder.forward_unchecked(z, Activation::Tanh);
        let y = self.output.forward_unchecked(&h, Activation::Linear);
        (Matrix::from_vec(self.window, self.features, y).expect("k·F outputs"), h)
    }
}

/// Fully connected VAE with the default hidden width.
pub fn build_mlp_vae<T: Real, R: Rng>(features: usize, window: usize, rng: &mut R) -> Result<MlpVae<T>> {
    MlpVae::init(features, window, MLP_HIDDEN, 1.0, rng)
}

impl<T: Real> Parameters<T> for MlpVae<T> {
    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut v = self.encoder.tensors();
        v.extend(self.head.tensors());
        v.extend(self.decoder.tensors());
        v.extend(self.output.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.head.tensors_mut());
        v.extend(self.decoder.tensors_mut());
        v.extend(self.output.tensors_mut());
        v
    }
}

impl<T: Real> Autoencoder<T> for MlpVae<T> {
    type Cache = MlpVaeCache<T>;

    fn window(&self) -> usize {
        self.window
    }

    fn features(&self) -> usize {
        self.features
    }

    fn beta(&self) -> T {
        lit(self.beta)
    }

    fn encode(&self, window: &Matrix<T>) -> Result<LatentGaussian<T>> {
        self.check_window(window)?;
        let h = self.encoder.forward_unchecked(window.as_slice(), Activation::Tanh);
        Ok(self.head.encode(&h))
    }

    fn decode(&self, z: [T; LATENT_DIM]) -> Result<Matrix<T>> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent input to decoder".into()));
        }
        Ok(self.decode_inner(&z).0)
    }

    fn forward(&self, window: &Matrix<T>, zeta: [T; LATENT_DIM]) -> Result<(Matrix<T>, LatentGaussian<T>, Self::Cache)> {
        self.check_window(window)?;
        let input = window.as_slice().to_vec();
        let hidden = self.encoder.forward_unchecked(&input, Activation::Tanh);
        let (z, head) = self.head.forward(&hidden, zeta, self.noise_scale);
        let (x, dec_hidden) = self.decode_inner(&z);
        let latent = self.head.encode(&hidden);
        Ok((
            x,
            latent,
            MlpVaeCache {
                input,
                hidden,
                head,
                z: z.to_vec(),
                dec_hidden,
            },
        ))
    }

    fn backward(&self, cache: &Self::Cache, d_output: &Matrix<T>, kl_weight: T) -> Self {
        let mut g = self.zeros_like();
        let dh = self
            .output
            .backward(&cache.dec_hidden, &[], Activation::Linear, d_output.as_slice(), &mut g.output);
        let dz = self
            .decoder
            .backward(&cache.z, &cache.dec_hidden, Activation::Tanh, &dh, &mut g.decoder);
        let d_hidden = self.head.backward(&cache.head, [dz[0], dz[1]], kl_weight, &mut g.head);
        self.encoder
            .backward(&cache.input, &cache.hidden, Activation::Tanh, &d_hidden, &mut g.encoder);
        g
    }

    fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.features, self.window, self.hidden_size(), self.beta).expect("validated sizes");
        z.noise_scale = self.noise_scale;
        z
    }

    fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor {
            kind: KIND_MLP,
            ints: vec![
                self.features as u32,
                self.window as u32,
                self.hidden_size() as u32,
                (self.noise_scale == NoiseScale::Variance) as u32,
            ],
            reals: vec![self.beta],
        }
    }

    fn from_descriptor(desc: &ArchDescriptor) -> Result<Self> {
        if desc.kind != KIND_MLP || desc.ints.len() != 4 || desc.reals.len() != 1 {
            return Err(Error::ArchitectureMismatch(format!(
                "descriptor kind {} with {} ints is not a fully connected VAE",
                desc.kind,
                desc.ints.len()
            )));
        }
        let mut m = Self::zeros(desc.ints[0] as usize, desc.ints[1] as usize, desc.ints[2] as usize, desc.reals[0])?;
        if desc.ints[3] == 1 {
            m.noise_scale = NoiseScale::Variance;
        }
        Ok(m)
    }
}

/// Two-component principal component model.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Vec<T>,
    /// `2 × F`, orthonormal rows.
    pub components: Matrix<T>,
    /// Variance (population normalization) along each component, nonincreasing.
    pub explained_variance: Vec<T>,
}

pub const PCA_COMPONENTS: usize = 2;

/// Mean-centred SVD; the largest-magnitude coordinate of each component is made positive.
pub fn pca_fit<T: Real>(rows: &Matrix<T>) -> Result<PcaModel<T>> {
    let (n, f) = rows.shape();
    if n < 3 {
        return Err(Error::InvalidConfig(format!("PCA needs at least 3 rows, got {n}")));
    }
    if f < PCA_COMPONENTS {
        return Err(Error::InvalidConfig(format!("PCA needs at least {PCA_COMPONENTS} features, got {f}")));
    }
    let mut mean = vec![T::zero(); f];
    for r in rows.row_iter() {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    let inv_n = T::one() / lit(n as f64);
    mean.iter_mut().for_each(|m| *m *= inv_n);
    let centred = Matrix::from_fn(n, f, |r, c| rows[(r, c)] - mean[c]);
    let d = svd(&centred);
    let mut components = Matrix::zeros(PCA_COMPONENTS, f);
    for k in 0..PCA_COMPONENTS {
        let row = d.vt.row(k);
        let pivot = row
            .iter()
            .copied()
            .fold(T::zero(), |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < T::zero() { -T::one() } else { T::one() };
        for (o, &v) in components.row_mut(k).iter_mut().zip(row) {
            *o = sign * v;
        }
    }
    let explained_variance = d.s[..PCA_COMPONENTS].iter().map(|&s| s * s * inv_n).collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

impl<T: Real> PcaModel<T> {
    pub fn features(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, rows: &Matrix<T>) -> Result<Matrix<T>> {
        if rows.cols() != self.features() {
            return Err(Error::dims("PcaModel::transform", self.features(), rows.cols()));
        }
        let mut out = Matrix::zeros(rows.rows(), PCA_COMPONENTS);
        let mut centred = vec![T::zero(); self.features()];
        for r in 0..rows.rows() {
            for ((c, &v), &m) in centred.iter_mut().zip(rows.row(r)).zip(&self.mean) {
                *c = v - m;
            }
            let mut s = vec![T::zero(); PCA_COMPONENTS];
            self.components.matvec_acc(&centred, &mut s);
            out.row_mut(r).copy_from_slice(&s);
        }
        Ok(out)
    }

    pub fn reconstruct(&self, scores: &Matrix<T>) -> Result<Matrix<T>> {
        if scores.cols() != PCA_COMPONENTS {
            return Err(Error::dims("PcaModel::reconstruct", PCA_COMPONENTS, scores.cols()));
        }
        let mut out = Matrix::zeros(scores.rows(), self.features());
        for r in 0..scores.rows() {
            let row = out.row_mut(r);
            row.copy_from_slice(&self.mean);
            self.components.matvec_t_acc(scores.row(r), row);
        }
        Ok(out)
    }

    /// Mean squared reconstruction error over every entry of `rows`.
    pub fn reconstruction_mse(&self, rows: &Matrix<T>) -> Result<T> {
        let back = self.reconstruct(&self.transform(rows)?)?;
        Ok(crate::vae::mean_squared_error(rows, &back))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let line = |v: &[T]| v.iter().map(|x| format!("{:.16e}", x.to_f64_lossy())).collect::<Vec<_>>().join(",");
        let mut s = String::from("# mean\n");
        s += &line(&self.mean);
        s += "\n# components\n";
        for r in 0..PCA_COMPONENTS {
            s += &line(self.components.row(r));
            s.push('\n');
        }
        s += "# variances\n";
        s += &line(&self.explained_variance);
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let err = |reason: String| Error::Format {
            path: path.display().to_string(),
            reason,
        };
        let mut blocks: Vec<(String, Vec<Vec<T>>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(name) = line.strip_prefix("# ") {
                blocks.push((name.trim().to_string(), Vec::new()));
            } else if !line.trim().is_empty() {
                let block = blocks.last_mut().ok_or_else(|| err(format!("line {}: data before header", i + 1)))?;
                let vals = line
                    .split(',')
                    .map(|t| t.trim().parse::<f64>().map(lit::<T>))
                    .collect::<std::result::Result<Vec<T>, _>>()
                    .map_err(|e| err(format!("line {}: {e}", i + 1)))?;
                block.1.push(vals);
            }
        }
        let take = |name: &str| {
            blocks
                .iter()
                .find(|b| b.0 == name)
                .map(|b| b.1.clone())
                .ok_or_else(|| err(format!("missing `{name}` block")))
        };
        let mean = take("mean")?.into_iter().next().ok_or_else(|| err("empty mean".into()))?;
        let comps = take("components")?;
        let explained_variance = take("variances")?.into_iter().next().ok_or_else(|| err("empty variances".into()))?;
        if comps.len() != PCA_COMPONENTS || comps.iter().any(|r| r.len() != mean.len()) {
            return Err(err("component block shape".into()));
        }
        Ok(Self {
            components: Matrix::from_rows(&comps)?,
            mean,
            explained_variance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rank2_data() -> Matrix<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        Matrix::from_fn(20, 5, |i, c| 3.0 + (i as f64 * 0.7).sin() * a[c] + (i as f64 * 0.3).cos() * 2.0 * b[c])
    }

    #[test]
    fn exact_for_rank_two_affine_data() {
        let x = rank2_data();
        let m = pca_fit(&x).unwrap();
        assert!(m.reconstruction_mse(&x).unwrap() < 1e-18);
        let g = m.components.matmul(&m.components.transpose()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - e).abs() < 1e-10);
            }
        }
        assert!(m.explained_variance[0] >= m.explained_variance[1]);
    }

    #[test]
    fn mean_row_maps_to_origin() {
        let x = rank2_data();
        let m = pca_fit(&x).unwrap();
        let mean = Matrix::from_vec(1, 5, m.mean.clone()).unwrap();
        let s = m.transform(&mean).unwrap();
        assert!(s.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sign_convention_and_errors() {
        let m = pca_fit(&rank2_data()).unwrap();
        for k in 0..2 {
            let row = m.components.row(k);
            let big = row.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
        assert!(pca_fit(&Matrix::<f64>::zeros(2, 4)).is_err());
        assert!(m.transform(&Matrix::zeros(3, 4)).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let m = pca_fit(&rank2_data()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pca.csv");
        m.write_csv(&p).unwrap();
        assert_eq!(PcaModel::<f64>::read_csv(&p).unwrap(), m);
    }

    #[test]
    fn mlp_encode_deterministic() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let m: MlpVae<f64> = MlpVae::init(4, 3, 8, 1.0, &mut r).unwrap();
        let w = Matrix::from_fn(3, 4, |a, b| (a * 4 + b) as f64 * 0.1);
        assert_eq!(m.encode(&w).unwrap(), m.encode(&w).unwrap());
        let (x, g, _) = m.forward(&w, [0.0, 0.0]).unwrap();
        assert_eq!(x, m.decode(g.mu).unwrap());
        assert_eq!(MlpVae::<f64>::from_descriptor(&m.descriptor()).unwrap().descriptor(), m.descriptor());
    }
}
