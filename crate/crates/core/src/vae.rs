//! Two-layer bidirectional LSTM variational autoencoder with a 2-D Gaussian latent.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix};
use crate::nn::{Activation, BiLstm, BiLstmCache, CellOutput, Dense, Parameters, TensorView};
use crate::scalar::{lit, Real};

pub const LATENT_DIM: usize = 2;
pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 20.0;

/// How the posterior spread scales the injected noise in the reparameterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseScale {
    /// `Z = μ + σ ⊙ ζ`
    #[default]
    StdDev,
    /// `Z = μ + σ² ⊙ ζ`
    Variance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub features: usize,
    pub window: usize,
    /// Hidden sizes of the two encoder Bi-LSTM layers.
    pub encoder_hidden: [usize; 2],
    pub encoder_dense: usize,
    /// Hidden sizes of the two decoder Bi-LSTM layers.
    pub decoder_hidden: [usize; 2],
    pub decoder_dense: usize,
    pub beta: f64,
    pub noise_scale: NoiseScale,
    pub cell_output: CellOutput,
    pub ortho_in_loss: bool,
}

impl ArchConfig {
    /// Encoder `[F, 128]` Bi-LSTM → 256 dense → 2; decoder mirrored.
    pub fn standard(features: usize, window: usize) -> Self {
        Self {
            features,
            window,
            encoder_hidden: [features, 128],
            encoder_dense: 256,
            decoder_hidden: [128, features],
            decoder_dense: 256,
            beta: 1.0,
            noise_scale: NoiseScale::StdDev,
            cell_output: CellOutput::CurrentMemory,
            ortho_in_loss: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.features,
            self.window,
            self.encoder_hidden[0],
            self.encoder_hidden[1],
            self.encoder_dense,
            self.decoder_hidden[0],
            self.decoder_hidden[1],
            self.decoder_dense,
        ];
        if sizes.contains(&0) {
            return Err(Error::InvalidConfig("all layer sizes must be >= 1".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig("beta must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Posterior `N(μ, diag(exp(logvar)))`; `logvar` is already clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentGaussian<T> {
    pub mu: [T; LATENT_DIM],
    pub logvar: [T; LATENT_DIM],
}

pub fn reparameterize<T: Real>(g: &LatentGaussian<T>, zeta: [T; LATENT_DIM], scale: NoiseScale) -> [T; LATENT_DIM] {
    let mut z = g.mu;
    for j in 0..LATENT_DIM {
        let s = match scale {
            NoiseScale::StdDev => (lit::<T>(0.5) * g.logvar[j]).exp(),
            NoiseScale::Variance => g.logvar[j].exp(),
        };
        z[j] += s * zeta[j];
    }
    z
}

/// `½ Σ (exp(logvar) + μ² − 1 − logvar)`
pub fn kl_divergence<T: Real>(g: &LatentGaussian<T>) -> T {
    let half = lit::<T>(0.5);
    (0..LATENT_DIM)
        .map(|j| half * (g.logvar[j].exp() + g.mu[j] * g.mu[j] - T::one() - g.logvar[j]))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub total: T,
    pub mse: T,
    pub kl: T,
}

pub fn vae_loss<T: Real>(x: &Matrix<T>, x_rec: &Matrix<T>, g: &LatentGaussian<T>, beta: T) -> Result<LossParts<T>> {
    if x.shape() != x_rec.shape() {
        return Err(Error::dims("vae_loss", format!("{:?}", x.shape()), format!("{:?}", x_rec.shape())));
    }
    let mse = mean_squared_error(x, x_rec);
    let kl = kl_divergence(g);
    Ok(LossParts {
        total: mse + beta * kl,
        mse,
        kl,
    })
}

pub(crate) fn mean_squared_error<T: Real>(x: &Matrix<T>, y: &Matrix<T>) -> T {
    let n = x.as_slice().len().max(1);
    x.as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>()
        / lit(n as f64)
}

/// `d mse / d x_rec`
pub(crate) fn mse_gradient<T: Real>(x: &Matrix<T>, x_rec: &Matrix<T>) -> Matrix<T> {
    let scale = lit::<T>(2.0 / x.as_slice().len().max(1) as f64);
    let data = x_rec
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(&r, &t)| scale * (r - t))
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data).expect("same shape")
}

/// The μ and log-variance heads shared by every autoencoder in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead<T> {
    pub mu: Dense<T>,
    pub logvar: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct HeadCache<T> {
    input: Vec<T>,
    latent: LatentGaussian<T>,
    clamped: [bool; LATENT_DIM],
    zeta: [T; LATENT_DIM],
    scale: NoiseScale,
}

impl<T: Real> GaussianHead<T> {
    pub fn zeros(input: usize) -> Self {
        Self {
            mu: Dense::zeros(input, LATENT_DIM),
            logvar: Dense::zeros(input, LATENT_DIM),
        }
    }

    pub fn init<R: Rng>(input: usize, rng: &mut R) -> Self {
        Self {
            mu: Dense::init(input, LATENT_DIM, rng),
            logvar: Dense::init(input, LATENT_DIM, rng),
        }
    }

    fn latent(&self, x: &[T]) -> (LatentGaussian<T>, [bool; LATENT_DIM]) {
        let mu = self.mu.forward_unchecked(x, Activation::Linear);
        let lv = self.logvar.forward_unchecked(x, Activation::Linear);
        let (lo, hi) = (lit::<T>(LOGVAR_MIN), lit::<T>(LOGVAR_MAX));
        let mut logvar = [T::zero(); LATENT_DIM];
        let mut clamped = [false; LATENT_DIM];
        for j in 0..LATENT_DIM {
            clamped[j] = lv[j] < lo || lv[j] > hi;
            logvar[j] = lv[j].max(lo).min(hi);
        }
        (LatentGaussian { mu: [mu[0], mu[1]], logvar }, clamped)
    }

    pub fn encode(&self, x: &[T]) -> LatentGaussian<T> {
        self.latent(x).0
    }

    pub fn forward(&self, x: &[T], zeta: [T; LATENT_DIM], scale: NoiseScale) -> ([T; LATENT_DIM], HeadCache<T>) {
        let (latent, clamped) = self.latent(x);
        let z = reparameterize(&latent, zeta, scale);
        (
            z,
            HeadCache {
                input: x.to_vec(),
                latent,
                clamped,
                zeta,
                scale,
            },
        )
    }

    /// Gradient of `L(z) + kl_weight·KL` given `dz = dL/dz`; returns `dL/d input`.
    pub fn backward(&self, cache: &HeadCache<T>, dz: [T; LATENT_DIM], kl_weight: T, grad: &mut GaussianHead<T>) -> Vec<T> {
        let half = lit::<T>(0.5);
        let g = &cache.latent;
        let mut dmu = [T::zero(); LATENT_DIM];
        let mut dlv = [T::zero(); LATENT_DIM];
        for j in 0..LATENT_DIM {
            dmu[j] = dz[j] + kl_weight * g.mu[j];
            let ds = match cache.scale {
                NoiseScale::StdDev => half * (half * g.logvar[j]).exp(),
                NoiseScale::Variance => g.logvar[j].exp(),
            };
            let d = dz[j] * cache.zeta[j] * ds + kl_weight * half * (g.logvar[j].exp() - T::one());
            dlv[j] = if cache.clamped[j] { T::zero() } else { d };
        }
        let y_mu = [g.mu[0], g.mu[1]];
        let mut dx = self.mu.backward(&cache.input, &y_mu, Activation::Linear, &dmu, &mut grad.mu);
        let dx2 = self
            .logvar
            .backward(&cache.input, &g.logvar, Activation::Linear, &dlv, &mut grad.logvar);
        for (a, b) in dx.iter_mut().zip(dx2) {
            *a += b;
        }
        dx
    }
}

impl<T: Real> Parameters<T> for GaussianHead<T> {
    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut v = self.mu.tensors();
        v.extend(self.logvar.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.mu.tensors_mut();
        v.extend(self.logvar.tensors_mut());
        v
    }
}

/// Stable description of a model's architecture, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchDescriptor {
    pub kind: u32,
    pub ints: Vec<u32>,
    pub reals: Vec<f64>,
}

/// Interface shared by the recurrent and the fully connected autoencoders,
/// which is all the trainer and the latent analysis rely on.
pub trait Autoencoder<T: Real>: Parameters<T> + Clone + Send + Sync + Sized {
    type Cache: Send + Sync;

    fn window(&self) -> usize;
    fn features(&self) -> usize;
    fn beta(&self) -> T;
    fn ortho_in_loss(&self) -> bool {
        false
    }

    fn encode(&self, window: &Matrix<T>) -> Result<LatentGaussian<T>>;
    fn decode(&self, z: [T; LATENT_DIM]) -> Result<Matrix<T>>;

    /// Full stochastic pass: encode, reparameterize with `zeta`, decode.
    fn forward(&self, window: &Matrix<T>, zeta: [T; LATENT_DIM]) -> Result<(Matrix<T>, LatentGaussian<T>, Self::Cache)>;

    /// Parameter gradient of `L(output) + kl_weight·KL`, with `d_output = dL/d output`.
    fn backward(&self, cache: &Self::Cache, d_output: &Matrix<T>, kl_weight: T) -> Self;

    fn zeros_like(&self) -> Self;

    fn descriptor(&self) -> ArchDescriptor;
    /// Zero-initialized model matching `desc`.
    fn from_descriptor(desc: &ArchDescriptor) -> Result<Self>;

    fn check_window(&self, window: &Matrix<T>) -> Result<()> {
        if window.shape() != (self.window(), self.features()) {
            return Err(Error::dims(
                "autoencoder window",
                format!("{}x{}", self.window(), self.features()),
                format!("{}x{}", window.rows(), window.cols()),
            ));
        }
        Ok(())
    }

    /// Loss of one window with explicit noise.
    fn loss(&self, window: &Matrix<T>, zeta: [T; LATENT_DIM]) -> Result<LossParts<T>> {
        let (out, latent, _) = self.forward(window, zeta)?;
        vae_loss(window, &out, &latent, self.beta())
    }
}

/// The Bi-LSTM VAE parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmVae<T> {
    pub config: ArchConfig,
    pub encoder: [BiLstm<T>; 2],
    pub encoder_dense: Dense<T>,
    pub head: GaussianHead<T>,
    pub decoder: [BiLstm<T>; 2],
    pub decoder_dense: Dense<T>,
    pub output: Dense<T>,
}

pub struct BiLstmVaeCache<T> {
    enc: [BiLstmCache<T>; 2],
    enc_last: Vec<T>,
    enc_dense_out: Vec<T>,
    head: HeadCache<T>,
    dec: [BiLstmCache<T>; 2],
    dec2_out: Vec<Vec<T>>,
    dense_out: Vec<Vec<T>>,
}

impl<T: Real> BiLstmVae<T> {
    /// Uniform ±1/√fan_in initialization, layers drawn in traversal order.
    pub fn init<R: Rng>(config: ArchConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let [h1, h2] = config.encoder_hidden;
        let [g1, g2] = config.decoder_hidden;
        let encoder = [BiLstm::init(config.features, h1, rng), BiLstm::init(2 * h1, h2, rng)];
        let encoder_dense = Dense::init(2 * h2, config.encoder_dense, rng);
        let head = GaussianHead::init(config.encoder_dense, rng);
        let decoder = [BiLstm::init(LATENT_DIM, g1, rng), BiLstm::init(2 * g1, g2, rng)];
        let decoder_dense = Dense::init(2 * g2, config.decoder_dense, rng);
        let output = Dense::init(config.decoder_dense, config.features, rng);
        Ok(Self {
            config,
            encoder,
            encoder_dense,
            head,
            decoder,
            decoder_dense,
            output,
        })
    }

    pub fn zeros(config: ArchConfig) -> Result<Self> {
        config.validate()?;
        let [h1, h2] = config.encoder_hidden;
        let [g1, g2] = config.decoder_hidden;
        Ok(Self {
            encoder: [BiLstm::zeros(config.features, h1), BiLstm::zeros(2 * h1, h2)],
            encoder_dense: Dense::zeros(2 * h2, config.encoder_dense),
            head: GaussianHead::zeros(config.encoder_dense),
            decoder: [BiLstm::zeros(LATENT_DIM, g1), BiLstm::zeros(2 * g1, g2)],
            decoder_dense: Dense::zeros(2 * g2, config.decoder_dense),
            output: Dense::zeros(config.decoder_dense, config.features),
            config,
        })
    }

    fn rows_of(window: &Matrix<T>) -> Vec<Vec<T>> {
        window.row_iter().map(<[T]>::to_vec).collect()
    }

    fn encode_features(&self, window: &Matrix<T>) -> (Vec<T>, [BiLstmCache<T>; 2], Vec<T>) {
        let out = self.config.cell_output;
        let seq = Self::rows_of(window);
        let (o1, c1) = self.encoder[0].forward_seq_unchecked(&seq, out);
        let (o2, c2) = self.encoder[1].forward_seq_unchecked(&o1, out);
        let last = o2.last().expect("nonempty window").clone();
        let d = self.encoder_dense.forward_unchecked(&last, Activation::Tanh);
        (d, [c1, c2], last)
    }

    fn decode_inner(&self, z: [T; LATENT_DIM]) -> (Matrix<T>, [BiLstmCache<T>; 2], Vec<Vec<T>>, Vec<Vec<T>>) {
        let out = self.config.cell_output;
        let seq = vec![z.to_vec(); self.config.window];
        let (o1, c1) = self.decoder[0].forward_seq_unchecked(&seq, out);
        let (o2, c2) = self.decoder[1].forward_seq_unchecked(&o1, out);
        let dense: Vec<Vec<T>> = o2
            .iter()
            .map(|h| self.decoder_dense.forward_unchecked(h, Activation::Tanh))
            .collect();
        let mut x = Matrix::zeros(self.config.window, self.config.features);
        for (t, d) in dense.iter().enumerate() {
            let y = self.output.forward_unchecked(d, Activation::Linear);
            x.row_mut(t).copy_from_slice(&y);
        }
        (x, [c1, c2], o2, dense)
    }

    /// Backward through the decoder stack; returns `dL/dz`.
    fn decoder_backward(
        &self,
        dec: &[BiLstmCache<T>; 2],
        dec2_out: &[Vec<T>],
        dense_out: &[Vec<T>],
        d_output: &Matrix<T>,
        g: &mut Self,
    ) -> [T; LATENT_DIM] {
        let out = self.config.cell_output;
        let mut d_dec2 = Vec::with_capacity(self.config.window);
        for t in 0..self.config.window {
            let d_dense = self
                .output
                .backward(&dense_out[t], &[], Activation::Linear, d_output.row(t), &mut g.output);
            let dh = self.decoder_dense.backward(
                &dec2_out[t],
                &dense_out[t],
                Activation::Tanh,
                &d_dense,
                &mut g.decoder_dense,
            );
            d_dec2.push(dh);
        }
        let d_dec1 = self.decoder[1].backward_seq(&dec[1], &d_dec2, out, &mut g.decoder[1]);
        let d_in = self.decoder[0].backward_seq(&dec[0], &d_dec1, out, &mut g.decoder[0]);
        let mut dz = [T::zero(); LATENT_DIM];
        for row in &d_in {
            for j in 0..LATENT_DIM {
                dz[j] += row[j];
            }
        }
        dz
    }

    /// Backward from the encoder dense output to the window rows.
    fn encoder_backward(
        &self,
        enc: &[BiLstmCache<T>; 2],
        enc_last: &[T],
        enc_dense_out: &[T],
        d_dense: Vec<T>,
        g: &mut Self,
    ) -> Vec<Vec<T>> {
        let out = self.config.cell_output;
        let k = self.config.window;
        let d_last = self
            .encoder_dense
            .backward(enc_last, enc_dense_out, Activation::Tanh, &d_dense, &mut g.encoder_dense);
        let mut d_enc2 = vec![vec![T::zero(); self.encoder[1].output_size()]; k];
        d_enc2[k - 1] = d_last;
        let d_enc1 = self.encoder[1].backward_seq(&enc[1], &d_enc2, out, &mut g.encoder[1]);
        self.encoder[0].backward_seq(&enc[0], &d_enc1, out, &mut g.encoder[0])
    }

    /// `∂(w · μ) / ∂window`: sensitivity of the posterior mean to each input entry.
    pub fn mu_input_gradient(&self, window: &Matrix<T>, w: [T; LATENT_DIM]) -> Result<Matrix<T>> {
        self.check_window(window)?;
        let (d, enc, last) = self.encode_features(window);
        let mut g = self.zeros_like();
        let mu = self.head.mu.forward_unchecked(&d, Activation::Linear);
        let d_dense = self.head.mu.backward(&d, &mu, Activation::Linear, &w, &mut g.head.mu);
        let rows = self.encoder_backward(&enc, &last, &d, d_dense, &mut g);
        Matrix::from_rows(&rows)
    }

    /// Reconstruction MSE of `decode(z)` against `target` and its gradient w.r.t. `z`.
    pub fn decode_mse_gradient(&self, z: [T; LATENT_DIM], target: &Matrix<T>) -> Result<(T, [T; LATENT_DIM])> {
        self.check_window(target)?;
        let (x, dec, dec2_out, dense_out) = self.decode_inner(z);
        let mse = mean_squared_error(target, &x);
        let mut g = self.zeros_like();
        let dz = self.decoder_backward(&dec, &dec2_out, &dense_out, &mse_gradient(target, &x), &mut g);
        Ok((mse, dz))
    }
}

impl<T: Real> Parameters<T> for BiLstmVae<T> {
    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut v = Vec::new();
        for l in &self.encoder {
            v.extend(l.tensors());
        }
        v.extend(self.encoder_dense.tensors());
        v.extend(self.head.tensors());
        for l in &self.decoder {
            v.extend(l.tensors());
        }
        v.extend(self.decoder_dense.tensors());
        v.extend(self.output.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = Vec::new();
        for l in &mut self.encoder {
            v.extend(l.tensors_mut());
        }
        v.extend(self.encoder_dense.tensors_mut());
        v.extend(self.head.tensors_mut());
        for l in &mut self.decoder {
            v.extend(l.tensors_mut());
        }
        v.extend(self.decoder_dense.tensors_mut());
        v.extend(self.output.tensors_mut());
        v
    }
}

/// Checkpoint tags of the two autoencoder kinds.
pub const KIND_BILSTM: u32 = 1;
pub const KIND_MLP: u32 = 2;

impl<T: Real> Autoencoder<T> for BiLstmVae<T> {
    type Cache = BiLstmVaeCache<T>;

    fn window(&self) -> usize {
        self.config.window
    }

    fn features(&self) -> usize {
        self.config.features
    }

    fn beta(&self) -> T {
        lit(self.config.beta)
    }

    fn ortho_in_loss(&self) -> bool {
        self.config.ortho_in_loss
    }

    fn encode(&self, window: &Matrix<T>) -> Result<LatentGaussian<T>> {
        self.check_window(window)?;
        let (d, ..) = self.encode_features(window);
        Ok(self.head.encode(&d))
    }

    fn decode(&self, z: [T; LATENT_DIM]) -> Result<Matrix<T>> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent input to decoder".into()));
        }
        Ok(self.decode_inner(z).0)
    }

    fn forward(&self, window: &Matrix<T>, zeta: [T; LATENT_DIM]) -> Result<(Matrix<T>, LatentGaussian<T>, Self::Cache)> {
        self.check_window(window)?;
        let (d, enc, enc_last) = self.encode_features(window);
        let (z, head) = self.head.forward(&d, zeta, self.config.noise_scale);
        let latent = head.latent;
        let (x, dec, dec2_out, dense_out) = self.decode_inner(z);
        Ok((
            x,
            latent,
            BiLstmVaeCache {
                enc,
                enc_last,
                enc_dense_out: d,
                head,
                dec,
                dec2_out,
                dense_out,
            },
        ))
    }

    fn backward(&self, cache: &Self::Cache, d_output: &Matrix<T>, kl_weight: T) -> Self {
        let mut g = self.zeros_like();
        let dz = self.decoder_backward(&cache.dec, &cache.dec2_out, &cache.dense_out, d_output, &mut g);
        let d_dense = self.head.backward(&cache.head, dz, kl_weight, &mut g.head);
        self.encoder_backward(&cache.enc, &cache.enc_last, &cache.enc_dense_out, d_dense, &mut g);
        g
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.config.clone()).expect("validated config")
    }

    fn descriptor(&self) -> ArchDescriptor {
        let c = &self.config;
        ArchDescriptor {
            kind: KIND_BILSTM,
            ints: vec![
                c.features as u32,
                c.window as u32,
                c.encoder_hidden[0] as u32,
                c.encoder_hidden[1] as u32,
                c.encoder_dense as u32,
                c.decoder_hidden[0] as u32,
                c.decoder_hidden[1] as u32,
                c.decoder_dense as u32,
                (c.noise_scale == NoiseScale::Variance) as u32,
                (c.cell_output == CellOutput::PreviousMemory) as u32,
                c.ortho_in_loss as u32,
            ],
            reals: vec![c.beta],
        }
    }

    fn from_descriptor(desc: &ArchDescriptor) -> Result<Self> {
        if desc.kind != KIND_BILSTM || desc.ints.len() != 11 || desc.reals.len() != 1 {
            return Err(Error::ArchitectureMismatch(format!(
                "descriptor kind {} with {} ints is not a Bi-LSTM VAE",
                desc.kind,
                desc.ints.len()
            )));
        }
        let i = |n: usize| desc.ints[n] as usize;
        Self::zeros(ArchConfig {
            features: i(0),
            window: i(1),
            encoder_hidden: [i(2), i(3)],
            encoder_dense: i(4),
            decoder_hidden: [i(5), i(6)],
            decoder_dense: i(7),
            beta: desc.reals[0],
            noise_scale: if i(8) == 1 { NoiseScale::Variance } else { NoiseScale::StdDev },
            cell_output: if i(9) == 1 { CellOutput::PreviousMemory } else { CellOutput::CurrentMemory },
            ortho_in_loss: i(10) == 1,
        })
    }
}

/// Spatial basis `T` and singular values `Σ` of a batch of flattened decoder outputs.
#[derive(Debug, Clone)]
pub struct OrthoState<T> {
    /// `B × r`, orthonormal columns.
    pub basis: Matrix<T>,
    pub singular_values: Vec<T>,
    pub rank: usize,
}

impl<T: Real> OrthoState<T> {
    pub fn is_degenerate(&self) -> bool {
        self.rank == 0
    }

    /// `(TΣ)⁺ x` for a `B × n` matrix `x`.
    pub fn project(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.rows() != self.basis.rows() {
            return Err(Error::dims("OrthoState::project", self.basis.rows(), x.rows()));
        }
        let mut out = Matrix::zeros(self.rank, x.cols());
        for k in 0..self.rank {
            let inv = T::one() / self.singular_values[k];
            for b in 0..x.rows() {
                let w = self.basis[(b, k)] * inv;
                if w == T::zero() {
                    continue;
                }
                for (o, &v) in out.row_mut(k).iter_mut().zip(x.row(b)) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// `((TΣ)⁺)ᵀ y` for an `r × n` matrix `y`.
    pub fn project_transpose(&self, y: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(self.basis.rows(), y.cols());
        for k in 0..self.rank {
            let inv = T::one() / self.singular_values[k];
            for b in 0..self.basis.rows() {
                let w = self.basis[(b, k)] * inv;
                for (o, &v) in out.row_mut(b).iter_mut().zip(y.row(k)) {
                    *o += w * v;
                }
            }
        }
        out
    }
}

/// Relative cutoff below which singular values are discarded.
pub const ORTHO_RANK_TOL: f64 = 1e-10;

/// Transforms a `B × n` batch into `X″ = (TΣ)⁺ X′` with orthonormal rows.
pub fn orthogonalize<T: Real>(batch_outputs: &Matrix<T>) -> Result<(Matrix<T>, OrthoState<T>)> {
    if batch_outputs.rows() == 0 {
        return Err(Error::Empty("orthogonalize batch"));
    }
    let d = svd(batch_outputs);
    let rank = d.rank(lit(ORTHO_RANK_TOL));
    let basis = Matrix::from_fn(batch_outputs.rows(), rank, |r, c| d.u[(r, c)]);
    let state = OrthoState {
        basis,
        singular_values: d.s[..rank].to_vec(),
        rank,
    };
    let projected = state.project(batch_outputs)?;
    Ok((projected, state))
}

/// Reconstruction MSE between orthogonalized outputs and targets, both
/// mapped through the basis of the target batch. Returns the MSE and the
/// gradient w.r.t. every output row (flattened window).
pub fn ortho_batch_mse<T: Real>(targets: &Matrix<T>, outputs: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    if targets.shape() != outputs.shape() {
        return Err(Error::dims("ortho_batch_mse", format!("{:?}", targets.shape()), format!("{:?}", outputs.shape())));
    }
    let (whitened, state) = orthogonalize(targets)?;
    if state.is_degenerate() {
        return Err(Error::NonFinite("degenerate target batch in orthogonal loss".into()));
    }
    let projected = state.project(outputs)?;
    let n = lit::<T>((projected.rows() * projected.cols()).max(1) as f64);
    let mut diff = projected.clone();
    let mut mse = T::zero();
    for (d, &w) in diff.as_mut_slice().iter_mut().zip(whitened.as_slice()) {
        *d -= w;
        mse += *d * *d;
    }
    mse /= n;
    diff.scale(lit::<T>(2.0) / n);
    Ok((mse, state.project_transpose(&diff)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> BiLstmVae<f64> {
        let mut cfg = ArchConfig::standard(6, 3);
        cfg.encoder_hidden = [6, 4];
        cfg.encoder_dense = 8;
        cfg.decoder_hidden = [4, 6];
        cfg.decoder_dense = 8;
        BiLstmVae::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn window(seed: u64) -> Matrix<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(3, 6, |_, _| r.random_range(-1.0..1.0))
    }

    #[test]
    fn encode_is_deterministic_with_two_dims() {
        let m = tiny();
        let w = window(2);
        let a = m.encode(&w).unwrap();
        let b = m.encode(&w.clone()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mu.len(), 2);
        assert!(m.encode(&Matrix::zeros(4, 6)).is_err());
    }

    #[test]
    fn decode_shape_and_determinism() {
        let m = tiny();
        let x = m.decode([0.3, -0.2]).unwrap();
        assert_eq!(x.shape(), (3, 6));
        assert_eq!(x, m.decode([0.3, -0.2]).unwrap());
        assert!(m.decode([f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn forward_with_zero_noise_decodes_mean() {
        let m = tiny();
        let w = window(3);
        let (x, g, _) = m.forward(&w, [0.0, 0.0]).unwrap();
        assert_eq!(x, m.decode(g.mu).unwrap());
    }

    #[test]
    fn reparameterization_cases() {
        let g = LatentGaussian { mu: [0.5, -1.0], logvar: [1.3, -0.4] };
        for s in [NoiseScale::StdDev, NoiseScale::Variance] {
            assert_eq!(reparameterize(&g, [0.0, 0.0], s), g.mu);
        }
        let g0 = LatentGaussian { mu: [0.5, -1.0], logvar: [0.0, 0.0] };
        for s in [NoiseScale::StdDev, NoiseScale::Variance] {
            assert_eq!(reparameterize(&g0, [0.25, 2.0], s), [0.75, 1.0]);
        }
        let z = reparameterize(&g, [1.0, 1.0], NoiseScale::Variance);
        assert!((z[0] - (0.5 + 1.3f64.exp())).abs() < 1e-12);
    }

    #[test]
    fn kl_cases() {
        let g = LatentGaussian { mu: [1.0, 0.0], logvar: [0.0, 0.0] };
        assert_eq!(kl_divergence(&g), 0.5);
        let z = LatentGaussian { mu: [0.0, 0.0], logvar: [0.0, 0.0] };
        assert_eq!(kl_divergence(&z), 0.0);
        let x = Matrix::from_fn(2, 2, |r, c| (r + c) as f64);
        let parts = vae_loss(&x, &x, &z, 1.0).unwrap();
        assert_eq!(parts.total, 0.0);
        let y = Matrix::from_fn(2, 2, |r, _| r as f64);
        let p0 = vae_loss(&x, &y, &g, 0.0).unwrap();
        assert_eq!(p0.total, p0.mse);
    }

    #[test]
    fn orthogonalize_rank_deflation_and_degenerate() {
        let x = Matrix::from_fn(4, 5, |r, c| (r as f64 + 1.0) * (c as f64 - 2.0));
        let (xo, st) = orthogonalize(&x).unwrap();
        assert_eq!(st.rank, 1);
        assert_eq!(xo.rows(), 1);
        let n: f64 = xo.row(0).iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-10);
        let (z, st0) = orthogonalize(&Matrix::<f64>::zeros(3, 4)).unwrap();
        assert!(st0.is_degenerate());
        assert_eq!(z.rows(), 0);
    }

    #[test]
    fn ortho_loss_vanishes_at_target() {
        let x = Matrix::from_fn(4, 7, |r, c| ((r * 3 + c) % 5) as f64 - 2.0 + 0.1 * r as f64);
        let (mse, grad) = ortho_batch_mse(&x, &x).unwrap();
        assert!(mse < 1e-20);
        assert!(grad.as_slice().iter().all(|v| v.abs() < 1e-10));
    }
}
