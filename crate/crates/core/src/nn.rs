//! Dense layers, LSTM cells, bidirectional LSTM layers and Adam, with
//! hand-written reverse-mode gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{lit, sigmoid, Real};

/// Borrowed view of one parameter tensor.
#[derive(Debug, Clone)]
pub struct TensorView<'a, T> {
    pub dims: Vec<usize>,
    pub data: &'a [T],
}

/// A fixed, ordered collection of parameter tensors.
///
/// The traversal order of `tensors` and `tensors_mut` must agree; it is the
/// order used by the optimizer and by checkpoints.
pub trait Parameters<T: Real> {
    fn tensors(&self) -> Vec<TensorView<'_, T>>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// `self += s * other`
    fn add_scaled(&mut self, other: &Self, s: T)
    where
        Self: Sized,
    {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, &v) in dst.iter_mut().zip(src.data) {
                *d += s * v;
            }
        }
    }

    fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn global_norm(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Flattened copy of every parameter in traversal order.
    fn flatten(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }
}

/// Rescales `grads` so that its global norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm<T: Real, P: Parameters<T>>(grads: &mut P, max_norm: T) -> T {
    let norm = grads.global_norm();
    if norm > max_norm && norm > T::zero() {
        grads.scale(max_norm / norm);
    }
    norm
}

pub(crate) fn uniform_matrix<T: Real, R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| lit(rng.random_range(-bound..=bound)))
}

pub(crate) fn uniform_vec<T: Real, R: Rng>(n: usize, bound: f64, rng: &mut R) -> Vec<T> {
    (0..n).map(|_| lit(rng.random_range(-bound..=bound))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    pub fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

/// Fully connected layer `y = act(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![T::zero(); output],
        }
    }

    /// Uniform in ±1/√fan_in.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Self {
            weight: uniform_matrix(output, input, bound, rng),
            bias: uniform_vec(output, bound, rng),
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[T], act: Activation) -> Result<Vec<T>> {
        if x.len() != self.input_size() {
            return Err(Error::dims("Dense::forward", self.input_size(), x.len()));
        }
        Ok(self.forward_unchecked(x, act))
    }

    pub(crate) fn forward_unchecked(&self, x: &[T], act: Activation) -> Vec<T> {
        let mut y = self.bias.clone();
        self.weight.matvec_acc(x, &mut y);
        if act != Activation::Linear {
            y.iter_mut().for_each(|v| *v = act.apply(*v));
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    /// `y` is the forward output; it is not read for linear layers.
    pub fn backward(&self, x: &[T], y: &[T], act: Activation, dy: &[T], grad: &mut Dense<T>) -> Vec<T> {
        let dz: Vec<T> = if act == Activation::Linear {
            dy.to_vec()
        } else {
            dy.iter()
                .zip(y)
                .map(|(&d, &yv)| d * act.derivative_from_output(yv))
                .collect()
        };
        grad.weight.add_outer(&dz, x);
        for (b, &d) in grad.bias.iter_mut().zip(&dz) {
            *b += d;
        }
        let mut dx = vec![T::zero(); x.len()];
        self.weight.matvec_t_acc(&dz, &mut dx);
        dx
    }
}

impl<T: Real> Parameters<T> for Dense<T> {
    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        vec![
            TensorView {
                dims: vec![self.weight.rows(), self.weight.cols()],
                data: self.weight.as_slice(),
            },
            TensorView {
                dims: vec![self.bias.len()],
                data: &self.bias,
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.weight.as_mut_slice(), &mut self.bias]
    }
}

/// `activation(W x + b)`.
pub fn dense_forward<T: Real>(x: &[T], p: &Dense<T>, activation: Activation) -> Result<Vec<T>> {
    p.forward(x, activation)
}

/// Which memory cell feeds the hidden output `h_t = o_t ⊙ tanh(C)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellOutput {
    /// `tanh(C_t)`, the standard LSTM.
    #[default]
    CurrentMemory,
    /// `tanh(C_{t-1})`, the variant with the previous memory cell.
    PreviousMemory,
}

/// Gate rows are stacked in the order forget, input, output, cell candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Output = 2,
    Cell = 3,
}

/// LSTM cell parameters with the four gates stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell<T> {
    /// `4H × in`
    pub input_weight: Matrix<T>,
    /// `4H × H`
    pub recurrent_weight: Matrix<T>,
    /// `4H`
    pub bias: Vec<T>,
    hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
        }
    }
}

/// Values retained from one forward step for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    /// post-activation gates `[f, i, o, g]`
    gates: Vec<T>,
    /// `tanh` of whichever memory cell feeds `h`
    tanh_c: Vec<T>,
    pub state: LstmState<T>,
}

impl<T: Real> LstmCell<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input_weight: Matrix::zeros(4 * hidden, input),
            recurrent_weight: Matrix::zeros(4 * hidden, hidden),
            bias: vec![T::zero(); 4 * hidden],
            hidden,
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((input + hidden).max(1) as f64).sqrt();
        Self {
            input_weight: uniform_matrix(4 * hidden, input, bound, rng),
            recurrent_weight: uniform_matrix(4 * hidden, hidden, bound, rng),
            bias: uniform_vec(4 * hidden, bound, rng),
            hidden,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_weight.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    /// Rows of the stacked tensors belonging to `gate`.
    pub fn gate_rows(&self, gate: Gate) -> std::ops::Range<usize> {
        let g = gate as usize;
        g * self.hidden..(g + 1) * self.hidden
    }

    pub fn step(&self, x: &[T], prev: &LstmState<T>, output: CellOutput) -> Result<LstmStepCache<T>> {
        if x.len() != self.input_size() {
            return Err(Error::dims("LstmCell::step input", self.input_size(), x.len()));
        }
        if prev.h.len() != self.hidden || prev.c.len() != self.hidden {
            return Err(Error::dims("LstmCell::step state", self.hidden, prev.h.len()));
        }
        Ok(self.step_unchecked(x, prev, output))
    }

    pub(crate) fn step_unchecked(&self, x: &[T], prev: &LstmState<T>, output: CellOutput) -> LstmStepCache<T> {
        let h = self.hidden;
        let mut pre = self.bias.clone();
        self.input_weight.matvec_acc(x, &mut pre);
        self.recurrent_weight.matvec_acc(&prev.h, &mut pre);
        let mut gates = pre;
        for v in &mut gates[..3 * h] {
            *v = sigmoid(*v);
        }
        for v in &mut gates[3 * h..] {
            *v = v.tanh();
        }
        let mut c = vec![T::zero(); h];
        let mut hv = vec![T::zero(); h];
        let mut tanh_c = vec![T::zero(); h];
        for j in 0..h {
            let (f, i, o, g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            c[j] = prev.c[j] * f + i * g;
            tanh_c[j] = match output {
                CellOutput::CurrentMemory => c[j].tanh(),
                CellOutput::PreviousMemory => prev.c[j].tanh(),
            };
            hv[j] = o * tanh_c[j];
        }
        LstmStepCache {
            x: x.to_vec(),
            h_prev: prev.h.clone(),
            c_prev: prev.c.clone(),
            gates,
            tanh_c,
            state: LstmState { h: hv, c },
        }
    }

    /// Backward through one step. `dh` and `dc` are the total upstream
    /// gradients w.r.t. this step's `h_t` and `C_t`. Returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(
        &self,
        cache: &LstmStepCache<T>,
        dh: &[T],
        dc: &[T],
        output: CellOutput,
        grad: &mut LstmCell<T>,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let h = self.hidden;
        let g = &cache.gates;
        let mut dpre = vec![T::zero(); 4 * h];
        let mut dc_prev = vec![T::zero(); h];
        for j in 0..h {
            let (f, i, o, cand) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let th = cache.tanh_c[j];
            let d_o = dh[j] * th;
            let d_tanh = dh[j] * o * (T::one() - th * th);
            let mut dcj = dc[j];
            match output {
                CellOutput::CurrentMemory => dcj += d_tanh,
                CellOutput::PreviousMemory => dc_prev[j] += d_tanh,
            }
            let d_f = dcj * cache.c_prev[j];
            let d_i = dcj * cand;
            let d_g = dcj * i;
            dc_prev[j] += dcj * f;
            dpre[j] = d_f * f * (T::one() - f);
            dpre[h + j] = d_i * i * (T::one() - i);
            dpre[2 * h + j] = d_o * o * (T::one() - o);
            dpre[3 * h + j] = d_g * (T::one() - cand * cand);
        }
        grad.input_weight.add_outer(&dpre, &cache.x);
        grad.recurrent_weight.add_outer(&dpre, &cache.h_prev);
        for (b, &d) in grad.bias.iter_mut().zip(&dpre) {
            *b += d;
        }
        let mut dx = vec![T::zero(); cache.x.len()];
        self.input_weight.matvec_t_acc(&dpre, &mut dx);
        let mut dh_prev = vec![T::zero(); h];
        self.recurrent_weight.matvec_t_acc(&dpre, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }
}

impl<T: Real> Parameters<T> for LstmCell<T> {
    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        vec![
            TensorView {
                dims: vec![self.input_weight.rows(), self.input_weight.cols()],
                data: self.input_weight.as_slice(),
            },
            TensorView {
                dims: vec![self.recurrent_weight.rows(), self.recurrent_weight.cols()],
                data: self.recurrent_weight.as_slice(),
            },
            TensorView {
                dims: vec![self.bias.len()],
                data: &self.bias,
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.input_weight.as_mut_slice(),
            self.recurrent_weight.as_mut_slice(),
            &mut self.bias,
        ]
    }
}

/// One LSTM step with the standard output form.
pub fn lstm_cell_step<T: Real>(x_t: &[T], prev: &LstmState<T>, p: &LstmCell<T>) -> Result<LstmState<T>> {
    Ok(p.step(x_t, prev, CellOutput::CurrentMemory)?.state)
}

/// Bidirectional LSTM layer; outputs are `[h_forward, h_backward]` per step.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm<T> {
    pub forward: LstmCell<T>,
    pub backward: LstmCell<T>,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache<T> {
    fwd: Vec<LstmStepCache<T>>,
    /// indexed by time, not by processing order
    bwd: Vec<LstmStepCache<T>>,
}

impl<T: Real> BiLstm<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            forward: LstmCell::zeros(input, hidden),
            backward: LstmCell::zeros(input, hidden),
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            forward: LstmCell::init(input, hidden, rng),
            backward: LstmCell::init(input, hidden, rng),
        }
    }

    pub fn input_size(&self) -> usize {
        self.forward.input_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn output_size(&self) -> usize {
        2 * self.hidden_size()
    }

    pub fn forward_seq(&self, seq: &[Vec<T>], output: CellOutput) -> Result<(Vec<Vec<T>>, BiLstmCache<T>)> {
        if seq.is_empty() {
            return Err(Error::Empty("bidirectional LSTM input sequence"));
        }
        if let Some(x) = seq.iter().find(|x| x.len() != self.input_size()) {
            return Err(Error::dims("BiLstm::forward_seq", self.input_size(), x.len()));
        }
        if self.backward.input_size() != self.input_size() || self.backward.hidden_size() != self.hidden_size() {
            return Err(Error::dims(
                "BiLstm directions",
                format!("{}x{}", self.input_size(), self.hidden_size()),
                format!("{}x{}", self.backward.input_size(), self.backward.hidden_size()),
            ));
        }
        Ok(self.forward_seq_unchecked(seq, output))
    }

    pub(crate) fn forward_seq_unchecked(&self, seq: &[Vec<T>], output: CellOutput) -> (Vec<Vec<T>>, BiLstmCache<T>) {
        let h = self.hidden_size();
        let k = seq.len();
        let mut fwd = Vec::with_capacity(k);
        let mut state = LstmState::zeros(h);
        for x in seq {
            let c = self.forward.step_unchecked(x, &state, output);
            state = c.state.clone();
            fwd.push(c);
        }
        let mut bwd_rev = Vec::with_capacity(k);
        let mut state = LstmState::zeros(h);
        for x in seq.iter().rev() {
            let c = self.backward.step_unchecked(x, &state, output);
            state = c.state.clone();
            bwd_rev.push(c);
        }
        bwd_rev.reverse();
        let out = (0..k)
            .map(|t| {
                let mut v = Vec::with_capacity(2 * h);
                v.extend_from_slice(&fwd[t].state.h);
                v.extend_from_slice(&bwd_rev[t].state.h);
                v
            })
            .collect();
        (out, BiLstmCache { fwd, bwd: bwd_rev })
    }

    /// Backpropagation through time. `d_out[t]` is `dL/d output_t`; returns `dL/d input_t`.
    pub fn backward_seq(
        &self,
        cache: &BiLstmCache<T>,
        d_out: &[Vec<T>],
        output: CellOutput,
        grad: &mut BiLstm<T>,
    ) -> Vec<Vec<T>> {
        let h = self.hidden_size();
        let k = cache.fwd.len();
        let mut dx = vec![vec![T::zero(); self.input_size()]; k];
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        for t in (0..k).rev() {
            let dh: Vec<T> = d_out[t][..h].iter().zip(&dh_next).map(|(&a, &b)| a + b).collect();
            let (dxt, dhp, dcp) = self.forward.step_backward(&cache.fwd[t], &dh, &dc_next, output, &mut grad.forward);
            for (a, b) in dx[t].iter_mut().zip(dxt) {
                *a += b;
            }
            dh_next = dhp;
            dc_next = dcp;
        }
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        for t in 0..k {
            let dh: Vec<T> = d_out[t][h..].iter().zip(&dh_next).map(|(&a, &b)| a + b).collect();
            let (dxt, dhp, dcp) = self.backward.step_backward(&cache.bwd[t], &dh, &dc_next, output, &mut grad.backward);
            for (a, b) in dx[t].iter_mut().zip(dxt) {
                *a += b;
            }
            dh_next = dhp;
            dc_next = dcp;
        }
        dx
    }
}

impl<T: Real> Parameters<T> for BiLstm<T> {
    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut v = self.forward.tensors();
        v.extend(self.backward.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.forward.tensors_mut();
        v.extend(self.backward.tensors_mut());
        v
    }
}

/// Runs `seq` forward through `fwd` and backward through `bwd` from zero states.
pub fn bilstm_layer_forward<T: Real>(seq: &[Vec<T>], fwd: &LstmCell<T>, bwd: &LstmCell<T>) -> Result<Vec<Vec<T>>> {
    let layer = BiLstm {
        forward: fwd.clone(),
        backward: bwd.clone(),
    };
    Ok(layer.forward_seq(seq, CellOutput::CurrentMemory)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for a [`Parameters`] collection.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<P: Parameters<T>>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        Self {
            config,
            first_moment: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    /// Applies one update; leaves everything untouched if `grads` is not finite.
    pub fn update<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient passed to Adam".into()));
        }
        let gts = grads.tensors();
        if gts.len() != self.first_moment.len() || gts.iter().zip(&self.first_moment).any(|(g, m)| g.data.len() != m.len()) {
            return Err(Error::dims("AdamState::update", "moment shapes", "gradient shapes"));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1: T = lit(self.config.beta1);
        let b2: T = lit(self.config.beta2);
        let lr: T = lit(self.config.lr);
        let eps: T = lit(self.config.eps);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(gts)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// One Adam step on `params` with gradient `grads`.
pub fn adam_step<T: Real, P: Parameters<T>>(params: &mut P, grads: &P, state: &mut AdamState<T>) -> Result<()> {
    state.update(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn zero_cell_is_fixed_point() {
        let cell = LstmCell::<f64>::zeros(3, 2);
        let s = lstm_cell_step(&[0.3, -1.0, 2.0], &LstmState::zeros(2), &cell).unwrap();
        assert_eq!(s.h, vec![0.0, 0.0]);
        assert_eq!(s.c, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_preserves_memory() {
        let mut cell = LstmCell::<f64>::zeros(1, 1);
        let r = cell.gate_rows(Gate::Forget);
        cell.bias[r.start] = 30.0;
        let prev = LstmState { h: vec![0.0], c: vec![0.7] };
        let s = lstm_cell_step(&[0.0], &prev, &cell).unwrap();
        assert!((s.c[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn cell_output_is_bounded() {
        let mut r = rng();
        let cell = LstmCell::<f64>::init(3, 4, &mut r);
        let mut st = LstmState::zeros(4);
        for t in 0..50 {
            let x = [10.0 * (t as f64).sin(), -5.0, 3.0 * t as f64];
            st = lstm_cell_step(&x, &st, &cell).unwrap();
            assert!(st.h.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn dimension_errors() {
        let cell = LstmCell::<f64>::zeros(3, 2);
        assert!(lstm_cell_step(&[1.0], &LstmState::zeros(2), &cell).is_err());
        let d = Dense::<f64>::zeros(3, 2);
        assert!(dense_forward(&[1.0, 2.0], &d, Activation::Linear).is_err());
        assert!(bilstm_layer_forward::<f64>(&[], &cell, &cell).is_err());
    }

    #[test]
    fn dense_identity_and_bias() {
        let mut d = Dense::<f64>::zeros(3, 3);
        d.weight = Matrix::identity(3);
        assert_eq!(dense_forward(&[1.0, -2.0, 3.0], &d, Activation::Linear).unwrap(), vec![1.0, -2.0, 3.0]);
        let mut d = Dense::<f64>::zeros(2, 2);
        d.bias = vec![0.5, -1.5];
        let y = dense_forward(&[7.0, 8.0], &d, Activation::Tanh).unwrap();
        assert_eq!(y, vec![0.5f64.tanh(), (-1.5f64).tanh()]);
    }

    #[test]
    fn bilstm_shapes_and_single_step_symmetry() {
        let mut r = rng();
        let cell = LstmCell::<f64>::init(3, 4, &mut r);
        let out = bilstm_layer_forward(&[vec![0.1, 0.2, 0.3]], &cell, &cell).unwrap();
        assert_eq!(out[0].len(), 8);
        assert_eq!(out[0][..4], out[0][4..]);
    }

    #[test]
    fn bilstm_reversal_equivariance() {
        let mut r = rng();
        let f = LstmCell::<f64>::init(3, 2, &mut r);
        let b = LstmCell::<f64>::init(3, 2, &mut r);
        let seq: Vec<Vec<f64>> = (0..4).map(|t| vec![t as f64 * 0.3, -0.2 * t as f64, 0.5]).collect();
        let out = bilstm_layer_forward(&seq, &f, &b).unwrap();
        let rev: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
        let out_rev = bilstm_layer_forward(&rev, &b, &f).unwrap();
        for t in 0..4 {
            let o = &out[t];
            let r = &out_rev[3 - t];
            assert_eq!(&o[..2], &r[2..]);
            assert_eq!(&o[2..], &r[..2]);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut r = rng();
        let mut p = Dense::<f64>::init(3, 2, &mut r);
        let orig = p.clone();
        let g = Dense::<f64>::zeros(3, 2);
        let mut st = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p, orig);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = Dense::<f64>::zeros(2, 1);
        let mut g = Dense::<f64>::zeros(2, 1);
        g.weight = Matrix::from_vec(1, 2, vec![0.3, -7.0]).unwrap();
        g.bias = vec![1e-3];
        let mut st = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut st).unwrap();
        // bias-corrected: lr * g / (|g| + eps)
        for (&pv, &gv) in p.flatten().iter().zip(&g.flatten()) {
            let expect = -1e-3 * gv / (gv.abs() + 1e-8);
            assert!((pv - expect).abs() < 1e-15, "{pv} vs {expect}");
        }
    }

    fn steady_update(scale: f64) -> f64 {
        let mut p = Dense::<f64>::zeros(1, 1);
        let mut g = Dense::<f64>::zeros(1, 1);
        g.weight[(0, 0)] = 0.25 * scale;
        let mut st = AdamState::new(&p, AdamConfig::default());
        let mut last = 0.0;
        for _ in 0..1000 {
            let before = p.weight[(0, 0)];
            adam_step(&mut p, &g, &mut st).unwrap();
            last = (p.weight[(0, 0)] - before).abs();
        }
        last
    }

    #[test]
    fn adam_constant_gradient_converges_to_lr() {
        let u = steady_update(1.0);
        assert!((u - 1e-3).abs() / 1e-3 < 0.01, "{u}");
        let u10 = steady_update(10.0);
        assert!((u10 - u).abs() / u < 0.01);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = Dense::<f64>::zeros(1, 1);
        let mut g = Dense::<f64>::zeros(1, 1);
        g.bias[0] = f64::NAN;
        let mut st = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &g, &mut st).is_err());
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = Dense::<f64>::zeros(2, 1);
        g.weight = Matrix::from_vec(1, 2, vec![30.0, 40.0]).unwrap();
        let n = clip_global_norm(&mut g, 5.0);
        assert_eq!(n, 50.0);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let mut r = rng();
        let layer = BiLstm::<f32>::init(3, 2, &mut r);
        let seq = vec![vec![0.1f32, 0.2, 0.3]; 5];
        let (out, _) = layer.forward_seq(&seq, CellOutput::CurrentMemory).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().flatten().all(|v| v.is_finite()));
    }
}
