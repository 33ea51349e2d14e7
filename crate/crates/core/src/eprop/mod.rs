//! Online e-prop training of a recurrent LIF network with a leaky readout.
//!
//! One time step proceeds as:
//!
//! 1. eligibility states `f` low-pass the presynaptic spikes entering this step;
//! 2. membrane update `V' = e^{-1/τ_m}·V + Σ_{i≠j} w^h_ij s^h_i − w^h_jj s^h_j + Σ_i w^i_ij s^i_i`;
//!    a neuron spikes when `V' ≥ V_th` and is then reduced by `V_th`;
//! 3. readout `y_k ← κ·y_k + Σ_j w^o_jk s_j` on the spikes just emitted;
//! 4. learning signal `L_j = Σ_k w^o_jk (y_k − y*_k)` (or softmax(y) − y*);
//! 5. pseudo-gradient `ψ_j = (β/V_th)·max(0, 1 − |V'_j/V_th − 1|)·L_j`, evaluated on
//!    the membrane value whose threshold test produced the spike;
//! 6. `e_Σ += f_pre·ψ_post` per synapse.
//!
//! Weights only change at the end of a dataframe, by descent: `w ← w − η·e_Σ`.

pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

/// Dense row-major matrix; rows index the presynaptic side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Zero-mean Gaussian entries with std `scale/√rows`.
    pub fn gaussian(rows: usize, cols: usize, scale: f64, r: &mut SimRng) -> Self {
        let std = scale / (rows as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| rng::normal(r, 0.0, std))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out_j += Σ_i pre_i · self_ij`, skipping silent rows.
    pub fn accumulate_transposed(&self, pre: &[f64], out: &mut [f64]) {
        for (i, &x) in pre.iter().enumerate() {
            if x != 0.0 {
                for (o, w) in out.iter_mut().zip(self.row(i)) {
                    *o += x * w;
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorSignal {
    /// `y − y*`
    Difference,
    /// `softmax(y) − y*`
    #[default]
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifParams {
    pub v_th: f64,
    /// Membrane time constant in steps.
    pub tau_m: f64,
    pub beta: f64,
    /// Applied to the raw frame sums; with `tau_m = 200` the input traces
    /// reach tens, so useful values are far below 0.1.
    pub eta: f64,
    /// Learning rate of the readout weights; defaults to `eta`.
    pub eta_out: Option<f64>,
    /// Step length in ms (informational; `tau_m` is already in steps).
    pub dt_ms: f64,
    /// Readout leak per step; defaults to the membrane decay `e^{-1/τ_m}`.
    pub readout_decay: Option<f64>,
    pub error_signal: ErrorSignal,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            v_th: 0.615,
            tau_m: 200.0,
            beta: 0.3,
            eta: 5e-4,
            eta_out: None,
            dt_ms: 1.0,
            readout_decay: None,
            error_signal: ErrorSignal::Softmax,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_th > 0.0 && self.tau_m > 0.0 && self.beta > 0.0 && self.eta > 0.0) {
            return Err(Error::Param(
                "lif: v_th, tau_m, beta and eta must be positive".into(),
            ));
        }
        if self.eta_out.is_some_and(|e| !(e > 0.0)) {
            return Err(Error::Param("lif: eta_out must be positive".into()));
        }
        if self.readout_decay.is_some_and(|k| !(0.0..=1.0).contains(&k)) {
            return Err(Error::Param("lif: readout_decay must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn decay(&self) -> f64 {
        (-1.0 / self.tau_m).exp()
    }

    pub fn readout_kappa(&self) -> f64 {
        self.readout_decay.unwrap_or_else(|| self.decay())
    }

    pub fn eta_readout(&self) -> f64 {
        self.eta_out.unwrap_or(self.eta)
    }

    /// Pseudo-derivative window `(β/V_th)·max(0, 1 − |v/V_th − 1|)`.
    #[inline]
    pub fn pseudo_derivative(&self, v: f64) -> f64 {
        self.beta / self.v_th * (1.0 - (v / self.v_th - 1.0).abs()).max(0.0)
    }
}

/// Membrane update and threshold test for one step. `drive` already holds
/// the synaptic input; returns the pre-reset potentials and writes the
/// emitted spikes.
pub fn lif_step(v: &mut [f64], drive: &[f64], spikes: &mut [f64], p: &LifParams) -> Vec<f64> {
    let decay = p.decay();
    let mut pre = Vec::with_capacity(v.len());
    for ((vj, &d), s) in v.iter_mut().zip(drive).zip(spikes.iter_mut()) {
        let vp = decay * *vj + d;
        pre.push(vp);
        if vp >= p.v_th {
            *s = 1.0;
            *vj = vp - p.v_th;
        } else {
            *s = 0.0;
            *vj = vp;
        }
    }
    pre
}

/// Membrane input: input current plus recurrent current, with the
/// self-connection entering with a negative sign.
pub fn synaptic_drive(
    w_in: &Matrix,
    input: &[f64],
    w_rec: Option<&Matrix>,
    hidden_prev: &[f64],
) -> Vec<f64> {
    let mut drive = vec![0.0; w_in.cols];
    w_in.accumulate_transposed(input, &mut drive);
    if let Some(w) = w_rec {
        w.accumulate_transposed(hidden_prev, &mut drive);
        for (j, d) in drive.iter_mut().enumerate() {
            *d -= 2.0 * w.get(j, j) * hidden_prev[j];
        }
    }
    drive
}

pub fn readout_step(y: &mut [f64], hidden_spikes: &[f64], w_out: &Matrix, kappa: f64) {
    for v in y.iter_mut() {
        *v *= kappa;
    }
    w_out.accumulate_transposed(hidden_spikes, y);
}

/// Output error used by the learning signal and the readout update.
pub fn output_error(y: &[f64], target: &[f64], kind: ErrorSignal) -> Vec<f64> {
    match kind {
        ErrorSignal::Difference => y.iter().zip(target).map(|(a, b)| a - b).collect(),
        ErrorSignal::Softmax => softmax(y).iter().zip(target).map(|(a, b)| a - b).collect(),
    }
}

pub fn softmax(y: &[f64]) -> Vec<f64> {
    let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = y.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `L_j = Σ_k w^o_jk · err_k`.
pub fn learning_signal(err: &[f64], w_out: &Matrix) -> Vec<f64> {
    (0..w_out.rows)
        .map(|j| w_out.row(j).iter().zip(err).map(|(w, e)| w * e).sum())
        .collect()
}

pub fn eligibility_state_step(f: f64, spike: f64, decay: f64) -> f64 {
    decay * f + spike
}

pub fn pseudo_gradient(v_prev: f64, l: f64, p: &LifParams) -> f64 {
    p.pseudo_derivative(v_prev) * l
}

/// `e_Σ[i][j] += f_i · ψ_j`.
pub fn accumulate_eligibility(e_sum: &mut Matrix, f_pre: &[f64], psi_post: &[f64]) {
    for (i, &f) in f_pre.iter().enumerate() {
        if f != 0.0 {
            for (e, p) in e_sum.row_mut(i).iter_mut().zip(psi_post) {
                *e += f * p;
            }
        }
    }
}

/// A bank of plastic synapses between a presynaptic and a postsynaptic population.
///
/// The ideal implementation keeps float weights and an explicit `e_Σ`; the
/// crossbar implementation stores eligibility as heat and weights as
/// conductance pairs.
pub trait Synapses {
    fn shape(&self) -> (usize, usize);
    /// `out_j += Σ_i pre_i · w_ij`.
    fn integrate(&mut self, pre: &[f64], out: &mut [f64]) -> Result<()>;
    /// Records one step of eligibility `f_i·ψ_j`.
    fn accumulate(&mut self, f_pre: &[f64], psi_post: &[f64]) -> Result<()>;
    /// End-of-frame descent step `w ← w − η·e_Σ`, clearing the eligibility.
    fn apply_update(&mut self, eta: f64) -> Result<()>;
    /// Current effective signed weights.
    fn weights(&self) -> Matrix;
    /// Clears eligibility without touching weights.
    fn reset_eligibility(&mut self);
    /// Diagonal of the effective weights, for the self-connection term.
    fn diagonal(&self) -> Vec<f64> {
        let w = self.weights();
        (0..w.rows.min(w.cols)).map(|j| w.get(j, j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdealSynapses {
    pub w: Matrix,
    pub e_sum: Matrix,
}

impl IdealSynapses {
    pub fn new(w: Matrix) -> Self {
        let e_sum = Matrix::zeros(w.rows, w.cols);
        IdealSynapses { w, e_sum }
    }
}

impl Synapses for IdealSynapses {
    fn shape(&self) -> (usize, usize) {
        (self.w.rows, self.w.cols)
    }

    fn integrate(&mut self, pre: &[f64], out: &mut [f64]) -> Result<()> {
        self.w.accumulate_transposed(pre, out);
        Ok(())
    }

    fn accumulate(&mut self, f_pre: &[f64], psi_post: &[f64]) -> Result<()> {
        accumulate_eligibility(&mut self.e_sum, f_pre, psi_post);
        Ok(())
    }

    fn apply_update(&mut self, eta: f64) -> Result<()> {
        for (w, e) in self.w.data.iter_mut().zip(self.e_sum.data.iter_mut()) {
            *w -= eta * *e;
            *e = 0.0;
        }
        Ok(())
    }

    fn weights(&self) -> Matrix {
        self.w.clone()
    }

    fn reset_eligibility(&mut self) {
        self.e_sum.fill(0.0);
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.w.rows.min(self.w.cols)).map(|j| self.w.get(j, j)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FrameState {
    Closed,
    Open { len: usize, step: usize },
}

/// Network state for online training. `S` backs the input and recurrent
/// synapses; readout weights are always plain floats.
#[derive(Debug, Clone)]
pub struct EpropNet<S: Synapses> {
    pub params: LifParams,
    pub w_in: S,
    pub w_rec: Option<S>,
    pub w_out: Matrix,
    pub v: Vec<f64>,
    /// Hidden spikes emitted in the previous step (recurrent input of this step).
    pub s_h: Vec<f64>,
    pub f_in: Vec<f64>,
    pub f_h: Vec<f64>,
    pub psi: Vec<f64>,
    pub l: Vec<f64>,
    pub y: Vec<f64>,
    /// `Σ_t s_j(t)·err_k(t)` for the readout update.
    pub grad_out: Matrix,
    frame: FrameState,
}

impl<S: Synapses> EpropNet<S> {
    pub fn new(params: LifParams, w_in: S, w_rec: Option<S>, w_out: Matrix) -> Result<Self> {
        params.validate()?;
        let (n_in, n_h) = w_in.shape();
        if let Some(r) = &w_rec {
            if r.shape() != (n_h, n_h) {
                return Err(Error::Param("recurrent weights must be square".into()));
            }
        }
        if w_out.rows != n_h {
            return Err(Error::Param("readout rows must match hidden size".into()));
        }
        let _ = n_in;
        let n_out = w_out.cols;
        Ok(EpropNet {
            params,
            w_in,
            w_rec,
            w_out,
            v: vec![0.0; n_h],
            s_h: vec![0.0; n_h],
            f_in: vec![0.0; n_in],
            f_h: vec![0.0; n_h],
            psi: vec![0.0; n_h],
            l: vec![0.0; n_h],
            y: vec![0.0; n_out],
            grad_out: Matrix::zeros(n_h, n_out),
            frame: FrameState::Closed,
        })
    }

    pub fn n_in(&self) -> usize {
        self.f_in.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.v.len()
    }

    pub fn n_out(&self) -> usize {
        self.y.len()
    }

    /// Zeroes all per-frame state and opens a frame of `len` steps.
    pub fn begin_frame(&mut self, len: usize) {
        for buf in [
            &mut self.v,
            &mut self.s_h,
            &mut self.f_in,
            &mut self.f_h,
            &mut self.psi,
            &mut self.l,
            &mut self.y,
        ] {
            buf.iter_mut().for_each(|x| *x = 0.0);
        }
        self.grad_out.fill(0.0);
        self.w_in.reset_eligibility();
        if let Some(r) = &mut self.w_rec {
            r.reset_eligibility();
        }
        self.frame = FrameState::Open { len, step: 0 };
    }

    pub fn frame_complete(&self) -> bool {
        matches!(self.frame, FrameState::Open { len, step } if step == len)
    }

    /// Advances one time step. With a target, learning state is accumulated;
    /// without one the step is inference only. Returns the emitted spikes.
    pub fn step(&mut self, input: &[f64], target: Option<&[f64]>) -> Result<Vec<f64>> {
        let FrameState::Open { len, step } = self.frame else {
            return Err(Error::Protocol("step outside an open frame".into()));
        };
        if step >= len {
            return Err(Error::Protocol("frame already complete".into()));
        }
        let p = &self.params;
        let decay = p.decay();
        for (f, &x) in self.f_in.iter_mut().zip(input) {
            *f = eligibility_state_step(*f, x, decay);
        }
        for (f, &s) in self.f_h.iter_mut().zip(&self.s_h) {
            *f = eligibility_state_step(*f, s, decay);
        }

        let n_h = self.v.len();
        let mut drive = vec![0.0; n_h];
        self.w_in.integrate(input, &mut drive)?;
        if let Some(rec) = &mut self.w_rec {
            rec.integrate(&self.s_h, &mut drive)?;
            let w = rec.diagonal();
            for j in 0..n_h {
                drive[j] -= 2.0 * w[j] * self.s_h[j];
            }
        }
        let mut spikes = vec![0.0; n_h];
        let v_pre = lif_step(&mut self.v, &drive, &mut spikes, p);
        readout_step(&mut self.y, &spikes, &self.w_out, p.readout_kappa());

        if let Some(t) = target {
            let err = output_error(&self.y, t, p.error_signal);
            self.l = learning_signal(&err, &self.w_out);
            for j in 0..n_h {
                self.psi[j] = pseudo_gradient(v_pre[j], self.l[j], p);
            }
            accumulate_eligibility(&mut self.grad_out, &spikes, &err);
            self.w_in.accumulate(&self.f_in, &self.psi)?;
            if let Some(rec) = &mut self.w_rec {
                rec.accumulate(&self.f_h, &self.psi)?;
            }
        }
        self.s_h.copy_from_slice(&spikes);
        self.frame = FrameState::Open {
            len,
            step: step + 1,
        };
        Ok(spikes)
    }

    fn require_frame_end(&self, what: &str) -> Result<()> {
        if !self.frame_complete() {
            return Err(Error::Protocol(format!(
                "{what} is only allowed at the end of a dataframe"
            )));
        }
        Ok(())
    }

    /// `w^o ← w^o − η_out·Σ_t s_j(t)·err_k(t)`; clears the accumulated history.
    pub fn update_output_weights(&mut self) -> Result<()> {
        self.require_frame_end("readout update")?;
        let eta = self.params.eta_readout();
        for (w, g) in self.w_out.data.iter_mut().zip(self.grad_out.data.iter_mut()) {
            *w -= eta * *g;
            *g = 0.0;
        }
        Ok(())
    }

    /// `w^{i/h} ← w^{i/h} − η·e_Σ`; clears `e_Σ`.
    pub fn update_hidden_weights(&mut self) -> Result<()> {
        self.require_frame_end("hidden update")?;
        let eta = self.params.eta;
        self.w_in.apply_update(eta)?;
        if let Some(r) = &mut self.w_rec {
            r.apply_update(eta)?;
        }
        Ok(())
    }

    /// Applies both end-of-frame updates and closes the frame.
    pub fn end_frame(&mut self) -> Result<()> {
        self.update_hidden_weights()?;
        self.update_output_weights()?;
        self.frame = FrameState::Closed;
        Ok(())
    }

    /// Closes the frame without learning.
    pub fn abandon_frame(&mut self) {
        self.frame = FrameState::Closed;
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
