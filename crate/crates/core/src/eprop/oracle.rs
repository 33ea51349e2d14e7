//! Reference gradients by reverse-mode differentiation through a recorded
//! forward pass, with the reset path treated as constant.
//!
//! Used to check the online eligibility sums. For a feedforward network with a
//! memoryless readout (`κ = 0`) the two agree exactly; with a leaky readout the
//! online rule drops the future error terms and the two diverge.

use super::{output_error, ErrorSignal, LifParams, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleGradients {
    /// `∂ℓ/∂w^i`
    pub w_in: Matrix,
    /// `∂ℓ/∂w^o`
    pub w_out: Matrix,
    /// Total loss over the frame.
    pub loss: f64,
}

fn frame_loss(y: &[f64], target: &[f64], kind: ErrorSignal) -> f64 {
    match kind {
        ErrorSignal::Difference => 0.5 * y.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
        ErrorSignal::Softmax => {
            let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + y.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            y.iter().zip(target).map(|(v, t)| -t * (v - lse)).sum()
        }
    }
}

/// Gradients of the summed per-step loss with respect to input and readout
/// weights. Errors with `Unsupported` if any recurrent weight is nonzero.
pub fn oracle_gradients(
    p: &LifParams,
    w_in: &Matrix,
    w_rec: Option<&Matrix>,
    w_out: &Matrix,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<OracleGradients> {
    if let Some(w) = w_rec {
        if w.data.iter().any(|&x| x != 0.0) {
            return Err(Error::Unsupported(
                "reference gradient covers feedforward networks only".into(),
            ));
        }
    }
    if inputs.len() != targets.len() {
        return Err(Error::Param("inputs and targets differ in length".into()));
    }
    let n_t = inputs.len();
    let n_h = w_in.cols;
    let n_out = w_out.cols;
    let alpha = (-1.0 / p.tau_m).exp();
    let kappa = p.readout_kappa();

    let mut v = vec![0.0; n_h];
    let mut y = vec![0.0; n_out];
    let mut v_pre = vec![vec![0.0; n_h]; n_t];
    let mut spikes = vec![vec![0.0; n_h]; n_t];
    let mut dl_dy = vec![vec![0.0; n_out]; n_t];
    let mut loss = 0.0;
    for t in 0..n_t {
        for j in 0..n_h {
            let mut d = 0.0;
            for (i, &x) in inputs[t].iter().enumerate() {
                d += x * w_in.get(i, j);
            }
            let vp = alpha * v[j] + d;
            v_pre[t][j] = vp;
            let s = if vp >= p.v_th { 1.0 } else { 0.0 };
            spikes[t][j] = s;
            v[j] = vp - p.v_th * s;
        }
        for k in 0..n_out {
            let mut acc = kappa * y[k];
            for j in 0..n_h {
                acc += spikes[t][j] * w_out.get(j, k);
            }
            y[k] = acc;
        }
        loss += frame_loss(&y, &targets[t], p.error_signal);
        dl_dy[t] = output_error(&y, &targets[t], p.error_signal);
    }

    let mut g_in = Matrix::zeros(w_in.rows, n_h);
    let mut g_out = Matrix::zeros(n_h, n_out);
    let mut dy = vec![0.0; n_out];
    let mut dv = vec![0.0; n_h];
    for t in (0..n_t).rev() {
        for k in 0..n_out {
            dy[k] = dl_dy[t][k] + kappa * dy[k];
        }
        for j in 0..n_h {
            let ds: f64 = (0..n_out).map(|k| w_out.get(j, k) * dy[k]).sum();
            dv[j] = ds * p.pseudo_derivative(v_pre[t][j]) + alpha * dv[j];
            for k in 0..n_out {
                g_out.data[j * n_out + k] += spikes[t][j] * dy[k];
            }
        }
        for (i, &x) in inputs[t].iter().enumerate() {
            if x != 0.0 {
                for j in 0..n_h {
                    g_in.data[i * n_h + j] += x * dv[j];
                }
            }
        }
    }
    Ok(OracleGradients {
        w_in: g_in,
        w_out: g_out,
        loss,
    })
}
