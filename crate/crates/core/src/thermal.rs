//! Lumped electrothermal node for one heater/ReRAM pair.
//!
//! The heater is driven through a triode-region access transistor. With the
//! heater top voltage scaled as `V_H1 = v_scale·√ψ` and the overdrive as
//! `R·k·V_OV = √f/(1 − √f)`, the dissipated power collapses to
//! `P_H = (v_scale²/R)·ψ·f`, which is what makes the temperature rise track
//! the product of eligibility state and pseudo-gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper clip for the normalized eligibility state; the overdrive scaling
/// diverges at exactly 1.
pub const F_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalParams {
    /// Heater electrical resistance (Ω).
    pub r_heater: f64,
    /// Transistor constant µ_eff·C_eff·W/L (A/V²).
    pub k: f64,
    /// Thermal resistance (K/W).
    pub r_th: f64,
    /// Thermal time constant (s).
    pub tau_th: f64,
    /// Heating pulse width (s).
    pub t_pw: f64,
    /// Heater voltage at ψ_norm = 1 (V).
    pub v_scale: f64,
    /// Normalization bound for the eligibility state f.
    pub f_max: f64,
    /// Normalization bound for |ψ|.
    pub psi_max: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        ThermalParams {
            r_heater: 1.0e3,
            k: 1.0e-4,
            r_th: 1.0e5,
            tau_th: 1.0e-6,
            t_pw: 1.0e-8,
            v_scale: 1.0,
            f_max: steady_state_f_max(200.0),
            psi_max: 1.0,
        }
    }
}

impl ThermalParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.r_heater,
            self.k,
            self.r_th,
            self.tau_th,
            self.t_pw,
            self.v_scale,
            self.f_max,
            self.psi_max,
        ];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Param("thermal: all parameters must be positive".into()));
        }
        if self.t_pw > self.tau_th {
            return Err(Error::Param(format!(
                "thermal: pulse width {} exceeds thermal time constant {}",
                self.t_pw, self.tau_th
            )));
        }
        Ok(())
    }

    /// Power at full drive, `v_scale²/R`.
    pub fn reference_power(&self) -> f64 {
        self.v_scale * self.v_scale / self.r_heater
    }
}

/// Largest value the low-pass eligibility state reaches under a spike every step.
pub fn steady_state_f_max(tau_m: f64) -> f64 {
    1.0 / (1.0 - (-1.0 / tau_m).exp())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    /// Temperature rise above ambient (K).
    pub t0: f64,
}

/// Heater power for normalized drive signals, evaluated through the full
/// transistor/heater divider rather than the collapsed product.
pub fn heater_power(f_norm: f64, psi_norm: f64, p: &ThermalParams) -> Result<f64> {
    if !(0.0..1.0).contains(&f_norm) {
        return Err(Error::Domain(format!("f_norm {f_norm} outside [0, 1)")));
    }
    if !(0.0..=1.0).contains(&psi_norm) {
        return Err(Error::Domain(format!("psi_norm {psi_norm} outside [0, 1]")));
    }
    let v_h1 = p.v_scale * psi_norm.sqrt();
    let sf = f_norm.sqrt();
    let v_ov = sf / (p.r_heater * p.k * (1.0 - sf));
    let rkv = p.r_heater * p.k * v_ov;
    let divider = rkv / (1.0 + rkv);
    Ok(v_h1 * v_h1 / p.r_heater * divider * divider)
}

/// One pulse of the first-order thermal recursion.
pub fn step_temperature(s: ThermalState, p_h: f64, p: &ThermalParams) -> ThermalState {
    let r = p.t_pw / p.tau_th;
    ThermalState {
        t0: s.t0 + r * (p_h * p.r_th - s.t0),
    }
}

/// Per-step retention of the temperature rise, `max(0, 1 − t_step/τ_TH)`.
pub fn decay_factor(t_step: f64, tau_th: f64) -> f64 {
    (1.0 - t_step / tau_th).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedDrive {
    pub f_norm: f64,
    pub psi_norm: f64,
    /// +1 routes to the positive heater, −1 to the negative one.
    pub sign: f64,
}

pub fn normalize_signals(f: f64, psi: f64, p: &ThermalParams) -> NormalizedDrive {
    NormalizedDrive {
        f_norm: (f / p.f_max).min(1.0 - F_NORM_EPS),
        psi_norm: (psi.abs() / p.psi_max).min(1.0),
        sign: if psi < 0.0 { -1.0 } else { 1.0 },
    }
}
