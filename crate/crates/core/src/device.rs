//! ReRAM cell model: conductance state, temperature-dependent programming,
//! device variability, level quantization and temperature-dependent readout.
//!
//! Conductances are in µS and temperatures in K throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Coefficients of the fitted update law `ΔG/G0 = a·e^{b·G0'}·T'^{c·e^{d·G0'}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl FitCoeffs {
    pub const SET: FitCoeffs = FitCoeffs {
        a: 0.143,
        b: 2.216,
        c: 0.8232,
        d: 0.4043,
    };
    pub const RESET: FitCoeffs = FitCoeffs {
        a: 0.3124,
        b: 0.8064,
        c: 1.138,
        d: -0.8806,
    };

    fn as_array(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    fn from_array(v: [f64; 4]) -> Self {
        FitCoeffs {
            a: v[0],
            b: v[1],
            c: v[2],
            d: v[3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Set,
    Reset,
}

/// Which update law `apply_write` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WriteMode {
    /// Fitted empirical law with normalized `G0'` and `T'`.
    Fitted,
    /// Saturating law `κ·(g_max − g0)·h(T)` (SET) / `−κ·(g0 − g_min)·h(T)` (RESET).
    #[default]
    Phenomenological,
    /// `ΔG = linear_gain·(T − T_amb)`, used for ideal-limit comparisons.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    pub set: FitCoeffs,
    pub reset: FitCoeffs,
    pub g_min: f64,
    pub g_max: f64,
    /// Quantization depth; `None` keeps conductance continuous.
    pub bits: Option<u32>,
    /// Device-to-device variability (relative std of every sampled coefficient).
    pub d_v: f64,
    /// Cycle-to-cycle variability (std as a fraction of |ΔG|).
    pub c_v: f64,
    /// Temperature coefficient of read conductance (1/K).
    pub alpha: f64,
    pub g_scale: f64,
    pub t_scale: f64,
    pub t_offset: f64,
    pub t_amb: f64,
    pub mode: WriteMode,
    /// Phenomenological gain κ (fraction of remaining range per unit h).
    pub kappa: f64,
    /// Temperature rise (K) at which h reaches ε + 1.
    pub heat_scale: f64,
    /// Baseline h at ambient temperature.
    pub epsilon: f64,
    /// Linear-law slope (µS per K of rise).
    pub linear_gain: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            set: FitCoeffs::SET,
            reset: FitCoeffs::RESET,
            g_min: 1.0,
            g_max: 100.0,
            bits: None,
            d_v: 0.0,
            c_v: 0.0,
            alpha: 0.0,
            g_scale: 100.0,
            t_scale: 300.0,
            t_offset: 0.0,
            t_amb: 300.0,
            mode: WriteMode::Phenomenological,
            kappa: 0.05,
            heat_scale: 100.0,
            epsilon: 0.0,
            linear_gain: 0.01,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Param(format!("device: {m}")));
        if !(self.g_min < self.g_max) || self.g_min < 0.0 {
            return bad("require 0 <= g_min < g_max");
        }
        if self.bits == Some(0) || self.bits.is_some_and(|b| b > 52) {
            return bad("bits must be in 1..=52");
        }
        if self.d_v < 0.0 || self.c_v < 0.0 || self.alpha < 0.0 {
            return bad("d_v, c_v and alpha must be non-negative");
        }
        if !(self.g_scale > 0.0 && self.t_scale > 0.0) {
            return bad("g_scale and t_scale must be positive");
        }
        if !(self.t_amb > 0.0) {
            return bad("t_amb must be positive");
        }
        if self.kappa < 0.0 || !(self.heat_scale > 0.0) || self.epsilon < 0.0 {
            return bad("kappa, epsilon must be >= 0 and heat_scale > 0");
        }
        Ok(())
    }

    pub fn range(&self) -> f64 {
        self.g_max - self.g_min
    }

    /// Spacing between adjacent quantization levels, zero when continuous.
    pub fn level_step(&self) -> f64 {
        match self.bits {
            Some(b) => self.range() / ((1u64 << b) - 1) as f64,
            None => 0.0,
        }
    }

    fn check_g(&self, g: f64) -> Result<()> {
        if !(g >= self.g_min && g <= self.g_max) {
            return Err(Error::Range(format!(
                "conductance {g} outside [{}, {}]",
                self.g_min, self.g_max
            )));
        }
        Ok(())
    }
}

/// Per-device realization of the law coefficients, drawn once at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledCoeffs {
    pub set: FitCoeffs,
    pub reset: FitCoeffs,
    /// Multiplier on the phenomenological and linear laws (nominal 1, clamped at 0).
    pub gain: f64,
}

impl SampledCoeffs {
    pub fn nominal(p: &DeviceParams) -> Self {
        SampledCoeffs {
            set: p.set,
            reset: p.reset,
            gain: 1.0,
        }
    }

    fn for_polarity(&self, pol: Polarity) -> &FitCoeffs {
        match pol {
            Polarity::Set => &self.set,
            Polarity::Reset => &self.reset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub g: f64,
    pub sampled: SampledCoeffs,
    /// Identifier of the cycle-to-cycle noise stream.
    pub stream: u64,
    writes: u64,
}

impl DeviceState {
    /// Creates a device at `g_init`, drawing its device-to-device coefficients
    /// from the stream identified by `seed`.
    pub fn new(params: &DeviceParams, g_init: f64, seed: u64) -> Result<Self> {
        params.check_g(g_init)?;
        let sampled = if params.d_v == 0.0 {
            SampledCoeffs::nominal(params)
        } else {
            let mut r = rng::stream(seed);
            let mut draw = |c: &FitCoeffs| {
                let v = c.as_array().map(|x| rng::normal(&mut r, x, params.d_v * x.abs()));
                FitCoeffs::from_array(v)
            };
            let set = draw(&params.set);
            let reset = draw(&params.reset);
            let gain = rng::normal(&mut r, 1.0, params.d_v).max(0.0);
            SampledCoeffs { set, reset, gain }
        };
        Ok(DeviceState {
            g: snap(params, g_init),
            sampled,
            stream: seed,
            writes: 0,
        })
    }

    /// Applies one programming pulse of the given polarity at local
    /// temperature `t_local`. The result is clamped and quantized.
    pub fn apply_write(
        &mut self,
        params: &DeviceParams,
        polarity: Polarity,
        t_local: f64,
        mode: WriteMode,
    ) -> Result<f64> {
        let mut dg = match mode {
            WriteMode::Fitted => delta_g_fitted(
                self.g,
                t_local,
                polarity,
                self.sampled.for_polarity(polarity),
                params,
            )?,
            WriteMode::Phenomenological => {
                self.sampled.gain * delta_g_phenomenological(self.g, t_local, polarity, params)
            }
            WriteMode::Linear => self.sampled.gain * delta_g_linear(t_local, polarity, params),
        };
        if params.c_v > 0.0 && dg != 0.0 {
            let mut r = rng::stream(rng::derive_seed(self.stream, &[self.writes]));
            dg = rng::normal(&mut r, dg, params.c_v * dg.abs());
        }
        self.writes += 1;
        let before = self.g;
        self.g = snap(params, (self.g + dg).clamp(params.g_min, params.g_max));
        Ok(self.g - before)
    }

    /// Effective read conductance at `t_local`; the stored state is untouched.
    pub fn read_conductance(&self, params: &DeviceParams, t_local: f64) -> f64 {
        self.g * (1.0 + params.alpha * (t_local - params.t_amb))
    }

    /// Sets the stored conductance directly (used by re-centering), snapping to the level grid.
    pub fn set_conductance(&mut self, params: &DeviceParams, g: f64) {
        self.g = snap(params, g.clamp(params.g_min, params.g_max));
    }

    pub fn write_count(&self) -> u64 {
        self.writes
    }
}

fn snap(params: &DeviceParams, g: f64) -> f64 {
    match params.bits {
        Some(b) => quantize(g, b, params.g_min, params.g_max),
        None => g,
    }
}

/// Fitted update law. `G0' = g0/g_scale`, `T' = (T − t_offset)/t_scale`;
/// positive for SET and negative for RESET.
pub fn delta_g_fitted(
    g0: f64,
    t_local: f64,
    polarity: Polarity,
    p: &FitCoeffs,
    params: &DeviceParams,
) -> Result<f64> {
    let gn = g0 / params.g_scale;
    let tn = (t_local - params.t_offset) / params.t_scale;
    let mag = g0 * fitted_ratio(gn, tn, p)?;
    Ok(match polarity {
        Polarity::Set => mag,
        Polarity::Reset => -mag,
    })
}

/// Relative update magnitude `|ΔG|/G0` of the fitted law at normalized
/// conductance `gn` and normalized temperature `tn`.
pub fn fitted_ratio(gn: f64, tn: f64, p: &FitCoeffs) -> Result<f64> {
    if !(tn > 0.0) {
        return Err(Error::Domain(format!(
            "normalized temperature {tn} must be positive"
        )));
    }
    Ok(p.a * (p.b * gn).exp() * tn.powf(p.c * (p.d * gn).exp()))
}

/// Heating response `h(T)`: `ε + ΔT/heat_scale` above ambient, continued
/// below ambient by `ε·exp(ΔT/(ε·heat_scale))` so that it stays strictly
/// increasing and continuously differentiable.
pub fn heating_response(t_local: f64, params: &DeviceParams) -> f64 {
    let rise = t_local - params.t_amb;
    if rise >= 0.0 {
        params.epsilon + rise / params.heat_scale
    } else if params.epsilon > 0.0 {
        params.epsilon * (rise / (params.epsilon * params.heat_scale)).exp()
    } else {
        0.0
    }
}

pub fn delta_g_phenomenological(g0: f64, t_local: f64, polarity: Polarity, params: &DeviceParams) -> f64 {
    let h = heating_response(t_local, params);
    match polarity {
        Polarity::Set => params.kappa * (params.g_max - g0) * h,
        Polarity::Reset => -params.kappa * (g0 - params.g_min) * h,
    }
}

pub fn delta_g_linear(t_local: f64, polarity: Polarity, params: &DeviceParams) -> f64 {
    let dg = params.linear_gain * (t_local - params.t_amb);
    match polarity {
        Polarity::Set => dg,
        Polarity::Reset => -dg,
    }
}

/// Snaps `g` to the nearest of `2^bits` evenly spaced levels on
/// `[g_min, g_max]`. Exact midpoints round toward `g_min`.
pub fn quantize(g: f64, bits: u32, g_min: f64, g_max: f64) -> f64 {
    let top = ((1u64 << bits) - 1) as f64;
    let step = (g_max - g_min) / top;
    let k = ((g - g_min) / step - 0.5).ceil().clamp(0.0, top);
    if k == 0.0 {
        g_min
    } else if k == top {
        g_max
    } else {
        g_min + k * step
    }
}
