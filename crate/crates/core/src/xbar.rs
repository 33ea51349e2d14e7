//! Differential 1T-1H-1M crossbar: each synapse is a pair of ReRAM devices
//! (G⁺, G⁻) with one heater node each. Rows are presynaptic inputs, columns
//! postsynaptic neurons.
//!
//! A frame is `U × [spike integration, e-update]` followed by one weight
//! update. During e-update the heater selected by the sign of the drive is
//! pulsed with power proportional to `f·ψ`; the rise is kept on the node and
//! decays by `λ` per step. At the weight update both devices receive the same
//! SET pulse, and the hotter one moves further.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::device::{DeviceParams, DeviceState, Polarity, WriteMode};
use crate::eprop::{Matrix, Synapses};
use crate::error::{Error, Result};
use crate::rng;
use crate::thermal::{self, ThermalParams, ThermalState};

/// Heat scale below which accumulated heat is renormalized.
const RESCALE_BELOW: f64 = 1e-150;

/// One coupling entry: a pulse on cell `(i, j)` raises the same-polarity node
/// of cell `(i + d_row, j + d_col)` by `coeff` times the heated node's rise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub d_row: i32,
    pub d_col: i32,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XbarParams {
    /// Per-step retention λ of the accumulated rise. When absent it follows
    /// from the thermal time constant as `max(0, 1 − t_step/τ_TH)`.
    pub gamma: Option<f64>,
    /// Wall time between e-update pulses (s).
    pub t_step: f64,
    /// Rise (K) produced by one pulse at `f_norm·ψ_norm = 1`.
    pub cal: f64,
    /// Largest representable |w|; sets `w_to_g = (g_max − g_min)/w_max`.
    pub w_max: f64,
    /// Re-center the differential pairs every this many weight updates (0 = never).
    pub recenter_every: u32,
    /// Explicit coupling entries; merged with `coupling_file`.
    pub coupling: Vec<Coupling>,
    /// CSV of coupling coefficients (`d_row,d_col,coefficient`).
    pub coupling_file: Option<String>,
    /// Multiplier applied to every coupling coefficient.
    pub coupling_scale: f64,
    /// Keep only entries with `|d_row|, |d_col| ≤ 1`.
    pub nearest_only: bool,
    /// Write-law gain override. When absent it is matched to the learning rate.
    pub write_gain: Option<f64>,
}

impl Default for XbarParams {
    fn default() -> Self {
        XbarParams {
            gamma: None,
            t_step: 1e-9,
            cal: 200.0,
            w_max: 1.0,
            recenter_every: 1,
            coupling: Vec::new(),
            coupling_file: None,
            coupling_scale: 1.0,
            nearest_only: true,
            write_gain: None,
        }
    }
}

impl XbarParams {
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Param(format!("xbar: gamma {g} outside [0, 1]")));
            }
        }
        if !(self.t_step > 0.0 && self.cal > 0.0 && self.w_max > 0.0) {
            return Err(Error::Param("xbar: t_step, cal and w_max must be positive".into()));
        }
        if self.coupling_scale < 0.0 {
            return Err(Error::Param("xbar: coupling_scale must be non-negative".into()));
        }
        if self.write_gain.is_some_and(|g| !(g >= 0.0)) {
            return Err(Error::Param("xbar: write_gain must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lambda(&self, thermal: &ThermalParams) -> f64 {
        self.gamma
            .unwrap_or_else(|| thermal::decay_factor(self.t_step, thermal.tau_th))
    }

    /// Coupling table after loading the file, scaling and truncation. The
    /// self term is dropped.
    pub fn coupling_table(&self) -> Result<Vec<Coupling>> {
        let mut table = self.coupling.clone();
        if let Some(path) = &self.coupling_file {
            table.extend(load_coupling_csv(Path::new(path))?);
        }
        Ok(table
            .into_iter()
            .filter(|c| (c.d_row, c.d_col) != (0, 0))
            .filter(|c| !self.nearest_only || (c.d_row.abs() <= 1 && c.d_col.abs() <= 1))
            .map(|c| Coupling {
                coeff: c.coeff * self.coupling_scale,
                ..c
            })
            .filter(|c| c.coeff != 0.0)
            .collect())
    }
}

/// Symmetric nearest-neighbour table: `side` for the four edge neighbours
/// and `diag` for the corners.
pub fn nearest_neighbour_table(side: f64, diag: f64) -> Vec<Coupling> {
    let mut t = Vec::new();
    for dr in -1i32..=1 {
        for dc in -1i32..=1 {
            let coeff = match (dr.abs() + dc.abs()) as u8 {
                0 => continue,
                1 => side,
                _ => diag,
            };
            t.push(Coupling {
                d_row: dr,
                d_col: dc,
                coeff,
            });
        }
    }
    t
}

/// Reads a coupling CSV. The header must name `d_row`, `d_col` and
/// `coefficient`; other columns (such as the `site` label `cellsim` writes)
/// are ignored.
pub fn load_coupling_csv(path: &Path) -> Result<Vec<Coupling>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.split(',').map(str::trim).collect(),
        None => Vec::new(),
    };
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (Some(ir), Some(ic), Some(iv)) = (col("d_row"), col("d_col"), col("coefficient")) else {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header with d_row,d_col,coefficient".into(),
        });
    };
    let mut out = Vec::new();
    for (n, line) in lines {
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |msg: &str| Error::Parse {
            line: n + 1,
            msg: msg.to_string(),
        };
        if parts.len() != header.len() {
            return Err(bad("field count differs from header"));
        }
        let d_row = parts[ir].parse().map_err(|_| bad("bad d_row"))?;
        let d_col = parts[ic].parse().map_err(|_| bad("bad d_col"))?;
        let coeff = parts[iv].parse().map_err(|_| bad("bad coefficient"))?;
        out.push(Coupling {
            d_row,
            d_col,
            coeff,
        });
    }
    Ok(out)
}

/// Write-law gain that makes a weight update reproduce `Δw = −η·e_Σ` in the
/// small-signal limit (device at `g_min`, `ε = 0`), for raw e-prop
/// eligibility `e = Σ f·ψ`.
pub fn matched_write_gain(
    device: &DeviceParams,
    thermal: &ThermalParams,
    xbar: &XbarParams,
    eta: f64,
) -> f64 {
    write_gain_for(device, xbar, eta, xbar.cal / (thermal.f_max * thermal.psi_max))
}

/// Write-law gain giving `|Δw| = η·rise/rise_per_unit` at `g0 = g_min`.
pub fn write_gain_for(device: &DeviceParams, xbar: &XbarParams, eta: f64, rise_per_unit: f64) -> f64 {
    let w_to_g = device.range() / xbar.w_max;
    match device.mode {
        // ΔG = κ·(g_max − g0)·rise/heat_scale
        WriteMode::Phenomenological | WriteMode::Fitted => {
            eta * w_to_g * device.heat_scale / (rise_per_unit * device.range())
        }
        // ΔG = gain·rise
        WriteMode::Linear => eta * w_to_g / rise_per_unit,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    SpikeIntegration,
    EUpdate,
    WeightUpdate,
}

/// Borrowed view of one differential synapse.
#[derive(Debug, Clone, Copy)]
pub struct SynapseCell<'a> {
    pub dev_pos: &'a DeviceState,
    pub dev_neg: &'a DeviceState,
    pub th_pos: ThermalState,
    pub th_neg: ThermalState,
}

#[derive(Debug, Clone)]
pub struct CrossbarArray {
    pub rows: usize,
    pub cols: usize,
    pub device: DeviceParams,
    pub thermal: ThermalParams,
    pub params: XbarParams,
    lambda: f64,
    w_to_g: f64,
    pos: Vec<DeviceState>,
    neg: Vec<DeviceState>,
    /// Heat deposited by each node's own heater, in units of `decay`: the
    /// actual rise is `direct·decay`. Decaying every node each step then
    /// costs one multiply on `decay`.
    direct_pos: Vec<f64>,
    direct_neg: Vec<f64>,
    decay: f64,
    coupling: Vec<Coupling>,
    /// `(g⁺ − g⁻)/w_to_g` at ambient, refreshed after every write.
    w_ambient: Matrix,
    last: Phase,
    eupdates: usize,
    updates: u64,
}

impl CrossbarArray {
    /// Builds an array holding `w`. The write gain is matched to `eta` unless
    /// overridden in `params`.
    pub fn from_weights(
        w: &Matrix,
        mut device: DeviceParams,
        thermal: ThermalParams,
        params: XbarParams,
        eta: f64,
        seed: u64,
    ) -> Result<Self> {
        device.validate()?;
        thermal.validate()?;
        params.validate()?;
        let gain = params
            .write_gain
            .unwrap_or_else(|| matched_write_gain(&device, &thermal, &params, eta));
        match device.mode {
            WriteMode::Phenomenological => device.kappa = gain,
            WriteMode::Linear => device.linear_gain = gain,
            WriteMode::Fitted => {}
        }
        let coupling = params.coupling_table()?;
        let lambda = params.lambda(&thermal);
        let w_to_g = device.range() / params.w_max;
        let n = w.rows * w.cols;
        let mut pos = Vec::with_capacity(n);
        let mut neg = Vec::with_capacity(n);
        for i in 0..w.rows {
            for j in 0..w.cols {
                let (gp, gn) = map_weight(w.get(i, j), &device, params.w_max)?;
                let (i64_, j64) = (i as u64, j as u64);
                pos.push(DeviceState::new(&device, gp, rng::derive_seed(seed, &[i64_, j64, 0]))?);
                neg.push(DeviceState::new(&device, gn, rng::derive_seed(seed, &[i64_, j64, 1]))?);
            }
        }
        let mut a = CrossbarArray {
            rows: w.rows,
            cols: w.cols,
            device,
            thermal,
            params,
            lambda,
            w_to_g,
            pos,
            neg,
            direct_pos: vec![0.0; n],
            direct_neg: vec![0.0; n],
            decay: 1.0,
            coupling,
            w_ambient: Matrix::zeros(w.rows, w.cols),
            last: Phase::WeightUpdate,
            eupdates: 0,
            updates: 0,
        };
        a.refresh_ambient();
        Ok(a)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn w_to_g(&self) -> f64 {
        self.w_to_g
    }

    pub fn coupling(&self) -> &[Coupling] {
        &self.coupling
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }

    fn refresh_ambient(&mut self) {
        for k in 0..self.pos.len() {
            self.w_ambient.data[k] = (self.pos[k].g - self.neg[k].g) / self.w_to_g;
        }
    }

    /// Total rise on a node: its own accumulated heat plus the coupled share of
    /// its neighbours'. Crosstalk is linear in the heater increments and decays
    /// with the same λ, so summing it at read time equals injecting it per pulse.
    fn rise(&self, direct: &[f64], i: usize, j: usize) -> f64 {
        let mut r = direct[self.idx(i, j)];
        for c in &self.coupling {
            let si = i as i64 - c.d_row as i64;
            let sj = j as i64 - c.d_col as i64;
            if si >= 0 && sj >= 0 && (si as usize) < self.rows && (sj as usize) < self.cols {
                r += c.coeff * direct[si as usize * self.cols + sj as usize];
            }
        }
        r * self.decay
    }

    pub fn rise_pos(&self, i: usize, j: usize) -> f64 {
        self.rise(&self.direct_pos, i, j)
    }

    pub fn rise_neg(&self, i: usize, j: usize) -> f64 {
        self.rise(&self.direct_neg, i, j)
    }

    pub fn cell(&self, i: usize, j: usize) -> SynapseCell<'_> {
        let k = self.idx(i, j);
        SynapseCell {
            dev_pos: &self.pos[k],
            dev_neg: &self.neg[k],
            th_pos: ThermalState {
                t0: self.rise_pos(i, j),
            },
            th_neg: ThermalState {
                t0: self.rise_neg(i, j),
            },
        }
    }

    fn cell_weight(&self, i: usize, j: usize) -> f64 {
        if self.device.alpha == 0.0 {
            return self.w_ambient.get(i, j);
        }
        let k = self.idx(i, j);
        let t = self.device.t_amb;
        let gp = self.pos[k].read_conductance(&self.device, t + self.rise_pos(i, j));
        let gn = self.neg[k].read_conductance(&self.device, t + self.rise_neg(i, j));
        (gp - gn) / self.w_to_g
    }

    /// Weighted read of one input spike vector: `out_j += Σ_i s_i·w_ij`.
    pub fn spike_integration(&mut self, spikes: &[f64], out: &mut [f64]) -> Result<()> {
        if self.last == Phase::SpikeIntegration {
            return Err(Error::Protocol("spike integration twice without e-update".into()));
        }
        if self.device.alpha == 0.0 {
            self.w_ambient.accumulate_transposed(spikes, out);
        } else {
            for (i, &s) in spikes.iter().enumerate() {
                if s != 0.0 {
                    for (j, o) in out.iter_mut().enumerate() {
                        *o += s * self.cell_weight(i, j);
                    }
                }
            }
        }
        self.last = Phase::SpikeIntegration;
        Ok(())
    }

    /// Heats the node selected by the sign of `drive_j` on every cell by
    /// `cal·f_norm_i·|drive_j|_norm`, after decaying all nodes by λ.
    ///
    /// Uses the collapsed heater power `P_H/(v_scale²/R) = f_norm·ψ_norm`.
    pub fn e_update_phase(&mut self, f_pre: &[f64], drive_post: &[f64]) -> Result<()> {
        if self.last != Phase::SpikeIntegration {
            return Err(Error::Protocol("e-update must follow spike integration".into()));
        }
        let th = &self.thermal;
        let mut p_pos = vec![0.0; self.cols];
        let mut p_neg = vec![0.0; self.cols];
        for (j, &d) in drive_post.iter().enumerate() {
            let n = thermal::normalize_signals(0.0, d, th);
            if d > 0.0 {
                p_pos[j] = n.psi_norm;
            } else if d < 0.0 {
                p_neg[j] = n.psi_norm;
            }
        }
        let next = self.decay * self.lambda;
        if next < RESCALE_BELOW {
            // Fold the scale back in before it underflows (or at once when λ = 0).
            for r in self.direct_pos.iter_mut().chain(self.direct_neg.iter_mut()) {
                *r *= next;
            }
            self.decay = 1.0;
        } else {
            self.decay = next;
        }
        let inv = 1.0 / self.decay;
        let active: Vec<(usize, f64)> = p_pos
            .iter()
            .zip(&p_neg)
            .enumerate()
            .filter(|(_, (p, n))| **p != 0.0 || **n != 0.0)
            .map(|(j, (p, n))| (j, if *p != 0.0 { *p } else { -*n }))
            .collect();
        let cols = self.cols;
        for (i, &f) in f_pre.iter().enumerate() {
            let a = self.params.cal * thermal::normalize_signals(f, 0.0, th).f_norm * inv;
            if a == 0.0 {
                continue;
            }
            let rp = &mut self.direct_pos[i * cols..(i + 1) * cols];
            let rn = &mut self.direct_neg[i * cols..(i + 1) * cols];
            for &(j, p) in &active {
                if p > 0.0 {
                    rp[j] += a * p;
                } else {
                    rn[j] -= a * p;
                }
            }
        }
        self.last = Phase::EUpdate;
        self.eupdates += 1;
        Ok(())
    }

    /// Single-synapse e-update with unit eligibility (f_norm and ψ_norm at
    /// their maxima, a rise of `onehot_rise()`): used by the RL agent, whose
    /// eligibility is a counter rather than a filtered spike train.
    pub fn e_update_onehot(&mut self, i: usize, j: usize, sign: f64) -> Result<()> {
        let mut f = vec![0.0; self.rows];
        f[i] = self.thermal.f_max;
        let mut d = vec![0.0; self.cols];
        d[j] = sign * self.thermal.psi_max;
        self.e_update_phase(&f, &d)
    }

    pub fn onehot_rise(params: &XbarParams) -> f64 {
        params.cal * (1.0 - crate::thermal::F_NORM_EPS)
    }

    /// Scales all accumulated heat by `m.abs()`, swapping nodes when `m < 0`.
    fn modulate(&mut self, m: f64) {
        let s = m.abs();
        if m < 0.0 {
            std::mem::swap(&mut self.direct_pos, &mut self.direct_neg);
        }
        self.decay *= s;
    }

    /// End-of-frame SET pulse on every device at its local temperature,
    /// followed by a thermal reset and optional re-centering.
    pub fn weight_update_phase(&mut self) -> Result<()> {
        if self.last != Phase::EUpdate || self.eupdates == 0 {
            return Err(Error::Protocol(
                "weight update only at the end of a frame, after an e-update".into(),
            ));
        }
        let t_amb = self.device.t_amb;
        let mode = self.device.mode;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let k = self.idx(i, j);
                let rp = self.rise_pos(i, j);
                let rn = self.rise_neg(i, j);
                self.pos[k].apply_write(&self.device, Polarity::Set, t_amb + rp, mode)?;
                self.neg[k].apply_write(&self.device, Polarity::Set, t_amb + rn, mode)?;
            }
        }
        self.direct_pos.fill(0.0);
        self.direct_neg.fill(0.0);
        self.decay = 1.0;
        self.updates += 1;
        let every = self.params.recenter_every as u64;
        if every > 0 && self.updates % every == 0 {
            self.recenter();
        }
        self.refresh_ambient();
        self.last = Phase::WeightUpdate;
        self.eupdates = 0;
        Ok(())
    }

    /// Reward-modulated update: accumulated heat is scaled by `|m|` and routed
    /// to the opposite device when `m < 0` before the SET pulse.
    pub fn weight_update_modulated(&mut self, m: f64) -> Result<()> {
        if self.last != Phase::EUpdate || self.eupdates == 0 {
            return Err(Error::Protocol(
                "weight update only at the end of a frame, after an e-update".into(),
            ));
        }
        self.modulate(m);
        self.weight_update_phase()
    }

    /// Subtracts `min(G⁺, G⁻) − g_min` from both devices of each pair.
    pub fn recenter(&mut self) {
        let g_min = self.device.g_min;
        for k in 0..self.pos.len() {
            let shift = self.pos[k].g.min(self.neg[k].g) - g_min;
            if shift > 0.0 {
                let (gp, gn) = (self.pos[k].g - shift, self.neg[k].g - shift);
                self.pos[k].set_conductance(&self.device, gp);
                self.neg[k].set_conductance(&self.device, gn);
            }
        }
    }

    /// Drops all accumulated heat and returns to the start of a frame.
    pub fn reset_frame(&mut self) {
        self.direct_pos.fill(0.0);
        self.direct_neg.fill(0.0);
        self.decay = 1.0;
        self.last = Phase::WeightUpdate;
        self.eupdates = 0;
    }

    /// Signed weights `(read(G⁺) − read(G⁻))/w_to_g` at current local temperatures.
    pub fn effective_weights(&self) -> Matrix {
        if self.device.alpha == 0.0 {
            return self.w_ambient.clone();
        }
        Matrix::from_fn(self.rows, self.cols, |i, j| self.cell_weight(i, j))
    }

    pub fn phase(&self) -> Phase {
        self.last
    }

    /// CSV snapshot: `row,col,g_pos,g_neg,rise_pos,rise_neg`.
    pub fn write_snapshot(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "row,col,g_pos,g_neg,rise_pos,rise_neg")?;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let c = self.cell(i, j);
                writeln!(
                    w,
                    "{i},{j},{},{},{},{}",
                    c.dev_pos.g, c.dev_neg.g, c.th_pos.t0, c.th_neg.t0
                )?;
            }
        }
        Ok(())
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        self.write_snapshot(&mut f)
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// `(g_pos, g_neg)` for a signed weight, one device at `g_min`.
pub fn map_weight(w: f64, device: &DeviceParams, w_max: f64) -> Result<(f64, f64)> {
    let w_to_g = device.range() / w_max;
    let mag = w.abs() * w_to_g;
    if !(mag <= device.range() * (1.0 + 1e-12)) {
        return Err(Error::Range(format!("weight {w} exceeds ±{w_max}")));
    }
    let g = (device.g_min + mag).min(device.g_max);
    Ok(if w >= 0.0 {
        (g, device.g_min)
    } else {
        (device.g_min, g)
    })
}

impl Synapses for CrossbarArray {
    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn integrate(&mut self, pre: &[f64], out: &mut [f64]) -> Result<()> {
        self.spike_integration(pre, out)
    }

    /// Descent: `ψ > 0` must lower the weight, so it heats the G⁻ node.
    fn accumulate(&mut self, f_pre: &[f64], psi_post: &[f64]) -> Result<()> {
        let drive: Vec<f64> = psi_post.iter().map(|p| -p).collect();
        self.e_update_phase(f_pre, &drive)
    }

    /// The learning rate is folded into the write gain at construction.
    fn apply_update(&mut self, _eta: f64) -> Result<()> {
        self.weight_update_phase()
    }

    fn weights(&self) -> Matrix {
        self.effective_weights()
    }

    fn reset_eligibility(&mut self) {
        self.reset_frame();
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|j| self.cell_weight(j, j))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device() -> DeviceParams {
        DeviceParams::default()
    }

    fn array(w: &Matrix, dev: DeviceParams, xp: XbarParams) -> CrossbarArray {
        CrossbarArray::from_weights(w, dev, ThermalParams::default(), xp, 0.1, 7).unwrap()
    }

    fn ideal_xbar() -> XbarParams {
        XbarParams {
            gamma: Some(1.0),
            ..Default::default()
        }
    }

    #[test]
    fn map_weight_endpoints() {
        let d = device();
        assert_eq!(map_weight(0.0, &d, 1.0).unwrap(), (1.0, 1.0));
        assert_eq!(map_weight(1.0, &d, 1.0).unwrap(), (100.0, 1.0));
        assert_eq!(map_weight(-1.0, &d, 1.0).unwrap(), (1.0, 100.0));
        assert!(matches!(map_weight(1.5, &d, 1.0), Err(Error::Range(_))));
    }

    #[test]
    fn round_trip_within_half_step() {
        let d = DeviceParams {
            bits: Some(6),
            ..device()
        };
        let w = Matrix::from_fn(4, 5, |i, j| ((i * 5 + j) as f64 / 10.0 - 1.0).clamp(-1.0, 1.0));
        let a = array(&w, d.clone(), ideal_xbar());
        let bound = d.level_step() / a.w_to_g() * 0.5 + 1e-12;
        let eff = a.effective_weights();
        for (x, y) in eff.data.iter().zip(&w.data) {
            assert!((x - y).abs() <= bound);
        }
    }

    #[test]
    fn spike_integration_reads_rows() {
        let w = Matrix::from_fn(3, 2, |i, j| 0.1 * (i as f64) - 0.05 * j as f64);
        let mut a = array(&w, device(), ideal_xbar());
        let mut out = vec![0.0; 2];
        a.spike_integration(&[0.0; 3], &mut out).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
        a.e_update_phase(&[0.0; 3], &[0.0; 2]).unwrap();
        let mut out = vec![0.0; 2];
        a.spike_integration(&[0.0, 1.0, 0.0], &mut out).unwrap();
        for j in 0..2 {
            assert!((out[j] - w.get(1, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn temperature_scales_read() {
        let dev = DeviceParams {
            alpha: 0.002,
            ..device()
        };
        let w = Matrix::from_fn(1, 1, |_, _| 0.5);
        let mut a = array(&w, dev.clone(), ideal_xbar());
        let mut out = vec![0.0];
        a.spike_integration(&[0.0], &mut out).unwrap();
        a.e_update_phase(&[50.0], &[0.5]).unwrap();
        let rise = a.rise_pos(0, 0);
        assert!(rise > 0.0);
        let mut out = vec![0.0];
        a.spike_integration(&[1.0], &mut out).unwrap();
        let gp = 50.5 * (1.0 + dev.alpha * rise);
        let want = (gp - 1.0) / a.w_to_g();
        assert!((out[0] - want).abs() < 1e-12);
    }

    #[test]
    fn phase_order_enforced() {
        let w = Matrix::zeros(2, 2);
        let mut a = array(&w, device(), ideal_xbar());
        assert!(matches!(a.weight_update_phase(), Err(Error::Protocol(_))));
        assert!(matches!(a.e_update_phase(&[0.0; 2], &[0.0; 2]), Err(Error::Protocol(_))));
        let mut out = vec![0.0; 2];
        a.spike_integration(&[0.0; 2], &mut out).unwrap();
        assert!(a.spike_integration(&[0.0; 2], &mut out).is_err());
        assert!(a.weight_update_phase().is_err());
        a.e_update_phase(&[0.0; 2], &[0.0; 2]).unwrap();
        assert!(a.e_update_phase(&[0.0; 2], &[0.0; 2]).is_err());
        a.weight_update_phase().unwrap();
    }

    #[test]
    fn zero_drive_is_pure_decay() {
        let w = Matrix::zeros(2, 2);
        let xp = XbarParams {
            gamma: Some(0.8),
            ..Default::default()
        };
        let mut a = array(&w, device(), xp);
        let mut out = vec![0.0; 2];
        a.spike_integration(&[0.0; 2], &mut out).unwrap();
        a.e_update_phase(&[10.0, 20.0], &[0.3, -0.2]).unwrap();
        let before: Vec<f64> = (0..4).map(|k| a.rise_pos(k / 2, k % 2) + a.rise_neg(k / 2, k % 2)).collect();
        a.spike_integration(&[0.0; 2], &mut out).unwrap();
        a.e_update_phase(&[10.0, 20.0], &[0.0, 0.0]).unwrap();
        for k in 0..4 {
            let now = a.rise_pos(k / 2, k % 2) + a.rise_neg(k / 2, k % 2);
            assert!((now - 0.8 * before[k]).abs() < 1e-12);
        }
    }

    /// Lazy decay scale against a dense `λ·heat + increment` reference.
    #[test]
    fn lazy_decay_matches_dense_accumulation() {
        let (rows, cols, lambda) = (3, 4, 0.9);
        let w = Matrix::zeros(rows, cols);
        let xp = XbarParams {
            gamma: Some(lambda),
            ..Default::default()
        };
        let mut a = array(&w, device(), xp);
        let th = ThermalParams::default();
        let mut want_pos = vec![0.0; rows * cols];
        let mut want_neg = vec![0.0; rows * cols];
        let mut out = vec![0.0; cols];
        let mut s = 7u64;
        let mut next = || {
            s = crate::rng::splitmix64(s);
            crate::rng::uniform(&mut crate::rng::stream(s))
        };
        // 0.9^4000 ≈ 1e-183, so the scale is folded back in at least once.
        for step in 0..4000 {
            let f: Vec<f64> = (0..rows).map(|_| if next() < 0.5 { 0.0 } else { 100.0 * next() }).collect();
            let d: Vec<f64> = (0..cols).map(|_| if next() < 0.5 { 0.0 } else { next() - 0.5 }).collect();
            a.spike_integration(&vec![0.0; rows], &mut out).unwrap();
            a.e_update_phase(&f, &d).unwrap();
            for i in 0..rows {
                let fi = thermal::normalize_signals(f[i], 0.0, &th).f_norm;
                for j in 0..cols {
                    let pj = thermal::normalize_signals(0.0, d[j], &th).psi_norm;
                    let k = i * cols + j;
                    want_pos[k] *= lambda;
                    want_neg[k] *= lambda;
                    let inc = 200.0 * fi * pj;
                    if d[j] > 0.0 {
                        want_pos[k] += inc;
                    } else if d[j] < 0.0 {
                        want_neg[k] += inc;
                    }
                }
            }
            for k in 0..rows * cols {
                let (i, j) = (k / cols, k % cols);
                let scale = want_pos[k].max(want_neg[k]).max(1.0);
                assert!((a.rise_pos(i, j) - want_pos[k]).abs() <= 1e-12 * scale, "step {step}");
                assert!((a.rise_neg(i, j) - want_neg[k]).abs() <= 1e-12 * scale, "step {step}");
            }
        }
    }

    #[test]
    fn constant_drive_sums_linearly() {
        let w = Matrix::zeros(1, 1);
        let mut a = array(&w, device(), ideal_xbar());
        let th = ThermalParams::default();
        let (f, psi) = (40.0, 0.25);
        let u = 17;
        let mut out = vec![0.0];
        for _ in 0..u {
            a.spike_integration(&[0.0], &mut out).unwrap();
            a.e_update_phase(&[f], &[psi]).unwrap();
        }
        let want = u as f64 * 200.0 * (f / th.f_max) * (psi / th.psi_max);
        assert!((a.rise_pos(0, 0) - want).abs() < 1e-9 * want);
        assert_eq!(a.rise_neg(0, 0), 0.0);
    }

    #[test]
    fn negative_drive_heats_negative_node() {
        let w = Matrix::zeros(1, 1);
        let mut a = array(&w, device(), ideal_xbar());
        let mut out = vec![0.0];
        a.spike_integration(&[0.0], &mut out).unwrap();
        a.e_update_phase(&[5.0], &[-0.5]).unwrap();
        assert_eq!(a.rise_pos(0, 0), 0.0);
        assert!(a.rise_neg(0, 0) > 0.0);
    }

    #[test]
    fn no_heat_no_change() {
        let w = Matrix::from_fn(3, 3, |i, j| 0.1 * i as f64 - 0.1 * j as f64);
        let mut a = array(&w, device(), ideal_xbar());
        let before = a.effective_weights();
        let mut out = vec![0.0; 3];
        a.spike_integration(&[0.0; 3], &mut out).unwrap();
        a.e_update_phase(&[0.0; 3], &[0.0; 3]).unwrap();
        a.weight_update_phase().unwrap();
        assert_eq!(a.effective_weights(), before);
    }

    #[test]
    fn single_hot_cell_moves_only_itself() {
        let w = Matrix::zeros(3, 3);
        let mut a = array(&w, device(), ideal_xbar());
        let mut out = vec![0.0; 3];
        a.spike_integration(&[0.0; 3], &mut out).unwrap();
        a.e_update_phase(&[0.0, 30.0, 0.0], &[0.0, 0.0, 0.4]).unwrap();
        a.weight_update_phase().unwrap();
        let e = a.effective_weights();
        for i in 0..3 {
            for j in 0..3 {
                if (i, j) == (1, 2) {
                    assert!(e.get(i, j) > 0.0);
                } else {
                    assert_eq!(e.get(i, j), 0.0);
                }
            }
        }
        for k in 0..9 {
            assert_eq!(a.rise_pos(k / 3, k % 3), 0.0);
            assert_eq!(a.rise_neg(k / 3, k % 3), 0.0);
        }
    }

    #[test]
    fn larger_rise_larger_step() {
        let step = |psi: f64| {
            let w = Matrix::zeros(1, 1);
            let mut a = array(&w, device(), ideal_xbar());
            let mut out = vec![0.0];
            a.spike_integration(&[0.0], &mut out).unwrap();
            a.e_update_phase(&[30.0], &[psi]).unwrap();
            a.weight_update_phase().unwrap();
            a.effective_weights().get(0, 0)
        };
        assert!(step(0.6) > step(0.3));
        assert!(step(0.3) > 0.0);
    }

    #[test]
    fn crosstalk_reaches_neighbours() {
        let w = Matrix::zeros(3, 3);
        let xp = XbarParams {
            gamma: Some(1.0),
            coupling: nearest_neighbour_table(0.1, 0.05),
            ..Default::default()
        };
        let mut a = array(&w, device(), xp);
        let mut out = vec![0.0; 3];
        a.spike_integration(&[0.0; 3], &mut out).unwrap();
        a.e_update_phase(&[0.0, 30.0, 0.0], &[0.0, 0.4, 0.0]).unwrap();
        let centre = a.rise_pos(1, 1);
        assert!((a.rise_pos(0, 1) - 0.1 * centre).abs() < 1e-12);
        assert!((a.rise_pos(2, 2) - 0.05 * centre).abs() < 1e-12);
        assert_eq!(a.rise_neg(0, 1), 0.0);
    }

    #[test]
    fn recentering_keeps_weights() {
        let w = Matrix::from_fn(2, 2, |i, j| 0.3 * i as f64 - 0.2 * j as f64);
        let mut a = array(&w, device(), XbarParams {
            recenter_every: 0,
            ..ideal_xbar()
        });
        let mut out = vec![0.0; 2];
        a.spike_integration(&[0.0; 2], &mut out).unwrap();
        a.e_update_phase(&[50.0, 50.0], &[0.5, -0.5]).unwrap();
        a.weight_update_phase().unwrap();
        let before = a.effective_weights();
        a.recenter();
        a.refresh_ambient();
        let after = a.effective_weights();
        for (x, y) in before.data.iter().zip(&after.data) {
            assert!((x - y).abs() < 1e-12);
        }
        for i in 0..2 {
            for j in 0..2 {
                let c = a.cell(i, j);
                assert_eq!(c.dev_pos.g.min(c.dev_neg.g), 1.0);
            }
        }
    }

    #[test]
    fn reset_saturation_clamps_to_nonpositive() {
        // Repeated hot writes on G⁻ only drive every weight to ≤ 0.
        let w = Matrix::from_fn(2, 2, |i, j| 0.2 * (i + j) as f64);
        let dev = DeviceParams {
            bits: Some(4),
            ..device()
        };
        let mut a = array(&w, dev.clone(), ideal_xbar());
        for _ in 0..50 {
            let mut out = vec![0.0; 2];
            a.spike_integration(&[0.0; 2], &mut out).unwrap();
            a.e_update_phase(&[150.0, 150.0], &[-1.0, -1.0]).unwrap();
            a.weight_update_phase().unwrap();
        }
        let bound = dev.level_step() / a.w_to_g();
        assert!(a.effective_weights().data.iter().all(|&x| x <= bound));
    }

    #[test]
    fn modulated_update_flips_sign() {
        let run = |m: f64| {
            let w = Matrix::zeros(1, 1);
            let mut a = array(&w, device(), ideal_xbar());
            let mut out = vec![0.0];
            a.spike_integration(&[0.0], &mut out).unwrap();
            a.e_update_onehot(0, 0, 1.0).unwrap();
            a.weight_update_modulated(m).unwrap();
            a.effective_weights().get(0, 0)
        };
        assert!(run(0.3) > 0.0);
        assert!(run(-0.3) < 0.0);
        assert!((run(0.3) + run(-0.3)).abs() < 1e-12);
        assert_eq!(run(0.0), 0.0);
    }

    #[test]
    fn coupling_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(&p, "d_row,d_col,coefficient\n0,0,1\n0,1,0.08\n-1,0,0.07\n2,0,0.01\n").unwrap();
        let xp = XbarParams {
            coupling_file: Some(p.to_string_lossy().into()),
            coupling_scale: 0.5,
            ..Default::default()
        };
        let t = xp.coupling_table().unwrap();
        assert_eq!(t.len(), 2);
        assert!((t[0].coeff - 0.04).abs() < 1e-15);
        std::fs::write(&p, "d_row,d_col,coefficient\n0,x,1\n").unwrap();
        assert!(matches!(load_coupling_csv(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn snapshot_has_header_and_rows() {
        let w = Matrix::zeros(2, 3);
        let a = array(&w, device(), ideal_xbar());
        let mut buf = Vec::new();
        a.write_snapshot(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 7);
        assert!(s.starts_with("row,col,g_pos,g_neg,rise_pos,rise_neg"));
    }

    #[test]
    fn default_lambda_from_time_constant() {
        let xp = XbarParams::default();
        let th = ThermalParams::default();
        assert!((xp.lambda(&th) - 0.999).abs() < 1e-12);
    }
}
