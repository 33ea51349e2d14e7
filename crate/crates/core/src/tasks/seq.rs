//! Synthetic framewise classification task and its training loop.
//!
//! Each class owns a prototype over (channel, frame): a random subset of
//! channels is active, each with a slow sinusoidal envelope of its own phase.
//! A sample is its class prototype plus Gaussian noise, clamped to [0, 1],
//! and is turned into Bernoulli spikes with rate
//! `rate_min + (rate_max − rate_min)·value`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::device::DeviceParams;
use crate::eprop::{argmax, EpropNet, IdealSynapses, LifParams, Matrix, Synapses};
use crate::error::{Error, Result};
use crate::rng;
use crate::thermal::ThermalParams;
use crate::xbar::{CrossbarArray, XbarParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqTaskConfig {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub frames: usize,
    pub samples_per_class: usize,
    pub train_fraction: f64,
    /// Fraction of channels active in a class prototype.
    pub active_fraction: f64,
    pub noise: f64,
    pub rate_min: f64,
    pub rate_max: f64,
    pub epochs: usize,
    pub recurrent: bool,
    /// Scale of the initial input and recurrent weights (std `scale/√fan_in`).
    pub w_init_in: f64,
    pub w_init_rec: f64,
    pub w_init_out: f64,
    /// Headroom on the calibrated `psi_max`.
    pub psi_margin: f64,
    /// Samples in the `psi_max` calibration pass.
    pub calibration_samples: usize,
    pub seed: u64,
}

impl Default for SeqTaskConfig {
    fn default() -> Self {
        SeqTaskConfig {
            n_in: 39,
            n_hidden: 200,
            n_out: 8,
            frames: 100,
            samples_per_class: 20,
            train_fraction: 0.8,
            active_fraction: 0.3,
            noise: 0.3,
            rate_min: 0.01,
            rate_max: 0.3,
            epochs: 3,
            recurrent: true,
            w_init_in: 1.0,
            w_init_rec: 0.5,
            w_init_out: 1.0,
            psi_margin: 2.0,
            calibration_samples: 8,
            seed: 0,
        }
    }
}

impl SeqTaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Param(format!("seq: {m}")));
        if self.n_in == 0 || self.n_hidden == 0 || self.n_out == 0 || self.frames == 0 {
            return bad("sizes must be positive");
        }
        if self.samples_per_class == 0 || self.epochs == 0 {
            return bad("samples_per_class and epochs must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.rate_min)
            || !(0.0..=1.0).contains(&self.rate_max)
            || self.rate_min > self.rate_max
        {
            return bad("rates must satisfy 0 <= rate_min <= rate_max <= 1");
        }
        if self.noise < 0.0 || !(self.psi_margin > 0.0) {
            return bad("noise must be >= 0 and psi_margin > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// `frames × n_in` feature values in [0, 1].
    pub features: Vec<Vec<f64>>,
    /// One label per frame.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_in: usize,
    pub n_out: usize,
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn prototypes(cfg: &SeqTaskConfig, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut r = rng::stream(seed);
    (0..cfg.n_out)
        .map(|_| {
            let chans: Vec<(f64, f64, f64)> = (0..cfg.n_in)
                .map(|_| {
                    let amp = if rng::uniform(&mut r) < cfg.active_fraction {
                        0.6 + 0.4 * rng::uniform(&mut r)
                    } else {
                        0.1 * rng::uniform(&mut r)
                    };
                    let phase = std::f64::consts::TAU * rng::uniform(&mut r);
                    let cycles = 0.5 + 1.5 * rng::uniform(&mut r);
                    (amp, phase, cycles)
                })
                .collect();
            (0..cfg.frames)
                .map(|t| {
                    let x = t as f64 / cfg.frames as f64;
                    chans
                        .iter()
                        .map(|&(a, ph, cy)| {
                            a * (0.6 + 0.4 * (std::f64::consts::TAU * cy * x + ph).sin())
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Balanced synthetic dataset, deterministic in `cfg.seed`. Samples are
/// interleaved by class; the split takes the first `train_fraction` of each
/// class for training.
pub fn generate_sequence_dataset(cfg: &SeqTaskConfig) -> Result<Dataset> {
    cfg.validate()?;
    let protos = prototypes(cfg, rng::derive_seed(cfg.seed, &[0]));
    let mut samples = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let n_train = ((cfg.samples_per_class as f64 * cfg.train_fraction).round() as usize)
        .clamp(1, cfg.samples_per_class.max(2) - 1);
    for k in 0..cfg.samples_per_class {
        for (c, proto) in protos.iter().enumerate() {
            let mut r = rng::stream(rng::derive_seed(cfg.seed, &[1, c as u64, k as u64]));
            let features = proto
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&p| rng::normal(&mut r, p, cfg.noise).clamp(0.0, 1.0))
                        .collect()
                })
                .collect();
            let idx = samples.len();
            samples.push(Sample {
                features,
                labels: vec![c; cfg.frames],
            });
            if k < n_train {
                train.push(idx);
            } else {
                test.push(idx);
            }
        }
    }
    Ok(Dataset {
        n_in: cfg.n_in,
        n_out: cfg.n_out,
        samples,
        train,
        test,
    })
}

/// Bernoulli spike trains for one sample.
pub fn encode_spikes(sample: &Sample, rate_min: f64, rate_max: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed);
    sample
        .features
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    let p = rate_min + (rate_max - rate_min) * v.clamp(0.0, 1.0);
                    if rng::uniform(&mut r) < p {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Writes the `frame,label,f0..` feature CSV, blank line between samples.
pub fn write_feature_file(samples: &[Sample], path: &Path) -> Result<()> {
    let n = samples.first().map_or(0, |s| s.features.first().map_or(0, Vec::len));
    let mut out = String::from("frame,label");
    for k in 0..n {
        let _ = write!(out, ",f{k}");
    }
    out.push('\n');
    for (si, s) in samples.iter().enumerate() {
        if si > 0 {
            out.push('\n');
        }
        for (t, (row, label)) in s.features.iter().zip(&s.labels).enumerate() {
            let _ = write!(out, "{t},{label}");
            for v in row {
                // Shortest representation that round-trips exactly.
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses a feature CSV. `n_classes`, when given, bounds the labels.
pub fn load_feature_file(path: &Path, n_classes: Option<usize>) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_text(&text, n_classes)
}

pub fn parse_feature_text(text: &str, n_classes: Option<usize>) -> Result<Vec<Sample>> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((n, l)) => break (n + 1, l),
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "empty feature file".into(),
                })
            }
        }
    };
    let cols: Vec<&str> = header.1.split(',').map(str::trim).collect();
    let width = cols.len().saturating_sub(2);
    let header_ok = cols.len() > 2
        && cols[0] == "frame"
        && cols[1] == "label"
        && cols[2..].iter().enumerate().all(|(k, c)| *c == format!("f{k}"));
    if !header_ok {
        return Err(Error::Parse {
            line: header.0,
            msg: "header must be frame,label,f0..f{n-1}".into(),
        });
    }
    let mut samples = Vec::new();
    let mut cur = Sample {
        features: Vec::new(),
        labels: Vec::new(),
    };
    for (n, line) in lines {
        let line_no = n + 1;
        if line.trim().is_empty() {
            if !cur.labels.is_empty() {
                samples.push(std::mem::replace(
                    &mut cur,
                    Sample {
                        features: Vec::new(),
                        labels: Vec::new(),
                    },
                ));
            }
            continue;
        }
        let bad = |msg: String| Error::Parse { line: line_no, msg };
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != width + 2 {
            return Err(bad(format!("expected {} fields, found {}", width + 2, parts.len())));
        }
        parts[0]
            .parse::<usize>()
            .map_err(|_| bad(format!("bad frame index {:?}", parts[0])))?;
        let label: i64 = parts[1]
            .parse()
            .map_err(|_| bad(format!("bad label {:?}", parts[1])))?;
        if label < 0 || n_classes.is_some_and(|c| label as usize >= c) {
            return Err(Error::Schema(format!("unknown label {label} at line {line_no}")));
        }
        let row = parts[2..]
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad("non-numeric feature".into()))?;
        cur.features.push(row);
        cur.labels.push(label as usize);
    }
    if !cur.labels.is_empty() {
        samples.push(cur);
    }
    if samples.is_empty() {
        return Err(Error::Parse {
            line: header.0 + 1,
            msg: "no data rows".into(),
        });
    }
    Ok(samples)
}

/// Wraps loaded samples into a dataset; the class count is the largest label
/// plus one unless given. The split is every fifth sample to test.
pub fn dataset_from_samples(samples: Vec<Sample>, n_out: Option<usize>) -> Result<Dataset> {
    let n_in = samples[0].features[0].len();
    let max_label = samples.iter().flat_map(|s| s.labels.iter()).max().copied().unwrap_or(0);
    let n_out = n_out.unwrap_or(max_label + 1);
    if max_label >= n_out {
        return Err(Error::Schema(format!("label {max_label} exceeds {n_out} classes")));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for k in 0..samples.len() {
        if k % 5 == 4 {
            test.push(k)
        } else {
            train.push(k)
        }
    }
    Ok(Dataset {
        n_in,
        n_out,
        samples,
        train,
        test,
    })
}

/// Hardware configuration for crossbar-backed training.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqHardware {
    pub device: DeviceParams,
    pub thermal: ThermalParams,
    pub xbar: XbarParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqRecord {
    pub train_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    pub psi_max: Option<f64>,
}

impl SeqRecord {
    pub fn final_test(&self) -> f64 {
        *self.test_accuracy.last().unwrap_or(&0.0)
    }
}

struct InitWeights {
    w_in: Matrix,
    w_rec: Option<Matrix>,
    w_out: Matrix,
}

fn init_weights(cfg: &SeqTaskConfig, n_in: usize, n_out: usize, seed: u64) -> InitWeights {
    let mut r = rng::stream(seed);
    let w_in = Matrix::gaussian(n_in, cfg.n_hidden, cfg.w_init_in, &mut r);
    let w_rec = cfg.recurrent.then(|| {
        let mut m = Matrix::gaussian(cfg.n_hidden, cfg.n_hidden, cfg.w_init_rec, &mut r);
        for j in 0..cfg.n_hidden {
            m.set(j, j, 0.0);
        }
        m
    });
    let w_out = Matrix::gaussian(cfg.n_hidden, n_out, cfg.w_init_out, &mut r);
    InitWeights { w_in, w_rec, w_out }
}

fn one_hot(k: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

fn spike_seed(seed: u64, sample: usize, epoch: usize) -> u64 {
    rng::derive_seed(seed, &[2, sample as u64, epoch as u64])
}

/// Trains one sample as one frame; returns correct-frame count.
fn train_frame<S: Synapses>(
    net: &mut EpropNet<S>,
    spikes: &[Vec<f64>],
    labels: &[usize],
) -> Result<usize> {
    let n_out = net.n_out();
    net.begin_frame(spikes.len());
    let mut correct = 0;
    for (x, &l) in spikes.iter().zip(labels) {
        net.step(x, Some(&one_hot(l, n_out)))?;
        correct += usize::from(argmax(&net.y) == l);
    }
    net.end_frame()?;
    Ok(correct)
}

/// Framewise accuracy of fixed weights over `idx`.
pub fn evaluate(
    params: &LifParams,
    w_in: &Matrix,
    w_rec: Option<&Matrix>,
    w_out: &Matrix,
    data: &Dataset,
    idx: &[usize],
    cfg: &SeqTaskConfig,
    seed: u64,
) -> Result<f64> {
    let mut net = EpropNet::new(
        params.clone(),
        IdealSynapses::new(w_in.clone()),
        w_rec.map(|w| IdealSynapses::new(w.clone())),
        w_out.clone(),
    )?;
    let (mut correct, mut total) = (0usize, 0usize);
    for &k in idx {
        let s = &data.samples[k];
        let spikes = encode_spikes(s, cfg.rate_min, cfg.rate_max, rng::derive_seed(seed, &[3, k as u64]));
        net.begin_frame(spikes.len());
        for (x, &l) in spikes.iter().zip(&s.labels) {
            net.step(x, None)?;
            correct += usize::from(argmax(&net.y) == l);
            total += 1;
        }
        net.abandon_frame();
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Largest |ψ| seen by the initial network over a few training samples.
pub fn calibrate_psi_max(
    params: &LifParams,
    init: (&Matrix, Option<&Matrix>, &Matrix),
    data: &Dataset,
    cfg: &SeqTaskConfig,
    seed: u64,
) -> Result<f64> {
    let mut net = EpropNet::new(
        params.clone(),
        IdealSynapses::new(init.0.clone()),
        init.1.map(|w| IdealSynapses::new(w.clone())),
        init.2.clone(),
    )?;
    let mut peak: f64 = 0.0;
    for &k in data.train.iter().take(cfg.calibration_samples.max(1)) {
        let s = &data.samples[k];
        let spikes = encode_spikes(s, cfg.rate_min, cfg.rate_max, spike_seed(seed, k, 0));
        net.begin_frame(spikes.len());
        for (x, &l) in spikes.iter().zip(&s.labels) {
            net.step(x, Some(&one_hot(l, data.n_out)))?;
            peak = net.psi.iter().fold(peak, |m, p| m.max(p.abs()));
        }
        net.abandon_frame();
    }
    if peak == 0.0 {
        return Err(Error::Degenerate("no pseudo-gradient activity in calibration".into()));
    }
    Ok(peak * cfg.psi_margin)
}

fn shuffled(idx: &[usize], seed: u64) -> Vec<usize> {
    let mut v = idx.to_vec();
    let mut r = rng::stream(seed);
    for k in (1..v.len()).rev() {
        let j = ((rng::uniform(&mut r) * (k + 1) as f64) as usize).min(k);
        v.swap(k, j);
    }
    v
}

/// Trains on `data` for `cfg.epochs` epochs, in float (`hardware = None`)
/// or on crossbars. Test accuracy uses the effective weights after each epoch.
pub fn train_sequence(
    cfg: &SeqTaskConfig,
    params: &LifParams,
    data: &Dataset,
    hardware: Option<&SeqHardware>,
    seed: u64,
) -> Result<SeqRecord> {
    cfg.validate()?;
    params.validate()?;
    let init = init_weights(cfg, data.n_in, data.n_out, rng::derive_seed(seed, &[0]));
    match hardware {
        None => {
            let net = EpropNet::new(
                params.clone(),
                IdealSynapses::new(init.w_in),
                init.w_rec.map(IdealSynapses::new),
                init.w_out,
            )?;
            run_epochs(net, cfg, data, seed, None)
        }
        Some(hw) => {
            let psi_max = calibrate_psi_max(
                params,
                (&init.w_in, init.w_rec.as_ref(), &init.w_out),
                data,
                cfg,
                seed,
            )?;
            let thermal = ThermalParams {
                psi_max,
                f_max: crate::thermal::steady_state_f_max(params.tau_m),
                ..hw.thermal.clone()
            };
            let w_max = hw.xbar.w_max;
            let clip = |m: &Matrix| Matrix {
                data: m.data.iter().map(|v| v.clamp(-w_max, w_max)).collect(),
                ..m.clone()
            };
            let xb = |m: &Matrix, tag: u64| {
                CrossbarArray::from_weights(
                    &clip(m),
                    hw.device.clone(),
                    thermal.clone(),
                    hw.xbar.clone(),
                    params.eta,
                    rng::derive_seed(seed, &[4, tag]),
                )
            };
            let w_in = xb(&init.w_in, 0)?;
            let w_rec = init.w_rec.as_ref().map(|m| xb(m, 1)).transpose()?;
            let net = EpropNet::new(params.clone(), w_in, w_rec, init.w_out)?;
            run_epochs(net, cfg, data, seed, Some(psi_max))
        }
    }
}

fn run_epochs<S: Synapses>(
    mut net: EpropNet<S>,
    cfg: &SeqTaskConfig,
    data: &Dataset,
    seed: u64,
    psi_max: Option<f64>,
) -> Result<SeqRecord> {
    let mut rec = SeqRecord {
        train_accuracy: Vec::new(),
        test_accuracy: Vec::new(),
        psi_max,
    };
    for epoch in 0..cfg.epochs {
        let order = shuffled(&data.train, rng::derive_seed(seed, &[1, epoch as u64]));
        let (mut correct, mut total) = (0, 0);
        for &k in &order {
            let s = &data.samples[k];
            let spikes = encode_spikes(s, cfg.rate_min, cfg.rate_max, spike_seed(seed, k, epoch));
            correct += train_frame(&mut net, &spikes, &s.labels)?;
            total += s.labels.len();
        }
        rec.train_accuracy.push(correct as f64 / total.max(1) as f64);
        let w_in = net.w_in.weights();
        let w_rec = net.w_rec.as_ref().map(|r| r.weights());
        rec.test_accuracy.push(evaluate(
            &net.params,
            &w_in,
            w_rec.as_ref(),
            &net.w_out,
            data,
            &data.test,
            cfg,
            seed,
        )?);
    }
    Ok(rec)
}
