//! Experiment configuration, seeded sweeps and reporting.
//!
//! An experiment is one task (maze or sequence classification) in one
//! synapse mode, a set of sweep axes whose cartesian product forms the
//! cells, and `runs_per_cell` independent runs per cell. Seeds:
//!
//! * run `r` of cell `c`: `derive_seed(seed, [c, r])`, or
//!   `derive_seed(seed, [0, r])` for every cell when `paired = true`
//!   (common random numbers across cells);
//! * maze layout of run `r`: `derive_seed(seed, [LAYOUT_TAG, r])`
//!   (`r = 0` for every run with `layout_mode = "fixed"`), the same in every cell;
//! * sequence dataset of run `r`: `derive_seed(seed, [DATA_TAG, r])`, the
//!   same in every cell.

pub mod report;
pub mod stats;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::DeviceParams;
use crate::eprop::LifParams;
use crate::error::{Error, Result};
use crate::fdm::{self, GeometrySpec, Pulse};
use crate::rng::derive_seed;
use crate::tasks::maze::{self, Layout, LayoutMode, MazeConfig, MazeHardware};
use crate::tasks::seq::{self, Dataset, SeqHardware, SeqTaskConfig};
use crate::thermal::{decay_factor, ThermalParams};
use crate::xbar::{nearest_neighbour_table, XbarParams};

pub const LAYOUT_TAG: u64 = 1 << 40;
pub const DATA_TAG: u64 = (1 << 40) + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Maze,
    Seq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynapseMode {
    Ideal,
    Hardware,
}

/// A sweep value: a number, or an `[F, K]` pair for the `fk` axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Num(f64),
    Pair([f64; 2]),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Num(v) => f.write_str(&report::fmt_g6(*v)),
            SweepValue::Pair([a, b]) => write!(f, "{}:{}", report::fmt_g6(*a), report::fmt_g6(*b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<SweepValue>,
}

/// Parameters a sweep axis may name.
pub const SWEEP_PARAMS: &[(&str, &str)] = &[
    ("gamma", "maze: eligibility decay; seq: crossbar λ"),
    ("lambda", "alias of gamma"),
    ("tau_th", "thermal time constant; λ = 1 − t_step/τ_TH"),
    ("d_v", "device-to-device variability"),
    ("c_v", "cycle-to-cycle variability"),
    ("variability", "sets d_v and c_v together"),
    ("alpha", "read temperature coefficient"),
    ("bits", "quantization bits, 0 = continuous"),
    ("crosstalk_scale", "multiplier on the coupling table"),
    ("crosstalk", "nearest-neighbour coupling, side = diagonal = value"),
    ("fk", "[F, K] in nm: coupling table from the voxel model"),
    ("eta", "learning rate (maze or e-prop)"),
    ("n", "maze side"),
    ("noise", "synthetic task noise"),
    ("w_max", "crossbar weight range"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub synapse_mode: SynapseMode,
    pub runs_per_cell: usize,
    /// Master seed.
    pub seed: u64,
    /// Worker threads; all cores when absent.
    pub workers: Option<usize>,
    /// Reuse the same run seeds in every cell.
    pub paired: bool,
    /// Record wall time per run (makes JSON output non-reproducible).
    pub timing: bool,
    /// Maze layout JSON; overrides random placement.
    pub layout_file: Option<String>,
    /// Feature file for the sequence task; overrides the synthetic generator.
    pub feature_file: Option<String>,
    pub device: DeviceParams,
    pub thermal: ThermalParams,
    pub xbar: XbarParams,
    pub lif: LifParams,
    pub maze: MazeConfig,
    pub seq: SeqTaskConfig,
    pub geometry: GeometrySpec,
    pub pulse: Pulse,
    pub sweep: Vec<SweepAxis>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Maze,
            synapse_mode: SynapseMode::Ideal,
            runs_per_cell: 20,
            seed: 0,
            workers: None,
            paired: false,
            timing: false,
            layout_file: None,
            feature_file: None,
            device: DeviceParams::default(),
            thermal: ThermalParams::default(),
            xbar: XbarParams::default(),
            lif: LifParams::default(),
            maze: MazeConfig::default(),
            seq: SeqTaskConfig::default(),
            geometry: GeometrySpec::default(),
            pulse: Pulse::default(),
            sweep: Vec::new(),
        }
    }
}

/// One sweep cell: its coordinates and fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub coords: Vec<Coord>,
    pub cfg: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coord {
    pub param: String,
    pub value: SweepValue,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            return serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()));
        }
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks the base blocks and every cell; nothing runs on failure.
    pub fn validate(&self) -> Result<()> {
        self.cells().map(|_| ())
    }

    fn validate_blocks(&self) -> Result<()> {
        if self.runs_per_cell == 0 {
            return Err(Error::Config("runs_per_cell must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.device.validate()?;
        self.thermal.validate()?;
        self.xbar.validate()?;
        match self.task {
            Task::Maze => self.maze.validate(),
            Task::Seq => {
                self.lif.validate()?;
                self.seq.validate()
            }
        }
    }

    /// Expands the sweep (first axis slowest) and validates every cell.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        for axis in &self.sweep {
            if !SWEEP_PARAMS.iter().any(|(p, _)| *p == axis.param) {
                return Err(Error::Config(format!("unknown sweep parameter '{}'", axis.param)));
            }
            if axis.values.is_empty() {
                return Err(Error::Config(format!("sweep '{}' has no values", axis.param)));
            }
        }
        let mut base = self.clone();
        base.sweep.clear();
        let mut cells = vec![(Vec::new(), base)];
        for axis in &self.sweep {
            let mut next = Vec::with_capacity(cells.len() * axis.values.len());
            for (coords, cfg) in &cells {
                for v in &axis.values {
                    let mut c = cfg.clone();
                    apply(&mut c, &axis.param, *v)?;
                    let mut k = coords.clone();
                    k.push(Coord {
                        param: axis.param.clone(),
                        value: *v,
                    });
                    next.push((k, c));
                }
            }
            cells = next;
        }
        cells
            .into_iter()
            .enumerate()
            .map(|(index, (coords, cfg))| {
                cfg.validate_blocks().map_err(|e| {
                    let at: Vec<String> = coords.iter().map(|c| format!("{}={}", c.param, c.value)).collect();
                    Error::Config(format!("cell {index} ({}): {e}", at.join(", ")))
                })?;
                Ok(Cell { index, coords, cfg })
            })
            .collect()
    }

    pub fn maze_hardware(&self) -> MazeHardware {
        MazeHardware {
            device: self.device.clone(),
            thermal: self.thermal.clone(),
            xbar: self.xbar.clone(),
        }
    }

    pub fn seq_hardware(&self) -> SeqHardware {
        SeqHardware {
            device: self.device.clone(),
            thermal: self.thermal.clone(),
            xbar: self.xbar.clone(),
        }
    }

    pub fn run_seed(&self, cell: usize, run: usize) -> u64 {
        let c = if self.paired { 0 } else { cell as u64 };
        derive_seed(self.seed, &[c, run as u64])
    }

    pub fn layout_seed(&self, run: usize) -> u64 {
        let r = match self.maze.layout_mode {
            LayoutMode::Fixed => 0,
            LayoutMode::PerRun => run as u64,
        };
        derive_seed(self.seed, &[LAYOUT_TAG, r])
    }

    pub fn data_seed(&self, run: usize) -> u64 {
        derive_seed(self.seed, &[DATA_TAG, run as u64])
    }
}

fn num(param: &str, v: SweepValue) -> Result<f64> {
    match v {
        SweepValue::Num(x) => Ok(x),
        SweepValue::Pair(_) => Err(Error::Config(format!("sweep '{param}' takes numbers, not pairs"))),
    }
}

/// Sets one sweep parameter on a configuration.
pub fn apply(cfg: &mut ExperimentConfig, param: &str, value: SweepValue) -> Result<()> {
    if param == "fk" {
        let SweepValue::Pair([f, k]) = value else {
            return Err(Error::Config("sweep 'fk' takes [F, K] pairs".into()));
        };
        let spec = GeometrySpec {
            f_nm: f,
            k_nm: k,
            ..cfg.geometry.clone()
        };
        let (_, res) = fdm::cell_coupling(&spec, &cfg.pulse)?;
        cfg.xbar.coupling = res.coupling_table();
        cfg.xbar.coupling_file = None;
        return Ok(());
    }
    let x = num(param, value)?;
    match param {
        "gamma" | "lambda" => match cfg.task {
            Task::Maze => cfg.maze.gamma = x,
            Task::Seq => cfg.xbar.gamma = Some(x),
        },
        "tau_th" => {
            cfg.thermal.tau_th = x;
            match cfg.task {
                Task::Maze => cfg.maze.gamma = decay_factor(cfg.xbar.t_step, x),
                Task::Seq => cfg.xbar.gamma = None,
            }
        }
        "d_v" => cfg.device.d_v = x,
        "c_v" => cfg.device.c_v = x,
        "variability" => {
            cfg.device.d_v = x;
            cfg.device.c_v = x;
        }
        "alpha" => cfg.device.alpha = x,
        "bits" => {
            if x < 0.0 || x.fract() != 0.0 || x > 32.0 {
                return Err(Error::Config(format!("bits must be an integer in 0..=32, got {x}")));
            }
            cfg.device.bits = (x > 0.0).then_some(x as u32);
        }
        "crosstalk_scale" => cfg.xbar.coupling_scale = x,
        "crosstalk" => cfg.xbar.coupling = nearest_neighbour_table(x, x),
        "eta" => match cfg.task {
            Task::Maze => cfg.maze.eta = x,
            Task::Seq => cfg.lif.eta = x,
        },
        "n" => {
            if x < 2.0 || x.fract() != 0.0 {
                return Err(Error::Config(format!("maze side must be an integer ≥ 2, got {x}")));
            }
            cfg.maze.n = x as usize;
        }
        "noise" => cfg.seq.noise = x,
        "w_max" => cfg.xbar.w_max = x,
        other => return Err(Error::Config(format!("unknown sweep parameter '{other}'"))),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum Metrics {
    Maze {
        episodes_to_benchmark: usize,
        success: bool,
        episodes: usize,
    },
    Seq {
        train_accuracy: Vec<f64>,
        test_accuracy: Vec<f64>,
        psi_max: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunError {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for RunError {
    fn from(e: &Error) -> Self {
        RunError {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: usize,
    pub coords: Vec<Coord>,
    pub run: usize,
    pub seed: u64,
    pub metrics: Option<Metrics>,
    pub error: Option<RunError>,
    pub wall_time_s: Option<f64>,
}

impl RunRecord {
    /// Named scalar metrics used for aggregation, in a fixed order.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        match &self.metrics {
            Some(Metrics::Maze {
                episodes_to_benchmark,
                success,
                ..
            }) => vec![
                ("episodes_to_benchmark", *episodes_to_benchmark as f64),
                ("success", f64::from(u8::from(*success))),
            ],
            Some(Metrics::Seq {
                train_accuracy,
                test_accuracy,
                ..
            }) => vec![
                ("test_accuracy", test_accuracy.last().copied().unwrap_or(0.0)),
                ("train_accuracy", train_accuracy.last().copied().unwrap_or(0.0)),
            ],
            None => Vec::new(),
        }
    }
}

/// Inputs shared by every run, loaded once before any run starts.
struct Shared {
    layout: Option<Layout>,
    dataset: Option<Arc<Dataset>>,
}

fn load_shared(cfg: &ExperimentConfig) -> Result<Shared> {
    let layout = match (&cfg.layout_file, cfg.task) {
        (Some(p), Task::Maze) => {
            let l = Layout::load_json(Path::new(p))?;
            if l.n != cfg.maze.n {
                return Err(Error::Config(format!(
                    "layout file is {}×{} but maze.n = {}",
                    l.n, l.n, cfg.maze.n
                )));
            }
            Some(l)
        }
        _ => None,
    };
    let dataset = match (&cfg.feature_file, cfg.task) {
        (Some(p), Task::Seq) => {
            let samples = seq::load_feature_file(Path::new(p), None)?;
            Some(Arc::new(seq::dataset_from_samples(samples, None)?))
        }
        _ => None,
    };
    Ok(Shared { layout, dataset })
}

fn run_one(cell: &Cell, run: usize, shared: &Shared) -> Result<Metrics> {
    let c = &cell.cfg;
    let seed = c.run_seed(cell.index, run);
    let hardware = c.synapse_mode == SynapseMode::Hardware;
    match c.task {
        Task::Maze => {
            let layout = match &shared.layout {
                Some(l) => l.clone(),
                None => maze::resolve_layout(&c.maze, c.layout_seed(run))?,
            };
            let hw = hardware.then(|| c.maze_hardware());
            let rec = maze::run_training(&c.maze, &layout, hw.as_ref(), seed)?;
            Ok(Metrics::Maze {
                episodes_to_benchmark: rec.episodes_to_benchmark,
                success: rec.success,
                episodes: rec.episodes,
            })
        }
        Task::Seq => {
            let data = match &shared.dataset {
                Some(d) => Arc::clone(d),
                None => Arc::new(seq::generate_sequence_dataset(&SeqTaskConfig {
                    seed: c.data_seed(run),
                    ..c.seq.clone()
                })?),
            };
            let hw = hardware.then(|| c.seq_hardware());
            let rec = seq::train_sequence(&c.seq, &c.lif, &data, hw.as_ref(), seed)?;
            Ok(Metrics::Seq {
                train_accuracy: rec.train_accuracy,
                test_accuracy: rec.test_accuracy,
                psi_max: rec.psi_max,
            })
        }
    }
}

/// Runs every cell × run. Configuration errors abort before any run;
/// errors inside a run are recorded on its record.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let cells = cfg.cells()?;
    let shared = load_shared(cfg)?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.runs_per_cell).map(move |r| (c, r)))
        .collect();
    let work = |&(c, r): &(usize, usize)| {
        let cell = &cells[c];
        let t0 = Instant::now();
        let out = run_one(cell, r, &shared);
        let wall = cfg.timing.then(|| t0.elapsed().as_secs_f64());
        let (metrics, error) = match out {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(RunError::from(&e))),
        };
        RunRecord {
            cell: c,
            coords: cell.coords.clone(),
            run: r,
            seed: cell.cfg.run_seed(c, r),
            metrics,
            error,
            wall_time_s: wall,
        }
    };
    let threads = cfg.workers.unwrap_or_else(|| {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    });
    if threads == 1 {
        return Ok(jobs.iter().map(work).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(work).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub coords: Vec<Coord>,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub failed: usize,
}

/// Mean and sample std of every scalar metric per cell, in cell order.
pub fn aggregate(records: &[RunRecord]) -> Vec<CellSummary> {
    let mut cells: Vec<usize> = records.iter().map(|r| r.cell).collect();
    cells.sort_unstable();
    cells.dedup();
    let mut out = Vec::new();
    for c in cells {
        let rs: Vec<&RunRecord> = records.iter().filter(|r| r.cell == c).collect();
        let failed = rs.iter().filter(|r| r.error.is_some()).count();
        let names: Vec<&str> = rs
            .iter()
            .find_map(|r| r.metrics.as_ref().map(|_| r.scalars()))
            .map(|s| s.iter().map(|(n, _)| *n).collect())
            .unwrap_or_default();
        if names.is_empty() {
            out.push(CellSummary {
                cell: c,
                coords: rs[0].coords.clone(),
                metric: "none".into(),
                mean: f64::NAN,
                std: f64::NAN,
                n: 0,
                failed,
            });
            continue;
        }
        for name in names {
            let xs: Vec<f64> = rs
                .iter()
                .flat_map(|r| r.scalars())
                .filter(|(n, _)| *n == name)
                .map(|(_, v)| v)
                .collect();
            out.push(CellSummary {
                cell: c,
                coords: rs[0].coords.clone(),
                metric: name.to_string(),
                mean: stats::mean(&xs),
                std: stats::std_dev(&xs),
                n: xs.len(),
                failed,
            });
        }
    }
    out
}

/// Per-cell values of one scalar metric, in run order, for statistics.
pub fn metric_by_cell(records: &[RunRecord], metric: &str) -> Vec<Vec<f64>> {
    let n_cells = records.iter().map(|r| r.cell + 1).max().unwrap_or(0);
    let mut out = vec![Vec::new(); n_cells];
    for r in records {
        if let Some((_, v)) = r.scalars().into_iter().find(|(n, _)| *n == metric) {
            out[r.cell].push(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_maze() -> ExperimentConfig {
        ExperimentConfig {
            runs_per_cell: 2,
            workers: Some(1),
            maze: MazeConfig {
                n: 3,
                max_episodes: 30,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn single_cell_single_run() {
        let cfg = ExperimentConfig {
            runs_per_cell: 1,
            ..tiny_maze()
        };
        let recs = run_experiment(&cfg).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].error.is_none());
    }

    #[test]
    fn sweep_grid_counts() {
        let cfg = ExperimentConfig {
            runs_per_cell: 3,
            sweep: vec![SweepAxis {
                param: "gamma".into(),
                values: [0.0, 0.25, 0.5, 0.75, 1.0].map(SweepValue::Num).to_vec(),
            }],
            ..tiny_maze()
        };
        let recs = run_experiment(&cfg).unwrap();
        assert_eq!(recs.len(), 15);
        let agg = aggregate(&recs);
        let rows = agg.iter().filter(|s| s.metric == "episodes_to_benchmark").count();
        assert_eq!(rows, 5);
    }

    #[test]
    fn bad_cell_rejected_before_running() {
        let cfg = ExperimentConfig {
            sweep: vec![SweepAxis {
                param: "gamma".into(),
                values: vec![SweepValue::Num(0.5), SweepValue::Num(1.5)],
            }],
            ..tiny_maze()
        };
        assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
        let unknown = ExperimentConfig {
            sweep: vec![SweepAxis {
                param: "colour".into(),
                values: vec![SweepValue::Num(1.0)],
            }],
            ..tiny_maze()
        };
        assert!(matches!(unknown.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn run_failure_is_recorded_not_fatal() {
        let cfg = ExperimentConfig {
            task: Task::Seq,
            runs_per_cell: 1,
            workers: Some(1),
            synapse_mode: SynapseMode::Hardware,
            seq: SeqTaskConfig {
                n_in: 4,
                n_hidden: 6,
                n_out: 2,
                frames: 8,
                samples_per_class: 5,
                epochs: 1,
                // silent inputs: psi calibration finds no activity
                rate_min: 0.0,
                rate_max: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let recs = run_experiment(&cfg).unwrap();
        assert_eq!(recs[0].error.as_ref().unwrap().kind, "degenerate");
        let agg = aggregate(&recs);
        assert_eq!(agg[0].failed, 1);
    }

    #[test]
    fn paired_seeds_ignore_cell() {
        let cfg = ExperimentConfig {
            paired: true,
            ..tiny_maze()
        };
        assert_eq!(cfg.run_seed(0, 3), cfg.run_seed(4, 3));
        let unpaired = tiny_maze();
        assert_ne!(unpaired.run_seed(0, 3), unpaired.run_seed(4, 3));
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let cfg = ExperimentConfig {
            sweep: vec![SweepAxis {
                param: "fk".into(),
                values: vec![SweepValue::Pair([60.0, 120.0])],
            }],
            ..Default::default()
        };
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(matches!(
            ExperimentConfig::from_toml("runs_per_cel = 3"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bits_zero_means_continuous() {
        let mut cfg = ExperimentConfig::default();
        apply(&mut cfg, "bits", SweepValue::Num(0.0)).unwrap();
        assert_eq!(cfg.device.bits, None);
        apply(&mut cfg, "bits", SweepValue::Num(6.0)).unwrap();
        assert_eq!(cfg.device.bits, Some(6));
        assert!(apply(&mut cfg, "bits", SweepValue::Num(6.5)).is_err());
    }
}
