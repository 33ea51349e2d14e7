//! Grid maze solved by a single layer of four LIF action neurons driven by a
//! one-hot position input, trained with a reward-modulated eligibility rule.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::device::DeviceParams;
use crate::eprop::Matrix;
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};
use crate::thermal::ThermalParams;
use crate::xbar::{write_gain_for, CrossbarArray, XbarParams};

pub type Pos = [usize; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutMode {
    /// A fresh layout for every run index, shared by all sweep cells.
    PerRun,
    /// One layout for every run.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazeConfig {
    pub n: usize,
    /// Explicit layout; random placement when absent.
    pub cheese: Option<Pos>,
    pub traps: Option<Vec<Pos>>,
    /// Trap count for random layouts; defaults to ⌈n/2⌉.
    pub n_traps: Option<usize>,
    pub layout_mode: LayoutMode,
    /// Episode rewards; default `+n` and `−n`.
    pub r_best: Option<f64>,
    pub r_worst: Option<f64>,
    pub r_step: f64,
    pub chi: f64,
    /// Eligibility decay γ (the per-step thermal retention in hardware).
    pub gamma: f64,
    pub eta: f64,
    /// Per-step retention of the action neurons' membrane potential.
    pub v_decay: f64,
    /// Std of the initial weights.
    pub w_init: f64,
    /// Step cap per episode; default `4n²`.
    pub max_steps: Option<usize>,
    pub max_episodes: usize,
    pub benchmark_streak: usize,
}

impl Default for MazeConfig {
    fn default() -> Self {
        MazeConfig {
            n: 5,
            cheese: None,
            traps: None,
            n_traps: None,
            layout_mode: LayoutMode::Fixed,
            r_best: None,
            r_worst: None,
            r_step: -0.3,
            chi: 0.5,
            gamma: 0.5,
            eta: 3.0,
            v_decay: 0.95,
            w_init: 0.01,
            max_steps: None,
            max_episodes: 400,
            benchmark_streak: 5,
        }
    }
}

impl MazeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Param(format!("maze: {m}")));
        if self.n < 2 {
            return bad("n must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.v_decay) {
            return bad("v_decay outside [0, 1]".into());
        }
        if !(self.eta > 0.0) || self.max_episodes == 0 || self.benchmark_streak == 0 {
            return bad("eta, max_episodes and benchmark_streak must be positive".into());
        }
        if self.r_best() <= 0.0 {
            return bad("r_best must be positive".into());
        }
        if self.n_traps() + 2 > self.n * self.n {
            return bad("too many traps for the grid".into());
        }
        if let Some(c) = self.cheese {
            let layout = Layout {
                n: self.n,
                cheese: c,
                traps: self.traps.clone().unwrap_or_default(),
            };
            layout.validate()?;
        }
        Ok(())
    }

    pub fn r_best(&self) -> f64 {
        self.r_best.unwrap_or(self.n as f64)
    }

    pub fn r_worst(&self) -> f64 {
        self.r_worst.unwrap_or(-(self.n as f64))
    }

    pub fn n_traps(&self) -> usize {
        self.n_traps.unwrap_or(self.n.div_ceil(2))
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps.unwrap_or(4 * self.n * self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n: usize,
    pub cheese: Pos,
    pub traps: Vec<Pos>,
}

impl Layout {
    pub fn validate(&self) -> Result<()> {
        let inside = |p: &Pos| p[0] < self.n && p[1] < self.n;
        if !inside(&self.cheese) || !self.traps.iter().all(inside) {
            return Err(Error::Param("maze: position outside the grid".into()));
        }
        if self.traps.contains(&self.cheese) {
            return Err(Error::Param("maze: cheese placed on a trap".into()));
        }
        Ok(())
    }

    pub fn is_trap(&self, p: Pos) -> bool {
        self.traps.contains(&p)
    }

    pub fn is_terminal(&self, p: Pos) -> bool {
        p == self.cheese || self.is_trap(p)
    }

    /// Every non-trap cell reaches the cheese without crossing a trap.
    pub fn solvable(&self) -> bool {
        let n = self.n;
        let mut seen = vec![false; n * n];
        let mut q = VecDeque::from([self.cheese]);
        seen[self.cheese[0] * n + self.cheese[1]] = true;
        while let Some(p) = q.pop_front() {
            for a in Action::ALL {
                let nb = move_clamped(p, a, n);
                let k = nb[0] * n + nb[1];
                if !seen[k] && !self.is_trap(nb) {
                    seen[k] = true;
                    q.push_back(nb);
                }
            }
        }
        (0..n * n).all(|k| seen[k] || self.is_trap([k / n, k % n]))
    }

    /// Random solvable layout with one cheese and `n_traps` traps.
    pub fn random(n: usize, n_traps: usize, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed);
        for _ in 0..10_000 {
            let mut cells: Vec<usize> = (0..n * n).collect();
            for k in 0..=n_traps {
                let pick = k + (rng::uniform(&mut r) * (cells.len() - k) as f64) as usize;
                cells.swap(k, pick);
            }
            let layout = Layout {
                n,
                cheese: [cells[0] / n, cells[0] % n],
                traps: cells[1..=n_traps].iter().map(|&c| [c / n, c % n]).collect(),
            };
            if layout.solvable() {
                return Ok(layout);
            }
        }
        Err(Error::Param(format!("maze: no solvable layout with {n_traps} traps")))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).expect("layout serializes");
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let l: Layout =
            serde_json::from_str(&s).map_err(|e| Error::Schema(format!("maze layout: {e}")))?;
        l.validate()?;
        Ok(l)
    }
}

fn move_clamped(p: Pos, a: Action, n: usize) -> Pos {
    let [r, c] = p;
    match a {
        Action::Up => [r.saturating_sub(1), c],
        Action::Down => [(r + 1).min(n - 1), c],
        Action::Left => [r, c.saturating_sub(1)],
        Action::Right => [r, (c + 1).min(n - 1)],
    }
}

/// One move. Walls clamp the position and cost the step penalty.
pub fn env_step(pos: Pos, action: Action, layout: &Layout, cfg: &MazeConfig) -> (Pos, f64, bool) {
    let next = move_clamped(pos, action, layout.n);
    if next == layout.cheese {
        (next, cfg.r_best(), true)
    } else if layout.is_trap(next) {
        (next, cfg.r_worst(), true)
    } else {
        (next, cfg.r_step, false)
    }
}

/// Picks the action neuron with the highest potential (ties to the lowest
/// index) and halves its potential.
pub fn select_action(v: &mut [f64; 4]) -> Action {
    let mut best = 0;
    for k in 1..4 {
        if v[k] > v[best] {
            best = k;
        }
    }
    v[best] *= 0.5;
    Action::ALL[best]
}

/// Decays every trace by γ, then marks the chosen (state, action) pair.
pub fn rl_eligibility_step(e: &mut Matrix, state: usize, action: usize, gamma: f64) {
    for x in e.data.iter_mut() {
        *x *= gamma;
    }
    let v = e.get(state, action);
    e.set(state, action, v + 1.0);
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Reward modulation `σ(Σr / r_best) − χ`.
pub fn modulation(total_reward: f64, cfg: &MazeConfig) -> f64 {
    sigmoid(total_reward / cfg.r_best()) - cfg.chi
}

/// `W += η·(σ(r) − χ)·e`.
pub fn rl_weight_update(w: &mut Matrix, e: &Matrix, total_reward: f64, cfg: &MazeConfig) {
    let m = cfg.eta * modulation(total_reward, cfg);
    for (wij, eij) in w.data.iter_mut().zip(&e.data) {
        *wij += m * eij;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Cheese,
    Trap,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub start: Pos,
    pub steps: usize,
    pub total_reward: f64,
    pub rewards: Vec<f64>,
    pub outcome: Outcome,
}

/// Weight storage of the agent.
#[derive(Debug, Clone)]
pub enum AgentWeights {
    Ideal { w: Matrix, e: Matrix },
    Hardware(Box<CrossbarArray>),
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub weights: AgentWeights,
    pub v: [f64; 4],
}

/// Hardware configuration of the maze agent.
#[derive(Debug, Clone, PartialEq)]
pub struct MazeHardware {
    pub device: DeviceParams,
    pub thermal: ThermalParams,
    pub xbar: XbarParams,
}

impl Agent {
    pub fn ideal(n_states: usize, cfg: &MazeConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed);
        let w = Matrix::from_fn(n_states, 4, |_, _| rng::normal(&mut r, 0.0, cfg.w_init));
        Agent {
            weights: AgentWeights::Ideal {
                w,
                e: Matrix::zeros(n_states, 4),
            },
            v: [0.0; 4],
        }
    }

    /// Crossbar-backed agent. The thermal retention is set to γ.
    pub fn hardware(n_states: usize, cfg: &MazeConfig, hw: &MazeHardware, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed);
        let w_max = hw.xbar.w_max;
        let w = Matrix::from_fn(n_states, 4, |_, _| {
            rng::normal(&mut r, 0.0, cfg.w_init).clamp(-w_max, w_max)
        });
        let gain = hw.xbar.write_gain.unwrap_or_else(|| {
            write_gain_for(&hw.device, &hw.xbar, cfg.eta, CrossbarArray::onehot_rise(&hw.xbar))
        });
        let xbar = XbarParams {
            gamma: Some(cfg.gamma),
            write_gain: Some(gain),
            ..hw.xbar.clone()
        };
        let array = CrossbarArray::from_weights(
            &w,
            hw.device.clone(),
            hw.thermal.clone(),
            xbar,
            cfg.eta,
            rng::derive_seed(seed, &[1]),
        )?;
        Ok(Agent {
            weights: AgentWeights::Hardware(Box::new(array)),
            v: [0.0; 4],
        })
    }

    pub fn weight_matrix(&self) -> Matrix {
        match &self.weights {
            AgentWeights::Ideal { w, .. } => w.clone(),
            AgentWeights::Hardware(a) => a.effective_weights(),
        }
    }

    fn begin_episode(&mut self) {
        self.v = [0.0; 4];
        match &mut self.weights {
            AgentWeights::Ideal { e, .. } => e.fill(0.0),
            AgentWeights::Hardware(a) => a.reset_frame(),
        }
    }

    fn integrate(&mut self, state: usize, decay: f64) -> Result<()> {
        for v in &mut self.v {
            *v *= decay;
        }
        match &mut self.weights {
            AgentWeights::Ideal { w, .. } => {
                for (v, x) in self.v.iter_mut().zip(w.row(state)) {
                    *v += x;
                }
            }
            AgentWeights::Hardware(a) => {
                let mut spikes = vec![0.0; a.rows];
                spikes[state] = 1.0;
                let mut out = [0.0; 4];
                a.spike_integration(&spikes, &mut out)?;
                for (v, x) in self.v.iter_mut().zip(out) {
                    *v += x;
                }
            }
        }
        Ok(())
    }

    fn mark(&mut self, state: usize, action: usize, gamma: f64) -> Result<()> {
        match &mut self.weights {
            AgentWeights::Ideal { e, .. } => {
                rl_eligibility_step(e, state, action, gamma);
                Ok(())
            }
            AgentWeights::Hardware(a) => a.e_update_onehot(state, action, 1.0),
        }
    }

    fn finish(&mut self, total_reward: f64, cfg: &MazeConfig) -> Result<()> {
        match &mut self.weights {
            AgentWeights::Ideal { w, e } => {
                rl_weight_update(w, e, total_reward, cfg);
                Ok(())
            }
            AgentWeights::Hardware(a) => a.weight_update_modulated(modulation(total_reward, cfg)),
        }
    }
}

/// Plays one episode from `start` and applies the reward-modulated update.
pub fn run_episode_from(
    agent: &mut Agent,
    layout: &Layout,
    cfg: &MazeConfig,
    start: Pos,
) -> Result<EpisodeRecord> {
    if layout.is_terminal(start) {
        return Err(Error::Param("maze: episode must start on a free cell".into()));
    }
    agent.begin_episode();
    let mut pos = start;
    let mut rewards = Vec::new();
    let mut outcome = Outcome::Timeout;
    for _ in 0..cfg.max_steps() {
        let state = pos[0] * layout.n + pos[1];
        agent.integrate(state, cfg.v_decay)?;
        let a = select_action(&mut agent.v);
        agent.mark(state, a.index(), cfg.gamma)?;
        let (next, r, done) = env_step(pos, a, layout, cfg);
        rewards.push(r);
        pos = next;
        if done {
            outcome = if next == layout.cheese {
                Outcome::Cheese
            } else {
                Outcome::Trap
            };
            break;
        }
    }
    let total_reward = rewards.iter().sum();
    agent.finish(total_reward, cfg)?;
    Ok(EpisodeRecord {
        start,
        steps: rewards.len(),
        total_reward,
        rewards,
        outcome,
    })
}

/// Uniformly random free start cell.
pub fn random_start(layout: &Layout, r: &mut SimRng) -> Pos {
    let free: Vec<Pos> = (0..layout.n * layout.n)
        .map(|k| [k / layout.n, k % layout.n])
        .filter(|p| !layout.is_terminal(*p))
        .collect();
    free[((rng::uniform(r) * free.len() as f64) as usize).min(free.len() - 1)]
}

pub fn run_episode(agent: &mut Agent, layout: &Layout, cfg: &MazeConfig, seed: u64) -> Result<EpisodeRecord> {
    let mut r = rng::stream(seed);
    let start = random_start(layout, &mut r);
    run_episode_from(agent, layout, cfg, start)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    /// Episodes played when the streak completed, or `max_episodes` on failure.
    pub episodes_to_benchmark: usize,
    pub success: bool,
    pub episodes: usize,
}

/// Layout used by a run: explicit if configured, otherwise drawn from `layout_seed`.
pub fn resolve_layout(cfg: &MazeConfig, layout_seed: u64) -> Result<Layout> {
    match cfg.cheese {
        Some(cheese) => {
            let l = Layout {
                n: cfg.n,
                cheese,
                traps: cfg.traps.clone().unwrap_or_default(),
            };
            l.validate()?;
            Ok(l)
        }
        None => Layout::random(cfg.n, cfg.n_traps(), layout_seed),
    }
}

/// Trains until `benchmark_streak` consecutive cheese episodes or `max_episodes`.
pub fn run_training(
    cfg: &MazeConfig,
    layout: &Layout,
    hardware: Option<&MazeHardware>,
    seed: u64,
) -> Result<TrainingRecord> {
    cfg.validate()?;
    let n_states = layout.n * layout.n;
    let agent_seed = rng::derive_seed(seed, &[0]);
    let mut agent = match hardware {
        None => Agent::ideal(n_states, cfg, agent_seed),
        Some(hw) => Agent::hardware(n_states, cfg, hw, agent_seed)?,
    };
    let mut streak = 0;
    for ep in 0..cfg.max_episodes {
        let rec = run_episode(&mut agent, layout, cfg, rng::derive_seed(seed, &[1, ep as u64]))?;
        if rec.outcome == Outcome::Cheese {
            streak += 1;
            if streak >= cfg.benchmark_streak {
                return Ok(TrainingRecord {
                    episodes_to_benchmark: ep + 1,
                    success: true,
                    episodes: ep + 1,
                });
            }
        } else {
            streak = 0;
        }
    }
    Ok(TrainingRecord {
        episodes_to_benchmark: cfg.max_episodes,
        success: false,
        episodes: cfg.max_episodes,
    })
}
