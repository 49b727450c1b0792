//! Desk-scale environments.
//!
//! Two analytic continuous-control tasks ([`PointMass`], [`PendulumLite`])
//! and a procedurally generated grid task ([`ProcGrid`]) with disjoint
//! seen/unseen level sets. Every environment is deterministic given its
//! reset seed and action sequence.

mod levels;
mod pendulum;
mod pointmass;
mod procgrid;
mod vec_env;

pub use levels::{check_disjoint, make_levelsets, read_manifest, write_manifest, LevelSet, Split};
pub use pendulum::PendulumLite;
pub use pointmass::PointMass;
pub use procgrid::{agent_cell, Level, ProcGrid, GRID, N_ACTIONS as PROCGRID_ACTIONS};
pub use vec_env::{EpisodeStat, VecEnv, VecStep};

use std::sync::Arc;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Continuous(Vec<f64>),
    Discrete(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionSpace {
    /// Box `[-1, 1]^n`.
    Continuous(usize),
    /// `n` discrete choices.
    Discrete(usize),
}

impl ActionSpace {
    pub fn dim(&self) -> usize {
        match *self {
            Self::Continuous(n) | Self::Discrete(n) => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub obs_dim: usize,
    pub action: ActionSpace,
    pub max_episode_steps: usize,
    pub reward_note: &'static str,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Terminal state reached.
    pub done: bool,
    /// Time limit reached without a terminal state.
    pub truncated: bool,
    /// Episode ended in the success terminal (ProcGrid coin).
    pub success: bool,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode; the seed fully determines the initial state.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advances one step. Errors if the episode has already ended.
    fn step(&mut self, action: &Action) -> Result<Transition>;
}

/// Environment selector used by configs and the CLI.
#[derive(Clone, Debug)]
pub enum EnvKind {
    PointMass,
    PendulumLite,
    /// Episodes sample uniformly from these pre-generated levels.
    ProcGrid(Arc<Vec<Level>>),
}

impl EnvKind {
    /// Continuous tasks by name (`pointmass`, `pendulum_lite`).
    pub fn continuous(name: &str) -> Result<Self> {
        match name {
            "pointmass" => Ok(Self::PointMass),
            "pendulum_lite" => Ok(Self::PendulumLite),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }

    pub fn procgrid(levels: &LevelSet) -> Self {
        Self::ProcGrid(Arc::new(levels.seeds.iter().map(|&s| Level::generate(s)).collect()))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::PointMass => "pointmass",
            Self::PendulumLite => "pendulum_lite",
            Self::ProcGrid(_) => "procgrid",
        }
    }

    pub fn build(&self) -> Box<dyn Env> {
        match self {
            Self::PointMass => Box::new(PointMass::new()),
            Self::PendulumLite => Box::new(PendulumLite::new()),
            Self::ProcGrid(levels) => Box::new(ProcGrid::with_levels(levels.clone())),
        }
    }

    pub fn spec(&self) -> EnvSpec {
        self.build().spec().clone()
    }
}

/// Builds one of the continuous tasks by name.
pub fn make_continuous(name: &str) -> Result<Box<dyn Env>> {
    Ok(EnvKind::continuous(name)?.build())
}

/// Single-level grid environment.
pub fn make_procgrid(level_seed: u64) -> ProcGrid {
    ProcGrid::single(level_seed)
}

pub(crate) fn clip_action(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| x.clamp(-1.0, 1.0)).collect()
}

pub(crate) fn expect_continuous(action: &Action, dim: usize) -> Result<&[f64]> {
    match action {
        Action::Continuous(a) if a.len() == dim => Ok(a),
        Action::Continuous(a) => Err(Error::Width {
            what: "action",
            expected: dim,
            got: a.len(),
        }),
        Action::Discrete(_) => Err(Error::KindMismatch),
    }
}
