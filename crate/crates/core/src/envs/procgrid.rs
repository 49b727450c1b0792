use std::collections::VecDeque;
use std::sync::Arc;

use super::{Action, ActionSpace, Env, EnvSpec, Transition};
use crate::numkit::{mix64, Rng};
use crate::{Error, Result};

pub const GRID: usize = 9;
pub const CELLS: usize = GRID * GRID;
pub const CHANNELS: usize = 4;
pub const N_ACTIONS: usize = 4;

const SPEC: EnvSpec = EnvSpec {
    name: "procgrid",
    obs_dim: CELLS * CHANNELS,
    action: ActionSpace::Discrete(N_ACTIONS),
    max_episode_steps: 100,
    reward_note: "+10 coin (success, terminal), -10 hazard (terminal), -0.01 otherwise",
};

const COIN_REWARD: f64 = 10.0;
const HAZARD_REWARD: f64 = -10.0;
const STEP_REWARD: f64 = -0.01;

/// Wall density range a level draws from.
const DENSITY_RANGE: (f64, f64) = (0.05, 0.25);

/// Layout of one 9×9 level.
///
/// The start sits in the leftmost column and the coin in the rightmost, so
/// every level asks the agent to cross the grid. Generation retries until a
/// path from start to coin exists that avoids both walls and hazards.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Level {
    pub seed: u64,
    pub walls: Vec<bool>,
    pub hazards: Vec<usize>,
    pub start: usize,
    pub coin: usize,
}

fn neighbor(cell: usize, action: usize) -> Option<usize> {
    let (r, c) = (cell / GRID, cell % GRID);
    match action {
        0 if r > 0 => Some(cell - GRID),
        1 if r + 1 < GRID => Some(cell + GRID),
        2 if c > 0 => Some(cell - 1),
        3 if c + 1 < GRID => Some(cell + 1),
        _ => None,
    }
}

impl Level {
    pub fn generate(seed: u64) -> Self {
        let mut rng = Rng::new(mix64(seed));
        loop {
            let density = rng.uniform_range(DENSITY_RANGE.0, DENSITY_RANGE.1);
            let mut walls: Vec<bool> = (0..CELLS).map(|_| rng.uniform() < density).collect();
            let start = rng.below(GRID) * GRID;
            let coin = rng.below(GRID) * GRID + GRID - 1;
            walls[start] = false;
            walls[coin] = false;
            let n_hazards = 1 + rng.below(3);
            let mut hazards = Vec::with_capacity(n_hazards);
            while hazards.len() < n_hazards {
                let cell = rng.below(CELLS);
                if !walls[cell] && cell != start && cell != coin && !hazards.contains(&cell) {
                    hazards.push(cell);
                }
            }
            hazards.sort_unstable();
            let level = Self {
                seed,
                walls,
                hazards,
                start,
                coin,
            };
            if level.shortest_path(level.start).is_some() {
                return level;
            }
        }
    }

    pub fn is_blocked(&self, cell: usize) -> bool {
        self.walls[cell]
    }

    pub fn is_hazard(&self, cell: usize) -> bool {
        self.hazards.contains(&cell)
    }

    /// Cell reached by `action` from `cell`; walls and edges leave it in place.
    pub fn move_from(&self, cell: usize, action: usize) -> usize {
        match neighbor(cell, action) {
            Some(n) if !self.walls[n] => n,
            _ => cell,
        }
    }

    /// Breadth-first shortest action sequence from `from` to the coin that
    /// avoids walls and hazards.
    pub fn shortest_path(&self, from: usize) -> Option<Vec<usize>> {
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; CELLS];
        let mut seen = [false; CELLS];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(cell) = queue.pop_front() {
            if cell == self.coin {
                let mut actions = Vec::new();
                let mut cur = cell;
                while let Some((p, a)) = prev[cur] {
                    actions.push(a);
                    cur = p;
                }
                actions.reverse();
                return Some(actions);
            }
            for a in 0..N_ACTIONS {
                if let Some(n) = neighbor(cell, a) {
                    if !seen[n] && !self.walls[n] && !self.is_hazard(n) {
                        seen[n] = true;
                        prev[n] = Some((cell, a));
                        queue.push_back(n);
                    }
                }
            }
        }
        None
    }

    /// One-hot `(wall, hazard, coin, agent)` channels, cell-major.
    pub fn observation(&self, agent: usize) -> Vec<f64> {
        let mut obs = vec![0.0; CELLS * CHANNELS];
        for cell in 0..CELLS {
            if self.walls[cell] {
                obs[cell * CHANNELS] = 1.0;
            }
        }
        for &h in &self.hazards {
            obs[h * CHANNELS + 1] = 1.0;
        }
        obs[self.coin * CHANNELS + 2] = 1.0;
        obs[agent * CHANNELS + 3] = 1.0;
        obs
    }
}

/// Recovers the agent cell from a ProcGrid observation.
pub fn agent_cell(obs: &[f64]) -> Option<usize> {
    (0..CELLS).find(|&c| obs.get(c * CHANNELS + 3) == Some(&1.0))
}

/// Grid task that plays one level per episode, drawn from a fixed pool.
#[derive(Clone, Debug)]
pub struct ProcGrid {
    levels: Arc<Vec<Level>>,
    current: usize,
    agent: usize,
    t: usize,
    ended: bool,
}

impl ProcGrid {
    pub fn single(level_seed: u64) -> Self {
        Self::with_levels(Arc::new(vec![Level::generate(level_seed)]))
    }

    pub fn with_levels(levels: Arc<Vec<Level>>) -> Self {
        assert!(!levels.is_empty(), "ProcGrid needs at least one level");
        Self {
            levels,
            current: 0,
            agent: 0,
            t: 0,
            ended: true,
        }
    }

    pub fn level(&self) -> &Level {
        &self.levels[self.current]
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    /// Starts an episode on a specific level index of the pool.
    pub fn reset_to_level(&mut self, index: usize) -> Vec<f64> {
        self.current = index;
        self.agent = self.levels[index].start;
        self.t = 0;
        self.ended = false;
        self.level().observation(self.agent)
    }
}

impl Env for ProcGrid {
    fn spec(&self) -> &EnvSpec {
        &SPEC
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let index = if self.levels.len() == 1 {
            0
        } else {
            Rng::new(seed).below(self.levels.len())
        };
        self.reset_to_level(index)
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        if self.ended {
            return Err(Error::StepAfterDone);
        }
        let a = match *action {
            Action::Discrete(a) if a < N_ACTIONS => a,
            Action::Discrete(a) => {
                return Err(Error::ActionOutOfRange {
                    action: a,
                    n: N_ACTIONS,
                })
            }
            Action::Continuous(_) => return Err(Error::KindMismatch),
        };
        let state = self.level().observation(self.agent);
        self.agent = self.level().move_from(self.agent, a);
        self.t += 1;
        let (reward, done, success) = if self.agent == self.level().coin {
            (COIN_REWARD, true, true)
        } else if self.level().is_hazard(self.agent) {
            (HAZARD_REWARD, true, false)
        } else {
            (STEP_REWARD, false, false)
        };
        let truncated = !done && self.t >= SPEC.max_episode_steps;
        self.ended = done || truncated;
        Ok(Transition {
            state,
            action: action.clone(),
            reward,
            next_state: self.level().observation(self.agent),
            done,
            truncated,
            success,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_layout() {
        assert_eq!(Level::generate(12), Level::generate(12));
        assert_ne!(Level::generate(12), Level::generate(13));
    }

    #[test]
    fn layout_invariants() {
        for seed in 0..200 {
            let l = Level::generate(seed);
            assert!((1..=3).contains(&l.hazards.len()));
            assert!(!l.walls[l.start] && !l.walls[l.coin]);
            assert!(!l.is_hazard(l.start) && !l.is_hazard(l.coin));
            assert_eq!(l.start % GRID, 0);
            assert_eq!(l.coin % GRID, GRID - 1);
        }
    }

    #[test]
    fn observation_is_one_hot_grid() {
        let l = Level::generate(5);
        let obs = l.observation(l.start);
        assert_eq!(obs.len(), 324);
        assert_eq!(agent_cell(&obs), Some(l.start));
        assert_eq!(
            obs.iter().filter(|&&x| x == 1.0).count(),
            l.walls.iter().filter(|&&w| w).count() + l.hazards.len() + 2
        );
    }

    #[test]
    fn following_shortest_path_collects_coin() {
        let mut env = ProcGrid::single(77);
        env.reset(0);
        let path = env.level().shortest_path(env.agent()).unwrap();
        let mut total = 0.0;
        for (i, &a) in path.iter().enumerate() {
            let tr = env.step(&Action::Discrete(a)).unwrap();
            total += tr.reward;
            assert_eq!(tr.done, i + 1 == path.len());
        }
        assert!(env.ended);
        assert!((total - (10.0 - 0.01 * (path.len() - 1) as f64)).abs() < 1e-12);
    }

    #[test]
    fn bad_action_rejected() {
        let mut env = ProcGrid::single(1);
        env.reset(0);
        assert!(env.step(&Action::Discrete(4)).is_err());
        assert!(env.step(&Action::Continuous(vec![0.0])).is_err());
    }

    #[test]
    fn standing_still_truncates() {
        let mut env = ProcGrid::single(2);
        env.reset(0);
        // Moving left from the leftmost column never changes the cell.
        for t in 0..100 {
            let tr = env.step(&Action::Discrete(2)).unwrap();
            assert_eq!(tr.truncated, t == 99);
            assert!(!tr.done);
        }
    }
}
