use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::config::ExperimentConfig;
use super::eval::{eval_generalization, GeneralizationReport, ModePolicy};
use super::metrics::{MetricsRow, MetricsWriter};
use super::summary::{summarize, write_summary, AgentMeta, SummaryTable, AGENT_FILE, METRICS_FILE};
use crate::algos::{train, TrainObserver, UpdateReport};
use crate::envs::{EnvKind, LevelSet};
use crate::numkit::derive_seed;
use crate::policy::{checkpoint, PolicyNetwork};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const FINAL_CHECKPOINT: &str = "final.cpol";
pub const EVAL_FILE: &str = "eval.csv";

/// Seed of agent `agent` under experiment seed `seed`.
pub fn agent_seed(seed: u64, agent: usize) -> u64 {
    derive_seed(seed, agent as u64)
}

pub fn agent_dir(run_dir: &Path, seed: u64, agent: usize) -> PathBuf {
    run_dir.join(format!("seed{seed}-agent{agent}"))
}

pub fn checkpoint_path(agent_dir: &Path, update: usize) -> PathBuf {
    agent_dir.join("checkpoints").join(format!("update{update:06}.cpol"))
}

#[derive(Debug)]
pub struct AgentOutcome {
    pub seed: u64,
    pub agent: usize,
    pub dir: PathBuf,
    /// Finished in an earlier invocation and left untouched.
    pub resumed: bool,
    /// Error text when the agent failed.
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub dir: PathBuf,
    pub agents: Vec<AgentOutcome>,
    pub summary: Option<SummaryTable>,
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.agents.iter().filter(|a| a.error.is_some()).count()
    }
}

struct AgentObserver<'a> {
    dir: &'a Path,
    metrics: MetricsWriter,
    checkpoint_interval: usize,
    eval_interval: usize,
    eval_rows: String,
    levels: Option<&'a (LevelSet, LevelSet)>,
    episodes_per_level: usize,
}

fn eval_line(update: usize, r: &GeneralizationReport) -> String {
    format!(
        "{update},{},{},{},{}\n",
        r.seen.success_rate, r.seen.episodes, r.unseen.success_rate, r.unseen.episodes
    )
}

impl TrainObserver for AgentObserver<'_> {
    fn on_update(&mut self, row: &MetricsRow, _: &UpdateReport, net: &PolicyNetwork) -> Result<()> {
        self.metrics.write(row)?;
        let n = row.update + 1;
        if self.checkpoint_interval > 0 && n.is_multiple_of(self.checkpoint_interval) {
            checkpoint::save(net, &checkpoint_path(self.dir, row.update))?;
        }
        if let Some((seen, unseen)) = self.levels {
            if self.eval_interval > 0 && n.is_multiple_of(self.eval_interval) {
                let r = eval_generalization(&mut ModePolicy(net), seen, unseen, self.episodes_per_level)?;
                self.eval_rows.push_str(&eval_line(row.update, &r));
            }
        }
        Ok(())
    }
}

fn run_agent(
    cfg: &ExperimentConfig,
    env: &EnvKind,
    levels: Option<&(LevelSet, LevelSet)>,
    seed: u64,
    agent: usize,
    dir: &Path,
) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
    let tc = cfg.train_config()?;
    let sub_seed = agent_seed(seed, agent);
    let mut obs = AgentObserver {
        dir,
        metrics: MetricsWriter::create(&dir.join(METRICS_FILE))?,
        checkpoint_interval: cfg.checkpoint_interval,
        eval_interval: cfg.eval.interval,
        eval_rows: String::from("update,seen_success,seen_episodes,unseen_success,unseen_episodes\n"),
        levels,
        episodes_per_level: cfg.eval.episodes_per_level,
    };
    let out = train(env, &tc, sub_seed, &mut obs)?;
    checkpoint::save(&out.net, &dir.join(FINAL_CHECKPOINT))?;
    let mut meta = AgentMeta {
        run: cfg.name.clone(),
        algorithm: cfg.algorithm,
        env: cfg.env.clone(),
        penalty_enabled: tc.penalty_enabled(),
        seed,
        agent,
        sub_seed,
        updates: out.history.len(),
        seen_success: None,
        unseen_success: None,
    };
    if let Some((seen, unseen)) = levels {
        let r = eval_generalization(&mut ModePolicy(&out.net), seen, unseen, cfg.eval.episodes_per_level)?;
        let last = out.history.len().saturating_sub(1);
        if !obs.eval_rows.ends_with(&eval_line(last, &r)) {
            obs.eval_rows.push_str(&eval_line(last, &r));
        }
        let path = dir.join(EVAL_FILE);
        fs::write(&path, &obs.eval_rows).map_err(|e| Error::io(&path, e))?;
        meta.seen_success = Some(r.seen.success_rate);
        meta.unseen_success = Some(r.unseen.success_rate);
    }
    // Last write: marks the agent finished.
    meta.write(dir)
}

fn finished(dir: &Path, cfg: &ExperimentConfig) -> bool {
    AgentMeta::read(dir).is_ok_and(|m| m.run == cfg.name) && dir.join(METRICS_FILE).is_file()
}

/// Trains every (seed, agent) pair of `cfg` under `out_root/<name>` and writes the summary.
///
/// Agents that finished in an earlier invocation with the same stored config are
/// kept; unfinished ones restart from scratch, which reproduces the same bytes.
/// A failing agent is recorded and the others still run.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (env, levels) = cfg.environment()?;
    let run_dir = out_root.join(&cfg.name);
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let text = cfg.to_toml_string()?;
    let cfg_path = run_dir.join(CONFIG_FILE);
    let same_config = fs::read_to_string(&cfg_path).is_ok_and(|old| old == text);
    fs::write(&cfg_path, &text).map_err(|e| Error::io(&cfg_path, e))?;

    let jobs: Vec<(u64, usize)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| (0..cfg.agents_per_seed).map(move |a| (s, a)))
        .collect();
    let results: Mutex<Vec<Option<AgentOutcome>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = cfg.max_parallel_agents.min(jobs.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(seed, agent)) = jobs.get(k) else { break };
                let dir = agent_dir(&run_dir, seed, agent);
                let resumed = same_config && finished(&dir, cfg);
                let error = if resumed {
                    None
                } else {
                    log::info!("{}: training seed {seed} agent {agent}", cfg.name);
                    match catch_unwind(AssertUnwindSafe(|| {
                        run_agent(cfg, &env, levels.as_ref(), seed, agent, &dir)
                    })) {
                        Ok(Ok(())) => None,
                        Ok(Err(e)) => Some(e.to_string()),
                        Err(_) => Some("training panicked".to_string()),
                    }
                };
                if let Some(e) = &error {
                    log::error!("{}: seed {seed} agent {agent} failed: {e}", cfg.name);
                    let _ = fs::write(dir.join("error.txt"), e);
                }
                let outcome = AgentOutcome {
                    seed,
                    agent,
                    dir,
                    resumed,
                    error,
                };
                results.lock().expect("results lock")[k] = Some(outcome);
            });
        }
    });
    let agents: Vec<AgentOutcome> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|o| o.expect("every job ran"))
        .collect();

    let summary = match summarize(std::slice::from_ref(&run_dir)) {
        Ok((table, curves)) => {
            write_summary(&run_dir, &table, &curves)?;
            Some(table)
        }
        Err(e) => {
            log::error!("{}: no summary: {e}", cfg.name);
            None
        }
    };
    Ok(ExperimentReport {
        dir: run_dir,
        agents,
        summary,
    })
}

/// True when `dir` holds a finished agent.
pub fn is_agent_dir(dir: &Path) -> bool {
    dir.join(AGENT_FILE).is_file()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::read_metrics;

    pub(crate) fn tiny(name: &str) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            name: name.into(),
            total_timesteps: Some(128),
            seeds: vec![1],
            metric_probes: 8,
            checkpoint_interval: 1,
            ..ExperimentConfig::default()
        };
        cfg.rollout.n_envs = 2;
        cfg.rollout.steps_per_env = 32;
        cfg.net.hidden = vec![8];
        cfg.ppo.epochs = 2;
        cfg.ppo.minibatch_size = 32;
        cfg
    }

    #[test]
    fn single_agent_layout() {
        let root = tempfile::tempdir().unwrap();
        let r = run_experiment(&tiny("one"), root.path()).unwrap();
        assert_eq!(r.failures(), 0);
        let dir = agent_dir(&r.dir, 1, 0);
        assert_eq!(read_metrics(&dir.join(METRICS_FILE)).unwrap().len(), 2);
        assert!(dir.join(FINAL_CHECKPOINT).is_file());
        assert!(checkpoint_path(&dir, 1).is_file());
        assert!(r.dir.join("summary.csv").is_file());
        assert_eq!(r.summary.unwrap().rows[0].n_agents, 1);
    }

    #[test]
    fn rerun_is_byte_identical_and_resume_skips() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = tiny("det");
        run_experiment(&cfg, a.path()).unwrap();
        run_experiment(&cfg, b.path()).unwrap();
        for f in ["summary.csv", "seed1-agent0/metrics.csv", "seed1-agent0/final.cpol"] {
            assert_eq!(
                fs::read(a.path().join("det").join(f)).unwrap(),
                fs::read(b.path().join("det").join(f)).unwrap()
            );
        }
        let again = run_experiment(&cfg, a.path()).unwrap();
        assert!(again.agents.iter().all(|o| o.resumed));
    }

    #[test]
    fn agents_differ() {
        let root = tempfile::tempdir().unwrap();
        let mut cfg = tiny("many");
        cfg.seeds = vec![1, 2];
        cfg.agents_per_seed = 2;
        cfg.max_parallel_agents = 2;
        let r = run_experiment(&cfg, root.path()).unwrap();
        let params: Vec<Vec<f64>> = r
            .agents
            .iter()
            .map(|o| {
                checkpoint::load(&o.dir.join(FINAL_CHECKPOINT))
                    .unwrap()
                    .parameter_vector()
            })
            .collect();
        assert_eq!(params.len(), 4);
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(params[i], params[j]);
            }
        }
    }

    #[test]
    fn procgrid_writes_generalization() {
        let root = tempfile::tempdir().unwrap();
        let mut cfg = tiny("grid");
        cfg.env = "procgrid".into();
        cfg.levels.n_seen = 6;
        cfg.levels.n_unseen = 4;
        cfg.eval.episodes_per_level = 1;
        cfg.eval.interval = 1;
        let r = run_experiment(&cfg, root.path()).unwrap();
        let row = &r.summary.unwrap().rows[0];
        assert!(row.seen_success.is_some() && row.unseen_success.is_some());
        let eval = fs::read_to_string(agent_dir(&r.dir, 1, 0).join(EVAL_FILE)).unwrap();
        assert_eq!(eval.lines().count(), 3);
    }
}
