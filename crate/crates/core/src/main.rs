use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use condpolicy::conditioning::{estimate_j, exact_condition_number, CondConfig};
use condpolicy::envs::{check_disjoint, make_levelsets, read_manifest, write_manifest, EnvKind, ProcGrid};
use condpolicy::harness::{
    builtin_variants, eval_generalization, run_experiment, summarize, sweep_degraded, write_summary, ExperimentConfig,
    ModePolicy, SummaryTable,
};
use condpolicy::numkit::{derive_seed, Rng, Tensor};
use condpolicy::policy::{checkpoint, PolicyNetwork};
use condpolicy::Error;

#[derive(Parser)]
#[command(
    name = "condpolicy",
    version,
    about = "Policy-gradient training with a Jacobian-conditioning penalty"
)]
struct Cli {
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (overrides the config and $CONDPOLICY_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (seed, agent) pair of an experiment config.
    Train { config: PathBuf },
    /// Run the base config plus its degraded variants.
    Sweep { config: PathBuf },
    /// Success rates of a checkpoint on the seen and unseen levels of a manifest.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        levels: PathBuf,
        /// Episodes per level.
        #[arg(long, default_value_t = 20)]
        episodes: usize,
    },
    /// Aggregate finished runs into a summary table and curve files.
    Summarize {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Compare the sampled sensitivity estimate with the exact Jacobian spectrum.
    ProbeConditioning {
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 16)]
        states: usize,
    },
    /// Write a `split,seed` level manifest.
    MakeLevels {
        path: PathBuf,
        #[arg(long, default_value_t = 500)]
        seen: usize,
        #[arg(long, default_value_t = 200)]
        unseen: usize,
        #[arg(long, default_value_t = 0)]
        master_seed: u64,
    },
}

/// Exit status 2 for bad input, 1 for failures while running.
fn status(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::FixedField { .. }
        | Error::UnknownEnv(_)
        | Error::Checkpoint(_)
        | Error::OverlappingLevels(_)
        | Error::EmptyLevelSet(_) => 2,
        _ => 1,
    }
}

fn load_config(path: &Path, cli: &Cli) -> condpolicy::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    let root = cli.out.clone().unwrap_or_else(|| cfg.output_root());
    Ok((cfg, root))
}

fn print_summary(table: &SummaryTable) {
    println!(
        "{:<12} {:<6} {:<14} {:<6} {:>6} {:>10} {:>12} {:>10} {:>8} {:>8}",
        "run", "algo", "env", "reg", "agents", "timesteps", "last100", "std", "seen", "unseen"
    );
    let cell = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
    for r in &table.rows {
        println!(
            "{:<12} {:<6} {:<14} {:<6} {:>6} {:>10} {:>12.4} {:>10.4} {:>8} {:>8}",
            r.key.run,
            r.key.algorithm,
            r.key.env,
            if r.key.penalty { "yes" } else { "no" },
            r.n_agents,
            r.timesteps,
            r.last100_mean,
            r.last100_std,
            cell(r.seen_success),
            cell(r.unseen_success)
        );
    }
    for p in &table.problems {
        eprintln!("warning: {p}");
    }
}

fn probe_states(env: &EnvKind, net: &PolicyNetwork, n: usize, seed: u64) -> condpolicy::Result<Tensor> {
    let mut e = env.build();
    let mut rng = Rng::new(seed);
    let mut rows = Vec::with_capacity(n);
    let mut episode = 0;
    let mut obs = e.reset(derive_seed(seed, episode));
    while rows.len() < n {
        rows.push(obs.clone());
        let (dist, _) = net.forward(&Tensor::from_rows(&[obs.clone()])?)?;
        let tr = e.step(&dist.row(0).sample(&mut rng))?;
        obs = if tr.done || tr.truncated {
            episode += 1;
            e.reset(derive_seed(seed, episode))
        } else {
            tr.next_state
        };
    }
    Ok(Tensor::from_rows(&rows)?)
}

fn run(cli: &Cli) -> condpolicy::Result<u8> {
    match &cli.command {
        Command::Train { config } => {
            let (cfg, root) = load_config(config, cli)?;
            let report = run_experiment(&cfg, &root)?;
            if let Some(t) = &report.summary {
                print_summary(t);
            }
            println!("run directory: {}", report.dir.display());
            let failed = report.failures();
            if failed > 0 {
                eprintln!("{failed} of {} agents failed", report.agents.len());
                return Ok(1);
            }
            Ok(0)
        }
        Command::Sweep { config } => {
            let (cfg, root) = load_config(config, cli)?;
            let variants = cfg.sweep.variants.clone().unwrap_or_else(builtin_variants);
            let report = sweep_degraded(&cfg, &variants, &root)?;
            print_summary(&report.summary);
            for f in &report.curve_files {
                println!("curve: {}", f.display());
            }
            let failed = report.failures();
            if failed > 0 {
                eprintln!("{failed} agents failed");
                return Ok(1);
            }
            Ok(0)
        }
        Command::Eval {
            checkpoint: ckpt,
            levels,
            episodes,
        } => {
            let net = checkpoint::load(ckpt)?;
            let (seen, unseen) = read_manifest(levels)?;
            check_disjoint(&seen, &unseen)?;
            let r = eval_generalization(&mut ModePolicy(&net), &seen, &unseen, *episodes)?;
            for s in [&r.seen, &r.unseen] {
                println!(
                    "{:<7} levels={:<5} episodes={:<6} successes={:<6} success_rate={:.4}",
                    s.split.to_string(),
                    s.levels,
                    s.episodes,
                    s.successes,
                    s.success_rate
                );
            }
            Ok(0)
        }
        Command::Summarize { dirs } => {
            let (table, curves) = summarize(dirs)?;
            print_summary(&table);
            if let Some(out) = &cli.out {
                for f in write_summary(out, &table, &curves)? {
                    println!("curve: {}", f.display());
                }
            }
            Ok(if table.problems.is_empty() { 0 } else { 1 })
        }
        Command::ProbeConditioning {
            checkpoint: ckpt,
            env,
            states,
        } => {
            let net = checkpoint::load(ckpt)?;
            let kind = match env.as_str() {
                "procgrid" => EnvKind::ProcGrid(std::sync::Arc::new(vec![ProcGrid::single(0).level().clone()])),
                name => EnvKind::continuous(name)?,
            };
            if kind.spec().obs_dim != net.spec().obs_dim {
                return Err(Error::Config(format!(
                    "checkpoint expects {} inputs but {env} observations have {}",
                    net.spec().obs_dim,
                    kind.spec().obs_dim
                )));
            }
            let seed = cli.seed.unwrap_or(0);
            let x = probe_states(&kind, &net, *states, seed)?;
            let cond = CondConfig::default();
            let j = estimate_j(&net, &x, &cond, &mut Rng::stream(seed, 1))?;
            // A wide Jacobian has a null space, so the estimate can reach zero.
            let wide = net.spec().obs_dim > net.spec().act_dim;
            let mut inside = 0;
            println!(
                "{:>5} {:>14} {:>14} {:>14} {:>14}  in_band",
                "state", "estimate", "lower", "sigma_max", "cond"
            );
            for (i, &ji) in j.iter().enumerate() {
                let exact = exact_condition_number(&net, x.row(i), 1e-5)?;
                let lower = if wide {
                    0.0
                } else {
                    exact.singular_values.iter().copied().fold(f64::INFINITY, f64::min)
                };
                // The difference quotient carries O(eps) curvature error.
                let slack = 1e-6 * (1.0 + exact.sigma_max);
                let ok = ji >= lower - slack && ji <= exact.sigma_max + slack;
                inside += usize::from(ok);
                println!(
                    "{i:>5} {ji:>14.6e} {lower:>14.6e} {:>14.6e} {:>14.6e}  {ok}",
                    exact.sigma_max, exact.condition_number
                );
            }
            println!("{inside}/{} estimates inside [lower, sigma_max]", j.len());
            Ok(0)
        }
        Command::MakeLevels {
            path,
            seen,
            unseen,
            master_seed,
        } => {
            let (s, u) = make_levelsets(*seen, *unseen, *master_seed)?;
            write_manifest(path, &s, &u)?;
            println!(
                "wrote {} seen and {} unseen levels to {}",
                s.len(),
                u.len(),
                path.display()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(status(&e))
        }
    }
}
