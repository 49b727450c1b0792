//! Experiment orchestration: config files, seeded multi-agent runs, the
//! degradation sweep, level generalization and summaries.

mod config;
mod eval;
mod experiment;
mod metrics;
mod summary;
mod sweep;

pub use config::{
    EvalConfig, ExperimentConfig, LevelsConfig, SweepConfig, Variant, CONFIG_FORMAT_VERSION,
    DEFAULT_CONTINUOUS_TIMESTEPS, DEFAULT_PROCGRID_TIMESTEPS, OUT_ENV,
};
pub use eval::{eval_generalization, eval_levels, EvalPolicy, GeneralizationReport, ModePolicy, SplitResult};
pub use experiment::{
    agent_dir, agent_seed, checkpoint_path, is_agent_dir, run_experiment, AgentOutcome, ExperimentReport, CONFIG_FILE,
    EVAL_FILE, FINAL_CHECKPOINT,
};
pub use metrics::{read_metrics, write_metrics, MetricsRow, MetricsWriter, METRICS_COLUMNS, METRICS_FORMAT_VERSION};
pub use summary::{
    collect_agents, curves, load_summary, mean_std, read_summary, render_curve, render_summary, summarize,
    summary_table, tail_mean, write_summary, AgentMeta, AgentRecord, CurvePoint, GroupKey, SummaryRow, SummaryTable,
    AGENT_FILE, METRICS_FILE, SUMMARY_FILE, SUMMARY_FORMAT_VERSION, TAIL_UPDATES,
};
pub use sweep::{apply_variant, builtin_variants, sweep_degraded, SweepReport, BASE_RUN, FIXED_FIELDS, VARIED_FIELDS};
