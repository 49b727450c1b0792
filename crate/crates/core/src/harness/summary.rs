use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{read_metrics, MetricsRow};
use crate::algos::Algorithm;
use crate::{Error, Result};

pub const SUMMARY_FORMAT_VERSION: u32 = 1;
pub const SUMMARY_FILE: &str = "summary.csv";
/// Per-agent metadata; written last, so its presence marks a finished agent.
pub const AGENT_FILE: &str = "agent.toml";
pub const METRICS_FILE: &str = "metrics.csv";
/// Updates averaged for the headline reward.
pub const TAIL_UPDATES: usize = 100;

const SUMMARY_COLUMNS: [&str; 10] = [
    "run",
    "algorithm",
    "env",
    "penalty",
    "n_agents",
    "timesteps",
    "last100_mean",
    "last100_std",
    "seen_success",
    "unseen_success",
];

const CURVE_COLUMNS: [&str; 7] = [
    "update",
    "timesteps",
    "return_mean",
    "return_std",
    "psi_mean",
    "psi_std",
    "n_agents",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub run: String,
    pub algorithm: Algorithm,
    pub env: String,
    pub penalty_enabled: bool,
    pub seed: u64,
    pub agent: usize,
    pub sub_seed: u64,
    pub updates: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seen_success: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unseen_success: Option<f64>,
}

impl AgentMeta {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(AGENT_FILE);
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(AGENT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path,
            message: e.to_string(),
        })
    }
}

/// A finished agent: its metadata and metrics rows.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentRecord {
    pub dir: PathBuf,
    pub meta: AgentMeta,
    pub rows: Vec<MetricsRow>,
}

/// Aggregation key: one row of the summary table.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub run: String,
    pub algorithm: String,
    pub env: String,
    pub penalty: bool,
}

impl GroupKey {
    fn of(meta: &AgentMeta) -> Self {
        Self {
            run: meta.run.clone(),
            algorithm: meta.algorithm.name().into(),
            env: meta.env.clone(),
            penalty: meta.penalty_enabled,
        }
    }

    /// File-name stem, e.g. `base-ppo-pointmass-noreg`.
    pub fn stem(&self) -> String {
        let reg = if self.penalty { "reg" } else { "noreg" };
        format!("{}-{}-{}-{reg}", self.run, self.algorithm, self.env)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub key: GroupKey,
    pub n_agents: usize,
    /// Largest final timestep count among the agents, stating the budget.
    pub timesteps: u64,
    /// Across agents, of each agent's mean return over its last updates.
    pub last100_mean: f64,
    pub last100_std: f64,
    pub seen_success: Option<f64>,
    pub unseen_success: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    /// Agent directories that could not be read, with the reason.
    pub problems: Vec<String>,
}

impl SummaryTable {
    pub fn row(&self, run: &str, penalty: bool) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.key.run == run && r.key.penalty == penalty)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub update: usize,
    pub timesteps: u64,
    pub return_mean: f64,
    pub return_std: f64,
    pub psi_mean: f64,
    pub psi_std: f64,
    pub n_agents: usize,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean `return_mean` over the last [`TAIL_UPDATES`] rows (all rows if fewer).
pub fn tail_mean(rows: &[MetricsRow]) -> f64 {
    let tail = &rows[rows.len().saturating_sub(TAIL_UPDATES)..];
    mean_std(&tail.iter().map(|r| r.return_mean).collect::<Vec<_>>()).0
}

fn visit(dir: &Path, records: &mut Vec<AgentRecord>, problems: &mut Vec<String>) {
    if dir.join(AGENT_FILE).is_file() {
        match AgentMeta::read(dir).and_then(|meta| Ok((meta, read_metrics(&dir.join(METRICS_FILE))?))) {
            Ok((meta, rows)) => records.push(AgentRecord {
                dir: dir.to_path_buf(),
                meta,
                rows,
            }),
            Err(e) => problems.push(format!("{}: {e}", dir.display())),
        }
        return;
    }
    if dir.join(METRICS_FILE).is_file() {
        problems.push(format!("{}: unfinished agent (no {AGENT_FILE})", dir.display()));
        return;
    }
    let Ok(entries) = fs::read_dir(dir) else {
        problems.push(format!("{}: not a readable directory", dir.display()));
        return;
    };
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for d in subdirs {
        visit(&d, records, problems);
    }
}

/// Finds agent directories below `dirs`, in sorted order.
pub fn collect_agents(dirs: &[PathBuf]) -> (Vec<AgentRecord>, Vec<String>) {
    let (mut records, mut problems) = (Vec::new(), Vec::new());
    for d in dirs {
        if d.is_dir() {
            visit(d, &mut records, &mut problems);
        } else {
            problems.push(format!("{}: not a directory", d.display()));
        }
    }
    (records, problems)
}

fn group(records: &[AgentRecord]) -> BTreeMap<GroupKey, Vec<&AgentRecord>> {
    let mut groups: BTreeMap<GroupKey, Vec<&AgentRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(GroupKey::of(&r.meta)).or_default().push(r);
    }
    groups
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| mean_std(&v).0)
}

pub fn summary_table(records: &[AgentRecord], problems: Vec<String>) -> SummaryTable {
    let rows = group(records)
        .into_iter()
        .map(|(key, agents)| {
            let tails: Vec<f64> = agents.iter().map(|a| tail_mean(&a.rows)).collect();
            let (m, s) = mean_std(&tails);
            SummaryRow {
                key,
                n_agents: agents.len(),
                timesteps: agents
                    .iter()
                    .filter_map(|a| a.rows.last())
                    .map(|r| r.timesteps)
                    .max()
                    .unwrap_or(0),
                last100_mean: m,
                last100_std: s,
                seen_success: mean_of(agents.iter().map(|a| a.meta.seen_success)),
                unseen_success: mean_of(agents.iter().map(|a| a.meta.unseen_success)),
            }
        })
        .collect();
    SummaryTable { rows, problems }
}

/// Per-update cross-agent mean and std of return and penalty, aligned by update index.
pub fn curves(records: &[AgentRecord]) -> BTreeMap<GroupKey, Vec<CurvePoint>> {
    group(records)
        .into_iter()
        .map(|(key, agents)| {
            let len = agents.iter().map(|a| a.rows.len()).max().unwrap_or(0);
            let points = (0..len)
                .map(|u| {
                    let rows: Vec<&MetricsRow> = agents.iter().filter_map(|a| a.rows.get(u)).collect();
                    let (rm, rs) = mean_std(&rows.iter().map(|r| r.return_mean).collect::<Vec<_>>());
                    let (pm, ps) = mean_std(&rows.iter().map(|r| r.psi).collect::<Vec<_>>());
                    CurvePoint {
                        update: u,
                        timesteps: rows[0].timesteps,
                        return_mean: rm,
                        return_std: rs,
                        psi_mean: pm,
                        psi_std: ps,
                        n_agents: rows.len(),
                    }
                })
                .collect();
            (key, points)
        })
        .collect()
}

/// Summary over every finished agent below `dirs`. Errors only when none is found.
pub fn summarize(dirs: &[PathBuf]) -> Result<(SummaryTable, BTreeMap<GroupKey, Vec<CurvePoint>>)> {
    let (records, problems) = collect_agents(dirs);
    if records.is_empty() {
        let listed: Vec<String> = dirs.iter().map(|d| d.display().to_string()).collect();
        let mut msg = format!("no finished agents under {}", listed.join(", "));
        if !problems.is_empty() {
            msg.push_str(&format!(" ({})", problems.join("; ")));
        }
        return Err(Error::InvalidArgument(msg));
    }
    Ok((summary_table(&records, problems), curves(&records)))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn header_line(kind: &str) -> String {
    format!("# condpolicy {kind} format_version={SUMMARY_FORMAT_VERSION}\n")
}

pub fn render_summary(table: &SummaryTable) -> String {
    let mut out = header_line("summary");
    out.push_str(&SUMMARY_COLUMNS.join(","));
    out.push('\n');
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.key.run,
            r.key.algorithm,
            r.key.env,
            if r.key.penalty { "reg" } else { "noreg" },
            r.n_agents,
            r.timesteps,
            r.last100_mean,
            r.last100_std,
            opt(r.seen_success),
            opt(r.unseen_success)
        );
    }
    out
}

pub fn render_curve(points: &[CurvePoint]) -> String {
    let mut out = header_line("curve");
    out.push_str(&CURVE_COLUMNS.join(","));
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.update, p.timesteps, p.return_mean, p.return_std, p.psi_mean, p.psi_std, p.n_agents
        );
    }
    out
}

/// Writes `summary.csv` and one `curve-<group>.csv` per group into `dir`; returns the curve paths.
pub fn write_summary(
    dir: &Path,
    table: &SummaryTable,
    curves: &BTreeMap<GroupKey, Vec<CurvePoint>>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, render_summary(table)).map_err(|e| Error::io(&path, e))?;
    let mut paths = Vec::new();
    for (key, points) in curves {
        let p = dir.join(format!("curve-{}.csv", key.stem()));
        fs::write(&p, render_curve(points)).map_err(|e| Error::io(&p, e))?;
        paths.push(p);
    }
    Ok(paths)
}

/// Parses a stored summary file.
pub fn read_summary(path: &Path) -> Result<SummaryTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines();
    if lines.next().map(|l| format!("{l}\n")) != Some(header_line("summary")) {
        return Err(perr("missing or unsupported summary version line".into()));
    }
    if lines.next() != Some(SUMMARY_COLUMNS.join(",").as_str()) {
        return Err(perr("summary header does not match the expected columns".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| perr(format!("{s:?}: {e}")));
    let optnum = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != SUMMARY_COLUMNS.len() {
            return Err(perr(format!("malformed summary row {line:?}")));
        }
        rows.push(SummaryRow {
            key: GroupKey {
                run: f[0].into(),
                algorithm: f[1].into(),
                env: f[2].into(),
                penalty: match f[3] {
                    "reg" => true,
                    "noreg" => false,
                    other => return Err(perr(format!("bad penalty flag {other:?}"))),
                },
            },
            n_agents: f[4].parse().map_err(|e| perr(format!("n_agents: {e}")))?,
            timesteps: f[5].parse().map_err(|e| perr(format!("timesteps: {e}")))?,
            last100_mean: num(f[6])?,
            last100_std: num(f[7])?,
            seen_success: optnum(f[8])?,
            unseen_success: optnum(f[9])?,
        });
    }
    Ok(SummaryTable {
        rows,
        problems: Vec::new(),
    })
}

fn close(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12
}

fn close_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => close(a, b),
        _ => false,
    }
}

/// Reads `dir/summary.csv` and checks it against a recomputation from the raw metrics.
pub fn load_summary(dir: &Path) -> Result<SummaryTable> {
    let stored = read_summary(&dir.join(SUMMARY_FILE))?;
    let (fresh, _) = summarize(&[dir.to_path_buf()])?;
    let same = stored.rows.len() == fresh.rows.len()
        && stored.rows.iter().zip(&fresh.rows).all(|(a, b)| {
            a.key == b.key
                && a.n_agents == b.n_agents
                && a.timesteps == b.timesteps
                && close(a.last100_mean, b.last100_mean)
                && close(a.last100_std, b.last100_std)
                && close_opt(a.seen_success, b.seen_success)
                && close_opt(a.unseen_success, b.unseen_success)
        });
    if !same {
        return Err(Error::Parse {
            path: dir.join(SUMMARY_FILE),
            message: "stored summary disagrees with the metrics it was computed from".into(),
        });
    }
    Ok(stored)
}
