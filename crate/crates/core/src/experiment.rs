//! Sweeps over primary load, policies and seeds, and the CSV artifacts they
//! produce.
//!
//! Cells run in parallel; files are written afterwards in `(lambda1, policy,
//! replication)` order, so the output of a spec is byte-for-byte repeatable.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::agent::{ActionCompletion, QLearner, RewardRecord};
use crate::baselines::{grid_search, grid_table_csv, uniform_policy, GridResult, PolicyVector, StationaryExecutor};
use crate::config::{kv_lines, SimConfig};
use crate::error::{Error, Result};
use crate::metrics::{failure_ratio, theta_p_max};
use crate::sim::{simulate, SimOptions, SimulationTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    QLearning,
    Uniform,
    GridSearch,
    Silent,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::QLearning => "qlearning",
            PolicyKind::Uniform => "uniform",
            PolicyKind::GridSearch => "gridsearch",
            PolicyKind::Silent => "silent",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qlearning" | "q" | "learner" => Ok(PolicyKind::QLearning),
            "uniform" => Ok(PolicyKind::Uniform),
            "gridsearch" | "grid" | "oracle" => Ok(PolicyKind::GridSearch),
            "silent" => Ok(PolicyKind::Silent),
            other => Err(Error::InvalidConfig(format!("unknown policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub base: SimConfig,
    pub sweep_lambda1: Vec<f64>,
    pub policies: Vec<PolicyKind>,
    pub horizon_slots: u64,
    /// Replication `r` runs with seed `base.seed + r`.
    pub replications: u32,
    pub output_dir: PathBuf,
    pub grid_step: f64,
    pub grid_eval_slots: u64,
    /// Trace decimation for `trace_<cell>.csv`.
    pub trace_every: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            base: SimConfig::default(),
            sweep_lambda1: vec![0.05],
            policies: vec![PolicyKind::QLearning],
            horizon_slots: 200_000,
            replications: 5,
            output_dir: PathBuf::from("out"),
            grid_step: 0.1,
            grid_eval_slots: 100_000,
            trace_every: 1,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| Error::InvalidConfig(format!("bad `{key}` entry `{s}`: {e}"))))
        .collect()
}

impl ExperimentSpec {
    /// Sets an experiment key, or a scenario key on `base`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::InvalidConfig(format!("bad value `{value}` for `{key}`: {e}"));
        match key {
            "sweep_lambda1" => self.sweep_lambda1 = parse_list(key, value)?,
            "policies" => self.policies = parse_list(key, value)?,
            "horizon_slots" => self.horizon_slots = value.parse().map_err(|e| bad(&e))?,
            "replications" => self.replications = value.parse().map_err(|e| bad(&e))?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "grid_step" => self.grid_step = value.parse().map_err(|e| bad(&e))?,
            "grid_eval_slots" => self.grid_eval_slots = value.parse().map_err(|e| bad(&e))?,
            "trace_every" => self.trace_every = value.parse().map_err(|e| bad(&e))?,
            _ => self.base.set(key, value)?,
        }
        Ok(())
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut spec = ExperimentSpec::default();
        for (line, key, value) in kv_lines(text)? {
            spec.set(key, value).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.sweep_lambda1.is_empty() {
            return Err(Error::InvalidConfig("sweep_lambda1 is empty".into()));
        }
        if let Some(l) = self.sweep_lambda1.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::InvalidConfig(format!("sweep_lambda1 entry {l} must be >= 0")));
        }
        if self.policies.is_empty() {
            return Err(Error::InvalidConfig("policies is empty".into()));
        }
        if self.replications < 1 {
            return Err(Error::InvalidConfig("replications must be >= 1".into()));
        }
        if self.horizon_slots < 1 {
            return Err(Error::InvalidConfig("horizon_slots must be >= 1".into()));
        }
        if self.trace_every < 1 {
            return Err(Error::InvalidConfig("trace_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Scenario for one sweep point and replication.
    pub fn cell_config(&self, lambda1: f64, replication: u32) -> SimConfig {
        SimConfig { lambda1, seed: self.base.seed + u64::from(replication), ..self.base.clone() }
    }
}

/// Voluntary and forced decision counts per action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionTally {
    pub voluntary: Vec<u64>,
    pub forced: Vec<u64>,
}

impl ActionTally {
    pub fn from_actions<'a>(actions: impl IntoIterator<Item = &'a ActionCompletion>, num_actions: usize) -> Self {
        let mut t = ActionTally { voluntary: vec![0; num_actions], forced: vec![0; num_actions] };
        for a in actions {
            if a.forced {
                t.forced[a.action.0] += 1;
            } else {
                t.voluntary[a.action.0] += 1;
            }
        }
        t
    }

    pub fn decisions(&self) -> u64 {
        self.voluntary.iter().chain(&self.forced).sum()
    }

    fn frac(&self, n: u64) -> f64 {
        match self.decisions() {
            0 => 0.0,
            d => n as f64 / d as f64,
        }
    }

    pub fn voluntary_freq(&self, action: usize) -> f64 {
        self.frac(self.voluntary[action])
    }

    pub fn forced_freq(&self, action: usize) -> f64 {
        self.frac(self.forced[action])
    }

    /// Share of decisions that were silence, chosen or forced.
    pub fn idle_fraction(&self) -> f64 {
        self.frac(self.voluntary[0] + self.forced[0])
    }

    /// Share of decisions that voluntarily transmitted.
    pub fn voluntary_tx_fraction(&self) -> f64 {
        self.frac(self.voluntary[1..].iter().sum())
    }

    /// Most used transmitting action (lowest index on ties).
    pub fn top_tx_action(&self) -> Option<usize> {
        let totals: Vec<u64> = (1..self.voluntary.len()).map(|i| self.voluntary[i] + self.forced[i]).collect();
        let max = *totals.iter().max()?;
        (max > 0).then(|| 1 + totals.iter().position(|&c| c == max).expect("max is present"))
    }
}

pub const STRATEGY_HEADER: &str = "action,learned_voluntary,learned_forced,learned_total,oracle";

/// Learned action frequencies next to the oracle's policy vector.
pub fn emit_strategy_comparison(learned: &ActionTally, oracle: &PolicyVector) -> String {
    let mut s = String::new();
    s.push_str(STRATEGY_HEADER);
    s.push('\n');
    for (i, &k) in oracle.as_slice().iter().enumerate() {
        let v = learned.voluntary_freq(i);
        let f = learned.forced_freq(i);
        let _ = writeln!(s, "{i},{v},{f},{},{k}", v + f);
    }
    s
}

/// Reward trajectory CSV: `t,action,cost,r0,...,r{ws}`.
pub fn rewards_csv(log: &[RewardRecord], ws: u32) -> String {
    let mut s = String::new();
    let rs: Vec<String> = (0..=ws).map(|i| format!("r{i}")).collect();
    let _ = writeln!(s, "t,action,cost,{}", rs.join(","));
    for rec in log {
        let r: Vec<String> = rec.rewards.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{},{},{},{}", rec.t, rec.action.0, rec.cost, r.join(","));
    }
    s
}

pub const SUMMARY_HEADER: &str = "lambda1,gamma1,policy,theta_s,theta_p,theta_p_max,loss,failure_ratio,slots,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub lambda1: f64,
    pub gamma1: f64,
    pub policy: PolicyKind,
    pub theta_s: f64,
    pub theta_p: f64,
    pub theta_p_max: f64,
    pub loss: f64,
    pub failure_ratio: f64,
    pub slots: u64,
    pub seed: u64,
}

impl SummaryRow {
    fn from_trace(policy: PolicyKind, cfg: &SimConfig, run: &SimulationTrace) -> Result<Self> {
        let m = &run.metrics;
        let row = SummaryRow {
            lambda1: cfg.lambda1,
            gamma1: cfg.gamma1,
            policy,
            theta_s: m.theta_s(),
            theta_p: m.theta_p(),
            theta_p_max: m.theta_p_max,
            loss: m.loss(),
            failure_ratio: failure_ratio(m),
            slots: m.slots,
            seed: cfg.seed,
        };
        for (name, v) in [
            ("theta_s", row.theta_s),
            ("theta_p", row.theta_p),
            ("theta_p_max", row.theta_p_max),
            ("loss", row.loss),
            ("failure_ratio", row.failure_ratio),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(row)
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.lambda1,
            self.gamma1,
            self.policy.as_str(),
            self.theta_s,
            self.theta_p,
            self.theta_p_max,
            self.loss,
            self.failure_ratio,
            self.slots,
            self.seed
        )
    }
}

/// Everything one `(lambda1, policy, replication)` cell produced.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub label: String,
    pub summary: SummaryRow,
    pub tally: ActionTally,
    pub trace_csv: Option<String>,
    pub rewards_csv: Option<String>,
    pub strategy_csv: Option<String>,
    /// `(t, slot)` of learner convergence.
    pub converged_at: Option<(u64, u64)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub cells: Vec<CellOutput>,
    /// Oracle result per sweep point, when the oracle was requested.
    pub grids: OracleTable,
    pub files: Vec<PathBuf>,
}

pub fn cell_label(lambda1: f64, policy: PolicyKind, replication: u32) -> String {
    format!("lambda{lambda1}_{}_rep{replication}", policy.as_str())
}

/// Runs one policy on one scenario.
pub fn run_cell(
    spec: &ExperimentSpec,
    lambda1: f64,
    policy: PolicyKind,
    replication: u32,
    oracle: Option<&PolicyVector>,
) -> Result<CellOutput> {
    let cfg = spec.cell_config(lambda1, replication);
    let reference = theta_p_max(&cfg)?;
    let label = cell_label(lambda1, policy, replication);
    let num_actions = cfg.num_actions();

    if policy == PolicyKind::QLearning {
        let mut learner = QLearner::new(&cfg);
        let opts = SimOptions { trace_every: spec.trace_every, ..SimOptions::full(Some(reference)) };
        let run = simulate(&cfg, &mut learner, spec.horizon_slots, &opts)?;
        let tally = ActionTally::from_actions(&run.actions, num_actions);
        let header = format!("# config_hash={} seed={}\n", cfg.config_hash(), cfg.seed);
        return Ok(CellOutput {
            label,
            summary: SummaryRow::from_trace(policy, &cfg, &run)?,
            trace_csv: Some(run.to_csv()),
            rewards_csv: Some(header.clone() + &rewards_csv(&learner.log, cfg.ws)),
            strategy_csv: oracle.map(|k| header + &emit_strategy_comparison(&tally, k)),
            tally,
            converged_at: learner.converged_at,
        });
    }

    let mut executor = match policy {
        PolicyKind::Uniform => StationaryExecutor::new(uniform_policy(cfg.ws)?).named("uniform"),
        PolicyKind::Silent => StationaryExecutor::silent(cfg.ws),
        PolicyKind::GridSearch => {
            let kappa =
                oracle.ok_or_else(|| Error::InvalidArgument("gridsearch cell without an oracle policy".into()))?;
            StationaryExecutor::new(kappa.clone()).named("gridsearch")
        }
        PolicyKind::QLearning => unreachable!(),
    };
    let opts = SimOptions { trace_every: 0, record_actions: true, ..SimOptions::full(Some(reference)) };
    let run = simulate(&cfg, &mut executor, spec.horizon_slots, &opts)?;
    Ok(CellOutput {
        label,
        summary: SummaryRow::from_trace(policy, &cfg, &run)?,
        tally: ActionTally::from_actions(&run.actions, num_actions),
        trace_csv: None,
        rewards_csv: None,
        strategy_csv: None,
        converged_at: None,
    })
}

/// Oracle for one sweep point, evaluated at the base seed.
pub fn oracle_for(spec: &ExperimentSpec, lambda1: f64) -> Result<GridResult> {
    grid_search(&spec.cell_config(lambda1, 0), spec.grid_step, spec.grid_eval_slots)
}

/// Oracle results keyed by sweep point.
pub type OracleTable = Vec<(f64, GridResult)>;

/// Runs every cell of the spec and computes the oracle where requested,
/// without touching the filesystem.
pub fn compute_experiment(spec: &ExperimentSpec) -> Result<(Vec<CellOutput>, OracleTable)> {
    spec.validate()?;
    let grids: Vec<(f64, GridResult)> = if spec.policies.contains(&PolicyKind::GridSearch) {
        spec.sweep_lambda1.iter().map(|&l| Ok((l, oracle_for(spec, l)?))).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let oracle_at = |l: f64| grids.iter().find(|(x, _)| *x == l).map(|(_, g)| &g.best);

    let mut jobs = Vec::new();
    for &l in &spec.sweep_lambda1 {
        for &p in &spec.policies {
            for r in 0..spec.replications {
                jobs.push((l, p, r));
            }
        }
    }
    let cells = jobs.par_iter().map(|&(l, p, r)| run_cell(spec, l, p, r, oracle_at(l))).collect::<Result<Vec<_>>>()?;
    Ok((cells, grids))
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    files.push(path);
    Ok(())
}

/// Runs the spec and writes `summary.csv`, `trace_<cell>.csv`,
/// `rewards_<cell>.csv`, `grid_<cell>.csv` and `strategy_<cell>.csv`
/// into `output_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    fs::create_dir_all(&spec.output_dir)?;
    let (cells, grids) = compute_experiment(spec)?;

    let dir = spec.output_dir.as_path();
    let mut files = Vec::new();
    let mut summary = format!("# config_hash={} seed={}\n{SUMMARY_HEADER}\n", spec.base.config_hash(), spec.base.seed);
    for c in &cells {
        summary.push_str(&c.summary.csv_line());
        summary.push('\n');
    }
    write(dir, "summary.csv", &summary, &mut files)?;
    for (l, g) in &grids {
        let cfg = spec.cell_config(*l, 0);
        write(dir, &format!("grid_lambda{l}.csv"), &grid_table_csv(g, &cfg), &mut files)?;
    }
    for c in &cells {
        if let Some(t) = &c.trace_csv {
            write(dir, &format!("trace_{}.csv", c.label), t, &mut files)?;
        }
        if let Some(r) = &c.rewards_csv {
            write(dir, &format!("rewards_{}.csv", c.label), r, &mut files)?;
        }
        if let Some(s) = &c.strategy_csv {
            write(dir, &format!("strategy_{}.csv", c.label), s, &mut files)?;
        }
    }
    Ok(ExperimentReport { cells, grids, files })
}
