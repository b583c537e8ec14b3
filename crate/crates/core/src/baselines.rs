//! Reference secondary policies and a brute-force policy oracle.
//!
//! A [`PolicyVector`] is a stationary randomized strategy over the secondary
//! actions. The oracle evaluates every policy on a simplex grid by
//! simulation and keeps the best one that respects the primary's
//! constraint. All grid points share one evaluation seed, so comparisons
//! between them are paired.

use log::warn;
use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::agent::{ActionId, AgentController, Decision};
use crate::config::{ConstraintMode, SimConfig};
use crate::error::{Error, Result};
use crate::metrics::failure_ratio;
use crate::sim::{simulate, SimOptions};

/// Probability of silence at index 0 and of backoff counter `i - 1` at index `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyVector {
    kappa: Vec<f64>,
}

impl PolicyVector {
    pub fn new(kappa: Vec<f64>) -> Result<Self> {
        if kappa.len() < 2 {
            return Err(Error::InvalidArgument("policy vector needs silence and at least one counter".into()));
        }
        if kappa.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::InvalidArgument(format!("negative or non-finite entry in {kappa:?}")));
        }
        let sum: f64 = kappa.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("policy vector sums to {sum}")));
        }
        Ok(Self { kappa })
    }

    /// Never transmits.
    pub fn silent(ws: u32) -> Self {
        let mut kappa = vec![0.0; ws as usize + 1];
        kappa[0] = 1.0;
        Self { kappa }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.kappa
    }

    /// Backoff window this policy is defined for.
    pub fn ws(&self) -> u32 {
        (self.kappa.len() - 1) as u32
    }

    pub fn is_silent(&self) -> bool {
        self.kappa[0] == 1.0
    }
}

/// The blind baseline: counters drawn uniformly, never idle, feedback ignored.
pub fn uniform_policy(ws: u32) -> Result<PolicyVector> {
    if ws < 1 {
        return Err(Error::InvalidArgument("ws must be >= 1".into()));
    }
    let mut kappa = vec![1.0 / f64::from(ws); ws as usize + 1];
    kappa[0] = 0.0;
    Ok(PolicyVector { kappa })
}

/// Samples each action from a fixed policy vector, ignoring the feedback bit.
#[derive(Debug, Clone)]
pub struct StationaryExecutor {
    policy: PolicyVector,
    cumulative: Vec<f64>,
    name: String,
}

impl StationaryExecutor {
    pub fn new(policy: PolicyVector) -> Self {
        let mut acc = 0.0;
        let cumulative = policy
            .as_slice()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { policy, cumulative, name: "stationary".into() }
    }

    pub fn silent(ws: u32) -> Self {
        Self::new(PolicyVector::silent(ws)).named("silent")
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    pub fn policy(&self) -> &PolicyVector {
        &self.policy
    }

    fn sample(&self, rng: &mut dyn RngCore) -> ActionId {
        let u: f64 = rng.random();
        let idx = self.cumulative.iter().position(|&c| u < c);
        // rounding can leave the last cumulative entry a hair below 1
        let idx = idx.unwrap_or_else(|| self.policy.kappa.iter().rposition(|&p| p > 0.0).unwrap_or(0));
        ActionId(idx)
    }
}

impl AgentController for StationaryExecutor {
    fn decide(&mut self, _constraint_ok: bool, rng: &mut dyn RngCore) -> Decision {
        Decision { action: self.sample(rng), forced: false }
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Every policy vector of length `ws + 1` whose entries are multiples of
/// `step`, in ascending lexicographic order.
pub fn simplex_grid(ws: u32, step: f64) -> Result<Vec<PolicyVector>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!("grid step {step} not in (0, 1]")));
    }
    let units = (1.0 / step).round();
    if (units * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("grid step {step} does not divide 1")));
    }
    let units = units as u32;
    let parts = ws as usize + 1;
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(parts);
    fn rec(remaining: u32, parts: usize, units: u32, current: &mut Vec<u32>, out: &mut Vec<PolicyVector>) {
        if current.len() + 1 == parts {
            current.push(remaining);
            let kappa = current.iter().map(|&k| f64::from(k) / f64::from(units)).collect();
            out.push(PolicyVector { kappa });
            current.pop();
            return;
        }
        for k in 0..=remaining {
            current.push(k);
            rec(remaining - k, parts, units, current, out);
            current.pop();
        }
    }
    rec(units, parts, units, &mut current, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub policy: PolicyVector,
    pub theta_s: f64,
    pub theta_p: f64,
    /// Paired solo-primary throughput minus `theta_p`.
    pub loss: f64,
    pub failure_ratio: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: PolicyVector,
    pub table: Vec<GridPoint>,
    /// Primary throughput of the all-silent point, the feasibility reference.
    pub theta_p_reference: f64,
    /// No grid point was feasible; `best` fell back to silence.
    pub no_feasible_point: bool,
}

pub const GRID_MIN_EVAL_SLOTS: u64 = 100_000;

/// Evaluates every grid policy for `eval_slots` slots at `cfg.seed` and
/// returns the feasible one with the highest secondary throughput (ties:
/// higher primary throughput, then the lexicographically smallest vector).
pub fn grid_search(cfg: &SimConfig, step: f64, eval_slots: u64) -> Result<GridResult> {
    cfg.validate()?;
    if eval_slots < GRID_MIN_EVAL_SLOTS {
        return Err(Error::InvalidArgument(format!("eval_slots = {eval_slots} is below {GRID_MIN_EVAL_SLOTS}")));
    }
    let grid = simplex_grid(cfg.ws, step)?;

    let measured: Vec<(f64, f64, f64)> = grid
        .par_iter()
        .map(|policy| {
            let mut ex = StationaryExecutor::new(policy.clone());
            let run = simulate(cfg, &mut ex, eval_slots, &SimOptions::summary())?;
            let m = &run.metrics;
            Ok((m.theta_s(), m.theta_p(), failure_ratio(m)))
        })
        .collect::<Result<_>>()?;

    let silent_idx = grid.iter().position(PolicyVector::is_silent).expect("grid contains the silent corner");
    let reference = measured[silent_idx].1;

    let table: Vec<GridPoint> = grid
        .into_iter()
        .zip(measured)
        .map(|(policy, (theta_s, theta_p, ratio))| {
            let loss = reference - theta_p;
            let feasible = match cfg.constraint_mode {
                ConstraintMode::ThroughputLoss => loss <= cfg.gamma1,
                ConstraintMode::FailureProb => ratio <= cfg.gamma2,
            };
            GridPoint { policy, theta_s, theta_p, loss, failure_ratio: ratio, feasible }
        })
        .collect();

    let mut best: Option<&GridPoint> = None;
    for point in table.iter().filter(|p| p.feasible) {
        let better = match best {
            None => true,
            Some(b) => point.theta_s > b.theta_s || (point.theta_s == b.theta_s && point.theta_p > b.theta_p),
        };
        if better {
            best = Some(point);
        }
    }
    let (best, no_feasible_point) = match best {
        Some(p) => (p.policy.clone(), false),
        None => {
            warn!("grid search found no feasible policy at lambda1 = {}; falling back to silence", cfg.lambda1);
            (PolicyVector::silent(cfg.ws), true)
        }
    };
    Ok(GridResult { best, table, theta_p_reference: reference, no_feasible_point })
}

/// Grid table CSV: `k0,...,k{ws},theta_s,theta_p,loss,feasible`.
pub fn grid_table_csv(result: &GridResult, cfg: &SimConfig) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "# config_hash={} seed={}", cfg.config_hash(), cfg.seed);
    let header: Vec<String> = (0..=cfg.ws).map(|i| format!("k{i}")).collect();
    let _ = writeln!(s, "{},theta_s,theta_p,loss,feasible", header.join(","));
    for p in &result.table {
        let ks: Vec<String> = p.policy.as_slice().iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{},{},{},{},{}", ks.join(","), p.theta_s, p.theta_p, p.loss, u8::from(p.feasible));
    }
    s
}
