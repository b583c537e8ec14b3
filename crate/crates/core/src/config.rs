//! Scenario parameters and the flat `key = value` config format.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which primary-protection constraint drives the feedback bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintMode {
    /// `theta_p_max - theta_p <= gamma1`
    ThroughputLoss,
    /// `dropped / serviced <= gamma2`
    FailureProb,
}

impl ConstraintMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintMode::ThroughputLoss => "throughput_loss",
            ConstraintMode::FailureProb => "failure_prob",
        }
    }
}

impl FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "throughput_loss" | "throughputloss" | "loss" => Ok(ConstraintMode::ThroughputLoss),
            "failure_prob" | "failureprob" | "failure" => Ok(ConstraintMode::FailureProb),
            other => Err(Error::InvalidConfig(format!("unknown constraint mode `{other}`"))),
        }
    }
}

/// When the primary re-evaluates the constraint bit it piggybacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackCadence {
    /// Every slot, from the running averages at the end of the slot.
    EverySlot,
    /// Only when a primary packet is delivered or dropped.
    Completion,
}

impl FeedbackCadence {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackCadence::EverySlot => "every_slot",
            FeedbackCadence::Completion => "completion",
        }
    }
}

impl FromStr for FeedbackCadence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "every_slot" | "slot" => Ok(FeedbackCadence::EverySlot),
            "completion" => Ok(FeedbackCadence::Completion),
            other => Err(Error::InvalidConfig(format!("unknown feedback cadence `{other}`"))),
        }
    }
}

/// Which counter indexes the `1/t` step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepIndex {
    /// Completions of the updated action: a per-action sample average.
    PerAction,
    /// All completed voluntary actions.
    Global,
}

impl StepIndex {
    pub fn as_str(self) -> &'static str {
        match self {
            StepIndex::PerAction => "per_action",
            StepIndex::Global => "global",
        }
    }
}

impl FromStr for StepIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "per_action" | "action" => Ok(StepIndex::PerAction),
            "global" => Ok(StepIndex::Global),
            other => Err(Error::InvalidConfig(format!("unknown step index `{other}`"))),
        }
    }
}

/// Knobs of the learning secondary that the model itself leaves open.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerParams {
    /// Initial exploration probability.
    pub tau0: f64,
    /// Number of completed actions over which exploration halves.
    pub tau_decay_actions: f64,
    /// Reward snapshots inspected by the convergence test.
    pub convergence_window: usize,
    /// Largest per-action reward movement still counted as converged.
    pub convergence_eps: f64,
    /// Apply reward updates for constraint-forced silence too.
    pub update_on_forced: bool,
    /// Discount on the next-state maximum. Zero gives the stateless update.
    pub gamma_discount: f64,
    pub step_index: StepIndex,
}

impl Default for LearnerParams {
    fn default() -> Self {
        Self {
            tau0: 0.3,
            tau_decay_actions: 200.0,
            convergence_window: 50,
            convergence_eps: 1e-3,
            update_on_forced: false,
            gamma_discount: 0.0,
            step_index: StepIndex::PerAction,
        }
    }
}

/// All parameters of one scenario.
///
/// Throughputs are measured in payload-slots per slot, so every throughput
/// lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Primary Poisson arrival rate, packets per slot.
    pub lambda1: f64,
    pub buffer_b: u32,
    pub max_retry_m: u32,
    /// Backoff window per stage, `windows[b - 1]` for stage `b`.
    pub windows: Vec<u32>,
    /// Secondary backoff window.
    pub ws: u32,
    pub rho: f64,
    pub rho_star: f64,
    pub nu: f64,
    pub nu_star: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub constraint_mode: ConstraintMode,
    pub feedback_cadence: FeedbackCadence,
    pub packet_slots: u32,
    pub difs_slots: u32,
    pub seed: u64,
    /// Secondary arrival rate. Metadata only, the secondary is always backlogged.
    pub lambda2: f64,
    /// Packet size in bits. Metadata only.
    pub packet_bits: u32,
    /// Horizon of the solo-primary run that calibrates `theta_p_max`.
    pub calibration_slots: u64,
    pub calibration_seed: u64,
    pub learner: LearnerParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.05,
            buffer_b: 4,
            max_retry_m: 4,
            windows: vec![4, 6, 8, 10],
            ws: 3,
            rho: 0.2,
            rho_star: 0.5,
            nu: 0.3,
            nu_star: 0.3,
            gamma1: 0.04,
            gamma2: 0.1,
            constraint_mode: ConstraintMode::ThroughputLoss,
            feedback_cadence: FeedbackCadence::EverySlot,
            packet_slots: 1,
            difs_slots: 2,
            seed: 1,
            lambda2: 0.0,
            packet_bits: 8000,
            calibration_slots: 1_000_000,
            calibration_seed: 0x00c0_ffee,
            learner: LearnerParams::default(),
        }
    }
}

fn prob(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidConfig(format!("{name} = {v} is not in [0, 1]")));
    }
    Ok(())
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lambda1.is_finite() && self.lambda1 >= 0.0) {
            return bad(format!("lambda1 = {} must be finite and >= 0", self.lambda1));
        }
        if !(self.lambda2.is_finite() && self.lambda2 >= 0.0) {
            return bad(format!("lambda2 = {} must be finite and >= 0", self.lambda2));
        }
        if self.buffer_b < 1 {
            return bad("buffer_b must be >= 1".into());
        }
        if self.max_retry_m < 1 {
            return bad("max_retry_m must be >= 1".into());
        }
        if self.windows.len() != self.max_retry_m as usize {
            return bad(format!("windows has {} entries but max_retry_m = {}", self.windows.len(), self.max_retry_m));
        }
        if self.windows.iter().any(|&w| w < 1) {
            return bad("every backoff window must be >= 1".into());
        }
        if self.ws < 1 {
            return bad("ws must be >= 1".into());
        }
        prob("rho", self.rho)?;
        prob("rho_star", self.rho_star)?;
        prob("nu", self.nu)?;
        prob("nu_star", self.nu_star)?;
        prob("gamma2", self.gamma2)?;
        if self.rho_star < self.rho {
            return bad(format!("rho_star = {} < rho = {}", self.rho_star, self.rho));
        }
        if self.nu_star < self.nu {
            return bad(format!("nu_star = {} < nu = {}", self.nu_star, self.nu));
        }
        if !(self.gamma1.is_finite() && self.gamma1 >= 0.0) {
            return bad(format!("gamma1 = {} must be finite and >= 0", self.gamma1));
        }
        if self.packet_slots < 1 {
            return bad("packet_slots must be >= 1".into());
        }
        if self.difs_slots < 1 {
            return bad("difs_slots must be >= 1".into());
        }
        if self.calibration_slots < 1 {
            return bad("calibration_slots must be >= 1".into());
        }
        let l = &self.learner;
        prob("tau0", l.tau0)?;
        if !(l.tau_decay_actions.is_finite() && l.tau_decay_actions > 0.0) {
            return bad("tau_decay_actions must be > 0".into());
        }
        if l.convergence_window < 2 {
            return bad("convergence_window must be >= 2".into());
        }
        if !(l.convergence_eps.is_finite() && l.convergence_eps > 0.0) {
            return bad("convergence_eps must be > 0".into());
        }
        if !(0.0..1.0).contains(&l.gamma_discount) {
            return bad(format!("gamma_discount = {} is not in [0, 1)", l.gamma_discount));
        }
        Ok(())
    }

    /// Backoff window of stage `b` (1-based).
    pub fn window(&self, stage: u32) -> u32 {
        self.windows[stage as usize - 1]
    }

    /// Number of secondary actions: silence plus one per backoff counter.
    pub fn num_actions(&self) -> usize {
        self.ws as usize + 1
    }

    /// Sets one field from its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let invalid = |e: &dyn std::fmt::Display| Error::InvalidConfig(format!("bad value `{value}` for `{key}`: {e}"));
        macro_rules! parse {
            () => {
                value.parse().map_err(|e| invalid(&e))?
            };
        }
        match key {
            "lambda1" => self.lambda1 = parse!(),
            "buffer_b" | "buffer" => self.buffer_b = parse!(),
            "max_retry_m" | "m" => self.max_retry_m = parse!(),
            "windows" => {
                self.windows =
                    value.split(',').map(|w| w.trim().parse::<u32>().map_err(|e| invalid(&e))).collect::<Result<_>>()?
            }
            "ws" => self.ws = parse!(),
            "rho" => self.rho = parse!(),
            "rho_star" => self.rho_star = parse!(),
            "nu" => self.nu = parse!(),
            "nu_star" => self.nu_star = parse!(),
            "gamma1" => self.gamma1 = parse!(),
            "gamma2" => self.gamma2 = parse!(),
            "constraint_mode" => self.constraint_mode = value.parse()?,
            "feedback_cadence" => self.feedback_cadence = value.parse()?,
            "packet_slots" => self.packet_slots = parse!(),
            "difs_slots" => self.difs_slots = parse!(),
            "seed" => self.seed = parse!(),
            "lambda2" => self.lambda2 = parse!(),
            "packet_bits" => self.packet_bits = parse!(),
            "calibration_slots" => self.calibration_slots = parse!(),
            "calibration_seed" => self.calibration_seed = parse!(),
            "tau0" => self.learner.tau0 = parse!(),
            "tau_decay_actions" => self.learner.tau_decay_actions = parse!(),
            "convergence_window" => self.learner.convergence_window = parse!(),
            "convergence_eps" => self.learner.convergence_eps = parse!(),
            "update_on_forced" => self.learner.update_on_forced = parse!(),
            "gamma_discount" => self.learner.gamma_discount = parse!(),
            "step_index" => self.learner.step_index = value.parse()?,
            _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses a `key = value` document on top of the defaults and validates it.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        for (line, key, value) in kv_lines(text)? {
            cfg.set(key, value).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical `key = value` rendering; `from_kv_str` reads it back.
    pub fn to_kv_string(&self) -> String {
        self.render(true)
    }

    fn render(&self, with_seed: bool) -> String {
        let mut s = String::new();
        let windows: Vec<String> = self.windows.iter().map(u32::to_string).collect();
        let l = &self.learner;
        let _ = writeln!(s, "lambda1 = {}", self.lambda1);
        let _ = writeln!(s, "buffer_b = {}", self.buffer_b);
        let _ = writeln!(s, "max_retry_m = {}", self.max_retry_m);
        let _ = writeln!(s, "windows = {}", windows.join(","));
        let _ = writeln!(s, "ws = {}", self.ws);
        let _ = writeln!(s, "rho = {}", self.rho);
        let _ = writeln!(s, "rho_star = {}", self.rho_star);
        let _ = writeln!(s, "nu = {}", self.nu);
        let _ = writeln!(s, "nu_star = {}", self.nu_star);
        let _ = writeln!(s, "gamma1 = {}", self.gamma1);
        let _ = writeln!(s, "gamma2 = {}", self.gamma2);
        let _ = writeln!(s, "constraint_mode = {}", self.constraint_mode.as_str());
        let _ = writeln!(s, "feedback_cadence = {}", self.feedback_cadence.as_str());
        let _ = writeln!(s, "packet_slots = {}", self.packet_slots);
        let _ = writeln!(s, "difs_slots = {}", self.difs_slots);
        if with_seed {
            let _ = writeln!(s, "seed = {}", self.seed);
        }
        let _ = writeln!(s, "lambda2 = {}", self.lambda2);
        let _ = writeln!(s, "packet_bits = {}", self.packet_bits);
        let _ = writeln!(s, "calibration_slots = {}", self.calibration_slots);
        let _ = writeln!(s, "calibration_seed = {}", self.calibration_seed);
        let _ = writeln!(s, "tau0 = {}", l.tau0);
        let _ = writeln!(s, "tau_decay_actions = {}", l.tau_decay_actions);
        let _ = writeln!(s, "convergence_window = {}", l.convergence_window);
        let _ = writeln!(s, "convergence_eps = {}", l.convergence_eps);
        let _ = writeln!(s, "update_on_forced = {}", l.update_on_forced);
        let _ = writeln!(s, "gamma_discount = {}", l.gamma_discount);
        let _ = writeln!(s, "step_index = {}", l.step_index.as_str());
        s
    }

    /// Short stable digest of the full configuration, seed included.
    pub fn config_hash(&self) -> String {
        digest(&self.render(true))
    }

    /// Digest of everything except the run seed. Runs that differ only in
    /// seed share it, and so share the calibrated `theta_p_max`.
    pub fn scenario_key(&self) -> String {
        digest(&self.render(false))
    }
}

fn digest(text: &str) -> String {
    let hash = Sha256::digest(text.as_bytes());
    hash.iter().take(8).fold(String::with_capacity(16), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Splits a `key = value` document into `(line_number, key, value)` triples.
/// Blank lines and `#` comments are skipped.
pub fn kv_lines(text: &str) -> Result<Vec<(usize, &str, &str)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse { line: idx + 1, msg: format!("expected `key = value`, got `{line}`") });
        };
        out.push((idx + 1, key.trim(), value.trim()));
    }
    Ok(out)
}
