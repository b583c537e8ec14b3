//! The slotted clock that couples the primary, the secondary and the
//! metrics.
//!
//! Each slot runs in a fixed order: primary arrivals; both nodes act on what
//! they heard in the previous slot; completing packets are decoded; counters
//! are updated; the feedback bit is refreshed (every slot, or on primary
//! completions only); a finished secondary action is reported to its
//! controller.

use std::fmt::Write as _;

use rand::Rng;

use crate::agent::{ActionCompletion, AgentController};
use crate::config::{ConstraintMode, FeedbackCadence, SimConfig};
use crate::error::{Error, Result};
use crate::metrics::{feedback_bit, theta_p_max, MetricsAccumulator};
use crate::primary::{ArrivalProcess, PrimaryEvent, PrimaryState};
use crate::rng::RngStreams;
use crate::secondary::SecondaryNode;

/// What happened on the channel in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotOutcome {
    pub slot_index: u64,
    pub primary_transmitted: bool,
    pub secondary_transmitted: bool,
    /// Present only on the final slot of a primary packet.
    pub primary_success: Option<bool>,
    pub secondary_success: Option<bool>,
    pub channel_busy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub outcome: SlotOutcome,
    pub feedback_bit: bool,
    pub theta_p: f64,
    pub theta_s: f64,
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Reference for the throughput-loss feedback. `None` keeps the bit
    /// positive in throughput-loss mode.
    pub theta_p_max: Option<f64>,
    /// Keep one [`TraceRow`] every `trace_every` slots (0 keeps none).
    pub trace_every: u64,
    pub record_actions: bool,
    /// Check state invariants every slot.
    pub check_invariants: bool,
}

impl SimOptions {
    /// Full per-slot trace.
    pub fn full(theta_p_max: Option<f64>) -> Self {
        Self { theta_p_max, trace_every: 1, record_actions: true, check_invariants: false }
    }

    /// Counters only.
    pub fn summary() -> Self {
        Self { theta_p_max: None, trace_every: 0, record_actions: false, check_invariants: false }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub config_hash: String,
    pub seed: u64,
    pub horizon: u64,
    pub rows: Vec<TraceRow>,
    pub actions: Vec<ActionCompletion>,
    pub metrics: MetricsAccumulator,
    pub final_primary: PrimaryState,
}

pub const TRACE_HEADER: &str = "slot,primary_tx,secondary_tx,primary_ok,secondary_ok,feedback_bit,theta_p,theta_s";

fn flag(b: bool) -> u8 {
    u8::from(b)
}

fn opt(b: Option<bool>) -> &'static str {
    match b {
        Some(true) => "1",
        Some(false) => "0",
        None => "",
    }
}

impl SimulationTrace {
    /// Trace CSV; absent decode results are empty fields.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.rows.len() * 48 + 128);
        let _ = writeln!(s, "# config_hash={} seed={}", self.config_hash, self.seed);
        s.push_str(TRACE_HEADER);
        s.push('\n');
        for r in &self.rows {
            let o = &r.outcome;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                o.slot_index,
                flag(o.primary_transmitted),
                flag(o.secondary_transmitted),
                opt(o.primary_success),
                opt(o.secondary_success),
                flag(r.feedback_bit),
                r.theta_p,
                r.theta_s
            );
        }
        s
    }
}

/// Decode outcomes for packets that finish in the same slot. Failure
/// probabilities are `rho`/`nu` alone and `rho_star`/`nu_star` together.
pub fn arbitrate_decode<R: Rng + ?Sized>(
    primary_tx: bool,
    secondary_tx: bool,
    cfg: &SimConfig,
    primary_rng: &mut R,
    secondary_rng: &mut R,
) -> (Option<bool>, Option<bool>) {
    let both = primary_tx && secondary_tx;
    let p = primary_tx.then(|| decode(if both { cfg.rho_star } else { cfg.rho }, primary_rng));
    let s = secondary_tx.then(|| decode(if both { cfg.nu_star } else { cfg.nu }, secondary_rng));
    (p, s)
}

/// One Bernoulli decode: true on success.
pub fn decode<R: Rng + ?Sized>(failure_prob: f64, rng: &mut R) -> bool {
    rng.random::<f64>() >= failure_prob
}

/// Runs `horizon_slots` slots with full tracing and the calibrated
/// `theta_p_max` as the feedback reference.
pub fn run_simulation(cfg: &SimConfig, agent: &mut dyn AgentController, horizon_slots: u64) -> Result<SimulationTrace> {
    cfg.validate()?;
    let reference = theta_p_max(cfg)?;
    simulate(cfg, agent, horizon_slots, &SimOptions::full(Some(reference)))
}

/// The simulation loop.
pub fn simulate(
    cfg: &SimConfig,
    agent: &mut dyn AgentController,
    horizon_slots: u64,
    opts: &SimOptions,
) -> Result<SimulationTrace> {
    if horizon_slots == 0 {
        return Err(Error::InvalidArgument("horizon_slots must be >= 1".into()));
    }
    cfg.validate()?;
    let mut rng = RngStreams::new(cfg.seed);
    let arrivals = ArrivalProcess::new(cfg.lambda1)?;
    let mut primary = PrimaryState::idle();
    let mut secondary = SecondaryNode::new();
    let mut metrics = MetricsAccumulator::new(opts.theta_p_max.unwrap_or(0.0));
    let has_reference = opts.theta_p_max.is_some();

    let capacity = horizon_slots.checked_div(opts.trace_every).map_or(0, |n| n as usize + 1);
    let mut rows = Vec::with_capacity(capacity);
    let mut actions = Vec::new();
    let mut busy_prev = false;

    for slot in 0..horizon_slots {
        let arrived = primary.apply_arrivals(&arrivals, cfg, &mut rng.arrivals);
        metrics.arrivals_admitted += u64::from(arrived.admitted);
        metrics.arrivals_dropped += u64::from(arrived.overflow);

        let p = primary.slot_step(busy_prev, cfg, &mut rng.primary_backoff);
        metrics.x3_count += u64::from(p.service_started);
        let s = secondary.slot_step(agent, busy_prev, metrics.theta_s(), slot, cfg, &mut rng.policy);

        let busy = p.wants_tx || s.wants_tx;
        if p.wants_tx && s.wants_tx {
            primary.overlapped = true;
            secondary.overlapped = true;
        }

        let primary_ok = p.completes.then(|| {
            let fail = if primary.overlapped { cfg.rho_star } else { cfg.rho };
            decode(fail, &mut rng.primary_decode)
        });
        let secondary_ok = s.completes_tx.then(|| {
            let fail = if secondary.overlapped { cfg.nu_star } else { cfg.nu };
            decode(fail, &mut rng.secondary_decode)
        });

        metrics.slots += 1;
        metrics.s_tx_slots += u64::from(s.wants_tx);
        if let Some(ok) = primary_ok {
            metrics.record_primary_attempt(primary.overlapped, ok);
            if ok {
                metrics.p_delivered_slots += u64::from(cfg.packet_slots);
                metrics.p_delivered_packets += 1;
            }
        }
        if let Some(ok) = secondary_ok {
            metrics.record_secondary_attempt(secondary.overlapped, ok);
            if ok {
                metrics.s_delivered_slots += u64::from(cfg.packet_slots);
            }
        }

        if let Some(ok) = primary_ok {
            let event = primary.on_tx_complete(ok, cfg)?;
            if event == Some(PrimaryEvent::PacketDropped) {
                metrics.x2_count += 1;
            }
            if event.is_some() && cfg.feedback_cadence == FeedbackCadence::Completion {
                refresh_feedback(&mut metrics, &mut secondary, cfg, has_reference);
            }
        }

        if cfg.feedback_cadence == FeedbackCadence::EverySlot {
            refresh_feedback(&mut metrics, &mut secondary, cfg, has_reference);
        }

        if s.completes_tx || s.completes_silence {
            let done = secondary.complete(secondary_ok, metrics.theta_s(), slot);
            agent.on_complete(&done);
            if opts.record_actions {
                actions.push(done);
            }
        }

        if opts.check_invariants {
            primary.check(cfg).map_err(|e| Error::Contract(format!("slot {slot}: {e}")))?;
            metrics.check(cfg.packet_slots).map_err(|e| Error::Contract(format!("slot {slot}: {e}")))?;
        }

        if opts.trace_every != 0 && slot % opts.trace_every == 0 {
            rows.push(TraceRow {
                outcome: SlotOutcome {
                    slot_index: slot,
                    primary_transmitted: p.wants_tx,
                    secondary_transmitted: s.wants_tx,
                    primary_success: primary_ok,
                    secondary_success: secondary_ok,
                    channel_busy: busy,
                },
                feedback_bit: secondary.last_feedback_bit,
                theta_p: metrics.theta_p(),
                theta_s: metrics.theta_s(),
            });
        }
        busy_prev = busy;
    }

    Ok(SimulationTrace {
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        horizon: horizon_slots,
        rows,
        actions,
        metrics,
        final_primary: primary,
    })
}

fn refresh_feedback(
    metrics: &mut MetricsAccumulator,
    secondary: &mut SecondaryNode,
    cfg: &SimConfig,
    has_reference: bool,
) {
    // without a reference only the failure-ratio mode can go negative
    let bit = match cfg.constraint_mode {
        ConstraintMode::ThroughputLoss if !has_reference => true,
        _ => feedback_bit(metrics, cfg),
    };
    metrics.feedback_evaluations += 1;
    metrics.feedback_negative += u64::from(!bit);
    secondary.last_feedback_bit = bit;
}
