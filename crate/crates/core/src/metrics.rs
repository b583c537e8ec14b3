//! Running throughputs, primary drop accounting and the one-bit
//! constraint feedback.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use crate::baselines::StationaryExecutor;
use crate::config::{ConstraintMode, SimConfig};
use crate::error::{Error, Result};
use crate::sim::{simulate, SimOptions};

/// Counters accumulated over a run. Delivered amounts are in payload-slots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsAccumulator {
    pub slots: u64,
    pub p_delivered_slots: u64,
    pub s_delivered_slots: u64,
    /// Primary packets dropped after the last allowed attempt.
    pub x2_count: u64,
    /// Primary packets whose first attempt went on air.
    pub x3_count: u64,
    pub theta_p_max: f64,
    /// Arrivals lost to a full buffer.
    pub arrivals_dropped: u64,
    pub arrivals_admitted: u64,
    pub p_delivered_packets: u64,
    /// Primary attempts split by whether the secondary shared the air.
    pub p_attempts_clear: u64,
    pub p_failures_clear: u64,
    pub p_attempts_overlap: u64,
    pub p_failures_overlap: u64,
    pub s_attempts_clear: u64,
    pub s_failures_clear: u64,
    pub s_attempts_overlap: u64,
    pub s_failures_overlap: u64,
    /// Slots in which the secondary was on air.
    pub s_tx_slots: u64,
    /// Times the feedback bit was evaluated, and how often it was negative.
    pub feedback_evaluations: u64,
    pub feedback_negative: u64,
}

impl MetricsAccumulator {
    pub fn new(theta_p_max: f64) -> Self {
        Self { theta_p_max, ..Self::default() }
    }

    /// Primary throughput so far, 0 before the first slot.
    pub fn theta_p(&self) -> f64 {
        throughput(self.p_delivered_slots, self.slots).unwrap_or(0.0)
    }

    /// Secondary throughput so far, 0 before the first slot.
    pub fn theta_s(&self) -> f64 {
        throughput(self.s_delivered_slots, self.slots).unwrap_or(0.0)
    }

    pub fn loss(&self) -> f64 {
        self.theta_p_max - self.theta_p()
    }

    pub fn record_primary_attempt(&mut self, overlapped: bool, success: bool) {
        if overlapped {
            self.p_attempts_overlap += 1;
            self.p_failures_overlap += u64::from(!success);
        } else {
            self.p_attempts_clear += 1;
            self.p_failures_clear += u64::from(!success);
        }
    }

    pub fn record_secondary_attempt(&mut self, overlapped: bool, success: bool) {
        if overlapped {
            self.s_attempts_overlap += 1;
            self.s_failures_overlap += u64::from(!success);
        } else {
            self.s_attempts_clear += 1;
            self.s_failures_clear += u64::from(!success);
        }
    }

    pub fn check(&self, packet_slots: u32) -> std::result::Result<(), String> {
        if self.x2_count > self.x3_count {
            return Err(format!("x2 {} > x3 {}", self.x2_count, self.x3_count));
        }
        if self.p_delivered_slots + u64::from(packet_slots) * self.x2_count > u64::from(packet_slots) * self.x3_count {
            return Err("more packets finished than were serviced".into());
        }
        Ok(())
    }
}

/// `delivered_slots / slots`.
pub fn throughput(delivered_slots: u64, slots: u64) -> Result<f64> {
    if slots == 0 {
        return Err(Error::InvalidArgument("throughput over zero slots".into()));
    }
    Ok(delivered_slots as f64 / slots as f64)
}

/// Dropped over serviced primary packets; 0 before any service.
pub fn failure_ratio(acc: &MetricsAccumulator) -> f64 {
    if acc.x3_count == 0 {
        0.0
    } else {
        acc.x2_count as f64 / acc.x3_count as f64
    }
}

/// Whether the primary's constraint currently holds.
pub fn feedback_bit(acc: &MetricsAccumulator, cfg: &SimConfig) -> bool {
    match cfg.constraint_mode {
        ConstraintMode::ThroughputLoss => acc.theta_p_max - acc.theta_p() <= cfg.gamma1,
        ConstraintMode::FailureProb => failure_ratio(acc) <= cfg.gamma2,
    }
}

/// Long-run primary throughput with the secondary permanently silent,
/// from a solo run of `calibration_slots` slots at `calibration_seed`.
pub fn calibrate_theta_p_max(cfg: &SimConfig) -> Result<f64> {
    let solo = SimConfig { seed: cfg.calibration_seed, ..cfg.clone() };
    let mut silent = StationaryExecutor::silent(cfg.ws);
    let run = simulate(&solo, &mut silent, cfg.calibration_slots, &SimOptions::summary())?;
    Ok(run.metrics.theta_p())
}

fn cache() -> &'static Mutex<HashMap<String, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<String, f64>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// [`calibrate_theta_p_max`], memoized per scenario (the run seed is not part
/// of the key).
pub fn theta_p_max(cfg: &SimConfig) -> Result<f64> {
    let key = cfg.scenario_key();
    if let Some(&v) = cache().lock().expect("cache poisoned").get(&key) {
        return Ok(v);
    }
    let v = calibrate_theta_p_max(cfg)?;
    cache().lock().expect("cache poisoned").insert(key, v);
    Ok(v)
}
