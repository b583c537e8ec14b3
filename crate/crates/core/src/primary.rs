//! The licensed transmitter: Poisson arrivals into a finite buffer served by
//! an 802.11 DCF state machine with per-stage backoff windows and a retry
//! limit.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::access::{hear, Heard, Listen};
use crate::config::SimConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimaryPhase {
    Idle,
    Difs,
    Backoff,
    Transmitting,
}

/// DCF state of the primary. `stage` is 1-based; 0 only while idle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimaryState {
    pub queue_len: u32,
    pub stage: u32,
    pub counter: u32,
    pub difs_remaining: u32,
    pub tx_remaining: u32,
    pub phase: PrimaryPhase,
    /// The node listened during the previous slot, so `channel_busy_prev` applies.
    pub listening: bool,
    /// The next DIFS completion draws a fresh counter for the current stage.
    /// False after a freeze, where the preserved counter resumes.
    pub pending_draw: bool,
    /// The current transmission shared airtime with the secondary.
    pub overlapped: bool,
}

impl Default for PrimaryState {
    fn default() -> Self {
        Self::idle()
    }
}

/// Result of one slot of primary channel access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PrimaryStep {
    pub wants_tx: bool,
    /// A stage-1 transmission started this slot (service start, X3).
    pub service_started: bool,
    /// This slot is the final slot of the transmission.
    pub completes: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimaryEvent {
    PacketDelivered,
    /// Final allowed attempt failed (X2).
    PacketDropped,
    /// First attempt of a new packet went on air (X3).
    NewServiceStarted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ArrivalOutcome {
    pub admitted: u32,
    pub overflow: u32,
}

/// Per-slot Poisson arrival source.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    dist: Option<Poisson<f64>>,
}

impl ArrivalProcess {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda == 0.0 {
            return Ok(Self { dist: None });
        }
        let dist = Poisson::new(lambda).map_err(|e| Error::InvalidConfig(format!("lambda1 = {lambda}: {e}")))?;
        Ok(Self { dist: Some(dist) })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.dist {
            Some(d) => d.sample(rng) as u64,
            None => 0,
        }
    }
}

impl PrimaryState {
    pub fn idle() -> Self {
        Self {
            queue_len: 0,
            stage: 0,
            counter: 0,
            difs_remaining: 0,
            tx_remaining: 0,
            phase: PrimaryPhase::Idle,
            listening: false,
            pending_draw: false,
            overlapped: false,
        }
    }

    /// Admits this slot's Poisson arrivals; the overflow beyond `buffer_b` is lost.
    pub fn apply_arrivals<R: Rng + ?Sized>(
        &mut self,
        arrivals: &ArrivalProcess,
        cfg: &SimConfig,
        rng: &mut R,
    ) -> ArrivalOutcome {
        let k = arrivals.draw(rng);
        self.admit(k, cfg)
    }

    /// Admits `k` arriving packets.
    pub fn admit(&mut self, k: u64, cfg: &SimConfig) -> ArrivalOutcome {
        if k == 0 {
            return ArrivalOutcome::default();
        }
        let room = u64::from(cfg.buffer_b - self.queue_len);
        let admitted = k.min(room) as u32;
        let overflow = (k - u64::from(admitted)).min(u64::from(u32::MAX)) as u32;
        self.queue_len += admitted;
        if self.phase == PrimaryPhase::Idle && self.queue_len > 0 {
            self.begin_attempt(1, cfg);
        }
        ArrivalOutcome { admitted, overflow }
    }

    fn begin_attempt(&mut self, stage: u32, cfg: &SimConfig) {
        self.stage = stage;
        self.counter = 0;
        self.phase = PrimaryPhase::Difs;
        self.difs_remaining = cfg.difs_slots;
        self.listening = false;
        self.pending_draw = true;
        self.overlapped = false;
    }

    /// Advances the DCF machine by one slot.
    pub fn slot_step<R: Rng + ?Sized>(&mut self, channel_busy_prev: bool, cfg: &SimConfig, rng: &mut R) -> PrimaryStep {
        if self.listening {
            let listen = match self.phase {
                PrimaryPhase::Difs => Some(Listen::Difs),
                PrimaryPhase::Backoff => Some(Listen::Backoff),
                _ => None,
            };
            if let Some(listen) = listen {
                match hear(listen, channel_busy_prev, cfg.difs_slots, &mut self.difs_remaining, &mut self.counter) {
                    Heard::DifsComplete => {
                        self.phase = PrimaryPhase::Backoff;
                        if self.pending_draw {
                            self.counter = rng.random_range(0..cfg.window(self.stage));
                            self.pending_draw = false;
                        }
                    }
                    Heard::Frozen => self.phase = PrimaryPhase::Difs,
                    Heard::Difs | Heard::Counted => {}
                }
            }
        }

        let mut step = PrimaryStep::default();
        if self.phase == PrimaryPhase::Backoff && self.counter == 0 {
            self.phase = PrimaryPhase::Transmitting;
            self.tx_remaining = cfg.packet_slots;
            self.overlapped = false;
            step.service_started = self.stage == 1;
        }
        if self.phase == PrimaryPhase::Transmitting {
            step.wants_tx = true;
            self.tx_remaining -= 1;
            step.completes = self.tx_remaining == 0;
        }
        self.listening = matches!(self.phase, PrimaryPhase::Difs | PrimaryPhase::Backoff);
        step
    }

    /// Resolves a finished transmission. Returns `PacketDelivered` or
    /// `PacketDropped` when the head-of-line packet leaves the node, or
    /// `None` when a failed attempt moves to the next stage.
    pub fn on_tx_complete(&mut self, success: bool, cfg: &SimConfig) -> Result<Option<PrimaryEvent>> {
        if self.phase != PrimaryPhase::Transmitting || self.tx_remaining != 0 {
            return Err(Error::Contract("on_tx_complete outside a finished transmission".into()));
        }
        if !success && self.stage < cfg.max_retry_m {
            self.begin_attempt(self.stage + 1, cfg);
            return Ok(None);
        }
        let event = if success { PrimaryEvent::PacketDelivered } else { PrimaryEvent::PacketDropped };
        self.queue_len -= 1;
        if self.queue_len > 0 {
            self.begin_attempt(1, cfg);
        } else {
            *self = PrimaryState::idle();
        }
        Ok(Some(event))
    }

    /// Checks the structural invariants of the state.
    pub fn check(&self, cfg: &SimConfig) -> std::result::Result<(), String> {
        if self.queue_len > cfg.buffer_b {
            return Err(format!("queue_len {} > B {}", self.queue_len, cfg.buffer_b));
        }
        match self.phase {
            PrimaryPhase::Idle => {
                if self.queue_len != 0 || self.stage != 0 || self.counter != 0 {
                    return Err(format!("idle with {self:?}"));
                }
            }
            PrimaryPhase::Backoff => {
                if !(1..=cfg.max_retry_m).contains(&self.stage) || self.counter >= cfg.window(self.stage) {
                    return Err(format!("bad backoff {self:?}"));
                }
            }
            PrimaryPhase::Transmitting => {
                if self.counter != 0 {
                    return Err(format!("transmitting with counter {}", self.counter));
                }
            }
            PrimaryPhase::Difs => {
                if !(1..=cfg.max_retry_m).contains(&self.stage) || self.queue_len == 0 {
                    return Err(format!("bad difs {self:?}"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn in_backoff(stage: u32, counter: u32) -> PrimaryState {
        PrimaryState {
            queue_len: 1,
            stage,
            counter,
            phase: PrimaryPhase::Backoff,
            listening: true,
            ..PrimaryState::idle()
        }
    }

    #[test]
    fn zero_rate_leaves_state_alone() {
        let arrivals = ArrivalProcess::new(0.0).unwrap();
        let mut s = PrimaryState::idle();
        let mut r = rng();
        for _ in 0..100 {
            assert_eq!(s.apply_arrivals(&arrivals, &cfg(), &mut r), ArrivalOutcome::default());
        }
        assert_eq!(s, PrimaryState::idle());
    }

    #[test]
    fn arrival_wakes_idle_node_into_difs() {
        let mut s = PrimaryState::idle();
        let out = s.admit(1, &cfg());
        assert_eq!(out, ArrivalOutcome { admitted: 1, overflow: 0 });
        assert_eq!(s.phase, PrimaryPhase::Difs);
        assert_eq!(s.queue_len, 1);
        assert_eq!(s.stage, 1);
        assert_eq!(s.difs_remaining, cfg().difs_slots);
    }

    #[test]
    fn full_buffer_overflows() {
        let mut s = in_backoff(1, 2);
        s.queue_len = 4;
        let out = s.admit(3, &cfg());
        assert_eq!(out, ArrivalOutcome { admitted: 0, overflow: 3 });
        assert_eq!(s.queue_len, 4);
    }

    #[test]
    fn idle_slot_decrements_counter() {
        let mut s = in_backoff(1, 3);
        let step = s.slot_step(false, &cfg(), &mut rng());
        assert_eq!(s.counter, 2);
        assert_eq!(s.phase, PrimaryPhase::Backoff);
        assert!(!step.wants_tx);
    }

    #[test]
    fn busy_slot_freezes_and_rearms_difs() {
        let mut s = in_backoff(1, 3);
        s.slot_step(true, &cfg(), &mut rng());
        assert_eq!(s.counter, 3);
        assert_eq!(s.phase, PrimaryPhase::Difs);
        assert_eq!(s.difs_remaining, cfg().difs_slots);
        // the frozen counter survives the next DIFS
        s.slot_step(false, &cfg(), &mut rng());
        s.slot_step(false, &cfg(), &mut rng());
        assert_eq!(s.phase, PrimaryPhase::Backoff);
        assert_eq!(s.counter, 3);
    }

    #[test]
    fn counter_zero_transmits_and_marks_service_start() {
        let mut s = in_backoff(1, 1);
        let step = s.slot_step(false, &cfg(), &mut rng());
        assert!(step.wants_tx && step.service_started && step.completes);
        assert_eq!(s.phase, PrimaryPhase::Transmitting);

        let mut retry = in_backoff(2, 0);
        let step = retry.slot_step(false, &cfg(), &mut rng());
        assert!(step.wants_tx && !step.service_started);
    }

    #[test]
    fn multi_slot_packets_hold_the_air() {
        let c = SimConfig { packet_slots: 3, ..cfg() };
        let mut s = in_backoff(1, 0);
        let steps: Vec<_> = (0..3).map(|_| s.slot_step(false, &c, &mut rng())).collect();
        assert!(steps.iter().all(|st| st.wants_tx));
        assert_eq!(steps.iter().map(|st| st.completes).collect::<Vec<_>>(), [false, false, true]);
        assert_eq!(steps.iter().filter(|st| st.service_started).count(), 1);
    }

    fn transmitting(stage: u32, queue_len: u32) -> PrimaryState {
        PrimaryState { queue_len, stage, phase: PrimaryPhase::Transmitting, ..PrimaryState::idle() }
    }

    #[test]
    fn failure_at_last_stage_drops_packet() {
        let mut s = transmitting(4, 2);
        let ev = s.on_tx_complete(false, &cfg()).unwrap();
        assert_eq!(ev, Some(PrimaryEvent::PacketDropped));
        assert_eq!(s.queue_len, 1);
        assert_eq!(s.stage, 1);
        assert_eq!(s.phase, PrimaryPhase::Difs);
    }

    #[test]
    fn failure_before_last_stage_escalates() {
        let mut s = transmitting(2, 1);
        assert_eq!(s.on_tx_complete(false, &cfg()).unwrap(), None);
        assert_eq!(s.stage, 3);
        assert_eq!(s.phase, PrimaryPhase::Difs);
        assert!(s.pending_draw);
        let mut r = rng();
        let mut seen = [false; 8];
        for _ in 0..2000 {
            let mut t = s.clone();
            t.slot_step(false, &cfg(), &mut r);
            t.slot_step(false, &cfg(), &mut r);
            t.slot_step(false, &cfg(), &mut r);
            assert_eq!(t.stage, 3);
            // counter was drawn from [0, 7] and decremented at most once
            let drawn = if t.phase == PrimaryPhase::Transmitting { 0 } else { t.counter };
            assert!(drawn < 8);
            seen[drawn as usize] = true;
        }
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn success_with_empty_queue_returns_to_idle() {
        let mut s = transmitting(1, 1);
        assert_eq!(s.on_tx_complete(true, &cfg()).unwrap(), Some(PrimaryEvent::PacketDelivered));
        assert_eq!(s, PrimaryState::idle());
    }

    #[test]
    fn completion_outside_transmission_is_rejected() {
        let mut s = in_backoff(1, 2);
        assert!(matches!(s.on_tx_complete(true, &cfg()), Err(Error::Contract(_))));
    }
}
