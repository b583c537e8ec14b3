//! Slot mechanics of the secondary transmitter.
//!
//! The node is always backlogged. At each decision point it asks its
//! controller for an action: silence occupies one slot, a backoff counter is
//! executed through DIFS, frozen backoff and a single transmission attempt
//! that is never retried.

use rand::RngCore;

use crate::access::{hear, Heard, Listen};
use crate::agent::{compute_cost, ActionCompletion, ActionId, AgentController};
use crate::config::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondaryPhase {
    Deciding,
    Difs,
    Backoff,
    Transmitting,
    SilentEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InFlight {
    pub action: ActionId,
    pub forced: bool,
    /// Secondary throughput when the action started.
    pub x0p: f64,
    pub start_slot: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondaryNode {
    pub phase: SecondaryPhase,
    pub counter: u32,
    pub difs_remaining: u32,
    pub tx_remaining: u32,
    pub listening: bool,
    pub overlapped: bool,
    pub in_flight: Option<InFlight>,
    /// Latest constraint bit piggybacked by the primary. True until the
    /// first primary completion.
    pub last_feedback_bit: bool,
}

impl Default for SecondaryNode {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SecondaryStep {
    pub wants_tx: bool,
    /// Final slot of the transmission; a decode result is due.
    pub completes_tx: bool,
    /// The one-slot silent epoch ends with this slot.
    pub completes_silence: bool,
}

impl SecondaryNode {
    pub fn new() -> Self {
        Self {
            phase: SecondaryPhase::Deciding,
            counter: 0,
            difs_remaining: 0,
            tx_remaining: 0,
            listening: false,
            overlapped: false,
            in_flight: None,
            last_feedback_bit: true,
        }
    }

    /// Advances one slot. `x0_now` is the secondary throughput before this
    /// slot, recorded as the action's starting point when a decision is made.
    pub fn slot_step(
        &mut self,
        controller: &mut dyn AgentController,
        channel_busy_prev: bool,
        x0_now: f64,
        slot: u64,
        cfg: &SimConfig,
        rng: &mut dyn RngCore,
    ) -> SecondaryStep {
        if self.listening {
            let listen = match self.phase {
                SecondaryPhase::Difs => Some(Listen::Difs),
                SecondaryPhase::Backoff => Some(Listen::Backoff),
                _ => None,
            };
            if let Some(listen) = listen {
                match hear(listen, channel_busy_prev, cfg.difs_slots, &mut self.difs_remaining, &mut self.counter) {
                    Heard::DifsComplete => self.phase = SecondaryPhase::Backoff,
                    Heard::Frozen => self.phase = SecondaryPhase::Difs,
                    Heard::Difs | Heard::Counted => {}
                }
            }
        }

        if self.phase == SecondaryPhase::Deciding {
            let decision = controller.decide(self.last_feedback_bit, rng);
            assert!(decision.action.0 <= cfg.ws as usize, "controller chose action {}", decision.action.0);
            self.in_flight =
                Some(InFlight { action: decision.action, forced: decision.forced, x0p: x0_now, start_slot: slot });
            match decision.action.backoff_counter() {
                None => self.phase = SecondaryPhase::SilentEpoch,
                Some(c) => {
                    self.phase = SecondaryPhase::Difs;
                    self.counter = c;
                    self.difs_remaining = cfg.difs_slots;
                }
            }
        }

        let mut step = SecondaryStep::default();
        match self.phase {
            SecondaryPhase::SilentEpoch => step.completes_silence = true,
            SecondaryPhase::Backoff if self.counter == 0 => {
                self.phase = SecondaryPhase::Transmitting;
                self.tx_remaining = cfg.packet_slots;
                self.overlapped = false;
            }
            _ => {}
        }
        if self.phase == SecondaryPhase::Transmitting {
            step.wants_tx = true;
            self.tx_remaining -= 1;
            step.completes_tx = self.tx_remaining == 0;
        }
        self.listening = matches!(self.phase, SecondaryPhase::Difs | SecondaryPhase::Backoff);
        step
    }

    /// Closes the in-flight action after its final slot. `x0_now` is the
    /// secondary throughput including that slot.
    pub fn complete(&mut self, success: Option<bool>, x0_now: f64, slot: u64) -> ActionCompletion {
        let f = self.in_flight.take().expect("complete() without an action in flight");
        self.phase = SecondaryPhase::Deciding;
        self.listening = false;
        self.overlapped = false;
        ActionCompletion {
            action: f.action,
            forced: f.forced,
            start_slot: f.start_slot,
            end_slot: slot,
            success,
            x0p: f.x0p,
            x0n: x0_now,
            cost: compute_cost(x0_now, f.x0p),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::agent::Decision;

    struct Fixed(ActionId);

    impl AgentController for Fixed {
        fn decide(&mut self, ok: bool, _: &mut dyn RngCore) -> Decision {
            if ok {
                Decision { action: self.0, forced: false }
            } else {
                Decision { action: ActionId::SILENT, forced: true }
            }
        }
        fn name(&self) -> &str {
            "fixed"
        }
    }

    fn run(node: &mut SecondaryNode, ctl: &mut Fixed, busy: &[bool]) -> Vec<SecondaryStep> {
        let cfg = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut prev = false;
        let mut out = Vec::new();
        for (slot, &b) in busy.iter().enumerate() {
            let st = node.slot_step(ctl, prev, 0.0, slot as u64, &cfg, &mut rng);
            if st.completes_tx || st.completes_silence {
                node.complete(st.completes_tx.then_some(true), 0.0, slot as u64);
            }
            prev = b || st.wants_tx;
            out.push(st);
        }
        out
    }

    #[test]
    fn counter_zero_transmits_on_third_slot() {
        let mut node = SecondaryNode::new();
        let steps = run(&mut node, &mut Fixed(ActionId(1)), &[false; 3]);
        assert_eq!(steps.iter().map(|s| s.wants_tx).collect::<Vec<_>>(), [false, false, true]);
        assert!(steps[2].completes_tx);
    }

    #[test]
    fn silence_lasts_one_slot() {
        let mut node = SecondaryNode::new();
        let steps = run(&mut node, &mut Fixed(ActionId(0)), &[false; 4]);
        assert!(steps.iter().all(|s| s.completes_silence && !s.wants_tx));
    }

    #[test]
    fn forced_silence_marks_decision() {
        let mut node = SecondaryNode::new();
        node.last_feedback_bit = false;
        let cfg = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = node.slot_step(&mut Fixed(ActionId(2)), false, 0.25, 7, &cfg, &mut rng);
        assert!(st.completes_silence);
        let done = node.complete(None, 0.2, 7);
        assert!(done.forced && done.action.is_silent());
        assert!((done.cost + 0.05).abs() < 1e-15);
        assert_eq!(node.phase, SecondaryPhase::Deciding);
    }

    /// Counter 2 while the primary occupies slots 1..=5. Hand trace:
    /// slot 0 decides and listens; slot 1 hears idle(0), 1 DIFS slot left;
    /// slots 2..=6 hear busy(1..=5) and re-arm DIFS; slot 7 hears idle(6),
    /// 1 left; slot 8 completes DIFS with counter 2; slot 9 counts to 1;
    /// slot 10 counts to 0 and transmits.
    #[test]
    fn backoff_freezes_under_primary_traffic() {
        let mut busy = vec![false; 14];
        for b in &mut busy[1..=5] {
            *b = true;
        }
        let mut node = SecondaryNode::new();
        let steps = run(&mut node, &mut Fixed(ActionId(3)), &busy);
        let first_tx = steps.iter().position(|s| s.wants_tx).unwrap();
        assert_eq!(first_tx, 10);
    }
}
