//! The learning secondary.
//!
//! The learner never sees the primary's state. It keeps one reward value per
//! action (silence, or backoff counter `i - 1` for action `i`) and updates it
//! with the throughput change the action produced. Step size `1/t` turns the
//! update into a per-action sample average. A single feedback bit from the
//! primary overrides everything: when the constraint is violated the learner
//! stays silent.

use std::collections::VecDeque;

use rand::Rng;

use crate::config::{LearnerParams, SimConfig, StepIndex};
use crate::error::{Error, Result};

/// Secondary action. Index 0 keeps silent; index `i >= 1` picks backoff counter `i - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId(pub usize);

impl ActionId {
    pub const SILENT: ActionId = ActionId(0);

    pub fn is_silent(self) -> bool {
        self.0 == 0
    }

    /// Backoff counter for a transmitting action.
    pub fn backoff_counter(self) -> Option<u32> {
        self.0.checked_sub(1).map(|c| c as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector {
    pub r: Vec<f64>,
    pub counts: Vec<u64>,
}

impl RewardVector {
    pub fn zeros(num_actions: usize) -> Self {
        Self { r: vec![0.0; num_actions], counts: vec![0; num_actions] }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Highest-valued action; ties go to the lowest index.
    pub fn argmax(&self) -> ActionId {
        let mut best = 0;
        for (i, &v) in self.r.iter().enumerate().skip(1) {
            if v > self.r[best] {
                best = i;
            }
        }
        ActionId(best)
    }
}

/// Step size `1/t`.
pub fn alpha(t: u64) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidArgument("step size is undefined at t = 0".into()));
    }
    Ok(1.0 / t as f64)
}

/// Throughput gained (or lost) across an action.
pub fn compute_cost(x0n: f64, x0p: f64) -> f64 {
    x0n - x0p
}

/// `r[u] <- (1 - a) r[u] + a c` with `a = 1/t`.
pub fn q_update(rewards: &mut RewardVector, u: ActionId, c: f64, t: u64) -> Result<()> {
    q_update_discounted(rewards, u, c, t, 0.0)
}

/// Update with a discounted bootstrap on the current maximum. Since the
/// next state is unobservable the maximum is taken over the same vector;
/// `gamma = 0` is the stateless rule.
pub fn q_update_discounted(rewards: &mut RewardVector, u: ActionId, c: f64, t: u64, gamma: f64) -> Result<()> {
    let a = alpha(t)?;
    if u.0 >= rewards.len() {
        return Err(Error::InvalidArgument(format!("action {} out of range", u.0)));
    }
    let target = if gamma == 0.0 { c } else { c + gamma * rewards.r.iter().copied().fold(f64::NEG_INFINITY, f64::max) };
    rewards.r[u.0] = (1.0 - a) * rewards.r[u.0] + a * target;
    rewards.counts[u.0] += 1;
    Ok(())
}

/// Forced silence when the constraint is violated, else epsilon-greedy.
pub fn choose_action<R: Rng + ?Sized>(rewards: &RewardVector, tau: f64, constraint_ok: bool, rng: &mut R) -> ActionId {
    if !constraint_ok {
        return ActionId::SILENT;
    }
    if tau > 0.0 && rng.random::<f64>() < tau {
        return ActionId(rng.random_range(0..rewards.len()));
    }
    rewards.argmax()
}

/// `tau0 / (1 + t / T0)`, zero once converged.
pub fn exploration_schedule(t: u64, params: &LearnerParams, converged: bool) -> f64 {
    if converged {
        return 0.0;
    }
    params.tau0 / (1.0 + t as f64 / params.tau_decay_actions)
}

/// True when the window is full and no reward moved by `eps` or more across it.
pub fn convergence_detected<'a, I>(window: I, required: usize, eps: f64) -> bool
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut lo: Vec<f64> = Vec::new();
    let mut hi: Vec<f64> = Vec::new();
    let mut n = 0;
    for snap in window {
        if lo.is_empty() {
            lo = snap.to_vec();
            hi = snap.to_vec();
        } else {
            for ((l, h), &v) in lo.iter_mut().zip(hi.iter_mut()).zip(snap) {
                *l = l.min(v);
                *h = h.max(v);
            }
        }
        n += 1;
    }
    n >= required && lo.iter().zip(&hi).all(|(l, h)| h - l < eps)
}

/// What the controller decided at a decision point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub action: ActionId,
    /// Silence imposed by a negative feedback bit rather than chosen.
    pub forced: bool,
}

/// A finished secondary action and the throughput change it produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionCompletion {
    pub action: ActionId,
    pub forced: bool,
    pub start_slot: u64,
    pub end_slot: u64,
    /// Decode result, `None` for silence.
    pub success: Option<bool>,
    pub x0p: f64,
    pub x0n: f64,
    pub cost: f64,
}

/// Anything that can drive the secondary: the learner, a fixed policy
/// vector, or a baseline.
pub trait AgentController {
    fn decide(&mut self, constraint_ok: bool, rng: &mut dyn rand::RngCore) -> Decision;

    fn on_complete(&mut self, _done: &ActionCompletion) {}

    fn name(&self) -> &str;
}

/// One row of the reward trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardRecord {
    pub t: u64,
    pub action: ActionId,
    pub cost: f64,
    pub rewards: Vec<f64>,
}

/// The Q-learning secondary.
#[derive(Debug, Clone)]
pub struct QLearner {
    pub rewards: RewardVector,
    /// Completed voluntary actions.
    pub t: u64,
    pub tau: f64,
    params: LearnerParams,
    window: VecDeque<Vec<f64>>,
    /// `(t, slot)` at which convergence was first detected.
    pub converged_at: Option<(u64, u64)>,
    pub log: Vec<RewardRecord>,
    record: bool,
}

impl QLearner {
    pub fn new(cfg: &SimConfig) -> Self {
        let params = cfg.learner.clone();
        Self {
            rewards: RewardVector::zeros(cfg.num_actions()),
            t: 0,
            tau: exploration_schedule(0, &params, false),
            window: VecDeque::with_capacity(params.convergence_window + 1),
            params,
            converged_at: None,
            log: Vec::new(),
            record: true,
        }
    }

    /// Drops the per-action reward log.
    pub fn without_log(mut self) -> Self {
        self.record = false;
        self
    }

    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }

    pub fn params(&self) -> &LearnerParams {
        &self.params
    }
}

impl AgentController for QLearner {
    fn decide(&mut self, constraint_ok: bool, rng: &mut dyn rand::RngCore) -> Decision {
        let action = choose_action(&self.rewards, self.tau, constraint_ok, rng);
        Decision { action, forced: !constraint_ok }
    }

    fn on_complete(&mut self, done: &ActionCompletion) {
        if done.forced && !self.params.update_on_forced {
            return;
        }
        self.t += 1;
        let step = match self.params.step_index {
            StepIndex::PerAction => self.rewards.counts[done.action.0] + 1,
            StepIndex::Global => self.t,
        };
        q_update_discounted(&mut self.rewards, done.action, done.cost, step, self.params.gamma_discount)
            .expect("t >= 1 and action in range");

        if self.window.len() == self.params.convergence_window {
            self.window.pop_front();
        }
        self.window.push_back(self.rewards.r.clone());
        if self.converged_at.is_none()
            && convergence_detected(
                self.window.iter().map(Vec::as_slice),
                self.params.convergence_window,
                self.params.convergence_eps,
            )
        {
            self.converged_at = Some((self.t, done.end_slot));
        }
        self.tau = exploration_schedule(self.t, &self.params, self.converged());

        if self.record {
            self.log.push(RewardRecord {
                t: self.t,
                action: done.action,
                cost: done.cost,
                rewards: self.rewards.r.clone(),
            });
        }
    }

    fn name(&self) -> &str {
        "qlearning"
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rv(r: &[f64]) -> RewardVector {
        RewardVector { r: r.to_vec(), counts: vec![0; r.len()] }
    }

    #[test]
    fn negative_feedback_forces_silence() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rewards = rv(&[-1.0, 5.0, 4.0, 3.0]);
        for _ in 0..100 {
            assert_eq!(choose_action(&rewards, 1.0, false, &mut rng), ActionId::SILENT);
        }
    }

    #[test]
    fn greedy_choice_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(choose_action(&rv(&[0.0; 4]), 0.0, true, &mut rng), ActionId(0));
        assert_eq!(choose_action(&rv(&[0.1, 0.5, 0.2, 0.3]), 0.0, true, &mut rng), ActionId(1));
        assert_eq!(choose_action(&rv(&[0.1, 0.5, 0.5, 0.3]), 0.0, true, &mut rng), ActionId(1));
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0u32; 4];
        for _ in 0..40_000 {
            counts[choose_action(&rv(&[0.0, 9.0, 0.0, 0.0]), 1.0, true, &mut rng).0] += 1;
        }
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 400.0, "{counts:?}");
        }
    }

    #[test]
    fn step_size() {
        assert_eq!(alpha(1).unwrap(), 1.0);
        assert_eq!(alpha(2).unwrap(), 0.5);
        assert_eq!(alpha(10).unwrap(), 0.1);
        assert!(alpha(0).is_err());
    }

    #[test]
    fn cost_is_a_plain_difference() {
        assert!((compute_cost(0.30, 0.25) - 0.05).abs() < 1e-15);
        assert_eq!(compute_cost(0.25, 0.25), 0.0);
        assert!((compute_cost(0.20, 0.25) + 0.05).abs() < 1e-15);
    }

    #[test]
    fn update_examples() {
        let mut r = RewardVector::zeros(4);
        q_update(&mut r, ActionId(2), 0.4, 1).unwrap();
        assert_eq!(r.r, [0.0, 0.0, 0.4, 0.0]);
        q_update(&mut r, ActionId(2), 0.2, 2).unwrap();
        assert!((r.r[2] - 0.3).abs() < 1e-15);
        assert_eq!(r.counts, [0, 0, 2, 0]);

        let mut r = RewardVector::zeros(2);
        for (t, c) in [0.1, 0.3, 0.5].into_iter().enumerate() {
            q_update(&mut r, ActionId(1), c, t as u64 + 1).unwrap();
        }
        assert!((r.r[1] - 0.3).abs() < 1e-12);
        assert!(q_update(&mut r, ActionId(2), 0.1, 1).is_err());
    }

    #[test]
    fn discounted_update_bootstraps_on_max() {
        let mut r = rv(&[0.0, 1.0]);
        q_update_discounted(&mut r, ActionId(0), 0.5, 2, 0.5).unwrap();
        // 0.5 * 0 + 0.5 * (0.5 + 0.5 * 1.0)
        assert!((r.r[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn schedule_values() {
        let p = LearnerParams::default();
        assert_eq!(exploration_schedule(0, &p, false), 0.3);
        assert!((exploration_schedule(200, &p, false) - 0.15).abs() < 1e-15);
        assert_eq!(exploration_schedule(5, &p, true), 0.0);
    }

    #[test]
    fn convergence_window() {
        let flat = vec![vec![0.1, 0.2]; 50];
        assert!(convergence_detected(flat.iter().map(Vec::as_slice), 50, 1e-3));
        assert!(!convergence_detected(flat[..49].iter().map(Vec::as_slice), 50, 1e-3));
        let mut drift = flat.clone();
        drift[30][1] += 0.01;
        assert!(!convergence_detected(drift.iter().map(Vec::as_slice), 50, 1e-3));
    }

    #[test]
    fn forced_silence_does_not_advance_learner() {
        let mut q = QLearner::new(&SimConfig::default());
        let done = ActionCompletion {
            action: ActionId::SILENT,
            forced: true,
            start_slot: 0,
            end_slot: 0,
            success: None,
            x0p: 0.2,
            x0n: 0.1,
            cost: -0.1,
        };
        q.on_complete(&done);
        assert_eq!(q.t, 0);
        assert_eq!(q.rewards, RewardVector::zeros(4));

        let mut cfg = SimConfig::default();
        cfg.learner.update_on_forced = true;
        let mut q = QLearner::new(&cfg);
        q.on_complete(&done);
        assert_eq!(q.t, 1);
        assert_eq!(q.rewards.r[0], -0.1);
    }

    proptest! {
        #[test]
        fn stored_value_is_the_sample_mean(costs in prop::collection::vec(-1.0f64..1.0, 1..100)) {
            let mut r = RewardVector::zeros(1);
            for (i, &c) in costs.iter().enumerate() {
                q_update(&mut r, ActionId(0), c, i as u64 + 1).unwrap();
            }
            let mean = costs.iter().sum::<f64>() / costs.len() as f64;
            prop_assert!((r.r[0] - mean).abs() < 1e-12);
        }

        #[test]
        fn greedy_choice_is_pure(r in prop::collection::vec(-1.0f64..1.0, 2..8), s1 in any::<u64>(), s2 in any::<u64>()) {
            let rewards = rv(&r);
            let a = choose_action(&rewards, 0.0, true, &mut ChaCha8Rng::seed_from_u64(s1));
            let b = choose_action(&rewards, 0.0, true, &mut ChaCha8Rng::seed_from_u64(s2));
            prop_assert_eq!(a, b);
            prop_assert!(r.iter().all(|&v| v <= r[a.0]));
        }

        #[test]
        fn counts_track_learner_time(actions in prop::collection::vec((0usize..4, -1.0f64..1.0, any::<bool>()), 1..200)) {
            let mut q = QLearner::new(&SimConfig::default());
            for (i, &(a, c, forced)) in actions.iter().enumerate() {
                q.on_complete(&ActionCompletion {
                    action: ActionId(if forced { 0 } else { a }),
                    forced,
                    start_slot: i as u64,
                    end_slot: i as u64,
                    success: None,
                    x0p: 0.0,
                    x0n: 0.0,
                    cost: c,
                });
                prop_assert_eq!(q.t, q.rewards.counts.iter().sum::<u64>());
            }
        }
    }
}
