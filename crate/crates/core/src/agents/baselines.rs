//! Comparison learners: an optimistic model-based planner and plain Q-learning.

use serde::{Deserialize, Serialize};

use super::{row_max, Agent, UpdateEvent, UpdateKind};
use crate::error::{invalid, Result};
use crate::mdp::{optimal_values, QFunction, TabularMdp};

const PLAN_TOL: f64 = 1e-10;

fn check_shape(num_states: usize, num_actions: usize, discount: f64) -> Result<()> {
    if num_states == 0 || num_actions == 0 {
        return invalid("agent needs at least one state and one action");
    }
    if !(discount > 0.0 && discount < 1.0) {
        return invalid(format!("discount must lie in (0, 1), got {discount}"));
    }
    Ok(())
}

/// Empirical-model planner. Keeps full transition counts, so its memory is
/// `S * S * A`, and re-solves its optimistic model whenever the visit count of
/// the observed pair reaches a power of two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBasedAgent {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    optimism: f64,
    counts: Vec<u64>,
    visits: Vec<u64>,
    reward_sum: Vec<f64>,
    q: QFunction,
    v: Vec<f64>,
    steps: u64,
}

impl ModelBasedAgent {
    pub fn new(num_states: usize, num_actions: usize, discount: f64, optimism: f64) -> Result<Self> {
        check_shape(num_states, num_actions, discount)?;
        if !(optimism >= 0.0 && optimism.is_finite()) {
            return invalid(format!("optimism must be non-negative, got {optimism}"));
        }
        let pairs = num_states * num_actions;
        let mut agent = Self {
            num_states,
            num_actions,
            discount,
            optimism,
            counts: vec![0; pairs * num_states],
            visits: vec![0; pairs],
            reward_sum: vec![0.0; pairs],
            q: QFunction::constant(num_states, num_actions, 0.0),
            v: vec![0.0; num_states],
            steps: 0,
        };
        agent.replan()?;
        Ok(agent)
    }

    /// The optimistic empirical model the agent currently plans on. Unvisited
    /// pairs self-loop with reward 1.
    pub fn empirical_model(&self) -> Result<TabularMdp> {
        let (n_s, n_a) = (self.num_states, self.num_actions);
        let mut rewards = vec![0.0; n_s * n_a];
        let mut transitions = vec![0.0; n_s * n_a * n_s];
        for s in 0..n_s {
            for a in 0..n_a {
                let i = s * n_a + a;
                let row = &mut transitions[i * n_s..(i + 1) * n_s];
                let n = self.visits[i];
                if n == 0 {
                    rewards[i] = 1.0;
                    row[s] = 1.0;
                    continue;
                }
                let mean = self.reward_sum[i] / n as f64;
                rewards[i] = (mean + self.optimism / (n as f64).sqrt()).min(1.0);
                for (next, p) in row.iter_mut().enumerate() {
                    *p = self.counts[i * n_s + next] as f64 / n as f64;
                }
            }
        }
        TabularMdp::from_flat(n_s, n_a, self.discount, rewards, transitions)
    }

    fn replan(&mut self) -> Result<()> {
        let model = self.empirical_model()?;
        let (v, q) = optimal_values(&model, PLAN_TOL)?;
        self.v = v.0;
        self.q = q;
        Ok(())
    }
}

impl Agent for ModelBasedAgent {
    fn num_states(&self) -> usize {
        self.num_states
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn observe(&mut self, s: usize, a: usize, reward: f64, s_next: usize) -> Result<UpdateEvent> {
        if s >= self.num_states || s_next >= self.num_states || a >= self.num_actions {
            return invalid(format!("transition ({s}, {a}, {s_next}) out of range"));
        }
        self.steps += 1;
        let i = s * self.num_actions + a;
        let mut event = UpdateEvent::idle(s, a, self.q.get(s, a));
        self.visits[i] += 1;
        self.reward_sum[i] += reward;
        self.counts[i * self.num_states + s_next] += 1;
        if self.visits[i].is_power_of_two() {
            self.replan()?;
            event.record(UpdateKind::Baseline, self.q.get(s, a), 0.0);
        }
        Ok(event)
    }

    fn q(&self) -> &QFunction {
        &self.q
    }

    fn values(&self) -> &[f64] {
        &self.v
    }

    fn steps(&self) -> u64 {
        self.steps
    }

    fn table_sizes(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("counts", self.counts.len()),
            ("visits", self.visits.len()),
            ("reward_sum", self.reward_sum.len()),
            ("q", self.q.as_slice().len()),
            ("v", self.v.len()),
        ]
    }
}

/// Step-size schedule for [`VanillaQAgent`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LearningRate {
    /// `1 / k` on the `k`-th visit of a pair.
    InverseCount,
    Constant(f64),
}

impl LearningRate {
    pub fn at(&self, visit: u64) -> f64 {
        match *self {
            LearningRate::InverseCount => 1.0 / visit as f64,
            LearningRate::Constant(alpha) => alpha,
        }
    }
}

/// Single-step optimistic Q-learning without stages or bonuses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanillaQAgent {
    discount: f64,
    rate: LearningRate,
    q: QFunction,
    v: Vec<f64>,
    visits: Vec<u64>,
    steps: u64,
}

impl VanillaQAgent {
    pub fn new(num_states: usize, num_actions: usize, discount: f64, rate: LearningRate) -> Result<Self> {
        check_shape(num_states, num_actions, discount)?;
        if let LearningRate::Constant(alpha) = rate {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return invalid(format!("learning rate must lie in (0, 1], got {alpha}"));
            }
        }
        let bound = 1.0 / (1.0 - discount);
        Ok(Self {
            discount,
            rate,
            q: QFunction::constant(num_states, num_actions, bound),
            v: vec![bound; num_states],
            visits: vec![0; num_states * num_actions],
            steps: 0,
        })
    }

    pub fn learning_rate(&self, s: usize, a: usize) -> f64 {
        self.rate.at(self.visits[s * self.q.num_actions() + a].max(1))
    }
}

impl Agent for VanillaQAgent {
    fn num_states(&self) -> usize {
        self.q.num_states()
    }

    fn num_actions(&self) -> usize {
        self.q.num_actions()
    }

    fn observe(&mut self, s: usize, a: usize, reward: f64, s_next: usize) -> Result<UpdateEvent> {
        if s >= self.num_states() || s_next >= self.num_states() || a >= self.num_actions() {
            return invalid(format!("transition ({s}, {a}, {s_next}) out of range"));
        }
        self.steps += 1;
        let mut event = UpdateEvent::idle(s, a, self.q.get(s, a));
        let i = s * self.q.num_actions() + a;
        self.visits[i] += 1;
        let alpha = self.rate.at(self.visits[i]);
        let target = reward + self.discount * row_max(self.q.row(s_next));
        let new_q = (1.0 - alpha) * self.q.get(s, a) + alpha * target;
        self.q.set(s, a, new_q);
        self.v[s] = self.q.max_in_row(s);
        event.record(UpdateKind::Baseline, new_q, 0.0);
        Ok(event)
    }

    fn q(&self) -> &QFunction {
        &self.q
    }

    fn values(&self) -> &[f64] {
        &self.v
    }

    fn steps(&self) -> u64 {
        self.steps
    }

    fn table_sizes(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("q", self.q.as_slice().len()),
            ("v", self.v.len()),
            ("visits", self.visits.len()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_based_starts_optimistic() {
        let agent = ModelBasedAgent::new(3, 2, 0.5, 0.0).unwrap();
        assert!(agent.values().iter().all(|v| (v - 2.0).abs() < 1e-9));
        let model = agent.empirical_model().unwrap();
        assert_eq!(model.reward(1, 1), 1.0);
    }

    #[test]
    fn model_based_memory_is_quadratic_in_states() {
        let agent = ModelBasedAgent::new(7, 3, 0.9, 0.1).unwrap();
        let sizes = agent.table_sizes();
        assert!(sizes.contains(&("counts", 7 * 7 * 3)));
    }

    #[test]
    fn vanilla_rate_is_inverse_count() {
        let mut agent = VanillaQAgent::new(1, 1, 0.5, LearningRate::InverseCount).unwrap();
        for k in 1..=5u64 {
            agent.observe(0, 0, 1.0, 0).unwrap();
            assert_eq!(LearningRate::InverseCount.at(k), 1.0 / k as f64);
        }
        assert_eq!(agent.learning_rate(0, 0), 0.2);
    }

    #[test]
    fn vanilla_converges_on_single_state() {
        let mut agent = VanillaQAgent::new(1, 1, 0.5, LearningRate::InverseCount).unwrap();
        for _ in 0..10_000 {
            agent.observe(0, 0, 1.0, 0).unwrap();
        }
        assert!((agent.q().get(0, 0) - 2.0).abs() < 0.01);
    }

    #[test]
    fn vanilla_greedy_stable_with_gap() {
        let mut agent = VanillaQAgent::new(1, 2, 0.5, LearningRate::InverseCount).unwrap();
        agent.observe(0, 1, 0.0, 0).unwrap();
        assert_eq!(agent.act(0), 0);
        for _ in 0..100 {
            let a = agent.act(0);
            agent.observe(0, a, 1.0, 0).unwrap();
            assert_eq!(agent.act(0), 0);
        }
    }
}
