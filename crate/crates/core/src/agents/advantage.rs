use serde::{Deserialize, Serialize};

use super::{bernstein_bonus, Agent, AgentCore, BernsteinParams, BernsteinStats, UpdateEvent, UpdateKind};
use crate::error::Result;
use crate::mdp::QFunction;
use crate::schedule::StageSchedule;

/// Multi-stage Q-learning with reference-advantage decomposition.
///
/// Type-I updates estimate `P V` as a short-stage mean of the advantage
/// `V - V_ref` plus a lifetime mean of `V_ref`, with a variance-aware bonus.
/// Type-II updates are the plain stage mean. `V_ref(s)` is frozen to `V(s)`
/// the first time the state has been visited `N1` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageAgent {
    core: AgentCore,
    tail_coeff: f64,
    v_ref: Vec<f64>,
    mu_ref: Vec<f64>,
    sigma_ref: Vec<f64>,
    sigma_check: Vec<f64>,
    state_visits: Vec<u64>,
    reference_fixed: Vec<bool>,
}

impl AdvantageAgent {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        schedule: StageSchedule,
        bonus_scale: f64,
        tail_coeff: f64,
    ) -> Result<Self> {
        let bound = schedule.value_bound();
        let core = AgentCore::new(num_states, num_actions, schedule, bonus_scale)?;
        let pairs = num_states * num_actions;
        Ok(Self {
            core,
            tail_coeff,
            v_ref: vec![bound; num_states],
            mu_ref: vec![0.0; pairs],
            sigma_ref: vec![0.0; pairs],
            sigma_check: vec![0.0; pairs],
            state_visits: vec![0; num_states],
            reference_fixed: vec![false; num_states],
        })
    }

    pub fn reference_values(&self) -> &[f64] {
        &self.v_ref
    }

    pub fn reference_fixed(&self, s: usize) -> bool {
        self.reference_fixed[s]
    }

    pub fn state_visits(&self, s: usize) -> u64 {
        self.state_visits[s]
    }

    /// `(mu_check, sigma_check, n_check)` for the current type-I stage of `(s, a)`.
    pub fn stage_advantage_stats(&self, s: usize, a: usize) -> (f64, f64, u64) {
        let i = s * self.core.num_actions + a;
        (self.core.mu_check[i], self.sigma_check[i], self.core.n_check[i])
    }

    /// `(mu_ref, sigma_ref, n)` lifetime reference statistics of `(s, a)`.
    pub fn reference_stats(&self, s: usize, a: usize) -> (f64, f64, u64) {
        let i = s * self.core.num_actions + a;
        (self.mu_ref[i], self.sigma_ref[i], self.core.n_total[i])
    }
}

impl Agent for AdvantageAgent {
    fn num_states(&self) -> usize {
        self.core.num_states
    }

    fn num_actions(&self) -> usize {
        self.core.num_actions
    }

    fn observe(&mut self, s: usize, a: usize, reward: f64, s_next: usize) -> Result<UpdateEvent> {
        self.core.validate(s, a, reward, s_next)?;
        let mut event = UpdateEvent::idle(s, a, self.core.q.get(s, a));
        let visit = self.core.visit(s, a);
        let i = visit.index;

        if !visit.frozen {
            let core = &mut self.core;
            let gamma = core.schedule.discount();
            let reference = self.v_ref[s_next];
            let advantage = core.v[s_next] - reference;
            core.mu_check[i] += advantage;
            self.sigma_check[i] += advantage * advantage;
            self.mu_ref[i] += reference;
            self.sigma_ref[i] += reference * reference;
            core.mu_bar[i] += core.v[s_next];

            if visit.type_one {
                let stats = BernsteinStats {
                    mu_check: core.mu_check[i],
                    sigma_check: self.sigma_check[i],
                    n_check: core.n_check[i],
                    mu_ref: self.mu_ref[i],
                    sigma_ref: self.sigma_ref[i],
                    n_total: visit.n,
                };
                let params = BernsteinParams {
                    horizon: core.schedule.horizon(),
                    iota: core.schedule.iota(),
                    scale: core.bonus_scale,
                    value_bound: core.schedule.value_bound(),
                    tail_coeff: self.tail_coeff,
                };
                let bonus = bernstein_bonus(&stats, &params)?;
                let estimate = stats.mu_check / stats.n_check as f64 + stats.mu_ref / visit.n as f64;
                let new_q = core.lower_q(s, a, reward + gamma * (estimate + bonus));
                core.close_type_one(i);
                self.sigma_check[i] = 0.0;
                event.record(UpdateKind::TypeOne, new_q, bonus);
            }
            if visit.type_two {
                let n_bar = core.n_bar[i];
                let bonus = core.hoeffding(n_bar);
                let candidate = reward + gamma * (core.mu_bar[i] / n_bar as f64 + bonus);
                let new_q = core.lower_q(s, a, candidate);
                core.close_type_two(i);
                event.record(UpdateKind::TypeTwo, new_q, bonus);
            }
        }

        self.state_visits[s] += 1;
        if !self.reference_fixed[s] && self.state_visits[s] >= self.core.schedule.n1() {
            self.v_ref[s] = self.core.v[s];
            self.reference_fixed[s] = true;
            event.reference_set = true;
            if event.kind == UpdateKind::None {
                event.kind = UpdateKind::ReferenceSet;
            }
        }
        Ok(event)
    }

    fn q(&self) -> &QFunction {
        &self.core.q
    }

    fn values(&self) -> &[f64] {
        &self.core.v
    }

    fn steps(&self) -> u64 {
        self.core.steps
    }

    fn schedule(&self) -> Option<&StageSchedule> {
        Some(&self.core.schedule)
    }

    fn table_sizes(&self) -> Vec<(&'static str, usize)> {
        let mut sizes = self.core.table_sizes();
        sizes.extend([
            ("v_ref", self.v_ref.len()),
            ("mu_ref", self.mu_ref.len()),
            ("sigma_ref", self.sigma_ref.len()),
            ("sigma_check", self.sigma_check.len()),
        ]);
        sizes
    }
}
