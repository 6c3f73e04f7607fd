use serde::{Deserialize, Serialize};

use super::{Agent, AgentCore, UpdateEvent, UpdateKind};
use crate::error::Result;
use crate::mdp::QFunction;
use crate::schedule::StageSchedule;

/// Optimistic multi-stage Q-learning with Hoeffding bonuses on both stage types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStageAgent {
    core: AgentCore,
}

impl MultiStageAgent {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        schedule: StageSchedule,
        bonus_scale: f64,
    ) -> Result<Self> {
        Ok(Self {
            core: AgentCore::new(num_states, num_actions, schedule, bonus_scale)?,
        })
    }

    pub fn visit_count(&self, s: usize, a: usize) -> u64 {
        self.core.n_total[s * self.core.num_actions + a]
    }

    /// Visits of `(s, a)` in its current type-I and type-II stages.
    pub fn stage_counts(&self, s: usize, a: usize) -> (u64, u64) {
        let i = s * self.core.num_actions + a;
        (self.core.n_check[i], self.core.n_bar[i])
    }
}

impl Agent for MultiStageAgent {
    fn num_states(&self) -> usize {
        self.core.num_states
    }

    fn num_actions(&self) -> usize {
        self.core.num_actions
    }

    fn observe(&mut self, s: usize, a: usize, reward: f64, s_next: usize) -> Result<UpdateEvent> {
        let core = &mut self.core;
        core.validate(s, a, reward, s_next)?;
        let mut event = UpdateEvent::idle(s, a, core.q.get(s, a));
        let visit = core.visit(s, a);
        if visit.frozen {
            return Ok(event);
        }
        let i = visit.index;
        let v_next = core.v[s_next];
        core.mu_check[i] += v_next;
        core.mu_bar[i] += v_next;
        let gamma = core.schedule.discount();

        if visit.type_one {
            let n_check = core.n_check[i];
            let bonus = core.hoeffding(n_check);
            let candidate = reward + gamma * (core.mu_check[i] / n_check as f64) + bonus;
            let new_q = core.lower_q(s, a, candidate);
            core.close_type_one(i);
            event.record(UpdateKind::TypeOne, new_q, bonus);
        }
        if visit.type_two {
            let n_bar = core.n_bar[i];
            let bonus = core.hoeffding(n_bar);
            let candidate = reward + gamma * (core.mu_bar[i] / n_bar as f64) + bonus;
            let new_q = core.lower_q(s, a, candidate);
            core.close_type_two(i);
            event.record(UpdateKind::TypeTwo, new_q, bonus);
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
        self.core.table_sizes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::StageWidth;

    fn one_state_agent(scale: f64) -> MultiStageAgent {
        // H = 5, B = 2, gamma = 0.5, iota = ln 2
        let schedule =
            StageSchedule::from_parts(5, StageWidth::Whole(2), 2f64.ln(), 0.5, 1000, 100).unwrap();
        MultiStageAgent::new(1, 1, schedule, scale).unwrap()
    }

    #[test]
    fn no_update_before_first_boundary() {
        let mut agent = one_state_agent(1.0);
        for _ in 0..4 {
            let event = agent.observe(0, 0, 0.5, 0).unwrap();
            assert_eq!(event.kind, UpdateKind::None);
        }
    }

    #[test]
    fn first_boundary_with_full_bonus_keeps_q() {
        let mut agent = one_state_agent(1.0);
        let mut last = None;
        for _ in 0..5 {
            last = Some(agent.observe(0, 0, 0.5, 0).unwrap());
        }
        let event = last.unwrap();
        // stage 1 closes both families at visit 5
        assert_eq!(event.kind, UpdateKind::Both);
        assert_eq!(agent.q().get(0, 0), 2.0);
    }

    #[test]
    fn first_boundary_without_bonus() {
        let mut agent = one_state_agent(0.0);
        for _ in 0..5 {
            agent.observe(0, 0, 0.5, 0).unwrap();
        }
        assert_eq!(agent.q().get(0, 0), 1.5);
        assert_eq!(agent.values()[0], 1.5);
    }

    #[test]
    fn act_switches_after_update() {
        let schedule =
            StageSchedule::from_parts(2, StageWidth::Whole(1), 1.0, 0.5, 1000, 100).unwrap();
        let mut agent = MultiStageAgent::new(2, 2, schedule, 0.0).unwrap();
        assert_eq!(agent.act(0), 0);
        // two visits of (0, 1) with zero reward, landing in state 1
        agent.observe(0, 1, 0.0, 1).unwrap();
        agent.observe(0, 1, 0.0, 1).unwrap();
        assert_eq!(agent.act(0), 0);
        agent.observe(0, 0, 0.0, 1).unwrap();
        agent.observe(0, 0, 0.0, 1).unwrap();
        // both lowered to gamma * 2 = 1; tie goes back to action 0
        assert_eq!(agent.q().row(0), &[1.0, 1.0]);
        assert_eq!(agent.act(0), 0);
        // bump action 0 down further by observing a worse next state value
        let mut q = agent.clone();
        q.core.v[1] = 0.0;
        q.observe(0, 0, 0.0, 1).unwrap();
        q.observe(0, 0, 0.0, 1).unwrap();
        q.observe(0, 0, 0.0, 1).unwrap();
        assert!(q.q().get(0, 0) < q.q().get(0, 1));
        assert_eq!(q.act(0), 1);
    }

    #[test]
    fn rejects_bad_indices() {
        let mut agent = one_state_agent(1.0);
        assert!(agent.observe(1, 0, 0.5, 0).is_err());
        assert!(agent.observe(0, 1, 0.5, 0).is_err());
        assert!(agent.observe(0, 0, 0.5, 3).is_err());
        assert!(agent.observe(0, 0, 1.5, 0).is_err());
    }

    #[test]
    fn freezes_after_n0() {
        let schedule =
            StageSchedule::from_parts(3, StageWidth::Whole(1), 1.0, 0.5, 20, 100).unwrap();
        let mut agent = MultiStageAgent::new(1, 1, schedule, 0.0).unwrap();
        for _ in 0..20 {
            agent.observe(0, 0, 0.2, 0).unwrap();
        }
        let frozen = agent.q().get(0, 0);
        for _ in 0..200 {
            let event = agent.observe(0, 0, 0.2, 0).unwrap();
            assert_eq!(event.kind, UpdateKind::None);
        }
        assert_eq!(agent.q().get(0, 0), frozen);
    }
}
