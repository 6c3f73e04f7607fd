//! Ground-truth discounted MDPs and exact solvers.
//!
//! Transition tables are stored dense and row-major: the distribution over
//! next states for `(s, a)` lives at `transitions[(s * A + a) * S..][..S]`.
//! Every solver here is a pure function of its inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Rows whose mass is off by more than this are renormalized at construction.
const ROW_EXACT_TOL: f64 = 1e-12;
/// Rows whose mass is off by more than this are rejected.
const ROW_REPAIR_TOL: f64 = 1e-9;

/// A finite discounted MDP with deterministic rewards in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    rewards: Vec<f64>,
    transitions: Vec<f64>,
}

/// On-disk layout of an MDP, `transitions[s][a][s']`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    pub rewards: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<Vec<f64>>>,
}

impl TabularMdp {
    /// Builds an MDP from nested tables, validating every invariant.
    pub fn new(
        discount: f64,
        rewards: Vec<Vec<f64>>,
        transitions: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let num_states = rewards.len();
        if num_states == 0 {
            return invalid("an MDP needs at least one state");
        }
        let num_actions = rewards[0].len();
        if num_actions == 0 {
            return invalid("an MDP needs at least one action");
        }
        if transitions.len() != num_states {
            return invalid(format!(
                "transitions cover {} states, rewards cover {num_states}",
                transitions.len()
            ));
        }
        let mut flat_rewards = Vec::with_capacity(num_states * num_actions);
        let mut flat_transitions = Vec::with_capacity(num_states * num_actions * num_states);
        for (s, (reward_row, transition_rows)) in rewards.iter().zip(&transitions).enumerate() {
            if reward_row.len() != num_actions || transition_rows.len() != num_actions {
                return invalid(format!("state {s} does not have {num_actions} actions"));
            }
            flat_rewards.extend_from_slice(reward_row);
            for row in transition_rows {
                if row.len() != num_states {
                    return invalid(format!(
                        "transition row of state {s} has length {}, expected {num_states}",
                        row.len()
                    ));
                }
                flat_transitions.extend_from_slice(row);
            }
        }
        Self::from_flat(num_states, num_actions, discount, flat_rewards, flat_transitions)
    }

    /// Builds an MDP from flat row-major tables.
    pub fn from_flat(
        num_states: usize,
        num_actions: usize,
        discount: f64,
        rewards: Vec<f64>,
        mut transitions: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return invalid("an MDP needs at least one state and one action");
        }
        if !(discount > 0.0 && discount < 1.0) {
            return invalid(format!("discount must lie in (0, 1), got {discount}"));
        }
        if rewards.len() != num_states * num_actions {
            return invalid("reward table has the wrong size");
        }
        if transitions.len() != num_states * num_actions * num_states {
            return invalid("transition table has the wrong size");
        }
        if let Some((i, r)) = rewards
            .iter()
            .enumerate()
            .find(|(_, r)| !(0.0..=1.0).contains(*r))
        {
            return invalid(format!(
                "reward r({}, {}) = {r} lies outside [0, 1]",
                i / num_actions,
                i % num_actions
            ));
        }
        for (i, row) in transitions.chunks_mut(num_states).enumerate() {
            let (s, a) = (i / num_actions, i % num_actions);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return invalid(format!("row P({s}, {a}) has a negative or non-finite entry"));
            }
            let mass: f64 = row.iter().sum();
            let drift = (mass - 1.0).abs();
            if drift > ROW_REPAIR_TOL {
                return invalid(format!("row P({s}, {a}) sums to {mass}"));
            }
            if drift > ROW_EXACT_TOL {
                row.iter_mut().for_each(|p| *p /= mass);
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            discount,
            rewards,
            transitions,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Upper bound on any value, `1 / (1 - gamma)`.
    pub fn value_bound(&self) -> f64 {
        1.0 / (1.0 - self.discount)
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    /// Next-state distribution of `(s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    /// Same dynamics and rewards under a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        if !(discount > 0.0 && discount < 1.0) {
            return invalid(format!("discount must lie in (0, 1), got {discount}"));
        }
        Ok(Self {
            discount,
            ..self.clone()
        })
    }

    /// `r(s, a) + gamma * P(.|s, a) . v`
    pub fn q_backup(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        let expected: f64 = self.row(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
        self.reward(s, a) + self.discount * expected
    }

    pub fn to_document(&self) -> MdpDocument {
        let (n_s, n_a) = (self.num_states, self.num_actions);
        MdpDocument {
            num_states: n_s,
            num_actions: n_a,
            discount: self.discount,
            rewards: self.rewards.chunks(n_a).map(<[f64]>::to_vec).collect(),
            transitions: (0..n_s)
                .map(|s| (0..n_a).map(|a| self.row(s, a).to_vec()).collect())
                .collect(),
        }
    }

    pub fn from_document(doc: MdpDocument) -> Result<Self> {
        let mdp = Self::new(doc.discount, doc.rewards, doc.transitions)?;
        if mdp.num_states != doc.num_states || mdp.num_actions != doc.num_actions {
            return invalid(format!(
                "declared shape {}x{} does not match tables {}x{}",
                doc.num_states, doc.num_actions, mdp.num_states, mdp.num_actions
            ));
        }
        Ok(mdp)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        Self::from_document(doc)
    }
}

impl Serialize for TabularMdp {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_document().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TabularMdp {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = MdpDocument::deserialize(deserializer)?;
        Self::from_document(doc).map_err(serde::de::Error::custom)
    }
}

/// A state-value vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn constant(num_states: usize, value: f64) -> Self {
        Self(vec![value; num_states])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        sup_distance(&self.0, &other.0)
    }
}

impl std::ops::Index<usize> for ValueFunction {
    type Output = f64;
    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

/// A state-action value table, row-major by state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFunction {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QFunction {
    pub fn constant(num_states: usize, num_actions: usize, value: f64) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![value; num_states * num_actions],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        if num_states == 0 || num_actions == 0 || rows.iter().any(|r| r.len() != num_actions) {
            return invalid("Q rows must be non-empty and of equal length");
        }
        Ok(Self {
            num_states,
            num_actions,
            values: rows.concat(),
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        self.values[s * self.num_actions + a] = value;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn max_in_row(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action in `s`, lowest index on ties.
    pub fn argmax(&self, s: usize) -> usize {
        argmax_first(self.row(s))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.num_actions).map(<[f64]>::to_vec).collect()
    }
}

/// A deterministic stationary policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn action(&self, s: usize) -> usize {
        self.0[s]
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        if self.0.len() != mdp.num_states() {
            return invalid(format!(
                "policy covers {} states, MDP has {}",
                self.0.len(),
                mdp.num_states()
            ));
        }
        if let Some((s, a)) = self.0.iter().enumerate().find(|(_, a)| **a >= mdp.num_actions()) {
            return invalid(format!("policy plays action {a} in state {s}"));
        }
        Ok(())
    }
}

/// Index of the first maximal entry.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `x` when `x >= threshold`, otherwise zero.
pub fn clip(x: f64, threshold: f64) -> Result<f64> {
    if !x.is_finite() || !threshold.is_finite() {
        return invalid(format!("clip needs finite arguments, got ({x}, {threshold})"));
    }
    Ok(if x >= threshold { x } else { 0.0 })
}

fn check_len(mdp: &TabularMdp, len: usize, what: &str) -> Result<()> {
    if len != mdp.num_states() {
        return invalid(format!(
            "{what} has length {len}, MDP has {} states",
            mdp.num_states()
        ));
    }
    Ok(())
}

/// One application of the Bellman optimality operator.
pub fn bellman_optimality_backup(mdp: &TabularMdp, v: &ValueFunction) -> Result<ValueFunction> {
    check_len(mdp, v.len(), "value function")?;
    Ok(ValueFunction(backup_values(mdp, v.as_slice())))
}

fn backup_values(mdp: &TabularMdp, v: &[f64]) -> Vec<f64> {
    (0..mdp.num_states())
        .map(|s| {
            (0..mdp.num_actions())
                .map(|a| mdp.q_backup(s, a, v))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// `Q(s, a) = r(s, a) + gamma * P(.|s, a) . v` for every pair.
pub fn q_from_values(mdp: &TabularMdp, v: &ValueFunction) -> Result<QFunction> {
    check_len(mdp, v.len(), "value function")?;
    let (n_s, n_a) = (mdp.num_states(), mdp.num_actions());
    let values = (0..n_s)
        .flat_map(|s| (0..n_a).map(move |a| (s, a)))
        .map(|(s, a)| mdp.q_backup(s, a, v.as_slice()))
        .collect();
    Ok(QFunction {
        num_states: n_s,
        num_actions: n_a,
        values,
    })
}

/// Value iteration to a certified sup-norm accuracy `tol`.
///
/// Iterates from zero until successive iterates differ by at most
/// `tol * (1 - gamma) / (2 * gamma)`, which bounds the distance of the last
/// iterate to the fixed point by `tol / 2`.
pub fn optimal_values(mdp: &TabularMdp, tol: f64) -> Result<(ValueFunction, QFunction)> {
    if !(tol > 0.0 && tol.is_finite()) {
        return invalid(format!("solver tolerance must be positive, got {tol}"));
    }
    let gamma = mdp.discount();
    let stop = tol * (1.0 - gamma) / (2.0 * gamma);
    let mut v = vec![0.0; mdp.num_states()];
    loop {
        let next = backup_values(mdp, &v);
        let change = sup_distance(&next, &v);
        v = next;
        if change <= stop {
            break;
        }
    }
    let v = ValueFunction(v);
    let q = q_from_values(mdp, &v)?;
    Ok((v, q))
}

pub fn greedy_policy(q: &QFunction) -> Policy {
    Policy((0..q.num_states()).map(|s| q.argmax(s)).collect())
}

/// Exact value of a fixed policy via a dense LU solve of `(I - gamma P_pi) V = r_pi`.
pub fn policy_evaluation(mdp: &TabularMdp, pi: &Policy, tol: f64) -> Result<ValueFunction> {
    if !(tol > 0.0 && tol.is_finite()) {
        return invalid(format!("solver tolerance must be positive, got {tol}"));
    }
    pi.validate(mdp)?;
    let n = mdp.num_states();
    let gamma = mdp.discount();
    let mut system = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for s in 0..n {
        let a = pi.action(s);
        rhs[s] = mdp.reward(s, a);
        for (next, p) in mdp.row(s, a).iter().enumerate() {
            system[(s, next)] -= gamma * p;
        }
    }
    // I - gamma P is strictly diagonally dominant, so LU always succeeds.
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidArgument("policy evaluation system is singular".into()))?;
    Ok(ValueFunction(solution.iter().copied().collect()))
}

/// Bellman error of `v` under `pi`: `v(s) - (r(s, pi(s)) + gamma P_{s,pi(s)} v)`.
pub fn pseudo_regret(mdp: &TabularMdp, v: &ValueFunction, pi: &Policy) -> Result<ValueFunction> {
    check_len(mdp, v.len(), "value function")?;
    pi.validate(mdp)?;
    Ok(ValueFunction(
        (0..mdp.num_states())
            .map(|s| v[s] - mdp.q_backup(s, pi.action(s), v.as_slice()))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_state(reward: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(gamma, vec![vec![reward]], vec![vec![vec![1.0]]]).unwrap()
    }

    /// s0 --a0--> s1 (reward 0), s0 --a1--> s0 (reward 0), s1 absorbing with reward 1.
    fn two_state_chain(gamma: f64) -> TabularMdp {
        TabularMdp::new(
            gamma,
            vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            vec![
                vec![vec![0.0, 1.0], vec![1.0, 0.0]],
                vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clip(0.5, 0.2).unwrap(), 0.5);
        assert_eq!(clip(0.1, 0.2).unwrap(), 0.0);
        assert_eq!(clip(0.2, 0.2).unwrap(), 0.2);
        assert!(clip(f64::NAN, 0.2).is_err());
        assert!(clip(0.1, f64::INFINITY).is_err());
    }

    #[test]
    fn backup_examples() {
        let mdp = one_state(1.0, 0.5);
        let v = bellman_optimality_backup(&mdp, &ValueFunction(vec![0.0])).unwrap();
        assert_eq!(v.0, vec![1.0]);
        let v = bellman_optimality_backup(&mdp, &ValueFunction(vec![2.0])).unwrap();
        assert_eq!(v.0, vec![2.0]);
        let chain = two_state_chain(0.5);
        let v = bellman_optimality_backup(&chain, &ValueFunction(vec![0.0, 2.0])).unwrap();
        assert_eq!(v.0, vec![1.0, 2.0]);
        assert!(bellman_optimality_backup(&chain, &ValueFunction(vec![0.0])).is_err());
    }

    #[test]
    fn optimal_values_closed_forms() {
        let (v, _) = optimal_values(&one_state(1.0, 0.5), 1e-10).unwrap();
        assert!((v[0] - 2.0).abs() <= 1e-10);
        let (v, q) = optimal_values(&two_state_chain(0.5), 1e-10).unwrap();
        assert!((v[0] - 1.0).abs() <= 1e-10 && (v[1] - 2.0).abs() <= 1e-10);
        assert!((q.get(1, 0) - 2.0).abs() <= 1e-10 && (q.get(1, 1) - 2.0).abs() <= 1e-10);
        assert!(optimal_values(&two_state_chain(0.5), 0.0).is_err());
        assert!(optimal_values(&two_state_chain(0.5), -1.0).is_err());
    }

    #[test]
    fn greedy_ties_and_chain() {
        assert_eq!(greedy_policy(&QFunction::from_rows(vec![vec![1.0, 2.0]]).unwrap()).0, vec![1]);
        assert_eq!(greedy_policy(&QFunction::from_rows(vec![vec![3.0, 3.0]]).unwrap()).0, vec![0]);
        let (_, q) = optimal_values(&two_state_chain(0.5), 1e-10).unwrap();
        // Advancing from s0 is action 0; s1 is a tie.
        assert_eq!(greedy_policy(&q).0, vec![0, 0]);
    }

    #[test]
    fn policy_evaluation_examples() {
        let v = policy_evaluation(&one_state(1.0, 0.5), &Policy(vec![0]), 1e-10).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-12);
        let chain = two_state_chain(0.5);
        let v = policy_evaluation(&chain, &Policy(vec![0, 0]), 1e-10).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-12);
        assert!(policy_evaluation(&chain, &Policy(vec![0, 2]), 1e-10).is_err());
        assert!(policy_evaluation(&chain, &Policy(vec![0]), 1e-10).is_err());
    }

    #[test]
    fn pseudo_regret_constant_shift() {
        let chain = two_state_chain(0.5);
        let (v_star, q_star) = optimal_values(&chain, 1e-12).unwrap();
        let pi = greedy_policy(&q_star);
        let before = pseudo_regret(&chain, &v_star, &pi).unwrap();
        assert!(before.0.iter().all(|x| x.abs() <= 2e-12));
        let shifted = ValueFunction(v_star.0.iter().map(|x| x + 0.1).collect());
        let after = pseudo_regret(&chain, &shifted, &Policy(vec![1, 0])).unwrap();
        let base = pseudo_regret(&chain, &v_star, &Policy(vec![1, 0])).unwrap();
        for s in 0..2 {
            assert!((after[s] - (base[s] + 0.5 * 0.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn construction_rejects_bad_tables() {
        assert!(TabularMdp::new(1.0, vec![vec![0.0]], vec![vec![vec![1.0]]]).is_err());
        assert!(TabularMdp::new(0.5, vec![vec![1.5]], vec![vec![vec![1.0]]]).is_err());
        assert!(TabularMdp::new(0.5, vec![vec![0.5]], vec![vec![vec![0.9]]]).is_err());
        assert!(TabularMdp::new(
            0.5,
            vec![vec![0.5], vec![0.5]],
            vec![vec![vec![1.2, -0.2]], vec![vec![0.5, 0.5]]]
        )
        .is_err());
        let repaired = TabularMdp::new(
            0.5,
            vec![vec![0.5], vec![0.5]],
            vec![vec![vec![0.5 + 4e-10, 0.5]], vec![vec![0.5, 0.5]]],
        )
        .unwrap();
        assert!((repaired.row(0, 0).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn json_shape_mismatch_rejected() {
        let text = r#"{"num_states":2,"num_actions":1,"discount":0.5,"rewards":[[0.0]],"transitions":[[[1.0]]]}"#;
        assert!(TabularMdp::from_json(text).is_err());
        assert!(TabularMdp::from_json("{not json").is_err());
    }
}
