//! Agent-environment loop with exact sample-complexity accounting.
//!
//! The harness holds the true MDP. At every step it compares `V*(s_t)` with
//! the exact value of the agent's current greedy policy, `V^{pi_t}(s_t)`.
//! The greedy policy only changes when an observation touches the Q table, so
//! `V^{pi_t}` is re-solved only when the policy actually changed.

use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentKind, AgentSpec, AnyAgent, LearningRate, UpdateKind};
use crate::env::{EnvInstance, EnvSpec};
use crate::error::{invalid, Error, Result};
use crate::mdp::{
    clip, greedy_policy, optimal_values, policy_evaluation, Policy, TabularMdp, ValueFunction,
};
use crate::schedule::{horizon, ScheduleParams, DEFAULT_CAP_N0, DEFAULT_CAP_N1};

pub const SCHEMA: &str = "v1";

fn one() -> f64 {
    1.0
}
fn four() -> f64 {
    4.0
}
fn default_cap_n0() -> Option<u64> {
    Some(DEFAULT_CAP_N0)
}
fn default_cap_n1() -> Option<u64> {
    Some(DEFAULT_CAP_N1)
}
fn default_oracle_tol() -> f64 {
    1e-10
}
fn default_window() -> u64 {
    10_000
}

/// Flat run configuration; also the on-disk config format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub agent: AgentKind,
    pub gamma: f64,
    pub epsilon: f64,
    pub p: f64,
    pub steps: u64,
    pub seed: u64,
    #[serde(default = "one")]
    pub bonus_scale: f64,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c10: f64,
    #[serde(default = "default_cap_n0")]
    pub cap_n0: Option<u64>,
    #[serde(default = "default_cap_n1")]
    pub cap_n1: Option<u64>,
    #[serde(default = "four")]
    pub tail_coeff: f64,
    #[serde(default)]
    pub optimism: f64,
    /// Constant step size for `vanilla-q`; `1/k` when absent.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_oracle_tol")]
    pub oracle_tol: f64,
    #[serde(default = "default_window")]
    pub window: u64,
    #[serde(default)]
    pub clipped_pseudo_regret: bool,
    #[serde(default)]
    pub check_invariants: bool,
    /// Re-solve `V^{pi_t}` every step instead of on policy changes.
    #[serde(default)]
    pub recompute_every_step: bool,
}

impl RunConfig {
    /// A config with every optional field at its default.
    pub fn new(env: impl Into<String>, agent: AgentKind, gamma: f64, epsilon: f64, steps: u64) -> Self {
        Self {
            env: env.into(),
            agent,
            gamma,
            epsilon,
            p: 0.05,
            steps,
            seed: 0,
            bonus_scale: 1.0,
            c1: 1.0,
            c10: 1.0,
            cap_n0: default_cap_n0(),
            cap_n1: default_cap_n1(),
            tail_coeff: 4.0,
            optimism: 0.0,
            learning_rate: None,
            oracle_tol: default_oracle_tol(),
            window: default_window(),
            clipped_pseudo_regret: false,
            check_invariants: false,
            recompute_every_step: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return invalid(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        let bound = 1.0 / (1.0 - self.gamma);
        if !(self.epsilon > 0.0 && self.epsilon <= bound) {
            return invalid(format!("epsilon must lie in (0, {bound}], got {}", self.epsilon));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return invalid(format!("p must lie in (0, 1), got {}", self.p));
        }
        if !(self.oracle_tol > 0.0 && self.oracle_tol <= self.epsilon / 100.0) {
            return invalid(format!(
                "oracle tolerance must lie in (0, epsilon / 100], got {}",
                self.oracle_tol
            ));
        }
        if self.window == 0 {
            return invalid("window must be positive");
        }
        if !(self.bonus_scale >= 0.0 && self.bonus_scale.is_finite()) {
            return invalid(format!("bonus scale must be non-negative, got {}", self.bonus_scale));
        }
        Ok(())
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        self.env.parse()
    }

    pub fn agent_spec(&self) -> AgentSpec {
        AgentSpec {
            kind: self.agent,
            bonus_scale: self.bonus_scale,
            tail_coeff: self.tail_coeff,
            optimism: self.optimism,
            learning_rate: self
                .learning_rate
                .map_or(LearningRate::InverseCount, LearningRate::Constant),
        }
    }

    pub fn schedule_params(&self, mdp: &TabularMdp) -> ScheduleParams {
        ScheduleParams {
            discount: self.gamma,
            epsilon: self.epsilon,
            p: self.p,
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            variant: self
                .agent
                .variant()
                .unwrap_or(crate::schedule::Variant::MultiStage),
            c1: self.c1,
            c10: self.c10,
            cap_n0: self.cap_n0,
            cap_n1: self.cap_n1,
        }
    }
}

/// Update tallies over a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateCounts {
    pub type_one: u64,
    pub type_two: u64,
    pub reference_set: u64,
    pub baseline: u64,
    pub policy_changes: u64,
}

/// Violations found by the per-step invariant monitor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// Steps where some Q entry increased (multi-stage learners only).
    pub monotonicity: u64,
    /// Steps where some Q entry left `[0, 1/(1-gamma)]`.
    pub bounds: u64,
    /// Update steps after which `V(s) != max_a Q(s, a)`.
    pub value_consistency: u64,
    /// Steps where a pair visited more than `N0` times changed its Q entry.
    pub freeze: u64,
    /// Steps where some `Q(s, a) < Q*(s, a) - 1e-9`.
    pub optimism: u64,
}

impl InvariantReport {
    /// Deterministic invariants only; optimism is statistical.
    pub fn deterministic_violations(&self) -> u64 {
        self.monotonicity + self.bounds + self.value_consistency + self.freeze
    }
}

/// Summary of one run. Serialized as the per-run JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema: String,
    pub config: RunConfig,
    pub steps: u64,
    /// Steps with `V*(s_t) - V^{pi_t}(s_t) > epsilon`.
    pub sample_complexity: u64,
    pub window: u64,
    /// Suboptimal steps per consecutive window.
    pub window_counts: Vec<u64>,
    pub final_window_clean: bool,
    pub updates: UpdateCounts,
    /// `max_s |V_final(s) - V*(s)|` for the agent's value table.
    pub final_sup_error: f64,
    pub final_values: Vec<f64>,
    pub final_q: Vec<Vec<f64>>,
    pub final_policy: Vec<usize>,
    /// `max_s V*(s) - V^{pi_final}(s)`.
    pub final_policy_gap: f64,
    pub horizon: u64,
    pub clipped_pseudo_regret_sum: Option<f64>,
    /// States visited during the last `window` steps, ascending.
    pub final_window_states: Vec<usize>,
    /// `clip(phi(s), epsilon / (8H))` at the final `V`, `pi`, for every state.
    pub final_clipped_pseudo_regret: Vec<f64>,
    pub invariants: Option<InvariantReport>,
    /// Excluded from determinism comparisons.
    pub wall_time_secs: f64,
}

impl RunResult {
    /// Copy with the timing field zeroed, for byte-level comparisons.
    pub fn without_timing(&self) -> RunResult {
        RunResult {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }

    /// Suboptimal steps among the last `fraction` of the windows.
    pub fn tail_count(&self, fraction: f64) -> u64 {
        let k = ((self.window_counts.len() as f64) * fraction).ceil() as usize;
        self.window_counts.iter().rev().take(k).sum()
    }
}

/// One step as seen by an observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: u64,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub update_kind: UpdateKind,
    pub suboptimal: bool,
    pub cum_suboptimal: u64,
}

/// `clip(phi(s_t), epsilon / (8H))` for the pseudo-regret `phi` of `(v, pi)`.
pub fn clipped_pseudo_regret_step(
    mdp: &TabularMdp,
    v: &[f64],
    pi: &Policy,
    state: usize,
    epsilon: f64,
    horizon: u64,
) -> Result<f64> {
    if v.len() != mdp.num_states() || state >= mdp.num_states() {
        return invalid("value vector or state does not match the MDP");
    }
    pi.validate(mdp)?;
    let phi = v[state] - mdp.q_backup(state, pi.action(state), v);
    clip(phi, epsilon / (8.0 * horizon as f64))
}

struct Monitor {
    report: InvariantReport,
    previous_q: Vec<f64>,
    visits: Vec<u64>,
    q_star: Vec<f64>,
    bound: f64,
    n0: Option<u64>,
    monotone: bool,
}

impl Monitor {
    fn new(agent: &AnyAgent, q_star: &[f64], bound: f64) -> Self {
        let monotone = matches!(agent, AnyAgent::MultiStage(_) | AnyAgent::Advantage(_));
        Self {
            report: InvariantReport::default(),
            previous_q: agent.q().as_slice().to_vec(),
            visits: vec![0; q_star.len()],
            q_star: q_star.to_vec(),
            bound,
            n0: agent.schedule().map(|s| s.n0()),
            monotone,
        }
    }

    fn check(&mut self, agent: &AnyAgent, s: usize, a: usize, touched: bool) {
        let q = agent.q();
        let n_a = q.num_actions();
        let i = s * n_a + a;
        self.visits[i] += 1;
        let current = q.as_slice();
        let r = &mut self.report;
        if self.monotone && current.iter().zip(&self.previous_q).any(|(new, old)| new > old) {
            r.monotonicity += 1;
        }
        if current.iter().any(|x| !(*x >= 0.0 && *x <= self.bound + 1e-9)) {
            r.bounds += 1;
        }
        if touched && agent.values()[s] != q.max_in_row(s) {
            r.value_consistency += 1;
        }
        if let Some(n0) = self.n0 {
            if self.visits[i] > n0 && current[i] != self.previous_q[i] {
                r.freeze += 1;
            }
        }
        if current.iter().zip(&self.q_star).any(|(x, star)| *x < star - 1e-9) {
            r.optimism += 1;
        }
        self.previous_q.copy_from_slice(current);
    }
}

/// Runs one configuration to completion.
pub fn run(config: &RunConfig) -> Result<RunResult> {
    run_with(config, &mut |_| {})
}

/// Runs one configuration, handing every step to `observer`.
pub fn run_with(config: &RunConfig, observer: &mut dyn FnMut(&StepRecord)) -> Result<RunResult> {
    config.validate()?;
    let started = Instant::now();
    let spec = config.env_spec()?;
    let mdp = spec.build(config.gamma)?;
    let (v_star, q_star) = optimal_values(&mdp, config.oracle_tol)?;
    let mut agent = config.agent_spec().build(&config.schedule_params(&mdp))?;
    let mut env = EnvInstance::new(mdp.clone(), spec.initial_state(), config.seed)?;
    let h = match agent.schedule() {
        Some(schedule) => schedule.horizon(),
        None => horizon(config.gamma, config.epsilon)?,
    };
    let tol = config.oracle_tol;

    let mut policy = greedy_policy(agent.q());
    let mut v_pi = policy_evaluation(&mdp, &policy, tol)?;
    let mut monitor = config
        .check_invariants
        .then(|| Monitor::new(&agent, q_star.as_slice(), mdp.value_bound()));

    let windows = config.steps.div_ceil(config.window) as usize;
    let mut window_counts = vec![0u64; windows];
    let final_window_start = config.steps.saturating_sub(config.window);
    let mut final_visited = vec![false; mdp.num_states()];
    let mut updates = UpdateCounts::default();
    let mut sample_complexity = 0u64;
    let mut clipped_sum = config.clipped_pseudo_regret.then_some(0.0);

    for t in 0..config.steps {
        let s = env.state();
        if config.recompute_every_step {
            let candidate = greedy_policy(agent.q());
            if candidate != policy {
                policy = candidate;
                updates.policy_changes += 1;
            }
            v_pi = policy_evaluation(&mdp, &policy, tol)?;
        }
        let a = agent.act(s);
        debug_assert_eq!(a, policy.action(s));
        let suboptimal = v_star[s] - v_pi[s] > config.epsilon;
        if suboptimal {
            sample_complexity += 1;
            window_counts[(t / config.window) as usize] += 1;
        }
        if let Some(sum) = clipped_sum.as_mut() {
            *sum += clipped_pseudo_regret_step(&mdp, agent.values(), &policy, s, config.epsilon, h)?;
        }
        if t >= final_window_start {
            final_visited[s] = true;
        }

        let (reward, next) = env.step(a)?;
        let event = agent.observe(s, a, reward, next)?;
        match event.kind {
            UpdateKind::TypeOne => updates.type_one += 1,
            UpdateKind::TypeTwo => updates.type_two += 1,
            UpdateKind::Both => {
                updates.type_one += 1;
                updates.type_two += 1;
            }
            UpdateKind::Baseline => updates.baseline += 1,
            UpdateKind::ReferenceSet | UpdateKind::None => {}
        }
        if event.reference_set {
            updates.reference_set += 1;
        }
        if event.touched_q() && !config.recompute_every_step {
            let candidate = greedy_policy(agent.q());
            if candidate != policy {
                policy = candidate;
                v_pi = policy_evaluation(&mdp, &policy, tol)?;
                updates.policy_changes += 1;
            }
        }
        if let Some(monitor) = monitor.as_mut() {
            monitor.check(&agent, s, a, event.touched_q());
        }
        observer(&StepRecord {
            step: t + 1,
            state: s,
            action: a,
            reward,
            next_state: next,
            update_kind: event.kind,
            suboptimal,
            cum_suboptimal: sample_complexity,
        });
    }

    let final_policy = greedy_policy(agent.q());
    let v_final_pi = policy_evaluation(&mdp, &final_policy, tol)?;
    let final_policy_gap = (0..mdp.num_states())
        .map(|s| v_star[s] - v_final_pi[s])
        .fold(0.0, f64::max);
    let final_sup_error = ValueFunction(agent.values().to_vec()).sup_distance(&v_star);
    let final_clipped_pseudo_regret = (0..mdp.num_states())
        .map(|s| clipped_pseudo_regret_step(&mdp, agent.values(), &final_policy, s, config.epsilon, h))
        .collect::<Result<Vec<_>>>()?;

    Ok(RunResult {
        schema: SCHEMA.into(),
        config: config.clone(),
        steps: config.steps,
        sample_complexity,
        window: config.window,
        final_window_clean: window_counts.last().is_none_or(|c| *c == 0),
        window_counts,
        updates,
        final_sup_error,
        final_values: agent.values().to_vec(),
        final_q: agent.q().rows(),
        final_policy: final_policy.0,
        final_policy_gap,
        horizon: h,
        clipped_pseudo_regret_sum: clipped_sum,
        final_window_states: (0..mdp.num_states()).filter(|s| final_visited[*s]).collect(),
        final_clipped_pseudo_regret,
        invariants: monitor.map(|m| m.report),
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Writes step records as CSV, either one row per step or one per window.
///
/// In window mode each row carries the last step of the window, `suboptimal`
/// holds the window's suboptimal-step count, and `update_kind` the last
/// non-idle update seen in the window.
pub struct TraceWriter<W: Write> {
    out: W,
    window: Option<u64>,
    in_window: u64,
    last_update: UpdateKind,
    pending: Option<StepRecord>,
    error: Option<std::io::Error>,
}

pub const TRACE_HEADER: &str = "step,state,action,reward,update_kind,suboptimal,cum_suboptimal";

impl<W: Write> TraceWriter<W> {
    pub fn per_step(out: W) -> Result<Self> {
        Self::with_window(out, None)
    }

    pub fn per_window(out: W, window: u64) -> Result<Self> {
        Self::with_window(out, Some(window.max(1)))
    }

    fn with_window(mut out: W, window: Option<u64>) -> Result<Self> {
        writeln!(out, "{TRACE_HEADER}")?;
        Ok(Self {
            out,
            window,
            in_window: 0,
            last_update: UpdateKind::None,
            pending: None,
            error: None,
        })
    }

    fn write_row(&mut self, r: &StepRecord, kind: UpdateKind, suboptimal: u64) {
        if self.error.is_some() {
            return;
        }
        if let Err(e) = writeln!(
            self.out,
            "{},{},{},{},{},{},{}",
            r.step,
            r.state,
            r.action,
            r.reward,
            kind.as_str(),
            suboptimal,
            r.cum_suboptimal
        ) {
            self.error = Some(e);
        }
    }

    pub fn record(&mut self, r: &StepRecord) {
        match self.window {
            None => self.write_row(r, r.update_kind, r.suboptimal as u64),
            Some(window) => {
                self.in_window += r.suboptimal as u64;
                if r.update_kind != UpdateKind::None {
                    self.last_update = r.update_kind;
                }
                self.pending = Some(*r);
                if r.step % window == 0 {
                    self.flush_window();
                }
            }
        }
    }

    fn flush_window(&mut self) {
        if let Some(r) = self.pending.take() {
            let (kind, count) = (self.last_update, self.in_window);
            self.write_row(&r, kind, count);
            self.in_window = 0;
            self.last_update = UpdateKind::None;
        }
    }

    /// Flushes a partial last window and returns the writer.
    pub fn finish(mut self) -> Result<W> {
        self.flush_window();
        if let Some(e) = self.error {
            return Err(Error::Io(e));
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

/// One completed run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub seed: u64,
    pub result: RunResult,
}

/// Per-epsilon aggregate of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub epsilon: f64,
    pub runs: usize,
    pub mean_sample_complexity: f64,
    pub std_sample_complexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub schema: String,
    /// Sorted by decreasing epsilon, then seed.
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<SweepSummary>,
}

impl SweepTable {
    pub fn from_rows(mut rows: Vec<SweepRow>) -> Self {
        rows.sort_by(|x, y| {
            y.epsilon
                .total_cmp(&x.epsilon)
                .then(x.seed.cmp(&y.seed))
        });
        let mut summaries: Vec<SweepSummary> = Vec::new();
        for group in rows.chunk_by(|x, y| x.epsilon == y.epsilon) {
            let counts: Vec<f64> = group.iter().map(|r| r.result.sample_complexity as f64).collect();
            let n = counts.len() as f64;
            let mean = counts.iter().sum::<f64>() / n;
            let var = if counts.len() > 1 {
                counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            summaries.push(SweepSummary {
                epsilon: group[0].epsilon,
                runs: group.len(),
                mean_sample_complexity: mean,
                std_sample_complexity: var.sqrt(),
            });
        }
        Self {
            schema: SCHEMA.into(),
            rows,
            summaries,
        }
    }

    pub fn slope(&self) -> Result<f64> {
        scaling_slope(
            &self
                .summaries
                .iter()
                .map(|s| (s.epsilon, s.mean_sample_complexity))
                .collect::<Vec<_>>(),
        )
    }
}

/// Runs every `(epsilon, seed)` pair of the grid, at most `jobs` at a time,
/// calling `on_row` as each run finishes.
pub fn sweep(
    base: &RunConfig,
    epsilons: &[f64],
    seeds: &[u64],
    jobs: usize,
    on_row: &(dyn Fn(&SweepRow) + Sync),
) -> Result<SweepTable> {
    if epsilons.is_empty() {
        return invalid("sweep needs at least one epsilon");
    }
    let grid: Vec<(f64, u64)> = epsilons
        .iter()
        .flat_map(|e| seeds.iter().map(move |s| (*e, *s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let emit = Mutex::new(());
    let rows = pool.install(|| {
        grid.par_iter()
            .map(|(epsilon, seed)| {
                let config = RunConfig {
                    epsilon: *epsilon,
                    seed: *seed,
                    ..base.clone()
                };
                let row = SweepRow {
                    epsilon: *epsilon,
                    seed: *seed,
                    result: run(&config)?,
                };
                let _guard = emit.lock().unwrap_or_else(|e| e.into_inner());
                on_row(&row);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SweepTable::from_rows(rows))
}

/// Least-squares slope of `ln(count)` against `ln(1/epsilon)`.
pub fn scaling_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.iter().any(|(_, c)| *c <= 0.0) {
        return Err(Error::DiagnosticUnavailable(
            "every epsilon needs a nonzero sample complexity".into(),
        ));
    }
    let mut distinct: Vec<f64> = points.iter().map(|(e, _)| *e).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::DiagnosticUnavailable(format!(
            "need at least 3 distinct epsilons, got {}",
            distinct.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|(e, _)| (1.0 / e).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, c)| c.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_examples() {
        let pts: Vec<(f64, f64)> = [0.4, 0.2, 0.1, 0.05]
            .iter()
            .map(|e| (*e, 3.0 / (e * e)))
            .collect();
        assert!((scaling_slope(&pts).unwrap() - 2.0).abs() < 1e-9);
        let flat: Vec<(f64, f64)> = [0.4, 0.2, 0.1].iter().map(|e| (*e, 50.0)).collect();
        assert!(scaling_slope(&flat).unwrap().abs() < 1e-12);
        assert!(scaling_slope(&pts[..2]).is_err());
        assert!(scaling_slope(&[(0.4, 1.0), (0.2, 0.0), (0.1, 3.0)]).is_err());
    }

    #[test]
    fn clipped_step_examples() {
        let mdp = crate::env::hard_chain(3, 0.2, 0.8).unwrap();
        let pi = Policy(vec![0, 1, 0]);
        let v = policy_evaluation(&mdp, &pi, 1e-12).unwrap();
        for s in 0..3 {
            assert_eq!(clipped_pseudo_regret_step(&mdp, v.as_slice(), &pi, s, 0.1, 4).unwrap(), 0.0);
        }
        // single state: phi = (1 - gamma) v - r
        let one = TabularMdp::new(0.5, vec![vec![0.0]], vec![vec![vec![1.0]]]).unwrap();
        let (eps, h) = (0.4, 5u64);
        let below = eps / (16.0 * h as f64);
        let v = [below / 0.5];
        let got = clipped_pseudo_regret_step(&one, &v, &Policy(vec![0]), 0, eps, h).unwrap();
        assert_eq!(got, 0.0);
        let v = [eps / 0.5];
        let got = clipped_pseudo_regret_step(&one, &v, &Policy(vec![0]), 0, eps, h).unwrap();
        assert!((got - eps).abs() < 1e-15);
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut c = RunConfig::new("riverswim:n=6", AgentKind::MultiStage, 0.95, 0.1, 10);
        assert!(c.validate().is_ok());
        c.oracle_tol = 1e-2;
        assert!(c.validate().is_err());
        c.oracle_tol = 1e-10;
        c.gamma = 1.5;
        assert!(c.validate().is_err());
        let text = r#"{"env":"riverswim:n=6","agent":"multistage","gamma":0.9,"epsilon":0.1,"p":0.1,"steps":5,"seed":1,"bogus":3}"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
    }

    #[test]
    fn zero_budget_gives_empty_result() {
        let c = RunConfig::new("riverswim:n=3", AgentKind::MultiStage, 0.9, 0.1, 0);
        let r = run(&c).unwrap();
        assert_eq!(r.sample_complexity, 0);
        assert!(r.window_counts.is_empty());
        assert!(r.final_window_clean);
    }

    #[test]
    fn window_trace_rows() {
        let mut c = RunConfig::new("chain:n=3,slip=0.1", AgentKind::MultiStage, 0.8, 0.1, 25);
        c.window = 10;
        let mut writer = TraceWriter::per_window(Vec::new(), c.window).unwrap();
        run_with(&c, &mut |r| writer.record(r)).unwrap();
        let text = String::from_utf8(writer.finish().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("25,"));
    }
}
