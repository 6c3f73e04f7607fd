//! Model-free learners and comparison baselines behind one `act`/`observe` interface.

mod advantage;
mod baselines;
pub mod bonus;
mod multistage;

pub use advantage::AdvantageAgent;
pub use baselines::{LearningRate, ModelBasedAgent, VanillaQAgent};
pub use bonus::{bernstein_bonus, hoeffding_bonus, BernsteinParams, BernsteinStats};
pub use multistage::MultiStageAgent;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{argmax_first, QFunction};
use crate::schedule::{build_schedule, ScheduleParams, StageCursor, StageSchedule, Variant};

/// What an observation did to the Q table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpdateKind {
    None,
    TypeOne,
    TypeTwo,
    Both,
    /// Only the reference value changed.
    ReferenceSet,
    /// A baseline rewrote its estimates.
    Baseline,
}

impl UpdateKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            UpdateKind::None => "none",
            UpdateKind::TypeOne => "type1",
            UpdateKind::TypeTwo => "type2",
            UpdateKind::Both => "both",
            UpdateKind::ReferenceSet => "reference",
            UpdateKind::Baseline => "baseline",
        }
    }
}

/// Diagnostic record of one `observe` call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateEvent {
    pub kind: UpdateKind,
    pub state: usize,
    pub action: usize,
    pub old_q: f64,
    pub new_q: f64,
    pub bonus_used: f64,
    pub reference_set: bool,
}

impl UpdateEvent {
    fn idle(state: usize, action: usize, q: f64) -> Self {
        Self {
            kind: UpdateKind::None,
            state,
            action,
            old_q: q,
            new_q: q,
            bonus_used: 0.0,
            reference_set: false,
        }
    }

    /// Whether any Q entry may have changed.
    pub fn touched_q(&self) -> bool {
        matches!(
            self.kind,
            UpdateKind::TypeOne | UpdateKind::TypeTwo | UpdateKind::Both | UpdateKind::Baseline
        )
    }

    fn record(&mut self, kind: UpdateKind, new_q: f64, bonus: f64) {
        self.kind = match (self.kind, kind) {
            (UpdateKind::TypeOne, UpdateKind::TypeTwo) => UpdateKind::Both,
            (_, k) => k,
        };
        self.new_q = new_q;
        self.bonus_used = bonus;
    }
}

/// A learner driven one transition at a time.
pub trait Agent {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;

    /// Greedy action, lowest index on ties.
    fn act(&self, s: usize) -> usize {
        self.q().argmax(s)
    }

    fn observe(&mut self, s: usize, a: usize, reward: f64, s_next: usize) -> Result<UpdateEvent>;

    fn q(&self) -> &QFunction;

    /// The agent's state-value table.
    fn values(&self) -> &[f64];

    fn steps(&self) -> u64;

    fn schedule(&self) -> Option<&StageSchedule> {
        None
    }

    /// Scalar count of every table the agent keeps, by name.
    fn table_sizes(&self) -> Vec<(&'static str, usize)>;
}

/// State shared by both multi-stage learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct AgentCore {
    pub schedule: StageSchedule,
    pub bonus_scale: f64,
    pub num_states: usize,
    pub num_actions: usize,
    pub q: QFunction,
    pub v: Vec<f64>,
    pub n_total: Vec<u64>,
    pub n_check: Vec<u64>,
    pub n_bar: Vec<u64>,
    pub mu_check: Vec<f64>,
    pub mu_bar: Vec<f64>,
    pub check_cursor: Vec<StageCursor>,
    pub bar_cursor: Vec<StageCursor>,
    pub steps: u64,
}

/// Outcome of counting one visit.
pub(crate) struct Visit {
    pub index: usize,
    pub n: u64,
    pub type_one: bool,
    pub type_two: bool,
    pub frozen: bool,
}

impl AgentCore {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        schedule: StageSchedule,
        bonus_scale: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return invalid("agent needs at least one state and one action");
        }
        if !(bonus_scale >= 0.0 && bonus_scale.is_finite()) {
            return invalid(format!("bonus scale must be non-negative, got {bonus_scale}"));
        }
        let pairs = num_states * num_actions;
        let bound = schedule.value_bound();
        let check = schedule.first_type1();
        let bar = schedule.first_type2();
        Ok(Self {
            schedule,
            bonus_scale,
            num_states,
            num_actions,
            q: QFunction::constant(num_states, num_actions, bound),
            v: vec![bound; num_states],
            n_total: vec![0; pairs],
            n_check: vec![0; pairs],
            n_bar: vec![0; pairs],
            mu_check: vec![0.0; pairs],
            mu_bar: vec![0.0; pairs],
            check_cursor: vec![check; pairs],
            bar_cursor: vec![bar; pairs],
            steps: 0,
        })
    }

    pub fn validate(&self, s: usize, a: usize, reward: f64, s_next: usize) -> Result<()> {
        if s >= self.num_states || s_next >= self.num_states || a >= self.num_actions {
            return invalid(format!(
                "transition ({s}, {a}, {s_next}) out of range for {} states and {} actions",
                self.num_states, self.num_actions
            ));
        }
        if !(0.0..=1.0).contains(&reward) {
            return invalid(format!("reward {reward} outside [0, 1]"));
        }
        Ok(())
    }

    /// Counts one visit of `(s, a)` and reports which stages close on it.
    pub fn visit(&mut self, s: usize, a: usize) -> Visit {
        let index = s * self.num_actions + a;
        self.steps += 1;
        self.n_total[index] += 1;
        let n = self.n_total[index];
        if n > self.schedule.n0() {
            return Visit {
                index,
                n,
                type_one: false,
                type_two: false,
                frozen: true,
            };
        }
        self.n_check[index] += 1;
        self.n_bar[index] += 1;
        Visit {
            index,
            n,
            type_one: n == self.check_cursor[index].end,
            type_two: n == self.bar_cursor[index].end,
            frozen: false,
        }
    }

    /// `Q(s, a) <- min{candidate, Q(s, a)}` with the candidate kept inside the
    /// value range, then `V(s) <- max_a Q(s, a)`.
    pub fn lower_q(&mut self, s: usize, a: usize, candidate: f64) -> f64 {
        let old = self.q.get(s, a);
        let new = candidate.max(0.0).min(old);
        debug_assert!(new <= old);
        self.q.set(s, a, new);
        self.v[s] = self.q.max_in_row(s);
        new
    }

    pub fn close_type_one(&mut self, index: usize) {
        self.n_check[index] = 0;
        self.mu_check[index] = 0.0;
        self.check_cursor[index] = self.schedule.next_type1(self.check_cursor[index]);
    }

    pub fn close_type_two(&mut self, index: usize) {
        self.n_bar[index] = 0;
        self.mu_bar[index] = 0.0;
        self.bar_cursor[index] = self.schedule.next_type2(self.bar_cursor[index]);
    }

    pub fn hoeffding(&self, n_stage: u64) -> f64 {
        hoeffding_bonus(
            n_stage,
            self.schedule.horizon(),
            self.schedule.iota(),
            self.bonus_scale,
            self.schedule.value_bound(),
        )
    }

    pub fn table_sizes(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("q", self.q.as_slice().len()),
            ("v", self.v.len()),
            ("n_total", self.n_total.len()),
            ("n_check", self.n_check.len()),
            ("n_bar", self.n_bar.len()),
            ("mu_check", self.mu_check.len()),
            ("mu_bar", self.mu_bar.len()),
        ]
    }
}

/// Which learner to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    #[serde(rename = "multistage")]
    MultiStage,
    #[serde(rename = "advantage")]
    Advantage,
    #[serde(rename = "model-based")]
    ModelBased,
    #[serde(rename = "vanilla-q")]
    VanillaQ,
}

impl AgentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentKind::MultiStage => "multistage",
            AgentKind::Advantage => "advantage",
            AgentKind::ModelBased => "model-based",
            AgentKind::VanillaQ => "vanilla-q",
        }
    }

    pub fn variant(&self) -> Option<Variant> {
        match self {
            AgentKind::MultiStage => Some(Variant::MultiStage),
            AgentKind::Advantage => Some(Variant::MultiStageAdvantage),
            _ => None,
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multistage" => Ok(AgentKind::MultiStage),
            "advantage" => Ok(AgentKind::Advantage),
            "model-based" => Ok(AgentKind::ModelBased),
            "vanilla-q" => Ok(AgentKind::VanillaQ),
            other => Err(Error::Parse(format!(
                "unknown agent `{other}` (expected multistage, advantage, model-based or vanilla-q)"
            ))),
        }
    }
}

/// Everything needed to build an agent for a given MDP shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub kind: AgentKind,
    pub bonus_scale: f64,
    /// Coefficient on the `H iota / n` terms of the variance-aware bonus.
    pub tail_coeff: f64,
    /// Count-based reward bonus of the model-based baseline.
    pub optimism: f64,
    pub learning_rate: LearningRate,
}

impl AgentSpec {
    pub fn new(kind: AgentKind) -> Self {
        Self {
            kind,
            bonus_scale: 1.0,
            tail_coeff: 4.0,
            optimism: 0.0,
            learning_rate: LearningRate::InverseCount,
        }
    }

    /// Builds the agent. `schedule` supplies shape, discount and constants;
    /// baselines only use its discount.
    pub fn build(&self, schedule: &ScheduleParams) -> Result<AnyAgent> {
        let (n_s, n_a, gamma) = (schedule.num_states, schedule.num_actions, schedule.discount);
        Ok(match self.kind {
            AgentKind::MultiStage | AgentKind::Advantage => {
                let mut params = schedule.clone();
                params.variant = self.kind.variant().expect("multi-stage kind");
                let built = build_schedule(&params)?;
                if self.kind == AgentKind::MultiStage {
                    AnyAgent::MultiStage(MultiStageAgent::new(n_s, n_a, built, self.bonus_scale)?)
                } else {
                    AnyAgent::Advantage(AdvantageAgent::new(
                        n_s,
                        n_a,
                        built,
                        self.bonus_scale,
                        self.tail_coeff,
                    )?)
                }
            }
            AgentKind::ModelBased => {
                AnyAgent::ModelBased(ModelBasedAgent::new(n_s, n_a, gamma, self.optimism)?)
            }
            AgentKind::VanillaQ => {
                AnyAgent::VanillaQ(VanillaQAgent::new(n_s, n_a, gamma, self.learning_rate)?)
            }
        })
    }
}

/// Any of the learners, serializable as a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "agent", rename_all = "kebab-case")]
pub enum AnyAgent {
    MultiStage(MultiStageAgent),
    Advantage(AdvantageAgent),
    ModelBased(ModelBasedAgent),
    VanillaQ(VanillaQAgent),
}

macro_rules! dispatch {
    ($self:ident, $agent:ident => $body:expr) => {
        match $self {
            AnyAgent::MultiStage($agent) => $body,
            AnyAgent::Advantage($agent) => $body,
            AnyAgent::ModelBased($agent) => $body,
            AnyAgent::VanillaQ($agent) => $body,
        }
    };
}

impl AnyAgent {
    pub fn snapshot_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_snapshot_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reference values, for the advantage learner.
    pub fn reference_values(&self) -> Option<&[f64]> {
        match self {
            AnyAgent::Advantage(agent) => Some(agent.reference_values()),
            _ => None,
        }
    }
}

impl Agent for AnyAgent {
    fn num_states(&self) -> usize {
        dispatch!(self, a => a.num_states())
    }

    fn num_actions(&self) -> usize {
        dispatch!(self, a => a.num_actions())
    }

    fn act(&self, s: usize) -> usize {
        dispatch!(self, a => a.act(s))
    }

    fn observe(&mut self, s: usize, a: usize, reward: f64, s_next: usize) -> Result<UpdateEvent> {
        dispatch!(self, agent => agent.observe(s, a, reward, s_next))
    }

    fn q(&self) -> &QFunction {
        dispatch!(self, a => a.q())
    }

    fn values(&self) -> &[f64] {
        dispatch!(self, a => a.values())
    }

    fn steps(&self) -> u64 {
        dispatch!(self, a => a.steps())
    }

    fn schedule(&self) -> Option<&StageSchedule> {
        dispatch!(self, a => a.schedule())
    }

    fn table_sizes(&self) -> Vec<(&'static str, usize)> {
        dispatch!(self, a => a.table_sizes())
    }
}

/// Row maximum as a free helper for baselines that keep raw vectors.
pub(crate) fn row_max(row: &[f64]) -> f64 {
    row[argmax_first(row)]
}
