//! Stage schedules for the multi-stage learners.
//!
//! Each state-action pair splits its visits into two interleaved families of
//! stages. Type-II stage `j` has length `d_j`, with `d_1 = H` and
//! `d_{j+1} = floor((1 + 1/H) d_j)`. Type-I stage `j` has length
//! `d_{ceil(j/B)}`, so it grows `B` times more slowly. An update fires on the
//! last visit of a stage; no stage fires past visit `N0`, and the final
//! type-I stage is truncated so that the type-I lengths add up to `N0`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default practical cap on `N0`.
pub const DEFAULT_CAP_N0: u64 = 1_000_000;
/// Default practical cap on `N1`.
pub const DEFAULT_CAP_N1: u64 = 10_000;

/// Largest value accepted for an uncapped constant.
const COUNT_LIMIT: f64 = 9_223_372_036_854_775_808.0; // 2^63

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "multistage")]
    MultiStage,
    #[serde(rename = "advantage")]
    MultiStageAdvantage,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multistage" => Ok(Variant::MultiStage),
            "advantage" => Ok(Variant::MultiStageAdvantage),
            other => Err(Error::Parse(format!(
                "unknown variant `{other}` (expected `multistage` or `advantage`)"
            ))),
        }
    }
}

/// Inputs to [`build_schedule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub discount: f64,
    pub epsilon: f64,
    pub p: f64,
    pub num_states: usize,
    pub num_actions: usize,
    pub variant: Variant,
    pub c1: f64,
    pub c10: f64,
    pub cap_n0: Option<u64>,
    pub cap_n1: Option<u64>,
}

impl ScheduleParams {
    /// Parameters with unit constants and the default practical caps.
    pub fn new(
        variant: Variant,
        num_states: usize,
        num_actions: usize,
        discount: f64,
        epsilon: f64,
        p: f64,
    ) -> Self {
        Self {
            discount,
            epsilon,
            p,
            num_states,
            num_actions,
            variant,
            c1: 1.0,
            c10: 1.0,
            cap_n0: Some(DEFAULT_CAP_N0),
            cap_n1: Some(DEFAULT_CAP_N1),
        }
    }

    pub fn uncapped(mut self) -> Self {
        self.cap_n0 = None;
        self.cap_n1 = None;
        self
    }
}

/// The stage-width multiplier `B`.
///
/// `SqrtOf(h)` is the irrational `sqrt(h)`; stage groups are computed with
/// exact integer arithmetic rather than rounding it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageWidth {
    SqrtOf(u64),
    Whole(u64),
}

impl StageWidth {
    pub fn value(&self) -> f64 {
        match *self {
            StageWidth::SqrtOf(h) => (h as f64).sqrt(),
            StageWidth::Whole(b) => b as f64,
        }
    }

    /// `ceil(j / B)`, exact.
    pub fn group_of(&self, j: u64) -> u64 {
        match *self {
            StageWidth::Whole(b) => j.div_ceil(b),
            StageWidth::SqrtOf(h) => {
                // smallest k with k^2 * h >= j^2
                let j2 = (j as u128) * (j as u128);
                ceil_sqrt(j2.div_ceil(h as u128)) as u64
            }
        }
    }

    /// `floor(k * B)`, exact.
    fn floor_multiple(&self, k: u64) -> u128 {
        match *self {
            StageWidth::Whole(b) => k as u128 * b as u128,
            StageWidth::SqrtOf(h) => (k as u128 * k as u128 * h as u128).isqrt(),
        }
    }

    /// Number of stages `j` with `ceil(j / B) == k`.
    fn group_size(&self, k: u64) -> u128 {
        self.floor_multiple(k) - self.floor_multiple(k - 1)
    }
}

fn ceil_sqrt(x: u128) -> u128 {
    let r = x.isqrt();
    if r * r < x {
        r + 1
    } else {
        r
    }
}

fn check_discount(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return invalid(format!("discount must lie in (0, 1), got {gamma}"));
    }
    Ok(())
}

fn check_epsilon(gamma: f64, epsilon: f64) -> Result<()> {
    let bound = 1.0 / (1.0 - gamma);
    if !(epsilon > 0.0 && epsilon <= bound) {
        return invalid(format!("epsilon must lie in (0, {bound}], got {epsilon}"));
    }
    Ok(())
}

/// `ceil(max{ ln(8 / ((1 - gamma) eps)) / ln(1 / gamma), 1 / (1 - gamma) })`.
///
/// Values within `1e-12` (relative) of an integer are snapped to it before the
/// ceiling so that exact cases like `ln 32 / ln 2` do not round up.
pub fn horizon(gamma: f64, epsilon: f64) -> Result<u64> {
    check_discount(gamma)?;
    check_epsilon(gamma, epsilon)?;
    let tail = (8.0 / ((1.0 - gamma) * epsilon)).ln() / (1.0 / gamma).ln();
    let x = tail.max(1.0 / (1.0 - gamma));
    let nearest = x.round();
    let h = if (x - nearest).abs() <= 1e-12 * x.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    if !(h.is_finite() && h < COUNT_LIMIT) {
        return Err(Error::Overflow(format!("horizon {x}")));
    }
    Ok((h as u64).max(1))
}

/// `ln(2 / p)`.
pub fn iota(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("failure probability must lie in (0, 1), got {p}"));
    }
    Ok((2.0 / p).ln())
}

/// `[d_1, ..., d_count]` with `d_1 = H`, `d_{j+1} = floor((1 + 1/H) d_j)`.
pub fn d_sequence(horizon: u64, count: usize) -> Vec<u64> {
    let mut d = Vec::with_capacity(count);
    let mut cur = horizon.max(1);
    for _ in 0..count {
        d.push(cur);
        cur = next_d(cur, horizon.max(1));
    }
    d
}

fn next_d(d: u64, horizon: u64) -> u64 {
    d.saturating_add(d / horizon)
}

fn count_from_formula(name: &str, value: f64, cap: Option<u64>) -> Result<u64> {
    let ceil = value.ceil();
    match cap {
        Some(cap) if !(ceil < cap as f64) => Ok(cap),
        _ if !(ceil.is_finite() && ceil < COUNT_LIMIT) => Err(Error::Overflow(format!(
            "{name} = {value:e} exceeds 2^63; set a cap"
        ))),
        _ => Ok((ceil as u64).max(1)),
    }
}

/// Position of a visit count inside a stage family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagePosition {
    /// 1-based stage index.
    pub stage: u64,
    /// Whether the visit is the last one of its stage (an update trigger).
    pub boundary: bool,
}

/// Per-pair stage pointer: the current stage and the visit count at which it ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCursor {
    pub stage: u64,
    pub end: u64,
}

impl StageCursor {
    pub const EXHAUSTED: u64 = u64::MAX;

    pub fn is_exhausted(&self) -> bool {
        self.end == Self::EXHAUSTED
    }
}

/// A group of consecutive type-I stages sharing the same length `d_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct CheckGroup {
    first_stage: u64,
    visits_before: u64,
}

/// Immutable schedule constants and stage tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    horizon: u64,
    width: StageWidth,
    iota: f64,
    discount: f64,
    n0: u64,
    n1: u64,
    d: Vec<u64>,
    /// Prefix sums of `d`; the candidate type-II trigger counts.
    bar_ends: Vec<u64>,
    check_groups: Vec<CheckGroup>,
    j_check: u64,
    j_bar: u64,
    last_check_len: u64,
}

/// Builds the full schedule from run parameters.
pub fn build_schedule(params: &ScheduleParams) -> Result<StageSchedule> {
    check_discount(params.discount)?;
    check_epsilon(params.discount, params.epsilon)?;
    if params.num_states == 0 || params.num_actions == 0 {
        return invalid("schedule needs at least one state and one action");
    }
    if !(params.c1 > 0.0 && params.c10 > 0.0) {
        return invalid("schedule constants c1 and c10 must be positive");
    }
    if params.cap_n0 == Some(0) || params.cap_n1 == Some(0) {
        return invalid("caps on N0 and N1 must be positive");
    }
    let h = horizon(params.discount, params.epsilon)?;
    let iota = iota(params.p)?;
    let width = match params.variant {
        Variant::MultiStage => StageWidth::SqrtOf(h),
        Variant::MultiStageAdvantage => StageWidth::Whole(
            h.checked_pow(3)
                .ok_or_else(|| Error::Overflow(format!("B = H^3 with H = {h}")))?,
        ),
    };
    let (s, a, eps) = (params.num_states as f64, params.num_actions as f64, params.epsilon);
    let hf = h as f64;
    let n0_raw = params.c1 * s.powi(3) * a * hf.powi(5) * (4.0 * hf * hf * s / eps).ln() * iota
        / (eps * eps);
    let n0 = count_from_formula("N0", n0_raw, params.cap_n0)?;
    let n1_raw =
        params.c10 * s * a * hf.powi(5) * width.value() * (4.0 * hf / eps).ln() * iota;
    let n1 = count_from_formula("N1", n1_raw, params.cap_n1)?;
    StageSchedule::from_parts(h, width, iota, params.discount, n0, n1)
}

impl StageSchedule {
    /// Assembles a schedule from explicit constants.
    pub fn from_parts(
        horizon: u64,
        width: StageWidth,
        iota: f64,
        discount: f64,
        n0: u64,
        n1: u64,
    ) -> Result<Self> {
        check_discount(discount)?;
        if horizon == 0 || n0 == 0 || n1 == 0 {
            return invalid("H, N0 and N1 must be positive");
        }
        if matches!(width, StageWidth::Whole(0) | StageWidth::SqrtOf(0)) {
            return invalid("stage width B must be positive");
        }
        if !(iota.is_finite() && iota > 0.0) {
            return invalid(format!("iota must be positive, got {iota}"));
        }

        // Type-II: J_bar = max{ j : sum_{i<j} d_i <= N0 }.
        let mut d = vec![horizon];
        let mut bar_ends = vec![horizon];
        while *bar_ends.last().unwrap() <= n0 {
            let next = next_d(*d.last().unwrap(), horizon);
            d.push(next);
            bar_ends.push(bar_ends.last().unwrap().saturating_add(next));
        }
        let j_bar = bar_ends.len() as u64;

        // Type-I: walk groups of equal-length stages until N0 is covered.
        let mut check_groups = Vec::new();
        let mut first_stage = 1u64;
        let mut visits_before = 0u64;
        let (j_check, last_check_len) = loop {
            let k = check_groups.len() + 1;
            while d.len() < k {
                let next = next_d(*d.last().unwrap(), horizon);
                d.push(next);
            }
            let len = d[k - 1];
            let count = width.group_size(k as u64);
            check_groups.push(CheckGroup {
                first_stage,
                visits_before,
            });
            let remaining = n0 - visits_before;
            if count * len as u128 >= remaining as u128 {
                let stages = remaining.div_ceil(len);
                let last = remaining - (stages - 1) * len;
                break (first_stage + stages - 1, last);
            }
            visits_before += (count * len as u128) as u64;
            first_stage += count as u64;
        };
        while d.len() < 50 {
            let next = next_d(*d.last().unwrap(), horizon);
            d.push(next);
        }

        Ok(Self {
            horizon,
            width,
            iota,
            discount,
            n0,
            n1,
            d,
            bar_ends,
            check_groups,
            j_check,
            j_bar,
            last_check_len,
        })
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn width(&self) -> StageWidth {
        self.width
    }

    pub fn b(&self) -> f64 {
        self.width.value()
    }

    pub fn iota(&self) -> f64 {
        self.iota
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn value_bound(&self) -> f64 {
        1.0 / (1.0 - self.discount)
    }

    pub fn n0(&self) -> u64 {
        self.n0
    }

    pub fn n1(&self) -> u64 {
        self.n1
    }

    pub fn j_check(&self) -> u64 {
        self.j_check
    }

    pub fn j_bar(&self) -> u64 {
        self.j_bar
    }

    /// `d_k` for `k >= 1`, extending the recurrence past the stored table if needed.
    pub fn d(&self, k: u64) -> u64 {
        let idx = (k - 1) as usize;
        if let Some(v) = self.d.get(idx) {
            return *v;
        }
        let mut cur = *self.d.last().unwrap();
        for _ in self.d.len()..=idx {
            cur = next_d(cur, self.horizon);
        }
        cur
    }

    /// Length of type-I stage `j`, accounting for truncation of the last one.
    pub fn type1_len(&self, j: u64) -> u64 {
        if j == self.j_check {
            self.last_check_len
        } else {
            self.d(self.width.group_of(j))
        }
    }

    /// Untruncated type-I length `d_{ceil(j/B)}`.
    pub fn check_e(&self, j: u64) -> u64 {
        self.d(self.width.group_of(j))
    }

    /// Type-II length `d_j`.
    pub fn bar_e(&self, j: u64) -> u64 {
        self.d(j)
    }

    fn check_range(&self, n: u64) -> Result<()> {
        if n == 0 || n > self.n0 {
            return invalid(format!("visit count {n} outside [1, {}]", self.n0));
        }
        Ok(())
    }

    /// Which type-I stage visit `n` belongs to, and whether it closes that stage.
    pub fn type1_stage_index(&self, n: u64) -> Result<StagePosition> {
        self.check_range(n)?;
        let g = self
            .check_groups
            .partition_point(|group| group.visits_before < n)
            - 1;
        let group = self.check_groups[g];
        let len = self.d[g];
        let offset = n - group.visits_before - 1;
        let stage = group.first_stage + offset / len;
        Ok(StagePosition {
            stage,
            boundary: n == self.n0 || (offset + 1) % len == 0,
        })
    }

    /// Which type-II stage visit `n` belongs to, and whether it closes that stage.
    pub fn type2_stage_index(&self, n: u64) -> Result<StagePosition> {
        self.check_range(n)?;
        let idx = self.bar_ends.partition_point(|end| *end < n);
        Ok(StagePosition {
            stage: idx as u64 + 1,
            boundary: self.bar_ends[idx] == n,
        })
    }

    pub fn first_type1(&self) -> StageCursor {
        StageCursor {
            stage: 1,
            end: self.type1_len(1),
        }
    }

    pub fn next_type1(&self, cursor: StageCursor) -> StageCursor {
        if cursor.is_exhausted() || cursor.stage >= self.j_check {
            return StageCursor {
                stage: cursor.stage,
                end: StageCursor::EXHAUSTED,
            };
        }
        let stage = cursor.stage + 1;
        StageCursor {
            stage,
            end: cursor.end + self.type1_len(stage),
        }
    }

    pub fn first_type2(&self) -> StageCursor {
        self.bar_cursor(1)
    }

    pub fn next_type2(&self, cursor: StageCursor) -> StageCursor {
        if cursor.is_exhausted() {
            return cursor;
        }
        self.bar_cursor(cursor.stage + 1)
    }

    fn bar_cursor(&self, stage: u64) -> StageCursor {
        let end = self
            .bar_ends
            .get((stage - 1) as usize)
            .copied()
            .filter(|end| *end <= self.n0)
            .unwrap_or(StageCursor::EXHAUSTED);
        StageCursor { stage, end }
    }

    /// Type-I trigger counts, in order, up to `limit` entries.
    pub fn check_boundaries(&self, limit: usize) -> Vec<u64> {
        let mut out = Vec::new();
        let mut cursor = self.first_type1();
        while out.len() < limit && !cursor.is_exhausted() {
            out.push(cursor.end);
            cursor = self.next_type1(cursor);
        }
        out
    }

    /// Type-II trigger counts (those at or below `N0`), up to `limit` entries.
    pub fn bar_boundaries(&self, limit: usize) -> Vec<u64> {
        self.bar_ends
            .iter()
            .copied()
            .take_while(|end| *end <= self.n0)
            .take(limit)
            .collect()
    }

    pub fn dump(&self) -> ScheduleDump {
        ScheduleDump {
            schema: "v1".into(),
            h: self.horizon,
            b: self.b(),
            iota: self.iota,
            n0: self.n0,
            n1: self.n1,
            j_check: self.j_check,
            j_bar: self.j_bar,
            d: self.d[..50].to_vec(),
            l_check: self.check_boundaries(50),
            l_bar: self.bar_boundaries(50),
        }
    }
}

/// JSON summary of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDump {
    pub schema: String,
    #[serde(rename = "H")]
    pub h: u64,
    #[serde(rename = "B")]
    pub b: f64,
    pub iota: f64,
    #[serde(rename = "N0")]
    pub n0: u64,
    #[serde(rename = "N1")]
    pub n1: u64,
    #[serde(rename = "J_check")]
    pub j_check: u64,
    #[serde(rename = "J_bar")]
    pub j_bar: u64,
    pub d: Vec<u64>,
    #[serde(rename = "L_check")]
    pub l_check: Vec<u64>,
    #[serde(rename = "L_bar")]
    pub l_bar: Vec<u64>,
}
