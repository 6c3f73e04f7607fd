//! Benchmark MDP generators and the seeded step interface.
//!
//! Randomness comes from ChaCha8 keyed by a 64-bit seed. Each consumer uses a
//! fixed stream of that key: environment transitions use stream 0 of the run
//! seed, MDP generation uses stream 1 of the generator seed. A transition
//! consumes exactly one uniform draw, mapped through the inverse CDF of the
//! stored row, so traces are reproducible across platforms.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{invalid, Error, Result};
use crate::mdp::TabularMdp;

pub const TRANSITION_STREAM: u64 = 0;
pub const GENERATOR_STREAM: u64 = 1;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Index of the first entry whose cumulative mass exceeds `u`.
fn inverse_cdf(row: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    for (i, p) in row.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    // rounding left u above the total mass
    row.iter().rposition(|p| *p > 0.0).unwrap_or(row.len() - 1)
}

/// An MDP paired with a seeded transition stream and a current state.
#[derive(Debug, Clone)]
pub struct EnvInstance {
    mdp: TabularMdp,
    initial_state: usize,
    current_state: usize,
    rng: ChaCha8Rng,
}

impl EnvInstance {
    pub fn new(mdp: TabularMdp, initial_state: usize, seed: u64) -> Result<Self> {
        if initial_state >= mdp.num_states() {
            return invalid(format!("initial state {initial_state} out of range"));
        }
        Ok(Self {
            mdp,
            initial_state,
            current_state: initial_state,
            rng: stream_rng(seed, TRANSITION_STREAM),
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn state(&self) -> usize {
        self.current_state
    }

    /// Takes action `a`, returning the deterministic reward and the sampled next state.
    pub fn step(&mut self, a: usize) -> Result<(f64, usize)> {
        if a >= self.mdp.num_actions() {
            return invalid(format!(
                "action {a} out of range for {} actions",
                self.mdp.num_actions()
            ));
        }
        let s = self.current_state;
        let u: f64 = self.rng.random();
        let next = inverse_cdf(self.mdp.row(s, a), u);
        self.current_state = next;
        Ok((self.mdp.reward(s, a), next))
    }
}

/// Random MDP: each row has `branching` distinct successors drawn uniformly
/// with flat-Dirichlet weights; rewards are uniform on `[0, 1)`.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    branching: usize,
    seed: u64,
    discount: f64,
) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 {
        return invalid("random MDP needs at least one state and one action");
    }
    if branching == 0 || branching > num_states {
        return invalid(format!(
            "branching must lie in [1, {num_states}], got {branching}"
        ));
    }
    let mut rng = stream_rng(seed, GENERATOR_STREAM);
    let pairs = num_states * num_actions;
    let mut rewards = Vec::with_capacity(pairs);
    let mut transitions = vec![0.0; pairs * num_states];
    for i in 0..pairs {
        rewards.push(rng.random::<f64>());
        let support = sample(&mut rng, num_states, branching);
        let weights: Vec<f64> = (0..branching).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = weights.iter().sum();
        let row = &mut transitions[i * num_states..(i + 1) * num_states];
        for (next, w) in support.iter().zip(&weights) {
            row[next] = w / total;
        }
    }
    TabularMdp::from_flat(num_states, num_actions, discount, rewards, transitions)
}

/// Action indices of the swimming chains.
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// RiverSwim: swimming right advances with probability 0.35, stays with 0.6
/// and is pushed back with 0.05; swimming left always succeeds. Right at the
/// right end pays 1, left at the left end pays 0.005; these are already in
/// `[0, 1]`, so no rescaling is applied. Mass that would leave the chain
/// stays put.
pub fn riverswim(n: usize, discount: f64) -> Result<TabularMdp> {
    if n < 2 {
        return invalid(format!("riverswim needs at least 2 states, got {n}"));
    }
    let mut rewards = vec![0.0; n * 2];
    let mut transitions = vec![0.0; n * 2 * n];
    for s in 0..n {
        let left = &mut transitions[(s * 2 + LEFT) * n..(s * 2 + LEFT + 1) * n];
        left[s.saturating_sub(1)] = 1.0;
        let right = &mut transitions[(s * 2 + RIGHT) * n..(s * 2 + RIGHT + 1) * n];
        right[(s + 1).min(n - 1)] += 0.35;
        right[s] += 0.6;
        right[s.saturating_sub(1)] += 0.05;
    }
    rewards[LEFT] = 0.005;
    rewards[(n - 1) * 2 + RIGHT] = 1.0;
    TabularMdp::from_flat(n, 2, discount, rewards, transitions)
}

/// Needle-in-a-haystack chain with two actions. In state `s` only action
/// `s % 2` advances (slipping back one state with probability `slip`); the
/// other action returns to the start. The last state is absorbing and pays 1
/// for either action; every other reward is 0.
pub fn hard_chain(n: usize, slip: f64, discount: f64) -> Result<TabularMdp> {
    if n < 2 {
        return invalid(format!("chain needs at least 2 states, got {n}"));
    }
    if !(0.0..0.5).contains(&slip) {
        return invalid(format!("slip must lie in [0, 0.5), got {slip}"));
    }
    let mut rewards = vec![0.0; n * 2];
    let mut transitions = vec![0.0; n * 2 * n];
    for s in 0..n {
        for a in 0..2 {
            let row = &mut transitions[(s * 2 + a) * n..(s * 2 + a + 1) * n];
            if s == n - 1 {
                row[s] = 1.0;
                rewards[s * 2 + a] = 1.0;
            } else if a == s % 2 {
                row[s + 1] += 1.0 - slip;
                row[s.saturating_sub(1)] += slip;
            } else {
                row[0] = 1.0;
            }
        }
    }
    TabularMdp::from_flat(n, 2, discount, rewards, transitions)
}

/// A parsed environment id such as `riverswim:n=6`.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    RiverSwim { n: usize },
    Random { states: usize, actions: usize, branching: usize, seed: u64 },
    Chain { n: usize, slip: f64 },
    /// MDP JSON document; the run discount replaces the stored one.
    File(PathBuf),
}

const GRAMMAR: &str = "expected one of `riverswim:n=<int>`, \
`random:S=<int>,A=<int>,b=<int>,seed=<int>`, `chain:n=<int>,slip=<float>`, `file:<path>`";

fn parse_params(body: &str, allowed: &[&str]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for part in body.split(',').filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("`{part}` is not key=value; {GRAMMAR}")))?;
        let key = key.trim();
        if !allowed.contains(&key) {
            return Err(Error::Parse(format!("unknown key `{key}`; {GRAMMAR}")));
        }
        if out.iter().any(|(k, _)| k == key) {
            return Err(Error::Parse(format!("duplicate key `{key}`; {GRAMMAR}")));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn lookup<T: FromStr>(params: &[(String, String)], key: &str, default: Option<T>) -> Result<T> {
    match params.iter().find(|(k, _)| k == key) {
        Some((_, v)) => v
            .parse()
            .map_err(|_| Error::Parse(format!("bad value `{v}` for `{key}`; {GRAMMAR}"))),
        None => default.ok_or_else(|| Error::Parse(format!("missing `{key}`; {GRAMMAR}"))),
    }
}

impl FromStr for EnvSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let (name, body) = text.split_once(':').unwrap_or((text, ""));
        match name.trim() {
            "riverswim" => {
                let p = parse_params(body, &["n"])?;
                Ok(EnvSpec::RiverSwim { n: lookup(&p, "n", Some(6))? })
            }
            "random" => {
                let p = parse_params(body, &["S", "A", "b", "seed"])?;
                let states = lookup(&p, "S", None)?;
                Ok(EnvSpec::Random {
                    states,
                    actions: lookup(&p, "A", None)?,
                    branching: lookup(&p, "b", Some(states))?,
                    seed: lookup(&p, "seed", Some(0))?,
                })
            }
            "chain" => {
                let p = parse_params(body, &["n", "slip"])?;
                Ok(EnvSpec::Chain {
                    n: lookup(&p, "n", None)?,
                    slip: lookup(&p, "slip", Some(0.0))?,
                })
            }
            "file" if !body.is_empty() => Ok(EnvSpec::File(PathBuf::from(body))),
            _ => Err(Error::Parse(format!("unknown environment `{text}`; {GRAMMAR}"))),
        }
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvSpec::RiverSwim { n } => write!(f, "riverswim:n={n}"),
            EnvSpec::Random {
                states,
                actions,
                branching,
                seed,
            } => write!(f, "random:S={states},A={actions},b={branching},seed={seed}"),
            EnvSpec::Chain { n, slip } => write!(f, "chain:n={n},slip={slip}"),
            EnvSpec::File(path) => write!(f, "file:{}", path.display()),
        }
    }
}

impl EnvSpec {
    pub fn build(&self, discount: f64) -> Result<TabularMdp> {
        match self {
            EnvSpec::RiverSwim { n } => riverswim(*n, discount),
            EnvSpec::Random {
                states,
                actions,
                branching,
                seed,
            } => random_mdp(*states, *actions, *branching, *seed, discount),
            EnvSpec::Chain { n, slip } => hard_chain(*n, *slip, discount),
            EnvSpec::File(path) => {
                let text = std::fs::read_to_string(path)?;
                TabularMdp::from_json(&text)?.with_discount(discount)
            }
        }
    }

    /// Start state: the leftmost state for chains, state 0 otherwise.
    pub fn initial_state(&self) -> usize {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{greedy_policy, optimal_values};

    #[test]
    fn deterministic_row_always_lands() {
        let mdp = hard_chain(4, 0.0, 0.9).unwrap();
        let mut env = EnvInstance::new(mdp, 0, 3).unwrap();
        for _ in 0..100 {
            let s = env.state();
            let (r, next) = env.step(s % 2).unwrap();
            assert_eq!(r, env.mdp().reward(s, s % 2));
            assert_eq!(next, (s + 1).min(3));
        }
        assert!(env.step(2).is_err());
    }

    #[test]
    fn fair_coin_frequency() {
        let mdp = TabularMdp::new(
            0.5,
            vec![vec![0.0], vec![0.0]],
            vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]],
        )
        .unwrap();
        let mut env = EnvInstance::new(mdp, 0, 11).unwrap();
        let zeros = (0..100_000).filter(|_| env.step(0).unwrap().1 == 0).count();
        let freq = zeros as f64 / 1e5;
        assert!((0.494..=0.506).contains(&freq), "{freq}");
    }

    #[test]
    fn random_mdp_properties() {
        let a = random_mdp(5, 2, 5, 7, 0.7).unwrap();
        let b = random_mdp(5, 2, 5, 7, 0.7).unwrap();
        assert_eq!(a, b);
        for s in 0..5 {
            for act in 0..2 {
                assert!((a.row(s, act).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
        let point = random_mdp(6, 3, 1, 2, 0.7).unwrap();
        for s in 0..6 {
            for act in 0..3 {
                assert_eq!(point.row(s, act).iter().filter(|p| **p == 1.0).count(), 1);
            }
        }
        assert!(random_mdp(3, 2, 4, 1, 0.7).is_err());
        assert_ne!(a, random_mdp(5, 2, 5, 8, 0.7).unwrap());
    }

    #[test]
    fn riverswim_shape_and_optimal_policy() {
        let mdp = riverswim(6, 0.95).unwrap();
        assert_eq!((mdp.num_states(), mdp.num_actions()), (6, 2));
        assert_eq!(mdp.row(0, LEFT)[0], 1.0);
        let (_, q) = optimal_values(&mdp, 1e-10).unwrap();
        assert_eq!(greedy_policy(&q).0, vec![RIGHT; 6]);
        assert!(riverswim(1, 0.95).is_err());
    }

    #[test]
    fn deterministic_chain_closed_form() {
        let gamma = 0.9;
        let mdp = hard_chain(6, 0.0, gamma).unwrap();
        let (v, _) = optimal_values(&mdp, 1e-11).unwrap();
        assert!((v[0] - gamma.powi(5) / (1.0 - gamma)).abs() < 1e-10);
        assert!(hard_chain(3, 0.5, gamma).is_err());
    }

    #[test]
    fn spec_strings_round_trip() {
        for text in ["riverswim:n=6", "random:S=5,A=2,b=3,seed=7", "chain:n=8,slip=0.2"] {
            let spec: EnvSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
        }
        for bad in ["lake:n=3", "random:S=5", "chain:n=x", "riverswim:m=4", "chain:n=3,n=4"] {
            let err = bad.parse::<EnvSpec>().unwrap_err().to_string();
            assert!(err.contains("expected one of"), "{err}");
        }
    }
}
