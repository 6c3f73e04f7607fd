use std::path::PathBuf;

use paclab::agents::{Agent, AgentKind, AgentSpec, AnyAgent, UpdateKind};
use paclab::env::{hard_chain, riverswim, EnvInstance, EnvSpec};
use paclab::harness::{run, run_with, sweep, RunConfig, StepRecord, TraceWriter};
use paclab::mdp::{optimal_values, TabularMdp};
use paclab::schedule::{ScheduleParams, Variant};

fn golden(name: &str) -> serde_json::Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_matches_golden(mdp: &TabularMdp, name: &str) {
    let doc = golden(name);
    let (v, q) = optimal_values(mdp, 1e-12).unwrap();
    let expected: Vec<f64> = serde_json::from_value(doc["V"].clone()).unwrap();
    let expected_q: Vec<Vec<f64>> = serde_json::from_value(doc["Q"].clone()).unwrap();
    for (got, want) in v.as_slice().iter().zip(&expected) {
        assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
    }
    for (got, want) in q.rows().iter().flatten().zip(expected_q.iter().flatten()) {
        assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
    }
}

#[test]
fn riverswim_values_match_golden() {
    assert_matches_golden(&riverswim(6, 0.95).unwrap(), "riverswim_n6_gamma095.json");
}

#[test]
fn slippery_chain_values_match_golden() {
    assert_matches_golden(&hard_chain(5, 0.4, 0.9).unwrap(), "chain_n5_slip04_gamma09.json");
}

#[test]
fn single_policy_mdp_has_zero_sample_complexity() {
    let dir = tempfile_dir();
    let path = dir.join("one.json");
    let mdp = TabularMdp::new(0.8, vec![vec![0.3]], vec![vec![vec![1.0]]]).unwrap();
    std::fs::write(&path, mdp.to_json().unwrap()).unwrap();
    let mut c = RunConfig::new(format!("file:{}", path.display()), AgentKind::MultiStage, 0.8, 0.01, 5_000);
    c.bonus_scale = 0.0;
    let r = run(&c).unwrap();
    assert_eq!(r.sample_complexity, 0);
    assert_eq!(r.steps, 5_000);
}

fn tempfile_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("paclab-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn epsilon_above_every_gap_counts_nothing() {
    // V*(s0) = 1 and V*(s1) = 2 at gamma 0.5; every policy is within 1.5 at s0
    // and optimal at the absorbing state
    for agent in [AgentKind::MultiStage, AgentKind::VanillaQ] {
        let c = RunConfig::new("chain:n=2,slip=0", agent, 0.5, 1.5, 2_000);
        assert_eq!(run(&c).unwrap().sample_complexity, 0);
    }
}

#[test]
fn budget_and_window_accounting() {
    let mut c = RunConfig::new("riverswim:n=4", AgentKind::Advantage, 0.9, 0.2, 23_456);
    c.window = 1_000;
    c.bonus_scale = 0.05;
    let mut steps = 0u64;
    let mut flagged = 0u64;
    let r = run_with(&c, &mut |rec| {
        steps += 1;
        assert_eq!(rec.step, steps);
        flagged += rec.suboptimal as u64;
        assert_eq!(rec.cum_suboptimal, flagged);
    })
    .unwrap();
    assert_eq!(steps, 23_456);
    assert_eq!(r.window_counts.len(), 24);
    assert_eq!(r.window_counts.iter().sum::<u64>(), r.sample_complexity);
    assert_eq!(flagged, r.sample_complexity);
    assert!(r.sample_complexity <= r.steps);
}

#[test]
fn identical_config_gives_identical_bytes() {
    let mut c = RunConfig::new("random:S=5,A=2,b=3,seed=7", AgentKind::Advantage, 0.7, 0.1, 20_000);
    c.bonus_scale = 0.1;
    c.clipped_pseudo_regret = true;
    let a = serde_json::to_string(&run(&c).unwrap().without_timing()).unwrap();
    let b = serde_json::to_string(&run(&c).unwrap().without_timing()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cached_and_recomputed_paths_agree() {
    for agent in [AgentKind::MultiStage, AgentKind::ModelBased] {
        let mut c = RunConfig::new("chain:n=4,slip=0.1", agent, 0.8, 0.1, 10_000);
        c.bonus_scale = 0.05;
        let cached = run(&c).unwrap();
        c.recompute_every_step = true;
        let shadow = run(&c).unwrap();
        assert_eq!(cached.sample_complexity, shadow.sample_complexity);
        assert_eq!(cached.window_counts, shadow.window_counts);
        assert_eq!(cached.updates, shadow.updates);
    }
}

#[test]
fn suboptimal_flags_are_nested_in_epsilon() {
    // the baseline ignores epsilon, so both runs follow one trajectory
    let run_flags = |eps: f64| {
        let c = RunConfig::new("random:S=6,A=3,b=3,seed=2", AgentKind::VanillaQ, 0.8, eps, 20_000);
        let mut out: Vec<StepRecord> = Vec::new();
        run_with(&c, &mut |r| out.push(*r)).unwrap();
        out
    };
    let loose = run_flags(0.2);
    let tight = run_flags(0.1);
    assert!(tight.iter().any(|r| r.suboptimal));
    for (l, t) in loose.iter().zip(&tight) {
        assert_eq!((l.state, l.action, l.next_state), (t.state, t.action, t.next_state));
        assert!(!l.suboptimal || t.suboptimal);
    }
}

#[test]
fn sweep_matches_individual_runs() {
    let base = RunConfig::new("riverswim:n=4", AgentKind::MultiStage, 0.9, 0.2, 5_000);
    let table = sweep(&base, &[0.2], &[3], 1, &|_| {}).unwrap();
    let alone = run(&RunConfig { seed: 3, ..base.clone() }).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].result.without_timing(), alone.without_timing());

    let emitted = std::sync::Mutex::new(Vec::new());
    let table = sweep(&base, &[0.4, 0.2], &[1, 2], 2, &|row| {
        emitted.lock().unwrap().push((row.epsilon, row.seed))
    })
    .unwrap();
    assert_eq!(emitted.lock().unwrap().len(), 4);
    let keys: Vec<(f64, u64)> = table.rows.iter().map(|r| (r.epsilon, r.seed)).collect();
    assert_eq!(keys, vec![(0.4, 1), (0.4, 2), (0.2, 1), (0.2, 2)]);
    assert_eq!(table.summaries.len(), 2);
    assert!(sweep(&base, &[], &[1], 1, &|_| {}).is_err());
}

#[test]
fn different_seeds_give_different_trajectories() {
    let trace = |seed: u64| {
        let mut c = RunConfig::new("random:S=5,A=2,b=3,seed=7", AgentKind::MultiStage, 0.7, 0.1, 2_000);
        c.seed = seed;
        let mut states = Vec::new();
        run_with(&c, &mut |r| states.push(r.next_state)).unwrap();
        states
    };
    assert_ne!(trace(1), trace(2));
    assert_eq!(trace(1), trace(1));
}

#[test]
fn per_step_trace_has_one_row_per_step() {
    let c = RunConfig::new("chain:n=3,slip=0.1", AgentKind::MultiStage, 0.8, 0.1, 300);
    let mut writer = TraceWriter::per_step(Vec::new()).unwrap();
    run_with(&c, &mut |r| writer.record(r)).unwrap();
    let text = String::from_utf8(writer.finish().unwrap()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 301);
    assert!(lines[1].starts_with("1,0,"));
    let fields: Vec<&str> = lines[300].split(',').collect();
    assert_eq!(fields.len(), 7);
}

#[test]
fn snapshot_resumes_identically() {
    let mdp = hard_chain(4, 0.2, 0.8).unwrap();
    let params = ScheduleParams::new(Variant::MultiStageAdvantage, 4, 2, 0.8, 0.2, 0.05);
    let mut spec = AgentSpec::new(AgentKind::Advantage);
    spec.bonus_scale = 0.05;
    let mut agent = spec.build(&params).unwrap();
    let mut env = EnvInstance::new(mdp, 0, 5).unwrap();
    let drive = |agent: &mut AnyAgent, env: &mut EnvInstance, steps: usize| {
        let mut kinds = Vec::new();
        for _ in 0..steps {
            let s = env.state();
            let a = agent.act(s);
            let (r, next) = env.step(a).unwrap();
            kinds.push(agent.observe(s, a, r, next).unwrap().kind);
        }
        kinds
    };
    drive(&mut agent, &mut env, 7_000);
    let mut restored = AnyAgent::from_snapshot_json(&agent.snapshot_json().unwrap()).unwrap();
    assert_eq!(restored, agent);
    let mut env_copy = env.clone();
    let a = drive(&mut agent, &mut env, 7_000);
    let b = drive(&mut restored, &mut env_copy, 7_000);
    assert_eq!(a, b);
    assert!(a.iter().any(|k| *k != UpdateKind::None));
    assert_eq!(agent.q(), restored.q());
}

#[test]
fn advantage_without_bonus_converges_on_single_state() {
    // Q* = r / (1 - gamma) = 0.4 / 0.5
    let params = ScheduleParams {
        cap_n1: Some(200),
        ..ScheduleParams::new(Variant::MultiStageAdvantage, 1, 1, 0.5, 0.5, 0.1)
    };
    let mut spec = AgentSpec::new(AgentKind::Advantage);
    spec.bonus_scale = 0.0;
    let mut agent = spec.build(&params).unwrap();
    for _ in 0..2_000 {
        agent.observe(0, 0, 0.4, 0).unwrap();
    }
    assert!((agent.q().get(0, 0) - 0.8).abs() < 1e-6, "{}", agent.q().get(0, 0));
}

#[test]
fn model_free_memory_is_linear_in_pairs() {
    let total = |kind: AgentKind, s: usize| -> usize {
        let params = ScheduleParams::new(Variant::MultiStage, s, 3, 0.9, 0.1, 0.05);
        AgentSpec::new(kind).build(&params).unwrap().table_sizes().iter().map(|(_, n)| n).sum()
    };
    for kind in [AgentKind::MultiStage, AgentKind::Advantage, AgentKind::VanillaQ] {
        assert_eq!(total(kind, 40), 2 * total(kind, 20));
    }
    assert!(total(AgentKind::ModelBased, 40) > 3 * total(AgentKind::ModelBased, 20));
}

#[test]
fn env_spec_strings_round_trip() {
    for text in ["riverswim:n=6", "random:S=5,A=2,b=3,seed=7", "chain:n=8,slip=0.2"] {
        let spec: EnvSpec = text.parse().unwrap();
        assert_eq!(spec.to_string(), text);
    }
    let err = "grid:n=3".parse::<EnvSpec>().unwrap_err().to_string();
    assert!(err.contains("expected one of"));
}
