use std::path::PathBuf;

use adamec::context::LOCAL;
use adamec::cost::noiseless_latency;
use adamec::predictor::ExactEstimator;
use adamec::search::{annotate, scheme_benefit, CostTable};
use adamec::sim::engine::{Payload, Trigger};
use adamec::sim::metrics::RESIDENT;
use adamec::sim::scenario::{ContextEvent, RequestSchedule};
use adamec::sim::{run_scenario, Scenario, SimOutput, Strategy};
use adamec::Error;

fn scenario(file: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(file);
    Scenario::load(&path).unwrap()
}

fn stable() -> Scenario {
    scenario("stable.json")
}

fn with_strategy(s: &Scenario, strategy: Strategy) -> Scenario {
    Scenario { strategy, ..s.clone() }
}

fn run(s: &Scenario) -> SimOutput {
    run_scenario(s, &ExactEstimator).unwrap()
}

/// Targets in force at `t`: the last decision at or before it.
fn target_at(out: &SimOutput, t: f64) -> Vec<usize> {
    out.decisions.iter().rev().find(|d| d.t_s <= t).unwrap().target.clone()
}

fn acked(out: &SimOutput, atom: usize, device: usize, t: f64) -> bool {
    out.acks.iter().any(|a| a.payload == Payload::Atom(atom) && a.device == device && a.t_s <= t)
}

/// Replay oracle for a stable, noiseless run: every request's latency is the
/// best over all subsets of landed atoms, each costed operator by operator.
#[test]
fn stable_run_matches_replay_oracle() {
    let s = stable();
    let out = run(&s);
    let scheme = out.scheme.as_ref().unwrap();
    let ctx = s.initial_context().unwrap();
    let m = scheme.atoms.len();
    let hop = |bytes: u64| bytes as f64 * 8.0 / (ctx.bandwidth_mbps * 1e6) * 1e3;
    let cost = |p: &[usize]| -> f64 {
        let mut total = 0.0;
        let mut prev = LOCAL;
        for (a, atom) in scheme.atoms.iter().enumerate() {
            if p[a] != prev {
                total += hop(atom.boundary_in_bytes);
            }
            for op in &atom.ops {
                total += noiseless_latency(&op.config, &s.devices[p[a]], ctx.mem_budget_mb[p[a]]);
            }
            prev = p[a];
        }
        if prev != LOCAL {
            total += hop(scheme.atoms[m - 1].boundary_out_bytes);
        }
        total
    };
    assert_eq!(out.requests.len(), s.requests.times().len());
    for r in &out.requests {
        let target = target_at(&out, r.t_s);
        let landed: Vec<bool> = (0..m).map(|a| target[a] != LOCAL && acked(&out, a, target[a], r.t_s)).collect();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << m) {
            if (0..m).any(|a| mask & (1 << a) != 0 && !landed[a]) {
                continue;
            }
            let p: Vec<usize> = (0..m).map(|a| if mask & (1 << a) != 0 { target[a] } else { LOCAL }).collect();
            best = best.min(cost(&p));
        }
        assert!((r.response_ms - best).abs() <= 1e-9 * best, "request {} at {}: {} vs {}", r.index, r.t_s, r.response_ms, best);
        let used = r.atom_device.as_ref().unwrap();
        for a in 0..m {
            assert!(used[a] == LOCAL || acked(&out, a, used[a], r.t_s), "atom {a} used before its ack");
        }
    }
}

#[test]
fn stable_latency_is_non_increasing() {
    let out = run(&stable());
    let resp = out.log.responses();
    assert!(resp.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-9), "{resp:?}");
    assert!(resp.last().unwrap().1 < resp[0].1);
}

#[test]
fn five_requests_half_a_second_apart() {
    let mut s = stable();
    s.requests = RequestSchedule::Periodic { start_s: 0.5, interval_s: 0.5, count: 5 };
    let resp = run(&s).log.responses();
    assert_eq!(resp.len(), 5);
    assert!(resp.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-9));
}

#[test]
fn realized_placement_waits_for_acks() {
    for s in [stable(), scenario("dynamic.json")] {
        let out = run(&s);
        for r in &out.requests {
            for (a, &d) in r.atom_device.as_ref().unwrap().iter().enumerate() {
                assert!(d == LOCAL || acked(&out, a, d, r.t_s), "{}: atom {a} on {d} at {}", s.name, r.t_s);
            }
        }
    }
}

#[test]
fn once_offload_waits_for_the_whole_model() {
    let s = stable();
    let out = run(&with_strategy(&s, Strategy::OnceOffload));
    let landed = out.acks.iter().find(|a| a.payload == Payload::Model).unwrap().t_s;
    for r in &out.requests {
        if r.t_s < landed {
            assert!(r.op_device.iter().all(|&d| d == LOCAL));
        }
    }
    let first_gain = |o: &SimOutput| {
        let resp = o.log.responses();
        resp.iter().find(|x| x.1 < resp[0].1 - 1e-9).map(|x| x.0)
    };
    let adamec = first_gain(&run(&s)).unwrap();
    let once = first_gain(&out).unwrap();
    assert!(adamec < once, "{adamec} vs {once}");
}

#[test]
fn on_device_latency_is_constant() {
    let out = run(&with_strategy(&stable(), Strategy::OnDevice));
    let resp = out.log.responses();
    assert!(resp.iter().all(|r| r.1 == resp[0].1));
    assert!(out.acks.is_empty());
}

#[test]
fn layer_incremental_can_be_slower_than_adamec() {
    let s = stable();
    let adamec = run(&s).log.responses();
    let layers = run(&with_strategy(&s, Strategy::LayerIncremental)).log.responses();
    assert!(adamec.iter().zip(&layers).any(|(a, l)| a.0 == l.0 && l.1 > a.1));
}

#[test]
fn full_replication_never_stores_less() {
    let s = stable();
    let adamec = run(&s);
    let full = run(&with_strategy(&s, Strategy::OnceOffload));
    let model_mb = s.graph().unwrap().total_param_bytes() as f64 / 1e6;
    let mut strict = false;
    for d in &s.devices {
        let full_series = full.log.series(RESIDENT, &d.id);
        assert!(full_series.iter().all(|x| (x.1 - model_mb).abs() < 1e-12));
        let series = adamec.log.series(RESIDENT, &d.id);
        assert!(series.iter().all(|x| x.1 <= model_mb), "{}", d.id);
        strict |= series.iter().all(|x| x.1 < model_mb);
    }
    assert!(strict);
}

#[test]
fn device_leave_reoffloads() {
    let mut s = stable();
    let out = run(&s);
    let busy = *out.decisions[0].target.iter().find(|&&d| d != LOCAL).unwrap();
    let id = s.devices[busy].id.clone();
    s.events = vec![ContextEvent { t_s: Some(8.0), leave: vec![id], ..Default::default() }];
    let out = run(&s);
    assert_eq!(out.requests.len(), s.requests.times().len());
    let d = out.decisions.iter().find(|d| d.t_s == 8.0).unwrap();
    assert_eq!(d.trigger, Trigger::Violation);
    assert!(d.target.iter().all(|&x| x != busy));
    assert!(out.decisions.last().unwrap().target.iter().all(|&x| x != busy));
    for r in out.requests.iter().filter(|r| r.t_s >= 8.0) {
        assert!(r.op_device.iter().all(|&x| x != busy));
    }
    // Atoms move to the remaining edge once their transfers land.
    let last = out.requests.last().unwrap();
    assert!(last.atom_device.as_ref().unwrap().iter().any(|&x| x != LOCAL));
}

#[test]
fn memory_drop_keeps_more_atoms_local() {
    let mut s = stable();
    let mut budgets = s.nominal.memory_budget_mb.clone();
    for v in budgets.values_mut() {
        *v = Some(3.0);
    }
    s.events = vec![ContextEvent { t_s: Some(10.0), memory_budget_mb: budgets, ..Default::default() }];
    let out = run(&s);
    let before = &out.decisions[0];
    let after = out.decisions.iter().find(|d| d.t_s == 10.0).unwrap();
    assert_eq!(after.trigger, Trigger::Violation);
    let local = |t: &[usize]| t.iter().filter(|&&d| d == LOCAL).count();
    assert!(local(&after.target) > local(&before.target), "{:?} -> {:?}", before.target, after.target);

    let scheme = out.scheme.as_ref().unwrap();
    let ctx = s.resolved_events().unwrap()[0].apply(&s.initial_context().unwrap());
    let table = CostTable::from_atoms(&scheme.atoms, &s.devices, &ctx, &ExactEstimator).unwrap();
    let v = annotate(&after.target, &table, &ctx).unwrap();
    assert!(v.mem_mb.iter().zip(&ctx.mem_budget_mb).all(|(u, b)| u <= b));
}

#[test]
fn resident_bytes_stay_within_budgets() {
    let s = scenario("dynamic.json");
    let out = run(&s);
    let events = s.resolved_events().unwrap();
    for r in out.log.rows_of(RESIDENT) {
        let d = s.device_index(&r.device).unwrap();
        if d == LOCAL {
            continue;
        }
        let mut ctx = s.initial_context().unwrap();
        for e in events.iter().filter(|e| e.t_s <= r.t_s) {
            ctx = e.apply(&ctx);
        }
        assert!(r.value <= ctx.mem_budget_mb[d] + 1e-9, "{} at {}: {} > {}", r.device, r.t_s, r.value, ctx.mem_budget_mb[d]);
    }
}

#[test]
fn stronger_device_attracts_atoms() {
    let mut s = stable();
    s.nominal.active = vec!["edge-a".into()];
    s.events = vec![ContextEvent { t_s: Some(10.0), join: vec!["edge-b".into()], ..Default::default() }];
    let out = run(&s);
    let d = out.decisions.iter().find(|d| d.t_s == 10.0).unwrap();
    assert_eq!(d.trigger, Trigger::Improvement);
    let scheme = out.scheme.as_ref().unwrap();
    let ctx = s.resolved_events().unwrap()[0].apply(&s.initial_context().unwrap());
    let table = CostTable::from_atoms(&scheme.atoms, &s.devices, &ctx, &ExactEstimator).unwrap();
    let benefit = |t: &[usize]| scheme_benefit(&annotate(t, &table, &ctx).unwrap(), &table, &ctx, &s.weights);
    assert!(d.adopted);
    assert!(d.target.contains(&2));
    assert!(benefit(&d.target) > benefit(&out.decisions[0].target));
}

#[test]
fn identical_snapshot_is_a_no_op() {
    let mut s = stable();
    s.events = vec![ContextEvent { t_s: Some(5.0), bandwidth_mbps: Some(s.nominal.bandwidth_mbps), ..Default::default() }];
    let out = run(&s);
    assert_eq!(out.decisions.len(), 1);
    assert_eq!(out.log.event_markers().len(), 1);
    assert_eq!(out.log.responses(), run(&stable()).log.responses());
}

#[test]
fn zero_requests() {
    let mut s = stable();
    s.requests = RequestSchedule::Explicit { times: vec![] };
    let out = run(&s);
    assert!(out.log.responses().is_empty());
    assert!(out.log.rows_of(RESIDENT).count() > 0);
}

#[test]
fn runs_are_deterministic() {
    for file in ["stable.json", "dynamic.json"] {
        let base = scenario(file);
        for st in Strategy::ALL {
            let s = with_strategy(&base, st);
            let (a, b) = (run(&s), run(&s));
            assert_eq!(a.to_json(), b.to_json());
            assert_eq!(a.log.to_csv(), b.log.to_csv());
        }
    }
}

#[test]
fn dynamic_replay() {
    let s = scenario("dynamic.json");
    let out = run(&s);
    let events = s.resolved_events().unwrap();
    assert_eq!(events.len(), 6);
    assert_eq!(events.iter().map(|e| e.t_s).collect::<Vec<_>>(), vec![21.0, 36.0, 80.0, 90.0, 120.0, 145.0]);
    for e in &events {
        assert_eq!(out.decisions.iter().filter(|d| d.t_s == e.t_s).count(), 1);
    }
    // D_C joins and leaves.
    let join = out.decisions.iter().find(|d| d.t_s == 120.0).unwrap();
    assert!(join.target.contains(&2));
    let leave = out.decisions.iter().find(|d| d.t_s == 145.0).unwrap();
    assert_eq!(leave.trigger, Trigger::Violation);
    assert!(!leave.target.contains(&2));
}

#[test]
fn malformed_scenarios() {
    let text = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/stable.json")).unwrap();
    assert!(matches!(Scenario::from_json("{"), Err(Error::InvalidArgument(_))));
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["events"] = serde_json::json!([{ "t_s": 5.0, "bandwidth_mbps": 3.0 }, { "t_s": 2.0, "bandwidth_mbps": 3.0 }]);
    assert!(matches!(Scenario::from_json(&v.to_string()), Err(Error::InvalidArgument(_))));
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["requests"] = serde_json::json!({ "times": [1.0, 99.0] });
    assert!(matches!(Scenario::from_json(&v.to_string()), Err(Error::InvalidArgument(_))));
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["strategy"] = serde_json::json!("teleport");
    assert!(matches!(Scenario::from_json(&v.to_string()), Err(Error::InvalidArgument(_))));
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["events"] = serde_json::json!([{ "t_s": 1.0, "join": ["nobody"] }]);
    assert!(matches!(Scenario::from_json(&v.to_string()), Err(Error::InvalidArgument(_))));
}
