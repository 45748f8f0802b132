use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use abm_core::simulation::{AgentContext, OpError, SimError, StandalonePhase};
use abm_core::{Agent, AgentUid, Simulation, SimulationParams, Vec3};
use parking_lot::Mutex;

fn params(threads: usize) -> SimulationParams {
    SimulationParams {
        threads: Some(threads),
        domains: Some(1),
        ..Default::default()
    }
}

fn lattice(sim: &mut Simulation, side: usize, spacing: f64) {
    for z in 0..side {
        for y in 0..side {
            for x in 0..side {
                let p = Vec3::new(x as f64, y as f64, z as f64) * spacing;
                sim.add_agent(Agent::new(p, 10.0)).unwrap();
            }
        }
    }
}

fn positions_by_uid(sim: &Simulation) -> HashMap<AgentUid, Vec3> {
    sim.rm().agents().map(|a| (a.uid(), a.position())).collect()
}

#[test]
fn frequency_gates_from_iteration_zero() {
    let mut sim = Simulation::new(params(2)).unwrap();
    lattice(&mut sim, 3, 20.0);
    let hits: Arc<Vec<AtomicU32>> = Arc::new((0..27).map(|_| AtomicU32::new(0)).collect());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let h = hits.clone();
    let s = seen.clone();
    sim.add_agent_operation("count", 3, move |_: &mut Agent, ctx: &mut AgentContext<'_>| {
        h[ctx.uid().0 as usize].fetch_add(1, Ordering::Relaxed);
        s.lock().push(ctx.iteration());
        Ok(())
    })
    .unwrap();
    sim.simulate(7).unwrap();
    assert!(hits.iter().all(|c| c.load(Ordering::Relaxed) == 3));
    let mut its = seen.lock().clone();
    its.sort();
    its.dedup();
    assert_eq!(its, vec![0, 3, 6]);
}

#[test]
fn standalone_phases_run_in_order() {
    let mut sim = Simulation::new(params(2)).unwrap();
    lattice(&mut sim, 2, 20.0);
    let log = Arc::new(Mutex::new(Vec::new()));
    for (phase, name) in [
        (StandalonePhase::Post, "post"),
        (StandalonePhase::Mid, "mid"),
        (StandalonePhase::Pre, "pre"),
    ] {
        let l = log.clone();
        sim.add_standalone_operation(phase, name, 1, move |ctx: &mut abm_core::simulation::StandaloneContext<'_>| {
            l.lock().push(format!("{}:{}", ctx.iteration(), name));
            Ok(())
        })
        .unwrap();
    }
    let l = log.clone();
    sim.add_agent_operation("agent", 1, move |_: &mut Agent, ctx: &mut AgentContext<'_>| {
        if ctx.uid().0 == 0 {
            l.lock().push(format!("{}:agent", ctx.iteration()));
        }
        Ok(())
    })
    .unwrap();
    sim.simulate(2).unwrap();
    assert_eq!(
        *log.lock(),
        ["0:pre", "0:agent", "0:mid", "0:post", "1:pre", "1:agent", "1:mid", "1:post"]
    );
}

#[test]
fn mid_phase_cannot_mutate() {
    let mut sim = Simulation::new(params(1)).unwrap();
    lattice(&mut sim, 2, 20.0);
    sim.add_standalone_operation(StandalonePhase::Mid, "sneaky", 1, |ctx: &mut abm_core::simulation::StandaloneContext<'_>| {
        ctx.rm_mut()?;
        Ok(())
    })
    .unwrap();
    match sim.step() {
        Err(SimError::Operation { iteration, operation, .. }) => {
            assert_eq!(iteration, 0);
            assert_eq!(operation, "sneaky");
        }
        other => panic!("expected operation failure, got {other:?}"),
    }
}

#[test]
fn post_phase_may_add_agents() {
    let mut sim = Simulation::new(params(2)).unwrap();
    lattice(&mut sim, 2, 20.0);
    sim.add_standalone_operation(StandalonePhase::Post, "inject", 1, |ctx: &mut abm_core::simulation::StandaloneContext<'_>| {
        let rm = ctx.rm_mut()?;
        rm.push_back(Agent::new(Vec3::new(-50.0, 0.0, 0.0), 5.0))
            .map_err(|e| OpError(e.to_string()))?;
        Ok(())
    })
    .unwrap();
    sim.simulate(3).unwrap();
    assert_eq!(sim.rm().len(), 11);
}

#[test]
fn registration_errors() {
    let mut sim = Simulation::new(params(1)).unwrap();
    let op = |_: &mut Agent, _: &mut AgentContext<'_>| Ok(());
    sim.add_agent_operation("a", 1, op).unwrap();
    assert!(matches!(sim.add_agent_operation("a", 1, op), Err(SimError::Registration(_))));
    assert!(sim.add_agent_operation("b", 0, op).is_err());
    assert!(sim.set_frequency("a", 0).is_err());
    assert!(sim.set_frequency("missing", 2).is_err());
    sim.set_frequency("a", 4).unwrap();
    assert!(sim.operations().contains(&("a".to_string(), 4)));
}

#[test]
fn operation_failure_reports_iteration_and_name() {
    let mut sim = Simulation::new(params(2)).unwrap();
    lattice(&mut sim, 2, 20.0);
    sim.add_agent_operation("fail_late", 1, |_: &mut Agent, ctx: &mut AgentContext<'_>| {
        if ctx.iteration() == 2 {
            Err(OpError::from("boom"))
        } else {
            Ok(())
        }
    })
    .unwrap();
    let err = sim.simulate(5).unwrap_err();
    assert_eq!(
        err.to_string(),
        "iteration 2: operation 'fail_late' failed: boom"
    );
}

#[test]
fn removal_and_double_removal() {
    let mut sim = Simulation::new(params(2)).unwrap();
    lattice(&mut sim, 4, 20.0);
    sim.add_agent_operation("cull", 1, |_: &mut Agent, ctx: &mut AgentContext<'_>| {
        if ctx.uid().0 % 3 == 0 {
            ctx.remove_self()?;
        }
        Ok(())
    })
    .unwrap();
    sim.step().unwrap();
    assert_eq!(sim.rm().len(), 64 - 22);
    assert!(sim.rm().uids().iter().all(|u| u.0 % 3 != 0));
    assert_eq!(sim.report().counters.agents_removed, 22);

    let mut sim = Simulation::new(params(1)).unwrap();
    lattice(&mut sim, 2, 20.0);
    sim.add_agent_operation("twice", 1, |_: &mut Agent, ctx: &mut AgentContext<'_>| {
        ctx.remove_self()?;
        ctx.remove_self()
    })
    .unwrap();
    assert!(matches!(sim.step(), Err(SimError::Operation { .. })));
}

/// Uids of agents born in a loop depend on parent and call order only.
#[test]
fn births_are_deterministic_across_thread_counts() {
    let run = |threads: usize| {
        let mut p = params(threads);
        p.block_size = 3;
        p.mechanics = false;
        let mut sim = Simulation::new(p).unwrap();
        lattice(&mut sim, 3, 30.0);
        sim.add_agent_operation("bud", 1, |a: &mut Agent, ctx: &mut AgentContext<'_>| {
            if ctx.uid().0 % 2 == 0 && ctx.iteration() < 2 {
                let dir = abm_core::models::random_direction(ctx.rng());
                ctx.add_agent(a.daughter(a.position() + dir * 5.0, 4.0));
                ctx.add_agent(a.daughter(a.position() - dir * 5.0, 3.0));
            }
            Ok(())
        })
        .unwrap();
        sim.simulate(3).unwrap();
        let mut v: Vec<(u64, [f64; 3], f64)> = sim
            .rm()
            .agents()
            .map(|a| (a.uid().0, a.position().0, a.diameter()))
            .collect();
        v.sort_by_key(|x| x.0);
        v
    };
    let one = run(1);
    assert_eq!(one.len(), 27 + 2 * 14 + 2 * 28);
    assert_eq!(one, run(4));
    let uids: Vec<u64> = one.iter().map(|x| x.0).collect();
    assert_eq!(uids, (0..one.len() as u64).collect::<Vec<_>>());
}

#[test]
fn neighbor_edits_apply_after_the_loop_in_uid_order() {
    let mut p = params(3);
    p.mechanics = false;
    let mut sim = Simulation::new(p).unwrap();
    for i in 0..4 {
        sim.add_agent(Agent::new(Vec3::new(i as f64 * 8.0, 0.0, 0.0), 10.0)).unwrap();
    }
    let observed = Arc::new(Mutex::new(Vec::new()));
    let obs = observed.clone();
    sim.add_agent_operation("poke", 1, move |a: &mut Agent, ctx: &mut AgentContext<'_>| {
        // Edits are invisible during the loop.
        obs.lock().push((a.uid().0, a.kind()));
        let mut targets = Vec::new();
        ctx.for_each_neighbor(100.0, |n| targets.push(n.uid))?;
        let me = ctx.uid().0 as u32;
        for t in targets {
            ctx.modify_neighbor(t, move |n| n.set_kind(n.kind() * 10 + me + 1));
        }
        Ok(())
    })
    .unwrap();
    sim.step().unwrap();
    assert!(observed.lock().iter().all(|&(_, k)| k == 0));
    let kinds: HashMap<u64, u32> = sim.rm().agents().map(|a| (a.uid().0, a.kind())).collect();
    // Agent 1 is edited by 0 then 2, agent 0 only by 1.
    assert_eq!(kinds[&0], 2);
    assert_eq!(kinds[&1], 13);
    assert_eq!(kinds[&2], 24);
    assert_eq!(kinds[&3], 3);
}

/// Two overlapping cells push each other apart symmetrically:
/// each moves `k * overlap * dt` along the axis.
#[test]
fn pair_repulsion_matches_closed_form() {
    let mut sim = Simulation::new(params(1)).unwrap();
    sim.add_agent(Agent::new(Vec3::new(0.0, 0.0, 0.0), 10.0)).unwrap();
    sim.add_agent(Agent::new(Vec3::new(8.0, 0.0, 0.0), 10.0)).unwrap();
    let (k, dt) = (2.0, 0.01);
    let mut gap = 8.0;
    for _ in 0..5 {
        sim.step().unwrap();
        gap += 2.0 * k * (10.0 - gap) * dt;
        let pos = positions_by_uid(&sim);
        let (a, b) = (pos[&AgentUid(0)], pos[&AgentUid(1)]);
        assert!((b.x() - a.x() - gap).abs() < 1e-12);
        assert!((a.x() + b.x() - 8.0).abs() < 1e-12);
        assert_eq!(a.y(), 0.0);
    }
}

#[test]
fn exactly_once_under_forced_stealing() {
    let mut p = SimulationParams {
        threads: Some(4),
        domains: Some(2),
        block_size: 5,
        record_claims: true,
        mechanics: false,
        ..Default::default()
    };
    p.seed = 11;
    let mut sim = Simulation::new(p).unwrap();
    // Everything in domain 0: domain 1 workers can only steal.
    for i in 0..400 {
        sim.rm_mut()
            .push_back_to(0, Agent::new(Vec3::new(i as f64, 0.0, 0.0), 1.0))
            .unwrap();
    }
    let hits: Arc<Vec<AtomicU32>> = Arc::new((0..400).map(|_| AtomicU32::new(0)).collect());
    let h = hits.clone();
    sim.add_agent_operation("count", 1, move |_: &mut Agent, ctx: &mut AgentContext<'_>| {
        if ctx.uid().0 % 50 == 0 {
            std::thread::sleep(std::time::Duration::from_millis(2));
        }
        h[ctx.uid().0 as usize].fetch_add(1, Ordering::Relaxed);
        Ok(())
    })
    .unwrap();
    sim.step().unwrap();
    assert!(hits.iter().all(|c| c.load(Ordering::Relaxed) == 1));
    let report = sim.last_loop_report().unwrap();
    assert_eq!(report.claims.len(), 80);
}
