use proptest::prelude::*;
use semswarm_core::semantic::oracle::mean_nearest_neighbor_distance;
use semswarm_core::swarm::{init_world, run_simulation, step_world, validate_params, SwarmParams};

fn params_strategy() -> impl Strategy<Value = SwarmParams> {
    (0.01f64..0.5, 0.0015f64..0.1, 0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0, 0.0f64..0.05)
        .prop_map(|(r, s, a, c, sep, noise)| validate_params(&[r, s, a, c, sep, noise]).unwrap().params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn speed_bound_closure_and_conservation(params in params_strategy(), n in 1usize..150, seed in any::<u64>()) {
        let t = run_simulation(&params, n, 25, seed).unwrap();
        prop_assert_eq!(t.frames.len(), 26);
        for frame in &t.frames {
            prop_assert_eq!(frame.len(), n);
            for a in frame {
                let speed = (a.velocity[0].powi(2) + a.velocity[1].powi(2)).sqrt();
                prop_assert!(speed <= params.max_speed + 1e-12);
                prop_assert!((0.0..1.0).contains(&a.position[0]) && (0.0..1.0).contains(&a.position[1]));
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_trajectories(params in params_strategy(), seed in any::<u64>()) {
        let a = run_simulation(&params, 80, 15, seed).unwrap();
        let b = run_simulation(&params, 80, 15, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn stepping_by_hand_matches_run_simulation() {
    let p = SwarmParams::default();
    let t = run_simulation(&p, 100, 10, 9).unwrap();
    let mut w = init_world(&p, 100, 9).unwrap();
    for k in 0..10 {
        assert_eq!(w.agents, t.frames[k]);
        step_world(&mut w, &p);
    }
    assert_eq!(w.agents, t.frames[10]);
}

#[test]
fn pure_cohesion_pulls_agents_together() {
    let p = validate_params(&[0.1, 0.01, 0.0, 2.0, 0.0, 0.0]).unwrap().params;
    let t = run_simulation(&p, 200, 240, 1).unwrap();
    let nn = |f: &Vec<semswarm_core::swarm::AgentState>| {
        mean_nearest_neighbor_distance(&f.iter().map(|a| a.position).collect::<Vec<_>>())
    };
    assert!(nn(t.frames.last().unwrap()) < nn(&t.frames[0]));
}
