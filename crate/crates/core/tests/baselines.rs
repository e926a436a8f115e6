use std::sync::Arc;

use nafa::baselines::{rollout_reward, sliding_window_plan, LinUcbModel, SwConfig};
use nafa::energy::{EnergyTrace, TraceWindow};
use nafa::model::{self, ServerState};
use nafa::{seed, Action, ActionMask, Params, Request};
use rand::Rng;

#[test]
fn linucb_recovers_myopic_policy_on_stationary_rewards() {
    // reward of each accepting action is 1 - eta * tau, a linear function of the size feature
    let p = Params { eta: 3.0, ..Params::default() };
    let mut m = LinUcbModel::new(2, 4, 0.5).unwrap();
    let mut rng = seed::rng(4);
    let all = ActionMask::all(4);
    let context = |d: f64| vec![(d - 10.0) / 20.0, 1.0];
    for _ in 0..5000 {
        let d = rng.random_range(10.0..30.0);
        let a = m.select(&context(d), &all).unwrap();
        m.update(&context(d), a, model::reward(&p, a, d).unwrap()).unwrap();
    }
    let frozen = LinUcbModel::from_snapshot(&nafa::baselines::LinUcbSnapshot { alpha: 0.0, ..m.snapshot() }).unwrap();
    let mut agree = 0;
    for i in 0..1000 {
        let d = 10.0 + 20.0 * (i as f64 + 0.5) / 1000.0;
        let best = (0..4)
            .map(Action::new)
            .max_by(|a, b| model::reward(&p, *a, d).unwrap().total_cmp(&model::reward(&p, *b, d).unwrap()))
            .unwrap();
        if frozen.select(&context(d), &all).unwrap() == best {
            agree += 1;
        }
    }
    assert!(agree >= 950, "agreement {agree}/1000");
}

fn exhaustive(p: &Params, s: &ServerState, reqs: &[Request], energy: &TraceWindow) -> f64 {
    let n = p.num_actions();
    let mut best = f64::NEG_INFINITY;
    let total = n.pow(reqs.len() as u32);
    for code in 0..total {
        let mut c = code;
        let actions: Vec<Action> = (0..reqs.len())
            .map(|_| {
                let a = Action::new(c % n);
                c /= n;
                a
            })
            .collect();
        if let Some(r) = rollout_reward(p, s, reqs[0].arrival_time, reqs, energy, &actions, 1e-6).unwrap() {
            best = best.max(r);
        }
    }
    best
}

#[test]
fn three_request_window_matches_brute_force() {
    let p = Params { freq_options: vec![2e9], ..Params::default() };
    let mut rng = seed::rng(5);
    let energy = TraceWindow::new(Arc::new(EnergyTrace::new(vec![0.0; 24]).unwrap()), 0, 0.5).unwrap();
    for _ in 0..50 {
        let s = ServerState { data_size_mb: 20.0, ..ServerState::new(&p, rng.random_range(500.0..4000.0)) };
        let reqs: Vec<Request> = (0..3)
            .map(|i| Request { index: i, arrival_time: 0.05 * i as f64, data_size_mb: rng.random_range(10.0..30.0) })
            .collect();
        let plan =
            sliding_window_plan(&p, &s, 0.0, &reqs, &energy, &SwConfig { window: 3, commit: 3, beam_width: 64 }, 1e-6)
                .unwrap();
        assert_eq!(plan.window_reward, exhaustive(&p, &s, &reqs, &energy));
    }
}

#[test]
fn sliding_window_plans_replay_exactly_in_the_environment() {
    use nafa::baselines::SlidingWindow;
    use nafa::energy::synthetic_diurnal;
    use nafa::sim::{EnvConfig, Environment};
    use nafa::workload::{PoissonWorkload, WorkloadConfig};

    let p = Params { arrival_rate: 60.0, eta: 2.0, ..Params::default() };
    let trace = Arc::new(synthetic_diurnal(3, 900.0, 12).unwrap());
    let wl =
        PoissonWorkload::new(WorkloadConfig { arrival_rate: 60.0, data_size_range: [10.0, 30.0], seed: 0 }).unwrap();
    let mut env = Environment::new(p, EnvConfig::default(), trace, Box::new(wl), 4).unwrap();
    let cfg = SwConfig { window: 50, commit: 20, beam_width: 16 };
    let mut sw = SlidingWindow::new(cfg, 1e-6).unwrap();
    let log = env.run_episode(&mut sw, 72.0).unwrap();
    assert!(log.len() > 3000);
    assert_eq!(sw.discrepancies(), 0);
    assert_eq!(sw.plans(), (log.len() as u64).div_ceil(20));
}
