use sparc_core::agent::{Agent, Hyper, Method};
use sparc_core::policy::PolicyDims;
use sparc_core::replay::{Batch, Transition};
use sparc_core::rng::{stream, stream_rng};
use std::time::Instant;

fn main() {
    let h = 50;
    let dims = PolicyDims::desk(4, 2, 2, h);
    let transitions: Vec<Transition> = (0..32)
        .map(|i| Transition {
            obs: vec![0.1 * i as f32; 4],
            action: vec![0.2; 2],
            reward: -1.0,
            next_obs: vec![0.1; 4],
            done: false,
            terminal: false,
            history: vec![0.05; h * 6],
            context: vec![0.3, -0.2],
            worker: 0,
            episode: 0,
            episode_step: i,
            snapshot_version: 0,
        })
        .collect();
    let refs: Vec<&Transition> = transitions.iter().collect();
    for method in [Method::Sparc, Method::OnlyObs, Method::HistoryInput] {
        let mut agent = Agent::<f32>::new(method, dims.clone(), Hyper::default(), 0).unwrap();
        let batch = Batch::<f32>::from_transitions(&refs, h).unwrap();
        let mut rng = stream_rng(0, stream::UPDATE);
        let t = Instant::now();
        let n = 50;
        for _ in 0..n {
            agent.update_step(&batch, &mut rng).unwrap();
        }
        println!(
            "{:?}: {:.2} ms/update",
            method,
            t.elapsed().as_secs_f64() * 1e3 / n as f64
        );
    }
}
