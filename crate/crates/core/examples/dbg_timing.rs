use sotif_sentinel::config::Config;
use sotif_sentinel::planner::PlanningPolicy;
use sotif_sentinel::sim::{generate_case, run_closed_loop, Perception};

fn main() {
    let cfg = Config::default();
    let mut all: Vec<f64> = Vec::new();
    for case in 1..=4u8 {
        let schedule = generate_case(case, &cfg).unwrap();
        for policy in [PlanningPolicy::MpcYolo, PlanningPolicy::Puadm] {
            let log = run_closed_loop(&cfg, policy, &Perception::Schedule(schedule.clone())).unwrap();
            let mut times: Vec<(f64, usize)> = log.steps.iter().enumerate().map(|(i, s)| (s.solve_ms, i)).collect();
            times.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let top: Vec<String> = times.iter().take(4).map(|(ms, i)| format!("{ms:.1}@{i}")).collect();
            all.extend(log.steps.iter().map(|s| s.solve_ms));
            println!("case {case} {policy:?}: top solves: {}", top.join(" "));
        }
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let p99 = all[(all.len() as f64 * 0.99) as usize];
    println!("overall: n={} mean={mean:.2} p99={p99:.2} max={:.2}", all.len(), all.last().unwrap());
}
