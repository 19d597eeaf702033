use sotif_sentinel::config::Config;
use sotif_sentinel::planner::PlanningPolicy;
use sotif_sentinel::sim::{generate_case, run_closed_loop, Perception};
use sotif_sentinel::simlog::compute_outcome;

fn main() {
    let cfg = Config::default();
    for case in 1..=4u8 {
        let schedule = generate_case(case, &cfg).unwrap();
        for policy in [PlanningPolicy::MpcYolo, PlanningPolicy::Puadm] {
            let t0 = std::time::Instant::now();
            let log = run_closed_loop(&cfg, policy, &Perception::Schedule(schedule.clone())).unwrap();
            let wall = t0.elapsed().as_secs_f64();
            let o = compute_outcome(&log);
            // trajectory summary: Y at flip, peak, and pass
            let pass_idx = log.steps.iter().position(|s| s.worker.map_or(false, |w| s.ego.x >= w[0]));
            let y_at_pass = pass_idx.map(|i| log.steps[i].ego.y);
            let min_u = log.steps.iter().map(|s| s.ego.u).fold(f64::INFINITY, f64::min);
            let max_steer = log.steps.iter().map(|s| s.input.steer.abs()).fold(0.0f64, f64::max);
            println!(
                "case {case} {policy:?}: pass={:?} peak|Y|={:.3} onset={:?} collision={} y_pass={:?} min_u={:.2} max|d|={:.3} mean_ms={:.2} max_ms={:.2} wall={wall:.1}s",
                o.pass_distance.map(|v| (v * 1000.0).round() / 1000.0),
                o.peak_abs_y,
                o.evasion_onset.map(|v| (v * 1000.0).round() / 1000.0),
                o.collision,
                y_at_pass.map(|v| (v * 1000.0).round() / 1000.0),
                min_u,
                max_steer,
                o.mean_solve_ms,
                o.max_solve_ms,
            );
        }
    }
}
