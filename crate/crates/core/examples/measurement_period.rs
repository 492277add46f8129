//! Diffusion of the measured rotor as the measurement period grows.
//!
//! `cargo run --release -p kickmap-core --example measurement_period [K] [trajectories]`

use kickmap::harness::{run_experiment, ExperimentConfig};
use kickmap::observables::Regime;

fn main() {
    let mut args = std::env::args().skip(1);
    let k: f64 = args.next().map_or(5.0, |a| a.parse().expect("K"));
    let trajectories: u64 = args.next().map_or(2000, |a| a.parse().expect("trajectories"));
    println!("K={k}, T=1, {trajectories} trajectories, 400 kicks");
    println!("{:>4} {:>10} {:>10} {:>12}", "s", "B_est", "B/(K^2/4)", "slope ratio");
    for s in [1u64, 2, 4, 8, 16, 32] {
        let mut config = ExperimentConfig::new(Regime::MonteCarloMeasured, k, 1.0, 400);
        config.meas_period = s;
        config.ensemble = Some(trajectories);
        let bundle = match run_experiment(&config) {
            Ok(b) => b,
            Err(e) => {
                println!("{s:>4} error: {e}");
                continue;
            }
        };
        let b = bundle.analysis.diffusion.value.map(|d| d.b_est);
        let ratio = bundle.analysis.break_time.value.and_then(|bt| bt.slope_ratio());
        let fmt = |v: Option<f64>, scale: f64| v.map_or("-".to_string(), |v| format!("{:.4}", v / scale));
        println!(
            "{s:>4} {:>10} {:>10} {:>12}",
            fmt(b, 1.0),
            fmt(b, k * k / 4.0),
            fmt(ratio, 1.0)
        );
    }
}
