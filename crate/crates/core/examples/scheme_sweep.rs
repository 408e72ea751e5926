//! Prints the zero-variance snapshot and per-scheme training outcomes of the
//! demo scenario over several seeds.
//!
//! `cargo run --release --example scheme_sweep -- [seeds] [epochs] [lr]`

use fgreward_core::model::Scheme;
use fgreward_core::simulator::{compare_schemes, demo_scenario, variance_snapshot, DemoParams};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let base = DemoParams::default();
    let epochs = args
        .get(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(base.epochs);
    let lr = args
        .get(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(base.learning_rate);
    let schemes = Scheme::ALL;

    let sc = demo_scenario(&base);
    for r in variance_snapshot(&sc, &schemes).expect("snapshot") {
        println!(
            "snapshot {:<16} {:>6.2}%",
            r.scheme.unwrap(),
            r.zero_variance_pct
        );
    }

    let mut acc = vec![0.0; schemes.len()];
    let mut loc = vec![0.0; schemes.len()];
    let mut eacc = vec![0.0; schemes.len()];
    let mut zv = vec![0.0; schemes.len()];
    let mut diffs: Vec<Vec<f64>> = vec![Vec::new(); schemes.len()];
    for k in 0..seeds {
        let mut sc = demo_scenario(&base);
        sc.seed = base.seed + 1000 * (k + 1);
        sc.reward.seed = sc.seed;
        sc.epochs = epochs;
        sc.learning_rate = lr;
        let traces = compare_schemes(&sc, &schemes).expect("train");
        for (i, t) in traces.iter().enumerate() {
            acc[i] += t.final_accuracy / seeds as f64;
            eacc[i] += t.epochs.last().unwrap().expected_accuracy / seeds as f64;
            loc[i] += t.modal_r_loc_mean / seeds as f64;
            zv[i] += t.mean_zero_variance_fraction() / seeds as f64;
        }
        for (i, t) in traces.iter().enumerate() {
            diffs[i].push(t.final_accuracy - traces[0].final_accuracy);
        }
        let line: Vec<String> = traces
            .iter()
            .map(|t| format!("{}={:.3}", t.scheme, t.final_accuracy))
            .collect();
        println!("seed {} {}", sc.seed, line.join(" "));
    }
    for (i, s) in schemes.iter().enumerate() {
        println!(
            "{:<16} accuracy {:.4} expected {:.4} modal r_loc {:.4}  zero-var {:.3}",
            s, acc[i], eacc[i], loc[i], zv[i]
        );
        let n = diffs[i].len() as f64;
        let mean = diffs[i].iter().sum::<f64>() / n;
        let var = diffs[i].iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        println!(
            "    vs {}: diff {:+.4} +- {:.4}",
            schemes[0],
            mean,
            (var / n).sqrt()
        );
    }
}
