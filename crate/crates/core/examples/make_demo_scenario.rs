//! Writes the synthetic demo scenario as JSON to stdout.
//!
//! `cargo run --example make_demo_scenario > crates/core/data/demo_scenario.json`

use fgreward_core::simulator::{demo_scenario, DemoParams};

fn main() {
    let sc = demo_scenario(&DemoParams::default());
    println!(
        "{}",
        serde_json::to_string_pretty(&sc).expect("serializable scenario")
    );
}
