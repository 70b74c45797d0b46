//! Motion-to-photon budget for an XR pipeline, optionally with a network
//! hop, from a JSON budget file if one is given.
//!
//!     cargo run --example latency_budget -- [budget.json]

use wavecopy::metrics::{latency_budget, LatencyBudget};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let budgets = match std::env::args().nth(1) {
        Some(p) => vec![(p.clone(), serde_json::from_str::<LatencyBudget>(&std::fs::read_to_string(&p)?)?)],
        None => vec![("local".into(), LatencyBudget::xr_default()), ("with network".into(), LatencyBudget::xr_with_network())],
    };
    for (label, b) in budgets {
        for c in &b.components {
            println!("  {:<24} {:>5.1}–{:<5.1} ms", c.name, c.min_ms, c.max_ms);
        }
        let v = latency_budget(&b)?;
        println!("{label}: total {}–{} ms; best case fits: {}; guaranteed: {}\n", v.min_total_ms, v.max_total_ms, v.feasible_best, v.guaranteed);
    }
    Ok(())
}
