//! Copies the wavefront an object scatters in room 1 onto an array in
//! room 2 through a focusing relay tile, and reports the fidelity between
//! the two readings.
//!
//!     cargo run --release --example two_room_copy -- [seed]

use wavecopy::em::array_reading;
use wavecopy::metrics::field_fidelity;
use wavecopy::pwe::{build_graph, compile_route, deploy, deploy_continuous, route, DEFAULT_MAX_HOPS};
use wavecopy::scenario::{copy_config, copy_scene, COPY_SEED};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(COPY_SEED);
    let setup = copy_scene(seed);
    let cfg = copy_config();
    let graph = build_graph(&setup.scene);
    let r = route(&graph, &setup.object, &setup.user, DEFAULT_MAX_HOPS)?;
    println!("route {:?} ({:.3} m)", r.nodes, r.length);
    let cmds = compile_route(&graph, &r)?;
    for (label, scene) in [("continuous", deploy_continuous(&setup.scene, &cmds, cfg.k)?), ("2-bit", deploy(&setup.scene, &cmds, cfg.k)?)] {
        let t = std::time::Instant::now();
        let a1 = array_reading(&scene, &cfg, scene.array(&setup.origin_array).expect("origin array"))?;
        let a2 = array_reading(&scene, &cfg, scene.array(&setup.replica_array).expect("replica array"))?;
        let rms = |v: &[wavecopy::Complex64]| (v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len() as f64).sqrt();
        println!(
            "{label:>10}: fidelity {:.4}  |a1| {:.3e}  |a2| {:.3e}  ({:.2?})",
            field_fidelity(&a1.data, &a2.data)?,
            rms(&a1.data),
            rms(&a2.data),
            t.elapsed()
        );
    }
    Ok(())
}
