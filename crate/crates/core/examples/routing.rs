//! Builds the controller graph of the two-room scene, routes a copy
//! command, routes two commands disjointly and compiles the result into
//! per-tile callbacks.

use wavecopy::pwe::{build_graph, compile_route, route, route_disjoint, CopyCommand, DEFAULT_MAX_HOPS};
use wavecopy::scenario::{copy_scene, COPY_SEED};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = copy_scene(COPY_SEED);
    let graph = build_graph(&setup.scene);
    println!("{} nodes, {} edges", graph.nodes.len(), graph.edges.len());
    let r = route(&graph, &setup.object, &setup.user, DEFAULT_MAX_HOPS)?;
    println!("route {:?}, {} hop(s), {:.3} m", r.nodes, r.hops(), r.length);
    for c in compile_route(&graph, &r)? {
        println!("  {} <- {}", c.tile, serde_json::to_string(&c.callback)?);
    }
    let cmds = [CopyCommand::new(setup.object.as_str(), setup.user.as_str()), CopyCommand::new(setup.origin_array.as_str(), setup.replica_array.as_str())];
    match route_disjoint(&graph, &cmds, DEFAULT_MAX_HOPS) {
        Ok(rs) => {
            for r in rs {
                println!("disjoint {:?} ({:.3} m)", r.nodes, r.length);
            }
        }
        Err(e) => println!("disjoint routing: {e}"),
    }
    Ok(())
}
