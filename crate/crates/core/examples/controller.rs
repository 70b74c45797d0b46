//! Runs the environment controller on a local socket and drives it with
//! line-delimited JSON requests: graph, route, deploy, predict, reroute.

use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use wavecopy::pwe::protocol::{serve, Client, Controller, Request};
use wavecopy::pwe::{CopyCommand, DeployMode};
use wavecopy::scenario::{copy_config, copy_scene, COPY_SEED};
use wavecopy::Vec3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = copy_scene(COPY_SEED);
    let user_at = setup.scene.endpoints.iter().find(|e| e.id == setup.user).map(|e| e.position).unwrap_or(Vec3::ZERO);
    let ctl = Arc::new(Controller::new(setup.scene, copy_config()));
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let server = thread::spawn(move || serve(listener, ctl));
    let mut client = Client::connect(addr)?;
    let requests = [
        Request::BuildGraph,
        Request::RouteDisjoint { commands: vec![CopyCommand::new(setup.object.as_str(), setup.user.as_str())], max_hops: None },
        Request::Deploy { callbacks: None, mode: DeployMode::Quantized },
        Request::Predict { probes: vec![user_at], callbacks: None, mode: DeployMode::Quantized },
        Request::Reroute { endpoint: setup.user.clone(), position: user_at + Vec3::new(0.0, 0.3, 0.0), max_hops: None },
        Request::Shutdown,
    ];
    for req in &requests {
        let resp = client.call(req)?;
        let text = serde_json::to_string(&resp)?;
        println!("{}", if text.len() > 160 { format!("{}…", &text[..160]) } else { text });
    }
    server.join().expect("server thread")?;
    Ok(())
}
