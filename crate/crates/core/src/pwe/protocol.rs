//! Line-delimited JSON command protocol for the controller, version 1.
//!
//! Each request is one JSON object per line:
//!
//! ```text
//! {"v":1,"id":7,"cmd":"route","src":"obj","dst":"user2"}
//! ```
//!
//! and each response echoes `v` and `id`:
//!
//! ```text
//! {"v":1,"id":7,"ok":true,"result":{...}}
//! {"v":1,"id":7,"ok":false,"error":{"code":"no_route","message":"..."}}
//! ```
//!
//! Mutating commands (`build_graph`, `route`, `route_disjoint`, `deploy`,
//! `reroute`) are serialized through a write lock; `graph` and `predict`
//! read a consistent snapshot and may run concurrently.

use super::{
    build_graph, compile_route, deploy_with, predict_channel, reroute, route, route_disjoint, CopyCommand, DeployMode,
    PweError, PweGraph, TileCommand, WaveRoute, DEFAULT_MAX_HOPS,
};
use crate::em::PropagationConfig;
use crate::geometry::Vec3;
use crate::scene::RoomScene;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Request {
    BuildGraph,
    Graph,
    Route {
        src: String,
        dst: String,
        #[serde(default)]
        max_hops: Option<usize>,
    },
    RouteDisjoint {
        commands: Vec<CopyCommand>,
        #[serde(default)]
        max_hops: Option<usize>,
    },
    /// Deploys the given callbacks, or the compiled current routes when
    /// `callbacks` is absent.
    Deploy {
        #[serde(default)]
        callbacks: Option<Vec<TileCommand>>,
        #[serde(default)]
        mode: DeployMode,
    },
    /// Predicts the channel of the given callbacks, or of the deployed ones.
    Predict {
        probes: Vec<Vec3>,
        #[serde(default)]
        callbacks: Option<Vec<TileCommand>>,
        #[serde(default)]
        mode: DeployMode,
    },
    Reroute {
        endpoint: String,
        position: Vec3,
        #[serde(default)]
        max_hops: Option<usize>,
    },
    Shutdown,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    #[serde(flatten)]
    pub request: Request,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Response {
    fn ok(id: Option<Value>, result: Value) -> Self {
        Response { v: PROTOCOL_VERSION, id, ok: true, result: Some(result), error: None }
    }

    fn err(id: Option<Value>, code: &str, message: impl Into<String>) -> Self {
        Response {
            v: PROTOCOL_VERSION,
            id,
            ok: false,
            result: None,
            error: Some(ErrorBody { code: code.into(), message: message.into() }),
        }
    }
}

/// Stable machine-readable code for each controller error.
pub fn error_code(e: &PweError) -> &'static str {
    match e {
        PweError::NoRoute(..) => "no_route",
        PweError::Infeasible => "infeasible",
        PweError::UnknownNode(_) => "unknown_node",
        PweError::UnknownTile(_) => "unknown_tile",
        PweError::TileConflict(_) => "tile_conflict",
        PweError::InvalidRoute(_) => "invalid_route",
        PweError::LayoutMismatch(_) => "layout_mismatch",
        PweError::InvalidGraph(_) => "invalid_graph",
        PweError::Em(_) => "field_error",
        PweError::Sdm(_) => "tile_error",
    }
}

/// Mutable controller state.
#[derive(Debug, Clone)]
pub struct ControllerState {
    /// Scene as authored; deployments are applied to copies of it.
    pub scene: RoomScene,
    pub cfg: PropagationConfig,
    pub max_hops: usize,
    pub graph: Option<PweGraph>,
    pub routes: Vec<WaveRoute>,
    pub deployed: Vec<TileCommand>,
}

/// Single-writer controller shared by every connection.
#[derive(Debug)]
pub struct Controller {
    state: RwLock<ControllerState>,
}

enum Outcome {
    Reply(Response),
    Stop(Response),
}

impl Controller {
    pub fn new(scene: RoomScene, cfg: PropagationConfig) -> Self {
        Controller {
            state: RwLock::new(ControllerState {
                scene,
                cfg,
                max_hops: DEFAULT_MAX_HOPS,
                graph: None,
                routes: Vec::new(),
                deployed: Vec::new(),
            }),
        }
    }

    pub fn snapshot(&self) -> ControllerState {
        self.state.read().expect("controller lock").clone()
    }

    /// Handles one request line and returns the response line (no trailing
    /// newline).
    pub fn handle_line(&self, line: &str) -> String {
        let out = match self.dispatch(line) {
            Outcome::Reply(r) | Outcome::Stop(r) => r,
        };
        serde_json::to_string(&out).expect("response serializes")
    }

    fn dispatch(&self, line: &str) -> Outcome {
        let raw: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return Outcome::Reply(Response::err(None, "bad_request", e.to_string())),
        };
        let id = raw.get("id").cloned();
        match raw.get("v").and_then(Value::as_u64) {
            Some(v) if v == PROTOCOL_VERSION as u64 => {}
            Some(v) => return Outcome::Reply(Response::err(id, "unsupported_version", format!("version {v}"))),
            None => return Outcome::Reply(Response::err(id, "bad_request", "missing protocol version `v`")),
        }
        let env: Envelope = match serde_json::from_value(raw) {
            Ok(e) => e,
            Err(e) => return Outcome::Reply(Response::err(id, "bad_request", e.to_string())),
        };
        if env.request == Request::Shutdown {
            return Outcome::Stop(Response::ok(env.id, json!({})));
        }
        Outcome::Reply(match self.execute(env.request) {
            Ok(v) => Response::ok(env.id, v),
            Err(Failure::Pwe(e)) => Response::err(env.id, error_code(&e), e.to_string()),
            Err(Failure::State(m)) => Response::err(env.id, "no_graph", m),
        })
    }

    pub fn execute(&self, request: Request) -> Result<Value, Failure> {
        match request {
            Request::Graph => {
                let st = self.state.read().expect("controller lock");
                let g = st.graph.as_ref().ok_or_else(no_graph)?;
                Ok(to_json(g))
            }
            Request::Predict { probes, callbacks, mode } => {
                let st = self.state.read().expect("controller lock");
                let cbs = callbacks.unwrap_or_else(|| st.deployed.clone());
                let p = predict_channel(&st.scene, &cbs, &probes, &st.cfg, mode)?;
                Ok(to_json(&p))
            }
            Request::BuildGraph => {
                let mut st = self.state.write().expect("controller lock");
                let g = build_graph(&st.scene);
                let summary = json!({"nodes": g.nodes.len(), "edges": g.edges.len()});
                st.graph = Some(g);
                st.routes.clear();
                Ok(summary)
            }
            Request::Route { src, dst, max_hops } => {
                let mut st = self.state.write().expect("controller lock");
                let hops = max_hops.unwrap_or(st.max_hops);
                let r = route(st.graph.as_ref().ok_or_else(no_graph)?, &src, &dst, hops)?;
                st.routes = vec![r.clone()];
                Ok(to_json(&r))
            }
            Request::RouteDisjoint { commands, max_hops } => {
                let mut st = self.state.write().expect("controller lock");
                let hops = max_hops.unwrap_or(st.max_hops);
                let rs = route_disjoint(st.graph.as_ref().ok_or_else(no_graph)?, &commands, hops)?;
                st.routes = rs.clone();
                Ok(to_json(&rs))
            }
            Request::Deploy { callbacks, mode } => {
                let mut st = self.state.write().expect("controller lock");
                let cbs = match callbacks {
                    Some(c) => c,
                    None => {
                        let g = st.graph.as_ref().ok_or_else(no_graph)?;
                        let mut all = Vec::new();
                        for r in &st.routes {
                            all.extend(compile_route(g, r)?);
                        }
                        all
                    }
                };
                // Validate by deploying before committing.
                deploy_with(&st.scene, &cbs, st.cfg.k, mode)?;
                st.deployed = cbs.clone();
                Ok(to_json(&cbs))
            }
            Request::Reroute { endpoint, position, max_hops } => {
                let mut st = self.state.write().expect("controller lock");
                let hops = max_hops.unwrap_or(st.max_hops);
                let g = st.graph.as_ref().ok_or_else(no_graph)?;
                let (g2, rs) = reroute(g, &st.scene, &st.routes, &endpoint, position, hops)?;
                st.graph = Some(g2);
                st.routes = rs.clone();
                Ok(to_json(&rs))
            }
            Request::Shutdown => Ok(json!({})),
        }
    }
}

/// Why a request failed.
#[derive(Debug)]
pub enum Failure {
    Pwe(PweError),
    State(String),
}

impl From<PweError> for Failure {
    fn from(e: PweError) -> Self {
        Failure::Pwe(e)
    }
}

fn no_graph() -> Failure {
    Failure::State("no graph built yet; send build_graph first".into())
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn serve_client(stream: TcpStream, ctl: &Controller, stop: &AtomicBool) -> std::io::Result<bool> {
    let mut writer = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (resp, halt) = match ctl.dispatch(&line) {
            Outcome::Reply(r) => (r, false),
            Outcome::Stop(r) => (r, true),
        };
        writeln!(writer, "{}", serde_json::to_string(&resp).expect("response serializes"))?;
        if halt {
            stop.store(true, Ordering::SeqCst);
            return Ok(true);
        }
    }
    Ok(false)
}

/// Serves the protocol on `listener` until a client sends `shutdown`. Each
/// connection gets its own thread; the controller serializes mutations.
pub fn serve(listener: TcpListener, ctl: Arc<Controller>) -> std::io::Result<()> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let mut workers = Vec::new();
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = stream?;
        let (ctl, stop) = (Arc::clone(&ctl), Arc::clone(&stop));
        workers.push(std::thread::spawn(move || {
            if let Ok(true) = serve_client(stream, &ctl, &stop) {
                // Wake the accept loop so it can observe the stop flag.
                let _ = TcpStream::connect(addr);
            }
        }));
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

/// Minimal blocking client: one request line out, one response line back.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        Ok(Client { writer: stream.try_clone()?, reader: BufReader::new(stream), next_id: 1 })
    }

    pub fn call(&mut self, request: &Request) -> std::io::Result<Response> {
        let env = Envelope { v: PROTOCOL_VERSION, id: Some(json!(self.next_id)), request: request.clone() };
        self.next_id += 1;
        self.call_raw(&serde_json::to_string(&env).expect("request serializes"))
    }

    pub fn call_raw(&mut self, line: &str) -> std::io::Result<Response> {
        writeln!(self.writer, "{line}")?;
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "controller closed the connection"));
        }
        serde_json::from_str(&buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
