//! Command-line front end. Every subcommand prints JSON or a one-line
//! summary on stdout; failures go to stderr with a documented exit code
//! (see `wavecopy::scenario::exit`).

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use wavecopy::dataset::{encode_readings, read_readings, split_dataset_dir};
use wavecopy::em::{PropagationConfig, RfReading};
use wavecopy::metrics::{latency_budget, LatencyBudget};
use wavecopy::pwe::protocol::{serve, Controller, Failure, Request};
use wavecopy::pwe::{CopyCommand, DeployMode, PweError, TileCommand, DEFAULT_MAX_HOPS};
use wavecopy::scenario::{
    compare_dirs, copy_scene, exit, manifest_summary, run_copy, run_evaluate, run_training_data, training_scene,
    ScenarioConfig, ScenarioError, EVALUATION_CSV,
};
use wavecopy::scene::RoomScene;
use wavecopy::transport::{connect_and_send, serve_once, Sampler, TransportError, WireFrame};
use wavecopy::{Complex64, Vec3};

#[derive(Parser)]
#[command(name = "wavecopy", version, about = "XR-RF wavefront copy simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    #[command(subcommand)]
    Scene(SceneCmd),
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Two-room wavefront copy; prints the fidelity report.
    Copy(CopyArgs),
    /// Receives wire frames from one client.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Writes received readings in the dataset `readings.bin` layout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Streams readings as wire frames.
    Send {
        #[arg(long)]
        connect: String,
        /// Frames per second; unpaced when absent.
        #[arg(long)]
        rate: Option<f64>,
        /// Dataset whose readings are sent in record order.
        #[arg(long, conflicts_with = "frames")]
        data: Option<PathBuf>,
        /// Number of random 10×10 readings to send instead.
        #[arg(long, requires = "seed")]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Scores reconstructions against a dataset's test-split L photos.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fake_dir: PathBuf,
        /// Seeds the shuffled-pairing baseline.
        #[arg(long)]
        seed: u64,
        /// Directory for evaluation.csv and evaluation.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Motion-to-photon latency budget.
    Budget {
        /// Adds the 1-20 ms network hop.
        #[arg(long)]
        network: bool,
        /// Budget JSON (`{"components":[{"name","min_ms","max_ms"}]}`).
        #[arg(long, conflicts_with = "network")]
        budget: Option<PathBuf>,
    },
    /// Environment controller commands, each run against a fresh controller.
    Pwe(PweArgs),
}

#[derive(Subcommand)]
enum SceneCmd {
    /// Checks ids, geometry and interpenetration.
    Validate {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Writes a built-in scene as JSON.
    Export {
        #[arg(value_enum)]
        which: Builtin,
        /// Object pose of the two-room scene.
        #[arg(long, required_if_eq("which", "two-room"))]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Training,
    TwoRoom,
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Generates, writes and splits a corpus.
    Generate {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        frac: Option<f64>,
    },
    /// Rewrites a dataset's split.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        frac: f64,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// ScenarioConfig JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ScenarioConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => {
                let seed = self.seed.ok_or_else(|| CliError::usage("--seed is required without --config"))?;
                ScenarioConfig::new(seed, "out")
            }
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = &self.scene {
            cfg.scene = Some(p.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct CopyArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    max_hops: Option<usize>,
    /// Skips the 2-bit deployment.
    #[arg(long)]
    no_quantize: bool,
}

#[derive(Subcommand)]
enum MetricsCmd {
    /// PSNR/SSIM of same-named PNGs in two directories.
    Compare {
        #[arg(long)]
        real_dir: PathBuf,
        #[arg(long)]
        fake_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PweArgs {
    #[arg(long, global = true)]
    scene: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_HOPS)]
    max_hops: usize,
    /// Reflection order for `predict`.
    #[arg(long, global = true, default_value_t = 3)]
    max_bounce: usize,
    #[command(subcommand)]
    cmd: PweCmd,
}

#[derive(Args)]
struct RouteSet {
    /// `SRC:DST` copy to route before the command (repeatable; routed
    /// disjointly when more than one).
    #[arg(long = "route")]
    routes: Vec<String>,
    /// TileCommand list JSON; replaces the routes.
    #[arg(long)]
    callbacks: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "quantized")]
    mode: Mode,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Quantized,
    Continuous,
}

#[derive(Subcommand)]
enum PweCmd {
    BuildGraph,
    Route {
        #[arg(long)]
        src: String,
        #[arg(long)]
        dst: String,
    },
    RouteDisjoint {
        /// CopyCommand list JSON.
        #[arg(long)]
        commands: PathBuf,
    },
    Deploy(RouteSet),
    Predict {
        #[command(flatten)]
        set: RouteSet,
        /// JSON list of `[x, y, z]` probe points.
        #[arg(long)]
        probes: PathBuf,
    },
    Reroute {
        #[arg(long = "route", required = true)]
        routes: Vec<String>,
        #[arg(long)]
        endpoint: String,
        /// New position `x,y,z`.
        #[arg(long, value_parser = parse_vec3)]
        position: Vec3,
    },
    /// Serves the line-delimited JSON protocol until a `shutdown` request.
    Controller {
        #[arg(long, default_value = "127.0.0.1:7879")]
        listen: String,
    },
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err("expected x,y,z".into()),
    }
}

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn usage(m: impl Into<String>) -> Self {
        CliError { code: exit::USAGE, message: m.into() }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError { code: e.exit_code(), message: e.to_string() }
    }
}

impl From<PweError> for CliError {
    fn from(e: PweError) -> Self {
        ScenarioError::from(e).into()
    }
}

impl From<wavecopy::dataset::DatasetError> for CliError {
    fn from(e: wavecopy::dataset::DatasetError) -> Self {
        ScenarioError::from(e).into()
    }
}

impl From<wavecopy::scene::SceneError> for CliError {
    fn from(e: wavecopy::scene::SceneError) -> Self {
        ScenarioError::from(e).into()
    }
}

impl From<wavecopy::metrics::MetricsError> for CliError {
    fn from(e: wavecopy::metrics::MetricsError) -> Self {
        ScenarioError::from(e).into()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { code: exit::IO, message: e.to_string() }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError { code: exit::VALIDATION, message: e.to_string() }
    }
}

impl From<TransportError> for CliError {
    fn from(e: TransportError) -> Self {
        let code = match e {
            TransportError::Io(_) | TransportError::ConnectionLost(_) => exit::IO,
            _ => exit::FAILURE,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<Failure> for CliError {
    fn from(f: Failure) -> Self {
        match f {
            Failure::Pwe(e) => e.into(),
            Failure::State(m) => CliError { code: exit::FAILURE, message: m },
        }
    }
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Scene(SceneCmd::Validate { scene }) => {
            let s = RoomScene::load(&scene)?;
            s.validate()?;
            println!(
                "ok: {} walls, {} tiles, {} objects, {} sources, {} arrays, {} cameras",
                s.walls.len(),
                s.tiles.len(),
                s.objects.len(),
                s.sources.len(),
                s.arrays.len(),
                s.cameras.len()
            );
        }
        Cmd::Scene(SceneCmd::Export { which, seed, out }) => {
            let s = match which {
                Builtin::Training => training_scene(),
                Builtin::TwoRoom => copy_scene(seed.expect("clap requires --seed")).scene,
            };
            s.save(&out)?;
        }
        Cmd::Dataset(DatasetCmd::Generate { common, n, frac }) => {
            let mut cfg = common.resolve()?;
            if let Some(n) = n {
                cfg.dataset_size = n;
            }
            if let Some(f) = frac {
                cfg.split_fraction = f;
            }
            let m = run_training_data(&cfg)?;
            println!("{}: {}", cfg.out.display(), manifest_summary(&m));
        }
        Cmd::Dataset(DatasetCmd::Split { data, frac, seed }) => {
            let m = split_dataset_dir(&data, frac, seed)?;
            println!("{}: {}", data.display(), manifest_summary(&m));
        }
        Cmd::Copy(a) => {
            let mut cfg = a.common.resolve()?;
            if let Some(h) = a.max_hops {
                cfg.max_hops = h;
            }
            if a.no_quantize {
                cfg.quantize = false;
            }
            print_json(&run_copy(&cfg)?);
        }
        Cmd::Serve { listen, out } => {
            let listener = TcpListener::bind(&listen)?;
            eprintln!("listening on {}", listener.local_addr()?);
            let mut readings = Vec::new();
            let report = serve_once(&listener, |f| readings.push(f.to_reading()))?;
            if let Some(p) = out {
                fs::write(p, encode_readings(&readings))?;
            }
            print_json(&report);
        }
        Cmd::Send { connect, rate, data, frames, seed } => {
            let readings = match (data, frames) {
                (Some(d), _) => read_readings(&d)?.1,
                (None, Some(n)) => random_readings(n, seed.expect("clap requires --seed")),
                (None, None) => return Err(CliError::usage("give --data or --frames")),
            };
            let mut sampler = Sampler::default();
            let frames = readings.iter().map(|r| sampler.sample(r)).collect::<Result<Vec<WireFrame>, _>>()?;
            print_json(&connect_and_send(&connect, frames, rate)?);
        }
        Cmd::Metrics(MetricsCmd::Compare { real_dir, fake_dir, out }) => {
            let c = compare_dirs(&real_dir, &fake_dir)?;
            fs::write(&out, c.to_csv())?;
            print_json(&c.summary);
        }
        Cmd::Evaluate { data, fake_dir, seed, out } => {
            let ev = run_evaluate(&ScenarioConfig::new(seed, data), &fake_dir, &out)?;
            println!("{}", serde_json::json!({
                "csv": out.join(EVALUATION_CSV),
                "records": ev.pairs.len(),
                "summary": ev.summary,
                "baseline": ev.baseline_summary,
            }));
        }
        Cmd::Budget { network, budget } => {
            let b = match budget {
                Some(p) => read_json(&p)?,
                None if network => LatencyBudget::xr_with_network(),
                None => LatencyBudget::xr_default(),
            };
            print_json(&latency_budget(&b)?);
        }
        Cmd::Pwe(a) => run_pwe(a)?,
    }
    Ok(())
}

fn random_readings(n: usize, seed: u64) -> Vec<RfReading> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let data = (0..100).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            RfReading::new(10, 10, data)
        })
        .collect()
}

fn parse_route(s: &str) -> Result<CopyCommand, CliError> {
    let (src, dst) = s.split_once(':').ok_or_else(|| CliError::usage(format!("route `{s}` is not SRC:DST")))?;
    Ok(CopyCommand::new(src, dst))
}

fn run_pwe(a: PweArgs) -> Result<(), CliError> {
    let path = a.scene.ok_or_else(|| CliError::usage("--scene is required"))?;
    let scene = RoomScene::load(&path)?;
    scene.validate()?;
    let cfg = PropagationConfig { max_bounce: a.max_bounce, ..PropagationConfig::default() };
    let ctl = Controller::new(scene, cfg);
    let hops = Some(a.max_hops);
    if let PweCmd::Controller { listen } = &a.cmd {
        let listener = TcpListener::bind(listen)?;
        eprintln!("listening on {}", listener.local_addr()?);
        return Ok(serve(listener, Arc::new(ctl))?);
    }
    let summary = ctl.execute(Request::BuildGraph)?;
    let establish = |routes: &[String]| -> Result<(), CliError> {
        let commands = routes.iter().map(|r| parse_route(r)).collect::<Result<Vec<_>, _>>()?;
        ctl.execute(Request::RouteDisjoint { commands, max_hops: hops })?;
        Ok(())
    };
    let callbacks = |set: &RouteSet| -> Result<Option<Vec<TileCommand>>, CliError> {
        match &set.callbacks {
            Some(p) => Ok(Some(read_json(p)?)),
            None => {
                establish(&set.routes)?;
                Ok(None)
            }
        }
    };
    let mode = |m: Mode| match m {
        Mode::Quantized => DeployMode::Quantized,
        Mode::Continuous => DeployMode::Continuous,
    };
    let out: Value = match a.cmd {
        PweCmd::BuildGraph => {
            let g = ctl.execute(Request::Graph)?;
            serde_json::json!({ "summary": summary, "graph": g })
        }
        PweCmd::Route { src, dst } => ctl.execute(Request::Route { src, dst, max_hops: hops })?,
        PweCmd::RouteDisjoint { commands } => {
            ctl.execute(Request::RouteDisjoint { commands: read_json(&commands)?, max_hops: hops })?
        }
        PweCmd::Deploy(set) => {
            let cbs = callbacks(&set)?;
            ctl.execute(Request::Deploy { callbacks: cbs, mode: mode(set.mode) })?
        }
        PweCmd::Predict { set, probes } => {
            let cbs = callbacks(&set)?;
            let m = mode(set.mode);
            if cbs.is_none() {
                ctl.execute(Request::Deploy { callbacks: None, mode: m })?;
            }
            ctl.execute(Request::Predict { probes: read_json(&probes)?, callbacks: cbs, mode: m })?
        }
        PweCmd::Reroute { routes, endpoint, position } => {
            establish(&routes)?;
            ctl.execute(Request::Reroute { endpoint, position, max_hops: hops })?
        }
        PweCmd::Controller { .. } => unreachable!("handled above"),
    };
    print_json(&out);
    Ok(())
}
