//! Canonical scenes and the end-to-end runs behind the command line.

use crate::dataset::{
    draw_rotations, generate_dataset, photo_path, read_manifest, split_dataset, write_dataset, DatasetError,
    DatasetManifest, DEFAULT_TRAIN_FRACTION, LEFT,
};
use crate::em::{array_reading, compute_field, EmError, PropagationConfig};
use crate::geometry::{EulerAngles, Vec3};
use crate::metrics::{field_fidelity, psnr, ssim, summarize, BoxStats, ImageU8, MetricsError};
use crate::pwe::{build_graph, compile_route, deploy_with, route, DeployMode, PweError, DEFAULT_MAX_HOPS};
use crate::scene::{
    rotate_object, Camera, Endpoint, Material, PointSource, ReceiveArray, Rectangle, ReflectorObject, RoomScene,
    SceneError, Wall,
};
use crate::sdm::{descramble_config, scramble_config, Callback, SdmTile, TileConfig};
use crate::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

fn absorber(id: impl Into<String>, center: Vec3, normal: Vec3, u: Vec3, hu: f64, hv: f64) -> Wall {
    Wall { id: id.into(), rect: Rectangle::new(center, normal, u, hu, hv, Material::Absorber) }
}

/// Six absorber faces of the axis-aligned box `[lo, hi]`, normals inward.
pub fn box_room(prefix: &str, lo: Vec3, hi: Vec3) -> Vec<Wall> {
    let c = (lo + hi) / 2.0;
    let h = (hi - lo) / 2.0;
    vec![
        absorber(format!("{prefix}-x0"), Vec3::new(lo.x, c.y, c.z), Vec3::X, Vec3::Y, h.y, h.z),
        absorber(format!("{prefix}-x1"), Vec3::new(hi.x, c.y, c.z), -Vec3::X, Vec3::Y, h.y, h.z),
        absorber(format!("{prefix}-y0"), Vec3::new(c.x, lo.y, c.z), Vec3::Y, Vec3::X, h.x, h.z),
        absorber(format!("{prefix}-y1"), Vec3::new(c.x, hi.y, c.z), -Vec3::Y, Vec3::X, h.x, h.z),
        absorber(format!("{prefix}-floor"), Vec3::new(c.x, c.y, lo.z), Vec3::Z, Vec3::X, h.x, h.y),
        absorber(format!("{prefix}-ceiling"), Vec3::new(c.x, c.y, hi.z), -Vec3::Z, Vec3::X, h.x, h.y),
    ]
}

/// A small chair-like PEC object: seat, back and two side plates.
pub fn chair(id: &str, pivot: Vec3) -> ReflectorObject {
    let pec = |c: Vec3, n: Vec3, u: Vec3, hu: f64, hv: f64| Rectangle::new(pivot + c, n, u, hu, hv, Material::Pec);
    ReflectorObject {
        id: id.into(),
        pivot,
        rotation: EulerAngles::ZERO,
        rectangles: vec![
            pec(Vec3::new(0.0, 0.0, -0.02), Vec3::Z, Vec3::X, 0.14, 0.14),
            pec(Vec3::new(-0.14, 0.0, 0.12), Vec3::X, Vec3::Y, 0.14, 0.14),
            pec(Vec3::new(0.0, -0.14, -0.1), Vec3::Y, Vec3::X, 0.14, 0.08),
            pec(Vec3::new(0.0, 0.14, -0.1), Vec3::Y, Vec3::X, 0.14, 0.08),
        ],
        colors: vec![0, 2, 3, 5],
    }
}

/// Four differently tilted PEC plates on the corners of a tetrahedron,
/// spaced wider than any two plates' half-diagonals. Nothing touches, so multiple reflections inside the object stay weak,
/// and the small extent keeps the single-tile relay's off-axis phase
/// error (about k·δ²/d) well under a radian.
pub fn plate_cluster(id: &str, pivot: Vec3) -> ReflectorObject {
    let plate = |c: Vec3, n: Vec3, hu: f64, hv: f64| {
        let u = if n.cross(Vec3::Z).norm() > 1e-6 { n.cross(Vec3::Z) } else { Vec3::X };
        Rectangle::new(pivot + c, n, u, hu, hv, Material::Pec)
    };
    ReflectorObject {
        id: id.into(),
        pivot,
        rotation: EulerAngles::ZERO,
        rectangles: vec![
            plate(Vec3::new(0.04, 0.04, 0.04), Vec3::new(1.0, 0.3, 0.2), 0.04, 0.03),
            plate(Vec3::new(0.04, -0.04, -0.04), Vec3::new(0.2, 1.0, -0.3), 0.035, 0.035),
            plate(Vec3::new(-0.04, 0.04, -0.04), Vec3::new(-0.3, 0.2, 1.0), 0.03, 0.04),
            plate(Vec3::new(-0.04, -0.04, 0.04), Vec3::new(1.0, -1.0, 0.5), 0.045, 0.025),
        ],
        colors: vec![1, 4, 6, 7],
    }
}

/// Room used for the training corpus: a 4 m × 4 m × 3 m absorber box with
/// one source, a chair on a pivot, a 10×10 receive array, and a stereo
/// camera pair. A baffle hides the source from the array so the reading is
/// dominated by the object.
pub fn training_scene() -> RoomScene {
    let mut s = RoomScene::new();
    s.walls = box_room("room", Vec3::ZERO, Vec3::new(4.0, 4.0, 3.0));
    let src = Vec3::new(1.2, 0.8, 1.5);
    let obj = Vec3::new(2.0, 2.0, 1.2);
    let arr = Vec3::new(3.4, 1.0, 1.2);
    s.walls.push(absorber("baffle", Vec3::new(2.3, 0.9, 1.35), Vec3::X, Vec3::Y, 0.25, 0.3));
    s.sources.push(PointSource::new("tx", src, Complex64::new(1.0, 0.0)));
    s.objects.push(chair("chair", obj));
    let facing = (obj - arr).normalized();
    let u = Vec3::Z.cross(facing).normalized();
    s.arrays.push(ReceiveArray::default_at("rx", arr, u, Vec3::Z));
    let eye = Vec3::new(0.9, 3.1, 1.7);
    let side = (obj - eye).cross(Vec3::Z).normalized() * 0.06;
    for (id, p) in [("L", eye - side), ("R", eye + side)] {
        s.cameras.push(Camera {
            id: id.into(),
            position: p,
            look_at: obj,
            up: Vec3::Z,
            hfov: 30f64.to_radians(),
            width: 64,
            height: 64,
        });
    }
    s
}

/// Propagation settings for corpus generation: single scattering off the
/// object. Self-reflections change readings little and cost ~10× more.
pub fn training_config() -> PropagationConfig {
    PropagationConfig { max_bounce: 1, ..PropagationConfig::default() }
}

/// Absorber box around a point source, open on the side facing `toward`.
/// `depth` is the distance from the source to the opening; the opening is a
/// square of half-side `half`.
pub fn horn(id: &str, source: Vec3, toward: Vec3, half: f64, depth: f64) -> Vec<Wall> {
    let f = (toward - source).normalized();
    let a = if f.cross(Vec3::Z).norm() > 1e-6 { f.cross(Vec3::Z).normalized() } else { Vec3::X };
    let b = f.cross(a);
    let back = 0.05;
    let len = depth + back;
    let mid = source + f * ((depth - back) / 2.0);
    vec![
        absorber(format!("{id}-back"), source - f * back, f, a, half, half),
        absorber(format!("{id}-a0"), mid - a * half, a, f, len / 2.0, half),
        absorber(format!("{id}-a1"), mid + a * half, -a, f, len / 2.0, half),
        absorber(format!("{id}-b0"), mid - b * half, b, f, len / 2.0, half),
        absorber(format!("{id}-b1"), mid + b * half, -b, f, len / 2.0, half),
    ]
}

/// Geometry of the two-room copy experiment. Room 1 is `x ∈ [0, 5]`, room 2
/// is `x ∈ [5, 10]`, both `room_depth` deep and 3 m high, sharing the wall
/// `x = 5`. A focusing tile on room 1's `y = 0` wall images the object with
/// unit magnification onto a point inside room 2; the converging beam
/// passes a small doorway in the shared wall on its way to focus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyLayout {
    pub room_depth: f64,
    /// Relay tile center; the tile lies in the plane `y = tile_center.y`.
    pub tile_center: Vec3,
    pub tile_rows: usize,
    pub tile_cols: usize,
    /// Object-to-tile and tile-to-image distance, m.
    pub relay_distance: f64,
    /// Angle between the tile normal and the object direction, degrees.
    pub incidence_deg: f64,
    /// Distance from the object pivot to the original array center, m.
    pub array_distance: f64,
    /// Doorway half-extent around the image point, `[y, z]`.
    pub doorway_half: [f64; 2],
    /// Elevation of the two illuminating horns above and below the relay
    /// axis, degrees, and their distance from the pivot.
    pub horn_angle_deg: f64,
    pub horn_distance: f64,
}

impl Default for CopyLayout {
    fn default() -> Self {
        CopyLayout {
            room_depth: 7.0,
            tile_center: Vec3::new(4.23, 0.01, 1.5),
            tile_rows: 40,
            tile_cols: 46,
            relay_distance: 4.0,
            incidence_deg: 20.0,
            array_distance: 2.5,
            doorway_half: [1.4, 0.6],
            horn_angle_deg: 40.0,
            horn_distance: 1.0,
        }
    }
}

/// Roles in a copy scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopySetup {
    pub scene: RoomScene,
    /// Object whose scattered wavefront is copied.
    pub object: String,
    /// Room-2 endpoint the relay images the object onto.
    pub user: String,
    /// Array reading the original wavefront in room 1.
    pub origin_array: String,
    /// Array at the mapped pose in room 2.
    pub replica_array: String,
    pub seed: u64,
}

pub const COPY_SEED: u64 = 20240611;

/// Two reflections cover source → object → relay → array.
pub fn copy_config() -> PropagationConfig {
    PropagationConfig { max_bounce: 3, ..PropagationConfig::default() }
}

fn relay_points(l: &CopyLayout) -> (Vec3, Vec3) {
    let a = l.incidence_deg.to_radians();
    let t = l.tile_center;
    let d = l.relay_distance;
    (t + Vec3::new(-a.sin(), a.cos(), 0.0) * d, t + Vec3::new(a.sin(), a.cos(), 0.0) * d)
}

/// Maps a room-1 observation point through the relay: the ray from `p`
/// through `e` meets the tile plane at `r`, turns toward the image point
/// `q`, and the mapped point sits `|e − p|` beyond `q` along it.
pub fn relay_map(e: Vec3, p: Vec3, q: Vec3, plane_point: Vec3, plane_normal: Vec3) -> Vec3 {
    let dir = (e - p).normalized();
    let t = (plane_point - p).dot(plane_normal) / dir.dot(plane_normal);
    let r = p + dir * t;
    q + (q - r).normalized() * e.distance(p)
}

/// The canonical two-room copy scene; `seed` fixes the object's pose.
pub fn copy_scene(seed: u64) -> CopySetup {
    copy_scene_with(&CopyLayout::default(), seed)
}

pub fn copy_scene_with(l: &CopyLayout, seed: u64) -> CopySetup {
    let mut s = RoomScene::new();
    let (p, q) = relay_points(l);
    let depth = l.room_depth;
    // Doorway centered where the relay axis crosses the shared wall.
    let c = l.tile_center + (q - l.tile_center) * ((5.0 - l.tile_center.x) / (q.x - l.tile_center.x));
    let (y0, y1) = (c.y - l.doorway_half[0], c.y + l.doorway_half[0]);
    let (z0, z1) = (c.z - l.doorway_half[1], c.z + l.doorway_half[1]);

    let mut room1 = box_room("r1", Vec3::ZERO, Vec3::new(5.0, depth, 3.0));
    room1.retain(|w| w.id != "r1-x1");
    let mut room2 = box_room("r2", Vec3::new(5.0, 0.0, 0.0), Vec3::new(10.0, depth, 3.0));
    room2.retain(|w| w.id != "r2-x0");
    s.walls.extend(room1);
    s.walls.extend(room2);
    // Shared wall around the doorway.
    let x = 5.0;
    let seg = |id: &str, ya: f64, yb: f64, za: f64, zb: f64| {
        absorber(id, Vec3::new(x, (ya + yb) / 2.0, (za + zb) / 2.0), Vec3::X, Vec3::Y, (yb - ya) / 2.0, (zb - za) / 2.0)
    };
    s.walls.push(seg("shared-south", 0.0, y0, 0.0, 3.0));
    s.walls.push(seg("shared-north", y1, depth, 0.0, 3.0));
    s.walls.push(seg("shared-sill", y0, y1, 0.0, z0));
    s.walls.push(seg("shared-lintel", y0, y1, z1, 3.0));

    let rot = draw_rotations(1, seed)[0];
    s.objects.push(rotate_object(&plate_cluster("object", p), rot));

    let axis = (l.tile_center - p).normalized();
    for (i, sign) in [(0, -1.0), (1, 1.0)] {
        let a = sign * l.horn_angle_deg.to_radians();
        let dir = axis * a.cos() + Vec3::Z * a.sin();
        let pos = p + dir * l.horn_distance;
        s.sources.push(PointSource::new(format!("horn{i}"), pos, Complex64::new(1.0, 0.0)));
        s.walls.extend(horn(&format!("horn{i}"), pos, p, 0.1, 0.2));
    }

    let pitch = PropagationConfig::default().wavelength() / 2.0;
    s.tiles.push(SdmTile::new("relay", l.tile_center, Vec3::Y, Vec3::X, l.tile_rows, l.tile_cols, pitch));
    // Spare tiles; routing must still prefer the relay.
    s.tiles.push(SdmTile::default_at("sdm-r1-north", Vec3::new(2.5, depth - 0.01, 1.5), -Vec3::Y, Vec3::X));
    s.tiles.push(SdmTile::default_at("sdm-r2-east", Vec3::new(9.99, depth / 2.0, 1.5), -Vec3::X, Vec3::Y));
    s.tiles.push(SdmTile::default_at("sdm-r2-south", Vec3::new(7.5, 0.01, 1.5), Vec3::Y, Vec3::X));
    s.tiles.push(SdmTile::default_at("sdm-r2-ceiling", Vec3::new(7.5, depth / 2.0, 2.99), -Vec3::Z, Vec3::X));

    let side = axis.cross(Vec3::Z).normalized();
    let a1 = ReceiveArray::default_at("a1", p + axis * l.array_distance, side, Vec3::Z);
    let n = Vec3::Y;
    let elements = a1.elements.iter().map(|&e| relay_map(e, p, q, l.tile_center, n)).collect();
    let a2 = ReceiveArray { id: "a2".into(), rows: a1.rows, cols: a1.cols, elements };
    s.arrays.push(a1);
    s.arrays.push(a2);
    s.endpoints.push(Endpoint { id: "user2".into(), position: q });

    CopySetup {
        scene: s,
        object: "object".into(),
        user: "user2".into(),
        origin_array: "a1".into(),
        replica_array: "a2".into(),
        seed,
    }
}

/// Process exit codes of the command line.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    /// Clap's own code for bad flags.
    pub const USAGE: i32 = 2;
    pub const NO_ROUTE: i32 = 3;
    pub const INFEASIBLE: i32 = 4;
    pub const IO: i32 = 5;
    pub const VALIDATION: i32 = 6;
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no image for record {index} at {path}")]
    IndexMismatch { index: usize, path: PathBuf },
    #[error("dataset at {0} has no split; run `dataset split` first")]
    NoSplit(PathBuf),
    #[error(transparent)]
    Pwe(#[from] PweError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Em(#[from] EmError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ScenarioError {
    pub fn exit_code(&self) -> i32 {
        use ScenarioError as E;
        match self {
            E::Pwe(PweError::NoRoute(..)) => exit::NO_ROUTE,
            E::Pwe(PweError::Infeasible) => exit::INFEASIBLE,
            E::Io(_)
            | E::Scene(SceneError::Io(_))
            | E::Dataset(DatasetError::Io(_))
            | E::Dataset(DatasetError::Image(MetricsError::Io(_)))
            | E::Metrics(MetricsError::Io(_)) => exit::IO,
            E::Config(_)
            | E::Pwe(PweError::UnknownNode(_) | PweError::UnknownTile(_) | PweError::InvalidRoute(_))
            | E::IndexMismatch { .. }
            | E::NoSplit(_)
            | E::Scene(_)
            | E::Dataset(_)
            | E::Metrics(MetricsError::Png(_) | MetricsError::DimMismatch(..) | MetricsError::TooSmall) => {
                exit::VALIDATION
            }
            _ => exit::FAILURE,
        }
    }
}

/// Which ids in a copy scene play which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CopyRoles {
    pub object: String,
    pub user: String,
    pub origin_array: String,
    pub replica_array: String,
}

impl Default for CopyRoles {
    fn default() -> Self {
        CopyRoles { object: "object".into(), user: "user2".into(), origin_array: "a1".into(), replica_array: "a2".into() }
    }
}

/// Settings shared by the end-to-end runs. `seed` has no default: a
/// config file must state it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Scene JSON; `None` selects the built-in scene of each run.
    #[serde(default)]
    pub scene: Option<PathBuf>,
    pub seed: u64,
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    #[serde(default = "default_hops")]
    pub max_hops: usize,
    #[serde(default = "default_true")]
    pub quantize: bool,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Overrides the run's propagation settings.
    #[serde(default)]
    pub propagation: Option<PropagationConfig>,
    #[serde(default)]
    pub copy: CopyRoles,
}

fn default_dataset_size() -> usize {
    1000
}
fn default_split() -> f64 {
    DEFAULT_TRAIN_FRACTION
}
fn default_hops() -> usize {
    DEFAULT_MAX_HOPS
}
fn default_true() -> bool {
    true
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ScenarioConfig {
    pub fn new(seed: u64, out: impl Into<PathBuf>) -> Self {
        ScenarioConfig {
            scene: None,
            seed,
            dataset_size: default_dataset_size(),
            split_fraction: default_split(),
            max_hops: default_hops(),
            quantize: true,
            out: out.into(),
            propagation: None,
            copy: CopyRoles::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path)?;
        let cfg: ScenarioConfig = serde_json::from_str(&text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ScenarioError> {
        if let Some(p) = &self.scene {
            if !p.is_file() {
                return Err(ScenarioError::Config(format!("scene file {} not found", p.display())));
            }
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(ScenarioError::Config(format!("split_fraction {} not in (0, 1)", self.split_fraction)));
        }
        if self.dataset_size == 0 {
            return Err(ScenarioError::Config("dataset_size must be at least 1".into()));
        }
        Ok(())
    }

    fn load_scene(&self) -> Result<Option<RoomScene>, ScenarioError> {
        Ok(match &self.scene {
            Some(p) => Some(RoomScene::load(p)?),
            None => None,
        })
    }
}

/// Generates the training corpus, writes it under `cfg.out` and splits it.
pub fn run_training_data(cfg: &ScenarioConfig) -> Result<DatasetManifest, ScenarioError> {
    cfg.check()?;
    let scene = cfg.load_scene()?.unwrap_or_else(training_scene);
    scene.validate()?;
    let prop = cfg.propagation.clone().unwrap_or_else(training_config);
    let mut data = generate_dataset(&scene, &prop, cfg.dataset_size, cfg.seed)?;
    data.manifest = split_dataset(&data.manifest, cfg.split_fraction, cfg.seed)?;
    write_dataset(&data, &cfg.out)?;
    Ok(data.manifest)
}

/// One-line summary of a manifest.
pub fn manifest_summary(m: &DatasetManifest) -> String {
    let split = match &m.split {
        Some(s) => format!("{} train / {} test", s.train.len(), s.test.len()),
        None => "unsplit".into(),
    };
    format!(
        "{} records, {}x{} readings at {:.3} GHz, {}x{} photos, seed {}, {split}, scene {}",
        m.count,
        m.array_rows,
        m.array_cols,
        m.frequency_hz / 1e9,
        m.photo_width,
        m.photo_height,
        m.seed,
        &m.scene_sha256[..12.min(m.scene_sha256.len())]
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyReport {
    pub route: Vec<String>,
    pub hops: usize,
    /// Summed edge length of the route, m.
    pub length_m: f64,
    pub fidelity_continuous: f64,
    /// Absent when quantization is switched off.
    pub fidelity_quantized: Option<f64>,
    pub seed: u64,
}

/// Routes the object's wavefront to the room-2 user, deploys the relay
/// and compares the original and replica array readings.
pub fn copy_fidelity(
    scene: &RoomScene,
    roles: &CopyRoles,
    prop: &PropagationConfig,
    max_hops: usize,
    quantize: bool,
) -> Result<CopyReport, ScenarioError> {
    let graph = build_graph(scene);
    let r = route(&graph, &roles.object, &roles.user, max_hops)?;
    let cmds = compile_route(&graph, &r)?;
    let array = |id: &str| scene.array(id).ok_or_else(|| ScenarioError::Config(format!("no array `{id}`")));
    let (a1, a2) = (array(&roles.origin_array)?, array(&roles.replica_array)?);
    if a1.elements.len() != a2.elements.len() {
        return Err(ScenarioError::Config("origin and replica arrays differ in size".into()));
    }
    let fidelity = |mode| -> Result<f64, ScenarioError> {
        let s = deploy_with(scene, &cmds, prop.k, mode)?;
        let f = array_reading(&s, prop, a1)?;
        let g = array_reading(&s, prop, a2)?;
        Ok(field_fidelity(&f.data, &g.data)?)
    };
    Ok(CopyReport {
        hops: r.hops(),
        length_m: r.length,
        fidelity_continuous: fidelity(DeployMode::Continuous)?,
        fidelity_quantized: if quantize { Some(fidelity(DeployMode::Quantized)?) } else { None },
        route: r.nodes,
        seed: 0,
    })
}

/// Outcome of a copy whose tile configuration traveled scrambled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrambledCopy {
    /// `field_fidelity` between the original and replica array readings.
    pub array_fidelity: f64,
    /// RMS field at the route's last focal point relative to the plainly
    /// deployed 2-bit route, clamped to `[0, 1]`.
    pub focal_fidelity: f64,
}

/// Copy quality when the 2-bit route configuration travels scrambled under
/// `key` and is descrambled with `descramble_key` before it reaches the
/// tiles. Matching keys reproduce the plain quantized deployment.
///
/// The array fidelity is a poor detector of a wrong key on its own: a
/// compact object's reading is close to a spherical wave, and the few
/// speckle grains a random-phase tile throws across the replica aperture
/// correlate with it by chance. The focal ratio shows the collapse.
pub fn scrambled_copy_fidelity(
    scene: &RoomScene,
    roles: &CopyRoles,
    prop: &PropagationConfig,
    max_hops: usize,
    key: u64,
    descramble_key: u64,
) -> Result<ScrambledCopy, ScenarioError> {
    let graph = build_graph(scene);
    let r = route(&graph, &roles.object, &roles.user, max_hops)?;
    let cmds = compile_route(&graph, &r)?;
    let plain = deploy_with(scene, &cmds, prop.k, DeployMode::Quantized)?;
    let mut deployed = plain.clone();
    for c in &cmds {
        let cb = scene.codebook(&scene.tile(&c.tile).expect("deployed tile").codebook).expect("deployed codebook").clone();
        let tile = deployed.tile_mut(&c.tile).expect("deployed tile");
        if let Some(TileConfig::States(states)) = &tile.config {
            let sent = scramble_config(states, &cb, key).map_err(PweError::from)?;
            tile.config = Some(TileConfig::States(descramble_config(&sent, &cb, descramble_key).map_err(PweError::from)?));
        }
    }
    let array = |id: &str| scene.array(id).ok_or_else(|| ScenarioError::Config(format!("no array `{id}`")));
    let f = array_reading(&deployed, prop, array(&roles.origin_array)?)?;
    let g = array_reading(&deployed, prop, array(&roles.replica_array)?)?;
    let focal = cmds
        .iter()
        .rev()
        .find_map(|c| match c.callback {
            Callback::Focus { focal, .. } => Some(focal),
            _ => None,
        })
        .ok_or_else(|| ScenarioError::Config("route has no FOCUS hop".into()))?;
    let at = |s: &RoomScene| -> Result<f64, ScenarioError> { Ok(compute_field(s, prop, &[focal])?[0].norm()) };
    let (got, want) = (at(&deployed)?, at(&plain)?);
    Ok(ScrambledCopy {
        array_fidelity: field_fidelity(&f.data, &g.data)?,
        focal_fidelity: if want > 0.0 { (got / want).min(1.0) } else { 0.0 },
    })
}

pub const COPY_REPORT_FILE: &str = "copy_report.json";

/// [`copy_fidelity`] on the configured scene (the canonical two-room scene
/// posed by `cfg.seed` when none is given); the report is also written to
/// `cfg.out`.
pub fn run_copy(cfg: &ScenarioConfig) -> Result<CopyReport, ScenarioError> {
    cfg.check()?;
    let (scene, roles) = match cfg.load_scene()? {
        Some(s) => (s, cfg.copy.clone()),
        None => (copy_scene(cfg.seed).scene, CopyRoles::default()),
    };
    scene.validate()?;
    let prop = cfg.propagation.clone().unwrap_or_else(copy_config);
    let mut report = copy_fidelity(&scene, &roles, &prop, cfg.max_hops, cfg.quantize)?;
    report.seed = cfg.seed;
    fs::create_dir_all(&cfg.out)?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    fs::write(cfg.out.join(COPY_REPORT_FILE), json)?;
    Ok(report)
}

/// PSNR/SSIM of one image pair. `psnr_db` is `+inf` for identical images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    /// `None` when every pair was identical (all PSNR infinite).
    pub psnr_db: Option<BoxStats>,
    pub ssim: BoxStats,
}

impl ScoreSummary {
    pub fn of(pairs: &[PairScore]) -> Result<Self, MetricsError> {
        let p: Vec<f64> = pairs.iter().map(|s| s.psnr_db).collect();
        let q: Vec<f64> = pairs.iter().map(|s| s.ssim).collect();
        let psnr_db = match summarize(&p) {
            Ok(b) => Some(b),
            Err(MetricsError::Empty) if !p.is_empty() => None,
            Err(e) => return Err(e),
        };
        Ok(ScoreSummary { psnr_db, ssim: summarize(&q)? })
    }

    fn psnr_median(&self) -> f64 {
        self.psnr_db.map_or(f64::INFINITY, |b| b.median)
    }
}

pub fn score_pair(name: impl Into<String>, real: &ImageU8, fake: &ImageU8) -> Result<PairScore, MetricsError> {
    Ok(PairScore { name: name.into(), psnr_db: psnr(real, fake)?, ssim: ssim(real, fake)? })
}

fn fmt_db(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else {
        format!("{x:.6}")
    }
}

/// Header shared by `metrics compare` and `evaluate` CSVs.
pub const SCORE_CSV_HEADER: &str = "name,psnr_db,ssim";

fn score_csv(pairs: &[PairScore], summary_rows: &[(&str, f64, f64)]) -> String {
    let mut out = String::from(SCORE_CSV_HEADER);
    out.push('\n');
    for p in pairs {
        let _ = writeln!(out, "{},{},{:.8}", p.name, fmt_db(p.psnr_db), p.ssim);
    }
    for (label, db, s) in summary_rows {
        let _ = writeln!(out, "{label},{},{s:.8}", fmt_db(*db));
    }
    out
}

/// Scores every PNG in `real_dir` against the file of the same name in
/// `fake_dir`, in name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pairs: Vec<PairScore>,
    pub summary: ScoreSummary,
}

impl Comparison {
    /// Per-pair rows plus one `median` row.
    pub fn to_csv(&self) -> String {
        score_csv(&self.pairs, &[("median", self.summary.psnr_median(), self.summary.ssim.median)])
    }
}

pub fn compare_dirs(real_dir: &Path, fake_dir: &Path) -> Result<Comparison, ScenarioError> {
    let mut names: Vec<String> = fs::read_dir(real_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    let mut pairs = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let fake = fake_dir.join(name);
        if !fake.is_file() {
            return Err(ScenarioError::IndexMismatch { index: i, path: fake });
        }
        let a = ImageU8::read_png(real_dir.join(name))?;
        let b = ImageU8::read_png(&fake)?;
        pairs.push(score_pair(name.clone(), &a, &b)?);
    }
    let summary = ScoreSummary::of(&pairs)?;
    Ok(Comparison { pairs, summary })
}

/// Test-split reconstructions scored against the ground-truth L photos,
/// plus a shuffled-pairing baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub pairs: Vec<PairScore>,
    pub summary: ScoreSummary,
    /// Pair `i` scores fake `i` against real `σ(i)`, with `σ` a seeded
    /// derangement of the test indices.
    pub baseline: Vec<PairScore>,
    pub baseline_summary: ScoreSummary,
    pub seed: u64,
}

impl Evaluation {
    /// One row per test record, then `median` and `shuffled_median`.
    pub fn to_csv(&self) -> String {
        score_csv(
            &self.pairs,
            &[
                ("median", self.summary.psnr_median(), self.summary.ssim.median),
                ("shuffled_median", self.baseline_summary.psnr_median(), self.baseline_summary.ssim.median),
            ],
        )
    }
}

/// Where a reconstruction of record `index` lives: `{index}_L.png` directly
/// in `fake_dir`, or under its `photos/` like a dataset.
pub fn fake_image_path(fake_dir: &Path, index: usize) -> Option<PathBuf> {
    let flat = fake_dir.join(format!("{index}_{LEFT}.png"));
    if flat.is_file() {
        return Some(flat);
    }
    let nested = photo_path(fake_dir, index, LEFT);
    nested.is_file().then_some(nested)
}

/// A derangement of `0..n` (for `n ≥ 2`): shuffle, then send each entry to
/// its successor in the shuffled cycle.
pub fn shuffled_pairing(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut sigma = vec![0; n];
    for j in 0..n {
        sigma[order[j]] = order[(j + 1) % n];
    }
    sigma
}

pub const EVALUATION_CSV: &str = "evaluation.csv";
pub const EVALUATION_JSON: &str = "evaluation.json";

/// Scores the images in `fake_dir` against the test split of the dataset in
/// `data_dir`; `seed` drives the baseline pairing.
pub fn evaluate(data_dir: &Path, fake_dir: &Path, seed: u64) -> Result<Evaluation, ScenarioError> {
    let m = read_manifest(data_dir)?;
    let test = m.test_indices().ok_or_else(|| ScenarioError::NoSplit(data_dir.to_path_buf()))?.to_vec();
    let mut real = Vec::with_capacity(test.len());
    let mut fake = Vec::with_capacity(test.len());
    for &i in &test {
        let path = fake_image_path(fake_dir, i)
            .ok_or_else(|| ScenarioError::IndexMismatch { index: i, path: fake_dir.join(format!("{i}_{LEFT}.png")) })?;
        fake.push(ImageU8::read_png(path)?);
        real.push(ImageU8::read_png(photo_path(data_dir, i, LEFT))?);
    }
    let pairs = test
        .iter()
        .zip(real.iter().zip(&fake))
        .map(|(i, (a, b))| score_pair(i.to_string(), a, b))
        .collect::<Result<Vec<_>, _>>()?;
    let sigma = shuffled_pairing(test.len(), seed);
    let baseline = (0..test.len())
        .map(|j| score_pair(format!("{}~{}", test[j], test[sigma[j]]), &real[sigma[j]], &fake[j]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Evaluation {
        summary: ScoreSummary::of(&pairs)?,
        baseline_summary: ScoreSummary::of(&baseline)?,
        pairs,
        baseline,
        seed,
    })
}

/// [`evaluate`] against the dataset in `cfg.out`; writes the CSV and the
/// JSON boxplot statistics (where `null` PSNR means `+inf`) to `out_dir`.
pub fn run_evaluate(cfg: &ScenarioConfig, fake_dir: &Path, out_dir: &Path) -> Result<Evaluation, ScenarioError> {
    let ev = evaluate(&cfg.out, fake_dir, cfg.seed)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(EVALUATION_CSV), ev.to_csv())?;
    let mut json = serde_json::to_string_pretty(&ev).expect("evaluation serializes");
    json.push('\n');
    fs::write(out_dir.join(EVALUATION_JSON), json)?;
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::los_visible;

    #[test]
    fn training_scene_is_valid() {
        let s = training_scene();
        s.validate().unwrap();
        let src = s.sources[0].position;
        let arr = &s.arrays[0];
        assert!(arr.elements.iter().all(|&e| !los_visible(src, e, &s, &[])));
        assert!(los_visible(src, s.objects[0].pivot + Vec3::Z * 0.2, &s, &["chair"]));
    }

    #[test]
    fn copy_scene_is_valid_and_routes_through_the_relay() {
        let setup = copy_scene(COPY_SEED);
        setup.scene.validate().unwrap();
        let g = build_graph(&setup.scene);
        let r = route(&g, &setup.object, &setup.user, DEFAULT_MAX_HOPS).unwrap();
        assert_eq!(r.nodes, ["object", "relay", "user2"]);
    }

    #[test]
    fn replica_array_is_hidden_from_object_and_horns() {
        let setup = copy_scene(COPY_SEED);
        let s = &setup.scene;
        let a2 = s.array("a2").unwrap();
        let obj = s.object("object").unwrap();
        let mut emitters: Vec<Vec3> = s.sources.iter().map(|p| p.position).collect();
        emitters.extend(obj.rectangles.iter().map(|r| r.center));
        for &e in &a2.elements {
            for &p in &emitters {
                assert!(!los_visible(p, e, s, &["object"]), "{p:?} sees {e:?}");
            }
        }
    }

    #[test]
    fn relay_map_keeps_range_and_mirrors_the_axis() {
        let l = CopyLayout::default();
        let (p, q) = relay_points(&l);
        let t = l.tile_center;
        // A point on the object-to-tile axis lands on the tile-to-image axis.
        let e = p + (t - p).normalized() * 2.5;
        let m = relay_map(e, p, q, t, Vec3::Y);
        let expect = q + (q - t).normalized() * 2.5;
        assert!(m.distance(expect) < 1e-12);
        let off = e + Vec3::Z * 0.1;
        let m = relay_map(off, p, q, t, Vec3::Y);
        assert!((m.distance(q) - off.distance(p)).abs() < 1e-12);
        // The chief ray turns at the tile plane, so heights flip sign.
        assert!(m.z < q.z);
    }

    #[test]
    fn scene_without_tiles_has_no_route() {
        let mut scene = copy_scene(COPY_SEED).scene;
        scene.tiles.clear();
        let err = copy_fidelity(&scene, &CopyRoles::default(), &copy_config(), DEFAULT_MAX_HOPS, true).unwrap_err();
        assert!(matches!(err, ScenarioError::Pwe(PweError::NoRoute(..))), "{err}");
        assert_eq!(err.exit_code(), exit::NO_ROUTE);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            ScenarioError::Pwe(PweError::NoRoute("a".into(), "b".into())).exit_code(),
            ScenarioError::Pwe(PweError::Infeasible).exit_code(),
            ScenarioError::Io(std::io::Error::other("x")).exit_code(),
            ScenarioError::Config("x".into()).exit_code(),
            ScenarioError::Em(EmError::ZeroDistance).exit_code(),
        ];
        assert_eq!(codes, [exit::NO_ROUTE, exit::INFEASIBLE, exit::IO, exit::VALIDATION, exit::FAILURE]);
    }

    #[test]
    fn config_requires_a_seed() {
        assert!(serde_json::from_str::<ScenarioConfig>(r#"{"out":"x"}"#).is_err());
        let c: ScenarioConfig = serde_json::from_str(r#"{"seed":7}"#).unwrap();
        assert_eq!(c, ScenarioConfig::new(7, "out"));
        let mut bad = c.clone();
        bad.split_fraction = 1.0;
        assert_eq!(bad.check().unwrap_err().exit_code(), exit::VALIDATION);
    }

    fn small_dataset(n: usize) -> (tempfile::TempDir, DatasetManifest) {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ScenarioConfig::new(5, dir.path());
        cfg.dataset_size = n;
        cfg.split_fraction = 0.5;
        let m = run_training_data(&cfg).unwrap();
        (dir, m)
    }

    #[test]
    fn training_run_writes_split_dataset() {
        let (dir, m) = small_dataset(4);
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        assert_eq!(m.test_indices().unwrap().len(), 2);
        assert!(manifest_summary(&m).starts_with("4 records, 10x10 readings at 5.000 GHz"));
    }

    #[test]
    fn evaluating_the_truth_is_perfect_and_beats_the_shuffle() {
        let (dir, m) = small_dataset(12);
        let ev = evaluate(dir.path(), dir.path(), 3).unwrap();
        assert_eq!(ev.pairs.len(), m.test_indices().unwrap().len());
        assert!(ev.pairs.iter().all(|p| p.psnr_db == f64::INFINITY && (p.ssim - 1.0).abs() < 1e-12));
        assert!(ev.summary.psnr_db.is_none());
        assert!(ev.baseline_summary.ssim.median < ev.summary.ssim.median);
        let csv = ev.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SCORE_CSV_HEADER);
        assert_eq!(lines.len(), 1 + ev.pairs.len() + 2);
        assert!(lines[lines.len() - 2].starts_with("median,inf,1.0"));
    }

    #[test]
    fn missing_reconstruction_is_an_index_mismatch() {
        let (dir, _) = small_dataset(4);
        let empty = tempfile::tempdir().unwrap();
        let err = evaluate(dir.path(), empty.path(), 1).unwrap_err();
        assert!(matches!(err, ScenarioError::IndexMismatch { .. }), "{err}");
        let unsplit = tempfile::tempdir().unwrap();
        let mut m = read_manifest(dir.path()).unwrap();
        m.split = None;
        crate::dataset::write_manifest(unsplit.path(), &m).unwrap();
        assert!(matches!(evaluate(unsplit.path(), dir.path(), 1), Err(ScenarioError::NoSplit(_))));
    }

    #[test]
    fn compare_pairs_files_by_name() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let img = ImageU8::filled(16, 16, [10, 20, 30]);
        for name in ["x.png", "y.png"] {
            img.write_png(a.path().join(name)).unwrap();
            img.map(|v| v + 1).write_png(b.path().join(name)).unwrap();
        }
        let c = compare_dirs(a.path(), b.path()).unwrap();
        assert_eq!(c.pairs.len(), 2);
        assert!((c.pairs[0].psnr_db - 48.1308).abs() < 1e-3);
        assert_eq!(c.to_csv().lines().count(), 4);
        fs::remove_file(b.path().join("y.png")).unwrap();
        assert!(matches!(compare_dirs(a.path(), b.path()), Err(ScenarioError::IndexMismatch { .. })));
    }

    proptest::proptest! {
        #[test]
        fn shuffled_pairing_is_a_derangement(n in 2usize..200, seed: u64) {
            let s = shuffled_pairing(n, seed);
            let mut seen = vec![false; n];
            for (i, &j) in s.iter().enumerate() {
                proptest::prop_assert_ne!(i, j);
                proptest::prop_assert!(!seen[j]);
                seen[j] = true;
            }
        }
    }
}
