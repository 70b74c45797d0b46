//! Room geometry: walls, reflector objects, sources, receive arrays and
//! cameras, plus line-of-sight queries and flat-shaded reference photos.
//!
//! Every scene value is immutable once built; operations return new values.

use crate::geometry::{EulerAngles, Rotation, Vec3};
use crate::metrics::ImageU8;
use crate::sdm::{Codebook, SdmTile};
use crate::SPEED_OF_LIGHT;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

/// Geometric tolerance for occlusion and validation, meters.
pub const GEOM_TOL: f64 = 1e-9;

/// Default carrier frequency, Hz.
pub const DEFAULT_FREQUENCY_HZ: f64 = 5e9;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("camera look-at coincides with its position or is parallel to its up vector")]
    DegenerateCamera,
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("rectangles `{0}` and `{1}` interpenetrate")]
    Interpenetration(String, String),
    #[error("scene io: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    /// Perfect electric conductor, reflection coefficient -1.
    Pec,
    #[default]
    Absorber,
    /// Placement of the SDM tile with this id.
    Sdm(String),
}

/// Oriented planar rectangle. `u`, `v` and `normal` form a right-handed
/// orthonormal frame (`normal = u x v`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub center: Vec3,
    pub normal: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub hu: f64,
    pub hv: f64,
    #[serde(default)]
    pub material: Material,
}

impl Rectangle {
    /// Builds a rectangle from its normal and first in-plane axis; `v` is
    /// completed as `normal x u`. Both inputs are normalized, and `u` is
    /// orthogonalized against the normal.
    pub fn new(center: Vec3, normal: Vec3, u: Vec3, hu: f64, hv: f64, material: Material) -> Self {
        let normal = normal.normalized();
        let u = (u - normal * u.dot(normal)).normalized();
        let v = normal.cross(u);
        Rectangle { center, normal, u, v, hu, hv, material }
    }

    pub fn area(&self) -> f64 {
        4.0 * self.hu * self.hv
    }

    pub fn corners(&self) -> [Vec3; 4] {
        let a = self.u * self.hu;
        let b = self.v * self.hv;
        [
            self.center - a - b,
            self.center + a - b,
            self.center + a + b,
            self.center - a + b,
        ]
    }

    /// Local in-plane coordinates of a point.
    pub fn local(&self, p: Vec3) -> (f64, f64) {
        let d = p - self.center;
        (d.dot(self.u), d.dot(self.v))
    }

    pub fn validate(&self, label: &str) -> Result<(), SceneError> {
        let finite = self.center.is_finite()
            && self.normal.is_finite()
            && self.u.is_finite()
            && self.v.is_finite()
            && self.hu.is_finite()
            && self.hv.is_finite();
        if !finite {
            return Err(SceneError::Invalid(format!("{label}: non-finite geometry")));
        }
        if self.hu <= 0.0 || self.hv <= 0.0 {
            return Err(SceneError::Invalid(format!("{label}: half-extents must be positive")));
        }
        let ortho = [
            (self.normal.norm() - 1.0).abs(),
            (self.u.norm() - 1.0).abs(),
            (self.v.norm() - 1.0).abs(),
            self.normal.dot(self.u).abs(),
            self.normal.dot(self.v).abs(),
            self.u.dot(self.v).abs(),
        ];
        if ortho.iter().any(|&e| e > 1e-9) {
            return Err(SceneError::Invalid(format!("{label}: axes are not orthonormal")));
        }
        Ok(())
    }

    /// Whether the open segment `p`-`q` touches this rectangle. Grazing
    /// contacts within [`GEOM_TOL`] count as blocking.
    pub fn blocks_segment(&self, p: Vec3, q: Vec3) -> bool {
        let d = q - p;
        let len = d.norm();
        if len <= GEOM_TOL {
            return false;
        }
        let sp = self.normal.dot(p - self.center);
        let sq = self.normal.dot(q - self.center);
        if sp.abs() <= GEOM_TOL && sq.abs() <= GEOM_TOL {
            let (pu, pv) = self.local(p);
            let (qu, qv) = self.local(q);
            return segment_hits_box_2d((pu, pv), (qu, qv), self.hu + GEOM_TOL, self.hv + GEOM_TOL);
        }
        if (sp > GEOM_TOL && sq > GEOM_TOL) || (sp < -GEOM_TOL && sq < -GEOM_TOL) {
            return false;
        }
        let t = sp / (sp - sq);
        if t * len <= GEOM_TOL || (1.0 - t) * len <= GEOM_TOL {
            return false;
        }
        let (lu, lv) = self.local(p + d * t);
        lu.abs() <= self.hu + GEOM_TOL && lv.abs() <= self.hv + GEOM_TOL
    }

    /// Distance along a ray to the rectangle, if hit in front of the origin.
    pub fn ray_hit(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let dn = self.normal.dot(dir);
        if dn.abs() < 1e-15 {
            return None;
        }
        let t = self.normal.dot(self.center - origin) / dn;
        if t <= 0.0 {
            return None;
        }
        let (lu, lv) = self.local(origin + dir * t);
        (lu.abs() <= self.hu && lv.abs() <= self.hv).then_some(t)
    }

    pub fn transformed(&self, rot: &Rotation, pivot: Vec3) -> Rectangle {
        Rectangle {
            center: pivot + rot.apply(self.center - pivot),
            normal: rot.apply(self.normal),
            u: rot.apply(self.u),
            v: rot.apply(self.v),
            hu: self.hu,
            hv: self.hv,
            material: self.material.clone(),
        }
    }
}

/// Liang-Barsky style clip of a 2D segment against `[-hu,hu] x [-hv,hv]`.
fn segment_hits_box_2d(a: (f64, f64), b: (f64, f64), hu: f64, hv: f64) -> bool {
    clip_segment_2d(a, b, hu, hv).is_some()
}

fn clip_segment_2d(a: (f64, f64), b: (f64, f64), hu: f64, hv: f64) -> Option<(f64, f64)> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    for (p, q) in [(-dx, a.0 + hu), (dx, hu - a.0), (-dy, a.1 + hv), (dy, hv - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub id: String,
    #[serde(flatten)]
    pub rect: Rectangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub id: String,
    pub position: Vec3,
    /// Complex amplitude, serialized as `[re, im]`.
    #[serde(default = "unit_amplitude")]
    pub amplitude: Complex64,
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
}

fn unit_amplitude() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

fn default_frequency() -> f64 {
    DEFAULT_FREQUENCY_HZ
}

impl PointSource {
    pub fn new(id: impl Into<String>, position: Vec3, amplitude: Complex64) -> Self {
        PointSource { id: id.into(), position, amplitude, frequency_hz: DEFAULT_FREQUENCY_HZ }
    }
}

/// Receive (or re-transmit) antenna array. Elements are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiveArray {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    pub elements: Vec<Vec3>,
}

impl ReceiveArray {
    /// Regular planar grid centered on `center`. Column index runs along `u`,
    /// row index along `v`.
    pub fn planar(
        id: impl Into<String>,
        center: Vec3,
        u: Vec3,
        v: Vec3,
        rows: usize,
        cols: usize,
        spacing: f64,
    ) -> Self {
        let (u, v) = (u.normalized(), v.normalized());
        let mut elements = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let du = (c as f64 - (cols as f64 - 1.0) / 2.0) * spacing;
                let dv = (r as f64 - (rows as f64 - 1.0) / 2.0) * spacing;
                elements.push(center + u * du + v * dv);
            }
        }
        ReceiveArray { id: id.into(), rows, cols, elements }
    }

    /// Default 10x10 array at half-wavelength spacing for 5 GHz.
    pub fn default_at(id: impl Into<String>, center: Vec3, u: Vec3, v: Vec3) -> Self {
        let lambda = SPEED_OF_LIGHT / DEFAULT_FREQUENCY_HZ;
        Self::planar(id, center, u, v, 10, 10, lambda / 2.0)
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.elements.iter().fold(Vec3::ZERO, |acc, &e| acc + e);
        sum / self.elements.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: String,
    pub position: Vec3,
    pub look_at: Vec3,
    #[serde(default = "default_up")]
    pub up: Vec3,
    /// Horizontal field of view, radians.
    pub hfov: f64,
    #[serde(default = "default_image_side")]
    pub width: usize,
    #[serde(default = "default_image_side")]
    pub height: usize,
}

fn default_up() -> Vec3 {
    Vec3::Z
}

fn default_image_side() -> usize {
    64
}

/// Rigid set of PEC rectangles rotated about a pivot.
///
/// `rectangles` hold the current world-space geometry; `rotation` records
/// the orientation relative to the authored pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectorObject {
    pub id: String,
    pub pivot: Vec3,
    #[serde(default)]
    pub rotation: EulerAngles,
    pub rectangles: Vec<Rectangle>,
    /// Palette index per rectangle.
    pub colors: Vec<u8>,
}

impl ReflectorObject {
    pub fn rectangle_id(&self, index: usize) -> String {
        format!("{}/{}", self.id, index)
    }
}

/// A named user location, used as a routing endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub id: String,
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RoomScene {
    #[serde(default)]
    pub walls: Vec<Wall>,
    #[serde(default)]
    pub tiles: Vec<SdmTile>,
    #[serde(default)]
    pub objects: Vec<ReflectorObject>,
    #[serde(default)]
    pub sources: Vec<PointSource>,
    #[serde(default)]
    pub arrays: Vec<ReceiveArray>,
    #[serde(default)]
    pub cameras: Vec<Camera>,
    #[serde(default)]
    pub endpoints: Vec<Endpoint>,
    #[serde(default = "Codebook::builtin_set")]
    pub codebooks: Vec<Codebook>,
}

impl RoomScene {
    pub fn new() -> Self {
        RoomScene { codebooks: Codebook::builtin_set(), ..Default::default() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path)?;
        let scene: RoomScene = serde_json::from_str(&text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SceneError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn tile(&self, id: &str) -> Option<&SdmTile> {
        self.tiles.iter().find(|t| t.id == id)
    }

    pub fn tile_mut(&mut self, id: &str) -> Option<&mut SdmTile> {
        self.tiles.iter_mut().find(|t| t.id == id)
    }

    pub fn codebook(&self, id: &str) -> Option<&Codebook> {
        self.codebooks.iter().find(|c| c.id == id)
    }

    pub fn array(&self, id: &str) -> Option<&ReceiveArray> {
        self.arrays.iter().find(|a| a.id == id)
    }

    pub fn object(&self, id: &str) -> Option<&ReflectorObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Every opaque rectangle in the scene with its id. Object rectangles
    /// are named `<object>/<index>`.
    pub fn rectangles(&self) -> Vec<(String, &Rectangle)> {
        let mut out: Vec<(String, &Rectangle)> = Vec::new();
        out.extend(self.walls.iter().map(|w| (w.id.clone(), &w.rect)));
        out.extend(self.tiles.iter().map(|t| (t.id.clone(), &t.placement)));
        for o in &self.objects {
            out.extend(o.rectangles.iter().enumerate().map(|(i, r)| (o.rectangle_id(i), r)));
        }
        out
    }

    pub fn occluders(&self) -> Occluders {
        Occluders {
            items: self
                .rectangles()
                .into_iter()
                .map(|(id, r)| (id, r.clone()))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let mut seen = HashSet::new();
        let ids = self
            .walls
            .iter()
            .map(|w| &w.id)
            .chain(self.tiles.iter().map(|t| &t.id))
            .chain(self.objects.iter().map(|o| &o.id))
            .chain(self.sources.iter().map(|s| &s.id))
            .chain(self.arrays.iter().map(|a| &a.id))
            .chain(self.cameras.iter().map(|c| &c.id))
            .chain(self.endpoints.iter().map(|e| &e.id));
        for id in ids {
            if !seen.insert(id.as_str()) {
                return Err(SceneError::DuplicateId(id.clone()));
            }
        }
        let mut seen_cb = HashSet::new();
        for cb in &self.codebooks {
            if !seen_cb.insert(cb.id.as_str()) {
                return Err(SceneError::DuplicateId(cb.id.clone()));
            }
            cb.validate().map_err(|e| SceneError::Invalid(e.to_string()))?;
        }
        for w in &self.walls {
            w.rect.validate(&w.id)?;
        }
        for t in &self.tiles {
            t.placement.validate(&t.id)?;
            t.validate().map_err(|e| SceneError::Invalid(format!("{}: {e}", t.id)))?;
            let cb = self
                .codebook(&t.codebook)
                .ok_or_else(|| SceneError::Invalid(format!("{}: unknown codebook `{}`", t.id, t.codebook)))?;
            if let Some(cfg) = &t.config {
                cfg.validate(t.cell_count(), cb)
                    .map_err(|e| SceneError::Invalid(format!("{}: {e}", t.id)))?;
            }
        }
        for o in &self.objects {
            if o.colors.len() != o.rectangles.len() {
                return Err(SceneError::Invalid(format!("{}: one color per rectangle", o.id)));
            }
            if !o.pivot.is_finite() || !o.rotation.is_finite() {
                return Err(SceneError::Invalid(format!("{}: non-finite pose", o.id)));
            }
            for (i, r) in o.rectangles.iter().enumerate() {
                r.validate(&o.rectangle_id(i))?;
            }
        }
        for s in &self.sources {
            if !(s.frequency_hz > 0.0) || !s.position.is_finite() {
                return Err(SceneError::Invalid(format!("{}: bad source", s.id)));
            }
            if !(s.amplitude.re.is_finite() && s.amplitude.im.is_finite()) {
                return Err(SceneError::Invalid(format!("{}: non-finite amplitude", s.id)));
            }
        }
        for a in &self.arrays {
            if a.rows * a.cols != a.elements.len() || a.elements.is_empty() {
                return Err(SceneError::Invalid(format!("{}: rows x cols != element count", a.id)));
            }
            if a.elements.iter().any(|e| !e.is_finite()) {
                return Err(SceneError::Invalid(format!("{}: non-finite element", a.id)));
            }
        }
        for c in &self.cameras {
            if !(c.hfov > 0.0 && c.hfov < std::f64::consts::PI) || c.width == 0 || c.height == 0 {
                return Err(SceneError::Invalid(format!("{}: bad camera intrinsics", c.id)));
            }
            camera_basis(c)?;
        }
        let rects = self.rectangles();
        for i in 0..rects.len() {
            for j in i + 1..rects.len() {
                if rectangles_interpenetrate(rects[i].1, rects[j].1) {
                    return Err(SceneError::Interpenetration(rects[i].0.clone(), rects[j].0.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Precomputed occluder list for repeated line-of-sight queries.
#[derive(Debug, Clone)]
pub struct Occluders {
    items: Vec<(String, Rectangle)>,
}

impl Occluders {
    pub fn visible(&self, p: Vec3, q: Vec3, exclude: &[&str]) -> bool {
        self.items
            .iter()
            .filter(|(id, _)| !is_excluded(id, exclude))
            .all(|(_, r)| !r.blocks_segment(p, q))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// An exclusion entry matches a rectangle id exactly, or every rectangle of
/// an object (`obj` excludes `obj/0`, `obj/1`, ...).
fn is_excluded(id: &str, exclude: &[&str]) -> bool {
    exclude.iter().any(|e| {
        id == *e || (id.len() > e.len() && id.starts_with(e) && id.as_bytes()[e.len()] == b'/')
    })
}

/// True iff the open segment `p`-`q` crosses no rectangle of the scene other
/// than those excluded.
pub fn los_visible(p: Vec3, q: Vec3, scene: &RoomScene, exclude: &[&str]) -> bool {
    scene
        .rectangles()
        .into_iter()
        .filter(|(id, _)| !is_excluded(id, exclude))
        .all(|(_, r)| !r.blocks_segment(p, q))
}

/// Rotates every rectangle of `obj` rigidly about its pivot.
pub fn rotate_object(obj: &ReflectorObject, angles: EulerAngles) -> ReflectorObject {
    let rot = Rotation::from_euler(angles);
    let total = rot.compose(&Rotation::from_euler(obj.rotation));
    ReflectorObject {
        id: obj.id.clone(),
        pivot: obj.pivot,
        rotation: total.to_euler(),
        rectangles: obj.rectangles.iter().map(|r| r.transformed(&rot, obj.pivot)).collect(),
        colors: obj.colors.clone(),
    }
}

/// Interior overlap test between two rectangles, ignoring contact along
/// boundaries within [`GEOM_TOL`].
pub fn rectangles_interpenetrate(a: &Rectangle, b: &Rectangle) -> bool {
    let cross = a.normal.cross(b.normal);
    if cross.norm() < 1e-12 {
        // Parallel planes: only coplanar interiors can overlap.
        if a.normal.dot(b.center - a.center).abs() > GEOM_TOL {
            return false;
        }
        return coplanar_overlap(a, b);
    }
    // Line where b's plane meets a's plane, parametrized in b's local frame:
    // alpha*s + beta*t + gamma = 0.
    let alpha = a.normal.dot(b.u);
    let beta = a.normal.dot(b.v);
    let gamma = a.normal.dot(b.center - a.center);
    let (hu, hv) = (b.hu - GEOM_TOL, b.hv - GEOM_TOL);
    if hu <= 0.0 || hv <= 0.0 {
        return false;
    }
    // Pick two far points on the line and clip to b's shrunk interior.
    let norm = (alpha * alpha + beta * beta).sqrt();
    let (nx, ny) = (alpha / norm, beta / norm);
    let base = (-gamma * nx / norm, -gamma * ny / norm);
    let dir = (-ny, nx);
    let reach = 2.0 * (b.hu + b.hv) + 1.0;
    let p0 = (base.0 - dir.0 * reach, base.1 - dir.1 * reach);
    let p1 = (base.0 + dir.0 * reach, base.1 + dir.1 * reach);
    let Some((t0, t1)) = clip_segment_2d(p0, p1, hu, hv) else {
        return false;
    };
    let at = |t: f64| {
        let s = p0.0 + (p1.0 - p0.0) * t;
        let r = p0.1 + (p1.1 - p0.1) * t;
        b.center + b.u * s + b.v * r
    };
    let (w0, w1) = (at(t0), at(t1));
    let la = a.local(w0);
    let lb = a.local(w1);
    match clip_segment_2d(la, lb, a.hu - GEOM_TOL, a.hv - GEOM_TOL) {
        Some((s0, s1)) => (s1 - s0) * w0.distance(w1) > GEOM_TOL,
        None => false,
    }
}

fn coplanar_overlap(a: &Rectangle, b: &Rectangle) -> bool {
    // Separating axis test on the four in-plane axes, shrunk by tolerance.
    let axes = [a.u, a.v, b.u, b.v];
    let project = |r: &Rectangle, axis: Vec3| {
        let c = r.center.dot(axis);
        let e = r.hu * r.u.dot(axis).abs() + r.hv * r.v.dot(axis).abs();
        (c - e, c + e)
    };
    axes.iter().all(|&ax| {
        let (a0, a1) = project(a, ax);
        let (b0, b1) = project(b, ax);
        a1.min(b1) - a0.max(b0) > GEOM_TOL
    })
}

/// Fixed 8-entry RGB palette for flat-shaded reflectors.
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [128, 128, 0],
];

fn camera_basis(cam: &Camera) -> Result<(Vec3, Vec3, Vec3), SceneError> {
    let fwd = cam.look_at - cam.position;
    if fwd.norm() <= GEOM_TOL {
        return Err(SceneError::DegenerateCamera);
    }
    let fwd = fwd.normalized();
    let right = fwd.cross(cam.up);
    if right.norm() < 1e-12 {
        return Err(SceneError::DegenerateCamera);
    }
    let right = right.normalized();
    Ok((fwd, right, right.cross(fwd)))
}

/// Pinhole rendering of the scene's reflector rectangles on a white
/// background. Rectangles are painted far to near by center distance.
pub fn rasterize_view(scene: &RoomScene, cam: &Camera) -> Result<ImageU8, SceneError> {
    let (fwd, right, up) = camera_basis(cam)?;
    let mut img = ImageU8::filled(cam.height, cam.width, [255, 255, 255]);

    let mut rects: Vec<(f64, &Rectangle, [u8; 3])> = scene
        .objects
        .iter()
        .flat_map(|o| o.rectangles.iter().zip(&o.colors))
        .map(|(r, &c)| (r.center.distance(cam.position), r, PALETTE[c as usize % PALETTE.len()]))
        .collect();
    rects.sort_by(|a, b| b.0.total_cmp(&a.0));

    let tan_h = (cam.hfov / 2.0).tan();
    let tan_v = tan_h * cam.height as f64 / cam.width as f64;
    for py in 0..cam.height {
        let y = (1.0 - 2.0 * (py as f64 + 0.5) / cam.height as f64) * tan_v;
        for px in 0..cam.width {
            let x = (2.0 * (px as f64 + 0.5) / cam.width as f64 - 1.0) * tan_h;
            let dir = fwd + right * x + up * y;
            for (_, r, color) in &rects {
                if r.ray_hit(cam.position, dir).is_some() {
                    img.set(py, px, *color);
                }
            }
        }
    }
    Ok(img)
}
