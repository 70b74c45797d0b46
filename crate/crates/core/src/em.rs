//! Time-harmonic scalar field propagation.
//!
//! Phasors follow the `e^{-jkr}` convention. Point sources radiate through
//! the free-space kernel `e^{-jkr} / (4πr)`. Reflecting surfaces are split
//! into small patches that re-radiate as Huygens sources with the
//! first Rayleigh-Sommerfeld weight
//!
//! ```text
//! E(q) = Σ_p A_p · (k ΔA_p / 2π) · max(cos χ_pq, 0) · e^{-jk r_pq} / r_pq
//! ```
//!
//! where `χ_pq` is measured from the side of the patch facing the
//! illumination. Multi-bounce paths are summed order by order up to the
//! configured bounce count. Every hop is gated by line of sight.

use crate::geometry::Vec3;
use crate::scene::{Material, Occluders, ReceiveArray, Rectangle, RoomScene, DEFAULT_FREQUENCY_HZ};
use crate::sdm::SdmError;
use crate::SPEED_OF_LIGHT;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Distances at or below this are treated as coincident, meters.
pub const MIN_DISTANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EmError {
    #[error("evaluation point coincides with a source (r <= 1e-12 m)")]
    ZeroDistance,
    #[error("tile `{0}` has no deployed configuration")]
    ConfigUnresolved(String),
    #[error("tile `{0}` references unknown codebook `{1}`")]
    UnknownCodebook(String, String),
    #[error(transparent)]
    Sdm(#[from] SdmError),
}

pub fn wavenumber(frequency_hz: f64) -> f64 {
    2.0 * PI * frequency_hz / SPEED_OF_LIGHT
}

pub fn wavelength(frequency_hz: f64) -> f64 {
    SPEED_OF_LIGHT / frequency_hz
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    /// Wavenumber, rad/m.
    pub k: f64,
    pub max_bounce: usize,
    /// Target patch side for discretizing reflectors, meters. λ/8 by
    /// default: at λ/4 centimeter plates lit off-specular are badly
    /// under-resolved.
    pub patch_side: f64,
    /// Reflection coefficient applied to absorber-material walls.
    pub wall_reflectivity: Complex64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self::at_frequency(DEFAULT_FREQUENCY_HZ)
    }
}

impl PropagationConfig {
    pub fn at_frequency(frequency_hz: f64) -> Self {
        PropagationConfig {
            k: wavenumber(frequency_hz),
            max_bounce: 3,
            patch_side: wavelength(frequency_hz) / 8.0,
            wall_reflectivity: Complex64::default(),
        }
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * PI / self.k
    }
}

/// Discretized Huygens secondary source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSource {
    pub position: Vec3,
    pub normal: Vec3,
    pub area: f64,
    pub amplitude: Complex64,
}

/// `e^{-jkr} / (4πr)`.
pub fn green(r: f64, k: f64) -> Result<Complex64, EmError> {
    if r <= MIN_DISTANCE {
        return Err(EmError::ZeroDistance);
    }
    Ok(Complex64::from_polar(1.0 / (4.0 * PI * r), -k * r))
}

/// Number of cells needed to cover `extent` with cells no longer than
/// `target`. Guards against `ceil` rounding up on exact multiples.
fn cells_for(extent: f64, target: f64) -> usize {
    ((extent / target) - 1e-9).ceil().max(1.0) as usize
}

/// Uniform grid of patches tiling `rect` exactly, with sides no longer than
/// `target_side`. Amplitudes start at zero.
pub fn discretize_rectangle(rect: &Rectangle, target_side: f64) -> Vec<PatchSource> {
    let nu = cells_for(2.0 * rect.hu, target_side);
    let nv = cells_for(2.0 * rect.hv, target_side);
    let (du, dv) = (2.0 * rect.hu / nu as f64, 2.0 * rect.hv / nv as f64);
    let area = du * dv;
    let mut out = Vec::with_capacity(nu * nv);
    for iv in 0..nv {
        for iu in 0..nu {
            let su = -rect.hu + (iu as f64 + 0.5) * du;
            let sv = -rect.hv + (iv as f64 + 0.5) * dv;
            out.push(PatchSource {
                position: rect.center + rect.u * su + rect.v * sv,
                normal: rect.normal,
                area,
                amplitude: Complex64::default(),
            });
        }
    }
    out
}

#[inline]
fn patch_kernel(position: Vec3, normal: Vec3, area: f64, q: Vec3, k: f64) -> Result<Complex64, EmError> {
    let d = q - position;
    let r = d.norm();
    if r <= MIN_DISTANCE {
        return Err(EmError::ZeroDistance);
    }
    let cos = normal.dot(d) / r;
    if cos <= 0.0 {
        return Ok(Complex64::default());
    }
    Ok(Complex64::from_polar(k * area / (2.0 * PI) * cos / r, -k * r))
}

/// Field of a set of patches at each point (no occlusion).
pub fn radiate(patches: &[PatchSource], points: &[Vec3], k: f64) -> Result<Vec<Complex64>, EmError> {
    points
        .par_iter()
        .map(|&q| {
            patches.iter().try_fold(Complex64::default(), |acc, p| {
                Ok(acc + p.amplitude * patch_kernel(p.position, p.normal, p.area, q, k)?)
            })
        })
        .collect()
}

fn source_sum(
    sources: &[crate::scene::PointSource],
    q: Vec3,
    k: f64,
    occ: &Occluders,
    exclude: &[&str],
) -> Result<Complex64, EmError> {
    sources.iter().try_fold(Complex64::default(), |acc, s| {
        let g = green(s.position.distance(q), k)?;
        Ok(if occ.visible(s.position, q, exclude) { acc + s.amplitude * g } else { acc })
    })
}

/// Direct illumination from point sources, zero where line of sight fails.
pub fn incident_field(
    sources: &[crate::scene::PointSource],
    points: &[Vec3],
    k: f64,
    scene: &RoomScene,
) -> Result<Vec<Complex64>, EmError> {
    let occ = scene.occluders();
    points.par_iter().map(|&q| source_sum(sources, q, k, &occ, &[])).collect()
}

/// A reflecting surface discretized into patches with one reflection
/// coefficient per patch.
#[derive(Debug, Clone)]
pub struct Scatterer {
    /// Occluder id of the surface, excluded from its own visibility tests.
    pub owner: String,
    pub normal: Vec3,
    pub positions: Vec<Vec3>,
    pub area: Vec<f64>,
    pub gamma: Vec<Complex64>,
    /// Two-sided surfaces (PEC plates) re-radiate on whichever side is lit;
    /// one-sided surfaces (tiles) only respond to front illumination.
    pub two_sided: bool,
}

/// Field impinging on a scatterer, split by the side it arrives from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceField {
    pub front: Vec<Complex64>,
    pub back: Vec<Complex64>,
}

impl SurfaceField {
    fn zeros(n: usize) -> Self {
        SurfaceField { front: vec![Complex64::default(); n], back: vec![Complex64::default(); n] }
    }

    fn add(&mut self, other: &SurfaceField) {
        for (a, b) in self.front.iter_mut().zip(&other.front) {
            *a += b;
        }
        for (a, b) in self.back.iter_mut().zip(&other.back) {
            *a += b;
        }
    }

    /// Front plus back, the total incident field per patch.
    pub fn total(&self) -> Vec<Complex64> {
        self.front.iter().zip(&self.back).map(|(a, b)| a + b).collect()
    }
}

impl Scatterer {
    fn len(&self) -> usize {
        self.positions.len()
    }

    fn from_rect(owner: String, rect: &Rectangle, side: f64, gamma: Complex64) -> Scatterer {
        let patches = discretize_rectangle(rect, side);
        Scatterer {
            owner,
            normal: rect.normal,
            area: patches.iter().map(|p| p.area).collect(),
            positions: patches.iter().map(|p| p.position).collect(),
            gamma: vec![gamma; patches.len()],
            two_sided: true,
        }
    }

    /// Departing secondary sources for the given impinging field.
    pub fn departing(&self, incoming: &SurfaceField) -> Vec<PatchSource> {
        let mut out = Vec::with_capacity(2 * self.len());
        for i in 0..self.len() {
            let g = self.gamma[i];
            if g == Complex64::default() {
                continue;
            }
            out.push(PatchSource {
                position: self.positions[i],
                normal: self.normal,
                area: self.area[i],
                amplitude: g * incoming.front[i],
            });
            if self.two_sided {
                out.push(PatchSource {
                    position: self.positions[i],
                    normal: -self.normal,
                    area: self.area[i],
                    amplitude: g * incoming.back[i],
                });
            }
        }
        out
    }
}

/// Collects every reflecting surface of a scene with its reflection
/// coefficients. Fails if a tile has not been deployed.
pub fn scatterers(scene: &RoomScene, cfg: &PropagationConfig) -> Result<Vec<Scatterer>, EmError> {
    let mut out = Vec::new();
    for obj in &scene.objects {
        for (i, r) in obj.rectangles.iter().enumerate() {
            out.push(Scatterer::from_rect(obj.rectangle_id(i), r, cfg.patch_side, Complex64::new(-1.0, 0.0)));
        }
    }
    for w in &scene.walls {
        let gamma = match w.rect.material {
            Material::Pec => Complex64::new(-1.0, 0.0),
            _ => cfg.wall_reflectivity,
        };
        if gamma != Complex64::default() {
            out.push(Scatterer::from_rect(w.id.clone(), &w.rect, cfg.patch_side, gamma));
        }
    }
    for t in &scene.tiles {
        let config = t.config.as_ref().ok_or_else(|| EmError::ConfigUnresolved(t.id.clone()))?;
        let cb = scene
            .codebook(&t.codebook)
            .ok_or_else(|| EmError::UnknownCodebook(t.id.clone(), t.codebook.clone()))?;
        let gamma = config.gammas(cb);
        if gamma.iter().all(|g| *g == Complex64::default()) {
            continue;
        }
        out.push(Scatterer {
            owner: t.id.clone(),
            normal: t.normal(),
            positions: t.cell_positions(),
            area: vec![t.cell_area(); t.cell_count()],
            gamma,
            two_sided: false,
        });
    }
    Ok(out)
}

/// Field at `target` from the departing patches of `from`, split by the
/// side of `target_normal` it arrives on.
fn hop(
    from: &[PatchSource],
    from_owner: &str,
    target: Vec3,
    target_owner: &str,
    target_normal: Vec3,
    k: f64,
    occ: &Occluders,
) -> Result<(Complex64, Complex64), EmError> {
    let mut front = Complex64::default();
    let mut back = Complex64::default();
    for p in from {
        if p.amplitude == Complex64::default() {
            continue;
        }
        let kern = patch_kernel(p.position, p.normal, p.area, target, k)?;
        if kern == Complex64::default() || !occ.visible(p.position, target, &[from_owner, target_owner]) {
            continue;
        }
        if target_normal.dot(p.position - target) >= 0.0 {
            front += p.amplitude * kern;
        } else {
            back += p.amplitude * kern;
        }
    }
    Ok((front, back))
}

/// Per-order impinging fields on every scatterer. Entry `b` holds the field
/// delivered by paths with exactly `b` prior reflections.
fn bounce_orders(
    scene: &RoomScene,
    cfg: &PropagationConfig,
    scat: &[Scatterer],
    occ: &Occluders,
) -> Result<Vec<Vec<SurfaceField>>, EmError> {
    let k = cfg.k;
    let first: Vec<SurfaceField> = scat
        .iter()
        .map(|s| {
            let pairs: Vec<(Complex64, Complex64)> = s
                .positions
                .par_iter()
                .map(|&q| {
                    let mut front = Complex64::default();
                    let mut back = Complex64::default();
                    for src in &scene.sources {
                        let g = green(src.position.distance(q), k)?;
                        if !occ.visible(src.position, q, &[&s.owner]) {
                            continue;
                        }
                        if s.normal.dot(src.position - q) >= 0.0 {
                            front += src.amplitude * g;
                        } else {
                            back += src.amplitude * g;
                        }
                    }
                    Ok((front, back))
                })
                .collect::<Result<_, EmError>>()?;
            Ok(SurfaceField {
                front: pairs.iter().map(|p| p.0).collect(),
                back: pairs.iter().map(|p| p.1).collect(),
            })
        })
        .collect::<Result<_, EmError>>()?;
    let mut orders = vec![first];
    for _ in 1..cfg.max_bounce {
        let prev = orders.last().expect("non-empty");
        let departing: Vec<Vec<PatchSource>> = scat.iter().zip(prev).map(|(s, f)| s.departing(f)).collect();
        let next: Vec<SurfaceField> = scat
            .iter()
            .enumerate()
            .map(|(ti, t)| {
                let pairs: Vec<(Complex64, Complex64)> = t
                    .positions
                    .par_iter()
                    .map(|&q| {
                        let mut acc = (Complex64::default(), Complex64::default());
                        for (si, s) in scat.iter().enumerate() {
                            if si == ti {
                                continue;
                            }
                            let (f, b) = hop(&departing[si], &s.owner, q, &t.owner, t.normal, k, occ)?;
                            acc.0 += f;
                            acc.1 += b;
                        }
                        Ok(acc)
                    })
                    .collect::<Result<_, EmError>>()?;
                Ok(SurfaceField {
                    front: pairs.iter().map(|p| p.0).collect(),
                    back: pairs.iter().map(|p| p.1).collect(),
                })
            })
            .collect::<Result<_, EmError>>()?;
        orders.push(next);
    }
    Ok(orders)
}

/// Total impinging field on every scatterer, summed over all bounce orders
/// below the configured maximum.
pub fn surface_fields(scene: &RoomScene, cfg: &PropagationConfig) -> Result<(Vec<Scatterer>, Vec<SurfaceField>), EmError> {
    let scat = scatterers(scene, cfg)?;
    let occ = scene.occluders();
    let orders = bounce_orders(scene, cfg, &scat, &occ)?;
    let mut totals: Vec<SurfaceField> = scat.iter().map(|s| SurfaceField::zeros(s.len())).collect();
    for order in &orders {
        for (t, f) in totals.iter_mut().zip(order) {
            t.add(f);
        }
    }
    Ok((scat, totals))
}

/// Field at each point: direct illumination plus every reflection sequence
/// of up to `max_bounce` scatterers.
pub fn compute_field(scene: &RoomScene, cfg: &PropagationConfig, points: &[Vec3]) -> Result<Vec<Complex64>, EmError> {
    let occ = scene.occluders();
    let scat = scatterers(scene, cfg)?;
    let orders = if cfg.max_bounce == 0 || scat.is_empty() {
        Vec::new()
    } else {
        bounce_orders(scene, cfg, &scat, &occ)?
    };
    let departing: Vec<(String, Vec<PatchSource>)> = orders
        .iter()
        .flat_map(|order| scat.iter().zip(order).map(|(s, f)| (s.owner.clone(), s.departing(f))))
        .collect();
    points
        .par_iter()
        .map(|&q| {
            let mut e = source_sum(&scene.sources, q, cfg.k, &occ, &[])?;
            for (owner, patches) in &departing {
                for p in patches {
                    if p.amplitude == Complex64::default() {
                        continue;
                    }
                    let kern = patch_kernel(p.position, p.normal, p.area, q, cfg.k)?;
                    if kern != Complex64::default() && occ.visible(p.position, q, &[owner]) {
                        e += p.amplitude * kern;
                    }
                }
            }
            Ok(e)
        })
        .collect()
}

/// Complex samples of a receive array, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfReading {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl RfReading {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(rows * cols, data.len(), "reading shape mismatch");
        RfReading { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![Complex64::default(); rows * cols])
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

pub fn array_reading(scene: &RoomScene, cfg: &PropagationConfig, array: &ReceiveArray) -> Result<RfReading, EmError> {
    let data = compute_field(scene, cfg, &array.elements)?;
    Ok(RfReading::new(array.rows, array.cols, data))
}

/// Radiates patches to points with line-of-sight gating in `scene`.
/// `owners` names the occluder each patch belongs to (excluded from its own
/// visibility tests).
pub fn radiate_in_scene(
    scene: &RoomScene,
    owners: &[&str],
    patches: &[PatchSource],
    points: &[Vec3],
    k: f64,
) -> Result<Vec<Complex64>, EmError> {
    assert_eq!(owners.len(), patches.len());
    let occ = scene.occluders();
    points
        .par_iter()
        .map(|&q| {
            let mut e = Complex64::default();
            for (p, owner) in patches.iter().zip(owners) {
                if p.amplitude == Complex64::default() {
                    continue;
                }
                let kern = patch_kernel(p.position, p.normal, p.area, q, k)?;
                if kern != Complex64::default() && occ.visible(p.position, q, &[owner]) {
                    e += p.amplitude * kern;
                }
            }
            Ok(e)
        })
        .collect()
}
