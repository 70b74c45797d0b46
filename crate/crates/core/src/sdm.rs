//! Software-defined metasurface tiles: quantized unit cells, configuration
//! codebooks, and compilation of high-level callbacks (steer, split,
//! absorb, phase offset, focus) into per-cell states.
//!
//! Phase convention: fields propagate as `e^{-jkr}`, and a cell in state
//! `s` multiplies the field impinging on it by `Γ(s)`. A profile value `φ`
//! is the reflection phase a cell should apply.

use crate::em::PatchSource;
use crate::geometry::Vec3;
use crate::scene::{Material, Rectangle};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SdmError {
    #[error("direction or point lies behind the tile")]
    BacksideIncidence,
    #[error("unsupported callback: {0}")]
    UnsupportedCallback(String),
    #[error("tile `{0}` has no deployed configuration")]
    ConfigUnresolved(String),
    #[error("invalid codebook: {0}")]
    BadCodebook(String),
    #[error("expected {expected} cells, got {got}")]
    CellCount { expected: usize, got: usize },
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookState {
    pub index: usize,
    pub magnitude: f64,
    pub phase_deg: f64,
}

/// State table mapping a cell state index to its reflection coefficient.
/// States with zero magnitude are absorbing; the rest are phase states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub id: String,
    pub states: Vec<CodebookState>,
}

pub const DEFAULT_CODEBOOK: &str = "2bit";

impl Codebook {
    /// 0.9 e^{j m π/2} for m = 0..3, plus an absorbing state 4.
    pub fn two_bit() -> Self {
        let mut states: Vec<CodebookState> = (0..4)
            .map(|m| CodebookState { index: m, magnitude: 0.9, phase_deg: 90.0 * m as f64 })
            .collect();
        states.push(CodebookState { index: 4, magnitude: 0.0, phase_deg: 0.0 });
        Codebook { id: DEFAULT_CODEBOOK.into(), states }
    }

    pub fn builtin_set() -> Vec<Codebook> {
        vec![Self::two_bit()]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Box<dyn std::error::Error>> {
        let cb: Codebook = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cb.validate()?;
        Ok(cb)
    }

    pub fn validate(&self) -> Result<(), SdmError> {
        for (i, s) in self.states.iter().enumerate() {
            if s.index != i {
                return Err(SdmError::BadCodebook(format!("{}: state indices must be 0..n in order", self.id)));
            }
            if !(s.magnitude >= 0.0 && s.magnitude <= 1.0) || !s.phase_deg.is_finite() {
                return Err(SdmError::BadCodebook(format!("{}: state {i} violates |Γ| <= 1", self.id)));
            }
        }
        if self.states.is_empty() {
            return Err(SdmError::BadCodebook(format!("{}: no states", self.id)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn gamma(&self, state: usize) -> Complex64 {
        let s = &self.states[state];
        Complex64::from_polar(s.magnitude, s.phase_deg.to_radians())
    }

    pub fn phase_states(&self) -> impl Iterator<Item = &CodebookState> {
        self.states.iter().filter(|s| s.magnitude > 0.0)
    }

    pub fn absorb_state(&self) -> Option<usize> {
        self.states.iter().find(|s| s.magnitude == 0.0).map(|s| s.index)
    }

    /// Largest phase-state magnitude; used for ideal continuous deployments.
    pub fn phase_magnitude(&self) -> f64 {
        self.phase_states().map(|s| s.magnitude).fold(0.0, f64::max)
    }

    /// Number of levels if the phase states are `0..L` with equal magnitude
    /// and phases `360 m / L` degrees.
    pub fn cyclic_levels(&self) -> Option<usize> {
        let phase: Vec<&CodebookState> = self.phase_states().collect();
        let l = phase.len();
        if l < 2 {
            return None;
        }
        let ok = phase.iter().enumerate().all(|(m, s)| {
            s.index == m
                && (s.magnitude - phase[0].magnitude).abs() < 1e-12
                && wrap_phase((s.phase_deg - 360.0 * m as f64 / l as f64).to_radians()).abs() < 1e-9
        });
        ok.then_some(l)
    }
}

/// Per-cell configuration of a deployed tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileConfig {
    /// Codebook state per cell, row-major.
    States(Vec<usize>),
    /// Ideal unquantized reflection phases (radians) at a fixed magnitude.
    Continuous { phases: Vec<f64>, magnitude: f64 },
}

impl TileConfig {
    pub fn len(&self) -> usize {
        match self {
            TileConfig::States(s) => s.len(),
            TileConfig::Continuous { phases, .. } => phases.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gammas(&self, codebook: &Codebook) -> Vec<Complex64> {
        match self {
            TileConfig::States(s) => s.iter().map(|&i| codebook.gamma(i)).collect(),
            TileConfig::Continuous { phases, magnitude } => {
                phases.iter().map(|&p| Complex64::from_polar(*magnitude, p)).collect()
            }
        }
    }

    pub fn validate(&self, cells: usize, codebook: &Codebook) -> Result<(), SdmError> {
        if self.len() != cells {
            return Err(SdmError::CellCount { expected: cells, got: self.len() });
        }
        match self {
            TileConfig::States(s) if s.iter().any(|&i| i >= codebook.len()) => {
                Err(SdmError::BadCodebook("state index out of range".into()))
            }
            TileConfig::Continuous { magnitude, .. } if !(0.0..=1.0).contains(magnitude) => {
                Err(SdmError::BadCodebook("continuous magnitude must be in [0, 1]".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Metasurface tile: a `rows x cols` grid of unit cells on a placement
/// rectangle. Cell `(i, j)` has row-major index `i * cols + j`; columns run
/// along the placement's `u` axis and rows along `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdmTile {
    pub id: String,
    pub placement: Rectangle,
    pub rows: usize,
    pub cols: usize,
    pub pitch: f64,
    #[serde(default = "default_codebook_id")]
    pub codebook: String,
    /// `None` until deployed.
    #[serde(default)]
    pub config: Option<TileConfig>,
}

fn default_codebook_id() -> String {
    DEFAULT_CODEBOOK.into()
}

impl SdmTile {
    /// Tile whose placement rectangle exactly covers its cells.
    pub fn new(
        id: impl Into<String>,
        center: Vec3,
        normal: Vec3,
        u: Vec3,
        rows: usize,
        cols: usize,
        pitch: f64,
    ) -> Self {
        let id = id.into();
        let placement = Rectangle::new(
            center,
            normal,
            u,
            cols as f64 * pitch / 2.0,
            rows as f64 * pitch / 2.0,
            Material::Sdm(id.clone()),
        );
        SdmTile { id, placement, rows, cols, pitch, codebook: DEFAULT_CODEBOOK.into(), config: None }
    }

    /// 16x16 cells at half-wavelength pitch for 5 GHz.
    pub fn default_at(id: impl Into<String>, center: Vec3, normal: Vec3, u: Vec3) -> Self {
        let pitch = crate::SPEED_OF_LIGHT / crate::scene::DEFAULT_FREQUENCY_HZ / 2.0;
        Self::new(id, center, normal, u, 16, 16, pitch)
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn normal(&self) -> Vec3 {
        self.placement.normal
    }

    pub fn center(&self) -> Vec3 {
        self.placement.center
    }

    pub fn cell_area(&self) -> f64 {
        self.pitch * self.pitch
    }

    /// In-plane offset of a cell from the tile center.
    pub fn cell_offset(&self, i: usize, j: usize) -> Vec3 {
        let du = (j as f64 - (self.cols as f64 - 1.0) / 2.0) * self.pitch;
        let dv = (i as f64 - (self.rows as f64 - 1.0) / 2.0) * self.pitch;
        self.placement.u * du + self.placement.v * dv
    }

    pub fn cell_positions(&self) -> Vec<Vec3> {
        let c = self.center();
        (0..self.rows)
            .flat_map(|i| (0..self.cols).map(move |j| (i, j)))
            .map(|(i, j)| c + self.cell_offset(i, j))
            .collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.rows == 0 || self.cols == 0 || !(self.pitch > 0.0) {
            return Err("tile needs positive dims and pitch".into());
        }
        let tol = 1e-9;
        if self.pitch * self.cols as f64 > 2.0 * self.placement.hu + tol
            || self.pitch * self.rows as f64 > 2.0 * self.placement.hv + tol
        {
            return Err("cell grid exceeds placement rectangle".into());
        }
        Ok(())
    }

    pub fn with_config(mut self, config: TileConfig) -> Self {
        self.config = Some(config);
        self
    }
}

/// High-level tile function requested by the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Callback {
    /// Redirect a plane wave travelling along `incident` into `target`.
    Steer { incident: Vec3, target: Vec3 },
    /// Equal-weight split of `incident` into two directions.
    Split { incident: Vec3, targets: [Vec3; 2] },
    Absorb,
    /// Adds a constant phase (radians) to another callback's profile.
    PhaseAlter { offset: f64, base: Box<Callback> },
    /// Phase-conjugate a point source at `source` onto `focal`.
    Focus { source: Vec3, focal: Vec3 },
}

fn check_directions(tile: &SdmTile, incident: Vec3, outgoing: &[Vec3]) -> Result<(), SdmError> {
    let n = tile.normal();
    if incident.dot(n) >= 0.0 || outgoing.iter().any(|d| d.dot(n) <= 0.0) {
        return Err(SdmError::BacksideIncidence);
    }
    Ok(())
}

/// Linear phase ramp `k (d_inc - d_out) · r` (generalized Snell), wrapped to
/// `[0, 2π)`. `incident` is the propagation direction of the arriving wave.
pub fn steer_profile(tile: &SdmTile, incident: Vec3, target: Vec3, k: f64) -> Result<Vec<f64>, SdmError> {
    let (din, dout) = (incident.normalized(), target.normalized());
    check_directions(tile, din, &[dout])?;
    let g = (din - dout) * k;
    let c = tile.center();
    Ok(tile.cell_positions().into_iter().map(|p| g.dot(p - c).rem_euclid(TAU)).collect())
}

/// Phase conjugation `k (|s - r| + |r - f|)`, wrapped to `[0, 2π)`.
pub fn focus_profile(tile: &SdmTile, source: Vec3, focal: Vec3, k: f64) -> Result<Vec<f64>, SdmError> {
    let (n, c) = (tile.normal(), tile.center());
    if n.dot(source - c) <= 0.0 || n.dot(focal - c) <= 0.0 {
        return Err(SdmError::BacksideIncidence);
    }
    Ok(tile
        .cell_positions()
        .into_iter()
        .map(|p| (k * (source.distance(p) + p.distance(focal))).rem_euclid(TAU))
        .collect())
}

/// Phase of the equal-weight sum of two steering profiles.
pub fn split_profile(tile: &SdmTile, incident: Vec3, targets: [Vec3; 2], k: f64) -> Result<Vec<f64>, SdmError> {
    let a = steer_profile(tile, incident, targets[0], k)?;
    let b = steer_profile(tile, incident, targets[1], k)?;
    Ok(a.iter()
        .zip(&b)
        .map(|(&p, &q)| (Complex64::from_polar(1.0, p) + Complex64::from_polar(1.0, q)).arg().rem_euclid(TAU))
        .collect())
}

/// Nearest phase state per cell (circular distance). Ties within 1e-12 rad
/// go to the lower state index.
pub fn quantize_profile(profile: &[f64], codebook: &Codebook) -> Result<Vec<usize>, SdmError> {
    let levels: Vec<(usize, f64)> =
        codebook.phase_states().map(|s| (s.index, s.phase_deg.to_radians())).collect();
    if levels.len() < 2 {
        return Err(SdmError::BadCodebook(format!("{}: fewer than two phase states", codebook.id)));
    }
    Ok(profile
        .iter()
        .map(|&phi| {
            let dist: Vec<f64> = levels.iter().map(|&(_, th)| wrap_phase(phi - th).abs()).collect();
            let best = dist.iter().copied().fold(f64::INFINITY, f64::min);
            levels
                .iter()
                .zip(&dist)
                .filter(|(_, &d)| d <= best + 1e-12)
                .map(|(&(idx, _), _)| idx)
                .min()
                .expect("at least one level")
        })
        .collect())
}

/// Continuous profile requested by a callback, or `None` for ABSORB.
pub fn callback_phases(callback: &Callback, tile: &SdmTile, k: f64) -> Result<Option<Vec<f64>>, SdmError> {
    match callback {
        Callback::Steer { incident, target } => steer_profile(tile, *incident, *target, k).map(Some),
        Callback::Split { incident, targets } => split_profile(tile, *incident, *targets, k).map(Some),
        Callback::Focus { source, focal } => focus_profile(tile, *source, *focal, k).map(Some),
        Callback::Absorb => Ok(None),
        Callback::PhaseAlter { offset, base } => match callback_phases(base, tile, k)? {
            Some(p) => Ok(Some(p.into_iter().map(|x| (x + offset).rem_euclid(TAU)).collect())),
            None => Err(SdmError::UnsupportedCallback("PHASE_ALTER on an absorbing configuration".into())),
        },
    }
}

/// Matches a callback to cell states through the codebook.
pub fn codebook_lookup(callback: &Callback, tile: &SdmTile, codebook: &Codebook, k: f64) -> Result<Vec<usize>, SdmError> {
    match callback_phases(callback, tile, k)? {
        Some(profile) => quantize_profile(&profile, codebook),
        None => {
            let absorb = codebook
                .absorb_state()
                .ok_or_else(|| SdmError::UnsupportedCallback(format!("codebook `{}` has no ABSORB state", codebook.id)))?;
            Ok(vec![absorb; tile.cell_count()])
        }
    }
}

/// Ideal unquantized configuration for a callback (ABSORB falls back to the
/// codebook's absorbing state).
pub fn continuous_config(callback: &Callback, tile: &SdmTile, codebook: &Codebook, k: f64) -> Result<TileConfig, SdmError> {
    match callback_phases(callback, tile, k)? {
        Some(phases) => Ok(TileConfig::Continuous { phases, magnitude: codebook.phase_magnitude() }),
        None => codebook_lookup(callback, tile, codebook, k).map(TileConfig::States),
    }
}

/// Secondary sources leaving a deployed tile: `Γ(cell) * E_inc(cell)`.
pub fn reflect(tile: &SdmTile, codebook: &Codebook, incident: &[Complex64]) -> Result<Vec<PatchSource>, SdmError> {
    let config = tile.config.as_ref().ok_or_else(|| SdmError::ConfigUnresolved(tile.id.clone()))?;
    if incident.len() != tile.cell_count() {
        return Err(SdmError::CellCount { expected: tile.cell_count(), got: incident.len() });
    }
    let area = tile.cell_area();
    let normal = tile.normal();
    Ok(tile
        .cell_positions()
        .into_iter()
        .zip(config.gammas(codebook))
        .zip(incident)
        .map(|((position, gamma), &e)| PatchSource { position, normal, area, amplitude: gamma * e })
        .collect())
}

/// Keyed per-cell state offsets. The stream is SplitMix64 seeded with
/// `key` (state += 0x9E3779B97F4A7C15, then the standard xor-shift-multiply
/// finalizer); cell `i` uses output `i` modulo the level count.
fn scramble_offsets(n: usize, levels: usize, key: u64) -> Vec<usize> {
    let mut rng = SplitMix64::from_seed(key.to_le_bytes());
    (0..n).map(|_| (rng.next_u64() % levels as u64) as usize).collect()
}

fn cyclic(codebook: &Codebook) -> Result<usize, SdmError> {
    codebook
        .cyclic_levels()
        .ok_or_else(|| SdmError::BadCodebook(format!("{}: phase states are not a cyclic group", codebook.id)))
}

/// Adds a keyed pseudorandom phase-state offset to every phase cell.
/// Absorbing cells are left alone.
pub fn scramble_config(states: &[usize], codebook: &Codebook, key: u64) -> Result<Vec<usize>, SdmError> {
    let levels = cyclic(codebook)?;
    let offsets = scramble_offsets(states.len(), levels, key);
    Ok(states
        .iter()
        .zip(offsets)
        .map(|(&s, o)| if s < levels { (s + o) % levels } else { s })
        .collect())
}

/// Inverse of [`scramble_config`] for the same key. A wrong key is not
/// detectable and yields a noise-like configuration.
pub fn descramble_config(states: &[usize], codebook: &Codebook, key: u64) -> Result<Vec<usize>, SdmError> {
    let levels = cyclic(codebook)?;
    let offsets = scramble_offsets(states.len(), levels, key);
    Ok(states
        .iter()
        .zip(offsets)
        .map(|(&s, o)| if s < levels { (s + levels - o) % levels } else { s })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{radiate, PropagationConfig};

    fn tile() -> SdmTile {
        SdmTile::default_at("T", Vec3::ZERO, Vec3::Z, Vec3::X)
    }

    fn k() -> f64 {
        PropagationConfig::default().k
    }

    #[test]
    fn default_tile_geometry() {
        let t = tile();
        assert_eq!(t.cell_count(), 256);
        assert!((t.pitch - 0.029979245800000002).abs() < 1e-12);
        for p in t.cell_positions() {
            assert!(p.z.abs() < 1e-15);
        }
        t.validate().unwrap();
    }

    #[test]
    fn specular_steer_is_uniform() {
        let inc = Vec3::new(0.3, -0.2, -1.0).normalized();
        let out = inc.reflect(Vec3::Z);
        let p = steer_profile(&tile(), inc, out, k()).unwrap();
        for x in &p {
            assert!(wrap_phase(x - p[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn steer_gradient_matches_snell() {
        let t = tile();
        let th = 30f64.to_radians();
        let target = Vec3::new(th.sin(), 0.0, th.cos());
        let p = steer_profile(&t, -Vec3::Z, target, k()).unwrap();
        // Adjacent cells along u: j -> j + 1.
        let grad = wrap_phase(p[1] - p[0]) / t.pitch;
        assert!((grad - (-k() * th.sin())).abs() < 1e-9);
        assert!((grad + 52.40).abs() < 0.01);
        let mirrored = Vec3::new(-th.sin(), 0.0, th.cos());
        let q = steer_profile(&t, -Vec3::Z, mirrored, k()).unwrap();
        assert!((wrap_phase(q[1] - q[0]) / t.pitch + grad).abs() < 1e-9);
    }

    #[test]
    fn backside_is_rejected() {
        let t = tile();
        assert_eq!(steer_profile(&t, Vec3::Z, Vec3::Z, k()), Err(SdmError::BacksideIncidence));
        assert_eq!(
            focus_profile(&t, Vec3::new(0.0, 0.0, -1.0), Vec3::Z, k()),
            Err(SdmError::BacksideIncidence)
        );
    }

    #[test]
    fn focus_contributions_arrive_in_phase() {
        let t = tile();
        let wave = PropagationConfig::default();
        let s = Vec3::new(-0.8, 0.2, 1.1);
        let f = Vec3::new(0.9, -0.3, 1.4);
        let prof = focus_profile(&t, s, f, wave.k).unwrap();
        let mut phases = Vec::new();
        let mut mags = 0.0;
        let mut sum = Complex64::default();
        for (pos, phi) in t.cell_positions().into_iter().zip(&prof) {
            let inc = crate::em::green(s.distance(pos), wave.k).unwrap();
            let patch = PatchSource { position: pos, normal: t.normal(), area: t.cell_area(), amplitude: inc * Complex64::from_polar(1.0, *phi) };
            let e = radiate(&[patch], &[f], wave.k).unwrap()[0];
            phases.push(e.arg());
            mags += e.norm();
            sum += e;
        }
        let spread = phases.iter().map(|p| wrap_phase(p - phases[0]).abs()).fold(0.0, f64::max);
        assert!(spread < 1e-9, "spread {spread}");
        assert!((sum.norm() - mags).abs() / mags < 1e-9);
    }

    #[test]
    fn focus_converges_to_uniform_for_far_mirror_points() {
        let t = tile();
        let dir = Vec3::new(0.5, 0.0, 1.0).normalized();
        let mut last = f64::INFINITY;
        for d in [1.0, 10.0, 100.0, 1000.0] {
            let s = dir * d;
            let f = Vec3::new(-dir.x, dir.y, dir.z) * d;
            let raw: Vec<f64> =
                t.cell_positions().iter().map(|&p| k() * (s.distance(p) + p.distance(f))).collect();
            let c = k() * (s.norm() + f.norm());
            let dev = raw.iter().map(|x| (x - c).abs()).fold(0.0, f64::max);
            assert!(dev < last, "non-monotone at distance {d}");
            last = dev;
        }
        assert!(last < 0.05);
    }

    #[test]
    fn split_with_identical_targets_equals_steer() {
        let t = tile();
        let target = Vec3::new(0.3, 0.1, 0.9).normalized();
        let a = split_profile(&t, -Vec3::Z, [target, target], k()).unwrap();
        let b = steer_profile(&t, -Vec3::Z, target, k()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(wrap_phase(x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetric_split_is_even_in_u() {
        let t = tile();
        let th = 20f64.to_radians();
        let targets = [Vec3::new(th.sin(), 0.0, th.cos()), Vec3::new(-th.sin(), 0.0, th.cos())];
        let p = split_profile(&t, -Vec3::Z, targets, k()).unwrap();
        // Mirror j -> cols-1-j: profile equal up to the 0/π sign flip of the
        // cosine envelope.
        for i in 0..t.rows {
            for j in 0..t.cols {
                let a = p[i * t.cols + j];
                let b = p[i * t.cols + (t.cols - 1 - j)];
                let d = wrap_phase(a - b).abs();
                assert!(d < 1e-9 || (d - PI).abs() < 1e-9, "cell ({i},{j}) differs by {d}");
            }
        }
    }

    #[test]
    fn quantization_rules() {
        let cb = Codebook::two_bit();
        assert_eq!(quantize_profile(&[0.0], &cb).unwrap(), vec![0]);
        assert_eq!(quantize_profile(&[100f64.to_radians()], &cb).unwrap(), vec![1]);
        assert_eq!(quantize_profile(&[45f64.to_radians()], &cb).unwrap(), vec![0]);
        assert_eq!(quantize_profile(&[350f64.to_radians()], &cb).unwrap(), vec![0]);
        assert_eq!(quantize_profile(&[225f64.to_radians()], &cb).unwrap(), vec![2]);
    }

    #[test]
    fn absorb_and_phase_alter() {
        let t = tile();
        let cb = Codebook::two_bit();
        let absorb = codebook_lookup(&Callback::Absorb, &t, &cb, k()).unwrap();
        assert!(absorb.iter().all(|&s| cb.gamma(s) == Complex64::default()));
        let steer = Callback::Steer { incident: -Vec3::Z, target: Vec3::new(0.2, 0.0, 1.0).normalized() };
        let alt = Callback::PhaseAlter { offset: 0.0, base: Box::new(steer.clone()) };
        assert_eq!(codebook_lookup(&alt, &t, &cb, k()).unwrap(), codebook_lookup(&steer, &t, &cb, k()).unwrap());
        let bad = Callback::PhaseAlter { offset: 1.0, base: Box::new(Callback::Absorb) };
        assert!(matches!(codebook_lookup(&bad, &t, &cb, k()), Err(SdmError::UnsupportedCallback(_))));
    }

    #[test]
    fn focus_lookup_is_profile_then_quantize() {
        let t = tile();
        let cb = Codebook::two_bit();
        let (s, f) = (Vec3::new(0.5, 0.5, 2.0), Vec3::new(-1.0, 0.0, 1.5));
        let direct = quantize_profile(&focus_profile(&t, s, f, k()).unwrap(), &cb).unwrap();
        let via = codebook_lookup(&Callback::Focus { source: s, focal: f }, &t, &cb, k()).unwrap();
        assert_eq!(direct, via);
    }

    #[test]
    fn reflect_scales_incident_by_gamma() {
        let t = tile();
        let cb = Codebook::two_bit();
        let inc = vec![Complex64::new(0.5, -0.25); t.cell_count()];
        assert!(matches!(reflect(&t, &cb, &inc), Err(SdmError::ConfigUnresolved(_))));
        let absorbing = t.clone().with_config(TileConfig::States(vec![4; 256]));
        assert!(reflect(&absorbing, &cb, &inc).unwrap().iter().all(|p| p.amplitude == Complex64::default()));
        let uniform = t.with_config(TileConfig::States(vec![0; 256]));
        for p in reflect(&uniform, &cb, &inc).unwrap() {
            assert!((p.amplitude - inc[0] * 0.9).norm() < 1e-15);
            assert_eq!(p.area, uniform.cell_area());
        }
    }

    #[test]
    fn splitmix_stream_is_the_reference_generator() {
        let mut rng = SplitMix64::from_seed(0u64.to_le_bytes());
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn scramble_roundtrip_and_key_sensitivity() {
        let cb = Codebook::two_bit();
        let states: Vec<usize> = (0..256).map(|i| [0, 1, 2, 3, 4][i % 5]).collect();
        let s = scramble_config(&states, &cb, 42).unwrap();
        assert_eq!(descramble_config(&s, &cb, 42).unwrap(), states);
        let a = scramble_config(&states, &cb, 0).unwrap();
        let b = scramble_config(&states, &cb, 1).unwrap();
        let differ = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        assert!(differ as f64 > 0.4 * 256.0, "only {differ} cells differ");
        // Absorbing cells never move.
        for (i, &st) in states.iter().enumerate() {
            if st == 4 {
                assert_eq!(s[i], 4);
            }
        }
    }

    #[test]
    fn callback_json_shape() {
        let cb = Callback::Focus { source: Vec3::new(1.0, 2.0, 3.0), focal: Vec3::ZERO };
        let json = serde_json::to_string(&cb).unwrap();
        assert_eq!(json, r#"{"kind":"FOCUS","params":{"source":[1.0,2.0,3.0],"focal":[0.0,0.0,0.0]}}"#);
        let back: Callback = serde_json::from_str(r#"{"kind":"ABSORB"}"#).unwrap();
        assert_eq!(back, Callback::Absorb);
    }
}
