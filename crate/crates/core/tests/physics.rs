//! Simulation checks of tile functions, discretization and replay.

use std::f64::consts::PI;
use wavecopy::em::{array_reading, compute_field, incident_field, radiate, PropagationConfig};
use wavecopy::metrics::field_fidelity;
use wavecopy::scenario::{training_config, training_scene};
use wavecopy::scene::RoomScene;
use wavecopy::sdm::{codebook_lookup, continuous_config, reflect, Callback, Codebook, SdmTile, TileConfig};
use wavecopy::transport::{replay_frame, Sampler};
use wavecopy::{Complex64, Vec3};

fn k() -> f64 {
    PropagationConfig::default().k
}

fn lambda() -> f64 {
    2.0 * PI / k()
}

fn tile() -> SdmTile {
    SdmTile::default_at("t", Vec3::ZERO, Vec3::Z, Vec3::X)
}

fn spherical(tile: &SdmTile, src: Vec3) -> Vec<Complex64> {
    tile.cell_positions()
        .iter()
        .map(|c| {
            let r = c.distance(src);
            Complex64::from_polar(1.0 / (4.0 * PI * r), -k() * r)
        })
        .collect()
}

fn in_plane(deg: f64) -> Vec3 {
    let t = deg.to_radians();
    Vec3::new(t.sin(), 0.0, t.cos())
}

/// Re-radiated magnitude at `points` for each of the continuous and 2-bit
/// configurations of `callback`.
fn both_configs(callback: &Callback, incident: &[Complex64], points: &[Vec3]) -> [Vec<f64>; 2] {
    let (t, cb) = (tile(), Codebook::two_bit());
    let cont = t.clone().with_config(continuous_config(callback, &t, &cb, k()).unwrap());
    let quant = t.clone().with_config(TileConfig::States(codebook_lookup(callback, &t, &cb, k()).unwrap()));
    [cont, quant].map(|d| {
        let patches = reflect(&d, &cb, incident).unwrap();
        radiate(&patches, points, k()).unwrap().iter().map(|z| z.norm()).collect()
    })
}

#[test]
fn split_sends_comparable_power_both_ways() {
    let incident = spherical(&tile(), Vec3::new(0.0, 0.0, 1000.0));
    // Symmetric pairs plus one mildly asymmetric pair; strongly asymmetric
    // pairs lose power as cos² of the steering angle (cell obliquity).
    for targets in [[20.0, -20.0], [30.0, -30.0], [45.0, -45.0], [10.0, -20.0]] {
        let dirs = targets.map(in_plane);
        let probes = dirs.map(|d| d * 200.0);
        let cb = Callback::Split { incident: -Vec3::Z, targets: dirs };
        for (label, mags) in ["continuous", "2-bit"].iter().zip(both_configs(&cb, &incident, &probes)) {
            let (p0, p1) = (mags[0].powi(2), mags[1].powi(2));
            let ratio = p0.min(p1) / p0.max(p1);
            println!("{label} split {targets:?}: power ratio {ratio:.3}");
            assert!(ratio >= 0.7, "{label} split {targets:?} unbalanced: {ratio}");
        }
    }
}

#[test]
fn focus_beats_a_control_point_at_equal_range() {
    let src = Vec3::new(-0.4, 0.1, 1.2);
    let focal = Vec3::new(0.5, -0.2, 1.5);
    // Rotate the focal point about the y axis through the tile center by the
    // angle whose chord is 5λ; range is preserved.
    let r = focal.norm();
    let rho = focal.x.hypot(focal.z);
    let a = 2.0 * (2.5 * lambda() / rho).asin();
    let control = Vec3::new(focal.x * a.cos() - focal.z * a.sin(), focal.y, focal.x * a.sin() + focal.z * a.cos());
    assert!((control.distance(focal) - 5.0 * lambda()).abs() < 0.01 * lambda());
    assert!((control.norm() - r).abs() < 1e-12);
    let cb = Callback::Focus { source: src, focal };
    for (label, m) in ["continuous", "2-bit"].iter().zip(both_configs(&cb, &spherical(&tile(), src), &[focal, control])) {
        println!("{label}: |E(focal)| {:.3e}  |E(control)| {:.3e}", m[0], m[1]);
        assert!(m[0] > m[1], "{label}: {m:?}");
    }
}

#[test]
fn halving_the_patch_side_barely_moves_the_scattered_field() {
    let scene = training_scene();
    let probes = &scene.arrays[0].elements;
    let scattered = |side: f64| -> Vec<Complex64> {
        let cfg = PropagationConfig { patch_side: side, ..training_config() };
        let total = compute_field(&scene, &cfg, probes).unwrap();
        let direct = incident_field(&scene.sources, probes, cfg.k, &scene).unwrap();
        total.iter().zip(&direct).map(|(t, d)| t - d).collect()
    };
    let side = training_config().patch_side;
    let (coarse, fine) = (scattered(side), scattered(side / 2.0));
    let norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let diff: Vec<Complex64> = coarse.iter().zip(&fine).map(|(a, b)| a - b).collect();
    let rel = norm(&diff) / norm(&fine);
    println!("relative change on refinement: {rel:.4}");
    assert!(rel < 0.02, "{rel}");
}

/// The array is lifted out of the room and its recorded samples re-emitted
/// into empty space; a copy of the array one wavelength behind the original,
/// on the side away from the scene, should see the same wavefront.
#[test]
fn replayed_reading_reappears_behind_the_array() {
    let scene = training_scene();
    let cfg = training_config();
    let array = &scene.arrays[0];
    let reading = array_reading(&scene, &cfg, array).unwrap();
    let frame = Sampler::starting_at(0).sample(&reading).unwrap();

    let e = &array.elements;
    let normal = (e[1] - e[0]).cross(e[array.cols] - e[0]).normalized();
    let toward_scene = scene.objects[0].pivot - array.centroid();
    let back = if normal.dot(toward_scene) > 0.0 { -normal } else { normal };
    let mut probe = array.clone();
    probe.elements = e.iter().map(|&p| p + back * lambda()).collect();

    let mut replay = RoomScene::new();
    replay.sources = replay_frame(&frame, array, false).unwrap();
    let replayed = array_reading(&replay, &cfg, &probe).unwrap();
    let f = field_fidelity(&reading.data, &replayed.data).unwrap();
    println!("replay fidelity {f:.4}");
    assert!(f >= 0.9, "{f}");
}
