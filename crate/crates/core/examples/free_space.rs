//! A lone point source seen by the default 10×10 array, compared element
//! by element with the analytic spherical wave.

use std::f64::consts::PI;
use wavecopy::em::{array_reading, PropagationConfig};
use wavecopy::scene::{PointSource, ReceiveArray, RoomScene};
use wavecopy::{Complex64, Vec3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = PropagationConfig::default();
    let mut scene = RoomScene::new();
    let src = Vec3::new(0.0, 0.0, 0.0);
    scene.sources.push(PointSource::new("tx", src, Complex64::new(1.0, 0.0)));
    let array = ReceiveArray::default_at("rx", Vec3::new(2.0, 0.0, 0.0), Vec3::Y, Vec3::Z);
    let reading = array_reading(&scene, &cfg, &array)?;
    let mut worst: f64 = 0.0;
    for (e, z) in array.elements.iter().zip(&reading.data) {
        let r = e.distance(src);
        let want = Complex64::from_polar(1.0 / (4.0 * PI * r), -cfg.k * r);
        worst = worst.max((z - want).norm() / want.norm());
    }
    println!("k = {:.5} rad/m, λ = {:.6} m", cfg.k, cfg.wavelength());
    println!("corner element {:.4e}", reading.get(0, 0));
    println!("worst relative error vs 1/(4πr)·e^(-jkr): {worst:.2e}");
    Ok(())
}
