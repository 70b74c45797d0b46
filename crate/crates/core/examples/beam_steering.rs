//! Steers a normally incident plane wave off a 16×16 tile and scans the
//! far field to find where the beam went, with continuous and 2-bit phases.

use std::f64::consts::PI;
use wavecopy::em::{radiate, PropagationConfig};
use wavecopy::sdm::{codebook_lookup, continuous_config, reflect, Callback, Codebook, SdmTile, TileConfig};
use wavecopy::{Complex64, Vec3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = PropagationConfig::default().k;
    let cb = Codebook::two_bit();
    let tile = SdmTile::default_at("t", Vec3::ZERO, Vec3::Z, Vec3::X);
    let far = Vec3::new(0.0, 0.0, 1000.0);
    let incident: Vec<Complex64> = tile
        .cell_positions()
        .iter()
        .map(|c| {
            let r = c.distance(far);
            Complex64::from_polar(1.0 / (4.0 * PI * r), -k * r)
        })
        .collect();
    let scan: Vec<f64> = (-89..=89).map(f64::from).collect();
    let probes: Vec<Vec3> =
        scan.iter().map(|d| Vec3::new(d.to_radians().sin(), 0.0, d.to_radians().cos()) * 200.0).collect();
    for target in [0.0f64, 15.0, 30.0, 45.0, 60.0] {
        let t = target.to_radians();
        let steer = Callback::Steer { incident: -Vec3::Z, target: Vec3::new(t.sin(), 0.0, t.cos()) };
        let configs = [
            continuous_config(&steer, &tile, &cb, k)?,
            TileConfig::States(codebook_lookup(&steer, &tile, &cb, k)?),
        ];
        let peaks: Vec<String> = configs
            .into_iter()
            .map(|c| -> Result<String, Box<dyn std::error::Error>> {
                let field = radiate(&reflect(&tile.clone().with_config(c), &cb, &incident)?, &probes, k)?;
                let i = (0..field.len()).max_by(|&a, &b| field[a].norm().total_cmp(&field[b].norm())).unwrap_or(0);
                Ok(format!("{:>4.0}°", scan[i]))
            })
            .collect::<Result<_, _>>()?;
        println!("target {target:>3.0}°  peak continuous {}  2-bit {}", peaks[0], peaks[1]);
    }
    Ok(())
}
