//! Replication by sensing: senses the departing wavefront at the tiles of
//! one room and re-emits it from congruent tiles in another, then compares
//! the fields around the focal point. Dropping a tile lowers the fidelity.

use wavecopy::em::{compute_field, PropagationConfig};
use wavecopy::metrics::field_fidelity;
use wavecopy::pwe::{deploy, replicate_by_sensing, TileCommand};
use wavecopy::scene::{Material, PointSource, Rectangle, RoomScene, Wall};
use wavecopy::sdm::{Callback, SdmTile};
use wavecopy::{Complex64, Vec3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = PropagationConfig::default();
    let (s, f) = (Vec3::new(-1.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0));
    let mut room1 = RoomScene::new();
    room1.sources.push(PointSource::new("src", s, Complex64::new(1.0, 0.0)));
    room1.tiles.push(SdmTile::default_at("T1", Vec3::ZERO, Vec3::Z, Vec3::X));
    room1.tiles.push(SdmTile::default_at("T2", Vec3::new(0.0, 0.8, 0.0), Vec3::Z, Vec3::X));
    // Screen between source and focal point so only the tiles reach it.
    room1.walls.push(Wall {
        id: "screen".into(),
        rect: Rectangle::new(Vec3::new(0.0, 0.0, 1.25), Vec3::X, Vec3::Y, 1.0, 0.75, Material::Absorber),
    });
    let cmds: Vec<TileCommand> = ["T1", "T2"]
        .iter()
        .map(|t| TileCommand { tile: t.to_string(), callback: Callback::Focus { source: s, focal: f } })
        .collect();
    let room1 = deploy(&room1, &cmds, cfg.k)?;
    let probes: Vec<Vec3> =
        (0..9).map(|i| f + Vec3::new(0.0, 0.05 * (i % 3) as f64 - 0.05, 0.05 * (i / 3) as f64 - 0.05)).collect();
    let original = compute_field(&room1, &cfg, &probes)?;

    // Room 2: same tile layout, no source.
    let mut room2 = room1.clone();
    room2.sources.clear();
    let map = |ids: &[&str]| ids.iter().map(|i| (i.to_string(), i.to_string())).collect::<Vec<_>>();
    for ids in [&["T1", "T2"][..], &["T1"][..]] {
        let dep = replicate_by_sensing(&room1, &room2, &map(ids), &cfg)?;
        let copy = dep.field(&room2, &probes, cfg.k)?;
        println!("tiles {ids:?}: fidelity {:.6}", field_fidelity(&original, &copy)?);
    }
    Ok(())
}
