//! Sends the relay's 2-bit configuration scrambled and descrambles it at
//! the tile with the right and with a wrong key.

use wavecopy::pwe::DEFAULT_MAX_HOPS;
use wavecopy::scenario::{copy_config, copy_scene, scrambled_copy_fidelity, CopyRoles, COPY_SEED};
use wavecopy::sdm::{descramble_config, scramble_config, Codebook};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cb = Codebook::two_bit();
    let states: Vec<usize> = (0..16).map(|i| i % 4).collect();
    let sent = scramble_config(&states, &cb, 7)?;
    println!("plain     {states:?}\nscrambled {sent:?}\nkey 7     {:?}\nkey 8     {:?}", descramble_config(&sent, &cb, 7)?, descramble_config(&sent, &cb, 8)?);

    let scene = copy_scene(COPY_SEED).scene;
    let (roles, prop) = (CopyRoles::default(), copy_config());
    for (label, key) in [("right key", 77), ("wrong key", 78)] {
        let r = scrambled_copy_fidelity(&scene, &roles, &prop, DEFAULT_MAX_HOPS, 77, key)?;
        println!("{label}: array fidelity {:.4}, focal fidelity {:.4}", r.array_fidelity, r.focal_fidelity);
    }
    Ok(())
}
