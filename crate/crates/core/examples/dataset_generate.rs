//! Generates a small training corpus for the canonical room, writes it to a
//! temporary directory, splits it, and reads it back.
//!
//!     cargo run --release --example dataset_generate -- [n] [seed]

use std::time::Instant;
use wavecopy::dataset::{generate_dataset, read_dataset, split_dataset_dir, write_dataset};
use wavecopy::scenario::{training_config, training_scene};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2024);

    let t = Instant::now();
    let ds = generate_dataset(&training_scene(), &training_config(), n, seed)?;
    println!("generated {n} records in {:.2?}", t.elapsed());

    let dir = std::env::temp_dir().join(format!("wavecopy-dataset-{seed}"));
    write_dataset(&ds, &dir)?;
    let m = split_dataset_dir(&dir, 0.9, seed)?;
    let split = m.split.as_ref().expect("split written");
    println!("{}: {} train / {} test", dir.display(), split.train.len(), split.test.len());

    let back = read_dataset(&dir)?;
    assert_eq!(back.records, ds.records);
    let r0 = &back.records[0];
    let peak = r0.reading.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
    println!("record 0: rotation {:?}, peak |E| {peak:.3e}", r0.rotation);
    Ok(())
}
