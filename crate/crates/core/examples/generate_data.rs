//! Regenerates the bundled images under `data/`.
//!
//! cargo run --release -p unihom --example generate_data

use std::path::Path;

use unihom::synth::textured_scene;
use unihom::tracker::occlusion_sequence;

const REFERENCE_SEED: u64 = 3;
const SEQUENCE_SEED: u64 = 4;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    std::fs::create_dir_all(&root)?;
    textured_scene(800, 533, REFERENCE_SEED).save(root.join("reference.png"))?;
    occlusion_sequence(SEQUENCE_SEED).write(&root.join("occlusion"))?;
    println!("wrote {}", root.display());
    Ok(())
}
