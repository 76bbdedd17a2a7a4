//! Renders a short synthetic field sequence and writes it to disk.
//!
//! ```text
//! cargo run --example synthetic_scene -- /tmp/field
//! ```

use std::path::PathBuf;

use stwarp::synthscene::{generate_sequence, Preset, SceneConfig, BACKGROUND, CROP, WEED};

fn main() -> stwarp::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("stwarp-field"));
    let cfg = SceneConfig::preset(Preset::Sb, 40, 1);
    let ds = generate_sequence(cfg, &out)?;

    let mut areas = [0u64; 3];
    for l in ds.labels.values() {
        for (a, b) in areas.iter_mut().zip(l.class_areas(3)) {
            *a += b;
        }
    }
    let total: u64 = areas.iter().sum();
    println!("{} frames, {} labeled, written to {}", ds.len(), ds.labels.len(), out.display());
    for (name, c) in [("soil", BACKGROUND), ("crop", CROP), ("weed", WEED)] {
        println!("{name:>5}: {:5.1}%", 100.0 * areas[c as usize] as f64 / total as f64);
    }
    Ok(())
}
