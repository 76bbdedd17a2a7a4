//! Saves a model checkpoint in single precision, reloads it and checks the
//! forward pass is unchanged.

use stwarp::nn::{Checkpoint, Precision};
use stwarp::pipeline::{build_model, forward_sequence, Model, ModelConfig, Variant};
use stwarp::synthscene::{Preset, Scene, SceneConfig};

fn main() -> stwarp::Result<()> {
    let cfg = SceneConfig {
        image_w: 32,
        image_h: 24,
        ..SceneConfig::preset(Preset::Sb, 8, 2)
    };
    let ds = Scene::new(cfg)?.dataset()?;
    let mut model = build_model(&ModelConfig::new(Variant::StGru, 3), 5)?;
    model.round_to_f32();

    let path = std::env::temp_dir().join("stwarp-example.ckpt");
    model.to_checkpoint(Precision::F32, serde_json::json!({}))?.save(&path)?;
    let loaded = Model::from_checkpoint(&Checkpoint::load(&path)?)?;

    let frames = &ds.frames[3..8];
    let poses = &ds.wheel[3..8];
    let a = forward_sequence(&model, frames, poses, &ds.intrinsics, &ds.extrinsics)?;
    let b = forward_sequence(&loaded, frames, poses, &ds.intrinsics, &ds.extrinsics)?;
    println!("{} parameters, max logit difference {:e}", model.param_count(), a.max_abs_diff(&b));
    Ok(())
}
