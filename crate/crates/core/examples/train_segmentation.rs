//! Trains the baseline and the ST-Atte variant on a small synthetic sequence
//! and compares them on randomly spaced test sequences.
//!
//! ```text
//! cargo run --release --example train_segmentation -- 20
//! ```

use stwarp::pipeline::{build_model, evaluate, train_toy, EvalConfig, ModelConfig, SequenceSpec, Split, TrainConfig, Variant};
use stwarp::sequencing::Spacing;
use stwarp::synthscene::{Preset, Scene, SceneConfig};

fn main() -> stwarp::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let cfg = SceneConfig {
        image_w: 48,
        image_h: 32,
        ..SceneConfig::preset(Preset::Sb, 200, 1)
    };
    let ds = Scene::new(cfg)?.dataset()?;
    let split = Split::along_trajectory(&ds, 5)?;
    println!("{} train / {} val / {} test sequences", split.train.len(), split.val.len(), split.test.len());

    for variant in [Variant::Bl, Variant::StAtte] {
        let tc = TrainConfig {
            epochs,
            spacing: Spacing::Random,
            ..Default::default()
        };
        let model = build_model(&ModelConfig::new(variant, 3), 1)?;
        let out = train_toy(model, &ds, &split.train, &split.val, &tc)?;
        let ec = EvalConfig {
            sequence: SequenceSpec {
                spacing: Spacing::Random,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = evaluate(&out.model, &ds, &split.test, &ec, Some(&out.class_weights))?;
        println!("{variant:>7}: test mIoU {:.2}  wIoU {:.2}", r.iou.miou, r.iou.wiou);
    }
    Ok(())
}
