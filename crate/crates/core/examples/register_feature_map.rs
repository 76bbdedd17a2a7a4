//! Registers a feature map from one camera into the next with a z-buffered
//! forward scatter.

use nalgebra::Vector3;
use stwarp::warp::{compute_shift_matrix, register_feature_map, resize_shift_matrix, DEFAULT_FILL};
use stwarp::{CameraIntrinsics, DepthImage, FeatureMap, Pose};

fn main() -> stwarp::Result<()> {
    let (h, w) = (8, 12);
    let k = CameraIntrinsics::new(100.0, 100.0, 6.0, 4.0, w, h)?;
    let depth = DepthImage::constant(h, w, 1.0);
    let tc = Pose::from_translation(Vector3::new(0.02, 0.0, 0.0));

    let delta = compute_shift_matrix(&depth, &tc, &k)?;
    println!("shift at (0, 0): {:?}", delta.shift(0, 0));

    let f = FeatureMap::from_vec(1, h, w, (0..h * w).map(|i| (i % w) as f64).collect())?;
    let reg = register_feature_map(&f, &delta, delta.target_depth(), DEFAULT_FILL)?;
    for y in 0..2 {
        let row: Vec<String> = (0..w).map(|x| format!("{:4.1}", reg.map.get(0, y, x))).collect();
        println!("{}", row.join(" "));
    }
    println!("{} of {} pixels hit", reg.hit_mask.iter().filter(|&&m| m).count(), h * w);

    let half = resize_shift_matrix(&delta, h / 2, w / 2)?;
    println!("half-resolution shift: {:?}", half.shift(0, 0));
    Ok(())
}
