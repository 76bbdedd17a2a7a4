//! Corrupts the true motion between two rendered frames with wheel noise and
//! recovers it with point-to-plane ICP.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stwarp::odometry::{inject_noise, refine_with_depth, IcpConfig, NoiseSpec};
use stwarp::synthscene::{Preset, Scene, SceneConfig};

fn main() -> stwarp::Result<()> {
    let scene = Scene::new(SceneConfig::preset(Preset::Sb, 10, 3))?;
    let (a, b) = (scene.render_frame(2), scene.render_frame(4));
    let truth = scene.config.robot_pose(2).inverse() * scene.config.robot_pose(4);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noisy = inject_noise(&truth, &NoiseSpec::default(), &mut rng);
    let r = refine_with_depth(
        &noisy,
        &a.depth,
        &b.depth,
        &scene.intrinsics,
        &scene.extrinsics_pose(),
        &IcpConfig::default(),
    )?;
    println!("wheel error   {:.5}", noisy.error_to(&truth));
    println!(
        "refined error {:.5} ({} iterations, {} correspondences)",
        r.pose.error_to(&truth),
        r.iterations,
        r.correspondences
    );
    Ok(())
}
