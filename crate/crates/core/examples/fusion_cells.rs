//! Fuses a current feature map with a prior through SSMA attention and a
//! ConvGRU step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stwarp::fusion::{conv_gru_step, ssma_forward, ConvGruParams, SsmaConfig, SsmaParams};
use stwarp::FeatureMap;

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn mean_abs(m: &FeatureMap) -> f64 {
    m.data().iter().map(|v| v.abs()).sum::<f64>() / m.data().len() as f64
}

fn main() -> stwarp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let current = random_map(&mut rng, 8, 6, 6);
    let prior = random_map(&mut rng, 8, 6, 6);

    let ssma = SsmaParams::init(SsmaConfig::new(8, 4)?, &mut rng)?;
    let fused = ssma_forward(&current, &prior, &ssma)?;
    println!("ssma ({} params): mean |out| = {:.4}", ssma.param_count(), mean_abs(&fused));

    let zero = SsmaParams::zeros(SsmaConfig::new(8, 4)?)?;
    println!("zero ssma: mean |out| = {:.1e}", mean_abs(&ssma_forward(&current, &prior, &zero)?));

    let gru = ConvGruParams::init(8, &mut rng);
    let mut h = prior;
    for t in 0..3 {
        h = conv_gru_step(&current, &h, &gru)?;
        println!("gru step {t}: mean |h| = {:.4}", mean_abs(&h));
    }
    Ok(())
}
