//! Draws regular and randomly spaced frame sequences ending at a labeled frame.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stwarp::sequencing::{sample_random, sample_regular};

fn main() -> stwarp::Result<()> {
    println!("regular: {:?}", sample_regular(39, 5)?);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..4 {
        println!("random:  {:?}", sample_random(39, 5, 6, &mut rng)?);
    }
    println!("too little history: {:?}", sample_regular(2, 5).err());
    Ok(())
}
