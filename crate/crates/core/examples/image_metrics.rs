//! PSNR, SSIM and masked PSNR on a noisy copy of a rendered frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatwild::metrics;
use splatwild::scene::{self, SceneRecipe};
use splatwild::Image;

fn main() -> splatwild::Result<()> {
    let spec = SceneRecipe::dynamic_demo().build()?;
    let seq = scene::generate_synthetic_sequence(&spec)?;
    let f = &seq.frames[0];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for sigma in [0.01, 0.05, 0.1] {
        let noisy: Vec<[f64; 3]> = f
            .image
            .pixels()
            .iter()
            .map(|p| p.map(|c| (c + rng.random_range(-sigma..sigma)).clamp(0.0, 1.0)))
            .collect();
        let noisy = Image::from_pixels(f.image.width(), f.image.height(), noisy)?;
        let keep = f.gt_distractor_mask.as_ref().expect("synthetic").inverted();
        println!(
            "noise ±{sigma}: PSNR {:.2} dB, SSIM {:.4}, clean-region PSNR {:.2} dB",
            metrics::psnr(&noisy, &f.image)?,
            metrics::ssim_mean(&noisy, &f.image)?,
            metrics::psnr_masked(&noisy, &f.image, &keep)?
        );
    }
    Ok(())
}
