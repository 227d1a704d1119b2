//! Generates the dynamic demo sequence and writes frames and masks as PNGs.
//!
//! `cargo run --example synth_scene -- [out_dir]`

use std::path::PathBuf;

use splatwild::scene::{self, SceneRecipe};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args_os()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("splatwild_synth"), PathBuf::from);
    std::fs::create_dir_all(&out)?;

    let spec = SceneRecipe::dynamic_demo().build()?;
    let seq = scene::generate_synthetic_sequence(&spec)?;
    for (i, f) in seq.frames.iter().enumerate() {
        f.image.save_png(&out.join(format!("frame_{i:04}.png")))?;
        let gt = f.gt_distractor_mask.as_ref().expect("synthetic frames carry masks");
        gt.save_png(&out.join(format!("mask_{i:04}.png")))?;
        println!("frame {i}: {} distractor pixels", gt.count());
    }
    println!(
        "{} frames, {} static gaussians, distractor ids {:?} -> {}",
        seq.frames.len(),
        spec.static_gaussians().len(),
        seq.distractor_ids,
        out.display()
    );
    Ok(())
}
