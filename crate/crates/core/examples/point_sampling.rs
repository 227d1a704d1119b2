//! Geometry-aware downsampling of a dense synthetic cloud.
//!
//! `cargo run --release --example point_sampling -- [n_points]`

use splatwild::pointcloud::{self, SamplingConfig};

fn main() -> splatwild::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200_000);
    let cloud = pointcloud::synthetic_dense_cloud(n, 5);
    let cfg = SamplingConfig::default();
    let res = pointcloud::sample(&cloud, &cfg)?;
    let g = &res.grid;
    println!(
        "{n} points -> {} kept (N={}, k={}); voxel length {:.4}, grid {:?}",
        res.points.len(),
        cfg.n,
        cfg.k,
        g.voxel_length,
        g.dims
    );
    let mean_kept = res.indices.iter().map(|&i| res.scores[i]).sum::<f64>() / res.indices.len() as f64;
    let mean_all = res.scores.iter().sum::<f64>() / res.scores.len() as f64;
    println!("mean score: kept {mean_kept:.4}, all {mean_all:.4}");
    Ok(())
}
