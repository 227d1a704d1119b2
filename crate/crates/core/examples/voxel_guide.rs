//! Two-voxel fixture: a stray Gaussian drifts toward a patch the sparse
//! points never saw. The guide prunes it; plain training lets it wander.

use splatwild::guide::{self, GuideConfig};
use splatwild::pointcloud;
use splatwild::scene;
use splatwild::train::{self, NoMasking, TrainConfig, VoxelGuide};

fn main() -> splatwild::Result<()> {
    let fx = scene::two_voxel_fixture()?;
    let grid = pointcloud::build_grid(&fx.sample_points, 1)?;
    let mut init = fx.init.clone();
    let gg = guide::assign_initial(&mut init, &grid);
    let cfg = TrainConfig {
        iterations: 2000,
        background: fx.background,
        ..TrainConfig::default()
    };
    let gcfg = GuideConfig::default();
    let limit = gcfg.tau * gg.voxel_length;

    let plain = train::train(&init, &fx.frames, &cfg, &mut NoMasking, None)?;
    let mut vg = VoxelGuide::new(gg.clone(), gcfg)?;
    let guided = train::train(&init, &fx.frames, &cfg, &mut NoMasking, Some(&mut vg))?;

    for (name, gs) in [("plain", &plain.gaussians), ("guided", &guided.gaussians)] {
        println!("{name}:");
        for g in gs {
            let v = g.voxel_id.expect("assigned");
            let d = (g.center - gg.center(gg.coords(v))).norm();
            let flag = if d > limit { "  beyond tau*L" } else { "" };
            println!("  id {} voxel {v} center ({:.3}, {:.3}, {:.3}) offset {d:.3}{flag}", g.id, g.center.x, g.center.y, g.center.z);
        }
    }
    for s in vg.history.iter().filter(|s| !s.pruned.voxels.is_empty()) {
        println!("iteration {}: pruned voxels {:?}", s.iteration, s.pruned.voxels);
    }
    Ok(())
}
