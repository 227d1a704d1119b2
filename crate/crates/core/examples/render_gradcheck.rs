//! Renders a few random Gaussians and compares the analytic L1 gradient
//! with central differences.

use nalgebra::Vector3;
use splatwild::render;
use splatwild::scene::{Frame, Gaussian3D, OrthoCamera, PARAM_COUNT};
use splatwild::{Image, Mask};

fn main() -> splatwild::Result<()> {
    let (w, h) = (32, 32);
    let cam = OrthoCamera::identity(10.0, w, h);
    let bg = [0.1, 0.1, 0.1];
    let gs = vec![
        Gaussian3D::new(Vector3::new(-0.3, 0.2, 1.0), Vector3::new(0.4, 0.25, 0.3), 0.7, [0.9, 0.3, 0.2]),
        Gaussian3D::new(Vector3::new(0.4, -0.1, 1.5), Vector3::new(0.3, 0.5, 0.3), 0.6, [0.2, 0.6, 0.9])
            .with_rotation([0.9, 0.1, -0.2, 0.3]),
    ];
    let target = Image::from_pixels(w, h, vec![[0.5, 0.5, 0.5]; w * h])?;
    let keep = Mask::from_bits(w, h, vec![true; w * h])?;
    let frame = Frame::new(0, target.clone(), cam.clone())?;

    let fwd = render::render_gaussians(&gs, &cam, bg, true)?;
    let (loss, grads) = render::backward_l1(&gs, &frame, &keep, &fwd)?;
    println!("loss {loss:.6}");

    let loss_at = |gs: &[Gaussian3D]| -> splatwild::Result<f64> {
        let img = render::render_gaussians(gs, &cam, bg, false)?.image;
        render::masked_l1(&img, &target, &keep)
    };
    let step = 1e-6;
    for gi in 0..gs.len() {
        for pi in 0..PARAM_COUNT {
            let mut shifted = [gs.clone(), gs.clone()];
            for (s, sign) in shifted.iter_mut().zip([1.0, -1.0]) {
                let mut p = s[gi].params();
                p[pi] += sign * step;
                s[gi].set_params(&p);
            }
            let numeric = (loss_at(&shifted[0])? - loss_at(&shifted[1])?) / (2.0 * step);
            println!("g{gi} p{pi:2}: analytic {:+.6e} numeric {numeric:+.6e}", grads[gi][pi]);
        }
    }
    Ok(())
}
