//! Orthographic splat projection, front-to-back alpha compositing and the
//! analytic backward pass of the masked L1 loss.
//!
//! Per pixel `p`, splat `i` contributes with
//! `ᾱᵢ = min(0.99, oᵢ · exp(-½ dᵀ Σ₂⁻¹ d))`, `d = p - centerᵢ`, and the color is
//! `Σ cᵢ ᾱᵢ Tᵢ + T_final · background` with `Tᵢ = Π_{j<i} (1 - ᾱⱼ)`.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::metrics;
use crate::scene::{normalized_quat, quat_to_matrix, Frame, Gaussian3D, OrthoCamera, PARAM_COUNT};

pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
pub const COV_EIGEN_FLOOR: f64 = 1e-8;

const TILE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub center2: Vector2<f64>,
    pub cov2: Matrix2<f64>,
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Splat2D {
    fn conic(&self) -> Matrix2<f64> {
        self.cov2.try_inverse().unwrap_or_else(Matrix2::zeros)
    }
}

fn floor_eigenvalues(cov: Matrix2<f64>) -> Matrix2<f64> {
    let eig = cov.symmetric_eigen();
    if eig.eigenvalues.iter().all(|&e| e >= COV_EIGEN_FLOOR) {
        return cov;
    }
    let vals = eig.eigenvalues.map(|e| e.max(COV_EIGEN_FLOOR));
    let v = eig.eigenvectors;
    v * Matrix2::from_diagonal(&vals) * v.transpose()
}

fn camera_rows(cam: &OrthoCamera) -> Matrix2x3<f64> {
    cam.rotation.fixed_view::<2, 3>(0, 0).into_owned()
}

/// Projects a Gaussian through an orthographic camera.
pub fn project(g: &Gaussian3D, cam: &OrthoCamera) -> Splat2D {
    let p = camera_rows(cam);
    let s2 = cam.pixels_per_unit * cam.pixels_per_unit;
    let cov2 = p * g.covariance() * p.transpose() * s2;
    let cov2 = floor_eigenvalues((cov2 + cov2.transpose()) * 0.5);
    Splat2D {
        center2: cam.to_pixel(&g.center),
        cov2,
        depth: cam.to_camera(&g.center).z,
        opacity: g.opacity(),
        color: g.color,
    }
}

/// One splat's share of a pixel, in compositing order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    /// Index into the (sorted) splat list.
    pub splat: u32,
    /// Effective alpha ᾱ after clamping.
    pub alpha: f64,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
    pub clamped: bool,
}

/// Per-pixel compositing record kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributions {
    offsets: Vec<usize>,
    entries: Vec<Contribution>,
    pub final_transmittance: Vec<f64>,
}

impl Contributions {
    pub fn pixel(&self, p: usize) -> &[Contribution] {
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn pixel_count(&self) -> usize {
        self.final_transmittance.len()
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    pub contributions: Option<Contributions>,
}

/// Conservative pixel bounds outside of which `ᾱ < ALPHA_MIN`.
fn pixel_bounds(s: &Splat2D, width: usize, height: usize) -> Option<[usize; 4]> {
    if s.opacity * 255.0 <= 1.0 {
        return None;
    }
    let r2 = 2.0 * (255.0 * s.opacity).ln();
    let ex = (r2 * s.cov2[(0, 0)]).sqrt() + 1.0;
    let ey = (r2 * s.cov2[(1, 1)]).sqrt() + 1.0;
    let x0 = (s.center2.x - ex - 0.5).floor();
    let x1 = (s.center2.x + ex - 0.5).ceil();
    let y0 = (s.center2.y - ey - 0.5).floor();
    let y1 = (s.center2.y + ey - 0.5).ceil();
    if !(x1 >= 0.0 && y1 >= 0.0 && x0 < width as f64 && y0 < height as f64) {
        return None;
    }
    Some([
        x0.max(0.0) as usize,
        (x1 as usize).min(width - 1),
        y0.max(0.0) as usize,
        (y1 as usize).min(height - 1),
    ])
}

/// Composites depth-sorted splats (front first) over `background`.
pub fn render(
    splats: &[Splat2D],
    width: usize,
    height: usize,
    background: [f64; 3],
    record: bool,
) -> Result<RenderOutput> {
    for (i, w) in splats.windows(2).enumerate() {
        if w[1].depth < w[0].depth {
            return Err(Error::Ordering {
                index: i + 1,
                prev: w[0].depth,
                next: w[1].depth,
            });
        }
    }
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    let conics: Vec<Matrix2<f64>> = splats.iter().map(Splat2D::conic).collect();
    for (i, s) in splats.iter().enumerate() {
        if let Some([x0, x1, y0, y1]) = pixel_bounds(s, width, height) {
            for ty in y0 / TILE..=y1 / TILE {
                for tx in x0 / TILE..=x1 / TILE {
                    tiles[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
    }

    let rows: Vec<(Vec<[f64; 3]>, Vec<Vec<Contribution>>, Vec<f64>)> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut colors = Vec::with_capacity(width);
            let mut records = Vec::with_capacity(if record { width } else { 0 });
            let mut finals = Vec::with_capacity(width);
            let py = y as f64 + 0.5;
            for x in 0..width {
                let px = x as f64 + 0.5;
                let mut t = 1.0;
                let mut c = [0.0; 3];
                let mut rec = Vec::new();
                for &si in &tiles[(y / TILE) * tiles_x + x / TILE] {
                    let s = &splats[si as usize];
                    let d = Vector2::new(px - s.center2.x, py - s.center2.y);
                    let q = d.dot(&(conics[si as usize] * d));
                    let raw = s.opacity * (-0.5 * q).exp();
                    let clamped = raw > ALPHA_MAX;
                    let a = raw.min(ALPHA_MAX);
                    if a < ALPHA_MIN {
                        continue;
                    }
                    for k in 0..3 {
                        c[k] += s.color[k] * a * t;
                    }
                    if record {
                        rec.push(Contribution {
                            splat: si,
                            alpha: a,
                            transmittance: t,
                            clamped,
                        });
                    }
                    t *= 1.0 - a;
                    if t < TRANSMITTANCE_MIN {
                        break;
                    }
                }
                for k in 0..3 {
                    c[k] = (c[k] + t * background[k]).clamp(0.0, 1.0);
                }
                colors.push(c);
                finals.push(t);
                if record {
                    records.push(rec);
                }
            }
            (colors, records, finals)
        })
        .collect();

    let mut pixels = Vec::with_capacity(width * height);
    let mut offsets = Vec::with_capacity(width * height + 1);
    let mut entries = Vec::new();
    let mut final_transmittance = Vec::with_capacity(width * height);
    offsets.push(0);
    for (colors, records, finals) in rows {
        pixels.extend(colors);
        final_transmittance.extend(finals);
        for r in records {
            entries.extend(r);
            offsets.push(entries.len());
        }
    }
    let contributions = record.then_some(Contributions {
        offsets,
        entries,
        final_transmittance,
    });
    Ok(RenderOutput {
        image: Image::from_pixels(width, height, pixels)?,
        contributions,
    })
}

/// A full forward pass of a Gaussian scene through one camera.
#[derive(Debug, Clone)]
pub struct SceneRender {
    pub image: Image,
    pub contributions: Option<Contributions>,
    /// `order[k]` is the scene index of the k-th splat in depth order.
    pub order: Vec<usize>,
    pub splats: Vec<Splat2D>,
    pub background: [f64; 3],
}

/// Projects, depth-sorts (stable, front first) and renders a scene.
pub fn render_gaussians(
    gaussians: &[Gaussian3D],
    cam: &OrthoCamera,
    background: [f64; 3],
    record: bool,
) -> Result<SceneRender> {
    let projected: Vec<Splat2D> = gaussians.iter().map(|g| project(g, cam)).collect();
    let mut order: Vec<usize> = (0..gaussians.len()).collect();
    order.sort_by(|&a, &b| projected[a].depth.total_cmp(&projected[b].depth));
    let splats: Vec<Splat2D> = order.iter().map(|&i| projected[i].clone()).collect();
    let out = render(&splats, cam.width, cam.height, background, record)?;
    Ok(SceneRender {
        image: out.image,
        contributions: out.contributions,
        order,
        splats,
        background,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub dssim: f64,
    pub total: f64,
    pub lambda_dssim: f64,
}

/// Mean absolute channel error over the pixels the mask keeps.
pub fn masked_l1(render: &Image, gt: &Image, mask: &Mask) -> Result<f64> {
    check_mask(render, gt, mask)?;
    let kept = mask.count();
    if kept == 0 {
        return Ok(0.0);
    }
    let sum: f64 = render
        .pixels()
        .iter()
        .zip(gt.pixels())
        .zip(mask.bits())
        .filter(|(_, &k)| k)
        .map(|((a, b), _)| ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0)
        .sum();
    Ok(sum / kept as f64)
}

fn check_mask(render: &Image, gt: &Image, mask: &Mask) -> Result<()> {
    render.ensure_same_shape(gt)?;
    if mask.width() != render.width() || mask.height() != render.height() {
        return Err(Error::Shape(format!(
            "mask {}x{} vs image {}x{}",
            mask.width(),
            mask.height(),
            render.width(),
            render.height()
        )));
    }
    Ok(())
}

/// `(1-λ)·M·L1 + λ·M·D-SSIM`, both terms averaged over kept pixels.
///
/// The D-SSIM term is only evaluated when `lambda_dssim > 0`, so images
/// smaller than the SSIM window are accepted for a pure L1 loss.
pub fn masked_loss(render: &Image, gt: &Image, mask: &Mask, lambda_dssim: f64) -> Result<LossBreakdown> {
    if !(0.0..=1.0).contains(&lambda_dssim) {
        return Err(Error::Config(format!("lambda_dssim {lambda_dssim} outside [0, 1]")));
    }
    let l1 = masked_l1(render, gt, mask)?;
    let kept = mask.count();
    let dssim = if lambda_dssim > 0.0 && kept > 0 {
        let map = metrics::ssim_map(render, gt)?;
        map.iter()
            .zip(mask.bits())
            .filter(|(_, &k)| k)
            .map(|(s, _)| ((1.0 - s) / 2.0).clamp(0.0, 1.0))
            .sum::<f64>()
            / kept as f64
    } else {
        0.0
    };
    Ok(LossBreakdown {
        l1,
        dssim,
        total: (1.0 - lambda_dssim) * l1 + lambda_dssim * dssim,
        lambda_dssim,
    })
}

/// Gradient of a single Gaussian, laid out like [`Gaussian3D::params`].
pub type ParamGrad = [f64; PARAM_COUNT];

#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    center2: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        self.center2[0] += o.center2[0];
        self.center2[1] += o.center2[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

const ROW_CHUNK: usize = 8;

/// Gradients of the masked L1 loss with respect to every Gaussian parameter.
///
/// `forward` must be the recorded render of exactly these Gaussians through
/// `frame.camera`. Returns the loss together with per-Gaussian gradients
/// indexed like `scene`.
pub fn backward_l1(
    scene: &[Gaussian3D],
    frame: &Frame,
    mask: &Mask,
    forward: &SceneRender,
) -> Result<(f64, Vec<ParamGrad>)> {
    let contrib = forward
        .contributions
        .as_ref()
        .ok_or(Error::MissingContributions)?;
    let gt = &frame.image;
    let render = &forward.image;
    check_mask(render, gt, mask)?;
    if forward.order.len() != scene.len() || contrib.pixel_count() != gt.len() {
        return Err(Error::Shape("forward record does not match scene or frame".into()));
    }
    let kept = mask.count();
    let loss = masked_l1(render, gt, mask)?;
    let n = forward.splats.len();
    if kept == 0 {
        return Ok((0.0, vec![[0.0; PARAM_COUNT]; scene.len()]));
    }
    let scale = 1.0 / (3.0 * kept as f64);
    let width = gt.width();
    let conics: Vec<Matrix2<f64>> = forward.splats.iter().map(Splat2D::conic).collect();
    let bg = forward.background;

    let partials: Vec<Vec<ScreenGrad>> = (0..gt.height())
        .collect::<Vec<_>>()
        .par_chunks(ROW_CHUNK)
        .map(|rows| {
            let mut acc = vec![ScreenGrad::default(); n];
            for &y in rows {
                for x in 0..width {
                    let p = y * width + x;
                    if !mask.bits()[p] {
                        continue;
                    }
                    let r = render.pixels()[p];
                    let g = gt.pixels()[p];
                    let mut dl_dc = [0.0; 3];
                    for k in 0..3 {
                        // subgradient 0 at equality
                        dl_dc[k] = scale * sign(r[k] - g[k]);
                    }
                    if dl_dc == [0.0; 3] {
                        continue;
                    }
                    let entries = contrib.pixel(p);
                    let t_final = contrib.final_transmittance[p];
                    let mut after = [t_final * bg[0], t_final * bg[1], t_final * bg[2]];
                    let pix = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    for e in entries.iter().rev() {
                        let s = &forward.splats[e.splat as usize];
                        let a = e.alpha;
                        let t = e.transmittance;
                        let slot = &mut acc[e.splat as usize];
                        let mut dl_da = 0.0;
                        for k in 0..3 {
                            slot.color[k] += dl_dc[k] * a * t;
                            dl_da += dl_dc[k] * (t * s.color[k] - after[k] / (1.0 - a));
                            after[k] += s.color[k] * a * t;
                        }
                        if e.clamped {
                            continue;
                        }
                        let gauss = a / s.opacity;
                        slot.opacity += dl_da * gauss;
                        // ᾱ = o·exp(-q/2)
                        let dl_dq = -0.5 * a * dl_da;
                        let d = pix - s.center2;
                        let ad = conics[e.splat as usize] * d;
                        slot.center2[0] += dl_dq * -2.0 * ad.x;
                        slot.center2[1] += dl_dq * -2.0 * ad.y;
                        slot.conic[0] += dl_dq * d.x * d.x;
                        slot.conic[1] += dl_dq * d.x * d.y;
                        slot.conic[2] += dl_dq * d.y * d.y;
                    }
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![ScreenGrad::default(); n];
    for part in &partials {
        for (dst, src) in screen.iter_mut().zip(part) {
            dst.add(src);
        }
    }

    let cam = &frame.camera;
    let prow = camera_rows(cam);
    let ppu = cam.pixels_per_unit;
    let mut grads = vec![[0.0; PARAM_COUNT]; scene.len()];
    for (k, sg) in screen.iter().enumerate() {
        let gi = forward.order[k];
        grads[gi] = chain_to_params(&scene[gi], sg, &conics[k], &prow, ppu);
    }
    Ok((loss, grads))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn chain_to_params(
    g: &Gaussian3D,
    sg: &ScreenGrad,
    conic: &Matrix2<f64>,
    prow: &Matrix2x3<f64>,
    ppu: f64,
) -> ParamGrad {
    let mut out = [0.0; PARAM_COUNT];

    // center2 = ppu · P μ + const
    let dmu = prow.transpose() * Vector2::new(sg.center2[0], sg.center2[1]) * ppu;
    out[0] = dmu.x;
    out[1] = dmu.y;
    out[2] = dmu.z;

    // conic = cov2⁻¹  ⇒  dL/dcov2 = -A Gₐ A
    let g_conic = Matrix2::new(sg.conic[0], sg.conic[1], sg.conic[1], sg.conic[2]);
    let g_cov2 = -(conic * g_conic * conic);
    // cov2 = ppu² P Σ Pᵀ
    let g_sigma: Matrix3<f64> = prow.transpose() * g_cov2 * prow * (ppu * ppu);
    // Σ = M Mᵀ, M = R S
    let q = normalized_quat(g.rotation);
    let r = quat_to_matrix(q);
    let s = g.scale();
    let m = r * Matrix3::from_diagonal(&s);
    let g_m = (g_sigma + g_sigma.transpose()) * m;
    let mut g_r = Matrix3::zeros();
    for k in 0..3 {
        let mut ds = 0.0;
        for i in 0..3 {
            ds += g_m[(i, k)] * r[(i, k)];
            g_r[(i, k)] = g_m[(i, k)] * s[k];
        }
        out[3 + k] = ds * s[k];
    }
    let gq = quat_grad(q, &g_r);
    // through q̂ = q / |q|
    let raw_norm = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = (0..4).map(|i| gq[i] * q[i]).sum();
    for i in 0..4 {
        out[6 + i] = (gq[i] - q[i] * dot) / raw_norm;
    }

    let o = g.opacity();
    out[10] = sg.opacity * o * (1.0 - o);
    out[11..14].copy_from_slice(&sg.color);
    out
}

/// dL/dq̂ from dL/dR for `R = quat_to_matrix(q̂)`.
fn quat_grad(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [dw, dx, dy, dz]
}

/// Convenience: world-space center of a pixel ray for an orthographic camera
/// at the given depth.
pub fn unproject(cam: &OrthoCamera, pixel: Vector2<f64>, depth: f64) -> Vector3<f64> {
    let x = (pixel.x - cam.width as f64 * 0.5) / cam.pixels_per_unit;
    let y = (pixel.y - cam.height as f64 * 0.5) / cam.pixels_per_unit;
    cam.rotation.transpose() * (Vector3::new(x, y, depth) - cam.translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn splat(cx: f64, cy: f64, depth: f64, opacity: f64, color: [f64; 3]) -> Splat2D {
        Splat2D {
            center2: Vector2::new(cx, cy),
            cov2: Matrix2::identity() * 4.0,
            depth,
            opacity,
            color,
        }
    }

    #[test]
    fn projection_identity_camera() {
        let cam = OrthoCamera::identity(1.0, 8, 6);
        let g = Gaussian3D::new(Vector3::zeros(), Vector3::repeat(1.0), 0.5, [0.2; 3]);
        let s = project(&g, &cam);
        assert_abs_diff_eq!(s.center2, Vector2::new(4.0, 3.0), epsilon = 1e-15);
        assert_abs_diff_eq!(s.cov2, Matrix2::identity(), epsilon = 1e-12);
        let cam2 = OrthoCamera::identity(2.0, 8, 6);
        assert_abs_diff_eq!(project(&g, &cam2).cov2, Matrix2::identity() * 4.0, epsilon = 1e-12);
    }

    #[test]
    fn depth_only_changes_depth() {
        let cam = OrthoCamera::identity(3.0, 8, 8);
        let mut g = Gaussian3D::new(Vector3::new(0.3, -0.2, 1.0), Vector3::new(0.5, 0.2, 0.3), 0.5, [0.2; 3])
            .with_rotation([0.9, 0.1, 0.3, -0.2]);
        let a = project(&g, &cam);
        g.center.z = -5.0;
        let b = project(&g, &cam);
        assert_eq!(a.center2, b.center2);
        assert_eq!(a.cov2, b.cov2);
        assert_ne!(a.depth, b.depth);
    }

    #[test]
    fn empty_scene_is_background() {
        let out = render(&[], 5, 4, [0.1, 0.2, 0.3], false).unwrap();
        assert!(out.image.pixels().iter().all(|p| *p == [0.1, 0.2, 0.3]));
    }

    #[test]
    fn opaque_splat_is_clamped() {
        let s = splat(2.5, 2.5, 0.0, 1.0 - 1e-12, [1.0, 0.0, 0.5]);
        let out = render(&[s], 5, 5, [0.0, 1.0, 0.0], false).unwrap();
        let p = out.image.get(2, 2);
        assert_abs_diff_eq!(p[0], 0.99, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 0.495, epsilon = 1e-12);
    }

    #[test]
    fn two_half_splats() {
        let a = splat(2.5, 2.5, 0.0, 0.5, [1.0, 0.0, 0.0]);
        let b = splat(2.5, 2.5, 1.0, 0.5, [0.0, 1.0, 0.0]);
        let out = render(&[a, b], 5, 5, [0.0, 0.0, 1.0], true).unwrap();
        let p = out.image.get(2, 2);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn unsorted_input_rejected() {
        let a = splat(2.5, 2.5, 1.0, 0.5, [1.0; 3]);
        let b = splat(2.5, 2.5, 0.0, 0.5, [1.0; 3]);
        assert!(matches!(render(&[a, b], 5, 5, [0.0; 3], false), Err(Error::Ordering { .. })));
    }

    #[test]
    fn transmittance_non_increasing() {
        let splats: Vec<Splat2D> = (0..6)
            .map(|i| splat(3.0 + i as f64 * 0.3, 3.0, i as f64, 0.6, [0.5; 3]))
            .collect();
        let out = render(&splats, 8, 8, [0.0; 3], true).unwrap();
        let c = out.contributions.unwrap();
        for p in 0..64 {
            let mut last = 1.0;
            for e in c.pixel(p) {
                assert!(e.transmittance <= last);
                last = e.transmittance;
            }
            assert!(c.final_transmittance[p] <= last);
        }
    }

    #[test]
    fn bounds_do_not_drop_visible_pixels() {
        // brute force over all pixels vs tile culling
        let s = Splat2D {
            center2: Vector2::new(10.3, 7.9),
            cov2: Matrix2::new(9.0, 4.0, 4.0, 5.0),
            depth: 0.0,
            opacity: 0.8,
            color: [1.0, 1.0, 1.0],
        };
        let out = render(std::slice::from_ref(&s), 24, 20, [0.0; 3], false).unwrap();
        let inv = s.cov2.try_inverse().unwrap();
        for y in 0..20 {
            for x in 0..24 {
                let d = Vector2::new(x as f64 + 0.5, y as f64 + 0.5) - s.center2;
                let a = (0.8 * (-0.5 * d.dot(&(inv * d))).exp()).min(ALPHA_MAX);
                let expect = if a < ALPHA_MIN { 0.0 } else { a };
                assert_abs_diff_eq!(out.image.get(x, y)[0], expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn masked_loss_cases() {
        let a = Image::from_pixels(2, 1, vec![[0.0; 3], [1.0; 3]]).unwrap();
        let b = Image::from_pixels(2, 1, vec![[0.5; 3], [1.0; 3]]).unwrap();
        let full = Mask::new(2, 1, true);
        let l = masked_loss(&a, &b, &full, 0.0).unwrap();
        assert_abs_diff_eq!(l.l1, 0.25, epsilon = 1e-15);
        let none = Mask::new(2, 1, false);
        assert_eq!(masked_loss(&a, &b, &none, 0.0).unwrap().total, 0.0);
        let same = masked_loss(&a, &a, &full, 0.0).unwrap();
        assert_eq!(same.l1, 0.0);
        let wrong = Mask::new(3, 1, true);
        assert!(masked_loss(&a, &b, &wrong, 0.0).is_err());
    }

    #[test]
    fn masked_loss_total_is_convex_mix() {
        let mut a = Image::new(16, 16, [0.3; 3]);
        let b = Image::new(16, 16, [0.6; 3]);
        a.set(3, 4, [0.9, 0.1, 0.2]);
        let mut m = Mask::new(16, 16, true);
        m.set(0, 0, false);
        let l = masked_loss(&a, &b, &m, 0.2).unwrap();
        assert!((l.total - (0.8 * l.l1 + 0.2 * l.dssim)).abs() <= 1e-12);
        assert!(l.dssim > 0.0);
    }

    #[test]
    fn backward_needs_record() {
        let cam = OrthoCamera::identity(4.0, 8, 8);
        let g = vec![Gaussian3D::new(Vector3::zeros(), Vector3::repeat(0.3), 0.5, [0.2; 3])];
        let fwd = render_gaussians(&g, &cam, [0.0; 3], false).unwrap();
        let frame = Frame::new(0, Image::new(8, 8, [0.0; 3]), cam).unwrap();
        let err = backward_l1(&g, &frame, &Mask::new(8, 8, true), &fwd);
        assert!(matches!(err, Err(Error::MissingContributions)));
    }

    #[test]
    fn exact_fit_has_zero_gradient() {
        let cam = OrthoCamera::identity(4.0, 12, 12);
        let g = vec![
            Gaussian3D::new(Vector3::new(0.1, 0.0, 0.0), Vector3::repeat(0.3), 0.6, [0.9, 0.2, 0.1]),
            Gaussian3D::new(Vector3::new(-0.2, 0.3, 1.0), Vector3::new(0.4, 0.2, 0.2), 0.7, [0.1, 0.8, 0.3]),
        ];
        let fwd = render_gaussians(&g, &cam, [0.1; 3], true).unwrap();
        let frame = Frame::new(0, fwd.image.clone(), cam).unwrap();
        let (loss, grads) = backward_l1(&g, &frame, &Mask::new(12, 12, true), &fwd).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn unproject_inverts_to_pixel() {
        let cam = OrthoCamera::identity(5.0, 20, 10);
        let p = Vector3::new(0.4, -0.3, 2.0);
        let px = cam.to_pixel(&p);
        assert_abs_diff_eq!(unproject(&cam, px, 2.0), p, epsilon = 1e-12);
    }
}
